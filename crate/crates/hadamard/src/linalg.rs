//! Dense complex linear algebra shared by every module.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, ShapeBuilder};
use ndarray_linalg::{Eigh, Inverse, UPLO};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;
pub type RMat = Array2<f64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn eye(n: usize) -> CMat {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

pub fn zeros(n: usize) -> CMat {
    Array2::zeros((n, n))
}

pub fn diag<I2: IntoIterator<Item = C64>>(vals: I2) -> CMat {
    Array2::from_diag(&Array1::from_iter(vals))
}

pub fn diag_real<I2: IntoIterator<Item = f64>>(vals: I2) -> CMat {
    diag(vals.into_iter().map(cr))
}

/// Flat conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

pub fn herm_part(a: &CMat) -> CMat {
    (a + &dagger(a)) * cr(0.5)
}

pub fn fro(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn fro_view(a: ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// ‖a − b‖_F / max(‖b‖_F, tiny).
pub fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    fro(&(a - b)) / fro(b).max(1e-300)
}

pub fn inv(a: &CMat) -> Result<CMat> {
    Ok(a.inv()?)
}

/// Eigen-decomposition of the Hermitian part of `a`, eigenvalues ascending.
///
/// The input is copied to column-major order first: for row-major complex input
/// `Eigh` returns eigenvectors of the transpose.
pub fn eigh(a: &CMat) -> Result<(Array1<f64>, CMat)> {
    let h = herm_part(a);
    let mut f = CMat::zeros(h.raw_dim().f());
    f.assign(&h);
    Ok(f.eigh(UPLO::Upper)?)
}

pub fn min_eig_herm(a: &CMat) -> Result<f64> {
    let (vals, _) = eigh(a)?;
    Ok(vals[0])
}

/// Largest singular value.
pub fn spectral_norm(a: &CMat) -> Result<f64> {
    let g = dagger(a).dot(a);
    let (vals, _) = eigh(&g)?;
    Ok(vals[vals.len() - 1].max(0.0).sqrt())
}

/// V diag(f(λ)) V†.
pub fn from_spectrum(vals: &Array1<f64>, vecs: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
        let fj = f(vals[j]);
        col.mapv_inplace(|z| z * fj);
    }
    scaled.dot(&dagger(vecs))
}

/// Positive weight operator W with its inverse and square roots.
#[derive(Clone, Debug)]
pub struct Weight {
    pub w: CMat,
    pub inv: CMat,
    pub sqrt: CMat,
    pub inv_sqrt: CMat,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl Weight {
    pub const MAX_CONDITION: f64 = 1e12;

    pub fn new(w: &CMat) -> Result<Self> {
        let (vals, vecs) = eigh(w)?;
        let lo = vals[0];
        let hi = vals[vals.len() - 1];
        if lo <= 0.0 || hi / lo > Self::MAX_CONDITION {
            let condition = if lo <= 0.0 { f64::INFINITY } else { hi / lo };
            return Err(Error::IllConditionedWeight { condition });
        }
        Ok(Weight {
            w: herm_part(w),
            inv: from_spectrum(&vals, &vecs, |x| cr(1.0 / x)),
            sqrt: from_spectrum(&vals, &vecs, |x| cr(x.sqrt())),
            inv_sqrt: from_spectrum(&vals, &vecs, |x| cr(1.0 / x.sqrt())),
            eig_min: lo,
            eig_max: hi,
        })
    }

    pub fn identity(n: usize) -> Self {
        Weight {
            w: eye(n),
            inv: eye(n),
            sqrt: eye(n),
            inv_sqrt: eye(n),
            eig_min: 1.0,
            eig_max: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// W^{-1} A† W.
    pub fn adjoint(&self, a: &CMat) -> CMat {
        self.inv.dot(&dagger(a)).dot(&self.w)
    }

    /// W^{1/2} A W^{-1/2}, the flat representative of a weighted operator.
    pub fn to_flat(&self, a: &CMat) -> CMat {
        self.sqrt.dot(a).dot(&self.inv_sqrt)
    }

    pub fn from_flat(&self, a: &CMat) -> CMat {
        self.inv_sqrt.dot(a).dot(&self.sqrt)
    }

    /// Relative deviation of `a` from weighted self-adjointness.
    pub fn self_adjoint_residual(&self, a: &CMat) -> f64 {
        let flat = self.to_flat(a);
        fro(&(&flat - &dagger(&flat))) / fro(&flat).max(1e-300)
    }

    /// Spectral decomposition of a weighted self-adjoint operator: eigenvalues and
    /// orthonormal eigenvectors of its flat representative.
    pub fn eigh(&self, a: &CMat) -> Result<(Array1<f64>, CMat)> {
        eigh(&self.to_flat(a))
    }

    /// f(a) for a weighted self-adjoint `a`.
    pub fn func(&self, a: &CMat, f: impl Fn(f64) -> C64) -> Result<CMat> {
        let (vals, vecs) = self.eigh(a)?;
        Ok(self.from_flat(&from_spectrum(&vals, &vecs, f)))
    }

    /// W ⊕ W.
    pub fn doubled(&self) -> Weight {
        Weight {
            w: block_diag(&self.w, &self.w),
            inv: block_diag(&self.inv, &self.inv),
            sqrt: block_diag(&self.sqrt, &self.sqrt),
            inv_sqrt: block_diag(&self.inv_sqrt, &self.inv_sqrt),
            eig_min: self.eig_min,
            eig_max: self.eig_max,
        }
    }
}

/// Block (i, j) of a 2×2 block matrix with square blocks.
pub fn block(m: &CMat, i: usize, j: usize) -> CMat {
    let n = m.nrows() / 2;
    m.slice(s![i * n..(i + 1) * n, j * n..(j + 1) * n]).to_owned()
}

pub fn assemble(b00: &CMat, b01: &CMat, b10: &CMat, b11: &CMat) -> CMat {
    let n = b00.nrows();
    let mut m = Array2::zeros((2 * n, 2 * n));
    m.slice_mut(s![..n, ..n]).assign(b00);
    m.slice_mut(s![..n, n..]).assign(b01);
    m.slice_mut(s![n.., ..n]).assign(b10);
    m.slice_mut(s![n.., n..]).assign(b11);
    m
}

pub fn block_diag(a: &CMat, b: &CMat) -> CMat {
    let z = zeros(a.nrows());
    assemble(a, &z, &z, b)
}

/// q = [[0, I], [I, 0]].
pub fn q_form(n: usize) -> CMat {
    let z = zeros(n);
    assemble(&z, &eye(n), &eye(n), &z)
}

/// q^ad = diag(I, −I).
pub fn q_ad(n: usize) -> CMat {
    block_diag(&eye(n), &(-eye(n)))
}

/// π^+ = diag(I, 0) for `plus`, π^- = diag(0, I) otherwise.
pub fn pi(n: usize, plus: bool) -> CMat {
    if plus {
        block_diag(&eye(n), &zeros(n))
    } else {
        block_diag(&zeros(n), &eye(n))
    }
}

/// Complex matrix from real and imaginary parts.
pub fn complexify(re: &RMat, im: &RMat) -> CMat {
    let mut out = Array2::zeros(re.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(re)
        .and(im)
        .for_each(|o, &r, &i| *o = C64::new(r, i));
    out
}

pub fn real_part(a: &CMat) -> RMat {
    a.mapv(|z| z.re)
}

pub fn imag_part(a: &CMat) -> RMat {
    a.mapv(|z| z.im)
}
