//! Fourier discretization of the circle.

mod fit;
mod grid;

pub use fit::{default_window, entry_decay_fit, shell_envelope, fit_time_decay, fit_time_decay_or_exact, DecayFit, FitModel};
pub use grid::{cubic_weights, fd_derivative, fd_weights, OpFamily, TimeGrid, TRIM};

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::linalg::{cr, dagger, diag, diag_real, CMat, RMat, Weight, C64};

/// Dense operator in the Fourier basis, modes ordered −K..=K.
pub type OpMatrix = CMat;

#[derive(Clone, Debug, PartialEq)]
pub struct ModeBasis {
    pub k: usize,
    pub l: f64,
    pub n: usize,
    pub xs: Vec<f64>,
}

pub fn make_basis(k: usize, l: f64) -> Result<ModeBasis> {
    if k < 1 {
        return Err(Error::InvalidConfig(format!("mode cutoff K = {k} must be at least 1")));
    }
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::InvalidConfig(format!("circumference L = {l} must be positive")));
    }
    let n = 2 * k + 1;
    let xs = (0..n).map(|j| l * j as f64 / n as f64).collect();
    Ok(ModeBasis { k, l, n, xs })
}

impl ModeBasis {
    pub fn new(k: usize, l: f64) -> Result<Self> {
        make_basis(k, l)
    }

    /// Mode numbers in matrix order.
    pub fn modes(&self) -> impl Iterator<Item = i64> + '_ {
        let k = self.k as i64;
        -k..=k
    }

    pub fn mode(&self, idx: usize) -> i64 {
        idx as i64 - self.k as i64
    }

    pub fn index(&self, mode: i64) -> usize {
        (mode + self.k as i64) as usize
    }

    pub fn wavenumber(&self, mode: i64) -> f64 {
        2.0 * PI * mode as f64 / self.l
    }

    /// ⟨k⟩ = (1 + (2πk/L)²)^{1/2} per mode.
    pub fn japanese(&self) -> Vec<f64> {
        self.modes()
            .map(|m| (1.0 + self.wavenumber(m).powi(2)).sqrt())
            .collect()
    }

    /// Fourier coefficients û_m = (1/N) Σ_j u(x_j) e^{−2πi m x_j/L}, m = −K..=K.
    pub fn to_modes(&self, samples: &[C64]) -> Result<Array1<C64>> {
        if samples.len() != self.n {
            return Err(Error::InvalidData(format!(
                "expected {} grid samples, got {}",
                self.n,
                samples.len()
            )));
        }
        let coeffs = dft_coefficients(samples, self.k);
        Ok(Array1::from(coeffs))
    }

    /// Grid values u(x_j) = Σ_m û_m e^{2πi m x_j/L}.
    pub fn to_grid(&self, coeffs: &[C64]) -> Result<Array1<C64>> {
        if coeffs.len() != self.n {
            return Err(Error::InvalidData(format!(
                "expected {} coefficients, got {}",
                self.n,
                coeffs.len()
            )));
        }
        let n = self.n;
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for (idx, c) in coeffs.iter().enumerate() {
            let m = self.mode(idx);
            buf[m.rem_euclid(n as i64) as usize] = *c;
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
        Ok(Array1::from(buf))
    }

    /// Evaluate a trigonometric polynomial with the given coefficients at an arbitrary point.
    pub fn eval_at(&self, coeffs: &[C64], x: f64) -> C64 {
        let base = C64::from_polar(1.0, 2.0 * PI * x / self.l);
        let mut acc = C64::new(0.0, 0.0);
        let mut ph = C64::from_polar(1.0, -2.0 * PI * x * self.k as f64 / self.l);
        for c in coeffs {
            acc += c * ph;
            ph *= base;
        }
        acc
    }

    /// Multiplication by a function given by its samples on `xs`, interpreted as band-limited.
    pub fn mult_op(&self, samples: &[C64]) -> Result<OpMatrix> {
        let coeffs = self.to_modes(samples)?;
        let k = self.k as i64;
        Ok(self.toeplitz(|m| if m.abs() <= k { coeffs[(m + k) as usize] } else { cr(0.0) }))
    }

    pub fn mult_op_real(&self, samples: &[f64]) -> Result<OpMatrix> {
        let c: Vec<C64> = samples.iter().map(|&v| cr(v)).collect();
        self.mult_op(&c)
    }

    /// Multiplication by a function evaluated on a grid fine enough to resolve
    /// all coefficients |m| ≤ 2K entering the matrix.
    pub fn mult_op_fn(&self, f: impl Fn(f64) -> f64) -> OpMatrix {
        let coeffs = self.fine_coefficients(f);
        let k2 = 2 * self.k as i64;
        self.toeplitz(|m| coeffs[(m + k2) as usize])
    }

    /// Coefficients m = −2K..=2K of f from a fine grid of at least 4N points.
    pub fn fine_coefficients(&self, f: impl Fn(f64) -> f64) -> Vec<C64> {
        let p = fine_size(self.n);
        let samples: Vec<C64> = (0..p).map(|j| cr(f(self.l * j as f64 / p as f64))).collect();
        dft_coefficients(&samples, 2 * self.k)
    }

    /// Samples of f on the fine grid used by `mult_op_fn`.
    pub fn fine_grid(&self) -> Vec<f64> {
        let p = fine_size(self.n);
        (0..p).map(|j| self.l * j as f64 / p as f64).collect()
    }

    /// Multiplication operator from samples on `fine_grid()`.
    pub fn mult_op_fine(&self, samples: &[f64]) -> Result<OpMatrix> {
        let p = fine_size(self.n);
        if samples.len() != p {
            return Err(Error::InvalidData(format!(
                "expected {p} fine-grid samples, got {}",
                samples.len()
            )));
        }
        let c: Vec<C64> = samples.iter().map(|&v| cr(v)).collect();
        let coeffs = dft_coefficients(&c, 2 * self.k);
        let k2 = 2 * self.k as i64;
        Ok(self.toeplitz(|m| coeffs[(m + k2) as usize]))
    }

    /// Fourier coefficients |m| ≤ K of complex samples on `fine_grid()`.
    pub fn fine_to_modes(&self, samples: &[C64]) -> Vec<C64> {
        dft_coefficients(samples, self.k)
    }

    /// Nonzero entries (row, value) of each column of `real_basis()`.
    fn real_columns(&self) -> Vec<Vec<(usize, C64)>> {
        let k = self.k;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut cols = vec![vec![(k, cr(1.0))]];
        for m in 1..=k {
            cols.push(vec![(k + m, cr(h)), (k - m, cr(h))]);
            cols.push(vec![(k + m, C64::new(0.0, -h)), (k - m, C64::new(0.0, h))]);
        }
        cols
    }

    /// Re(Q† A Q) in O(N²).
    pub fn to_real_basis(&self, a: &CMat) -> RMat {
        let cols = self.real_columns();
        let n = self.n;
        Array2::from_shape_fn((n, n), |(al, be)| {
            let mut acc = C64::new(0.0, 0.0);
            for &(i, qi) in &cols[al] {
                for &(j, qj) in &cols[be] {
                    acc += qi.conj() * a[[i, j]] * qj;
                }
            }
            acc.re
        })
    }

    /// Q R Q† in O(N²).
    pub fn from_real_basis(&self, r: &RMat) -> CMat {
        let cols = self.real_columns();
        let n = self.n;
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
        for (al, col) in cols.iter().enumerate() {
            for &(i, q) in col {
                rows[i].push((al, q));
            }
        }
        Array2::from_shape_fn((n, n), |(i, j)| {
            let mut acc = C64::new(0.0, 0.0);
            for &(al, qi) in &rows[i] {
                for &(be, qj) in &rows[j] {
                    acc += qi * r[[al, be]] * qj.conj();
                }
            }
            acc
        })
    }

    /// Toeplitz matrix M_jk = g(j − k).
    pub fn toeplitz(&self, g: impl Fn(i64) -> C64) -> OpMatrix {
        let n = self.n;
        let k2 = 2 * self.k as i64;
        let vals: Vec<C64> = (-k2..=k2).map(&g).collect();
        Array2::from_shape_fn((n, n), |(j, l)| vals[(j as i64 - l as i64 + k2) as usize])
    }

    /// ∂_x: diagonal with entries 2πik/L.
    pub fn derivative_op(&self) -> OpMatrix {
        diag(self.modes().map(|m| C64::new(0.0, self.wavenumber(m))))
    }

    /// diag(⟨k⟩^m).
    pub fn sobolev_weight(&self, m: f64) -> OpMatrix {
        diag_real(self.japanese().into_iter().map(|j| j.powf(m)))
    }

    /// Real orthonormal basis change Q with columns 1, √2 cos(kx), √2 sin(kx) (k = 1..K)
    /// written in Fourier coordinates; Q is unitary and Q† A Q is real whenever A has
    /// a real kernel.
    pub fn real_basis(&self) -> CMat {
        let n = self.n;
        let k = self.k;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut q = Array2::zeros((n, n));
        q[[k, 0]] = cr(1.0);
        for m in 1..=k {
            let (p, neg) = (k + m, k - m);
            q[[p, 2 * m - 1]] = cr(h);
            q[[neg, 2 * m - 1]] = cr(h);
            q[[p, 2 * m]] = C64::new(0.0, -h);
            q[[neg, 2 * m]] = C64::new(0.0, h);
        }
        q
    }
}

/// Smallest convenient length ≥ 4n.
fn fine_size(n: usize) -> usize {
    let mut p = 1;
    while p < 4 * n {
        p *= 2;
    }
    p
}

/// Coefficients m = −kmax..=kmax of samples on an equispaced grid of length p > 2 kmax.
fn dft_coefficients(samples: &[C64], kmax: usize) -> Vec<C64> {
    let p = samples.len();
    let mut buf = samples.to_vec();
    FftPlanner::new().plan_fft_forward(p).process(&mut buf);
    let scale = 1.0 / p as f64;
    let km = kmax as i64;
    (-km..=km)
        .map(|m| buf[m.rem_euclid(p as i64) as usize] * scale)
        .collect()
}

/// W^{-1} A† W for a positive weight W.
pub fn weighted_adjoint(a: &OpMatrix, w: &OpMatrix) -> Result<OpMatrix> {
    let weight = Weight::new(w)?;
    Ok(weight.adjoint(a))
}

/// Plain conjugate transpose, the unweighted special case.
pub fn flat_adjoint(a: &OpMatrix) -> OpMatrix {
    dagger(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{fro, max_abs};

    #[test]
    fn grid_layout() {
        let b = make_basis(1, 2.0 * PI).unwrap();
        assert_eq!(b.n, 3);
        assert!((b.xs[1] - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!((b.xs[2] - 4.0 * PI / 3.0).abs() < 1e-15);
        assert_eq!(make_basis(32, 2.0 * PI).unwrap().n, 65);
        assert!(make_basis(0, 1.0).is_err());
        assert!(make_basis(3, -1.0).is_err());
    }

    #[test]
    fn cosine_multiplier() {
        let b = make_basis(2, 2.0 * PI).unwrap();
        let s: Vec<f64> = b.xs.iter().map(|x| x.cos()).collect();
        let m = b.mult_op_real(&s).unwrap();
        for j in 0..5 {
            for k in 0..5 {
                let want = if (j as i64 - k as i64).abs() == 1 { 0.5 } else { 0.0 };
                assert!((m[[j, k]] - cr(want)).norm() < 1e-14);
            }
        }
        let one = b.mult_op_real(&[1.0; 5]).unwrap();
        assert!(fro(&(one - crate::linalg::eye(5))) < 1e-14);
    }

    #[test]
    fn derivative_of_sine() {
        let b = make_basis(8, 2.0 * PI).unwrap();
        let d = b.derivative_op();
        assert_eq!(d[[b.index(0), b.index(0)]], cr(0.0));
        assert!((d[[b.index(3), b.index(3)]] - C64::new(0.0, 3.0)).norm() < 1e-14);
        let s: Vec<C64> = b.xs.iter().map(|x| cr(x.sin())).collect();
        let coeffs = b.to_modes(&s).unwrap();
        let dc = d.dot(&coeffs);
        let back = b.to_grid(dc.as_slice().unwrap()).unwrap();
        for (x, v) in b.xs.iter().zip(back.iter()) {
            assert!((v - cr(x.cos())).norm() < 1e-13);
        }
    }

    #[test]
    fn sobolev_weights() {
        let b = make_basis(4, 2.0 * PI).unwrap();
        let w1 = b.sobolev_weight(1.0);
        assert!((w1[[b.index(0), b.index(0)]].re - 1.0).abs() < 1e-15);
        assert!((w1[[b.index(1), b.index(1)]].re - 2f64.sqrt()).abs() < 1e-15);
        let prod = w1.dot(&b.sobolev_weight(-1.0));
        assert!(max_abs(&(prod - crate::linalg::eye(9))) < 1e-15);
    }

    #[test]
    fn real_basis_is_unitary() {
        let b = make_basis(5, 3.0).unwrap();
        let q = b.real_basis();
        let g = dagger(&q).dot(&q);
        assert!(max_abs(&(g - crate::linalg::eye(b.n))) < 1e-14);
        let m = b.mult_op_fn(|x| 1.0 + 0.3 * (2.0 * PI * x / 3.0).sin());
        let r = dagger(&q).dot(&m).dot(&q);
        assert!(r.iter().all(|z| z.im.abs() < 1e-14));
        let fast = b.to_real_basis(&m);
        let slow = r.mapv(|z| z.re);
        assert!((&fast - &slow).iter().all(|v| v.abs() < 1e-14));
        let back = b.from_real_basis(&fast);
        assert!(max_abs(&(back - m)) < 1e-14);
    }

    #[test]
    fn fine_multiplier_matches_sampled_for_band_limited() {
        let b = make_basis(6, 2.0 * PI).unwrap();
        let f = |x: f64| 2.0 + (2.0 * x).cos() - 0.5 * (3.0 * x).sin();
        let s: Vec<f64> = b.xs.iter().map(|&x| f(x)).collect();
        let a = b.mult_op_real(&s).unwrap();
        let c = b.mult_op_fn(f);
        assert!(max_abs(&(a - c)) < 1e-14);
    }
}
