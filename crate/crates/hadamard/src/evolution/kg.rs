//! Klein-Gordon evolution in real canonical variables.
//!
//! With u the field in the real cos/sin basis and π = −W̃∂_t u, the system is
//! u′ = −W̃^{-1}π, π′ = S̃u with W̃, S̃ real symmetric, so the integrated flow is
//! exactly symplectic up to the ODE error. Results are returned as operators on
//! Fourier Cauchy data (u, −i∂_t u).

use ndarray::{s, Array2};

use super::{legs, run_fallible, BlockOp, EvolutionOptions, Integrator, Path};
use crate::error::Result;
use crate::geometry::Reduction;
use crate::linalg::{assemble, C64, CMat, RMat};

/// Generator data (W̃^{-1}(t), S̃(t)) assembled directly from the reduction.
pub struct KgGenerator<'a> {
    pub red: &'a Reduction,
    fixed: Option<(RMat, RMat)>,
}

impl<'a> KgGenerator<'a> {
    pub fn new(red: &'a Reduction) -> Result<Self> {
        let fixed = if red.spec.is_static() { Some(red.canonical_real(0.0)?) } else { None };
        Ok(KgGenerator { red, fixed })
    }

    fn data(&self, t: f64) -> Result<(RMat, RMat)> {
        match &self.fixed {
            Some(d) => Ok(d.clone()),
            None => self.red.canonical_real(t),
        }
    }

    /// Right-hand side for the stacked state [u; π].
    pub fn rhs(&self, t: f64, y: &RMat) -> Result<RMat> {
        let n = self.red.basis.n;
        let (winv, sr) = self.data(t)?;
        let mut out = Array2::zeros(y.raw_dim());
        let u = y.slice(s![..n, ..]);
        let p = y.slice(s![n.., ..]);
        out.slice_mut(s![..n, ..]).assign(&(-winv.dot(&p)));
        out.slice_mut(s![n.., ..]).assign(&sr.dot(&u));
        Ok(out)
    }
}

fn mix(q: &CMat, r: &RMat, right: &CMat) -> CMat {
    let rc = r.mapv(|v| C64::new(v, 0.0));
    q.dot(&rc).dot(right)
}

/// Converts a real canonical propagator Y(t, s) to Fourier Cauchy data:
/// U00 = QY00Q†, U01 = −iQY01Q†W_s, U10 = iW_t^{-1}QY10Q†, U11 = W_t^{-1}QY11Q†W_s.
pub fn to_fourier(q: &CMat, y: &RMat, w_t_inv: &CMat, w_s: &CMat) -> BlockOp {
    let n = q.nrows();
    let qd = q.t().mapv(|v| v.conj());
    let qdw = qd.dot(w_s);
    let y00 = y.slice(s![..n, ..n]).to_owned();
    let y01 = y.slice(s![..n, n..]).to_owned();
    let y10 = y.slice(s![n.., ..n]).to_owned();
    let y11 = y.slice(s![n.., n..]).to_owned();
    let i = C64::new(0.0, 1.0);
    let u00 = mix(q, &y00, &qd);
    let u01 = mix(q, &y01, &qdw).mapv(|z| -i * z);
    let u10 = w_t_inv.dot(&mix(q, &y10, &qd)).mapv(|z| i * z);
    let u11 = w_t_inv.dot(&mix(q, &y11, &qdw));
    assemble(&u00, &u01, &u10, &u11)
}

/// Inverse of `to_fourier`: the real canonical propagator of a Fourier one.
pub fn from_fourier(q: &CMat, u: &BlockOp, w_t: &CMat, w_s_inv: &CMat) -> RMat {
    let n = q.nrows();
    let qd = q.t().mapv(|v| v.conj());
    let b = |i: usize, j: usize| u.slice(s![i * n..(i + 1) * n, j * n..(j + 1) * n]).to_owned();
    let i = C64::new(0.0, 1.0);
    let y00 = qd.dot(&b(0, 0)).dot(q);
    let y01 = qd.dot(&b(0, 1)).dot(w_s_inv).dot(q).mapv(|z| i * z);
    let y10 = qd.dot(w_t).dot(&b(1, 0)).dot(q).mapv(|z| -i * z);
    let y11 = qd.dot(w_t).dot(&b(1, 1)).dot(w_s_inv).dot(q);
    let mut out = Array2::zeros((2 * n, 2 * n));
    for (bi, bj, m) in [(0, 0, y00), (0, 1, y01), (1, 0, y10), (1, 1, y11)] {
        out.slice_mut(s![bi * n..(bi + 1) * n, bj * n..(bj + 1) * n]).assign(&m.mapv(|z| z.re));
    }
    out
}

/// Real canonical propagators Y(t, anchor) at each stop.
pub fn kg_real_path(
    red: &Reduction,
    anchor: f64,
    stops: &[f64],
    opts: &EvolutionOptions,
) -> Result<(Vec<f64>, Vec<RMat>)> {
    let gen = KgGenerator::new(red)?;
    let n2 = 2 * red.basis.n;
    let (fwd, bwd) = legs(anchor, stops);
    let f = |t: f64, y: &RMat| gen.rhs(t, y);
    let zero = |y: &RMat| RMat::zeros(y.raw_dim());
    let id = RMat::eye(n2);
    let fm = run_fallible(&mut Integrator::new(opts.method)?, f, zero, anchor, id.clone(), &fwd)?;
    let bm = run_fallible(&mut Integrator::new(opts.method)?, f, zero, anchor, id, &bwd)?;
    let mut pairs: Vec<(f64, RMat)> = fwd.into_iter().zip(fm).chain(bwd.into_iter().zip(bm)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// Anchored Klein-Gordon path U(t, anchor) on Fourier Cauchy data.
pub fn kg_path(red: &Reduction, anchor: f64, stops: &[f64], opts: &EvolutionOptions) -> Result<Path> {
    let (times, ys) = kg_real_path(red, anchor, stops, opts)?;
    let q = red.basis.real_basis();
    let w_s = red.weight_at(anchor)?;
    let mut mats = Vec::with_capacity(times.len());
    for (t, y) in times.iter().zip(&ys) {
        let w_t = red.weight_at(*t)?;
        mats.push(to_fourier(&q, y, &w_t.inv, &w_s.w));
    }
    Ok(Path { anchor, times, mats })
}

/// U(t, s) for the Klein-Gordon system.
pub fn kg_evolve(red: &Reduction, t: f64, s: f64, opts: &EvolutionOptions) -> Result<BlockOp> {
    if t == s {
        return Ok(crate::linalg::eye(2 * red.basis.n));
    }
    Ok(kg_path(red, s, &[t], opts)?.mats.remove(0))
}
