//! Cauchy evolutions of first-order systems ∂_t U = iH(t)U on block operators.

pub mod kg;
pub mod rk;

use std::cell::RefCell;

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::basis::{ModeBasis, OpFamily};
use crate::error::{Error, Result};
use crate::linalg::{assemble, block, block_diag, cr, eye, fro, inv, q_form, zeros, CMat, Weight, C64, I};
use crate::operator::{smoothing_order, SmoothingReport};
pub use kg::{kg_path, KgGenerator};
pub use rk::{Integrator, Method, Stats};

/// Operator on Cauchy data: a (2N)×(2N) matrix of N×N blocks.
pub type BlockOp = CMat;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOptions {
    pub method: Method,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self::adaptive(1e-10)
    }
}

impl EvolutionOptions {
    /// Adaptive stepping with absolute tolerance a hundredth of the relative one.
    pub fn adaptive(rtol: f64) -> Self {
        EvolutionOptions { method: Method::Adaptive { rtol, atol: 1e-2 * rtol } }
    }

    pub fn rk4(dt: f64) -> Self {
        EvolutionOptions { method: Method::Rk4 { dt } }
    }

    /// Nominal accuracy used for consistency thresholds.
    pub fn tol(&self) -> f64 {
        match self.method {
            Method::Adaptive { rtol, .. } => rtol,
            Method::Rk4 { dt } => dt.powi(4),
        }
    }
}

/// Time-dependent generator H(t).
pub trait Generator {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64) -> Result<CMat>;
}

/// Generator interpolated cubically from its values on a time grid.
pub struct FamilyGenerator<'a> {
    pub family: &'a OpFamily,
}

impl Generator for FamilyGenerator<'_> {
    fn dim(&self) -> usize {
        self.family.mats[0].nrows()
    }

    fn eval(&self, t: f64) -> Result<CMat> {
        let g = &self.family.grid;
        if !g.contains(t) {
            return Err(Error::InvalidData(format!(
                "time {t} outside the generator grid [{}, {}]",
                g.t_min, g.t_max
            )));
        }
        Ok(self.family.interpolate(t))
    }
}

/// Time-independent generator.
pub struct ConstGenerator(pub CMat);

impl Generator for ConstGenerator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn eval(&self, _t: f64) -> Result<CMat> {
        Ok(self.0.clone())
    }
}

/// Integrates y' = f(t, y) where f may fail; the first failure aborts the result.
pub(crate) fn run_fallible<S: rk::OdeState>(
    integ: &mut Integrator,
    f: impl Fn(f64, &S) -> Result<S>,
    zero: impl Fn(&S) -> S,
    t0: f64,
    y0: S,
    stops: &[f64],
) -> Result<Vec<S>> {
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let mut rhs = |t: f64, y: &S| {
        if failure.borrow().is_some() {
            return zero(y);
        }
        match f(t, y) {
            Ok(v) => v,
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                zero(y)
            }
        }
    };
    let out = integ.advance_through(&mut rhs, t0, y0, stops);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    out
}

/// Splits `stops` into forward and backward legs from `anchor`, each ordered away from it.
pub(crate) fn legs(anchor: f64, stops: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut fwd: Vec<f64> = stops.iter().copied().filter(|&t| t >= anchor).collect();
    let mut bwd: Vec<f64> = stops.iter().copied().filter(|&t| t < anchor).collect();
    fwd.sort_by(|a, b| a.total_cmp(b));
    bwd.sort_by(|a, b| b.total_cmp(a));
    fwd.dedup();
    bwd.dedup();
    (fwd, bwd)
}

/// U(t, anchor) stored at a set of times; two-time propagators come from the group law.
#[derive(Clone, Debug)]
pub struct Path {
    pub anchor: f64,
    pub times: Vec<f64>,
    pub mats: Vec<BlockOp>,
}

impl Path {
    fn position(&self, t: f64) -> Result<usize> {
        if t == self.anchor {
            return Ok(usize::MAX);
        }
        self.times
            .iter()
            .position(|&x| (x - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .ok_or_else(|| Error::InvalidData(format!("time {t} not stored on the evolution path")))
    }

    /// U(t, anchor).
    pub fn from_anchor(&self, t: f64) -> Result<BlockOp> {
        let i = self.position(t)?;
        Ok(if i == usize::MAX { eye(self.dim()) } else { self.mats[i].clone() })
    }

    /// U(anchor, t).
    pub fn to_anchor(&self, t: f64) -> Result<BlockOp> {
        inv(&self.from_anchor(t)?)
    }

    /// U(t, s) = U(t, anchor) U(anchor, s).
    pub fn between(&self, t: f64, s: f64) -> Result<BlockOp> {
        if t == s {
            return Ok(eye(self.dim()));
        }
        Ok(self.from_anchor(t)?.dot(&self.to_anchor(s)?))
    }

    pub fn dim(&self) -> usize {
        self.mats.first().map(|m| m.nrows()).unwrap_or(0)
    }

    fn sorted(anchor: f64, fwd: Vec<f64>, fm: Vec<CMat>, bwd: Vec<f64>, bm: Vec<CMat>) -> Self {
        let mut pairs: Vec<(f64, CMat)> = fwd.into_iter().zip(fm).chain(bwd.into_iter().zip(bm)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (times, mats) = pairs.into_iter().unzip();
        Path { anchor, times, mats }
    }
}

fn ihu(h: &CMat, u: &CMat) -> CMat {
    let mut out = h.dot(u);
    out.mapv_inplace(|z| z * I);
    out
}

/// U(t, anchor) for every t in `stops` under the generator g.
pub fn evolve_path(g: &impl Generator, anchor: f64, stops: &[f64], opts: &EvolutionOptions) -> Result<Path> {
    let (fwd, bwd) = legs(anchor, stops);
    let n = g.dim();
    let f = |t: f64, u: &CMat| -> Result<CMat> { Ok(ihu(&g.eval(t)?, u)) };
    let zero = |u: &CMat| CMat::zeros(u.raw_dim());
    let fm = run_fallible(&mut Integrator::new(opts.method)?, f, zero, anchor, eye(n), &fwd)?;
    let bm = run_fallible(&mut Integrator::new(opts.method)?, f, zero, anchor, eye(n), &bwd)?;
    Ok(Path::sorted(anchor, fwd, fm, bwd, bm))
}

/// U(t, s) solving ∂_t U = iH(t)U, U(s, s) = I.
pub fn evolve(g: &impl Generator, t: f64, s: f64, opts: &EvolutionOptions) -> Result<BlockOp> {
    if t == s {
        return Ok(eye(g.dim()));
    }
    Ok(evolve_path(g, s, &[t], opts)?.mats.remove(0))
}

/// Diagonal blocks of a block-diagonal family.
fn diagonal_families(h: &OpFamily) -> Result<(OpFamily, OpFamily, f64)> {
    let mut off = 0.0f64;
    let mut top = Vec::with_capacity(h.len());
    let mut bottom = Vec::with_capacity(h.len());
    for m in &h.mats {
        let n = m.nrows() / 2;
        off = off.max(fro(&block(m, 0, 1)).max(fro(&block(m, 1, 0))) / fro(m).max(1e-300));
        top.push(m.slice(s![..n, ..n]).to_owned());
        bottom.push(m.slice(s![n.., n..]).to_owned());
    }
    Ok((OpFamily::new(h.grid, top)?, OpFamily::new(h.grid, bottom)?, off))
}

/// Evolution of a block-diagonal generator, integrated block by block.
pub fn evolve_diag(h_d: &OpFamily, t: f64, s: f64, opts: &EvolutionOptions) -> Result<BlockOp> {
    Ok(evolve_diag_path(h_d, s, &[t], opts)?.mats.remove(0))
}

/// Anchored path of a block-diagonal evolution.
pub fn evolve_diag_path(h_d: &OpFamily, anchor: f64, stops: &[f64], opts: &EvolutionOptions) -> Result<Path> {
    let (top, bottom, off) = diagonal_families(h_d)?;
    if off > 10.0 * opts.tol() {
        return Err(Error::InvalidData(format!("generator is not block diagonal (relative off-diagonal size {off:.3e})")));
    }
    let p = evolve_path(&FamilyGenerator { family: &top }, anchor, stops, opts)?;
    let m = evolve_path(&FamilyGenerator { family: &bottom }, anchor, stops, opts)?;
    let mats = p.mats.iter().zip(&m.mats).map(|(a, b)| block_diag(a, b)).collect();
    Ok(Path { anchor, times: p.times, mats })
}

/// ‖U†(W_t⊕W_t)qU − (W_s⊕W_s)q‖ / ‖(W_s⊕W_s)q‖.
pub fn check_symplectic(u: &BlockOp, w_t: &CMat, w_s: &CMat) -> f64 {
    let n = w_t.nrows();
    let z = zeros(n);
    let form_t = assemble(&z, w_t, w_t, &z);
    let form_s = assemble(&z, w_s, w_s, &z);
    let lhs = u.t().mapv(|v| v.conj()).dot(&form_t).dot(u);
    fro(&(&lhs - &form_s)) / fro(&form_s)
}

/// Symplectic residual with flat weights.
pub fn check_symplectic_flat(u: &BlockOp) -> f64 {
    let n = u.nrows() / 2;
    let q = q_form(n);
    let lhs = u.t().mapv(|v| v.conj()).dot(&q).dot(u);
    fro(&(&lhs - &q)) / fro(&q)
}

/// exp(iτH_∞) for H_∞ = [[0, I], [a, 0]] with a weighted self-adjoint and positive:
/// [[cos ετ, iε^{-1} sin ετ], [iε sin ετ, cos ετ]], ε = a^{1/2}.
pub fn free_evolution(a: &CMat, weight: &Weight, tau: f64) -> Result<BlockOp> {
    let (vals, vecs) = weight.eigh(a)?;
    if vals[0] <= 0.0 {
        return Err(Error::NotPositive { eigenvalue: vals[0], floor: 0.0 });
    }
    let f = |g: &dyn Fn(f64) -> C64| weight.from_flat(&crate::linalg::from_spectrum(&vals, &vecs, g));
    let c = f(&|x| cr((x.sqrt() * tau).cos()));
    let s_over = f(&|x| C64::new(0.0, (x.sqrt() * tau).sin() / x.sqrt()));
    let s_times = f(&|x| C64::new(0.0, (x.sqrt() * tau).sin() * x.sqrt()));
    Ok(assemble(&c, &s_over, &s_times, &c))
}

/// U^±(t, s) = U(t, t0) c^±(t0) U(t0, s).
pub fn split_evolution(
    path: &Path,
    c_plus: &BlockOp,
    c_minus: &BlockOp,
    t: f64,
    s: f64,
    t0: f64,
) -> Result<(BlockOp, BlockOp)> {
    let left = path.between(t, t0)?;
    let right = path.between(t0, s)?;
    Ok((left.dot(c_plus).dot(&right), left.dot(c_minus).dot(&right)))
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub t: f64,
    pub s: f64,
    pub norm: f64,
    pub relative: f64,
    /// Smoothing diagnostics of the four blocks of D.
    pub blocks: Vec<SmoothingReport>,
    pub min_exponent: f64,
    pub pass: bool,
}

/// D(t, s) = U(t, s) − T(t)U^d(t, s)T(s)^{-1} and its smoothing classification.
pub fn interaction_gap(
    basis: &ModeBasis,
    u: &BlockOp,
    t_t: &BlockOp,
    u_d: &BlockOp,
    t_s_inv: &BlockOp,
    (t, s): (f64, f64),
    window: (usize, usize),
) -> Result<GapReport> {
    let d = u - &t_t.dot(u_d).dot(t_s_inv);
    let mut blocks = Vec::with_capacity(4);
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        blocks.push(smoothing_order(&block(&d, i, j), basis, 2, window, 4.0)?);
    }
    let min_exponent = blocks.iter().map(|b| b.fit.exponent).fold(f64::INFINITY, f64::min);
    let pass = blocks.iter().all(|b| b.fit.is_exact() || (b.fit.exponent >= 4.0 && b.fit.r_squared >= 0.9));
    Ok(GapReport {
        t,
        s,
        norm: fro(&d),
        relative: fro(&d) / fro(u),
        blocks,
        min_exponent,
        pass,
    })
}
