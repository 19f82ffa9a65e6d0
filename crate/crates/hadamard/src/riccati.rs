//! Approximate solution of the operator Riccati equation i∂_t b − b² + a + i r b = r_{−∞}
//! by fixed-point iteration around ε = a^{1/2}.

use serde::Serialize;

use crate::basis::{default_window, fit_time_decay_or_exact, DecayFit, OpFamily};
use crate::error::{Error, Result};
use crate::geometry::ModelCoefficients;
use crate::linalg::{cr, fro, from_spectrum, CMat, Weight, I};
use crate::operator::{smoothing_order, sqrt_and_inverse, SmoothingReport, DEFAULT_FLOOR};
use crate::report::ser_f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiOptions {
    pub n_max: usize,
    pub tol: f64,
    /// φ in the gap condition b⁺ − b⁻ ⪰ φ·min spec(2ε).
    pub gap_floor: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions { n_max: 4, tol: 1e-13, gap_floor: 0.25 }
    }
}

/// Growth factor of sup‖c_n‖ over one iteration treated as divergence.
pub const DIVERGENCE_RATIO: f64 = 10.0;

/// c_n − c_{n−1} summarized over the trimmed grid.
#[derive(Clone, Debug)]
pub struct Increment {
    pub n: usize,
    pub sup_norm: f64,
    /// Entrywise maximum over trimmed nodes.
    pub envelope: CMat,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapRepair {
    #[serde(serialize_with = "ser_f64")]
    pub floor: f64,
    /// Smallest ratio min spec(b⁺ − b⁻) / min spec(2ε) before repair.
    #[serde(serialize_with = "ser_f64")]
    pub min_ratio: f64,
    pub clamped_nodes: Vec<usize>,
    #[serde(serialize_with = "ser_f64")]
    pub max_correction: f64,
    pub smoothing: Option<SmoothingReport>,
}

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub eps: OpFamily,
    pub eps_inv: OpFamily,
    pub b_plus: OpFamily,
    pub b_minus: OpFamily,
    pub residual_plus: OpFamily,
    pub residual_minus: OpFamily,
    pub n_iter: usize,
    pub gap_floor: f64,
    pub increments: Vec<Increment>,
    pub gap: Option<GapRepair>,
}

impl RiccatiSolution {
    /// b = b⁺.
    pub fn b(&self) -> &OpFamily {
        &self.b_plus
    }

    /// max over nodes of ‖b⁻ + b*‖ / ‖b‖ in the weighted sense.
    pub fn adjoint_defect(&self, weights: &[Weight]) -> f64 {
        self.b_plus
            .mats
            .iter()
            .zip(&self.b_minus.mats)
            .zip(weights)
            .map(|((bp, bm), w)| fro(&(bm + &w.adjoint(bp))) / fro(bp))
            .fold(0.0, f64::max)
    }

    /// b⁺(t_i) − b⁻(t_i).
    pub fn gap_operator(&self, i: usize) -> CMat {
        &self.b_plus.mats[i] - &self.b_minus.mats[i]
    }
}

/// ε = a^{1/2} and ε^{-1} at every node.
pub fn sqrt_family(model: &ModelCoefficients) -> Result<(OpFamily, OpFamily)> {
    let mut eps = Vec::with_capacity(model.grid.n_nodes);
    let mut inv = Vec::with_capacity(model.grid.n_nodes);
    for (a, w) in model.a.mats.iter().zip(&model.weights) {
        let (e, ei) = sqrt_and_inverse(a, w, DEFAULT_FLOOR)?;
        eps.push(e);
        inv.push(ei);
    }
    Ok((OpFamily::new(model.grid, eps)?, OpFamily::new(model.grid, inv)?))
}

fn initial_from(eps: &OpFamily, eps_inv: &OpFamily, model: &ModelCoefficients) -> OpFamily {
    let d = eps.derivative();
    OpFamily::from_fn(model.grid, |i| {
        let ei = &eps_inv.mats[i];
        let inner = ei.dot(&d.mats[i]) + ei.dot(&model.r.mats[i]).dot(&eps.mats[i]);
        inner * (0.5 * I)
    })
}

/// a₀ = (i/2)(ε^{-1}∂_tε + ε^{-1}rε).
pub fn initial_term(model: &ModelCoefficients) -> Result<OpFamily> {
    let (eps, eps_inv) = sqrt_family(model)?;
    Ok(initial_from(&eps, &eps_inv, model))
}

/// F(c) = ½ε^{-1}(i∂_t c + [ε, c] + i r c − c²).
fn apply_f(c: &OpFamily, eps: &OpFamily, eps_inv: &OpFamily, model: &ModelCoefficients) -> OpFamily {
    let dc = c.derivative();
    OpFamily::from_fn(model.grid, |i| {
        let (ci, e) = (&c.mats[i], &eps.mats[i]);
        let rc = model.r.mats[i].dot(ci);
        let inner = (&dc.mats[i] + &rc) * I + e.dot(ci) - ci.dot(e) - ci.dot(ci);
        eps_inv.mats[i].dot(&inner) * cr(0.5)
    })
}

/// r^± = i∂_t b^± − (b^±)² + a + i r b^± at every node.
pub fn riccati_residual_of(b: &OpFamily, model: &ModelCoefficients) -> OpFamily {
    let db = b.derivative();
    OpFamily::from_fn(model.grid, |i| {
        let bi = &b.mats[i];
        (&db.mats[i] + &model.r.mats[i].dot(bi)) * I - bi.dot(bi) + &model.a.mats[i]
    })
}

/// Both residual families of a solution.
pub fn riccati_residual(sol: &RiccatiSolution, model: &ModelCoefficients) -> (OpFamily, OpFamily) {
    (riccati_residual_of(&sol.b_plus, model), riccati_residual_of(&sol.b_minus, model))
}

fn minus_adjoint(b: &OpFamily, weights: &[Weight]) -> OpFamily {
    b.map(|i, m| -weights[i].adjoint(m))
}

/// Fixed-point iteration c₀ = a₀, c_n = a₀ + F(c_{n−1}); b = ε + c_n, b⁻ = −b*.
pub fn riccati_iterate(model: &ModelCoefficients, opts: &RiccatiOptions) -> Result<RiccatiSolution> {
    if opts.n_max < 1 {
        return Err(Error::InvalidConfig("Riccati iteration needs n_max ≥ 1".into()));
    }
    let (eps, eps_inv) = sqrt_family(model)?;
    let a0 = initial_from(&eps, &eps_inv, model);
    let mut c = a0.clone();
    let mut increments = Vec::new();
    let mut n_iter = 0;
    for n in 1..=opts.n_max {
        let f = apply_f(&c, &eps, &eps_inv, model);
        let next = a0.zip(&f, |x, y| x + y);
        let incr = next.zip(&c, |x, y| x - y);
        let prev_sup = c.sup_norm();
        let next_sup = next.sup_norm();
        n_iter = n;
        if prev_sup > 1e-300 && next_sup > DIVERGENCE_RATIO * prev_sup {
            return Err(Error::IterationDiverged { step: n, ratio: next_sup / prev_sup });
        }
        let sup = incr.sup_norm();
        increments.push(Increment { n, sup_norm: sup, envelope: incr.entry_envelope() });
        c = next;
        if sup <= opts.tol {
            break;
        }
    }
    let b_plus = eps.zip(&c, |e, x| e + x);
    let b_minus = minus_adjoint(&b_plus, &model.weights);
    let residual_plus = riccati_residual_of(&b_plus, model);
    let residual_minus = riccati_residual_of(&b_minus, model);
    Ok(RiccatiSolution {
        eps,
        eps_inv,
        b_plus,
        b_minus,
        residual_plus,
        residual_minus,
        n_iter,
        gap_floor: opts.gap_floor,
        increments,
        gap: None,
    })
}

/// Raises the weighted spectrum of the self-adjoint x to at least `level`; returns the
/// (positive, finite-rank) correction and the number of eigenvalues moved.
pub fn clamp_spectrum(x: &CMat, w: &Weight, level: f64) -> Result<(CMat, usize)> {
    let (vals, vecs) = w.eigh(x)?;
    let moved = vals.iter().filter(|&&v| v < level).count();
    if moved == 0 {
        return Ok((CMat::zeros(x.raw_dim()), 0));
    }
    let lift = from_spectrum(&vals, &vecs, |v| cr((level - v).max(0.0)));
    Ok((w.from_flat(&lift), moved))
}

/// Enforces b⁺ − b⁻ ⪰ φ·min spec(2ε) nodewise by spectral clamping, splitting the
/// correction symmetrically between b⁺ and b⁻; the correction must be smoothing.
pub fn enforce_gap(mut sol: RiccatiSolution, model: &ModelCoefficients, floor: f64) -> Result<RiccatiSolution> {
    let mut clamped = Vec::new();
    let mut min_ratio = f64::INFINITY;
    let mut worst: Option<CMat> = None;
    let mut max_correction = 0.0f64;
    for i in 0..model.grid.n_nodes {
        let w = &model.weights[i];
        let x = sol.gap_operator(i);
        let two_eps_min = 2.0 * w.eigh(&sol.eps.mats[i])?.0[0];
        let x_min = w.eigh(&x)?.0[0];
        min_ratio = min_ratio.min(x_min / two_eps_min);
        let level = floor * two_eps_min;
        if x_min >= level {
            continue;
        }
        let (delta, _) = clamp_spectrum(&x, w, level)?;
        let half = &delta * cr(0.5);
        sol.b_plus.mats[i] = &sol.b_plus.mats[i] + &half;
        sol.b_minus.mats[i] = &sol.b_minus.mats[i] - &half;
        let size = fro(&delta);
        if size > max_correction {
            max_correction = size;
            worst = Some(delta);
        }
        clamped.push(i);
    }
    let smoothing = match worst {
        Some(delta) => {
            let report = smoothing_order(&delta, &model.basis, 2, default_window(model.basis.k), 4.0)?;
            if !report.fit.is_exact() && report.fit.exponent < 4.0 {
                return Err(Error::GapRepairFailed { p: report.fit.exponent });
            }
            Some(report)
        }
        None => None,
    };
    if !clamped.is_empty() {
        sol.residual_plus = riccati_residual_of(&sol.b_plus, model);
        sol.residual_minus = riccati_residual_of(&sol.b_minus, model);
    }
    sol.gap_floor = floor;
    sol.gap = Some(GapRepair { floor, min_ratio, clamped_nodes: clamped, max_correction, smoothing });
    Ok(sol)
}

/// Iteration followed by the gap repair.
pub fn solve_riccati(model: &ModelCoefficients, opts: &RiccatiOptions) -> Result<RiccatiSolution> {
    let sol = riccati_iterate(model, opts)?;
    enforce_gap(sol, model, opts.gap_floor)
}

#[derive(Clone, Debug, Serialize)]
pub struct RiccatiReport {
    pub n_iter: usize,
    /// Entry-decay exponents of c_n − c_{n−1}, n = 1, 2, …
    #[serde(serialize_with = "crate::report::ser_f64_vec")]
    pub increment_exponents: Vec<f64>,
    #[serde(serialize_with = "crate::report::ser_f64_vec")]
    pub increment_norms: Vec<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub residual_sup: f64,
    pub residual_decay: Option<EndDecay>,
    pub correction_decay: Option<EndDecay>,
    pub residual_smoothing: Option<SmoothingReport>,
    pub gap: Option<GapRepair>,
}

/// Time-decay fits at the two ends, each over the same |t| window.
#[derive(Clone, Debug, Serialize)]
pub struct EndDecay {
    pub past: DecayFit,
    pub future: DecayFit,
}

impl EndDecay {
    /// The two ends approach different limits, so they are fitted separately.
    pub fn fit(values: &[(f64, f64)], window: (f64, f64), floor: f64) -> Result<Self> {
        let side = |future: bool| -> Vec<(f64, f64)> { values.iter().copied().filter(|(t, _)| (*t > 0.0) == future).collect() };
        Ok(EndDecay {
            past: fit_time_decay_or_exact(&side(false), window, floor)?,
            future: fit_time_decay_or_exact(&side(true), window, floor)?,
        })
    }

    pub fn min_exponent(&self) -> f64 {
        self.past.exponent.min(self.future.exponent)
    }
}

/// Diagnostics: order gain of the increments, residual size, smoothing and time decay.
pub fn riccati_report(
    sol: &RiccatiSolution,
    model: &ModelCoefficients,
    k_window: (usize, usize),
    t_window: Option<(f64, f64)>,
) -> Result<RiccatiReport> {
    let increment_exponents = sol
        .increments
        .iter()
        .map(|inc| {
            if inc.sup_norm <= 1e-13 * sol.eps.sup_norm() {
                Ok(f64::INFINITY)
            } else {
                crate::basis::entry_decay_fit(&inc.envelope, k_window).map(|f| f.exponent)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let residual_sup = sol.residual_plus.sup_norm();
    let (residual_decay, correction_decay) = match t_window {
        Some(win) => {
            let floor = 1e-14 * sol.eps.sup_norm();
            let res = EndDecay::fit(&sol.residual_plus.trimmed_norms(), win, floor)?;
            let corr = sol.b_plus.zip(&sol.eps, |b, e| b - e);
            (Some(res), Some(EndDecay::fit(&corr.trimmed_norms(), win, floor)?))
        }
        None => (None, None),
    };
    let residual_smoothing = if residual_sup > 0.0 {
        let env = sol.residual_plus.entry_envelope();
        Some(smoothing_order(&env, &model.basis, 2, k_window, 4.0)?)
    } else {
        None
    };
    Ok(RiccatiReport {
        n_iter: sol.n_iter,
        increment_exponents,
        increment_norms: sol.increments.iter().map(|i| i.sup_norm).collect(),
        residual_sup,
        residual_decay,
        correction_decay,
        residual_smoothing,
        gap: sol.gap.clone(),
    })
}
