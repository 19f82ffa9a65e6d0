//! Covariances of quasi-free states on Cauchy data: the asymptotic vacua, the reference
//! state of the diagonalization frame, and the in/out states obtained as scattering limits.
//! Also the two-point kernels Λ^±(t, s), the causal propagator and the smoothing proxy for
//! the Hadamard condition.

use ndarray::{s, Array1};
use serde::{Deserialize, Serialize};

use crate::basis::{fit_time_decay, DecayFit, ModeBasis};
use crate::diagonalization::{asymptotic_frame, local_frame_extrapolated, DiagFrame, LocalFrame};
use crate::error::{Error, Result};
use crate::evolution::{kg_path, BlockOp, EvolutionOptions, Path};
use crate::geometry::{flow::invert_map, flow::pullback_matrix, End, NodeModel, Reduction};
use crate::linalg::{
    assemble, block, block_diag, dagger, eye, herm_part, inv, max_abs, min_eig_herm, spectral_norm, zeros, CMat, Weight,
    C64, I,
};
use crate::operator::{smoothing_order, sqrt_and_inverse, SmoothingReport};
use crate::report::{ser_f64, ser_f64_vec};
use crate::riccati::RiccatiOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateTag {
    Vac,
    Ref,
    In,
    Out,
}

impl StateTag {
    /// Whether idempotency is asserted at the strict tolerance.
    pub fn strict(self) -> bool {
        matches!(self, StateTag::Vac | StateTag::Ref)
    }
}

/// Pair of covariances c^± at time `t_anchor`, with λ^± = ±(W⊕W)q c^±.
#[derive(Clone, Debug)]
pub struct Covariances {
    pub c_plus: BlockOp,
    pub c_minus: BlockOp,
    pub lambda_plus: BlockOp,
    pub lambda_minus: BlockOp,
    pub tag: StateTag,
    pub t_anchor: f64,
    pub weight: Weight,
}

/// (W⊕W)q.
pub fn weighted_form(w: &Weight) -> CMat {
    let z = zeros(w.dim());
    assemble(&z, &w.w, &w.w, &z)
}

impl Covariances {
    pub fn new(c_plus: BlockOp, c_minus: BlockOp, weight: Weight, tag: StateTag, t_anchor: f64) -> Self {
        let form = weighted_form(&weight);
        let lambda_plus = form.dot(&c_plus);
        let lambda_minus = form.dot(&c_minus).mapv(|z| -z);
        Covariances { c_plus, c_minus, lambda_plus, lambda_minus, tag, t_anchor, weight }
    }

    pub fn retag(mut self, tag: StateTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn dim(&self) -> usize {
        self.weight.dim()
    }
}

/// c^{±,vac} = ½[[I, ±a^{-1/2}], [±a^{1/2}, I]].
pub fn vacuum_covariances(a_out: &CMat, w: &Weight, t_anchor: f64) -> Result<Covariances> {
    let (sq, sq_inv) = sqrt_and_inverse(a_out, w, 0.0)?;
    let n = a_out.nrows();
    let h = eye(n).mapv(|z| z * 0.5);
    let plus = assemble(&h, &sq_inv.mapv(|z| z * 0.5), &sq.mapv(|z| z * 0.5), &h);
    let minus = assemble(&h, &sq_inv.mapv(|z| z * -0.5), &sq.mapv(|z| z * -0.5), &h);
    Ok(Covariances::new(plus, minus, w.clone(), StateTag::Vac, t_anchor))
}

/// Vacuum of an asymptotic node.
pub fn vacuum_of(node: &NodeModel, t_anchor: f64) -> Result<Covariances> {
    vacuum_covariances(&node.a, &node.weight, t_anchor)
}

/// c^±_ref(t0) = T(t0)π^±T(t0)^{-1} at a node of the frame grid.
pub fn reference_covariances(frame: &DiagFrame, t0: f64) -> Result<Covariances> {
    let i = frame.grid.nearest(t0);
    if (frame.grid.node(i) - t0).abs() > 1e-9 * (1.0 + t0.abs()) {
        return Err(Error::InvalidData(format!("reference time {t0} is not a frame grid node")));
    }
    let (plus, minus) = frame.c_ref(i);
    Ok(Covariances::new(plus, minus, frame.weights[i].clone(), StateTag::Ref, t0))
}

/// Reference covariances from a frame computed on a local grid.
pub fn reference_from_local(lf: &LocalFrame) -> Covariances {
    let (plus, minus) = lf.c_ref();
    Covariances::new(plus, minus, lf.weight.clone(), StateTag::Ref, lf.t)
}

/// c^±(to_t) = U(to_t, t_a)c^±U(t_a, to_t); `w_to` is the weight at `to_t`.
pub fn transport_covariances(path: &Path, c: &Covariances, to_t: f64, w_to: &Weight) -> Result<Covariances> {
    let fwd = path.between(to_t, c.t_anchor)?;
    let back = path.between(c.t_anchor, to_t)?;
    Ok(Covariances::new(
        fwd.dot(&c.c_plus).dot(&back),
        fwd.dot(&c.c_minus).dot(&back),
        w_to.clone(),
        c.tag,
        to_t,
    ))
}

/// Z(t) = (χ_t^*)^{-1}T(t) on the frame grid and its asymptotic counterparts. The lapse
/// factor R(t) is the identity in one space dimension.
#[derive(Clone, Debug)]
pub struct ZFamily {
    pub times: Vec<f64>,
    pub z: Vec<BlockOp>,
    pub z_inv: Vec<BlockOp>,
    pub z_out: BlockOp,
    pub z_out_inv: BlockOp,
    pub z_in: BlockOp,
    pub z_in_inv: BlockOp,
}

impl ZFamily {
    /// max_t ‖Z(t)Z(t)^{-1} − I‖.
    pub fn inverse_defect(&self) -> f64 {
        self.z
            .iter()
            .zip(&self.z_inv)
            .map(|(z, zi)| crate::linalg::fro(&(&z.dot(zi) - &eye(z.nrows()))))
            .fold(0.0, f64::max)
    }

    /// (t, ‖Z(t)^{-1}Z_end − I‖) for every grid time on the side of `end`.
    pub fn approach(&self, end: End) -> Vec<(f64, f64)> {
        let z_end = match end {
            End::Future => &self.z_out,
            End::Past => &self.z_in,
        };
        let id = eye(z_end.nrows());
        self.times
            .iter()
            .zip(&self.z_inv)
            .filter(|(t, _)| match end {
                End::Future => **t > 0.0,
                End::Past => **t < 0.0,
            })
            .map(|(t, zi)| (*t, crate::linalg::fro(&(&zi.dot(z_end) - &id)) / crate::linalg::fro(&id)))
            .collect()
    }
}

/// Matrix of u ↦ u∘y^{-1} for a lifted circle map y on the fine grid, together with
/// the inverse of that matrix.
fn inverse_pullback(basis: &ModeBasis, xs: &[f64], y: &Array1<f64>, yx: &Array1<f64>) -> Result<(CMat, CMat)> {
    let yi = Array1::from(invert_map(basis, xs, y, yx, xs)?);
    let p = pullback_matrix(basis, &yi);
    let pi = inv(&p)?;
    Ok((p, pi))
}

/// (χ^*)^{-1} and its inverse on Cauchy data at time t, or at an end.
fn flow_factor(red: &Reduction, at: Option<f64>, end: End) -> Result<(CMat, CMat)> {
    let n = red.basis.n;
    if red.flow.is_identity() {
        return Ok((eye(2 * n), eye(2 * n)));
    }
    let (y, yx) = match at {
        Some(t) => red.flow.at(t)?,
        None => red.flow.asymptotic(end),
    };
    let (p, pi) = inverse_pullback(&red.basis, &red.flow.xs, &y, &yx)?;
    Ok((block_diag(&p, &p), block_diag(&pi, &pi)))
}

/// Z(t) = (χ_t^*)^{-1}T(t) and Z_out/in = (χ_out/in^*)^{-1}T_out/in.
pub fn build_z(red: &Reduction, frame: &DiagFrame, out: &NodeModel, inn: &NodeModel) -> Result<ZFamily> {
    let times = frame.grid.nodes();
    let mut z = Vec::with_capacity(times.len());
    let mut z_inv = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let (f, fi) = flow_factor(red, Some(t), End::Future)?;
        z.push(f.dot(&frame.t.mats[i]));
        z_inv.push(frame.t_inv.mats[i].dot(&fi));
    }
    let asym = |node: &NodeModel, end: End| -> Result<(CMat, CMat)> {
        let (t, ti) = asymptotic_frame(&node.a, &node.weight)?;
        let (f, fi) = flow_factor(red, None, end)?;
        Ok((f.dot(&t), ti.dot(&fi)))
    };
    let (z_out, z_out_inv) = asym(out, End::Future)?;
    let (z_in, z_in_inv) = asym(inn, End::Past)?;
    Ok(ZFamily { times, z, z_inv, z_out, z_out_inv, z_in, z_in_inv })
}

/// χ_t^*(χ_end^*)^{-1} on Cauchy data: the asymptotic vacuum written in model variables at t.
fn end_to_model(red: &Reduction, t: f64, end: End) -> Result<(CMat, CMat)> {
    let n = red.basis.n;
    if red.flow.is_identity() {
        return Ok((eye(2 * n), eye(2 * n)));
    }
    let (ft, fti) = flow_factor(red, Some(t), end)?;
    let (fe, fei) = flow_factor(red, None, end)?;
    Ok((fti.dot(&fe), fei.dot(&ft)))
}

/// Sample times of a scattering trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Samples {
    /// Parses "start:stop:count".
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidConfig(format!("samples must read start:stop:count, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        let out = Samples { start, stop, count };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.stop > self.start && self.count >= 5) {
            return Err(Error::InvalidConfig(format!(
                "samples need 0 < start < stop and at least 5 points, got {}:{}:{}",
                self.start, self.stop, self.count
            )));
        }
        Ok(())
    }

    /// Geometrically spaced magnitudes start..=stop, signed toward the given end.
    pub fn times(&self, end: End) -> Vec<f64> {
        let ratio = (self.stop / self.start).ln() / (self.count - 1) as f64;
        let sign = match end {
            End::Future => 1.0,
            End::Past => -1.0,
        };
        (0..self.count).map(|j| sign * self.start * (ratio * j as f64).exp()).collect()
    }
}

/// Increments of a sequence of covariances and its extrapolated limit.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTrace {
    #[serde(serialize_with = "ser_f64_vec")]
    pub times: Vec<f64>,
    /// ‖c^{t_{j+1}} − c^{t_j}‖ in the charge norm, for c⁺.
    #[serde(serialize_with = "ser_f64_vec")]
    pub increments: Vec<f64>,
    pub fit: Option<DecayFit>,
    /// Norm of the tail added by the extrapolation.
    #[serde(serialize_with = "ser_f64")]
    pub tail: f64,
    #[serde(skip)]
    pub limit: BlockOp,
}

/// Options of the scattering construction.
#[derive(Clone, Debug)]
pub struct ScatteringOptions {
    pub evolution: EvolutionOptions,
    pub riccati: RiccatiOptions,
    /// Spacing of the local grids on which c_ref(t) is computed at the sample times.
    pub local_dt: f64,
    /// Richardson levels for those local frames.
    pub levels: usize,
    /// Increments below this absolute level count as converged.
    pub floor: f64,
}

impl Default for ScatteringOptions {
    fn default() -> Self {
        ScatteringOptions {
            evolution: EvolutionOptions::adaptive(1e-10),
            riccati: RiccatiOptions::default(),
            local_dt: 0.2,
            levels: 1,
            floor: 1e-10,
        }
    }
}

/// Result of the scattering construction.
#[derive(Clone, Debug)]
pub struct Scattering {
    pub covariances: Covariances,
    /// Trace of U(0,t)c^{+,vac}U(t,0).
    pub vacuum_trace: ConvergenceTrace,
    /// Trace of U(0,t)c^+_ref(t)U(t,0), which has the same limit.
    pub frame_trace: ConvergenceTrace,
    /// (|t|, ‖U(0,t)c^{+,vac}U(t,0) − c⁺‖) against the returned limit c⁺.
    pub vacuum_gaps: Vec<(f64, f64)>,
    /// Decay of the vacuum gaps; None when they are all below the floor.
    pub gap_fit: Option<DecayFit>,
}

/// S = diag(⟨k⟩^{1/2}, ⟨k⟩^{-1/2}), mapping the charge space H^{1/2} ⊕ H^{-1/2} to L².
pub fn charge_scaling(basis: &ModeBasis) -> (Array1<f64>, Array1<f64>) {
    let jk = basis.japanese();
    let n = jk.len();
    let mut s = Array1::zeros(2 * n);
    for (i, &v) in jk.iter().enumerate() {
        s[i] = v.sqrt();
        s[n + i] = 1.0 / v.sqrt();
    }
    let si = s.mapv(|v| 1.0 / v);
    (s, si)
}

/// D_l A D_r for diagonal D_l, D_r.
fn scale(a: &CMat, left: &Array1<f64>, right: &Array1<f64>) -> CMat {
    let mut out = a.clone();
    for ((i, j), z) in out.indexed_iter_mut() {
        *z *= left[i] * right[j];
    }
    out
}

/// Operator norm on the charge space: ‖S A S^{-1}‖₂.
pub fn charge_norm(a: &CMat, basis: &ModeBasis) -> Result<f64> {
    let (s, si) = charge_scaling(basis);
    spectral_norm(&scale(a, &s, &si))
}

fn extrapolate(times: &[f64], seq: &[CMat], basis: &ModeBasis, floor: f64) -> Result<ConvergenceTrace> {
    let mut increments = Vec::with_capacity(seq.len() - 1);
    let mut values = Vec::with_capacity(seq.len() - 1);
    for j in 0..seq.len() - 1 {
        let d = charge_norm(&(&seq[j + 1] - &seq[j]), basis)?;
        increments.push(d);
        // increments per unit of ln t, at the geometric midpoint
        let (a, b) = (times[j].abs(), times[j + 1].abs());
        values.push(((a * b).sqrt(), d / (b / a).ln()));
    }
    let last = seq.last().unwrap().clone();
    if increments.iter().all(|&d| d <= floor) {
        return Ok(ConvergenceTrace { times: times.to_vec(), increments, fit: None, tail: 0.0, limit: last });
    }
    let lo = values.first().unwrap().0;
    let hi = values.last().unwrap().0;
    let fit = fit_time_decay(&values, (lo, hi))?;
    if !(fit.exponent > 0.05) {
        return Err(Error::NoConvergence { gamma: fit.exponent });
    }
    // c^t ≈ c^∞ + D|t|^{−γ}: sum the tail beyond the last sample
    let g = fit.exponent;
    let (ta, tb) = (times[times.len() - 2].abs(), times[times.len() - 1].abs());
    let tau = tb.powf(-g) / (ta.powf(-g) - tb.powf(-g));
    let delta = &seq[seq.len() - 1] - &seq[seq.len() - 2];
    let correction = delta.mapv(|z| z * tau);
    let tail = charge_norm(&correction, basis)?;
    Ok(ConvergenceTrace { times: times.to_vec(), increments, fit: Some(fit), tail, limit: &last + &correction })
}

/// In/out covariances at time 0 as the limit of U(0,t)c^{±,vac}U(t,0), t → ±∞.
///
/// Both the vacuum sequence and the frame sequence U(0,t)c^±_ref(t)U(t,0) are traced.
/// They share the limit, and the frame sequence converges faster because its derivative
/// only involves the smoothing remainder of the frame; its extrapolated limit is returned.
/// The vacuum sequence approaches it like |t|^{−δ} in norm but rotates as it does, so a
/// tail extrapolation of the vacuum sequence itself is not reliable.
pub fn scattering_covariances(
    red: &Reduction,
    end: End,
    samples: &Samples,
    opts: &ScatteringOptions,
) -> Result<Scattering> {
    samples.validate()?;
    let times = samples.times(end);
    let path = kg_path(red, 0.0, &times, &opts.evolution)?;
    let vac = vacuum_of(&red.asymptotic_node(end)?, 0.0)?;
    let mut vac_seq = Vec::with_capacity(times.len());
    let mut frame_seq = Vec::with_capacity(times.len());
    for &t in &times {
        let fwd = path.from_anchor(t)?;
        let back = inv(&fwd)?;
        let (j, ji) = end_to_model(red, t, end)?;
        vac_seq.push(back.dot(&j).dot(&vac.c_plus).dot(&ji).dot(&fwd));
        let lf = local_frame_extrapolated(red, t, opts.local_dt, opts.levels, &opts.riccati)?;
        let (cp, _) = lf.c_ref();
        frame_seq.push(back.dot(&cp).dot(&fwd));
    }
    let basis = &red.basis;
    let vacuum_trace = extrapolate(&times, &vac_seq, basis, opts.floor)?;
    let frame_trace = extrapolate(&times, &frame_seq, basis, opts.floor)?;
    let plus = frame_trace.limit.clone();
    let vacuum_gaps = times
        .iter()
        .zip(&vac_seq)
        .map(|(t, c)| Ok((t.abs(), charge_norm(&(c - &plus), basis)?)))
        .collect::<Result<Vec<_>>>()?;
    let gap_fit = if vacuum_gaps.iter().all(|g| g.1 <= opts.floor) {
        None
    } else {
        Some(fit_time_decay(&vacuum_gaps, (samples.start, samples.stop))?)
    };
    let minus = &eye(plus.nrows()) - &plus;
    let tag = match end {
        End::Future => StateTag::Out,
        End::Past => StateTag::In,
    };
    let covariances = Covariances::new(plus, minus, red.weight_at(0.0)?, tag, 0.0);
    Ok(Scattering { covariances, vacuum_trace, frame_trace, vacuum_gaps, gap_fit })
}

/// Residuals of the state conditions, in the charge norm.
#[derive(Clone, Debug, Serialize)]
pub struct StateReport {
    pub tag: StateTag,
    #[serde(serialize_with = "ser_f64")]
    pub complementarity: f64,
    #[serde(serialize_with = "ser_f64")]
    pub idempotency: f64,
    #[serde(serialize_with = "ser_f64")]
    pub min_eig_lambda_plus: f64,
    #[serde(serialize_with = "ser_f64")]
    pub min_eig_lambda_minus: f64,
    /// ‖λ^± − (λ^±)†‖ after charge scaling.
    #[serde(serialize_with = "ser_f64")]
    pub hermiticity: f64,
    #[serde(serialize_with = "ser_f64")]
    pub tolerance: f64,
    pub pass: bool,
}

pub const STRICT_TOL: f64 = 1e-8;
pub const LIMIT_TOL: f64 = 1e-6;

/// Complementarity, idempotency and positivity of λ^± on the charge space.
///
/// λ^± is a form on H^{1/2} ⊕ H^{-1/2}, so its eigenvalues are taken after
/// conjugation by S^{-1}; idempotency is measured in the operator norm of that space.
pub fn validate_state(c: &Covariances, basis: &ModeBasis) -> Result<StateReport> {
    let (s, si) = charge_scaling(basis);
    let n2 = c.c_plus.nrows();
    let id = eye(n2);
    let complementarity = spectral_norm(&scale(&(&(&c.c_plus + &c.c_minus) - &id), &s, &si))?;
    let idem = |m: &CMat| spectral_norm(&scale(&(&m.dot(m) - m), &s, &si));
    let idempotency = idem(&c.c_plus)?.max(idem(&c.c_minus)?);
    let lp = scale(&c.lambda_plus, &si, &si);
    let lm = scale(&c.lambda_minus, &si, &si);
    let herm = |m: &CMat| spectral_norm(&(m - &dagger(m)));
    let hermiticity = herm(&lp)?.max(herm(&lm)?);
    let min_eig_lambda_plus = min_eig_herm(&herm_part(&lp))?;
    let min_eig_lambda_minus = min_eig_herm(&herm_part(&lm))?;
    let tolerance = if c.tag.strict() { STRICT_TOL } else { LIMIT_TOL };
    let pass = complementarity <= tolerance
        && idempotency <= tolerance
        && hermiticity <= tolerance
        && min_eig_lambda_plus >= -tolerance
        && min_eig_lambda_minus >= -tolerance;
    Ok(StateReport {
        tag: c.tag,
        complementarity,
        idempotency,
        min_eig_lambda_plus,
        min_eig_lambda_minus,
        hermiticity,
        tolerance,
        pass,
    })
}

/// π₁^*g = (0, W_s^{-1}g).
fn inject(w_s: &Weight) -> CMat {
    let n = w_s.dim();
    let mut out = CMat::zeros((2 * n, n));
    out.slice_mut(s![n.., ..]).assign(&w_s.inv);
    out
}

/// G(t, s) = iπ₀U(t, s)π₁^*; G(s, t) = −G(t, s)†.
pub fn causal_propagator(path: &Path, t: f64, s: f64, w_s: &Weight) -> Result<CMat> {
    let u = path.between(t, s)?;
    let n = w_s.dim();
    Ok(u.slice(s![..n, ..]).dot(&inject(w_s)).mapv(|z| I * z))
}

/// Λ^±(t, s) = ∓π₀U(t, 0)c^∓U(0, s)π₁^* for covariances anchored at the path anchor.
///
/// With ∂_tU = iHU the range of c⁺ carries the time dependence e^{+iεt}, so the
/// positive-frequency kernel Λ⁺, whose single-mode vacuum value is e^{−iε(t−s)}/(2ε),
/// is built from c⁻.
pub fn two_point(c: &Covariances, path: &Path, t: f64, s: f64, w_s: &Weight) -> Result<(CMat, CMat)> {
    if (c.t_anchor - path.anchor).abs() > 1e-12 {
        return Err(Error::InvalidData("covariances are not anchored at the path anchor".into()));
    }
    let n = w_s.dim();
    let left = path.from_anchor(t)?;
    let right = path.to_anchor(s)?.dot(&inject(w_s));
    let left0 = left.slice(s![..n, ..]);
    let plus = left0.dot(&c.c_minus).dot(&right).mapv(|z| -z);
    let minus = left0.dot(&c.c_plus).dot(&right);
    Ok((plus, minus))
}

/// Smoothing classification of the blocks of c^±_state − c^±_ref.
#[derive(Clone, Debug, Serialize)]
pub struct HadamardReport {
    /// Blocks in the order (+,00), (+,01), (+,10), (+,11), (−,00), ...
    pub blocks: Vec<SmoothingReport>,
    #[serde(serialize_with = "ser_f64_vec")]
    pub p_per_block: Vec<f64>,
    pub window: (usize, usize),
    #[serde(serialize_with = "ser_f64")]
    pub p_threshold: f64,
    #[serde(serialize_with = "ser_f64")]
    pub norm: f64,
    pub pass: bool,
}

pub const P_THRESHOLD: f64 = 6.0;

/// Relative size below which a covariance difference counts as zero.
pub const ROUND_OFF: f64 = 1e-13;

/// Entry decay of every block of c^±_state − c^±_ref over the shell window.
pub fn hadamard_difference(
    state: &Covariances,
    reference: &Covariances,
    basis: &ModeBasis,
    window: (usize, usize),
    p_threshold: f64,
) -> Result<HadamardReport> {
    if (state.t_anchor - reference.t_anchor).abs() > 1e-12 {
        return Err(Error::InvalidData("covariances at different times".into()));
    }
    let mut blocks = Vec::with_capacity(8);
    let mut norm = 0.0f64;
    for (a, b) in [(&state.c_plus, &reference.c_plus), (&state.c_minus, &reference.c_minus)] {
        let mut d = a - b;
        // a difference at round-off level carries no decay information
        if max_abs(&d) <= ROUND_OFF * max_abs(b) {
            d.fill(C64::new(0.0, 0.0));
        }
        norm = norm.max(charge_norm(&d, basis)?);
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            blocks.push(smoothing_order(&block(&d, i, j), basis, 2, window, p_threshold)?);
        }
    }
    let p_per_block: Vec<f64> = blocks.iter().map(|b| b.fit.exponent).collect();
    let pass = blocks.iter().all(|b| b.fit.is_exact() || (b.fit.exponent >= p_threshold && b.fit.r_squared >= 0.9));
    Ok(HadamardReport { blocks, p_per_block, window, p_threshold, norm, pass })
}

/// Vacuum covariances from the asymptotic frame: Z_out π^± Z_out^{-1} without the flow.
pub fn vacuum_from_frame(a_out: &CMat, w: &Weight, t_anchor: f64) -> Result<Covariances> {
    let (t, ti) = asymptotic_frame(a_out, w)?;
    let n = a_out.nrows();
    let plus = t.slice(s![.., ..n]).dot(&ti.slice(s![..n, ..]));
    let minus = t.slice(s![.., n..]).dot(&ti.slice(s![n.., ..]));
    Ok(Covariances::new(plus, minus, w.clone(), StateTag::Vac, t_anchor))
}
