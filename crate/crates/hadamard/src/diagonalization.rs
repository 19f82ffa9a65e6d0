//! The frame T(t) conjugating the Cauchy evolution to an almost diagonal one, and the
//! generators H^ad(t) = T^{-1}HT + iT^{-1}∂_tT, its diagonal part H^d(t) and the
//! off-diagonal remainder V^ad(t).

use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::basis::{ModeBasis, OpFamily, TimeGrid, TRIM};
use crate::error::{Error, Result};
use crate::geometry::{reduce_to_model, ModelCoefficients, Reduction};
use crate::linalg::{assemble, block, block_diag, cr, eye, fro, q_ad, q_form, zeros, CMat, Weight, C64, I};
use crate::operator::sqrt_and_inverse;
use crate::riccati::{solve_riccati, RiccatiOptions, RiccatiSolution};

/// Floor on the spectrum of b⁺ − b⁻ accepted when taking its square roots.
const GAP_SQRT_FLOOR: f64 = 1e-12;

/// Frame and generators on the model grid.
#[derive(Clone, Debug)]
pub struct DiagFrame {
    pub basis: ModeBasis,
    pub grid: TimeGrid,
    pub weights: Vec<Weight>,
    pub t: OpFamily,
    pub t_inv: OpFamily,
    pub h_ad: OpFamily,
    pub h_d: OpFamily,
    pub v_ad: OpFamily,
    /// r(t), kept for the weighted symmetry check of H^d.
    pub r: OpFamily,
    pub eps_plus: OpFamily,
    pub eps_minus: OpFamily,
    pub r_b_plus: OpFamily,
    pub r_b_minus: OpFamily,
}

/// T = i^{-1}[[1, −1], [b⁺, −b⁻]]X^{-1/2} and T^{-1} = iX^{-1/2}[[−b⁻, 1], [−b⁺, 1]],
/// X = b⁺ − b⁻, with X^{±1/2} in the W-weighted calculus.
pub fn frame_operators(bp: &CMat, bm: &CMat, w: &Weight) -> Result<(CMat, CMat)> {
    let (g, _, _) = gap_powers(bp, bm, w)?;
    Ok(frame_from_g(bp, bm, &g))
}

/// (X^{-1/2}, X^{1/2}, X).
fn gap_powers(bp: &CMat, bm: &CMat, w: &Weight) -> Result<(CMat, CMat, CMat)> {
    let x = bp - bm;
    let (xh, g) = sqrt_and_inverse(&(&x + &w.adjoint(&x)).mapv(|z| z * 0.5), w, GAP_SQRT_FLOOR)?;
    Ok((g, xh, x))
}

/// T and T^{-1} for a given g, which should equal (b⁺ − b⁻)^{-1/2}.
pub fn frame_from_g(bp: &CMat, bm: &CMat, g: &CMat) -> (CMat, CMat) {
    let mi = C64::new(0.0, -1.0);
    let t = assemble(&g.mapv(|z| mi * z), &g.mapv(|z| -mi * z), &bp.dot(g).mapv(|z| mi * z), &bm.dot(g).mapv(|z| -mi * z));
    let t_inv = assemble(&g.dot(bm).mapv(|z| -I * z), &g.mapv(|z| I * z), &g.dot(bp).mapv(|z| -I * z), &g.mapv(|z| I * z));
    (t, t_inv)
}

/// Reference covariances c^±_ref = Tπ^±T^{-1} from the explicit block formula
/// c^± = [[∓X^{-1}b^∓, ±X^{-1}], [∓b⁺X^{-1}b⁻, ±b^±X^{-1}]].
pub fn c_ref_blocks(bp: &CMat, bm: &CMat, x_inv: &CMat) -> (CMat, CMat) {
    let plus = assemble(&(-x_inv.dot(bm)), x_inv, &(-bp.dot(x_inv).dot(bm)), &bp.dot(x_inv));
    let minus = assemble(&x_inv.dot(bp), &(-x_inv), &bp.dot(x_inv).dot(bm), &(-bm.dot(x_inv)));
    (plus, minus)
}

/// The model generator H = [[0, I], [a, ir]].
pub fn model_generator(a: &CMat, r: &CMat) -> CMat {
    let n = a.nrows();
    assemble(&zeros(n), &eye(n), a, &r.mapv(|z| I * z))
}

/// Builds T, T^{-1}, H^ad, H^d = diag(ε⁺, ε⁻), V^ad and r_b^± on the model grid.
pub fn build_frame(sol: &RiccatiSolution, model: &ModelCoefficients) -> Result<DiagFrame> {
    let grid = model.grid;
    let nn = grid.n_nodes;
    let mut gs = Vec::with_capacity(nn);
    let mut xhs = Vec::with_capacity(nn);
    let mut ts = Vec::with_capacity(nn);
    let mut tis = Vec::with_capacity(nn);
    for i in 0..nn {
        let (bp, bm) = (&sol.b_plus.mats[i], &sol.b_minus.mats[i]);
        let (g, xh, _) = gap_powers(bp, bm, &model.weights[i])?;
        let (t, ti) = frame_from_g(bp, bm, &g);
        gs.push(g);
        xhs.push(xh);
        ts.push(t);
        tis.push(ti);
    }
    let t = OpFamily::new(grid, ts)?;
    let t_inv = OpFamily::new(grid, tis)?;
    let g = OpFamily::new(grid, gs)?;
    let dt = t.derivative();
    let dg = g.derivative();
    let mut h_ad = Vec::with_capacity(nn);
    let mut h_d = Vec::with_capacity(nn);
    let mut v_ad = Vec::with_capacity(nn);
    let mut eps_plus = Vec::with_capacity(nn);
    let mut eps_minus = Vec::with_capacity(nn);
    let mut r_b_plus = Vec::with_capacity(nn);
    let mut r_b_minus = Vec::with_capacity(nn);
    for i in 0..nn {
        let h = model_generator(&model.a.mats[i], &model.r.mats[i]);
        let inner = h.dot(&t.mats[i]) + dt.mats[i].mapv(|z| I * z);
        let had = t_inv.mats[i].dot(&inner);
        let ep = block(&had, 0, 0);
        let em = block(&had, 1, 1);
        let hd = block_diag(&ep, &em);
        v_ad.push(&had - &hd);
        h_ad.push(had);
        h_d.push(hd);
        eps_plus.push(ep);
        eps_minus.push(em);
        let ir = model.r.mats[i].mapv(|z| I * z);
        let tail = dg.mats[i].dot(&xhs[i]).mapv(|z| I * z);
        let rb = |b: &CMat| &ir + &(g.mats[i].dot(b) - b.dot(&g.mats[i])) - &tail;
        r_b_plus.push(rb(&sol.b_plus.mats[i]));
        r_b_minus.push(rb(&sol.b_minus.mats[i]));
    }
    Ok(DiagFrame {
        basis: model.basis.clone(),
        grid,
        weights: model.weights.clone(),
        t,
        t_inv,
        h_ad: OpFamily::new(grid, h_ad)?,
        h_d: OpFamily::new(grid, h_d)?,
        v_ad: OpFamily::new(grid, v_ad)?,
        r: model.r.clone(),
        eps_plus: OpFamily::new(grid, eps_plus)?,
        eps_minus: OpFamily::new(grid, eps_minus)?,
        r_b_plus: OpFamily::new(grid, r_b_plus)?,
        r_b_minus: OpFamily::new(grid, r_b_minus)?,
    })
}

impl DiagFrame {
    /// c^±_ref(t_i) = T π^± T^{-1}.
    pub fn c_ref(&self, i: usize) -> (CMat, CMat) {
        let n = self.basis.n;
        let t = &self.t.mats[i];
        let ti = &self.t_inv.mats[i];
        let plus = t.slice(s![.., ..n]).dot(&ti.slice(s![..n, ..]));
        let minus = t.slice(s![.., n..]).dot(&ti.slice(s![n.., ..]));
        (plus, minus)
    }

    /// max over nodes of ‖T^{-1}T − I‖.
    pub fn inverse_defect(&self) -> f64 {
        let id = eye(2 * self.basis.n);
        self.t
            .mats
            .iter()
            .zip(&self.t_inv.mats)
            .map(|(t, ti)| fro(&(ti.dot(t) - &id)))
            .fold(0.0, f64::max)
    }

    /// max over trimmed nodes of ‖(H^d)* q^ad − q^ad H^d + i(r ⊕ r)q^ad‖ relative to ‖H^d‖.
    ///
    /// The adjoint is taken in the W(t)⊕W(t) pairing, which moves with t; conservation of
    /// T*qT = q^ad along the evolution then forces the r-term, since W^{-1}∂_tW = r.
    pub fn hd_symmetry_defect(&self) -> f64 {
        let qa = q_ad(self.basis.n);
        self.grid
            .trimmed()
            .map(|i| {
                let (h, w) = (&self.h_d.mats[i], &self.weights[i]);
                let r = &self.r.mats[i];
                let ir = block_diag(r, r).mapv(|z| I * z);
                fro(&(w.doubled().adjoint(h).dot(&qa) - qa.dot(h) + ir.dot(&qa))) / fro(h)
            })
            .fold(0.0, f64::max)
    }
}

/// max over nodes of ‖T*qT − q^ad‖ with * the W⊕W-weighted adjoint.
pub fn check_symplectic_frame(t: &OpFamily, weights: &[Weight]) -> f64 {
    let n = t.mats[0].nrows() / 2;
    let (q, qa) = (q_form(n), q_ad(n));
    t.mats
        .iter()
        .zip(weights)
        .map(|(tm, w)| fro(&(w.doubled().adjoint(tm).dot(&q).dot(tm) - &qa)))
        .fold(0.0, f64::max)
}

/// Single-node version of `check_symplectic_frame`.
pub fn symplectic_frame_residual(t: &CMat, w: &Weight) -> f64 {
    let n = t.nrows() / 2;
    fro(&(w.doubled().adjoint(t).dot(&q_form(n)).dot(t) - &q_ad(n)))
}

#[derive(Clone, Debug, Serialize)]
pub struct FactorizationReport {
    pub probes: usize,
    /// max relative discrepancy of (∂_t + ib^± + r)(∂_t − ib^±)φ vs (∂_t² + r∂_t + a − r^±)φ,
    /// with ∂_t(b^±φ) expanded by the product rule using the grid derivative of b^±.
    pub plus: f64,
    pub minus: f64,
    /// Same comparison with ψ = (∂_t − ib^±)φ differentiated by the grid stencil.
    pub plus_fd: f64,
    pub minus_fd: f64,
}

/// Applies both sides of the factorization identity to random band-limited test functions
/// φ(t) = v cos ωt + w sin ωt.
pub fn check_factorization(
    sol: &RiccatiSolution,
    model: &ModelCoefficients,
    probes: usize,
    seed: u64,
) -> Result<FactorizationReport> {
    if probes == 0 {
        return Err(Error::InvalidData("at least one probe is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jp = model.basis.japanese();
    let grid = model.grid;
    let norm = |v: &ndarray::Array1<C64>| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let derivs = [sol.b_plus.derivative(), sol.b_minus.derivative()];
    let mut worst = [0.0f64; 4];
    for _ in 0..probes {
        let omega = rng.random_range(0.5..1.5);
        let mut rnd = || {
            ndarray::Array1::from_iter(
                jp.iter().map(|j| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * j.powi(-3)),
            )
        };
        let (v, w) = (rnd(), rnd());
        let phi = |t: f64, d: i32| -> ndarray::Array1<C64> {
            let (c, s) = ((omega * t).cos(), (omega * t).sin());
            let o = omega.powi(d);
            match d.rem_euclid(4) {
                0 => (&v * cr(c) + &w * cr(s)) * cr(o),
                1 => (&w * cr(c) - &v * cr(s)) * cr(o),
                2 => (&v * cr(-c) - &w * cr(s)) * cr(o),
                _ => (&v * cr(s) - &w * cr(c)) * cr(o),
            }
        };
        for (k, (b, res)) in [(&sol.b_plus, &sol.residual_plus), (&sol.b_minus, &sol.residual_minus)]
            .into_iter()
            .enumerate()
        {
            let psi = OpFamily::from_fn(grid, |i| {
                let t = grid.node(i);
                let col = phi(t, 1) - b.mats[i].dot(&phi(t, 0)).mapv(|z| I * z);
                col.insert_axis(ndarray::Axis(1))
            });
            let dpsi_fd = psi.derivative();
            for i in grid.trimmed() {
                let t = grid.node(i);
                let (f0, f1, f2) = (phi(t, 0), phi(t, 1), phi(t, 2));
                let bm = &b.mats[i];
                let p = psi.mats[i].column(0).to_owned();
                let dpsi = &f2 - &(derivs[k].mats[i].dot(&f0) + bm.dot(&f1)).mapv(|z| I * z);
                let tail = bm.dot(&p).mapv(|z| I * z) + model.r.mats[i].dot(&p);
                let rhs = &f2 + &model.r.mats[i].dot(&f1) + model.a.mats[i].dot(&f0) - res.mats[i].dot(&f0);
                let scale = norm(&f2) + norm(&model.a.mats[i].dot(&f0));
                worst[k] = worst[k].max(norm(&(&dpsi + &tail - &rhs)) / scale);
                let fd = dpsi_fd.mats[i].column(0).to_owned();
                worst[k + 2] = worst[k + 2].max(norm(&(&fd + &tail - &rhs)) / scale);
            }
        }
    }
    Ok(FactorizationReport { probes, plus: worst[0], minus: worst[1], plus_fd: worst[2], minus_fd: worst[3] })
}

/// Frame data at a single time from a short local grid centred on it.
#[derive(Clone, Debug)]
pub struct LocalFrame {
    pub t: f64,
    pub weight: Weight,
    pub b_plus: CMat,
    pub b_minus: CMat,
    pub eps: CMat,
    pub frame: CMat,
    pub frame_inv: CMat,
}

impl LocalFrame {
    pub fn c_ref(&self) -> (CMat, CMat) {
        let n = self.b_plus.nrows();
        let plus = self.frame.slice(s![.., ..n]).dot(&self.frame_inv.slice(s![..n, ..]));
        let minus = self.frame.slice(s![.., n..]).dot(&self.frame_inv.slice(s![n.., ..]));
        (plus, minus)
    }
}

/// Half-width in nodes of the local grid: every derivative level widens the region
/// touched by one-sided end stencils by two nodes.
pub fn local_half_width(n_max: usize) -> usize {
    2 * (n_max + 2) + TRIM
}

/// Riccati solution and frame at time t from a local grid of spacing dt.
pub fn local_frame(red: &Reduction, t: f64, dt: f64, opts: &RiccatiOptions) -> Result<LocalFrame> {
    let m = local_half_width(opts.n_max);
    let grid = TimeGrid::new(t - m as f64 * dt, t + m as f64 * dt, 2 * m + 1)?;
    let model = reduce_to_model(red, &grid)?;
    let sol = solve_riccati(&model, opts)?;
    let w = model.weights[m].clone();
    let (bp, bm) = (sol.b_plus.mats[m].clone(), sol.b_minus.mats[m].clone());
    let (frame, frame_inv) = frame_operators(&bp, &bm, &w)?;
    Ok(LocalFrame { t, weight: w, eps: sol.eps.mats[m].clone(), b_plus: bp, b_minus: bm, frame, frame_inv })
}

/// Local frame whose b^± are Richardson-extrapolated over the spacings dt, dt/2, ...,
/// dt/2^{levels−1}, removing the dt⁴, dt⁶, ... terms of the stencil error. The frame is
/// rebuilt from the extrapolated b^±, so c_ref stays an exact pair of projections.
pub fn local_frame_extrapolated(red: &Reduction, t: f64, dt: f64, levels: usize, opts: &RiccatiOptions) -> Result<LocalFrame> {
    if levels == 0 {
        return Err(Error::InvalidConfig("at least one extrapolation level is needed".into()));
    }
    let frames: Vec<LocalFrame> =
        (0..levels).map(|j| local_frame(red, t, dt / 2f64.powi(j as i32), opts)).collect::<Result<_>>()?;
    if levels == 1 {
        return Ok(frames.into_iter().next().unwrap());
    }
    let mut table: Vec<(CMat, CMat)> = frames.iter().map(|f| (f.b_plus.clone(), f.b_minus.clone())).collect();
    for (step, order) in (1..levels).zip((4..).step_by(2)) {
        let f = 2f64.powi(order);
        table = (0..levels - step)
            .map(|j| {
                let comb = |coarse: &CMat, fine: &CMat| (fine * f - coarse) / (f - 1.0);
                (comb(&table[j].0, &table[j + 1].0), comb(&table[j].1, &table[j + 1].1))
            })
            .collect();
    }
    let (bp, bm) = table.remove(0);
    let finest = frames.last().unwrap();
    let (frame, frame_inv) = frame_operators(&bp, &bm, &finest.weight)?;
    Ok(LocalFrame { t, weight: finest.weight.clone(), eps: finest.eps.clone(), b_plus: bp, b_minus: bm, frame, frame_inv })
}

/// The asymptotic frame T_out/in = (i√2)^{-1}[[ε^{-1/2}, −ε^{-1/2}], [ε^{1/2}, ε^{1/2}]].
pub fn asymptotic_frame(a: &CMat, w: &Weight) -> Result<(CMat, CMat)> {
    let e = w.func(a, |x| cr(x.sqrt()))?;
    let ehalf = w.func(a, |x| cr(x.powf(0.25)))?;
    let emhalf = w.func(a, |x| cr(x.powf(-0.25)))?;
    let k = C64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2);
    let t = assemble(&(&emhalf * k), &(&emhalf * (-k)), &(&ehalf * k), &(&ehalf * k));
    let bm = -&e;
    frame_operators(&e, &bm, w).map(|(_, ti)| (t, ti))
}
