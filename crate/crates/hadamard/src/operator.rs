//! Functional calculus of weighted self-adjoint operators and smoothing diagnostics.

use std::f64::consts::PI;

use serde::Serialize;

use crate::basis::{entry_decay_fit, fit_time_decay_or_exact, DecayFit, ModeBasis, OpFamily, OpMatrix};
use crate::error::{Error, Result};
use crate::linalg::{cr, dagger, eye, fro, herm_part, inv, spectral_norm, Weight};
use crate::report::{ser_f64, ser_f64_vec};

/// Default lower bound on the spectrum accepted by the power routines.
pub const DEFAULT_FLOOR: f64 = 1e-10;
/// Non-self-adjointness tolerated before refusing to take powers.
pub const SELF_ADJOINT_TOL: f64 = 1e-8;
/// Default entry-decay exponent above which an operator counts as smoothing.
pub const P_THRESHOLD: f64 = 6.0;

fn checked_spectrum(a: &OpMatrix, w: &Weight, floor: f64) -> Result<(ndarray::Array1<f64>, OpMatrix)> {
    let residual = w.self_adjoint_residual(a);
    if residual > SELF_ADJOINT_TOL {
        return Err(Error::NotSelfAdjoint { residual });
    }
    let (vals, vecs) = w.eigh(a)?;
    if vals[0] < floor {
        return Err(Error::NotPositive { eigenvalue: vals[0], floor });
    }
    Ok((vals, vecs))
}

/// a^α for a ⪰ floor, self-adjoint with respect to W, by eigendecomposition.
pub fn power_op(a: &OpMatrix, w: &Weight, alpha: f64, floor: f64) -> Result<OpMatrix> {
    let (vals, vecs) = checked_spectrum(a, w, floor)?;
    Ok(w.from_flat(&crate::linalg::from_spectrum(&vals, &vecs, |x| cr(x.powf(alpha)))))
}

/// ε = a^{1/2}.
pub fn sqrt_op(a: &OpMatrix, w: &Weight) -> Result<OpMatrix> {
    power_op(a, w, 0.5, DEFAULT_FLOOR)
}

/// (a^{1/2}, a^{-1/2}) from one decomposition.
pub fn sqrt_and_inverse(a: &OpMatrix, w: &Weight, floor: f64) -> Result<(OpMatrix, OpMatrix)> {
    let (vals, vecs) = checked_spectrum(a, w, floor)?;
    let s = crate::linalg::from_spectrum(&vals, &vecs, |x| cr(x.sqrt()));
    let si = crate::linalg::from_spectrum(&vals, &vecs, |x| cr(1.0 / x.sqrt()));
    Ok((w.from_flat(&s), w.from_flat(&si)))
}

/// Gauss-Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Lower spectral bound by Gershgorin discs of the flat Hermitian representative,
/// falling back to a trace scale when the discs reach zero.
fn spectral_scale(a: &OpMatrix, w: &Weight) -> f64 {
    let flat = herm_part(&w.to_flat(a));
    let n = flat.nrows();
    let mut lo = f64::INFINITY;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| flat[[i, j]].norm()).sum();
        lo = lo.min(flat[[i, i]].re - off);
    }
    if lo > 0.0 {
        lo
    } else {
        let tr: f64 = (0..n).map(|i| flat[[i, i]].re).sum::<f64>() / n as f64;
        (1e-2 * tr).max(1e-300)
    }
}

/// a^α = (sin πα/π) ∫₀^∞ s^{α−1}(a + s)^{−1} a ds by Gauss-Legendre quadrature in
/// u ∈ (0, 1) with s = m²(u/(1−u))^σ, σ = 1/min(α, 1−α), which makes the integrand
/// regular at both ends.
pub fn frac_power_quadrature(a: &OpMatrix, w: &Weight, alpha: f64, n_quad: usize) -> Result<OpMatrix> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidData(format!("exponent {alpha} outside (0, 1)")));
    }
    if n_quad < 2 {
        return Err(Error::InvalidData("quadrature needs at least two nodes".into()));
    }
    let m2 = spectral_scale(a, w);
    let sigma = 1.0 / alpha.min(1.0 - alpha);
    let (xs, ws) = gauss_legendre(n_quad);
    let n = a.nrows();
    let id = eye(n);
    let mut acc = OpMatrix::zeros((n, n));
    for (x, wq) in xs.iter().zip(ws) {
        let u = 0.5 * (x + 1.0);
        let ratio = u / (1.0 - u);
        let s = m2 * ratio.powf(sigma);
        let ds = m2 * sigma * ratio.powf(sigma - 1.0) / ((1.0 - u) * (1.0 - u));
        let weight = 0.5 * wq * s.powf(alpha - 1.0) * ds;
        let shifted = a + &(&id * cr(s));
        let res = inv(&shifted).map_err(|_| Error::SingularResolvent { shift: s })?;
        acc.scaled_add(cr(weight), &res);
    }
    Ok(acc.dot(a) * cr((PI * alpha).sin() / PI))
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothingReport {
    /// ‖D^m A D^m‖₂ for m = 0..=m_max with D = ⟨k⟩.
    #[serde(serialize_with = "ser_f64_vec")]
    pub amplified: Vec<f64>,
    pub fit: DecayFit,
    #[serde(serialize_with = "ser_f64")]
    pub threshold: f64,
    pub smoothing: bool,
}

/// Amplified norms and entry-decay classification of A over the shell window.
pub fn smoothing_order(
    a: &OpMatrix,
    basis: &ModeBasis,
    m_max: usize,
    window: (usize, usize),
    threshold: f64,
) -> Result<SmoothingReport> {
    let mut amplified = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let d = basis.sobolev_weight(m as f64);
        amplified.push(spectral_norm(&d.dot(a).dot(&d))?);
    }
    let fit = entry_decay_fit(a, window)?;
    let smoothing = fit.exponent >= threshold && fit.r_squared >= 0.9;
    Ok(SmoothingReport { amplified, fit, threshold, smoothing })
}

/// Fits the time decay of ‖a₁(t)^α − a₂^α‖ over |t| in the window.
pub fn power_difference_decay(
    a1: &OpFamily,
    weights: &[Weight],
    a2: &OpMatrix,
    w2: &Weight,
    alpha: f64,
    window: (f64, f64),
) -> Result<DecayFit> {
    let p2 = power_op(a2, w2, alpha, DEFAULT_FLOOR)?;
    let mut values = Vec::new();
    for i in 0..a1.len() {
        let t = a1.grid.node(i);
        if t.abs() < window.0 - 1e-12 || t.abs() > window.1 + 1e-12 {
            continue;
        }
        let p1 = power_op(&a1.mats[i], &weights[i], alpha, DEFAULT_FLOOR)?;
        values.push((t, fro(&(&p1 - &p2))));
    }
    fit_time_decay_or_exact(&values, window, 1e-12 * fro(&p2))
}

/// ‖A − A*‖ in the flat sense, used for diagnostics.
pub fn hermitian_defect(a: &OpMatrix) -> f64 {
    fro(&(a - &dagger(a)))
}
