use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::report::ser_f64;

/// Power-law exponents above this are reported as super-polynomial.
pub const P_MAX: f64 = 24.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    PowerLaw,
    /// Exponential decay fits the data better than any power law.
    SuperPolynomial,
    /// All samples vanish to the stated floor.
    Exact,
}

/// Least-squares decay fit g ≈ C·x^{−γ} in log-log coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    #[serde(serialize_with = "ser_f64")]
    pub exponent: f64,
    #[serde(serialize_with = "ser_f64")]
    pub prefactor: f64,
    #[serde(serialize_with = "ser_f64")]
    pub r_squared: f64,
    /// Slope of the power-law fit even when another model was selected.
    #[serde(serialize_with = "ser_f64")]
    pub power_exponent: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub model: FitModel,
}

impl DecayFit {
    pub fn exact(window: (f64, f64), samples: usize) -> Self {
        DecayFit {
            exponent: f64::INFINITY,
            prefactor: 0.0,
            r_squared: 1.0,
            power_exponent: f64::INFINITY,
            window,
            samples,
            model: FitModel::Exact,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.model == FitModel::Exact
    }
}

struct Line {
    slope: f64,
    intercept: f64,
    r2: f64,
}

fn linear_fit(x: &[f64], y: &[f64]) -> Line {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if ss_tot <= 1e-30 * (1.0 + my * my) * n {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Line { slope, intercept, r2 }
}

fn japanese(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

/// Fit g(t) ≈ C⟨t⟩^{−γ} over samples with t (or |t|) in the window.
pub fn fit_time_decay(values: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    let (lo, hi) = window;
    let picked: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .filter(|(t, _)| {
            let a = t.abs();
            a >= lo - 1e-12 && a <= hi + 1e-12
        })
        .collect();
    if picked.len() < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: picked.len() });
    }
    if let Some((t, g)) = picked.iter().find(|(_, g)| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::InvalidData(format!("non-positive value {g} at t = {t}")));
    }
    let x: Vec<f64> = picked.iter().map(|(t, _)| japanese(*t).ln()).collect();
    let y: Vec<f64> = picked.iter().map(|(_, g)| g.ln()).collect();
    let line = linear_fit(&x, &y);
    Ok(DecayFit {
        exponent: -line.slope,
        prefactor: line.intercept.exp(),
        r_squared: line.r2,
        power_exponent: -line.slope,
        window,
        samples: picked.len(),
        model: FitModel::PowerLaw,
    })
}

/// As `fit_time_decay`, but returns the exact sentinel when every windowed value is ≤ floor.
pub fn fit_time_decay_or_exact(
    values: &[(f64, f64)],
    window: (f64, f64),
    floor: f64,
) -> Result<DecayFit> {
    let picked: Vec<f64> = values
        .iter()
        .filter(|(t, _)| t.abs() >= window.0 - 1e-12 && t.abs() <= window.1 + 1e-12)
        .map(|(_, g)| *g)
        .collect();
    if picked.len() >= 4 && picked.iter().all(|g| g.abs() <= floor) {
        return Ok(DecayFit::exact(window, picked.len()));
    }
    fit_time_decay(values, window)
}

/// Default shell window [8, K/2], narrowed for small K but keeping four shells when K ≥ 8.
pub fn default_window(k: usize) -> (usize, usize) {
    let hi = (k / 2).max(1);
    ((hi / 2).clamp(1, 8).min(hi.saturating_sub(3)).max(1), hi)
}

/// Shell envelope e_ℓ = max |A_jk| over max(|j|, |k|) = ℓ for ℓ in the window.
pub fn shell_envelope(a: &CMat, window: (usize, usize)) -> Vec<(usize, f64)> {
    let n = a.nrows();
    let k = (n as i64 - 1) / 2;
    let (lo, hi) = window;
    let mut env = vec![0.0f64; hi + 1];
    for j in 0..n {
        for l in 0..n {
            let mj = (j as i64 - k).abs();
            let ml = (l as i64 - k).abs();
            let shell = mj.max(ml) as usize;
            if shell >= lo && shell <= hi {
                let v = a[[j, l]].norm();
                if v > env[shell] {
                    env[shell] = v;
                }
            }
        }
    }
    (lo..=hi).map(|s| (s, env[s])).collect()
}

/// Fit |A_jk| ≲ C⟨ℓ⟩^{−p} on the shells max(|j|,|k|) = ℓ ∈ window.
pub fn entry_decay_fit(a: &CMat, window: (usize, usize)) -> Result<DecayFit> {
    let n = a.nrows();
    let k = (n - 1) / 2;
    if window.0 > window.1 || window.1 > k {
        return Err(Error::InvalidData(format!(
            "shell window {:?} outside [0, {k}]",
            window
        )));
    }
    let win = (window.0 as f64, window.1 as f64);
    let shells: Vec<(usize, f64)> = shell_envelope(a, window)
        .into_iter()
        .filter(|(_, e)| *e > 0.0)
        .collect();
    if shells.is_empty() {
        return Ok(DecayFit::exact(win, 0));
    }
    if shells.len() < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: shells.len() });
    }
    let y: Vec<f64> = shells.iter().map(|(_, e)| e.ln()).collect();
    let xp: Vec<f64> = shells.iter().map(|(l, _)| japanese(*l as f64).ln()).collect();
    let xe: Vec<f64> = shells.iter().map(|(l, _)| *l as f64).collect();
    let pow = linear_fit(&xp, &y);
    let exp = linear_fit(&xe, &y);
    let p = -pow.slope;
    let super_poly = p > P_MAX || (exp.slope < 0.0 && exp.r2 >= 0.999 && exp.r2 > pow.r2);
    Ok(DecayFit {
        exponent: if super_poly { f64::INFINITY } else { p },
        prefactor: pow.intercept.exp(),
        r_squared: if super_poly { exp.r2 } else { pow.r2 },
        power_exponent: p,
        window: win,
        samples: shells.len(),
        model: if super_poly { FitModel::SuperPolynomial } else { FitModel::PowerLaw },
    })
}
