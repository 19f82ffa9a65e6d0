//! Phase-space transport: Hamiltonian flows of ±(h̃^{xx}(t, x))^{1/2}|k| and Gaussian
//! wavepackets carried by the split evolutions U^±(t, s) = U(t, s)c^±(s).
//!
//! A phase-space point (x, k) is represented by a packet with carrier e^{−ik·x}: with
//! the time dependence e^{+iεt} of ran c⁺ this makes packets in ran c^± follow the flow
//! of the Hamiltonian ±|k|/w, where w = (h̃_{xx})^{1/2} is the model weight.

use std::f64::consts::PI;

use ndarray::Array1;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::basis::ModeBasis;
use crate::diagonalization::LocalFrame;
use crate::error::{Error, Result};
use crate::evolution::rk::{Integrator, Method};
use crate::evolution::{BlockOp, Path};
use crate::geometry::Reduction;
use crate::linalg::{C64, I};
use crate::report::ser_f64;
use crate::states::charge_scaling;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    #[serde(serialize_with = "ser_f64")]
    pub x: f64,
    #[serde(serialize_with = "ser_f64")]
    pub k: f64,
}

/// Signed distance a − b on the circle of length l, in [−l/2, l/2).
pub fn circle_offset(a: f64, b: f64, l: f64) -> f64 {
    (a - b + 0.5 * l).rem_euclid(l) - 0.5 * l
}

/// The weight w(t, ·) as a trigonometric interpolant of its fine-grid samples.
struct WeightField {
    coeffs: Vec<(f64, C64)>,
}

impl WeightField {
    fn at(red: &Reduction, t: f64) -> Result<Self> {
        let w = red.fields(t)?.w;
        let p = w.len();
        let mut buf: Vec<C64> = w.iter().map(|&v| C64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(p).process(&mut buf);
        let half = (p as i64 - 1) / 2;
        let l = red.basis.l;
        let coeffs = (-half..=half)
            .map(|m| (2.0 * PI * m as f64 / l, buf[m.rem_euclid(p as i64) as usize] / p as f64))
            .filter(|(_, c)| c.norm() > 1e-17)
            .collect();
        Ok(WeightField { coeffs })
    }

    /// (w, ∂_x w) at x.
    fn eval(&self, x: f64) -> (f64, f64) {
        let mut w = 0.0;
        let mut wx = 0.0;
        for &(k, c) in &self.coeffs {
            let e = C64::from_polar(1.0, k * x) * c;
            w += e.re;
            wx += (e * I * k).re;
        }
        (w, wx)
    }
}

const FLOW_RTOL: f64 = 1e-12;

/// Integrates ẋ = ∂_kH, k̇ = −∂_xH from time s to time t for H = ±|k|/w(t, x).
pub fn hamiltonian_flow(red: &Reduction, p0: PhasePoint, sign: Sign, t: f64, s: f64) -> Result<PhasePoint> {
    if p0.k == 0.0 {
        return Err(Error::InvalidData("flow needs a nonzero momentum".into()));
    }
    if t == s {
        return Ok(p0);
    }
    let sg = sign.value();
    let static_field = if red.spec.is_static() { Some(WeightField::at(red, s)?) } else { None };
    let mut failure = None;
    let mut rhs = |tau: f64, y: &Array1<f64>| -> Array1<f64> {
        if let Some(f) = &static_field {
            return derivative(f, y, sg);
        }
        match WeightField::at(red, tau) {
            Ok(f) => derivative(&f, y, sg),
            Err(e) => {
                failure.get_or_insert(e);
                Array1::zeros(2)
            }
        }
    };
    let mut integ = Integrator::new(Method::Adaptive { rtol: FLOW_RTOL, atol: 1e-2 * FLOW_RTOL })?;
    let out = integ.advance(&mut rhs, s, Array1::from(vec![p0.x, p0.k]), t)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(PhasePoint { x: out[0].rem_euclid(red.basis.l), k: out[1] })
}

fn derivative(f: &WeightField, y: &Array1<f64>, sg: f64) -> Array1<f64> {
    let (w, wx) = f.eval(y[0]);
    let k = y[1];
    Array1::from(vec![sg * k.signum() / w, sg * k.abs() * wx / (w * w)])
}

/// Gaussian packet in ran c^±(t_launch), normalized in the charge norm.
#[derive(Clone, Debug, Serialize)]
pub struct Wavepacket {
    pub center: PhasePoint,
    #[serde(serialize_with = "ser_f64")]
    pub sigma: f64,
    pub sign: Sign,
    #[serde(serialize_with = "ser_f64")]
    pub t_launch: f64,
    #[serde(skip)]
    pub datum: Array1<C64>,
    /// ‖c^∓(u, ±εu)‖/‖(u, ±εu)‖ for the unprojected datum.
    #[serde(serialize_with = "ser_f64")]
    pub leakage: f64,
    /// Fraction of |û|² in modes |m| > K/2.
    #[serde(serialize_with = "ser_f64")]
    pub out_of_band: f64,
}

pub const MAX_LEAKAGE: f64 = 0.2;
pub const MAX_OUT_OF_BAND: f64 = 1e-6;

/// Fourier coefficients of the periodized Gaussian exp(−(x−x₀)²/2σ²)e^{−ik₀x}.
pub fn gaussian_coefficients(basis: &ModeBasis, p0: PhasePoint, sigma: f64) -> Array1<C64> {
    let l = basis.l;
    basis
        .modes()
        .map(|m| {
            let xi = basis.wavenumber(m) + p0.k;
            let amp = sigma * (2.0 * PI).sqrt() / l * (-0.5 * sigma * sigma * xi * xi).exp();
            C64::from_polar(amp, -xi * p0.x)
        })
        .collect()
}

/// ‖Sψ‖ with S the charge scaling.
pub fn charge_norm_vec(psi: &Array1<C64>, basis: &ModeBasis) -> f64 {
    let (s, _) = charge_scaling(basis);
    psi.iter().zip(s.iter()).map(|(z, w)| (z * w).norm_sqr()).sum::<f64>().sqrt()
}

/// Builds (u, ±εu) from a Gaussian u with ε = a^{1/2} at the launch time and projects it
/// with c^±_ref of the local frame.
pub fn make_wavepacket(basis: &ModeBasis, p0: PhasePoint, sigma: f64, sign: Sign, lf: &LocalFrame) -> Result<Wavepacket> {
    let l = basis.l;
    let floor = 4.0 * l / basis.n as f64;
    if !(sigma >= floor && sigma <= l / 8.0) {
        return Err(Error::BadPacket(format!("width {sigma} outside [{floor:.4}, {:.4}]", l / 8.0)));
    }
    let k_min = 4.0 * 2.0 * PI / l;
    if !(p0.k.abs() >= k_min) {
        return Err(Error::BadPacket(format!("momentum {} below {k_min:.4}", p0.k)));
    }
    let u = gaussian_coefficients(basis, p0, sigma);
    let half = basis.k as i64 / 2;
    let total: f64 = u.iter().map(|z| z.norm_sqr()).sum();
    let outside: f64 = basis.modes().zip(u.iter()).filter(|(m, _)| m.abs() > half).map(|(_, z)| z.norm_sqr()).sum();
    let out_of_band = outside / total;
    if out_of_band > MAX_OUT_OF_BAND {
        return Err(Error::BadPacket(format!("{out_of_band:.3e} of the packet lies in modes above K/2")));
    }
    let n = basis.n;
    let eu = lf.eps.dot(&u).mapv(|z| z * sign.value());
    let mut raw = Array1::zeros(2 * n);
    raw.slice_mut(ndarray::s![..n]).assign(&u);
    raw.slice_mut(ndarray::s![n..]).assign(&eu);
    let (cp, cm) = lf.c_ref();
    let (keep, drop) = match sign {
        Sign::Plus => (cp, cm),
        Sign::Minus => (cm, cp),
    };
    let leakage = charge_norm_vec(&drop.dot(&raw), basis) / charge_norm_vec(&raw, basis);
    if leakage > MAX_LEAKAGE {
        return Err(Error::BadPacket(format!("leakage {leakage:.3} into the opposite component")));
    }
    let psi = keep.dot(&raw);
    let norm = charge_norm_vec(&psi, basis);
    Ok(Wavepacket { center: p0, sigma, sign, t_launch: lf.t, datum: psi.mapv(|z| z / norm), leakage, out_of_band })
}

/// Circular mean position, mean momentum and circular spread of the first component.
pub fn packet_moments(basis: &ModeBasis, psi: &Array1<C64>) -> (PhasePoint, f64) {
    let n = basis.n;
    let u = psi.slice(ndarray::s![..n]);
    let total: f64 = u.iter().map(|z| z.norm_sqr()).sum();
    // (1/L)∫|u|²e^{iκx}dx = Σ_m û_m conj(û_{m+1}), κ = 2π/L
    let mut z = C64::new(0.0, 0.0);
    for i in 0..n - 1 {
        z += u[i] * u[i + 1].conj();
    }
    let kappa = 2.0 * PI / basis.l;
    let x = (z.arg() / kappa).rem_euclid(basis.l);
    let r = (z.norm() / total).min(1.0);
    let spread = (-2.0 * r.ln()).max(0.0).sqrt() / kappa;
    let k = -basis.modes().zip(u.iter()).map(|(m, c)| basis.wavenumber(m) * c.norm_sqr()).sum::<f64>() / total;
    (PhasePoint { x, k }, spread)
}

#[derive(Clone, Debug, Serialize)]
pub struct PacketRow {
    #[serde(serialize_with = "ser_f64")]
    pub t: f64,
    #[serde(serialize_with = "ser_f64")]
    pub x_center: f64,
    #[serde(serialize_with = "ser_f64")]
    pub k_mean: f64,
    /// ‖c^∓_ref(t)ψ(t)‖ when a frame was supplied at t.
    pub leakage: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropagationReport {
    pub rows: Vec<PacketRow>,
    pub predicted: PhasePoint,
    pub observed: PhasePoint,
    pub flow_sign: Sign,
    #[serde(serialize_with = "ser_f64")]
    pub dx: f64,
    #[serde(serialize_with = "ser_f64")]
    pub dk: f64,
    #[serde(serialize_with = "ser_f64")]
    pub spread: f64,
    #[serde(serialize_with = "ser_f64")]
    pub dx_threshold: f64,
    #[serde(serialize_with = "ser_f64")]
    pub dk_threshold: f64,
    /// Largest center speed between consecutive rows.
    #[serde(serialize_with = "ser_f64")]
    pub max_speed: f64,
    /// max_x (h̃^{xx})^{1/2} over the launch time and the rows, plus 0.1.
    #[serde(serialize_with = "ser_f64")]
    pub speed_bound: f64,
    pub pass: bool,
}

/// Evolves the packet along the stored path (anchored at the launch time) and compares
/// its final center with the flow Φ^{flow_sign}. Since the datum lies in ran c^±(s),
/// U(t, s)ψ = U^±(t, s)ψ. `frames` supplies c_ref at some of the stops for leakage rows.
pub fn propagation_test(
    red: &Reduction,
    path: &Path,
    wp: &Wavepacket,
    flow_sign: Sign,
    stops: &[f64],
    frames: &[LocalFrame],
) -> Result<PropagationReport> {
    let basis = &red.basis;
    let s = wp.t_launch;
    if (path.anchor - s).abs() > 1e-12 {
        return Err(Error::InvalidData("path is not anchored at the launch time".into()));
    }
    let t_final = *stops.last().ok_or_else(|| Error::InvalidData("no stops".into()))?;
    let mut rows = Vec::with_capacity(stops.len() + 1);
    let inverse_weight_max = |t: f64| -> Result<f64> { Ok(red.fields(t)?.w.iter().map(|v| 1.0 / v).fold(0.0, f64::max)) };
    let mut speed_bound = inverse_weight_max(s)?;
    let mut last = (s, packet_moments(basis, &wp.datum).0);
    rows.push(PacketRow { t: s, x_center: last.1.x, k_mean: last.1.k, leakage: Some(wp.leakage) });
    let mut max_speed = 0.0f64;
    let mut final_state = (wp.center, 0.0);
    for &t in stops {
        let u: BlockOp = path.from_anchor(t)?;
        let psi = u.dot(&wp.datum);
        let (p, spread) = packet_moments(basis, &psi);
        let leakage = frames.iter().find(|f| (f.t - t).abs() < 1e-12).map(|f| {
            let (cp, cm) = f.c_ref();
            let drop = if wp.sign == Sign::Plus { cm } else { cp };
            charge_norm_vec(&drop.dot(&psi), basis)
        });
        speed_bound = speed_bound.max(inverse_weight_max(t)?);
        if t != last.0 {
            max_speed = max_speed.max(circle_offset(p.x, last.1.x, basis.l).abs() / (t - last.0).abs());
        }
        last = (t, p);
        rows.push(PacketRow { t, x_center: p.x, k_mean: p.k, leakage });
        final_state = (p, spread);
    }
    let predicted = hamiltonian_flow(red, wp.center, flow_sign, t_final, s)?;
    let (observed, spread) = final_state;
    let dx = circle_offset(observed.x, predicted.x, basis.l).abs();
    let dk = (observed.k - predicted.k).abs();
    let elapsed = (t_final - s).abs();
    let dx_threshold = (3.0 * wp.sigma).max(5.0 * elapsed * wp.sigma * wp.sigma / basis.l);
    let dk_threshold = 0.1 * wp.center.k.abs();
    let speed_bound = speed_bound + 0.1;
    Ok(PropagationReport {
        rows,
        predicted,
        observed,
        flow_sign,
        dx,
        dk,
        spread,
        dx_threshold,
        dk_threshold,
        max_speed,
        speed_bound,
        pass: dx <= dx_threshold && dk <= dk_threshold,
    })
}
