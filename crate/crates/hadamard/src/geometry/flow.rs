//! Flow of the shift vector field ẏ = b(t, y).

use ndarray::Array1;

use crate::basis::{fit_time_decay, ModeBasis, OpMatrix, TimeGrid};
use crate::error::{Error, Result};
use crate::evolution::rk::{Integrator, Method};
use crate::linalg::C64;

use super::family::{Coefficient, End};

/// Relative tolerance of flow integration.
pub const FLOW_RTOL: f64 = 1e-12;
const FLOW_ATOL: f64 = 1e-13;
const FLOW_DT: f64 = 0.05;

/// Flow samples on the fine spatial grid of a basis, stored as lifted positions
/// y(t, x) together with ∂_x y.
#[derive(Clone, Debug)]
pub struct ShiftFlow {
    pub l: f64,
    pub xs: Vec<f64>,
    pub times: Option<TimeGrid>,
    pub y: Vec<Array1<f64>>,
    pub yx: Vec<Array1<f64>>,
    pub y_out: Array1<f64>,
    pub yx_out: Array1<f64>,
    pub y_in: Array1<f64>,
    pub yx_in: Array1<f64>,
    /// Fitted decay exponents of sup_x |b(t, y(t, x))| at each end (∞ without shift).
    pub tail_rate: (f64, f64),
    b: Coefficient,
}

/// Right-hand side of the flow and its variational equation, state = (y, ∂_x y).
fn flow_rhs(b: &Coefficient, l: f64, t: f64, state: &Array1<f64>) -> Array1<f64> {
    let n = state.len() / 2;
    let mut out = Array1::zeros(2 * n);
    for i in 0..n {
        let (v, d) = b.eval_dx(t, state[i], l);
        out[i] = v;
        out[n + i] = d * state[n + i];
    }
    out
}

impl ShiftFlow {
    pub fn identity(basis: &ModeBasis, b: Coefficient) -> Self {
        let xs = basis.fine_grid();
        let x = Array1::from(xs.clone());
        let one = Array1::from_elem(xs.len(), 1.0);
        ShiftFlow {
            l: basis.l,
            xs,
            times: None,
            y: Vec::new(),
            yx: Vec::new(),
            y_out: x.clone(),
            yx_out: one.clone(),
            y_in: x,
            yx_in: one,
            tail_rate: (f64::INFINITY, f64::INFINITY),
            b,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.times.is_none()
    }

    fn initial_state(&self) -> Array1<f64> {
        let n = self.xs.len();
        let mut s = Array1::zeros(2 * n);
        for i in 0..n {
            s[i] = self.xs[i];
            s[n + i] = 1.0;
        }
        s
    }

    /// Integrate the flow from time 0 over `span` and to the asymptotic ends.
    pub fn compute(basis: &ModeBasis, b: &Coefficient, span: (f64, f64)) -> Result<Self> {
        if b.is_zero() {
            return Ok(Self::identity(basis, b.clone()));
        }
        b.vanishing_rate()?;
        let t_lo = span.0.min(0.0);
        let t_hi = span.1.max(0.0);
        let grid = TimeGrid::with_spacing(t_lo, t_hi, FLOW_DT)?;
        let mut flow = Self::identity(basis, b.clone());
        let n = flow.xs.len();
        let l = basis.l;
        let mut rhs = |t: f64, s: &Array1<f64>| flow_rhs(b, l, t, s);
        let method = Method::Adaptive { rtol: FLOW_RTOL, atol: FLOW_ATOL };
        let nodes = grid.nodes();
        let i0 = nodes.iter().position(|&t| t >= 0.0).unwrap_or(0);
        let mut states = vec![Array1::zeros(0); nodes.len()];
        let start = flow.initial_state();
        let forward: Vec<f64> = nodes[i0..].to_vec();
        let mut integ = Integrator::new(method)?;
        for (j, s) in integ.advance_through(&mut rhs, 0.0, start.clone(), &forward)?.into_iter().enumerate() {
            states[i0 + j] = s;
        }
        let backward: Vec<f64> = nodes[..i0].iter().rev().copied().collect();
        let mut integ = Integrator::new(method)?;
        for (j, s) in integ.advance_through(&mut rhs, 0.0, start.clone(), &backward)?.into_iter().enumerate() {
            states[i0 - 1 - j] = s;
        }
        flow.y = states.iter().map(|s| s.slice(ndarray::s![..n]).to_owned()).collect();
        flow.yx = states.iter().map(|s| s.slice(ndarray::s![n..]).to_owned()).collect();
        flow.times = Some(grid);

        let horizon = 4.0 * span.0.abs().max(span.1.abs()).max(1.0);
        let mut ends = Vec::new();
        for sign in [1.0, -1.0] {
            let t_end = sign * horizon;
            let samples: Vec<f64> = (1..=24).map(|j| sign * horizon * (0.25 + 0.75 * j as f64 / 24.0)).collect();
            let mut integ = Integrator::new(method)?;
            let states = integ.advance_through(&mut rhs, 0.0, start.clone(), &samples)?;
            let decay: Vec<(f64, f64)> = samples
                .iter()
                .zip(&states)
                .map(|(&t, s)| {
                    let v = flow_rhs(b, l, t, s);
                    (t, v.iter().take(n).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300))
                })
                .collect();
            let fit = fit_time_decay(&decay, (0.25 * horizon, horizon))?;
            let rate = fit.exponent;
            if !(rate > 1.0) {
                return Err(Error::IntegrationFailure(format!(
                    "shift decays too slowly for an asymptotic flow map (fitted rate {rate:.3})"
                )));
            }
            let last = states.last().expect("non-empty samples");
            let v = flow_rhs(b, l, t_end, last);
            let factor = super::family::jp(t_end) / (rate - 1.0) * sign;
            let mut y = last.slice(ndarray::s![..n]).to_owned();
            let mut yx = last.slice(ndarray::s![n..]).to_owned();
            for i in 0..n {
                y[i] += v[i] * factor;
                yx[i] += v[n + i] * factor;
            }
            ends.push((y, yx, rate));
        }
        let (y_in, yx_in, r_in) = ends.pop().expect("two ends");
        let (y_out, yx_out, r_out) = ends.pop().expect("two ends");
        flow.y_out = y_out;
        flow.yx_out = yx_out;
        flow.y_in = y_in;
        flow.yx_in = yx_in;
        flow.tail_rate = (r_in, r_out);
        Ok(flow)
    }

    /// (y(t, ·), ∂_x y(t, ·)) on the fine grid by cubic Hermite interpolation in t.
    pub fn at(&self, t: f64) -> Result<(Array1<f64>, Array1<f64>)> {
        let grid = match &self.times {
            None => {
                let n = self.xs.len();
                return Ok((Array1::from(self.xs.clone()), Array1::from_elem(n, 1.0)));
            }
            Some(g) => g,
        };
        if !grid.contains(t) {
            return Err(Error::InvalidData(format!(
                "time {t} outside the flow span [{}, {}]",
                grid.t_min, grid.t_max
            )));
        }
        let dt = grid.dt();
        let i = (((t - grid.t_min) / dt).floor() as usize).min(grid.n_nodes - 2);
        let (t0, t1) = (grid.node(i), grid.node(i + 1));
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let n = self.xs.len();
        let pack = |k: usize| {
            let mut st = Array1::zeros(2 * n);
            st.slice_mut(ndarray::s![..n]).assign(&self.y[k]);
            st.slice_mut(ndarray::s![n..]).assign(&self.yx[k]);
            st
        };
        let (s0, s1) = (pack(i), pack(i + 1));
        let d0 = flow_rhs(&self.b, self.l, t0, &s0);
        let d1 = flow_rhs(&self.b, self.l, t1, &s1);
        let st = &s0 * h00 + &(&d0 * (h10 * h)) + &(&s1 * h01) + &(&d1 * (h11 * h));
        Ok((st.slice(ndarray::s![..n]).to_owned(), st.slice(ndarray::s![n..]).to_owned()))
    }

    /// Asymptotic map at one end.
    pub fn asymptotic(&self, end: End) -> (Array1<f64>, Array1<f64>) {
        match end {
            End::Future => (self.y_out.clone(), self.yx_out.clone()),
            End::Past => (self.y_in.clone(), self.yx_in.clone()),
        }
    }

    /// Integrate the flow from time s to time t starting at the given points.
    pub fn transport(&self, t: f64, s: f64, xs: &[f64]) -> Result<Vec<f64>> {
        if self.is_identity() {
            return Ok(xs.to_vec());
        }
        let n = xs.len();
        let mut st = Array1::zeros(2 * n);
        for (i, &x) in xs.iter().enumerate() {
            st[i] = x;
            st[n + i] = 1.0;
        }
        let l = self.l;
        let b = &self.b;
        let mut rhs = |t: f64, s: &Array1<f64>| flow_rhs(b, l, t, s);
        let mut integ = Integrator::new(Method::Adaptive { rtol: FLOW_RTOL, atol: FLOW_ATOL })?;
        let out = integ.advance(&mut rhs, s, st, t)?;
        Ok(out.iter().take(n).copied().collect())
    }

    /// Inverse map x ↦ y(t, ·)^{-1}(x) by Newton iteration on the trigonometric
    /// interpolant of the displacement.
    pub fn inverse_at(&self, basis: &ModeBasis, t: f64, xs: &[f64]) -> Result<Vec<f64>> {
        let (y, yx) = self.at(t)?;
        invert_map(basis, &self.xs, &y, &yx, xs)
    }
}

/// Invert a lifted circle map given on the fine grid.
pub fn invert_map(
    basis: &ModeBasis,
    grid: &[f64],
    y: &Array1<f64>,
    yx: &Array1<f64>,
    targets: &[f64],
) -> Result<Vec<f64>> {
    let disp: Vec<C64> = grid.iter().zip(y.iter()).map(|(x, v)| C64::new(v - x, 0.0)).collect();
    let dd: Vec<C64> = yx.iter().map(|v| C64::new(v - 1.0, 0.0)).collect();
    let p = grid.len();
    let kmax = p / 2 - 1;
    let cd = fine_coefficients(&disp, kmax);
    let cdd = fine_coefficients(&dd, kmax);
    let l = basis.l;
    let eval = |c: &[C64], x: f64| -> f64 {
        let km = kmax as i64;
        let mut acc = 0.0;
        for (idx, ci) in c.iter().enumerate() {
            let m = idx as i64 - km;
            let ph = 2.0 * std::f64::consts::PI * m as f64 * x / l;
            acc += ci.re * ph.cos() - ci.im * ph.sin();
        }
        acc
    };
    targets
        .iter()
        .map(|&target| {
            let mut x = target - eval(&cd, target);
            for _ in 0..50 {
                let f = x + eval(&cd, x) - target;
                let fp = 1.0 + eval(&cdd, x);
                if fp <= 0.0 {
                    return Err(Error::InvalidGeometry("flow map is not monotone".into()));
                }
                let dx = f / fp;
                x -= dx;
                if dx.abs() < 1e-14 * (1.0 + x.abs()) {
                    return Ok(x);
                }
            }
            Err(Error::IntegrationFailure("inverse flow map did not converge".into()))
        })
        .collect()
}

fn fine_coefficients(samples: &[C64], kmax: usize) -> Vec<C64> {
    let p = samples.len();
    let mut buf = samples.to_vec();
    rustfft::FftPlanner::new().plan_fft_forward(p).process(&mut buf);
    let km = kmax as i64;
    (-km..=km).map(|m| buf[m.rem_euclid(p as i64) as usize] / p as f64).collect()
}

/// Matrix of u ↦ u∘y on Fourier coefficients, y given as a lifted map on the fine grid.
pub fn pullback_matrix(basis: &ModeBasis, y: &Array1<f64>) -> OpMatrix {
    let n = basis.n;
    let mut out = OpMatrix::zeros((n, n));
    for (col, m) in basis.modes().enumerate() {
        let k = basis.wavenumber(m);
        let samples: Vec<C64> = y.iter().map(|&v| C64::from_polar(1.0, k * v)).collect();
        let coeffs = basis.fine_to_modes(&samples);
        for (row, c) in coeffs.into_iter().enumerate() {
            out[[row, col]] = c;
        }
    }
    out
}
