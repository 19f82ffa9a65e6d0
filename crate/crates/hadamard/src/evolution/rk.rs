//! Explicit Runge-Kutta integration for linear and nonlinear matrix ODEs.
//!
//! The adaptive scheme is Verner's efficient 9(8) pair; a classical RK4 with
//! fixed step serves as the reference method.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const STAGES: usize = 16;
const C: [f64; 16] = [0.0, 0.03571, 0.09906028091267415, 0.1485904213690112, 0.6134, 0.2327359473605627, 0.5538640526394373, 0.6555, 0.491625, 0.06858, 0.253, 0.6620641795412046, 0.8309, 0.8998, 1.0, 1.0];
const A: [[f64; 16]; 16] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.03571, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.03833735636677017, 0.13739763727944432, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0371476053422528, 0.0, 0.11144281602675842, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.674764429871505, 0.0, -9.982382134885293, 7.921017705013789, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.05242104050577351, 0.0, 0.0, 0.17969111891759532, 0.0006237879371938568, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.15924922236476322, 0.0, 0.0, -0.4298429877241087, 0.06665266542726088, 0.757805152571522, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.07283333333333333, 0.0, 0.0, 0.0, 0.0, 0.33593445906651037, 0.2467322076001563, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0729755859375, 0.0, 0.0, 0.0, 0.0, 0.33480097296993333, 0.11841582390506665, -0.0345673828125, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.049112136634520964, 0.0, 0.0, 0.0, 0.0, 0.03983857361308652, 0.10696752889393549, -0.021742591654586477, -0.10559564748695649, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.027079888186412805, 0.0, 0.0, 0.0, 0.0, 0.0333, -0.16455260700360572, 0.0342826630649739, 0.1585264064439221, 0.2185234256811225, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.055846577691088625, 0.0, 0.0, 0.0, 0.0, 0.09166533166672539, 0.2392399655523627, 0.01023834712248415, -0.0026793313228595426, 0.042356241814742845, 0.2253970470166604, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.4802510512725196, 0.0, 0.0, 0.0, 0.0, -6.3596101625559305, -0.2762313898040841, -6.500796633979847, 0.5734765877040957, 1.3471259948681389, 5.936840409706221, 6.590346245333925, 0.0, 0.0, 0.0, 0.0],
    [0.3307533067671401, 0.0, 0.0, 0.0, 0.0, 5.956207776829962, -0.48683164004815277, 4.462055288206771, 0.7410258231442072, -0.7118192034575913, -5.454619594516665, -4.14080372924471, 0.20383197231903866, 0.0, 0.0, 0.0],
    [-0.5847111122998945, 0.0, 0.0, 0.0, 0.0, -12.41268417116267, 1.360245445660928, -22.426105311118683, -0.8828857055865458, 1.7701551285382304, 12.158096519185339, 22.230375204077607, -0.6634483760201249, 0.45096237872581374, 0.0, 0.0],
    [1.9405755498106487, 0.0, 0.0, 0.0, 0.0, 21.977984081145564, 0.8230747326984729, 68.16441683626354, -3.117097463620267, -4.56884102182244, -18.74190987126265, -66.57711839637832, 1.0989155531654418, 0.0, 0.0, 0.0],
];
/// Ninth-order weights.
const B_HIGH: [f64; 16] = [0.015006690149797247, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0551809927463813, 0.2384947263782183, 0.12881517742829915, 0.22766231110462157, 1.2295325874375174, 0.04624976662810384, 0.13861963193662938, 0.030800101683194355, 0.0];
/// Embedded eighth-order weights.
const B_LOW: [f64; 16] = [0.018972105324811014, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.4081103145494938, 0.1260323883820921, 0.11883750634511497, 0.24910419978386875, -3.2699662199289783, 0.3023798100228883, 0.0, 0.0, 0.04652989552070924];

/// States the integrators can advance.
pub trait OdeState: Clone {
    /// self += a·x
    fn axpy(&mut self, a: f64, x: &Self);
    fn scaled(&self, a: f64) -> Self;
    /// Root-mean-square of err_i / (atol + rtol·max(|y_i|, |z_i|)).
    fn err_norm(err: &Self, y: &Self, z: &Self, atol: f64, rtol: f64) -> f64;
}

macro_rules! impl_state {
    ($t:ty, $abs:expr) => {
        impl OdeState for $t {
            fn axpy(&mut self, a: f64, x: &Self) {
                self.zip_mut_with(x, |s, v| *s += *v * a);
            }
            fn scaled(&self, a: f64) -> Self {
                self.mapv(|v| v * a)
            }
            fn err_norm(err: &Self, y: &Self, z: &Self, atol: f64, rtol: f64) -> f64 {
                let abs = $abs;
                let mut acc = 0.0;
                let mut n = 0usize;
                ndarray::Zip::from(err).and(y).and(z).for_each(|e, a, b| {
                    let sc = atol + rtol * abs(a).max(abs(b));
                    let r = abs(e) / sc;
                    acc += r * r;
                    n += 1;
                });
                (acc / n.max(1) as f64).sqrt()
            }
        }
    };
}

impl_state!(Array1<f64>, |v: &f64| v.abs());
impl_state!(Array2<f64>, |v: &f64| v.abs());
impl_state!(Array1<C64>, |v: &C64| v.norm());
impl_state!(Array2<C64>, |v: &C64| v.norm());

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with (at most) the given step.
    Rk4 { dt: f64 },
    /// Adaptive 9(8) pair with mixed error control.
    Adaptive { rtol: f64, atol: f64 },
}

impl Method {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Method::Rk4 { dt } => dt > 0.0 && dt.is_finite(),
            Method::Adaptive { rtol, atol } => rtol > 0.0 && atol > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid integration method {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl Stats {
    fn absorb(&mut self, o: Stats) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.evaluations += o.evaluations;
    }
}

const MAX_STEPS: usize = 2_000_000;

/// Integrator carrying its step-size memory between successive calls.
pub struct Integrator {
    pub method: Method,
    pub stats: Stats,
    h_last: Option<f64>,
}

impl Integrator {
    pub fn new(method: Method) -> Result<Self> {
        method.validate()?;
        Ok(Integrator { method, stats: Stats::default(), h_last: None })
    }

    /// Advance y from t0 to t1.
    pub fn advance<S: OdeState>(
        &mut self,
        f: &mut impl FnMut(f64, &S) -> S,
        t0: f64,
        y0: S,
        t1: f64,
    ) -> Result<S> {
        if t1 == t0 {
            return Ok(y0);
        }
        match self.method {
            Method::Rk4 { dt } => {
                let span = t1 - t0;
                let n = (span.abs() / dt).ceil().max(1.0) as usize;
                let h = span / n as f64;
                let mut y = y0;
                for i in 0..n {
                    let t = t0 + i as f64 * h;
                    y = rk4_step(f, t, &y, h);
                }
                self.stats.absorb(Stats { accepted: n, rejected: 0, evaluations: 4 * n });
                Ok(y)
            }
            Method::Adaptive { rtol, atol } => {
                let (y, st, h) = adaptive(f, t0, y0, t1, rtol, atol, self.h_last)?;
                self.stats.absorb(st);
                self.h_last = Some(h.abs());
                Ok(y)
            }
        }
    }

    /// Values at each of the increasing (or decreasing) `stops`, starting from (t0, y0).
    pub fn advance_through<S: OdeState>(
        &mut self,
        f: &mut impl FnMut(f64, &S) -> S,
        t0: f64,
        y0: S,
        stops: &[f64],
    ) -> Result<Vec<S>> {
        let mut out = Vec::with_capacity(stops.len());
        let mut t = t0;
        let mut y = y0;
        for &s in stops {
            y = self.advance(f, t, y, s)?;
            t = s;
            out.push(y.clone());
        }
        Ok(out)
    }
}

pub fn rk4_step<S: OdeState>(f: &mut impl FnMut(f64, &S) -> S, t: f64, y: &S, h: f64) -> S {
    let k1 = f(t, y);
    let mut y2 = y.clone();
    y2.axpy(0.5 * h, &k1);
    let k2 = f(t + 0.5 * h, &y2);
    let mut y3 = y.clone();
    y3.axpy(0.5 * h, &k2);
    let k3 = f(t + 0.5 * h, &y3);
    let mut y4 = y.clone();
    y4.axpy(h, &k3);
    let k4 = f(t + h, &y4);
    let mut out = y.clone();
    out.axpy(h / 6.0, &k1);
    out.axpy(h / 3.0, &k2);
    out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4);
    out
}

/// One step of the 9(8) pair: returns (ninth-order solution, error estimate).
pub fn verner_step<S: OdeState>(
    f: &mut impl FnMut(f64, &S) -> S,
    t: f64,
    y: &S,
    h: f64,
) -> (S, S) {
    let mut k: Vec<S> = Vec::with_capacity(STAGES);
    for i in 0..STAGES {
        let mut yi = y.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = A[i][j];
            if a != 0.0 {
                yi.axpy(h * a, kj);
            }
        }
        k.push(f(t + C[i] * h, &yi));
    }
    let mut high = y.clone();
    let mut err = k[0].scaled(0.0);
    for i in 0..STAGES {
        if B_HIGH[i] != 0.0 {
            high.axpy(h * B_HIGH[i], &k[i]);
        }
        let d = B_HIGH[i] - B_LOW[i];
        if d != 0.0 {
            err.axpy(h * d, &k[i]);
        }
    }
    (high, err)
}

fn adaptive<S: OdeState>(
    f: &mut impl FnMut(f64, &S) -> S,
    t0: f64,
    y0: S,
    t1: f64,
    rtol: f64,
    atol: f64,
    h_hint: Option<f64>,
) -> Result<(S, Stats, f64)> {
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut h = h_hint.unwrap_or(0.05 * span).min(span);
    let mut t = t0;
    let mut y = y0;
    let mut stats = Stats::default();
    let mut h_accepted = h;
    while (t1 - t) * dir > 0.0 {
        if stats.accepted + stats.rejected > MAX_STEPS {
            return Err(Error::IntegrationFailure(format!("step budget exhausted at t = {t}")));
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining * (1.0 - 1e-12);
        let hs = if last { remaining } else { h };
        if hs < 1e-13 * (1.0 + t.abs()) {
            return Err(Error::IntegrationFailure(format!("step size underflow at t = {t}")));
        }
        let (ynew, err) = verner_step(f, t, &y, dir * hs);
        stats.evaluations += STAGES;
        let e = S::err_norm(&err, &y, &ynew, atol, rtol);
        if !e.is_finite() {
            stats.rejected += 1;
            h = 0.2 * hs;
            continue;
        }
        let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-1.0 / 9.0)).clamp(0.2, 5.0) };
        if e <= 1.0 {
            t = if last { t1 } else { t + dir * hs };
            y = ynew;
            stats.accepted += 1;
            if !last || hs >= h * 0.5 {
                h_accepted = hs;
            }
            h = hs * factor;
        } else {
            stats.rejected += 1;
            h = hs * factor.min(1.0);
        }
    }
    Ok((y, stats, h_accepted))
}
