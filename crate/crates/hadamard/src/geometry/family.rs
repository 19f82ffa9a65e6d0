//! Parametric coefficient families c, b, h, V.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ⟨t⟩ = (1 + t²)^{1/2}.
pub fn jp(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

/// The step interpolant (1 + t/⟨t⟩)/2 rising from 0 to 1.
pub fn step_profile(t: f64) -> f64 {
    0.5 * (1.0 + t / jp(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum End {
    Past,
    Future,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeProfile {
    /// (1 + t/⟨t⟩)/2.
    Step,
    /// ⟨t⟩^{−δ}; δ = 0 gives the constant profile.
    InversePower { delta: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Step => step_profile(t),
            TimeProfile::InversePower { delta } => jp(t).powf(-delta),
        }
    }

    pub fn limit(&self, end: End) -> f64 {
        match *self {
            TimeProfile::Step => match end {
                End::Past => 0.0,
                End::Future => 1.0,
            },
            TimeProfile::InversePower { delta } => {
                if delta == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Rate of approach to the limit, ∞ for constant profiles.
    pub fn rate(&self) -> f64 {
        match *self {
            TimeProfile::Step => 2.0,
            TimeProfile::InversePower { delta } => {
                if delta == 0.0 {
                    f64::INFINITY
                } else {
                    delta
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Factor {
    Constant {
        value: f64,
    },
    /// 1 + amplitude·p(t)·cos(2π·mode·x/L).
    CosBump {
        amplitude: f64,
        mode: i64,
        time_profile: TimeProfile,
    },
    /// exp(power·s(t)) with s(t) = left + (right − left)(1 + t/⟨t⟩)/2.
    Step {
        left: f64,
        right: f64,
        power: f64,
    },
    /// amplitude·p(t)·cos(2π·mode·x/L), used for decaying shift vectors.
    CosWave {
        amplitude: f64,
        mode: i64,
        time_profile: TimeProfile,
    },
}

impl Factor {
    fn wave(mode: i64, x: f64, l: f64) -> (f64, f64) {
        let k = 2.0 * PI * mode as f64 / l;
        ((k * x).cos(), -k * (k * x).sin())
    }

    /// Value and x-derivative.
    pub fn eval(&self, t: f64, x: f64, l: f64) -> (f64, f64) {
        match self {
            Factor::Constant { value } => (*value, 0.0),
            Factor::CosBump { amplitude, mode, time_profile } => {
                let p = amplitude * time_profile.eval(t);
                let (c, dc) = Self::wave(*mode, x, l);
                (1.0 + p * c, p * dc)
            }
            Factor::Step { left, right, power } => {
                let s = left + (right - left) * step_profile(t);
                ((power * s).exp(), 0.0)
            }
            Factor::CosWave { amplitude, mode, time_profile } => {
                let p = amplitude * time_profile.eval(t);
                let (c, dc) = Self::wave(*mode, x, l);
                (p * c, p * dc)
            }
        }
    }

    pub fn limit(&self, end: End, x: f64, l: f64) -> f64 {
        match self {
            Factor::Constant { value } => *value,
            Factor::CosBump { amplitude, mode, time_profile } => {
                1.0 + amplitude * time_profile.limit(end) * Self::wave(*mode, x, l).0
            }
            Factor::Step { left, right, power } => {
                let s = match end {
                    End::Past => *left,
                    End::Future => *right,
                };
                (power * s).exp()
            }
            Factor::CosWave { amplitude, mode, time_profile } => {
                amplitude * time_profile.limit(end) * Self::wave(*mode, x, l).0
            }
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match self {
            Factor::Constant { .. } => true,
            Factor::CosBump { amplitude, time_profile, .. }
            | Factor::CosWave { amplitude, time_profile, .. } => {
                *amplitude == 0.0 || time_profile.rate().is_infinite()
            }
            Factor::Step { left, right, power } => left == right || *power == 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Factor::Constant { value } => *value == 0.0,
            Factor::CosWave { amplitude, .. } => *amplitude == 0.0,
            _ => false,
        }
    }

    /// Whether the factor vanishes identically at the given end.
    pub fn vanishes_at(&self, end: End) -> bool {
        match self {
            Factor::CosWave { amplitude, time_profile, .. } => {
                *amplitude == 0.0 || time_profile.limit(end) == 0.0
            }
            Factor::Constant { value } => *value == 0.0,
            _ => false,
        }
    }

    pub fn rate(&self) -> f64 {
        if self.is_time_independent() {
            return f64::INFINITY;
        }
        match self {
            Factor::Constant { .. } => f64::INFINITY,
            Factor::CosBump { time_profile, .. } | Factor::CosWave { time_profile, .. } => {
                time_profile.rate()
            }
            Factor::Step { .. } => 2.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = match self {
            Factor::Constant { value } => value.is_finite(),
            Factor::CosBump { amplitude, time_profile, .. }
            | Factor::CosWave { amplitude, time_profile, .. } => {
                amplitude.is_finite()
                    && match time_profile {
                        TimeProfile::InversePower { delta } => *delta >= 0.0 && delta.is_finite(),
                        TimeProfile::Step => true,
                    }
            }
            Factor::Step { left, right, power } => {
                left.is_finite() && right.is_finite() && power.is_finite()
            }
        };
        if finite {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid coefficient factor {self:?}")))
        }
    }
}

/// Product of factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coefficient {
    pub factors: Vec<Factor>,
}

impl Coefficient {
    pub fn constant(value: f64) -> Self {
        Coefficient { factors: vec![Factor::Constant { value }] }
    }

    pub fn product(factors: Vec<Factor>) -> Self {
        Coefficient { factors }
    }

    pub fn validate(&self) -> Result<()> {
        self.factors.iter().try_for_each(Factor::validate)
    }

    pub fn eval(&self, t: f64, x: f64, l: f64) -> f64 {
        self.factors.iter().map(|f| f.eval(t, x, l).0).product()
    }

    /// Value and x-derivative of the product.
    pub fn eval_dx(&self, t: f64, x: f64, l: f64) -> (f64, f64) {
        let mut v = 1.0;
        let mut d = 0.0;
        for f in &self.factors {
            let (fv, fd) = f.eval(t, x, l);
            d = d * fv + v * fd;
            v *= fv;
        }
        (v, d)
    }

    pub fn limit(&self, end: End, x: f64, l: f64) -> f64 {
        self.factors.iter().map(|f| f.limit(end, x, l)).product()
    }

    pub fn is_zero(&self) -> bool {
        self.factors.iter().any(Factor::is_zero)
    }

    pub fn is_time_independent(&self) -> bool {
        self.is_zero() || self.factors.iter().all(Factor::is_time_independent)
    }

    /// Rate at which the coefficient approaches its limits.
    pub fn approach_rate(&self) -> f64 {
        if self.is_time_independent() {
            return f64::INFINITY;
        }
        self.factors.iter().map(Factor::rate).fold(f64::INFINITY, f64::min)
    }

    /// Decay rate towards zero at both ends, or an error when the limit is not zero.
    pub fn vanishing_rate(&self) -> Result<f64> {
        if self.is_zero() {
            return Ok(f64::INFINITY);
        }
        let mut rate = f64::INFINITY;
        for end in [End::Past, End::Future] {
            let zeros: Vec<&Factor> =
                self.factors.iter().filter(|f| f.vanishes_at(end)).collect();
            if zeros.is_empty() {
                return Err(Error::InvalidConfig(
                    "the shift vector must decay to zero at both ends".into(),
                ));
            }
            rate = rate.min(zeros.iter().map(|f| f.rate()).sum::<f64>());
        }
        Ok(rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_family_limits() {
        let h = Coefficient::product(vec![
            Factor::Step { left: 0.0, right: 1.0, power: 2.0 },
            Factor::CosBump {
                amplitude: 0.3,
                mode: 1,
                time_profile: TimeProfile::InversePower { delta: 0.0 },
            },
        ]);
        let l = 2.0 * PI;
        assert!((h.limit(End::Future, 0.0, l) - 2f64.exp() * 1.3).abs() < 1e-12);
        assert!((h.limit(End::Past, PI, l) - 0.7).abs() < 1e-12);
        assert!((h.eval(1e8, 0.0, l) - 2f64.exp() * 1.3).abs() < 1e-6);
        assert_eq!(h.approach_rate(), 2.0);
        let (v, d) = h.eval_dx(0.3, 0.7, l);
        let e = 1e-6;
        let fd = (h.eval(0.3, 0.7 + e, l) - h.eval(0.3, 0.7 - e, l)) / (2.0 * e);
        assert!((d - fd).abs() < 1e-8 && (v - h.eval(0.3, 0.7, l)).abs() < 1e-15);
    }

    #[test]
    fn shift_rates() {
        let b = Coefficient::product(vec![Factor::CosWave {
            amplitude: 0.1,
            mode: 1,
            time_profile: TimeProfile::InversePower { delta: 2.0 },
        }]);
        assert_eq!(b.vanishing_rate().unwrap(), 2.0);
        assert!(Coefficient::constant(0.0).vanishing_rate().unwrap().is_infinite());
        assert!(Coefficient::constant(0.5).vanishing_rate().is_err());
    }

    #[test]
    fn config_roundtrip() {
        let src = r#"f = [{ family = "step", left = 0.0, right = 1.0, power = 2.0 },
                          { family = "cos_bump", amplitude = 0.3, mode = 1, time_profile = { kind = "inverse_power", delta = 0.0 } }]"#;
        #[derive(Deserialize)]
        struct W {
            f: Coefficient,
        }
        let w: W = toml::from_str(src).unwrap();
        assert_eq!(w.f.factors.len(), 2);
    }
}
