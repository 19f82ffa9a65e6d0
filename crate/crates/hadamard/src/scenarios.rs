//! Built-in spacetime scenarios.

use std::f64::consts::PI;

use crate::geometry::{Coefficient, Factor, SpacetimeSpec, TimeProfile};

pub const TWO_PI: f64 = 2.0 * PI;

/// (c, b, h, V) = (1, 0, 1, 1).
pub fn ultrastatic() -> SpacetimeSpec {
    SpacetimeSpec::ultrastatic(TWO_PI)
}

/// h = exp(2s(t))·(1 + amplitude·cos x) with s(t) = (1 + t/⟨t⟩)/2, c = 1, b = 0, V = 1.
pub fn s1_bump(amplitude: f64) -> SpacetimeSpec {
    SpacetimeSpec {
        length: TWO_PI,
        c: Coefficient::constant(1.0),
        b: Coefficient::constant(0.0),
        h: Coefficient::product(vec![
            Factor::Step { left: 0.0, right: 1.0, power: 2.0 },
            Factor::CosBump {
                amplitude,
                mode: 1,
                time_profile: TimeProfile::InversePower { delta: 0.0 },
            },
        ]),
        v: Coefficient::constant(1.0),
    }
}

/// The bump scenario with an extra slowly decaying metric perturbation
/// (1 + tail·⟨t⟩^{−δ} cos 2x), giving decay rate δ.
pub fn s1_bump_with_tail(amplitude: f64, tail: f64, delta: f64) -> SpacetimeSpec {
    let mut spec = s1_bump(amplitude);
    spec.h.factors.push(Factor::CosBump {
        amplitude: tail,
        mode: 2,
        time_profile: TimeProfile::InversePower { delta },
    });
    spec
}

/// Conformally flat metric h = exp(2s(t)) without spatial dependence.
pub fn conformal_step() -> SpacetimeSpec {
    SpacetimeSpec {
        length: TWO_PI,
        c: Coefficient::constant(1.0),
        b: Coefficient::constant(0.0),
        h: Coefficient::product(vec![Factor::Step { left: 0.0, right: 1.0, power: 2.0 }]),
        v: Coefficient::constant(1.0),
    }
}

/// The bump scenario with a decaying shift b = amplitude·⟨t⟩^{−rate}·cos x.
pub fn s1_bump_shifted(amplitude: f64, shift: f64, rate: f64) -> SpacetimeSpec {
    let mut spec = s1_bump(amplitude);
    spec.b = Coefficient::product(vec![Factor::CosWave {
        amplitude: shift,
        mode: 1,
        time_profile: TimeProfile::InversePower { delta: rate },
    }]);
    spec
}
