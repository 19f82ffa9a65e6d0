//! Spacetime data, the shift flow, and the conformal reduction to the model operator
//! ∂_t² + r(t)∂_t + a(t).

pub mod family;
pub mod flow;

pub use family::{jp, step_profile, Coefficient, End, Factor, TimeProfile};
pub use flow::{pullback_matrix, ShiftFlow};

use ndarray::Array1;
use ndarray_linalg::InverseC;
use serde::{Deserialize, Serialize};

use crate::basis::{fit_time_decay_or_exact, DecayFit, ModeBasis, OpFamily, OpMatrix, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{fro, CMat, RMat, Weight};
use crate::report::ser_f64;

/// Metric −c²dt² + h(dx + b dt)² with potential V on the circle of length `length`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacetimeSpec {
    pub length: f64,
    pub c: Coefficient,
    pub b: Coefficient,
    pub h: Coefficient,
    pub v: Coefficient,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Rates {
    #[serde(serialize_with = "ser_f64")]
    pub mu: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mu_prime: f64,
    #[serde(serialize_with = "ser_f64")]
    pub delta: f64,
}

impl SpacetimeSpec {
    pub fn ultrastatic(length: f64) -> Self {
        SpacetimeSpec {
            length,
            c: Coefficient::constant(1.0),
            b: Coefficient::constant(0.0),
            h: Coefficient::constant(1.0),
            v: Coefficient::constant(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::InvalidConfig("circumference must be positive".into()));
        }
        for c in [&self.c, &self.b, &self.h, &self.v] {
            c.validate()?;
        }
        self.b.vanishing_rate()?;
        Ok(())
    }

    /// μ from c, h, V; μ′ from b; δ = min(μ, μ′ − 1).
    pub fn rates(&self) -> Result<Rates> {
        let mu = self
            .c
            .approach_rate()
            .min(self.h.approach_rate())
            .min(self.v.approach_rate());
        let mu_prime = self.b.vanishing_rate()?;
        Ok(Rates { mu, mu_prime, delta: mu.min(mu_prime - 1.0) })
    }

    pub fn is_static(&self) -> bool {
        self.b.is_zero()
            && self.c.is_time_independent()
            && self.h.is_time_independent()
            && self.v.is_time_independent()
    }
}

/// Reduced scalar fields on the fine grid: w = h̃^{1/2} and Ṽ = ĉ²V̂.
#[derive(Clone, Debug)]
pub struct Fields {
    pub w: Vec<f64>,
    pub vt: Vec<f64>,
}

/// Model data at one time: weight W = M(w), a = W^{-1}S, r = W^{-1}M(∂_t w).
#[derive(Clone, Debug)]
pub struct NodeModel {
    pub t: f64,
    pub weight: Weight,
    pub a: CMat,
    pub r: CMat,
}

impl NodeModel {
    /// Stiffness S = W a.
    pub fn stiffness(&self) -> CMat {
        self.weight.w.dot(&self.a)
    }
}

/// Spacetime data together with its shift flow; evaluates the reduced model at any time.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub basis: ModeBasis,
    pub spec: SpacetimeSpec,
    pub flow: ShiftFlow,
    pub rates: Rates,
}

const WDOT_STEP: f64 = 1e-3;

impl Reduction {
    pub fn new(spec: &SpacetimeSpec, basis: &ModeBasis, span: (f64, f64)) -> Result<Self> {
        spec.validate()?;
        if (spec.length - basis.l).abs() > 1e-12 * spec.length {
            return Err(Error::InvalidConfig(format!(
                "basis circumference {} differs from spacetime circumference {}",
                basis.l, spec.length
            )));
        }
        let flow = ShiftFlow::compute(basis, &spec.b, (span.0 - 1.0, span.1 + 1.0))?;
        Ok(Reduction { basis: basis.clone(), spec: spec.clone(), flow, rates: spec.rates()? })
    }

    fn fields_from(
        &self,
        y: &Array1<f64>,
        yx: &Array1<f64>,
        c: impl Fn(f64) -> f64,
        h: impl Fn(f64) -> f64,
        v: impl Fn(f64) -> f64,
    ) -> Result<Fields> {
        let mut w = Vec::with_capacity(y.len());
        let mut vt = Vec::with_capacity(y.len());
        for (&yi, &di) in y.iter().zip(yx.iter()) {
            let (ci, hi, vi) = (c(yi), h(yi), v(yi));
            if !(ci > 0.0) {
                return Err(Error::InvalidGeometry(format!("lapse c = {ci} is not positive")));
            }
            if !(hi > 0.0) || !(di > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "spatial metric h = {hi} (flow derivative {di}) is not positive"
                )));
            }
            w.push(hi.sqrt() * di / ci);
            vt.push(ci * ci * vi);
        }
        Ok(Fields { w, vt })
    }

    pub fn fields(&self, t: f64) -> Result<Fields> {
        let (y, yx) = self.flow.at(t)?;
        let l = self.basis.l;
        let s = &self.spec;
        self.fields_from(&y, &yx, |x| s.c.eval(t, x, l), |x| s.h.eval(t, x, l), |x| s.v.eval(t, x, l))
    }

    pub fn asymptotic_fields(&self, end: End) -> Result<Fields> {
        let (y, yx) = self.flow.asymptotic(end);
        let l = self.basis.l;
        let s = &self.spec;
        self.fields_from(
            &y,
            &yx,
            |x| s.c.limit(end, x, l),
            |x| s.h.limit(end, x, l),
            |x| s.v.limit(end, x, l),
        )
    }

    /// ∂_t w on the fine grid by a five-point difference.
    pub fn w_dot(&self, t: f64) -> Result<Vec<f64>> {
        if self.spec.is_static() {
            return Ok(vec![0.0; self.basis.fine_grid().len()]);
        }
        let h = WDOT_STEP;
        let f = |dt: f64| self.fields(t + dt).map(|f| f.w);
        let (m2, m1, p1, p2) = (f(-2.0 * h)?, f(-h)?, f(h)?, f(2.0 * h)?);
        Ok((0..m1.len())
            .map(|i| (m2[i] - 8.0 * m1[i] + 8.0 * p1[i] - p2[i]) / (12.0 * h))
            .collect())
    }

    /// (W, S) with S = −∂_x M(1/w) ∂_x + M(wṼ).
    pub fn weight_and_stiffness(&self, f: &Fields) -> Result<(CMat, CMat)> {
        let b = &self.basis;
        let wmat = b.mult_op_fine(&f.w)?;
        let inv_w: Vec<f64> = f.w.iter().map(|v| 1.0 / v).collect();
        let wv: Vec<f64> = f.w.iter().zip(&f.vt).map(|(a, c)| a * c).collect();
        let m_inv = b.mult_op_fine(&inv_w)?;
        let mut s = b.mult_op_fine(&wv)?;
        let ks: Vec<f64> = b.modes().map(|m| b.wavenumber(m)).collect();
        for j in 0..b.n {
            for l in 0..b.n {
                s[[j, l]] += m_inv[[j, l]] * (ks[j] * ks[l]);
            }
        }
        Ok((wmat, s))
    }

    /// W(t) alone, without the time derivative needed for r.
    pub fn weight_at(&self, t: f64) -> Result<Weight> {
        let f = self.fields(t)?;
        Weight::new(&self.basis.mult_op_fine(&f.w)?)
    }

    pub fn node(&self, t: f64) -> Result<NodeModel> {
        let f = self.fields(t)?;
        let (wmat, s) = self.weight_and_stiffness(&f)?;
        let weight = Weight::new(&wmat)?;
        let wd = self.basis.mult_op_fine(&self.w_dot(t)?)?;
        Ok(NodeModel { t, a: weight.inv.dot(&s), r: weight.inv.dot(&wd), weight })
    }

    pub fn asymptotic_node(&self, end: End) -> Result<NodeModel> {
        let f = self.asymptotic_fields(end)?;
        let (wmat, s) = self.weight_and_stiffness(&f)?;
        let weight = Weight::new(&wmat)?;
        let n = self.basis.n;
        let t = match end {
            End::Past => f64::NEG_INFINITY,
            End::Future => f64::INFINITY,
        };
        Ok(NodeModel { t, a: weight.inv.dot(&s), r: CMat::zeros((n, n)), weight })
    }

    /// Real-basis generator data (W̃^{-1}, S̃) of the canonical first-order system.
    pub fn canonical_real(&self, t: f64) -> Result<(RMat, RMat)> {
        let f = self.fields(t)?;
        let (wmat, s) = self.weight_and_stiffness(&f)?;
        let wr = self.basis.to_real_basis(&wmat);
        let sr = self.basis.to_real_basis(&s);
        let winv = wr.invc()?;
        Ok((winv, sr))
    }

    /// The ultrastatic generator data at one end in the real basis.
    pub fn canonical_real_asymptotic(&self, end: End) -> Result<(RMat, RMat)> {
        let f = self.asymptotic_fields(end)?;
        let (wmat, s) = self.weight_and_stiffness(&f)?;
        let winv = self.basis.to_real_basis(&wmat).invc()?;
        Ok((winv, self.basis.to_real_basis(&s)))
    }
}

/// Reduced model data on a time grid.
#[derive(Clone, Debug)]
pub struct ModelCoefficients {
    pub basis: ModeBasis,
    pub grid: TimeGrid,
    pub a: OpFamily,
    pub r: OpFamily,
    pub weights: Vec<Weight>,
    pub out: NodeModel,
    pub inn: NodeModel,
    pub m2: f64,
    pub rates: Rates,
}

impl ModelCoefficients {
    pub fn w_family(&self) -> OpFamily {
        OpFamily::from_fn(self.grid, |i| self.weights[i].w.clone())
    }

    pub fn node(&self, i: usize) -> NodeModel {
        NodeModel {
            t: self.grid.node(i),
            weight: self.weights[i].clone(),
            a: self.a.mats[i].clone(),
            r: self.r.mats[i].clone(),
        }
    }

    pub fn end(&self, end: End) -> &NodeModel {
        match end {
            End::Past => &self.inn,
            End::Future => &self.out,
        }
    }

    /// Maximum weighted self-adjointness defect of a(t) over the grid.
    pub fn self_adjoint_residual(&self) -> f64 {
        self.a
            .mats
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w.self_adjoint_residual(a))
            .fold(0.0, f64::max)
    }
}

/// Assemble a(t), r(t), W(t) on the grid plus the asymptotic operators; checks positivity.
pub fn reduce_to_model(red: &Reduction, grid: &TimeGrid) -> Result<ModelCoefficients> {
    let nodes: Vec<NodeModel> = grid.nodes().into_iter().map(|t| red.node(t)).collect::<Result<_>>()?;
    let out = red.asymptotic_node(End::Future)?;
    let inn = red.asymptotic_node(End::Past)?;
    let mut a = Vec::with_capacity(nodes.len());
    let mut r = Vec::with_capacity(nodes.len());
    let mut weights = Vec::with_capacity(nodes.len());
    for nd in nodes {
        a.push(nd.a);
        r.push(nd.r);
        weights.push(nd.weight);
    }
    let mut model = ModelCoefficients {
        basis: red.basis.clone(),
        grid: *grid,
        a: OpFamily::new(*grid, a)?,
        r: OpFamily::new(*grid, r)?,
        weights,
        out,
        inn,
        m2: 0.0,
        rates: red.rates,
    };
    model.m2 = check_positivity(&model)?;
    Ok(model)
}

/// Minimum weighted eigenvalue of an asymptotic operator.
pub fn min_weighted_eig(node: &NodeModel) -> Result<f64> {
    let (vals, _) = node.weight.eigh(&node.a)?;
    Ok(vals[0])
}

/// Largest m² with a_out, a_in ⪰ m²; errors when not positive.
pub fn check_positivity(model: &ModelCoefficients) -> Result<f64> {
    let m2 = min_weighted_eig(&model.out)?.min(min_weighted_eig(&model.inn)?);
    if m2 <= 0.0 {
        return Err(Error::PositivityViolated { eigenvalue: m2 });
    }
    Ok(m2)
}

#[derive(Clone, Debug, Serialize)]
pub struct TdReport {
    pub a_decay: DecayFit,
    pub r_decay: DecayFit,
    #[serde(serialize_with = "ser_f64")]
    pub delta: f64,
    pub a_ok: bool,
    pub r_ok: bool,
}

/// Fits ‖a(t) − a_out/in‖ and ‖r(t)‖ against ⟨t⟩ over |t| in the window.
pub fn verify_td_decay(model: &ModelCoefficients, window: (f64, f64)) -> Result<TdReport> {
    let mut da = Vec::new();
    let mut dr = Vec::new();
    for i in 0..model.grid.n_nodes {
        let t = model.grid.node(i);
        let end = if t >= 0.0 { &model.out } else { &model.inn };
        da.push((t, fro(&(&model.a.mats[i] - &end.a))));
        dr.push((t, fro(&model.r.mats[i])));
    }
    let a_decay = fit_time_decay_or_exact(&da, window, 1e-12)?;
    let r_decay = fit_time_decay_or_exact(&dr, window, 1e-12)?;
    let delta = model.rates.delta;
    Ok(TdReport {
        a_ok: a_decay.exponent >= delta - 0.2,
        r_ok: r_decay.exponent >= 1.0 + delta - 0.2,
        a_decay,
        r_decay,
        delta,
    })
}

/// The model at a single time as an OpMatrix triple (W, a, r), convenience for tests.
pub fn model_at(red: &Reduction, t: f64) -> Result<(OpMatrix, OpMatrix, OpMatrix)> {
    let n = red.node(t)?;
    Ok((n.weight.w.clone(), n.a, n.r))
}
