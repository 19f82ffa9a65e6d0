use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cr, fro, CMat};

/// Number of nodes at each end excluded from reported norms.
pub const TRIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub n_nodes: usize,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, n_nodes: usize) -> Result<Self> {
        if !(t_min < t_max) {
            return Err(Error::InvalidConfig(format!(
                "time grid needs t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if n_nodes < 9 {
            return Err(Error::InvalidConfig(format!(
                "time grid needs at least 9 nodes, got {n_nodes}"
            )));
        }
        Ok(TimeGrid { t_min, t_max, n_nodes })
    }

    /// Grid with spacing close to `dt` covering [t_min, t_max].
    pub fn with_spacing(t_min: f64, t_max: f64, dt: f64) -> Result<Self> {
        let n = ((t_max - t_min) / dt).round() as usize + 1;
        Self::new(t_min, t_max, n.max(9))
    }

    pub fn dt(&self) -> f64 {
        (self.t_max - self.t_min) / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.t_max
        } else {
            self.t_min + i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min - 1e-12 && t <= self.t_max + 1e-12
    }

    /// Index of the node closest to t.
    pub fn nearest(&self, t: f64) -> usize {
        let x = ((t - self.t_min) / self.dt()).round();
        x.clamp(0.0, (self.n_nodes - 1) as f64) as usize
    }

    /// Interior nodes where all stencils are centred.
    pub fn trimmed(&self) -> std::ops::Range<usize> {
        TRIM..self.n_nodes - TRIM
    }
}

/// Fourth-order finite-difference weights for the first derivative at node i of n
/// (times 12·dt), with the stencil start index.
pub fn fd_weights(i: usize, n: usize) -> (usize, [f64; 5]) {
    const FWD0: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
    const FWD1: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
    const CEN: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
    let rev = |w: [f64; 5]| {
        let mut r = [0.0; 5];
        for j in 0..5 {
            r[j] = -w[4 - j];
        }
        r
    };
    match i {
        0 => (0, FWD0),
        1 => (0, FWD1),
        _ if i + 1 == n => (n - 5, rev(FWD0)),
        _ if i + 2 == n => (n - 5, rev(FWD1)),
        _ => (i - 2, CEN),
    }
}

/// Fourth-order first derivative of scalar samples.
pub fn fd_derivative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let (start, w) = fd_weights(i, n);
            (0..5).map(|j| w[j] * values[start + j]).sum::<f64>() / (12.0 * dt)
        })
        .collect()
}

/// Time-indexed operator family on a uniform grid.
#[derive(Clone, Debug)]
pub struct OpFamily {
    pub grid: TimeGrid,
    pub mats: Vec<CMat>,
}

impl OpFamily {
    pub fn new(grid: TimeGrid, mats: Vec<CMat>) -> Result<Self> {
        if mats.len() != grid.n_nodes {
            return Err(Error::InvalidData(format!(
                "family has {} matrices for {} nodes",
                mats.len(),
                grid.n_nodes
            )));
        }
        if let Some(first) = mats.first() {
            let shape = first.dim();
            if mats.iter().any(|m| m.dim() != shape) {
                return Err(Error::InvalidData("family matrices differ in shape".into()));
            }
        }
        Ok(OpFamily { grid, mats })
    }

    pub fn from_fn(grid: TimeGrid, f: impl FnMut(usize) -> CMat) -> Self {
        let mats = (0..grid.n_nodes).map(f).collect();
        OpFamily { grid, mats }
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn at(&self, i: usize) -> &CMat {
        &self.mats[i]
    }

    /// Fourth-order finite-difference time derivative (centred inside, one-sided at the ends).
    pub fn derivative(&self) -> OpFamily {
        let n = self.mats.len();
        let scale = cr(1.0 / (12.0 * self.grid.dt()));
        let mats = (0..n)
            .map(|i| {
                let (start, w) = fd_weights(i, n);
                let mut acc = CMat::zeros(self.mats[0].raw_dim());
                for j in 0..5 {
                    if w[j] != 0.0 {
                        acc.scaled_add(cr(w[j]), &self.mats[start + j]);
                    }
                }
                acc * scale
            })
            .collect();
        OpFamily { grid: self.grid, mats }
    }

    pub fn map(&self, f: impl Fn(usize, &CMat) -> CMat) -> OpFamily {
        let mats = self.mats.iter().enumerate().map(|(i, m)| f(i, m)).collect();
        OpFamily { grid: self.grid, mats }
    }

    pub fn zip(&self, other: &OpFamily, f: impl Fn(&CMat, &CMat) -> CMat) -> OpFamily {
        let mats = self.mats.iter().zip(&other.mats).map(|(a, b)| f(a, b)).collect();
        OpFamily { grid: self.grid, mats }
    }

    /// Frobenius norms at every node.
    pub fn norms(&self) -> Vec<f64> {
        self.mats.iter().map(fro).collect()
    }

    /// (t, ‖A(t)‖) over the trimmed grid.
    pub fn trimmed_norms(&self) -> Vec<(f64, f64)> {
        self.grid
            .trimmed()
            .map(|i| (self.grid.node(i), fro(&self.mats[i])))
            .collect()
    }

    /// sup over trimmed nodes of ‖A(t)‖.
    pub fn sup_norm(&self) -> f64 {
        self.grid
            .trimmed()
            .map(|i| fro(&self.mats[i]))
            .fold(0.0, f64::max)
    }

    /// Matrix of entrywise maxima of |A_jk(t)| over the trimmed nodes.
    pub fn entry_envelope(&self) -> CMat {
        let mut env = CMat::zeros(self.mats[0].raw_dim());
        for i in self.grid.trimmed() {
            ndarray::Zip::from(&mut env)
                .and(&self.mats[i])
                .for_each(|e, z| {
                    if z.norm() > e.re {
                        *e = cr(z.norm());
                    }
                });
        }
        env
    }

    /// Cubic Lagrange interpolation of the entries at time t.
    pub fn interpolate(&self, t: f64) -> CMat {
        let (start, w) = cubic_weights(&self.grid, t);
        let mut acc = CMat::zeros(self.mats[0].raw_dim());
        for j in 0..4 {
            acc.scaled_add(cr(w[j]), &self.mats[start + j]);
        }
        acc
    }
}

/// Four-point Lagrange weights at t, using the stencil that best centres t.
pub fn cubic_weights(grid: &TimeGrid, t: f64) -> (usize, [f64; 4]) {
    let n = grid.n_nodes;
    let u = (t - grid.t_min) / grid.dt();
    let base = (u.floor() as i64 - 1).clamp(0, n as i64 - 4) as usize;
    let x = u - base as f64;
    let mut w = [0.0; 4];
    for (j, wj) in w.iter_mut().enumerate() {
        let mut p = 1.0;
        for m in 0..4 {
            if m != j {
                p *= (x - m as f64) / (j as f64 - m as f64);
            }
        }
        *wj = p;
    }
    (base, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 0.0, 20).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 8).is_err());
        let g = TimeGrid::new(-10.0, 10.0, 201).unwrap();
        assert!((g.dt() - 0.1).abs() < 1e-15);
        assert_eq!(g.node(200), 10.0);
        assert_eq!(g.nearest(0.04), 100);
    }

    #[test]
    fn fd_is_fourth_order() {
        let err = |n: usize| {
            let g = TimeGrid::new(0.0, 1.0, n).unwrap();
            let v: Vec<f64> = g.nodes().iter().map(|t| (3.0 * t).sin()).collect();
            let d = fd_derivative(&v, g.dt());
            g.nodes()
                .iter()
                .zip(d)
                .map(|(t, di)| (di - 3.0 * (3.0 * t).cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(41) / err(81);
        assert!(ratio > 12.0 && ratio < 40.0, "ratio {ratio}");
    }

    #[test]
    fn quartic_is_differentiated_exactly() {
        let g = TimeGrid::new(-1.0, 2.0, 13).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|t| t.powi(4) - 2.0 * t).collect();
        let d = fd_derivative(&v, g.dt());
        for (t, di) in g.nodes().iter().zip(d) {
            assert!((di - (4.0 * t.powi(3) - 2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn cubic_interpolation_exact_on_cubics() {
        let g = TimeGrid::new(0.0, 2.0, 11).unwrap();
        let fam = OpFamily::from_fn(g, |i| {
            let t = g.node(i);
            CMat::from_elem((1, 1), cr(t * t * t - t))
        });
        for &t in &[0.0, 0.03, 0.77, 1.99, 2.0] {
            let v = fam.interpolate(t)[[0, 0]].re;
            assert!((v - (t * t * t - t)).abs() < 1e-12);
        }
    }
}
