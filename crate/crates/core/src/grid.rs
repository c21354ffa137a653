//! Graded radial grids on `(0, πR)` and fields sampled on them.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::manifold::SphereModel;
use crate::quadrature::Quadrature;

pub const DEFAULT_NODES: usize = 4096;

/// Nodes clustered geometrically at the pole, together with the lumped
/// integration weights used by the discrete energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGrid {
    pub model: SphereModel,
    pub nodes: Vec<f64>,
    /// `∫ ω` over the dual cell of each node.
    pub quadrature_weights: Vec<f64>,
    /// `∫ ω / r²` over the dual cell of each node.
    pub hardy_weights: Vec<f64>,
    /// `∫ ω` over each primal cell `[r_i, r_{i+1}]`.
    pub cell_weights: Vec<f64>,
    pub grading: String,
}

impl RadialGrid {
    /// Geometric grid from `first = 1e-6 R` to `πR (1 - 1e-3)`.
    pub fn graded(model: SphereModel, count: usize) -> Result<Self> {
        Self::graded_with(model, count, 1e-6 * model.radius, 1e-3)
    }

    pub fn graded_with(model: SphereModel, count: usize, first: f64, antipode_gap: f64) -> Result<Self> {
        if count < 8 {
            return Err(invalid("nodes", format!("need at least 8 nodes, got {count}")));
        }
        let last = model.injectivity_radius() * (1.0 - antipode_gap);
        if !(first > 0.0 && first < last) {
            return Err(invalid("first_node", format!("must lie in (0, {last}), got {first}")));
        }
        let ratio = (last / first).powf(1.0 / (count - 1) as f64);
        let mut nodes: Vec<f64> = (0..count).map(|i| first * ratio.powi(i as i32)).collect();
        nodes[count - 1] = last;
        let grading = format!("geometric, ratio {ratio:.9}, first node {first:e}, last node {last:.12}");
        Self::from_nodes(model, nodes, grading)
    }

    pub fn from_nodes(model: SphereModel, nodes: Vec<f64>, grading: String) -> Result<Self> {
        let max = model.injectivity_radius();
        if nodes.len() < 2
            || nodes.windows(2).any(|w| !(w[1] > w[0]))
            || nodes[0] <= 0.0
            || *nodes.last().unwrap() >= max
        {
            return Err(invalid("nodes", "nodes must be strictly increasing inside (0, πR)"));
        }
        let quad = Quadrature::new(1e-13)?;
        let omega = |r: f64| model.measure_weight(r);
        let omega_r2 =
            |r: f64| r.powi(model.n as i32 - 3) * model.density(r) * crate::constants::sphere_volume(model.n - 1);
        let count = nodes.len();
        let mut dual = Vec::with_capacity(count + 1);
        dual.push(0.0);
        for w in nodes.windows(2) {
            dual.push(0.5 * (w[0] + w[1]));
        }
        dual.push(max);
        let mut quadrature_weights = Vec::with_capacity(count);
        let mut hardy_weights = Vec::with_capacity(count);
        for i in 0..count {
            quadrature_weights.push(quad.integrate(omega, dual[i], dual[i + 1])?.value);
            hardy_weights.push(quad.integrate(omega_r2, dual[i], dual[i + 1])?.value);
        }
        let mut cell_weights = Vec::with_capacity(count - 1);
        for w in nodes.windows(2) {
            cell_weights.push(quad.integrate(omega, w[0], w[1])?.value);
        }
        Ok(Self {
            model,
            nodes,
            quadrature_weights,
            hardy_weights,
            cell_weights,
            grading,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.quadrature_weights.iter().sum()
    }

    /// Index `i` with `nodes[i] ≤ r < nodes[i+1]`, clamped to valid cells.
    pub fn locate(&self, r: f64) -> usize {
        let i = self.nodes.partition_point(|&x| x <= r);
        i.saturating_sub(1).min(self.nodes.len() - 2)
    }
}

/// Nodal values on a shared grid, read as a continuous piecewise-linear
/// function that is constant before the first and after the last node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteRadialField {
    #[serde(skip)]
    pub grid: Arc<RadialGrid>,
    pub values: Vec<f64>,
}

impl DiscreteRadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(
                "values",
                format!("expected {} values, got {}", grid.len(), values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("values", "field values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn sample(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes.iter().map(|&r| f(r)).collect();
        Self::new(grid, values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn interpolate(&self, r: f64) -> f64 {
        let nodes = &self.grid.nodes;
        if r <= nodes[0] {
            return self.values[0];
        }
        if r >= *nodes.last().unwrap() {
            return *self.values.last().unwrap();
        }
        let i = self.grid.locate(r);
        let t = (r - nodes[i]) / (nodes[i + 1] - nodes[i]);
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    pub fn slope(&self, r: f64) -> f64 {
        let nodes = &self.grid.nodes;
        if r <= nodes[0] || r >= *nodes.last().unwrap() {
            return 0.0;
        }
        let i = self.grid.locate(r);
        (self.values[i + 1] - self.values[i]) / (nodes[i + 1] - nodes[i])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_reproduce_volume() {
        for n in [3u32, 5, 6] {
            let model = SphereModel::new(n, 1.0).unwrap();
            let grid = RadialGrid::graded(model, 512).unwrap();
            assert!(grid.nodes[0] <= 1e-6);
            assert!(*grid.nodes.last().unwrap() < model.injectivity_radius());
            let rel = (grid.total_weight() - model.volume()).abs() / model.volume();
            assert!(rel < 1e-8, "n={n} rel={rel}");
            let cells: f64 = grid.cell_weights.iter().sum();
            assert!(cells < model.volume());
        }
    }

    #[test]
    fn interpolation() {
        let model = SphereModel::new(4, 1.0).unwrap();
        let grid = Arc::new(RadialGrid::graded(model, 64).unwrap());
        let f = DiscreteRadialField::sample(Arc::clone(&grid), |r| 2.0 * r + 1.0).unwrap();
        for r in [0.01, 0.5, 2.0] {
            assert!((f.interpolate(r) - (2.0 * r + 1.0)).abs() < 1e-12);
            assert!((f.slope(r) - 2.0).abs() < 1e-9);
        }
        assert_eq!(f.slope(0.0), 0.0);
        assert!(DiscreteRadialField::new(grid, vec![0.0; 3]).is_err());
    }
}
