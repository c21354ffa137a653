//! Discrete radial `J_h` on a graded grid, the Nehari projection, and a
//! projected-descent minimiser with a Newton polish.
//!
//! With nodal values `u_i`, cell widths `k_i = r_{i+1} - r_i`, primal cell
//! masses `Ω_i`, dual masses `W_i` and Hardy masses `H_i` (see
//! [`RadialGrid`]):
//!
//! `J_h(u) = ½ Σ Ω_i ((u_{i+1}-u_i)/k_i)² - ½ Σ h(r_i) H_i u_i² - (1/2*) Σ W_i |u_i|^{2*}`.
//!
//! Both ends carry natural boundary conditions; the measure vanishes at the
//! antipode and the first node sits at `10⁻⁶ R`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::bubbles::EnergyBreakdown;
use crate::constants::{compute_constants, critical_exponent, ProblemParams};
use crate::error::{invalid, Error, Result};
use crate::expansion::test_function;
use crate::grid::{DiscreteRadialField, RadialGrid};
use crate::manifold::{PotentialField, SphereModel};

/// Discrete functional on a fixed grid and potential.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    pub grid: Arc<RadialGrid>,
    pub potential: PotentialField,
    n: u32,
    two_star: f64,
    /// `Ω_i / k_i²`
    stiffness: Vec<f64>,
    /// `h(r_i) H_i`
    hardy: Vec<f64>,
}

impl DiscreteProblem {
    pub fn new(grid: Arc<RadialGrid>, potential: PotentialField) -> Self {
        let n = grid.model.n;
        let stiffness = grid
            .cell_weights
            .iter()
            .zip(grid.nodes.windows(2))
            .map(|(w, r)| w / (r[1] - r[0]).powi(2))
            .collect();
        let hardy = grid
            .nodes
            .iter()
            .zip(&grid.hardy_weights)
            .map(|(&r, &h)| potential.value(r) * h)
            .collect();
        Self {
            grid,
            potential,
            n,
            two_star: critical_exponent(n),
            stiffness,
            hardy,
        }
    }

    pub fn model(&self) -> &SphereModel {
        &self.grid.model
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.grid.len() {
            return Err(invalid(
                "field",
                format!("expected {} values, got {}", self.grid.len(), u.len()),
            ));
        }
        Ok(())
    }

    /// `∫|∇u|²`, `∫h u²/ρ²`, `∫|u|^{2*}` and `J_h(u)`.
    pub fn components(&self, u: &[f64]) -> EnergyBreakdown {
        let grad: f64 = self
            .stiffness
            .iter()
            .zip(u.windows(2))
            .map(|(s, w)| s * (w[1] - w[0]).powi(2))
            .sum();
        let hardy: f64 = self.hardy.iter().zip(u).map(|(h, v)| h * v * v).sum();
        let crit: f64 = self
            .grid
            .quadrature_weights
            .iter()
            .zip(u)
            .map(|(w, v)| w * v.abs().powf(self.two_star))
            .sum();
        EnergyBreakdown {
            gradient: grad,
            hardy,
            critical: crit,
            total: 0.5 * (grad - hardy) - crit / self.two_star,
            error: 0.0,
        }
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        self.components(u).total
    }

    /// `∂J_h/∂u_i`.
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let p = self.two_star - 2.0;
        let w = &self.grid.quadrature_weights;
        let mut g: Vec<f64> = (0..u.len())
            .map(|i| -self.hardy[i] * u[i] - w[i] * u[i].abs().powf(p) * u[i])
            .collect();
        for (i, s) in self.stiffness.iter().enumerate() {
            let flux = s * (u[i + 1] - u[i]);
            g[i] -= flux;
            g[i + 1] += flux;
        }
        g
    }

    /// Tridiagonal Hessian as `(diagonal, off-diagonal)`.
    pub fn hessian(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.two_star - 2.0;
        let w = &self.grid.quadrature_weights;
        let mut diag: Vec<f64> = (0..u.len())
            .map(|i| -self.hardy[i] - (self.two_star - 1.0) * w[i] * u[i].abs().powf(p))
            .collect();
        for (i, s) in self.stiffness.iter().enumerate() {
            diag[i] += s;
            diag[i + 1] += s;
        }
        let off = self.stiffness.iter().map(|s| -s).collect();
        (diag, off)
    }

    /// `sqrt(Σ g_i² / W_i)`: the `L²(ω)` norm of the pointwise residual
    /// `g_i / W_i` of the radial equation.
    pub fn residual_norm(&self, u: &[f64]) -> f64 {
        let g = self.gradient(u);
        g.iter()
            .zip(&self.grid.quadrature_weights)
            .map(|(g, w)| g * g / w)
            .sum::<f64>()
            .sqrt()
    }

    /// Factor `t` with `DJ_h(tu)·tu = 0`.
    pub fn nehari_factor(&self, u: &[f64]) -> Result<f64> {
        let e = self.components(u);
        let numerator = e.gradient - e.hardy;
        if !(numerator > 0.0 && e.critical > 0.0) {
            return Err(Error::NehariUndefined {
                numerator,
                denominator: e.critical,
            });
        }
        Ok((numerator / e.critical).powf(1.0 / (self.two_star - 2.0)))
    }

    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        let t = self.nehari_factor(u)?;
        Ok(u.iter().map(|v| t * v).collect())
    }

    /// `J_h(Φ(u)) = (1/n) (N / D^{2/2*})^{n/2}`, without forming `Φ(u)`.
    pub fn projected_energy(&self, u: &[f64]) -> Result<f64> {
        let e = self.components(u);
        let numerator = e.gradient - e.hardy;
        if !(numerator > 0.0 && e.critical > 0.0) {
            return Err(Error::NehariUndefined {
                numerator,
                denominator: e.critical,
            });
        }
        let nf = self.n as f64;
        Ok((numerator / e.critical.powf(2.0 / self.two_star)).powf(nf / 2.0) / nf)
    }

    /// `(K + M) x = b` with `K` the stiffness and `M = diag(W)`.
    fn precondition(&self, b: &[f64]) -> Vec<f64> {
        let w = &self.grid.quadrature_weights;
        let mut diag: Vec<f64> = w.to_vec();
        for (i, s) in self.stiffness.iter().enumerate() {
            diag[i] += s;
            diag[i + 1] += s;
        }
        let off: Vec<f64> = self.stiffness.iter().map(|s| -s).collect();
        thomas(&diag, &off, b)
    }
}

/// Tridiagonal solve for symmetric positive-definite systems.
fn thomas(diag: &[f64], off: &[f64], b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = b[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / m;
        }
        d[i] = (b[i] - off[i - 1] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Tridiagonal solve with partial pivoting, for indefinite systems.
/// Returns `None` for a numerically singular matrix.
pub fn solve_tridiagonal(diag: &[f64], off: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    // rows hold (sub, main, super, super2) after elimination
    let mut dl: Vec<f64> = off.to_vec();
    let mut d: Vec<f64> = diag.to_vec();
    let mut du: Vec<f64> = off.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut x: Vec<f64> = b.to_vec();
    let scale = diag.iter().chain(off).fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = scale * 1e-300;
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i].abs() <= tiny {
                return None;
            }
            let f = dl[i] / d[i];
            d[i + 1] -= f * du[i];
            x[i + 1] -= f * x[i];
            dl[i] = 0.0;
        } else {
            let f = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - f * tmp;
            if i < n - 2 {
                du2[i] = du[i + 1];
                du[i + 1] *= -f;
            }
            du[i] = tmp;
            x.swap(i, i + 1);
            x[i + 1] -= f * x[i];
        }
    }
    if d[n - 1].abs() <= tiny {
        return None;
    }
    x[n - 1] /= d[n - 1];
    if n > 1 {
        x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Discrete `J_h` and its three integrals.
pub fn discrete_energy(field: &DiscreteRadialField, potential: &PotentialField) -> EnergyBreakdown {
    DiscreteProblem::new(Arc::clone(&field.grid), *potential).components(&field.values)
}

pub fn nehari_project(field: &DiscreteRadialField, potential: &PotentialField) -> Result<DiscreteRadialField> {
    let problem = DiscreteProblem::new(Arc::clone(&field.grid), *potential);
    DiscreteRadialField::new(Arc::clone(&field.grid), problem.project(&field.values)?)
}

pub fn residual_norm(field: &DiscreteRadialField, potential: &PotentialField) -> f64 {
    DiscreteProblem::new(Arc::clone(&field.grid), *potential).residual_norm(&field.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop descent once the relative energy decrease of a step falls below this.
    pub energy_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub newton_iterations: usize,
    pub newton_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            energy_tol: 1e-10,
            armijo: 1e-4,
            shrink: 0.5,
            newton_iterations: 60,
            newton_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    #[serde(rename = "in_0_Dstar")]
    InZeroDStar,
    #[serde(rename = "in_Dstar_2Dstar")]
    InDStarTwoDStar,
    #[serde(rename = "at_or_above_2Dstar")]
    AtOrAboveTwoDStar,
    Nonpositive,
}

/// Places `energy` against `0 < D* < 2D*` with margin `1e-8 D*`. The flag is
/// set when the value lies within the margin of a window edge.
pub fn classify(energy: f64, d_star: f64) -> (Classification, bool) {
    let margin = 1e-8 * d_star;
    let near = |edge: f64| (energy - edge).abs() <= margin;
    let boundary = near(0.0) || near(d_star) || near(2.0 * d_star);
    let class = if energy <= 0.0 {
        Classification::Nonpositive
    } else if energy < d_star {
        Classification::InZeroDStar
    } else if energy < 2.0 * d_star {
        Classification::InDStarTwoDStar
    } else {
        Classification::AtOrAboveTwoDStar
    };
    (class, boundary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverResult {
    pub minimizer: DiscreteRadialField,
    pub energy: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub classification: Classification,
    pub boundary: bool,
    pub d_star: f64,
    /// `|J_h(u) - (1/n)∫|u|^{2*}| / J_h(u)` at the returned field.
    pub nehari_defect: f64,
    #[serde(skip)]
    pub energy_history: Vec<f64>,
    pub diagnostics: Vec<String>,
}

/// Projected descent `u ← Φ(u - s P⁻¹∇J_h(u))` with Armijo backtracking,
/// `P` the discrete `H¹` operator, followed by Newton on `∇J_h = 0`.
pub fn minimize(
    initial: &DiscreteRadialField,
    potential: &PotentialField,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let problem = DiscreteProblem::new(Arc::clone(&initial.grid), *potential);
    problem.check(&initial.values)?;
    let params = ProblemParams::new(problem.n, potential.h0.max(0.0))?;
    let d_star = compute_constants(&params)?.big_d_star;
    let mut diagnostics = Vec::new();
    let mut u = problem.project(&initial.values)?;
    let mut energy = problem.energy(&u);
    let mut history = vec![energy];
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut small_steps = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let g = problem.gradient(&u);
        let mut d = problem.precondition(&g);
        d.iter_mut().for_each(|v| *v = -*v);
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            break;
        }
        step = (step * 2.0).min(1e12);
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            if let Ok(p) = problem.project(&trial) {
                let e = problem.energy(&p);
                if e <= energy + config.armijo * step * slope {
                    accepted = Some((p, e));
                    break;
                }
            }
            step *= config.shrink;
        }
        let Some((next, e)) = accepted else {
            diagnostics.push(format!("line search failed at iteration {iterations}"));
            break;
        };
        let decrease = (energy - e) / energy.abs().max(f64::MIN_POSITIVE);
        u = next;
        energy = e;
        history.push(e);
        if decrease < config.energy_tol {
            small_steps += 1;
            if small_steps >= 5 {
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    if iterations >= config.max_iterations {
        diagnostics.push(format!(
            "descent stopped at the iteration cap {}",
            config.max_iterations
        ));
    }

    let mut newton_iterations = 0;
    let mut res = problem.residual_norm(&u);
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..config.newton_iterations {
        if res <= config.newton_tol {
            break;
        }
        let g = problem.gradient(&u);
        let (diag, off) = problem.hessian(&u);
        let Some(delta) = solve_tridiagonal(&diag, &off, &g) else {
            diagnostics.push("singular Hessian during Newton polish".into());
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a - t * b).collect();
            let r = problem.residual_norm(&trial);
            if r < res && r.is_finite() {
                u = trial;
                res = r;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        newton_iterations += 1;
        if !improved {
            diagnostics.push(format!("Newton polish stalled at residual {res:.3e}"));
            break;
        }
    }
    let polished = problem.energy(&u);
    let drift = u.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
    if !(drift > 0.5 && drift < 2.0) || polished > energy * (1.0 + 1e-6) + 1e-12 {
        diagnostics.push("Newton polish left the descent basin; reverting".into());
        u = problem.project(&u).unwrap_or(u);
    }
    let energy = problem.energy(&u);
    history.push(energy);
    let e = problem.components(&u);
    let nehari_defect = (energy - e.critical / problem.n as f64).abs() / energy.abs().max(f64::MIN_POSITIVE);
    let (classification, boundary) = classify(energy, d_star);
    let u_final = u;
    Ok(SolverResult {
        minimizer: DiscreteRadialField::new(Arc::clone(&initial.grid), u_final.clone())?,
        energy,
        residual_norm: problem.residual_norm(&u_final),
        iterations,
        newton_iterations,
        classification,
        boundary,
        d_star,
        nehari_defect,
        energy_history: history,
        diagnostics,
    })
}

/// Seeds `ε_k = δ/2 · 3^{-k}`, `k = 0..count`, for a given `δ`.
pub fn seed_scales(delta: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| delta / 2.0 * 3f64.powi(-(k as i32))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultistartResult {
    pub seeds: Vec<f64>,
    pub energies: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(max - min) / min` over the seed energies.
    pub spread: f64,
    pub best: SolverResult,
}

/// Runs [`minimize`] from `Φ(φ_ε)` for each seed scale in parallel; the
/// lowest energy wins, ties going to the earlier seed.
pub fn multistart(
    grid: &Arc<RadialGrid>,
    potential: &PotentialField,
    params: &ProblemParams,
    delta: f64,
    seeds: &[f64],
    config: &SolverConfig,
) -> Result<MultistartResult> {
    if seeds.is_empty() {
        return Err(invalid("seeds", "need at least one seed"));
    }
    let results: Vec<SolverResult> = seeds
        .par_iter()
        .map(|&eps| {
            let init = test_function(grid, params, eps, delta)?;
            minimize(&init, potential, config)
        })
        .collect::<Result<_>>()?;
    let energies: Vec<f64> = results.iter().map(|r| r.energy).collect();
    let residuals: Vec<f64> = results.iter().map(|r| r.residual_norm).collect();
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best_idx = energies.iter().position(|&e| e == lo).unwrap();
    Ok(MultistartResult {
        seeds: seeds.to_vec(),
        energies,
        residuals,
        spread: (hi - lo) / lo.abs(),
        best: results.into_iter().nth(best_idx).unwrap(),
    })
}
