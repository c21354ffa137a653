//! Continuous radial fields about the pole and their energies on the sphere.

use serde::Serialize;

use crate::bubbles::{BubbleProfile, EnergyBreakdown};
use crate::constants::critical_exponent;
use crate::error::{Error, Result};
use crate::grid::DiscreteRadialField;
use crate::manifold::{Cutoff, PotentialField, SphereModel};
use crate::quadrature::{Estimate, Quadrature, RadialHints, Upper};

/// A radial function on the sphere, with enough structure for accurate
/// quadrature.
pub trait RadialProfile: Sync {
    fn value(&self, r: f64) -> f64;
    fn derivative(&self, r: f64) -> f64;
    /// Radius beyond which the profile vanishes, if any.
    fn support(&self) -> Option<f64>;
    fn breakpoints(&self) -> Vec<f64>;
    /// `σ` with `u ~ r^σ` as `r → 0`; `0` for profiles bounded at the pole.
    fn leading_exponent(&self) -> f64;
}

/// `η(r) U_μ(r)`, a Euclidean bubble cut off on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GluedBubble {
    pub bubble: BubbleProfile,
    pub cutoff: Cutoff,
}

impl GluedBubble {
    pub fn new(bubble: BubbleProfile, cutoff: Cutoff) -> Self {
        Self { bubble, cutoff }
    }
}

impl RadialProfile for GluedBubble {
    #[inline]
    fn value(&self, r: f64) -> f64 {
        let eta = self.cutoff.value(r);
        if eta == 0.0 {
            0.0
        } else {
            eta * self.bubble.value(r)
        }
    }

    #[inline]
    fn derivative(&self, r: f64) -> f64 {
        if r >= self.cutoff.support() {
            return 0.0;
        }
        let eta = self.cutoff.value(r);
        let d_eta = self.cutoff.derivative(r);
        let u = self.bubble.value(r);
        let du = self.bubble.value_derivative(r);
        if d_eta == 0.0 {
            eta * du
        } else {
            d_eta * u + eta * du
        }
    }

    fn support(&self) -> Option<f64> {
        Some(self.cutoff.support())
    }

    fn breakpoints(&self) -> Vec<f64> {
        let s = self.bubble.scale;
        let mut pts: Vec<f64> = [1e-2, 1e-1, 1.0, 10.0, 100.0]
            .iter()
            .map(|k| k * s)
            .filter(|&p| p < self.cutoff.delta)
            .collect();
        pts.push(self.cutoff.delta);
        pts
    }

    fn leading_exponent(&self) -> f64 {
        let p = &self.bubble.params;
        (p.a() - 1.0) * (p.dim() - 2.0) / 2.0
    }
}

impl RadialProfile for DiscreteRadialField {
    fn value(&self, r: f64) -> f64 {
        self.interpolate(r)
    }

    fn derivative(&self, r: f64) -> f64 {
        self.slope(r)
    }

    fn support(&self) -> Option<f64> {
        None
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.grid.nodes.clone()
    }

    fn leading_exponent(&self) -> f64 {
        0.0
    }
}

/// A sum of glued pole bubbles and an optional grid-based background.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeField {
    pub bubbles: Vec<GluedBubble>,
    pub background: Option<DiscreteRadialField>,
}

impl CompositeField {
    pub fn new(bubbles: Vec<GluedBubble>, background: Option<DiscreteRadialField>) -> Self {
        Self { bubbles, background }
    }
}

impl RadialProfile for CompositeField {
    fn value(&self, r: f64) -> f64 {
        let mut v: f64 = self.bubbles.iter().map(|b| b.value(r)).sum();
        if let Some(bg) = &self.background {
            v += bg.interpolate(r);
        }
        v
    }

    fn derivative(&self, r: f64) -> f64 {
        let mut v: f64 = self.bubbles.iter().map(|b| b.derivative(r)).sum();
        if let Some(bg) = &self.background {
            v += bg.slope(r);
        }
        v
    }

    fn support(&self) -> Option<f64> {
        if self.background.is_some() {
            return None;
        }
        self.bubbles
            .iter()
            .filter_map(|b| b.support())
            .fold(None, |m, s| Some(m.map_or(s, |m: f64| m.max(s))))
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.bubbles.iter().flat_map(|b| b.breakpoints()).collect();
        if let Some(bg) = &self.background {
            pts.extend(bg.grid.nodes.iter().copied());
        }
        pts
    }

    fn leading_exponent(&self) -> f64 {
        self.bubbles.iter().map(|b| b.leading_exponent()).fold(0.0, f64::min)
    }
}

fn hint(exponent: Option<f64>, breakpoints: &[f64]) -> RadialHints {
    let mut h = RadialHints::new().breakpoints(breakpoints.iter().copied());
    if let Some(e) = exponent {
        h = h.zero_power(e);
    }
    h
}

/// Integrals of a profile on `S^n(R)` with the measure `ω(r) dr`:
/// `∫|∇u|²`, `∫ h u²/ρ²`, `∫|u|^{2*}`.
pub fn sphere_energy<P: RadialProfile + ?Sized>(
    profile: &P,
    model: &SphereModel,
    potential: &PotentialField,
    quad: &Quadrature,
) -> Result<EnergyBreakdown> {
    let n = model.n;
    let nf = n as f64;
    let two_star = critical_exponent(n);
    let max = model.injectivity_radius();
    let upper = profile.support().map_or(max, |s| s.min(max));
    let mut bps = profile.breakpoints();
    bps.push(potential.delta_cap);
    bps.retain(|&p| p > 0.0 && p < upper);
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let sigma = profile.leading_exponent();
    let singular = sigma < 0.0;
    let grad_exp = singular.then_some(2.0 * sigma + nf - 3.0);
    let hardy_exp = singular.then_some(2.0 * sigma + nf - 3.0);
    let crit_exp = singular.then_some(two_star * sigma + nf - 1.0);
    let to = Upper::Finite(upper);

    let grad = quad.radial(
        |r| profile.derivative(r).powi(2) * model.measure_weight(r),
        0.0,
        to,
        &hint(grad_exp, &bps),
    )?;
    let hardy = if potential.h0 == 0.0 && potential.h2 == 0.0 {
        Estimate { value: 0.0, error: 0.0 }
    } else {
        quad.radial(
            |r| potential.value(r) * profile.value(r).powi(2) * model.measure_weight(r) / (r * r),
            0.0,
            to,
            &hint(hardy_exp, &bps),
        )?
    };
    let crit = quad.radial(
        |r| profile.value(r).abs().powf(two_star) * model.measure_weight(r),
        0.0,
        to,
        &hint(crit_exp, &bps),
    )?;
    Ok(EnergyBreakdown::from_integrals(n, grad, hardy, crit))
}

/// Nehari-projected energy from the three integrals:
/// `J_h(Φ(u)) = (1/n) (N / D^{2/2*})^{n/2}` with `N = ∫|∇u|² - ∫h u²/ρ²`.
pub fn projected_energy(n: u32, e: &EnergyBreakdown) -> Result<f64> {
    let numerator = e.gradient - e.hardy;
    if !(numerator > 0.0 && e.critical > 0.0) {
        return Err(Error::NehariUndefined {
            numerator,
            denominator: e.critical,
        });
    }
    Ok(e.quotient(n).powf(n as f64 / 2.0) / n as f64)
}

/// Factor `t` with `t·u` on the Nehari manifold: `(N/D)^{(n-2)/4}`.
pub fn nehari_factor(n: u32, e: &EnergyBreakdown) -> Result<f64> {
    let numerator = e.gradient - e.hardy;
    if !(numerator > 0.0 && e.critical > 0.0) {
        return Err(Error::NehariUndefined {
            numerator,
            denominator: e.critical,
        });
    }
    Ok((numerator / e.critical).powf((n as f64 - 2.0) / 4.0))
}

/// `J_h(t u)` from the unscaled integrals.
pub fn energy_along_ray(n: u32, e: &EnergyBreakdown, t: f64) -> f64 {
    let two_star = critical_exponent(n);
    0.5 * t * t * (e.gradient - e.hardy) - t.abs().powf(two_star) * e.critical / two_star
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubbles::Functional;
    use crate::constants::{compute_constants, ProblemParams};

    #[test]
    fn tiny_glued_bubble_matches_flat_energy() {
        let p = ProblemParams::from_hardy_fraction(5, 0.5).unwrap();
        let model = SphereModel::new(5, 1.0).unwrap();
        let c = compute_constants(&p).unwrap();
        let b = GluedBubble::new(BubbleProfile::singular(p, 1e-4).unwrap(), Cutoff::new(0.3).unwrap());
        let q = Quadrature::new(1e-11).unwrap();
        let e = sphere_energy(&b, &model, &PotentialField::constant(p.lambda), &q).unwrap();
        assert!((e.total - c.big_d_star).abs() / c.big_d_star < 1e-3);
        let flat = b.bubble.energy(Functional::JInfinity, &q).unwrap();
        assert!((e.gradient - flat.gradient).abs() / flat.gradient < 1e-3);
    }

    #[test]
    fn projection_maximises_along_ray() {
        let p = ProblemParams::from_hardy_fraction(4, 0.3).unwrap();
        let model = SphereModel::new(4, 1.0).unwrap();
        let b = GluedBubble::new(BubbleProfile::singular(p, 0.01).unwrap(), Cutoff::new(0.3).unwrap());
        let q = Quadrature::default();
        let e = sphere_energy(&b, &model, &PotentialField::constant(p.lambda), &q).unwrap();
        let t = nehari_factor(4, &e).unwrap();
        let j = projected_energy(4, &e).unwrap();
        assert!((energy_along_ray(4, &e, t) - j).abs() < 1e-12 * j);
        for k in 1..200 {
            let s = t * (0.5 + k as f64 / 100.0);
            assert!(energy_along_ray(4, &e, s) <= j * (1.0 + 1e-12));
        }
    }

    #[test]
    fn negative_numerator_reported() {
        let e = EnergyBreakdown {
            gradient: 1.0,
            hardy: 2.0,
            critical: 1.0,
            total: 0.0,
            error: 0.0,
        };
        assert!(matches!(projected_energy(4, &e), Err(Error::NehariUndefined { .. })));
    }
}
