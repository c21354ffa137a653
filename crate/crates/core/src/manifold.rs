//! Round sphere `S^n(R)` with the singular point at a pole, written in
//! geodesic polar coordinates about that pole.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::sphere_volume;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereModel {
    pub n: u32,
    pub radius: f64,
}

impl SphereModel {
    pub fn new(n: u32, radius: f64) -> Result<Self> {
        if n < 3 {
            return Err(invalid("n", "n must be ≥ 3"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid(
                "sphere_radius",
                format!("must be a positive number, got {radius}"),
            ));
        }
        Ok(Self { n, radius })
    }

    /// `δ_g = πR`, the distance from the pole to the antipode.
    pub fn injectivity_radius(&self) -> f64 {
        PI * self.radius
    }

    pub fn scal(&self) -> f64 {
        let n = self.n as f64;
        n * (n - 1.0) / (self.radius * self.radius)
    }

    /// Distance to the pole, `min(r, δ_g)`.
    pub fn rho(&self, r: f64) -> Result<f64> {
        let max = self.injectivity_radius();
        if !(0.0..=max).contains(&r) {
            return Err(Error::OutOfDomain { r, max });
        }
        Ok(r.min(max))
    }

    /// `G(r) = (R sin(r/R) / r)^{n-1}`.
    pub fn volume_density(&self, r: f64) -> Result<f64> {
        let max = self.injectivity_radius();
        if !(r >= 0.0 && r < max) {
            return Err(Error::OutOfDomain { r, max });
        }
        Ok(self.density(r))
    }

    /// Unchecked `G(r)`; accurate down to `r = 0`.
    #[inline]
    pub fn density(&self, r: f64) -> f64 {
        let x = r / self.radius;
        let ratio = if x.abs() < 1e-4 {
            let x2 = x * x;
            1.0 - x2 / 6.0 + x2 * x2 / 120.0
        } else {
            x.sin() / x
        };
        ratio.powi(self.n as i32 - 1)
    }

    /// Radial measure `ω(r) = w_{n-1} (R sin(r/R))^{n-1}`, so that
    /// `∫_{S^n} f(ρ) dv = ∫_0^{πR} f(r) ω(r) dr`.
    #[inline]
    pub fn measure_weight(&self, r: f64) -> f64 {
        sphere_volume(self.n - 1) * (self.radius * (r / self.radius).sin()).powi(self.n as i32 - 1)
    }

    /// `(n-1) cot(r/R) / R`, the mean curvature of the geodesic sphere.
    pub fn mean_curvature(&self, r: f64) -> f64 {
        (self.n as f64 - 1.0) / (self.radius * (r / self.radius).tan())
    }

    /// `w_n R^n`.
    pub fn volume(&self) -> f64 {
        sphere_volume(self.n) * self.radius.powi(self.n as i32)
    }
}

/// Smooth radial cutoff: `1` on `[0, δ]`, `0` on `[2δ, ∞)`, with a quintic
/// smoothstep in between. `|η'| ≤ 15/(8δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub delta: f64,
}

pub const CUTOFF_SLOPE_BOUND: f64 = 1.875;

impl Cutoff {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(invalid("delta", format!("must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn for_model(delta: f64, model: &SphereModel) -> Result<Self> {
        if !(2.0 * delta < model.injectivity_radius()) {
            return Err(invalid(
                "delta",
                format!(
                    "2·delta must be < πR = {}, got delta = {delta}",
                    model.injectivity_radius()
                ),
            ));
        }
        Self::new(delta)
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let x = (r - self.delta) / self.delta;
        if x <= 0.0 {
            1.0
        } else if x >= 1.0 {
            0.0
        } else {
            1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
        }
    }

    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        let x = (r - self.delta) / self.delta;
        if x <= 0.0 || x >= 1.0 {
            0.0
        } else {
            let s = 1.0 - x;
            -30.0 * x * x * s * s / self.delta
        }
    }

    pub fn support(&self) -> f64 {
        2.0 * self.delta
    }
}

/// Radial potential `h(r) = h0 + h2 min(r, δ_cap)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub h0: f64,
    pub h2: f64,
    pub delta_cap: f64,
}

impl PotentialField {
    pub fn new(h0: f64, h2: f64, delta_cap: f64) -> Result<Self> {
        if !h0.is_finite() || !h2.is_finite() {
            return Err(invalid("h0", "h0 and h2 must be finite"));
        }
        if !(delta_cap > 0.0) {
            return Err(invalid("delta_cap", format!("must be positive, got {delta_cap}")));
        }
        Ok(Self { h0, h2, delta_cap })
    }

    pub fn constant(h0: f64) -> Self {
        Self {
            h0,
            h2: 0.0,
            delta_cap: f64::INFINITY,
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let c = r.min(self.delta_cap);
        self.h0 + self.h2 * c * c
    }

    /// `h(r)` with the domain check `r ∈ [0, πR]`.
    pub fn potential(&self, model: &SphereModel, r: f64) -> Result<f64> {
        model.rho(r)?;
        Ok(self.value(r))
    }

    /// `Δh(p)` with `Δ = -div ∇`.
    pub fn lap_h_p(&self, n: u32) -> f64 {
        -2.0 * n as f64 * self.h2
    }

    /// `Δh(p)` with the analyst's sign, `Δ = div ∇`.
    pub fn lap_h_p_analyst(&self, n: u32) -> f64 {
        2.0 * n as f64 * self.h2
    }

    /// Validates `0 < h0 < 1/K(n,2,-2)^2` for use in the singular problem.
    pub fn check_singular(&self, n: u32) -> Result<()> {
        let limit = crate::constants::hardy_critical_lambda(n);
        if !(self.h0 > 0.0 && self.h0 < limit) {
            return Err(invalid("h0", format!("must lie in (0, {limit}), got {}", self.h0)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{Quadrature, RadialHints, Upper};

    #[test]
    fn rho_domain() {
        let m = SphereModel::new(4, 1.0).unwrap();
        assert_eq!(m.rho(0.1).unwrap(), 0.1);
        assert_eq!(m.rho(PI).unwrap(), PI);
        let m2 = SphereModel::new(4, 2.0).unwrap();
        assert!(matches!(m2.rho(7.0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn density_values() {
        let m = SphereModel::new(3, 1.0).unwrap();
        assert_eq!(m.volume_density(0.0).unwrap(), 1.0);
        let g = m.volume_density(PI / 2.0).unwrap();
        assert!((g - (2.0 / PI).powi(2)).abs() < 1e-15);
        assert!(m.volume_density(PI).is_err());
        for n in 3..8 {
            let m = SphereModel::new(n, 1.7).unwrap();
            let r = 1e-3;
            let slope = (m.density(r) - 1.0) / (r * r);
            let expect = -(n as f64 - 1.0) / (6.0 * 1.7 * 1.7);
            assert!((slope - expect).abs() < 1e-5, "n = {n}");
            assert!((expect + m.scal() / (6.0 * n as f64)).abs() < 1e-14);
        }
    }

    #[test]
    fn measure_matches_density() {
        let m = SphereModel::new(5, 1.3).unwrap();
        let w = sphere_volume(4);
        for i in 1..100 {
            let r = i as f64 / 100.0 * m.injectivity_radius();
            let lhs = m.measure_weight(r) / (w * r.powi(4));
            assert!((lhs - m.density(r)).abs() < 1e-13 * m.density(r).max(1e-300));
            assert!(m.density(r) < 1.0);
            assert!((m.density(-r) - m.density(r)).abs() == 0.0);
        }
    }

    #[test]
    fn total_volume() {
        for n in 3..8 {
            let m = SphereModel::new(n, 0.8).unwrap();
            let v = Quadrature::new(1e-13)
                .unwrap()
                .radial(
                    |r| m.measure_weight(r),
                    0.0,
                    Upper::Finite(m.injectivity_radius()),
                    &RadialHints::new(),
                )
                .unwrap();
            assert!((v.value - m.volume()).abs() / m.volume() < 1e-10);
        }
    }

    #[test]
    fn cutoff_profile() {
        let delta = 0.2;
        let c = Cutoff::new(delta).unwrap();
        assert_eq!(c.value(delta / 2.0), 1.0);
        assert_eq!(c.value(3.0 * delta), 0.0);
        let mid = c.value(1.5 * delta);
        assert!(mid > 0.0 && mid < 1.0);
        let mut prev = 1.0;
        for i in 0..=2000 {
            let r = 3.0 * delta * i as f64 / 2000.0;
            let v = c.value(r);
            assert!(v <= prev);
            prev = v;
            assert!(c.derivative(r).abs() <= 2.5 / delta);
            assert!(c.derivative(r).abs() <= CUTOFF_SLOPE_BOUND / delta + 1e-12);
        }
        let h = 1e-6;
        let r = 1.3 * delta;
        let fd = (c.value(r + h) - c.value(r - h)) / (2.0 * h);
        assert!((fd - c.derivative(r)).abs() < 1e-6);
    }

    #[test]
    fn potential_examples() {
        let m = SphereModel::new(4, 1.0).unwrap();
        let p = PotentialField::new(0.5, 0.0, 1.0).unwrap();
        assert_eq!(p.potential(&m, 2.0).unwrap(), 0.5);
        let p = PotentialField::new(0.5, 0.1, 1.0).unwrap();
        assert_eq!(p.potential(&m, 0.0).unwrap(), 0.5);
        assert!((p.lap_h_p(4) + 0.8).abs() < 1e-15);
        assert_eq!(p.value(1.0), p.value(2.0));
    }

    #[test]
    fn laplacian_of_quadratic_at_pole() {
        // -(f'' + (n-1) f'/r) for f = c r^2 equals -2nc.
        let n = 6u32;
        let c = 0.37;
        let p = PotentialField::new(0.0, c, 10.0).unwrap();
        let r = 1e-3;
        let h = 1e-5;
        let f = |x: f64| p.value(x);
        let d1 = (f(r + h) - f(r - h)) / (2.0 * h);
        let d2 = (f(r + h) - 2.0 * f(r) + f(r - h)) / (h * h);
        let lap = -(d2 + (n as f64 - 1.0) * d1 / r);
        assert!((lap - p.lap_h_p(n)).abs() < 1e-4);
    }
}
