//! Euclidean extremals `U_μ(r) = μ^{-(n-2)/2} U(r/μ)` with
//! `U(t) = C (t^{a-1} / (1 + t^{2a}))^{(n-2)/2}`, `C = (a² n (n-2))^{(n-2)/4}`.
//!
//! `a = 1` gives the standard (Aubin–Talenti) family solving
//! `-ΔU = U^{2*-1}`; `a < 1` gives the singular family solving
//! `-ΔU - λ U/r² = U^{2*-1}`. All derivatives are taken in closed form.

use serde::Serialize;
use twofloat::TwoFloat;

use crate::constants::{sphere_volume, ProblemParams};
use crate::error::{invalid, Error, Result};
use crate::quadrature::{Estimate, Quadrature, RadialHints, Upper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BubbleKind {
    Standard,
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Functional {
    /// `½∫|∇u|² - (1/2*)∫|u|^{2*}`.
    J,
    /// `½∫|∇u|² - (λ/2)∫u²/r² - (1/2*)∫|u|^{2*}`.
    JInfinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BubbleProfile {
    pub params: ProblemParams,
    pub scale: f64,
    pub kind: BubbleKind,
}

/// The three integrals of an energy and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    /// `∫|∇u|²`
    pub gradient: f64,
    /// `λ ∫ u²/r²` (zero for [`Functional::J`])
    pub hardy: f64,
    /// `∫|u|^{2*}`
    pub critical: f64,
    pub total: f64,
    /// Accumulated absolute quadrature error of `total`.
    pub error: f64,
}

impl EnergyBreakdown {
    pub fn from_integrals(n: u32, gradient: Estimate, hardy: Estimate, critical: Estimate) -> Self {
        let two_star = crate::constants::critical_exponent(n);
        let total = 0.5 * (gradient.value - hardy.value) - critical.value / two_star;
        let error = 0.5 * (gradient.error + hardy.error) + critical.error / two_star;
        Self {
            gradient: gradient.value,
            hardy: hardy.value,
            critical: critical.value,
            total,
            error,
        }
    }

    /// `(∫|∇u|² - λ∫u²/r²) / (∫|u|^{2*})^{2/2*}`
    pub fn quotient(&self, n: u32) -> f64 {
        let two_star = crate::constants::critical_exponent(n);
        (self.gradient - self.hardy) / self.critical.powf(2.0 / two_star)
    }
}

impl BubbleProfile {
    pub fn new(params: ProblemParams, scale: f64, kind: BubbleKind) -> Result<Self> {
        let params = ProblemParams::new(params.n, params.lambda)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("mu", format!("scale must be positive, got {scale}")));
        }
        if kind == BubbleKind::Standard && params.lambda != 0.0 {
            return Err(invalid("lambda", "a standard bubble requires lambda = 0"));
        }
        Ok(Self { params, scale, kind })
    }

    pub fn standard(n: u32, scale: f64) -> Result<Self> {
        Self::new(ProblemParams::new(n, 0.0)?, scale, BubbleKind::Standard)
    }

    pub fn singular(params: ProblemParams, scale: f64) -> Result<Self> {
        Self::new(params, scale, BubbleKind::Singular)
    }

    /// Picks `Standard` for `λ = 0` and `Singular` otherwise.
    pub fn for_params(params: ProblemParams, scale: f64) -> Result<Self> {
        let kind = if params.lambda == 0.0 {
            BubbleKind::Standard
        } else {
            BubbleKind::Singular
        };
        Self::new(params, scale, kind)
    }

    pub fn a(&self) -> f64 {
        self.params.a()
    }

    fn m(&self) -> f64 {
        (self.params.dim() - 2.0) / 2.0
    }

    /// `ln C = ((n-2)/4) ln(a² n (n-2))`.
    pub fn ln_amplitude(&self) -> f64 {
        let n = self.params.dim();
        let a = self.a();
        (n - 2.0) / 4.0 * (a * a * n * (n - 2.0)).ln()
    }

    fn ln_value(&self, r: f64) -> f64 {
        let a = self.a();
        let m = self.m();
        let ln_t = (r / self.scale).ln();
        -m * self.scale.ln() + self.ln_amplitude() + m * ((a - 1.0) * ln_t - (2.0 * a * ln_t).exp().ln_1p())
    }

    /// `s = t^{2a}/(1 + t^{2a})` computed without overflow.
    fn s_of(&self, r: f64) -> f64 {
        let e = 2.0 * self.a() * (r / self.scale).ln();
        if e > 0.0 {
            1.0 / (1.0 + (-e).exp())
        } else {
            let x = e.exp();
            x / (1.0 + x)
        }
    }

    fn check_r(&self, r: f64) -> Result<()> {
        if r < 0.0 || r.is_nan() {
            return Err(invalid("r", format!("must be ≥ 0, got {r}")));
        }
        if r == 0.0 && self.a() < 1.0 {
            return Err(Error::SingularEvaluation { a: self.a() });
        }
        Ok(())
    }

    pub fn evaluate(&self, r: f64) -> Result<f64> {
        self.check_r(r)?;
        Ok(self.value(r))
    }

    /// Unchecked `U_μ(r)`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        if r == 0.0 {
            return if self.a() < 1.0 {
                f64::INFINITY
            } else {
                (self.ln_amplitude() - self.m() * self.scale.ln()).exp()
            };
        }
        self.ln_value(r).exp()
    }

    /// `r U'(r) / U(r) = m(a-1) - 2am s`.
    #[inline]
    pub fn log_slope(&self, r: f64) -> f64 {
        let a = self.a();
        let m = self.m();
        m * (a - 1.0) - 2.0 * a * m * self.s_of(r)
    }

    pub fn derivative(&self, r: f64) -> Result<f64> {
        self.check_r(r)?;
        Ok(self.value_derivative(r))
    }

    /// Unchecked `U_μ'(r)`.
    #[inline]
    pub fn value_derivative(&self, r: f64) -> f64 {
        if r == 0.0 {
            return if self.a() < 1.0 { f64::NEG_INFINITY } else { 0.0 };
        }
        if self.a() == 1.0 {
            // U' = -2m U t / (μ (1 + t²)) avoids the 0/0 of log_slope/r.
            let t = r / self.scale;
            return -2.0 * self.m() * self.value(r) * t / (self.scale * (1.0 + t * t));
        }
        self.value(r) * self.log_slope(r) / r
    }

    /// `-U'' - (n-1)U'/r - λU/r² - U^{2*-1}`, evaluated as
    /// `(U/r²) P(s)` with the polynomial `P` summed in double-double.
    pub fn residual(&self, r: f64) -> Result<f64> {
        self.residual_scaled(r, 1.0)
    }

    /// Residual of the field `c · U_μ`.
    pub fn residual_scaled(&self, r: f64, c: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(if self.a() < 1.0 {
                Error::SingularEvaluation { a: self.a() }
            } else {
                invalid("r", format!("residual needs r > 0, got {r}"))
            });
        }
        let n = self.params.n;
        let nd = TwoFloat::from(n as f64);
        let m = (nd - 2.0) / 2.0;
        let kh = TwoFloat::from(2.0) / (nd - 2.0);
        let lambda = TwoFloat::from(self.params.lambda);
        let a = (TwoFloat::from(1.0) - lambda * kh * kh).sqrt();
        let s = TwoFloat::from(self.s_of(r));
        let s1 = s * (TwoFloat::from(1.0) - s);
        let x = m * (a - 1.0) - TwoFloat::from(2.0) * a * m * s;
        let linear = TwoFloat::from(4.0) * a * a * m * s1 - x * x - (nd - 2.0) * x - lambda;
        let nonlinear = nd * (nd - 2.0) * a * a * s1;
        let p = crate::constants::critical_exponent(n) - 1.0;
        let poly = if c == 1.0 {
            linear - nonlinear
        } else {
            linear * c - nonlinear * c.powf(p)
        };
        Ok(self.value(r) / (r * r) * f64::from(poly))
    }

    /// Same residual with all arithmetic in `f64` and closed-form
    /// derivatives, without the polynomial reduction.
    pub fn residual_plain(&self, r: f64) -> Result<f64> {
        self.check_r(r)?;
        let n = self.params.dim();
        let a = self.a();
        let m = self.m();
        let u = self.value(r);
        let x = self.log_slope(r);
        let s = self.s_of(r);
        let rxp = -4.0 * a * a * m * s * (1.0 - s);
        let upp = u * (x * x - x + rxp) / (r * r);
        let up = u * x / r;
        let p = crate::constants::critical_exponent(self.params.n) - 1.0;
        Ok(-upp - (n - 1.0) * up / r - self.params.lambda * u / (r * r) - u.powf(p))
    }

    /// Residual with `U''` and `U'` replaced by fourth-order central
    /// differences in `ln r`.
    pub fn residual_fd(&self, r: f64) -> Result<f64> {
        self.check_r(r)?;
        let n = self.params.dim();
        let h = 1e-3;
        let f = |k: f64| self.value(r * (k * h).exp());
        let (fm2, fm1, f0, f1, f2) = (f(-2.0), f(-1.0), f(0.0), f(1.0), f(2.0));
        // derivatives with respect to τ = ln r
        let d1 = (fm2 - 8.0 * fm1 + 8.0 * f1 - f2) / (12.0 * h);
        let d2 = (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * f1 - f2) / (12.0 * h * h);
        let up = d1 / r;
        let upp = (d2 - d1) / (r * r);
        let p = crate::constants::critical_exponent(self.params.n) - 1.0;
        Ok(-upp - (n - 1.0) * up / r - self.params.lambda * f0 / (r * r) - f0.powf(p))
    }

    fn hints_gradient(&self) -> RadialHints {
        let n = self.params.dim();
        let a = self.a();
        let zero = if a == 1.0 { n + 1.0 } else { a * (n - 2.0) - 1.0 };
        RadialHints::new()
            .zero_power(zero)
            .tail_power(a * (n - 2.0) + 1.0)
            .breakpoints([self.scale])
    }

    fn hints_hardy(&self) -> RadialHints {
        let n = self.params.dim();
        let a = self.a();
        RadialHints::new()
            .zero_power(a * (n - 2.0) - 1.0)
            .tail_power(a * (n - 2.0) + 1.0)
            .breakpoints([self.scale])
    }

    fn hints_critical(&self) -> RadialHints {
        let n = self.params.dim();
        let a = self.a();
        RadialHints::new()
            .zero_power(a * n - 1.0)
            .tail_power(a * n + 1.0)
            .breakpoints([self.scale])
    }

    /// Energy of `U_μ` on `R^n` by radial quadrature.
    pub fn energy(&self, functional: Functional, quad: &Quadrature) -> Result<EnergyBreakdown> {
        if functional == Functional::J && self.kind != BubbleKind::Standard {
            return Err(invalid("functional", "J applies to standard bubbles only"));
        }
        let n = self.params.n;
        let w = sphere_volume(n - 1);
        let nn = n as i32;
        let two_star = crate::constants::critical_exponent(n);
        let grad = quad.radial(
            |r| self.value_derivative(r).powi(2) * r.powi(nn - 1),
            0.0,
            Upper::Infinity,
            &self.hints_gradient(),
        )? * w;
        let hardy = if functional == Functional::J || self.params.lambda == 0.0 {
            Estimate { value: 0.0, error: 0.0 }
        } else {
            quad.radial(
                |r| self.value(r).powi(2) * r.powi(nn - 3),
                0.0,
                Upper::Infinity,
                &self.hints_hardy(),
            )? * (w * self.params.lambda)
        };
        let crit = quad.radial(
            |r| self.value(r).powf(two_star) * r.powi(nn - 1),
            0.0,
            Upper::Infinity,
            &self.hints_critical(),
        )? * w;
        Ok(EnergyBreakdown::from_integrals(n, grad, hardy, crit))
    }

    /// Quotient `(∫|∇U|² - λ∫U²/r²) / (∫U^{2*})^{2/2*}` by quadrature.
    pub fn sharp_quotient(&self, quad: &Quadrature) -> Result<f64> {
        Ok(self.energy(Functional::JInfinity, quad)?.quotient(self.params.n))
    }
}

/// Energy integrals on `R^n` of an arbitrary radial profile with derivative
/// `df`, integrated over `[0, support]` (or `[0, ∞)` when `support` is
/// `None`) with the supplied breakpoints.
pub fn radial_energy<F, D>(
    params: &ProblemParams,
    f: F,
    df: D,
    support: Option<f64>,
    hints: &RadialHints,
    quad: &Quadrature,
) -> Result<EnergyBreakdown>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let n = params.n;
    let nn = n as i32;
    let w = sphere_volume(n - 1);
    let two_star = crate::constants::critical_exponent(n);
    let upper = support.map_or(Upper::Infinity, Upper::Finite);
    let grad = quad.radial(|r| df(r).powi(2) * r.powi(nn - 1), 0.0, upper, hints)? * w;
    let hardy = if params.lambda == 0.0 {
        Estimate { value: 0.0, error: 0.0 }
    } else {
        quad.radial(|r| f(r).powi(2) * r.powi(nn - 3), 0.0, upper, hints)? * (w * params.lambda)
    };
    let crit = quad.radial(|r| f(r).abs().powf(two_star) * r.powi(nn - 1), 0.0, upper, hints)? * w;
    Ok(EnergyBreakdown::from_integrals(n, grad, hardy, crit))
}
