//! Sharp Sobolev and Hardy constants, the singular exponent `a`, and the
//! energy thresholds that every other module compares against.
//!
//! Conventions: `w_k` is the volume of the unit `k`-sphere in `R^{k+1}`,
//! `K(n,2)^2 = 4 / (n (n-2) w_n^{2/n})`, `K(n,2,-2) = 2 / (n-2)` and
//! `a = sqrt(1 - lambda K(n,2,-2)^2)`.

use serde::Serialize;
use twofloat::TwoFloat;

use crate::error::{invalid, Result};

/// Dimension and Hardy coefficient `lambda = h(p)` of the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemParams {
    pub n: u32,
    pub lambda: f64,
}

impl ProblemParams {
    pub fn new(n: u32, lambda: f64) -> Result<Self> {
        if n < 3 {
            return Err(invalid("n", "n must be ≥ 3"));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(invalid("lambda", format!("lambda must be ≥ 0, got {lambda}")));
        }
        let limit = hardy_critical_lambda(n);
        if lambda >= limit {
            return Err(invalid(
                "lambda",
                format!("lambda must be < 1/K(n,2,-2)^2 = {limit}, got {lambda}"),
            ));
        }
        Ok(Self { n, lambda })
    }

    /// Convenience constructor taking `lambda * K(n,2,-2)^2` in `[0, 1)`.
    pub fn from_hardy_fraction(n: u32, fraction: f64) -> Result<Self> {
        if n < 3 {
            return Err(invalid("n", "n must be ≥ 3"));
        }
        Self::new(n, fraction * hardy_critical_lambda(n))
    }

    pub fn dim(&self) -> f64 {
        self.n as f64
    }

    /// `2* = 2n/(n-2)`.
    pub fn critical_exponent(&self) -> f64 {
        critical_exponent(self.n)
    }

    pub fn k_hardy(&self) -> f64 {
        k_hardy(self.n)
    }

    /// `lambda K(n,2,-2)^2`, the fraction of the Hardy threshold in use.
    pub fn hardy_fraction(&self) -> f64 {
        self.lambda * self.k_hardy().powi(2)
    }

    pub fn a(&self) -> f64 {
        (1.0 - self.hardy_fraction()).sqrt()
    }
}

/// All constants derived from a [`ProblemParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalConstants {
    pub k_sobolev: f64,
    pub k_hardy: f64,
    pub a: f64,
    /// `w_{n-1}`, volume of the unit `(n-1)`-sphere.
    pub omega: f64,
    pub q_sharp: f64,
    pub d_star: f64,
    #[serde(rename = "D_star")]
    pub big_d_star: f64,
}

/// Volume of the unit `k`-sphere `S^k ⊂ R^{k+1}`, i.e. `2 π^{(k+1)/2} / Γ((k+1)/2)`,
/// evaluated through the exact recursion `w_k = 2π/(k-1) · w_{k-2}`.
pub fn sphere_volume(k: u32) -> f64 {
    let mut w = if k % 2 == 0 { 2.0 } else { 2.0 * std::f64::consts::PI };
    let mut j = if k % 2 == 0 { 0 } else { 1 };
    while j < k {
        j += 2;
        w *= 2.0 * std::f64::consts::PI / (j - 1) as f64;
    }
    w
}

fn sphere_volume_dd(k: u32) -> TwoFloat {
    let two_pi = twofloat::consts::TAU;
    let mut w = if k % 2 == 0 { TwoFloat::from(2.0) } else { two_pi };
    let mut j = if k % 2 == 0 { 0 } else { 1 };
    while j < k {
        j += 2;
        w = w * two_pi / ((j - 1) as f64);
    }
    w
}

pub fn critical_exponent(n: u32) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0)
}

pub fn k_hardy(n: u32) -> f64 {
    2.0 / (n as f64 - 2.0)
}

/// `1 / K(n,2,-2)^2 = (n-2)^2 / 4`.
pub fn hardy_critical_lambda(n: u32) -> f64 {
    let m = n as f64 - 2.0;
    m * m / 4.0
}

pub fn k_sobolev(n: u32) -> f64 {
    let nf = n as f64;
    (4.0 / (nf * (nf - 2.0) * sphere_volume(n).powf(2.0 / nf))).sqrt()
}

pub fn compute_constants(params: &ProblemParams) -> Result<CriticalConstants> {
    let params = ProblemParams::new(params.n, params.lambda)?;
    let n = params.dim();
    let k = k_sobolev(params.n);
    let defect = 1.0 - params.hardy_fraction();
    let d_star = 1.0 / (n * k.powf(n));
    Ok(CriticalConstants {
        k_sobolev: k,
        k_hardy: params.k_hardy(),
        a: params.a(),
        omega: sphere_volume(params.n - 1),
        q_sharp: defect.powf((n - 1.0) / n) / (k * k),
        d_star,
        big_d_star: defect.powf((n - 1.0) / 2.0) * d_star,
    })
}

/// `d*` and `D*` recomputed in double-double arithmetic from
/// `d* = w_n (n(n-2))^{n/2} / (n 2^n)` and `D* = a^{n-1} d*`.
pub fn thresholds_extended(params: &ProblemParams) -> Result<(f64, f64)> {
    let params = ProblemParams::new(params.n, params.lambda)?;
    let n = params.n;
    let nn = TwoFloat::from(n as f64) * TwoFloat::from(n as f64 - 2.0);
    let half_power = if n % 2 == 0 {
        nn.powi((n / 2) as i32)
    } else {
        nn.powi((n / 2) as i32) * nn.sqrt()
    };
    let d_star = sphere_volume_dd(n) * half_power / (TwoFloat::from(n as f64) * 2f64.powi(n as i32));
    let kh = TwoFloat::from(2.0) / TwoFloat::from(n as f64 - 2.0);
    let a = (TwoFloat::from(1.0) - TwoFloat::from(params.lambda) * kh * kh).sqrt();
    let big = a.powi(n as i32 - 1) * d_star;
    Ok((f64::from(d_star), f64::from(big)))
}

/// Strong-convergence threshold together with the other exponent variants
/// one meets when transcribing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaStar {
    /// `(1 - lambda K^2)^{(n-1)/2} / (n K(n,2)^n)`; coincides with `D*`.
    pub value: f64,
    /// Same expression with exponent `n/2`.
    pub exponent_half_n: f64,
    /// Same expression with exponent `1`.
    pub exponent_one: f64,
}

pub fn threshold_beta_star(params: &ProblemParams) -> Result<BetaStar> {
    let c = compute_constants(params)?;
    let n = params.dim();
    let defect = 1.0 - params.hardy_fraction();
    Ok(BetaStar {
        value: c.big_d_star,
        exponent_half_n: defect.powf(n / 2.0) * c.d_star,
        exponent_one: defect * c.d_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn sphere_volumes_match_gamma_formula() {
        for k in 0..12u32 {
            let x = (k as f64 + 1.0) / 2.0;
            let expect = 2.0 * std::f64::consts::PI.powf(x) / statrs::function::gamma::gamma(x);
            assert!(rel(sphere_volume(k), expect) < 1e-13, "k = {k}");
        }
        assert!(rel(sphere_volume(3), 2.0 * std::f64::consts::PI.powi(2)) < 1e-15);
    }

    #[test]
    fn hardy_constant_n4() {
        let c = compute_constants(&ProblemParams::new(4, 0.0).unwrap()).unwrap();
        assert_eq!(c.k_hardy, 1.0);
        assert_eq!(c.a, 1.0);
        assert_eq!(c.big_d_star, c.d_star);
    }

    #[test]
    fn singular_exponent_half() {
        let c = compute_constants(&ProblemParams::new(4, 0.75).unwrap()).unwrap();
        assert!((c.a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn d_star_three_dimensions() {
        // 1/(3 K^3) with K^2 = 4/(3 (2π²)^{2/3}) gives (3^{3/2}/24)·2π².
        let c = compute_constants(&ProblemParams::new(3, 0.0).unwrap()).unwrap();
        let expect = 3f64.powf(1.5) / 24.0 * 2.0 * std::f64::consts::PI.powi(2);
        assert!(rel(c.d_star, expect) < 1e-14);
        assert!(rel(c.d_star, 4.273_664_068_323_042) < 1e-13);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ProblemParams::new(2, 0.0).is_err());
        assert!(ProblemParams::new(4, -0.1).is_err());
        assert!(ProblemParams::new(4, 1.0).is_err());
        assert!(ProblemParams::new(5, 9.0 / 4.0).is_err());
        assert!(ProblemParams::new(5, 2.2).is_ok());
        let err = ProblemParams::new(2, 0.0).unwrap_err().to_string();
        assert!(err.contains("n must be ≥ 3"), "{err}");
    }

    #[test]
    fn quotient_and_threshold_are_consistent() {
        for n in 3..9u32 {
            for f in [0.0, 0.1, 0.5, 0.9, 0.999] {
                let p = ProblemParams::from_hardy_fraction(n, f).unwrap();
                let c = compute_constants(&p).unwrap();
                let lhs = c.q_sharp.powf(n as f64 / 2.0) / n as f64;
                assert!(rel(lhs, c.big_d_star) < 1e-13);
            }
        }
    }

    #[test]
    fn extended_precision_agrees() {
        for n in 3..9u32 {
            let p = ProblemParams::from_hardy_fraction(n, 0.37).unwrap();
            let c = compute_constants(&p).unwrap();
            let (d, big) = thresholds_extended(&p).unwrap();
            assert!(rel(c.d_star, d) < 1e-13);
            assert!(rel(c.big_d_star, big) < 1e-13);
        }
    }

    #[test]
    fn beta_star_cases() {
        let p = ProblemParams::new(4, 0.0).unwrap();
        let b = threshold_beta_star(&p).unwrap();
        let c = compute_constants(&p).unwrap();
        assert_eq!(b.value, c.d_star);
        assert_eq!(b.exponent_half_n, c.d_star);

        let p = ProblemParams::from_hardy_fraction(5, 0.5).unwrap();
        let b = threshold_beta_star(&p).unwrap();
        let c = compute_constants(&p).unwrap();
        let independent = c.q_sharp.powf(2.5) / 5.0;
        assert!(rel(b.value, independent) < 1e-13);
        assert!(rel(b.value, 0.5f64.powi(2) * c.d_star) < 1e-14);

        let p = ProblemParams::from_hardy_fraction(4, 1.0 - 1e-12).unwrap();
        assert!(threshold_beta_star(&p).unwrap().value < 1e-10);
    }

    #[test]
    fn big_d_star_decreasing_in_lambda() {
        for n in 3..8u32 {
            let mut prev = f64::INFINITY;
            for i in 0..50 {
                let p = ProblemParams::from_hardy_fraction(n, i as f64 / 50.0).unwrap();
                let c = compute_constants(&p).unwrap();
                assert!(c.big_d_star < prev);
                if i > 0 {
                    assert!(c.d_star > c.big_d_star);
                }
                prev = c.big_d_star;
            }
        }
    }
}
