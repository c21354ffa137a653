//! Adaptive Gauss–Kronrod integration for radial integrands on `(0, L)` and
//! `(0, ∞)`, plus the `I^α_β` family and its two recurrences.
//!
//! Endpoint behaviour is handled by change of variables rather than by
//! brute subdivision: an integrand that behaves like `r^γ` at the origin is
//! integrated in `u = (r/b)^{γ+1}`, and a tail decaying like `r^{-κ}` is
//! integrated in `s = (r/B)^{1-κ}`. Both maps make the transformed integrand
//! bounded at the endpoint. Without hints the tail uses the plain inversion
//! `r ↦ 1/r` (`κ = 2`).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_REL_TOL: f64 = 1e-10;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Value of an integral with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn relative_error(&self) -> f64 {
        if self.value == 0.0 {
            self.error
        } else {
            self.error / self.value.abs()
        }
    }
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, rhs: Estimate) -> Estimate {
        Estimate {
            value: self.value + rhs.value,
            error: self.error + rhs.error,
        }
    }
}

impl std::ops::Mul<f64> for Estimate {
    type Output = Estimate;
    fn mul(self, rhs: f64) -> Estimate {
        Estimate {
            value: self.value * rhs,
            error: self.error * rhs.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Upper {
    Finite(f64),
    Infinity,
}

/// Asymptotic information used to pick the endpoint maps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RadialHints {
    /// `γ` with `f(r) ~ r^γ` as `r → 0`; requires `γ > -1`.
    pub zero_power: Option<f64>,
    /// `κ` with `f(r) ~ r^{-κ}` as `r → ∞`; requires `κ > 1`.
    pub tail_power: Option<f64>,
    /// Interior points where the integrand changes character.
    pub breakpoints: Vec<f64>,
}

impl RadialHints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zero_power(mut self, gamma: f64) -> Self {
        self.zero_power = Some(gamma);
        self
    }

    pub fn tail_power(mut self, kappa: f64) -> Self {
        self.tail_power = Some(kappa);
        self
    }

    pub fn breakpoints(mut self, points: impl IntoIterator<Item = f64>) -> Self {
        self.breakpoints.extend(points);
        self
    }
}

#[derive(Debug, Clone, Copy)]
enum Map {
    Identity,
    /// r = b u^q on u ∈ [0, 1].
    Zero {
        b: f64,
        q: f64,
    },
    /// r = b s^{-q} on s ∈ (0, 1].
    Tail {
        b: f64,
        q: f64,
    },
}

impl Map {
    #[inline]
    fn apply(&self, x: f64) -> Option<(f64, f64)> {
        match *self {
            Map::Identity => Some((x, 1.0)),
            Map::Zero { b, q } => {
                if x <= 0.0 {
                    return None;
                }
                let r = b * x.powf(q);
                if r < f64::MIN_POSITIVE {
                    return None;
                }
                Some((r, q * r / x))
            }
            Map::Tail { b, q } => {
                if x <= 0.0 {
                    return None;
                }
                let r = b * x.powf(-q);
                if !r.is_finite() {
                    return None;
                }
                Some((r, q * r / x))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    map: Map,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive integrator configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: 0.0,
            max_intervals: 20_000,
        }
    }
}

impl Quadrature {
    pub fn new(rel_tol: f64) -> Result<Self> {
        if !(rel_tol > 1e-14 && rel_tol < 1e-2) {
            return Err(invalid("rel_tol", format!("must lie in (1e-14, 1e-2), got {rel_tol}")));
        }
        Ok(Self {
            rel_tol,
            ..Self::default()
        })
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_max_intervals(mut self, max_intervals: usize) -> Self {
        self.max_intervals = max_intervals;
        self
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<Estimate> {
        self.integrate_panels(f, &[a, b])
    }

    /// Integrates over `[points[0], points.last()]` starting from the given
    /// partition. Useful when the integrand has kinks at known places.
    pub fn integrate_panels<F: Fn(f64) -> f64>(&self, f: F, points: &[f64]) -> Result<Estimate> {
        let panels: Vec<(f64, f64, Map)> = points
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[0], w[1], Map::Identity))
            .collect();
        self.run(&f, panels)
    }

    /// Integrates a radial integrand from `lower ≥ 0` to `upper`, applying the
    /// endpoint maps described in the module docs.
    pub fn radial<F: Fn(f64) -> f64>(&self, f: F, lower: f64, upper: Upper, hints: &RadialHints) -> Result<Estimate> {
        if !(lower >= 0.0) {
            return Err(invalid("lower", format!("must be ≥ 0, got {lower}")));
        }
        let upper_finite = match upper {
            Upper::Finite(u) => {
                if !(u >= lower) {
                    return Err(invalid("upper", format!("must be ≥ lower, got {u}")));
                }
                Some(u)
            }
            Upper::Infinity => None,
        };
        if let Some(g) = hints.zero_power {
            if !(g > -1.0) {
                return Err(Error::DivergentIntegral(format!(
                    "integrand ~ r^{g} at 0 is not integrable"
                )));
            }
        }
        if let Some(k) = hints.tail_power {
            if upper_finite.is_none() && !(k > 1.0) {
                return Err(Error::DivergentIntegral(format!(
                    "integrand ~ r^-{k} at ∞ is not integrable"
                )));
            }
        }

        let mut pts: Vec<f64> = vec![lower];
        let mut interior: Vec<f64> = hints
            .breakpoints
            .iter()
            .copied()
            .filter(|&p| p.is_finite() && p > lower && upper_finite.map_or(true, |u| p < u))
            .collect();
        if upper_finite.is_none() && !interior.iter().any(|&p| p >= 1.0) && lower < 1.0 {
            interior.push(1.0);
        }
        interior.sort_by(f64::total_cmp);
        interior.dedup();
        pts.extend(interior);
        if let Some(u) = upper_finite {
            if u > *pts.last().unwrap() {
                pts.push(u);
            }
        }

        let mut panels = Vec::new();
        for (i, w) in pts.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if i == 0 && a == 0.0 {
                let gamma = hints.zero_power.unwrap_or(0.0);
                if gamma == 0.0 {
                    panels.push((0.0, b, Map::Identity));
                } else {
                    panels.push((
                        0.0,
                        1.0,
                        Map::Zero {
                            b,
                            q: 1.0 / (gamma + 1.0),
                        },
                    ));
                }
            } else {
                panels.push((a, b, Map::Identity));
            }
        }
        if upper_finite.is_none() {
            let b = *pts.last().unwrap();
            let kappa = hints.tail_power.unwrap_or(2.0);
            panels.push((
                0.0,
                1.0,
                Map::Tail {
                    b,
                    q: 1.0 / (kappa - 1.0),
                },
            ));
        }
        self.run(&f, panels)
    }

    fn run<F: Fn(f64) -> f64>(&self, f: &F, init: Vec<(f64, f64, Map)>) -> Result<Estimate> {
        let mut heap = BinaryHeap::new();
        let mut total = 0.0;
        let mut total_err = 0.0;
        for (lo, hi, map) in init {
            let p = gk15(f, lo, hi, map);
            total += p.value;
            total_err += p.error;
            heap.push(p);
        }
        let mut count = heap.len();
        loop {
            let target = self.abs_tol.max(self.rel_tol * total.abs());
            if total_err <= target {
                break;
            }
            if count >= self.max_intervals {
                // Recompute sums to shed accumulated drift before giving up.
                let (v, e) = heap
                    .iter()
                    .fold((0.0, 0.0), |acc, p| (acc.0 + p.value, acc.1 + p.error));
                if e <= self.abs_tol.max(self.rel_tol * v.abs()) {
                    return Ok(Estimate { value: v, error: e });
                }
                return Err(Error::QuadratureNonConvergence {
                    estimate: v,
                    error: e,
                    intervals: count,
                });
            }
            let worst = match heap.pop() {
                Some(p) => p,
                None => break,
            };
            let mid = 0.5 * (worst.lo + worst.hi);
            if !(mid > worst.lo && mid < worst.hi) {
                // Interval cannot be split further in floating point.
                let (v, e) = heap
                    .iter()
                    .fold((worst.value, 0.0), |acc, p| (acc.0 + p.value, acc.1 + p.error));
                return Err(Error::QuadratureNonConvergence {
                    estimate: v,
                    error: e + worst.error,
                    intervals: count,
                });
            }
            let left = gk15(f, worst.lo, mid, worst.map);
            let right = gk15(f, mid, worst.hi, worst.map);
            total += left.value + right.value - worst.value;
            total_err += left.error + right.error - worst.error;
            heap.push(left);
            heap.push(right);
            count += 1;
            if count % 512 == 0 {
                let (v, e) = heap
                    .iter()
                    .fold((0.0, 0.0), |acc, p| (acc.0 + p.value, acc.1 + p.error));
                total = v;
                total_err = e;
            }
        }
        let (value, error) = heap
            .iter()
            .fold((0.0, 0.0), |acc, p| (acc.0 + p.value, acc.1 + p.error));
        Ok(Estimate { value, error })
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, map: Map) -> Panel {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let eval = |x: f64| -> f64 {
        match map.apply(x) {
            Some((r, jac)) => {
                let v = f(r) * jac;
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            }
            None => 0.0,
        }
    };
    let fc = eval(centre);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = eval(centre - dx);
        let f2 = eval(centre + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Panel {
        lo,
        hi,
        map,
        value,
        error: err,
    }
}

/// Integrates `f` over `[lower, upper]` (or `[lower, ∞)`) to relative
/// tolerance `rel_tol`, with the default endpoint maps.
pub fn integrate_radial<F: Fn(f64) -> f64>(f: F, lower: f64, upper: Upper, rel_tol: f64) -> Result<Estimate> {
    Quadrature::new(rel_tol)?.radial(f, lower, upper, &RadialHints::default())
}

/// Exponents of `I^α_β = ∫_0^∞ r^α / (1 + r^{2a})^β dr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegralSpec {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
}

impl IntegralSpec {
    pub fn new(alpha: f64, beta: f64, a: f64) -> Self {
        Self { alpha, beta, a }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(invalid("a", format!("must be > 0, got {}", self.a)));
        }
        if !(self.alpha > -1.0) {
            return Err(Error::DivergentIntegral(format!(
                "alpha > -1 fails at the origin (alpha = {})",
                self.alpha
            )));
        }
        if !(2.0 * self.a * self.beta - self.alpha > 1.0) {
            return Err(Error::DivergentIntegral(format!(
                "2a·beta - alpha > 1 fails at infinity (2a·beta - alpha = {})",
                2.0 * self.a * self.beta - self.alpha
            )));
        }
        Ok(())
    }

    pub fn integrand(&self, r: f64) -> f64 {
        if r == 0.0 {
            return if self.alpha == 0.0 { 1.0 } else { 0.0 };
        }
        let ln_r = r.ln();
        (self.alpha * ln_r - self.beta * (2.0 * self.a * ln_r).exp().ln_1p()).exp()
    }
}

/// `I^α_β` by quadrature.
pub fn compute_i(spec: IntegralSpec, rel_tol: f64) -> Result<f64> {
    Ok(compute_i_estimate(spec, rel_tol)?.value)
}

pub fn compute_i_estimate(spec: IntegralSpec, rel_tol: f64) -> Result<Estimate> {
    spec.validate()?;
    let hints = RadialHints::new()
        .zero_power(spec.alpha)
        .tail_power(2.0 * spec.a * spec.beta - spec.alpha);
    Quadrature::new(rel_tol)?.radial(|r| spec.integrand(r), 0.0, Upper::Infinity, &hints)
}

/// `I^α_β` predicted from a direct evaluation of `I^{α-2a}_β` through
/// `I^α_β = (α - 2a + 1)/(2aβ - (α + 1)) · I^{α-2a}_β`.
pub fn recurrence_alpha(spec: IntegralSpec, rel_tol: f64) -> Result<f64> {
    let IntegralSpec { alpha, beta, a } = spec;
    if !(alpha > 2.0 * a - 1.0) {
        return Err(Error::RecurrenceDomain(format!(
            "alpha > 2a - 1 fails (alpha = {alpha}, 2a - 1 = {})",
            2.0 * a - 1.0
        )));
    }
    let denom = 2.0 * a * beta - (alpha + 1.0);
    if !(denom > 0.0) {
        return Err(Error::RecurrenceDomain(format!(
            "2a·beta > alpha + 1 fails (2a·beta - (alpha+1) = {denom})"
        )));
    }
    let lower = compute_i(IntegralSpec::new(alpha - 2.0 * a, beta, a), rel_tol)?;
    Ok((alpha - 2.0 * a + 1.0) / denom * lower)
}

/// `I^{α-2a}_{β-1}` predicted from a direct evaluation of `I^{α-2a}_β`
/// through `I^{α-2a}_{β-1} = 2a(β-1)/(2aβ - (α+1)) · I^{α-2a}_β`.
pub fn recurrence_beta(spec: IntegralSpec, rel_tol: f64) -> Result<f64> {
    let IntegralSpec { alpha, beta, a } = spec;
    if !(beta > 1.0) {
        return Err(Error::RecurrenceDomain(format!("beta > 1 fails (beta = {beta})")));
    }
    if !(alpha > 2.0 * a - 1.0) {
        return Err(Error::RecurrenceDomain(format!(
            "alpha > 2a - 1 fails (alpha = {alpha}, 2a - 1 = {})",
            2.0 * a - 1.0
        )));
    }
    let denom = 2.0 * a * beta - (alpha + 1.0);
    if !(denom > 0.0) {
        return Err(Error::RecurrenceDomain(format!(
            "2a·beta > alpha + 1 fails (2a·beta - (alpha+1) = {denom})"
        )));
    }
    let lower = compute_i(IntegralSpec::new(alpha - 2.0 * a, beta, a), rel_tol)?;
    Ok(2.0 * a * (beta - 1.0) / denom * lower)
}
