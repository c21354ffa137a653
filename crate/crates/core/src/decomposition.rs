//! Synthetic Palais–Smale-like sequences: bubbles glued onto a background,
//! the energy identity along the sequence, and concentration detection and
//! profile extraction.
//!
//! Every centre lies on one fixed meridian through the pole, so a centre is a
//! single geodesic distance from the pole. Pole fields are radial about the
//! pole. Each off-pole bubble lives in its own geodesic chart, and its support
//! must be disjoint from every other component, which makes energies and
//! gradient densities additive over components.

use std::cell::RefCell;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::bubbles::{BubbleKind, BubbleProfile, EnergyBreakdown};
use crate::constants::{compute_constants, critical_exponent, sphere_volume, threshold_beta_star, ProblemParams};
use crate::error::{invalid, Error, Result};
use crate::field::{sphere_energy, CompositeField, GluedBubble, RadialProfile};
use crate::grid::DiscreteRadialField;
use crate::manifold::{Cutoff, PotentialField, SphereModel};
use crate::quadrature::{Estimate, Quadrature, RadialHints, Upper};

/// Below this fraction of `β*` a field reports no bubble.
pub const THRESHOLD_MARGIN: f64 = 0.95;
/// Above this normalised mismatch the best-fit profile is rejected.
pub const MISMATCH_LIMIT: f64 = 0.25;
/// Extraction compares gradients on a ball of this many capture radii.
pub const EXTRACTION_BALL: f64 = 8.0;
const SCAN_CENTERS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Center {
    Pole,
    /// Geodesic distance of the centre from the pole.
    OffPole(f64),
}

impl Center {
    pub fn distance(&self) -> f64 {
        match *self {
            Center::Pole => 0.0,
            Center::OffPole(r) => r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlueSpec {
    pub center: Center,
    pub scale: f64,
    pub kind: BubbleKind,
    /// `r` in `η_r`: the cutoff is `1` on `B(center, r)` and vanishes outside `B(center, 2r)`.
    pub cutoff_radius: f64,
    /// In [`build_sequence`] the scale at step `m` is `scales[m]^scale_power`.
    pub scale_power: f64,
}

impl GlueSpec {
    pub fn singular(scale: f64, cutoff_radius: f64) -> Self {
        Self {
            center: Center::Pole,
            scale,
            kind: BubbleKind::Singular,
            cutoff_radius,
            scale_power: 1.0,
        }
    }

    pub fn standard(r0: f64, scale: f64, cutoff_radius: f64) -> Self {
        Self {
            center: Center::OffPole(r0),
            scale,
            kind: BubbleKind::Standard,
            cutoff_radius,
            scale_power: 1.0,
        }
    }

    pub fn with_scale_power(mut self, p: f64) -> Self {
        self.scale_power = p;
        self
    }

    pub fn validate(&self, model: &SphereModel) -> Result<()> {
        let max = model.injectivity_radius();
        match (self.kind, self.center) {
            (BubbleKind::Singular, Center::OffPole(_)) => {
                return Err(invalid("center", "singular bubbles live at the pole"));
            }
            (BubbleKind::Standard, Center::Pole) => {
                return Err(invalid("center", "standard bubbles need an off-pole centre"));
            }
            (_, Center::OffPole(r0)) if !(r0 > 0.0 && r0 < max) => {
                return Err(invalid(
                    "center",
                    format!("off-pole distance must lie in (0, {max}), got {r0}"),
                ));
            }
            _ => {}
        }
        if !(self.cutoff_radius > 0.0 && self.cutoff_radius < max / 2.0) {
            return Err(invalid(
                "cutoff_radius",
                format!("must lie in (0, {}), got {}", max / 2.0, self.cutoff_radius),
            ));
        }
        if !(self.scale > 0.0 && self.scale < self.cutoff_radius / 10.0) {
            return Err(invalid(
                "scale",
                format!(
                    "must lie in (0, cutoff_radius/10 = {}), got {}",
                    self.cutoff_radius / 10.0,
                    self.scale
                ),
            ));
        }
        if let Center::OffPole(r0) = self.center {
            let reach = 2.0 * self.cutoff_radius;
            if !(reach < r0 && r0 + reach < max) {
                return Err(invalid(
                    "cutoff_radius",
                    "support of an off-pole bubble must avoid the pole and the antipode",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffPoleBubble {
    pub center: f64,
    pub profile: GluedBubble,
}

/// Background plus glued bubbles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticField {
    pub model: SphereModel,
    pub pole: CompositeField,
    pub off_pole: Vec<OffPoleBubble>,
}

struct Component<'a> {
    position: f64,
    profile: &'a dyn RadialProfile,
}

impl SyntheticField {
    pub fn zero(model: SphereModel) -> Self {
        Self {
            model,
            pole: CompositeField::new(Vec::new(), None),
            off_pole: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.pole.bubbles.is_empty() && self.pole.background.is_none() && self.off_pole.is_empty()
    }

    fn pole_is_empty(&self) -> bool {
        self.pole.bubbles.is_empty() && self.pole.background.is_none()
    }

    fn components(&self) -> Vec<Component<'_>> {
        let mut out = Vec::new();
        if !self.pole_is_empty() {
            out.push(Component {
                position: 0.0,
                profile: &self.pole,
            });
        }
        for b in &self.off_pole {
            out.push(Component {
                position: b.center,
                profile: &b.profile,
            });
        }
        out
    }

    /// The pole part sampled on a grid; off-pole parts are not radial about
    /// the pole and are rejected.
    pub fn to_discrete(&self, grid: &std::sync::Arc<crate::grid::RadialGrid>) -> Result<DiscreteRadialField> {
        if !self.off_pole.is_empty() {
            return Err(Error::UnsupportedField(
                "off-pole bubbles have no radial representation".into(),
            ));
        }
        DiscreteRadialField::sample(std::sync::Arc::clone(grid), |r| self.pole.value(r))
    }

    /// `J_h` and its integrals.
    pub fn energy(&self, potential: &PotentialField, quad: &Quadrature) -> Result<EnergyBreakdown> {
        let n = self.model.n;
        let zero = Estimate { value: 0.0, error: 0.0 };
        let (mut g, mut h, mut c) = (zero, zero, zero);
        if !self.pole_is_empty() {
            let e = sphere_energy(&self.pole, &self.model, potential, quad)?;
            g = g + Estimate {
                value: e.gradient,
                error: 0.0,
            };
            h = h + Estimate {
                value: e.hardy,
                error: 0.0,
            };
            c = c + Estimate {
                value: e.critical,
                error: e.error,
            };
        }
        for b in &self.off_pole {
            let e = sphere_energy(&b.profile, &self.model, &PotentialField::zero(), quad)?;
            g = g + Estimate {
                value: e.gradient,
                error: 0.0,
            };
            c = c + Estimate {
                value: e.critical,
                error: e.error,
            };
            h = h + off_pole_hardy(&self.model, potential, b, quad)?;
        }
        Ok(EnergyBreakdown::from_integrals(n, g, h, c))
    }

    pub fn total_gradient_energy(&self, quad: &Quadrature) -> Result<f64> {
        self.components()
            .iter()
            .map(|c| ball_energy_component(&self.model, c, 0.0, self.model.injectivity_radius(), quad))
            .sum()
    }

    /// `∫_{B(x, t)} |∇u|²` with `x` at distance `center` from the pole.
    pub fn ball_gradient_energy(&self, center: f64, t: f64, quad: &Quadrature) -> Result<f64> {
        self.components()
            .iter()
            .map(|c| ball_energy_component(&self.model, c, center, t, quad))
            .sum()
    }
}

fn hints_for(profile: &dyn RadialProfile, extra: &[f64], exponent: Option<f64>) -> RadialHints {
    let mut h = RadialHints::new().breakpoints(profile.breakpoints().into_iter().chain(extra.iter().copied()));
    if let Some(e) = exponent {
        h = h.zero_power(e);
    }
    h
}

fn gradient_exponent(profile: &dyn RadialProfile, n: u32) -> Option<f64> {
    let s = profile.leading_exponent();
    (s < 0.0).then_some(2.0 * s + n as f64 - 3.0)
}

/// Point at distance `xs` from `c = e₁` in direction `ψ` off the meridian
/// towards `b`, with `d(c, b) = x0`; unit radius. Returns the distance to `b`
/// and the cosine of the angle between the outward gradients of both
/// distance functions at the point.
fn chart_geometry(x0: f64, xs: f64, psi: f64) -> (f64, f64) {
    let b = [x0.cos(), x0.sin(), 0.0];
    let p = [xs.cos(), xs.sin() * psi.cos(), xs.sin() * psi.sin()];
    let dot = |u: [f64; 3], v: [f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let cross = [
        b[1] * p[2] - b[2] * p[1],
        b[2] * p[0] - b[0] * p[2],
        b[0] * p[1] - b[1] * p[0],
    ];
    let bp = dot(b, p);
    let xd = dot(cross, cross).sqrt().atan2(bp);
    // tangent components of the directions pointing away from c and b
    let cp = p[0];
    let u = [1.0 - cp * p[0], -cp * p[1], -cp * p[2]];
    let v = [b[0] - bp * p[0], b[1] - bp * p[1], b[2] - bp * p[2]];
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    let cos_angle = if nu > 0.0 && nv > 0.0 {
        (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    (xd, cos_angle)
}

/// Ball integrals are `O(1)` and may be exponentially small when the ball only
/// grazes a support.
fn floored(quad: &Quadrature) -> Quadrature {
    quad.with_abs_tol(quad.abs_tol.max(1e-13))
}

/// Fraction of the geodesic sphere of radius `s` about a point `b` lying
/// inside `B(x, t)`, where `d(b, x) = d0`.
fn sphere_fraction(model: &SphereModel, s: f64, t: f64, d0: f64) -> f64 {
    let rr = model.radius;
    let (s, t, d0) = (s / rr, t / rr, d0 / rr);
    if d0 == 0.0 {
        return if s < t { 1.0 } else { 0.0 };
    }
    let denom = d0.sin() * s.sin();
    if denom <= 0.0 {
        return if (d0 - s).abs() < t { 1.0 } else { 0.0 };
    }
    // cos t - cos d0 cos s = cos t - cos(s - d0) + sin d0 sin s
    let kappa = 1.0 - 2.0 * ((t + s - d0) / 2.0).sin() * ((t - s + d0) / 2.0).sin() / denom;
    if kappa >= 1.0 {
        return 0.0;
    }
    if kappa <= -1.0 {
        return 1.0;
    }
    let k = model.n as f64 - 2.0;
    let half = 0.5 * beta_reg((k + 1.0) / 2.0, 0.5, 1.0 - kappa * kappa);
    if kappa >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

fn ball_energy_component(
    model: &SphereModel,
    c: &Component<'_>,
    center: f64,
    t: f64,
    quad: &Quadrature,
) -> Result<f64> {
    let quad = &floored(quad);
    let d0 = (center - c.position).abs();
    let max = model.injectivity_radius();
    let support = c.profile.support().unwrap_or(max).min(max);
    let p = c.profile;
    let exp = gradient_exponent(p, model.n);
    if d0 == 0.0 {
        let upper = t.min(support);
        if upper <= 0.0 {
            return Ok(0.0);
        }
        let hints = hints_for(p, &[], exp);
        return Ok(quad
            .radial(
                |r| p.derivative(r).powi(2) * model.measure_weight(r),
                0.0,
                Upper::Finite(upper),
                &hints,
            )?
            .value);
    }
    let hi = support.min(d0 + t);
    let lo = if t > d0 { 0.0 } else { d0 - t };
    if hi <= lo {
        return Ok(0.0);
    }
    let hints = hints_for(p, &[(t - d0).abs(), d0 + t], if lo == 0.0 { exp } else { None });
    Ok(quad
        .radial(
            |r| {
                let f = sphere_fraction(model, r, t, d0);
                if f == 0.0 {
                    0.0
                } else {
                    f * p.derivative(r).powi(2) * model.measure_weight(r)
                }
            },
            lo,
            Upper::Finite(hi),
            &hints,
        )?
        .value)
}

/// Mean over directions `ψ` from `b` of `h(ρ)/ρ²` at geodesic distance `s`
/// from `b`, where `ρ` is the distance to the pole and `d(b, pole) = r0`.
fn direction_average(
    model: &SphereModel,
    potential: &PotentialField,
    r0: f64,
    s: f64,
    quad: &Quadrature,
) -> Result<f64> {
    let rr = model.radius;
    let k = model.n as i32 - 2;
    let (x0, xs) = (r0 / rr, s / rr);
    let norm = sphere_volume(model.n - 1) / sphere_volume(model.n - 2);
    let val = quad.integrate(
        |psi| {
            let rho = rr * chart_geometry(x0, xs, psi).0;
            psi.sin().powi(k) * potential.value(rho) / (rho * rho)
        },
        0.0,
        PI,
    )?;
    Ok(val.value / norm)
}

fn off_pole_hardy(
    model: &SphereModel,
    potential: &PotentialField,
    b: &OffPoleBubble,
    quad: &Quadrature,
) -> Result<Estimate> {
    if potential.h0 == 0.0 && potential.h2 == 0.0 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let p = &b.profile;
    let support = p.support().unwrap_or(model.injectivity_radius());
    let inner = Quadrature::new(1e-11)?;
    let failure = RefCell::new(None);
    let est = quad.radial(
        |s| {
            let u = p.value(s);
            if u == 0.0 {
                return 0.0;
            }
            match direction_average(model, potential, b.center, s, &inner) {
                Ok(avg) => u * u * avg * model.measure_weight(s),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        Upper::Finite(support),
        &RadialHints::new().breakpoints(p.breakpoints()),
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    est
}

fn bubble_for(kind: BubbleKind, n: u32, potential: &PotentialField, scale: f64) -> Result<BubbleProfile> {
    match kind {
        BubbleKind::Singular => {
            let params = ProblemParams::new(n, potential.h0)?;
            if params.lambda == 0.0 {
                BubbleProfile::standard(n, scale)
            } else {
                BubbleProfile::singular(params, scale)
            }
        }
        BubbleKind::Standard => BubbleProfile::standard(n, scale),
    }
}

/// A single glued bubble: `scale^{(2-n)/2} η_r(dist) U(dist/scale)`, the
/// singular family at the pole with `λ = h(p)`, the standard family elsewhere.
pub fn glue_bubble(spec: &GlueSpec, model: &SphereModel, potential: &PotentialField) -> Result<SyntheticField> {
    build_field(None, std::slice::from_ref(spec), model, potential)
}

/// `background + Σ glued bubbles`.
pub fn build_field(
    background: Option<&DiscreteRadialField>,
    specs: &[GlueSpec],
    model: &SphereModel,
    potential: &PotentialField,
) -> Result<SyntheticField> {
    for s in specs {
        s.validate(model)?;
    }
    for (i, a) in specs.iter().enumerate() {
        for b in &specs[i + 1..] {
            if a.center == b.center && (a.scale - b.scale).abs() <= 1e-12 * a.scale.max(b.scale) {
                return Err(invalid("specs", "two bubbles share a centre and a scale"));
            }
        }
    }
    let mut field = SyntheticField::zero(*model);
    if let Some(bg) = background {
        if bg.grid.model != *model {
            return Err(invalid("background", "background grid lives on a different sphere"));
        }
        field.pole.background = Some(bg.clone());
    }
    let pole_reach = specs
        .iter()
        .filter(|s| s.center == Center::Pole)
        .map(|s| 2.0 * s.cutoff_radius)
        .fold(0.0, f64::max);
    let mut off: Vec<(f64, f64)> = Vec::new();
    for s in specs {
        let bubble = bubble_for(s.kind, model.n, potential, s.scale)?;
        let glued = GluedBubble::new(bubble, Cutoff::new(s.cutoff_radius)?);
        match s.center {
            Center::Pole => field.pole.bubbles.push(glued),
            Center::OffPole(r0) => {
                if background.is_some() {
                    return Err(Error::UnsupportedField(
                        "off-pole bubbles cannot be combined with a background".into(),
                    ));
                }
                let reach = 2.0 * s.cutoff_radius;
                if r0 - reach <= pole_reach {
                    return Err(invalid("center", "off-pole support overlaps the pole bubbles"));
                }
                if off.iter().any(|&(c, w)| (c - r0).abs() <= w + reach) {
                    return Err(invalid("center", "off-pole supports overlap"));
                }
                off.push((r0, reach));
                field.off_pole.push(OffPoleBubble {
                    center: r0,
                    profile: glued,
                });
            }
        }
    }
    Ok(field)
}

/// `v_m = background + Σ glued bubbles` with the `i`-th scale set to
/// `scales[m]^{specs[i].scale_power}`.
pub fn build_sequence(
    background: Option<&DiscreteRadialField>,
    specs: &[GlueSpec],
    scales: &[f64],
    model: &SphereModel,
    potential: &PotentialField,
) -> Result<Vec<SyntheticField>> {
    scales
        .iter()
        .map(|&base| {
            let step: Vec<GlueSpec> = specs
                .iter()
                .map(|s| GlueSpec {
                    scale: base.powf(s.scale_power),
                    ..*s
                })
                .collect();
            build_field(background, &step, model, potential)
        })
        .collect()
}

/// `2^{-m}` for `m` in `range`.
pub fn dyadic_scales(range: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    range.map(|m| 2f64.powi(-m)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    /// Capture radius about the selected centre.
    pub radius: f64,
    /// Distance of the selected centre from the pole.
    pub center: f64,
    /// Capture radius about the pole.
    pub pole_radius: f64,
    /// Whether pole capture stagnated and the off-pole scan ran.
    pub scanned: bool,
}

fn capture_radius(field: &SyntheticField, center: f64, gamma: f64, quad: &Quadrature) -> Result<f64> {
    let max = field.model.injectivity_radius();
    let mut lo = (1e-14 * max).ln();
    let mut hi = max.ln();
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if field.ball_gradient_energy(center, mid.exp(), quad)? < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    Ok(hi.exp())
}

/// Smallest ball about the pole holding `γ` of gradient energy; if that
/// ball holds almost nothing at half its radius, the maximiser over centres
/// along the meridian of the concentration function is returned instead.
pub fn detect_concentration(field: &SyntheticField, gamma: f64, quad: &Quadrature) -> Result<Detection> {
    let total = field.total_gradient_energy(quad)?;
    if !(gamma > 0.0 && gamma < total) {
        return Err(invalid("gamma", format!("must lie in (0, {total}), got {gamma}")));
    }
    let pole_radius = capture_radius(field, 0.0, gamma, quad)?;
    let inner = field.ball_gradient_energy(0.0, pole_radius / 2.0, quad)?;
    if inner >= 0.05 * gamma {
        return Ok(Detection {
            radius: pole_radius,
            center: 0.0,
            pole_radius,
            scanned: false,
        });
    }
    let max = field.model.injectivity_radius();
    let centers: Vec<f64> = (1..SCAN_CENTERS)
        .map(|j| max * j as f64 / SCAN_CENTERS as f64)
        .collect();
    let radii: Vec<f64> = centers
        .par_iter()
        .map(|&c| capture_radius(field, c, gamma, quad))
        .collect::<Result<_>>()?;
    let (best, _) = radii.iter().enumerate().fold(
        (0, f64::INFINITY),
        |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
    );
    if pole_radius <= radii[best] {
        return Ok(Detection {
            radius: pole_radius,
            center: 0.0,
            pole_radius,
            scanned: true,
        });
    }
    let step = max / SCAN_CENTERS as f64;
    let (mut a, mut b) = (centers[best] - step, centers[best] + step);
    let f = |c: f64| capture_radius(field, c, gamma, quad);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    let tol = 1e-3 * radii[best];
    while b - a > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2)?;
        }
    }
    let center = 0.5 * (a + b);
    Ok(Detection {
        radius: f(center)?,
        center,
        pole_radius,
        scanned: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum BubbleVerdict {
    Bubble,
    NoBubble(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    pub recovered_scale: f64,
    pub profile_mismatch: f64,
    pub kind: BubbleKind,
    pub verdict: BubbleVerdict,
}

/// `∫_{B(c, ρ)} ∇u_k·∇B` for component `k` and the model bubble `B` centred at `c`.
fn cross_term(
    model: &SphereModel,
    comp: &Component<'_>,
    bubble: &BubbleProfile,
    center: f64,
    rho: f64,
    quad: &Quadrature,
) -> Result<f64> {
    let quad = &floored(quad);
    let d0 = (center - comp.position).abs();
    let max = model.injectivity_radius();
    let p = comp.profile;
    let support = p.support().unwrap_or(max).min(max);
    let exp = {
        let s = p.leading_exponent().min(0.0) + (bubble.a() - 1.0) * (model.n as f64 - 2.0) / 2.0;
        (s < 0.0).then_some(s + model.n as f64 - 3.0)
    };
    let scale = bubble.scale;
    let bps: Vec<f64> = [1e-2, 1e-1, 1.0, 10.0, 100.0].iter().map(|k| k * scale).collect();
    if d0 == 0.0 {
        let upper = rho.min(support);
        let hints = hints_for(p, &bps, exp);
        return Ok(quad
            .radial(
                |r| p.derivative(r) * bubble.value_derivative(r) * model.measure_weight(r),
                0.0,
                Upper::Finite(upper),
                &hints,
            )?
            .value);
    }
    if d0 - support >= rho {
        return Ok(0.0);
    }
    let rr = model.radius;
    let x0 = d0 / rr;
    let k = model.n as i32 - 2;
    let norm = sphere_volume(model.n - 1) / sphere_volume(model.n - 2);
    let inner = Quadrature::new(1e-9)?;
    let failure = RefCell::new(None);
    let est = quad.radial(
        |s| {
            let xs = s / rr;
            let res = inner.integrate(
                |psi| {
                    let (xd, cos_angle) = chart_geometry(x0, xs, psi);
                    let d = rr * xd;
                    if d >= support {
                        return 0.0;
                    }
                    psi.sin().powi(k) * p.derivative(d) * cos_angle
                },
                0.0,
                PI,
            );
            match res {
                Ok(v) => v.value / norm * bubble.value_derivative(s) * model.measure_weight(s),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        Upper::Finite(rho),
        &RadialHints::new().breakpoints(bps.iter().copied().chain([(d0 - support).abs(), d0 + support])),
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(est?.value)
}

fn bubble_gradient_on_ball(model: &SphereModel, bubble: &BubbleProfile, rho: f64, quad: &Quadrature) -> Result<f64> {
    let s = (bubble.a() - 1.0) * (model.n as f64 - 2.0) / 2.0;
    let mut hints = RadialHints::new().breakpoints([1e-2, 1e-1, 1.0, 10.0, 100.0].iter().map(|k| k * bubble.scale));
    if s < 0.0 {
        hints = hints.zero_power(2.0 * s + model.n as f64 - 3.0);
    }
    Ok(quad
        .radial(
            |r| bubble.value_derivative(r).powi(2) * model.measure_weight(r),
            0.0,
            Upper::Finite(rho),
            &hints,
        )?
        .value)
}

/// Normalised `L²` distance between `∇u` and `∇B_s` on `B(center, ρ)`.
fn mismatch(
    field: &SyntheticField,
    bubble: &BubbleProfile,
    center: f64,
    rho: f64,
    local: f64,
    quad: &Quadrature,
) -> Result<f64> {
    let model = &field.model;
    let mut cross = 0.0;
    for c in field.components() {
        cross += cross_term(model, &c, bubble, center, rho, quad)?;
    }
    let bb = bubble_gradient_on_ball(model, bubble, rho, quad)?;
    Ok(((local - 2.0 * cross + bb) / local).max(0.0).sqrt())
}

/// Fits the scale of the model bubble at the detected centre by minimising
/// the gradient mismatch on `B(center, 8 r_m)`, singular profile at the pole
/// and standard elsewhere.
pub fn extract_and_compare(
    field: &SyntheticField,
    detection: &Detection,
    potential: &PotentialField,
    quad: &Quadrature,
) -> Result<Extraction> {
    let model = &field.model;
    let kind = if detection.center == 0.0 {
        BubbleKind::Singular
    } else {
        BubbleKind::Standard
    };
    let r_m = detection.radius;
    let rho = (EXTRACTION_BALL * r_m).min(model.injectivity_radius() - detection.center);
    let local = field.ball_gradient_energy(detection.center, rho, quad)?;
    if !(local > 0.0) {
        return Ok(Extraction {
            recovered_scale: f64::NAN,
            profile_mismatch: f64::NAN,
            kind,
            verdict: BubbleVerdict::NoBubble("no gradient energy near the centre".into()),
        });
    }
    let eval = |ln_s: f64| -> Result<f64> {
        let b = bubble_for(kind, model.n, potential, ln_s.exp())?;
        mismatch(field, &b, detection.center, rho, local, quad)
    };
    let (mut a, mut b) = ((r_m / 16.0).ln(), (16.0 * r_m).ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (eval(x1)?, eval(x2)?);
    while b - a > 1e-4 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = eval(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = eval(x2)?;
        }
    }
    let ln_s = 0.5 * (a + b);
    let profile_mismatch = eval(ln_s)?;
    let verdict = if profile_mismatch > MISMATCH_LIMIT {
        BubbleVerdict::NoBubble(format!(
            "profile mismatch {profile_mismatch:.3} exceeds {MISMATCH_LIMIT}"
        ))
    } else {
        BubbleVerdict::Bubble
    };
    Ok(Extraction {
        recovered_scale: ln_s.exp(),
        profile_mismatch,
        kind,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrezisLiebRow {
    pub deltas: Vec<f64>,
    pub decreasing: bool,
    /// `Δ_last / Δ_first`.
    pub ratio: f64,
}

/// `Δ_m = |∫(|u+v_m|^{2*} - |u|^{2*} - |v_m|^{2*})|` along a sequence of
/// radial fields about the pole.
pub fn brezis_lieb_check<B, V>(
    model: &SphereModel,
    background: &B,
    sequence: &[V],
    quad: &Quadrature,
) -> Result<BrezisLiebRow>
where
    B: RadialProfile + ?Sized,
    V: RadialProfile,
{
    let two_star = critical_exponent(model.n);
    let max = model.injectivity_radius();
    let deltas: Vec<f64> = sequence
        .iter()
        .map(|v| {
            let mut bps = background.breakpoints();
            bps.extend(v.breakpoints());
            let s = background.leading_exponent().min(v.leading_exponent());
            let mut hints = RadialHints::new().breakpoints(bps);
            if s < 0.0 {
                hints = hints.zero_power(two_star * s + model.n as f64 - 1.0);
            }
            let est = quad.radial(
                |r| {
                    let u = background.value(r);
                    let w = v.value(r);
                    ((u + w).abs().powf(two_star) - u.abs().powf(two_star) - w.abs().powf(two_star))
                        * model.measure_weight(r)
                },
                0.0,
                Upper::Finite(max),
                &hints,
            )?;
            Ok(est.value.abs())
        })
        .collect::<Result<_>>()?;
    let decreasing = deltas.windows(2).all(|w| w[1] < w[0]);
    let ratio = match (deltas.first(), deltas.last()) {
        (Some(&f), Some(&l)) if f > 0.0 => l / f,
        _ => 0.0,
    };
    Ok(BrezisLiebRow {
        deltas,
        decreasing,
        ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub total_energy: f64,
    pub background_energy: f64,
    /// `J_h` of each glued bubble on its own, summed.
    pub glued_bubble_energies: f64,
    /// Limit energies: `D*` per singular and `d*` per standard bubble.
    pub sum_bubble_energies: f64,
    /// `J_h(v_m) - J_h(u) - Σ J_h(glued)`.
    pub interaction: f64,
    /// `|J_h(v_m) - J_h(u) - Σ limit energies|`.
    pub remainder_energy_norm: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionRow {
    pub scale: f64,
    pub detected_radius: f64,
    pub detected_center: f64,
    pub pole_radius: f64,
    pub recovered_scale: f64,
    pub profile_mismatch: f64,
    pub verdict: BubbleVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub gamma: f64,
    pub beta_star: f64,
    pub d_star: f64,
    #[serde(rename = "D_star")]
    pub big_d_star: f64,
    pub rows: Vec<ScaleRow>,
    pub extraction: Vec<ExtractionRow>,
    pub remainder_decreasing: bool,
    pub brezis_lieb: Option<BrezisLiebRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionSetup {
    pub model: SphereModel,
    pub potential: PotentialField,
    pub specs: Vec<GlueSpec>,
    pub scales: Vec<f64>,
    pub background: Option<DiscreteRadialField>,
    pub gamma: Option<f64>,
}

/// `γ = n β*/4`.
pub fn default_gamma(params: &ProblemParams) -> Result<f64> {
    Ok(params.dim() * threshold_beta_star(params)?.value / 4.0)
}

/// Detection and extraction for one field, including the threshold rule.
pub fn analyse_field(
    field: &SyntheticField,
    potential: &PotentialField,
    gamma: f64,
    beta_star: f64,
    quad: &Quadrature,
) -> Result<(Option<Detection>, Extraction)> {
    let energy = field.energy(potential, quad)?.total;
    if energy < THRESHOLD_MARGIN * beta_star {
        return Ok((
            None,
            Extraction {
                recovered_scale: f64::NAN,
                profile_mismatch: f64::NAN,
                kind: BubbleKind::Singular,
                verdict: BubbleVerdict::NoBubble(format!("energy {energy:.6} below threshold {beta_star:.6}")),
            },
        ));
    }
    let total = field.total_gradient_energy(quad)?;
    if gamma >= total {
        return Ok((
            None,
            Extraction {
                recovered_scale: f64::NAN,
                profile_mismatch: f64::NAN,
                kind: BubbleKind::Singular,
                verdict: BubbleVerdict::NoBubble("gradient energy below the capture threshold".into()),
            },
        ));
    }
    let d = detect_concentration(field, gamma, quad)?;
    let x = extract_and_compare(field, &d, potential, quad)?;
    Ok((Some(d), x))
}

fn limit_energy(spec: &GlueSpec, potential: &PotentialField, n: u32) -> Result<f64> {
    let c = compute_constants(&ProblemParams::new(n, potential.h0)?)?;
    Ok(match spec.kind {
        BubbleKind::Singular => c.big_d_star,
        BubbleKind::Standard => c.d_star,
    })
}

pub fn run_decomposition(setup: &DecompositionSetup, quad: &Quadrature) -> Result<DecompositionReport> {
    let model = &setup.model;
    let potential = &setup.potential;
    let params = ProblemParams::new(model.n, potential.h0)?;
    let constants = compute_constants(&params)?;
    let beta_star = threshold_beta_star(&params)?.value;
    let gamma = match setup.gamma {
        Some(g) => g,
        None => default_gamma(&params)?,
    };
    let background = setup.background.as_ref();
    let sequence = build_sequence(background, &setup.specs, &setup.scales, model, potential)?;
    let background_energy = match background {
        Some(bg) => {
            let f = build_field(Some(bg), &[], model, potential)?;
            f.energy(potential, quad)?.total
        }
        None => 0.0,
    };
    let limits: f64 = setup
        .specs
        .iter()
        .map(|s| limit_energy(s, potential, model.n))
        .sum::<Result<f64>>()?;

    let rows: Vec<ScaleRow> = sequence
        .par_iter()
        .zip(setup.scales.par_iter())
        .map(|(field, &scale)| {
            let e = field.energy(potential, quad)?;
            let mut glued = 0.0;
            for b in &field.pole.bubbles {
                glued += sphere_energy(b, model, potential, quad)?.total;
            }
            for b in &field.off_pole {
                let single = SyntheticField {
                    model: *model,
                    pole: CompositeField::new(Vec::new(), None),
                    off_pole: vec![*b],
                };
                glued += single.energy(potential, quad)?.total;
            }
            Ok(ScaleRow {
                scale,
                total_energy: e.total,
                background_energy,
                glued_bubble_energies: glued,
                sum_bubble_energies: limits,
                interaction: e.total - background_energy - glued,
                remainder_energy_norm: (e.total - background_energy - limits).abs(),
                error: e.error,
            })
        })
        .collect::<Result<_>>()?;
    let remainder_decreasing = rows
        .windows(2)
        .all(|w| w[1].remainder_energy_norm < w[0].remainder_energy_norm);

    let extraction: Vec<ExtractionRow> = sequence
        .par_iter()
        .zip(setup.scales.par_iter())
        .map(|(field, &scale)| {
            let (d, x) = analyse_field(field, potential, gamma, beta_star, quad)?;
            Ok(ExtractionRow {
                scale,
                detected_radius: d.map_or(f64::NAN, |d| d.radius),
                detected_center: d.map_or(f64::NAN, |d| d.center),
                pole_radius: d.map_or(f64::NAN, |d| d.pole_radius),
                recovered_scale: x.recovered_scale,
                profile_mismatch: x.profile_mismatch,
                verdict: x.verdict,
            })
        })
        .collect::<Result<_>>()?;

    let brezis_lieb = match background {
        Some(bg) if sequence.iter().all(|f| f.off_pole.is_empty()) => {
            let bubbles: Vec<CompositeField> = sequence
                .iter()
                .map(|f| CompositeField::new(f.pole.bubbles.clone(), None))
                .collect();
            Some(brezis_lieb_check(model, bg, &bubbles, quad)?)
        }
        _ => None,
    };

    Ok(DecompositionReport {
        gamma,
        beta_star,
        d_star: constants.d_star,
        big_d_star: constants.big_d_star,
        rows,
        extraction,
        remainder_decreasing,
        brezis_lieb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hardy_critical_lambda;

    fn setup() -> (SphereModel, PotentialField, f64) {
        let model = SphereModel::new(5, 1.0).unwrap();
        let h0 = 0.5 * hardy_critical_lambda(5);
        let pot = PotentialField::new(h0, -1.0, 4.0).unwrap();
        let d = compute_constants(&ProblemParams::new(5, h0).unwrap())
            .unwrap()
            .big_d_star;
        (model, pot, d)
    }

    fn quad() -> Quadrature {
        Quadrature::new(1e-10).unwrap()
    }

    #[test]
    fn spec_validation() {
        let (model, pot, _) = setup();
        let bad = GlueSpec {
            kind: BubbleKind::Singular,
            ..GlueSpec::standard(1.0, 0.01, 0.2)
        };
        assert!(bad.validate(&model).is_err());
        assert!(GlueSpec::singular(0.05, 0.3).validate(&model).is_err());
        assert!(GlueSpec::singular(0.01, 2.0).validate(&model).is_err());
        assert!(GlueSpec::standard(0.3, 0.001, 0.2).validate(&model).is_err());
        let s = GlueSpec::singular(0.01, 0.3);
        assert!(build_field(None, &[s, s], &model, &pot).is_err());
        let far = GlueSpec::standard(1.5, 0.001, 0.2);
        assert!(build_field(None, &[s, far], &model, &pot).is_ok());
        let near = GlueSpec::standard(0.9, 0.001, 0.2);
        assert!(build_field(None, &[s, near], &model, &pot).is_err());
    }

    #[test]
    fn glued_field_decays_outside_cutoff() {
        let (model, pot, _) = setup();
        let mut last = f64::INFINITY;
        for m in [5, 7, 9, 11] {
            let f = glue_bubble(&GlueSpec::singular(2f64.powi(-m), 0.39), &model, &pot).unwrap();
            let sup = (0..100)
                .map(|i| 0.39 + 0.39 * i as f64 / 100.0)
                .map(|r| f.pole.value(r).abs())
                .fold(0.0, f64::max);
            assert!(sup < last);
            last = sup;
        }
        assert!(last < 0.05, "{last}");
    }

    #[test]
    fn fraction_limits() {
        let model = SphereModel::new(5, 1.0).unwrap();
        assert_eq!(sphere_fraction(&model, 0.1, 0.5, 0.2), 1.0);
        assert_eq!(sphere_fraction(&model, 0.1, 0.05, 0.5), 0.0);
        let f = sphere_fraction(&model, 0.3, 0.3, 1e-9);
        assert!(f > 0.45 && f < 0.55, "{f}");
        let mut prev = 0.0;
        for i in 1..50 {
            let t = 0.02 * i as f64;
            let f = sphere_fraction(&model, 0.4, t, 0.5);
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn nested_ball_energy_matches_radial_for_centred_balls() {
        let (model, pot, _) = setup();
        let f = glue_bubble(&GlueSpec::standard(1.0, 0.01, 0.2), &model, &pot).unwrap();
        let q = quad();
        let total = f.total_gradient_energy(&q).unwrap();
        let whole = f.ball_gradient_energy(0.0, model.injectivity_radius(), &q).unwrap();
        assert!((whole - total).abs() < 1e-8 * total);
        let c = f.ball_gradient_energy(1.0, 0.05, &q).unwrap();
        let near = f.ball_gradient_energy(1.0 + 1e-7, 0.05, &q).unwrap();
        assert!((c - near).abs() < 1e-4 * c);
        assert!(f.ball_gradient_energy(0.0, 0.5, &q).unwrap() == 0.0);
    }

    #[test]
    fn capture_radius_brackets_scale() {
        let (model, pot, _) = setup();
        let q = quad();
        for m in [6, 9] {
            let s = 2f64.powi(-m);
            let f = glue_bubble(&GlueSpec::singular(s, 0.3), &model, &pot).unwrap();
            let half = f.total_gradient_energy(&q).unwrap() / 2.0;
            let d = detect_concentration(&f, half, &q).unwrap();
            assert_eq!(d.center, 0.0);
            assert!(d.radius >= s / 4.0 && d.radius <= 4.0 * s, "s={s} r={}", d.radius);
            let d2 = detect_concentration(&f, half * 1.5, &q).unwrap();
            assert!(d2.radius > d.radius);
        }
    }

    #[test]
    fn off_pole_detection_and_extraction() {
        let (model, pot, _) = setup();
        let q = quad();
        let s = 2f64.powi(-8);
        let f = glue_bubble(&GlueSpec::standard(1.2, s, 0.2), &model, &pot).unwrap();
        let gamma = default_gamma(&ProblemParams::new(5, pot.h0).unwrap()).unwrap();
        let d = detect_concentration(&f, gamma, &q).unwrap();
        assert!(d.scanned);
        assert!((d.center - 1.2).abs() < 0.1 * s, "center {}", d.center);
        assert!(d.pole_radius > 1.0);
        let x = extract_and_compare(&f, &d, &pot, &q).unwrap();
        assert_eq!(x.kind, BubbleKind::Standard);
        assert!((x.recovered_scale / s - 1.0).abs() < 0.05, "{}", x.recovered_scale);
        assert!(x.profile_mismatch < 0.05, "{}", x.profile_mismatch);
    }

    #[test]
    fn pole_extraction_round_trip() {
        let (model, pot, _) = setup();
        let q = quad();
        let p = ProblemParams::new(5, pot.h0).unwrap();
        let gamma = default_gamma(&p).unwrap();
        let beta = threshold_beta_star(&p).unwrap().value;
        let s = 2f64.powi(-10);
        let f = glue_bubble(&GlueSpec::singular(s, 0.3), &model, &pot).unwrap();
        let (d, x) = analyse_field(&f, &pot, gamma, beta, &q).unwrap();
        assert!(!d.unwrap().scanned);
        assert_eq!(x.verdict, BubbleVerdict::Bubble);
        assert!((x.recovered_scale / s - 1.0).abs() < 0.05);
        assert!(x.profile_mismatch < 0.05);
    }

    #[test]
    fn off_pole_energy_tends_to_d_star() {
        let (model, pot, _) = setup();
        let q = quad();
        let d_star = compute_constants(&ProblemParams::new(5, 0.0).unwrap()).unwrap().d_star;
        let mut last = f64::INFINITY;
        for m in [6, 8, 10] {
            let f = glue_bubble(&GlueSpec::standard(1.2, 2f64.powi(-m), 0.2), &model, &pot).unwrap();
            let e = f.energy(&pot, &q).unwrap();
            let err = (e.total - d_star).abs();
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-3 * d_star);
    }

    #[test]
    fn brezis_lieb_zero_background() {
        let (model, pot, _) = setup();
        let q = quad();
        let seq = build_sequence(None, &[GlueSpec::singular(1.0, 0.3)], &[0.01, 0.001], &model, &pot).unwrap();
        let zero = CompositeField::new(Vec::new(), None);
        let bubbles: Vec<CompositeField> = seq.iter().map(|f| f.pole.clone()).collect();
        let row = brezis_lieb_check(&model, &zero, &bubbles, &q).unwrap();
        assert!(row.deltas.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_bubble_sequence_approaches_d_star() {
        let (model, pot, d) = setup();
        let q = quad();
        let setup = DecompositionSetup {
            model,
            potential: pot,
            specs: vec![GlueSpec::singular(1.0, PI / 4.0)],
            scales: dyadic_scales(5..=9),
            background: None,
            gamma: None,
        };
        let r = run_decomposition(&setup, &q).unwrap();
        assert!(r.remainder_decreasing);
        assert!(r.rows.last().unwrap().remainder_energy_norm < 0.01 * d);
        assert!(r.rows.iter().all(|row| row.interaction.abs() < 1e-9 * d));
    }
}
