//! One function per subcommand. Each returns the JSON result, the CSV tables,
//! and any computational diagnostics that should fail the run.

use std::sync::Arc;

use serde_json::{json, Value};

use critlab_core::constants::{threshold_beta_star, thresholds_extended};
use critlab_core::decomposition::{dyadic_scales, run_decomposition};
use critlab_core::expansion::{existence_conditions, run_expansion, Verdict};
use critlab_core::quadrature::{compute_i, recurrence_alpha, recurrence_beta};
use critlab_core::solver::{minimize, multistart, seed_scales};
use critlab_core::{
    compute_constants, BubbleProfile, DecompositionSetup, DiscreteRadialField, ExpansionSetup, Functional,
    IntegralSpec, ProblemParams, Quadrature, RadialGrid, SolverConfig,
};

use crate::config::{
    BubbleConfig, ConstantsConfig, DecomposeConfig, ExpansionConfig, IntegralsConfig, SolveConfig, SweepConfig, Task,
};

/// Residuals and spreads above this are reported as failures.
pub const DIAGNOSTIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn nums(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub result: Value,
    pub tables: Vec<Table>,
    /// Non-empty means exit status 1.
    pub failures: Vec<String>,
}

pub fn run(task: &Task) -> critlab_core::Result<Outcome> {
    match task {
        Task::Constants(c) => constants(c),
        Task::Integrals(c) => integrals(c),
        Task::Bubble(c) => bubble(c),
        Task::Expansion(c) => expansion(c),
        Task::Solve(c) => solve(c),
        Task::Decompose(c) => decompose(c),
        Task::Sweep(c) => sweep(c),
    }
}

fn constants(c: &ConstantsConfig) -> critlab_core::Result<Outcome> {
    let p = ProblemParams::new(c.n, c.lambda)?;
    let k = compute_constants(&p)?;
    let beta = threshold_beta_star(&p)?;
    let (d_ext, big_ext) = thresholds_extended(&p)?;
    let result = json!({
        "k_sobolev": k.k_sobolev,
        "k_hardy": k.k_hardy,
        "a": k.a,
        "d_star": k.d_star,
        "D_star": k.big_d_star,
        "q_sharp": k.q_sharp,
        "beta_star": beta.value,
        "beta_star_variants": {"exponent_half_n": beta.exponent_half_n, "exponent_one": beta.exponent_one},
        "extended": {"d_star": d_ext, "D_star": big_ext},
    });
    let mut t = Table::new(
        "constants",
        &[
            "n",
            "lambda",
            "k_sobolev",
            "k_hardy",
            "a",
            "d_star",
            "D_star",
            "q_sharp",
            "beta_star",
        ],
    );
    let mut row = vec![c.n.to_string()];
    row.extend(nums(&[
        c.lambda,
        k.k_sobolev,
        k.k_hardy,
        k.a,
        k.d_star,
        k.big_d_star,
        k.q_sharp,
        beta.value,
    ]));
    t.push(row);
    Ok(Outcome {
        result,
        tables: vec![t],
        failures: Vec::new(),
    })
}

fn integrals(c: &IntegralsConfig) -> critlab_core::Result<Outcome> {
    let spec = IntegralSpec::new(c.alpha, c.beta, c.a);
    let value = compute_i(spec, c.rel_tol)?;
    // the beta recurrence predicts I^{alpha-2a}_{beta-1}; compare it with a direct evaluation of that
    let shifted = IntegralSpec::new(c.alpha - 2.0 * c.a, c.beta - 1.0, c.a);
    let check = |r: &critlab_core::Result<f64>, target: critlab_core::Result<f64>| match (r, target) {
        (Ok(v), Ok(t)) => json!({"predicted": v, "direct": t, "rel_diff": (v - t).abs() / t.abs()}),
        (Err(e), _) => json!({"unavailable": e.to_string()}),
        (_, Err(e)) => json!({"unavailable": e.to_string()}),
    };
    let ra = recurrence_alpha(spec, c.rel_tol);
    let rb = recurrence_beta(spec, c.rel_tol);
    let opt = |r: &critlab_core::Result<f64>| r.as_ref().map_or(String::new(), |v| v.to_string());
    let mut t = Table::new(
        "integrals",
        &["alpha", "beta", "a", "value", "recurrence_alpha", "recurrence_beta"],
    );
    let mut row = nums(&[c.alpha, c.beta, c.a, value]);
    row.push(opt(&ra));
    row.push(opt(&rb));
    t.push(row);
    let result = json!({
        "value": value,
        "recurrence_alpha": check(&ra, Ok(value)),
        "recurrence_beta": check(&rb, compute_i(shifted, c.rel_tol)),
    });
    Ok(Outcome {
        result,
        tables: vec![t],
        failures: Vec::new(),
    })
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn bubble(c: &BubbleConfig) -> critlab_core::Result<Outcome> {
    let p = ProblemParams::new(c.n, c.lambda)?;
    let b = BubbleProfile::for_params(p, c.mu)?;
    let quad = Quadrature::new(c.rel_tol)?;
    let mut t = Table::new("bubble", &["r", "u", "du", "residual"]);
    let mut sup = 0.0f64;
    for r in log_grid(c.r_min, c.r_max, c.points) {
        let res = b.residual(r)?;
        sup = sup.max(res.abs());
        t.push(nums(&[r, b.value(r), b.value_derivative(r), res]));
    }
    let energy = b.energy(Functional::JInfinity, &quad)?;
    let quotient = energy.quotient(c.n);
    let k = compute_constants(&p)?;
    let mut failures = Vec::new();
    if sup > DIAGNOSTIC_TOL {
        failures.push(format!("bubble residual {sup:.3e} exceeds {DIAGNOSTIC_TOL:e}"));
    }
    Ok(Outcome {
        result: json!({
            "kind": b.kind,
            "a": b.a(),
            "sup_residual": sup,
            "energy": energy,
            "quotient": quotient,
            "q_sharp": k.q_sharp,
            "D_star": k.big_d_star,
        }),
        tables: vec![t],
        failures,
    })
}

fn expansion(c: &ExpansionConfig) -> critlab_core::Result<Outcome> {
    let m = &c.model;
    let setup = ExpansionSetup::new(m.model(), m.potential(), Some(c.delta), c.eps_count)?;
    let quad = Quadrature::new(c.rel_tol)?;
    let report = run_expansion(&setup, &quad)?;
    let existence = existence_conditions(&setup.params, &setup.model, &setup.potential, None, &quad)?;
    let mut t = Table::new(
        "expansion",
        &["eps", "grad_integral", "hardy_integral", "crit_integral", "energy"],
    );
    for p in &report.points {
        t.push(nums(&[
            p.eps,
            p.grad_integral,
            p.hardy_integral,
            p.crit_integral,
            p.energy,
        ]));
    }
    let mut failures = Vec::new();
    if report.verdict == Verdict::Inconclusive {
        failures.push(format!(
            "expansion inconclusive: fitted slope {:.6e}, fit residual {:.3e}",
            report.fitted_slope, report.fit_residual
        ));
    }
    Ok(Outcome {
        result: json!({"expansion": report, "existence": existence}),
        tables: vec![t],
        failures,
    })
}

fn solve(c: &SolveConfig) -> critlab_core::Result<Outcome> {
    let m = &c.model;
    let (model, potential, params) = (m.model(), m.potential(), m.params());
    let grid = Arc::new(RadialGrid::graded(model, c.nodes)?);
    let config = SolverConfig {
        max_iterations: c.max_iterations,
        energy_tol: c.energy_tol,
        ..SolverConfig::default()
    };
    let seeds = seed_scales(c.delta, c.seeds);
    let ms = multistart(&grid, &potential, &params, c.delta, &seeds, &config)?;
    let quad = Quadrature::new(1e-10)?;
    let existence = existence_conditions(&params, &model, &potential, Some(ms.best.energy), &quad)?;
    let mut t = Table::new("solve", &["r", "u"]);
    for (r, u) in grid.nodes.iter().zip(&ms.best.minimizer.values) {
        t.push(nums(&[*r, *u]));
    }
    let mut failures = Vec::new();
    if ms.best.residual_norm > DIAGNOSTIC_TOL {
        failures.push(format!(
            "solver residual {:.3e} exceeds {DIAGNOSTIC_TOL:e}",
            ms.best.residual_norm
        ));
    }
    if ms.spread > DIAGNOSTIC_TOL {
        failures.push(format!(
            "multistart spread {:.3e} exceeds {DIAGNOSTIC_TOL:e}",
            ms.spread
        ));
    }
    let best = &ms.best;
    Ok(Outcome {
        result: json!({
            "energy": best.energy,
            "residual_norm": best.residual_norm,
            "classification": best.classification,
            "boundary": best.boundary,
            "D_star": best.d_star,
            "iterations": best.iterations,
            "newton_iterations": best.newton_iterations,
            "nehari_defect": best.nehari_defect,
            "diagnostics": best.diagnostics,
            "multistart": {"seeds": ms.seeds, "energies": ms.energies, "residuals": ms.residuals, "spread": ms.spread},
            "existence": existence,
        }),
        tables: vec![t],
        failures,
    })
}

fn background(c: &DecomposeConfig) -> critlab_core::Result<DiscreteRadialField> {
    let m = &c.model;
    let model = m.model();
    let grid = Arc::new(RadialGrid::graded(model, c.nodes)?);
    let delta = critlab_core::expansion::default_delta(&model);
    let init = critlab_core::expansion::test_function(&grid, &m.params(), delta / 2.0, delta)?;
    Ok(minimize(&init, &m.potential(), &SolverConfig::default())?.minimizer)
}

fn decompose(c: &DecomposeConfig) -> critlab_core::Result<Outcome> {
    let m = &c.model;
    let bg = if c.background { Some(background(c)?) } else { None };
    let setup = DecompositionSetup {
        model: m.model(),
        potential: m.potential(),
        specs: c.bubbles.clone(),
        scales: dyadic_scales(c.m_min..=c.m_max),
        background: bg,
        gamma: c.gamma,
    };
    let quad = Quadrature::new(c.rel_tol)?;
    let report = run_decomposition(&setup, &quad)?;
    let mut rows = Table::new(
        "decompose",
        &[
            "scale",
            "total_energy",
            "background_energy",
            "glued_bubble_energies",
            "sum_bubble_energies",
            "interaction",
            "remainder_energy_norm",
        ],
    );
    for r in &report.rows {
        rows.push(nums(&[
            r.scale,
            r.total_energy,
            r.background_energy,
            r.glued_bubble_energies,
            r.sum_bubble_energies,
            r.interaction,
            r.remainder_energy_norm,
        ]));
    }
    let mut ext = Table::new(
        "extraction",
        &[
            "scale",
            "detected_radius",
            "detected_center",
            "recovered_scale",
            "profile_mismatch",
            "verdict",
        ],
    );
    for x in &report.extraction {
        let mut row = nums(&[
            x.scale,
            x.detected_radius,
            x.detected_center,
            x.recovered_scale,
            x.profile_mismatch,
        ]);
        row.push(match &x.verdict {
            critlab_core::decomposition::BubbleVerdict::Bubble => "bubble".into(),
            critlab_core::decomposition::BubbleVerdict::NoBubble(why) => format!("no_bubble: {why}"),
        });
        ext.push(row);
    }
    let mut failures = Vec::new();
    if !report.remainder_decreasing {
        failures.push("remainder energy is not decreasing along the sequence".into());
    }
    Ok(Outcome {
        result: serde_json::to_value(&report).expect("report serializes"),
        tables: vec![rows, ext],
        failures,
    })
}

fn sweep(c: &SweepConfig) -> critlab_core::Result<Outcome> {
    let mut t = Table::new("sweep", &["lambda", "a", "q_sharp", "d_star", "D_star", "beta_star"]);
    let mut entries = Vec::with_capacity(c.points);
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    for i in 0..c.points {
        let lambda = c.lambda_min + (c.lambda_max - c.lambda_min) * i as f64 / (c.points - 1) as f64;
        let p = ProblemParams::new(c.n, lambda)?;
        let k = compute_constants(&p)?;
        let beta = threshold_beta_star(&p)?.value;
        monotone &= k.big_d_star < prev;
        prev = k.big_d_star;
        t.push(nums(&[lambda, k.a, k.q_sharp, k.d_star, k.big_d_star, beta]));
        entries.push(json!({"lambda": lambda, "a": k.a, "q_sharp": k.q_sharp, "d_star": k.d_star, "D_star": k.big_d_star, "beta_star": beta}));
    }
    let mut failures = Vec::new();
    if !monotone {
        failures.push("D* is not strictly decreasing in lambda".into());
    }
    Ok(Outcome {
        result: json!({"rows": entries, "D_star_decreasing": monotone}),
        tables: vec![t],
        failures,
    })
}
