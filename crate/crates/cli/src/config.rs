//! Command line, config file, and their merge into a validated [`RunConfig`].
//!
//! The config file is flat `key = value` text. Keys before the first
//! `[section]` header are global (`output_dir`, `format`); each section is
//! named after a subcommand and holds that subcommand's parameters. `#`
//! starts a comment. Command-line flags override file values.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use critlab_core::decomposition::{Center, GlueSpec};
use critlab_core::expansion::ExpansionSetup;
use critlab_core::quadrature::IntegralSpec;
use critlab_core::{BubbleKind, PotentialField, ProblemParams, Quadrature, SphereModel};

pub const OUTPUT_DIR_ENV: &str = "CRITLAB_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "critlab-out";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value` or `[section]`, got `{text}`")]
    Syntax { path: String, line: usize, text: String },
    #[error("{path}:{line}: duplicate key `{key}`")]
    Duplicate { path: String, line: usize, key: String },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in {scope}")]
    UnknownKey { key: String, scope: String },
    #[error("`{key}`: cannot parse `{value}` as {expected}")]
    TypeMismatch {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("missing required parameter `{0}`")]
    Missing(String),
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<critlab_core::Error> for ConfigError {
    fn from(e: critlab_core::Error) -> Self {
        match e {
            critlab_core::Error::InvalidParameter { name, reason } => ConfigError::Invalid {
                key: name.to_string(),
                reason,
            },
            other => ConfigError::Invalid {
                key: "parameters".into(),
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Config(ConfigError),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl FromStr for Format {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        <Format as ValueEnum>::from_str(s, false).map_err(|_| ())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "critlab",
    version,
    about = "Critical Hardy–Sobolev energies on the round sphere"
)]
pub struct Cli {
    /// Flat key = value config file with per-subcommand sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $CRITLAB_OUTPUT_DIR, then ./critlab-out).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sharp constants, a, q_sharp, d* and D*.
    Constants(ConstantsArgs),
    /// I^alpha_beta with both recurrences.
    Integrals(IntegralsArgs),
    /// Residual and energy of a Euclidean bubble.
    Bubble(BubbleArgs),
    /// Energy expansion of the glued test functions.
    Expansion(ExpansionArgs),
    /// Nehari minimisation on a radial grid.
    Solve(SolveArgs),
    /// Synthetic bubble sequences, energy identity and extraction.
    Decompose(DecomposeArgs),
    /// Thresholds over a lambda grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IntegralsArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BubbleArgs {
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub r_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub r_max: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    pub sphere_radius: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub h0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub h2: Option<f64>,
    /// Radius beyond which h stops varying.
    #[arg(long, allow_negative_numbers = true)]
    pub delta_cap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExpansionArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eps_count: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub energy_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `singular,cutoff=R[,power=P]` or `standard,center=R0,cutoff=R[,power=P]`; repeatable.
    #[arg(long = "bubble")]
    pub bubbles: Vec<String>,
    #[arg(long)]
    pub m_min: Option<i32>,
    #[arg(long)]
    pub m_max: Option<i32>,
    /// Add the solver minimiser as a background.
    #[arg(long)]
    pub background: Option<bool>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

const GLOBAL_KEYS: &[&str] = &["output_dir", "format"];
const MODEL_KEYS: &[&str] = &["n", "sphere_radius", "h0", "h2", "delta_cap"];

fn section_keys(section: &str) -> Option<Vec<&'static str>> {
    let own: &[&str] = match section {
        "constants" => return Some(vec!["n", "lambda"]),
        "integrals" => return Some(vec!["alpha", "beta", "a", "rel_tol"]),
        "bubble" => return Some(vec!["n", "lambda", "mu", "points", "r_min", "r_max", "rel_tol"]),
        "sweep" => return Some(vec!["n", "lambda_min", "lambda_max", "points"]),
        "expansion" => &["delta", "eps_count", "rel_tol"],
        "solve" => &["nodes", "seeds", "delta", "max_iterations", "energy_tol"],
        "decompose" => &["bubbles", "m_min", "m_max", "background", "nodes", "gamma", "rel_tol"],
        _ => return None,
    };
    Some(MODEL_KEYS.iter().chain(own).copied().collect())
}

/// Parsed config file.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FileConfig {
    pub global: BTreeMap<String, String>,
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl FileConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut cfg = FileConfig::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if section_keys(&name).is_none() {
                    return Err(ConfigError::UnknownSection(name));
                }
                cfg.sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: path.into(),
                    line: i + 1,
                    text: raw.into(),
                });
            };
            let key = k.trim().replace('-', "_");
            let value = v.trim().to_string();
            let (map, allowed, scope) = match &current {
                None => (&mut cfg.global, GLOBAL_KEYS.to_vec(), "global scope".to_string()),
                Some(s) => (
                    cfg.sections.get_mut(s).unwrap(),
                    section_keys(s).unwrap(),
                    format!("section [{s}]"),
                ),
            };
            if !allowed.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { key, scope });
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(ConfigError::Duplicate {
                    path: path.into(),
                    line: i + 1,
                    key,
                });
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Flag-then-file lookup for one section.
struct Lookup<'a> {
    file: Option<&'a BTreeMap<String, String>>,
}

impl Lookup<'_> {
    fn get<T: FromStr>(&self, key: &str, flag: Option<T>, expected: &'static str) -> Result<Option<T>, ConfigError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.and_then(|m| m.get(key)) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::TypeMismatch {
                key: key.into(),
                value: v.clone(),
                expected,
            }),
        }
    }

    fn float(&self, key: &str, flag: Option<f64>) -> Result<Option<f64>, ConfigError> {
        self.get(key, flag, "a number")
    }

    fn int<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, ConfigError> {
        self.get(key, flag, "an integer")
    }

    fn required<T>(key: &str, v: Option<T>) -> Result<T, ConfigError> {
        v.ok_or_else(|| ConfigError::Missing(key.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantsConfig {
    pub n: u32,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegralsConfig {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BubbleConfig {
    pub n: u32,
    pub lambda: f64,
    pub mu: f64,
    pub points: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConfig {
    pub n: u32,
    pub sphere_radius: f64,
    pub h0: f64,
    pub h2: f64,
    pub delta_cap: f64,
}

impl ModelConfig {
    pub fn model(&self) -> SphereModel {
        SphereModel::new(self.n, self.sphere_radius).expect("validated")
    }

    pub fn potential(&self) -> PotentialField {
        PotentialField::new(self.h0, self.h2, self.delta_cap).expect("validated")
    }

    pub fn params(&self) -> ProblemParams {
        ProblemParams::new(self.n, self.h0).expect("validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub delta: f64,
    pub eps_count: usize,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub nodes: usize,
    pub seeds: usize,
    pub delta: f64,
    pub max_iterations: usize,
    pub energy_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecomposeConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub bubbles: Vec<GlueSpec>,
    pub m_min: i32,
    pub m_max: i32,
    pub background: bool,
    pub nodes: usize,
    pub gamma: Option<f64>,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepConfig {
    pub n: u32,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "subcommand", content = "parameters", rename_all = "snake_case")]
pub enum Task {
    Constants(ConstantsConfig),
    Integrals(IntegralsConfig),
    Bubble(BubbleConfig),
    Expansion(ExpansionConfig),
    Solve(SolveConfig),
    Decompose(DecomposeConfig),
    Sweep(SweepConfig),
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Constants(_) => "constants",
            Task::Integrals(_) => "integrals",
            Task::Bubble(_) => "bubble",
            Task::Expansion(_) => "expansion",
            Task::Solve(_) => "solve",
            Task::Decompose(_) => "decompose",
            Task::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub task: Task,
    pub output_dir: PathBuf,
    pub format: Format,
}

fn check_tol(rel_tol: f64) -> Result<f64, ConfigError> {
    Quadrature::new(rel_tol)?;
    Ok(rel_tol)
}

fn resolve_model(look: &Lookup<'_>, a: &ModelArgs) -> Result<ModelConfig, ConfigError> {
    let n = Lookup::required("n", look.int("n", a.n)?)?;
    let sphere_radius = look.float("sphere_radius", a.sphere_radius)?.unwrap_or(1.0);
    let model = SphereModel::new(n, sphere_radius)?;
    let h0 = look.float("h0", a.h0)?.unwrap_or(0.0);
    let h2 = look.float("h2", a.h2)?.unwrap_or(0.0);
    let delta_cap = look
        .float("delta_cap", a.delta_cap)?
        .unwrap_or(model.injectivity_radius());
    ProblemParams::new(n, h0).map_err(|e| match e {
        critlab_core::Error::InvalidParameter { reason, .. } => ConfigError::Invalid {
            key: "h0".into(),
            reason,
        },
        other => other.into(),
    })?;
    let potential = PotentialField::new(h0, h2, delta_cap)?;
    potential.check_singular(n)?;
    Ok(ModelConfig {
        n,
        sphere_radius,
        h0,
        h2,
        delta_cap,
    })
}

/// Parses `singular,cutoff=R[,power=P]` or `standard,center=R0,cutoff=R[,power=P]`.
pub fn parse_bubble(text: &str) -> Result<GlueSpec, ConfigError> {
    let bad = |reason: String| ConfigError::Invalid {
        key: "bubbles".into(),
        reason,
    };
    let mut parts = text.split(',').map(str::trim);
    let kind = match parts.next() {
        Some("singular") => BubbleKind::Singular,
        Some("standard") => BubbleKind::Standard,
        other => {
            return Err(bad(format!(
                "bubble kind must be `singular` or `standard`, got {other:?}"
            )))
        }
    };
    let (mut center, mut cutoff, mut power) = (None, None, 1.0);
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got `{p}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| ConfigError::TypeMismatch {
            key: format!("bubbles.{}", k.trim()),
            value: v.trim().into(),
            expected: "a number",
        })?;
        match k.trim() {
            "center" => center = Some(v),
            "cutoff" => cutoff = Some(v),
            "power" => power = v,
            other => {
                return Err(ConfigError::UnknownKey {
                    key: other.into(),
                    scope: "bubble spec".into(),
                })
            }
        }
    }
    let cutoff = cutoff.ok_or_else(|| ConfigError::Missing("bubbles.cutoff".into()))?;
    let center = match (kind, center) {
        (BubbleKind::Singular, None) => Center::Pole,
        (BubbleKind::Singular, Some(_)) => return Err(bad("singular bubbles live at the pole; drop `center`".into())),
        (BubbleKind::Standard, Some(c)) => Center::OffPole(c),
        (BubbleKind::Standard, None) => return Err(ConfigError::Missing("bubbles.center".into())),
    };
    Ok(GlueSpec {
        center,
        scale: 1.0,
        kind,
        cutoff_radius: cutoff,
        scale_power: power,
    })
}

fn resolve(cli: Cli, file: &FileConfig) -> Result<RunConfig, ConfigError> {
    let name = match &cli.command {
        Command::Constants(_) => "constants",
        Command::Integrals(_) => "integrals",
        Command::Bubble(_) => "bubble",
        Command::Expansion(_) => "expansion",
        Command::Solve(_) => "solve",
        Command::Decompose(_) => "decompose",
        Command::Sweep(_) => "sweep",
    };
    let look = Lookup {
        file: file.sections.get(name),
    };
    let global = Lookup {
        file: Some(&file.global),
    };
    let output_dir = match global.get("output_dir", cli.output_dir, "a path")? {
        Some(p) => p,
        None => std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
    };
    let format = global
        .get("format", cli.format, "one of csv, json, both")?
        .unwrap_or(Format::Both);

    let task = match cli.command {
        Command::Constants(a) => {
            let n = Lookup::required("n", look.int("n", a.n)?)?;
            let lambda = look.float("lambda", a.lambda)?.unwrap_or(0.0);
            ProblemParams::new(n, lambda)?;
            Task::Constants(ConstantsConfig { n, lambda })
        }
        Command::Integrals(a) => {
            let alpha = Lookup::required("alpha", look.float("alpha", a.alpha)?)?;
            let beta = Lookup::required("beta", look.float("beta", a.beta)?)?;
            let av = Lookup::required("a", look.float("a", a.a)?)?;
            let rel_tol = check_tol(look.float("rel_tol", a.rel_tol)?.unwrap_or(1e-12))?;
            IntegralSpec::new(alpha, beta, av).validate()?;
            Task::Integrals(IntegralsConfig {
                alpha,
                beta,
                a: av,
                rel_tol,
            })
        }
        Command::Bubble(a) => {
            let n = Lookup::required("n", look.int("n", a.n)?)?;
            let lambda = look.float("lambda", a.lambda)?.unwrap_or(0.0);
            let mu = look.float("mu", a.mu)?.unwrap_or(1.0);
            let points = look.int("points", a.points)?.unwrap_or(401);
            let r_min = look.float("r_min", a.r_min)?.unwrap_or(1e-3);
            let r_max = look.float("r_max", a.r_max)?.unwrap_or(1e3);
            let rel_tol = check_tol(look.float("rel_tol", a.rel_tol)?.unwrap_or(1e-12))?;
            critlab_core::BubbleProfile::for_params(ProblemParams::new(n, lambda)?, mu)?;
            if points < 2 {
                return Err(ConfigError::Invalid {
                    key: "points".into(),
                    reason: "need at least 2 points".into(),
                });
            }
            if !(r_min > 0.0 && r_max > r_min) {
                return Err(ConfigError::Invalid {
                    key: "r_min".into(),
                    reason: format!("need 0 < r_min < r_max, got {r_min}, {r_max}"),
                });
            }
            Task::Bubble(BubbleConfig {
                n,
                lambda,
                mu,
                points,
                r_min,
                r_max,
                rel_tol,
            })
        }
        Command::Expansion(a) => {
            let model = resolve_model(&look, &a.model)?;
            let delta = look.float("delta", a.delta)?;
            let eps_count = look
                .int("eps_count", a.eps_count)?
                .unwrap_or(critlab_core::expansion::DEFAULT_EPS_COUNT);
            let rel_tol = check_tol(look.float("rel_tol", a.rel_tol)?.unwrap_or(1e-12))?;
            let setup = ExpansionSetup::new(model.model(), model.potential(), delta, eps_count)?;
            Task::Expansion(ExpansionConfig {
                model,
                delta: setup.delta,
                eps_count,
                rel_tol,
            })
        }
        Command::Solve(a) => {
            let model = resolve_model(&look, &a.model)?;
            let nodes = look.int("nodes", a.nodes)?.unwrap_or(critlab_core::grid::DEFAULT_NODES);
            let seeds = look.int("seeds", a.seeds)?.unwrap_or(5);
            let delta = look
                .float("delta", a.delta)?
                .unwrap_or_else(|| critlab_core::expansion::default_delta(&model.model()));
            let max_iterations = look.int("max_iterations", a.max_iterations)?.unwrap_or(20_000);
            let energy_tol = look.float("energy_tol", a.energy_tol)?.unwrap_or(1e-10);
            if nodes < 8 {
                return Err(ConfigError::Invalid {
                    key: "nodes".into(),
                    reason: format!("need at least 8 nodes, got {nodes}"),
                });
            }
            if seeds == 0 {
                return Err(ConfigError::Invalid {
                    key: "seeds".into(),
                    reason: "need at least one seed".into(),
                });
            }
            let smallest = *critlab_core::solver::seed_scales(delta, seeds).last().unwrap();
            critlab_core::expansion::check_regime(&model.model(), smallest, delta)?;
            Task::Solve(SolveConfig {
                model,
                nodes,
                seeds,
                delta,
                max_iterations,
                energy_tol,
            })
        }
        Command::Decompose(a) => {
            let model = resolve_model(&look, &a.model)?;
            let sphere = model.model();
            let bubbles: Vec<GlueSpec> = if !a.bubbles.is_empty() {
                a.bubbles.iter().map(|b| parse_bubble(b)).collect::<Result<_, _>>()?
            } else if let Some(text) = look.file.and_then(|m| m.get("bubbles")) {
                text.split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(parse_bubble)
                    .collect::<Result<_, _>>()?
            } else {
                vec![GlueSpec::singular(1.0, sphere.injectivity_radius() / 4.0)]
            };
            let m_min = look.int("m_min", a.m_min)?.unwrap_or(5);
            let m_max = look.int("m_max", a.m_max)?.unwrap_or(12);
            let background = look.get("background", a.background, "true or false")?.unwrap_or(false);
            let nodes = look.int("nodes", a.nodes)?.unwrap_or(critlab_core::grid::DEFAULT_NODES);
            let gamma = look.float("gamma", a.gamma)?;
            let rel_tol = check_tol(look.float("rel_tol", a.rel_tol)?.unwrap_or(1e-10))?;
            if !(m_min <= m_max) {
                return Err(ConfigError::Invalid {
                    key: "m_min".into(),
                    reason: format!("need m_min ≤ m_max, got {m_min} > {m_max}"),
                });
            }
            if nodes < 8 {
                return Err(ConfigError::Invalid {
                    key: "nodes".into(),
                    reason: format!("need at least 8 nodes, got {nodes}"),
                });
            }
            let scales = critlab_core::decomposition::dyadic_scales(m_min..=m_max);
            let bg = if background {
                let grid = std::sync::Arc::new(critlab_core::grid::RadialGrid::graded(sphere, 8)?);
                Some(critlab_core::grid::DiscreteRadialField::zeros(grid))
            } else {
                None
            };
            critlab_core::decomposition::build_sequence(bg.as_ref(), &bubbles, &scales, &sphere, &model.potential())?;
            Task::Decompose(DecomposeConfig {
                model,
                bubbles,
                m_min,
                m_max,
                background,
                nodes,
                gamma,
                rel_tol,
            })
        }
        Command::Sweep(a) => {
            let n = Lookup::required("n", look.int("n", a.n)?)?;
            ProblemParams::new(n, 0.0)?;
            let crit = critlab_core::constants::hardy_critical_lambda(n);
            let lambda_min = look.float("lambda_min", a.lambda_min)?.unwrap_or(0.0);
            let lambda_max = look.float("lambda_max", a.lambda_max)?.unwrap_or(0.99 * crit);
            let points = look.int("points", a.points)?.unwrap_or(50);
            ProblemParams::new(n, lambda_min)?;
            ProblemParams::new(n, lambda_max)?;
            if !(lambda_max > lambda_min) || points < 2 {
                return Err(ConfigError::Invalid {
                    key: "lambda_max".into(),
                    reason: format!("need lambda_min < lambda_max and at least 2 points, got [{lambda_min}, {lambda_max}], {points}"),
                });
            }
            Task::Sweep(SweepConfig {
                n,
                lambda_min,
                lambda_max,
                points,
            })
        }
    };
    Ok(RunConfig {
        task,
        output_dir,
        format,
    })
}

/// Parses `argv` (including the program name), reads the config file if one
/// is given, and validates every parameter.
pub fn parse_config<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Usage)?;
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    Ok(resolve(cli, &file)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig, CliError> {
        parse_config(std::iter::once("critlab").chain(args.iter().copied()))
    }

    #[test]
    fn constants_flags() {
        let c = parse(&["constants", "--n", "4", "--lambda", "0.75"]).unwrap();
        assert_eq!(c.task, Task::Constants(ConstantsConfig { n: 4, lambda: 0.75 }));
    }

    #[test]
    fn dimension_rejected() {
        match parse(&["constants", "--n", "2"]) {
            Err(CliError::Config(e)) => assert!(e.to_string().contains("n must be ≥ 3"), "{e}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_parsing() {
        let f = FileConfig::parse("format = json\n# note\n[constants]\nn = 5 # five\nlambda=0.5\n", "x").unwrap();
        assert_eq!(f.global["format"], "json");
        assert_eq!(f.sections["constants"]["n"], "5");
        assert!(matches!(
            FileConfig::parse("[constants]\nfoo = 1\n", "x"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            FileConfig::parse("[nope]\n", "x"),
            Err(ConfigError::UnknownSection(_))
        ));
        assert!(matches!(
            FileConfig::parse("n 5\n", "x"),
            Err(ConfigError::Syntax { .. })
        ));
        assert!(matches!(
            FileConfig::parse("[constants]\nn=1\nn=2\n", "x"),
            Err(ConfigError::Duplicate { .. })
        ));
    }

    #[test]
    fn flags_override_file() {
        let file = FileConfig::parse("[constants]\nn = 5\nlambda = 0.5\n", "x").unwrap();
        let cli = Cli::try_parse_from(["critlab", "constants", "--n", "4"]).unwrap();
        let c = resolve(cli, &file).unwrap();
        assert_eq!(c.task, Task::Constants(ConstantsConfig { n: 4, lambda: 0.5 }));
    }

    #[test]
    fn type_mismatch_names_key() {
        let file = FileConfig::parse("[constants]\nn = five\n", "x").unwrap();
        let cli = Cli::try_parse_from(["critlab", "constants"]).unwrap();
        let e = resolve(cli, &file).unwrap_err();
        assert!(matches!(&e, ConfigError::TypeMismatch { key, .. } if key == "n"), "{e}");
    }

    #[test]
    fn missing_required() {
        let e = parse(&["integrals", "--alpha", "1"]).unwrap_err();
        assert!(matches!(e, CliError::Config(ConfigError::Missing(k)) if k == "beta"));
    }

    #[test]
    fn bubble_specs() {
        let s = parse_bubble("standard, center=1.2, cutoff=0.2").unwrap();
        assert_eq!(s.center, Center::OffPole(1.2));
        let s = parse_bubble("singular,cutoff=0.7,power=2").unwrap();
        assert_eq!(s.scale_power, 2.0);
        assert!(parse_bubble("singular,center=1,cutoff=0.2").is_err());
        assert!(parse_bubble("standard,cutoff=0.2").is_err());
        assert!(parse_bubble("bogus,cutoff=0.2").is_err());
    }

    #[test]
    fn decompose_defaults() {
        let c = parse(&["decompose", "--n", "5", "--h0", "1.125", "--h2", "-1"]).unwrap();
        let Task::Decompose(d) = c.task else { panic!() };
        assert_eq!(d.bubbles.len(), 1);
        assert_eq!((d.m_min, d.m_max), (5, 12));
    }
}
