//! Experiment configuration: flat JSON files, CLI flags and per-experiment
//! defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::coords::RotPoint;
use crate::greens::PhysParams;
use crate::solver::{DiffusionCoefficient, PICARD_MAX_RESOLUTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    GreenIdentities,
    KernelLemma,
    LinearVariance,
    RemainderRate,
    QuadvarRate,
    EstimatorConsistency,
    OracleCheck,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::GreenIdentities,
        ExperimentId::KernelLemma,
        ExperimentId::LinearVariance,
        ExperimentId::RemainderRate,
        ExperimentId::QuadvarRate,
        ExperimentId::EstimatorConsistency,
        ExperimentId::OracleCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::GreenIdentities => "green_identities",
            ExperimentId::KernelLemma => "kernel_lemma",
            ExperimentId::LinearVariance => "linear_variance",
            ExperimentId::RemainderRate => "remainder_rate",
            ExperimentId::QuadvarRate => "quadvar_rate",
            ExperimentId::EstimatorConsistency => "estimator_consistency",
            ExperimentId::OracleCheck => "oracle_check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Invalid configuration. Always names the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError {
    pub field: String,
    pub message: String,
}

impl UsageError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid '{}': {}", self.field, self.message)
    }
}

impl std::error::Error for UsageError {}

/// Every configurable key. Unset keys fall back to the experiment defaults.
///
/// The same struct backs the JSON file (keys as written here) and the CLI
/// (`--diffusion-params`, `--a-list`, ...).
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct RawConfig {
    #[arg(long, value_parser = parse_experiment)]
    pub experiment: Option<ExperimentId>,
    /// Damping `a`.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    /// Mass `m`.
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// One of constant_one, affine, shifted_sine, clipped_linear.
    #[arg(long)]
    pub diffusion: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub diffusion_params: Option<Vec<f64>>,
    /// Simulation resolution (power of two).
    #[arg(long)]
    pub n: Option<u32>,
    /// Observation resolutions `N` (powers of two).
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Option<Vec<u32>>,
    /// Resolutions used for the linear-field checks of `quadvar_rate`.
    #[arg(long, value_delimiter = ',')]
    pub linear_resolutions: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Damping values swept by `kernel_lemma`.
    #[arg(long, value_delimiter = ',')]
    pub a_list: Option<Vec<f64>>,
    /// Moment orders swept by `kernel_lemma`.
    #[arg(long, value_delimiter = ',')]
    pub p_list: Option<Vec<f64>>,
    /// Evaluation points as `tau:lambda`, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_point)]
    pub points: Option<Vec<[f64; 2]>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the CSV and JSON files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores. Does not affect results.
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    ExperimentId::parse(s).ok_or_else(|| {
        let ids: Vec<&str> = ExperimentId::ALL.iter().map(|e| e.as_str()).collect();
        format!("unknown experiment '{s}', expected one of {}", ids.join(", "))
    })
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (t, l) = s
        .split_once(':')
        .ok_or_else(|| format!("point '{s}' must look like tau:lambda"))?;
    let t = t.trim().parse::<f64>().map_err(|e| format!("point '{s}': {e}"))?;
    let l = l.trim().parse::<f64>().map_err(|e| format!("point '{s}': {e}"))?;
    Ok([t, l])
}

fn field<T: serde::de::DeserializeOwned>(key: &str, v: Value) -> Result<Option<T>, UsageError> {
    serde_json::from_value(v).map(Some).map_err(|e| UsageError::new(key, e.to_string()))
}

impl RawConfig {
    /// Parses a flat JSON object, rejecting unknown keys.
    pub fn from_json(text: &str) -> Result<Self, UsageError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| UsageError::new("config", format!("malformed JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(UsageError::new("config", "top level must be a JSON object"));
        };
        Self::from_map(map)
    }

    fn from_map(map: Map<String, Value>) -> Result<Self, UsageError> {
        let mut c = RawConfig::default();
        for (k, v) in map {
            match k.as_str() {
                "experiment" => {
                    let s: Option<String> = field(&k, v)?;
                    c.experiment = s
                        .map(|s| parse_experiment(&s).map_err(|e| UsageError::new("experiment", e)))
                        .transpose()?;
                }
                "a" => c.a = field(&k, v)?,
                "m" => c.m = field(&k, v)?,
                "theta" => c.theta = field(&k, v)?,
                "diffusion" => c.diffusion = field(&k, v)?,
                "diffusion_params" => c.diffusion_params = field(&k, v)?,
                "n" => c.n = field(&k, v)?,
                "resolutions" => c.resolutions = field(&k, v)?,
                "linear_resolutions" => c.linear_resolutions = field(&k, v)?,
                "eps" => c.eps = field(&k, v)?,
                "a_list" => c.a_list = field(&k, v)?,
                "p_list" => c.p_list = field(&k, v)?,
                "points" => c.points = field(&k, v)?,
                "reps" => c.reps = field(&k, v)?,
                "seed" => c.seed = field(&k, v)?,
                "out" => c.out = field(&k, v)?,
                "jobs" => c.jobs = field(&k, v)?,
                other => return Err(UsageError::new(other, "unknown configuration key")),
            }
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Values set in `self` win over `base`.
    pub fn override_onto(self, base: RawConfig) -> RawConfig {
        RawConfig {
            experiment: self.experiment.or(base.experiment),
            a: self.a.or(base.a),
            m: self.m.or(base.m),
            theta: self.theta.or(base.theta),
            diffusion: self.diffusion.or(base.diffusion),
            diffusion_params: self.diffusion_params.or(base.diffusion_params),
            n: self.n.or(base.n),
            resolutions: self.resolutions.or(base.resolutions),
            linear_resolutions: self.linear_resolutions.or(base.linear_resolutions),
            eps: self.eps.or(base.eps),
            a_list: self.a_list.or(base.a_list),
            p_list: self.p_list.or(base.p_list),
            points: self.points.or(base.points),
            reps: self.reps.or(base.reps),
            seed: self.seed.or(base.seed),
            out: self.out.or(base.out),
            jobs: self.jobs.or(base.jobs),
        }
    }
}

/// Fully resolved, validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub params: PhysParams,
    pub diffusion: DiffusionCoefficient,
    pub n: u32,
    pub resolutions: Vec<u32>,
    pub linear_resolutions: Vec<u32>,
    pub eps: Vec<f64>,
    pub a_list: Vec<f64>,
    pub p_list: Vec<f64>,
    pub points: Vec<RotPoint>,
    pub reps: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub jobs: Option<usize>,
}

fn dyadic(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 2f64.powi(-k)).collect()
}

/// Defaults for one experiment.
///
/// | experiment | defaults |
/// |---|---|
/// | `green_identities` | 1000-point sweep (fixed by `seed`) |
/// | `kernel_lemma` | `a ∈ {0,1,2}`, `p ∈ {1,2}`, `ε = 2^-4..2^-8` |
/// | `linear_variance` | `a=1, m=0.5`, `n=256`, `ε = 2^-4..2^-8`, `10⁵` reps, point `(0.5,0.5)` |
/// | `remainder_rate` | `F = 2+sin`, `a=1, m=0.5, θ=1`, `n=2048`, `ε = 2^-4..2^-9`, 500 reps, three points |
/// | `quadvar_rate` | `F = 2+sin`, `n=512`, `N ∈ {64..512}`, linear checks on `{64,128,256}`, 500 reps |
/// | `estimator_consistency` | `θ=2`, `F = 2+sin`, `n=512`, `N ∈ {64..512}`, 200 reps |
/// | `oracle_check` | `F = 2+sin`, `a=1, m=0.25`, `N ∈ {8,16}`, 20 seeds |
pub fn defaults(id: ExperimentId) -> RawConfig {
    let mut c = RawConfig {
        experiment: Some(id),
        a: Some(1.0),
        m: Some(0.5),
        theta: Some(1.0),
        diffusion: Some("shifted_sine".into()),
        diffusion_params: Some(vec![]),
        n: Some(512),
        resolutions: Some(vec![64, 128, 256, 512]),
        linear_resolutions: Some(vec![64, 128, 256]),
        eps: Some(dyadic(4, 9)),
        a_list: Some(vec![0.0, 1.0, 2.0]),
        p_list: Some(vec![1.0, 2.0]),
        points: Some(vec![[0.25, 0.25], [0.5, 0.5], [0.75, 0.25]]),
        reps: Some(500),
        seed: Some(0),
        out: Some(PathBuf::from("results")),
        jobs: None,
    };
    match id {
        ExperimentId::GreenIdentities => {
            c.reps = Some(1000);
        }
        ExperimentId::KernelLemma => {
            c.eps = Some(dyadic(4, 8));
            c.reps = Some(1);
        }
        ExperimentId::LinearVariance => {
            c.diffusion = Some("constant_one".into());
            c.n = Some(256);
            c.eps = Some(dyadic(4, 8));
            c.points = Some(vec![[0.5, 0.5]]);
            c.reps = Some(100_000);
        }
        ExperimentId::RemainderRate => {
            c.n = Some(2048);
        }
        ExperimentId::QuadvarRate => {}
        ExperimentId::EstimatorConsistency => {
            c.theta = Some(2.0);
            c.reps = Some(200);
        }
        ExperimentId::OracleCheck => {
            // m below a/2 leaves a nonzero drift for the oracle to check
            c.m = Some(0.25);
            c.n = Some(16);
            c.resolutions = Some(vec![8, 16]);
            c.reps = Some(20);
        }
    }
    c
}

/// Merges flags over the file (if any) over the experiment defaults and
/// validates the result.
pub fn parse_config(config_path: Option<&Path>, flags: RawConfig) -> Result<ExperimentConfig, UsageError> {
    let file = match config_path {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    resolve(flags.override_onto(file))
}

fn is_pow2(n: u32) -> bool {
    n != 0 && n & (n - 1) == 0
}

fn aligned(eps: f64, n: u32) -> bool {
    let s = eps * f64::from(n);
    s.is_finite() && s >= 0.5 && (s - s.round()).abs() <= 1e-9 * s.max(1.0)
}

pub fn resolve(raw: RawConfig) -> Result<ExperimentConfig, UsageError> {
    let id = raw
        .experiment
        .ok_or_else(|| UsageError::new("experiment", "missing experiment id"))?;
    let c = raw.override_onto(defaults(id));
    // every field is Some after merging with the defaults, except jobs
    let a = c.a.unwrap();
    let m = c.m.unwrap();
    let theta = c.theta.unwrap();
    let params = PhysParams::new(a, m, theta).map_err(|e| {
        let which = if !a.is_finite() {
            "a"
        } else if !(m >= 0.0 && m.is_finite()) {
            "m"
        } else {
            "theta"
        };
        UsageError::new(which, e.to_string())
    })?;
    let diffusion_id = c.diffusion.unwrap();
    let diffusion = DiffusionCoefficient::from_id(&diffusion_id, &c.diffusion_params.unwrap())
        .map_err(|e| UsageError::new("diffusion", e.to_string()))?;

    let n = c.n.unwrap();
    if !is_pow2(n) {
        return Err(UsageError::new("n", format!("resolution {n} is not a power of two")));
    }
    let resolutions = c.resolutions.unwrap();
    let linear_resolutions = c.linear_resolutions.unwrap();
    for (key, list) in [("resolutions", &resolutions), ("linear_resolutions", &linear_resolutions)] {
        if list.is_empty() {
            return Err(UsageError::new(key, "list is empty"));
        }
        if let Some(bad) = list.iter().find(|&&r| !is_pow2(r)) {
            return Err(UsageError::new(key, format!("resolution {bad} is not a power of two")));
        }
    }
    let reps = c.reps.unwrap();
    if reps < 1 {
        return Err(UsageError::new("reps", "replication count must be at least 1"));
    }
    let eps = c.eps.unwrap();
    if eps.is_empty() {
        return Err(UsageError::new("eps", "list is empty"));
    }
    if let Some(bad) = eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(UsageError::new("eps", format!("{bad} is not a positive number")));
    }
    let points: Vec<RotPoint> = c
        .points
        .unwrap()
        .into_iter()
        .map(|[t, l]| RotPoint::new(t, l))
        .collect();
    if points.is_empty() {
        return Err(UsageError::new("points", "list is empty"));
    }
    let a_list = c.a_list.unwrap();
    let p_list = c.p_list.unwrap();
    if let Some(jobs) = c.jobs {
        if jobs == 0 {
            return Err(UsageError::new("jobs", "must be at least 1"));
        }
    }

    let simulated = matches!(
        id,
        ExperimentId::LinearVariance | ExperimentId::RemainderRate
    );
    if simulated {
        if let Some(bad) = eps.iter().find(|&&e| !aligned(e, n)) {
            return Err(UsageError::new(
                "eps",
                format!("{bad} is not grid aligned: not a multiple of 1/n = 1/{n}"),
            ));
        }
        for p in &points {
            if !(aligned(p.tau, n) || p.tau == 0.0) || !(aligned(p.lambda, n) || p.lambda == 0.0) {
                return Err(UsageError::new(
                    "points",
                    format!("({}, {}) is not grid aligned to 1/{n}", p.tau, p.lambda),
                ));
            }
            if p.tau < 0.0 || p.lambda < 0.0 {
                return Err(UsageError::new("points", "points must lie in the first quadrant"));
            }
        }
    }
    if id == ExperimentId::RemainderRate {
        let eps_max = eps.iter().cloned().fold(0.0, f64::max);
        if points.iter().any(|p| p.tau < eps_max) {
            return Err(UsageError::new(
                "points",
                "tau must be at least the largest eps so the backward stencil stays above the initial line",
            ));
        }
    }
    match id {
        ExperimentId::QuadvarRate | ExperimentId::EstimatorConsistency => {
            let lists: &[(&str, &Vec<u32>)] = if id == ExperimentId::QuadvarRate {
                &[("resolutions", &resolutions), ("linear_resolutions", &linear_resolutions)]
            } else {
                &[("resolutions", &resolutions)]
            };
            for (key, list) in lists {
                if let Some(bad) = list.iter().find(|&&r| r > n) {
                    return Err(UsageError::new(
                        key,
                        format!("observation resolution {bad} exceeds the simulation resolution {n}"),
                    ));
                }
            }
        }
        ExperimentId::OracleCheck => {
            if let Some(bad) = resolutions.iter().find(|&&r| r > PICARD_MAX_RESOLUTION) {
                return Err(UsageError::new(
                    "resolutions",
                    format!("oracle resolutions must be <= {PICARD_MAX_RESOLUTION}, got {bad}"),
                ));
            }
        }
        ExperimentId::KernelLemma => {
            if let Some(bad) = p_list.iter().find(|p| p.is_nan() || **p < 1.0) {
                return Err(UsageError::new("p_list", format!("moment order {bad} is below 1")));
            }
            if a_list.is_empty() || p_list.is_empty() {
                return Err(UsageError::new("a_list", "sweep lists must be non-empty"));
            }
        }
        _ => {}
    }

    Ok(ExperimentConfig {
        experiment: id,
        params,
        diffusion,
        n,
        resolutions,
        linear_resolutions,
        eps,
        a_list,
        p_list,
        points,
        reps,
        seed: c.seed.unwrap(),
        out: c.out.unwrap(),
        jobs: c.jobs,
    })
}
