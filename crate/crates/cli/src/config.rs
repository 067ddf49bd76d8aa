//! Experiment documents: JSON config files resolved into runnable experiments.

use std::fs;
use std::path::{Path, PathBuf};

use descentlab::certificates::Scheme;
use descentlab::estimators::SgdDriverSpec;
use descentlab::methods::{MethodKind, MethodSpec};
use descentlab::problems::{Problem, ProblemSpec};
use descentlab::schedules::ScheduleSpec;
use descentlab::Weights;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Environment variable overriding the config's seed list (comma separated).
pub const SEED_ENV: &str = "DESCENTLAB_SEED";

/// Default limit on the number of runs in a sweep.
pub const DEFAULT_CAP: usize = 10_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[allow(dead_code)]
    problem: Value,
    #[serde(default)]
    method: Option<MethodSpec>,
    #[serde(default)]
    driver: Option<SgdDriverSpec>,
    #[serde(default)]
    schedule: Option<ScheduleSpec>,
    horizon: usize,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default)]
    certificate: Option<Scheme>,
    #[serde(default)]
    w0: Option<Vec<f64>>,
    #[serde(default)]
    out: Option<PathBuf>,
    /// Read by [`expand_grid`]; parsed here so malformed grids are reported.
    #[serde(default)]
    #[allow(dead_code)]
    grid: Option<Grid>,
    #[serde(default)]
    cap: Option<usize>,
}

/// A parameter grid: every value is substituted at `path`, a JSON pointer
/// into the config document such as `/schedule/C`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone)]
pub enum Plan {
    Deterministic(MethodSpec),
    Stochastic(SgdDriverSpec),
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: Problem,
    pub plan: Plan,
    pub schedule: Option<ScheduleSpec>,
    pub horizon: usize,
    /// Empty for runs that use no randomness.
    pub seeds: Vec<u64>,
    pub certificate: Option<Scheme>,
    pub w0: Weights,
    pub out: Option<PathBuf>,
    pub cap: Option<usize>,
    /// Config with the problem inlined and the grid removed; keys sorted.
    pub canonical: String,
    /// Directory the config was loaded from; fixture paths resolve against it.
    pub base_dir: PathBuf,
}

fn parse_at<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|err| {
        let path = err.path().to_string();
        let at = match (prefix.is_empty(), path == ".") {
            (true, _) => path,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{path}"),
        };
        CliError::Config(format!("config error at `{at}`: {}", err.inner()))
    })
}

/// Reads a config document without interpreting it.
pub fn read_document(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))
}

fn resolve_problem(value: &Value, base_dir: &Path) -> Result<Value, CliError> {
    match value.get("fixture") {
        None => Ok(value.clone()),
        Some(Value::String(rel)) => {
            let path = base_dir.join(rel);
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "problem fixture {} does not exist",
                    path.display()
                )));
            }
            read_document(&path)
        }
        Some(_) => Err(CliError::Config("config error at `problem.fixture`: expected a path string".into())),
    }
}

fn env_seeds() -> Result<Option<Vec<u64>>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(text) if !text.trim().is_empty() => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{SEED_ENV} must be a comma-separated list of integers")))
            })
            .collect::<Result<Vec<u64>, _>>()
            .map(Some),
        _ => Ok(None),
    }
}

impl Experiment {
    /// Loads and validates the document at `path`. Seeds passed on the
    /// command line take precedence over the environment, which takes
    /// precedence over the document.
    pub fn load(path: &Path, cli_seeds: &[u64]) -> Result<Self, CliError> {
        let doc = read_document(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_document(doc, &base_dir, cli_seeds)
    }

    pub fn from_document(mut doc: Value, base_dir: &Path, cli_seeds: &[u64]) -> Result<Self, CliError> {
        if !doc.is_object() {
            return Err(CliError::Config("config must be a JSON object".into()));
        }
        let raw: RawConfig = parse_at(doc.clone(), "")?;
        let problem_doc = resolve_problem(&doc["problem"], base_dir)?;
        let spec: ProblemSpec = parse_at(problem_doc.clone(), "problem")?;
        let problem = Problem::from_spec(spec)?;

        let plan = match (raw.method, raw.driver) {
            (Some(m), None) => {
                m.validate()?;
                Plan::Deterministic(m)
            }
            (None, Some(d)) => {
                d.validate()?;
                Plan::Stochastic(d)
            }
            (Some(_), Some(_)) => {
                return Err(CliError::Config("config sets both `method` and `driver`".into()))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "config error at `.`: missing field `method` (or `driver` for stochastic runs)".into(),
                ))
            }
        };
        let needs_schedule = match &plan {
            Plan::Deterministic(m) => m.uses_schedule(),
            Plan::Stochastic(_) => true,
        };
        if needs_schedule && raw.schedule.is_none() {
            return Err(CliError::Config(
                "config error at `.`: missing field `schedule`".into(),
            ));
        }
        if let Some(s) = &raw.schedule {
            s.validate()?;
        }

        let w0 = match raw.w0 {
            Some(v) if v.len() != problem.dim() => {
                return Err(CliError::Config(format!(
                    "config error at `w0`: expected {} entries, got {}",
                    problem.dim(),
                    v.len()
                )))
            }
            Some(v) => Weights::new(v),
            None => Weights::zeros(problem.dim()),
        };

        let seeds = if !cli_seeds.is_empty() {
            cli_seeds.to_vec()
        } else if let Some(s) = env_seeds()? {
            s
        } else {
            raw.seeds
        };
        let randomized = match &plan {
            Plan::Stochastic(_) => true,
            Plan::Deterministic(m) => matches!(m.kind, MethodKind::NoisyGd { .. }),
        };
        let seeds = if randomized {
            if seeds.is_empty() {
                if let Plan::Deterministic(MethodSpec { kind: MethodKind::NoisyGd { seed, .. }, .. }) = &plan {
                    vec![*seed]
                } else {
                    return Err(CliError::Config("stochastic runs need a nonempty `seeds` list".into()));
                }
            } else {
                seeds
            }
        } else {
            Vec::new()
        };

        // canonical form: problem inlined, grid and output location dropped
        let obj = doc.as_object_mut().expect("checked above");
        obj.insert("problem".into(), problem_doc);
        obj.remove("grid");
        obj.remove("out");
        obj.remove("cap");
        obj.insert("seeds".into(), Value::from(seeds.clone()));
        let canonical = serde_json::to_string(&doc).expect("values serialize");

        Ok(Experiment {
            problem,
            plan,
            schedule: raw.schedule,
            horizon: raw.horizon,
            seeds,
            certificate: raw.certificate,
            w0,
            out: raw.out,
            cap: raw.cap,
            canonical,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Seeds to run; a single `None` for seedless runs.
    pub fn jobs(&self) -> Vec<Option<u64>> {
        if self.seeds.is_empty() {
            vec![None]
        } else {
            self.seeds.iter().copied().map(Some).collect()
        }
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical.as_bytes()))
    }

    /// Short hash naming the output directory of one run.
    pub fn run_hash(&self, seed: Option<u64>) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical.as_bytes());
        h.update(b"\nseed=");
        h.update(seed.map_or("none".to_string(), |s| s.to_string()).as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }
}

/// Expands `doc` along its grid; returns `(value, experiment)` per grid point.
pub fn expand_grid(
    doc: &Value,
    base_dir: &Path,
    cli_seeds: &[u64],
) -> Result<(Grid, Vec<(Value, Experiment)>), CliError> {
    let grid: Grid = match doc.get("grid") {
        Some(g) => parse_at(g.clone(), "grid")?,
        None => return Err(CliError::Config("config error at `.`: missing field `grid`".into())),
    };
    if grid.values.is_empty() {
        return Err(CliError::Config("config error at `grid.values`: grid is empty".into()));
    }
    let mut points = Vec::with_capacity(grid.values.len());
    for value in &grid.values {
        let mut point = doc.clone();
        let slot = point.pointer_mut(&grid.path).ok_or_else(|| {
            CliError::Config(format!("config error at `grid.path`: {} not found in config", grid.path))
        })?;
        *slot = value.clone();
        let exp = Experiment::from_document(point, base_dir, cli_seeds)?;
        points.push((value.clone(), exp));
    }
    Ok((grid, points))
}
