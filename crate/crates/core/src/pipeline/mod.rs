//! End-to-end runs driven by a JSON configuration.
//!
//! A run owns its output directory for its whole lifetime (see
//! [`output::OutputLock`]). Every file it writes starts with a provenance
//! line, and nothing time- or machine-dependent is written, so the same
//! config, seed and completion cache reproduce the output tree byte for
//! byte.

mod election;
mod multiparty;
pub mod output;
mod survey;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::{CalibrationError, CalibrationWeight, Scope};
use crate::data::{Catalog, DataError};
use crate::forecast::ForecastError;
use crate::gateway::{BackendConfig, BackendKind, GatewayError};
use crate::prompt::PromptError;
use crate::psm::{MatchPolicy, PsmError};
use crate::region::Country;
use crate::stats::{MadMode, StatsError, DEFAULT_ALPHA, DEFAULT_BOOTSTRAP};

pub use election::{ballot_catalog, votes_from, DEFAULT_HIST_CYCLES};
pub use multiparty::read_elections;
pub use output::{OutputLock, Provenance};
pub use survey::{freeze_and_apply, llm_responses, matched_responses, HeldOutRow, OverlapError, SurveyData};

/// Error raised inside a named stage.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Psm(#[from] PsmError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output directory {0} is in use by another run (remove {lock} if stale)", lock = output::LOCK_FILE)]
    Locked(PathBuf),
    #[error(transparent)]
    Overlap(#[from] OverlapError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(StageError) -> PipelineError {
        move |source| PipelineError::Stage { stage, source }
    }

    /// Process exit code: 2 validation, 3 backend, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Locked(_) | PipelineError::Overlap(_) => 2,
            PipelineError::Io { .. } => 4,
            PipelineError::Stage { source, .. } => match source {
                StageError::Gateway(GatewayError::InvalidConfig(_)) => 2,
                StageError::Gateway(GatewayError::Cache { .. }) => 4,
                StageError::Gateway(_) => 3,
                StageError::Calibration(CalibrationError::WeightOutOfRange(_)) => 2,
                StageError::Forecast(ForecastError::WeightOutOfRange(_)) => 2,
                _ => 4,
            },
        }
    }
}

/// Lifts a module error into a stage-labelled pipeline error.
pub(crate) trait StageResult<T> {
    fn at(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> StageResult<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::stage(stage)(e.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    WvsSurvey,
    AnesElection,
    Multiparty,
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wvs_survey" => Ok(Task::WvsSurvey),
            "anes_election" => Ok(Task::AnesElection),
            "multiparty" => Ok(Task::Multiparty),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// Last stage a run executes. Stages past the task's final one are no-ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Synthesize,
    Match,
    Calibrate,
    Evaluate,
}

/// One country's samples for the survey task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountryInput {
    pub country: Country,
    /// Current wave: personas plus the human answers being predicted.
    pub current: PathBuf,
    /// Earlier wave used for matching.
    pub historical: PathBuf,
    #[serde(default)]
    pub current_n: Option<usize>,
    #[serde(default)]
    pub historical_n: Option<usize>,
    /// Fixed weight for this country; overrides the run-level `h`.
    #[serde(default)]
    pub h: Option<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectionInput {
    /// Election-study sample with a `state` column.
    pub sample: PathBuf,
    pub cycle: u16,
    #[serde(default)]
    pub expected_n: Option<usize>,
    /// `state,cycle,dem_share,rep_share`; the bundled table when absent.
    #[serde(default)]
    pub historical_shares: Option<PathBuf>,
    /// Cycles averaged into the historical share.
    #[serde(default)]
    pub hist_cycles: Option<Vec<u16>>,
    /// Use only the latest cycle of `hist_cycles`.
    #[serde(default)]
    pub hist_last_only: bool,
    /// `state,ev,version`; the bundled table for the cycle when absent.
    #[serde(default)]
    pub ev_table: Option<PathBuf>,
    /// Compare against the cycle's actual result when it is known.
    #[serde(default = "default_true")]
    pub compare_actual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipartyInput {
    /// JSON list of `{year, sim, actual}` records.
    pub elections: PathBuf,
    pub parties: Vec<String>,
    pub forecast_year: u16,
}

fn default_backend() -> BackendConfig {
    BackendConfig::new(BackendKind::Mock, "cache")
}
fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Question catalog; the bundled WVS catalog when absent.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub countries: Vec<CountryInput>,
    #[serde(default)]
    pub election: Option<ElectionInput>,
    #[serde(default)]
    pub multiparty: Option<MultipartyInput>,
    #[serde(default = "default_backend")]
    pub backend: BackendConfig,
    /// Fixed weight for every scope.
    #[serde(default)]
    pub h: Option<f64>,
    /// Weights from an earlier `calibrate` run.
    #[serde(default)]
    pub calibration_file: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub match_policy: MatchPolicy,
    /// Matching caliper in pooled-score standard deviations.
    #[serde(default)]
    pub caliper: Option<f64>,
    #[serde(default)]
    pub normalize_unit_interval: bool,
    #[serde(default)]
    pub mad_mode: MadMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl RunConfig {
    /// Parses a config; relative paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix_opt(&mut self.catalog);
        fix_opt(&mut self.calibration_file);
        fix(&mut self.output_dir);
        fix(&mut self.backend.cache_dir);
        for c in &mut self.countries {
            fix(&mut c.current);
            fix(&mut c.historical);
        }
        if let Some(e) = &mut self.election {
            fix(&mut e.sample);
            fix_opt(&mut e.historical_shares);
            fix_opt(&mut e.ev_table);
        }
        if let Some(m) = &mut self.multiparty {
            fix(&mut m.elections);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let h_ok = |h: f64| (0.0..=1.0).contains(&h);
        if let Some(h) = self.h {
            if !h_ok(h) {
                return bad(format!("h = {h} is outside [0, 1]"));
            }
        }
        for c in &self.countries {
            if let Some(h) = c.h {
                if !h_ok(h) {
                    return bad(format!("h = {h} for {} is outside [0, 1]", c.country.code()));
                }
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.bootstrap < 1 {
            return bad("bootstrap must be at least 1".into());
        }
        if let Some(c) = self.caliper {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("caliper = {c} must be positive"));
            }
        }
        match self.task {
            Task::WvsSurvey => {
                if self.countries.is_empty() {
                    return bad("wvs_survey needs at least one entry in `countries`".into());
                }
                let mut seen = std::collections::BTreeSet::new();
                for c in &self.countries {
                    if !seen.insert(c.country) {
                        return bad(format!("country {} listed twice", c.country.code()));
                    }
                }
            }
            Task::AnesElection => {
                if self.election.is_none() {
                    return bad("anes_election needs an `election` section".into());
                }
            }
            Task::Multiparty => {
                if self.multiparty.is_none() {
                    return bad("multiparty needs a `multiparty` section".into());
                }
            }
        }
        Ok(())
    }

    /// Stable run identifier: hash of the config without its output and
    /// cache locations.
    pub fn run_id(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
            if let Some(b) = obj.get_mut("backend").and_then(|b| b.as_object_mut()) {
                b.remove("cache_dir");
            }
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        hex::encode(&digest[..6])
    }

    pub(crate) fn load_catalog(&self) -> Result<Catalog, PipelineError> {
        match &self.catalog {
            Some(p) => Catalog::load(p).at("ingest"),
            None => Ok(Catalog::wvs_default()),
        }
    }

    /// Weights from `calibration_file`, keyed by scope.
    pub(crate) fn stored_weights(&self) -> Result<BTreeMap<Scope, CalibrationWeight>, PipelineError> {
        let Some(path) = &self.calibration_file else {
            return Ok(BTreeMap::new());
        };
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.clone(),
            source: e,
        })?;
        read_weights(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub(crate) fn provenance(&self, h: String) -> Provenance {
        Provenance {
            run_id: self.run_id(),
            seed: self.seed,
            model: self.backend.model_name.clone(),
            h,
        }
    }
}

/// Reads weights from a `calibration.json` written by a run, or from a bare
/// list of weight records.
pub fn read_weights(text: &str) -> Result<BTreeMap<Scope, CalibrationWeight>, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let list = match v {
        serde_json::Value::Object(mut m) => m.remove("weights").ok_or("no `weights` member")?,
        other => other,
    };
    let weights: Vec<CalibrationWeight> = serde_json::from_value(list).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for w in weights {
        if !(0.0..=1.0).contains(&w.h) {
            return Err(format!("weight {} for {} is outside [0, 1]", w.h, w.scope));
        }
        out.insert(w.scope.clone(), w);
    }
    Ok(out)
}

/// What a run did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub run_id: String,
    pub task: Task,
    pub output_dir: PathBuf,
    /// Files written, relative to the output directory, sorted.
    pub files: Vec<String>,
    /// Weight used per scope.
    pub weights: BTreeMap<String, f64>,
    /// Respondents left out of some stage, with the reason.
    pub excluded: Vec<(String, String)>,
    pub backend_calls: usize,
    pub cache_hits: usize,
}

/// Collects files and notes while a run writes its outputs.
pub(crate) struct RunContext<'a> {
    pub config: &'a RunConfig,
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub excluded: Vec<(String, String)>,
}

impl<'a> RunContext<'a> {
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

/// Runs every stage of the configured task.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport, PipelineError> {
    run_until(config, Stage::Evaluate)
}

/// Runs the configured task up to and including `last`.
pub fn run_until(config: &RunConfig, last: Stage) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let mut ctx = RunContext {
        config,
        dir: config.output_dir.clone(),
        files: Vec::new(),
        excluded: Vec::new(),
    };
    let (weights, stats) = match config.task {
        Task::WvsSurvey => survey::run_survey(&mut ctx, last)?,
        Task::AnesElection => election::run_election(&mut ctx, last)?,
        Task::Multiparty => multiparty::run_multiparty(&mut ctx)?,
    };
    ctx.files.sort();
    ctx.files.dedup();
    Ok(RunReport {
        run_id: config.run_id(),
        task: config.task,
        output_dir: config.output_dir.clone(),
        files: ctx.files,
        weights,
        excluded: ctx.excluded,
        backend_calls: stats.backend_calls,
        cache_hits: stats.cache_hits,
    })
}

/// Seed for a sub-computation, derived from the run seed and a label.
pub(crate) fn derive_seed(seed: u64, label: &str) -> u64 {
    let d = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(label.as_bytes()).finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"task": "multiparty", "output_dir": "out",
        "multiparty": {"elections": "e.json", "parties": ["A"], "forecast_year": 2025}}"#;

    #[test]
    fn paths_resolve_against_config_dir() {
        let cfg = RunConfig::from_json(MINIMAL, Path::new("/etc/runs")).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("/etc/runs/out"));
        assert_eq!(cfg.multiparty.unwrap().elections, PathBuf::from("/etc/runs/e.json"));
        assert_eq!(cfg.backend.cache_dir, PathBuf::from("/etc/runs/cache"));
    }

    #[test]
    fn run_id_ignores_locations() {
        let a = RunConfig::from_json(MINIMAL, Path::new("/a")).unwrap();
        let mut b = a.clone();
        b.output_dir = "/elsewhere".into();
        b.backend.cache_dir = "/tmp/c".into();
        assert_eq!(a.run_id(), b.run_id());
        b.seed = 9;
        assert_ne!(a.run_id(), b.run_id());
    }

    #[test]
    fn validation_rejects_bad_weights() {
        let mut cfg = RunConfig::from_json(MINIMAL, Path::new("/a")).unwrap();
        cfg.h = Some(1.5);
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(RunConfig::from_json(r#"{"task": "x"}"#, Path::new(".")).is_err());
    }

    #[test]
    fn weights_round_trip() {
        let w = CalibrationWeight::fixed(0.3, Scope::Survey("US".into())).unwrap();
        let text = serde_json::json!({"weights": [w]}).to_string();
        let m = read_weights(&text).unwrap();
        assert_eq!(m[&Scope::Survey("US".into())].h, 0.3);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}
