use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpoll_core::data::{load_sample, LoadOptions};
use vpoll_core::pipeline::{ballot_catalog, run_until, Stage};
use vpoll_core::prompt::render_wvs_prompt;
use vpoll_core::{
    render_anes_prompt, AskMode, BackendKind, MadMode, MatchPolicy, PipelineError, RunConfig, RunReport, Schema,
    Task,
};

#[derive(Parser)]
#[command(name = "vpoll", version, about = "Synthetic survey and ballot responses blended with matched history")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the configured samples.
    Ingest(Overrides),
    /// Collect model answers for every persona.
    Synthesize {
        #[command(flatten)]
        o: Overrides,
        /// Print the prompt transcript for one respondent and exit.
        #[arg(long, value_name = "RESPONDENT_ID")]
        dump_prompt: Option<String>,
    },
    /// Propensity-match the current wave to the historical one.
    Match(Overrides),
    /// Fit the blending weight(s).
    Calibrate(Overrides),
    /// Survey evaluation: means, MAD table, cross-country and agreement.
    Evaluate(Overrides),
    /// Electoral or multi-party forecast.
    Forecast {
        #[command(flatten)]
        o: Overrides,
        /// Per-party national forecast instead of the electoral map.
        #[arg(long)]
        multiparty: bool,
        /// Use only the latest historical cycle.
        #[arg(long)]
        hist_last_only: bool,
    },
    /// Summarize a finished output directory.
    Report {
        /// Output directory of an earlier run.
        dir: PathBuf,
    },
    /// Run every stage of the configured task.
    Run(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Fixed weight in [0, 1] for every scope.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// live, mock or replay.
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// block or per_question.
    #[arg(long, value_parser = parse_ask_mode)]
    ask_mode: Option<AskMode>,
    /// Extra rounds for cells without a usable answer.
    #[arg(long)]
    resample_failures: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Bootstrap resamples for MAD significance.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// with_replacement or without_replacement.
    #[arg(long)]
    policy: Option<MatchPolicy>,
    /// Matching caliper in pooled-score standard deviations.
    #[arg(long)]
    caliper: Option<f64>,
    /// Rescale every question to [0, 1] before fitting the survey weight.
    #[arg(long)]
    normalize_unit_interval: bool,
    /// mean_gap or per_respondent.
    #[arg(long)]
    mad_mode: Option<MadMode>,
    /// Weights from an earlier calibrate run.
    #[arg(long)]
    calibration_file: Option<PathBuf>,
}

fn parse_ask_mode(s: &str) -> Result<AskMode, String> {
    match s {
        "block" => Ok(AskMode::Block),
        "per_question" | "per-question" => Ok(AskMode::PerQuestion),
        other => Err(format!("unknown ask mode `{other}`")),
    }
}

impl Overrides {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::load(&self.config)?;
        let cwd = |p: &Path| std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf());
        if let Some(h) = self.h {
            cfg.h = Some(h);
            for c in &mut cfg.countries {
                c.h = None;
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.backend {
            cfg.backend.kind = k;
        }
        if let Some(m) = &self.model {
            cfg.backend.model_name = m.clone();
        }
        if let Some(d) = &self.cache_dir {
            cfg.backend.cache_dir = cwd(d);
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = cwd(d);
        }
        if let Some(m) = self.ask_mode {
            cfg.backend.ask_mode = m;
        }
        if let Some(r) = self.resample_failures {
            cfg.backend.resample_failures = r;
        }
        if let Some(p) = self.parallelism {
            cfg.backend.parallelism = p;
        }
        if let Some(b) = self.bootstrap {
            cfg.bootstrap = b;
        }
        if let Some(p) = self.policy {
            cfg.match_policy = p;
        }
        if let Some(c) = self.caliper {
            cfg.caliper = Some(c);
        }
        if self.normalize_unit_interval {
            cfg.normalize_unit_interval = true;
        }
        if let Some(m) = self.mad_mode {
            cfg.mad_mode = m;
        }
        if let Some(f) = &self.calibration_file {
            cfg.calibration_file = Some(cwd(f));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn expect_task(cfg: &RunConfig, allowed: &[Task], command: &str) -> Result<(), PipelineError> {
    if allowed.contains(&cfg.task) {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "`{command}` does not apply to task {:?}",
            cfg.task
        )))
    }
}

fn print_report(r: &RunReport) {
    println!("run {} ({:?}) -> {}", r.run_id, r.task, r.output_dir.display());
    for (scope, h) in &r.weights {
        println!("  h[{scope}] = {h}");
    }
    if !r.excluded.is_empty() {
        println!("  {} respondent(s) excluded from some stage", r.excluded.len());
    }
    println!(
        "  {} file(s) written; {} backend call(s), {} cache hit(s)",
        r.files.len(),
        r.backend_calls,
        r.cache_hits
    );
}

/// Prompt transcript for one respondent, without touching the backend.
fn dump_prompt(cfg: &RunConfig, id: &str) -> Result<String, PipelineError> {
    let data = |e: vpoll_core::DataError| PipelineError::Config(e.to_string());
    let prompt = |e: vpoll_core::prompt::PromptError| PipelineError::Config(e.to_string());
    match cfg.task {
        Task::WvsSurvey => {
            let catalog = match &cfg.catalog {
                Some(p) => vpoll_core::Catalog::load(p).map_err(data)?,
                None => vpoll_core::Catalog::wvs_default(),
            };
            for c in &cfg.countries {
                let opts = LoadOptions::new(c.country.code(), c.country, Schema::Wvs);
                let s = load_sample(&c.current, &opts, &catalog).map_err(data)?;
                if let Some(p) = s.roster.iter().find(|p| p.respondent_id == id) {
                    let b = render_wvs_prompt(p, c.country, &catalog).map_err(prompt)?;
                    return Ok(b.transcript(cfg.backend.ask_mode));
                }
            }
        }
        Task::AnesElection => {
            let e = cfg.election.as_ref().expect("validated");
            let opts = LoadOptions::new("ANES", vpoll_core::Country::US, Schema::Anes);
            let s = load_sample(&e.sample, &opts, &ballot_catalog(e.cycle)).map_err(data)?;
            if let Some(p) = s.roster.iter().find(|p| p.respondent_id == id) {
                let b = render_anes_prompt(p, e.cycle).map_err(prompt)?;
                return Ok(b.transcript(cfg.backend.ask_mode));
            }
        }
        Task::Multiparty => {
            return Err(PipelineError::Config("the multiparty task has no persona prompts".into()));
        }
    }
    Err(PipelineError::Config(format!("respondent `{id}` not found")))
}

fn report(dir: &Path) -> Result<(), PipelineError> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Io {
        path: path.clone(),
        source: e,
    })?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let meta = &v["_meta"];
    println!("run {} seed {} model {} h {}", meta["run_id"], meta["seed"], meta["model"], meta["h"]);
    match v["task"].as_str() {
        Some("wvs_survey") => {
            if let Some(countries) = v["countries"].as_object() {
                for (c, s) in countries {
                    println!(
                        "{c}: h = {}, Matching-LLM closer on {} of {} questions, {} matched of {}",
                        s["h"], s["matching_llm_better"], s["mad_questions"], s["n_matched"], s["n_current"]
                    );
                }
            }
        }
        Some("anes_election") => {
            let m = &v["matching_llm"];
            println!("{} (h = {}): Dem {} vs Rep {}", v["cycle"], v["h"], m["dem_ev"], m["rep_ev"]);
            if let Some(a) = v["actual"].as_object() {
                println!("actual: Dem {} vs Rep {}", a["dem_ev"], a["rep_ev"]);
                println!("mispredicted: {}", m["mispredicted"]);
            }
            let l = &v["llm"];
            println!("model only: Dem {} vs Rep {}", l["dem_ev"], l["rep_ev"]);
        }
        Some("multiparty") => {
            if let Some(f) = v["forecast"].as_object() {
                for (party, share) in f {
                    let h = &v["weights"][party];
                    println!("{party}: {:.2}% (h = {h})", share.as_f64().unwrap_or(f64::NAN) * 100.0);
                }
            }
        }
        _ => println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default()),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let staged = |o: &Overrides, stage: Stage, allowed: &[Task], name: &str| -> Result<(), PipelineError> {
        let cfg = o.load()?;
        expect_task(&cfg, allowed, name)?;
        print_report(&run_until(&cfg, stage)?);
        Ok(())
    };
    let survey_or_election = [Task::WvsSurvey, Task::AnesElection];
    match cli.command {
        Command::Ingest(o) => staged(&o, Stage::Ingest, &survey_or_election, "ingest"),
        Command::Synthesize { o, dump_prompt: Some(id) } => {
            let cfg = o.load()?;
            print!("{}", dump_prompt(&cfg, &id)?);
            Ok(())
        }
        Command::Synthesize { o, dump_prompt: None } => {
            staged(&o, Stage::Synthesize, &survey_or_election, "synthesize")
        }
        Command::Match(o) => staged(&o, Stage::Match, &[Task::WvsSurvey], "match"),
        Command::Calibrate(o) => staged(&o, Stage::Calibrate, &survey_or_election, "calibrate"),
        Command::Evaluate(o) => staged(&o, Stage::Evaluate, &[Task::WvsSurvey], "evaluate"),
        Command::Forecast {
            o,
            multiparty,
            hist_last_only,
        } => {
            let mut cfg = o.load()?;
            if multiparty {
                cfg.task = Task::Multiparty;
            }
            if hist_last_only {
                if let Some(e) = &mut cfg.election {
                    e.hist_last_only = true;
                }
            }
            cfg.validate()?;
            expect_task(&cfg, &[Task::AnesElection, Task::Multiparty], "forecast")?;
            print_report(&run_until(&cfg, Stage::Evaluate)?);
            Ok(())
        }
        Command::Report { dir } => report(&dir),
        Command::Run(o) => {
            let cfg = o.load()?;
            print_report(&vpoll_core::run_pipeline(&cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
