use std::path::Path;
use std::process::{Command, Output};

use vpoll_core::fixtures::{anes_sample, write_sample_file, wvs_sample};
use vpoll_core::{Catalog, Country};

fn vpoll(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpoll"))
        .args(args)
        .current_dir(dir)
        .env_remove("VP_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn survey_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::wvs_default();
    write_sample_file(&wvs_sample(Country::US, 7, 80, 1, &catalog), &dir.path().join("us7.csv")).unwrap();
    write_sample_file(&wvs_sample(Country::US, 6, 80, 2, &catalog), &dir.path().join("us6.csv")).unwrap();
    std::fs::write(
        dir.path().join("survey.json"),
        r#"{"task": "wvs_survey", "seed": 3, "bootstrap": 200, "output_dir": "out",
            "countries": [{"country": "US", "current": "us7.csv", "historical": "us6.csv"}]}"#,
    )
    .unwrap();
    dir
}

fn election_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_sample_file(&anes_sample(300, 4), &dir.path().join("anes.csv")).unwrap();
    std::fs::write(
        dir.path().join("election.json"),
        r#"{"task": "anes_election", "seed": 1, "output_dir": "out",
            "election": {"sample": "anes.csv", "cycle": 2024}}"#,
    )
    .unwrap();
    dir
}

#[test]
fn run_then_report() {
    let dir = survey_dir();
    let o = vpoll(dir.path(), &["run", "--config", "survey.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("h[survey_US] = "));
    assert!(dir.path().join("out/summary.json").is_file());
    let r = vpoll(dir.path(), &["report", "out"]);
    assert!(r.status.success());
    assert!(stdout(&r).contains("US: h = "));
}

#[test]
fn dump_prompt_makes_no_backend_calls() {
    let dir = survey_dir();
    let o = vpoll(
        dir.path(),
        &["synthesize", "--config", "survey.json", "--dump-prompt", "US7-00000"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("It is the year 2017. You are a "));
    assert!(text.contains("Terrorism as a political"));
    assert!(!dir.path().join("cache").exists());
    assert!(!dir.path().join("out").exists());

    let per_q = vpoll(
        dir.path(),
        &["synthesize", "--config", "survey.json", "--dump-prompt", "US7-00000", "--ask-mode", "per_question"],
    );
    assert!(stdout(&per_q).len() > text.len());
    let missing = vpoll(dir.path(), &["synthesize", "--config", "survey.json", "--dump-prompt", "nobody"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn stage_commands_stop_early() {
    let dir = survey_dir();
    let o = vpoll(dir.path(), &["match", "--config", "survey.json", "--caliper", "0.2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("out/US_matches.csv").is_file());
    assert!(!dir.path().join("out/summary.json").exists());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = survey_dir();
    let bad_h = vpoll(dir.path(), &["run", "--config", "survey.json", "--h", "1.5"]);
    assert_eq!(bad_h.status.code(), Some(2));

    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let replay = vpoll(
        dir.path(),
        &["run", "--config", "survey.json", "--backend", "replay", "--cache-dir", "empty"],
    );
    assert_eq!(replay.status.code(), Some(3), "{}", String::from_utf8_lossy(&replay.stderr));

    std::fs::remove_file(dir.path().join("us6.csv")).unwrap();
    let missing = vpoll(dir.path(), &["run", "--config", "survey.json", "--output-dir", "o2"]);
    assert_eq!(missing.status.code(), Some(4));

    let wrong_task = vpoll(dir.path(), &["forecast", "--config", "survey.json"]);
    assert_eq!(wrong_task.status.code(), Some(2));
    let unknown_flag = vpoll(dir.path(), &["run", "--config", "survey.json", "--nope"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
}

#[test]
fn election_forecast_with_fixed_weight() {
    let dir = election_dir();
    let o = vpoll(dir.path(), &["forecast", "--config", "election.json", "--h", "0.8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("h[election] = 0.8"));
    let r = stdout(&vpoll(dir.path(), &["report", "out"]));
    assert!(r.contains("2024 (h = 0.8): Dem "), "{r}");

    let last = vpoll(
        dir.path(),
        &["forecast", "--config", "election.json", "--h", "0.8", "--hist-last-only", "--output-dir", "last"],
    );
    assert!(last.status.success());
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("last/summary.json")).unwrap()).unwrap();
    assert_eq!(s["hist_cycles"], serde_json::json!([2020]));
}

#[test]
fn multiparty_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/german_elections.json");
    std::fs::write(
        dir.path().join("de.json"),
        format!(
            r#"{{"task": "multiparty", "output_dir": "out",
                "multiparty": {{"elections": "{}", "forecast_year": 2025,
                  "parties": ["CDU/CSU", "SPD", "AfD", "FDP", "Linke", "Gruene"]}}}}"#,
            data.display()
        ),
    )
    .unwrap();
    let o = vpoll(dir.path(), &["forecast", "--multiparty", "--config", "de.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout(&vpoll(dir.path(), &["report", "out"]));
    assert_eq!(r.lines().filter(|l| l.contains("% (h = ")).count(), 6, "{r}");
}
