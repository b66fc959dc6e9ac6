//! Election task: simulated ballots, state tallies, blended shares and the
//! electoral map.

use std::collections::BTreeMap;

use super::output::{num, write_csv, write_json};
use super::{PipelineError, RunContext, Stage, StageResult};
use crate::calibration::{estimate_h_election, CalibrationWeight, Scope};
use crate::data::{load_sample, AnswerKind, Block, Catalog, LoadOptions, QuestionSpec, Schema, SurveySample};
use crate::forecast::{
    actual_winners, allocate_electors, bundled_historical_shares, compare_maps, forecast_shares,
    historical_baseline, load_historical_shares, outcome_from_winners, tally_states, EvTable, EvTableVersion,
    Party, StateTally,
};
use crate::gateway::{DispatchStats, Gateway, Synthesis};
use crate::prompt::{ballot_question_id, render_anes_prompt, PromptError};
use crate::region::Country;

/// Cycles averaged into the historical share unless configured otherwise.
pub const DEFAULT_HIST_CYCLES: [u16; 2] = [2016, 2020];

/// Catalog holding only the ballot item for `cycle`.
pub fn ballot_catalog(cycle: u16) -> Catalog {
    let (lo, hi) = Block::Ballot.scale();
    Catalog::new(vec![QuestionSpec {
        question_id: ballot_question_id(cycle),
        short_label: format!("{cycle} presidential vote"),
        block: Block::Ballot,
        scale_min: lo,
        scale_max: hi,
        in_wave6: false,
        in_wave7: false,
        answer_kind: AnswerKind::BallotChoice,
        text: String::new(),
        options: Vec::new(),
    }])
    .expect("ballot catalog is valid")
}

/// Parsed ballots: option 1 is the Democratic ticket, option 2 the
/// Republican one.
pub fn votes_from(
    sample: &SurveySample,
    synthesis: &Synthesis,
    cycle: u16,
    strictness: crate::gateway::Strictness,
) -> BTreeMap<String, Party> {
    let qid = ballot_question_id(cycle);
    sample
        .roster
        .iter()
        .filter_map(|p| {
            let answer = synthesis.get(&p.respondent_id, &qid)?.answer(1, 2, strictness)?;
            let party = if answer == 1 { Party::Democratic } else { Party::Republican };
            Some((p.respondent_id.clone(), party))
        })
        .collect()
}

fn pct(x: f64) -> String {
    num((x * 1e4).round() / 1e2)
}

pub(crate) fn run_election(
    ctx: &mut RunContext<'_>,
    last: Stage,
) -> Result<(BTreeMap<String, f64>, DispatchStats), PipelineError> {
    let cfg = ctx.config;
    let input = cfg.election.as_ref().expect("validated");
    let cycle = input.cycle;
    let catalog = ballot_catalog(cycle);
    let mut opts = LoadOptions::new(format!("ANES-{cycle}"), Country::US, Schema::Anes);
    opts.expected_n = input.expected_n;
    let sample = load_sample(&input.sample, &opts, &catalog).at("ingest")?;

    let shares = match &input.historical_shares {
        Some(p) => load_historical_shares(p).at("ingest")?,
        None => bundled_historical_shares(),
    };
    let ev = match &input.ev_table {
        Some(p) => EvTable::load(p, EvTableVersion::for_cycle(cycle)).at("ingest")?,
        None => EvTable::for_cycle(cycle),
    };
    let mut hist_cycles = input.hist_cycles.clone().unwrap_or_else(|| DEFAULT_HIST_CYCLES.to_vec());
    hist_cycles.sort_unstable();
    if input.hist_last_only {
        hist_cycles = hist_cycles.last().copied().into_iter().collect();
    }
    if hist_cycles.is_empty() {
        return Err(PipelineError::Config("hist_cycles is empty".into()));
    }
    let hist = historical_baseline(&shares, &hist_cycles, cycle).at("ingest")?;
    let actual = if input.compare_actual {
        Some(actual_winners(&shares, cycle)).filter(|m| !m.is_empty())
    } else {
        None
    };

    let mut stats = DispatchStats::default();
    let mut votes = BTreeMap::new();
    let mut llm: Vec<StateTally> = Vec::new();
    if last >= Stage::Synthesize {
        let mut bundles = Vec::new();
        for p in &sample.roster {
            match render_anes_prompt(p, cycle) {
                Ok(b) => bundles.push(b),
                Err(PromptError::MissingField { respondent, field }) => {
                    log::warn!("no prompt for `{respondent}`: missing {field}");
                    ctx.excluded.push((respondent, format!("prompt: missing {field}")));
                }
                Err(e) => return Err(e).at("synthesize"),
            }
        }
        let gateway = Gateway::new(cfg.backend.clone(), cfg.seed).at("synthesize")?;
        let synthesis = gateway.synthesize(&sample, &bundles).at("synthesize")?;
        stats = gateway.stats();
        votes = votes_from(&sample, &synthesis, cycle, cfg.backend.strictness);
        for b in &bundles {
            if !votes.contains_key(&b.respondent_id) {
                ctx.excluded.push((b.respondent_id.clone(), "synthesize: unparseable vote".into()));
            }
        }
        llm = tally_states(&votes, &sample, cycle).at("synthesize")?;
    }

    let mut weight = None;
    if last >= Stage::Calibrate {
        let stored = cfg.stored_weights()?;
        let w = if let Some(h) = cfg.h {
            CalibrationWeight::fixed(h, Scope::Election).at("calibrate")?
        } else if let Some(w) = stored.get(&Scope::Election) {
            w.clone()
        } else if let Some(actual) = &actual {
            estimate_h_election(&hist, &llm, actual, &cfg.run_id()).at("calibrate")?
        } else {
            return Err(PipelineError::Config(format!(
                "no weight given and no {cycle} results to fit one against"
            )));
        };
        log::info!("election: h = {}", w.h);
        weight = Some(w);
    }

    let prov = cfg.provenance(weight.as_ref().map_or("NA".into(), |w| w.h.to_string()));
    let path = ctx.path("ingest.json");
    write_json(
        &path,
        &prov,
        &serde_json::json!({
            "samples": [{
                "sample_id": sample.sample_id,
                "n": sample.n(),
                "incomplete_covariates": sample.roster.iter().filter(|p| !p.has_complete_covariates()).count(),
            }],
            "hist_cycles": hist_cycles,
            "ev_table": ev.version,
        }),
    )?;
    if last >= Stage::Synthesize {
        let path = ctx.path("votes.csv");
        write_csv(
            &path,
            &prov,
            &["respondent_id", "state", "sampling_weight", "vote"],
            sample.roster.iter().map(|p| {
                vec![
                    p.respondent_id.clone(),
                    p.region.clone(),
                    p.sampling_weight.to_string(),
                    votes.get(&p.respondent_id).map_or("", |v| v.code()).to_string(),
                ]
            }),
        )?;
        let path = ctx.path("llm_tallies.csv");
        write_csv(
            &path,
            &prov,
            &["state", "cycle", "dem_share", "rep_share", "effective_n"],
            llm.iter().map(|t| {
                vec![
                    t.state.clone(),
                    t.cycle.to_string(),
                    num(t.dem_share),
                    num(t.rep_share),
                    num(t.effective_n),
                ]
            }),
        )?;
    }
    let Some(weight) = weight else {
        return Ok((BTreeMap::new(), stats));
    };
    let path = ctx.path("calibration.json");
    write_json(&path, &prov, &serde_json::json!({ "weights": [&weight] }))?;
    if last < Stage::Evaluate {
        return Ok(([(Scope::Election.to_string(), weight.h)].into(), stats));
    }

    let combined = forecast_shares(weight.h, &hist, &llm).at("forecast")?;
    let outcome = allocate_electors(&combined, &ev).at("forecast")?;
    let llm_only = allocate_electors(&llm, &ev).at("forecast")?;
    let actual_outcome = actual
        .as_ref()
        .map(|a| outcome_from_winners(cycle, a.clone(), Vec::new(), &ev));
    let comparison = actual_outcome
        .as_ref()
        .map(|a| compare_maps(&outcome, a))
        .transpose()
        .at("forecast")?;
    let llm_comparison = actual_outcome
        .as_ref()
        .map(|a| compare_maps(&llm_only, a))
        .transpose()
        .at("forecast")?;

    let by_state = |ts: &[StateTally]| -> BTreeMap<String, f64> { ts.iter().map(|t| (t.state.clone(), t.dem_share)).collect() };
    let (hist_m, llm_m, comb_m) = (by_state(&hist), by_state(&llm), by_state(&combined));
    let code = |p: Option<&Party>| p.map_or("", |p| p.code()).to_string();
    let rows = ev.votes.iter().map(|(state, votes)| {
        let mut row = vec![state.clone(), votes.to_string()];
        for m in [&hist_m, &llm_m, &comb_m] {
            let d = m[state];
            row.push(pct(d));
            row.push(pct(1.0 - d));
        }
        row.push(code(outcome.per_state_winner.get(state)));
        row.push(code(actual.as_ref().and_then(|a| a.get(state))));
        row
    });
    let path = ctx.path("forecast.csv");
    write_csv(
        &path,
        &prov,
        &[
            "state",
            "ev",
            "historical_dem_pct",
            "historical_rep_pct",
            "llm_dem_pct",
            "llm_rep_pct",
            "matching_llm_dem_pct",
            "matching_llm_rep_pct",
            "winner",
            "actual_winner",
        ],
        rows.collect::<Vec<_>>(),
    )?;

    let map: BTreeMap<&String, &str> = ev
        .votes
        .keys()
        .map(|s| (s, outcome.per_state_winner.get(s).map_or("tie", |p| p.code())))
        .collect();
    let path = ctx.path("map.json");
    write_json(&path, &prov, &serde_json::json!({ "cycle": cycle, "winners": map }))?;

    let path = ctx.path("summary.json");
    write_json(
        &path,
        &prov,
        &serde_json::json!({
            "task": "anes_election",
            "cycle": cycle,
            "ev_table": ev.version,
            "hist_cycles": hist_cycles,
            "h": weight.h,
            "h_source": weight.fitted_on,
            "n_respondents": sample.n(),
            "n_votes": votes.len(),
            "matching_llm": {
                "dem_ev": outcome.dem_ev,
                "rep_ev": outcome.rep_ev,
                "ties": outcome.ties,
                "mispredicted": comparison.as_ref().map(|c| &c.mispredicted),
                "ev_error": comparison.as_ref().map(|c| c.ev_error),
            },
            "llm": {
                "dem_ev": llm_only.dem_ev,
                "rep_ev": llm_only.rep_ev,
                "ties": llm_only.ties,
                "mispredicted": llm_comparison.as_ref().map(|c| &c.mispredicted),
                "ev_error": llm_comparison.as_ref().map(|c| c.ev_error),
            },
            "actual": actual_outcome.as_ref().map(|a| serde_json::json!({"dem_ev": a.dem_ev, "rep_ev": a.rep_ev})),
        }),
    )?;
    Ok(([(Scope::Election.to_string(), weight.h)].into(), stats))
}
