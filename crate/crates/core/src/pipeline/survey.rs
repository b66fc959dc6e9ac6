//! Survey task: synthesize answers for the current wave, match it to the
//! historical wave, fit one weight per country and evaluate.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::output::{num, write_csv, write_json};
use super::{derive_seed, PipelineError, RunContext, Stage, StageResult};
use crate::calibration::{combine_responses, estimate_h_survey, CalibrationWeight, Scope};
use crate::data::{
    load_sample, write_response_matrix, Block, Catalog, LoadOptions, QuestionSpec, ResponseVector, Schema,
    SurveySample,
};
use crate::gateway::{CompletionStatus, DispatchStats, Gateway, Synthesis};
use crate::prompt::render_wvs_prompt;
use crate::psm::{balance_report, fit_propensity, match_nearest, BalanceRow, MatchedPairSet, PropensityFit};
use crate::region::Country;
use crate::stats::{
    agreement_grid, agreement_summary, cross_sample_diff, mad, mad_row, mean_sd, AgreementCell, AgreementSummary,
    MadMode, MadRow, Stars,
};

/// Held-out questions that were also used to fit the weight.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("held-out questions overlap the training set: {}", .questions.join(", "))]
pub struct OverlapError {
    pub questions: Vec<String>,
}

/// The three answer sources for one country, aligned to the current roster.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurveyData {
    pub human: BTreeMap<String, ResponseVector>,
    pub llm: BTreeMap<String, ResponseVector>,
    /// Matched historical answers; questions absent from the earlier wave
    /// have no entry.
    pub hist: BTreeMap<String, ResponseVector>,
}

impl SurveyData {
    fn vector(map: &BTreeMap<String, ResponseVector>, q: &str, n: usize) -> ResponseVector {
        map.get(q)
            .cloned()
            .unwrap_or_else(|| ResponseVector::new(q, vec![None; n]))
    }

    fn n(&self) -> usize {
        self.llm.values().next().map_or(0, ResponseVector::len)
    }

    pub fn human(&self, q: &str) -> ResponseVector {
        Self::vector(&self.human, q, self.n())
    }

    pub fn llm(&self, q: &str) -> ResponseVector {
        Self::vector(&self.llm, q, self.n())
    }

    /// Whether the earlier wave answered `q` for any matched respondent.
    pub fn has_history(&self, q: &str) -> bool {
        self.hist.get(q).is_some_and(|v| v.observed().next().is_some())
    }

    /// Blended answers at weight `h`. Questions without history fall back
    /// to the model's answers.
    pub fn matching(&self, q: &str, h: f64) -> ResponseVector {
        let llm = self.llm(q);
        match self.hist.get(q) {
            Some(hist) if self.has_history(q) => {
                combine_responses(h, hist, &llm).expect("h validated and vectors aligned")
            }
            _ => llm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeldOutRow {
    pub question_id: String,
    pub short_label: String,
    pub h: f64,
    pub mean_human: f64,
    pub mean_llm: f64,
    pub mean_matching: f64,
    pub mad_llm: f64,
    pub mad_matching: f64,
}

/// Applies a frozen weight to questions it was not fitted on.
pub fn freeze_and_apply(
    weight: &CalibrationWeight,
    new_questions: &[&QuestionSpec],
    data: &SurveyData,
    mode: MadMode,
) -> Result<Vec<HeldOutRow>, OverlapError> {
    let trained: BTreeSet<&str> = weight.training_questions.iter().map(String::as_str).collect();
    let overlap: Vec<String> = new_questions
        .iter()
        .filter(|q| trained.contains(q.question_id.as_str()))
        .map(|q| q.question_id.clone())
        .collect();
    if !overlap.is_empty() {
        return Err(OverlapError { questions: overlap });
    }
    let mean_of = |v: &ResponseVector| mean_sd(v).map_or(f64::NAN, |m| m.mean);
    let mad_of = |s: &ResponseVector, h: &ResponseVector| mad(s, h, mode).map_or(f64::NAN, |m| m.mad);
    Ok(new_questions
        .iter()
        .map(|q| {
            let id = q.question_id.as_str();
            let (human, llm, matching) = (data.human(id), data.llm(id), data.matching(id, weight.h));
            HeldOutRow {
                question_id: q.question_id.clone(),
                short_label: q.short_label.clone(),
                h: weight.h,
                mean_human: mean_of(&human),
                mean_llm: mean_of(&llm),
                mean_matching: mean_of(&matching),
                mad_llm: mad_of(&llm, &human),
                mad_matching: mad_of(&matching, &human),
            }
        })
        .collect())
}

/// Answers parsed from a synthesis, one vector per catalog question.
pub fn llm_responses(
    sample: &SurveySample,
    catalog: &Catalog,
    synthesis: &Synthesis,
    strictness: crate::gateway::Strictness,
) -> BTreeMap<String, ResponseVector> {
    catalog
        .iter()
        .map(|q| {
            let values = sample
                .roster
                .iter()
                .map(|p| {
                    synthesis
                        .get(&p.respondent_id, &q.question_id)
                        .and_then(|c| c.answer(q.scale_min, q.scale_max, strictness))
                        .map(|v| v as f64)
                })
                .collect();
            (q.question_id.clone(), ResponseVector::new(q.question_id.clone(), values))
        })
        .collect()
}

/// Matched historical answers aligned to the current roster.
pub fn matched_responses(
    current: &SurveySample,
    historical: &SurveySample,
    pairs: &MatchedPairSet,
) -> BTreeMap<String, ResponseVector> {
    let index = pairs.historical_index(&current.respondent_ids(), &historical.respondent_ids());
    historical
        .responses
        .iter()
        .map(|(q, v)| (q.clone(), v.gather(&index)))
        .collect()
}

struct CountryRun {
    country: Country,
    current: Option<SurveySample>,
    historical: Option<SurveySample>,
    synthesis: Option<Synthesis>,
    prompted: usize,
    fit: Option<PropensityFit>,
    pairs: Option<MatchedPairSet>,
    balance: Vec<BalanceRow>,
    data: SurveyData,
    weight: Option<CalibrationWeight>,
}

pub(crate) fn run_survey(ctx: &mut RunContext<'_>, last: Stage) -> Result<(BTreeMap<String, f64>, DispatchStats), PipelineError> {
    let cfg = ctx.config;
    let catalog = cfg.load_catalog()?;
    let mut runs: Vec<CountryRun> = Vec::new();

    for input in &cfg.countries {
        let code = input.country.code();
        let mut opts = LoadOptions::new(format!("WVS7-{code}"), input.country, Schema::Wvs);
        opts.expected_n = input.current_n;
        let current = load_sample(&input.current, &opts, &catalog).at("ingest")?;
        let mut opts = LoadOptions::new(format!("WVS6-{code}"), input.country, Schema::Wvs);
        opts.expected_n = input.historical_n;
        let historical = load_sample(&input.historical, &opts, &catalog).at("ingest")?;
        let human = current.responses.clone();
        runs.push(CountryRun {
            country: input.country,
            current: Some(current),
            historical: Some(historical),
            synthesis: None,
            prompted: 0,
            fit: None,
            pairs: None,
            balance: Vec::new(),
            data: SurveyData {
                human,
                ..SurveyData::default()
            },
            weight: None,
        });
    }

    let mut stats = DispatchStats::default();
    if last >= Stage::Synthesize {
        let gateway = Gateway::new(cfg.backend.clone(), cfg.seed).at("synthesize")?;
        for run in &mut runs {
            let current = run.current.as_ref().expect("loaded");
            let mut bundles = Vec::new();
            for p in &current.roster {
                match render_wvs_prompt(p, run.country, &catalog) {
                    Ok(b) => bundles.push(b),
                    Err(crate::prompt::PromptError::MissingField { respondent, field }) => {
                        log::warn!("no prompt for `{respondent}`: missing {field}");
                        ctx.excluded.push((respondent, format!("prompt: missing {field}")));
                    }
                    Err(e) => return Err(e).at("synthesize"),
                }
            }
            run.prompted = bundles.len();
            let synthesis = gateway.synthesize(current, &bundles).at("synthesize")?;
            run.data.llm = llm_responses(current, &catalog, &synthesis, cfg.backend.strictness);
            run.synthesis = Some(synthesis);
        }
        stats = gateway.stats();
    }

    if last >= Stage::Match {
        for run in &mut runs {
            let (current, historical) = (run.current.as_ref().expect("loaded"), run.historical.as_ref().expect("loaded"));
            let fit = fit_propensity(current, historical).at("match")?;
            for id in &fit.excluded {
                ctx.excluded.push((id.clone(), "match: missing covariate".into()));
            }
            let pairs = match_nearest(&fit.current, &fit.historical, cfg.match_policy, cfg.caliper).at("match")?;
            for id in &pairs.unmatched {
                ctx.excluded.push((id.clone(), "match: no partner".into()));
            }
            run.balance = balance_report(&fit.model, current, historical, &pairs);
            run.data.hist = matched_responses(current, historical, &pairs);
            run.fit = Some(fit);
            run.pairs = Some(pairs);
        }
    }

    if last >= Stage::Calibrate {
        let stored = cfg.stored_weights()?;
        let run_id = cfg.run_id();
        for (run, input) in runs.iter_mut().zip(&cfg.countries) {
            let scope = Scope::Survey(run.country.code().to_string());
            let weight = if let Some(h) = input.h.or(cfg.h) {
                CalibrationWeight::fixed(h, scope).at("calibrate")?
            } else if let Some(w) = stored.get(&scope) {
                w.clone()
            } else {
                let training: Vec<&QuestionSpec> = catalog
                    .iter()
                    .filter(|q| q.block != Block::OutOfSample && run.data.has_history(&q.question_id))
                    .collect();
                let hist: Vec<ResponseVector> = training.iter().map(|q| run.data.hist[&q.question_id].clone()).collect();
                let llm: Vec<ResponseVector> = training.iter().map(|q| run.data.llm(&q.question_id)).collect();
                let human: Vec<ResponseVector> = training.iter().map(|q| run.data.human(&q.question_id)).collect();
                let spans: Vec<f64> = training.iter().map(|q| q.span()).collect();
                let spans = cfg.normalize_unit_interval.then_some(spans.as_slice());
                estimate_h_survey(&hist, &llm, &human, spans, scope, &run_id).at("calibrate")?
            };
            log::info!("{}: h = {}", run.country.code(), weight.h);
            run.weight = Some(weight);
        }
    }

    let h_label = runs
        .iter()
        .filter_map(|r| r.weight.as_ref().map(|w| format!("{}:{}", r.country.code(), w.h)))
        .collect::<Vec<_>>()
        .join(",");
    let h_label = if h_label.is_empty() { "NA".to_string() } else { h_label };
    let prov = cfg.provenance(h_label);

    write_ingest(ctx, &prov, &runs)?;
    if last >= Stage::Synthesize {
        write_synthesis(ctx, &prov, &runs, &catalog)?;
    }
    if last >= Stage::Match {
        write_matches(ctx, &prov, &runs)?;
    }
    if last >= Stage::Calibrate {
        let weights: Vec<&CalibrationWeight> = runs.iter().filter_map(|r| r.weight.as_ref()).collect();
        let path = ctx.path("calibration.json");
        write_json(&path, &prov, &serde_json::json!({ "weights": weights }))?;
    }
    if last >= Stage::Evaluate {
        evaluate(ctx, &prov, &runs, &catalog)?;
    }

    let weights = runs
        .iter()
        .filter_map(|r| r.weight.as_ref().map(|w| (w.scope.to_string(), w.h)))
        .collect();
    Ok((weights, stats))
}

fn write_ingest(ctx: &mut RunContext<'_>, prov: &super::Provenance, runs: &[CountryRun]) -> Result<(), PipelineError> {
    let samples: Vec<serde_json::Value> = runs
        .iter()
        .flat_map(|r| [r.current.as_ref(), r.historical.as_ref()])
        .flatten()
        .map(|s| {
            serde_json::json!({
                "sample_id": s.sample_id,
                "country": s.country,
                "n": s.n(),
                "questions": s.responses.keys().collect::<Vec<_>>(),
                "incomplete_covariates": s.roster.iter().filter(|p| !p.has_complete_covariates()).count(),
            })
        })
        .collect();
    let path = ctx.path("ingest.json");
    write_json(&path, prov, &serde_json::json!({ "samples": samples }))
}

fn write_synthesis(
    ctx: &mut RunContext<'_>,
    prov: &super::Provenance,
    runs: &[CountryRun],
    catalog: &Catalog,
) -> Result<(), PipelineError> {
    let mut rows = Vec::new();
    for run in runs {
        let synthesis = run.synthesis.as_ref().expect("synthesized");
        for ((rid, qid), c) in &synthesis.completions {
            let answer = catalog
                .get(qid)
                .and_then(|q| c.answer(q.scale_min, q.scale_max, ctx.config.backend.strictness));
            rows.push(vec![
                run.country.code().to_string(),
                rid.clone(),
                qid.clone(),
                c.prompt_hash.clone(),
                match c.status {
                    CompletionStatus::Ok => "ok".into(),
                    CompletionStatus::Failed => "failed".into(),
                },
                c.answer_text().unwrap_or_default(),
                answer.map(|a| a.to_string()).unwrap_or_default(),
            ]);
        }
        let current = run.current.as_ref().expect("loaded");
        let path = ctx.path(&format!("{}_llm_responses.csv", run.country.code()));
        let mut buf = prov.header_line().into_bytes();
        write_response_matrix(&current.respondent_ids(), &run.data.llm, &mut buf).at("synthesize")?;
        std::fs::write(&path, buf).map_err(|e| PipelineError::Io { path, source: e })?;
    }
    let path = ctx.path("completions.csv");
    write_csv(
        &path,
        prov,
        &["country", "respondent_id", "question_id", "prompt_hash", "status", "text", "answer"],
        rows,
    )
}

fn write_matches(ctx: &mut RunContext<'_>, prov: &super::Provenance, runs: &[CountryRun]) -> Result<(), PipelineError> {
    for run in runs {
        let code = run.country.code();
        let pairs = run.pairs.as_ref().expect("matched");
        let path = ctx.path(&format!("{code}_matches.csv"));
        write_csv(
            &path,
            prov,
            &["current_id", "historical_id", "score_current", "score_historical", "gap"],
            pairs.pairs.iter().map(|p| {
                vec![
                    p.current_id.clone(),
                    p.historical_id.clone(),
                    num(p.score_current),
                    num(p.score_historical),
                    num(p.gap),
                ]
            }),
        )?;
        let path = ctx.path(&format!("{code}_balance.csv"));
        write_csv(
            &path,
            prov,
            &["column", "smd_before", "smd_after"],
            run.balance
                .iter()
                .map(|b| vec![b.column.clone(), num(b.smd_before), num(b.smd_after)]),
        )?;
        let fit = run.fit.as_ref().expect("fitted");
        let mut names = vec!["intercept".to_string()];
        names.extend(fit.model.encoder.columns.iter().map(|c| c.name.clone()));
        let path = ctx.path(&format!("{code}_propensity.json"));
        write_json(
            &path,
            prov,
            &serde_json::json!({
                "columns": names,
                "coefficients": fit.model.coefficients(),
                "converged": fit.model.converged(),
                "iterations": fit.model.iterations(),
                "dropped_columns": fit.model.encoder.dropped,
                "excluded": fit.excluded,
                "unmatched": pairs.unmatched,
                "total_gap": pairs.total_gap(),
            }),
        )?;
    }
    Ok(())
}

const SOURCES: [&str; 3] = ["human", "llm", "matching_llm"];

fn sources(data: &SurveyData, q: &str, h: f64) -> [ResponseVector; 3] {
    [data.human(q), data.llm(q), data.matching(q, h)]
}

fn evaluate(
    ctx: &mut RunContext<'_>,
    prov: &super::Provenance,
    runs: &[CountryRun],
    catalog: &Catalog,
) -> Result<(), PipelineError> {
    let cfg = ctx.config;
    let in_sample: Vec<&QuestionSpec> = catalog.iter().filter(|q| q.block != Block::OutOfSample).collect();
    let held_out = catalog.block(Block::OutOfSample);
    let grid_questions: Vec<&QuestionSpec> = catalog
        .iter()
        .filter(|q| matches!(q.block, Block::SocialValues | Block::Trust))
        .collect();

    let mut mean_rows = Vec::new();
    let mut plot_means = Vec::new();
    let mut mad_rows = Vec::new();
    let mut oos_rows = Vec::new();
    let mut cell_rows = Vec::new();
    let mut plot_cells = Vec::new();
    let mut agreement = serde_json::Map::new();
    let mut summary = serde_json::Map::new();

    for run in runs {
        let code = run.country.code();
        let weight = run.weight.as_ref().expect("calibrated");
        let h = weight.h;

        for q in catalog.iter() {
            for (source, v) in SOURCES.iter().zip(sources(&run.data, &q.question_id, h)) {
                let (m, sd, n) = mean_sd(&v).map_or((f64::NAN, f64::NAN, 0), |m| (m.mean, m.sd, m.n_used));
                mean_rows.push(vec![
                    code.into(),
                    q.question_id.clone(),
                    q.short_label.clone(),
                    q.block.as_str().into(),
                    source.to_string(),
                    num(m),
                    num(sd),
                    n.to_string(),
                ]);
                for (stat, value) in [("mean", m), ("sd", sd)] {
                    plot_means.push(vec![
                        code.into(),
                        q.short_label.clone(),
                        source.to_string(),
                        stat.into(),
                        num(value),
                    ]);
                }
            }
        }

        let table: Vec<(&QuestionSpec, Option<MadRow>)> = in_sample
            .par_iter()
            .map(|q| {
                let [human, llm, matching] = sources(&run.data, &q.question_id, h);
                let seed = derive_seed(cfg.seed, &format!("mad/{code}/{}", q.question_id));
                (*q, mad_row(&llm, &matching, &human, cfg.mad_mode, cfg.bootstrap, seed).ok())
            })
            .collect();
        let mut wins = 0;
        let mut compared = 0;
        for (q, row) in &table {
            let cells = match row {
                Some(r) => {
                    compared += 1;
                    if r.difference > 0.0 {
                        wins += 1;
                    }
                    vec![
                        num(r.mad_llm),
                        num(r.mad_matching),
                        num(r.difference),
                        num(r.p_value),
                        r.stars.as_str().into(),
                        num(r.gap_llm),
                        num(r.gap_matching),
                    ]
                }
                None => {
                    let mut v = vec!["NA".to_string(); 7];
                    v[4] = Stars::None.as_str().into();
                    v
                }
            };
            let mut line = vec![code.into(), q.question_id.clone(), q.short_label.clone()];
            line.extend(cells);
            mad_rows.push(line);
        }

        let held = freeze_and_apply(weight, &held_out, &run.data, cfg.mad_mode)?;
        for r in &held {
            oos_rows.push(vec![
                code.into(),
                r.question_id.clone(),
                r.short_label.clone(),
                num(r.h),
                num(r.mean_human),
                num(r.mean_llm),
                num(r.mean_matching),
                num(r.mad_llm),
                num(r.mad_matching),
            ]);
        }

        let human: Vec<ResponseVector> = grid_questions.iter().map(|q| run.data.human(&q.question_id)).collect();
        let mut per_source = serde_json::Map::new();
        for (label, synth) in [
            ("llm", grid_questions.iter().map(|q| run.data.llm(&q.question_id)).collect::<Vec<_>>()),
            (
                "matching_llm",
                grid_questions.iter().map(|q| run.data.matching(&q.question_id, h)).collect(),
            ),
        ] {
            let (cells, skipped) = agreement_grid(&human, &synth, cfg.alpha).at("evaluate")?;
            for c in &cells {
                cell_rows.push(agreement_row(code, label, c));
                plot_cells.push(vec![
                    code.into(),
                    label.into(),
                    c.question_a.clone(),
                    c.question_b.clone(),
                    c.class.as_str().into(),
                ]);
            }
            let s: AgreementSummary = agreement_summary(&cells);
            per_source.insert(
                label.into(),
                serde_json::json!({ "counts": s, "skipped_pairs": skipped }),
            );
        }
        agreement.insert(code.into(), serde_json::Value::Object(per_source));

        let current = run.current.as_ref().expect("loaded");
        let pairs = run.pairs.as_ref().expect("matched");
        summary.insert(
            code.into(),
            serde_json::json!({
                "n_current": current.n(),
                "n_historical": run.historical.as_ref().map_or(0, SurveySample::n),
                "n_prompted": run.prompted,
                "n_matched": pairs.pairs.len(),
                "h": weight.h,
                "h_source": weight.fitted_on,
                "objective_value": weight.objective_value,
                "training_questions": weight.training_questions,
                "mad_questions": compared,
                "matching_llm_better": wins,
                "unanswered_cells": run.data.llm.values().map(ResponseVector::missing_count).sum::<usize>(),
            }),
        );
    }

    let path = ctx.path("mean_sd.csv");
    write_csv(
        &path,
        prov,
        &["country", "question_id", "short_label", "block", "source", "mean", "sd", "n_used"],
        mean_rows,
    )?;
    let path = ctx.path("plot_means.csv");
    write_csv(&path, prov, &["country", "label", "source", "stat", "value"], plot_means)?;
    let path = ctx.path("mad_table.csv");
    write_csv(
        &path,
        prov,
        &[
            "country",
            "question_id",
            "short_label",
            "mad_llm",
            "mad_matching_llm",
            "difference",
            "p_value",
            "stars",
            "gap_llm",
            "gap_matching_llm",
        ],
        mad_rows,
    )?;
    let path = ctx.path("out_of_sample.csv");
    write_csv(
        &path,
        prov,
        &[
            "country",
            "question_id",
            "short_label",
            "h",
            "mean_human",
            "mean_llm",
            "mean_matching_llm",
            "mad_llm",
            "mad_matching_llm",
        ],
        oos_rows,
    )?;
    let path = ctx.path("agreement_cells.csv");
    write_csv(
        &path,
        prov,
        &[
            "country",
            "source",
            "question_a",
            "question_b",
            "r_human",
            "p_human",
            "r_synth",
            "p_synth",
            "class",
        ],
        cell_rows,
    )?;
    let path = ctx.path("plot_agreement.csv");
    write_csv(&path, prov, &["country", "source", "question_a", "question_b", "class"], plot_cells)?;
    let path = ctx.path("agreement_summary.json");
    write_json(&path, prov, &serde_json::Value::Object(agreement))?;

    let us = runs.iter().find(|r| r.country == Country::US);
    let cn = runs.iter().find(|r| r.country == Country::CN);
    if let (Some(us), Some(cn)) = (us, cn) {
        write_us_cn(ctx, prov, us, cn, catalog)?;
    }

    let path = ctx.path("summary.json");
    write_json(&path, prov, &serde_json::json!({ "task": "wvs_survey", "countries": summary }))
}

fn agreement_row(country: &str, source: &str, c: &AgreementCell) -> Vec<String> {
    vec![
        country.into(),
        source.into(),
        c.question_a.clone(),
        c.question_b.clone(),
        num(c.r_human),
        num(c.p_human),
        num(c.r_synth),
        num(c.p_synth),
        c.class.as_str().into(),
    ]
}

fn write_us_cn(
    ctx: &mut RunContext<'_>,
    prov: &super::Provenance,
    us: &CountryRun,
    cn: &CountryRun,
    catalog: &Catalog,
) -> Result<(), PipelineError> {
    let h_us = us.weight.as_ref().expect("calibrated").h;
    let h_cn = cn.weight.as_ref().expect("calibrated").h;
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    for q in catalog.iter() {
        let a = sources(&us.data, &q.question_id, h_us);
        let b = sources(&cn.data, &q.question_id, h_cn);
        for ((source, x), y) in SOURCES.iter().zip(&a).zip(&b) {
            let (diff, t, df, p) = cross_sample_diff(x, y)
                .map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |w| (w.diff, w.t, w.df, w.p_value));
            let stars = if p.is_nan() { Stars::None } else { Stars::from_p(p) };
            rows.push(vec![
                q.question_id.clone(),
                q.short_label.clone(),
                source.to_string(),
                num(diff),
                num(t),
                num(df),
                num(p),
                stars.as_str().into(),
            ]);
            plot.push(vec![
                q.short_label.clone(),
                source.to_string(),
                num(diff),
                (p < ctx.config.alpha).to_string(),
            ]);
        }
    }
    let path = ctx.path("us_cn_diff.csv");
    write_csv(
        &path,
        prov,
        &["question_id", "short_label", "source", "diff", "t", "df", "p_value", "stars"],
        rows,
    )?;
    let path = ctx.path("plot_us_cn.csv");
    write_csv(&path, prov, &["label", "source", "diff", "significant"], plot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str) -> QuestionSpec {
        let mut spec = Catalog::wvs_default().get("parental_pride").unwrap().clone();
        spec.question_id = id.into();
        spec
    }

    fn data() -> SurveyData {
        let rv = |xs: &[f64]| ResponseVector::from_values("a", xs);
        SurveyData {
            human: [("a".to_string(), rv(&[2.0, 3.0]))].into(),
            llm: [("a".to_string(), rv(&[4.0, 4.0]))].into(),
            hist: [("a".to_string(), rv(&[1.0, 2.0]))].into(),
        }
    }

    #[test]
    fn overlap_is_rejected() {
        let mut w = CalibrationWeight::fixed(0.5, Scope::Survey("US".into())).unwrap();
        w.training_questions = vec!["a".into(), "b".into()];
        let qa = q("a");
        let err = freeze_and_apply(&w, &[&qa], &data(), MadMode::MeanGap).unwrap_err();
        assert_eq!(err.questions, vec!["a".to_string()]);
    }

    #[test]
    fn zero_weight_reproduces_llm() {
        let w = CalibrationWeight::fixed(0.0, Scope::Survey("US".into())).unwrap();
        let qa = q("a");
        let rows = freeze_and_apply(&w, &[&qa], &data(), MadMode::MeanGap).unwrap();
        assert_eq!(rows[0].mean_matching, rows[0].mean_llm);
        assert_eq!(rows[0].mad_matching, rows[0].mad_llm);
        assert_eq!(data().matching("a", 0.0), data().llm("a"));
    }

    #[test]
    fn questions_without_history_fall_back_to_llm() {
        let mut d = data();
        d.hist.clear();
        assert_eq!(d.matching("a", 0.7), d.llm("a"));
        d.hist.insert("a".into(), ResponseVector::new("a", vec![None, None]));
        assert!(!d.has_history("a"));
        assert_eq!(d.matching("a", 0.7), d.llm("a"));
    }
}
