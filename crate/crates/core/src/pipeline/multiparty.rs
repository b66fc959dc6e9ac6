//! Multi-party task: per-party weights from past elections and a national
//! list-share forecast.

use std::collections::BTreeMap;

use super::output::{num, write_csv, write_json};
use super::{PipelineError, RunContext, StageResult};
use crate::calibration::{estimate_party_weights, forecast_multiparty, CalibrationWeight, PartyElection, Scope};
use crate::gateway::DispatchStats;

pub fn read_elections(text: &str) -> Result<Vec<PartyElection>, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

pub(crate) fn run_multiparty(ctx: &mut RunContext<'_>) -> Result<(BTreeMap<String, f64>, DispatchStats), PipelineError> {
    let cfg = ctx.config;
    let input = cfg.multiparty.as_ref().expect("validated");
    let text = std::fs::read_to_string(&input.elections).map_err(|e| PipelineError::Io {
        path: input.elections.clone(),
        source: e,
    })?;
    let elections = read_elections(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", input.elections.display())))?;
    let year = input.forecast_year;
    let past: Vec<PartyElection> = elections.iter().filter(|e| e.year < year).cloned().collect();
    let target = elections
        .iter()
        .find(|e| e.year == year)
        .and_then(|e| e.sim.clone())
        .ok_or_else(|| PipelineError::Config(format!("no simulated shares for {year}")))?;
    let prev = past
        .iter()
        .rev()
        .find_map(|e| e.actual.clone())
        .ok_or_else(|| PipelineError::Config(format!("no actual result before {year}")))?;

    let stored = cfg.stored_weights()?;
    let weights: BTreeMap<String, CalibrationWeight> = if let Some(h) = cfg.h {
        input
            .parties
            .iter()
            .map(|p| Ok((p.clone(), CalibrationWeight::fixed(h, Scope::Party(p.clone()))?)))
            .collect::<Result<_, crate::calibration::CalibrationError>>()
            .at("calibrate")?
    } else if input.parties.iter().all(|p| stored.contains_key(&Scope::Party(p.clone()))) {
        input
            .parties
            .iter()
            .map(|p| (p.clone(), stored[&Scope::Party(p.clone())].clone()))
            .collect()
    } else {
        let mut sorted = past.clone();
        sorted.sort_by_key(|e| e.year);
        estimate_party_weights(&sorted, &input.parties).at("calibrate")?
    };
    let forecast = forecast_multiparty(&weights, &prev, &target, year).at("forecast")?;

    let h_label = weights
        .iter()
        .map(|(p, w)| format!("{p}:{}", w.h))
        .collect::<Vec<_>>()
        .join(",");
    let prov = cfg.provenance(h_label);

    let path = ctx.path("calibration.json");
    write_json(&path, &prov, &serde_json::json!({ "weights": weights.values().collect::<Vec<_>>() }))?;
    let path = ctx.path("party_weights.csv");
    write_csv(
        &path,
        &prov,
        &["party", "h", "objective_value", "fitted_on"],
        weights
            .values()
            .map(|w| vec![w.scope.to_string(), num(w.h), num(w.objective_value), w.fitted_on.clone()]),
    )?;
    let path = ctx.path("multiparty_forecast.csv");
    write_csv(
        &path,
        &prov,
        &["party", "previous_actual", "simulated", "h", "forecast"],
        forecast.iter().map(|(p, f)| {
            vec![
                p.clone(),
                num(prev[p]),
                num(target[p]),
                num(weights[p].h),
                num(*f),
            ]
        }),
    )?;
    let path = ctx.path("summary.json");
    write_json(
        &path,
        &prov,
        &serde_json::json!({
            "task": "multiparty",
            "forecast_year": year,
            "weights": weights.iter().map(|(p, w)| (p.clone(), w.h)).collect::<BTreeMap<_, _>>(),
            "forecast": forecast,
        }),
    )?;
    Ok((
        weights.values().map(|w| (w.scope.to_string(), w.h)).collect(),
        DispatchStats::default(),
    ))
}
