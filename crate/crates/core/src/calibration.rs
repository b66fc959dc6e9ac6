//! Convex blending of historical and synthetic answers, and estimation of
//! the blending weight `h`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ResponseVector;
use crate::forecast::{winner_of, Party, StateTally};

/// Election grid: h in {0.00, 0.01, ..., 1.00}.
pub const ELECTION_GRID_STEPS: usize = 100;
/// Golden-section stopping width.
pub const SURVEY_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("weight {0} is outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("vectors for `{question}` have lengths {left} and {right}")]
    LengthMismatch {
        question: String,
        left: usize,
        right: usize,
    },
    #[error("question lists differ: {0}")]
    QuestionMismatch(String),
    #[error("no question has a row observed in all three sources")]
    NoUsableQuestions,
    #[error("state sets differ: {0}")]
    StateSetMismatch(String),
    #[error("party `{party}` has no {what} share for {year}")]
    MissingParty { party: String, year: u16, what: &'static str },
    #[error("need at least two consecutive elections with actual results, the later one also simulated")]
    NoFittingElections,
}

type Result<T, E = CalibrationError> = std::result::Result<T, E>;

/// What a weight was fitted for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Scope {
    /// Survey weight for one country code (`survey_US`, `survey_CN`, ...).
    Survey(String),
    Election,
    Party(String),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Survey(c) => write!(f, "survey_{c}"),
            Scope::Election => f.write_str("election"),
            Scope::Party(p) => write!(f, "party({p})"),
        }
    }
}

impl From<Scope> for String {
    fn from(s: Scope) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Scope {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        if s == "election" {
            Ok(Scope::Election)
        } else if let Some(c) = s.strip_prefix("survey_") {
            Ok(Scope::Survey(c.to_string()))
        } else if let Some(p) = s.strip_prefix("party(").and_then(|r| r.strip_suffix(')')) {
            Ok(Scope::Party(p.to_string()))
        } else {
            Err(format!("unknown scope `{s}`"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub h: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationWeight {
    pub h: f64,
    pub scope: Scope,
    /// NaN (written as `null`) for weights that were not fitted.
    #[serde(deserialize_with = "nan_if_null")]
    pub objective_value: f64,
    pub fitted_on: String,
    /// Questions (or states, or elections) the weight was fitted on.
    #[serde(default)]
    pub training_questions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
}

impl CalibrationWeight {
    /// A weight supplied by the user rather than fitted.
    pub fn fixed(h: f64, scope: Scope) -> Result<Self> {
        check_h(h)?;
        Ok(CalibrationWeight {
            h,
            scope,
            objective_value: f64::NAN,
            fitted_on: "fixed".into(),
            training_questions: Vec::new(),
            trace: Vec::new(),
        })
    }
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn check_h(h: f64) -> Result<()> {
    if (0.0..=1.0).contains(&h) {
        Ok(())
    } else {
        Err(CalibrationError::WeightOutOfRange(h))
    }
}

/// `h * hist + (1 - h) * llm`, elementwise; missing in either input stays
/// missing.
pub fn combine_responses(h: f64, hist: &ResponseVector, llm: &ResponseVector) -> Result<ResponseVector> {
    check_h(h)?;
    if hist.len() != llm.len() {
        return Err(CalibrationError::LengthMismatch {
            question: llm.question_id.clone(),
            left: hist.len(),
            right: llm.len(),
        });
    }
    let values = hist
        .values
        .iter()
        .zip(&llm.values)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some(h * a + (1.0 - h) * b),
            _ => None,
        })
        .collect();
    Ok(ResponseVector::new(llm.question_id.clone(), values))
}

/// Rows of one question observed in all three sources, as
/// `(hist - llm, llm - human)` so that the residual at `h` is
/// `h * d + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionTerm {
    pub question_id: String,
    d: Vec<f64>,
    e: Vec<f64>,
    scale: f64,
}

impl QuestionTerm {
    pub fn rows(&self) -> usize {
        self.d.len()
    }

    /// Euclidean norm of the blended-minus-human residual at `h`, divided
    /// by the question's scale.
    pub fn distance(&self, h: f64) -> f64 {
        self.d
            .iter()
            .zip(&self.e)
            .map(|(d, e)| (h * d + e).powi(2))
            .sum::<f64>()
            .sqrt()
            / self.scale
    }
}

/// Survey calibration inputs after alignment checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyObjective {
    pub terms: Vec<QuestionTerm>,
    /// K, including questions with no usable rows.
    pub k: usize,
}

impl SurveyObjective {
    /// `spans`, when given, holds each question's `scale_max - scale_min`
    /// and puts every question on a unit interval.
    pub fn new(
        hist: &[ResponseVector],
        llm: &[ResponseVector],
        human: &[ResponseVector],
        spans: Option<&[f64]>,
    ) -> Result<Self> {
        let k = human.len();
        if hist.len() != k || llm.len() != k || spans.is_some_and(|s| s.len() != k) {
            return Err(CalibrationError::QuestionMismatch(format!(
                "{} historical, {} synthetic, {} human vectors",
                hist.len(),
                llm.len(),
                k
            )));
        }
        let mut terms = Vec::new();
        for (i, ((a, b), c)) in hist.iter().zip(llm).zip(human).enumerate() {
            if a.question_id != c.question_id || b.question_id != c.question_id {
                return Err(CalibrationError::QuestionMismatch(format!(
                    "position {i}: `{}`, `{}`, `{}`",
                    a.question_id, b.question_id, c.question_id
                )));
            }
            for v in [a, b] {
                if v.len() != c.len() {
                    return Err(CalibrationError::LengthMismatch {
                        question: c.question_id.clone(),
                        left: v.len(),
                        right: c.len(),
                    });
                }
            }
            let (d, e): (Vec<f64>, Vec<f64>) = a
                .values
                .iter()
                .zip(&b.values)
                .zip(&c.values)
                .filter_map(|((x, y), z)| Some((x.as_ref()? - y.as_ref()?, y.as_ref()? - z.as_ref()?)))
                .unzip();
            if d.is_empty() {
                log::warn!("question `{}` has no jointly observed rows", c.question_id);
                continue;
            }
            terms.push(QuestionTerm {
                question_id: c.question_id.clone(),
                d,
                e,
                scale: spans.map_or(1.0, |s| s[i]),
            });
        }
        if terms.is_empty() {
            return Err(CalibrationError::NoUsableQuestions);
        }
        Ok(SurveyObjective { terms, k })
    }

    /// Mean over usable questions of the per-question distance.
    pub fn value(&self, h: f64) -> f64 {
        self.terms.iter().map(|t| t.distance(h)).sum::<f64>() / self.terms.len() as f64
    }
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

/// Minimizer of a survey objective: golden section, then the endpoints,
/// preferring the smaller `h` on ties.
pub fn minimize_survey(obj: &SurveyObjective) -> (f64, f64) {
    let h = golden_section(|h| obj.value(h), 0.0, 1.0, SURVEY_TOL);
    let mut best = (h, obj.value(h));
    let f0 = obj.value(0.0);
    let f1 = obj.value(1.0);
    if f0 <= best.1 {
        best = (0.0, f0);
    } else if f1 < best.1 {
        best = (1.0, f1);
    }
    best
}

/// Least-squares survey weight for one country.
pub fn estimate_h_survey(
    hist: &[ResponseVector],
    llm: &[ResponseVector],
    human: &[ResponseVector],
    spans: Option<&[f64]>,
    scope: Scope,
    fitted_on: &str,
) -> Result<CalibrationWeight> {
    let obj = SurveyObjective::new(hist, llm, human, spans)?;
    let (h, value) = minimize_survey(&obj);
    let trace = (0..=ELECTION_GRID_STEPS)
        .map(|i| {
            let h = i as f64 / ELECTION_GRID_STEPS as f64;
            TracePoint {
                h,
                objective: obj.value(h),
            }
        })
        .collect();
    Ok(CalibrationWeight {
        h,
        scope,
        objective_value: value,
        fitted_on: fitted_on.to_string(),
        training_questions: obj.terms.iter().map(|t| t.question_id.clone()).collect(),
        trace,
    })
}

fn check_states(sets: &[BTreeSet<&str>]) -> Result<()> {
    for s in &sets[1..] {
        if *s != sets[0] {
            let diff: Vec<&str> = sets[0].symmetric_difference(s).copied().collect();
            return Err(CalibrationError::StateSetMismatch(diff.join(", ")));
        }
    }
    Ok(())
}

/// Number of states whose blended winner at `h` matches `actual`. A blended
/// share of exactly one half has no winner and never matches.
pub fn election_matches(
    h: f64,
    hist: &BTreeMap<&str, f64>,
    llm: &BTreeMap<&str, f64>,
    actual: &BTreeMap<String, Party>,
) -> usize {
    llm.iter()
        .filter(|(state, l)| {
            let share = h * hist[*state] + (1.0 - h) * **l;
            let w = winner_of(share);
            w.is_some() && w == actual.get(**state).copied()
        })
        .count()
}

/// Grid search for the election weight: the smallest grid `h` maximizing
/// the number of correctly called states.
pub fn estimate_h_election(
    hist: &[StateTally],
    llm: &[StateTally],
    actual: &BTreeMap<String, Party>,
    fitted_on: &str,
) -> Result<CalibrationWeight> {
    let hist_m: BTreeMap<&str, f64> = hist.iter().map(|t| (t.state.as_str(), t.dem_share)).collect();
    let llm_m: BTreeMap<&str, f64> = llm.iter().map(|t| (t.state.as_str(), t.dem_share)).collect();
    check_states(&[
        hist_m.keys().copied().collect(),
        llm_m.keys().copied().collect(),
        actual.keys().map(String::as_str).collect(),
    ])?;
    let trace: Vec<TracePoint> = (0..=ELECTION_GRID_STEPS)
        .map(|i| {
            let h = i as f64 / ELECTION_GRID_STEPS as f64;
            TracePoint {
                h,
                objective: election_matches(h, &hist_m, &llm_m, actual) as f64,
            }
        })
        .collect();
    let mut best = trace[0];
    for p in &trace[1..] {
        if p.objective > best.objective {
            best = *p;
        }
    }
    Ok(CalibrationWeight {
        h: best.h,
        scope: Scope::Election,
        objective_value: best.objective,
        fitted_on: fitted_on.to_string(),
        training_questions: llm_m.keys().map(|s| s.to_string()).collect(),
        trace,
    })
}

/// National list shares for one election. `sim` is absent for elections
/// that only serve as the previous result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyElection {
    pub year: u16,
    #[serde(default)]
    pub sim: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub actual: Option<BTreeMap<String, f64>>,
}

fn share(map: &Option<BTreeMap<String, f64>>, party: &str, year: u16, what: &'static str) -> Result<f64> {
    map.as_ref()
        .and_then(|m| m.get(party))
        .copied()
        .ok_or_else(|| CalibrationError::MissingParty {
            party: party.to_string(),
            year,
            what,
        })
}

/// Closed-form least-squares weight for one party: minimizes
/// `sum (h * prev + (1 - h) * sim - actual)^2` over the fitting elections,
/// clamped to `[0, 1]`; 0 when `prev == sim` everywhere.
pub fn party_weight(fits: &[(f64, f64, f64)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (prev, sim, actual) in fits {
        num += (actual - sim) * (prev - sim);
        den += (prev - sim) * (prev - sim);
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).clamp(0.0, 1.0)
    }
}

fn party_sse(h: f64, fits: &[(f64, f64, f64)]) -> f64 {
    fits.iter()
        .map(|(prev, sim, actual)| (h * prev + (1.0 - h) * sim - actual).powi(2))
        .sum()
}

/// Per-party weights from chronologically ordered elections. Each election
/// with both simulated and actual shares that follows an election with
/// actual shares is a fitting election; the earlier actual result plays
/// the historical role.
pub fn estimate_party_weights(elections: &[PartyElection], parties: &[String]) -> Result<BTreeMap<String, CalibrationWeight>> {
    let mut sorted: Vec<&PartyElection> = elections.iter().collect();
    sorted.sort_by_key(|e| e.year);
    let pairs: Vec<(&PartyElection, &PartyElection)> = sorted
        .windows(2)
        .filter(|w| w[0].actual.is_some() && w[1].actual.is_some() && w[1].sim.is_some())
        .map(|w| (w[0], w[1]))
        .collect();
    if pairs.is_empty() {
        return Err(CalibrationError::NoFittingElections);
    }
    let fitted_on = pairs
        .iter()
        .map(|(_, e)| e.year.to_string())
        .collect::<Vec<_>>()
        .join("+");
    parties
        .iter()
        .map(|p| {
            let fits = pairs
                .iter()
                .map(|(prev, cur)| {
                    Ok((
                        share(&prev.actual, p, prev.year, "actual")?,
                        share(&cur.sim, p, cur.year, "simulated")?,
                        share(&cur.actual, p, cur.year, "actual")?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let h = party_weight(&fits);
            Ok((
                p.clone(),
                CalibrationWeight {
                    h,
                    scope: Scope::Party(p.clone()),
                    objective_value: party_sse(h, &fits),
                    fitted_on: fitted_on.clone(),
                    training_questions: pairs.iter().map(|(_, e)| e.year.to_string()).collect(),
                    trace: Vec::new(),
                },
            ))
        })
        .collect()
}

/// Blends each party's previous result with its simulated share, then
/// rescales so the parties' total equals their simulated total.
pub fn forecast_multiparty(
    weights: &BTreeMap<String, CalibrationWeight>,
    prev_actual: &BTreeMap<String, f64>,
    sim: &BTreeMap<String, f64>,
    year: u16,
) -> Result<BTreeMap<String, f64>> {
    let mut raw = BTreeMap::new();
    for (party, w) in weights {
        let prev = share(&Some(prev_actual.clone()), party, year, "previous actual")?;
        let s = share(&Some(sim.clone()), party, year, "simulated")?;
        raw.insert(party.clone(), w.h * prev + (1.0 - w.h) * s);
    }
    let target: f64 = weights.keys().map(|p| sim[p]).sum();
    let total: f64 = raw.values().sum();
    if total > 0.0 {
        for v in raw.values_mut() {
            *v *= target / total;
        }
    }
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(id: &str, xs: &[f64]) -> ResponseVector {
        ResponseVector::from_values(id, xs)
    }

    fn grid_argmin(obj: &SurveyObjective, step: f64) -> f64 {
        let n = (1.0 / step).round() as usize;
        let mut best = (0.0, obj.value(0.0));
        for i in 1..=n {
            let h = i as f64 * step;
            let v = obj.value(h);
            if v < best.1 {
                best = (h, v);
            }
        }
        best.0
    }

    #[test]
    fn combine_examples() {
        let hist = rv("q", &[4.0, 2.0]);
        let llm = rv("q", &[2.0, 2.0]);
        assert_eq!(combine_responses(0.25, &hist, &llm).unwrap().values, vec![Some(2.5), Some(2.0)]);
        assert_eq!(combine_responses(0.0, &hist, &llm).unwrap(), llm);
        assert_eq!(combine_responses(1.0, &hist, &llm).unwrap().values, hist.values);
        assert!(matches!(
            combine_responses(1.5, &hist, &llm),
            Err(CalibrationError::WeightOutOfRange(_))
        ));
        let missing = ResponseVector::new("q", vec![None, Some(1.0)]);
        assert_eq!(combine_responses(0.5, &missing, &llm).unwrap().values, vec![None, Some(1.5)]);
        assert!(combine_responses(0.5, &rv("q", &[1.0]), &llm).is_err());
    }

    #[test]
    fn survey_boundaries() {
        let human = vec![rv("a", &[1.0, 2.0, 3.0])];
        let other = vec![rv("a", &[3.0, 3.0, 1.0])];
        let w = estimate_h_survey(&other, &human, &human, None, Scope::Survey("US".into()), "t").unwrap();
        assert_eq!(w.h, 0.0);
        let w = estimate_h_survey(&human, &other, &human, None, Scope::Survey("US".into()), "t").unwrap();
        assert_eq!(w.h, 1.0);
    }

    #[test]
    fn symmetric_toy_matches_grid() {
        let hist = vec![rv("a", &[3.0, 3.0]), rv("b", &[1.0, 1.0])];
        let llm = vec![rv("a", &[1.0, 1.0]), rv("b", &[3.0, 3.0])];
        let human = vec![rv("a", &[2.0, 2.0]), rv("b", &[2.0, 2.0])];
        let obj = SurveyObjective::new(&hist, &llm, &human, None).unwrap();
        let (h, _) = minimize_survey(&obj);
        let g = grid_argmin(&obj, 1e-5);
        assert!((h - g).abs() < 1e-4, "{h} vs {g}");
        assert!((h - 0.5).abs() < 1e-4);
    }

    #[test]
    fn missing_rows_are_dropped_per_question() {
        let hist = vec![ResponseVector::new("a", vec![Some(1.0), None]), rv("b", &[1.0, 1.0])];
        let llm = vec![rv("a", &[1.0, 5.0]), rv("b", &[1.0, 1.0])];
        let human = vec![rv("a", &[1.0, 1.0]), rv("b", &[1.0, 1.0])];
        let obj = SurveyObjective::new(&hist, &llm, &human, None).unwrap();
        assert_eq!(obj.terms[0].rows(), 1);
        let empty = vec![ResponseVector::new("a", vec![None])];
        assert_eq!(
            SurveyObjective::new(&empty, &empty, &empty, None).unwrap_err(),
            CalibrationError::NoUsableQuestions
        );
        assert!(matches!(
            SurveyObjective::new(&hist[..1], &llm, &human, None),
            Err(CalibrationError::QuestionMismatch(_))
        ));
    }

    #[test]
    fn normalization_rescales_wide_questions() {
        let hist = vec![rv("narrow", &[1.0, 1.0]), rv("wide", &[10.0, 10.0])];
        let llm = vec![rv("narrow", &[3.0, 3.0]), rv("wide", &[1.0, 1.0])];
        let human = vec![rv("narrow", &[3.0, 3.0]), rv("wide", &[10.0, 10.0])];
        let raw = SurveyObjective::new(&hist, &llm, &human, None).unwrap();
        let unit = SurveyObjective::new(&hist, &llm, &human, Some(&[2.0, 9.0])).unwrap();
        assert!((raw.value(0.0) - (0.0 + 9.0 * 2f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((unit.value(0.0) - 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn election_examples() {
        let states = ["A", "B", "C"];
        let t = |xs: [f64; 3]| -> Vec<StateTally> {
            states
                .iter()
                .zip(xs)
                .map(|(s, d)| StateTally::from_dem_share(*s, 2020, d, 1.0))
                .collect()
        };
        let actual: BTreeMap<String, Party> = [("A", Party::Democratic), ("B", Party::Republican), ("C", Party::Democratic)]
            .into_iter()
            .map(|(s, p)| (s.to_string(), p))
            .collect();
        // LLM already right.
        let w = estimate_h_election(&t([0.3, 0.7, 0.3]), &t([0.6, 0.4, 0.6]), &actual, "t").unwrap();
        assert_eq!(w.h, 0.0);
        assert_eq!(w.trace.len(), 101);
        // History right, LLM wrong by wide margins.
        let w = estimate_h_election(&t([0.9, 0.1, 0.9]), &t([0.2, 0.8, 0.2]), &actual, "t").unwrap();
        // 0.9h + 0.2(1 - h) first exceeds one half at h = 0.43.
        assert_eq!(w.h, 0.43);
        assert_eq!(w.objective_value, 3.0);
        // One state, every h ties.
        let one: BTreeMap<String, Party> = [("A".to_string(), Party::Democratic)].into();
        let s = vec![StateTally::from_dem_share("A", 2020, 0.6, 1.0)];
        assert_eq!(estimate_h_election(&s, &s, &one, "t").unwrap().h, 0.0);
        assert!(matches!(
            estimate_h_election(&s, &t([0.5, 0.5, 0.5]), &actual, "t"),
            Err(CalibrationError::StateSetMismatch(_))
        ));
    }

    #[test]
    fn exact_half_is_never_a_match() {
        let hist: BTreeMap<&str, f64> = [("A", 0.5)].into();
        let llm: BTreeMap<&str, f64> = [("A", 0.5)].into();
        let actual = [("A".to_string(), Party::Democratic)].into();
        assert_eq!(election_matches(0.3, &hist, &llm, &actual), 0);
    }

    #[test]
    fn party_weight_examples() {
        assert_eq!(party_weight(&[(0.25, 0.30, 0.20)]), 1.0);
        assert_eq!(party_weight(&[(0.25, 0.30, 0.30), (0.3, 0.1, 0.1)]), 0.0);
        assert_eq!(party_weight(&[(0.3, 0.3, 0.2)]), 0.0);
        // Unclamped interior optimum.
        let fits = [(0.40, 0.20, 0.25), (0.30, 0.10, 0.16)];
        let h = party_weight(&fits);
        assert!((h - 0.275).abs() < 1e-12);
    }

    #[test]
    fn party_weights_and_forecast() {
        let m = |xs: &[(&str, f64)]| Some(xs.iter().map(|(p, v)| (p.to_string(), *v)).collect::<BTreeMap<_, _>>());
        let elections = vec![
            PartyElection { year: 2021, sim: m(&[("A", 0.30), ("B", 0.70)]), actual: m(&[("A", 0.20), ("B", 0.80)]) },
            PartyElection { year: 2017, sim: None, actual: m(&[("A", 0.25), ("B", 0.75)]) },
        ];
        let parties = vec!["A".to_string(), "B".to_string()];
        let w = estimate_party_weights(&elections, &parties).unwrap();
        assert_eq!(w["A"].h, 1.0);
        assert_eq!(w["A"].scope, Scope::Party("A".into()));
        assert_eq!(w["A"].fitted_on, "2021");

        let prev = m(&[("A", 0.20), ("B", 0.80)]).unwrap();
        let sim = m(&[("A", 0.35), ("B", 0.55)]).unwrap();
        let f = forecast_multiparty(&w, &prev, &sim, 2025).unwrap();
        assert!((f.values().sum::<f64>() - 0.90).abs() < 1e-12);

        let missing = vec![
            elections[1].clone(),
            PartyElection { year: 2021, sim: m(&[("A", 0.3)]), actual: m(&[("A", 0.2), ("B", 0.8)]) },
        ];
        assert!(matches!(
            estimate_party_weights(&missing, &parties),
            Err(CalibrationError::MissingParty { .. })
        ));
        assert_eq!(
            estimate_party_weights(&elections[..1], &parties).unwrap_err(),
            CalibrationError::NoFittingElections
        );
    }

    #[test]
    fn scope_strings_round_trip() {
        for s in [Scope::Survey("CN".into()), Scope::Election, Scope::Party("SPD".into())] {
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Scope>(&j).unwrap(), s);
        }
        assert_eq!(Scope::Survey("US".into()).to_string(), "survey_US");
    }

    proptest! {
        #[test]
        fn party_weight_matches_grid(prev in proptest::collection::vec(0.0f64..0.5, 1..4), sim_off in proptest::collection::vec(-0.2f64..0.2, 4), act_off in proptest::collection::vec(-0.2f64..0.2, 4)) {
            let fits: Vec<(f64, f64, f64)> = prev.iter().enumerate().map(|(i, p)| (*p, p + sim_off[i], p + act_off[i])).collect();
            let h = party_weight(&fits);
            let mut best = (0.0, party_sse(0.0, &fits));
            for i in 1..=10_000 {
                let g = i as f64 * 1e-4;
                let v = party_sse(g, &fits);
                if v < best.1 { best = (g, v); }
            }
            prop_assert!(party_sse(h, &fits) <= best.1 + 1e-12);
        }

        #[test]
        fn combine_is_bounded(h in 0.0f64..=1.0, a in proptest::collection::vec(1.0f64..10.0, 1..20), b in proptest::collection::vec(1.0f64..10.0, 20)) {
            let hist = rv("q", &a);
            let llm = rv("q", &b[..a.len()]);
            let c = combine_responses(h, &hist, &llm).unwrap();
            for ((x, y), z) in a.iter().zip(&b).zip(c.values.iter().flatten()) {
                prop_assert!(*z >= x.min(*y) - 1e-12 && *z <= x.max(*y) + 1e-12);
            }
        }

        #[test]
        fn survey_argmin_permutation_invariant(
            rows in proptest::collection::vec((1.0f64..5.0, 1.0f64..5.0, 1.0f64..5.0), 3..20),
            rot in 1usize..20,
        ) {
            let (a, (b, c)): (Vec<f64>, (Vec<f64>, Vec<f64>)) = rows.iter().map(|(a, b, c)| (*a, (*b, *c))).unzip();
            let r = rot % a.len();
            let rotate = |v: &[f64]| { let mut v = v.to_vec(); v.rotate_left(r); v };
            let o1 = SurveyObjective::new(&[rv("q", &a)], &[rv("q", &b)], &[rv("q", &c)], None).unwrap();
            let o2 = SurveyObjective::new(&[rv("q", &rotate(&a))], &[rv("q", &rotate(&b))], &[rv("q", &rotate(&c))], None).unwrap();
            prop_assert!((minimize_survey(&o1).0 - minimize_survey(&o2).0).abs() < 1e-6);
        }

        #[test]
        fn fitted_objective_beats_endpoints(rows in proptest::collection::vec((1.0f64..5.0, 1.0f64..5.0, 1.0f64..5.0), 1..20)) {
            let (a, (b, c)): (Vec<f64>, (Vec<f64>, Vec<f64>)) = rows.iter().map(|(a, b, c)| (*a, (*b, *c))).unzip();
            let obj = SurveyObjective::new(&[rv("q", &a)], &[rv("q", &b)], &[rv("q", &c)], None).unwrap();
            let (h, v) = minimize_survey(&obj);
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!(v <= obj.value(0.0) && v <= obj.value(1.0));
        }
    }
}
