//! Propensity-score matching of current-wave respondents to a historical
//! wave.
//!
//! Membership (current = 1, historical = 0) is regressed on the six
//! demographic covariates with a ridge-penalized logistic model fitted by
//! iteratively reweighted least squares. Each current respondent is then
//! paired with the historical respondent whose score is closest.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DemographicProfile, Gender, Schema, SurveySample};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PsmError {
    #[error("logistic fit did not converge in {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("samples use different schemas ({0:?} vs {1:?})")]
    SchemaMismatch(Schema, Schema),
    #[error("{rows} usable rows cannot identify {columns} coefficients")]
    TooFewRows { rows: usize, columns: usize },
    #[error("{0} sample has no respondent with complete covariates")]
    EmptySample(&'static str),
    #[error("singular system in the Newton step")]
    Singular,
    #[error("score list is empty")]
    EmptyScores,
}

type Result<T, E = PsmError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    #[default]
    WithReplacement,
    WithoutReplacement,
}

impl std::str::FromStr for MatchPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with_replacement" | "with-replacement" => Ok(MatchPolicy::WithReplacement),
            "without_replacement" | "without-replacement" => Ok(MatchPolicy::WithoutReplacement),
            other => Err(format!("unknown match policy `{other}`")),
        }
    }
}

/// How one raw covariate becomes design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnEncoding {
    /// `(x - mean) / sd`.
    Standardized { mean: f64, sd: f64 },
    /// 1 for female, 0 for male.
    Binary,
    /// 1 when the code equals `level`.
    Indicator { level: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub name: String,
    pub covariate: Covariate,
    pub encoding: ColumnEncoding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Age,
    Gender,
    Education,
    MaritalStatus,
    Occupation,
    Income,
}

impl Covariate {
    pub const ALL: [Covariate; 6] = [
        Covariate::Age,
        Covariate::Gender,
        Covariate::Education,
        Covariate::MaritalStatus,
        Covariate::Occupation,
        Covariate::Income,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Age => "age",
            Covariate::Gender => "gender",
            Covariate::Education => "education",
            Covariate::MaritalStatus => "marital_status",
            Covariate::Occupation => "occupation",
            Covariate::Income => "income",
        }
    }

    fn raw(self, p: &DemographicProfile) -> f64 {
        match self {
            Covariate::Age => p.age.expect("complete covariates") as f64,
            Covariate::Gender => match p.gender.expect("complete covariates") {
                Gender::Male => 0.0,
                Gender::Female => 1.0,
            },
            Covariate::Education => p.education.expect("complete covariates") as f64,
            Covariate::MaritalStatus => p.marital_status.expect("complete covariates") as f64,
            Covariate::Occupation => p.occupation.expect("complete covariates") as f64,
            Covariate::Income => p.income.expect("complete covariates") as f64,
        }
    }

    fn nominal(self) -> bool {
        matches!(self, Covariate::MaritalStatus | Covariate::Occupation)
    }
}

/// Covariate encoder fitted on a pooled roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub columns: Vec<DesignColumn>,
    /// Covariates or levels dropped because they were constant.
    pub dropped: Vec<String>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl Encoder {
    /// Learns standardization constants and one-hot levels from `pooled`,
    /// which must have complete covariates. Nominal codes use the smallest
    /// observed level as the reference.
    pub fn fit(pooled: &[&DemographicProfile]) -> Self {
        let mut columns = Vec::new();
        let mut dropped = Vec::new();
        for cov in Covariate::ALL {
            let xs: Vec<f64> = pooled.iter().map(|p| cov.raw(p)).collect();
            if cov.nominal() {
                let levels: BTreeSet<u8> = xs.iter().map(|x| *x as u8).collect();
                if levels.len() < 2 {
                    log::warn!("{} is constant in the pooled sample; dropped", cov.name());
                    dropped.push(cov.name().to_string());
                    continue;
                }
                for level in levels.into_iter().skip(1) {
                    columns.push(DesignColumn {
                        name: format!("{}_{}", cov.name(), level),
                        covariate: cov,
                        encoding: ColumnEncoding::Indicator { level },
                    });
                }
            } else {
                let (mean, sd) = mean_sd(&xs);
                if !(sd > 0.0) {
                    log::warn!("{} is constant in the pooled sample; dropped", cov.name());
                    dropped.push(cov.name().to_string());
                    continue;
                }
                let encoding = if cov == Covariate::Gender {
                    ColumnEncoding::Binary
                } else {
                    ColumnEncoding::Standardized { mean, sd }
                };
                columns.push(DesignColumn {
                    name: cov.name().to_string(),
                    covariate: cov,
                    encoding,
                });
            }
        }
        Encoder { columns, dropped }
    }

    /// Design row without the intercept.
    pub fn encode(&self, p: &DemographicProfile) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| {
                let x = c.covariate.raw(p);
                match c.encoding {
                    ColumnEncoding::Standardized { mean, sd } => (x - mean) / sd,
                    ColumnEncoding::Binary => x,
                    ColumnEncoding::Indicator { level } => f64::from(x as u8 == level),
                }
            })
            .collect()
    }
}

/// Fitted logistic regression; `coefficients[0]` is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized log-likelihood at the solution.
    pub objective: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Penalized log-likelihood
/// `sum(y*z - log(1 + e^z)) - ridge/2 * |beta[1..]|^2` with `z = X beta`.
/// `x` rows carry a leading 1 for the intercept, which is not penalized.
pub fn penalized_log_likelihood(x: &[Vec<f64>], y: &[f64], beta: &[f64], ridge: f64) -> f64 {
    let ll: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let z: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            yi * z - softplus(z)
        })
        .sum();
    ll - 0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Newton-Raphson (IRLS) for ridge-penalized logistic regression. Stops when
/// the penalized log-likelihood changes by less than `tol`; a step that
/// lowers the objective is halved until it does not.
pub fn fit_logistic(x: &[Vec<f64>], y: &[f64], ridge: f64, max_iter: usize, tol: f64) -> Result<LogisticFit> {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    if n < p + 1 {
        return Err(PsmError::TooFewRows { rows: n, columns: p });
    }
    let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let yv = DVector::from_column_slice(y);
    let mut penalty = DVector::from_element(p, ridge);
    penalty[0] = 0.0;

    let mut beta = DVector::zeros(p);
    let mut obj = penalized_log_likelihood(x, y, beta.as_slice(), ridge);
    for it in 1..=max_iter {
        let z = &xm * &beta;
        let mu = z.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-300));
        let grad = xm.transpose() * (&yv - &mu) - penalty.component_mul(&beta);
        let mut hess = xm.transpose() * DMatrix::from_diagonal(&w) * &xm;
        for j in 0..p {
            hess[(j, j)] += penalty[j];
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| hess.lu().solve(&grad))
            .ok_or(PsmError::Singular)?;

        let mut t = 1.0;
        let mut next;
        let mut next_obj;
        loop {
            next = &beta + &step * t;
            next_obj = penalized_log_likelihood(x, y, next.as_slice(), ridge);
            if next_obj >= obj - 1e-12 || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        let change = (next_obj - obj).abs();
        beta = next;
        obj = next_obj;
        if change < tol {
            return Ok(LogisticFit {
                coefficients: beta.iter().copied().collect(),
                converged: true,
                iterations: it,
                objective: obj,
            });
        }
    }
    Err(PsmError::NonConvergence { iterations: max_iter })
}

/// Score for one respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub respondent_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub encoder: Encoder,
    pub fit: LogisticFit,
}

impl PropensityModel {
    pub fn coefficients(&self) -> &[f64] {
        &self.fit.coefficients
    }

    pub fn converged(&self) -> bool {
        self.fit.converged
    }

    pub fn iterations(&self) -> usize {
        self.fit.iterations
    }

    /// Probability of current-wave membership, kept strictly inside (0, 1)
    /// when the logistic saturates in floating point.
    pub fn score(&self, p: &DemographicProfile) -> f64 {
        let row = self.encoder.encode(p);
        let z = self.fit.coefficients[0]
            + row
                .iter()
                .zip(&self.fit.coefficients[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

/// Model plus the scores of every usable respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub model: PropensityModel,
    pub current: Vec<Scored>,
    pub historical: Vec<Scored>,
    /// Respondents skipped for missing covariates, current wave first.
    pub excluded: Vec<String>,
}

/// Options for [`fit_propensity_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: DEFAULT_RIDGE,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

/// Builds the pooled design (`current` rows first, intercept column
/// leading) and membership labels.
pub fn pooled_design(
    current: &[&DemographicProfile],
    historical: &[&DemographicProfile],
) -> (Encoder, Vec<Vec<f64>>, Vec<f64>) {
    let pooled: Vec<&DemographicProfile> = current.iter().chain(historical).copied().collect();
    let encoder = Encoder::fit(&pooled);
    let x = pooled
        .iter()
        .map(|p| {
            let mut row = vec![1.0];
            row.extend(encoder.encode(p));
            row
        })
        .collect();
    let y = std::iter::repeat_n(1.0, current.len())
        .chain(std::iter::repeat_n(0.0, historical.len()))
        .collect();
    (encoder, x, y)
}

pub fn fit_propensity(current: &SurveySample, historical: &SurveySample) -> Result<PropensityFit> {
    fit_propensity_with(current, historical, FitOptions::default())
}

pub fn fit_propensity_with(current: &SurveySample, historical: &SurveySample, opts: FitOptions) -> Result<PropensityFit> {
    if current.schema != historical.schema {
        return Err(PsmError::SchemaMismatch(current.schema, historical.schema));
    }
    let mut excluded = Vec::new();
    let mut usable = |s: &'_ SurveySample| -> Vec<usize> {
        s.roster
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                if p.has_complete_covariates() {
                    Some(i)
                } else {
                    excluded.push(p.respondent_id.clone());
                    None
                }
            })
            .collect()
    };
    let cur_idx = usable(current);
    let hist_idx = usable(historical);
    if !excluded.is_empty() {
        log::warn!("{} respondents excluded from matching for missing covariates", excluded.len());
    }
    if cur_idx.is_empty() {
        return Err(PsmError::EmptySample("current"));
    }
    if hist_idx.is_empty() {
        return Err(PsmError::EmptySample("historical"));
    }
    let cur: Vec<&DemographicProfile> = cur_idx.iter().map(|i| &current.roster[*i]).collect();
    let hist: Vec<&DemographicProfile> = hist_idx.iter().map(|i| &historical.roster[*i]).collect();
    let (encoder, x, y) = pooled_design(&cur, &hist);
    let fit = fit_logistic(&x, &y, opts.ridge, opts.max_iter, opts.tol)?;
    let model = PropensityModel { encoder, fit };
    let score_all = |ps: &[&DemographicProfile]| {
        ps.iter()
            .map(|p| Scored {
                respondent_id: p.respondent_id.clone(),
                score: model.score(p),
            })
            .collect::<Vec<_>>()
    };
    let current_scores = score_all(&cur);
    let historical_scores = score_all(&hist);
    Ok(PropensityFit {
        current: current_scores,
        historical: historical_scores,
        model,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub current_id: String,
    pub historical_id: String,
    pub score_current: f64,
    pub score_historical: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchedPairSet {
    /// In the order of the current score list.
    pub pairs: Vec<MatchedPair>,
    pub unmatched: Vec<String>,
}

impl MatchedPairSet {
    pub fn total_gap(&self) -> f64 {
        self.pairs.iter().map(|p| p.gap).sum()
    }

    /// For each id in `current_roster`, the position in `historical_roster`
    /// of its match. Feeds [`crate::data::ResponseVector::gather`].
    pub fn historical_index(&self, current_roster: &[String], historical_roster: &[String]) -> Vec<Option<usize>> {
        let hpos: std::collections::HashMap<&str, usize> = historical_roster
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let by_current: std::collections::HashMap<&str, &str> = self
            .pairs
            .iter()
            .map(|p| (p.current_id.as_str(), p.historical_id.as_str()))
            .collect();
        current_roster
            .iter()
            .map(|id| by_current.get(id.as_str()).and_then(|h| hpos.get(h).copied()))
            .collect()
    }
}

/// Nearest historical entry to `s` in `sorted` (ascending by score, then
/// id), skipping taken entries; ties go to the smaller id.
fn nearest_sorted(sorted: &[&Scored], s: f64) -> usize {
    let pos = sorted.partition_point(|h| h.score < s);
    let mut best_gap = f64::INFINITY;
    if pos < sorted.len() {
        best_gap = sorted[pos].score - s;
    }
    if pos > 0 {
        best_gap = best_gap.min(s - sorted[pos - 1].score);
    }
    // Candidates sit in at most two runs of equal scores.
    let mut best: Option<usize> = None;
    let mut consider = |i: usize| {
        if (sorted[i].score - s).abs() == best_gap
            && best.is_none_or(|b| sorted[i].respondent_id < sorted[b].respondent_id)
        {
            best = Some(i);
        }
    };
    let mut i = pos;
    while i < sorted.len() && sorted[i].score - s <= best_gap {
        consider(i);
        i += 1;
    }
    let mut i = pos;
    while i > 0 && s - sorted[i - 1].score <= best_gap {
        consider(i - 1);
        i -= 1;
    }
    best.expect("non-empty pool")
}

fn scan_nearest(pool: &[&Scored], taken: &[bool], s: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, h) in pool.iter().enumerate() {
        if taken[i] {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (g, gb) = ((h.score - s).abs(), (pool[b].score - s).abs());
                if g < gb || (g == gb && h.respondent_id < pool[b].respondent_id) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// 1:1 nearest-neighbour matching on propensity scores.
///
/// With replacement, each current respondent takes the globally nearest
/// historical one. Without replacement, current respondents are served in
/// descending score order (ties by id) and each takes the nearest one still
/// available. Historical ties always go to the smaller id. A `caliper`, in
/// standard deviations of the pooled scores, leaves pairs that are farther
/// apart unmatched.
pub fn match_nearest(
    current: &[Scored],
    historical: &[Scored],
    policy: MatchPolicy,
    caliper: Option<f64>,
) -> Result<MatchedPairSet> {
    if current.is_empty() || historical.is_empty() {
        return Err(PsmError::EmptyScores);
    }
    let max_gap = caliper.map(|c| {
        let pooled: Vec<f64> = current.iter().chain(historical).map(|s| s.score).collect();
        c * mean_sd(&pooled).1
    });
    let mut assigned: Vec<Option<usize>> = vec![None; current.len()];
    let mut sorted: Vec<&Scored> = historical.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.respondent_id.cmp(&b.respondent_id)));

    match policy {
        MatchPolicy::WithReplacement => {
            for (slot, c) in assigned.iter_mut().zip(current) {
                *slot = Some(nearest_sorted(&sorted, c.score));
            }
        }
        MatchPolicy::WithoutReplacement => {
            let mut order: Vec<usize> = (0..current.len()).collect();
            order.sort_by(|a, b| {
                current[*b]
                    .score
                    .total_cmp(&current[*a].score)
                    .then_with(|| current[*a].respondent_id.cmp(&current[*b].respondent_id))
            });
            let mut taken = vec![false; sorted.len()];
            for ci in order {
                let s = current[ci].score;
                let Some(hi) = scan_nearest(&sorted, &taken, s) else {
                    break;
                };
                if max_gap.is_some_and(|m| (sorted[hi].score - s).abs() > m) {
                    continue;
                }
                taken[hi] = true;
                assigned[ci] = Some(hi);
            }
        }
    }

    let mut out = MatchedPairSet::default();
    for (c, a) in current.iter().zip(assigned) {
        let pair = a.map(|hi| {
            let h = sorted[hi];
            MatchedPair {
                current_id: c.respondent_id.clone(),
                historical_id: h.respondent_id.clone(),
                score_current: c.score,
                score_historical: h.score,
                gap: (c.score - h.score).abs(),
            }
        });
        match pair {
            Some(p) if max_gap.is_none_or(|m| p.gap <= m) => out.pairs.push(p),
            _ => out.unmatched.push(c.respondent_id.clone()),
        }
    }
    Ok(out)
}

/// Standardized mean difference of one design column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub column: String,
    pub smd_before: f64,
    pub smd_after: f64,
}

fn smd(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let pooled = ((sa * sa + sb * sb) / 2.0).sqrt();
    if pooled > 0.0 {
        (ma - mb) / pooled
    } else if ma == mb {
        0.0
    } else {
        f64::INFINITY.copysign(ma - mb)
    }
}

/// Covariate balance before matching (all usable respondents) and after
/// (current respondents against their matched partners, with repeats).
pub fn balance_report(
    model: &PropensityModel,
    current: &SurveySample,
    historical: &SurveySample,
    pairs: &MatchedPairSet,
) -> Vec<BalanceRow> {
    let rows = |s: &SurveySample| -> std::collections::BTreeMap<String, Vec<f64>> {
        s.roster
            .iter()
            .filter(|p| p.has_complete_covariates())
            .map(|p| (p.respondent_id.clone(), model.encoder.encode(p)))
            .collect()
    };
    let cur = rows(current);
    let hist = rows(historical);
    model
        .encoder
        .columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let before_c: Vec<f64> = cur.values().map(|r| r[j]).collect();
            let before_h: Vec<f64> = hist.values().map(|r| r[j]).collect();
            let after_c: Vec<f64> = pairs.pairs.iter().map(|p| cur[&p.current_id][j]).collect();
            let after_h: Vec<f64> = pairs.pairs.iter().map(|p| hist[&p.historical_id][j]).collect();
            BalanceRow {
                column: col.name.clone(),
                smd_before: smd(&before_c, &before_h),
                smd_after: smd(&after_c, &after_h),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::Country;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn person(id: &str, age: u32, g: Gender, edu: u8, mar: u8, occ: u8, inc: u8) -> DemographicProfile {
        DemographicProfile {
            respondent_id: id.into(),
            age: Some(age),
            gender: Some(g),
            region: "Ohio".into(),
            education: Some(edu),
            marital_status: Some(mar),
            occupation: Some(occ),
            income: Some(inc),
            ethnicity: None,
            religion: None,
            political_attention: None,
            sampling_weight: 1.0,
        }
    }

    fn sample(id: &str, roster: Vec<DemographicProfile>) -> SurveySample {
        SurveySample {
            sample_id: id.into(),
            country: Country::US,
            schema: Schema::Wvs,
            roster,
            responses: BTreeMap::new(),
        }
    }

    fn scored(xs: &[(&str, f64)]) -> Vec<Scored> {
        xs.iter()
            .map(|(id, s)| Scored {
                respondent_id: id.to_string(),
                score: *s,
            })
            .collect()
    }

    fn mixed_roster(prefix: &str) -> Vec<DemographicProfile> {
        let mut v = Vec::new();
        let mut k = 0;
        for age in [25, 40, 60] {
            for g in [Gender::Male, Gender::Female] {
                for mar in [1, 2] {
                    v.push(person(&format!("{prefix}{k}"), age, g, (k % 9) as u8, mar, 1 + (k % 3) as u8, (k % 10) as u8));
                    k += 1;
                }
            }
        }
        v
    }

    #[test]
    fn mirror_samples_score_one_half() {
        let fit = fit_propensity(&sample("a", mixed_roster("a")), &sample("b", mixed_roster("b"))).unwrap();
        for s in fit.current.iter().chain(&fit.historical) {
            assert!((s.score - 0.5).abs() < 1e-6, "{}", s.score);
        }
        assert!(fit.model.converged());
    }

    #[test]
    fn separable_fit_stays_finite() {
        let cur: Vec<_> = (0..10).map(|i| person(&format!("c{i}"), 20, Gender::Male, 3, 1 + (i % 2) as u8, 1, 5)).collect();
        let hist: Vec<_> = (0..10).map(|i| person(&format!("h{i}"), 60, Gender::Male, 3, 1 + (i % 2) as u8, 1, 5)).collect();
        let fit = fit_propensity(&sample("c", cur), &sample("h", hist)).unwrap();
        assert!(fit.model.coefficients().iter().all(|b| b.is_finite()));
        assert!(fit.current.iter().all(|s| s.score > 0.99 && s.score < 1.0));
        assert!(fit.historical.iter().all(|s| s.score < 0.01 && s.score > 0.0));
        // Gender, education, occupation and income are constant.
        assert_eq!(fit.model.encoder.dropped, vec!["gender", "education", "occupation", "income"]);
    }

    #[test]
    fn incomplete_rows_are_excluded() {
        let mut cur = mixed_roster("c");
        cur[0].income = None;
        let fit = fit_propensity(&sample("c", cur), &sample("h", mixed_roster("h"))).unwrap();
        assert_eq!(fit.excluded, vec!["c0".to_string()]);
        assert_eq!(fit.current.len(), 11);
    }

    #[test]
    fn schema_must_agree() {
        let mut h = sample("h", mixed_roster("h"));
        h.schema = Schema::Anes;
        assert!(matches!(
            fit_propensity(&sample("c", mixed_roster("c")), &h),
            Err(PsmError::SchemaMismatch(..))
        ));
    }

    #[test]
    fn unique_neighbours() {
        let cur = scored(&[("c1", 0.2), ("c2", 0.8)]);
        let hist = scored(&[("h1", 0.1), ("h2", 0.5), ("h3", 0.9)]);
        for policy in [MatchPolicy::WithReplacement, MatchPolicy::WithoutReplacement] {
            let m = match_nearest(&cur, &hist, policy, None).unwrap();
            let got: Vec<(&str, &str)> = m
                .pairs
                .iter()
                .map(|p| (p.current_id.as_str(), p.historical_id.as_str()))
                .collect();
            assert_eq!(got, vec![("c1", "h1"), ("c2", "h3")]);
        }
    }

    #[test]
    fn equidistant_goes_to_lower_id() {
        let cur = scored(&[("c", 0.5)]);
        for hist in [scored(&[("h1", 0.25), ("h2", 0.75)]), scored(&[("h2", 0.25), ("h1", 0.75)])] {
            let m = match_nearest(&cur, &hist, MatchPolicy::WithReplacement, None).unwrap();
            assert_eq!(m.pairs[0].historical_id, "h1");
            let m = match_nearest(&cur, &hist, MatchPolicy::WithoutReplacement, None).unwrap();
            assert_eq!(m.pairs[0].historical_id, "h1");
        }
    }

    #[test]
    fn short_pool_leaves_unmatched() {
        let cur = scored(&[("a", 0.2), ("b", 0.9), ("c", 0.5)]);
        let hist = scored(&[("h1", 0.85)]);
        let m = match_nearest(&cur, &hist, MatchPolicy::WithoutReplacement, None).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].current_id, "b");
        assert_eq!(m.unmatched, vec!["a".to_string(), "c".to_string()]);
    }

    #[test]
    fn caliper_drops_far_pairs() {
        let cur = scored(&[("a", 0.1), ("b", 0.9)]);
        let hist = scored(&[("h1", 0.12), ("h2", 0.5)]);
        let m = match_nearest(&cur, &hist, MatchPolicy::WithReplacement, Some(0.2)).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.unmatched, vec!["b".to_string()]);
        assert!(match_nearest(&[], &hist, MatchPolicy::WithReplacement, None).is_err());
    }

    #[test]
    fn historical_index_alignment() {
        let cur = scored(&[("a", 0.1), ("b", 0.9)]);
        let hist = scored(&[("x", 0.85), ("y", 0.1)]);
        let m = match_nearest(&cur, &hist, MatchPolicy::WithReplacement, None).unwrap();
        let idx = m.historical_index(&["b".into(), "a".into(), "z".into()], &["x".into(), "y".into()]);
        assert_eq!(idx, vec![Some(0), Some(1), None]);
    }

    #[test]
    fn balance_improves_on_mirror() {
        let c = sample("c", mixed_roster("c"));
        let h = sample("h", mixed_roster("h"));
        let fit = fit_propensity(&c, &h).unwrap();
        let m = match_nearest(&fit.current, &fit.historical, MatchPolicy::WithReplacement, None).unwrap();
        let report = balance_report(&fit.model, &c, &h, &m);
        assert_eq!(report.len(), fit.model.encoder.columns.len());
        assert!(report.iter().all(|r| r.smd_before.abs() < 1e-12));
    }

    fn random_instance(seed: u64, n: usize, m: usize) -> (Vec<Scored>, Vec<Scored>, rand_chacha::ChaCha8Rng) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = (0..n)
            .map(|i| Scored { respondent_id: format!("c{i:02}"), score: rng.random() })
            .collect();
        let h = (0..m)
            .map(|i| Scored { respondent_id: format!("h{i:02}"), score: rng.random() })
            .collect();
        (c, h, rng)
    }

    fn random_costs(c: &[Scored], h: &[Scored], rng: &mut rand_chacha::ChaCha8Rng, draws: usize) -> Vec<f64> {
        use rand::seq::SliceRandom;
        (0..draws)
            .map(|_| {
                let mut perm: Vec<usize> = (0..h.len()).collect();
                perm.shuffle(rng);
                c.iter().zip(&perm).map(|(ci, hi)| (ci.score - h[*hi].score).abs()).sum()
            })
            .collect()
    }

    #[test]
    fn greedy_beats_random_permutations() {
        // Pools with spare capacity: 10-20 current against 40 historical.
        for seed in 0..100u64 {
            let n = 10 + (seed % 11) as usize;
            let (c, h, mut rng) = random_instance(seed, n, 40);
            let greedy = match_nearest(&c, &h, MatchPolicy::WithoutReplacement, None).unwrap();
            assert_eq!(greedy.pairs.len(), n);
            let ids: BTreeSet<&str> = greedy.pairs.iter().map(|p| p.historical_id.as_str()).collect();
            assert_eq!(ids.len(), n);
            for cost in random_costs(&c, &h, &mut rng, 100) {
                assert!(greedy.total_gap() <= cost + 1e-12, "seed {seed}");
            }
        }
    }

    #[test]
    fn greedy_can_lose_when_pool_is_exhausted() {
        // With equal roster sizes the last respondent served takes whatever
        // is left; the crossed assignment (0.6 -> 1.0, 0.55 -> 0.58) costs
        // 0.43 against greedy's 0.47.
        let c = scored(&[("a", 0.6), ("b", 0.55)]);
        let h = scored(&[("x", 0.58), ("y", 1.0)]);
        let greedy = match_nearest(&c, &h, MatchPolicy::WithoutReplacement, None).unwrap();
        assert!((greedy.total_gap() - 0.47).abs() < 1e-12);
        let crossed = (0.6f64 - 1.0).abs() + (0.55f64 - 0.58).abs();
        assert!(crossed < greedy.total_gap());
    }

    proptest! {
        #[test]
        fn scores_in_open_unit_interval(ages in proptest::collection::vec(18u32..90, 8..30), split in 3usize..5) {
            let roster: Vec<_> = ages.iter().enumerate()
                .map(|(i, a)| person(&format!("p{i}"), *a, if i % 2 == 0 { Gender::Male } else { Gender::Female }, (i % 9) as u8, 1 + (i % 3) as u8, 1 + (i % 4) as u8, (i % 11) as u8))
                .collect();
            let k = roster.len() / split;
            let cur = sample("c", roster[..k.max(1)].to_vec());
            let hist = sample("h", roster[k.max(1)..].to_vec());
            if let Ok(fit) = fit_propensity(&cur, &hist) {
                for s in fit.current.iter().chain(&fit.historical) {
                    prop_assert!(s.score > 0.0 && s.score < 1.0);
                }
            }
        }

        #[test]
        fn invariant_to_historical_order(
            cur in proptest::collection::vec(0u8..20, 1..15),
            hist in proptest::collection::vec(0u8..20, 1..15),
            rot in 0usize..15,
        ) {
            // Coarse scores force many ties.
            let c: Vec<Scored> = cur.iter().enumerate().map(|(i, s)| Scored { respondent_id: format!("c{i:02}"), score: *s as f64 / 20.0 }).collect();
            let h: Vec<Scored> = hist.iter().enumerate().map(|(i, s)| Scored { respondent_id: format!("h{i:02}"), score: *s as f64 / 20.0 }).collect();
            let mut h2 = h.clone();
            h2.reverse();
            let r = rot % h2.len();
            h2.rotate_left(r);
            for policy in [MatchPolicy::WithReplacement, MatchPolicy::WithoutReplacement] {
                prop_assert_eq!(
                    match_nearest(&c, &h, policy, None).unwrap(),
                    match_nearest(&c, &h2, policy, None).unwrap()
                );
            }
        }
    }
}
