//! Comparison statistics between synthetic and human responses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::data::ResponseVector;

pub const DEFAULT_BOOTSTRAP: usize = 10_000;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("`{0}` has no observed values")]
    AllMissing(String),
    #[error("vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, have {have}")]
    InsufficientData { need: usize, have: usize },
    #[error("`{0}` has zero variance")]
    ZeroVariance(String),
    #[error("{0}")]
    InvalidArgument(String),
}

type Result<T, E = StatsError> = std::result::Result<T, E>;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator), two-pass.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n_used: usize,
}

pub fn mean_sd(v: &ResponseVector) -> Result<MeanSd> {
    let xs: Vec<f64> = v.observed().collect();
    if xs.is_empty() {
        return Err(StatsError::AllMissing(v.question_id.clone()));
    }
    Ok(MeanSd {
        mean: mean(&xs),
        sd: sample_variance(&xs).sqrt(),
        n_used: xs.len(),
    })
}

fn check_len(a: &ResponseVector, b: &ResponseVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Rows observed in every vector, as columns.
fn joint(vs: &[&ResponseVector]) -> Vec<Vec<f64>> {
    let n = vs[0].len();
    let mut cols = vec![Vec::new(); vs.len()];
    for i in 0..n {
        if let Some(row) = vs.iter().map(|v| v.values[i]).collect::<Option<Vec<f64>>>() {
            for (c, x) in cols.iter_mut().zip(row) {
                c.push(x);
            }
        }
    }
    cols
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MadMode {
    /// `|mean(synth) - mean(human)|`.
    #[default]
    MeanGap,
    /// `mean(|synth_i - human_i|)`.
    PerRespondent,
}

impl std::str::FromStr for MadMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_gap" | "mean-gap" => Ok(MadMode::MeanGap),
            "per_respondent" | "per-respondent" => Ok(MadMode::PerRespondent),
            other => Err(format!("unknown MAD mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mad {
    pub mad: f64,
    /// `mean(synth) - mean(human)`.
    pub signed_gap: f64,
    pub n_used: usize,
}

fn mad_of(synth: &[f64], human: &[f64], mode: MadMode) -> f64 {
    match mode {
        MadMode::MeanGap => (mean(synth) - mean(human)).abs(),
        MadMode::PerRespondent => {
            synth.iter().zip(human).map(|(s, h)| (s - h).abs()).sum::<f64>() / synth.len() as f64
        }
    }
}

/// Deviation between synthetic and human answers over jointly observed rows.
pub fn mad(synth: &ResponseVector, human: &ResponseVector, mode: MadMode) -> Result<Mad> {
    check_len(synth, human)?;
    let cols = joint(&[synth, human]);
    if cols[0].is_empty() {
        return Err(StatsError::AllMissing(human.question_id.clone()));
    }
    Ok(Mad {
        mad: mad_of(&cols[0], &cols[1], mode),
        signed_gap: mean(&cols[0]) - mean(&cols[1]),
        n_used: cols[0].len(),
    })
}

/// Two-sided paired-bootstrap p-value for `mad(a, human) - mad(b, human)`.
///
/// Rows observed in all three vectors are resampled with replacement `b`
/// times. The p-value is twice the share of resampled statistics on the
/// other side of zero from the point estimate (zero counts as the other
/// side), capped at 1. A zero estimate gives 1.
pub fn mad_significance(
    a: &ResponseVector,
    b: &ResponseVector,
    human: &ResponseVector,
    mode: MadMode,
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    check_len(a, human)?;
    check_len(b, human)?;
    if resamples == 0 {
        return Err(StatsError::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let cols = joint(&[a, b, human]);
    let n = cols[0].len();
    if n == 0 {
        return Err(StatsError::AllMissing(human.question_id.clone()));
    }
    let stat = |ra: &[f64], rb: &[f64], rh: &[f64]| mad_of(ra, rh, mode) - mad_of(rb, rh, mode);
    let estimate = stat(&cols[0], &cols[1], &cols[2]);
    if estimate == 0.0 {
        return Ok(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ra, mut rb, mut rh) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut against = 0usize;
    for _ in 0..resamples {
        for j in 0..n {
            let i = rng.random_range(0..n);
            ra[j] = cols[0][i];
            rb[j] = cols[1][i];
            rh[j] = cols[2][i];
        }
        let s = stat(&ra, &rb, &rh);
        if s * estimate.signum() <= 0.0 {
            against += 1;
        }
    }
    Ok((2.0 * against as f64 / resamples as f64).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stars {
    #[serde(rename = "ns")]
    None,
    #[serde(rename = "*")]
    One,
    #[serde(rename = "**")]
    Two,
    #[serde(rename = "***")]
    Three,
}

impl Stars {
    /// 10%, 5% and 1% thresholds.
    pub fn from_p(p: f64) -> Stars {
        if p < 0.01 {
            Stars::Three
        } else if p < 0.05 {
            Stars::Two
        } else if p < 0.10 {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "ns",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

/// One row of the MAD comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadRow {
    pub question_id: String,
    pub mad_llm: f64,
    pub mad_matching: f64,
    pub difference: f64,
    pub p_value: f64,
    pub stars: Stars,
    pub gap_llm: f64,
    pub gap_matching: f64,
}

pub fn mad_row(
    llm: &ResponseVector,
    matching: &ResponseVector,
    human: &ResponseVector,
    mode: MadMode,
    resamples: usize,
    seed: u64,
) -> Result<MadRow> {
    let a = mad(llm, human, mode)?;
    let b = mad(matching, human, mode)?;
    let p = mad_significance(llm, matching, human, mode, resamples, seed)?;
    Ok(MadRow {
        question_id: human.question_id.clone(),
        mad_llm: a.mad,
        mad_matching: b.mad,
        difference: a.mad - b.mad,
        p_value: p,
        stars: Stars::from_p(p),
        gap_llm: a.signed_gap,
        gap_matching: b.signed_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Welch {
    pub diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn t_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Welch two-sample t-test on observed values. When both samples have zero
/// variance the test degenerates: p is 0 if the means differ and 1
/// otherwise.
pub fn welch_t(x: &[f64], y: &[f64]) -> Result<Welch> {
    for s in [x, y] {
        if s.len() < 2 {
            return Err(StatsError::InsufficientData { need: 2, have: s.len() });
        }
    }
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let diff = mean(x) - mean(y);
    let (vx, vy) = (sample_variance(x) / nx, sample_variance(y) / ny);
    let se2 = vx + vy;
    if se2 == 0.0 {
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(diff), 0.0)
        };
        return Ok(Welch {
            diff,
            t,
            df: nx + ny - 2.0,
            p_value: p,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    Ok(Welch {
        diff,
        t,
        df,
        p_value: t_two_sided(t, df),
    })
}

/// Difference in means between two independent samples (first minus
/// second) with a Welch test.
pub fn cross_sample_diff(first: &ResponseVector, second: &ResponseVector) -> Result<Welch> {
    let x: Vec<f64> = first.observed().collect();
    let y: Vec<f64> = second.observed().collect();
    welch_t(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation over jointly observed rows; p from the t transform
/// with n - 2 degrees of freedom.
pub fn pairwise_correlation(a: &ResponseVector, b: &ResponseVector) -> Result<Correlation> {
    check_len(a, b)?;
    let cols = joint(&[a, b]);
    let (x, y) = (&cols[0], &cols[1]);
    let n = x.len();
    if n < 3 {
        return Err(StatsError::InsufficientData { need: 3, have: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance(a.question_id.clone()));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance(b.question_id.clone()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(Correlation { r, p_value: p, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementClass {
    CompleteAgreement,
    PartialDisagreement,
    CompleteDisagreement,
    BothInsignificant,
}

impl AgreementClass {
    pub fn as_str(self) -> &'static str {
        match self {
            AgreementClass::CompleteAgreement => "complete_agreement",
            AgreementClass::PartialDisagreement => "partial_disagreement",
            AgreementClass::CompleteDisagreement => "complete_disagreement",
            AgreementClass::BothInsignificant => "both_insignificant",
        }
    }
}

/// Classifies a human/synthetic correlation pair by sign and significance
/// at `alpha`.
pub fn agreement_class(human: (f64, f64), synth: (f64, f64), alpha: f64) -> AgreementClass {
    let sig_h = human.1 < alpha;
    let sig_s = synth.1 < alpha;
    match (sig_h, sig_s) {
        (true, true) if human.0.signum() == synth.0.signum() => AgreementClass::CompleteAgreement,
        (true, true) => AgreementClass::CompleteDisagreement,
        (false, false) => AgreementClass::BothInsignificant,
        _ => AgreementClass::PartialDisagreement,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub question_a: String,
    pub question_b: String,
    pub r_human: f64,
    pub p_human: f64,
    pub r_synth: f64,
    pub p_synth: f64,
    pub class: AgreementClass,
}

/// All question pairs `(i < j)` in input order. Pairs where either source
/// has a zero-variance or too-short column are skipped and returned
/// separately.
pub fn agreement_grid(
    human: &[ResponseVector],
    synth: &[ResponseVector],
    alpha: f64,
) -> Result<(Vec<AgreementCell>, Vec<(String, String)>)> {
    if human.len() != synth.len() {
        return Err(StatsError::LengthMismatch(human.len(), synth.len()));
    }
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..human.len() {
        for j in i + 1..human.len() {
            let h = pairwise_correlation(&human[i], &human[j]);
            let s = pairwise_correlation(&synth[i], &synth[j]);
            let ids = (human[i].question_id.clone(), human[j].question_id.clone());
            match (h, s) {
                (Ok(h), Ok(s)) => cells.push(AgreementCell {
                    question_a: ids.0,
                    question_b: ids.1,
                    r_human: h.r,
                    p_human: h.p_value,
                    r_synth: s.r,
                    p_synth: s.p_value,
                    class: agreement_class((h.r, h.p_value), (s.r, s.p_value), alpha),
                }),
                (Err(e @ StatsError::LengthMismatch(..)), _) | (_, Err(e @ StatsError::LengthMismatch(..))) => {
                    return Err(e)
                }
                _ => skipped.push(ids),
            }
        }
    }
    Ok((cells, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub complete_agreement: usize,
    pub partial_disagreement: usize,
    pub complete_disagreement: usize,
    pub both_insignificant: usize,
    pub total: usize,
}

pub fn agreement_summary(cells: &[AgreementCell]) -> AgreementSummary {
    let mut s = AgreementSummary::default();
    for c in cells {
        match c.class {
            AgreementClass::CompleteAgreement => s.complete_agreement += 1,
            AgreementClass::PartialDisagreement => s.partial_disagreement += 1,
            AgreementClass::CompleteDisagreement => s.complete_disagreement += 1,
            AgreementClass::BothInsignificant => s.both_insignificant += 1,
        }
        s.total += 1;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(xs: &[f64]) -> ResponseVector {
        ResponseVector::from_values("q", xs)
    }

    #[test]
    fn mean_sd_examples() {
        assert_eq!(mean_sd(&rv(&[2.0, 2.0, 2.0])).unwrap(), MeanSd { mean: 2.0, sd: 0.0, n_used: 3 });
        let m = mean_sd(&rv(&[1.0, 3.0])).unwrap();
        assert_eq!((m.mean, m.n_used), (2.0, 2));
        assert!((m.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(mean_sd(&ResponseVector::new("q", vec![None])), Err(StatsError::AllMissing(_))));
    }

    #[test]
    fn mad_modes_differ() {
        let s = rv(&[3.0, 3.0]);
        let h = rv(&[1.0, 5.0]);
        assert_eq!(mad(&s, &h, MadMode::MeanGap).unwrap().mad, 0.0);
        assert_eq!(mad(&s, &h, MadMode::PerRespondent).unwrap().mad, 2.0);
        assert_eq!(mad(&h, &h, MadMode::PerRespondent).unwrap().mad, 0.0);
        assert!(matches!(mad(&s, &rv(&[1.0]), MadMode::MeanGap), Err(StatsError::LengthMismatch(2, 1))));
    }

    #[test]
    fn mad_difference_fixture() {
        // Human mean 5.0; LLM mean 6.482; Matching mean 5.873.
        let human = rv(&[4.0, 6.0]);
        let llm = rv(&[6.482, 6.482]);
        let matching = rv(&[5.873, 5.873]);
        let row = mad_row(&llm, &matching, &human, MadMode::MeanGap, 1000, 1).unwrap();
        assert!((row.mad_llm - 1.482).abs() < 1e-12);
        assert!((row.mad_matching - 0.873).abs() < 1e-12);
        assert!((row.difference - 0.609).abs() < 1e-12);
    }

    #[test]
    fn identical_synthetics_give_p_one() {
        let a = rv(&[1.0, 2.0, 3.0, 4.0]);
        let h = rv(&[2.0, 2.0, 2.0, 5.0]);
        assert_eq!(mad_significance(&a, &a, &h, MadMode::MeanGap, 1000, 3).unwrap(), 1.0);
    }

    #[test]
    fn stars_thresholds() {
        assert_eq!(Stars::from_p(0.005), Stars::Three);
        assert_eq!(Stars::from_p(0.03), Stars::Two);
        assert_eq!(Stars::from_p(0.07), Stars::One);
        assert_eq!(Stars::from_p(0.5), Stars::None);
    }

    #[test]
    fn welch_examples() {
        let w = cross_sample_diff(&rv(&[1.0, 2.0, 3.0]), &rv(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(w.diff, 0.0);
        assert!((w.p_value - 1.0).abs() < 1e-12);
        let w = cross_sample_diff(&rv(&[5.0; 4]), &rv(&[1.0; 4])).unwrap();
        assert_eq!(w.diff, 4.0);
        assert!(w.p_value < 1e-12);
        assert!(matches!(
            cross_sample_diff(&rv(&[1.0]), &rv(&[1.0, 2.0])),
            Err(StatsError::InsufficientData { .. })
        ));
    }

    #[test]
    fn p_values_match_closed_form_tails() {
        // df = 2: two-sided p = 1 - |t| / sqrt(t^2 + 2).
        let w = welch_t(&[1.0, 3.0], &[4.0, 6.0]).unwrap();
        let t: f64 = -3.0 / 2f64.sqrt();
        assert!((w.t - t).abs() < 1e-12);
        assert!((w.df - 2.0).abs() < 1e-12);
        let p = 1.0 - t.abs() / (t * t + 2.0).sqrt();
        assert!((w.p_value - p).abs() < 1e-9, "{} vs {p}", w.p_value);

        // df = 1 (Cauchy): r = 0.5 gives t = 1/sqrt(3), p = 1 - (2/pi) atan(t) = 2/3.
        let c = pairwise_correlation(&rv(&[1.0, 2.0, 3.0]), &rv(&[1.0, 3.0, 2.0])).unwrap();
        assert!((c.r - 0.5).abs() < 1e-12);
        assert!((c.p_value - 2.0 / 3.0).abs() < 1e-9, "{}", c.p_value);
    }

    #[test]
    fn correlation_examples() {
        let a = rv(&[1.0, 2.0, 3.0]);
        assert_eq!(pairwise_correlation(&a, &a).unwrap().r, 1.0);
        assert_eq!(pairwise_correlation(&a, &rv(&[3.0, 2.0, 1.0])).unwrap().r, -1.0);
        assert!(matches!(pairwise_correlation(&a, &rv(&[2.0; 3])), Err(StatsError::ZeroVariance(_))));
        assert!(matches!(
            pairwise_correlation(&rv(&[1.0, 2.0]), &rv(&[1.0, 2.0])),
            Err(StatsError::InsufficientData { .. })
        ));
    }

    #[test]
    fn agreement_rules() {
        use AgreementClass::*;
        assert_eq!(agreement_class((0.3, 0.01), (0.4, 0.02), 0.05), CompleteAgreement);
        assert_eq!(agreement_class((0.3, 0.01), (0.1, 0.20), 0.05), PartialDisagreement);
        assert_eq!(agreement_class((0.3, 0.01), (-0.3, 0.01), 0.05), CompleteDisagreement);
        assert_eq!(agreement_class((0.3, 0.5), (-0.3, 0.6), 0.05), BothInsignificant);
        assert_eq!(agreement_summary(&[]), AgreementSummary::default());
    }

    #[test]
    fn grid_skips_constant_columns() {
        let human = vec![
            ResponseVector::from_values("a", &[1.0, 2.0, 3.0, 4.0]),
            ResponseVector::from_values("b", &[2.0, 1.0, 4.0, 3.0]),
            ResponseVector::from_values("c", &[1.0, 1.0, 2.0, 2.0]),
        ];
        let mut synth = human.clone();
        synth[2] = ResponseVector::from_values("c", &[3.0; 4]);
        let (cells, skipped) = agreement_grid(&human, &synth, 0.05).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(skipped, vec![("a".into(), "c".into()), ("b".into(), "c".into())]);
    }

    proptest! {
        #[test]
        fn agreement_symmetric_under_sign_flip(rh in -1.0f64..1.0, ph in 0.0f64..1.0, rs in -1.0f64..1.0, ps in 0.0f64..1.0) {
            prop_assert_eq!(
                agreement_class((rh, ph), (rs, ps), 0.05),
                agreement_class((-rh, ph), (-rs, ps), 0.05)
            );
        }

        #[test]
        fn statistics_permutation_invariant(rows in proptest::collection::vec((1.0f64..5.0, 1.0f64..5.0), 3..30), rot in 1usize..30) {
            let (a, b): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
            let r = rot % a.len();
            let (mut a2, mut b2) = (a.clone(), b.clone());
            a2.rotate_left(r);
            b2.rotate_left(r);
            for mode in [MadMode::MeanGap, MadMode::PerRespondent] {
                let x = mad(&rv(&a), &rv(&b), mode).unwrap().mad;
                let y = mad(&rv(&a2), &rv(&b2), mode).unwrap().mad;
                prop_assert!((x - y).abs() < 1e-12);
            }
            let x = mean_sd(&rv(&a)).unwrap();
            let y = mean_sd(&rv(&a2)).unwrap();
            prop_assert!((x.mean - y.mean).abs() < 1e-12 && (x.sd - y.sd).abs() < 1e-12);
            if let (Ok(x), Ok(y)) = (pairwise_correlation(&rv(&a), &rv(&b)), pairwise_correlation(&rv(&a2), &rv(&b2))) {
                prop_assert!((x.r - y.r).abs() < 1e-12);
            }
        }

        #[test]
        fn mean_gap_mad_is_convex_in_h(
            rows in proptest::collection::vec((1.0f64..5.0, 1.0f64..5.0, 1.0f64..5.0), 1..20),
            h1 in 0.0f64..1.0, h2 in 0.0f64..1.0,
        ) {
            use crate::calibration::combine_responses;
            let (a, (b, c)): (Vec<f64>, (Vec<f64>, Vec<f64>)) = rows.iter().map(|(a, b, c)| (*a, (*b, *c))).unzip();
            let f = |h: f64| mad(&combine_responses(h, &rv(&a), &rv(&b)).unwrap(), &rv(&c), MadMode::MeanGap).unwrap().mad;
            let mid = (h1 + h2) / 2.0;
            prop_assert!(f(mid) <= (f(h1) + f(h2)) / 2.0 + 1e-12);
        }
    }
}
