//! Seeded synthetic samples for demos, tests and benchmarks.
//!
//! Answers depend on a latent score built from age, education and income,
//! so respondents with similar demographics answer alike in both waves and
//! matching on demographics carries real signal.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    write_sample, Catalog, DataError, DemographicProfile, Gender, ResponseVector, Schema, SurveySample,
};
use crate::region::{Country, CN_PROVINCES, US_STATES};

/// Share of answers left blank.
pub const MISSING_RATE: f64 = 0.02;

fn region(country: Country, rng: &mut ChaCha8Rng) -> String {
    match country {
        Country::US => US_STATES[rng.random_range(0..US_STATES.len())].0.to_string(),
        Country::CN => CN_PROVINCES[rng.random_range(0..CN_PROVINCES.len())].to_string(),
        _ => format!("Region {}", rng.random_range(1..=8)),
    }
}

fn latent(p: &DemographicProfile) -> f64 {
    let age = p.age.unwrap_or(45) as f64;
    let edu = p.education.unwrap_or(4) as f64;
    let inc = p.income.unwrap_or(5) as f64;
    (age - 45.0) / 20.0 - (edu - 4.0) / 3.0 + (inc - 5.0) / 6.0
}

/// Likert answer for one respondent: the latent score shifted per question
/// and wave, plus noise, rounded onto the scale.
fn answer(p: &DemographicProfile, q: usize, lo: i64, hi: i64, shift: f64, rng: &mut ChaCha8Rng) -> f64 {
    let span = (hi - lo) as f64;
    let sign = if q.is_multiple_of(2) { 1.0 } else { -1.0 };
    let centre = lo as f64 + span * (0.35 + 0.05 * (q % 5) as f64);
    let x = centre + sign * latent(p) * span / 6.0 + shift * span + rng.random_range(-0.5..0.5) * span / 3.0;
    x.round().clamp(lo as f64, hi as f64)
}

/// WVS-schema sample for wave 6 or 7. Wave 6 only carries the questions
/// flagged for it in `catalog`, skews older, and answers slightly higher.
pub fn wvs_sample(country: Country, wave: u8, n: usize, seed: u64, catalog: &Catalog) -> SurveySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((wave as u64) << 32));
    let older = if wave == 6 { 5 } else { 0 };
    let roster: Vec<DemographicProfile> = (0..n)
        .map(|i| DemographicProfile {
            respondent_id: format!("{}{wave}-{i:05}", country.code()),
            age: Some(rng.random_range(18..=80) + older),
            gender: Some(if rng.random_bool(0.5) { Gender::Male } else { Gender::Female }),
            region: region(country, &mut rng),
            education: Some(rng.random_range(0..=8)),
            marital_status: Some(rng.random_range(1..=6)),
            occupation: Some(rng.random_range(1..=14)),
            income: Some(rng.random_range(0..=10)),
            ethnicity: None,
            religion: None,
            political_attention: None,
            sampling_weight: 1.0,
        })
        .collect();
    let shift = if wave == 6 { 0.05 } else { 0.0 };
    let mut responses = BTreeMap::new();
    for (k, q) in catalog.iter().enumerate() {
        let asked = if wave == 6 { q.in_wave6 } else { q.in_wave7 };
        if !asked {
            continue;
        }
        let values = roster
            .iter()
            .map(|p| {
                let v = answer(p, k, q.scale_min, q.scale_max, shift, &mut rng);
                (!rng.random_bool(MISSING_RATE)).then_some(v)
            })
            .collect();
        responses.insert(q.question_id.clone(), ResponseVector::new(q.question_id.clone(), values));
    }
    SurveySample {
        sample_id: format!("WVS{wave}-{}", country.code()),
        country,
        schema: Schema::Wvs,
        roster,
        responses,
    }
}

/// ANES-schema sample with no response columns. The first 51 respondents
/// cover every state so state tallies are complete.
pub fn anes_sample(n: usize, seed: u64) -> SurveySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roster = (0..n)
        .map(|i| {
            let state = if i < US_STATES.len() {
                US_STATES[i].0.to_string()
            } else {
                US_STATES[rng.random_range(0..US_STATES.len())].0.to_string()
            };
            DemographicProfile {
                respondent_id: format!("A-{i:05}"),
                age: Some(rng.random_range(18..=85)),
                gender: Some(if rng.random_bool(0.5) { Gender::Male } else { Gender::Female }),
                region: state,
                education: Some(rng.random_range(1..=8)),
                marital_status: Some(rng.random_range(1..=6)),
                occupation: Some(rng.random_range(1..=9)),
                income: Some(rng.random_range(1..=22)),
                ethnicity: Some(rng.random_range(1..=6)),
                religion: Some(rng.random_range(1..=12)),
                political_attention: Some(rng.random_range(1..=5)),
                sampling_weight: (rng.random_range(0.3..3.0f64) * 1000.0).round() / 1000.0,
            }
        })
        .collect();
    SurveySample {
        sample_id: "ANES".into(),
        country: Country::US,
        schema: Schema::Anes,
        roster,
        responses: BTreeMap::new(),
    }
}

/// Writes `sample` as canonical CSV at `path`.
pub fn write_sample_file(sample: &SurveySample, path: &Path) -> Result<(), DataError> {
    let f = std::fs::File::create(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_sample(sample, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_sample, LoadOptions};

    #[test]
    fn samples_load_back() {
        let catalog = Catalog::wvs_default();
        for wave in [6, 7] {
            let s = wvs_sample(Country::CN, wave, 50, 3, &catalog);
            let mut buf = Vec::new();
            write_sample(&s, &mut buf).unwrap();
            let opts = LoadOptions::new(s.sample_id.clone(), Country::CN, Schema::Wvs);
            assert_eq!(read_sample(buf.as_slice(), &opts, &catalog).unwrap(), s);
        }
        let a = anes_sample(60, 1);
        let mut buf = Vec::new();
        write_sample(&a, &mut buf).unwrap();
        let opts = LoadOptions::new("ANES", Country::US, Schema::Anes);
        assert_eq!(read_sample(buf.as_slice(), &opts, &catalog).unwrap(), a);
    }

    #[test]
    fn wave_six_skips_new_questions() {
        let catalog = Catalog::wvs_default();
        let s = wvs_sample(Country::US, 6, 10, 1, &catalog);
        assert!(s.responses.contains_key("theft"));
        assert!(!s.responses.contains_key("terrorism"));
        assert_eq!(s, wvs_sample(Country::US, 6, 10, 1, &catalog));
    }
}
