//! Input generators shared by the benchmarks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpoll_core::forecast::{Party, StateTally};
use vpoll_core::psm::Scored;
use vpoll_core::region::US_STATES;
use vpoll_core::ResponseVector;

pub fn scores(n: usize, prefix: &str, seed: u64) -> Vec<Scored> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Scored {
            respondent_id: format!("{prefix}{i:06}"),
            score: rng.random_range(0.01..0.99),
        })
        .collect()
}

/// `k` questions of `n` rows where human answers are an exact blend at `h`
/// plus uniform noise.
pub fn blend(n: usize, k: usize, h: f64, seed: u64) -> [Vec<ResponseVector>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: [Vec<ResponseVector>; 3] = Default::default();
    for q in 0..k {
        let id = format!("q{q}");
        let hist: Vec<f64> = (0..n).map(|_| rng.random_range(1..=5) as f64).collect();
        let llm: Vec<f64> = (0..n).map(|_| rng.random_range(1..=5) as f64).collect();
        let human = hist
            .iter()
            .zip(&llm)
            .map(|(a, b)| Some(h * a + (1.0 - h) * b + rng.random_range(-0.1..0.1)))
            .collect();
        out[0].push(ResponseVector::new(id.clone(), hist.into_iter().map(Some).collect()));
        out[1].push(ResponseVector::new(id.clone(), llm.into_iter().map(Some).collect()));
        out[2].push(ResponseVector::new(id, human));
    }
    out
}

/// Historical and model tallies for every state plus a random actual map.
pub fn states(seed: u64) -> (Vec<StateTally>, Vec<StateTally>, BTreeMap<String, Party>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = |s: &str| {
        let d = rng.random_range(0.3..0.7);
        StateTally {
            state: s.to_string(),
            cycle: 2024,
            dem_share: d,
            rep_share: 1.0 - d,
            effective_n: 100.0,
        }
    };
    let hist: Vec<StateTally> = US_STATES.iter().map(|s| tally(s.0)).collect();
    let llm: Vec<StateTally> = US_STATES.iter().map(|s| tally(s.0)).collect();
    let actual = US_STATES
        .iter()
        .map(|s| {
            let p = if rng.random_bool(0.5) { Party::Democratic } else { Party::Republican };
            (s.0.to_string(), p)
        })
        .collect();
    (hist, llm, actual)
}

/// Design matrix with an intercept column and a 0/1 response.
pub fn logistic_data(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = vec![1.0];
        row.extend((1..p).map(|_| rng.random_range(-1.0..1.0)));
        let z: f64 = row.iter().enumerate().map(|(j, v)| v * (j as f64 * 0.3 - 0.5)).sum();
        y.push(if rng.random::<f64>() < 1.0 / (1.0 + (-z).exp()) { 1.0 } else { 0.0 });
        x.push(row);
    }
    (x, y)
}
