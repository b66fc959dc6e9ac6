//! State tallies, share blending and winner-take-all electoral votes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SurveySample;
use crate::region::canonical_us_state;

/// Electoral votes in a complete map.
pub const TOTAL_EV: u32 = 538;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("no votes to tally")]
    NoVotes,
    #[error("respondent `{0}` voted but is not in the sample")]
    UnknownRespondent(String),
    #[error("state sets differ: missing {missing:?}, unexpected {unexpected:?}")]
    StateSetMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("no share for state `{0}`")]
    MissingState(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("cannot compare cycle {pred} ({pred_version:?}) with cycle {actual} ({actual_version:?})")]
    CycleMismatch {
        pred: u16,
        pred_version: EvTableVersion,
        actual: u16,
        actual_version: EvTableVersion,
    },
    #[error("weight {0} is outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("share {0} is outside [0, 1]")]
    ShareOutOfRange(f64),
    #[error("invalid electoral-vote table: {0}")]
    InvalidEvTable(String),
    #[error("no historical shares for cycle {0}")]
    NoHistory(u16),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T, E = ForecastError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    #[serde(rename = "D")]
    Democratic,
    #[serde(rename = "R")]
    Republican,
}

impl Party {
    pub fn code(self) -> &'static str {
        match self {
            Party::Democratic => "D",
            Party::Republican => "R",
        }
    }

    pub fn from_code(s: &str) -> Option<Party> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D" | "DEM" | "DEMOCRATIC" => Some(Party::Democratic),
            "R" | "REP" | "REPUBLICAN" => Some(Party::Republican),
            _ => None,
        }
    }

    pub fn other(self) -> Party {
        match self {
            Party::Democratic => Party::Republican,
            Party::Republican => Party::Democratic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvTableVersion {
    Census2010,
    Census2020,
}

impl EvTableVersion {
    /// Apportionment in force for a presidential cycle.
    pub fn for_cycle(cycle: u16) -> Self {
        if cycle >= 2024 {
            EvTableVersion::Census2020
        } else {
            EvTableVersion::Census2010
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            EvTableVersion::Census2010 => "census2010",
            EvTableVersion::Census2020 => "census2020",
        }
    }
}

const EV_2010: &str = include_str!("../data/ev_census2010.csv");
const EV_2020: &str = include_str!("../data/ev_census2020.csv");
const HISTORICAL_SHARES: &str = include_str!("../data/historical_shares.csv");

/// Electoral votes per state.
#[derive(Debug, Clone, PartialEq)]
pub struct EvTable {
    pub version: EvTableVersion,
    pub votes: BTreeMap<String, u32>,
}

#[derive(Debug, Deserialize)]
struct EvRow {
    state: String,
    ev: u32,
    version: String,
}

impl EvTable {
    pub fn bundled(version: EvTableVersion) -> Self {
        let src = match version {
            EvTableVersion::Census2010 => EV_2010,
            EvTableVersion::Census2020 => EV_2020,
        };
        Self::read(src.as_bytes(), version).expect("bundled EV table is valid")
    }

    pub fn for_cycle(cycle: u16) -> Self {
        Self::bundled(EvTableVersion::for_cycle(cycle))
    }

    /// Reads `state,ev,version` rows, keeping those of `version`. The table
    /// must cover all 50 states and DC and sum to 538.
    pub fn read<R: Read>(reader: R, version: EvTableVersion) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut votes = BTreeMap::new();
        for row in rdr.deserialize::<EvRow>() {
            let row = row?;
            if row.version != version.as_str() {
                continue;
            }
            let state = canonical_us_state(&row.state)
                .ok_or_else(|| ForecastError::UnknownState(row.state.clone()))?;
            if votes.insert(state.to_string(), row.ev).is_some() {
                return Err(ForecastError::InvalidEvTable(format!("duplicate row for {state}")));
            }
        }
        let total: u32 = votes.values().sum();
        if votes.len() != 51 || total != TOTAL_EV {
            return Err(ForecastError::InvalidEvTable(format!(
                "{} states summing to {total}",
                votes.len()
            )));
        }
        Ok(EvTable { version, votes })
    }

    pub fn load(path: &Path, version: EvTableVersion) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| ForecastError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::read(f, version)
    }
}

/// Weighted two-party result for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTally {
    pub state: String,
    pub cycle: u16,
    pub dem_share: f64,
    pub rep_share: f64,
    pub effective_n: f64,
}

impl StateTally {
    pub fn from_dem_share(state: impl Into<String>, cycle: u16, dem_share: f64, effective_n: f64) -> Self {
        StateTally {
            state: state.into(),
            cycle,
            dem_share,
            rep_share: 1.0 - dem_share,
            effective_n,
        }
    }

    /// Winner under a strict majority of the two-party vote; `None` on an
    /// exact tie.
    pub fn winner(&self) -> Option<Party> {
        winner_of(self.dem_share)
    }
}

/// Strict two-party majority winner for a Democratic share.
pub fn winner_of(dem_share: f64) -> Option<Party> {
    if dem_share > 0.5 {
        Some(Party::Democratic)
    } else if dem_share < 0.5 {
        Some(Party::Republican)
    } else {
        None
    }
}

/// Sums sampling weights per state and party. Respondents are looked up by
/// id; the state is the respondent's region.
pub fn tally_states(votes: &BTreeMap<String, Party>, sample: &SurveySample, cycle: u16) -> Result<Vec<StateTally>> {
    if votes.is_empty() {
        return Err(ForecastError::NoVotes);
    }
    let by_id: BTreeMap<&str, &crate::data::DemographicProfile> = sample
        .roster
        .iter()
        .map(|p| (p.respondent_id.as_str(), p))
        .collect();
    // state -> (dem weight, total weight)
    let mut sums: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for (id, party) in votes {
        let p = by_id
            .get(id.as_str())
            .ok_or_else(|| ForecastError::UnknownRespondent(id.clone()))?;
        let e = sums.entry(p.region.clone()).or_insert((0.0, 0.0));
        if *party == Party::Democratic {
            e.0 += p.sampling_weight;
        }
        e.1 += p.sampling_weight;
    }
    Ok(sums
        .into_iter()
        .map(|(state, (dem, total))| StateTally::from_dem_share(state, cycle, dem / total, total))
        .collect())
}

/// Convex blend of two vote shares.
pub fn combine_vote_share(h: f64, hist_share: f64, llm_share: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&h) {
        return Err(ForecastError::WeightOutOfRange(h));
    }
    for s in [hist_share, llm_share] {
        if !(0.0..=1.0).contains(&s) {
            return Err(ForecastError::ShareOutOfRange(s));
        }
    }
    Ok(h * hist_share + (1.0 - h) * llm_share)
}

/// Recovers the model share from a blended share: the inverse of
/// [`combine_vote_share`] for `h < 1`.
pub fn implied_llm_share(h: f64, hist_share: f64, combined: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&h) {
        return Err(ForecastError::WeightOutOfRange(h));
    }
    Ok((combined - h * hist_share) / (1.0 - h))
}

fn state_set_check<'a>(a: impl Iterator<Item = &'a str>, b: impl Iterator<Item = &'a str>) -> Result<()> {
    let a: BTreeSet<&str> = a.collect();
    let b: BTreeSet<&str> = b.collect();
    if a != b {
        return Err(ForecastError::StateSetMismatch {
            missing: a.difference(&b).map(|s| s.to_string()).collect(),
            unexpected: b.difference(&a).map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

/// Blends historical and model tallies state by state.
pub fn forecast_shares(h: f64, hist: &[StateTally], llm: &[StateTally]) -> Result<Vec<StateTally>> {
    if !(0.0..=1.0).contains(&h) {
        return Err(ForecastError::WeightOutOfRange(h));
    }
    state_set_check(
        hist.iter().map(|t| t.state.as_str()),
        llm.iter().map(|t| t.state.as_str()),
    )?;
    let hist_by: BTreeMap<&str, &StateTally> = hist.iter().map(|t| (t.state.as_str(), t)).collect();
    let mut out: Vec<StateTally> = llm
        .iter()
        .map(|l| {
            let hs = hist_by[l.state.as_str()];
            let dem = combine_vote_share(h, hs.dem_share, l.dem_share)?;
            Ok(StateTally::from_dem_share(l.state.clone(), l.cycle, dem, l.effective_n))
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.state.cmp(&b.state));
    Ok(out)
}

/// Electoral map for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectoralOutcome {
    pub cycle: u16,
    pub ev_table_version: EvTableVersion,
    pub per_state_winner: BTreeMap<String, Party>,
    pub dem_ev: u32,
    pub rep_ev: u32,
    /// States whose two-party share was exactly 0.5; their electors are
    /// not assigned.
    pub ties: Vec<String>,
}

/// Winner-take-all allocation, Maine and Nebraska included.
pub fn allocate_electors(shares: &[StateTally], ev_table: &EvTable) -> Result<ElectoralOutcome> {
    let cycle = shares.first().map(|s| s.cycle).unwrap_or(0);
    let by_state: BTreeMap<&str, &StateTally> = shares.iter().map(|t| (t.state.as_str(), t)).collect();
    for s in by_state.keys() {
        if !ev_table.votes.contains_key(*s) {
            return Err(ForecastError::UnknownState(s.to_string()));
        }
    }
    let mut winners = BTreeMap::new();
    let mut ties = Vec::new();
    for state in ev_table.votes.keys() {
        let t = by_state
            .get(state.as_str())
            .ok_or_else(|| ForecastError::MissingState(state.clone()))?;
        match t.winner() {
            Some(p) => {
                winners.insert(state.clone(), p);
            }
            None => {
                log::warn!("exact tie in {state}; electors left unassigned");
                ties.push(state.clone());
            }
        }
    }
    Ok(outcome_from_winners(cycle, winners, ties, ev_table))
}

/// Builds an outcome from known state winners (for example, official
/// results).
pub fn outcome_from_winners(
    cycle: u16,
    per_state_winner: BTreeMap<String, Party>,
    ties: Vec<String>,
    ev_table: &EvTable,
) -> ElectoralOutcome {
    let mut dem_ev = 0;
    let mut rep_ev = 0;
    for (state, party) in &per_state_winner {
        let ev = ev_table.votes.get(state).copied().unwrap_or(0);
        match party {
            Party::Democratic => dem_ev += ev,
            Party::Republican => rep_ev += ev,
        }
    }
    ElectoralOutcome {
        cycle,
        ev_table_version: ev_table.version,
        per_state_winner,
        dem_ev,
        rep_ev,
        ties,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapComparison {
    pub mispredicted: Vec<String>,
    pub ev_error: u32,
}

/// States called differently, alphabetically, and the Democratic EV gap.
pub fn compare_maps(pred: &ElectoralOutcome, actual: &ElectoralOutcome) -> Result<MapComparison> {
    if pred.cycle != actual.cycle || pred.ev_table_version != actual.ev_table_version {
        return Err(ForecastError::CycleMismatch {
            pred: pred.cycle,
            pred_version: pred.ev_table_version,
            actual: actual.cycle,
            actual_version: actual.ev_table_version,
        });
    }
    let states: BTreeSet<&String> = pred
        .per_state_winner
        .keys()
        .chain(actual.per_state_winner.keys())
        .chain(pred.ties.iter())
        .chain(actual.ties.iter())
        .collect();
    let mispredicted = states
        .into_iter()
        .filter(|s| pred.per_state_winner.get(*s) != actual.per_state_winner.get(*s))
        .cloned()
        .collect();
    Ok(MapComparison {
        mispredicted,
        ev_error: pred.dem_ev.abs_diff(actual.dem_ev),
    })
}

/// Official two-party result for one state and cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalShare {
    pub state: String,
    pub cycle: u16,
    pub dem_share: f64,
    pub rep_share: f64,
}

/// Reads `state,cycle,dem_share,rep_share`. Shares are renormalized to the
/// two-party total.
pub fn read_historical_shares<R: Read>(reader: R) -> Result<Vec<HistoricalShare>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<HistoricalShare>() {
        let mut row = row?;
        row.state = canonical_us_state(&row.state)
            .ok_or_else(|| ForecastError::UnknownState(row.state.clone()))?
            .to_string();
        let total = row.dem_share + row.rep_share;
        if !(total > 0.0) || row.dem_share < 0.0 || row.rep_share < 0.0 {
            return Err(ForecastError::ShareOutOfRange(row.dem_share));
        }
        row.dem_share /= total;
        row.rep_share = 1.0 - row.dem_share;
        out.push(row);
    }
    Ok(out)
}

pub fn load_historical_shares(path: &Path) -> Result<Vec<HistoricalShare>> {
    let f = std::fs::File::open(path).map_err(|e| ForecastError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    read_historical_shares(f)
}

/// Bundled 2016, 2020 and 2024 two-party results (rounded).
pub fn bundled_historical_shares() -> Vec<HistoricalShare> {
    read_historical_shares(HISTORICAL_SHARES.as_bytes()).expect("bundled shares are valid")
}

/// Per-state mean Democratic share over `cycles`, reported for `target_cycle`.
pub fn historical_baseline(shares: &[HistoricalShare], cycles: &[u16], target_cycle: u16) -> Result<Vec<StateTally>> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for c in cycles {
        let rows: Vec<&HistoricalShare> = shares.iter().filter(|s| s.cycle == *c).collect();
        if rows.is_empty() {
            return Err(ForecastError::NoHistory(*c));
        }
        for r in rows {
            let e = acc.entry(r.state.as_str()).or_insert((0.0, 0));
            e.0 += r.dem_share;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(state, (sum, n))| {
            if n != cycles.len() {
                return Err(ForecastError::MissingState(state.to_string()));
            }
            Ok(StateTally::from_dem_share(state, target_cycle, sum / n as f64, 0.0))
        })
        .collect()
}

/// Official winners for `cycle`, keyed by state.
pub fn actual_winners(shares: &[HistoricalShare], cycle: u16) -> BTreeMap<String, Party> {
    shares
        .iter()
        .filter(|s| s.cycle == cycle)
        .filter_map(|s| {
            let t = StateTally::from_dem_share(s.state.clone(), cycle, s.dem_share, 0.0);
            t.winner().map(|w| (s.state.clone(), w))
        })
        .collect()
}

/// Appendix-style row: raw percentages for one state.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PercentRow {
    pub state: String,
    pub dem_pct: f64,
    pub rep_pct: f64,
}

/// Reads `state,dem_pct,rep_pct` rows into two-party tallies.
pub fn read_percent_table<R: Read>(reader: R, cycle: u16) -> Result<Vec<StateTally>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<PercentRow>() {
        let row = row?;
        let state = canonical_us_state(&row.state).ok_or_else(|| ForecastError::UnknownState(row.state.clone()))?;
        let total = row.dem_pct + row.rep_pct;
        out.push(StateTally::from_dem_share(state, cycle, row.dem_pct / total, 0.0));
    }
    out.sort_by(|a, b| a.state.cmp(&b.state));
    Ok(out)
}

pub fn read_tallies<R: Read>(reader: R) -> Result<Vec<StateTally>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    rdr.deserialize::<StateTally>()
        .map(|r| {
            let mut t = r?;
            t.state = canonical_us_state(&t.state)
                .ok_or_else(|| ForecastError::UnknownState(t.state.clone()))?
                .to_string();
            Ok(t)
        })
        .collect()
}
