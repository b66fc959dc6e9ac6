//! Respondent rosters, question catalogs and response matrices.
//!
//! Samples are read from UTF-8 CSV. The demographic columns depend on the
//! [`Schema`]; response columns are named `q_<question_id>` and must refer to
//! a question in the supplied [`Catalog`].

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::region::{canonical_region, Country};

/// Prefix of response columns in sample and response-matrix CSVs.
pub const RESPONSE_PREFIX: &str = "q_";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}, column `{column}`: {reason}")]
    MalformedRow {
        line: u64,
        column: String,
        reason: String,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: `{field}` value {value} is out of range")]
    CodeOutOfRange {
        line: u64,
        field: String,
        value: String,
    },
    #[error("line {line}: duplicate respondent id `{id}`")]
    DuplicateRespondentId { line: u64, id: String },
    #[error("unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("declared sample size {expected} but file has {found} rows")]
    SampleSizeMismatch { expected: usize, found: usize },
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Demographic coding scheme of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Wvs,
    Anes,
}

impl std::str::FromStr for Schema {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wvs" => Ok(Schema::Wvs),
            "anes" => Ok(Schema::Anes),
            other => Err(format!("unknown schema `{other}`")),
        }
    }
}

/// Inclusive code ranges for one schema.
#[derive(Debug, Clone, Copy)]
pub struct CodeRanges {
    pub education: (u8, u8),
    pub marital_status: (u8, u8),
    pub occupation: (u8, u8),
    pub income: (u8, u8),
    pub ethnicity: Option<(u8, u8)>,
    pub religion: Option<(u8, u8)>,
    pub political_attention: Option<(u8, u8)>,
}

impl Schema {
    pub const fn ranges(self) -> CodeRanges {
        match self {
            Schema::Wvs => CodeRanges {
                education: (0, 8),
                marital_status: (1, 6),
                occupation: (1, 14),
                income: (0, 10),
                ethnicity: None,
                religion: None,
                political_attention: None,
            },
            Schema::Anes => CodeRanges {
                education: (1, 8),
                marital_status: (1, 6),
                occupation: (1, 9),
                income: (1, 22),
                ethnicity: Some((1, 6)),
                religion: Some((1, 12)),
                political_attention: Some((1, 5)),
            },
        }
    }

    fn demographic_columns(self) -> &'static [&'static str] {
        match self {
            Schema::Wvs => &[
                "respondent_id",
                "age",
                "gender",
                "region",
                "education",
                "marital_status",
                "occupation",
                "income",
            ],
            Schema::Anes => &[
                "respondent_id",
                "age",
                "gender",
                "state",
                "education",
                "marital_status",
                "occupation",
                "income_cat",
                "ethnicity",
                "religion",
                "political_attention",
                "sampling_weight",
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    fn parse(raw: &str) -> Option<Gender> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "male" | "m" | "1" => Some(Gender::Male),
            "female" | "f" | "2" => Some(Gender::Female),
            _ => None,
        }
    }
}

/// One respondent's persona fields.
///
/// The six matching covariates are optional: blank cells are kept as `None`
/// so the respondent can be excluded from propensity matching instead of
/// failing the whole load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub respondent_id: String,
    pub age: Option<u32>,
    pub gender: Option<Gender>,
    pub region: String,
    pub education: Option<u8>,
    pub marital_status: Option<u8>,
    pub occupation: Option<u8>,
    pub income: Option<u8>,
    pub ethnicity: Option<u8>,
    pub religion: Option<u8>,
    pub political_attention: Option<u8>,
    pub sampling_weight: f64,
}

impl DemographicProfile {
    /// True when every propensity-matching covariate is present.
    pub fn has_complete_covariates(&self) -> bool {
        self.age.is_some()
            && self.gender.is_some()
            && self.education.is_some()
            && self.marital_status.is_some()
            && self.occupation.is_some()
            && self.income.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    SocialValues,
    Trust,
    CommonSense,
    Ethics,
    OutOfSample,
    Ballot,
}

impl Block {
    /// Scale every question in this block must use.
    pub const fn scale(self) -> (i64, i64) {
        match self {
            Block::SocialValues => (1, 5),
            Block::Trust => (1, 4),
            Block::CommonSense => (1, 3),
            Block::Ethics => (1, 10),
            Block::OutOfSample => (1, 4),
            Block::Ballot => (1, 2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Block::SocialValues => "social_values",
            Block::Trust => "trust",
            Block::CommonSense => "common_sense",
            Block::Ethics => "ethics",
            Block::OutOfSample => "out_of_sample",
            Block::Ballot => "ballot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Likert,
    MultipleChoice,
    BallotChoice,
}

/// A survey item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub question_id: String,
    pub short_label: String,
    pub block: Block,
    pub scale_min: i64,
    pub scale_max: i64,
    pub in_wave6: bool,
    pub in_wave7: bool,
    pub answer_kind: AnswerKind,
    /// Item wording shown to the model.
    #[serde(default)]
    pub text: String,
    /// Answer options for multiple-choice items, in code order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

impl QuestionSpec {
    pub fn in_range(&self, v: f64) -> bool {
        v >= self.scale_min as f64 && v <= self.scale_max as f64
    }

    pub fn span(&self) -> f64 {
        (self.scale_max - self.scale_min) as f64
    }
}

/// Ordered list of questions; position is the question index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog(Vec<QuestionSpec>);

const WVS_CATALOG_JSON: &str = include_str!("../data/wvs_catalog.json");

impl Catalog {
    pub fn new(questions: Vec<QuestionSpec>) -> Result<Self> {
        let c = Catalog(questions);
        c.validate()?;
        Ok(c)
    }

    /// The bundled WVS item catalog.
    pub fn wvs_default() -> Self {
        Self::from_json(WVS_CATALOG_JSON).expect("bundled catalog is valid")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let questions: Vec<QuestionSpec> = serde_json::from_str(s)?;
        Self::new(questions)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_json(&s)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for q in &self.0 {
            if !seen.insert(q.question_id.as_str()) {
                return Err(DataError::InvalidCatalog(format!(
                    "duplicate question id `{}`",
                    q.question_id
                )));
            }
            if q.scale_min >= q.scale_max {
                return Err(DataError::InvalidCatalog(format!(
                    "`{}`: scale_min must be below scale_max",
                    q.question_id
                )));
            }
            if (q.scale_min, q.scale_max) != q.block.scale() {
                return Err(DataError::InvalidCatalog(format!(
                    "`{}`: block {} uses scale {:?}",
                    q.question_id,
                    q.block.as_str(),
                    q.block.scale()
                )));
            }
        }
        Ok(())
    }

    pub fn questions(&self) -> &[QuestionSpec] {
        &self.0
    }

    pub fn get(&self, id: &str) -> Option<&QuestionSpec> {
        self.0.iter().find(|q| q.question_id == id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QuestionSpec> {
        self.0.iter()
    }

    /// Questions of `block`, in catalog order.
    pub fn block(&self, block: Block) -> Vec<&QuestionSpec> {
        self.0.iter().filter(|q| q.block == block).collect()
    }

    /// Keeps only the questions selected by `keep`, preserving order.
    pub fn filtered(&self, keep: impl Fn(&QuestionSpec) -> bool) -> Catalog {
        Catalog(self.0.iter().filter(|q| keep(q)).cloned().collect())
    }
}

impl<'a> IntoIterator for &'a Catalog {
    type Item = &'a QuestionSpec;
    type IntoIter = std::slice::Iter<'a, QuestionSpec>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Per-question answers aligned to a roster; `None` is a missing answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseVector {
    pub question_id: String,
    pub values: Vec<Option<f64>>,
}

impl ResponseVector {
    pub fn new(question_id: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        ResponseVector {
            question_id: question_id.into(),
            values,
        }
    }

    /// Convenience constructor for fully observed vectors.
    pub fn from_values(question_id: impl Into<String>, values: &[f64]) -> Self {
        Self::new(question_id, values.iter().copied().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    /// Reorders entries: output position `i` takes input position `index[i]`
    /// (`None` yields a missing entry).
    pub fn gather(&self, index: &[Option<usize>]) -> ResponseVector {
        ResponseVector {
            question_id: self.question_id.clone(),
            values: index
                .iter()
                .map(|i| i.and_then(|i| self.values[i]))
                .collect(),
        }
    }
}

/// Roster plus response matrix for one survey wave or election study.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveySample {
    pub sample_id: String,
    pub country: Country,
    pub schema: Schema,
    pub roster: Vec<DemographicProfile>,
    /// Keyed by question id; every vector has `roster.len()` entries.
    pub responses: BTreeMap<String, ResponseVector>,
}

impl SurveySample {
    pub fn n(&self) -> usize {
        self.roster.len()
    }

    pub fn response_vector(&self, question_id: &str) -> Result<&ResponseVector> {
        self.responses
            .get(question_id)
            .ok_or_else(|| DataError::UnknownQuestion(question_id.to_string()))
    }

    pub fn index_of(&self, respondent_id: &str) -> Option<usize> {
        self.roster
            .iter()
            .position(|p| p.respondent_id == respondent_id)
    }

    pub fn respondent_ids(&self) -> Vec<String> {
        self.roster.iter().map(|p| p.respondent_id.clone()).collect()
    }
}

/// Free-standing function form of [`SurveySample::response_vector`].
pub fn response_vector(sample: &SurveySample, question_id: &str) -> Result<ResponseVector> {
    sample.response_vector(question_id).cloned()
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub sample_id: String,
    pub country: Country,
    pub schema: Schema,
    /// Declared size of a canonical file; checked after loading.
    pub expected_n: Option<usize>,
}

impl LoadOptions {
    pub fn new(sample_id: impl Into<String>, country: Country, schema: Schema) -> Self {
        LoadOptions {
            sample_id: sample_id.into(),
            country,
            schema,
            expected_n: None,
        }
    }
}

pub fn load_sample(path: &Path, opts: &LoadOptions, catalog: &Catalog) -> Result<SurveySample> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_sample(file, opts, catalog)
}

fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("missing")
}

struct RowCtx<'a> {
    line: u64,
    record: &'a csv::StringRecord,
    header: &'a BTreeMap<String, usize>,
}

impl RowCtx<'_> {
    fn raw(&self, col: &str) -> Option<&str> {
        self.header
            .get(col)
            .and_then(|&i| self.record.get(i))
            .map(str::trim)
    }

    fn required_str(&self, col: &str) -> Result<String> {
        match self.raw(col) {
            Some(s) if !s.is_empty() => Ok(s.to_string()),
            _ => Err(DataError::MalformedRow {
                line: self.line,
                column: col.into(),
                reason: "value is required".into(),
            }),
        }
    }

    fn int(&self, col: &str) -> Result<Option<i64>> {
        match self.raw(col) {
            None => Ok(None),
            Some(s) if is_missing_token(s) => Ok(None),
            Some(s) => s.parse::<i64>().map(Some).map_err(|_| DataError::MalformedRow {
                line: self.line,
                column: col.into(),
                reason: format!("`{s}` is not an integer"),
            }),
        }
    }

    fn code(&self, col: &str, field: &str, range: (u8, u8)) -> Result<Option<u8>> {
        match self.int(col)? {
            None => Ok(None),
            Some(v) if v >= range.0 as i64 && v <= range.1 as i64 => Ok(Some(v as u8)),
            Some(v) => Err(DataError::CodeOutOfRange {
                line: self.line,
                field: field.into(),
                value: v.to_string(),
            }),
        }
    }
}

/// Reads a sample from any CSV source. See [`load_sample`].
pub fn read_sample<R: Read>(reader: R, opts: &LoadOptions, catalog: &Catalog) -> Result<SurveySample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let header: BTreeMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();

    for col in opts.schema.demographic_columns() {
        if !header.contains_key(*col) {
            return Err(DataError::MissingColumn((*col).to_string()));
        }
    }

    // Response columns, in file order.
    let mut response_cols: Vec<(usize, &QuestionSpec)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(qid) = h.strip_prefix(RESPONSE_PREFIX) {
            let spec = catalog
                .get(qid)
                .ok_or_else(|| DataError::UnknownQuestion(qid.to_string()))?;
            response_cols.push((i, spec));
        }
    }

    let ranges = opts.schema.ranges();
    let mut roster = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); response_cols.len()];
    let mut seen_ids = HashSet::new();

    for rec in rdr.records() {
        let record = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::MalformedRow {
                line,
                column: String::new(),
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let ctx = RowCtx {
            line,
            record: &record,
            header: &header,
        };

        let respondent_id = ctx.required_str("respondent_id")?;
        if !seen_ids.insert(respondent_id.clone()) {
            return Err(DataError::DuplicateRespondentId {
                line,
                id: respondent_id,
            });
        }

        let age = match ctx.int("age")? {
            None => None,
            Some(a) if (16..=130).contains(&a) => Some(a as u32),
            Some(a) => {
                return Err(DataError::CodeOutOfRange {
                    line,
                    field: "age".into(),
                    value: a.to_string(),
                })
            }
        };
        let gender = match ctx.raw("gender") {
            None => None,
            Some(s) if is_missing_token(s) => None,
            Some(s) => Some(Gender::parse(s).ok_or_else(|| DataError::CodeOutOfRange {
                line,
                field: "gender".into(),
                value: s.to_string(),
            })?),
        };
        let region_col = match opts.schema {
            Schema::Wvs => "region",
            Schema::Anes => "state",
        };
        let raw_region = ctx.required_str(region_col)?;
        let region = canonical_region(opts.country, &raw_region).ok_or_else(|| {
            DataError::CodeOutOfRange {
                line,
                field: region_col.into(),
                value: raw_region.clone(),
            }
        })?;
        let income_col = match opts.schema {
            Schema::Wvs => "income",
            Schema::Anes => "income_cat",
        };

        let optional_code = |col: &str, range: Option<(u8, u8)>| -> Result<Option<u8>> {
            match range {
                Some(r) => ctx.code(col, col, r),
                None => Ok(None),
            }
        };

        let sampling_weight = match ctx.raw("sampling_weight") {
            None | Some("") => 1.0,
            Some(s) => {
                let w: f64 = s.parse().map_err(|_| DataError::MalformedRow {
                    line,
                    column: "sampling_weight".into(),
                    reason: format!("`{s}` is not a number"),
                })?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(DataError::CodeOutOfRange {
                        line,
                        field: "sampling_weight".into(),
                        value: s.to_string(),
                    });
                }
                w
            }
        };

        roster.push(DemographicProfile {
            respondent_id,
            age,
            gender,
            region,
            education: ctx.code("education", "education", ranges.education)?,
            marital_status: ctx.code("marital_status", "marital_status", ranges.marital_status)?,
            occupation: ctx.code("occupation", "occupation", ranges.occupation)?,
            income: ctx.code(income_col, income_col, ranges.income)?,
            ethnicity: optional_code("ethnicity", ranges.ethnicity)?,
            religion: optional_code("religion", ranges.religion)?,
            political_attention: optional_code("political_attention", ranges.political_attention)?,
            sampling_weight,
        });

        for (slot, (col_idx, spec)) in response_cols.iter().enumerate() {
            let raw = record.get(*col_idx).unwrap_or("");
            columns[slot].push(parse_response_cell(raw, spec, line)?);
        }
    }

    if let Some(expected) = opts.expected_n {
        if expected != roster.len() {
            return Err(DataError::SampleSizeMismatch {
                expected,
                found: roster.len(),
            });
        }
    }

    let responses = response_cols
        .iter()
        .zip(columns)
        .map(|((_, spec), values)| {
            (
                spec.question_id.clone(),
                ResponseVector::new(spec.question_id.clone(), values),
            )
        })
        .collect();

    Ok(SurveySample {
        sample_id: opts.sample_id.clone(),
        country: opts.country,
        schema: opts.schema,
        roster,
        responses,
    })
}

/// Blank, `NA`, `MISSING` and negative survey codes (don't know, refused,
/// not asked) all map to a missing answer.
fn parse_response_cell(raw: &str, spec: &QuestionSpec, line: u64) -> Result<Option<f64>> {
    let t = raw.trim();
    if is_missing_token(t) {
        return Ok(None);
    }
    let v: f64 = t.parse().map_err(|_| DataError::MalformedRow {
        line,
        column: format!("{RESPONSE_PREFIX}{}", spec.question_id),
        reason: format!("`{t}` is not numeric"),
    })?;
    if !v.is_finite() {
        return Err(DataError::MalformedRow {
            line,
            column: format!("{RESPONSE_PREFIX}{}", spec.question_id),
            reason: format!("`{t}` is not finite"),
        });
    }
    if v < 0.0 {
        return Ok(None);
    }
    if !spec.in_range(v) {
        return Err(DataError::CodeOutOfRange {
            line,
            field: format!("{RESPONSE_PREFIX}{}", spec.question_id),
            value: t.to_string(),
        });
    }
    Ok(Some(v))
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Formats a response value; `f64`'s `Display` is the shortest string that
/// parses back to the same value.
pub fn fmt_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a sample in the canonical CSV layout of its schema. Reading the
/// output back with the same options reproduces the sample.
pub fn write_sample<W: Write>(sample: &SurveySample, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = match sample.schema {
        Schema::Wvs => [
            "respondent_id",
            "age",
            "gender",
            "region",
            "education",
            "marital_status",
            "occupation",
            "income",
            "sampling_weight",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        Schema::Anes => Schema::Anes
            .demographic_columns()
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    header.extend(
        sample
            .responses
            .keys()
            .map(|q| format!("{RESPONSE_PREFIX}{q}")),
    );
    w.write_record(&header)?;

    for (i, p) in sample.roster.iter().enumerate() {
        let mut row = match sample.schema {
            Schema::Wvs => vec![
                p.respondent_id.clone(),
                fmt_opt(p.age),
                fmt_opt(p.gender.map(Gender::as_str)),
                p.region.clone(),
                fmt_opt(p.education),
                fmt_opt(p.marital_status),
                fmt_opt(p.occupation),
                fmt_opt(p.income),
                p.sampling_weight.to_string(),
            ],
            Schema::Anes => vec![
                p.respondent_id.clone(),
                fmt_opt(p.age),
                fmt_opt(p.gender.map(Gender::as_str)),
                p.region.clone(),
                fmt_opt(p.education),
                fmt_opt(p.marital_status),
                fmt_opt(p.occupation),
                fmt_opt(p.income),
                fmt_opt(p.ethnicity),
                fmt_opt(p.religion),
                fmt_opt(p.political_attention),
                p.sampling_weight.to_string(),
            ],
        };
        row.extend(sample.responses.values().map(|v| fmt_value(v.values[i])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| DataError::io(Path::new("<writer>"), e))?;
    Ok(())
}

/// A response matrix without demographics: `respondent_id,q_<id>,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub respondent_ids: Vec<String>,
    pub responses: BTreeMap<String, ResponseVector>,
}

impl ResponseMatrix {
    /// Reorders rows to follow `ids`; ids absent from the matrix get
    /// missing entries.
    pub fn aligned_to(&self, ids: &[String]) -> BTreeMap<String, ResponseVector> {
        let pos: BTreeMap<&str, usize> = self
            .respondent_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let index: Vec<Option<usize>> = ids.iter().map(|id| pos.get(id.as_str()).copied()).collect();
        self.responses
            .iter()
            .map(|(q, v)| (q.clone(), v.gather(&index)))
            .collect()
    }
}

pub fn write_response_matrix<W: Write>(
    respondent_ids: &[String],
    responses: &BTreeMap<String, ResponseVector>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["respondent_id".to_string()];
    header.extend(responses.keys().map(|q| format!("{RESPONSE_PREFIX}{q}")));
    w.write_record(&header)?;
    for (i, id) in respondent_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(responses.values().map(|v| fmt_value(v.values[i])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| DataError::io(Path::new("<writer>"), e))?;
    Ok(())
}

/// Reads a response matrix. Lines starting with `#` are treated as comments.
pub fn read_response_matrix<R: Read>(reader: R, catalog: &Catalog) -> Result<ResponseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("respondent_id") {
        return Err(DataError::MissingColumn("respondent_id".into()));
    }
    let mut specs = Vec::new();
    for h in headers.iter().skip(1) {
        let qid = h.strip_prefix(RESPONSE_PREFIX).unwrap_or(h);
        specs.push(
            catalog
                .get(qid)
                .ok_or_else(|| DataError::UnknownQuestion(qid.to_string()))?,
        );
    }
    let mut ids = Vec::new();
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); specs.len()];
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec.get(0).unwrap_or("").to_string();
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateRespondentId { line, id });
        }
        ids.push(id);
        for (j, spec) in specs.iter().enumerate() {
            cols[j].push(parse_response_cell(rec.get(j + 1).unwrap_or(""), spec, line)?);
        }
    }
    Ok(ResponseMatrix {
        respondent_ids: ids,
        responses: specs
            .iter()
            .zip(cols)
            .map(|(s, v)| (s.question_id.clone(), ResponseVector::new(s.question_id.clone(), v)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Catalog {
        Catalog::wvs_default()
    }

    fn opts() -> LoadOptions {
        LoadOptions::new("WVS7-US", Country::US, Schema::Wvs)
    }

    const HEADER: &str =
        "respondent_id,age,gender,region,education,marital_status,occupation,income,q_theft,q_trust_family\n";

    #[test]
    fn loads_three_row_fixture() {
        let csv = format!(
            "{HEADER}r1,34,female,Ohio,6,1,1,5,1,1\nr2,61,male,TX,3,5,11,3,2,2\nr3,22,female,Wisconsin,4,6,13,7,,1\n"
        );
        let s = read_sample(csv.as_bytes(), &opts(), &catalog()).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.roster[1].region, "Texas");
        let theft = s.response_vector("theft").unwrap();
        assert_eq!(theft.values, vec![Some(1.0), Some(2.0), None]);
        assert_eq!(theft.missing_count(), 1);
        assert!(matches!(
            s.response_vector("nonexistent"),
            Err(DataError::UnknownQuestion(_))
        ));
    }

    #[test]
    fn wvs_education_out_of_range() {
        let csv = format!("{HEADER}r1,34,female,Ohio,12,1,1,5,1,1\n");
        match read_sample(csv.as_bytes(), &opts(), &catalog()) {
            Err(DataError::CodeOutOfRange { field, value, line }) => {
                assert_eq!(field, "education");
                assert_eq!(value, "12");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty_sample() {
        let s = read_sample(HEADER.as_bytes(), &opts(), &catalog()).unwrap();
        assert_eq!(s.n(), 0);
        assert_eq!(s.responses.len(), 2);
        assert!(s.responses.values().all(|v| v.is_empty()));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let csv = format!("{HEADER}r1,34,female,Ohio,6,1,1,5,1,1\nr1,35,male,Ohio,6,1,1,5,1,1\n");
        assert!(matches!(
            read_sample(csv.as_bytes(), &opts(), &catalog()),
            Err(DataError::DuplicateRespondentId { line: 3, .. })
        ));
    }

    #[test]
    fn malformed_rows_report_line_and_column() {
        let csv = format!("{HEADER}r1,thirty,female,Ohio,6,1,1,5,1,1\n");
        match read_sample(csv.as_bytes(), &opts(), &catalog()) {
            Err(DataError::MalformedRow { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, "age");
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = format!("{HEADER}r1,34,female\n");
        assert!(matches!(
            read_sample(short.as_bytes(), &opts(), &catalog()),
            Err(DataError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn region_must_belong_to_country() {
        let csv = format!("{HEADER}r1,34,female,Sichuan,6,1,1,5,1,1\n");
        assert!(matches!(
            read_sample(csv.as_bytes(), &opts(), &catalog()),
            Err(DataError::CodeOutOfRange { .. })
        ));
    }

    #[test]
    fn refused_codes_and_blanks_are_missing_but_out_of_scale_is_error() {
        let csv = format!("{HEADER}r1,34,female,Ohio,,1,1,5,-2,NA\n");
        let s = read_sample(csv.as_bytes(), &opts(), &catalog()).unwrap();
        assert_eq!(s.roster[0].education, None);
        assert!(!s.roster[0].has_complete_covariates());
        assert_eq!(s.responses["theft"].values, vec![None]);
        assert_eq!(s.responses["trust_family"].values, vec![None]);

        let bad = format!("{HEADER}r1,34,female,Ohio,6,1,1,5,11,1\n");
        assert!(matches!(
            read_sample(bad.as_bytes(), &opts(), &catalog()),
            Err(DataError::CodeOutOfRange { .. })
        ));
    }

    #[test]
    fn underage_and_bad_weight_rejected() {
        let csv = format!("{HEADER}r1,15,female,Ohio,6,1,1,5,1,1\n");
        assert!(matches!(
            read_sample(csv.as_bytes(), &opts(), &catalog()),
            Err(DataError::CodeOutOfRange { field, .. }) if field == "age"
        ));
    }

    #[test]
    fn declared_size_checked() {
        let csv = format!("{HEADER}r1,34,female,Ohio,6,1,1,5,1,1\n");
        let mut o = opts();
        o.expected_n = Some(2077);
        assert!(matches!(
            read_sample(csv.as_bytes(), &o, &catalog()),
            Err(DataError::SampleSizeMismatch { expected: 2077, found: 1 })
        ));
    }

    #[test]
    fn anes_schema_reads_state_weight_and_extra_codes() {
        let csv = "respondent_id,age,gender,state,education,marital_status,occupation,income_cat,ethnicity,religion,political_attention,sampling_weight\n\
                   a1,45,male,WI,6,1,1,17,1,12,2,1.37\n";
        let o = LoadOptions::new("ANES2020", Country::US, Schema::Anes);
        let s = read_sample(csv.as_bytes(), &o, &Catalog::default()).unwrap();
        let p = &s.roster[0];
        assert_eq!(p.region, "Wisconsin");
        assert_eq!(p.income, Some(17));
        assert_eq!(p.religion, Some(12));
        assert_eq!(p.sampling_weight, 1.37);

        let bad = csv.replace(",12,2,", ",13,2,");
        assert!(matches!(
            read_sample(bad.as_bytes(), &o, &Catalog::default()),
            Err(DataError::CodeOutOfRange { field, .. }) if field == "religion"
        ));
    }

    #[test]
    fn unknown_response_column_rejected() {
        let csv = "respondent_id,age,gender,region,education,marital_status,occupation,income,q_bogus\n";
        assert!(matches!(
            read_sample(csv.as_bytes(), &opts(), &catalog()),
            Err(DataError::UnknownQuestion(q)) if q == "bogus"
        ));
    }

    #[test]
    fn catalog_rejects_wrong_block_scale() {
        let mut qs = catalog().questions().to_vec();
        qs[0].scale_max = 7;
        assert!(Catalog::new(qs).is_err());
    }

    #[test]
    fn response_matrix_alignment() {
        let m = read_response_matrix(
            "respondent_id,q_theft\nb,3\na,1\n".as_bytes(),
            &catalog(),
        )
        .unwrap();
        let aligned = m.aligned_to(&["a".into(), "c".into(), "b".into()]);
        assert_eq!(aligned["theft"].values, vec![Some(1.0), None, Some(3.0)]);
    }
}
