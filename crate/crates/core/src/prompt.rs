//! Persona, scenario and question prompts for WVS and ANES respondents.
//!
//! Rendering is pure: the same profile and catalog always produce the same
//! bytes. Demographic codes are turned into phrases through the bundled
//! codebooks (`data/codebook_*.json`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Block, Catalog, DemographicProfile, Gender, QuestionSpec, Schema};
use crate::region::Country;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("no phrase for {field} code {code}")]
    UnresolvableCode { field: String, code: i64 },
    #[error("respondent `{respondent}` has no value for `{field}`")]
    MissingField { respondent: String, field: String },
    #[error("no persona nationality configured for country {0}")]
    UnsupportedCountry(String),
    #[error("unsupported election cycle {0}")]
    UnsupportedCycle(u16),
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
}

/// One code-to-phrase row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub field: String,
    pub code: i64,
    pub phrase: String,
}

#[derive(Debug, Clone)]
pub struct Codebook {
    schema: Schema,
    phrases: BTreeMap<(String, i64), String>,
}

const WVS_CODEBOOK: &str = include_str!("../data/codebook_wvs.json");
const ANES_CODEBOOK: &str = include_str!("../data/codebook_anes.json");

impl Codebook {
    pub fn from_entries(schema: Schema, entries: Vec<CodebookEntry>) -> Result<Self, PromptError> {
        let mut phrases = BTreeMap::new();
        for e in entries {
            if phrases
                .insert((e.field.clone(), e.code), e.phrase)
                .is_some()
            {
                return Err(PromptError::InvalidCodebook(format!(
                    "duplicate entry {} {}",
                    e.field, e.code
                )));
            }
        }
        Ok(Codebook { schema, phrases })
    }

    fn bundled(schema: Schema, json: &str) -> Self {
        let entries: Vec<CodebookEntry> = serde_json::from_str(json).expect("bundled codebook parses");
        Self::from_entries(schema, entries).expect("bundled codebook is unique")
    }

    pub fn wvs() -> Self {
        Self::bundled(Schema::Wvs, WVS_CODEBOOK)
    }

    pub fn anes() -> Self {
        Self::bundled(Schema::Anes, ANES_CODEBOOK)
    }

    pub fn for_schema(schema: Schema) -> Self {
        match schema {
            Schema::Wvs => Self::wvs(),
            Schema::Anes => Self::anes(),
        }
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn phrase(&self, field: &str, code: i64) -> Result<&str, PromptError> {
        self.phrases
            .get(&(field.to_string(), code))
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnresolvableCode {
                field: field.to_string(),
                code,
            })
    }

    pub fn entries(&self) -> impl Iterator<Item = CodebookEntry> + '_ {
        self.phrases.iter().map(|((f, c), p)| CodebookEntry {
            field: f.clone(),
            code: *c,
            phrase: p.clone(),
        })
    }
}

/// Which survey or election the prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptContext {
    Wvs2017,
    Anes2016,
    Anes2020,
    Anes2024,
}

impl PromptContext {
    pub fn for_cycle(cycle: u16) -> Result<Self, PromptError> {
        match cycle {
            2016 => Ok(PromptContext::Anes2016),
            2020 => Ok(PromptContext::Anes2020),
            2024 => Ok(PromptContext::Anes2024),
            other => Err(PromptError::UnsupportedCycle(other)),
        }
    }
}

/// One item inside a question block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPrompt {
    pub question_id: String,
    pub text: String,
    pub scale_min: i64,
    pub scale_max: i64,
}

/// A Step 3 block: shared instructions plus its items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPrompt {
    pub block: Block,
    pub preamble: String,
    pub items: Vec<ItemPrompt>,
}

/// How Step 3 is split into chat turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AskMode {
    /// One completion per block; answers come back as a numbered list.
    #[default]
    Block,
    /// One completion per question.
    PerQuestion,
}

pub const BLOCK_ANSWER_INSTRUCTION: &str =
    "Answer each numbered item on its own line in the form \"<item number>. <answer number>\". Respond only with the numbers.";
pub const SINGLE_ANSWER_INSTRUCTION: &str = "Respond only with the corresponding number.";

impl BlockPrompt {
    fn numbered_items(&self) -> String {
        self.items
            .iter()
            .enumerate()
            .map(|(i, it)| format!("{}. {}", i + 1, it.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// User turn asking every item of the block at once.
    pub fn block_message(&self) -> String {
        if self.block == Block::Ballot {
            // The ballot already carries its own options and closing line.
            return self.items[0].text.clone();
        }
        format!(
            "{}\n\n{}\n\n{}",
            self.preamble,
            self.numbered_items(),
            BLOCK_ANSWER_INSTRUCTION
        )
    }

    /// User turn asking a single item.
    pub fn item_message(&self, item: &ItemPrompt) -> String {
        if self.block == Block::Ballot {
            return item.text.clone();
        }
        format!(
            "{}\n\n{}\n\n{}",
            self.preamble, item.text, SINGLE_ANSWER_INSTRUCTION
        )
    }
}

/// Everything sent to the model for one respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub respondent_id: String,
    pub persona_text: String,
    pub scenario_text: String,
    pub blocks: Vec<BlockPrompt>,
    pub context: PromptContext,
}

impl PromptBundle {
    /// (question_id, item text) in catalog order.
    pub fn question_texts(&self) -> Vec<(String, String)> {
        self.blocks
            .iter()
            .flat_map(|b| b.items.iter().map(|i| (i.question_id.clone(), i.text.clone())))
            .collect()
    }

    /// System turn: persona followed by the scenario.
    pub fn system_message(&self) -> String {
        format!("{}\n\n{}", self.persona_text, self.scenario_text)
    }

    /// Full prompt as it would be sent, one turn after another.
    pub fn transcript(&self, mode: AskMode) -> String {
        let mut out = self.system_message();
        for b in &self.blocks {
            match mode {
                AskMode::Block => {
                    out.push_str("\n\n");
                    out.push_str(&b.block_message());
                }
                AskMode::PerQuestion => {
                    for it in &b.items {
                        out.push_str("\n\n");
                        out.push_str(&b.item_message(it));
                    }
                }
            }
        }
        out.push('\n');
        out
    }
}

fn required<T: Copy>(v: Option<T>, profile: &DemographicProfile, field: &str) -> Result<T, PromptError> {
    v.ok_or_else(|| PromptError::MissingField {
        respondent: profile.respondent_id.clone(),
        field: field.to_string(),
    })
}

fn gender_code(g: Gender) -> i64 {
    match g {
        Gender::Male => 1,
        Gender::Female => 2,
    }
}

/// Article for "a/an [AGE]-year-old": `an` when the spoken number starts
/// with a vowel sound (8, 11, 18, 80-89, 800-899).
pub fn indefinite_article(age: u32) -> &'static str {
    let vowel = matches!(age, 8 | 11 | 18 | 80..=89 | 800..=899);
    if vowel {
        "an"
    } else {
        "a"
    }
}

const WVS_SOCIAL_PREAMBLE: &str = "How would you feel about the following statements? Do you agree or disagree with them? Choose 1 for Agree strongly, 2 for Agree, 3 for Neither agree nor disagree, 4 for Disagree, and 5 for Disagree strongly.";
const WVS_TRUST_PREAMBLE: &str = "I'd like to ask you how much you trust people from various groups. Could you tell me for each whether you trust people from this group completely, somewhat, not very much or not at all? Choose 1 for Trust completely, 2 for Trust somewhat, 3 for Do not trust very much, 4 for Do not trust at all.";
const WVS_COMMON_SENSE_PREAMBLE: &str = "Here are some questions about international organizations. Many people don't know the answers to these questions, but if you do please tell me.";
const WVS_ETHICS_PREAMBLE: &str = "Please tell me for each of the following actions whether you think it can always be justified, never be justified, or something in between.\n1 = Never justifiable, 2 , 3 , 4 , 5 , 6 , 7 , 8 , 9 , 10 = Always justifiable";
const WVS_OUT_OF_SAMPLE_PREAMBLE: &str = "For each of the following statements, can you tell me how strongly you agree or disagree with each. Do you strongly agree, agree, disagree, or strongly disagree? Choose 1 for Strongly agree, 2 for Agree, 3 for Disagree, and 4 for Strongly disagree.";

pub fn wvs_preamble(block: Block) -> Option<&'static str> {
    match block {
        Block::SocialValues => Some(WVS_SOCIAL_PREAMBLE),
        Block::Trust => Some(WVS_TRUST_PREAMBLE),
        Block::CommonSense => Some(WVS_COMMON_SENSE_PREAMBLE),
        Block::Ethics => Some(WVS_ETHICS_PREAMBLE),
        Block::OutOfSample => Some(WVS_OUT_OF_SAMPLE_PREAMBLE),
        Block::Ballot => None,
    }
}

fn wvs_scenario(country: Country) -> Result<String, PromptError> {
    let homeland = country
        .homeland()
        .ok_or_else(|| PromptError::UnsupportedCountry(country.code().into()))?;
    Ok(format!(
        "Hello. I am from the World Values Survey Association. We are carrying out a global study of what people value in life. This study will interview samples representing most of the world's people. Your name has been selected at random as part of a representative sample of the people in {homeland}. I'd like to ask your views on a number of different subjects. Your input will be treated strictly confidential, but it will contribute to a better understanding of what people all over the world believe and want out of life."
    ))
}

fn item_text(q: &QuestionSpec) -> String {
    if q.options.is_empty() {
        return q.text.clone();
    }
    let mut s = q.text.clone();
    for (i, opt) in q.options.iter().enumerate() {
        s.push_str(&format!("\n   {}. {}", i + 1, opt));
    }
    s
}

fn wvs_blocks(catalog: &Catalog) -> Vec<BlockPrompt> {
    let mut blocks: Vec<BlockPrompt> = Vec::new();
    for q in catalog.iter().filter(|q| q.block != Block::Ballot) {
        let item = ItemPrompt {
            question_id: q.question_id.clone(),
            text: item_text(q),
            scale_min: q.scale_min,
            scale_max: q.scale_max,
        };
        match blocks.iter_mut().find(|b| b.block == q.block) {
            Some(b) => b.items.push(item),
            None => blocks.push(BlockPrompt {
                block: q.block,
                preamble: wvs_preamble(q.block).unwrap_or_default().to_string(),
                items: vec![item],
            }),
        }
    }
    blocks
}

/// WVS persona prompt with the survey year fixed at 2017.
pub fn render_wvs_prompt(
    profile: &DemographicProfile,
    country: Country,
    catalog: &Catalog,
) -> Result<PromptBundle, PromptError> {
    render_wvs_prompt_for_year(profile, country, catalog, 2017)
}

pub fn render_wvs_prompt_for_year(
    profile: &DemographicProfile,
    country: Country,
    catalog: &Catalog,
    year: u16,
) -> Result<PromptBundle, PromptError> {
    let book = Codebook::wvs();
    let demonym = country
        .demonym()
        .ok_or_else(|| PromptError::UnsupportedCountry(country.code().into()))?;
    let age = required(profile.age, profile, "age")?;
    let gender = book.phrase("gender", gender_code(required(profile.gender, profile, "gender")?))?;
    let education = book.phrase("education", required(profile.education, profile, "education")? as i64)?;
    let marital = book.phrase(
        "marital_status",
        required(profile.marital_status, profile, "marital_status")? as i64,
    )?;
    let occupation = book.phrase(
        "occupation",
        required(profile.occupation, profile, "occupation")? as i64,
    )?;
    let income = book.phrase("income", required(profile.income, profile, "income")? as i64)?;

    let persona_text = format!(
        "It is the year {year}. You are a {age}-year-old {gender} {demonym} living in {region}, with {education}. Your marital status is {marital}, and you {occupation}. On an income scale on which 1 indicates the lowest income group and 10 the highest income group in your country, your household is {income}.",
        region = profile.region,
    );

    Ok(PromptBundle {
        respondent_id: profile.respondent_id.clone(),
        persona_text,
        scenario_text: wvs_scenario(country)?,
        blocks: wvs_blocks(catalog),
        context: PromptContext::Wvs2017,
    })
}

/// Two-ticket ballot for an election cycle: (Democratic, Republican).
pub fn tickets(cycle: u16) -> Result<(&'static str, &'static str), PromptError> {
    match cycle {
        2016 => Ok((
            "HILLARY R. CLINTON / TIMOTHY M. KAINE (Democratic)",
            "DONALD J. TRUMP / MICHAEL R. PENCE (Republican)",
        )),
        2020 => Ok((
            "JOSEPH R. BIDEN / KAMALA D. HARRIS (Democratic)",
            "DONALD J. TRUMP / MICHAEL R. PENCE (Republican)",
        )),
        2024 => Ok((
            "KAMALA D. HARRIS / TIM WALZ (Democratic)",
            "DONALD J. TRUMP / J.D. VANCE (Republican)",
        )),
        other => Err(PromptError::UnsupportedCycle(other)),
    }
}

fn anes_scenario(cycle: u16) -> String {
    format!(
        "Hello!\n\n\
The presidential election plays a crucial role in determining the direction of the United States for the next four years, influencing not only domestic policies like the economy and healthcare but also having a profound impact on global affairs.\n\n\
Every vote matters in shaping the future of the nation, as participating in the election is not only a right but also a responsibility.\n\n\
We encourage everyone to make decisions based on policies and stances rather than emotions or stereotypes.\n\n\
Now we are conducting a scientific study involving a mock election for the U.S. presidential election.\n\n\
Assume that you are a voter participating in the {cycle} U.S. election. You will be asked to cast your votes. After voting, the results will be shared. Your voting results will only be used for academic analysis, so please don't worry and feel free to vote.\n\n\
U.S. Presidential and Vice Presidential Election - Vote for One Party"
    )
}

fn anes_ballot(cycle: u16) -> Result<String, PromptError> {
    let (dem, rep) = tickets(cycle)?;
    Ok(format!(
        "Please select the presidential and vice presidential candidates you support:\n\n\
1. {dem}\n\
2. {rep}\n\n\
Note: Each voter can only select one party ticket. The party label accompanying the candidates indicates that they are the official nominees of the party shown.\n\n\
Please select your choice: 1 or 2. Respond only with the corresponding number."
    ))
}

/// Question id used for ballot answers.
pub fn ballot_question_id(cycle: u16) -> String {
    format!("vote_{cycle}")
}

pub fn render_anes_prompt(profile: &DemographicProfile, cycle: u16) -> Result<PromptBundle, PromptError> {
    let context = PromptContext::for_cycle(cycle)?;
    let book = Codebook::anes();
    let age = required(profile.age, profile, "age")?;
    let code = |field: &str, v: Option<u8>| -> Result<&str, PromptError> {
        book.phrase(field, required(v, profile, field)? as i64)
    };
    let gender = book.phrase("gender", gender_code(required(profile.gender, profile, "gender")?))?;
    let ethnicity = code("ethnicity", profile.ethnicity)?;
    let education = code("education", profile.education)?;
    let religion = code("religion", profile.religion)?;
    let marital = code("marital_status", profile.marital_status)?;
    let occupation = code("occupation", profile.occupation)?;
    let attention = code("political_attention", profile.political_attention)?;
    let income = code("income", profile.income)?;

    let persona_text = format!(
        "It is the year {cycle}. You are {article} {age}-year-old {ethnicity} {gender} living in the United States, who are registered to vote in {state}, with {education} education level and you {religion}. Your marital status is {marital}, and you {occupation}, {attention} paying attention to what's going on in government and politics. The income of all members of your family during the past 12 months before taxes is {income}.",
        article = indefinite_article(age),
        state = profile.region,
    );

    Ok(PromptBundle {
        respondent_id: profile.respondent_id.clone(),
        persona_text,
        scenario_text: anes_scenario(cycle),
        blocks: vec![BlockPrompt {
            block: Block::Ballot,
            preamble: String::new(),
            items: vec![ItemPrompt {
                question_id: ballot_question_id(cycle),
                text: anes_ballot(cycle)?,
                scale_min: 1,
                scale_max: 2,
            }],
        }],
        context,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn wvs_profile() -> DemographicProfile {
        DemographicProfile {
            respondent_id: "us-001".into(),
            age: Some(34),
            gender: Some(Gender::Female),
            region: "Ohio".into(),
            education: Some(6),
            marital_status: Some(1),
            occupation: Some(1),
            income: Some(5),
            ethnicity: None,
            religion: None,
            political_attention: None,
            sampling_weight: 1.0,
        }
    }

    fn anes_profile() -> DemographicProfile {
        DemographicProfile {
            respondent_id: "an-1".into(),
            age: Some(45),
            gender: Some(Gender::Male),
            region: "Wisconsin".into(),
            education: Some(6),
            marital_status: Some(1),
            occupation: Some(1),
            income: Some(17),
            ethnicity: Some(1),
            religion: Some(12),
            political_attention: Some(2),
            sampling_weight: 1.0,
        }
    }

    #[test]
    fn wvs_persona_opening() {
        let b = render_wvs_prompt(&wvs_profile(), Country::US, &Catalog::wvs_default()).unwrap();
        assert!(b.persona_text.starts_with(
            "It is the year 2017. You are a 34-year-old female American living in Ohio, with a bachelor or equivalent education level."
        ));
        assert!(b.scenario_text.contains("the people in America."));
    }

    #[test]
    fn chinese_persona_switches_nationality() {
        let mut p = wvs_profile();
        p.region = "Sichuan".into();
        let b = render_wvs_prompt(&p, Country::CN, &Catalog::wvs_default()).unwrap();
        assert!(b.persona_text.contains("female Chinese living in Sichuan"));
        assert!(b.scenario_text.contains("the people in China."));
        assert!(!b.scenario_text.contains("America"));
    }

    #[test]
    fn unknown_occupation_code() {
        let mut p = wvs_profile();
        p.occupation = Some(99);
        assert_eq!(
            render_wvs_prompt(&p, Country::US, &Catalog::wvs_default()).unwrap_err(),
            PromptError::UnresolvableCode {
                field: "occupation".into(),
                code: 99
            }
        );
    }

    #[test]
    fn missing_covariate_is_reported() {
        let mut p = wvs_profile();
        p.income = None;
        assert!(matches!(
            render_wvs_prompt(&p, Country::US, &Catalog::wvs_default()),
            Err(PromptError::MissingField { field, .. }) if field == "income"
        ));
    }

    #[test]
    fn anes_ballots_per_cycle() {
        let b = render_anes_prompt(&anes_profile(), 2024).unwrap();
        let ballot = &b.blocks[0].items[0].text;
        assert!(ballot.contains(
            "1. KAMALA D. HARRIS / TIM WALZ (Democratic)\n2. DONALD J. TRUMP / J.D. VANCE (Republican)"
        ));
        assert!(ballot.ends_with("Respond only with the corresponding number."));

        let b16 = render_anes_prompt(&anes_profile(), 2016).unwrap();
        let ballot16 = &b16.blocks[0].items[0].text;
        assert!(ballot16.contains("1. HILLARY R. CLINTON / TIMOTHY M. KAINE (Democratic)"));
        assert!(ballot16.contains("2. DONALD J. TRUMP / MICHAEL R. PENCE (Republican)"));
        assert!(b16.persona_text.starts_with("It is the year 2016."));
        assert!(b16.scenario_text.contains("participating in the 2016 U.S. election"));

        let b20 = render_anes_prompt(&anes_profile(), 2020).unwrap();
        assert!(b20.blocks[0].items[0].text.contains("1. JOSEPH R. BIDEN / KAMALA D. HARRIS (Democratic)"));
        assert!(render_anes_prompt(&anes_profile(), 2012).is_err());
    }

    #[test]
    fn anes_religion_and_article() {
        let b = render_anes_prompt(&anes_profile(), 2024).unwrap();
        assert!(b.persona_text.contains("and you do not belong to a denomination."));
        assert!(b.persona_text.contains("You are a 45-year-old non-Hispanic white male"));
        let mut p = anes_profile();
        p.age = Some(83);
        let b = render_anes_prompt(&p, 2024).unwrap();
        assert!(b.persona_text.contains("You are an 83-year-old"));
    }

    #[test]
    fn article_rule() {
        assert_eq!(indefinite_article(18), "an");
        assert_eq!(indefinite_article(80), "an");
        assert_eq!(indefinite_article(89), "an");
        assert_eq!(indefinite_article(90), "a");
        assert_eq!(indefinite_article(28), "a");
    }

    #[test]
    fn every_code_renders_without_brackets() {
        let cat = Catalog::wvs_default();
        let wvs = Schema::Wvs.ranges();
        for edu in wvs.education.0..=wvs.education.1 {
            for occ in wvs.occupation.0..=wvs.occupation.1 {
                for mar in wvs.marital_status.0..=wvs.marital_status.1 {
                    let mut p = wvs_profile();
                    p.education = Some(edu);
                    p.occupation = Some(occ);
                    p.marital_status = Some(mar);
                    p.income = Some(occ % 11);
                    let t = render_wvs_prompt(&p, Country::US, &cat).unwrap().transcript(AskMode::Block);
                    assert!(!t.contains('[') && !t.contains(']'));
                }
            }
        }
        let anes = Schema::Anes.ranges();
        for inc in anes.income.0..=anes.income.1 {
            for rel in 1..=12u8 {
                let mut p = anes_profile();
                p.income = Some(inc);
                p.religion = Some(rel);
                p.ethnicity = Some(1 + rel % 6);
                p.education = Some(1 + inc % 8);
                p.occupation = Some(1 + inc % 9);
                p.marital_status = Some(1 + rel % 6);
                p.political_attention = Some(1 + inc % 5);
                let t = render_anes_prompt(&p, 2020).unwrap().transcript(AskMode::Block);
                assert!(!t.contains('[') && !t.contains(']'));
            }
        }
    }

    #[test]
    fn blocks_follow_catalog_order() {
        let cat = Catalog::wvs_default();
        let b = render_wvs_prompt(&wvs_profile(), Country::US, &cat).unwrap();
        let ids: Vec<String> = b.question_texts().into_iter().map(|(id, _)| id).collect();
        let expected: Vec<String> = cat.iter().map(|q| q.question_id.clone()).collect();
        assert_eq!(ids, expected);
        assert_eq!(b.blocks.len(), 5);
    }

    #[test]
    fn rendering_is_deterministic() {
        let cat = Catalog::wvs_default();
        let a = render_wvs_prompt(&wvs_profile(), Country::US, &cat).unwrap();
        let b = render_wvs_prompt(&wvs_profile(), Country::US, &cat).unwrap();
        assert_eq!(a.transcript(AskMode::PerQuestion), b.transcript(AskMode::PerQuestion));
    }
}
