use vpoll_core::{render_anes_prompt, render_wvs_prompt, AskMode, Catalog, Country, DemographicProfile, Gender};

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{GOLDEN}/{name}")).unwrap()
}

fn wvs_profile() -> DemographicProfile {
    DemographicProfile {
        respondent_id: "US7-canonical".into(),
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
        respondent_id: "A-canonical".into(),
        age: Some(80),
        gender: Some(Gender::Female),
        region: "Wisconsin".into(),
        education: Some(6),
        marital_status: Some(1),
        occupation: Some(1),
        income: Some(22),
        ethnicity: Some(1),
        religion: Some(1),
        political_attention: Some(2),
        sampling_weight: 1.0,
    }
}

#[test]
fn wvs_persona_and_scenario_match_golden() {
    let b = render_wvs_prompt(&wvs_profile(), Country::US, &Catalog::wvs_default()).unwrap();
    assert_eq!(format!("{}\n", b.system_message()), golden("wvs_us_system.txt"));
}

#[test]
fn wvs_question_blocks_match_golden() {
    let b = render_wvs_prompt(&wvs_profile(), Country::US, &Catalog::wvs_default()).unwrap();
    let rendered = b
        .blocks
        .iter()
        .map(|blk| {
            let items: Vec<&str> = blk.items.iter().map(|i| i.text.as_str()).collect();
            format!("{}\n\n{}", blk.preamble, items.join("\n"))
        })
        .collect::<Vec<_>>()
        .join("\n---\n");
    assert_eq!(format!("{rendered}\n"), golden("wvs_questions.txt"));
}

#[test]
fn anes_transcripts_match_golden() {
    for cycle in [2016, 2020, 2024] {
        let b = render_anes_prompt(&anes_profile(), cycle).unwrap();
        assert_eq!(b.transcript(AskMode::Block), golden(&format!("anes_{cycle}.txt")), "cycle {cycle}");
        assert_eq!(b.transcript(AskMode::PerQuestion), b.transcript(AskMode::Block));
    }
}
