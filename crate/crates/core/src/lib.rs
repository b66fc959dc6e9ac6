//! Synthetic survey and ballot responses from demographic personas,
//! blended with propensity-matched historical answers.
//!
//! The pipeline runs in stages: load samples ([`data`]), render persona
//! prompts ([`prompt`]), collect completions ([`gateway`]), match the
//! current wave to a historical one ([`psm`]), fit the blending weight
//! ([`calibration`]), then evaluate ([`stats`]) or forecast electoral votes
//! ([`forecast`]). [`pipeline`] strings the stages together.

pub mod calibration;
pub mod data;
pub mod fixtures;
pub mod forecast;
pub mod gateway;
pub mod pipeline;
pub mod prompt;
pub mod psm;
pub mod region;
pub mod stats;

pub use calibration::{
    combine_responses, estimate_h_election, estimate_h_survey, estimate_party_weights, forecast_multiparty,
    CalibrationError, CalibrationWeight, PartyElection, Scope,
};
pub use data::{
    load_sample, response_vector, Block, Catalog, DataError, DemographicProfile, Gender, LoadOptions, QuestionSpec,
    ResponseVector, Schema, SurveySample,
};
pub use forecast::{
    allocate_electors, combine_vote_share, compare_maps, forecast_shares, tally_states, ElectoralOutcome, EvTable,
    EvTableVersion, ForecastError, Party, StateTally,
};
pub use gateway::{BackendConfig, BackendKind, Completion, Gateway, GatewayError, Strictness};
pub use pipeline::{run_pipeline, PipelineError, RunConfig, RunReport, Task};
pub use prompt::{render_anes_prompt, render_wvs_prompt, AskMode, PromptBundle};
pub use psm::{fit_propensity, match_nearest, MatchPolicy, MatchedPairSet, PropensityModel};
pub use region::Country;
pub use stats::{
    agreement_class, agreement_summary, cross_sample_diff, mad, mad_significance, mean_sd, pairwise_correlation,
    AgreementClass, MadMode,
};
