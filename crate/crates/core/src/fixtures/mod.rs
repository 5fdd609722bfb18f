//! Built-in replay fixtures: the Erik Solheim case-study run.
//!
//! The fixture ships the candidate and consolidated-ground-truth biographies
//! plus a scripted transcript that reproduces the recorded run offline.

mod solheim;

pub use solheim::{
    solheim_entrywise_judgment_json, solheim_expected_telemetry, solheim_request,
    solheim_transcript, SOLHEIM_BUDGETS,
};

use crate::biography::{Biography, OfficialId, Provenance};

pub const SOLHEIM_CANDIDATE_TEXT: &str = include_str!("../../fixtures/solheim_candidate.txt");
pub const SOLHEIM_CGT_TEXT: &str = include_str!("../../fixtures/solheim_cgt.txt");

pub const SOLHEIM_ID: &str = "nor-solheim-erik";
pub const SOLHEIM_NAME: &str = "Erik Solheim";

/// The 26-entry candidate biography from the case-study agent run.
pub fn solheim_candidate_biography() -> Biography {
    Biography::parse_text(
        OfficialId::from(SOLHEIM_ID),
        SOLHEIM_NAME,
        Provenance::AgentReport("solheim-replay".into()),
        SOLHEIM_CANDIDATE_TEXT,
    )
    .expect("candidate fixture parses")
}

/// The 33-entry consolidated ground truth biography.
pub fn solheim_cgt_biography() -> Biography {
    Biography::parse_text(
        OfficialId::from(SOLHEIM_ID),
        SOLHEIM_NAME,
        Provenance::Human("cgt".into()),
        SOLHEIM_CGT_TEXT,
    )
    .expect("cgt fixture parses")
}
