//! On-disk record shapes shared between subcommands.

use causatext_core::explain::Explanation;
use serde::{Deserialize, Serialize};

/// One line of `explanations.jsonl`: the raw explanation plus the
/// classifier label and the projected keywords the similarity stage scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub arch: String,
    pub keywords: Vec<String>,
    #[serde(flatten)]
    pub explanation: Explanation,
}
