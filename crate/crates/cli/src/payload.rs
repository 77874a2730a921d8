use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wlax::diffalg::DiffPoly;
use wlax::matpsdo::MatrixPDO;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorPayload {
    pub tag: String,
    pub n: usize,
    pub floor: i32,
    pub epsilon: String,
    pub algebra: String,
    pub template: MatrixPDO,
    pub generic: Option<MatrixPDO>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityPayload {
    pub n: i32,
    pub h: DiffPoly,
    pub text: String,
}

/// Flows keyed by generator name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowPayload {
    pub example: String,
    pub n: i32,
    pub floor: i32,
    pub modified: bool,
    pub method: String,
    pub flows: BTreeMap<String, DiffPoly>,
    /// Same flows rendered as plain text.
    pub flows_text: BTreeMap<String, String>,
    pub densities: Vec<DensityPayload>,
}
