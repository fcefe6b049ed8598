//! JSON text frames exchanged with the operator console.

use serde::{Deserialize, Serialize};

use opswitch_core::gridnav::{Action, EnvConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Manual,
    Assisted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Inbound {
    Input { action: Action },
    Select { robot: usize },
    Mode { value: Mode },
    End,
}

const INBOUND_TYPES: [&str; 4] = ["input", "select", "mode", "end"];

/// Why an inbound frame was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseFailure {
    /// Not a JSON object with a string `type`, or bad fields for a known type.
    Malformed,
    UnknownType,
}

impl ParseFailure {
    pub fn code(self) -> ErrorCode {
        match self {
            ParseFailure::Malformed => ErrorCode::Malformed,
            ParseFailure::UnknownType => ErrorCode::UnknownType,
        }
    }
}

pub fn parse_inbound(text: &str) -> Result<Inbound, ParseFailure> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|_| ParseFailure::Malformed)?;
    let ty = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or(ParseFailure::Malformed)?;
    if !INBOUND_TYPES.contains(&ty) {
        return Err(ParseFailure::UnknownType);
    }
    serde_json::from_value(value).map_err(|_| ParseFailure::Malformed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnknownType,
    ManualSelectForbidden,
    RobotOutOfRange,
    NoScorer,
    SessionEnded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RobotView {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub health: f64,
    pub just_reset: bool,
}

/// Full fleet state after tick `tick` was simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub controlled: usize,
    pub robots: Vec<RobotView>,
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<EnvConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Outbound {
    State(StateFrame),
    Error { code: ErrorCode },
}

impl Outbound {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound frames serialize")
    }
}
