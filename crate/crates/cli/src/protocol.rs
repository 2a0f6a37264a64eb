//! Wire messages between the simulator and a UI.
//!
//! Every websocket text frame carries newline-terminated JSON objects with a
//! `type` tag. Frames may hold several messages, one per line.

use hsa_core::harness::{Scenario, TraceRow};
use serde::{Deserialize, Serialize};

/// Client → server.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Stylus displacement in centimetres.
    Stylus { disp_cm: Vec<f64> },
    Param { name: String, value: f64 },
    Mode { controller: String },
    Reset,
}

/// Tunables echoed with every state so a UI can confirm a change took.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct ConfigEcho {
    pub controller: String,
    pub k: f64,
    pub k_v: f64,
    pub dt_ref: f64,
    pub e_max: f64,
    pub w_cbf: f64,
    pub w_l2: f64,
}

impl ConfigEcho {
    pub fn of(sc: &Scenario) -> Self {
        Self {
            controller: sc.mode().name().to_owned(),
            k: sc.stability.k,
            k_v: sc.stability.k_v,
            dt_ref: sc.stability.dt_ref,
            e_max: sc.stability.e_max,
            w_cbf: sc.controller.weights.w_cbf,
            w_l2: sc.controller.weights.w_l2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct StateMessage {
    pub t: f64,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub x_vd: Vec<f64>,
    #[serde(rename = "F")]
    pub force: Vec<f64>,
    #[serde(rename = "E")]
    pub energy: f64,
    /// `null` when the scenario has no barriers.
    pub h_min: Option<f64>,
    pub case: String,
    pub ledger_margin: f64,
    pub config: ConfigEcho,
}

impl StateMessage {
    pub fn new(row: &TraceRow, config: ConfigEcho) -> Self {
        Self {
            t: row.t,
            p: row.position.as_slice().to_vec(),
            v: row.velocity.as_slice().to_vec(),
            x_vd: row.x_vd.as_slice().to_vec(),
            force: row.force.as_slice().to_vec(),
            energy: row.energy,
            h_min: row.h_min.is_finite().then_some(row.h_min),
            case: row.active_case.label().to_owned(),
            ledger_margin: row.ledger_margin,
            config,
        }
    }
}

/// Server → client.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { scenario: Box<Scenario>, config: ConfigEcho },
    State(Box<StateMessage>),
    Warning { message: String },
    /// The run stopped: duration reached or the controller failed.
    Stopped { t: f64, reason: String },
}

impl ServerMessage {
    pub fn warning(message: impl Into<String>) -> Self {
        ServerMessage::Warning {
            message: message.into(),
        }
    }

    /// One JSON line, newline included.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages serialize");
        s.push('\n');
        s
    }
}

/// Parses every line of a frame. Unknown or malformed messages come back as
/// the warning to send.
pub fn parse_frame(text: &str) -> Vec<Result<ClientMessage, String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(parse_line)
        .collect()
}

fn parse_line(line: &str) -> Result<ClientMessage, String> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("malformed message: {e}"))?;
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| "message has no type".to_owned())?
        .to_owned();
    if !matches!(kind.as_str(), "stylus" | "param" | "mode" | "reset") {
        return Err(format!("ignored unknown message type {kind:?}"));
    }
    serde_json::from_value(value).map_err(|e| format!("bad {kind} message: {e}"))
}
