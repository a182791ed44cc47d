//! Version 1 message documents. Every message is a JSON object with
//! `"v": 1` and a `"type"` discriminator.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::session::{Outcome, Phase};
use crate::store::TagValue;
use crate::{CollectError, Result};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagScopeName {
    Episode,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    StartSession {
        study: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        user: Option<String>,
        /// Resume a detached session instead of opening a new one.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<u64>,
    },
    SelectEnv {
        index: usize,
    },
    StartEpisode,
    Action {
        value: Value,
    },
    Pause,
    Unpause,
    Cancel,
    Save {
        confirm: bool,
    },
    Tag {
        scope: TagScopeName,
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<u64>,
        /// Defaults to `true`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<TagValue>,
        /// Defaults to the last episode saved in this session.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<u64>,
    },
    EndSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame {
        step: u64,
        /// Base64 PNG.
        image: String,
        reward: f64,
    },
    EpisodeEnd {
        steps: u64,
    },
    State {
        phase: Phase,
        session: u64,
        env: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<Outcome>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode_id: Option<u64>,
    },
    Error {
        code: String,
        message: String,
    },
}

fn with_version<T: Serialize>(msg: &T) -> Value {
    let mut v = serde_json::to_value(msg).expect("messages serialize");
    if let Value::Object(m) = &mut v {
        m.insert("v".into(), Value::from(PROTOCOL_VERSION));
    }
    v
}

fn strip_version(text: &str) -> Result<Map<String, Value>> {
    let value: Value = serde_json::from_str(text).map_err(|e| CollectError::BadMessage(e.to_string()))?;
    let Value::Object(mut m) = value else {
        return Err(CollectError::BadMessage("message must be a JSON object".into()));
    };
    match m.remove("v") {
        Some(Value::Number(n)) if n.as_u64() == Some(PROTOCOL_VERSION) => Ok(m),
        Some(Value::Number(n)) => Err(CollectError::UnsupportedVersion(n.as_u64().unwrap_or(u64::MAX))),
        Some(_) => Err(CollectError::BadMessage("\"v\" must be an integer".into())),
        None => Err(CollectError::BadMessage("missing \"v\"".into())),
    }
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<ClientMessage> {
        let m = strip_version(text)?;
        serde_json::from_value(Value::Object(m)).map_err(|e| CollectError::BadMessage(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        with_version(self).to_string()
    }
}

impl ServerMessage {
    pub fn parse(text: &str) -> Result<ServerMessage> {
        let m = strip_version(text)?;
        serde_json::from_value(Value::Object(m)).map_err(|e| CollectError::BadMessage(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        with_version(self).to_string()
    }

    pub fn error(e: &CollectError) -> ServerMessage {
        ServerMessage::Error {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}
