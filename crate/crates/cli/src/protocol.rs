//! Worker wire format: one JSON object per websocket text frame, tagged by
//! `type` and versioned by `v`. Unknown fields are ignored.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Join {
        token: String,
        #[serde(default)]
        name: Option<String>,
    },
    Answer {
        query_id: u64,
        label: String,
    },
    Ping,
    Goodbye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Welcome {
        worker_id: u64,
        labels: Vec<String>,
    },
    Task {
        query_id: u64,
        tokens: Vec<String>,
        highlight_index: usize,
        labels: Vec<String>,
        deadline_seconds: f64,
    },
    Ack {
        query_id: u64,
        accepted: bool,
    },
    Pong,
    Error {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub v: u32,
    #[serde(flatten)]
    pub message: T,
}

impl<T> Envelope<T> {
    pub fn new(message: T) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            message,
        }
    }
}

pub fn encode(message: ServerMessage) -> String {
    serde_json::to_string(&Envelope::new(message)).expect("server messages serialize")
}

/// Parses a client frame, rejecting other protocol versions.
pub fn decode(text: &str) -> Result<ClientMessage, String> {
    let envelope: Envelope<ClientMessage> =
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    if envelope.v != PROTOCOL_VERSION {
        return Err(format!("unsupported protocol version {}", envelope.v));
    }
    Ok(envelope.message)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_round_trip_ignores_unknown_fields() {
        let m =
            decode(r#"{"v":1,"type":"answer","query_id":7,"label":"LOC","extra":true}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Answer {
                query_id: 7,
                label: "LOC".into()
            }
        );
    }

    #[test]
    fn version_is_checked() {
        assert!(decode(r#"{"v":2,"type":"ping"}"#)
            .unwrap_err()
            .contains("version"));
        assert!(decode(r#"{"type":"ping"}"#).is_err());
    }

    #[test]
    fn task_encoding() {
        let text = encode(ServerMessage::Task {
            query_id: 1,
            tokens: vec!["a".into(), "b".into()],
            highlight_index: 1,
            labels: vec!["X".into()],
            deadline_seconds: 30.0,
        });
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["type"], "task");
        assert_eq!(v["highlight_index"], 1);
    }
}
