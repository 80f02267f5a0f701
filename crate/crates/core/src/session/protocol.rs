//! Newline-delimited JSON messages between a client and a session.

use serde::{Deserialize, Serialize};

use crate::content::Avatar;
use crate::conversation::{Origin, Pattern};

use super::config::Condition;
use super::events::{AgentRole, SessionLogEvent};
use super::SessionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    Move {
        x: f64,
        y: f64,
    },
    /// Speak to an agent, or into a specific episode.
    Say {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<String>,
        text: String,
    },
    /// Speak into an overheard agent-agent episode.
    Join {
        episode: String,
        text: String,
    },
    Inspect {
        agent: String,
    },
    Bye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ServerMessage {
    Snapshot { snapshot: Snapshot },
    Event { event: SessionLogEvent },
    Error { code: String, message: String },
}

impl ServerMessage {
    pub fn error(err: &SessionError) -> Self {
        ServerMessage::Error { code: err.code().to_string(), message: err.to_string() }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages serialize");
        s.push('\n');
        s
    }
}

/// Parse one protocol line. Unknown types or fields are protocol errors.
pub fn parse_client_message(line: &str) -> Result<ClientMessage, SessionError> {
    serde_json::from_str(line.trim()).map_err(|e| SessionError::Protocol(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub entity: String,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: String,
    pub role: AgentRole,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub node: String,
    pub cue: String,
    pub avatar: Avatar,
    pub voice_id: String,
    pub label_visible: bool,
    /// Present only once the label has been revealed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub id: String,
    pub origin: Origin,
    pub participants: Vec<String>,
    pub pattern: Pattern,
    pub turns: usize,
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub tick: u64,
    pub condition: Condition,
    pub exhibit_id: String,
    pub exhibit_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<EntityState>,
    pub agents: Vec<AgentState>,
    pub episodes: Vec<EpisodeSummary>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_message_type() {
        let lines = [
            r#"{"type":"Hello","name":"Ana"}"#,
            r#"{"type":"Hello"}"#,
            r#"{"type":"Move","x":3.0,"y":4}"#,
            r#"{"type":"Say","target":"agent-01","text":"What is this?"}"#,
            r#"{"type":"Say","episode":"ep-0002","text":"And then?"}"#,
            r#"{"type":"Join","episode":"ep-0003","text":"May I?"}"#,
            r#"{"type":"Inspect","agent":"agent-02"}"#,
            r#"{"type":"Bye"}"#,
        ];
        for l in lines {
            let msg = parse_client_message(l).unwrap();
            let again = parse_client_message(&serde_json::to_string(&msg).unwrap()).unwrap();
            assert_eq!(again, msg);
        }
    }

    #[test]
    fn rejects_unknown_types_and_fields() {
        for l in
            [r#"{"type":"Shout","text":"hi"}"#, r#"{"type":"Move","x":1,"y":2,"z":3}"#, r#"{"type":"Say"}"#, "not json"]
        {
            assert!(matches!(parse_client_message(l), Err(SessionError::Protocol(_))), "{l}");
        }
    }

    #[test]
    fn error_lines_carry_codes() {
        let line = ServerMessage::error(&SessionError::NotJoinable("ep-0001".into())).to_line();
        assert!(line.ends_with('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["type"], "Error");
        assert_eq!(v["code"], "not_joinable");
    }
}
