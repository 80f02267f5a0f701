use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::content::Avatar;
use crate::conversation::{CloseReason, Origin, Pattern, Provenance, TurnKind};

use super::config::Condition;
use super::protocol::ClientMessage;

/// One append-only log record. `seq` orders records within a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLogEvent {
    pub seq: u64,
    pub tick: u64,
    pub wall_time: String,
    #[serde(flatten)]
    pub event: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum EventKind {
    SessionStarted(SessionStarted),
    AgentSpawned(AgentSpawned),
    PoseUpdated(PoseUpdated),
    EpisodeOpened(EpisodeOpened),
    TurnAdded(TurnAdded),
    PatternChanged(PatternChanged),
    EpisodeClosed(EpisodeClosed),
    LabelRevealed(LabelRevealed),
    ThinkingStarted(ThinkingStarted),
    ClientMessage(ClientMessage),
    Warning(Warning),
}

impl EventKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            EventKind::SessionStarted(_) => "SessionStarted",
            EventKind::AgentSpawned(_) => "AgentSpawned",
            EventKind::PoseUpdated(_) => "PoseUpdated",
            EventKind::EpisodeOpened(_) => "EpisodeOpened",
            EventKind::TurnAdded(_) => "TurnAdded",
            EventKind::PatternChanged(_) => "PatternChanged",
            EventKind::EpisodeClosed(_) => "EpisodeClosed",
            EventKind::LabelRevealed(_) => "LabelRevealed",
            EventKind::ThinkingStarted(_) => "ThinkingStarted",
            EventKind::ClientMessage(_) => "ClientMessage",
            EventKind::Warning(_) => "Warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStarted {
    pub session_id: String,
    pub pack: String,
    pub exhibit_id: String,
    pub condition: Condition,
    pub seed: u64,
    pub tick_hz: u32,
    pub backend: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Visitor,
    Guide,
}

/// Public spawn record. Deliberately carries no identity label or viewpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpawned {
    pub agent_id: String,
    pub role: AgentRole,
    pub x: f64,
    pub y: f64,
    pub node: String,
    pub avatar: Avatar,
    pub voice_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseUpdated {
    pub entity: String,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    /// Behavior node while the pose was produced; absent for the visitor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOpened {
    pub episode: String,
    pub origin: Origin,
    pub opener: String,
    pub participants: Vec<String>,
    pub exhibit_ref: Option<String>,
    pub pattern: Pattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnAdded {
    pub episode: String,
    pub index: usize,
    pub speaker: String,
    pub kind: TurnKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voice_id: Option<String>,
    /// The visitor could hear this turn.
    pub audible: bool,
    /// Set on guide narration segments only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewpoint_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternChanged {
    pub episode: String,
    pub from: Pattern,
    pub to: Pattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeClosed {
    pub episode: String,
    pub reason: CloseReason,
    pub pattern: Pattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRevealed {
    pub agent_id: String,
    pub identity_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinkingStarted {
    pub episode: String,
    pub agent_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub message: String,
}

pub fn to_ndjson(events: &[SessionLogEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("log events serialize"));
        out.push('\n');
    }
    out
}

pub fn write_ndjson(events: &[SessionLogEvent], path: impl AsRef<Path>) -> io::Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(to_ndjson(events).as_bytes())?;
    f.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum LogParseError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parse an `.ndjson` log; blank lines are skipped.
pub fn parse_ndjson(text: &str) -> Result<Vec<SessionLogEvent>, LogParseError> {
    read_ndjson(text.as_bytes())
}

pub fn read_ndjson(reader: impl io::Read) -> Result<Vec<SessionLogEvent>, LogParseError> {
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|source| LogParseError::Json { line: i + 1, source })?;
        out.push(ev);
    }
    Ok(out)
}

pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<SessionLogEvent>, LogParseError> {
    read_ndjson(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattened_record_round_trips() {
        let ev = SessionLogEvent {
            seq: 4,
            tick: 2,
            wall_time: "2025-01-01T00:00:00.200Z".into(),
            event: EventKind::TurnAdded(TurnAdded {
                episode: "ep-0001".into(),
                index: 0,
                speaker: "agent-02".into(),
                kind: TurnKind::Opening,
                text: "Hello".into(),
                provenance: Some(Provenance::Scripted),
                voice_id: Some("voice-f1".into()),
                audible: true,
                viewpoint_ref: None,
            }),
        };
        let line = serde_json::to_string(&ev).unwrap();
        assert!(line.contains(r#""type":"TurnAdded""#), "{line}");
        assert!(line.contains(r#""payload":{"#), "{line}");
        assert_eq!(parse_ndjson(&to_ndjson(std::slice::from_ref(&ev))).unwrap(), vec![ev]);
    }

    #[test]
    fn client_messages_nest_under_payload() {
        let ev = SessionLogEvent {
            seq: 0,
            tick: 0,
            wall_time: "t".into(),
            event: EventKind::ClientMessage(ClientMessage::Move { x: 1.0, y: 2.5 }),
        };
        let back: SessionLogEvent = serde_json::from_str(&serde_json::to_string(&ev).unwrap()).unwrap();
        assert_eq!(back, ev);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let err = parse_ndjson("\n{\"nope\": 1}\n").unwrap_err();
        assert!(matches!(err, LogParseError::Json { line: 2, .. }));
    }
}
