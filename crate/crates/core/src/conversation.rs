//! Episodes and the 2x2 participation patterns.
//!
//! A pattern is the product of two binary dimensions: whether the visitor
//! ends up speaking or only listening, and whether the visitor or an agent
//! took the initiative. Episode origin fixes the initiative; the presence of
//! a visitor turn fixes the role for agent-agent episodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entity id of the single human visitor in a session.
pub const USER_ID: &str = "user";

pub fn is_user(entity: &str) -> bool {
    entity == USER_ID
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    ActiveSpeaking,
    PassiveSpeaking,
    ActiveListening,
    PassiveListening,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserRole {
    Speaker,
    Listener,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initiative {
    User,
    Agent,
}

impl Pattern {
    pub const ALL: [Pattern; 4] =
        [Pattern::ActiveSpeaking, Pattern::PassiveSpeaking, Pattern::ActiveListening, Pattern::PassiveListening];

    /// Active listening is the visitor taking the initiative to enter an
    /// agent conversation, so it sits in the (listener, user) cell.
    pub fn from_dimensions(role: UserRole, initiative: Initiative) -> Self {
        match (role, initiative) {
            (UserRole::Speaker, Initiative::User) => Pattern::ActiveSpeaking,
            (UserRole::Speaker, Initiative::Agent) => Pattern::PassiveSpeaking,
            (UserRole::Listener, Initiative::User) => Pattern::ActiveListening,
            (UserRole::Listener, Initiative::Agent) => Pattern::PassiveListening,
        }
    }

    pub fn dimensions(self) -> (UserRole, Initiative) {
        match self {
            Pattern::ActiveSpeaking => (UserRole::Speaker, Initiative::User),
            Pattern::PassiveSpeaking => (UserRole::Speaker, Initiative::Agent),
            Pattern::ActiveListening => (UserRole::Listener, Initiative::User),
            Pattern::PassiveListening => (UserRole::Listener, Initiative::Agent),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::ActiveSpeaking => "active_speaking",
            Pattern::PassiveSpeaking => "passive_speaking",
            Pattern::ActiveListening => "active_listening",
            Pattern::PassiveListening => "passive_listening",
        }
    }

    /// Pattern of an episode given only its origin and whether the visitor spoke.
    pub fn for_origin(origin: Origin, user_spoke: bool) -> Self {
        match origin {
            Origin::UserInitiated => Pattern::ActiveSpeaking,
            Origin::AgentToUser => Pattern::PassiveSpeaking,
            Origin::AgentToAgent if user_spoke => Pattern::ActiveListening,
            Origin::AgentToAgent => Pattern::PassiveListening,
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    UserInitiated,
    AgentToUser,
    AgentToAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeState {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Opening,
    Response,
    FollowUp,
    Join,
}

/// Where an agent's words came from. Visitor turns carry none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Scripted,
    Generated,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    ScriptEnd,
    Timeout,
    UserLeft,
    AgentMovedOn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub index: usize,
    pub speaker: String,
    pub text: String,
    pub tick: u64,
    pub kind: TurnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub exhibit_ref: Option<String>,
    pub participants: BTreeSet<String>,
    pub opener: String,
    pub turns: Vec<TurnRecord>,
    pub user_joined_at: Option<usize>,
    pub state: EpisodeState,
    pub origin: Origin,
    pub close_reason: Option<CloseReason>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConversationError {
    #[error("`{0}` is already in an open episode")]
    ParticipantBusy(String),
    #[error("origin {origin:?} is inconsistent with opener `{opener}`")]
    InvalidOrigin { opener: String, origin: Origin },
    #[error("invalid participants: {0}")]
    InvalidParticipants(String),
    #[error("episode `{0}` is closed")]
    EpisodeClosed(String),
    #[error("`{speaker}` is not a participant of episode `{episode}`")]
    NotAParticipant { episode: String, speaker: String },
    #[error("episode `{episode}` must be opened by `{opener}`")]
    NotOpener { episode: String, opener: String },
    #[error("episode `{0}` has no turns")]
    EmptyEpisode(String),
    #[error("unknown episode `{0}`")]
    UnknownEpisode(String),
}

impl Episode {
    pub fn is_open(&self) -> bool {
        self.state == EpisodeState::Open
    }

    pub fn user_spoke(&self) -> bool {
        self.turns.iter().any(|t| is_user(&t.speaker))
    }

    pub fn includes_user(&self) -> bool {
        self.participants.contains(USER_ID)
    }

    pub fn agents(&self) -> impl Iterator<Item = &str> {
        self.participants.iter().map(String::as_str).filter(|p| !is_user(p))
    }

    /// Pattern implied by the episode so far; defined before the first turn.
    pub fn pattern(&self) -> Pattern {
        Pattern::for_origin(self.origin, self.user_spoke())
    }

    /// A visitor answered an agent-initiated prompt.
    pub fn responded(&self) -> bool {
        self.origin == Origin::AgentToUser && self.user_spoke()
    }

    pub fn last_turn_tick(&self) -> Option<u64> {
        self.turns.last().map(|t| t.tick)
    }

    /// Append a turn, inferring its kind.
    pub fn add_turn(
        &mut self,
        speaker: &str,
        text: impl Into<String>,
        tick: u64,
        provenance: Option<Provenance>,
    ) -> Result<&TurnRecord, ConversationError> {
        if !self.is_open() {
            return Err(ConversationError::EpisodeClosed(self.id.clone()));
        }
        let index = self.turns.len();
        if index == 0 && speaker != self.opener {
            return Err(ConversationError::NotOpener { episode: self.id.clone(), opener: self.opener.clone() });
        }
        let user = is_user(speaker);
        let joining = user && self.origin == Origin::AgentToAgent && !self.participants.contains(speaker);
        if !joining && !self.participants.contains(speaker) {
            return Err(ConversationError::NotAParticipant { episode: self.id.clone(), speaker: speaker.to_string() });
        }
        let kind = if index == 0 {
            TurnKind::Opening
        } else if joining || (user && self.origin == Origin::AgentToAgent && !self.user_spoke()) {
            TurnKind::Join
        } else if user && self.user_spoke() {
            TurnKind::FollowUp
        } else {
            TurnKind::Response
        };
        if kind == TurnKind::Join {
            self.participants.insert(speaker.to_string());
            self.user_joined_at = Some(index);
        }
        self.turns.push(TurnRecord {
            index,
            speaker: speaker.to_string(),
            text: text.into(),
            tick,
            kind,
            provenance: if user { None } else { provenance },
        });
        Ok(self.turns.last().expect("just pushed"))
    }
}

/// Classify an episode with at least one turn.
pub fn classify(ep: &Episode) -> Result<Pattern, ConversationError> {
    if ep.turns.is_empty() {
        return Err(ConversationError::EmptyEpisode(ep.id.clone()));
    }
    Ok(ep.pattern())
}

/// All episodes of a session plus the busy index that enforces
/// "one open episode per agent".
#[derive(Debug, Clone, Default)]
pub struct EpisodeBook {
    episodes: IndexMap<String, Episode>,
    busy: BTreeMap<String, String>,
    next_id: u64,
}

impl EpisodeBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &str) -> Option<&Episode> {
        self.episodes.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.values()
    }

    pub fn open(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.values().filter(|e| e.is_open())
    }

    /// Open episode the agent currently belongs to.
    pub fn episode_of(&self, agent: &str) -> Option<&str> {
        self.busy.get(agent).map(String::as_str)
    }

    pub fn is_busy(&self, agent: &str) -> bool {
        self.busy.contains_key(agent)
    }

    /// Open episodes the visitor participates in.
    pub fn user_episodes(&self) -> impl Iterator<Item = &Episode> {
        self.open().filter(|e| e.includes_user())
    }

    pub fn open_episode(
        &mut self,
        opener: &str,
        addressees: &BTreeSet<String>,
        origin: Origin,
        exhibit_ref: Option<String>,
    ) -> Result<&Episode, ConversationError> {
        if addressees.is_empty() {
            return Err(ConversationError::InvalidParticipants("no addressees".into()));
        }
        if addressees.contains(opener) {
            return Err(ConversationError::InvalidParticipants(format!("`{opener}` cannot address itself")));
        }
        let invalid = || ConversationError::InvalidOrigin { opener: opener.to_string(), origin };
        let addresses_user = addressees.contains(USER_ID);
        match origin {
            Origin::UserInitiated if !is_user(opener) => return Err(invalid()),
            Origin::AgentToUser if is_user(opener) || !addresses_user || addressees.len() != 1 => return Err(invalid()),
            Origin::AgentToAgent if is_user(opener) || addresses_user => return Err(invalid()),
            _ => {}
        }
        for who in std::iter::once(opener).chain(addressees.iter().map(String::as_str)) {
            if !is_user(who) && self.busy.contains_key(who) {
                return Err(ConversationError::ParticipantBusy(who.to_string()));
            }
        }
        self.next_id += 1;
        let id = format!("ep-{:04}", self.next_id);
        let mut participants = addressees.clone();
        participants.insert(opener.to_string());
        for p in participants.iter().filter(|p| !is_user(p)) {
            self.busy.insert(p.clone(), id.clone());
        }
        let ep = Episode {
            id: id.clone(),
            exhibit_ref,
            participants,
            opener: opener.to_string(),
            turns: Vec::new(),
            user_joined_at: None,
            state: EpisodeState::Open,
            origin,
            close_reason: None,
        };
        self.episodes.insert(id.clone(), ep);
        Ok(&self.episodes[&id])
    }

    pub fn add_turn(
        &mut self,
        episode: &str,
        speaker: &str,
        text: impl Into<String>,
        tick: u64,
        provenance: Option<Provenance>,
    ) -> Result<TurnRecord, ConversationError> {
        let ep =
            self.episodes.get_mut(episode).ok_or_else(|| ConversationError::UnknownEpisode(episode.to_string()))?;
        ep.add_turn(speaker, text, tick, provenance).cloned()
    }

    /// Close an episode and release its agents.
    pub fn close_episode(&mut self, episode: &str, reason: CloseReason) -> Result<&Episode, ConversationError> {
        let ep =
            self.episodes.get_mut(episode).ok_or_else(|| ConversationError::UnknownEpisode(episode.to_string()))?;
        if !ep.is_open() {
            return Err(ConversationError::EpisodeClosed(episode.to_string()));
        }
        ep.state = EpisodeState::Closed;
        ep.close_reason = Some(reason);
        for p in &ep.participants {
            if self.busy.get(p).is_some_and(|e| e == episode) {
                self.busy.remove(p);
            }
        }
        Ok(&self.episodes[episode])
    }
}
