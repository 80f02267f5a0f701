//! A single visit: tick loop, SIMVIEWS/BASE rosters, client protocol,
//! label reveal and the append-only event log.
//!
//! All state is owned by [`Session`]; callers drive it with
//! [`Session::handle_client`] between calls to [`Session::run_tick`]. Remote
//! text generation runs on helper threads and is polled at tick boundaries.

pub mod config;
pub mod events;
pub mod guide;
pub mod protocol;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::behavior::{
    on_episode_closed, tick_agent, AgentRuntime, AnimationCue, BehaviorNode, CloseContext, Intent, NodeKind,
    ScriptOffer, TickContext,
};
use crate::content::{assign_personas, load_pack, Avatar, ContentError, ContentPack, Gender, PersonaCard};
use crate::conversation::{
    is_user, CloseReason, ConversationError, EpisodeBook, Origin, Pattern, Provenance, TurnRecord, USER_ID,
};
use crate::dialogue::{
    after_generated_reply, build_guide_prompt, build_prompt, generative_speaker, interject, next_scripted_turn,
    AfterReply, GenerationResult, PromptBundle, ScriptCursor, ScriptStep, TextGenerator, TranscriptLine,
};
use crate::world::{step_world, Point, Pose};

pub use config::{Condition, Radii, SessionConfig, Timing, DEFAULT_CLOCK_ORIGIN};
pub use events::{
    load_log, parse_ndjson, read_ndjson, to_ndjson, write_ndjson, AgentRole, EventKind, LogParseError, SessionLogEvent,
};
pub use guide::{GuideScript, NarrationSegment, GUIDE_ID, GUIDE_LABEL};
pub use protocol::{
    parse_client_message, AgentState, ClientMessage, EntityState, EpisodeSummary, ServerMessage, Snapshot,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Content(#[from] ContentError),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no such agent or episode `{0}`")]
    TargetNotFound(String),
    #[error("episode `{0}` cannot be joined")]
    NotJoinable(String),
    #[error("agent `{0}` is busy in another conversation")]
    TargetBusy(String),
    #[error("agent `{0}` is too far away to talk to")]
    TargetOutOfRange(String),
    #[error("visitor has not said Hello")]
    NotPresent,
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Content(_) => "content",
            SessionError::Config(_) => "config",
            SessionError::Protocol(_) => "protocol",
            SessionError::TargetNotFound(_) => "target_not_found",
            SessionError::NotJoinable(_) => "not_joinable",
            SessionError::TargetBusy(_) => "target_busy",
            SessionError::TargetOutOfRange(_) => "out_of_range",
            SessionError::NotPresent => "not_present",
            SessionError::Conversation(_) => "conversation",
            SessionError::Io(_) => "io",
        }
    }
}

const DEFAULT_GREETING: &str = "Hello! What do you make of this piece?";

struct AgentSlot {
    runtime: AgentRuntime,
    pose: Pose,
    role: AgentRole,
    card: Option<PersonaCard>,
    identity_label: String,
    avatar: Avatar,
    voice_id: String,
    cue: AnimationCue,
    emitted_node: NodeKind,
}

enum Flow {
    /// One agent talking with the visitor.
    Direct {
        agent: String,
    },
    Scripted {
        dialogue: String,
        cast: Vec<String>,
        cursor: ScriptCursor,
    },
    /// Guide narration followed by Q&A in the same episode.
    Narration {
        agent: String,
        next_segment: usize,
    },
}

struct Pending {
    agent: String,
    due: u64,
    ready: Option<GenerationResult>,
    rx: Option<Receiver<GenerationResult>>,
}

struct Live {
    flow: Flow,
    opened_at: u64,
    next_due: u64,
    pending: Option<Pending>,
    /// The visitor spoke and has not been answered yet.
    reply_owed: bool,
    greeting: bool,
}

pub struct Session {
    config: SessionConfig,
    pack: Arc<ContentPack>,
    exhibit_id: String,
    session_id: String,
    origin: DateTime<Utc>,
    generator: Arc<dyn TextGenerator>,
    deterministic: bool,
    rng: ChaCha8Rng,
    tick: u64,
    log: Vec<SessionLogEvent>,
    agents: BTreeMap<String, AgentSlot>,
    user: Option<Pose>,
    book: EpisodeBook,
    live: BTreeMap<String, Live>,
    revealed: BTreeSet<String>,
    played: BTreeSet<String>,
    guide_script: Option<GuideScript>,
    narrated: bool,
}

/// Load the configured pack and create a session.
pub fn create_session(config: SessionConfig) -> Result<Session, SessionError> {
    Session::new(config)
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        let pack = load_pack(&config.pack_path)?;
        Self::with_pack(Arc::new(pack), config)
    }

    pub fn with_pack(pack: Arc<ContentPack>, config: SessionConfig) -> Result<Self, SessionError> {
        let generator: Arc<dyn TextGenerator> = Arc::from(config.backend.build(&pack));
        let deterministic = config.backend.is_deterministic();
        Self::with_generator(pack, config, generator, deterministic)
    }

    /// Use a caller-supplied generator. Deterministic generators are called
    /// inline and their replies land after the configured thinking time;
    /// others run on a helper thread.
    pub fn with_generator(
        pack: Arc<ContentPack>,
        config: SessionConfig,
        generator: Arc<dyn TextGenerator>,
        deterministic: bool,
    ) -> Result<Self, SessionError> {
        let origin = config.validate().map_err(SessionError::Config)?;
        let exhibit = pack.exhibit(&config.exhibit_id)?;
        let exhibit_id = exhibit.id.clone();
        let session_id = config
            .session_id
            .clone()
            .unwrap_or_else(|| format!("{}-{}-s{}", exhibit_id, config.condition.as_str().to_lowercase(), config.seed));
        let mut s = Session {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            pack: pack.clone(),
            exhibit_id,
            session_id,
            origin,
            generator,
            deterministic,
            tick: 0,
            log: Vec::new(),
            agents: BTreeMap::new(),
            user: None,
            book: EpisodeBook::new(),
            live: BTreeMap::new(),
            revealed: BTreeSet::new(),
            played: BTreeSet::new(),
            guide_script: None,
            narrated: false,
            config,
        };
        s.push(EventKind::SessionStarted(events::SessionStarted {
            session_id: s.session_id.clone(),
            pack: pack.name.clone(),
            exhibit_id: s.exhibit_id.clone(),
            condition: s.config.condition,
            seed: s.config.seed,
            tick_hz: s.config.tick_hz,
            backend: s.generator.id().to_string(),
        }));
        match s.config.condition {
            Condition::Simviews => s.spawn_visitors()?,
            Condition::Base => s.spawn_guide()?,
        }
        Ok(s)
    }

    fn spawn_visitors(&mut self) -> Result<(), SessionError> {
        let mut cards = assign_personas(&self.pack, &self.exhibit_id, self.config.seed)?;
        cards.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
        let pack = self.pack.clone();
        let gallery = &pack.gallery;
        let mut spots: Vec<Point> = gallery.waypoints.iter().map(|w| w.point).collect();
        spots.shuffle(&mut self.rng);
        let fallback = gallery.zones.first().map(|z| z.rect.center()).unwrap_or(Point::new(0.0, 0.0));
        for (i, card) in cards.into_iter().enumerate() {
            let at = if spots.is_empty() { fallback } else { spots[i % spots.len()] };
            let mut pose = Pose::standing(card.agent_id.clone(), at);
            let node = match crate::behavior::fresh_waypoint(gallery, at, &mut self.rng) {
                Some(target) => {
                    pose.target = Some(target);
                    pose.speed = self.config.agent_speed;
                    BehaviorNode::Patrol { target }
                }
                None => BehaviorNode::Idle,
            };
            let cue = if node.kind() == NodeKind::Patrol { AnimationCue::Walk } else { AnimationCue::Stand };
            let slot = AgentSlot {
                runtime: AgentRuntime::new(card.agent_id.clone(), node, at),
                pose,
                role: AgentRole::Visitor,
                identity_label: card.identity_label.clone(),
                avatar: card.avatar.clone(),
                voice_id: card.voice.voice_id.clone(),
                card: Some(card),
                cue,
                emitted_node: NodeKind::Idle,
            };
            self.insert_agent(slot);
        }
        Ok(())
    }

    fn spawn_guide(&mut self) -> Result<(), SessionError> {
        let exhibit = self.pack.exhibit(&self.exhibit_id)?;
        let script = GuideScript::derive(exhibit);
        let at = self
            .pack
            .gallery
            .anchor(&self.exhibit_id)
            .ok_or_else(|| SessionError::Config(format!("exhibit `{}` has no anchor", self.exhibit_id)))?;
        let gender = if self.rng.gen_bool(0.5) { Gender::Female } else { Gender::Male };
        let avatar = Avatar { gender, appearance_seed: self.rng.gen::<u32>() as u64 };
        let voice_id = match gender {
            Gender::Female => "voice-f1",
            Gender::Male => "voice-m1",
        };
        let slot = AgentSlot {
            runtime: AgentRuntime::new(GUIDE_ID, self.guide_rest_node(), at),
            pose: Pose::standing(GUIDE_ID, at),
            role: AgentRole::Guide,
            card: None,
            identity_label: GUIDE_LABEL.to_string(),
            avatar,
            voice_id: voice_id.to_string(),
            cue: AnimationCue::Stand,
            emitted_node: NodeKind::Idle,
        };
        self.insert_agent(slot);
        self.guide_script = Some(script);
        Ok(())
    }

    fn guide_rest_node(&self) -> BehaviorNode {
        BehaviorNode::Viewing { exhibit_id: self.exhibit_id.clone(), dwell_remaining: f64::MAX }
    }

    fn insert_agent(&mut self, mut slot: AgentSlot) {
        slot.emitted_node = slot.runtime.node.kind();
        self.push(EventKind::AgentSpawned(events::AgentSpawned {
            agent_id: slot.runtime.agent_id.clone(),
            role: slot.role,
            x: round3(slot.pose.position.x),
            y: round3(slot.pose.position.y),
            node: slot.emitted_node.as_str().to_string(),
            avatar: slot.avatar.clone(),
            voice_id: slot.voice_id.clone(),
        }));
        self.agents.insert(slot.runtime.agent_id.clone(), slot);
    }

    // ---- accessors -------------------------------------------------------

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn pack(&self) -> &ContentPack {
        &self.pack
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn exhibit_id(&self) -> &str {
        &self.exhibit_id
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Simulated seconds since start.
    pub fn now_s(&self) -> f64 {
        self.tick as f64 / self.config.tick_hz as f64
    }

    pub fn log(&self) -> &[SessionLogEvent] {
        &self.log
    }

    pub fn episodes(&self) -> &EpisodeBook {
        &self.book
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.agents.keys().cloned().collect()
    }

    pub fn agent_position(&self, agent: &str) -> Option<Point> {
        self.agents.get(agent).map(|a| a.pose.position)
    }

    pub fn agent_node(&self, agent: &str) -> Option<&BehaviorNode> {
        self.agents.get(agent).map(|a| &a.runtime.node)
    }

    /// Operator view of an agent's persona; never sent to clients.
    pub fn persona(&self, agent: &str) -> Option<&PersonaCard> {
        self.agents.get(agent).and_then(|a| a.card.as_ref())
    }

    /// Agent holding `viewpoint_ref` in SIMVIEWS sessions.
    pub fn agent_for_viewpoint(&self, viewpoint_ref: &str) -> Option<&str> {
        self.agents
            .values()
            .find(|a| a.card.as_ref().is_some_and(|c| c.viewpoint_ref == viewpoint_ref))
            .map(|a| a.runtime.agent_id.as_str())
    }

    pub fn user_position(&self) -> Option<Point> {
        self.user.as_ref().map(|u| u.position)
    }

    pub fn guide_script(&self) -> Option<&GuideScript> {
        self.guide_script.as_ref()
    }

    pub fn is_revealed(&self, agent: &str) -> bool {
        self.revealed.contains(agent)
    }

    /// Write the log as `.ndjson`.
    pub fn export_log(&self, path: impl AsRef<Path>) -> Result<(), SessionError> {
        write_ndjson(&self.log, path)?;
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        to_ndjson(&self.log)
    }

    // ---- logging ---------------------------------------------------------

    fn wall_time(&self) -> String {
        let micros = (self.tick as i64 * 1_000_000) / self.config.tick_hz as i64;
        (self.origin + Duration::microseconds(micros)).format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
    }

    fn push(&mut self, event: EventKind) {
        let ev = SessionLogEvent { seq: self.log.len() as u64, tick: self.tick, wall_time: self.wall_time(), event };
        self.log.push(ev);
    }

    fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{}: {message}", self.session_id);
        self.push(EventKind::Warning(events::Warning { message }));
    }

    fn events_since(&self, start: usize) -> Vec<ServerMessage> {
        self.log[start..].iter().map(|e| ServerMessage::Event { event: e.clone() }).collect()
    }

    fn ticks(&self, seconds: f64) -> u64 {
        self.config.ticks(seconds)
    }

    // ---- tick loop -------------------------------------------------------

    /// Advance one tick and return the events it produced.
    pub fn run_tick(&mut self) -> Vec<ServerMessage> {
        let start = self.log.len();
        self.tick += 1;
        self.step_world();
        self.close_departed();
        self.apply_generations();
        self.start_narration();
        self.play_due_turns();
        self.close_stale();
        self.tick_behaviors();
        self.sync_nodes();
        self.events_since(start)
    }

    pub fn run_ticks(&mut self, n: u64) -> Vec<ServerMessage> {
        (0..n).flat_map(|_| self.run_tick()).collect()
    }

    fn step_world(&mut self) {
        let dt = 1.0 / self.config.tick_hz as f64;
        let mut poses: Vec<Pose> = self.agents.values().map(|a| a.pose.clone()).collect();
        if let Some(u) = &self.user {
            poses.push(u.clone());
        }
        if poses.is_empty() {
            return;
        }
        let (next, _) = step_world(&self.pack.gallery, &poses, dt, &[], self.tick);
        for (before, after) in poses.iter().zip(next) {
            if before.position == after.position {
                continue;
            }
            let (node, cue) = match self.agents.get_mut(&after.entity_id) {
                Some(slot) => {
                    slot.pose = after.clone();
                    slot.runtime.position = after.position;
                    (Some(slot.runtime.node.kind().as_str().to_string()), Some(slot.cue.as_str().to_string()))
                }
                None => {
                    self.user = Some(after.clone());
                    (None, None)
                }
            };
            let speed = if after.arrived() { 0.0 } else { after.speed };
            self.push(EventKind::PoseUpdated(events::PoseUpdated {
                entity: after.entity_id.clone(),
                x: round3(after.position.x),
                y: round3(after.position.y),
                heading: round3(after.heading),
                speed,
                node,
                cue,
            }));
        }
    }

    fn user_distance(&self, agent: &str) -> Option<f64> {
        let u = self.user.as_ref()?;
        Some(self.agents.get(agent)?.pose.position.distance(&u.position))
    }

    fn close_departed(&mut self) {
        let overhear = self.config.radii.overhear;
        let mut leaving = Vec::new();
        for (id, live) in &self.live {
            let agent = match &live.flow {
                Flow::Direct { agent } => agent,
                Flow::Narration { agent, next_segment } if *next_segment >= self.narration_len() => agent,
                _ => continue,
            };
            if self.user_distance(agent).is_none_or(|d| d > overhear) {
                leaving.push(id.clone());
            }
        }
        for id in leaving {
            self.close(&id, CloseReason::UserLeft);
        }
    }

    fn narration_len(&self) -> usize {
        self.guide_script.as_ref().map_or(0, |g| g.segments.len())
    }

    fn apply_generations(&mut self) {
        let ids: Vec<String> = self.live.keys().cloned().collect();
        for id in ids {
            let tick = self.tick;
            let Some(live) = self.live.get_mut(&id) else { continue };
            let Some(p) = live.pending.as_mut() else { continue };
            if p.ready.is_none() {
                if let Some(rx) = &p.rx {
                    match rx.try_recv() {
                        Ok(r) => p.ready = Some(r),
                        Err(TryRecvError::Empty) => continue,
                        Err(TryRecvError::Disconnected) => {
                            p.ready = Some(GenerationResult {
                                text: String::new(),
                                backend_id: "none".into(),
                                latency_ms: 0,
                                fallback_used: true,
                            })
                        }
                    }
                }
            }
            if tick < p.due || p.ready.is_none() {
                continue;
            }
            let p = live.pending.take().expect("checked above");
            let mut result = p.ready.expect("checked above");
            if result.text.trim().is_empty() {
                result.text = self.fallback_line(&p.agent);
                result.fallback_used = true;
            }
            self.apply_reply(&id, &p.agent, result);
        }
    }

    fn fallback_line(&self, agent: &str) -> String {
        let exhibit = self.pack.exhibit(&self.exhibit_id).expect("exhibit checked at start");
        match self.agents.get(agent).and_then(|a| a.card.as_ref()) {
            Some(card) => exhibit.viewpoint(&card.viewpoint_ref).map(|v| v.fallback()).unwrap_or_default(),
            None => build_guide_prompt(exhibit, &[], "", 0).persona.fallback_line,
        }
    }

    fn apply_reply(&mut self, episode: &str, agent: &str, result: GenerationResult) {
        let provenance = if result.fallback_used { Provenance::Fallback } else { Provenance::Generated };
        if let Some(slot) = self.agents.get_mut(agent) {
            slot.cue = AnimationCue::Talk;
        }
        if let Err(e) = self.add_turn(episode, agent, &result.text, Some(provenance), None) {
            self.warn(format!("dropped reply from {agent} in {episode}: {e}"));
            return;
        }
        let k = self.config.timing.replies_before_resume;
        let cadence = self.ticks(self.config.timing.script_turn_interval_s);
        let tick = self.tick;
        let Some(live) = self.live.get_mut(episode) else { return };
        match &mut live.flow {
            Flow::Direct { agent } | Flow::Narration { agent, .. } => {
                if live.reply_owed {
                    live.reply_owed = false;
                    let agent = agent.clone();
                    self.dispatch(episode, &agent);
                }
            }
            Flow::Scripted { dialogue, cast, cursor } => {
                let Some(d) = self.pack.dialogue(dialogue) else { return };
                let (next, action) = after_generated_reply(cursor, d, k);
                let speaker = generative_speaker(&next, d, cast, Some(agent));
                *cursor = next;
                match action {
                    AfterReply::KeepGenerating => self.dispatch(episode, &speaker),
                    AfterReply::ResumeScript => live.next_due = tick + cadence,
                    AfterReply::Finish => self.close(episode, CloseReason::ScriptEnd),
                }
            }
        }
    }

    fn start_narration(&mut self) {
        if self.narrated || self.guide_script.is_none() || self.user.is_none() || self.book.is_busy(GUIDE_ID) {
            return;
        }
        self.narrated = true;
        let addressees = BTreeSet::from([USER_ID.to_string()]);
        let id = match self.open_episode(GUIDE_ID, &addressees, Origin::AgentToUser, None) {
            Ok(id) => id,
            Err(e) => return self.warn(format!("narration did not start: {e}")),
        };
        self.enter_converse(GUIDE_ID, &id, Pattern::PassiveSpeaking);
        self.live.insert(
            id.clone(),
            Live {
                flow: Flow::Narration { agent: GUIDE_ID.to_string(), next_segment: 0 },
                opened_at: self.tick,
                next_due: self.tick,
                pending: None,
                reply_owed: false,
                greeting: false,
            },
        );
        self.play_narration(&id);
    }

    fn play_due_turns(&mut self) {
        let ids: Vec<String> = self.live.keys().cloned().collect();
        for id in ids {
            let Some(live) = self.live.get(&id) else { continue };
            if live.pending.is_some() || self.tick < live.next_due {
                continue;
            }
            match &live.flow {
                Flow::Scripted { cursor, .. } if !cursor.paused_for_join => self.play_script(&id),
                Flow::Narration { next_segment, .. } if *next_segment < self.narration_len() => {
                    self.play_narration(&id)
                }
                _ => {}
            }
        }
    }

    fn play_script(&mut self, id: &str) {
        let cadence = self.ticks(self.config.timing.script_turn_interval_s);
        let Some(Live { flow: Flow::Scripted { dialogue, cast, cursor }, .. }) = self.live.get(id) else { return };
        let Some(d) = self.pack.dialogue(dialogue) else { return };
        match next_scripted_turn(cursor, d, cast) {
            Ok(ScriptStep::Turn(line, next)) => {
                if let Some(Live { flow: Flow::Scripted { cursor, .. }, next_due, .. }) = self.live.get_mut(id) {
                    *cursor = next;
                    *next_due = self.tick + cadence;
                }
                if let Some(slot) = self.agents.get_mut(&line.speaker) {
                    slot.cue = AnimationCue::Talk;
                }
                if let Err(e) = self.add_turn(id, &line.speaker, &line.text, Some(Provenance::Scripted), None) {
                    self.warn(format!("scripted turn dropped in {id}: {e}"));
                }
            }
            Ok(ScriptStep::End) => self.close(id, CloseReason::ScriptEnd),
            Err(e) => self.warn(format!("script playback in {id}: {e}")),
        }
    }

    fn play_narration(&mut self, id: &str) {
        let cadence = self.ticks(self.config.timing.script_turn_interval_s);
        let Some(Live { flow: Flow::Narration { next_segment, agent }, .. }) = self.live.get(id) else { return };
        let (i, agent) = (*next_segment, agent.clone());
        let Some(seg) = self.guide_script.as_ref().and_then(|g| g.segments.get(i)).cloned() else { return };
        if let Some(Live { flow: Flow::Narration { next_segment, .. }, next_due, .. }) = self.live.get_mut(id) {
            *next_segment += 1;
            *next_due = self.tick + cadence;
        }
        if let Err(e) = self.add_turn(id, &agent, &seg.text, Some(Provenance::Scripted), Some(seg.viewpoint_ref)) {
            self.warn(format!("narration dropped in {id}: {e}"));
            return;
        }
        // Questions asked during the narration are answered once it ends.
        let done = i + 1 >= self.narration_len();
        if let Some(live) = self.live.get_mut(id) {
            if done && live.reply_owed && live.pending.is_none() {
                live.reply_owed = false;
                self.dispatch(id, &agent);
            }
        }
    }

    fn close_stale(&mut self) {
        let timeout = self.ticks(self.config.timing.episode_timeout_s);
        let patience = self.ticks(self.config.timing.greet_patience_s);
        let n = self.narration_len();
        let mut closing = Vec::new();
        for (id, live) in &self.live {
            if live.pending.is_some() {
                continue;
            }
            if let Flow::Narration { next_segment, .. } = &live.flow {
                if *next_segment < n {
                    continue;
                }
            }
            let Some(ep) = self.book.get(id) else { continue };
            if live.greeting && !ep.user_spoke() && self.tick >= live.opened_at + patience {
                closing.push((id.clone(), CloseReason::AgentMovedOn));
                continue;
            }
            let last = ep.last_turn_tick().unwrap_or(live.opened_at);
            if self.tick >= last + timeout {
                closing.push((id.clone(), CloseReason::Timeout));
            }
        }
        for (id, reason) in closing {
            self.close(&id, reason);
        }
    }

    fn script_offers(&mut self) -> Vec<ScriptOffer> {
        let by_viewpoint: BTreeMap<&str, &str> = self
            .agents
            .values()
            .filter_map(|a| a.card.as_ref().map(|c| (c.viewpoint_ref.as_str(), a.runtime.agent_id.as_str())))
            .collect();
        let mut offers = Vec::new();
        let mut all = Vec::new();
        for d in self.pack.dialogues_for(&self.exhibit_id) {
            let cast: Option<Vec<String>> =
                d.roles.iter().map(|r| by_viewpoint.get(r.as_str()).map(|s| s.to_string())).collect();
            let Some(cast) = cast else { continue };
            let offer = ScriptOffer { dialogue_id: d.id.clone(), cast };
            if !self.played.contains(&d.id) {
                offers.push(offer.clone());
            }
            all.push(offer);
        }
        if offers.is_empty() && !all.is_empty() {
            // Every dialogue has been heard; start the rotation again.
            self.played.clear();
            return all;
        }
        offers
    }

    fn tick_behaviors(&mut self) {
        if self.config.condition == Condition::Base {
            return;
        }
        let now = self.now_s();
        let dt = 1.0 / self.config.tick_hz as f64;
        let opportunity = self.tick.is_multiple_of(self.ticks(self.config.behavior.opportunity_interval_s));
        let pack = self.pack.clone();
        let behavior = self.config.behavior.clone();
        let offers = self.script_offers();
        let ids: Vec<String> = self.agents.keys().cloned().collect();
        for id in ids {
            let user_free = self.user.is_some() && self.book.user_episodes().next().is_none();
            let in_range = user_free && self.user_distance(&id).is_some_and(|d| d <= self.config.radii.greet);
            let available: BTreeSet<String> = match &self.agents[&id].runtime.node {
                BehaviorNode::Viewing { exhibit_id, .. } => self
                    .agents
                    .values()
                    .filter(|a| {
                        matches!(&a.runtime.node, BehaviorNode::Viewing { exhibit_id: e, .. } if e == exhibit_id)
                            && !self.book.is_busy(&a.runtime.agent_id)
                    })
                    .map(|a| a.runtime.agent_id.clone())
                    .collect(),
                _ => BTreeSet::new(),
            };
            let runtime = self.agents[&id].runtime.clone();
            let (node, intents) = {
                let mut ctx = TickContext {
                    now,
                    dt,
                    opportunity,
                    user_in_greet_range: in_range,
                    gallery: &pack.gallery,
                    viewing_radius: self.config.radii.viewing,
                    available_here: &available,
                    script_offers: &offers,
                    config: &behavior,
                    rng: &mut self.rng,
                };
                tick_agent(&runtime, &mut ctx)
            };
            // Conversation intents settle the node themselves.
            let mut node = Some(node);
            for intent in intents {
                match intent {
                    Intent::GreetUser => {
                        node = None;
                        if let Err(e) = self.greet(&id) {
                            self.warn(format!("{id} could not greet: {e}"));
                        }
                    }
                    Intent::StartScriptedDialogue { dialogue_id, cast } => {
                        node = None;
                        if let Err(e) = self.start_scripted(&dialogue_id, cast) {
                            self.warn(format!("{id} could not start {dialogue_id}: {e}"));
                        }
                    }
                    Intent::MoveTo(p) => {
                        let speed = self.config.agent_speed;
                        let slot = self.agents.get_mut(&id).expect("agent exists");
                        slot.pose.target = Some(p);
                        slot.pose.speed = speed;
                    }
                    Intent::EmitAnimationCue(c) => self.agents.get_mut(&id).expect("agent exists").cue = c,
                }
            }
            if let Some(node) = node {
                self.agents.get_mut(&id).expect("agent exists").runtime.node = node;
            }
        }
    }

    /// Emit a pose record for every agent whose node kind changed.
    fn sync_nodes(&mut self) {
        let mut changed = Vec::new();
        for slot in self.agents.values_mut() {
            let kind = slot.runtime.node.kind();
            if kind != slot.emitted_node {
                slot.emitted_node = kind;
                changed.push(events::PoseUpdated {
                    entity: slot.runtime.agent_id.clone(),
                    x: round3(slot.pose.position.x),
                    y: round3(slot.pose.position.y),
                    heading: round3(slot.pose.heading),
                    speed: if slot.pose.is_moving() { slot.pose.speed } else { 0.0 },
                    node: Some(kind.as_str().to_string()),
                    cue: Some(slot.cue.as_str().to_string()),
                });
            }
        }
        for p in changed {
            self.push(EventKind::PoseUpdated(p));
        }
    }

    // ---- episodes --------------------------------------------------------

    fn open_episode(
        &mut self,
        opener: &str,
        addressees: &BTreeSet<String>,
        origin: Origin,
        dialogue_ref: Option<String>,
    ) -> Result<String, SessionError> {
        let ep = self.book.open_episode(opener, addressees, origin, Some(self.exhibit_id.clone()))?;
        let opened = events::EpisodeOpened {
            episode: ep.id.clone(),
            origin: ep.origin,
            opener: ep.opener.clone(),
            participants: ep.participants.iter().cloned().collect(),
            exhibit_ref: ep.exhibit_ref.clone(),
            pattern: ep.pattern(),
            dialogue_ref,
        };
        let id = ep.id.clone();
        self.push(EventKind::EpisodeOpened(opened));
        Ok(id)
    }

    /// Lock an agent into an episode and stop it where it stands.
    fn enter_converse(&mut self, agent: &str, episode: &str, pattern: Pattern) {
        if let Some(slot) = self.agents.get_mut(agent) {
            slot.runtime.node = BehaviorNode::Converse { episode_id: Some(episode.to_string()), pattern };
            slot.pose.target = None;
            slot.pose.speed = 0.0;
            slot.cue = AnimationCue::Talk;
        }
    }

    fn greet(&mut self, agent: &str) -> Result<String, SessionError> {
        let addressees = BTreeSet::from([USER_ID.to_string()]);
        let id = self.open_episode(agent, &addressees, Origin::AgentToUser, None)?;
        self.enter_converse(agent, &id, Pattern::PassiveSpeaking);
        self.live.insert(
            id.clone(),
            Live {
                flow: Flow::Direct { agent: agent.to_string() },
                opened_at: self.tick,
                next_due: self.tick,
                pending: None,
                reply_owed: false,
                greeting: true,
            },
        );
        let exhibit = self.pack.exhibit(&self.exhibit_id)?;
        let text = self
            .agents
            .get(agent)
            .and_then(|a| a.card.as_ref())
            .and_then(|c| exhibit.viewpoint(&c.viewpoint_ref))
            .and_then(|v| v.greeting.clone())
            .unwrap_or_else(|| DEFAULT_GREETING.to_string());
        self.add_turn(&id, agent, &text, Some(Provenance::Scripted), None)?;
        Ok(id)
    }

    fn start_scripted(&mut self, dialogue_id: &str, cast: Vec<String>) -> Result<String, SessionError> {
        let d = self.pack.dialogue(dialogue_id).ok_or_else(|| SessionError::TargetNotFound(dialogue_id.to_string()))?;
        let first =
            d.turns.first().ok_or_else(|| SessionError::Config(format!("dialogue `{dialogue_id}` is empty")))?;
        let opener = cast[first.role].clone();
        let addressees: BTreeSet<String> = cast.iter().filter(|a| **a != opener).cloned().collect();
        let id = self.open_episode(&opener, &addressees, Origin::AgentToAgent, Some(dialogue_id.to_string()))?;
        for a in &cast {
            self.enter_converse(a, &id, Pattern::PassiveListening);
        }
        self.played.insert(dialogue_id.to_string());
        self.live.insert(
            id.clone(),
            Live {
                flow: Flow::Scripted {
                    dialogue: dialogue_id.to_string(),
                    cast,
                    cursor: ScriptCursor::new(dialogue_id),
                },
                opened_at: self.tick,
                next_due: self.tick,
                pending: None,
                reply_owed: false,
                greeting: false,
            },
        );
        self.play_script(&id);
        Ok(id)
    }

    /// Start a scripted agent-agent dialogue now, bypassing the behavior
    /// rolls. The cast is resolved from the dialogue's viewpoint roles.
    pub fn start_dialogue(&mut self, dialogue_id: &str) -> Result<String, SessionError> {
        let d = self.pack.dialogue(dialogue_id).ok_or_else(|| SessionError::TargetNotFound(dialogue_id.to_string()))?;
        let mut cast = Vec::new();
        for role in &d.roles {
            let agent = self
                .agents
                .values()
                .find(|a| a.card.as_ref().is_some_and(|c| &c.viewpoint_ref == role))
                .ok_or_else(|| SessionError::TargetNotFound(role.clone()))?;
            cast.push(agent.runtime.agent_id.clone());
        }
        let res = self.start_scripted(dialogue_id, cast);
        self.sync_nodes();
        res
    }

    fn add_turn(
        &mut self,
        episode: &str,
        speaker: &str,
        text: &str,
        provenance: Option<Provenance>,
        viewpoint_ref: Option<String>,
    ) -> Result<TurnRecord, SessionError> {
        let before = self.book.get(episode).map(|e| e.pattern());
        let rec = self.book.add_turn(episode, speaker, text, self.tick, provenance)?;
        let ep = self.book.get(episode).expect("turn was just added");
        let after = ep.pattern();
        let includes_user = ep.includes_user();
        let agents: Vec<String> = ep.agents().map(str::to_string).collect();
        let audible = includes_user || self.user_distance(speaker).is_some_and(|d| d <= self.config.radii.overhear);
        let voice_id = self.agents.get(speaker).map(|a| a.voice_id.clone());
        self.push(EventKind::TurnAdded(events::TurnAdded {
            episode: episode.to_string(),
            index: rec.index,
            speaker: rec.speaker.clone(),
            kind: rec.kind,
            text: rec.text.clone(),
            provenance: rec.provenance,
            voice_id,
            audible,
            viewpoint_ref,
        }));
        if let Some(from) = before.filter(|p| *p != after) {
            self.push(EventKind::PatternChanged(events::PatternChanged {
                episode: episode.to_string(),
                from,
                to: after,
            }));
            for a in &agents {
                if let Some(slot) = self.agents.get_mut(a) {
                    if let BehaviorNode::Converse { pattern, .. } = &mut slot.runtime.node {
                        *pattern = after;
                    }
                }
            }
        }
        // Interaction reveals labels: the visitor speaking reveals everyone
        // in the episode, an agent addressing the visitor reveals itself.
        if includes_user {
            if is_user(speaker) {
                for a in &agents {
                    self.reveal(a);
                }
            } else {
                self.reveal(speaker);
            }
        }
        Ok(rec)
    }

    fn reveal(&mut self, agent: &str) {
        if !self.revealed.insert(agent.to_string()) {
            return;
        }
        let Some(label) = self.agents.get(agent).map(|a| a.identity_label.clone()) else { return };
        self.push(EventKind::LabelRevealed(events::LabelRevealed {
            agent_id: agent.to_string(),
            identity_label: label,
        }));
    }

    fn close(&mut self, episode: &str, reason: CloseReason) {
        let (pattern, agents) = match self.book.close_episode(episode, reason) {
            Ok(ep) => (ep.pattern(), ep.agents().map(str::to_string).collect::<Vec<_>>()),
            Err(e) => return self.warn(format!("close {episode}: {e}")),
        };
        self.live.remove(episode);
        self.push(EventKind::EpisodeClosed(events::EpisodeClosed { episode: episode.to_string(), reason, pattern }));
        let now = self.now_s();
        let pack = self.pack.clone();
        for a in agents {
            let rest = self.guide_rest_node();
            let Some(slot) = self.agents.get_mut(&a) else { continue };
            if slot.role == AgentRole::Guide {
                slot.runtime.node = rest;
                slot.cue = AnimationCue::Stand;
                continue;
            }
            let mut ctx = CloseContext {
                now,
                gallery: &pack.gallery,
                viewing_radius: self.config.radii.viewing,
                config: &self.config.behavior,
                rng: &mut self.rng,
            };
            match on_episode_closed(&mut slot.runtime, episode, &mut ctx) {
                Ok((_, intents)) => {
                    for i in intents {
                        match i {
                            Intent::MoveTo(p) => {
                                slot.pose.target = Some(p);
                                slot.pose.speed = self.config.agent_speed;
                            }
                            Intent::EmitAnimationCue(c) => slot.cue = c,
                            _ => {}
                        }
                    }
                }
                Err(e) => {
                    let msg = e.to_string();
                    self.warn(msg);
                }
            }
        }
    }

    // ---- generation ------------------------------------------------------

    fn prompt_for(&self, episode: &str, agent: &str) -> Option<PromptBundle> {
        let ep = self.book.get(episode)?;
        let exhibit = self.pack.exhibit(&self.exhibit_id).ok()?;
        let last_user = ep.turns.iter().rposition(|t| is_user(&t.speaker));
        let utterance = last_user.map(|i| ep.turns[i].text.clone()).unwrap_or_default();
        let window: Vec<TranscriptLine> = ep
            .turns
            .iter()
            .filter(|t| Some(t.index) != last_user)
            .map(|t| TranscriptLine {
                speaker: if is_user(&t.speaker) {
                    "Visitor".to_string()
                } else {
                    self.agents.get(&t.speaker).map(|a| a.identity_label.clone()).unwrap_or_else(|| t.speaker.clone())
                },
                text: t.text.clone(),
            })
            .collect();
        let k = self.config.timing.transcript_window;
        let slot = self.agents.get(agent)?;
        match &slot.card {
            Some(card) => build_prompt(card, exhibit, &window, &utterance, k).ok(),
            None => Some(build_guide_prompt(exhibit, &window, &utterance, k)),
        }
    }

    /// Ask `agent` for a reply in `episode`. At most one request per episode
    /// is in flight.
    fn dispatch(&mut self, episode: &str, agent: &str) {
        if self.live.get(episode).is_none_or(|l| l.pending.is_some()) {
            return;
        }
        let Some(bundle) = self.prompt_for(episode, agent) else {
            return self.warn(format!("no prompt for {agent} in {episode}"));
        };
        let think = self.ticks(self.config.timing.think_s);
        let pending = if self.deterministic {
            Pending {
                agent: agent.to_string(),
                due: self.tick + think,
                ready: Some(self.generator.generate(&bundle)),
                rx: None,
            }
        } else {
            let (tx, rx) = mpsc::channel();
            let generator = self.generator.clone();
            std::thread::spawn(move || {
                let _ = tx.send(generator.generate(&bundle));
            });
            Pending { agent: agent.to_string(), due: self.tick + 1, ready: None, rx: Some(rx) }
        };
        if let Some(slot) = self.agents.get_mut(agent) {
            slot.cue = AnimationCue::Think;
        }
        self.live.get_mut(episode).expect("checked above").pending = Some(pending);
        self.push(EventKind::ThinkingStarted(events::ThinkingStarted {
            episode: episode.to_string(),
            agent_id: agent.to_string(),
        }));
    }

    // ---- client protocol -------------------------------------------------

    /// Apply one client message. The returned messages are the events it
    /// produced, plus a snapshot for `Hello` and `Inspect`.
    pub fn handle_client(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>, SessionError> {
        let start = self.log.len();
        self.push(EventKind::ClientMessage(msg.clone()));
        let result = self.apply_client(msg);
        self.sync_nodes();
        let snapshot = result?;
        let mut out = self.events_since(start);
        if let Some(snapshot) = snapshot {
            out.push(ServerMessage::Snapshot { snapshot });
        }
        Ok(out)
    }

    fn apply_client(&mut self, msg: ClientMessage) -> Result<Option<Snapshot>, SessionError> {
        match msg {
            ClientMessage::Hello { .. } => {
                if self.user.is_none() {
                    let at = self.pack.gallery.entrance();
                    self.user = Some(Pose::standing(USER_ID, at));
                    self.push(EventKind::PoseUpdated(events::PoseUpdated {
                        entity: USER_ID.to_string(),
                        x: round3(at.x),
                        y: round3(at.y),
                        heading: 0.0,
                        speed: 0.0,
                        node: None,
                        cue: None,
                    }));
                }
                Ok(Some(self.snapshot(None)?))
            }
            ClientMessage::Move { x, y } => {
                let p = Point::new(x, y);
                if !x.is_finite() || !y.is_finite() || !self.pack.gallery.zones.iter().any(|z| z.rect.contains(&p)) {
                    return Err(SessionError::Protocol(format!("({x}, {y}) is outside the gallery")));
                }
                let speed = self.config.user_speed;
                let user = self.user.as_mut().ok_or(SessionError::NotPresent)?;
                user.target = Some(p);
                user.speed = speed;
                Ok(None)
            }
            ClientMessage::Say { target, episode, text } => {
                self.say(target, episode, &text)?;
                Ok(None)
            }
            ClientMessage::Join { episode, text } => {
                self.require_user()?;
                self.join(&episode, &text)?;
                Ok(None)
            }
            ClientMessage::Inspect { agent } => Ok(Some(self.snapshot(Some(&agent))?)),
            ClientMessage::Bye => {
                self.require_user()?;
                let mine: Vec<String> = self.book.user_episodes().map(|e| e.id.clone()).collect();
                for id in mine {
                    self.close(&id, CloseReason::UserLeft);
                }
                self.user = None;
                Ok(None)
            }
        }
    }

    fn require_user(&self) -> Result<(), SessionError> {
        self.user.as_ref().map(|_| ()).ok_or(SessionError::NotPresent)
    }

    fn say(&mut self, target: Option<String>, episode: Option<String>, text: &str) -> Result<(), SessionError> {
        self.require_user()?;
        if text.trim().is_empty() {
            return Err(SessionError::Protocol("empty utterance".into()));
        }
        if let Some(id) = episode {
            let ep = self.book.get(&id).ok_or_else(|| SessionError::TargetNotFound(id.clone()))?;
            if !ep.is_open() {
                return Err(SessionError::NotJoinable(id));
            }
            return if ep.includes_user() {
                self.user_turn(&id, text)
            } else if ep.origin == Origin::AgentToAgent {
                self.join(&id, text)
            } else {
                Err(SessionError::NotJoinable(id))
            };
        }
        let target = match target {
            Some(t) => t,
            None => {
                let mine: Vec<String> = self.book.user_episodes().map(|e| e.id.clone()).collect();
                return match mine.as_slice() {
                    [only] => self.user_turn(&only.clone(), text),
                    _ => Err(SessionError::TargetNotFound("(no target)".into())),
                };
            }
        };
        if !self.agents.contains_key(&target) {
            return Err(SessionError::TargetNotFound(target));
        }
        if let Some(id) = self.book.episode_of(&target).map(str::to_string) {
            let ep = self.book.get(&id).expect("busy index points at open episodes");
            return if ep.includes_user() {
                self.user_turn(&id, text)
            } else if ep.origin == Origin::AgentToAgent {
                self.join(&id, text)
            } else {
                Err(SessionError::TargetBusy(target))
            };
        }
        if self.agents[&target].runtime.node.kind() == NodeKind::Idle {
            return Err(SessionError::TargetBusy(target));
        }
        if self.user_distance(&target).is_none_or(|d| d > self.config.radii.overhear) {
            return Err(SessionError::TargetOutOfRange(target));
        }
        let addressees = BTreeSet::from([target.clone()]);
        let id = self.open_episode(USER_ID, &addressees, Origin::UserInitiated, None)?;
        self.enter_converse(&target, &id, Pattern::ActiveSpeaking);
        self.live.insert(
            id.clone(),
            Live {
                flow: Flow::Direct { agent: target },
                opened_at: self.tick,
                next_due: self.tick,
                pending: None,
                reply_owed: false,
                greeting: false,
            },
        );
        self.user_turn(&id, text)
    }

    fn join(&mut self, id: &str, text: &str) -> Result<(), SessionError> {
        let ep = self.book.get(id).ok_or_else(|| SessionError::TargetNotFound(id.to_string()))?;
        if !ep.is_open() || ep.origin != Origin::AgentToAgent {
            return Err(SessionError::NotJoinable(id.to_string()));
        }
        if !ep.includes_user() {
            let overhear = self.config.radii.overhear;
            let near = ep.agents().any(|a| self.user_distance(a).is_some_and(|d| d <= overhear));
            if !near {
                return Err(SessionError::NotJoinable(id.to_string()));
            }
        }
        self.user_turn(id, text)
    }

    fn user_turn(&mut self, id: &str, text: &str) -> Result<(), SessionError> {
        let rec = self.add_turn(id, USER_ID, text, None, None)?;
        let n = self.narration_len();
        let Some(live) = self.live.get_mut(id) else { return Ok(()) };
        match &mut live.flow {
            Flow::Direct { agent } => {
                if live.pending.is_some() {
                    live.reply_owed = true;
                } else {
                    let agent = agent.clone();
                    self.dispatch(id, &agent);
                }
            }
            Flow::Narration { agent, next_segment } => {
                if live.pending.is_some() || *next_segment < n {
                    live.reply_owed = true;
                } else {
                    let agent = agent.clone();
                    self.dispatch(id, &agent);
                }
            }
            Flow::Scripted { dialogue, cast, cursor } => {
                let ep = self.book.get(id).expect("turn was just added");
                *cursor = interject(cursor, ep, &rec).map_err(|e| SessionError::Protocol(e.to_string()))?;
                if live.pending.is_none() {
                    let last_agent = ep.turns.iter().rev().find(|t| !is_user(&t.speaker)).map(|t| t.speaker.as_str());
                    let d = self.pack.dialogue(dialogue).expect("dialogue exists while playing");
                    let speaker = generative_speaker(cursor, d, cast, last_agent);
                    self.dispatch(id, &speaker);
                }
            }
        }
        Ok(())
    }

    // ---- snapshots -------------------------------------------------------

    /// Public state. Identity labels appear only for revealed agents.
    pub fn snapshot(&self, only_agent: Option<&str>) -> Result<Snapshot, SessionError> {
        if let Some(a) = only_agent {
            if !self.agents.contains_key(a) {
                return Err(SessionError::TargetNotFound(a.to_string()));
            }
        }
        let agents = self
            .agents
            .values()
            .filter(|a| only_agent.is_none_or(|o| o == a.runtime.agent_id))
            .map(|a| {
                let visible = self.revealed.contains(&a.runtime.agent_id);
                AgentState {
                    agent_id: a.runtime.agent_id.clone(),
                    role: a.role,
                    x: round3(a.pose.position.x),
                    y: round3(a.pose.position.y),
                    heading: round3(a.pose.heading),
                    node: a.runtime.node.kind().as_str().to_string(),
                    cue: a.cue.as_str().to_string(),
                    avatar: a.avatar.clone(),
                    voice_id: a.voice_id.clone(),
                    label_visible: visible,
                    identity_label: visible.then(|| a.identity_label.clone()),
                    episode: self.book.episode_of(&a.runtime.agent_id).map(str::to_string),
                }
            })
            .collect();
        let episodes = self
            .book
            .iter()
            .filter(|e| only_agent.is_none_or(|o| e.participants.contains(o)))
            .map(|e| EpisodeSummary {
                id: e.id.clone(),
                origin: e.origin,
                participants: e.participants.iter().cloned().collect(),
                pattern: e.pattern(),
                turns: e.turns.len(),
                open: e.is_open(),
            })
            .collect();
        let exhibit = self.pack.exhibit(&self.exhibit_id)?;
        Ok(Snapshot {
            session_id: self.session_id.clone(),
            tick: self.tick,
            condition: self.config.condition,
            exhibit_id: self.exhibit_id.clone(),
            exhibit_title: exhibit.title.clone(),
            user: self.user.as_ref().map(|u| EntityState {
                entity: USER_ID.to_string(),
                x: round3(u.position.x),
                y: round3(u.position.y),
                heading: round3(u.heading),
                speed: if u.is_moving() { u.speed } else { 0.0 },
            }),
            agents,
            episodes,
        })
    }
}

#[cfg(test)]
mod tests;

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}
