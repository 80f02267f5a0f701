//! Headless virtual visitors.
//!
//! A [`VisitorScript`] is a list of actions, each armed when the previous one
//! completes and fired by its trigger. The runner drives an in-process
//! session purely through [`ClientMessage`]s.

pub mod fuzz;
pub mod lint;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{code_session, compute_metrics, AnalyticsError, CodedSession, MetricsReport};
use crate::content::ContentPack;
use crate::conversation::{is_user, Origin, Pattern, Provenance};
use crate::session::{ClientMessage, EventKind, Session, SessionConfig, SessionError, SessionLogEvent, GUIDE_ID};
use crate::world::Point;

pub use fuzz::{fuzz_scenarios, random_script, FuzzOptions};
pub use lint::{lint_log, LintReport, Violation};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("scenario did not finish within {0} simulated seconds")]
    ScenarioTimeout(f64),
    #[error("invalid script: {0}")]
    Script(String),
    #[error("script file: {0}")]
    Io(#[from] std::io::Error),
    #[error("script json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTrigger {
    /// An agent-agent dialogue opened within earshot of the visitor.
    OverheardDialogueStarted,
    /// Any agent-agent dialogue opened.
    DialogueStarted,
    /// An agent opened a conversation with the visitor.
    Greeted,
    /// The guide finished its narration.
    NarrationFinished,
    /// An agent answered the visitor.
    ReplyReceived,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Fire once the session reaches this tick.
    AtTick(u64),
    /// Fire on the first matching event after the action is armed.
    OnEvent(EventTrigger),
}

/// Who a `SayTo` addresses.
///
/// Agents can be named by id (`agent-02`), by viewpoint
/// (`viewpoint:lion-ethics`), as `guide`, or as `greeter` (the agent that
/// most recently greeted the visitor).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SayTarget {
    Agent(String),
    Episode(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    MoveTo { x: f64, y: f64 },
    SayTo { to: SayTarget, text: String },
    JoinCurrentOverheard { text: String },
    Wait { seconds: f64 },
    Leave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
    #[serde(flatten)]
    pub action: Action,
}

impl ScriptStep {
    pub fn now(action: Action) -> Self {
        Self { trigger: None, action }
    }

    pub fn at(tick: u64, action: Action) -> Self {
        Self { trigger: Some(Trigger::AtTick(tick)), action }
    }

    pub fn on(event: EventTrigger, action: Action) -> Self {
        Self { trigger: Some(Trigger::OnEvent(event)), action }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VisitorScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub steps: Vec<ScriptStep>,
}

impl VisitorScript {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: VisitorScript = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scripts serialize")
    }

    /// `AtTick` triggers must not go backwards.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut last = 0;
        for (i, step) in self.steps.iter().enumerate() {
            if let Some(Trigger::AtTick(t)) = step.trigger {
                if t < last {
                    return Err(SimError::Script(format!("step {i}: tick {t} is before {last}")));
                }
                last = t;
            }
            if let Action::Wait { seconds } = step.action {
                if !(seconds >= 0.0 && seconds.is_finite()) {
                    return Err(SimError::Script(format!("step {i}: bad wait {seconds}")));
                }
            }
        }
        Ok(())
    }

    /// Ask each persona once, ignore a greeting, overhear a dialogue and
    /// join the next one. Written for a three-viewpoint exhibit at 10 Hz.
    pub fn grand_tour(pack: &ContentPack, exhibit_id: &str) -> Result<Self, SimError> {
        let exhibit = pack.exhibit(exhibit_id).map_err(|e| SimError::Script(e.to_string()))?;
        let anchor =
            pack.gallery.anchor(exhibit_id).ok_or_else(|| SimError::Script(format!("no anchor for {exhibit_id}")))?;
        let mut steps = vec![
            ScriptStep::at(10, Action::MoveTo { x: anchor.x, y: anchor.y - 1.0 }),
            ScriptStep::on(EventTrigger::Greeted, Action::Wait { seconds: 20.0 }),
        ];
        for vp in &exhibit.viewpoints {
            let question = vp
                .cues
                .first()
                .map(|c| format!("Can you tell me about the {}?", c.cue))
                .unwrap_or_else(|| "What do you think of this?".into());
            steps.push(ScriptStep::now(Action::SayTo {
                to: SayTarget::Agent(format!("viewpoint:{}", vp.id)),
                text: question,
            }));
            steps.push(ScriptStep::now(Action::Wait { seconds: 5.0 }));
        }
        steps.push(ScriptStep::now(Action::MoveTo { x: anchor.x, y: anchor.y - 1.0 }));
        steps.push(ScriptStep::on(EventTrigger::OverheardDialogueStarted, Action::Wait { seconds: 1.0 }));
        steps.push(ScriptStep::on(
            EventTrigger::OverheardDialogueStarted,
            Action::JoinCurrentOverheard { text: "Sorry to interrupt, but why do you see it so differently?".into() },
        ));
        steps.push(ScriptStep::now(Action::Wait { seconds: 15.0 }));
        Ok(VisitorScript { name: Some("grand-tour".into()), steps })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOptions {
    /// Simulated seconds before the run stops.
    pub time_limit_s: f64,
    /// Stop once the script has finished (after `linger_s`).
    pub stop_on_completion: bool,
    pub linger_s: f64,
    /// Fail with `ScenarioTimeout` if the script is unfinished at the limit.
    pub require_completion: bool,
    /// Where to write the `.ndjson` log, if anywhere.
    pub log_dir: Option<PathBuf>,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self { time_limit_s: 600.0, stop_on_completion: true, linger_s: 5.0, require_completion: false, log_dir: None }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub log_path: Option<PathBuf>,
    pub log: Vec<SessionLogEvent>,
    pub coded: CodedSession,
    pub metrics: MetricsReport,
    pub pattern_coverage: BTreeSet<Pattern>,
    pub completed: bool,
    /// Script steps that could not be carried out.
    pub skipped: Vec<String>,
}

impl ScenarioResult {
    pub fn ndjson(&self) -> String {
        crate::session::to_ndjson(&self.log)
    }
}

/// Observable happenings the runner reacts to, indexed by log position.
#[derive(Default)]
struct Observer {
    cursor: usize,
    narration_len: usize,
    narration: usize,
    a2a: BTreeSet<String>,
    user_eps: BTreeSet<String>,
    seen: Vec<(usize, EventTrigger)>,
    greeter: Option<String>,
}

impl Observer {
    fn update(&mut self, events: &[SessionLogEvent]) {
        for (i, e) in events.iter().enumerate().skip(self.cursor) {
            match &e.event {
                EventKind::EpisodeOpened(o) => {
                    if o.origin == Origin::AgentToAgent {
                        self.a2a.insert(o.episode.clone());
                        self.seen.push((i, EventTrigger::DialogueStarted));
                    }
                    if o.participants.iter().any(|p| is_user(p)) {
                        self.user_eps.insert(o.episode.clone());
                    }
                    if o.origin == Origin::AgentToUser && o.opener != GUIDE_ID {
                        self.greeter = Some(o.opener.clone());
                        self.seen.push((i, EventTrigger::Greeted));
                    }
                }
                EventKind::TurnAdded(t) => {
                    let a2a = self.a2a.contains(&t.episode);
                    if t.index == 0 && t.audible && a2a {
                        self.seen.push((i, EventTrigger::OverheardDialogueStarted));
                    }
                    if t.viewpoint_ref.is_some() {
                        self.narration += 1;
                        if self.narration == self.narration_len {
                            self.seen.push((i, EventTrigger::NarrationFinished));
                        }
                    }
                    let answered = matches!(t.provenance, Some(Provenance::Generated | Provenance::Fallback));
                    if answered && (self.user_eps.contains(&t.episode) || t.audible && a2a) {
                        self.seen.push((i, EventTrigger::ReplyReceived));
                    }
                }
                _ => {}
            }
        }
        self.cursor = events.len();
    }

    fn any_since(&self, since: usize, what: EventTrigger) -> bool {
        self.seen.iter().rev().take_while(|(i, _)| *i >= since).any(|(_, t)| *t == what)
    }
}

enum StepState {
    Armed { since: usize },
    Running { started_tick: u64, since: usize, sent: bool },
}

struct Runner<'a> {
    session: &'a mut Session,
    skipped: Vec<String>,
    observer: Observer,
}

const APPROACH: f64 = 1.2;
const GIVE_UP_S: f64 = 60.0;
const REPLY_WAIT_S: f64 = 12.0;

impl Runner<'_> {
    fn send(&mut self, msg: ClientMessage) -> Result<(), SessionError> {
        self.session.handle_client(msg).map(|_| ())
    }

    fn resolve_agent(&self, name: &str) -> Option<String> {
        if let Some(vp) = name.strip_prefix("viewpoint:") {
            return self.session.agent_for_viewpoint(vp).map(str::to_string);
        }
        if name == "greeter" {
            return self.observer.greeter.clone();
        }
        self.session.agent_ids().into_iter().find(|a| a == name)
    }

    fn walk_toward(&mut self, target: Point) -> Result<(), SessionError> {
        if self.session.tick().is_multiple_of(5) {
            self.send(ClientMessage::Move { x: target.x, y: target.y })?;
        }
        Ok(())
    }

    fn user_at(&self) -> Point {
        self.session.user_position().unwrap_or(Point::new(0.0, 0.0))
    }

    /// The visitor is talking with `agent` in an open episode.
    fn in_conversation_with(&self, agent: &str) -> bool {
        self.session.episodes().user_episodes().any(|e| e.participants.contains(agent))
    }

    fn replied_since(&mut self, since: usize) -> bool {
        self.observer.update(self.session.log());
        self.observer.any_since(since, EventTrigger::ReplyReceived)
    }

    /// Drive one step for this tick. Returns true when it is finished.
    fn advance(&mut self, action: &Action, started: u64, since: usize, sent: &mut bool) -> Result<bool, SimError> {
        let hz = self.session.config().tick_hz as f64;
        let elapsed = (self.session.tick() - started) as f64 / hz;
        match action {
            Action::MoveTo { x, y } => {
                if !*sent {
                    *sent = true;
                    if let Err(e) = self.send(ClientMessage::Move { x: *x, y: *y }) {
                        self.skipped.push(format!("move: {e}"));
                        return Ok(true);
                    }
                }
                Ok(self.user_at().distance(&Point::new(*x, *y)) < 1e-6 || elapsed > GIVE_UP_S)
            }
            Action::Wait { seconds } => Ok(elapsed >= *seconds),
            Action::Leave => {
                if let Err(e) = self.send(ClientMessage::Bye) {
                    self.skipped.push(format!("leave: {e}"));
                }
                Ok(true)
            }
            Action::SayTo { to: SayTarget::Episode(ep), text } => {
                if *sent {
                    return Ok(self.replied_since(since) || elapsed > REPLY_WAIT_S);
                }
                *sent = true;
                let msg = ClientMessage::Say { target: None, episode: Some(ep.clone()), text: text.clone() };
                if let Err(e) = self.send(msg) {
                    self.skipped.push(format!("say to {ep}: {e}"));
                    return Ok(true);
                }
                Ok(false)
            }
            Action::SayTo { to: SayTarget::Agent(name), text } => {
                if *sent {
                    return Ok(self.replied_since(since) || elapsed > REPLY_WAIT_S);
                }
                let Some(agent) = self.resolve_agent(name) else {
                    self.skipped.push(format!("say to {name}: no such agent"));
                    return Ok(true);
                };
                if elapsed > GIVE_UP_S {
                    self.skipped.push(format!("say to {name}: never got close"));
                    return Ok(true);
                }
                let at = self.session.agent_position(&agent).expect("resolved agents exist");
                let busy_elsewhere = self.session.episodes().is_busy(&agent) && !self.in_conversation_with(&agent);
                if self.user_at().distance(&at) > APPROACH {
                    self.walk_toward(at)?;
                    return Ok(false);
                }
                if busy_elsewhere {
                    return Ok(false);
                }
                let msg = ClientMessage::Say { target: Some(agent), episode: None, text: text.clone() };
                match self.send(msg) {
                    Ok(()) => {
                        *sent = true;
                        Ok(false)
                    }
                    Err(SessionError::TargetOutOfRange(_) | SessionError::TargetBusy(_)) => Ok(false),
                    Err(e) => {
                        self.skipped.push(format!("say to {name}: {e}"));
                        Ok(true)
                    }
                }
            }
            Action::JoinCurrentOverheard { text } => {
                if *sent {
                    return Ok(self.replied_since(since) || elapsed > REPLY_WAIT_S);
                }
                let current = self
                    .session
                    .episodes()
                    .open()
                    .filter(|e| e.origin == Origin::AgentToAgent && !e.includes_user())
                    .last()
                    .map(|e| (e.id.clone(), e.opener.clone()));
                let Some((ep, speaker)) = current else {
                    self.skipped.push("join: nothing to overhear".into());
                    return Ok(true);
                };
                if elapsed > GIVE_UP_S {
                    self.skipped.push(format!("join {ep}: never got close"));
                    return Ok(true);
                }
                let at = self.session.agent_position(&speaker).expect("episode agents exist");
                if self.user_at().distance(&at) > self.session.config().radii.overhear * 0.8 {
                    self.walk_toward(at)?;
                    return Ok(false);
                }
                match self.send(ClientMessage::Join { episode: ep.clone(), text: text.clone() }) {
                    Ok(()) => {
                        *sent = true;
                        Ok(false)
                    }
                    Err(e) => {
                        self.skipped.push(format!("join {ep}: {e}"));
                        Ok(true)
                    }
                }
            }
        }
    }
}

/// Run `script` against a fresh session built from `pack` and `config`
/// (with `seed` replacing the configured one).
pub fn run_scenario_with_pack(
    pack: Arc<ContentPack>,
    mut config: SessionConfig,
    script: &VisitorScript,
    seed: u64,
    options: &ScenarioOptions,
) -> Result<ScenarioResult, SimError> {
    script.validate()?;
    config.seed = seed;
    let mut session = Session::with_pack(pack, config)?;
    let narration_len = session.guide_script().map_or(usize::MAX, |g| g.segments.len());
    let limit = session.config().ticks(options.time_limit_s);
    let linger = (options.linger_s * session.config().tick_hz as f64).round() as u64;
    session.handle_client(ClientMessage::Hello { name: Some("simbot".into()) })?;

    let observer = Observer { narration_len, ..Default::default() };
    let mut runner = Runner { session: &mut session, skipped: Vec::new(), observer };
    let mut step = 0;
    let mut state = StepState::Armed { since: 0 };
    let mut finished_at: Option<u64> = None;
    while runner.session.tick() < limit {
        runner.observer.update(runner.session.log());
        // Several steps may complete within one tick.
        while step < script.steps.len() {
            let s = &script.steps[step];
            if let StepState::Armed { since } = state {
                let fire = match s.trigger {
                    None => true,
                    Some(Trigger::AtTick(t)) => runner.session.tick() >= t,
                    Some(Trigger::OnEvent(ev)) => runner.observer.any_since(since, ev),
                };
                if !fire {
                    break;
                }
                state = StepState::Running {
                    started_tick: runner.session.tick(),
                    since: runner.session.log().len(),
                    sent: false,
                };
            }
            let StepState::Running { started_tick, since, mut sent } = state else { unreachable!() };
            let done = runner.advance(&s.action, started_tick, since, &mut sent)?;
            if done {
                step += 1;
                state = StepState::Armed { since: runner.session.log().len() };
            } else {
                state = StepState::Running { started_tick, since, sent };
                break;
            }
        }
        if step == script.steps.len() {
            let at = *finished_at.get_or_insert(runner.session.tick());
            if options.stop_on_completion && runner.session.tick() >= at + linger {
                break;
            }
        }
        runner.session.run_tick();
    }
    let completed = step == script.steps.len();
    let skipped = std::mem::take(&mut runner.skipped);
    if !completed && options.require_completion {
        return Err(SimError::ScenarioTimeout(options.time_limit_s));
    }
    let log_path = match &options.log_dir {
        Some(dir) => {
            let path = dir.join(format!("{}.ndjson", session.session_id()));
            session.export_log(&path)?;
            Some(path)
        }
        None => None,
    };
    let log = session.log().to_vec();
    let coded = code_session(&log)?;
    let metrics = compute_metrics(&coded);
    let pattern_coverage = coded.episodes.iter().map(|e| e.pattern).collect();
    Ok(ScenarioResult { log_path, log, coded, metrics, pattern_coverage, completed, skipped })
}

/// Load the configured pack and run `script`.
pub fn run_scenario(
    config: SessionConfig,
    script: &VisitorScript,
    seed: u64,
    options: &ScenarioOptions,
) -> Result<ScenarioResult, SimError> {
    let pack = crate::content::load_pack(&config.pack_path).map_err(SessionError::from)?;
    run_scenario_with_pack(Arc::new(pack), config, script, seed, options)
}
