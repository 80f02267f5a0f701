//! Agent utterances: scripted agent-agent playback and grounded prompts for
//! generative replies.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::{with_article, ContentPack, Cue, Exhibit, PersonaCard, ScriptedDialogue};
use crate::conversation::{Episode, Origin, TurnKind, TurnRecord};

/// Default number of recent turns included in a prompt.
pub const DEFAULT_WINDOW: usize = 6;
/// Default generative replies after a join before the script resumes.
pub const DEFAULT_REPLIES_BEFORE_RESUME: u32 = 2;
pub const DEFAULT_TIMEOUT_MS: u64 = 8000;

pub const STYLE_RULES: &str = "Speak in the first person as the visitor described above. \
Stay within your viewpoint and the grounding excerpts; do not invent facts beyond them. \
Answer in at most three sentences.";

#[derive(Debug, Error, PartialEq)]
pub enum DialogueError {
    #[error("viewpoint `{viewpoint}` does not belong to exhibit `{exhibit}`")]
    ViewpointMismatch { viewpoint: String, exhibit: String },
    #[error("script cursor is paused for a visitor join")]
    PausedCursor,
    #[error("cursor references `{cursor}` but dialogue is `{dialogue}`")]
    CursorMismatch { cursor: String, dialogue: String },
    #[error("episode `{0}` is not an open agent-agent episode")]
    NotAgentToAgent(String),
    #[error("turn {0} is not a visitor join or follow-up")]
    NotAnInterjection(usize),
    #[error("generation backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub speaker: String,
    pub text: String,
}

/// Who is speaking, as far as a backend needs to know.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaRef {
    /// Key into the scripted cue table (a viewpoint id or `guide:<exhibit>`).
    pub key: String,
    pub label: String,
    pub stance: String,
    pub fallback_line: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub persona: PersonaRef,
    pub persona_preamble: String,
    pub exhibit_context: String,
    pub transcript_window: Vec<TranscriptLine>,
    pub user_utterance: String,
    pub style_rules: String,
}

impl PromptBundle {
    /// System part of a chat-style request.
    pub fn system_text(&self) -> String {
        format!("{}\n\n{}\n\n{}", self.persona_preamble, self.exhibit_context, self.style_rules)
    }

    /// User part of a chat-style request: recent transcript plus the utterance.
    pub fn user_text(&self) -> String {
        let mut out = String::new();
        if !self.transcript_window.is_empty() {
            out.push_str("Conversation so far:\n");
            for line in &self.transcript_window {
                let _ = writeln!(out, "{}: {}", line.speaker, line.text);
            }
            out.push('\n');
        }
        let _ = write!(out, "Visitor says: {}", self.user_utterance);
        out
    }

    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system_text(), self.user_text())
    }
}

fn exhibit_context(exhibit: &Exhibit) -> String {
    format!("Exhibit: {}\n{}", exhibit.title, exhibit.description)
}

fn window_tail(window: &[TranscriptLine], k: usize) -> Vec<TranscriptLine> {
    window[window.len().saturating_sub(k)..].to_vec()
}

/// Assemble the prompt for one persona agent.
pub fn build_prompt(
    card: &PersonaCard,
    exhibit: &Exhibit,
    window: &[TranscriptLine],
    user_utterance: &str,
    k: usize,
) -> Result<PromptBundle, DialogueError> {
    let vp = exhibit.viewpoint(&card.viewpoint_ref).ok_or_else(|| DialogueError::ViewpointMismatch {
        viewpoint: card.viewpoint_ref.clone(),
        exhibit: exhibit.id.clone(),
    })?;
    let mut preamble =
        format!(
        "You are a museum visitor who works as {} and is standing near \"{}\".\nYour view: {}\nGrounding excerpts:\n",
        with_article(&vp.identity_label), exhibit.title, vp.summary
    );
    for ex in &vp.grounding_excerpts {
        let _ = writeln!(preamble, "- \"{}\" [{}]", ex.text, ex.source);
    }
    Ok(PromptBundle {
        persona: PersonaRef {
            key: vp.id.clone(),
            label: vp.identity_label.clone(),
            stance: vp.summary.clone(),
            fallback_line: vp.fallback(),
        },
        persona_preamble: preamble.trim_end().to_string(),
        exhibit_context: exhibit_context(exhibit),
        transcript_window: window_tail(window, k),
        user_utterance: user_utterance.to_string(),
        style_rules: STYLE_RULES.to_string(),
    })
}

pub fn guide_key(exhibit_id: &str) -> String {
    format!("guide:{exhibit_id}")
}

/// Prompt for the single guide: one merged preamble covering every viewpoint.
pub fn build_guide_prompt(
    exhibit: &Exhibit,
    window: &[TranscriptLine],
    user_utterance: &str,
    k: usize,
) -> PromptBundle {
    let mut preamble = format!(
        "You are the museum guide for \"{}\". Present the following perspectives fairly when answering.\n",
        exhibit.title
    );
    for vp in &exhibit.viewpoints {
        let _ = writeln!(preamble, "Perspective of {}: {}", with_article(&vp.identity_label), vp.summary);
        for ex in &vp.grounding_excerpts {
            let _ = writeln!(preamble, "- \"{}\" [{}]", ex.text, ex.source);
        }
    }
    PromptBundle {
        persona: PersonaRef {
            key: guide_key(&exhibit.id),
            label: "Guide".to_string(),
            stance: exhibit.viewpoints.first().map(|v| v.summary.clone()).unwrap_or_default(),
            fallback_line:
                "I'm sorry, could you ask that again? Each of the perspectives here sees this work differently."
                    .to_string(),
        },
        persona_preamble: preamble.trim_end().to_string(),
        exhibit_context: exhibit_context(exhibit),
        transcript_window: window_tail(window, k),
        user_utterance: user_utterance.to_string(),
        style_rules: STYLE_RULES.replace("as the visitor described above", "as the guide described above"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default, skip_serializing)]
    pub token: Option<String>,
    pub timeout_ms: u64,
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Scripted,
    Remote(RemoteConfig),
}

impl BackendConfig {
    /// Remote backend from `GENERATION_ENDPOINT`, `GENERATION_TOKEN`,
    /// `GENERATION_TIMEOUT_MS` and optional `GENERATION_MODEL`.
    pub fn remote_from_env() -> Result<Self, DialogueError> {
        Self::remote_from(|k| std::env::var(k).ok())
    }

    pub fn remote_from(get: impl Fn(&str) -> Option<String>) -> Result<Self, DialogueError> {
        let endpoint = get("GENERATION_ENDPOINT")
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| DialogueError::Config("GENERATION_ENDPOINT is not set".into()))?;
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(DialogueError::Config(format!("GENERATION_ENDPOINT `{endpoint}` is not an http(s) URL")));
        }
        let timeout_ms = match get("GENERATION_TIMEOUT_MS") {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| DialogueError::Config(format!("GENERATION_TIMEOUT_MS `{v}` is not an integer")))?,
            None => DEFAULT_TIMEOUT_MS,
        };
        Ok(BackendConfig::Remote(RemoteConfig {
            endpoint,
            token: get("GENERATION_TOKEN").filter(|s| !s.is_empty()),
            timeout_ms,
            model: get("GENERATION_MODEL"),
        }))
    }

    pub fn build(&self, pack: &ContentPack) -> Box<dyn TextGenerator> {
        match self {
            BackendConfig::Scripted => Box::new(ScriptedBackend::from_pack(pack)),
            BackendConfig::Remote(cfg) => Box::new(RemoteBackend::new(cfg.clone())),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, BackendConfig::Scripted)
    }
}

pub trait TextGenerator: Send + Sync {
    fn id(&self) -> &str;
    /// Never fails: errors collapse into the persona's fallback line.
    fn generate(&self, bundle: &PromptBundle) -> GenerationResult;
}

/// Deterministic replies from the content pack's cue tables.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    tables: BTreeMap<String, Vec<Cue>>,
}

impl ScriptedBackend {
    pub fn from_pack(pack: &ContentPack) -> Self {
        let mut tables = BTreeMap::new();
        for ex in &pack.exhibits {
            let mut merged = Vec::new();
            for vp in &ex.viewpoints {
                tables.insert(vp.id.clone(), vp.cues.clone());
                merged.extend(vp.cues.iter().cloned());
            }
            tables.insert(guide_key(&ex.id), merged);
        }
        Self { tables }
    }

    pub fn lookup(&self, persona_key: &str, utterance: &str) -> Option<&str> {
        let said = utterance.to_lowercase();
        self.tables.get(persona_key)?.iter().find(|c| said.contains(&c.cue.to_lowercase())).map(|c| c.reply.as_str())
    }
}

fn first_sentence(text: &str) -> &str {
    match text.find(". ") {
        Some(i) => &text[..=i],
        None => text,
    }
}

impl TextGenerator for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn generate(&self, bundle: &PromptBundle) -> GenerationResult {
        let text = match self.lookup(&bundle.persona.key, &bundle.user_utterance) {
            Some(reply) => reply.to_string(),
            None => format!("Good question. The way I see it: {}", first_sentence(&bundle.persona.stance)),
        };
        GenerationResult { text, backend_id: self.id().to_string(), latency_ms: 0, fallback_used: false }
    }
}

/// Chat-completion style HTTP backend.
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_millis(config.timeout_ms))).build().into();
        Self { config, agent }
    }

    fn request(&self, bundle: &PromptBundle) -> Result<String, String> {
        let mut body = serde_json::json!({
            "messages": [
                { "role": "system", "content": bundle.system_text() },
                { "role": "user", "content": bundle.user_text() },
            ]
        });
        if let Some(model) = &self.config.model {
            body["model"] = model.clone().into();
        }
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| e.to_string())?;
        let raw = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| format!("bad response body: {e}"))?;
        extract_reply(&value).ok_or_else(|| "response carries no reply text".to_string())
    }
}

/// Accepts `choices[0].message.content`, `choices[0].text`, `text` or `content`.
pub fn extract_reply(value: &serde_json::Value) -> Option<String> {
    let candidates = [
        value.pointer("/choices/0/message/content"),
        value.pointer("/choices/0/text"),
        value.get("text"),
        value.get("content"),
    ];
    candidates
        .into_iter()
        .flatten()
        .filter_map(|v| v.as_str())
        .map(str::trim)
        .find(|s| !s.is_empty())
        .map(str::to_string)
}

impl TextGenerator for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn generate(&self, bundle: &PromptBundle) -> GenerationResult {
        let started = Instant::now();
        let outcome = self.request(bundle);
        let latency_ms = started.elapsed().as_millis() as u64;
        match outcome {
            Ok(text) => GenerationResult { text, backend_id: self.id().into(), latency_ms, fallback_used: false },
            Err(e) => {
                log::warn!("generation via {} failed: {e}", self.config.endpoint);
                GenerationResult {
                    text: bundle.persona.fallback_line.clone(),
                    backend_id: self.id().into(),
                    latency_ms,
                    fallback_used: true,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptCursor {
    pub dialogue_ref: String,
    pub next_index: usize,
    pub paused_for_join: bool,
    /// Generative agent replies since the visitor last spoke.
    pub replies_since_user: u32,
}

impl ScriptCursor {
    pub fn new(dialogue_ref: impl Into<String>) -> Self {
        Self { dialogue_ref: dialogue_ref.into(), next_index: 0, paused_for_join: false, replies_since_user: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptLine {
    pub script_index: usize,
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptStep {
    Turn(ScriptLine, ScriptCursor),
    End,
}

/// Next scripted line, with the role resolved to the agent in `cast`.
pub fn next_scripted_turn(
    cursor: &ScriptCursor,
    dialogue: &ScriptedDialogue,
    cast: &[String],
) -> Result<ScriptStep, DialogueError> {
    if cursor.dialogue_ref != dialogue.id {
        return Err(DialogueError::CursorMismatch {
            cursor: cursor.dialogue_ref.clone(),
            dialogue: dialogue.id.clone(),
        });
    }
    if cursor.paused_for_join {
        return Err(DialogueError::PausedCursor);
    }
    let Some(turn) = dialogue.turns.get(cursor.next_index) else {
        return Ok(ScriptStep::End);
    };
    let line =
        ScriptLine { script_index: cursor.next_index, speaker: cast[turn.role].clone(), text: turn.text.clone() };
    let next = ScriptCursor { next_index: cursor.next_index + 1, ..cursor.clone() };
    Ok(ScriptStep::Turn(line, next))
}

/// Pause scripted playback because the visitor spoke in an agent-agent episode.
pub fn interject(
    cursor: &ScriptCursor,
    episode: &Episode,
    user_turn: &TurnRecord,
) -> Result<ScriptCursor, DialogueError> {
    if episode.origin != Origin::AgentToAgent || !episode.is_open() {
        return Err(DialogueError::NotAgentToAgent(episode.id.clone()));
    }
    if !matches!(user_turn.kind, TurnKind::Join | TurnKind::FollowUp) {
        return Err(DialogueError::NotAnInterjection(user_turn.index));
    }
    Ok(ScriptCursor { paused_for_join: true, replies_since_user: 0, ..cursor.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfterReply {
    KeepGenerating,
    ResumeScript,
    Finish,
}

/// Account for one generative reply while paused; after `k` of them the
/// script resumes, or the episode finishes when the script is exhausted.
pub fn after_generated_reply(cursor: &ScriptCursor, dialogue: &ScriptedDialogue, k: u32) -> (ScriptCursor, AfterReply) {
    let mut next = cursor.clone();
    next.replies_since_user += 1;
    if next.replies_since_user < k.max(1) {
        return (next, AfterReply::KeepGenerating);
    }
    next.paused_for_join = false;
    next.replies_since_user = 0;
    if next.next_index < dialogue.turns.len() {
        (next, AfterReply::ResumeScript)
    } else {
        (next, AfterReply::Finish)
    }
}

/// Agent that should give the next generative reply in a paused dialogue.
/// The first reply comes from whoever the script would have had speak next;
/// later replies rotate away from the last agent speaker.
pub fn generative_speaker(
    cursor: &ScriptCursor,
    dialogue: &ScriptedDialogue,
    cast: &[String],
    last_agent: Option<&str>,
) -> String {
    if let Some(turn) = dialogue.turns.get(cursor.next_index) {
        let scripted = &cast[turn.role];
        if Some(scripted.as_str()) != last_agent {
            return scripted.clone();
        }
    }
    cast.iter().find(|a| Some(a.as_str()) != last_agent).unwrap_or(&cast[0]).clone()
}
