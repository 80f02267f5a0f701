use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorConfig;
use crate::dialogue::{BackendConfig, DEFAULT_REPLIES_BEFORE_RESUME, DEFAULT_WINDOW};
use crate::world::{
    DEFAULT_AGENT_SPEED, DEFAULT_GREET_RADIUS, DEFAULT_OVERHEAR_RADIUS, DEFAULT_USER_SPEED, DEFAULT_VIEWING_RADIUS,
};

/// Fixed origin for simulated wall-clock time so logs are reproducible.
pub const DEFAULT_CLOCK_ORIGIN: &str = "2025-01-01T00:00:00Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// One visitor agent per viewpoint.
    #[serde(rename = "SIMVIEWS")]
    Simviews,
    /// A single guide narrating every viewpoint.
    #[serde(rename = "BASE")]
    Base,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Simviews => "SIMVIEWS",
            Condition::Base => "BASE",
        }
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "simviews" => Ok(Condition::Simviews),
            "base" => Ok(Condition::Base),
            other => Err(format!("unknown condition `{other}` (expected simviews or base)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Radii {
    pub greet: f64,
    pub overhear: f64,
    pub viewing: f64,
}

impl Default for Radii {
    fn default() -> Self {
        Self { greet: DEFAULT_GREET_RADIUS, overhear: DEFAULT_OVERHEAR_RADIUS, viewing: DEFAULT_VIEWING_RADIUS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    /// Seconds between scripted lines (also guide narration segments).
    pub script_turn_interval_s: f64,
    /// Simulated thinking time before a deterministic backend's reply lands.
    pub think_s: f64,
    /// Silence after which an open episode closes.
    pub episode_timeout_s: f64,
    /// How long an agent waits for an answer to its greeting.
    pub greet_patience_s: f64,
    pub replies_before_resume: u32,
    pub transcript_window: usize,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            script_turn_interval_s: 3.0,
            think_s: 1.0,
            episode_timeout_s: 45.0,
            greet_patience_s: 15.0,
            replies_before_resume: DEFAULT_REPLIES_BEFORE_RESUME,
            transcript_window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub pack_path: PathBuf,
    pub exhibit_id: String,
    pub condition: Condition,
    pub seed: u64,
    #[serde(default = "default_tick_hz")]
    pub tick_hz: u32,
    #[serde(default)]
    pub behavior: BehaviorConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub radii: Radii,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default = "default_agent_speed")]
    pub agent_speed: f64,
    #[serde(default = "default_user_speed")]
    pub user_speed: f64,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default = "default_clock_origin")]
    pub clock_origin: String,
}

fn default_tick_hz() -> u32 {
    10
}

fn default_agent_speed() -> f64 {
    DEFAULT_AGENT_SPEED
}

fn default_user_speed() -> f64 {
    DEFAULT_USER_SPEED
}

fn default_clock_origin() -> String {
    DEFAULT_CLOCK_ORIGIN.to_string()
}

impl SessionConfig {
    pub fn new(pack_path: impl Into<PathBuf>, exhibit_id: impl Into<String>, condition: Condition, seed: u64) -> Self {
        Self {
            pack_path: pack_path.into(),
            exhibit_id: exhibit_id.into(),
            condition,
            seed,
            tick_hz: default_tick_hz(),
            behavior: BehaviorConfig::default(),
            backend: BackendConfig::Scripted,
            radii: Radii::default(),
            timing: Timing::default(),
            agent_speed: DEFAULT_AGENT_SPEED,
            user_speed: DEFAULT_USER_SPEED,
            session_id: None,
            clock_origin: default_clock_origin(),
        }
    }

    pub fn validate(&self) -> Result<DateTime<Utc>, String> {
        if self.tick_hz < 1 {
            return Err("tick_hz must be at least 1".into());
        }
        self.behavior.validate()?;
        let r = self.radii;
        if !(r.greet >= 0.0 && r.overhear >= 0.0 && r.viewing >= 0.0) {
            return Err("radii must be non-negative".into());
        }
        let t = &self.timing;
        if t.script_turn_interval_s <= 0.0 || t.think_s < 0.0 || t.episode_timeout_s <= 0.0 || t.greet_patience_s <= 0.0
        {
            return Err("timing values must be positive".into());
        }
        if self.agent_speed <= 0.0 || self.user_speed <= 0.0 {
            return Err("speeds must be positive".into());
        }
        DateTime::parse_from_rfc3339(&self.clock_origin)
            .map(|d| d.with_timezone(&Utc))
            .map_err(|e| format!("clock_origin `{}`: {e}", self.clock_origin))
    }

    /// Whole ticks spanning `seconds`, at least one.
    pub fn ticks(&self, seconds: f64) -> u64 {
        ((seconds * self.tick_hz as f64).round() as u64).max(1)
    }
}
