//! Per-agent behavior tree.
//!
//! The tree is a priority selector evaluated once per tick:
//!
//! ```text
//! Selector
//! ├── Converse      (locked while the agent belongs to an episode)
//! ├── Greet user    (user in greet radius, cooldown elapsed, roll succeeds)
//! ├── Start script  (viewing, co-located cast free, lowest id, roll succeeds)
//! ├── Viewing       (dwell countdown, then patrol)
//! └── Patrol        (walk to a waypoint; arriving near an exhibit starts viewing)
//! ```
//!
//! Rolls only happen on opportunity ticks (one per configured interval) so
//! probabilities are per opportunity window rather than per tick.

use std::collections::BTreeSet;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::Pattern;
use crate::world::{Gallery, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorConfig {
    pub greet_probability: f64,
    pub greet_cooldown_s: f64,
    pub dwell_min_s: f64,
    pub dwell_max_s: f64,
    pub script_start_probability: f64,
    /// Length of one opportunity window.
    pub opportunity_interval_s: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            greet_probability: 0.3,
            greet_cooldown_s: 60.0,
            dwell_min_s: 10.0,
            dwell_max_s: 25.0,
            script_start_probability: 0.5,
            opportunity_interval_s: 1.0,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in
            [("greet_probability", self.greet_probability), ("script_start_probability", self.script_start_probability)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.dwell_min_s < 0.0 || self.dwell_min_s > self.dwell_max_s {
            return Err(format!("invalid dwell range {}..{}", self.dwell_min_s, self.dwell_max_s));
        }
        if self.greet_cooldown_s < 0.0 {
            return Err("greet_cooldown_s must be non-negative".into());
        }
        if self.opportunity_interval_s <= 0.0 {
            return Err("opportunity_interval_s must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum BehaviorNode {
    Patrol {
        target: Point,
    },
    Viewing {
        exhibit_id: String,
        dwell_remaining: f64,
    },
    /// `episode_id` is `None` while the episode is being created.
    Converse {
        episode_id: Option<String>,
        pattern: Pattern,
    },
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Patrol,
    Viewing,
    Converse,
    Idle,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Patrol => "patrol",
            NodeKind::Viewing => "viewing",
            NodeKind::Converse => "converse",
            NodeKind::Idle => "idle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "patrol" => Some(NodeKind::Patrol),
            "viewing" => Some(NodeKind::Viewing),
            "converse" => Some(NodeKind::Converse),
            "idle" => Some(NodeKind::Idle),
            _ => None,
        }
    }
}

impl BehaviorNode {
    pub fn kind(&self) -> NodeKind {
        match self {
            BehaviorNode::Patrol { .. } => NodeKind::Patrol,
            BehaviorNode::Viewing { .. } => NodeKind::Viewing,
            BehaviorNode::Converse { .. } => NodeKind::Converse,
            BehaviorNode::Idle => NodeKind::Idle,
        }
    }

    pub fn is_conversing(&self) -> bool {
        matches!(self, BehaviorNode::Converse { .. })
    }
}

/// Edges of the tree. Staying in the same node is always legal.
pub fn is_legal_transition(from: NodeKind, to: NodeKind) -> bool {
    use NodeKind::*;
    from == to
        || matches!(
            (from, to),
            (Patrol, Viewing)
                | (Viewing, Patrol)
                | (Patrol, Converse)
                | (Viewing, Converse)
                | (Converse, Patrol)
                | (Converse, Viewing)
        )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnimationCue {
    Stand,
    Walk,
    Talk,
    Think,
}

impl AnimationCue {
    pub fn as_str(self) -> &'static str {
        match self {
            AnimationCue::Stand => "stand",
            AnimationCue::Walk => "walk",
            AnimationCue::Talk => "talk",
            AnimationCue::Think => "think",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Intent {
    MoveTo(Point),
    StartScriptedDialogue { dialogue_id: String, cast: Vec<String> },
    GreetUser,
    EmitAnimationCue(AnimationCue),
}

impl Intent {
    pub fn is_movement(&self) -> bool {
        matches!(self, Intent::MoveTo(_))
    }
}

/// A script that could start now, with the agent voicing each role.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptOffer {
    pub dialogue_id: String,
    pub cast: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuntime {
    pub agent_id: String,
    pub node: BehaviorNode,
    pub position: Point,
    /// Simulation time after which the agent may greet again.
    pub greet_ready_at: f64,
}

impl AgentRuntime {
    pub fn new(agent_id: impl Into<String>, node: BehaviorNode, position: Point) -> Self {
        Self { agent_id: agent_id.into(), node, position, greet_ready_at: 0.0 }
    }
}

pub struct TickContext<'a> {
    pub now: f64,
    pub dt: f64,
    /// True on the first tick of each opportunity window.
    pub opportunity: bool,
    /// The visitor is present, free, and within greet radius of this agent.
    pub user_in_greet_range: bool,
    pub gallery: &'a Gallery,
    pub viewing_radius: f64,
    /// Agents currently viewing the same exhibit and not conversing.
    pub available_here: &'a BTreeSet<String>,
    pub script_offers: &'a [ScriptOffer],
    pub config: &'a BehaviorConfig,
    pub rng: &'a mut dyn RngCore,
}

#[derive(Debug, Error, PartialEq)]
pub enum BehaviorError {
    #[error("agent `{agent}` is not in episode `{episode}`")]
    EpisodeMismatch { agent: String, episode: String },
}

const ARRIVED: f64 = 1e-6;

fn dwell(rng: &mut dyn RngCore, config: &BehaviorConfig) -> f64 {
    if config.dwell_max_s > config.dwell_min_s {
        rng.gen_range(config.dwell_min_s..=config.dwell_max_s)
    } else {
        config.dwell_min_s
    }
}

/// Pick a waypoint away from `from`. `None` when the gallery has no waypoints.
pub fn fresh_waypoint(gallery: &Gallery, from: Point, rng: &mut dyn RngCore) -> Option<Point> {
    let away: Vec<Point> = gallery.waypoints.iter().map(|w| w.point).filter(|p| p.distance(&from) > 0.5).collect();
    let pool: Vec<Point> = if away.is_empty() { gallery.waypoints.iter().map(|w| w.point).collect() } else { away };
    if pool.is_empty() {
        None
    } else {
        Some(pool[rng.gen_range(0..pool.len())])
    }
}

fn patrol_or_idle(gallery: &Gallery, from: Point, rng: &mut dyn RngCore) -> (BehaviorNode, Vec<Intent>) {
    match fresh_waypoint(gallery, from, rng) {
        Some(target) => (
            BehaviorNode::Patrol { target },
            vec![Intent::MoveTo(target), Intent::EmitAnimationCue(AnimationCue::Walk)],
        ),
        None => (BehaviorNode::Idle, vec![Intent::EmitAnimationCue(AnimationCue::Stand)]),
    }
}

/// Node for the next tick plus intents for the session to carry out.
pub fn tick_agent(agent: &AgentRuntime, ctx: &mut TickContext<'_>) -> (BehaviorNode, Vec<Intent>) {
    if agent.node.is_conversing() {
        return (agent.node.clone(), Vec::new());
    }
    if ctx.gallery.waypoints.is_empty() && !matches!(agent.node, BehaviorNode::Viewing { .. }) {
        return (BehaviorNode::Idle, Vec::new());
    }

    if ctx.opportunity
        && ctx.user_in_greet_range
        && ctx.now >= agent.greet_ready_at
        && ctx.rng.gen_bool(ctx.config.greet_probability)
    {
        return (
            BehaviorNode::Converse { episode_id: None, pattern: Pattern::PassiveSpeaking },
            vec![Intent::GreetUser, Intent::EmitAnimationCue(AnimationCue::Talk)],
        );
    }

    if ctx.opportunity && matches!(agent.node, BehaviorNode::Viewing { .. }) {
        let mine = ctx.script_offers.iter().find(|o| {
            o.cast.contains(&agent.agent_id)
                && o.cast.iter().min() == Some(&agent.agent_id)
                && o.cast.iter().all(|a| ctx.available_here.contains(a))
        });
        if let Some(offer) = mine {
            if ctx.rng.gen_bool(ctx.config.script_start_probability) {
                return (
                    BehaviorNode::Converse { episode_id: None, pattern: Pattern::PassiveListening },
                    vec![
                        Intent::StartScriptedDialogue {
                            dialogue_id: offer.dialogue_id.clone(),
                            cast: offer.cast.clone(),
                        },
                        Intent::EmitAnimationCue(AnimationCue::Talk),
                    ],
                );
            }
        }
    }

    match &agent.node {
        BehaviorNode::Viewing { exhibit_id, dwell_remaining } => {
            let left = dwell_remaining - ctx.dt;
            if left > 0.0 {
                (BehaviorNode::Viewing { exhibit_id: exhibit_id.clone(), dwell_remaining: left }, Vec::new())
            } else {
                patrol_or_idle(ctx.gallery, agent.position, ctx.rng)
            }
        }
        BehaviorNode::Patrol { target } => {
            if agent.position.distance(target) > ARRIVED {
                return (agent.node.clone(), Vec::new());
            }
            if let Some((exhibit, _)) = ctx.gallery.exhibit_within(&agent.position, ctx.viewing_radius) {
                (
                    BehaviorNode::Viewing {
                        exhibit_id: exhibit.to_string(),
                        dwell_remaining: dwell(ctx.rng, ctx.config),
                    },
                    vec![Intent::EmitAnimationCue(AnimationCue::Stand)],
                )
            } else {
                patrol_or_idle(ctx.gallery, agent.position, ctx.rng)
            }
        }
        BehaviorNode::Idle => patrol_or_idle(ctx.gallery, agent.position, ctx.rng),
        BehaviorNode::Converse { .. } => unreachable!("handled above"),
    }
}

pub struct CloseContext<'a> {
    pub now: f64,
    pub gallery: &'a Gallery,
    pub viewing_radius: f64,
    pub config: &'a BehaviorConfig,
    pub rng: &'a mut dyn RngCore,
}

/// Release an agent from its episode: view the nearest exhibit if close
/// enough, otherwise patrol. Restarts the greet cooldown.
pub fn on_episode_closed(
    agent: &mut AgentRuntime,
    episode_id: &str,
    ctx: &mut CloseContext<'_>,
) -> Result<(BehaviorNode, Vec<Intent>), BehaviorError> {
    match &agent.node {
        BehaviorNode::Converse { episode_id: Some(id), .. } if id == episode_id => {}
        _ => {
            return Err(BehaviorError::EpisodeMismatch {
                agent: agent.agent_id.clone(),
                episode: episode_id.to_string(),
            })
        }
    }
    agent.greet_ready_at = ctx.now + ctx.config.greet_cooldown_s;
    let (node, intents) = match ctx.gallery.exhibit_within(&agent.position, ctx.viewing_radius) {
        Some((exhibit, _)) => (
            BehaviorNode::Viewing { exhibit_id: exhibit.to_string(), dwell_remaining: dwell(ctx.rng, ctx.config) },
            vec![Intent::EmitAnimationCue(AnimationCue::Stand)],
        ),
        None => patrol_or_idle(ctx.gallery, agent.position, ctx.rng),
    };
    agent.node = node.clone();
    Ok((node, intents))
}
