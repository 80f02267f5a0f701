//! Post-hoc checks over a session log.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::behavior::{is_legal_transition, NodeKind};
use crate::content::{assign_personas, ContentPack};
use crate::conversation::{is_user, Origin, Pattern, TurnKind};
use crate::session::{Condition, EventKind, SessionLogEvent, GUIDE_ID};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub seq: u64,
    pub rule: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LintReport {
    pub violations: Vec<Violation>,
    /// Visitor join turns seen.
    pub joins: usize,
    /// Passive-to-active listening flips seen.
    pub join_flips: usize,
    pub interacted: BTreeSet<String>,
    pub reveals: BTreeMap<String, usize>,
    /// Viewpoint ids of guide narration, in log order.
    pub narration: Vec<String>,
    /// Narration covered every viewpoint of the exhibit. Logs that stop
    /// mid-narration are not violations by themselves.
    pub narration_complete: bool,
}

impl LintReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn rules_broken(&self) -> BTreeSet<&'static str> {
        self.violations.iter().map(|v| v.rule).collect()
    }
}

fn flag(r: &mut LintReport, seq: u64, rule: &'static str, detail: String) {
    r.violations.push(Violation { seq, rule, detail });
}

struct EpisodeTrack {
    origin: Origin,
    participants: BTreeSet<String>,
    pattern: Pattern,
    open: bool,
}

struct AgentTrack {
    node: NodeKind,
    x: f64,
    y: f64,
}

/// Labels each agent would carry, derived the same way the session does.
fn expected_labels(events: &[SessionLogEvent], pack: &ContentPack) -> BTreeMap<String, String> {
    let Some(EventKind::SessionStarted(s)) = events.first().map(|e| &e.event) else {
        return BTreeMap::new();
    };
    if s.condition != Condition::Simviews {
        return BTreeMap::new();
    }
    assign_personas(pack, &s.exhibit_id, s.seed)
        .map(|cards| cards.into_iter().map(|c| (c.agent_id, c.identity_label)).collect())
        .unwrap_or_default()
}

/// Check label safety, episode and join invariants, guide narration order
/// and behavior legality. `pack` enables the label text scan and the
/// narration order check.
pub fn lint_log(events: &[SessionLogEvent], pack: Option<&ContentPack>) -> LintReport {
    let mut r = LintReport::default();
    let labels = pack.map(|p| expected_labels(events, p)).unwrap_or_default();
    let mut exhibit_order: Vec<String> = Vec::new();
    let mut episodes: BTreeMap<String, EpisodeTrack> = BTreeMap::new();
    let mut agents: BTreeMap<String, AgentTrack> = BTreeMap::new();
    let mut pending_join: Option<(u64, String)> = None;
    let mut guide_answered = false;
    let mut last_tick = 0;

    for (i, ev) in events.iter().enumerate() {
        let seq = ev.seq;
        if seq != i as u64 {
            flag(&mut r, seq, "order", format!("record {i} has seq {seq}"));
        }
        if ev.tick < last_tick {
            flag(&mut r, seq, "order", format!("tick {} after {last_tick}", ev.tick));
        }
        last_tick = ev.tick;
        if let Some((at, ep)) = pending_join.take() {
            let flipped = matches!(&ev.event, EventKind::PatternChanged(p)
                if p.episode == ep && p.from == Pattern::PassiveListening && p.to == Pattern::ActiveListening);
            if !flipped {
                flag(&mut r, at, "join", format!("join into {ep} did not flip it to active listening"));
            }
        }
        // Labels of agents not yet interacted with must not appear anywhere.
        if !labels.is_empty() && !matches!(ev.event, EventKind::ClientMessage(_)) {
            let text = serde_json::to_string(&ev.event).expect("events serialize");
            for (agent, label) in &labels {
                if !r.interacted.contains(agent) && text.contains(label.as_str()) {
                    flag(&mut r, seq, "label-safety", format!("label of {agent} disclosed before interaction"));
                }
            }
        }
        match &ev.event {
            EventKind::SessionStarted(s) => {
                if let Some(ex) = pack.and_then(|p| p.exhibit(&s.exhibit_id).ok()) {
                    exhibit_order = ex.viewpoints.iter().map(|v| v.id.clone()).collect();
                }
            }
            EventKind::AgentSpawned(a) => {
                let node = NodeKind::parse(&a.node).unwrap_or(NodeKind::Idle);
                agents.insert(a.agent_id.clone(), AgentTrack { node, x: a.x, y: a.y });
            }
            EventKind::PoseUpdated(p) => {
                let Some(track) = agents.get_mut(&p.entity) else { continue };
                let Some(node) = p.node.as_deref().and_then(NodeKind::parse) else {
                    flag(&mut r, seq, "behavior", format!("pose for {} without a node", p.entity));
                    continue;
                };
                if !is_legal_transition(track.node, node) {
                    flag(&mut r, seq, "behavior", format!("{}: illegal {:?} -> {:?}", p.entity, track.node, node));
                }
                let moved = (track.x - p.x).abs() > 1e-9 || (track.y - p.y).abs() > 1e-9;
                if moved && track.node == NodeKind::Converse && node == NodeKind::Converse {
                    flag(&mut r, seq, "behavior", format!("{} moved while conversing", p.entity));
                }
                *track = AgentTrack { node, x: p.x, y: p.y };
            }
            EventKind::EpisodeOpened(o) => {
                if episodes.contains_key(&o.episode) {
                    flag(&mut r, seq, "episode", format!("{} opened twice", o.episode));
                }
                episodes.insert(
                    o.episode.clone(),
                    EpisodeTrack {
                        origin: o.origin,
                        participants: o.participants.iter().cloned().collect(),
                        pattern: o.pattern,
                        open: true,
                    },
                );
            }
            EventKind::TurnAdded(t) => {
                let Some(ep) = episodes.get_mut(&t.episode) else {
                    flag(&mut r, seq, "episode", format!("turn in unknown episode {}", t.episode));
                    continue;
                };
                if !ep.open {
                    flag(&mut r, seq, "episode", format!("turn in closed episode {}", t.episode));
                }
                if t.kind == TurnKind::Join {
                    r.joins += 1;
                    if ep.origin != Origin::AgentToAgent {
                        flag(&mut r, seq, "join", format!("join into non agent-agent episode {}", t.episode));
                    }
                    ep.participants.insert(t.speaker.clone());
                    pending_join = Some((seq, t.episode.clone()));
                }
                if ep.participants.iter().any(|p| is_user(p)) {
                    if is_user(&t.speaker) {
                        r.interacted.extend(ep.participants.iter().filter(|p| !is_user(p)).cloned());
                    } else {
                        r.interacted.insert(t.speaker.clone());
                    }
                }
                if t.speaker == GUIDE_ID {
                    match &t.viewpoint_ref {
                        Some(vp) => {
                            if guide_answered {
                                flag(&mut r, seq, "narration", format!("segment {vp} after a Q&A reply"));
                            }
                            if r.narration.contains(vp) {
                                flag(&mut r, seq, "narration", format!("segment {vp} repeated"));
                            }
                            r.narration.push(vp.clone());
                        }
                        None => guide_answered = true,
                    }
                }
            }
            EventKind::PatternChanged(p) => {
                if p.from != Pattern::PassiveListening || p.to != Pattern::ActiveListening {
                    flag(&mut r, seq, "monotonicity", format!("{}: {:?} -> {:?}", p.episode, p.from, p.to));
                } else {
                    r.join_flips += 1;
                }
                if let Some(ep) = episodes.get_mut(&p.episode) {
                    ep.pattern = p.to;
                }
            }
            EventKind::EpisodeClosed(c) => match episodes.get_mut(&c.episode) {
                Some(ep) => {
                    if !ep.open {
                        flag(&mut r, seq, "episode", format!("{} closed twice", c.episode));
                    }
                    if ep.pattern != c.pattern {
                        flag(
                            &mut r,
                            seq,
                            "monotonicity",
                            format!("{} closed as {:?}, tracked {:?}", c.episode, c.pattern, ep.pattern),
                        );
                    }
                    ep.open = false;
                }
                None => flag(&mut r, seq, "episode", format!("close of unknown episode {}", c.episode)),
            },
            EventKind::LabelRevealed(l) => {
                if !r.interacted.contains(&l.agent_id) {
                    flag(&mut r, seq, "label-safety", format!("{} revealed before interaction", l.agent_id));
                }
                if let Some(expected) = labels.get(&l.agent_id) {
                    if expected != &l.identity_label {
                        flag(&mut r, seq, "label-safety", format!("{} revealed with the wrong label", l.agent_id));
                    }
                }
                *r.reveals.entry(l.agent_id.clone()).or_default() += 1;
            }
            _ => {}
        }
    }
    if let Some((at, ep)) = pending_join {
        flag(&mut r, at, "join", format!("join into {ep} did not flip it to active listening"));
    }
    let end = events.last().map_or(0, |e| e.seq);
    for agent in &r.interacted.clone() {
        let n = r.reveals.get(agent).copied().unwrap_or(0);
        if n != 1 {
            flag(&mut r, end, "label-safety", format!("{agent} interacted but revealed {n} times"));
        }
    }
    for (agent, n) in r.reveals.clone() {
        if !r.interacted.contains(&agent) {
            flag(&mut r, end, "label-safety", format!("{agent} revealed {n} times without interaction"));
        }
    }
    if !exhibit_order.is_empty() && !exhibit_order.starts_with(&r.narration) {
        let detail = format!("narration {:?} is out of order for {:?}", r.narration, exhibit_order);
        flag(&mut r, end, "narration", detail);
    }
    r.narration_complete = !exhibit_order.is_empty() && r.narration == exhibit_order;
    r
}
