//! 2D top-down gallery geometry: zones, waypoints, poses and proximity.
//!
//! Units are meters and seconds. There is no collision resolution; entities
//! may overlap. Movement is straight-line toward a target at constant speed.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Radius within which an agent may start a conversation with the user.
pub const DEFAULT_GREET_RADIUS: f64 = 1.5;
/// Radius within which an agent counts as viewing an exhibit.
pub const DEFAULT_VIEWING_RADIUS: f64 = 2.5;
/// Radius within which the user can overhear an agent-agent dialogue.
pub const DEFAULT_OVERHEAR_RADIUS: f64 = 3.0;
/// Agent walking speed.
pub const DEFAULT_AGENT_SPEED: f64 = 0.8;
/// Visitor walking speed.
pub const DEFAULT_USER_SPEED: f64 = 1.2;

const ARRIVAL_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("invalid gallery: {0}")]
    InvalidGallery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle, `min` inclusive to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Point {
        Point::new((self.min.x + self.max.x) / 2.0, (self.min.y + self.max.y) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub id: String,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub zone_id: String,
    pub point: Point,
}

/// Gallery layout as stored in a content pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gallery {
    pub zones: Vec<Zone>,
    pub waypoints: Vec<Waypoint>,
    pub exhibit_anchors: IndexMap<String, Point>,
}

impl Gallery {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.zones.is_empty() {
            return Err(WorldError::InvalidGallery("no zones".into()));
        }
        let mut ids = BTreeSet::new();
        for z in &self.zones {
            if !ids.insert(z.id.as_str()) {
                return Err(WorldError::InvalidGallery(format!("duplicate zone id `{}`", z.id)));
            }
            if z.rect.min.x > z.rect.max.x || z.rect.min.y > z.rect.max.y {
                return Err(WorldError::InvalidGallery(format!("zone `{}` has inverted rectangle", z.id)));
            }
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            let zone = self.zone(&w.zone_id).ok_or_else(|| {
                WorldError::InvalidGallery(format!("waypoint {i} references unknown zone `{}`", w.zone_id))
            })?;
            if !zone.rect.contains(&w.point) {
                return Err(WorldError::InvalidGallery(format!("waypoint {i} lies outside zone `{}`", w.zone_id)));
            }
        }
        for (exhibit, anchor) in &self.exhibit_anchors {
            if !self.zones.iter().any(|z| z.rect.contains(anchor)) {
                return Err(WorldError::InvalidGallery(format!(
                    "anchor of exhibit `{exhibit}` lies outside every zone"
                )));
            }
        }
        Ok(())
    }

    pub fn zone(&self, id: &str) -> Option<&Zone> {
        self.zones.iter().find(|z| z.id == id)
    }

    pub fn anchor(&self, exhibit_id: &str) -> Option<Point> {
        self.exhibit_anchors.get(exhibit_id).copied()
    }

    /// Closest exhibit whose anchor is within `radius` of `p`, ties broken by id.
    pub fn exhibit_within(&self, p: &Point, radius: f64) -> Option<(&str, f64)> {
        self.exhibit_anchors
            .iter()
            .map(|(id, a)| (id.as_str(), a.distance(p)))
            .filter(|(_, d)| *d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)))
    }

    /// Where a visitor walks in: the first waypoint, or the first zone's center.
    pub fn entrance(&self) -> Point {
        self.waypoints
            .first()
            .map(|w| w.point)
            .unwrap_or_else(|| self.zones.first().map(|z| z.rect.center()).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub entity_id: String,
    pub position: Point,
    /// Radians in `[0, 2π)`.
    pub heading: f64,
    /// Meters per second, `>= 0`.
    pub speed: f64,
    /// Where the entity is walking. `None` means standing still.
    #[serde(default)]
    pub target: Option<Point>,
}

impl Pose {
    pub fn standing(entity_id: impl Into<String>, position: Point) -> Self {
        Self { entity_id: entity_id.into(), position, heading: 0.0, speed: 0.0, target: None }
    }

    pub fn is_moving(&self) -> bool {
        self.speed > 0.0 && self.target.is_some_and(|t| t.distance(&self.position) > ARRIVAL_EPS)
    }

    pub fn arrived(&self) -> bool {
        match self.target {
            Some(t) => t.distance(&self.position) <= ARRIVAL_EPS,
            None => true,
        }
    }
}

pub fn normalize_heading(h: f64) -> f64 {
    let r = h.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProximityKind {
    Entered,
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityEvent {
    pub subject: String,
    /// Entity id or exhibit id.
    pub object: String,
    pub kind: ProximityKind,
    pub radius: f64,
    pub tick: u64,
}

/// A subject whose neighbourhood is watched for threshold crossings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityWatch {
    pub subject: String,
    pub radius: f64,
    pub include_exhibits: bool,
}

fn advance(pose: &Pose, dt: f64) -> Pose {
    let mut next = pose.clone();
    let Some(target) = pose.target else {
        return next;
    };
    if pose.speed <= 0.0 {
        return next;
    }
    let dx = target.x - pose.position.x;
    let dy = target.y - pose.position.y;
    let dist = dx.hypot(dy);
    if dist <= ARRIVAL_EPS {
        next.position = target;
        return next;
    }
    let step = pose.speed * dt;
    next.heading = normalize_heading(dy.atan2(dx));
    if step >= dist {
        next.position = target;
    } else {
        let f = step / dist;
        next.position = Point::new(pose.position.x + dx * f, pose.position.y + dy * f);
    }
    next
}

/// Advance all poses by `dt` seconds and report watched threshold crossings.
///
/// A crossing is reported when the distance goes from `> radius` before the
/// step to `<= radius` after it (entered), or the reverse (left).
pub fn step_world(
    gallery: &Gallery,
    poses: &[Pose],
    dt: f64,
    watches: &[ProximityWatch],
    tick: u64,
) -> (Vec<Pose>, Vec<ProximityEvent>) {
    assert!(dt > 0.0, "dt must be positive");
    let next: Vec<Pose> = poses.iter().map(|p| advance(p, dt)).collect();
    let mut events = Vec::new();
    for w in watches {
        let (Some(before), Some(after)) =
            (poses.iter().find(|p| p.entity_id == w.subject), next.iter().find(|p| p.entity_id == w.subject))
        else {
            continue;
        };
        let mut objects: Vec<(&str, Point, Point)> = poses
            .iter()
            .zip(&next)
            .filter(|(p, _)| p.entity_id != w.subject)
            .map(|(p, q)| (p.entity_id.as_str(), p.position, q.position))
            .collect();
        if w.include_exhibits {
            objects.extend(gallery.exhibit_anchors.iter().map(|(id, a)| (id.as_str(), *a, *a)));
        }
        objects.sort_by(|a, b| a.0.cmp(b.0));
        for (object, was, now) in objects {
            let inside_before = before.position.distance(&was) <= w.radius;
            let inside_after = after.position.distance(&now) <= w.radius;
            let kind = match (inside_before, inside_after) {
                (false, true) => ProximityKind::Entered,
                (true, false) => ProximityKind::Left,
                _ => continue,
            };
            events.push(ProximityEvent {
                subject: w.subject.clone(),
                object: object.to_string(),
                kind,
                radius: w.radius,
                tick,
            });
        }
    }
    (next, events)
}

/// Entities within `radius` of `subject` (inclusive), nearest first, ties by id.
pub fn nearby(poses: &[Pose], subject: &str, radius: f64) -> Result<Vec<String>, WorldError> {
    let me =
        poses.iter().find(|p| p.entity_id == subject).ok_or_else(|| WorldError::UnknownEntity(subject.to_string()))?;
    let mut hits: Vec<(f64, &str)> = poses
        .iter()
        .filter(|p| p.entity_id != subject)
        .map(|p| (p.position.distance(&me.position), p.entity_id.as_str()))
        .filter(|(d, _)| *d <= radius)
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(hits.into_iter().map(|(_, id)| id.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> Gallery {
        Gallery {
            zones: vec![Zone {
                id: "hall".into(),
                rect: Rect { min: Point::new(0.0, 0.0), max: Point::new(20.0, 20.0) },
            }],
            waypoints: vec![Waypoint { zone_id: "hall".into(), point: Point::new(1.0, 1.0) }],
            exhibit_anchors: IndexMap::from([("ex".to_string(), Point::new(19.0, 19.0))]),
        }
    }

    fn walker(id: &str, at: Point, to: Point, speed: f64) -> Pose {
        Pose { entity_id: id.into(), position: at, heading: 0.0, speed, target: Some(to) }
    }

    #[test]
    fn stationary_world_is_a_fixed_point() {
        let poses = vec![Pose::standing("a", Point::new(2.0, 2.0)), Pose::standing("user", Point::new(3.0, 2.0))];
        let watch = [ProximityWatch { subject: "user".into(), radius: 1.5, include_exhibits: true }];
        for dt in [0.01, 1.0, 37.0] {
            let (next, events) = step_world(&room(), &poses, dt, &watch, 1);
            assert_eq!(next, poses);
            assert!(events.is_empty());
        }
    }

    #[test]
    fn approaching_entity_enters_radius_once() {
        let poses = vec![
            Pose::standing("user", Point::new(5.0, 5.0)),
            walker("a", Point::new(7.0, 5.0), Point::new(5.0, 5.0), 1.0),
        ];
        let watch = [ProximityWatch { subject: "user".into(), radius: 1.5, include_exhibits: false }];
        let (next, events) = step_world(&room(), &poses, 1.0, &watch, 4);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, ProximityKind::Entered);
        assert_eq!(events[0].object, "a");
        assert_eq!(events[0].tick, 4);
        assert!((next[1].position.x - 6.0).abs() < 1e-12);
        assert!((next[1].heading - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn half_steps_match_full_step() {
        let poses = vec![walker("a", Point::new(1.0, 2.0), Point::new(9.0, 8.0), 0.8)];
        let (once, _) = step_world(&room(), &poses, 1.0, &[], 0);
        let (half, _) = step_world(&room(), &poses, 0.5, &[], 0);
        let (twice, _) = step_world(&room(), &half, 0.5, &[], 0);
        assert!(once[0].position.distance(&twice[0].position) < 1e-9);
    }

    #[test]
    fn movement_never_overshoots_target() {
        let poses = vec![walker("a", Point::new(1.0, 1.0), Point::new(1.5, 1.0), 2.0)];
        let (next, _) = step_world(&room(), &poses, 1.0, &[], 0);
        assert_eq!(next[0].position, Point::new(1.5, 1.0));
        assert!(next[0].arrived());
    }

    #[test]
    fn crossing_is_symmetric_between_subjects() {
        let poses = vec![
            walker("a", Point::new(2.0, 5.0), Point::new(10.0, 5.0), 1.0),
            walker("b", Point::new(10.0, 5.0), Point::new(2.0, 5.0), 1.0),
        ];
        let watch = [
            ProximityWatch { subject: "a".into(), radius: 1.5, include_exhibits: false },
            ProximityWatch { subject: "b".into(), radius: 1.5, include_exhibits: false },
        ];
        let mut cur = poses;
        let mut seen = Vec::new();
        for tick in 0..10 {
            let (next, ev) = step_world(&room(), &cur, 0.5, &watch, tick);
            seen.extend(ev);
            cur = next;
        }
        let ab: Vec<_> = seen.iter().filter(|e| e.subject == "a").map(|e| (e.tick, e.kind)).collect();
        let ba: Vec<_> = seen.iter().filter(|e| e.subject == "b").map(|e| (e.tick, e.kind)).collect();
        assert!(!ab.is_empty());
        assert_eq!(ab, ba);
    }

    #[test]
    fn nearby_orders_by_distance_and_excludes_subject() {
        let poses = vec![
            Pose::standing("me", Point::new(0.0, 0.0)),
            Pose::standing("far", Point::new(2.0, 0.0)),
            Pose::standing("mid", Point::new(0.0, 1.0)),
            Pose::standing("near", Point::new(0.5, 0.0)),
        ];
        assert_eq!(nearby(&poses, "me", 1.0).unwrap(), vec!["near", "mid"]);
        assert!(nearby(&poses[..1], "me", 10.0).unwrap().is_empty());
        assert!(nearby(&poses, "me", 0.0).unwrap().is_empty());
        assert_eq!(nearby(&poses, "ghost", 1.0), Err(WorldError::UnknownEntity("ghost".into())));
    }

    #[test]
    fn radius_zero_returns_coincident_entities() {
        let poses = vec![Pose::standing("me", Point::new(1.0, 1.0)), Pose::standing("twin", Point::new(1.0, 1.0))];
        assert_eq!(nearby(&poses, "me", 0.0).unwrap(), vec!["twin"]);
    }

    #[test]
    fn gallery_validation_rejects_stray_waypoint() {
        let mut g = room();
        assert!(g.validate().is_ok());
        g.waypoints.push(Waypoint { zone_id: "hall".into(), point: Point::new(25.0, 1.0) });
        assert!(matches!(g.validate(), Err(WorldError::InvalidGallery(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn brute(poses: &[Pose], subject: &str, radius: f64) -> Vec<String> {
            let me = poses.iter().find(|p| p.entity_id == subject).unwrap().position;
            let mut out: Vec<(f64, String)> = Vec::new();
            for p in poses {
                if p.entity_id == subject {
                    continue;
                }
                let d = ((p.position.x - me.x).powi(2) + (p.position.y - me.y).powi(2)).sqrt();
                if d <= radius {
                    out.push((d, p.entity_id.clone()));
                }
            }
            // insertion sort keeps the oracle free of the comparator used above
            for i in 1..out.len() {
                let mut j = i;
                while j > 0 && (out[j].0 < out[j - 1].0 || (out[j].0 == out[j - 1].0 && out[j].1 < out[j - 1].1)) {
                    out.swap(j, j - 1);
                    j -= 1;
                }
            }
            out.into_iter().map(|(_, id)| id).collect()
        }

        proptest! {
            #[test]
            fn nearby_matches_brute_force(
                pts in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..50),
                radius in 0.0f64..10.0,
            ) {
                let poses: Vec<Pose> = pts
                    .iter()
                    .enumerate()
                    .map(|(i, (x, y))| Pose::standing(format!("e{i:02}"), Point::new(*x, *y)))
                    .collect();
                prop_assert_eq!(nearby(&poses, "e00", radius).unwrap(), brute(&poses, "e00", radius));
            }

            #[test]
            fn heading_stays_in_range(h in -100.0f64..100.0) {
                let n = normalize_heading(h);
                prop_assert!((0.0..TAU).contains(&n));
            }
        }
    }
}
