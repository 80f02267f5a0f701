//! Content packs: exhibits, literature-grounded viewpoints, scripted
//! agent-agent dialogues and the gallery layout they live in.
//!
//! A pack is a single UTF-8 JSON file. Unknown keys are rejected so that typos
//! in hand-edited packs surface as schema errors instead of silently vanishing.
//! Once loaded, a pack is immutable and can be shared behind an `Arc`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::Gallery;

/// Number of viewpoints per exhibit in the reference setup.
pub const EXPECTED_VIEWPOINTS: usize = 3;
/// Number of scoring keywords each viewpoint carries.
pub const KEYWORDS_PER_VIEWPOINT: usize = 3;

#[derive(Debug, Error)]
pub enum ContentError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pack: {0}")]
    Parse(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("ungrounded viewpoints: {}", .0.join(", "))]
    Grounding(Vec<String>),
    #[error("unknown exhibit `{0}`")]
    UnknownExhibit(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Excerpt {
    pub text: String,
    /// Free-form citation key.
    pub source: String,
}

/// Cue substring and the canned reply the scripted backend returns for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cue {
    pub cue: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Viewpoint {
    pub id: String,
    pub identity_label: String,
    pub summary: String,
    pub grounding_excerpts: Vec<Excerpt>,
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cues: Vec<Cue>,
    /// Line spoken when generation fails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_line: Option<String>,
    /// Opening line when this agent approaches the visitor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greeting: Option<String>,
}

impl Viewpoint {
    pub fn fallback(&self) -> String {
        self.fallback_line
            .clone()
            .unwrap_or_else(|| format!("Sorry, I lost my train of thought. In short: {}", self.summary))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exhibit {
    pub id: String,
    pub title: String,
    pub description: String,
    pub zone_id: String,
    pub viewpoints: Vec<Viewpoint>,
}

impl Exhibit {
    pub fn viewpoint(&self, id: &str) -> Option<&Viewpoint> {
        self.viewpoints.iter().find(|v| v.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptTurn {
    pub role: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDialogue {
    pub id: String,
    pub exhibit_ref: String,
    /// Viewpoint ids; `ScriptTurn::role` indexes into this list.
    pub roles: Vec<String>,
    pub turns: Vec<ScriptTurn>,
    /// Marks scripts whose speakers disagree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentPack {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub gallery: Gallery,
    pub exhibits: Vec<Exhibit>,
    #[serde(default)]
    pub dialogues: Vec<ScriptedDialogue>,
}

impl ContentPack {
    pub fn exhibit(&self, id: &str) -> Result<&Exhibit, ContentError> {
        self.exhibits.iter().find(|e| e.id == id).ok_or_else(|| ContentError::UnknownExhibit(id.to_string()))
    }

    pub fn viewpoint(&self, id: &str) -> Option<(&Exhibit, &Viewpoint)> {
        self.exhibits.iter().find_map(|e| e.viewpoint(id).map(|v| (e, v)))
    }

    pub fn dialogue(&self, id: &str) -> Option<&ScriptedDialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }

    pub fn dialogues_for<'a>(&'a self, exhibit_id: &'a str) -> impl Iterator<Item = &'a ScriptedDialogue> + 'a {
        self.dialogues.iter().filter(move |d| d.exhibit_ref == exhibit_id)
    }

    /// Parse and fully validate a pack from JSON text.
    pub fn from_json(text: &str) -> Result<Self, ContentError> {
        let pack: ContentPack = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => ContentError::Schema(e.to_string()),
            _ => ContentError::Parse(e.to_string()),
        })?;
        pack.check_structure()?;
        let report = validate_grounding(&pack);
        if !report.passed() {
            return Err(ContentError::Grounding(report.failing_ids()));
        }
        Ok(pack)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pack serializes")
    }

    /// Ids, cross references and gallery geometry. Grounding is checked
    /// separately by [`validate_grounding`].
    pub fn check_structure(&self) -> Result<(), ContentError> {
        let schema = |m: String| Err(ContentError::Schema(m));
        self.gallery.validate().map_err(|e| ContentError::Schema(e.to_string()))?;

        let mut exhibit_ids = BTreeSet::new();
        let mut viewpoint_ids = BTreeSet::new();
        for ex in &self.exhibits {
            if !exhibit_ids.insert(ex.id.as_str()) {
                return schema(format!("duplicate exhibit id `{}`", ex.id));
            }
            if self.gallery.zone(&ex.zone_id).is_none() {
                return schema(format!("exhibit `{}` references unknown zone `{}`", ex.id, ex.zone_id));
            }
            if self.gallery.anchor(&ex.id).is_none() {
                return schema(format!("exhibit `{}` has no anchor in the gallery", ex.id));
            }
            if ex.viewpoints.len() < 2 {
                return schema(format!("exhibit `{}` needs at least 2 viewpoints", ex.id));
            }
            if ex.viewpoints.len() != EXPECTED_VIEWPOINTS {
                log::warn!(
                    "exhibit `{}` has {} viewpoints (reference setup uses {})",
                    ex.id,
                    ex.viewpoints.len(),
                    EXPECTED_VIEWPOINTS
                );
            }
            for vp in &ex.viewpoints {
                if !viewpoint_ids.insert(vp.id.as_str()) {
                    return schema(format!("duplicate viewpoint id `{}`", vp.id));
                }
                if vp.identity_label.trim().is_empty() {
                    return schema(format!("viewpoint `{}` has an empty identity label", vp.id));
                }
            }
        }
        for anchored in self.gallery.exhibit_anchors.keys() {
            if !exhibit_ids.contains(anchored.as_str()) {
                return schema(format!("anchor for unknown exhibit `{anchored}`"));
            }
        }

        let mut dialogue_ids = BTreeSet::new();
        for d in &self.dialogues {
            if !dialogue_ids.insert(d.id.as_str()) {
                return schema(format!("duplicate dialogue id `{}`", d.id));
            }
            let ex = self.exhibits.iter().find(|e| e.id == d.exhibit_ref).ok_or_else(|| {
                ContentError::Schema(format!("dialogue `{}` references unknown exhibit `{}`", d.id, d.exhibit_ref))
            })?;
            if d.roles.len() < 2 {
                return schema(format!("dialogue `{}` needs at least 2 roles", d.id));
            }
            let distinct: BTreeSet<_> = d.roles.iter().collect();
            if distinct.len() != d.roles.len() {
                return schema(format!("dialogue `{}` repeats a role", d.id));
            }
            for role in &d.roles {
                if ex.viewpoint(role).is_none() {
                    return schema(format!("dialogue `{}` role `{role}` is not a viewpoint of `{}`", d.id, ex.id));
                }
            }
            if d.turns.is_empty() {
                return schema(format!("dialogue `{}` has no turns", d.id));
            }
            if let Some(t) = d.turns.iter().find(|t| t.role >= d.roles.len()) {
                return schema(format!("dialogue `{}` turn uses role index {} out of range", d.id, t.role));
            }
        }
        Ok(())
    }
}

pub fn load_pack(path: impl AsRef<Path>) -> Result<ContentPack, ContentError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ContentError::Io { path: path.display().to_string(), source })?;
    ContentPack::from_json(&text)
}

pub fn save_pack(pack: &ContentPack, path: impl AsRef<Path>) -> Result<(), ContentError> {
    let path = path.as_ref();
    std::fs::write(path, pack.to_json() + "\n")
        .map_err(|source| ContentError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "f")]
    Female,
    #[serde(rename = "m")]
    Male,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Avatar {
    pub gender: Gender,
    /// Clients derive skin tone, clothing and the like from this seed.
    pub appearance_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Voice {
    pub voice_id: String,
    pub gender_matched: bool,
}

const FEMALE_VOICES: [&str; 3] = ["voice-f1", "voice-f2", "voice-f3"];
const MALE_VOICES: [&str; 3] = ["voice-m1", "voice-m2", "voice-m3"];

pub fn voice_gender(voice_id: &str) -> Option<Gender> {
    if FEMALE_VOICES.contains(&voice_id) {
        Some(Gender::Female)
    } else if MALE_VOICES.contains(&voice_id) {
        Some(Gender::Male)
    } else {
        None
    }
}

/// Runtime identity of a visitor agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaCard {
    pub agent_id: String,
    pub viewpoint_ref: String,
    pub identity_label: String,
    pub avatar: Avatar,
    pub voice: Voice,
    pub label_visible: bool,
}

fn exhibit_salt(exhibit_id: &str) -> u64 {
    // FNV-1a; stable across platforms and releases, unlike std's hasher.
    exhibit_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// One persona card per viewpoint of `exhibit_id`, in viewpoint order.
///
/// Agent numbering, avatar gender and appearance are all drawn from a stream
/// seeded by `(exhibit, seed)`; nothing about an agent's look or id is tied to
/// its profession.
pub fn assign_personas(pack: &ContentPack, exhibit_id: &str, seed: u64) -> Result<Vec<PersonaCard>, ContentError> {
    let exhibit = pack.exhibit(exhibit_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ exhibit_salt(exhibit_id));
    let mut numbers: Vec<usize> = (1..=exhibit.viewpoints.len()).collect();
    numbers.shuffle(&mut rng);
    let cards = exhibit
        .viewpoints
        .iter()
        .zip(numbers)
        .map(|(vp, n)| {
            let gender = if rng.gen_bool(0.5) { Gender::Female } else { Gender::Male };
            let appearance_seed = rng.gen::<u32>() as u64;
            let voices = match gender {
                Gender::Female => &FEMALE_VOICES,
                Gender::Male => &MALE_VOICES,
            };
            let voice_id = voices[rng.gen_range(0..voices.len())].to_string();
            PersonaCard {
                agent_id: format!("agent-{n:02}"),
                viewpoint_ref: vp.id.clone(),
                identity_label: vp.identity_label.clone(),
                avatar: Avatar { gender, appearance_seed },
                voice: Voice { voice_id, gender_matched: true },
                label_visible: false,
            }
        })
        .collect();
    Ok(cards)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointGrounding {
    pub exhibit_id: String,
    pub viewpoint_id: String,
    pub excerpt_count: usize,
    pub keyword_count: usize,
    pub empty_summary: bool,
}

impl ViewpointGrounding {
    pub fn passed(&self) -> bool {
        self.excerpt_count >= 1 && self.keyword_count == KEYWORDS_PER_VIEWPOINT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub viewpoints: Vec<ViewpointGrounding>,
}

impl GroundingReport {
    pub fn passed(&self) -> bool {
        self.viewpoints.iter().all(ViewpointGrounding::passed)
    }

    pub fn failing_ids(&self) -> Vec<String> {
        self.viewpoints.iter().filter(|v| !v.passed()).map(|v| v.viewpoint_id.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        value["passed"] = serde_json::Value::Bool(self.passed());
        serde_json::to_string_pretty(&value).expect("report serializes")
    }
}

impl fmt::Display for GroundingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.viewpoints {
            let mut notes = Vec::new();
            if v.excerpt_count == 0 {
                notes.push("no grounding excerpts".to_string());
            }
            if v.keyword_count != KEYWORDS_PER_VIEWPOINT {
                notes.push(format!("{} keywords, expected {}", v.keyword_count, KEYWORDS_PER_VIEWPOINT));
            }
            if v.empty_summary {
                notes.push("empty summary".to_string());
            }
            let status = if v.passed() { "ok  " } else { "FAIL" };
            write!(f, "{status} {}/{}: {} excerpt(s)", v.exhibit_id, v.viewpoint_id, v.excerpt_count)?;
            if !notes.is_empty() {
                write!(f, " ({})", notes.join("; "))?;
            }
            writeln!(f)?;
        }
        write!(f, "{}", if self.passed() { "grounding: pass" } else { "grounding: FAIL" })
    }
}

/// Per-viewpoint grounding summary. Report-only; never fails.
pub fn validate_grounding(pack: &ContentPack) -> GroundingReport {
    let viewpoints = pack
        .exhibits
        .iter()
        .flat_map(|ex| {
            ex.viewpoints.iter().map(move |vp| ViewpointGrounding {
                exhibit_id: ex.id.clone(),
                viewpoint_id: vp.id.clone(),
                excerpt_count: vp.grounding_excerpts.len(),
                keyword_count: vp.keywords.len(),
                empty_summary: vp.summary.trim().is_empty(),
            })
        })
        .collect();
    GroundingReport { viewpoints }
}

/// Identity label lookup by viewpoint id for one exhibit.
pub fn labels_by_viewpoint(exhibit: &Exhibit) -> BTreeMap<&str, &str> {
    exhibit.viewpoints.iter().map(|v| (v.id.as_str(), v.identity_label.as_str())).collect()
}

/// `noun` with its indefinite article: "an Ethicist", "a Curator".
pub fn with_article(noun: &str) -> String {
    let vowel = noun.chars().next().is_some_and(|c| "AEIOUaeiou".contains(c));
    format!("{} {noun}", if vowel { "an" } else { "a" })
}

/// The two bundled fixture packs, as JSON text.
pub mod fixtures {
    use super::{ContentError, ContentPack};

    pub const LION: &str = include_str!("../packs/lion.json");
    pub const ARTIFACT: &str = include_str!("../packs/artifact_piece.json");

    /// `(pack, exhibit id)` for every bundled pack.
    pub fn bundled() -> Result<Vec<(ContentPack, String)>, ContentError> {
        [LION, ARTIFACT]
            .iter()
            .map(|text| {
                let pack = ContentPack::from_json(text)?;
                let exhibit = pack.exhibits[0].id.clone();
                Ok((pack, exhibit))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lion() -> ContentPack {
        ContentPack::from_json(fixtures::LION).unwrap()
    }

    #[test]
    fn lion_pack_loads_with_three_viewpoints() {
        let pack = lion();
        assert_eq!(pack.exhibits.len(), 1);
        let ex = &pack.exhibits[0];
        assert_eq!(ex.title, "Lion Attacking a Dromedary");
        let labels: Vec<_> = ex.viewpoints.iter().map(|v| v.identity_label.as_str()).collect();
        assert_eq!(labels, ["Aesthetician", "Ethicist", "Biologist"]);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(ContentPack::from_json(""), Err(ContentError::Parse(_))));
        assert!(matches!(ContentPack::from_json("{\"name\": "), Err(ContentError::Parse(_))));
    }

    #[test]
    fn unknown_and_missing_keys_are_schema_errors() {
        let mut v: serde_json::Value = serde_json::from_str(fixtures::LION).unwrap();
        v["exhibits"][0]["curator_notes"] = "x".into();
        assert!(matches!(ContentPack::from_json(&v.to_string()), Err(ContentError::Schema(_))));

        let mut v: serde_json::Value = serde_json::from_str(fixtures::LION).unwrap();
        v["exhibits"][0].as_object_mut().unwrap().remove("title");
        assert!(matches!(ContentPack::from_json(&v.to_string()), Err(ContentError::Schema(_))));
    }

    #[test]
    fn duplicate_and_dangling_ids_are_schema_errors() {
        let mut v: serde_json::Value = serde_json::from_str(fixtures::LION).unwrap();
        let vp0 = v["exhibits"][0]["viewpoints"][0]["id"].clone();
        v["exhibits"][0]["viewpoints"][1]["id"] = vp0;
        assert!(
            matches!(ContentPack::from_json(&v.to_string()), Err(ContentError::Schema(m)) if m.contains("duplicate"))
        );

        let mut v: serde_json::Value = serde_json::from_str(fixtures::LION).unwrap();
        v["dialogues"][0]["roles"][0] = "nobody".into();
        assert!(matches!(ContentPack::from_json(&v.to_string()), Err(ContentError::Schema(_))));

        let mut v: serde_json::Value = serde_json::from_str(fixtures::LION).unwrap();
        v["dialogues"][0]["turns"][0]["role"] = 9.into();
        assert!(matches!(ContentPack::from_json(&v.to_string()), Err(ContentError::Schema(_))));
    }

    #[test]
    fn zero_excerpts_is_a_grounding_error() {
        let mut v: serde_json::Value = serde_json::from_str(fixtures::LION).unwrap();
        let id = v["exhibits"][0]["viewpoints"][1]["id"].as_str().unwrap().to_string();
        v["exhibits"][0]["viewpoints"][1]["grounding_excerpts"] = serde_json::json!([]);
        match ContentPack::from_json(&v.to_string()) {
            Err(ContentError::Grounding(ids)) => assert_eq!(ids, vec![id]),
            other => panic!("expected grounding error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_every_field() {
        for text in [fixtures::LION, fixtures::ARTIFACT] {
            let pack = ContentPack::from_json(text).unwrap();
            let again = ContentPack::from_json(&pack.to_json()).unwrap();
            assert_eq!(pack, again);
            assert_eq!(pack.to_json(), again.to_json());
        }
    }

    #[test]
    fn grounding_report_passes_for_lion() {
        let report = validate_grounding(&lion());
        assert!(report.passed());
        assert_eq!(report.viewpoints.len(), 3);
        assert!(report.viewpoints.iter().all(|v| v.excerpt_count >= 1));
        assert!(report.to_string().ends_with("grounding: pass"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["passed"], true);
    }

    #[test]
    fn grounding_report_names_failing_viewpoints() {
        let mut pack = lion();
        pack.exhibits[0].viewpoints[0].grounding_excerpts.clear();
        pack.exhibits[0].viewpoints[2].keywords.pop();
        let report = validate_grounding(&pack);
        assert!(!report.passed());
        assert_eq!(
            report.failing_ids(),
            vec![pack.exhibits[0].viewpoints[0].id.clone(), pack.exhibits[0].viewpoints[2].id.clone()]
        );
        let text = report.to_string();
        assert!(text.contains("no grounding excerpts"));
        assert!(text.contains("2 keywords"));
    }

    #[test]
    fn personas_cover_each_viewpoint_with_hidden_labels() {
        let pack = lion();
        let cards = assign_personas(&pack, &pack.exhibits[0].id, 7).unwrap();
        let labels: Vec<_> = cards.iter().map(|c| c.identity_label.as_str()).collect();
        assert_eq!(labels, ["Aesthetician", "Ethicist", "Biologist"]);
        assert!(cards.iter().all(|c| !c.label_visible));
        assert!(cards.iter().all(|c| voice_gender(&c.voice.voice_id) == Some(c.avatar.gender)));
        let ids: BTreeSet<_> = cards.iter().map(|c| c.agent_id.as_str()).collect();
        assert_eq!(ids.len(), 3);
        assert_eq!(cards, assign_personas(&pack, &pack.exhibits[0].id, 7).unwrap());
    }

    #[test]
    fn unknown_exhibit_is_rejected() {
        assert!(matches!(assign_personas(&lion(), "nope", 1), Err(ContentError::UnknownExhibit(_))));
    }

    #[test]
    fn appearance_is_not_tied_to_profession() {
        let pack = lion();
        let mut pairs = BTreeSet::new();
        let mut agent_ids = BTreeSet::new();
        for seed in 0..1000 {
            for c in assign_personas(&pack, &pack.exhibits[0].id, seed).unwrap() {
                pairs.insert((c.identity_label.clone(), c.avatar.gender));
                agent_ids.insert((c.identity_label, c.agent_id));
            }
        }
        assert_eq!(pairs.len(), 3 * 2);
        assert_eq!(agent_ids.len(), 3 * 3);
    }
}
