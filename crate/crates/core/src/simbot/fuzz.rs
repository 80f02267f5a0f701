//! Randomized visitor scripts.

use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    run_scenario_with_pack, Action, EventTrigger, SayTarget, ScenarioOptions, ScenarioResult, ScriptStep, SimError,
    VisitorScript,
};
use crate::content::{fixtures, ContentPack};
use crate::session::{Condition, SessionConfig, SessionError};

const OPENERS: &[&str] = &["What do you make of the", "Tell me about the", "Why does the", "Have you noticed the"];
const SMALL_TALK: &[&str] = &["Hello there.", "Interesting piece.", "What are you looking at?", "Hmm."];

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzOptions {
    /// Simulated seconds per scenario.
    pub time_limit_s: f64,
    /// Share of scenarios run under the guide condition.
    pub base_share: f64,
    pub log_dir: Option<PathBuf>,
}

impl Default for FuzzOptions {
    fn default() -> Self {
        Self { time_limit_s: 150.0, base_share: 0.3, log_dir: None }
    }
}

fn say(rng: &mut ChaCha8Rng, pack: &ContentPack, exhibit_id: &str) -> String {
    let cues: Vec<&str> = pack
        .exhibit(exhibit_id)
        .map(|e| e.viewpoints.iter().flat_map(|v| v.cues.iter().map(|c| c.cue.as_str())).collect())
        .unwrap_or_default();
    match cues.choose(rng) {
        Some(cue) if rng.gen_bool(0.7) => format!("{} {}?", OPENERS.choose(rng).unwrap(), cue),
        _ => SMALL_TALK.choose(rng).unwrap().to_string(),
    }
}

/// A random but well-formed visitor script ending with `Leave`.
pub fn random_script(
    rng: &mut ChaCha8Rng,
    pack: &ContentPack,
    exhibit_id: &str,
    condition: Condition,
) -> Result<VisitorScript, SimError> {
    let exhibit = pack.exhibit(exhibit_id).map_err(|e| SimError::Script(e.to_string()))?;
    let rect = pack
        .gallery
        .zone(&exhibit.zone_id)
        .map(|z| z.rect)
        .ok_or_else(|| SimError::Script(format!("no zone for {exhibit_id}")))?;
    let anchor = pack.gallery.anchor(exhibit_id).unwrap_or_else(|| rect.center());
    let mut steps = vec![ScriptStep::now(Action::MoveTo {
        x: anchor.x + rng.gen_range(-1.5..1.5),
        y: anchor.y + rng.gen_range(-1.5..1.5),
    })];
    for _ in 0..rng.gen_range(3..10) {
        let roll = rng.gen_range(0..100);
        let action = match roll {
            0..=19 => Action::MoveTo {
                x: rng.gen_range(rect.min.x + 0.5..rect.max.x - 0.5),
                y: rng.gen_range(rect.min.y + 0.5..rect.max.y - 0.5),
            },
            20..=49 => {
                let to = match condition {
                    Condition::Base => "guide".to_string(),
                    Condition::Simviews => {
                        let vp = exhibit.viewpoints.choose(rng).expect("exhibits have viewpoints");
                        format!("viewpoint:{}", vp.id)
                    }
                };
                Action::SayTo { to: SayTarget::Agent(to), text: say(rng, pack, exhibit_id) }
            }
            50..=64 if condition == Condition::Simviews => {
                steps.push(ScriptStep::on(
                    EventTrigger::OverheardDialogueStarted,
                    Action::Wait { seconds: rng.gen_range(0.0..4.0) },
                ));
                Action::JoinCurrentOverheard { text: say(rng, pack, exhibit_id) }
            }
            65..=74 if condition == Condition::Simviews => {
                let reply = if rng.gen_bool(0.5) {
                    Action::SayTo { to: SayTarget::Agent("greeter".into()), text: say(rng, pack, exhibit_id) }
                } else {
                    Action::Wait { seconds: 20.0 }
                };
                steps.push(ScriptStep::on(EventTrigger::Greeted, reply));
                continue;
            }
            _ => Action::Wait { seconds: rng.gen_range(1.0..20.0) },
        };
        steps.push(ScriptStep::now(action));
    }
    steps.push(ScriptStep::now(Action::Leave));
    Ok(VisitorScript { name: Some("fuzz".into()), steps })
}

/// Run `n` random scenarios over the bundled packs. Each scenario draws its
/// pack, condition, behavior rates and seed from a generator seeded with `seed`.
pub fn fuzz_scenarios(n: usize, seed: u64, options: &FuzzOptions) -> Result<Vec<ScenarioResult>, SimError> {
    let packs: Vec<(Arc<ContentPack>, String)> =
        fixtures::bundled().map_err(SessionError::from)?.into_iter().map(|(p, e)| (Arc::new(p), e)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = ScenarioOptions {
        time_limit_s: options.time_limit_s,
        stop_on_completion: false,
        linger_s: 0.0,
        require_completion: false,
        log_dir: options.log_dir.clone(),
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (pack, exhibit_id) = packs.choose(&mut rng).expect("bundled packs").clone();
        let condition = if rng.gen_bool(options.base_share) { Condition::Base } else { Condition::Simviews };
        let run_seed: u64 = rng.gen();
        let mut config = SessionConfig::new("bundled", &exhibit_id, condition, run_seed);
        config.behavior.greet_probability = rng.gen_range(0.1..0.9);
        config.behavior.script_start_probability = rng.gen_range(0.2..1.0);
        config.session_id = Some(format!("fuzz-{seed}-{i:03}"));
        let script = random_script(&mut rng, &pack, &exhibit_id, condition)?;
        out.push(run_scenario_with_pack(pack, config, &script, run_seed, &scenario)?);
    }
    Ok(out)
}
