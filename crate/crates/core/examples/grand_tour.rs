//! Drive a scripted visitor through one exhibit and print what happened.
//!
//! cargo run --example grand_tour -- [seed]

use std::sync::Arc;

use gallery_agents::content::{fixtures, ContentPack};
use gallery_agents::session::{Condition, SessionConfig};
use gallery_agents::simbot::{lint_log, run_scenario_with_pack, ScenarioOptions, VisitorScript};

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let pack = Arc::new(ContentPack::from_json(fixtures::LION)?);
    let script = VisitorScript::grand_tour(&pack, "lion-dromedary")?;
    let config = SessionConfig::new("packs/lion.json", "lion-dromedary", Condition::Simviews, seed);
    let result = run_scenario_with_pack(pack.clone(), config, &script, seed, &ScenarioOptions::default())?;

    for ep in &result.coded.episodes {
        println!("{:<10} {:<18?} turns={:<3} closed={:?}", ep.id, ep.pattern, ep.turns.len(), ep.close_reason);
    }
    let last = result.log.last().map_or(0, |e| e.tick);
    println!("ticks={last} completed={} skipped={:?}", result.completed, result.skipped);
    println!("patterns: {:?}", result.pattern_coverage);
    let lint = lint_log(&result.log, Some(&pack));
    println!("lint violations: {}", lint.violations.len());
    for v in lint.violations.iter().take(10) {
        println!("  #{} {}: {}", v.seq, v.rule, v.detail);
    }
    Ok(())
}
