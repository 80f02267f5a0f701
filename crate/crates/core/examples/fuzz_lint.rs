//! Run random visitor scripts and lint every resulting log.
//!
//! cargo run --example fuzz_lint -- [n] [seed]

use std::collections::BTreeMap;
use std::time::Instant;

use gallery_agents::content::{fixtures, ContentPack};
use gallery_agents::simbot::{fuzz_scenarios, lint_log, FuzzOptions};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);
    let packs: BTreeMap<String, ContentPack> = [fixtures::LION, fixtures::ARTIFACT]
        .into_iter()
        .map(ContentPack::from_json)
        .map(|p| p.map(|p| (p.exhibits[0].id.clone(), p)))
        .collect::<Result<_, _>>()?;

    let started = Instant::now();
    let results = fuzz_scenarios(n, seed, &FuzzOptions::default())?;
    let elapsed = started.elapsed();

    let (mut joins, mut flips, mut dirty) = (0, 0, 0);
    let mut coverage = BTreeMap::new();
    for r in &results {
        let pack = r.coded.exhibit_id.as_deref().and_then(|e| packs.get(e));
        let lint = lint_log(&r.log, pack);
        joins += lint.joins;
        flips += lint.join_flips;
        if !lint.is_clean() {
            dirty += 1;
            println!("{}: {:?}", r.coded.session_id, lint.violations.first());
        }
        for p in &r.pattern_coverage {
            *coverage.entry(*p).or_insert(0) += 1;
        }
    }
    println!("{n} scenarios in {elapsed:.2?}; {dirty} with violations");
    println!("joins={joins} flips={flips}");
    println!("sessions per pattern: {coverage:?}");
    Ok(())
}
