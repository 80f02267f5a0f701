//! Counterbalanced visit orders for a two-condition, two-exhibit study.

use gallery_agents::analytics::latin_square;

fn main() -> anyhow::Result<()> {
    let n = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let table = latin_square(n, &["SIMVIEWS", "BASE"], &["lion-dromedary", "artifact-piece"])?;
    for a in &table {
        let [(c1, e1), (c2, e2)] = &a.visits;
        println!("P{:02} row {}: {c1} @ {e1}, then {c2} @ {e2}", a.participant, a.row);
    }
    let first = table.iter().filter(|a| a.row == 0).count();
    println!("rows: {first}/{}", table.len() - first);
    Ok(())
}
