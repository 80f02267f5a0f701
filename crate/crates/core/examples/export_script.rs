//! Print the built-in grand tour as a script file for `gallery sim run`.
//!
//! cargo run --example export_script > scripts/grand_tour.json

use gallery_agents::content::{fixtures, ContentPack};
use gallery_agents::simbot::VisitorScript;

fn main() -> anyhow::Result<()> {
    let pack = ContentPack::from_json(fixtures::LION)?;
    println!("{}", VisitorScript::grand_tour(&pack, "lion-dromedary")?.to_json());
    Ok(())
}
