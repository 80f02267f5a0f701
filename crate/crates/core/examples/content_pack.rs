//! Load a content pack, check its grounding and show the persona cards a
//! session would hand out.
//!
//! cargo run --example content_pack -- [packs/artifact_piece.json] [seed]

use gallery_agents::content::{assign_personas, load_pack, validate_grounding};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/packs/lion.json").into());
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let pack = load_pack(&path)?;

    let report = validate_grounding(&pack);
    println!("{report}");

    for ex in &pack.exhibits {
        println!(
            "{} ({} viewpoints, {} scripted dialogues)",
            ex.title,
            ex.viewpoints.len(),
            pack.dialogues_for(&ex.id).count()
        );
        for card in assign_personas(&pack, &ex.id, seed)? {
            println!(
                "  {} speaks for {:<22} avatar {:?}/{:x} voice {}",
                card.agent_id, card.viewpoint_ref, card.avatar.gender, card.avatar.appearance_seed, card.voice.voice_id
            );
        }
    }
    Ok(())
}
