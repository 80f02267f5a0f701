//! The single-guide condition: narration of every viewpoint, then Q&A.

use std::sync::Arc;

use gallery_agents::content::{fixtures, ContentPack};
use gallery_agents::session::{ClientMessage, Condition, EventKind, Session, SessionConfig, GUIDE_ID};

fn main() -> anyhow::Result<()> {
    let pack = Arc::new(ContentPack::from_json(fixtures::ARTIFACT)?);
    let config = SessionConfig::new("packs/artifact_piece.json", "artifact-piece", Condition::Base, 1);
    let mut session = Session::with_pack(pack, config)?;
    let guide = session.agent_position(GUIDE_ID).expect("guide spawned");

    session.handle_client(ClientMessage::Hello { name: None })?;
    session.handle_client(ClientMessage::Move { x: guide.x, y: guide.y + 1.0 })?;
    session.run_ticks(30);
    session.handle_client(ClientMessage::Say {
        target: Some(GUIDE_ID.into()),
        episode: None,
        text: "Who made this piece?".into(),
    })?;
    session.run_ticks(400);

    for e in session.log() {
        if let EventKind::TurnAdded(t) = &e.event {
            let tag = t.viewpoint_ref.as_deref().unwrap_or("-");
            println!("{:>5} {:<6} [{tag}] {}", e.tick, t.speaker, t.text);
        }
    }
    Ok(())
}
