//! The four participation patterns, built turn by turn.

use std::collections::BTreeSet;

use gallery_agents::conversation::{classify, CloseReason, EpisodeBook, Origin};

fn main() -> anyhow::Result<()> {
    let mut book = EpisodeBook::new();
    let cases: [(&str, &str, Origin, &[&str]); 4] = [
        ("user", "agent-01", Origin::UserInitiated, &["user", "agent-01", "user", "agent-01"]),
        ("agent-02", "user", Origin::AgentToUser, &["agent-02", "user", "agent-02"]),
        ("agent-01", "agent-03", Origin::AgentToAgent, &["agent-01", "agent-03"]),
        ("agent-02", "agent-03", Origin::AgentToAgent, &["agent-02", "agent-03", "user", "agent-02"]),
    ];
    for (opener, to, origin, speakers) in cases {
        let id = book.open_episode(opener, &BTreeSet::from([to.to_string()]), origin, None)?.id.clone();
        for (t, who) in speakers.iter().enumerate() {
            let turn = book.add_turn(&id, who, "...", t as u64, None)?;
            println!("  {id} #{} {:<9} {:?}", turn.index, who, turn.kind);
        }
        let ep = book.get(&id).expect("just opened");
        println!("{id}: {:?} -> {:?}\n", origin, classify(ep)?);
        book.close_episode(&id, CloseReason::Timeout)?;
    }
    Ok(())
}
