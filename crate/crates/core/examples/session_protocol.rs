//! Drive a session with protocol lines, as a network client would, and print
//! what comes back.

use std::sync::Arc;

use gallery_agents::content::{fixtures, ContentPack};
use gallery_agents::session::{parse_client_message, Condition, EventKind, ServerMessage, Session, SessionConfig};

fn show(out: &[ServerMessage]) {
    for msg in out {
        match msg {
            ServerMessage::Event { event } => match &event.event {
                EventKind::PoseUpdated(_) | EventKind::ClientMessage(_) => {}
                EventKind::TurnAdded(t) => println!("  [{}] {} ({:?}): {}", t.episode, t.speaker, t.kind, t.text),
                other => println!("  tick {} {}", event.tick, other.type_name()),
            },
            ServerMessage::Snapshot { snapshot } => {
                println!("  snapshot: {} agent(s) at tick {}", snapshot.agents.len(), snapshot.tick)
            }
            ServerMessage::Error { code, message } => println!("  error {code}: {message}"),
        }
    }
}

fn send(session: &mut Session, line: &str) {
    println!("> {line}");
    match parse_client_message(line).and_then(|m| session.handle_client(m)) {
        Ok(out) => show(&out),
        Err(e) => show(&[ServerMessage::error(&e)]),
    }
}

fn main() -> anyhow::Result<()> {
    let pack = Arc::new(ContentPack::from_json(fixtures::LION)?);
    let mut config = SessionConfig::new("packs/lion.json", "lion-dromedary", Condition::Simviews, 2);
    config.behavior.greet_probability = 0.0;
    config.behavior.script_start_probability = 0.0;
    let mut session = Session::with_pack(pack, config)?;
    let target = session.agent_ids()[0].clone();

    send(&mut session, r#"{"type":"Hello","name":"demo"}"#);
    send(&mut session, &format!(r#"{{"type":"Inspect","agent":"{target}"}}"#));
    // Agents wander, so keep walking toward the target until close enough.
    loop {
        let (at, me) = (session.agent_position(&target).expect("spawned"), session.user_position().expect("present"));
        if at.distance(&me) < 2.0 {
            break;
        }
        let line = format!(r#"{{"type":"Move","x":{:.2},"y":{:.2}}}"#, at.x, at.y);
        let out = parse_client_message(&line).and_then(|m| session.handle_client(m))?;
        show(&out);
        for _ in 0..10 {
            show(&session.run_tick());
        }
    }
    send(&mut session, &format!(r#"{{"type":"Say","target":"{target}","text":"What do you see here?"}}"#));
    for _ in 0..40 {
        show(&session.run_tick());
    }
    send(&mut session, r#"{"type":"Sing"}"#);
    send(&mut session, r#"{"type":"Bye"}"#);
    show(&session.run_tick());
    println!("{} events logged", session.log().len());
    Ok(())
}
