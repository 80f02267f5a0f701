use super::*;
use crate::content::{fixtures, ScriptTurn};
use crate::conversation::TurnKind;

fn lion() -> Arc<ContentPack> {
    Arc::new(ContentPack::from_json(fixtures::LION).unwrap())
}

fn config(condition: Condition, seed: u64) -> SessionConfig {
    SessionConfig::new("packs/lion.json", "lion-dromedary", condition, seed)
}

/// Behavior rolls never fire, so only explicit actions start conversations.
fn quiet(condition: Condition) -> SessionConfig {
    let mut cfg = config(condition, 7);
    cfg.behavior.greet_probability = 0.0;
    cfg.behavior.script_start_probability = 0.0;
    cfg
}

fn kinds(msgs: &[ServerMessage]) -> Vec<&'static str> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Event { event } => Some(event.event.type_name()),
            _ => None,
        })
        .collect()
}

fn turns(log: &[SessionLogEvent]) -> Vec<&events::TurnAdded> {
    log.iter()
        .filter_map(|e| match &e.event {
            EventKind::TurnAdded(t) => Some(t),
            _ => None,
        })
        .collect()
}

/// Follow an agent until the visitor stands within `radius` of it.
fn approach(s: &mut Session, agent: &str, radius: f64) {
    for _ in 0..2000 {
        let at = s.agent_position(agent).unwrap();
        if s.user_position().unwrap().distance(&at) <= radius {
            return;
        }
        if s.tick().is_multiple_of(10) {
            s.handle_client(ClientMessage::Move { x: at.x, y: at.y }).unwrap();
        }
        s.run_tick();
    }
    panic!("never reached {agent}");
}

fn walk_user_to(s: &mut Session, p: Point) {
    s.handle_client(ClientMessage::Move { x: p.x, y: p.y }).unwrap();
    for _ in 0..400 {
        if s.user_position().unwrap().distance(&p) < 1e-6 {
            return;
        }
        s.run_tick();
    }
    panic!("visitor never arrived");
}

#[test]
fn simviews_spawns_three_hidden_agents() {
    let s = Session::with_pack(lion(), config(Condition::Simviews, 1)).unwrap();
    assert_eq!(s.log()[0].event.type_name(), "SessionStarted");
    let spawned: Vec<_> = s
        .log()
        .iter()
        .filter_map(|e| match &e.event {
            EventKind::AgentSpawned(a) => Some(a),
            _ => None,
        })
        .collect();
    assert_eq!(spawned.len(), 3);
    let text = s.to_ndjson();
    for label in ["Aesthetician", "Ethicist", "Biologist"] {
        assert!(!text.contains(label), "{label} leaked at spawn");
    }
    let snap = s.snapshot(None).unwrap();
    assert!(snap.agents.iter().all(|a| !a.label_visible && a.identity_label.is_none()));
}

#[test]
fn base_spawns_one_guide_with_three_segments() {
    let s = Session::with_pack(lion(), config(Condition::Base, 1)).unwrap();
    assert_eq!(s.agent_ids(), vec![GUIDE_ID.to_string()]);
    assert_eq!(s.guide_script().unwrap().segments.len(), 3);
}

#[test]
fn empty_tick_without_user_or_movers() {
    let mut s = Session::with_pack(lion(), config(Condition::Base, 1)).unwrap();
    assert!(s.run_tick().is_empty());
}

#[test]
fn unknown_exhibit_and_bad_config_are_rejected() {
    let mut cfg = config(Condition::Simviews, 1);
    cfg.exhibit_id = "nope".into();
    assert!(matches!(Session::with_pack(lion(), cfg), Err(SessionError::Content(_))));
    let mut cfg = config(Condition::Simviews, 1);
    cfg.tick_hz = 0;
    assert!(matches!(Session::with_pack(lion(), cfg), Err(SessionError::Config(_))));
}

#[test]
fn saying_to_an_agent_reveals_its_label_once() {
    let mut s = Session::with_pack(lion(), quiet(Condition::Simviews)).unwrap();
    s.handle_client(ClientMessage::Hello { name: None }).unwrap();
    let bio = s.agent_for_viewpoint("lion-biology").unwrap().to_string();
    approach(&mut s, &bio, 1.0);
    let out = s
        .handle_client(ClientMessage::Say {
            target: Some(bio.clone()),
            episode: None,
            text: "Is that lion real?".into(),
        })
        .unwrap();
    let k = kinds(&out);
    let opened = k.iter().position(|t| *t == "EpisodeOpened").unwrap();
    let turn = k.iter().position(|t| *t == "TurnAdded").unwrap();
    let revealed = k.iter().position(|t| *t == "LabelRevealed").unwrap();
    assert!(opened < turn && turn < revealed);
    assert!(s.is_revealed(&bio));
    let snap = s.snapshot(Some(&bio)).unwrap();
    assert_eq!(snap.agents[0].identity_label.as_deref(), Some("Biologist"));

    // The scripted reply lands after the thinking delay, without a second reveal.
    let later = s.run_ticks(20);
    assert!(kinds(&later).contains(&"TurnAdded"));
    assert!(!kinds(&later).contains(&"LabelRevealed"));
    let reply = turns(s.log()).into_iter().last().unwrap().clone();
    assert_eq!(reply.speaker, bio);
    assert_eq!(reply.kind, TurnKind::Response);
    assert_eq!(reply.provenance, Some(Provenance::Generated));
}

#[test]
fn inspect_hides_labels_of_strangers() {
    let mut s = Session::with_pack(lion(), quiet(Condition::Simviews)).unwrap();
    let a = s.agent_ids()[0].clone();
    let out = s.handle_client(ClientMessage::Inspect { agent: a.clone() }).unwrap();
    let Some(ServerMessage::Snapshot { snapshot }) = out.last() else { panic!("no snapshot") };
    assert_eq!(snapshot.agents.len(), 1);
    assert!(snapshot.agents[0].identity_label.is_none());
    let line = serde_json::to_string(snapshot).unwrap();
    assert!(!line.contains("identity_label"));
    assert!(matches!(
        s.handle_client(ClientMessage::Inspect { agent: "agent-99".into() }),
        Err(SessionError::TargetNotFound(_))
    ));
}

#[test]
fn joining_a_closed_episode_fails() {
    let mut s = Session::with_pack(lion(), quiet(Condition::Simviews)).unwrap();
    s.handle_client(ClientMessage::Hello { name: None }).unwrap();
    let ep = s.start_dialogue("lion-aesthetics-vs-ethics").unwrap();
    s.run_ticks(400);
    assert!(!s.episodes().get(&ep).unwrap().is_open());
    let err = s.handle_client(ClientMessage::Join { episode: ep, text: "wait".into() }).unwrap_err();
    assert!(matches!(err, SessionError::NotJoinable(_)));
    assert!(matches!(
        s.handle_client(ClientMessage::Join { episode: "ep-9999".into(), text: "x".into() }),
        Err(SessionError::TargetNotFound(_))
    ));
}

#[test]
fn messages_before_hello_are_rejected() {
    let mut s = Session::with_pack(lion(), quiet(Condition::Simviews)).unwrap();
    let err = s.handle_client(ClientMessage::Move { x: 3.0, y: 3.0 }).unwrap_err();
    assert!(matches!(err, SessionError::NotPresent));
    s.handle_client(ClientMessage::Hello { name: None }).unwrap();
    let err = s.handle_client(ClientMessage::Move { x: 300.0, y: 3.0 }).unwrap_err();
    assert!(matches!(err, SessionError::Protocol(_)));
}

#[test]
fn scripted_cadence_is_one_turn_per_thirty_ticks() {
    let mut pack = ContentPack::from_json(fixtures::LION).unwrap();
    let d = &mut pack.dialogues[0];
    d.turns = (0..14).map(|i| ScriptTurn { role: i % 2, text: format!("line {i}") }).collect();
    let id = d.id.clone();
    let mut s = Session::with_pack(Arc::new(pack), quiet(Condition::Simviews)).unwrap();
    s.start_dialogue(&id).unwrap();
    let start = s.tick();
    let mut per_window = vec![0; 10];
    for _ in 0..300 {
        let out = s.run_tick();
        let n = kinds(&out).iter().filter(|k| **k == "TurnAdded").count();
        per_window[((s.tick() - start - 1) / 30) as usize] += n;
    }
    assert_eq!(per_window, vec![1; 10]);
}

#[test]
fn join_pauses_script_then_resumes_after_two_replies() {
    let mut s = Session::with_pack(lion(), quiet(Condition::Simviews)).unwrap();
    s.handle_client(ClientMessage::Hello { name: None }).unwrap();
    let ep = s.start_dialogue("lion-ethics-vs-biology").unwrap();
    let speaker = s.episodes().get(&ep).unwrap().opener.clone();
    let at = s.agent_position(&speaker).unwrap();
    walk_user_to(&mut s, at);
    let out = s.handle_client(ClientMessage::Join { episode: ep.clone(), text: "Is the skull real?".into() }).unwrap();
    let k = kinds(&out);
    assert!(k.contains(&"PatternChanged"));
    assert_eq!(k.iter().filter(|t| **t == "LabelRevealed").count(), 2);
    s.run_ticks(200);
    let ep_turns: Vec<_> = turns(s.log()).into_iter().filter(|t| t.episode == ep).collect();
    let join = ep_turns.iter().position(|t| t.kind == TurnKind::Join).unwrap();
    let after: Vec<_> = ep_turns[join + 1..].iter().map(|t| t.provenance.unwrap()).collect();
    assert_eq!(&after[..2], &[Provenance::Generated, Provenance::Generated]);
    assert_eq!(after[2], Provenance::Scripted);
    assert_eq!(s.episodes().get(&ep).unwrap().pattern(), Pattern::ActiveListening);
}

#[test]
fn base_narration_precedes_answers() {
    let mut s = Session::with_pack(lion(), config(Condition::Base, 3)).unwrap();
    s.handle_client(ClientMessage::Hello { name: None }).unwrap();
    s.run_tick();
    approach(&mut s, GUIDE_ID, 1.5);
    s.handle_client(ClientMessage::Say {
        target: Some(GUIDE_ID.into()),
        episode: None,
        text: "Tell me about the skull.".into(),
    })
    .unwrap();
    s.run_ticks(150);
    let guide: Vec<_> = turns(s.log()).into_iter().filter(|t| t.speaker == GUIDE_ID).collect();
    let order: Vec<_> = guide.iter().filter_map(|t| t.viewpoint_ref.as_deref()).collect();
    assert_eq!(order, vec!["lion-aesthetics", "lion-ethics", "lion-biology"]);
    assert!(guide[..3].iter().all(|t| t.viewpoint_ref.is_some()));
    assert!(guide.len() > 3, "question was never answered");
    assert!(guide[3].text.contains("skull"));
}

#[test]
fn same_trace_gives_identical_logs() {
    let run = || {
        let mut s = Session::with_pack(lion(), config(Condition::Simviews, 42)).unwrap();
        s.handle_client(ClientMessage::Hello { name: Some("v".into()) }).unwrap();
        s.handle_client(ClientMessage::Move { x: 7.0, y: 4.0 }).unwrap();
        s.run_ticks(900);
        let a = s.agent_ids()[1].clone();
        approach(&mut s, &a, 1.0);
        let _ = s.handle_client(ClientMessage::Say { target: Some(a), episode: None, text: "Why a camel?".into() });
        s.run_ticks(900);
        s.to_ndjson()
    };
    let (a, b) = (run(), run());
    assert!(a.len() > 1000);
    assert_eq!(a, b);
}

#[test]
fn export_round_trips_and_is_stable() {
    let mut s = Session::with_pack(lion(), config(Condition::Simviews, 5)).unwrap();
    s.handle_client(ClientMessage::Hello { name: None }).unwrap();
    s.run_ticks(300);
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ndjson"), dir.path().join("b.ndjson"));
    s.export_log(&p1).unwrap();
    s.export_log(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(load_log(&p1).unwrap(), s.log());
}

#[test]
fn distant_agents_cannot_be_addressed() {
    let mut s = Session::with_pack(lion(), quiet(Condition::Base)).unwrap();
    s.handle_client(ClientMessage::Hello { name: None }).unwrap();
    let err = s
        .handle_client(ClientMessage::Say { target: Some(GUIDE_ID.into()), episode: None, text: "hi".into() })
        .unwrap_err();
    // Narration has not begun yet, so this would open a new episode.
    assert!(matches!(err, SessionError::TargetOutOfRange(_)), "{err}");
}
