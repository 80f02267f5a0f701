//! Assemble a persona prompt and answer it with the offline scripted backend.

use gallery_agents::content::{assign_personas, fixtures, ContentPack};
use gallery_agents::dialogue::{build_prompt, ScriptedBackend, TextGenerator, TranscriptLine};

fn main() -> anyhow::Result<()> {
    let pack = ContentPack::from_json(fixtures::LION)?;
    let exhibit = pack.exhibit("lion-dromedary")?;
    let card = assign_personas(&pack, &exhibit.id, 1)?.remove(0);
    let window = vec![
        TranscriptLine { speaker: "agent-02".into(), text: "The lion looks almost calm.".into() },
        TranscriptLine { speaker: "user".into(), text: "I noticed that too.".into() },
    ];
    let bundle = build_prompt(&card, exhibit, &window, "Why is the skull there?", 6)?;
    println!("{}\n", bundle.render());

    let backend = ScriptedBackend::from_pack(&pack);
    let reply = backend.generate(&bundle);
    println!("[{}] {reply:?}", backend.id());
    Ok(())
}
