//! Headless acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;

use gallery_agents::analytics::{code_session, compute_metrics, latin_square, MetricsReport};
use gallery_agents::content::{load_pack, ContentPack};
use gallery_agents::conversation::{classify, EpisodeBook, Origin, Pattern};
use gallery_agents::session::{parse_ndjson, Condition, SessionConfig};
use gallery_agents::simbot::{
    fuzz_scenarios, lint_log, run_scenario_with_pack, FuzzOptions, ScenarioOptions, ScenarioResult, VisitorScript,
};

const FUZZ_SEED: u64 = 42;
const TOUR_SEED: u64 = 1;

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { ok: true, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { ok: false, detail: detail.into() }
}

fn packs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/packs"))
}

fn shipped_packs() -> Vec<ContentPack> {
    let mut paths: Vec<_> = std::fs::read_dir(packs_dir())
        .expect("packs directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_pack(p).expect("shipped pack loads")).collect()
}

fn pack_for(packs: &[ContentPack], exhibit: &str) -> Option<ContentPack> {
    packs.iter().find(|p| p.exhibit(exhibit).is_ok()).cloned()
}

fn pattern_completeness() -> Outcome {
    let started = Instant::now();
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let mut book = EpisodeBook::new();
    let mut run = |opener: &str, to: &[&str], origin: Origin, speakers: &[&str]| {
        let id = book.open_episode(opener, &set(to), origin, None).unwrap().id.clone();
        for (t, who) in speakers.iter().enumerate() {
            book.add_turn(&id, who, "...", t as u64, None).unwrap();
        }
        classify(book.get(&id).unwrap()).unwrap()
    };
    let got = [
        run("user", &["a1"], Origin::UserInitiated, &["user", "a1"]),
        run("a2", &["user"], Origin::AgentToUser, &["a2", "user"]),
        run("a3", &["a4"], Origin::AgentToAgent, &["a3", "a4", "a3"]),
        run("a5", &["a6"], Origin::AgentToAgent, &["a5", "a6", "user", "a5"]),
    ];
    let want = [Pattern::ActiveSpeaking, Pattern::PassiveSpeaking, Pattern::PassiveListening, Pattern::ActiveListening];
    let elapsed = started.elapsed();
    if got != want {
        return fail(format!("classified {got:?}"));
    }
    if elapsed >= Duration::from_secs(1) {
        return fail(format!("took {elapsed:?}"));
    }
    pass(format!("4/4 transcripts in {elapsed:?}"))
}

fn events_of(r: &ScenarioResult) -> Vec<Value> {
    r.ndjson().lines().map(|l| serde_json::from_str(l).expect("log line is JSON")).collect()
}

fn join_monotonicity(fuzz: &[ScenarioResult], elapsed: Duration) -> Outcome {
    let (mut joins, mut flips) = (0, 0);
    for r in fuzz {
        // Raw scan, independent of the linter.
        let mut pattern: BTreeMap<String, String> = BTreeMap::new();
        let mut expect_flip: Option<String> = None;
        for v in events_of(r) {
            let p = &v["payload"];
            if let Some(ep) = expect_flip.take() {
                let ok = v["type"] == "PatternChanged"
                    && p["episode"] == ep.as_str()
                    && p["from"] == "passive_listening"
                    && p["to"] == "active_listening";
                if !ok {
                    return fail(format!("{}: join into {ep} without a flip", r.coded.session_id));
                }
            }
            match v["type"].as_str().unwrap() {
                "EpisodeOpened" => {
                    pattern.insert(p["episode"].as_str().unwrap().into(), p["pattern"].as_str().unwrap().into());
                }
                "TurnAdded" if p["kind"] == "join" => {
                    joins += 1;
                    let ep = p["episode"].as_str().unwrap().to_string();
                    if pattern.get(&ep).map(String::as_str) != Some("passive_listening") {
                        return fail(format!("{}: join into {ep} that was not passive listening", r.coded.session_id));
                    }
                    expect_flip = Some(ep);
                }
                "PatternChanged" => {
                    let ep = p["episode"].as_str().unwrap().to_string();
                    if p["from"] == "active_listening" && p["to"] == "passive_listening" {
                        return fail(format!("{}: {ep} went back to passive listening", r.coded.session_id));
                    }
                    flips += 1;
                    pattern.insert(ep, p["to"].as_str().unwrap().into());
                }
                _ => {}
            }
        }
        let lint = lint_log(&r.log, None);
        if lint.rules_broken().iter().any(|r| *r == "join" || *r == "monotonicity") {
            return fail(format!("{}: {:?}", r.coded.session_id, lint.violations[0]));
        }
    }
    if joins == 0 {
        return fail("no joins happened; the check is vacuous");
    }
    if joins != flips {
        return fail(format!("{joins} joins but {flips} flips"));
    }
    if elapsed >= Duration::from_secs(30) {
        return fail(format!("{} sessions took {elapsed:?}", fuzz.len()));
    }
    pass(format!("{} sessions, {joins} joins, {flips} flips, {elapsed:.2?}", fuzz.len()))
}

/// The six measures, recounted from raw JSON with no help from the coder.
#[derive(Debug, Default, PartialEq, Clone, Copy)]
struct Recount {
    exchanges: usize,
    initiated: usize,
    follow_ups: usize,
    max_follow_ups: usize,
    prompts: usize,
    answered: usize,
    joined: usize,
    overheard: usize,
}

impl Recount {
    fn add(&mut self, o: Recount) {
        self.exchanges += o.exchanges;
        self.initiated += o.initiated;
        self.follow_ups += o.follow_ups;
        self.max_follow_ups = self.max_follow_ups.max(o.max_follow_ups);
        self.prompts += o.prompts;
        self.answered += o.answered;
        self.joined += o.joined;
        self.overheard += o.overheard;
    }

    fn rates(&self) -> (Option<f64>, Option<f64>) {
        let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        (ratio(self.answered, self.prompts), ratio(self.joined, self.joined + self.overheard))
    }

    fn matches(&self, m: &MetricsReport) -> bool {
        (self.exchanges, self.initiated, self.follow_ups, self.max_follow_ups)
            == (m.total_exchanges, m.initiated_turns, m.follow_up_turns, m.max_follow_up_turns)
            && self.rates() == (m.response_rate, m.join_rate)
    }
}

fn recount(events: &[Value]) -> Recount {
    let mut origin: BTreeMap<&str, &str> = BTreeMap::new();
    let mut speakers: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for v in events {
        let p = &v["payload"];
        match v["type"].as_str().unwrap() {
            "EpisodeOpened" => {
                let ep = p["episode"].as_str().unwrap();
                origin.insert(ep, p["origin"].as_str().unwrap());
                speakers.insert(ep, Vec::new());
            }
            "TurnAdded" => {
                let ep = p["episode"].as_str().unwrap();
                speakers.get_mut(ep).unwrap().push(p["speaker"] == "user");
            }
            _ => {}
        }
    }
    let mut out = Recount::default();
    for (ep, users) in &speakers {
        let n_user = users.iter().filter(|u| **u).count();
        let fu = n_user.saturating_sub(1);
        out.exchanges += users.windows(2).filter(|w| w[0] && !w[1]).count();
        out.follow_ups += fu;
        out.max_follow_ups = out.max_follow_ups.max(fu);
        match origin[ep] {
            "user_initiated" => out.initiated += usize::from(n_user > 0),
            "agent_to_user" => {
                out.prompts += 1;
                out.answered += usize::from(n_user > 0);
            }
            "agent_to_agent" if n_user > 0 => {
                out.initiated += 1;
                out.joined += 1;
            }
            "agent_to_agent" => out.overheard += 1,
            other => panic!("unknown origin {other}"),
        }
    }
    out
}

fn metrics_oracle(fuzz: &[ScenarioResult]) -> Outcome {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/three_episodes.ndjson")).unwrap();
    let fixture = compute_metrics(&code_session(&parse_ndjson(&text).unwrap()).unwrap());
    let got = (
        fixture.total_exchanges,
        fixture.initiated_turns,
        fixture.follow_up_turns,
        fixture.max_follow_up_turns,
        fixture.response_rate,
        fixture.join_rate,
    );
    if got != (3, 1, 2, 2, Some(0.0), Some(0.0)) {
        return fail(format!("fixture gave {got:?}"));
    }
    let mut pooled = Recount::default();
    let mut reports = Vec::new();
    for r in fuzz {
        let events = events_of(r);
        let brute = recount(&events);
        let coded = code_session(&parse_ndjson(&r.ndjson()).unwrap()).unwrap();
        let m = compute_metrics(&coded);
        if !brute.matches(&m) {
            return fail(format!("{}: recount {brute:?} vs report {m:?}", r.coded.session_id));
        }
        pooled.add(brute);
        reports.push(coded);
    }
    let all = gallery_agents::analytics::compute_metrics_all(&reports);
    if !pooled.matches(&all) {
        return fail("pooled report differs from pooled recount");
    }
    pass(format!("fixture exact; {} logs agree, pooled {} exchanges", fuzz.len(), pooled.exchanges))
}

fn label_safety(fuzz: &[ScenarioResult], packs: &[ContentPack]) -> Outcome {
    let mut reveals = 0;
    for r in fuzz {
        let pack = r.coded.exhibit_id.as_deref().and_then(|e| pack_for(packs, e));
        let lint = lint_log(&r.log, pack.as_ref());
        if let Some(v) = lint.violations.iter().find(|v| v.rule == "label-safety") {
            return fail(format!("{}: {}", r.coded.session_id, v.detail));
        }
        reveals += lint.reveals.values().sum::<usize>();
    }
    if reveals == 0 {
        return fail("no labels were ever revealed; the check is vacuous");
    }
    pass(format!("{} sessions, {reveals} reveals, none early or repeated", fuzz.len()))
}

fn base_coverage(fuzz: &[ScenarioResult], packs: &[ContentPack]) -> Outcome {
    let base: Vec<_> = fuzz.iter().filter(|r| r.coded.condition == Some(Condition::Base)).collect();
    if base.is_empty() {
        return fail("no BASE sessions in the fuzz set");
    }
    let mut with_qa = 0;
    for r in &base {
        let pack = r.coded.exhibit_id.as_deref().and_then(|e| pack_for(packs, e));
        let lint = lint_log(&r.log, pack.as_ref());
        if let Some(v) = lint.violations.iter().find(|v| v.rule == "narration") {
            return fail(format!("{}: {}", r.coded.session_id, v.detail));
        }
        if !lint.narration_complete {
            return fail(format!("{}: narration {:?} incomplete", r.coded.session_id, lint.narration));
        }
        with_qa += usize::from(r.coded.episodes.iter().any(|e| e.origin == Origin::UserInitiated));
    }
    pass(format!("{} BASE sessions narrated in order, {with_qa} with Q&A", base.len()))
}

fn grand_tour(packs: &[ContentPack]) -> Result<(ScenarioResult, String), String> {
    let pack = pack_for(packs, "lion-dromedary").ok_or("lion pack missing")?;
    let script = VisitorScript::grand_tour(&pack, "lion-dromedary").map_err(|e| e.to_string())?;
    let config = SessionConfig::new("packs/lion.json", "lion-dromedary", Condition::Simviews, TOUR_SEED);
    let opts = ScenarioOptions { time_limit_s: 600.0, ..Default::default() };
    let r = run_scenario_with_pack(Arc::new(pack), config, &script, TOUR_SEED, &opts).map_err(|e| e.to_string())?;
    let ndjson = r.ndjson();
    Ok((r, ndjson))
}

fn behavior_legality(packs: &[ContentPack]) -> Outcome {
    let (r, _) = match grand_tour(packs) {
        Ok(x) => x,
        Err(e) => return fail(e),
    };
    let lint = lint_log(&r.log, pack_for(packs, "lion-dromedary").as_ref());
    if let Some(v) = lint.violations.first() {
        return fail(format!("#{} {}: {}", v.seq, v.rule, v.detail));
    }
    let last = r.log.last().map_or(0, |e| e.tick);
    if last > 6000 {
        return fail(format!("ran {last} ticks, past 10 minutes"));
    }
    if r.pattern_coverage.len() != 4 {
        return fail(format!("only saw {:?}", r.pattern_coverage));
    }
    let moves = r.log.iter().filter(|e| e.event.type_name() == "PoseUpdated").count();
    pass(format!("{moves} pose updates legal, all 4 patterns by tick {last}"))
}

fn determinism(packs: &[ContentPack]) -> Outcome {
    let (a, b) = match (grand_tour(packs), grand_tour(packs)) {
        (Ok(a), Ok(b)) => (a.1, b.1),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    if a != b {
        return fail("grand tour logs differ");
    }
    let opts = FuzzOptions { time_limit_s: 90.0, ..Default::default() };
    let x = fuzz_scenarios(10, 7, &opts).unwrap();
    let y = fuzz_scenarios(10, 7, &opts).unwrap();
    if x.iter().zip(&y).any(|(x, y)| x.ndjson() != y.ndjson()) {
        return fail("fuzzed logs differ between runs");
    }
    pass(format!("grand tour {} bytes identical; 10 fuzzed logs identical", a.len()))
}

fn content_parity(packs: &[ContentPack]) -> Outcome {
    let mut labels: BTreeSet<BTreeSet<String>> = BTreeSet::new();
    let mut exhibits = 0;
    for pack in packs {
        for ex in &pack.exhibits {
            exhibits += 1;
            if ex.viewpoints.len() != 3 {
                return fail(format!("{} has {} viewpoints", ex.id, ex.viewpoints.len()));
            }
            for vp in &ex.viewpoints {
                if vp.grounding_excerpts.is_empty() || vp.keywords.len() != 3 {
                    return fail(format!(
                        "{}: {} excerpts, {} keywords",
                        vp.id,
                        vp.grounding_excerpts.len(),
                        vp.keywords.len()
                    ));
                }
            }
            labels.insert(ex.viewpoints.iter().map(|v| v.identity_label.clone()).collect());
        }
    }
    let want: BTreeSet<BTreeSet<String>> =
        [["Aesthetician", "Ethicist", "Biologist"], ["Art Historian", "Indigenous Scholar", "Curator"]]
            .iter()
            .map(|s| s.iter().map(|x| x.to_string()).collect())
            .collect();
    if exhibits != 2 || labels != want {
        return fail(format!("{exhibits} exhibits with labels {labels:?}"));
    }
    pass(format!("{} packs, 2 exhibits x 3 viewpoints", packs.len()))
}

fn latin() -> Outcome {
    match latin_square(20, &["SIMVIEWS", "BASE"], &["lion-dromedary", "artifact-piece"]) {
        Ok(t) => {
            let rows = (t.iter().filter(|a| a.row == 0).count(), t.iter().filter(|a| a.row == 1).count());
            if t.len() == 20 && rows == (10, 10) {
                pass("20 participants, rows 10/10")
            } else {
                fail(format!("{} participants, rows {rows:?}", t.len()))
            }
        }
        Err(e) => fail(e.to_string()),
    }
}

fn main() {
    let packs = shipped_packs();
    let started = Instant::now();
    let fuzz = fuzz_scenarios(100, FUZZ_SEED, &FuzzOptions::default());
    let elapsed = started.elapsed();

    let mut results: Vec<(&str, Outcome)> = vec![("pattern completeness", pattern_completeness())];
    match &fuzz {
        Ok(fuzz) => {
            results.push(("join monotonicity", join_monotonicity(fuzz, elapsed)));
            results.push(("metrics oracle", metrics_oracle(fuzz)));
            results.push(("label safety", label_safety(fuzz, &packs)));
            results.push(("BASE coverage", base_coverage(fuzz, &packs)));
        }
        Err(e) => {
            for name in ["join monotonicity", "metrics oracle", "label safety", "BASE coverage"] {
                results.push((name, fail(format!("fuzzing failed: {e}"))));
            }
        }
    }
    results.push(("behavior-tree legality", behavior_legality(&packs)));
    results.push(("determinism", determinism(&packs)));
    results.push(("content fixture parity", content_parity(&packs)));
    results.push(("latin square", latin()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.ok);
    }
    println!("{}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
