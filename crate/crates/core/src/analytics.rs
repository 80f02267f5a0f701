//! Coding session logs into episodes and computing conversation measures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conversation::{
    classify, is_user, CloseReason, Episode, EpisodeState, Origin, Pattern, TurnKind, TurnRecord,
};
use crate::session::{Condition, EventKind, LogParseError, SessionLogEvent};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("malformed log at record {seq}: {reason}")]
    MalformedLog { seq: u64, reason: String },
    #[error(transparent)]
    Parse(#[from] LogParseError),
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("participant count {0} is odd")]
    OddParticipants(usize),
    #[error("latin square needs exactly 2 conditions and 2 exhibits, got {conditions} and {exhibits}")]
    ShapeError { conditions: usize, exhibits: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedEpisode {
    pub id: String,
    pub pattern: Pattern,
    pub origin: Origin,
    pub turns: Vec<TurnRecord>,
    pub user_turn_indices: Vec<usize>,
    pub responded: bool,
    pub close_reason: Option<CloseReason>,
}

impl CodedEpisode {
    pub fn follow_ups(&self) -> usize {
        self.turns.iter().filter(|t| t.kind == TurnKind::FollowUp).count()
    }

    /// User openings and joins.
    pub fn initiated(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| is_user(&t.speaker) && matches!(t.kind, TurnKind::Opening | TurnKind::Join))
            .count()
    }

    /// Adjacent (visitor turn, agent turn) pairs.
    pub fn exchanges(&self) -> usize {
        self.turns.windows(2).filter(|w| is_user(&w[0].speaker) && !is_user(&w[1].speaker)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedSession {
    pub session_id: String,
    pub condition: Option<Condition>,
    pub exhibit_id: Option<String>,
    pub episodes: Vec<CodedEpisode>,
}

fn malformed(ev: &SessionLogEvent, reason: impl Into<String>) -> AnalyticsError {
    AnalyticsError::MalformedLog { seq: ev.seq, reason: reason.into() }
}

/// Rebuild episodes from `EpisodeOpened`/`TurnAdded`/`EpisodeClosed` and
/// classify them. Turn kinds are re-derived and must match the log.
pub fn code_session(events: &[SessionLogEvent]) -> Result<CodedSession, AnalyticsError> {
    let mut session_id = String::new();
    let mut condition = None;
    let mut exhibit_id = None;
    let mut episodes: IndexMap<String, Episode> = IndexMap::new();
    let mut last_tick = 0;
    for ev in events {
        if ev.tick < last_tick {
            return Err(malformed(ev, "ticks go backwards"));
        }
        last_tick = ev.tick;
        match &ev.event {
            EventKind::SessionStarted(s) => {
                session_id = s.session_id.clone();
                condition = Some(s.condition);
                exhibit_id = Some(s.exhibit_id.clone());
            }
            EventKind::EpisodeOpened(o) => {
                if episodes.contains_key(&o.episode) {
                    return Err(malformed(ev, format!("episode {} opened twice", o.episode)));
                }
                if !o.participants.contains(&o.opener) {
                    return Err(malformed(ev, "opener is not a participant"));
                }
                episodes.insert(
                    o.episode.clone(),
                    Episode {
                        id: o.episode.clone(),
                        exhibit_ref: o.exhibit_ref.clone(),
                        participants: o.participants.iter().cloned().collect(),
                        opener: o.opener.clone(),
                        turns: Vec::new(),
                        user_joined_at: None,
                        state: EpisodeState::Open,
                        origin: o.origin,
                        close_reason: None,
                    },
                );
            }
            EventKind::TurnAdded(t) => {
                let ep = episodes
                    .get_mut(&t.episode)
                    .ok_or_else(|| malformed(ev, format!("turn for unknown episode {}", t.episode)))?;
                if t.index != ep.turns.len() {
                    return Err(malformed(ev, format!("turn index {} out of order", t.index)));
                }
                let rec = ep
                    .add_turn(&t.speaker, t.text.clone(), ev.tick, t.provenance)
                    .map_err(|e| malformed(ev, e.to_string()))?;
                if rec.kind != t.kind {
                    return Err(malformed(ev, format!("turn kind {:?} but replay gives {:?}", t.kind, rec.kind)));
                }
            }
            EventKind::EpisodeClosed(c) => {
                let ep = episodes
                    .get_mut(&c.episode)
                    .ok_or_else(|| malformed(ev, format!("close of unknown episode {}", c.episode)))?;
                if !ep.is_open() {
                    return Err(malformed(ev, format!("episode {} closed twice", c.episode)));
                }
                ep.state = EpisodeState::Closed;
                ep.close_reason = Some(c.reason);
            }
            _ => {}
        }
    }
    let mut coded = Vec::with_capacity(episodes.len());
    for ep in episodes.into_values() {
        let pattern = match classify(&ep) {
            Ok(p) => p,
            // Opened but silent; nothing to code.
            Err(_) => continue,
        };
        coded.push(CodedEpisode {
            id: ep.id.clone(),
            pattern,
            origin: ep.origin,
            user_turn_indices: ep.turns.iter().filter(|t| is_user(&t.speaker)).map(|t| t.index).collect(),
            responded: ep.responded(),
            close_reason: ep.close_reason,
            turns: ep.turns,
        });
    }
    Ok(CodedSession { session_id, condition, exhibit_id, episodes: coded })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub episode_count: usize,
    pub total_exchanges: usize,
    pub initiated_turns: usize,
    pub follow_up_turns: usize,
    pub max_follow_up_turns: usize,
    /// False for passive listening, where the visitor never speaks.
    pub applicable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sessions: usize,
    pub episode_count: usize,
    pub total_exchanges: usize,
    pub initiated_turns: usize,
    pub follow_up_turns: usize,
    pub max_follow_up_turns: usize,
    pub per_pattern: BTreeMap<Pattern, PatternStats>,
    pub response_rate: Option<f64>,
    pub join_rate: Option<f64>,
    pub agent_prompts: usize,
    pub answered_prompts: usize,
    pub user_utterances: usize,
    pub agent_utterances: usize,
}

impl MetricsReport {
    pub fn pattern(&self, p: Pattern) -> &PatternStats {
        &self.per_pattern[&p]
    }

    pub fn patterns_observed(&self) -> BTreeSet<Pattern> {
        self.per_pattern.iter().filter(|(_, s)| s.episode_count > 0).map(|(p, _)| *p).collect()
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(coded: &CodedSession) -> MetricsReport {
    compute_metrics_all(std::slice::from_ref(coded))
}

/// Pooled measures over several sessions.
pub fn compute_metrics_all(sessions: &[CodedSession]) -> MetricsReport {
    let mut per_pattern: BTreeMap<Pattern, PatternStats> = Pattern::ALL
        .iter()
        .map(|p| (*p, PatternStats { applicable: *p != Pattern::PassiveListening, ..Default::default() }))
        .collect();
    let mut r = MetricsReport {
        sessions: sessions.len(),
        episode_count: 0,
        total_exchanges: 0,
        initiated_turns: 0,
        follow_up_turns: 0,
        max_follow_up_turns: 0,
        per_pattern: BTreeMap::new(),
        response_rate: None,
        join_rate: None,
        agent_prompts: 0,
        answered_prompts: 0,
        user_utterances: 0,
        agent_utterances: 0,
    };
    for ep in sessions.iter().flat_map(|s| &s.episodes) {
        let (ex, init, fu) = (ep.exchanges(), ep.initiated(), ep.follow_ups());
        let st = per_pattern.get_mut(&ep.pattern).expect("all patterns present");
        st.episode_count += 1;
        st.total_exchanges += ex;
        st.initiated_turns += init;
        st.follow_up_turns += fu;
        st.max_follow_up_turns = st.max_follow_up_turns.max(fu);
        r.episode_count += 1;
        r.total_exchanges += ex;
        r.initiated_turns += init;
        r.follow_up_turns += fu;
        r.max_follow_up_turns = r.max_follow_up_turns.max(fu);
        r.user_utterances += ep.user_turn_indices.len();
        r.agent_utterances += ep.turns.len() - ep.user_turn_indices.len();
        if ep.origin == Origin::AgentToUser {
            r.agent_prompts += 1;
            r.answered_prompts += usize::from(ep.responded);
        }
    }
    let al = per_pattern[&Pattern::ActiveListening].episode_count;
    let pl = per_pattern[&Pattern::PassiveListening].episode_count;
    r.response_rate = ratio(r.answered_prompts, r.agent_prompts);
    r.join_rate = ratio(al, al + pl);
    r.per_pattern = per_pattern;
    r
}

/// Code and measure `.ndjson` files.
pub fn analyze_logs<P: AsRef<Path>>(paths: &[P]) -> Result<(Vec<CodedSession>, MetricsReport), AnalyticsError> {
    let mut coded = Vec::new();
    for p in paths {
        coded.push(code_session(&crate::session::load_log(p)?)?);
    }
    let report = compute_metrics_all(&coded);
    Ok((coded, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

pub const CSV_HEADER: [&str; 6] =
    ["measure", "overall", "active_speaking", "passive_speaking", "active_listening", "passive_listening"];

/// Row labels in output order.
pub const CSV_ROWS: [&str; 7] = ["Total", "Initiated", "Follow-up", "Max", "Episodes", "Response rate", "Join rate"];

const NOT_APPLICABLE: &str = "--";

fn rate(r: Option<f64>) -> String {
    r.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Measures as rows and patterns as columns. Passive-listening turn cells
/// are `--`; a report without episodes renders as the header alone.
pub fn render_csv(report: &MetricsReport) -> Result<String, AnalyticsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    if report.episode_count > 0 {
        type Row = (&'static str, usize, fn(&PatternStats) -> usize);
        let turn_rows: [Row; 4] = [
            ("Total", report.total_exchanges, |s| s.total_exchanges),
            ("Initiated", report.initiated_turns, |s| s.initiated_turns),
            ("Follow-up", report.follow_up_turns, |s| s.follow_up_turns),
            ("Max", report.max_follow_up_turns, |s| s.max_follow_up_turns),
        ];
        for (name, overall, get) in turn_rows {
            let mut row = vec![name.to_string(), overall.to_string()];
            for p in Pattern::ALL {
                let st = report.pattern(p);
                row.push(if st.applicable { get(st).to_string() } else { NOT_APPLICABLE.to_string() });
            }
            w.write_record(&row)?;
        }
        let mut row = vec!["Episodes".to_string(), report.episode_count.to_string()];
        row.extend(Pattern::ALL.iter().map(|p| report.pattern(*p).episode_count.to_string()));
        w.write_record(&row)?;
        w.write_record(["Response rate", &rate(report.response_rate), "", "", "", ""])?;
        w.write_record(["Join rate", &rate(report.join_rate), "", "", "", ""])?;
    }
    let bytes = w.into_inner().map_err(|e| AnalyticsError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("reports serialize")
}

pub fn export_report(
    report: &MetricsReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<(), AnalyticsError> {
    let body = match format {
        ReportFormat::Csv => render_csv(report)?,
        ReportFormat::Json => render_json(report),
    };
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub participant: usize,
    /// Which order row of the 2x2 square this participant follows.
    pub row: usize,
    /// `(condition, exhibit)` for the first and second visit.
    pub visits: [(String, String); 2],
}

/// Counterbalanced 2x2 Latin square. Row 0 pairs condition 0 with exhibit 0
/// then condition 1 with exhibit 1; row 1 swaps the conditions. Participants
/// alternate rows.
pub fn latin_square(n: usize, conditions: &[&str], exhibits: &[&str]) -> Result<Vec<Assignment>, AnalyticsError> {
    if conditions.len() != 2 || exhibits.len() != 2 {
        return Err(AnalyticsError::ShapeError { conditions: conditions.len(), exhibits: exhibits.len() });
    }
    if n % 2 == 1 {
        return Err(AnalyticsError::OddParticipants(n));
    }
    let v = |c: usize, e: usize| (conditions[c].to_string(), exhibits[e].to_string());
    let rows = [[v(0, 0), v(1, 1)], [v(1, 0), v(0, 1)]];
    Ok((0..n).map(|i| Assignment { participant: i + 1, row: i % 2, visits: rows[i % 2].clone() }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::Provenance;
    use crate::session::events::{EpisodeClosed, EpisodeOpened, TurnAdded};

    struct LogBuilder {
        events: Vec<SessionLogEvent>,
        tick: u64,
    }

    impl LogBuilder {
        fn new() -> Self {
            Self { events: Vec::new(), tick: 0 }
        }

        fn push(&mut self, event: EventKind) {
            self.tick += 1;
            let seq = self.events.len() as u64;
            self.events.push(SessionLogEvent { seq, tick: self.tick, wall_time: String::new(), event });
        }

        fn open(&mut self, id: &str, opener: &str, others: &[&str], origin: Origin) {
            let mut participants: Vec<String> = others.iter().map(|s| s.to_string()).collect();
            participants.push(opener.to_string());
            participants.sort();
            self.push(EventKind::EpisodeOpened(EpisodeOpened {
                episode: id.into(),
                origin,
                opener: opener.into(),
                participants,
                exhibit_ref: None,
                pattern: Pattern::for_origin(origin, false),
                dialogue_ref: None,
            }));
        }

        fn turn(&mut self, id: &str, index: usize, speaker: &str, kind: TurnKind) {
            self.push(EventKind::TurnAdded(TurnAdded {
                episode: id.into(),
                index,
                speaker: speaker.into(),
                kind,
                text: format!("turn {index}"),
                provenance: (!is_user(speaker)).then_some(Provenance::Scripted),
                voice_id: None,
                audible: true,
                viewpoint_ref: None,
            }));
        }

        fn close(&mut self, id: &str, pattern: Pattern) {
            self.push(EventKind::EpisodeClosed(EpisodeClosed {
                episode: id.into(),
                reason: CloseReason::Timeout,
                pattern,
            }));
        }
    }

    /// One Q&A with two follow-ups, one overheard dialogue, one ignored greeting.
    pub(crate) fn three_episode_fixture() -> Vec<SessionLogEvent> {
        use TurnKind::*;
        let mut b = LogBuilder::new();
        b.open("ep-0001", "user", &["a1"], Origin::UserInitiated);
        b.turn("ep-0001", 0, "user", Opening);
        b.turn("ep-0001", 1, "a1", Response);
        b.turn("ep-0001", 2, "user", FollowUp);
        b.turn("ep-0001", 3, "a1", Response);
        b.turn("ep-0001", 4, "user", FollowUp);
        b.turn("ep-0001", 5, "a1", Response);
        b.close("ep-0001", Pattern::ActiveSpeaking);
        b.open("ep-0002", "a2", &["a3"], Origin::AgentToAgent);
        b.turn("ep-0002", 0, "a2", Opening);
        b.turn("ep-0002", 1, "a3", Response);
        b.close("ep-0002", Pattern::PassiveListening);
        b.open("ep-0003", "a1", &["user"], Origin::AgentToUser);
        b.turn("ep-0003", 0, "a1", Opening);
        b.close("ep-0003", Pattern::PassiveSpeaking);
        b.events
    }

    #[test]
    fn empty_log_has_no_episodes() {
        let coded = code_session(&[]).unwrap();
        assert!(coded.episodes.is_empty());
        let m = compute_metrics(&coded);
        assert_eq!((m.total_exchanges, m.initiated_turns, m.follow_up_turns, m.max_follow_up_turns), (0, 0, 0, 0));
        assert_eq!((m.response_rate, m.join_rate), (None, None));
    }

    #[test]
    fn single_user_question_is_active_speaking() {
        let mut b = LogBuilder::new();
        b.open("ep-0001", "user", &["a1"], Origin::UserInitiated);
        b.turn("ep-0001", 0, "user", TurnKind::Opening);
        b.turn("ep-0001", 1, "a1", TurnKind::Response);
        let coded = code_session(&b.events).unwrap();
        assert_eq!(coded.episodes.len(), 1);
        assert_eq!(coded.episodes[0].pattern, Pattern::ActiveSpeaking);
    }

    #[test]
    fn three_episode_fixture_codes_and_counts() {
        let coded = code_session(&three_episode_fixture()).unwrap();
        let pats: Vec<_> = coded.episodes.iter().map(|e| (e.pattern, e.responded)).collect();
        assert_eq!(
            pats,
            vec![
                (Pattern::ActiveSpeaking, false),
                (Pattern::PassiveListening, false),
                (Pattern::PassiveSpeaking, false)
            ]
        );
        let m = compute_metrics(&coded);
        assert_eq!(m.total_exchanges, 3);
        assert_eq!(m.initiated_turns, 1);
        assert_eq!(m.follow_up_turns, 2);
        assert_eq!(m.max_follow_up_turns, 2);
        assert_eq!(m.response_rate, Some(0.0));
        assert_eq!(m.join_rate, Some(0.0));
        assert_eq!(m.user_utterances, 3);
        assert_eq!(m.agent_utterances, 6);
    }

    #[test]
    fn half_answered_prompts_give_half_response_rate() {
        let mut b = LogBuilder::new();
        b.open("ep-0001", "a1", &["user"], Origin::AgentToUser);
        b.turn("ep-0001", 0, "a1", TurnKind::Opening);
        b.turn("ep-0001", 1, "user", TurnKind::Response);
        b.open("ep-0002", "a2", &["user"], Origin::AgentToUser);
        b.turn("ep-0002", 0, "a2", TurnKind::Opening);
        let m = compute_metrics(&code_session(&b.events).unwrap());
        assert_eq!(m.response_rate, Some(0.5));
        // A reply to a prompt is not an initiated turn.
        assert_eq!(m.initiated_turns, 0);
    }

    #[test]
    fn malformed_logs_are_rejected() {
        let mut b = LogBuilder::new();
        b.turn("ep-0001", 0, "a1", TurnKind::Opening);
        assert!(matches!(code_session(&b.events), Err(AnalyticsError::MalformedLog { .. })));

        let mut b = LogBuilder::new();
        b.open("ep-0001", "a1", &["a2"], Origin::AgentToAgent);
        b.turn("ep-0001", 0, "a1", TurnKind::Opening);
        b.turn("ep-0001", 1, "user", TurnKind::FollowUp);
        assert!(matches!(code_session(&b.events), Err(AnalyticsError::MalformedLog { .. })));
    }

    #[test]
    fn csv_layout_and_cross_format_values() {
        let m = compute_metrics(&code_session(&three_episode_fixture()).unwrap());
        let text = render_csv(&m).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        let names: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
        assert_eq!(names, CSV_ROWS.to_vec());
        assert_eq!(&rows[0][5], "--");
        let back: MetricsReport = serde_json::from_str(&render_json(&m)).unwrap();
        let overall: Vec<usize> = rows[..5].iter().map(|r| r[1].parse().unwrap()).collect();
        assert_eq!(
            overall,
            vec![
                back.total_exchanges,
                back.initiated_turns,
                back.follow_up_turns,
                back.max_follow_up_turns,
                back.episode_count
            ]
        );
        let as_col: usize = rows[2][2].parse().unwrap();
        assert_eq!(as_col, back.pattern(Pattern::ActiveSpeaking).follow_up_turns);
    }

    #[test]
    fn empty_report_is_header_only() {
        let m = compute_metrics(&code_session(&[]).unwrap());
        assert_eq!(render_csv(&m).unwrap().lines().count(), 1);
    }

    #[test]
    fn latin_square_rows_balance() {
        let t = latin_square(20, &["SIMVIEWS", "BASE"], &["lion", "artifact"]).unwrap();
        assert_eq!(t.iter().filter(|a| a.row == 0).count(), 10);
        assert_eq!(t.iter().filter(|a| a.row == 1).count(), 10);
        for a in &t {
            assert_ne!(a.visits[0].0, a.visits[1].0);
            assert_ne!(a.visits[0].1, a.visits[1].1);
        }
        let two = latin_square(2, &["SIMVIEWS", "BASE"], &["lion", "artifact"]).unwrap();
        assert_ne!(two[0].visits, two[1].visits);
        assert!(matches!(latin_square(3, &["a", "b"], &["x", "y"]), Err(AnalyticsError::OddParticipants(3))));
        assert!(matches!(latin_square(4, &["a"], &["x", "y"]), Err(AnalyticsError::ShapeError { .. })));
    }
}
