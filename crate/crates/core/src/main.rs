use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use gallery_agents::analytics::{analyze_logs, compute_metrics, export_report, latin_square, ReportFormat};
use gallery_agents::content::load_pack;
use gallery_agents::dialogue::BackendConfig;
use gallery_agents::server::{serve, ServeOptions};
use gallery_agents::session::{Condition, SessionConfig};
use gallery_agents::simbot::{fuzz_scenarios, run_scenario, FuzzOptions, ScenarioOptions, VisitorScript};

#[derive(Parser)]
#[command(name = "gallery", version, about = "Multi-agent gallery conversation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve sessions over TCP (NDJSON) and WebSocket on one port.
    Serve {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        exhibit: String,
        #[arg(long, default_value = "simviews")]
        condition: Condition,
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Backend::Scripted)]
        backend: Backend,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        tick_hz: u32,
    },
    /// Code session logs and export the conversational measures.
    Analyze {
        #[arg(long, num_args = 1.., required = true)]
        log: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Print a counterbalanced visit order for each participant.
    Latin {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, num_args = 2, default_values_t = ["lion-dromedary".to_string(), "artifact-piece".to_string()])]
        exhibits: Vec<String>,
    },
    /// Headless visitor runs.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run one visitor script and print its metrics.
    Run {
        #[arg(long)]
        pack: PathBuf,
        #[arg(long)]
        condition: Condition,
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Defaults to the pack's first exhibit.
        #[arg(long)]
        exhibit: Option<String>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 600.0)]
        time_limit: f64,
    },
    /// Run random scripts over the bundled packs and write their logs.
    Fuzz {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Scripted,
    Remote,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Serve { pack, exhibit, condition, port, seed, backend, log, tick_hz } => {
            let content = Arc::new(load_pack(&pack).with_context(|| format!("loading {}", pack.display()))?);
            let mut config = SessionConfig::new(pack, exhibit, condition, seed);
            config.tick_hz = tick_hz;
            if backend == Backend::Remote {
                config.backend = BackendConfig::remote_from_env()?;
            }
            let addr = SocketAddr::from((Ipv4Addr::UNSPECIFIED, port));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(content, ServeOptions { config, addr, log_dir: log }))?;
        }
        Command::Analyze { log, out, format } => {
            let (coded, overall) = analyze_logs(&log)?;
            std::fs::create_dir_all(&out)?;
            let ext = match format {
                ReportFormat::Csv => "csv",
                ReportFormat::Json => "json",
            };
            for session in &coded {
                export_report(&compute_metrics(session), format, out.join(format!("{}.{ext}", session.session_id)))?;
            }
            let path = out.join(format!("metrics.{ext}"));
            export_report(&overall, format, &path)?;
            println!("{} sessions, {} episodes -> {}", coded.len(), overall.episode_count, path.display());
        }
        Command::Latin { n, exhibits } => {
            let ex: Vec<&str> = exhibits.iter().map(String::as_str).collect();
            println!("participant,row,first_condition,first_exhibit,second_condition,second_exhibit");
            for a in latin_square(n, &["SIMVIEWS", "BASE"], &ex)? {
                let [(c1, e1), (c2, e2)] = &a.visits;
                println!("{},{},{c1},{e1},{c2},{e2}", a.participant, a.row);
            }
        }
        Command::Sim { command: SimCommand::Run { pack, condition, script, seed, exhibit, log, time_limit } } => {
            let exhibit = match exhibit {
                Some(e) => e,
                None => match load_pack(&pack)?.exhibits.first() {
                    Some(e) => e.id.clone(),
                    None => bail!("{} has no exhibits", pack.display()),
                },
            };
            let script = VisitorScript::load(&script)?;
            let config = SessionConfig::new(pack, exhibit, condition, seed);
            let options = ScenarioOptions { time_limit_s: time_limit, log_dir: log, ..Default::default() };
            let result = run_scenario(config, &script, seed, &options)?;
            for s in &result.skipped {
                log::warn!("skipped: {s}");
            }
            if let Some(p) = &result.log_path {
                println!("log: {}", p.display());
            }
            println!("completed: {}", result.completed);
            println!("patterns: {:?}", result.pattern_coverage);
            println!("{}", serde_json::to_string_pretty(&result.metrics)?);
        }
        Command::Sim { command: SimCommand::Fuzz { n, seed, out } } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            std::fs::create_dir_all(&out)?;
            let options = FuzzOptions { log_dir: Some(out.clone()), ..Default::default() };
            let results = fuzz_scenarios(n, seed, &options)?;
            let covered: usize = results.iter().map(|r| r.pattern_coverage.len()).sum();
            println!(
                "{} logs in {} (mean patterns per session {:.2})",
                results.len(),
                out.display(),
                covered as f64 / n as f64
            );
        }
    }
    Ok(())
}
