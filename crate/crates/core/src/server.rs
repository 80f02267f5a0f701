//! Network front end. Every connection owns one session; the socket speaks
//! newline-delimited JSON either raw over TCP or inside WebSocket text frames.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::Message;

use crate::content::ContentPack;
use crate::session::{parse_client_message, ClientMessage, ServerMessage, Session, SessionConfig, SessionError};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("websocket: {0}")]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub config: SessionConfig,
    pub addr: SocketAddr,
    /// Each finished connection writes `<session_id>.ndjson` here.
    pub log_dir: Option<PathBuf>,
}

/// Bind `options.addr` and serve until the process stops.
pub async fn serve(pack: Arc<ContentPack>, options: ServeOptions) -> Result<(), ServerError> {
    let listener = TcpListener::bind(options.addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_on(listener, pack, options).await
}

pub async fn serve_on(listener: TcpListener, pack: Arc<ContentPack>, options: ServeOptions) -> Result<(), ServerError> {
    // Fail early on a bad exhibit or config rather than per connection.
    Session::with_pack(pack.clone(), options.config.clone())?;
    let options = Arc::new(options);
    let mut n = 0u64;
    loop {
        let (stream, peer) = listener.accept().await?;
        n += 1;
        let (pack, options) = (pack.clone(), options.clone());
        tokio::spawn(async move {
            if let Err(e) = handle_connection(stream, pack, &options, n).await {
                log::warn!("connection {n} from {peer}: {e}");
            }
        });
    }
}

async fn handle_connection(
    stream: TcpStream,
    pack: Arc<ContentPack>,
    options: &ServeOptions,
    n: u64,
) -> Result<(), ServerError> {
    let mut config = options.config.clone();
    let base = Session::with_pack(pack.clone(), config.clone())?.session_id().to_string();
    config.session_id = Some(format!("{base}-c{n}"));
    let mut session = Session::with_pack(pack, config)?;

    let (in_tx, in_rx) = mpsc::channel::<String>(64);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(4096);
    let mut head = [0u8; 4];
    let k = stream.peek(&mut head).await?;
    let io = if &head[..k] == b"GET " {
        let ws = tokio_tungstenite::accept_async(stream).await?;
        let (mut sink, mut source) = ws.split();
        let reader = tokio::spawn(async move {
            while let Some(Ok(msg)) = source.next().await {
                let text = match msg {
                    Message::Text(t) => t,
                    Message::Close(_) => break,
                    _ => continue,
                };
                for line in text.lines() {
                    if in_tx.send(line.to_string()).await.is_err() {
                        return;
                    }
                }
            }
        });
        let writer = tokio::spawn(async move {
            while let Some(line) = out_rx.recv().await {
                if sink.send(Message::Text(line.trim_end().to_string())).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        });
        (reader, writer)
    } else {
        let (r, mut w) = stream.into_split();
        let reader = tokio::spawn(async move {
            let mut lines = BufReader::new(r).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                if in_tx.send(line).await.is_err() {
                    return;
                }
            }
        });
        let writer = tokio::spawn(async move {
            while let Some(line) = out_rx.recv().await {
                if w.write_all(line.as_bytes()).await.is_err() {
                    break;
                }
            }
            let _ = w.shutdown().await;
        });
        (reader, writer)
    };

    drive_session(&mut session, in_rx, out_tx).await;
    io.0.abort();
    let _ = io.1.await;
    if let Some(dir) = &options.log_dir {
        std::fs::create_dir_all(dir)?;
        session.export_log(dir.join(format!("{}.ndjson", session.session_id())))?;
    }
    Ok(())
}

/// Run `session` in real time: apply inbound protocol lines as they arrive,
/// tick at the configured rate and send every server message outbound.
/// Returns after `Bye`, when the inbound side closes, or when the peer stops
/// reading.
pub async fn drive_session(session: &mut Session, mut inbound: mpsc::Receiver<String>, outbound: mpsc::Sender<String>) {
    let period = Duration::from_secs_f64(1.0 / session.config().tick_hz.max(1) as f64);
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        let (out, done) = tokio::select! {
            line = inbound.recv() => match line {
                None => break,
                Some(line) if line.trim().is_empty() => continue,
                Some(line) => apply_line(session, &line),
            },
            _ = ticker.tick() => (session.run_tick(), false),
        };
        for msg in out {
            if outbound.send(msg.to_line()).await.is_err() {
                return;
            }
        }
        if done {
            break;
        }
    }
}

fn apply_line(session: &mut Session, line: &str) -> (Vec<ServerMessage>, bool) {
    let msg = match parse_client_message(line) {
        Ok(m) => m,
        Err(e) => return (vec![ServerMessage::error(&e)], false),
    };
    let bye = msg == ClientMessage::Bye;
    match session.handle_client(msg) {
        Ok(out) => (out, bye),
        Err(e) => (vec![ServerMessage::error(&e)], false),
    }
}
