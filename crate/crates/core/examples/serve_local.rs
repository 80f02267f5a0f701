//! Start the server on a free port and talk to it over raw TCP.

use std::sync::Arc;
use std::time::Duration;

use gallery_agents::content::{fixtures, ContentPack};
use gallery_agents::server::{serve_on, ServeOptions};
use gallery_agents::session::{Condition, SessionConfig};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let pack = Arc::new(ContentPack::from_json(fixtures::LION)?);
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let config = SessionConfig::new("packs/lion.json", "lion-dromedary", Condition::Base, 1);
    tokio::spawn(serve_on(listener, pack, ServeOptions { config, addr, log_dir: None }));
    println!("server on {addr}");

    let (r, mut w) = TcpStream::connect(addr).await?.into_split();
    w.write_all(b"{\"type\":\"Hello\",\"name\":\"demo\"}\n").await?;
    let mut lines = BufReader::new(r).lines();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(12);
    while let Ok(Ok(Some(line))) = tokio::time::timeout_at(deadline, lines.next_line()).await {
        let v: serde_json::Value = serde_json::from_str(&line)?;
        let kind = v["event"]["type"].as_str().unwrap_or_else(|| v["type"].as_str().unwrap_or("?"));
        if kind == "TurnAdded" {
            println!("{}: {}", v["event"]["payload"]["speaker"], v["event"]["payload"]["text"]);
        } else if kind != "PoseUpdated" {
            println!("<{kind}>");
        }
    }
    w.write_all(b"{\"type\":\"Bye\"}\n").await?;
    Ok(())
}
