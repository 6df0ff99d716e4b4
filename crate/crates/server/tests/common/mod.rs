#![allow(dead_code)]

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use rapport_core::config::Config;
use rapport_core::protocol::{parse_envelope, Envelope, MessageType};
use rapport_server::{RunningServer, Server, ServerOptions};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader, Lines};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

pub const WAIT: Duration = Duration::from_secs(5);

pub fn config() -> Config {
    Config { port: 0, socket_port: 0, ..Config::default() }
}

pub async fn start(opts: ServerOptions) -> RunningServer {
    Server::bind(opts).await.expect("bind").spawn()
}

pub async fn start_default() -> RunningServer {
    start(ServerOptions::new(config())).await
}

pub fn msg(kind: MessageType, sid: &str, payload: Value) -> String {
    Envelope::new(kind, sid, "", payload).to_text()
}

pub fn join_msg(sid: &str, name: &str, role: &str) -> String {
    msg(MessageType::Join, sid, json!({"name": name, "role": role}))
}

pub enum Conn {
    Socket { lines: Lines<BufReader<OwnedReadHalf>>, write: OwnedWriteHalf },
    Ws(tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>),
}

impl Conn {
    pub async fn socket(server: &RunningServer) -> Conn {
        let stream = TcpStream::connect(server.socket).await.unwrap();
        let (read, write) = stream.into_split();
        Conn::Socket { lines: BufReader::new(read).lines(), write }
    }

    pub async fn ws(server: &RunningServer) -> Conn {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/ws", server.http)).await.unwrap();
        Conn::Ws(ws)
    }

    pub async fn send(&mut self, text: &str) {
        match self {
            Conn::Socket { write, .. } => {
                write.write_all(text.as_bytes()).await.unwrap();
                write.write_all(b"\n").await.unwrap();
            }
            Conn::Ws(ws) => ws.send(Message::Text(text.to_string().into())).await.unwrap(),
        }
    }

    /// Next envelope, or None when the server closed the connection.
    pub async fn next(&mut self) -> Option<Envelope> {
        let text = tokio::time::timeout(WAIT, async {
            match self {
                Conn::Socket { lines, .. } => lines.next_line().await.ok().flatten(),
                Conn::Ws(ws) => loop {
                    match ws.next().await {
                        Some(Ok(Message::Text(t))) => break Some(t.to_string()),
                        Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break None,
                        Some(Ok(_)) => continue,
                    }
                },
            }
        })
        .await
        .expect("timed out waiting for the server")?;
        Some(parse_envelope(&text).expect("server sends valid envelopes"))
    }

    pub async fn recv(&mut self) -> Envelope {
        self.next().await.expect("connection closed")
    }

    /// Skip anything else until an envelope of `kind` arrives.
    pub async fn expect(&mut self, kind: MessageType) -> Envelope {
        loop {
            let env = self.recv().await;
            if env.kind == kind {
                return env;
            }
        }
    }

    /// Join and return the assigned participant id.
    pub async fn join(&mut self, sid: &str, name: &str, role: &str) -> String {
        self.send(&join_msg(sid, name, role)).await;
        let snap = self.recv().await;
        assert_eq!(snap.kind, MessageType::Snapshot, "{:?}", snap.payload);
        snap.payload["participant"].as_str().unwrap().to_string()
    }
}
