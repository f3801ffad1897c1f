#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use otj_core::harness::{generate_synthetic, SyntheticConfig};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

pub fn otj() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_otj"));
    cmd.env_remove("OTJ_CONFIG").env_remove("OTJ_TOKEN");
    cmd
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("otj runs")
}

/// A small synthetic dataset written to `dir/data.tsv`.
pub fn write_dataset(dir: &Path, examples: usize, length: usize) -> PathBuf {
    let data = generate_synthetic(&SyntheticConfig {
        num_examples: examples,
        length,
        ..Default::default()
    })
    .unwrap();
    let path = dir.join("data.tsv");
    data.save(&path).unwrap();
    path
}

/// Minimal HTTP/1.1 request; returns status code and JSON body.
pub async fn http(addr: &str, method: &str, path: &str, token: Option<&str>) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).await.unwrap();
    let auth = token
        .map(|t| format!("Authorization: Bearer {t}\r\n"))
        .unwrap_or_default();
    let request = format!("{method} {path} HTTP/1.1\r\nHost: {addr}\r\n{auth}Content-Length: 0\r\nConnection: close\r\n\r\n");
    stream.write_all(request.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (head, body) = text.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, serde_json::from_str(body).unwrap_or(Value::Null))
}

pub type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>;

pub async fn connect(addr: &str) -> Socket {
    let (socket, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws"))
        .await
        .unwrap();
    socket
}

pub async fn send(socket: &mut Socket, message: Value) {
    socket
        .send(Message::Text(message.to_string().into()))
        .await
        .unwrap();
}

/// Next text frame as JSON; `None` once the server closes.
pub async fn recv(socket: &mut Socket) -> Option<Value> {
    loop {
        match socket.next().await? {
            Ok(Message::Text(text)) => return Some(serde_json::from_str(&text).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => {}
        }
    }
}

/// Joins and answers every task with the first label after `delay`.
pub async fn robot_worker(addr: String, token: String, delay: Duration) {
    let mut socket = connect(&addr).await;
    send(
        &mut socket,
        json!({"v": 1, "type": "join", "token": token, "name": "robot"}),
    )
    .await;
    while let Some(frame) = recv(&mut socket).await {
        if frame["type"] == "task" {
            tokio::time::sleep(delay).await;
            let label = frame["labels"][0].clone();
            let answer =
                json!({"v": 1, "type": "answer", "query_id": frame["query_id"], "label": label});
            if socket
                .send(Message::Text(answer.to_string().into()))
                .await
                .is_err()
            {
                return;
            }
        }
    }
}
