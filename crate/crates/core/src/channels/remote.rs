//! Newline-delimited JSON bridge to an external model.
//!
//! Requests and replies, one JSON object per line:
//!
//! ```text
//! -> {"id": 1, "op": "reset", "context_text": "..."}     <- {"id": 1, "ok": true}
//! -> {"id": 2, "op": "next_dist"}                        <- {"id": 2, "ids": [...], "probs": [...]}
//! -> {"id": 3, "op": "append", "token": 17}              <- {"id": 3, "ok": true}
//! -> {"id": 4, "op": "render", "tokens": [17, 4]}        <- {"id": 4, "text": "..."}
//!                                                 errors: {"id": n, "error": "..."}
//! ```
//!
//! Probabilities travel as shortest round-trip decimals, so both ends hold
//! bit-identical doubles. The client memoizes `next_dist` per context.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::prob::Categorical;

use super::Channel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Reset {
        #[serde(default)]
        context_text: String,
    },
    NextDist,
    Append {
        token: u32,
    },
    Render {
        tokens: Vec<u32>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    #[serde(flatten)]
    pub op: Op,
}

pub struct RemoteChannel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    context: Vec<u32>,
    cache: HashMap<Vec<u32>, Categorical>,
    vocab: usize,
    child: Option<Child>,
}

impl RemoteChannel {
    /// Connects over TCP to `host:port` and resets the adapter with an empty prompt.
    pub fn connect(endpoint: &str) -> Result<Self> {
        let stream = TcpStream::connect(endpoint)
            .map_err(|e| Error::RemoteUnavailable(format!("{endpoint}: {e}")))?;
        stream.set_nodelay(true).ok();
        let reader = stream
            .try_clone()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        Self::from_streams(BufReader::new(reader), stream, "")
    }

    /// Spawns `program` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[&str], context_text: &str) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::RemoteUnavailable(format!("{program}: {e}")))?;
        let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let stdout: ChildStdout = child.stdout.take().expect("piped stdout");
        let mut ch = Self::from_streams(BufReader::new(stdout), stdin, context_text)?;
        ch.child = Some(child);
        Ok(ch)
    }

    /// Wraps an already-open transport and sends the initial `reset`.
    pub fn from_streams(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
        context_text: &str,
    ) -> Result<Self> {
        let mut ch = RemoteChannel {
            reader: Box::new(reader),
            writer: Box::new(writer),
            next_id: 0,
            context: Vec::new(),
            cache: HashMap::new(),
            vocab: 0,
            child: None,
        };
        ch.reset(context_text)?;
        Ok(ch)
    }

    /// Clears the context on both ends.
    pub fn reset(&mut self, context_text: &str) -> Result<()> {
        let reply = self.call(Op::Reset {
            context_text: context_text.to_string(),
        })?;
        expect_ok(&reply)?;
        self.context.clear();
        self.cache.clear();
        Ok(())
    }

    fn call(&mut self, op: Op) -> Result<Value> {
        self.next_id += 1;
        let id = self.next_id;
        let mut line = serde_json::to_string(&Request { id, op })?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;

        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        if n == 0 {
            return Err(Error::RemoteUnavailable("connection closed".into()));
        }
        let value: Value = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::ProtocolViolation(format!("unparseable reply: {e}")))?;
        match value.get("id").and_then(Value::as_u64) {
            Some(got) if got == id => {}
            other => {
                return Err(Error::ProtocolViolation(format!(
                    "reply id {other:?} does not match request {id}"
                )))
            }
        }
        if let Some(err) = value.get("error") {
            return Err(Error::RemoteUnavailable(format!("adapter error: {err}")));
        }
        Ok(value)
    }
}

fn expect_ok(reply: &Value) -> Result<()> {
    if reply.get("ok") == Some(&Value::Bool(true)) {
        Ok(())
    } else {
        Err(Error::ProtocolViolation(format!(
            "expected ok, got {reply}"
        )))
    }
}

impl Drop for RemoteChannel {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Channel for RemoteChannel {
    fn next_dist(&mut self) -> Result<Categorical> {
        if let Some(d) = self.cache.get(&self.context) {
            return Ok(d.clone());
        }
        let mut reply = self.call(Op::NextDist)?;
        reply.as_object_mut().map(|o| o.remove("id"));
        let d: Categorical = serde_json::from_value(reply)
            .map_err(|e| Error::ProtocolViolation(format!("bad distribution: {e}")))?;
        let top = d.ids().last().copied().unwrap_or(0) as usize + 1;
        self.vocab = self.vocab.max(top);
        self.cache.insert(self.context.clone(), d.clone());
        Ok(d)
    }

    fn append(&mut self, token: u32) -> Result<()> {
        let reply = self.call(Op::Append { token })?;
        expect_ok(&reply)?;
        self.context.push(token);
        Ok(())
    }

    fn render(&mut self, tokens: &[u32]) -> Result<String> {
        let reply = self.call(Op::Render {
            tokens: tokens.to_vec(),
        })?;
        reply
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::ProtocolViolation(format!("expected text, got {reply}")))
    }

    fn context(&self) -> &[u32] {
        &self.context
    }

    /// Largest token id seen so far plus one; the adapter owns the real vocabulary.
    fn vocab_size(&self) -> usize {
        self.vocab
    }
}

/// Serves channels over the wire protocol until the reader hits EOF.
///
/// `make` builds a fresh channel for every `reset`, receiving its
/// `context_text`. Each request gets exactly one reply line.
pub fn serve<R, W, F>(reader: R, mut writer: W, mut make: F) -> Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&str) -> Result<Box<dyn Channel + Send>>,
{
    let mut channel: Option<Box<dyn Channel + Send>> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64));
                json!({"id": id, "error": format!("bad request: {e}")})
            }
            Ok(Request { id, op }) => match handle(&mut channel, &mut make, op) {
                Ok(mut body) => {
                    body["id"] = json!(id);
                    body
                }
                Err(e) => json!({"id": id, "error": e.to_string()}),
            },
        };
        writeln!(writer, "{reply}")?;
        writer.flush()?;
    }
    Ok(())
}

fn handle<F>(channel: &mut Option<Box<dyn Channel + Send>>, make: &mut F, op: Op) -> Result<Value>
where
    F: FnMut(&str) -> Result<Box<dyn Channel + Send>>,
{
    if let Op::Reset { context_text } = &op {
        *channel = Some(make(context_text)?);
        return Ok(json!({"ok": true}));
    }
    let ch = channel
        .as_mut()
        .ok_or_else(|| Error::InvalidConfig("no reset received yet".into()))?;
    Ok(match op {
        Op::Reset { .. } => unreachable!(),
        Op::NextDist => serde_json::to_value(ch.next_dist()?)?,
        Op::Append { token } => {
            ch.append(token)?;
            json!({"ok": true})
        }
        Op::Render { tokens } => json!({"text": ch.render(&tokens)?}),
    })
}
