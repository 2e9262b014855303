//! Newline-delimited JSON scorer protocol.
//!
//! ```text
//! → {"op":"hello"}                                   ← {"caps":[...],"vocab_size":N,"eos_id":E}
//! → {"op":"tokenize","text":S}                       ← {"ids":[...]}
//! → {"op":"next","source":S,"prefix":[..],"cands":[..]} ← {"probs":[...]}
//! → {"op":"generate","source":S,"max_len":L}         ← {"text":...}
//! any failure                                        ← {"error":"message"}
//! ```
//!
//! One request per line, one response per line, answered in order.

use std::fmt;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Capabilities, MockScorer, ScorerBackend};
use crate::error::{Error, Result};
use crate::trie::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello,
    Tokenize {
        text: String,
    },
    Next {
        source: String,
        prefix: Vec<TokenId>,
        cands: Vec<TokenId>,
    },
    Generate {
        source: String,
        max_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub caps: Vec<String>,
    pub vocab_size: usize,
    pub eos_id: TokenId,
}

#[derive(Deserialize)]
struct IdsResponse {
    ids: Vec<TokenId>,
}

#[derive(Deserialize)]
struct ProbsResponse {
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Client side of the protocol; requests are serialized over one connection.
pub struct ProtocolClient {
    conn: Mutex<Connection>,
    hello: Hello,
    caps: Capabilities,
}

impl fmt::Debug for ProtocolClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProtocolClient")
            .field("hello", &self.hello)
            .finish()
    }
}

fn proto_err(e: impl fmt::Display) -> Error {
    Error::Protocol(e.to_string())
}

impl ProtocolClient {
    /// Wraps an existing byte stream and performs the hello handshake.
    pub fn from_streams<R, W>(reader: R, writer: W) -> Result<Self>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::with_connection(Connection {
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
        })
    }

    /// Runs `command` through `sh -c` and talks to it over its standard I/O.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot spawn {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::with_connection(Connection {
            reader: Box::new(BufReader::new(stdout)),
            writer: Box::new(BufWriter::new(stdin)),
            child: Some(child),
        })
    }

    pub fn connect_tcp(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Protocol(format!("cannot connect to {addr}: {e}")))?;
        let reader = stream.try_clone().map_err(proto_err)?;
        Self::from_streams(BufReader::new(reader), BufWriter::new(stream))
    }

    fn with_connection(conn: Connection) -> Result<Self> {
        let mut client = ProtocolClient {
            conn: Mutex::new(conn),
            hello: Hello {
                caps: Vec::new(),
                vocab_size: 0,
                eos_id: 0,
            },
            caps: Capabilities::default(),
        };
        let hello: Hello =
            serde_json::from_value(client.call(&Request::Hello)?).map_err(proto_err)?;
        client.caps = Capabilities::from_names(&hello.caps);
        client.hello = hello;
        Ok(client)
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    /// Sends one request and reads one response line. `{"error": ..}` replies become `Err`.
    pub fn call(&self, req: &Request) -> Result<Value> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| proto_err("connection poisoned"))?;
        let line = serde_json::to_string(req).map_err(proto_err)?;
        conn.writer.write_all(line.as_bytes()).map_err(proto_err)?;
        conn.writer.write_all(b"\n").map_err(proto_err)?;
        conn.writer.flush().map_err(proto_err)?;
        let mut resp = String::new();
        if conn.reader.read_line(&mut resp).map_err(proto_err)? == 0 {
            return Err(proto_err("backend closed the connection"));
        }
        let value: Value = serde_json::from_str(resp.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        if let Some(msg) = value.get("error") {
            return Err(Error::Protocol(
                msg.as_str().map_or_else(|| msg.to_string(), String::from),
            ));
        }
        Ok(value)
    }
}

impl ScorerBackend for ProtocolClient {
    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn vocab_size(&self) -> usize {
        self.hello.vocab_size
    }

    fn eos_id(&self) -> TokenId {
        self.hello.eos_id
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let v = self.call(&Request::Tokenize { text: text.into() })?;
        Ok(serde_json::from_value::<IdsResponse>(v)
            .map_err(proto_err)?
            .ids)
    }

    fn next_token_probs(
        &self,
        source: &str,
        prefix: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<f64>> {
        let req = Request::Next {
            source: source.into(),
            prefix: prefix.to_vec(),
            cands: candidates.to_vec(),
        };
        let v = self.call(&req).map_err(|e| Error::Backend {
            prefix: prefix.to_vec(),
            message: e.to_string(),
        })?;
        Ok(serde_json::from_value::<ProbsResponse>(v)
            .map_err(proto_err)?
            .probs)
    }

    fn generate(&self, source: &str, max_len: usize) -> Result<String> {
        if !self.caps.generate {
            return Err(Error::Capability("generate"));
        }
        let v = self.call(&Request::Generate {
            source: source.into(),
            max_len,
        })?;
        Ok(serde_json::from_value::<TextResponse>(v)
            .map_err(proto_err)?
            .text)
    }
}

fn handle<B: ScorerBackend + ?Sized>(backend: &B, line: &str) -> Value {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return json!({ "error": format!("bad request: {e}") }),
    };
    let result = match req {
        Request::Hello => Ok(json!({
            "caps": backend.capabilities().names(),
            "vocab_size": backend.vocab_size(),
            "eos_id": backend.eos_id(),
        })),
        Request::Tokenize { text } => backend.tokenize(&text).map(|ids| json!({ "ids": ids })),
        Request::Next {
            source,
            prefix,
            cands,
        } => backend
            .next_token_probs(&source, &prefix, &cands)
            .map(|p| json!({ "probs": p })),
        Request::Generate { source, max_len } => backend
            .generate(&source, max_len)
            .map(|t| json!({ "text": t })),
    };
    result.unwrap_or_else(|e| json!({ "error": e.to_string() }))
}

/// Serves any backend over a line stream until EOF. Bad requests get an error line; the loop continues.
pub fn serve<B, R, W>(backend: &B, reader: R, mut writer: W) -> io::Result<()>
where
    B: ScorerBackend + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle(backend, &line);
        writeln!(writer, "{resp}")?;
        writer.flush()?;
    }
    Ok(())
}

/// Where probabilities come from: `mock:<seed>`, `cmd:<shell command>` or `tcp:<host>:<port>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    /// Seeded mock; without a seed the caller's default seed is used.
    Mock(Option<u64>),
    Command(String),
    Tcp(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mock" {
            return Ok(BackendSpec::Mock(None));
        }
        if let Some(seed) = s.strip_prefix("mock:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::Validation(format!("bad mock seed {seed:?}")))?;
            return Ok(BackendSpec::Mock(Some(seed)));
        }
        if let Some(cmd) = s.strip_prefix("cmd:") {
            if cmd.trim().is_empty() {
                return Err(Error::Validation("empty backend command".into()));
            }
            return Ok(BackendSpec::Command(cmd.to_string()));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(BackendSpec::Tcp(addr.to_string()));
        }
        Err(Error::Validation(format!(
            "backend must be mock:<seed>, cmd:<command> or tcp:<host:port>, got {s:?}"
        )))
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock(Some(seed)) => write!(f, "mock:{seed}"),
            BackendSpec::Mock(None) => f.write_str("mock"),
            BackendSpec::Command(c) => write!(f, "cmd:{c}"),
            BackendSpec::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

impl BackendSpec {
    /// Opens a fresh backend (a new process or connection for remote specs).
    pub fn connect(&self, default_seed: u64) -> Result<Box<dyn ScorerBackend>> {
        Ok(match self {
            BackendSpec::Mock(seed) => Box::new(MockScorer::seeded(seed.unwrap_or(default_seed))),
            BackendSpec::Command(cmd) => Box::new(ProtocolClient::spawn(cmd)?),
            BackendSpec::Tcp(addr) => Box::new(ProtocolClient::connect_tcp(addr)?),
        })
    }
}
