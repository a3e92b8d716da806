//! Shared plumbing for external model adapters.
//!
//! Endpoints are spelled `stub`, `fixture:<path>`, or `exec:<command>`. An
//! exec endpoint runs the command through `sh -c`, writes one JSON request
//! to its stdin, and reads one JSON response from its stdout.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("adapter payload: {0}")]
    Json(#[from] serde_json::Error),
    #[error("adapter command `{command}` exited with {status}: {stderr}")]
    Command { command: String, status: String, stderr: String },
    #[error("fixture has no entry for `{0}`")]
    MissingFixture(String),
    #[error("invalid endpoint `{0}`; expected stub, fixture:<path>, or exec:<command>")]
    Endpoint(String),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Endpoint {
    Stub,
    Fixture(PathBuf),
    Exec(String),
}

impl FromStr for Endpoint {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "stub" {
            Ok(Endpoint::Stub)
        } else if let Some(p) = s.strip_prefix("fixture:") {
            Ok(Endpoint::Fixture(PathBuf::from(p)))
        } else if let Some(c) = s.strip_prefix("exec:") {
            Ok(Endpoint::Exec(c.to_string()))
        } else {
            Err(AdapterError::Endpoint(s.to_string()))
        }
    }
}

impl TryFrom<String> for Endpoint {
    type Error = AdapterError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Stub => f.write_str("stub"),
            Endpoint::Fixture(p) => write!(f, "fixture:{}", p.display()),
            Endpoint::Exec(c) => write!(f, "exec:{c}"),
        }
    }
}

/// Runs an exec endpoint once.
pub fn exec_json<Req: Serialize, Resp: DeserializeOwned>(command: &str, request: &Req) -> Result<Resp, AdapterError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    {
        let mut stdin = child.stdin.take().expect("stdin is piped");
        serde_json::to_writer(&mut stdin, request)?;
        stdin.write_all(b"\n")?;
    }
    let out = child.wait_with_output()?;
    if !out.status.success() {
        return Err(AdapterError::Command {
            command: command.to_string(),
            status: out.status.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Ok(serde_json::from_slice(&out.stdout)?)
}

/// Retries a fallible call up to `attempts` times, returning the last error.
pub fn with_retries<T>(attempts: u32, mut f: impl FnMut() -> Result<T, AdapterError>) -> Result<T, AdapterError> {
    let mut last = None;
    for _ in 0..attempts.max(1) {
        match f() {
            Ok(v) => return Ok(v),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Thread-safe count of adapter calls, for cost accounting.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn bump(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Stable 64-bit FNV-1a hash, used to derive deterministic stub outputs.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}
