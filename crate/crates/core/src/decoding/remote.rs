//! Out-of-process backend over line-delimited JSON on TCP.
//!
//! Request, one line: `{"context_ids": [..]}`.
//! Response, one line: `{"logits": [..]}` with one score per vocabulary id,
//! or `{"top_k": [[id, logit], ..]}` with every other id set to `floor`, or
//! `{"error": "..."}`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendError, Context};
use crate::vocab::TokenId;

#[derive(Debug, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub context_ids: Vec<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RemoteResponse {
    Logits { logits: Vec<f64> },
    TopK { top_k: Vec<(TokenId, f64)> },
    Error { error: String },
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    addr: String,
    vocab_size: usize,
    timeout: Duration,
    floor: f64,
}

impl RemoteBackend {
    /// `addr` is `host:port`, optionally prefixed with `tcp://`.
    pub fn new(addr: impl Into<String>, vocab_size: usize) -> Self {
        let addr: String = addr.into();
        Self {
            addr: addr.trim_start_matches("tcp://").to_string(),
            vocab_size,
            timeout: Duration::from_secs(30),
            floor: -1e4,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn exchange(&self, request: &RemoteRequest) -> Result<RemoteResponse, BackendError> {
        let unavailable = |e: std::io::Error| BackendError::Unavailable(format!("{}: {e}", self.addr));
        let addr = self
            .addr
            .to_socket_addrs()
            .map_err(unavailable)?
            .next()
            .ok_or_else(|| BackendError::Unavailable(format!("{}: no address", self.addr)))?;
        let mut stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(unavailable)?;
        stream.set_read_timeout(Some(self.timeout)).map_err(unavailable)?;
        stream.set_write_timeout(Some(self.timeout)).map_err(unavailable)?;

        let mut line = serde_json::to_string(request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push('\n');
        stream
            .write_all(line.as_bytes())
            .map_err(|e| BackendError::Failed(e.to_string()))?;
        let mut reply = String::new();
        BufReader::new(stream)
            .read_line(&mut reply)
            .map_err(|e| BackendError::Failed(e.to_string()))?;
        if reply.trim().is_empty() {
            return Err(BackendError::Protocol("empty reply".into()));
        }
        serde_json::from_str(&reply).map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

impl Backend for RemoteBackend {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logits(&self, ctx: Context<'_>) -> Result<Vec<f64>, BackendError> {
        match self.exchange(&RemoteRequest { context_ids: ctx.ids() })? {
            RemoteResponse::Logits { logits } if logits.len() == self.vocab_size => Ok(logits),
            RemoteResponse::Logits { logits } => Err(BackendError::BadLength {
                expected: self.vocab_size,
                got: logits.len(),
            }),
            RemoteResponse::TopK { top_k } => {
                let mut out = vec![self.floor; self.vocab_size];
                for (id, logit) in top_k {
                    let slot = out
                        .get_mut(id as usize)
                        .ok_or_else(|| BackendError::Protocol(format!("top_k id {id} out of range")))?;
                    *slot = logit;
                }
                Ok(out)
            }
            RemoteResponse::Error { error } => Err(BackendError::Failed(error)),
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
