use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context as _};
use poetgen_core::decoding::{Backend, NgramBackend, RemoteBackend, ScriptedBackend, UniformBackend};
use poetgen_core::PrunedVocabulary;

/// Which logit source to decode with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Ngram,
    Uniform,
    /// Replays the text of a file token by token.
    Scripted(String),
    /// `host:port` of a line-delimited JSON logit server.
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "ngram" => Ok(Self::Ngram),
            _ if s == "uniform" => Ok(Self::Uniform),
            Some(("scripted", path)) if !path.is_empty() => Ok(Self::Scripted(path.into())),
            Some(("remote", addr)) if !addr.is_empty() => Ok(Self::Remote(addr.into())),
            _ => Err(format!(
                "unknown backend {s:?}; expected ngram, uniform, scripted:<file> or remote:<host:port>"
            )),
        }
    }
}

impl BackendSpec {
    /// An explicit flag wins, then `BACKEND_URL`, then the n-gram model.
    pub fn resolve(flag: Option<BackendSpec>) -> Self {
        flag.or_else(|| {
            std::env::var("BACKEND_URL")
                .ok()
                .filter(|u| !u.trim().is_empty())
                .map(|u| Self::Remote(u.trim().to_string()))
        })
        .unwrap_or(Self::Ngram)
    }

    pub fn build(&self, vocab: &Arc<PrunedVocabulary>) -> anyhow::Result<Arc<dyn Backend>> {
        Ok(match self {
            Self::Ngram => Arc::new(NgramBackend::bundled(vocab.clone())),
            Self::Uniform => Arc::new(UniformBackend::new(vocab.len())),
            Self::Scripted(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading script {path}"))?;
                let text = text.trim_end_matches(['\n', '\r']);
                if text.is_empty() {
                    bail!("script {path} is empty");
                }
                Arc::new(ScriptedBackend::from_text(vocab, text)?)
            }
            Self::Remote(addr) => Arc::new(RemoteBackend::new(addr.clone(), vocab.len())),
        })
    }
}
