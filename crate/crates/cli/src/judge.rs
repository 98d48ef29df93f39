//! Chat-completions judge client.
//!
//! Reads `JUDGE_API_URL`, `JUDGE_API_KEY` and optionally `JUDGE_MODEL`.
//! The endpoint must accept an OpenAI-style `{model, messages}` body and
//! answer with `choices[0].message.content`.

use std::time::Duration;

use poetgen_core::evalharness::{Judge, JudgeError};
use serde_json::{json, Value};

pub struct HttpJudge {
    client: reqwest::blocking::Client,
    url: String,
    key: Option<String>,
    model: String,
}

impl HttpJudge {
    pub fn from_env() -> anyhow::Result<Self> {
        let url = std::env::var("JUDGE_API_URL")
            .map_err(|_| anyhow::anyhow!("JUDGE_API_URL is not set; pass --cassette to replay recorded replies"))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()?;
        Ok(Self {
            client,
            url,
            key: std::env::var("JUDGE_API_KEY").ok(),
            model: std::env::var("JUDGE_MODEL").unwrap_or_else(|_| "gpt-4".into()),
        })
    }
}

impl Judge for HttpJudge {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let transport = |e: reqwest::Error| JudgeError::Transport(e.to_string());
        let resp = req.send().map_err(transport)?.error_for_status().map_err(transport)?;
        let value: Value = resp.json().map_err(transport)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| JudgeError::Transport(format!("reply has no message content: {value}")))
    }
}
