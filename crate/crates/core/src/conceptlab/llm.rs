// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{ChatMessage, Role};
use crate::error::{Error, Result};

/// A chat-completion backend. Implementations must be deterministic for
/// catalogs to be reproducible.
pub trait LlmClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;

    /// Short label recorded in catalog metadata.
    fn name(&self) -> String;
}

const STOPWORDS: &[&str] = &[
    "about", "and", "for", "from", "items", "related", "the", "vol", "with", "item", "case",
];

/// Lowercased alphanumeric words of length ≥ 3 that are not numbers or
/// stopwords.
pub fn content_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 3 && !t.chars().all(|c| c.is_ascii_digit()))
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Offline client. For a construction prompt it names the most frequent
/// tokens of the case lines; for a verification prompt it answers 8 when
/// the case shares a token with the description and 1 otherwise.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubLlm;

impl StubLlm {
    /// Tokens whose count is at least half the top count, at most three,
    /// ordered by count then alphabetically.
    pub fn summarize(case_text: &str) -> String {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for line in case_lines(case_text) {
            for t in content_tokens(line) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let Some(top) = ranked.first().map(|r| r.1) else {
            return String::new();
        };
        let picked: Vec<String> = ranked
            .into_iter()
            .take_while(|r| 2 * r.1 >= top)
            .take(3)
            .map(|r| r.0)
            .collect();
        format!("Items related to {}", picked.join(", "))
    }
}

fn case_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter_map(|l| {
        l.strip_prefix("History:")
            .or_else(|| l.strip_prefix("Predicted item:"))
    })
}

impl LlmClient for StubLlm {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let query = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| Error::Llm("no user message".into()))?;
        let description = query.content.lines().find_map(|l| l.strip_prefix("Description:"));
        match description {
            Some(desc) => {
                let wanted = content_tokens(desc);
                let shared = case_lines(&query.content)
                    .flat_map(content_tokens)
                    .any(|t| wanted.contains(&t));
                Ok(if shared { "8" } else { "1" }.to_string())
            }
            None => Ok(Self::summarize(&query.content)),
        }
    }

    fn name(&self) -> String {
        "stub".into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpLlmConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_tokens: u32,
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "llama-3-8b-instruct".into(),
            api_key: None,
            max_attempts: 3,
            backoff_ms: 250,
            timeout_secs: 60,
            max_tokens: 128,
        }
    }
}

/// Chat-completions client over HTTP at temperature 0. Transport failures,
/// 429 and 5xx responses are retried with exponential backoff.
pub struct HttpChatClient {
    config: HttpLlmConfig,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(config: HttpLlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn attempt(&self, body: &Value) -> std::result::Result<String, (bool, String)> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let retry = status == 429 || status >= 500;
            return Err((retry, format!("status {status}")));
        }
        let value: Value = resp.body_mut().read_json().map_err(|e| (true, e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".to_string()))
    }
}

impl LlmClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": 0.0,
            "max_tokens": self.config.max_tokens,
        });
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        let mut made = 0;
        for i in 0..attempts {
            made += 1;
            if i > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (i - 1)));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retry, msg)) => {
                    last = msg;
                    if !retry {
                        break;
                    }
                }
            }
        }
        Err(Error::Llm(format!(
            "{} failed after {made} attempt(s): {last}",
            self.config.endpoint
        )))
    }

    fn name(&self) -> String {
        format!("http:{}", self.config.model)
    }
}
