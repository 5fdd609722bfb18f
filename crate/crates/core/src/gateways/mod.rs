//! Uniform interfaces to chat models, web search, and URL fetching, plus a
//! deterministic scripted backend for offline replay.
//!
//! Gateways are shareable services safe for concurrent callers. Scripted
//! gateways are hermetic: replaying a transcript never touches the network.

mod cost;
mod prompts;
mod scripted;

pub use cost::{compute_cost, CostReport, CostRow, ModelPrice, PricingTable, UsageByModel};
pub use prompts::{
    body_checksum, render_prompt, template, PromptTemplate, TemplateId, TEMPLATE_CHECKSUMS,
};
pub use scripted::{ScriptedChat, ScriptedGateway, ScriptedPage, ScriptedTranscript};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("rate limited after retries")]
    RateLimited,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("search quota exhausted")]
    Quota,
    #[error("fetch failed for {url}: {reason}")]
    FetchFailed { url: String, reason: String },
    #[error("blocked domain: {0}")]
    BlockedDomain(String),
    #[error("scripted transcript mismatch: expected request matching {expected:?}, got {got:?}")]
    TranscriptMismatch { expected: String, got: String },
    #[error("scripted transcript exhausted (request: {0:?})")]
    TranscriptExhausted(String),
    #[error("missing placeholder: {0}")]
    MissingPlaceholder(String),
    #[error("unresolved placeholder after rendering: {0}")]
    UnresolvedPlaceholder(String),
    #[error("no price configured for model: {0}")]
    UnknownModel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
    pub fn tool(content: impl Into<String>) -> Self {
        ChatMessage { role: "tool".into(), content: content.into() }
    }
}

/// Tool surface declared to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub tools: Vec<ToolSchema>,
}

impl ChatRequest {
    /// Flattened view used for transcript matching and logging.
    pub fn flattened(&self) -> String {
        self.messages
            .iter()
            .map(|m| format!("{}: {}", m.role, m.content))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ChatResponse {
    Text(String),
    ToolCalls(Vec<ToolCall>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.tokens_in + self.tokens_out
    }
    pub fn add(&mut self, other: Usage) {
        self.tokens_in += other.tokens_in;
        self.tokens_out += other.tokens_out;
    }
}

/// One logged request/response pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response: ChatResponse,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResultItem {
    pub url: String,
    pub title: String,
    pub snippet: String,
    /// 1-based; unique and contiguous per query.
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchedPage {
    pub title: String,
    /// Extracted readable text; may be empty (flagged by `empty_body`).
    pub body: String,
}

impl FetchedPage {
    pub fn empty_body(&self) -> bool {
        self.body.trim().is_empty()
    }
}

pub trait ChatGateway: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<(ChatResponse, Usage), GatewayError>;
}

pub trait SearchGateway: Send + Sync {
    fn search(
        &self,
        query: &str,
        language: Option<&str>,
        max_results: usize,
    ) -> Result<Vec<SearchResultItem>, GatewayError>;
}

pub trait FetchGateway: Send + Sync {
    fn fetch(&self, url: &str) -> Result<FetchedPage, GatewayError>;
}

/// Exponential backoff: 3 retries, base 1s, factor 4, jittered. The sleeper
/// is injected so tests never wait on a real clock.
#[derive(Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_ms: u64,
    pub factor: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_ms: 1000, factor: 4 }
    }
}

impl RetryPolicy {
    pub fn backoff_ms(&self, attempt: u32, jitter: f64) -> u64 {
        let base = self.base_ms * self.factor.pow(attempt);
        (base as f64 * (1.0 + 0.25 * jitter)) as u64
    }

    /// Runs `op`, retrying transient failures (rate limits, provider errors)
    /// up to the configured cap.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, GatewayError>,
        mut sleep_ms: impl FnMut(u64),
    ) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e @ (GatewayError::RateLimited | GatewayError::Provider(_))) => {
                    if attempt >= self.max_retries {
                        return Err(e);
                    }
                    sleep_ms(self.backoff_ms(attempt, 0.5));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_gives_up_after_cap() {
        let policy = RetryPolicy::default();
        let mut calls = 0;
        let mut slept = Vec::new();
        let result: Result<(), _> = policy.run(
            || {
                calls += 1;
                Err(GatewayError::RateLimited)
            },
            |ms| slept.push(ms),
        );
        assert_eq!(result, Err(GatewayError::RateLimited));
        assert_eq!(calls, 4); // initial + 3 retries
        assert_eq!(slept.len(), 3);
        assert!(slept[1] > slept[0] && slept[2] > slept[1]);
    }

    #[test]
    fn retry_recovers_on_transient_failure() {
        let policy = RetryPolicy::default();
        let mut calls = 0;
        let result = policy.run(
            || {
                calls += 1;
                if calls < 3 {
                    Err(GatewayError::Provider("flaky".into()))
                } else {
                    Ok(42)
                }
            },
            |_| {},
        );
        assert_eq!(result, Ok(42));
    }

    #[test]
    fn non_transient_errors_pass_through() {
        let policy = RetryPolicy::default();
        let mut calls = 0;
        let result: Result<(), _> = policy.run(
            || {
                calls += 1;
                Err(GatewayError::Quota)
            },
            |_| panic!("must not sleep"),
        );
        assert_eq!(result, Err(GatewayError::Quota));
        assert_eq!(calls, 1);
    }
}
