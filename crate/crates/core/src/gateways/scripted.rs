//! Deterministic replay backend.
//!
//! A transcript holds an ordered list of chat entries plus keyed search
//! results and page bodies. Chat requests are consumed strictly in order:
//! each incoming request must contain the entry's expected substring, or
//! replay aborts with a mismatch. Search and fetch lookups are keyed and
//! order-independent.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    ChatGateway, ChatRequest, ChatResponse, FetchGateway, FetchedPage, GatewayError,
    SearchGateway, SearchResultItem, Usage,
};

/// One scripted chat turn: `expect` is a substring the flattened request
/// must contain, matched in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedChat {
    pub expect: String,
    pub response: ChatResponse,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedPage {
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTranscript {
    pub chats: Vec<ScriptedChat>,
    /// Keyed by exact query string.
    pub search_results: BTreeMap<String, Vec<SearchResultItem>>,
    /// Keyed by exact URL.
    pub pages: BTreeMap<String, ScriptedPage>,
}

impl ScriptedTranscript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(
            &serde_json::to_string(&serde_json::json!({
                "schema": "scripted-transcript",
                "version": 1,
            }))
            .unwrap(),
        );
        out.push('\n');
        for chat in &self.chats {
            out.push_str(
                &serde_json::to_string(&serde_json::json!({"chat": chat})).unwrap(),
            );
            out.push('\n');
        }
        for (query, results) in &self.search_results {
            out.push_str(
                &serde_json::to_string(
                    &serde_json::json!({"search": {"query": query, "results": results}}),
                )
                .unwrap(),
            );
            out.push('\n');
        }
        for (url, page) in &self.pages {
            out.push_str(
                &serde_json::to_string(&serde_json::json!({"page": {"url": url, "page": page}}))
                    .unwrap(),
            );
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: serde_json::Value = lines
            .next()
            .ok_or_else(|| GatewayError::Provider("empty transcript".into()))
            .and_then(|l| {
                serde_json::from_str(l)
                    .map_err(|e| GatewayError::Provider(format!("bad transcript header: {e}")))
            })?;
        if header["schema"] != "scripted-transcript" || header["version"] != 1 {
            return Err(GatewayError::Provider(format!(
                "unsupported transcript header: {header}"
            )));
        }
        let mut transcript = ScriptedTranscript::default();
        for line in lines {
            let value: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| GatewayError::Provider(format!("bad transcript line: {e}")))?;
            if let Some(chat) = value.get("chat") {
                let chat: ScriptedChat = serde_json::from_value(chat.clone())
                    .map_err(|e| GatewayError::Provider(format!("bad chat entry: {e}")))?;
                transcript.chats.push(chat);
            } else if let Some(search) = value.get("search") {
                let query = search["query"]
                    .as_str()
                    .ok_or_else(|| GatewayError::Provider("search entry missing query".into()))?
                    .to_string();
                let results: Vec<SearchResultItem> =
                    serde_json::from_value(search["results"].clone())
                        .map_err(|e| GatewayError::Provider(format!("bad search entry: {e}")))?;
                transcript.search_results.insert(query, results);
            } else if let Some(page) = value.get("page") {
                let url = page["url"]
                    .as_str()
                    .ok_or_else(|| GatewayError::Provider("page entry missing url".into()))?
                    .to_string();
                let body: ScriptedPage = serde_json::from_value(page["page"].clone())
                    .map_err(|e| GatewayError::Provider(format!("bad page entry: {e}")))?;
                transcript.pages.insert(url, body);
            } else {
                return Err(GatewayError::Provider(format!(
                    "unrecognized transcript line: {value}"
                )));
            }
        }
        Ok(transcript)
    }
}

/// Replays a [`ScriptedTranscript`] behind all three gateway traits.
pub struct ScriptedGateway {
    state: Mutex<ReplayState>,
}

struct ReplayState {
    transcript: ScriptedTranscript,
    next_chat: usize,
}

impl ScriptedGateway {
    pub fn new(transcript: ScriptedTranscript) -> Self {
        ScriptedGateway {
            state: Mutex::new(ReplayState { transcript, next_chat: 0 }),
        }
    }

    /// Number of chat entries consumed so far.
    pub fn consumed(&self) -> usize {
        self.state.lock().unwrap().next_chat
    }

    /// Expectation strings of chat entries never consumed; empty means the
    /// replay covered the whole transcript.
    pub fn unconsumed(&self) -> Vec<String> {
        let state = self.state.lock().unwrap();
        state.transcript.chats[state.next_chat..]
            .iter()
            .map(|c| c.expect.clone())
            .collect()
    }
}

fn truncate(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        text.to_string()
    } else {
        let mut end = limit;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &text[..end])
    }
}

impl ChatGateway for ScriptedGateway {
    fn chat(&self, request: &ChatRequest) -> Result<(ChatResponse, Usage), GatewayError> {
        let mut state = self.state.lock().unwrap();
        let flat = request.flattened();
        let index = state.next_chat;
        let entry = state
            .transcript
            .chats
            .get(index)
            .ok_or_else(|| GatewayError::TranscriptExhausted(truncate(&flat, 200)))?;
        if !flat.contains(&entry.expect) {
            return Err(GatewayError::TranscriptMismatch {
                expected: entry.expect.clone(),
                got: truncate(&flat, 200),
            });
        }
        let out = (entry.response.clone(), entry.usage);
        state.next_chat += 1;
        Ok(out)
    }
}

impl SearchGateway for ScriptedGateway {
    fn search(
        &self,
        query: &str,
        _language: Option<&str>,
        max_results: usize,
    ) -> Result<Vec<SearchResultItem>, GatewayError> {
        let state = self.state.lock().unwrap();
        let results = state.transcript.search_results.get(query).ok_or_else(|| {
            GatewayError::TranscriptMismatch {
                expected: "a scripted search query".into(),
                got: query.to_string(),
            }
        })?;
        Ok(results.iter().take(max_results).cloned().collect())
    }
}

impl FetchGateway for ScriptedGateway {
    fn fetch(&self, url: &str) -> Result<FetchedPage, GatewayError> {
        let state = self.state.lock().unwrap();
        let page = state.transcript.pages.get(url).ok_or_else(|| {
            GatewayError::FetchFailed { url: url.to_string(), reason: "not scripted".into() }
        })?;
        Ok(FetchedPage { title: page.title.clone(), body: page.body.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateways::ChatMessage;

    fn request(content: &str) -> ChatRequest {
        ChatRequest {
            model: "scripted".into(),
            messages: vec![ChatMessage::user(content)],
            tools: vec![],
        }
    }

    fn sample_transcript() -> ScriptedTranscript {
        let mut t = ScriptedTranscript {
            chats: vec![
                ScriptedChat {
                    expect: "first".into(),
                    response: ChatResponse::Text("one".into()),
                    usage: Usage { tokens_in: 10, tokens_out: 2 },
                },
                ScriptedChat {
                    expect: "second".into(),
                    response: ChatResponse::Text("two".into()),
                    usage: Usage { tokens_in: 20, tokens_out: 4 },
                },
            ],
            ..Default::default()
        };
        t.search_results.insert(
            "erik solheim".into(),
            vec![SearchResultItem {
                url: "https://example.org/a".into(),
                title: "A".into(),
                snippet: "about".into(),
                rank: 1,
            }],
        );
        t.pages.insert(
            "https://example.org/a".into(),
            ScriptedPage { title: "A".into(), body: "body text".into() },
        );
        t
    }

    #[test]
    fn chats_replay_in_order() {
        let gw = ScriptedGateway::new(sample_transcript());
        let (r1, u1) = gw.chat(&request("the first message")).unwrap();
        assert_eq!(r1, ChatResponse::Text("one".into()));
        assert_eq!(u1.tokens_in, 10);
        let (r2, _) = gw.chat(&request("the second message")).unwrap();
        assert_eq!(r2, ChatResponse::Text("two".into()));
        assert!(gw.unconsumed().is_empty());
        assert!(matches!(
            gw.chat(&request("anything")),
            Err(GatewayError::TranscriptExhausted(_))
        ));
    }

    #[test]
    fn out_of_order_request_is_a_mismatch() {
        let gw = ScriptedGateway::new(sample_transcript());
        let err = gw.chat(&request("the second message")).unwrap_err();
        assert!(matches!(err, GatewayError::TranscriptMismatch { .. }));
        // A mismatch does not consume the entry.
        assert_eq!(gw.consumed(), 0);
        assert!(gw.chat(&request("first")).is_ok());
    }

    #[test]
    fn search_and_fetch_are_keyed() {
        let gw = ScriptedGateway::new(sample_transcript());
        let results = gw.search("erik solheim", Some("en"), 13).unwrap();
        assert_eq!(results.len(), 1);
        let page = gw.fetch("https://example.org/a").unwrap();
        assert_eq!(page.body, "body text");
        assert!(matches!(
            gw.fetch("https://example.org/missing"),
            Err(GatewayError::FetchFailed { .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let t = sample_transcript();
        let text = t.to_jsonl();
        let back = ScriptedTranscript::from_jsonl(&text).unwrap();
        assert_eq!(back, t);
    }
}
