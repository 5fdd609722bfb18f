//! The extraction run loop: a planning supervisor that maintains a global
//! summary and gap list, and a searcher worker that executes
//! search/retrieve/archive batches and hands back structured overviews.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError, ChunkLabel, DocumentAnalysis, Staging,
    DEFAULT_MAX_CHUNK_CHARS};
use crate::biography::OfficialId;
use crate::gateways::{
    render_prompt, template, ChatGateway, ChatMessage, ChatRequest, ChatResponse, FetchGateway,
    GatewayError, SearchGateway, TemplateId, ToolCall, ToolSchema,
};

/// Result cap passed to the search provider per query.
pub const MAX_RESULTS_PER_SEARCH: usize = 20;
/// A gap retargeted more than this many times is retired.
pub const MAX_GAP_RETARGETS: u32 = 3;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("malformed supervisor decision after repair: {0}")]
    MalformedDecision(String),
    #[error("searcher tool protocol violation after repair: {0}")]
    ToolProtocol(String),
    #[error("search intent has no any_of or must_include terms")]
    EmptyIntent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunMode {
    FullWeb,
    NoWiki,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResearchRequest {
    pub official_id: OfficialId,
    pub official_name: String,
    #[serde(default)]
    pub country_clause: Option<String>,
    #[serde(default)]
    pub occupation_clause: Option<String>,
    #[serde(default)]
    pub year_clause: Option<String>,
    /// Field schema the final record must satisfy, shown to the supervisor.
    pub codebook: String,
    pub mode: RunMode,
}

/// One remaining search gap with its retarget counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TodoItem {
    pub description: String,
    /// Starts at 1; incremented each time the gap is targeted but stays
    /// unresolved.
    pub k: u32,
    pub retired: bool,
}

impl TodoItem {
    pub fn new(description: impl Into<String>, k: u32) -> Self {
        TodoItem {
            description: description.into(),
            k,
            retired: k > MAX_GAP_RETARGETS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisorDecision {
    pub todo_list: Vec<TodoItem>,
    /// `None` means FINISH; `Some` must be non-empty (CONTINUE).
    pub next_task_instruction: Option<String>,
    pub global_summary: String,
}

/// Parses the `todo_list` text block: lines shaped `[k] description` become
/// items; headings and free text are skipped.
pub fn parse_todo_list(text: &str) -> Vec<TodoItem> {
    let mut items = Vec::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches('-').trim_start();
        let Some(rest) = line.strip_prefix('[') else { continue };
        let Some((counter, desc)) = rest.split_once(']') else { continue };
        let Ok(k) = counter.trim().parse::<u32>() else { continue };
        let desc = desc.trim();
        if k >= 1 && !desc.is_empty() {
            items.push(TodoItem::new(desc, k));
        }
    }
    items
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchIntent {
    #[serde(default)]
    pub any_of: Vec<String>,
    #[serde(default)]
    pub must_include: Vec<String>,
    #[serde(default)]
    pub must_not_include: Vec<String>,
    #[serde(default)]
    pub sites: Option<Vec<String>>,
    #[serde(default)]
    pub languages: Vec<String>,
}

impl SearchIntent {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.any_of.is_empty() && self.must_include.is_empty() {
            return Err(OrchestratorError::EmptyIntent);
        }
        for list in [&self.any_of, &self.must_include, &self.must_not_include] {
            let unique: BTreeSet<_> = list.iter().collect();
            if unique.len() != list.len() {
                return Err(OrchestratorError::ToolProtocol(
                    "duplicate terms in search intent".into(),
                ));
            }
        }
        Ok(())
    }
}

fn quote(term: &str) -> String {
    format!("\"{}\"", term)
}

/// Maps a structured intent to deterministic boolean keyword syntax.
pub fn build_search_query(intent: &SearchIntent) -> Result<String, OrchestratorError> {
    intent.validate()?;
    let mut parts = Vec::new();
    for term in &intent.must_include {
        parts.push(quote(term));
    }
    if !intent.any_of.is_empty() {
        parts.push(format!(
            "({})",
            intent.any_of.iter().map(|t| quote(t)).collect::<Vec<_>>().join(" OR ")
        ));
    }
    for term in &intent.must_not_include {
        parts.push(format!("-{}", quote(term)));
    }
    if let Some(sites) = &intent.sites {
        if !sites.is_empty() {
            parts.push(format!(
                "({})",
                sites.iter().map(|s| format!("site:{s}")).collect::<Vec<_>>().join(" OR ")
            ));
        }
    }
    Ok(parts.join(" "))
}

/// Inverse of [`build_search_query`]; used to cross-check the mapping in
/// tests.
pub fn parse_search_query(query: &str) -> SearchIntent {
    let mut intent = SearchIntent::default();
    let mut rest = query.trim();
    while !rest.is_empty() {
        rest = rest.trim_start();
        if let Some(tail) = rest.strip_prefix("-\"") {
            let end = tail.find('"').unwrap_or(tail.len());
            intent.must_not_include.push(tail[..end].to_string());
            rest = &tail[(end + 1).min(tail.len())..];
        } else if let Some(tail) = rest.strip_prefix('"') {
            let end = tail.find('"').unwrap_or(tail.len());
            intent.must_include.push(tail[..end].to_string());
            rest = &tail[(end + 1).min(tail.len())..];
        } else if let Some(tail) = rest.strip_prefix('(') {
            let end = tail.find(')').unwrap_or(tail.len());
            let group = &tail[..end];
            for alt in group.split(" OR ") {
                let alt = alt.trim();
                if let Some(site) = alt.strip_prefix("site:") {
                    intent.sites.get_or_insert_with(Vec::new).push(site.to_string());
                } else {
                    intent.any_of.push(alt.trim_matches('"').to_string());
                }
            }
            rest = &tail[(end + 1).min(tail.len())..];
        } else {
            let end = rest.find(' ').unwrap_or(rest.len());
            rest = &rest[end..];
        }
    }
    intent
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchIntentSummary {
    #[serde(default)]
    pub bad_must_include: Vec<String>,
    #[serde(default)]
    pub good_any_of: Vec<String>,
    #[serde(default)]
    pub search_languages: Vec<String>,
}

/// The searcher's structured handoff at the end of a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchOverview {
    pub batch_id: u32,
    pub supervisor_task_instruction: String,
    pub research_summary: String,
    pub search_intent_summary: SearchIntentSummary,
    /// Chunk labels archived during this batch.
    pub detailed_analysis: Vec<ChunkLabel>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Budgets {
    pub max_batches: u32,
    pub max_search_attempts_per_batch: u32,
    pub max_urls_per_retrieve: usize,
    #[serde(default)]
    pub token_budget: Option<u64>,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            max_batches: 8,
            max_search_attempts_per_batch: 9,
            max_urls_per_retrieve: 10,
            token_budget: None,
        }
    }
}

impl Budgets {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.max_batches == 0
            || self.max_search_attempts_per_batch == 0
            || self.max_urls_per_retrieve == 0
            || self.max_urls_per_retrieve > 10
        {
            return Err(OrchestratorError::ToolProtocol(format!(
                "invalid budgets: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTelemetry {
    pub api_calls: u64,
    pub searches: u64,
    pub results_returned: u64,
    pub urls_retrieved: u64,
    pub docs_archived: u64,
    pub chunks_archived: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub warnings: Vec<String>,
}

impl RunTelemetry {
    pub fn tokens_total(&self) -> u64 {
        self.tokens_in + self.tokens_out
    }
}

/// A document fetched during the run, in retrieval order (full body, kept for
/// raw-concatenation corpora).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchedDocument {
    pub url: String,
    pub title: String,
    pub body: String,
}

pub struct Gateways<'a> {
    pub chat: &'a dyn ChatGateway,
    pub search: &'a dyn SearchGateway,
    pub fetch: &'a dyn FetchGateway,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub final_report: String,
    pub archive: Archive,
    pub telemetry: RunTelemetry,
    pub batches: Vec<BatchOverview>,
    pub decisions: Vec<SupervisorDecision>,
    pub fetched_documents: Vec<FetchedDocument>,
    /// True when budgets expired before the supervisor chose FINISH.
    pub forced_finish: bool,
}

/// Domains whose fetches are refused in every mode.
const ALWAYS_BLOCKED: &[&str] = &["grokipedia.com"];

fn url_host(url: &str) -> Option<String> {
    let rest = url.split("://").nth(1).unwrap_or(url);
    let host = rest.split(['/', '?', '#']).next()?;
    let host = host.split('@').next_back()?.split(':').next()?;
    if host.is_empty() {
        return None;
    }
    Some(host.to_ascii_lowercase())
}

fn host_matches(host: &str, domain: &str) -> bool {
    host == domain || host.ends_with(&format!(".{domain}"))
}

/// Wiki-style domain test: wikipedia/wikimedia-family suffixes plus any
/// domain label starting or ending with "wiki".
pub fn is_wiki_domain(host: &str) -> bool {
    if host_matches(host, "wikipedia.org") {
        return true;
    }
    host.split('.').any(|label| {
        !label.is_empty() && (label.starts_with("wiki") || label.ends_with("wiki"))
    })
}

/// Mode-aware fetch gate. Grokipedia domains are refused in every mode; wiki
/// domains are refused only in NO_WIKI runs.
pub fn is_blocked_url(url: &str, mode: RunMode) -> bool {
    let Some(host) = url_host(url) else { return true };
    if ALWAYS_BLOCKED.iter().any(|d| host_matches(&host, d)) {
        return true;
    }
    mode == RunMode::NoWiki && is_wiki_domain(&host)
}

/// Internal run state shared between supervisor steps.
#[derive(Debug, Default)]
pub struct RunState {
    pub todo: Vec<TodoItem>,
    pub global_summary: String,
    pub batches: Vec<BatchOverview>,
    /// Description of the gap the current instruction targets, recorded
    /// explicitly when the instruction is issued.
    pub focus: Option<String>,
    pub request_header: String,
}

impl RunState {
    fn todo_text(&self) -> String {
        if self.todo.is_empty() {
            return "(no gaps recorded)".to_string();
        }
        self.todo
            .iter()
            .map(|t| {
                if t.retired {
                    format!("[{}] {} (retired)", t.k, t.description)
                } else {
                    format!("[{}] {}", t.k, t.description)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Merges a freshly parsed todo list into state: counters are monotone,
    /// and a gap that was the previous focus and is still listed under the
    /// same description counts as targeted-but-unresolved.
    fn merge_todo(&mut self, parsed: Vec<TodoItem>) {
        let focus = self.focus.take();
        let mut merged = Vec::with_capacity(parsed.len());
        for mut item in parsed {
            if let Some(prev) = self.todo.iter().find(|t| t.description == item.description) {
                item.k = item.k.max(prev.k);
                if focus.as_deref() == Some(item.description.as_str()) {
                    item.k = item.k.max(prev.k + 1);
                }
            }
            item.retired = item.k > MAX_GAP_RETARGETS;
            merged.push(item);
        }
        self.todo = merged;
    }
}

fn extract_json(text: &str) -> &str {
    // Tolerate accidental markdown fences around an otherwise strict object.
    let trimmed = text.trim();
    let trimmed = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .unwrap_or(trimmed);
    trimmed.strip_suffix("```").unwrap_or(trimmed).trim()
}

fn parse_decision(text: &str) -> Result<SupervisorDecision, String> {
    let value: serde_json::Value =
        serde_json::from_str(extract_json(text)).map_err(|e| format!("not valid JSON: {e}"))?;
    let obj = value.as_object().ok_or("top level is not a JSON object")?;
    let todo_text = obj
        .get("todo_list")
        .and_then(|v| v.as_str())
        .ok_or("missing string field todo_list")?;
    let global_summary = obj
        .get("global_summary")
        .and_then(|v| v.as_str())
        .ok_or("missing string field global_summary")?
        .to_string();
    let next_task_instruction = match obj.get("next_task_instruction") {
        None => return Err("missing field next_task_instruction".into()),
        Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
        Some(serde_json::Value::String(_)) => {
            return Err("next_task_instruction must be non-empty or null".into())
        }
        Some(other) => return Err(format!("next_task_instruction has wrong type: {other}")),
    };
    Ok(SupervisorDecision {
        todo_list: parse_todo_list(todo_text),
        next_task_instruction,
        global_summary,
    })
}

/// One chat exchange with usage accounted into telemetry.
fn chat_counted(
    gw: &dyn ChatGateway,
    request: &ChatRequest,
    telemetry: &mut RunTelemetry,
) -> Result<ChatResponse, OrchestratorError> {
    let (response, usage) = gw.chat(request)?;
    telemetry.api_calls += 1;
    telemetry.tokens_in += usage.tokens_in;
    telemetry.tokens_out += usage.tokens_out;
    Ok(response)
}

pub struct RunOptions {
    /// Injected wall date (YYYY-MM-DD); the orchestrator never reads a clock.
    pub current_date: String,
    /// Model identifier recorded on chat requests.
    pub model: String,
}

fn supervisor_context(req: &ResearchRequest, state: &RunState) -> String {
    let mut out = String::new();
    out.push_str(&state.request_header);
    out.push_str(&format!("\n\nCompleted batches: {}\n", state.batches.len()));
    for b in &state.batches {
        out.push_str(&format!(
            "\n--- batch {} ---\ninstruction: {}\nresearch_summary: {}\n",
            b.batch_id, b.supervisor_task_instruction, b.research_summary
        ));
    }
    out.push_str(&format!("\nCurrent global_summary:\n{}\n", state.global_summary));
    out.push_str(&format!("\nCurrent todo_list:\n{}\n", state.todo_text()));
    let _ = req;
    out
}

/// Runs one supervisor turn: assembles context, parses the strict-JSON
/// decision (one repair reprompt), and applies the gap retarget rule.
pub fn step_supervisor(
    state: &mut RunState,
    req: &ResearchRequest,
    opts: &RunOptions,
    gw: &dyn ChatGateway,
    telemetry: &mut RunTelemetry,
) -> Result<SupervisorDecision, OrchestratorError> {
    let system = render_prompt(
        &template(TemplateId::Supervisor),
        &[("current_date", opts.current_date.clone())].into_iter().collect(),
    )?;
    let mut messages = vec![
        ChatMessage::system(system),
        ChatMessage::user(supervisor_context(req, state)),
    ];
    let mut request = ChatRequest {
        model: opts.model.clone(),
        messages: messages.clone(),
        tools: vec![],
    };
    let response = chat_counted(gw, &request, telemetry)?;
    let text = match &response {
        ChatResponse::Text(t) => t.clone(),
        ChatResponse::ToolCalls(_) => String::new(),
    };
    let decision = match parse_decision(&text) {
        Ok(d) => d,
        Err(first_error) => {
            messages.push(ChatMessage {
                role: "assistant".into(),
                content: text,
            });
            messages.push(ChatMessage::user(format!(
                "Your previous reply was not a valid decision ({first_error}). \
                 Reply with the JSON object only: no prose, no fences."
            )));
            request.messages = messages;
            let response = chat_counted(gw, &request, telemetry)?;
            let text = match &response {
                ChatResponse::Text(t) => t.clone(),
                ChatResponse::ToolCalls(_) => String::new(),
            };
            parse_decision(&text).map_err(OrchestratorError::MalformedDecision)?
        }
    };

    state.merge_todo(decision.todo_list.clone());
    state.global_summary = decision.global_summary.clone();

    if let Some(instruction) = &decision.next_task_instruction {
        // Record the focus gap explicitly; refuse instructions that target
        // only retired gaps — they must never reach the searcher.
        let lower = instruction.to_lowercase();
        let active = state
            .todo
            .iter()
            .find(|t| !t.retired && lower.contains(&t.description.to_lowercase()));
        let retired = state
            .todo
            .iter()
            .find(|t| t.retired && lower.contains(&t.description.to_lowercase()));
        match (active, retired) {
            (Some(gap), _) => state.focus = Some(gap.description.clone()),
            (None, Some(gap)) => {
                return Err(OrchestratorError::MalformedDecision(format!(
                    "instruction targets retired gap (k={}): {}",
                    gap.k, gap.description
                )));
            }
            (None, None) => state.focus = None,
        }
    }
    Ok(decision)
}

fn searcher_tools() -> Vec<ToolSchema> {
    vec![
        ToolSchema {
            name: "web_search".into(),
            description: "execute search".into(),
        },
        ToolSchema {
            name: "retrieve_documents".into(),
            description: "fetch and chunk document content from URLs".into(),
        },
        ToolSchema {
            name: "archive_document".into(),
            description: "archive every relevant chunk found during browsing".into(),
        },
        ToolSchema {
            name: "handoff_to_supervisor_with_overview".into(),
            description: "final handoff".into(),
        },
    ]
}

struct BatchState<'a> {
    staging: &'a mut Staging,
    archive: &'a mut Archive,
    fetched: &'a mut Vec<FetchedDocument>,
    latest_results: Vec<String>,
    searches: u32,
    archived_labels: Vec<ChunkLabel>,
    repair_used: bool,
}

/// Runs one searcher batch until handoff, attempt exhaustion, or the hard
/// turn cap. Chat turns are bounded by `3 × attempts + 4` so adversarial
/// models cannot spin the loop forever.
pub fn run_searcher_batch(
    instruction: &str,
    batch_id: u32,
    req: &ResearchRequest,
    budgets: &Budgets,
    opts: &RunOptions,
    gws: &Gateways<'_>,
    staging: &mut Staging,
    archive: &mut Archive,
    fetched: &mut Vec<FetchedDocument>,
    telemetry: &mut RunTelemetry,
) -> Result<BatchOverview, OrchestratorError> {
    assert!(!instruction.trim().is_empty(), "instruction must be non-empty");
    let system = render_prompt(
        &template(TemplateId::Searcher),
        &[
            ("current_date", opts.current_date.clone()),
            (
                "max_search_attempts",
                budgets.max_search_attempts_per_batch.to_string(),
            ),
        ]
        .into_iter()
        .collect(),
    )?;
    let mut messages = vec![ChatMessage::system(system), ChatMessage::user(instruction)];
    let mut batch = BatchState {
        staging,
        archive,
        fetched,
        latest_results: Vec::new(),
        searches: 0,
        archived_labels: Vec::new(),
        repair_used: false,
    };
    let max_turns = 3 * budgets.max_search_attempts_per_batch + 4;

    for _turn in 0..max_turns {
        let request = ChatRequest {
            model: opts.model.clone(),
            messages: messages.clone(),
            tools: searcher_tools(),
        };
        let response = chat_counted(gws.chat, &request, telemetry)?;
        let calls = match response {
            ChatResponse::ToolCalls(calls) if !calls.is_empty() => calls,
            other => {
                let note = match other {
                    ChatResponse::Text(t) => format!("plain text reply: {t}"),
                    ChatResponse::ToolCalls(_) => "empty tool call list".into(),
                };
                repair_or_fail(&mut batch, &mut messages, &note)?;
                continue;
            }
        };
        for call in calls {
            match handle_tool_call(
                &call, instruction, batch_id, req, budgets, opts, gws, &mut batch, telemetry,
            )? {
                ToolOutcome::Reply(reply) => {
                    messages.push(ChatMessage {
                        role: "assistant".into(),
                        content: format!("tool_call: {} {}", call.name, call.arguments),
                    });
                    messages.push(ChatMessage::tool(reply));
                }
                ToolOutcome::Handoff(overview) => return Ok(overview),
                ToolOutcome::Protocol(note) => {
                    repair_or_fail(&mut batch, &mut messages, &note)?;
                }
            }
        }
    }

    // No handoff within the turn cap: synthesize an overview from archived
    // state and flag it.
    telemetry
        .warnings
        .push(format!("batch {batch_id}: no handoff; overview synthesized"));
    Ok(BatchOverview {
        batch_id,
        supervisor_task_instruction: instruction.to_string(),
        research_summary: format!(
            "(synthesized: searcher never handed off) archived {} chunks this batch",
            batch.archived_labels.len()
        ),
        search_intent_summary: SearchIntentSummary::default(),
        detailed_analysis: batch.archived_labels,
    })
}

fn repair_or_fail(
    batch: &mut BatchState<'_>,
    messages: &mut Vec<ChatMessage>,
    note: &str,
) -> Result<(), OrchestratorError> {
    if batch.repair_used {
        return Err(OrchestratorError::ToolProtocol(note.to_string()));
    }
    batch.repair_used = true;
    messages.push(ChatMessage::tool(format!(
        "Tool protocol violation: {note}. Use only the declared tools with valid arguments."
    )));
    Ok(())
}

enum ToolOutcome {
    Reply(String),
    Handoff(BatchOverview),
    Protocol(String),
}

#[allow(clippy::too_many_arguments)]
fn handle_tool_call(
    call: &ToolCall,
    instruction: &str,
    batch_id: u32,
    req: &ResearchRequest,
    budgets: &Budgets,
    opts: &RunOptions,
    gws: &Gateways<'_>,
    batch: &mut BatchState<'_>,
    telemetry: &mut RunTelemetry,
) -> Result<ToolOutcome, OrchestratorError> {
    match call.name.as_str() {
        "web_search" => {
            let intent: SearchIntent =
                match serde_json::from_value(call.arguments["search_intent"].clone()) {
                    Ok(i) => i,
                    Err(e) => return Ok(ToolOutcome::Protocol(format!("bad search_intent: {e}"))),
                };
            if intent.validate().is_err() {
                return Ok(ToolOutcome::Protocol("empty or duplicated search intent".into()));
            }
            if batch.searches >= budgets.max_search_attempts_per_batch {
                return Ok(ToolOutcome::Reply(
                    "search budget exhausted for this batch; archive what you have and hand off"
                        .into(),
                ));
            }
            batch.searches += 1;
            let query = build_search_query(&intent)?;
            let language = intent.languages.first().map(String::as_str);
            let results = gws.search.search(&query, language, MAX_RESULTS_PER_SEARCH)?;
            let visible: Vec<_> = results
                .into_iter()
                .filter(|r| !is_blocked_url(&r.url, req.mode))
                .collect();
            telemetry.searches += 1;
            telemetry.results_returned += visible.len() as u64;
            batch.latest_results = visible.iter().map(|r| r.url.clone()).collect();
            Ok(ToolOutcome::Reply(format!(
                "web_search results for: {query}\n{}",
                serde_json::to_string(&visible).unwrap()
            )))
        }
        "retrieve_documents" => {
            let urls: Vec<String> = match serde_json::from_value(call.arguments["urls"].clone()) {
                Ok(u) => u,
                Err(e) => return Ok(ToolOutcome::Protocol(format!("bad urls: {e}"))),
            };
            let mut notes = Vec::new();
            let mut allowed = Vec::new();
            for url in &urls {
                if allowed.len() >= budgets.max_urls_per_retrieve {
                    telemetry
                        .warnings
                        .push(format!("batch {batch_id}: retrieve truncated to {} urls", budgets.max_urls_per_retrieve));
                    notes.push(format!("{url}: dropped (over the per-call limit)"));
                } else if !batch.latest_results.contains(url) {
                    notes.push(format!("{url}: dropped (not in the latest search results)"));
                } else if is_blocked_url(url, req.mode) {
                    telemetry
                        .warnings
                        .push(format!("batch {batch_id}: blocked domain refused: {url}"));
                    notes.push(format!("{url}: refused (blocked domain)"));
                } else {
                    allowed.push(url.clone());
                }
            }
            let mut rendered = Vec::new();
            for url in &allowed {
                match gws.fetch.fetch(url) {
                    Ok(page) if !page.empty_body() => {
                        let labels =
                            batch.staging.stage(url, &page.title, &page.body, DEFAULT_MAX_CHUNK_CHARS)?;
                        telemetry.urls_retrieved += 1;
                        if !batch.fetched.iter().any(|d| &d.url == url) {
                            batch.fetched.push(FetchedDocument {
                                url: url.clone(),
                                title: page.title.clone(),
                                body: page.body.clone(),
                            });
                        }
                        let mut doc = format!("URL: {url}\nTITLE: {}\n", page.title);
                        for label in &labels {
                            let (_, chunk) = batch.staging.lookup(label).unwrap();
                            doc.push_str(&format!("{label} {}\n", chunk.text));
                        }
                        rendered.push(doc);
                    }
                    Ok(_) => notes.push(format!("{url}: empty body")),
                    Err(e) => {
                        telemetry.warnings.push(format!("batch {batch_id}: fetch failed: {e}"));
                        notes.push(format!("{url}: fetch failed ({e})"));
                    }
                }
            }
            let _ = opts;
            let mut reply = rendered.join("\n");
            if !notes.is_empty() {
                reply.push_str(&format!("\nNOTES:\n{}", notes.join("\n")));
            }
            Ok(ToolOutcome::Reply(reply))
        }
        "archive_document" => {
            let analysis: Vec<DocumentAnalysis> =
                match serde_json::from_value(call.arguments["detailed_analysis"].clone()) {
                    Ok(a) => a,
                    Err(e) => {
                        return Ok(ToolOutcome::Protocol(format!("bad detailed_analysis: {e}")))
                    }
                };
            let before_docs = batch.archive.documents().len();
            let before_chunks = batch.archive.chunk_count();
            let warnings = match batch.archive.archive_document(
                batch.staging,
                &analysis,
                batch_id,
                &opts.current_date,
            ) {
                Ok(w) => w,
                Err(e) => return Ok(ToolOutcome::Protocol(format!("archive rejected: {e}"))),
            };
            for w in warnings {
                telemetry.warnings.push(format!("batch {batch_id}: {w:?}"));
            }
            let new_docs = batch.archive.documents().len() - before_docs;
            let new_chunks = batch.archive.chunk_count() - before_chunks;
            telemetry.docs_archived += new_docs as u64;
            telemetry.chunks_archived += new_chunks as u64;
            for doc in &batch.archive.documents()[before_docs..] {
                for c in &doc.chunks {
                    batch.archived_labels.push(c.label.clone());
                }
            }
            Ok(ToolOutcome::Reply(format!(
                "archived {new_docs} documents ({new_chunks} chunks)"
            )))
        }
        "handoff_to_supervisor_with_overview" => {
            let research_summary = call.arguments["research_summary"]
                .as_str()
                .unwrap_or_default()
                .to_string();
            if research_summary.trim().is_empty() {
                return Ok(ToolOutcome::Protocol(
                    "handoff requires a non-empty research_summary".into(),
                ));
            }
            let search_intent_summary: SearchIntentSummary =
                serde_json::from_value(call.arguments["search_intent_summary"].clone())
                    .unwrap_or_default();
            Ok(ToolOutcome::Handoff(BatchOverview {
                batch_id,
                supervisor_task_instruction: instruction.to_string(),
                research_summary,
                search_intent_summary,
                detailed_analysis: std::mem::take(&mut batch.archived_labels),
            }))
        }
        other => Ok(ToolOutcome::Protocol(format!("unknown tool: {other}"))),
    }
}

/// Drives the full reason/act/update loop: supervisor decisions alternate
/// with searcher batches until FINISH or the batch budget expires.
pub fn run_extraction(
    req: &ResearchRequest,
    budgets: &Budgets,
    opts: &RunOptions,
    gws: &Gateways<'_>,
) -> Result<RunOutcome, OrchestratorError> {
    budgets.validate()?;
    let mut telemetry = RunTelemetry::default();
    let mut archive = Archive::new(req.official_id.clone(), format!("run-{}", req.official_id));
    let mut fetched = Vec::new();
    let mut decisions = Vec::new();
    let mut state = RunState {
        request_header: format!(
            "Research request: reconstruct the structured biography of {} ({}).\nMode: {:?}\nCodebook:\n{}",
            req.official_name, req.official_id, req.mode, req.codebook
        ),
        ..Default::default()
    };

    for batch_id in 1..=budgets.max_batches {
        let decision = step_supervisor(&mut state, req, opts, gws.chat, &mut telemetry)?;
        decisions.push(decision.clone());
        let Some(instruction) = decision.next_task_instruction else {
            // Voluntary FINISH: the final report is the supervisor's own
            // comprehensive global summary.
            let report = if decision.global_summary.trim().is_empty() {
                telemetry.warnings.push("finish with empty summary".into());
                "(no findings)".to_string()
            } else {
                decision.global_summary
            };
            return Ok(RunOutcome {
                final_report: report,
                archive,
                telemetry,
                batches: state.batches,
                decisions,
                fetched_documents: fetched,
                forced_finish: false,
            });
        };
        let mut staging = Staging::new();
        let overview = run_searcher_batch(
            &instruction,
            batch_id,
            req,
            budgets,
            opts,
            gws,
            &mut staging,
            &mut archive,
            &mut fetched,
            &mut telemetry,
        )?;
        state.batches.push(overview);
    }

    // Budget expired without FINISH: forced-finish report.
    if state.global_summary.trim().is_empty() {
        telemetry
            .warnings
            .push("budget exhausted with empty summary".into());
    }
    let final_report = format!(
        "{}\n\n[INCOMPLETE: batch budget exhausted before FINISH]",
        state.global_summary
    );
    Ok(RunOutcome {
        final_report,
        archive,
        telemetry,
        batches: state.batches,
        decisions,
        fetched_documents: fetched,
        forced_finish: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateways::{ScriptedChat, ScriptedGateway, ScriptedTranscript, Usage};

    fn request() -> ResearchRequest {
        ResearchRequest {
            official_id: OfficialId::from("test-1"),
            official_name: "Test Person".into(),
            country_clause: None,
            occupation_clause: None,
            year_clause: None,
            codebook: "education/party/occupation/relatives".into(),
            mode: RunMode::FullWeb,
        }
    }

    fn opts() -> RunOptions {
        RunOptions {
            current_date: "2025-11-25".into(),
            model: "scripted".into(),
        }
    }

    fn finish_chat(summary: &str) -> ScriptedChat {
        ScriptedChat {
            expect: "Completed batches: 0".into(),
            response: ChatResponse::Text(
                serde_json::json!({
                    "todo_list": "",
                    "next_task_instruction": null,
                    "global_summary": summary,
                })
                .to_string(),
            ),
            usage: Usage { tokens_in: 100, tokens_out: 10 },
        }
    }

    #[test]
    fn immediate_finish_yields_summary_report() {
        let transcript = ScriptedTranscript {
            chats: vec![finish_chat("All findings.")],
            ..Default::default()
        };
        let gw = ScriptedGateway::new(transcript);
        let gws = Gateways { chat: &gw, search: &gw, fetch: &gw };
        let out = run_extraction(&request(), &Budgets::default(), &opts(), &gws).unwrap();
        assert_eq!(out.final_report, "All findings.");
        assert!(out.batches.is_empty());
        assert!(!out.forced_finish);
        assert_eq!(out.telemetry.api_calls, 1);
        assert_eq!(out.telemetry.tokens_in, 100);
    }

    #[test]
    fn always_continue_hits_batch_ceiling_then_forced_finish() {
        let continue_decision = serde_json::json!({
            "todo_list": "[1] birth year",
            "next_task_instruction": "Find the birth year of Test Person.",
            "global_summary": "Partial summary.",
        })
        .to_string();
        let handoff = ChatResponse::ToolCalls(vec![ToolCall {
            name: "handoff_to_supervisor_with_overview".into(),
            arguments: serde_json::json!({
                "research_summary": "nothing found",
                "search_intent_summary": {},
            }),
        }]);
        let mut chats = Vec::new();
        for i in 0..3 {
            chats.push(ScriptedChat {
                expect: format!("Completed batches: {i}"),
                response: ChatResponse::Text(continue_decision.clone()),
                usage: Usage::default(),
            });
            chats.push(ScriptedChat {
                expect: "Find the birth year".into(),
                response: handoff.clone(),
                usage: Usage::default(),
            });
        }
        let gw = ScriptedGateway::new(ScriptedTranscript { chats, ..Default::default() });
        let gws = Gateways { chat: &gw, search: &gw, fetch: &gw };
        let budgets = Budgets { max_batches: 3, ..Default::default() };
        let out = run_extraction(&request(), &budgets, &opts(), &gws).unwrap();
        assert!(out.forced_finish);
        assert_eq!(out.batches.len(), 3);
        assert!(out.final_report.contains("[INCOMPLETE"));
        assert!(gw.unconsumed().is_empty());
    }

    #[test]
    fn retired_gap_is_never_retargeted() {
        // The supervisor keeps targeting "spouse names" while admitting k=4.
        let decision = serde_json::json!({
            "todo_list": "[4] spouse names",
            "next_task_instruction": "Find the spouse names of Test Person.",
            "global_summary": "s",
        })
        .to_string();
        let chats = vec![ScriptedChat {
            expect: "Completed batches: 0".into(),
            response: ChatResponse::Text(decision),
            usage: Usage::default(),
        }];
        let gw = ScriptedGateway::new(ScriptedTranscript { chats, ..Default::default() });
        let gws = Gateways { chat: &gw, search: &gw, fetch: &gw };
        let err = run_extraction(&request(), &Budgets::default(), &opts(), &gws).unwrap_err();
        assert!(matches!(err, OrchestratorError::MalformedDecision(_)));
    }

    #[test]
    fn gap_counter_increments_when_focus_stays_unresolved() {
        let mut state = RunState::default();
        state.merge_todo(vec![TodoItem::new("spouse names", 2)]);
        state.focus = Some("spouse names".into());
        state.merge_todo(vec![TodoItem::new("spouse names", 2)]);
        assert_eq!(state.todo[0].k, 3);
        // Counters never decrease even if the supervisor resets them.
        state.focus = Some("spouse names".into());
        state.merge_todo(vec![TodoItem::new("spouse names", 1)]);
        assert_eq!(state.todo[0].k, 4);
        assert!(state.todo[0].retired);
    }

    #[test]
    fn todo_list_text_parses_counters_and_skips_headings() {
        let items = parse_todo_list(
            "Remaining gaps:\n[1] birth year\n- [2] spouse names\nnot a gap\n[x] bad counter",
        );
        assert_eq!(items.len(), 2);
        assert_eq!(items[0], TodoItem::new("birth year", 1));
        assert_eq!(items[1], TodoItem::new("spouse names", 2));
    }

    #[test]
    fn query_builder_maps_intent_to_boolean_syntax() {
        let intent = SearchIntent {
            must_include: vec!["Erik Solheim".into()],
            any_of: vec!["biografi".into(), "miljøminister".into(), "SV".into(), "født".into()],
            must_not_include: vec!["obituary".into()],
            sites: Some(vec!["regjeringen.no".into()]),
            languages: vec!["no".into()],
        };
        let query = build_search_query(&intent).unwrap();
        assert_eq!(
            query,
            "\"Erik Solheim\" (\"biografi\" OR \"miljøminister\" OR \"SV\" OR \"født\") \
             -\"obituary\" (site:regjeringen.no)"
        );
        let parsed = parse_search_query(&query);
        assert_eq!(parsed.must_include, intent.must_include);
        assert_eq!(parsed.any_of, intent.any_of);
        assert_eq!(parsed.must_not_include, intent.must_not_include);
        assert_eq!(parsed.sites, intent.sites);
    }

    #[test]
    fn empty_intent_is_rejected() {
        let intent = SearchIntent {
            must_not_include: vec!["x".into()],
            ..Default::default()
        };
        assert!(matches!(
            build_search_query(&intent),
            Err(OrchestratorError::EmptyIntent)
        ));
    }

    #[test]
    fn wiki_blocklist_covers_suffixes_and_wiki_labels() {
        for url in [
            "https://no.wikipedia.org/wiki/Erik_Solheim",
            "https://en.wikipedia.org/x",
            "https://wiki.example.org/page",
            "https://examplewiki.org/page",
            "https://www.wikidata.org/entity/Q1",
        ] {
            assert!(is_blocked_url(url, RunMode::NoWiki), "{url} should be blocked");
            assert!(!is_blocked_url(url, RunMode::FullWeb), "{url} allowed with full web");
        }
        for mode in [RunMode::FullWeb, RunMode::NoWiki] {
            assert!(is_blocked_url("https://grokipedia.com/page/X", mode));
        }
        assert!(!is_blocked_url("https://www.regjeringen.no/cv", RunMode::NoWiki));
        assert!(!is_blocked_url("https://stortinget.no/bio", RunMode::NoWiki));
    }

    #[test]
    fn malformed_decision_gets_one_repair_then_errors() {
        let chats = vec![
            ScriptedChat {
                expect: "Completed batches: 0".into(),
                response: ChatResponse::Text("not json".into()),
                usage: Usage::default(),
            },
            ScriptedChat {
                expect: "not a valid decision".into(),
                response: ChatResponse::Text("still not json".into()),
                usage: Usage::default(),
            },
        ];
        let gw = ScriptedGateway::new(ScriptedTranscript { chats, ..Default::default() });
        let gws = Gateways { chat: &gw, search: &gw, fetch: &gw };
        let err = run_extraction(&request(), &Budgets::default(), &opts(), &gws).unwrap_err();
        assert!(matches!(err, OrchestratorError::MalformedDecision(_)));
        assert_eq!(gw.consumed(), 2);
    }
}
