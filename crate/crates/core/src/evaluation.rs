//! Scoring: set-based precision/recall/F1 over claims, the entrywise
//! judge protocol with 1-5 scores and difference codes, bootstrap confidence
//! intervals, URL classification, and report aggregation.
//!
//! Two scoring paths coexist deliberately: the set-based path compares
//! normalized claim sets, the judge path maps per-entry scores to the same
//! metric names. Reports label which path produced each number.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biography::Biography;
use crate::claims::{claims_equal, Claim, ClaimsError, NormalizationRules};
use crate::gateways::{
    render_prompt, template, ChatGateway, ChatMessage, ChatRequest, ChatResponse, GatewayError,
    TemplateId,
};
use crate::orchestrator::{RunMode, RunTelemetry};

/// Candidate entries scored at or above this support level count as true
/// positives.
pub const DEFAULT_TP_THRESHOLD: u8 = 4;
/// Reference entries scored at or above this match level count as recovered.
pub const DEFAULT_RECOVERED_THRESHOLD: u8 = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("malformed judgment after repair: {0}")]
    MalformedJudgment(String),
    #[error("judgment count mismatch: {0}")]
    CountMismatch(String),
    #[error("group {0} is empty")]
    EmptyGroup(&'static str),
    #[error("url has no parseable host: {0}")]
    UnparseableUrl(String),
    #[error(transparent)]
    Claims(#[from] ClaimsError),
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
}

/// Precision/recall/F1 with the raw counts they were derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Derives the ratios from counts; zero denominators yield zero.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        Prf { tp, fp, fn_, precision, recall, f1: f1(precision, recall) }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Set-based scoring: tp = |candidate ∩ reference|, fp = |candidate \
/// reference|, fn = |reference \ candidate|. Both inputs must be deduplicated
/// normalized claim sets.
pub fn compute_prf(
    candidate: &[Claim],
    reference: &[Claim],
    rules: &NormalizationRules,
) -> Result<Prf, EvalError> {
    let mut tp = 0u64;
    let mut fp = 0u64;
    for c in candidate {
        let mut matched = false;
        for r in reference {
            if claims_equal(c, r, rules)? {
                matched = true;
                break;
            }
        }
        if matched {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    let mut fn_ = 0u64;
    for r in reference {
        let mut matched = false;
        for c in candidate {
            if claims_equal(r, c, rules)? {
                matched = true;
                break;
            }
        }
        if !matched {
            fn_ += 1;
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

pub const DIFFERENCE_CODES: &[&str] = &[
    "TIME_YEAR",
    "TIME_MISSING",
    "ORG_WRONG",
    "POSITION_WRONG",
    "POSITION_INCOMPLETE",
    "EXTRA_INFO",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CgtEvaluation {
    pub index: u32,
    pub cgt_entry_text: String,
    /// Matching candidate text, several entries separated by " || ", or
    /// "NO_MATCH".
    pub matched_candidate_entries: String,
    pub match_score: u8,
    pub match_category: String,
    #[serde(default)]
    pub difference_codes: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

impl CgtEvaluation {
    /// The matched candidate texts, split on the " || " separator.
    pub fn matched_texts(&self) -> Vec<&str> {
        if self.matched_candidate_entries == "NO_MATCH" {
            return Vec::new();
        }
        self.matched_candidate_entries.split(" || ").collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub index: u32,
    pub candidate_entry_text: String,
    /// E.g. "CGT#3", "CGT#1,#2", or "NO_SUPPORT".
    pub matched_cgt_entries: String,
    pub support_score: u8,
    pub support_category: String,
    #[serde(default)]
    pub notes: String,
}

impl CandidateEvaluation {
    /// Parses "CGT#1,#2"-style references into 1-based indices.
    pub fn matched_indices(&self) -> Vec<u32> {
        parse_cgt_refs(&self.matched_cgt_entries)
    }
}

/// Parses multi-entry reference strings like "CGT#3" or "CGT#1,#2" (and
/// " || "-separated repetitions) into 1-based entry indices.
pub fn parse_cgt_refs(text: &str) -> Vec<u32> {
    let mut out = Vec::new();
    for part in text.split(" || ") {
        for token in part.split(',') {
            let token = token.trim();
            let token = token.strip_prefix("CGT").unwrap_or(token);
            let token = token.strip_prefix('#').unwrap_or(token);
            if let Ok(n) = token.parse::<u32>() {
                if !out.contains(&n) {
                    out.push(n);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntrywiseResult {
    pub official_id: String,
    #[serde(default)]
    pub official_name: String,
    #[serde(default)]
    pub experiment_type: String,
    pub cgt_entry_count: u32,
    pub candidate_entry_count: u32,
    pub cgt_evaluations: Vec<CgtEvaluation>,
    pub candidate_evaluations: Vec<CandidateEvaluation>,
    #[serde(default)]
    pub qualitative_summary: String,
}

fn category_for_match(score: u8) -> &'static [&'static str] {
    match score {
        5 => &["FULL_MATCH"],
        3 | 4 => &["PARTIAL_MATCH"],
        2 => &["WEAK_MATCH"],
        _ => &["NO_MATCH"],
    }
}

fn category_for_support(score: u8) -> &'static [&'static str] {
    match score {
        5 => &["FULLY_SUPPORTED"],
        3 | 4 => &["PARTIALLY_SUPPORTED"],
        2 => &["WEAKLY_SUPPORTED"],
        _ => &["NOT_SUPPORTED"],
    }
}

impl EntrywiseResult {
    /// Schema validation: declared counts match list lengths, scores are in
    /// range, categories are consistent with scores, difference codes come
    /// from the closed set.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.cgt_evaluations.len() != self.cgt_entry_count as usize {
            return Err(EvalError::CountMismatch(format!(
                "cgt_entry_count {} but {} cgt_evaluations",
                self.cgt_entry_count,
                self.cgt_evaluations.len()
            )));
        }
        if self.candidate_evaluations.len() != self.candidate_entry_count as usize {
            return Err(EvalError::CountMismatch(format!(
                "candidate_entry_count {} but {} candidate_evaluations",
                self.candidate_entry_count,
                self.candidate_evaluations.len()
            )));
        }
        for e in &self.cgt_evaluations {
            if !(1..=5).contains(&e.match_score) {
                return Err(EvalError::CountMismatch(format!(
                    "cgt entry {}: match_score {} outside 1-5",
                    e.index, e.match_score
                )));
            }
            if !category_for_match(e.match_score).contains(&e.match_category.as_str()) {
                return Err(EvalError::CountMismatch(format!(
                    "cgt entry {}: category {} inconsistent with score {}",
                    e.index, e.match_category, e.match_score
                )));
            }
            for code in &e.difference_codes {
                if !DIFFERENCE_CODES.contains(&code.as_str()) {
                    return Err(EvalError::CountMismatch(format!(
                        "cgt entry {}: unknown difference code {code}",
                        e.index
                    )));
                }
            }
        }
        for e in &self.candidate_evaluations {
            if !(1..=5).contains(&e.support_score) {
                return Err(EvalError::CountMismatch(format!(
                    "candidate entry {}: support_score {} outside 1-5",
                    e.index, e.support_score
                )));
            }
            if !category_for_support(e.support_score).contains(&e.support_category.as_str()) {
                return Err(EvalError::CountMismatch(format!(
                    "candidate entry {}: category {} inconsistent with score {}",
                    e.index, e.support_category, e.support_score
                )));
            }
        }
        Ok(())
    }
}

pub fn parse_entrywise_judgment(text: &str) -> Result<EntrywiseResult, EvalError> {
    let trimmed = text.trim();
    let trimmed = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .unwrap_or(trimmed);
    let trimmed = trimmed.strip_suffix("```").unwrap_or(trimmed).trim();
    let result: EntrywiseResult = serde_json::from_str(trimmed)
        .map_err(|e| EvalError::MalformedJudgment(e.to_string()))?;
    result.validate()?;
    Ok(result)
}

/// Runs the entrywise judge over a candidate/reference biography pair.
/// Strict-JSON output; one repair reprompt.
pub fn entrywise_judge(
    cgt_bio: &Biography,
    candidate_bio: &Biography,
    experiment_type: &str,
    model: &str,
    gw: &dyn ChatGateway,
) -> Result<EntrywiseResult, EvalError> {
    let prompt = render_prompt(
        &template(TemplateId::Entrywise),
        &[
            ("official_id", cgt_bio.official_id.to_string()),
            ("official_name", cgt_bio.official_name.clone()),
            ("experiment_type", experiment_type.to_string()),
            ("cgt_biography", cgt_bio.entries_text()),
            ("experiment_biography", candidate_bio.entries_text()),
        ]
        .into_iter()
        .collect(),
    )?;
    let mut messages = vec![ChatMessage::user(prompt)];
    let request = ChatRequest { model: model.to_string(), messages: messages.clone(), tools: vec![] };
    let (response, _usage) = gw.chat(&request)?;
    let text = match response {
        ChatResponse::Text(t) => t,
        ChatResponse::ToolCalls(_) => String::new(),
    };
    match parse_entrywise_judgment(&text) {
        Ok(r) => Ok(r),
        Err(first_error) => {
            messages.push(ChatMessage { role: "assistant".into(), content: text });
            messages.push(ChatMessage::user(format!(
                "Your previous reply was rejected ({first_error}). \
                 Reply with the JSON object only, matching the declared schema."
            )));
            let request = ChatRequest { model: model.to_string(), messages, tools: vec![] };
            let (response, _usage) = gw.chat(&request)?;
            let text = match response {
                ChatResponse::Text(t) => t,
                ChatResponse::ToolCalls(_) => String::new(),
            };
            parse_entrywise_judgment(&text)
        }
    }
}

/// Maps judge scores to the headline metrics. Precision is candidate-side
/// (supported entries over all candidate entries); recall is reference-side
/// (recovered reference entries over all reference entries). The two sides
/// are not forced through a single TP count because one reference entry can
/// be recovered by several candidate entries and vice versa.
pub fn entrywise_to_prf(r: &EntrywiseResult, tp_threshold: u8, recovered_threshold: u8) -> Prf {
    assert!((2..=5).contains(&tp_threshold) && (2..=5).contains(&recovered_threshold));
    let tp = r
        .candidate_evaluations
        .iter()
        .filter(|e| e.support_score >= tp_threshold)
        .count() as u64;
    let fp = r.candidate_evaluations.len() as u64 - tp;
    let recovered = r
        .cgt_evaluations
        .iter()
        .filter(|e| e.match_score >= recovered_threshold)
        .count() as u64;
    let fn_ = r.cgt_evaluations.len() as u64 - recovered;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if recovered + fn_ == 0 {
        0.0
    } else {
        recovered as f64 / (recovered + fn_) as f64
    };
    Prf { tp, fp, fn_, precision, recall, f1: f1(precision, recall) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub iterations: u32,
    pub seed: u64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = rank - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Percentile bootstrap for a difference in means: resamples both groups
/// with replacement, takes the empirical 2.5/97.5 percentiles. Seeded and
/// deterministic.
pub fn bootstrap_mean_diff(
    group_a: &[f64],
    group_b: &[f64],
    iterations: u32,
    seed: u64,
) -> Result<BootstrapCi, EvalError> {
    if group_a.is_empty() {
        return Err(EvalError::EmptyGroup("A"));
    }
    if group_b.is_empty() {
        return Err(EvalError::EmptyGroup("B"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::with_capacity(iterations as usize);
    for _ in 0..iterations.max(1) {
        let ra: Vec<f64> = (0..group_a.len())
            .map(|_| group_a[rng.gen_range(0..group_a.len())])
            .collect();
        let rb: Vec<f64> = (0..group_b.len())
            .map(|_| group_b[rng.gen_range(0..group_b.len())])
            .collect();
        diffs.push(mean(&ra) - mean(&rb));
    }
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BootstrapCi {
        point: mean(group_a) - mean(group_b),
        lower: percentile(&diffs, 0.025),
        upper: percentile(&diffs, 0.975),
        iterations: iterations.max(1),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UrlCategory {
    Govt,
    Wiki,
    Journalism,
    ReferenceDb,
    Platforms,
    Ngo,
    Commercial,
    Other,
}

impl UrlCategory {
    pub const ALL: [UrlCategory; 8] = [
        UrlCategory::Govt,
        UrlCategory::Wiki,
        UrlCategory::Journalism,
        UrlCategory::ReferenceDb,
        UrlCategory::Platforms,
        UrlCategory::Ngo,
        UrlCategory::Commercial,
        UrlCategory::Other,
    ];
}

/// One ordered classification rule: a host suffix or host keyword mapped to
/// a category. First match wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UrlRule {
    pub category: UrlCategory,
    /// "suffix" (domain-suffix match) or "keyword" (substring of the host).
    pub kind: String,
    pub pattern: String,
}

fn rule(category: UrlCategory, kind: &str, pattern: &str) -> UrlRule {
    UrlRule { category, kind: kind.into(), pattern: pattern.into() }
}

/// The default, test-pinned rule list. Order matters: wiki rules precede the
/// generic reference rules, platforms precede commercial.
pub fn default_url_rules() -> Vec<UrlRule> {
    use UrlCategory::*;
    vec![
        rule(Wiki, "suffix", "wikipedia.org"),
        rule(Wiki, "suffix", "wikidata.org"),
        rule(Wiki, "suffix", "wikimedia.org"),
        rule(Wiki, "suffix", "grokipedia.com"),
        rule(Wiki, "suffix", "fandom.com"),
        rule(Wiki, "keyword", "wiki"),
        rule(Govt, "suffix", "regjeringen.no"),
        rule(Govt, "suffix", "stortinget.no"),
        rule(Govt, "suffix", "europa.eu"),
        rule(Govt, "suffix", "un.org"),
        rule(Govt, "suffix", "unep.org"),
        rule(Govt, "keyword", ".gov"),
        rule(Govt, "keyword", "parliament"),
        rule(Govt, "keyword", "senate"),
        rule(Govt, "keyword", "congress"),
        rule(Platforms, "suffix", "linkedin.com"),
        rule(Platforms, "suffix", "twitter.com"),
        rule(Platforms, "suffix", "x.com"),
        rule(Platforms, "suffix", "facebook.com"),
        rule(Platforms, "suffix", "instagram.com"),
        rule(Platforms, "suffix", "youtube.com"),
        rule(Platforms, "suffix", "tiktok.com"),
        rule(ReferenceDb, "suffix", "ballotpedia.org"),
        rule(ReferenceDb, "suffix", "votesmart.org"),
        rule(ReferenceDb, "suffix", "britannica.com"),
        rule(ReferenceDb, "suffix", "snl.no"),
        rule(ReferenceDb, "suffix", "biography.com"),
        rule(Journalism, "suffix", "nytimes.com"),
        rule(Journalism, "suffix", "washingtonpost.com"),
        rule(Journalism, "suffix", "reuters.com"),
        rule(Journalism, "suffix", "apnews.com"),
        rule(Journalism, "suffix", "bbc.com"),
        rule(Journalism, "suffix", "bbc.co.uk"),
        rule(Journalism, "suffix", "theguardian.com"),
        rule(Journalism, "suffix", "cnn.com"),
        rule(Journalism, "suffix", "nrk.no"),
        rule(Journalism, "suffix", "aftenposten.no"),
        rule(Journalism, "suffix", "vg.no"),
        rule(Journalism, "suffix", "dagbladet.no"),
        rule(Journalism, "keyword", "news"),
        rule(Ngo, "suffix", "wwf.org"),
        rule(Ngo, "suffix", "greenpeace.org"),
        rule(Ngo, "suffix", "amnesty.org"),
        rule(Ngo, "suffix", "hrw.org"),
        rule(Commercial, "suffix", "bloomberg.com"),
        rule(Commercial, "suffix", "forbes.com"),
        rule(Commercial, "suffix", "crunchbase.com"),
    ]
}

fn url_host(url: &str) -> Option<String> {
    let rest = url.split("://").nth(1).unwrap_or(url);
    let host = rest.split(['/', '?', '#']).next()?;
    let host = host.split('@').next_back()?.split(':').next()?;
    if host.is_empty() || !host.contains('.') {
        return None;
    }
    Some(host.to_ascii_lowercase())
}

/// Total, deterministic first-match classification; anything unmatched is
/// OTHER.
pub fn classify_url(url: &str, rules: &[UrlRule]) -> Result<UrlCategory, EvalError> {
    let host = url_host(url).ok_or_else(|| EvalError::UnparseableUrl(url.to_string()))?;
    for r in rules {
        let hit = match r.kind.as_str() {
            "suffix" => host == r.pattern || host.ends_with(&format!(".{}", r.pattern)),
            _ => host.contains(&r.pattern),
        };
        if hit {
            return Ok(r.category);
        }
    }
    Ok(UrlCategory::Other)
}

/// One official's scored run, as consumed by report aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfficialResult {
    pub official_id: String,
    pub model: String,
    pub region: String,
    pub mode: RunMode,
    /// Which path produced the metrics: "set" or "judge".
    pub scoring_path: String,
    pub prf: Prf,
    pub telemetry: RunTelemetry,
    #[serde(default)]
    pub used_urls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub mode: String,
    pub region: String,
    pub officials: u64,
    pub scoring_path: String,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub results_total: u64,
    pub results_avg: f64,
    pub searches_total: u64,
    pub searches_avg: f64,
    pub urls_total: u64,
    pub urls_avg: f64,
    /// Category → share of used URLs; shares sum to 1 when URLs exist.
    pub url_shares: Vec<(UrlCategory, f64)>,
}

fn mode_name(mode: RunMode) -> &'static str {
    match mode {
        RunMode::FullWeb => "full_web",
        RunMode::NoWiki => "no_wiki",
    }
}

fn build_row(
    model: &str,
    mode: &str,
    region: &str,
    group: &[&OfficialResult],
    url_rules: &[UrlRule],
) -> ReportRow {
    let n = group.len() as u64;
    let mut counts: BTreeMap<UrlCategory, u64> = BTreeMap::new();
    let mut url_total_classified = 0u64;
    for r in group {
        for u in &r.used_urls {
            let cat = classify_url(u, url_rules).unwrap_or(UrlCategory::Other);
            *counts.entry(cat).or_default() += 1;
            url_total_classified += 1;
        }
    }
    let url_shares = if url_total_classified == 0 {
        Vec::new()
    } else {
        counts
            .into_iter()
            .map(|(c, k)| (c, k as f64 / url_total_classified as f64))
            .collect()
    };
    ReportRow {
        model: model.to_string(),
        mode: mode.to_string(),
        region: region.to_string(),
        officials: n,
        scoring_path: group[0].scoring_path.clone(),
        mean_precision: mean(&group.iter().map(|r| r.prf.precision).collect::<Vec<_>>()),
        mean_recall: mean(&group.iter().map(|r| r.prf.recall).collect::<Vec<_>>()),
        mean_f1: mean(&group.iter().map(|r| r.prf.f1).collect::<Vec<_>>()),
        results_total: group.iter().map(|r| r.telemetry.results_returned).sum(),
        results_avg: group.iter().map(|r| r.telemetry.results_returned).sum::<u64>() as f64
            / n as f64,
        searches_total: group.iter().map(|r| r.telemetry.searches).sum(),
        searches_avg: group.iter().map(|r| r.telemetry.searches).sum::<u64>() as f64 / n as f64,
        urls_total: group.iter().map(|r| r.telemetry.urls_retrieved).sum(),
        urls_avg: group.iter().map(|r| r.telemetry.urls_retrieved).sum::<u64>() as f64 / n as f64,
        url_shares,
    }
}

/// Groups results by (model, mode, region), emits one row per group plus an
/// "Overall" row per (model, mode). Deterministic ordering.
pub fn aggregate_report(results: &[OfficialResult], url_rules: &[UrlRule]) -> Vec<ReportRow> {
    let mut by_group: BTreeMap<(String, String, String), Vec<&OfficialResult>> = BTreeMap::new();
    for r in results {
        by_group
            .entry((r.model.clone(), mode_name(r.mode).to_string(), r.region.clone()))
            .or_default()
            .push(r);
    }
    let mut by_model_mode: BTreeMap<(String, String), Vec<&OfficialResult>> = BTreeMap::new();
    for ((model, mode, _), group) in &by_group {
        by_model_mode
            .entry((model.clone(), mode.clone()))
            .or_default()
            .extend(group.iter().copied());
    }
    let mut rows = Vec::new();
    for ((model, mode), group) in &by_model_mode {
        let regions: Vec<&String> = by_group
            .keys()
            .filter(|(m, md, _)| m == model && md == mode)
            .map(|(_, _, r)| r)
            .collect();
        if regions.len() > 1 {
            rows.push(build_row(model, mode, "Overall", group, url_rules));
        }
        for region in regions {
            let g = &by_group[&(model.clone(), mode.clone(), region.clone())];
            rows.push(build_row(model, mode, region, g, url_rules));
        }
    }
    rows
}

/// CSV emission mirroring the aggregate table columns.
pub fn report_to_csv(rows: &[ReportRow]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "model", "mode", "region", "officials", "scoring_path", "mean_precision",
            "mean_recall", "mean_f1", "results_total", "results_avg", "searches_total",
            "searches_avg", "urls_total", "urls_avg", "url_shares",
        ])
        .unwrap();
    for r in rows {
        let shares = r
            .url_shares
            .iter()
            .map(|(c, s)| format!("{c:?}={s:.4}"))
            .collect::<Vec<_>>()
            .join(";");
        writer
            .write_record([
                r.model.clone(),
                r.mode.clone(),
                r.region.clone(),
                r.officials.to_string(),
                r.scoring_path.clone(),
                format!("{:.4}", r.mean_precision),
                format!("{:.4}", r.mean_recall),
                format!("{:.4}", r.mean_f1),
                r.results_total.to_string(),
                format!("{:.2}", r.results_avg),
                r.searches_total.to_string(),
                format!("{:.2}", r.searches_avg),
                r.urls_total.to_string(),
                format!("{:.2}", r.urls_avg),
                shares,
            ])
            .unwrap();
    }
    String::from_utf8(writer.into_inner().unwrap()).unwrap()
}
