//! The coding stage: builds a coding corpus in one of three representations
//! and maps it to a codebook-conformant biography via the chat gateway.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::Archive;
use crate::biography::{Biography, BiographyError, Provenance, NARRATIVE_FLOOR};
use crate::gateways::{
    render_prompt, template, ChatGateway, ChatMessage, ChatRequest, ChatResponse, GatewayError,
    TemplateId,
};
use crate::orchestrator::{FetchedDocument, ResearchRequest};

#[derive(Debug, Error)]
pub enum CoderError {
    #[error("corpus inputs do not match mode {0:?}")]
    ModeInputMismatch(CorpusMode),
    #[error("malformed biography after repair: {0}")]
    MalformedBiography(String),
    #[error("gateway failure: {0}")]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorpusMode {
    /// A single wiki article.
    WikiPage,
    /// Direct concatenation of all fetched documents, full text.
    RawConcat,
    /// Final report followed by the archived (cited) chunks only.
    RefinedReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodingCorpus {
    pub mode: CorpusMode,
    pub text: String,
    /// Characters/4; labeled an estimate everywhere.
    pub token_estimate: u64,
    /// Language → token share; shares sum to 1 ± 0.01.
    pub language_histogram: Vec<(String, f64)>,
    pub source_manifest: Vec<String>,
}

/// Inputs available to corpus construction; which ones are required depends
/// on the mode.
#[derive(Default)]
pub struct CorpusInputs<'a> {
    pub wiki_page: Option<&'a FetchedDocument>,
    pub fetched_documents: Option<&'a [FetchedDocument]>,
    pub final_report: Option<&'a str>,
    pub archive: Option<&'a Archive>,
    /// When true, REFINED_REPORT also appends batch research summaries.
    pub batch_summaries: Option<&'a [String]>,
}

fn finish_corpus(mode: CorpusMode, text: String, manifest: Vec<String>) -> CodingCorpus {
    let token_estimate = (text.chars().count() as u64 / 4).max(1);
    CodingCorpus {
        mode,
        language_histogram: estimate_language_shares(&text),
        token_estimate,
        text,
        source_manifest: manifest,
    }
}

/// Builds the coder's input corpus deterministically from run artifacts.
pub fn build_corpus(mode: CorpusMode, inputs: &CorpusInputs<'_>) -> Result<CodingCorpus, CoderError> {
    match mode {
        CorpusMode::WikiPage => {
            let page = inputs.wiki_page.ok_or(CoderError::ModeInputMismatch(mode))?;
            let text = format!("=== {} | {}\n{}\n", page.url, page.title, page.body);
            Ok(finish_corpus(mode, text, vec![page.url.clone()]))
        }
        CorpusMode::RawConcat => {
            let docs = inputs
                .fetched_documents
                .filter(|d| !d.is_empty())
                .ok_or(CoderError::ModeInputMismatch(mode))?;
            let mut text = String::new();
            let mut manifest = Vec::new();
            for doc in docs {
                text.push_str(&format!("=== {} | {}\n{}\n\n", doc.url, doc.title, doc.body));
                manifest.push(doc.url.clone());
            }
            Ok(finish_corpus(mode, text, manifest))
        }
        CorpusMode::RefinedReport => {
            let report = inputs
                .final_report
                .filter(|r| !r.trim().is_empty())
                .ok_or(CoderError::ModeInputMismatch(mode))?;
            let archive = inputs.archive.ok_or(CoderError::ModeInputMismatch(mode))?;
            let mut text = format!("FINAL REPORT\n{report}\n\nARCHIVED EVIDENCE\n");
            let mut manifest = Vec::new();
            for doc in archive.documents() {
                if !manifest.contains(&doc.url) {
                    manifest.push(doc.url.clone());
                }
                for chunk in &doc.chunks {
                    text.push_str(&format!("{} {}\n", chunk.label, chunk.text));
                }
            }
            if let Some(summaries) = inputs.batch_summaries {
                text.push_str("\nBATCH SUMMARIES\n");
                for s in summaries {
                    text.push_str(s);
                    text.push('\n');
                }
            }
            Ok(finish_corpus(mode, text, manifest))
        }
    }
}

fn coder_prompt(req: &ResearchRequest) -> Result<String, GatewayError> {
    let mut bindings: std::collections::BTreeMap<&str, String> =
        [("current_name", req.official_name.clone())].into_iter().collect();
    if let Some(c) = &req.country_clause {
        bindings.insert("country_clause", c.clone());
    }
    if let Some(c) = &req.occupation_clause {
        bindings.insert("occupation_clause", c.clone());
        bindings.insert("occupation_clause_short", c.clone());
    }
    if let Some(c) = &req.year_clause {
        bindings.insert("year_clause", c.clone());
    }
    render_prompt(&template(TemplateId::QueryEn), &bindings)
}

const OUTPUT_CONTRACT: &str = "Output the structured biography as section-tagged lines \
([education]/[party]/[occupation]/[relatives], one `<range> | <organization> | <role>` entry \
per line, relation labels only under [relatives]), followed by a [narrative] section.";

fn validate_coded(text: &str, req: &ResearchRequest) -> Result<Biography, String> {
    let bio = Biography::parse_text(
        req.official_id.clone(),
        &req.official_name,
        Provenance::AgentReport(format!("coder-{}", req.official_id)),
        text,
    )
    .map_err(|e: BiographyError| e.to_string())?;
    if bio.entries.is_empty() {
        return Err("no entries under any section tag".into());
    }
    if bio.narrative.chars().count() < NARRATIVE_FLOOR {
        return Err(format!(
            "narrative is {} characters; the floor is {NARRATIVE_FLOOR}",
            bio.narrative.chars().count()
        ));
    }
    for entry in &bio.entries {
        entry.validate().map_err(|e| e.to_string())?;
    }
    Ok(bio)
}

/// Maps a corpus to a structured biography; one repair reprompt on parse or
/// validation failure.
pub fn code_biography(
    corpus: &CodingCorpus,
    req: &ResearchRequest,
    model: &str,
    gw: &dyn ChatGateway,
) -> Result<Biography, CoderError> {
    let system = coder_prompt(req)?;
    let mut messages = vec![
        ChatMessage::system(format!("{system}\n\n{OUTPUT_CONTRACT}")),
        ChatMessage::user(corpus.text.clone()),
    ];
    let request = ChatRequest {
        model: model.to_string(),
        messages: messages.clone(),
        tools: vec![],
    };
    let (response, _usage) = gw.chat(&request)?;
    let text = match response {
        ChatResponse::Text(t) => t,
        ChatResponse::ToolCalls(_) => String::new(),
    };
    match validate_coded(&text, req) {
        Ok(bio) => Ok(bio),
        Err(first_error) => {
            messages.push(ChatMessage { role: "assistant".into(), content: text });
            messages.push(ChatMessage::user(format!(
                "Your previous output was rejected ({first_error}). {OUTPUT_CONTRACT}"
            )));
            let request = ChatRequest {
                model: model.to_string(),
                messages,
                tools: vec![],
            };
            let (response, _usage) = gw.chat(&request)?;
            let text = match response {
                ChatResponse::Text(t) => t,
                ChatResponse::ToolCalls(_) => String::new(),
            };
            validate_coded(&text, req).map_err(CoderError::MalformedBiography)
        }
    }
}

/// Script-class and stopword heuristic per whitespace token. Shares are in
/// [0,1] and sum to 1; this is an estimator, not a language identifier.
pub fn estimate_language_shares(text: &str) -> Vec<(String, f64)> {
    const NORDIC_STOPWORDS: &[&str] = &[
        "og", "i", "på", "av", "til", "er", "som", "han", "hun", "det", "ikke", "med", "for",
        "ble", "fra", "født",
    ];
    let mut counts: std::collections::BTreeMap<&str, u64> = Default::default();
    let mut total = 0u64;
    for token in text.split_whitespace() {
        total += 1;
        let lang = if token.chars().any(|c| {
            ('\u{4e00}'..='\u{9fff}').contains(&c) || ('\u{3040}'..='\u{30ff}').contains(&c)
        }) {
            "zh"
        } else if token.chars().any(|c| ('\u{0400}'..='\u{04ff}').contains(&c)) {
            "ru"
        } else {
            let lower: String = token
                .chars()
                .filter(|c| c.is_alphabetic())
                .collect::<String>()
                .to_lowercase();
            if NORDIC_STOPWORDS.contains(&lower.as_str())
                || lower.chars().any(|c| "æøå".contains(c))
            {
                "no"
            } else {
                "en"
            }
        };
        *counts.entry(lang).or_default() += 1;
    }
    if total == 0 {
        return vec![("en".to_string(), 1.0)];
    }
    counts
        .into_iter()
        .map(|(lang, n)| (lang.to_string(), n as f64 / total as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::{DocumentAnalysis, Staging};
    use crate::biography::OfficialId;
    use crate::gateways::{ScriptedChat, ScriptedGateway, ScriptedTranscript, Usage};
    use crate::orchestrator::RunMode;

    fn docs() -> Vec<FetchedDocument> {
        (1..=3)
            .map(|i| FetchedDocument {
                url: format!("https://example.org/{i}"),
                title: format!("Doc {i}"),
                body: format!("Body of document {i}. ").repeat(40),
            })
            .collect()
    }

    fn request() -> ResearchRequest {
        ResearchRequest {
            official_id: OfficialId::from("test-1"),
            official_name: "Test Person".into(),
            country_clause: Some(" from Norway".into()),
            occupation_clause: None,
            year_clause: None,
            codebook: "codebook".into(),
            mode: RunMode::FullWeb,
        }
    }

    #[test]
    fn raw_concat_keeps_retrieval_order_with_headers() {
        let docs = docs();
        let corpus = build_corpus(
            CorpusMode::RawConcat,
            &CorpusInputs { fetched_documents: Some(&docs), ..Default::default() },
        )
        .unwrap();
        let p1 = corpus.text.find("https://example.org/1").unwrap();
        let p3 = corpus.text.find("https://example.org/3").unwrap();
        assert!(p1 < p3);
        assert_eq!(corpus.source_manifest.len(), 3);
        assert!(corpus.token_estimate > 0);
    }

    #[test]
    fn refined_report_is_smaller_and_contained_in_raw() {
        let docs = docs();
        let mut staging = Staging::new();
        let labels = staging
            .stage(&docs[0].url, &docs[0].title, &docs[0].body, 4000)
            .unwrap();
        let mut archive = Archive::new(OfficialId::from("test-1"), "run");
        archive
            .archive_document(
                &staging,
                &[DocumentAnalysis {
                    url: docs[0].url.clone(),
                    title: docs[0].title.clone(),
                    task_summary: "covers doc 1".into(),
                    relevant_chunk_labels: vec![labels[0].clone()],
                }],
                1,
                "2025-11-25",
            )
            .unwrap();
        let raw = build_corpus(
            CorpusMode::RawConcat,
            &CorpusInputs { fetched_documents: Some(&docs), ..Default::default() },
        )
        .unwrap();
        let refined = build_corpus(
            CorpusMode::RefinedReport,
            &CorpusInputs {
                final_report: Some("Short report."),
                archive: Some(&archive),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(refined.token_estimate < raw.token_estimate);
        for url in &refined.source_manifest {
            assert!(raw.source_manifest.contains(url));
        }
    }

    #[test]
    fn wiki_mode_without_page_is_a_mismatch() {
        let err = build_corpus(CorpusMode::WikiPage, &CorpusInputs::default()).unwrap_err();
        assert!(matches!(err, CoderError::ModeInputMismatch(CorpusMode::WikiPage)));
    }

    fn corpus() -> CodingCorpus {
        let docs = docs();
        build_corpus(
            CorpusMode::RawConcat,
            &CorpusInputs { fetched_documents: Some(&docs), ..Default::default() },
        )
        .unwrap()
    }

    fn good_bio_text() -> String {
        format!(
            "[education]\n1980--1984 | Test University | Bachelor\n[occupation]\n1984--Present | \
             Test Org | Director\n[narrative]\n{}",
            "A sufficiently long narrative sentence. ".repeat(20)
        )
    }

    #[test]
    fn short_narrative_triggers_repair_then_error() {
        let short = "[education]\n1980--1984 | Test University | Bachelor\n[narrative]\nToo short.";
        let chats = vec![
            ScriptedChat {
                expect: "Find comprehensive public information about Test Person".into(),
                response: ChatResponse::Text(short.into()),
                usage: Usage::default(),
            },
            ScriptedChat {
                expect: "rejected".into(),
                response: ChatResponse::Text(short.into()),
                usage: Usage::default(),
            },
        ];
        let gw = ScriptedGateway::new(ScriptedTranscript { chats, ..Default::default() });
        let err = code_biography(&corpus(), &request(), "scripted", &gw).unwrap_err();
        match err {
            CoderError::MalformedBiography(msg) => assert!(msg.contains("600")),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn repair_path_recovers_once() {
        let chats = vec![
            ScriptedChat {
                expect: "Find comprehensive public information".into(),
                response: ChatResponse::Text("no tags at all".into()),
                usage: Usage::default(),
            },
            ScriptedChat {
                expect: "rejected".into(),
                response: ChatResponse::Text(good_bio_text()),
                usage: Usage::default(),
            },
        ];
        let gw = ScriptedGateway::new(ScriptedTranscript { chats, ..Default::default() });
        let bio = code_biography(&corpus(), &request(), "scripted", &gw).unwrap();
        assert_eq!(bio.entries.len(), 2);
        assert!(bio.narrative.chars().count() >= NARRATIVE_FLOOR);
    }

    #[test]
    fn language_shares_sum_to_one() {
        let en = "the quick brown fox jumps over many lazy dogs again";
        let shares = estimate_language_shares(en);
        assert_eq!(shares, vec![("en".to_string(), 1.0)]);

        let mixed = "han ble født på Oslo og er i regjeringen the minister was born in Oslo city";
        let shares = estimate_language_shares(mixed);
        let total: f64 = shares.iter().map(|(_, s)| s).sum();
        assert!((total - 1.0).abs() < 0.01);
        let no = shares.iter().find(|(l, _)| l == "no").map(|(_, s)| *s).unwrap();
        assert!((no - 0.5).abs() < 0.1, "norwegian share {no}");

        let cjk = "政治 人物 简历";
        assert_eq!(estimate_language_shares(cjk), vec![("zh".to_string(), 1.0)]);
    }
}
