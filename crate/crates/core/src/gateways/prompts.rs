//! Prompt templates and placeholder rendering.
//!
//! Template bodies ship as separate text files and are hash-pinned: a
//! checksum test fails if any shipped prompt drifts from the text it was
//! validated against. Optional clauses render as empty when unbound.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateId {
    Supervisor,
    Searcher,
    QueryEn,
    PlanEn,
    FactCheck,
    Entrywise,
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: &'static str,
    pub required: &'static [&'static str],
    pub optional: &'static [&'static str],
}

pub fn template(id: TemplateId) -> PromptTemplate {
    match id {
        TemplateId::Supervisor => PromptTemplate {
            id,
            body: include_str!("prompts/supervisor.txt"),
            required: &["current_date"],
            optional: &[],
        },
        TemplateId::Searcher => PromptTemplate {
            id,
            body: include_str!("prompts/searcher.txt"),
            required: &["max_search_attempts", "current_date"],
            optional: &[],
        },
        TemplateId::QueryEn => PromptTemplate {
            id,
            body: include_str!("prompts/query_en.txt"),
            required: &["current_name"],
            optional: &[
                "country_clause",
                "occupation_clause",
                "year_clause",
                "occupation_clause_short",
            ],
        },
        TemplateId::PlanEn => PromptTemplate {
            id,
            body: include_str!("prompts/plan_en.txt"),
            required: &["current_name"],
            optional: &[],
        },
        TemplateId::FactCheck => PromptTemplate {
            id,
            body: include_str!("prompts/fact_check.txt"),
            required: &["official_id", "official_name", "entry", "related_content"],
            optional: &[],
        },
        TemplateId::Entrywise => PromptTemplate {
            id,
            body: include_str!("prompts/entrywise.txt"),
            required: &[
                "official_id",
                "official_name",
                "experiment_type",
                "cgt_biography",
                "experiment_biography",
            ],
            optional: &[],
        },
    }
}

/// SHA-256 of each shipped template body, pinned at validation time.
pub const TEMPLATE_CHECKSUMS: &[(TemplateId, &str)] = &[
    (
        TemplateId::Supervisor,
        "524abdfea822d2036809bcb821a5e93ddef7a7dc001301f447dbcc17fddc94fd",
    ),
    (
        TemplateId::Searcher,
        "e165e2d7bdefb200c7bd9988e1b9f009f034f9df199cccaeb658e902514aefa1",
    ),
    (
        TemplateId::QueryEn,
        "b86d202eeb6a912632601825320253784ed65d12abdf4912066685868665cc6e",
    ),
    (
        TemplateId::PlanEn,
        "0bf7b2a223b21554b12a45821964d82fd8f76218cd79efc7709f85c4fdc99646",
    ),
    (
        TemplateId::FactCheck,
        "495ef7f8fefaf471452945b818c7e1ee6936adb1ca98a870288cabf6242fabb6",
    ),
    (
        TemplateId::Entrywise,
        "91d125aadad0b2545d4b2d1adf50f87c1f54c5fd7c4ec0d0400cd4a5149bbd2d",
    ),
];

pub fn body_checksum(body: &str) -> String {
    Sha256::digest(body.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Binds placeholders and renders the template. Required placeholders must
/// be bound; optional ones default to the empty string. Any `{name}` left
/// after substitution is an error.
pub fn render_prompt(
    t: &PromptTemplate,
    bindings: &BTreeMap<&str, String>,
) -> Result<String, GatewayError> {
    let mut out = t.body.to_string();
    for key in t.required {
        let value = bindings
            .get(key)
            .ok_or_else(|| GatewayError::MissingPlaceholder((*key).to_string()))?;
        out = out.replace(&format!("{{{key}}}"), value);
    }
    for key in t.optional {
        let value = bindings.get(key).cloned().unwrap_or_default();
        out = out.replace(&format!("{{{key}}}"), &value);
    }
    if let Some(stray) = find_placeholder(&out) {
        return Err(GatewayError::UnresolvedPlaceholder(stray));
    }
    Ok(out)
}

/// Finds a `{lower_snake_case}` placeholder token, if any remain.
fn find_placeholder(text: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while let Some(open) = text[i..].find('{').map(|p| p + i) {
        let rest = &text[open + 1..];
        if let Some(close) = rest.find('}') {
            let name = &rest[..close];
            if !name.is_empty()
                && name
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b == b'_' || b.is_ascii_digit())
            {
                return Some(name.to_string());
            }
        }
        i = open + 1;
        if i >= bytes.len() {
            break;
        }
    }
    None
}
