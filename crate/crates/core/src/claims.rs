//! Atomic normalized claims and the equality predicate used by consensus
//! filtering and metric computation.
//!
//! A claim is the tuple (entity, role, organization, start, end, status,
//! section). All text fields are canonicalized (case-folded,
//! whitespace-collapsed, alias-resolved) before any comparison; matching is
//! rule-based and auditable, never probabilistic.

use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biography::{Biography, DateStamp, EntrySection, Qualifier};

pub const RULES_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClaimsError {
    #[error("claim bypassed normalization")]
    Unnormalized,
    #[error("empty claim pool")]
    EmptyPool,
    #[error("alias '{0}' maps to more than one canonical name")]
    AmbiguousAlias(String),
    #[error("bad rewrite pattern '{0}': {1}")]
    BadRewrite(String, String),
    #[error("rules file version {got}, expected {expected}")]
    RulesVersion { got: u32, expected: u32 },
    #[error("rules file malformed: {0}")]
    RulesMalformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimStatus {
    Active,
    Ended,
    Concurrent,
    Unemployed,
}

/// One atomic normalized fact about an official.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Claim {
    pub entity: String,
    pub role: String,
    pub organization: String,
    pub start: DateStamp,
    pub end: DateStamp,
    pub status: ClaimStatus,
    pub section: EntrySection,
    /// Set by [`NormalizationRules::normalize_claim`]; comparisons reject
    /// claims that bypassed normalization.
    #[serde(default)]
    pub normalized: bool,
}

impl Claim {
    /// Deterministic sort/dedup key. Status is deliberately excluded: ACTIVE
    /// vs ENDED for the same tuple collapse to one consensus identity.
    pub fn key(&self) -> (EntrySection, String, String, String, String, String) {
        (
            self.section,
            self.entity.clone(),
            self.organization.clone(),
            self.role.clone(),
            self.start.to_string(),
            self.end.to_string(),
        )
    }

    /// Human-readable line used in verification prompts and audit exports.
    pub fn render(&self) -> String {
        if self.section == EntrySection::Relatives {
            format!("{}: relative ({})", self.entity, self.role)
        } else {
            format!(
                "{}: {}--{} | {} | {}",
                self.entity, self.start, self.end, self.organization, self.role
            )
        }
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// One ordered rewrite applied to role and organization strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rewrite {
    pub pattern: String,
    pub replacement: String,
}

/// External, editable normalization rules (alias tables vary per country and
/// must not require rebuilds).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizationRules {
    pub version: u32,
    /// canonical name -> aliases. An alias may serve only one canonical.
    #[serde(default)]
    pub alias_table: BTreeMap<String, Vec<String>>,
    /// Applied in order to role and organization strings.
    #[serde(default)]
    pub org_rewrites: Vec<Rewrite>,
    /// Optional ±N-year tolerance on start/end comparison. Off (0) by
    /// default; year-only stamps always match any month within that year.
    #[serde(default)]
    pub year_tolerance: u32,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        NormalizationRules {
            version: RULES_SCHEMA_VERSION,
            alias_table: BTreeMap::new(),
            org_rewrites: Vec::new(),
            year_tolerance: 0,
        }
    }
}

impl NormalizationRules {
    pub fn from_json(json: &str) -> Result<Self, ClaimsError> {
        let rules: NormalizationRules =
            serde_json::from_str(json).map_err(|e| ClaimsError::RulesMalformed(e.to_string()))?;
        if rules.version != RULES_SCHEMA_VERSION {
            return Err(ClaimsError::RulesVersion {
                got: rules.version,
                expected: RULES_SCHEMA_VERSION,
            });
        }
        rules.validate()?;
        Ok(rules)
    }

    pub fn validate(&self) -> Result<(), ClaimsError> {
        let mut seen: BTreeMap<String, &str> = BTreeMap::new();
        for (canonical, aliases) in &self.alias_table {
            for alias in aliases {
                let key = fold(alias);
                if let Some(prev) = seen.insert(key, canonical) {
                    if prev != canonical {
                        return Err(ClaimsError::AmbiguousAlias(alias.clone()));
                    }
                }
            }
        }
        for r in &self.org_rewrites {
            Regex::new(&r.pattern)
                .map_err(|e| ClaimsError::BadRewrite(r.pattern.clone(), e.to_string()))?;
        }
        Ok(())
    }

    /// Canonicalizes an entity name: case-fold, collapse whitespace, resolve
    /// aliases to their canonical form.
    pub fn normalize_entity(&self, name: &str) -> String {
        let folded = fold(name);
        for (canonical, aliases) in &self.alias_table {
            if fold(canonical) == folded || aliases.iter().any(|a| fold(a) == folded) {
                return fold(canonical);
            }
        }
        folded
    }

    /// Canonicalizes a role or organization string through the ordered
    /// rewrite list.
    pub fn normalize_text(&self, text: &str) -> String {
        let mut s = fold(text);
        for r in &self.org_rewrites {
            // validated in validate(); unwrap is safe for loaded rule files
            if let Ok(re) = Regex::new(&r.pattern) {
                s = re.replace_all(&s, r.replacement.as_str()).into_owned();
            }
        }
        fold(&s)
    }

    pub fn normalize_claim(&self, mut c: Claim) -> Claim {
        c.entity = self.normalize_entity(&c.entity);
        c.role = self.normalize_text(&c.role);
        c.organization = self.normalize_text(&c.organization);
        c.normalized = true;
        c
    }

    fn dates_match(&self, a: DateStamp, b: DateStamp) -> bool {
        match (a, b) {
            (DateStamp::Present, DateStamp::Present) | (DateStamp::Na, DateStamp::Na) => true,
            (DateStamp::Date { year: ya, month: ma }, DateStamp::Date { year: yb, month: mb }) => {
                if self.year_tolerance == 0 {
                    // Year-only stamps match any month within that year.
                    ya == yb
                        && match (ma, mb) {
                            (Some(x), Some(y)) => x == y,
                            _ => true,
                        }
                } else {
                    (ya - yb).unsigned_abs() <= self.year_tolerance
                }
            }
            _ => false,
        }
    }
}

/// Case-fold and collapse whitespace.
fn fold(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Equality predicate over normalized claims. Reflexive and symmetric;
/// status does not participate.
pub fn claims_equal(
    a: &Claim,
    b: &Claim,
    rules: &NormalizationRules,
) -> Result<bool, ClaimsError> {
    if !a.normalized || !b.normalized {
        return Err(ClaimsError::Unnormalized);
    }
    Ok(a.section == b.section
        && a.entity == b.entity
        && a.role == b.role
        && a.organization == b.organization
        && rules.dates_match(a.start, b.start)
        && rules.dates_match(a.end, b.end))
}

/// Decomposes a biography into its normalized claim set: one claim per entry,
/// paraphrase duplicates collapsed. Deterministic order (sorted by key).
pub fn extract_claims(bio: &Biography, rules: &NormalizationRules) -> Vec<Claim> {
    let mut claims: Vec<Claim> = Vec::new();
    for entry in &bio.entries {
        let (start, end) = match entry.range {
            Some(r) => (r.start, r.end),
            None => (DateStamp::Na, DateStamp::Na),
        };
        let status = if entry.qualifiers.contains(&Qualifier::Unemployed) {
            ClaimStatus::Unemployed
        } else if entry.qualifiers.contains(&Qualifier::Concurrent) {
            ClaimStatus::Concurrent
        } else if end == DateStamp::Present {
            ClaimStatus::Active
        } else {
            ClaimStatus::Ended
        };
        let claim = rules.normalize_claim(Claim {
            entity: bio.official_name.clone(),
            role: entry.role.clone(),
            organization: entry.organization.clone(),
            start,
            end,
            status,
            section: entry.section,
            normalized: false,
        });
        claims.push(claim);
    }
    claims.sort_by(|a, b| a.key().cmp(&b.key()));
    claims.dedup_by_key(|c| c.key());
    claims
}

/// Exact fraction of pooled biographies containing a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceRate {
    pub count: usize,
    pub pool_size: usize,
}

impl PresenceRate {
    pub fn as_f64(&self) -> f64 {
        self.count as f64 / self.pool_size as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceClaims {
    pub source_id: String,
    pub claims: Vec<Claim>,
}

/// Claims pooled from several candidate biographies for one official, each
/// claim annotated with its source biography. Single-writer during
/// construction, then immutable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimPool {
    pub official_id: crate::biography::OfficialId,
    pub sources: Vec<SourceClaims>,
}

impl ClaimPool {
    pub fn new(official_id: crate::biography::OfficialId) -> Self {
        ClaimPool {
            official_id,
            sources: Vec::new(),
        }
    }

    /// Adds one source biography's claims. Each source contributes each
    /// normalized claim at most once.
    pub fn add_source(
        &mut self,
        source_id: impl Into<String>,
        claims: Vec<Claim>,
        rules: &NormalizationRules,
    ) -> Result<(), ClaimsError> {
        let mut deduped: Vec<Claim> = Vec::new();
        for c in claims {
            if !c.normalized {
                return Err(ClaimsError::Unnormalized);
            }
            let dup = deduped
                .iter()
                .map(|d| claims_equal(d, &c, rules))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .any(|x| x);
            if !dup {
                deduped.push(c);
            }
        }
        self.sources.push(SourceClaims {
            source_id: source_id.into(),
            claims: deduped,
        });
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        self.sources.len()
    }

    /// All distinct claims across sources, deterministic order.
    pub fn distinct_claims(&self, rules: &NormalizationRules) -> Result<Vec<Claim>, ClaimsError> {
        let mut out: Vec<Claim> = Vec::new();
        let mut all: Vec<&Claim> = self.sources.iter().flat_map(|s| &s.claims).collect();
        all.sort_by(|a, b| a.key().cmp(&b.key()));
        for c in all {
            let dup = out
                .iter()
                .map(|d| claims_equal(d, c, rules))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .any(|x| x);
            if !dup {
                out.push(c.clone());
            }
        }
        Ok(out)
    }
}

/// Number of distinct source biographies containing a claim equal to `c`,
/// over the pool size.
pub fn presence_rate(
    c: &Claim,
    pool: &ClaimPool,
    rules: &NormalizationRules,
) -> Result<PresenceRate, ClaimsError> {
    if pool.sources.is_empty() {
        return Err(ClaimsError::EmptyPool);
    }
    let mut count = 0;
    for source in &pool.sources {
        for other in &source.claims {
            if claims_equal(c, other, rules)? {
                count += 1;
                break;
            }
        }
    }
    Ok(PresenceRate {
        count,
        pool_size: pool.pool_size(),
    })
}

/// Serializes claims to JSONL, one claim per line, stable field order.
pub fn claims_to_jsonl(claims: &[Claim]) -> String {
    let mut out = String::new();
    for c in claims {
        out.push_str(&serde_json::to_string(c).expect("claim serializes"));
        out.push('\n');
    }
    out
}

pub fn claims_from_jsonl(text: &str) -> Result<Vec<Claim>, ClaimsError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ClaimsError::RulesMalformed(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biography::{BiographyEntry, DateRange, EntrySection};
    use crate::fixtures;

    fn rules() -> NormalizationRules {
        NormalizationRules::default()
    }

    #[test]
    fn solheim_candidate_yields_26_claims() {
        let bio = fixtures::solheim_candidate_biography();
        let claims = extract_claims(&bio, &rules());
        assert_eq!(claims.len(), 26);
        assert!(claims.iter().all(|c| c.normalized));
    }

    #[test]
    fn byte_identical_entries_collapse() {
        let mut bio = fixtures::solheim_candidate_biography();
        let dup = bio.entries[0].clone();
        bio.entries.push(dup);
        assert_eq!(extract_claims(&bio, &rules()).len(), 26);
    }

    #[test]
    fn rewrite_rules_collapse_paraphrases() {
        let r = NormalizationRules {
            org_rewrites: vec![Rewrite {
                pattern: r"^(city\s+)?mayor$".into(),
                replacement: "mayor".into(),
            }],
            ..Default::default()
        };
        let range = DateRange::new(DateStamp::year(2000), DateStamp::year(2004)).unwrap();
        let mut bio = fixtures::solheim_candidate_biography();
        bio.entries = vec![
            BiographyEntry::dated(EntrySection::Career, range, "Oslo", "Mayor"),
            BiographyEntry::dated(EntrySection::Career, range, "Oslo", "City Mayor"),
        ];
        let claims = extract_claims(&bio, &r);
        assert_eq!(claims.len(), 1);
        assert_eq!(claims[0].role, "mayor");
    }

    #[test]
    fn equality_is_reflexive_and_needs_normalization() {
        let bio = fixtures::solheim_candidate_biography();
        let claims = extract_claims(&bio, &rules());
        for c in &claims {
            assert!(claims_equal(c, c, &rules()).unwrap());
        }
        let mut raw = claims[0].clone();
        raw.normalized = false;
        assert_eq!(
            claims_equal(&raw, &claims[0], &rules()),
            Err(ClaimsError::Unnormalized)
        );
    }

    #[test]
    fn year_tolerance_is_opt_in() {
        let bio = fixtures::solheim_candidate_biography();
        let base = extract_claims(&bio, &rules());
        let mut shifted = base[0].clone();
        if let DateStamp::Date { year, month } = shifted.start {
            shifted.start = DateStamp::Date {
                year: year + 1,
                month,
            };
        }
        assert!(!claims_equal(&base[0], &shifted, &rules()).unwrap());
        let tol = NormalizationRules {
            year_tolerance: 1,
            ..Default::default()
        };
        assert!(claims_equal(&base[0], &shifted, &tol).unwrap());
    }

    #[test]
    fn year_only_matches_any_month() {
        let r = rules();
        assert!(r.dates_match(DateStamp::year(2019), DateStamp::year_month(2019, 7)));
        assert!(!r.dates_match(DateStamp::year(2019), DateStamp::year(2020)));
        assert!(!r.dates_match(DateStamp::Present, DateStamp::year(2019)));
    }

    #[test]
    fn presence_rate_counts_sources_once() {
        let r = rules();
        let bio = fixtures::solheim_candidate_biography();
        let claims = extract_claims(&bio, &r);
        let mut pool = ClaimPool::new(bio.official_id.clone());
        for i in 0..9 {
            let cs = if i < 5 { claims.clone() } else { claims[1..].to_vec() };
            pool.add_source(format!("src-{i}"), cs, &r).unwrap();
        }
        let p = presence_rate(&claims[0], &pool, &r).unwrap();
        assert_eq!((p.count, p.pool_size), (5, 9));

        let mut absent = claims[0].clone();
        absent.organization = "nowhere".into();
        let p = presence_rate(&absent, &pool, &r).unwrap();
        assert_eq!(p.count, 0);

        let empty = ClaimPool::new(bio.official_id.clone());
        assert_eq!(
            presence_rate(&claims[0], &empty, &r),
            Err(ClaimsError::EmptyPool)
        );
    }

    #[test]
    fn normalization_is_idempotent() {
        let r = NormalizationRules {
            alias_table: BTreeMap::from([(
                "Erik Solheim".to_string(),
                vec!["E. Solheim".to_string()],
            )]),
            org_rewrites: vec![Rewrite {
                pattern: r"\bdept\b".into(),
                replacement: "department".into(),
            }],
            ..Default::default()
        };
        for s in ["  E.   Solheim ", "Erik Solheim", "someone else"] {
            let once = r.normalize_entity(s);
            assert_eq!(r.normalize_entity(&once), once);
        }
        for s in ["State Dept  Office", "plain role"] {
            let once = r.normalize_text(s);
            assert_eq!(r.normalize_text(&once), once);
        }
    }

    #[test]
    fn ambiguous_alias_rejected() {
        let r = NormalizationRules {
            alias_table: BTreeMap::from([
                ("A".to_string(), vec!["X".to_string()]),
                ("B".to_string(), vec!["X".to_string()]),
            ]),
            ..Default::default()
        };
        assert_eq!(r.validate(), Err(ClaimsError::AmbiguousAlias("X".into())));
    }

    #[test]
    fn rules_file_version_checked() {
        let json = r#"{"version": 99}"#;
        assert!(matches!(
            NormalizationRules::from_json(json),
            Err(ClaimsError::RulesVersion { got: 99, .. })
        ));
        assert!(NormalizationRules::from_json(r#"{"version": 1}"#).is_ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let bio = fixtures::solheim_candidate_biography();
        let claims = extract_claims(&bio, &rules());
        let text = claims_to_jsonl(&claims);
        assert_eq!(claims_from_jsonl(&text).unwrap(), claims);
    }
}
