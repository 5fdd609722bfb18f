//! Structured biography records and the canonical entry-line format.
//!
//! An entry line looks like `1961.01--1969.12 | Bolteløkka skole | Primary school`:
//! a date range with `--` separator, then organization and role separated by `|`.
//! Relatives lines carry a relation label only (`father`, `spouse`, ...).
//! Biographies serialize either as section-tagged UTF-8 text blocks or as a
//! lossless JSON mirror of the fields.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_YEAR: i32 = 1800;
pub const MAX_YEAR: i32 = 2100;

/// Minimum narrative length (characters) the coder must produce.
pub const NARRATIVE_FLOOR: usize = 600;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BiographyError {
    #[error("malformed range: {0}")]
    MalformedRange(String),
    #[error("expected {expected} '|'-separated fields, got {got}")]
    FieldCount { expected: usize, got: usize },
    #[error("empty field: {0}")]
    EmptyField(&'static str),
    #[error("unknown section tag: {0}")]
    UnknownSection(String),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("biography has no dated entries")]
    NoEntries,
}

/// A point on a biography timeline: a (year, optional month) date or one of
/// the special markers `Present` / `NA`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DateStamp {
    Date { year: i32, month: Option<u8> },
    Present,
    Na,
}

impl DateStamp {
    pub fn year(year: i32) -> Self {
        DateStamp::Date { year, month: None }
    }

    pub fn year_month(year: i32, month: u8) -> Self {
        DateStamp::Date {
            year,
            month: Some(month),
        }
    }

    pub fn is_special(&self) -> bool {
        !matches!(self, DateStamp::Date { .. })
    }

    /// (year, month-defaulting-to-1) ordering key; specials have no key.
    pub fn order_key(&self) -> Option<(i32, u8)> {
        match self {
            DateStamp::Date { year, month } => Some((*year, month.unwrap_or(1))),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), BiographyError> {
        if let DateStamp::Date { year, month } = self {
            if !(MIN_YEAR..=MAX_YEAR).contains(year) {
                return Err(BiographyError::MalformedRange(format!(
                    "year {year} outside {MIN_YEAR}..={MAX_YEAR}"
                )));
            }
            if let Some(m) = month {
                if !(1..=12).contains(m) {
                    return Err(BiographyError::MalformedRange(format!("month {m}")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for DateStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DateStamp::Date { year, month: None } => write!(f, "{year}"),
            DateStamp::Date {
                year,
                month: Some(m),
            } => write!(f, "{year}.{m:02}"),
            DateStamp::Present => write!(f, "Present"),
            DateStamp::Na => write!(f, "NA"),
        }
    }
}

impl FromStr for DateStamp {
    type Err = BiographyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "Present" => return Ok(DateStamp::Present),
            "NA" => return Ok(DateStamp::Na),
            _ => {}
        }
        let bad = || BiographyError::MalformedRange(s.to_string());
        let stamp = match s.split_once('.') {
            Some((y, m)) => {
                if m.len() != 2 {
                    return Err(bad());
                }
                DateStamp::Date {
                    year: y.parse().map_err(|_| bad())?,
                    month: Some(m.parse().map_err(|_| bad())?),
                }
            }
            None => DateStamp::Date {
                year: s.parse().map_err(|_| bad())?,
                month: None,
            },
        };
        stamp.validate()?;
        Ok(stamp)
    }
}

impl Serialize for DateStamp {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DateStamp {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: DateStamp,
    pub end: DateStamp,
}

impl DateRange {
    pub fn new(start: DateStamp, end: DateStamp) -> Result<Self, BiographyError> {
        start.validate()?;
        end.validate()?;
        if let (Some(a), Some(b)) = (start.order_key(), end.order_key()) {
            if a > b {
                return Err(BiographyError::MalformedRange(format!(
                    "start {start} after end {end}"
                )));
            }
        }
        Ok(DateRange { start, end })
    }

    /// Years this range covers, with `Present` resolved to `current_year` and
    /// an `NA` endpoint collapsing onto the other endpoint's year.
    pub fn covered_years(&self, current_year: i32) -> Option<(i32, i32)> {
        let resolve = |s: &DateStamp, other: &DateStamp| match s {
            DateStamp::Date { year, .. } => Some(*year),
            DateStamp::Present => Some(current_year),
            DateStamp::Na => match other {
                DateStamp::Date { year, .. } => Some(*year),
                DateStamp::Present => Some(current_year),
                DateStamp::Na => None,
            },
        };
        let a = resolve(&self.start, &self.end)?;
        let b = resolve(&self.end, &self.start)?;
        Some((a.min(b), a.max(b)))
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}--{}", self.start, self.end)
    }
}

impl FromStr for DateRange {
    fn from_str(s: &str) -> Result<Self, BiographyError> {
        let (a, b) = s
            .split_once("--")
            .ok_or_else(|| BiographyError::MalformedRange(s.to_string()))?;
        DateRange::new(a.parse()?, b.parse()?)
    }

    type Err = BiographyError;
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum EntrySection {
    Education,
    Party,
    Career,
    Relatives,
}

impl EntrySection {
    pub const ALL: [EntrySection; 4] = [
        EntrySection::Education,
        EntrySection::Party,
        EntrySection::Career,
        EntrySection::Relatives,
    ];

    /// Section tag as it appears in the text format.
    pub fn tag(&self) -> &'static str {
        match self {
            EntrySection::Education => "[education]",
            EntrySection::Party => "[party]",
            EntrySection::Career => "[occupation]",
            EntrySection::Relatives => "[relatives]",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self, BiographyError> {
        match tag {
            "[education]" => Ok(EntrySection::Education),
            "[party]" => Ok(EntrySection::Party),
            "[occupation]" => Ok(EntrySection::Career),
            "[relatives]" => Ok(EntrySection::Relatives),
            other => Err(BiographyError::UnknownSection(other.to_string())),
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Qualifier {
    Concurrent,
    Unemployed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EducationLevel {
    BelowHs,
    Hs,
    Bachelor,
    Master,
    Doctorate,
    Diploma,
    Certificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Spouse,
    ExSpouse,
    Grandparent,
    Parent,
    Child,
    Sibling,
}

impl Relation {
    /// Maps a surface relation label ("father", "former spouse", ...) to the
    /// closed relation set.
    pub fn from_label(label: &str) -> Option<Self> {
        let l = label.trim().to_lowercase();
        match l.as_str() {
            "spouse" | "wife" | "husband" => Some(Relation::Spouse),
            "ex-spouse" | "ex spouse" | "former spouse" => Some(Relation::ExSpouse),
            "grandparent" | "grandfather" | "grandmother" => Some(Relation::Grandparent),
            "parent" | "father" | "mother" => Some(Relation::Parent),
            "child" | "son" | "daughter" => Some(Relation::Child),
            "sibling" | "brother" | "sister" => Some(Relation::Sibling),
            _ => None,
        }
    }
}

/// One line of a biography: a date-ranged organization/role record, or a
/// relation label in the relatives section.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BiographyEntry {
    pub section: EntrySection,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub range: Option<DateRange>,
    pub organization: String,
    /// Position title; for relatives entries this is the surface relation
    /// label exactly as written (so rendering round-trips byte-identically).
    pub role: String,
    #[serde(skip_serializing_if = "BTreeSet::is_empty", default)]
    pub qualifiers: BTreeSet<Qualifier>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub education_level: Option<EducationLevel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub relation: Option<Relation>,
    /// Optional free-text note (e.g. a relative's name, kept out of the
    /// canonical record).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl BiographyEntry {
    pub fn dated(
        section: EntrySection,
        range: DateRange,
        organization: impl Into<String>,
        role: impl Into<String>,
    ) -> Self {
        BiographyEntry {
            section,
            range: Some(range),
            organization: organization.into(),
            role: role.into(),
            qualifiers: BTreeSet::new(),
            education_level: None,
            relation: None,
            note: None,
        }
    }

    pub fn relative(relation: Relation, label: impl Into<String>) -> Self {
        BiographyEntry {
            section: EntrySection::Relatives,
            range: None,
            organization: String::new(),
            role: label.into(),
            qualifiers: BTreeSet::new(),
            education_level: None,
            relation: Some(relation),
            note: None,
        }
    }

    pub fn validate(&self) -> Result<(), BiographyError> {
        if self.section == EntrySection::Relatives {
            if self.relation.is_none() {
                return Err(BiographyError::InvalidEntry(
                    "relatives entry without relation".into(),
                ));
            }
            if self.range.is_some() {
                return Err(BiographyError::InvalidEntry(
                    "relatives entry with a date range".into(),
                ));
            }
        } else {
            if self.range.is_none() {
                return Err(BiographyError::InvalidEntry(format!(
                    "{:?} entry without a date range",
                    self.section
                )));
            }
            if self.qualifiers.contains(&Qualifier::Unemployed)
                && (self.section != EntrySection::Career || !self.organization.is_empty())
            {
                return Err(BiographyError::InvalidEntry(
                    "unemployed flag requires an empty-organization career entry".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Parses one canonical entry line under the given section.
pub fn parse_entry_line(
    line: &str,
    section: EntrySection,
) -> Result<BiographyEntry, BiographyError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(BiographyError::EmptyField("line"));
    }
    if section == EntrySection::Relatives {
        let relation = Relation::from_label(line)
            .ok_or_else(|| BiographyError::InvalidEntry(format!("unknown relation: {line}")))?;
        return Ok(BiographyEntry::relative(relation, line));
    }
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(BiographyError::FieldCount {
            expected: 3,
            got: fields.len(),
        });
    }
    let range: DateRange = fields[0].parse()?;
    if fields[1].is_empty() {
        return Err(BiographyError::EmptyField("organization"));
    }
    Ok(BiographyEntry::dated(section, range, fields[1], fields[2]))
}

/// Renders an entry back to its canonical line form; the inverse of
/// [`parse_entry_line`] for line-representable entries.
pub fn render_entry_line(entry: &BiographyEntry) -> String {
    if entry.section == EntrySection::Relatives {
        return entry.role.clone();
    }
    let range = entry
        .range
        .as_ref()
        .map(|r| r.to_string())
        .unwrap_or_default();
    format!("{} | {} | {}", range, entry.organization, entry.role)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OfficialId(pub String);

impl fmt::Display for OfficialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<&str> for OfficialId {
    fn from(s: &str) -> Self {
        OfficialId(s.to_string())
    }
}

/// Where a biography came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Provenance {
    /// Wiki page URL.
    Wiki(String),
    /// Agent run report identifier.
    AgentReport(String),
    /// Human coder label.
    Human(String),
}

/// An ordered career record: section-tagged, date-ranged entries plus a
/// narrative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Biography {
    pub official_id: OfficialId,
    pub official_name: String,
    pub entries: Vec<BiographyEntry>,
    pub narrative: String,
    pub provenance: Provenance,
}

impl Biography {
    /// Renders the section-tagged text block (entries only; the narrative is
    /// appended under a `[narrative]` tag when non-empty).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for section in EntrySection::ALL {
            let lines: Vec<String> = self
                .entries
                .iter()
                .filter(|e| e.section == section)
                .map(render_entry_line)
                .collect();
            if lines.is_empty() {
                continue;
            }
            out.push_str(section.tag());
            out.push('\n');
            for l in &lines {
                out.push_str(l);
                out.push('\n');
            }
        }
        if !self.narrative.is_empty() {
            out.push_str("[narrative]\n");
            out.push_str(&self.narrative);
            if !self.narrative.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }

    /// Entries-only rendering (no narrative), used for the entrywise judge.
    pub fn entries_text(&self) -> String {
        let mut bio = self.clone();
        bio.narrative.clear();
        bio.to_text()
    }

    /// Parses a section-tagged text block.
    pub fn parse_text(
        official_id: OfficialId,
        official_name: &str,
        provenance: Provenance,
        text: &str,
    ) -> Result<Self, BiographyError> {
        let mut entries = Vec::new();
        let mut narrative = String::new();
        let mut section: Option<EntrySection> = None;
        let mut in_narrative = false;
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed == "[narrative]" {
                in_narrative = true;
                section = None;
                continue;
            }
            if trimmed.starts_with('[') && trimmed.ends_with(']') && !in_narrative {
                section = Some(EntrySection::from_tag(trimmed)?);
                continue;
            }
            if in_narrative {
                if !narrative.is_empty() {
                    narrative.push('\n');
                }
                narrative.push_str(line);
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let sec = section.ok_or_else(|| {
                BiographyError::InvalidEntry(format!("entry line before any section tag: {trimmed}"))
            })?;
            entries.push(parse_entry_line(trimmed, sec)?);
        }
        Ok(Biography {
            official_id,
            official_name: official_name.to_string(),
            entries,
            narrative,
            provenance,
        })
    }

    /// Stable chronological sort within each section. `NA`-start entries sort
    /// first within their section; `Present` starts sort last.
    pub fn sort_entries(&mut self) {
        self.entries.sort_by_key(|e| {
            let section_rank = e.section as u8;
            let date_rank = match e.range.map(|r| r.start) {
                None => (0i32, 0u8),
                Some(DateStamp::Na) => (i32::MIN, 0),
                Some(DateStamp::Present) => (i32::MAX, 0),
                Some(d) => d.order_key().unwrap(),
            };
            (section_rank, date_rank)
        });
    }
}

/// Finds uncovered year gaps inside the workforce window
/// `[birth_year + 18, min(birth_year + 65, current_year)]`. Any dated entry
/// (education, party, or career) counts as coverage. Returned gaps are
/// maximal, disjoint, and sorted; `current_year` is injected, never read from
/// the clock.
pub fn detect_gaps(
    bio: &Biography,
    birth_year: i32,
    current_year: i32,
) -> Result<Vec<(DateStamp, DateStamp)>, BiographyError> {
    if !(MIN_YEAR..=MAX_YEAR).contains(&birth_year) {
        return Err(BiographyError::MalformedRange(format!(
            "implausible birth year {birth_year}"
        )));
    }
    let ranges: Vec<(i32, i32)> = bio
        .entries
        .iter()
        .filter_map(|e| e.range.as_ref())
        .filter_map(|r| r.covered_years(current_year))
        .collect();
    if ranges.is_empty() {
        return Err(BiographyError::NoEntries);
    }
    let lo = birth_year + 18;
    let hi = (birth_year + 65).min(current_year);
    let mut gaps = Vec::new();
    let mut run_start: Option<i32> = None;
    for year in lo..=hi {
        let covered = ranges.iter().any(|&(a, b)| a <= year && year <= b);
        match (covered, run_start) {
            (false, None) => run_start = Some(year),
            (true, Some(s)) => {
                gaps.push((DateStamp::year(s), DateStamp::year(year - 1)));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        gaps.push((DateStamp::year(s), DateStamp::year(hi)));
    }
    Ok(gaps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn parse_education_line() {
        let e = parse_entry_line(
            "1961.01--1969.12 | Bolteløkka skole | Primary school",
            EntrySection::Education,
        )
        .unwrap();
        assert_eq!(
            e.range.unwrap(),
            DateRange::new(
                DateStamp::year_month(1961, 1),
                DateStamp::year_month(1969, 12)
            )
            .unwrap()
        );
        assert_eq!(e.organization, "Bolteløkka skole");
        assert_eq!(e.role, "Primary school");
    }

    #[test]
    fn parse_present_and_na_markers() {
        let e = parse_entry_line(
            "2024.11--Present | Global Renewables Alliance | Champion",
            EntrySection::Career,
        )
        .unwrap();
        assert_eq!(e.range.unwrap().end, DateStamp::Present);

        let e = parse_entry_line(
            "NA--1974.01 | Oslo Cathedral School | High school",
            EntrySection::Education,
        )
        .unwrap();
        assert_eq!(e.range.unwrap().start, DateStamp::Na);
    }

    #[test]
    fn render_matches_fixture_form() {
        let e = BiographyEntry::dated(
            EntrySection::Party,
            DateRange::new(
                DateStamp::year_month(1977, 1),
                DateStamp::year_month(1981, 1),
            )
            .unwrap(),
            "Socialist Youth",
            "Leader",
        );
        assert_eq!(
            render_entry_line(&e),
            "1977.01--1981.01 | Socialist Youth | Leader"
        );
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_entry_line("1961.13--1969.12 | X | Y", EntrySection::Education),
            Err(BiographyError::MalformedRange(_))
        ));
        assert!(matches!(
            parse_entry_line("1961.01--1969.12 | X", EntrySection::Education),
            Err(BiographyError::FieldCount { got: 2, .. })
        ));
        assert!(matches!(
            parse_entry_line("1961.01--1969.12 |  | Y", EntrySection::Education),
            Err(BiographyError::EmptyField("organization"))
        ));
        assert!(matches!(
            parse_entry_line("1990--1980 | X | Y", EntrySection::Career),
            Err(BiographyError::MalformedRange(_))
        ));
    }

    #[test]
    fn month_absent_dates_keep_their_form() {
        let e = parse_entry_line(
            "2019--Present | Green Belt and Road Institute | President",
            EntrySection::Career,
        )
        .unwrap();
        assert_eq!(
            render_entry_line(&e),
            "2019--Present | Green Belt and Road Institute | President"
        );
    }

    #[test]
    fn relatives_round_trip_preserves_label() {
        for label in ["father", "mother", "former spouse", "ex-spouse", "child"] {
            let e = parse_entry_line(label, EntrySection::Relatives).unwrap();
            assert_eq!(render_entry_line(&e), label);
        }
        assert!(parse_entry_line("cousin", EntrySection::Relatives).is_err());
    }

    #[test]
    fn fixture_round_trip_identity() {
        // parse∘render over every fixture line (33 CGT + 26 candidate).
        let mut count = 0;
        for text in [fixtures::SOLHEIM_CGT_TEXT, fixtures::SOLHEIM_CANDIDATE_TEXT] {
            let mut section = None;
            for line in text.lines() {
                if line.starts_with('[') {
                    section = Some(EntrySection::from_tag(line).unwrap());
                    continue;
                }
                let e = parse_entry_line(line, section.unwrap()).unwrap();
                assert_eq!(render_entry_line(&e), line);
                count += 1;
            }
        }
        assert_eq!(count, 59);
    }

    #[test]
    fn text_block_round_trip() {
        let bio = fixtures::solheim_cgt_biography();
        assert_eq!(bio.entries.len(), 33);
        assert_eq!(bio.to_text(), fixtures::SOLHEIM_CGT_TEXT);
        let json = serde_json::to_string(&bio).unwrap();
        let back: Biography = serde_json::from_str(&json).unwrap();
        assert_eq!(back, bio);
    }

    #[test]
    fn solheim_candidate_has_no_gaps() {
        let bio = fixtures::solheim_candidate_biography();
        let gaps = detect_gaps(&bio, 1955, 2025).unwrap();
        assert!(gaps.is_empty(), "unexpected gaps: {gaps:?}");
    }

    #[test]
    fn single_entry_gaps() {
        let mut bio = fixtures::solheim_candidate_biography();
        bio.entries = vec![BiographyEntry::dated(
            EntrySection::Career,
            DateRange::new(DateStamp::year(1980), DateStamp::year(1990)).unwrap(),
            "Org",
            "Role",
        )];
        // Workforce window pinned at current year 2025: [1973, 2020].
        let gaps = detect_gaps(&bio, 1955, 2025).unwrap();
        assert_eq!(
            gaps,
            vec![
                (DateStamp::year(1973), DateStamp::year(1979)),
                (DateStamp::year(1991), DateStamp::year(2020)),
            ]
        );
    }

    #[test]
    fn exact_cover_yields_no_gaps() {
        let mut bio = fixtures::solheim_candidate_biography();
        bio.entries = vec![BiographyEntry::dated(
            EntrySection::Career,
            DateRange::new(DateStamp::year(1973), DateStamp::year(2020)).unwrap(),
            "Org",
            "Role",
        )];
        assert!(detect_gaps(&bio, 1955, 2025).unwrap().is_empty());
    }

    #[test]
    fn no_dated_entries_is_an_error() {
        let mut bio = fixtures::solheim_candidate_biography();
        bio.entries.retain(|e| e.section == EntrySection::Relatives);
        assert_eq!(detect_gaps(&bio, 1955, 2025), Err(BiographyError::NoEntries));
    }

    #[test]
    fn sort_is_idempotent_and_na_first() {
        let mut bio = fixtures::solheim_cgt_biography();
        bio.sort_entries();
        let once = bio.clone();
        bio.sort_entries();
        assert_eq!(bio, once);
        // NA-start education entry ordered first within its section.
        let first_edu = bio
            .entries
            .iter()
            .find(|e| e.section == EntrySection::Education)
            .unwrap();
        assert_eq!(first_edu.range.unwrap().start, DateStamp::Na);
    }
}
