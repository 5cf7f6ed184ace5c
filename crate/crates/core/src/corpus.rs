//! Report ingestion: heading-based section splitting and JSONL corpus loading.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::split_sentences;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("report {id}: no non-whitespace content")]
    EmptyReport { id: String },
    #[error("report {id}: neither findings nor impression could be populated")]
    NoUsableSection { id: String },
    #[error("report {id}: section {section} is missing")]
    SectionMissing { id: String, section: SectionMode },
    #[error("report id must be non-empty")]
    EmptyId,
    #[error("{path}: every record was invalid ({skipped} skipped)")]
    AllRecordsInvalid { path: String, skipped: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where a recognized heading sends the text that follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionTarget {
    Background,
    Findings,
    Impression,
    Discard,
}

/// Uppercase heading words (without the colon) and their targets.
#[derive(Debug, Clone)]
pub struct HeadingLexicon {
    headings: Vec<(String, SectionTarget)>,
}

impl Default for HeadingLexicon {
    fn default() -> Self {
        use SectionTarget::*;
        HeadingLexicon::new([
            ("FINDINGS", Findings),
            ("IMPRESSION", Impression),
            ("INDICATION", Background),
            ("HISTORY", Background),
            ("COMPARISON", Discard),
            ("TECHNIQUE", Discard),
        ])
    }
}

impl HeadingLexicon {
    pub fn new<I, S>(headings: I) -> Self
    where
        I: IntoIterator<Item = (S, SectionTarget)>,
        S: Into<String>,
    {
        let mut headings: Vec<(String, SectionTarget)> = headings
            .into_iter()
            .map(|(h, t)| (h.into().to_uppercase(), t))
            .collect();
        // Longest first so "CLINICAL HISTORY" would win over "HISTORY".
        headings.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        HeadingLexicon { headings }
    }

    pub fn headings(&self) -> impl Iterator<Item = (&str, SectionTarget)> {
        self.headings.iter().map(|(h, t)| (h.as_str(), *t))
    }

    /// Recognized heading starting at byte `pos` of `text`, as (heading length
    /// including the colon, target).
    fn match_at(&self, text: &str, pos: usize) -> Option<(usize, SectionTarget)> {
        if pos > 0 {
            let prev = text[..pos].chars().next_back()?;
            if prev.is_alphanumeric() || prev == '_' {
                return None;
            }
        }
        let rest = &text[pos..];
        self.headings.iter().find_map(|(heading, target)| {
            let after = rest.strip_prefix(heading.as_str())?;
            after
                .starts_with(':')
                .then_some((heading.len() + 1, *target))
        })
    }

    /// All (start, end, target) heading occurrences in order.
    fn find_all(&self, text: &str) -> Vec<(usize, usize, SectionTarget)> {
        let mut found = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            if let Some((len, target)) = self.match_at(text, pos) {
                found.push((pos, pos + len, target));
                pos += len;
            } else {
                pos += text[pos..].chars().next().map_or(1, char::len_utf8);
            }
        }
        found
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub findings: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impression: Option<String>,
}

impl Report {
    /// Builds a report from already split sections, trimming each and
    /// treating blank sections as absent.
    pub fn from_sections(
        id: &str,
        background: Option<&str>,
        findings: Option<&str>,
        impression: Option<&str>,
    ) -> Result<Report, CorpusError> {
        if id.trim().is_empty() {
            return Err(CorpusError::EmptyId);
        }
        let clean = |s: Option<&str>| {
            s.map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let report = Report {
            id: id.to_string(),
            background: clean(background),
            findings: clean(findings),
            impression: clean(impression),
        };
        if report.findings.is_none() && report.impression.is_none() {
            let blank = report.background.is_none();
            return Err(if blank {
                CorpusError::EmptyReport { id: report.id }
            } else {
                CorpusError::NoUsableSection { id: report.id }
            });
        }
        Ok(report)
    }

    /// Re-serializes the sections with their canonical headings.
    pub fn to_text(&self) -> String {
        let mut parts = Vec::new();
        if let Some(b) = &self.background {
            parts.push(format!("INDICATION: {b}"));
        }
        if let Some(f) = &self.findings {
            parts.push(format!("FINDINGS: {f}"));
        }
        if let Some(i) = &self.impression {
            parts.push(format!("IMPRESSION: {i}"));
        }
        parts.join(" ")
    }
}

pub fn parse_report(raw: &str, id: &str) -> Result<Report, CorpusError> {
    parse_report_with(raw, id, &HeadingLexicon::default())
}

/// Splits `raw` at recognized headings. Text before the first heading goes to
/// findings; repeated sections are joined with a space.
pub fn parse_report_with(
    raw: &str,
    id: &str,
    lexicon: &HeadingLexicon,
) -> Result<Report, CorpusError> {
    if id.trim().is_empty() {
        return Err(CorpusError::EmptyId);
    }
    if raw.trim().is_empty() {
        return Err(CorpusError::EmptyReport { id: id.to_string() });
    }

    let mut background = Vec::new();
    let mut findings = Vec::new();
    let mut impression = Vec::new();
    let mut push = |target: SectionTarget, text: &str| {
        let text = text.trim();
        if text.is_empty() {
            return;
        }
        match target {
            SectionTarget::Background => background.push(text.to_string()),
            SectionTarget::Findings => findings.push(text.to_string()),
            SectionTarget::Impression => impression.push(text.to_string()),
            SectionTarget::Discard => {}
        }
    };

    let headings = lexicon.find_all(raw);
    let preamble_end = headings.first().map_or(raw.len(), |h| h.0);
    push(SectionTarget::Findings, &raw[..preamble_end]);
    for (i, &(_, body_start, target)) in headings.iter().enumerate() {
        let body_end = headings.get(i + 1).map_or(raw.len(), |h| h.0);
        push(target, &raw[body_start..body_end]);
    }

    let join = |parts: Vec<String>| (!parts.is_empty()).then(|| parts.join(" "));
    let report = Report {
        id: id.to_string(),
        background: join(background),
        findings: join(findings),
        impression: join(impression),
    };
    if report.findings.is_none() && report.impression.is_none() {
        return Err(CorpusError::NoUsableSection { id: id.to_string() });
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionMode {
    #[default]
    Findings,
    Impression,
    ImpressionFallback,
}

impl fmt::Display for SectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SectionMode::Findings => "findings",
            SectionMode::Impression => "impression",
            SectionMode::ImpressionFallback => "impression_fallback",
        })
    }
}

impl FromStr for SectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "findings" => Ok(SectionMode::Findings),
            "impression" => Ok(SectionMode::Impression),
            "impression_fallback" => Ok(SectionMode::ImpressionFallback),
            other => Err(format!(
                "unknown section mode {other:?} (expected findings, impression or impression_fallback)"
            )),
        }
    }
}

/// The text a downstream stage should see for `mode`. The fallback mode uses
/// the first findings sentence when there is no impression.
pub fn effective_text(report: &Report, mode: SectionMode) -> Result<String, CorpusError> {
    let missing = || CorpusError::SectionMissing {
        id: report.id.clone(),
        section: mode,
    };
    match mode {
        SectionMode::Findings => report.findings.clone().ok_or_else(missing),
        SectionMode::Impression => report.impression.clone().ok_or_else(missing),
        SectionMode::ImpressionFallback => match &report.impression {
            Some(imp) => Ok(imp.clone()),
            None => report
                .findings
                .as_deref()
                .and_then(|f| split_sentences(f).into_iter().next())
                .ok_or_else(missing),
        },
    }
}

/// A line that could not be turned into a report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub reports: Vec<Report>,
    pub source_path: String,
    pub skipped: Vec<SkippedLine>,
}

impl Corpus {
    pub fn new(reports: Vec<Report>) -> Corpus {
        Corpus {
            reports,
            source_path: String::new(),
            skipped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Report> {
        self.reports.iter()
    }

    /// Writes one pre-split JSON object per report.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for report in &self.reports {
            serde_json::to_writer(&mut out, report)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: Option<String>,
    background: Option<String>,
    findings: Option<String>,
    impression: Option<String>,
}

fn parse_line(line: &str) -> Result<Report, String> {
    let record: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let report = match record.text {
        Some(text) => parse_report(&text, &record.id),
        None => Report::from_sections(
            &record.id,
            record.background.as_deref(),
            record.findings.as_deref(),
            record.impression.as_deref(),
        ),
    };
    report.map_err(|e| e.to_string())
}

/// Reads line-delimited JSON records in either `{"id","text"}` or pre-split
/// form. Bad lines and duplicate ids are skipped and recorded; blank lines are
/// ignored.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    read_corpus(BufReader::new(file), path).map_err(|e| match e {
        ReadError::Io(source) => io_err(source),
        ReadError::Corpus(e) => e,
    })
}

enum ReadError {
    Io(std::io::Error),
    Corpus(CorpusError),
}

fn read_corpus<R: BufRead>(reader: R, path: &Path) -> Result<Corpus, ReadError> {
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(ReadError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = index + 1;
        match parse_line(&line) {
            Ok(report) if !seen.insert(report.id.clone()) => skipped.push(SkippedLine {
                line: line_no,
                reason: format!("duplicate id {}", report.id),
            }),
            Ok(report) => reports.push(report),
            Err(reason) => skipped.push(SkippedLine {
                line: line_no,
                reason,
            }),
        }
    }
    if reports.is_empty() {
        return Err(ReadError::Corpus(CorpusError::AllRecordsInvalid {
            path: path.display().to_string(),
            skipped: skipped.len(),
        }));
    }
    Ok(Corpus {
        reports,
        source_path: path.display().to_string(),
        skipped,
    })
}

/// Parses a corpus from an in-memory JSONL string.
pub fn corpus_from_jsonl(text: &str) -> Result<Corpus, CorpusError> {
    read_corpus(text.as_bytes(), &PathBuf::from("<memory>")).map_err(|e| match e {
        ReadError::Io(source) => CorpusError::Io {
            path: "<memory>".into(),
            source,
        },
        ReadError::Corpus(e) => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_heading_split() {
        let r = parse_report("FINDINGS: Clear lungs. IMPRESSION: No acute process.", "r1").unwrap();
        assert_eq!(r.findings.as_deref(), Some("Clear lungs."));
        assert_eq!(r.impression.as_deref(), Some("No acute process."));
        assert_eq!(r.background, None);
    }

    #[test]
    fn headingless_text_goes_to_findings() {
        let r = parse_report("Mild pulmonary edema.", "r2").unwrap();
        assert_eq!(r.findings.as_deref(), Some("Mild pulmonary edema."));
        assert_eq!(r.impression, None);
    }

    #[test]
    fn indication_goes_to_background() {
        let r = parse_report("INDICATION: cough. IMPRESSION: Pneumonia.", "r3").unwrap();
        assert_eq!(r.background.as_deref(), Some("cough."));
        assert_eq!(r.impression.as_deref(), Some("Pneumonia."));
        assert_eq!(r.findings, None);
    }

    #[test]
    fn discarded_and_repeated_headings() {
        let raw = "EXAMINATION: chest. HISTORY: fever\nCOMPARISON: 2019.\nFINDINGS: A.\nTECHNIQUE: AP.\nFINDINGS: B.";
        let r = parse_report(raw, "x").unwrap();
        // Unknown headings are plain text and land in the preamble.
        assert_eq!(r.findings.as_deref(), Some("EXAMINATION: chest. A. B."));
        assert_eq!(r.background.as_deref(), Some("fever"));
    }

    #[test]
    fn heading_must_start_a_word() {
        let r = parse_report("PREFINDINGS: x", "x").unwrap();
        assert_eq!(r.findings.as_deref(), Some("PREFINDINGS: x"));
        // Lowercase words are not headings.
        let r = parse_report("findings: y", "y").unwrap();
        assert_eq!(r.findings.as_deref(), Some("findings: y"));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_report("  \n ", "e"),
            Err(CorpusError::EmptyReport { .. })
        ));
        assert!(matches!(
            parse_report("HISTORY: cough. COMPARISON: none.", "e"),
            Err(CorpusError::NoUsableSection { .. })
        ));
        assert!(matches!(
            parse_report("FINDINGS:   IMPRESSION: ", "e"),
            Err(CorpusError::NoUsableSection { .. })
        ));
        assert!(matches!(parse_report("x", ""), Err(CorpusError::EmptyId)));
    }

    #[test]
    fn effective_text_modes() {
        let both = Report::from_sections("a", None, Some("A. B."), Some("C.")).unwrap();
        assert_eq!(
            effective_text(&both, SectionMode::Impression).unwrap(),
            "C."
        );
        let findings_only = Report::from_sections("b", None, Some("A. B."), None).unwrap();
        assert_eq!(
            effective_text(&findings_only, SectionMode::ImpressionFallback).unwrap(),
            "A."
        );
        assert!(matches!(
            effective_text(&findings_only, SectionMode::Impression),
            Err(CorpusError::SectionMissing { .. })
        ));
        let impression_only = Report::from_sections("c", None, None, Some("C.")).unwrap();
        assert!(matches!(
            effective_text(&impression_only, SectionMode::Findings),
            Err(CorpusError::SectionMissing { .. })
        ));
    }

    #[test]
    fn load_tolerates_bad_lines() {
        let text = "{\"id\":\"a\",\"text\":\"Clear.\"}\nnot json\n\n{\"id\":\"b\",\"findings\":\"x\",\"impression\":\"y\"}\n{\"id\":\"a\",\"text\":\"dup\"}\n";
        let corpus = corpus_from_jsonl(text).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.skipped.len(), 2);
        assert_eq!(corpus.skipped[0].line, 2);
        assert!(corpus.skipped[1].reason.contains("duplicate"));
    }

    #[test]
    fn load_empty_is_all_invalid() {
        assert!(matches!(
            corpus_from_jsonl(""),
            Err(CorpusError::AllRecordsInvalid { skipped: 0, .. })
        ));
    }

    #[test]
    fn section_mode_round_trips_through_str() {
        for mode in [
            SectionMode::Findings,
            SectionMode::Impression,
            SectionMode::ImpressionFallback,
        ] {
            assert_eq!(mode.to_string().parse::<SectionMode>().unwrap(), mode);
        }
        assert!("summary".parse::<SectionMode>().is_err());
    }

    fn section_text() -> impl Strategy<Value = Option<String>> {
        prop::option::of("[a-z]{1,8}( [a-zA-Z]{1,8}){0,5}\\.")
    }

    proptest! {
        #[test]
        fn parse_is_idempotent(bg in section_text(), f in section_text(), imp in section_text()) {
            prop_assume!(f.is_some() || imp.is_some());
            let report = Report::from_sections("p", bg.as_deref(), f.as_deref(), imp.as_deref()).unwrap();
            let reparsed = parse_report(&report.to_text(), "p").unwrap();
            prop_assert_eq!(&reparsed, &report);
            let again = parse_report(&reparsed.to_text(), "p").unwrap();
            prop_assert_eq!(again, reparsed);
        }

        #[test]
        fn sections_never_contain_headings(words in prop::collection::vec(
            prop_oneof!["[a-z]{1,6}", Just("FINDINGS:".to_string()), Just("IMPRESSION:".to_string()),
                        Just("HISTORY:".to_string()), Just("TECHNIQUE:".to_string()), Just("X.".to_string())],
            1..20)) {
            let raw = words.join(" ");
            if let Ok(report) = parse_report(&raw, "h") {
                let lexicon = HeadingLexicon::default();
                for section in [&report.background, &report.findings, &report.impression].into_iter().flatten() {
                    prop_assert!(lexicon.find_all(section).is_empty());
                }
            }
        }

        #[test]
        fn jsonl_round_trip(reports in prop::collection::vec((section_text(), section_text(), section_text()), 1..6)) {
            let reports: Vec<Report> = reports
                .into_iter()
                .enumerate()
                .filter_map(|(i, (b, f, m))| Report::from_sections(&format!("id{i}"), b.as_deref(), f.as_deref(), m.as_deref()).ok())
                .collect();
            prop_assume!(!reports.is_empty());
            let corpus = Corpus::new(reports);
            let mut buf = Vec::new();
            corpus.write_jsonl(&mut buf).unwrap();
            let loaded = corpus_from_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(loaded.reports, corpus.reports);
        }
    }
}
