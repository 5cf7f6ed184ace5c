//! Rule-based observation labeler.
//!
//! Detects the 14 coarse categories with phrase lexicons, decides
//! Positive/Negative/Uncertain from cue phrases in a short window before each
//! mention, and extracts `"<modifier> <disease>"` fine-grained labels from
//! positive mentions.

mod lexicon;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{effective_text, Corpus, CorpusError, Report, SectionMode};
use crate::textproc::{split_sentences, tokenize, TokenSeq};

pub use lexicon::{
    CategorySet, CueLexicon, LexiconError, Lexicons, LEXICON_DIR_ENV, NO_FINDING, NUM_CATEGORIES,
    SUPPORT_DEVICES,
};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary threshold must be at least 1")]
    InvalidThreshold,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum LabelState {
    Positive,
    Negative,
    Uncertain,
    #[default]
    Absent,
}

impl LabelState {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelState::Positive => "positive",
            LabelState::Negative => "negative",
            LabelState::Uncertain => "uncertain",
            LabelState::Absent => "absent",
        }
    }

    /// Aggregation rank: Positive > Uncertain > Negative > Absent.
    fn precedence(self) -> u8 {
        match self {
            LabelState::Positive => 3,
            LabelState::Uncertain => 2,
            LabelState::Negative => 1,
            LabelState::Absent => 0,
        }
    }
}

impl fmt::Display for LabelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub report_id: String,
    pub states: [LabelState; NUM_CATEGORIES],
}

impl LabelVector {
    pub fn absent(report_id: impl Into<String>) -> LabelVector {
        LabelVector {
            report_id: report_id.into(),
            states: [LabelState::Absent; NUM_CATEGORIES],
        }
    }

    pub fn state(&self, category: usize) -> LabelState {
        self.states[category]
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == LabelState::Positive)
            .map(|(i, _)| i)
    }
}

/// A lexicon phrase found in a sentence; `start..end` indexes its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mention {
    pub category: usize,
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FineLabel {
    pub surface: String,
    pub category: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelerConfig {
    /// Tokens before a mention searched for negation/uncertainty cues.
    pub cue_window: usize,
    /// Tokens before a positive mention searched for modifiers.
    pub modifier_window: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            cue_window: 6,
            modifier_window: 3,
        }
    }
}

/// Per-sentence detail behind a [`LabelVector`].
#[derive(Debug, Clone)]
pub struct Annotation {
    pub labels: LabelVector,
    pub sentences: Vec<TokenSeq>,
    pub mentions: Vec<(Mention, LabelState)>,
}

#[derive(Debug, Clone)]
pub struct Labeler {
    lexicons: Lexicons,
    config: LabelerConfig,
    support_devices: Option<usize>,
}

impl Default for Labeler {
    fn default() -> Self {
        Labeler::new(Lexicons::builtin(), LabelerConfig::default())
    }
}

impl Labeler {
    pub fn new(lexicons: Lexicons, config: LabelerConfig) -> Labeler {
        let support_devices = lexicons.categories.index_of(SUPPORT_DEVICES);
        Labeler {
            lexicons,
            config,
            support_devices,
        }
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    pub fn categories(&self) -> &CategorySet {
        &self.lexicons.categories
    }

    pub fn config(&self) -> LabelerConfig {
        self.config
    }

    /// Non-overlapping phrase matches, scanning left to right and taking the
    /// longest phrase at each position.
    pub fn find_mentions(&self, sentence: &TokenSeq, sentence_index: usize) -> Vec<Mention> {
        let tokens = sentence.as_slice();
        let mut mentions = Vec::new();
        let mut pos = 0;
        while pos < tokens.len() {
            match self.lexicons.categories.longest_match_at(tokens, pos) {
                Some((end, category)) => {
                    mentions.push(Mention {
                        category,
                        sentence: sentence_index,
                        start: pos,
                        end,
                    });
                    pos = end;
                }
                None => pos += 1,
            }
        }
        mentions
    }

    /// Negation beats uncertainty; both look only at the cue window before
    /// the mention within its sentence.
    pub fn classify_mention(&self, sentence: &TokenSeq, mention: &Mention) -> LabelState {
        let tokens = sentence.as_slice();
        let window = &tokens[mention.start.saturating_sub(self.config.cue_window)..mention.start];
        if self.lexicons.negation.occurs_in(window) {
            return LabelState::Negative;
        }
        let cannot_exclude = mention.start >= 2
            && tokens[mention.start - 2] == "cannot"
            && tokens[mention.start - 1] == "exclude";
        if cannot_exclude || self.lexicons.uncertainty.occurs_in(window) {
            return LabelState::Uncertain;
        }
        LabelState::Positive
    }

    /// "No Finding" is positive iff no category other than itself and
    /// support devices is Positive or Uncertain.
    fn blocks_no_finding(&self, category: usize) -> bool {
        category != 0 && Some(category) != self.support_devices
    }

    pub fn annotate(&self, report_id: &str, text: &str) -> Annotation {
        let mut labels = LabelVector::absent(report_id);
        let mut sentences = Vec::new();
        let mut mentions = Vec::new();
        for (index, sentence) in split_sentences(text).iter().enumerate() {
            let tokens = tokenize(sentence);
            for mention in self.find_mentions(&tokens, index) {
                let state = self.classify_mention(&tokens, &mention);
                let slot = &mut labels.states[mention.category];
                if state.precedence() > slot.precedence() {
                    *slot = state;
                }
                mentions.push((mention, state));
            }
            sentences.push(tokens);
        }
        let blocked = labels.states.iter().enumerate().any(|(c, s)| {
            self.blocks_no_finding(c) && matches!(s, LabelState::Positive | LabelState::Uncertain)
        });
        labels.states[0] = if blocked {
            LabelState::Absent
        } else {
            LabelState::Positive
        };
        Annotation {
            labels,
            sentences,
            mentions,
        }
    }

    pub fn label_text(&self, report_id: &str, text: &str) -> LabelVector {
        self.annotate(report_id, text).labels
    }

    pub fn label_report(
        &self,
        report: &Report,
        mode: SectionMode,
    ) -> Result<LabelVector, LabelError> {
        let text = effective_text(report, mode)?;
        Ok(self.label_text(&report.id, &text))
    }

    /// Fine labels for one annotated text. Only mentions that are Positive
    /// both individually and in the aggregated vector contribute.
    pub fn fine_labels(&self, annotation: &Annotation) -> BTreeSet<FineLabel> {
        let mut out = BTreeSet::new();
        for (mention, state) in &annotation.mentions {
            if *state != LabelState::Positive
                || annotation.labels.states[mention.category] != LabelState::Positive
            {
                continue;
            }
            let tokens = annotation.sentences[mention.sentence].as_slice();
            let disease = tokens[mention.start..mention.end].join(" ");
            let lowest = mention.start.saturating_sub(self.config.modifier_window);
            for token in tokens[lowest..mention.start].iter().rev() {
                if self.lexicons.negation.contains_token(token)
                    || self.lexicons.uncertainty.contains_token(token)
                {
                    break;
                }
                if self.lexicons.modifiers.contains(token) {
                    out.insert(FineLabel {
                        surface: format!("{token} {disease}"),
                        category: mention.category,
                    });
                }
            }
            out.insert(FineLabel {
                surface: disease,
                category: mention.category,
            });
        }
        out
    }

    /// Fine labels of `report`'s `mode` section, gated on `labels`.
    pub fn extract_fine_grained(
        &self,
        report: &Report,
        mode: SectionMode,
        labels: &LabelVector,
    ) -> Result<BTreeSet<FineLabel>, LabelError> {
        let text = effective_text(report, mode)?;
        let mut annotation = self.annotate(&report.id, &text);
        annotation.labels.states = labels.states;
        Ok(self.fine_labels(&annotation))
    }

    pub fn label_and_extract(
        &self,
        report: &Report,
        mode: SectionMode,
    ) -> Result<(LabelVector, BTreeSet<FineLabel>), LabelError> {
        let text = effective_text(report, mode)?;
        let annotation = self.annotate(&report.id, &text);
        let fine = self.fine_labels(&annotation);
        Ok((annotation.labels, fine))
    }

    /// Per-report fine label occurrences over the findings sections. Reports
    /// without findings contribute nothing.
    pub fn count_fine_labels(&self, corpus: &Corpus) -> BTreeMap<FineLabel, usize> {
        let mut counts = BTreeMap::new();
        for report in corpus.iter() {
            let Some(findings) = &report.findings else {
                continue;
            };
            let annotation = self.annotate(&report.id, findings);
            for label in self.fine_labels(&annotation) {
                *counts.entry(label).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn build_vocab(
        &self,
        corpus: &Corpus,
        threshold: usize,
    ) -> Result<FineGrainedVocab, LabelError> {
        if threshold == 0 {
            return Err(LabelError::InvalidThreshold);
        }
        if corpus.is_empty() {
            return Err(LabelError::EmptyCorpus);
        }
        Ok(FineGrainedVocab::from_counts(
            self.count_fine_labels(corpus),
            threshold,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub label: FineLabel,
    pub count: usize,
}

/// Fine labels seen at least `threshold` times, ordered by descending count
/// then surface so that entry positions are stable class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FineGrainedVocab {
    pub entries: Vec<VocabEntry>,
    pub threshold: usize,
}

impl FineGrainedVocab {
    pub fn from_counts(counts: BTreeMap<FineLabel, usize>, threshold: usize) -> FineGrainedVocab {
        let mut entries: Vec<VocabEntry> = counts
            .into_iter()
            .filter(|(_, count)| *count >= threshold)
            .map(|(label, count)| VocabEntry { label, count })
            .collect();
        entries.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| a.label.surface.cmp(&b.label.surface))
                .then_with(|| a.label.category.cmp(&b.label.category))
        });
        FineGrainedVocab { entries, threshold }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<&VocabEntry> {
        self.entries.iter().find(|e| e.label.surface == surface)
    }

    /// TSV with a `surface\tcategory\tcount` header.
    pub fn write_tsv<W: Write>(&self, categories: &CategorySet, mut out: W) -> std::io::Result<()> {
        writeln!(out, "surface\tcategory\tcount")?;
        for entry in &self.entries {
            writeln!(
                out,
                "{}\t{}\t{}",
                entry.label.surface,
                categories.name(entry.label.category),
                entry.count
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Report;

    fn labeler() -> Labeler {
        Labeler::default()
    }

    fn cat(name: &str) -> usize {
        labeler().categories().index_of(name).unwrap()
    }

    fn fine(text: &str) -> Vec<String> {
        let l = labeler();
        let a = l.annotate("t", text);
        l.fine_labels(&a).into_iter().map(|f| f.surface).collect()
    }

    #[test]
    fn mention_examples() {
        let l = labeler();
        let m = l.find_mentions(&TokenSeq::new(["no", "pneumothorax"]), 0);
        assert_eq!(
            m,
            vec![Mention {
                category: cat("Pneumothorax"),
                sentence: 0,
                start: 1,
                end: 2
            }]
        );
        let m = l.find_mentions(&TokenSeq::new(["small", "left", "pleural", "effusion"]), 0);
        assert_eq!(
            m,
            vec![Mention {
                category: cat("Pleural Effusion"),
                sentence: 0,
                start: 2,
                end: 4
            }]
        );
        assert!(l
            .find_mentions(&TokenSeq::new(["clear", "lungs"]), 0)
            .is_empty());
    }

    #[test]
    fn longest_match_wins_over_prefix() {
        let l = labeler();
        let m = l.find_mentions(
            &tokenize("Pulmonary vascular congestion and pulmonary edema"),
            0,
        );
        let spans: Vec<_> = m.iter().map(|m| (m.start, m.end)).collect();
        assert_eq!(spans, vec![(0, 3), (4, 6)]);
    }

    fn classify(text: &str) -> LabelState {
        let l = labeler();
        let tokens = tokenize(text);
        let mentions = l.find_mentions(&tokens, 0);
        assert_eq!(mentions.len(), 1, "{text}");
        l.classify_mention(&tokens, &mentions[0])
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify("no pneumothorax"), LabelState::Negative);
        assert_eq!(classify("possible pneumonia"), LabelState::Uncertain);
        assert_eq!(classify("mild pulmonary edema"), LabelState::Positive);
    }

    #[test]
    fn cue_window_is_six_tokens() {
        // "no" sits exactly six tokens before the mention.
        assert_eq!(classify("no a b c d e pneumothorax"), LabelState::Negative);
        assert_eq!(
            classify("no a b c d e f pneumothorax"),
            LabelState::Positive
        );
        assert_eq!(classify("cannot rule out pneumonia"), LabelState::Uncertain);
        assert_eq!(classify("cannot exclude pneumonia"), LabelState::Uncertain);
        // Negation wins when both fire.
        assert_eq!(classify("no possible pneumonia"), LabelState::Negative);
    }

    #[test]
    fn label_report_examples() {
        let l = labeler();
        let lv = l.label_text("a", "No pneumothorax. Mild pulmonary edema.");
        assert_eq!(lv.states[cat("Pneumothorax")], LabelState::Negative);
        assert_eq!(lv.states[cat("Edema")], LabelState::Positive);
        assert_eq!(lv.states[0], LabelState::Absent);

        let lv = l.label_text("b", "Clear lungs.");
        assert!(lv.states[1..].iter().all(|s| *s == LabelState::Absent));
        assert_eq!(lv.states[0], LabelState::Positive);

        let lv = l.label_text("c", "Possible pneumonia.");
        assert_eq!(lv.states[cat("Pneumonia")], LabelState::Uncertain);
        assert_ne!(lv.states[0], LabelState::Positive);
    }

    #[test]
    fn aggregation_precedence() {
        let l = labeler();
        let lv = l.label_text("p", "No effusion. Possible effusion. Small effusion.");
        assert_eq!(lv.states[cat("Pleural Effusion")], LabelState::Positive);
        let lv = l.label_text("u", "No effusion. Possible effusion.");
        assert_eq!(lv.states[cat("Pleural Effusion")], LabelState::Uncertain);
    }

    #[test]
    fn support_devices_do_not_block_no_finding() {
        let lv = labeler().label_text("d", "Endotracheal tube in place. Lungs are clear.");
        assert_eq!(lv.states[cat("Support Devices")], LabelState::Positive);
        assert_eq!(lv.states[0], LabelState::Positive);
    }

    #[test]
    fn fine_grained_examples() {
        assert_eq!(fine("mild pneumonia"), vec!["mild pneumonia", "pneumonia"]);
        assert_eq!(
            fine("moderate cardiomegaly"),
            vec!["cardiomegaly", "moderate cardiomegaly"]
        );
        assert!(fine("no pneumothorax").is_empty());
        assert_eq!(
            fine("small left pleural effusion"),
            vec![
                "left pleural effusion",
                "pleural effusion",
                "small pleural effusion"
            ]
        );
    }

    #[test]
    fn modifier_window_stops_at_cues() {
        // "possible" is a cue token; "mild" before it is out of reach.
        assert!(fine("mild possible pneumonia").is_empty());
        // Four tokens back is outside the three-token window.
        assert_eq!(fine("mild a b c pneumonia"), vec!["pneumonia"]);
    }

    #[test]
    fn extract_uses_supplied_vector() {
        let l = labeler();
        let report = Report::from_sections("r", None, Some("Mild pneumonia."), None).unwrap();
        let mut lv = l.label_report(&report, SectionMode::Findings).unwrap();
        assert_eq!(
            l.extract_fine_grained(&report, SectionMode::Findings, &lv)
                .unwrap()
                .len(),
            2
        );
        lv.states[cat("Pneumonia")] = LabelState::Negative;
        assert!(l
            .extract_fine_grained(&report, SectionMode::Findings, &lv)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn vocab_threshold_and_order() {
        let l = labeler();
        let mut reports = Vec::new();
        for i in 0..5 {
            reports.push(
                Report::from_sections(&format!("m{i}"), None, Some("Mild pneumonia."), None)
                    .unwrap(),
            );
        }
        for i in 0..3 {
            reports.push(
                Report::from_sections(&format!("e{i}"), None, Some("Small effusion."), None)
                    .unwrap(),
            );
        }
        reports.push(Report::from_sections("i", None, None, Some("Large effusion.")).unwrap());
        let corpus = Corpus::new(reports);
        let vocab = l.build_vocab(&corpus, 3).unwrap();
        let surfaces: Vec<_> = vocab
            .entries
            .iter()
            .map(|e| e.label.surface.as_str())
            .collect();
        assert_eq!(
            surfaces,
            vec!["mild pneumonia", "pneumonia", "effusion", "small effusion"]
        );
        assert_eq!(l.build_vocab(&corpus, 6).unwrap().len(), 0);
        assert!(matches!(
            l.build_vocab(&corpus, 0),
            Err(LabelError::InvalidThreshold)
        ));
        assert!(matches!(
            l.build_vocab(&Corpus::new(vec![]), 1),
            Err(LabelError::EmptyCorpus)
        ));

        let mut buf = Vec::new();
        vocab.write_tsv(l.categories(), &mut buf).unwrap();
        let tsv = String::from_utf8(buf).unwrap();
        assert!(tsv.starts_with("surface\tcategory\tcount\nmild pneumonia\tPneumonia\t5\n"));
    }
}
