//! Loader for `fixtures/labeler_sentences.tsv` and a checker that runs the
//! default labeler over it.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use cxr_core::{LabelState, Labeler, NUM_CATEGORIES};

pub struct Case {
    pub line: usize,
    pub sentence: String,
    pub states: [LabelState; NUM_CATEGORIES],
    pub fine: BTreeSet<String>,
}

fn parse_state(s: &str) -> LabelState {
    match s {
        "positive" => LabelState::Positive,
        "negative" => LabelState::Negative,
        "uncertain" => LabelState::Uncertain,
        "absent" => LabelState::Absent,
        other => panic!("unknown state {other:?}"),
    }
}

pub fn load(path: &Path, labeler: &Labeler) -> Vec<Case> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut cases = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        assert!(
            cols.len() >= 2,
            "line {}: expected tab-separated columns",
            i + 1
        );
        let mut states = [LabelState::Absent; NUM_CATEGORIES];
        for item in cols[1].split(',').filter(|s| !s.is_empty()) {
            let (name, state) = item.split_once('=').expect("Category=state");
            let c = labeler
                .categories()
                .index_of(name)
                .unwrap_or_else(|| panic!("line {}: unknown category {name:?}", i + 1));
            states[c] = parse_state(state);
        }
        let fine = cols
            .get(2)
            .map(|c| {
                c.split('|')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        cases.push(Case {
            line: i + 1,
            sentence: cols[0].to_string(),
            states,
            fine,
        });
    }
    cases
}

pub fn default_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/labeler_sentences.tsv")
}

/// Mismatch descriptions, empty when every case agrees.
pub fn check(labeler: &Labeler, cases: &[Case]) -> Vec<String> {
    let mut failures = Vec::new();
    for case in cases {
        let ann = labeler.annotate("fixture", &case.sentence);
        if ann.labels.states[..] != case.states[..] {
            let show = |s: &[LabelState]| {
                s.iter()
                    .enumerate()
                    .filter(|(_, st)| **st != LabelState::Absent)
                    .map(|(c, st)| format!("{}={}", labeler.categories().name(c), st))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            failures.push(format!(
                "line {} {:?}: states {} expected {}",
                case.line,
                case.sentence,
                show(&ann.labels.states),
                show(&case.states)
            ));
        }
        let fine: BTreeSet<String> = labeler
            .fine_labels(&ann)
            .into_iter()
            .map(|f| f.surface)
            .collect();
        if fine != case.fine {
            failures.push(format!(
                "line {} {:?}: fine {:?} expected {:?}",
                case.line, case.sentence, fine, case.fine
            ));
        }
    }
    failures
}
