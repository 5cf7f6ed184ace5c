//! Clinical accuracy: per-category confusion counts over positivity masks,
//! micro-averaged precision/recall and macro-averaged F1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeler::{LabelState, LabelVector, NUM_CATEGORIES};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClinicalError {
    #[error("{candidates} candidate label vectors but {references} references")]
    LengthMismatch {
        candidates: usize,
        references: usize,
    },
    #[error(
        "position {index}: candidate {candidate:?} is not aligned with reference {reference:?}"
    )]
    IdMismatch {
        index: usize,
        candidate: String,
        reference: String,
    },
}

/// Bit `c` set iff category `c` is Positive.
pub fn binarize(labels: &LabelVector) -> u16 {
    labels
        .states
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == LabelState::Positive)
        .fold(0u16, |mask, (c, _)| mask | (1 << c))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn is_empty(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyClassPolicy {
    /// Leave classes with no positives on either side out of the macro mean.
    Exclude,
    /// Count them as F1 = 0.
    CountAsZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalScores {
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    /// `None` for classes left out of the macro mean.
    pub per_class: [Option<f64>; NUM_CATEGORIES],
    pub confusion: [Confusion; NUM_CATEGORIES],
}

pub fn clinical_eval(
    cands: &[LabelVector],
    refs: &[LabelVector],
) -> Result<ClinicalScores, ClinicalError> {
    clinical_eval_with(cands, refs, EmptyClassPolicy::Exclude)
}

pub fn clinical_eval_with(
    cands: &[LabelVector],
    refs: &[LabelVector],
    policy: EmptyClassPolicy,
) -> Result<ClinicalScores, ClinicalError> {
    if cands.len() != refs.len() {
        return Err(ClinicalError::LengthMismatch {
            candidates: cands.len(),
            references: refs.len(),
        });
    }
    let mut confusion = [Confusion::default(); NUM_CATEGORIES];
    for (index, (cand, refr)) in cands.iter().zip(refs).enumerate() {
        if cand.report_id != refr.report_id {
            return Err(ClinicalError::IdMismatch {
                index,
                candidate: cand.report_id.clone(),
                reference: refr.report_id.clone(),
            });
        }
        let (c, r) = (binarize(cand), binarize(refr));
        for (class, counts) in confusion.iter_mut().enumerate() {
            let bit = 1u16 << class;
            match (c & bit != 0, r & bit != 0) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => {}
            }
        }
    }

    let mut per_class = [None; NUM_CATEGORIES];
    for (slot, counts) in per_class.iter_mut().zip(&confusion) {
        if !(counts.is_empty() && policy == EmptyClassPolicy::Exclude) {
            *slot = Some(counts.f1());
        }
    }
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_f1 = if included.is_empty() {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };

    let tp: usize = confusion.iter().map(|c| c.tp).sum();
    let fp: usize = confusion.iter().map(|c| c.fp).sum();
    let fn_: usize = confusion.iter().map(|c| c.fn_).sum();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(ClinicalScores {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        macro_f1,
        per_class,
        confusion,
    })
}
