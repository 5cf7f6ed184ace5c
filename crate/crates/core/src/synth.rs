//! Seeded synthetic data: random report corpora and the planted-pattern
//! image/impression set used to exercise CCVE training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccve::{CcveModel, GrayImage, TrainSample};
use crate::cluster::NUM_CLUSTERS;
use crate::corpus::{Corpus, Report};
use crate::textproc::{tokenize, TokenSeq};

/// One impression per cluster, in cluster order. Each labels to exactly its
/// own cluster.
pub const IMPRESSION_TEMPLATES: [&str; NUM_CLUSTERS] = [
    "No acute cardiopulmonary process.",
    "Widened mediastinum.",
    "Moderate cardiomegaly.",
    "Patchy opacity in the right lower lobe.",
    "Small nodule in the left upper lobe.",
    "Mild pulmonary edema.",
    "Focal consolidation at the left base.",
    "Right lower lobe pneumonia.",
    "Bibasilar atelectasis.",
    "Small right apical pneumothorax.",
    "Small left pleural effusion.",
    "Acute fracture of a left rib.",
    "Endotracheal tube in standard position.",
];

const BACKGROUNDS: [&str; 4] = [
    "Shortness of breath.",
    "Cough and fever.",
    "Chest pain.",
    "Preoperative evaluation.",
];

const POSITIVE_FINDINGS: [&str; 16] = [
    "There is a small left pleural effusion.",
    "Mild pulmonary edema is present.",
    "Moderate cardiomegaly is noted.",
    "Patchy opacity at the right base.",
    "Right lower lobe consolidation.",
    "Findings are consistent with pneumonia.",
    "Bibasilar atelectasis.",
    "Small apical pneumothorax on the right.",
    "A 5 mm nodule in the left upper lobe.",
    "The mediastinum is widened.",
    "Endotracheal tube terminates 4.5 cm above the carina.",
    "Old healed rib fracture.",
    "Mild pleural thickening at the apices.",
    "Large right pleural effusion.",
    "Diffuse interstitial edema.",
    "A right picc line is in place.",
];

const NEGATIVE_FINDINGS: [&str; 6] = [
    "No pneumothorax.",
    "There is no pleural effusion.",
    "No focal consolidation.",
    "The lungs are clear without edema.",
    "Free of acute fracture.",
    "Heart size is normal.",
];

const UNCERTAIN_FINDINGS: [&str; 4] = [
    "Possible early pneumonia.",
    "Cannot exclude a small effusion.",
    "Questionable retrocardiac opacity.",
    "May represent atelectasis.",
];

/// `n` random reports with ids `r00000`, `r00001`, …. About one in ten has no
/// impression section.
pub fn random_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports = (0..n)
        .map(|i| {
            let mut findings = Vec::new();
            for _ in 0..rng.gen_range(1..=4) {
                let pool: &[&str] = match rng.gen_range(0..10) {
                    0..=4 => &POSITIVE_FINDINGS,
                    5..=7 => &NEGATIVE_FINDINGS,
                    _ => &UNCERTAIN_FINDINGS,
                };
                findings.push(*pool.choose(&mut rng).unwrap());
            }
            let impression = (rng.gen_range(0..10) > 0).then(|| {
                let mut lines: Vec<&str> = vec![IMPRESSION_TEMPLATES.choose(&mut rng).unwrap()];
                if rng.gen_bool(0.3) {
                    lines.push(IMPRESSION_TEMPLATES.choose(&mut rng).unwrap());
                }
                lines.join(" ")
            });
            Report::from_sections(
                &format!("r{i:05}"),
                Some(BACKGROUNDS.choose(&mut rng).unwrap()),
                Some(&findings.join(" ")),
                impression.as_deref(),
            )
            .expect("generated report has findings")
        })
        .collect();
    Corpus::new(reports)
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cluster count must be in 1..={max}, got {got}", max = NUM_CLUSTERS)]
    Clusters { got: usize },
    #[error("image side {size} too small for {clusters} planted positions")]
    ImageTooSmall { size: usize, clusters: usize },
    #[error("per-cluster count must be positive")]
    Empty,
}

/// Parameters of the planted-pattern set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub clusters: usize,
    pub per_cluster: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            clusters: NUM_CLUSTERS,
            per_cluster: 50,
            size: 16,
            seed: 0,
        }
    }
}

/// One generated sample: a report whose impression is its cluster's
/// template, the cluster label and the image.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSample {
    pub report: Report,
    pub cluster: usize,
    pub image: GrayImage,
}

impl PlantedSample {
    pub fn to_train_sample(&self) -> TrainSample {
        TrainSample {
            image: self.image.clone(),
            tokens: tokenize(self.report.impression.as_deref().unwrap_or_default()),
            cluster: self.cluster,
        }
    }
}

/// Top-left corner of cluster `k`'s bright block. Positions lie on a g×g
/// grid, g = ⌈√clusters⌉, spread across the image.
fn block_origin(k: usize, grid: usize, size: usize, block: usize) -> (usize, usize) {
    let span = size - block;
    let step = |cell: usize| {
        if grid > 1 {
            cell * span / (grid - 1)
        } else {
            span / 2
        }
    };
    (step(k / grid), step(k % grid))
}

/// `per_cluster` images per cluster. Each cluster owns one fixed bright
/// block position; pixels elsewhere are low-level noise.
pub fn planted_dataset(config: &PlantedConfig) -> Result<Vec<PlantedSample>, SynthError> {
    let PlantedConfig {
        clusters,
        per_cluster,
        size,
        seed,
    } = *config;
    if clusters == 0 || clusters > NUM_CLUSTERS {
        return Err(SynthError::Clusters { got: clusters });
    }
    if per_cluster == 0 {
        return Err(SynthError::Empty);
    }
    let grid = (1..).find(|g| g * g >= clusters).unwrap();
    let block = (size / 4).max(2);
    if size < block * 2 || (grid > 1 && size - block < grid - 1) {
        return Err(SynthError::ImageTooSmall { size, clusters });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clusters * per_cluster);
    for (k, template) in IMPRESSION_TEMPLATES.iter().enumerate().take(clusters) {
        let (top, left) = block_origin(k, grid, size, block);
        for i in 0..per_cluster {
            let mut pixels: Vec<f64> = (0..size * size).map(|_| rng.gen_range(0.0..0.2)).collect();
            for r in top..top + block {
                for c in left..left + block {
                    pixels[r * size + c] = rng.gen_range(0.8..=1.0);
                }
            }
            let report = Report::from_sections(
                &format!("s{k:02}_{i:03}"),
                None,
                Some("Synthetic study."),
                Some(template),
            )
            .expect("template is non-empty");
            out.push(PlantedSample {
                report,
                cluster: k,
                image: GrayImage::new(size, size, pixels).expect("pixels in range"),
            });
        }
    }
    Ok(out)
}

/// Random batch for a gradient check: uniform pixels, one to three random
/// vocabulary tokens, clusters drawn over all of the model's filters.
pub fn random_batch(
    model: &CcveModel,
    batch_size: usize,
    image_side: usize,
    seed: u64,
) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = image_side.max(model.config.min_image_side());
    let vocab = model.vocab.tokens();
    (0..batch_size)
        .map(|_| {
            let pixels = (0..side * side).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let words: Vec<&str> = (0..rng.gen_range(1..=3))
                .filter_map(|_| vocab.choose(&mut rng).map(String::as_str))
                .collect();
            TrainSample {
                image: GrayImage::new(side, side, pixels).expect("pixels in range"),
                tokens: TokenSeq::new(words),
                cluster: rng.gen_range(0..model.config.clusters),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterPriority, Clusterer};
    use crate::labeler::Labeler;

    #[test]
    fn templates_round_trip_through_clustering() {
        let clusterer = Clusterer::new(Labeler::default()).unwrap();
        let priority = ClusterPriority::canonical();
        for (k, text) in IMPRESSION_TEMPLATES.iter().enumerate() {
            let report = Report::from_sections("t", None, None, Some(text)).unwrap();
            assert_eq!(
                clusterer.assign_cluster(&report, &priority).unwrap().0,
                k,
                "{text}"
            );
        }
    }

    #[test]
    fn planted_blocks_are_distinct_and_seeded() {
        let cfg = PlantedConfig {
            per_cluster: 2,
            ..PlantedConfig::default()
        };
        let a = planted_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 26);
        assert_eq!(a, planted_dataset(&cfg).unwrap());
        let origins: std::collections::BTreeSet<_> =
            (0..13).map(|k| block_origin(k, 4, 16, 4)).collect();
        assert_eq!(origins.len(), 13);
        assert!(a
            .iter()
            .all(|s| s.image.height() == 16 && s.image.width() == 16));
    }

    #[test]
    fn planted_rejects_bad_configs() {
        assert!(planted_dataset(&PlantedConfig {
            clusters: 14,
            ..PlantedConfig::default()
        })
        .is_err());
        assert!(planted_dataset(&PlantedConfig {
            per_cluster: 0,
            ..PlantedConfig::default()
        })
        .is_err());
        assert!(planted_dataset(&PlantedConfig {
            size: 3,
            ..PlantedConfig::default()
        })
        .is_err());
    }

    #[test]
    fn random_corpus_is_seeded_with_unique_ids() {
        let a = random_corpus(200, 4);
        assert_eq!(a.len(), 200);
        let ids: std::collections::BTreeSet<_> = a.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids.len(), 200);
        assert_eq!(a.reports, random_corpus(200, 4).reports);
        assert!(a.iter().any(|r| r.impression.is_none()));
    }
}
