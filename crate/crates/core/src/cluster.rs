//! Thirteen-way impression clustering: the 14 observation categories with the
//! two pleural categories merged. The cluster selects a CCVE filter.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Report, SectionMode};
use crate::labeler::{LabelError, LabelState, LabelVector, Labeler, NUM_CATEGORIES};

pub const NUM_CLUSTERS: usize = NUM_CATEGORIES - 1;

/// Cluster index of the "No Finding" category.
pub const NO_FINDING_CLUSTER: ClusterId = ClusterId(0);

const MERGED_FROM: &str = "Pleural Effusion";
const MERGED_INTO_IT: &str = "Pleural Other";

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("category set has no {0:?} category to merge")]
    MissingCategory(&'static str),
}

impl From<CorpusError> for ClusterError {
    fn from(e: CorpusError) -> Self {
        ClusterError::Label(LabelError::Corpus(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub usize);

impl ClusterId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One line of a cluster assignment JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: String,
    pub cluster: ClusterId,
    #[serde(default)]
    pub cluster_name: String,
}

/// Category → cluster mapping and cluster names.
#[derive(Debug, Clone)]
pub struct ClusterMap {
    category_to_cluster: [ClusterId; NUM_CATEGORIES],
    names: Vec<String>,
}

impl ClusterMap {
    /// Merges "Pleural Other" into "Pleural Effusion"; every other category
    /// keeps its own cluster in canonical category order.
    pub fn from_labeler(labeler: &Labeler) -> Result<ClusterMap, ClusterError> {
        let cats = labeler.categories();
        let effusion = cats
            .index_of(MERGED_FROM)
            .ok_or(ClusterError::MissingCategory(MERGED_FROM))?;
        let other = cats
            .index_of(MERGED_INTO_IT)
            .ok_or(ClusterError::MissingCategory(MERGED_INTO_IT))?;
        let mut category_to_cluster = [ClusterId(0); NUM_CATEGORIES];
        let mut names = Vec::with_capacity(NUM_CLUSTERS);
        #[allow(clippy::needless_range_loop)]
        for category in 0..NUM_CATEGORIES {
            if category == other {
                continue;
            }
            let id = ClusterId(names.len());
            category_to_cluster[category] = id;
            names.push(if category == effusion {
                format!("{} / {}", cats.name(effusion), cats.name(other))
            } else {
                cats.name(category).to_string()
            });
        }
        category_to_cluster[other] = category_to_cluster[effusion];
        Ok(ClusterMap {
            category_to_cluster,
            names,
        })
    }

    pub fn cluster_of(&self, category: usize) -> ClusterId {
        self.category_to_cluster[category]
    }

    pub fn name(&self, cluster: ClusterId) -> &str {
        &self.names[cluster.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Strongest state per cluster (Positive > Uncertain > other).
    fn cluster_states(&self, labels: &LabelVector) -> [LabelState; NUM_CLUSTERS] {
        let mut states = [LabelState::Absent; NUM_CLUSTERS];
        for (category, state) in labels.states.iter().enumerate() {
            let slot = &mut states[self.cluster_of(category).0];
            let rank = |s: LabelState| match s {
                LabelState::Positive => 2,
                LabelState::Uncertain => 1,
                _ => 0,
            };
            if rank(*state) > rank(*slot) {
                *slot = *state;
            }
        }
        states
    }
}

/// Total order over the 13 clusters, highest priority first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPriority(Vec<ClusterId>);

impl ClusterPriority {
    /// Canonical order with No Finding last.
    pub fn canonical() -> ClusterPriority {
        let mut order: Vec<ClusterId> = (1..NUM_CLUSTERS).map(ClusterId).collect();
        order.push(NO_FINDING_CLUSTER);
        ClusterPriority(order)
    }

    pub fn order(&self) -> &[ClusterId] {
        &self.0
    }

    pub fn rank(&self, cluster: ClusterId) -> usize {
        self.0
            .iter()
            .position(|c| *c == cluster)
            .expect("priority is a permutation")
    }
}

#[derive(Debug, Clone)]
pub struct Clusterer {
    labeler: Labeler,
    map: ClusterMap,
    /// Fall back to an Uncertain cluster before No Finding.
    pub uncertain_fallback: bool,
}

impl Clusterer {
    pub fn new(labeler: Labeler) -> Result<Clusterer, ClusterError> {
        let map = ClusterMap::from_labeler(&labeler)?;
        Ok(Clusterer {
            labeler,
            map,
            uncertain_fallback: true,
        })
    }

    pub fn map(&self) -> &ClusterMap {
        &self.map
    }

    pub fn labeler(&self) -> &Labeler {
        &self.labeler
    }

    fn impression_labels(&self, report: &Report) -> Result<LabelVector, ClusterError> {
        Ok(self
            .labeler
            .label_report(report, SectionMode::ImpressionFallback)?)
    }

    /// Positive-report frequency per cluster over impressions.
    pub fn positive_frequencies(
        &self,
        corpus: &Corpus,
    ) -> Result<[usize; NUM_CLUSTERS], ClusterError> {
        let mut freq = [0usize; NUM_CLUSTERS];
        for report in corpus.iter() {
            let states = self.map.cluster_states(&self.impression_labels(report)?);
            for (cluster, state) in states.iter().enumerate() {
                if *state == LabelState::Positive {
                    freq[cluster] += 1;
                }
            }
        }
        Ok(freq)
    }

    /// Rarest positive cluster first, ties by index, No Finding last.
    pub fn cluster_priority(&self, corpus: &Corpus) -> Result<ClusterPriority, ClusterError> {
        if corpus.is_empty() {
            return Err(ClusterError::EmptyCorpus);
        }
        let freq = self.positive_frequencies(corpus)?;
        let mut order: Vec<ClusterId> = (0..NUM_CLUSTERS)
            .map(ClusterId)
            .filter(|c| *c != NO_FINDING_CLUSTER)
            .collect();
        order.sort_by_key(|c| (freq[c.0], c.0));
        order.push(NO_FINDING_CLUSTER);
        Ok(ClusterPriority(order))
    }

    pub fn assign_labels(&self, labels: &LabelVector, priority: &ClusterPriority) -> ClusterId {
        let states = self.map.cluster_states(labels);
        let first_with = |wanted: LabelState| {
            priority
                .order()
                .iter()
                .copied()
                .find(|c| *c != NO_FINDING_CLUSTER && states[c.0] == wanted)
        };
        first_with(LabelState::Positive)
            .or_else(|| {
                self.uncertain_fallback
                    .then(|| first_with(LabelState::Uncertain))
                    .flatten()
            })
            .unwrap_or(NO_FINDING_CLUSTER)
    }

    pub fn assign_cluster(
        &self,
        report: &Report,
        priority: &ClusterPriority,
    ) -> Result<ClusterId, ClusterError> {
        Ok(self.assign_labels(&self.impression_labels(report)?, priority))
    }

    /// Assignments in corpus order.
    pub fn assign_corpus(
        &self,
        corpus: &Corpus,
        priority: &ClusterPriority,
    ) -> Result<Vec<ClusterId>, ClusterError> {
        corpus
            .iter()
            .map(|r| self.assign_cluster(r, priority))
            .collect()
    }
}
