//! Chest X-ray report toolkit: section parsing, rule-based labeling,
//! impression clustering, captioning and clinical metrics, and a desk-scale
//! cluster-conditioned contrastive image/text encoder.

pub mod ccve;
pub mod clinical;
pub mod cluster;
pub mod corpus;
pub mod labeler;
pub mod nlg_metrics;
pub mod synth;
pub mod textproc;

pub use ccve::{
    CcveConfig, CcveError, CcveModel, Embedding, GrayImage, ImageRecord, TrainConfig, TrainSample,
};
pub use clinical::{clinical_eval, ClinicalError, ClinicalScores};
pub use cluster::{
    ClusterError, ClusterId, ClusterPriority, ClusterRecord, Clusterer, NUM_CLUSTERS,
};
pub use corpus::{load_corpus, parse_report, Corpus, CorpusError, Report, SectionMode};
pub use labeler::{
    FineGrainedVocab, FineLabel, LabelError, LabelState, LabelVector, Labeler, Lexicons,
    NUM_CATEGORIES,
};
pub use nlg_metrics::{evaluate_nlg, EvalPair, MetricError, NlgScores};
pub use textproc::{tokenize, TokenSeq};
