//! Cluster-conditioned contrastive visual encoder (CCVE) at desk scale.
//!
//! K trainable convolution filters sit in front of one shared visual encoder.
//! During training a sample of cluster k goes through filter k and is matched
//! to its impression text with a symmetric contrastive loss. At inference an
//! image is pushed through all K filters, giving a K×d embedding matrix.
//!
//! Gradients are derived by hand (see [`backward`]) and checked against
//! central differences by [`gradcheck`].

mod encoder;
pub mod eval;
pub mod gradcheck;
mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{effective_text, CorpusError, Report, SectionMode};
use crate::textproc::{tokenize, TokenSeq};

pub use encoder::{
    conv2d_valid, embed_all, encode_image, encode_text, image_backward, image_forward,
    text_backward, text_forward, token_ids, FeatureMap, ImageTrace, TextTrace, MIN_NORM,
};
pub use loss::{clip_loss, clip_loss_grad, ClipLossGrad};
pub use model::{
    CcveConfig, CcveModel, Params, Vocabulary, FILTER_INIT_NOISE, INIT_INV_TAU, MAX_INV_TAU,
    MODEL_FORMAT, MODEL_VERSION, PARAM_GROUPS,
};
pub use train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum CcveError {
    #[error("kernel of side {kernel} does not fit a {height}×{width} input")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },
    #[error("embedding has zero norm{}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    ZeroNorm { row: Option<usize> },
    #[error("no in-vocabulary tokens in text")]
    EmptyText,
    #[error("cluster {cluster} out of range for a model with {clusters} filters")]
    InvalidCluster { cluster: usize, clusters: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty training set")]
    EmptyDataset,
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
    #[error("model file: {0}")]
    ModelFormat(String),
}

/// Grayscale image with finite values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawImage", into = "RawImage")]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl TryFrom<RawImage> for GrayImage {
    type Error = CcveError;

    fn try_from(raw: RawImage) -> Result<Self, Self::Error> {
        GrayImage::new(raw.height, raw.width, raw.pixels)
    }
}

impl From<GrayImage> for RawImage {
    fn from(img: GrayImage) -> Self {
        RawImage {
            height: img.height,
            width: img.width,
            pixels: img.pixels,
        }
    }
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<GrayImage, CcveError> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(CcveError::InvalidImage(format!(
                "{} pixels for a {height}×{width} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CcveError::InvalidImage(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// One line of an image JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    #[serde(flatten)]
    pub image: GrayImage,
}

/// Training text of a report: its impression, or the first findings
/// sentence when there is none.
pub fn impression_tokens(report: &Report) -> Result<TokenSeq, CorpusError> {
    Ok(tokenize(&effective_text(
        report,
        SectionMode::ImpressionFallback,
    )?))
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// An image, its impression tokens and its cluster label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: GrayImage,
    pub tokens: TokenSeq,
    pub cluster: usize,
}

/// Mean contrastive loss of a batch, forward only.
pub fn batch_loss(model: &CcveModel, batch: &[TrainSample]) -> Result<f64, CcveError> {
    if batch.is_empty() {
        return Err(CcveError::EmptyBatch);
    }
    let mut images = Vec::with_capacity(batch.len());
    let mut texts = Vec::with_capacity(batch.len());
    for sample in batch {
        let filter = model.filter_index(sample.cluster)?;
        images.push(image_forward(model, &sample.image, filter)?.embedding);
        texts.push(text_forward(model, &sample.tokens)?.embedding);
    }
    Ok(clip_loss(&images, &texts, model.inv_tau()))
}

/// Loss and exact gradients of every parameter for one batch. Filters that
/// no sample selects get exactly zero gradient.
pub fn backward(model: &CcveModel, batch: &[TrainSample]) -> Result<(f64, Params), CcveError> {
    if batch.is_empty() {
        return Err(CcveError::EmptyBatch);
    }
    let mut image_traces = Vec::with_capacity(batch.len());
    let mut text_traces = Vec::with_capacity(batch.len());
    for sample in batch {
        let filter = model.filter_index(sample.cluster)?;
        image_traces.push(image_forward(model, &sample.image, filter)?);
        text_traces.push(text_forward(model, &sample.tokens)?);
    }
    let images: Vec<Vec<f64>> = image_traces.iter().map(|t| t.embedding.clone()).collect();
    let texts: Vec<Vec<f64>> = text_traces.iter().map(|t| t.embedding.clone()).collect();
    let inv_tau = model.inv_tau();
    let grad = clip_loss_grad(&images, &texts, inv_tau);

    let mut grads = model.params.zeros_like();
    for ((sample, trace), d) in batch.iter().zip(&image_traces).zip(&grad.d_images) {
        image_backward(model, &sample.image, trace, d, &mut grads);
    }
    for (trace, d) in text_traces.iter().zip(&grad.d_texts) {
        text_backward(model, trace, d, &mut grads);
    }
    grads.log_inv_tau = grad.d_inv_tau * inv_tau;
    Ok((grad.loss, grads))
}
