use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CcveError;

/// Upper bound on the similarity scale `exp(log_inv_tau)`.
pub const MAX_INV_TAU: f64 = 200.0;
/// Initial temperature 0.07.
pub const INIT_INV_TAU: f64 = 1.0 / 0.07;
/// Half-width of the uniform noise added to the delta filter init.
pub const FILTER_INIT_NOISE: f64 = 0.05;

pub const MODEL_FORMAT: &str = "cxr-ccve";
pub const MODEL_VERSION: u32 = 1;

/// Architecture sizes. Defaults: 13 filters of 3×3, 8 shared 3×3 channels,
/// 16-dimensional joint and token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcveConfig {
    /// K, number of cluster filters.
    pub clusters: usize,
    /// c, side of each cluster filter.
    pub filter_size: usize,
    /// m, channels of the shared conv layer.
    pub channels: usize,
    /// c₂, side of the shared conv kernels.
    pub kernel_size: usize,
    /// d, joint embedding dimension.
    pub embed_dim: usize,
    /// Token embedding width.
    pub text_dim: usize,
    /// Keep the filters fixed during training (the single-filter CVE baseline).
    pub frozen_filters: bool,
}

impl Default for CcveConfig {
    fn default() -> Self {
        CcveConfig {
            clusters: 13,
            filter_size: 3,
            channels: 8,
            kernel_size: 3,
            embed_dim: 16,
            text_dim: 16,
            frozen_filters: false,
        }
    }
}

impl CcveConfig {
    /// K = 1 with an exact delta filter that never trains.
    pub fn cve_baseline(self) -> CcveConfig {
        CcveConfig {
            clusters: 1,
            frozen_filters: true,
            ..self
        }
    }

    /// Smallest image side the encoder accepts.
    pub fn min_image_side(&self) -> usize {
        self.filter_size + self.kernel_size - 1
    }

    fn validate(&self) -> Result<(), CcveError> {
        let sizes = [
            self.clusters,
            self.filter_size,
            self.channels,
            self.kernel_size,
            self.embed_dim,
            self.text_dim,
        ];
        if sizes.contains(&0) {
            return Err(CcveError::Shape(format!(
                "all sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Token vocabulary of the text encoder, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Sorted, de-duplicated vocabulary.
    pub fn new<I, S>(tokens: I) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        tokens.sort();
        tokens.dedup();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Every trainable tensor, flattened row-major. Also used as the gradient
/// container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// K × c × c
    pub filters: Vec<f64>,
    /// m × c₂ × c₂
    pub conv_weight: Vec<f64>,
    /// m
    pub conv_bias: Vec<f64>,
    /// d × m
    pub visual_proj: Vec<f64>,
    /// d
    pub visual_bias: Vec<f64>,
    /// V × text_dim
    pub token_embedding: Vec<f64>,
    /// d × text_dim
    pub text_proj: Vec<f64>,
    /// d
    pub text_bias: Vec<f64>,
    pub log_inv_tau: f64,
}

/// Names used in parameter addresses.
pub const PARAM_GROUPS: [&str; 9] = [
    "filters",
    "conv_weight",
    "conv_bias",
    "visual_proj",
    "visual_bias",
    "token_embedding",
    "text_proj",
    "text_bias",
    "log_inv_tau",
];

impl Params {
    pub fn zeros(config: &CcveConfig, vocab_size: usize) -> Params {
        let c = config;
        Params {
            filters: vec![0.0; c.clusters * c.filter_size * c.filter_size],
            conv_weight: vec![0.0; c.channels * c.kernel_size * c.kernel_size],
            conv_bias: vec![0.0; c.channels],
            visual_proj: vec![0.0; c.embed_dim * c.channels],
            visual_bias: vec![0.0; c.embed_dim],
            token_embedding: vec![0.0; vocab_size * c.text_dim],
            text_proj: vec![0.0; c.embed_dim * c.text_dim],
            text_bias: vec![0.0; c.embed_dim],
            log_inv_tau: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            filters: vec![0.0; self.filters.len()],
            conv_weight: vec![0.0; self.conv_weight.len()],
            conv_bias: vec![0.0; self.conv_bias.len()],
            visual_proj: vec![0.0; self.visual_proj.len()],
            visual_bias: vec![0.0; self.visual_bias.len()],
            token_embedding: vec![0.0; self.token_embedding.len()],
            text_proj: vec![0.0; self.text_proj.len()],
            text_bias: vec![0.0; self.text_bias.len()],
            log_inv_tau: 0.0,
        }
    }

    /// Groups in [`PARAM_GROUPS`] order.
    pub fn groups(&self) -> [&[f64]; 9] {
        [
            &self.filters,
            &self.conv_weight,
            &self.conv_bias,
            &self.visual_proj,
            &self.visual_bias,
            &self.token_embedding,
            &self.text_proj,
            &self.text_bias,
            std::slice::from_ref(&self.log_inv_tau),
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.filters,
            &mut self.conv_weight,
            &mut self.conv_bias,
            &mut self.visual_proj,
            &mut self.visual_bias,
            &mut self.token_embedding,
            &mut self.text_proj,
            &mut self.text_bias,
            std::slice::from_mut(&mut self.log_inv_tau),
        ]
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha * other`, group by group.
    pub fn add_scaled(&mut self, alpha: f64, other: &Params) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for group in self.groups_mut() {
            group.iter_mut().for_each(|x| *x *= alpha);
        }
    }
}

/// The cluster-conditioned image/text encoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CcveModel {
    pub config: CcveConfig,
    pub vocab: Vocabulary,
    pub params: Params,
}

impl CcveModel {
    /// Seeded initialization. Filters start as a delta kernel plus uniform
    /// noise in ±0.05 (exact delta when frozen); the temperature starts at
    /// 0.07.
    pub fn init(config: CcveConfig, vocab: Vocabulary, seed: u64) -> Result<CcveModel, CcveError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(&config, vocab.len());

        let c = config.filter_size;
        let centre = (c / 2) * c + c / 2;
        for filter in params.filters.chunks_mut(c * c) {
            for (i, w) in filter.iter_mut().enumerate() {
                let delta = if i == centre { 1.0 } else { 0.0 };
                let noise = if config.frozen_filters {
                    0.0
                } else {
                    rng.gen_range(-FILTER_INIT_NOISE..=FILTER_INIT_NOISE)
                };
                *w = delta + noise;
            }
        }

        let fan_in = (config.kernel_size * config.kernel_size) as f64;
        let conv_scale = (3.0 / fan_in).sqrt();
        params
            .conv_weight
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-conv_scale..conv_scale));
        params
            .conv_bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.1..0.1));

        let proj_scale = (3.0 / config.channels as f64).sqrt();
        params
            .visual_proj
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-proj_scale..proj_scale));
        params
            .token_embedding
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-1.0..1.0));
        let text_scale = (3.0 / config.text_dim as f64).sqrt();
        params
            .text_proj
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-text_scale..text_scale));
        params.log_inv_tau = INIT_INV_TAU.ln();

        Ok(CcveModel {
            config,
            vocab,
            params,
        })
    }

    pub fn inv_tau(&self) -> f64 {
        self.params.log_inv_tau.exp()
    }

    /// Keeps `exp(log_inv_tau)` at or below [`MAX_INV_TAU`].
    pub fn clamp_temperature(&mut self) {
        self.params.log_inv_tau = self.params.log_inv_tau.min(MAX_INV_TAU.ln());
    }

    /// Filter used for a sample of `cluster`: the cluster's own filter, or
    /// the single filter of a K = 1 model.
    pub fn filter_index(&self, cluster: usize) -> Result<usize, CcveError> {
        if self.config.clusters == 1 {
            Ok(0)
        } else if cluster < self.config.clusters {
            Ok(cluster)
        } else {
            Err(CcveError::InvalidCluster {
                cluster,
                clusters: self.config.clusters,
            })
        }
    }

    pub fn filter(&self, k: usize) -> &[f64] {
        let n = self.config.filter_size * self.config.filter_size;
        &self.params.filters[k * n..(k + 1) * n]
    }

    /// JSON dump with an explicit shape header. Field order and float
    /// formatting are deterministic.
    pub fn write_json<W: Write>(&self, out: W) -> Result<(), CcveError> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            header: ModelHeader {
                config: self.config,
                vocab_size: self.vocab.len(),
                param_count: self.params.len(),
            },
            vocab: self.vocab.tokens().to_vec(),
            params: self.params.clone(),
        };
        serde_json::to_writer(out, &file).map_err(|e| CcveError::ModelFormat(e.to_string()))
    }

    pub fn read_json<R: Read>(input: R) -> Result<CcveModel, CcveError> {
        let file: ModelFile =
            serde_json::from_reader(input).map_err(|e| CcveError::ModelFormat(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(CcveError::ModelFormat(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        let config = file.header.config;
        config.validate()?;
        let vocab = Vocabulary::new(file.vocab);
        if vocab.len() != file.header.vocab_size {
            return Err(CcveError::ModelFormat(format!(
                "header says {} tokens, vocabulary has {} distinct",
                file.header.vocab_size,
                vocab.len()
            )));
        }
        let expected = Params::zeros(&config, vocab.len());
        for ((name, want), got) in PARAM_GROUPS
            .iter()
            .zip(expected.groups())
            .zip(file.params.groups())
        {
            if want.len() != got.len() {
                return Err(CcveError::ModelFormat(format!(
                    "{name}: expected {} values, found {}",
                    want.len(),
                    got.len()
                )));
            }
        }
        if !file.params.is_finite() {
            return Err(CcveError::ModelFormat("non-finite parameter".into()));
        }
        let mut model = CcveModel {
            config,
            vocab,
            params: file.params,
        };
        model.clamp_temperature();
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    #[serde(flatten)]
    config: CcveConfig,
    vocab_size: usize,
    param_count: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    header: ModelHeader,
    vocab: Vec<String>,
    params: Params,
}
