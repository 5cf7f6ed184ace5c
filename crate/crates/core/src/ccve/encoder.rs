//! Forward and backward passes of the image and text towers.
//!
//! Image: filter_k ⊛ x → shared conv → ReLU → global mean → linear → L2 norm.
//! Text: mean token embedding → linear → L2 norm.

#![allow(clippy::needless_range_loop)]

use super::model::{CcveModel, Params};
use super::{CcveError, Embedding, GrayImage};
use crate::textproc::TokenSeq;

/// Norms below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Valid cross-correlation, stride 1, no padding.
pub fn conv2d_valid(
    image: &GrayImage,
    kernel: &[f64],
    size: usize,
) -> Result<FeatureMap, CcveError> {
    if kernel.len() != size * size {
        return Err(CcveError::Shape(format!(
            "kernel has {} values, expected {size}×{size}",
            kernel.len()
        )));
    }
    let (height, width, values) =
        correlate(image.pixels(), image.height(), image.width(), kernel, size)?;
    Ok(FeatureMap {
        height,
        width,
        values,
    })
}

pub(crate) fn correlate(
    input: &[f64],
    h: usize,
    w: usize,
    kernel: &[f64],
    c: usize,
) -> Result<(usize, usize, Vec<f64>), CcveError> {
    if c == 0 || h < c || w < c {
        return Err(CcveError::KernelTooLarge {
            kernel: c,
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h - c + 1, w - c + 1);
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for col in 0..ow {
            let mut acc = 0.0;
            for u in 0..c {
                let row = &input[(r + u) * w + col..(r + u) * w + col + c];
                let krow = &kernel[u * c..(u + 1) * c];
                acc += row.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
            }
            out[r * ow + col] = acc;
        }
    }
    Ok((oh, ow, out))
}

fn normalize(z: &[f64]) -> Result<(f64, Vec<f64>), CcveError> {
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(norm >= MIN_NORM) {
        return Err(CcveError::ZeroNorm { row: None });
    }
    Ok((norm, z.iter().map(|x| x / norm).collect()))
}

/// Gradient of `z / ‖z‖` pulled back from `d_out`.
fn normalize_backward(unit: &[f64], norm: f64, d_out: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(d_out).map(|(e, g)| e * g).sum();
    unit.iter()
        .zip(d_out)
        .map(|(e, g)| (g - e * dot) / norm)
        .collect()
}

/// Intermediate values of one image forward pass.
#[derive(Debug, Clone)]
pub struct ImageTrace {
    pub filter: usize,
    filtered: (usize, usize, Vec<f64>),
    /// Shared conv pre-activations, channel-major.
    pre: Vec<f64>,
    out_hw: (usize, usize),
    pooled: Vec<f64>,
    norm: f64,
    pub embedding: Vec<f64>,
}

pub fn image_forward(
    model: &CcveModel,
    image: &GrayImage,
    filter: usize,
) -> Result<ImageTrace, CcveError> {
    let cfg = &model.config;
    if filter >= cfg.clusters {
        return Err(CcveError::InvalidCluster {
            cluster: filter,
            clusters: cfg.clusters,
        });
    }
    let filtered = correlate(
        image.pixels(),
        image.height(),
        image.width(),
        model.filter(filter),
        cfg.filter_size,
    )?;
    let (fh, fw, ref fmap) = filtered;
    let k2 = cfg.kernel_size * cfg.kernel_size;
    let p = &model.params;

    let mut pre = Vec::new();
    let mut pooled = Vec::with_capacity(cfg.channels);
    let mut out_hw = (0, 0);
    for ch in 0..cfg.channels {
        let kernel = &p.conv_weight[ch * k2..(ch + 1) * k2];
        let (oh, ow, mut map) = correlate(fmap, fh, fw, kernel, cfg.kernel_size)?;
        out_hw = (oh, ow);
        map.iter_mut().for_each(|v| *v += p.conv_bias[ch]);
        let mean = map.iter().map(|v| v.max(0.0)).sum::<f64>() / map.len() as f64;
        pooled.push(mean);
        pre.extend(map);
    }

    let m = cfg.channels;
    let z: Vec<f64> = (0..cfg.embed_dim)
        .map(|i| {
            let row = &p.visual_proj[i * m..(i + 1) * m];
            p.visual_bias[i] + row.iter().zip(&pooled).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect();
    let (norm, embedding) = normalize(&z)?;
    Ok(ImageTrace {
        filter,
        filtered,
        pre,
        out_hw,
        pooled,
        norm,
        embedding,
    })
}

/// Accumulates the gradient of an image embedding into `grads`.
pub fn image_backward(
    model: &CcveModel,
    image: &GrayImage,
    trace: &ImageTrace,
    d_embedding: &[f64],
    grads: &mut Params,
) {
    let cfg = &model.config;
    let p = &model.params;
    let (m, d) = (cfg.channels, cfg.embed_dim);
    let dz = normalize_backward(&trace.embedding, trace.norm, d_embedding);

    let mut d_pooled = vec![0.0; m];
    for i in 0..d {
        grads.visual_bias[i] += dz[i];
        for j in 0..m {
            grads.visual_proj[i * m + j] += dz[i] * trace.pooled[j];
            d_pooled[j] += p.visual_proj[i * m + j] * dz[i];
        }
    }

    let (fh, fw, ref fmap) = trace.filtered;
    let (oh, ow) = trace.out_hw;
    let c2 = cfg.kernel_size;
    let area = (oh * ow) as f64;
    let mut d_filtered = vec![0.0; fh * fw];
    for ch in 0..m {
        let pre = &trace.pre[ch * oh * ow..(ch + 1) * oh * ow];
        let kernel = &p.conv_weight[ch * c2 * c2..(ch + 1) * c2 * c2];
        let d_pre = d_pooled[ch] / area;
        let mut d_bias = 0.0;
        for r in 0..oh {
            for col in 0..ow {
                if pre[r * ow + col] <= 0.0 {
                    continue;
                }
                d_bias += d_pre;
                for u in 0..c2 {
                    for v in 0..c2 {
                        let at = (r + u) * fw + col + v;
                        grads.conv_weight[ch * c2 * c2 + u * c2 + v] += d_pre * fmap[at];
                        d_filtered[at] += d_pre * kernel[u * c2 + v];
                    }
                }
            }
        }
        grads.conv_bias[ch] += d_bias;
    }

    let c = cfg.filter_size;
    let w = image.width();
    let pixels = image.pixels();
    let offset = trace.filter * c * c;
    for u in 0..c {
        for v in 0..c {
            let mut acc = 0.0;
            for r in 0..fh {
                for col in 0..fw {
                    acc += d_filtered[r * fw + col] * pixels[(r + u) * w + col + v];
                }
            }
            grads.filters[offset + u * c + v] += acc;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextTrace {
    token_ids: Vec<usize>,
    mean: Vec<f64>,
    norm: f64,
    pub embedding: Vec<f64>,
}

/// Vocabulary ids of `tokens`, dropping unknown tokens.
pub fn token_ids(model: &CcveModel, tokens: &TokenSeq) -> Vec<usize> {
    tokens.iter().filter_map(|t| model.vocab.id(t)).collect()
}

pub fn text_forward(model: &CcveModel, tokens: &TokenSeq) -> Result<TextTrace, CcveError> {
    let ids = token_ids(model, tokens);
    if ids.is_empty() {
        return Err(CcveError::EmptyText);
    }
    let cfg = &model.config;
    let p = &model.params;
    let dt = cfg.text_dim;
    let mut mean = vec![0.0; dt];
    for &id in &ids {
        for (acc, v) in mean
            .iter_mut()
            .zip(&p.token_embedding[id * dt..(id + 1) * dt])
        {
            *acc += v;
        }
    }
    let n = ids.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    let z: Vec<f64> = (0..cfg.embed_dim)
        .map(|i| {
            let row = &p.text_proj[i * dt..(i + 1) * dt];
            p.text_bias[i] + row.iter().zip(&mean).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect();
    let (norm, embedding) = normalize(&z)?;
    Ok(TextTrace {
        token_ids: ids,
        mean,
        norm,
        embedding,
    })
}

pub fn text_backward(
    model: &CcveModel,
    trace: &TextTrace,
    d_embedding: &[f64],
    grads: &mut Params,
) {
    let cfg = &model.config;
    let p = &model.params;
    let (d, dt) = (cfg.embed_dim, cfg.text_dim);
    let dz = normalize_backward(&trace.embedding, trace.norm, d_embedding);
    let mut d_mean = vec![0.0; dt];
    for i in 0..d {
        grads.text_bias[i] += dz[i];
        for j in 0..dt {
            grads.text_proj[i * dt + j] += dz[i] * trace.mean[j];
            d_mean[j] += p.text_proj[i * dt + j] * dz[i];
        }
    }
    let n = trace.token_ids.len() as f64;
    for &id in &trace.token_ids {
        for (g, dm) in grads.token_embedding[id * dt..(id + 1) * dt]
            .iter_mut()
            .zip(&d_mean)
        {
            *g += dm / n;
        }
    }
}

/// Unit-norm image embedding through filter `k`.
pub fn encode_image(
    model: &CcveModel,
    image: &GrayImage,
    k: usize,
) -> Result<Embedding, CcveError> {
    Ok(Embedding(image_forward(model, image, k)?.embedding))
}

/// Unit-norm text embedding; tokens outside the vocabulary are ignored.
pub fn encode_text(model: &CcveModel, tokens: &TokenSeq) -> Result<Embedding, CcveError> {
    Ok(Embedding(text_forward(model, tokens)?.embedding))
}

/// One embedding per filter, row `k` through filter `k`.
pub fn embed_all(model: &CcveModel, image: &GrayImage) -> Result<Vec<Embedding>, CcveError> {
    (0..model.config.clusters)
        .map(|k| {
            encode_image(model, image, k).map_err(|e| match e {
                CcveError::ZeroNorm { .. } => CcveError::ZeroNorm { row: Some(k) },
                other => other,
            })
        })
        .collect()
}
