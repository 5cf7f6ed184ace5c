//! Symmetric contrastive loss over a batch of paired unit embeddings.

#![allow(clippy::needless_range_loop)]

/// Loss value and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipLossGrad {
    pub loss: f64,
    /// ∂loss/∂Z, B rows.
    pub d_images: Vec<Vec<f64>>,
    /// ∂loss/∂T, B rows.
    pub d_texts: Vec<Vec<f64>>,
    /// ∂loss/∂inv_tau.
    pub d_inv_tau: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Cosine similarities Z·Tᵀ.
fn similarities(images: &[Vec<f64>], texts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    images
        .iter()
        .map(|z| texts.iter().map(|t| dot(z, t)).collect())
        .collect()
}

/// `½ · (mean row CE + mean column CE)` of `inv_tau · Z·Tᵀ` with diagonal
/// targets.
pub fn clip_loss(images: &[Vec<f64>], texts: &[Vec<f64>], inv_tau: f64) -> f64 {
    assert_eq!(images.len(), texts.len(), "batch halves differ in size");
    let b = images.len();
    if b == 0 {
        return 0.0;
    }
    let s: Vec<Vec<f64>> = similarities(images, texts)
        .into_iter()
        .map(|row| row.into_iter().map(|x| inv_tau * x).collect())
        .collect();
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..b {
        rows += log_sum_exp(s[i].iter().copied()) - s[i][i];
        cols += log_sum_exp((0..b).map(|r| s[r][i])) - s[i][i];
    }
    0.5 * (rows + cols) / b as f64
}

pub fn clip_loss_grad(images: &[Vec<f64>], texts: &[Vec<f64>], inv_tau: f64) -> ClipLossGrad {
    assert_eq!(images.len(), texts.len(), "batch halves differ in size");
    let b = images.len();
    let d = images.first().map_or(0, Vec::len);
    let cos = similarities(images, texts);
    let s: Vec<Vec<f64>> = cos
        .iter()
        .map(|row| row.iter().map(|x| inv_tau * x).collect())
        .collect();

    // g[i][j] = ∂loss/∂S[i][j]
    let scale = 0.5 / b as f64;
    let mut g = vec![vec![0.0; b]; b];
    let mut loss = 0.0;
    for i in 0..b {
        let lse = log_sum_exp(s[i].iter().copied());
        loss += lse - s[i][i];
        for j in 0..b {
            g[i][j] += scale * (s[i][j] - lse).exp();
        }
        g[i][i] -= scale;
    }
    for j in 0..b {
        let lse = log_sum_exp((0..b).map(|r| s[r][j]));
        loss += lse - s[j][j];
        for i in 0..b {
            g[i][j] += scale * (s[i][j] - lse).exp();
        }
        g[j][j] -= scale;
    }
    loss *= scale;

    let mut d_images = vec![vec![0.0; d]; b];
    let mut d_texts = vec![vec![0.0; d]; b];
    let mut d_inv_tau = 0.0;
    for i in 0..b {
        for j in 0..b {
            let gij = g[i][j];
            d_inv_tau += gij * cos[i][j];
            for k in 0..d {
                d_images[i][k] += inv_tau * gij * texts[j][k];
                d_texts[j][k] += inv_tau * gij * images[i][k];
            }
        }
    }
    ClipLossGrad {
        loss,
        d_images,
        d_texts,
        d_inv_tau,
    }
}
