//! Embedding-space diagnostics: in-batch retrieval and silhouette.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{encode_image, encode_text, CcveError, CcveModel, Embedding, TrainSample};

/// Batch size used for in-batch retrieval.
pub const RETRIEVAL_BATCH: usize = 16;

/// Image embeddings through each sample's own cluster filter.
pub fn own_cluster_embeddings(
    model: &CcveModel,
    samples: &[TrainSample],
) -> Result<Vec<Embedding>, CcveError> {
    samples
        .iter()
        .map(|s| encode_image(model, &s.image, model.filter_index(s.cluster)?))
        .collect()
}

/// Top-1 in-batch retrieval accuracy in both directions (image→text and
/// text→image), averaged. Samples are shuffled with `seed` and cut into
/// batches of `batch_size`; a retrieval counts as correct when the retrieved
/// partner carries the query's cluster, since same-cluster samples share
/// their impression text. Ties go to the lowest index.
pub fn retrieval_accuracy(
    model: &CcveModel,
    samples: &[TrainSample],
    batch_size: usize,
    seed: u64,
) -> Result<f64, CcveError> {
    if samples.is_empty() {
        return Err(CcveError::EmptyDataset);
    }
    let images = own_cluster_embeddings(model, samples)?;
    let texts: Vec<Embedding> = samples
        .iter()
        .map(|s| encode_text(model, &s.tokens))
        .collect::<Result<_, _>>()?;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let argmax = |query: &Embedding, pool: &[usize], keys: &[Embedding]| {
        let mut best = pool[0];
        let mut best_sim = f64::NEG_INFINITY;
        for &j in pool {
            let sim = query.cosine(&keys[j]);
            if sim > best_sim {
                best_sim = sim;
                best = j;
            }
        }
        best
    };

    let mut correct = 0usize;
    for batch in order.chunks(batch_size.max(1)) {
        for &i in batch {
            if samples[argmax(&images[i], batch, &texts)].cluster == samples[i].cluster {
                correct += 1;
            }
            if samples[argmax(&texts[i], batch, &images)].cluster == samples[i].cluster {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (2 * samples.len()) as f64)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient under Euclidean distance. Points in singleton
/// clusters score 0. Returns `None` with fewer than two distinct labels.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    assert_eq!(points.len(), labels.len(), "one label per point");
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return None;
    }
    let slot = |label: usize| distinct.binary_search(&label).unwrap();

    let n = points.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; distinct.len()];
    let mut counts = vec![0usize; distinct.len()];
    for &l in labels {
        counts[slot(l)] += 1;
    }
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[slot(labels[j])] += euclidean(&points[i], &points[j]);
            }
        }
        let own = slot(labels[i]);
        if counts[own] == 1 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..distinct.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let scale = a.max(b);
        if scale > 0.0 {
            total += (b - a) / scale;
        }
    }
    Some(total / n as f64)
}

/// Silhouette of own-cluster image embeddings grouped by true cluster.
pub fn embedding_silhouette(
    model: &CcveModel,
    samples: &[TrainSample],
) -> Result<Option<f64>, CcveError> {
    let points: Vec<Vec<f64>> = own_cluster_embeddings(model, samples)?
        .into_iter()
        .map(|e| e.0)
        .collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.cluster).collect();
    Ok(silhouette(&points, &labels))
}

/// Largest cosine between two distinct rows.
pub fn max_offdiagonal_cosine(rows: &[Embedding]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            worst = worst.max(rows[i].cosine(&rows[j]));
        }
    }
    worst
}
