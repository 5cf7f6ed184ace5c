use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, CcveError, CcveModel, TrainSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CcveModel,
    /// Batch loss before each step's update.
    pub loss_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Plain mini-batch gradient descent. Batches are consecutive slices of a
/// seeded shuffle, reshuffled whenever fewer than a full batch remain. The
/// temperature is clamped after every step; frozen filters never move.
pub fn train(
    model: CcveModel,
    dataset: &[TrainSample],
    config: &TrainConfig,
) -> Result<TrainOutcome, CcveError> {
    if dataset.is_empty() {
        return Err(CcveError::EmptyDataset);
    }
    for sample in dataset {
        model.filter_index(sample.cluster)?;
    }
    let mut warnings = Vec::new();
    if model.config.clusters > 1 {
        let covered: BTreeSet<usize> = dataset.iter().map(|s| s.cluster).collect();
        let missing: Vec<usize> = (0..model.config.clusters)
            .filter(|k| !covered.contains(k))
            .collect();
        if !missing.is_empty() {
            warnings.push(format!(
                "clusters {missing:?} have no training samples; their filters stay at init"
            ));
        }
    }

    let mut model = model;
    let batch_size = config.batch_size.clamp(1, dataset.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut loss_history = Vec::with_capacity(config.steps);
    let mut batch = Vec::with_capacity(batch_size);

    for step in 0..config.steps {
        if cursor + batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        batch.clear();
        batch.extend(
            order[cursor..cursor + batch_size]
                .iter()
                .map(|&i| dataset[i].clone()),
        );
        cursor += batch_size;

        // After the first update a collapsed embedding means the run blew up.
        let (loss, mut grads) = match backward(&model, &batch) {
            Err(CcveError::ZeroNorm { .. }) if step > 0 => {
                return Err(CcveError::Divergence { step })
            }
            other => other?,
        };
        if !loss.is_finite() || !grads.is_finite() {
            return Err(CcveError::Divergence { step });
        }
        loss_history.push(loss);
        if model.config.frozen_filters {
            grads.filters.iter_mut().for_each(|g| *g = 0.0);
        }
        model.params.add_scaled(-config.learning_rate, &grads);
        model.clamp_temperature();
        if !model.params.is_finite() {
            return Err(CcveError::Divergence { step });
        }
    }
    Ok(TrainOutcome {
        model,
        loss_history,
        warnings,
    })
}
