//! Shared setups for the encoder tests: the planted-pattern training run and
//! small random gradient-check problems.

#![allow(dead_code)]

use cxr_core::ccve::eval::{embedding_silhouette, retrieval_accuracy, RETRIEVAL_BATCH};
use cxr_core::ccve::gradcheck::{grad_check_with, GradCheckReport};
use cxr_core::ccve::{backward, train, Params, TrainOutcome, Vocabulary};
use cxr_core::synth::{planted_dataset, random_batch, PlantedConfig};
use cxr_core::{CcveConfig, CcveModel, TrainConfig, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEPS: usize = 2000;
pub const LEARNING_RATE: f64 = 0.1;

pub fn planted_samples(seed: u64) -> Vec<TrainSample> {
    planted_dataset(&PlantedConfig {
        seed,
        ..PlantedConfig::default()
    })
    .unwrap()
    .iter()
    .map(|s| s.to_train_sample())
    .collect()
}

pub fn vocab_of(samples: &[TrainSample]) -> Vocabulary {
    Vocabulary::new(samples.iter().flat_map(|s| s.tokens.iter().cloned()))
}

pub struct RunResult {
    pub outcome: TrainOutcome,
    pub retrieval: f64,
    pub silhouette: f64,
}

/// Trains the default encoder (or the K = 1 baseline) on the planted set.
pub fn planted_run(baseline: bool, seed: u64) -> RunResult {
    let samples = planted_samples(seed);
    let config = if baseline {
        CcveConfig::default().cve_baseline()
    } else {
        CcveConfig::default()
    };
    let model = CcveModel::init(config, vocab_of(&samples), seed).unwrap();
    let outcome = train(
        model,
        &samples,
        &TrainConfig {
            steps: STEPS,
            batch_size: 16,
            learning_rate: LEARNING_RATE,
            seed,
        },
    )
    .unwrap();
    let retrieval = retrieval_accuracy(&outcome.model, &samples, RETRIEVAL_BATCH, seed).unwrap();
    let silhouette = embedding_silhouette(&outcome.model, &samples)
        .unwrap()
        .unwrap();
    RunResult {
        outcome,
        retrieval,
        silhouette,
    }
}

/// A small model with seed-drawn sizes and a matching random batch.
pub fn random_problem(seed: u64) -> (CcveModel, Vec<TrainSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = CcveConfig {
        clusters: rng.gen_range(2..=4),
        filter_size: rng.gen_range(2..=3),
        channels: rng.gen_range(2..=4),
        kernel_size: rng.gen_range(2..=3),
        embed_dim: rng.gen_range(3..=6),
        text_dim: rng.gen_range(3..=5),
        frozen_filters: false,
    };
    let vocab = Vocabulary::new(["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]);
    let model = CcveModel::init(config, vocab, seed).unwrap();
    let batch = random_batch(&model, 4, 8, seed.wrapping_add(1000));
    (model, batch)
}

/// Exact gradient with one conv weight coordinate deliberately wrong.
pub fn corrupted_gradient(
    model: &CcveModel,
    batch: &[TrainSample],
) -> Result<Params, cxr_core::CcveError> {
    let (_, mut grads) = backward(model, batch)?;
    grads.conv_weight[0] = grads.conv_weight[0] * 1.5 + 0.1;
    Ok(grads)
}

pub fn mutant_check(seed: u64) -> GradCheckReport {
    let (model, batch) = random_problem(seed);
    grad_check_with(&model, &batch, 1e-5, corrupted_gradient).unwrap()
}
