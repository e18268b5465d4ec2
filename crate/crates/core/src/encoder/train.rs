use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{accumulate, example_log_prob};
use super::model::{forward, forward_pass, locate_node};
use super::params::TieParams;
use super::{EncoderConfig, ModelError, NodeExample};

/// Keeps the shuffle stream apart from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, measured before each update.
    pub loss: f64,
    /// Node-locating accuracy over the same pre-update forward passes.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: TieParams,
    pub log: Vec<EpochStats>,
}

/// Minibatch SGD with a linearly decaying learning rate.
///
/// Parameters start from the seeded uniform initialization and examples
/// are reshuffled every epoch from a generator seeded by `config.seed`, so
/// equal inputs give bit-identical results.
pub fn train(examples: &[NodeExample<'_>], config: &EncoderConfig) -> Result<Trained, ModelError> {
    train_from(examples, config, TieParams::init(config))
}

pub fn train_from(
    examples: &[NodeExample<'_>],
    config: &EncoderConfig,
    mut params: TieParams,
) -> Result<Trained, ModelError> {
    config.validate()?;
    config.check_params(&params)?;
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batches_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = (config.epochs * batches_per_epoch).max(1);
    let mut step = 0usize;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let lr = config.learning_rate * (1.0 - step as f64 / total_steps as f64);
            let weight = 1.0 / chunk.len() as f64;
            let mut grads = TieParams::zeros_like(&params);
            for &i in chunk {
                let ex = &examples[i];
                let pass = forward_pass(ex.question, ex.page, ex.tree, ex.bundle, &params, config)?;
                loss_sum -= example_log_prob(&pass, ex)?;
                if locate_node(&super::NodeDistribution {
                    probs: pass.probs.clone(),
                }) == ex.gold
                {
                    correct += 1;
                }
                accumulate(&pass, ex, &params, config, weight, &mut grads);
            }
            params.add_scaled(-lr, &grads);
            step += 1;
        }
        if !params.is_finite() {
            return Err(ModelError::NonFiniteLogits);
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / examples.len() as f64,
            accuracy: correct as f64 / examples.len() as f64,
        };
        info!(
            "epoch {:>4}  loss {:.6}  node accuracy {:.4}",
            stats.epoch, stats.loss, stats.accuracy
        );
        log.push(stats);
    }
    Ok(Trained { params, log })
}

/// Fraction of examples whose argmax node is the gold node.
pub fn node_accuracy(
    examples: &[NodeExample<'_>],
    params: &TieParams,
    config: &EncoderConfig,
) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut correct = 0;
    for ex in examples {
        let dist = forward(ex.question, ex.page, ex.tree, ex.bundle, params, config)?;
        if locate_node(&dist) == ex.gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}
