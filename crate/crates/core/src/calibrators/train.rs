use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::diffnet::{loss_and_gradients, AdamConfig, Batch, FeatureMap, NetError, Network, Objective, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: u64,
    /// Mean loss over the training samples before the first update.
    pub initial_loss: f64,
    /// Mean loss over the training samples after the last update.
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Mean per-element loss over the samples in `ids`, forward passes only.
pub(crate) fn mean_loss(
    net: &Network<f32>,
    inputs: &[FeatureMap<f32>],
    lead_times: &[usize],
    ids: &[usize],
    objective: &dyn Objective<f32>,
) -> Result<f64, NetError> {
    let (mut total, mut count) = (0.0, 0usize);
    for &id in ids {
        let out = net.forward(&inputs[id], lead_times[id])?;
        let (loss, _, n) = objective.sample_loss(id, &out)?;
        total += loss;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

/// Mini-batch Adam over the samples in `ids`, reshuffled every epoch from a
/// stream of `settings.seed`.
pub(crate) fn train(
    net: &mut Network<f32>,
    inputs: &[FeatureMap<f32>],
    lead_times: &[usize],
    ids: &[usize],
    objective: &dyn Objective<f32>,
    settings: TrainSettings,
) -> Result<TrainSummary, CalibrationError> {
    let diverged = |epoch: usize| {
        move |e: NetError| match e {
            NetError::NonFinite(detail) => CalibrationError::Diverged { epoch, detail },
            other => other.into(),
        }
    };
    let initial_loss = mean_loss(net, inputs, lead_times, ids, objective).map_err(diverged(0))?;
    let mut optimizer = OptimizerState::new(
        AdamConfig {
            learning_rate: settings.learning_rate,
            ..AdamConfig::default()
        },
        net.params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(2);
    let mut order = ids.to_vec();
    let batch_size = settings.batch_size.max(1);
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch = Batch {
                inputs: chunk.iter().map(|&i| &inputs[i]).collect(),
                lead_times: chunk.iter().map(|&i| lead_times[i]).collect(),
                sample_ids: chunk.to_vec(),
            };
            let (loss, grads) = loss_and_gradients(net, &batch, objective).map_err(diverged(epoch))?;
            if !loss.is_finite() || grads.0.iter().flatten().any(|g| !g.is_finite()) {
                return Err(CalibrationError::Diverged {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            optimizer.step(net.params_mut(), &grads);
        }
        log::debug!("epoch {epoch}/{} finished", settings.epochs);
    }
    let last = settings.epochs;
    let final_loss = mean_loss(net, inputs, lead_times, ids, objective).map_err(diverged(last))?;
    if !final_loss.is_finite() {
        return Err(CalibrationError::Diverged {
            epoch: last,
            detail: "non-finite loss".into(),
        });
    }
    Ok(TrainSummary {
        epochs: settings.epochs,
        steps: optimizer.step,
        initial_loss,
        final_loss,
    })
}
