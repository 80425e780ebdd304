//! Masked clean-sample regression loss.

use alloc::vec::Vec;

use rand::Rng;

use crate::condition::{ConditionBundle, MaskSet};
use crate::error::{bail, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::model::Denoiser;
use crate::nn::Dropout;
use crate::rng::normal_matrix;
use crate::schedule::NoiseSchedule;
use crate::tensor::Matrix;

/// One clip with its conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub x0: Matrix,
    pub bundle: ConditionBundle,
    pub masks: MaskSet,
}

/// Diffusion step and noise for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub noise: Matrix,
}

pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, batch: &[TrainingSample], schedule: &NoiseSchedule) -> Vec<NoiseDraw> {
    batch
        .iter()
        .map(|s| {
            let t = rng.gen_range(1..=schedule.steps());
            NoiseDraw { t, noise: normal_matrix(rng, s.x0.rows, s.x0.cols) }
        })
        .collect()
}

/// Total number of supervised cells across the batch.
pub fn supervised_count(model: &Denoiser, batch: &[TrainingSample]) -> f64 {
    batch.iter().map(|s| s.masks.loss_weights(&model.skeleton, s.x0.rows).sum()).sum()
}

/// Records one sample's contribution, already divided by `total`.
///
/// Unsupervised cells of `x0` are zeroed before noising, so neither the
/// input nor the target depends on their ground truth.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss_on_graph(
    model: &Denoiser,
    g: &mut Graph,
    sample: &TrainingSample,
    schedule: &NoiseSchedule,
    draw: &NoiseDraw,
    total: f64,
    drop: &mut Option<Dropout<'_>>,
) -> Result<NodeId> {
    let frames = sample.x0.rows;
    let mut weights = sample.masks.loss_weights(&model.skeleton, frames);
    if weights.shape() != sample.x0.shape() {
        bail!(Shape, "clip {:?} does not match feature layout {:?}", sample.x0.shape(), weights.shape());
    }
    let x0 = sample.x0.zip_map(&weights, |x, w| if w > 0.0 { x } else { 0.0 });
    weights.scale_in_place(1.0 / total);
    let x_t = schedule.q_sample(&x0, draw.t, &draw.noise)?;
    let (prefix, mask, _) = model.prefix_on_graph(g, &sample.bundle, &sample.masks, frames)?;
    let pred = model.denoise_on_graph(g, &x_t, draw.t, prefix, &mask, drop)?;
    Ok(g.weighted_sq_err(pred, x0, weights))
}

/// Batch loss and parameter gradients. Samples are reduced in batch order.
pub fn loss_and_grad(
    model: &Denoiser,
    batch: &[TrainingSample],
    schedule: &NoiseSchedule,
    draws: &[NoiseDraw],
    mut dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<(f64, Gradients)> {
    assert_eq!(batch.len(), draws.len(), "one noise draw per sample");
    let total = supervised_count(model, batch);
    if total <= 0.0 {
        bail!(InvalidArgument, "batch has no supervised cells");
    }
    let mut grads = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for (sample, draw) in batch.iter().zip(draws) {
        let mut g = Graph::new(&model.params);
        let mut drop = dropout_rng
            .as_deref_mut()
            .filter(|_| model.config.dropout > 0.0)
            .map(|rng| Dropout { rate: model.config.dropout, rng });
        let l = sample_loss_on_graph(model, &mut g, sample, schedule, draw, total, &mut drop)?;
        loss += g.value(l).data[0];
        grads.add_assign(&g.backward(l));
    }
    Ok((loss, grads))
}

/// Batch loss without gradients.
pub fn training_loss(model: &Denoiser, batch: &[TrainingSample], schedule: &NoiseSchedule, draws: &[NoiseDraw]) -> Result<f64> {
    let total = supervised_count(model, batch);
    if total <= 0.0 {
        bail!(InvalidArgument, "batch has no supervised cells");
    }
    let mut loss = 0.0;
    for (sample, draw) in batch.iter().zip(draws) {
        let mut g = Graph::new(&model.params);
        let l = sample_loss_on_graph(model, &mut g, sample, schedule, draw, total, &mut None)?;
        loss += g.value(l).data[0];
    }
    Ok(loss)
}

/// The same masked mean for an arbitrary prediction, for oracle checks.
pub fn masked_mse(pred: &Matrix, x0: &Matrix, weights: &Matrix) -> Result<f64> {
    let total = weights.sum();
    if total <= 0.0 {
        bail!(InvalidArgument, "no supervised cells");
    }
    let mut s = 0.0;
    for i in 0..pred.data.len() {
        if weights.data[i] > 0.0 {
            let d = pred.data[i] - x0.data[i];
            s += weights.data[i] * d * d;
        }
    }
    Ok(s / total)
}
