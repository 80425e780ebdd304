//! Ancestral sampling with x0 prediction, observation projection and
//! optional classifier-free guidance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::condition::{Channel, ConditionBundle, MaskSet};
use crate::error::{bail, Result};
use crate::features::MotionFeatures;
use crate::model::Denoiser;
use crate::rng::normal_matrix;
use crate::schedule::NoiseSchedule;
use crate::tensor::Matrix;

pub const OUTPUT_FPS: f64 = 30.0;

/// Cells to re-impose from a known clip after every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub values: Matrix,
    /// 0/1 per cell.
    pub observed: Matrix,
}

impl Projection {
    fn apply(&self, x: &mut Matrix, schedule: &NoiseSchedule, t: usize, rng: &mut ChaCha8Rng) {
        if t == 0 {
            for i in 0..x.data.len() {
                if self.observed.data[i] > 0.0 {
                    x.data[i] = self.values.data[i];
                }
            }
            return;
        }
        let ab = schedule.alpha_bar(t);
        let (a, b) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
        let z = normal_matrix(rng, x.rows, x.cols);
        for i in 0..x.data.len() {
            if self.observed.data[i] > 0.0 {
                x.data[i] = a * self.values.data[i] + b * z.data[i];
            }
        }
    }
}

/// Runs the reverse chain from `x_T ~ N(0, I)`. `predict(x_t, t)` returns the
/// model's estimate of `x_0`; the last step returns that estimate directly.
/// Observed cells are re-noised to the current level at intermediate steps
/// and set to the clean condition at the end.
pub fn ddpm_sample<P>(
    schedule: &NoiseSchedule,
    frames: usize,
    dim: usize,
    seed: u64,
    projection: Option<&Projection>,
    mut predict: P,
) -> Result<Matrix>
where
    P: FnMut(&Matrix, usize) -> Result<Matrix>,
{
    if let Some(p) = projection {
        if p.values.shape() != (frames, dim) || p.observed.shape() != (frames, dim) {
            bail!(Shape, "projection must be {frames} x {dim}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = normal_matrix(&mut rng, frames, dim);
    for t in (1..=schedule.steps()).rev() {
        let x0 = predict(&x, t)?;
        if x0.shape() != x.shape() {
            bail!(Shape, "prediction {:?} does not match sample {:?}", x0.shape(), x.shape());
        }
        if t == 1 {
            x = x0;
        } else {
            let (c0, ct, var) = schedule.posterior(t)?;
            let sd = libm::sqrt(var);
            let z = normal_matrix(&mut rng, frames, dim);
            for i in 0..x.data.len() {
                x.data[i] = c0 * x0.data[i] + ct * x.data[i] + sd * z.data[i];
            }
        }
        if let Some(p) = projection {
            p.apply(&mut x, schedule, t - 1, &mut rng);
        }
    }
    Ok(x)
}

/// Samples a clip from `model`. `guidance == 1` disables classifier-free
/// guidance; otherwise `x0(null) + guidance * (x0(c) - x0(null))`.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    bundle: &ConditionBundle,
    masks: &MaskSet,
    frames: usize,
    seed: u64,
    guidance: f64,
) -> Result<MotionFeatures> {
    if schedule.steps() != model.config.diffusion_steps {
        bail!(InvalidArgument, "schedule has {} steps, model expects {}", schedule.steps(), model.config.diffusion_steps);
    }
    let prefix = model.build_prefix(bundle, masks, frames)?;
    let projection = match (&bundle.global, masks.channels.contains(Channel::Global)) {
        (Some(g), true) => Some(Projection {
            values: g.values.clone(),
            observed: masks.observed(&model.skeleton).expect("validated task mask"),
        }),
        _ => None,
    };
    let null = if guidance != 1.0 {
        Some(model.build_prefix(&ConditionBundle::default(), masks, frames)?)
    } else {
        None
    };
    let values = ddpm_sample(schedule, frames, model.feature_dim(), seed, projection.as_ref(), |x, t| {
        let cond = model.denoise(x, t, &prefix)?;
        match &null {
            None => Ok(cond),
            Some(np) => {
                let unc = model.denoise(x, t, np)?;
                Ok(unc.zip_map(&cond, |u, c| u + guidance * (c - u)))
            }
        }
    })?;
    Ok(MotionFeatures::new(OUTPUT_FPS, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, ScheduleKind};

    #[test]
    fn oracle_denoiser_is_reproduced_exactly() {
        let clip = Matrix::from_vec(3, 2, alloc::vec![0.1, -2.0, 3.5, 0.0, 1e-3, 7.0]);
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            for steps in [10, 50] {
                let s = build_schedule(steps, kind).unwrap();
                let out = ddpm_sample(&s, 3, 2, 11, None, |_, _| Ok(clip.clone())).unwrap();
                assert_eq!(out, clip);
            }
        }
    }

    #[test]
    fn projection_is_bit_exact() {
        let s = build_schedule(10, ScheduleKind::Cosine).unwrap();
        let cond = Matrix::from_vec(2, 2, alloc::vec![1.0, 2.0, 3.0, 4.0]);
        let observed = Matrix::from_vec(2, 2, alloc::vec![1.0, 0.0, 0.0, 1.0]);
        let p = Projection { values: cond.clone(), observed };
        let out = ddpm_sample(&s, 2, 2, 5, Some(&p), |x, _| Ok(x.map(|v| v * 0.5))).unwrap();
        assert_eq!(out.get(0, 0), 1.0);
        assert_eq!(out.get(1, 1), 4.0);
    }
}
