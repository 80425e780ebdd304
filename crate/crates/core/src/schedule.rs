//! Variance schedules and the forward noising process.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Step `t` runs from 1 to `steps`; arrays are stored zero-based.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

pub fn build_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 2 {
        bail!(InvalidArgument, "a schedule needs at least 2 steps, got {steps}");
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let (lo, hi) = (1e-4, 2e-2);
            (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let c = libm::cos((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * core::f64::consts::FRAC_PI_2);
                c * c
            };
            let f0 = f(0.0);
            (1..=steps)
                .map(|t| {
                    let ab = f(t as f64) / f0;
                    let ab_prev = f((t - 1) as f64) / f0;
                    (1.0 - ab / ab_prev).clamp(1e-12, MAX_BETA)
                })
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    if alpha_bars[steps - 1] >= 0.05 {
        log::warn!("terminal alpha_bar {:.4} leaves signal in x_T", alpha_bars[steps - 1]);
    }
    Ok(NoiseSchedule { kind, betas, alphas, alpha_bars })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            bail!(InvalidArgument, "diffusion step {t} outside 1..={}", self.steps());
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn q_sample(&self, x0: &Matrix, t: usize, noise: &Matrix) -> Result<Matrix> {
        self.check(t)?;
        if x0.shape() != noise.shape() {
            bail!(Shape, "noise {:?} does not match sample {:?}", noise.shape(), x0.shape());
        }
        let ab = self.alpha_bar(t);
        let (a, b) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
        Ok(x0.zip_map(noise, |x, n| a * x + b * n))
    }

    /// `(coef_x0, coef_xt, variance)` of `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check(t)?;
        let (ab, ab_prev) = (self.alpha_bar(t), self.alpha_bar(t - 1));
        let beta = self.beta(t);
        let c0 = libm::sqrt(ab_prev) * beta / (1.0 - ab);
        let ct = libm::sqrt(self.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        Ok((c0, ct, var))
    }
}
