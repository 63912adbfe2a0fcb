//! Linear β schedule shared by both diffusion models.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `β_t`, `α_t = 1 − β_t` and `ᾱ_t = Π_{i≤t} α_i` for `t = 1..=T`.
///
/// Accessors take 1-based timesteps; the backing vectors store `t` at index `t − 1`.
/// `alpha_bar(0)` is defined as 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `β_t = β_start + (t − 1)/(T − 1) · (β_end − β_start)`.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::Config(format!(
                "need at least 2 timesteps, got {timesteps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta range must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let span = (timesteps - 1) as f64;
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| beta_start + i as f64 / span * (beta_end - beta_start))
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(timesteps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            timesteps,
            beta_start,
            beta_end,
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// T = 50, β from 1e-5 to 2e-2.
    pub fn default_linear() -> Self {
        Self::linear(50, 1e-5, 2e-2).expect("default schedule is valid")
    }

    /// Re-derives the schedule from its parameters and checks stored arrays agree.
    pub fn validate(&self) -> Result<()> {
        let fresh = Self::linear(self.timesteps, self.beta_start, self.beta_end)?;
        if fresh != *self {
            return Err(Error::Config(
                "stored noise schedule is inconsistent".into(),
            ));
        }
        Ok(())
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps {
            return Err(Error::Timestep {
                t,
                max: self.timesteps,
            });
        }
        Ok(())
    }

    /// Panics unless `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}
