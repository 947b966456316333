//! Cosine noise schedule and the forward noising process.

use super::DiffusionError;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

pub const BETA_MAX: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

/// Per-step arrays indexed by `t − 1` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

fn cosine_f(t: f64, steps: f64) -> f64 {
    (((t / steps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * FRAC_PI_2).cos().powi(2)
}

/// Squared-cosine schedule with betas clipped at 0.999.
pub fn cosine_schedule(steps: usize) -> Result<DiffusionSchedule, DiffusionError> {
    if steps < 2 {
        return Err(DiffusionError::InvalidParams(format!("schedule needs T >= 2, got {steps}")));
    }
    let f0 = cosine_f(0.0, steps as f64);
    let mut betas = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut prev_target = 1.0;
    let mut bar = 1.0;
    for t in 1..=steps {
        let target = cosine_f(t as f64, steps as f64) / f0;
        let beta = (1.0 - target / prev_target).min(BETA_MAX);
        prev_target = target;
        bar *= 1.0 - beta;
        betas.push(beta);
        alphas.push(1.0 - beta);
        alpha_bars.push(bar);
    }
    Ok(DiffusionSchedule { steps, betas, alphas, alpha_bars })
}

impl DiffusionSchedule {
    /// ᾱ_t with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Posterior variance β̃_t = β_t·(1 − ᾱ_{t−1})/(1 − ᾱ_t).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps {
            return Err(DiffusionError::InvalidParams(format!("timestep {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }
}

/// `x_t = √ᾱ_t·x0 + √(1 − ᾱ_t)·eps`.
pub fn add_noise(x0: &[f64], eps: &[f64], t: usize, sched: &DiffusionSchedule) -> Result<Vec<f64>, DiffusionError> {
    sched.check(t)?;
    if x0.len() != eps.len() {
        return Err(DiffusionError::Shape(format!("x0 has {} values, eps {}", x0.len(), eps.len())));
    }
    let ab = sched.alpha_bar(t);
    Ok(mix(x0, eps, ab))
}

pub(crate) fn mix(x0: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        for t in [10, 50, 100] {
            let s = cosine_schedule(t).unwrap();
            assert_eq!(s.betas.len(), t);
            assert!(s.betas.iter().all(|b| *b > 0.0 && *b <= BETA_MAX));
            assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
            assert!(s.alpha_bar(1) < 1.0);
        }
        assert!(cosine_schedule(50).unwrap().alpha_bar(50) < 0.01);
        assert!(cosine_schedule(1).is_err());
    }

    #[test]
    fn noising_limits() {
        assert_eq!(mix(&[1.0, 2.0], &[5.0, 6.0], 1.0), vec![1.0, 2.0]);
        assert_eq!(mix(&[1.0, 2.0], &[5.0, 6.0], 0.0), vec![5.0, 6.0]);
        let x = mix(&[1.0, 2.0], &[0.0, -1.0], 0.25);
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!((x[1] - (1.0 - 0.75f64.sqrt())).abs() < 1e-15);
        let s = cosine_schedule(50).unwrap();
        assert!(add_noise(&[1.0], &[1.0], 0, &s).is_err());
        assert!(add_noise(&[1.0], &[1.0], 51, &s).is_err());
        assert!(add_noise(&[1.0], &[1.0, 2.0], 3, &s).is_err());
    }
}
