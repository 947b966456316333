//! The conditional denoiser, its training step, reverse sampling and checkpoints.

use super::normalize::Normalizer;
use super::schedule::{cosine_schedule, mix, DiffusionSchedule};
use super::window::TrainingWindow;
use super::DiffusionError;
use crate::nn::{forward_unet, unet_apply, AdamParams, Graph, ParamStore, Tensor, UNetSpec};
use crate::rl::{Episode, OBS_WIDTH_DIFFUSION};
use crate::sim::{HandModel, ARM_JOINTS, HAND_JOINTS};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub obs_horizon: usize,
    pub pred_horizon: usize,
    pub exec_horizon: usize,
    pub diffusion_steps: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub widths: [usize; 2],
    pub kernel: usize,
    pub emb_dim: usize,
    pub group_size: usize,
    /// Validate every this many iterations (0 disables periodic validation).
    pub val_interval: usize,
    pub val_episodes: usize,
    /// Control steps per validation rollout before the drop test.
    pub rollout_step_cap: usize,
    /// Redraw the robot pose for every validation rollout.
    pub randomize_robot_pose: bool,
    /// Clip the predicted clean block to the normalized range at every
    /// reverse step.
    pub clip_sample: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            obs_horizon: 2,
            pred_horizon: 8,
            exec_horizon: 4,
            diffusion_steps: 50,
            iterations: 5000,
            batch_size: 16,
            learning_rate: 3e-4,
            widths: [32, 64],
            kernel: 5,
            emb_dim: 32,
            group_size: 8,
            val_interval: 500,
            val_episodes: 50,
            rollout_step_cap: 400,
            randomize_robot_pose: true,
            clip_sample: true,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::InvalidParams(m.to_string()));
        if self.obs_horizon == 0 {
            return bad("obs_horizon must be positive");
        }
        if self.pred_horizon == 0 || self.pred_horizon % 4 != 0 {
            return bad("pred_horizon must be a positive multiple of 4");
        }
        if self.exec_horizon == 0 || self.exec_horizon > self.pred_horizon {
            return bad("exec_horizon must lie in 1..=pred_horizon");
        }
        if self.diffusion_steps < 2 {
            return bad("diffusion_steps must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.val_interval > 0 && self.val_episodes == 0 {
            return bad("val_episodes must be positive when validating");
        }
        if self.rollout_step_cap == 0 {
            return bad("rollout_step_cap must be positive");
        }
        self.unet_spec().validate()?;
        Ok(())
    }

    pub fn unet_spec(&self) -> UNetSpec {
        UNetSpec {
            widths: self.widths,
            kernel: self.kernel,
            emb_dim: self.emb_dim,
            group_size: self.group_size,
            ..UNetSpec::new(HAND_JOINTS, self.pred_horizon, self.obs_horizon * OBS_WIDTH_DIFFUSION)
        }
    }
}

/// Predicts the noise added to a normalized action block.
pub trait NoiseModel {
    /// `x`: [B, H, A], `cond`: [B, C], `t`: B timesteps.
    fn predict_noise(&self, x: &Tensor, cond: &Tensor, t: &[f64]) -> Result<Tensor, DiffusionError>;
}

#[derive(Debug, Clone)]
pub struct DiffusionPolicy {
    pub spec: UNetSpec,
    pub params: ParamStore,
    pub schedule: DiffusionSchedule,
    pub obs_norm: Normalizer,
    pub action_norm: Normalizer,
    pub obs_horizon: usize,
    pub pred_horizon: usize,
    pub exec_horizon: usize,
    pub action_limits: [[f64; 2]; HAND_JOINTS],
    pub learning_rate: f64,
    pub clip_sample: bool,
}

impl NoiseModel for DiffusionPolicy {
    fn predict_noise(&self, x: &Tensor, cond: &Tensor, t: &[f64]) -> Result<Tensor, DiffusionError> {
        Ok(unet_apply(&self.params, &self.spec, x, cond, t)?)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    unet: UNetSpec,
    schedule: String,
    diffusion_steps: usize,
    obs_horizon: usize,
    pred_horizon: usize,
    exec_horizon: usize,
    obs_norm: Normalizer,
    action_norm: Normalizer,
    action_limits: [[f64; 2]; HAND_JOINTS],
    learning_rate: f64,
    clip_sample: bool,
}

impl DiffusionPolicy {
    /// Fresh network with normalizers fitted to `episodes`.
    pub fn new<R: Rng + ?Sized>(
        cfg: &DiffusionConfig,
        episodes: &[Episode],
        hand: &HandModel,
        rng: &mut R,
    ) -> Result<Self, DiffusionError> {
        cfg.validate()?;
        let steps = episodes.iter().flat_map(|e| &e.steps);
        let obs_norm = Normalizer::fit(steps.clone().map(|s| s.obs.as_slice()), OBS_WIDTH_DIFFUSION)?;
        let action_norm = Normalizer::fit(steps.map(|s| s.action.as_slice()), HAND_JOINTS)?;
        let spec = cfg.unet_spec();
        let params = spec.init(rng)?;
        let mut action_limits = [[0.0; 2]; HAND_JOINTS];
        action_limits.copy_from_slice(&hand.joint_limits[ARM_JOINTS..]);
        Ok(Self {
            spec,
            params,
            schedule: cosine_schedule(cfg.diffusion_steps)?,
            obs_norm,
            action_norm,
            obs_horizon: cfg.obs_horizon,
            pred_horizon: cfg.pred_horizon,
            exec_horizon: cfg.exec_horizon,
            action_limits,
            learning_rate: cfg.learning_rate,
            clip_sample: cfg.clip_sample,
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.obs_horizon * OBS_WIDTH_DIFFUSION
    }

    pub fn cond_tensor(&self, histories: &[&[f64]]) -> Result<Tensor, DiffusionError> {
        let mut data = Vec::with_capacity(histories.len() * self.cond_dim());
        for h in histories {
            if h.len() != self.cond_dim() {
                return Err(DiffusionError::Shape(format!("history width {} != {}", h.len(), self.cond_dim())));
            }
            data.extend(self.obs_norm.normalize(h));
        }
        Ok(Tensor::new(vec![histories.len(), self.cond_dim()], data)?)
    }

    /// One optimizer step on the noise-prediction objective; returns the loss.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[&TrainingWindow], rng: &mut R) -> Result<f64, DiffusionError> {
        if batch.is_empty() {
            return Err(DiffusionError::EmptyDataset);
        }
        let b = batch.len();
        let block = self.pred_horizon * HAND_JOINTS;
        let histories: Vec<&[f64]> = batch.iter().map(|w| w.obs_history.as_slice()).collect();
        let cond = self.cond_tensor(&histories)?;
        let mut xt = Vec::with_capacity(b * block);
        let mut eps = Vec::with_capacity(b * block);
        let mut ts = Vec::with_capacity(b);
        for w in batch {
            if w.actions.len() != block {
                return Err(DiffusionError::Shape(format!("action block {} != {block}", w.actions.len())));
            }
            let t = rng.random_range(1..=self.schedule.steps);
            let e: Vec<f64> = (0..block).map(|_| rng.sample(StandardNormal)).collect();
            let x0 = self.action_norm.normalize(&w.actions);
            xt.extend(mix(&x0, &e, self.schedule.alpha_bar(t)));
            eps.extend(e);
            ts.push(t as f64);
        }
        let shape = vec![b, self.pred_horizon, HAND_JOINTS];
        let grads;
        let loss;
        {
            let mut g = Graph::new();
            let x = g.input(Tensor::new(shape.clone(), xt)?);
            let c = g.input(cond);
            let t = g.input(Tensor::from_vec(ts));
            let target = g.input(Tensor::new(shape, eps)?);
            let pred = forward_unet(&mut g, &self.params, &self.spec, x, c, t)?;
            let l = g.mse(pred, target)?;
            loss = g.value(l).item();
            if !loss.is_finite() {
                return Err(DiffusionError::Nn(crate::nn::NnError::NonFiniteLoss));
            }
            grads = g.backward(l)?.param_grads(&self.params);
        }
        self.params.adam_step(&grads, &AdamParams::with_lr(self.learning_rate))?;
        Ok(loss)
    }

    /// Samples one action block per history. Row `b` draws all of its noise
    /// from `rngs[b]`, so results do not depend on batch composition.
    pub fn sample_actions<R: Rng>(
        &self,
        histories: &[&[f64]],
        rngs: &mut [R],
    ) -> Result<Vec<Vec<[f64; HAND_JOINTS]>>, DiffusionError> {
        let cond = self.cond_tensor(histories)?;
        let clip = self.clip_sample.then_some(1.0);
        let x0 = ddpm_sample(self, &cond, self.pred_horizon, HAND_JOINTS, &self.schedule, clip, rngs)?;
        let block = self.pred_horizon * HAND_JOINTS;
        Ok(x0
            .data()
            .chunks(block)
            .map(|row| {
                let raw = self.action_norm.denormalize(row);
                raw.chunks(HAND_JOINTS)
                    .map(|a| {
                        let mut out = [0.0; HAND_JOINTS];
                        for j in 0..HAND_JOINTS {
                            let [lo, hi] = self.action_limits[j];
                            out[j] = a[j].clamp(lo, hi);
                        }
                        out
                    })
                    .collect()
            })
            .collect())
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), DiffusionError> {
        let meta = PolicyMeta {
            unet: self.spec.clone(),
            schedule: "cosine".into(),
            diffusion_steps: self.schedule.steps,
            obs_horizon: self.obs_horizon,
            pred_horizon: self.pred_horizon,
            exec_horizon: self.exec_horizon,
            obs_norm: self.obs_norm.clone(),
            action_norm: self.action_norm.clone(),
            action_limits: self.action_limits,
            learning_rate: self.learning_rate,
            clip_sample: self.clip_sample,
        };
        let meta = serde_json::to_value(&meta).map_err(|e| DiffusionError::Io(e.to_string()))?;
        Ok(self.params.save(dir, stem, meta)?)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, DiffusionError> {
        let (params, meta) = ParamStore::load(dir, stem)?;
        let meta: PolicyMeta = serde_json::from_value(meta).map_err(|e| DiffusionError::Io(e.to_string()))?;
        if meta.schedule != "cosine" {
            return Err(DiffusionError::Io(format!("unsupported schedule `{}`", meta.schedule)));
        }
        Ok(Self {
            spec: meta.unet,
            params,
            schedule: cosine_schedule(meta.diffusion_steps)?,
            obs_norm: meta.obs_norm,
            action_norm: meta.action_norm,
            obs_horizon: meta.obs_horizon,
            pred_horizon: meta.pred_horizon,
            exec_horizon: meta.exec_horizon,
            action_limits: meta.action_limits,
            learning_rate: meta.learning_rate,
            clip_sample: meta.clip_sample,
        })
    }
}

/// Ancestral DDPM sampling with the posterior variance. Returns the
/// normalized block `[B, horizon, dim]`.
///
/// With `clip = Some(c)` each step first forms the clean estimate
/// `(x_t − √(1 − ᾱ_t)·ε̂)/√ᾱ_t`, clamps it to `[−c, c]` and takes the
/// posterior mean from it. Without clipping this is the same update as
/// [`reverse_mean`]; with it, noise-prediction error at the last few steps
/// (where `1/√α_t` is large) cannot throw samples far out of range.
pub fn ddpm_sample<M: NoiseModel + ?Sized, R: Rng>(
    model: &M,
    cond: &Tensor,
    horizon: usize,
    dim: usize,
    sched: &DiffusionSchedule,
    clip: Option<f64>,
    rngs: &mut [R],
) -> Result<Tensor, DiffusionError> {
    let b = cond.rows_cols().0;
    if rngs.len() != b {
        return Err(DiffusionError::Shape(format!("{} rngs for batch {b}", rngs.len())));
    }
    let block = horizon * dim;
    let mut x: Vec<f64> = Vec::with_capacity(b * block);
    for rng in rngs.iter_mut() {
        x.extend((0..block).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }
    for t in (1..=sched.steps).rev() {
        let xt = Tensor::new(vec![b, horizon, dim], x)?;
        let eps = model.predict_noise(&xt, cond, &vec![t as f64; b])?;
        let mut next = match clip {
            None => reverse_mean(xt.data(), eps.data(), t, sched),
            Some(c) => clipped_reverse_mean(xt.data(), eps.data(), t, sched, c),
        };
        if t > 1 {
            let sigma = sched.posterior_variance(t).sqrt();
            for (row, rng) in next.chunks_mut(block).zip(rngs.iter_mut()) {
                for v in row.iter_mut() {
                    *v += sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        x = next;
    }
    Ok(Tensor::new(vec![b, horizon, dim], x)?)
}

/// Mean of the reverse step, `(x_t − β_t/√(1 − ᾱ_t)·ε̂)/√α_t`.
pub fn reverse_mean(xt: &[f64], eps: &[f64], t: usize, sched: &DiffusionSchedule) -> Vec<f64> {
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    xt.iter().zip(eps).map(|(x, e)| inv * (x - coef * e)).collect()
}

/// Posterior mean `μ̃(x_t, x̂_0)` with `x̂_0` clamped to `[−c, c]`.
pub fn clipped_reverse_mean(xt: &[f64], eps: &[f64], t: usize, sched: &DiffusionSchedule, c: f64) -> Vec<f64> {
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let beta = sched.beta(t);
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    xt.iter()
        .zip(eps)
        .map(|(x, e)| {
            let x0 = ((x - sb * e) / sa).clamp(-c, c);
            c0 * x0 + ct * x
        })
        .collect()
}
