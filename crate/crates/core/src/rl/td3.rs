//! Twin-delayed deterministic policy gradient on one-step grasp episodes.

use super::RlError;
use crate::nn::{forward_mlp, mlp_apply, AdamParams, Graph, Head, MlpSpec, ParamStore, Tensor};
use crate::sim::HAND_JOINTS;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: [f64; HAND_JOINTS],
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// FIFO ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, RlError> {
        if capacity == 0 {
            return Err(RlError::InvalidParams("buffer capacity must be positive".into()));
        }
        Ok(Self { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, inserted: 0 })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.items[slot] = t;
        }
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Params {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub smoothing_sigma: f64,
    pub smoothing_clip: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: [usize; 3],
    /// Bound on each residual joint delta (radians).
    pub r_max: f64,
    /// Std of the Gaussian exploration noise added to residuals during training (radians).
    pub exploration_sigma: f64,
}

impl Default for Td3Params {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            smoothing_sigma: 0.2,
            smoothing_clip: 0.5,
            batch_size: 256,
            buffer_capacity: 50_000,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden: [256, 256, 256],
            r_max: 0.15,
            exploration_sigma: 0.1,
        }
    }
}

impl Td3Params {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidParams(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 0 < batch_size <= buffer_capacity");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return bad("r_max must be positive");
        }
        if !(self.smoothing_sigma >= 0.0 && self.smoothing_clip >= 0.0 && self.exploration_sigma >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Td3Losses {
    pub critic: f64,
    /// Present on steps where the actor was updated.
    pub actor: Option<f64>,
}

/// Actor network with its spec; the bound lives in the tanh head.
#[derive(Debug, Clone)]
pub struct Actor {
    pub spec: MlpSpec,
    pub params: ParamStore,
}

impl Actor {
    pub fn act(&self, obs: &[f64]) -> Result<[f64; HAND_JOINTS], RlError> {
        let x = Tensor::new(vec![1, obs.len()], obs.to_vec())?;
        let y = mlp_apply(&self.params, &self.spec, &x)?;
        let mut a = [0.0; HAND_JOINTS];
        a.copy_from_slice(y.data());
        Ok(a)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), RlError> {
        let meta = serde_json::to_value(&self.spec).map_err(|e| RlError::Io(e.to_string()))?;
        Ok(self.params.save(dir, stem, meta)?)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, RlError> {
        let (params, meta) = ParamStore::load(dir, stem)?;
        let spec: MlpSpec = serde_json::from_value(meta).map_err(|e| RlError::Io(e.to_string()))?;
        Ok(Self { spec, params })
    }
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub hp: Td3Params,
    pub actor: Actor,
    pub critic_spec: MlpSpec,
    pub critic1: ParamStore,
    pub critic2: ParamStore,
    pub actor_target: ParamStore,
    pub critic1_target: ParamStore,
    pub critic2_target: ParamStore,
    /// Number of critic updates performed so far.
    pub critic_steps: u64,
}

const STORES: [&str; 6] = ["actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target"];

impl Td3Agent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hp: &Td3Params, rng: &mut R) -> Result<Self, RlError> {
        hp.validate()?;
        let actor_spec = MlpSpec::four_layer(obs_dim, hp.hidden, HAND_JOINTS, Head::Tanh { bound: hp.r_max });
        let critic_spec = MlpSpec::four_layer(obs_dim + HAND_JOINTS, hp.hidden, 1, Head::Linear);
        let actor = actor_spec.init(rng)?;
        let critic1 = critic_spec.init(rng)?;
        let critic2 = critic_spec.init(rng)?;
        Ok(Self {
            hp: hp.clone(),
            actor_target: actor.clone_values(),
            critic1_target: critic1.clone_values(),
            critic2_target: critic2.clone_values(),
            actor: Actor { spec: actor_spec, params: actor },
            critic_spec,
            critic1,
            critic2,
            critic_steps: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.spec.input()
    }

    /// Noiseless action clamped to the residual bound.
    pub fn act(&self, obs: &[f64]) -> Result<[f64; HAND_JOINTS], RlError> {
        let mut a = self.actor.act(obs)?;
        clamp_residual(&mut a, self.hp.r_max);
        Ok(a)
    }

    fn stores(&self) -> [&ParamStore; 6] {
        [
            &self.actor.params,
            &self.critic1,
            &self.critic2,
            &self.actor_target,
            &self.critic1_target,
            &self.critic2_target,
        ]
    }

    pub fn save(&self, dir: &Path) -> Result<(), RlError> {
        std::fs::create_dir_all(dir).map_err(|e| RlError::Io(format!("{}: {e}", dir.display())))?;
        let meta = serde_json::json!({
            "hp": self.hp,
            "actor_spec": self.actor.spec,
            "critic_spec": self.critic_spec,
            "critic_steps": self.critic_steps,
        });
        for (name, store) in STORES.iter().zip(self.stores()) {
            store.save(dir, name, meta.clone())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RlError> {
        let mut stores = Vec::new();
        let mut meta = serde_json::Value::Null;
        for name in STORES {
            let (s, m) = ParamStore::load(dir, name)?;
            stores.push(s);
            meta = m;
        }
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| RlError::Io(format!("agent metadata lacks `{k}`")));
        let parse = |e: serde_json::Error| RlError::Io(e.to_string());
        let hp: Td3Params = serde_json::from_value(field("hp")?).map_err(parse)?;
        let actor_spec: MlpSpec = serde_json::from_value(field("actor_spec")?).map_err(parse)?;
        let critic_spec: MlpSpec = serde_json::from_value(field("critic_spec")?).map_err(parse)?;
        let critic_steps: u64 = serde_json::from_value(field("critic_steps")?).map_err(parse)?;
        let mut it = stores.into_iter();
        let mut next = || it.next().expect("six stores");
        Ok(Self {
            hp,
            actor: Actor { spec: actor_spec, params: next() },
            critic_spec,
            critic1: next(),
            critic2: next(),
            actor_target: next(),
            critic1_target: next(),
            critic2_target: next(),
            critic_steps,
        })
    }
}

pub fn clamp_residual(a: &mut [f64; HAND_JOINTS], r_max: f64) {
    for v in a.iter_mut() {
        *v = v.clamp(-r_max, r_max);
    }
}

/// Bootstrapped critic target `r + γ·(1 − done)·min(q1, q2)`.
pub fn td_target(reward: f64, done: bool, gamma: f64, q1: f64, q2: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Result<Tensor, RlError> {
    let data: Vec<f64> = rows.flatten().collect();
    let n = data.len() / width.max(1);
    Ok(Tensor::new(vec![n, width], data)?)
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor, RlError> {
    let (n, wa) = a.rows_cols();
    let wb = b.rows_cols().1;
    let mut out = Vec::with_capacity(n * (wa + wb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * wa..(i + 1) * wa]);
        out.extend_from_slice(&b.data()[i * wb..(i + 1) * wb]);
    }
    Ok(Tensor::new(vec![n, wa + wb], out)?)
}

/// One TD3 step on a uniformly sampled minibatch.
pub fn td3_update<R: Rng + ?Sized>(
    agent: &mut Td3Agent,
    buffer: &ReplayBuffer,
    rng: &mut R,
) -> Result<Td3Losses, RlError> {
    let hp = agent.hp.clone();
    if buffer.len() < hp.batch_size {
        return Err(RlError::BufferTooSmall { len: buffer.len(), batch: hp.batch_size });
    }
    let batch = buffer.sample(hp.batch_size, rng);
    let obs_dim = agent.obs_dim();
    let obs = stack(batch.iter().map(|t| t.obs.clone()), obs_dim)?;
    let act = stack(batch.iter().map(|t| t.action.to_vec()), HAND_JOINTS)?;

    // Clipped double-Q target with target-policy smoothing. All-terminal
    // batches (the usual case for one-step grasp episodes) need no bootstrap.
    let y: Vec<f64> = if batch.iter().all(|t| t.done) {
        batch.iter().map(|t| t.reward).collect()
    } else {
        let next_obs = stack(batch.iter().map(|t| t.next_obs.clone()), obs_dim)?;
        let mut next_act = mlp_apply(&agent.actor_target, &agent.actor.spec, &next_obs)?;
        let noise = Normal::new(0.0, hp.smoothing_sigma).map_err(|e| RlError::InvalidParams(e.to_string()))?;
        for v in next_act.data_mut() {
            let n = noise.sample(rng).clamp(-hp.smoothing_clip, hp.smoothing_clip);
            *v = (*v + n).clamp(-hp.r_max, hp.r_max);
        }
        let next_in = concat_rows(&next_obs, &next_act)?;
        let q1t = mlp_apply(&agent.critic1_target, &agent.critic_spec, &next_in)?;
        let q2t = mlp_apply(&agent.critic2_target, &agent.critic_spec, &next_in)?;
        batch
            .iter()
            .enumerate()
            .map(|(i, t)| td_target(t.reward, t.done, hp.gamma, q1t.data()[i], q2t.data()[i]))
            .collect()
    };
    let y = Tensor::new(vec![hp.batch_size, 1], y)?;

    let critic_in = concat_rows(&obs, &act)?;
    let (critic_loss, g1, g2) = {
        let mut g = Graph::new();
        let x = g.input(critic_in);
        let yn = g.input(y);
        let q1 = forward_mlp(&mut g, &agent.critic1, &agent.critic_spec, x)?;
        let q2 = forward_mlp(&mut g, &agent.critic2, &agent.critic_spec, x)?;
        let l1 = g.mse(q1, yn)?;
        let l2 = g.mse(q2, yn)?;
        let loss = g.add(l1, l2)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(RlError::Nn(crate::nn::NnError::NonFiniteLoss));
        }
        let grads = g.backward(loss)?;
        (value, grads.param_grads(&agent.critic1), grads.param_grads(&agent.critic2))
    };
    let critic_opt = AdamParams::with_lr(hp.critic_lr);
    agent.critic1.adam_step(&g1, &critic_opt)?;
    agent.critic2.adam_step(&g2, &critic_opt)?;
    agent.critic_steps += 1;

    let mut losses = Td3Losses { critic: critic_loss, actor: None };
    if agent.critic_steps % hp.policy_delay == 0 {
        let (actor_loss, ga) = {
            let mut g = Graph::new();
            let s = g.input(obs);
            let a = forward_mlp(&mut g, &agent.actor.params, &agent.actor.spec, s)?;
            let sa = g.concat(&[s, a])?;
            let q = forward_mlp(&mut g, &agent.critic1, &agent.critic_spec, sa)?;
            let m = g.mean(q);
            let loss = g.scale(m, -1.0);
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(RlError::Nn(crate::nn::NnError::NonFiniteLoss));
            }
            (value, g.backward(loss)?.param_grads(&agent.actor.params))
        };
        agent.actor.params.adam_step(&ga, &AdamParams::with_lr(hp.actor_lr))?;
        agent.actor_target.polyak_from(&agent.actor.params, hp.tau)?;
        agent.critic1_target.polyak_from(&agent.critic1, hp.tau)?;
        agent.critic2_target.polyak_from(&agent.critic2, hp.tau)?;
        losses.actor = Some(actor_loss);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_hp() -> Td3Params {
        Td3Params { hidden: [16, 16, 16], batch_size: 8, buffer_capacity: 64, ..Td3Params::default() }
    }

    fn filled_buffer(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(64).unwrap();
        for i in 0..n {
            let obs: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut action = [0.0; HAND_JOINTS];
            action.iter_mut().for_each(|a| *a = rng.random_range(-0.15..0.15));
            b.push(Transition {
                next_obs: obs.clone(),
                obs,
                action,
                reward: if i % 3 == 0 { -1.0 } else { 0.0 },
                done: true,
            });
        }
        b
    }

    #[test]
    fn targets() {
        assert_eq!(td_target(-1.0, true, 0.99, 5.0, 7.0), -1.0);
        assert!((td_target(-1.0, false, 0.99, -0.5, 0.3) - -1.495).abs() < 1e-15);
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(Transition { obs: vec![i as f64], action: [0.0; 6], reward: 0.0, next_obs: vec![], done: true });
        }
        let seen: Vec<f64> = b.items().iter().map(|t| t.obs[0]).collect();
        assert_eq!(seen, vec![3.0, 4.0, 2.0]);
        assert_eq!(b.inserted(), 5);
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn actor_waits_for_policy_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = Td3Agent::new(5, &small_hp(), &mut rng).unwrap();
        let buf = filled_buffer(20, 5, &mut rng);
        let before = agent.actor.params.clone_values();
        let critic_before = agent.critic1.clone_values();
        let l = td3_update(&mut agent, &buf, &mut rng).unwrap();
        assert!(l.actor.is_none());
        assert_eq!(agent.actor.params.get("l0.w"), before.get("l0.w"));
        assert_ne!(agent.critic1.get("l0.w"), critic_before.get("l0.w"));
        let l = td3_update(&mut agent, &buf, &mut rng).unwrap();
        assert!(l.actor.is_some());
        assert_ne!(agent.actor.params.get("l0.w"), before.get("l0.w"));
    }

    #[test]
    fn zero_learning_rate_freezes_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hp = Td3Params { actor_lr: 0.0, critic_lr: 0.0, tau: 0.0, ..small_hp() };
        let mut agent = Td3Agent::new(5, &hp, &mut rng).unwrap();
        let buf = filled_buffer(20, 5, &mut rng);
        let snapshot = agent.clone();
        for _ in 0..4 {
            td3_update(&mut agent, &buf, &mut rng).unwrap();
        }
        for (a, b) in agent.stores().iter().zip(snapshot.stores()) {
            for n in a.names() {
                assert_eq!(a.get(n), b.get(n));
            }
        }
    }

    #[test]
    fn small_buffer_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = Td3Agent::new(5, &small_hp(), &mut rng).unwrap();
        let buf = filled_buffer(4, 5, &mut rng);
        assert!(matches!(td3_update(&mut agent, &buf, &mut rng), Err(RlError::BufferTooSmall { .. })));
    }

    #[test]
    fn critic_learns_bandit_rewards() {
        // Reward depends on the sign of the first action component only.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hp = Td3Params { hidden: [32, 32, 32], batch_size: 32, buffer_capacity: 512, critic_lr: 1e-3, actor_lr: 1e-3, ..Td3Params::default() };
        let mut agent = Td3Agent::new(3, &hp, &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(512).unwrap();
        for _ in 0..512 {
            let obs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut action = [0.0; HAND_JOINTS];
            action.iter_mut().for_each(|a| *a = rng.random_range(-0.15..0.15));
            let reward = if action[0] > 0.05 { 0.0 } else { -1.0 };
            buf.push(Transition { next_obs: obs.clone(), obs, action, reward, done: true });
        }
        for _ in 0..1500 {
            td3_update(&mut agent, &buf, &mut rng).unwrap();
        }
        let a = agent.act(&[0.2, -0.3, 0.5]).unwrap();
        assert!(a[0] > 0.05, "actor did not move into the rewarded region: {a:?}");
    }

    #[test]
    fn bootstrapped_values_reach_the_fixed_point() {
        // r = −1 forever with γ = 0.5: Q = r/(1 − γ) = −2 for every state and action.
        // Stored actions cover the whole residual box so the critic is not
        // extrapolating where the target policy looks.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hp = Td3Params { gamma: 0.5, tau: 0.05, critic_lr: 1e-3, ..small_hp() };
        let mut agent = Td3Agent::new(3, &hp, &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(64).unwrap();
        for _ in 0..64 {
            let obs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let next_obs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let action: [f64; HAND_JOINTS] = std::array::from_fn(|_| rng.random_range(-0.15..0.15));
            buf.push(Transition { obs, action, reward: -1.0, next_obs, done: false });
        }
        for _ in 0..3000 {
            let l = td3_update(&mut agent, &buf, &mut rng).unwrap();
            assert!(l.critic.is_finite());
        }
        let rows = buf.items().iter().map(|t| [t.obs.clone(), t.action.to_vec()].concat());
        let x = stack(rows, 3 + HAND_JOINTS).unwrap();
        let q = mlp_apply(&agent.critic1, &agent.critic_spec, &x).unwrap();
        let mean = q.data().iter().sum::<f64>() / q.len() as f64;
        assert!((mean + 2.0).abs() < 0.2, "mean Q = {mean}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agent = Td3Agent::new(5, &small_hp(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        agent.save(dir.path()).unwrap();
        let back = Td3Agent::load(dir.path()).unwrap();
        assert_eq!(back.hp, agent.hp);
        let obs = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(back.act(&obs).unwrap(), agent.act(&obs).unwrap());
        assert_eq!(back.critic2_target.get("l3.b"), agent.critic2_target.get("l3.b"));
    }
}
