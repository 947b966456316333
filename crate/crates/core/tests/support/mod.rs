#![allow(dead_code)]

use graspforge::diffusion::{
    build_training_windows, DiffusionConfig, DiffusionError, DiffusionPolicy, NoiseModel, Normalizer, TrainingWindow,
};
use graspforge::nn::{Graph, NodeId, Tensor};
use graspforge::rl::{Episode, Step, OBS_WIDTH_DIFFUSION};
use graspforge::sim::{HandModel, ObjectId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink at 0.
pub fn away_from_zero<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Builds `Σ op(inputs) ⊙ R` for a fixed random `R` and compares the
/// reverse-mode gradient of every input with central differences.
/// Returns the worst relative error (‖a − n‖ / max(‖a‖, ‖n‖)).
pub fn fd_check<F>(inputs: &[Tensor], weights_seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> NodeId,
{
    let eval = |ins: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ins.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &ids);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(weights_seed);
        let r = random_tensor(g.value(out).shape(), &mut rng);
        let rn = g.input(r);
        let prod = g.mul(out, rn).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss).item();
        let grads = g.backward(loss).unwrap();
        let gs = ids
            .iter()
            .zip(ins)
            .map(|(id, t)| grads.grad(*id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (value, gs)
    };
    let (_, analytic) = eval(inputs);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            numeric[i] = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
        }
        worst = worst.max(rel_err(analytic[k].data(), &numeric));
    }
    worst
}

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// One named differentiable op with its random-instance generator.
pub struct OpCase {
    pub name: &'static str,
    pub make_inputs: fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tensor>,
    pub build: fn(&mut Graph<'_>, &[NodeId]) -> NodeId,
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "linear",
            make_inputs: |r| vec![random_tensor(&[3, 5], r), random_tensor(&[4, 5], r), random_tensor(&[4], r)],
            build: |g, v| g.linear(v[0], v[1], Some(v[2])).unwrap(),
        },
        OpCase {
            name: "conv1d",
            make_inputs: |r| vec![random_tensor(&[2, 8, 3], r), random_tensor(&[4, 5, 3], r), random_tensor(&[4], r)],
            build: |g, v| g.conv1d(v[0], v[1], Some(v[2]), 1, 2).unwrap(),
        },
        OpCase {
            name: "conv1d_stride2",
            make_inputs: |r| vec![random_tensor(&[2, 8, 3], r), random_tensor(&[2, 3, 3], r), random_tensor(&[2], r)],
            build: |g, v| g.conv1d(v[0], v[1], Some(v[2]), 2, 1).unwrap(),
        },
        OpCase {
            name: "group_norm",
            make_inputs: |r| vec![random_tensor(&[2, 4, 16], r), random_tensor(&[16], r), random_tensor(&[16], r)],
            build: |g, v| g.group_norm(v[0], v[1], v[2], 8, 1e-8).unwrap(),
        },
        OpCase {
            name: "mish",
            make_inputs: |r| vec![random_tensor(&[4, 7], r).scaled(3.0)],
            build: |g, v| g.mish(v[0]),
        },
        OpCase {
            name: "relu",
            make_inputs: |r| vec![away_from_zero(&[4, 7], r)],
            build: |g, v| g.relu(v[0]),
        },
        OpCase {
            name: "tanh",
            make_inputs: |r| vec![random_tensor(&[4, 7], r).scaled(2.0)],
            build: |g, v| g.tanh(v[0]),
        },
        OpCase {
            name: "film",
            make_inputs: |r| vec![random_tensor(&[2, 4, 3], r), random_tensor(&[2, 6], r)],
            build: |g, v| g.film(v[0], v[1]).unwrap(),
        },
        OpCase {
            name: "sin_emb",
            make_inputs: |r| vec![random_tensor(&[3], r).scaled(25.0)],
            build: |g, v| g.sin_emb(v[0], 8).unwrap(),
        },
        OpCase {
            name: "concat",
            make_inputs: |r| vec![random_tensor(&[2, 3, 2], r), random_tensor(&[2, 3, 5], r)],
            build: |g, v| g.concat(&[v[0], v[1]]).unwrap(),
        },
        OpCase {
            name: "upsample",
            make_inputs: |r| vec![random_tensor(&[2, 3, 4], r)],
            build: |g, v| g.upsample(v[0]).unwrap(),
        },
        OpCase {
            name: "add_mul_scale",
            make_inputs: |r| vec![random_tensor(&[3, 4], r), random_tensor(&[3, 4], r)],
            build: |g, v| {
                let a = g.add(v[0], v[1]).unwrap();
                let m = g.mul(a, v[1]).unwrap();
                g.scale(m, -1.7)
            },
        },
        OpCase {
            name: "mse",
            make_inputs: |r| vec![random_tensor(&[3, 4], r), random_tensor(&[3, 4], r)],
            build: |g, v| g.mse(v[0], v[1]).unwrap(),
        },
        OpCase {
            name: "mean_sum",
            make_inputs: |r| vec![random_tensor(&[3, 4], r)],
            build: |g, v| {
                let m = g.mean(v[0]);
                let s = g.sum(v[0]);
                let sq = g.mul(m, s).unwrap();
                g.add(sq, m).unwrap()
            },
        },
    ]
}

pub trait Scaled {
    fn scaled(self, s: f64) -> Self;
}

impl Scaled for Tensor {
    fn scaled(mut self, s: f64) -> Self {
        self.data_mut().iter_mut().for_each(|v| *v *= s);
        self
    }
}

pub fn random_episode<R: Rng>(rng: &mut R, len: usize) -> Episode {
    Episode {
        record_id: "r".into(),
        object_id: ObjectId::Bottle,
        robot_pose: [0.0; 9],
        steps: (0..len)
            .map(|_| Step {
                obs: (0..OBS_WIDTH_DIFFUSION).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            })
            .collect(),
    }
}

/// A constant-action dataset with the action scale pinned to the joint
/// limits, so the network itself has to find the mode.
pub fn train_constant_mode(iterations: usize) -> (Vec<[f64; 6]>, [f64; 6]) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = [0.3, 0.9, -0.2, 1.1, 0.5, 0.0];
    let eps: Vec<Episode> = (0..4)
        .map(|_| {
            let mut e = random_episode(&mut rng, 12);
            e.steps.iter_mut().for_each(|s| s.action = c);
            e
        })
        .collect();
    let hand = HandModel::default();
    let cfg = DiffusionConfig { learning_rate: 1e-3, ..DiffusionConfig::default() };
    let mut p = DiffusionPolicy::new(&cfg, &eps, &hand, &mut rng).unwrap();
    p.action_norm = Normalizer {
        min: hand.joint_limits[3..].iter().map(|l| l[0]).collect(),
        max: hand.joint_limits[3..].iter().map(|l| l[1]).collect(),
    };
    let windows: Vec<TrainingWindow> = eps.iter().flat_map(|e| build_training_windows(e, 2, 8)).collect();
    for i in 0..iterations {
        // Step decay for the last quarter.
        if i == iterations * 3 / 4 {
            p.learning_rate /= 5.0;
        }
        let batch: Vec<&TrainingWindow> = (0..16).map(|_| &windows[rng.random_range(0..windows.len())]).collect();
        p.train_step(&batch, &mut rng).unwrap();
    }
    let hist: Vec<Vec<f64>> = windows.iter().step_by(5).map(|w| w.obs_history.clone()).collect();
    let refs: Vec<&[f64]> = hist.iter().map(|h| h.as_slice()).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..refs.len() as u64).map(ChaCha8Rng::seed_from_u64).collect();
    (p.sample_actions(&refs, &mut rngs).unwrap().concat(), c)
}

/// Betas of the squared-cosine schedule straight from its closed form.
pub fn closed_form_betas(t_steps: usize) -> Vec<f64> {
    let f = |t: f64| (((t / t_steps as f64 + 0.008) / 1.008) * std::f64::consts::PI / 2.0).cos().powi(2);
    (1..=t_steps)
        .map(|t| {
            let cur = f(t as f64) / f(0.0);
            let prev = f((t - 1) as f64) / f(0.0);
            (1.0 - cur / prev).min(0.999)
        })
        .collect()
}

/// Noise model that always predicts zero.
pub struct ZeroNet;

impl NoiseModel for ZeroNet {
    fn predict_noise(&self, x: &Tensor, _: &Tensor, _: &[f64]) -> Result<Tensor, DiffusionError> {
        Ok(Tensor::zeros(x.shape()))
    }
}

/// Plain DDPM reverse loop for `ZeroNet`, one row of `n` values drawn from `seed`.
pub fn reference_ddpm(seed: u64, n: usize, t_steps: usize) -> Vec<f64> {
    let betas = closed_form_betas(t_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for t in (1..=t_steps).rev() {
        let beta = betas[t - 1];
        let alpha = 1.0 - beta;
        let ab: f64 = betas[..t].iter().map(|b| 1.0 - b).product();
        let ab_prev: f64 = betas[..t - 1].iter().map(|b| 1.0 - b).product();
        let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
        // The stub predicts zero noise, so the mean is x_t/sqrt(alpha_t).
        for v in x.iter_mut() {
            *v /= alpha.sqrt();
        }
        if t > 1 {
            for v in x.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    x
}

/// Training window built by clamping indices into the episode.
pub fn padded_window(e: &Episode, t: usize, oh: usize, ph: usize) -> TrainingWindow {
    let last = e.steps.len() as i64 - 1;
    let clamp = |i: i64| i.clamp(0, last) as usize;
    let mut obs_history = Vec::new();
    for i in (t as i64 - oh as i64 + 1)..=(t as i64) {
        obs_history.extend(e.steps[clamp(i)].obs.iter().copied());
    }
    let mut actions = Vec::new();
    for i in t as i64..(t + ph) as i64 {
        actions.extend(e.steps[clamp(i)].action);
    }
    TrainingWindow { obs_history, actions }
}

/// Interpolated quantile written as a tent-weighted sum over order statistics.
pub fn quantile_oracle(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = p * (v.len() - 1) as f64;
    v.iter().enumerate().map(|(i, x)| (1.0 - (i as f64 - h).abs()).max(0.0) * x).sum()
}
