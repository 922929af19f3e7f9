//! Linear softmax policy trained with REINFORCE and a learned baseline.
//!
//! Logits are a linear function of the one-hot window encoding plus one
//! joint (action, latency) indicator per slot, so "address 3 hit" is a
//! single feature. Every forward pass only touches the few active features. The baseline predicts
//! returns normalised by running statistics, which keeps the value fit
//! independent of the reward scale. An optional clipped-surrogate update
//! reuses each batch for several epochs.

use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{active_features, feature_len, CacheGuessingEnv, ObsLatency};
use crate::error::Result;

use super::{argmax, evaluate, Actor, CurvePoint, Hyperparams, Mode, Policy, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub num_actions: usize,
    pub window: usize,
    pub feat_dim: usize,
    /// Row-major `num_actions x feat_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub value_w: Vec<f64>,
    pub value_b: f64,
    /// Running mean and standard deviation of returns.
    pub ret_mean: f64,
    pub ret_std: f64,
}

impl LinearPolicy {
    pub fn new(num_actions: usize, window: usize) -> Self {
        let feat_dim = feature_len(num_actions, window) + window * num_actions * 3;
        Self {
            num_actions,
            window,
            feat_dim,
            weights: vec![0.0; num_actions * feat_dim],
            bias: vec![0.0; num_actions],
            value_w: vec![0.0; feat_dim],
            value_b: 0.0,
            ret_mean: 0.0,
            ret_std: 1.0,
        }
    }

    pub fn features(&self, env: &CacheGuessingEnv) -> Vec<usize> {
        let base = feature_len(self.num_actions, self.window);
        let mut x = active_features(env.window(), self.num_actions, self.window);
        for (i, r) in env.window().iter().enumerate() {
            if let Some(r) = r {
                let lat = match r.latency {
                    ObsLatency::Hit => 0,
                    ObsLatency::Miss => 1,
                    ObsLatency::Na => 2,
                };
                x.push(base + (i * self.num_actions + r.action_index) * 3 + lat);
            }
        }
        x.sort_unstable();
        x
    }

    pub fn logits(&self, x: &[usize]) -> Vec<f64> {
        (0..self.num_actions)
            .map(|a| {
                let row = &self.weights[a * self.feat_dim..(a + 1) * self.feat_dim];
                self.bias[a] + x.iter().map(|&i| row[i]).sum::<f64>()
            })
            .collect()
    }

    pub fn probs(&self, x: &[usize]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Normalised value estimate.
    fn value_z(&self, x: &[usize]) -> f64 {
        self.value_b + x.iter().map(|&i| self.value_w[i]).sum::<f64>()
    }

    pub fn value(&self, x: &[usize]) -> f64 {
        self.ret_mean + self.ret_std * self.value_z(x)
    }

    pub fn choose(&self, env: &CacheGuessingEnv, mode: Mode, rng: &mut ChaCha8Rng) -> usize {
        let x = self.features(env);
        match mode {
            Mode::Deterministic => argmax(&self.logits(&x)),
            Mode::Stochastic => sample(&self.probs(&x), rng),
        }
    }
}

fn softmax(l: &[f64]) -> Vec<f64> {
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sample(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    WeightedIndex::new(p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// `(G - b)` standardised to zero mean and unit variance. A batch with no
/// spread gives all zeros.
pub fn normalized_advantages(returns: &[f64], baselines: &[f64]) -> Vec<f64> {
    let adv: Vec<f64> = returns.iter().zip(baselines).map(|(g, b)| g - b).collect();
    let n = adv.len().max(1) as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return vec![0.0; adv.len()];
    }
    adv.iter().map(|a| (a - mean) / sd).collect()
}

struct Sample {
    x: Vec<usize>,
    action: usize,
    ret: f64,
    logp: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Gradient ascent step on `params`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            if grad[i] == 0.0 && self.m[i] == 0.0 {
                continue;
            }
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

struct Rollout {
    samples: Vec<Sample>,
    reward: f64,
    steps: u64,
}

fn rollout(policy: &LinearPolicy, env: &mut CacheGuessingEnv, episodes: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<Rollout> {
    let mut out = Rollout { samples: Vec::new(), reward: 0.0, steps: 0 };
    for _ in 0..episodes {
        env.reset();
        let mut ep: Vec<(Vec<usize>, usize, f64, f64)> = Vec::new();
        loop {
            let x = policy.features(env);
            let p = policy.probs(&x);
            let a = sample(&p, rng);
            let r = env.step(a)?;
            out.steps += 1;
            out.reward += r.reward;
            ep.push((x, a, r.reward, p[a].max(1e-300).ln()));
            if r.done {
                break;
            }
        }
        let mut g = 0.0;
        let mut rets = vec![0.0; ep.len()];
        for (i, e) in ep.iter().enumerate().rev() {
            g = e.2 + gamma * g;
            rets[i] = g;
        }
        for ((x, action, _, logp), ret) in ep.into_iter().zip(rets) {
            out.samples.push(Sample { x, action, ret, logp });
        }
    }
    Ok(out)
}

/// Trains (or keeps training) a linear softmax policy on `env`.
pub fn train_pg(env: &mut CacheGuessingEnv, hp: &Hyperparams, init: Option<LinearPolicy>) -> Result<(Policy, TrainReport)> {
    let start = Instant::now();
    let na = env.num_actions();
    let w = env.config().window_size;
    let mut pol = init.unwrap_or_else(|| LinearPolicy::new(na, w));
    let fd = pol.feat_dim;
    let mut opt_w = Adam::new(na * fd + na);
    let mut opt_v = Adam::new(fd + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let workers = hp.workers.max(1);
    let mut envs: Vec<CacheGuessingEnv> = (0..workers)
        .map(|i| {
            let mut e = env.clone();
            e.reseed(hp.seed.wrapping_add(1 + i as u64));
            e
        })
        .collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..workers).map(|i| ChaCha8Rng::seed_from_u64(hp.seed ^ (0x9e37 + i as u64))).collect();

    let mut steps = 0u64;
    let mut episodes = 0u64;
    let mut curve = Vec::new();
    let mut next_eval = hp.eval_interval;
    let mut win = (0.0, 0u64);
    let mut last = (0.0, 0.0);
    let mut converged = false;
    let mut first_batch = pol.ret_std == 1.0 && pol.ret_mean == 0.0;

    while steps < hp.max_steps {
        let per = hp.batch_episodes.div_ceil(workers);
        let parts: Vec<Result<Rollout>> = if workers == 1 {
            vec![rollout(&pol, &mut envs[0], per, hp.gamma, &mut rng)]
        } else {
            envs.par_iter_mut()
                .zip(rngs.par_iter_mut())
                .map(|(e, r)| rollout(&pol, e, per, hp.gamma, r))
                .collect()
        };
        let mut batch = Vec::new();
        for p in parts {
            let p = p?;
            steps += p.steps;
            win.0 += p.reward;
            batch.extend(p.samples);
        }
        episodes += (per * workers) as u64;
        win.1 += (per * workers) as u64;

        // running return statistics for the baseline
        let n = batch.len() as f64;
        let bm = batch.iter().map(|s| s.ret).sum::<f64>() / n;
        let bs = (batch.iter().map(|s| (s.ret - bm).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
        if first_batch {
            pol.ret_mean = bm;
            pol.ret_std = bs;
            first_batch = false;
        } else {
            pol.ret_mean = 0.95 * pol.ret_mean + 0.05 * bm;
            pol.ret_std = 0.95 * pol.ret_std + 0.05 * bs;
        }

        let rets: Vec<f64> = batch.iter().map(|s| s.ret).collect();
        let base: Vec<f64> = batch.iter().map(|s| pol.value(&s.x)).collect();
        let adv = normalized_advantages(&rets, &base);

        let epochs = if hp.ppo_clip.is_some() { hp.ppo_epochs.max(1) } else { 1 };
        for _ in 0..epochs {
            let mut grad = vec![0.0; na * fd + na];
            for (s, &a_hat) in batch.iter().zip(&adv) {
                let p = pol.probs(&s.x);
                let mut coef = a_hat;
                if let Some(clip) = hp.ppo_clip {
                    let ratio = (p[s.action].max(1e-300).ln() - s.logp).exp();
                    if (a_hat > 0.0 && ratio > 1.0 + clip) || (a_hat < 0.0 && ratio < 1.0 - clip) {
                        coef = 0.0;
                    } else {
                        coef *= ratio;
                    }
                }
                let ent: f64 = -p.iter().map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>();
                for k in 0..na {
                    let ind = if k == s.action { 1.0 } else { 0.0 };
                    let lq = if p[k] > 0.0 { p[k].ln() } else { -700.0 };
                    let g = coef * (ind - p[k]) - hp.entropy_coef * p[k] * (lq + ent);
                    if g == 0.0 {
                        continue;
                    }
                    for &i in &s.x {
                        grad[k * fd + i] += g / n;
                    }
                    grad[na * fd + k] += g / n;
                }
            }
            let mut params: Vec<f64> = pol.weights.iter().chain(&pol.bias).cloned().collect();
            opt_w.step(&mut params, &grad, hp.lr);
            pol.weights.copy_from_slice(&params[..na * fd]);
            pol.bias.copy_from_slice(&params[na * fd..]);
        }

        // value regression on normalised returns
        let mut vgrad = vec![0.0; fd + 1];
        for s in &batch {
            let z = (s.ret - pol.ret_mean) / pol.ret_std;
            let err = z - pol.value_z(&s.x);
            for &i in &s.x {
                vgrad[i] += err / n;
            }
            vgrad[fd] += err / n;
        }
        let mut vp: Vec<f64> = pol.value_w.iter().cloned().chain([pol.value_b]).collect();
        opt_v.step(&mut vp, &vgrad, hp.lr);
        pol.value_w.copy_from_slice(&vp[..fd]);
        pol.value_b = vp[fd];

        if steps >= next_eval || steps >= hp.max_steps {
            next_eval = steps + hp.eval_interval;
            let policy = Policy::Linear(pol.clone());
            let mut ev = env.clone();
            ev.reseed(hp.seed.wrapping_add(steps));
            let st = evaluate(&mut policy.actor(Mode::Deterministic), &mut ev, hp.eval_episodes, None, hp.seed)?;
            curve.push(CurvePoint {
                step: steps,
                mean_reward: win.0 / win.1.max(1) as f64,
                accuracy: st.accuracy,
                episode_len: st.mean_len,
            });
            win = (0.0, 0);
            last = (st.accuracy, st.mean_len);
            if st.accuracy >= hp.target_accuracy {
                converged = true;
                break;
            }
        }
    }

    let report = TrainReport {
        steps_taken: steps,
        episodes,
        final_accuracy: last.0,
        mean_episode_length: last.1,
        reward_curve: curve,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged,
    };
    Ok((Policy::Linear(pol), report))
}

/// Fits a fresh linear policy to imitate `teacher` on `env`.
///
/// States come from `episodes` rollouts in which the teacher's greedy action
/// is replaced by a random one with probability 0.1, so the student also
/// sees states just off the teacher's path. Cross-entropy is minimised by
/// plain SGD over `epochs` passes. The result is a warm start for
/// [`train_pg`].
pub fn distill(teacher: &Policy, env: &mut CacheGuessingEnv, episodes: usize, epochs: usize, seed: u64) -> Result<LinearPolicy> {
    const LR: f64 = 0.05;
    let na = env.num_actions();
    let mut student = LinearPolicy::new(na, env.config().window_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor = teacher.actor(Mode::Deterministic);
    let mut data = Vec::new();
    for _ in 0..episodes {
        env.reset();
        actor.begin_episode();
        loop {
            let a = actor.act(env, &mut rng);
            data.push((student.features(env), a));
            let b = if rng.gen_bool(0.1) { rng.gen_range(0..na) } else { a };
            if env.step(b)?.done {
                break;
            }
        }
    }
    let fd = student.feat_dim;
    for _ in 0..epochs {
        for (x, a) in &data {
            let p = student.probs(x);
            for (k, &pk) in p.iter().enumerate() {
                let g = LR * (f64::from(u8::from(k == *a)) - pk);
                for &i in x {
                    student.weights[k * fd + i] += g;
                }
                student.bias[k] += g;
            }
        }
    }
    Ok(student)
}
