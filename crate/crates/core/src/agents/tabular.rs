//! Epsilon-greedy Q-learning over canonical window keys.
//!
//! Updates are applied once per episode, walking the trajectory backwards
//! so a terminal reward reaches the first step of the episode in one pass.
//! Unvisited entries start at zero, which is optimistic relative to the
//! mostly negative rewards and pushes the greedy policy towards untried
//! actions.

use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{window_key, CacheGuessingEnv, StepRecord};
use crate::error::Result;

use super::{argmax, evaluate, CurvePoint, Hyperparams, Mode, Policy, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub num_actions: usize,
    /// Number of newest window records in a key; the whole window if `None`.
    pub history: Option<usize>,
    pub table: HashMap<String, Vec<f64>>,
    /// History length of the backoff table consulted for unseen keys.
    pub backoff: Option<usize>,
    pub fallback: HashMap<String, Vec<f64>>,
    /// Appends the number of guesses made so far, divided by this bucket
    /// width, to every key so a multi-round policy can pace itself.
    pub guess_bucket: Option<usize>,
}

/// Key of the newest `k` records with step numbers dropped.
fn recent_key(w: &VecDeque<Option<StepRecord>>, k: usize) -> String {
    let recent: Vec<_> = w
        .iter()
        .skip(w.len().saturating_sub(k))
        .map(|r| {
            r.map(|mut r| {
                r.step_number = 0;
                r
            })
        })
        .collect();
    window_key(&recent)
}

impl TabularPolicy {
    pub fn new(num_actions: usize) -> Self {
        Self::with_history(num_actions, None)
    }

    pub fn with_history(num_actions: usize, history: Option<usize>) -> Self {
        Self { num_actions, history, table: HashMap::new(), backoff: None, fallback: HashMap::new(), guess_bucket: None }
    }

    /// Table key of the environment's current window. A truncated history
    /// drops step numbers so the same recent pattern shares one entry.
    pub fn key(&self, env: &CacheGuessingEnv) -> String {
        let k = match self.history {
            None => window_key(env.window()),
            Some(k) => recent_key(env.window(), k),
        };
        self.with_count(k, env)
    }

    /// Backoff table key, if the policy has one.
    pub fn fallback_key(&self, env: &CacheGuessingEnv) -> Option<String> {
        self.backoff.map(|k| self.with_count(recent_key(env.window(), k), env))
    }

    fn with_count(&self, mut key: String, env: &CacheGuessingEnv) -> String {
        if let Some(b) = self.guess_bucket {
            key.push_str(&format!("g{}", env.guesses_made() / b.max(1)));
        }
        key
    }

    pub fn values(&self, key: &str) -> Option<&[f64]> {
        self.table.get(key).map(Vec::as_slice)
    }

    pub fn greedy(&self, key: &str) -> usize {
        self.values(key).map_or(0, argmax)
    }

    /// Greedy action, falling back to the backoff table for unseen keys.
    fn greedy_or_backoff(&self, key: &str, fallback: Option<&str>) -> usize {
        match (self.values(key), fallback.and_then(|f| self.fallback.get(f))) {
            (Some(v), _) => argmax(v),
            (None, Some(v)) => argmax(v),
            (None, None) => 0,
        }
    }

    /// Deterministic mode is greedy; stochastic mode explores with
    /// probability 0.05.
    pub fn choose(&self, env: &CacheGuessingEnv, mode: Mode, rng: &mut ChaCha8Rng) -> usize {
        if mode == Mode::Stochastic && rng.gen_bool(0.05) {
            return rng.gen_range(0..self.num_actions);
        }
        self.greedy_or_backoff(&self.key(env), self.fallback_key(env).as_deref())
    }
}

fn epsilon(hp: &Hyperparams, step: u64) -> f64 {
    let horizon = (hp.eps_decay_frac * hp.max_steps as f64).max(1.0);
    let t = (step as f64 / horizon).min(1.0);
    hp.eps_start + (hp.eps_end - hp.eps_start) * t
}

/// Trains (or keeps training) a table on `env`.
///
/// Stops once a deterministic evaluation reaches `hp.target_accuracy` or
/// after `hp.max_steps` environment steps. Evaluation runs on a clone of
/// `env`, so a remapped cache is evaluated under its current mapping.
pub fn train_tabular(
    env: &mut CacheGuessingEnv,
    hp: &Hyperparams,
    init: Option<TabularPolicy>,
) -> Result<(Policy, TrainReport)> {
    let start = Instant::now();
    let na = env.num_actions();
    let mut q = init.unwrap_or_else(|| {
        let mut t = TabularPolicy::with_history(na, hp.tabular_history);
        t.backoff = hp.tabular_backoff;
        t.guess_bucket = hp.tabular_guess_bucket;
        t
    });
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut steps = 0u64;
    let mut episodes = 0u64;
    let mut curve = Vec::new();
    let mut next_eval = hp.eval_interval;
    let mut window_reward = (0.0, 0u64);
    let mut traj: Vec<(String, Option<String>, usize, f64)> = Vec::new();
    let mut last = (0.0, 0.0);
    let mut converged = false;

    while steps < hp.max_steps {
        env.reset();
        traj.clear();
        let mut ep_reward = 0.0;
        loop {
            let key = q.key(env);
            let fkey = q.fallback_key(env);
            let a = if rng.gen_bool(epsilon(hp, steps)) {
                rng.gen_range(0..na)
            } else {
                q.greedy_or_backoff(&key, fkey.as_deref())
            };
            let r = env.step(a)?;
            steps += 1;
            ep_reward += r.reward;
            traj.push((key, fkey, a, r.reward));
            if r.done {
                break;
            }
        }
        episodes += 1;
        window_reward.0 += ep_reward;
        window_reward.1 += 1;

        // lambda-returns: lambda 0 is one-step Q-learning, 1 is Monte Carlo
        let lam = hp.q_lambda;
        let mut next = (0.0, 0.0);
        for (key, fkey, a, r) in traj.drain(..).rev() {
            let row = q.table.entry(key).or_insert_with(|| vec![0.0; na]);
            let g = r + hp.gamma * next.0;
            row[a] += hp.lr * (g - row[a]);
            next.0 = (1.0 - lam) * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + lam * g;
            if let Some(fkey) = fkey {
                let row = q.fallback.entry(fkey).or_insert_with(|| vec![0.0; na]);
                let g = r + hp.gamma * next.1;
                row[a] += hp.lr * (g - row[a]);
                next.1 = (1.0 - lam) * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + lam * g;
            }
        }

        if steps >= next_eval || steps >= hp.max_steps {
            next_eval = steps + hp.eval_interval;
            let policy = Policy::Tabular(q.clone());
            let mut ev = env.clone();
            ev.reseed(hp.seed.wrapping_add(steps));
            let st = evaluate(&mut policy.actor(Mode::Deterministic), &mut ev, hp.eval_episodes, None, hp.seed)?;
            curve.push(CurvePoint {
                step: steps,
                mean_reward: window_reward.0 / window_reward.1.max(1) as f64,
                accuracy: st.accuracy,
                episode_len: st.mean_len,
            });
            window_reward = (0.0, 0);
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
    Ok((Policy::Tabular(q), report))
}
