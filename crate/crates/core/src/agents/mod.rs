//! Learners and baselines for the guessing game.

mod checkpoint;
mod pg;
mod search;
mod tabular;

pub use checkpoint::{load_policy, save_policy};
pub use pg::{distill, normalized_advantages, train_pg, LinearPolicy};
pub use search::{exhaustive_search, expected_sequences_count, FoundAttack, SearchOutcome, SEARCH_GUARD};
pub use tabular::{train_tabular, TabularPolicy};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::detect::{self, CyclonePenalty, VictimMissMonitor};
use crate::env::{CacheGuessingEnv, EnvConfig, TerminalReason};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Argmax with lowest-index tie-break.
    Deterministic,
    Stochastic,
}

/// Anything that picks actions in the guessing game.
pub trait Actor {
    fn begin_episode(&mut self) {}
    fn act(&mut self, env: &CacheGuessingEnv, rng: &mut ChaCha8Rng) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Tabular(TabularPolicy),
    Linear(LinearPolicy),
}

impl Policy {
    pub fn num_actions(&self) -> usize {
        match self {
            Policy::Tabular(p) => p.num_actions,
            Policy::Linear(p) => p.num_actions,
        }
    }

    pub fn choose(&self, env: &CacheGuessingEnv, mode: Mode, rng: &mut ChaCha8Rng) -> usize {
        match self {
            Policy::Tabular(p) => p.choose(env, mode, rng),
            Policy::Linear(p) => p.choose(env, mode, rng),
        }
    }

    pub fn actor(&self, mode: Mode) -> PolicyActor<'_> {
        PolicyActor { policy: self, mode }
    }
}

pub struct PolicyActor<'a> {
    policy: &'a Policy,
    mode: Mode,
}

impl Actor for PolicyActor<'_> {
    fn act(&mut self, env: &CacheGuessingEnv, rng: &mut ChaCha8Rng) -> usize {
        self.policy.choose(env, self.mode, rng)
    }
}

/// Guesses uniformly at random right away.
pub struct RandomGuesser;

impl Actor for RandomGuesser {
    fn act(&mut self, env: &CacheGuessingEnv, rng: &mut ChaCha8Rng) -> usize {
        let s = env.action_space();
        s.first_guess_index() + rng.gen_range(0..s.num_guesses())
    }
}

/// Returns the index of the largest value, lowest index on ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub gamma: f64,
    pub lr: f64,
    /// Return mixing of the tabular update: 0 bootstraps from the best next
    /// action, 1 uses the observed return.
    pub q_lambda: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `max_steps` over which epsilon decays linearly.
    pub eps_decay_frac: f64,
    pub entropy_coef: f64,
    /// Episodes per policy-gradient batch.
    pub batch_episodes: usize,
    pub max_steps: u64,
    /// Steps between evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub target_accuracy: f64,
    /// Clip ratio for the clipped-surrogate update; plain REINFORCE if `None`.
    pub ppo_clip: Option<f64>,
    pub ppo_epochs: usize,
    /// Newest window records used as the tabular state; whole window if `None`.
    pub tabular_history: Option<usize>,
    /// History length of the tabular backoff table; no backoff if `None`.
    pub tabular_backoff: Option<usize>,
    /// Bucket width of the guess count added to tabular keys; none if `None`.
    pub tabular_guess_bucket: Option<usize>,
    pub workers: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 0.1,
            q_lambda: 0.0,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.5,
            entropy_coef: 0.01,
            batch_episodes: 64,
            max_steps: 2_000_000,
            eval_interval: 20_000,
            eval_episodes: 2_000,
            target_accuracy: 0.95,
            ppo_clip: None,
            ppo_epochs: 4,
            tabular_history: None,
            tabular_backoff: None,
            tabular_guess_bucket: None,
            workers: 1,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Defaults tuned for the linear policy gradient learner.
    pub fn pg() -> Self {
        Self { lr: 0.002, batch_episodes: 32, entropy_coef: 0.02, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_reward: f64,
    pub accuracy: f64,
    pub episode_len: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps_taken: u64,
    pub episodes: u64,
    pub final_accuracy: f64,
    pub mean_episode_length: f64,
    pub reward_curve: Vec<CurvePoint>,
    pub wall_time_s: f64,
    pub converged: bool,
}

/// Per-episode detector applied during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeDetector {
    CcHunter { max_lag: usize, threshold: f64 },
    Cyclone(CyclonePenalty),
    VictimMiss(VictimMissMonitor),
}

impl EpisodeDetector {
    pub fn flags(&self, env: &CacheGuessingEnv) -> bool {
        match self {
            EpisodeDetector::CcHunter { max_lag, threshold } => {
                detect::cc_hunter_detect(env.event_train(), *max_lag, *threshold)
            }
            EpisodeDetector::Cyclone(c) => c.detects(env.cache().events(), env.config().num_blocks()),
            EpisodeDetector::VictimMiss(m) => m.fires(env.trace()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalStats {
    pub episodes: usize,
    pub accuracy: f64,
    pub mean_len: f64,
    /// Guesses per step.
    pub bit_rate: f64,
    pub detection_rate: f64,
    pub mean_reward: f64,
    pub guesses: usize,
    pub correct: usize,
    /// Guesses plus rounds cut short.
    pub attempts: usize,
    pub steps: usize,
    pub victim_misses: usize,
    pub flagged: usize,
    pub total_reward: f64,
}

impl EvalStats {
    fn add(&mut self, o: &EvalStats) {
        self.episodes += o.episodes;
        self.guesses += o.guesses;
        self.correct += o.correct;
        self.attempts += o.attempts;
        self.steps += o.steps;
        self.victim_misses += o.victim_misses;
        self.flagged += o.flagged;
        self.total_reward += o.total_reward;
    }

    fn finish(&mut self) {
        let e = self.episodes.max(1) as f64;
        self.accuracy = self.correct as f64 / self.attempts.max(1) as f64;
        self.mean_len = self.steps as f64 / e;
        self.bit_rate = if self.steps == 0 { 0.0 } else { self.guesses as f64 / self.steps as f64 };
        self.detection_rate = self.flagged as f64 / e;
        self.mean_reward = self.total_reward / e;
    }
}

/// Plays `episodes` episodes and aggregates the results.
///
/// Accuracy counts correct guesses over guesses, where a round cut short by
/// a length violation or a detection counts as one wrong guess.
pub fn evaluate<A: Actor>(
    actor: &mut A,
    env: &mut CacheGuessingEnv,
    episodes: usize,
    detector: Option<&EpisodeDetector>,
    seed: u64,
) -> Result<EvalStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = EvalStats::default();
    for _ in 0..episodes {
        env.reset();
        actor.begin_episode();
        let out = loop {
            let a = actor.act(env, &mut rng);
            let r = env.step(a)?;
            if let Some(o) = r.outcome {
                break o;
            }
        };
        st.episodes += 1;
        st.steps += out.num_steps;
        st.guesses += out.guesses;
        st.correct += out.correct_guesses;
        let cut_short = matches!(out.terminal_reason, TerminalReason::LengthViolation | TerminalReason::Detected);
        st.attempts += out.guesses + usize::from(cut_short);
        st.victim_misses += out.victim_misses;
        st.total_reward += out.total_reward;
        let caught = out.terminal_reason == TerminalReason::Detected
            || out.cyclone_detected
            || detector.map_or(false, |d| d.flags(env));
        st.flagged += usize::from(caught);
    }
    st.finish();
    Ok(st)
}

/// Evaluates a policy over `workers` independent environments seeded
/// `seed + i`, splitting the episodes evenly.
pub fn evaluate_policy(
    policy: &Policy,
    config: &EnvConfig,
    mode: Mode,
    episodes: usize,
    detector: Option<&EpisodeDetector>,
    workers: usize,
    seed: u64,
) -> Result<EvalStats> {
    let workers = workers.max(1);
    if workers == 1 {
        let mut env = CacheGuessingEnv::new(config.clone())?;
        return evaluate(&mut policy.actor(mode), &mut env, episodes, detector, seed);
    }
    let parts: Vec<Result<EvalStats>> = (0..workers)
        .into_par_iter()
        .map(|i| {
            let mut c = config.clone();
            c.rng_seed = config.rng_seed.wrapping_add(i as u64);
            let mut env = CacheGuessingEnv::new(c)?;
            let n = episodes / workers + usize::from(i < episodes % workers);
            evaluate(&mut policy.actor(mode), &mut env, n, detector, seed.wrapping_add(i as u64))
        })
        .collect();
    let mut acc = EvalStats::default();
    for p in parts {
        acc.add(&p?);
    }
    acc.finish();
    Ok(acc)
}
