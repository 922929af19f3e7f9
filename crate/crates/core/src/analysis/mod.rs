//! Attack traces: extraction from policies, replay, classification and
//! scripted reference attacks.
//!
//! An attack is stored as a trace tree. Each [`TracePath`] is the sequence
//! of trace lines one secret produces, ending in a guess. Paths share a
//! prefix until the first observation that differs, so replaying the tree
//! means following the path whose recorded latencies match what the cache
//! returns. Multi-round attacks keep one tree per round; the last tree
//! repeats for every later round.

mod classify;
mod export;
mod scripted;

pub use classify::{classify, Category};
pub use export::{export_traces, import_traces};
pub use scripted::{stealthy_streamline, textbook_prime_probe, textbook_prime_probe_rounds};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{evaluate, evaluate_policy, Actor, EvalStats, FoundAttack, Mode, Policy};
use crate::cache::{TraceLine, VictimLatency};
use crate::detect::{cyclone_features, CycloneParams};
use crate::env::{Action, CacheGuessingEnv, EnvConfig, ObsLatency, Secret, TerminalReason};
use crate::error::{Error, Result};

/// Accuracy a policy must reach before its traces are extracted.
pub const EXTRACT_THRESHOLD: f64 = 0.95;

/// Trials used to validate the accuracy gate and the extracted tree.
pub const EXTRACT_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceStep {
    pub action: Action,
    pub latency: ObsLatency,
}

/// One root-to-leaf path of a trace tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePath {
    /// Secrets that produce this path.
    pub secrets: Vec<Secret>,
    /// Trace lines as recorded by the environment, guess excluded.
    pub lines: Vec<TraceLine>,
    /// Final guess, `None` when the episode ended without one.
    pub guess: Option<Secret>,
}

impl TracePath {
    /// Attacker-visible steps: actions with the latency they returned.
    pub fn steps(&self) -> Vec<TraceStep> {
        let mut out: Vec<TraceStep> = self
            .lines
            .iter()
            .filter_map(|l| {
                let (action, latency) = match *l {
                    TraceLine::Access { addr, hit } => {
                        (Action::Access(addr), if hit { ObsLatency::Hit } else { ObsLatency::Miss })
                    }
                    TraceLine::Flush { addr } => (Action::Flush(addr), ObsLatency::Na),
                    TraceLine::Victim(_) => (Action::TriggerVictim, ObsLatency::Na),
                    TraceLine::Prefetch { .. } | TraceLine::Remap => return None,
                };
                Some(TraceStep { action, latency })
            })
            .collect();
        if let Some(g) = self.guess {
            out.push(TraceStep { action: Action::Guess(g), latency: ObsLatency::Na });
        }
        out
    }

    pub fn victim_misses(&self) -> usize {
        self.lines.iter().filter(|l| **l == TraceLine::Victim(VictimLatency::Miss)).count()
    }
}

/// Per-round trace trees.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTree {
    pub rounds: Vec<Vec<TracePath>>,
}

impl AttackTree {
    /// Checks that paths agree on the next action wherever their observed
    /// histories coincide, and that no two paths end in different guesses
    /// after the same observations.
    pub fn check(&self) -> Result<()> {
        for (r, paths) in self.rounds.iter().enumerate() {
            if paths.is_empty() {
                return Err(Error::InconsistentTree(format!("round {r} has no paths")));
            }
            let steps: Vec<Vec<TraceStep>> = paths.iter().map(TracePath::steps).collect();
            for i in 0..steps.len() {
                for j in i + 1..steps.len() {
                    let (a, b) = (&steps[i], &steps[j]);
                    let mut k = 0;
                    while k < a.len() && k < b.len() && a[k] == b[k] {
                        k += 1;
                    }
                    let clash = match (a.get(k), b.get(k)) {
                        (Some(x), Some(y)) => x.action != y.action,
                        _ => true,
                    };
                    if clash {
                        return Err(Error::InconsistentTree(format!(
                            "round {r}: paths {i} and {j} diverge at step {k} without a differing observation"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Replays the attack-relevant actions of every path against `config`
    /// and reports actions the config does not offer.
    pub fn check_config(&self, config: &EnvConfig) -> Result<()> {
        let space = crate::env::ActionSpace::new(config);
        for p in self.rounds.iter().flatten() {
            for s in p.steps() {
                if space.index_of(s.action).is_none() {
                    let why = match s.action {
                        Action::Flush(_) if !config.flush_enable => "flush is disabled".to_string(),
                        a => format!("action {a} is not in the action space"),
                    };
                    return Err(Error::ConfigMismatch(why));
                }
            }
        }
        Ok(())
    }

    pub fn num_paths(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }

    /// Builds a single-round tree by replaying a fixed action list for every
    /// secret. The guess of each path is its own secret. Fails when two
    /// secrets produce the same observations.
    pub fn from_sequence(config: &EnvConfig, actions: &[Action]) -> Result<Self> {
        let t = Self::from_sequence_lenient(config, actions)?;
        t.check()?;
        Ok(t)
    }

    /// Like [`AttackTree::from_sequence`] but merges secrets with identical
    /// observations into one path that guesses the first of them.
    pub fn from_sequence_lenient(config: &EnvConfig, actions: &[Action]) -> Result<Self> {
        let per: Vec<(Secret, Vec<Action>)> = config.secrets().into_iter().map(|s| (s, actions.to_vec())).collect();
        Ok(Self { rounds: vec![replay_paths(config, &[], &per)?] })
    }

    /// Builds a single-round tree from one action list per secret.
    pub fn from_per_secret(config: &EnvConfig, per: &[(Secret, Vec<Action>)]) -> Result<Self> {
        let t = Self { rounds: vec![replay_paths(config, &[], per)?] };
        t.check()?;
        Ok(t)
    }

    /// Builds a multi-round tree. Round `k` is replayed after rounds
    /// `0..k` played with the first secret, which is exact for attacks that
    /// return the cache to a secret-independent state at every guess.
    pub fn from_rounds(config: &EnvConfig, rounds: &[Vec<Action>]) -> Result<Self> {
        let secrets = config.secrets();
        let mut prefix = Vec::new();
        let mut out = Vec::with_capacity(rounds.len());
        for r in rounds {
            let per: Vec<(Secret, Vec<Action>)> = secrets.iter().map(|&s| (s, r.clone())).collect();
            out.push(replay_paths(config, &prefix, &per)?);
            prefix.extend(r.iter().copied());
        }
        let t = Self { rounds: out };
        t.check()?;
        Ok(t)
    }

    /// Converts a brute-force search result into a tree.
    pub fn from_found(config: &EnvConfig, found: &FoundAttack) -> Result<Self> {
        Self::from_sequence(config, &found.actions)
    }

    pub fn actor(&self) -> TreeActor<'_> {
        TreeActor::new(self)
    }
}

/// Replays `prefix` (with the first secret) and then each per-secret list,
/// collecting one path per distinct observation history.
fn replay_paths(config: &EnvConfig, prefix: &[Action], per: &[(Secret, Vec<Action>)]) -> Result<Vec<TracePath>> {
    let mut cfg = config.clone();
    cfg.multi_round_budget = None;
    cfg.detection_enable = false;
    cfg.window_size = cfg.window_size.max(prefix.len() + per.iter().map(|p| p.1.len()).max().unwrap_or(0) + 1);
    let mut env = CacheGuessingEnv::new(cfg)?;
    let first = config.secrets()[0];
    let mut paths: Vec<TracePath> = Vec::new();
    for (secret, actions) in per {
        let lines = if prefix.is_empty() {
            env.reset_with_secret(*secret);
            for &a in actions.iter().filter(|a| !a.is_guess()) {
                env.step_action(a)?;
            }
            env.trace().to_vec()
        } else {
            // the secret changes at the round boundary, so the prefix runs
            // with `first` and the round with `secret` on a copied cache
            env.reset_with_secret(first);
            for &a in prefix.iter().filter(|a| !a.is_guess()) {
                env.step_action(a)?;
            }
            let skip = env.trace().len();
            let mut tail = env.clone();
            tail.set_secret(*secret);
            for &a in actions.iter().filter(|a| !a.is_guess()) {
                tail.step_action(a)?;
            }
            tail.trace()[skip..].to_vec()
        };
        let path = TracePath { secrets: vec![*secret], lines, guess: Some(*secret) };
        let key = path_key(&path);
        match paths.iter_mut().find(|p| path_key(p) == key) {
            Some(p) => p.secrets.push(*secret),
            None => paths.push(path),
        }
    }
    Ok(paths)
}

/// Observation history without the guess.
fn path_key(p: &TracePath) -> Vec<TraceStep> {
    let mut s = p.steps();
    if p.guess.is_some() {
        s.pop();
    }
    s
}

/// Plays a trace tree: follows the first path consistent with the
/// latencies seen so far and guesses wrong when none matches.
pub struct TreeActor<'a> {
    steps: Vec<Vec<Vec<TraceStep>>>,
    tree: &'a AttackTree,
    round: usize,
    history: Vec<TraceStep>,
    pending: bool,
}

impl<'a> TreeActor<'a> {
    pub fn new(tree: &'a AttackTree) -> Self {
        let steps = tree.rounds.iter().map(|r| r.iter().map(TracePath::steps).collect()).collect();
        Self { steps, tree, round: 0, history: Vec::new(), pending: false }
    }

    pub fn tree(&self) -> &AttackTree {
        self.tree
    }

    fn next_action(&self) -> Option<Action> {
        let round = &self.steps[self.round.min(self.steps.len() - 1)];
        let h = self.history.len();
        round
            .iter()
            .find(|p| p.len() > h && p[..h] == self.history[..])
            .map(|p| p[h].action)
    }
}

impl Actor for TreeActor<'_> {
    fn begin_episode(&mut self) {
        self.round = 0;
        self.history.clear();
        self.pending = false;
    }

    fn act(&mut self, env: &CacheGuessingEnv, _rng: &mut ChaCha8Rng) -> usize {
        if self.pending {
            if let (Some(last), Some(Some(rec))) = (self.history.last_mut(), env.window().back()) {
                last.latency = rec.latency;
            }
            self.pending = false;
        }
        let space = env.action_space();
        let fallback = space.first_guess_index();
        let Some(action) = self.next_action() else {
            self.round += 1;
            self.history.clear();
            return fallback;
        };
        if action.is_guess() {
            self.round += 1;
            self.history.clear();
        } else {
            self.history.push(TraceStep { action, latency: ObsLatency::Na });
            self.pending = true;
        }
        space.index_of(action).unwrap_or(fallback)
    }
}

/// Replays a tree for `n_trials` episodes.
///
/// Deterministic caches give exactly 1.0 for a correct tree; random
/// replacement gives the empirical rate.
pub fn verify(tree: &AttackTree, config: &EnvConfig, n_trials: usize, seed: u64) -> Result<EvalStats> {
    if n_trials == 0 {
        return Err(Error::InvalidEnvConfig("n_trials must be at least 1".into()));
    }
    tree.check_config(config)?;
    let mut env = CacheGuessingEnv::new(config.clone())?;
    env.reseed(seed);
    evaluate(&mut tree.actor(), &mut env, n_trials, None, seed)
}

/// Replays a tree with the secret fixed to `secret`.
pub fn verify_secret(tree: &AttackTree, config: &EnvConfig, secret: Secret, n_trials: usize) -> Result<EvalStats> {
    tree.check_config(config)?;
    let mut env = CacheGuessingEnv::new(config.clone())?;
    let mut actor = tree.actor();
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    let mut st = EvalStats::default();
    for _ in 0..n_trials {
        env.reset_with_secret(secret);
        actor.begin_episode();
        let out = loop {
            let a = actor.act(&env, &mut rng);
            if let Some(o) = env.step(a)?.outcome {
                break o;
            }
        };
        st.episodes += 1;
        st.steps += out.num_steps;
        st.guesses += out.guesses;
        st.correct += out.correct_guesses;
        st.attempts += out.guesses.max(1);
        st.victim_misses += out.victim_misses;
        st.total_reward += out.total_reward;
    }
    st.accuracy = st.correct as f64 / st.attempts.max(1) as f64;
    st.mean_len = st.steps as f64 / st.episodes.max(1) as f64;
    Ok(st)
}

/// Extracted and verified traces of one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTraceSet {
    pub config: EnvConfig,
    pub tree: AttackTree,
    pub verified_accuracy: f64,
    pub victim_miss_count: usize,
    pub category: Category,
}

impl AttackTraceSet {
    /// Verifies and classifies a tree.
    pub fn from_tree(config: &EnvConfig, tree: AttackTree) -> Result<Self> {
        let st = verify(&tree, config, EXTRACT_TRIALS, config.rng_seed)?;
        let category = classify(&tree, config)?;
        let victim_miss_count = tree.rounds.iter().flatten().map(TracePath::victim_misses).sum();
        Ok(Self { config: config.clone(), tree, verified_accuracy: st.accuracy, victim_miss_count, category })
    }
}

/// Replays `policy` deterministically once per secret and records the
/// resulting paths.
///
/// Refuses policies whose deterministic accuracy is below
/// [`EXTRACT_THRESHOLD`] and multi-round configs.
pub fn extract_traces(policy: &Policy, config: &EnvConfig) -> Result<AttackTraceSet> {
    if config.multi_round_budget.is_some() {
        return Err(Error::InvalidEnvConfig("trace extraction needs a single-round config".into()));
    }
    let st = evaluate_policy(policy, config, Mode::Deterministic, EXTRACT_TRIALS, None, 1, config.rng_seed)?;
    if st.accuracy < EXTRACT_THRESHOLD {
        return Err(Error::AccuracyGate { accuracy: st.accuracy, threshold: EXTRACT_THRESHOLD });
    }
    let mut env = CacheGuessingEnv::new(config.clone())?;
    let mut rng = rand::SeedableRng::seed_from_u64(config.rng_seed);
    let mut paths: Vec<TracePath> = Vec::new();
    for s in config.secrets() {
        env.reset_with_secret(s);
        let mut guess = None;
        let out = loop {
            let a = policy.choose(&env, Mode::Deterministic, &mut rng);
            if let Action::Guess(g) = env.action_space().decode(a)? {
                guess = Some(g);
            }
            if let Some(o) = env.step(a)?.outcome {
                break o;
            }
        };
        if out.terminal_reason == TerminalReason::LengthViolation || out.terminal_reason == TerminalReason::Detected {
            guess = None;
        }
        let path = TracePath { secrets: vec![s], lines: env.trace().to_vec(), guess };
        let key = path_key(&path);
        match paths.iter_mut().find(|p| path_key(p) == key && p.guess == path.guess) {
            Some(p) => p.secrets.push(s),
            None => paths.push(path),
        }
    }
    AttackTraceSet::from_tree(config, AttackTree { rounds: vec![paths] })
}

/// Cyclone feature vectors of `samples` episodes played by `actor`, one
/// per episode, with the secret generator seeded from `seed`.
pub fn cyclone_samples<A: Actor>(
    actor: &mut A,
    config: &EnvConfig,
    params: CycloneParams,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut env = CacheGuessingEnv::new(config.clone())?;
    env.reseed(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        env.reset();
        actor.begin_episode();
        while !env.is_done() {
            let a = actor.act(&env, &mut rng);
            env.step(a)?;
        }
        out.push(cyclone_features(env.cache().events(), config.num_blocks(), params).as_vector());
    }
    Ok(out)
}

/// Parses a comma-separated action list such as `5,4,7,v,f1,g`.
///
/// Prefetch annotations like `6(p7)` are accepted and ignored, since the
/// cache issues prefetches by itself. A trailing `g` without a secret is
/// dropped; guesses are derived from the observations.
pub fn parse_sequence(text: &str) -> Result<Vec<Action>> {
    let bad = |t: &str| Error::TraceParse { line: 1, msg: format!("bad action `{t}`") };
    let mut out = Vec::new();
    for raw in text.split(',') {
        let t = raw.trim();
        let t = t.split('(').next().unwrap_or(t).trim();
        let a = match t {
            "" => return Err(bad(raw)),
            "v" => Action::TriggerVictim,
            "g" => continue,
            _ if t.starts_with('f') => Action::Flush(t[1..].parse().map_err(|_| bad(t))?),
            _ if t.starts_with('g') => Action::Guess(t[1..].parse().map_err(|_| bad(t))?),
            _ => Action::Access(t.parse().map_err(|_| bad(t))?),
        };
        out.push(a);
    }
    Ok(out)
}
