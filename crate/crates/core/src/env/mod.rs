//! The cache guessing game.
//!
//! Each episode samples a secret (a victim address, or "no access" when
//! enabled). The attacker accesses or flushes its own lines, triggers the
//! victim, and finally guesses the secret. Only attacker accesses reveal a
//! latency; victim accesses stay hidden.

mod config_file;
mod encode;

pub use config_file::{parse_config, render_config};
pub use encode::{active_features, encode, feature_len, record_len, window_key};

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::{CacheConfig, CacheEvent, CacheState, Domain, Latency, PrefetcherKind, TraceLine, VictimLatency};
use crate::detect::{self, CyclonePenalty};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub correct_guess_reward: f64,
    pub wrong_guess_reward: f64,
    pub step_reward: f64,
    pub length_violation_reward: f64,
    pub detection_reward: f64,
    /// Scale `a` of the autocorrelation penalty, applied at the end of a
    /// multi-round episode.
    pub autocorr_penalty_scale: f64,
    pub autocorr_max_lag: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            correct_guess_reward: 200.0,
            wrong_guess_reward: -10_000.0,
            step_reward: -10.0,
            length_violation_reward: -10_000.0,
            detection_reward: -5_000.0,
            autocorr_penalty_scale: 0.0,
            autocorr_max_lag: 20,
        }
    }
}

impl RewardConfig {
    /// Multiplies every reward term by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            correct_guess_reward: self.correct_guess_reward * k,
            wrong_guess_reward: self.wrong_guess_reward * k,
            step_reward: self.step_reward * k,
            length_violation_reward: self.length_violation_reward * k,
            detection_reward: self.detection_reward * k,
            autocorr_penalty_scale: self.autocorr_penalty_scale * k,
            autocorr_max_lag: self.autocorr_max_lag,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidEnvConfig(m.into()));
        if !(self.correct_guess_reward > 0.0) {
            return bad("correct_guess_reward must be positive");
        }
        for (name, v) in [
            ("wrong_guess_reward", self.wrong_guess_reward),
            ("step_reward", self.step_reward),
            ("length_violation_reward", self.length_violation_reward),
            ("detection_reward", self.detection_reward),
            ("autocorr_penalty_scale", self.autocorr_penalty_scale),
        ] {
            if !(v <= 0.0) {
                return Err(Error::InvalidEnvConfig(format!("{name} must be <= 0 (got {v})")));
            }
        }
        if self.autocorr_max_lag == 0 {
            return bad("autocorr_max_lag must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub attacker_addr_s: u64,
    pub attacker_addr_e: u64,
    pub victim_addr_s: u64,
    pub victim_addr_e: u64,
    pub flush_enable: bool,
    pub victim_no_access_enable: bool,
    pub detection_enable: bool,
    pub window_size: usize,
    pub cache: CacheConfig,
    /// Victim-domain accesses replayed before every episode.
    pub warmup: Vec<u64>,
    /// Lines locked after warmup (PL cache only).
    pub lock: Vec<u64>,
    /// Total step budget for multi-round play.
    pub multi_round_budget: Option<usize>,
    pub rewards: RewardConfig,
    /// Optional end-of-episode classifier penalty (multi-round only).
    pub cyclone_penalty: Option<CyclonePenalty>,
    pub rng_seed: u64,
}

impl EnvConfig {
    pub fn new(cache: CacheConfig, attacker: (u64, u64), victim: (u64, u64)) -> Self {
        Self {
            attacker_addr_s: attacker.0,
            attacker_addr_e: attacker.1,
            victim_addr_s: victim.0,
            victim_addr_e: victim.1,
            flush_enable: false,
            victim_no_access_enable: false,
            detection_enable: false,
            window_size: 4 * cache.num_sets * cache.num_ways,
            cache,
            warmup: Vec::new(),
            lock: Vec::new(),
            multi_round_budget: None,
            rewards: RewardConfig::default(),
            cyclone_penalty: None,
            rng_seed: 0,
        }
    }

    /// Number of lines the simulator must model: both ranges, plus one
    /// more line for the prefetcher to reach past the top.
    pub fn universe(&self) -> u64 {
        let top = self.attacker_addr_e.max(self.victim_addr_e) + 1;
        if self.cache.prefetcher == PrefetcherKind::None {
            top
        } else {
            top + 1
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.cache.num_sets * self.cache.num_ways
    }

    pub fn validate(&self) -> Result<()> {
        self.cache.validate()?;
        self.rewards.validate()?;
        if self.attacker_addr_s > self.attacker_addr_e {
            return Err(Error::InvalidEnvConfig("attacker_addr_s exceeds attacker_addr_e".into()));
        }
        if self.victim_addr_s > self.victim_addr_e {
            return Err(Error::InvalidEnvConfig("victim_addr_s exceeds victim_addr_e".into()));
        }
        if self.window_size == 0 {
            return Err(Error::InvalidEnvConfig("window_size must be at least 1".into()));
        }
        let u = self.universe();
        if let Some(&a) = self.warmup.iter().chain(&self.lock).find(|&&a| a >= u) {
            return Err(Error::InvalidEnvConfig(format!("warmup/lock address {a} outside universe {u}")));
        }
        if !self.lock.is_empty() && !self.cache.pl_cache {
            return Err(Error::InvalidEnvConfig("lock requires pl_cache".into()));
        }
        if self.multi_round_budget == Some(0) {
            return Err(Error::InvalidEnvConfig("multi_round_budget must be positive".into()));
        }
        Ok(())
    }

    /// All possible secrets in sampling order.
    pub fn secrets(&self) -> Vec<Secret> {
        let mut s: Vec<Secret> = (self.victim_addr_s..=self.victim_addr_e).map(Secret::Addr).collect();
        if self.victim_no_access_enable {
            s.push(Secret::NoAccess);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Secret {
    Addr(u64),
    NoAccess,
}

impl std::fmt::Display for Secret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Secret::Addr(a) => write!(f, "{a}"),
            Secret::NoAccess => f.write_str("E"),
        }
    }
}

impl std::str::FromStr for Secret {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "E" => Ok(Secret::NoAccess),
            _ => s.parse().map(Secret::Addr).map_err(|_| format!("bad secret `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Access(u64),
    Flush(u64),
    TriggerVictim,
    Guess(Secret),
}

impl Action {
    pub fn is_guess(self) -> bool {
        matches!(self, Action::Guess(_))
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Access(a) => write!(f, "{a}"),
            Action::Flush(a) => write!(f, "f{a}"),
            Action::TriggerVictim => f.write_str("v"),
            Action::Guess(s) => write!(f, "g{s}"),
        }
    }
}

/// Maps unified action indices to actions.
///
/// Layout: attacker accesses ascending, flushes (if enabled), the victim
/// trigger, guesses over victim addresses ascending, and "guess no access"
/// last (if enabled).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    attacker_s: u64,
    k: usize,
    flush: bool,
    victim_s: u64,
    nv: usize,
    no_access: bool,
}

impl ActionSpace {
    pub fn new(cfg: &EnvConfig) -> Self {
        Self {
            attacker_s: cfg.attacker_addr_s,
            k: (cfg.attacker_addr_e - cfg.attacker_addr_s + 1) as usize,
            flush: cfg.flush_enable,
            victim_s: cfg.victim_addr_s,
            nv: (cfg.victim_addr_e - cfg.victim_addr_s + 1) as usize,
            no_access: cfg.victim_no_access_enable,
        }
    }

    pub fn len(&self) -> usize {
        self.trigger_index() + 1 + self.nv + usize::from(self.no_access)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn trigger_index(&self) -> usize {
        if self.flush {
            2 * self.k
        } else {
            self.k
        }
    }

    pub fn num_guesses(&self) -> usize {
        self.nv + usize::from(self.no_access)
    }

    pub fn first_guess_index(&self) -> usize {
        self.trigger_index() + 1
    }

    pub fn decode(&self, index: usize) -> Result<Action> {
        let t = self.trigger_index();
        let a = if index < self.k {
            Action::Access(self.attacker_s + index as u64)
        } else if index < t {
            Action::Flush(self.attacker_s + (index - self.k) as u64)
        } else if index == t {
            Action::TriggerVictim
        } else if index < t + 1 + self.nv {
            Action::Guess(Secret::Addr(self.victim_s + (index - t - 1) as u64))
        } else if index == t + 1 + self.nv && self.no_access {
            Action::Guess(Secret::NoAccess)
        } else {
            return Err(Error::ActionOutOfRange { index, len: self.len() });
        };
        Ok(a)
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        let t = self.trigger_index();
        let in_att = |a: u64| a >= self.attacker_s && ((a - self.attacker_s) as usize) < self.k;
        match action {
            Action::Access(a) if in_att(a) => Some((a - self.attacker_s) as usize),
            Action::Flush(a) if self.flush && in_att(a) => Some(self.k + (a - self.attacker_s) as usize),
            Action::TriggerVictim => Some(t),
            Action::Guess(Secret::Addr(a)) if a >= self.victim_s && ((a - self.victim_s) as usize) < self.nv => {
                Some(t + 1 + (a - self.victim_s) as usize)
            }
            Action::Guess(Secret::NoAccess) if self.no_access => Some(t + 1 + self.nv),
            _ => None,
        }
    }

    pub fn actions(&self) -> Vec<Action> {
        (0..self.len()).map(|i| self.decode(i).expect("index in range")).collect()
    }
}

/// Latency as seen by the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObsLatency {
    Hit,
    Miss,
    Na,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepRecord {
    pub latency: ObsLatency,
    pub action_index: usize,
    /// 1-based step number within the current round.
    pub step_number: usize,
    pub victim_triggered: bool,
}

/// The last `W` step records, oldest first; `None` marks padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub window: Vec<Option<StepRecord>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalReason {
    CorrectGuess,
    WrongGuess,
    LengthViolation,
    Detected,
    /// Multi-round play used up its step budget.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub terminal_reason: TerminalReason,
    pub total_reward: f64,
    pub num_steps: usize,
    pub secret: Secret,
    pub event_train: Vec<u8>,
    pub guesses: usize,
    pub correct_guesses: usize,
    pub victim_misses: usize,
    /// Penalties added at the end of a multi-round episode.
    pub autocorr_penalty: f64,
    pub cyclone_detected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Option<EpisodeOutcome>,
    /// Latency of this step as the agent observes it.
    pub latency: ObsLatency,
}

#[derive(Debug, Clone)]
pub struct CacheGuessingEnv {
    config: EnvConfig,
    space: ActionSpace,
    secrets: Vec<Secret>,
    cache: CacheState,
    rng: ChaCha8Rng,
    secret: Secret,
    window: VecDeque<Option<StepRecord>>,
    round_steps: usize,
    total_steps: usize,
    triggered: bool,
    done: bool,
    total_reward: f64,
    guesses: usize,
    correct: usize,
    victim_misses: usize,
    trace: Vec<TraceLine>,
    event_train: Vec<u8>,
}

impl CacheGuessingEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let cache = CacheState::new(config.cache.clone(), config.universe())?;
        let w = config.window_size;
        let mut env = Self {
            space: ActionSpace::new(&config),
            secrets: config.secrets(),
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            cache,
            secret: Secret::NoAccess,
            window: VecDeque::from(vec![None; w]),
            round_steps: 0,
            total_steps: 0,
            triggered: false,
            done: true,
            total_reward: 0.0,
            guesses: 0,
            correct: 0,
            victim_misses: 0,
            trace: Vec::new(),
            event_train: Vec::new(),
            config,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn num_actions(&self) -> usize {
        self.space.len()
    }

    pub fn secrets(&self) -> &[Secret] {
        &self.secrets
    }

    pub fn secret(&self) -> Secret {
        self.secret
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trace(&self) -> &[TraceLine] {
        &self.trace
    }

    pub fn event_train(&self) -> &[u8] {
        &self.event_train
    }

    /// Guesses made so far in the episode.
    pub fn guesses_made(&self) -> usize {
        self.guesses
    }

    pub fn victim_misses(&self) -> usize {
        self.victim_misses
    }

    /// Restarts the secret generator from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Remaps the cache's address permutation. The new mapping persists
    /// across resets.
    pub fn remap(&mut self) {
        self.cache.remap();
    }

    /// Starts an episode with a uniformly sampled secret.
    pub fn reset(&mut self) -> Observation {
        let s = self.secrets[self.rng.gen_range(0..self.secrets.len())];
        self.reset_with_secret(s)
    }

    /// Starts an episode with a fixed secret (used for deterministic replay).
    pub fn reset_with_secret(&mut self, secret: Secret) -> Observation {
        self.cache.reset_lines();
        for &a in &self.config.warmup {
            self.cache.access(a, Domain::Victim).expect("warmup validated");
        }
        for &a in &self.config.lock {
            // a lock target evicted during warmup simply stays unlocked
            let _ = self.cache.lock(a);
        }
        self.cache.clear_events();
        self.secret = secret;
        self.window.iter_mut().for_each(|r| *r = None);
        self.round_steps = 0;
        self.total_steps = 0;
        self.triggered = false;
        self.done = false;
        self.total_reward = 0.0;
        self.guesses = 0;
        self.correct = 0;
        self.victim_misses = 0;
        self.trace.clear();
        self.event_train.clear();
        self.observation()
    }

    /// Replaces the secret mid-episode, as a multi-round guess does.
    pub fn set_secret(&mut self, secret: Secret) {
        self.secret = secret;
    }

    pub fn observation(&self) -> Observation {
        Observation { window: self.window.iter().copied().collect() }
    }

    pub fn window(&self) -> &VecDeque<Option<StepRecord>> {
        &self.window
    }

    pub fn step_action(&mut self, action: Action) -> Result<StepResult> {
        let idx = self.space.index_of(action).ok_or_else(|| match action {
            Action::Flush(_) if !self.config.flush_enable => Error::FlushDisabled,
            _ => Error::InvalidEnvConfig(format!("action {action} is not in the action space")),
        })?;
        self.step(idx)
    }

    pub fn step(&mut self, index: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let action = self.space.decode(index)?;
        let r = self.config.rewards.clone();
        let mut reward = 0.0;
        let mut terminal = None;
        let mut latency = ObsLatency::Na;
        let step_number = self.round_steps + 1;

        match action {
            Action::Access(a) => {
                let res = self.cache.access(a, Domain::Attacker)?;
                let hit = res.latency == Latency::Hit;
                latency = if hit { ObsLatency::Hit } else { ObsLatency::Miss };
                self.trace.push(TraceLine::Access { addr: a, hit });
                self.note_access(&res);
                reward += r.step_reward;
            }
            Action::Flush(a) => {
                self.cache.flush(a)?;
                self.trace.push(TraceLine::Flush { addr: a });
                reward += r.step_reward;
            }
            Action::TriggerVictim => {
                self.triggered = true;
                reward += r.step_reward;
                match self.secret {
                    Secret::Addr(s) => {
                        let res = self.cache.access(s, Domain::Victim)?;
                        let miss = res.latency == Latency::Miss;
                        self.trace.push(TraceLine::Victim(if miss { VictimLatency::Miss } else { VictimLatency::Hit }));
                        self.note_access(&res);
                        if miss {
                            self.victim_misses += 1;
                            if self.config.detection_enable {
                                reward += r.detection_reward;
                                terminal = Some(TerminalReason::Detected);
                            }
                        }
                    }
                    Secret::NoAccess => self.trace.push(TraceLine::Victim(VictimLatency::Na)),
                }
            }
            Action::Guess(g) => {
                self.guesses += 1;
                let ok = self.triggered && g == self.secret;
                if ok {
                    self.correct += 1;
                    reward += r.correct_guess_reward;
                } else {
                    reward += r.wrong_guess_reward;
                }
                if self.config.multi_round_budget.is_none() {
                    terminal = Some(if ok { TerminalReason::CorrectGuess } else { TerminalReason::WrongGuess });
                }
            }
        }

        self.total_steps += 1;
        self.window.pop_front();
        self.window.push_back(Some(StepRecord {
            latency,
            action_index: index,
            step_number: step_number.min(self.config.window_size),
            victim_triggered: self.triggered,
        }));

        if action.is_guess() {
            self.round_steps = 0;
            if self.config.multi_round_budget.is_some() {
                self.triggered = false;
                self.secret = self.secrets[self.rng.gen_range(0..self.secrets.len())];
            }
        } else {
            self.round_steps += 1;
            if terminal.is_none() && self.round_steps >= self.config.window_size {
                reward += r.length_violation_reward;
                terminal = Some(TerminalReason::LengthViolation);
            }
        }

        let mut autocorr_penalty = 0.0;
        let mut cyclone_detected = false;
        if let Some(budget) = self.config.multi_round_budget {
            if terminal.is_none() && self.total_steps >= budget {
                terminal = Some(TerminalReason::BudgetExhausted);
            }
            if terminal.is_some() {
                autocorr_penalty =
                    detect::autocorr_penalty(&self.event_train, r.autocorr_penalty_scale, r.autocorr_max_lag);
                reward += autocorr_penalty;
                if let Some(cp) = &self.config.cyclone_penalty {
                    cyclone_detected = cp.detects(self.cache.events(), self.config.num_blocks());
                    if cyclone_detected {
                        reward += cp.penalty;
                    }
                }
            }
        }

        self.total_reward += reward;
        let outcome = terminal.map(|t| {
            self.done = true;
            EpisodeOutcome {
                terminal_reason: t,
                total_reward: self.total_reward,
                num_steps: self.total_steps,
                secret: self.secret,
                event_train: self.event_train.clone(),
                guesses: self.guesses,
                correct_guesses: self.correct,
                victim_misses: self.victim_misses,
                autocorr_penalty,
                cyclone_detected,
            }
        });
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: self.done,
            outcome,
            latency,
        })
    }

    fn note_access(&mut self, res: &crate::cache::AccessResult) {
        if self.cache.events().last() == Some(&CacheEvent::Remap) {
            self.trace.push(TraceLine::Remap);
        }
        if let Some(c) = res.conflict_event {
            self.event_train.push(c.bit());
        }
        if let Some(p) = res.prefetch {
            self.trace.push(TraceLine::Prefetch { addr: p.addr });
            if let Some(c) = p.conflict_event {
                self.event_train.push(c.bit());
            }
        }
    }
}
