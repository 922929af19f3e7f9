//! Property checks shared by the `properties` and `acceptance` targets.
//!
//! Each check drives a proptest runner itself and returns a message naming
//! the failing input, so the acceptance harness can report it on one line.

use std::collections::HashMap;

use cachegame::agents::{train_tabular, Hyperparams, Policy};
use cachegame::cache::{CacheConfig, CacheState, Domain, PrefetcherKind, ReplacementAlg};
use cachegame::detect::{autocorr_penalty, autocorrelation};
use cachegame::env::{CacheGuessingEnv, EnvConfig, ObsLatency, RewardConfig, TerminalReason};
use cachegame::presets;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const UNIVERSE: u64 = 16;

#[derive(Debug, Clone, Copy)]
enum Op {
    Access(u64, Domain),
    Flush(u64),
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn alg() -> impl Strategy<Value = ReplacementAlg> {
    prop_oneof![
        Just(ReplacementAlg::Lru),
        Just(ReplacementAlg::Plru),
        Just(ReplacementAlg::Rrip),
        Just(ReplacementAlg::Random),
    ]
}

fn domain() -> impl Strategy<Value = Domain> {
    prop_oneof![Just(Domain::Attacker), Just(Domain::Victim)]
}

fn ops(flush: bool, len: usize) -> impl Strategy<Value = Vec<Op>> {
    let access = (0..UNIVERSE, domain()).prop_map(|(a, d)| Op::Access(a, d));
    let flush_weight = if flush { 1 } else { 0 };
    let op = prop_oneof![4 => access, flush_weight => (0..UNIVERSE).prop_map(Op::Flush)];
    prop::collection::vec(op, 0..len)
}

fn cache_config() -> impl Strategy<Value = CacheConfig> {
    let pf = prop_oneof![
        Just(PrefetcherKind::None),
        Just(PrefetcherKind::NextLine),
        Just(PrefetcherKind::Stream),
    ];
    (alg(), 0..3u32, 0..4u32, pf, any::<u64>(), prop::option::of(1..40u64)).prop_map(|(a, s, w, p, seed, remap)| {
        let mut c = CacheConfig::new(1 << s, 1 << w, a);
        c.prefetcher = p;
        c.rng_seed = seed;
        c.remap_interval = remap;
        c
    })
}

fn apply(c: &mut CacheState, op: Op) {
    match op {
        Op::Access(a, d) => {
            c.access(a, d).expect("address in universe");
        }
        Op::Flush(a) => c.flush(a).expect("address in universe"),
    }
}

/// Two caches built from the same config and fed the same operations end
/// in identical states with identical event logs.
pub fn cache_determinism(cases: u32) -> Result<(), String> {
    run(cases, (cache_config(), ops(true, 200)), |(cfg, ops)| {
        let mut a = CacheState::new(cfg.clone(), UNIVERSE + 1).unwrap();
        let mut b = CacheState::new(cfg, UNIVERSE + 1).unwrap();
        for op in ops {
            apply(&mut a, op);
            apply(&mut b, op);
        }
        prop_assert_eq!(a, b);
        Ok(())
    })
}

/// Without flushes, LRU ages of the valid lines in every set are always a
/// permutation of `0..valid`.
pub fn lru_age_permutation(cases: u32) -> Result<(), String> {
    let cfg = cache_config().prop_map(|mut c| {
        c.rep_alg = ReplacementAlg::Lru;
        c
    });
    run(cases, (cfg, ops(false, 200)), |(cfg, ops)| {
        let mut c = CacheState::new(cfg.clone(), UNIVERSE + 1).unwrap();
        for op in ops {
            apply(&mut c, op);
            for s in 0..cfg.num_sets {
                let mut ages: Vec<u32> = c.set_lines(s).iter().filter(|l| l.valid).map(|l| l.age).collect();
                ages.sort_unstable();
                let want: Vec<u32> = (0..ages.len() as u32).collect();
                prop_assert_eq!(ages, want, "set {} after {:?}", s, op);
            }
        }
        Ok(())
    })
}

/// A locked line survives any flush-free mix of attacker and victim
/// accesses and stays locked.
pub fn pl_lock_persistence(cases: u32) -> Result<(), String> {
    let alg = prop_oneof![Just(ReplacementAlg::Lru), Just(ReplacementAlg::Plru), Just(ReplacementAlg::Rrip)];
    run(cases, (alg, 0..3u32, 0..2u32, 0..UNIVERSE, ops(false, 200)), |(alg, w, s, locked, ops)| {
        let mut cfg = CacheConfig::new(1 << s, 2 << w, alg);
        cfg.pl_cache = true;
        let mut c = CacheState::new(cfg, UNIVERSE).unwrap();
        c.access(locked, Domain::Victim).unwrap();
        c.lock(locked).unwrap();
        for op in ops {
            apply(&mut c, op);
            prop_assert!(c.contains(locked) && c.is_locked(locked), "lost {} after {:?}", locked, op);
        }
        Ok(())
    })
}

/// Every remap draws a permutation of the address universe, so sets stay
/// balanced.
pub fn remap_bijectivity(cases: u32) -> Result<(), String> {
    run(cases, (1..64u64, 0..4u32, any::<u64>(), 0..6usize), |(universe, s, seed, remaps)| {
        let mut cfg = CacheConfig::new(1 << s, 2, ReplacementAlg::Lru);
        cfg.rng_seed = seed;
        let mut c = CacheState::new(cfg.clone(), universe).unwrap();
        for _ in 0..remaps {
            c.remap();
            let mut m = c.mapping().to_vec();
            m.sort_unstable();
            prop_assert_eq!(m, (0..universe).collect::<Vec<_>>());
            let mut per_set = vec![0u64; cfg.num_sets];
            for a in 0..universe {
                per_set[c.set_of(a)] += 1;
            }
            let lo = universe / cfg.num_sets as u64;
            prop_assert!(per_set.iter().all(|&n| n == lo || n == lo + 1), "{:?}", per_set);
        }
        Ok(())
    })
}

/// `|C_p| <= 1` for every binary train and lag, and the L2 penalty lies in
/// `[a, 0]` and grows with `a`.
pub fn autocorrelation_bounds(cases: u32) -> Result<(), String> {
    let train = prop::collection::vec(0..2u8, 0..300);
    run(cases, (train, 0..60usize, -10.0..0.0f64, -10.0..0.0f64, 1..30usize), |(t, p, a, b, lag)| {
        let c = autocorrelation(&t, p);
        prop_assert!(c.abs() <= 1.0 + 1e-9, "C_{} = {}", p, c);
        let pa = autocorr_penalty(&t, a, lag);
        prop_assert!(pa <= 0.0 && pa >= a - 1e-9, "penalty {} for a = {}", pa, a);
        let pb = autocorr_penalty(&t, b, lag);
        if a <= b {
            prop_assert!(pa <= pb + 1e-12, "a = {} gives {} but b = {} gives {}", a, pa, b, pb);
        }
        Ok(())
    })
}

fn reward_config() -> impl Strategy<Value = EnvConfig> {
    let base = prop_oneof![
        Just(presets::table3_config(1).unwrap()),
        Just(presets::table3_config(6).unwrap()),
        Just(presets::case_study_config(ReplacementAlg::Lru)),
        Just(presets::cc_hunter_config(60)),
    ];
    (base, any::<bool>(), -5.0..0.0f64, any::<u64>()).prop_map(|(mut c, det, a, seed)| {
        c.detection_enable = det && c.multi_round_budget.is_none();
        c.rewards = RewardConfig { autocorr_penalty_scale: a, ..presets::multi_round_rewards() };
        c.rng_seed = seed;
        c
    })
}

/// An episode's return is the sum of its step rewards and splits exactly
/// into step costs, guess rewards, terminal penalties and the end-of-episode
/// autocorrelation penalty.
pub fn reward_decomposition(cases: u32) -> Result<(), String> {
    run(cases, (reward_config(), any::<u64>()), |(cfg, seed)| {
        let mut env = CacheGuessingEnv::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset();
        let mut sum = 0.0;
        let out = loop {
            let r = env.step(rng.gen_range(0..env.num_actions())).unwrap();
            sum += r.reward;
            if let Some(o) = r.outcome {
                break o;
            }
        };
        let rw = &cfg.rewards;
        let wrong = out.guesses - out.correct_guesses;
        let mut want = (out.num_steps - out.guesses) as f64 * rw.step_reward
            + out.correct_guesses as f64 * rw.correct_guess_reward
            + wrong as f64 * rw.wrong_guess_reward
            + out.autocorr_penalty;
        match out.terminal_reason {
            TerminalReason::LengthViolation => want += rw.length_violation_reward,
            TerminalReason::Detected => want += rw.detection_reward,
            _ => {}
        }
        prop_assert!((out.total_reward - sum).abs() < 1e-6, "{} vs step sum {}", out.total_reward, sum);
        prop_assert!((out.total_reward - want).abs() < 1e-6, "{} vs decomposition {}", out.total_reward, want);
        Ok(())
    })
}

/// Plays one round of random attacker actions and returns the action and
/// latency pattern, triggering the victim first when `trigger` is set.
fn probe(env: &mut CacheGuessingEnv, rng: &mut ChaCha8Rng, trigger: bool) -> Vec<(usize, ObsLatency)> {
    env.reset();
    let space = env.action_space().clone();
    let plain: Vec<usize> = (0..space.trigger_index()).collect();
    let mut seen = Vec::new();
    let n = rng.gen_range(1..=3);
    for i in 0..n {
        let a = if trigger && i == 1 { space.trigger_index() } else { plain[rng.gen_range(0..plain.len())] };
        let r = env.step(a).expect("in range");
        seen.push((a, r.latency));
    }
    seen
}

/// How far the hit rate of a majority-vote decoder strays from chance,
/// in standard deviations. The decoder maps each observed pattern to the
/// secret seen most often with it over `n` training episodes, then guesses
/// on `n` fresh episodes.
pub fn decoder_deviation(cfg: &EnvConfig, n: usize, trigger: bool, seed: u64) -> f64 {
    let mut env = CacheGuessingEnv::new(EnvConfig { rng_seed: seed, ..cfg.clone() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = env.secrets().len();
    let mut votes: HashMap<Vec<(usize, ObsLatency)>, Vec<usize>> = HashMap::new();
    for _ in 0..n {
        let pat = probe(&mut env, &mut rng, trigger);
        let s = env.secrets().iter().position(|&s| s == env.secret()).unwrap();
        votes.entry(pat).or_insert_with(|| vec![0; k])[s] += 1;
    }
    let mut hits = 0usize;
    for _ in 0..n {
        let pat = probe(&mut env, &mut rng, trigger);
        let guess = votes.get(&pat).map_or(0, |v| (0..k).max_by_key(|&i| (v[i], std::cmp::Reverse(i))).unwrap());
        hits += usize::from(env.secrets()[guess] == env.secret());
    }
    let p = 1.0 / k as f64;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - n as f64 * p) / sd
}

/// Before the victim runs, nothing the attacker observes depends on the
/// secret: a decoder over 10^4 episodes stays within 3 sigma of chance. On
/// the one-line toy cache the same decoder is far above chance once the
/// victim is triggered, so the test has power.
pub fn no_channel_before_trigger() -> Result<(), String> {
    const N: usize = 10_000;
    for (name, cfg, control) in [
        ("config 1", presets::table3_config(1).unwrap(), false),
        ("config 6", presets::table3_config(6).unwrap(), false),
        ("random", presets::random_config(), false),
        ("toy", presets::toy_config(), true),
    ] {
        let z = decoder_deviation(&cfg, N, false, 11);
        if z.abs() > 3.0 {
            return Err(format!("{name}: pre-trigger decoder {z:.2} sigma from chance"));
        }
        let zt = decoder_deviation(&cfg, N, true, 11);
        if control && zt < 10.0 {
            return Err(format!("{name}: post-trigger decoder only {zt:.2} sigma above chance"));
        }
    }
    Ok(())
}

/// Tabular values stay within the discounted bounds of the reward range.
pub fn q_table_bounds(cases: u32) -> Result<(), String> {
    let cfg = prop_oneof![Just(presets::toy_config()), Just(presets::table3_config(1).unwrap())];
    run(cases, (cfg, 0.01..1.0f64, 0.5..0.99f64, 0.0..1.0f64, any::<u64>()), |(cfg, lr, gamma, lam, seed)| {
        let hp = Hyperparams {
            lr,
            gamma,
            q_lambda: lam,
            max_steps: 5_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            tabular_backoff: Some(2),
            seed,
            ..Hyperparams::default()
        };
        let mut env = CacheGuessingEnv::new(cfg.clone()).unwrap();
        let (Policy::Tabular(q), _) = train_tabular(&mut env, &hp, None).unwrap() else {
            unreachable!("tabular trainer returns a table")
        };
        let r = &cfg.rewards;
        let worst = r.step_reward + r.wrong_guess_reward.min(r.length_violation_reward).min(r.detection_reward);
        let (lo, hi) = (worst.min(0.0) / (1.0 - gamma), r.correct_guess_reward.max(0.0) / (1.0 - gamma));
        for v in q.table.values().chain(q.fallback.values()).flatten() {
            prop_assert!(*v >= lo - 1e-6 && *v <= hi + 1e-6, "{} outside [{}, {}]", v, lo, hi);
        }
        Ok(())
    })
}

/// Every property with its case count, in report order.
#[allow(dead_code)]
pub fn all() -> Vec<(&'static str, Box<dyn Fn() -> Result<(), String>>)> {
    vec![
        ("cache determinism", Box::new(|| cache_determinism(256))),
        ("LRU age permutation", Box::new(|| lru_age_permutation(256))),
        ("PL lock persistence", Box::new(|| pl_lock_persistence(256))),
        ("remap bijectivity", Box::new(|| remap_bijectivity(256))),
        ("autocorrelation bounds", Box::new(|| autocorrelation_bounds(512))),
        ("reward decomposition", Box::new(|| reward_decomposition(512))),
        ("no channel before trigger", Box::new(no_channel_before_trigger)),
        ("Q-table bounds", Box::new(|| q_table_bounds(16))),
    ]
}
