//! Flat `key: value` experiment files.
//!
//! ```text
//! # 4-way LRU case study
//! num_blocks: 4
//! num_ways: 4
//! rep_alg: lru
//! attacker_addr_s: 0
//! attacker_addr_e: 4
//! victim_addr_s: 0
//! victim_addr_e: 0
//! victim_no_access_enable: true
//! warmup: 0,1
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys are an error.

use crate::cache::{CacheConfig, PrefetcherKind, ReplacementAlg};
use crate::error::{Error, Result};

use super::EnvConfig;

const KEYS: &[&str] = &[
    "num_blocks",
    "num_ways",
    "rep_alg",
    "attacker_addr_s",
    "attacker_addr_e",
    "victim_addr_s",
    "victim_addr_e",
    "flush_enable",
    "victim_no_access_enable",
    "detection_enable",
    "window_size",
    "correct_guess_reward",
    "wrong_guess_reward",
    "step_reward",
    "length_violation_reward",
    "detection_reward",
    "autocorr_penalty_scale",
    "autocorr_max_lag",
    "warmup",
    "lock",
    "pl_cache",
    "prefetcher",
    "remap_interval",
    "multi_round_budget",
    "seed",
    "cache_seed",
];

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::ConfigParse { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| err(line, format!("`{key}` expects a number, got `{v}`")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(err(line, format!("`{key}` expects true/false, got `{v}`"))),
    }
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<u64>> {
    let v = v.trim_start_matches('[').trim_end_matches(']');
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(line, key, s))
        .collect()
}

pub fn parse_config(text: &str) -> Result<EnvConfig> {
    let mut num_blocks: Option<usize> = None;
    let mut window: Option<usize> = None;
    let mut cfg = EnvConfig::new(CacheConfig::new(1, 1, ReplacementAlg::Lru), (0, 0), (0, 0));
    let mut seen = std::collections::HashSet::new();

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once(':')
            .ok_or_else(|| err(ln, format!("expected `key: value`, got `{line}`")))?;
        let (key, v) = (key.trim(), val.trim());
        if !KEYS.contains(&key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        if !seen.insert(key.to_string()) {
            return Err(err(ln, format!("duplicate key `{key}`")));
        }
        let r = &mut cfg.rewards;
        match key {
            "num_blocks" => num_blocks = Some(num(ln, key, v)?),
            "num_ways" => cfg.cache.num_ways = num(ln, key, v)?,
            "rep_alg" => {
                cfg.cache.rep_alg = match v.to_ascii_lowercase().as_str() {
                    "lru" => ReplacementAlg::Lru,
                    "plru" | "tree_plru" => ReplacementAlg::Plru,
                    "rrip" | "srrip" => ReplacementAlg::Rrip,
                    "random" => ReplacementAlg::Random,
                    _ => return Err(err(ln, format!("unknown rep_alg `{v}`"))),
                }
            }
            "attacker_addr_s" => cfg.attacker_addr_s = num(ln, key, v)?,
            "attacker_addr_e" => cfg.attacker_addr_e = num(ln, key, v)?,
            "victim_addr_s" => cfg.victim_addr_s = num(ln, key, v)?,
            "victim_addr_e" => cfg.victim_addr_e = num(ln, key, v)?,
            "flush_enable" => cfg.flush_enable = boolean(ln, key, v)?,
            "victim_no_access_enable" => cfg.victim_no_access_enable = boolean(ln, key, v)?,
            "detection_enable" => cfg.detection_enable = boolean(ln, key, v)?,
            "window_size" => window = Some(num(ln, key, v)?),
            "correct_guess_reward" => r.correct_guess_reward = num(ln, key, v)?,
            "wrong_guess_reward" => r.wrong_guess_reward = num(ln, key, v)?,
            "step_reward" => r.step_reward = num(ln, key, v)?,
            "length_violation_reward" => r.length_violation_reward = num(ln, key, v)?,
            "detection_reward" => r.detection_reward = num(ln, key, v)?,
            "autocorr_penalty_scale" => r.autocorr_penalty_scale = num(ln, key, v)?,
            "autocorr_max_lag" => r.autocorr_max_lag = num(ln, key, v)?,
            "warmup" => cfg.warmup = list(ln, key, v)?,
            "lock" => cfg.lock = list(ln, key, v)?,
            "pl_cache" => cfg.cache.pl_cache = boolean(ln, key, v)?,
            "prefetcher" => {
                cfg.cache.prefetcher = match v.to_ascii_lowercase().as_str() {
                    "none" => PrefetcherKind::None,
                    "nextline" | "next_line" => PrefetcherKind::NextLine,
                    "stream" => PrefetcherKind::Stream,
                    _ => return Err(err(ln, format!("unknown prefetcher `{v}`"))),
                }
            }
            "remap_interval" => cfg.cache.remap_interval = Some(num(ln, key, v)?),
            "multi_round_budget" => cfg.multi_round_budget = Some(num(ln, key, v)?),
            "seed" => cfg.rng_seed = num(ln, key, v)?,
            "cache_seed" => cfg.cache.rng_seed = num(ln, key, v)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }

    let blocks = num_blocks.ok_or_else(|| Error::InvalidEnvConfig("missing num_blocks".into()))?;
    if !seen.contains("num_ways") {
        return Err(Error::InvalidEnvConfig("missing num_ways".into()));
    }
    let ways = cfg.cache.num_ways;
    if ways == 0 || blocks % ways != 0 {
        return Err(Error::InvalidEnvConfig(format!(
            "num_blocks {blocks} is not a multiple of num_ways {ways}"
        )));
    }
    cfg.cache.num_sets = blocks / ways;
    cfg.window_size = window.unwrap_or(4 * blocks);
    cfg.validate()?;
    Ok(cfg)
}

/// Renders a config in the file format. `parse_config` inverts it, except
/// for the classifier penalty which has no text form.
pub fn render_config(cfg: &EnvConfig) -> String {
    let r = &cfg.rewards;
    let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(": ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("num_blocks", cfg.num_blocks().to_string());
    kv("num_ways", cfg.cache.num_ways.to_string());
    kv(
        "rep_alg",
        match cfg.cache.rep_alg {
            ReplacementAlg::Lru => "lru",
            ReplacementAlg::Plru => "plru",
            ReplacementAlg::Rrip => "rrip",
            ReplacementAlg::Random => "random",
        }
        .into(),
    );
    kv("attacker_addr_s", cfg.attacker_addr_s.to_string());
    kv("attacker_addr_e", cfg.attacker_addr_e.to_string());
    kv("victim_addr_s", cfg.victim_addr_s.to_string());
    kv("victim_addr_e", cfg.victim_addr_e.to_string());
    kv("flush_enable", cfg.flush_enable.to_string());
    kv("victim_no_access_enable", cfg.victim_no_access_enable.to_string());
    kv("detection_enable", cfg.detection_enable.to_string());
    kv("window_size", cfg.window_size.to_string());
    kv("correct_guess_reward", format!("{:?}", r.correct_guess_reward));
    kv("wrong_guess_reward", format!("{:?}", r.wrong_guess_reward));
    kv("step_reward", format!("{:?}", r.step_reward));
    kv("length_violation_reward", format!("{:?}", r.length_violation_reward));
    kv("detection_reward", format!("{:?}", r.detection_reward));
    kv("autocorr_penalty_scale", format!("{:?}", r.autocorr_penalty_scale));
    kv("autocorr_max_lag", r.autocorr_max_lag.to_string());
    kv("warmup", join(&cfg.warmup));
    kv("lock", join(&cfg.lock));
    kv("pl_cache", cfg.cache.pl_cache.to_string());
    kv(
        "prefetcher",
        match cfg.cache.prefetcher {
            PrefetcherKind::None => "none",
            PrefetcherKind::NextLine => "nextline",
            PrefetcherKind::Stream => "stream",
        }
        .into(),
    );
    if let Some(iv) = cfg.cache.remap_interval {
        kv("remap_interval", iv.to_string());
    }
    if let Some(b) = cfg.multi_round_budget {
        kv("multi_round_budget", b.to_string());
    }
    kv("seed", cfg.rng_seed.to_string());
    kv("cache_seed", cfg.cache.rng_seed.to_string());
    s
}
