//! Rule-based attack categories.
//!
//! For every pair of secrets the first access whose latency differs is the
//! decisive observation. Replaying both secrets with the cache event log
//! shows why it differs:
//!
//! - the hit side holds a line the victim loaded during the episode: the
//!   line was last removed by a flush (flush+reload), or by an eviction or
//!   never cached (evict+reload);
//! - otherwise the hit side kept the attacker's line and the miss side lost
//!   it to a victim fill (prime+probe) or to an attacker fill or a
//!   suppressed fill, meaning the victim only changed replacement state
//!   (LRU state).
//!
//! One rule across all pairs gives that category, several give `Mixed`,
//! none gives `Unknown`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::cache::{CacheEvent, Domain};
use crate::env::{Action, CacheGuessingEnv, EnvConfig, ObsLatency};
use crate::error::Result;

use super::{AttackTree, TracePath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    PrimeProbe,
    FlushReload,
    EvictReload,
    LruState,
    Mixed,
    Unknown,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::PrimeProbe => "PRIME_PROBE",
            Category::FlushReload => "FLUSH_RELOAD",
            Category::EvictReload => "EVICT_RELOAD",
            Category::LruState => "LRU_STATE",
            Category::Mixed => "MIXED",
            Category::Unknown => "UNKNOWN",
        })
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "PRIME_PROBE" => Category::PrimeProbe,
            "FLUSH_RELOAD" => Category::FlushReload,
            "EVICT_RELOAD" => Category::EvictReload,
            "LRU_STATE" => Category::LruState,
            "MIXED" => Category::Mixed,
            "UNKNOWN" => Category::Unknown,
            _ => return Err(format!("unknown category `{s}`")),
        })
    }
}

/// One secret's replay: latency per step and the event-log length before
/// each step.
struct Replay {
    steps: Vec<(Action, ObsLatency)>,
    marks: Vec<usize>,
    events: Vec<CacheEvent>,
}

fn replay(env: &mut CacheGuessingEnv, path: &TracePath, secret: crate::env::Secret) -> Result<Replay> {
    env.reset_with_secret(secret);
    let mut r = Replay { steps: Vec::new(), marks: Vec::new(), events: Vec::new() };
    for s in path.steps() {
        if s.action.is_guess() {
            break;
        }
        r.marks.push(env.cache().events().len());
        let res = env.step_action(s.action)?;
        r.steps.push((s.action, res.latency));
    }
    r.events = env.cache().events().to_vec();
    Ok(r)
}

/// Why the hit side holds `x`, if the victim reloaded it.
fn reload_kind(events: &[CacheEvent], x: u64) -> Option<Category> {
    let i = events.iter().rposition(|e| matches!(e, CacheEvent::Fill { addr, .. } if *addr == x))?;
    let CacheEvent::Fill { domain: Domain::Victim, .. } = events[i] else {
        return None;
    };
    for e in events[..i].iter().rev() {
        match e {
            CacheEvent::Flush { addr, .. } if *addr == x => return Some(Category::FlushReload),
            CacheEvent::Fill { evicted: Some((t, _)), .. } if *t == x => return Some(Category::EvictReload),
            _ => {}
        }
    }
    Some(Category::EvictReload)
}

/// Why the miss side lost the attacker's `x`.
fn loss_kind(events: &[CacheEvent], x: u64) -> Option<Category> {
    for e in events.iter().rev() {
        match e {
            CacheEvent::Fill { evicted: Some((t, _)), domain, .. } if *t == x => {
                return Some(match domain {
                    Domain::Victim => Category::PrimeProbe,
                    Domain::Attacker => Category::LruState,
                });
            }
            CacheEvent::Flush { addr, .. } if *addr == x => return None,
            CacheEvent::Fill { addr, .. } if *addr == x => return None,
            CacheEvent::Remap => return None,
            _ => {}
        }
    }
    // an earlier attacker access that never filled: the lock blocked it
    events
        .iter()
        .any(|e| matches!(e, CacheEvent::Access { addr, domain: Domain::Attacker, hit: false } if *addr == x))
        .then_some(Category::LruState)
}

fn pair_rule(a: &Replay, b: &Replay) -> Option<Category> {
    let k = a.steps.iter().zip(&b.steps).position(|(x, y)| x.1 != y.1)?;
    let Action::Access(x) = a.steps[k].0 else {
        return None;
    };
    let (hit, miss) = if a.steps[k].1 == ObsLatency::Hit { (a, b) } else { (b, a) };
    reload_kind(&hit.events[..hit.marks[k]], x).or_else(|| loss_kind(&miss.events[..miss.marks[k]], x))
}

/// Classifies the first round of a tree.
pub fn classify(tree: &AttackTree, config: &EnvConfig) -> Result<Category> {
    let mut cfg = config.clone();
    cfg.multi_round_budget = None;
    cfg.detection_enable = false;
    cfg.window_size = cfg.window_size.max(
        tree.rounds.iter().flatten().map(|p| p.steps().len()).max().unwrap_or(0) + 1,
    );
    let mut env = CacheGuessingEnv::new(cfg)?;
    let mut replays = Vec::new();
    if let Some(round) = tree.rounds.first() {
        for p in round {
            for &s in &p.secrets {
                replays.push(replay(&mut env, p, s)?);
            }
        }
    }
    let mut rules = BTreeSet::new();
    for i in 0..replays.len() {
        for j in i + 1..replays.len() {
            if let Some(c) = pair_rule(&replays[i], &replays[j]) {
                rules.insert(c);
            }
        }
    }
    Ok(match rules.len() {
        0 => Category::Unknown,
        1 => *rules.iter().next().expect("one rule"),
        _ => Category::Mixed,
    })
}
