//! Hand-written reference attacks.

use crate::cache::{CacheConfig, ReplacementAlg};
use crate::env::{Action, EnvConfig};
use crate::error::{Error, Result};

use super::AttackTree;

/// Checks the prime+probe preconditions and returns the attacker lines in
/// ascending order.
fn prime_lines(config: &EnvConfig) -> Result<Vec<u64>> {
    let (a, v) = ((config.attacker_addr_s, config.attacker_addr_e), (config.victim_addr_s, config.victim_addr_e));
    if a.0 <= v.1 && v.0 <= a.1 {
        return Err(Error::InvalidEnvConfig("prime+probe needs disjoint attacker and victim ranges".into()));
    }
    let sets = config.cache.num_sets as u64;
    let mut per_set = vec![0usize; sets as usize];
    for addr in a.0..=a.1 {
        per_set[(addr % sets) as usize] += 1;
    }
    if per_set.iter().any(|&n| n < config.cache.num_ways) {
        return Err(Error::InvalidEnvConfig(format!(
            "attacker range {}..={} cannot fill every way of every set",
            a.0, a.1
        )));
    }
    Ok((a.0..=a.1).collect())
}

/// Prime every attacker line, trigger the victim, probe every line and
/// guess the victim address whose set missed (no access if none did).
pub fn textbook_prime_probe(config: &EnvConfig) -> Result<AttackTree> {
    let lines = prime_lines(config)?;
    let mut seq: Vec<Action> = lines.iter().map(|&a| Action::Access(a)).collect();
    seq.push(Action::TriggerVictim);
    seq.extend(lines.iter().map(|&a| Action::Access(a)));
    AttackTree::from_sequence(config, &seq)
}

/// Multi-round prime+probe: the first round primes, every round triggers
/// and probes, and the probe misses refill the set for the next round.
pub fn textbook_prime_probe_rounds(config: &EnvConfig) -> Result<AttackTree> {
    let lines = prime_lines(config)?;
    let mut later = vec![Action::TriggerVictim];
    later.extend(lines.iter().map(|&a| Action::Access(a)));
    let mut first: Vec<Action> = lines.iter().map(|&a| Action::Access(a)).collect();
    first.extend(later.iter().copied());
    AttackTree::from_rounds(config, &[first, later])
}

/// Two-bit LRU-state attack that never makes the victim miss.
///
/// One fully associative set of `ways` lines holds the four shared lines
/// `0..=3`, oldest first, followed by fillers `4..ways`. Each round
/// triggers the victim, which refreshes its line, inserts the extra line
/// `ways`, refreshes the fillers, reloads `0..=3` and refreshes the fillers
/// again. The first of `0..=3` that hits is the secret (all miss for `3`),
/// and the chain of misses ends with the set back in its starting order.
///
/// Returns the config (with `budget` steps of multi-round play if given)
/// and the one-round tree that repeats every round.
pub fn stealthy_streamline(ways: usize, budget: Option<usize>) -> Result<(EnvConfig, AttackTree)> {
    if ![4, 8, 12].contains(&ways) {
        return Err(Error::InvalidEnvConfig(format!("stealthy streamline supports 4, 8 or 12 ways, not {ways}")));
    }
    let w = ways as u64;
    let cache = CacheConfig::new(1, ways, ReplacementAlg::Lru);
    let mut cfg = EnvConfig::new(cache, (0, w), (0, 3));
    cfg.detection_enable = true;
    cfg.warmup = (0..w).collect();
    cfg.multi_round_budget = budget;

    let fillers: Vec<Action> = (4..w).map(Action::Access).collect();
    let mut round = vec![Action::TriggerVictim, Action::Access(w)];
    round.extend(fillers.iter().copied());
    round.extend((0..4).map(Action::Access));
    round.extend(fillers.iter().copied());
    let tree = AttackTree::from_rounds(&cfg, &[round])?;
    Ok((cfg, tree))
}
