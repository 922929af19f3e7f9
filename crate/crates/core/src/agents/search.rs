//! Brute-force search over fixed action sequences.
//!
//! A candidate is a sequence of non-guess actions followed by a single
//! guess chosen from the observed latencies. The sequence is an attack when
//! the latency vectors of all secrets are pairwise distinct. Search is
//! depth-first and does not extend a sequence that is already an attack.

use crate::env::{Action, CacheGuessingEnv, EnvConfig, ObsLatency, Secret};
use crate::error::{Error, Result};

/// Largest number of candidate sequences the search will enumerate.
pub const SEARCH_GUARD: f64 = 1e7;

/// Expected number of random sequences per prime+probe hit in an `n`-way
/// set: `2 (n+1)^(2n+1) / (n!)^2`.
pub fn expected_sequences_count(n: u32) -> f64 {
    let n = n as f64;
    let ln_fact: f64 = (1..=n as u64).map(|k| (k as f64).ln()).sum();
    let ln = 2f64.ln() + (2.0 * n + 1.0) * (n + 1.0).ln() - 2.0 * ln_fact;
    ln.exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoundAttack {
    pub actions: Vec<Action>,
    /// Observed latencies and the matching guess, one entry per secret.
    pub table: Vec<(Vec<ObsLatency>, Secret)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub attacks: Vec<FoundAttack>,
    pub enumerated: u64,
}

/// Number of non-guess sequences of length `1..=len` over `n` actions.
fn candidates(n: usize, len: usize) -> f64 {
    (1..=len).map(|l| (n as f64).powi(l as i32)).sum()
}

/// Enumerates every sequence with at most `max_len` actions including the
/// final guess. Refuses when the candidate count exceeds [`SEARCH_GUARD`].
pub fn exhaustive_search(config: &EnvConfig, max_len: usize) -> Result<SearchOutcome> {
    let env = CacheGuessingEnv::new(config.clone())?;
    let space = env.action_space().clone();
    let moves: Vec<usize> = (0..=space.trigger_index()).collect();
    let depth = max_len.saturating_sub(1).min(config.window_size.saturating_sub(1));
    let total = candidates(moves.len(), depth);
    if total > SEARCH_GUARD {
        return Err(Error::SearchRefused {
            sequences: total,
            guard: SEARCH_GUARD,
            ways: config.cache.num_ways,
            expected: expected_sequences_count(config.cache.num_ways as u32),
        });
    }
    let mut out = SearchOutcome { attacks: Vec::new(), enumerated: 0 };
    if depth == 0 {
        return Ok(out);
    }

    let secrets = env.secrets().to_vec();
    let roots: Vec<CacheGuessingEnv> = secrets
        .iter()
        .map(|&s| {
            let mut e = env.clone();
            e.reset_with_secret(s);
            e
        })
        .collect();
    let mut ctx = Dfs {
        space: &space,
        moves: &moves,
        secrets: &secrets,
        depth,
        path: Vec::new(),
        obs: vec![Vec::new(); secrets.len()],
        out: &mut out,
    };
    ctx.visit(&roots, false)?;
    Ok(out)
}

struct Dfs<'a> {
    space: &'a crate::env::ActionSpace,
    moves: &'a [usize],
    secrets: &'a [Secret],
    depth: usize,
    path: Vec<Action>,
    obs: Vec<Vec<ObsLatency>>,
    out: &'a mut SearchOutcome,
}

impl Dfs<'_> {
    fn visit(&mut self, envs: &[CacheGuessingEnv], triggered: bool) -> Result<()> {
        if self.path.len() == self.depth {
            return Ok(());
        }
        'moves: for &m in self.moves {
            let action = self.space.decode(m)?;
            let mut next = Vec::with_capacity(envs.len());
            for (i, e) in envs.iter().enumerate() {
                let mut e = e.clone();
                let r = e.step(m)?;
                if r.done {
                    // length violation or detection: not a usable prefix
                    for o in &mut self.obs[..i] {
                        o.pop();
                    }
                    self.out.enumerated += 1;
                    continue 'moves;
                }
                self.obs[i].push(r.latency);
                next.push(e);
            }
            self.out.enumerated += 1;
            self.path.push(action);
            let trig = triggered || action == Action::TriggerVictim;
            if trig && self.distinct() {
                self.out.attacks.push(FoundAttack {
                    actions: self.path.clone(),
                    table: self.obs.iter().cloned().zip(self.secrets.iter().copied()).collect(),
                });
            } else {
                self.visit(&next, trig)?;
            }
            self.path.pop();
            for o in &mut self.obs {
                o.pop();
            }
        }
        Ok(())
    }

    fn distinct(&self) -> bool {
        let mut v: Vec<&Vec<ObsLatency>> = self.obs.iter().collect();
        v.sort_by_key(|o| o.iter().map(|l| *l as u8).collect::<Vec<_>>());
        v.windows(2).all(|w| w[0] != w[1])
    }
}
