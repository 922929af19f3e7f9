//! Synthetic benign two-process workloads for classifier training.
//!
//! One process streams through its own lines (uniformly, with a stride, or
//! with zipfian reuse) while a second process touches its lines now and
//! then. The resulting cross-domain interference is incidental and sparse.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::{CacheEvent, CacheState, Domain};
use crate::env::EnvConfig;
use crate::error::Result;

use super::{cyclone_features, CycloneParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Workload {
    Uniform,
    Strided { stride: u64 },
    Zipf { exponent: f64 },
}

/// Runs `accesses` demand accesses on a fresh cache built from `cfg` and
/// returns the event log. The foreground process uses the attacker range,
/// the background process the victim range with probability
/// `victim_fraction` per access.
pub fn benign_events(
    cfg: &EnvConfig,
    workload: Workload,
    accesses: usize,
    victim_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CacheEvent>> {
    let mut cache = CacheState::new(cfg.cache.clone(), cfg.universe())?;
    let (fs, fe) = (cfg.attacker_addr_s, cfg.attacker_addr_e);
    let (vs, ve) = (cfg.victim_addr_s, cfg.victim_addr_e);
    let n = fe - fs + 1;
    let zipf = match workload {
        Workload::Zipf { exponent } => {
            Some(WeightedIndex::new((1..=n).map(|k| 1.0 / (k as f64).powf(exponent))).expect("positive weights"))
        }
        _ => None,
    };
    let mut pos = 0u64;
    for _ in 0..accesses {
        if rng.gen_bool(victim_fraction) {
            cache.access(rng.gen_range(vs..=ve), Domain::Victim)?;
            continue;
        }
        let off = match workload {
            Workload::Uniform => rng.gen_range(0..n),
            Workload::Strided { stride } => {
                pos = (pos + stride) % n;
                pos
            }
            Workload::Zipf { .. } => zipf.as_ref().expect("built above").sample(rng) as u64,
        };
        cache.access(fs + off, Domain::Attacker)?;
    }
    Ok(cache.take_events())
}

/// Feature vectors for `samples` benign runs, cycling through uniform,
/// strided and zipfian foreground patterns with a background fraction
/// drawn from `[0.02, 0.1]`.
pub fn benign_corpus(cfg: &EnvConfig, params: CycloneParams, samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accesses = params.interval_len * params.num_intervals;
    (0..samples)
        .map(|i| {
            let w = match i % 3 {
                0 => Workload::Uniform,
                1 => Workload::Strided { stride: rng.gen_range(1..=3) },
                _ => Workload::Zipf { exponent: rng.gen_range(0.8..1.5) },
            };
            let frac = rng.gen_range(0.02..0.1);
            let ev = benign_events(cfg, w, accesses, frac, &mut rng)?;
            Ok(cyclone_features(&ev, cfg.num_blocks(), params).as_vector())
        })
        .collect()
}
