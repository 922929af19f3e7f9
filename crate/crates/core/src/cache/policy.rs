//! Replacement metadata updates and victim selection.
//!
//! Every function here works on the lines of a single set plus that set's
//! PLRU bit tree. Invalid ways are always filled before any replacement
//! decision is made, so `select_victim` only runs on full sets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{CacheLine, ReplacementAlg};

pub(crate) const RRPV_MAX: u8 = 3;
pub(crate) const RRPV_INSERT: u8 = 2;

/// Updates replacement state after a hit on `way`.
pub(crate) fn on_hit(alg: ReplacementAlg, lines: &mut [CacheLine], bits: &mut [bool], way: usize) {
    match alg {
        ReplacementAlg::Lru => {
            let old = lines[way].age;
            for (i, l) in lines.iter_mut().enumerate() {
                if i != way && l.valid && l.age < old {
                    l.age += 1;
                }
            }
            lines[way].age = 0;
        }
        ReplacementAlg::Plru => plru_touch(bits, lines.len(), way),
        ReplacementAlg::Rrip => lines[way].rrpv = 0,
        ReplacementAlg::Random => {}
    }
}

/// Updates replacement state after `way` was filled with a new line.
pub(crate) fn on_fill(alg: ReplacementAlg, lines: &mut [CacheLine], bits: &mut [bool], way: usize) {
    match alg {
        ReplacementAlg::Lru => {
            for (i, l) in lines.iter_mut().enumerate() {
                if i != way && l.valid {
                    l.age += 1;
                }
            }
            lines[way].age = 0;
        }
        ReplacementAlg::Plru => plru_touch(bits, lines.len(), way),
        ReplacementAlg::Rrip => lines[way].rrpv = RRPV_INSERT,
        ReplacementAlg::Random => {}
    }
}

/// Picks the way to evict from a full set, or `None` when every candidate
/// is locked.
///
/// LRU takes the largest age, RRIP the first line at the maximum RRPV after
/// aging, PLRU follows the tree bits and RANDOM draws uniformly among
/// unlocked ways. Ties go to the lowest way index.
pub fn select_victim(
    alg: ReplacementAlg,
    lines: &mut [CacheLine],
    bits: &[bool],
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    match alg {
        ReplacementAlg::Lru => {
            let mut best: Option<usize> = None;
            for (i, l) in lines.iter().enumerate() {
                if l.locked {
                    continue;
                }
                if best.map_or(true, |b| l.age > lines[b].age) {
                    best = Some(i);
                }
            }
            best
        }
        ReplacementAlg::Plru => {
            let way = plru_victim(bits, lines.len());
            (!lines[way].locked).then_some(way)
        }
        ReplacementAlg::Rrip => {
            if lines.iter().all(|l| l.locked) {
                return None;
            }
            loop {
                if let Some(i) = lines.iter().position(|l| !l.locked && l.rrpv >= RRPV_MAX) {
                    return Some(i);
                }
                for l in lines.iter_mut().filter(|l| !l.locked) {
                    l.rrpv = (l.rrpv + 1).min(RRPV_MAX);
                }
            }
        }
        ReplacementAlg::Random => {
            let free: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].locked).collect();
            if free.is_empty() {
                None
            } else {
                Some(free[rng.gen_range(0..free.len())])
            }
        }
    }
}

/// Points every node on the root-to-`way` path away from `way`.
///
/// Bit `false` means the LRU side is the left subtree.
fn plru_touch(bits: &mut [bool], ways: usize, way: usize) {
    if ways < 2 {
        return;
    }
    let mut node = 0;
    let mut lo = 0;
    let mut span = ways;
    while span > 1 {
        let half = span / 2;
        let left = way < lo + half;
        bits[node] = left;
        if left {
            node = 2 * node + 1;
        } else {
            lo += half;
            node = 2 * node + 2;
        }
        span = half;
    }
}

fn plru_victim(bits: &[bool], ways: usize) -> usize {
    let mut node = 0;
    let mut lo = 0;
    let mut span = ways;
    while span > 1 {
        let half = span / 2;
        if bits[node] {
            lo += half;
            node = 2 * node + 2;
        } else {
            node = 2 * node + 1;
        }
        span = half;
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn full(ages: &[u32]) -> Vec<CacheLine> {
        ages.iter()
            .enumerate()
            .map(|(i, &a)| CacheLine {
                valid: true,
                tag: i as u64,
                age: a,
                rrpv: RRPV_INSERT,
                ..CacheLine::default()
            })
            .collect()
    }

    #[test]
    fn lru_picks_oldest() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lines = full(&[3, 0, 1, 2]);
        assert_eq!(select_victim(ReplacementAlg::Lru, &mut lines, &[], &mut rng), Some(0));
        lines[0].locked = true;
        assert_eq!(select_victim(ReplacementAlg::Lru, &mut lines, &[], &mut rng), Some(3));
    }

    #[test]
    fn rrip_ages_uniform_inserts_then_takes_way_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lines = full(&[0, 0, 0, 0]);
        assert_eq!(select_victim(ReplacementAlg::Rrip, &mut lines, &[], &mut rng), Some(0));
        assert!(lines.iter().all(|l| l.rrpv == RRPV_MAX));
    }

    #[test]
    fn plru_touch_then_victim_avoids_touched() {
        let mut bits = vec![false; 3];
        for w in 0..4 {
            plru_touch(&mut bits, 4, w);
            assert_ne!(plru_victim(&bits, 4), w);
        }
        // touching 0..3 in order leaves way 0 as the pseudo-LRU way
        assert_eq!(plru_victim(&bits, 4), 0);
    }

    #[test]
    fn all_locked_has_no_victim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for alg in [ReplacementAlg::Lru, ReplacementAlg::Rrip, ReplacementAlg::Random, ReplacementAlg::Plru] {
            let mut lines = full(&[1, 0]);
            lines.iter_mut().for_each(|l| l.locked = true);
            assert_eq!(select_victim(alg, &mut lines, &[false], &mut rng), None);
        }
    }
}
