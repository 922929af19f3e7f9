//! Cyclic cross-domain interference counts.
//!
//! A cache line slot that goes owner `a`, then `b`, then `a` again (with
//! `a != b`) through two consecutive fills inside one interval scores one
//! cycle for that (slot, interval). Intervals are measured in demand
//! accesses from the start of the log.

use std::fmt::Write;

use crate::cache::{CacheEvent, Domain};

use super::LinearModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycloneParams {
    pub interval_len: usize,
    pub num_intervals: usize,
}

impl Default for CycloneParams {
    fn default() -> Self {
        Self { interval_len: 50, num_intervals: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclicFeatures {
    pub num_lines: usize,
    pub params: CycloneParams,
    /// `counts[line * num_intervals + interval]`.
    pub counts: Vec<u32>,
}

impl CyclicFeatures {
    pub fn get(&self, line: usize, interval: usize) -> u32 {
        self.counts[line * self.params.num_intervals + interval]
    }

    pub fn as_vector(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Copy)]
struct LastFill {
    domain: Domain,
    evicted: Option<Domain>,
    interval: usize,
}

/// Counts cycles per slot and interval. Fills past the last interval are
/// ignored; flushes and remaps break any cycle in progress.
pub fn cyclone_features(events: &[CacheEvent], num_lines: usize, params: CycloneParams) -> CyclicFeatures {
    let ni = params.num_intervals;
    let mut counts = vec![0u32; num_lines * ni];
    let mut last: Vec<Option<LastFill>> = vec![None; num_lines];
    let mut accesses = 0usize;

    for e in events {
        let interval = accesses / params.interval_len.max(1);
        match *e {
            CacheEvent::Access { .. } => accesses += 1,
            CacheEvent::Fill { slot, domain, evicted, .. } => {
                if slot >= num_lines {
                    continue;
                }
                let evicted = evicted.map(|e| e.1);
                if let Some(prev) = last[slot] {
                    let cycle = prev.interval == interval
                        && prev.domain != domain
                        && prev.evicted == Some(domain)
                        && evicted == Some(prev.domain);
                    if cycle && interval < ni {
                        counts[slot * ni + interval] += 1;
                    }
                }
                last[slot] = Some(LastFill { domain, evicted, interval });
            }
            CacheEvent::Flush { slot: Some(s), .. } => {
                if s < num_lines {
                    last[s] = None;
                }
            }
            CacheEvent::Flush { slot: None, .. } => {}
            CacheEvent::Remap => last.iter_mut().for_each(|l| *l = None),
        }
    }
    CyclicFeatures { num_lines, params, counts }
}

/// `line_id,interval,count` rows with a header line.
pub fn features_csv(f: &CyclicFeatures) -> String {
    let mut s = String::from("line_id,interval,count\n");
    for line in 0..f.num_lines {
        for iv in 0..f.params.num_intervals {
            let _ = writeln!(s, "{line},{iv},{}", f.get(line, iv));
        }
    }
    s
}

/// End-of-episode classifier penalty used during training.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclonePenalty {
    pub model: LinearModel,
    pub params: CycloneParams,
    /// Reward added when the classifier fires (≤ 0).
    pub penalty: f64,
}

impl CyclonePenalty {
    pub fn detects(&self, events: &[CacheEvent], num_lines: usize) -> bool {
        let f = cyclone_features(events, num_lines, self.params);
        self.model.classify(&f.as_vector())
    }
}
