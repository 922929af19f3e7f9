//! Attack detectors and the reward terms derived from them.
//!
//! * autocorrelation of the cross-domain conflict event train, with the
//!   threshold test and the L2 penalty built on it;
//! * cyclic interference counts per cache line and interval, fed to a
//!   linear hinge-loss classifier;
//! * a victim-miss monitor.

mod benign;
mod cyclone;
mod linear;

pub use benign::{benign_corpus, benign_events, Workload};
pub use cyclone::{cyclone_features, features_csv, CycloneParams, CyclonePenalty, CyclicFeatures};
pub use linear::{cross_validate, train_classifier, LinearModel, TrainParams, TrainedClassifier};

use crate::cache::{CacheEvent, ConflictEvent, TraceLine, VictimLatency};

/// Default maximum lag.
pub const DEFAULT_MAX_LAG: usize = 20;
/// Default detection threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.75;

/// Builds the event train from a cache event log: 0 for victim-evicts-
/// attacker, 1 for attacker-evicts-victim. Same-domain evictions are skipped.
pub fn event_train(events: &[CacheEvent]) -> Vec<u8> {
    use crate::cache::Domain::*;
    events
        .iter()
        .filter_map(|e| match e {
            CacheEvent::Fill { domain: Victim, evicted: Some((_, Attacker)), .. } => Some(ConflictEvent::VEvictsA.bit()),
            CacheEvent::Fill { domain: Attacker, evicted: Some((_, Victim)), .. } => Some(ConflictEvent::AEvictsV.bit()),
            _ => None,
        })
        .collect()
}

/// Lag-`p` autocorrelation.
///
/// The numerator sums the `n - p` overlapping products; the denominator is
/// the variance sum over all `n` samples. Constant trains and lags at or
/// beyond the train length give 0.
pub fn autocorrelation(train: &[u8], p: usize) -> f64 {
    let n = train.len();
    if n == 0 || p >= n {
        return 0.0;
    }
    let mean = train.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
    let den: f64 = train.iter().map(|&x| (x as f64 - mean).powi(2)).sum();
    if den <= 1e-12 {
        return 0.0;
    }
    let num: f64 = (0..n - p)
        .map(|i| (train[i] as f64 - mean) * (train[i + p] as f64 - mean))
        .sum();
    num / den
}

/// Largest autocorrelation over lags `1..=max_lag`, or 0 when none exist.
pub fn max_autocorrelation(train: &[u8], max_lag: usize) -> f64 {
    (1..=max_lag)
        .take_while(|&p| p < train.len())
        .map(|p| autocorrelation(train, p))
        .fold(0.0, f64::max)
}

/// True when some lag in `1..=max_lag` exceeds `threshold`. Lags the train
/// is too short for are skipped.
pub fn cc_hunter_detect(train: &[u8], max_lag: usize, threshold: f64) -> bool {
    (1..=max_lag)
        .take_while(|&p| p < train.len())
        .any(|p| autocorrelation(train, p) > threshold)
}

/// `a / P * sum_{p=1..P} C_p^2`.
pub fn autocorr_penalty(train: &[u8], a: f64, max_lag: usize) -> f64 {
    if a == 0.0 || train.is_empty() || max_lag == 0 {
        return 0.0;
    }
    let s: f64 = (1..=max_lag).map(|p| autocorrelation(train, p).powi(2)).sum();
    a * s / max_lag as f64
}

/// Fires on victim misses once `threshold` of them have been seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VictimMissMonitor {
    pub threshold: usize,
}

impl Default for VictimMissMonitor {
    fn default() -> Self {
        Self { threshold: 1 }
    }
}

impl VictimMissMonitor {
    /// One verdict per victim access in `trace`.
    pub fn scan(&self, trace: &[TraceLine]) -> Vec<bool> {
        let mut misses = 0;
        trace
            .iter()
            .filter_map(|l| match l {
                TraceLine::Victim(VictimLatency::Miss) => {
                    misses += 1;
                    Some(misses >= self.threshold)
                }
                TraceLine::Victim(VictimLatency::Hit) => Some(misses >= self.threshold),
                _ => None,
            })
            .collect()
    }

    pub fn fires(&self, trace: &[TraceLine]) -> bool {
        self.scan(trace).into_iter().any(|f| f)
    }
}
