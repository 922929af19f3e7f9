//! One-hot observation encoding and canonical window keys.
//!
//! Each record occupies `3 + (A + 1) + (W + 1) + 2` slots: latency, action
//! (with a trailing padding slot), step number and the triggered flag. A
//! padding record sets only its action padding slot.

use std::fmt::Write;

use super::{ObsLatency, StepRecord};

pub fn record_len(num_actions: usize, window: usize) -> usize {
    3 + num_actions + 1 + window + 1 + 2
}

pub fn feature_len(num_actions: usize, window: usize) -> usize {
    record_len(num_actions, window) * window
}

/// Indices of the ones in the encoded window, ascending.
pub fn active_features<'a, I>(records: I, num_actions: usize, window: usize) -> Vec<usize>
where
    I: IntoIterator<Item = &'a Option<StepRecord>>,
{
    let rl = record_len(num_actions, window);
    let mut out = Vec::with_capacity(4 * window);
    for (i, r) in records.into_iter().enumerate() {
        let base = i * rl;
        let act = base + 3;
        match r {
            None => out.push(act + num_actions),
            Some(r) => {
                let lat = match r.latency {
                    ObsLatency::Hit => 0,
                    ObsLatency::Miss => 1,
                    ObsLatency::Na => 2,
                };
                let step = act + num_actions + 1;
                let trig = step + window + 1;
                out.push(base + lat);
                out.push(act + r.action_index);
                out.push(step + r.step_number.min(window));
                out.push(trig + usize::from(r.victim_triggered));
            }
        }
    }
    out
}

/// Dense one-hot encoding of a window.
pub fn encode<'a, I>(records: I, num_actions: usize, window: usize) -> Vec<f32>
where
    I: IntoIterator<Item = &'a Option<StepRecord>>,
{
    let mut v = vec![0.0; feature_len(num_actions, window)];
    for i in active_features(records, num_actions, window) {
        v[i] = 1.0;
    }
    v
}

/// Canonical text form of a window, used as a table key.
///
/// Padding is `_`; a record is `<h|m|n><action>.<step><t|f>`.
pub fn window_key<'a, I>(records: I) -> String
where
    I: IntoIterator<Item = &'a Option<StepRecord>>,
{
    let mut s = String::new();
    for r in records {
        match r {
            None => s.push('_'),
            Some(r) => {
                let l = match r.latency {
                    ObsLatency::Hit => 'h',
                    ObsLatency::Miss => 'm',
                    ObsLatency::Na => 'n',
                };
                let _ = write!(s, "{l}{}.{}{}", r.action_index, r.step_number, if r.victim_triggered { 't' } else { 'f' });
            }
        }
        s.push('|');
    }
    s
}
