//! Next-line and stream prefetch target selection.

use super::PrefetcherKind;

/// Tracks the last demand address and stride for the stream prefetcher.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamTracker {
    last: Option<u64>,
    stride: Option<i64>,
}

impl StreamTracker {
    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// Records a demand access and returns the next address when two
    /// consecutive strides agree and are unit-sized.
    fn observe(&mut self, addr: u64) -> Option<i64> {
        let stride = self.last.map(|l| addr as i64 - l as i64);
        let fire = match (self.stride, stride) {
            (Some(prev), Some(cur)) if prev == cur && cur.abs() == 1 => Some(addr as i64 + cur),
            _ => None,
        };
        self.last = Some(addr);
        self.stride = stride;
        fire
    }
}

/// Returns the address to prefetch after a demand access to `addr`, if any.
///
/// Targets below zero or at or above `universe` are dropped.
pub(crate) fn target(kind: PrefetcherKind, tracker: &mut StreamTracker, addr: u64, universe: u64) -> Option<u64> {
    let t = match kind {
        PrefetcherKind::None => None,
        PrefetcherKind::NextLine => Some(addr as i64 + 1),
        PrefetcherKind::Stream => tracker.observe(addr),
    }?;
    (t >= 0 && (t as u64) < universe).then_some(t as u64)
}
