//! Set-associative cache simulator.
//!
//! Addresses are cache-line numbers in `0..universe`. An address maps to
//! set `mapping[addr] % num_sets` and is stored with its full line number as
//! the tag. The mapping starts as the identity and is replaced by a fresh
//! random permutation on every remap.

mod policy;
mod prefetch;
mod trace;

pub use policy::select_victim;
pub use prefetch::StreamTracker;
pub use trace::{TraceLine, VictimLatency};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Domain {
    #[default]
    Attacker,
    Victim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReplacementAlg {
    Lru,
    Plru,
    Rrip,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PrefetcherKind {
    #[default]
    None,
    NextLine,
    Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Latency {
    Hit,
    Miss,
}

/// Cross-domain eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConflictEvent {
    /// The attacker evicted a victim line.
    AEvictsV,
    /// The victim evicted an attacker line.
    VEvictsA,
}

impl ConflictEvent {
    /// Event-train encoding: victim-evicts-attacker is 0, the reverse is 1.
    pub fn bit(self) -> u8 {
        match self {
            ConflictEvent::VEvictsA => 0,
            ConflictEvent::AEvictsV => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheConfig {
    pub num_ways: usize,
    pub num_sets: usize,
    pub rep_alg: ReplacementAlg,
    pub prefetcher: PrefetcherKind,
    pub pl_cache: bool,
    /// Remap after this many demand accesses.
    pub remap_interval: Option<u64>,
    pub rng_seed: u64,
}

impl CacheConfig {
    pub fn new(num_sets: usize, num_ways: usize, rep_alg: ReplacementAlg) -> Self {
        Self {
            num_ways,
            num_sets,
            rep_alg,
            prefetcher: PrefetcherKind::None,
            pl_cache: false,
            remap_interval: None,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4, 8, 12, 16].contains(&self.num_ways) {
            return Err(Error::InvalidCacheConfig(format!(
                "num_ways must be one of 1, 2, 4, 8, 12, 16 (got {})",
                self.num_ways
            )));
        }
        if !self.num_sets.is_power_of_two() {
            return Err(Error::InvalidCacheConfig(format!(
                "num_sets must be a power of two (got {})",
                self.num_sets
            )));
        }
        if self.rep_alg == ReplacementAlg::Plru && !self.num_ways.is_power_of_two() {
            return Err(Error::InvalidCacheConfig(format!(
                "PLRU needs a power-of-two way count (got {})",
                self.num_ways
            )));
        }
        if self.remap_interval == Some(0) {
            return Err(Error::InvalidCacheConfig("remap_interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheLine {
    pub valid: bool,
    pub tag: u64,
    pub domain: Domain,
    pub locked: bool,
    pub age: u32,
    pub rrpv: u8,
}

/// A fill performed by the prefetcher after a demand access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchFill {
    pub addr: u64,
    pub evicted_tag: Option<u64>,
    pub conflict_event: Option<ConflictEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub latency: Latency,
    pub evicted_tag: Option<u64>,
    pub conflict_event: Option<ConflictEvent>,
    pub caused_by_prefetch: bool,
    pub prefetch: Option<PrefetchFill>,
}

/// Low-level occupancy log consumed by detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheEvent {
    Access { addr: u64, domain: Domain, hit: bool },
    /// `slot` is `set * num_ways + way`.
    Fill {
        slot: usize,
        addr: u64,
        domain: Domain,
        evicted: Option<(u64, Domain)>,
        prefetch: bool,
    },
    Flush { addr: u64, slot: Option<usize> },
    Remap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheState {
    config: CacheConfig,
    universe: u64,
    lines: Vec<CacheLine>,
    plru_bits: Vec<bool>,
    mapping: Vec<u64>,
    stream: StreamTracker,
    rng: ChaCha8Rng,
    demand_accesses: u64,
    events: Vec<CacheEvent>,
}

struct Filled {
    hit: bool,
    evicted: Option<(u64, Domain)>,
}

impl CacheState {
    pub fn new(config: CacheConfig, universe: u64) -> Result<Self> {
        config.validate()?;
        if universe == 0 {
            return Err(Error::InvalidCacheConfig("address universe is empty".into()));
        }
        let n = config.num_sets * config.num_ways;
        let bits = config.num_sets * config.num_ways.saturating_sub(1);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            lines: vec![CacheLine::default(); n],
            plru_bits: vec![false; bits],
            mapping: (0..universe).collect(),
            stream: StreamTracker::default(),
            demand_accesses: 0,
            events: Vec::new(),
            universe,
            config,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn universe(&self) -> u64 {
        self.universe
    }

    pub fn mapping(&self) -> &[u64] {
        &self.mapping
    }

    pub fn set_of(&self, addr: u64) -> usize {
        (self.mapping[addr as usize] % self.config.num_sets as u64) as usize
    }

    pub fn set_lines(&self, set: usize) -> &[CacheLine] {
        let w = self.config.num_ways;
        &self.lines[set * w..(set + 1) * w]
    }

    pub fn plru_bits(&self, set: usize) -> &[bool] {
        let b = self.config.num_ways - 1;
        &self.plru_bits[set * b..(set + 1) * b]
    }

    /// Returns the (set, way) holding `addr`, if cached.
    pub fn find(&self, addr: u64) -> Option<(usize, usize)> {
        if addr >= self.universe {
            return None;
        }
        let set = self.set_of(addr);
        self.set_lines(set)
            .iter()
            .position(|l| l.valid && l.tag == addr)
            .map(|w| (set, w))
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.find(addr).is_some()
    }

    pub fn is_locked(&self, addr: u64) -> bool {
        self.find(addr)
            .map(|(s, w)| self.set_lines(s)[w].locked)
            .unwrap_or(false)
    }

    pub fn demand_accesses(&self) -> u64 {
        self.demand_accesses
    }

    pub fn events(&self) -> &[CacheEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<CacheEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn clear_events(&mut self) {
        self.events.clear();
    }

    /// Invalidates every line and clears replacement and prefetch state.
    ///
    /// The mapping, the random generator and the remap counter survive.
    pub fn reset_lines(&mut self) {
        self.lines.iter_mut().for_each(|l| *l = CacheLine::default());
        self.plru_bits.iter_mut().for_each(|b| *b = false);
        self.stream.clear();
        self.events.clear();
    }

    fn check(&self, addr: u64) -> Result<()> {
        if addr >= self.universe {
            Err(Error::AddressOutOfRange { addr, universe: self.universe })
        } else {
            Ok(())
        }
    }

    /// Demand access by `domain`. Fires the prefetcher afterwards and, when
    /// configured, remaps once the demand-access interval is reached.
    pub fn access(&mut self, addr: u64, domain: Domain) -> Result<AccessResult> {
        self.check(addr)?;
        let f = self.lookup_fill(addr, domain, false);
        self.events.push(CacheEvent::Access { addr, domain, hit: f.hit });

        let mut prefetch = None;
        if let Some(t) = prefetch::target(self.config.prefetcher, &mut self.stream, addr, self.universe) {
            if !self.contains(t) {
                let pf = self.lookup_fill(t, domain, true);
                prefetch = Some(PrefetchFill {
                    addr: t,
                    evicted_tag: pf.evicted.map(|e| e.0),
                    conflict_event: conflict(domain, pf.evicted),
                });
            }
        }

        self.demand_accesses += 1;
        if let Some(iv) = self.config.remap_interval {
            if self.demand_accesses % iv == 0 {
                self.remap();
            }
        }

        Ok(AccessResult {
            latency: if f.hit { Latency::Hit } else { Latency::Miss },
            evicted_tag: f.evicted.map(|e| e.0),
            conflict_event: conflict(domain, f.evicted),
            caused_by_prefetch: false,
            prefetch,
        })
    }

    fn lookup_fill(&mut self, addr: u64, domain: Domain, prefetch: bool) -> Filled {
        let set = self.set_of(addr);
        let ways = self.config.num_ways;
        let alg = self.config.rep_alg;
        let nb = ways - 1;
        let lines = &mut self.lines[set * ways..(set + 1) * ways];
        let bits = &mut self.plru_bits[set * nb..(set + 1) * nb];

        if let Some(w) = lines.iter().position(|l| l.valid && l.tag == addr) {
            policy::on_hit(alg, lines, bits, w);
            return Filled { hit: true, evicted: None };
        }

        let way = match lines.iter().position(|l| !l.valid) {
            Some(w) => Some(w),
            None => policy::select_victim(alg, lines, bits, &mut self.rng),
        };
        let Some(way) = way else {
            // every candidate is locked: serve the miss without filling
            return Filled { hit: false, evicted: None };
        };
        let old = lines[way];
        let evicted = old.valid.then_some((old.tag, old.domain));
        lines[way] = CacheLine {
            valid: true,
            tag: addr,
            domain,
            locked: false,
            age: 0,
            rrpv: 0,
        };
        policy::on_fill(alg, lines, bits, way);
        self.events.push(CacheEvent::Fill {
            slot: set * ways + way,
            addr,
            domain,
            evicted,
            prefetch,
        });
        Filled { hit: false, evicted }
    }

    /// Invalidates `addr` if cached. Locked lines are flushed too.
    pub fn flush(&mut self, addr: u64) -> Result<()> {
        self.check(addr)?;
        let slot = self.find(addr).map(|(s, w)| {
            let i = s * self.config.num_ways + w;
            self.lines[i] = CacheLine::default();
            i
        });
        self.events.push(CacheEvent::Flush { addr, slot });
        Ok(())
    }

    pub fn lock(&mut self, addr: u64) -> Result<()> {
        self.set_lock(addr, true)
    }

    pub fn unlock(&mut self, addr: u64) -> Result<()> {
        self.set_lock(addr, false)
    }

    fn set_lock(&mut self, addr: u64, locked: bool) -> Result<()> {
        if !self.config.pl_cache {
            return Err(Error::LockingDisabled);
        }
        self.check(addr)?;
        let (s, w) = self.find(addr).ok_or(Error::LockAbsent(addr))?;
        self.lines[s * self.config.num_ways + w].locked = locked;
        Ok(())
    }

    /// Draws a fresh address permutation and invalidates all lines.
    pub fn remap(&mut self) {
        self.mapping.shuffle(&mut self.rng);
        self.lines.iter_mut().for_each(|l| *l = CacheLine::default());
        self.plru_bits.iter_mut().for_each(|b| *b = false);
        self.stream.clear();
        self.events.push(CacheEvent::Remap);
    }
}

fn conflict(accessor: Domain, evicted: Option<(u64, Domain)>) -> Option<ConflictEvent> {
    match (accessor, evicted) {
        (Domain::Attacker, Some((_, Domain::Victim))) => Some(ConflictEvent::AEvictsV),
        (Domain::Victim, Some((_, Domain::Attacker))) => Some(ConflictEvent::VEvictsA),
        _ => None,
    }
}
