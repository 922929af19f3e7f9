//! Reference configurations and their known attack sequences.
//!
//! Caches start empty unless a warmup is listed. Single-address victims
//! (`0` or no access) start with the victim line cached.

use crate::analysis::{parse_sequence, AttackTree, Category};
use crate::cache::{CacheConfig, PrefetcherKind, ReplacementAlg};
use crate::env::{Action, EnvConfig, RewardConfig, Secret};
use crate::error::{Error, Result};

fn dm(sets: usize) -> CacheConfig {
    CacheConfig::new(sets, 1, ReplacementAlg::Lru)
}

fn fa(ways: usize) -> CacheConfig {
    CacheConfig::new(1, ways, ReplacementAlg::Lru)
}

fn with_prefetch(mut c: CacheConfig, p: PrefetcherKind) -> CacheConfig {
    c.prefetcher = p;
    c
}

/// Victim that either touches line 0 or nothing, with line 0 warm.
fn single_victim(cache: CacheConfig, attacker: (u64, u64)) -> EnvConfig {
    let mut c = EnvConfig::new(cache, attacker, (0, 0));
    c.victim_no_access_enable = true;
    c.warmup = vec![0];
    c
}

fn flushing(mut c: EnvConfig) -> EnvConfig {
    c.flush_enable = true;
    c
}

/// The fourteen numbered cache/attacker/victim configurations.
pub fn table3_config(n: usize) -> Result<EnvConfig> {
    use PrefetcherKind::{NextLine, Stream};
    Ok(match n {
        1 => EnvConfig::new(dm(4), (4, 7), (0, 3)),
        2 => EnvConfig::new(with_prefetch(dm(4), NextLine), (4, 7), (0, 3)),
        3 => flushing(EnvConfig::new(dm(4), (0, 3), (0, 3))),
        4 => EnvConfig::new(dm(4), (0, 7), (0, 3)),
        5 => single_victim(fa(4), (4, 7)),
        6 => flushing(single_victim(fa(4), (0, 3))),
        7 => single_victim(fa(4), (0, 7)),
        8 => flushing(EnvConfig::new(fa(4), (0, 3), (0, 3))),
        9 => flushing(EnvConfig::new(fa(4), (0, 7), (0, 3))),
        10 => flushing(EnvConfig::new(dm(8), (0, 7), (0, 7))),
        11 => flushing(single_victim(fa(8), (0, 7))),
        12 => single_victim(fa(8), (0, 15)),
        13 => single_victim(with_prefetch(fa(8), NextLine), (0, 15)),
        14 => single_victim(with_prefetch(fa(8), Stream), (0, 15)),
        _ => return Err(Error::InvalidEnvConfig(format!("no reference config {n}"))),
    })
}

/// Sequence and category listed for each numbered config.
pub const TABLE3_SEQUENCES: [(&str, Category); 14] = [
    ("5,4,7,v,5,7,4,g", Category::PrimeProbe),
    ("6(p7),4(p5),v,4(p5),5(p6),g", Category::PrimeProbe),
    ("f1,v,1,f0,v,f2,v,2,f3,0,g", Category::FlushReload),
    ("3,7,4,6,v,3,0,6,4,g", Category::Mixed),
    ("4,6,7,v,5,4,g", Category::LruState),
    ("0,3,1,2,f0,2,v,3,0,g", Category::FlushReload),
    ("v,4,1,6,7,v,1,v,5,6,g", Category::LruState),
    ("f3,f2,v,2,3,f0,v,0,g", Category::FlushReload),
    ("f0,f2,f1,v,2,1,0,g", Category::FlushReload),
    ("f2,v,2,f4,f0,v,0,4,f3,f7,v,3,v,7,f1,f6,v,6,1,g", Category::FlushReload),
    ("f0,v,0,g", Category::FlushReload),
    ("7,11,10,5,4,2,3,1,v,0,g", Category::EvictReload),
    ("4(p5),9(p10),15(p16),2(p3),v,0(p1),g", Category::EvictReload),
    ("15,9,8,7(p6),11,6,12,14,v,0,g", Category::EvictReload),
];

/// Four-way single-set case study: attacker `0..=4`, victim line 0 or no
/// access, lines 0 and 1 warm.
pub fn case_study_config(alg: ReplacementAlg) -> EnvConfig {
    let mut c = EnvConfig::new(CacheConfig::new(1, 4, alg), (0, 4), (0, 0));
    c.victim_no_access_enable = true;
    c.warmup = vec![0, 1];
    c
}

/// Partition-locked PLRU set with the victim line locked.
pub fn pl_config() -> EnvConfig {
    let mut cache = CacheConfig::new(1, 4, ReplacementAlg::Plru);
    cache.pl_cache = true;
    let mut c = EnvConfig::new(cache, (1, 5), (0, 0));
    c.victim_no_access_enable = true;
    c.warmup = vec![0];
    c.lock = vec![0];
    c
}

/// One-line cache shared by attacker and victim, line 0 warm.
pub fn toy_config() -> EnvConfig {
    let mut c = EnvConfig::new(dm(1), (0, 1), (0, 1));
    c.warmup = vec![0];
    c
}

/// Four-set direct-mapped prime+probe setting played for `budget` steps.
pub fn cc_hunter_config(budget: usize) -> EnvConfig {
    let mut c = table3_config(1).expect("config 1 exists");
    c.multi_round_budget = Some(budget);
    c
}

/// Small-scale rewards for multi-round play: a correct guess is worth 1,
/// so an autocorrelation penalty of scale 1 is felt.
pub fn multi_round_rewards() -> RewardConfig {
    RewardConfig {
        correct_guess_reward: 1.0,
        wrong_guess_reward: -5.0,
        step_reward: -0.01,
        length_violation_reward: -1.0,
        ..RewardConfig::default()
    }
}

/// Four-way random-replacement case study with a 32-step window, long
/// enough to re-establish a known set state before probing.
pub fn random_config() -> EnvConfig {
    let mut c = case_study_config(ReplacementAlg::Random);
    c.window_size = 32;
    c
}

/// Four-set two-way LRU cache whose address permutation can be redrawn:
/// victim line 0 or no access, attacker lines 1 to 11.
pub fn remap_config() -> EnvConfig {
    single_victim(CacheConfig::new(4, 2, ReplacementAlg::Lru), (1, 11))
}

/// How a reference sequence is turned into a trace tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Script {
    /// One action list for all secrets; the guess follows the observations.
    Flat(Vec<Action>),
    /// Secret-dependent continuations.
    PerSecret(Vec<(Secret, Vec<Action>)>),
    /// A single branch of an adaptive attack that identifies only `secret`.
    Branch { actions: Vec<Action>, secret: Secret },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Golden {
    pub name: String,
    pub config: EnvConfig,
    pub script: Script,
    pub category: Option<Category>,
}

impl Golden {
    pub fn tree(&self) -> Result<AttackTree> {
        match &self.script {
            Script::Flat(a) => AttackTree::from_sequence(&self.config, a),
            Script::PerSecret(p) => AttackTree::from_per_secret(&self.config, p),
            Script::Branch { actions, .. } => AttackTree::from_sequence_lenient(&self.config, actions),
        }
    }
}

fn seq(s: &str) -> Vec<Action> {
    parse_sequence(s).expect("reference sequence parses")
}

/// Every reference sequence with its config.
pub fn golden_suite() -> Vec<Golden> {
    let mut out = Vec::new();
    for (i, (s, cat)) in TABLE3_SEQUENCES.iter().enumerate() {
        let n = i + 1;
        let script = if n == 2 {
            Script::Branch { actions: seq(s), secret: Secret::Addr(0) }
        } else {
            Script::Flat(seq(s))
        };
        out.push(Golden {
            name: format!("config {n}"),
            config: table3_config(n).expect("numbered config"),
            script,
            category: Some(*cat),
        });
    }
    out.push(Golden {
        name: "LRU case study".into(),
        config: case_study_config(ReplacementAlg::Lru),
        script: Script::Flat(seq("v,4,3,2,0,g")),
        category: Some(Category::LruState),
    });
    out.push(Golden {
        name: "PLRU case study".into(),
        config: case_study_config(ReplacementAlg::Plru),
        script: Script::Flat(seq("1,v,1,4,v,3,2,1,g")),
        category: Some(Category::LruState),
    });
    out.push(Golden {
        name: "RRIP case study".into(),
        config: case_study_config(ReplacementAlg::Rrip),
        script: Script::PerSecret(vec![
            (Secret::Addr(0), seq("3,2,3,1,v,4,2")),
            (Secret::NoAccess, seq("3,2,3,1,v,4,2,0")),
        ]),
        category: Some(Category::LruState),
    });
    out.push(Golden {
        name: "PL cache".into(),
        config: pl_config(),
        script: Script::Flat(seq("1,v,3,3,2,5,5")),
        category: Some(Category::LruState),
    });
    out.push(Golden {
        name: "toy".into(),
        config: toy_config(),
        script: Script::Flat(seq("v,1,g")),
        category: None,
    });
    out
}
