//! One-event-per-line text form of a simulator run.
//!
//! ```text
//! A 4 miss
//! F 0
//! V hit
//! P 5
//! R
//! ```

use std::fmt;
use std::str::FromStr;

/// Latency of the victim access as recorded in a trace. The agent never sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VictimLatency {
    Hit,
    Miss,
    /// The secret was "no access" so the trigger touched nothing.
    Na,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceLine {
    Access { addr: u64, hit: bool },
    Flush { addr: u64 },
    Victim(VictimLatency),
    Prefetch { addr: u64 },
    Remap,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceLine::Access { addr, hit } => write!(f, "A {addr} {}", if *hit { "hit" } else { "miss" }),
            TraceLine::Flush { addr } => write!(f, "F {addr}"),
            TraceLine::Victim(VictimLatency::Hit) => f.write_str("V hit"),
            TraceLine::Victim(VictimLatency::Miss) => f.write_str("V miss"),
            TraceLine::Victim(VictimLatency::Na) => f.write_str("V na"),
            TraceLine::Prefetch { addr } => write!(f, "P {addr}"),
            TraceLine::Remap => f.write_str("R"),
        }
    }
}

impl FromStr for TraceLine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let addr = |t: &str| t.parse::<u64>().map_err(|_| format!("bad address `{t}`"));
        match parts.as_slice() {
            ["A", a, "hit"] => Ok(TraceLine::Access { addr: addr(a)?, hit: true }),
            ["A", a, "miss"] => Ok(TraceLine::Access { addr: addr(a)?, hit: false }),
            ["F", a] => Ok(TraceLine::Flush { addr: addr(a)? }),
            ["V", "hit"] => Ok(TraceLine::Victim(VictimLatency::Hit)),
            ["V", "miss"] => Ok(TraceLine::Victim(VictimLatency::Miss)),
            ["V", "na"] => Ok(TraceLine::Victim(VictimLatency::Na)),
            ["P", a] => Ok(TraceLine::Prefetch { addr: addr(a)? }),
            ["R"] => Ok(TraceLine::Remap),
            _ => Err(format!("unrecognized trace line `{s}`")),
        }
    }
}
