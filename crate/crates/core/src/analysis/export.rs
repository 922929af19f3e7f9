//! Text export of trace sets.
//!
//! ```text
//! cachegame-traces 1
//! category PRIME_PROBE
//! accuracy 1
//! victim_misses 0
//! config num_blocks: 4
//! config ...
//! round 0
//! path secret=1
//! A 5 miss
//! V hit
//! ...
//! G 1
//! end
//! ```
//!
//! Trace lines use the simulator trace format. `G none` marks a path that
//! ended without a guess.

use std::fmt::Write;

use crate::cache::TraceLine;
use crate::env::{parse_config, render_config, Secret};
use crate::error::{Error, Result};

use super::{AttackTraceSet, AttackTree, Category, TracePath};

const MAGIC: &str = "cachegame-traces 1";

fn secret_list(v: &[Secret]) -> String {
    v.iter().map(Secret::to_string).collect::<Vec<_>>().join(",")
}

pub fn export_traces(set: &AttackTraceSet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "category {}", set.category);
    let _ = writeln!(s, "accuracy {:?}", set.verified_accuracy);
    let _ = writeln!(s, "victim_misses {}", set.victim_miss_count);
    for l in render_config(&set.config).lines() {
        let _ = writeln!(s, "config {l}");
    }
    for (r, paths) in set.tree.rounds.iter().enumerate() {
        let _ = writeln!(s, "round {r}");
        for p in paths {
            let _ = writeln!(s, "path secret={}", secret_list(&p.secrets));
            for l in &p.lines {
                let _ = writeln!(s, "{l}");
            }
            match p.guess {
                Some(g) => {
                    let _ = writeln!(s, "G {g}");
                }
                None => {
                    let _ = writeln!(s, "G none");
                }
            }
            let _ = writeln!(s, "end");
        }
    }
    s
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::TraceParse { line, msg: msg.into() }
}

fn parse_secrets(line: usize, v: &str) -> Result<Vec<Secret>> {
    v.split(',')
        .map(|t| t.trim().parse::<Secret>().map_err(|_| perr(line, format!("bad secret `{t}`"))))
        .collect()
}

/// Parses the output of [`export_traces`]. Errors name the offending line.
pub fn import_traces(text: &str) -> Result<AttackTraceSet> {
    let mut it = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    let header = |it: &mut dyn Iterator<Item = (usize, &str)>, key: &str| -> Result<(usize, String)> {
        let (n, l) = it.next().ok_or_else(|| perr(0, format!("missing `{key}`")))?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(|v| (n, v.to_string()))
            .ok_or_else(|| perr(n, format!("expected `{key}`")))
    };
    match it.next() {
        Some((_, MAGIC)) => {}
        Some((n, l)) => return Err(perr(n, format!("unsupported header `{l}`"))),
        None => return Err(perr(0, "empty trace file")),
    }
    let (n, c) = header(&mut it, "category")?;
    let category: Category = c.parse().map_err(|e: String| perr(n, e))?;
    let (n, a) = header(&mut it, "accuracy")?;
    let verified_accuracy: f64 = a.parse().map_err(|_| perr(n, format!("bad accuracy `{a}`")))?;
    let (n, v) = header(&mut it, "victim_misses")?;
    let victim_miss_count: usize = v.parse().map_err(|_| perr(n, format!("bad count `{v}`")))?;

    let mut config_text = String::new();
    let mut rounds: Vec<Vec<TracePath>> = Vec::new();
    let mut current: Option<TracePath> = None;
    let mut config_line = 0;
    for (n, l) in it {
        if let Some(c) = l.strip_prefix("config ") {
            if !rounds.is_empty() {
                return Err(perr(n, "config line after the first round"));
            }
            if config_line == 0 {
                config_line = n;
            }
            config_text.push_str(c);
            config_text.push('\n');
        } else if let Some(r) = l.strip_prefix("round ") {
            if current.is_some() {
                return Err(perr(n, "round inside a path"));
            }
            let k: usize = r.parse().map_err(|_| perr(n, format!("bad round `{r}`")))?;
            if k != rounds.len() {
                return Err(perr(n, format!("expected round {}", rounds.len())));
            }
            rounds.push(Vec::new());
        } else if let Some(s) = l.strip_prefix("path secret=") {
            if current.is_some() || rounds.is_empty() {
                return Err(perr(n, "path outside a round"));
            }
            current = Some(TracePath { secrets: parse_secrets(n, s)?, lines: Vec::new(), guess: None });
        } else if let Some(g) = l.strip_prefix("G ") {
            let p = current.as_mut().ok_or_else(|| perr(n, "guess outside a path"))?;
            p.guess = match g {
                "none" => None,
                _ => Some(g.parse().map_err(|_| perr(n, format!("bad guess `{g}`")))?),
            };
        } else if l == "end" {
            let p = current.take().ok_or_else(|| perr(n, "`end` outside a path"))?;
            rounds.last_mut().expect("round open").push(p);
        } else if l.is_empty() {
            continue;
        } else {
            let p = current.as_mut().ok_or_else(|| perr(n, format!("unexpected line `{l}`")))?;
            let t: TraceLine = l.parse().map_err(|e: String| perr(n, e))?;
            p.lines.push(t);
        }
    }
    if current.is_some() {
        return Err(perr(0, "unterminated path"));
    }
    let config = parse_config(&config_text).map_err(|e| perr(config_line, format!("config: {e}")))?;
    Ok(AttackTraceSet {
        config,
        tree: AttackTree { rounds },
        verified_accuracy,
        victim_miss_count,
        category,
    })
}
