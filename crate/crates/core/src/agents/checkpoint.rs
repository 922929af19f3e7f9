//! Plain-text policy checkpoints.
//!
//! ```text
//! cachegame-policy 1
//! kind tabular
//! num_actions 7
//! history all
//! entries 2
//! _|_|m4.1f| -1.0000000000000000e1 ...
//! ...
//! guess_bucket none
//! backoff 4
//! entries 1
//! m4.0f| -1.0000000000000000e1 ...
//! ```
//!
//! Reals are written with 17 significant digits, so a save/load round trip
//! reproduces every value bit for bit. Tabular rows are sorted by key.

use std::collections::HashMap;
use std::fmt::Write;

use crate::error::{Error, Result};

use super::{LinearPolicy, Policy, TabularPolicy};

const MAGIC: &str = "cachegame-policy 1";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reals(v: &[f64]) -> String {
    v.iter().map(|&x| real(x)).collect::<Vec<_>>().join(" ")
}

pub fn save_policy(p: &Policy) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    match p {
        Policy::Tabular(t) => {
            let _ = writeln!(s, "kind tabular");
            let _ = writeln!(s, "num_actions {}", t.num_actions);
            let _ = writeln!(s, "history {}", t.history.map_or("all".to_string(), |k| k.to_string()));
            write_rows(&mut s, &t.table);
            let _ = writeln!(s, "guess_bucket {}", t.guess_bucket.map_or("none".to_string(), |k| k.to_string()));
            let _ = writeln!(s, "backoff {}", t.backoff.map_or("none".to_string(), |k| k.to_string()));
            write_rows(&mut s, &t.fallback);
        }
        Policy::Linear(l) => {
            let _ = writeln!(s, "kind linear");
            let _ = writeln!(s, "num_actions {}", l.num_actions);
            let _ = writeln!(s, "window {}", l.window);
            let _ = writeln!(s, "feat_dim {}", l.feat_dim);
            let _ = writeln!(s, "ret_mean {}", real(l.ret_mean));
            let _ = writeln!(s, "ret_std {}", real(l.ret_std));
            let _ = writeln!(s, "value_b {}", real(l.value_b));
            let _ = writeln!(s, "bias {}", reals(&l.bias));
            let _ = writeln!(s, "value_w {}", reals(&l.value_w));
            for a in 0..l.num_actions {
                let _ = writeln!(s, "w {}", reals(&l.weights[a * l.feat_dim..(a + 1) * l.feat_dim]));
            }
        }
    }
    s
}

fn write_rows(s: &mut String, table: &HashMap<String, Vec<f64>>) {
    let _ = writeln!(s, "entries {}", table.len());
    let mut keys: Vec<&String> = table.keys().collect();
    keys.sort();
    for k in keys {
        let _ = writeln!(s, "{k} {}", reals(&table[k]));
    }
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.it
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    /// Reads `name value...` and returns the values.
    fn field(&mut self, name: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, l) = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(name) {
            return Err(Error::Checkpoint(format!("line {n}: expected `{name}`")));
        }
        Ok((n, parts.collect()))
    }

    fn one<T: std::str::FromStr>(&mut self, name: &str) -> Result<T> {
        let (n, v) = self.field(name)?;
        match v.as_slice() {
            [x] => x.parse().map_err(|_| Error::Checkpoint(format!("line {n}: bad value for `{name}`"))),
            _ => Err(Error::Checkpoint(format!("line {n}: `{name}` takes one value"))),
        }
    }

    /// Reads `name none|k`.
    fn optional(&mut self, name: &str) -> Result<Option<usize>> {
        let v: String = self.one(name)?;
        match v.as_str() {
            "none" => Ok(None),
            k => k.parse().map(Some).map_err(|_| Error::Checkpoint(format!("bad {name} `{k}`"))),
        }
    }

    fn rows(&mut self, na: usize) -> Result<HashMap<String, Vec<f64>>> {
        let entries: usize = self.one("entries")?;
        let mut table = HashMap::with_capacity(entries);
        for _ in 0..entries {
            let (n, l) = self.next()?;
            let mut parts = l.split_whitespace();
            let key = parts.next().ok_or_else(|| Error::Checkpoint(format!("line {n}: empty row")))?;
            let vals: Vec<&str> = parts.collect();
            table.insert(key.to_string(), parse_reals(n, &vals, na)?);
        }
        Ok(table)
    }

    fn vec(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let (n, v) = self.field(name)?;
        parse_reals(n, &v, len)
    }
}

fn parse_reals(line: usize, v: &[&str], len: usize) -> Result<Vec<f64>> {
    if v.len() != len {
        return Err(Error::Checkpoint(format!("line {line}: expected {len} values, got {}", v.len())));
    }
    v.iter()
        .map(|x| x.parse::<f64>().map_err(|_| Error::Checkpoint(format!("line {line}: bad real `{x}`"))))
        .collect()
}

pub fn load_policy(text: &str) -> Result<Policy> {
    let mut ls = Lines { it: text.lines().enumerate() };
    let (_, head) = ls.next()?;
    if head.trim() != MAGIC {
        return Err(Error::Checkpoint(format!("unsupported header `{head}`")));
    }
    let kind: String = ls.one("kind")?;
    match kind.as_str() {
        "tabular" => {
            let na: usize = ls.one("num_actions")?;
            let history: String = ls.one("history")?;
            let history = match history.as_str() {
                "all" => None,
                k => Some(k.parse().map_err(|_| Error::Checkpoint(format!("bad history `{k}`")))?),
            };
            let table = ls.rows(na)?;
            let guess_bucket = ls.optional("guess_bucket")?;
            let backoff = ls.optional("backoff")?;
            let fallback = ls.rows(na)?;
            Ok(Policy::Tabular(TabularPolicy { num_actions: na, history, table, backoff, fallback, guess_bucket }))
        }
        "linear" => {
            let na: usize = ls.one("num_actions")?;
            let window: usize = ls.one("window")?;
            let fd: usize = ls.one("feat_dim")?;
            let ret_mean = ls.one("ret_mean")?;
            let ret_std = ls.one("ret_std")?;
            let value_b = ls.one("value_b")?;
            let bias = ls.vec("bias", na)?;
            let value_w = ls.vec("value_w", fd)?;
            let mut weights = Vec::with_capacity(na * fd);
            for _ in 0..na {
                weights.extend(ls.vec("w", fd)?);
            }
            Ok(Policy::Linear(LinearPolicy {
                num_actions: na,
                window,
                feat_dim: fd,
                weights,
                bias,
                value_w,
                value_b,
                ret_mean,
                ret_std,
            }))
        }
        other => Err(Error::Checkpoint(format!("unknown policy kind `{other}`"))),
    }
}
