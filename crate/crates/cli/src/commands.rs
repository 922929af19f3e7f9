//! Command implementations. Each writes its outputs and the run manifest
//! into the output directory and returns a short summary for stdout.
//!
//! Wall-clock times go to the summary only, so files are identical across
//! single-worker reruns.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use cachegame::agents::{
    exhaustive_search, save_policy, train_pg, train_tabular, Hyperparams, Policy, TrainReport,
};
use cachegame::analysis::{
    cyclone_samples, export_traces, extract_traces, import_traces, textbook_prime_probe_rounds, verify,
    AttackTraceSet, AttackTree,
};
use cachegame::cache::ReplacementAlg;
use cachegame::detect::{
    benign_corpus, cc_hunter_detect, cyclone_features, features_csv, max_autocorrelation, train_classifier,
    CycloneParams, TrainParams, VictimMissMonitor,
};
use cachegame::env::{parse_config, render_config, CacheGuessingEnv, EnvConfig};
use cachegame::presets;

use crate::error::{CliError, IoContext, Result};
use crate::manifest::{content_hash, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AgentKind {
    Tabular,
    Pg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DetectorKind {
    Cchunter,
    Cyclone,
    Vmiss,
}

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct Common {
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub workers: usize,
}

/// A config as loaded, with the text it was hashed from.
struct Loaded {
    source: String,
    text: String,
    config: EnvConfig,
}

fn preset(name: &str) -> Option<EnvConfig> {
    if let Some(n) = name.strip_prefix("config") {
        return n.parse().ok().and_then(|n| presets::table3_config(n).ok());
    }
    Some(match name {
        "lru" => presets::case_study_config(ReplacementAlg::Lru),
        "plru" => presets::case_study_config(ReplacementAlg::Plru),
        "rrip" => presets::case_study_config(ReplacementAlg::Rrip),
        "random" => presets::random_config(),
        "pl" => presets::pl_config(),
        "toy" => presets::toy_config(),
        "cchunter" => presets::cc_hunter_config(160),
        "remap" => presets::remap_config(),
        _ => return None,
    })
}

/// Reads `--config`: a file path, or `preset:NAME` for a built-in config.
fn load_config(arg: &str) -> Result<Loaded> {
    let config = match arg.strip_prefix("preset:") {
        Some(name) => preset(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset `{name}` (config1..config14, lru, plru, rrip, random, pl, toy, cchunter, remap)"
            ))
        })?,
        None => parse_config(&fs::read_to_string(arg).at(arg)?)?,
    };
    // hash the normalised text so a preset and an equal file agree
    Ok(Loaded { source: arg.to_string(), text: render_config(&config), config })
}

fn require_config(c: &Common) -> Result<Loaded> {
    let arg = c.config.as_deref().ok_or_else(|| CliError::Usage("this command needs --config".into()))?;
    load_config(arg)
}

/// Creates the output directory and writes the manifest.
fn start(c: &Common, command: &str, hashed: &str, source: &str, seed: u64, args: String) -> Result<()> {
    fs::create_dir_all(&c.out).at(&c.out)?;
    RunManifest {
        command: command.to_string(),
        config_path: source.to_string(),
        seed,
        out_dir: c.out.display().to_string(),
        config_hash: content_hash(hashed),
        args,
    }
    .write(&c.out)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).at(path)
}

fn seeded(c: &Common, cfg: &mut EnvConfig) -> u64 {
    let seed = c.seed.unwrap_or(cfg.rng_seed);
    cfg.rng_seed = seed;
    seed
}

fn hyperparams(agent: AgentKind, max_steps: u64, seed: u64, workers: usize) -> Hyperparams {
    let base = match agent {
        AgentKind::Tabular => Hyperparams::default(),
        AgentKind::Pg => Hyperparams::pg(),
    };
    Hyperparams { max_steps, seed, workers, ..base }
}

fn run_agent(agent: AgentKind, cfg: &EnvConfig, hp: &Hyperparams) -> Result<(Policy, TrainReport)> {
    let mut env = CacheGuessingEnv::new(cfg.clone())?;
    Ok(match agent {
        AgentKind::Tabular => train_tabular(&mut env, hp, None)?,
        AgentKind::Pg => train_pg(&mut env, hp, None)?,
    })
}

pub fn curve_csv(rep: &TrainReport) -> String {
    let mut s = String::from("step,reward,accuracy,episode_len\n");
    for p in &rep.reward_curve {
        let _ = writeln!(s, "{},{},{},{}", p.step, p.mean_reward, p.accuracy, p.episode_len);
    }
    s
}

pub fn train(c: &Common, agent: AgentKind, max_steps: u64) -> Result<String> {
    let mut l = require_config(c)?;
    let seed = seeded(c, &mut l.config);
    let args = format!("--agent {agent:?} --max-steps {max_steps} --workers {}", c.workers).to_lowercase();
    start(c, "train", &l.text, &l.source, seed, args)?;
    let hp = hyperparams(agent, max_steps, seed, c.workers);
    let (policy, rep) = run_agent(agent, &l.config, &hp)?;

    write(&c.out, "checkpoint.txt", &save_policy(&policy))?;
    write(&c.out, "curve.csv", &curve_csv(&rep))?;
    let traces = if l.config.multi_round_budget.is_some() {
        "skipped (multi-round config)".to_string()
    } else {
        match extract_traces(&policy, &l.config) {
            Ok(set) => {
                write(&c.out, "traces.txt", &export_traces(&set))?;
                format!("traces.txt ({}, accuracy {})", set.category, set.verified_accuracy)
            }
            Err(e @ cachegame::Error::AccuracyGate { .. }) => format!("not extracted: {e}"),
            Err(e) => return Err(e.into()),
        }
    };
    let mut r = String::new();
    let _ = writeln!(r, "agent: {}", format!("{agent:?}").to_lowercase());
    let _ = writeln!(r, "steps_taken: {}", rep.steps_taken);
    let _ = writeln!(r, "episodes: {}", rep.episodes);
    let _ = writeln!(r, "final_accuracy: {}", rep.final_accuracy);
    let _ = writeln!(r, "mean_episode_length: {}", rep.mean_episode_length);
    let _ = writeln!(r, "converged: {}", rep.converged);
    let _ = writeln!(r, "traces: {traces}");
    write(&c.out, "report.txt", &r)?;
    Ok(format!(
        "trained {} steps in {:.1}s: accuracy {:.3}, {traces}",
        rep.steps_taken, rep.wall_time_s, rep.final_accuracy
    ))
}

pub fn search(c: &Common, max_len: usize) -> Result<String> {
    let mut l = require_config(c)?;
    let seed = seeded(c, &mut l.config);
    start(c, "search", &l.text, &l.source, seed, format!("--max-len {max_len}"))?;
    let out = exhaustive_search(&l.config, max_len)?;
    let mut s = String::new();
    for a in &out.attacks {
        let seq: Vec<String> = a.actions.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "{}", seq.join(","));
    }
    write(&c.out, "search.txt", &s)?;
    if let Some(first) = out.attacks.first() {
        let set = AttackTraceSet::from_tree(&l.config, AttackTree::from_found(&l.config, first)?)?;
        write(&c.out, "traces.txt", &export_traces(&set))?;
    }
    Ok(format!("{} attacks among {} sequences", out.attacks.len(), out.enumerated))
}

fn load_traces(c: &Common, path: &Path) -> Result<(AttackTraceSet, EnvConfig, String, String)> {
    let text = fs::read_to_string(path).at(path)?;
    let set = import_traces(&text)?;
    Ok(match &c.config {
        Some(arg) => {
            let l = load_config(arg)?;
            (set, l.config, l.text, l.source)
        }
        None => {
            let cfg = set.config.clone();
            (set, cfg.clone(), render_config(&cfg), path.display().to_string())
        }
    })
}

pub fn replay(c: &Common, traces: &Path, trials: usize) -> Result<String> {
    let (set, mut cfg, text, source) = load_traces(c, traces)?;
    let seed = seeded(c, &mut cfg);
    start(c, "replay", &text, &source, seed, format!("{} --trials {trials}", traces.display()))?;
    let st = verify(&set.tree, &cfg, trials, seed)?;
    let mut r = String::new();
    let _ = writeln!(r, "trials: {}", st.episodes);
    let _ = writeln!(r, "accuracy: {}", st.accuracy);
    let _ = writeln!(r, "guesses: {}", st.guesses);
    let _ = writeln!(r, "bit_rate: {}", st.bit_rate);
    let _ = writeln!(r, "mean_episode_length: {}", st.mean_len);
    let _ = writeln!(r, "victim_misses: {}", st.victim_misses);
    write(&c.out, "replay.txt", &r)?;
    Ok(format!("accuracy {} over {} trials, {} victim misses", st.accuracy, st.episodes, st.victim_misses))
}

pub struct DetectArgs {
    pub detector: DetectorKind,
    pub max_lag: usize,
    pub threshold: f64,
}

/// Plays one episode of the trace tree, or nothing for an empty tree.
fn play(tree: &AttackTree, cfg: &EnvConfig, seed: u64) -> Result<Option<CacheGuessingEnv>> {
    if tree.rounds.iter().all(|r| r.iter().all(|p| p.lines.is_empty())) {
        return Ok(None);
    }
    let mut env = CacheGuessingEnv::new(cfg.clone())?;
    env.reseed(seed);
    cachegame::agents::evaluate(&mut tree.actor(), &mut env, 1, None, seed)?;
    Ok(Some(env))
}

pub fn detect(c: &Common, traces: &Path, a: &DetectArgs) -> Result<String> {
    let (set, mut cfg, text, source) = load_traces(c, traces)?;
    let seed = seeded(c, &mut cfg);
    let name = format!("{:?}", a.detector).to_lowercase();
    let args = format!("{} --detector {name} --max-lag {} --threshold {}", traces.display(), a.max_lag, a.threshold);
    start(c, "detect", &text, &source, seed, args)?;
    let env = play(&set.tree, &cfg, seed)?;
    let mut r = String::new();
    let _ = writeln!(r, "detector: {name}");
    let detected = match a.detector {
        DetectorKind::Cchunter => {
            let train = env.as_ref().map_or(&[][..], |e| e.event_train());
            let c_max = max_autocorrelation(train, a.max_lag);
            let _ = writeln!(r, "events: {}", train.len());
            let _ = writeln!(r, "max_autocorrelation: {c_max}");
            cc_hunter_detect(train, a.max_lag, a.threshold)
        }
        DetectorKind::Vmiss => {
            let misses = env.as_ref().map_or(0, |e| e.victim_misses());
            let _ = writeln!(r, "victim_misses: {misses}");
            env.as_ref().is_some_and(|e| VictimMissMonitor::default().fires(e.trace()))
        }
        DetectorKind::Cyclone => {
            let params = CycloneParams::default();
            let events = env.as_ref().map_or(&[][..], |e| e.cache().events());
            let feats = cyclone_features(events, cfg.num_blocks(), params);
            write(&c.out, "features.csv", &features_csv(&feats))?;
            let mut mr = cfg.clone();
            mr.multi_round_budget = mr.multi_round_budget.or(Some(160));
            let textbook = textbook_prime_probe_rounds(&mr)?;
            let mal = cyclone_samples(&mut textbook.actor(), &mr, params, 200, seed)?;
            let ben = benign_corpus(&mr, params, 200, seed)?;
            let clf = train_classifier(&ben, &mal, TrainParams { seed, ..TrainParams::default() })?;
            let score = clf.model.score(&feats.as_vector());
            let _ = writeln!(r, "cycles: {}", feats.total());
            let _ = writeln!(r, "classifier_score: {score}");
            env.is_some() && clf.model.classify(&feats.as_vector())
        }
    };
    let verdict = if detected { "DETECTED" } else { "NOT DETECTED" };
    let _ = writeln!(r, "verdict: {verdict}");
    write(&c.out, "detect.txt", &r)?;
    Ok(r.trim_end().replace('\n', ", "))
}

/// Replaces (or adds) `key: value` in a rendered config and re-parses it,
/// so unknown keys are reported by the config parser.
fn with_value(text: &str, key: &str, value: f64) -> Result<EnvConfig> {
    let prefix = format!("{key}:");
    let mut lines: Vec<String> = text.lines().filter(|l| !l.starts_with(&prefix)).map(String::from).collect();
    lines.push(format!("{key}: {value}"));
    Ok(parse_config(&lines.join("\n"))?)
}

pub struct SweepArgs {
    pub param: String,
    pub values: Vec<f64>,
    pub agent: AgentKind,
    pub max_steps: u64,
}

/// Trains once per grid value. `reward_scale` multiplies every reward;
/// any other name is a config key.
pub fn sweep(c: &Common, a: &SweepArgs) -> Result<String> {
    if a.values.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    let mut l = require_config(c)?;
    let seed = seeded(c, &mut l.config);
    let grid: Vec<String> = a.values.iter().map(|v| v.to_string()).collect();
    let args = format!(
        "--param {} --values {} --agent {} --max-steps {} --workers {}",
        a.param,
        grid.join(","),
        format!("{:?}", a.agent).to_lowercase(),
        a.max_steps,
        c.workers
    );
    let configs: Vec<EnvConfig> = a
        .values
        .iter()
        .map(|&v| {
            if a.param == "reward_scale" {
                let mut cfg = l.config.clone();
                cfg.rewards = cfg.rewards.scaled(v);
                Ok(cfg)
            } else {
                with_value(&l.text, &a.param, v)
            }
        })
        .collect::<Result<_>>()?;
    start(c, "sweep", &l.text, &l.source, seed, args)?;
    let hp = hyperparams(a.agent, a.max_steps, seed, c.workers);
    let mut csv = format!("{},steps_taken,episodes,final_accuracy,mean_episode_length,converged\n", a.param);
    for (v, cfg) in a.values.iter().zip(&configs) {
        let (_, rep) = run_agent(a.agent, cfg, &hp)?;
        let _ = writeln!(
            csv,
            "{v},{},{},{},{},{}",
            rep.steps_taken, rep.episodes, rep.final_accuracy, rep.mean_episode_length, rep.converged
        );
    }
    write(&c.out, "sweep.csv", &csv)?;
    Ok(format!("{} runs written to sweep.csv", configs.len()))
}
