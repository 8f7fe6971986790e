use std::path::Path;
use std::str::FromStr;

use super::{default_detector, default_link, Benchmark};
use crate::detector::HeartbeatConfig;
use crate::error::SimError;
use crate::simnet::LinkModel;

/// A benchmark family and the points to run it at.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub benchmark: Benchmark,
    pub ranks: usize,
    pub seed: u64,
    pub sizes: Vec<u64>,
    pub k_list: Vec<usize>,
    pub detector: HeartbeatConfig,
    pub link: LinkModel,
    pub iterations: u32,
    /// Keep full event logs of every simulation.
    pub trace: bool,
}

impl BenchConfig {
    pub fn new(benchmark: Benchmark, ranks: usize) -> Self {
        Self {
            benchmark,
            ranks,
            seed: 1,
            sizes: vec![1],
            k_list: vec![1],
            detector: default_detector(),
            link: default_link(),
            iterations: 1,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.ranks < 2 {
            return bad("ranks must be at least 2");
        }
        if self.sizes.is_empty() || self.k_list.is_empty() {
            return bad("sizes and k_list must be non-empty");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.k_list.contains(&0) {
            return bad("k values must be at least 1");
        }
        if self.link.alpha == 0 {
            return bad("link.alpha must be at least 1");
        }
        if self.benchmark == super::Benchmark::IshrinkConcurrent && self.ranks < 16 {
            return bad("ishrink_concurrent needs at least 16 ranks for 8 groups of 2");
        }
        self.detector.validate()
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Parses `key = value` lines. `#` starts a comment. `path` only labels
    /// errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self, SimError> {
        let mut benchmark = None;
        let mut ranks = None;
        let mut cfg = BenchConfig::new(Benchmark::ScopeOverhead, 2);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| SimError::Config {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            match key {
                "benchmark" => benchmark = Some(value.parse().map_err(err)?),
                "ranks" => ranks = Some(num(value).map_err(err)?),
                "seed" => cfg.seed = num(value).map_err(err)?,
                "sizes" => cfg.sizes = list(value).map_err(err)?,
                "k_list" => cfg.k_list = list(value).map_err(err)?,
                "iterations" => cfg.iterations = num(value).map_err(err)?,
                "detector.enabled" => cfg.detector.enabled = flag(value).map_err(err)?,
                "detector.period_ticks" => cfg.detector.period = num(value).map_err(err)?,
                "detector.timeout_ticks" => cfg.detector.timeout = num(value).map_err(err)?,
                "link.alpha" => cfg.link.alpha = num(value).map_err(err)?,
                "link.beta" => cfg.link.beta = num(value).map_err(err)?,
                "trace" => cfg.trace = flag(value).map_err(err)?,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        let missing = |k: &str| SimError::Config {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("missing `{k}`"),
        };
        cfg.benchmark = benchmark.ok_or_else(|| missing("benchmark"))?;
        cfg.ranks = ranks.ok_or_else(|| missing("ranks"))?;
        Ok(cfg)
    }
}

fn num<T: FromStr>(s: &str) -> Result<T, String> {
    // Allow 1_048_576 style separators.
    s.replace('_', "").parse().map_err(|_| format!("bad number `{s}`"))
}

fn list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    let v = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(num)
        .collect::<Result<Vec<T>, String>>()?;
    if v.is_empty() {
        return Err("empty list".into());
    }
    Ok(v)
}

fn flag(s: &str) -> Result<bool, String> {
    match s {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("bad boolean `{s}`")),
    }
}
