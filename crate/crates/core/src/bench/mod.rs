//! Virtual-time benchmark families.
//!
//! Each family builds one simulation per configuration point and iteration,
//! measures virtual ticks or message counts, and checks the invariants the
//! family is meant to exhibit. Points run on a rayon pool; results are
//! gathered in configuration order, so output is byte-identical across runs.

mod config;
mod families;
mod output;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::HeartbeatConfig;
use crate::error::SimError;
use crate::simnet::LinkModel;

pub use config::BenchConfig;
pub use families::kind_name;
pub use output::{emit_csv, emit_plotscript, read_csv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    ScopeOverhead,
    UniformLatency,
    IshrinkConcurrent,
    IshrinkCkpt,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::ScopeOverhead,
        Benchmark::UniformLatency,
        Benchmark::IshrinkConcurrent,
        Benchmark::IshrinkCkpt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::ScopeOverhead => "scope_overhead",
            Benchmark::UniformLatency => "uniform_latency",
            Benchmark::IshrinkConcurrent => "ishrink_concurrent",
            Benchmark::IshrinkCkpt => "ishrink_ckpt",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown benchmark `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LatencyTicks,
    CompletionSpreadTicks,
    PerCommRepairTicks,
    TotalRecoveryTicks,
    MsgCount,
}

/// One measurement. `value` is in virtual ticks or a message count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub benchmark: Benchmark,
    pub variant: String,
    pub ranks: usize,
    pub size_bytes: u64,
    pub k: usize,
    pub seed: u64,
    pub iteration: u32,
    pub metric: Metric,
    pub value: f64,
}

/// Records of a run plus every invariant the run found broken.
#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub violations: Vec<String>,
    /// Event logs, one line per event, when tracing was requested.
    pub traces: Vec<String>,
}

impl BenchReport {
    fn merge(&mut self, other: BenchReport) {
        self.records.extend(other.records);
        self.violations.extend(other.violations);
        self.traces.extend(other.traces);
    }

    /// Records matching a benchmark, variant and metric, in order.
    pub fn values(&self, variant: &str, metric: Metric) -> Vec<&BenchRecord> {
        self.records
            .iter()
            .filter(|r| r.variant == variant && r.metric == metric)
            .collect()
    }
}

/// Runs every point of `config`'s family.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, SimError> {
    config.validate()?;
    match config.benchmark {
        Benchmark::ScopeOverhead => families::scope_overhead(config),
        Benchmark::UniformLatency => families::uniform_latency(config),
        Benchmark::IshrinkConcurrent => families::ishrink_concurrent(config),
        Benchmark::IshrinkCkpt => families::ishrink_ckpt(config),
    }
}

pub(crate) fn default_detector() -> HeartbeatConfig {
    HeartbeatConfig {
        enabled: false,
        ..HeartbeatConfig::default()
    }
}

pub(crate) fn default_link() -> LinkModel {
    LinkModel::default()
}
