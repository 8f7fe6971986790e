use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{BenchRecord, Benchmark, Metric};
use crate::error::SimError;

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> SimError + '_ {
    move |source| SimError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `records` with a header row, grouped by benchmark. The order
/// within a benchmark is kept.
pub fn emit_csv(records: &[BenchRecord], path: &Path) -> Result<(), SimError> {
    if records.is_empty() {
        return Err(SimError::InvalidConfig("no records to write".into()));
    }
    let mut sorted: Vec<&BenchRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.benchmark.as_str());
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in sorted {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>, SimError> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rd.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

fn x_axis(b: Benchmark) -> &'static str {
    match b {
        Benchmark::IshrinkConcurrent => "k",
        _ => "size_bytes",
    }
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::LatencyTicks => "latency_ticks",
        Metric::CompletionSpreadTicks => "completion_spread_ticks",
        Metric::PerCommRepairTicks => "per_comm_repair_ticks",
        Metric::TotalRecoveryTicks => "total_recovery_ticks",
        Metric::MsgCount => "msg_count",
    }
}

/// Writes a gnuplot script that reads `csv_path`, with one plot per
/// (benchmark, metric) and one line per variant. `smooth unique` averages
/// the iterations at each x.
pub fn emit_plotscript(records: &[BenchRecord], csv_path: &Path, path: &Path) -> Result<(), SimError> {
    let mut plots: BTreeMap<(Benchmark, Metric), BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        plots.entry((r.benchmark, r.metric)).or_default().insert(&r.variant);
    }
    let mut s = String::new();
    let _ = writeln!(s, "data = '{}'", csv_path.display());
    s.push_str("set datafile separator ','\nset terminal pngcairo size 900,600\nset key left top\nset grid\n");
    for ((bench, metric), variants) in &plots {
        let (m, x) = (metric_name(*metric), x_axis(*bench));
        let _ = writeln!(s, "\nset output '{bench}_{m}.png'");
        let _ = writeln!(s, "set title '{bench}: {m}'\nset xlabel '{x}'\nset ylabel '{m}'");
        let wide = records
            .iter()
            .filter(|r| r.benchmark == *bench)
            .any(|r| r.size_bytes > 1024);
        s.push_str(if wide && x == "size_bytes" {
            "set logscale x 2\n"
        } else {
            "unset logscale x\n"
        });
        let xcol = if x == "k" { 5 } else { 4 };
        let lines: Vec<String> = variants
            .iter()
            .map(|v| {
                format!(
                    "data using (strcol(1) eq '{bench}' && strcol(2) eq '{v}' && strcol(8) eq '{m}' ? column({xcol}) : NaN):9 \\\n    smooth unique with linespoints title '{v}'"
                )
            })
            .collect();
        let _ = writeln!(s, "plot {}", lines.join(", \\\n     "));
    }
    std::fs::write(path, s).map_err(io_err(path))
}
