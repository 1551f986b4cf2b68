//! Batch drivers on top of single runs: paired mode comparisons over shared
//! workload traces, seed sweeps, and grid sweeps with per-cell statistics.
//!
//! A grid file reuses the flat `key = value` run-config syntax. A value
//! containing `|` lists alternatives for that key, and the matrix runs the
//! cross product of every axis. Splitting happens only on `|`, so values
//! with embedded commas (multi-kind injection lists, explicit placements)
//! stay intact inside one cell.

use std::fmt::Write as _;
use std::path::Path;

use crate::report::{mean_ci95, sha256_hex, RunReport};
use crate::scenario::{ConfigError, Mode, ScenarioConfig};
use crate::sim::{run_scenario, RunError};

/// The same scenario run under both election modes with identical topology,
/// placement, and workload traces; only the election machinery differs.
#[derive(Debug)]
pub struct PairReport {
    pub seer: RunReport,
    pub nat: RunReport,
}

impl PairReport {
    /// Relative mean commit-delay change as a percentage of the plain-mode
    /// mean; positive means prediction-driven election committed faster.
    pub fn mean_delay_improvement_pct(&self) -> f64 {
        100.0 * (self.nat.delays.mean_ms - self.seer.delays.mean_ms) / self.nat.delays.mean_ms
    }

    /// Reconfiguration count normalized to the plain mode's count.
    pub fn reconfig_ratio(&self) -> f64 {
        self.seer.reconfigs.len() as f64 / self.nat.reconfigs.len() as f64
    }

    /// Side-by-side digest, one fact per line.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cluster_size = {}", self.seer.cluster_size);
        let _ = writeln!(s, "seed = {}", self.seer.seed);
        let _ = writeln!(s, "duration_ms = {}", self.seer.duration_ms);
        let _ = writeln!(s, "seer_mean_delay_ms = {:.4}", self.seer.delays.mean_ms);
        let _ = writeln!(s, "nat_mean_delay_ms = {:.4}", self.nat.delays.mean_ms);
        let _ = writeln!(
            s,
            "mean_delay_improvement_pct = {:.4}",
            self.mean_delay_improvement_pct()
        );
        let _ = writeln!(s, "seer_median_delay_ms = {:.4}", self.seer.delays.median_ms);
        let _ = writeln!(s, "nat_median_delay_ms = {:.4}", self.nat.delays.median_ms);
        let _ = writeln!(s, "seer_p95_delay_ms = {:.4}", self.seer.delays.p95_ms);
        let _ = writeln!(s, "nat_p95_delay_ms = {:.4}", self.nat.delays.p95_ms);
        let _ = writeln!(s, "seer_commits = {}", self.seer.delays.count);
        let _ = writeln!(s, "nat_commits = {}", self.nat.delays.count);
        let _ = writeln!(s, "seer_reconfigurations = {}", self.seer.reconfigs.len());
        let _ = writeln!(s, "nat_reconfigurations = {}", self.nat.reconfigs.len());
        let _ = writeln!(s, "reconfig_ratio_vs_nat = {:.4}", self.reconfig_ratio());
        let _ = writeln!(s, "seer_unavailability_ms = {:.4}", self.seer.unavailability_ms);
        let _ = writeln!(s, "nat_unavailability_ms = {:.4}", self.nat.unavailability_ms);
        let _ = writeln!(
            s,
            "injection_trace_sha256 = {}",
            sha256_hex(self.seer.injection_trace_text.as_bytes())
        );
        let _ = writeln!(s, "arrival_trace_sha256 = {}", self.seer.arrival_trace_sha256);
        s
    }

    /// Writes `pair_summary.txt` plus the full artifact set of each run
    /// under `dir/seer` and `dir/nat`.
    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.seer.write_outputs(&dir.join("seer"))?;
        self.nat.write_outputs(&dir.join("nat"))?;
        std::fs::write(dir.join("pair_summary.txt"), self.summary_text())
    }
}

/// Runs the scenario once per election mode with everything else held
/// fixed, and verifies both runs drew byte-identical workload traces.
pub fn run_pair(cfg: &ScenarioConfig) -> Result<PairReport, RunError> {
    let mut seer_cfg = cfg.clone();
    seer_cfg.mode = Mode::Seer;
    let mut nat_cfg = cfg.clone();
    nat_cfg.mode = Mode::Nat;
    let (seer, nat) = join_runs(&seer_cfg, &nat_cfg);
    let (seer, nat) = (seer?, nat?);
    if seer.injection_trace_text != nat.injection_trace_text {
        return Err(RunError::Invariant(
            "paired runs drew different injection traces".into(),
        ));
    }
    if seer.arrival_trace_sha256 != nat.arrival_trace_sha256 {
        return Err(RunError::Invariant(
            "paired runs drew different arrival traces".into(),
        ));
    }
    Ok(PairReport { seer, nat })
}

#[cfg(feature = "parallel")]
fn join_runs(
    a: &ScenarioConfig,
    b: &ScenarioConfig,
) -> (Result<RunReport, RunError>, Result<RunReport, RunError>) {
    rayon::join(|| run_scenario(a), || run_scenario(b))
}

#[cfg(not(feature = "parallel"))]
fn join_runs(
    a: &ScenarioConfig,
    b: &ScenarioConfig,
) -> (Result<RunReport, RunError>, Result<RunReport, RunError>) {
    (run_scenario(a), run_scenario(b))
}

/// Runs every config, fanning out across worker threads. Each simulation
/// stays internally single-threaded, so output order and content match the
/// sequential reference exactly.
#[cfg(feature = "parallel")]
pub fn run_batch(cfgs: &[ScenarioConfig]) -> Vec<Result<RunReport, RunError>> {
    use rayon::prelude::*;
    cfgs.par_iter().map(run_scenario).collect()
}

/// Runs every config on the calling thread (the `parallel` feature is off).
#[cfg(not(feature = "parallel"))]
pub fn run_batch(cfgs: &[ScenarioConfig]) -> Vec<Result<RunReport, RunError>> {
    run_batch_sequential(cfgs)
}

/// Single-threaded reference path; `run_batch` must agree with it exactly.
pub fn run_batch_sequential(cfgs: &[ScenarioConfig]) -> Vec<Result<RunReport, RunError>> {
    cfgs.iter().map(run_scenario).collect()
}

/// A parsed sweep: config keys with the alternatives each one takes, in
/// file order. Singleton axes pin a key for every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    /// Parses grid text, checking every alternative against the run-config
    /// schema up front so typos fail fast instead of per cell.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, got: raw.to_string() });
            };
            let key = key.trim().to_string();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, got: raw.to_string() });
            }
            if axes.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::Invalid {
                    key,
                    problem: "listed twice in the grid".into(),
                });
            }
            let alternatives: Vec<String> =
                value.split('|').map(|v| v.trim().to_string()).collect();
            if alternatives.iter().any(|v| v.is_empty()) {
                return Err(ConfigError::Invalid {
                    key,
                    problem: "empty alternative in sweep list".into(),
                });
            }
            let mut probe = ScenarioConfig::default();
            for alt in &alternatives {
                probe.set(&key, alt)?;
            }
            axes.push((key, alternatives));
        }
        Ok(Grid { axes })
    }

    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Number of cells in the cross product.
    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|(_, vs)| vs.len()).product()
    }

    /// Enumerates every cell as `(key, value)` overrides. The last axis
    /// varies fastest; an empty grid yields one all-defaults cell.
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let n = self.axes.len();
        let mut out = Vec::with_capacity(self.cell_count());
        let mut idx = vec![0usize; n];
        loop {
            out.push(
                self.axes
                    .iter()
                    .zip(&idx)
                    .map(|((k, vs), &i)| (k.clone(), vs[i].clone()))
                    .collect(),
            );
            let mut pos = n;
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < self.axes[pos].1.len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

/// Distilled statistics of one completed cell run.
#[derive(Debug, Clone)]
pub struct CellStats {
    pub mode: Mode,
    pub seed: u64,
    pub commit_count: usize,
    pub mean_delay_ms: f64,
    /// 95% Student-t confidence bounds on the mean, over per-commit delays.
    pub ci95_lo_ms: f64,
    pub ci95_hi_ms: f64,
    pub median_delay_ms: f64,
    pub p95_delay_ms: f64,
    pub reconfig_count: usize,
    pub unavailability_ms: f64,
    /// The cell's full single-run digest (key = value lines).
    pub run_summary: String,
}

impl CellStats {
    fn from_report(report: &RunReport) -> Self {
        let (mean, lo, hi) = mean_ci95(&report.delays_ms());
        CellStats {
            mode: report.mode,
            seed: report.seed,
            commit_count: report.delays.count,
            mean_delay_ms: mean,
            ci95_lo_ms: lo,
            ci95_hi_ms: hi,
            median_delay_ms: report.delays.median_ms,
            p95_delay_ms: report.delays.p95_ms,
            reconfig_count: report.reconfigs.len(),
            unavailability_ms: report.unavailability_ms,
            run_summary: report.summary_text(),
        }
    }
}

/// One grid cell: the axis values that define it and either its statistics
/// or the error that stopped it.
#[derive(Debug, Clone)]
pub struct MatrixCell {
    pub values: Vec<String>,
    pub outcome: Result<CellStats, String>,
}

/// All cells of a sweep in enumeration order.
#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub axes: Vec<String>,
    pub cells: Vec<MatrixCell>,
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

impl MatrixReport {
    /// Aggregate table: grid axes first, then per-cell delay statistics
    /// with 95% confidence bounds; a failed cell leaves the statistics
    /// empty and carries its error message in the last column.
    pub fn csv(&self) -> String {
        let mut s = String::new();
        for name in &self.axes {
            s.push_str(&csv_field(name));
            s.push(',');
        }
        s.push_str(
            "mode,seed,commits,mean_delay_ms,ci95_lo_ms,ci95_hi_ms,\
             median_delay_ms,p95_delay_ms,reconfigurations,unavailability_ms,error\n",
        );
        for cell in &self.cells {
            for v in &cell.values {
                s.push_str(&csv_field(v));
                s.push(',');
            }
            match &cell.outcome {
                Ok(c) => {
                    let _ = writeln!(
                        s,
                        "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{:.4},",
                        c.mode.as_str(),
                        c.seed,
                        c.commit_count,
                        c.mean_delay_ms,
                        c.ci95_lo_ms,
                        c.ci95_hi_ms,
                        c.median_delay_ms,
                        c.p95_delay_ms,
                        c.reconfig_count,
                        c.unavailability_ms,
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, ",,,,,,,,,,{}", csv_field(e));
                }
            }
        }
        s
    }
}

fn run_cell(overrides: &[(String, String)]) -> Result<CellStats, String> {
    let mut cfg = ScenarioConfig::default();
    for (k, v) in overrides {
        cfg.set(k, v).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let report = run_scenario(&cfg).map_err(|e| e.to_string())?;
    Ok(CellStats::from_report(&report))
}

#[cfg(feature = "parallel")]
fn map_cells(cells: &[Vec<(String, String)>]) -> Vec<Result<CellStats, String>> {
    use rayon::prelude::*;
    cells.par_iter().map(|c| run_cell(c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_cells(cells: &[Vec<(String, String)>]) -> Vec<Result<CellStats, String>> {
    cells.iter().map(|c| run_cell(c)).collect()
}

/// Runs every cell of the sweep over the config defaults. Cells run in
/// parallel when the `parallel` feature is on; a failing cell is recorded
/// as its error string and the rest of the matrix continues.
pub fn run_matrix(grid: &Grid) -> MatrixReport {
    let cells = grid.cells();
    let outcomes = map_cells(&cells);
    MatrixReport {
        axes: grid.axes.iter().map(|(k, _)| k.clone()).collect(),
        cells: cells
            .into_iter()
            .zip(outcomes)
            .map(|(values, outcome)| MatrixCell {
                values: values.into_iter().map(|(_, v)| v).collect(),
                outcome,
            })
            .collect(),
    }
}
