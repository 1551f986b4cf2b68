//! Run outputs: commit-delay statistics, ECDFs, Student-t confidence
//! intervals, the reconfiguration log, and CSV/text serialization.

use crate::elector::{FitnessRecord, RefitEvent, SsmEvent};
use crate::metrics::TrainingSample;
use crate::scenario::Mode;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// One committed client request as observed by its source.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitRow {
    pub request_id: u64,
    pub source: usize,
    pub delay_ms: f64,
    pub entry_term: u64,
    pub leader: usize,
    pub commit_time_ms: f64,
}

/// One leadership change.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconfigRow {
    pub time_ms: f64,
    pub old_leader: Option<usize>,
    pub new_leader: usize,
    pub term: u64,
    pub cause: &'static str,
}

/// Location statistics over commit delays. Median averages the two middle
/// order statistics; p95 is nearest-rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl DelaySummary {
    pub fn from_delays(delays: &[f64]) -> Self {
        let count = delays.len();
        if count == 0 {
            return Self {
                count,
                mean_ms: f64::NAN,
                median_ms: f64::NAN,
                p95_ms: f64::NAN,
                min_ms: f64::NAN,
                max_ms: f64::NAN,
            };
        }
        let mut sorted: Vec<f64> = delays.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mean_ms = sorted.iter().sum::<f64>() / count as f64;
        let median_ms = if count % 2 == 1 {
            sorted[count / 2]
        } else {
            0.5 * (sorted[count / 2 - 1] + sorted[count / 2])
        };
        let p95_idx = ((0.95 * count as f64).ceil() as usize).clamp(1, count) - 1;
        Self {
            count,
            mean_ms,
            median_ms,
            p95_ms: sorted[p95_idx],
            min_ms: sorted[0],
            max_ms: sorted[count - 1],
        }
    }
}

/// Empirical CDF as a step function: strictly increasing in x, with the
/// cumulative fraction after each distinct value; the last point reaches 1.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n as f64;
        match points.last_mut() {
            Some((lv, lp)) if *lv == *v => *lp = p,
            _ => points.push((*v, p)),
        }
    }
    points
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation (g = 7, 9 coefficients).
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = COEF[0];
        let t = x + 7.5;
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_IT: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_IT {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - bt * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Student-t quantile: the value t with CDF(t) = p at `df` degrees of
/// freedom. Inverted by bisection on the incomplete beta representation.
pub fn student_t_ppf(p: f64, df: usize) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must lie strictly inside (0, 1)");
    assert!(df >= 1);
    if p == 0.5 {
        return 0.0;
    }
    let (target, sign) = if p > 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    // For t ≥ 0: CDF(t) = 1 − I_x(df/2, 1/2)/2 with x = df/(df + t²).
    let want = 2.0 * (1.0 - target);
    let a = df as f64 / 2.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if reg_inc_beta(a, 0.5, mid) < want {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    sign * ((df as f64) * (1.0 - x) / x).sqrt()
}

/// Sample mean with a 95% Student-t confidence interval.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, mean, mean);
    }
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let half = student_t_ppf(0.975, n - 1) * (var / n as f64).sqrt();
    (mean, mean - half, mean + half)
}

/// Everything one simulation run produces.
#[derive(Debug)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub duration_ms: f64,
    pub cluster_size: usize,
    pub commits: Vec<CommitRow>,
    pub delays: DelaySummary,
    pub reconfigs: Vec<ReconfigRow>,
    pub unavailability_ms: f64,
    pub event_log: String,
    pub event_log_sha256: String,
    pub injection_trace_text: String,
    pub arrival_trace_sha256: String,
    pub training_samples: Vec<TrainingSample>,
    pub fitness_trace: Vec<FitnessRecord>,
    pub refit_events: Vec<RefitEvent>,
    pub ssm_events: Vec<SsmEvent>,
    pub faults: Vec<String>,
    pub unmatched_count: u64,
    pub duplicate_count: u64,
    pub incomplete_count: u64,
    pub prediction_ticks: u64,
    pub novelty_ticks: u64,
    pub explorations: u64,
    pub total_events: u64,
    pub final_leader: Option<usize>,
}

impl RunReport {
    pub fn delays_ms(&self) -> Vec<f64> {
        self.commits.iter().map(|c| c.delay_ms).collect()
    }

    /// Human-readable key=value digest, one fact per line.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "cluster_size = {}", self.cluster_size);
        let _ = writeln!(s, "duration_ms = {}", self.duration_ms);
        let _ = writeln!(s, "commits = {}", self.delays.count);
        let _ = writeln!(s, "mean_delay_ms = {:.4}", self.delays.mean_ms);
        let _ = writeln!(s, "median_delay_ms = {:.4}", self.delays.median_ms);
        let _ = writeln!(s, "p95_delay_ms = {:.4}", self.delays.p95_ms);
        let _ = writeln!(s, "reconfigurations = {}", self.reconfigs.len());
        let _ = writeln!(s, "unavailability_ms = {:.4}", self.unavailability_ms);
        let _ = writeln!(s, "explorations = {}", self.explorations);
        let _ = writeln!(s, "prediction_ticks = {}", self.prediction_ticks);
        let _ = writeln!(s, "novelty_ticks = {}", self.novelty_ticks);
        let _ = writeln!(s, "training_samples = {}", self.training_samples.len());
        let _ = writeln!(s, "unmatched_records = {}", self.unmatched_count);
        let _ = writeln!(s, "duplicate_records = {}", self.duplicate_count);
        let _ = writeln!(s, "incomplete_windows = {}", self.incomplete_count);
        let _ = writeln!(s, "total_events = {}", self.total_events);
        let _ = writeln!(
            s,
            "final_leader = {}",
            self.final_leader.map(|l| l.to_string()).unwrap_or_else(|| "none".into())
        );
        let _ = writeln!(s, "event_log_sha256 = {}", self.event_log_sha256);
        let _ = writeln!(s, "faults = {}", self.faults.len());
        s
    }

    pub fn commits_csv(&self) -> String {
        let mut s = String::from("request_id,source,delay_ms,entry_term,leader,commit_time_ms\n");
        for c in &self.commits {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                c.request_id, c.source, c.delay_ms, c.entry_term, c.leader, c.commit_time_ms
            );
        }
        s
    }

    pub fn ecdf_csv(&self) -> String {
        let mut s = String::from("delay_ms,cumulative_fraction\n");
        for (v, p) in ecdf(&self.delays_ms()) {
            let _ = writeln!(s, "{v},{p}");
        }
        s
    }

    pub fn reconfigs_csv(&self) -> String {
        let mut s = String::from("time_ms,old_leader,new_leader,term,cause\n");
        for r in &self.reconfigs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.time_ms,
                r.old_leader.map(|l| l.to_string()).unwrap_or_else(|| "none".into()),
                r.new_leader,
                r.term,
                r.cause
            );
        }
        s
    }

    pub fn training_samples_csv(&self) -> String {
        let mut s = String::from("window_id,closed_at_ms,leader,x,y\n");
        for t in &self.training_samples {
            let xs: Vec<String> = t.x.iter().map(|v| v.to_string()).collect();
            let ys: Vec<String> = t.y.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                t.window_id,
                t.closed_at_ms,
                t.leader,
                xs.join(";"),
                ys.join(";")
            );
        }
        s
    }

    pub fn fitness_csv(&self) -> String {
        let mut s = String::from("time_ms,replica,fitness_ms\n");
        for f in &self.fitness_trace {
            let _ = writeln!(s, "{},{},{}", f.time_ms, f.replica, f.fitness_ms);
        }
        s
    }

    pub fn ssm_events_csv(&self) -> String {
        let mut s = String::from("time_ms,replica,kind,fraction_deviating,neighborhood\n");
        for e in &self.ssm_events {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.time_ms, e.replica, e.kind, e.fraction_deviating, e.neighborhood
            );
        }
        s
    }

    /// Writes the full artifact set under `dir` (created if needed).
    pub fn write_outputs(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.txt"), self.summary_text())?;
        std::fs::write(dir.join("commits.csv"), self.commits_csv())?;
        std::fs::write(dir.join("ecdf.csv"), self.ecdf_csv())?;
        std::fs::write(dir.join("reconfigurations.csv"), self.reconfigs_csv())?;
        std::fs::write(dir.join("training_samples.csv"), self.training_samples_csv())?;
        std::fs::write(dir.join("fitness.csv"), self.fitness_csv())?;
        std::fs::write(dir.join("ssm_events.csv"), self.ssm_events_csv())?;
        std::fs::write(dir.join("event_log.txt"), &self.event_log)?;
        std::fs::write(dir.join("injection_trace.txt"), &self.injection_trace_text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn summary_on_known_values() {
        let s = DelaySummary::from_delays(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(s.count, 5);
        assert_relative_eq!(s.mean_ms, 3.0);
        assert_relative_eq!(s.median_ms, 3.0);
        assert_relative_eq!(s.p95_ms, 5.0);
        assert_relative_eq!(s.min_ms, 1.0);
        assert_relative_eq!(s.max_ms, 5.0);
        let even = DelaySummary::from_delays(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(even.median_ms, 2.5);
        assert!(DelaySummary::from_delays(&[]).mean_ms.is_nan());
    }

    #[test]
    fn p95_uses_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_relative_eq!(DelaySummary::from_delays(&v).p95_ms, 95.0);
        let v: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert_relative_eq!(DelaySummary::from_delays(&v).p95_ms, 19.0);
    }

    #[test]
    fn ecdf_is_monotone_and_reaches_one() {
        let v = [3.0, 1.0, 2.0, 2.0, 5.0];
        let e = ecdf(&v);
        assert_eq!(e.len(), 4, "duplicate x collapses into one step");
        for w in e.windows(2) {
            assert!(w[0].0 < w[1].0);
            assert!(w[0].1 < w[1].1);
        }
        assert_relative_eq!(e.last().unwrap().1, 1.0);
        // The duplicate value carries the cumulative fraction of both.
        let two = e.iter().find(|(x, _)| *x == 2.0).unwrap();
        assert_relative_eq!(two.1, 0.6);
    }

    #[test]
    fn t_quantiles_match_reference_values() {
        assert_relative_eq!(student_t_ppf(0.975, 1), 12.7062, epsilon = 1e-3);
        assert_relative_eq!(student_t_ppf(0.975, 4), 2.7764, epsilon = 1e-3);
        assert_relative_eq!(student_t_ppf(0.975, 10), 2.2281, epsilon = 1e-3);
        assert_relative_eq!(student_t_ppf(0.975, 30), 2.0423, epsilon = 1e-3);
        // Converges toward the normal quantile for large df.
        assert_relative_eq!(student_t_ppf(0.975, 10_000), 1.96, epsilon = 1e-2);
        // Symmetric in p.
        assert_relative_eq!(student_t_ppf(0.025, 10), -student_t_ppf(0.975, 10), epsilon = 1e-9);
        assert_relative_eq!(student_t_ppf(0.5, 7), 0.0);
    }

    #[test]
    fn ci_matches_hand_computation() {
        let (mean, lo, hi) = mean_ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_relative_eq!(mean, 3.0);
        // s = sqrt(2.5), t_{0.975,4} = 2.7764 → half-width 1.9632.
        assert_relative_eq!(hi - mean, 1.9632, epsilon = 1e-3);
        assert_relative_eq!(mean - lo, hi - mean, epsilon = 1e-12);
        let (m, l, h) = mean_ci95(&[7.0]);
        assert_eq!((m, l, h), (7.0, 7.0, 7.0));
    }

    #[test]
    fn reg_inc_beta_sanity() {
        // I_x(1,1) is the identity.
        assert_relative_eq!(reg_inc_beta(1.0, 1.0, 0.3), 0.3, epsilon = 1e-12);
        // Symmetry: I_x(a,b) = 1 − I_{1−x}(b,a).
        let v = reg_inc_beta(2.5, 0.5, 0.7);
        assert_relative_eq!(v, 1.0 - reg_inc_beta(0.5, 2.5, 0.3), epsilon = 1e-12);
        assert!(reg_inc_beta(3.0, 0.5, 0.0) == 0.0 && reg_inc_beta(3.0, 0.5, 1.0) == 1.0);
    }
}
