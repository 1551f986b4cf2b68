//! Metric collection: smoothed per-replica observation vectors, commit-delay
//! records joined by request id, and the periodic training samples fed to
//! the per-replica performance models.

use std::collections::BTreeMap;
use std::collections::VecDeque;

/// Simple moving average over the last `cap` readings.
#[derive(Debug, Clone)]
pub struct Sma {
    window: VecDeque<f64>,
    cap: usize,
}

impl Sma {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0);
        Self { window: VecDeque::with_capacity(cap), cap }
    }

    /// Pushes a reading and returns the mean of the retained window.
    pub fn push(&mut self, value: f64) -> f64 {
        if self.window.len() == self.cap {
            self.window.pop_front();
        }
        self.window.push_back(value);
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().sum::<f64>() / self.window.len() as f64
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

/// One replica's smoothed view of its own resources and peer round trips.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    pub time_ms: f64,
    pub cpu: f64,
    pub ram: f64,
    /// Smoothed echo RTT to every replica; the self entry is 0.
    pub rtt: Vec<f64>,
}

impl ObservationVector {
    /// Canonical flattening `[cpu, ram, rtt_0, .., rtt_{n-1}]`, length n+2.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + self.rtt.len());
        v.push(self.cpu);
        v.push(self.ram);
        v.extend_from_slice(&self.rtt);
        v
    }
}

/// Per-replica smoothing state for the metric agent.
#[derive(Debug, Clone)]
pub struct MetricsAgent {
    cpu: Sma,
    ram: Sma,
    rtt: Vec<Sma>,
}

impl MetricsAgent {
    pub fn new(n: usize, sma_window: usize) -> Self {
        Self {
            cpu: Sma::new(sma_window),
            ram: Sma::new(sma_window),
            rtt: (0..n).map(|_| Sma::new(sma_window)).collect(),
        }
    }

    /// Ingests one round of raw readings and returns the smoothed vector.
    pub fn sample(&mut self, time_ms: f64, raw_cpu: f64, raw_ram: f64, raw_rtt: &[f64]) -> ObservationVector {
        assert_eq!(raw_rtt.len(), self.rtt.len());
        let cpu = self.cpu.push(raw_cpu);
        let ram = self.ram.push(raw_ram);
        let rtt = self
            .rtt
            .iter_mut()
            .zip(raw_rtt)
            .map(|(s, &r)| s.push(r))
            .collect();
        ObservationVector { time_ms, cpu, ram, rtt }
    }
}

/// A committed request's delay joined with the observation the committing
/// leader tagged it with.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitRecord {
    pub request_id: u64,
    pub source: usize,
    pub delay_ms: f64,
    pub leader: usize,
    pub leader_obs: ObservationVector,
    pub commit_time_ms: f64,
}

/// Input/target pair for one model fit: leader-side features against
/// per-source mean commit delays, aggregated over one collection window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub window_id: u64,
    pub closed_at_ms: f64,
    pub leader: usize,
    /// `[mean cpu, mean ram, mean rtt_0, .., mean rtt_{n-1}]`, length n+2.
    pub x: Vec<f64>,
    /// Mean commit delay per source replica, length n.
    pub y: Vec<f64>,
}

impl TrainingSample {
    pub fn new(window_id: u64, closed_at_ms: f64, leader: usize, n: usize, x: Vec<f64>, y: Vec<f64>) -> Self {
        assert_eq!(x.len(), n + 2, "feature vector must have length |R|+2");
        assert_eq!(y.len(), n, "target vector must have one delay per source");
        Self { window_id, closed_at_ms, leader, x, y }
    }
}

/// Result of closing one collection window.
#[derive(Debug, Clone, Default)]
pub struct WindowOutcome {
    pub samples: Vec<TrainingSample>,
    pub matched_records: usize,
    /// Leader groups skipped because some source had no commit.
    pub incomplete_groups: usize,
    /// Half-joined records thrown away at this close.
    pub unmatched_discarded: usize,
}

/// Joins source-side delay reports with leader-side tagged observations by
/// request id and aggregates them into per-window training samples.
#[derive(Debug)]
pub struct Collector {
    n: usize,
    window_id: u64,
    pending_source: BTreeMap<u64, (usize, f64, f64)>,
    pending_leader: BTreeMap<u64, (usize, ObservationVector)>,
    window: Vec<CommitRecord>,
    pub duplicate_count: u64,
    pub unmatched_count: u64,
    pub incomplete_count: u64,
}

impl Collector {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            window_id: 0,
            pending_source: BTreeMap::new(),
            pending_leader: BTreeMap::new(),
            window: Vec::new(),
            duplicate_count: 0,
            unmatched_count: 0,
            incomplete_count: 0,
        }
    }

    fn matched(&self, id: u64) -> bool {
        self.window.iter().any(|r| r.request_id == id)
    }

    /// The source replica observed its request commit after `delay_ms`.
    pub fn source_report(&mut self, request_id: u64, source: usize, delay_ms: f64, time_ms: f64) {
        if self.pending_source.contains_key(&request_id) || self.matched(request_id) {
            self.duplicate_count += 1;
            return;
        }
        if let Some((leader, obs)) = self.pending_leader.remove(&request_id) {
            self.window.push(CommitRecord {
                request_id,
                source,
                delay_ms,
                leader,
                leader_obs: obs,
                commit_time_ms: time_ms,
            });
        } else {
            self.pending_source.insert(request_id, (source, delay_ms, time_ms));
        }
    }

    /// The committing leader tagged the request with its current
    /// observation vector.
    pub fn leader_report(&mut self, request_id: u64, leader: usize, obs: ObservationVector) {
        if self.pending_leader.contains_key(&request_id) || self.matched(request_id) {
            self.duplicate_count += 1;
            return;
        }
        if let Some((source, delay_ms, time_ms)) = self.pending_source.remove(&request_id) {
            self.window.push(CommitRecord {
                request_id,
                source,
                delay_ms,
                leader,
                leader_obs: obs,
                commit_time_ms: time_ms,
            });
        } else {
            self.pending_leader.insert(request_id, (leader, obs));
        }
    }

    pub fn window_record_count(&self) -> usize {
        self.window.len()
    }

    /// Closes the current window: builds one training sample per leader
    /// group that heard from every source, then resets. Half-joined records
    /// are discarded and counted.
    pub fn close_window(&mut self, now_ms: f64) -> WindowOutcome {
        let mut outcome = WindowOutcome { matched_records: self.window.len(), ..Default::default() };
        let discarded = self.pending_source.len() + self.pending_leader.len();
        self.pending_source.clear();
        self.pending_leader.clear();
        outcome.unmatched_discarded = discarded;
        self.unmatched_count += discarded as u64;

        let mut groups: BTreeMap<usize, Vec<&CommitRecord>> = BTreeMap::new();
        for r in &self.window {
            groups.entry(r.leader).or_default().push(r);
        }
        for (leader, records) in &groups {
            let mut per_source: Vec<Vec<&CommitRecord>> = vec![Vec::new(); self.n];
            for r in records {
                per_source[r.source].push(r);
            }
            if per_source.iter().any(|v| v.is_empty()) {
                outcome.incomplete_groups += 1;
                self.incomplete_count += 1;
                continue;
            }
            let mean_cpu =
                records.iter().map(|r| r.leader_obs.cpu).sum::<f64>() / records.len() as f64;
            let mean_ram =
                records.iter().map(|r| r.leader_obs.ram).sum::<f64>() / records.len() as f64;
            let mut x = vec![mean_cpu, mean_ram];
            let mut y = Vec::with_capacity(self.n);
            for k in 0..self.n {
                let grp = &per_source[k];
                let rtt_k =
                    grp.iter().map(|r| r.leader_obs.rtt[k]).sum::<f64>() / grp.len() as f64;
                let delay_k = grp.iter().map(|r| r.delay_ms).sum::<f64>() / grp.len() as f64;
                x.push(rtt_k);
                y.push(delay_k);
            }
            outcome.samples.push(TrainingSample::new(
                self.window_id,
                now_ms,
                *leader,
                self.n,
                x,
                y,
            ));
        }
        self.window.clear();
        self.window_id += 1;
        outcome
    }
}
