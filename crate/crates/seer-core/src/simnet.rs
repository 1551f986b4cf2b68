//! Deterministic discrete-event plumbing: the event queue, per-replica
//! resource state, injection and arrival traces, network delay computation
//! with per-pair FIFO, and the textual event log.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimnetError {
    #[error("cannot schedule event at {requested} before current time {now}")]
    SchedulingError { requested: f64, now: f64 },
    #[error("bad injection trace: {0}")]
    TraceError(String),
}

/// Priority queue of timestamped events, processed in (time, seq) order.
/// `seq` increments per schedule call, so same-time events run in insertion
/// order.
pub struct EventQueue<E> {
    heap: std::collections::BinaryHeap<QueuedEvent<E>>,
    next_seq: u64,
    now: f64,
}

struct QueuedEvent<E> {
    time: f64,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for QueuedEvent<E> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl<E> Eq for QueuedEvent<E> {}
impl<E> PartialOrd for QueuedEvent<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for QueuedEvent<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first ordering.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self { heap: std::collections::BinaryHeap::new(), next_seq: 0, now: 0.0 }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Enqueues `payload` at `time`, returning its unique sequence number.
    pub fn schedule(&mut self, time: f64, payload: E) -> Result<u64, SimnetError> {
        if time < self.now {
            return Err(SimnetError::SchedulingError { requested: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(QueuedEvent { time, seq, payload });
        Ok(seq)
    }

    /// Pops the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(f64, u64, E)> {
        let ev = self.heap.pop()?;
        debug_assert!(ev.time >= self.now, "clock went backwards");
        self.now = ev.time;
        Some((ev.time, ev.seq, ev.payload))
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Append-only newline-delimited run log: `time seq kind details`.
#[derive(Debug, Default)]
pub struct EventLog {
    buf: String,
    lines: usize,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, time: f64, seq: u64, kind: &str, details: &str) {
        use std::fmt::Write;
        if details.is_empty() {
            let _ = writeln!(self.buf, "{time:.4} {seq} {kind}");
        } else {
            let _ = writeln!(self.buf, "{time:.4} {seq} {kind} {details}");
        }
        self.lines += 1;
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn line_count(&self) -> usize {
        self.lines
    }
}

/// A replica's simulated resource situation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeResourceState {
    /// Heterogeneous allocation cap (0, 1].
    pub cpu_capacity_fraction: f64,
    /// Injected co-located workload [0, 1).
    pub contention_load_fraction: f64,
    /// Cost of handling one consensus message at full capacity, in ms.
    pub base_service_time_ms: f64,
    pub ram_utilization_fraction: f64,
}

impl NodeResourceState {
    pub fn healthy(base_service_time_ms: f64, ram: f64) -> Self {
        Self {
            cpu_capacity_fraction: 1.0,
            contention_load_fraction: 0.0,
            base_service_time_ms,
            ram_utilization_fraction: ram,
        }
    }

    /// Wall-clock time to process one message: the base cost divided by the
    /// CPU share actually available, so cost grows hyperbolically as the
    /// replica is starved.
    pub fn processing_time_ms(&self) -> f64 {
        let available = self.cpu_capacity_fraction * (1.0 - self.contention_load_fraction);
        assert!(available > 0.0, "replica has no effective CPU share");
        self.base_service_time_ms / available
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InjectionKind {
    /// Extra delay at the target's attachment port, in ms.
    Delay,
    /// Contending workload occupying a fraction of the target's CPU.
    CpuContention,
    /// Heterogeneous cap on the target's CPU capacity fraction.
    CpuCap,
}

impl InjectionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InjectionKind::Delay => "delay",
            InjectionKind::CpuContention => "cpu",
            InjectionKind::CpuCap => "cap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "delay" => Some(Self::Delay),
            "cpu" | "contention" => Some(Self::CpuContention),
            "cap" | "limit" => Some(Self::CpuCap),
            _ => None,
        }
    }
}

/// One scheduled system-state change.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub time_ms: f64,
    pub target: usize,
    pub kind: InjectionKind,
    /// Delay in ms, or a CPU fraction in [0, 1], depending on `kind`.
    pub magnitude: f64,
}

/// Replayable list of injections, one every `T_I`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InjectionTrace {
    pub entries: Vec<Injection>,
}

/// Magnitude range for an injection kind at a given cluster size.
pub fn injection_range(kind: InjectionKind, cluster_size: usize) -> (f64, f64) {
    match kind {
        InjectionKind::Delay => (5.0, 35.0),
        InjectionKind::CpuContention => {
            if cluster_size <= 4 {
                (0.70, 0.90)
            } else if cluster_size <= 6 {
                (0.65, 0.85)
            } else {
                (0.60, 0.80)
            }
        }
        InjectionKind::CpuCap => {
            if cluster_size <= 4 {
                (0.10, 0.50)
            } else if cluster_size <= 6 {
                (0.15, 0.55)
            } else {
                (0.20, 0.60)
            }
        }
    }
}

/// Draws one injection per `T_I`: uniform target, uniform kind among those
/// enabled, magnitude from the cluster-size-dependent uniform range.
/// Deterministic for a fixed seed.
pub fn generate_injection_trace(
    rng: &mut ChaCha20Rng,
    cluster_size: usize,
    duration_ms: f64,
    t_i_ms: f64,
    kinds: &[InjectionKind],
) -> InjectionTrace {
    assert!(duration_ms > 0.0 && t_i_ms > 0.0);
    let mut entries = Vec::new();
    if kinds.is_empty() {
        return InjectionTrace { entries };
    }
    let mut t = t_i_ms;
    while t <= duration_ms {
        let target = rng.gen_range(0..cluster_size);
        let kind = kinds[rng.gen_range(0..kinds.len())];
        let (lo, hi) = injection_range(kind, cluster_size);
        let magnitude = rng.gen_range(lo..hi);
        entries.push(Injection { time_ms: t, target, kind, magnitude });
        t += t_i_ms;
    }
    InjectionTrace { entries }
}

impl InjectionTrace {
    /// One line per entry: `time_ms target kind magnitude`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} {} {} {}\n",
                e.time_ms,
                e.target,
                e.kind.as_str(),
                e.magnitude
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SimnetError> {
        let mut entries = Vec::new();
        let mut last_time = f64::NEG_INFINITY;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(SimnetError::TraceError(format!(
                    "line {}: expected `time target kind magnitude`",
                    lineno + 1
                )));
            }
            let time_ms: f64 = f[0]
                .parse()
                .map_err(|_| SimnetError::TraceError(format!("line {}: bad time", lineno + 1)))?;
            let target: usize = f[1]
                .parse()
                .map_err(|_| SimnetError::TraceError(format!("line {}: bad target", lineno + 1)))?;
            let kind = InjectionKind::parse(f[2]).ok_or_else(|| {
                SimnetError::TraceError(format!("line {}: unknown kind {:?}", lineno + 1, f[2]))
            })?;
            let magnitude: f64 = f[3].parse().map_err(|_| {
                SimnetError::TraceError(format!("line {}: bad magnitude", lineno + 1))
            })?;
            if time_ms <= last_time {
                return Err(SimnetError::TraceError(format!(
                    "line {}: times must be strictly increasing",
                    lineno + 1
                )));
            }
            last_time = time_ms;
            entries.push(Injection { time_ms, target, kind, magnitude });
        }
        Ok(Self { entries })
    }
}

/// One client request: a unique id, the co-located source replica, and an
/// opaque command (two random graph end-points).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalEntry {
    pub time_ms: f64,
    pub client: usize,
    pub request_id: u64,
    pub command: (u32, u32),
}

/// Pre-generated negative-exponential arrival schedule for every client.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrivalTrace {
    pub entries: Vec<ArrivalEntry>,
    /// Per-client rate multiplier (1.0 under balanced arrivals).
    pub multipliers: Vec<f64>,
}

/// Draws per-client Poisson arrivals over the run. Balanced mode gives every
/// client the base mean inter-arrival time; imbalanced mode slows client `i`
/// by a multiplier m_i ~ U(2,5) drawn once per run.
pub fn generate_arrival_trace(
    rng: &mut ChaCha20Rng,
    cluster_size: usize,
    duration_ms: f64,
    base_inter_arrival_ms: f64,
    imbalanced: bool,
) -> ArrivalTrace {
    assert!(base_inter_arrival_ms > 0.0);
    let multipliers: Vec<f64> = (0..cluster_size)
        .map(|_| if imbalanced { rng.gen_range(2.0..5.0) } else { 1.0 })
        .collect();
    let mut entries = Vec::new();
    let mut next_id: u64 = 1;
    for client in 0..cluster_size {
        let mean = base_inter_arrival_ms * multipliers[client];
        let mut t = 0.0;
        loop {
            let u: f64 = rng.gen_range(0.0..1.0);
            t += -mean * (1.0 - u).ln();
            if t > duration_ms {
                break;
            }
            entries.push(ArrivalEntry {
                time_ms: t,
                client,
                request_id: 0,
                command: (rng.gen(), rng.gen()),
            });
        }
    }
    entries.sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms).then(a.client.cmp(&b.client)));
    for e in &mut entries {
        e.request_id = next_id;
        next_id += 1;
    }
    ArrivalTrace { entries, multipliers }
}

impl ArrivalTrace {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.multipliers {
            out.push_str(&format!("# multiplier {m}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                e.time_ms, e.client, e.request_id, e.command.0, e.command.1
            ));
        }
        out
    }
}

/// Delay computation and liveness between the cluster's attachment ports,
/// with per-ordered-pair FIFO enforcement.
#[derive(Debug, Clone)]
pub struct Network {
    n: usize,
    one_way_base: Vec<f64>,
    port_delay_ms: Vec<f64>,
    /// Port delay applies to both directions through a port when true,
    /// uplink-only when false.
    symmetric_ports: bool,
    pub resources: Vec<NodeResourceState>,
    alive: Vec<bool>,
    last_delivery: Vec<f64>,
}

impl Network {
    pub fn new(
        one_way_base: Vec<f64>,
        n: usize,
        resources: Vec<NodeResourceState>,
        symmetric_ports: bool,
    ) -> Self {
        assert_eq!(one_way_base.len(), n * n);
        assert_eq!(resources.len(), n);
        Self {
            n,
            one_way_base,
            port_delay_ms: vec![0.0; n],
            symmetric_ports,
            resources,
            alive: vec![true; n],
            last_delivery: vec![0.0; n * n],
        }
    }

    pub fn is_alive(&self, r: usize) -> bool {
        self.alive[r]
    }

    pub fn kill(&mut self, r: usize) {
        self.alive[r] = false;
    }

    pub fn alive_flags(&self) -> &[bool] {
        &self.alive
    }

    pub fn port_delay(&self, r: usize) -> f64 {
        self.port_delay_ms[r]
    }

    fn port_terms(&self, from: usize, to: usize) -> f64 {
        if self.symmetric_ports {
            self.port_delay_ms[from] + self.port_delay_ms[to]
        } else {
            self.port_delay_ms[from]
        }
    }

    /// One-way latency for a message sent now, before FIFO clamping.
    pub fn one_way_latency(&self, from: usize, to: usize) -> f64 {
        self.one_way_base[from * self.n + to]
            + self.port_terms(from, to)
            + self.resources[to].processing_time_ms()
    }

    /// Delivery timestamp for a message sent at `now`, or None when either
    /// end is dead (fail-stop: dropped silently). Enforces per-ordered-pair
    /// FIFO by clamping to the previous delivery time.
    pub fn delivery_time(&mut self, from: usize, to: usize, now: f64) -> Option<f64> {
        if !self.alive[from] || !self.alive[to] {
            return None;
        }
        let raw = now + self.one_way_latency(from, to);
        let slot = &mut self.last_delivery[from * self.n + to];
        let t = raw.max(*slot);
        *slot = t;
        Some(t)
    }

    /// Analytic echo round trip between two replicas under current
    /// injections: both propagation legs, port terms in both directions, and
    /// message processing at both ends. Zero to self.
    pub fn rtt_ms(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        self.one_way_base[i * self.n + j]
            + self.one_way_base[j * self.n + i]
            + self.port_terms(i, j)
            + self.port_terms(j, i)
            + self.resources[i].processing_time_ms()
            + self.resources[j].processing_time_ms()
    }

    /// Applies an injection, superseding the previous one of the same kind
    /// on the same replica.
    pub fn apply_injection(&mut self, inj: &Injection) {
        match inj.kind {
            InjectionKind::Delay => self.port_delay_ms[inj.target] = inj.magnitude,
            InjectionKind::CpuContention => {
                self.resources[inj.target].contention_load_fraction = inj.magnitude;
            }
            InjectionKind::CpuCap => {
                self.resources[inj.target].cpu_capacity_fraction = inj.magnitude;
            }
        }
    }
}
