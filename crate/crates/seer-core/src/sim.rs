//! The simulation driver: builds a cluster world from a scenario, runs the
//! discrete-event loop, audits consensus safety, and assembles the report.

use crate::derive_rng;
use crate::elector::{Directive, Elector, ElectorConfig};
use crate::metrics::{Collector, MetricsAgent, ObservationVector, TrainingSample};
use crate::novelty::NoveltyParams;
use crate::predictors::{AdamParams, Hyperparams, TrainSchedule};
use crate::raft::{
    Action, Input, LogEntry, Message, RaftTiming, Replica, Request, Role, TimerKind,
};
use crate::report::{sha256_hex, CommitRow, DelaySummary, ReconfigRow, RunReport};
use crate::scenario::{Mode, PlacementChoice, ScenarioConfig, TopologyChoice};
use crate::simnet::{
    generate_arrival_trace, generate_injection_trace, ArrivalTrace, EventLog, EventQueue,
    InjectionTrace, Network, NodeResourceState, SimnetError,
};
use crate::topology::{
    build_fat_tree, build_internet2, place_replicas, DelayMatrix, GeoData, PlacementStrategy,
    Topology, TopologyError,
};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use std::fmt;

/// Why a run could not produce a report.
#[derive(Debug)]
pub enum RunError {
    /// The scenario itself is unusable (bad values, unloadable assets).
    Config(String),
    /// A consensus safety property or scheduler precondition broke mid-run.
    Invariant(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration error: {m}"),
            RunError::Invariant(m) => write!(f, "invariant violation: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<crate::scenario::ConfigError> for RunError {
    fn from(e: crate::scenario::ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<TopologyError> for RunError {
    fn from(e: TopologyError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<SimnetError> for RunError {
    fn from(e: SimnetError) -> Self {
        match e {
            SimnetError::SchedulingError { .. } => RunError::Invariant(e.to_string()),
            SimnetError::TraceError(_) => RunError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
enum Event {
    Deliver { from: usize, to: usize, msg: Message },
    Timer { replica: usize, kind: TimerKind, gen: u64 },
    Arrival { index: usize },
    Injection { index: usize },
    MetricsTick,
    /// Closes the training window; in prediction mode also runs the elector.
    WindowTick,
    NoveltyTick,
    ExploreEnd { token: u64 },
    /// Abandons a forced candidacy that never won.
    ExploreStall { token: u64 },
    /// Zero-delay control channel to a replica's consensus layer.
    Force { target: usize, token: u64, cause: &'static str },
    Cancel { target: usize, token: u64 },
    CrashLeader,
}

/// Cross-replica consensus safety checks; any failure aborts the run.
struct SafetyAuditor {
    /// Index → the entry first committed there anywhere in the cluster.
    committed: BTreeMap<usize, LogEntry>,
    leaders_by_term: BTreeMap<u64, usize>,
}

impl SafetyAuditor {
    fn new() -> Self {
        Self { committed: BTreeMap::new(), leaders_by_term: BTreeMap::new() }
    }

    fn on_became_leader(
        &mut self,
        replica: usize,
        term: u64,
        log: &[LogEntry],
    ) -> Result<(), RunError> {
        if let Some(&prev) = self.leaders_by_term.get(&term) {
            if prev != replica {
                return Err(RunError::Invariant(format!(
                    "election safety: replicas {prev} and {replica} both led term {term}"
                )));
            }
        }
        self.leaders_by_term.insert(term, replica);
        for (&idx, entry) in &self.committed {
            if log.get(idx - 1) != Some(entry) {
                return Err(RunError::Invariant(format!(
                    "leader completeness: replica {replica} took term {term} without committed entry {idx}"
                )));
            }
        }
        Ok(())
    }

    fn on_committed(&mut self, replica: usize, idx: usize, entry: &LogEntry) -> Result<(), RunError> {
        match self.committed.get(&idx) {
            Some(first) if first != entry => Err(RunError::Invariant(format!(
                "state machine safety: replica {replica} committed a conflicting entry at index {idx}"
            ))),
            Some(_) => Ok(()),
            None => {
                self.committed.insert(idx, *entry);
                Ok(())
            }
        }
    }

    fn check_log_matching(&self, replicas: &[Replica]) -> Result<(), RunError> {
        for a in 0..replicas.len() {
            for b in (a + 1)..replicas.len() {
                let (la, lb) = (replicas[a].log_view(), replicas[b].log_view());
                for i in 0..la.len().min(lb.len()) {
                    if la[i].term == lb[i].term && la[i] != lb[i] {
                        return Err(RunError::Invariant(format!(
                            "log matching: replicas {a} and {b} disagree at index {} in term {}",
                            i + 1,
                            la[i].term
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn build_topology(cfg: &ScenarioConfig) -> Result<Topology, RunError> {
    match cfg.topology {
        TopologyChoice::Internet2 => {
            let geo = match (&cfg.geo_nodes_file, &cfg.geo_edges_file) {
                (Some(nf), Some(ef)) => {
                    let nodes = std::fs::read_to_string(nf)
                        .map_err(|e| RunError::Config(format!("cannot read {nf}: {e}")))?;
                    let edges = std::fs::read_to_string(ef)
                        .map_err(|e| RunError::Config(format!("cannot read {ef}: {e}")))?;
                    GeoData::parse(&nodes, &edges)?
                }
                (None, None) => GeoData::bundled_internet2(),
                _ => {
                    return Err(RunError::Config(
                        "geo_nodes_file and geo_edges_file must be given together".into(),
                    ))
                }
            };
            Ok(build_internet2(&geo, cfg.light_speed_km_per_ms * 1000.0)?)
        }
        TopologyChoice::FatTree => {
            Ok(build_fat_tree(cfg.fat_tree_radix, 3, cfg.fat_tree_hop_delay_ms)?)
        }
    }
}

fn placement_strategy(p: &PlacementChoice) -> PlacementStrategy {
    match p {
        PlacementChoice::Auto => PlacementStrategy::Auto,
        PlacementChoice::RoundRobin => PlacementStrategy::RoundRobin,
        PlacementChoice::Spread => PlacementStrategy::MaxMinSpread,
        PlacementChoice::Explicit(names) => PlacementStrategy::Explicit(names.clone()),
    }
}

/// Loads (or generates) the injection and arrival traces a run consumes.
pub fn prepare_traces(cfg: &ScenarioConfig) -> Result<(InjectionTrace, ArrivalTrace), RunError> {
    let injections = if let Some(path) = &cfg.injection_trace_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {path}: {e}")))?;
        let trace = InjectionTrace::from_text(&text)?;
        for inj in &trace.entries {
            if inj.target >= cfg.cluster_size {
                return Err(RunError::Config(format!(
                    "injection trace targets replica {} outside the {}-replica cluster",
                    inj.target, cfg.cluster_size
                )));
            }
        }
        trace
    } else if cfg.injection_kinds.is_empty() {
        InjectionTrace { entries: Vec::new() }
    } else {
        let mut rng = derive_rng(cfg.effective_injection_seed(), "injections");
        generate_injection_trace(
            &mut rng,
            cfg.cluster_size,
            cfg.duration_ms,
            cfg.t_i_ms,
            &cfg.injection_kinds,
        )
    };
    let mut rng = derive_rng(cfg.effective_arrival_seed(), "arrivals");
    let arrivals = generate_arrival_trace(
        &mut rng,
        cfg.cluster_size,
        cfg.duration_ms,
        cfg.effective_arrival_mean_ms(),
        cfg.imbalanced_arrivals,
    );
    Ok((injections, arrivals))
}

struct World {
    cfg: ScenarioConfig,
    queue: EventQueue<Event>,
    log: EventLog,
    net: Network,
    replicas: Vec<Replica>,
    raft_rngs: Vec<ChaCha20Rng>,
    ram_rng: ChaCha20Rng,
    agents: Vec<MetricsAgent>,
    latest_obs: Vec<Option<ObservationVector>>,
    collector: Collector,
    elector: Option<Elector>,
    injections: InjectionTrace,
    arrivals: ArrivalTrace,
    /// Per-replica message-processing time accrued since the last metrics tick.
    busy_ms: Vec<f64>,
    /// Replicas currently in the Leader role (stale old leaders included).
    leading: Vec<bool>,
    /// Latest elected leader still holding the role.
    current_leader: Option<usize>,
    no_leader_since: Option<f64>,
    unavailability_ms: f64,
    reconfigs: Vec<ReconfigRow>,
    commits: Vec<CommitRow>,
    samples: Vec<TrainingSample>,
    auditor: SafetyAuditor,
    stress_rr: usize,
    stress_token: u64,
    prediction_ticks: u64,
    novelty_ticks: u64,
    lost_arrivals: u64,
    total_events: u64,
}

impl World {
    fn build(cfg: &ScenarioConfig) -> Result<Self, RunError> {
        let n = cfg.cluster_size;
        let topology = build_topology(cfg)?;
        let placement = place_replicas(&topology, n, &placement_strategy(&cfg.placement))?;
        let matrix = DelayMatrix::from_placement(&topology, &placement)?;
        let mut one_way = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                one_way[i * n + j] = matrix.one_way(i, j);
            }
        }
        let resources = (0..n)
            .map(|_| NodeResourceState::healthy(cfg.base_service_time_ms, cfg.ram_baseline))
            .collect();
        let net = Network::new(one_way, n, resources, cfg.symmetric_port_delay);

        let timing = RaftTiming {
            election_timeout_min_ms: cfg.election_timeout_min_ms,
            election_timeout_max_ms: cfg.election_timeout_max_ms,
            heartbeat_ms: cfg.heartbeat_ms,
            force_retry_ms: cfg.force_retry_ms,
        };
        let replicas: Vec<Replica> = (0..n).map(|id| Replica::new(id, n, timing)).collect();
        let raft_rngs: Vec<ChaCha20Rng> =
            (0..n).map(|id| derive_rng(cfg.seed, &format!("raft-{id}"))).collect();

        let elector = (cfg.mode == Mode::Seer).then(|| {
            Elector::new(
                ElectorConfig {
                    n,
                    kind: cfg.predictor,
                    hyper: Hyperparams {
                        en_lambda: cfg.en_lambda,
                        en_alpha: cfg.en_alpha,
                        hidden_layers: cfg.ann_hidden_layers,
                        hidden_units: cfg.ann_hidden_units,
                        schedule: TrainSchedule {
                            epochs: cfg.ann_epochs,
                            batch_size: cfg.ann_batch,
                            adam: AdamParams {
                                learning_rate: cfg.ann_learning_rate,
                                ..AdamParams::default()
                            },
                        },
                    },
                    novelty: NoveltyParams {
                        k: cfg.lof_k,
                        contamination: cfg.lof_contamination,
                        lof_threshold: cfg.lof_threshold,
                        deviation_threshold: cfg.deviation_threshold,
                    },
                    intermediate_predictions: cfg.intermediate_predictions,
                    rehearsal: cfg.rehearsal,
                    delta_improve_ms: cfg.delta_improve_ms,
                    archive_cap: cfg.archive_cap,
                    t_explore_ms: cfg.t_explore_ms,
                },
                cfg.seed,
            )
        });

        let (injections, arrivals) = prepare_traces(cfg)?;

        let mut world = World {
            cfg: cfg.clone(),
            queue: EventQueue::new(),
            log: EventLog::new(),
            net,
            replicas,
            raft_rngs,
            ram_rng: derive_rng(cfg.seed, "ram"),
            agents: (0..n).map(|_| MetricsAgent::new(n, cfg.sma_window)).collect(),
            latest_obs: vec![None; n],
            collector: Collector::new(n),
            elector,
            injections,
            arrivals,
            busy_ms: vec![0.0; n],
            leading: vec![false; n],
            current_leader: None,
            no_leader_since: Some(0.0),
            unavailability_ms: 0.0,
            reconfigs: Vec::new(),
            commits: Vec::new(),
            samples: Vec::new(),
            auditor: SafetyAuditor::new(),
            stress_rr: 0,
            stress_token: 1 << 32,
            prediction_ticks: 0,
            novelty_ticks: 0,
            lost_arrivals: 0,
            total_events: 0,
        };
        world.schedule_initial()?;
        Ok(world)
    }

    fn schedule_initial(&mut self) -> Result<(), RunError> {
        let horizon = self.cfg.duration_ms;
        for i in 0..self.injections.entries.len() {
            let t = self.injections.entries[i].time_ms;
            if t <= horizon {
                self.queue.schedule(t, Event::Injection { index: i })?;
            }
        }
        for i in 0..self.arrivals.entries.len() {
            let t = self.arrivals.entries[i].time_ms;
            if t <= horizon {
                self.queue.schedule(t, Event::Arrival { index: i })?;
            }
        }
        if self.cfg.t_m_ms <= horizon {
            self.queue.schedule(self.cfg.t_m_ms, Event::MetricsTick)?;
        }
        if self.cfg.t_p_ms <= horizon {
            self.queue.schedule(self.cfg.t_p_ms, Event::WindowTick)?;
        }
        if self.cfg.mode == Mode::Seer && self.cfg.t_n_ms <= horizon {
            self.queue.schedule(self.cfg.t_n_ms, Event::NoveltyTick)?;
        }
        if let Some(t) = self.cfg.crash_leader_at_ms {
            if t <= horizon {
                self.queue.schedule(t, Event::CrashLeader)?;
            }
        }
        for id in 0..self.replicas.len() {
            let actions = self.replicas[id].start(0.0, &mut self.raft_rngs[id]);
            self.apply_actions(0.0, 0, id, actions)?;
        }
        Ok(())
    }

    fn leader_for_control(&self) -> Option<usize> {
        self.current_leader.filter(|&l| self.net.is_alive(l))
    }

    fn run(mut self) -> Result<RunReport, RunError> {
        let horizon = self.cfg.duration_ms;
        while let Some((t, seq, ev)) = self.queue.pop() {
            if t > horizon {
                break;
            }
            self.total_events += 1;
            self.handle(t, seq, ev)?;
        }
        self.finalize()
    }

    fn handle(&mut self, t: f64, seq: u64, ev: Event) -> Result<(), RunError> {
        match ev {
            Event::Deliver { from, to, msg } => {
                if !self.net.is_alive(to) {
                    return Ok(()); // fail-stop: arrived at a dead replica
                }
                self.busy_ms[to] += self.net.resources[to].processing_time_ms();
                self.log.record(
                    t,
                    seq,
                    "deliver",
                    &format!("from={from} to={to} msg={} {}", msg.kind(), msg.log_details()),
                );
                let actions =
                    self.replicas[to].handle(t, Input::Deliver { from, msg }, &mut self.raft_rngs[to]);
                self.apply_actions(t, seq, to, actions)?;
            }
            Event::Timer { replica, kind, gen } => {
                if !self.net.is_alive(replica) {
                    return Ok(());
                }
                let actions = self.replicas[replica].handle(
                    t,
                    Input::Timer { kind, gen },
                    &mut self.raft_rngs[replica],
                );
                if !actions.is_empty() {
                    self.log.record(
                        t,
                        seq,
                        "timer",
                        &format!("replica={replica} kind={} gen={gen}", kind.as_str()),
                    );
                }
                self.apply_actions(t, seq, replica, actions)?;
            }
            Event::Arrival { index } => {
                let entry = self.arrivals.entries[index].clone();
                let replica = entry.client;
                if !self.net.is_alive(replica) {
                    self.lost_arrivals += 1;
                    self.log.record(
                        t,
                        seq,
                        "arrival_lost",
                        &format!("client={} req={}", entry.client, entry.request_id),
                    );
                    return Ok(());
                }
                self.log.record(
                    t,
                    seq,
                    "arrival",
                    &format!("client={} req={}", entry.client, entry.request_id),
                );
                let request = Request {
                    id: entry.request_id,
                    source: entry.client,
                    command: entry.command,
                };
                let actions = self.replicas[replica].handle(
                    t,
                    Input::ClientArrival { request, origin_ts: t },
                    &mut self.raft_rngs[replica],
                );
                self.apply_actions(t, seq, replica, actions)?;
            }
            Event::Injection { index } => {
                let inj = self.injections.entries[index].clone();
                self.net.apply_injection(&inj);
                self.log.record(
                    t,
                    seq,
                    "injection",
                    &format!(
                        "target={} kind={} magnitude={}",
                        inj.target,
                        inj.kind.as_str(),
                        inj.magnitude
                    ),
                );
            }
            Event::MetricsTick => {
                self.metrics_tick(t, seq)?;
            }
            Event::WindowTick => {
                self.window_tick(t, seq)?;
            }
            Event::NoveltyTick => {
                self.novelty_ticks += 1;
                let leader = self.leader_for_control();
                let alive = self.net.alive_flags().to_vec();
                let directives = self
                    .elector
                    .as_mut()
                    .expect("novelty ticks only run in prediction mode")
                    .novelty_tick(t, leader, &alive);
                let queued = self.elector.as_ref().map_or(0, |e| e.queue_len());
                self.log.record(t, seq, "novelty", &format!("queue={queued}"));
                self.apply_directives(t, directives)?;
                let next = t + self.cfg.t_n_ms;
                if next <= self.cfg.duration_ms {
                    self.queue.schedule(next, Event::NoveltyTick)?;
                }
            }
            Event::ExploreEnd { token } => {
                let leader = self.leader_for_control();
                let alive = self.net.alive_flags().to_vec();
                if let Some(elector) = self.elector.as_mut() {
                    let directives = elector.on_explore_end(t, token, leader, &alive);
                    self.log.record(t, seq, "explore_end", &format!("token={token}"));
                    self.apply_directives(t, directives)?;
                }
            }
            Event::ExploreStall { token } => {
                let leader = self.leader_for_control();
                let alive = self.net.alive_flags().to_vec();
                if let Some(elector) = self.elector.as_mut() {
                    let directives = elector.on_explore_stalled(t, token, leader, &alive);
                    if !directives.is_empty() {
                        self.log.record(t, seq, "explore_stall", &format!("token={token}"));
                    }
                    self.apply_directives(t, directives)?;
                }
            }
            Event::Force { target, token, cause } => {
                if !self.net.is_alive(target) {
                    return Ok(());
                }
                self.log.record(
                    t,
                    seq,
                    "force",
                    &format!("target={target} token={token} cause={cause}"),
                );
                let actions = self.replicas[target].handle(
                    t,
                    Input::ForceCandidacy { token },
                    &mut self.raft_rngs[target],
                );
                self.apply_actions(t, seq, target, actions)?;
            }
            Event::Cancel { target, token } => {
                if !self.net.is_alive(target) {
                    return Ok(());
                }
                self.log
                    .record(t, seq, "cancel", &format!("target={target} token={token}"));
                let actions = self.replicas[target].handle(
                    t,
                    Input::CancelCandidacy { token },
                    &mut self.raft_rngs[target],
                );
                self.apply_actions(t, seq, target, actions)?;
            }
            Event::CrashLeader => match self.current_leader {
                Some(leader) if self.net.is_alive(leader) => {
                    self.log.record(t, seq, "crash", &format!("replica={leader}"));
                    self.crash_replica(t, leader)?;
                }
                _ => {
                    self.log.record(t, seq, "crash", "no_leader");
                }
            },
        }
        Ok(())
    }

    fn metrics_tick(&mut self, t: f64, seq: u64) -> Result<(), RunError> {
        let n = self.replicas.len();
        let mut alive_count = 0;
        for r in 0..n {
            // Drawn unconditionally so the noise stream stays aligned no
            // matter when a replica dies.
            let u: f64 = self.ram_rng.gen();
            let raw_ram = self.cfg.ram_baseline + (2.0 * u - 1.0) * self.cfg.ram_noise;
            if !self.net.is_alive(r) {
                continue;
            }
            alive_count += 1;
            let res = &self.net.resources[r];
            let raw_cpu = ((res.contention_load_fraction + self.busy_ms[r] / self.cfg.t_m_ms)
                / res.cpu_capacity_fraction)
                .clamp(0.0, 1.0);
            let raw_rtt: Vec<f64> = (0..n).map(|k| self.net.rtt_ms(r, k)).collect();
            let obs = self.agents[r].sample(t, raw_cpu, raw_ram, &raw_rtt);
            if let Some(elector) = self.elector.as_mut() {
                elector.on_observation(r, obs.flatten());
            }
            self.latest_obs[r] = Some(obs);
        }
        self.busy_ms.iter_mut().for_each(|b| *b = 0.0);
        self.log.record(t, seq, "metrics", &format!("alive={alive_count}"));
        let next = t + self.cfg.t_m_ms;
        if next <= self.cfg.duration_ms {
            self.queue.schedule(next, Event::MetricsTick)?;
        }
        Ok(())
    }

    fn window_tick(&mut self, t: f64, seq: u64) -> Result<(), RunError> {
        self.prediction_ticks += 1;
        let outcome = self.collector.close_window(t);
        self.log.record(
            t,
            seq,
            "window",
            &format!(
                "samples={} matched={} incomplete={} unmatched={}",
                outcome.samples.len(),
                outcome.matched_records,
                outcome.incomplete_groups,
                outcome.unmatched_discarded
            ),
        );
        self.samples.extend(outcome.samples.iter().cloned());
        if self.elector.is_some() {
            let leader = self.leader_for_control();
            let alive = self.net.alive_flags().to_vec();
            let elector = self.elector.as_mut().unwrap();
            elector.on_window_samples(&outcome.samples);
            let directives = elector.prediction_tick(t, leader, &alive);
            self.apply_directives(t, directives)?;
        }
        if self.cfg.stress_rotation {
            self.stress_force(t)?;
        }
        let next = t + self.cfg.t_p_ms;
        if next <= self.cfg.duration_ms {
            self.queue.schedule(next, Event::WindowTick)?;
        }
        Ok(())
    }

    /// Safety-stress knob: force a rotating replica into candidacy.
    fn stress_force(&mut self, t: f64) -> Result<(), RunError> {
        let n = self.replicas.len();
        for _ in 0..n {
            let target = self.stress_rr % n;
            self.stress_rr += 1;
            if self.net.is_alive(target) {
                self.stress_token += 1;
                let token = self.stress_token;
                self.queue.schedule(t, Event::Force { target, token, cause: "stress" })?;
                break;
            }
        }
        Ok(())
    }

    fn crash_replica(&mut self, t: f64, replica: usize) -> Result<(), RunError> {
        self.net.kill(replica);
        if self.leading[replica] {
            self.leading[replica] = false;
            if !self.leading.iter().any(|&l| l) && self.no_leader_since.is_none() {
                self.no_leader_since = Some(t);
            }
        }
        if self.current_leader == Some(replica) {
            self.current_leader = None;
        }
        if self.elector.is_some() {
            let leader = self.leader_for_control();
            let alive = self.net.alive_flags().to_vec();
            let directives = self
                .elector
                .as_mut()
                .unwrap()
                .on_replica_dead(t, replica, leader, &alive);
            self.apply_directives(t, directives)?;
        }
        Ok(())
    }

    fn apply_actions(
        &mut self,
        t: f64,
        seq: u64,
        from: usize,
        actions: Vec<Action>,
    ) -> Result<(), RunError> {
        for action in actions {
            match action {
                Action::Send { to, msg } => {
                    if let Some(at) = self.net.delivery_time(from, to, t) {
                        self.queue.schedule(at, Event::Deliver { from, to, msg })?;
                    }
                }
                Action::Arm { kind, gen, at } => {
                    self.queue.schedule(at, Event::Timer { replica: from, kind, gen })?;
                }
                Action::BecameLeader { term } => {
                    self.on_became_leader(t, seq, from, term)?;
                }
                Action::SteppedDown { term } => {
                    self.log
                        .record(t, seq, "stepped_down", &format!("replica={from} term={term}"));
                    if self.leading[from] {
                        self.leading[from] = false;
                        if !self.leading.iter().any(|&l| l) && self.no_leader_since.is_none() {
                            self.no_leader_since = Some(t);
                        }
                    }
                    if self.current_leader == Some(from) {
                        self.current_leader = None;
                    }
                }
                Action::Committed { idx, entry } => {
                    self.auditor.on_committed(from, idx, &entry)?;
                    if let Some(request) = entry.request {
                        if self.replicas[from].role == Role::Leader {
                            if let Some(obs) = &self.latest_obs[from] {
                                self.collector.leader_report(request.id, from, obs.clone());
                            }
                        }
                    }
                }
                Action::CommitDelay { request, origin_ts, delay_ms, entry_term } => {
                    let leader = *self
                        .auditor
                        .leaders_by_term
                        .get(&entry_term)
                        .expect("a committed entry's term always has a recorded leader");
                    self.commits.push(CommitRow {
                        request_id: request.id,
                        source: request.source,
                        delay_ms,
                        entry_term,
                        leader,
                        commit_time_ms: t,
                    });
                    self.collector.source_report(request.id, request.source, delay_ms, t);
                    self.log.record(
                        t,
                        seq,
                        "commit",
                        &format!(
                            "req={} source={} delay_ms={delay_ms} term={entry_term} origin={origin_ts}",
                            request.id, request.source
                        ),
                    );
                }
            }
        }
        Ok(())
    }

    fn on_became_leader(&mut self, t: f64, seq: u64, replica: usize, term: u64) -> Result<(), RunError> {
        self.auditor
            .on_became_leader(replica, term, self.replicas[replica].log_view())?;
        let old = self.current_leader;
        let cause = match (&self.elector, self.cfg.mode) {
            (Some(elector), _) => elector.attribute_reconfig(replica).as_str(),
            (None, _) => "timeout",
        };
        self.leading[replica] = true;
        if let Some(since) = self.no_leader_since.take() {
            self.unavailability_ms += t - since;
        }
        self.current_leader = Some(replica);
        self.log.record(
            t,
            seq,
            "became_leader",
            &format!("replica={replica} term={term} cause={cause}"),
        );
        if old != Some(replica) {
            self.reconfigs.push(ReconfigRow {
                time_ms: t,
                old_leader: old,
                new_leader: replica,
                term,
                cause,
            });
        }
        if self.elector.is_some() {
            let directives = self.elector.as_mut().unwrap().on_leader_elected(t, replica);
            self.apply_directives(t, directives)?;
        }
        Ok(())
    }

    fn apply_directives(&mut self, t: f64, directives: Vec<Directive>) -> Result<(), RunError> {
        for d in directives {
            match d {
                Directive::Force { target, token, cause } => {
                    self.queue
                        .schedule(t, Event::Force { target, token, cause: cause.as_str() })?;
                    // Guard against a candidacy that can never win.
                    self.queue
                        .schedule(t + self.cfg.t_explore_ms, Event::ExploreStall { token })?;
                }
                Directive::Cancel { target, token } => {
                    self.queue.schedule(t, Event::Cancel { target, token })?;
                }
                Directive::ScheduleExploreEnd { token, at_ms } => {
                    self.queue.schedule(at_ms, Event::ExploreEnd { token })?;
                }
            }
        }
        Ok(())
    }

    fn finalize(mut self) -> Result<RunReport, RunError> {
        self.auditor.check_log_matching(&self.replicas)?;
        let duration = self.cfg.duration_ms;
        if let Some(since) = self.no_leader_since.take() {
            self.unavailability_ms += duration - since;
        }
        let delays: Vec<f64> = self.commits.iter().map(|c| c.delay_ms).collect();
        let (fitness_trace, refit_events, ssm_events, faults, explorations) =
            match self.elector {
                Some(e) => (
                    e.fitness_trace,
                    e.refit_events,
                    e.ssm_events,
                    e.faults,
                    e.explorations_started,
                ),
                None => (Vec::new(), Vec::new(), Vec::new(), Vec::new(), 0),
            };
        let event_log = self.log.as_str().to_string();
        let event_log_sha256 = sha256_hex(event_log.as_bytes());
        Ok(RunReport {
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            duration_ms: duration,
            cluster_size: self.cfg.cluster_size,
            delays: DelaySummary::from_delays(&delays),
            commits: self.commits,
            reconfigs: self.reconfigs,
            unavailability_ms: self.unavailability_ms,
            event_log,
            event_log_sha256,
            injection_trace_text: self.injections.to_text(),
            arrival_trace_sha256: sha256_hex(self.arrivals.to_text().as_bytes()),
            training_samples: self.samples,
            fitness_trace,
            refit_events,
            ssm_events,
            faults,
            unmatched_count: self.collector.unmatched_count,
            duplicate_count: self.collector.duplicate_count,
            incomplete_count: self.collector.incomplete_count,
            prediction_ticks: self.prediction_ticks,
            novelty_ticks: self.novelty_ticks,
            explorations,
            total_events: self.total_events,
            final_leader: self.current_leader,
        })
    }
}

/// Runs one scenario end to end and returns everything it produced.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    World::build(cfg)?.run()
}
