//! Replica state machine: log replication, randomized leader election, and
//! the externally forced candidacy used for prediction-driven reconfiguration.
//!
//! Each replica is a pure state machine: callers feed it inputs (delivered
//! messages, timer fires, local client arrivals, control commands) and
//! execute the returned actions (sends, timer arms, bookkeeping events).

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Follower => "follower",
            Role::Candidate => "candidate",
            Role::Leader => "leader",
        }
    }
}

/// A client request: unique id, originating (co-located) source replica, and
/// an opaque command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub source: usize,
    pub command: (u32, u32),
}

/// Replicated log entry; `request` is None for the no-op a new leader
/// appends to commit earlier terms promptly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogEntry {
    pub term: u64,
    pub request: Option<Request>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    AppendEntries {
        term: u64,
        prev_idx: usize,
        prev_term: u64,
        entries: Vec<LogEntry>,
        leader_commit: usize,
    },
    AppendAck {
        term: u64,
        success: bool,
        /// On success: highest index known replicated. On failure: the
        /// follower's last log index, a hint for walking next_idx back.
        ack_idx: usize,
    },
    RequestVote {
        term: u64,
        last_log_idx: usize,
        last_log_term: u64,
        /// True when the round comes from an externally forced candidacy.
        /// A leader that refuses such a round for log lag yields: it takes
        /// leadership back, repairs the candidate, and holds new proposals
        /// until the candidate can win.
        forced: bool,
    },
    VoteReply {
        term: u64,
        granted: bool,
    },
    /// Source → leader handoff of a client request.
    ClientForward { request: Request },
    /// Leader → all: commit index advanced; lets sources measure commit
    /// delay without waiting for the next heartbeat.
    CommitNotice { term: u64, commit_idx: usize },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::AppendEntries { .. } => "append_entries",
            Message::AppendAck { .. } => "append_ack",
            Message::RequestVote { .. } => "request_vote",
            Message::VoteReply { .. } => "vote_reply",
            Message::ClientForward { .. } => "client_forward",
            Message::CommitNotice { .. } => "commit_notice",
        }
    }

    pub fn term(&self) -> Option<u64> {
        match self {
            Message::AppendEntries { term, .. }
            | Message::AppendAck { term, .. }
            | Message::RequestVote { term, .. }
            | Message::VoteReply { term, .. }
            | Message::CommitNotice { term, .. } => Some(*term),
            Message::ClientForward { .. } => None,
        }
    }

    /// Compact key=value rendering for the event log.
    pub fn log_details(&self) -> String {
        match self {
            Message::AppendEntries { term, prev_idx, prev_term, entries, leader_commit } => {
                format!(
                    "term={term} prev={prev_idx} pterm={prev_term} n={} commit={leader_commit}",
                    entries.len()
                )
            }
            Message::AppendAck { term, success, ack_idx } => {
                format!("term={term} ok={success} idx={ack_idx}")
            }
            Message::RequestVote { term, last_log_idx, last_log_term, forced } => {
                format!("term={term} lli={last_log_idx} llt={last_log_term} forced={forced}")
            }
            Message::VoteReply { term, granted } => format!("term={term} granted={granted}"),
            Message::ClientForward { request } => {
                format!("req={} src={}", request.id, request.source)
            }
            Message::CommitNotice { term, commit_idx } => {
                format!("term={term} commit={commit_idx}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    Election,
    Heartbeat,
    ForceRetry,
}

impl TimerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TimerKind::Election => "election",
            TimerKind::Heartbeat => "heartbeat",
            TimerKind::ForceRetry => "force_retry",
        }
    }
}

/// Inputs fed to a replica by the surrounding simulation.
#[derive(Debug, Clone)]
pub enum Input {
    Deliver { from: usize, msg: Message },
    Timer { kind: TimerKind, gen: u64 },
    /// A request arriving at this replica's co-located client.
    ClientArrival { request: Request, origin_ts: f64 },
    /// Control command: start (and keep retrying) candidacy.
    ForceCandidacy { token: u64 },
    /// Control command: abandon a forced candidacy still in progress.
    CancelCandidacy { token: u64 },
}

/// Effects the caller must apply.
#[derive(Debug, Clone)]
pub enum Action {
    Send { to: usize, msg: Message },
    /// Arm a timer firing at `at`; stale generations are ignored on fire.
    Arm { kind: TimerKind, gen: u64, at: f64 },
    BecameLeader { term: u64 },
    SteppedDown { term: u64 },
    /// An entry became committed at this replica (auditor + leader-side
    /// observation tagging hook).
    Committed { idx: usize, entry: LogEntry },
    /// This replica, as the request's source, observed the commit.
    CommitDelay { request: Request, origin_ts: f64, delay_ms: f64, entry_term: u64 },
}

/// Election timing knobs (all in ms).
#[derive(Debug, Clone, Copy)]
pub struct RaftTiming {
    pub election_timeout_min_ms: f64,
    pub election_timeout_max_ms: f64,
    pub heartbeat_ms: f64,
    pub force_retry_ms: f64,
}

impl Default for RaftTiming {
    fn default() -> Self {
        Self {
            election_timeout_min_ms: 150.0,
            election_timeout_max_ms: 300.0,
            heartbeat_ms: 50.0,
            force_retry_ms: 150.0,
        }
    }
}

#[derive(Debug)]
pub struct Replica {
    pub id: usize,
    n: usize,
    timing: RaftTiming,

    pub role: Role,
    pub current_term: u64,
    voted_for: Option<usize>,
    /// 1-based log; index i lives at log[i-1].
    log: Vec<LogEntry>,
    pub commit_idx: usize,
    pub known_leader: Option<usize>,
    /// Highest index verified equal to the current leader's log in the
    /// current term. Commits never pass it: a follower may hold entries
    /// beyond it that the leader is about to overwrite.
    verified_match: usize,
    /// Time of the last append from a live leader (accepted or not), to
    /// tell an active feed from a dead one.
    last_append_ms: f64,

    // Candidate state.
    votes: HashSet<usize>,
    forced: Option<u64>,
    /// Time of this replica's last vote solicitation, throttling the
    /// quiet-heartbeat rounds of a forced candidacy.
    last_round_ms: f64,

    // Leadership transfer: set when this replica, as leader, refused a
    // forced candidate for log lag. It then repairs that candidate while
    // parking new proposals so the log holds still long enough to be won.
    yield_to: Option<usize>,
    yield_deadline_ms: f64,
    held_requests: Vec<Request>,

    // Leader state.
    next_idx: Vec<usize>,
    match_idx: Vec<usize>,
    /// Request ids present in the leader's log, for forward dedup.
    ids_in_log: HashSet<u64>,

    // Source-side: requests awaiting commit, keyed by id (iterated in id
    // order for deterministic resubmission).
    pending: BTreeMap<u64, (Request, f64)>,

    // Timer generations; a fire with a stale generation is ignored.
    election_gen: u64,
    heartbeat_gen: u64,
    force_gen: u64,
}

impl Replica {
    pub fn new(id: usize, n: usize, timing: RaftTiming) -> Self {
        assert!(n >= 1 && id < n);
        Self {
            id,
            n,
            timing,
            role: Role::Follower,
            current_term: 0,
            voted_for: None,
            log: Vec::new(),
            commit_idx: 0,
            known_leader: None,
            verified_match: 0,
            last_append_ms: f64::NEG_INFINITY,
            votes: HashSet::new(),
            forced: None,
            last_round_ms: f64::NEG_INFINITY,
            yield_to: None,
            yield_deadline_ms: f64::NEG_INFINITY,
            held_requests: Vec::new(),
            next_idx: vec![1; n],
            match_idx: vec![0; n],
            ids_in_log: HashSet::new(),
            pending: BTreeMap::new(),
            election_gen: 0,
            heartbeat_gen: 0,
            force_gen: 0,
        }
    }

    pub fn last_idx(&self) -> usize {
        self.log.len()
    }

    fn term_at(&self, idx: usize) -> u64 {
        if idx == 0 {
            0
        } else {
            self.log[idx - 1].term
        }
    }

    pub fn log_view(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    fn majority(&self) -> usize {
        self.n / 2 + 1
    }

    /// Arms (replacing) the randomized election timeout.
    fn arm_election(&mut self, now: f64, rng: &mut ChaCha20Rng, out: &mut Vec<Action>) {
        self.election_gen += 1;
        let span = self.timing.election_timeout_max_ms - self.timing.election_timeout_min_ms;
        let timeout = self.timing.election_timeout_min_ms + rng.gen_range(0.0..1.0) * span;
        out.push(Action::Arm {
            kind: TimerKind::Election,
            gen: self.election_gen,
            at: now + timeout,
        });
    }

    fn arm_heartbeat(&mut self, now: f64, out: &mut Vec<Action>) {
        self.heartbeat_gen += 1;
        out.push(Action::Arm {
            kind: TimerKind::Heartbeat,
            gen: self.heartbeat_gen,
            at: now + self.timing.heartbeat_ms,
        });
    }

    fn arm_force_retry(&mut self, now: f64, out: &mut Vec<Action>) {
        self.force_gen += 1;
        out.push(Action::Arm {
            kind: TimerKind::ForceRetry,
            gen: self.force_gen,
            at: now + self.timing.force_retry_ms,
        });
    }

    /// Called once at startup to arm the initial election timeout.
    pub fn start(&mut self, now: f64, rng: &mut ChaCha20Rng) -> Vec<Action> {
        let mut out = Vec::new();
        self.arm_election(now, rng, &mut out);
        out
    }

    pub fn handle(&mut self, now: f64, input: Input, rng: &mut ChaCha20Rng) -> Vec<Action> {
        let mut out = Vec::new();
        match input {
            Input::Deliver { from, msg } => self.on_message(now, from, msg, rng, &mut out),
            Input::Timer { kind, gen } => self.on_timer(now, kind, gen, rng, &mut out),
            Input::ClientArrival { request, origin_ts } => {
                self.pending.insert(request.id, (request, origin_ts));
                self.forward_request(request, now, &mut out);
            }
            Input::ForceCandidacy { token } => {
                if self.role != Role::Leader {
                    self.forced = Some(token);
                    // Suppress the normal election timer while forced.
                    self.election_gen += 1;
                    self.start_candidacy(now, rng, &mut out, true);
                }
            }
            Input::CancelCandidacy { token } => {
                if self.forced == Some(token) {
                    self.forced = None;
                    self.force_gen += 1;
                    if self.role == Role::Candidate {
                        // Keep the inflated term; just stand down.
                        self.role = Role::Follower;
                        self.votes.clear();
                    }
                    self.arm_election(now, rng, &mut out);
                }
            }
        }
        out
    }

    fn on_timer(
        &mut self,
        now: f64,
        kind: TimerKind,
        gen: u64,
        rng: &mut ChaCha20Rng,
        out: &mut Vec<Action>,
    ) {
        match kind {
            TimerKind::Election => {
                if gen != self.election_gen || self.role == Role::Leader {
                    return;
                }
                self.start_candidacy(now, rng, out, false);
            }
            TimerKind::Heartbeat => {
                if gen != self.heartbeat_gen || self.role != Role::Leader {
                    return;
                }
                if self.yield_to.is_some() && now >= self.yield_deadline_ms {
                    self.abort_yield(now, out);
                }
                self.broadcast_appends(out);
                self.arm_heartbeat(now, out);
            }
            TimerKind::ForceRetry => {
                // Retry while the force stands, even from Follower: a forced
                // candidate trumped by a higher term catches up on entries it
                // was missing and then runs again.
                if gen != self.force_gen || self.forced.is_none() || self.role == Role::Leader {
                    return;
                }
                if now - self.last_append_ms <= self.timing.force_retry_ms {
                    // A live leader is feeding this log. A blind round now
                    // would depose it and reject whatever it has in flight;
                    // quiet heartbeats drive the rounds instead, and this
                    // timer only backstops a feed that has died.
                    self.arm_force_retry(now, out);
                    return;
                }
                self.start_candidacy(now, rng, out, true);
            }
        }
    }

    /// Bumps the term and solicits votes. Forced candidacies re-arm the
    /// fixed retry timer; spontaneous ones re-arm the randomized timeout.
    fn start_candidacy(&mut self, now: f64, rng: &mut ChaCha20Rng, out: &mut Vec<Action>, forced: bool) {
        let was_leader = self.role == Role::Leader;
        self.current_term += 1;
        self.role = Role::Candidate;
        self.voted_for = Some(self.id);
        self.votes.clear();
        self.votes.insert(self.id);
        self.known_leader = None;
        self.verified_match = 0;
        self.last_round_ms = now;
        debug_assert!(!was_leader);
        if self.votes.len() >= self.majority() {
            // Single-replica cluster: elected immediately.
            self.become_leader(now, out);
            return;
        }
        let msg = Message::RequestVote {
            term: self.current_term,
            last_log_idx: self.last_idx(),
            last_log_term: self.term_at(self.last_idx()),
            forced,
        };
        for peer in 0..self.n {
            if peer != self.id {
                out.push(Action::Send { to: peer, msg: msg.clone() });
            }
        }
        if forced {
            self.arm_force_retry(now, out);
        } else {
            self.arm_election(now, rng, out);
        }
    }

    fn become_leader(&mut self, now: f64, out: &mut Vec<Action>) {
        self.role = Role::Leader;
        self.known_leader = Some(self.id);
        self.verified_match = self.last_idx();
        self.forced = None;
        self.force_gen += 1;
        self.election_gen += 1; // silence the election timer while leading
        for p in 0..self.n {
            self.next_idx[p] = self.last_idx() + 1;
            self.match_idx[p] = 0;
        }
        self.ids_in_log = self.log.iter().filter_map(|e| e.request.map(|r| r.id)).collect();
        out.push(Action::BecameLeader { term: self.current_term });
        // No-op entry: lets this term commit predecessors' entries promptly.
        self.append_to_own_log(LogEntry { term: self.current_term, request: None }, now, out);
        // The leader is also a source: propose anything still pending here.
        // This bypasses any leadership-transfer hold on purpose: the backlog
        // goes out in one burst before the yieldee's repair, so the repair
        // covers it and the log is still afterwards.
        let mine: Vec<Request> = self.pending.values().map(|(r, _)| *r).collect();
        for r in mine {
            if !self.ids_in_log.contains(&r.id) {
                self.append_to_own_log(
                    LogEntry { term: self.current_term, request: Some(r) },
                    now,
                    out,
                );
            }
        }
        self.broadcast_appends(out);
        self.arm_heartbeat(now, out);
    }

    fn append_to_own_log(&mut self, entry: LogEntry, now: f64, out: &mut Vec<Action>) {
        self.log.push(entry);
        if let Some(r) = entry.request {
            self.ids_in_log.insert(r.id);
        }
        self.match_idx[self.id] = self.last_idx();
        if self.n == 1 {
            self.advance_leader_commit(now, out);
        }
    }

    /// Leader-side intake of a client request, deduplicating re-forwards.
    fn leader_ingest(&mut self, request: Request, now: f64, out: &mut Vec<Action>) {
        debug_assert_eq!(self.role, Role::Leader);
        if self.ids_in_log.contains(&request.id) {
            return;
        }
        if self.yield_to.is_some() {
            if now < self.yield_deadline_ms {
                // Transferring leadership: park new proposals so the log
                // holds still long enough for the yieldee to match it and
                // win. Sources keep them pending, so nothing is lost if
                // this replica is deposed with the buffer unflushed.
                if !self.held_requests.iter().any(|r| r.id == request.id) {
                    self.held_requests.push(request);
                }
                return;
            }
            self.abort_yield(now, out);
        }
        self.append_to_own_log(LogEntry { term: self.current_term, request: Some(request) }, now, out);
    }

    /// Gives up on a leadership transfer and resumes proposing, appending
    /// whatever arrived while the log was held still.
    fn abort_yield(&mut self, now: f64, out: &mut Vec<Action>) {
        self.yield_to = None;
        let held = std::mem::take(&mut self.held_requests);
        for r in held {
            self.leader_ingest(r, now, out);
        }
    }

    /// Sends each follower everything outstanding from its next_idx,
    /// advancing next_idx optimistically (the network never loses messages
    /// between live replicas, so in-flight entries are never re-sent).
    fn broadcast_appends(&mut self, out: &mut Vec<Action>) {
        for peer in 0..self.n {
            if peer == self.id {
                continue;
            }
            self.send_append(peer, out);
        }
    }

    fn send_append(&mut self, peer: usize, out: &mut Vec<Action>) {
        let from = self.next_idx[peer];
        let prev_idx = from - 1;
        let entries: Vec<LogEntry> = self.log[from - 1..].to_vec();
        let n_sent = entries.len();
        out.push(Action::Send {
            to: peer,
            msg: Message::AppendEntries {
                term: self.current_term,
                prev_idx,
                prev_term: self.term_at(prev_idx),
                entries,
                leader_commit: self.commit_idx,
            },
        });
        self.next_idx[peer] += n_sent;
    }

    fn on_message(
        &mut self,
        now: f64,
        from: usize,
        msg: Message,
        rng: &mut ChaCha20Rng,
        out: &mut Vec<Action>,
    ) {
        let was_leader_at_entry = self.role == Role::Leader;
        if let Some(term) = msg.term() {
            if term > self.current_term {
                self.step_down_to(term, now, rng, out);
            }
        }
        match msg {
            Message::AppendEntries { term, prev_idx, prev_term, entries, leader_commit } => {
                if term < self.current_term {
                    out.push(Action::Send {
                        to: from,
                        msg: Message::AppendAck {
                            term: self.current_term,
                            success: false,
                            ack_idx: self.last_idx(),
                        },
                    });
                    return;
                }
                // A valid append from the current term's leader.
                if self.role != Role::Follower {
                    let was = self.role;
                    self.role = Role::Follower;
                    self.votes.clear();
                    if was == Role::Leader {
                        out.push(Action::SteppedDown { term: self.current_term });
                    }
                }
                self.observe_leader(from, now, out);
                self.arm_election(now, rng, out);
                let ok = prev_idx == 0
                    || (prev_idx <= self.last_idx() && self.term_at(prev_idx) == prev_term);
                if !ok {
                    // Even a refused probe is a live feed: the repair it
                    // provokes is imminent, so a forced candidacy must keep
                    // holding its blind retries.
                    self.last_append_ms = now;
                    // Accelerated walk-back: point the leader below the
                    // whole conflicting-term run, not one entry per round,
                    // so catch-up needs one round per term run at worst.
                    let hint = if prev_idx > self.last_idx() {
                        self.last_idx()
                    } else {
                        let conflict_term = self.term_at(prev_idx);
                        let mut first = prev_idx;
                        while first > 1 && self.term_at(first - 1) == conflict_term {
                            first -= 1;
                        }
                        first - 1
                    };
                    out.push(Action::Send {
                        to: from,
                        msg: Message::AppendAck {
                            term: self.current_term,
                            success: false,
                            ack_idx: hint,
                        },
                    });
                    return;
                }
                let mut idx = prev_idx;
                for e in &entries {
                    idx += 1;
                    if idx <= self.last_idx() {
                        if self.term_at(idx) != e.term {
                            debug_assert!(
                                idx > self.commit_idx,
                                "refusing to truncate a committed entry"
                            );
                            self.log.truncate(idx - 1);
                            self.log.push(*e);
                        }
                    } else {
                        self.log.push(*e);
                    }
                }
                let ack_idx = prev_idx + entries.len();
                // Only the prefix this append verified may commit; entries
                // past it could be leftovers the leader will overwrite.
                self.verified_match = self.verified_match.max(ack_idx);
                self.last_append_ms = now;
                let new_commit = leader_commit.min(self.verified_match);
                if new_commit > self.commit_idx {
                    self.advance_commit_to(new_commit, now, out);
                }
                out.push(Action::Send {
                    to: from,
                    msg: Message::AppendAck { term: self.current_term, success: true, ack_idx },
                });
                if self.forced.is_some()
                    && self.role == Role::Follower
                    && entries.is_empty()
                    && ack_idx == self.last_idx()
                    && leader_commit <= ack_idx
                    && now - self.last_round_ms >= self.timing.heartbeat_ms
                {
                    // An idle heartbeat confirming this log equals the
                    // leader's: the quietest instant a forced candidacy can
                    // solicit in, and essentially the only kind it can win
                    // under load, because votes are judged against logs
                    // that keep growing while the request is in flight.
                    self.start_candidacy(now, rng, out, true);
                }
            }
            Message::AppendAck { term, success, ack_idx } => {
                if self.role != Role::Leader || term != self.current_term {
                    return;
                }
                if success {
                    if ack_idx > self.match_idx[from] {
                        self.match_idx[from] = ack_idx;
                    }
                    if self.next_idx[from] < self.match_idx[from] + 1 {
                        self.next_idx[from] = self.match_idx[from] + 1;
                    }
                    self.advance_leader_commit(now, out);
                } else {
                    // Trust the follower's hint outright; it already skips
                    // whole conflicting-term runs. A resend goes out only
                    // when the hint moves next_idx, so duplicate nacks from
                    // a bunched-up delivery backlog are no-ops instead of
                    // amplifying into an equally large bundle of resends.
                    let new_next = (ack_idx + 1).min(self.last_idx() + 1).max(1);
                    if new_next != self.next_idx[from] {
                        self.next_idx[from] = new_next;
                        self.send_append(from, out);
                    }
                }
            }
            Message::RequestVote { term, last_log_idx, last_log_term, forced } => {
                let up_to_date = self.candidate_up_to_date(last_log_idx, last_log_term);
                let grant = term == self.current_term
                    && (self.voted_for.is_none() || self.voted_for == Some(from))
                    && up_to_date;
                if grant {
                    self.voted_for = Some(from);
                    self.arm_election(now, rng, out);
                }
                out.push(Action::Send {
                    to: from,
                    msg: Message::VoteReply { term: self.current_term, granted: grant },
                });
                if forced && !up_to_date && term >= self.current_term {
                    // A forced candidate this leader just refused for log
                    // lag cannot win until someone repairs its log, and its
                    // term-bumping retries keep deposing whoever tries.
                    // Yield on purpose: take leadership straight back, feed
                    // it the missing entries, and hold new proposals still
                    // until it takes over (or the deadline passes).
                    if was_leader_at_entry && self.role != Role::Leader {
                        self.yield_to = Some(from);
                        self.yield_deadline_ms =
                            now + 2.0 * self.timing.election_timeout_max_ms;
                        self.start_candidacy(now, rng, out, false);
                    } else if self.role == Role::Leader {
                        // We already lead the very term it solicited, so no
                        // re-election is needed: hold proposals and let the
                        // ongoing feed repair it.
                        self.yield_to = Some(from);
                        self.yield_deadline_ms =
                            now + 2.0 * self.timing.election_timeout_max_ms;
                    }
                }
            }
            Message::VoteReply { term, granted } => {
                if self.role != Role::Candidate || term != self.current_term || !granted {
                    return;
                }
                self.votes.insert(from);
                if self.votes.len() >= self.majority() {
                    self.become_leader(now, out);
                }
            }
            Message::ClientForward { request } => {
                if self.role == Role::Leader {
                    self.leader_ingest(request, now, out);
                    self.broadcast_appends(out);
                }
                // Non-leaders drop forwards; the source resubmits on the
                // next leader change it observes.
            }
            Message::CommitNotice { term, commit_idx } => {
                if term != self.current_term {
                    return;
                }
                self.observe_leader(from, now, out);
                // A notice carries no log-matching proof, so it can only
                // commit through the prefix already verified by appends.
                let new_commit = commit_idx.min(self.verified_match);
                if new_commit > self.commit_idx {
                    self.advance_commit_to(new_commit, now, out);
                }
            }
        }
    }

    fn candidate_up_to_date(&self, last_log_idx: usize, last_log_term: u64) -> bool {
        let my_term = self.term_at(self.last_idx());
        last_log_term > my_term || (last_log_term == my_term && last_log_idx >= self.last_idx())
    }

    /// Adopts a higher term and reverts to follower.
    fn step_down_to(&mut self, term: u64, now: f64, rng: &mut ChaCha20Rng, out: &mut Vec<Action>) {
        let was_leader = self.role == Role::Leader;
        self.current_term = term;
        self.voted_for = None;
        self.role = Role::Follower;
        self.votes.clear();
        self.known_leader = None;
        self.verified_match = 0;
        // Any leadership transfer this replica was conducting is over; the
        // held requests stay pending at their sources, which re-forward
        // them to whoever leads next.
        self.yield_to = None;
        self.held_requests.clear();
        // A forced candidacy trumped by a higher term stays forced; the
        // retry timer will bump past it.
        if was_leader {
            self.heartbeat_gen += 1;
            out.push(Action::SteppedDown { term });
            // Leaders run no election timer; restore one so a deposed leader
            // can reclaim leadership if nobody else steps up. Followers and
            // candidates keep their existing timers: resetting them here
            // would let a candidate that can never win (e.g. one forced with
            // a lagging log) suppress everyone else's timeouts indefinitely.
            self.arm_election(now, rng, out);
        }
    }

    /// Records the current term's leader and, when it changed, re-forwards
    /// every pending request (the new leader deduplicates).
    fn observe_leader(&mut self, leader: usize, now: f64, out: &mut Vec<Action>) {
        if self.known_leader == Some(leader) {
            return;
        }
        self.known_leader = Some(leader);
        let pending: Vec<Request> = self.pending.values().map(|(r, _)| *r).collect();
        for r in pending {
            self.forward_request(r, now, out);
        }
    }

    fn forward_request(&mut self, request: Request, now: f64, out: &mut Vec<Action>) {
        match self.known_leader {
            Some(l) if l == self.id => {
                debug_assert_eq!(self.role, Role::Leader);
                self.leader_ingest(request, now, out);
                self.broadcast_appends(out);
            }
            Some(l) => out.push(Action::Send { to: l, msg: Message::ClientForward { request } }),
            // Leader unknown: stays buffered in `pending` until one appears.
            None => {}
        }
    }

    /// Leader commit rule: advance to the largest majority-replicated index
    /// whose entry is from the current term.
    fn advance_leader_commit(&mut self, now: f64, out: &mut Vec<Action>) {
        debug_assert_eq!(self.role, Role::Leader);
        let mut n = self.last_idx();
        while n > self.commit_idx {
            let replicated = (0..self.n).filter(|&p| self.match_idx[p] >= n).count();
            if replicated >= self.majority() && self.term_at(n) == self.current_term {
                break;
            }
            n -= 1;
        }
        if n > self.commit_idx {
            self.advance_commit_to(n, now, out);
            for peer in 0..self.n {
                if peer != self.id {
                    out.push(Action::Send {
                        to: peer,
                        msg: Message::CommitNotice {
                            term: self.current_term,
                            commit_idx: self.commit_idx,
                        },
                    });
                }
            }
        }
    }

    fn advance_commit_to(&mut self, new_commit: usize, now: f64, out: &mut Vec<Action>) {
        let old = self.commit_idx;
        self.commit_idx = new_commit;
        for idx in old + 1..=new_commit {
            let entry = self.log[idx - 1];
            out.push(Action::Committed { idx, entry });
            if let Some(req) = entry.request {
                if req.source == self.id {
                    if let Some((_, origin_ts)) = self.pending.remove(&req.id) {
                        out.push(Action::CommitDelay {
                            request: req,
                            origin_ts,
                            delay_ms: now - origin_ts,
                            entry_term: entry.term,
                        });
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha20Rng {
        crate::derive_rng(99, "raft-test")
    }

    fn cluster(n: usize) -> Vec<Replica> {
        (0..n).map(|i| Replica::new(i, n, RaftTiming::default())).collect()
    }

    fn step(r: &mut Replica, now: f64, input: Input, rng: &mut ChaCha20Rng) -> Vec<Action> {
        r.handle(now, input, rng)
    }

    /// Delivers messages between replicas instantly (no network) until
    /// quiescent. Timers are NOT fired; returns all non-Send actions.
    fn settle(replicas: &mut [Replica], initial: Vec<(usize, usize, Message)>, now: f64) -> Vec<(usize, Action)> {
        let mut rng = rng();
        let mut queue: std::collections::VecDeque<(usize, usize, Message)> = initial.into();
        let mut effects = Vec::new();
        let mut budget = 100_000;
        while let Some((from, to, msg)) = queue.pop_front() {
            budget -= 1;
            assert!(budget > 0, "message storm");
            let acts = step(&mut replicas[to], now, Input::Deliver { from, msg }, &mut rng);
            for a in acts {
                match a {
                    Action::Send { to: nxt, msg } => queue.push_back((to, nxt, msg)),
                    other => effects.push((to, other)),
                }
            }
        }
        effects
    }

    fn sends(actions: &[Action]) -> Vec<(usize, Message)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send { to, msg } => Some((*to, msg.clone())),
                _ => None,
            })
            .collect()
    }

    /// Promotes replica `id` to leader by timing it out and delivering the
    /// election exchange instantly.
    fn elect(replicas: &mut [Replica], id: usize, now: f64) -> Vec<(usize, Action)> {
        let mut rng = rng();
        let gen = replicas[id].election_gen + 1;
        replicas[id].election_gen = gen; // simulate the timer we skipped arming
        let acts = step(
            &mut replicas[id],
            now,
            Input::Timer { kind: TimerKind::Election, gen },
            &mut rng,
        );
        let init: Vec<(usize, usize, Message)> =
            sends(&acts).into_iter().map(|(to, m)| (id, to, m)).collect();
        settle(replicas, init, now)
    }

    #[test]
    fn timeout_starts_candidacy_with_term_bump() {
        let mut rng = rng();
        let mut r = Replica::new(0, 3, RaftTiming::default());
        let acts = r.start(0.0, &mut rng);
        let (gen, at) = match acts[0] {
            Action::Arm { kind: TimerKind::Election, gen, at } => (gen, at),
            _ => panic!("expected election arm"),
        };
        assert!((150.0..300.0).contains(&at));
        let acts = step(&mut r, at, Input::Timer { kind: TimerKind::Election, gen }, &mut rng);
        assert_eq!(r.role, Role::Candidate);
        assert_eq!(r.current_term, 1);
        let vote_requests = sends(&acts);
        assert_eq!(vote_requests.len(), 2);
        for (_, m) in vote_requests {
            assert!(matches!(m, Message::RequestVote { term: 1, .. }));
        }
    }

    #[test]
    fn stale_timer_generation_is_ignored() {
        let mut rng = rng();
        let mut r = Replica::new(0, 3, RaftTiming::default());
        r.start(0.0, &mut rng);
        let acts = step(&mut r, 10.0, Input::Timer { kind: TimerKind::Election, gen: 0 }, &mut rng);
        assert!(acts.is_empty());
        assert_eq!(r.role, Role::Follower);
    }

    #[test]
    fn majority_elects_a_leader_which_appends_noop() {
        let mut c = cluster(3);
        let effects = elect(&mut c, 1, 200.0);
        assert_eq!(c[1].role, Role::Leader);
        assert!(effects.iter().any(|(id, a)| *id == 1 && matches!(a, Action::BecameLeader { term: 1 })));
        assert_eq!(c[1].last_idx(), 1);
        assert_eq!(c[1].log_view()[0], LogEntry { term: 1, request: None });
        // Followers saw the append and the no-op committed everywhere.
        assert_eq!(c[0].known_leader, Some(1));
        assert_eq!(c[2].known_leader, Some(1));
        assert_eq!(c[1].commit_idx, 1);
    }

    #[test]
    fn vote_denied_to_stale_log() {
        let mut c = cluster(3);
        elect(&mut c, 0, 200.0);
        // Replica 2 has an empty log; replica 1 holds term-1 no-op.
        let mut rng = rng();
        let acts = step(
            &mut c[1],
            500.0,
            Input::Deliver {
                from: 2,
                msg: Message::RequestVote { term: 5, last_log_idx: 0, last_log_term: 0, forced: false },
            },
            &mut rng,
        );
        let replies = sends(&acts);
        assert!(matches!(
            replies[0].1,
            Message::VoteReply { term: 5, granted: false }
        ));
    }

    #[test]
    fn replica_votes_once_per_term() {
        let mut c = cluster(3);
        let mut rng = rng();
        let rv = |term| Message::RequestVote { term, last_log_idx: 0, last_log_term: 0, forced: false };
        let acts = step(&mut c[0], 1.0, Input::Deliver { from: 1, msg: rv(3) }, &mut rng);
        assert!(matches!(sends(&acts)[0].1, Message::VoteReply { granted: true, .. }));
        let acts = step(&mut c[0], 2.0, Input::Deliver { from: 2, msg: rv(3) }, &mut rng);
        assert!(matches!(sends(&acts)[0].1, Message::VoteReply { granted: false, .. }));
        // Same candidate asking again (retry) is re-granted.
        let acts = step(&mut c[0], 3.0, Input::Deliver { from: 1, msg: rv(3) }, &mut rng);
        assert!(matches!(sends(&acts)[0].1, Message::VoteReply { granted: true, .. }));
    }

    #[test]
    fn client_request_commits_and_measures_delay() {
        let mut c = cluster(3);
        elect(&mut c, 0, 200.0);
        let mut rng = rng();
        let req = Request { id: 7, source: 2, command: (3, 4) };
        // Arrival at source 2, already knowing leader 0.
        let acts = step(&mut c[2], 300.0, Input::ClientArrival { request: req, origin_ts: 300.0 }, &mut rng);
        let fwd = sends(&acts);
        assert_eq!(fwd.len(), 1);
        assert_eq!(fwd[0].0, 0);
        let effects = settle(&mut c, vec![(2, 0, fwd[0].1.clone())], 310.0);
        let delays: Vec<_> = effects
            .iter()
            .filter_map(|(id, a)| match a {
                Action::CommitDelay { request, delay_ms, .. } => Some((*id, request.id, *delay_ms)),
                _ => None,
            })
            .collect();
        assert_eq!(delays, vec![(2, 7, 10.0)]);
        assert_eq!(c[2].pending_count(), 0);
        for r in &c {
            assert_eq!(r.commit_idx, 2);
        }
    }

    #[test]
    fn arrival_buffers_until_leader_known() {
        let mut c = cluster(3);
        let mut rng = rng();
        let req = Request { id: 1, source: 0, command: (0, 0) };
        let acts = step(&mut c[0], 10.0, Input::ClientArrival { request: req, origin_ts: 10.0 }, &mut rng);
        assert!(sends(&acts).is_empty(), "no leader yet: must buffer");
        assert_eq!(c[0].pending_count(), 1);
        // Leadership appears; the buffered request flows out.
        let effects = elect(&mut c, 1, 200.0);
        let committed: Vec<_> = effects
            .iter()
            .filter_map(|(id, a)| match a {
                Action::CommitDelay { request, .. } if *id == 0 => Some(request.id),
                _ => None,
            })
            .collect();
        assert_eq!(committed, vec![1]);
    }

    #[test]
    fn leader_dedupes_reforwarded_requests() {
        let mut c = cluster(3);
        elect(&mut c, 0, 200.0);
        let req = Request { id: 42, source: 1, command: (1, 2) };
        settle(&mut c, vec![(1, 0, Message::ClientForward { request: req })], 300.0);
        let before = c[0].last_idx();
        settle(&mut c, vec![(1, 0, Message::ClientForward { request: req })], 301.0);
        assert_eq!(c[0].last_idx(), before, "duplicate forward must not append");
    }

    #[test]
    fn force_candidacy_deposes_incumbent() {
        let mut c = cluster(3);
        elect(&mut c, 0, 200.0);
        let mut rng = rng();
        let acts = step(&mut c[2], 400.0, Input::ForceCandidacy { token: 1 }, &mut rng);
        assert_eq!(c[2].role, Role::Candidate);
        assert_eq!(c[2].current_term, 2);
        let init: Vec<_> = sends(&acts).into_iter().map(|(to, m)| (2, to, m)).collect();
        let effects = settle(&mut c, init, 400.0);
        assert_eq!(c[2].role, Role::Leader);
        assert!(effects.iter().any(|(id, a)| *id == 0 && matches!(a, Action::SteppedDown { .. })));
        assert!(effects.iter().any(|(id, a)| *id == 2 && matches!(a, Action::BecameLeader { term: 2 })));
    }

    #[test]
    fn force_retry_rebumps_term_until_cancelled() {
        let mut c = cluster(3);
        elect(&mut c, 0, 200.0);
        let mut rng = rng();
        // Force replica 1 but never deliver its vote requests.
        let acts = step(&mut c[1], 400.0, Input::ForceCandidacy { token: 9 }, &mut rng);
        let retry = acts.iter().find_map(|a| match a {
            Action::Arm { kind: TimerKind::ForceRetry, gen, at } => Some((*gen, *at)),
            _ => None,
        });
        let (gen, at) = retry.expect("forced candidacy arms retry");
        assert_eq!(at, 550.0);
        assert_eq!(c[1].current_term, 2);
        let acts = step(&mut c[1], at, Input::Timer { kind: TimerKind::ForceRetry, gen }, &mut rng);
        assert_eq!(c[1].current_term, 3, "retry must bump the term");
        assert_eq!(sends(&acts).len(), 2);
        // Cancellation reverts to follower, keeping the inflated term.
        step(&mut c[1], 700.0, Input::CancelCandidacy { token: 9 }, &mut rng);
        assert_eq!(c[1].role, Role::Follower);
        assert_eq!(c[1].current_term, 3);
    }

    #[test]
    fn force_rounds_hold_on_a_live_feed_and_resume_on_an_idle_heartbeat() {
        let mut c = cluster(3);
        let mut rng = rng();
        // Replica 1 is forced but its solicitations go nowhere.
        let acts = step(&mut c[1], 400.0, Input::ForceCandidacy { token: 9 }, &mut rng);
        let (gen, at) = acts
            .iter()
            .find_map(|a| match a {
                Action::Arm { kind: TimerKind::ForceRetry, gen, at } => Some((*gen, *at)),
                _ => None,
            })
            .expect("forced candidacy arms retry");
        // A higher-term leader starts repairing its log: the append carries
        // a commit index past what this batch verifies, i.e. more is coming.
        let e = |term| LogEntry { term, request: None };
        step(
            &mut c[1],
            500.0,
            Input::Deliver {
                from: 0,
                msg: Message::AppendEntries {
                    term: 7,
                    prev_idx: 0,
                    prev_term: 0,
                    entries: vec![e(7)],
                    leader_commit: 2,
                },
            },
            &mut rng,
        );
        assert_eq!(c[1].role, Role::Follower);
        // The retry fires mid-repair: it must hold (no term bump, no votes)
        // and re-arm itself instead.
        let acts = step(&mut c[1], at, Input::Timer { kind: TimerKind::ForceRetry, gen }, &mut rng);
        assert_eq!(c[1].current_term, 7, "holding retry must not bump the term");
        assert!(sends(&acts).iter().all(|(_, m)| !matches!(m, Message::RequestVote { .. })));
        let (gen2, at2) = acts
            .iter()
            .find_map(|a| match a {
                Action::Arm { kind: TimerKind::ForceRetry, gen, at } => Some((*gen, *at)),
                _ => None,
            })
            .expect("held retry re-arms");
        // The rest of the repair lands; a non-idle append alone does not
        // restart the candidacy, because more could still be in flight.
        step(
            &mut c[1],
            at2 - 20.0,
            Input::Deliver {
                from: 0,
                msg: Message::AppendEntries {
                    term: 7,
                    prev_idx: 1,
                    prev_term: 7,
                    entries: vec![e(7)],
                    leader_commit: 2,
                },
            },
            &mut rng,
        );
        assert_eq!(c[1].current_term, 7);
        assert_eq!(c[1].role, Role::Follower);
        // An idle heartbeat at the log tip proves the feed has gone quiet:
        // the candidacy resumes on the spot with a winnable log.
        let acts = step(
            &mut c[1],
            at2 - 10.0,
            Input::Deliver {
                from: 0,
                msg: Message::AppendEntries {
                    term: 7,
                    prev_idx: 2,
                    prev_term: 7,
                    entries: vec![],
                    leader_commit: 2,
                },
            },
            &mut rng,
        );
        assert_eq!(c[1].current_term, 8, "caught-up candidacy solicits again");
        assert_eq!(c[1].role, Role::Candidate);
        assert!(sends(&acts)
            .iter()
            .any(|(_, m)| matches!(m, Message::RequestVote { forced: true, .. })));
        // The superseded retry timer is a stale generation now.
        let acts = step(&mut c[1], at2, Input::Timer { kind: TimerKind::ForceRetry, gen: gen2 }, &mut rng);
        assert!(acts.is_empty());
    }

    #[test]
    fn force_retry_resumes_when_the_repair_feed_dies() {
        let mut c = cluster(3);
        let mut rng = rng();
        step(&mut c[1], 400.0, Input::ForceCandidacy { token: 9 }, &mut rng);
        // Mid-repair append, then the leader goes silent.
        let e = |term| LogEntry { term, request: None };
        step(
            &mut c[1],
            500.0,
            Input::Deliver {
                from: 0,
                msg: Message::AppendEntries {
                    term: 7,
                    prev_idx: 0,
                    prev_term: 0,
                    entries: vec![e(7)],
                    leader_commit: 2,
                },
            },
            &mut rng,
        );
        // Far past the feed's last sign of life, the retry proceeds even
        // though the log still looks behind.
        let gen = c[1].force_gen;
        step(&mut c[1], 900.0, Input::Timer { kind: TimerKind::ForceRetry, gen }, &mut rng);
        assert_eq!(c[1].role, Role::Candidate);
        assert_eq!(c[1].current_term, 8);
    }

    #[test]
    fn a_nacked_append_also_holds_the_force_retry() {
        let mut c = cluster(3);
        let mut rng = rng();
        let acts = step(&mut c[1], 400.0, Input::ForceCandidacy { token: 9 }, &mut rng);
        let (gen, at) = acts
            .iter()
            .find_map(|a| match a {
                Action::Arm { kind: TimerKind::ForceRetry, gen, at } => Some((*gen, *at)),
                _ => None,
            })
            .expect("forced candidacy arms retry");
        // A live leader probes with log this replica lacks; the nack alone
        // proves a repair batch is on its way.
        let e = |term| LogEntry { term, request: None };
        let acts = step(
            &mut c[1],
            500.0,
            Input::Deliver {
                from: 0,
                msg: Message::AppendEntries {
                    term: 7,
                    prev_idx: 3,
                    prev_term: 7,
                    entries: vec![],
                    leader_commit: 3,
                },
            },
            &mut rng,
        );
        assert!(sends(&acts)
            .iter()
            .any(|(_, m)| matches!(m, Message::AppendAck { success: false, .. })));
        // The retry fires before the repair lands: it must hold.
        let acts = step(&mut c[1], at, Input::Timer { kind: TimerKind::ForceRetry, gen }, &mut rng);
        assert_eq!(c[1].current_term, 7, "holding retry must not bump the term");
        let (gen2, at2) = acts
            .iter()
            .find_map(|a| match a {
                Action::Arm { kind: TimerKind::ForceRetry, gen, at } => Some((*gen, *at)),
                _ => None,
            })
            .expect("held retry re-arms");
        // The repair lands in one batch covering everything committed, then
        // an idle heartbeat proves the feed is quiet: the candidacy resumes
        // with a now-complete log.
        step(
            &mut c[1],
            at2 - 20.0,
            Input::Deliver {
                from: 0,
                msg: Message::AppendEntries {
                    term: 7,
                    prev_idx: 0,
                    prev_term: 0,
                    entries: vec![e(7), e(7), e(7)],
                    leader_commit: 3,
                },
            },
            &mut rng,
        );
        assert_eq!(c[1].current_term, 7, "a batch landing is not yet a quiet feed");
        step(
            &mut c[1],
            at2 - 10.0,
            Input::Deliver {
                from: 0,
                msg: Message::AppendEntries {
                    term: 7,
                    prev_idx: 3,
                    prev_term: 7,
                    entries: vec![],
                    leader_commit: 3,
                },
            },
            &mut rng,
        );
        assert_eq!(c[1].current_term, 8, "caught-up candidacy solicits again");
        assert_eq!(c[1].role, Role::Candidate);
        let acts = step(&mut c[1], at2, Input::Timer { kind: TimerKind::ForceRetry, gen: gen2 }, &mut rng);
        assert!(acts.is_empty(), "the superseded retry generation is stale");
    }

    #[test]
    fn a_refused_forced_vote_makes_the_leader_yield_until_the_target_wins() {
        let mut c = cluster(3);
        elect(&mut c, 0, 200.0);
        let mut rng = rng();
        // Grow the leader's log by one entry that only replica 2 receives,
        // leaving replica 1 behind.
        let req7 = Request { id: 7, source: 0, command: (0, 0) };
        let acts = step(
            &mut c[0],
            300.0,
            Input::ClientArrival { request: req7, origin_ts: 300.0 },
            &mut rng,
        );
        for (to, m) in sends(&acts) {
            if to == 2 {
                step(&mut c[2], 305.0, Input::Deliver { from: 0, msg: m }, &mut rng);
            }
        }
        assert_eq!(c[1].last_idx(), 1);
        assert_eq!(c[0].last_idx(), 2);
        // Force the lagging replica; its solicitation reaches the leader.
        let acts = step(&mut c[1], 400.0, Input::ForceCandidacy { token: 9 }, &mut rng);
        let rv_to_0 = sends(&acts).into_iter().find(|(to, _)| *to == 0).unwrap().1;
        let acts0 = step(&mut c[0], 410.0, Input::Deliver { from: 1, msg: rv_to_0 }, &mut rng);
        // The leader refuses the lagging candidate and immediately runs for
        // the term above it to conduct the hand-over.
        assert!(sends(&acts0)
            .iter()
            .any(|(to, m)| *to == 1 && matches!(m, Message::VoteReply { granted: false, .. })));
        assert_eq!(c[0].role, Role::Candidate);
        assert_eq!(c[0].current_term, 3);
        assert_eq!(c[0].yield_to, Some(1));
        let rv_to_2 = sends(&acts0)
            .into_iter()
            .find(|(to, m)| *to == 2 && matches!(m, Message::RequestVote { forced: false, .. }))
            .expect("self re-election solicits")
            .1;
        let acts2 = step(&mut c[2], 420.0, Input::Deliver { from: 0, msg: rv_to_2 }, &mut rng);
        let reply = sends(&acts2).into_iter().find(|(to, _)| *to == 0).unwrap().1;
        let acts0 = step(&mut c[0], 430.0, Input::Deliver { from: 2, msg: reply }, &mut rng);
        assert_eq!(c[0].role, Role::Leader);
        assert_eq!(c[0].current_term, 3);
        // While the transfer is on, new proposals are parked, keeping the
        // log still.
        let req8 = Request { id: 8, source: 0, command: (0, 0) };
        let before = c[0].last_idx();
        step(&mut c[0], 440.0, Input::ClientArrival { request: req8, origin_ts: 440.0 }, &mut rng);
        assert_eq!(c[0].last_idx(), before, "proposals are held during the transfer");
        assert_eq!(c[0].held_requests.len(), 1);
        // The re-elected leader probes replica 1, gets the walk-back hint,
        // and resends the missing suffix.
        let probe = sends(&acts0).into_iter().find(|(to, _)| *to == 1).unwrap().1;
        let acts1 = step(&mut c[1], 445.0, Input::Deliver { from: 0, msg: probe }, &mut rng);
        let nack = sends(&acts1).into_iter().find(|(to, _)| *to == 0).unwrap().1;
        let acts0 = step(&mut c[0], 450.0, Input::Deliver { from: 1, msg: nack }, &mut rng);
        let repair = sends(&acts0).into_iter().find(|(to, _)| *to == 1).unwrap().1;
        let acts1 = step(&mut c[1], 455.0, Input::Deliver { from: 0, msg: repair }, &mut rng);
        assert_eq!(c[1].last_idx(), c[0].last_idx(), "repair caught the target up");
        assert_eq!(c[1].current_term, 3, "a repair batch alone starts no round");
        let ack = sends(&acts1).into_iter().find(|(to, _)| *to == 0).unwrap().1;
        step(&mut c[0], 460.0, Input::Deliver { from: 1, msg: ack }, &mut rng);
        // The next heartbeat is idle (the log is held still); the target
        // solicits on it and wins with every vote.
        let hb_gen = c[0].heartbeat_gen;
        let acts0 = step(
            &mut c[0],
            480.0,
            Input::Timer { kind: TimerKind::Heartbeat, gen: hb_gen },
            &mut rng,
        );
        let idle = sends(&acts0)
            .into_iter()
            .find(|(to, m)| {
                *to == 1
                    && matches!(m, Message::AppendEntries { entries, .. } if entries.is_empty())
            })
            .expect("idle heartbeat to the caught-up target")
            .1;
        let acts1 = step(&mut c[1], 490.0, Input::Deliver { from: 0, msg: idle }, &mut rng);
        assert_eq!(c[1].role, Role::Candidate);
        assert_eq!(c[1].current_term, 4, "the quiet feed restarts the candidacy");
        let effects = settle(
            &mut c,
            sends(&acts1).into_iter().map(|(to, m)| (1, to, m)).collect(),
            500.0,
        );
        assert!(effects
            .iter()
            .any(|(id, a)| *id == 1 && matches!(a, Action::BecameLeader { term: 4 })));
        assert_eq!(c[1].role, Role::Leader);
        // The old leader's parked request survives: its source re-forwarded
        // it to the new leader, which has it in the log.
        assert!(c[1].log_view().iter().any(|e| e.request.map(|r| r.id) == Some(8)));
        assert!(c[0].held_requests.is_empty());
    }

    #[test]
    fn a_stalled_transfer_resumes_proposing_at_the_deadline() {
        let mut c = cluster(3);
        elect(&mut c, 0, 200.0);
        let mut rng = rng();
        // Leave replica 1 behind and force it, so the leader yields.
        let req7 = Request { id: 7, source: 0, command: (0, 0) };
        step(&mut c[0], 300.0, Input::ClientArrival { request: req7, origin_ts: 300.0 }, &mut rng);
        let acts = step(&mut c[1], 400.0, Input::ForceCandidacy { token: 9 }, &mut rng);
        let rv_to_0 = sends(&acts).into_iter().find(|(to, _)| *to == 0).unwrap().1;
        let acts0 = step(&mut c[0], 410.0, Input::Deliver { from: 1, msg: rv_to_0 }, &mut rng);
        let rv_to_2 = sends(&acts0).into_iter().find(|(to, _)| *to == 2).unwrap().1;
        let acts2 = step(&mut c[2], 420.0, Input::Deliver { from: 0, msg: rv_to_2 }, &mut rng);
        let reply = sends(&acts2).into_iter().find(|(to, _)| *to == 0).unwrap().1;
        step(&mut c[0], 430.0, Input::Deliver { from: 2, msg: reply }, &mut rng);
        assert_eq!(c[0].role, Role::Leader);
        assert_eq!(c[0].yield_to, Some(1));
        let req8 = Request { id: 8, source: 0, command: (0, 0) };
        step(&mut c[0], 440.0, Input::ClientArrival { request: req8, origin_ts: 440.0 }, &mut rng);
        assert!(c[0].held_requests.iter().any(|r| r.id == 8));
        // The target never takes over (say it was cancelled); at the
        // deadline the next heartbeat gives up and flushes the backlog.
        let hb_gen = c[0].heartbeat_gen;
        let past_deadline = 410.0 + 2.0 * c[0].timing.election_timeout_max_ms + 1.0;
        let acts0 = step(
            &mut c[0],
            past_deadline,
            Input::Timer { kind: TimerKind::Heartbeat, gen: hb_gen },
            &mut rng,
        );
        assert_eq!(c[0].yield_to, None);
        assert!(c[0].held_requests.is_empty());
        assert!(c[0].log_view().iter().any(|e| e.request.map(|r| r.id) == Some(8)));
        assert!(sends(&acts0)
            .iter()
            .any(|(_, m)| matches!(m, Message::AppendEntries { entries, .. } if !entries.is_empty())));
    }

    #[test]
    fn cancel_with_wrong_token_is_ignored() {
        let mut c = cluster(3);
        let mut rng = rng();
        step(&mut c[1], 100.0, Input::ForceCandidacy { token: 5 }, &mut rng);
        step(&mut c[1], 110.0, Input::CancelCandidacy { token: 4 }, &mut rng);
        assert_eq!(c[1].role, Role::Candidate);
    }

    #[test]
    fn deposed_leader_truncates_conflicting_suffix() {
        let mut c = cluster(3);
        elect(&mut c, 0, 200.0);
        let mut rng = rng();
        // Leader 0 appends an entry it can never replicate (peers ignored).
        let orphan = Request { id: 100, source: 0, command: (0, 0) };
        step(&mut c[0], 300.0, Input::ClientArrival { request: orphan, origin_ts: 300.0 }, &mut rng);
        assert_eq!(c[0].last_idx(), 2);
        // Replica 1 wins a fresh election and replicates its own log.
        let effects = elect(&mut c, 1, 500.0);
        assert_eq!(c[1].role, Role::Leader);
        // The term-1 orphan is truncated; the request survives only as a
        // re-forwarded term-2 entry.
        assert_eq!(c[0].log_view(), c[1].log_view());
        let occurrences: Vec<u64> = c[0]
            .log_view()
            .iter()
            .filter(|e| e.request.map(|r| r.id) == Some(100))
            .map(|e| e.term)
            .collect();
        assert_eq!(occurrences, vec![2]);
        // The orphan request is still pending at its source and was
        // re-forwarded to the new leader on observation... source is 0.
        let recommitted: Vec<_> = effects
            .iter()
            .filter_map(|(id, a)| match a {
                Action::CommitDelay { request, .. } if *id == 0 => Some(request.id),
                _ => None,
            })
            .collect();
        assert_eq!(recommitted, vec![100], "orphan must recommit under the new leader");
    }

    #[test]
    fn commit_waits_for_majority() {
        let mut c = cluster(5);
        elect(&mut c, 0, 200.0);
        let mut rng = rng();
        let req = Request { id: 1, source: 0, command: (0, 0) };
        let acts = step(&mut c[0], 300.0, Input::ClientArrival { request: req, origin_ts: 300.0 }, &mut rng);
        let outgoing = sends(&acts);
        assert_eq!(c[0].commit_idx, 1, "only the no-op is committed");
        // Deliver the append to a single follower: 2/5 is not a majority.
        let (to, msg) = outgoing[0].clone();
        let back = step(&mut c[to], 310.0, Input::Deliver { from: 0, msg }, &mut rng);
        let ack = sends(&back)[0].1.clone();
        step(&mut c[0], 320.0, Input::Deliver { from: to, msg: ack }, &mut rng);
        assert_eq!(c[0].commit_idx, 1);
        // Second follower acks: 3/5 commits.
        let (to2, msg2) = outgoing[1].clone();
        let back2 = step(&mut c[to2], 330.0, Input::Deliver { from: 0, msg: msg2 }, &mut rng);
        let ack2 = sends(&back2)[0].1.clone();
        let acts = step(&mut c[0], 340.0, Input::Deliver { from: to2, msg: ack2 }, &mut rng);
        assert_eq!(c[0].commit_idx, 2);
        // Commit notices go to everyone else.
        let notices = sends(&acts)
            .iter()
            .filter(|(_, m)| matches!(m, Message::CommitNotice { .. }))
            .count();
        assert_eq!(notices, 4);
    }

    #[test]
    fn single_replica_cluster_self_elects_and_commits() {
        let mut rng = rng();
        let mut r = Replica::new(0, 1, RaftTiming::default());
        let acts = r.start(0.0, &mut rng);
        let (gen, at) = match acts[0] {
            Action::Arm { kind: TimerKind::Election, gen, at } => (gen, at),
            _ => panic!(),
        };
        step(&mut r, at, Input::Timer { kind: TimerKind::Election, gen }, &mut rng);
        assert_eq!(r.role, Role::Leader);
        let req = Request { id: 1, source: 0, command: (0, 0) };
        let acts = step(&mut r, 400.0, Input::ClientArrival { request: req, origin_ts: 400.0 }, &mut rng);
        assert!(acts.iter().any(|a| matches!(a, Action::CommitDelay { .. })));
        assert_eq!(r.commit_idx, 2);
    }

    #[test]
    fn heartbeat_timer_reissues_appends() {
        let mut c = cluster(3);
        let effects = elect(&mut c, 0, 200.0);
        let hb = effects.iter().find_map(|(id, a)| match a {
            Action::Arm { kind: TimerKind::Heartbeat, gen, at } if *id == 0 => Some((*gen, *at)),
            _ => None,
        });
        let (gen, at) = hb.expect("leader arms heartbeat");
        let mut rng = rng();
        let acts = step(&mut c[0], at, Input::Timer { kind: TimerKind::Heartbeat, gen }, &mut rng);
        let hbs = sends(&acts);
        assert_eq!(hbs.len(), 2);
        for (_, m) in &hbs {
            match m {
                Message::AppendEntries { entries, .. } => assert!(entries.is_empty()),
                other => panic!("expected heartbeat, got {other:?}"),
            }
        }
        // And re-arms itself.
        assert!(acts.iter().any(|a| matches!(a, Action::Arm { kind: TimerKind::Heartbeat, .. })));
    }

    /// A follower holding an unverified stale suffix must not commit it just
    /// because a heartbeat's leader_commit covers those indexes: only the
    /// prefix the append actually verified may commit.
    #[test]
    fn heartbeat_cannot_commit_an_unverified_suffix() {
        let mut rng = rng();
        let mut f = Replica::new(1, 3, RaftTiming::default());
        let stale = Request { id: 50, source: 1, command: (9, 9) };
        f.log.push(LogEntry { term: 1, request: None });
        f.log.push(LogEntry { term: 1, request: Some(stale) }); // never replicated
        f.current_term = 2;
        // Heartbeat verifying only index 1, but claiming commit through 2.
        let hb = Message::AppendEntries {
            term: 2,
            prev_idx: 1,
            prev_term: 1,
            entries: vec![],
            leader_commit: 2,
        };
        let acts = step(&mut f, 100.0, Input::Deliver { from: 0, msg: hb }, &mut rng);
        let committed: Vec<usize> = acts
            .iter()
            .filter_map(|a| match a {
                Action::Committed { idx, .. } => Some(*idx),
                _ => None,
            })
            .collect();
        assert_eq!(committed, vec![1], "only the verified prefix commits");
        assert_eq!(f.commit_idx, 1);
        // The real entry for index 2 arrives and overwrites the leftover.
        let fresh = Request { id: 60, source: 0, command: (1, 1) };
        let append = Message::AppendEntries {
            term: 2,
            prev_idx: 1,
            prev_term: 1,
            entries: vec![LogEntry { term: 2, request: Some(fresh) }],
            leader_commit: 2,
        };
        let acts = step(&mut f, 110.0, Input::Deliver { from: 0, msg: append }, &mut rng);
        let entry = acts
            .iter()
            .find_map(|a| match a {
                Action::Committed { idx: 2, entry } => Some(*entry),
                _ => None,
            })
            .expect("index 2 commits once verified");
        assert_eq!(entry.request.unwrap().id, 60, "the overwrite wins, not the leftover");
    }

    /// CommitNotice carries no log-matching proof, so it can only commit
    /// through the prefix already verified by appends in this term.
    #[test]
    fn commit_notice_is_gated_on_the_verified_prefix() {
        let mut rng = rng();
        let mut f = Replica::new(2, 3, RaftTiming::default());
        f.log.push(LogEntry { term: 1, request: None });
        f.log.push(LogEntry { term: 1, request: Some(Request { id: 7, source: 2, command: (0, 0) }) });
        f.current_term = 3;
        let acts = step(
            &mut f,
            100.0,
            Input::Deliver { from: 0, msg: Message::CommitNotice { term: 3, commit_idx: 2 } },
            &mut rng,
        );
        assert!(
            !acts.iter().any(|a| matches!(a, Action::Committed { .. })),
            "nothing verified in term 3 yet, nothing may commit"
        );
        assert_eq!(f.commit_idx, 0);
        // A verifying append (here matching the whole log) unlocks the notice.
        let hb = Message::AppendEntries {
            term: 3,
            prev_idx: 2,
            prev_term: 1,
            entries: vec![],
            leader_commit: 0,
        };
        step(&mut f, 110.0, Input::Deliver { from: 0, msg: hb }, &mut rng);
        let acts = step(
            &mut f,
            120.0,
            Input::Deliver { from: 0, msg: Message::CommitNotice { term: 3, commit_idx: 2 } },
            &mut rng,
        );
        assert_eq!(f.commit_idx, 2);
        assert_eq!(
            acts.iter().filter(|a| matches!(a, Action::Committed { .. })).count(),
            2
        );
    }
}
