//! The logically centralized elector: ranks replicas by predicted commit
//! delay, forces the best one to lead, probes regime changes with novelty
//! detection, and refreshes models via exploration and rehearsal.

use crate::metrics::TrainingSample;
use crate::novelty::{fit_initial_ssm, NoveltyParams, Ssm};
use crate::predictors::{Hyperparams, Ppm, PpmKind};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::VecDeque;

/// Why a leadership change happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconfigCause {
    /// Periodic prediction pass picked a better leader.
    Prediction,
    /// Novelty- or cold-start-driven exploration of a replica.
    Exploration,
    /// Ordinary timeout-driven election (crash recovery, cancelled
    /// candidacies, initial bootstrap).
    Timeout,
}

impl ReconfigCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReconfigCause::Prediction => "prediction",
            ReconfigCause::Exploration => "exploration",
            ReconfigCause::Timeout => "timeout",
        }
    }
}

/// Commands the elector asks the simulation to carry out.
#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Force { target: usize, token: u64, cause: ReconfigCause },
    Cancel { target: usize, token: u64 },
    /// Arm the end-of-exploration timer for the window just started.
    ScheduleExploreEnd { token: u64, at_ms: f64 },
}

#[derive(Debug, Clone)]
pub struct ElectorConfig {
    pub n: usize,
    pub kind: PpmKind,
    pub hyper: Hyperparams,
    pub novelty: NoveltyParams,
    /// P flag: run an election on every short-period tick.
    pub intermediate_predictions: bool,
    /// H flag: mix archived samples into every refit.
    pub rehearsal: bool,
    /// Required fitness margin (ms) before deposing the incumbent.
    pub delta_improve_ms: f64,
    pub archive_cap: usize,
    pub t_explore_ms: f64,
}

/// One fitness evaluation, kept for the run trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessRecord {
    pub time_ms: f64,
    pub replica: usize,
    pub fitness_ms: f64,
}

/// One model refit, kept for the run trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefitEvent {
    pub time_ms: f64,
    pub replica: usize,
    pub new_samples: usize,
    pub rehearsal_samples: usize,
}

/// One state-model event (initial fit or novelty commit).
#[derive(Debug, Clone, PartialEq)]
pub struct SsmEvent {
    pub time_ms: f64,
    pub replica: usize,
    pub kind: &'static str,
    pub fraction_deviating: f64,
    pub neighborhood: usize,
}

#[derive(Debug)]
struct ReplicaModels {
    ppm: Ppm,
    ssm: Option<Ssm>,
    archive: VecDeque<TrainingSample>,
    pending_new: Vec<TrainingSample>,
    obs_window: Vec<Vec<f64>>,
    latest_obs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct ActiveExploration {
    target: usize,
    token: u64,
    /// Set once the target actually won; the hold window runs from there.
    elected: bool,
}

#[derive(Debug)]
pub struct Elector {
    cfg: ElectorConfig,
    models: Vec<ReplicaModels>,
    fit_rngs: Vec<ChaCha20Rng>,
    rehearsal_rng: ChaCha20Rng,
    exploration_queue: VecDeque<usize>,
    active_exploration: Option<ActiveExploration>,
    pending_prediction_force: Option<(u64, usize)>,
    next_token: u64,
    pub fitness_trace: Vec<FitnessRecord>,
    pub refit_events: Vec<RefitEvent>,
    pub ssm_events: Vec<SsmEvent>,
    pub faults: Vec<String>,
    pub explorations_started: u64,
}

impl Elector {
    pub fn new(cfg: ElectorConfig, seed: u64) -> Self {
        let n = cfg.n;
        let models = (0..n)
            .map(|_| ReplicaModels {
                ppm: Ppm::new(cfg.kind, n + 2, n, cfg.hyper.clone()),
                ssm: None,
                archive: VecDeque::new(),
                pending_new: Vec::new(),
                obs_window: Vec::new(),
                latest_obs: None,
            })
            .collect();
        let fit_rngs = (0..n).map(|r| crate::derive_rng(seed, &format!("ppm-fit-{r}"))).collect();
        Self {
            cfg,
            models,
            fit_rngs,
            rehearsal_rng: crate::derive_rng(seed, "rehearsal"),
            exploration_queue: VecDeque::new(),
            active_exploration: None,
            pending_prediction_force: None,
            next_token: 0,
            fitness_trace: Vec::new(),
            refit_events: Vec::new(),
            ssm_events: Vec::new(),
            faults: Vec::new(),
            explorations_started: 0,
        }
    }

    pub fn exploring(&self) -> Option<usize> {
        self.active_exploration.map(|e| e.target)
    }

    pub fn queue_len(&self) -> usize {
        self.exploration_queue.len()
    }

    pub fn is_fitted(&self, r: usize) -> bool {
        self.models[r].ppm.is_fitted()
    }

    pub fn archive_len(&self, r: usize) -> usize {
        self.models[r].archive.len()
    }

    pub fn ppm(&self, r: usize) -> &Ppm {
        &self.models[r].ppm
    }

    pub fn ssm(&self, r: usize) -> Option<&Ssm> {
        self.models[r].ssm.as_ref()
    }

    /// Latest smoothed observation (flattened) from replica `r`'s agent.
    pub fn on_observation(&mut self, replica: usize, flat_obs: Vec<f64>) {
        let m = &mut self.models[replica];
        m.obs_window.push(flat_obs.clone());
        m.latest_obs = Some(flat_obs);
    }

    /// Training samples from a closed collection window, routed to the
    /// leader each was measured under.
    pub fn on_window_samples(&mut self, samples: &[TrainingSample]) {
        for s in samples {
            self.models[s.leader].pending_new.push(s.clone());
        }
    }

    /// Predicted commit-delay fitness: the mean of the model's per-source
    /// delay predictions on the replica's latest observation.
    pub fn fitness(&self, r: usize) -> Option<f64> {
        let m = &self.models[r];
        let obs = m.latest_obs.as_ref()?;
        let yhat = m.ppm.predict(obs).ok()?;
        Some(yhat.iter().sum::<f64>() / yhat.len() as f64)
    }

    fn take_token(&mut self) -> u64 {
        self.next_token += 1;
        self.next_token
    }

    /// Short-period pass: refit the incumbent on fresh samples, then either
    /// continue cold-start exploration or force the predicted best leader.
    pub fn prediction_tick(
        &mut self,
        now: f64,
        leader: Option<usize>,
        alive: &[bool],
    ) -> Vec<Directive> {
        let mut out = Vec::new();
        if !self.cfg.intermediate_predictions {
            return out;
        }
        if self.active_exploration.is_some() {
            return out; // deferred until the exploration queue drains
        }
        if let Some((token, target)) = self.pending_prediction_force.take() {
            if leader != Some(target) && alive[target] {
                out.push(Directive::Cancel { target, token });
            }
        }
        if let Some(l) = leader {
            if alive[l] && !self.models[l].pending_new.is_empty() {
                self.refit(now, l);
            }
        }
        self.enqueue_unfitted(alive);
        if !self.exploration_queue.is_empty() {
            out.extend(self.start_next_exploration(now, leader, alive));
            return out;
        }
        out.extend(self.elect_best(now, leader, alive));
        out
    }

    /// Long-period pass: score each replica's observation window against its
    /// state model, queue explorations for novel regimes (and still-unfitted
    /// models), and start working the queue.
    pub fn novelty_tick(
        &mut self,
        now: f64,
        leader: Option<usize>,
        alive: &[bool],
    ) -> Vec<Directive> {
        let mut out = Vec::new();
        for r in 0..self.cfg.n {
            if !alive[r] {
                self.models[r].obs_window.clear();
                continue;
            }
            let window = std::mem::take(&mut self.models[r].obs_window);
            match &self.models[r].ssm {
                None => {
                    if window.len() <= self.cfg.novelty.k {
                        // Too few readings: keep accumulating.
                        self.models[r].obs_window = window;
                        continue;
                    }
                    match fit_initial_ssm(r, &window, &self.cfg.novelty, now) {
                        Ok(ssm) => {
                            self.ssm_events.push(SsmEvent {
                                time_ms: now,
                                replica: r,
                                kind: "init",
                                fraction_deviating: 0.0,
                                neighborhood: ssm.neighborhood_len(),
                            });
                            self.models[r].ssm = Some(ssm);
                        }
                        Err(e) => {
                            self.faults.push(format!("ssm init failed for replica {r}: {e}"));
                            self.models[r].obs_window = window;
                        }
                    }
                }
                Some(ssm) => {
                    let verdict = ssm.score_window(&window, &self.cfg.novelty);
                    if verdict.is_new_state {
                        match ssm.commit_new_ssm(&verdict, now) {
                            Ok(new_ssm) => {
                                self.ssm_events.push(SsmEvent {
                                    time_ms: now,
                                    replica: r,
                                    kind: "commit",
                                    fraction_deviating: verdict.fraction_deviating,
                                    neighborhood: new_ssm.neighborhood_len(),
                                });
                                self.models[r].ssm = Some(new_ssm);
                                self.enqueue_exploration(r);
                            }
                            Err(e) => {
                                self.faults.push(format!("ssm commit failed for replica {r}: {e}"));
                            }
                        }
                    }
                }
            }
        }
        self.enqueue_unfitted(alive);
        if self.active_exploration.is_none() && !self.exploration_queue.is_empty() {
            out.extend(self.start_next_exploration(now, leader, alive));
        }
        out
    }

    /// The forced or elected replica won leadership.
    pub fn on_leader_elected(&mut self, now: f64, replica: usize) -> Vec<Directive> {
        let mut out = Vec::new();
        if let Some(active) = &mut self.active_exploration {
            if active.target == replica && !active.elected {
                active.elected = true;
                self.explorations_started += 1;
                out.push(Directive::ScheduleExploreEnd {
                    token: active.token,
                    at_ms: now + self.cfg.t_explore_ms,
                });
            }
        }
        if let Some((_, target)) = self.pending_prediction_force {
            if target == replica {
                self.pending_prediction_force = None;
            }
        }
        out
    }

    /// The exploration hold window elapsed: refit the explored replica on
    /// what it gathered, then move to the next target or elect the best.
    pub fn on_explore_end(
        &mut self,
        now: f64,
        token: u64,
        leader: Option<usize>,
        alive: &[bool],
    ) -> Vec<Directive> {
        let mut out = Vec::new();
        let Some(active) = self.active_exploration else {
            return out;
        };
        if active.token != token {
            return out; // stale timer from an abandoned exploration
        }
        let target = active.target;
        self.active_exploration = None;
        if alive[target] {
            if self.models[target].pending_new.is_empty() {
                self.faults
                    .push(format!("exploration of replica {target} gathered no samples"));
            } else {
                self.refit(now, target);
            }
        }
        if !self.exploration_queue.is_empty() {
            out.extend(self.start_next_exploration(now, leader, alive));
        } else {
            out.extend(self.elect_best(now, leader, alive));
        }
        out
    }

    /// Guard for a forced candidacy that cannot win (e.g. the target lost
    /// its majority): abandon it and move on.
    pub fn on_explore_stalled(
        &mut self,
        now: f64,
        token: u64,
        leader: Option<usize>,
        alive: &[bool],
    ) -> Vec<Directive> {
        let mut out = Vec::new();
        let Some(active) = self.active_exploration else {
            return out;
        };
        if active.token != token || active.elected {
            return out;
        }
        let target = active.target;
        self.active_exploration = None;
        self.faults.push(format!("exploration target {target} failed to win an election"));
        if alive[target] {
            out.push(Directive::Cancel { target, token });
        }
        self.models[target].pending_new.clear();
        if !self.exploration_queue.is_empty() {
            out.extend(self.start_next_exploration(now, leader, alive));
        } else {
            out.extend(self.elect_best(now, leader, alive));
        }
        out
    }

    /// Fail-stop crash: forget the replica as a target.
    pub fn on_replica_dead(
        &mut self,
        now: f64,
        replica: usize,
        leader: Option<usize>,
        alive: &[bool],
    ) -> Vec<Directive> {
        let mut out = Vec::new();
        self.exploration_queue.retain(|&r| r != replica);
        if let Some((_, target)) = self.pending_prediction_force {
            if target == replica {
                self.pending_prediction_force = None;
            }
        }
        if let Some(active) = self.active_exploration {
            if active.target == replica {
                self.active_exploration = None;
                self.faults.push(format!(
                    "exploration target {replica} died mid-window; partial window discarded"
                ));
                self.models[replica].pending_new.clear();
                if !self.exploration_queue.is_empty() {
                    out.extend(self.start_next_exploration(now, leader, alive));
                }
            }
        }
        out
    }

    /// Classifies a leadership change the simulation just observed.
    pub fn attribute_reconfig(&self, new_leader: usize) -> ReconfigCause {
        if let Some(active) = self.active_exploration {
            if active.target == new_leader {
                return ReconfigCause::Exploration;
            }
        }
        if let Some((_, target)) = self.pending_prediction_force {
            if target == new_leader {
                return ReconfigCause::Prediction;
            }
        }
        ReconfigCause::Timeout
    }

    fn enqueue_exploration(&mut self, r: usize) {
        let already = self.exploration_queue.contains(&r)
            || self.active_exploration.map(|a| a.target) == Some(r);
        if !already {
            self.exploration_queue.push_back(r);
        }
    }

    /// Cold start: replicas whose models never got fitted are mandatory
    /// exploration targets, in replica-id order.
    fn enqueue_unfitted(&mut self, alive: &[bool]) {
        for r in 0..self.cfg.n {
            if alive[r] && !self.models[r].ppm.is_fitted() {
                self.enqueue_exploration(r);
            }
        }
    }

    fn start_next_exploration(
        &mut self,
        now: f64,
        leader: Option<usize>,
        alive: &[bool],
    ) -> Vec<Directive> {
        let mut out = Vec::new();
        while let Some(target) = self.exploration_queue.pop_front() {
            if !alive[target] {
                self.faults.push(format!("skipping dead exploration target {target}"));
                continue;
            }
            let token = self.take_token();
            if leader == Some(target) {
                // Already leading: hold it for the window without an election.
                self.active_exploration = Some(ActiveExploration { target, token, elected: true });
                self.explorations_started += 1;
                out.push(Directive::ScheduleExploreEnd {
                    token,
                    at_ms: now + self.cfg.t_explore_ms,
                });
            } else {
                self.active_exploration = Some(ActiveExploration { target, token, elected: false });
                out.push(Directive::Force { target, token, cause: ReconfigCause::Exploration });
            }
            return out;
        }
        out
    }

    /// Ranks fitted replicas; forces the minimizer when it strictly improves
    /// on the incumbent (ties prefer the incumbent, then the lowest id).
    fn elect_best(&mut self, now: f64, leader: Option<usize>, alive: &[bool]) -> Vec<Directive> {
        let mut out = Vec::new();
        let mut scores: Vec<(usize, f64)> = Vec::new();
        for r in 0..self.cfg.n {
            if !alive[r] {
                continue;
            }
            if let Some(f) = self.fitness(r) {
                scores.push((r, f));
                self.fitness_trace.push(FitnessRecord { time_ms: now, replica: r, fitness_ms: f });
            }
        }
        let Some(&(_, min_f)) = scores
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            return out;
        };
        let r_min: Vec<usize> =
            scores.iter().filter(|(_, f)| *f == min_f).map(|(r, _)| *r).collect();
        let chosen = match leader {
            Some(l) if r_min.contains(&l) => l,
            _ => r_min[0],
        };
        let leader_fitness = leader
            .and_then(|l| scores.iter().find(|(r, _)| *r == l))
            .map(|(_, f)| *f)
            .unwrap_or(f64::INFINITY);
        if Some(chosen) != leader && min_f < leader_fitness - self.cfg.delta_improve_ms {
            let token = self.take_token();
            self.pending_prediction_force = Some((token, chosen));
            out.push(Directive::Force { target: chosen, token, cause: ReconfigCause::Prediction });
        }
        out
    }

    /// Replaces replica `r`'s model with one fitted on the newly gathered
    /// samples, mixed 1:1 with archived ones when rehearsal is on.
    fn refit(&mut self, now: f64, r: usize) {
        let new: Vec<TrainingSample> = std::mem::take(&mut self.models[r].pending_new);
        if new.is_empty() {
            return;
        }
        let mut train: Vec<TrainingSample> = new.clone();
        let mut rehearsal_n = 0;
        if self.cfg.rehearsal && !self.models[r].archive.is_empty() {
            let archive = &self.models[r].archive;
            rehearsal_n = new.len().min(archive.len());
            let mut idx: Vec<usize> = (0..archive.len()).collect();
            idx.shuffle(&mut self.rehearsal_rng);
            for &i in idx.iter().take(rehearsal_n) {
                train.push(archive[i].clone());
            }
        }
        train.shuffle(&mut self.rehearsal_rng);
        if self.cfg.kind == PpmKind::Ann && train.len() > crate::predictors::MAX_FIT_SAMPLES {
            train.truncate(crate::predictors::MAX_FIT_SAMPLES);
        }
        let x: Vec<Vec<f64>> = train.iter().map(|s| s.x.clone()).collect();
        let y: Vec<Vec<f64>> = train.iter().map(|s| s.y.clone()).collect();
        match self.models[r].ppm.fit(&x, &y, &mut self.fit_rngs[r]) {
            Ok(fitted) => {
                self.models[r].ppm = fitted;
                self.refit_events.push(RefitEvent {
                    time_ms: now,
                    replica: r,
                    new_samples: new.len(),
                    rehearsal_samples: rehearsal_n,
                });
            }
            Err(e) => {
                self.faults.push(format!("refit failed for replica {r}: {e}"));
            }
        }
        let m = &mut self.models[r];
        m.archive.extend(new);
        while m.archive.len() > self.cfg.archive_cap {
            m.archive.pop_front();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg(n: usize) -> ElectorConfig {
        ElectorConfig {
            n,
            kind: PpmKind::Ols,
            hyper: Hyperparams::default(),
            novelty: NoveltyParams { k: 3, ..NoveltyParams::default() },
            intermediate_predictions: true,
            rehearsal: true,
            delta_improve_ms: 0.0,
            archive_cap: 2000,
            t_explore_ms: 5000.0,
        }
    }

    fn sample(leader: usize, n: usize, level: f64) -> TrainingSample {
        TrainingSample::new(
            0,
            0.0,
            leader,
            n,
            vec![level; n + 2],
            vec![level; n],
        )
    }

    fn feed_obs(e: &mut Elector, n: usize, level: f64) {
        for r in 0..n {
            e.on_observation(r, vec![level; n + 2]);
        }
    }

    /// Fits replica `r`'s model to predict a constant delay `level`: varied
    /// inputs, constant targets, so the least-squares fit is exactly the
    /// constant everywhere. Fitted directly (same inputs in the same order
    /// for every replica) so equal levels give bit-identical models, which
    /// the tie-break test depends on.
    fn fit_constant(e: &mut Elector, r: usize, n: usize, level: f64) {
        let mut rng = crate::derive_rng(1234, "elector-fit-constant");
        let x: Vec<Vec<f64>> = (0..3 * (n + 3))
            .map(|_| (0..n + 2).map(|_| rng.gen_range(0.0..2.0)).collect())
            .collect();
        let y: Vec<Vec<f64>> = (0..x.len()).map(|_| vec![level; n]).collect();
        let mut fit_rng = crate::derive_rng(1, "elector-fit-rng");
        e.models[r].ppm = e.models[r].ppm.fit(&x, &y, &mut fit_rng).unwrap();
        assert!(e.is_fitted(r));
    }

    #[test]
    fn cold_start_explores_unfitted_replicas_in_id_order() {
        let mut e = Elector::new(base_cfg(3), 1);
        feed_obs(&mut e, 3, 1.0);
        let alive = [true, true, true];
        let d = e.prediction_tick(2000.0, Some(1), &alive);
        // Leader 1 has no samples yet, so everyone is unfitted: replica 0
        // goes first.
        assert_eq!(
            d,
            vec![Directive::Force { target: 0, token: 1, cause: ReconfigCause::Exploration }]
        );
        assert_eq!(e.exploring(), Some(0));
        assert_eq!(e.queue_len(), 2);
        // Ticks during the exploration defer.
        assert!(e.prediction_tick(4000.0, Some(1), &alive).is_empty());
    }

    #[test]
    fn exploration_window_runs_elect_refit_advance() {
        let mut e = Elector::new(base_cfg(2), 1);
        feed_obs(&mut e, 2, 1.0);
        let alive = [true, true];
        let d = e.prediction_tick(2000.0, Some(1), &alive);
        assert_eq!(d.len(), 1);
        // Target 0 wins its forced election.
        let d = e.on_leader_elected(2100.0, 0);
        assert_eq!(d, vec![Directive::ScheduleExploreEnd { token: 1, at_ms: 7100.0 }]);
        // It gathers a window of samples, then the hold ends.
        e.on_window_samples(&[sample(0, 2, 5.0), sample(0, 2, 6.0)]);
        let d = e.on_explore_end(7100.0, 1, Some(0), &alive);
        assert!(e.is_fitted(0));
        assert_eq!(e.archive_len(0), 2);
        // Next queued target (replica 1) is forced in turn.
        assert_eq!(
            d,
            vec![Directive::Force { target: 1, token: 2, cause: ReconfigCause::Exploration }]
        );
    }

    #[test]
    fn post_drain_election_picks_lowest_predicted_delay() {
        let mut e = Elector::new(base_cfg(2), 1);
        let alive = [true, true];
        fit_constant(&mut e, 0, 2, 30.0);
        fit_constant(&mut e, 1, 2, 10.0);
        feed_obs(&mut e, 2, 1.0);
        // Both fitted, no queue: a prediction tick under leader 0 must
        // force replica 1 (fitness 10 < 30).
        let d = e.prediction_tick(2000.0, Some(0), &alive);
        assert_eq!(
            d,
            vec![Directive::Force { target: 1, token: 1, cause: ReconfigCause::Prediction }]
        );
        assert_eq!(e.attribute_reconfig(1), ReconfigCause::Prediction);
        // Once it wins, the pending force clears.
        e.on_leader_elected(2100.0, 1);
        assert_eq!(e.attribute_reconfig(1), ReconfigCause::Timeout);
    }

    #[test]
    fn incumbent_keeps_leadership_on_ties() {
        let mut e = Elector::new(base_cfg(2), 1);
        let alive = [true, true];
        fit_constant(&mut e, 0, 2, 10.0);
        fit_constant(&mut e, 1, 2, 10.0);
        feed_obs(&mut e, 2, 1.0);
        let d = e.prediction_tick(2000.0, Some(1), &alive);
        assert!(d.is_empty(), "tie must not depose the incumbent: {d:?}");
    }

    #[test]
    fn stale_prediction_force_is_cancelled_next_tick() {
        let mut e = Elector::new(base_cfg(2), 1);
        let alive = [true, true];
        fit_constant(&mut e, 0, 2, 30.0);
        fit_constant(&mut e, 1, 2, 10.0);
        feed_obs(&mut e, 2, 1.0);
        let d = e.prediction_tick(2000.0, Some(0), &alive);
        let token = match d[0] {
            Directive::Force { token, .. } => token,
            _ => panic!(),
        };
        // Target 1 never won; next tick cancels before re-deciding.
        let d = e.prediction_tick(4000.0, Some(0), &alive);
        assert_eq!(d[0], Directive::Cancel { target: 1, token });
    }

    #[test]
    fn p_flag_off_disables_prediction_ticks() {
        let mut cfg = base_cfg(2);
        cfg.intermediate_predictions = false;
        let mut e = Elector::new(cfg, 1);
        feed_obs(&mut e, 2, 1.0);
        assert!(e.prediction_tick(2000.0, Some(0), &[true, true]).is_empty());
        // Cold-start exploration still happens via the novelty tick.
        // Replica 0 is popped first; being the leader already, it holds in
        // place for the window rather than forcing an election.
        let d = e.novelty_tick(20_000.0, Some(0), &[true, true]);
        assert!(matches!(d[0], Directive::ScheduleExploreEnd { .. }), "{d:?}");
        assert_eq!(e.exploring(), Some(0));
        assert_eq!(e.queue_len(), 1);
    }

    #[test]
    fn novelty_tick_fits_initial_ssm_then_detects_shift() {
        let mut cfg = base_cfg(1);
        cfg.novelty.k = 5;
        let mut e = Elector::new(cfg, 7);
        let alive = [true];
        // Make the model fitted so no cold-start exploration interferes.
        fit_constant(&mut e, 0, 1, 10.0);
        let mut rng = crate::derive_rng(3, "elector-test");
        for _ in 0..40 {
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            e.on_observation(0, obs);
        }
        e.novelty_tick(20_000.0, Some(0), &alive);
        assert!(e.ssm(0).is_some());
        assert_eq!(e.ssm_events.len(), 1);
        assert_eq!(e.ssm_events[0].kind, "init");
        // A wildly shifted window commits a new SSM and queues exploration.
        for _ in 0..40 {
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(100.0..101.0)).collect();
            e.on_observation(0, obs);
        }
        let d = e.novelty_tick(40_000.0, Some(0), &alive);
        assert_eq!(e.ssm_events.len(), 2);
        assert_eq!(e.ssm_events[1].kind, "commit");
        assert!(e.ssm_events[1].fraction_deviating > 0.985);
        // Replica 0 is the leader, so exploration holds it in place.
        assert!(
            matches!(d[..], [Directive::ScheduleExploreEnd { at_ms, .. }] if at_ms == 45_000.0),
            "{d:?}"
        );
    }

    #[test]
    fn small_obs_window_defers_ssm_fit() {
        let mut e = Elector::new(base_cfg(1), 7);
        fit_constant(&mut e, 0, 1, 10.0);
        for _ in 0..2 {
            e.on_observation(0, vec![0.5, 0.3, 0.0]);
        }
        e.novelty_tick(20_000.0, Some(0), &[true]);
        assert!(e.ssm(0).is_none());
        // The readings carry over and count toward the next tick.
        for _ in 0..2 {
            e.on_observation(0, vec![0.6, 0.3, 0.0]);
        }
        e.novelty_tick(40_000.0, Some(0), &[true]);
        assert!(e.ssm(0).is_some(), "4 readings > k=3 must now fit");
    }

    #[test]
    fn rehearsal_draws_one_to_one_from_archive() {
        let mut e = Elector::new(base_cfg(2), 1);
        // Archive 10 samples via two refits.
        for _ in 0..5 {
            e.on_window_samples(&[sample(0, 2, 1.0)]);
            e.refit(0.0, 0);
        }
        assert_eq!(e.archive_len(0), 5);
        e.models[0].pending_new = vec![sample(0, 2, 2.0), sample(0, 2, 3.0)];
        e.refit(1.0, 0);
        let last = e.refit_events.last().unwrap();
        assert_eq!(last.new_samples, 2);
        assert_eq!(last.rehearsal_samples, 2, "1:1 with |new| when archive is larger");
        assert_eq!(e.archive_len(0), 7);
    }

    #[test]
    fn rehearsal_off_trains_on_new_only() {
        let mut cfg = base_cfg(2);
        cfg.rehearsal = false;
        let mut e = Elector::new(cfg, 1);
        for _ in 0..5 {
            e.on_window_samples(&[sample(0, 2, 1.0)]);
            e.refit(0.0, 0);
        }
        e.models[0].pending_new = vec![sample(0, 2, 2.0)];
        e.refit(1.0, 0);
        assert_eq!(e.refit_events.last().unwrap().rehearsal_samples, 0);
    }

    #[test]
    fn archive_is_capped_fifo() {
        let mut cfg = base_cfg(2);
        cfg.archive_cap = 4;
        let mut e = Elector::new(cfg, 1);
        for i in 0..6 {
            e.on_window_samples(&[sample(0, 2, i as f64)]);
            e.refit(0.0, 0);
        }
        assert_eq!(e.archive_len(0), 4);
        // Oldest two (levels 0 and 1) were evicted.
        assert!(e.models[0].archive.iter().all(|s| s.x[0] >= 2.0));
    }

    #[test]
    fn dead_replica_is_skipped_everywhere() {
        let mut e = Elector::new(base_cfg(3), 1);
        feed_obs(&mut e, 3, 1.0);
        let mut alive = [true, true, true];
        let d = e.prediction_tick(2000.0, Some(1), &alive);
        assert!(matches!(d[0], Directive::Force { target: 0, .. }));
        // Target dies mid-exploration: partial window dropped, queue moves on.
        alive[0] = false;
        let d = e.on_replica_dead(2500.0, 0, Some(1), &alive);
        assert!(matches!(d[0], Directive::Force { target: 1, .. } | Directive::ScheduleExploreEnd { .. }), "{d:?}");
        assert!(e.faults.iter().any(|f| f.contains("died mid-window")));
        // Dead replicas never re-enter the queue.
        let d = e.novelty_tick(20_000.0, Some(1), &alive);
        assert!(e.exploration_queue.iter().all(|&r| r != 0));
        drop(d);
    }

    #[test]
    fn stalled_forced_candidacy_is_abandoned() {
        let mut e = Elector::new(base_cfg(2), 1);
        feed_obs(&mut e, 2, 1.0);
        let alive = [true, true];
        let d = e.prediction_tick(2000.0, Some(1), &alive);
        let token = match d[0] {
            Directive::Force { token, .. } => token,
            _ => panic!(),
        };
        let d = e.on_explore_stalled(7000.0, token, Some(1), &alive);
        assert_eq!(d[0], Directive::Cancel { target: 0, token });
        assert!(e.faults.iter().any(|f| f.contains("failed to win")));
        // The queue advances to replica 1... which is the leader, so it
        // holds in place.
        assert!(matches!(d[1], Directive::ScheduleExploreEnd { .. }));
    }
}
