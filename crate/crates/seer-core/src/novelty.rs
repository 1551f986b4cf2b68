//! Local-outlier-factor novelty detection over windows of observation
//! vectors, and the per-replica System State Model (SSM) lifecycle that
//! gates exploration.

use crate::predictors::Standardizer;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoveltyError {
    #[error("{got} samples but at least {need} required")]
    InsufficientSamples { got: usize, need: usize },
    #[error("novelty detection failed: {0}")]
    Invalid(String),
}

/// Thresholds controlling filtering and novelty classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoveltyParams {
    /// Neighbor count for LOF.
    pub k: usize,
    /// Fraction of a window pruned as outliers (⌈c·n⌉ highest scores).
    pub contamination: f64,
    /// A sample deviates when its novelty LOF exceeds this.
    pub lof_threshold: f64,
    /// A window is a new state when the deviating fraction exceeds this.
    pub deviation_threshold: f64,
}

impl Default for NoveltyParams {
    fn default() -> Self {
        Self { k: 20, contamination: 0.1, lof_threshold: 1.5, deviation_threshold: 0.985 }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Guard against division by zero for duplicated points.
const LRD_GUARD: f64 = 1e-10;

/// Per-point neighbor structure of a reference set: tie-inclusive k-nearest
/// neighborhoods, k-distances, and local reachability densities.
struct NeighborModel {
    k_dist: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    lrd: Vec<f64>,
}

impl NeighborModel {
    fn fit(points: &[Vec<f64>], k: usize) -> Self {
        let n = points.len();
        let mut k_dist = vec![0.0; n];
        let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean(&points[i], &points[j]), j))
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let kd = dists[k - 1].0;
            k_dist[i] = kd;
            // Tie-inclusive: every point within the k-distance belongs to N_k.
            neighbors.push(dists.iter().take_while(|(d, _)| *d <= kd).map(|&(_, j)| j).collect());
        }
        let mut lrd = vec![0.0; n];
        for i in 0..n {
            let reach_sum: f64 = neighbors[i]
                .iter()
                .map(|&o| euclidean(&points[i], &points[o]).max(k_dist[o]))
                .sum();
            lrd[i] = 1.0 / (reach_sum / neighbors[i].len() as f64 + LRD_GUARD);
        }
        Self { k_dist, neighbors, lrd }
    }

    /// LOF of a query point scored against this reference set.
    fn score_query(&self, points: &[Vec<f64>], q: &[f64], k: usize) -> f64 {
        let mut dists: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(j, p)| (euclidean(q, p), j))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let kd = dists[k - 1].0;
        let neigh: Vec<usize> =
            dists.iter().take_while(|(d, _)| *d <= kd).map(|&(_, j)| j).collect();
        let reach_sum: f64 = neigh
            .iter()
            .map(|&o| euclidean(q, &points[o]).max(self.k_dist[o]))
            .sum();
        let lrd_q = 1.0 / (reach_sum / neigh.len() as f64 + LRD_GUARD);
        let mean_lrd: f64 = neigh.iter().map(|&o| self.lrd[o]).sum::<f64>() / neigh.len() as f64;
        mean_lrd / lrd_q
    }
}

/// Classic LOF over a point set: ≈1 for points whose local density matches
/// their neighbors', ≫1 for isolated points. Brute-force neighbor search.
pub fn lof_scores(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>, NoveltyError> {
    if k == 0 {
        return Err(NoveltyError::Invalid("k must be positive".into()));
    }
    let n = points.len();
    if n <= k {
        return Err(NoveltyError::InsufficientSamples { got: n, need: k + 1 });
    }
    let model = NeighborModel::fit(points, k);
    Ok((0..n)
        .map(|i| {
            let mean_lrd: f64 = model.neighbors[i].iter().map(|&o| model.lrd[o]).sum::<f64>()
                / model.neighbors[i].len() as f64;
            mean_lrd / model.lrd[i]
        })
        .collect())
}

/// Indices that survive pruning of the ⌈c·n⌉ highest LOF scores. Ties prune
/// the earliest-arrived sample first, keeping the result deterministic.
fn filter_inliers(scores: &[f64], contamination: f64) -> Vec<usize> {
    let n = scores.len();
    let quota = ((contamination * n as f64).ceil() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<bool> = vec![true; n];
    for &idx in order.iter().take(quota) {
        keep[idx] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// Verdict on whether a window of observations constitutes a new system
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyVerdict {
    /// Fraction of surviving samples whose novelty LOF exceeds the threshold.
    pub fraction_deviating: f64,
    pub is_new_state: bool,
    /// Raw rows of the new window that survived outlier filtering.
    pub filtered_samples: Vec<Vec<f64>>,
    /// Novelty LOF per surviving sample, parallel to `filtered_samples`.
    pub scores: Vec<f64>,
}

impl NoveltyVerdict {
    fn no_evidence(filtered: Vec<Vec<f64>>) -> Self {
        Self {
            fraction_deviating: 0.0,
            is_new_state: false,
            filtered_samples: filtered,
            scores: Vec::new(),
        }
    }
}

/// A replica's System State Model: the standardized inlier neighborhood
/// describing its current resource/network regime.
#[derive(Debug, Clone)]
pub struct Ssm {
    pub replica_id: usize,
    pub created_at_ms: f64,
    k: usize,
    standardizer: Standardizer,
    /// Standardized inlier rows.
    neighborhood: Vec<Vec<f64>>,
    /// The same rows before standardization (kept for export).
    raw: Vec<Vec<f64>>,
}

impl Ssm {
    pub fn neighborhood_len(&self) -> usize {
        self.neighborhood.len()
    }

    /// Raw (unstandardized) neighborhood rows, e.g. for CSV export.
    pub fn raw_rows(&self) -> &[Vec<f64>] {
        &self.raw
    }
}

/// Builds a replica's first SSM from a window: LOF-filter the window, keep
/// the inliers as the neighborhood.
pub fn fit_initial_ssm(
    replica_id: usize,
    window: &[Vec<f64>],
    params: &NoveltyParams,
    now_ms: f64,
) -> Result<Ssm, NoveltyError> {
    let need = params.k + 1;
    if window.len() < need {
        return Err(NoveltyError::InsufficientSamples { got: window.len(), need });
    }
    let standardizer = Standardizer::fit(window)
        .map_err(|e| NoveltyError::Invalid(e.to_string()))?;
    let std_rows: Vec<Vec<f64>> = window.iter().map(|r| standardizer.apply(r)).collect();
    if std_rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(NoveltyError::Invalid("non-finite observation".into()));
    }
    let scores = lof_scores(&std_rows, params.k)?;
    let keep = filter_inliers(&scores, params.contamination);
    Ok(Ssm {
        replica_id,
        created_at_ms: now_ms,
        k: params.k,
        standardizer,
        neighborhood: keep.iter().map(|&i| std_rows[i].clone()).collect(),
        raw: keep.iter().map(|&i| window[i].clone()).collect(),
    })
}

impl Ssm {
    /// Scores a new window against this SSM: filter the window's own
    /// outliers, then score each survivor in novelty mode, with neighbors
    /// drawn from the SSM neighborhood only.
    pub fn score_window(&self, window: &[Vec<f64>], params: &NoveltyParams) -> NoveltyVerdict {
        if window.is_empty() {
            return NoveltyVerdict::no_evidence(Vec::new());
        }
        // Filter step, as when founding an SSM. Windows too small to carry
        // k+1 samples pass through unfiltered.
        let survivors: Vec<Vec<f64>> = if window.len() > params.k {
            match Standardizer::fit(window) {
                Ok(own) => {
                    let std_rows: Vec<Vec<f64>> =
                        window.iter().map(|r| own.apply(r)).collect();
                    match lof_scores(&std_rows, params.k) {
                        Ok(scores) => filter_inliers(&scores, params.contamination)
                            .into_iter()
                            .map(|i| window[i].clone())
                            .collect(),
                        Err(_) => window.to_vec(),
                    }
                }
                Err(_) => window.to_vec(),
            }
        } else {
            window.to_vec()
        };
        if survivors.is_empty() {
            return NoveltyVerdict::no_evidence(survivors);
        }
        // Scoring requires a neighborhood that can supply k neighbors.
        if self.neighborhood.len() <= self.k {
            return NoveltyVerdict::no_evidence(survivors);
        }
        let model = NeighborModel::fit(&self.neighborhood, self.k);
        let scores: Vec<f64> = survivors
            .iter()
            .map(|raw| {
                let q = self.standardizer.apply(raw);
                model.score_query(&self.neighborhood, &q, self.k)
            })
            .collect();
        let deviating = scores.iter().filter(|&&s| s > params.lof_threshold).count();
        let fraction = deviating as f64 / survivors.len() as f64;
        NoveltyVerdict {
            fraction_deviating: fraction,
            is_new_state: fraction > params.deviation_threshold,
            filtered_samples: survivors,
            scores,
        }
    }

    /// Replaces the neighborhood with the verdict's filtered samples; the
    /// caller is responsible for archiving `self`.
    pub fn commit_new_ssm(&self, verdict: &NoveltyVerdict, now_ms: f64) -> Result<Ssm, NoveltyError> {
        assert!(verdict.is_new_state, "only new-state verdicts replace an SSM");
        let standardizer = Standardizer::fit(&verdict.filtered_samples)
            .map_err(|e| NoveltyError::Invalid(e.to_string()))?;
        let neighborhood =
            verdict.filtered_samples.iter().map(|r| standardizer.apply(r)).collect();
        Ok(Ssm {
            replica_id: self.replica_id,
            created_at_ms: now_ms,
            k: self.k,
            standardizer,
            neighborhood,
            raw: verdict.filtered_samples.clone(),
        })
    }
}
