//! Per-replica performance prediction models (PPMs): multi-output regressors
//! mapping an observation vector (CPU, RAM, per-peer RTT) to predicted
//! per-source commit delays.
//!
//! Three families share one facade: ordinary least squares, elastic net on
//! degree-2 polynomial features, and a small multilayer perceptron. All of
//! them standardize inputs first; fits are pure functions producing a new
//! immutable model value.

mod elastic_net;
mod features;
mod linalg;
mod mlp;

pub use elastic_net::soft_threshold;
pub use features::{poly_expand, poly_expand_len, Standardizer};
pub use mlp::{elu, AdamParams, Mlp, TrainSchedule, MAX_FIT_SAMPLES};

use linalg::Mat;
use mlp::Layer;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("fit failed: {0}")]
    FitError(String),
    #[error("model has not been fitted")]
    NotFitted,
    #[error("malformed model text: {0}")]
    SerializationError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PpmKind {
    Ols,
    ElasticNet,
    Ann,
}

impl PpmKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PpmKind::Ols => "ols",
            PpmKind::ElasticNet => "elastic-net",
            PpmKind::Ann => "ann",
        }
    }

    pub fn parse(s: &str) -> Option<PpmKind> {
        match s {
            "ols" => Some(PpmKind::Ols),
            "elastic-net" | "en" | "elasticnet" => Some(PpmKind::ElasticNet),
            "ann" => Some(PpmKind::Ann),
            _ => None,
        }
    }
}

/// Model-family hyperparameters (grid-search winners baked in as defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Elastic-net regularization strength λ.
    pub en_lambda: f64,
    /// Elastic-net L1 ratio α.
    pub en_alpha: f64,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub schedule: TrainSchedule,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            en_lambda: 0.01,
            en_alpha: 0.5,
            hidden_layers: 3,
            hidden_units: 50,
            schedule: TrainSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FittedState {
    Linear {
        standardizer: Standardizer,
        /// Degree-2 polynomial expansion applied after standardization.
        expand: bool,
        /// feature-dim × output-dim coefficients.
        coefs: Mat,
        intercepts: Vec<f64>,
        converged: bool,
    },
    Net {
        standardizer: Standardizer,
        net: Mlp,
    },
}

/// A per-replica performance prediction model.
#[derive(Debug, Clone, PartialEq)]
pub struct Ppm {
    kind: PpmKind,
    input_dim: usize,
    output_dim: usize,
    hyper: Hyperparams,
    state: Option<FittedState>,
}

impl Ppm {
    pub fn new(kind: PpmKind, input_dim: usize, output_dim: usize, hyper: Hyperparams) -> Self {
        assert!(input_dim > 0 && output_dim > 0);
        Self { kind, input_dim, output_dim, hyper, state: None }
    }

    pub fn kind(&self) -> PpmKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn is_fitted(&self) -> bool {
        self.state.is_some()
    }

    /// True unless the latest elastic-net fit hit its sweep cap first.
    pub fn converged(&self) -> bool {
        match &self.state {
            Some(FittedState::Linear { converged, .. }) => *converged,
            _ => true,
        }
    }

    /// Fits on `(x, y)` and returns the fitted model as a new value. The
    /// network family warm-starts from this model's weights when already
    /// fitted (keeping its original standardizer so the weights continue to
    /// see consistently scaled inputs); the linear families refit from
    /// scratch.
    pub fn fit(
        &self,
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        rng: &mut ChaCha20Rng,
    ) -> Result<Ppm, PredictorError> {
        if x.is_empty() {
            return Err(PredictorError::FitError("no training samples".into()));
        }
        if x.len() != y.len() {
            return Err(PredictorError::FitError(format!(
                "{} inputs but {} targets",
                x.len(),
                y.len()
            )));
        }
        for row in x {
            if row.len() != self.input_dim {
                return Err(PredictorError::FitError(format!(
                    "input dimension {} != {}",
                    row.len(),
                    self.input_dim
                )));
            }
        }
        for row in y {
            if row.len() != self.output_dim {
                return Err(PredictorError::FitError(format!(
                    "target dimension {} != {}",
                    row.len(),
                    self.output_dim
                )));
            }
        }
        let state = match self.kind {
            PpmKind::Ols => {
                let standardizer = Standardizer::fit(x)?;
                // Augmented ones column carries the intercept; the minimum-
                // norm solver handles rank-deficient early windows.
                let rows: Vec<Vec<f64>> = x
                    .iter()
                    .map(|r| {
                        let mut row = vec![1.0];
                        row.extend(standardizer.apply(r));
                        row
                    })
                    .collect();
                let beta = linalg::lstsq_min_norm(&Mat::from_rows(&rows), &Mat::from_rows(y));
                let mut coefs = Mat::zeros(self.input_dim, self.output_dim);
                let mut intercepts = vec![0.0; self.output_dim];
                for o in 0..self.output_dim {
                    intercepts[o] = beta.at(0, o);
                    for j in 0..self.input_dim {
                        *coefs.at_mut(j, o) = beta.at(j + 1, o);
                    }
                }
                FittedState::Linear {
                    standardizer,
                    expand: false,
                    coefs,
                    intercepts,
                    converged: true,
                }
            }
            PpmKind::ElasticNet => {
                let standardizer = Standardizer::fit(x)?;
                let rows: Vec<Vec<f64>> =
                    x.iter().map(|r| poly_expand(&standardizer.apply(r))).collect();
                let fit = elastic_net::fit(
                    &Mat::from_rows(&rows),
                    &Mat::from_rows(y),
                    self.hyper.en_lambda,
                    self.hyper.en_alpha,
                    true,
                )?;
                FittedState::Linear {
                    standardizer,
                    expand: true,
                    coefs: fit.coefs,
                    intercepts: fit.intercepts,
                    converged: fit.converged,
                }
            }
            PpmKind::Ann => {
                let (standardizer, mut net) = match &self.state {
                    Some(FittedState::Net { standardizer, net }) => {
                        (standardizer.clone(), net.clone())
                    }
                    _ => {
                        let mut sizes = vec![self.input_dim];
                        sizes.extend(std::iter::repeat(self.hyper.hidden_units).take(self.hyper.hidden_layers));
                        sizes.push(self.output_dim);
                        (Standardizer::fit(x)?, Mlp::new(&sizes, rng))
                    }
                };
                let tx: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
                net.train(&tx, y, &self.hyper.schedule, rng)?;
                FittedState::Net { standardizer, net }
            }
        };
        Ok(Ppm { kind: self.kind, input_dim: self.input_dim, output_dim: self.output_dim, hyper: self.hyper.clone(), state: Some(state) })
    }

    /// Predicted per-source commit delays for one observation vector.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, PredictorError> {
        assert_eq!(x.len(), self.input_dim, "observation dimension mismatch");
        let state = self.state.as_ref().ok_or(PredictorError::NotFitted)?;
        Ok(match state {
            FittedState::Linear { standardizer, expand, coefs, intercepts, .. } => {
                let mut feats = standardizer.apply(x);
                if *expand {
                    feats = poly_expand(&feats);
                }
                (0..self.output_dim)
                    .map(|o| {
                        intercepts[o]
                            + (0..coefs.rows).map(|j| coefs.at(j, o) * feats[j]).sum::<f64>()
                    })
                    .collect()
            }
            FittedState::Net { standardizer, net } => net.forward(&standardizer.apply(x)),
        })
    }

    /// Serializes the fitted model to a versioned text block.
    pub fn to_text(&self) -> Result<String, PredictorError> {
        let state = self.state.as_ref().ok_or(PredictorError::NotFitted)?;
        let mut out = String::new();
        out.push_str("ppm-text v1\n");
        out.push_str(&format!("kind {}\n", self.kind.as_str()));
        out.push_str(&format!("input_dim {}\n", self.input_dim));
        out.push_str(&format!("output_dim {}\n", self.output_dim));
        let write_vec = |out: &mut String, label: &str, v: &[f64]| {
            out.push_str(label);
            for x in v {
                out.push_str(&format!(" {x}"));
            }
            out.push('\n');
        };
        match state {
            FittedState::Linear { standardizer, expand, coefs, intercepts, converged } => {
                write_vec(&mut out, "standardizer_mean", standardizer.mean());
                write_vec(&mut out, "standardizer_std", standardizer.std());
                out.push_str(&format!("expand {expand}\n"));
                out.push_str(&format!("converged {converged}\n"));
                write_vec(&mut out, "intercepts", intercepts);
                out.push_str(&format!("coefs {} {}\n", coefs.rows, coefs.cols));
                for r in 0..coefs.rows {
                    write_vec(&mut out, "row", coefs.row(r));
                }
            }
            FittedState::Net { standardizer, net } => {
                write_vec(&mut out, "standardizer_mean", standardizer.mean());
                write_vec(&mut out, "standardizer_std", standardizer.std());
                out.push_str(&format!("layers {}\n", net.layers().len()));
                for layer in net.layers() {
                    out.push_str(&format!("layer {} {}\n", layer.fan_in, layer.fan_out));
                    for o in 0..layer.fan_out {
                        write_vec(
                            &mut out,
                            "w",
                            &layer.w[o * layer.fan_in..(o + 1) * layer.fan_in],
                        );
                    }
                    write_vec(&mut out, "b", &layer.b);
                }
            }
        }
        Ok(out)
    }

    /// Parses a model produced by [`Ppm::to_text`]. Hyperparameters revert
    /// to defaults; the prediction-relevant state roundtrips exactly.
    pub fn from_text(text: &str) -> Result<Ppm, PredictorError> {
        let err = |msg: &str| PredictorError::SerializationError(msg.to_string());
        let mut lines = text.lines().peekable();
        let header = lines.next().ok_or_else(|| err("empty input"))?;
        if header.trim() != "ppm-text v1" {
            return Err(err(&format!("unsupported header {header:?}")));
        }
        let mut take_field = |name: &str| -> Result<String, PredictorError> {
            let line = lines.next().ok_or_else(|| err(&format!("missing field {name}")))?;
            let rest = line
                .strip_prefix(name)
                .ok_or_else(|| err(&format!("expected field {name}, got {line:?}")))?;
            Ok(rest.trim().to_string())
        };
        let parse_vec = |s: &str| -> Result<Vec<f64>, PredictorError> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(&format!("bad number {t:?}"))))
                .collect()
        };
        let kind = PpmKind::parse(&take_field("kind")?)
            .ok_or_else(|| err("unknown model kind"))?;
        let input_dim: usize =
            take_field("input_dim")?.parse().map_err(|_| err("bad input_dim"))?;
        let output_dim: usize =
            take_field("output_dim")?.parse().map_err(|_| err("bad output_dim"))?;
        let mean = parse_vec(&take_field("standardizer_mean")?)?;
        let std = parse_vec(&take_field("standardizer_std")?)?;
        if mean.len() != input_dim || std.len() != input_dim {
            return Err(err("standardizer dimension mismatch"));
        }
        let standardizer = Standardizer::from_parts(mean, std);
        let state = match kind {
            PpmKind::Ols | PpmKind::ElasticNet => {
                let expand: bool =
                    take_field("expand")?.parse().map_err(|_| err("bad expand flag"))?;
                let converged: bool =
                    take_field("converged")?.parse().map_err(|_| err("bad converged flag"))?;
                let intercepts = parse_vec(&take_field("intercepts")?)?;
                let dims = take_field("coefs")?;
                let mut it = dims.split_whitespace();
                let rows: usize = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err("bad coefs dims"))?;
                let cols: usize = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err("bad coefs dims"))?;
                let mut coefs = Mat::zeros(rows, cols);
                for r in 0..rows {
                    let row = parse_vec(&take_field("row")?)?;
                    if row.len() != cols {
                        return Err(err("coefficient row length mismatch"));
                    }
                    for c in 0..cols {
                        *coefs.at_mut(r, c) = row[c];
                    }
                }
                if intercepts.len() != output_dim || cols != output_dim {
                    return Err(err("output dimension mismatch"));
                }
                FittedState::Linear { standardizer, expand, coefs, intercepts, converged }
            }
            PpmKind::Ann => {
                let count: usize =
                    take_field("layers")?.parse().map_err(|_| err("bad layer count"))?;
                let mut layers = Vec::with_capacity(count);
                for _ in 0..count {
                    let dims = take_field("layer")?;
                    let mut it = dims.split_whitespace();
                    let fan_in: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err("bad layer dims"))?;
                    let fan_out: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err("bad layer dims"))?;
                    let mut w = Vec::with_capacity(fan_in * fan_out);
                    for _ in 0..fan_out {
                        let row = parse_vec(&take_field("w")?)?;
                        if row.len() != fan_in {
                            return Err(err("weight row length mismatch"));
                        }
                        w.extend(row);
                    }
                    let b = parse_vec(&take_field("b")?)?;
                    if b.len() != fan_out {
                        return Err(err("bias length mismatch"));
                    }
                    layers.push(Layer { fan_in, fan_out, w, b });
                }
                if layers.is_empty()
                    || layers[0].fan_in != input_dim
                    || layers[count - 1].fan_out != output_dim
                {
                    return Err(err("network dimension mismatch"));
                }
                FittedState::Net { standardizer, net: Mlp::from_layers(layers) }
            }
        };
        Ok(Ppm {
            kind,
            input_dim,
            output_dim,
            hyper: Hyperparams::default(),
            state: Some(state),
        })
    }
}
