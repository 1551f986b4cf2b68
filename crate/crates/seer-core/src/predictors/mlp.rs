//! Multilayer perceptron with ELU hidden activations, linear output, and
//! minibatch ADAM training on mean squared error.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::PredictorError;

/// Exponential linear unit with unit scale.
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// One dense layer: `out = W·in + b`, row-major weights (fan_out × fan_in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            fan_in: self.fan_in,
            fan_out: self.fan_out,
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, adam: AdamParams::default() }
    }
}

/// Most samples a single training call may receive.
pub const MAX_FIT_SAMPLES: usize = 250;
const MAX_LR_HALVINGS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Fresh network with the given layer sizes (input, hidden..., output),
    /// weights drawn from the scaled-uniform fan-based range
    /// ±√(6/(fan_in+fan_out)) and zero biases.
    pub fn new(sizes: &[usize], rng: &mut ChaCha20Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    fan_in,
                    fan_out,
                    w: (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect(),
                    b: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("network has layers").fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("network has layers").fan_out
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(super) fn from_layers(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Forward pass: ELU on every layer except the last, which is linear.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.fan_out];
            for o in 0..layer.fan_out {
                let row = &layer.w[o * layer.fan_in..(o + 1) * layer.fan_in];
                let z: f64 = row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>() + layer.b[o];
                next[o] = if li == last { z } else { elu(z) };
            }
            act = next;
        }
        act
    }

    /// MSE (averaged over samples and outputs) and its gradient with respect
    /// to every weight and bias, accumulated over the given samples.
    pub fn loss_and_grad(&self, x: &[Vec<f64>], y: &[Vec<f64>]) -> (f64, Vec<Layer>) {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty());
        let n = x.len();
        let m = self.output_dim();
        let last = self.layers.len() - 1;
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut loss = 0.0;
        let norm = 1.0 / (n * m) as f64;

        for (xs, ys) in x.iter().zip(y) {
            // Forward, caching pre-activations and activations.
            let mut acts: Vec<Vec<f64>> = vec![xs.clone()];
            let mut pres: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
            for (li, layer) in self.layers.iter().enumerate() {
                let prev = &acts[li];
                let mut pre = vec![0.0; layer.fan_out];
                for o in 0..layer.fan_out {
                    let row = &layer.w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    pre[o] =
                        row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>() + layer.b[o];
                }
                let act = if li == last {
                    pre.clone()
                } else {
                    pre.iter().map(|&z| elu(z)).collect()
                };
                pres.push(pre);
                acts.push(act);
            }
            let out = &acts[self.layers.len()];
            // d(MSE)/d(out) = 2(out − y)/(n·m); backpropagate.
            let mut delta: Vec<f64> = out
                .iter()
                .zip(ys)
                .map(|(o, t)| {
                    let e = o - t;
                    loss += e * e * norm;
                    2.0 * e * norm
                })
                .collect();
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                if li != last {
                    for (d, z) in delta.iter_mut().zip(&pres[li]) {
                        *d *= elu_grad(*z);
                    }
                }
                let prev = &acts[li];
                let g = &mut grads[li];
                for o in 0..layer.fan_out {
                    g.b[o] += delta[o];
                    let grow = &mut g.w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (gw, a) in grow.iter_mut().zip(prev) {
                        *gw += delta[o] * a;
                    }
                }
                if li > 0 {
                    let mut prev_delta = vec![0.0; layer.fan_in];
                    for o in 0..layer.fan_out {
                        let row = &layer.w[o * layer.fan_in..(o + 1) * layer.fan_in];
                        for (pd, w) in prev_delta.iter_mut().zip(row) {
                            *pd += delta[o] * w;
                        }
                    }
                    delta = prev_delta;
                }
            }
        }
        (loss, grads)
    }

    pub fn mse(&self, x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
        let n = x.len();
        let m = self.output_dim();
        let mut s = 0.0;
        for (xs, ys) in x.iter().zip(y) {
            for (o, t) in self.forward(xs).iter().zip(ys) {
                s += (o - t) * (o - t);
            }
        }
        s / (n * m) as f64
    }

    /// Minibatch ADAM on MSE. A non-finite epoch loss restores the last
    /// finite checkpoint and halves the learning rate, up to
    /// [`MAX_LR_HALVINGS`] times; beyond that the fit fails.
    pub fn train(
        &mut self,
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        schedule: &TrainSchedule,
        rng: &mut ChaCha20Rng,
    ) -> Result<(), PredictorError> {
        if x.is_empty() {
            return Err(PredictorError::FitError("no training samples".into()));
        }
        if x.len() > MAX_FIT_SAMPLES {
            return Err(PredictorError::FitError(format!(
                "{} samples exceed the {MAX_FIT_SAMPLES}-sample fit budget",
                x.len()
            )));
        }
        let mut adam = AdamState::new(&self.layers, schedule.adam);
        let mut checkpoint = self.layers.clone();
        let mut halvings = 0;
        let mut indices: Vec<usize> = (0..x.len()).collect();
        let mut epoch = 0;
        while epoch < schedule.epochs {
            indices.shuffle(rng);
            for chunk in indices.chunks(schedule.batch_size.max(1)) {
                let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| x[i].clone()).collect();
                let by: Vec<Vec<f64>> = chunk.iter().map(|&i| y[i].clone()).collect();
                let (_, grads) = self.loss_and_grad(&bx, &by);
                adam.step(&mut self.layers, &grads);
            }
            let loss = self.mse(x, y);
            if loss.is_finite() {
                checkpoint = self.layers.clone();
                epoch += 1;
            } else {
                halvings += 1;
                if halvings > MAX_LR_HALVINGS {
                    return Err(PredictorError::FitError(format!(
                        "training diverged after {MAX_LR_HALVINGS} learning-rate halvings"
                    )));
                }
                self.layers = checkpoint.clone();
                let mut reduced = schedule.adam;
                reduced.learning_rate = adam.params.learning_rate / 2.0;
                adam = AdamState::new(&self.layers, reduced);
            }
        }
        Ok(())
    }
}

/// Per-parameter first/second moment estimates for ADAM.
struct AdamState {
    params: AdamParams,
    t: u64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl AdamState {
    fn new(layers: &[Layer], params: AdamParams) -> Self {
        Self {
            params,
            t: 0,
            m: layers.iter().map(Layer::zeros_like).collect(),
            v: layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[Layer]) {
        self.t += 1;
        let AdamParams { learning_rate, beta1, beta2, epsilon } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((layer, grad), (m, v)) in
            layers.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    p[i] -= learning_rate * mhat / (vhat.sqrt() + epsilon);
                }
            };
            update(&mut layer.w, &grad.w, &mut m.w, &mut v.w);
            update(&mut layer.b, &grad.b, &mut m.b, &mut v.b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = crate::derive_rng(seed, "mlp-test-data");
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|r| vec![2.0 * r[0] - r[1] + 0.5 * r[2], r[0] + r[2]])
            .collect();
        (x, y)
    }

    #[test]
    fn elu_definition() {
        assert_relative_eq!(elu(0.0), 0.0);
        assert_relative_eq!(elu(1.0), 1.0);
        assert_relative_eq!(elu(-700.0), -1.0, epsilon = 1e-12);
        assert!(elu(-0.5) < 0.0 && elu(-0.5) > -1.0);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = crate::derive_rng(21, "mlp-test");
        let mut net = Mlp::new(&[3, 4, 4, 2], &mut rng);
        let (x, y) = toy_data(5, 22);
        let (_, grads) = net.loss_and_grad(&x, &y);
        let h = 1e-5;
        for li in 0..net.layers.len() {
            for wi in 0..net.layers[li].w.len() {
                let orig = net.layers[li].w[wi];
                net.layers[li].w[wi] = orig + h;
                let up = net.mse(&x, &y);
                net.layers[li].w[wi] = orig - h;
                let down = net.mse(&x, &y);
                net.layers[li].w[wi] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads[li].w[wi];
                let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "layer {li} w[{wi}]: analytic {an} vs fd {fd}");
            }
            for bi in 0..net.layers[li].b.len() {
                let orig = net.layers[li].b[bi];
                net.layers[li].b[bi] = orig + h;
                let up = net.mse(&x, &y);
                net.layers[li].b[bi] = orig - h;
                let down = net.mse(&x, &y);
                net.layers[li].b[bi] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads[li].b[bi];
                let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "layer {li} b[{bi}]: analytic {an} vs fd {fd}");
            }
        }
    }

    #[test]
    fn adam_with_zero_gradient_is_a_no_op() {
        let mut rng = crate::derive_rng(31, "mlp-test");
        let mut net = Mlp::new(&[2, 3, 1], &mut rng);
        let before = net.clone();
        let zeros: Vec<Layer> = net.layers.iter().map(Layer::zeros_like).collect();
        let mut adam = AdamState::new(&net.layers, AdamParams::default());
        adam.step(&mut net.layers, &zeros);
        assert_eq!(net, before);
    }

    #[test]
    fn training_fits_linear_targets_close_to_least_squares() {
        use crate::predictors::linalg::{lstsq_min_norm, Mat};
        let (x, y) = toy_data(60, 33);
        // Least-squares floor for the same data (exact here: y is linear).
        let xm = Mat::from_rows(&x);
        let ym = Mat::from_rows(&y);
        let beta = lstsq_min_norm(&xm, &ym);
        let mut ols_sse = 0.0;
        for (xs, ys) in x.iter().zip(&y) {
            for o in 0..2 {
                let pred: f64 = (0..3).map(|j| beta.at(j, o) * xs[j]).sum();
                ols_sse += (pred - ys[o]).powi(2);
            }
        }
        let ols_mse = ols_sse / (60.0 * 2.0);
        let mut rng = crate::derive_rng(34, "mlp-test");
        let mut net = Mlp::new(&[3, 16, 16, 2], &mut rng);
        let schedule = TrainSchedule {
            epochs: 1500,
            batch_size: 32,
            adam: AdamParams { learning_rate: 3e-3, ..AdamParams::default() },
        };
        net.train(&x, &y, &schedule, &mut rng).unwrap();
        let ann_mse = net.mse(&x, &y);
        assert!(
            ann_mse < ols_mse + 1e-3,
            "ann mse {ann_mse} vs ols mse {ols_mse}"
        );
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let (x, y) = toy_data(20, 35);
        let run = || {
            let mut rng = crate::derive_rng(36, "mlp-test");
            let mut net = Mlp::new(&[3, 8, 2], &mut rng);
            net.train(&x, &y, &TrainSchedule::default(), &mut rng).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn oversized_fit_is_rejected() {
        let x = vec![vec![0.0; 3]; MAX_FIT_SAMPLES + 1];
        let y = vec![vec![0.0; 2]; MAX_FIT_SAMPLES + 1];
        let mut rng = crate::derive_rng(37, "mlp-test");
        let mut net = Mlp::new(&[3, 4, 2], &mut rng);
        assert!(net.train(&x, &y, &TrainSchedule::default(), &mut rng).is_err());
    }

    #[test]
    fn divergent_learning_rate_fails_after_halvings() {
        let (x, y) = toy_data(20, 38);
        let mut rng = crate::derive_rng(39, "mlp-test");
        let mut net = Mlp::new(&[3, 8, 2], &mut rng);
        let schedule = TrainSchedule {
            epochs: 50,
            batch_size: 8,
            adam: AdamParams { learning_rate: 1e200, ..AdamParams::default() },
        };
        let res = net.train(&x, &y, &schedule, &mut rng);
        assert!(matches!(res, Err(PredictorError::FitError(_))));
    }
}
