//! Fully connected networks with logistic hidden layers and a scalar affine
//! output, trained by minibatch gradient descent.
//!
//! Parameters live in one flat vector. Layer by layer, each weight matrix is
//! stored row-major (`fan_out` rows of `fan_in` entries) and followed by its
//! bias vector.

use crate::error::{Error, Result};
use crate::par;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkStructure {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl NetworkStructure {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::domain("input_dim", "must be at least 1"));
        }
        if hidden.contains(&0) {
            return Err(Error::domain("hidden", "layer widths must be at least 1"));
        }
        Ok(NetworkStructure { input_dim, hidden })
    }

    /// `(fan_in, fan_out)` of every affine layer, output layer last.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(1);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|&(i, o)| i * o + o).sum()
    }

    fn max_width(&self) -> usize {
        self.hidden.iter().copied().chain([self.input_dim, 1]).max().unwrap_or(1)
    }
}

/// Flat parameter vector of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub theta: Vec<f64>,
}

impl Weights {
    pub fn zeros(structure: &NetworkStructure) -> Self {
        Weights {
            theta: vec![0.0; structure.param_count()],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

/// Matrices uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn init_weights(structure: &NetworkStructure, stream: &mut RngStream) -> Weights {
    let mut theta = Vec::with_capacity(structure.param_count());
    for (fan_in, fan_out) in structure.layers() {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            theta.push(scale * (2.0 * stream.next_uniform() - 1.0));
        }
        theta.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Weights { theta }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    /// Activations per layer, input first.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(structure: &NetworkStructure) -> Self {
        let mut acts = vec![vec![0.0; structure.input_dim]];
        acts.extend(structure.hidden.iter().map(|&w| vec![0.0; w]));
        let m = structure.max_width();
        Workspace {
            acts,
            delta: vec![0.0; m],
            delta_prev: vec![0.0; m],
        }
    }
}

/// Forward pass filling `ws.acts`; returns the output.
fn forward_into(layers: &[(usize, usize)], theta: &[f64], x: &[f64], ws: &mut Workspace) -> f64 {
    ws.acts[0].copy_from_slice(x);
    let mut off = 0;
    let last = layers.len() - 1;
    for (k, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let w = &theta[off..off + fan_in * fan_out];
        let b = &theta[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        if k == last {
            return dot(w, &ws.acts[k]) + b[0];
        }
        let (prev, next) = ws.acts.split_at_mut(k + 1);
        let input = &prev[k];
        for (j, out) in next[0].iter_mut().enumerate() {
            *out = logistic(dot(&w[j * fan_in..(j + 1) * fan_in], input) + b[j]);
        }
    }
    unreachable!("network has an output layer")
}

/// Network output at input `x` (already rescaled).
pub fn forward(structure: &NetworkStructure, theta: &Weights, x: &[f64]) -> f64 {
    assert_eq!(x.len(), structure.input_dim, "input length");
    let mut ws = Workspace::new(structure);
    forward_into(&structure.layers(), &theta.theta, x, &mut ws)
}

/// Reusable evaluator avoiding per-call allocation.
pub struct Evaluator<'a> {
    layers: Vec<(usize, usize)>,
    theta: &'a [f64],
    ws: Workspace,
}

impl<'a> Evaluator<'a> {
    pub fn new(structure: &NetworkStructure, theta: &'a Weights) -> Self {
        Evaluator {
            layers: structure.layers(),
            theta: &theta.theta,
            ws: Workspace::new(structure),
        }
    }

    pub fn eval(&mut self, x: &[f64]) -> f64 {
        forward_into(&self.layers, self.theta, x, &mut self.ws)
    }
}

/// Adds `d(out - t)^2 / d theta` for one sample to `grad`; returns the
/// squared error.
fn accumulate_sample(
    layers: &[(usize, usize)],
    offsets: &[usize],
    theta: &[f64],
    x: &[f64],
    target: f64,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> f64 {
    let out = forward_into(layers, theta, x, ws);
    let err = out - target;
    let n = layers.len();
    ws.delta[0] = 2.0 * err;
    let mut width = 1;
    for k in (0..n).rev() {
        let (fan_in, fan_out) = layers[k];
        debug_assert_eq!(fan_out, width);
        let off = offsets[k];
        let input = &ws.acts[k];
        let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
        for j in 0..fan_out {
            let d = ws.delta[j];
            gb[j] += d;
            for (g, a) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if k == 0 {
            break;
        }
        // Propagate through W_k and the logistic of layer k.
        let w = &theta[off..off + fan_in * fan_out];
        for i in 0..fan_in {
            let mut s = 0.0;
            for j in 0..fan_out {
                s += w[j * fan_in + i] * ws.delta[j];
            }
            let a = input[i];
            ws.delta_prev[i] = s * a * (1.0 - a);
        }
        std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        width = fan_in;
    }
    err * err
}

fn layer_offsets(layers: &[(usize, usize)]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut off = 0;
    for &(i, o) in layers {
        offsets.push(off);
        off += i * o + o;
    }
    offsets
}

/// Regression minibatch with inputs stored row by row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn new(input_dim: usize) -> Self {
        Batch {
            input_dim,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn from_pairs(pairs: &[(Vec<f64>, f64)]) -> Self {
        let input_dim = pairs.first().map_or(0, |p| p.0.len());
        let mut b = Batch::new(input_dim);
        for (x, t) in pairs {
            b.push(x, *t);
        }
        b
    }

    pub fn push(&mut self, x: &[f64], target: f64) {
        assert_eq!(x.len(), self.input_dim);
        self.inputs.extend_from_slice(x);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// Mean squared error over the batch and its exact gradient.
///
/// Per-chunk sums are combined with a fixed pairwise tree, so the result does
/// not depend on the number of worker threads.
pub fn loss_and_grad(structure: &NetworkStructure, theta: &Weights, batch: &Batch) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty(), "empty batch");
    assert_eq!(batch.input_dim, structure.input_dim, "batch input dimension");
    loss_and_grad_from(structure, theta, batch.len(), |i, x| {
        x.copy_from_slice(batch.input(i));
        Ok(batch.targets[i])
    })
    .expect("batch access is infallible")
}

/// Like [`loss_and_grad`] but pulls sample `i` from `sample(i, input_buf)`,
/// which writes the input and returns the target. Samples are produced
/// inside the worker that consumes them.
pub fn loss_and_grad_from<F>(structure: &NetworkStructure, theta: &Weights, n: usize, sample: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(usize, &mut [f64]) -> Result<f64> + Sync + Send,
{
    assert!(n > 0, "empty batch");
    let layers = structure.layers();
    let offsets = layer_offsets(&layers);
    let p = theta.theta.len();
    let partials = par::try_map_chunks(n, |range| {
        let mut ws = Workspace::new(structure);
        let mut x = vec![0.0; structure.input_dim];
        let mut grad = vec![0.0; p];
        let mut loss = 0.0;
        for i in range {
            let target = sample(i, &mut x)?;
            loss += accumulate_sample(&layers, &offsets, &theta.theta, &x, target, &mut ws, &mut grad);
        }
        Ok((loss, grad))
    })?;
    let (loss, mut grad) = par::reduce_pairwise(partials, |(la, mut ga), (lb, gb)| {
        for (a, b) in ga.iter_mut().zip(&gb) {
            *a += b;
        }
        (la + lb, ga)
    })
    .expect("non-empty batch");
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// `theta - rate * grad`.
pub fn sgd_step(theta: &Weights, grad: &[f64], rate: f64) -> Weights {
    assert_eq!(theta.theta.len(), grad.len());
    Weights {
        theta: theta.theta.iter().zip(grad).map(|(t, g)| t - rate * g).collect(),
    }
}

/// Exponentially decaying learning rate with a continuous exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial_rate: f64,
    pub decay_rate: f64,
    pub step_rate: u64,
}

impl LrSchedule {
    pub fn new(initial_rate: f64, decay_rate: f64, step_rate: u64) -> Result<Self> {
        if !(initial_rate > 0.0 && initial_rate.is_finite()) {
            return Err(Error::domain("lr_initial", format!("{initial_rate} must be positive")));
        }
        if !(decay_rate > 0.0 && decay_rate <= 1.0) {
            return Err(Error::domain("lr_decay", format!("{decay_rate} not in (0, 1]")));
        }
        if step_rate == 0 {
            return Err(Error::domain("lr_step", "must be positive"));
        }
        Ok(LrSchedule {
            initial_rate,
            decay_rate,
            step_rate,
        })
    }

    /// Initial rate 0.01, decay 0.1 every 40000 steps.
    pub fn standard() -> Self {
        LrSchedule {
            initial_rate: 0.01,
            decay_rate: 0.1,
            step_rate: 40_000,
        }
    }
}

pub fn learning_rate(schedule: &LrSchedule, step: u64) -> f64 {
    schedule.initial_rate * schedule.decay_rate.powf(step as f64 / schedule.step_rate as f64)
}

/// Update rule applied at every training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    /// Adaptive moment estimation with the usual defaults
    /// (0.9, 0.999, 1e-8).
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

/// Mutable optimizer state for one network.
pub struct OptimizerState {
    optimizer: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, params: usize) -> Self {
        let (m, v) = match optimizer {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; params], vec![0.0; params]),
        };
        OptimizerState { optimizer, m, v, t: 0 }
    }

    /// Applies one update in place.
    pub fn step(&mut self, theta: &mut Weights, grad: &[f64], rate: f64) {
        assert_eq!(theta.theta.len(), grad.len());
        match self.optimizer {
            Optimizer::Sgd => {
                for (t, g) in theta.theta.iter_mut().zip(grad) {
                    *t -= rate * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t = self.t.saturating_add(1);
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..grad.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    theta.theta[i] -= rate * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;

    fn small_net(seed: u64) -> (NetworkStructure, Weights) {
        let s = NetworkStructure::new(3, vec![4, 3]).unwrap();
        let mut w = init_weights(&s, &mut seed_stream(seed, 1));
        // Non-zero biases so their gradients are exercised too.
        let mut st = seed_stream(seed, 2);
        for t in w.theta.iter_mut() {
            *t += 0.1 * (st.next_uniform() - 0.5);
        }
        (s, w)
    }

    fn random_batch(seed: u64, n: usize, d: usize) -> Batch {
        let mut st = seed_stream(seed, 3);
        let mut b = Batch::new(d);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| st.next_uniform()).collect();
            b.push(&x, 2.0 * st.next_uniform() - 1.0);
        }
        b
    }

    fn loss_only(s: &NetworkStructure, w: &Weights, b: &Batch) -> f64 {
        (0..b.len())
            .map(|i| (b.targets[i] - forward(s, w, b.input(i))).powi(2))
            .sum::<f64>()
            / b.len() as f64
    }

    #[test]
    fn parameter_count() {
        let s = NetworkStructure::new(5, vec![50, 50]).unwrap();
        assert_eq!(s.param_count(), 2901);
        let w = init_weights(&s, &mut seed_stream(1, 1));
        assert_eq!(w.theta.len(), 2901);
        assert!(NetworkStructure::new(0, vec![]).is_err());
        assert!(NetworkStructure::new(2, vec![3, 0]).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = NetworkStructure::new(5, vec![50, 50]).unwrap();
        let a = init_weights(&s, &mut seed_stream(9, 4));
        let b = init_weights(&s, &mut seed_stream(9, 4));
        assert_eq!(a, b);
        let mut off = 0;
        for (i, o) in s.layers() {
            let bound = 1.0 / (i as f64).sqrt();
            assert!(a.theta[off..off + i * o].iter().all(|v| v.abs() <= bound));
            assert!(a.theta[off + i * o..off + i * o + o].iter().all(|&v| v == 0.0));
            off += i * o + o;
        }
    }

    #[test]
    fn forward_examples() {
        let s = NetworkStructure::new(5, vec![50, 50]).unwrap();
        assert_eq!(forward(&s, &Weights::zeros(&s), &[0.3; 5]), 0.0);
        let tiny = NetworkStructure::new(1, vec![1]).unwrap();
        let w = Weights {
            theta: vec![1.0, 0.0, 2.0, 1.0],
        };
        assert_eq!(forward(&tiny, &w, &[0.0]), 2.0);
        let big = init_weights(&s, &mut seed_stream(2, 2));
        assert!(forward(&s, &big, &[1e3, -1e3, 1e3, -1e3, 1e3]).is_finite());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (s, w) = small_net(7);
        let b = random_batch(7, 8, 3);
        let (loss, grad) = loss_and_grad(&s, &w, &b);
        assert!((loss - loss_only(&s, &w, &b)).abs() < 1e-12);
        let h = 1e-6;
        for r in 0..w.theta.len() {
            let mut wp = w.clone();
            wp.theta[r] += h;
            let mut wm = w.clone();
            wm.theta[r] -= h;
            let fd = (loss_only(&s, &wp, &b) - loss_only(&s, &wm, &b)) / (2.0 * h);
            let rel = (grad[r] - fd).abs() / grad[r].abs().max(fd.abs()).max(1e-4);
            assert!(rel < 1e-5, "param {r}: {} vs {fd}", grad[r]);
        }
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let (s, w) = small_net(3);
        let mut b = random_batch(3, 6, 3);
        for i in 0..b.len() {
            b.targets[i] = forward(&s, &w, b.input(i));
        }
        let (loss, grad) = loss_and_grad(&s, &w, &b);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_batch_gives_same_loss_and_grad() {
        let (s, w) = small_net(5);
        let b = random_batch(5, 10, 3);
        let mut dup = b.clone();
        for i in 0..b.len() {
            dup.push(b.input(i), b.targets[i]);
        }
        let (l1, g1) = loss_and_grad(&s, &w, &b);
        let (l2, g2) = loss_and_grad(&s, &w, &dup);
        assert!((l1 - l2).abs() < 1e-14);
        for (a, c) in g1.iter().zip(&g2) {
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn sgd_step_examples() {
        let w = Weights { theta: vec![1.0, 1.0] };
        assert_eq!(sgd_step(&w, &[0.0, 0.0], 0.5), w);
        assert_eq!(sgd_step(&w, &[1.0, -1.0], 1.0).theta, vec![0.0, 2.0]);
    }

    #[test]
    fn successive_steps_differ_from_summed_update() {
        // f(x, y) = x^2 y^2 + x; gradients change along the path.
        let grad = |t: &[f64]| vec![2.0 * t[0] * t[1] * t[1] + 1.0, 2.0 * t[0] * t[0] * t[1]];
        let w0 = Weights { theta: vec![1.0, 2.0] };
        let r = 0.1;
        let w1 = sgd_step(&w0, &grad(&w0.theta), r);
        let two_steps = sgd_step(&w1, &grad(&w1.theta), r);
        let g0 = grad(&w0.theta);
        let summed = sgd_step(&w0, &g0.iter().map(|g| 2.0 * g).collect::<Vec<_>>(), r);
        assert_ne!(two_steps, summed);
        let again = sgd_step(&w0, &g0.iter().zip(&g0).map(|(a, b)| a + b).collect::<Vec<_>>(), r);
        assert_eq!(again, summed);
    }

    #[test]
    fn learning_rate_schedule() {
        let s = LrSchedule::standard();
        assert_eq!(learning_rate(&s, 0), 0.01);
        assert!((learning_rate(&s, 40_000) - 0.001).abs() < 1e-15);
        assert!((learning_rate(&s, 150_000) - 0.01 * 0.1f64.powf(3.75)).abs() < 1e-18);
        assert!((learning_rate(&s, 150_000) - 1.7783e-6).abs() < 1e-10);
        assert!(LrSchedule::new(0.0, 0.1, 1).is_err());
        assert!(LrSchedule::new(0.1, 1.5, 1).is_err());
        assert!(LrSchedule::new(0.1, 0.5, 0).is_err());
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut w = Weights { theta: vec![0.0, 0.0] };
        let mut st = OptimizerState::new(Optimizer::adam(), 2);
        st.step(&mut w, &[1.0, -2.0], 0.01);
        // First bias-corrected Adam step has magnitude ~rate.
        assert!((w.theta[0] + 0.01).abs() < 1e-6);
        assert!((w.theta[1] - 0.01).abs() < 1e-6);
        let mut w2 = Weights { theta: vec![1.0, 1.0] };
        let mut sgd = OptimizerState::new(Optimizer::Sgd, 2);
        sgd.step(&mut w2, &[1.0, -1.0], 1.0);
        assert_eq!(w2.theta, vec![0.0, 2.0]);
    }
}
