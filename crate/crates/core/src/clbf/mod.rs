//! Neural control Lyapunov barrier function (CLBF).
//!
//! The certificate `V` is a ReLU multilayer perceptron with a linear scalar
//! output. Because the network is piecewise linear in its input, both the
//! input gradient and the Lie derivative `∇V(x)·f(x,u)` are computed exactly
//! by reverse accumulation, and the parameter gradient of the Lie derivative
//! reuses the same backward deltas (see [`loss`]).

pub mod checkpoint;
pub mod loss;

use std::cell::RefCell;

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlVector, StateVector, SystemSpec};
use crate::error::{check_dim, Error, Result};
use crate::rng::StreamKey;

pub use checkpoint::Checkpoint;
pub use loss::{clbf_loss, clbf_loss_grad, LossBreakdown};

/// A scalar potential with an exact gradient.
pub trait Certificate: Send + Sync {
    fn input_dim(&self) -> usize;

    /// `V(x)`.
    fn value_at(&self, x: &[f64]) -> f64;

    /// `V(x)`, writing `∇V(x)` into `grad`.
    fn value_and_grad_at(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// `(V(x), ∇V(x)·dir)`.
    fn value_and_directional_at(&self, x: &[f64], dir: &[f64]) -> (f64, f64) {
        let mut g = vec![0.0; x.len()];
        let v = self.value_and_grad_at(x, &mut g);
        (v, dot(&g, dir))
    }
}

/// Hyperparameters of the certificate conditions and training loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateConfig {
    /// Safety level: `V ≤ c` on the safe set, `V > c` on the unsafe set.
    pub c: f64,
    /// Dissipation rate.
    pub lambda: f64,
    /// Buffer added inside both stability hinges.
    pub eps: f64,
    /// Weight of the continuous-time (Lie derivative) stability hinge.
    pub alpha1: f64,
    /// Weight of the discrete-time stability hinge.
    pub alpha2: f64,
    /// Time between a state and its successor in the discrete hinge, which
    /// reads `[V(x⁺) − V(x) + λ·dt·V(x) + ε]⁺`. Set to 1 for the undiscretized form.
    pub dt: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig {
            c: 1.0,
            lambda: 1.0,
            eps: 0.01,
            alpha1: 1.0,
            alpha2: 1.0,
            dt: 0.1,
        }
    }
}

impl CertificateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::config("certificate.c", "must be > 0"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::config("certificate.lambda", "must be > 0"));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::config("certificate.eps", "must be >= 0"));
        }
        if !(self.alpha1 >= 0.0) || !(self.alpha2 >= 0.0) {
            return Err(Error::config("certificate.alpha1", "loss weights must be >= 0"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("certificate.dt", "must be > 0"));
        }
        Ok(())
    }
}

/// Role of a training state in the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Goal,
    Safe,
    Unsafe,
    Interior,
}

/// A training state, optionally with the control applied there and the
/// resulting successor state.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledState {
    pub x: StateVector,
    pub label: Label,
    pub control: Option<ControlVector>,
    pub successor: Option<StateVector>,
    /// Time at which `control` was applied; only time-varying systems care.
    pub time: f64,
}

impl LabeledState {
    pub fn goal(x: StateVector) -> Self {
        LabeledState {
            x,
            label: Label::Goal,
            control: None,
            successor: None,
            time: 0.0,
        }
    }

    pub fn transition(x: StateVector, label: Label, control: ControlVector, successor: StateVector, time: f64) -> Self {
        LabeledState {
            x,
            label,
            control: Some(control),
            successor: Some(successor),
            time,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerLayout {
    pub inputs: usize,
    pub outputs: usize,
    /// Offset of the weight block; stored column-major (`k * outputs + j`
    /// holds the weight from input `k` to output `j`).
    pub weights: usize,
    pub bias: usize,
}

/// ReLU multilayer perceptron with a scalar linear output.
///
/// The input is standardized as `(x − input_offset) / input_scale` before the
/// first layer; the standardization is fixed, not trained.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpCertificate {
    sizes: Vec<usize>,
    pub(crate) params: Vec<f64>,
    pub(crate) layout: Vec<LayerLayout>,
    pub input_offset: Vec<f64>,
    pub input_scale: Vec<f64>,
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl MlpCertificate {
    /// All-zero network with the given layer sizes (input first, output 1 last).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("network.layer_sizes", "need at least input and output sizes"));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::config("network.layer_sizes", "output dimension must be 1"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::config("network.layer_sizes", "layer sizes must be positive"));
        }
        let mut layout = Vec::with_capacity(sizes.len() - 1);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            let weights = offset;
            offset += inputs * outputs;
            let bias = offset;
            offset += outputs;
            layout.push(LayerLayout {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        Ok(MlpCertificate {
            sizes: sizes.to_vec(),
            params: vec![0.0; offset],
            layout,
            input_offset: vec![0.0; sizes[0]],
            input_scale: vec![1.0; sizes[0]],
        })
    }

    /// Input dimension `n`, `hidden` layers of `width` units.
    pub fn layer_sizes_for(n: usize, hidden: usize, width: usize) -> Vec<usize> {
        let mut sizes = vec![n];
        sizes.extend(std::iter::repeat_n(width, hidden));
        sizes.push(1);
        sizes
    }

    /// Kaiming-uniform initialization: hidden weights `U(±√(6/fan_in))`,
    /// output weights `U(±√(3/fan_in))`, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut cert = Self::zeros(sizes)?;
        let mut rng = StreamKey::new(seed).child(0x1417).rng();
        let last = cert.layout.len() - 1;
        for (l, lay) in cert.layout.iter().enumerate() {
            let gain = if l == last { 3.0 } else { 6.0 };
            let bound = (gain / lay.inputs as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut cert.params[lay.weights..lay.weights + lay.inputs * lay.outputs] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(cert)
    }

    /// Initialization for a system: standardizes inputs around the goal using
    /// the half-widths of the system's domain box.
    pub fn for_system(sys: &SystemSpec, hidden: usize, width: usize, seed: u64) -> Result<Self> {
        let mut cert = Self::init(&Self::layer_sizes_for(sys.n(), hidden, width), seed)?;
        cert.input_offset = sys.goal.0.clone();
        cert.input_scale = sys
            .domain_lo
            .iter()
            .zip(&sys.domain_hi)
            .map(|(lo, hi)| {
                let half = 0.5 * (hi - lo);
                if half > 0.0 { half } else { 1.0 }
            })
            .collect();
        Ok(cert)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.layout.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight from input `k` to output `j` of layer `l`.
    pub fn weight(&self, l: usize, j: usize, k: usize) -> f64 {
        let lay = &self.layout[l];
        self.params[lay.weights + k * lay.outputs + j]
    }

    pub fn set_weight(&mut self, l: usize, j: usize, k: usize, value: f64) {
        let lay = &self.layout[l];
        self.params[lay.weights + k * lay.outputs + j] = value;
    }

    pub fn bias(&self, l: usize, j: usize) -> f64 {
        self.params[self.layout[l].bias + j]
    }

    pub fn set_bias(&mut self, l: usize, j: usize, value: f64) {
        let b = self.layout[l].bias;
        self.params[b + j] = value;
    }

    /// Flat index of weight `(l, j, k)` in [`params`](Self::params).
    pub fn weight_index(&self, l: usize, j: usize, k: usize) -> usize {
        let lay = &self.layout[l];
        lay.weights + k * lay.outputs + j
    }

    pub fn bias_index(&self, l: usize, j: usize) -> usize {
        self.layout[l].bias + j
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn scratch_len(&self) -> usize {
        // pre-activations, post-activations and deltas for every layer + input copy
        let units: usize = self.sizes.iter().sum();
        3 * units
    }

    /// Forward pass writing standardized input, pre- and post-activations into
    /// `buf`; returns `V(x)`. Layout of `buf` per layer follows `self.sizes`.
    pub(crate) fn forward_into(&self, x: &[f64], buf: &mut Buffers<'_>) -> f64 {
        let h0 = &mut buf.post[..self.sizes[0]];
        for (i, h) in h0.iter_mut().enumerate() {
            *h = (x[i] - self.input_offset[i]) / self.input_scale[i];
        }
        let last = self.layout.len() - 1;
        let mut in_off = 0;
        let mut out_off = self.sizes[0];
        for (l, lay) in self.layout.iter().enumerate() {
            let (before, after) = buf.post.split_at_mut(out_off);
            let input = &before[in_off..in_off + lay.inputs];
            let pre = &mut buf.pre[out_off..out_off + lay.outputs];
            pre.copy_from_slice(&self.params[lay.bias..lay.bias + lay.outputs]);
            let w = &self.params[lay.weights..lay.weights + lay.inputs * lay.outputs];
            for (k, &hk) in input.iter().enumerate() {
                if hk != 0.0 {
                    axpy(hk, &w[k * lay.outputs..(k + 1) * lay.outputs], pre);
                }
            }
            let post = &mut after[..lay.outputs];
            if l == last {
                post.copy_from_slice(pre);
            } else {
                for (p, &z) in post.iter_mut().zip(pre.iter()) {
                    *p = if z > 0.0 { z } else { 0.0 };
                }
            }
            in_off = out_off;
            out_off += lay.outputs;
        }
        buf.post[out_off - 1]
    }

    /// Backward pass from a completed forward pass: fills `buf.delta` with
    /// `∂V/∂(pre-activation)` for every layer and writes `∇_x V` into `grad`.
    pub(crate) fn backward_into(&self, buf: &mut Buffers<'_>, grad: &mut [f64]) {
        let total: usize = self.sizes.iter().sum();
        let out_index = total - 1;
        buf.delta[out_index] = 1.0;
        let mut out_off = out_index;
        for l in (0..self.layout.len()).rev() {
            let lay = &self.layout[l];
            let in_off = out_off - lay.inputs;
            let w = &self.params[lay.weights..lay.weights + lay.inputs * lay.outputs];
            let (lower, upper) = buf.delta.split_at_mut(out_off);
            let delta_out = &upper[..lay.outputs];
            let delta_in = &mut lower[in_off..];
            for k in 0..lay.inputs {
                let g = dot(&w[k * lay.outputs..(k + 1) * lay.outputs], delta_out);
                // Below the first layer there is no activation to gate.
                delta_in[k] = if l == 0 || buf.pre[in_off + k] > 0.0 { g } else { 0.0 };
            }
            out_off = in_off;
        }
        for (i, g) in grad.iter_mut().enumerate() {
            *g = buf.delta[i] / self.input_scale[i];
        }
    }

    pub(crate) fn with_buffers<R>(&self, f: impl FnOnce(&mut Buffers<'_>) -> R) -> R {
        let len = self.scratch_len();
        SCRATCH.with(|cell| {
            let mut v = cell.borrow_mut();
            if v.len() < len {
                v.resize(len, 0.0);
            }
            let units = len / 3;
            let (pre, rest) = v[..len].split_at_mut(units);
            let (post, delta) = rest.split_at_mut(units);
            let mut bufs = Buffers { pre, post, delta };
            f(&mut bufs)
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim("certificate input", self.sizes[0], x.len())
    }

    /// `V(x)`.
    pub fn value(&self, x: &StateVector) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.value_at(x))
    }

    /// `∇V(x)`; at a ReLU kink the inactive branch is taken.
    pub fn grad_value(&self, x: &StateVector) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut g = vec![0.0; x.len()];
        self.value_and_grad_at(x, &mut g);
        Ok(g)
    }
}

pub(crate) struct Buffers<'a> {
    pub pre: &'a mut [f64],
    pub post: &'a mut [f64],
    pub delta: &'a mut [f64],
}

impl Certificate for MlpCertificate {
    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn value_at(&self, x: &[f64]) -> f64 {
        self.with_buffers(|b| self.forward_into(x, b))
    }

    fn value_and_grad_at(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.with_buffers(|b| {
            let v = self.forward_into(x, b);
            self.backward_into(b, grad);
            v
        })
    }

    /// Forward pass carrying the tangent alongside the activations.
    fn value_and_directional_at(&self, x: &[f64], dir: &[f64]) -> (f64, f64) {
        self.with_buffers(|b| {
            let n = self.sizes[0];
            for i in 0..n {
                b.post[i] = (x[i] - self.input_offset[i]) / self.input_scale[i];
                b.delta[i] = dir[i] / self.input_scale[i];
            }
            let last = self.layout.len() - 1;
            let mut in_off = 0;
            let mut out_off = n;
            for (l, lay) in self.layout.iter().enumerate() {
                let (h_in, h_out) = b.post.split_at_mut(out_off);
                let (t_in, t_out) = b.delta.split_at_mut(out_off);
                let h_in = &h_in[in_off..in_off + lay.inputs];
                let t_in = &t_in[in_off..in_off + lay.inputs];
                let h_out = &mut h_out[..lay.outputs];
                let t_out = &mut t_out[..lay.outputs];
                h_out.copy_from_slice(&self.params[lay.bias..lay.bias + lay.outputs]);
                t_out.fill(0.0);
                let w = &self.params[lay.weights..lay.weights + lay.inputs * lay.outputs];
                for k in 0..lay.inputs {
                    let col = &w[k * lay.outputs..(k + 1) * lay.outputs];
                    let (hk, tk) = (h_in[k], t_in[k]);
                    if hk != 0.0 {
                        axpy(hk, col, h_out);
                    }
                    if tk != 0.0 {
                        axpy(tk, col, t_out);
                    }
                }
                if l != last {
                    for (h, t) in h_out.iter_mut().zip(t_out.iter_mut()) {
                        if *h <= 0.0 {
                            *h = 0.0;
                            *t = 0.0;
                        }
                    }
                }
                in_off = out_off;
                out_off += lay.outputs;
            }
            (b.post[out_off - 1], b.delta[out_off - 1])
        })
    }
}

impl<C: Certificate + ?Sized> Certificate for &C {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn value_at(&self, x: &[f64]) -> f64 {
        (**self).value_at(x)
    }
    fn value_and_grad_at(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).value_and_grad_at(x, grad)
    }
    fn value_and_directional_at(&self, x: &[f64], dir: &[f64]) -> (f64, f64) {
        (**self).value_and_directional_at(x, dir)
    }
}

/// `L_f V(x, u) = ∇V(x) · f(x, u)` at time zero.
pub fn lie_derivative(cert: &dyn Certificate, sys: &SystemSpec, x: &StateVector, u: &ControlVector) -> Result<f64> {
    lie_derivative_at(cert, sys, 0.0, x, u)
}

pub fn lie_derivative_at(
    cert: &dyn Certificate,
    sys: &SystemSpec,
    t: f64,
    x: &StateVector,
    u: &ControlVector,
) -> Result<f64> {
    check_dim("certificate input", cert.input_dim(), x.len())?;
    let f = sys.eval_dynamics_at(t, x, u)?;
    let mut g = vec![0.0; x.len()];
    cert.value_and_grad_at(x, &mut g);
    Ok(dot(&g, &f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    /// `V = θ² + θ̇²`, used as a hand-checkable certificate.
    struct Quadratic;
    impl Certificate for Quadratic {
        fn input_dim(&self) -> usize {
            2
        }
        fn value_at(&self, x: &[f64]) -> f64 {
            x[0] * x[0] + x[1] * x[1]
        }
        fn value_and_grad_at(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = 2.0 * x[0];
            grad[1] = 2.0 * x[1];
            self.value_at(x)
        }
    }

    fn tiny_net() -> MlpCertificate {
        // 1 -> 1 (ReLU) -> 1 with W1 = [2], output weight 3.
        let mut net = MlpCertificate::zeros(&[1, 1, 1]).unwrap();
        net.set_weight(0, 0, 0, 2.0);
        net.set_weight(1, 0, 0, 3.0);
        net
    }

    #[test]
    fn zero_network_is_identically_zero() {
        let net = MlpCertificate::zeros(&[3, 8, 8, 1]).unwrap();
        let x = StateVector(vec![0.3, -1.2, 4.0]);
        assert_eq!(net.value(&x).unwrap(), 0.0);
        assert_eq!(net.grad_value(&x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_forward_pass() {
        let net = tiny_net();
        assert_eq!(net.value(&StateVector(vec![1.0])).unwrap(), 6.0);
        assert_eq!(net.value(&StateVector(vec![-1.0])).unwrap(), 0.0);
        assert_eq!(net.grad_value(&StateVector(vec![1.0])).unwrap(), vec![6.0]);
        assert_eq!(net.grad_value(&StateVector(vec![-1.0])).unwrap(), vec![0.0]);
    }

    #[test]
    fn kink_takes_inactive_branch() {
        let net = tiny_net();
        assert_eq!(net.grad_value(&StateVector(vec![0.0])).unwrap(), vec![0.0]);
    }

    #[test]
    fn linear_network_gradient_is_its_weights() {
        // No hidden layer: V = w·x + b.
        let mut net = MlpCertificate::zeros(&[3, 1]).unwrap();
        let w = [0.5, -2.0, 1.25];
        for (k, wk) in w.iter().enumerate() {
            net.set_weight(0, 0, k, *wk);
        }
        net.set_bias(0, 0, 0.75);
        let x = StateVector(vec![1.0, 2.0, 3.0]);
        assert_abs_diff_eq!(net.value(&x).unwrap(), 0.5 - 4.0 + 3.75 + 0.75, epsilon = 1e-14);
        assert_eq!(net.grad_value(&x).unwrap(), w.to_vec());
    }

    #[test]
    fn input_standardization_enters_the_gradient() {
        let mut net = MlpCertificate::zeros(&[1, 1]).unwrap();
        net.set_weight(0, 0, 0, 1.0);
        net.input_offset = vec![1.0];
        net.input_scale = vec![2.0];
        assert_eq!(net.value(&StateVector(vec![5.0])).unwrap(), 2.0);
        assert_eq!(net.grad_value(&StateVector(vec![5.0])).unwrap(), vec![0.5]);
    }

    #[test]
    fn shape_errors() {
        let net = MlpCertificate::zeros(&[2, 4, 1]).unwrap();
        assert!(net.value(&StateVector(vec![1.0])).is_err());
        assert!(MlpCertificate::zeros(&[2, 4, 2]).is_err());
        assert!(MlpCertificate::zeros(&[2]).is_err());
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let sizes = MlpCertificate::layer_sizes_for(2, 3, 64);
        assert_eq!(sizes, vec![2, 64, 64, 64, 1]);
        let a = MlpCertificate::init(&sizes, 3).unwrap();
        let b = MlpCertificate::init(&sizes, 3).unwrap();
        let c = MlpCertificate::init(&sizes, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.num_params(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
        let bound = (6.0f64 / 2.0).sqrt();
        for j in 0..64 {
            for k in 0..2 {
                assert!(a.weight(0, j, k).abs() <= bound);
            }
        }
    }

    #[test]
    fn directional_pass_matches_gradient() {
        let net = MlpCertificate::init(&[3, 16, 16, 1], 4).unwrap();
        let x = [0.2, -0.4, 1.1];
        let dir = [1.5, 0.3, -2.0];
        let mut g = vec![0.0; 3];
        let v = net.value_and_grad_at(&x, &mut g);
        let (v2, d) = net.value_and_directional_at(&x, &dir);
        assert_eq!(v, v2);
        assert_abs_diff_eq!(d, dot(&g, &dir), epsilon = 1e-12);
    }

    #[test]
    fn lie_derivative_cases() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let zero = MlpCertificate::zeros(&[2, 4, 1]).unwrap();
        let x = StateVector(vec![0.2, -0.1]);
        let u = ControlVector(vec![1.0]);
        assert_eq!(lie_derivative(&zero, &sys, &x, &u).unwrap(), 0.0);

        let random = MlpCertificate::init(&[2, 16, 1], 1).unwrap();
        let at_goal = lie_derivative(&random, &sys, &sys.goal, &sys.u_eq).unwrap();
        assert_eq!(at_goal, 0.0);

        // 2(π/6)·1 + 2·1·(−9.81·sin(π/6))
        let l = lie_derivative(&Quadratic, &sys, &StateVector(vec![PI / 6.0, 1.0]), &ControlVector(vec![0.0])).unwrap();
        assert_abs_diff_eq!(l, 2.0 * PI / 6.0 - 9.81, epsilon = 1e-12);
        assert_abs_diff_eq!(l, -8.7628, epsilon = 1e-4);
    }
}
