//! The six-term certificate loss and its exact parameter gradient.
//!
//! For a ReLU network the Lie derivative `∇V(x)·f` equals the forward
//! propagation of the tangent `f` through the same activation pattern as `x`.
//! Its derivative with respect to layer `k` weights is therefore
//! `δ_k t_{k−1}ᵀ`, where `δ_k` are the ordinary backward deltas of `V(x)` and
//! `t_{k−1}` is the propagated tangent; it has no bias component. A sample
//! whose loss is `a·V(x) + b·L_fV(x)` locally contributes
//! `δ_k (a·h_{k−1} + b·t_{k−1})ᵀ` to the weights and `a·δ_k` to the biases.

use rayon::prelude::*;

use super::{axpy, CertificateConfig, Label, LabeledState, MlpCertificate};
use crate::dynamics::SystemSpec;
use crate::error::{check_dim, Error, Result};

/// Batch means of the individual loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub goal: f64,
    pub positivity: f64,
    pub safe: f64,
    pub unsafe_: f64,
    pub lie: f64,
    pub discrete: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.goal + self.positivity + self.safe + self.unsafe_ + self.lie + self.discrete
    }

    fn add(&mut self, o: &LossBreakdown) {
        self.goal += o.goal;
        self.positivity += o.positivity;
        self.safe += o.safe;
        self.unsafe_ += o.unsafe_;
        self.lie += o.lie;
        self.discrete += o.discrete;
    }

    fn scale(&mut self, s: f64) {
        self.goal *= s;
        self.positivity *= s;
        self.safe *= s;
        self.unsafe_ *= s;
        self.lie *= s;
        self.discrete *= s;
    }
}

const SHARD: usize = 64;

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 { z } else { 0.0 }
}

/// Per-shard working memory.
struct Work {
    pre: Vec<f64>,
    post: Vec<f64>,
    delta: Vec<f64>,
    tangent: Vec<f64>,
    next_pre: Vec<f64>,
    next_post: Vec<f64>,
    next_delta: Vec<f64>,
    xgrad: Vec<f64>,
    f: Vec<f64>,
}

impl Work {
    fn new(cert: &MlpCertificate) -> Self {
        let units: usize = cert.layer_sizes().iter().sum();
        let n = cert.layer_sizes()[0];
        Work {
            pre: vec![0.0; units],
            post: vec![0.0; units],
            delta: vec![0.0; units],
            tangent: vec![0.0; units],
            next_pre: vec![0.0; units],
            next_post: vec![0.0; units],
            next_delta: vec![0.0; units],
            xgrad: vec![0.0; n],
            f: vec![0.0; n],
        }
    }
}

impl MlpCertificate {
    fn forward_buf(&self, x: &[f64], pre: &mut [f64], post: &mut [f64], delta: &mut [f64]) -> f64 {
        let mut b = super::Buffers { pre, post, delta };
        self.forward_into(x, &mut b)
    }

    fn backward_buf(&self, pre: &mut [f64], post: &mut [f64], delta: &mut [f64], grad: &mut [f64]) {
        let mut b = super::Buffers { pre, post, delta };
        self.backward_into(&mut b, grad)
    }

    /// Propagates the standardized tangent of `f` through the activation
    /// pattern stored in `pre`; returns the output tangent, `L_fV`.
    fn tangent_forward(&self, f: &[f64], pre: &[f64], tangent: &mut [f64]) -> f64 {
        let n = self.layer_sizes()[0];
        for i in 0..n {
            tangent[i] = f[i] / self.input_scale[i];
        }
        let last = self.layout.len() - 1;
        let mut in_off = 0;
        let mut out_off = n;
        for (l, lay) in self.layout.iter().enumerate() {
            let (before, after) = tangent.split_at_mut(out_off);
            let input = &before[in_off..in_off + lay.inputs];
            let out = &mut after[..lay.outputs];
            out.fill(0.0);
            let w = &self.params[lay.weights..lay.weights + lay.inputs * lay.outputs];
            for (k, &tk) in input.iter().enumerate() {
                if tk != 0.0 {
                    axpy(tk, &w[k * lay.outputs..(k + 1) * lay.outputs], out);
                }
            }
            if l != last {
                for (o, &z) in out.iter_mut().zip(&pre[out_off..out_off + lay.outputs]) {
                    if z <= 0.0 {
                        *o = 0.0;
                    }
                }
            }
            in_off = out_off;
            out_off += lay.outputs;
        }
        tangent[out_off - 1]
    }

    /// Adds `δ_k (a·h_{k−1} + b·t_{k−1})ᵀ` and `a·δ_k` to `grad`.
    fn accumulate(&self, post: &[f64], delta: &[f64], tangent: Option<&[f64]>, a: f64, b: f64, grad: &mut [f64]) {
        let mut in_off = 0;
        let mut out_off = self.layer_sizes()[0];
        for lay in &self.layout {
            let d = &delta[out_off..out_off + lay.outputs];
            for k in 0..lay.inputs {
                let mut coef = a * post[in_off + k];
                if let Some(t) = tangent {
                    coef += b * t[in_off + k];
                }
                if coef != 0.0 {
                    let start = lay.weights + k * lay.outputs;
                    axpy(coef, d, &mut grad[start..start + lay.outputs]);
                }
            }
            if a != 0.0 {
                axpy(a, d, &mut grad[lay.bias..lay.bias + lay.outputs]);
            }
            in_off = out_off;
            out_off += lay.outputs;
        }
    }
}

fn validate(cert: &MlpCertificate, cfg: &CertificateConfig, sys: &SystemSpec, batch: &[LabeledState]) -> Result<()> {
    cfg.validate()?;
    check_dim("certificate input", cert.layer_sizes()[0], sys.n())?;
    for (i, s) in batch.iter().enumerate() {
        check_dim("labeled state", sys.n(), s.x.len())?;
        if !s.x.is_finite() {
            return Err(Error::NonFinite("labeled state"));
        }
        if let Some(u) = &s.control {
            check_dim("labeled control", sys.m(), u.len())?;
            if !u.is_finite() {
                return Err(Error::NonFinite("labeled control"));
            }
            if cfg.alpha2 > 0.0 && s.successor.is_none() {
                return Err(Error::Contract(format!(
                    "sample {i} carries a control but no successor while alpha2 > 0"
                )));
            }
        }
        if let Some(xn) = &s.successor {
            check_dim("successor state", sys.n(), xn.len())?;
            if !xn.is_finite() {
                return Err(Error::NonFinite("successor state"));
            }
        }
        if s.label == Label::Interior {
            if cfg.alpha1 > 0.0 && s.control.is_none() {
                return Err(Error::Contract(format!("interior sample {i} has no control")));
            }
            if cfg.alpha2 > 0.0 && s.successor.is_none() {
                return Err(Error::Contract(format!("interior sample {i} has no successor")));
            }
        }
    }
    Ok(())
}

/// Loss terms of one sample, optionally accumulating its gradient.
fn sample_terms(
    cert: &MlpCertificate,
    cfg: &CertificateConfig,
    sys: &SystemSpec,
    s: &LabeledState,
    w: &mut Work,
    grad: Option<&mut [f64]>,
) -> LossBreakdown {
    let mut out = LossBreakdown::default();
    let v = cert.forward_buf(&s.x, &mut w.pre, &mut w.post, &mut w.delta);

    // d(loss)/dV(x), d(loss)/dL_fV(x), d(loss)/dV(x⁺)
    let (mut a, mut b, mut a_next) = (0.0, 0.0, 0.0);

    if s.label == Label::Goal {
        out.goal = v.abs();
        a += if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    out.positivity = relu(-v);
    if v < 0.0 {
        a -= 1.0;
    }
    match s.label {
        Label::Goal | Label::Safe => {
            out.safe = relu(v - cfg.c);
            if v > cfg.c {
                a += 1.0;
            }
        }
        Label::Unsafe => {
            out.unsafe_ = relu(cfg.c - v);
            if v < cfg.c {
                a -= 1.0;
            }
        }
        Label::Interior => {}
    }

    let mut lie_active = false;
    if cfg.alpha1 > 0.0 {
        if let Some(u) = &s.control {
            sys.model.eval(s.time, &s.x, u, &mut w.f);
            let lie = cert.tangent_forward(&w.f, &w.pre, &mut w.tangent);
            let arg = lie + cfg.lambda * v + cfg.eps;
            out.lie = cfg.alpha1 * relu(arg);
            if arg > 0.0 {
                lie_active = true;
                b += cfg.alpha1;
                a += cfg.alpha1 * cfg.lambda;
            }
        }
    }

    let mut next_active = false;
    if cfg.alpha2 > 0.0 && s.control.is_some() {
        if let Some(xn) = &s.successor {
            let vn = cert.forward_buf(xn, &mut w.next_pre, &mut w.next_post, &mut w.next_delta);
            let arg = vn - v + cfg.lambda * cfg.dt * v + cfg.eps;
            out.discrete = cfg.alpha2 * relu(arg);
            if arg > 0.0 {
                next_active = true;
                a_next += cfg.alpha2;
                a += cfg.alpha2 * (cfg.lambda * cfg.dt - 1.0);
            }
        }
    }

    if let Some(grad) = grad {
        if a != 0.0 || b != 0.0 {
            cert.backward_buf(&mut w.pre, &mut w.post, &mut w.delta, &mut w.xgrad);
            let t = if lie_active { Some(&w.tangent[..]) } else { None };
            cert.accumulate(&w.post, &w.delta, t, a, b, grad);
        }
        if next_active {
            cert.backward_buf(&mut w.next_pre, &mut w.next_post, &mut w.next_delta, &mut w.xgrad);
            cert.accumulate(&w.next_post, &w.next_delta, None, a_next, 0.0, grad);
        }
    }
    out
}

fn run(
    cert: &MlpCertificate,
    cfg: &CertificateConfig,
    sys: &SystemSpec,
    batch: &[LabeledState],
    want_grad: bool,
) -> Result<(LossBreakdown, Vec<f64>)> {
    validate(cert, cfg, sys, batch)?;
    let np = if want_grad { cert.num_params() } else { 0 };
    if batch.is_empty() {
        return Ok((LossBreakdown::default(), vec![0.0; np]));
    }
    // Fixed shards reduced in index order keep the result independent of
    // the thread count.
    let shards: Vec<(LossBreakdown, Vec<f64>)> = batch
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut work = Work::new(cert);
            let mut grad = vec![0.0; np];
            let mut sum = LossBreakdown::default();
            for s in chunk {
                let g = if want_grad { Some(&mut grad[..]) } else { None };
                sum.add(&sample_terms(cert, cfg, sys, s, &mut work, g));
            }
            (sum, grad)
        })
        .collect();
    let mut total = LossBreakdown::default();
    let mut grad = vec![0.0; np];
    for (s, g) in &shards {
        total.add(s);
        axpy(1.0, g, &mut grad);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    for g in &mut grad {
        *g *= inv;
    }
    if !total.total().is_finite() {
        return Err(Error::NonFinite("certificate loss"));
    }
    Ok((total, grad))
}

/// Batch-mean loss with each term reported separately.
pub fn clbf_loss_breakdown(
    cert: &MlpCertificate,
    cfg: &CertificateConfig,
    sys: &SystemSpec,
    batch: &[LabeledState],
) -> Result<LossBreakdown> {
    Ok(run(cert, cfg, sys, batch, false)?.0)
}

/// Batch-mean certificate loss.
pub fn clbf_loss(cert: &MlpCertificate, cfg: &CertificateConfig, sys: &SystemSpec, batch: &[LabeledState]) -> Result<f64> {
    Ok(clbf_loss_breakdown(cert, cfg, sys, batch)?.total())
}

/// Loss and its gradient with respect to [`MlpCertificate::params`].
pub fn clbf_loss_grad(
    cert: &MlpCertificate,
    cfg: &CertificateConfig,
    sys: &SystemSpec,
    batch: &[LabeledState],
) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) = run(cert, cfg, sys, batch, true)?;
    Ok((loss.total(), grad))
}
