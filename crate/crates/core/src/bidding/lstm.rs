//! Recurrent bidder. Every task row is fed to a shared LSTM cell whose
//! hidden and cell state persist per task across auction iterations; the
//! new hidden state goes through a small tanh MLP head to give the logit.

use super::features::Observation;
use super::nn::{affine, affine_backward, dot, sigmoid, softplus};
use super::params::{Architecture, PolicyParameters};
use crate::error::{Error, Result};

/// Per-agent recurrent memory: one `(h, c)` pair per task.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecurrentContext {
    pub hidden: usize,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentContext {
    pub fn zeros(n_tasks: usize, hidden: usize) -> Self {
        Self { hidden, h: vec![0.0; n_tasks * hidden], c: vec![0.0; n_tasks * hidden] }
    }

    /// Empty context for stateless policies.
    pub fn none() -> Self {
        Self::default()
    }

    pub fn for_policy(params: &PolicyParameters, n_tasks: usize) -> Self {
        match params.architecture {
            Architecture::Lstm { hidden, .. } => Self::zeros(n_tasks, hidden),
            _ => Self::none(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmLayout {
    pub input: usize,
    pub hidden: usize,
    pub head: usize,
    pub w: usize,
    pub b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl LstmLayout {
    pub fn of(params: &PolicyParameters) -> Result<Self> {
        let Architecture::Lstm { feature_dim, hidden, head_hidden } = params.architecture else {
            return Err(Error::invalid(format!("expected an lstm policy, got {}", params.architecture.tag())));
        };
        let w = 0;
        let b = w + 4 * hidden * (feature_dim + hidden);
        let w1 = b + 4 * hidden;
        let b1 = w1 + head_hidden * hidden;
        let w2 = b1 + head_hidden;
        let b2 = w2 + head_hidden;
        Ok(Self { input: feature_dim, hidden, head: head_hidden, w, b, w1, b1, w2, b2 })
    }

    fn concat(&self) -> usize {
        self.input + self.hidden
    }
}

/// Saved activations of one cell step for one task.
#[derive(Debug, Clone, Default)]
struct StepCache {
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    /// Gate activations `[i, f, g, o]`, each `hidden` long.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    a1: Vec<f64>,
}

/// One cell step; writes the new `(h, c)` in place and returns the logit.
fn step(p: &[f64], l: &LstmLayout, x: &[f64], h: &mut [f64], c: &mut [f64], cache: Option<&mut StepCache>) -> f64 {
    let hd = l.hidden;
    let mut xh = Vec::with_capacity(l.concat());
    xh.extend_from_slice(x);
    xh.extend_from_slice(h);
    let mut z = vec![0.0; 4 * hd];
    affine(&p[l.w..l.b], &p[l.b..l.b + 4 * hd], &xh, &mut z);
    for r in 0..hd {
        z[r] = sigmoid(z[r]);
        z[hd + r] = sigmoid(z[hd + r]);
        z[2 * hd + r] = z[2 * hd + r].tanh();
        z[3 * hd + r] = sigmoid(z[3 * hd + r]);
    }
    let c_prev = if cache.is_some() { c.to_vec() } else { Vec::new() };
    let mut tanh_c = vec![0.0; hd];
    for r in 0..hd {
        c[r] = z[hd + r] * c[r] + z[r] * z[2 * hd + r];
        tanh_c[r] = c[r].tanh();
        h[r] = z[3 * hd + r] * tanh_c[r];
    }
    let mut a1 = vec![0.0; l.head];
    affine(&p[l.w1..l.b1], &p[l.b1..l.w2], h, &mut a1);
    for v in &mut a1 {
        *v = v.tanh();
    }
    let logit = dot(&p[l.w2..l.b2], &a1) + p[l.b2];
    if let Some(cache) = cache {
        *cache = StepCache { xh, c_prev, gates: z, tanh_c, a1 };
    }
    logit
}

fn check(l: &LstmLayout, obs: &Observation, ctx: &RecurrentContext) -> Result<()> {
    if obs.feature_dim != l.input {
        return Err(Error::invalid(format!("observation has {} features, lstm expects {}", obs.feature_dim, l.input)));
    }
    let n = obs.n_tasks * l.hidden;
    if ctx.hidden != l.hidden || ctx.h.len() != n || ctx.c.len() != n {
        return Err(Error::invalid("recurrent context does not match task count and hidden size"));
    }
    Ok(())
}

/// Logits for every task plus the advanced context.
pub fn lstm_logits(params: &PolicyParameters, obs: &Observation, ctx: &RecurrentContext) -> Result<(Vec<f64>, RecurrentContext)> {
    let l = LstmLayout::of(params)?;
    check(&l, obs, ctx)?;
    let mut next = ctx.clone();
    let hd = l.hidden;
    let logits = (0..obs.n_tasks)
        .map(|j| {
            let (h, c) = (&mut next.h[j * hd..(j + 1) * hd], &mut next.c[j * hd..(j + 1) * hd]);
            step(&params.data, &l, obs.row(j), h, c, None)
        })
        .collect();
    Ok((logits, next))
}

/// Mean bids `softplus(logit)` per task plus the advanced context.
pub fn lstm_forward(params: &PolicyParameters, obs: &Observation, ctx: &RecurrentContext) -> Result<(Vec<f64>, RecurrentContext)> {
    let (logits, next) = lstm_logits(params, obs, ctx)?;
    Ok((logits.into_iter().map(softplus).collect(), next))
}

/// Activations of a whole observation sequence, kept for backpropagation
/// through time.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    n_tasks: usize,
    /// `steps[t][j]`.
    steps: Vec<Vec<StepCache>>,
}

/// Runs `obs_seq` from `ctx0`, returning per-step logits and the trace.
pub fn lstm_sequence_forward(
    params: &PolicyParameters,
    obs_seq: &[Observation],
    ctx0: &RecurrentContext,
) -> Result<(Vec<Vec<f64>>, LstmTrace)> {
    let l = LstmLayout::of(params)?;
    let n_tasks = obs_seq.first().map_or(0, |o| o.n_tasks);
    let mut ctx = ctx0.clone();
    let mut logits = Vec::with_capacity(obs_seq.len());
    let mut steps = Vec::with_capacity(obs_seq.len());
    let hd = l.hidden;
    for obs in obs_seq {
        check(&l, obs, &ctx)?;
        if obs.n_tasks != n_tasks {
            return Err(Error::invalid("task count changes within a sequence"));
        }
        let mut row_logits = Vec::with_capacity(n_tasks);
        let mut caches = Vec::with_capacity(n_tasks);
        for j in 0..n_tasks {
            let mut cache = StepCache::default();
            let (h, c) = (&mut ctx.h[j * hd..(j + 1) * hd], &mut ctx.c[j * hd..(j + 1) * hd]);
            row_logits.push(step(&params.data, &l, obs.row(j), h, c, Some(&mut cache)));
            caches.push(cache);
        }
        logits.push(row_logits);
        steps.push(caches);
    }
    Ok((logits, LstmTrace { n_tasks, steps }))
}

/// Backpropagation through time: accumulates into `grad` the parameter
/// gradient of `sum_t sum_j d_logits[t][j] * logit_tj`. The initial
/// context is treated as a constant.
pub fn lstm_sequence_backward(params: &PolicyParameters, trace: &LstmTrace, d_logits: &[Vec<f64>], grad: &mut [f64]) -> Result<()> {
    let l = LstmLayout::of(params)?;
    if d_logits.len() != trace.steps.len() || grad.len() != params.len() {
        return Err(Error::invalid("gradient buffer shape mismatch"));
    }
    let p = &params.data;
    let hd = l.hidden;
    let (g_lstm, g_head) = grad.split_at_mut(l.w1);
    let (g_w, g_b) = g_lstm.split_at_mut(l.b);
    let (g_w1, rest) = g_head.split_at_mut(l.b1 - l.w1);
    let (g_b1, rest) = rest.split_at_mut(l.w2 - l.b1);
    let (g_w2, rest) = rest.split_at_mut(l.b2 - l.w2);
    let g_b2 = &mut rest[0];

    let mut da1 = vec![0.0; l.head];
    let mut dh = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    let mut dxh = vec![0.0; l.concat()];
    for j in 0..trace.n_tasks {
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for t in (0..trace.steps.len()).rev() {
            let cache = &trace.steps[t][j];
            let d = d_logits[t].get(j).copied().unwrap_or(0.0);
            let gates = &cache.gates;
            let h: Vec<f64> = (0..hd).map(|r| gates[3 * hd + r] * cache.tanh_c[r]).collect();

            dh.copy_from_slice(&dh_next);
            if d != 0.0 {
                *g_b2 += d;
                for r in 0..l.head {
                    g_w2[r] += d * cache.a1[r];
                    da1[r] = d * p[l.w2 + r] * (1.0 - cache.a1[r] * cache.a1[r]);
                }
                affine_backward(&p[l.w1..l.b1], &h, &da1, g_w1, g_b1, Some(&mut dh));
            }

            for r in 0..hd {
                let (i, f, g, o) = (gates[r], gates[hd + r], gates[2 * hd + r], gates[3 * hd + r]);
                let tc = cache.tanh_c[r];
                let d_o = dh[r] * tc;
                let dc = dc_next[r] + dh[r] * o * (1.0 - tc * tc);
                dz[r] = dc * g * i * (1.0 - i);
                dz[hd + r] = dc * cache.c_prev[r] * f * (1.0 - f);
                dz[2 * hd + r] = dc * i * (1.0 - g * g);
                dz[3 * hd + r] = d_o * o * (1.0 - o);
                dc_next[r] = dc * f;
            }
            dxh.fill(0.0);
            affine_backward(&p[l.w..l.b], &cache.xh, &dz, g_w, g_b, Some(&mut dxh));
            dh_next.copy_from_slice(&dxh[l.input..]);
        }
    }
    Ok(())
}
