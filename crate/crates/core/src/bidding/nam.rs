//! Neural additive bidder: the logit of a task is the sum of independent
//! univariate subnetworks, one per observation feature, plus a bias.

use super::features::Observation;
use super::nn::{softplus, sigmoid};
use super::params::{Architecture, PolicyParameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct NamLayout {
    pub features: usize,
    pub hidden: usize,
    block: usize,
    pub out_bias: usize,
}

impl NamLayout {
    pub fn of(params: &PolicyParameters) -> Result<Self> {
        let Architecture::Nam { feature_dim, hidden } = params.architecture else {
            return Err(Error::invalid(format!("expected a nam policy, got {}", params.architecture.tag())));
        };
        let block = hidden * hidden + 4 * hidden + 1;
        Ok(Self {
            features: feature_dim,
            hidden,
            block,
            out_bias: feature_dim * block,
        })
    }

    #[inline]
    fn w1(&self, k: usize) -> usize {
        k * self.block
    }
    #[inline]
    fn b1(&self, k: usize) -> usize {
        self.w1(k) + self.hidden
    }
    #[inline]
    fn w2(&self, k: usize) -> usize {
        self.b1(k) + self.hidden
    }
    #[inline]
    fn b2(&self, k: usize) -> usize {
        self.w2(k) + self.hidden * self.hidden
    }
    #[inline]
    fn w3(&self, k: usize) -> usize {
        self.b2(k) + self.hidden
    }
    #[inline]
    fn b3(&self, k: usize) -> usize {
        self.w3(k) + self.hidden
    }
}

struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
}

/// Output of subnetwork `k` at input `x`, optionally keeping activations.
fn subnet(p: &[f64], l: &NamLayout, k: usize, x: f64, keep: Option<&mut Activations>) -> f64 {
    let h = l.hidden;
    let mut h1 = vec![0.0; h];
    for (r, v) in h1.iter_mut().enumerate() {
        *v = (p[l.w1(k) + r] * x + p[l.b1(k) + r]).tanh();
    }
    let mut h2 = vec![0.0; h];
    super::nn::affine(&p[l.w2(k)..l.w2(k) + h * h], &p[l.b2(k)..l.b2(k) + h], &h1, &mut h2);
    for v in &mut h2 {
        *v = v.tanh();
    }
    let g = super::nn::dot(&p[l.w3(k)..l.w3(k) + h], &h2) + p[l.b3(k)];
    if let Some(acts) = keep {
        acts.h1 = h1;
        acts.h2 = h2;
    }
    g
}

fn check_obs(l: &NamLayout, obs: &Observation) -> Result<()> {
    if obs.feature_dim != l.features {
        return Err(Error::invalid(format!(
            "observation has {} features, nam expects {}",
            obs.feature_dim, l.features
        )));
    }
    Ok(())
}

/// Per-task, per-feature subnetwork outputs `g_k(x_jk)`, row-major.
pub fn nam_contributions(params: &PolicyParameters, obs: &Observation) -> Result<Vec<f64>> {
    let l = NamLayout::of(params)?;
    check_obs(&l, obs)?;
    let mut out = Vec::with_capacity(obs.n_tasks * l.features);
    for j in 0..obs.n_tasks {
        for (k, &x) in obs.row(j).iter().enumerate() {
            out.push(subnet(&params.data, &l, k, x, None));
        }
    }
    Ok(out)
}

/// Pre-transform outputs: `sum_k g_k(x_jk) + bias` per task.
pub fn nam_logits(params: &PolicyParameters, obs: &Observation) -> Result<Vec<f64>> {
    let l = NamLayout::of(params)?;
    let contributions = nam_contributions(params, obs)?;
    let bias = params.data[l.out_bias];
    Ok(contributions.chunks(l.features).map(|row| row.iter().sum::<f64>() + bias).collect())
}

/// Mean bids `softplus(logit)` per task.
pub fn nam_forward(params: &PolicyParameters, obs: &Observation) -> Result<Vec<f64>> {
    Ok(nam_logits(params, obs)?.into_iter().map(softplus).collect())
}

/// Accumulates into `grad` the parameter gradient of `sum_j d_logits[j] *
/// logit_j`. Returns the gradient with respect to the observation
/// features, row-major.
pub fn nam_backward(params: &PolicyParameters, obs: &Observation, d_logits: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
    let l = NamLayout::of(params)?;
    check_obs(&l, obs)?;
    if d_logits.len() != obs.n_tasks || grad.len() != params.len() {
        return Err(Error::invalid("gradient buffer shape mismatch"));
    }
    let p = &params.data;
    let h = l.hidden;
    let mut d_features = vec![0.0; obs.n_tasks * l.features];
    let mut acts = Activations { h1: Vec::new(), h2: Vec::new() };
    let mut dz2 = vec![0.0; h];
    let mut dh1 = vec![0.0; h];
    for (j, &d) in d_logits.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad[l.out_bias] += d;
        for (k, &x) in obs.row(j).iter().enumerate() {
            subnet(p, &l, k, x, Some(&mut acts));
            grad[l.b3(k)] += d;
            for r in 0..h {
                grad[l.w3(k) + r] += d * acts.h2[r];
                dz2[r] = d * p[l.w3(k) + r] * (1.0 - acts.h2[r] * acts.h2[r]);
            }
            dh1.fill(0.0);
            let (w2, b2) = (l.w2(k), l.b2(k));
            {
                let (head, tail) = grad.split_at_mut(b2);
                super::nn::affine_backward(&p[w2..w2 + h * h], &acts.h1, &dz2, &mut head[w2..w2 + h * h], &mut tail[..h], Some(&mut dh1));
            }
            let mut dx = 0.0;
            for r in 0..h {
                let dz1 = dh1[r] * (1.0 - acts.h1[r] * acts.h1[r]);
                grad[l.b1(k) + r] += dz1;
                grad[l.w1(k) + r] += dz1 * x;
                dx += dz1 * p[l.w1(k) + r];
            }
            d_features[j * l.features + k] += dx;
        }
    }
    Ok(d_features)
}

/// Derivative of softplus, used by callers chaining bid gradients into
/// logit gradients.
#[inline]
pub fn softplus_grad(logit: f64) -> f64 {
    sigmoid(logit)
}
