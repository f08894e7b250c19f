//! Replacement-item generator.
//!
//! For a user `u`, a selected item `i` and sensitivity `gamma`, the latent
//! feature `R = W2 [p_u ; q_i ; gamma] + b2` is scored against every item,
//! `h = E_I R`, and a replacement is drawn with Gumbel noise: the soft
//! relaxation `softmax((h + g) / tau)` during training and the hard
//! `argmax(h + g)` when releasing data. Items the user already has are masked.
//!
//! Training minimises `lambda_s * L_s + lambda_g * L_g` with the hinge
//! `L_s = sum max(f_sim(q_i, q_v) - gamma, 0)` and the utility term
//! `L_g = sum -ln sigmoid(p_u . q_v)`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, neg_log_sigmoid, sigmoid};
use crate::mf::EmbeddingTable;
use crate::optim::Parameters;
use crate::privacy::SimilarityIndex;
use crate::rng::Rng;
use crate::selector::{outer_add, slice, xavier};

/// Uniform draws are clamped to `[GUMBEL_EPS, 1 - GUMBEL_EPS]`.
pub const GUMBEL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// `d x (2d + 1)` projection of `[p_u ; q_i ; gamma]`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
}

impl GeneratorParams {
    pub fn new(dim: usize, tau: f64, rng: &mut Rng) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
        }
        Ok(Self {
            w2: xavier(dim, 2 * dim + 1, rng),
            b2: Array1::zeros(dim),
            tau,
        })
    }

    pub fn dim(&self) -> usize {
        self.b2.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            tau: self.tau,
        }
    }
}

impl Parameters for GeneratorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w2.as_slice().expect("standard layout"), slice(&self.b2)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

fn generator_input(p_u: ArrayView1<'_, f64>, q_i: ArrayView1<'_, f64>, gamma: f64) -> Array1<f64> {
    let mut x = Array1::zeros(p_u.len() + q_i.len() + 1);
    let d = p_u.len();
    x.slice_mut(ndarray::s![..d]).assign(&p_u);
    x.slice_mut(ndarray::s![d..2 * d]).assign(&q_i);
    x[2 * d] = gamma;
    x
}

/// `R = W2 [p_u ; q_i ; gamma] + b2`.
pub fn latent_feature(
    p_u: ArrayView1<'_, f64>,
    q_i: ArrayView1<'_, f64>,
    gamma: f64,
    params: &GeneratorParams,
) -> Result<Array1<f64>> {
    let expected = params.w2.ncols();
    if p_u.len() + q_i.len() + 1 != expected || p_u.len() != q_i.len() {
        return Err(Error::Shape(format!(
            "generator input length {} (p {} + q {} + 1) != {expected}",
            p_u.len() + q_i.len() + 1,
            p_u.len(),
            q_i.len()
        )));
    }
    Ok(params.w2.dot(&generator_input(p_u, q_i, gamma)) + &params.b2)
}

/// `h = E_I R`.
pub fn item_scores(r: &Array1<f64>, items: &Array2<f64>) -> Result<Array1<f64>> {
    if r.len() != items.ncols() {
        return Err(Error::Shape(format!("latent dim {} != item dim {}", r.len(), items.ncols())));
    }
    Ok(items.dot(r))
}

/// `-ln(-ln(mu))` with `mu` clamped away from 0 and 1.
pub fn gumbel_from_uniform(mu: f64) -> f64 {
    let mu = mu.clamp(GUMBEL_EPS, 1.0 - GUMBEL_EPS);
    -(-mu.ln()).ln()
}

pub fn gumbel_noise(count: usize, rng: &mut Rng) -> Vec<f64> {
    (0..count).map(|_| gumbel_from_uniform(rng.random::<f64>())).collect()
}

/// `softmax((h + g) / tau)` over unmasked entries; masked entries are exactly 0.
pub fn gumbel_softmax(h: &[f64], g: &[f64], tau: f64, mask: &[bool]) -> Result<Vec<f64>> {
    if h.len() != g.len() || h.len() != mask.len() {
        return Err(Error::Shape("scores, noise and mask differ in length".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let z: Vec<f64> = h.iter().zip(g).map(|(h, g)| (h + g) / tau).collect();
    let max = z
        .iter()
        .zip(mask)
        .filter(|(_, m)| !**m)
        .map(|(z, _)| *z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("gumbel-softmax logits".into()));
    }
    let mut y: Vec<f64> = z
        .iter()
        .zip(mask)
        .map(|(z, m)| if *m { 0.0 } else { (z - max).exp() })
        .collect();
    let total: f64 = y.iter().sum();
    for v in &mut y {
        *v /= total;
    }
    Ok(y)
}

/// Gumbel-Max: `argmax` of `h + g` over unmasked items (lowest id on ties).
pub fn hard_sample(h: &[f64], g: &[f64], mask: &[bool]) -> Result<usize> {
    if h.len() != g.len() || h.len() != mask.len() {
        return Err(Error::Shape("scores, noise and mask differ in length".into()));
    }
    let mut best: Option<(f64, usize)> = None;
    for (k, ((h, g), m)) in h.iter().zip(g).zip(mask).enumerate() {
        if *m {
            continue;
        }
        let v = h + g;
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, k));
        }
    }
    best.map(|(_, k)| k).ok_or(Error::AllMasked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingMode {
    /// Convex mixture `y^T E_I`.
    Soft,
    /// Row of `E_I` at `argmax y`.
    Hard,
}

pub fn synthetic_embedding(y: &[f64], items: &Array2<f64>, mode: EmbeddingMode) -> Result<Array1<f64>> {
    if y.len() != items.nrows() {
        return Err(Error::Shape(format!("{} weights for {} items", y.len(), items.nrows())));
    }
    match mode {
        EmbeddingMode::Soft => Ok(items.t().dot(&ArrayView1::from(y))),
        EmbeddingMode::Hard => {
            let k = (0..y.len())
                .max_by(|&a, &b| y[a].total_cmp(&y[b]).then(b.cmp(&a)))
                .ok_or(Error::AllMasked)?;
            Ok(items.row(k).to_owned())
        }
    }
}

/// `sum max(f_sim(q_i, q_v) - gamma, 0)` over `(original item, q_v, gamma)`.
pub fn privacy_loss(batch: &[(usize, Array1<f64>, f64)], index: &SimilarityIndex) -> Result<f64> {
    let mut total = 0.0;
    for (i, q_v, gamma) in batch {
        let f = index.relative_similarity(*i, slice(q_v))?;
        total += (f - gamma).max(0.0);
    }
    Ok(total)
}

/// `sum -ln sigmoid(p_u . q_v)`.
pub fn utility_loss(pairs: &[(ArrayView1<'_, f64>, ArrayView1<'_, f64>)]) -> f64 {
    pairs.iter().map(|(p, q)| neg_log_sigmoid(p.dot(q))).sum()
}

/// `lambda_s * L_s + lambda_g * L_g`.
pub fn generation_loss(l_s: f64, l_g: f64, lambda_s: f64, lambda_g: f64) -> f64 {
    lambda_s * l_s + lambda_g * l_g
}

/// Loss terms of one `(user, selected item)` pair under the soft relaxation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub l_s: f64,
    pub l_g: f64,
    pub f_sim: f64,
}

/// Soft-mode forward pass for one pair and, when `grads` is given, the
/// gradient of `lambda_s * l_s + lambda_g * l_g` with respect to `W2, b2`.
#[allow(clippy::too_many_arguments)]
pub fn pair_loss(
    params: &GeneratorParams,
    emb: &EmbeddingTable,
    index: &SimilarityIndex,
    user: usize,
    item: usize,
    gamma: f64,
    noise: &[f64],
    mask: &[bool],
    lambdas: (f64, f64),
    grads: Option<&mut GeneratorParams>,
) -> Result<PairLoss> {
    let p_u = emb.user(user);
    let x = generator_input(p_u, emb.item(item), gamma);
    if x.len() != params.w2.ncols() {
        return Err(Error::Shape(format!("generator input {} != {}", x.len(), params.w2.ncols())));
    }
    let r = params.w2.dot(&x) + &params.b2;
    let h = emb.items.dot(&r);
    let y = gumbel_softmax(slice(&h), noise, params.tau, mask)?;
    let q_v = emb.items.t().dot(&ArrayView1::from(&y[..]));
    let q_v = slice(&q_v);
    let (f_sim, g_fsim) = index.relative_similarity_grad(item, q_v)?;
    let l_s = (f_sim - gamma).max(0.0);
    let s = dot(p_u.as_slice().expect("standard layout"), q_v);
    let l_g = neg_log_sigmoid(s);
    if !(l_s.is_finite() && l_g.is_finite()) {
        return Err(Error::NonFinite("generation loss".into()));
    }

    if let Some(grads) = grads {
        let (lambda_s, lambda_g) = lambdas;
        let hinge = if f_sim > gamma { lambda_s } else { 0.0 };
        let util = -lambda_g * sigmoid(-s);
        let g_qv: Array1<f64> = g_fsim
            .iter()
            .zip(p_u.iter())
            .map(|(gf, p)| hinge * gf + util * p)
            .collect();
        let g_y = emb.items.dot(&g_qv);
        let mean: f64 = y.iter().zip(&g_y).map(|(a, b)| a * b).sum();
        let g_h: Array1<f64> = y
            .iter()
            .zip(&g_y)
            .map(|(yk, gk)| yk * (gk - mean) / params.tau)
            .collect();
        let g_r = emb.items.t().dot(&g_h);
        outer_add(&mut grads.w2, &g_r, &x);
        grads.b2 += &g_r;
    }
    Ok(PairLoss { l_s, l_g, f_sim })
}

/// One released replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub user: usize,
    pub original_item: usize,
    pub soft_weights: Vec<f64>,
    pub hard_item: usize,
    pub q_v: Array1<f64>,
    pub f_sim: f64,
}

/// Hard-mode generation for one pair.
#[allow(clippy::too_many_arguments)]
pub fn generate_one(
    params: &GeneratorParams,
    emb: &EmbeddingTable,
    index: &SimilarityIndex,
    user: usize,
    item: usize,
    gamma: f64,
    noise: &[f64],
    mask: &[bool],
) -> Result<GenerationOutcome> {
    let r = latent_feature(emb.user(user), emb.item(item), gamma, params)?;
    let h = item_scores(&r, &emb.items)?;
    let soft_weights = gumbel_softmax(slice(&h), noise, params.tau, mask)?;
    let hard_item = hard_sample(slice(&h), noise, mask)?;
    let f_sim = index.item_similarity(item, hard_item)?;
    Ok(GenerationOutcome {
        user,
        original_item: item,
        soft_weights,
        hard_item,
        q_v: emb.item(hard_item).to_owned(),
        f_sim,
    })
}
