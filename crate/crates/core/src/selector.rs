//! Attention-based item selector.
//!
//! Each purchased item gets a logit `v = h . relu(W1 [p_u ; q_i] + b1)`.
//! Weights are `a_i = exp(v_i) / (sum_j exp(v_j))^beta`, the user profile is
//! `t_u = (1/|I_u|) sum_i a_i q_i`, and a small MLP `f` is trained so that
//! `f(t_u)` reconstructs `p_u`. The items with the smallest weights are the
//! ones replaced.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::mf::EmbeddingTable;
use crate::optim::Parameters;
use crate::rng::Rng;

/// Xavier/Glorot uniform initialisation.
pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

pub(crate) fn slice(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// Two-layer perceptron `out = W2 dropout(relu(W1 x + b1)) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Intermediate values of an [`Mlp`] forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub input: Array1<f64>,
    pub pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub output: Array1<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            w1: xavier(hidden, input, rng),
            b1: Array1::zeros(hidden),
            w2: xavier(output, hidden, rng),
            b2: Array1::zeros(output),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            w1: Array2::eye(dim),
            b1: Array1::zeros(dim),
            w2: Array2::eye(dim),
            b2: Array1::zeros(dim),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    /// `mask` scales hidden units (0 drops, `1/(1-p)` keeps); `None` is eval mode.
    pub fn forward(&self, x: ArrayView1<'_, f64>, mask: Option<&[f64]>) -> MlpTrace {
        let pre = self.w1.dot(&x) + &self.b1;
        let mut hidden = pre.mapv(|z| z.max(0.0));
        if let Some(mask) = mask {
            for (h, m) in hidden.iter_mut().zip(mask) {
                *h *= m;
            }
        }
        let output = self.w2.dot(&hidden) + &self.b2;
        MlpTrace {
            input: x.to_owned(),
            pre,
            hidden,
            output,
        }
    }

    /// Accumulate parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, trace: &MlpTrace, mask: Option<&[f64]>, g_out: &Array1<f64>, grads: &mut Mlp) -> Array1<f64> {
        outer_add(&mut grads.w2, g_out, &trace.hidden);
        grads.b2 += g_out;
        let mut g_pre = self.w2.t().dot(g_out);
        for (k, g) in g_pre.iter_mut().enumerate() {
            let m = mask.map_or(1.0, |m| m[k]);
            if trace.pre[k] <= 0.0 {
                *g = 0.0;
            } else {
                *g *= m;
            }
        }
        outer_add(&mut grads.w1, &g_pre, &trace.input);
        grads.b1 += &g_pre;
        self.w1.t().dot(&g_pre)
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }
}

/// `m += a b^T`.
pub(crate) fn outer_add(m: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a) {
        if ai != 0.0 {
            row.scaled_add(ai, b);
        }
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().expect("standard layout"),
            slice(&self.b1),
            self.w2.as_slice().expect("standard layout"),
            slice(&self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorParams {
    /// `hidden x 2d` attention projection.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub h: Array1<f64>,
    /// Smoothing exponent in `[0, 1]`.
    pub beta: f64,
    /// Maps the attention profile back onto the user-vector space.
    pub f: Mlp,
    pub dropout: f64,
}

impl SelectorParams {
    pub fn new(dim: usize, hidden: usize, beta: f64, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if hidden == 0 || dim == 0 {
            return Err(Error::InvalidArgument("selector dims must be positive".into()));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta {beta} not in [0, 1]")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} not in [0, 1)")));
        }
        Ok(Self {
            w1: xavier(hidden, 2 * dim, rng),
            b1: Array1::zeros(hidden),
            h: xavier(1, hidden, rng).into_shape_with_order(hidden).expect("row vector"),
            beta,
            f: Mlp::new(dim, dim, dim, rng),
            dropout,
        })
    }

    pub fn dim(&self) -> usize {
        self.w1.ncols() / 2
    }

    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    /// Zero-valued copy with the same shapes and hyperparameters.
    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            h: Array1::zeros(self.h.raw_dim()),
            beta: self.beta,
            f: self.f.zeros_like(),
            dropout: self.dropout,
        }
    }

    /// Fresh inverted-dropout mask for `f`'s hidden layer.
    pub fn dropout_mask(&self, rng: &mut Rng) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..self.f.hidden_dim())
            .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
            .collect()
    }

    pub(crate) fn logit_trace(&self, p_u: ArrayView1<'_, f64>, q_i: ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)> {
        let d = self.dim();
        if p_u.len() != d || q_i.len() != d {
            return Err(Error::Shape(format!(
                "attention input [{} : {}] does not match 2d = {}",
                p_u.len(),
                q_i.len(),
                2 * d
            )));
        }
        let w_user = self.w1.slice(ndarray::s![.., ..d]);
        let w_item = self.w1.slice(ndarray::s![.., d..]);
        let pre = w_user.dot(&p_u) + w_item.dot(&q_i) + &self.b1;
        let v = pre.iter().zip(&self.h).map(|(z, h)| h * z.max(0.0)).sum();
        Ok((v, pre))
    }
}

impl Parameters for SelectorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = vec![self.w1.as_slice().expect("standard layout"), slice(&self.b1), slice(&self.h)];
        t.extend(self.f.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.h.as_slice_mut().expect("standard layout"),
        ];
        t.extend(self.f.tensors_mut());
        t
    }
}

/// `h . relu(W1 [p_u ; q_i] + b1)`.
pub fn attention_logit(p_u: ArrayView1<'_, f64>, q_i: ArrayView1<'_, f64>, params: &SelectorParams) -> Result<f64> {
    params.logit_trace(p_u, q_i).map(|(v, _)| v)
}

/// `a_i = exp(v_i) / (sum_j exp(v_j))^beta`, evaluated in log space.
pub fn attention_weights(logits: &[f64], beta: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("no logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention logits".into()));
    }
    let lse = log_sum_exp(logits.iter().copied());
    let weights: Vec<f64> = logits.iter().map(|v| (v - beta * lse).exp()).collect();
    if weights.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("attention weights".into()));
    }
    Ok(weights)
}

/// `t_u = (1/n) sum_i a_i q_i` where `n = weights.len()`.
pub fn user_profile(weights: &[f64], item_vectors: &[ArrayView1<'_, f64>]) -> Result<Array1<f64>> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("user has no items".into()));
    }
    if weights.len() != item_vectors.len() {
        return Err(Error::Shape("weights and item vectors differ in length".into()));
    }
    let mut t = Array1::zeros(item_vectors[0].len());
    for (a, q) in weights.iter().zip(item_vectors) {
        t.scaled_add(*a, q);
    }
    t /= weights.len() as f64;
    Ok(t)
}

/// Attention weights and profile for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProfile {
    pub user: usize,
    pub items: Vec<usize>,
    pub weights: Vec<f64>,
    pub profile: Array1<f64>,
}

pub fn attend(params: &SelectorParams, emb: &EmbeddingTable, user: usize, items: &[usize]) -> Result<AttentionProfile> {
    let p_u = emb.user(user);
    let logits = items
        .iter()
        .map(|&i| attention_logit(p_u, emb.item(i), params))
        .collect::<Result<Vec<_>>>()?;
    let weights = attention_weights(&logits, params.beta)?;
    let vectors: Vec<_> = items.iter().map(|&i| emb.item(i)).collect();
    let profile = user_profile(&weights, &vectors)?;
    Ok(AttentionProfile {
        user,
        items: items.to_vec(),
        weights,
        profile,
    })
}

/// `||f(t_u) - p_u||^2` for one user, accumulating gradients when `grads` is
/// given. `mask` is the dropout mask for `f` (`None` disables dropout).
pub fn user_selection_loss(
    params: &SelectorParams,
    emb: &EmbeddingTable,
    user: usize,
    items: &[usize],
    mask: Option<&[f64]>,
    grads: Option<&mut SelectorParams>,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("user {user} has no items")));
    }
    let p_u = emb.user(user);
    let mut logits = Vec::with_capacity(items.len());
    let mut pres = Vec::with_capacity(items.len());
    for &i in items {
        let (v, pre) = params.logit_trace(p_u, emb.item(i))?;
        logits.push(v);
        pres.push(pre);
    }
    let weights = attention_weights(&logits, params.beta)?;
    let vectors: Vec<_> = items.iter().map(|&i| emb.item(i)).collect();
    let t = user_profile(&weights, &vectors)?;
    let trace = params.f.forward(t.view(), mask);
    let diff = &trace.output - &p_u;
    let loss = diff.dot(&diff);

    let Some(grads) = grads else {
        return Ok(loss);
    };
    let g_out = diff * 2.0;
    let g_t = params.f.backward(&trace, mask, &g_out, &mut grads.f);
    let n = items.len() as f64;
    let g_a: Vec<f64> = vectors.iter().map(|q| g_t.dot(q) / n).collect();
    let lse = log_sum_exp(logits.iter().copied());
    let ga_dot_a: f64 = g_a.iter().zip(&weights).map(|(g, a)| g * a).sum();
    let d = params.dim();
    for (k, &i) in items.iter().enumerate() {
        let softmax = (logits[k] - lse).exp();
        let g_v = g_a[k] * weights[k] - params.beta * softmax * ga_dot_a;
        if g_v == 0.0 {
            continue;
        }
        let q_i = emb.item(i);
        for (j, &z) in pres[k].iter().enumerate() {
            if z <= 0.0 {
                continue;
            }
            grads.h[j] += g_v * z;
            let g_z = g_v * params.h[j];
            grads.b1[j] += g_z;
            let mut row = grads.w1.row_mut(j);
            for c in 0..d {
                row[c] += g_z * p_u[c];
                row[d + c] += g_z * q_i[c];
            }
        }
    }
    Ok(loss)
}

/// Item halves of the attention pre-activations, `W1[:, d..] q_i`, one row
/// per catalog item. Shared by every user while the parameters are fixed.
pub fn item_projections(params: &SelectorParams, emb: &EmbeddingTable) -> Array2<f64> {
    let d = params.dim();
    emb.items.dot(&params.w1.slice(ndarray::s![.., d..]).t())
}

/// [`user_selection_loss`] on top of [`item_projections`]. Gradients of the
/// item half of `W1` are left in `item_grads` (one row per item, in
/// pre-activation space); [`fold_item_grads`] moves them into `W1`.
pub fn user_selection_loss_projected(
    params: &SelectorParams,
    emb: &EmbeddingTable,
    projections: &Array2<f64>,
    user: usize,
    items: &[usize],
    mask: Option<&[f64]>,
    grads: Option<(&mut SelectorParams, &mut Array2<f64>)>,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!("user {user} has no items")));
    }
    let d = params.dim();
    let p_u = emb.user(user);
    let user_part = params.w1.slice(ndarray::s![.., ..d]).dot(&p_u) + &params.b1;
    let pres: Vec<Array1<f64>> = items.iter().map(|&i| &user_part + &projections.row(i)).collect();
    let logits: Vec<f64> = pres
        .iter()
        .map(|pre| pre.iter().zip(&params.h).map(|(z, h)| h * z.max(0.0)).sum())
        .collect();
    let weights = attention_weights(&logits, params.beta)?;
    let vectors: Vec<_> = items.iter().map(|&i| emb.item(i)).collect();
    let t = user_profile(&weights, &vectors)?;
    let trace = params.f.forward(t.view(), mask);
    let diff = &trace.output - &p_u;
    let loss = diff.dot(&diff);

    let Some((grads, item_grads)) = grads else {
        return Ok(loss);
    };
    let g_out = diff * 2.0;
    let g_t = params.f.backward(&trace, mask, &g_out, &mut grads.f);
    let n = items.len() as f64;
    let g_a: Vec<f64> = vectors.iter().map(|q| g_t.dot(q) / n).collect();
    let lse = log_sum_exp(logits.iter().copied());
    let ga_dot_a: f64 = g_a.iter().zip(&weights).map(|(g, a)| g * a).sum();
    let mut g_user = Array1::<f64>::zeros(params.hidden_dim());
    for (k, &i) in items.iter().enumerate() {
        let softmax = (logits[k] - lse).exp();
        let g_v = g_a[k] * weights[k] - params.beta * softmax * ga_dot_a;
        if g_v == 0.0 {
            continue;
        }
        let mut row = item_grads.row_mut(i);
        for (j, &z) in pres[k].iter().enumerate() {
            if z <= 0.0 {
                continue;
            }
            grads.h[j] += g_v * z;
            let g_z = g_v * params.h[j];
            g_user[j] += g_z;
            row[j] += g_z;
        }
    }
    grads.b1 += &g_user;
    let mut w_user = grads.w1.slice_mut(ndarray::s![.., ..d]);
    for (j, &g) in g_user.iter().enumerate() {
        if g != 0.0 {
            w_user.row_mut(j).scaled_add(g, &p_u);
        }
    }
    Ok(loss)
}

/// Add `item_gradsᵀ E` to the item half of `grads.w1`.
pub fn fold_item_grads(item_grads: &Array2<f64>, emb: &EmbeddingTable, grads: &mut SelectorParams) {
    let d = grads.dim();
    let update = item_grads.t().dot(&emb.items);
    let mut w_item = grads.w1.slice_mut(ndarray::s![.., d..]);
    w_item += &update;
}

/// Sum of [`user_selection_loss`] over `users`, whose items are `items_of(u)`.
pub fn selection_loss<'a>(
    params: &SelectorParams,
    emb: &EmbeddingTable,
    users: &[usize],
    items_of: impl Fn(usize) -> &'a [usize],
    mut grads: Option<&mut SelectorParams>,
) -> Result<f64> {
    let mut total = 0.0;
    for &u in users {
        total += user_selection_loss(params, emb, u, items_of(u), None, grads.as_deref_mut())?;
    }
    Ok(total)
}

/// Number of items replaced at ratio `k`: `max(1, round_half_up(k n))`, at most `n`.
pub fn selection_size(n: usize, k: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let rounded = (k * n as f64 + 0.5 + 1e-9).floor() as usize;
    rounded.clamp(1, n)
}

/// The `selection_size(len, k)` items with the smallest weights, smallest
/// first; ties go to the lower item id.
pub fn select_items(items: &[usize], weights: &[f64], k: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(items[a].cmp(&items[b])));
    order
        .into_iter()
        .take(selection_size(items.len(), k))
        .map(|k| items[k])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use ndarray::array;
    use proptest::prelude::*;

    fn params(dim: usize, hidden: usize, beta: f64, seed: u64) -> SelectorParams {
        let mut rng = crate::rng::stream(seed, "selector-test");
        let mut p = SelectorParams::new(dim, hidden, beta, 0.1, &mut rng).unwrap();
        p.b1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        p
    }

    #[test]
    fn projected_loss_matches_direct() {
        let mut rng = crate::rng::stream(5, "proj");
        let emb = EmbeddingTable::random(3, 7, 4, 1.0, &mut rng);
        let p = params(4, 6, 0.7, 2);
        let proj = item_projections(&p, &emb);
        let mask = p.dropout_mask(&mut rng);
        for (u, items) in [(0, vec![0, 3, 5]), (2, vec![6, 1])] {
            let mut direct = p.zeros_like();
            let a = user_selection_loss(&p, &emb, u, &items, Some(&mask), Some(&mut direct)).unwrap();
            let mut fast = p.zeros_like();
            let mut item_grads = Array2::zeros((7, 6));
            let b = user_selection_loss_projected(&p, &emb, &proj, u, &items, Some(&mask), Some((&mut fast, &mut item_grads)))
                .unwrap();
            fold_item_grads(&item_grads, &emb, &mut fast);
            assert!((a - b).abs() < 1e-12);
            for (x, y) in direct.flatten().iter().zip(fast.flatten()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn zero_networks_give_zero_logits() {
        let mut p = params(3, 4, 1.0, 0);
        let (pu, qi) = (array![1.0, 2.0, -1.0], array![0.5, -0.5, 2.0]);
        let mut z = p.clone();
        z.w1.fill(0.0);
        z.b1.fill(0.0);
        assert_eq!(attention_logit(pu.view(), qi.view(), &z).unwrap(), 0.0);
        let mut z = p.clone();
        z.h.fill(0.0);
        assert_eq!(attention_logit(pu.view(), qi.view(), &z).unwrap(), 0.0);
        p.w1.fill(0.0);
        p.b1.fill(-1.0);
        assert_eq!(attention_logit(pu.view(), qi.view(), &p).unwrap(), 0.0);
    }

    #[test]
    fn logit_shape_mismatch() {
        let p = params(3, 4, 1.0, 0);
        let (pu, qi) = (array![1.0, 2.0], array![0.5, -0.5, 2.0]);
        assert!(matches!(attention_logit(pu.view(), qi.view(), &p), Err(Error::Shape(_))));
    }

    #[test]
    fn weight_examples() {
        let w = attention_weights(&[0.7; 4], 1.0).unwrap();
        assert!(w.iter().all(|a| (a - 0.25).abs() < 1e-12));
        let w = attention_weights(&[0.3, -1.2], 0.0).unwrap();
        assert!((w[0] - 0.3f64.exp()).abs() < 1e-12 && (w[1] - (-1.2f64).exp()).abs() < 1e-12);
        let w = attention_weights(&[0.0, 3f64.ln()], 1.0).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        assert!(attention_weights(&[], 1.0).is_err());
        assert!(attention_weights(&[f64::NAN], 1.0).is_err());
        // Stabilised: huge logits still normalise at beta = 1.
        let w = attention_weights(&[1000.0, 1000.0], 1.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn beta_one_is_a_distribution(logits in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let w = attention_weights(&logits, 1.0).unwrap();
            prop_assert!(w.iter().all(|&a| a >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn shift_invariance(
            logits in proptest::collection::vec(-5.0f64..5.0, 2..12),
            c in -3.0f64..3.0,
            beta in 0.0f64..1.0,
            k in 0.05f64..0.95,
        ) {
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let a = attention_weights(&logits, beta).unwrap();
            let b = attention_weights(&shifted, beta).unwrap();
            let factor = ((1.0 - beta) * c).exp();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x * factor - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
            let items: Vec<usize> = (0..logits.len()).collect();
            prop_assert_eq!(select_items(&items, &a, k), select_items(&items, &b, k));
        }

        #[test]
        fn selection_size_exact(n in 1usize..200, k in 0.01f64..0.99) {
            let items: Vec<usize> = (0..n).collect();
            let w: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64).collect();
            let expect = ((k * n as f64 + 0.5 + 1e-9).floor() as usize).clamp(1, n);
            prop_assert_eq!(select_items(&items, &w, k).len(), expect);
        }
    }

    #[test]
    fn profile_examples() {
        let q = array![1.0, -2.0];
        assert_eq!(user_profile(&[1.0], &[q.view()]).unwrap(), q);
        let neg = -&q;
        assert_eq!(user_profile(&[0.5, 0.5], &[q.view(), neg.view()]).unwrap(), array![0.0, 0.0]);
        let a = array![0.3, 0.7];
        let b = array![2.0, 1.0];
        let t1 = user_profile(&[0.2, 0.9], &[a.view(), b.view()]).unwrap();
        let t2 = user_profile(&[0.4, 1.8], &[a.view(), b.view()]).unwrap();
        assert!((&t1 * 2.0 - &t2).iter().all(|x| x.abs() < 1e-12));
        assert!(user_profile(&[], &[]).is_err());
    }

    #[test]
    fn select_examples() {
        let got = select_items(&[0, 1, 2, 3], &[0.4, 0.1, 0.3, 0.2], 0.5);
        assert_eq!(got, vec![1, 3]);
        let items: Vec<usize> = (0..10).collect();
        assert_eq!(select_items(&items, &[0.1; 10], 0.2).len(), 2);
        let mut got = select_items(&[5, 2, 9, 1], &[0.25; 4], 0.5);
        got.sort();
        assert_eq!(got, vec![1, 2]);
        assert_eq!(selection_size(1, 0.01), 1);
        assert_eq!(selection_size(5, 0.3), 2);
        assert_eq!(selection_size(5, 0.7), 4);
    }

    fn toy_embeddings(seed: u64) -> EmbeddingTable {
        let mut rng = crate::rng::stream(seed, "emb");
        EmbeddingTable::random(3, 6, 4, 1.0, &mut rng)
    }

    #[test]
    fn identity_f_with_matching_profile_is_zero() {
        // One item per user, beta = 1 so the weight is 1 and t_u = q_i.
        let mut p = params(2, 3, 1.0, 1);
        p.f = Mlp::identity(2);
        let emb = EmbeddingTable::new(array![[0.5, 1.5]], array![[0.5, 1.5], [1.0, 0.0]]).unwrap();
        assert_eq!(user_selection_loss(&p, &emb, 0, &[0], None, None).unwrap(), 0.0);
    }

    #[test]
    fn unit_residual_contributes_one() {
        let mut p = params(2, 3, 1.0, 1);
        p.f = Mlp::identity(2);
        let emb = EmbeddingTable::new(array![[0.5, 0.5]], array![[0.5, 1.5]]).unwrap();
        let l = user_selection_loss(&p, &emb, 0, &[0], None, None).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let emb = toy_embeddings(5);
        let items: [&[usize]; 3] = [&[0, 2, 3], &[1, 4], &[5, 0, 1, 2]];
        for beta in [0.0, 0.5, 1.0] {
            let base = params(4, 5, beta, 7);
            let mut grads = base.zeros_like();
            let loss = |p: &SelectorParams, g: Option<&mut SelectorParams>| {
                selection_loss(p, &emb, &[0, 1, 2], |u| items[u], g).unwrap()
            };
            loss(&base, Some(&mut grads));
            let numeric = central_difference(
                |x| {
                    let mut p = base.clone();
                    p.assign(x);
                    loss(&p, None)
                },
                &base.flatten(),
                1e-3,
            );
            let err = relative_error(&grads.flatten(), &numeric);
            assert!(err < 1e-4, "beta {beta}: relative error {err}");
        }
    }

    #[test]
    fn dropout_mask_gradient() {
        let emb = toy_embeddings(6);
        let base = params(4, 5, 0.5, 8);
        let mut rng = crate::rng::stream(1, "mask");
        let mask = base.dropout_mask(&mut rng);
        let mut grads = base.zeros_like();
        user_selection_loss(&base, &emb, 1, &[0, 3, 5], Some(&mask), Some(&mut grads)).unwrap();
        let numeric = central_difference(
            |x| {
                let mut p = base.clone();
                p.assign(x);
                user_selection_loss(&p, &emb, 1, &[0, 3, 5], Some(&mask), None).unwrap()
            },
            &base.flatten(),
            1e-3,
        );
        assert!(relative_error(&grads.flatten(), &numeric) < 1e-4);
    }
}
