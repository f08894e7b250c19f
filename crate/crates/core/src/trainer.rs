//! Joint training of the selector and generator with Adam on
//! `L = L_D + lambda_s L_s + lambda_g L_g`, over frozen embeddings.

use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SplitLists;
use crate::error::{Error, Result};
use crate::generator::{gumbel_noise, pair_loss, GeneratorParams};
use crate::gradcheck::{central_difference, relative_error};
use crate::io_util::{read_to_string, write_atomic};
use crate::mf::EmbeddingTable;
use crate::optim::{AdamState, Parameters};
use crate::privacy::{SimilarityIndex, SimilarityMode};
use crate::rng::Rng;
use crate::selector::{
    attend, fold_item_grads, item_projections, select_items, user_selection_loss_projected, SelectorParams,
};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Pairs per parallel work unit. Fixed so the reduction order, and hence
/// every floating-point sum, does not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_s: f64,
    pub lambda_g: f64,
    pub beta: f64,
    pub tau: f64,
    pub dropout: f64,
    /// Attention hidden width; `None` uses the embedding dimension.
    pub hidden_dim: Option<usize>,
    /// Replacement ratio used to pick training pairs.
    pub train_k: f64,
    /// Sensitivities sampled for training pairs.
    pub train_gammas: Vec<f64>,
    /// Epochs without validation improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    pub similarity: SimilarityMode,
    pub seed: u64,
    /// Evaluate batches on the calling thread only.
    pub deterministic: bool,
    /// Run the finite-difference harness on a small slice before training.
    pub grad_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 2048,
            epochs: 100,
            lambda_s: 3.0,
            lambda_g: 1.0,
            beta: 0.5,
            tau: 0.5,
            dropout: 0.1,
            hidden_dim: None,
            train_k: 0.5,
            train_gammas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            patience: Some(10),
            similarity: SimilarityMode::Dot,
            seed: 0,
            deterministic: false,
            grad_check: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.lambda_s < 0.0 || self.lambda_g < 0.0 {
            return bad("lambda weights must be non-negative".into());
        }
        if !(self.train_k > 0.0 && self.train_k < 1.0) {
            return bad(format!("train_k {} not in (0, 1)", self.train_k));
        }
        if self.train_gammas.is_empty() || self.train_gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return bad("train_gammas must be a non-empty list inside (0, 1)".into());
        }
        Ok(())
    }

    pub fn lambdas(&self) -> (f64, f64) {
        (self.lambda_s, self.lambda_g)
    }
}

/// Every trainable parameter of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub selector: SelectorParams,
    pub generator: GeneratorParams,
}

impl ModelParams {
    pub fn init(dim: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = crate::rng::stream(cfg.seed, "model-init");
        let hidden = cfg.hidden_dim.unwrap_or(dim);
        Ok(Self {
            selector: SelectorParams::new(dim, hidden, cfg.beta, cfg.dropout, &mut rng)?,
            generator: GeneratorParams::new(dim, cfg.tau, &mut rng)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            selector: self.selector.zeros_like(),
            generator: self.generator.zeros_like(),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.selector.tensors();
        t.extend(self.generator.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.selector.tensors_mut();
        t.extend(self.generator.tensors_mut());
        t
    }
}

/// Frozen inputs shared by every batch.
pub struct TrainingData<'a> {
    pub emb: &'a EmbeddingTable,
    pub index: &'a SimilarityIndex,
    /// Items whose attention defines each user's profile.
    pub history: &'a [Vec<usize>],
    /// Items a user may never be given as a replacement, sorted.
    pub forbidden: &'a [Vec<usize>],
}

impl TrainingData<'_> {
    pub fn mask(&self, user: usize) -> Vec<bool> {
        let mut mask = vec![false; self.emb.num_items()];
        for &i in &self.forbidden[user] {
            mask[i] = true;
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub user: usize,
    pub item: usize,
    pub gamma: f64,
}

/// One optimisation step's worth of work.
#[derive(Debug, Clone)]
pub struct Batch {
    pub pairs: Vec<Pair>,
    /// Gumbel noise per pair, one value per item.
    pub noise: Vec<Vec<f64>>,
    /// Users contributing to `L_D`, each with an optional dropout mask.
    pub users: Vec<(usize, Option<Vec<f64>>)>,
}

impl Batch {
    /// Fresh noise for every pair and (optionally) dropout masks for every
    /// distinct user, in order of first appearance.
    pub fn draw(pairs: Vec<Pair>, params: &ModelParams, num_items: usize, dropout: bool, rng: &mut Rng) -> Self {
        let noise = pairs.iter().map(|_| gumbel_noise(num_items, rng)).collect();
        let mut seen = std::collections::HashSet::new();
        let mut users = Vec::new();
        for p in &pairs {
            if seen.insert(p.user) {
                let mask = dropout.then(|| params.selector.dropout_mask(rng));
                users.push((p.user, mask));
            }
        }
        Self { pairs, noise, users }
    }
}

/// Loss terms of a batch. `total = l_d + lambda_s l_s + lambda_g l_g`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub total: f64,
    pub l_d: f64,
    pub l_s: f64,
    pub l_g: f64,
}

impl std::ops::AddAssign for BatchLoss {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.l_d += o.l_d;
        self.l_s += o.l_s;
        self.l_g += o.l_g;
    }
}

/// `L = L_D + L_I` on a batch, accumulating gradients into `grads` when given.
pub fn total_loss(
    params: &ModelParams,
    data: &TrainingData<'_>,
    batch: &Batch,
    lambdas: (f64, f64),
    grads: Option<&mut ModelParams>,
    parallel: bool,
) -> Result<BatchLoss> {
    let want_grads = grads.is_some();
    let projections = (!batch.users.is_empty()).then(|| item_projections(&params.selector, data.emb));
    let selector_chunk = |users: &[(usize, Option<Vec<f64>>)]| -> Result<(BatchLoss, Option<ModelParams>)> {
        let projections = projections.as_ref().expect("users present");
        let mut g = want_grads.then(|| params.zeros_like());
        let mut item_grads = want_grads.then(|| Array2::zeros((data.emb.num_items(), params.selector.hidden_dim())));
        let mut loss = BatchLoss::default();
        for (u, mask) in users {
            let l = user_selection_loss_projected(
                &params.selector,
                data.emb,
                projections,
                *u,
                &data.history[*u],
                mask.as_deref(),
                g.as_mut().zip(item_grads.as_mut()).map(|(g, ig)| (&mut g.selector, ig)),
            )?;
            loss.l_d += l;
            loss.total += l;
        }
        if let (Some(g), Some(ig)) = (g.as_mut(), item_grads.as_ref()) {
            fold_item_grads(ig, data.emb, &mut g.selector);
        }
        Ok((loss, g))
    };
    let generator_chunk = |start: usize, pairs: &[Pair]| -> Result<(BatchLoss, Option<ModelParams>)> {
        let mut g = want_grads.then(|| params.zeros_like());
        let mut loss = BatchLoss::default();
        for (k, p) in pairs.iter().enumerate() {
            let mask = data.mask(p.user);
            let l = pair_loss(
                &params.generator,
                data.emb,
                data.index,
                p.user,
                p.item,
                p.gamma,
                &batch.noise[start + k],
                &mask,
                lambdas,
                g.as_mut().map(|g| &mut g.generator),
            )?;
            loss.l_s += l.l_s;
            loss.l_g += l.l_g;
            loss.total += lambdas.0 * l.l_s + lambdas.1 * l.l_g;
        }
        Ok((loss, g))
    };

    let user_chunks: Vec<_> = batch.users.chunks(CHUNK).collect();
    let pair_chunks: Vec<_> = batch.pairs.chunks(CHUNK).enumerate().collect();
    let (sel, gen): (Vec<_>, Vec<_>) = if parallel {
        (
            user_chunks.par_iter().map(|c| selector_chunk(c)).collect(),
            pair_chunks.par_iter().map(|(k, c)| generator_chunk(k * CHUNK, c)).collect(),
        )
    } else {
        (
            user_chunks.iter().map(|c| selector_chunk(c)).collect(),
            pair_chunks.iter().map(|(k, c)| generator_chunk(k * CHUNK, c)).collect(),
        )
    };

    let mut loss = BatchLoss::default();
    let mut grads = grads;
    for part in sel.into_iter().chain(gen) {
        let (l, g) = part?;
        loss += l;
        if let (Some(acc), Some(g)) = (grads.as_deref_mut(), g) {
            acc.add_assign(&g);
        }
    }
    if !loss.total.is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }
    Ok(loss)
}

/// One row of the loss curve (sums over the epoch's batches).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub loss: BatchLoss,
    pub validation: Option<f64>,
}

/// CSV `epoch,L,L_D,L_s,L_g`.
pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("epoch,L,L_D,L_s,L_g\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.loss.total, r.loss.l_d, r.loss.l_s, r.loss.l_g
        ));
    }
    out
}

/// Hash of the exact bit patterns of an embedding table.
pub fn embedding_digest(emb: &EmbeddingTable) -> String {
    let mut h = Sha256::new();
    h.update((emb.num_users() as u64).to_le_bytes());
    h.update((emb.num_items() as u64).to_le_bytes());
    h.update((emb.dim() as u64).to_le_bytes());
    for x in emb.users.iter().chain(emb.items.iter()) {
        h.update(x.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Epochs actually run.
    pub epoch: usize,
    /// Epoch whose parameters are stored (best validation loss).
    pub best_epoch: Option<usize>,
    pub config: TrainConfig,
    pub embedding_digest: String,
    /// SHA-256 of the user/item embedding files, when trained from files.
    pub user_embedding_file: Option<String>,
    pub item_embedding_file: Option<String>,
    pub history: Vec<LossRow>,
}

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        write_atomic(path, |w| w.write_all(json.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_FORMAT_VERSION as u64 => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format version {other:?}, expected {CHECKPOINT_FORMAT_VERSION}"
                )))
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Refuse embeddings other than the ones this model was trained on.
    pub fn check_embeddings(&self, emb: &EmbeddingTable) -> Result<()> {
        let found = embedding_digest(emb);
        if found != self.embedding_digest {
            return Err(Error::Fingerprint {
                what: "embedding table".into(),
                expected: self.embedding_digest.clone(),
                found,
            });
        }
        Ok(())
    }
}

/// Sorted union of all splits per user.
pub fn forbidden_items(data: &SplitLists) -> Vec<Vec<usize>> {
    (0..data.num_users()).map(|u| data.all_items(u)).collect()
}

/// Attention-selected `(user, item)` pairs at ratio `k` from the current selector.
pub fn selected_pairs(params: &SelectorParams, emb: &EmbeddingTable, history: &[Vec<usize>], k: f64) -> Result<Vec<(usize, usize)>> {
    let per_user: Vec<Vec<(usize, usize)>> = (0..history.len())
        .into_par_iter()
        .map(|u| {
            if history[u].is_empty() {
                return Ok(Vec::new());
            }
            let profile = attend(params, emb, u, &history[u])?;
            Ok(select_items(&profile.items, &profile.weights, k)
                .into_iter()
                .map(|i| (u, i))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

/// Train on `data.train`; validation uses the held-out validation items as
/// selected items with a fixed noise stream and no dropout.
pub fn train(data: &SplitLists, emb: &EmbeddingTable, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    if emb.num_users() != data.num_users() || emb.num_items() != data.num_items {
        return Err(Error::Shape(format!(
            "embeddings cover {}x{} but data has {} users and {} items",
            emb.num_users(),
            emb.num_items(),
            data.num_users(),
            data.num_items
        )));
    }
    let index = SimilarityIndex::build(&emb.items, cfg.similarity);
    let forbidden = forbidden_items(data);
    let ctx = TrainingData {
        emb,
        index: &index,
        history: &data.train,
        forbidden: &forbidden,
    };
    let mut params = ModelParams::init(emb.dim(), cfg)?;
    let mut adam = AdamState::new(params.num_params());
    let digest = embedding_digest(emb);
    let parallel = !cfg.deterministic;
    let lambdas = cfg.lambdas();
    let mut rng = crate::rng::stream(cfg.seed, "train");

    if cfg.grad_check {
        let report = gradient_check_slice(&params, &ctx, cfg)?;
        log::info!("gradient check: {report:?}");
        if report.worst() > 1e-4 {
            log::warn!("gradient check relative error {:.3e} exceeds 1e-4", report.worst());
        }
    }

    let valid_pairs: Vec<Pair> = {
        let mut vrng = crate::rng::stream(cfg.seed, "valid-gamma");
        let mut v = Vec::new();
        for (u, items) in data.valid.iter().enumerate() {
            if data.train[u].is_empty() {
                continue;
            }
            for &i in items {
                let gamma = *cfg.train_gammas.choose(&mut vrng).expect("non-empty");
                v.push(Pair { user: u, item: i, gamma });
            }
        }
        v
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        let mut pairs: Vec<Pair> = selected_pairs(&params.selector, emb, &data.train, cfg.train_k)?
            .into_iter()
            .map(|(user, item)| Pair {
                user,
                item,
                gamma: *cfg.train_gammas.choose(&mut rng).expect("non-empty"),
            })
            .collect();
        pairs.shuffle(&mut rng);

        let mut epoch_loss = BatchLoss::default();
        for chunk in pairs.chunks(cfg.batch_size) {
            let batch = Batch::draw(chunk.to_vec(), &params, emb.num_items(), cfg.dropout > 0.0, &mut rng);
            let mut grads = params.zeros_like();
            let loss = match total_loss(&params, &ctx, &batch, lambdas, Some(&mut grads), parallel) {
                Ok(l) => l,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        last_finite: epoch.checked_sub(1),
                    })
                }
                Err(e) => return Err(e),
            };
            params.adam_update(&grads, &mut adam, cfg.learning_rate);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite: epoch.checked_sub(1),
                });
            }
            epoch_loss += loss;
        }
        epochs_run = epoch + 1;

        let validation = if valid_pairs.is_empty() {
            None
        } else {
            let mut vrng = crate::rng::stream(cfg.seed, "valid-noise");
            let batch = Batch::draw(valid_pairs.clone(), &params, emb.num_items(), false, &mut vrng);
            Some(total_loss(&params, &ctx, &batch, lambdas, None, parallel)?.total)
        };
        log::info!(
            "epoch {epoch}: L {:.4} (L_D {:.4}, L_s {:.4}, L_g {:.4}) valid {:?}",
            epoch_loss.total,
            epoch_loss.l_d,
            epoch_loss.l_s,
            epoch_loss.l_g,
            validation
        );
        history.push(LossRow {
            epoch,
            loss: epoch_loss,
            validation,
        });

        if let Some(v) = validation {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    log::info!("early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, Some(epoch)),
        None => (params, None),
    };
    Ok(ModelCheckpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        params,
        adam,
        epoch: epochs_run,
        best_epoch,
        config: cfg.clone(),
        embedding_digest: digest,
        user_embedding_file: None,
        item_embedding_file: None,
        history,
    })
}

/// Worst relative error of each loss term's analytic gradient against
/// central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub l_d: f64,
    pub l_s: f64,
    pub l_g: f64,
    pub total: f64,
    /// Smallest distance of any ReLU pre-activation or hinge argument from its kink.
    pub kink_distance: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.l_d.max(self.l_s).max(self.l_g).max(self.total)
    }
}

/// Distance of the evaluation point from the nearest non-differentiable point.
pub fn kink_distance(params: &ModelParams, data: &TrainingData<'_>, batch: &Batch) -> Result<f64> {
    let sel = &params.selector;
    let mut dist = f64::INFINITY;
    for (u, mask) in &batch.users {
        let p_u = data.emb.user(*u);
        let items = &data.history[*u];
        for &i in items {
            let (_, pre) = sel.logit_trace(p_u, data.emb.item(i))?;
            dist = pre.iter().fold(dist, |m, z| m.min(z.abs()));
        }
        let profile = attend(sel, data.emb, *u, items)?;
        let trace = sel.f.forward(profile.profile.view(), mask.as_deref());
        dist = trace.pre.iter().fold(dist, |m, z| m.min(z.abs()));
    }
    for (k, p) in batch.pairs.iter().enumerate() {
        let l = pair_loss(
            &params.generator,
            data.emb,
            data.index,
            p.user,
            p.item,
            p.gamma,
            &batch.noise[k],
            &data.mask(p.user),
            (0.0, 0.0),
            None,
        )?;
        dist = dist.min((l.f_sim - p.gamma).abs());
    }
    Ok(dist)
}

/// Compare every loss term's gradient with central differences (step `step`)
/// at the given point. Dropout masks in `batch` are used as fixed.
pub fn gradient_check(
    params: &ModelParams,
    data: &TrainingData<'_>,
    batch: &Batch,
    lambdas: (f64, f64),
    step: f64,
) -> Result<GradCheckReport> {
    let sel_only = Batch {
        pairs: Vec::new(),
        noise: Vec::new(),
        users: batch.users.clone(),
    };
    let gen_only = Batch {
        pairs: batch.pairs.clone(),
        noise: batch.noise.clone(),
        users: Vec::new(),
    };
    let check = |b: &Batch, lam: (f64, f64), pick: fn(&BatchLoss) -> f64| -> Result<f64> {
        let mut g = params.zeros_like();
        total_loss(params, data, b, lam, Some(&mut g), false)?;
        // The gradient of L_s alone is the lambda = (1, 0) gradient.
        let flat = params.flatten();
        let mut probe = params.clone();
        let numeric = central_difference(
            |x| {
                probe.assign(x);
                let l = total_loss(&probe, data, b, lam, None, false).expect("finite loss");
                pick(&l)
            },
            &flat,
            step,
        );
        Ok(relative_error(&g.flatten(), &numeric))
    };
    Ok(GradCheckReport {
        l_d: check(&sel_only, lambdas, |l| l.l_d)?,
        l_s: check(&gen_only, (1.0, 0.0), |l| l.l_s)?,
        l_g: check(&gen_only, (0.0, 1.0), |l| l.l_g)?,
        total: check(batch, lambdas, |l| l.total)?,
        kink_distance: kink_distance(params, data, batch)?,
    })
}

/// Gradient check on the first few users' selected items.
fn gradient_check_slice(params: &ModelParams, data: &TrainingData<'_>, cfg: &TrainConfig) -> Result<GradCheckReport> {
    let mut rng = crate::rng::stream(cfg.seed, "grad-check");
    let users: Vec<usize> = (0..data.history.len()).filter(|&u| !data.history[u].is_empty()).take(3).collect();
    let mut pairs = Vec::new();
    for &u in &users {
        let profile = attend(&params.selector, data.emb, u, &data.history[u])?;
        for i in select_items(&profile.items, &profile.weights, cfg.train_k).into_iter().take(2) {
            pairs.push(Pair {
                user: u,
                item: i,
                gamma: *cfg.train_gammas.choose(&mut rng).expect("non-empty"),
            });
        }
    }
    let batch = Batch::draw(pairs, params, data.emb.num_items(), false, &mut rng);
    gradient_check(params, data, &batch, cfg.lambdas(), 1e-3)
}
