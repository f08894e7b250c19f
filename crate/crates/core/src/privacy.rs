//! Privacy knobs: the replacement ratio `k` (how much of a history is
//! replaced) and the sensitivity `gamma` (how similar a replacement may be to
//! the item it replaces, measured by relative similarity).
//!
//! Relative similarity of candidate `v` to original `i` is
//!
//! ```text
//! f_sim(i, v) = (s(i, v) - min_j s(i, j)) / (s(i, i) - min_j s(i, j))
//! ```
//!
//! where `s` is the raw dot product (default) or cosine similarity, and the
//! minimum runs over the whole catalog. It is 1 at `v = i`, 0 at the least
//! similar catalog item, affine in `q_v` under the dot product, and is not
//! clamped.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::dot;

/// Denominators at or below this are treated as degenerate.
pub const DEGENERATE_TOL: f64 = 1e-9;

/// Per-user privacy preference `(k, gamma)`, both strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyPreference {
    k: f64,
    gamma: f64,
}

impl PrivacyPreference {
    pub fn new(k: f64, gamma: f64) -> Result<Self> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(k) {
            return Err(Error::InvalidArgument(format!("replacement ratio {k} not in (0, 1)")));
        }
        if !open_unit(gamma) {
            return Err(Error::InvalidArgument(format!("sensitivity {gamma} not in (0, 1)")));
        }
        Ok(Self { k, gamma })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Fraction of `original` no longer present in `synthetic`.
pub fn replaced_fraction(original: &[usize], synthetic: &[usize]) -> Result<f64> {
    if original.is_empty() {
        return Err(Error::InvalidArgument("original item set is empty".into()));
    }
    if original.len() != synthetic.len() {
        return Err(Error::Shape(format!(
            "synthetic set has {} items, original has {}",
            synthetic.len(),
            original.len()
        )));
    }
    let kept: std::collections::HashSet<usize> = synthetic.iter().copied().collect();
    let gone = original.iter().filter(|i| !kept.contains(i)).count();
    Ok(gone as f64 / original.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// Raw dot products for numerator, denominator and reference.
    #[default]
    Dot,
    /// Cosine similarities throughout.
    Cosine,
}

/// `(min_j q_i . q_j, argmin)` over catalog rows; ties go to the lowest id.
pub fn min_reference(q_i: ArrayView1<'_, f64>, items: &Array2<f64>) -> (f64, usize) {
    items
        .rows()
        .into_iter()
        .enumerate()
        .map(|(j, q_j)| (q_i.dot(&q_j), j))
        .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
}

/// Dot-product relative similarity of `q_v` to `q_i` against catalog `items`.
pub fn relative_similarity(q_i: ArrayView1<'_, f64>, q_v: ArrayView1<'_, f64>, items: &Array2<f64>) -> Result<f64> {
    let (min, _) = min_reference(q_i, items);
    let denom = q_i.dot(&q_i) - min;
    if denom <= DEGENERATE_TOL {
        return Err(Error::DegenerateItem { item: None });
    }
    Ok((q_i.dot(&q_v) - min) / denom)
}

/// True iff the relative similarity is at most `gamma` (inclusive).
pub fn satisfies_sensitivity(
    q_i: ArrayView1<'_, f64>,
    q_v: ArrayView1<'_, f64>,
    gamma: f64,
    items: &Array2<f64>,
) -> Result<bool> {
    Ok(relative_similarity(q_i, q_v, items)? <= gamma)
}

/// Precomputed per-item references over a frozen catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityIndex {
    mode: SimilarityMode,
    items: Array2<f64>,
    norms: Vec<f64>,
    min_ref: Vec<f64>,
    argmin: Vec<usize>,
}

impl SimilarityIndex {
    /// One pass over all item pairs.
    pub fn build(items: &Array2<f64>, mode: SimilarityMode) -> Self {
        let norms: Vec<f64> = items.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let refs: Vec<(f64, usize)> = (0..items.nrows())
            .into_par_iter()
            .map(|i| {
                let q_i = items.row(i);
                let mut best = (f64::INFINITY, 0);
                for (j, q_j) in items.rows().into_iter().enumerate() {
                    let mut s = q_i.dot(&q_j);
                    if mode == SimilarityMode::Cosine {
                        s /= norms[i] * norms[j];
                    }
                    if s < best.0 {
                        best = (s, j);
                    }
                }
                best
            })
            .collect();
        Self {
            mode,
            items: items.clone(),
            norms,
            min_ref: refs.iter().map(|r| r.0).collect(),
            argmin: refs.iter().map(|r| r.1).collect(),
        }
    }

    pub fn mode(&self) -> SimilarityMode {
        self.mode
    }

    pub fn num_items(&self) -> usize {
        self.items.nrows()
    }

    /// Reference value and the least-similar catalog item for item `i`.
    pub fn min_reference(&self, i: usize) -> (f64, usize) {
        (self.min_ref[i], self.argmin[i])
    }

    fn base(&self, i: usize, q_v: &[f64]) -> Result<(f64, f64)> {
        let q_i = self.items.row(i);
        let q_i = q_i.as_slice().expect("standard layout");
        let (raw, self_sim) = match self.mode {
            SimilarityMode::Dot => (dot(q_i, q_v), self.norms[i] * self.norms[i]),
            SimilarityMode::Cosine => {
                let nv = dot(q_v, q_v).sqrt();
                if nv == 0.0 || self.norms[i] == 0.0 {
                    return Err(Error::DegenerateItem { item: Some(i) });
                }
                (dot(q_i, q_v) / (self.norms[i] * nv), 1.0)
            }
        };
        let denom = self_sim - self.min_ref[i];
        if !(denom > DEGENERATE_TOL) {
            return Err(Error::DegenerateItem { item: Some(i) });
        }
        Ok((raw, denom))
    }

    /// Relative similarity of an arbitrary vector `q_v` to catalog item `i`.
    pub fn relative_similarity(&self, i: usize, q_v: &[f64]) -> Result<f64> {
        let (raw, denom) = self.base(i, q_v)?;
        Ok((raw - self.min_ref[i]) / denom)
    }

    /// Relative similarity between two catalog items.
    pub fn item_similarity(&self, i: usize, v: usize) -> Result<f64> {
        let q_v = self.items.row(v);
        self.relative_similarity(i, q_v.as_slice().expect("standard layout"))
    }

    /// Value and gradient with respect to `q_v`.
    pub fn relative_similarity_grad(&self, i: usize, q_v: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (raw, denom) = self.base(i, q_v)?;
        let q_i = self.items.row(i);
        let grad = match self.mode {
            SimilarityMode::Dot => q_i.iter().map(|x| x / denom).collect(),
            SimilarityMode::Cosine => {
                let nv2 = dot(q_v, q_v);
                let nv = nv2.sqrt();
                q_i.iter()
                    .zip(q_v)
                    .map(|(a, b)| (a / (self.norms[i] * nv) - raw * b / nv2) / denom)
                    .collect()
            }
        };
        Ok(((raw - self.min_ref[i]) / denom, grad))
    }

    pub fn satisfies_sensitivity(&self, i: usize, q_v: &[f64], gamma: f64) -> Result<bool> {
        Ok(self.relative_similarity(i, q_v)? <= gamma)
    }
}
