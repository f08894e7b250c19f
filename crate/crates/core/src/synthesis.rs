//! Releasing a synthetic training set: replace a fraction `k` of each user's
//! training items with generated items at sensitivity `gamma`, plus the
//! ablation variants and the similarity report.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SplitLists;
use crate::error::{Error, Result};
use crate::generator::{generate_one, gumbel_noise};
use crate::io_util::{data_lines, fields, read_to_string, write_atomic};
use crate::mf::EmbeddingTable;
use crate::privacy::{PrivacyPreference, SimilarityIndex};
use crate::rng::{indexed_stream, Rng};
use crate::selector::{attend, select_items, selection_size};
use crate::trainer::ModelParams;

/// How replaced items are chosen and how replacements are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// Attention selection, generator replacement.
    Full,
    /// Uniformly random selection, generator replacement.
    RandomSelection,
    /// Attention selection, uniformly random replacement.
    RandomGeneration,
    /// Attention selection, replacement whose relative similarity is closest
    /// to the given target (ties to the lower id).
    FixedSimilarity(f64),
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RandomSelection => "random-selection",
            Variant::RandomGeneration => "random-generation",
            Variant::FixedSimilarity(_) => "fixed-similarity",
        }
    }
}

/// One preference for everyone, or one per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Preferences {
    Global(PrivacyPreference),
    PerUser(Vec<PrivacyPreference>),
}

impl Preferences {
    pub fn of(&self, user: usize) -> PrivacyPreference {
        match self {
            Preferences::Global(p) => *p,
            Preferences::PerUser(v) => v[user],
        }
    }

    /// Read `<user> <k> <gamma>` lines (dense user ids). Every user in
    /// `0..num_users` must appear exactly once.
    pub fn read(path: &Path, num_users: usize) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut prefs: Vec<Option<PrivacyPreference>> = vec![None; num_users];
        for (line, content) in data_lines(&text) {
            let parse_err = |message: String| Error::Parse {
                path: path.to_owned(),
                line,
                message,
            };
            let f: Vec<&str> = fields(content).collect();
            if f.len() != 3 {
                return Err(parse_err(format!("expected `<user> <k> <gamma>`, got {content:?}")));
            }
            let user: usize = f[0].parse().map_err(|_| parse_err(format!("bad user id {:?}", f[0])))?;
            let k: f64 = f[1].parse().map_err(|_| parse_err(format!("bad k {:?}", f[1])))?;
            let gamma: f64 = f[2].parse().map_err(|_| parse_err(format!("bad gamma {:?}", f[2])))?;
            if user >= num_users {
                return Err(parse_err(format!("user {user} out of range (dataset has {num_users})")));
            }
            if prefs[user].is_some() {
                return Err(parse_err(format!("user {user} listed twice")));
            }
            prefs[user] = Some(PrivacyPreference::new(k, gamma).map_err(|e| parse_err(e.to_string()))?);
        }
        let missing: Vec<usize> = (0..num_users).filter(|&u| prefs[u].is_none()).collect();
        if let Some(&u) = missing.first() {
            return Err(Error::InvalidArgument(format!(
                "{}: no preference for user {u} ({} users missing)",
                path.display(),
                missing.len()
            )));
        }
        Ok(Preferences::PerUser(prefs.into_iter().map(Option::unwrap).collect()))
    }

    pub fn write(&self, path: &Path, num_users: usize) -> Result<()> {
        write_atomic(path, |w| {
            for u in 0..num_users {
                let p = self.of(u);
                writeln!(w, "{u} {} {}", p.k(), p.gamma())?;
            }
            Ok(())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub user: usize,
    pub original: usize,
    pub synthetic: usize,
    /// Relative similarity of the synthetic item to the original.
    pub f_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub num_items: usize,
    /// Released training list per user, sorted.
    pub train: Vec<Vec<usize>>,
    /// Every replacement, by user then in generation order.
    pub replacements: Vec<Replacement>,
    pub variant: Variant,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn num_users(&self) -> usize {
        self.train.len()
    }

    pub fn replacements_of(&self, user: usize) -> impl Iterator<Item = &Replacement> {
        self.replacements.iter().filter(move |r| r.user == user)
    }

    /// Mean relative similarity over all replacements.
    pub fn mean_similarity(&self) -> Option<f64> {
        if self.replacements.is_empty() {
            return None;
        }
        Some(self.replacements.iter().map(|r| r.f_sim).sum::<f64>() / self.replacements.len() as f64)
    }

    /// The released set as training lists over the original valid/test.
    pub fn splits(&self, original: &SplitLists) -> Result<SplitLists> {
        original.with_train(self.train.clone())
    }

    /// Flat dense `<user> <item>` lines.
    pub fn write_train(&self, path: &Path) -> Result<()> {
        crate::dataset::write_interaction_lists(path, &self.train)
    }

    /// CSV `user,original_item,synthetic_item,f_sim`.
    pub fn write_replacements(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            writeln!(w, "user,original_item,synthetic_item,f_sim")?;
            for r in &self.replacements {
                writeln!(w, "{},{},{},{}", r.user, r.original, r.synthetic, r.f_sim)?;
            }
            Ok(())
        })
    }
}

/// Everything generation needs besides the preferences.
pub struct Generator<'a> {
    pub model: &'a ModelParams,
    pub emb: &'a EmbeddingTable,
    pub index: &'a SimilarityIndex,
    pub data: &'a SplitLists,
}

impl Generator<'_> {
    /// Generate one synthetic training set. Each user draws from its own
    /// stream, so the result does not depend on scheduling.
    pub fn generate(&self, prefs: &Preferences, variant: Variant, seed: u64) -> Result<SyntheticDataset> {
        if let Preferences::PerUser(v) = prefs {
            if v.len() != self.data.num_users() {
                return Err(Error::Shape(format!(
                    "{} preferences for {} users",
                    v.len(),
                    self.data.num_users()
                )));
            }
        }
        if self.emb.num_items() != self.data.num_items || self.emb.num_users() != self.data.num_users() {
            return Err(Error::Shape("embeddings do not match the dataset".into()));
        }
        let per_user: Vec<(Vec<usize>, Vec<Replacement>)> = (0..self.data.num_users())
            .into_par_iter()
            .map(|u| {
                let mut rng = indexed_stream(seed, "generate", u as u64);
                self.generate_user(u, prefs.of(u), variant, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut train = Vec::with_capacity(per_user.len());
        let mut replacements = Vec::new();
        for (t, r) in per_user {
            train.push(t);
            replacements.extend(r);
        }
        Ok(SyntheticDataset {
            num_items: self.data.num_items,
            train,
            replacements,
            variant,
            seed,
        })
    }

    fn select(&self, user: usize, k: f64, variant: Variant, rng: &mut Rng) -> Result<Vec<usize>> {
        let items = &self.data.train[user];
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let mut chosen = match variant {
            Variant::RandomSelection => {
                let m = selection_size(items.len(), k);
                rand::seq::index::sample(rng, items.len(), m)
                    .into_iter()
                    .map(|j| items[j])
                    .collect()
            }
            _ => {
                let profile = attend(&self.model.selector, self.emb, user, items)?;
                select_items(&profile.items, &profile.weights, k)
            }
        };
        chosen.sort_unstable();
        Ok(chosen)
    }

    fn generate_user(
        &self,
        user: usize,
        pref: PrivacyPreference,
        variant: Variant,
        rng: &mut Rng,
    ) -> Result<(Vec<usize>, Vec<Replacement>)> {
        let selected = self.select(user, pref.k(), variant, rng)?;
        let num_items = self.data.num_items;
        let mut mask = vec![false; num_items];
        let mut free = num_items;
        for i in self.data.all_items(user) {
            mask[i] = true;
            free -= 1;
        }
        let mut replacements = Vec::with_capacity(selected.len());
        for &i in &selected {
            if free == 0 {
                return Err(Error::Exhausted { user });
            }
            let synthetic = match variant {
                Variant::Full | Variant::RandomSelection => {
                    let noise = gumbel_noise(num_items, rng);
                    generate_one(&self.model.generator, self.emb, self.index, user, i, pref.gamma(), &noise, &mask)?
                        .hard_item
                }
                Variant::RandomGeneration => {
                    let r = rng.random_range(0..free);
                    (0..num_items).filter(|&v| !mask[v]).nth(r).expect("free count is exact")
                }
                Variant::FixedSimilarity(target) => {
                    let mut best: Option<(f64, usize)> = None;
                    for v in (0..num_items).filter(|&v| !mask[v]) {
                        let gap = (self.index.item_similarity(i, v)? - target).abs();
                        if best.is_none_or(|(b, _)| gap < b) {
                            best = Some((gap, v));
                        }
                    }
                    best.expect("free count is exact").1
                }
            };
            mask[synthetic] = true;
            free -= 1;
            replacements.push(Replacement {
                user,
                original: i,
                synthetic,
                f_sim: self.index.item_similarity(i, synthetic)?,
            });
        }
        let mut released: Vec<usize> = self.data.train[user]
            .iter()
            .copied()
            .filter(|i| selected.binary_search(i).is_err())
            .chain(replacements.iter().map(|r| r.synthetic))
            .collect();
        released.sort_unstable();
        Ok((released, replacements))
    }
}

/// Mean relative similarity at each sensitivity and the rank correlation
/// between sensitivity and mean similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// `(gamma, mean f_sim)` in input order.
    pub rows: Vec<(f64, f64)>,
    /// Spearman correlation; 0 when either side has no variation.
    pub spearman: f64,
    pub degenerate: bool,
}

impl SimilarityReport {
    pub fn new(rows: Vec<(f64, f64)>) -> Self {
        let (g, s): (Vec<f64>, Vec<f64>) = rows.iter().copied().unzip();
        let rho = spearman(&g, &s);
        Self {
            rows,
            spearman: rho.unwrap_or(0.0),
            degenerate: rho.is_none(),
        }
    }

    /// CSV `gamma,mean_f_sim`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,mean_f_sim\n");
        for (g, s) in &self.rows {
            out.push_str(&format!("{g},{s}\n"));
        }
        out
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation, `None` when undefined (fewer than two points
/// or a constant side).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
