//! BPR matrix factorization: embedding pretraining, downstream evaluation,
//! the random baseline, and top-N metrics.

mod bpr;
mod metrics;
mod recommend;

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::{data_lines, read_to_string, write_atomic};

pub use bpr::{bpr_batch_loss, bpr_loss, bpr_loss_grad, pretrain_bpr, BprConfig, Triple};
pub use metrics::{evaluate, metrics_at_n, metrics_csv, MetricsReport, UserMetrics};
pub use recommend::{random_recommender, recommend_top_n, top_n_by_score, BprRecommender, RandomRecommender, Recommender};

/// User and item embeddings. Rows of `users` are user vectors, rows of
/// `items` are item vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(users: Array2<f64>, items: Array2<f64>) -> Result<Self> {
        if users.ncols() != items.ncols() {
            return Err(Error::Shape(format!(
                "user dim {} != item dim {}",
                users.ncols(),
                items.ncols()
            )));
        }
        let table = Self { users, items };
        if !table.is_finite() {
            return Err(Error::NonFinite("embedding table".into()));
        }
        Ok(table)
    }

    /// Uniform in `[-scale, scale]`.
    pub fn random(num_users: usize, num_items: usize, dim: usize, scale: f64, rng: &mut crate::rng::Rng) -> Self {
        let mut draw = |rows| Array2::from_shape_simple_fn((rows, dim), || rng.random_range(-scale..=scale));
        let users = draw(num_users);
        let items = draw(num_items);
        Self { users, items }
    }

    pub fn dim(&self) -> usize {
        self.users.ncols()
    }

    pub fn num_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn user(&self, u: usize) -> ArrayView1<'_, f64> {
        self.users.row(u)
    }

    pub fn item(&self, i: usize) -> ArrayView1<'_, f64> {
        self.items.row(i)
    }

    pub fn score(&self, u: usize, i: usize) -> f64 {
        self.user(u).dot(&self.item(i))
    }

    /// Scores of user `u` against every item.
    pub fn user_scores(&self, u: usize) -> Vec<f64> {
        self.items.dot(&self.user(u)).to_vec()
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(self.items.iter()).all(|x| x.is_finite())
    }

    pub fn save(&self, users_path: &Path, items_path: &Path) -> Result<()> {
        write_matrix(users_path, &self.users)?;
        write_matrix(items_path, &self.items)
    }

    pub fn load(users_path: &Path, items_path: &Path) -> Result<Self> {
        Self::new(read_matrix(users_path)?, read_matrix(items_path)?)
    }
}

/// Header `<rows> <dim>`, then one space-separated row per line. Values are
/// printed in shortest round-trip form, so reading back is exact.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{} {}", m.nrows(), m.ncols())?;
        for row in m.rows() {
            let mut first = true;
            for x in row {
                if !first {
                    w.write_all(b" ")?;
                }
                write!(w, "{x}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = read_to_string(path)?;
    let parse_err = |line, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut lines = data_lines(&text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing `<rows> <dim>` header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(hline, format!("bad header: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(parse_err(hline, "header must be `<rows> <dim>`".into()));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (line_no, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad float {tok:?}: {e}")))?;
            data.push(x);
        }
        if data.len() - before != cols {
            return Err(parse_err(
                line_no,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(hline, format!("header declares {rows} rows, found {seen}")));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Shape(e.to_string()))
}
