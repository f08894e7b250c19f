use std::path::Path;

use super::{IdMap, InteractionDataset, Split};
use crate::error::{Error, Result};
use crate::io_util::{data_lines, fields, read_to_string, with_suffix, write_atomic};

/// Read `<user> <item> [ignored...]` lines. Fields may be separated by
/// whitespace, tabs or commas; lines starting with `#` are comments.
pub fn load_interactions(path: &Path) -> Result<InteractionDataset> {
    let text = read_to_string(path)?;
    let mut pairs = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let mut f = fields(line);
        match (f.next(), f.next()) {
            (Some(u), Some(i)) => pairs.push((u, i)),
            _ => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: line_no,
                    message: format!("expected `<user> <item>`, got {line:?}"),
                })
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no interactions",
            path.display()
        )));
    }
    InteractionDataset::from_raw_pairs(pairs)
}

/// Read a file of dense `<user> <item>` pairs.
pub fn read_interaction_lists(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let mut f = fields(line);
        let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
        match (parse(f.next()), parse(f.next())) {
            (Some(u), Some(i)) => out.push((u, i)),
            _ => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: line_no,
                    message: format!("expected two dense ids, got {line:?}"),
                })
            }
        }
    }
    Ok(out)
}

/// Write per-user lists as dense `<user> <item>` lines.
pub fn write_interaction_lists(path: &Path, lists: &[Vec<usize>]) -> Result<()> {
    write_atomic(path, |w| {
        for (u, items) in lists.iter().enumerate() {
            for i in items {
                writeln!(w, "{u} {i}")?;
            }
        }
        Ok(())
    })
}

fn write_id_map(path: &Path, map: &IdMap) -> Result<()> {
    write_atomic(path, |w| {
        for d in 0..map.len() {
            writeln!(w, "{d} {}", map.raw(d).unwrap_or_default())?;
        }
        Ok(())
    })
}

fn read_id_map(path: &Path) -> Result<IdMap> {
    let text = read_to_string(path)?;
    let mut map = IdMap::new();
    for (line_no, line) in data_lines(&text) {
        let mut f = line.splitn(2, char::is_whitespace);
        let dense = f.next().and_then(|s| s.parse::<usize>().ok());
        let raw = f.next().map(str::trim);
        match (dense, raw) {
            (Some(d), Some(raw)) if d == map.len() => {
                map.intern(raw);
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: line_no,
                    message: "expected `<dense-id> <raw-id>` in ascending order".into(),
                })
            }
        }
    }
    Ok(map)
}

impl InteractionDataset {
    /// Write `<prefix>.train/.valid/.test` plus `<prefix>.users/.items` id maps.
    pub fn write_splits(&self, prefix: &Path) -> Result<()> {
        let lists = self.split_lists()?;
        write_interaction_lists(&with_suffix(prefix, "train"), &lists.train)?;
        write_interaction_lists(&with_suffix(prefix, "valid"), &lists.valid)?;
        write_interaction_lists(&with_suffix(prefix, "test"), &lists.test)?;
        write_id_map(&with_suffix(prefix, "users"), &self.users)?;
        write_id_map(&with_suffix(prefix, "items"), &self.items)
    }

    /// Write every interaction (unsplit) as dense `<user> <item>` lines.
    pub fn write_dense(&self, path: &Path) -> Result<()> {
        write_interaction_lists(path, self.interactions())
    }
}

/// Load a dataset written by [`InteractionDataset::write_splits`].
pub fn read_splits(prefix: &Path) -> Result<InteractionDataset> {
    let mut parts = Vec::new();
    for split in Split::ALL {
        parts.push((split, read_interaction_lists(&with_suffix(prefix, split.suffix()))?));
    }
    let users_path = with_suffix(prefix, "users");
    let items_path = with_suffix(prefix, "items");
    let max_user = parts
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(u, _)| u + 1))
        .max()
        .unwrap_or(0);
    let max_item = parts
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(_, i)| i + 1))
        .max()
        .unwrap_or(0);
    if max_user == 0 {
        return Err(Error::EmptyDataset(format!("{} splits", prefix.display())));
    }
    let users = if users_path.exists() {
        read_id_map(&users_path)?
    } else {
        IdMap::identity(max_user)
    };
    let items = if items_path.exists() {
        read_id_map(&items_path)?
    } else {
        IdMap::identity(max_item)
    };
    if users.len() < max_user || items.len() < max_item {
        return Err(Error::Shape(format!(
            "id maps for {} are smaller than the split files",
            prefix.display()
        )));
    }
    let mut interactions = vec![Vec::new(); users.len()];
    let mut labels = vec![Vec::new(); users.len()];
    for (split, pairs) in parts {
        for (u, i) in pairs {
            if !interactions[u].contains(&i) {
                interactions[u].push(i);
                labels[u].push(split);
            }
        }
    }
    Ok(InteractionDataset::from_parts(
        items.len(),
        interactions,
        Some(labels),
        users,
        items,
    ))
}
