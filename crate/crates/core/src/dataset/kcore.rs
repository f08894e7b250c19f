use super::InteractionDataset;
use crate::error::{Error, Result};

/// Iteratively drop users and items with fewer than `min_degree` interactions
/// until every remaining user and item has at least that many. Ids are
/// renumbered densely, preserving relative order. Split labels are discarded.
pub fn filter_k_core(ds: &InteractionDataset, min_degree: usize) -> Result<InteractionDataset> {
    if min_degree == 0 {
        return Err(Error::InvalidArgument("min_degree must be at least 1".into()));
    }
    let num_users = ds.num_users();
    let mut user_alive = vec![true; num_users];
    let mut item_alive = vec![true; ds.num_items()];
    let mut user_deg: Vec<usize> = ds.interactions().iter().map(Vec::len).collect();
    let mut item_deg = ds.item_degrees();

    loop {
        let mut removed = false;
        for u in 0..num_users {
            if user_alive[u] && user_deg[u] < min_degree {
                user_alive[u] = false;
                removed = true;
                for &i in ds.items_of(u) {
                    if item_alive[i] {
                        item_deg[i] -= 1;
                    }
                }
            }
        }
        for (i, alive) in item_alive.iter_mut().enumerate() {
            if *alive && item_deg[i] < min_degree {
                *alive = false;
                removed = true;
            }
        }
        // Recount user degrees against the surviving items.
        for u in 0..num_users {
            if user_alive[u] {
                user_deg[u] = ds.items_of(u).iter().filter(|&&i| item_alive[i]).count();
            }
        }
        if !removed {
            break;
        }
    }

    let (users, user_remap) = ds.user_ids().retain(&user_alive);
    let (items, item_remap) = ds.item_ids().retain(&item_alive);
    if users.is_empty() || items.is_empty() {
        return Err(Error::EmptyAfterFilter { min_degree });
    }
    let mut interactions = vec![Vec::new(); users.len()];
    for u in 0..num_users {
        if let Some(nu) = user_remap[u] {
            interactions[nu] = ds
                .items_of(u)
                .iter()
                .filter_map(|&i| item_remap[i])
                .collect();
        }
    }
    Ok(InteractionDataset::from_parts(
        items.len(),
        interactions,
        None,
        users,
        items,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique(users: usize, items: usize) -> Vec<Vec<usize>> {
        (0..users).map(|_| (0..items).collect()).collect()
    }

    #[test]
    fn star_graph_empties() {
        let ds = InteractionDataset::from_lists(10, vec![(0..10).collect()]).unwrap();
        assert!(matches!(
            filter_k_core(&ds, 10),
            Err(Error::EmptyAfterFilter { min_degree: 10 })
        ));
    }

    #[test]
    fn clique_unchanged() {
        let ds = InteractionDataset::from_lists(10, clique(10, 10)).unwrap();
        let out = filter_k_core(&ds, 10).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn cascade_removes_dependents() {
        // 3x3 clique plus user 3 touching item 3 only, and item 3 touched by
        // nobody else. With k=3, user 3 and item 3 go; the clique stays.
        let mut lists = clique(3, 3);
        lists.push(vec![0, 3]);
        let ds = InteractionDataset::from_lists(4, lists).unwrap();
        let out = filter_k_core(&ds, 3).unwrap();
        assert_eq!(out.num_users(), 3);
        assert_eq!(out.num_items(), 3);
        assert_eq!(out.num_interactions(), 9);
    }

    #[test]
    fn rejects_zero_degree() {
        let ds = InteractionDataset::from_lists(2, vec![vec![0, 1]]).unwrap();
        assert!(filter_k_core(&ds, 0).is_err());
    }

    #[test]
    fn retained_ids_keep_raw_names() {
        let mut pairs = Vec::new();
        let users: Vec<String> = (0..4).map(|u| format!("user{u}")).collect();
        let items: Vec<String> = (0..4).map(|i| format!("item{i}")).collect();
        for u in 0..3 {
            for i in 0..3 {
                pairs.push((users[u].as_str(), items[i].as_str()));
            }
        }
        pairs.push((users[3].as_str(), items[3].as_str()));
        let ds = InteractionDataset::from_raw_pairs(pairs).unwrap();
        let out = filter_k_core(&ds, 2).unwrap();
        assert_eq!(out.num_users(), 3);
        for u in 0..3 {
            assert_eq!(out.user_ids().raw(u), Some(users[u].as_str()));
        }
        assert_eq!(out.item_ids().dense("item3"), None);
    }
}
