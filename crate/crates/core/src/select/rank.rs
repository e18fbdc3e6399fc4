//! Ranking selectors: by score and by token length, globally or within
//! clusters.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::quota::{quota_allocate, QuotaMode};
use super::SelectError;
use crate::diversity::ClusterAssignment;
use crate::par;
use crate::scores::{Direction, RecordId, ScoreTable};

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QuotaRow {
    pub cluster: u32,
    /// Usable records in the cluster.
    pub size: u64,
    pub quota: u64,
}

/// Result of a ranking selector.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub selected: Vec<RecordId>,
    /// Per-cluster quotas, in cluster order, when clustered.
    pub quotas: Option<Vec<QuotaRow>>,
    /// Budget minus the number selected.
    pub shortfall: u64,
    /// Candidates left out because they have no cluster.
    pub unclustered: u64,
}

/// Ranks by `key`, larger first, ties to the lower id.
fn by_key(a: &(RecordId, f64), b: &(RecordId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn top(mut items: Vec<(RecordId, f64)>, k: usize) -> Vec<RecordId> {
    if k < items.len() {
        if k > 0 {
            items.select_nth_unstable_by(k - 1, by_key);
        }
        items.truncate(k);
    }
    items.sort_unstable_by(by_key);
    items.into_iter().map(|(id, _)| id).collect()
}

/// Picks `budget` items with the largest keys, within clusters when an
/// assignment is given. Clustered output lists clusters in index order, each
/// ranked best first.
pub fn select_ranked(
    assignment: Option<&ClusterAssignment>,
    items: Vec<(RecordId, f64)>,
    budget: u64,
    mode: QuotaMode,
) -> Result<Selection, SelectError> {
    if items.is_empty() {
        return Err(SelectError::EmptyUsableSet);
    }
    let Some(a) = assignment else {
        let take = budget.min(items.len() as u64);
        return Ok(Selection {
            selected: top(items, take as usize),
            quotas: None,
            shortfall: budget - take,
            unclustered: 0,
        });
    };
    let mut groups: Vec<Vec<(RecordId, f64)>> = vec![Vec::new(); a.k];
    let mut unclustered = 0;
    for item in items {
        match a.cluster_of(item.0) {
            Some(c) => groups[c as usize].push(item),
            None => unclustered += 1,
        }
    }
    let sizes: Vec<u64> = groups.iter().map(|g| g.len() as u64).collect();
    let usable: u64 = sizes.iter().sum();
    if usable == 0 {
        return Err(SelectError::EmptyUsableSet);
    }
    let take = budget.min(usable);
    let quotas = quota_allocate(&sizes, take, mode)?;
    let picks = par::chunks_mut(&mut groups, 1, |c, g| top(std::mem::take(&mut g[0]), quotas[c] as usize));
    Ok(Selection {
        selected: picks.concat(),
        quotas: Some(
            sizes
                .iter()
                .zip(&quotas)
                .enumerate()
                .map(|(c, (&size, &quota))| QuotaRow {
                    cluster: c as u32,
                    size,
                    quota,
                })
                .collect(),
        ),
        shortfall: budget - take,
        unclustered,
    })
}

/// Best-scoring records according to the table's direction. Degenerate and
/// filtered records never appear in `entries`, so they are never chosen.
pub fn select_top_by_score(
    assignment: Option<&ClusterAssignment>,
    scores: &ScoreTable,
    budget: u64,
    mode: QuotaMode,
) -> Result<Selection, SelectError> {
    let sign = match scores.direction {
        Direction::High => 1.0,
        Direction::Low => -1.0,
    };
    let items = scores.entries.iter().map(|(&id, &s)| (id, sign * s)).collect();
    select_ranked(assignment, items, budget, mode)
}

/// Longest records first.
pub fn select_by_length(
    assignment: Option<&ClusterAssignment>,
    lengths: &BTreeMap<RecordId, u64>,
    budget: u64,
    mode: QuotaMode,
) -> Result<Selection, SelectError> {
    let items = lengths.iter().map(|(&id, &l)| (id, l as f64)).collect();
    select_ranked(assignment, items, budget, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assignment(labels: &[(u64, u32)], k: usize) -> ClusterAssignment {
        let mut l = labels.to_vec();
        l.sort();
        ClusterAssignment {
            k,
            dim: 1,
            seed: 0,
            iterations_run: 0,
            converged: true,
            ids: l.iter().map(|&(i, _)| RecordId(i)).collect(),
            labels: l.iter().map(|&(_, c)| c).collect(),
            centroids: vec![0.0; k],
            inertia: 0.0,
            inertia_history: vec![],
        }
    }

    fn table(entries: &[(u64, f64)]) -> ScoreTable {
        let mut t = ScoreTable::new("test", Direction::High);
        for &(i, s) in entries {
            t.insert(RecordId(i), s).unwrap();
        }
        t
    }

    fn ids(v: &[u64]) -> Vec<RecordId> {
        v.iter().map(|&i| RecordId(i)).collect()
    }

    #[test]
    fn global_top() {
        let t = table(&[(1, 3.0), (2, 2.0), (3, 1.0)]);
        let s = select_top_by_score(None, &t, 2, QuotaMode::Proportional).unwrap();
        assert_eq!(s.selected, ids(&[1, 2]));
        assert_eq!(s.shortfall, 0);
    }

    #[test]
    fn one_per_cluster() {
        // a1 a2 in cluster 0, b1 b2 in cluster 1.
        let t = table(&[(1, 9.0), (2, 8.0), (3, 1.0), (4, 0.0)]);
        let a = assignment(&[(1, 0), (2, 0), (3, 1), (4, 1)], 2);
        let s = select_top_by_score(Some(&a), &t, 2, QuotaMode::Proportional).unwrap();
        assert_eq!(s.selected, ids(&[1, 3]));
        assert_eq!(s.quotas.unwrap().iter().map(|q| q.quota).collect::<Vec<_>>(), vec![1, 1]);
    }

    #[test]
    fn equal_scores_take_lowest_ids() {
        let t = table(&[(5, 1.0), (3, 1.0), (9, 1.0), (1, 1.0)]);
        let s = select_top_by_score(None, &t, 2, QuotaMode::Proportional).unwrap();
        assert_eq!(s.selected, ids(&[1, 3]));
    }

    #[test]
    fn low_direction_prefers_small_scores() {
        let mut t = table(&[(1, 3.0), (2, 2.0), (3, 1.0)]);
        t.direction = Direction::Low;
        let s = select_top_by_score(None, &t, 1, QuotaMode::Proportional).unwrap();
        assert_eq!(s.selected, ids(&[3]));
    }

    #[test]
    fn longest_first() {
        let lengths: BTreeMap<_, _> = [(1, 354), (2, 1142), (3, 10)].map(|(i, l)| (RecordId(i), l)).into();
        let s = select_by_length(None, &lengths, 2, QuotaMode::Proportional).unwrap();
        assert_eq!(s.selected, ids(&[2, 1]));
    }

    #[test]
    fn length_quota_tie_goes_to_first_cluster() {
        let lengths: BTreeMap<_, _> = [(1, 5), (2, 7), (3, 6), (4, 100)].map(|(i, l)| (RecordId(i), l)).into();
        let a = assignment(&[(1, 0), (2, 0), (3, 0), (4, 1)], 2);
        let s = select_by_length(Some(&a), &lengths, 2, QuotaMode::Proportional).unwrap();
        assert_eq!(s.selected, ids(&[2, 3]));
    }

    #[test]
    fn shortfall_and_unclustered() {
        let t = table(&[(1, 1.0), (2, 2.0), (3, 3.0)]);
        let a = assignment(&[(1, 0), (2, 0)], 1);
        let s = select_top_by_score(Some(&a), &t, 5, QuotaMode::Proportional).unwrap();
        assert_eq!(s.selected, ids(&[2, 1]));
        assert_eq!(s.shortfall, 3);
        assert_eq!(s.unclustered, 1);
        assert!(matches!(
            select_top_by_score(None, &table(&[]), 1, QuotaMode::Proportional),
            Err(SelectError::EmptyUsableSet)
        ));
    }
}
