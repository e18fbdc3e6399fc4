//! Greedy k-center sampling.
//!
//! A single min-distance array over the candidates is updated after every
//! pick; all comparisons use squared distances.

use super::{sq_dist, DiversityError};
use crate::par;
use crate::scores::{EmbeddingMatrix, RecordId};

/// Marks a candidate that has already been picked.
const PICKED: f64 = -1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct KCenterResult {
    /// Picks in greedy order.
    pub picks: Vec<RecordId>,
    /// Euclidean distance from each pick to its nearest center at the moment
    /// it was picked. Infinite for a bootstrap pick with an empty pool.
    pub min_distances: Vec<f64>,
}

pub fn kcenter_select(
    emb: &EmbeddingMatrix,
    initial_pool: &[RecordId],
    candidates: &[RecordId],
    budget: usize,
) -> Result<KCenterResult, DiversityError> {
    let mut cand: Vec<RecordId> = candidates.to_vec();
    cand.sort_unstable();
    cand.dedup();
    let mut pool: Vec<RecordId> = initial_pool.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if budget > cand.len() {
        return Err(DiversityError::BudgetExceeds {
            budget,
            available: cand.len(),
        });
    }
    if let Some(&id) = pool.iter().find(|id| cand.binary_search(id).is_ok()) {
        return Err(DiversityError::PoolOverlap(id));
    }
    let rows = |ids: &[RecordId]| -> Result<Vec<usize>, DiversityError> {
        ids.iter()
            .map(|&id| emb.index_of(id).ok_or(DiversityError::MissingEmbedding(id)))
            .collect()
    };
    let cand_rows = rows(&cand)?;
    let pool_rows = rows(&pool)?;

    let mut min_d = vec![f64::INFINITY; cand.len()];
    let mut result = KCenterResult {
        picks: Vec::with_capacity(budget),
        min_distances: Vec::with_capacity(budget),
    };
    if budget == 0 {
        return Ok(result);
    }

    let mut next = if pool_rows.is_empty() {
        Some((0usize, f64::INFINITY))
    } else {
        update_and_argmax(emb, &cand_rows, &mut min_d, &pool_rows)
    };
    while let Some((i, d)) = next {
        result.picks.push(cand[i]);
        result.min_distances.push(d.sqrt());
        min_d[i] = PICKED;
        if result.picks.len() == budget {
            break;
        }
        next = update_and_argmax(emb, &cand_rows, &mut min_d, &[cand_rows[i]]);
    }
    Ok(result)
}

/// Lowers every unpicked entry by its distance to the new centers and returns
/// the index and squared distance of the farthest remaining candidate.
fn update_and_argmax(
    emb: &EmbeddingMatrix,
    cand_rows: &[usize],
    min_d: &mut [f64],
    centers: &[usize],
) -> Option<(usize, f64)> {
    let partial = par::chunks_mut(min_d, par::CHUNK, |off, chunk| {
        let mut best: Option<(usize, f64)> = None;
        for (j, m) in chunk.iter_mut().enumerate() {
            if *m == PICKED {
                continue;
            }
            let p = emb.row(cand_rows[off + j]);
            for &c in centers {
                let d = sq_dist(p, emb.row(c));
                if d < *m {
                    *m = d;
                }
            }
            if best.is_none_or(|(_, b)| *m > b) {
                best = Some((off + j, *m));
            }
        }
        best
    });
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in partial.into_iter().flatten() {
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((i, d));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f32]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(1, xs.iter().enumerate().map(|(i, &x)| (RecordId(i as u64), vec![x]))).unwrap()
    }

    #[test]
    fn farthest_point_from_the_pool() {
        let m = line(&[0.0, 1.0, 2.0, 9.0]);
        let r = kcenter_select(&m, &[RecordId(0)], &[RecordId(1), RecordId(2), RecordId(3)], 1).unwrap();
        assert_eq!(r.picks, vec![RecordId(3)]);
        assert_eq!(r.min_distances, vec![9.0]);
    }

    #[test]
    fn full_budget_returns_every_candidate_in_greedy_order() {
        let m = line(&[0.0, 1.0, 2.0, 9.0]);
        let all: Vec<RecordId> = (1..4).map(RecordId).collect();
        let r = kcenter_select(&m, &[RecordId(0)], &all, 3).unwrap();
        assert_eq!(r.picks, vec![RecordId(3), RecordId(2), RecordId(1)]);
    }

    #[test]
    fn empty_pool_bootstraps_on_lowest_id() {
        let m = line(&[5.0, 0.0, 10.0]);
        let r = kcenter_select(&m, &[], &[RecordId(2), RecordId(1), RecordId(0)], 2).unwrap();
        assert_eq!(r.picks[0], RecordId(0));
        assert!(r.min_distances[0].is_infinite());
        // 0.0 and 10.0 are both 5 away; the lower id wins.
        assert_eq!(r.picks[1], RecordId(1));
    }

    #[test]
    fn errors() {
        let m = line(&[0.0, 1.0]);
        assert!(matches!(
            kcenter_select(&m, &[], &[RecordId(0)], 2),
            Err(DiversityError::BudgetExceeds { .. })
        ));
        assert!(matches!(
            kcenter_select(&m, &[RecordId(0)], &[RecordId(0), RecordId(1)], 1),
            Err(DiversityError::PoolOverlap(_))
        ));
        assert!(matches!(
            kcenter_select(&m, &[], &[RecordId(7)], 1),
            Err(DiversityError::MissingEmbedding(_))
        ));
    }
}
