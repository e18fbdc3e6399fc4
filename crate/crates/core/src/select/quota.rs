//! Largest-remainder (Hamilton) apportionment of a budget over clusters.

use super::SelectError;

/// How a budget is split before cluster caps are applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum QuotaMode {
    /// Shares proportional to cluster size.
    #[default]
    Proportional,
    /// Equal shares per non-empty cluster.
    Uniform,
}

impl QuotaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            QuotaMode::Proportional => "proportional",
            QuotaMode::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for QuotaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "proportional" => Ok(QuotaMode::Proportional),
            "uniform" => Ok(QuotaMode::Uniform),
            _ => Err(format!("unknown quota mode {s:?}; expected proportional or uniform")),
        }
    }
}

/// Splits `budget` over clusters of the given sizes.
///
/// Each round apportions the unallocated budget over the clusters that still
/// have headroom: integer parts first, then one extra unit to each of the
/// largest remainders, ties to the lowest cluster index. Quotas above a
/// cluster's size are clipped and the excess goes into the next round.
pub fn quota_allocate(sizes: &[u64], budget: u64, mode: QuotaMode) -> Result<Vec<u64>, SelectError> {
    let total: u128 = sizes.iter().map(|&s| s as u128).sum();
    if budget as u128 > total {
        return Err(SelectError::QuotaInfeasible {
            budget,
            available: total as u64,
        });
    }
    let weight = |s: u64| -> u128 {
        match mode {
            QuotaMode::Proportional => s as u128,
            QuotaMode::Uniform => u128::from(s > 0),
        }
    };
    let mut quotas = vec![0u64; sizes.len()];
    let mut left = budget;
    for _ in 0..=sizes.len() {
        if left == 0 {
            break;
        }
        let active: Vec<usize> = (0..sizes.len()).filter(|&c| quotas[c] < sizes[c]).collect();
        let w_total: u128 = active.iter().map(|&c| weight(sizes[c])).sum();
        let mut award = vec![0u64; sizes.len()];
        let mut rems: Vec<(u128, usize)> = Vec::with_capacity(active.len());
        let mut given = 0u64;
        for &c in &active {
            let num = left as u128 * weight(sizes[c]);
            award[c] = (num / w_total) as u64;
            given += award[c];
            rems.push((num % w_total, c));
        }
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, c) in rems.iter().take((left - given) as usize) {
            award[c] += 1;
        }
        let mut overflow = 0;
        for &c in &active {
            let room = sizes[c] - quotas[c];
            let take = award[c].min(room);
            quotas[c] += take;
            overflow += award[c] - take;
        }
        left = overflow;
    }
    debug_assert_eq!(left, 0, "every round fills at least one cluster");
    Ok(quotas)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(sizes: &[u64], budget: u64) -> Vec<u64> {
        quota_allocate(sizes, budget, QuotaMode::Proportional).unwrap()
    }

    #[test]
    fn exact_proportions() {
        assert_eq!(p(&[600, 300, 100], 10), vec![6, 3, 1]);
    }

    #[test]
    fn remainders_decide_extra_units() {
        assert_eq!(p(&[5, 3, 2], 3), vec![1, 1, 1]);
    }

    #[test]
    fn remainder_ties_go_to_lower_index() {
        assert_eq!(p(&[3, 1], 2), vec![2, 0]);
    }

    #[test]
    fn exact_proportional_split_needs_no_cap() {
        // 50 * 2/100 = 1 exactly; the small cluster is under its cap.
        assert_eq!(p(&[2, 98], 50), vec![1, 49]);
    }

    #[test]
    fn uniform_redistributes_overflow() {
        let q = quota_allocate(&[1, 10, 10], 12, QuotaMode::Uniform).unwrap();
        assert_eq!(q, vec![1, 6, 5]);
        let q = quota_allocate(&[0, 5, 5], 4, QuotaMode::Uniform).unwrap();
        assert_eq!(q, vec![0, 2, 2]);
    }

    #[test]
    fn full_budget_takes_everything() {
        assert_eq!(p(&[4, 0, 7], 11), vec![4, 0, 7]);
        assert_eq!(quota_allocate(&[4, 0, 7], 11, QuotaMode::Uniform).unwrap(), vec![4, 0, 7]);
    }

    #[test]
    fn infeasible() {
        assert!(matches!(
            quota_allocate(&[1, 2], 4, QuotaMode::Proportional),
            Err(SelectError::QuotaInfeasible { budget: 4, available: 3 })
        ));
        assert_eq!(p(&[], 0), Vec::<u64>::new());
    }
}
