//! Enumeration of covariate subsets in a fixed order: by size, then
//! lexicographically on sorted index tuples.

use itertools::Itertools;

use crate::error::{Error, Result};

/// Default number of subsets (or subset pairs) an enumeration may visit.
pub const DEFAULT_BUDGET: u128 = 1_000_000;

/// C(n, k), saturating at `u128::MAX`.
pub fn binom(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        match acc.checked_mul((n - i) as u128) {
            Some(v) => acc = v / (i as u128 + 1),
            None => return u128::MAX,
        }
    }
    acc
}

/// Σ_{j ≤ k} C(q, j), saturating.
pub fn count_up_to(q: usize, k: usize) -> u128 {
    (0..=k.min(q)).fold(0u128, |acc, j| acc.saturating_add(binom(q, j)))
}

pub fn check_budget(count: u128, budget: u128, hint: &str) -> Result<()> {
    if count > budget {
        return Err(Error::BudgetExceeded {
            count,
            budget,
            hint: hint.to_string(),
        });
    }
    Ok(())
}

/// All subsets of `0..q` with at most `k` elements, including the empty set.
pub fn up_to(q: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..=k.min(q)).flat_map(move |size| (0..q).combinations(size))
}

/// All `k`-subsets of `items`, lexicographic in the order of `items`.
pub fn of_size(items: &[usize], k: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    items.iter().copied().combinations(k)
}

/// Sorted union of two index sets.
pub fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

/// Elements of `a` not in `b`.
pub fn difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|x| !b.contains(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_enumeration() {
        for q in 0..9 {
            for k in 0..=q {
                assert_eq!(count_up_to(q, k), up_to(q, k).count() as u128);
            }
        }
        assert_eq!(binom(100, 5), 75_287_520);
        assert_eq!(binom(3, 5), 0);
    }

    #[test]
    fn order_is_size_then_lexicographic() {
        let all: Vec<Vec<usize>> = up_to(3, 2).collect();
        assert_eq!(
            all,
            vec![
                vec![],
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2]
            ]
        );
    }

    #[test]
    fn budget_error_carries_count() {
        match check_budget(11, 10, "reduce q*") {
            Err(Error::BudgetExceeded { count, budget, .. }) => {
                assert_eq!((count, budget), (11, 10))
            }
            other => panic!("{other:?}"),
        }
    }
}
