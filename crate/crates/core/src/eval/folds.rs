//! Site-level fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::geo::SiteId;
use crate::seed::rng_from;

/// Partition of sites into `k` folds. Sizes differ by at most one; the
/// first `n mod k` folds take the extra site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    seed: u64,
    folds: BTreeMap<SiteId, usize>,
}

pub fn make_site_folds(sites: &[SiteId], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut order: Vec<SiteId> = sites.to_vec();
    order.sort();
    order.dedup();
    if order.len() != sites.len() {
        return Err(Error::DataIntegrity("duplicate site ids in fold input".into()));
    }
    if order.len() < k {
        return Err(Error::Config(format!("{} sites cannot fill {k} folds", order.len())));
    }
    order.shuffle(&mut rng_from(seed));
    let (base, extra) = (order.len() / k, order.len() % k);
    let mut folds = BTreeMap::new();
    let mut it = order.into_iter();
    for f in 0..k {
        for site in it.by_ref().take(base + usize::from(f < extra)) {
            folds.insert(site, f);
        }
    }
    Ok(FoldPlan { k, seed, folds })
}

impl FoldPlan {
    /// Plan from explicit assignments, e.g. read back from `foldplan.csv`.
    pub fn from_assignments(assignments: impl IntoIterator<Item = (SiteId, usize)>, seed: u64) -> Result<Self> {
        let mut folds = BTreeMap::new();
        for (site, f) in assignments {
            if folds.insert(site.clone(), f).is_some() {
                return Err(Error::DataIntegrity(format!("site `{site}` assigned twice in fold plan")));
            }
        }
        let k = folds.values().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Err(Error::Config("fold plan needs at least 2 folds".into()));
        }
        Ok(Self { k, seed, folds })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, site: &SiteId) -> Option<usize> {
        self.folds.get(site).copied()
    }

    pub fn held_out(&self, fold: usize) -> Vec<SiteId> {
        self.folds.iter().filter(|&(_, &f)| f == fold).map(|(s, _)| s.clone()).collect()
    }

    /// (site, fold) pairs in site-id order.
    pub fn assignments(&self) -> impl Iterator<Item = (&SiteId, usize)> {
        self.folds.iter().map(|(s, &f)| (s, f))
    }

    /// Fold of each entry of `sites`; errors if any is missing from the plan.
    pub fn fold_indices(&self, sites: &[SiteId]) -> Result<Vec<usize>> {
        sites
            .iter()
            .map(|s| {
                self.fold_of(s)
                    .ok_or_else(|| Error::DataIntegrity(format!("site `{s}` is not in the fold plan")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<SiteId> {
        (0..n).map(|i| SiteId::new(format!("s{i}")).unwrap()).collect()
    }

    fn sizes(p: &FoldPlan) -> Vec<usize> {
        (0..p.k()).map(|f| p.held_out(f).len()).collect()
    }

    #[test]
    fn size_rule() {
        assert_eq!(sizes(&make_site_folds(&ids(10), 5, 3).unwrap()), vec![2; 5]);
        assert_eq!(sizes(&make_site_folds(&ids(11), 5, 3).unwrap()), vec![3, 2, 2, 2, 2]);
    }

    #[test]
    fn deterministic_and_input_order_free() {
        let a = make_site_folds(&ids(23), 5, 9).unwrap();
        let mut rev = ids(23);
        rev.reverse();
        assert_eq!(a, make_site_folds(&rev, 5, 9).unwrap());
        assert_ne!(a, make_site_folds(&ids(23), 5, 10).unwrap());
    }

    #[test]
    fn rejects_bad_k() {
        assert!(make_site_folds(&ids(10), 1, 0).is_err());
        assert!(make_site_folds(&ids(3), 5, 0).is_err());
    }
}
