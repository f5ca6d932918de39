//! Random-forest regression: bootstrap trees with random split candidates,
//! out-of-bag error and the spread of tree predictions as uncertainty.

mod io;

use maybe_rayon::prelude::*;
use rand::seq::index::sample;
use rand::Rng;

use crate::dataset::PointData;
use crate::error::{Error, Result};
use crate::geo::SiteId;
use crate::prediction::Prediction;
use crate::seed::{derive_seed, rng_from};

pub use io::{read_forest, write_forest, FOREST_MAGIC};

/// Normal multiplier for forest intervals, mean ± 1.96 sd.
pub const FOREST_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Split candidates per node; `None` means floor(p / 3), at least 1.
    pub m_try: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// When false every tree sees each row once (debugging aid).
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            m_try: None,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
            seed: 1,
        }
    }
}

impl ForestConfig {
    pub fn resolved_m_try(&self, p: usize) -> usize {
        self.m_try.unwrap_or(p / 3).clamp(1, p.max(1))
    }
}

/// Longitude, latitude, day of year, the chosen covariates, then the model
/// output.
pub fn feature_row(point: &PointData, covariates: &[usize]) -> Vec<f64> {
    let mut row = Vec::with_capacity(4 + covariates.len());
    row.extend([point.loc.lon(), point.loc.lat(), f64::from(point.day_of_year)]);
    row.extend(covariates.iter().map(|&i| point.covariates[i]));
    row.push(point.cmaq);
    row
}

pub fn feature_names(covariate_names: &[String]) -> Vec<String> {
    let mut out = vec!["lon".to_string(), "lat".into(), "day_of_year".into()];
    out.extend(covariate_names.iter().cloned());
    out.push("cmaq".into());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow {
    pub site: SiteId,
    pub day: usize,
    pub features: Vec<f64>,
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Node {
    Leaf(f64),
    /// Rows with feature <= threshold go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub n_features: usize,
    pub m_try: usize,
    pub trees: Vec<Tree>,
    /// Per tree, whether each canonically ordered training row was in bag.
    pub(crate) in_bag: Vec<Vec<bool>>,
}

/// Rows ordered by (site, day): seeded sampling then does not depend on
/// the caller's row order.
fn canonical(rows: &[TrainingRow]) -> Vec<&TrainingRow> {
    let mut sorted: Vec<&TrainingRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.site, a.day).cmp(&(&b.site, b.day)));
    sorted
}

pub fn rf_train(rows: &[TrainingRow], cfg: &ForestConfig) -> Result<Forest> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("random forest needs training rows".into()));
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(Error::Config("n_trees and min_leaf must be at least 1".into()));
    }
    let p = rows[0].features.len();
    if p == 0 || rows.iter().any(|r| r.features.len() != p) {
        return Err(Error::DataIntegrity("feature rows must share a non-zero length".into()));
    }
    if rows.iter().any(|r| !r.response.is_finite() || r.features.iter().any(|v| !v.is_finite())) {
        return Err(Error::DataIntegrity("non-finite feature or response".into()));
    }
    if let Some(m) = cfg.m_try {
        if m == 0 || m > p {
            return Err(Error::Config(format!("m_try must lie in 1..={p}, got {m}")));
        }
    }
    let sorted = canonical(rows);
    let n = sorted.len();
    // Column-major copy for cache-friendly split scans.
    let cols: Vec<Vec<f64>> = (0..p).map(|j| sorted.iter().map(|r| r.features[j]).collect()).collect();
    let y: Vec<f64> = sorted.iter().map(|r| r.response).collect();
    let m_try = cfg.resolved_m_try(p);

    let grown: Vec<(Tree, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(derive_seed(cfg.seed, "tree", t as u64));
            let bag: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut in_bag = vec![false; n];
            for &i in &bag {
                in_bag[i] = true;
            }
            let mut builder = Builder {
                cols: &cols,
                y: &y,
                m_try,
                min_leaf: cfg.min_leaf,
                max_depth: cfg.max_depth.unwrap_or(usize::MAX),
                rng,
                nodes: Vec::new(),
            };
            builder.grow(bag, 0);
            (Tree { nodes: builder.nodes }, in_bag)
        })
        .collect();
    let (trees, in_bag) = grown.into_iter().unzip();
    Ok(Forest {
        n_features: p,
        m_try,
        trees,
        in_bag,
    })
}

struct Builder<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    m_try: usize,
    min_leaf: usize,
    max_depth: usize,
    rng: rand_chacha::ChaCha8Rng,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    sse: f64,
}

impl Builder<'_> {
    /// Grows the subtree for `rows` (bootstrap indices, duplicates allowed)
    /// and returns its node index.
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let first = self.y[rows[0]];
        // A pure node keeps the exact response rather than a rounded mean.
        let pure = rows.iter().all(|&i| self.y[i] == first);
        let mean = if pure { first } else { sum / n };
        self.nodes.push(Node::Leaf(mean));
        if pure {
            return id;
        }
        if rows.len() < 2 * self.min_leaf || depth >= self.max_depth {
            return id;
        }
        let sse_parent: f64 = rows.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        let p = self.cols.len();
        let mut features = sample(&mut self.rng, p, self.m_try).into_vec();
        features.sort_unstable();
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for &f in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.cols[f][i], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(s) = best_split(&pairs, self.min_leaf, f) {
                // Strictly better only: ties keep the lower feature, then
                // the lower threshold found first.
                if best.as_ref().is_none_or(|b| s.sse < b.sse) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else { return id };
        if split.sse >= sse_parent * (1.0 - 1e-12) {
            return id;
        }
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.cols[split.feature][i] <= split.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }
}

/// Minimum children SSE over midpoints between distinct sorted values with
/// at least `min_leaf` rows per side.
fn best_split(pairs: &[(f64, f64)], min_leaf: usize, feature: usize) -> Option<Split> {
    let n = pairs.len();
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let mut left = 0.0;
    let mut best: Option<Split> = None;
    for i in 0..n - 1 {
        left += pairs[i].1;
        let nl = i + 1;
        if nl < min_leaf {
            continue;
        }
        if n - nl < min_leaf {
            break;
        }
        if pairs[i].0 == pairs[i + 1].0 {
            continue;
        }
        let right = total - left;
        let sse = total_sq - left * left / nl as f64 - right * right / (n - nl) as f64;
        if best.as_ref().is_none_or(|b| sse < b.sse) {
            let (a, b) = (pairs[i].0, pairs[i + 1].0);
            let mid = a + (b - a) / 2.0;
            best = Some(Split {
                feature,
                threshold: if mid < b { mid } else { a },
                sse,
            });
        }
    }
    best
}

impl Forest {
    pub fn tree_predictions(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }
}

/// Mean of tree predictions; variance is their sample variance.
pub fn rf_predict(forest: &Forest, x: &[f64]) -> Prediction {
    let preds = forest.tree_predictions(x);
    let mean = crate::linalg::mean(&preds);
    Prediction::symmetric(mean, crate::linalg::sample_variance(&preds), FOREST_Z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OobPoint {
    pub n_trees: usize,
    /// RMSE over rows with at least one out-of-bag tree among the first
    /// `n_trees`; NaN when there are none.
    pub rmse: f64,
    /// Rows without any out-of-bag tree in the prefix.
    pub excluded: usize,
}

pub const OOB_PREFIXES: [usize; 5] = [10, 50, 100, 250, 500];

/// OOB RMSE at tree-count prefixes {10, 50, 100, 250, 500, n_trees} not
/// exceeding the forest size. `rows` must be the training rows.
pub fn rf_oob_error(forest: &Forest, rows: &[TrainingRow]) -> Result<Vec<OobPoint>> {
    let sorted = canonical(rows);
    let n_trees = forest.trees.len();
    if forest.in_bag.first().is_some_and(|b| b.len() != sorted.len()) {
        return Err(Error::DataIntegrity(format!(
            "forest was trained on {} rows, {} given",
            forest.in_bag[0].len(),
            sorted.len()
        )));
    }
    let mut prefixes: Vec<usize> = OOB_PREFIXES.iter().copied().filter(|&p| p <= n_trees).collect();
    if prefixes.last() != Some(&n_trees) {
        prefixes.push(n_trees);
    }
    let per_row: Vec<Vec<(f64, usize)>> = (&sorted)
        .into_par_iter()
        .enumerate()
        .map(|(i, row)| {
            let (mut sum, mut count) = (0.0, 0usize);
            let mut out = Vec::with_capacity(prefixes.len());
            let mut t = 0;
            for &p in &prefixes {
                while t < p {
                    if !forest.in_bag[t][i] {
                        sum += forest.trees[t].predict(&row.features);
                        count += 1;
                    }
                    t += 1;
                }
                out.push((if count > 0 { sum / count as f64 } else { f64::NAN }, count));
            }
            out
        })
        .collect();
    Ok(prefixes
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let (mut sse, mut used) = (0.0, 0usize);
            for (row, preds) in sorted.iter().zip(&per_row) {
                if preds[k].1 > 0 {
                    sse += (row.response - preds[k].0).powi(2);
                    used += 1;
                }
            }
            OobPoint {
                n_trees: p,
                rmse: if used > 0 { (sse / used as f64).sqrt() } else { f64::NAN },
                excluded: sorted.len() - used,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};

    fn rows_from(xs: &[Vec<f64>], ys: &[f64]) -> Vec<TrainingRow> {
        xs.iter()
            .zip(ys)
            .enumerate()
            .map(|(i, (x, &y))| TrainingRow {
                site: SiteId::new(format!("s{:03}", i % 17)).unwrap(),
                day: i / 17,
                features: x.clone(),
                response: y,
            })
            .collect()
    }

    fn noisy(n: usize, seed: u64) -> Vec<TrainingRow> {
        let mut rng = rng_from(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random::<f64>() * 10.0).collect()).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| (x[0] / 2.0).sin() * 3.0 + x[1] + rng.random::<f64>() * 2.0)
            .collect();
        rows_from(&xs, &ys)
    }

    #[test]
    fn constant_response() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let rows = rows_from(&xs, &[4.2; 40]);
        let f = rf_train(&rows, &ForestConfig { n_trees: 20, ..Default::default() }).unwrap();
        for x in &xs {
            let p = rf_predict(&f, x);
            assert_eq!(p.mean, 4.2);
            assert_eq!(p.variance, Some(0.0));
        }
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn step_function_fit_exactly() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..30).map(|i| if i < 12 { 1.0 } else if i < 20 { 5.0 } else { -2.0 }).collect();
        let rows = rows_from(&xs, &ys);
        let cfg = ForestConfig {
            n_trees: 1,
            m_try: Some(1),
            min_leaf: 1,
            bootstrap: false,
            ..Default::default()
        };
        let f = rf_train(&rows, &cfg).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(rf_predict(&f, x).mean, *y);
        }
        assert_eq!(f.trees[0].n_leaves(), 3);
    }

    #[test]
    fn two_tree_variance() {
        let f = Forest {
            n_features: 1,
            m_try: 1,
            trees: vec![Tree { nodes: vec![Node::Leaf(4.0)] }, Tree { nodes: vec![Node::Leaf(6.0)] }],
            in_bag: vec![vec![], vec![]],
        };
        let p = rf_predict(&f, &[0.0]);
        assert_eq!((p.mean, p.variance), (5.0, Some(2.0)));
        assert!((p.upper95.unwrap() - (5.0 + 1.96 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_order_free() {
        let rows = noisy(120, 1);
        let cfg = ForestConfig { n_trees: 30, seed: 9, ..Default::default() };
        let a = rf_train(&rows, &cfg).unwrap();
        let mut rev = rows.clone();
        rev.reverse();
        assert_eq!(a, rf_train(&rows, &cfg).unwrap());
        assert_eq!(a, rf_train(&rev, &cfg).unwrap());
        assert_eq!(a.m_try, 2);
    }

    #[test]
    fn ensemble_mean_is_tree_average() {
        let rows = noisy(100, 2);
        let f = rf_train(&rows, &ForestConfig { n_trees: 25, ..Default::default() }).unwrap();
        let probe = [3.0, 4.0, 1.0, 9.0, 2.0, 5.0];
        let brute: f64 = f.trees.iter().map(|t| t.predict(&probe)).sum::<f64>() / 25.0;
        assert!((rf_predict(&f, &probe).mean - brute).abs() < 1e-12);
    }

    #[test]
    fn leaves_respect_min_size() {
        let rows = noisy(200, 3);
        let f = rf_train(&rows, &ForestConfig { n_trees: 5, min_leaf: 7, ..Default::default() }).unwrap();
        let sorted = canonical(&rows);
        for (t, tree) in f.trees.iter().enumerate() {
            // Count bootstrap rows per leaf by replaying the bag.
            let mut rng = rng_from(derive_seed(1, "tree", t as u64));
            let bag: Vec<usize> = (0..rows.len()).map(|_| rng.random_range(0..rows.len())).collect();
            let mut counts = std::collections::HashMap::new();
            for &i in &bag {
                let mut k = 0;
                while let Node::Split { feature, threshold, left, right } = tree.nodes[k] {
                    k = if sorted[i].features[feature] <= threshold { left } else { right };
                }
                *counts.entry(k).or_insert(0usize) += 1;
            }
            assert!(counts.values().all(|&c| c >= 7));
        }
    }

    #[test]
    fn oob_single_tree_and_exclusions() {
        let rows = noisy(80, 4);
        let f = rf_train(&rows, &ForestConfig { n_trees: 1, ..Default::default() }).unwrap();
        let curve = rf_oob_error(&f, &rows).unwrap();
        assert_eq!(curve.len(), 1);
        let sorted = canonical(&rows);
        let oob: Vec<usize> = (0..80).filter(|&i| !f.in_bag[0][i]).collect();
        let rmse = (oob.iter().map(|&i| (sorted[i].response - f.trees[0].predict(&sorted[i].features)).powi(2)).sum::<f64>()
            / oob.len() as f64)
            .sqrt();
        assert!((curve[0].rmse - rmse).abs() < 1e-12);
        assert_eq!(curve[0].excluded, 80 - oob.len());

        let f = rf_train(&rows, &ForestConfig { n_trees: 12, ..Default::default() }).unwrap();
        let curve = rf_oob_error(&f, &rows).unwrap();
        assert_eq!(curve.iter().map(|c| c.n_trees).collect::<Vec<_>>(), vec![10, 12]);
        let brute = (0..80).filter(|&i| (0..10).all(|t| f.in_bag[t][i])).count();
        assert_eq!(curve[0].excluded, brute);
    }

    #[test]
    fn oob_improves_with_more_trees() {
        let rows = noisy(300, 5);
        let f = rf_train(&rows, &ForestConfig { n_trees: 500, ..Default::default() }).unwrap();
        let curve = rf_oob_error(&f, &rows).unwrap();
        assert_eq!(curve.last().unwrap().n_trees, 500);
        assert!(curve.last().unwrap().rmse <= curve[0].rmse);
    }

    #[test]
    fn bad_inputs() {
        assert!(rf_train(&[], &ForestConfig::default()).is_err());
        let rows = noisy(20, 6);
        assert!(rf_train(&rows, &ForestConfig { m_try: Some(7), ..Default::default() }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn predictions_within_training_range(seed in 0u64..1000, probe in prop::collection::vec(-5.0..15.0f64, 6)) {
            let rows = noisy(60, seed);
            let f = rf_train(&rows, &ForestConfig { n_trees: 10, seed, ..Default::default() }).unwrap();
            let lo = rows.iter().map(|r| r.response).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.response).fold(f64::NEG_INFINITY, f64::max);
            let p = rf_predict(&f, &probe);
            prop_assert!(p.mean >= lo - 1e-9 && p.mean <= hi + 1e-9);
            prop_assert!(p.variance.unwrap() >= 0.0);
        }
    }
}
