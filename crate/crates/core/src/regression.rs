//! Per-day OLS on the model output and/or covariates, and best-subset
//! predictor selection by site-level cross-validation.

use maybe_rayon::prelude::*;
use nalgebra::{DMatrix, DVector};

use crate::dataset::{GridDataset, Observation, PointData};
use crate::error::{Error, Result};
use crate::eval::FoldPlan;
use crate::geo::SiteId;
use crate::linalg::student_t_quantile;
use crate::prediction::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeanKind {
    CmaqOnly,
    CovsOnly,
    CmaqPlusCovs,
}

/// Regressors of the mean: always an intercept, then the model output
/// and/or the named covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSpec {
    kind: MeanKind,
    names: Vec<String>,
    indices: Vec<usize>,
}

impl MeanSpec {
    pub fn cmaq_only() -> Self {
        Self {
            kind: MeanKind::CmaqOnly,
            names: Vec::new(),
            indices: Vec::new(),
        }
    }

    /// Covariate names are resolved against `grid`. An empty list means all
    /// of the grid's covariates.
    pub fn new(kind: MeanKind, covariates: &[String], grid: &GridDataset) -> Result<Self> {
        if kind == MeanKind::CmaqOnly {
            return Ok(Self::cmaq_only());
        }
        let names: Vec<String> = if covariates.is_empty() {
            grid.covariate_names().to_vec()
        } else {
            covariates.to_vec()
        };
        if names.is_empty() {
            return Err(Error::MissingCovariate("the grid has no covariates".into()));
        }
        let indices = names
            .iter()
            .map(|n| grid.covariate_index(n).ok_or_else(|| Error::MissingCovariate(n.clone())))
            .collect::<Result<_>>()?;
        Ok(Self { kind, names, indices })
    }

    /// Spec with pre-resolved covariate indices into `PointData::covariates`.
    pub fn from_parts(kind: MeanKind, names: Vec<String>, indices: Vec<usize>) -> Self {
        assert_eq!(names.len(), indices.len(), "one index per covariate name");
        if kind == MeanKind::CmaqOnly {
            return Self::cmaq_only();
        }
        Self { kind, names, indices }
    }

    pub fn kind(&self) -> MeanKind {
        self.kind
    }

    pub fn covariate_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    pub fn uses_cmaq(&self) -> bool {
        self.kind != MeanKind::CovsOnly
    }

    /// Number of design columns including the intercept.
    pub fn n_coefficients(&self) -> usize {
        1 + usize::from(self.uses_cmaq()) + self.indices.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut out = vec!["intercept".to_string()];
        if self.uses_cmaq() {
            out.push("cmaq".into());
        }
        out.extend(self.names.iter().cloned());
        out
    }

    pub fn design_row(&self, p: &PointData) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.n_coefficients());
        row.push(1.0);
        if self.uses_cmaq() {
            row.push(p.cmaq);
        }
        for (&i, name) in self.indices.iter().zip(&self.names) {
            let v = *p.covariates.get(i).ok_or_else(|| Error::MissingCovariate(name.clone()))?;
            if !v.is_finite() {
                return Err(Error::MissingCovariate(name.clone()));
            }
            row.push(v);
        }
        Ok(row)
    }

    pub fn design<'a>(&self, points: impl IntoIterator<Item = &'a PointData>) -> Result<DMatrix<f64>> {
        let rows = points.into_iter().map(|p| self.design_row(p)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(rows.len(), self.n_coefficients(), |i, j| rows[i][j]))
    }
}

/// Least-squares solution through a Householder QR; rank deficiency is
/// reported with the first dependent column and the columns spanning it.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    /// Upper-triangular R with X = QR.
    r: DMatrix<f64>,
    pub rss: f64,
}

impl LeastSquares {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<Self> {
        let q = x.ncols();
        if x.nrows() < q {
            return Err(Error::InsufficientData(format!("{} rows for {q} columns", x.nrows())));
        }
        let qr = x.clone().qr();
        let r = qr.r();
        for j in 0..q {
            let norm = x.column(j).norm();
            if r[(j, j)].abs() <= 1e-10 * norm.max(f64::MIN_POSITIVE) || norm == 0.0 {
                return Err(singular(&r, x, j, names));
            }
        }
        let qty = qr.q().transpose() * y;
        let mut coef = qty.clone();
        let solved = r.solve_upper_triangular_mut(&mut coef);
        debug_assert!(solved);
        let fitted = x * &coef;
        let rss = (y - fitted).norm_squared();
        Ok(Self {
            coefficients: coef,
            r,
            rss,
        })
    }

    /// x0ᵀ (XᵀX)⁻¹ x0.
    pub fn leverage(&self, x0: &[f64]) -> f64 {
        let mut v = DVector::from_column_slice(x0);
        self.r.tr_solve_upper_triangular_mut(&mut v);
        v.norm_squared()
    }

    /// (XᵀX)⁻¹.
    pub fn xtx_inverse(&self) -> DMatrix<f64> {
        let q = self.r.ncols();
        let mut rinv = DMatrix::identity(q, q);
        self.r.solve_upper_triangular_mut(&mut rinv);
        &rinv * rinv.transpose()
    }
}

fn singular(r: &DMatrix<f64>, x: &DMatrix<f64>, j: usize, names: &[String]) -> Error {
    let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("column {i}"));
    let mut others = Vec::new();
    if j > 0 {
        let head = r.view((0, 0), (j, j)).clone_owned();
        let mut c = r.view((0, j), (j, 1)).clone_owned();
        if head.solve_upper_triangular_mut(&mut c) {
            let scale = x.column(j).norm().max(f64::MIN_POSITIVE);
            for i in 0..j {
                if (c[i] * x.column(i).norm()).abs() > 1e-8 * scale {
                    others.push(name(i));
                }
            }
        }
    }
    Error::SingularDesign {
        column: name(j),
        others,
    }
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub day: usize,
    pub spec: MeanSpec,
    pub coefficients: Vec<f64>,
    pub residual_variance: f64,
    /// Residuals in the order of the training observations.
    pub residuals: Vec<f64>,
    pub n: usize,
    ls: LeastSquares,
}

pub fn ols_fit_day(day: usize, obs: &[Observation], spec: &MeanSpec) -> Result<OlsFit> {
    let q = spec.n_coefficients();
    if obs.len() <= q {
        return Err(Error::InsufficientData(format!(
            "day {day}: {} observations for {q} coefficients",
            obs.len()
        )));
    }
    let x = spec.design(obs.iter().map(|o| &o.point))?;
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.value));
    let ls = LeastSquares::fit(&x, &y, &spec.column_names())?;
    let residuals: Vec<f64> = (&y - &x * &ls.coefficients).iter().copied().collect();
    Ok(OlsFit {
        day,
        spec: spec.clone(),
        coefficients: ls.coefficients.iter().copied().collect(),
        residual_variance: ls.rss / (obs.len() - q) as f64,
        residuals,
        n: obs.len(),
        ls,
    })
}

impl OlsFit {
    pub fn df(&self) -> usize {
        self.n - self.coefficients.len()
    }

    pub fn leverage(&self, x0: &[f64]) -> f64 {
        self.ls.leverage(x0)
    }
}

/// Mean, predictive variance s²(1 + x0ᵀ(XᵀX)⁻¹x0) and a Student-t 95% interval.
pub fn ols_predict(fit: &OlsFit, targets: &[PointData]) -> Result<Vec<Prediction>> {
    let t = student_t_quantile(0.975, fit.df() as f64);
    targets
        .iter()
        .map(|p| {
            let x0 = fit.spec.design_row(p)?;
            let mean = x0.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum();
            let var = fit.residual_variance * (1.0 + fit.leverage(&x0));
            Ok(Prediction::symmetric(mean, var, t))
        })
        .collect()
}

/// Maximum number of candidate predictors for exhaustive enumeration.
pub const SUBSET_BUDGET: usize = 24;

/// Pooled rows for best-subset selection: candidate predictor columns,
/// responses and the site each row belongs to.
#[derive(Debug, Clone)]
pub struct SubsetData {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub sites: Vec<SiteId>,
}

impl SubsetData {
    /// All observations of the study pooled over days; candidates are the
    /// model output followed by every grid covariate.
    pub fn from_study(study: &crate::dataset::Study) -> Self {
        let mut names = vec!["cmaq".to_string()];
        names.extend(study.grid().covariate_names().iter().cloned());
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut sites = Vec::new();
        for (s, d, v) in study.monitors().observations() {
            let p = study.site_point(s, d);
            rows.push(std::iter::once(p.cmaq).chain(p.covariates).collect::<Vec<_>>());
            y.push(v);
            sites.push(study.monitors().sites()[s].id.clone());
        }
        let x = DMatrix::from_fn(rows.len(), names.len(), |i, j| rows[i][j]);
        Self { names, x, y, sites }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSelection {
    pub size: usize,
    pub predictors: Vec<String>,
    /// Intercept first, then `predictors` in order.
    pub coefficients: Vec<f64>,
    /// Fold-averaged CV RMSE for sizes 1..=max_size.
    pub cv_rmse: Vec<f64>,
    /// Best full-data subset per size, as column indices.
    pub best_by_size: Vec<Vec<usize>>,
}

/// Relative RMSE improvement below which a larger subset is not worth it.
pub const STOP_IMPROVEMENT: f64 = 0.001;

pub fn best_subset_select(data: &SubsetData, max_size: usize, folds: &FoldPlan) -> Result<SubsetSelection> {
    let p = data.names.len();
    if p > SUBSET_BUDGET {
        return Err(Error::BudgetExceeded {
            candidates: p,
            max: SUBSET_BUDGET,
        });
    }
    if p == 0 || max_size == 0 {
        return Err(Error::Config("best subset needs at least one candidate and max_size >= 1".into()));
    }
    let max_size = max_size.min(p);
    let fold_of = folds.fold_indices(&data.sites)?;

    let mut sse = vec![vec![0.0; max_size]; folds.k()];
    let mut counts = vec![0usize; folds.k()];
    let per_fold: Vec<(usize, Vec<f64>, usize)> = (0..folds.k())
        .into_par_iter()
        .map(|f| -> Result<(usize, Vec<f64>, usize)> {
            let train: Vec<usize> = (0..data.y.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..data.y.len()).filter(|&i| fold_of[i] == f).collect();
            let best = best_subsets(&data.x, &data.y, &train, max_size);
            let mut errs = vec![0.0; max_size];
            for (s, cols) in best.iter().enumerate() {
                let Some(cols) = cols else {
                    errs[s] = f64::NAN;
                    continue;
                };
                let coef = refit(data, &train, cols)?;
                errs[s] = test
                    .iter()
                    .map(|&i| (data.y[i] - predict_row(data, i, cols, &coef)).powi(2))
                    .sum();
            }
            Ok((f, errs, test.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    for (f, errs, n) in per_fold {
        sse[f] = errs;
        counts[f] = n;
    }
    let used: Vec<usize> = (0..folds.k()).filter(|&f| counts[f] > 0).collect();
    let cv_rmse: Vec<f64> = (0..max_size)
        .map(|s| used.iter().map(|&f| (sse[f][s] / counts[f] as f64).sqrt()).sum::<f64>() / used.len() as f64)
        .collect();

    let sd_y = crate::linalg::sample_variance(&data.y).sqrt();
    let size = choose_size(&cv_rmse, 1e-9 * sd_y.max(f64::MIN_POSITIVE));

    let all: Vec<usize> = (0..data.y.len()).collect();
    let best = best_subsets(&data.x, &data.y, &all, max_size);
    let cols = best[size - 1]
        .clone()
        .ok_or_else(|| Error::InsufficientData(format!("no non-degenerate subset of size {size}")))?;
    let coefficients = refit(data, &all, &cols)?;
    Ok(SubsetSelection {
        size,
        predictors: cols.iter().map(|&c| data.names[c].clone()).collect(),
        coefficients,
        cv_rmse,
        best_by_size: best.into_iter().map(|b| b.unwrap_or_default()).collect(),
    })
}

/// Smallest size s whose successor improves RMSE by less than 0.1% of
/// RMSE(s). An RMSE at or below `zero` counts as no room to improve.
pub fn choose_size(cv_rmse: &[f64], zero: f64) -> usize {
    for s in 0..cv_rmse.len().saturating_sub(1) {
        let (cur, next) = (cv_rmse[s], cv_rmse[s + 1]);
        let improvement = if cur <= zero || !cur.is_finite() || !next.is_finite() {
            0.0
        } else {
            (cur - next) / cur
        };
        if improvement < STOP_IMPROVEMENT {
            return s + 1;
        }
    }
    cv_rmse.len().max(1)
}

fn refit(data: &SubsetData, rows: &[usize], cols: &[usize]) -> Result<Vec<f64>> {
    let x = DMatrix::from_fn(rows.len(), cols.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            data.x[(rows[i], cols[j - 1])]
        }
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.y[i]));
    let mut names = vec!["intercept".to_string()];
    names.extend(cols.iter().map(|&c| data.names[c].clone()));
    Ok(LeastSquares::fit(&x, &y, &names)?.coefficients.iter().copied().collect())
}

fn predict_row(data: &SubsetData, row: usize, cols: &[usize], coef: &[f64]) -> f64 {
    coef[0] + cols.iter().zip(&coef[1..]).map(|(&c, b)| b * data.x[(row, c)]).sum::<f64>()
}

/// Minimum-RSS subset for each size 1..=max_size over `rows` (intercept
/// always included). Equal RSS keeps the lexicographically first subset.
/// `None` when every subset of that size is rank-deficient.
pub fn best_subsets(x: &DMatrix<f64>, y: &[f64], rows: &[usize], max_size: usize) -> Vec<Option<Vec<usize>>> {
    let p = x.ncols();
    let n = rows.len() as f64;
    // Centred cross-products absorb the intercept.
    let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / n).collect();
    let ybar = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let mut g = DMatrix::zeros(p, p);
    let mut xy = vec![0.0; p];
    let mut yy = 0.0;
    for &i in rows {
        let yc = y[i] - ybar;
        yy += yc * yc;
        for a in 0..p {
            let xa = x[(i, a)] - means[a];
            xy[a] += xa * yc;
            for b in a..p {
                g[(a, b)] += xa * (x[(i, b)] - means[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    let search = Search { g: &g, xy: &xy, yy, max_size };
    let per_root: Vec<Vec<Option<(f64, Vec<usize>)>>> = (0..p)
        .into_par_iter()
        .map(|root| {
            let mut best = vec![None; max_size];
            let mut state = DfsState::new(max_size);
            search.push_and_descend(root, &mut state, &mut best);
            best
        })
        .collect();
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; max_size];
    for root_best in per_root {
        for (s, cand) in root_best.into_iter().enumerate() {
            if let Some((rss, cols)) = cand {
                if best[s].as_ref().is_none_or(|(b, _)| rss < *b) {
                    best[s] = Some((rss, cols));
                }
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, c)| c)).collect()
}

struct Search<'a> {
    g: &'a DMatrix<f64>,
    xy: &'a [f64],
    yy: f64,
    max_size: usize,
}

/// Incremental Cholesky of the selected columns' Gram matrix.
struct DfsState {
    cols: Vec<usize>,
    l: Vec<Vec<f64>>,
    z: Vec<f64>,
}

impl DfsState {
    fn new(cap: usize) -> Self {
        Self {
            cols: Vec::with_capacity(cap),
            l: Vec::with_capacity(cap),
            z: Vec::with_capacity(cap),
        }
    }
}

impl Search<'_> {
    fn push_and_descend(&self, j: usize, st: &mut DfsState, best: &mut [Option<(f64, Vec<usize>)>]) {
        let k = st.cols.len();
        let mut row = vec![0.0; k + 1];
        for i in 0..k {
            let mut s = self.g[(st.cols[i], j)];
            for m in 0..i {
                s -= st.l[i][m] * row[m];
            }
            row[i] = s / st.l[i][i];
        }
        let d2 = self.g[(j, j)] - row[..k].iter().map(|v| v * v).sum::<f64>();
        if d2 <= 1e-10 * self.g[(j, j)].max(f64::MIN_POSITIVE) {
            return;
        }
        let d = d2.sqrt();
        row[k] = d;
        let zj = (self.xy[j] - row[..k].iter().zip(&st.z).map(|(a, b)| a * b).sum::<f64>()) / d;
        st.cols.push(j);
        st.l.push(row);
        st.z.push(zj);

        let rss = (self.yy - st.z.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        let slot = &mut best[k];
        if slot.as_ref().is_none_or(|(b, _)| rss < *b) {
            *slot = Some((rss, st.cols.clone()));
        }
        if k + 1 < self.max_size {
            for next in j + 1..self.g.ncols() {
                self.push_and_descend(next, st, best);
            }
        }
        st.cols.pop();
        st.l.pop();
        st.z.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::make_site_folds;
    use crate::geo::LonLat;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn point(cmaq: f64, covs: Vec<f64>) -> PointData {
        PointData {
            loc: LonLat::new(-90.0, 35.0).unwrap(),
            cmaq,
            covariates: covs,
            day_of_year: 1,
        }
    }

    fn obs(cmaq: f64, covs: Vec<f64>, value: f64) -> Observation {
        Observation {
            site: 0,
            point: point(cmaq, covs),
            value,
        }
    }

    fn spec_with(kind: MeanKind, k: usize) -> MeanSpec {
        MeanSpec {
            kind,
            names: (0..k).map(|i| format!("x{i}")).collect(),
            indices: (0..k).collect(),
        }
    }

    #[test]
    fn exact_line_recovered() {
        let data: Vec<Observation> = (0..6).map(|i| obs(i as f64, vec![], 2.0 + 3.0 * i as f64)).collect();
        let fit = ols_fit_day(0, &data, &MeanSpec::cmaq_only()).unwrap();
        assert_relative_eq!(fit.coefficients[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(fit.coefficients[1], 3.0, epsilon = 1e-10);
        assert!(fit.residual_variance < 1e-20);
        let pred = ols_predict(&fit, &[data[2].point.clone()]).unwrap()[0];
        assert_relative_eq!(pred.mean, 8.0, epsilon = 1e-10);
        assert!(pred.variance.unwrap() < 1e-18);
    }

    #[test]
    fn constant_response() {
        let data: Vec<Observation> = (0..5).map(|i| obs(i as f64 * 1.7, vec![], 4.5)).collect();
        let fit = ols_fit_day(0, &data, &MeanSpec::cmaq_only()).unwrap();
        assert_relative_eq!(fit.coefficients[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(fit.coefficients[0], 4.5, epsilon = 1e-12);
    }

    #[test]
    fn three_points_two_regressors_match_normal_equations() {
        let data = vec![
            obs(1.0, vec![2.0], 3.0),
            obs(2.0, vec![0.5], 1.0),
            obs(4.0, vec![1.0], 6.0),
            obs(3.0, vec![3.0], 2.0),
        ];
        let spec = spec_with(MeanKind::CmaqPlusCovs, 1);
        let fit = ols_fit_day(0, &data, &spec).unwrap();
        let x = DMatrix::from_row_slice(4, 3, &[1., 1., 2., 1., 2., 0.5, 1., 4., 1., 1., 3., 3.]);
        let y = DVector::from_column_slice(&[3., 1., 6., 2.]);
        let xtx = x.transpose() * &x;
        let beta = xtx.clone().try_inverse().unwrap() * x.transpose() * y;
        for j in 0..3 {
            assert_relative_eq!(fit.coefficients[j], beta[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn leverage_matches_direct_inverse() {
        let data: Vec<Observation> = [(1.0, 0.3), (2.0, -1.0), (2.5, 0.7), (4.0, 2.0), (5.0, 0.1)]
            .iter()
            .enumerate()
            .map(|(i, &(z, c))| obs(z, vec![c], i as f64 * 0.7 + z))
            .collect();
        let spec = spec_with(MeanKind::CmaqPlusCovs, 1);
        let fit = ols_fit_day(0, &data, &spec).unwrap();
        let x = spec.design(data.iter().map(|o| &o.point)).unwrap();
        let inv = (x.transpose() * &x).try_inverse().unwrap();
        let x0 = DVector::from_column_slice(&[1.0, 3.3, -0.4]);
        let direct = (x0.transpose() * &inv * &x0)[0];
        assert_relative_eq!(fit.leverage(x0.as_slice()), direct, epsilon = 1e-12);
        let pred = ols_predict(&fit, &[point(3.3, vec![-0.4])]).unwrap()[0];
        assert_relative_eq!(pred.variance.unwrap(), fit.residual_variance * (1.0 + direct), epsilon = 1e-12);
        let t = student_t_quantile(0.975, 2.0);
        assert_relative_eq!(pred.upper95.unwrap() - pred.mean, t * pred.variance.unwrap().sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn intercept_only_predicts_mean() {
        let data: Vec<Observation> = (0..4).map(|i| obs(0.0, vec![], i as f64)).collect();
        let x = DMatrix::from_element(4, 1, 1.0);
        let y = DVector::from_iterator(4, data.iter().map(|o| o.value));
        let ls = LeastSquares::fit(&x, &y, &["intercept".into()]).unwrap();
        assert_relative_eq!(ls.coefficients[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn collinear_columns_named() {
        let data: Vec<Observation> = (0..6).map(|i| obs(i as f64, vec![2.0 * i as f64 + 1.0], i as f64)).collect();
        let err = ols_fit_day(0, &data, &spec_with(MeanKind::CmaqPlusCovs, 1)).unwrap_err();
        match err {
            Error::SingularDesign { column, others } => {
                assert_eq!(column, "x0");
                assert_eq!(others, vec!["intercept".to_string(), "cmaq".to_string()]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn too_few_observations() {
        let data: Vec<Observation> = (0..2).map(|i| obs(i as f64, vec![], 1.0)).collect();
        assert!(matches!(ols_fit_day(0, &data, &MeanSpec::cmaq_only()), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_and_rss_monotone(
            rows in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -10.0..10.0f64), 8..30)
        ) {
            let data: Vec<Observation> = rows.iter().map(|&(z, a, b, y)| obs(z, vec![a, b], y)).collect();
            let small = ols_fit_day(0, &data, &spec_with(MeanKind::CmaqPlusCovs, 1));
            let big = ols_fit_day(0, &data, &spec_with(MeanKind::CmaqPlusCovs, 2));
            if let (Ok(small), Ok(big)) = (small, big) {
                let ynorm: f64 = data.iter().map(|o| o.value * o.value).sum::<f64>().sqrt();
                let x = big.spec.design(data.iter().map(|o| &o.point)).unwrap();
                for j in 0..x.ncols() {
                    let dot: f64 = x.column(j).iter().zip(&big.residuals).map(|(a, r)| a * r).sum();
                    prop_assert!(dot.abs() < 1e-8 * ynorm.max(1.0));
                }
                let rss = |f: &OlsFit| f.residuals.iter().map(|r| r * r).sum::<f64>();
                prop_assert!(rss(&big) <= rss(&small) * (1.0 + 1e-10) + 1e-12);
            }
        }
    }

    fn planted(noise: f64, seed: u64) -> SubsetData {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = crate::seed::rng_from(seed);
        let n_sites = 30;
        let per_site = 4;
        let n = n_sites * per_site;
        let x = DMatrix::from_fn(n, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n)
            .map(|i| 1.0 + 2.0 * x[(i, 1)] - 1.5 * x[(i, 4)] + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        SubsetData {
            names: (0..6).map(|i| format!("c{i}")).collect(),
            x,
            y,
            sites: (0..n).map(|i| SiteId::new(format!("s{}", i / per_site)).unwrap()).collect(),
        }
    }

    fn plan_for(data: &SubsetData, seed: u64) -> FoldPlan {
        let mut ids = data.sites.clone();
        ids.sort();
        ids.dedup();
        make_site_folds(&ids, 5, seed).unwrap()
    }

    #[test]
    fn planted_pair_recovered() {
        let data = planted(0.0, 4);
        let sel = best_subset_select(&data, 6, &plan_for(&data, 1)).unwrap();
        assert_eq!(sel.size, 2);
        assert_eq!(sel.predictors, vec!["c1".to_string(), "c4".to_string()]);
        assert_relative_eq!(sel.coefficients[1], 2.0, epsilon = 1e-9);
        assert_relative_eq!(sel.coefficients[2], -1.5, epsilon = 1e-9);
    }

    #[test]
    fn best_subsets_match_exhaustive_oracle() {
        let data = planted(1.0, 8);
        let rows: Vec<usize> = (0..data.y.len()).collect();
        let best = best_subsets(&data.x, &data.y, &rows, 6);
        for s in 1..=6 {
            let mut oracle: Option<(f64, Vec<usize>)> = None;
            for mask in 1u32..64 {
                if mask.count_ones() as usize != s {
                    continue;
                }
                let cols: Vec<usize> = (0..6).filter(|j| mask >> j & 1 == 1).collect();
                let coef = refit(&data, &rows, &cols).unwrap();
                let rss: f64 = rows.iter().map(|&i| (data.y[i] - predict_row(&data, i, &cols, &coef)).powi(2)).sum();
                if oracle.as_ref().is_none_or(|(b, _)| rss < *b) {
                    oracle = Some((rss, cols));
                }
            }
            assert_eq!(best[s - 1].as_ref().unwrap(), &oracle.unwrap().1, "size {s}");
        }
    }

    #[test]
    fn single_candidate() {
        let mut data = planted(0.5, 2);
        data.x = data.x.columns(1, 1).clone_owned();
        data.names = vec!["c1".into()];
        let sel = best_subset_select(&data, 3, &plan_for(&data, 1)).unwrap();
        assert_eq!(sel.size, 1);
        assert_eq!(sel.cv_rmse.len(), 1);
    }

    #[test]
    fn pure_noise_stops_early() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut data = planted(0.0, 3);
        let mut rng = crate::seed::rng_from(11);
        data.y = (0..data.y.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let sel = best_subset_select(&data, 6, &plan_for(&data, 1)).unwrap();
        assert_eq!(sel.size, 1);
    }

    #[test]
    fn deterministic_given_plan() {
        let data = planted(1.0, 5);
        let a = best_subset_select(&data, 4, &plan_for(&data, 7)).unwrap();
        let b = best_subset_select(&data, 4, &plan_for(&data, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_enforced() {
        let data = SubsetData {
            names: (0..25).map(|i| format!("c{i}")).collect(),
            x: DMatrix::zeros(10, 25),
            y: vec![0.0; 10],
            sites: (0..10).map(|i| SiteId::new(format!("s{i}")).unwrap()).collect(),
        };
        let plan = plan_for(&data, 1);
        assert!(matches!(best_subset_select(&data, 3, &plan), Err(Error::BudgetExceeded { candidates: 25, .. })));
    }

    #[test]
    fn stopping_rule() {
        assert_eq!(choose_size(&[2.0, 1.0, 0.9995, 0.5], 0.0), 2);
        assert_eq!(choose_size(&[2.0, 1e-16, 1e-16], 1e-9), 2);
        assert_eq!(choose_size(&[2.0, 1.0, 0.5], 0.0), 3);
    }
}
