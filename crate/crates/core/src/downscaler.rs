//! Bayesian downscaler: a daily spatial intercept field plus a constant
//! slope on the model output, fit by Metropolis-within-Gibbs.
//!
//! Y(s) = w(s) + b1 Z(s) + e(s),  w ~ GP(b0, s2 exp(-phi d)),  e ~ N(0, tau2).
//!
//! Each iteration draws (b0, b1) with w integrated out, then w by
//! Matheron's rule, then tau2 and s2 from their inverse-gamma full
//! conditionals, then log(phi) by random-walk Metropolis.

use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Observation, PointData};
use crate::error::{Error, Result};
use crate::geo::{haversine_distance, DistanceMatrix, LonLat};
use crate::linalg::{batch_means_se, cholesky_with_jitter, forward_solve, log_det, quantile_sorted, sample_variance};
use crate::prediction::Prediction;
use crate::seed::{derive_seed, rng_from};

pub const MIN_OBSERVATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    fn draw(&self, shape_add: f64, scale_add: f64, rng: &mut ChaCha8Rng) -> f64 {
        let g = Gamma::new(self.shape + shape_add, 1.0).expect("positive shape").sample(rng);
        (self.scale + scale_add) / g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownscalerPriors {
    pub beta_mean: [f64; 2],
    pub beta_var: [f64; 2],
    pub tau2: InverseGamma,
    pub sigma2: InverseGamma,
    /// Uniform support of the decay rate (per km).
    pub phi_lo: f64,
    pub phi_hi: f64,
}

impl Default for DownscalerPriors {
    fn default() -> Self {
        let vague = InverseGamma { shape: 2.0, scale: 1.0 };
        Self {
            beta_mean: [0.0, 1.0],
            beta_var: [1e6, 1e6],
            tau2: vague,
            sigma2: vague,
            phi_lo: 1e-4,
            phi_hi: 0.1,
        }
    }
}

impl DownscalerPriors {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta_var.iter().all(|&v| v > 0.0)
            && [self.tau2, self.sigma2].iter().all(|g| g.shape > 0.0 && g.scale > 0.0)
            && 0.0 < self.phi_lo
            && self.phi_lo < self.phi_hi;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid downscaler priors {self:?}")))
        }
    }
}

/// Starting variance and decay parameters. The coefficients and the
/// intercept field are drawn first in every iteration and need no start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownscalerInit {
    pub tau2: f64,
    pub sigma2: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial random-walk sd on log(phi); adapted during burn-in.
    pub step: f64,
    /// Burn-in adaptation steers acceptance towards this rate.
    pub target_acceptance: f64,
    pub init: Option<DownscalerInit>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            n_burn: 5_000,
            thin: 1,
            seed: 1,
            step: 0.5,
            target_acceptance: 0.375,
            init: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burn >= self.n_iter {
            return Err(Error::Config(format!(
                "burn-in ({}) must be shorter than the chain ({})",
                self.n_burn, self.n_iter
            )));
        }
        if self.thin == 0 || !(self.step > 0.0) {
            return Err(Error::Config("thin must be >= 1 and step > 0".into()));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.n_burn).div_ceil(self.thin)
    }
}

/// Retained draws for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DownscalerPosterior {
    pub day: usize,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub phi: Vec<f64>,
    /// Spatial intercept at the training sites, one row of n per draw.
    pub w: Vec<f64>,
    /// Post-burn-in Metropolis acceptance rate for phi.
    pub acceptance: f64,
    /// Adapted proposal sd on log(phi).
    pub step: f64,
    locs: Vec<LonLat>,
}

impl DownscalerPosterior {
    pub fn n_samples(&self) -> usize {
        self.beta0.len()
    }

    pub fn n_sites(&self) -> usize {
        self.locs.len()
    }

    pub fn w_sample(&self, k: usize) -> &[f64] {
        let n = self.locs.len();
        &self.w[k * n..(k + 1) * n]
    }

    pub fn parameters(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("beta0", &self.beta0),
            ("beta1", &self.beta1),
            ("tau2", &self.tau2),
            ("sigma2", &self.sigma2),
            ("phi", &self.phi),
        ]
    }

    pub fn summary(&self) -> Vec<ParamSummary> {
        self.parameters()
            .iter()
            .map(|(name, xs)| {
                let mut sorted = xs.to_vec();
                sorted.sort_by(f64::total_cmp);
                ParamSummary {
                    name,
                    mean: crate::linalg::mean(xs),
                    sd: sample_variance(xs).sqrt(),
                    q025: quantile_sorted(&sorted, 0.025),
                    q975: quantile_sorted(&sorted, 0.975),
                    mc_se: batch_means_se(xs, 50),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSummary {
    pub name: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// Monte-Carlo standard error of the mean (batch means).
    pub mc_se: f64,
}

fn corr_matrix(d: &DMatrix<f64>, phi: f64) -> DMatrix<f64> {
    d.map(|h| (-phi * h).exp())
}

fn factor(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    cholesky_with_jitter(m, 1e-10)
}

/// Lower-triangular matrix-vector product L x.
fn lower_mul(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>) -> DVector<f64> {
    let l = chol.l_dirty();
    let n = x.len();
    DVector::from_fn(n, |i, _| (0..=i).map(|k| l[(i, k)] * x[k]).sum())
}

/// -0.5 log|R| - q / (2 s2) with q = u' R^-1 u.
fn field_loglik(chol_r: &Cholesky<f64, Dyn>, u: &DVector<f64>, s2: f64) -> (f64, f64) {
    let mut v = u.clone();
    forward_solve(chol_r, &mut v);
    let q = v.norm_squared();
    (-0.5 * log_det(chol_r) - q / (2.0 * s2), q)
}

pub fn downscaler_fit(day: usize, obs: &[Observation], priors: &DownscalerPriors, mcmc: &McmcConfig) -> Result<DownscalerPosterior> {
    priors.validate()?;
    mcmc.validate()?;
    let n = obs.len();
    if n < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData(format!(
            "day {day}: downscaler needs {MIN_OBSERVATIONS} observations, got {n}"
        )));
    }
    let locs: Vec<LonLat> = obs.iter().map(|o| o.point.loc).collect();
    let d = DistanceMatrix::between(&locs).as_matrix().clone();
    let y = DVector::from_iterator(n, obs.iter().map(|o| o.value));
    let z = DVector::from_iterator(n, obs.iter().map(|o| o.point.cmaq));
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
    let prior_prec = Matrix2::new(1.0 / priors.beta_var[0], 0.0, 0.0, 1.0 / priors.beta_var[1]);
    let prior_term = prior_prec * Vector2::new(priors.beta_mean[0], priors.beta_mean[1]);
    let mut rng = rng_from(mcmc.seed);

    let init = match mcmc.init {
        Some(i) => i,
        None => default_init(&x, &y, &d, priors)?,
    };
    if !(priors.phi_lo..=priors.phi_hi).contains(&init.phi) || init.tau2 <= 0.0 || init.sigma2 <= 0.0 {
        return Err(Error::Config(format!("initial state {init:?} outside the prior support")));
    }
    let (mut tau2, mut s2, mut phi) = (init.tau2, init.sigma2, init.phi);
    let mut r_mat = corr_matrix(&d, phi);
    let mut chol_r = factor(r_mat.clone())?;

    let keep = mcmc.n_retained();
    let mut post = DownscalerPosterior {
        day,
        beta0: Vec::with_capacity(keep),
        beta1: Vec::with_capacity(keep),
        tau2: Vec::with_capacity(keep),
        sigma2: Vec::with_capacity(keep),
        phi: Vec::with_capacity(keep),
        w: Vec::with_capacity(keep * n),
        acceptance: 0.0,
        step: mcmc.step,
        locs,
    };
    let mut step = mcmc.step;
    let (mut window_acc, mut window_n) = (0usize, 0usize);
    let mut accepted_after_burn = 0usize;
    let (lo, hi) = (priors.phi_lo.ln(), priors.phi_hi.ln());
    let half_n = n as f64 / 2.0;

    for it in 0..mcmc.n_iter {
        // (b0, b1) | y with w integrated out.
        let mut v = &r_mat * s2;
        for i in 0..n {
            v[(i, i)] += tau2;
        }
        let chol_v = factor(v)?;
        let vinv_x = chol_v.solve(&x);
        let xtvx = x.transpose() * &vinv_x;
        let prec = Matrix2::new(xtvx[(0, 0)], xtvx[(0, 1)], xtvx[(1, 0)], xtvx[(1, 1)]) + prior_prec;
        let xtvy = vinv_x.transpose() * &y;
        let rhs = Vector2::new(xtvy[0], xtvy[1]) + prior_term;
        let pc = prec
            .cholesky()
            .ok_or_else(|| Error::Numerical("coefficient precision not positive definite".into()))?;
        let mean = pc.solve(&rhs);
        let xi = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
        // prec = L L'; L' e = xi gives e ~ N(0, prec^-1).
        let lt = pc.l().transpose();
        let e = lt.solve_upper_triangular(&xi).expect("non-singular factor");
        let beta = mean + e;

        // w | b, y via Matheron's rule.
        let r = &y - &z * beta[1] - DVector::from_element(n, beta[0]);
        let xi_u = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u_star = lower_mul(&chol_r, &xi_u) * s2.sqrt();
        let e_star = DVector::from_fn(n, |_, _| tau2.sqrt() * rng.sample::<f64, _>(StandardNormal));
        let corr = chol_v.solve(&(&r - &u_star - &e_star));
        let u = &u_star + (&r_mat * corr) * s2;
        let w = &u + DVector::from_element(n, beta[0]);

        // tau2 | w, b1.
        let resid = &y - &w - &z * beta[1];
        tau2 = priors.tau2.draw(half_n, resid.norm_squared() / 2.0, &mut rng);

        // s2 | w, b0, phi.
        let (_, q) = field_loglik(&chol_r, &u, 1.0);
        s2 = priors.sigma2.draw(half_n, q / 2.0, &mut rng);

        // log phi by random walk; the uniform prior on phi contributes a
        // log(phi) Jacobian on the log scale.
        let cur = field_loglik(&chol_r, &u, s2).0 + phi.ln();
        let prop = phi.ln() + step * rng.sample::<f64, _>(StandardNormal);
        let mut accepted = false;
        if prop > lo && prop < hi {
            let phi_new = prop.exp();
            let r_new = corr_matrix(&d, phi_new);
            if let Ok(chol_new) = factor(r_new.clone()) {
                let cand = field_loglik(&chol_new, &u, s2).0 + prop;
                if rng.random::<f64>().ln() < cand - cur {
                    phi = phi_new;
                    r_mat = r_new;
                    chol_r = chol_new;
                    accepted = true;
                }
            }
        }

        if it < mcmc.n_burn {
            window_acc += usize::from(accepted);
            window_n += 1;
            if window_n == 50 {
                let rate = window_acc as f64 / window_n as f64;
                step = (step * (2.0 * (rate - mcmc.target_acceptance)).exp()).clamp(1e-3, 5.0);
                window_acc = 0;
                window_n = 0;
            }
        } else {
            accepted_after_burn += usize::from(accepted);
            if (it - mcmc.n_burn) % mcmc.thin == 0 {
                post.beta0.push(beta[0]);
                post.beta1.push(beta[1]);
                post.tau2.push(tau2);
                post.sigma2.push(s2);
                post.phi.push(phi);
                post.w.extend(w.iter());
            }
        }
    }
    post.acceptance = accepted_after_burn as f64 / (mcmc.n_iter - mcmc.n_burn) as f64;
    post.step = step;
    Ok(post)
}

/// OLS residual variance split evenly between nugget and
/// field, decay rate giving correlation e^-3 at half the largest distance.
fn default_init(x: &DMatrix<f64>, y: &DVector<f64>, d: &DMatrix<f64>, priors: &DownscalerPriors) -> Result<DownscalerInit> {
    let ls = crate::regression::LeastSquares::fit(x, y, &["intercept".into(), "cmaq".into()])?;
    let s2 = (ls.rss / (y.len() - 2) as f64).max(1e-6);
    let dmax = d.max().max(1e-6);
    Ok(DownscalerInit {
        tau2: s2 / 2.0,
        sigma2: s2 / 2.0,
        phi: (6.0 / dmax).clamp(priors.phi_lo * 1.000001, priors.phi_hi / 1.000001),
    })
}

/// Posterior-predictive draws at the targets: for each of `n_draws` evenly
/// thinned samples, krige the intercept field conditionally, add b1 Z and
/// nugget noise. Returns the median, 2.5/97.5 percentiles and the sample
/// variance of the draws.
pub fn downscaler_predict(post: &DownscalerPosterior, targets: &[PointData], n_draws: usize, seed: u64) -> Result<Vec<Prediction>> {
    let draws = predictive_draws(post, targets, n_draws, seed)?;
    Ok(draws
        .into_iter()
        .map(|mut ds| {
            let variance = sample_variance(&ds);
            ds.sort_by(f64::total_cmp);
            Prediction {
                mean: quantile_sorted(&ds, 0.5),
                variance: Some(variance),
                lower95: Some(quantile_sorted(&ds, 0.025)),
                upper95: Some(quantile_sorted(&ds, 0.975)),
            }
        })
        .collect())
}

/// Raw predictive draws, one vector per target.
pub fn predictive_draws(post: &DownscalerPosterior, targets: &[PointData], n_draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let total = post.n_samples();
    if total == 0 {
        return Err(Error::InsufficientData("empty posterior".into()));
    }
    let n_draws = n_draws.clamp(1, total);
    let n = post.n_sites();
    let mut rng = rng_from(derive_seed(seed, "downscaler-predict", post.day as u64));
    let mut out = vec![Vec::with_capacity(n_draws); targets.len()];
    let d = DistanceMatrix::between(&post.locs).as_matrix().clone();
    let cross: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| post.locs.iter().map(|&l| haversine_distance(l, t.loc)).collect())
        .collect();
    for j in 0..n_draws {
        let k = j * total / n_draws;
        let (b0, b1, tau2, s2, phi) = (post.beta0[k], post.beta1[k], post.tau2[k], post.sigma2[k], post.phi[k]);
        let chol = factor(corr_matrix(&d, phi))?;
        let u = DVector::from_iterator(n, post.w_sample(k).iter().map(|w| w - b0));
        let a = chol.solve(&u);
        for (t, target) in targets.iter().enumerate() {
            let r0 = DVector::from_iterator(n, cross[t].iter().map(|h| (-phi * h).exp()));
            let cond_mean = r0.dot(&a);
            let mut v = r0;
            forward_solve(&chol, &mut v);
            let cond_var = (s2 * (1.0 - v.norm_squared())).max(0.0);
            let w0 = b0 + cond_mean + cond_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let y0 = w0 + b1 * target.cmaq + tau2.sqrt() * rng.sample::<f64, _>(StandardNormal);
            out[t].push(y0);
        }
    }
    Ok(out)
}

pub const SAMPLE_MAGIC: &[u8; 5] = b"FMDS1";

/// Raw-sample log: magic, day, n_samples, n_sites (u64 LE), then per draw
/// beta0, beta1, tau2, sigma2, phi and the n intercept values (f64 LE).
pub fn write_samples<W: Write>(post: &DownscalerPosterior, mut out: W) -> Result<()> {
    out.write_all(SAMPLE_MAGIC)?;
    for v in [post.day, post.n_samples(), post.n_sites()] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    for k in 0..post.n_samples() {
        for v in [post.beta0[k], post.beta1[k], post.tau2[k], post.sigma2[k], post.phi[k]]
            .iter()
            .chain(post.w_sample(k))
        {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a log written by [`write_samples`]. Site locations are not stored
/// and must be supplied in the training order.
pub fn read_samples<R: Read>(mut input: R, locs: Vec<LonLat>) -> Result<DownscalerPosterior> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != SAMPLE_MAGIC {
        return Err(Error::DataIntegrity("not a downscaler sample log".into()));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let day = next_u64(&mut input)? as usize;
    let m = next_u64(&mut input)? as usize;
    let n = next_u64(&mut input)? as usize;
    if n != locs.len() {
        return Err(Error::DataIntegrity(format!("sample log has {n} sites, {} locations given", locs.len())));
    }
    let mut vals = vec![0.0; m * (5 + n)];
    let mut buf = [0u8; 8];
    for v in vals.iter_mut() {
        input.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    let col = |c: usize| (0..m).map(|k| vals[k * (5 + n) + c]).collect::<Vec<_>>();
    let w = (0..m).flat_map(|k| vals[k * (5 + n) + 5..(k + 1) * (5 + n)].to_vec()).collect();
    Ok(DownscalerPosterior {
        day,
        beta0: col(0),
        beta1: col(1),
        tau2: col(2),
        sigma2: col(3),
        phi: col(4),
        w,
        acceptance: f64::NAN,
        step: f64::NAN,
        locs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Study;
    use crate::ingest::{generate_synthetic, SyntheticConfig};
    use crate::regression::{ols_fit_day, MeanSpec};

    fn short(seed: u64) -> McmcConfig {
        McmcConfig {
            n_iter: 3000,
            n_burn: 1000,
            seed,
            ..Default::default()
        }
    }

    fn sim(n_sites: usize, n_days: usize, nugget: f64, sill: f64, seed: u64) -> Study {
        let cfg = SyntheticConfig {
            n_sites,
            n_days,
            n_rows: 40,
            n_cols: 60,
            cell_km: 20.0,
            n_covariates: 0,
            nugget,
            partial_sill: sill,
            range_km: 300.0,
            seed,
            ..Default::default()
        };
        let (m, g, _) = generate_synthetic(&cfg).unwrap();
        Study::new(m, g).unwrap()
    }

    #[test]
    fn config_errors() {
        let study = sim(10, 1, 0.5, 2.0, 1);
        let obs = study.day_observations(0, |_| true);
        let zero = McmcConfig {
            n_iter: 100,
            n_burn: 100,
            ..Default::default()
        };
        assert!(matches!(downscaler_fit(0, &obs, &DownscalerPriors::default(), &zero), Err(Error::Config(_))));
        assert!(matches!(
            downscaler_fit(0, &obs[..4], &DownscalerPriors::default(), &short(1)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn deterministic_and_sized() {
        let study = sim(30, 1, 0.5, 2.0, 2);
        let obs = study.day_observations(0, |_| true);
        let cfg = McmcConfig {
            n_iter: 600,
            n_burn: 200,
            thin: 3,
            ..short(5)
        };
        let a = downscaler_fit(0, &obs, &DownscalerPriors::default(), &cfg).unwrap();
        let b = downscaler_fit(0, &obs, &DownscalerPriors::default(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_samples(), cfg.n_retained());
        assert_eq!(a.n_samples(), 134);
        assert!(a.tau2.iter().chain(&a.sigma2).all(|&v| v > 0.0));
        assert!(a.phi.iter().all(|&p| (1e-4..=0.1).contains(&p)));
    }

    #[test]
    fn pinned_field_collapses_to_ols() {
        let study = sim(60, 1, 1.0, 2.0, 3);
        let obs = study.day_observations(0, |_| true);
        let priors = DownscalerPriors {
            sigma2: InverseGamma { shape: 1e12, scale: 1e6 },
            ..Default::default()
        };
        let post = downscaler_fit(0, &obs, &priors, &short(7)).unwrap();
        let ols = ols_fit_day(0, &obs, &MeanSpec::cmaq_only()).unwrap();
        let s = post.summary();
        for (i, p) in s[..2].iter().enumerate() {
            assert!((p.mean - ols.coefficients[i]).abs() < 3.0 * p.mc_se, "{}: {} vs {} (se {})", p.name, p.mean, ols.coefficients[i], p.mc_se);
        }
    }

    /// 5-site toy with the field pinned: the tau2 marginal posterior is
    /// IG(tau2) x N(y; X m0, tau2 I + s2 R + X P0 X'), integrated on a grid.
    #[test]
    fn tau2_posterior_matches_quadrature() {
        let study = sim(5, 1, 1.0, 0.5, 4);
        let obs = study.day_observations(0, |_| true);
        let priors = DownscalerPriors {
            beta_var: [4.0, 4.0],
            sigma2: InverseGamma { shape: 1e12, scale: 1e6 },
            ..Default::default()
        };
        let cfg = McmcConfig {
            n_iter: 42_000,
            n_burn: 2000,
            ..short(9)
        };
        let post = downscaler_fit(0, &obs, &priors, &cfg).unwrap();
        let n = obs.len();
        let y = DVector::from_iterator(n, obs.iter().map(|o| o.value));
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { obs[i].point.cmaq });
        let m0 = &x * DVector::from_column_slice(&priors.beta_mean);
        let xpx = &x * DMatrix::from_diagonal(&DVector::from_column_slice(&priors.beta_var)) * x.transpose();
        let log_post = |t: f64| {
            let mut v = xpx.clone();
            for i in 0..n {
                v[(i, i)] += t + 1e-6;
            }
            let c = v.cholesky().unwrap();
            let r = &y - &m0;
            let quad = r.dot(&c.solve(&r));
            let ll = -0.5 * (c.l().diagonal().map(|d| d.ln()).sum() * 2.0 + quad);
            ll - (priors.tau2.shape + 1.0) * t.ln() - priors.tau2.scale / t
        };
        let grid: Vec<f64> = (1..40_000).map(|i| i as f64 * 1e-3).collect();
        let lp: Vec<f64> = grid.iter().map(|&t| log_post(t)).collect();
        let top = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let wts: Vec<f64> = lp.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = wts.iter().sum();
        let oracle: f64 = grid.iter().zip(&wts).map(|(t, w)| t * w).sum::<f64>() / total;
        let s = &post.summary()[2];
        assert!((s.mean - oracle).abs() < 3.0 * s.mc_se, "chain {} oracle {} se {}", s.mean, oracle, s.mc_se);
    }

    /// 5-site toy with the nugget pinned: the joint marginal posterior of
    /// (sigma2, phi) is IG(sigma2) U(phi) N(y; X m0, sigma2 R(phi) + tau2 I + X P0 X'),
    /// integrated on a grid.
    #[test]
    fn field_parameters_match_quadrature() {
        let study = sim(5, 1, 0.5, 2.0, 10);
        let obs = study.day_observations(0, |_| true);
        let priors = DownscalerPriors {
            beta_var: [4.0, 4.0],
            tau2: InverseGamma { shape: 1e12, scale: 1e6 },
            ..Default::default()
        };
        let cfg = McmcConfig {
            n_iter: 62_000,
            n_burn: 2000,
            ..short(12)
        };
        let post = downscaler_fit(0, &obs, &priors, &cfg).unwrap();
        let n = obs.len();
        let locs: Vec<LonLat> = obs.iter().map(|o| o.point.loc).collect();
        let d = DistanceMatrix::between(&locs).as_matrix().clone();
        let y = DVector::from_iterator(n, obs.iter().map(|o| o.value));
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { obs[i].point.cmaq });
        let r = &y - &x * DVector::from_column_slice(&priors.beta_mean);
        let xpx = &x * DMatrix::from_diagonal(&DVector::from_column_slice(&priors.beta_var)) * x.transpose();
        let (mut total, mut m_s2, mut m_phi) = (0.0, 0.0, 0.0);
        let mut cells = Vec::new();
        let (lo, hi) = (priors.phi_lo.ln(), priors.phi_hi.ln());
        for a in 0..300 {
            let lphi = lo + (a as f64 + 0.5) * (hi - lo) / 300.0;
            let phi = lphi.exp();
            let rm = corr_matrix(&d, phi);
            for b in 0..1500 {
                let s2 = (b as f64 + 0.5) * 0.02;
                let v = &rm * s2 + &xpx + DMatrix::identity(n, n) * 1e-6;
                let c = v.cholesky().unwrap();
                let ll = -0.5 * (2.0 * c.l().diagonal().map(|d| d.ln()).sum() + r.dot(&c.solve(&r)));
                // Uniform prior on phi, integrated over log(phi): Jacobian phi.
                let lp = ll - (priors.sigma2.shape + 1.0) * s2.ln() - priors.sigma2.scale / s2 + lphi;
                cells.push((lp, s2, phi));
            }
        }
        let top = cells.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        for (lp, s2, phi) in cells {
            let w = (lp - top).exp();
            total += w;
            m_s2 += w * s2;
            m_phi += w * phi;
        }
        let s = post.summary();
        for (p, oracle) in [(&s[3], m_s2 / total), (&s[4], m_phi / total)] {
            assert!((p.mean - oracle).abs() < 3.0 * p.mc_se, "{}: chain {} oracle {} se {}", p.name, p.mean, oracle, p.mc_se);
        }
    }

    #[test]
    fn start_point_does_not_matter() {
        let study = sim(40, 1, 0.5, 2.0, 13);
        let obs = study.day_observations(0, |_| true);
        let priors = DownscalerPriors::default();
        let run = |init: DownscalerInit| {
            let cfg = McmcConfig {
                n_iter: 12_000,
                n_burn: 2000,
                init: Some(init),
                ..short(21)
            };
            downscaler_fit(0, &obs, &priors, &cfg).unwrap().summary()
        };
        let truth = run(DownscalerInit {
            tau2: 0.5,
            sigma2: 2.0,
            phi: 1.0 / 300.0,
        });
        // Prior means of the inverse gammas and the middle of the phi support.
        let prior = run(DownscalerInit {
            tau2: 1.0,
            sigma2: 1.0,
            phi: 0.05,
        });
        for (a, b) in truth.iter().zip(&prior) {
            let se = (a.mc_se.powi(2) + b.mc_se.powi(2)).sqrt();
            assert!((a.mean - b.mean).abs() < 3.0 * se, "{}: {} vs {} (se {se})", a.name, a.mean, b.mean);
        }
    }

    #[test]
    fn far_target_and_interval_order() {
        let study = sim(40, 1, 0.5, 2.0, 5);
        let obs = study.day_observations(0, |_| true);
        // Decay rates of at least 0.005/km leave no correlation 5000 km away.
        let priors = DownscalerPriors {
            phi_lo: 0.002,
            ..Default::default()
        };
        let post = downscaler_fit(0, &obs, &priors, &short(3)).unwrap();
        let far = PointData {
            loc: LonLat::new(-20.0, 40.0).unwrap(),
            cmaq: 12.0,
            covariates: vec![],
            day_of_year: 1,
        };
        let mut targets: Vec<PointData> = obs.iter().take(5).map(|o| o.point.clone()).collect();
        targets.push(far);
        let preds = downscaler_predict(&post, &targets, 500, 1).unwrap();
        for p in &preds {
            assert!(p.lower95.unwrap() <= p.mean && p.mean <= p.upper95.unwrap());
        }
        let mut regression: Vec<f64> = post.beta0.iter().zip(&post.beta1).map(|(a, b)| a + 12.0 * b).collect();
        regression.sort_by(f64::total_cmp);
        let expect = quantile_sorted(&regression, 0.5);
        let p = preds[5];
        // Median of 500 draws: se about 1.25 sd / sqrt(500).
        let se = 1.25 * p.variance.unwrap().sqrt() / 500f64.sqrt();
        assert!((p.mean - expect).abs() < 3.0 * se, "median {} expected {} se {}", p.mean, expect, se);
    }

    #[test]
    fn training_site_reproduced_without_nugget() {
        let study = sim(30, 1, 0.5, 2.0, 8);
        let obs = study.day_observations(0, |_| true);
        let priors = DownscalerPriors {
            tau2: InverseGamma { shape: 1e12, scale: 1e6 },
            ..Default::default()
        };
        let post = downscaler_fit(0, &obs, &priors, &short(4)).unwrap();
        let targets: Vec<PointData> = obs.iter().take(5).map(|o| o.point.clone()).collect();
        let preds = downscaler_predict(&post, &targets, 500, 2).unwrap();
        for (o, p) in obs.iter().zip(preds) {
            let se = 1.25 * p.variance.unwrap().sqrt() / 500f64.sqrt();
            assert!((p.mean - o.value).abs() <= 3.0 * se + 1e-6, "{} vs {}", p.mean, o.value);
        }
    }

    #[test]
    fn sample_log_roundtrip() {
        let study = sim(12, 1, 0.5, 2.0, 6);
        let obs = study.day_observations(0, |_| true);
        let cfg = McmcConfig {
            n_iter: 300,
            n_burn: 100,
            ..short(2)
        };
        let post = downscaler_fit(0, &obs, &DownscalerPriors::default(), &cfg).unwrap();
        let mut buf = Vec::new();
        write_samples(&post, &mut buf).unwrap();
        let back = read_samples(buf.as_slice(), obs.iter().map(|o| o.point.loc).collect()).unwrap();
        assert_eq!(back.beta1, post.beta1);
        assert_eq!(back.w, post.w);
        assert!(read_samples(&b"junk"[..], vec![]).is_err());
    }
}
