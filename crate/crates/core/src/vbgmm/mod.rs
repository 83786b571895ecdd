//! Variational Bayesian Gaussian mixture with a truncated Dirichlet-process
//! (stick-breaking) prior on the weights and Normal-Wishart priors on the
//! component means and precisions.
//!
//! The fit alternates an E-step (responsibilities under the current
//! variational posteriors) with closed-form posterior updates, and monitors
//! the evidence lower bound. Scoring uses the posterior point estimates:
//! expected stick-breaking weights, posterior means and expected covariances.

mod kmeans;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Largest per-sample lower-bound decrease tolerated between iterations.
pub const ELBO_SLACK: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Kmeans,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Truncation level of the stick-breaking prior.
    pub max_components: usize,
    /// Convergence threshold on the change of the per-sample lower bound.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Added to the diagonal of the Wishart scale, and therefore to every
    /// posterior scale matrix.
    pub reg_covar: f64,
    pub init: Init,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_components: 10,
            tol: 1e-3,
            max_iter: 100,
            seed: 0,
            reg_covar: 1e-6,
            init: Init::Kmeans,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_components < 1 {
            return Err(Error::InvalidConfig("max_components must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.reg_covar >= 0.0 && self.reg_covar.is_finite()) {
            return Err(Error::InvalidConfig("reg_covar must be non-negative".into()));
        }
        Ok(())
    }
}

/// Optional overrides for the data-dependent prior defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub alpha: Option<f64>,
    pub mean_precision: Option<f64>,
    pub wishart_dof: Option<f64>,
}

impl PriorConfig {
    /// Fills unset fields with the defaults: `alpha = 1/K`, data mean,
    /// `mean_precision = 1`, `wishart_dof = dim`, sample covariance as the
    /// Wishart scale.
    pub fn resolve(&self, data: &[Vec<f64>], cfg: &FitConfig) -> Result<Priors> {
        let dim = check_data(data)?;
        cfg.validate()?;
        let n = data.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in data {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut cov = vec![vec![0.0; dim]; dim];
        if data.len() > 1 {
            for x in data {
                for i in 0..dim {
                    let di = x[i] - mean[i];
                    for j in 0..dim {
                        cov[i][j] += di * (x[j] - mean[j]);
                    }
                }
            }
            for row in cov.iter_mut() {
                row.iter_mut().for_each(|c| *c /= n - 1.0);
            }
        }

        let priors = Priors {
            alpha: self.alpha.unwrap_or(1.0 / cfg.max_components as f64),
            mean_prior: mean,
            mean_precision: self.mean_precision.unwrap_or(1.0),
            wishart_scale: cov,
            wishart_dof: self.wishart_dof.unwrap_or(dim as f64),
        };
        priors.validate(dim, cfg.reg_covar)?;
        Ok(priors)
    }
}

/// Hyperparameters of the mixture prior.
///
/// `wishart_scale` is the prior scale in covariance units (the inverse of the
/// Wishart scale matrix on precisions). `mean_precision` scales each
/// component's precision in the conditional prior on its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub alpha: f64,
    pub mean_prior: Vec<f64>,
    pub mean_precision: f64,
    pub wishart_scale: Vec<Vec<f64>>,
    pub wishart_dof: f64,
}

impl Priors {
    pub fn empirical(data: &[Vec<f64>], cfg: &FitConfig) -> Result<Self> {
        PriorConfig::default().resolve(data, cfg)
    }

    /// Checks the prior against a dimension. The scale must be positive
    /// definite once `reg_covar` is added to its diagonal.
    pub fn validate(&self, dim: usize, reg_covar: f64) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.mean_precision > 0.0 && self.mean_precision.is_finite()) {
            return bad("mean_precision must be positive");
        }
        if !(self.wishart_dof >= dim as f64 && self.wishart_dof.is_finite()) {
            return bad("wishart_dof must be at least the feature dimension");
        }
        if self.mean_prior.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.mean_prior.len(),
            });
        }
        if self.mean_prior.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.regularized_scale(dim, reg_covar).map(|_| ())
    }

    fn regularized_scale(&self, dim: usize, reg_covar: f64) -> Result<DMatrix<f64>> {
        if self.wishart_scale.len() != dim || self.wishart_scale.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.wishart_scale.len(),
            });
        }
        let mut scale = DMatrix::from_fn(dim, dim, |i, j| self.wishart_scale[i][j]);
        if scale.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !is_symmetric(&scale) {
            return Err(Error::InvalidConfig("wishart_scale must be symmetric".into()));
        }
        for i in 0..dim {
            scale[(i, i)] += reg_covar;
        }
        if scale.clone().cholesky().is_none() {
            return Err(Error::InvalidConfig(
                "wishart_scale is not positive definite; increase reg_covar".into(),
            ));
        }
        Ok(scale)
    }
}

/// Convergence record of a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// Final per-sample lower bound (up to an additive constant).
    pub elbo: f64,
    pub n_iter: usize,
    pub converged: bool,
    #[serde(skip)]
    pub elbo_trace: Vec<f64>,
}

/// A fitted Gaussian mixture ready for density evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<DMatrix<f64>>,
    /// Lower Cholesky factors of `covariances`.
    factors: Vec<DMatrix<f64>>,
    /// `ln w_k - d/2 ln 2pi - 1/2 ln det cov_k`
    log_norms: Vec<f64>,
    summary: FitSummary,
}

impl MixtureModel {
    /// Builds a mixture from explicit parameters, validating every invariant.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidModel("mixture has no components".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(Error::InvalidModel(format!(
                "{k} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidModel("zero-dimensional mixture".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidModel("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        let mut covs = Vec::with_capacity(k);
        for (j, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != dim || cov.len() != dim || cov.iter().any(|r| r.len() != dim) {
                return Err(Error::InvalidModel(format!("component {j} has inconsistent dimensions")));
            }
            if mean.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("component {j} has non-finite parameters")));
            }
            covs.push(DMatrix::from_fn(dim, dim, |r, c| cov[r][c]));
        }
        Self::from_parts(weights, means, covs, FitSummary::default())
    }

    fn from_parts(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<DMatrix<f64>>,
        summary: FitSummary,
    ) -> Result<Self> {
        let dim = means[0].len();
        let mut factors = Vec::with_capacity(weights.len());
        let mut log_norms = Vec::with_capacity(weights.len());
        for (j, cov) in covariances.iter().enumerate() {
            if !is_symmetric(cov) {
                return Err(Error::InvalidModel(format!("covariance {j} is not symmetric")));
            }
            let l = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::InvalidModel(format!("covariance {j} is not positive definite")))?
                .l();
            let half_log_det: f64 = (0..dim).map(|i| l[(i, i)].ln()).sum();
            log_norms.push(weights[j].ln() - 0.5 * dim as f64 * LN_2PI - half_log_det);
            factors.push(l);
        }
        Ok(MixtureModel {
            dim,
            weights,
            means,
            covariances,
            factors,
            log_norms,
            summary,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Covariances as nested row vectors.
    pub fn covariance_rows(&self) -> Vec<Vec<Vec<f64>>> {
        self.covariances
            .iter()
            .map(|c| (0..self.dim).map(|i| (0..self.dim).map(|j| c[(i, j)]).collect()).collect())
            .collect()
    }

    pub fn summary(&self) -> &FitSummary {
        &self.summary
    }

    pub fn with_summary(mut self, summary: FitSummary) -> Self {
        self.summary = summary;
        self
    }

    /// Number of components whose weight exceeds `threshold`.
    pub fn effective_components(&self, threshold: f64) -> usize {
        self.weights.iter().filter(|&&w| w > threshold).count()
    }

    /// `ln sum_k w_k N(x | mean_k, cov_k)`, via log-sum-exp over the
    /// Cholesky-factored component densities.
    pub fn weighted_log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut z = vec![0.0; self.dim];
        let mut terms = Vec::with_capacity(self.weights.len());
        for ((l, mean), &log_norm) in self.factors.iter().zip(&self.means).zip(&self.log_norms) {
            if log_norm == f64::NEG_INFINITY {
                continue;
            }
            let quad = mahalanobis_sq(l, mean, x, &mut z);
            terms.push(log_norm - 0.5 * quad);
        }
        Ok(log_sum_exp(&terms))
    }
}

/// Squared Mahalanobis distance `|L^-1 (x - mean)|^2` by forward substitution.
fn mahalanobis_sq(l: &DMatrix<f64>, mean: &[f64], x: &[f64], z: &mut [f64]) -> f64 {
    let d = mean.len();
    let mut acc = 0.0;
    for i in 0..d {
        let mut s = x[i] - mean[i];
        for j in 0..i {
            s -= l[(i, j)] * z[j];
        }
        z[i] = s / l[(i, i)];
        acc += z[i] * z[i];
    }
    acc
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let d = m.nrows();
    m.ncols() == d
        && (0..d).all(|i| {
            (0..i).all(|j| {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
            })
        })
}

fn check_data(data: &[Vec<f64>]) -> Result<usize> {
    let first = data.first().ok_or(Error::EmptyCorpus)?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    for x in data {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
    }
    Ok(dim)
}

fn betaln(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Variational posterior of one component.
struct Component {
    /// Expected number of points.
    nk: f64,
    /// Beta posterior of the stick-breaking fraction.
    stick_a: f64,
    stick_b: f64,
    /// Mean precision scale (beta_k) and posterior mean (m_k).
    beta: f64,
    mean: DVector<f64>,
    /// Wishart degrees of freedom.
    dof: f64,
    /// Expected covariance `W_k^-1 / dof` and its lower Cholesky factor.
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    half_log_det_cov: f64,
}

struct Fitter<'a> {
    data: &'a [Vec<f64>],
    dim: usize,
    alpha: f64,
    mean_prior: DVector<f64>,
    mean_precision: f64,
    scale: DMatrix<f64>,
    dof: f64,
}

impl Fitter<'_> {
    fn m_step(&self, resp: &[Vec<f64>]) -> Result<Vec<Component>> {
        let k = resp[0].len();
        let d = self.dim;
        let mut nk = vec![0.0; k];
        for row in resp {
            for (acc, r) in nk.iter_mut().zip(row) {
                *acc += r;
            }
        }
        // tail[j] = sum of nk over components after j
        let mut tail = vec![0.0; k];
        for j in (0..k.saturating_sub(1)).rev() {
            tail[j] = tail[j + 1] + nk[j + 1];
        }

        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let n_j = nk[j];
            let mut xbar = DVector::zeros(d);
            let mut scatter = DMatrix::zeros(d, d);
            if n_j > 0.0 {
                for (row, x) in resp.iter().zip(self.data) {
                    let r = row[j];
                    for i in 0..d {
                        xbar[i] += r * x[i];
                    }
                }
                xbar /= n_j;
                for (row, x) in resp.iter().zip(self.data) {
                    let r = row[j];
                    if r == 0.0 {
                        continue;
                    }
                    for a in 0..d {
                        let da = x[a] - xbar[a];
                        for b in 0..d {
                            scatter[(a, b)] += r * da * (x[b] - xbar[b]);
                        }
                    }
                }
            }
            let beta = self.mean_precision + n_j;
            let mean = (&self.mean_prior * self.mean_precision + &xbar * n_j) / beta;
            let dof = self.dof + n_j;
            let diff = &xbar - &self.mean_prior;
            let shrink = self.mean_precision * n_j / beta;
            let mut winv = &self.scale + scatter;
            for a in 0..d {
                for b in 0..d {
                    winv[(a, b)] += shrink * diff[a] * diff[b];
                }
            }
            let cov = winv / dof;
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numeric(format!("covariance of component {j} lost positive definiteness")))?
                .l();
            let half_log_det_cov = (0..d).map(|i| chol[(i, i)].ln()).sum();
            comps.push(Component {
                nk: n_j,
                stick_a: 1.0 + n_j,
                stick_b: self.alpha + tail[j],
                beta,
                mean,
                dof,
                cov,
                chol,
                half_log_det_cov,
            });
        }
        Ok(comps)
    }

    /// Log responsibilities under the current posteriors.
    fn e_step(&self, comps: &[Component]) -> Vec<Vec<f64>> {
        let d = self.dim as f64;
        let mut offsets = Vec::with_capacity(comps.len());
        let mut stick_acc = 0.0;
        for c in comps {
            let psi_sum = digamma(c.stick_a + c.stick_b);
            let log_weight = digamma(c.stick_a) - psi_sum + stick_acc;
            stick_acc += digamma(c.stick_b) - psi_sum;
            let expected_log_det_prec: f64 = d * std::f64::consts::LN_2
                + (0..self.dim).map(|i| digamma(0.5 * (c.dof - i as f64))).sum::<f64>();
            offsets.push(
                log_weight - 0.5 * d * LN_2PI - c.half_log_det_cov - 0.5 * d * c.dof.ln()
                    + 0.5 * (expected_log_det_prec - d / c.beta),
            );
        }
        let mut z = vec![0.0; self.dim];
        self.data
            .iter()
            .map(|x| {
                let mut row: Vec<f64> = comps
                    .iter()
                    .zip(&offsets)
                    .map(|(c, off)| off - 0.5 * mahalanobis_sq(&c.chol, c.mean.as_slice(), x, &mut z))
                    .collect();
                let norm = log_sum_exp(&row);
                row.iter_mut().for_each(|v| *v -= norm);
                row
            })
            .collect()
    }

    /// Lower bound, up to a constant, for responsibilities `log_resp` and the
    /// posteriors `comps` computed from them.
    fn lower_bound(&self, log_resp: &[Vec<f64>], comps: &[Component]) -> f64 {
        let d = self.dim as f64;
        let entropy: f64 = log_resp
            .iter()
            .flatten()
            .map(|&lr| {
                let r = lr.exp();
                if r > 0.0 {
                    r * lr
                } else {
                    0.0
                }
            })
            .sum();
        let mut wishart_norm = 0.0;
        let mut stick_norm = 0.0;
        let mut mean_norm = 0.0;
        for c in comps {
            // 1/2 ln det W_k
            let half_log_det_w = -c.half_log_det_cov - 0.5 * d * c.dof.ln();
            wishart_norm += -(c.dof * half_log_det_w
                + 0.5 * c.dof * d * std::f64::consts::LN_2
                + (0..self.dim).map(|i| ln_gamma(0.5 * (c.dof - i as f64))).sum::<f64>());
            stick_norm += betaln(c.stick_a, c.stick_b);
            mean_norm += c.beta.ln();
        }
        -entropy - wishart_norm + stick_norm - 0.5 * d * mean_norm
    }
}

/// Expected stick-breaking weights, normalized over the truncation.
fn expected_weights(comps: &[Component]) -> Vec<f64> {
    let mut remaining = 1.0;
    let mut weights: Vec<f64> = comps
        .iter()
        .map(|c| {
            let frac = c.stick_a / (c.stick_a + c.stick_b);
            let w = frac * remaining;
            remaining *= c.stick_b / (c.stick_a + c.stick_b);
            w
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

/// Fit the mixture by variational EM.
///
/// Fails with [`Error::Numeric`] if the lower bound decreases by more than
/// [`ELBO_SLACK`] per sample between iterations.
pub fn fit(data: &[Vec<f64>], priors: &Priors, cfg: &FitConfig) -> Result<MixtureModel> {
    cfg.validate()?;
    let dim = check_data(data)?;
    priors.validate(dim, cfg.reg_covar)?;
    let fitter = Fitter {
        data,
        dim,
        alpha: priors.alpha,
        mean_prior: DVector::from_column_slice(&priors.mean_prior),
        mean_precision: priors.mean_precision,
        scale: priors.regularized_scale(dim, cfg.reg_covar)?,
        dof: priors.wishart_dof,
    };

    let k = cfg.max_components;
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_resp = match cfg.init {
        Init::Kmeans => {
            let labels = kmeans::kmeans_labels(data, k, &mut rng);
            labels
                .into_iter()
                .map(|l| {
                    let mut row = vec![0.0; k];
                    row[l] = 1.0;
                    row
                })
                .collect()
        }
        Init::Random => kmeans::random_responsibilities(n, k, &mut rng),
    };

    let mut comps = fitter.m_step(&init_resp)?;
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut n_iter = 0;
    for iter in 1..=cfg.max_iter {
        n_iter = iter;
        let log_resp = fitter.e_step(&comps);
        let resp: Vec<Vec<f64>> = log_resp.iter().map(|row| row.iter().map(|v| v.exp()).collect()).collect();
        comps = fitter.m_step(&resp)?;
        let bound = fitter.lower_bound(&log_resp, &comps) / n as f64;
        if !bound.is_finite() {
            return Err(Error::Numeric(format!("lower bound is not finite at iteration {iter}")));
        }
        trace.push(bound);
        if bound < prev - ELBO_SLACK {
            return Err(Error::Numeric(format!(
                "lower bound decreased by {:e} at iteration {iter}",
                prev - bound
            )));
        }
        let change = bound - prev;
        prev = bound;
        if change.abs() < cfg.tol {
            converged = true;
            break;
        }
    }

    let weights = expected_weights(&comps);
    debug_assert!(comps.iter().all(|c| c.nk >= 0.0));
    let means = comps.iter().map(|c| c.mean.iter().copied().collect()).collect();
    let covs = comps.into_iter().map(|c| c.cov).collect();
    let summary = FitSummary {
        elbo: prev,
        n_iter,
        converged,
        elbo_trace: trace,
    };
    MixtureModel::from_parts(weights, means, covs, summary)
        .map_err(|e| Error::Numeric(format!("fitted mixture is invalid: {e}")))
}
