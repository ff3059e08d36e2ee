//! Expectation-maximization for full-covariance Gaussian mixtures.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::{log_sum_exp, Density, GaussianComponent, GmmError, GmmModel, Normalization};
use crate::seed::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub k: usize,
    pub seed: u64,
    /// stop when the objective improves by less than this
    pub tol: f64,
    pub max_iter: usize,
    /// ridge `λ = reg · mean(diag(cov(data)))` added to every covariance
    pub reg: f64,
    pub max_restarts: usize,
    pub kmeans_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            tol: 1e-6,
            max_iter: 300,
            reg: 1e-6,
            max_restarts: 3,
            kmeans_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective after initialization and after every iteration. With
    /// `reg = 0` this is the data log-likelihood; otherwise each component
    /// density carries an extra factor `exp(−λ·tr(Σ⁻¹)/2)`, which makes the
    /// regularized covariance update an exact maximization step.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
    /// seed of the successful attempt
    pub seed: u64,
    pub lambda: f64,
    /// plain log-likelihood of the returned model
    pub loglik: f64,
}

struct Params {
    priors: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    densities: Vec<Density>,
    penalties: Vec<f64>,
}

impl Params {
    fn new(priors: Vec<f64>, means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>, lambda: f64) -> Result<Self, GmmError> {
        let mut densities = Vec::with_capacity(means.len());
        let mut penalties = Vec::with_capacity(means.len());
        for (k, (m, c)) in means.iter().zip(&covs).enumerate() {
            let dens = Density::new(m.clone(), c.clone()).ok_or(GmmError::DegenerateComponent(k))?;
            penalties.push(if lambda > 0.0 { 0.5 * lambda * dens.trace_inverse() } else { 0.0 });
            densities.push(dens);
        }
        Ok(Self { priors, means, covs, densities, penalties })
    }

    /// Responsibilities (row per point) and the objective.
    fn e_step(&self, data: &[DVector<f64>]) -> (Vec<Vec<f64>>, f64) {
        let rows: Vec<(Vec<f64>, f64)> = data
            .par_iter()
            .map(|x| {
                let logs: Vec<f64> = (0..self.priors.len())
                    .map(|k| self.priors[k].ln() + self.densities[k].log_pdf(x.as_slice()) - self.penalties[k])
                    .collect();
                let lse = log_sum_exp(&logs);
                (logs.iter().map(|l| (l - lse).exp()).collect(), lse)
            })
            .collect();
        let objective = rows.iter().map(|r| r.1).sum();
        (rows.into_iter().map(|r| r.0).collect(), objective)
    }
}

fn m_step(data: &[DVector<f64>], gamma: &[Vec<f64>], k: usize, lambda: f64) -> Result<Params, GmmError> {
    let d = data[0].len();
    let mut weights = vec![0.0; k];
    let mut means = vec![DVector::zeros(d); k];
    for (x, g) in data.iter().zip(gamma) {
        for j in 0..k {
            weights[j] += g[j];
            means[j].axpy(g[j], x, 1.0);
        }
    }
    for j in 0..k {
        if !(weights[j] >= 1.0) {
            return Err(GmmError::EmptyCluster { component: j, restarts: 0 });
        }
        means[j] /= weights[j];
    }
    let mut covs = vec![DMatrix::zeros(d, d); k];
    for (x, g) in data.iter().zip(gamma) {
        for j in 0..k {
            let diff = x - &means[j];
            covs[j].ger(g[j], &diff, &diff, 1.0);
        }
    }
    let total: f64 = weights.iter().sum();
    for j in 0..k {
        covs[j] /= weights[j];
        for i in 0..d {
            covs[j][(i, i)] += lambda;
        }
    }
    let priors = weights.iter().map(|w| w / total).collect();
    Params::new(priors, means, covs, lambda)
}

fn init_params(data: &[DVector<f64>], cfg: &EmConfig, seed: u64, lambda: f64) -> Result<Params, GmmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let km = kmeans(data, cfg.k, cfg.kmeans_iter, &mut rng);
    let gamma: Vec<Vec<f64>> = km
        .labels
        .iter()
        .map(|&l| {
            let mut g = vec![0.0; cfg.k];
            g[l] = 1.0;
            g
        })
        .collect();
    m_step(data, &gamma, cfg.k, lambda)
}

fn validate_data(data: &[DVector<f64>], k: usize) -> Result<usize, GmmError> {
    let d = data.first().map_or(0, |x| x.len());
    let needed = k * (d + 1);
    if k == 0 || d == 0 || data.len() <= needed {
        return Err(GmmError::TooFewPoints { n: data.len(), k, d, needed });
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != d {
            return Err(GmmError::DimensionMismatch { expected: d, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::NonFinite(i));
        }
    }
    Ok(d)
}

fn run_once(data: &[DVector<f64>], cfg: &EmConfig, seed: u64, lambda: f64) -> Result<(Params, TrainReport), GmmError> {
    let mut params = init_params(data, cfg, seed, lambda)?;
    let (mut gamma, mut objective) = params.e_step(data);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        params = m_step(data, &gamma, cfg.k, lambda)?;
        let (g, next) = params.e_step(data);
        iterations += 1;
        trace.push(next);
        gamma = g;
        let gain = next - objective;
        objective = next;
        if !(gain >= cfg.tol) {
            converged = true;
            break;
        }
    }
    let report = TrainReport {
        loglik_trace: trace,
        iterations,
        converged,
        restarts: 0,
        seed,
        lambda,
        loglik: 0.0,
    };
    Ok((params, report))
}

/// Fits a `cfg.k`-component mixture. The model treats every dimension as
/// input; use [`GmmModel::with_blocks`] to split it for regression.
pub fn em_fit(data: &[DVector<f64>], cfg: &EmConfig) -> Result<(GmmModel, TrainReport), GmmError> {
    let d = validate_data(data, cfg.k)?;
    let n = data.len() as f64;
    let mean = data.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n;
    let spread = data.iter().map(|x| (x - &mean).norm_squared()).sum::<f64>() / (n * d as f64);
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(GmmError::SingularData("all points coincide".into()));
    }
    let lambda = cfg.reg * spread;
    let mut last_empty = 0;
    for attempt in 0..=cfg.max_restarts {
        let seed = if attempt == 0 { cfg.seed } else { splitmix64(cfg.seed.wrapping_add(attempt as u64)) };
        match run_once(data, cfg, seed, lambda) {
            Ok((params, mut report)) => {
                if attempt > 0 {
                    log::info!("EM succeeded after {attempt} restart(s)");
                }
                let components = (0..cfg.k)
                    .map(|j| GaussianComponent::new(params.priors[j], &params.means[j], &params.covs[j]))
                    .collect();
                let model = GmmModel::new(components, d, 0, Normalization::identity(d))?;
                report.restarts = attempt;
                report.loglik = loglik(&model, data)?;
                return Ok((model, report));
            }
            Err(GmmError::EmptyCluster { component, .. }) => {
                log::warn!("EM component {component} emptied (seed {seed}); restarting");
                last_empty = component;
            }
            Err(GmmError::DegenerateComponent(_)) if cfg.reg == 0.0 => {
                return Err(GmmError::SingularData("covariance collapsed without regularization".into()))
            }
            Err(e) => return Err(e),
        }
    }
    Err(GmmError::EmptyCluster {
        component: last_empty,
        restarts: cfg.max_restarts,
    })
}

fn check_dim(model: &GmmModel, x: &DVector<f64>) -> Result<(), GmmError> {
    if x.len() != model.dim() {
        return Err(GmmError::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    Ok(())
}

/// Posterior component probabilities of a point given in data units.
pub fn responsibilities(model: &GmmModel, x: &DVector<f64>) -> Result<Vec<f64>, GmmError> {
    check_dim(model, x)?;
    let z = model.normalization().standardize(x);
    let logs = model.component_log_densities(z.as_slice());
    let lse = log_sum_exp(&logs);
    Ok(logs.iter().map(|l| (l - lse).exp()).collect())
}

/// Data log-likelihood, including the Jacobian of the model's normalization.
pub fn loglik(model: &GmmModel, data: &[DVector<f64>]) -> Result<f64, GmmError> {
    let log_jacobian: f64 = model.normalization().scale.iter().map(|s| s.ln()).sum();
    let mut total = 0.0;
    for x in data {
        check_dim(model, x)?;
        let z = model.normalization().standardize(x);
        total += log_sum_exp(&model.component_log_densities(z.as_slice())) - log_jacobian;
    }
    Ok(total)
}

/// Bayesian information criterion; lower is better.
pub fn bic(model: &GmmModel, data: &[DVector<f64>]) -> Result<f64, GmmError> {
    let (k, d) = (model.k() as f64, model.dim() as f64);
    let params = (k - 1.0) + k * d + k * d * (d + 1.0) / 2.0;
    Ok(-2.0 * loglik(model, data)? + params * (data.len() as f64).ln())
}

/// Fits every `k` in `ks` and returns the one with the lowest BIC together
/// with all scores. Values of `k` with too few points are skipped.
pub fn select_k_bic(
    data: &[DVector<f64>],
    ks: std::ops::RangeInclusive<usize>,
    cfg: &EmConfig,
) -> Result<(usize, Vec<(usize, f64)>), GmmError> {
    let mut scores = Vec::new();
    for k in ks {
        match em_fit(data, &EmConfig { k, ..*cfg }) {
            Ok((m, _)) => scores.push((k, bic(&m, data)?)),
            Err(GmmError::TooFewPoints { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    let best = scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|s| s.0)
        .ok_or(GmmError::TooFewPoints { n: data.len(), k: 1, d: 0, needed: 0 })?;
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn blobs(centers: &[[f64; 2]], per: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for i in 0..per {
            let c = centers[i % centers.len()];
            out.push(DVector::from_vec(vec![c[0] + normal.sample(&mut rng), c[1] + normal.sample(&mut rng)]));
        }
        out
    }

    fn one_d(mu: &[f64]) -> GmmModel {
        let comps = mu
            .iter()
            .map(|&m| GaussianComponent::new(1.0 / mu.len() as f64, &DVector::from_element(1, m), &DMatrix::identity(1, 1)))
            .collect();
        GmmModel::new(comps, 1, 0, Normalization::identity(1)).unwrap()
    }

    #[test]
    fn responsibilities_examples() {
        let x = DVector::from_element(1, 3.3);
        assert_eq!(responsibilities(&one_d(&[2.0]), &x).unwrap(), vec![1.0]);
        for g in responsibilities(&one_d(&[1.0, 1.0]), &x).unwrap() {
            assert!((g - 0.5).abs() < 1e-15);
        }
        let g = responsibilities(&one_d(&[0.0, 10.0]), &DVector::from_element(1, 0.0)).unwrap();
        // density ratio N(0|10,1)/N(0|0,1) = exp(−50)
        let ratio = (-50.0f64).exp();
        assert!((g[0] - 1.0 / (1.0 + ratio)).abs() < 1e-15);
        assert!((g[1] / ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn loglik_examples() {
        let m = one_d(&[0.0]);
        let ll = loglik(&m, &[DVector::from_element(1, 0.0)]).unwrap();
        assert!((ll + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let data = blobs(&[[0.0, 0.0]], 50, 3).into_iter().map(|x| DVector::from_element(1, x[0])).collect::<Vec<_>>();
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let (one, two) = (loglik(&m, &data).unwrap(), loglik(&m, &doubled).unwrap());
        assert!((2.0 * one - two).abs() <= 1e-13 * two.abs());
    }

    #[test]
    fn single_component_is_sample_moments() {
        let data = blobs(&[[1.0, -2.0]], 200, 5);
        let cfg = EmConfig { k: 1, reg: 0.0, ..Default::default() };
        let (m, report) = em_fit(&data, &cfg).unwrap();
        let n = data.len() as f64;
        let mean = data.iter().fold(DVector::zeros(2), |a, x| a + x) / n;
        let cov = data.iter().fold(DMatrix::zeros(2, 2), |a, x| a + (x - &mean) * (x - &mean).transpose()) / n;
        let c = &m.components()[0];
        assert!((c.mean_vector() - mean).amax() < 1e-10);
        assert!((c.cov_matrix() - cov).amax() < 1e-10);
        assert!(report.converged);
        assert!(report.iterations <= 2);
    }

    #[test]
    fn infinite_tol_stops_after_one_iteration() {
        let data = blobs(&[[0.0, 0.0], [8.0, 0.0]], 100, 2);
        let (_, r) = em_fit(&data, &EmConfig { k: 2, tol: f64::INFINITY, ..Default::default() }).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.loglik_trace.len(), 2);
    }

    #[test]
    fn monotone_objective() {
        let data = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 300, 7);
        for k in 1..=4 {
            for reg in [0.0, 1e-6, 1e-2] {
                let (_, r) = em_fit(&data, &EmConfig { k, reg, seed: k as u64, ..Default::default() }).unwrap();
                assert!(r.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9), "k={k} reg={reg}");
            }
        }
    }

    #[test]
    fn rejects_bad_data() {
        let few = blobs(&[[0.0, 0.0]], 9, 1);
        assert!(matches!(em_fit(&few, &EmConfig { k: 3, ..Default::default() }), Err(GmmError::TooFewPoints { .. })));
        let same = vec![DVector::from_vec(vec![1.0, 1.0]); 20];
        assert!(matches!(em_fit(&same, &EmConfig { k: 1, ..Default::default() }), Err(GmmError::SingularData(_))));
        let mut nan = blobs(&[[0.0, 0.0]], 20, 1);
        nan[4][1] = f64::NAN;
        assert_eq!(em_fit(&nan, &EmConfig { k: 1, ..Default::default() }).unwrap_err(), GmmError::NonFinite(4));
    }

    #[test]
    fn bic_prefers_true_k() {
        let data = blobs(&[[0.0, 0.0], [12.0, 0.0], [0.0, 12.0]], 600, 11);
        let (best, scores) = select_k_bic(&data, 1..=5, &EmConfig { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(best, 3, "{scores:?}");
    }

    #[test]
    fn priors_sum_to_one() {
        let data = blobs(&[[0.0, 0.0], [5.0, 5.0]], 200, 8);
        let (m, _) = em_fit(&data, &EmConfig { k: 3, ..Default::default() }).unwrap();
        let s: f64 = m.components().iter().map(|c| c.prior).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
