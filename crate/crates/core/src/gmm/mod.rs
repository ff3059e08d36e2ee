//! Gaussian mixture models: EM fitting and Gaussian mixture regression.

mod em;
mod gmr;
mod kmeans;

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use em::{bic, em_fit, loglik, responsibilities, select_k_bic, EmConfig, TrainReport};
pub use gmr::{gmr_predict, GmrOutput, MAX_INPUT_CONDITION};
pub use kmeans::{kmeans, KMeansResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("need more than {needed} points for {k} components in {d} dimensions, got {n}")]
    TooFewPoints { n: usize, k: usize, d: usize, needed: usize },
    #[error("data is singular: {0}")]
    SingularData(String),
    #[error("component {component} emptied after {restarts} restarts")]
    EmptyCluster { component: usize, restarts: usize },
    #[error("covariance of component {0} is not positive definite")]
    DegenerateComponent(usize),
    #[error("input block of component {component} is ill-conditioned (condition number {cond:e})")]
    IllConditionedBlock { component: usize, cond: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("non-finite value in data point {0}")]
    NonFinite(usize),
}

/// Per-dimension affine map `z = (x − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(d: usize) -> Self {
        Self {
            shift: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Mean and population standard deviation per dimension; a zero spread
    /// maps to scale 1 so constant dimensions are only centred.
    pub fn fit(data: &[DVector<f64>]) -> Self {
        let d = data.first().map_or(0, |x| x.len());
        let n = data.len() as f64;
        let mut shift = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let mean = data.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = data.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            shift[j] = mean;
            let sd = var.sqrt();
            if sd > 1e-12 * mean.abs().max(1.0) {
                scale[j] = sd;
            }
        }
        Self { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|&s| s == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    /// Apply to the dimensions starting at `offset`.
    pub fn standardize_at(&self, x: &DVector<f64>, offset: usize) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| (x[i] - self.shift[offset + i]) / self.scale[offset + i])
    }

    pub fn destandardize_at(&self, z: &DVector<f64>, offset: usize) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| z[i] * self.scale[offset + i] + self.shift[offset + i])
    }

    pub fn standardize(&self, x: &DVector<f64>) -> DVector<f64> {
        self.standardize_at(x, 0)
    }

    pub fn destandardize(&self, z: &DVector<f64>) -> DVector<f64> {
        self.destandardize_at(z, 0)
    }

    fn validate(&self, d: usize) -> Result<(), GmmError> {
        if self.shift.len() != d || self.scale.len() != d {
            return Err(GmmError::DimensionMismatch {
                expected: d,
                got: self.shift.len().min(self.scale.len()),
            });
        }
        if self.shift.iter().any(|v| !v.is_finite()) || self.scale.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GmmError::InvalidModel("normalization must be finite with positive scale".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub prior: f64,
    pub mean: Vec<f64>,
    /// row-major
    pub cov: Vec<Vec<f64>>,
}

impl GaussianComponent {
    pub fn new(prior: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Self {
        Self {
            prior,
            mean: mean.iter().copied().collect(),
            cov: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.cov.len();
        DMatrix::from_fn(d, d, |i, j| self.cov[i].get(j).copied().unwrap_or(f64::NAN))
    }
}

/// Factorized Gaussian ready for repeated density evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Density {
    mean: DVector<f64>,
    lower: DMatrix<f64>,
    /// −½(d·ln 2π + ln|Σ|)
    log_norm: f64,
}

impl Density {
    pub(crate) fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Option<Self> {
        let d = mean.len();
        let chol = Cholesky::new(cov)?;
        let lower = chol.l();
        let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(Self {
            mean,
            lower,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    /// Squared Mahalanobis distance via forward substitution.
    pub(crate) fn mahalanobis2(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if d <= 16 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= self.lower[(i, k)] * y[k];
            }
            y[i] = s / self.lower[(i, i)];
            acc += y[i] * y[i];
        }
        acc
    }

    pub(crate) fn log_pdf(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis2(x)
    }

    /// `trace(Σ⁻¹)` from the factor.
    pub(crate) fn trace_inverse(&self) -> f64 {
        let d = self.mean.len();
        let l_inv = self
            .lower
            .clone()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("positive diagonal");
        l_inv.norm_squared()
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// A weighted mixture over `dim_i + dim_o` dimensions, in normalized units.
#[derive(Debug, Clone)]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
    dim_i: usize,
    dim_o: usize,
    normalization: Normalization,
    densities: Vec<Density>,
    regression: Result<Vec<gmr::RegressionBlock>, GmmError>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
            && self.dim_i == other.dim_i
            && self.dim_o == other.dim_o
            && self.normalization == other.normalization
    }
}

impl GmmModel {
    pub fn new(
        components: Vec<GaussianComponent>,
        dim_i: usize,
        dim_o: usize,
        normalization: Normalization,
    ) -> Result<Self, GmmError> {
        let d = dim_i + dim_o;
        if components.is_empty() {
            return Err(GmmError::InvalidModel("no components".into()));
        }
        normalization.validate(d)?;
        let total: f64 = components.iter().map(|c| c.prior).sum();
        if (total - 1.0).abs() > 1e-9 || components.iter().any(|c| !(c.prior > 0.0 && c.prior <= 1.0)) {
            return Err(GmmError::InvalidModel(format!("priors must lie in (0, 1] and sum to 1 (sum {total})")));
        }
        let mut densities = Vec::with_capacity(components.len());
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != d || c.cov.len() != d || c.cov.iter().any(|r| r.len() != d) {
                return Err(GmmError::DimensionMismatch { expected: d, got: c.mean.len() });
            }
            let cov = c.cov_matrix();
            if cov.iter().any(|v| !v.is_finite()) || c.mean.iter().any(|v| !v.is_finite()) {
                return Err(GmmError::DegenerateComponent(k));
            }
            if (&cov - cov.transpose()).amax() > 1e-9 * cov.amax().max(1e-300) {
                return Err(GmmError::InvalidModel(format!("covariance {k} is not symmetric")));
            }
            densities.push(Density::new(c.mean_vector(), cov).ok_or(GmmError::DegenerateComponent(k))?);
        }
        let regression = gmr::RegressionBlock::build_all(&components, dim_i, dim_o);
        Ok(Self {
            components,
            dim_i,
            dim_o,
            normalization,
            densities,
            regression,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim_i + self.dim_o
    }

    pub fn dim_i(&self) -> usize {
        self.dim_i
    }

    pub fn dim_o(&self) -> usize {
        self.dim_o
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn with_normalization(self, normalization: Normalization) -> Result<Self, GmmError> {
        Self::new(self.components, self.dim_i, self.dim_o, normalization)
    }

    /// Same components split into different input/output blocks.
    pub fn with_blocks(self, dim_i: usize, dim_o: usize) -> Result<Self, GmmError> {
        Self::new(self.components, dim_i, dim_o, self.normalization)
    }

    /// `ln π_k + ln N(x | μ_k, Σ_k)` for every component, `x` in model units.
    pub fn component_log_densities(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.densities)
            .map(|(c, dens)| c.prior.ln() + dens.log_pdf(x))
            .collect()
    }
}

/// Eigenvalue condition number of a symmetric matrix; infinite unless SPD.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::<f64, Dyn>::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}
