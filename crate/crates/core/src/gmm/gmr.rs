//! Gaussian mixture regression: conditional mean of the output block given
//! the input block.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{condition_number, log_sum_exp, Density, GaussianComponent, GmmError, GmmModel};

/// Largest accepted condition number of an input covariance block.
pub const MAX_INPUT_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub(crate) struct RegressionBlock {
    input: Density,
    mean_o: DVector<f64>,
    mean_i: DVector<f64>,
    /// `Σ_OI · Σ_II⁻¹`
    gain: DMatrix<f64>,
    /// `Σ_OO − Σ_OI · Σ_II⁻¹ · Σ_IO`
    cond_cov: DMatrix<f64>,
}

impl RegressionBlock {
    pub(crate) fn build_all(components: &[GaussianComponent], dim_i: usize, dim_o: usize) -> Result<Vec<Self>, GmmError> {
        if dim_i == 0 || dim_o == 0 {
            return Err(GmmError::InvalidModel("regression needs non-empty input and output blocks".into()));
        }
        components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let cov = c.cov_matrix();
                let mean = c.mean_vector();
                let s_ii = cov.view((0, 0), (dim_i, dim_i)).into_owned();
                let s_io = cov.view((0, dim_i), (dim_i, dim_o)).into_owned();
                let s_oo = cov.view((dim_i, dim_i), (dim_o, dim_o)).into_owned();
                let cond = condition_number(&s_ii);
                if !(cond <= MAX_INPUT_CONDITION) {
                    return Err(GmmError::IllConditionedBlock { component: k, cond });
                }
                let chol = Cholesky::new(s_ii.clone()).ok_or(GmmError::IllConditionedBlock { component: k, cond })?;
                let gain = chol.solve(&s_io).transpose();
                let cond_cov = &s_oo - &gain * &s_io;
                let mean_i = mean.rows(0, dim_i).into_owned();
                Ok(Self {
                    input: Density::new(mean_i.clone(), s_ii).ok_or(GmmError::DegenerateComponent(k))?,
                    mean_o: mean.rows(dim_i, dim_o).into_owned(),
                    mean_i,
                    gain,
                    cond_cov,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmrOutput {
    /// conditional mean, data units
    pub mean: DVector<f64>,
    /// conditional covariance of the mixture, data units
    pub cov: DMatrix<f64>,
    pub gates: Vec<f64>,
}

impl GmmModel {
    fn blocks(&self) -> Result<&[RegressionBlock], GmmError> {
        self.regression.as_deref().map_err(Clone::clone)
    }

    fn standardized_input(&self, input: &DVector<f64>) -> Result<DVector<f64>, GmmError> {
        if input.len() != self.dim_i {
            return Err(GmmError::DimensionMismatch { expected: self.dim_i, got: input.len() });
        }
        Ok(self.normalization.standardize_at(input, 0))
    }

    fn gates_standardized(&self, z: &DVector<f64>) -> Result<Vec<f64>, GmmError> {
        let blocks = self.blocks()?;
        let logs: Vec<f64> = self
            .components
            .iter()
            .zip(blocks)
            .map(|(c, b)| c.prior.ln() + b.input.log_pdf(z.as_slice()))
            .collect();
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(GmmError::InvalidModel("input has zero density under every component".into()));
        }
        Ok(logs.iter().map(|l| (l - lse).exp()).collect())
    }

    /// Gating weights `h_k` of an input given in data units.
    pub fn gates(&self, input: &DVector<f64>) -> Result<Vec<f64>, GmmError> {
        let z = self.standardized_input(input)?;
        self.gates_standardized(&z)
    }

    /// Conditional mean of the output block, in data units.
    pub fn predict(&self, input: &DVector<f64>) -> Result<DVector<f64>, GmmError> {
        let z = self.standardized_input(input)?;
        let gates = self.gates_standardized(&z)?;
        let mut mean = DVector::zeros(self.dim_o);
        for (h, b) in gates.iter().zip(self.blocks()?) {
            mean += (&b.mean_o + &b.gain * (&z - &b.mean_i)) * *h;
        }
        Ok(self.normalization.destandardize_at(&mean, self.dim_i))
    }

    /// Conditional mean together with the mixture's conditional covariance.
    pub fn predict_full(&self, input: &DVector<f64>) -> Result<GmrOutput, GmmError> {
        let z = self.standardized_input(input)?;
        let gates = self.gates_standardized(&z)?;
        let blocks = self.blocks()?;
        let means: Vec<DVector<f64>> = blocks.iter().map(|b| &b.mean_o + &b.gain * (&z - &b.mean_i)).collect();
        let mut mean = DVector::zeros(self.dim_o);
        for (h, m) in gates.iter().zip(&means) {
            mean += m * *h;
        }
        let mut cov = DMatrix::zeros(self.dim_o, self.dim_o);
        for ((h, m), b) in gates.iter().zip(&means).zip(blocks) {
            cov += (&b.cond_cov + m * m.transpose()) * *h;
        }
        cov -= &mean * mean.transpose();
        let scale = DVector::from_fn(self.dim_o, |i, _| self.normalization.scale[self.dim_i + i]);
        let cov = DMatrix::from_fn(self.dim_o, self.dim_o, |i, j| cov[(i, j)] * scale[i] * scale[j]);
        Ok(GmrOutput {
            mean: self.normalization.destandardize_at(&mean, self.dim_i),
            cov,
            gates,
        })
    }
}

/// Conditional mean of the output block; see [`GmmModel::predict`].
pub fn gmr_predict(model: &GmmModel, input: &DVector<f64>) -> Result<DVector<f64>, GmmError> {
    model.predict(input)
}
