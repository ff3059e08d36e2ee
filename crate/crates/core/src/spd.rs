//! Cholesky vectorization of 3×3 stiffness matrices.
//!
//! A stiffness matrix `K = L·Lᵀ` is stored as the six independent entries of
//! its lower-triangular factor, ordered `(l11, l21, l22, l31, l32, l33)`.
//! Decoding squares the factor back up, so any finite 6-vector maps to an SPD
//! matrix once the diagonal entries are clamped positive.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stiffness::StiffnessMatrix;

/// Smallest admissible Cholesky diagonal entry, in √(N/m).
pub const DEFAULT_DELTA_MIN: f64 = 1e-3;

/// Relative jitter added to the diagonal when the first factorization fails.
const JITTER_SCALE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpdError {
    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotSpd { pivot: usize, value: f64 },
    #[error("non-finite value in Cholesky vector at index {0}")]
    NonFiniteInput(usize),
}

/// Lower Cholesky factor entries `(l11, l21, l22, l31, l32, l33)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CholVector(pub [f64; 6]);

impl CholVector {
    pub const LEN: usize = 6;
    /// Indices of the diagonal entries of `L` inside the vector.
    pub const DIAGONAL: [usize; 3] = [0, 2, 5];

    pub fn as_array(&self) -> &[f64; 6] {
        &self.0
    }

    pub fn lower_factor(&self) -> Matrix3<f64> {
        let v = &self.0;
        Matrix3::new(
            v[0], 0.0, 0.0, //
            v[1], v[2], 0.0, //
            v[3], v[4], v[5],
        )
    }
}

impl From<CholVector> for [f64; 6] {
    fn from(v: CholVector) -> Self {
        v.0
    }
}

/// Outcome of [`decode_checked`], reporting whether the diagonal clamp fired.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub stiffness: StiffnessMatrix,
    pub clamped: bool,
}

fn cholesky3(a: &Matrix3<f64>) -> Result<Matrix3<f64>, SpdError> {
    let mut l = Matrix3::zeros();
    for j in 0..3 {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(SpdError::NotSpd { pivot: j, value: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..3 {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Factor a (near-)SPD matrix into its Cholesky vector.
///
/// The input is symmetrized first. If the factorization still fails, a jitter
/// of `1e-9 · trace / 3` is added to the diagonal and the factorization is
/// retried once.
pub fn encode_matrix(k: &Matrix3<f64>) -> Result<CholVector, SpdError> {
    let sym = (k + k.transpose()) * 0.5;
    let l = match cholesky3(&sym) {
        Ok(l) => l,
        Err(first) => {
            let jitter = JITTER_SCALE * sym.trace() / 3.0;
            if !(jitter > 0.0) {
                return Err(first);
            }
            cholesky3(&(sym + Matrix3::identity() * jitter))?
        }
    };
    Ok(CholVector([
        l[(0, 0)],
        l[(1, 0)],
        l[(1, 1)],
        l[(2, 0)],
        l[(2, 1)],
        l[(2, 2)],
    ]))
}

pub fn encode(k: &StiffnessMatrix) -> Result<CholVector, SpdError> {
    encode_matrix(k.matrix())
}

/// Rebuild `L·Lᵀ` from any finite 6-vector, clamping diagonal entries of `L`
/// to at least `delta_min`.
pub fn decode_checked(v: &[f64; 6], delta_min: f64) -> Result<Decoded, SpdError> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(SpdError::NonFiniteInput(i));
    }
    let mut raw = *v;
    let mut clamped = false;
    for &i in &CholVector::DIAGONAL {
        if raw[i] < delta_min {
            raw[i] = delta_min;
            clamped = true;
        }
    }
    let l = CholVector(raw).lower_factor();
    let k = l * l.transpose();
    // L·Lᵀ is symmetric up to rounding; mirror the lower triangle exactly.
    let k = Matrix3::from_fn(|i, j| if i >= j { k[(i, j)] } else { k[(j, i)] });
    Ok(Decoded {
        stiffness: StiffnessMatrix::from_spd_unchecked(k),
        clamped,
    })
}

pub fn decode(v: &[f64; 6], delta_min: f64) -> Result<StiffnessMatrix, SpdError> {
    decode_checked(v, delta_min).map(|d| d.stiffness)
}
