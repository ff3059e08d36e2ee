//! Configuration-dependent endpoint stiffness of the human arm.
//!
//! The stiffness ellipsoid is built from the arm triangle: its major axis
//! follows the shoulder→hand vector `l`, its minor axis the plane normal
//! `n = r × l`, and the remaining axis completes the frame. Axis ratios depend
//! on hand distance `d1` and elbow offset `d2`, normalized to unit volume and
//! scaled by a common-mode gain `a_cc`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ArmFrame;

/// Relative collinearity threshold for `‖r × l‖ / (‖r‖·‖l‖)`.
pub const SINGULARITY_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StiffnessError {
    #[error("singular arm configuration (sin of arm angle {0:e})")]
    SingularConfiguration(f64),
    #[error("non-finite keypoint coordinate")]
    NonFinite,
    #[error("projection axis is not unit length (norm {0})")]
    NonUnitAxis(f64),
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("invalid stiffness parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StiffnessParams {
    /// Median-axis gain, meters.
    pub alpha1: f64,
    /// Minor-axis gain, 1/meters.
    pub alpha2: f64,
    /// Common-mode stiffness scale, N/m.
    pub a_cc: f64,
}

impl Default for StiffnessParams {
    fn default() -> Self {
        Self {
            alpha1: 0.4,
            alpha2: 5.0,
            a_cc: 1.0,
        }
    }
}

impl StiffnessParams {
    pub fn validate(&self) -> Result<(), StiffnessError> {
        for (name, value) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("a_cc", self.a_cc)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(StiffnessError::InvalidParam { name, value });
            }
        }
        Ok(())
    }
}

/// Vectors and distances of the shoulder–elbow–hand triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmGeometry {
    /// shoulder → hand
    pub l: Vector3<f64>,
    /// shoulder → elbow
    pub r: Vector3<f64>,
    /// `r × l`
    pub n: Vector3<f64>,
    pub d1: f64,
    pub d2: f64,
}

/// A symmetric positive definite 3×3 stiffness, N/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessMatrix(Matrix3<f64>);

impl StiffnessMatrix {
    /// Validates symmetry (1e-10 relative) and positive definiteness.
    pub fn new(k: Matrix3<f64>) -> Result<Self, StiffnessError> {
        if k.iter().any(|x| !x.is_finite()) {
            return Err(StiffnessError::NonFinite);
        }
        let scale = k.abs().max().max(f64::MIN_POSITIVE);
        if (k - k.transpose()).abs().max() > 1e-10 * scale {
            return Err(StiffnessError::NotSpd);
        }
        let sym = (k + k.transpose()) * 0.5;
        if sym.cholesky().is_none() {
            return Err(StiffnessError::NotSpd);
        }
        Ok(Self(sym))
    }

    pub(crate) fn from_spd_unchecked(k: Matrix3<f64>) -> Self {
        Self(k)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0 * s)
    }

    pub fn eigen(&self) -> SymmetricEigen<f64, nalgebra::U3> {
        self.0.symmetric_eigen()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen().eigenvalues.max()
    }

    /// Upper triangle `(k11, k12, k13, k22, k23, k33)`.
    pub fn upper_triangle(&self) -> [f64; 6] {
        let k = &self.0;
        [k[(0, 0)], k[(0, 1)], k[(0, 2)], k[(1, 1)], k[(1, 2)], k[(2, 2)]]
    }

    pub fn from_upper_triangle(u: [f64; 6]) -> Result<Self, StiffnessError> {
        Self::new(Matrix3::new(
            u[0], u[1], u[2], //
            u[1], u[3], u[4], //
            u[2], u[4], u[5],
        ))
    }

    /// Relative Frobenius distance `‖self − other‖ / ‖other‖`.
    pub fn relative_frobenius(&self, other: &StiffnessMatrix) -> f64 {
        (self.0 - other.0).norm() / other.0.norm()
    }
}

pub fn arm_geometry(frame: &ArmFrame) -> Result<ArmGeometry, StiffnessError> {
    let pts = [frame.shoulder, frame.elbow, frame.wrist];
    if pts.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(StiffnessError::NonFinite);
    }
    let l = frame.wrist - frame.shoulder;
    let r = frame.elbow - frame.shoulder;
    let n = r.cross(&l);
    let d1 = l.norm();
    let rn = r.norm();
    let denom = rn * d1;
    let sin = if denom > 0.0 { n.norm() / denom } else { 0.0 };
    if !(sin >= SINGULARITY_EPS) {
        return Err(StiffnessError::SingularConfiguration(sin));
    }
    let l_hat = l / d1;
    let d2 = (r - l_hat * r.dot(&l_hat)).norm();
    Ok(ArmGeometry { l, r, n, d1, d2 })
}

/// Principal axes `[l̂, ((r×l)×l)^, (r×l)^]` as matrix columns.
pub fn cds_frame(geom: &ArmGeometry) -> Matrix3<f64> {
    let major = geom.l.normalize();
    let minor = geom.n.normalize();
    let median = geom.n.cross(&geom.l).normalize();
    Matrix3::from_columns(&[major, median, minor])
}

/// Unit-volume axis ratios along the columns of [`cds_frame`].
pub fn cds_shape(geom: &ArmGeometry, p: &StiffnessParams) -> Result<Vector3<f64>, StiffnessError> {
    let raw = Vector3::new(1.0, p.alpha1 / geom.d1, p.alpha2 * geom.d2);
    let volume = raw.product();
    if !(volume > 0.0) || !volume.is_finite() {
        return Err(StiffnessError::SingularConfiguration(volume));
    }
    Ok(raw / volume.cbrt())
}

pub fn endpoint_stiffness_from_geometry(
    geom: &ArmGeometry,
    p: &StiffnessParams,
) -> Result<StiffnessMatrix, StiffnessError> {
    let v = cds_frame(geom);
    let d = cds_shape(geom, p)? * p.a_cc;
    let k = v * Matrix3::from_diagonal(&d) * v.transpose();
    let k = (k + k.transpose()) * 0.5;
    Ok(StiffnessMatrix(k))
}

pub fn endpoint_stiffness(frame: &ArmFrame, p: &StiffnessParams) -> Result<StiffnessMatrix, StiffnessError> {
    endpoint_stiffness_from_geometry(&arm_geometry(frame)?, p)
}

/// Stiffness along a unit axis, `axisᵀ·K·axis`.
pub fn project_stiffness(k: &StiffnessMatrix, axis: &Vector3<f64>) -> Result<f64, StiffnessError> {
    let norm = axis.norm();
    if !((norm - 1.0).abs() <= 1e-9) {
        return Err(StiffnessError::NonUnitAxis(norm));
    }
    Ok(axis.dot(&(k.0 * axis)))
}
