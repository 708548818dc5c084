//! Projection of 3D Gaussians onto the image plane: perspective projection
//! of the mean and local-affine (EWA) projection of the covariance.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::Camera;
use crate::field::Gaussian;

/// Diagonal inflation (in pixel²) added to projected covariances so they
/// stay invertible.
pub const COV2D_INFLATION: f64 = 0.3;

/// Fully projected splat, carrying everything the forward and backward
/// passes need.
#[derive(Debug, Clone)]
pub struct SplatGeom {
    /// Position in view coordinates.
    pub view: Vector3<f64>,
    /// Projected mean in pixel coordinates.
    pub mean2d: Vector2<f64>,
    /// Projected covariance after inflation.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` (the conic).
    pub conic: Matrix2<f64>,
    /// View-space depth of the mean.
    pub depth: f64,
}

/// Affine Jacobian of the perspective map at view-space point `v`.
pub fn perspective_jacobian(focal: f64, v: &Vector3<f64>) -> Matrix2x3<f64> {
    let z_inv = 1.0 / v.z;
    let z_inv2 = z_inv * z_inv;
    Matrix2x3::new(
        focal * z_inv,
        0.0,
        -focal * v.x * z_inv2,
        0.0,
        focal * z_inv,
        -focal * v.y * z_inv2,
    )
}

/// Derivatives of the Jacobian w.r.t. the view-space coordinates.
pub fn perspective_jacobian_grads(focal: f64, v: &Vector3<f64>) -> [Matrix2x3<f64>; 3] {
    let z_inv2 = 1.0 / (v.z * v.z);
    let z_inv3 = z_inv2 / v.z;
    let d_x = Matrix2x3::new(0.0, 0.0, -focal * z_inv2, 0.0, 0.0, 0.0);
    let d_y = Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -focal * z_inv2);
    let d_z = Matrix2x3::new(
        -focal * z_inv2,
        0.0,
        2.0 * focal * v.x * z_inv3,
        0.0,
        -focal * z_inv2,
        2.0 * focal * v.y * z_inv3,
    );
    [d_x, d_y, d_z]
}

/// Project one Gaussian. Returns `None` when the mean is behind the near
/// plane (culled) and `Err(())`-like `None` in the degenerate branch is
/// handled by the caller via the conic determinant.
pub fn project(gaussian: &Gaussian, camera: &Camera, view_rot: &Matrix3<f64>) -> Option<SplatGeom> {
    let v = view_rot * (gaussian.mean - camera.position);
    if v.z < camera.near {
        return None;
    }
    let focal = camera.focal();
    let (cx, cy) = camera.principal_point();
    let mean2d = Vector2::new(focal * v.x / v.z + cx, focal * v.y / v.z + cy);
    let j = perspective_jacobian(focal, &v);
    let cov_view = view_rot * gaussian.covariance() * view_rot.transpose();
    let mut cov2d = j * cov_view * j.transpose();
    cov2d[(0, 0)] += COV2D_INFLATION;
    cov2d[(1, 1)] += COV2D_INFLATION;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det.is_finite() && det > 0.0) || !mean2d.x.is_finite() || !mean2d.y.is_finite() {
        return Some(SplatGeom {
            view: v,
            mean2d,
            cov2d,
            conic: Matrix2::zeros(),
            depth: f64::NAN, // flagged degenerate; caller counts and skips
        });
    }
    let inv_det = 1.0 / det;
    let conic = Matrix2::new(
        cov2d[(1, 1)] * inv_det,
        -cov2d[(0, 1)] * inv_det,
        -cov2d[(1, 0)] * inv_det,
        cov2d[(0, 0)] * inv_det,
    );
    Some(SplatGeom {
        view: v,
        mean2d,
        cov2d,
        conic,
        depth: v.z,
    })
}

/// Largest eigenvalue of a symmetric 2x2 matrix.
pub fn max_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    half_trace + (diff * diff + m[(0, 1)] * m[(1, 0)]).sqrt()
}
