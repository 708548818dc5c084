//! Derivatives of quaternion rotations with respect to the raw quaternion
//! components, with the normalization folded in so gradients match finite
//! differences of q -> R(q/|q|).

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};

/// Rotation matrix of the (assumed unit) quaternion.
pub fn rotation_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    *q.to_rotation_matrix().matrix()
}

/// Partial derivatives of the homogeneous rotation form R_h(q) with respect
/// to (w, x, y, z). R_h equals the rotation matrix at unit norm.
pub fn homogeneous_grads(q: &Quaternion<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    let dw = Matrix3::new(2. * w, -2. * z, 2. * y, 2. * z, 2. * w, -2. * x, -2. * y, 2. * x, 2. * w);
    let dx = Matrix3::new(2. * x, 2. * y, 2. * z, 2. * y, -2. * x, -2. * w, 2. * z, 2. * w, -2. * x);
    let dy = Matrix3::new(-2. * y, 2. * x, 2. * w, 2. * x, 2. * y, 2. * z, -2. * w, 2. * z, -2. * y);
    let dz = Matrix3::new(-2. * z, -2. * w, 2. * x, 2. * w, -2. * z, 2. * y, 2. * x, 2. * y, 2. * z);
    [dw, dx, dy, dz]
}

/// Given dL/dR (gradient with respect to the rotation matrix entries),
/// return dL/d(w,x,y,z) for the normalized parameterization R(q/|q|),
/// evaluated at a unit quaternion.
pub fn chain_matrix_grad(q: &UnitQuaternion<f64>, d_rot: &Matrix3<f64>) -> [f64; 4] {
    let rot = rotation_matrix(q);
    let raw = q.quaternion();
    let grads = homogeneous_grads(raw);
    let comps = [raw.w, raw.i, raw.j, raw.k];
    let mut out = [0.0; 4];
    let base = frobenius(d_rot, &rot);
    for k in 0..4 {
        out[k] = frobenius(d_rot, &grads[k]) - 2.0 * comps[k] * base;
    }
    out
}

fn frobenius(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += a[(i, j)] * b[(i, j)];
        }
    }
    acc
}
