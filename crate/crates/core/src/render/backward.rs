//! Reverse-mode splatting: gradients of sum_p residual(p)·C(p) with respect
//! to per-Gaussian attributes and per-interaction pose parameters.
//!
//! Per pixel the forward blend is C = sum_i c_i a_i T_i with
//! T_i = prod_{j<i} (1 - a_j). The backward sweep runs back-to-front
//! maintaining B_i = sum_{k>i} c_k a_k prod_{i<j<k}(1-a_j), which gives
//! dC/da_i = T_i (c_i - B_i) without dividing by (1 - a_i).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::forward::prepare;
use super::project::{perspective_jacobian, perspective_jacobian_grads};
use super::{Camera, RenderOptions, ViewGradients};
use crate::field::{FlatScene, ObjectField};
use crate::quat;
use crate::{Error, Result};

/// Pose gradient for one interaction.
#[derive(Debug, Clone)]
pub struct PoseGradient {
    pub anchor_id: String,
    pub child_id: String,
    /// d/d(w,x,y,z) of the pair rotation, normalized parameterization.
    pub d_rotation: [f64; 4],
    pub d_translation: Vector3<f64>,
    pub d_scale: f64,
}

#[derive(Clone, Default)]
struct SplatAcc {
    /// Gradient w.r.t. the projected mean (pixel coordinates).
    gm2: Vector2<f64>,
    /// Gradient w.r.t. the conic (inverse 2D covariance), full-matrix convention.
    g_conic: Matrix2<f64>,
    d_color: [f64; 3],
    d_opacity: f64,
    contribution: f64,
}

impl SplatAcc {
    fn merge(&mut self, other: &SplatAcc) {
        self.gm2 += other.gm2;
        self.g_conic += other.g_conic;
        for c in 0..3 {
            self.d_color[c] += other.d_color[c];
        }
        self.d_opacity += other.d_opacity;
        self.contribution += other.contribution;
    }
}

/// Backward pass over a bare field: per-Gaussian gradients only.
pub fn render_backward_field(
    field: &ObjectField,
    camera: &Camera,
    residual: &[[f64; 3]],
    opts: &RenderOptions,
) -> Result<ViewGradients> {
    let raw = backward_kernel(field, camera, residual, opts)?;
    Ok(finish_attributes(field, raw))
}

/// Backward pass over a flattened scene, chaining mean and covariance
/// gradients into the requested interactions' (R, t, s).
pub fn render_backward(
    flat: &FlatScene,
    camera: &Camera,
    residual: &[[f64; 3]],
    pose_requests: &[(String, String)],
    opts: &RenderOptions,
) -> Result<ViewGradients> {
    let raw = backward_kernel(flat.field(), camera, residual, opts)?;
    let mut grads = finish_attributes(flat.field(), raw);
    for (anchor_id, child_id) in pose_requests {
        let span = flat.span(child_id)?;
        let pair = span.pair;
        let outer = span.outer;
        let world = outer.compose(&pair);
        let rot_outer = quat::rotation_matrix(&outer.rotation);
        let rot_world = quat::rotation_matrix(&world.rotation);
        let mut d_t_world = Vector3::zeros();
        let mut d_s = 0.0;
        let mut d_rot_world = Matrix3::zeros();
        for i in span.range.clone() {
            let g = &flat.field().gaussians()[i];
            let local = &flat.local_gaussians()[i];
            let d_mu = grads.d_mean[i];
            let d_cov = grads.d_cov3[i];
            d_t_world += d_mu;
            d_s += d_mu.dot(&((g.mean - world.translation) / pair.scale));
            let cov_world = g.covariance();
            d_s += 2.0 / pair.scale * frob3(&d_cov, &cov_world);
            // Gradient w.r.t. the composite rotation matrix R_o * R.
            d_rot_world += world.scale * d_mu * local.mean.transpose();
            d_rot_world += 2.0 * world.scale * world.scale * d_cov * rot_world * local.covariance();
        }
        let d_translation = outer.scale * (rot_outer.transpose() * d_t_world);
        let d_rotation = quat::chain_matrix_grad(&pair.rotation, &(rot_outer.transpose() * d_rot_world));
        grads.d_pose.push(PoseGradient {
            anchor_id: anchor_id.clone(),
            child_id: child_id.clone(),
            d_rotation,
            d_translation,
            d_scale: d_s,
        });
    }
    Ok(grads)
}

struct RawGrads {
    d_mean: Vec<Vector3<f64>>,
    d_cov3: Vec<Matrix3<f64>>,
    d_color: Vec<[f64; 3]>,
    d_opacity: Vec<f64>,
    contribution: Vec<f64>,
    d_mean2d: Vec<Vector2<f64>>,
}

fn backward_kernel(
    field: &ObjectField,
    camera: &Camera,
    residual: &[[f64; 3]],
    opts: &RenderOptions,
) -> Result<RawGrads> {
    if residual.len() != camera.pixel_count() {
        return Err(Error::Shape(format!(
            "residual has {} pixels, camera expects {}",
            residual.len(),
            camera.pixel_count()
        )));
    }
    let prep = prepare(field, camera, opts)?;
    let w = camera.width;
    let h = camera.height;
    let ts = opts.tile_size;
    let cutoff_sq = opts.sigma_cutoff.map(|k| k * k);
    let floor = opts.transmittance_floor;

    // Per-tile partial accumulators, merged in tile order afterwards so the
    // reduction is deterministic.
    let tile_results: Vec<(usize, Vec<SplatAcc>)> = (0..prep.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &prep.tile_lists[tile];
            let mut acc = vec![SplatAcc::default(); list.len()];
            if list.is_empty() {
                return (tile, acc);
            }
            let tx = tile % prep.tiles_x;
            let ty = tile / prep.tiles_x;
            let x0 = tx * ts;
            let y0 = ty * ts;
            let x1 = (x0 + ts).min(w);
            let y1 = (y0 + ts).min(h);
            // (position in list, alpha, transmittance before this splat, exp factor)
            let mut contributors: Vec<(u32, f64, f64, f64)> = Vec::with_capacity(list.len());
            for py in y0..y1 {
                for px in x0..x1 {
                    let r = residual[py * w + px];
                    let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                    contributors.clear();
                    let mut transmittance = 1.0;
                    for (pos, &si) in list.iter().enumerate() {
                        let s = &prep.splats[si as usize];
                        let d = p - s.geom.mean2d;
                        let m = s.geom.conic;
                        let power = d.x * (m[(0, 0)] * d.x + m[(0, 1)] * d.y)
                            + d.y * (m[(1, 0)] * d.x + m[(1, 1)] * d.y);
                        if let Some(c) = cutoff_sq {
                            if power > c {
                                continue;
                            }
                        }
                        let g_exp = (-0.5 * power).exp();
                        let alpha = s.opacity * g_exp;
                        contributors.push((pos as u32, alpha, transmittance, g_exp));
                        transmittance *= 1.0 - alpha;
                        if let Some(f) = floor {
                            if transmittance < f {
                                break;
                            }
                        }
                    }
                    // Reverse sweep: color accumulated behind the current splat.
                    let mut behind = [0.0f64; 3];
                    for &(pos, alpha, t_cur, g_exp) in contributors.iter().rev() {
                        let s = &prep.splats[list[pos as usize] as usize];
                        let a = &mut acc[pos as usize];
                        let weight = alpha * t_cur;
                        a.contribution += weight;
                        let mut g_alpha = 0.0;
                        for c in 0..3 {
                            a.d_color[c] += r[c] * weight;
                            g_alpha += r[c] * t_cur * (s.color[c] - behind[c]);
                        }
                        a.d_opacity += g_alpha * g_exp;
                        let d = p - s.geom.mean2d;
                        let m = s.geom.conic;
                        let md = Vector2::new(
                            m[(0, 0)] * d.x + m[(0, 1)] * d.y,
                            m[(1, 0)] * d.x + m[(1, 1)] * d.y,
                        );
                        let ga = g_alpha * alpha;
                        a.gm2 += ga * md;
                        let half = -0.5 * ga;
                        a.g_conic[(0, 0)] += half * d.x * d.x;
                        a.g_conic[(0, 1)] += half * d.x * d.y;
                        a.g_conic[(1, 0)] += half * d.y * d.x;
                        a.g_conic[(1, 1)] += half * d.y * d.y;
                        for c in 0..3 {
                            behind[c] = alpha * s.color[c] + (1.0 - alpha) * behind[c];
                        }
                    }
                }
            }
            (tile, acc)
        })
        .collect();

    let mut per_splat = vec![SplatAcc::default(); prep.splats.len()];
    let mut ordered = tile_results;
    ordered.sort_by_key(|(tile, _)| *tile);
    for (tile, accs) in &ordered {
        for (pos, a) in accs.iter().enumerate() {
            per_splat[prep.tile_lists[*tile][pos] as usize].merge(a);
        }
    }

    // Chain per-splat 2D gradients back to world-space mean and covariance.
    let n = field.len();
    let view_rot = camera.view_rotation();
    let focal = camera.focal();
    let chained: Vec<(usize, Vector3<f64>, Matrix3<f64>, [f64; 3], f64, f64, Vector2<f64>)> = prep
        .splats
        .par_iter()
        .zip(per_splat.par_iter())
        .map(|(s, a)| {
            let m = s.geom.conic;
            // d wrt the (inflated) 2D covariance: dA = -M dM M.
            let d_a = -(m * a.g_conic * m);
            let j = perspective_jacobian(focal, &s.geom.view);
            let g = &field.gaussians()[s.index];
            let cov_view = view_rot * g.covariance() * view_rot.transpose();
            // Mean path through the projection.
            let mut d_view = j.transpose() * a.gm2;
            // Mean path through the Jacobian of the covariance projection.
            let p_mat = cov_view * j.transpose();
            let j_grads = perspective_jacobian_grads(focal, &s.geom.view);
            for k in 0..3 {
                let x = j_grads[k] * p_mat;
                d_view[k] += 2.0 * frob2(&d_a, &x);
            }
            let d_mean = view_rot.transpose() * d_view;
            let d_cov_view = j.transpose() * d_a * j;
            let d_cov3 = view_rot.transpose() * d_cov_view * view_rot;
            (s.index, d_mean, d_cov3, a.d_color, a.d_opacity, a.contribution, a.gm2)
        })
        .collect();

    let mut raw = RawGrads {
        d_mean: vec![Vector3::zeros(); n],
        d_cov3: vec![Matrix3::zeros(); n],
        d_color: vec![[0.0; 3]; n],
        d_opacity: vec![0.0; n],
        contribution: vec![0.0; n],
        d_mean2d: vec![Vector2::zeros(); n],
    };
    for (index, d_mean, d_cov3, d_color, d_opacity, contribution, gm2) in chained {
        raw.d_mean[index] = d_mean;
        raw.d_cov3[index] = d_cov3;
        raw.d_color[index] = d_color;
        raw.d_opacity[index] = d_opacity;
        raw.contribution[index] = contribution;
        raw.d_mean2d[index] = gm2;
    }
    Ok(raw)
}

fn finish_attributes(field: &ObjectField, raw: RawGrads) -> ViewGradients {
    let n = field.len();
    let mut grads = ViewGradients {
        d_mean: raw.d_mean,
        d_scale: vec![Vector3::zeros(); n],
        d_rotation: vec![[0.0; 4]; n],
        d_color: raw.d_color,
        d_opacity: raw.d_opacity,
        contribution: raw.contribution,
        d_mean2d: raw.d_mean2d,
        d_cov3: raw.d_cov3,
        d_pose: Vec::new(),
    };
    for (i, g) in field.gaussians().iter().enumerate() {
        let d_cov = &grads.d_cov3[i];
        if d_cov == &Matrix3::zeros() {
            continue;
        }
        let rot = quat::rotation_matrix(&g.rotation);
        let inner = rot.transpose() * d_cov * rot;
        grads.d_scale[i] = Vector3::new(
            2.0 * g.scale.x * inner[(0, 0)],
            2.0 * g.scale.y * inner[(1, 1)],
            2.0 * g.scale.z * inner[(2, 2)],
        );
        let d_mat = 2.0 * d_cov * rot * Matrix3::from_diagonal(&g.scale.map(|s| s * s));
        grads.d_rotation[i] = quat::chain_matrix_grad(&g.rotation, &d_mat);
    }
    grads
}

fn frob2(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    a[(0, 0)] * b[(0, 0)] + a[(0, 1)] * b[(0, 1)] + a[(1, 0)] * b[(1, 0)] + a[(1, 1)] * b[(1, 1)]
}

fn frob3(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += a[(i, j)] * b[(i, j)];
        }
    }
    acc
}
