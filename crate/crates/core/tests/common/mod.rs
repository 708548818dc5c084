//! Shared test helpers: a naive reference renderer implemented from the
//! blending formula directly (full per-pixel sum, no cutoffs, no tiling),
//! random scene generators, and finite-difference utilities.

#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use splatcomp_core::field::{Gaussian, InteractionParams, InteractionStatus, ObjectField, Scene};
use splatcomp_core::render::Camera;

/// Reference forward render: per pixel, sum over every Gaussian in depth
/// order with no spatial or transmittance truncation. Written independently
/// of the production renderer.
pub fn naive_render(field: &ObjectField, cam: &Camera) -> (Vec<[f64; 3]>, Vec<f64>) {
    let w = cam.width;
    let h = cam.height;
    let focal = 0.5 * h as f64 / (0.5 * cam.fov_y.to_radians()).tan();
    let cx = w as f64 * 0.5;
    let cy = h as f64 * 0.5;

    let forward = (cam.look_at - cam.position).normalize();
    let right = forward.cross(&cam.up).normalize();
    let down = forward.cross(&right);

    struct Ref {
        order: usize,
        mean2d: Vector2<f64>,
        inv: Matrix2<f64>,
        depth: f64,
        opacity: f64,
        color: [f64; 3],
    }

    let mut refs: Vec<Ref> = Vec::new();
    for (order, g) in field.gaussians().iter().enumerate() {
        let rel = g.mean - cam.position;
        let v = Vector3::new(right.dot(&rel), down.dot(&rel), forward.dot(&rel));
        if v.z < cam.near {
            continue;
        }
        let mean2d = Vector2::new(focal * v.x / v.z + cx, focal * v.y / v.z + cy);
        let rot = g.rotation.to_rotation_matrix();
        let cov3 = rot * Matrix3::from_diagonal(&g.scale.map(|s| s * s)) * rot.transpose();
        let wmat = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let cov_view = wmat * cov3 * wmat.transpose();
        let zi = 1.0 / v.z;
        let j = nalgebra::Matrix2x3::new(focal * zi, 0.0, -focal * v.x * zi * zi, 0.0, focal * zi, -focal * v.y * zi * zi);
        let mut cov2 = j * cov_view * j.transpose();
        cov2[(0, 0)] += 0.3;
        cov2[(1, 1)] += 0.3;
        let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
        if !(det > 0.0 && det.is_finite()) {
            continue;
        }
        let inv = Matrix2::new(cov2[(1, 1)], -cov2[(0, 1)], -cov2[(1, 0)], cov2[(0, 0)]) / det;
        refs.push(Ref {
            order,
            mean2d,
            inv,
            depth: v.z,
            opacity: g.opacity,
            color: g.color,
        });
    }
    refs.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.order.cmp(&b.order)));

    let mut pixels = vec![[0.0f64; 3]; w * h];
    let mut alpha = vec![0.0f64; w * h];
    for py in 0..h {
        for px in 0..w {
            let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for r in &refs {
                let d = p - r.mean2d;
                let power = d.dot(&(r.inv * d));
                let a = r.opacity * (-0.5 * power).exp();
                for k in 0..3 {
                    c[k] += r.color[k] * a * t;
                }
                t *= 1.0 - a;
            }
            pixels[py * w + px] = c;
            alpha[py * w + px] = 1.0 - t;
        }
    }
    (pixels, alpha)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_gaussian(rng: &mut ChaCha8Rng, spread: f64) -> Gaussian {
    let mean = Vector3::new(
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
        rng.random_range(-spread..spread),
    );
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Gaussian {
        mean,
        rotation: UnitQuaternion::from_scaled_axis(axis),
        scale: Vector3::new(
            rng.random_range(0.02..0.3),
            rng.random_range(0.02..0.3),
            rng.random_range(0.02..0.3),
        ),
        opacity: rng.random_range(0.05..0.95),
        color: [rng.random(), rng.random(), rng.random()],
    }
}

pub fn random_field(rng: &mut ChaCha8Rng, id: &str, count: usize, spread: f64) -> ObjectField {
    let gaussians = (0..count).map(|_| random_gaussian(rng, spread)).collect();
    ObjectField::new(id, "", gaussians).unwrap()
}

/// Sphere-shell field: `count` Gaussians on a sphere surface.
pub fn shell_field(rng: &mut ChaCha8Rng, id: &str, center: Vector3<f64>, radius: f64, count: usize) -> ObjectField {
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let dir = loop {
            let v = Vector3::new(
                rng.random_range(-1.0f64..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break v / n;
            }
        };
        gaussians.push(Gaussian::isotropic(
            center + radius * dir,
            radius * 0.08,
            0.9,
            [0.6, 0.6, 0.6],
        ));
    }
    ObjectField::new(id, "", gaussians).unwrap()
}

/// Solid ball of Gaussians: points sampled inside the sphere, sized so the
/// silhouette saturates when rendered.
pub fn ball_field(rng: &mut ChaCha8Rng, id: &str, center: Vector3<f64>, radius: f64, count: usize) -> ObjectField {
    let mut gaussians = Vec::with_capacity(count);
    for _ in 0..count {
        let p = loop {
            let v = Vector3::new(
                rng.random_range(-1.0f64..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() <= 1.0 {
                break v;
            }
        };
        gaussians.push(Gaussian::isotropic(
            center + radius * p,
            radius * 0.25,
            0.95,
            [0.7, 0.5, 0.3],
        ));
    }
    ObjectField::new(id, "", gaussians).unwrap()
}

/// Horizontal slab of Gaussians spanning [-half, half]^2 at height y.
pub fn slab_field(id: &str, y: f64, half: f64, per_side: usize) -> ObjectField {
    let mut gaussians = Vec::new();
    for iy in 0..per_side {
        for ix in 0..per_side {
            let fx = -half + 2.0 * half * ix as f64 / (per_side - 1) as f64;
            let fz = -half + 2.0 * half * iy as f64 / (per_side - 1) as f64;
            gaussians.push(Gaussian::isotropic(
                Vector3::new(fx, y, fz),
                half * 0.05,
                0.9,
                [0.5, 0.4, 0.3],
            ));
        }
    }
    ObjectField::new(id, "", gaussians).unwrap()
}

pub fn pair_scene(anchor: ObjectField, child: ObjectField, params: InteractionParams) -> Scene {
    Scene::new(vec![anchor, child], vec![params]).unwrap()
}

pub fn initialized_params(
    anchor: &str,
    child: &str,
    rotation: Quaternion<f64>,
    translation: Vector3<f64>,
    scale: f64,
) -> InteractionParams {
    InteractionParams {
        anchor_id: anchor.into(),
        child_id: child.into(),
        rotation,
        translation,
        scale,
        prompt: String::new(),
        status: InteractionStatus::Initialized,
    }
}

/// Relative-error comparison with an absolute floor for near-zero values.
pub fn rel_err(analytic: f64, reference: f64) -> f64 {
    let denom = reference.abs().max(1e-7);
    (analytic - reference).abs() / denom
}

/// Identity quaternion for interaction params.
pub fn identity_quat() -> Quaternion<f64> {
    Quaternion::new(1.0, 0.0, 0.0, 0.0)
}

/// Drop scenario: a 1000-Gaussian sphere shell 1.0 (world units) above a
/// plane anchor. Child world radius is 0.4 after the 0.8 anchor scale.
pub fn scenario_sphere_drop() -> Scene {
    let mut r = rng(0xD509);
    let plane = slab_field("plane", 0.0, 1.5, 30);
    let sphere = shell_field(&mut r, "ball", Vector3::zeros(), 0.5, 1000);
    // Child center 1.0 above the plane in world units: t_y = 1.0 / 0.8.
    let params = initialized_params("plane", "ball", identity_quat(), Vector3::new(0.0, 1.25, 0.0), 1.0);
    pair_scene(plane, sphere, params)
}

/// Two equal sphere shells side by side on the floor with 20% center-line
/// overlap. Anchor center sits at local (0, 0.5, 0) so its bottom is the
/// floor; the child starts beside it, bottom on the floor too.
pub fn scenario_sphere_overlap() -> Scene {
    let mut r = rng(0xC0417);
    let anchor = shell_field(&mut r, "left", Vector3::new(0.0, 0.5, 0.0), 0.5, 800);
    let child = shell_field(&mut r, "right", Vector3::zeros(), 0.5, 800);
    // Equal world radii 0.4; center distance 1.6 * r_local in the anchor frame.
    let params = initialized_params("left", "right", identity_quat(), Vector3::new(0.8, 0.5, 0.0), 1.0);
    pair_scene(anchor, child, params)
}

/// Overhang scenario: a blob resting near the edge of a slab so that its
/// top-view overlap with the slab starts inside the impulse band.
pub fn scenario_overhang() -> Scene {
    let mut r = rng(0x0BE6);
    let table = slab_field("table", 0.0, 1.0, 30);
    let blob = shell_field(&mut r, "cup", Vector3::zeros(), 0.35, 500);
    let params = initialized_params("table", "cup", identity_quat(), Vector3::new(0.9, 0.35, 0.0), 1.0);
    pair_scene(table, blob, params)
}
