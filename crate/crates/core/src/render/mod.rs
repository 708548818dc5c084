//! Software splatting renderer: forward alpha blending and a backward pass
//! producing per-Gaussian and per-interaction gradients.

mod backward;
mod camera;
mod forward;
mod project;

pub use backward::{render_backward, render_backward_field, PoseGradient};
pub use camera::Camera;
pub use forward::{render, render_with_stats};
pub use project::{perspective_jacobian, project, SplatGeom, COV2D_INFLATION};

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::field::{FlatScene, Scene};
use crate::{Error, Result};

/// Truncation knobs for the splatting loops. Both cutoffs can be disabled
/// to make the renderer exactly match a naive per-pixel reference.
#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Skip pixels beyond this many standard deviations from a splat's
    /// projected mean. `None` disables the cutoff.
    pub sigma_cutoff: Option<f64>,
    /// Stop blending a pixel once transmittance drops below this.
    pub transmittance_floor: Option<f64>,
    pub tile_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            sigma_cutoff: Some(3.0),
            transmittance_floor: Some(1e-4),
            tile_size: 16,
        }
    }
}

impl RenderOptions {
    /// No truncation: every splat blends into every pixel.
    pub fn exact() -> Self {
        RenderOptions {
            sigma_cutoff: None,
            transmittance_floor: None,
            tile_size: 16,
        }
    }
}

/// Counters for splats dropped during projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    /// Behind the near plane or entirely off screen.
    pub culled: usize,
    /// Non-invertible projected covariance even after inflation.
    pub degenerate: usize,
}

/// Rendered RGB image with accumulated opacity, all values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, indexed `y * width + x`.
    pub pixels: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
}

impl RenderedImage {
    pub fn black(width: usize, height: usize) -> Self {
        RenderedImage {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
            alpha: vec![0.0; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }
}

/// Gradients of sum_p residual(p)·C(p) for one view.
#[derive(Debug, Clone)]
pub struct ViewGradients {
    /// Per-Gaussian gradient w.r.t. the world-space mean.
    pub d_mean: Vec<Vector3<f64>>,
    /// Per-Gaussian gradient w.r.t. the per-axis scales.
    pub d_scale: Vec<Vector3<f64>>,
    /// Per-Gaussian gradient w.r.t. the rotation quaternion (w, x, y, z).
    pub d_rotation: Vec<[f64; 4]>,
    pub d_color: Vec<[f64; 3]>,
    pub d_opacity: Vec<f64>,
    /// Per-Gaussian summed blending weight sum_p alpha_i prod_{j<i}(1-alpha_j).
    pub contribution: Vec<f64>,
    /// Per-Gaussian viewspace positional gradient (pixel units).
    pub d_mean2d: Vec<Vector2<f64>>,
    /// Per-Gaussian gradient w.r.t. the world covariance matrix.
    pub d_cov3: Vec<Matrix3<f64>>,
    /// Per requested interaction, in request order.
    pub d_pose: Vec<PoseGradient>,
}

impl ViewGradients {
    pub fn pose(&self, anchor_id: &str, child_id: &str) -> Option<&PoseGradient> {
        self.d_pose
            .iter()
            .find(|p| p.anchor_id == anchor_id && p.child_id == child_id)
    }
}

/// Mean blending-weight contribution of a child object's Gaussians, averaged
/// over cameras. Zero iff the child is fully occluded or out of frame in all
/// views.
pub fn visibility(scene: &Scene, child_id: &str, cameras: &[Camera], opts: &RenderOptions) -> Result<f64> {
    if cameras.is_empty() {
        return Err(Error::Validation("visibility needs at least one camera".into()));
    }
    let flat = crate::field::flatten_scene(scene)?;
    visibility_flat(&flat, child_id, cameras, opts)
}

/// Visibility over an already-flattened scene.
pub fn visibility_flat(
    flat: &FlatScene,
    child_id: &str,
    cameras: &[Camera],
    opts: &RenderOptions,
) -> Result<f64> {
    let span = flat.span(child_id)?.clone();
    let mut total = 0.0;
    for cam in cameras {
        let residual = vec![[1.0; 3]; cam.pixel_count()];
        let grads = render_backward(flat, cam, &residual, &[], opts)?;
        let sum: f64 = grads.contribution[span.range.clone()].iter().sum();
        total += sum / span.range.len() as f64;
    }
    Ok(total / cameras.len() as f64)
}
