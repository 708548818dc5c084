//! Forward splatting: front-to-back alpha blending of projected Gaussians
//! over pixel tiles.

use nalgebra::Vector2;
use rayon::prelude::*;

use super::project::{max_eigenvalue, project, SplatGeom};
use super::{Camera, RenderOptions, RenderStats, RenderedImage};
use crate::field::ObjectField;
use crate::{Error, Result};

/// A projected splat ready for blending, in depth order.
#[derive(Debug, Clone)]
pub(crate) struct PreparedSplat {
    /// Index into the source field.
    pub index: usize,
    pub geom: SplatGeom,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel bounds used for tile binning.
    pub bbox: (usize, usize, usize, usize),
}

pub(crate) struct Prepared {
    pub splats: Vec<PreparedSplat>,
    pub stats: RenderStats,
    pub tiles_x: usize,
    #[allow(dead_code)]
    pub tiles_y: usize,
    /// Per-tile lists of indices into `splats`, each in depth order.
    pub tile_lists: Vec<Vec<u32>>,
}

pub(crate) fn prepare(field: &ObjectField, camera: &Camera, opts: &RenderOptions) -> Result<Prepared> {
    camera.validate()?;
    if field.is_empty() {
        return Err(Error::Validation("cannot render an empty field".into()));
    }
    let view_rot = camera.view_rotation();
    let mut stats = RenderStats::default();
    let mut splats: Vec<PreparedSplat> = Vec::with_capacity(field.len());
    let w = camera.width;
    let h = camera.height;
    for (index, g) in field.gaussians().iter().enumerate() {
        let Some(geom) = project(g, camera, &view_rot) else {
            stats.culled += 1;
            continue;
        };
        if geom.depth.is_nan() {
            stats.degenerate += 1;
            continue;
        }
        let bbox = match opts.sigma_cutoff {
            Some(k) => {
                let radius = k * max_eigenvalue(&geom.cov2d).sqrt();
                let x0 = (geom.mean2d.x - radius).floor();
                let x1 = (geom.mean2d.x + radius).ceil();
                let y0 = (geom.mean2d.y - radius).floor();
                let y1 = (geom.mean2d.y + radius).ceil();
                if x1 < 0.0 || y1 < 0.0 || x0 >= w as f64 || y0 >= h as f64 {
                    stats.culled += 1;
                    continue;
                }
                (
                    x0.max(0.0) as usize,
                    (x1.max(0.0) as usize).min(w - 1),
                    y0.max(0.0) as usize,
                    (y1.max(0.0) as usize).min(h - 1),
                )
            }
            None => (0, w - 1, 0, h - 1),
        };
        splats.push(PreparedSplat {
            index,
            geom,
            opacity: g.opacity,
            color: g.color,
            bbox,
        });
    }
    // Front-to-back global depth sort; ties broken by source index so the
    // output is deterministic.
    splats.sort_by(|a, b| {
        a.geom
            .depth
            .total_cmp(&b.geom.depth)
            .then(a.index.cmp(&b.index))
    });

    let ts = opts.tile_size;
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let (x0, x1, y0, y1) = s.bbox;
        for ty in (y0 / ts)..=(y1 / ts) {
            for tx in (x0 / ts)..=(x1 / ts) {
                tile_lists[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    Ok(Prepared {
        splats,
        stats,
        tiles_x,
        tiles_y,
        tile_lists,
    })
}

/// Render a field through the given camera. Background is black.
pub fn render(field: &ObjectField, camera: &Camera, opts: &RenderOptions) -> Result<RenderedImage> {
    Ok(render_with_stats(field, camera, opts)?.0)
}

pub fn render_with_stats(
    field: &ObjectField,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<(RenderedImage, RenderStats)> {
    let prep = prepare(field, camera, opts)?;
    let w = camera.width;
    let h = camera.height;
    let ts = opts.tile_size;
    let cutoff_sq = opts.sigma_cutoff.map(|k| k * k);
    let floor = opts.transmittance_floor;

    let tile_results: Vec<(usize, Vec<([f64; 3], f64)>)> = (0..prep.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let tx = tile % prep.tiles_x;
            let ty = tile / prep.tiles_x;
            let x0 = tx * ts;
            let y0 = ty * ts;
            let x1 = (x0 + ts).min(w);
            let y1 = (y0 + ts).min(h);
            let mut out = vec![([0.0; 3], 0.0); (x1 - x0) * (y1 - y0)];
            let list = &prep.tile_lists[tile];
            for py in y0..y1 {
                for px in x0..x1 {
                    let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let mut color = [0.0; 3];
                    let mut transmittance = 1.0;
                    for &si in list {
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
                        let alpha = s.opacity * (-0.5 * power).exp();
                        let weight = alpha * transmittance;
                        color[0] += s.color[0] * weight;
                        color[1] += s.color[1] * weight;
                        color[2] += s.color[2] * weight;
                        transmittance *= 1.0 - alpha;
                        if let Some(f) = floor {
                            if transmittance < f {
                                break;
                            }
                        }
                    }
                    out[(py - y0) * (x1 - x0) + (px - x0)] = (color, 1.0 - transmittance);
                }
            }
            (tile, out)
        })
        .collect();

    let mut image = RenderedImage::black(w, h);
    for (tile, data) in tile_results {
        let tx = tile % prep.tiles_x;
        let ty = tile / prep.tiles_x;
        let x0 = tx * ts;
        let y0 = ty * ts;
        let x1 = (x0 + ts).min(w);
        let tile_w = x1 - x0;
        for (i, (color, alpha)) in data.into_iter().enumerate() {
            let px = x0 + i % tile_w;
            let py = y0 + i / tile_w;
            image.pixels[py * w + px] = color;
            image.alpha[py * w + px] = alpha;
        }
    }
    Ok((image, prep.stats))
}
