//! Uniform hash grid for exact nearest-neighbor and k-nearest-neighbor
//! queries over point sets. Queries expand cell rings until the current
//! best distance provably cannot improve, so results are exact; ties break
//! by point index to keep contact sets deterministic.

use nalgebra::Vector3;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct SpatialGrid {
    points: Vec<Vector3<f64>>,
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl SpatialGrid {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        assert!(!points.is_empty(), "grid needs at least one point");
        // Cell size targeting a few points per cell.
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let extent = (max - min).norm().max(1e-9);
        let cell = (extent / (points.len() as f64).cbrt()).max(1e-9);
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        SpatialGrid {
            points: points.to_vec(),
            cell,
            cells,
        }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.points[i]
    }

    /// Index and squared distance of the exact nearest point to `q`.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        let center = Self::key(q, self.cell);
        let mut ring = 0i64;
        loop {
            let mut any = false;
            for (kx, ky, kz) in ring_keys(center, ring) {
                if let Some(list) = self.cells.get(&(kx, ky, kz)) {
                    any = true;
                    for &i in list {
                        let d2 = (self.points[i as usize] - q).norm_squared();
                        if d2 < best.1 || (d2 == best.1 && (i as usize) < best.0) {
                            best = (i as usize, d2);
                        }
                    }
                }
            }
            // Any point in a farther ring is at least (ring) cells away.
            if best.0 != usize::MAX {
                let safe = ring as f64 * self.cell;
                if best.1 <= safe * safe {
                    return best;
                }
            }
            if !any && ring as f64 * self.cell > self.max_extent() + self.cell {
                // Searched past the whole cloud.
                return best;
            }
            ring += 1;
        }
    }

    /// Indices and squared distances of the exact k nearest points,
    /// ascending by (distance, index).
    pub fn k_nearest(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        let center = Self::key(q, self.cell);
        let mut ring = 0i64;
        loop {
            for (kx, ky, kz) in ring_keys(center, ring) {
                if let Some(list) = self.cells.get(&(kx, ky, kz)) {
                    for &i in list {
                        let d2 = (self.points[i as usize] - q).norm_squared();
                        let entry = (i as usize, d2);
                        let pos = best
                            .binary_search_by(|probe| {
                                probe.1.total_cmp(&d2).then(probe.0.cmp(&entry.0))
                            })
                            .unwrap_or_else(|e| e);
                        best.insert(pos, entry);
                        if best.len() > k {
                            best.pop();
                        }
                    }
                }
            }
            if best.len() == k {
                let safe = ring as f64 * self.cell;
                if best[k - 1].1 <= safe * safe {
                    return best;
                }
            }
            if ring as f64 * self.cell > self.max_extent() + self.cell {
                return best;
            }
            ring += 1;
        }
    }

    fn max_extent(&self) -> f64 {
        // Conservative bound for terminating ring expansion.
        let mut min = self.points[0];
        let mut max = self.points[0];
        for p in &self.points {
            min = min.inf(p);
            max = max.sup(p);
        }
        (max - min).norm()
    }
}

/// Keys of the hollow cube shell at Chebyshev distance `ring` around `c`.
fn ring_keys(c: (i64, i64, i64), ring: i64) -> Vec<(i64, i64, i64)> {
    let mut keys = Vec::new();
    if ring == 0 {
        keys.push(c);
        return keys;
    }
    for dx in -ring..=ring {
        for dy in -ring..=ring {
            for dz in -ring..=ring {
                if dx.abs().max(dy.abs()).max(dz.abs()) == ring {
                    keys.push((c.0 + dx, c.1 + dy, c.2 + dz));
                }
            }
        }
    }
    keys
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        (0..n).map(|_| Vector3::new(next(), next(), next())).collect()
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = pseudo_points(300, 42);
        let grid = SpatialGrid::build(&pts);
        let queries = pseudo_points(50, 7);
        for q in &queries {
            let (gi, gd) = grid.nearest(q);
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(gi, bi);
            assert_eq!(gd, bd);
        }
    }

    #[test]
    fn k_nearest_matches_brute_force() {
        let pts = pseudo_points(200, 3);
        let grid = SpatialGrid::build(&pts);
        let queries = pseudo_points(20, 11);
        for q in &queries {
            let got = grid.k_nearest(q, 5);
            let mut all: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got, all[..5].to_vec());
        }
    }

    #[test]
    fn k_larger_than_set_returns_everything() {
        let pts = pseudo_points(4, 9);
        let grid = SpatialGrid::build(&pts);
        assert_eq!(grid.k_nearest(&Vector3::zeros(), 10).len(), 4);
    }
}
