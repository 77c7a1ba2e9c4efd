//! Frequency-preserving translation: maintain per-node data over a fixed
//! parameter grid and solve omega(xi) + drift(xi) = omega(xi0) by
//! derivative-free, Brouwer-degree-guided box bisection.
//!
//! The grid is global and fixed for the whole run; recentring it would
//! require re-deriving every node's history. Drift between nodes is
//! interpolated piecewise-linearly, and after a root solve the current
//! parameter snaps to the nearest node (all series data live at nodes; the
//! snap distance is reported).

use serde::{Deserialize, Serialize};

use crate::assumptions::{brouwer_degree_rule, BoxRegion, DegreeReport, MarginRule};
use crate::error::{KamError, Result};

/// Tensor grid of parameter samples, symmetric about its center; `per_axis`
/// is odd so the center itself is a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    pub center: Vec<f64>,
    pub radius: f64,
    pub per_axis: usize,
    axis_coords: Vec<Vec<f64>>,
    nodes: Vec<Vec<f64>>,
    pub current: usize,
}

impl ParameterGrid {
    pub fn new(center: Vec<f64>, radius: f64, per_axis: usize) -> Result<Self> {
        if per_axis % 2 == 0 || per_axis < 1 {
            return Err(KamError::ConfigError {
                path: "grid".into(),
                reason: format!("grid size must be odd, got {per_axis}"),
            });
        }
        if radius <= 0.0 {
            return Err(KamError::ConfigError {
                path: "grid.radius".into(),
                reason: "must be positive".into(),
            });
        }
        let dim = center.len();
        let axis_coords: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                (0..per_axis)
                    .map(|j| {
                        let t = if per_axis == 1 {
                            0.0
                        } else {
                            2.0 * j as f64 / (per_axis - 1) as f64 - 1.0
                        };
                        center[i] + radius * t
                    })
                    .collect()
            })
            .collect();
        let mut nodes = Vec::with_capacity(per_axis.pow(dim as u32));
        let mut idx = vec![0usize; dim];
        loop {
            nodes.push((0..dim).map(|i| axis_coords[i][idx[i]]).collect());
            let mut axis = dim;
            loop {
                if axis == 0 {
                    break;
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
                if axis == 0 {
                    let current = nodes.len() / 2; // center of an odd tensor grid
                    return Ok(ParameterGrid {
                        center,
                        radius,
                        per_axis,
                        axis_coords,
                        nodes,
                        current,
                    });
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &[f64] {
        &self.nodes[idx]
    }

    pub fn current_node(&self) -> &[f64] {
        &self.nodes[self.current]
    }

    pub fn grid_box(&self) -> BoxRegion {
        BoxRegion::new(
            self.center.iter().map(|c| c - self.radius).collect(),
            self.center.iter().map(|c| c + self.radius).collect(),
        )
    }

    pub fn nearest_node(&self, xi: &[f64]) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, node) in self.nodes.iter().enumerate() {
            let d: f64 = node
                .iter()
                .zip(xi)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Piecewise-multilinear interpolation of per-node vector data.
    pub fn interpolate(&self, per_node: &[Vec<f64>], xi: &[f64]) -> Vec<f64> {
        assert_eq!(per_node.len(), self.nodes.len());
        let dim = self.dim();
        let g = self.per_axis;
        let mut cell = vec![0usize; dim];
        let mut w = vec![0.0f64; dim];
        for i in 0..dim {
            let coords = &self.axis_coords[i];
            if g == 1 {
                cell[i] = 0;
                w[i] = 0.0;
                continue;
            }
            let mut j = coords.partition_point(|c| *c <= xi[i]);
            j = j.clamp(1, g - 1);
            cell[i] = j - 1;
            let span = coords[j] - coords[j - 1];
            w[i] = ((xi[i] - coords[j - 1]) / span).clamp(0.0, 1.0);
        }
        let out_dim = per_node[0].len();
        let mut acc = vec![0.0f64; out_dim];
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut node_idx = 0usize;
            for i in 0..dim {
                let hi = (corner >> i) & 1 == 1;
                let j = if g == 1 {
                    0
                } else {
                    cell[i] + usize::from(hi)
                };
                weight *= if hi { w[i] } else { 1.0 - w[i] };
                node_idx = node_idx * g + j;
            }
            if weight == 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(&per_node[node_idx]) {
                *a += weight * v;
            }
        }
        acc
    }
}

/// Outcome of the degree-guided root solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootResult {
    pub xi: Vec<f64>,
    /// |G| at the returned point; bounded by the modulus of continuity of G
    /// over a tol-box (reported, not assumed).
    pub residual: f64,
    pub degree: i32,
    pub levels: usize,
}

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Degree of g relative to 0 with automatic sample refinement. The descent
/// visits boxes across many scales, so validity is checked per segment
/// (exact winding for increments below pi/3) rather than with the global
/// margin heuristic of the public degree op.
fn degree_refining(
    g: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    region: &BoxRegion,
    samples: usize,
) -> Result<DegreeReport> {
    let p = vec![0.0; region.dim()];
    let mut n = samples.max(64);
    loop {
        match brouwer_degree_rule(g, region, &p, n, MarginRule::PerSegment(0.5)) {
            Ok(rep) => return Ok(rep),
            Err(e) => {
                if n >= 4096 {
                    return Err(e);
                }
                n *= 2;
            }
        }
    }
}

/// Finds a zero of G inside `region` by descending into sub-boxes of nonzero
/// Brouwer degree (n = 1: bracketing bisection; n = 2: recursive box
/// quadrisection with a deterministic off-center split so roots do not sit on
/// seams). First nonzero-degree sub-box wins, lowest index on ties.
pub fn solve_frequency_equation(
    g: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    region: &BoxRegion,
    tol: f64,
    samples: usize,
) -> Result<RootResult> {
    match region.dim() {
        1 => solve_1d(g, region, tol),
        2 => solve_2d(g, region, tol, samples),
        n => Err(KamError::UnsupportedDimension(n)),
    }
}

fn solve_1d(g: &(dyn Fn(&[f64]) -> Vec<f64> + Sync), region: &BoxRegion, tol: f64) -> Result<RootResult> {
    let (mut a, mut b) = (region.lo[0], region.hi[0]);
    let mut fa = g(&[a])[0];
    let fb = g(&[b])[0];
    if fa == 0.0 {
        return Ok(RootResult { xi: vec![a], residual: 0.0, degree: 0, levels: 0 });
    }
    if fb == 0.0 {
        return Ok(RootResult { xi: vec![b], residual: 0.0, degree: 0, levels: 0 });
    }
    let degree = ((fb.signum() - fa.signum()) / 2.0) as i32;
    if degree == 0 {
        return Err(KamError::DegreeVanished { level: 0 });
    }
    let mut levels = 0usize;
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let fm = g(&[mid])[0];
        levels += 1;
        if fm == 0.0 {
            return Ok(RootResult { xi: vec![mid], residual: 0.0, degree, levels });
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    let mid = 0.5 * (a + b);
    let residual = g(&[mid])[0].abs();
    Ok(RootResult { xi: vec![mid], residual, degree, levels })
}

fn solve_2d(
    g: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    region: &BoxRegion,
    tol: f64,
    samples: usize,
) -> Result<RootResult> {
    let top = degree_refining(g, region, samples)?;
    if top.deg == 0 {
        return Err(KamError::DegreeVanished { level: 0 });
    }
    let max_levels = 2 * 2 * (region.diameter() / tol).log2().ceil().max(1.0) as usize + 16;
    let mut cur = region.clone();
    let mut level = 0usize;
    while cur.diameter() >= tol {
        level += 1;
        if level > max_levels {
            return Err(KamError::DegreeVanished { level });
        }
        // off-center split, alternating side, keeps roots off the seams
        let f = if level % 2 == 0 { 0.53 } else { 0.47 };
        let sx = cur.lo[0] + f * (cur.hi[0] - cur.lo[0]);
        let sy = cur.lo[1] + f * (cur.hi[1] - cur.lo[1]);
        let children = [
            BoxRegion::new(vec![cur.lo[0], cur.lo[1]], vec![sx, sy]),
            BoxRegion::new(vec![sx, cur.lo[1]], vec![cur.hi[0], sy]),
            BoxRegion::new(vec![cur.lo[0], sy], vec![sx, cur.hi[1]]),
            BoxRegion::new(vec![sx, sy], vec![cur.hi[0], cur.hi[1]]),
        ];
        let mut found = None;
        for child in &children {
            match degree_refining(g, child, samples) {
                Ok(rep) if rep.deg != 0 => {
                    found = Some(child.clone());
                    break;
                }
                Ok(_) => {}
                Err(_) => {} // margin failure on this child; a sibling carries the degree
            }
        }
        match found {
            Some(child) => cur = child,
            // Deep in the descent the root is already localized; a margin
            // failure on every child means it hugs a seam. Accept the center,
            // the residual below reports the true quality.
            None if cur.diameter() <= 1024.0 * tol => break,
            None => return Err(KamError::DegreeVanished { level }),
        }
    }
    let xi = cur.center();
    let on_boundary = xi
        .iter()
        .zip(region.lo.iter().zip(&region.hi))
        .any(|(x, (lo, hi))| (x - lo).abs() < 2.0 * tol || (hi - x).abs() < 2.0 * tol);
    if on_boundary {
        return Err(KamError::OutsideSearchBox { xi });
    }
    let residual = vec_norm(&g(&xi));
    Ok(RootResult {
        xi,
        residual,
        degree: top.deg,
        levels: level,
    })
}

/// Moves the current-parameter marker to the node nearest xi_plus; the grid
/// itself never changes. Returns (node index, snap distance).
pub fn advance_parameter(grid: &mut ParameterGrid, xi_plus: &[f64]) -> Result<(usize, f64)> {
    if !grid.grid_box().contains(xi_plus) {
        return Err(KamError::OutsideSearchBox {
            xi: xi_plus.to_vec(),
        });
    }
    let (idx, dist) = grid.nearest_node(xi_plus);
    grid.current = idx;
    Ok((idx, dist))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_requires_odd_size() {
        assert!(ParameterGrid::new(vec![0.0, 0.0], 1.0, 8).is_err());
        let g = ParameterGrid::new(vec![0.0, 0.0], 1.0, 9).unwrap();
        assert_eq!(g.nodes().len(), 81);
        assert_eq!(g.current_node(), &[0.0, 0.0]);
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let g = ParameterGrid::new(vec![0.0, 0.0], 1.0, 5).unwrap();
        let field: Vec<Vec<f64>> = g
            .nodes()
            .iter()
            .map(|xi| vec![2.0 * xi[0] - xi[1], 0.5 * xi[1] + 1.0])
            .collect();
        for xi in [[0.3, -0.7], [0.0, 0.0], [-0.99, 0.99], [0.125, 0.125]] {
            let v = g.interpolate(&field, &xi);
            assert!((v[0] - (2.0 * xi[0] - xi[1])).abs() < 1e-14);
            assert!((v[1] - (0.5 * xi[1] + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_1d_cube_root() {
        // omega(xi) = xi^3, drift = 1e-6: root at -(1e-6)^{1/3} = -0.01
        let g = |xi: &[f64]| vec![xi[0].powi(3) + 1e-6];
        let region = BoxRegion::new(vec![-1.0], vec![1.0]);
        let res = solve_frequency_equation(&g, &region, 1e-12, 64).unwrap();
        assert!((res.xi[0] - (-0.01)).abs() < 1e-10);
        assert!(res.residual < 1e-9);
    }

    #[test]
    fn solve_1d_matches_plain_bisection_for_monotone_g() {
        let g = |xi: &[f64]| vec![xi[0].exp() - 1.3];
        let region = BoxRegion::new(vec![0.0], vec![1.0]);
        let tol = 1e-11;
        let res = solve_frequency_equation(&g, &region, tol, 64).unwrap();
        // plain scalar bisection as the oracle
        let (mut a, mut b) = (0.0f64, 1.0f64);
        while b - a > tol {
            let mid = 0.5 * (a + b);
            if (mid.exp() - 1.3) * (a.exp() - 1.3) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let oracle = 0.5 * (a + b);
        assert!((res.xi[0] - oracle).abs() <= tol);
        assert!((res.xi[0] - 1.3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn solve_1d_no_sign_change() {
        let g = |xi: &[f64]| vec![xi[0] * xi[0] + 1e-4];
        let region = BoxRegion::new(vec![-0.5], vec![0.5]);
        assert!(matches!(
            solve_frequency_equation(&g, &region, 1e-10, 64),
            Err(KamError::DegreeVanished { .. })
        ));
    }

    #[test]
    fn solve_2d_identity_fixed_point() {
        // injective omega, zero drift: the root is the center xi0 = 0
        let g = |xi: &[f64]| xi.to_vec();
        let region = BoxRegion::cube(&[0.0, 0.0], 1.0);
        let tol = 1e-10;
        let res = solve_frequency_equation(&g, &region, tol, 128).unwrap();
        assert!(vec_norm(&res.xi) < 4.0 * tol);
        assert!(res.residual < 4.0 * tol);
        assert_eq!(res.degree, 1);
        let budget = 2 * ((2.0f64 / tol).log2().ceil() as usize); // ceil(log2(radius/tol)) * n
        assert!(res.levels <= budget, "levels {} > budget {}", res.levels, budget);
    }

    #[test]
    fn solve_2d_shifted_degenerate_root() {
        // the shape of the action-translation equation: a radial cubic
        // centered away from the box center
        let c = [0.21, -0.4];
        let g = move |xi: &[f64]| {
            let dx = xi[0] - c[0];
            let dy = xi[1] - c[1];
            let r2 = dx * dx + dy * dy;
            vec![dx * r2, dy * r2]
        };
        let region = BoxRegion::cube(&[0.0, 0.0], 1.0);
        let res = solve_frequency_equation(&g, &region, 1e-9, 128).unwrap();
        assert!((res.xi[0] - c[0]).abs() < 1e-6);
        assert!((res.xi[1] - c[1]).abs() < 1e-6);
        assert!(res.residual < 1e-12); // cubic flatness at the root
        assert_eq!(res.degree, 1);
    }

    #[test]
    fn quadrisection_degree_additivity() {
        let g = |xi: &[f64]| {
            let r2 = xi[0] * xi[0] + xi[1] * xi[1];
            vec![xi[0] * r2 + 0.03, xi[1] * r2 - 0.01]
        };
        let region = BoxRegion::cube(&[0.0, 0.0], 1.0);
        let parent = degree_refining(&g, &region, 256).unwrap();
        let sx = region.lo[0] + 0.47 * 2.0;
        let sy = region.lo[1] + 0.47 * 2.0;
        let children = [
            BoxRegion::new(vec![-1.0, -1.0], vec![sx, sy]),
            BoxRegion::new(vec![sx, -1.0], vec![1.0, sy]),
            BoxRegion::new(vec![-1.0, sy], vec![sx, 1.0]),
            BoxRegion::new(vec![sx, sy], vec![1.0, 1.0]),
        ];
        let sum: i32 = children
            .iter()
            .map(|c| degree_refining(&g, c, 256).unwrap().deg)
            .sum();
        assert_eq!(sum, parent.deg);
    }

    #[test]
    fn advance_snaps_to_nearest_node() {
        let mut grid = ParameterGrid::new(vec![0.0, 0.0], 1.0, 5).unwrap();
        // no-op when already on the current node
        let cur = grid.current_node().to_vec();
        let (idx, dist) = advance_parameter(&mut grid, &cur).unwrap();
        assert_eq!(idx, grid.current);
        assert_eq!(dist, 0.0);

        // between nodes: snap and report the distance
        let (idx, dist) = advance_parameter(&mut grid, &[0.2, -0.2]).unwrap();
        assert_eq!(grid.node(idx), &[0.0, 0.0]);
        assert!((dist - (0.2f64 * 0.2 + 0.2 * 0.2).sqrt()).abs() < 1e-15);

        let err = advance_parameter(&mut grid, &[2.0, 0.0]).unwrap_err();
        assert!(matches!(err, KamError::OutsideSearchBox { .. }));
    }
}
