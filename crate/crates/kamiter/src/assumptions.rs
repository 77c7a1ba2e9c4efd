//! Numerical verification of the standing assumptions: finite-K Diophantine
//! margins (A2), Brouwer degree on boxes (A0, n <= 2 exact), and weak-convexity
//! constant fitting (A1).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::parallel;

/// Diophantine condition |<k,omega>| > gamma / |k|_1^tau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiophantineParams {
    pub gamma: f64,
    pub tau: f64,
}

impl DiophantineParams {
    pub fn new(gamma: f64, tau: f64, dim: usize) -> Result<Self> {
        if gamma <= 0.0 {
            return Err(KamError::ConfigError {
                path: "gamma".into(),
                reason: "must be positive".into(),
            });
        }
        if tau <= dim as f64 - 1.0 {
            return Err(KamError::ConfigError {
                path: "tau".into(),
                reason: format!("must exceed n-1 = {}", dim as f64 - 1.0),
            });
        }
        Ok(DiophantineParams { gamma, tau })
    }
}

/// Axis-aligned box, the search/parameter region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        BoxRegion { lo, hi }
    }

    pub fn cube(center: &[f64], half_width: f64) -> Self {
        BoxRegion::new(
            center.iter().map(|c| c - half_width).collect(),
            center.iter().map(|c| c + half_width).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .fold(0.0f64, f64::max)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }
}

/// Continuous frequency map xi -> omega(xi) on a box, with regularity metadata.
#[derive(Clone)]
pub struct FrequencyMap {
    pub dim: usize,
    pub domain: BoxRegion,
    pub eval: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    /// Hoelder index beta in (0,1) of the perturbation in the parameter.
    pub holder_index: f64,
    /// Fitted or known (sigma, L) for the lower modulus |dw| >= sigma |dxi|^L.
    pub convexity: Option<(f64, f64)>,
}

impl FrequencyMap {
    pub fn new(
        domain: BoxRegion,
        eval: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
        holder_index: f64,
    ) -> Self {
        let dim = domain.dim();
        FrequencyMap {
            dim,
            domain,
            eval,
            holder_index,
            convexity: None,
        }
    }

    pub fn omega(&self, xi: &[f64]) -> Vec<f64> {
        (self.eval)(xi)
    }
}

impl std::fmt::Debug for FrequencyMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrequencyMap")
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("holder_index", &self.holder_index)
            .field("convexity", &self.convexity)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub ok: bool,
    pub margin: f64,
    pub worst_k: Vec<i32>,
    pub k_max: u32,
    /// This is a finite-K Diophantine check only; no claim is made beyond k_max.
    pub note: String,
}

/// Walks every lattice point with |k|_1 = kappa whose first nonzero component
/// is positive (one representative per +-k pair).
fn for_each_canonical_shell_point(dim: usize, kappa: u32, f: &mut impl FnMut(&[i32])) {
    let mut scratch = vec![0i32; dim];
    // leading zeros, then a strictly positive component, then free signs
    fn free(scratch: &mut [i32], axis: usize, budget: u32, f: &mut impl FnMut(&[i32])) {
        let dim = scratch.len();
        if axis == dim {
            if budget == 0 {
                f(scratch);
            }
            return;
        }
        if axis == dim - 1 {
            let b = budget as i32;
            if b == 0 {
                scratch[axis] = 0;
                f(scratch);
            } else {
                scratch[axis] = b;
                f(scratch);
                scratch[axis] = -b;
                f(scratch);
            }
            scratch[axis] = 0;
            return;
        }
        for mag in 0..=budget {
            let m = mag as i32;
            if m == 0 {
                scratch[axis] = 0;
                free(scratch, axis + 1, budget, f);
            } else {
                scratch[axis] = m;
                free(scratch, axis + 1, budget - mag, f);
                scratch[axis] = -m;
                free(scratch, axis + 1, budget - mag, f);
            }
        }
        scratch[axis] = 0;
    }
    for lead in 0..dim {
        for first in 1..=kappa {
            scratch[lead] = first as i32;
            if lead == dim - 1 {
                if first == kappa {
                    f(&scratch);
                }
            } else {
                free(&mut scratch, lead + 1, kappa - first, f);
            }
            scratch[lead] = 0;
        }
    }
}

/// Finite-K check of (A2): margin = min over 0 < |k|_1 <= K of
/// |<k,omega>| |k|_1^tau, ok iff margin > gamma. Ties for the worst k resolve
/// to the lexicographically smallest canonical representative.
pub fn check_diophantine(omega: &[f64], dp: &DiophantineParams, k_max: u32) -> DiophantineReport {
    assert!(k_max >= 1);
    let dim = omega.len();
    let per_shell = parallel::map_indexed(k_max as usize, |idx| {
        let kappa = (idx + 1) as u32;
        let weight = (kappa as f64).powf(dp.tau);
        let mut best: Option<(f64, Vec<i32>)> = None;
        for_each_canonical_shell_point(dim, kappa, &mut |k| {
            let dot: f64 = k.iter().zip(omega).map(|(ki, wi)| *ki as f64 * wi).sum();
            let val = dot.abs() * weight;
            match &best {
                Some((b, bk)) if val > *b || (val == *b && k >= bk.as_slice()) => {}
                _ => best = Some((val, k.to_vec())),
            }
        });
        best.expect("nonempty shell")
    });
    let mut margin = f64::INFINITY;
    let mut worst_k = vec![0i32; dim];
    for (val, k) in per_shell {
        if val < margin || (val == margin && k < worst_k) {
            margin = val;
            worst_k = k;
        }
    }
    DiophantineReport {
        ok: margin > dp.gamma,
        margin,
        worst_k,
        k_max,
        note: "finite-K Diophantine check only".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub deg: i32,
    pub boundary_margin: f64,
}

pub const DEFAULT_BOUNDARY_FACTOR: f64 = 10.0;

/// Validity rule for the sampled winding number.
#[derive(Debug, Clone, Copy)]
pub(crate) enum MarginRule {
    /// min |f - p| over all samples must exceed factor * max adjacent
    /// variation (global heuristic, the documented default).
    GlobalFactor(f64),
    /// |v_{i+1} - v_i| < factor * min(|v_i|, |v_{i+1}|) per segment: each
    /// angular increment stays below pi/3 for factor 1/2, so the winding
    /// integer is exact even when |f - p| spans a wide dynamic range.
    PerSegment(f64),
}

/// Brouwer degree of f on a box relative to target p, from boundary samples.
/// n = 1 uses endpoint signs; n = 2 the winding number of the boundary loop
/// image. The boundary margin must exceed `factor` times the maximum
/// variation of f between adjacent samples, which keeps every angular
/// increment below pi and makes the returned integer exact.
pub fn brouwer_degree_with(
    f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    region: &BoxRegion,
    p: &[f64],
    samples_per_edge: usize,
    factor: f64,
) -> Result<DegreeReport> {
    brouwer_degree_rule(f, region, p, samples_per_edge, MarginRule::GlobalFactor(factor))
}

pub(crate) fn brouwer_degree_rule(
    f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    region: &BoxRegion,
    p: &[f64],
    samples_per_edge: usize,
    rule: MarginRule,
) -> Result<DegreeReport> {
    let factor = match rule {
        MarginRule::GlobalFactor(v) | MarginRule::PerSegment(v) => v,
    };
    match region.dim() {
        1 => {
            let va = f(&[region.lo[0]])[0] - p[0];
            let vb = f(&[region.hi[0]])[0] - p[0];
            let margin = va.abs().min(vb.abs());
            if margin == 0.0 {
                return Err(KamError::BoundaryTooClose {
                    margin,
                    variation: 0.0,
                    factor,
                });
            }
            let deg = ((vb.signum() - va.signum()) / 2.0) as i32;
            Ok(DegreeReport {
                deg,
                boundary_margin: margin,
            })
        }
        2 => {
            let m = samples_per_edge.max(4);
            let corners = [
                [region.lo[0], region.lo[1]],
                [region.hi[0], region.lo[1]],
                [region.hi[0], region.hi[1]],
                [region.lo[0], region.hi[1]],
            ];
            let total = 4 * m;
            let values = parallel::map_indexed(total, |idx| {
                let edge = idx / m;
                let t = (idx % m) as f64 / m as f64;
                let a = corners[edge];
                let b = corners[(edge + 1) % 4];
                let q = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                let v = f(&q);
                [v[0] - p[0], v[1] - p[1]]
            });
            let mut margin = f64::INFINITY;
            let mut variation = 0.0f64;
            for i in 0..total {
                let v = values[i];
                let w = values[(i + 1) % total];
                margin = margin.min((v[0] * v[0] + v[1] * v[1]).sqrt());
                let d = ((w[0] - v[0]).powi(2) + (w[1] - v[1]).powi(2)).sqrt();
                variation = variation.max(d);
            }
            if let MarginRule::GlobalFactor(_) = rule {
                if margin <= factor * variation {
                    return Err(KamError::BoundaryTooClose {
                        margin,
                        variation,
                        factor,
                    });
                }
            }
            // boundary parameterization by t in [0,4): edge index + fraction
            let point_at = |t: f64| -> [f64; 2] {
                let edge = (t.floor() as usize) % 4;
                let frac = t - t.floor();
                let a = corners[edge];
                let b = corners[(edge + 1) % 4];
                [a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]
            };
            let eval = |t: f64| -> [f64; 2] {
                let q = point_at(t);
                let v = f(&q);
                [v[0] - p[0], v[1] - p[1]]
            };
            let mut angle = 0.0f64;
            for i in 0..total {
                let ta = 4.0 * i as f64 / total as f64;
                let tb = 4.0 * (i + 1) as f64 / total as f64;
                angle += segment_winding(
                    &eval,
                    ta,
                    tb,
                    values[i],
                    values[(i + 1) % total],
                    factor.min(0.5),
                    48,
                    &mut margin,
                )?;
            }
            let winding = angle / std::f64::consts::TAU;
            let deg = winding.round() as i32;
            if (winding - deg as f64).abs() > 0.25 {
                return Err(KamError::BoundaryTooClose {
                    margin,
                    variation,
                    factor,
                });
            }
            Ok(DegreeReport {
                deg,
                boundary_margin: margin,
            })
        }
        n => Err(KamError::UnsupportedDimension(n)),
    }
}

pub fn brouwer_degree(
    f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    region: &BoxRegion,
    p: &[f64],
    samples_per_edge: usize,
) -> Result<DegreeReport> {
    brouwer_degree_with(f, region, p, samples_per_edge, DEFAULT_BOUNDARY_FACTOR)
}

/// Signed angle swept by the image segment, bisecting the boundary parameter
/// until each piece satisfies |dv| < kappa * min(|v_a|, |v_b|) (every
/// increment below pi/3 for kappa = 1/2, so the accumulated winding is
/// exact). Refinement concentrates where the loop passes near the target.
#[allow(clippy::too_many_arguments)]
fn segment_winding(
    eval: &dyn Fn(f64) -> [f64; 2],
    ta: f64,
    tb: f64,
    va: [f64; 2],
    vb: [f64; 2],
    kappa: f64,
    depth: u32,
    margin: &mut f64,
) -> Result<f64> {
    let na = (va[0] * va[0] + va[1] * va[1]).sqrt();
    let nb = (vb[0] * vb[0] + vb[1] * vb[1]).sqrt();
    let d = ((vb[0] - va[0]).powi(2) + (vb[1] - va[1]).powi(2)).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(KamError::BoundaryTooClose {
            margin: 0.0,
            variation: d,
            factor: kappa,
        });
    }
    if d < kappa * na.min(nb) {
        let cross = va[0] * vb[1] - va[1] * vb[0];
        let dot = va[0] * vb[0] + va[1] * vb[1];
        return Ok(cross.atan2(dot));
    }
    if depth == 0 {
        return Err(KamError::BoundaryTooClose {
            margin: na.min(nb),
            variation: d,
            factor: kappa,
        });
    }
    let tm = 0.5 * (ta + tb);
    let vm = eval(tm);
    *margin = margin.min((vm[0] * vm[0] + vm[1] * vm[1]).sqrt());
    Ok(
        segment_winding(eval, ta, tm, va, vm, kappa, depth - 1, margin)?
            + segment_winding(eval, tm, tb, vm, vb, kappa, depth - 1, margin)?,
    )
}

/// Degree with automatic sample refinement (doubling up to 4096) when the
/// boundary-margin rule rejects the initial sampling.
pub fn brouwer_degree_refining(
    f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    region: &BoxRegion,
    p: &[f64],
    samples_per_edge: usize,
) -> Result<DegreeReport> {
    let mut n = samples_per_edge.max(64);
    loop {
        match brouwer_degree(f, region, p, n) {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityFit {
    pub sigma: f64,
    pub l: u32,
    pub violated: bool,
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
}

/// Fits (sigma, L) of the weak-convexity lower bound over sample pairs.
/// L runs over the integer grid {1..l_max}; among exponents attaining the
/// best min-pair quotient the largest L wins (the map's own scaling exponent;
/// coarse samples can tie lower L values, cf. |dw| = |dxi|^L on symmetric
/// pairs). `violated` is set when two distinct samples share omega exactly.
pub fn fit_weak_convexity(
    eval: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    samples: &[Vec<f64>],
    l_max: u32,
) -> Result<ConvexityFit> {
    if samples.len() < 2 {
        return Err(KamError::TooFewSamples(samples.len()));
    }
    let omegas: Vec<Vec<f64>> = samples.iter().map(|xi| eval(xi)).collect();
    let mut pairs: Vec<(f64, f64)> = Vec::new(); // (|domega|, |dxi|)
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let dxi: f64 = samples[i]
                .iter()
                .zip(&samples[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dxi == 0.0 {
                return Err(KamError::DuplicateSample(samples[i].clone()));
            }
            let dw: f64 = omegas[i]
                .iter()
                .zip(&omegas[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dw == 0.0 {
                return Ok(ConvexityFit {
                    sigma: 0.0,
                    l: 0,
                    violated: true,
                    witness: Some((samples[i].clone(), samples[j].clone())),
                });
            }
            pairs.push((dw, dxi));
        }
    }
    let mut best_l = 1;
    let mut best_q = f64::NEG_INFINITY;
    for l in 1..=l_max {
        let q = pairs
            .iter()
            .map(|(dw, dxi)| dw / dxi.powi(l as i32))
            .fold(f64::INFINITY, f64::min);
        if q > best_q * (1.0 + 1e-12) || (q >= best_q * (1.0 - 1e-12) && l > best_l) {
            best_q = q;
            best_l = l;
        }
    }
    Ok(ConvexityFit {
        sigma: best_q,
        l: best_l,
        violated: false,
        witness: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 0.618_033_988_749_894_9; // (sqrt(5)-1)/2

    #[test]
    fn resonant_pair_has_zero_margin() {
        let dp = DiophantineParams::new(0.1, 2.0, 2).unwrap();
        let rep = check_diophantine(&[1.0, 1.0], &dp, 5);
        assert!(!rep.ok);
        assert_eq!(rep.margin, 0.0);
        assert_eq!(rep.worst_k, vec![1, -1]);
    }

    #[test]
    fn golden_margin_matches_brute_force() {
        let omega = [1.0, GOLDEN];
        let tau = 2.0;
        // independent oracle: plain double loop over the full lattice ball
        let k_max = 50i32;
        let mut oracle = f64::INFINITY;
        for k1 in -k_max..=k_max {
            for k2 in -k_max..=k_max {
                let ord = k1.abs() + k2.abs();
                if ord == 0 || ord > k_max {
                    continue;
                }
                let v = (k1 as f64 * omega[0] + k2 as f64 * omega[1]).abs()
                    * (ord as f64).powf(tau);
                oracle = oracle.min(v);
            }
        }
        let dp = DiophantineParams::new(oracle / 2.0, tau, 2).unwrap();
        let rep = check_diophantine(&omega, &dp, 50);
        assert!((rep.margin - oracle).abs() < 1e-14);
        assert!(rep.ok, "gamma = margin/2 must pass");
    }

    #[test]
    fn one_dimensional_margin() {
        let dp = DiophantineParams::new(0.5, 1.0, 1).unwrap();
        let rep = check_diophantine(&[1.0], &dp, 10);
        assert_eq!(rep.margin, 1.0);
        assert_eq!(rep.worst_k, vec![1]);
        assert!(rep.ok);
    }

    #[test]
    fn margin_is_monotone_in_k() {
        let dp = DiophantineParams::new(0.01, 2.0, 2).unwrap();
        let omega = [1.0, GOLDEN];
        let mut last = f64::INFINITY;
        for k in [5u32, 10, 20, 40, 80] {
            let rep = check_diophantine(&omega, &dp, k);
            assert!(rep.margin <= last + 1e-15);
            last = rep.margin;
        }
    }

    #[test]
    fn degree_identity_and_constant() {
        let b = BoxRegion::cube(&[0.0, 0.0], 1.0);
        let id = |q: &[f64]| q.to_vec();
        let rep = brouwer_degree(&id, &b, &[0.0, 0.0], 64).unwrap();
        assert_eq!(rep.deg, 1);

        let cst = |_: &[f64]| vec![5.0, 5.0];
        let rep = brouwer_degree(&cst, &b, &[0.0, 0.0], 64).unwrap();
        assert_eq!(rep.deg, 0);
    }

    #[test]
    fn degree_of_cubic_radial_map() {
        // f(y) = y |y|^2 on [-1,1]^2 at 0: odd boundary map, degree 1.
        let b = BoxRegion::cube(&[0.0, 0.0], 1.0);
        let f = |q: &[f64]| {
            let r2 = q[0] * q[0] + q[1] * q[1];
            vec![q[0] * r2, q[1] * r2]
        };
        let rep = brouwer_degree(&f, &b, &[0.0, 0.0], 256).unwrap();
        assert_eq!(rep.deg, 1);
        assert_eq!(rep.deg % 2, 1, "odd map must have odd degree");
    }

    #[test]
    fn degree_one_dimensional() {
        let b = BoxRegion::new(vec![0.0], vec![1.0]);
        let f = |q: &[f64]| vec![q[0] - 0.3];
        let rep = brouwer_degree(&f, &b, &[0.0], 2).unwrap();
        assert_eq!(rep.deg, 1);

        let g = |q: &[f64]| vec![q[0] * q[0] + 0.1];
        let b = BoxRegion::new(vec![-1.0], vec![1.0]);
        let rep = brouwer_degree(&g, &b, &[0.0], 2).unwrap();
        assert_eq!(rep.deg, 0);
    }

    #[test]
    fn degree_rejects_target_on_boundary_image() {
        let b = BoxRegion::cube(&[0.0, 0.0], 1.0);
        let id = |q: &[f64]| q.to_vec();
        assert!(matches!(
            brouwer_degree(&id, &b, &[1.0, 0.0], 64),
            Err(KamError::BoundaryTooClose { .. })
        ));
    }

    #[test]
    fn degree_unsupported_dimension() {
        let b = BoxRegion::cube(&[0.0, 0.0, 0.0], 1.0);
        let f = |q: &[f64]| q.to_vec();
        assert!(matches!(
            brouwer_degree(&f, &b, &[0.0, 0.0, 0.0], 8),
            Err(KamError::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn degree_homotopy_invariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let b = BoxRegion::cube(&[0.0, 0.0], 1.0);
        for _ in 0..5 {
            let (a1, a2, a3): (f64, f64, f64) = (
                rng.gen_range(0.5..1.5),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(0.5..1.5),
            );
            let f = move |q: &[f64]| vec![a1 * q[0] + a2 * q[1] * q[1], a3 * q[1] - a2 * q[0]];
            let base = brouwer_degree(&f, &b, &[0.0, 0.0], 256).unwrap();
            // perturbation well inside the boundary margin
            let amp = base.boundary_margin / 4.0;
            for t in [0.0, 0.5, 1.0] {
                let g = move |q: &[f64]| {
                    let v = f(q);
                    vec![
                        v[0] + t * amp * (q[0] * q[1]).sin(),
                        v[1] + t * amp * (q[0] - q[1]).cos() * 0.5,
                    ]
                };
                let rep = brouwer_degree(&g, &b, &[0.0, 0.0], 256).unwrap();
                assert_eq!(rep.deg, base.deg);
            }
        }
    }

    #[test]
    fn convexity_linear_map() {
        let eval = |xi: &[f64]| xi.to_vec();
        let samples = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let fit = fit_weak_convexity(&eval, &samples, 5).unwrap();
        assert!(!fit.violated);
        assert_eq!(fit.l, 1);
        assert!((fit.sigma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn convexity_detects_plateau() {
        let eval = |xi: &[f64]| {
            let x = xi[0];
            if x.abs() <= 0.5 {
                vec![2.0]
            } else {
                vec![2.0 + (x - 0.5 * x.signum())]
            }
        };
        let samples = vec![vec![-0.4], vec![0.0], vec![0.4]];
        let fit = fit_weak_convexity(&eval, &samples, 5).unwrap();
        assert!(fit.violated);
        assert!(fit.witness.is_some());
    }

    #[test]
    fn convexity_cubic_map_fits_l3() {
        let eval = |xi: &[f64]| vec![xi[0] * xi[0].abs().powi(2)];
        let samples = vec![vec![-1.0], vec![-0.5], vec![0.5], vec![1.0]];
        let fit = fit_weak_convexity(&eval, &samples, 6).unwrap();
        assert!(!fit.violated);
        assert_eq!(fit.l, 3);
        // min-pair quotient at L=3: the symmetric pairs give exactly 1/4
        assert!((fit.sigma - 0.25).abs() < 1e-12);
    }

    #[test]
    fn convexity_never_misses_exact_equality() {
        let eval = |xi: &[f64]| vec![xi[0] * xi[0]]; // even: omega(-a) = omega(a)
        let samples = vec![vec![-0.7], vec![0.7]];
        let fit = fit_weak_convexity(&eval, &samples, 4).unwrap();
        assert!(fit.violated);
    }
}
