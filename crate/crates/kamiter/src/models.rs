//! The concrete systems of the study as constructible Hamiltonian families:
//! the degenerate polynomial model (converges), its odd-power counterpart
//! (no frequency-preserving solution), the 1-D direct-computation cases, and
//! the plateau counterexample with a discontinuous parameter selection.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assumptions::{brouwer_degree_refining, BoxRegion, DegreeReport, FrequencyMap};
use crate::error::{KamError, Result};
use crate::kam::core::NormalForm;
use crate::series::{Domain, FourierTaylorSeries};

pub const GOLDEN_RATIO_CONJUGATE: f64 = 0.618_033_988_749_894_9; // (sqrt(5)-1)/2

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationRoute {
    /// Recenter the action variable (the analytic, degenerate-h route).
    Action,
    /// Move the external parameter over the grid (the family route).
    Parameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Iterative,
    /// 1-D cases solved by direct computation of g'(y) = -eps P'(y).
    DirectOneDim { case: u8, ell: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeTag {
    Converges,
    TwoTori,
    Destroyed,
    NoSolution,
    DiscontinuousParameter,
}

type SeriesBuilder = Arc<dyn Fn(&[f64], u32) -> FourierTaylorSeries + Send + Sync>;
type PerturbationBuilder = Arc<dyn Fn(&[f64], f64, u32) -> FourierTaylorSeries + Send + Sync>;
type EnergyBuilder = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A parameterized family H(y,x,xi,eps) = e(xi) + <omega(xi),y> + hbar(y,xi)
/// + eps P(y,x,xi), packaged with its frequency map and known constants.
#[derive(Clone)]
pub struct HamiltonianFamily {
    pub name: String,
    pub dim: usize,
    pub route: TranslationRoute,
    pub kind: ModelKind,
    pub param_box: BoxRegion,
    pub xi0: Vec<f64>,
    pub freq: FrequencyMap,
    pub base_domain: Domain,
    pub known_l: Option<u32>,
    pub known_degree: Option<i32>,
    pub expected: OutcomeTag,
    /// The Diophantine target omega(xi0).
    pub omega_ref: Vec<f64>,
    hbar_builder: SeriesBuilder,
    e_builder: EnergyBuilder,
    perturbation_builder: PerturbationBuilder,
}

impl std::fmt::Debug for HamiltonianFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HamiltonianFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("route", &self.route)
            .field("expected", &self.expected)
            .finish()
    }
}

impl HamiltonianFamily {
    pub fn hbar_at(&self, xi: &[f64], taylor_cutoff: u32) -> FourierTaylorSeries {
        (self.hbar_builder)(xi, taylor_cutoff)
    }

    pub fn energy_at(&self, xi: &[f64]) -> f64 {
        (self.e_builder)(xi)
    }

    pub fn perturbation_at(&self, xi: &[f64], eps: f64, taylor_cutoff: u32) -> FourierTaylorSeries {
        (self.perturbation_builder)(xi, eps, taylor_cutoff)
    }

    /// Normal form and perturbation of the node's Hamiltonian expanded at xi.
    /// The drift field is left for the caller (it depends on the run's target
    /// frequency).
    pub fn initial_hamiltonian(
        &self,
        xi: &[f64],
        eps: f64,
        taylor_cutoff: u32,
    ) -> (NormalForm, FourierTaylorSeries) {
        let hbar = self.hbar_at(xi, taylor_cutoff);
        let nf = NormalForm::new(self.energy_at(xi), self.omega_ref.clone(), hbar)
            .expect("model builders produce valid normal forms");
        (nf, self.perturbation_at(xi, eps, taylor_cutoff))
    }

    /// Shortest distance from xi0 to the parameter-box boundary.
    pub fn interior_radius(&self) -> f64 {
        self.xi0
            .iter()
            .zip(self.param_box.lo.iter().zip(&self.param_box.hi))
            .map(|(x, (lo, hi))| (x - lo).min(hi - x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Brouwer degree of omega(.) - omega(xi0) on a default box around xi0,
    /// the computational form of (A0).
    pub fn degree_at_default_box(&self, samples_per_edge: usize) -> Result<DegreeReport> {
        let radius = 0.95 * self.interior_radius();
        let region = BoxRegion::cube(&self.xi0, radius);
        let f = |xi: &[f64]| self.freq.omega(xi);
        brouwer_degree_refining(&f, &region, &self.omega_ref, samples_per_edge)
    }

    /// Distinct axis samples around xi0 for the weak-convexity fit.
    pub fn convexity_samples(&self) -> Vec<Vec<f64>> {
        let radius = 0.9 * self.interior_radius();
        let mut out = Vec::new();
        for axis in 0..self.dim {
            for t in [-1.0, -0.5, -0.1667, 0.1667, 0.5, 1.0] {
                let mut xi = self.xi0.clone();
                xi[axis] += t * radius;
                out.push(xi);
            }
        }
        out
    }
}

/// Multinomial expansion of |y|^{2(p)} / scale, i.e. (sum y_i^2)^p / scale.
fn radial_power_series(dim: usize, p: u32, scale: f64, taylor_cutoff: u32) -> FourierTaylorSeries {
    fn fill(
        out: &mut FourierTaylorSeries,
        dim: usize,
        axis: usize,
        left: u32,
        partial: &mut Vec<u32>,
        coeff: f64,
        scale: f64,
    ) {
        if axis == dim - 1 {
            partial[axis] = left;
            let mut c = coeff;
            // multinomial p! / prod a_i! accumulated incrementally: finish
            // with the last bin (factor 1)
            c /= (1..=left).map(f64::from).product::<f64>();
            let iota: Vec<u32> = partial.iter().map(|a| 2 * a).collect();
            out.insert(vec![0; dim], iota, Complex64::new(c / scale, 0.0));
            partial[axis] = 0;
            return;
        }
        for a in 0..=left {
            partial[axis] = a;
            let c = coeff / (1..=a).map(f64::from).product::<f64>();
            fill(out, dim, axis + 1, left - a, partial, c, scale);
        }
        partial[axis] = 0;
    }
    let mut out = FourierTaylorSeries::zero(dim, taylor_cutoff, 0);
    let p_fact: f64 = (1..=p).map(f64::from).product();
    let mut partial = vec![0u32; dim];
    fill(&mut out, dim, 0, p, &mut partial, p_fact, scale);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

/// h(y) = <omega,y> + |y|^{2l+2}/(2l+2): the degenerate model whose frequency
/// map omega(xi) = omega + xi |xi|^{2l} is odd with degree 1 and scaling
/// exponent L = 2l+1. Perturbation: eps cos x_1.
pub fn make_pro2(l: u32, omega: Vec<f64>) -> HamiltonianFamily {
    let dim = omega.len();
    let param_box = BoxRegion::cube(&vec![0.0; dim], 1.0);
    let omega_for_freq = omega.clone();
    let freq = FrequencyMap::new(
        param_box.clone(),
        Arc::new(move |xi: &[f64]| {
            let r2l = norm2(xi).powi(l as i32);
            omega_for_freq
                .iter()
                .zip(xi)
                .map(|(w, x)| w + x * r2l)
                .collect()
        }),
        0.5,
    );
    let scale = (2 * l + 2) as f64;
    let hbar_builder: SeriesBuilder = Arc::new(move |xi: &[f64], m: u32| {
        let poly = radial_power_series(xi.len(), l + 1, scale, m);
        if xi.iter().all(|v| *v == 0.0) {
            poly
        } else {
            poly.recenter(xi)
                .partition_by(|key| key.taylor_degree() >= 2)
                .0
        }
    });
    let omega_for_e = omega.clone();
    let e_builder: EnergyBuilder = Arc::new(move |xi: &[f64]| {
        dot(&omega_for_e, xi) + norm2(xi).powi(l as i32 + 1) / scale
    });
    let perturbation_builder: PerturbationBuilder = Arc::new(move |xi: &[f64], eps: f64, m: u32| {
        FourierTaylorSeries::cosine(xi.len(), m, 1, 0, eps)
    });
    HamiltonianFamily {
        name: format!("pro2(l={l})"),
        dim,
        route: TranslationRoute::Action,
        kind: ModelKind::Iterative,
        param_box,
        xi0: vec![0.0; dim],
        freq,
        base_domain: Domain::new(0.5, 0.5).unwrap(),
        known_l: Some(2 * l + 1),
        known_degree: Some(1),
        expected: OutcomeTag::Converges,
        omega_ref: omega,
        hbar_builder,
        e_builder,
        perturbation_builder,
    }
}

/// h(y) = omega y + y^{2l+1}/(2l+1) in one dimension: h'' vanishes at 0 and
/// the even gradient has Brouwer degree 0, so frequency preservation fails
/// (y^{2l} + eps = 0 has no real solution for eps > 0). Perturbation eps*y.
pub fn make_cor1(ell: u32) -> HamiltonianFamily {
    let omega = 1.0f64;
    let param_box = BoxRegion::new(vec![-1.0], vec![1.0]);
    let freq = FrequencyMap::new(
        param_box.clone(),
        Arc::new(move |xi: &[f64]| vec![omega + xi[0].powi(2 * ell as i32)]),
        0.5,
    );
    let hbar_builder: SeriesBuilder = Arc::new(move |xi: &[f64], m: u32| {
        let deg = 2 * ell + 1;
        let poly = FourierTaylorSeries::monomial(1, m, 0, &[deg], 1.0 / deg as f64);
        if xi[0] == 0.0 {
            poly
        } else {
            poly.recenter(xi)
                .partition_by(|key| key.taylor_degree() >= 2)
                .0
        }
    });
    let e_builder: EnergyBuilder = Arc::new(move |xi: &[f64]| {
        omega * xi[0] + xi[0].powi(2 * ell as i32 + 1) / (2 * ell + 1) as f64
    });
    let perturbation_builder: PerturbationBuilder = Arc::new(|xi: &[f64], eps: f64, m: u32| {
        FourierTaylorSeries::monomial(xi.len(), m, 1, &[1], eps)
    });
    HamiltonianFamily {
        name: format!("cor1(ell={ell})"),
        dim: 1,
        route: TranslationRoute::Action,
        kind: ModelKind::Iterative,
        param_box,
        xi0: vec![0.0],
        freq,
        base_domain: Domain::new(0.5, 0.5).unwrap(),
        known_l: Some(2 * ell),
        known_degree: Some(0),
        expected: OutcomeTag::NoSolution,
        omega_ref: vec![omega],
        hbar_builder,
        e_builder,
        perturbation_builder,
    }
}

/// 1-D direct-computation families: h(y) = omega y + g(y), eps P(y) = eps y.
/// Case 1: g(y) = y^{2l+1}/(2l+1) (two tori for eps < 0, destroyed for
/// eps > 0); case 2: g(y) = y^{2l+2}/(2l+2) (a single torus for any small eps).
pub fn make_th3(case: u8, ell: u32) -> HamiltonianFamily {
    assert!(case == 1 || case == 2);
    let omega = 1.0f64;
    let param_box = BoxRegion::new(vec![-1.0], vec![1.0]);
    let gpow = if case == 1 { 2 * ell + 1 } else { 2 * ell + 2 };
    let freq = FrequencyMap::new(
        param_box.clone(),
        Arc::new(move |xi: &[f64]| vec![omega + xi[0].powi(gpow as i32 - 1)]),
        0.5,
    );
    let hbar_builder: SeriesBuilder = Arc::new(move |xi: &[f64], m: u32| {
        let poly = FourierTaylorSeries::monomial(1, m, 0, &[gpow], 1.0 / gpow as f64);
        if xi[0] == 0.0 {
            poly
        } else {
            poly.recenter(xi)
                .partition_by(|key| key.taylor_degree() >= 2)
                .0
        }
    });
    let e_builder: EnergyBuilder =
        Arc::new(move |xi: &[f64]| omega * xi[0] + xi[0].powi(gpow as i32) / gpow as f64);
    let perturbation_builder: PerturbationBuilder = Arc::new(|xi: &[f64], eps: f64, m: u32| {
        FourierTaylorSeries::monomial(xi.len(), m, 1, &[1], eps)
    });
    HamiltonianFamily {
        name: format!("th3_case{case}(ell={ell})"),
        dim: 1,
        route: TranslationRoute::Action,
        kind: ModelKind::DirectOneDim { case, ell },
        param_box,
        xi0: vec![0.0],
        freq,
        base_domain: Domain::new(0.5, 0.5).unwrap(),
        known_l: Some(gpow - 1),
        known_degree: Some(if case == 1 { 0 } else { 1 }),
        expected: if case == 1 {
            OutcomeTag::TwoTori
        } else {
            OutcomeTag::Converges
        },
        omega_ref: vec![omega],
        hbar_builder,
        e_builder,
        perturbation_builder,
    }
}

/// P0(eps) = eps^ell sin(1/eps) for eps != 0, the oscillating drift of the
/// plateau counterexample.
pub fn pro1_p0(eps: f64, ell: u32) -> f64 {
    if eps == 0.0 {
        0.0
    } else {
        eps.powi(ell as i32) * (1.0 / eps).sin()
    }
}

/// Piecewise frequency component with a C-infinity plateau on [-1/2, 1/2].
pub fn pro1_omega2(xi2: f64, omega_bar2: f64) -> f64 {
    if xi2 < -0.5 {
        omega_bar2 + (-1.0 / ((xi2 + 0.5) * (xi2 + 0.5))).exp()
    } else if xi2 <= 0.5 {
        omega_bar2
    } else {
        omega_bar2 - (-1.0 / ((xi2 - 0.5) * (xi2 - 0.5))).exp()
    }
}

/// The counterexample family: omega_1 = w1 + xi_1, omega_2 has the plateau,
/// eps P = P0(eps) y_2. Weak convexity fails on the plateau and the solved
/// parameter alternates between the outer branches as eps -> 0+.
pub fn make_pro1(ell: u32) -> HamiltonianFamily {
    let omega_bar = vec![1.0, GOLDEN_RATIO_CONJUGATE];
    let param_box = BoxRegion::cube(&[0.0, 0.0], 1.0);
    let wb = omega_bar.clone();
    let freq = FrequencyMap::new(
        param_box.clone(),
        Arc::new(move |xi: &[f64]| vec![wb[0] + xi[0], pro1_omega2(xi[1], wb[1])]),
        0.5,
    );
    let hbar_builder: SeriesBuilder =
        Arc::new(|xi: &[f64], m: u32| FourierTaylorSeries::zero(xi.len(), m, 0));
    let e_builder: EnergyBuilder = Arc::new(|_: &[f64]| 0.0);
    let perturbation_builder: PerturbationBuilder = Arc::new(move |xi: &[f64], eps: f64, m: u32| {
        FourierTaylorSeries::monomial(xi.len(), m, 1, &[0, 1], pro1_p0(eps, ell))
    });
    HamiltonianFamily {
        name: format!("pro1(ell={ell})"),
        dim: 2,
        route: TranslationRoute::Parameter,
        kind: ModelKind::Iterative,
        param_box,
        xi0: vec![0.0, 0.0],
        freq,
        base_domain: Domain::new(0.5, 0.5).unwrap(),
        known_l: None,
        known_degree: Some(-1),
        expected: OutcomeTag::DiscontinuousParameter,
        omega_ref: omega_bar,
        hbar_builder,
        e_builder,
        perturbation_builder,
    }
}

/// Direct solve of g'(y) + eps P'(y) = 0 (P' = 1) on [-1, 1]: sign-change
/// scan plus bisection. Case 1 expects two roots for eps < 0 and none for
/// eps > 0; case 2 exactly one.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectOutcome {
    TwoTori(f64, f64),
    Single(f64),
    NoRealRoot,
}

pub fn th3_direct(case: u8, ell: u32, eps: f64) -> Result<DirectOutcome> {
    let gpow = if case == 1 { 2 * ell as i32 } else { 2 * ell as i32 + 1 };
    let f = |y: f64| y.powi(gpow) + eps;
    let cells = 4096;
    let mut roots = Vec::new();
    let mut prev_y = -1.0f64;
    let mut prev_f = f(prev_y);
    for i in 1..=cells {
        let y = -1.0 + 2.0 * i as f64 / cells as f64;
        let fy = f(y);
        if prev_f == 0.0 {
            roots.push(prev_y);
        } else if prev_f * fy < 0.0 {
            let (mut a, mut b, mut fa) = (prev_y, y, prev_f);
            while b - a > 1e-14 {
                let mid = 0.5 * (a + b);
                let fm = f(mid);
                if fm == 0.0 {
                    a = mid;
                    b = mid;
                } else if fm * fa > 0.0 {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_y = y;
        prev_f = fy;
    }
    match (case, roots.len()) {
        (1, 0) => Ok(DirectOutcome::NoRealRoot),
        (1, 2) => Ok(DirectOutcome::TwoTori(roots[0], roots[1])),
        (2, 1) => Ok(DirectOutcome::Single(roots[0])),
        (1, 1) => Ok(DirectOutcome::Single(roots[0])), // eps = 0 double root
        _ => Err(KamError::AssumptionViolated {
            name: "th3".into(),
            detail: format!("unexpected root count {} for case {case}", roots.len()),
        }),
    }
}

/// JSON schema for user-supplied models.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModelSpec {
    pub dim: usize,
    pub omega: Vec<f64>,
    #[serde(default)]
    pub hbar_terms: Vec<CustomHbarTerm>,
    #[serde(default)]
    pub perturbation_terms: Vec<CustomPerturbationTerm>,
    #[serde(default = "default_half")]
    pub s: f64,
    #[serde(default = "default_half")]
    pub r: f64,
}

fn default_half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomHbarTerm {
    pub iota: Vec<u32>,
    pub coeff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomPerturbationTerm {
    pub k: Vec<i32>,
    pub iota: Vec<u32>,
    pub re: f64,
    pub im: f64,
}

pub fn make_custom(spec: &CustomModelSpec) -> Result<HamiltonianFamily> {
    let dim = spec.dim;
    if spec.omega.len() != dim {
        return Err(KamError::ConfigError {
            path: "custom.omega".into(),
            reason: format!("expected {dim} components, got {}", spec.omega.len()),
        });
    }
    let max_deg = spec
        .hbar_terms
        .iter()
        .map(|t| t.iota.iter().sum::<u32>())
        .max()
        .unwrap_or(0)
        .max(8);
    let hbar_terms = spec.hbar_terms.clone();
    let hbar_proto = {
        let mut s = FourierTaylorSeries::zero(dim, max_deg, 0);
        for t in &hbar_terms {
            if t.iota.iter().sum::<u32>() < 2 {
                return Err(KamError::ConfigError {
                    path: "custom.hbar_terms".into(),
                    reason: "hbar terms must have Taylor degree >= 2".into(),
                });
            }
            s.insert(vec![0; dim], t.iota.clone(), Complex64::new(t.coeff, 0.0));
        }
        s
    };
    let grads: Vec<FourierTaylorSeries> = (0..dim).map(|i| hbar_proto.partial_y(i)).collect();
    let param_box = BoxRegion::cube(&vec![0.0; dim], 1.0);
    let omega0 = spec.omega.clone();
    let omega_for_freq = spec.omega.clone();
    let freq = FrequencyMap::new(
        param_box.clone(),
        Arc::new(move |xi: &[f64]| {
            let zeros = vec![0.0; xi.len()];
            omega_for_freq
                .iter()
                .zip(&grads)
                .map(|(w, g)| w + g.evaluate_real(xi, &zeros).re)
                .collect()
        }),
        0.5,
    );
    let hb = hbar_proto.clone();
    let hbar_builder: SeriesBuilder = Arc::new(move |xi: &[f64], m: u32| {
        let p = hb.with_cutoffs(0, m);
        if xi.iter().all(|v| *v == 0.0) {
            p
        } else {
            p.recenter(xi).partition_by(|key| key.taylor_degree() >= 2).0
        }
    });
    let hb_e = hbar_proto.clone();
    let omega_for_e = spec.omega.clone();
    let e_builder: EnergyBuilder = Arc::new(move |xi: &[f64]| {
        let zeros = vec![0.0; xi.len()];
        dot(&omega_for_e, xi) + hb_e.evaluate_real(xi, &zeros).re
    });
    let p_terms = spec.perturbation_terms.clone();
    let perturbation_builder: PerturbationBuilder =
        Arc::new(move |xi: &[f64], eps: f64, m: u32| {
            let kcut = p_terms
                .iter()
                .map(|t| t.k.iter().map(|v| v.unsigned_abs()).sum::<u32>())
                .max()
                .unwrap_or(1)
                .max(1);
            let mut s = FourierTaylorSeries::zero(xi.len(), m, kcut);
            for t in &p_terms {
                s.insert(
                    t.k.clone(),
                    t.iota.clone(),
                    Complex64::new(eps * t.re, eps * t.im),
                );
            }
            s
        });
    Ok(HamiltonianFamily {
        name: "custom".into(),
        dim,
        route: TranslationRoute::Action,
        kind: ModelKind::Iterative,
        param_box,
        xi0: vec![0.0; dim],
        freq,
        base_domain: Domain::new(spec.s, spec.r)?,
        known_l: None,
        known_degree: None,
        expected: OutcomeTag::Converges,
        omega_ref: omega0,
        hbar_builder,
        e_builder,
        perturbation_builder,
    })
}

/// Model-specific parameters from the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub l: u32,
    pub ell: u32,
    pub dim: usize,
    pub omega: Option<Vec<f64>>,
    pub custom_spec: Option<String>,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            l: 1,
            ell: 1,
            dim: 2,
            omega: None,
            custom_spec: None,
        }
    }
}

pub const MODEL_NAMES: [&str; 6] = ["pro2", "th3_case1", "th3_case2", "pro1", "cor1", "custom"];

/// Registry by name.
pub fn build_model(name: &str, params: &ModelParams) -> Result<HamiltonianFamily> {
    match name {
        "pro2" => {
            let omega = params.omega.clone().unwrap_or_else(|| {
                let mut w = vec![1.0, GOLDEN_RATIO_CONJUGATE, 1.324_717_957_244_746];
                w.truncate(params.dim.clamp(1, 3));
                w
            });
            Ok(make_pro2(params.l, omega))
        }
        "th3_case1" => Ok(make_th3(1, params.ell)),
        "th3_case2" => Ok(make_th3(2, params.ell)),
        "pro1" => Ok(make_pro1(params.ell)),
        "cor1" => Ok(make_cor1(params.ell)),
        "custom" => {
            let text = params.custom_spec.as_ref().ok_or(KamError::ConfigError {
                path: "model_params.custom_spec".into(),
                reason: "custom model requires an inline JSON spec".into(),
            })?;
            let spec: CustomModelSpec =
                serde_json::from_str(text).map_err(|e| KamError::ConfigError {
                    path: "model_params.custom_spec".into(),
                    reason: e.to_string(),
                })?;
            make_custom(&spec)
        }
        other => Err(KamError::UnknownModel(other.to_string())),
    }
}
