//! One KAM cycle's transformations at a fixed parameter value: truncation,
//! homological-equation solve with y-dependent small divisors, Lie-series
//! composition with the time-1 flow of the generator, normal-form extraction,
//! and the action-translation variant.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assumptions::DiophantineParams;
use crate::error::{KamError, Result};
use crate::parallel;
use crate::series::{Domain, FourierTaylorSeries, SeriesKey};

/// Integrable part e + <omega0 + drift, y> + hbar(y). `omega0` is the fixed
/// Diophantine target; `drift` holds the accumulated linear coefficients
/// (residual after each translation), and `hbar` has only k = 0 keys of
/// Taylor degree >= 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalForm {
    pub e: f64,
    pub omega0: Vec<f64>,
    pub hbar: FourierTaylorSeries,
    pub drift: Vec<f64>,
}

impl NormalForm {
    pub fn new(e: f64, omega0: Vec<f64>, hbar: FourierTaylorSeries) -> Result<Self> {
        let dim = omega0.len();
        if hbar.dim() != dim {
            return Err(KamError::DimensionMismatch(hbar.dim(), dim));
        }
        for (key, _) in hbar.terms() {
            if key.fourier_order() != 0 || key.taylor_degree() < 2 {
                return Err(KamError::AssumptionViolated {
                    name: "normal form".into(),
                    detail: format!(
                        "hbar must have k = 0 and |iota| >= 2; found k={:?}, iota={:?}",
                        key.k, key.iota
                    ),
                });
            }
        }
        Ok(NormalForm {
            e,
            omega0,
            hbar,
            drift: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.omega0.len()
    }

    /// omega0 + drift, the actual linear-in-y coefficient.
    pub fn linear_total(&self) -> Vec<f64> {
        self.omega0.iter().zip(&self.drift).map(|(a, b)| a + b).collect()
    }

    /// The normal form as a series at the given cutoffs.
    pub fn as_series(&self, fourier_cutoff: u32, taylor_cutoff: u32) -> FourierTaylorSeries {
        let dim = self.dim();
        let mut s = FourierTaylorSeries::constant(dim, taylor_cutoff, fourier_cutoff, self.e);
        s = s
            .add(&FourierTaylorSeries::linear_form(
                taylor_cutoff,
                fourier_cutoff,
                &self.linear_total(),
            ))
            .expect("same dim");
        s.add(&self.hbar.with_cutoffs(fourier_cutoff, taylor_cutoff))
            .expect("same dim")
    }
}

/// Generator of the canonical transformation: zero angle-average, Fourier
/// orders in [1, K+], Taylor degrees <= m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub series: FourierTaylorSeries,
}

impl Generator {
    pub fn new(series: FourierTaylorSeries) -> Result<Self> {
        if !series.angle_average().is_empty() {
            return Err(KamError::AssumptionViolated {
                name: "generator".into(),
                detail: "angle average must vanish".into(),
            });
        }
        Ok(Generator { series })
    }

    pub fn zero(dim: usize, taylor_cutoff: u32, fourier_cutoff: u32) -> Self {
        Generator {
            series: FourierTaylorSeries::zero(dim, taylor_cutoff, fourier_cutoff),
        }
    }
}

/// Splits P into the working truncation (|k|_1 <= k_plus, |iota|_1 <= m) and
/// the exact remainder tail; R + tail = P coefficientwise.
pub fn truncate(
    p: &FourierTaylorSeries,
    k_plus: u32,
    m: u32,
) -> (FourierTaylorSeries, FourierTaylorSeries) {
    assert!(k_plus >= 1 && m >= 1);
    p.partition_by(|key| key.fourier_order() <= k_plus && key.taylor_degree() <= m)
}

/// Per-Fourier-mode data for the homological solve.
struct ModeEquation {
    k: Vec<i32>,
    rhs: FourierTaylorSeries, // y-polynomial of the mode
}

/// Solves {N, F} + R - [R] = 0 for the generator F.
///
/// For each Fourier mode k of R - [R] the coefficient equation is
/// `i <k, omega0 + d_y hbar(y)> f_k(y) = p_k(y)`; the operator is inverted by
/// the degree-m Taylor inverse of L_k about y = 0 (finite Neumann series in
/// the y-dependent part, which has valuation >= 1). Preconditions: the finite
/// Diophantine bound |<k,omega0>| > gamma/|k|^tau for every used k, and the
/// safety margin ||<k, d_y hbar>|| |k|^tau < gamma/2 that keeps the inverse
/// dominated by the constant part.
pub fn solve_homological(
    nf: &NormalForm,
    r: &FourierTaylorSeries,
    dp: &DiophantineParams,
    m: u32,
    domain: &Domain,
) -> Result<Generator> {
    let dim = nf.dim();
    let grad_hbar: Vec<FourierTaylorSeries> = (0..dim).map(|i| nf.hbar.partial_y(i)).collect();

    // group R - [R] by Fourier mode
    let mut modes: Vec<ModeEquation> = Vec::new();
    for (key, c) in r.terms() {
        if key.fourier_order() == 0 {
            continue;
        }
        let pos = modes.iter().position(|mq| mq.k == key.k);
        let idx = match pos {
            Some(i) => i,
            None => {
                modes.push(ModeEquation {
                    k: key.k.clone(),
                    rhs: FourierTaylorSeries::zero(dim, m, 0).with_prune(r.prune_threshold()),
                });
                modes.len() - 1
            }
        };
        modes[idx].rhs.insert(vec![0; dim], key.iota.clone(), *c);
    }

    let k_cut = r.fourier_cutoff();
    let solved: Vec<Result<(Vec<i32>, FourierTaylorSeries)>> =
        parallel::map_indexed(modes.len(), |mi| {
            let mq = &modes[mi];
            let order: u32 = mq.k.iter().map(|v| v.unsigned_abs()).sum();
            let k_dot_omega: f64 = mq
                .k
                .iter()
                .zip(&nf.omega0)
                .map(|(ki, wi)| *ki as f64 * wi)
                .sum();
            let bound = dp.gamma / (order as f64).powf(dp.tau);
            if k_dot_omega.abs() <= bound {
                return Err(KamError::SmallDivisorBreach {
                    k: mq.k.clone(),
                    value: k_dot_omega.abs(),
                    bound,
                });
            }

            // <k, d_y hbar>: the y-dependent part of the divisor. The gate
            // requires the correction dominated by the divisor; the gamma
            // form is its worst-case proxy, and modes whose actual divisor
            // |<k,omega0>| already dominates (Lie-tail modes far from
            // resonance) pass directly.
            let mut k_dot_grad =
                FourierTaylorSeries::zero(dim, m, 0).with_prune(nf.hbar.prune_threshold());
            for (i, g) in grad_hbar.iter().enumerate() {
                if mq.k[i] != 0 {
                    k_dot_grad = k_dot_grad.add(&g.scale(mq.k[i] as f64))?;
                }
            }
            let correction = k_dot_grad.weighted_norm(domain);
            let safety = correction * (order as f64).powf(dp.tau);
            let dominated = correction < 0.5 * k_dot_omega.abs();
            if safety >= dp.gamma / 2.0 && !dominated {
                return Err(KamError::SafetyMarginBreach {
                    k: mq.k.clone(),
                    value: safety,
                    bound: dp.gamma / 2.0,
                });
            }

            // f_k = (1/(i <k,omega0>)) sum_{j=0..m} (-u)^j p_k, u = <k,d_y hbar>/<k,omega0>
            let u = k_dot_grad.scale(1.0 / k_dot_omega);
            let mut acc = mq.rhs.clone();
            let mut power = mq.rhs.clone();
            for _ in 1..=m {
                power = power.mul_trunc(&u, 0, m)?.scale(-1.0);
                if power.is_empty() {
                    break;
                }
                acc = acc.add(&power)?;
            }
            let f_poly = acc.scale_c(Complex64::new(0.0, -1.0 / k_dot_omega)); // 1/i = -i
            Ok((mq.k.clone(), f_poly))
        });

    let mut f = FourierTaylorSeries::zero(dim, m, k_cut).with_prune(r.prune_threshold());
    for item in solved {
        let (k, poly) = item?;
        for (key, c) in poly.terms() {
            f.insert(k.clone(), key.iota.clone(), *c);
        }
    }
    Generator::new(f)
}

/// Diagnostics from the Lie composition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LieInfo {
    pub terms_used: usize,
    /// Geometric tail bound: twice the norm of the last term kept.
    pub remainder_estimate: f64,
    pub last_ratio: f64,
}

/// Composes H with the time-1 flow of the generator as the Lie series
/// `sum_j L_F^j(H)/j!` with L_F(G) = {G, F}, computed at working cutoffs
/// (k_work, m_work). Stops early once a term drops below 1e-16 ||H||; errors
/// if the term norms fail to contract by ratio 1/2 from term max_order/2 on.
pub fn lie_compose(
    h: &FourierTaylorSeries,
    f: &Generator,
    k_work: u32,
    m_work: u32,
    max_order: usize,
    domain: &Domain,
) -> Result<(FourierTaylorSeries, LieInfo)> {
    let mut composed = h.with_cutoffs(k_work, m_work);
    let mut term = composed.clone();
    let h_norm = term.weighted_norm(domain);
    let mut prev_norm = f64::INFINITY;
    let mut info = LieInfo {
        terms_used: 0,
        remainder_estimate: 0.0,
        last_ratio: 0.0,
    };
    for j in 1..=max_order {
        term = term
            .poisson_bracket(&f.series, k_work, m_work)?
            .scale(1.0 / j as f64);
        let norm = term.weighted_norm(domain);
        if j >= 2 && prev_norm > 0.0 {
            let ratio = norm / prev_norm;
            info.last_ratio = ratio;
            if j >= max_order / 2 && ratio >= 0.5 {
                return Err(KamError::LieSeriesStalled { term: j, ratio });
            }
        }
        composed = composed.add(&term)?;
        info.terms_used = j;
        info.remainder_estimate = 2.0 * norm;
        if norm == 0.0 || norm < 1e-16 * h_norm {
            break;
        }
        prev_norm = norm;
    }
    Ok((composed, info))
}

/// Splits the composed Hamiltonian into the next normal form and perturbation.
/// The full k = 0 content moves into the normal form: p00 is the constant
/// increment, p01 the linear one (the frequency drift of this step), the
/// degree >= 2 average joins hbar, and P+ = composed minus its angle average
/// (an exact coefficient partition).
pub fn extract_normal_form(
    composed: &FourierTaylorSeries,
    nf_old: &NormalForm,
) -> Result<(NormalForm, FourierTaylorSeries, f64, Vec<f64>)> {
    let avg = composed.angle_average();
    let e_new = avg.constant_term();
    let p00 = e_new - nf_old.e;
    let lin_new = avg.linear_coeffs();
    let lin_old = nf_old.linear_total();
    let p01: Vec<f64> = lin_new.iter().zip(&lin_old).map(|(a, b)| a - b).collect();
    let hbar_new = avg.partition_by(|key: &SeriesKey| key.taylor_degree() >= 2).0;
    let p_plus = composed.sub(&avg)?;
    let drift: Vec<f64> = nf_old.drift.iter().zip(&p01).map(|(a, b)| a + b).collect();
    let nf_new = NormalForm {
        e: e_new,
        omega0: nf_old.omega0.clone(),
        hbar: hbar_new,
        drift,
    };
    Ok((nf_new, p_plus, p00, p01))
}

/// Recentres the whole Hamiltonian about y + shift (exact polynomial
/// recentring). The constant picked up goes to e, the linear part becomes the
/// new drift (the frequency update), degrees >= 2 stay in hbar; P is
/// recentred unchanged otherwise. Requires |shift| < s/4 to stay inside the
/// analyticity domain.
pub fn translate_action(
    nf: &NormalForm,
    p: &FourierTaylorSeries,
    shift: &[f64],
    s_current: f64,
) -> Result<(NormalForm, FourierTaylorSeries)> {
    let dim = nf.dim();
    assert_eq!(shift.len(), dim);
    let shift_norm = shift.iter().map(|v| v * v).sum::<f64>().sqrt();
    if shift_norm >= s_current / 4.0 {
        return Err(KamError::ShiftTooLarge {
            shift: shift_norm,
            bound: s_current / 4.0,
        });
    }
    if shift_norm == 0.0 {
        return Ok((nf.clone(), p.clone()));
    }
    // A(y) = <drift, y> + hbar(y): everything beyond e + <omega0, y>
    let a = FourierTaylorSeries::linear_form(nf.hbar.taylor_cutoff(), nf.hbar.fourier_cutoff(), &nf.drift)
        .add(&nf.hbar)?;
    let a_shifted = a.recenter(shift);
    let e_new = nf.e + a_shifted.constant_term();
    let drift_new = a_shifted.linear_coeffs();
    let hbar_new = a_shifted.partition_by(|key: &SeriesKey| key.taylor_degree() >= 2).0;
    let p_new = p.recenter(shift);
    Ok((
        NormalForm {
            e: e_new,
            omega0: nf.omega0.clone(),
            hbar: hbar_new,
            drift: drift_new,
        },
        p_new,
    ))
}
