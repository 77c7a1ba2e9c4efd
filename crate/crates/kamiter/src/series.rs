//! Truncated Fourier-Taylor series over action variables y in C^n (Taylor part,
//! total degree <= taylor_cutoff) and angle variables x in T^n (Fourier part,
//! |k|_1 <= fourier_cutoff), with arithmetic, calculus, the Poisson bracket and
//! the weighted majorant norm.
//!
//! A series is a sparse map (k, iota) -> complex coefficient representing
//! `sum c_{k,iota} y^iota exp(i <k,x>)`. All values are immutable after
//! construction; every operation is a pure function, so series can be shared
//! freely across threads.
//!
//! The supremum norm on a complex domain is not computable from coefficients;
//! everywhere in this crate "norm" means the weighted-l1 majorant
//! `sum |c| s^{|iota|_1} e^{|k|_1 r}`, an upper bound for the sup on D(s,r).

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};

/// Coefficients with magnitude below this are dropped by all operations.
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 1e-30;

/// Complex domain D(s,r): action radius s, angle analyticity width r.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub s: f64,
    pub r: f64,
}

impl Domain {
    pub fn new(s: f64, r: f64) -> Result<Self> {
        if s > 0.0 && s <= 1.0 && r > 0.0 && r <= 1.0 {
            Ok(Domain { s, r })
        } else {
            Err(KamError::InvalidDomain { s, r })
        }
    }
}

/// Sparse key: Fourier multi-index k and Taylor multi-index iota.
/// Derived `Ord` is lexicographic in (k, iota), which fixes the
/// serialization order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub k: Vec<i32>,
    pub iota: Vec<u32>,
}

impl SeriesKey {
    pub fn fourier_order(&self) -> u32 {
        self.k.iter().map(|v| v.unsigned_abs()).sum()
    }

    pub fn taylor_degree(&self) -> u32 {
        self.iota.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct FourierTaylorSeries {
    dim: usize,
    taylor_cutoff: u32,
    fourier_cutoff: u32,
    /// Coefficients below this magnitude are dropped by all operations.
    /// Inherited through operations as the min of the operands' thresholds.
    prune: f64,
    coeffs: BTreeMap<SeriesKey, Complex64>,
}

/// Equality is structural (dimension, cutoffs, coefficients); the prune
/// threshold is an operational knob, not part of the value.
impl PartialEq for FourierTaylorSeries {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.taylor_cutoff == other.taylor_cutoff
            && self.fourier_cutoff == other.fourier_cutoff
            && self.coeffs == other.coeffs
    }
}

impl FourierTaylorSeries {
    pub fn zero(dim: usize, taylor_cutoff: u32, fourier_cutoff: u32) -> Self {
        FourierTaylorSeries {
            dim,
            taylor_cutoff,
            fourier_cutoff,
            prune: DEFAULT_PRUNE_THRESHOLD,
            coeffs: BTreeMap::new(),
        }
    }

    /// Same series with a different prune threshold (applied immediately).
    pub fn with_prune(mut self, threshold: f64) -> Self {
        self.prune = threshold;
        self.prune(threshold);
        self
    }

    pub fn prune_threshold(&self) -> f64 {
        self.prune
    }

    pub fn constant(dim: usize, taylor_cutoff: u32, fourier_cutoff: u32, value: f64) -> Self {
        let mut s = Self::zero(dim, taylor_cutoff, fourier_cutoff);
        s.insert(vec![0; dim], vec![0; dim], Complex64::new(value, 0.0));
        s
    }

    /// Single action monomial `c * y^iota`.
    pub fn monomial(
        dim: usize,
        taylor_cutoff: u32,
        fourier_cutoff: u32,
        iota: &[u32],
        c: f64,
    ) -> Self {
        let mut s = Self::zero(dim, taylor_cutoff, fourier_cutoff);
        s.insert(vec![0; dim], iota.to_vec(), Complex64::new(c, 0.0));
        s
    }

    /// Single harmonic `c * exp(i <k,x>)`.
    pub fn harmonic(
        dim: usize,
        taylor_cutoff: u32,
        fourier_cutoff: u32,
        k: &[i32],
        c: Complex64,
    ) -> Self {
        let mut s = Self::zero(dim, taylor_cutoff, fourier_cutoff);
        s.insert(k.to_vec(), vec![0; dim], c);
        s
    }

    /// `amp * cos(x_axis)` as the conjugate-symmetric pair of harmonics.
    pub fn cosine(dim: usize, taylor_cutoff: u32, fourier_cutoff: u32, axis: usize, amp: f64) -> Self {
        let mut s = Self::zero(dim, taylor_cutoff, fourier_cutoff);
        let mut kp = vec![0i32; dim];
        kp[axis] = 1;
        let mut km = vec![0i32; dim];
        km[axis] = -1;
        let h = Complex64::new(amp / 2.0, 0.0);
        s.insert(kp, vec![0; dim], h);
        s.insert(km, vec![0; dim], h);
        s
    }

    /// The linear form `<v, y>`.
    pub fn linear_form(taylor_cutoff: u32, fourier_cutoff: u32, v: &[f64]) -> Self {
        let dim = v.len();
        let mut s = Self::zero(dim, taylor_cutoff, fourier_cutoff);
        for (i, &vi) in v.iter().enumerate() {
            let mut iota = vec![0u32; dim];
            iota[i] = 1;
            s.insert(vec![0; dim], iota, Complex64::new(vi, 0.0));
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn taylor_cutoff(&self) -> u32 {
        self.taylor_cutoff
    }

    pub fn fourier_cutoff(&self) -> u32 {
        self.fourier_cutoff
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&SeriesKey, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn coeff(&self, k: &[i32], iota: &[u32]) -> Complex64 {
        self.coeffs
            .get(&SeriesKey {
                k: k.to_vec(),
                iota: iota.to_vec(),
            })
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Adds `c` onto the coefficient at (k, iota). Keys outside the cutoffs are
    /// dropped (truncation semantics); results below the prune threshold are
    /// removed.
    pub fn insert(&mut self, k: Vec<i32>, iota: Vec<u32>, c: Complex64) {
        debug_assert_eq!(k.len(), self.dim);
        debug_assert_eq!(iota.len(), self.dim);
        let key = SeriesKey { k, iota };
        if key.fourier_order() > self.fourier_cutoff || key.taylor_degree() > self.taylor_cutoff {
            return;
        }
        let entry = self.coeffs.entry(key.clone()).or_insert(Complex64::new(0.0, 0.0));
        *entry += c;
        if entry.norm() < self.prune {
            self.coeffs.remove(&key);
        }
    }

    /// Drops every coefficient with magnitude below `threshold`.
    pub fn prune(&mut self, threshold: f64) {
        self.coeffs.retain(|_, v| v.norm() >= threshold);
    }

    /// Copy re-truncated to the given cutoffs.
    pub fn with_cutoffs(&self, fourier_cutoff: u32, taylor_cutoff: u32) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(key, _)| {
                key.fourier_order() <= fourier_cutoff && key.taylor_degree() <= taylor_cutoff
            })
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        FourierTaylorSeries {
            dim: self.dim,
            taylor_cutoff,
            fourier_cutoff,
            prune: self.prune,
            coeffs,
        }
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim == other.dim {
            Ok(())
        } else {
            Err(KamError::DimensionMismatch(self.dim, other.dim))
        }
    }

    /// Coefficientwise sum; cutoffs of the result are the max of the inputs'.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut out = FourierTaylorSeries {
            dim: self.dim,
            taylor_cutoff: self.taylor_cutoff.max(other.taylor_cutoff),
            fourier_cutoff: self.fourier_cutoff.max(other.fourier_cutoff),
            prune: self.prune.min(other.prune),
            coeffs: self.coeffs.clone(),
        };
        for (key, c) in &other.coeffs {
            *out.coeffs
                .entry(key.clone())
                .or_insert(Complex64::new(0.0, 0.0)) += *c;
        }
        let thr = out.prune;
        out.prune(thr);
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for v in out.coeffs.values_mut() {
            *v = -*v;
        }
        out
    }

    pub fn scale(&self, a: f64) -> Self {
        self.scale_c(Complex64::new(a, 0.0))
    }

    pub fn scale_c(&self, a: Complex64) -> Self {
        let mut out = self.clone();
        for v in out.coeffs.values_mut() {
            *v *= a;
        }
        let thr = out.prune;
        out.prune(thr);
        out
    }

    /// Cauchy product truncated to the inputs' max cutoffs.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.mul_trunc(
            other,
            self.fourier_cutoff.max(other.fourier_cutoff),
            self.taylor_cutoff.max(other.taylor_cutoff),
        )
    }

    /// Cauchy product with caller-supplied result cutoffs.
    pub fn mul_trunc(&self, other: &Self, fourier_cutoff: u32, taylor_cutoff: u32) -> Result<Self> {
        self.check_dim(other)?;
        let dim = self.dim;
        let terms_a: Vec<(&SeriesKey, &Complex64)> = self.coeffs.iter().collect();
        let terms_b: Vec<(&SeriesKey, &Complex64)> = other.coeffs.iter().collect();

        let product_chunk = |chunk: &[(&SeriesKey, &Complex64)]| {
            let mut local: BTreeMap<SeriesKey, Complex64> = BTreeMap::new();
            for (ka, ca) in chunk {
                for (kb, cb) in &terms_b {
                    // Taylor degrees add exactly; Fourier orders can cancel in
                    // sign, so |k_a + k_b|_1 must be checked on the sum itself.
                    if ka.taylor_degree() + kb.taylor_degree() > taylor_cutoff {
                        continue;
                    }
                    let key = SeriesKey {
                        k: ka.k.iter().zip(&kb.k).map(|(a, b)| a + b).collect(),
                        iota: ka.iota.iter().zip(&kb.iota).map(|(a, b)| a + b).collect(),
                    };
                    if key.fourier_order() > fourier_cutoff {
                        continue;
                    }
                    *local.entry(key).or_insert(Complex64::new(0.0, 0.0)) += *ca * *cb;
                }
            }
            local
        };

        let merged = crate::parallel::chunked_product(
            &terms_a,
            terms_a.len() * terms_b.len(),
            product_chunk,
        );

        let mut out = FourierTaylorSeries {
            dim,
            taylor_cutoff,
            fourier_cutoff,
            prune: self.prune.min(other.prune),
            coeffs: merged,
        };
        let thr = out.prune;
        out.prune(thr);
        Ok(out)
    }

    /// d/dy_axis: key (k, iota) maps to (k, iota - e_axis) scaled by iota_axis.
    pub fn partial_y(&self, axis: usize) -> Self {
        let mut out = Self::zero(self.dim, self.taylor_cutoff, self.fourier_cutoff);
        out.prune = self.prune;
        for (key, c) in &self.coeffs {
            let e = key.iota[axis];
            if e == 0 {
                continue;
            }
            let mut iota = key.iota.clone();
            iota[axis] -= 1;
            out.insert(key.k.clone(), iota, *c * e as f64);
        }
        out
    }

    /// d/dx_axis: coefficient scaled by i * k_axis.
    pub fn partial_x(&self, axis: usize) -> Self {
        let mut out = Self::zero(self.dim, self.taylor_cutoff, self.fourier_cutoff);
        out.prune = self.prune;
        for (key, c) in &self.coeffs {
            let ka = key.k[axis];
            if ka == 0 {
                continue;
            }
            out.insert(key.k.clone(), key.iota.clone(), *c * Complex64::new(0.0, ka as f64));
        }
        out
    }

    /// Mixed partial d^{|i|}/dy^i with a Taylor multi-index i.
    pub fn partial_y_multi(&self, multi: &[u32]) -> Self {
        let mut out = self.clone();
        for (axis, &count) in multi.iter().enumerate() {
            for _ in 0..count {
                out = out.partial_y(axis);
            }
        }
        out
    }

    /// Poisson bracket {f,g} = <d_x f, d_y g> - <d_y f, d_x g>, truncated to
    /// the caller's working cutoffs. The sign convention is the one under
    /// which `{<omega,y>, exp(i<k,x>)} = -i<k,omega> exp(i<k,x>)`.
    pub fn poisson_bracket(
        &self,
        other: &Self,
        fourier_cutoff: u32,
        taylor_cutoff: u32,
    ) -> Result<Self> {
        self.check_dim(other)?;
        let mut out = Self::zero(self.dim, taylor_cutoff, fourier_cutoff);
        out.prune = self.prune.min(other.prune);
        for axis in 0..self.dim {
            let t1 = self
                .partial_x(axis)
                .mul_trunc(&other.partial_y(axis), fourier_cutoff, taylor_cutoff)?;
            let t2 = self
                .partial_y(axis)
                .mul_trunc(&other.partial_x(axis), fourier_cutoff, taylor_cutoff)?;
            out = out.add(&t1)?.sub(&t2)?;
        }
        Ok(out)
    }

    /// Keeps exactly the k = 0 coefficients.
    pub fn angle_average(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(key, _)| key.fourier_order() == 0)
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        FourierTaylorSeries {
            dim: self.dim,
            taylor_cutoff: self.taylor_cutoff,
            fourier_cutoff: self.fourier_cutoff,
            prune: self.prune,
            coeffs,
        }
    }

    /// Splits into (kept, rest) by a key predicate; exact coefficient partition.
    pub fn partition_by<F: Fn(&SeriesKey) -> bool>(&self, keep: F) -> (Self, Self) {
        let mut kept = Self::zero(self.dim, self.taylor_cutoff, self.fourier_cutoff);
        let mut rest = Self::zero(self.dim, self.taylor_cutoff, self.fourier_cutoff);
        kept.prune = self.prune;
        rest.prune = self.prune;
        for (key, c) in &self.coeffs {
            if keep(key) {
                kept.coeffs.insert(key.clone(), *c);
            } else {
                rest.coeffs.insert(key.clone(), *c);
            }
        }
        (kept, rest)
    }

    /// Restriction to Taylor degrees <= d.
    pub fn taylor_leq(&self, d: u32) -> Self {
        self.partition_by(|key| key.taylor_degree() <= d).0
    }

    /// Weighted majorant norm `sum |c| s^{|iota|} e^{|k| r}` on D(s,r);
    /// upper-bounds the sup norm there. Zero iff the series is empty.
    pub fn weighted_norm(&self, d: &Domain) -> f64 {
        self.coeffs
            .iter()
            .map(|(key, c)| {
                c.norm()
                    * d.s.powi(key.taylor_degree() as i32)
                    * (key.fourier_order() as f64 * d.r).exp()
            })
            .sum()
    }

    /// Direct summation of `sum c y^iota exp(i<k,x>)`. The caller is expected
    /// to keep |y_i| <= s and |Im x_i| <= r of the intended domain; this is
    /// not checked.
    pub fn evaluate(&self, y: &[Complex64], x: &[Complex64]) -> Complex64 {
        let i = Complex64::new(0.0, 1.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (key, c) in &self.coeffs {
            let mut term = *c;
            for (axis, &e) in key.iota.iter().enumerate() {
                if e > 0 {
                    term *= y[axis].powu(e);
                }
            }
            let mut phase = Complex64::new(0.0, 0.0);
            for (axis, &ka) in key.k.iter().enumerate() {
                if ka != 0 {
                    phase += x[axis] * ka as f64;
                }
            }
            if phase != Complex64::new(0.0, 0.0) {
                term *= (i * phase).exp();
            }
            acc += term;
        }
        acc
    }

    /// Convenience wrapper for real evaluation points.
    pub fn evaluate_real(&self, y: &[f64], x: &[f64]) -> Complex64 {
        let yc: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.evaluate(&yc, &xc)
    }

    /// The k=0, |iota|=1 coefficients as a vector (real parts).
    pub fn linear_coeffs(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (key, c) in &self.coeffs {
            if key.fourier_order() == 0 && key.taylor_degree() == 1 {
                let axis = key.iota.iter().position(|&e| e == 1).unwrap();
                v[axis] = c.re;
            }
        }
        v
    }

    /// The k=0, iota=0 coefficient (real part).
    pub fn constant_term(&self) -> f64 {
        self.coeff(&vec![0; self.dim], &vec![0; self.dim]).re
    }

    /// Largest |k|_1 actually present.
    pub fn max_fourier_order(&self) -> u32 {
        self.coeffs.keys().map(|k| k.fourier_order()).max().unwrap_or(0)
    }

    /// Largest |iota|_1 actually present.
    pub fn max_taylor_degree(&self) -> u32 {
        self.coeffs.keys().map(|k| k.taylor_degree()).max().unwrap_or(0)
    }

    /// Checks coeff(-k, iota) = conj(coeff(k, iota)) for all stored keys.
    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|(key, c)| {
            let neg: Vec<i32> = key.k.iter().map(|v| -v).collect();
            let mirror = self.coeff(&neg, &key.iota);
            (mirror - c.conj()).norm() <= tol * (1.0 + c.norm())
        })
    }

    /// Exact polynomial recentring y -> y + shift (binomial expansion; the
    /// Taylor degree never grows, so there is no truncation error).
    pub fn recenter(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.dim);
        let mut out = Self::zero(self.dim, self.taylor_cutoff, self.fourier_cutoff);
        out.prune = self.prune;
        for (key, c) in &self.coeffs {
            expand_recenter(&mut out, &key.k, &key.iota, *c, shift, 0, vec![0; self.dim]);
        }
        let thr = out.prune;
        out.prune(thr);
        out
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut acc = 1.0;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    acc
}

fn expand_recenter(
    out: &mut FourierTaylorSeries,
    k: &[i32],
    iota: &[u32],
    c: Complex64,
    shift: &[f64],
    axis: usize,
    partial: Vec<u32>,
) {
    if axis == shift.len() {
        out.insert(k.to_vec(), partial, c);
        return;
    }
    let e = iota[axis];
    for j in 0..=e {
        let w = binomial(e, j) * shift[axis].powi((e - j) as i32);
        if w == 0.0 && j != e {
            continue;
        }
        let mut next = partial.clone();
        next[axis] = j;
        expand_recenter(out, k, iota, c * w, shift, axis + 1, next);
    }
}

/// Finite-sample surrogate for the Hoelder seminorm in the parameter: the max
/// over sample pairs of `||P(xi) - P(zeta)|| / |xi - zeta|^beta`. A lower
/// bound of the true sup, reported as the "sampled C^beta seminorm".
pub fn holder_seminorm(
    family: &[(Vec<f64>, &FourierTaylorSeries)],
    beta: f64,
    d: &Domain,
) -> Result<f64> {
    if family.len() < 2 {
        return Err(KamError::TooFewSamples(family.len()));
    }
    let mut best: f64 = 0.0;
    for i in 0..family.len() {
        for j in (i + 1)..family.len() {
            let dist: f64 = family[i]
                .0
                .iter()
                .zip(&family[j].0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist == 0.0 {
                return Err(KamError::DuplicateSample(family[i].0.clone()));
            }
            let diff = family[i].1.sub(family[j].1)?;
            best = best.max(diff.weighted_norm(d) / dist.powf(beta));
        }
    }
    Ok(best)
}

/// JSON form: terms sorted lexicographically by (k, iota) for reproducible diffs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesRepr {
    pub dim: usize,
    pub taylor_cutoff: u32,
    pub fourier_cutoff: u32,
    pub terms: Vec<TermRepr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermRepr {
    pub k: Vec<i32>,
    pub iota: Vec<u32>,
    pub re: f64,
    pub im: f64,
}

impl From<&FourierTaylorSeries> for SeriesRepr {
    fn from(s: &FourierTaylorSeries) -> Self {
        SeriesRepr {
            dim: s.dim,
            taylor_cutoff: s.taylor_cutoff,
            fourier_cutoff: s.fourier_cutoff,
            terms: s
                .coeffs
                .iter()
                .map(|(key, c)| TermRepr {
                    k: key.k.clone(),
                    iota: key.iota.clone(),
                    re: c.re,
                    im: c.im,
                })
                .collect(),
        }
    }
}

impl From<&SeriesRepr> for FourierTaylorSeries {
    fn from(r: &SeriesRepr) -> Self {
        // a stored series re-materializes exactly: no term is pruned away
        let mut s =
            FourierTaylorSeries::zero(r.dim, r.taylor_cutoff, r.fourier_cutoff)
                .with_prune(f64::MIN_POSITIVE);
        for t in &r.terms {
            s.insert(t.k.clone(), t.iota.clone(), Complex64::new(t.re, t.im));
        }
        s
    }
}

impl Serialize for FourierTaylorSeries {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        SeriesRepr::from(self).serialize(ser)
    }
}

impl<'de> Deserialize<'de> for FourierTaylorSeries {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = SeriesRepr::deserialize(de)?;
        Ok(FourierTaylorSeries::from(&repr))
    }
}
