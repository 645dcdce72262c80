//! Deterministic numerical kernels shared by the rest of the crate.
//!
//! - central finite differences (gradient, Hessian, single partials) with one
//!   Richardson refinement,
//! - Gauss–Legendre and Gauss–Hermite rules, fixed and adaptive (node doubling),
//! - seeded Monte Carlo averaging on counter-split ChaCha streams,
//! - log-domain accumulation helpers for KL-type sums.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Derivative order requested from [`central_diff`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOrder {
    First,
    Second,
}

/// Output of [`central_diff`].
#[derive(Debug, Clone, PartialEq)]
pub enum Derivative {
    Gradient(DVector<f64>),
    Hessian(DMatrix<f64>),
}

impl Derivative {
    pub fn gradient(self) -> Option<DVector<f64>> {
        match self {
            Derivative::Gradient(g) => Some(g),
            Derivative::Hessian(_) => None,
        }
    }

    pub fn hessian(self) -> Option<DMatrix<f64>> {
        match self {
            Derivative::Hessian(h) => Some(h),
            Derivative::Gradient(_) => None,
        }
    }
}

/// Step-size policy for a stencil.
///
/// `cap` bounds the step per coordinate; callers use it to keep stencils
/// inside an open parameter set.
#[derive(Debug, Clone, Default)]
pub struct DiffOptions {
    pub richardson: bool,
    pub cap: Option<Vec<f64>>,
}

impl DiffOptions {
    pub fn richardson() -> Self {
        DiffOptions {
            richardson: true,
            cap: None,
        }
    }

    pub fn with_cap(mut self, cap: Vec<f64>) -> Self {
        self.cap = Some(cap);
        self
    }

    fn capped(&self, i: usize, h: f64) -> f64 {
        match &self.cap {
            Some(c) => h.min(c[i]),
            None => h,
        }
    }
}

/// cbrt(eps)·max(1, |x|): the central-difference optimum for first derivatives.
pub fn gradient_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// eps^(1/6)·max(1, |x|): balances O(h⁴) Richardson truncation against eps/h² rounding.
pub fn hessian_step(x: f64) -> f64 {
    f64::EPSILON.powf(1.0 / 6.0) * x.abs().max(1.0)
}

/// eps^(1/5)·max(1, |x|): for differentiating quantities that are themselves
/// finite-difference outputs (noise floor well above eps).
pub fn nested_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.2) * x.abs().max(1.0)
}

fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::domain(format!("non-finite stencil value {v} at {x:?}")))
    }
}

/// Central first partial along coordinate `i` with step `h`.
pub fn partial<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], i: usize, h: f64, richardson: bool) -> Result<f64> {
    let mut xp = x.to_vec();
    let one = |h: f64, xp: &mut Vec<f64>| -> Result<f64> {
        xp[i] = x[i] + h;
        let fp = eval(f, xp)?;
        xp[i] = x[i] - h;
        let fm = eval(f, xp)?;
        xp[i] = x[i];
        Ok((fp - fm) / (2.0 * h))
    };
    let d1 = one(h, &mut xp)?;
    if !richardson {
        return Ok(d1);
    }
    let d2 = one(0.5 * h, &mut xp)?;
    Ok((4.0 * d2 - d1) / 3.0)
}

/// Central-difference gradient.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], opts: &DiffOptions) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = opts.capped(i, gradient_step(x[i]));
        g[i] = partial(&f, x, i, h, opts.richardson)?;
    }
    Ok(g)
}

/// Central-difference Hessian, symmetrized by averaging.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], opts: &DiffOptions) -> Result<DMatrix<f64>> {
    let p = x.len();
    let steps: Vec<f64> = (0..p).map(|i| opts.capped(i, hessian_step(x[i]))).collect();
    let f0 = eval(&f, x)?;
    let mut xs = x.to_vec();

    let diag = |i: usize, h: f64, xs: &mut Vec<f64>| -> Result<f64> {
        xs[i] = x[i] + h;
        let fp = eval(&f, xs)?;
        xs[i] = x[i] - h;
        let fm = eval(&f, xs)?;
        xs[i] = x[i];
        Ok((fp - 2.0 * f0 + fm) / (h * h))
    };
    let mixed = |i: usize, j: usize, hi: f64, hj: f64, xs: &mut Vec<f64>| -> Result<f64> {
        let mut acc = 0.0;
        for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
            xs[i] = x[i] + si * hi;
            xs[j] = x[j] + sj * hj;
            acc += sign * eval(&f, xs)?;
        }
        xs[i] = x[i];
        xs[j] = x[j];
        Ok(acc / (4.0 * hi * hj))
    };

    let mut h = DMatrix::zeros(p, p);
    for i in 0..p {
        let d1 = diag(i, steps[i], &mut xs)?;
        h[(i, i)] = if opts.richardson {
            let d2 = diag(i, 0.5 * steps[i], &mut xs)?;
            (4.0 * d2 - d1) / 3.0
        } else {
            d1
        };
        for j in (i + 1)..p {
            let m1 = mixed(i, j, steps[i], steps[j], &mut xs)?;
            let v = if opts.richardson {
                let m2 = mixed(i, j, 0.5 * steps[i], 0.5 * steps[j], &mut xs)?;
                (4.0 * m2 - m1) / 3.0
            } else {
                m1
            };
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Gradient or Hessian of a scalar field by central differences.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], order: DiffOrder, richardson: bool) -> Result<Derivative> {
    let opts = DiffOptions { richardson, cap: None };
    match order {
        DiffOrder::First => gradient(f, x, &opts).map(Derivative::Gradient),
        DiffOrder::Second => hessian(f, x, &opts).map(Derivative::Hessian),
    }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RuleKind {
    Legendre,
    Hermite,
}

/// Where a rule's nodes live: a finite interval (Legendre) or a Gaussian
/// re-centering (Hermite, weights integrate against N(center, scale²)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RuleDomain {
    Interval { lo: f64, hi: f64 },
    Gaussian { center: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub domain: RuleDomain,
}

impl QuadratureRule {
    /// n-point Gauss–Legendre rule on [-1, 1].
    pub fn legendre(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        QuadratureRule {
            kind: RuleKind::Legendre,
            nodes,
            weights,
            domain: RuleDomain::Interval { lo: -1.0, hi: 1.0 },
        }
    }

    /// n-point Gauss–Hermite rule for the standard normal weight: Σ wᵢ = 1 and
    /// Σ wᵢ f(zᵢ) ≈ ∫ φ(z) f(z) dz.
    pub fn hermite(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        // Physicists' rule (weight e^{-x²}) by Newton on orthonormal Hermite
        // polynomials, then rescaled.
        const PIM4: f64 = 0.751_125_544_464_942_5;
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (PIM4, 0.0);
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * z1.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|v| v * sqrt2).collect();
        let mut weights: Vec<f64> = w.iter().map(|v| v * inv_sqrt_pi).collect();
        nodes.reverse();
        weights.reverse();
        QuadratureRule {
            kind: RuleKind::Hermite,
            nodes,
            weights,
            domain: RuleDomain::Gaussian {
                center: 0.0,
                scale: 1.0,
            },
        }
    }

    /// Affine map of a Legendre rule onto [lo, hi].
    pub fn on_interval(&self, lo: f64, hi: f64) -> Self {
        assert_eq!(self.kind, RuleKind::Legendre);
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        QuadratureRule {
            kind: RuleKind::Legendre,
            nodes: self.nodes.iter().map(|u| c + r * u).collect(),
            weights: self.weights.iter().map(|w| r * w).collect(),
            domain: RuleDomain::Interval { lo, hi },
        }
    }

    /// Re-centers a Hermite rule so that it integrates against N(center, scale²).
    pub fn recentered(&self, center: f64, scale: f64) -> Self {
        assert_eq!(self.kind, RuleKind::Hermite);
        QuadratureRule {
            kind: RuleKind::Hermite,
            nodes: self.nodes.iter().map(|z| center + scale * z).collect(),
            weights: self.weights.clone(),
            domain: RuleDomain::Gaussian { center, scale },
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

type RuleCache = Mutex<HashMap<(RuleKind, usize), Arc<QuadratureRule>>>;

fn cache() -> &'static RuleCache {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Memoized rule on the reference domain.
pub fn cached_rule(kind: RuleKind, n: usize) -> Arc<QuadratureRule> {
    if let Some(r) = cache().lock().expect("rule cache poisoned").get(&(kind, n)) {
        return Arc::clone(r);
    }
    let rule = Arc::new(match kind {
        RuleKind::Legendre => QuadratureRule::legendre(n),
        RuleKind::Hermite => QuadratureRule::hermite(n),
    });
    cache()
        .lock()
        .expect("rule cache poisoned")
        .insert((kind, n), Arc::clone(&rule));
    rule
}

/// Node count used for continuous-support expectations.
pub const HERMITE_NODES: usize = 64;

/// Weighted sum Σ wᵢ f(xᵢ).
pub fn integrate<F: FnMut(f64) -> f64>(rule: &QuadratureRule, mut f: F) -> f64 {
    rule.nodes.iter().zip(&rule.weights).map(|(&x, &w)| w * f(x)).sum()
}

/// Default starting resolution and cap for the adaptive rules.
pub const ADAPTIVE_START: usize = 8;
pub const ADAPTIVE_MAX_NODES_1D: usize = 1 << 14;

fn converged(coarse: f64, fine: f64, rel_tol: f64) -> bool {
    (fine - coarse).abs() <= rel_tol * fine.abs().max(coarse.abs()) + 1e-15
}

/// Gauss–Legendre on [lo, hi], doubling from 8 nodes until two successive
/// estimates agree to `rel_tol`.
pub fn adaptive_integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<f64> {
    let mut n = ADAPTIVE_START;
    let mut prev = integrate(&cached_rule(RuleKind::Legendre, n).on_interval(lo, hi), &f);
    loop {
        n *= 2;
        if n > ADAPTIVE_MAX_NODES_1D {
            let fine = prev;
            return Err(Error::NonConvergence {
                coarse: integrate(&cached_rule(RuleKind::Legendre, n / 4).on_interval(lo, hi), &f),
                fine,
                nodes: n / 2,
            });
        }
        let next = integrate(&cached_rule(RuleKind::Legendre, n).on_interval(lo, hi), &f);
        if !next.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite quadrature estimate on [{lo}, {hi}]"
            )));
        }
        if converged(prev, next, rel_tol) {
            return Ok(next);
        }
        prev = next;
    }
}

/// Tensor-product Gauss–Legendre over a box with the same per-axis count,
/// doubling until successive estimates agree to `rel_tol` or the total node
/// count would exceed `max_nodes`. Node evaluation is parallel; the reduction
/// order is fixed, so results are deterministic.
pub fn adaptive_integrate_box<F>(f: F, lo: &[f64], hi: &[f64], rel_tol: f64, max_nodes: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert_eq!(lo.len(), hi.len());
    let dim = lo.len();
    let total = |n: usize| n.checked_pow(dim as u32).unwrap_or(usize::MAX);
    let mut n = ADAPTIVE_START;
    let mut prev = tensor_gl(&f, lo, hi, n)?;
    loop {
        let next_n = n * 2;
        if total(next_n) > max_nodes {
            let coarse = tensor_gl(&f, lo, hi, n / 2)?;
            return Err(Error::NonConvergence {
                coarse,
                fine: prev,
                nodes: total(n),
            });
        }
        let next = tensor_gl(&f, lo, hi, next_n)?;
        if converged(prev, next, rel_tol) {
            return Ok(next);
        }
        prev = next;
        n = next_n;
    }
}

/// Fixed tensor-product Gauss–Legendre with `n` nodes per axis.
pub fn tensor_gl<F>(f: &F, lo: &[f64], hi: &[f64], n: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = lo.len();
    let rules: Vec<QuadratureRule> = (0..dim)
        .map(|d| cached_rule(RuleKind::Legendre, n).on_interval(lo[d], hi[d]))
        .collect();
    let outer = if dim == 0 { 1 } else { n };
    let partials: Vec<f64> = (0..outer)
        .into_par_iter()
        .map(|i0| {
            let mut idx = vec![0usize; dim];
            let mut x = vec![0.0; dim];
            if dim > 0 {
                idx[0] = i0;
            }
            let inner = n.pow(dim.saturating_sub(1) as u32);
            let mut acc = 0.0;
            for _ in 0..inner {
                let mut w = 1.0;
                for d in 0..dim {
                    x[d] = rules[d].nodes[idx[d]];
                    w *= rules[d].weights[idx[d]];
                }
                acc += w * f(&x);
                // odometer over axes 1..dim
                for d in (1..dim).rev() {
                    idx[d] += 1;
                    if idx[d] < n {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            acc
        })
        .collect();
    let sum: f64 = partials.iter().sum();
    if sum.is_finite() {
        Ok(sum)
    } else {
        Err(Error::NumericalFailure("non-finite tensor quadrature".into()))
    }
}

// ---------------------------------------------------------------------------
// Seeded Monte Carlo
// ---------------------------------------------------------------------------

/// A reproducible random stream: identical `(master_seed, stream_id)` pairs
/// yield identical draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeededStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        SeededStream { master_seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derived stream for replicate `index`; independent of how replicates are scheduled.
    pub fn child(&self, index: u64) -> SeededStream {
        SeededStream {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(1))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub replicates: usize,
}

/// Sample mean and standard error of `statistic(sampler(rng))` over
/// `replicates` draws, replicate `r` using `stream.child(r)`.
pub fn mc_mean<S, D, T>(stream: SeededStream, replicates: usize, sampler: D, statistic: T) -> Result<McEstimate>
where
    D: Fn(&mut ChaCha8Rng) -> S + Sync,
    T: Fn(&S) -> f64 + Sync,
{
    if replicates < 2 {
        return Err(Error::Configuration(format!(
            "Monte Carlo needs at least 2 replicates, got {replicates}"
        )));
    }
    let values: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.child(r).rng();
            statistic(&sampler(&mut rng))
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        replicates,
    })
}

// ---------------------------------------------------------------------------
// Log-domain accumulation
// ---------------------------------------------------------------------------

/// log Σ exp(vᵢ) with the max-shift trick.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Σ wᵢ vᵢ / Σ wᵢ with wᵢ = exp(log_wᵢ), accumulated after a max shift.
/// Terms with zero weight never touch their (possibly infinite) value.
pub fn log_weighted_mean(log_weights: &[f64], values: &[f64]) -> f64 {
    assert_eq!(log_weights.len(), values.len());
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (&lw, &v) in log_weights.iter().zip(values) {
        let w = (lw - m).exp();
        if w > 0.0 {
            num += w * v;
            den += w;
        }
    }
    num / den
}

/// Table of ln k! for k = 0..=n.
pub fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    t.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        t.push(acc);
    }
    t
}

/// Prefix sums R(k) = Σ_{j<k} ln(a + j), so ln[(a)_t rising] = R(t).
pub fn ln_rising_prefix(a: f64, n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    t.push(0.0);
    let mut acc = 0.0;
    for j in 0..n {
        acc += (a + j as f64).ln();
        t.push(acc);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_first_derivative_is_exact() {
        let g = central_diff(|x| x[0] * x[0], &[3.0], DiffOrder::First, false)
            .unwrap()
            .gradient()
            .unwrap();
        assert_relative_eq!(g[0], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn exp_second_derivative_with_richardson() {
        let h = central_diff(|x| x[0].exp(), &[0.0], DiffOrder::Second, true)
            .unwrap()
            .hessian()
            .unwrap();
        assert!((h[(0, 0)] - 1.0).abs() < 1e-8, "{}", h[(0, 0)]);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        for order in [DiffOrder::First, DiffOrder::Second] {
            match central_diff(|_| 2.5, &[0.3, -1.0], order, true).unwrap() {
                Derivative::Gradient(g) => assert!(g.iter().all(|v| *v == 0.0)),
                Derivative::Hessian(h) => assert!(h.iter().all(|v| *v == 0.0)),
            }
        }
    }

    #[test]
    fn richardson_derivatives_on_test_functions() {
        let x = [0.7];
        let g = gradient(|t| t[0].ln(), &x, &DiffOptions::richardson()).unwrap();
        assert!((g[0] - 1.0 / 0.7).abs() < 1e-8);
        let h = hessian(|t| t[0].ln(), &x, &DiffOptions::richardson()).unwrap();
        assert!((h[(0, 0)] + 1.0 / 0.49).abs() < 1e-8);
        let h = hessian(|t| t[0].powi(4) - 3.0 * t[0], &x, &DiffOptions::richardson()).unwrap();
        assert!((h[(0, 0)] - 12.0 * 0.49).abs() < 1e-8);
    }

    #[test]
    fn mixed_hessian_is_symmetric() {
        let h = hessian(
            |t| (t[0] * t[1]).sin() + t[0].powi(2) * t[1],
            &[0.4, 1.3],
            &DiffOptions::richardson(),
        )
        .unwrap();
        assert_eq!(h[(0, 1)], h[(1, 0)]);
        let exact01 = (0.4f64 * 1.3).cos() - 0.4 * 1.3 * (0.4f64 * 1.3).sin() + 2.0 * 0.4;
        assert!((h[(0, 1)] - exact01).abs() < 1e-8);
    }

    #[test]
    fn non_finite_stencil_is_domain_error() {
        let r = central_diff(|x| x[0].ln(), &[0.0], DiffOrder::First, false);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn legendre_polynomial_exactness() {
        for n in [1usize, 2, 5, 8, 16, 33] {
            let rule = QuadratureRule::legendre(n);
            assert!(rule.weights.iter().all(|w| *w > 0.0));
            assert!(rule.nodes.iter().all(|x| x.abs() < 1.0));
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got = integrate(&rule, |x| x.powi(deg as i32));
                assert!((got - exact).abs() < 1e-12, "n={n} deg={deg} got={got}");
            }
        }
    }

    #[test]
    fn hermite_moments() {
        let rule = QuadratureRule::hermite(HERMITE_NODES);
        assert!(rule.weights.iter().all(|w| *w > 0.0));
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((integrate(&rule, |z| z * z) - 1.0).abs() < 1e-10);
        // E z^{2k} = (2k-1)!!
        let mut dfact = 1.0;
        for k in 1..20 {
            dfact *= (2 * k - 1) as f64;
            let got = integrate(&rule, |z| z.powi(2 * k as i32));
            assert!(((got - dfact) / dfact).abs() < 1e-11, "k={k} got={got}");
        }
        let shifted = rule.recentered(2.0, 3.0);
        assert!((integrate(&shifted, |x| x) - 2.0).abs() < 1e-12);
        assert!((integrate(&shifted, |x| (x - 2.0).powi(2)) - 9.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_unit_interval() {
        assert!((adaptive_integrate(|_| 1.0, 0.0, 1.0, 1e-12).unwrap() - 1.0).abs() < 1e-14);
        let v = adaptive_integrate(|x| (10.0 * x).exp(), -1.0, 1.0, 1e-12).unwrap();
        let exact = ((10.0f64).exp() - (-10.0f64).exp()) / 10.0;
        assert!(((v - exact) / exact).abs() < 1e-12);
    }

    #[test]
    fn adaptive_reports_non_convergence() {
        let r = adaptive_integrate(|x| if x > 0.1234567 { 1.0 } else { 0.0 }, 0.0, 1.0, 1e-15);
        assert!(matches!(r, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn box_integration() {
        let v = adaptive_integrate_box(|x| x[0] * x[0] * x[1].exp(), &[0.0, 0.0], &[1.0, 2.0], 1e-12, 1 << 16).unwrap();
        let exact = (1.0 / 3.0) * (2.0f64.exp() - 1.0);
        assert!((v - exact).abs() < 1e-12);
        let v3 = tensor_gl(&|x: &[f64]| x[0] + x[1] * x[2], &[0.0; 3], &[1.0; 3], 4).unwrap();
        assert!((v3 - 0.75).abs() < 1e-14);
    }

    #[test]
    fn mc_constant_statistic() {
        let s = SeededStream::new(7, 0);
        let est = mc_mean(s, 100, |_| 3.0, |v: &f64| *v).unwrap();
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn mc_is_deterministic_per_stream() {
        use rand::Rng;
        let s = SeededStream::new(42, 3);
        let a = mc_mean(s, 1000, |r| r.random::<f64>(), |v| *v).unwrap();
        let b = mc_mean(s, 1000, |r| r.random::<f64>(), |v| *v).unwrap();
        assert_eq!(a, b);
        let c = mc_mean(SeededStream::new(42, 4), 1000, |r| r.random::<f64>(), |v| *v).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn mc_bernoulli_indicator() {
        use rand::Rng;
        let s = SeededStream::new(2024, 1);
        let est = mc_mean(s, 100_000, |r| r.random::<f64>() < 0.3, |b| f64::from(u8::from(*b))).unwrap();
        assert!((est.mean - 0.3).abs() < 3.0 * est.std_error, "{est:?}");
    }

    #[test]
    fn mc_needs_two_replicates() {
        assert!(mc_mean(SeededStream::new(1, 1), 1, |_| 0.0, |v: &f64| *v).is_err());
    }

    #[test]
    fn log_sum_exp_survives_large_magnitudes() {
        let v = [-1000.0, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let m = log_weighted_mean(&[-800.0, -800.0 + 3f64.ln()], &[1.0, 5.0]);
        assert!((m - 4.0).abs() < 1e-12);
    }
}
