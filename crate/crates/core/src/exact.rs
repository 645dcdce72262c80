//! Finite-sample regret.
//!
//! Bernoulli models use sums over sufficient counts, which are exact up to
//! rounding. The normal families use conjugate closed forms, with
//! Gauss–Hermite over the sample mean where an expectation remains. Anything
//! else goes through seeded Monte Carlo on log marginals.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::ln_beta;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::asymptotics;
use crate::error::{Error, Result};
use crate::models::{Family, ModelFamily};
use crate::numerics::{
    self, cached_rule, ln_factorials, log_sum_exp, log_weighted_mean, RuleKind, SeededStream, HERMITE_NODES,
};
use crate::priors::{jeffreys, PriorKind, PriorSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Rounding slack below zero tolerated for a KL divergence.
const KL_FLOOR: f64 = -1e-10;
const IMPROPER_NOTE: &str = "improper prior: value defined up to the prior's additive constant";

/// c_n = 2n(n+m)/m.
pub fn c_n(n: usize, m: usize) -> f64 {
    2.0 * n as f64 * (n + m) as f64 / m as f64
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Sum over sufficient counts with closed-form marginals.
    ExactCounts,
    /// Sum over sufficient counts with quadrature marginals.
    CountsQuadrature,
    ClosedForm,
    HermiteQuadrature,
    MonteCarlo,
}

/// A regret or loss value with the method that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretEstimate {
    pub value: f64,
    /// Zero for deterministic methods.
    pub std_error: f64,
    pub method: Method,
    /// Set when the marginal is infinite; `value` is then not finite.
    pub divergence: Option<String>,
    /// Set when the value depends on an improper prior's normalization.
    pub convention: Option<String>,
}

impl RegretEstimate {
    fn exact(value: f64, method: Method) -> Self {
        RegretEstimate {
            value,
            std_error: 0.0,
            method,
            divergence: None,
            convention: None,
        }
    }

    fn diverging(method: Method, why: String) -> Self {
        RegretEstimate {
            value: f64::INFINITY,
            std_error: 0.0,
            method,
            divergence: Some(why),
            convention: None,
        }
    }

    fn with_convention(mut self, prior: &PriorSpec) -> Self {
        if !prior.proper {
            self.convention = Some(IMPROPER_NOTE.into());
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.divergence.is_none() && self.value.is_finite()
    }
}

fn check_kl(v: f64, what: &str) -> Result<f64> {
    if v < KL_FLOOR {
        Err(Error::NumericalFailure(format!(
            "{what} = {v} is negative beyond rounding"
        )))
    } else {
        Ok(v)
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::Configuration("prediction size m must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn unsupported(model: &ModelFamily, prior: &PriorSpec) -> Error {
    Error::UnsupportedPair {
        model: model.name(),
        prior: prior.name.clone(),
    }
}

/// log π(θ), normalized when the prior is proper with a known constant.
fn prior_log(prior: &PriorSpec, theta: &[f64]) -> f64 {
    let v = match prior.log_pi(theta) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    match (prior.proper, prior.normalizer) {
        (true, Some(z)) => v - z,
        _ => v,
    }
}

// ---------------------------------------------------------------------------
// One-dimensional log integrals
// ---------------------------------------------------------------------------

const SCAN_HALF_WIDTH: f64 = 60.0;
const SCAN_STEP: f64 = 0.02;
const WINDOW_DROP: f64 = 40.0;

/// log ∫_lo^hi exp(g(θ)) dθ. The interval is mapped to R (logistic, shifted
/// exponential or identity), a coarse scan locates the mass, and the window
/// where the integrand is within e^-40 of its peak is integrated adaptively.
fn log_integral_1d<G: Fn(f64) -> f64 + Sync>(lo: f64, hi: f64, g: G) -> Result<f64> {
    let to_theta = |s: f64| -> (f64, f64) {
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => {
                let p = 1.0 / (1.0 + (-s).exp());
                let log_jac = (hi - lo).ln() - s.abs() - 2.0 * (-s.abs()).exp().ln_1p();
                (lo + (hi - lo) * p, log_jac)
            }
            (true, false) => (lo + s.exp(), s),
            (false, true) => (hi - s.exp(), s),
            (false, false) => (s, 0.0),
        }
    };
    let h = |s: f64| {
        let (t, lj) = to_theta(s);
        if t <= lo || t >= hi {
            return f64::NEG_INFINITY;
        }
        let v = g(t) + lj;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let count = (2.0 * SCAN_HALF_WIDTH / SCAN_STEP) as usize + 1;
    let grid: Vec<f64> = (0..count).map(|i| -SCAN_HALF_WIDTH + i as f64 * SCAN_STEP).collect();
    let vals: Vec<f64> = grid.iter().map(|&s| h(s)).collect();
    let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::domain("marginal integrand vanishes or is unbounded"));
    }
    let keep = |v: &f64| *v > peak - WINDOW_DROP;
    let first = vals.iter().position(keep).unwrap_or(0);
    let last = vals.iter().rposition(keep).unwrap_or(count - 1);
    if first == 0 || last == count - 1 {
        return Err(Error::domain(
            "marginal integral does not converge: integrand does not decay at the edge of the parameter space",
        ));
    }
    let (a, b) = (grid[first - 1], grid[last + 1]);
    let mass = numerics::adaptive_integrate(|s| (h(s) - peak).exp(), a, b, 1e-12)?;
    Ok(peak + mass.ln())
}

// ---------------------------------------------------------------------------
// Bernoulli: sequence marginals and count sums
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum BernPrior {
    /// `shift` carries a flat prior's additive constant.
    Beta {
        a: f64,
        b: f64,
        shift: f64,
    },
    Mixture {
        log_w: Vec<f64>,
        atoms: Vec<f64>,
    },
    Numeric(PriorSpec),
}

fn bern_prior(model: &ModelFamily, prior: &PriorSpec) -> Result<BernPrior> {
    match &prior.kind {
        PriorKind::Beta { a, b } => Ok(BernPrior::Beta {
            a: *a,
            b: *b,
            shift: 0.0,
        }),
        PriorKind::Flat => Ok(BernPrior::Beta {
            a: 1.0,
            b: 1.0,
            shift: prior.offset,
        }),
        PriorKind::Discrete { atoms, weights } => {
            let mut pts = Vec::with_capacity(atoms.len());
            for a in atoms {
                if a.len() != 1 || !(0.0..=1.0).contains(&a[0]) {
                    return Err(Error::Configuration(format!(
                        "Bernoulli mixture atom {a:?} is not a probability"
                    )));
                }
                pts.push(a[0]);
            }
            Ok(BernPrior::Mixture {
                log_w: weights.iter().map(|w| w.ln()).collect(),
                atoms: pts,
            })
        }
        _ => match prior.support_box() {
            Some(b) if b.len() == 1 && b[0].0 >= 0.0 && b[0].1 <= 1.0 => Ok(BernPrior::Numeric(prior.clone())),
            _ => Err(unsupported(model, prior)),
        },
    }
}

/// log p^π of one particular 0/1 sequence of length `len` with `s` successes.
fn bern_log_seq(prior: &BernPrior, s: usize, len: usize) -> Result<f64> {
    let (sf, ff) = (s as f64, (len - s) as f64);
    match prior {
        BernPrior::Beta { a, b, shift } => Ok(shift + ln_beta(a + sf, b + ff) - ln_beta(*a, *b)),
        BernPrior::Mixture { log_w, atoms } => {
            let terms: Vec<f64> = log_w
                .iter()
                .zip(atoms)
                .map(|(lw, &t)| lw + xlogy(sf, t) + xlogy(ff, 1.0 - t))
                .collect();
            Ok(log_sum_exp(&terms))
        }
        BernPrior::Numeric(p) => {
            let (lo, hi) = p.support_box().map(|b| b[0]).unwrap_or((0.0, 1.0));
            log_integral_1d(lo, hi, |t| xlogy(sf, t) + xlogy(ff, 1.0 - t) + prior_log(p, &[t]))
        }
    }
}

/// Tables of log p^π(sequence) indexed by length, then success count.
struct SeqTables {
    tables: BTreeMap<usize, Vec<f64>>,
    method: Method,
}

impl SeqTables {
    fn build(prior: &BernPrior, lengths: &[usize]) -> Result<Self> {
        let mut tables = BTreeMap::new();
        for &len in lengths {
            if tables.contains_key(&len) {
                continue;
            }
            let row: Vec<f64> = match prior {
                BernPrior::Beta { a, b, shift } => {
                    // Prefix sums of ln(a + j) give ln Γ ratios without repeated ln Γ calls.
                    let ra = numerics::ln_rising_prefix(*a, len);
                    let rb = numerics::ln_rising_prefix(*b, len);
                    let rab = numerics::ln_rising_prefix(a + b, len);
                    (0..=len).map(|s| shift + ra[s] + rb[len - s] - rab[len]).collect()
                }
                BernPrior::Mixture { .. } => (0..=len).map(|s| bern_log_seq(prior, s, len)).collect::<Result<_>>()?,
                BernPrior::Numeric(_) => (0..=len)
                    .into_par_iter()
                    .map(|s| bern_log_seq(prior, s, len))
                    .collect::<Result<_>>()?,
            };
            tables.insert(len, row);
        }
        let method = match prior {
            BernPrior::Numeric(_) => Method::CountsQuadrature,
            _ => Method::ExactCounts,
        };
        Ok(SeqTables { tables, method })
    }

    fn get(&self, s: usize, len: usize) -> f64 {
        self.tables[&len][s]
    }

    /// log p^π(y|x) for t successes of m following s successes of n.
    fn log_pred(&self, s: usize, n: usize, t: usize, m: usize) -> f64 {
        self.get(s + t, n + m) - self.get(s, n)
    }
}

/// Log binomial pmf over 0..=n; θ ∈ {0, 1} gives a single finite entry.
fn binom_log_pmf(n: usize, theta: f64, lnf: &[f64]) -> Vec<f64> {
    (0..=n)
        .map(|s| {
            let (sf, ff) = (s as f64, (n - s) as f64);
            lnf[n] - lnf[s] - lnf[n - s] + xlogy(sf, theta) + xlogy(ff, 1.0 - theta)
        })
        .collect()
}

fn log_seq_theta(t: usize, m: usize, theta: f64) -> f64 {
    xlogy(t as f64, theta) + xlogy((m - t) as f64, 1.0 - theta)
}

/// Σ_{s,t} w(s,t) v(s,t) with w given in logs; v is only evaluated where w > 0.
fn count_mean<F: Fn(usize, usize) -> f64>(n: usize, m: usize, log_w: impl Fn(usize, usize) -> f64, v: F) -> f64 {
    let mut lw = Vec::with_capacity((n + 1) * (m + 1));
    let mut vals = Vec::with_capacity((n + 1) * (m + 1));
    for s in 0..=n {
        for t in 0..=m {
            let w = log_w(s, t);
            lw.push(w);
            vals.push(if w == f64::NEG_INFINITY { 0.0 } else { v(s, t) });
        }
    }
    log_weighted_mean(&lw, &vals)
}

fn bern_theta(model: &ModelFamily, theta: &[f64]) -> Result<f64> {
    if theta.len() != 1 {
        return Err(Error::UnsupportedDimension {
            expected: 1,
            got: theta.len(),
        });
    }
    let t = theta[0];
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("{}: θ = {t} is outside [0, 1]", model.name())));
    }
    Ok(t)
}

fn bern_d_post(theta: f64, n: usize, m: usize, tab: &SeqTables) -> f64 {
    let lnf = ln_factorials(n.max(m));
    let (ws, wt) = (binom_log_pmf(n, theta, &lnf), binom_log_pmf(m, theta, &lnf));
    count_mean(
        n,
        m,
        |s, t| ws[s] + wt[t],
        |s, t| log_seq_theta(t, m, theta) - tab.log_pred(s, n, t, m),
    )
}

fn bern_l_post(theta: f64, n: usize, m: usize, tab: &SeqTables, jef: &SeqTables) -> f64 {
    let lnf = ln_factorials(n.max(m));
    let (ws, wt) = (binom_log_pmf(n, theta, &lnf), binom_log_pmf(m, theta, &lnf));
    count_mean(
        n,
        m,
        |s, t| ws[s] + wt[t],
        |s, t| jef.log_pred(s, n, t, m) - tab.log_pred(s, n, t, m),
    )
}

fn bern_d_prior(theta: f64, n: usize, tab: &SeqTables) -> f64 {
    let lnf = ln_factorials(n);
    let ws = binom_log_pmf(n, theta, &lnf);
    let vals: Vec<f64> = (0..=n)
        .map(|s| {
            if ws[s] == f64::NEG_INFINITY {
                0.0
            } else {
                log_seq_theta(s, n, theta) - tab.get(s, n)
            }
        })
        .collect();
    log_weighted_mean(&ws, &vals)
}

/// E over the τ-mixture count law P^τ(s, t) of `v(s, t)`.
fn bern_tau_mean<F: Fn(usize, usize) -> f64>(n: usize, m: usize, tau: &SeqTables, v: F) -> f64 {
    let lnf = ln_factorials(n.max(m));
    count_mean(
        n,
        m,
        |s, t| lnf[n] - lnf[s] - lnf[n - s] + lnf[m] - lnf[t] - lnf[m - t] + tau.get(s + t, n + m),
        v,
    )
}

// ---------------------------------------------------------------------------
// Normal mean (unit variance)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum NmPrior {
    Flat { offset: f64 },
    Normal { mean: f64, var: f64 },
    Tilt { c: f64, theta0: f64, offset: f64 },
}

fn nm_prior(model: &ModelFamily, prior: &PriorSpec) -> Result<NmPrior> {
    match prior.kind {
        PriorKind::Flat => Ok(NmPrior::Flat { offset: prior.offset }),
        PriorKind::Normal { mean, var } => Ok(NmPrior::Normal { mean, var }),
        PriorKind::ExpTilt { c, theta0 } => Ok(NmPrior::Tilt {
            c,
            theta0,
            offset: prior.offset,
        }),
        _ => Err(unsupported(model, prior)),
    }
}

impl NmPrior {
    /// Posterior (mean, variance) after `n` observations with mean `xbar`.
    fn posterior(&self, n: usize, xbar: f64) -> Option<(f64, f64)> {
        let nf = n as f64;
        match *self {
            NmPrior::Flat { .. } => (n > 0).then(|| (xbar, 1.0 / nf)),
            NmPrior::Tilt { c, .. } => (n > 0).then(|| (xbar + c / nf, 1.0 / nf)),
            NmPrior::Normal { mean, var } => {
                let v = 1.0 / (1.0 / var + nf);
                let sum = if n == 0 { 0.0 } else { nf * xbar };
                Some((v * (mean / var + sum), v))
            }
        }
    }

    /// log of the marginal density of the sample mean, up to the factor that
    /// every prior shares: ∫ N(x̄; θ, 1/N) π(θ) dθ.
    fn log_mean_marginal(&self, len: usize, xbar: f64) -> Option<f64> {
        let nf = len as f64;
        match *self {
            NmPrior::Flat { offset } => (len > 0).then_some(offset),
            NmPrior::Tilt { c, theta0, offset } => (len > 0).then(|| offset + c * (xbar - theta0) + c * c / (2.0 * nf)),
            NmPrior::Normal { mean, var } => {
                let s2 = var + if len == 0 { 0.0 } else { 1.0 / nf };
                Some(-0.5 * (LN_2PI + s2.ln()) - (xbar - mean).powi(2) / (2.0 * s2))
            }
        }
    }
}

/// KL{N(θ, 1/m) ‖ N(μ, 1/m + v)} with δ = μ − θ.
fn nm_kl(m: usize, v: f64, delta: f64) -> f64 {
    let mv = m as f64 * v;
    0.5 * ((mv).ln_1p() - mv / (1.0 + mv) + m as f64 * delta * delta / (1.0 + mv))
}

/// E over x̄ ~ N(θ, 1/n) by Gauss–Hermite.
fn over_xbar<F: Fn(f64) -> f64>(theta: f64, n: usize, f: F) -> f64 {
    if n == 0 {
        return f(theta);
    }
    let rule = cached_rule(RuleKind::Hermite, HERMITE_NODES);
    let sd = 1.0 / (n as f64).sqrt();
    numerics::integrate(&rule, |z| f(theta + sd * z))
}

fn nm_d_post(prior: &NmPrior, theta: f64, n: usize, m: usize) -> Option<f64> {
    prior.posterior(n, theta)?;
    Some(over_xbar(theta, n, |xb| {
        let (mu, v) = prior.posterior(n, xb).unwrap();
        nm_kl(m, v, mu - theta)
    }))
}

fn nm_l_post(prior: &NmPrior, theta: f64, n: usize, m: usize) -> Option<f64> {
    let flat = NmPrior::Flat { offset: 0.0 };
    prior.posterior(n, theta)?;
    flat.posterior(n, theta)?;
    Some(over_xbar(theta, n, |xb| {
        let (mu, v) = prior.posterior(n, xb).unwrap();
        let (mj, vj) = flat.posterior(n, xb).unwrap();
        nm_kl(m, v, mu - theta) - nm_kl(m, vj, mj - theta)
    }))
}

fn nm_d_prior(prior: &NmPrior, theta: f64, n: usize) -> Option<f64> {
    let nf = n as f64;
    match *prior {
        NmPrior::Normal { mean, var } => {
            let s2 = var + 1.0 / nf;
            let r = 1.0 / (nf * s2);
            Some(0.5 * (-(r.ln()) + r + (theta - mean).powi(2) / s2 - 1.0))
        }
        _ => {
            let own = -0.5 * (LN_2PI - nf.ln() + 1.0);
            let e_marg = match *prior {
                NmPrior::Flat { offset } => offset,
                NmPrior::Tilt { c, theta0, offset } => offset + c * (theta - theta0) + c * c / (2.0 * nf),
                NmPrior::Normal { .. } => unreachable!(),
            };
            Some(own - e_marg)
        }
    }
}

fn nm_log_marginal(prior: &NmPrior, data: &[Vec<f64>]) -> Result<f64> {
    let len = data.len();
    if len == 0 {
        return match prior {
            NmPrior::Normal { .. } => Ok(0.0),
            _ => Err(Error::domain("improper prior: marginal of no data is infinite")),
        };
    }
    let nf = len as f64;
    let xbar = data.iter().map(|x| x[0]).sum::<f64>() / nf;
    let ss: f64 = data.iter().map(|x| (x[0] - xbar).powi(2)).sum();
    let base = -0.5 * (nf - 1.0) * LN_2PI - 0.5 * nf.ln() - 0.5 * ss;
    Ok(base + prior.log_mean_marginal(len, xbar).unwrap())
}

// ---------------------------------------------------------------------------
// Normal location-scale with σ^{-a}
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct ScalePrior {
    a: f64,
    offset: f64,
}

fn scale_prior(model: &ModelFamily, prior: &PriorSpec, log_scale: bool) -> Result<ScalePrior> {
    match prior.kind {
        PriorKind::PowerSigma { a, index: 1, .. } => Ok(ScalePrior {
            a,
            offset: prior.offset,
        }),
        PriorKind::Flat => Ok(ScalePrior {
            a: if log_scale { 1.0 } else { 0.0 },
            offset: prior.offset,
        }),
        _ => Err(unsupported(model, prior)),
    }
}

impl ScalePrior {
    fn shape(&self, len: usize) -> f64 {
        (len as f64 + self.a - 2.0) / 2.0
    }

    fn divergence(&self, len: usize) -> Option<String> {
        if len < 2 {
            Some(format!(
                "σ^-{} prior: marginal of {len} observation(s) is infinite",
                self.a
            ))
        } else if self.shape(len) <= 0.0 {
            Some(format!(
                "σ^-{} prior: posterior improper at sample size {len} (needs n + a > 2)",
                self.a
            ))
        } else {
            None
        }
    }

    /// log ∫∫ Π N(zᵢ; β, σ²) σ^{-a} dβ dσ given the residual sum of squares.
    fn log_marginal(&self, len: usize, ss: f64) -> f64 {
        let nf = len as f64;
        let k = self.shape(len);
        -0.5 * (nf - 1.0) * LN_2PI - 0.5 * nf.ln() - std::f64::consts::LN_2 + ln_gamma(k) - k * (ss / 2.0).ln()
            + self.offset
    }

    /// E log marginal when the data are N(β, σ²), using
    /// E log(S/2) = ln σ² + ψ((N−1)/2).
    fn expected_log_marginal(&self, len: usize, ln_var: f64) -> f64 {
        let nf = len as f64;
        let k = self.shape(len);
        -0.5 * (nf - 1.0) * LN_2PI - 0.5 * nf.ln() - std::f64::consts::LN_2 + ln_gamma(k)
            - k * (ln_var + digamma((nf - 1.0) / 2.0))
            + self.offset
    }

    fn d_post(&self, n: usize, m: usize) -> std::result::Result<f64, String> {
        if let Some(why) = self.divergence(n) {
            return Err(why);
        }
        let own = -0.5 * m as f64 * (LN_2PI + 1.0);
        Ok(own - (self.expected_log_marginal(n + m, 0.0) - self.expected_log_marginal(n, 0.0)))
    }

    fn d_prior(&self, n: usize, ln_var: f64) -> std::result::Result<f64, String> {
        if let Some(why) = self.divergence(n) {
            return Err(why);
        }
        let own = -0.5 * n as f64 * (LN_2PI + ln_var + 1.0);
        Ok(own - self.expected_log_marginal(n, ln_var))
    }
}

fn ln_var(theta: &[f64], log_scale: bool) -> f64 {
    if log_scale {
        2.0 * theta[1]
    } else {
        2.0 * theta[1].ln()
    }
}

// ---------------------------------------------------------------------------
// Conjugate predictive kernels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConjugatePair {
    BetaBernoulli,
    NormalMean,
    NormalScale,
}

/// Posterior hyperparameters after observing x.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Hyper {
    /// Beta(a, b) posterior.
    Beta { a: f64, b: f64 },
    /// N(mean, var) posterior for the unit-variance mean.
    Normal { mean: f64, var: f64 },
    /// σ^{-a} prior with flat β and the observed summary (count, mean, residual SS).
    Scale { a: f64, count: usize, mean: f64, ss: f64 },
}

/// p^π(y|x) for m future observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveKernel {
    pub pair: ConjugatePair,
    pub hyper: Hyper,
    pub m: usize,
}

impl PredictiveKernel {
    /// log p^π(y|x) for a vector of m observations.
    pub fn log_predictive(&self, y: &[Vec<f64>]) -> Result<f64> {
        if y.len() != self.m {
            return Err(Error::Configuration(format!(
                "kernel predicts {} observations, got {}",
                self.m,
                y.len()
            )));
        }
        match self.hyper {
            Hyper::Beta { a, b } => {
                let t = count_successes(y)?;
                let m = self.m;
                Ok(ln_beta(a + t as f64, b + (m - t) as f64) - ln_beta(a, b))
            }
            Hyper::Normal { mean, var } => {
                // Covariance I + v11ᵀ, inverted by Sherman–Morrison.
                let mf = self.m as f64;
                let dev: Vec<f64> = y.iter().map(|v| v[0] - mean).collect();
                let sum: f64 = dev.iter().sum();
                let sq: f64 = dev.iter().map(|d| d * d).sum();
                Ok(-0.5 * mf * LN_2PI - 0.5 * (mf * var).ln_1p() - 0.5 * (sq - var * sum * sum / (1.0 + mf * var)))
            }
            Hyper::Scale { a, count, mean, ss } => {
                let prior = ScalePrior { a, offset: 0.0 };
                let (c2, _, ss2) = merge_summary(count, mean, ss, y);
                Ok(prior.log_marginal(c2, ss2) - prior.log_marginal(count, ss))
            }
        }
    }

    /// P(next observation = 1) for the Beta–Bernoulli kernel.
    pub fn success_probability(&self) -> Option<f64> {
        match self.hyper {
            Hyper::Beta { a, b } => Some(a / (a + b)),
            _ => None,
        }
    }
}

fn count_successes(x: &[Vec<f64>]) -> Result<usize> {
    let mut s = 0;
    for v in x {
        match v.as_slice() {
            [z] if *z == 1.0 => s += 1,
            [z] if *z == 0.0 => {}
            _ => return Err(Error::domain(format!("Bernoulli observation {v:?} is not 0 or 1"))),
        }
    }
    Ok(s)
}

fn merge_summary(count: usize, mean: f64, ss: f64, y: &[Vec<f64>]) -> (usize, f64, f64) {
    let (mut c, mut mu, mut m2) = (count as f64, mean, ss);
    for v in y {
        c += 1.0;
        let d = v[0] - mu;
        mu += d / c;
        m2 += d * (v[0] - mu);
    }
    (c as usize, mu, m2)
}

fn check_scalar_obs(x: &[Vec<f64>]) -> Result<()> {
    if let Some(v) = x.iter().find(|v| v.len() != 1 || !v[0].is_finite()) {
        return Err(Error::domain(format!("observation {v:?} is not a finite scalar")));
    }
    Ok(())
}

/// Posterior predictive kernel for a registered conjugate pair.
pub fn posterior_predictive(
    model: &ModelFamily,
    prior: &PriorSpec,
    x: &[Vec<f64>],
    m: usize,
) -> Result<PredictiveKernel> {
    let n = x.len();
    match model.family() {
        Family::Bernoulli => {
            let (a, b) = match bern_prior(model, prior)? {
                BernPrior::Beta { a, b, .. } => (a, b),
                _ => return Err(unsupported(model, prior)),
            };
            let s = count_successes(x)?;
            Ok(PredictiveKernel {
                pair: ConjugatePair::BetaBernoulli,
                hyper: Hyper::Beta {
                    a: a + s as f64,
                    b: b + (n - s) as f64,
                },
                m,
            })
        }
        Family::NormalMean => {
            check_scalar_obs(x)?;
            let p = nm_prior(model, prior)?;
            let xbar = if n == 0 {
                0.0
            } else {
                x.iter().map(|v| v[0]).sum::<f64>() / n as f64
            };
            let (mean, var) = p
                .posterior(n, xbar)
                .ok_or_else(|| Error::domain("improper prior with no data has no predictive"))?;
            Ok(PredictiveKernel {
                pair: ConjugatePair::NormalMean,
                hyper: Hyper::Normal { mean, var },
                m,
            })
        }
        Family::NormalMs { log_scale } => {
            check_scalar_obs(x)?;
            let p = scale_prior(model, prior, log_scale)?;
            if let Some(why) = p.divergence(n) {
                return Err(Error::domain(why));
            }
            let (count, mean, ss) = merge_summary(0, 0.0, 0.0, x);
            Ok(PredictiveKernel {
                pair: ConjugatePair::NormalScale,
                hyper: Hyper::Scale {
                    a: p.a,
                    count,
                    mean,
                    ss,
                },
                m,
            })
        }
        _ => Err(unsupported(model, prior)),
    }
}

// ---------------------------------------------------------------------------
// Generic log marginals
// ---------------------------------------------------------------------------

/// log p^π(x) for a dataset: closed forms for conjugate pairs and finite
/// mixtures, one-dimensional quadrature otherwise.
pub fn log_marginal(model: &ModelFamily, prior: &PriorSpec, data: &[Vec<f64>]) -> Result<f64> {
    match model.family() {
        Family::Bernoulli => {
            if let Ok(bp) = bern_prior(model, prior) {
                let s = count_successes(data)?;
                return bern_log_seq(&bp, s, data.len());
            }
        }
        Family::NormalMean => {
            if let Ok(p) = nm_prior(model, prior) {
                check_scalar_obs(data)?;
                return nm_log_marginal(&p, data);
            }
        }
        Family::NormalMs { log_scale } => {
            if let Ok(p) = scale_prior(model, prior, log_scale) {
                check_scalar_obs(data)?;
                if let Some(why) = p.divergence(data.len()) {
                    return Err(Error::domain(why));
                }
                let (c, _, ss) = merge_summary(0, 0.0, 0.0, data);
                return Ok(p.log_marginal(c, ss));
            }
        }
        _ => {}
    }
    let inner = model.inner();
    if let PriorKind::Discrete { atoms, weights } = &prior.kind {
        let terms: Vec<f64> = atoms
            .iter()
            .zip(weights)
            .map(|(t, w)| w.ln() + data.iter().map(|x| inner.log_f(x, t)).sum::<f64>())
            .collect();
        return Ok(log_sum_exp(&terms));
    }
    if model.dim() == 1 {
        let dom = inner.domain()[0];
        let (lo, hi) = match prior.support_box() {
            Some(b) => (b[0].0.max(dom.0), b[0].1.min(dom.1)),
            None => dom,
        };
        return log_integral_1d(lo, hi, |t| {
            data.iter().map(|x| inner.log_f(x, &[t])).sum::<f64>() + prior_log(prior, &[t])
        });
    }
    Err(unsupported(model, prior))
}

// ---------------------------------------------------------------------------
// Public regret API
// ---------------------------------------------------------------------------

/// d_{Y|X}(θ, π) = E[log p(y|x, θ) − log p^π(y|x)] on the exact path.
pub fn posterior_predictive_regret(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    n: usize,
    m: usize,
) -> Result<RegretEstimate> {
    check_m(m)?;
    match model.family() {
        Family::Bernoulli => {
            let t = bern_theta(model, theta)?;
            let tab = SeqTables::build(&bern_prior(model, prior)?, &[n, n + m])?;
            let v = check_kl(bern_d_post(t, n, m, &tab), "d_{Y|X}")?;
            Ok(RegretEstimate::exact(v, tab.method))
        }
        Family::NormalMean => {
            model.check(theta)?;
            let p = nm_prior(model, prior)?;
            Ok(match nm_d_post(&p, theta[0], n, m) {
                Some(v) => RegretEstimate::exact(check_kl(v, "d_{Y|X}")?, Method::HermiteQuadrature),
                None => RegretEstimate::diverging(Method::HermiteQuadrature, "improper posterior at n = 0".into()),
            })
        }
        Family::NormalMs { log_scale } => {
            model.check(theta)?;
            let p = scale_prior(model, prior, log_scale)?;
            Ok(match p.d_post(n, m) {
                Ok(v) => RegretEstimate::exact(check_kl(v, "d_{Y|X}")?, Method::ClosedForm),
                Err(why) => RegretEstimate::diverging(Method::ClosedForm, why),
            })
        }
        _ => Err(unsupported(model, prior)),
    }
}

/// L_{Y|X}(θ, π) = d_{Y|X}(θ, π) − d_{Y|X}(θ, π^J), evaluated as the single
/// expectation E[log p^J(y|x) − log p^π(y|x)].
pub fn predictive_loss_finite(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    n: usize,
    m: usize,
) -> Result<RegretEstimate> {
    check_m(m)?;
    let jef = jeffreys(model)?;
    match model.family() {
        Family::Bernoulli => {
            let t = bern_theta(model, theta)?;
            let tab = SeqTables::build(&bern_prior(model, prior)?, &[n, n + m])?;
            let jt = SeqTables::build(&bern_prior(model, &jef)?, &[n, n + m])?;
            Ok(RegretEstimate::exact(bern_l_post(t, n, m, &tab, &jt), tab.method))
        }
        Family::NormalMean => {
            model.check(theta)?;
            let p = nm_prior(model, prior)?;
            Ok(match nm_l_post(&p, theta[0], n, m) {
                Some(v) => RegretEstimate::exact(v, Method::HermiteQuadrature),
                None => RegretEstimate::diverging(Method::HermiteQuadrature, "improper posterior at n = 0".into()),
            })
        }
        Family::NormalMs { log_scale } => {
            model.check(theta)?;
            let p = scale_prior(model, prior, log_scale)?;
            let j = scale_prior(model, &jef, log_scale)?;
            Ok(match (p.d_post(n, m), j.d_post(n, m)) {
                (Ok(a), Ok(b)) => RegretEstimate::exact(a - b, Method::ClosedForm),
                (Err(why), _) | (_, Err(why)) => RegretEstimate::diverging(Method::ClosedForm, why),
            })
        }
        _ => Err(unsupported(model, prior)),
    }
}

/// d_X(θ, π) = D(p(X|θ) ‖ p^π(X)) for n observations.
pub fn prior_predictive_regret(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    n: usize,
) -> Result<RegretEstimate> {
    if n == 0 {
        return Ok(RegretEstimate::exact(0.0, Method::ClosedForm));
    }
    let est = match model.family() {
        Family::Bernoulli => {
            let t = bern_theta(model, theta)?;
            let tab = SeqTables::build(&bern_prior(model, prior)?, &[n])?;
            let v = bern_d_prior(t, n, &tab);
            RegretEstimate::exact(if prior.proper { check_kl(v, "d_X")? } else { v }, tab.method)
        }
        Family::NormalMean => {
            model.check(theta)?;
            let p = nm_prior(model, prior)?;
            let v = nm_d_prior(&p, theta[0], n).unwrap();
            RegretEstimate::exact(if prior.proper { check_kl(v, "d_X")? } else { v }, Method::ClosedForm)
        }
        Family::NormalMs { log_scale } => {
            model.check(theta)?;
            let p = scale_prior(model, prior, log_scale)?;
            match p.d_prior(n, ln_var(theta, log_scale)) {
                Ok(v) => RegretEstimate::exact(v, Method::ClosedForm),
                Err(why) => RegretEstimate::diverging(Method::ClosedForm, why),
            }
        }
        _ => return Err(unsupported(model, prior)),
    };
    Ok(est.with_convention(prior))
}

/// d_{X,Y} − d_X − d_{Y|X}, each term computed separately.
pub fn chain_rule_residual(model: &ModelFamily, prior: &PriorSpec, theta: &[f64], n: usize, m: usize) -> Result<f64> {
    let joint = prior_predictive_regret(model, prior, theta, n + m)?;
    let first = prior_predictive_regret(model, prior, theta, n)?;
    let cond = posterior_predictive_regret(model, prior, theta, n, m)?;
    Ok(joint.value - first.value - cond.value)
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McOptions {
    pub stream: SeededStream,
    pub replicates: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            stream: SeededStream::new(0, 0),
            replicates: 2000,
        }
    }
}

fn draw_sample(model: &ModelFamily, theta: &[f64], count: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count).map(|_| model.inner().draw(theta, rng)).collect()
}

fn finish_mc(est: numerics::McEstimate, prior: &PriorSpec) -> Result<RegretEstimate> {
    if !est.mean.is_finite() {
        return Err(Error::NumericalFailure(
            "Monte Carlo replicate produced a non-finite log marginal".into(),
        ));
    }
    Ok(RegretEstimate {
        value: est.mean,
        std_error: est.std_error,
        method: Method::MonteCarlo,
        divergence: None,
        convention: None,
    }
    .with_convention(prior))
}

/// Seeded Monte Carlo estimate of d_{Y|X}(θ, π).
pub fn mc_regret(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    n: usize,
    m: usize,
    opts: &McOptions,
) -> Result<RegretEstimate> {
    check_m(m)?;
    model.check(theta)?;
    log_marginal(model, prior, &draw_sample(model, theta, n + m, &mut opts.stream.rng()))?;
    let inner = model.inner();
    let est = numerics::mc_mean(
        opts.stream,
        opts.replicates,
        |rng| draw_sample(model, theta, n + m, rng),
        |z| {
            let own: f64 = z[n..].iter().map(|y| inner.log_f(y, theta)).sum();
            match (log_marginal(model, prior, z), log_marginal(model, prior, &z[..n])) {
                (Ok(joint), Ok(first)) => own - (joint - first),
                _ => f64::NAN,
            }
        },
    )?;
    finish_mc(est, prior)
}

/// Seeded Monte Carlo estimate of d_X(θ, π).
pub fn mc_prior_regret(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    n: usize,
    opts: &McOptions,
) -> Result<RegretEstimate> {
    model.check(theta)?;
    let inner = model.inner();
    let est = numerics::mc_mean(
        opts.stream,
        opts.replicates,
        |rng| draw_sample(model, theta, n, rng),
        |x| {
            let own: f64 = x.iter().map(|v| inner.log_f(v, theta)).sum();
            log_marginal(model, prior, x).map_or(f64::NAN, |lm| own - lm)
        },
    )?;
    finish_mc(est, prior)
}

/// Monte Carlo L_{Y|X}(θ, π) with common random numbers for π and π^J.
pub fn mc_predictive_loss(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    n: usize,
    m: usize,
    opts: &McOptions,
) -> Result<RegretEstimate> {
    check_m(m)?;
    model.check(theta)?;
    let jef = jeffreys(model)?;
    let pred = |p: &PriorSpec, z: &[Vec<f64>]| -> Result<f64> {
        Ok(log_marginal(model, p, z)? - log_marginal(model, p, &z[..n])?)
    };
    let probe = draw_sample(model, theta, n + m, &mut opts.stream.rng());
    pred(&jef, &probe)?;
    pred(prior, &probe)?;
    let est = numerics::mc_mean(
        opts.stream,
        opts.replicates,
        |rng| draw_sample(model, theta, n + m, rng),
        |z| match (pred(&jef, z), pred(prior, z)) {
            (Ok(j), Ok(p)) => j - p,
            _ => f64::NAN,
        },
    )?;
    let mut out = finish_mc(est, prior)?;
    out.convention = None;
    Ok(out)
}

/// Exact path when available, Monte Carlo otherwise.
pub fn regret_with_fallback(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    n: usize,
    m: usize,
    opts: &McOptions,
) -> Result<RegretEstimate> {
    match posterior_predictive_regret(model, prior, theta, n, m) {
        Err(Error::UnsupportedPair { .. }) => mc_regret(model, prior, theta, n, m, opts),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Clarke–Barron expansion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClarkeBarron {
    pub n: usize,
    /// d_X(θ, π) − [p/2 log(n/2πe) + log(|i(θ)|^{1/2}/π(θ))].
    pub first_order: f64,
    pub first_order_jeffreys: f64,
    /// n {first_order(π) − first_order(π^J)}, which tends to −L(θ, π)/2.
    pub scaled_difference: f64,
    /// scaled_difference + L(θ, π)/2.
    pub second_order: f64,
    pub loss: f64,
}

fn first_order(model: &ModelFamily, prior: &PriorSpec, theta: &[f64], n: usize) -> Result<f64> {
    if !prior.proper || prior.normalizer.is_none() {
        return Err(Error::Configuration(format!(
            "expansion residual needs a proper prior with known normalization, got {}",
            prior.name
        )));
    }
    let d = prior_predictive_regret(model, prior, theta, n)?;
    let p = model.dim() as f64;
    let log_det = model.fisher_info(theta)?.determinant().ln();
    let lead = 0.5 * p * ((n as f64) / (2.0 * std::f64::consts::PI * std::f64::consts::E)).ln() + 0.5 * log_det
        - prior.log_density_normalized(theta)?;
    Ok(d.value - lead)
}

/// First- and second-order Clarke–Barron residuals at (θ, n).
pub fn clarke_barron_residual(model: &ModelFamily, prior: &PriorSpec, theta: &[f64], n: usize) -> Result<ClarkeBarron> {
    let jef = jeffreys(model)?;
    let fo = first_order(model, prior, theta, n)?;
    let fj = first_order(model, &jef, theta, n)?;
    let loss = asymptotics::predictive_loss(model, prior, theta)?;
    let scaled = n as f64 * (fo - fj);
    Ok(ClarkeBarron {
        n,
        first_order: fo,
        first_order_jeffreys: fj,
        scaled_difference: scaled,
        second_order: scaled + loss / 2.0,
        loss,
    })
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

/// How the prediction size m_n follows n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MRule {
    /// m = n.
    Equal,
    /// m = ⌈√n⌉.
    Sqrt,
    /// m = 1.
    One,
    Fixed(usize),
}

impl MRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "n" | "equal" => Ok(MRule::Equal),
            "sqrt" => Ok(MRule::Sqrt),
            "1" | "one" => Ok(MRule::One),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|m| *m > 0)
                .map(MRule::Fixed)
                .ok_or_else(|| {
                    Error::Parse(format!(
                        "m rule must be n, sqrt, 1 or a positive integer, got {other:?}"
                    ))
                }),
        }
    }

    pub fn apply(self, n: usize) -> usize {
        match self {
            MRule::Equal => n.max(1),
            MRule::Sqrt => ((n as f64).sqrt().ceil() as usize).max(1),
            MRule::One => 1,
            MRule::Fixed(m) => m,
        }
    }
}

/// (n, m_n) pairs for a list of sample sizes.
pub fn schedule(ns: &[usize], rule: MRule) -> Vec<(usize, usize)> {
    ns.iter().map(|&n| (n, rule.apply(n))).collect()
}

/// from, 2·from, … up to and including `to` when it lies on the sequence.
pub fn doubling(from: usize, to: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = from.max(1);
    while n <= to {
        out.push(n);
        n *= 2;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretPoint {
    pub n: usize,
    pub m: usize,
    pub theta: Vec<f64>,
    pub d_post: f64,
    /// Only for proper priors.
    pub d_prior: Option<f64>,
    pub l_post: f64,
    pub c_n: f64,
    pub cn_l: f64,
    pub l_limit: Option<f64>,
    pub abs_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub model: String,
    pub prior: String,
    pub theta: Vec<f64>,
    /// The asymptotic L(θ, π); absent at boundary θ.
    pub l_limit: Option<f64>,
    pub rows: Vec<RegretPoint>,
}

/// c_n L_{Y|X}(θ, π) along a schedule, next to its limit L(θ, π).
pub fn convergence_table(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    sched: &[(usize, usize)],
) -> Result<ConvergenceTable> {
    let l_limit = asymptotics::predictive_loss(model, prior, theta).ok();
    let rows = sched
        .par_iter()
        .map(|&(n, m)| -> Result<RegretPoint> {
            let d_post = posterior_predictive_regret(model, prior, theta, n, m)?.value;
            let d_prior = if prior.proper {
                Some(prior_predictive_regret(model, prior, theta, n)?.value)
            } else {
                None
            };
            let l_post = predictive_loss_finite(model, prior, theta, n, m)?.value;
            let cn = c_n(n, m);
            let cn_l = cn * l_post;
            Ok(RegretPoint {
                n,
                m,
                theta: theta.to_vec(),
                d_post,
                d_prior,
                l_post,
                c_n: cn,
                cn_l,
                l_limit,
                abs_err: l_limit.map(|l| (cn_l - l).abs()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable {
        model: model.name(),
        prior: prior.name.clone(),
        theta: theta.to_vec(),
        l_limit,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Scoring-rule check and τ-averaged quantities (Bernoulli, finite τ)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub prior: String,
    /// ∫ d_{Y|X}(θ, π) dτ(θ).
    pub integrated_regret: f64,
    /// d_{Y|X}(τ, π) under the τ-mixture law.
    pub bayes_regret: f64,
    /// ∫d(θ,π)dτ − d(τ,π) − ∫d(θ,τ)dτ.
    pub decomposition_residual: f64,
    /// d(τ,π) − L(τ,π) − ζ(τ).
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoringReport {
    pub n: usize,
    pub m: usize,
    /// First row is τ itself, then the candidates in order.
    pub rows: Vec<ScoreRow>,
    pub argmin: usize,
    pub tau_first: bool,
    /// ζ_{Y|X}(τ) = d_{Y|X}(τ, π^J).
    pub zeta: f64,
}

fn discrete_parts(tau: &PriorSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    match &tau.kind {
        PriorKind::Discrete { atoms, weights } => Ok((atoms.iter().map(|a| a[0]).collect(), weights.clone())),
        _ => Err(Error::Configuration(format!(
            "τ must be finitely supported, got {}",
            tau.name
        ))),
    }
}

struct TauContext {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    tau_tab: SeqTables,
    jef_tab: SeqTables,
    n: usize,
    m: usize,
}

impl TauContext {
    fn new(model: &ModelFamily, tau: &PriorSpec, n: usize, m: usize) -> Result<Self> {
        if model.family() != Family::Bernoulli {
            return Err(unsupported(model, tau));
        }
        check_m(m)?;
        let (atoms, weights) = discrete_parts(tau)?;
        let lens = [n, n + m];
        Ok(TauContext {
            atoms,
            weights,
            tau_tab: SeqTables::build(&bern_prior(model, tau)?, &lens)?,
            jef_tab: SeqTables::build(&bern_prior(model, &jeffreys(model)?)?, &lens)?,
            n,
            m,
        })
    }

    fn integrated(&self, tab: &SeqTables) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(&t, w)| w * bern_d_post(t, self.n, self.m, tab))
            .sum()
    }

    /// E_{p^τ}[log p^τ(y|x) − log p^π(y|x)].
    fn bayes_regret(&self, tab: &SeqTables) -> f64 {
        let (n, m) = (self.n, self.m);
        bern_tau_mean(n, m, &self.tau_tab, |s, t| {
            self.tau_tab.log_pred(s, n, t, m) - tab.log_pred(s, n, t, m)
        })
    }

    /// E_{p^τ}[log p^J(y|x) − log p^π(y|x)].
    fn bayes_loss(&self, tab: &SeqTables) -> f64 {
        let (n, m) = (self.n, self.m);
        bern_tau_mean(n, m, &self.tau_tab, |s, t| {
            self.jef_tab.log_pred(s, n, t, m) - tab.log_pred(s, n, t, m)
        })
    }
}

/// τ-averaged regret for each candidate and for τ itself; τ must rank first.
pub fn scoring_rule_check(
    model: &ModelFamily,
    tau: &PriorSpec,
    candidates: &[PriorSpec],
    n: usize,
    m: usize,
) -> Result<ScoringReport> {
    let ctx = TauContext::new(model, tau, n, m)?;
    let self_term = ctx.integrated(&ctx.tau_tab);
    let zeta = ctx.bayes_regret(&ctx.jef_tab);
    let mut rows = Vec::with_capacity(candidates.len() + 1);
    for (name, spec) in std::iter::once(("tau".to_string(), tau)).chain(candidates.iter().map(|c| (c.name.clone(), c)))
    {
        let tab = SeqTables::build(&bern_prior(model, spec)?, &[n, n + m])?;
        let integrated = ctx.integrated(&tab);
        let bayes = ctx.bayes_regret(&tab);
        let loss = ctx.bayes_loss(&tab);
        rows.push(ScoreRow {
            prior: name,
            integrated_regret: integrated,
            bayes_regret: bayes,
            decomposition_residual: integrated - bayes - self_term,
            identity_residual: bayes - loss - zeta,
        });
    }
    let argmin = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.integrated_regret.total_cmp(&b.1.integrated_regret))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let tau_first = rows
        .iter()
        .all(|r| rows[0].integrated_regret <= r.integrated_regret + 1e-12);
    Ok(ScoringReport {
        n,
        m,
        rows,
        argmin,
        tau_first,
        zeta,
    })
}

/// ∫ L_{Y|X}(θ, π) dτ(θ) for finitely supported or compact scalar τ.
/// Other τ are refused: the finite-n expectation need not exist.
pub fn expected_finite_loss(
    model: &ModelFamily,
    tau: &PriorSpec,
    prior: &PriorSpec,
    n: usize,
    m: usize,
) -> Result<f64> {
    if let PriorKind::Discrete { atoms, weights } = &tau.kind {
        let mut acc = 0.0;
        for (a, w) in atoms.iter().zip(weights) {
            acc += w * predictive_loss_finite(model, prior, a, n, m)?.value;
        }
        return Ok(acc);
    }
    match tau.support_box() {
        Some(b) if b.len() == 1 && tau.is_compact() => {
            let (lo, hi) = b[0];
            let dens = |t: f64| prior_log(tau, &[t]).exp();
            let mass = numerics::adaptive_integrate(dens, lo, hi, 1e-10)?;
            let num = numerics::adaptive_integrate(
                |t| {
                    let w = dens(t);
                    if w == 0.0 {
                        return 0.0;
                    }
                    predictive_loss_finite(model, prior, &[t], n, m).map_or(f64::NAN, |l| w * l.value)
                },
                lo,
                hi,
                1e-8,
            )?;
            Ok(num / mass)
        }
        _ => Err(Error::Configuration(format!(
            "expected loss is evaluated only for finitely supported or compact scalar τ, got {}",
            tau.name
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bern() -> ModelFamily {
        ModelFamily::bernoulli()
    }

    fn obs(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn polya_next_success() {
        let x = obs(&[1.0, 1.0, 1.0, 0.0, 0.0]);
        let k = posterior_predictive(&bern(), &PriorSpec::beta(0.5, 0.5).unwrap(), &x, 1).unwrap();
        assert_relative_eq!(k.success_probability().unwrap(), 3.5 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(
            k.log_predictive(&obs(&[1.0])).unwrap().exp(),
            3.5 / 6.0,
            epsilon = 1e-14
        );
        let k0 = posterior_predictive(&bern(), &PriorSpec::beta(2.0, 3.0).unwrap(), &[], 1).unwrap();
        assert_relative_eq!(k0.success_probability().unwrap(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn bernoulli_predictive_normalizes() {
        let k = posterior_predictive(&bern(), &PriorSpec::beta(1.5, 0.7).unwrap(), &obs(&[1.0, 0.0, 1.0]), 4).unwrap();
        let mut total = 0.0;
        for bits in 0..16u32 {
            let y: Vec<Vec<f64>> = (0..4).map(|i| vec![((bits >> i) & 1) as f64]).collect();
            total += k.log_predictive(&y).unwrap().exp();
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn normal_mean_predictive_is_normal() {
        let model = ModelFamily::normal_mean();
        let x = obs(&[0.3, -1.2, 0.8, 2.1]);
        let k = posterior_predictive(&model, &PriorSpec::flat(&model), &x, 1).unwrap();
        let xbar = 0.5;
        for y in [-2.0, 0.0, 0.5, 3.0] {
            let var: f64 = 1.25;
            let want = -0.5 * (LN_2PI + var.ln()) - (y - xbar) * (y - xbar) / (2.0 * var);
            assert_relative_eq!(k.log_predictive(&obs(&[y])).unwrap(), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn scale_predictive_normalizes() {
        let model = ModelFamily::normal_ms();
        let p = PriorSpec::power_sigma(&model, 1.0).unwrap();
        let k = posterior_predictive(&model, &p, &obs(&[0.3, -1.2, 0.8]), 1).unwrap();
        let mass = numerics::adaptive_integrate(
            |s| {
                let y = s / (1.0 - s * s);
                let jac = (1.0 + s * s) / (1.0 - s * s).powi(2);
                k.log_predictive(&obs(&[y])).unwrap().exp() * jac
            },
            -1.0 + 1e-9,
            1.0 - 1e-9,
            1e-10,
        )
        .unwrap();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn non_conjugate_pair_is_refused() {
        let model = ModelFamily::normal_mean();
        let p = PriorSpec::custom(
            "c",
            vec![(f64::NEG_INFINITY, f64::INFINITY)],
            std::sync::Arc::new(|t: &[f64]| -t[0].abs()),
        );
        assert!(matches!(
            posterior_predictive(&model, &p, &[], 1),
            Err(Error::UnsupportedPair { .. })
        ));
    }

    #[test]
    fn point_mass_has_zero_regret() {
        let p = PriorSpec::discrete(vec![vec![0.3]], vec![1.0]).unwrap();
        let d = posterior_predictive_regret(&bern(), &p, &[0.3], 6, 3).unwrap();
        assert!(d.value.abs() < 1e-13);
    }

    #[test]
    fn jeffreys_loss_is_zero() {
        for model in [bern(), ModelFamily::normal_mean(), ModelFamily::normal_ls()] {
            let j = jeffreys(&model).unwrap();
            let theta = model.inner().default_grid()[1].clone();
            let l = predictive_loss_finite(&model, &j, &theta, 7, 3).unwrap();
            assert_eq!(l.value, 0.0);
        }
    }

    #[test]
    fn chain_rule_bernoulli() {
        let p = PriorSpec::beta(2.0, 3.0).unwrap();
        let r = chain_rule_residual(&bern(), &p, &[0.35], 5, 3).unwrap();
        assert!(r.abs() < 1e-12, "{r}");
    }

    #[test]
    fn chain_rule_normal_mean() {
        let model = ModelFamily::normal_mean();
        let p = PriorSpec::normal(0.5, 2.0).unwrap();
        let r = chain_rule_residual(&model, &p, &[-0.4], 5, 3).unwrap();
        assert!(r.abs() < 1e-12, "{r}");
    }

    #[test]
    fn exp_tilt_loss_is_c_squared() {
        let model = ModelFamily::normal_mean();
        let p = PriorSpec::exp_tilt(1.7, 0.0);
        for (n, m) in [(1, 1), (4, 9), (100, 3)] {
            let l = predictive_loss_finite(&model, &p, &[0.2], n, m).unwrap().value;
            assert_relative_eq!(c_n(n, m) * l, 1.7 * 1.7, epsilon = 1e-11);
        }
    }

    #[test]
    fn scale_loss_constant_and_limit() {
        for model in [ModelFamily::normal_ms(), ModelFamily::normal_ls()] {
            let p = PriorSpec::power_sigma(&model, 1.0).unwrap();
            let a = predictive_loss_finite(&model, &p, &model.inner().default_grid()[0], 20, 20).unwrap();
            let b = predictive_loss_finite(&model, &p, &model.inner().default_grid()[5], 20, 20).unwrap();
            assert_eq!(a.value, b.value);
            let far = predictive_loss_finite(&model, &p, &model.inner().default_grid()[0], 4000, 4000).unwrap();
            assert!((c_n(4000, 4000) * far.value + 0.5).abs() < 1e-2);
        }
    }

    #[test]
    fn scale_divergence_is_flagged() {
        let model = ModelFamily::normal_ms();
        let p = PriorSpec::power_sigma(&model, 0.0).unwrap();
        let d = posterior_predictive_regret(&model, &p, &[0.0, 1.0], 1, 1).unwrap();
        assert!(d.divergence.is_some() && !d.is_finite());
        let d = posterior_predictive_regret(&model, &p, &[0.0, 1.0], 3, 1).unwrap();
        assert!(d.is_finite());
    }

    #[test]
    fn mc_agrees_with_exact() {
        let cases: Vec<(ModelFamily, PriorSpec, Vec<f64>)> = vec![
            (bern(), PriorSpec::beta(1.5, 1.5).unwrap(), vec![0.3]),
            (
                ModelFamily::normal_mean(),
                PriorSpec::normal(0.0, 1.0).unwrap(),
                vec![0.7],
            ),
        ];
        for (model, prior, theta) in cases {
            let exact = posterior_predictive_regret(&model, &prior, &theta, 6, 2).unwrap().value;
            for seed in [1, 2, 3] {
                let opts = McOptions {
                    stream: SeededStream::new(seed, 7),
                    replicates: 4000,
                };
                let mc = mc_regret(&model, &prior, &theta, 6, 2, &opts).unwrap();
                assert!(
                    (mc.value - exact).abs() < 3.0 * mc.std_error,
                    "{} {} {exact}",
                    mc.value,
                    mc.std_error
                );
            }
        }
    }

    #[test]
    fn numeric_marginal_matches_closed_form() {
        let p = PriorSpec::beta(1.5, 2.5).unwrap();
        let custom = PriorSpec {
            kind: PriorKind::Custom(std::sync::Arc::new(|t: &[f64]| {
                0.5 * t[0].ln() + 1.5 * (1.0 - t[0]).ln()
            })),
            ..p.clone()
        };
        let x = obs(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(
            log_marginal(&bern(), &custom, &x).unwrap(),
            log_marginal(&bern(), &p, &x).unwrap(),
            epsilon = 1e-10
        );
        let model = ModelFamily::normal_mean();
        let np = PriorSpec::normal(0.3, 0.5).unwrap();
        let gauss = PriorSpec {
            kind: PriorKind::Custom(std::sync::Arc::new(|t: &[f64]| -(t[0] - 0.3).powi(2))),
            ..np.clone()
        };
        let y = obs(&[0.1, 1.4, -0.2]);
        assert_relative_eq!(
            log_marginal(&model, &gauss, &y).unwrap(),
            log_marginal(&model, &np, &y).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn quadrature_counts_match_closed_counts() {
        let p = PriorSpec::beta(1.5, 1.5).unwrap();
        let custom = PriorSpec {
            kind: PriorKind::Custom(std::sync::Arc::new(|t: &[f64]| {
                0.5 * t[0].ln() + 0.5 * (1.0 - t[0]).ln()
            })),
            ..p.clone()
        };
        let a = posterior_predictive_regret(&bern(), &p, &[0.3], 12, 4).unwrap();
        let b = posterior_predictive_regret(&bern(), &custom, &[0.3], 12, 4).unwrap();
        assert_eq!(b.method, Method::CountsQuadrature);
        assert_relative_eq!(a.value, b.value, epsilon = 1e-10);
    }

    #[test]
    fn boundary_theta_collapses() {
        let p = PriorSpec::beta(1.5, 1.5).unwrap();
        let l = predictive_loss_finite(&bern(), &p, &[0.0], 10, 1).unwrap().value;
        // Only x = 0…0, y = 0 has mass.
        let want = ((0.5 + 10.0) / 11.0f64).ln() - ((1.5 + 10.0) / 13.0f64).ln();
        assert_relative_eq!(l, want, epsilon = 1e-14);
    }

    #[test]
    fn scoring_prefers_tau() {
        let tau = PriorSpec::discrete(vec![vec![0.3], vec![0.7]], vec![1.0, 1.0]).unwrap();
        let cands = [PriorSpec::beta(0.5, 0.5).unwrap(), PriorSpec::beta(2.0, 2.0).unwrap()];
        let r = scoring_rule_check(&bern(), &tau, &cands, 4, 2).unwrap();
        assert!(r.tau_first);
        assert_eq!(r.argmin, 0);
        for row in &r.rows {
            assert!(row.decomposition_residual.abs() < 1e-12);
            assert!(row.identity_residual.abs() < 1e-12);
        }
        assert!(r.rows[0].bayes_regret.abs() < 1e-14);
    }

    #[test]
    fn m_rules() {
        assert_eq!(schedule(&[16, 17], MRule::Sqrt), vec![(16, 4), (17, 5)]);
        assert_eq!(MRule::parse("n").unwrap(), MRule::Equal);
        assert!(MRule::parse("0").is_err());
        assert_eq!(doubling(32, 512), vec![32, 64, 128, 256, 512]);
        assert_eq!(c_n(100, 100), 400.0);
    }
}
