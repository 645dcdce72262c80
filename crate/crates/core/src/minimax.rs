//! Equalizer scans, minimax verification through compact prior sequences,
//! predictive-information limits and the finite-sample U-class diagnostic.

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{self, LossSurface};
use crate::error::{Error, Result};
use crate::exact::{self, MRule};
use crate::models::{Family, ModelFamily};
use crate::priors::{tau_k, CompactPriorSequence, Construction, HClassDensity, PriorKind, PriorSpec};

/// Default τ_k indices.
pub const DEFAULT_K_VALUES: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];

/// maxdev tolerance for calling a loss surface constant.
pub fn equalizer_tolerance(mean: f64) -> f64 {
    1e-6 * mean.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// Equalizer scans
// ---------------------------------------------------------------------------

/// One-parameter prior families scanned for equalizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorFamily {
    /// σ^{-a}.
    PowerSigma,
    /// |Σ|^{-(4-a)/2}.
    MvnPower,
    /// Beta(a, a).
    SymmetricBeta,
}

impl PriorFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "power-sigma" => Ok(PriorFamily::PowerSigma),
            "mvn-power" => Ok(PriorFamily::MvnPower),
            "beta-sym" => Ok(PriorFamily::SymmetricBeta),
            other => Err(Error::Parse(format!(
                "unknown prior family {other:?}; expected power-sigma, mvn-power or beta-sym"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorFamily::PowerSigma => "power-sigma",
            PriorFamily::MvnPower => "mvn-power",
            PriorFamily::SymmetricBeta => "beta-sym",
        }
    }

    pub fn member(&self, model: &ModelFamily, a: f64) -> Result<PriorSpec> {
        match self {
            PriorFamily::PowerSigma => PriorSpec::power_sigma(model, a),
            PriorFamily::MvnPower => PriorSpec::mvn_power(model, a),
            PriorFamily::SymmetricBeta => PriorSpec::beta(a, a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualizerRow {
    pub a: f64,
    /// Mean of L(θ, π^a) over the grid.
    pub constant: f64,
    pub maxdev: f64,
    pub equalizer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualizerReport {
    pub model: String,
    pub family: PriorFamily,
    pub rows: Vec<EqualizerRow>,
    /// Smallest constant among the members that pass the tolerance.
    pub argmin_a: Option<f64>,
    pub min_constant: Option<f64>,
}

/// L(θ, π^a) over `theta_grid` for each a, with constancy statistics.
pub fn equalizer_scan(
    model: &ModelFamily,
    family: PriorFamily,
    a_grid: &[f64],
    theta_grid: &[Vec<f64>],
) -> Result<EqualizerReport> {
    let surfaces: Vec<LossSurface> = a_grid
        .par_iter()
        .map(|&a| asymptotics::loss_surface(model, &family.member(model, a)?, theta_grid))
        .collect::<Result<_>>()?;
    let rows: Vec<EqualizerRow> = a_grid
        .iter()
        .zip(&surfaces)
        .map(|(&a, s)| EqualizerRow {
            a,
            constant: s.mean,
            maxdev: s.maxdev,
            equalizer: s.maxdev < equalizer_tolerance(s.mean),
        })
        .collect();
    let best = rows
        .iter()
        .filter(|r| r.equalizer)
        .min_by(|x, y| x.constant.total_cmp(&y.constant));
    Ok(EqualizerReport {
        model: model.name(),
        family,
        argmin_a: best.map(|r| r.a),
        min_constant: best.map(|r| r.constant),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Minimax certificates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateStatus {
    Verified,
    VerificationFailed,
    /// The machinery declines to certify this model.
    Refused,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimaxCertificate {
    pub model: String,
    pub prior: String,
    /// The constant loss c of π₀.
    pub c: f64,
    pub c_maxdev: f64,
    pub sequence: String,
    pub k_values: Vec<f64>,
    /// d(τ_k, π₀).
    pub d_values: Vec<f64>,
    /// ζ(τ_k).
    pub zeta_values: Vec<f64>,
    /// Analytic bound on d(τ_k, π₀) per k, where one is known.
    pub bound_values: Vec<Option<f64>>,
    pub status: CertificateStatus,
    pub notes: Vec<String>,
}

impl MinimaxCertificate {
    pub fn verified(&self) -> bool {
        self.status == CertificateStatus::Verified
    }
}

fn power_a(prior: &PriorSpec) -> Option<f64> {
    match prior.kind {
        PriorKind::PowerSigma { a, .. } => Some(a),
        _ => None,
    }
}

/// The closed-form bound on d(τ_k, π₀) for the sequences where one is known.
pub fn analytic_bound(model: &ModelFamily, prior: &PriorSpec, seq: &CompactPriorSequence) -> Result<Option<f64>> {
    let alpha = seq.h.alpha()?;
    let k2 = seq.k * seq.k;
    Ok(match (model.family(), seq.construction) {
        (Family::NormalMean, Construction::LineScale) if matches!(prior.kind, PriorKind::Flat) => Some(alpha / k2),
        (Family::NormalMs { log_scale: true }, Construction::LocationLogscale)
            if power_a(prior) == Some(1.0) || matches!(prior.kind, PriorKind::Flat) =>
        {
            Some(1.5 * alpha / k2)
        }
        (Family::LinReg { .. }, Construction::RegressionLogscale { .. }) if power_a(prior) == Some(1.0) => {
            let lr = model.inner().fisher_closed(&vec![0.0; model.dim()]);
            let q = model.dim() - 1;
            let trace = match lr {
                // i = diag(V, 2) at λ = 0.
                Some(i) => i
                    .view((0, 0), (q, q))
                    .into_owned()
                    .try_inverse()
                    .map(|v| v.trace())
                    .ok_or_else(|| Error::domain("design Gram matrix is singular"))?,
                None => return Ok(None),
            };
            Some(alpha * (trace + 0.5) / k2)
        }
        _ => None,
    })
}

/// Relative slack allowed when comparing quadrature values to bounds.
const BOUND_SLACK: f64 = 1e-8;

/// d(τ_k, π₀) and ζ(τ_k) along a compact prior sequence, with the decay and
/// bound checks that make up a minimax certificate.
pub fn minimax_verify(
    model: &ModelFamily,
    prior: &PriorSpec,
    construction: Construction,
    h: HClassDensity,
    k_values: &[f64],
) -> Result<MinimaxCertificate> {
    let sequence = format!("{}[h=Beta({},{})]", construction.name(), h.a, h.b);
    let mut cert = MinimaxCertificate {
        model: model.name(),
        prior: prior.name.clone(),
        c: f64::NAN,
        c_maxdev: f64::NAN,
        sequence,
        k_values: k_values.to_vec(),
        d_values: Vec::new(),
        zeta_values: Vec::new(),
        bound_values: Vec::new(),
        status: CertificateStatus::Verified,
        notes: Vec::new(),
    };
    if model.family() == Family::Mvn2 {
        cert.status = CertificateStatus::Refused;
        cert.k_values.clear();
        cert.notes.push(
            "bivariate normal: equalizer constants are reported by the scan, but no decaying compact \
             sequence is available, so minimaxity is not certified"
                .into(),
        );
        return Ok(cert);
    }
    if k_values.is_empty() {
        return Err(Error::Configuration("minimax verification needs at least one k".into()));
    }
    let surface = asymptotics::loss_surface(model, prior, &model.inner().default_grid())?;
    cert.c = surface.mean;
    cert.c_maxdev = surface.maxdev;
    if surface.maxdev >= equalizer_tolerance(surface.mean) {
        cert.status = CertificateStatus::VerificationFailed;
        cert.notes.push(format!(
            "{} is not an equalizer: loss varies by {:.3e} over the default grid",
            prior.name, surface.maxdev
        ));
    }
    let per_k: Vec<(f64, f64, Option<f64>)> = k_values
        .par_iter()
        .map(|&k| {
            let seq = CompactPriorSequence::new(construction, h, k)?;
            let tau = tau_k(&seq, model)?;
            let d = asymptotics::asymptotic_regret(model, &tau, prior)?;
            let z = asymptotics::predictive_information(model, &tau)?;
            Ok((d, z, analytic_bound(model, prior, &seq)?))
        })
        .collect::<Result<_>>()?;
    cert.d_values = per_k.iter().map(|r| r.0).collect();
    cert.zeta_values = per_k.iter().map(|r| r.1).collect();
    cert.bound_values = per_k.iter().map(|r| r.2).collect();

    let d = &cert.d_values;
    if d.iter().any(|v| *v < -1e-10) {
        cert.status = CertificateStatus::VerificationFailed;
        cert.notes.push("negative d(τ_k, π₀)".into());
    }
    if d.len() > 1 {
        let decreasing = d.windows(2).all(|w| w[1] < w[0]);
        let k_ratio = k_values[k_values.len() - 1] / k_values[0];
        if !decreasing || d[d.len() - 1] > d[0] / k_ratio {
            cert.status = CertificateStatus::VerificationFailed;
            cert.notes.push("d(τ_k, π₀) does not decay toward 0".into());
        }
    }
    for ((k, dv), b) in k_values.iter().zip(d).zip(&cert.bound_values) {
        if let Some(b) = b {
            if *dv > b * (1.0 + BOUND_SLACK) {
                cert.status = CertificateStatus::VerificationFailed;
                cert.notes
                    .push(format!("d(τ_k, π₀) = {dv} exceeds the bound {b} at k = {k}"));
            }
        }
    }
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoLimitRow {
    pub k: f64,
    pub zeta: f64,
    pub d: f64,
    /// |ζ(τ_k) + c|.
    pub gap: f64,
    /// ζ(τ_k) − d(τ_k, π₀) + c.
    pub identity_residual: f64,
}

/// ζ(τ_k) against its limit −c along a compact prior sequence.
pub fn information_limit_check(
    model: &ModelFamily,
    prior: &PriorSpec,
    c: f64,
    construction: Construction,
    h: HClassDensity,
    k_values: &[f64],
) -> Result<Vec<InfoLimitRow>> {
    let taus: Vec<(f64, PriorSpec)> = k_values
        .iter()
        .map(|&k| Ok((k, tau_k(&CompactPriorSequence::new(construction, h, k)?, model)?)))
        .collect::<Result<_>>()?;
    information_limit_rows(model, prior, c, &taus)
}

/// As [`information_limit_check`] for an arbitrary labelled list of proper
/// compact priors.
pub fn information_limit_rows(
    model: &ModelFamily,
    prior: &PriorSpec,
    c: f64,
    taus: &[(f64, PriorSpec)],
) -> Result<Vec<InfoLimitRow>> {
    taus.par_iter()
        .map(|(k, tau)| {
            let zeta = asymptotics::predictive_information(model, tau)?;
            let d = asymptotics::asymptotic_regret(model, tau, prior)?;
            Ok(InfoLimitRow {
                k: *k,
                zeta,
                d,
                gap: (zeta + c).abs(),
                identity_residual: zeta - d + c,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// U-class diagnostic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Growth {
    Bounded,
    Diverging,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UClassRow {
    pub n: usize,
    pub m: usize,
    /// sup over the grid of c_n L_{Y|X}(θ, π).
    pub sup: f64,
    pub argsup: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UClassReport {
    pub model: String,
    pub prior: String,
    pub rows: Vec<UClassRow>,
    pub slope: f64,
    pub slope_se: f64,
    pub growth: Growth,
}

/// Least squares of y on x: (intercept, slope, slope standard error).
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    let se = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (icpt, slope, se)
}

/// sup_θ c_n L_{Y|X}(θ, π) over `theta_grid` for each n, classified as
/// bounded or diverging by a straight-line fit over the largest three n.
/// Diverging needs the slope to exceed ten standard errors and to add more
/// than one unit of c_n L over the largest n.
pub fn u_class_diagnostic(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta_grid: &[Vec<f64>],
    n_values: &[usize],
    m_rule: MRule,
) -> Result<UClassReport> {
    if n_values.len() < 3 {
        return Err(Error::Configuration(
            "U-class diagnostic needs at least three sample sizes".into(),
        ));
    }
    if theta_grid.is_empty() {
        return Err(Error::Configuration(
            "U-class diagnostic needs a non-empty θ grid".into(),
        ));
    }
    let rows: Vec<UClassRow> = n_values
        .par_iter()
        .map(|&n| {
            let m = m_rule.apply(n);
            let cn = exact::c_n(n, m);
            let mut best = (f64::NEG_INFINITY, theta_grid[0].clone());
            for t in theta_grid {
                let l = exact::predictive_loss_finite(model, prior, t, n, m)?;
                if !l.is_finite() {
                    return Err(Error::domain(format!(
                        "finite-sample loss diverges at n = {n}: {}",
                        l.divergence.unwrap_or_default()
                    )));
                }
                if cn * l.value > best.0 {
                    best = (cn * l.value, t.clone());
                }
            }
            Ok(UClassRow {
                n,
                m,
                sup: best.0,
                argsup: best.1,
            })
        })
        .collect::<Result<_>>()?;
    let mut tail: Vec<&UClassRow> = rows.iter().collect();
    tail.sort_by_key(|r| r.n);
    let tail = &tail[tail.len() - 3..];
    let x: Vec<f64> = tail.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = tail.iter().map(|r| r.sup).collect();
    let (_, slope, se) = line_fit(&x, &y);
    let n_max = x[2];
    let growth = if slope > 10.0 * se && slope * n_max > 1.0 {
        Growth::Diverging
    } else {
        Growth::Bounded
    };
    Ok(UClassReport {
        model: model.name(),
        prior: prior.name.clone(),
        rows,
        slope,
        slope_se: se,
        growth,
    })
}
