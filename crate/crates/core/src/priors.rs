//! Prior densities on Θ as log densities with derivative evaluators,
//! Jeffreys priors, smooth compactly supported H-class densities and the
//! compact prior sequences τ_k built from them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::models::{CoordMap, Family, ModelFamily};
use crate::numerics::{self, DiffOptions};

/// log π and its first two derivatives at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoDerivatives {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Where a prior puts mass.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSupport {
    /// Open box; compact when every end is finite.
    Box(Vec<(f64, f64)>),
    /// Finitely many atoms (no Lebesgue density).
    Atoms(Vec<Vec<f64>>),
}

/// Smooth density h on (−1, 1): the law of U = 2V − 1 with V ~ Beta(a, b).
/// Requires a, b > 3 so that h, h′, h″ vanish at ±1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HClassDensity {
    pub a: f64,
    pub b: f64,
}

impl HClassDensity {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 3.0 && b > 3.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidHClass { a, b });
        }
        Ok(HClassDensity { a, b })
    }

    /// Beta(4, 4)-based member.
    pub fn default_member() -> Self {
        HClassDensity { a: 4.0, b: 4.0 }
    }

    /// g(u) = log h(u).
    pub fn g(&self, u: f64) -> f64 {
        -std::f64::consts::LN_2 + (self.a - 1.0) * (0.5 * (1.0 + u)).ln() + (self.b - 1.0) * (0.5 * (1.0 - u)).ln()
            - ln_beta(self.a, self.b)
    }

    pub fn h(&self, u: f64) -> f64 {
        if u <= -1.0 || u >= 1.0 {
            0.0
        } else {
            self.g(u).exp()
        }
    }

    pub fn g1(&self, u: f64) -> f64 {
        (self.a - 1.0) / (1.0 + u) - (self.b - 1.0) / (1.0 - u)
    }

    pub fn g2(&self, u: f64) -> f64 {
        -(self.a - 1.0) / (1.0 + u).powi(2) - (self.b - 1.0) / (1.0 - u).powi(2)
    }

    /// h′ = h g′.
    pub fn h1(&self, u: f64) -> f64 {
        self.h(u) * self.g1(u)
    }

    /// h″ = h (g″ + g′²).
    pub fn h2(&self, u: f64) -> f64 {
        let g1 = self.g1(u);
        self.h(u) * (self.g2(u) + g1 * g1)
    }

    /// α = ∫ g′(u)² h(u) du, by adaptive Gauss–Legendre.
    pub fn alpha(&self) -> Result<f64> {
        numerics::adaptive_integrate(
            |u| {
                let g1 = self.g1(u);
                g1 * g1 * self.h(u)
            },
            -1.0,
            1.0,
            1e-13,
        )
    }

    /// Closed form of α for the Beta-based member.
    pub fn alpha_closed(&self) -> f64 {
        let (a, b) = (self.a, self.b);
        0.25 * (a + b - 1.0) * (a + b - 2.0) * ((a - 1.0) / (a - 2.0) - 2.0 + (b - 1.0) / (b - 2.0))
    }
}

/// Scaling maps taking U ∈ (−1, 1)^p to θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Construction {
    /// θ = kU on Θ = R.
    LineScale,
    /// θ = 1 + k(U + 1) on Θ = (0, ∞).
    HalflineShift,
    /// (β, λ) = (k e^k U₁, k U₂).
    LocationLogscale,
    /// β_r = k e^k U_r (r ≤ q), λ = k U_{q+1}.
    RegressionLogscale { q: usize },
}

impl Construction {
    pub fn name(&self) -> String {
        match self {
            Construction::LineScale => "line-scale".into(),
            Construction::HalflineShift => "halfline-shift".into(),
            Construction::LocationLogscale => "location-logscale".into(),
            Construction::RegressionLogscale { .. } => "regression-logscale".into(),
        }
    }

    pub fn parse(s: &str, model_dim: usize) -> Result<Self> {
        match s {
            "line-scale" => Ok(Construction::LineScale),
            "halfline-shift" => Ok(Construction::HalflineShift),
            "location-logscale" => Ok(Construction::LocationLogscale),
            "regression-logscale" => Ok(Construction::RegressionLogscale {
                q: model_dim.saturating_sub(1).max(1),
            }),
            other => Err(Error::Parse(format!("unknown tau-k construction '{other}'"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Construction::LineScale | Construction::HalflineShift => 1,
            Construction::LocationLogscale => 2,
            Construction::RegressionLogscale { q } => q + 1,
        }
    }
}

/// τ_k: θ_r = shift_r + k_r U_r with independent U_r ~ h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompactPriorSequence {
    pub construction: Construction,
    pub h: HClassDensity,
    pub k: f64,
}

impl CompactPriorSequence {
    pub fn new(construction: Construction, h: HClassDensity, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Configuration(format!("tau-k index must be positive, got {k}")));
        }
        Ok(CompactPriorSequence { construction, h, k })
    }

    /// Per-coordinate (shift, scale).
    pub fn scales(&self) -> Vec<(f64, f64)> {
        let k = self.k;
        match self.construction {
            Construction::LineScale => vec![(0.0, k)],
            Construction::HalflineShift => vec![(1.0 + k, k)],
            Construction::LocationLogscale => vec![(0.0, k * k.exp()), (0.0, k)],
            Construction::RegressionLogscale { q } => {
                let mut v = vec![(0.0, k * k.exp()); q];
                v.push((0.0, k));
                v
            }
        }
    }

    /// Closed support box.
    pub fn support(&self) -> Vec<(f64, f64)> {
        self.scales().iter().map(|&(c, s)| (c - s, c + s)).collect()
    }

    fn to_u(&self, theta: &[f64]) -> Vec<f64> {
        self.scales()
            .iter()
            .zip(theta)
            .map(|(&(c, s), &t)| (t - c) / s)
            .collect()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let u = self.to_u(theta);
        if u.iter().any(|v| v.abs() >= 1.0) {
            return f64::NEG_INFINITY;
        }
        self.scales()
            .iter()
            .zip(&u)
            .map(|(&(_, s), &ui)| self.h.g(ui) - s.ln())
            .sum()
    }

    fn derivatives(&self, theta: &[f64]) -> RhoDerivatives {
        let u = self.to_u(theta);
        let sc = self.scales();
        let p = sc.len();
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for r in 0..p {
            let s = sc[r].1;
            grad[r] = self.h.g1(u[r]) / s;
            hess[(r, r)] = self.h.g2(u[r]) / (s * s);
        }
        RhoDerivatives {
            value: self.log_density(theta),
            grad,
            hess,
        }
    }

    /// The τ_k prior itself.
    pub fn prior(&self) -> PriorSpec {
        let support = self.support().into_iter().collect::<Vec<_>>();
        PriorSpec {
            name: format!(
                "tau-k:{},{},{},{}",
                self.construction.name(),
                fmt_num(self.k),
                fmt_num(self.h.a),
                fmt_num(self.h.b)
            ),
            kind: PriorKind::Compact(*self),
            support: PriorSupport::Box(support),
            proper: true,
            normalizer: Some(0.0),
            offset: 0.0,
        }
    }
}

/// τ_k for a model, checking that the construction fits its parameter space.
pub fn tau_k(seq: &CompactPriorSequence, model: &ModelFamily) -> Result<PriorSpec> {
    if seq.construction.dim() != model.dim() {
        return Err(Error::Configuration(format!(
            "{} needs a {}-parameter model, {} has {}",
            seq.construction.name(),
            seq.construction.dim(),
            model.name(),
            model.dim()
        )));
    }
    let domain = model.inner().domain();
    for (r, (&(lo, hi), &(dlo, dhi))) in seq.support().iter().zip(&domain).enumerate() {
        if !(lo > dlo && hi < dhi) {
            return Err(Error::Configuration(format!(
                "{} support [{lo}, {hi}] in coordinate {r} is not inside ({dlo}, {dhi}) of {}",
                seq.construction.name(),
                model.name()
            )));
        }
    }
    Ok(seq.prior())
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Prior families with closed-form derivatives, plus generic wrappers.
#[derive(Clone)]
pub enum PriorKind {
    /// Constant on its box.
    Flat,
    /// Beta(a, b) on (0, 1).
    Beta {
        a: f64,
        b: f64,
    },
    /// ρ = c(θ − θ₀), scalar.
    ExpTilt {
        c: f64,
        theta0: f64,
    },
    /// N(mean, var), scalar.
    Normal {
        mean: f64,
        var: f64,
    },
    /// π ∝ σ^{-a} in the scale coordinate `index`; in λ = log σ coordinates
    /// that is e^{-(a-1)λ}.
    PowerSigma {
        a: f64,
        index: usize,
        log_scale: bool,
    },
    /// π^a ∝ |Σ|^{-(4-a)/2} for the bivariate normal, which in (ψ₁, ψ₂, β₂₁, μ)
    /// coordinates is ψ₁^{-1-a} ψ₂^{1-a}.
    MvnPower {
        a: f64,
    },
    /// ½ log|i(θ)| evaluated through the model.
    JeffreysNumeric(ModelFamily),
    Compact(CompactPriorSequence),
    /// π_η(η) = π(θ(η)) |det ∂θ/∂η|.
    Transformed {
        base: Box<PriorSpec>,
        map: Arc<dyn CoordMap>,
    },
    /// Finitely supported prior.
    Discrete {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    /// Arbitrary log density; derivatives by finite differences.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorKind::Flat => write!(f, "Flat"),
            PriorKind::Beta { a, b } => write!(f, "Beta({a}, {b})"),
            PriorKind::ExpTilt { c, theta0 } => write!(f, "ExpTilt({c}, {theta0})"),
            PriorKind::Normal { mean, var } => write!(f, "Normal({mean}, {var})"),
            PriorKind::PowerSigma { a, index, log_scale } => {
                write!(f, "PowerSigma(a={a}, index={index}, log_scale={log_scale})")
            }
            PriorKind::MvnPower { a } => write!(f, "MvnPower({a})"),
            PriorKind::JeffreysNumeric(m) => write!(f, "JeffreysNumeric({})", m.name()),
            PriorKind::Compact(s) => write!(f, "Compact({s:?})"),
            PriorKind::Transformed { base, map } => write!(f, "Transformed({:?}, {})", base.kind, map.name()),
            PriorKind::Discrete { atoms, weights } => write!(f, "Discrete({atoms:?}, {weights:?})"),
            PriorKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A prior on Θ given by log π up to an additive constant.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub name: String,
    pub kind: PriorKind,
    pub support: PriorSupport,
    pub proper: bool,
    /// log ∫ exp(log_pi) when proper and known.
    pub normalizer: Option<f64>,
    /// Constant added to log_pi; never changes constant-free outputs.
    pub offset: f64,
}

fn full_box(model: &ModelFamily) -> PriorSupport {
    PriorSupport::Box(model.inner().domain())
}

impl PriorSpec {
    pub fn flat(model: &ModelFamily) -> Self {
        PriorSpec {
            name: "flat".into(),
            kind: PriorKind::Flat,
            support: full_box(model),
            proper: false,
            normalizer: None,
            offset: 0.0,
        }
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Configuration(format!(
                "beta shapes must be positive, got ({a}, {b})"
            )));
        }
        Ok(PriorSpec {
            name: format!("beta:{a},{b}"),
            kind: PriorKind::Beta { a, b },
            support: PriorSupport::Box(vec![(0.0, 1.0)]),
            proper: true,
            normalizer: Some(ln_beta(a, b)),
            offset: 0.0,
        })
    }

    pub fn exp_tilt(c: f64, theta0: f64) -> Self {
        PriorSpec {
            name: format!("exp-tilt:{c}"),
            kind: PriorKind::ExpTilt { c, theta0 },
            support: PriorSupport::Box(vec![(f64::NEG_INFINITY, f64::INFINITY)]),
            proper: false,
            normalizer: None,
            offset: 0.0,
        }
    }

    pub fn normal(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::Configuration(format!(
                "normal prior variance must be positive, got {var}"
            )));
        }
        Ok(PriorSpec {
            name: format!("normal:{mean},{var}"),
            kind: PriorKind::Normal { mean, var },
            support: PriorSupport::Box(vec![(f64::NEG_INFINITY, f64::INFINITY)]),
            proper: true,
            normalizer: Some(0.5 * (2.0 * std::f64::consts::PI * var).ln()),
            offset: 0.0,
        })
    }

    /// σ^{-a} on the scale coordinate of normal-ms, normal-ls or linreg.
    pub fn power_sigma(model: &ModelFamily, a: f64) -> Result<Self> {
        let (index, log_scale) = match model.family() {
            Family::NormalMs { log_scale } => (1, log_scale),
            Family::LinReg { q } => (q, true),
            _ => {
                return Err(Error::UnsupportedPair {
                    model: model.name(),
                    prior: format!("power-sigma:{a}"),
                })
            }
        };
        Ok(PriorSpec {
            name: format!("power-sigma:{a}"),
            kind: PriorKind::PowerSigma { a, index, log_scale },
            support: full_box(model),
            proper: false,
            normalizer: None,
            offset: 0.0,
        })
    }

    pub fn mvn_power(model: &ModelFamily, a: f64) -> Result<Self> {
        if model.family() != Family::Mvn2 {
            return Err(Error::UnsupportedPair {
                model: model.name(),
                prior: format!("mvn-power:{a}"),
            });
        }
        Ok(PriorSpec {
            name: format!("mvn-power:{a}"),
            kind: PriorKind::MvnPower { a },
            support: full_box(model),
            proper: false,
            normalizer: None,
            offset: 0.0,
        })
    }

    /// Finitely supported prior; weights are normalized.
    pub fn discrete(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Configuration(
                "discrete prior needs matching atoms and weights".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Configuration("discrete prior weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(PriorSpec {
            name: format!("discrete:{atoms:?}"),
            kind: PriorKind::Discrete {
                atoms: atoms.clone(),
                weights,
            },
            support: PriorSupport::Atoms(atoms),
            proper: true,
            normalizer: Some(0.0),
            offset: 0.0,
        })
    }

    pub fn custom(name: &str, support: Vec<(f64, f64)>, f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>) -> Self {
        PriorSpec {
            name: name.into(),
            kind: PriorKind::Custom(f),
            support: PriorSupport::Box(support),
            proper: false,
            normalizer: None,
            offset: 0.0,
        }
    }

    /// The same prior in η-coordinates of `model.reparameterize(map)`.
    pub fn transformed(&self, map: Arc<dyn CoordMap>) -> Result<Self> {
        let support = match &self.support {
            PriorSupport::Box(b) => PriorSupport::Box(map.eta_domain(b)),
            PriorSupport::Atoms(_) => return Err(Error::Configuration("cannot transform a discrete prior".into())),
        };
        Ok(PriorSpec {
            name: format!("{}@{}", self.name, map.name()),
            kind: PriorKind::Transformed {
                base: Box::new(self.clone()),
                map,
            },
            support,
            proper: self.proper,
            normalizer: self.normalizer,
            offset: 0.0,
        })
    }

    /// Adds `c` to log π (and to the normalizer when known).
    pub fn shifted(&self, c: f64) -> Self {
        let mut p = self.clone();
        p.offset += c;
        p.normalizer = p.normalizer.map(|z| z + c);
        p
    }

    pub fn is_compact(&self) -> bool {
        match &self.support {
            PriorSupport::Box(b) => b.iter().all(|(lo, hi)| lo.is_finite() && hi.is_finite()),
            PriorSupport::Atoms(_) => true,
        }
    }

    pub fn support_box(&self) -> Option<&[(f64, f64)]> {
        match &self.support {
            PriorSupport::Box(b) => Some(b),
            PriorSupport::Atoms(_) => None,
        }
    }

    fn raw_log_pi(&self, theta: &[f64]) -> f64 {
        self.offset
            + match &self.kind {
                PriorKind::Flat => 0.0,
                PriorKind::Beta { a, b } => (a - 1.0) * theta[0].ln() + (b - 1.0) * (1.0 - theta[0]).ln(),
                PriorKind::ExpTilt { c, theta0 } => c * (theta[0] - theta0),
                PriorKind::Normal { mean, var } => -(theta[0] - mean).powi(2) / (2.0 * var),
                PriorKind::PowerSigma { a, index, log_scale } => {
                    if *log_scale {
                        -(a - 1.0) * theta[*index]
                    } else {
                        -a * theta[*index].ln()
                    }
                }
                PriorKind::MvnPower { a } => -(1.0 + a) * theta[0].ln() + (1.0 - a) * theta[1].ln(),
                PriorKind::JeffreysNumeric(m) => match m.fisher_info(theta) {
                    Ok(i) => 0.5 * i.determinant().ln(),
                    Err(_) => f64::NAN,
                },
                PriorKind::Compact(seq) => seq.log_density(theta),
                PriorKind::Transformed { base, map } => {
                    base.raw_log_pi(&map.forward(theta)) + map.jacobian(theta).determinant().abs().ln()
                }
                PriorKind::Discrete { .. } => f64::NAN,
                PriorKind::Custom(f) => f(theta),
            }
    }

    /// Rejects points outside the open support box.
    pub fn check(&self, theta: &[f64]) -> Result<()> {
        match &self.support {
            PriorSupport::Box(b) => {
                if theta.len() != b.len() {
                    return Err(Error::UnsupportedDimension {
                        expected: b.len(),
                        got: theta.len(),
                    });
                }
                for (i, (&t, &(lo, hi))) in theta.iter().zip(b).enumerate() {
                    if !t.is_finite() || t <= lo || t >= hi {
                        return Err(Error::domain(format!(
                            "prior {}: coordinate {i} = {t} is outside ({lo}, {hi})",
                            self.name
                        )));
                    }
                }
                Ok(())
            }
            PriorSupport::Atoms(_) => Err(Error::Configuration(format!("prior {} has no density", self.name))),
        }
    }

    /// log π(θ) up to the prior's additive constant.
    pub fn log_pi(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        let v = self.raw_log_pi(theta);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::domain(format!(
                "prior {}: log density not finite at {theta:?}",
                self.name
            )))
        }
    }

    /// log of the normalized density; needs a proper prior with known normalizer.
    pub fn log_density_normalized(&self, theta: &[f64]) -> Result<f64> {
        match (self.proper, self.normalizer) {
            (true, Some(z)) => Ok(self.log_pi(theta)? - z),
            _ => Err(Error::Configuration(format!(
                "prior {} has no known normalization",
                self.name
            ))),
        }
    }

    fn step_cap(&self, theta: &[f64]) -> Vec<f64> {
        match &self.support {
            PriorSupport::Box(b) => theta
                .iter()
                .zip(b)
                .map(|(&t, &(lo, hi))| 0.25 * (t - lo).min(hi - t))
                .collect(),
            PriorSupport::Atoms(_) => vec![f64::INFINITY; theta.len()],
        }
    }

    /// ρ, ρ_r, ρ_rs from closed forms when the family has them, otherwise
    /// by central differences.
    pub fn rho_derivatives(&self, theta: &[f64]) -> Result<RhoDerivatives> {
        self.check(theta)?;
        let p = theta.len();
        let closed = |grad: Vec<f64>, hess: DMatrix<f64>| -> Result<RhoDerivatives> {
            Ok(RhoDerivatives {
                value: self.log_pi(theta)?,
                grad: DVector::from_vec(grad),
                hess,
            })
        };
        let diag = |d: &[f64]| DMatrix::from_diagonal(&DVector::from_row_slice(d));
        match &self.kind {
            PriorKind::Flat => closed(vec![0.0; p], DMatrix::zeros(p, p)),
            PriorKind::Beta { a, b } => {
                let t = theta[0];
                closed(
                    vec![(a - 1.0) / t - (b - 1.0) / (1.0 - t)],
                    diag(&[-(a - 1.0) / (t * t) - (b - 1.0) / ((1.0 - t) * (1.0 - t))]),
                )
            }
            PriorKind::ExpTilt { c, .. } => closed(vec![*c], DMatrix::zeros(1, 1)),
            PriorKind::Normal { mean, var } => closed(vec![-(theta[0] - mean) / var], diag(&[-1.0 / var])),
            PriorKind::PowerSigma { a, index, log_scale } => {
                let mut g = vec![0.0; p];
                let mut h = DMatrix::zeros(p, p);
                if *log_scale {
                    g[*index] = -(a - 1.0);
                } else {
                    let s = theta[*index];
                    g[*index] = -a / s;
                    h[(*index, *index)] = a / (s * s);
                }
                closed(g, h)
            }
            PriorKind::MvnPower { a } => {
                let (p1, p2) = (theta[0], theta[1]);
                let mut g = vec![0.0; p];
                let mut h = DMatrix::zeros(p, p);
                g[0] = -(1.0 + a) / p1;
                g[1] = (1.0 - a) / p2;
                h[(0, 0)] = (1.0 + a) / (p1 * p1);
                h[(1, 1)] = -(1.0 - a) / (p2 * p2);
                closed(g, h)
            }
            PriorKind::Compact(seq) => {
                let mut d = seq.derivatives(theta);
                if !d.value.is_finite() {
                    return Err(Error::domain(format!("prior {}: outside support", self.name)));
                }
                d.value += self.offset;
                Ok(d)
            }
            PriorKind::Discrete { .. } => Err(Error::Configuration(format!(
                "prior {} has no density derivatives",
                self.name
            ))),
            PriorKind::JeffreysNumeric(_) | PriorKind::Transformed { .. } | PriorKind::Custom(_) => {
                self.rho_derivatives_numeric(theta)
            }
        }
    }

    /// Whether [`Self::rho_derivatives`] uses closed forms.
    pub fn has_closed_derivatives(&self) -> bool {
        !matches!(
            self.kind,
            PriorKind::JeffreysNumeric(_) | PriorKind::Transformed { .. } | PriorKind::Custom(_)
        )
    }

    /// ∇ρ only; skips the Hessian stencil on the numeric path.
    pub fn rho_gradient(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if self.has_closed_derivatives() {
            return Ok(self.rho_derivatives(theta)?.grad);
        }
        self.check(theta)?;
        let opts = DiffOptions::richardson().with_cap(self.step_cap(theta));
        numerics::gradient(|t| self.raw_log_pi(t), theta, &opts)
    }

    /// Per-coordinate step cap keeping stencils inside the support.
    pub fn support_step_cap(&self, theta: &[f64]) -> Vec<f64> {
        self.step_cap(theta)
    }

    /// Central-difference derivatives with Richardson refinement.
    pub fn rho_derivatives_numeric(&self, theta: &[f64]) -> Result<RhoDerivatives> {
        let value = self.log_pi(theta)?;
        let opts = DiffOptions::richardson().with_cap(self.step_cap(theta));
        let f = |t: &[f64]| self.raw_log_pi(t);
        Ok(RhoDerivatives {
            value,
            grad: numerics::gradient(f, theta, &opts)?,
            hess: numerics::hessian(f, theta, &opts)?,
        })
    }

    /// Parses the prior mini-language against a model:
    /// `jeffreys`, `flat`, `beta:a,b`, `normal:m,v`, `exp-tilt:c`,
    /// `power-sigma:a`, `mvn-power:a`, `tau-k:<construction>,<k>,<a>,<b>`.
    pub fn parse(spec: &str, model: &ModelFamily) -> Result<PriorSpec> {
        let spec = spec.trim();
        let (head, args) = match spec.split_once(':') {
            Some((h, a)) => (h, a),
            None => (spec, ""),
        };
        let nums = |want: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = args
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number '{s}' in prior '{spec}'")))
                })
                .collect::<Result<_>>()?;
            if v.len() != want {
                return Err(Error::Parse(format!(
                    "prior '{spec}' expects {want} argument(s), got {}",
                    v.len()
                )));
            }
            Ok(v)
        };
        let scalar_only = |p: PriorSpec| -> Result<PriorSpec> {
            if model.dim() != 1 {
                return Err(Error::UnsupportedPair {
                    model: model.name(),
                    prior: spec.into(),
                });
            }
            Ok(p)
        };
        match head {
            "jeffreys" if args.is_empty() => jeffreys(model),
            "flat" if args.is_empty() => Ok(PriorSpec::flat(model)),
            "beta" => {
                if model.family() != Family::Bernoulli {
                    return Err(Error::UnsupportedPair {
                        model: model.name(),
                        prior: spec.into(),
                    });
                }
                let v = nums(2)?;
                PriorSpec::beta(v[0], v[1])
            }
            "normal" => {
                let v = nums(2)?;
                scalar_only(PriorSpec::normal(v[0], v[1])?)
            }
            "exp-tilt" => scalar_only(PriorSpec::exp_tilt(nums(1)?[0], 0.0)),
            "power-sigma" => PriorSpec::power_sigma(model, nums(1)?[0]),
            "mvn-power" => PriorSpec::mvn_power(model, nums(1)?[0]),
            "tau-k" => {
                let parts: Vec<&str> = args.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(Error::Parse(format!(
                        "tau-k expects <construction>,<k>,<a>,<b>, got '{args}'"
                    )));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number '{s}' in prior '{spec}'")))
                };
                let c = Construction::parse(parts[0], model.dim())?;
                let h = HClassDensity::new(num(parts[2])?, num(parts[3])?)?;
                let seq = CompactPriorSequence::new(c, h, num(parts[1])?)?;
                tau_k(&seq, model)
            }
            _ => Err(Error::Parse(format!("unknown prior '{spec}'"))),
        }
    }
}

/// π^J ∝ |i(θ)|^{1/2}. Closed forms for the registered families, otherwise
/// ½ log det of the model's Fisher information.
pub fn jeffreys(model: &ModelFamily) -> Result<PriorSpec> {
    let mut p = match model.family() {
        Family::Bernoulli => PriorSpec::beta(0.5, 0.5)?,
        Family::NormalMean => PriorSpec::flat(model),
        Family::NormalMs { .. } => PriorSpec::power_sigma(model, 2.0)?,
        Family::LinReg { q } => PriorSpec::power_sigma(model, q as f64 + 1.0)?,
        Family::Mvn2 => PriorSpec::mvn_power(model, 0.0)?,
        Family::Reparameterized { .. } | Family::Custom(_) => {
            for theta in model.inner().default_grid() {
                let i = model.fisher_info(&theta)?;
                if !(i.determinant() > 0.0) {
                    return Err(Error::domain(format!("singular Fisher information at {theta:?}")));
                }
            }
            PriorSpec {
                name: "jeffreys".into(),
                kind: PriorKind::JeffreysNumeric(model.clone()),
                support: full_box(model),
                proper: false,
                normalizer: None,
                offset: 0.0,
            }
        }
    };
    p.name = "jeffreys".into();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArcsineSquare, LogCoord};

    #[test]
    fn rho_examples() {
        let t = PriorSpec::exp_tilt(0.7, 1.0);
        let d = t.rho_derivatives(&[3.0]).unwrap();
        assert_eq!(d.grad[0], 0.7);
        assert_eq!(d.hess[(0, 0)], 0.0);

        let m = ModelFamily::normal_ls();
        let d = PriorSpec::flat(&m).rho_derivatives(&[0.1, 0.2]).unwrap();
        assert!(d.grad.iter().chain(d.hess.iter()).all(|v| *v == 0.0));

        let b = PriorSpec::beta(1.5, 1.5).unwrap();
        let d = b.rho_derivatives(&[0.3]).unwrap();
        assert!((d.grad[0] - 0.5 * (1.0 / 0.3 - 1.0 / 0.7)).abs() < 1e-14);
        let fd = (b.log_pi(&[0.3 + 1e-6]).unwrap() - b.log_pi(&[0.3 - 1e-6]).unwrap()) / 2e-6;
        assert!((d.grad[0] - fd).abs() < 1e-8);
    }

    #[test]
    fn closed_and_numeric_derivatives_agree() {
        let ls = ModelFamily::normal_ls();
        let ms = ModelFamily::normal_ms();
        let lr = ModelFamily::by_name("linreg", None).unwrap();
        let mv = ModelFamily::mvn2();
        let seq =
            CompactPriorSequence::new(Construction::LocationLogscale, HClassDensity::default_member(), 1.5).unwrap();
        let cases: Vec<(PriorSpec, Vec<Vec<f64>>)> = vec![
            (
                PriorSpec::beta(2.0, 3.0).unwrap(),
                (1..10).map(|i| vec![0.1 * i as f64]).collect(),
            ),
            (PriorSpec::normal(0.5, 2.0).unwrap(), vec![vec![-1.0], vec![2.0]]),
            (PriorSpec::power_sigma(&ms, 1.3).unwrap(), ms.inner().default_grid()),
            (PriorSpec::power_sigma(&ls, 3.0).unwrap(), ls.inner().default_grid()),
            (PriorSpec::power_sigma(&lr, 0.5).unwrap(), lr.inner().default_grid()),
            (PriorSpec::mvn_power(&mv, 2.0).unwrap(), mv.inner().default_grid()),
            (seq.prior(), vec![vec![0.3, 0.2], vec![-2.0, -0.7]]),
        ];
        for (p, grid) in cases {
            for t in grid {
                let c = p.rho_derivatives(&t).unwrap();
                let n = p.rho_derivatives_numeric(&t).unwrap();
                let scale = c.hess.abs().max().max(c.grad.abs().max()).max(1.0);
                assert!(
                    (&c.grad - &n.grad).abs().max() < 1e-6 * scale,
                    "{} grad at {t:?}",
                    p.name
                );
                assert!(
                    (&c.hess - &n.hess).abs().max() < 1e-6 * scale,
                    "{} hess at {t:?}",
                    p.name
                );
            }
        }
    }

    #[test]
    fn jeffreys_priors() {
        let b = jeffreys(&ModelFamily::bernoulli()).unwrap();
        assert!(b.proper);
        let grid: Vec<f64> = (1..20).map(|i| 0.05 * i as f64).collect();
        let diffs: Vec<f64> = grid
            .iter()
            .map(|&t| b.log_density_normalized(&[t]).unwrap() - (-0.5 * t.ln() - 0.5 * (1.0 - t).ln()))
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!(diffs.iter().all(|d| (d - mean).abs() < 1e-8));
        assert!((mean + std::f64::consts::PI.ln()).abs() < 1e-12);

        let nm = jeffreys(&ModelFamily::normal_mean()).unwrap();
        assert_eq!(nm.log_pi(&[3.0]).unwrap(), nm.log_pi(&[-1.0]).unwrap());

        let ls = jeffreys(&ModelFamily::normal_ls()).unwrap();
        assert!((ls.log_pi(&[0.0, 0.7]).unwrap() - ls.log_pi(&[1.0, 0.0]).unwrap() + 0.7).abs() < 1e-14);
    }

    #[test]
    fn closed_jeffreys_matches_half_log_det() {
        for name in ModelFamily::names() {
            let m = ModelFamily::by_name(name, None).unwrap();
            let j = jeffreys(&m).unwrap();
            let grid = m.inner().default_grid();
            let diffs: Vec<f64> = grid
                .iter()
                .map(|t| j.log_pi(t).unwrap() - 0.5 * m.fisher_info(t).unwrap().determinant().ln())
                .collect();
            for d in &diffs {
                assert!((d - diffs[0]).abs() < 1e-10, "{name}: {diffs:?}");
            }
        }
    }

    #[test]
    fn numeric_jeffreys_for_reparameterized_models() {
        let arc = ModelFamily::bernoulli()
            .reparameterize(Arc::new(ArcsineSquare))
            .unwrap();
        let j = jeffreys(&arc).unwrap();
        let d = j.rho_derivatives(&[0.6]).unwrap();
        assert!(d.grad[0].abs() < 1e-8 && d.hess[(0, 0)].abs() < 1e-6);
    }

    #[test]
    fn transformed_prior_carries_jacobian() {
        let b = PriorSpec::beta(2.0, 2.0).unwrap();
        let t = b.transformed(Arc::new(ArcsineSquare)).unwrap();
        let eta: f64 = 0.5;
        let theta = eta.sin().powi(2);
        let expect = b.log_pi(&[theta]).unwrap() + (2.0 * eta).sin().ln();
        assert!((t.log_pi(&[eta]).unwrap() - expect).abs() < 1e-14);

        let ms = ModelFamily::normal_ms();
        let ps = PriorSpec::power_sigma(&ms, 1.0).unwrap();
        let pl = ps.transformed(Arc::new(LogCoord { index: 1 })).unwrap();
        // σ^{-1} dσ = dλ: flat in λ.
        let d = pl.rho_derivatives(&[0.3, 0.8]).unwrap();
        assert!(d.grad.abs().max() < 1e-9);
    }

    #[test]
    fn h_class() {
        let h = HClassDensity::default_member();
        let alpha = h.alpha().unwrap();
        assert!((alpha - 10.5).abs() < 1e-12);
        assert!((h.alpha_closed() - 10.5).abs() < 1e-14);
        let h2 = HClassDensity::new(4.5, 3.7).unwrap();
        assert!(((h2.alpha().unwrap() - h2.alpha_closed()) / h2.alpha_closed()).abs() < 1e-9);
        assert!(matches!(HClassDensity::new(3.0, 3.0), Err(Error::InvalidHClass { .. })));
        let m = numerics::adaptive_integrate(|u| h.g1(u) * h.h(u), -1.0, 1.0, 1e-12).unwrap();
        assert!(m.abs() < 1e-12);
        let u = 1.0 - 1e-4;
        for v in [h.h(u), h.h1(u), h.h(-u), h.h1(-u)] {
            assert!(v.abs() < 1e-6, "{v}");
        }
        // h'' vanishes only linearly at the endpoints: h''(1-δ) ≈ 48·(35/32)·δ.
        for d in [1e-4, 1e-6, 1e-8] {
            let lead = 48.0 * 35.0 / 32.0 * d;
            assert!((h.h2(1.0 - d) / lead - 1.0).abs() < 1e-3);
            assert!((h.h2(-1.0 + d) / lead - 1.0).abs() < 1e-3);
        }
        assert!(h.h2(1.0 - 1e-8).abs() < 1e-6);
        // h(u) = (35/32)(1−u²)³ for Beta(4,4)
        assert!((h.h(0.3) - 35.0 / 32.0 * (1.0 - 0.09f64).powi(3)).abs() < 1e-13);
    }

    #[test]
    fn tau_k_supports() {
        let h = HClassDensity::default_member();
        let nm = ModelFamily::normal_mean();
        let s = CompactPriorSequence::new(Construction::LineScale, h, 2.0).unwrap();
        let p = tau_k(&s, &nm).unwrap();
        assert_eq!(p.support_box().unwrap(), &[(-2.0, 2.0)]);
        let d = p.rho_derivatives(&[0.8]).unwrap();
        assert!((d.grad[0] - h.g1(0.4) / 2.0).abs() < 1e-14);

        let s = CompactPriorSequence::new(Construction::HalflineShift, h, 1.0).unwrap();
        assert_eq!(s.support(), vec![(1.0, 3.0)]);

        let s = CompactPriorSequence::new(Construction::LocationLogscale, h, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_eq!(s.support(), vec![(-e, e), (-1.0, 1.0)]);
        assert!(tau_k(&s, &ModelFamily::normal_ls()).is_ok());
        assert!(matches!(
            tau_k(&s, &ModelFamily::normal_ms()),
            Err(Error::Configuration(_))
        ));
        assert!(matches!(tau_k(&s, &nm), Err(Error::Configuration(_))));
    }

    #[test]
    fn tau_k_integrates_to_one() {
        let h = HClassDensity::default_member();
        for (c, k) in [
            (Construction::LineScale, 3.0),
            (Construction::HalflineShift, 2.0),
            (Construction::LocationLogscale, 2.0),
            (Construction::RegressionLogscale { q: 2 }, 1.0),
        ] {
            let s = CompactPriorSequence::new(c, h, k).unwrap();
            let p = s.prior();
            let b = s.support();
            let lo: Vec<f64> = b.iter().map(|x| x.0).collect();
            let hi: Vec<f64> = b.iter().map(|x| x.1).collect();
            let mass = numerics::adaptive_integrate_box(
                |t: &[f64]| p.log_pi(t).map(f64::exp).unwrap_or(0.0),
                &lo,
                &hi,
                1e-10,
                1 << 18,
            )
            .unwrap();
            assert!((mass - 1.0).abs() < 1e-6, "{c:?}: {mass}");
        }
    }

    #[test]
    fn parser() {
        let b = ModelFamily::bernoulli();
        assert!(matches!(
            PriorSpec::parse("beta:1.5,1.5", &b).unwrap().kind,
            PriorKind::Beta { .. }
        ));
        assert_eq!(PriorSpec::parse("jeffreys", &b).unwrap().name, "jeffreys");
        assert!(PriorSpec::parse("beta:1", &b).is_err());
        assert!(PriorSpec::parse("gamma:1,2", &b).is_err());
        assert!(PriorSpec::parse("power-sigma:1", &b).is_err());
        let ls = ModelFamily::normal_ls();
        assert!(PriorSpec::parse("power-sigma:1", &ls).is_ok());
        assert!(PriorSpec::parse("tau-k:location-logscale,4,4,4", &ls).is_ok());
        assert!(matches!(
            PriorSpec::parse("tau-k:location-logscale,4,3,3", &ls),
            Err(Error::InvalidHClass { .. })
        ));
        let nm = ModelFamily::normal_mean();
        assert!(PriorSpec::parse("exp-tilt:0.5", &nm).is_ok());
        assert!(PriorSpec::parse("normal:0,2", &nm).is_ok());
        assert!(PriorSpec::parse("mvn-power:1", &ModelFamily::mvn2()).is_ok());
    }

    #[test]
    fn outside_support_is_domain_error() {
        let b = PriorSpec::beta(2.0, 2.0).unwrap();
        assert!(matches!(b.rho_derivatives(&[1.2]), Err(Error::Domain(_))));
        let s = CompactPriorSequence::new(Construction::LineScale, HClassDensity::default_member(), 1.0).unwrap();
        assert!(matches!(s.prior().rho_derivatives(&[1.0]), Err(Error::Domain(_))));
    }
}
