//! Parametric sampling families: log densities, samplers, expectations,
//! Fisher information (closed form or expected negative Hessian) and the
//! standardized score moments used by the scalar curvature functional.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{self, DiffOptions, QuadratureRule, RuleKind, SeededStream, HERMITE_NODES};

/// Evaluation requests closer than this to ∂Θ are rejected.
pub const BOUNDARY_TOL: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Observation space of a family.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// Finitely many atoms, listed explicitly.
    Finite(Vec<Vec<f64>>),
    /// R^d.
    Real { dim: usize },
    /// A design row index (uniform over `rows`) paired with a real response.
    IndexedReal { rows: usize },
}

/// Structural tag used by the prior registry and the conjugate engines.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Bernoulli,
    NormalMean,
    /// Normal(β, σ); `log_scale` means the second coordinate is λ = log σ.
    NormalMs {
        log_scale: bool,
    },
    /// Normal linear regression, coordinates (β₁..β_q, λ = log σ).
    LinReg {
        q: usize,
    },
    /// Bivariate normal in (ψ₁, ψ₂, β₂₁, μ₁, μ₂).
    Mvn2,
    Reparameterized {
        base: Box<Family>,
        map: String,
    },
    Custom(String),
}

/// Conjugate structure available to the exact finite-sample engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conjugacy {
    /// Beta prior, success count.
    BetaBernoulli,
    /// Normal or flat prior, sample mean.
    NormalMean,
    /// σ^{-a} prior with flat β, (mean, residual sum of squares).
    NormalScale,
}

/// A parametric family f(x|θ) on an open parameter box.
///
/// `log_f` is the raw evaluator; callers normally go through
/// [`ModelFamily::log_density`], which validates θ and x first.
pub trait Model: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn family(&self) -> Family;
    fn support(&self) -> Support;
    /// Open interval per coordinate; infinite ends allowed.
    fn domain(&self) -> Vec<(f64, f64)>;
    fn log_f(&self, x: &[f64], theta: &[f64]) -> f64;
    /// One observation.
    fn draw(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Weighted observation nodes representing the law of X under θ: the
    /// atoms for finite supports, a Gauss–Hermite product rule otherwise.
    fn expectation_nodes(&self, theta: &[f64]) -> Vec<(f64, Vec<f64>)>;

    /// E^θ[f(X)] over [`Model::expectation_nodes`].
    fn expect(&self, theta: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.expectation_nodes(theta).iter().map(|(w, x)| w * f(x)).sum()
    }
    /// ∫ exp(log_f) over the support, evaluated by brute quadrature.
    fn total_mass(&self, theta: &[f64]) -> Result<f64>;

    fn in_support(&self, x: &[f64]) -> bool {
        match self.support() {
            Support::Finite(atoms) => atoms.iter().any(|a| a.as_slice() == x),
            Support::Real { dim } => x.len() == dim && x.iter().all(|v| v.is_finite()),
            Support::IndexedReal { rows } => {
                x.len() == 2 && x[0] >= 0.0 && x[0].fract() == 0.0 && (x[0] as usize) < rows && x[1].is_finite()
            }
        }
    }

    fn fisher_closed(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    /// D_s i(θ) for s = 0..p.
    fn fisher_derivative_closed(&self, _theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    /// ∇_θ log f(x|θ).
    fn score_closed(&self, _x: &[f64], _theta: &[f64]) -> Option<DVector<f64>> {
        None
    }
    /// ∇²_θ log f(x|θ).
    fn hessian_closed(&self, _x: &[f64], _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
    fn conjugacy(&self) -> Option<Conjugacy> {
        None
    }
    fn default_grid(&self) -> Vec<Vec<f64>>;
}

fn hermite() -> Arc<QuadratureRule> {
    numerics::cached_rule(RuleKind::Hermite, HERMITE_NODES)
}

fn normal_logpdf(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

fn normal_nodes(mean: f64, sd: f64) -> Vec<(f64, Vec<f64>)> {
    let rule = hermite();
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(z, w)| (*w, vec![mean + sd * z]))
        .collect()
}

fn normal_mass(mean: f64, sd: f64, f: &dyn Fn(f64) -> f64) -> Result<f64> {
    numerics::adaptive_integrate(f, mean - 12.0 * sd, mean + 12.0 * sd, 1e-12)
}

fn grid2(a: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| vec![x, y])).collect()
}

// ---------------------------------------------------------------------------
// Bernoulli
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct Bernoulli;

impl Model for Bernoulli {
    fn name(&self) -> String {
        "bernoulli".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn family(&self) -> Family {
        Family::Bernoulli
    }
    fn support(&self) -> Support {
        Support::Finite(vec![vec![0.0], vec![1.0]])
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0)]
    }
    fn log_f(&self, x: &[f64], theta: &[f64]) -> f64 {
        let t = theta[0];
        if x[0] == 1.0 {
            t.ln()
        } else {
            (1.0 - t).ln()
        }
    }
    fn draw(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![f64::from(u8::from(rng.random::<f64>() < theta[0]))]
    }
    fn expectation_nodes(&self, theta: &[f64]) -> Vec<(f64, Vec<f64>)> {
        vec![(1.0 - theta[0], vec![0.0]), (theta[0], vec![1.0])]
    }
    fn total_mass(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.log_f(&[0.0], theta).exp() + self.log_f(&[1.0], theta).exp())
    }
    fn fisher_closed(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let t = theta[0];
        Some(DMatrix::from_element(1, 1, 1.0 / (t * (1.0 - t))))
    }
    fn fisher_derivative_closed(&self, theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let t = theta[0];
        let v = t * (1.0 - t);
        Some(vec![DMatrix::from_element(1, 1, -(1.0 - 2.0 * t) / (v * v))])
    }
    fn score_closed(&self, x: &[f64], theta: &[f64]) -> Option<DVector<f64>> {
        let t = theta[0];
        Some(DVector::from_element(1, x[0] / t - (1.0 - x[0]) / (1.0 - t)))
    }
    fn hessian_closed(&self, x: &[f64], theta: &[f64]) -> Option<DMatrix<f64>> {
        let t = theta[0];
        Some(DMatrix::from_element(
            1,
            1,
            -x[0] / (t * t) - (1.0 - x[0]) / ((1.0 - t) * (1.0 - t)),
        ))
    }
    fn conjugacy(&self) -> Option<Conjugacy> {
        Some(Conjugacy::BetaBernoulli)
    }
    fn default_grid(&self) -> Vec<Vec<f64>> {
        (1..=19).map(|i| vec![0.05 * i as f64]).collect()
    }
}

// ---------------------------------------------------------------------------
// Normal, unknown mean, unit variance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct NormalMean;

impl Model for NormalMean {
    fn name(&self) -> String {
        "normal-mean".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn family(&self) -> Family {
        Family::NormalMean
    }
    fn support(&self) -> Support {
        Support::Real { dim: 1 }
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY)]
    }
    fn log_f(&self, x: &[f64], theta: &[f64]) -> f64 {
        normal_logpdf(x[0], theta[0], 1.0)
    }
    fn draw(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![Normal::new(theta[0], 1.0).expect("unit sd").sample(rng)]
    }
    fn expectation_nodes(&self, theta: &[f64]) -> Vec<(f64, Vec<f64>)> {
        normal_nodes(theta[0], 1.0)
    }
    fn total_mass(&self, theta: &[f64]) -> Result<f64> {
        normal_mass(theta[0], 1.0, &|y| self.log_f(&[y], theta).exp())
    }
    fn fisher_closed(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(1, 1))
    }
    fn fisher_derivative_closed(&self, _theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(1, 1)])
    }
    fn score_closed(&self, x: &[f64], theta: &[f64]) -> Option<DVector<f64>> {
        Some(DVector::from_element(1, x[0] - theta[0]))
    }
    fn hessian_closed(&self, _x: &[f64], _theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, -1.0))
    }
    fn conjugacy(&self) -> Option<Conjugacy> {
        Some(Conjugacy::NormalMean)
    }
    fn default_grid(&self) -> Vec<Vec<f64>> {
        (-3..=3).map(|i| vec![i as f64]).collect()
    }
}

// ---------------------------------------------------------------------------
// Normal, unknown mean and scale
// ---------------------------------------------------------------------------

/// Normal(β, σ) with coordinates (β, σ), or (β, λ = log σ) when `log_scale`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalMs {
    pub log_scale: bool,
}

impl NormalMs {
    fn sigma(&self, theta: &[f64]) -> f64 {
        if self.log_scale {
            theta[1].exp()
        } else {
            theta[1]
        }
    }
}

impl Model for NormalMs {
    fn name(&self) -> String {
        if self.log_scale { "normal-ls" } else { "normal-ms" }.into()
    }
    fn dim(&self) -> usize {
        2
    }
    fn family(&self) -> Family {
        Family::NormalMs {
            log_scale: self.log_scale,
        }
    }
    fn support(&self) -> Support {
        Support::Real { dim: 1 }
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        let scale = if self.log_scale {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (0.0, f64::INFINITY)
        };
        vec![(f64::NEG_INFINITY, f64::INFINITY), scale]
    }
    fn log_f(&self, x: &[f64], theta: &[f64]) -> f64 {
        normal_logpdf(x[0], theta[0], self.sigma(theta))
    }
    fn draw(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![Normal::new(theta[0], self.sigma(theta))
            .expect("positive sd")
            .sample(rng)]
    }
    fn expectation_nodes(&self, theta: &[f64]) -> Vec<(f64, Vec<f64>)> {
        normal_nodes(theta[0], self.sigma(theta))
    }
    fn total_mass(&self, theta: &[f64]) -> Result<f64> {
        normal_mass(theta[0], self.sigma(theta), &|y| self.log_f(&[y], theta).exp())
    }
    fn fisher_closed(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let s = self.sigma(theta);
        let d = if self.log_scale {
            [1.0 / (s * s), 2.0]
        } else {
            [1.0 / (s * s), 2.0 / (s * s)]
        };
        Some(DMatrix::from_diagonal(&DVector::from_row_slice(&d)))
    }
    fn fisher_derivative_closed(&self, theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let s = self.sigma(theta);
        let d1 = if self.log_scale {
            [-2.0 / (s * s), 0.0]
        } else {
            [-2.0 / s.powi(3), -4.0 / s.powi(3)]
        };
        Some(vec![
            DMatrix::zeros(2, 2),
            DMatrix::from_diagonal(&DVector::from_row_slice(&d1)),
        ])
    }
    fn conjugacy(&self) -> Option<Conjugacy> {
        Some(Conjugacy::NormalScale)
    }
    fn default_grid(&self) -> Vec<Vec<f64>> {
        let scales: &[f64] = if self.log_scale {
            &[-0.7, 0.0, 0.7]
        } else {
            &[0.5, 1.0, 2.0]
        };
        grid2(&[-1.0, 0.0, 2.0], scales)
    }
}

// ---------------------------------------------------------------------------
// Normal linear regression
// ---------------------------------------------------------------------------

/// y = zᵀβ + e^λ ε with a fixed N×q design Z. An observation is
/// `[row, y]` with the row drawn uniformly, so i(θ) = diag(e^{-2λ}V, 2)
/// with V = ZᵀZ/N holds exactly per observation.
#[derive(Debug, Clone)]
pub struct LinReg {
    design: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl LinReg {
    pub fn new(design: DMatrix<f64>) -> Result<Self> {
        let n = design.nrows();
        if n == 0 || design.ncols() == 0 {
            return Err(Error::Configuration("design matrix is empty".into()));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::Configuration("design matrix has non-finite entries".into()));
        }
        let v = design.transpose() * &design / n as f64;
        if v.clone().cholesky().is_none() {
            return Err(Error::Configuration(
                "design matrix does not have full column rank".into(),
            ));
        }
        Ok(LinReg { design, v })
    }

    /// Intercept plus the centered covariate 0..rows-1.
    pub fn default_design(rows: usize) -> DMatrix<f64> {
        let mean = (rows as f64 - 1.0) / 2.0;
        DMatrix::from_fn(rows, 2, |i, j| if j == 0 { 1.0 } else { i as f64 - mean })
    }

    pub fn q(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// V = ZᵀZ/N.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.v
    }

    fn mean(&self, row: usize, theta: &[f64]) -> f64 {
        (0..self.q()).map(|j| self.design[(row, j)] * theta[j]).sum()
    }
}

impl Model for LinReg {
    fn name(&self) -> String {
        "linreg".into()
    }
    fn dim(&self) -> usize {
        self.q() + 1
    }
    fn family(&self) -> Family {
        Family::LinReg { q: self.q() }
    }
    fn support(&self) -> Support {
        Support::IndexedReal {
            rows: self.design.nrows(),
        }
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); self.dim()]
    }
    fn log_f(&self, x: &[f64], theta: &[f64]) -> f64 {
        let row = x[0] as usize;
        let sd = theta[self.q()].exp();
        -(self.design.nrows() as f64).ln() + normal_logpdf(x[1], self.mean(row, theta), sd)
    }
    fn draw(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let row = rng.random_range(0..self.design.nrows());
        let sd = theta[self.q()].exp();
        let y = Normal::new(self.mean(row, theta), sd).expect("positive sd").sample(rng);
        vec![row as f64, y]
    }
    fn expectation_nodes(&self, theta: &[f64]) -> Vec<(f64, Vec<f64>)> {
        let n = self.design.nrows();
        let sd = theta[self.q()].exp();
        (0..n)
            .flat_map(|r| {
                normal_nodes(self.mean(r, theta), sd)
                    .into_iter()
                    .map(move |(w, y)| (w / n as f64, vec![r as f64, y[0]]))
            })
            .collect()
    }
    fn total_mass(&self, theta: &[f64]) -> Result<f64> {
        let sd = theta[self.q()].exp();
        let mut acc = 0.0;
        for r in 0..self.design.nrows() {
            acc += normal_mass(self.mean(r, theta), sd, &|y| self.log_f(&[r as f64, y], theta).exp())?;
        }
        Ok(acc)
    }
    fn fisher_closed(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let q = self.q();
        let mut i = DMatrix::zeros(q + 1, q + 1);
        let s = (-2.0 * theta[q]).exp();
        i.view_mut((0, 0), (q, q)).copy_from(&(&self.v * s));
        i[(q, q)] = 2.0;
        Some(i)
    }
    fn fisher_derivative_closed(&self, theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let q = self.q();
        let mut out = vec![DMatrix::zeros(q + 1, q + 1); q + 1];
        let s = (-2.0 * theta[q]).exp();
        out[q].view_mut((0, 0), (q, q)).copy_from(&(&self.v * (-2.0 * s)));
        Some(out)
    }
    fn default_grid(&self) -> Vec<Vec<f64>> {
        let q = self.q();
        let mut grid = Vec::new();
        for (k, lam) in [-0.5, 0.0, 0.6].iter().enumerate() {
            for b in [-1.0, 0.5] {
                let mut t: Vec<f64> = (0..q).map(|j| b + 0.3 * (j + k) as f64).collect();
                t.push(*lam);
                grid.push(t);
            }
        }
        grid
    }
}

// ---------------------------------------------------------------------------
// Bivariate normal
// ---------------------------------------------------------------------------

/// Bivariate normal in γ = (ψ₁, ψ₂, β₂₁, μ₁, μ₂): with d = x − μ,
/// z₁ = ψ₁d₁ and z₂ = ψ₂(β₂₁d₁ + d₂) are independent standard normals.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mvn2;

impl Mvn2 {
    /// Σ⁻¹ = TᵀT with T = [[ψ₁, 0], [ψ₂β₂₁, ψ₂]].
    pub fn precision(theta: &[f64]) -> DMatrix<f64> {
        let (p1, p2, b) = (theta[0], theta[1], theta[2]);
        DMatrix::from_row_slice(2, 2, &[p1 * p1 + p2 * p2 * b * b, p2 * p2 * b, p2 * p2 * b, p2 * p2])
    }

    /// γ from (σ₁, σ₂, ρ, μ₁, μ₂).
    pub fn from_moments(s1: f64, s2: f64, rho: f64, m1: f64, m2: f64) -> Vec<f64> {
        vec![1.0 / s1, 1.0 / (s2 * (1.0 - rho * rho).sqrt()), -rho * s2 / s1, m1, m2]
    }

    fn to_x(theta: &[f64], z1: f64, z2: f64) -> [f64; 2] {
        let d1 = z1 / theta[0];
        let d2 = z2 / theta[1] - theta[2] * d1;
        [theta[3] + d1, theta[4] + d2]
    }
}

impl Model for Mvn2 {
    fn name(&self) -> String {
        "mvn2".into()
    }
    fn dim(&self) -> usize {
        5
    }
    fn family(&self) -> Family {
        Family::Mvn2
    }
    fn support(&self) -> Support {
        Support::Real { dim: 2 }
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        let r = (f64::NEG_INFINITY, f64::INFINITY);
        vec![(0.0, f64::INFINITY), (0.0, f64::INFINITY), r, r, r]
    }
    fn log_f(&self, x: &[f64], theta: &[f64]) -> f64 {
        let (p1, p2, b) = (theta[0], theta[1], theta[2]);
        let d1 = x[0] - theta[3];
        let d2 = x[1] - theta[4];
        let z1 = p1 * d1;
        let z2 = p2 * (b * d1 + d2);
        p1.ln() + p2.ln() - LN_2PI - 0.5 * (z1 * z1 + z2 * z2)
    }
    fn draw(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = Normal::new(0.0, 1.0).expect("unit sd");
        let (z1, z2) = (n.sample(rng), n.sample(rng));
        Self::to_x(theta, z1, z2).to_vec()
    }
    fn expectation_nodes(&self, theta: &[f64]) -> Vec<(f64, Vec<f64>)> {
        let rule = hermite();
        let mut out = Vec::with_capacity(rule.len() * rule.len());
        for (z1, w1) in rule.nodes.iter().zip(&rule.weights) {
            for (z2, w2) in rule.nodes.iter().zip(&rule.weights) {
                out.push((w1 * w2, Self::to_x(theta, *z1, *z2).to_vec()));
            }
        }
        out
    }
    fn total_mass(&self, theta: &[f64]) -> Result<f64> {
        // Integrate in the whitened coordinates; the Jacobian is 1/(ψ₁ψ₂).
        let jac = 1.0 / (theta[0] * theta[1]);
        numerics::adaptive_integrate_box(
            |z: &[f64]| self.log_f(&Self::to_x(theta, z[0], z[1]), theta).exp() * jac,
            &[-12.0, -12.0],
            &[12.0, 12.0],
            1e-12,
            1 << 16,
        )
    }
    fn fisher_closed(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let (p1, p2) = (theta[0], theta[1]);
        let mut i = DMatrix::zeros(5, 5);
        i[(0, 0)] = 2.0 / (p1 * p1);
        i[(1, 1)] = 2.0 / (p2 * p2);
        i[(2, 2)] = p2 * p2 / (p1 * p1);
        i.view_mut((3, 3), (2, 2)).copy_from(&Self::precision(theta));
        Some(i)
    }
    fn fisher_derivative_closed(&self, theta: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let (p1, p2, b) = (theta[0], theta[1], theta[2]);
        let mut out = vec![DMatrix::zeros(5, 5); 5];
        out[0][(0, 0)] = -4.0 / p1.powi(3);
        out[0][(2, 2)] = -2.0 * p2 * p2 / p1.powi(3);
        out[0][(3, 3)] = 2.0 * p1;
        out[1][(1, 1)] = -4.0 / p2.powi(3);
        out[1][(2, 2)] = 2.0 * p2 / (p1 * p1);
        out[1][(3, 3)] = 2.0 * p2 * b * b;
        out[1][(3, 4)] = 2.0 * p2 * b;
        out[1][(4, 3)] = 2.0 * p2 * b;
        out[1][(4, 4)] = 2.0 * p2;
        out[2][(3, 3)] = 2.0 * p2 * p2 * b;
        out[2][(3, 4)] = p2 * p2;
        out[2][(4, 3)] = p2 * p2;
        Some(out)
    }
    fn default_grid(&self) -> Vec<Vec<f64>> {
        vec![
            Self::from_moments(1.0, 1.0, 0.0, 0.0, 0.0),
            Self::from_moments(0.5, 2.0, 0.3, 1.0, -1.0),
            Self::from_moments(2.0, 0.7, -0.6, -0.5, 0.2),
            Self::from_moments(1.3, 1.1, 0.8, 0.0, 3.0),
        ]
    }
}

// ---------------------------------------------------------------------------
// Reparameterization
// ---------------------------------------------------------------------------

/// A smooth bijection η ↦ θ(η) between open boxes.
pub trait CoordMap: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn forward(&self, eta: &[f64]) -> Vec<f64>;
    /// J_{ij} = ∂θ_i/∂η_j.
    fn jacobian(&self, eta: &[f64]) -> DMatrix<f64>;
    /// Domain of η given the domain of θ.
    fn eta_domain(&self, theta_domain: &[(f64, f64)]) -> Vec<(f64, f64)>;
    fn inverse(&self, theta: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityMap;

impl CoordMap for IdentityMap {
    fn name(&self) -> String {
        "identity".into()
    }
    fn forward(&self, eta: &[f64]) -> Vec<f64> {
        eta.to_vec()
    }
    fn jacobian(&self, eta: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(eta.len(), eta.len())
    }
    fn eta_domain(&self, d: &[(f64, f64)]) -> Vec<(f64, f64)> {
        d.to_vec()
    }
    fn inverse(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }
}

/// θ_i = exp(η_i) for one coordinate; the others pass through.
#[derive(Debug, Clone, Copy)]
pub struct LogCoord {
    pub index: usize,
}

impl CoordMap for LogCoord {
    fn name(&self) -> String {
        format!("log[{}]", self.index)
    }
    fn forward(&self, eta: &[f64]) -> Vec<f64> {
        let mut t = eta.to_vec();
        t[self.index] = eta[self.index].exp();
        t
    }
    fn jacobian(&self, eta: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::identity(eta.len(), eta.len());
        j[(self.index, self.index)] = eta[self.index].exp();
        j
    }
    fn eta_domain(&self, d: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut out = d.to_vec();
        out[self.index] = (f64::NEG_INFINITY, f64::INFINITY);
        out
    }
    fn inverse(&self, theta: &[f64]) -> Vec<f64> {
        let mut e = theta.to_vec();
        e[self.index] = theta[self.index].ln();
        e
    }
}

/// θ = sin²η on η ∈ (0, π/2), scalar.
#[derive(Debug, Clone, Copy)]
pub struct ArcsineSquare;

impl CoordMap for ArcsineSquare {
    fn name(&self) -> String {
        "arcsine".into()
    }
    fn forward(&self, eta: &[f64]) -> Vec<f64> {
        vec![eta[0].sin().powi(2)]
    }
    fn jacobian(&self, eta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, (2.0 * eta[0]).sin())
    }
    fn eta_domain(&self, _d: &[(f64, f64)]) -> Vec<(f64, f64)> {
        vec![(0.0, PI / 2.0)]
    }
    fn inverse(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0].sqrt().asin()]
    }
}

/// The base family expressed in η-coordinates through θ = map(η).
#[derive(Debug, Clone)]
pub struct Reparameterized {
    pub base: Arc<dyn Model>,
    pub map: Arc<dyn CoordMap>,
}

impl Model for Reparameterized {
    fn name(&self) -> String {
        format!("{}@{}", self.base.name(), self.map.name())
    }
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn family(&self) -> Family {
        Family::Reparameterized {
            base: Box::new(self.base.family()),
            map: self.map.name(),
        }
    }
    fn support(&self) -> Support {
        self.base.support()
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        self.map.eta_domain(&self.base.domain())
    }
    fn log_f(&self, x: &[f64], eta: &[f64]) -> f64 {
        self.base.log_f(x, &self.map.forward(eta))
    }
    fn draw(&self, eta: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.base.draw(&self.map.forward(eta), rng)
    }
    fn expectation_nodes(&self, eta: &[f64]) -> Vec<(f64, Vec<f64>)> {
        self.base.expectation_nodes(&self.map.forward(eta))
    }
    fn total_mass(&self, eta: &[f64]) -> Result<f64> {
        self.base.total_mass(&self.map.forward(eta))
    }
    fn in_support(&self, x: &[f64]) -> bool {
        self.base.in_support(x)
    }
    fn fisher_closed(&self, eta: &[f64]) -> Option<DMatrix<f64>> {
        let i = self.base.fisher_closed(&self.map.forward(eta))?;
        let j = self.map.jacobian(eta);
        Some(j.transpose() * i * j)
    }
    fn default_grid(&self) -> Vec<Vec<f64>> {
        self.base.default_grid().iter().map(|t| self.map.inverse(t)).collect()
    }
}

// ---------------------------------------------------------------------------
// Checked front end
// ---------------------------------------------------------------------------

/// Standardized score moments for p = 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AlphaTensors {
    pub alpha111: f64,
    pub alpha12: f64,
    pub alpha22: f64,
}

impl AlphaTensors {
    /// Efron's curvature γ² = α₂₂ − α₁₂² − 1.
    pub fn curvature(&self) -> f64 {
        self.alpha22 - self.alpha12 * self.alpha12 - 1.0
    }
}

/// Shared handle to a registered family with validated evaluators.
#[derive(Debug, Clone)]
pub struct ModelFamily(pub Arc<dyn Model>);

impl ModelFamily {
    pub fn new<M: Model + 'static>(m: M) -> Self {
        ModelFamily(Arc::new(m))
    }

    pub fn bernoulli() -> Self {
        Self::new(Bernoulli)
    }
    pub fn normal_mean() -> Self {
        Self::new(NormalMean)
    }
    pub fn normal_ms() -> Self {
        Self::new(NormalMs { log_scale: false })
    }
    pub fn normal_ls() -> Self {
        Self::new(NormalMs { log_scale: true })
    }
    pub fn linreg(design: DMatrix<f64>) -> Result<Self> {
        Ok(Self::new(LinReg::new(design)?))
    }
    pub fn mvn2() -> Self {
        Self::new(Mvn2)
    }

    /// Looks up a family by its CLI name. `linreg` uses the default
    /// 10-row design unless one is supplied.
    pub fn by_name(name: &str, design: Option<DMatrix<f64>>) -> Result<Self> {
        match name {
            "bernoulli" => Ok(Self::bernoulli()),
            "normal-mean" => Ok(Self::normal_mean()),
            "normal-ms" => Ok(Self::normal_ms()),
            "normal-ls" => Ok(Self::normal_ls()),
            "linreg" => Self::linreg(design.unwrap_or_else(|| LinReg::default_design(10))),
            "mvn2" => Ok(Self::mvn2()),
            other => Err(Error::Configuration(format!("unknown model '{other}'"))),
        }
    }

    pub fn names() -> &'static [&'static str] {
        &["bernoulli", "normal-mean", "normal-ms", "normal-ls", "linreg", "mvn2"]
    }

    pub fn name(&self) -> String {
        self.0.name()
    }
    pub fn dim(&self) -> usize {
        self.0.dim()
    }
    pub fn family(&self) -> Family {
        self.0.family()
    }
    pub fn inner(&self) -> &dyn Model {
        self.0.as_ref()
    }

    /// Rejects θ of the wrong length, non-finite, or within 1e-12 of ∂Θ.
    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::UnsupportedDimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        for (i, (&t, &(lo, hi))) in theta.iter().zip(&self.0.domain()).enumerate() {
            if !t.is_finite() || t <= lo + BOUNDARY_TOL || t >= hi - BOUNDARY_TOL {
                return Err(Error::domain(format!(
                    "{}: coordinate {i} = {t} is not inside ({lo}, {hi})",
                    self.name()
                )));
            }
        }
        Ok(())
    }

    /// Per-coordinate step cap keeping finite-difference stencils inside Θ.
    pub fn step_cap(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.0.domain())
            .map(|(&t, &(lo, hi))| 0.25 * (t - lo).min(hi - t))
            .collect()
    }

    pub fn log_density(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        if !self.0.in_support(x) {
            return Err(Error::domain(format!(
                "{}: observation {x:?} outside the support",
                self.name()
            )));
        }
        let v = self.0.log_f(x, theta);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::domain(format!("{}: log f({x:?}) is not finite", self.name())))
        }
    }

    /// `count` i.i.d. observations, reproducible per (stream, θ, count).
    pub fn sample(&self, theta: &[f64], count: usize, stream: SeededStream) -> Result<Vec<Vec<f64>>> {
        self.check(theta)?;
        let mut rng = stream.rng();
        Ok((0..count).map(|_| self.0.draw(theta, &mut rng)).collect())
    }

    pub fn expect(&self, theta: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
        self.check(theta)?;
        Ok(self.0.expect(theta, f))
    }

    fn loglik_hessian(&self, x: &[f64], theta: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(h) = self.0.hessian_closed(x, theta) {
            return Ok(h);
        }
        let opts = DiffOptions::richardson().with_cap(self.step_cap(theta));
        numerics::hessian(|t| self.0.log_f(x, t), theta, &opts)
    }

    fn loglik_score(&self, x: &[f64], theta: &[f64]) -> Result<DVector<f64>> {
        if let Some(g) = self.0.score_closed(x, theta) {
            return Ok(g);
        }
        let opts = DiffOptions::richardson().with_cap(self.step_cap(theta));
        numerics::gradient(|t| self.0.log_f(x, t), theta, &opts)
    }

    /// Expected negative Hessian of log f, evaluated with the model's
    /// expectation nodes regardless of any closed form.
    pub fn fisher_numeric(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        let p = self.dim();
        let mut i = DMatrix::zeros(p, p);
        for (w, x) in self.0.expectation_nodes(theta) {
            i -= self.loglik_hessian(&x, theta)? * w;
        }
        let i = 0.5 * (&i + i.transpose());
        ensure_pd(&i, &self.name())?;
        Ok(i)
    }

    /// i(θ): closed form when registered, otherwise [`Self::fisher_numeric`].
    pub fn fisher_info(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        match self.0.fisher_closed(theta) {
            Some(i) => {
                ensure_pd(&i, &self.name())?;
                Ok(i)
            }
            None => self.fisher_numeric(theta),
        }
    }

    /// α₁₁₁, α₁₂, α₂₂ for scalar families.
    pub fn alpha_tensors(&self, theta: &[f64]) -> Result<AlphaTensors> {
        if self.dim() != 1 {
            return Err(Error::UnsupportedDimension {
                expected: 1,
                got: self.dim(),
            });
        }
        let i = self.fisher_info(theta)?[(0, 0)];
        let (mut e111, mut e12, mut e22) = (0.0, 0.0, 0.0);
        for (w, x) in self.0.expectation_nodes(theta) {
            let l1 = self.loglik_score(&x, theta)?[0];
            let l2 = self.loglik_hessian(&x, theta)?[(0, 0)];
            e111 += w * l1 * l1 * l1;
            e12 += w * l1 * l2;
            e22 += w * l2 * l2;
        }
        Ok(AlphaTensors {
            alpha111: e111 / i.powf(1.5),
            alpha12: e12 / i.powf(1.5),
            alpha22: e22 / (i * i),
        })
    }

    /// ∫ exp(log f(·|θ)) over the support.
    pub fn normalization(&self, theta: &[f64]) -> Result<f64> {
        self.check(theta)?;
        self.0.total_mass(theta)
    }

    /// The family in η-coordinates, θ = map(η). The Jacobian must be
    /// nonsingular on the model's default grid.
    pub fn reparameterize(&self, map: Arc<dyn CoordMap>) -> Result<ModelFamily> {
        let r = Reparameterized {
            base: Arc::clone(&self.0),
            map,
        };
        for eta in r.default_grid() {
            let det = r.map.jacobian(&eta).determinant();
            if !det.is_finite() || det.abs() < 1e-300 {
                return Err(Error::domain(format!(
                    "singular reparameterization Jacobian at {eta:?}"
                )));
            }
        }
        Ok(ModelFamily(Arc::new(r)))
    }
}

fn ensure_pd(i: &DMatrix<f64>, name: &str) -> Result<()> {
    if i.iter().any(|v| !v.is_finite()) || i.clone().cholesky().is_none() {
        return Err(Error::NumericalDegeneracy(format!(
            "{name}: Fisher information is not positive definite"
        )));
    }
    Ok(())
}
