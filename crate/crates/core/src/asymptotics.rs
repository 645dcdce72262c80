//! First-order asymptotic functionals: A(θ, π), the predictive loss
//! L(θ, π) = A(θ, π) − A(θ, π^J), the scalar curvature term M̄(θ), and the
//! compact-prior integrals d(τ, π) and ζ(τ).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{CoordMap, ModelFamily};
use crate::numerics::{self, gradient_step, nested_step};
use crate::priors::{jeffreys, PriorSpec};

/// Relative tolerance for the adaptive tensor rule over τ's support.
pub const INTEGRAL_REL_TOL: f64 = 1e-8;
/// Cap on the total node count of that rule.
pub const INTEGRAL_MAX_NODES: usize = 1 << 21;

/// L(θ, π) over a grid with constancy statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSurface {
    pub model: String,
    pub prior: String,
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub maxdev: f64,
}

fn inverse(i: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    i.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::domain("Fisher information is singular"))
}

fn joint_cap(model: &ModelFamily, prior: &PriorSpec, theta: &[f64]) -> Vec<f64> {
    model
        .step_cap(theta)
        .iter()
        .zip(prior.support_step_cap(theta))
        .map(|(a, b)| a.min(b))
        .collect()
}

/// i^{-1}(θ) ∇ρ(θ).
fn info_weighted_gradient(model: &ModelFamily, prior: &PriorSpec, theta: &[f64]) -> Result<DVector<f64>> {
    let i = model.fisher_info(theta)?;
    Ok(inverse(&i)? * prior.rho_gradient(theta)?)
}

/// Stencil step for differentiating i^{-1}∇ρ: the plain first-derivative
/// optimum when both factors are closed forms, a wider one when ∇ρ or i
/// already carry finite-difference noise.
fn divergence_step(model: &ModelFamily, prior: &PriorSpec, theta: &[f64], s: usize) -> f64 {
    let analytic = prior.has_closed_derivatives() && model.inner().fisher_closed(theta).is_some();
    if analytic {
        gradient_step(theta[s])
    } else {
        nested_step(theta[s])
    }
}

/// A(θ, π) = i^{rs}ρ_rρ_s + 2 D_s(i^{rs}ρ_r), differentiating the product
/// i^{rs}ρ_r as a whole.
pub fn a_functional(model: &ModelFamily, prior: &PriorSpec, theta: &[f64]) -> Result<f64> {
    model.check(theta)?;
    let grad = prior.rho_gradient(theta)?;
    let iinv = inverse(&model.fisher_info(theta)?)?;
    let quad = grad.dot(&(&iinv * &grad));
    let cap = joint_cap(model, prior, theta);
    let mut div = 0.0;
    for s in 0..theta.len() {
        let h = divergence_step(model, prior, theta, s).min(cap[s]);
        let comp = |t: &[f64]| {
            info_weighted_gradient(model, prior, t)
                .map(|v| v[s])
                .unwrap_or(f64::NAN)
        };
        div += numerics::partial(&comp, theta, s, h, true)?;
    }
    Ok(quad + 2.0 * div)
}

/// A(θ, π) through ρᵀi⁻¹ρ + 2 tr(i⁻¹ H_ρ) + 2 Σ_s (D_s i⁻¹)_{rs} ρ_r with
/// D_s i⁻¹ = −i⁻¹ (D_s i) i⁻¹.
pub fn a_functional_expanded(model: &ModelFamily, prior: &PriorSpec, theta: &[f64]) -> Result<f64> {
    model.check(theta)?;
    let rho = prior.rho_derivatives(theta)?;
    let i = model.fisher_info(theta)?;
    let iinv = inverse(&i)?;
    let p = theta.len();
    let di: Vec<DMatrix<f64>> = match model.inner().fisher_derivative_closed(theta) {
        Some(d) => d,
        None => {
            let cap = model.step_cap(theta);
            let mut out = Vec::with_capacity(p);
            for s in 0..p {
                let h = nested_step(theta[s]).min(cap[s]);
                let mut m = DMatrix::zeros(p, p);
                for r in 0..p {
                    for c in r..p {
                        let f = |t: &[f64]| model.fisher_info(t).map(|i| i[(r, c)]).unwrap_or(f64::NAN);
                        let v = numerics::partial(&f, theta, s, h, true)?;
                        m[(r, c)] = v;
                        m[(c, r)] = v;
                    }
                }
                out.push(m);
            }
            out
        }
    };
    let quad = rho.grad.dot(&(&iinv * &rho.grad));
    let trace = (&iinv * &rho.hess).trace();
    let mut cross = 0.0;
    for (s, dis) in di.iter().enumerate() {
        let dinv = -(&iinv * dis * &iinv);
        for r in 0..p {
            cross += dinv[(r, s)] * rho.grad[r];
        }
    }
    Ok(quad + 2.0 * trace + 2.0 * cross)
}

/// L(θ, π) = A(θ, π) − A(θ, π^J).
pub fn predictive_loss(model: &ModelFamily, prior: &PriorSpec, theta: &[f64]) -> Result<f64> {
    let j = jeffreys(model)?;
    predictive_loss_against(model, prior, &j, theta)
}

/// L(θ, π) with a precomputed Jeffreys prior.
pub fn predictive_loss_against(
    model: &ModelFamily,
    prior: &PriorSpec,
    jeffreys_prior: &PriorSpec,
    theta: &[f64],
) -> Result<f64> {
    Ok(a_functional(model, prior, theta)? - a_functional(model, jeffreys_prior, theta)?)
}

/// M̄(θ) = α₁₁₁²/12 + γ²/2 for scalar families.
pub fn mbar_scalar(model: &ModelFamily, theta: &[f64]) -> Result<f64> {
    let a = model.alpha_tensors(theta)?;
    Ok(a.alpha111 * a.alpha111 / 12.0 + 0.5 * a.curvature())
}

/// L(θ, π) on a grid, evaluated in parallel, with mean and max deviation.
pub fn loss_surface(model: &ModelFamily, prior: &PriorSpec, grid: &[Vec<f64>]) -> Result<LossSurface> {
    let j = jeffreys(model)?;
    let values: Vec<f64> = grid
        .par_iter()
        .map(|t| predictive_loss_against(model, prior, &j, t))
        .collect::<Result<_>>()?;
    let (mean, maxdev) = constancy(&values);
    Ok(LossSurface {
        model: model.name(),
        prior: prior.name.clone(),
        grid: grid.to_vec(),
        values,
        mean,
        maxdev,
    })
}

/// (mean, max |v − mean|).
pub fn constancy(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let maxdev = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    (mean, maxdev)
}

fn compact_box(model: &ModelFamily, tau: &PriorSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if !tau.proper || !tau.is_compact() {
        return Err(Error::Configuration(format!(
            "{} is not a proper compactly supported density",
            tau.name
        )));
    }
    let b = tau
        .support_box()
        .ok_or_else(|| Error::Configuration(format!("{} has no density", tau.name)))?;
    let domain = model.inner().domain();
    if b.len() != domain.len() {
        return Err(Error::UnsupportedDimension {
            expected: domain.len(),
            got: b.len(),
        });
    }
    for (r, (&(lo, hi), &(dlo, dhi))) in b.iter().zip(&domain).enumerate() {
        if !(lo > dlo && hi < dhi) {
            return Err(Error::domain(format!(
                "support of {} touches the boundary of Θ in coordinate {r}",
                tau.name
            )));
        }
    }
    Ok((b.iter().map(|x| x.0).collect(), b.iter().map(|x| x.1).collect()))
}

/// ∫ f(θ) τ(θ) dθ over τ's compact box with the adaptive tensor rule.
/// Node-level failures become NaN, which surfaces as a numerical failure.
pub fn integrate_against<F>(model: &ModelFamily, tau: &PriorSpec, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let (lo, hi) = compact_box(model, tau)?;
    numerics::adaptive_integrate_box(
        |t: &[f64]| {
            let w = match tau.log_density_normalized(t) {
                Ok(v) => v.exp(),
                Err(_) => return 0.0,
            };
            if w == 0.0 {
                return 0.0;
            }
            match f(t) {
                Ok(v) => w * v,
                Err(_) => f64::NAN,
            }
        },
        &lo,
        &hi,
        INTEGRAL_REL_TOL,
        INTEGRAL_MAX_NODES,
    )
}

/// d(τ, π) = ∫ i^{rs}(ρ_r − μ_r)(ρ_s − μ_s) τ dθ.
pub fn asymptotic_regret(model: &ModelFamily, tau: &PriorSpec, prior: &PriorSpec) -> Result<f64> {
    let v = integrate_against(model, tau, |t| {
        let diff = prior.rho_gradient(t)? - tau.rho_gradient(t)?;
        let iinv = inverse(&model.fisher_info(t)?)?;
        Ok(diff.dot(&(&iinv * &diff)))
    })?;
    if v < -1e-10 {
        return Err(Error::NumericalFailure(format!(
            "d({}, {}) = {v} is negative",
            tau.name, prior.name
        )));
    }
    Ok(v)
}

/// ζ(τ) = d(τ, π^J).
pub fn predictive_information(model: &ModelFamily, tau: &PriorSpec) -> Result<f64> {
    asymptotic_regret(model, tau, &jeffreys(model)?)
}

/// ∫ L(θ, π) τ(θ) dθ.
pub fn expected_loss(model: &ModelFamily, tau: &PriorSpec, prior: &PriorSpec) -> Result<f64> {
    let j = jeffreys(model)?;
    integrate_against(model, tau, |t| predictive_loss_against(model, prior, &j, t))
}

/// ∫L(θ,π)τ − ∫L(θ,τ)τ − d(τ,π), which vanishes for τ in the compact class.
pub fn scoring_bridge_residual(model: &ModelFamily, tau: &PriorSpec, prior: &PriorSpec) -> Result<f64> {
    Ok(expected_loss(model, tau, prior)? - expected_loss(model, tau, tau)? - asymptotic_regret(model, tau, prior)?)
}

/// max over an η-grid of |L(θ(η), π) − L_η(η, π_η)|, where the right side
/// is computed in the reparameterized family with the Jacobian-transformed
/// prior.
pub fn invariance_check(
    model: &ModelFamily,
    prior: &PriorSpec,
    map: Arc<dyn CoordMap>,
    eta_grid: &[Vec<f64>],
) -> Result<f64> {
    let model_eta = model.reparameterize(Arc::clone(&map))?;
    let prior_eta = prior.transformed(Arc::clone(&map))?;
    let j = jeffreys(model)?;
    let j_eta = jeffreys(&model_eta)?;
    let diffs: Vec<f64> = eta_grid
        .par_iter()
        .map(|eta| {
            let theta = map.forward(eta);
            let l = predictive_loss_against(model, prior, &j, &theta)?;
            let l_eta = predictive_loss_against(&model_eta, &prior_eta, &j_eta, eta)?;
            Ok((l - l_eta).abs())
        })
        .collect::<Result<_>>()?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArcsineSquare, IdentityMap, LogCoord};
    use crate::priors::{CompactPriorSequence, Construction, HClassDensity};

    fn ex61(a: f64, t: f64) -> f64 {
        (a - 0.5) * (-4.0 * (a - 0.5) + (a - 1.5) / (t * (1.0 - t)))
    }

    #[test]
    fn bernoulli_beta_closed_form() {
        let m = ModelFamily::bernoulli();
        for a in [0.5, 1.0, 1.5, 2.0, 3.2] {
            let p = PriorSpec::beta(a, a).unwrap();
            for t in m.inner().default_grid() {
                let l = predictive_loss(&m, &p, &t).unwrap();
                assert!((l - ex61(a, t[0])).abs() < 1e-7, "a={a} θ={t:?}: {l}");
            }
        }
    }

    #[test]
    fn normal_mean_examples() {
        let m = ModelFamily::normal_mean();
        let p = PriorSpec::exp_tilt(0.8, 0.0);
        for t in [-2.0, 0.0, 3.0] {
            assert!((a_functional(&m, &p, &[t]).unwrap() - 0.64).abs() < 1e-9);
            assert!((predictive_loss(&m, &p, &[t]).unwrap() - 0.64).abs() < 1e-9);
        }
        let n = PriorSpec::normal(1.0, 2.0).unwrap();
        // (ρ')² + 2ρ'' with ρ' = −(θ−1)/2, ρ'' = −1/2
        let t: f64 = 0.3;
        let expect = ((t - 1.0) / 2.0).powi(2) - 1.0;
        assert!((a_functional(&m, &n, &[t]).unwrap() - expect).abs() < 1e-9);
        assert!(a_functional(&m, &PriorSpec::flat(&m), &[0.4]).unwrap().abs() < 1e-12);
        assert!(mbar_scalar(&m, &[0.2]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn normal_location_scale_equalizers() {
        let m = ModelFamily::normal_ls();
        for a in [0.0, 1.0, 2.0, 3.0] {
            let p = PriorSpec::power_sigma(&m, a).unwrap();
            for t in m.inner().default_grid() {
                assert!((a_functional(&m, &p, &t).unwrap() - 0.5 * (a - 1.0f64).powi(2)).abs() < 1e-9);
            }
            let s = loss_surface(&m, &p, &m.inner().default_grid()).unwrap();
            assert!(s.maxdev < 1e-8);
            assert!((s.mean - 0.5 * ((a - 1.0f64).powi(2) - 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn product_and_expanded_routes_agree() {
        let cases: Vec<(ModelFamily, PriorSpec)> = {
            let b = ModelFamily::bernoulli();
            let ms = ModelFamily::normal_ms();
            let mv = ModelFamily::mvn2();
            let lr = ModelFamily::by_name("linreg", None).unwrap();
            vec![
                (b.clone(), PriorSpec::beta(2.0, 3.5).unwrap()),
                (ms.clone(), PriorSpec::power_sigma(&ms, 1.7).unwrap()),
                (mv.clone(), PriorSpec::mvn_power(&mv, 1.5).unwrap()),
                (lr.clone(), PriorSpec::power_sigma(&lr, 0.5).unwrap()),
            ]
        };
        for (m, p) in cases {
            for t in m.inner().default_grid() {
                let a = a_functional(&m, &p, &t).unwrap();
                let b = a_functional_expanded(&m, &p, &t).unwrap();
                assert!(
                    (a - b).abs() < 1e-6 * a.abs().max(1.0),
                    "{} {t:?}: {a} vs {b}",
                    m.name()
                );
            }
        }
    }

    #[test]
    fn jeffreys_has_zero_loss_and_shift_invariance() {
        for name in ModelFamily::names() {
            let m = ModelFamily::by_name(name, None).unwrap();
            let j = jeffreys(&m).unwrap();
            for t in m.inner().default_grid() {
                assert!(predictive_loss(&m, &j, &t).unwrap().abs() < 1e-8);
            }
        }
        let m = ModelFamily::bernoulli();
        let p = PriorSpec::beta(1.5, 2.5).unwrap();
        let q = p.shifted(17.25);
        let a = predictive_loss(&m, &p, &[0.37]).unwrap();
        let b = predictive_loss(&m, &q, &[0.37]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mbar_bernoulli() {
        let m = ModelFamily::bernoulli();
        assert!(mbar_scalar(&m, &[0.5]).unwrap().abs() < 1e-12);
        let v3 = mbar_scalar(&m, &[0.3]).unwrap();
        let v7 = mbar_scalar(&m, &[0.7]).unwrap();
        assert!((v3 - v7).abs() < 1e-12);
        assert!((v3 - (0.4f64).powi(2) / (0.21 * 12.0)).abs() < 1e-12);
        assert!(matches!(
            mbar_scalar(&ModelFamily::normal_ls(), &[0.0, 0.0]),
            Err(Error::UnsupportedDimension { .. })
        ));
    }

    #[test]
    fn compact_integrals() {
        let h = HClassDensity::default_member();
        let alpha = h.alpha().unwrap();
        let nm = ModelFamily::normal_mean();
        for k in [1.0, 3.0] {
            let tau = CompactPriorSequence::new(Construction::LineScale, h, k)
                .unwrap()
                .prior();
            assert!(asymptotic_regret(&nm, &tau, &tau).unwrap().abs() < 1e-10);
            let d = asymptotic_regret(&nm, &tau, &PriorSpec::flat(&nm)).unwrap();
            assert!(((d - alpha / (k * k)) / d).abs() < 1e-8);
            let z = predictive_information(&nm, &tau).unwrap();
            assert!((z - d).abs() < 1e-12);
        }
        let b = ModelFamily::bernoulli();
        let t = CompactPriorSequence::new(Construction::LineScale, h, 1.0)
            .unwrap()
            .prior();
        assert!(matches!(
            asymptotic_regret(&b, &t, &PriorSpec::flat(&b)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn scoring_bridge() {
        let h = HClassDensity::default_member();
        let nm = ModelFamily::normal_mean();
        let tau = CompactPriorSequence::new(Construction::LineScale, h, 2.0)
            .unwrap()
            .prior();
        let r = scoring_bridge_residual(&nm, &tau, &PriorSpec::normal(0.5, 3.0).unwrap()).unwrap();
        assert!(r.abs() < 1e-6, "{r}");
        let ls = ModelFamily::normal_ls();
        let tau = CompactPriorSequence::new(Construction::LocationLogscale, h, 1.0)
            .unwrap()
            .prior();
        let r = scoring_bridge_residual(&ls, &tau, &PriorSpec::power_sigma(&ls, 3.0).unwrap()).unwrap();
        assert!(r.abs() < 1e-6, "{r}");
    }

    #[test]
    fn invariance() {
        let ms = ModelFamily::normal_ms();
        let grid: Vec<Vec<f64>> = vec![vec![0.0, -0.5], vec![1.0, 0.2], vec![-2.0, 0.9]];
        for a in [0.0, 1.0, 2.5] {
            let p = PriorSpec::power_sigma(&ms, a).unwrap();
            let d = invariance_check(&ms, &p, Arc::new(LogCoord { index: 1 }), &grid).unwrap();
            assert!(d < 1e-5, "a={a}: {d}");
        }
        let b = ModelFamily::bernoulli();
        let eta: Vec<Vec<f64>> = [0.3, 0.6, 0.9, 1.2].iter().map(|e| vec![*e]).collect();
        for a in [0.5, 1.5, 2.0] {
            let p = PriorSpec::beta(a, a).unwrap();
            let d = invariance_check(&b, &p, Arc::new(ArcsineSquare), &eta).unwrap();
            assert!(d < 1e-5, "a={a}: {d}");
            let ident: Vec<Vec<f64>> = vec![vec![0.2], vec![0.55]];
            assert!(invariance_check(&b, &p, Arc::new(IdentityMap), &ident).unwrap() < 1e-6);
        }
    }
}
