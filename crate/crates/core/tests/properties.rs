use predregret::asymptotics::{a_functional, a_functional_expanded, predictive_loss};
use predregret::exact::{self, chain_rule_residual, posterior_predictive_regret, prior_predictive_regret};
use predregret::models::ModelFamily;
use predregret::numerics::{cached_rule, integrate, RuleKind, SeededStream};
use predregret::priors::PriorSpec;
use proptest::prelude::*;
use rand::Rng;
use statrs::function::beta::ln_beta;

fn enumerate_regret(a: f64, b: f64, theta: f64, n: usize, m: usize) -> f64 {
    let marg = |s: usize, len: usize| ln_beta(a + s as f64, b + (len - s) as f64) - ln_beta(a, b);
    let mut total = 0.0;
    for bits in 0u32..(1 << (n + m)) {
        let s = (bits & ((1 << n) - 1)).count_ones() as usize;
        let t = (bits >> n).count_ones() as usize;
        let k = (s + t) as i32;
        let prob = theta.powi(k) * (1.0 - theta).powi((n + m) as i32 - k);
        let own = t as f64 * theta.ln() + (m - t) as f64 * (1.0 - theta).ln();
        total += prob * (own - (marg(s + t, n + m) - marg(s, n)));
    }
    total
}

fn shape() -> impl Strategy<Value = f64> {
    0.2f64..5.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regrets_are_nonnegative(a in shape(), b in shape(), theta in 0.0f64..=1.0, n in 0usize..40, m in 1usize..6) {
        let model = ModelFamily::bernoulli();
        let p = PriorSpec::beta(a, b).unwrap();
        prop_assert!(posterior_predictive_regret(&model, &p, &[theta], n, m).unwrap().value >= -1e-12);
        prop_assert!(prior_predictive_regret(&model, &p, &[theta], n).unwrap().value >= -1e-12);
    }

    #[test]
    fn counts_match_enumeration(a in shape(), b in shape(), theta in 0.01f64..0.99, n in 0usize..=10, m in 1usize..=4) {
        let model = ModelFamily::bernoulli();
        let p = PriorSpec::beta(a, b).unwrap();
        let fast = posterior_predictive_regret(&model, &p, &[theta], n, m).unwrap().value;
        prop_assert!((fast - enumerate_regret(a, b, theta, n, m)).abs() < 1e-12);
    }

    #[test]
    fn chain_rule_holds(a in shape(), b in shape(), theta in 0.01f64..0.99, n in 0usize..30, m in 1usize..10) {
        let p = PriorSpec::beta(a, b).unwrap();
        prop_assert!(chain_rule_residual(&ModelFamily::bernoulli(), &p, &[theta], n, m).unwrap().abs() < 1e-10);
    }

    #[test]
    fn normal_mean_chain_rule(mean in -2.0f64..2.0, var in 0.1f64..5.0, theta in -3.0f64..3.0, n in 1usize..30, m in 1usize..10) {
        let model = ModelFamily::normal_mean();
        let p = PriorSpec::normal(mean, var).unwrap();
        prop_assert!(chain_rule_residual(&model, &p, &[theta], n, m).unwrap().abs() < 1e-10);
        prop_assert!(posterior_predictive_regret(&model, &p, &[theta], n, m).unwrap().value >= -1e-12);
    }

    #[test]
    fn tau_identities(t1 in 0.05f64..0.95, t2 in 0.05f64..0.95, w in 0.1f64..0.9, a in shape(), b in shape(), n in 0usize..12, m in 1usize..5) {
        let model = ModelFamily::bernoulli();
        let tau = PriorSpec::discrete(vec![vec![t1], vec![t2]], vec![w, 1.0 - w]).unwrap();
        let r = exact::scoring_rule_check(&model, &tau, &[PriorSpec::beta(a, b).unwrap()], n, m).unwrap();
        prop_assert!(r.tau_first);
        for row in &r.rows {
            prop_assert!(row.decomposition_residual.abs() < 1e-10);
            prop_assert!(row.identity_residual.abs() < 1e-10);
        }
    }

    #[test]
    fn loss_ignores_constant_shift(a in shape(), b in shape(), theta in 0.05f64..0.95, c in -10.0f64..10.0) {
        let model = ModelFamily::bernoulli();
        let p = PriorSpec::beta(a, b).unwrap();
        let l0 = predictive_loss(&model, &p, &[theta]).unwrap();
        let l1 = predictive_loss(&model, &p.shifted(c), &[theta]).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-10);
        let f0 = exact::predictive_loss_finite(&model, &p, &[theta], 8, 3).unwrap().value;
        let f1 = exact::predictive_loss_finite(&model, &p.shifted(c), &[theta], 8, 3).unwrap().value;
        prop_assert_eq!(f0, f1);
    }

    #[test]
    fn a_functional_routes_agree(a in 0.3f64..4.0, b in 0.3f64..4.0, theta in 0.1f64..0.9) {
        let model = ModelFamily::bernoulli();
        let p = PriorSpec::beta(a, b).unwrap();
        let x = a_functional(&model, &p, &[theta]).unwrap();
        let y = a_functional_expanded(&model, &p, &[theta]).unwrap();
        prop_assert!((x - y).abs() < 1e-6 * x.abs().max(1.0));
    }

    #[test]
    fn fisher_closed_matches_numeric(beta in -2.0f64..2.0, lam in -1.0f64..1.0) {
        let model = ModelFamily::normal_ls();
        let theta = [beta, lam];
        let closed = model.fisher_info(&theta).unwrap();
        let numeric = model.fisher_numeric(&theta).unwrap();
        prop_assert!((closed - numeric).abs().max() < 1e-6);
    }

    #[test]
    fn legendre_is_exact_on_polynomials(count in 1usize..40, coeffs in prop::collection::vec(-1.0f64..1.0, 1..80)) {
        let rule = cached_rule(RuleKind::Legendre, count);
        let degree = (2 * count - 1).min(coeffs.len() - 1);
        let poly = |x: f64| coeffs[..=degree].iter().rev().fold(0.0, |acc, c| acc * x + c);
        let exact: f64 = coeffs[..=degree]
            .iter()
            .enumerate()
            .map(|(k, c)| if k % 2 == 0 { 2.0 * c / (k as f64 + 1.0) } else { 0.0 })
            .sum();
        prop_assert!((integrate(&rule, poly) - exact).abs() < 1e-12);
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), id in any::<u64>()) {
        let s = SeededStream::new(seed, id);
        let a: Vec<u64> = (0..8).map({ let mut r = s.rng(); move |_| r.random() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = s.rng(); move |_| r.random() }).collect();
        prop_assert_eq!(a, b);
    }
}
