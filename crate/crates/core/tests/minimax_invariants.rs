use predregret::minimax::{self, equalizer_scan, minimax_verify, PriorFamily, DEFAULT_K_VALUES};
use predregret::models::ModelFamily;
use predregret::priors::{jeffreys, Construction, HClassDensity, PriorSpec};

#[test]
fn jeffreys_is_an_equalizer_with_zero_constant() {
    for name in ModelFamily::names() {
        let model = ModelFamily::by_name(name, None).unwrap();
        let s = predregret::loss_surface(&model, &jeffreys(&model).unwrap(), &model.inner().default_grid()).unwrap();
        assert!(s.mean.abs() < 1e-8 && s.maxdev < 1e-8, "{name}: {s:?}");
    }
}

#[test]
fn certified_prior_has_smallest_constant() {
    let ls = ModelFamily::normal_ls();
    let grid = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
    let scan = equalizer_scan(&ls, PriorFamily::PowerSigma, &grid, &ls.inner().default_grid()).unwrap();
    let a0 = scan.argmin_a.unwrap();
    let p0 = PriorSpec::power_sigma(&ls, a0).unwrap();
    let cert = minimax_verify(
        &ls,
        &p0,
        Construction::LocationLogscale,
        HClassDensity::default_member(),
        &DEFAULT_K_VALUES,
    )
    .unwrap();
    assert!(cert.verified(), "{:?}", cert.notes);
    for row in scan.rows.iter().filter(|r| r.equalizer) {
        assert!(cert.c <= row.constant + 1e-12);
    }
}

#[test]
fn scaled_regret_bounded_and_identity_exact() {
    let h = HClassDensity::default_member();
    let ls = ModelFamily::normal_ls();
    let p0 = PriorSpec::power_sigma(&ls, 1.0).unwrap();
    let cert = minimax_verify(&ls, &p0, Construction::LocationLogscale, h, &DEFAULT_K_VALUES).unwrap();
    let scaled: Vec<f64> = cert
        .k_values
        .iter()
        .zip(&cert.d_values)
        .map(|(k, d)| d * k * k)
        .collect();
    assert!(scaled.iter().all(|v| *v < 2.0 * h.alpha().unwrap()), "{scaled:?}");
    for (z, d) in cert.zeta_values.iter().zip(&cert.d_values) {
        assert!((z - d + cert.c).abs() < 1e-8);
    }
}

#[test]
fn regression_sequence_decays() {
    let lr = ModelFamily::by_name("linreg", None).unwrap();
    let p0 = PriorSpec::power_sigma(&lr, 1.0).unwrap();
    let cert = minimax_verify(
        &lr,
        &p0,
        Construction::RegressionLogscale { q: 2 },
        HClassDensity::default_member(),
        &DEFAULT_K_VALUES,
    )
    .unwrap();
    assert!(cert.verified(), "{:?}", cert.notes);
    assert!(cert.d_values.last().unwrap() < &0.02);
    let rows = minimax::information_limit_check(
        &lr,
        &p0,
        cert.c,
        Construction::RegressionLogscale { q: 2 },
        HClassDensity::default_member(),
        &[32.0],
    )
    .unwrap();
    assert!((rows[0].zeta - 2.0).abs() < 0.02);
}

#[test]
fn bivariate_normal_scan_only() {
    let m = ModelFamily::mvn2();
    let grid = [0.0, 1.0, 2.0, 3.0];
    let scan = equalizer_scan(&m, PriorFamily::MvnPower, &grid, &m.inner().default_grid()).unwrap();
    for row in &scan.rows {
        assert!(row.equalizer);
        assert!((row.constant - ((row.a - 1.0).powi(2) - 1.0)).abs() < 1e-6, "{row:?}");
    }
    let p0 = PriorSpec::mvn_power(&m, 1.0).unwrap();
    let cert = minimax_verify(
        &m,
        &p0,
        Construction::LineScale,
        HClassDensity::default_member(),
        &DEFAULT_K_VALUES,
    )
    .unwrap();
    assert_eq!(cert.status, minimax::CertificateStatus::Refused);
    assert!(!cert.notes.is_empty());
}
