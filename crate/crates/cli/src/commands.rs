use predregret::asymptotics::{a_functional, loss_surface, predictive_loss};
use predregret::exact::{
    self, c_n, chain_rule_residual, convergence_table, mc_predictive_loss, mc_regret, posterior_predictive_regret,
    predictive_loss_finite, schedule, scoring_rule_check, MRule, McOptions, Method, RegretEstimate,
};
use predregret::minimax::{equalizer_scan, minimax_verify, u_class_diagnostic, CertificateStatus, PriorFamily};
use predregret::models::{Family, LinReg};
use predregret::numerics::SeededStream;
use predregret::{jeffreys, Construction, Error, HClassDensity, MinimaxCertificate, ModelFamily, PriorSpec};

use crate::config::{parse_design, parse_list, parse_mrule, parse_ns, parse_points, CommandName, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::report::{certificate_table, Cell, Report, Table};

pub const DEFAULT_K: &str = "2,4,8,16,32";
pub const DEFAULT_H: &str = "4,4";
pub const DEFAULT_REPLICATES: usize = 2000;
const IDENTITY_TOL: f64 = 1e-10;

/// A finished report, plus the reason for a nonzero verification exit.
pub struct Outcome {
    pub report: Report,
    pub failure: Option<String>,
}

impl Outcome {
    fn ok(report: Report) -> Self {
        Outcome { report, failure: None }
    }
}

pub fn run(cfg: ExperimentConfig) -> CliResult<Outcome> {
    let command = cfg.command();
    check_fields(&cfg, allowed(command))?;
    match command {
        CommandName::Loss => loss(cfg),
        CommandName::Converge => converge(cfg),
        CommandName::Minimax => minimax(cfg),
        CommandName::Equalizer => equalizer(cfg),
        CommandName::Uclass => uclass(cfg),
        CommandName::Reproduce => reproduce(cfg),
        CommandName::IdentityChecks => identity_checks(cfg),
    }
}

fn allowed(c: CommandName) -> &'static [&'static str] {
    match c {
        CommandName::Loss => &["model", "prior", "theta", "n", "m", "mrule", "replicates", "design"],
        CommandName::Converge => &["model", "prior", "theta", "n", "mrule", "design"],
        CommandName::Minimax => &["model", "prior", "sequence", "k", "h", "design"],
        CommandName::Equalizer => &["model", "family", "a", "theta", "design"],
        CommandName::Uclass => &["model", "prior", "theta", "n", "mrule", "design"],
        CommandName::Reproduce => &["example"],
        CommandName::IdentityChecks => &["replicates"],
    }
}

fn check_fields(cfg: &ExperimentConfig, allowed: &[&str]) -> CliResult<()> {
    let set = [
        ("model", cfg.model.is_some()),
        ("prior", cfg.prior.is_some()),
        ("theta", cfg.theta.is_some()),
        ("n", cfg.n.is_some()),
        ("m", cfg.m.is_some()),
        ("mrule", cfg.mrule.is_some()),
        ("family", cfg.family.is_some()),
        ("a", cfg.a.is_some()),
        ("sequence", cfg.sequence.is_some()),
        ("k", cfg.k.is_some()),
        ("h", cfg.h.is_some()),
        ("example", cfg.example.is_some()),
        ("replicates", cfg.replicates.is_some()),
        ("design", cfg.design.is_some()),
    ];
    match set.iter().find(|(name, on)| *on && !allowed.contains(name)) {
        Some((name, _)) => Err(CliError::config(
            name,
            format!("not used by `{}`", cfg.command().name()),
        )),
        None => Ok(()),
    }
}

fn model_of(cfg: &ExperimentConfig) -> CliResult<ModelFamily> {
    let name = cfg.require("model", &cfg.model)?;
    let design = cfg.design.as_deref().map(parse_design).transpose()?;
    if design.is_some() && name != "linreg" {
        return Err(CliError::config("design", "only the linreg model takes a design"));
    }
    ModelFamily::by_name(name, design).map_err(|e| CliError::config("model", e.to_string()))
}

fn prior_of(cfg: &ExperimentConfig, model: &ModelFamily) -> CliResult<PriorSpec> {
    let s = cfg.require("prior", &cfg.prior)?;
    PriorSpec::parse(s, model).map_err(|e| CliError::config("prior", e.to_string()))
}

fn grid_of(cfg: &ExperimentConfig, model: &ModelFamily) -> CliResult<Vec<Vec<f64>>> {
    let grid = match &cfg.theta {
        Some(s) => parse_points("theta", s, model.dim())?,
        None => model.inner().default_grid(),
    };
    for t in &grid {
        model.check(t).map_err(|e| CliError::config("theta", e.to_string()))?;
    }
    Ok(grid)
}

fn h_of(cfg: &ExperimentConfig) -> CliResult<HClassDensity> {
    let v = parse_list("h", cfg.h.as_deref().unwrap_or(DEFAULT_H))?;
    if v.len() != 2 {
        return Err(CliError::config("h", "expects two Beta shapes `a,b`"));
    }
    HClassDensity::new(v[0], v[1]).map_err(|e| CliError::config("h", e.to_string()))
}

fn k_of(cfg: &ExperimentConfig) -> CliResult<Vec<f64>> {
    parse_list("k", cfg.k.as_deref().unwrap_or(DEFAULT_K))
}

fn theta_columns(dim: usize) -> Vec<String> {
    if dim == 1 {
        vec!["theta".into()]
    } else {
        (1..=dim).map(|i| format!("theta_{i}")).collect()
    }
}

fn theta_cells(t: &[f64]) -> Vec<Cell> {
    t.iter().map(|v| Cell::Num(*v)).collect()
}

fn cols(head: Vec<String>, tail: &[&str]) -> Vec<String> {
    head.into_iter().chain(tail.iter().map(|s| s.to_string())).collect()
}

fn method_name(m: Method) -> String {
    serde_json::to_value(m)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn estimate_note(e: &RegretEstimate) -> String {
    match (&e.divergence, &e.convention) {
        (Some(d), _) => format!("diverges: {d}"),
        (None, Some(c)) => c.clone(),
        (None, None) => String::new(),
    }
}

fn mc(cfg: &ExperimentConfig, stream_id: u64) -> McOptions {
    McOptions {
        stream: SeededStream::new(cfg.seed(), stream_id),
        replicates: cfg.replicates.unwrap_or(DEFAULT_REPLICATES),
    }
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

fn loss(cfg: ExperimentConfig) -> CliResult<Outcome> {
    let model = model_of(&cfg)?;
    let prior = prior_of(&cfg, &model)?;
    let grid = grid_of(&cfg, &model)?;
    let jef = jeffreys(&model)?;
    let surface = loss_surface(&model, &prior, &grid)?;
    let tc = theta_columns(model.dim());

    let mut t = Table::new("loss", &cols(tc.clone(), &["A", "A_jeffreys", "L"]));
    for (theta, l) in grid.iter().zip(&surface.values) {
        let mut row = theta_cells(theta);
        row.push(a_functional(&model, &prior, theta)?.into());
        row.push(a_functional(&model, &jef, theta)?.into());
        row.push((*l).into());
        t.push(row);
    }
    let mut tables = vec![t];

    if cfg.m.is_some() && cfg.mrule.is_some() {
        return Err(CliError::config("m", "give either m or mrule, not both"));
    }
    if cfg.m.is_some() && cfg.n.is_none() {
        return Err(CliError::config("m", "only meaningful together with n"));
    }
    if let Some(ns) = &cfg.n {
        let ns = parse_ns("n", ns)?;
        let sched: Vec<(usize, usize)> = match cfg.m {
            Some(0) => return Err(CliError::config("m", "must be positive")),
            Some(m) => ns.iter().map(|&n| (n, m)).collect(),
            None => schedule(&ns, parse_mrule(cfg.mrule.as_deref().unwrap_or("n"))?),
        };
        let mut f = Table::new(
            "finite",
            &cols(tc, &["n", "m", "c_n", "L_n", "std_error", "cnL", "method", "note"]),
        );
        let mut stream_id = 0u64;
        for theta in &grid {
            for &(n, m) in &sched {
                let est = match predictive_loss_finite(&model, &prior, theta, n, m) {
                    Err(Error::UnsupportedPair { .. }) => {
                        stream_id += 1;
                        mc_predictive_loss(&model, &prior, theta, n, m, &mc(&cfg, stream_id))?
                    }
                    other => other?,
                };
                let cn = c_n(n, m);
                let mut row = theta_cells(theta);
                row.extend([
                    n.into(),
                    m.into(),
                    cn.into(),
                    est.value.into(),
                    est.std_error.into(),
                    (cn * est.value).into(),
                    method_name(est.method).into(),
                    estimate_note(&est).into(),
                ]);
                f.push(row);
            }
        }
        tables.push(f);
    }
    let mut report = Report::new(cfg);
    report.tables = tables;
    Ok(Outcome::ok(report))
}

// ---------------------------------------------------------------------------
// converge
// ---------------------------------------------------------------------------

pub const CONVERGE_COLUMNS: [&str; 6] = ["n", "m", "c_n", "cnL", "L_limit", "abs_err"];

fn converge_table(
    model: &ModelFamily,
    prior: &PriorSpec,
    theta: &[f64],
    ns: &[usize],
    rule: MRule,
) -> CliResult<Table> {
    let ct = convergence_table(model, prior, theta, &schedule(ns, rule))?;
    let mut t = Table::new("converge", &CONVERGE_COLUMNS);
    for r in &ct.rows {
        t.push(vec![
            r.n.into(),
            r.m.into(),
            r.c_n.into(),
            r.cn_l.into(),
            r.l_limit.into(),
            r.abs_err.into(),
        ]);
    }
    Ok(t)
}

fn converge(cfg: ExperimentConfig) -> CliResult<Outcome> {
    let model = model_of(&cfg)?;
    let prior = prior_of(&cfg, &model)?;
    let theta = parse_points("theta", cfg.require("theta", &cfg.theta)?, model.dim())?;
    if theta.len() != 1 {
        return Err(CliError::config("theta", "converge takes a single point"));
    }
    model
        .check(&theta[0])
        .map_err(|e| CliError::config("theta", e.to_string()))?;
    let ns = parse_ns("n", cfg.n.as_deref().unwrap_or("32:512"))?;
    let rule = parse_mrule(cfg.mrule.as_deref().unwrap_or("n"))?;
    let t = converge_table(&model, &prior, &theta[0], &ns, rule)?;
    let mut report = Report::new(cfg);
    report.tables.push(t);
    Ok(Outcome::ok(report))
}

// ---------------------------------------------------------------------------
// minimax
// ---------------------------------------------------------------------------

fn default_sequence(model: &ModelFamily) -> Option<&'static str> {
    match model.family() {
        Family::NormalMean => Some("line-scale"),
        Family::NormalMs { log_scale: true } => Some("location-logscale"),
        Family::LinReg { .. } => Some("regression-logscale"),
        Family::Mvn2 => Some("location-logscale"),
        _ => None,
    }
}

fn certify(report: &mut Report, cert: MinimaxCertificate) -> Option<String> {
    let failure = (cert.status == CertificateStatus::VerificationFailed)
        .then(|| format!("{} with {}: {}", cert.prior, cert.sequence, cert.notes.join("; ")));
    report.tables.push(certificate_table(&cert));
    report.certificates.push(cert);
    failure
}

fn minimax(cfg: ExperimentConfig) -> CliResult<Outcome> {
    let model = model_of(&cfg)?;
    let prior = prior_of(&cfg, &model)?;
    let seq = match cfg.sequence.as_deref().or_else(|| default_sequence(&model)) {
        Some(s) => s,
        None => {
            return Err(CliError::config(
                "sequence",
                format!("required for model {}", model.name()),
            ))
        }
    };
    let construction =
        Construction::parse(seq, model.dim()).map_err(|e| CliError::config("sequence", e.to_string()))?;
    let cert = minimax_verify(&model, &prior, construction, h_of(&cfg)?, &k_of(&cfg)?)?;
    let mut report = Report::new(cfg);
    let failure = certify(&mut report, cert);
    Ok(Outcome { report, failure })
}

// ---------------------------------------------------------------------------
// equalizer
// ---------------------------------------------------------------------------

fn default_family(model: &ModelFamily) -> CliResult<PriorFamily> {
    match model.family() {
        Family::Bernoulli => Ok(PriorFamily::SymmetricBeta),
        Family::NormalMs { .. } | Family::LinReg { .. } => Ok(PriorFamily::PowerSigma),
        Family::Mvn2 => Ok(PriorFamily::MvnPower),
        _ => Err(CliError::config(
            "family",
            format!("no default family for {}", model.name()),
        )),
    }
}

fn equalizer_tables(
    model: &ModelFamily,
    family: PriorFamily,
    a: &[f64],
    grid: &[Vec<f64>],
    closed: Option<&dyn Fn(f64) -> f64>,
) -> CliResult<Vec<Table>> {
    let r = equalizer_scan(model, family, a, grid)?;
    let head: &[&str] = if closed.is_some() {
        &["a", "constant", "closed", "abs_err", "maxdev", "equalizer"]
    } else {
        &["a", "constant", "maxdev", "equalizer"]
    };
    let mut t = Table::new("equalizer", head);
    for row in &r.rows {
        let mut cells = vec![row.a.into(), row.constant.into()];
        if let Some(f) = closed {
            cells.push(f(row.a).into());
            cells.push((row.constant - f(row.a)).abs().into());
        }
        cells.extend([row.maxdev.into(), row.equalizer.into()]);
        t.push(cells);
    }
    let mut s = Table::new("equalizer_summary", &["family", "argmin_a", "min_constant"]);
    s.push(vec![family.name().into(), r.argmin_a.into(), r.min_constant.into()]);
    Ok(vec![t, s])
}

fn equalizer(cfg: ExperimentConfig) -> CliResult<Outcome> {
    let model = model_of(&cfg)?;
    let family = match &cfg.family {
        Some(f) => PriorFamily::parse(f).map_err(|e| CliError::config("family", e.to_string()))?,
        None => default_family(&model)?,
    };
    let default_a = match family {
        PriorFamily::SymmetricBeta => "0.5,1,1.5,2",
        _ => "0,0.5,1,1.5,2,2.5,3",
    };
    let a = parse_list("a", cfg.a.as_deref().unwrap_or(default_a))?;
    let grid = grid_of(&cfg, &model)?;
    let tables = equalizer_tables(&model, family, &a, &grid, None)?;
    let mut report = Report::new(cfg);
    report.tables = tables;
    Ok(Outcome::ok(report))
}

// ---------------------------------------------------------------------------
// uclass
// ---------------------------------------------------------------------------

fn uclass_tables(
    model: &ModelFamily,
    priors: &[PriorSpec],
    grid: &[Vec<f64>],
    ns: &[usize],
    rule: MRule,
) -> CliResult<Vec<Table>> {
    let tc = theta_columns(model.dim());
    let argsup: Vec<String> = tc.iter().map(|c| format!("argsup_{c}")).collect();
    let mut t = Table::new(
        "uclass",
        &[vec!["prior".to_string(), "n".into(), "m".into(), "sup".into()], argsup].concat(),
    );
    let mut s = Table::new("uclass_summary", &["prior", "slope", "slope_se", "growth"]);
    for p in priors {
        let r = u_class_diagnostic(model, p, grid, ns, rule)?;
        for row in &r.rows {
            let mut cells = vec![p.name.clone().into(), row.n.into(), row.m.into(), row.sup.into()];
            cells.extend(theta_cells(&row.argsup));
            t.push(cells);
        }
        let growth = serde_json::to_value(r.growth)?.as_str().unwrap_or_default().to_string();
        s.push(vec![
            p.name.clone().into(),
            r.slope.into(),
            r.slope_se.into(),
            growth.into(),
        ]);
    }
    Ok(vec![t, s])
}

fn uclass(cfg: ExperimentConfig) -> CliResult<Outcome> {
    let model = model_of(&cfg)?;
    let prior = prior_of(&cfg, &model)?;
    let grid = grid_of(&cfg, &model)?;
    let ns = parse_ns("n", cfg.n.as_deref().unwrap_or("32:512"))?;
    let rule = parse_mrule(cfg.mrule.as_deref().unwrap_or("1"))?;
    let tables = uclass_tables(&model, &[prior], &grid, &ns, rule)?;
    let mut report = Report::new(cfg);
    report.tables = tables;
    Ok(Outcome::ok(report))
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

pub const EXAMPLES: [&str; 5] = ["5.1", "6.1", "6.2", "6.3", "6.4"];

fn default_certificate(
    model: &ModelFamily,
    prior: &PriorSpec,
    construction: Construction,
) -> CliResult<MinimaxCertificate> {
    let k = parse_list("k", DEFAULT_K)?;
    Ok(minimax_verify(
        model,
        prior,
        construction,
        HClassDensity::default_member(),
        &k,
    )?)
}

fn reproduce(cfg: ExperimentConfig) -> CliResult<Outcome> {
    let example = cfg.require("example", &cfg.example)?.to_string();
    let mut report = Report::new(cfg);
    let failure = match example.as_str() {
        "5.1" => example_5_1(&mut report)?,
        "6.1" => example_6_1(&mut report)?,
        "6.2" => example_6_2(&mut report)?,
        "6.3" => example_6_3(&mut report)?,
        "6.4" => example_6_4(&mut report)?,
        other => {
            return Err(CliError::config(
                "example",
                format!("unknown example {other:?}; expected one of {}", EXAMPLES.join(", ")),
            ))
        }
    };
    Ok(Outcome { report, failure })
}

/// Normal mean: exponentially tilted flat priors have constant loss c²,
/// finite-sample c_n L is exactly c², and Jeffreys' prior is certified.
fn example_5_1(report: &mut Report) -> CliResult<Option<String>> {
    let model = ModelFamily::normal_mean();
    let mut t = Table::new("loss", &["c", "theta", "L", "closed", "abs_err"]);
    for c in [-1.0, 0.5, 2.0] {
        let p = PriorSpec::exp_tilt(c, 0.0);
        for theta in model.inner().default_grid() {
            let l = predictive_loss(&model, &p, &theta)?;
            t.push(vec![
                c.into(),
                theta[0].into(),
                l.into(),
                (c * c).into(),
                (l - c * c).abs().into(),
            ]);
        }
    }
    report.tables.push(t);
    let mut conv = converge_table(
        &model,
        &PriorSpec::exp_tilt(1.0, 0.0),
        &[0.7],
        &exact::doubling(4, 64),
        MRule::Equal,
    )?;
    conv.name = "converge".into();
    report.tables.push(conv);
    let cert = default_certificate(&model, &jeffreys(&model)?, Construction::LineScale)?;
    Ok(certify(report, cert))
}

/// Bernoulli with symmetric Beta priors: closed-form loss, convergence of
/// c_n L toward −4 at an interior point, and the boundary U-class table.
fn example_6_1(report: &mut Report) -> CliResult<Option<String>> {
    let model = ModelFamily::bernoulli();
    let closed = |a: f64, t: f64| (a - 0.5) * (-4.0 * (a - 0.5) + (a - 1.5) / (t * (1.0 - t)));
    let mut t = Table::new("loss", &["a", "theta", "numeric", "closed", "abs_err"]);
    for a in [0.5, 1.5] {
        let p = PriorSpec::beta(a, a)?;
        for theta in model.inner().default_grid() {
            let l = predictive_loss(&model, &p, &theta)?;
            let c = closed(a, theta[0]);
            t.push(vec![
                a.into(),
                theta[0].into(),
                l.into(),
                c.into(),
                (l - c).abs().into(),
            ]);
        }
    }
    report.tables.push(t);
    let ns = exact::doubling(32, 512);
    report.tables.push(converge_table(
        &model,
        &PriorSpec::beta(1.5, 1.5)?,
        &[0.3],
        &ns,
        MRule::Equal,
    )?);
    let grid: Vec<Vec<f64>> = (0..=20).map(|i| vec![0.05 * i as f64]).collect();
    let priors = [PriorSpec::beta(0.5, 0.5)?, PriorSpec::beta(1.5, 1.5)?];
    report
        .tables
        .extend(uclass_tables(&model, &priors, &grid, &ns, MRule::One)?);
    Ok(None)
}

/// Normal location-scale: σ^{−a} equalizer scan and the certificate for σ^{−1}.
fn example_6_2(report: &mut Report) -> CliResult<Option<String>> {
    let model = ModelFamily::normal_ls();
    let a: Vec<f64> = (0..=6).map(|i| 0.5 * i as f64).collect();
    let closed = |a: f64| 0.5 * ((a - 1.0).powi(2) - 1.0);
    report.tables.extend(equalizer_tables(
        &model,
        PriorFamily::PowerSigma,
        &a,
        &model.inner().default_grid(),
        Some(&closed),
    )?);
    let cert = default_certificate(
        &model,
        &PriorSpec::power_sigma(&model, 1.0)?,
        Construction::LocationLogscale,
    )?;
    Ok(certify(report, cert))
}

/// Linear regression with an intercept and a centred covariate.
fn example_6_3(report: &mut Report) -> CliResult<Option<String>> {
    let model = ModelFamily::linreg(LinReg::default_design(10))?;
    let q = (model.dim() - 1) as f64;
    let a: Vec<f64> = (0..=6).map(|i| 0.5 * i as f64).collect();
    let closed = move |a: f64| 0.5 * ((a - 1.0).powi(2) - q * q);
    report.tables.extend(equalizer_tables(
        &model,
        PriorFamily::PowerSigma,
        &a,
        &model.inner().default_grid(),
        Some(&closed),
    )?);
    let construction = Construction::parse("regression-logscale", model.dim())?;
    let cert = default_certificate(&model, &PriorSpec::power_sigma(&model, 1.0)?, construction)?;
    Ok(certify(report, cert))
}

/// Bivariate normal: equalizer scan only; the certificate is refused.
fn example_6_4(report: &mut Report) -> CliResult<Option<String>> {
    let model = ModelFamily::mvn2();
    let q = 2.0;
    let closed = move |a: f64| 0.5 * q * ((a - 1.0).powi(2) - 1.0);
    report.tables.extend(equalizer_tables(
        &model,
        PriorFamily::MvnPower,
        &[0.0, 1.0, 2.0, 3.0],
        &model.inner().default_grid(),
        Some(&closed),
    )?);
    let cert = default_certificate(
        &model,
        &PriorSpec::mvn_power(&model, 1.0)?,
        Construction::LocationLogscale,
    )?;
    Ok(certify(report, cert))
}

// ---------------------------------------------------------------------------
// identity-checks
// ---------------------------------------------------------------------------

struct Checks {
    table: Table,
    failed: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks {
            table: Table::new("identity_checks", &["suite", "case", "value", "tolerance", "pass"]),
            failed: Vec::new(),
        }
    }

    /// Records |value| < tol.
    fn add(&mut self, suite: &str, case: String, value: f64, tol: f64) {
        let pass = value.abs() < tol;
        if !pass {
            self.failed.push(format!("{suite} {case}: {value:e}"));
        }
        self.table
            .push(vec![suite.into(), case.into(), value.into(), tol.into(), pass.into()]);
    }
}

fn identity_checks(cfg: ExperimentConfig) -> CliResult<Outcome> {
    let mut ch = Checks::new();
    let bern = ModelFamily::bernoulli();
    let nm = ModelFamily::normal_mean();
    let betas = [PriorSpec::beta(0.5, 0.5)?, PriorSpec::beta(2.0, 3.0)?];

    for p in &betas {
        for theta in [0.2, 0.5, 0.9] {
            for (n, m) in [(0, 1), (5, 3), (20, 4)] {
                let r = chain_rule_residual(&bern, p, &[theta], n, m)?;
                ch.add(
                    "chain-rule",
                    format!("bernoulli {} theta={theta} n={n} m={m}", p.name),
                    r,
                    IDENTITY_TOL,
                );
            }
        }
    }
    let np = PriorSpec::normal(0.5, 2.0)?;
    for theta in [-1.0, 0.0, 2.0] {
        let r = chain_rule_residual(&nm, &np, &[theta], 6, 3)?;
        ch.add(
            "chain-rule",
            format!("normal-mean {} theta={theta} n=6 m=3", np.name),
            r,
            IDENTITY_TOL,
        );
    }

    let tau = PriorSpec::discrete(vec![vec![0.3], vec![0.7]], vec![0.4, 0.6])?;
    let sr = scoring_rule_check(&bern, &tau, &betas, 5, 3)?;
    for row in &sr.rows {
        ch.add(
            "decomposition",
            format!("tau-vs-{} n=5 m=3", row.prior),
            row.decomposition_residual,
            IDENTITY_TOL,
        );
        ch.add(
            "regret-identity",
            format!("tau-vs-{} n=5 m=3", row.prior),
            row.identity_residual,
            IDENTITY_TOL,
        );
    }
    let proper = if sr.tau_first { 0.0 } else { 1.0 };
    ch.add("proper-scoring", "tau minimises integrated regret".into(), proper, 0.5);

    let shift = 3.7;
    for p in &betas {
        for theta in [0.2, 0.5] {
            let l0 = predictive_loss(&bern, p, &[theta])?;
            let l1 = predictive_loss(&bern, &p.shifted(shift), &[theta])?;
            ch.add(
                "shift-invariance",
                format!("asymptotic {} theta={theta}", p.name),
                l1 - l0,
                IDENTITY_TOL,
            );
            let f0 = predictive_loss_finite(&bern, p, &[theta], 8, 3)?.value;
            let f1 = predictive_loss_finite(&bern, &p.shifted(shift), &[theta], 8, 3)?.value;
            ch.add(
                "shift-invariance",
                format!("finite {} theta={theta} n=8 m=3", p.name),
                f1 - f0,
                IDENTITY_TOL,
            );
        }
    }

    // Seeded Monte Carlo against the exact counts path, at five standard errors.
    let p = &betas[1];
    let exact = posterior_predictive_regret(&bern, p, &[0.3], 5, 3)?.value;
    let est = mc_regret(&bern, p, &[0.3], 5, 3, &mc(&cfg, 1))?;
    let z = if est.std_error > 0.0 {
        (est.value - exact) / est.std_error
    } else {
        f64::INFINITY
    };
    ch.add(
        "monte-carlo",
        format!("bernoulli {} theta=0.3 n=5 m=3 (z-score)", p.name),
        z,
        5.0,
    );

    let failure = (!ch.failed.is_empty()).then(|| ch.failed.join("; "));
    let mut report = Report::new(cfg);
    report.tables.push(ch.table);
    Ok(Outcome { report, failure })
}
