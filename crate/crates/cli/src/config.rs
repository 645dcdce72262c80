use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use predregret::exact::{doubling, MRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "PREDREGRET_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Loss,
    Converge,
    Minimax,
    Equalizer,
    Uclass,
    Reproduce,
    IdentityChecks,
}

impl CommandName {
    pub fn name(self) -> &'static str {
        match self {
            CommandName::Loss => "loss",
            CommandName::Converge => "converge",
            CommandName::Minimax => "minimax",
            CommandName::Equalizer => "equalizer",
            CommandName::Uclass => "uclass",
            CommandName::Reproduce => "reproduce",
            CommandName::IdentityChecks => "identity-checks",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "predregret",
    version,
    about = "Posterior predictive regret and minimax prior checks"
)]
pub struct Cli {
    /// JSON configuration file; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for Monte Carlo paths (default: $PREDREGRET_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (default: stdout).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Asymptotic loss L(θ, π) over a grid, optionally with the finite-sample value.
    Loss(Fields),
    /// c_n L_{Y|X}(θ, π) along a schedule of sample sizes.
    Converge(Fields),
    /// Minimax certificate along a compact prior sequence.
    Minimax(Fields),
    /// Equalizer scan over a one-parameter prior family.
    Equalizer(Fields),
    /// Finite-sample U-class diagnostic.
    Uclass(Fields),
    /// Reproduce one of the worked examples.
    Reproduce(Fields),
    /// Chain-rule, decomposition and shift-invariance suites.
    IdentityChecks(Fields),
    /// Run the command named in the configuration file.
    Run,
}

/// Experiment flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Fields {
    #[arg(long)]
    pub model: Option<String>,
    /// Prior, e.g. jeffreys, beta:1.5,1.5, power-sigma:1, tau-k:line-scale,4,4,4.
    #[arg(long)]
    pub prior: Option<String>,
    /// Points separated by `;`, coordinates by `,`.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    /// Sample sizes: `32:512` doubles from 32 to 512; `10,20,40` is a list.
    #[arg(long)]
    pub n: Option<String>,
    /// Prediction size for single-point finite-sample output.
    #[arg(long)]
    pub m: Option<usize>,
    /// m_n rule: n, sqrt, 1 or a fixed positive integer.
    #[arg(long)]
    pub mrule: Option<String>,
    /// Prior family for equalizer scans: power-sigma, mvn-power, beta-sym.
    #[arg(long)]
    pub family: Option<String>,
    /// Family parameters, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<String>,
    /// Compact prior construction for certificates.
    #[arg(long)]
    pub sequence: Option<String>,
    /// τ_k indices, comma separated.
    #[arg(long)]
    pub k: Option<String>,
    /// H-class Beta shapes `a,b`.
    #[arg(long)]
    pub h: Option<String>,
    /// Example to reproduce: 5.1, 6.1, 6.2, 6.3 or 6.4.
    #[arg(long)]
    pub example: Option<String>,
    /// Monte Carlo replicates when no exact path exists.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Regression design rows separated by `;`.
    #[arg(long, allow_hyphen_values = true)]
    pub design: Option<String>,
}

/// The fully resolved experiment description embedded in every output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub command: Option<CommandName>,
    pub model: Option<String>,
    pub prior: Option<String>,
    pub theta: Option<String>,
    pub n: Option<String>,
    pub m: Option<usize>,
    pub mrule: Option<String>,
    pub family: Option<String>,
    pub a: Option<String>,
    pub sequence: Option<String>,
    pub k: Option<String>,
    pub h: Option<String>,
    pub example: Option<String>,
    pub replicates: Option<usize>,
    pub design: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config("config", e.to_string()))
    }

    /// Config file, then flags, then the seed fallback chain.
    pub fn resolve(cli: &Cli, env_seed: Option<String>) -> CliResult<Self> {
        let mut cfg = match &cli.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        let (name, fields) = match &cli.command {
            CommandArgs::Loss(f) => (Some(CommandName::Loss), Some(f)),
            CommandArgs::Converge(f) => (Some(CommandName::Converge), Some(f)),
            CommandArgs::Minimax(f) => (Some(CommandName::Minimax), Some(f)),
            CommandArgs::Equalizer(f) => (Some(CommandName::Equalizer), Some(f)),
            CommandArgs::Uclass(f) => (Some(CommandName::Uclass), Some(f)),
            CommandArgs::Reproduce(f) => (Some(CommandName::Reproduce), Some(f)),
            CommandArgs::IdentityChecks(f) => (Some(CommandName::IdentityChecks), Some(f)),
            CommandArgs::Run => (None, None),
        };
        match (name, cfg.command) {
            (Some(n), Some(c)) if n != c => {
                return Err(CliError::config(
                    "command",
                    format!(
                        "configuration names `{}` but the subcommand is `{}`",
                        c.name(),
                        n.name()
                    ),
                ))
            }
            (Some(n), _) => cfg.command = Some(n),
            (None, None) => {
                return Err(CliError::config(
                    "command",
                    "`run` needs a configuration with a command",
                ))
            }
            (None, Some(_)) => {}
        }
        if let Some(f) = fields {
            overlay!(cfg, f, model, prior, theta, n, m, mrule, family, a, sequence, k, h, example, replicates, design);
        }
        if cli.seed.is_some() {
            cfg.seed = cli.seed;
        }
        if cli.output.is_some() {
            cfg.output = cli.output.clone();
        }
        if cli.format.is_some() {
            cfg.format = cli.format;
        }
        if cfg.seed.is_none() {
            cfg.seed = Some(match env_seed {
                Some(s) => s
                    .trim()
                    .parse()
                    .map_err(|_| CliError::config(SEED_ENV, format!("not an unsigned 64-bit integer: {s:?}")))?,
                None => 0,
            });
        }
        if cfg.format.is_none() {
            let json = cfg
                .output
                .as_ref()
                .and_then(|p| p.extension())
                .is_some_and(|e| e == "json");
            cfg.format = Some(if json { Format::Json } else { Format::Csv });
        }
        Ok(cfg)
    }

    pub fn command(&self) -> CommandName {
        self.command.expect("resolved config has a command")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn require<'a>(&self, field: &'static str, v: &'a Option<String>) -> CliResult<&'a str> {
        v.as_deref()
            .ok_or_else(|| CliError::config(field, format!("required by `{}`", self.command().name())))
    }
}

pub fn parse_f64(field: &str, s: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::config(field, format!("not a number: {s:?}")))
}

pub fn parse_list(field: &str, s: &str) -> CliResult<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_f64(field, t))
        .collect::<CliResult<_>>()?;
    if v.is_empty() {
        return Err(CliError::config(field, "empty list"));
    }
    Ok(v)
}

/// `0.1;0.2` or `0,-0.5;1,0.2`, checked against the model dimension.
pub fn parse_points(field: &str, s: &str, dim: usize) -> CliResult<Vec<Vec<f64>>> {
    let pts: Vec<Vec<f64>> = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_list(field, t))
        .collect::<CliResult<_>>()?;
    if pts.is_empty() {
        return Err(CliError::config(field, "no points given"));
    }
    if let Some(p) = pts.iter().find(|p| p.len() != dim) {
        return Err(CliError::config(
            field,
            format!("point {p:?} has {} coordinates, the model has {dim}", p.len()),
        ));
    }
    Ok(pts)
}

/// `lo:hi` for a doubling range, otherwise a comma list.
pub fn parse_ns(field: &str, s: &str) -> CliResult<Vec<usize>> {
    let int = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| CliError::config(field, format!("not a non-negative integer: {t:?}")))
    };
    let ns = match s.split_once(':') {
        Some((lo, hi)) => {
            let (lo, hi) = (int(lo)?, int(hi)?);
            if lo == 0 || hi < lo {
                return Err(CliError::config(field, format!("bad range {s:?}")));
            }
            doubling(lo, hi)
        }
        None => s.split(',').map(int).collect::<CliResult<_>>()?,
    };
    if ns.is_empty() {
        return Err(CliError::config(field, "no sample sizes given"));
    }
    Ok(ns)
}

pub fn parse_mrule(s: &str) -> CliResult<MRule> {
    MRule::parse(s).map_err(|e| CliError::config("mrule", e.to_string()))
}

pub fn parse_design(s: &str) -> CliResult<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_list("design", t))
        .collect::<CliResult<_>>()?;
    let q = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || rows.iter().any(|r| r.len() != q) {
        return Err(CliError::config("design", "rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("predregret").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn unknown_config_field_rejected() {
        let r: Result<ExperimentConfig, _> = serde_json::from_str(r#"{"model": "bernoulli", "colour": 1}"#);
        assert!(r.unwrap_err().to_string().contains("colour"));
    }

    #[test]
    fn seed_precedence() {
        let c = ExperimentConfig::resolve(&cli(&["loss"]), Some("17".into())).unwrap();
        assert_eq!(c.seed, Some(17));
        let c = ExperimentConfig::resolve(&cli(&["loss", "--seed", "3"]), Some("17".into())).unwrap();
        assert_eq!(c.seed, Some(3));
        let c = ExperimentConfig::resolve(&cli(&["loss"]), None).unwrap();
        assert_eq!(c.seed, Some(0));
        assert!(ExperimentConfig::resolve(&cli(&["loss"]), Some("x".into())).is_err());
    }

    #[test]
    fn format_from_extension() {
        let c = ExperimentConfig::resolve(&cli(&["loss", "-o", "out.json"]), None).unwrap();
        assert_eq!(c.format, Some(Format::Json));
    }

    #[test]
    fn list_parsers() {
        assert_eq!(parse_ns("n", "32:256").unwrap(), vec![32, 64, 128, 256]);
        assert_eq!(parse_ns("n", "5,7").unwrap(), vec![5, 7]);
        assert!(parse_ns("n", "0:4").is_err());
        assert_eq!(parse_points("theta", "0,-0.5;1,0.2", 2).unwrap()[0], vec![0.0, -0.5]);
        assert!(parse_points("theta", "0.1,0.2", 1).is_err());
        assert_eq!(parse_design("1,0;1,1").unwrap().nrows(), 2);
    }

    #[test]
    fn run_needs_command() {
        assert!(ExperimentConfig::resolve(&cli(&["run"]), None).is_err());
    }
}
