//! Posterior predictive regret, its asymptotic loss functional, and
//! minimax/equalizer verification for regular parametric models.

pub mod asymptotics;
pub mod error;
pub mod exact;
pub mod minimax;
pub mod models;
pub mod numerics;
pub mod priors;

pub use asymptotics::{
    a_functional, asymptotic_regret, expected_loss, loss_surface, predictive_information, predictive_loss, LossSurface,
};
pub use error::{Error, Result};
pub use exact::{
    c_n, convergence_table, posterior_predictive, posterior_predictive_regret, predictive_loss_finite,
    prior_predictive_regret, ConvergenceTable, MRule, McOptions, Method, PredictiveKernel, RegretEstimate, RegretPoint,
};
pub use minimax::{
    equalizer_scan, minimax_verify, u_class_diagnostic, CertificateStatus, EqualizerReport, MinimaxCertificate,
    PriorFamily,
};
pub use models::{CoordMap, ModelFamily};
pub use numerics::{QuadratureRule, SeededStream};
pub use priors::{jeffreys, tau_k, CompactPriorSequence, Construction, HClassDensity, PriorSpec};
