//! Estimation of the distribution of time to culture conversion when cultures are
//! intermittently missing, with an exponential-tilt sensitivity analysis and a
//! proportional-odds treatment effect.

pub mod analysis;
pub mod bootstrap;
pub mod coarsening;
pub mod data;
pub mod distribution;
pub mod effect;
pub mod error;
pub mod glm;
pub mod imputation;
pub mod report;
pub mod sim;

pub use analysis::{estimate, parse_alpha_list, run_analysis, AnalysisOptions, AnalysisReport, Estimates};
pub use bootstrap::{BootstrapConfig, BootstrapResult, Interval};
pub use coarsening::{coarsening_set, conversion_status, CoarseningSet, ConversionStatus};
pub use data::{parse_cohort, write_cohort, Arm, Cohort, PatientRecord, TestResult, VisitRecord, DEFAULT_WEEKS};
pub use distribution::ConversionDistribution;
pub use effect::{fit_effect, EffectFit};
pub use error::{Error, Result};
pub use glm::{fit_logistic, fit_models, FitOptions, LogisticFit, LogisticProblem, ModelKind, ModelParams};
pub use imputation::{benchmark_prob, tilt, TiltParams};
pub use sim::{generate, SimConfig, SimLaw};
pub mod validation;
