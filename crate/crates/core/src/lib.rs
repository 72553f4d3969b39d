//! Sampling-type neural network operators built from sigmoidal kernels,
//! evaluated with respect to density-defined measures on the unit hypercube.
//!
//! The crate is organized around six pieces:
//!
//! * [`activation`] — sigmoidal activation functions and numerical checks of
//!   the standard assumptions (odd symmetry about the midpoint, concavity on
//!   the right half-line, tail decay).
//! * [`kernel`] — the induced density `phi(x) = (sigma(x+1) - sigma(x-1)) / 2`,
//!   its tensor products, lattice partition sums, discrete absolute moments,
//!   and the max/min convergence-hypothesis ratio.
//! * [`measure`] — density-defined measures on `[0,1]^d` with composite
//!   Gauss-Legendre tensor quadrature and a strict-positivity probe.
//! * [`operator`] — coefficient assembly and evaluation of the measure-based
//!   operator together with the classical lattice-sample operator.
//! * [`analysis`] — sup and weighted `L^p` error measurement, the contraction
//!   check, and log-log convergence-rate fitting.
//! * [`experiment`] / [`tables`] — the config-driven runner behind the CLI and
//!   the preset benchmark tables with their reference values.

pub mod activation;
pub mod analysis;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod functions;
pub mod kernel;
pub mod measure;
pub mod operator;
pub mod sum;
pub mod tables;

pub use activation::{check_assumptions, eval_logistic, eval_tanh, ActivationSpec, AssumptionReport};
pub use analysis::{contraction_check, lp_error, lp_norm, rate_fit, sup_error, ErrorReport, RateFit, RateMetric};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentResult, ExperimentRow};
pub use kernel::{KernelHandle, MomentEstimate, RatioEstimate, RatioMethod};
pub use measure::{integrate, positivity_probe, MeasureSpec, ProbeReport, QuadraturePlan};
pub use operator::{apply, apply_classical, coefficients, evaluate_grid, CoefficientTable, Field, OperatorConfig};
pub use tables::{run_table, table_spec, TableReport, TableSpec};
