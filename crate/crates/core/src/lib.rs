//! Bayesian nonparametric source attribution of zoonotic disease cases.
//!
//! Human cases of each pathogen type are modelled as Poisson counts whose
//! mean combines source effects, type effects clustered by a Dirichlet
//! process, relative type prevalences in each source, and source
//! contamination prevalences. The joint posterior is explored by MCMC.

pub mod baselines;
pub mod chain;
pub mod data;
pub mod engine;
pub mod error;
pub mod io;
pub mod model;
pub mod posterior;
pub mod random;
pub mod samplers;
pub mod stats;
pub mod synthgen;

pub use chain::Chain;
pub use data::{
    empirical_prevalence, preprocess, Concentration, Preprocessed, Priors, SourcePrevalence,
    SurveillanceData,
};
pub use engine::{append, run, FitParams, Model, ModelOptions, UserInit};
pub use error::{Error, Result};
pub use model::{ClusterState, ModelState};
