//! MCMC kernels: the adaptive simplex random walk and the DP cluster sampler.

pub mod crp;
pub mod dirichlet;

pub use crp::{
    crp_update_assignments, marginal_new_cluster_weight, update_cluster_values,
    ClusterSufficientStats, DpPrior, SweepOrder,
};
pub use dirichlet::{update_dirichlet_vector, AdaptiveTuner, FlatTarget, Proposal, SimplexTarget};
