//! Marginal Gibbs sampler for the Dirichlet-process type effects, using the
//! Chinese restaurant process construction.
//!
//! The Gamma(a_theta, b_theta) base distribution is conjugate to the
//! Poisson human-case likelihood. For type `i` with total cases `y*` and
//! total unit intensity `lambda*` (the intensity it would have with `q_i =
//! 1`), the assignment weights are
//!
//! ```text
//! existing cluster h:  n_h^(-i) theta_h^y* exp(-theta_h lambda*)
//! new cluster:         a_q b^a Gamma(a + y*) / (Gamma(a) (b + lambda*)^(a + y*))
//! ```
//!
//! Both omit the factor `lambda*^y* / y*!`, which is common to every option.
//! A type that opens a new cluster draws its value from the conjugate
//! posterior `Gamma(a + y*, b + lambda*)` (shape, rate); cluster values are
//! then refreshed from `Gamma(a + sum y*, b + sum lambda*)` over members.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Priors;
use crate::error::{Error, Result};
use crate::model::ClusterState;
use crate::random::gamma_variate;

/// Per-type sufficient statistics for the cluster updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSufficientStats {
    /// `y*_i`: human cases summed over times and locations.
    pub y_star: Vec<u64>,
    /// `lambda*_i`: `sum_{t,l} sum_j alpha_jtl r_ijt k_jt`.
    pub lambda_star: Vec<f64>,
}

impl ClusterSufficientStats {
    pub fn n_types(&self) -> usize {
        self.y_star.len()
    }
}

/// Parameters of the DP prior used by the cluster updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpPrior {
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_q: f64,
}

impl From<&Priors> for DpPrior {
    fn from(p: &Priors) -> Self {
        Self {
            a_theta: p.a_theta,
            b_theta: p.b_theta,
            a_q: p.a_q,
        }
    }
}

/// Order in which types are visited by the assignment sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    #[default]
    Fixed,
    Random,
}

impl std::str::FromStr for SweepOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(SweepOrder::Fixed),
            "random" => Ok(SweepOrder::Random),
            other => Err(Error::param(
                "sweep_order",
                format!("`{other}` is not one of fixed, random"),
            )),
        }
    }
}

/// Log of the new-cluster weight (see the module docs).
pub fn log_new_cluster_weight(y_star: u64, lambda_star: f64, prior: &DpPrior) -> f64 {
    let (a, b) = (prior.a_theta, prior.b_theta);
    let y = y_star as f64;
    prior.a_q.ln() + a * b.ln() + ln_gamma(a + y) - ln_gamma(a) - (a + y) * (b + lambda_star).ln()
}

/// `a_q` times the Poisson-Gamma marginal likelihood of `y*`, without the
/// factor `lambda*^y* / y*!`.
pub fn marginal_new_cluster_weight(y_star: u64, lambda_star: f64, prior: &DpPrior) -> f64 {
    log_new_cluster_weight(y_star, lambda_star, prior).exp()
}

/// Log of the weight of joining an existing cluster of `size` other members.
#[inline]
pub fn log_existing_cluster_weight(size: usize, theta: f64, y_star: u64, lambda_star: f64) -> f64 {
    let y_term = if y_star == 0 {
        0.0
    } else {
        y_star as f64 * theta.ln()
    };
    (size as f64).ln() + y_term - theta * lambda_star
}

/// Draws an index with probability proportional to `exp(log_weights)`.
///
/// Weights are shifted by their maximum before exponentiating.
pub fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| !w.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric(format!(
            "all {} assignment weights are zero or not finite (max log weight {max})",
            log_weights.len()
        )));
    }
    let total: f64 = log_weights
        .iter()
        .map(|w| if w.is_nan() { 0.0 } else { (w - max).exp() })
        .sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (idx, w) in log_weights.iter().enumerate() {
        let p = if w.is_nan() { 0.0 } else { (w - max).exp() };
        if p > 0.0 {
            last_positive = idx;
        }
        acc += p;
        if u < acc {
            return Ok(idx);
        }
    }
    Ok(last_positive)
}

/// One sweep of the assignment step over all types.
///
/// Each type is removed from its cluster (deleting the cluster when it
/// empties), then reassigned to an existing cluster or a new one.
pub fn crp_update_assignments<R: Rng + ?Sized>(
    stats: &ClusterSufficientStats,
    prior: &DpPrior,
    clusters: &mut ClusterState,
    order: SweepOrder,
    rng: &mut R,
) -> Result<()> {
    let n = stats.n_types();
    let mut visit: Vec<usize> = (0..n).collect();
    if order == SweepOrder::Random {
        visit.shuffle(rng);
    }
    let mut log_w = Vec::with_capacity(n + 1);
    for &i in &visit {
        reassign_type(i, stats, prior, clusters, &mut log_w, rng)?;
    }
    Ok(())
}

/// Removes type `i` from its cluster and samples a new assignment for it.
/// `log_w` is scratch space for the weights.
pub fn reassign_type<R: Rng + ?Sized>(
    i: usize,
    stats: &ClusterSufficientStats,
    prior: &DpPrior,
    clusters: &mut ClusterState,
    log_w: &mut Vec<f64>,
    rng: &mut R,
) -> Result<()> {
    let (y, lam) = (stats.y_star[i], stats.lambda_star[i]);
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(Error::Numeric(format!(
            "type {i} has total unit intensity {lam}; it must be positive"
        )));
    }
    clusters.detach(i);
    log_w.clear();
    for (&size, &theta) in clusters.sizes().iter().zip(clusters.values()) {
        log_w.push(log_existing_cluster_weight(size, theta, y, lam));
    }
    log_w.push(log_new_cluster_weight(y, lam, prior));
    let choice = sample_log_weights(log_w, rng).map_err(|e| match e {
        Error::Numeric(msg) => {
            Error::Numeric(format!("type {i} (y* = {y}, lambda* = {lam}): {msg}"))
        }
        other => other,
    })?;
    if choice == clusters.n_clusters() {
        let theta = gamma_variate(prior.a_theta + y as f64, prior.b_theta + lam, rng);
        clusters.open(i, theta);
    } else {
        clusters.assign(i, choice);
    }
    Ok(())
}

/// Redraws every cluster value from its conjugate conditional.
pub fn update_cluster_values<R: Rng + ?Sized>(
    stats: &ClusterSufficientStats,
    prior: &DpPrior,
    clusters: &mut ClusterState,
    rng: &mut R,
) {
    let k = clusters.n_clusters();
    let mut y_sum = vec![0u64; k];
    let mut lam_sum = vec![0.0f64; k];
    for (i, &c) in clusters.assignments().iter().enumerate() {
        y_sum[c] += stats.y_star[i];
        lam_sum[c] += stats.lambda_star[i];
    }
    for h in 0..k {
        let theta = gamma_variate(
            prior.a_theta + y_sum[h] as f64,
            prior.b_theta + lam_sum[h],
            rng,
        );
        clusters.set_value(h, theta);
    }
}
