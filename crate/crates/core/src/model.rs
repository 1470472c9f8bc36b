//! Model state, intensity algebra and log-densities of the joint model.
//!
//! Layouts used throughout:
//!
//! ```text
//! alpha        [time, location, source]
//! r            [source, time, type]
//! lambda_ij    [type, source, time, location]
//! lambda_i     [type, time, location]
//! lambda_j     [source, time, location]
//! ```
//!
//! Log-densities return `f64::NEG_INFINITY` for states with zero
//! probability (for instance a zero intensity where cases were observed) so
//! that Metropolis-Hastings proposals into such states are simply rejected.

use statrs::function::gamma::ln_gamma;

use crate::data::{Concentration, SourcePrevalence, SurveillanceData};
use crate::error::{Error, Result};

/// Tolerance on the L1 norm of simplex-valued parameters.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Dirichlet-process cluster structure of the type effects.
///
/// Clusters are stored compactly: labels are `0..n_clusters()` and every
/// cluster has at least one member.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    assignments: Vec<usize>,
    values: Vec<f64>,
    sizes: Vec<usize>,
}

impl ClusterState {
    /// Builds a cluster state from explicit labels and cluster values.
    pub fn new(assignments: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let mut sizes = vec![0usize; values.len()];
        for (i, &c) in assignments.iter().enumerate() {
            if c >= values.len() {
                return Err(Error::param(
                    "assignments",
                    format!("type {i} names cluster {c}, only {} exist", values.len()),
                ));
            }
            sizes[c] += 1;
        }
        if let Some(h) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::param("assignments", format!("cluster {h} is empty")));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::param(
                "theta",
                format!("cluster value {v} is not positive"),
            ));
        }
        Ok(Self {
            assignments,
            values,
            sizes,
        })
    }

    /// All types in a single cluster with value `theta`.
    pub fn single(n_types: usize, theta: f64) -> Self {
        Self {
            assignments: vec![0; n_types],
            values: vec![theta],
            sizes: vec![n_types],
        }
    }

    pub fn n_types(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.values.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Type effect `q_i`, the value of the cluster holding type `i`.
    #[inline]
    pub fn q(&self, i: usize) -> f64 {
        self.values[self.assignments[i]]
    }

    pub fn q_vec(&self) -> Vec<f64> {
        (0..self.n_types()).map(|i| self.q(i)).collect()
    }

    pub fn set_value(&mut self, h: usize, theta: f64) {
        self.values[h] = theta;
    }

    /// Detaches type `i` from its cluster, deleting the cluster if it
    /// empties. The type is left unassigned until [`Self::assign`] or
    /// [`Self::open`] is called.
    pub(crate) fn detach(&mut self, i: usize) {
        let h = self.assignments[i];
        self.sizes[h] -= 1;
        if self.sizes[h] == 0 {
            let last = self.values.len() - 1;
            self.values.swap_remove(h);
            self.sizes.swap_remove(h);
            if h != last {
                for c in self.assignments.iter_mut() {
                    if *c == last {
                        *c = h;
                    }
                }
            }
        }
        self.assignments[i] = usize::MAX;
    }

    pub(crate) fn assign(&mut self, i: usize, h: usize) {
        self.assignments[i] = h;
        self.sizes[h] += 1;
    }

    /// Puts type `i` in a new singleton cluster and returns its label.
    pub(crate) fn open(&mut self, i: usize, theta: f64) -> usize {
        self.values.push(theta);
        self.sizes.push(1);
        let h = self.values.len() - 1;
        self.assignments[i] = h;
        h
    }

    /// Labels renumbered in order of first appearance, so that two states
    /// describing the same partition compare equal.
    pub fn canonical_labels(&self) -> Vec<usize> {
        let mut map = vec![usize::MAX; self.n_clusters()];
        let mut next = 0;
        self.assignments
            .iter()
            .map(|&c| {
                if map[c] == usize::MAX {
                    map[c] = next;
                    next += 1;
                }
                map[c]
            })
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        Self::new(self.assignments.clone(), self.values.clone()).map(|_| ())
    }
}

/// One MCMC state of the joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub n_types: usize,
    pub n_sources: usize,
    pub n_times: usize,
    pub n_locations: usize,
    /// Source effects, `[time, location, source]`; one simplex per (t, l).
    pub alpha: Vec<f64>,
    /// Relative prevalences, `[source, time, type]`; one simplex per (j, t).
    pub r: Vec<f64>,
    pub clusters: ClusterState,
}

impl ModelState {
    #[inline]
    pub fn alpha_index(&self, j: usize, t: usize, l: usize) -> usize {
        (t * self.n_locations + l) * self.n_sources + j
    }

    #[inline]
    pub fn r_index(&self, i: usize, j: usize, t: usize) -> usize {
        (j * self.n_times + t) * self.n_types + i
    }

    pub fn alpha_block(&self, t: usize, l: usize) -> &[f64] {
        let s = self.alpha_index(0, t, l);
        &self.alpha[s..s + self.n_sources]
    }

    pub fn r_block(&self, j: usize, t: usize) -> &[f64] {
        let s = self.r_index(0, j, t);
        &self.r[s..s + self.n_types]
    }

    pub fn q(&self, i: usize) -> f64 {
        self.clusters.q(i)
    }

    /// Verifies simplex constraints and the cluster invariants.
    pub fn check(&self) -> Result<()> {
        let (n, m, nt, nl) = (self.n_types, self.n_sources, self.n_times, self.n_locations);
        if self.alpha.len() != nt * nl * m {
            return Err(Error::param(
                "alpha",
                format!("has {} entries, expected {}", self.alpha.len(), nt * nl * m),
            ));
        }
        if self.r.len() != m * nt * n {
            return Err(Error::param(
                "r",
                format!("has {} entries, expected {}", self.r.len(), m * nt * n),
            ));
        }
        for t in 0..nt {
            for l in 0..nl {
                check_simplex(self.alpha_block(t, l))
                    .map_err(|e| Error::param(format!("alpha[time {t}, location {l}]"), e))?;
            }
        }
        for j in 0..m {
            for t in 0..nt {
                check_simplex(self.r_block(j, t))
                    .map_err(|e| Error::param(format!("r[source {j}, time {t}]"), e))?;
            }
        }
        if self.clusters.n_types() != n {
            return Err(Error::param(
                "assignments",
                format!("has {} entries, expected {n}", self.clusters.n_types()),
            ));
        }
        self.clusters.check()
    }
}

/// Returns a description of the violation when `w` is not on the simplex.
pub fn check_simplex(w: &[f64]) -> std::result::Result<(), String> {
    if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(format!("component {v} is negative or not finite"));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("components sum to {sum}, not 1"));
    }
    Ok(())
}

/// Per-cell intensities `lambda_ijtl = alpha_jtl q_i r_ijt k_jt`, laid out
/// `[type, source, time, location]`.
pub fn lambda_ij(state: &ModelState, k: &SourcePrevalence) -> Vec<f64> {
    let (n, m, nt, nl) = (
        state.n_types,
        state.n_sources,
        state.n_times,
        state.n_locations,
    );
    let mut out = vec![0.0; n * m * nt * nl];
    for i in 0..n {
        let q = state.q(i);
        for j in 0..m {
            for t in 0..nt {
                let p = state.r[state.r_index(i, j, t)] * k.at(j, t);
                for l in 0..nl {
                    out[((i * m + j) * nt + t) * nl + l] =
                        state.alpha[state.alpha_index(j, t, l)] * q * p;
                }
            }
        }
    }
    out
}

/// Expected human cases per type, `[type, time, location]`: the Poisson
/// mean of the human case model.
pub fn lambda_i(state: &ModelState, k: &SourcePrevalence) -> Vec<f64> {
    let (n, m, nt, nl) = (
        state.n_types,
        state.n_sources,
        state.n_times,
        state.n_locations,
    );
    let mut out = vec![0.0; n * nt * nl];
    for i in 0..n {
        let q = state.q(i);
        for t in 0..nt {
            for l in 0..nl {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += state.alpha[state.alpha_index(j, t, l)]
                        * state.r[state.r_index(i, j, t)]
                        * k.at(j, t);
                }
                out[(i * nt + t) * nl + l] = q * acc;
            }
        }
    }
    out
}

/// Expected human cases per source, `[source, time, location]`.
pub fn lambda_j(state: &ModelState, k: &SourcePrevalence) -> Vec<f64> {
    let (n, m, nt, nl) = (
        state.n_types,
        state.n_sources,
        state.n_times,
        state.n_locations,
    );
    let mut out = vec![0.0; m * nt * nl];
    for j in 0..m {
        for t in 0..nt {
            let mut acc = 0.0;
            for i in 0..n {
                acc += state.q(i) * state.r[state.r_index(i, j, t)];
            }
            let base = acc * k.at(j, t);
            for l in 0..nl {
                out[(j * nt + t) * nl + l] = state.alpha[state.alpha_index(j, t, l)] * base;
            }
        }
    }
    out
}

/// Normalises `[source, time, location]` intensities to proportions within
/// each (time, location).
pub fn proportions_by_source(
    lambda_j: &[f64],
    n_sources: usize,
    n_times: usize,
    n_locations: usize,
) -> Result<Vec<f64>> {
    let cells = n_times * n_locations;
    let mut out = vec![0.0; lambda_j.len()];
    for c in 0..cells {
        let total: f64 = (0..n_sources).map(|j| lambda_j[j * cells + c]).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numeric(format!(
                "source intensities for time {} location {} sum to {total}",
                c / n_locations,
                c % n_locations
            )));
        }
        for j in 0..n_sources {
            out[j * cells + c] = lambda_j[j * cells + c] / total;
        }
    }
    Ok(out)
}

/// Proportion of expected cases attributed to each source, per (t, l).
pub fn lambda_j_prop(state: &ModelState, k: &SourcePrevalence) -> Result<Vec<f64>> {
    proportions_by_source(
        &lambda_j(state, k),
        state.n_sources,
        state.n_times,
        state.n_locations,
    )
}

/// Poisson log-probability of `y` given mean `lambda`, including `log y!`.
#[inline]
pub fn poisson_log_pmf(y: u64, lambda: f64) -> f64 {
    if y == 0 {
        return -lambda;
    }
    if lambda <= 0.0 {
        return f64::NEG_INFINITY;
    }
    y as f64 * lambda.ln() - lambda - ln_factorial(y)
}

#[inline]
pub fn ln_factorial(y: u64) -> f64 {
    ln_gamma(y as f64 + 1.0)
}

/// Human case log-likelihood for precomputed intensities `[type, time, location]`.
pub fn log_lik_human_from(lambda_i: &[f64], data: &SurveillanceData) -> f64 {
    data.y
        .iter()
        .zip(lambda_i)
        .map(|(&y, &lam)| poisson_log_pmf(y, lam))
        .sum()
}

/// Log-likelihood of the human case counts under the Poisson model.
pub fn log_lik_human(state: &ModelState, k: &SourcePrevalence, data: &SurveillanceData) -> f64 {
    log_lik_human_from(&lambda_i(state, k), data)
}

/// Unnormalised multinomial log-likelihood of the typed source isolates.
///
/// The multinomial coefficient does not involve `r` and is dropped, so the
/// value is `sum x_ijt log r_ijt` with `0 log 0 = 0`.
pub fn log_lik_source(state: &ModelState, data: &SurveillanceData) -> f64 {
    let mut acc = 0.0;
    for j in 0..state.n_sources {
        for t in 0..state.n_times {
            acc += multinomial_kernel(
                (0..state.n_types).map(|i| data.x_at(i, j, t)),
                state.r_block(j, t),
            );
        }
    }
    acc
}

/// `sum_i x_i log p_i` with `0 log 0 = 0`, or -inf when some `p_i = 0` has
/// `x_i > 0`.
pub fn multinomial_kernel(x: impl IntoIterator<Item = u64>, p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (xi, &pi) in x.into_iter().zip(p) {
        if xi > 0 {
            if pi <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += xi as f64 * pi.ln();
        }
    }
    acc
}

/// Unnormalised Dirichlet log-density `sum (a_i - 1) log w_i`.
///
/// A zero component is outside the support unless its concentration is
/// exactly one, and yields -inf.
pub fn log_dirichlet_kernel(w: &[f64], a: &Concentration) -> f64 {
    let mut acc = 0.0;
    for (idx, &wi) in w.iter().enumerate() {
        let ai = a.get(idx);
        if ai == 1.0 {
            continue;
        }
        if wi <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += (ai - 1.0) * wi.ln();
    }
    acc
}

/// Log normalising constant `ln Gamma(sum a) - sum ln Gamma(a_i)`.
pub fn log_dirichlet_norm(dim: usize, a: &Concentration) -> f64 {
    let total: f64 = (0..dim).map(|i| a.get(i)).sum();
    ln_gamma(total) - (0..dim).map(|i| ln_gamma(a.get(i))).sum::<f64>()
}

/// Dirichlet log-prior of a simplex vector, with or without its
/// normalising constant.
pub fn log_prior_dirichlet(w: &[f64], a: &Concentration, normalised: bool) -> f64 {
    let kernel = log_dirichlet_kernel(w, a);
    if normalised {
        kernel + log_dirichlet_norm(w.len(), a)
    } else {
        kernel
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prevalence(m: usize, nt: usize, k: Vec<f64>) -> SourcePrevalence {
        SourcePrevalence::from_values(m, nt, k).unwrap()
    }

    fn random_simplex(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.01).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    fn random_state(rng: &mut impl Rng, n: usize, m: usize, nt: usize, nl: usize) -> ModelState {
        let mut alpha = Vec::new();
        for _ in 0..nt * nl {
            alpha.extend(random_simplex(rng, m));
        }
        let mut r = Vec::new();
        for _ in 0..m * nt {
            r.extend(random_simplex(rng, n));
        }
        let k = (n / 2).max(1);
        let assignments: Vec<usize> = (0..n).map(|i| i % k).collect();
        let values: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 50.0 + 0.1).collect();
        ModelState {
            n_types: n,
            n_sources: m,
            n_times: nt,
            n_locations: nl,
            alpha,
            r,
            clusters: ClusterState::new(assignments, values).unwrap(),
        }
    }

    fn random_data(
        rng: &mut impl Rng,
        n: usize,
        m: usize,
        nt: usize,
        nl: usize,
    ) -> SurveillanceData {
        let lbl = |p: &str, c: usize| (0..c).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        SurveillanceData::new(
            lbl("T", n),
            lbl("S", m),
            lbl("t", nt),
            lbl("L", nl),
            (0..n * nt * nl).map(|_| rng.random_range(0..6)).collect(),
            (0..n * m * nt).map(|_| rng.random_range(0..4)).collect(),
        )
        .unwrap()
    }

    fn single_cluster_state(q: Vec<f64>, alpha: Vec<f64>, r: Vec<f64>, m: usize) -> ModelState {
        let n = q.len();
        ModelState {
            n_types: n,
            n_sources: m,
            n_times: 1,
            n_locations: 1,
            alpha,
            r,
            clusters: ClusterState::new((0..n).collect(), q).unwrap(),
        }
    }

    #[test]
    fn lambda_single_source_arithmetic() {
        let state = single_cluster_state(vec![2.0, 2.0], vec![1.0], vec![0.5, 0.5], 1);
        let k = prevalence(1, 1, vec![0.5]);
        assert_eq!(lambda_i(&state, &k), vec![0.5, 0.5]);
    }

    #[test]
    fn lambda_uniform_case() {
        let (n, m) = (4, 3);
        let state = single_cluster_state(
            vec![1.0; n],
            vec![1.0 / m as f64; m],
            vec![1.0 / n as f64; n * m],
            m,
        );
        let k = prevalence(m, 1, vec![1.0; m]);
        for v in lambda_i(&state, &k) {
            assert!((v - 1.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_matches_brute_force_at_campy_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, m, nt, nl) = (90, 6, 1, 1);
        let state = random_state(&mut rng, n, m, nt, nl);
        let k = prevalence(m, nt, (0..m * nt).map(|_| rng.random()).collect());
        let fast = lambda_i(&state, &k);
        // independent recomputation straight from the product definition
        for i in 0..n {
            let mut expected = 0.0;
            for j in 0..m {
                let alpha = state.alpha[j];
                let r = state.r[j * n + i];
                expected +=
                    alpha * state.clusters.values()[state.clusters.assignments()[i]] * r * k.k[j];
            }
            let rel = (fast[i] - expected).abs() / expected;
            assert!(rel < 1e-12, "type {i}: {} vs {expected}", fast[i]);
        }
    }

    #[test]
    fn log_lik_human_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = random_state(&mut rng, 3, 2, 1, 1);
        let k = prevalence(2, 1, vec![0.3, 0.9]);
        let mut data = random_data(&mut rng, 3, 2, 1, 1);
        data.y = vec![0; 3];
        let total: f64 = lambda_i(&state, &k).iter().sum();
        assert!((log_lik_human(&state, &k, &data) + total).abs() < 1e-14);

        assert!((poisson_log_pmf(2, 1.0) - (-1.0 - 2f64.ln())).abs() < 1e-14);
        assert!((poisson_log_pmf(2, 1.0) + 1.6931).abs() < 1e-4);
        assert_eq!(poisson_log_pmf(1, 0.0), f64::NEG_INFINITY);
        assert_eq!(poisson_log_pmf(0, 0.0), 0.0);
    }

    #[test]
    fn log_lik_source_cases() {
        let state = single_cluster_state(vec![1.0; 3], vec![1.0], vec![0.5, 0.3, 0.2], 1);
        let lbl = |p: &str, c: usize| (0..c).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let data = SurveillanceData::new(
            lbl("T", 3),
            lbl("S", 1),
            lbl("t", 1),
            lbl("L", 1),
            vec![0; 3],
            vec![2, 1, 0],
        )
        .unwrap();
        let expected = 2.0 * 0.5f64.ln() + 0.3f64.ln();
        assert!((log_lik_source(&state, &data) - expected).abs() < 1e-14);
        assert!((expected + 2.5903).abs() < 1e-4);

        let concentrated = single_cluster_state(vec![1.0; 3], vec![1.0], vec![1.0, 0.0, 0.0], 1);
        let mut d2 = data.clone();
        d2.x = vec![5, 0, 0];
        assert_eq!(log_lik_source(&concentrated, &d2), 0.0);
        assert_eq!(log_lik_source(&concentrated, &data), f64::NEG_INFINITY);
    }

    #[test]
    fn dirichlet_prior_cases() {
        let flat = Concentration::Symmetric(1.0);
        assert_eq!(log_prior_dirichlet(&[0.2, 0.3, 0.5], &flat, false), 0.0);
        assert_eq!(
            log_prior_dirichlet(&[0.2, 0.3, 0.5], &flat, true),
            log_prior_dirichlet(&[0.6, 0.3, 0.1], &flat, true)
        );
        // Beta(2,2) density at 0.5 is 6 * 0.25
        let a = Concentration::Vector(vec![2.0, 2.0]);
        let v = log_prior_dirichlet(&[0.5, 0.5], &a, true);
        assert!((v - 1.5f64.ln()).abs() < 1e-12);
        assert!((v - 0.4055).abs() < 1e-4);

        let sparse = Concentration::Symmetric(0.1);
        assert_eq!(
            log_prior_dirichlet(&[0.0, 1.0], &sparse, false),
            f64::NEG_INFINITY
        );
        let w = [0.1, 0.2, 0.7];
        let p = [0.7, 0.1, 0.2];
        let sym = Concentration::Symmetric(3.0);
        assert!(
            (log_prior_dirichlet(&w, &sym, true) - log_prior_dirichlet(&p, &sym, true)).abs()
                < 1e-14
        );
    }

    #[test]
    fn lambda_j_prop_cases() {
        let state = single_cluster_state(vec![3.0, 1.0], vec![1.0], vec![0.4, 0.6], 1);
        let k = prevalence(1, 1, vec![0.5]);
        assert_eq!(lambda_j_prop(&state, &k).unwrap(), vec![1.0]);

        let state = single_cluster_state(vec![1.0], vec![0.5, 0.5], vec![1.0, 1.0], 2);
        let k = prevalence(2, 1, vec![0.5, 0.5]);
        assert_eq!(lambda_j_prop(&state, &k).unwrap(), vec![0.5, 0.5]);

        let k = prevalence(2, 1, vec![0.0, 0.0]);
        assert!(lambda_j_prop(&state, &k).is_err());
    }

    #[test]
    fn cluster_detach_compacts_labels() {
        let mut c = ClusterState::new(vec![0, 1, 2, 2], vec![1.0, 2.0, 3.0]).unwrap();
        c.detach(0);
        assert_eq!(c.n_clusters(), 2);
        // cluster 2 moved into slot 0
        assert_eq!(c.values(), &[3.0, 2.0]);
        assert_eq!(&c.assignments()[1..], &[1, 0, 0]);
        c.assign(0, 1);
        c.check().unwrap();
        assert_eq!(c.q_vec(), vec![2.0, 2.0, 3.0, 3.0]);
        assert_eq!(c.canonical_labels(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn state_check_rejects_off_simplex() {
        let mut state = single_cluster_state(vec![1.0; 2], vec![1.0], vec![0.5, 0.4], 1);
        let err = state.check().unwrap_err().to_string();
        assert!(err.contains("r[source 0, time 0]"), "{err}");
        state.r = vec![0.5, 0.5];
        state.check().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn lambda_marginals_conserve_intensity(
            seed in any::<u64>(), n in 1usize..6, m in 1usize..5, nt in 1usize..3, nl in 1usize..3
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = random_state(&mut rng, n, m, nt, nl);
            let k = prevalence(m, nt, (0..m * nt).map(|_| rng.random()).collect());
            let full = lambda_ij(&state, &k);
            let li = lambda_i(&state, &k);
            let lj = lambda_j(&state, &k);
            let total: f64 = full.iter().sum();
            let ti: f64 = li.iter().sum();
            let tj: f64 = lj.iter().sum();
            prop_assert!((ti - total).abs() <= 1e-12 * total.max(1.0));
            prop_assert!((tj - total).abs() <= 1e-12 * total.max(1.0));
            for i in 0..n {
                for t in 0..nt {
                    for l in 0..nl {
                        let s: f64 = (0..m).map(|j| full[((i * m + j) * nt + t) * nl + l]).sum();
                        let v = li[(i * nt + t) * nl + l];
                        prop_assert!((s - v).abs() <= 1e-12 * v.max(1e-300));
                    }
                }
            }
        }

        #[test]
        fn scaling_q_against_alpha_leaves_lambda_unchanged(seed in any::<u64>(), pow in -4i32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = random_state(&mut rng, 4, 3, 2, 2);
            let k = prevalence(3, 2, (0..6).map(|_| rng.random()).collect());
            // powers of two keep the rescaling exact in floating point
            let c = 2f64.powi(pow);
            let mut scaled = state.clone();
            let values: Vec<f64> = state.clusters.values().iter().map(|v| v * c).collect();
            scaled.clusters = ClusterState::new(state.clusters.assignments().to_vec(), values).unwrap();
            scaled.alpha.iter_mut().for_each(|a| *a /= c);
            prop_assert_eq!(lambda_ij(&state, &k), lambda_ij(&scaled, &k));
        }

        #[test]
        fn log_liks_match_per_cell_oracle(
            seed in any::<u64>(), n in 1usize..6, m in 1usize..6, nt in 1usize..3, nl in 1usize..3
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = random_state(&mut rng, n, m, nt, nl);
            let data = random_data(&mut rng, n, m, nt, nl);
            let k = prevalence(m, nt, (0..m * nt).map(|_| rng.random::<f64>() * 0.9 + 0.05).collect());

            let mut oracle = 0.0;
            for i in 0..n {
                for t in 0..nt {
                    for l in 0..nl {
                        let mut lam = 0.0;
                        for j in 0..m {
                            lam += state.alpha[(t * nl + l) * m + j] * state.q(i)
                                * state.r[(j * nt + t) * n + i] * k.k[j * nt + t];
                        }
                        let y = data.y[(i * nt + t) * nl + l] as f64;
                        let mut lf = 0.0;
                        for v in 2..=(y as u64) { lf += (v as f64).ln(); }
                        oracle += y * lam.ln() - lam - lf;
                    }
                }
            }
            let got = log_lik_human(&state, &k, &data);
            prop_assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));

            let mut src = 0.0;
            for j in 0..m {
                for t in 0..nt {
                    for i in 0..n {
                        let x = data.x[(i * m + j) * nt + t] as f64;
                        if x > 0.0 { src += x * state.r[(j * nt + t) * n + i].ln(); }
                    }
                }
            }
            let got = log_lik_source(&state, &data);
            prop_assert!((got - src).abs() <= 1e-12 * src.abs().max(1.0));
        }

        #[test]
        fn source_loglik_invariant_under_joint_type_permutation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = random_state(&mut rng, 5, 1, 1, 1);
            let data = random_data(&mut rng, 5, 1, 1, 1);
            let perm = [3usize, 0, 4, 1, 2];
            let mut ps = state.clone();
            let mut pd = data.clone();
            for (new, &old) in perm.iter().enumerate() {
                ps.r[new] = state.r[old];
                pd.x[new] = data.x[old];
            }
            let a = log_lik_source(&state, &data);
            let b = log_lik_source(&ps, &pd);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn densities_fall_as_supported_component_shrinks(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = random_state(&mut rng, 4, 1, 1, 1);
            let mut data = random_data(&mut rng, 4, 1, 1, 1);
            // all isolates on type 0
            data.x = vec![3, 0, 0, 0];
            let mut prev = f64::INFINITY;
            for shrink in [1.0, 0.5, 0.1, 0.01, 1e-4] {
                let mut w = state.r.clone();
                w[0] *= shrink;
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                state.r = w;
                let v = log_lik_source(&state, &data);
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }

            // one type whose cases can only come from source 0
            let mut state = random_state(&mut rng, 1, 2, 1, 1);
            state.clusters = ClusterState::single(1, 1.0);
            let k = prevalence(2, 1, vec![0.5, 0.0]);
            data = random_data(&mut rng, 1, 2, 1, 1);
            data.y = vec![4];
            let mut prev = f64::INFINITY;
            for a0 in [0.9, 0.5, 0.1, 0.01, 1e-4] {
                state.alpha = vec![a0, 1.0 - a0];
                let v = log_lik_human(&state, &k, &data);
                prop_assert!(v < prev);
                prev = v;
            }
        }
    }
}
