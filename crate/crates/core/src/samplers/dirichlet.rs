//! Constrained adaptive multisite logarithmic random walk for
//! Dirichlet-distributed vectors.
//!
//! One proposal modifies a single component `c` of the simplex vector `W`:
//!
//! * with probability 0.95, `V_c = W_c exp(e)` with `e ~ N(0, sigma_c)`;
//! * otherwise `V_c = W_c + e` with `e ~ N(0, 0.1)`; a nonpositive value is
//!   rejected outright.
//!
//! The other components are copied and the result renormalised,
//! `W' = V / |V|`. Both moves travel along the segment joining `W` to the
//! vertex `e_c`, so the Hastings factor has to include the Jacobian of the
//! renormalisation. With `Z = |V|` and `d` the dimension it is
//!
//! ```text
//! multiplicative:  exp(e) / Z^d
//! additive:        phi(e') / phi(e) / Z^(d + 1),   e' = -e / Z
//! ```
//!
//! where `e'` is the additive step that maps `W'` back to `W`. The prior and
//! likelihood ratio are evaluated at the renormalised vectors.
//!
//! Every 50 proposals of a component its scale is nudged by
//! `exp(+-min(0.05, 1/sqrt(z)))`, upwards when the window acceptance rate
//! exceeds 0.44, where `z` is the MCMC iteration number.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Concentration;
use crate::random::standard_normal;

/// Proposals per component between two scale adaptations.
pub const ADAPT_WINDOW: u32 = 50;
/// Acceptance rate the adaptation steers towards.
pub const TARGET_ACCEPTANCE: f64 = 0.44;
/// Largest log-scale change of a single adaptation step.
pub const MAX_ADAPT_STEP: f64 = 0.05;
/// Probability of the multiplicative (log-normal) move.
pub const MULTIPLICATIVE_PROB: f64 = 0.95;
/// Standard deviation of the additive fallback move.
pub const ADDITIVE_SD: f64 = 0.1;
/// Starting value of every tuning scale.
pub const INITIAL_SCALE: f64 = 1.0;

/// Per-component tuning scales and acceptance bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveTuner {
    sigma: Vec<f64>,
    window_accepted: Vec<u32>,
    window_proposed: Vec<u32>,
    accepted: Vec<u64>,
    proposed: Vec<u64>,
}

impl AdaptiveTuner {
    pub fn new(dim: usize) -> Self {
        Self::with_scale(dim, INITIAL_SCALE)
    }

    pub fn with_scale(dim: usize, sigma: f64) -> Self {
        assert!(sigma > 0.0, "tuning scale must be positive");
        Self {
            sigma: vec![sigma; dim],
            window_accepted: vec![0; dim],
            window_proposed: vec![0; dim],
            accepted: vec![0; dim],
            proposed: vec![0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Accepted and proposed counts per component since construction.
    pub fn totals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.accepted
            .iter()
            .copied()
            .zip(self.proposed.iter().copied())
    }

    /// Acceptance fraction of the current (incomplete) window.
    pub fn window_rate(&self, c: usize) -> Option<f64> {
        (self.window_proposed[c] > 0)
            .then(|| f64::from(self.window_accepted[c]) / f64::from(self.window_proposed[c]))
    }

    /// Records the outcome of one proposal of component `c` at iteration
    /// `z`, adapting the scale when the window is complete.
    pub fn record(&mut self, c: usize, accepted: bool, z: u64) {
        self.proposed[c] += 1;
        self.window_proposed[c] += 1;
        if accepted {
            self.accepted[c] += 1;
            self.window_accepted[c] += 1;
        }
        if self.window_proposed[c] == ADAPT_WINDOW {
            let rate = f64::from(self.window_accepted[c]) / f64::from(ADAPT_WINDOW);
            self.sigma[c] = adapted_scale(self.sigma[c], rate, z);
            self.window_accepted[c] = 0;
            self.window_proposed[c] = 0;
        }
    }
}

/// One adaptation step of a tuning scale.
pub fn adapted_scale(sigma: f64, acceptance_rate: f64, z: u64) -> f64 {
    let step = MAX_ADAPT_STEP.min(1.0 / (z.max(1) as f64).sqrt());
    if acceptance_rate > TARGET_ACCEPTANCE {
        (sigma.ln() + step).exp()
    } else {
        (sigma.ln() - step).exp()
    }
}

/// A single-component proposal, described relative to the current vector.
#[derive(Debug, Clone, Copy)]
pub struct Proposal {
    /// The modified component.
    pub component: usize,
    /// Its value before renormalisation.
    pub raw_value: f64,
    /// L1 norm of the modified vector, `1 - W_c + raw_value`.
    pub norm: f64,
}

impl Proposal {
    /// Component `i` of the renormalised proposal, given the current vector.
    #[inline]
    pub fn value(&self, current: &[f64], i: usize) -> f64 {
        if i == self.component {
            self.raw_value / self.norm
        } else {
            current[i] / self.norm
        }
    }

    pub fn materialise(&self, current: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..current.len()).map(|i| self.value(current, i)));
    }
}

/// Likelihood part of the target density of a simplex-valued parameter.
///
/// Implementations typically cache whatever makes the ratio cheap; the
/// sampler calls [`SimplexTarget::accept`] whenever it moves to a proposal.
pub trait SimplexTarget {
    /// `log L(W') - log L(W)` for the proposal `W'` built from `current`.
    /// Returns -inf for invalid proposals.
    fn log_likelihood_ratio(&mut self, current: &[f64], proposal: &Proposal) -> f64;

    fn accept(&mut self, _current: &[f64], _proposal: &Proposal) {}
}

/// Adapts a plain log-likelihood function into a [`SimplexTarget`].
pub struct FnTarget<F> {
    f: F,
    current: Option<f64>,
    scratch: Vec<f64>,
    pending: f64,
}

impl<F: FnMut(&[f64]) -> f64> FnTarget<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            current: None,
            scratch: Vec::new(),
            pending: f64::NAN,
        }
    }
}

impl<F: FnMut(&[f64]) -> f64> SimplexTarget for FnTarget<F> {
    fn log_likelihood_ratio(&mut self, current: &[f64], proposal: &Proposal) -> f64 {
        let cur = match self.current {
            Some(v) => v,
            None => {
                let v = (self.f)(current);
                self.current = Some(v);
                v
            }
        };
        proposal.materialise(current, &mut self.scratch);
        self.pending = (self.f)(&self.scratch);
        if self.pending == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        if cur == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        self.pending - cur
    }

    fn accept(&mut self, _current: &[f64], _proposal: &Proposal) {
        self.current = Some(self.pending);
    }
}

/// A target with a constant likelihood: the sampler then draws from the
/// Dirichlet prior.
pub struct FlatTarget;

impl SimplexTarget for FlatTarget {
    fn log_likelihood_ratio(&mut self, _current: &[f64], _proposal: &Proposal) -> f64 {
        0.0
    }
}

/// Runs `proposals` single-component updates on `w`, visiting components in
/// index order (cycling when `proposals` exceeds the dimension).
///
/// `z` is the current MCMC iteration number, used by the adaptation. The
/// vector is renormalised exactly at the end so it never drifts off the
/// simplex. Returns the number of accepted proposals.
pub fn update_dirichlet_vector<T, R>(
    w: &mut [f64],
    concentration: &Concentration,
    tuner: &mut AdaptiveTuner,
    target: &mut T,
    rng: &mut R,
    proposals: usize,
    z: u64,
) -> usize
where
    T: SimplexTarget + ?Sized,
    R: Rng + ?Sized,
{
    let d = w.len();
    debug_assert_eq!(tuner.dim(), d);
    if d < 2 {
        return 0;
    }
    let shape_sum: f64 = (0..d).map(|i| concentration.get(i) - 1.0).sum();
    let mut accepted = 0;
    for p in 0..proposals {
        let c = p % d;
        let current = w[c];
        let g: f64 = rng.random();
        let (raw, log_hastings) = if g < MULTIPLICATIVE_PROB {
            let e = tuner.sigma[c] * standard_normal(rng);
            let raw = current * e.exp();
            let norm = 1.0 - current + raw;
            (raw, e - d as f64 * norm.ln())
        } else {
            let e = ADDITIVE_SD * standard_normal(rng);
            let raw = current + e;
            let norm = 1.0 - current + raw;
            let back = -e / norm;
            let log_phi_ratio = (e * e - back * back) / (2.0 * ADDITIVE_SD * ADDITIVE_SD);
            (raw, log_phi_ratio - (d as f64 + 1.0) * norm.ln())
        };
        if !(raw > 0.0 && raw.is_finite()) {
            tuner.record(c, false, z);
            continue;
        }
        let proposal = Proposal {
            component: c,
            raw_value: raw,
            norm: 1.0 - current + raw,
        };
        // sum (a_i - 1) (log W'_i - log W_i) for a single-component change
        let log_prior = (concentration.get(c) - 1.0) * (raw.ln() - current.ln())
            - shape_sum * proposal.norm.ln();
        let log_lik = target.log_likelihood_ratio(w, &proposal);
        let log_ratio = log_prior + log_lik + log_hastings;
        let accept = if log_ratio.is_nan() {
            false
        } else {
            log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
        };
        if accept {
            target.accept(w, &proposal);
            let inv = 1.0 / proposal.norm;
            for v in w.iter_mut() {
                *v *= inv;
            }
            w[c] = raw * inv;
            accepted += 1;
        }
        tuner.record(c, accept, z);
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::ChainRng;
    use crate::stats::{batch_means_se, mean};
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn adaptation_step_sizes() {
        // z = 10^4 caps the step at 1/sqrt(z) = 0.01
        let up = adapted_scale(2.0, 0.6, 10_000);
        assert!((up / 2.0 - 0.01f64.exp()).abs() < 1e-14);
        let down = adapted_scale(2.0, 0.44, 10_000);
        assert!((down / 2.0 - (-0.01f64).exp()).abs() < 1e-14);
        // early iterations are capped at 0.05
        let early = adapted_scale(1.0, 0.9, 4);
        assert!((early - 0.05f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn tuner_adapts_after_a_full_window() {
        let mut tuner = AdaptiveTuner::new(2);
        for p in 0..ADAPT_WINDOW {
            tuner.record(0, p < 30, 10_000);
        }
        assert!((tuner.sigma()[0] - 0.01f64.exp()).abs() < 1e-14);
        assert_eq!(tuner.sigma()[1], INITIAL_SCALE);
        assert_eq!(tuner.window_rate(0), None);
        assert_eq!(tuner.totals().next(), Some((30, 50)));
    }

    #[test]
    fn fn_target_matches_flat_target_stream() {
        let a = Concentration::Symmetric(2.0);
        let mut w1 = vec![0.2, 0.3, 0.5];
        let mut w2 = w1.clone();
        let mut t1 = AdaptiveTuner::new(3);
        let mut t2 = AdaptiveTuner::new(3);
        let mut r1 = ChainRng::seed_from_u64(5);
        let mut r2 = ChainRng::seed_from_u64(5);
        let mut flat = FnTarget::new(|_: &[f64]| 1.5);
        for z in 1..200 {
            update_dirichlet_vector(&mut w1, &a, &mut t1, &mut flat, &mut r1, 3, z);
            update_dirichlet_vector(&mut w2, &a, &mut t2, &mut FlatTarget, &mut r2, 3, z);
        }
        assert_eq!(w1, w2);
    }

    #[test]
    fn invalid_likelihood_is_never_accepted() {
        let a = Concentration::Symmetric(1.0);
        let mut w = vec![0.5, 0.5];
        let mut tuner = AdaptiveTuner::new(2);
        let mut rng = ChainRng::seed_from_u64(9);
        let mut target = FnTarget::new(|v: &[f64]| {
            if v == [0.5, 0.5] {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        });
        let acc = update_dirichlet_vector(&mut w, &a, &mut tuner, &mut target, &mut rng, 100, 1);
        assert_eq!(acc, 0);
        assert_eq!(w, vec![0.5, 0.5]);
        assert!(tuner.totals().all(|(a, _)| a == 0));
    }

    #[test]
    fn flat_target_recovers_uniform_means() {
        let a = Concentration::Symmetric(1.0);
        let mut w = vec![1.0 / 3.0; 3];
        let mut tuner = AdaptiveTuner::new(3);
        let mut rng = ChainRng::seed_from_u64(11);
        let sweeps = 100_000;
        let mut trace = vec![Vec::new(); 3];
        for z in 1..=sweeps as u64 {
            update_dirichlet_vector(&mut w, &a, &mut tuner, &mut FlatTarget, &mut rng, 3, z);
            for (c, tr) in trace.iter_mut().enumerate() {
                tr.push(w[c]);
            }
        }
        for tr in &trace {
            let m = mean(tr);
            let se = batch_means_se(tr);
            assert!((m - 1.0 / 3.0).abs() < 3.0 * se, "mean {m} se {se}");
        }
    }

    #[test]
    fn informative_likelihood_moves_mass() {
        // multinomial counts (30, 10) with a flat prior: Beta(31, 11) mean 31/42
        let a = Concentration::Symmetric(1.0);
        let mut w = vec![0.5, 0.5];
        let mut tuner = AdaptiveTuner::new(2);
        let mut rng = ChainRng::seed_from_u64(21);
        let mut target = FnTarget::new(|v: &[f64]| 30.0 * v[0].ln() + 10.0 * v[1].ln());
        let mut trace = Vec::new();
        for z in 1..=60_000u64 {
            update_dirichlet_vector(&mut w, &a, &mut tuner, &mut target, &mut rng, 2, z);
            trace.push(w[0]);
        }
        let m = mean(&trace[1000..]);
        let se = batch_means_se(&trace[1000..]);
        assert!((m - 31.0 / 42.0).abs() < 4.0 * se, "mean {m} se {se}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn output_stays_on_simplex(seed in any::<u64>(), d in 2usize..8, a in 0.05f64..5.0) {
            let mut rng = ChainRng::seed_from_u64(seed);
            let conc = Concentration::Symmetric(a);
            let mut w = crate::random::dirichlet_variate(&conc, d, &mut rng);
            let mut tuner = AdaptiveTuner::new(d);
            for z in 1..50u64 {
                update_dirichlet_vector(&mut w, &conc, &mut tuner, &mut FlatTarget, &mut rng, d, z);
                let s: f64 = w.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(w.iter().all(|v| *v >= 0.0));
            }
        }
    }
}
