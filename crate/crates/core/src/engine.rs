//! The MCMC driver: initialisation, the update cycle, burn-in, thinning and
//! appending to an existing chain.
//!
//! Each iteration updates every source-effect vector `alpha_tl`, then every
//! relative-prevalence vector `r_jt` (unless `r` is fixed), then the type
//! effects `q` through a cluster assignment sweep followed by a redraw of
//! the cluster values. Burn-in counts raw iterations; afterwards every
//! `thin`-th iteration is stored.
//!
//! The likelihood ratios of the simplex updates are evaluated
//! incrementally from a cache of the unit intensities
//! `s_itl = sum_j alpha_jtl r_ijt k_jt` (so that `lambda_itl = q_i s_itl`).
//! The cache is rebuilt from scratch after every vector update, so rounding
//! never accumulates across blocks.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{Chain, ChainMeta, ResumeState, StateSnapshot, FORMAT_VERSION};
use crate::data::{Priors, SourcePrevalence, SurveillanceData};
use crate::error::{Error, Result};
use crate::model::{self, ClusterState, ModelState};
use crate::random::{dirichlet_variate, gamma_variate, ChainRng};
use crate::samplers::crp::{crp_update_assignments, update_cluster_values};
use crate::samplers::dirichlet::{update_dirichlet_vector, AdaptiveTuner, Proposal, SimplexTarget};
use crate::samplers::{ClusterSufficientStats, DpPrior, SweepOrder};

/// Attempts at drawing a starting cluster value that gives a finite
/// log-posterior.
const INIT_ATTEMPTS: usize = 100;

/// Model-level switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Hold `r` at its maximum likelihood estimate instead of sampling it.
    pub fixed_r: bool,
    pub sweep_order: SweepOrder,
}

/// Data, prevalences and priors: everything that defines the posterior.
#[derive(Debug, Clone)]
pub struct Model {
    pub data: SurveillanceData,
    pub prevalence: SourcePrevalence,
    pub priors: Priors,
    pub options: ModelOptions,
}

impl Model {
    pub fn new(
        data: SurveillanceData,
        prevalence: SourcePrevalence,
        priors: Priors,
        options: ModelOptions,
    ) -> Result<Self> {
        data.validate()?;
        prevalence.check_dims(&data)?;
        priors.validate(data.n_types(), data.n_sources())?;
        if let Some(t) =
            (0..data.n_times()).find(|&t| (0..data.n_sources()).all(|j| prevalence.at(j, t) == 0.0))
        {
            return Err(Error::validation(format!(
                "every source prevalence is zero at time `{}`",
                data.times[t]
            )));
        }
        if let Some(i) = (0..data.n_types()).find(|&i| data.x_type_total(i) == 0) {
            return Err(Error::validation(format!(
                "type `{}` has no source isolates; preprocess the data first",
                data.types[i]
            )));
        }
        Ok(Self {
            data,
            prevalence,
            priors,
            options,
        })
    }

    /// SHA-256 over labels, counts, prevalences, priors and options.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for labels in [
            &self.data.types,
            &self.data.sources,
            &self.data.times,
            &self.data.locations,
        ] {
            h.update((labels.len() as u64).to_le_bytes());
            for l in labels {
                h.update((l.len() as u64).to_le_bytes());
                h.update(l.as_bytes());
            }
        }
        for v in self.data.y.iter().chain(&self.data.x) {
            h.update(v.to_le_bytes());
        }
        for k in &self.prevalence.k {
            h.update(k.to_bits().to_le_bytes());
        }
        h.update(serde_json::to_vec(&self.priors).expect("priors serialise"));
        h.update(serde_json::to_vec(&self.options).expect("options serialise"));
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// MCMC control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitParams {
    /// Number of stored samples.
    pub n_iter: usize,
    /// Raw iterations discarded before the first stored sample.
    pub burn_in: u64,
    /// Raw iterations per stored sample after burn-in.
    pub thin: u64,
    pub seed: u64,
}

impl FitParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::param("n_iter", "must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::param("thin", "must be at least 1"));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> u64 {
        self.burn_in + self.n_iter as u64 * self.thin
    }
}

/// User-supplied starting values; any subset may be given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserInit {
    /// `[time, location, source]`.
    pub alpha: Option<Vec<f64>>,
    /// `[source, time, type]`.
    pub r: Option<Vec<f64>>,
    /// Cluster labels per type and the value of each cluster.
    pub clusters: Option<(Vec<usize>, Vec<f64>)>,
}

/// Builds the starting state.
///
/// Without user values, every `alpha_tl` and `r_jt` is drawn from its
/// Dirichlet prior (or `r` is set to its MLE when fixed) and all types
/// share one cluster whose value is drawn from the base distribution. The
/// value is redrawn (up to a fixed number of times) while it leaves the
/// log-posterior non-finite.
pub fn init_state(
    model: &Model,
    rng: &mut ChainRng,
    user: Option<&UserInit>,
) -> Result<ModelState> {
    let data = &model.data;
    let (n, m, nt, nl) = (
        data.n_types(),
        data.n_sources(),
        data.n_times(),
        data.n_locations(),
    );
    let mut alpha = Vec::with_capacity(nt * nl * m);
    for _ in 0..nt * nl {
        alpha.extend(dirichlet_variate(&model.priors.a_alpha, m, rng));
    }
    let mut r = if model.options.fixed_r {
        data.relative_prevalence_mle()
    } else {
        let mut r = Vec::with_capacity(m * nt * n);
        for _ in 0..m * nt {
            r.extend(dirichlet_variate(&model.priors.a_r, n, rng));
        }
        r
    };
    let mut clusters = ClusterState::single(n, 1.0);
    let mut user_clusters = false;

    if let Some(u) = user {
        if let Some(a) = &u.alpha {
            alpha = a.clone();
        }
        if let Some(v) = &u.r {
            if model.options.fixed_r {
                return Err(Error::param(
                    "r",
                    "cannot be initialised when r is fixed at its MLE",
                ));
            }
            r = v.clone();
        }
        if let Some((labels, values)) = &u.clusters {
            clusters = ClusterState::new(labels.clone(), values.clone())?;
            user_clusters = true;
        }
    }

    let mut state = ModelState {
        n_types: n,
        n_sources: m,
        n_times: nt,
        n_locations: nl,
        alpha,
        r,
        clusters,
    };
    state.check()?;

    if !user_clusters {
        let prior = DpPrior::from(&model.priors);
        let mut attempts = 0;
        loop {
            let theta = gamma_variate(prior.a_theta, prior.b_theta, rng);
            state.clusters = ClusterState::single(n, theta);
            attempts += 1;
            if log_posterior(model, &state).is_finite() || attempts == INIT_ATTEMPTS {
                break;
            }
        }
    }
    Ok(state)
}

/// Unnormalised log-posterior of the continuous parameters (the cluster
/// partition prior is omitted).
pub fn log_posterior(model: &Model, state: &ModelState) -> f64 {
    let mut lp = model::log_lik_human(state, &model.prevalence, &model.data);
    for t in 0..state.n_times {
        for l in 0..state.n_locations {
            lp += model::log_dirichlet_kernel(state.alpha_block(t, l), &model.priors.a_alpha);
        }
    }
    if !model.options.fixed_r {
        lp += model::log_lik_source(state, &model.data);
        for j in 0..state.n_sources {
            for t in 0..state.n_times {
                lp += model::log_dirichlet_kernel(state.r_block(j, t), &model.priors.a_r);
            }
        }
    }
    lp
}

/// Snapshot passed to the progress callback after every iteration.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub iteration: u64,
    pub total: u64,
    pub stored: usize,
}

/// Runs a fresh chain.
pub fn run(model: &Model, params: &FitParams, init: Option<&UserInit>) -> Result<Chain> {
    run_with_control(model, params, init, |_| true)
}

/// Runs a fresh chain, calling `control` after every iteration. Returning
/// `false` stops the run; the chain then holds the samples stored so far.
pub fn run_with_control(
    model: &Model,
    params: &FitParams,
    init: Option<&UserInit>,
    control: impl FnMut(&Progress) -> bool,
) -> Result<Chain> {
    params.validate()?;
    let mut rng = ChainRng::seed_from_u64(params.seed);
    let state = init_state(model, &mut rng, init)?;
    let lp = log_posterior(model, &state);
    if !lp.is_finite() {
        return Err(Error::Numeric(format!(
            "log-posterior at the starting values is {lp}; supply starting values or check that \
             every type with human cases is present in some source"
        )));
    }
    let sampler = Sampler::new(model, state, rng, 0, None);
    let meta = ChainMeta {
        format_version: FORMAT_VERSION,
        types: model.data.types.clone(),
        sources: model.data.sources.clone(),
        times: model.data.times.clone(),
        locations: model.data.locations.clone(),
        k: model.prevalence.k.clone(),
        priors: model.priors.clone(),
        options: model.options,
        seed: params.seed,
        burn_in: params.burn_in,
        thin: params.thin,
        digest: model.digest(),
    };
    let mut chain = Chain::empty(meta);
    drive(sampler, &mut chain, params.n_iter, control)?;
    Ok(chain)
}

/// Continues `chain` from its last raw state for `extra` more stored
/// samples, with the same thinning and no new burn-in.
pub fn append(model: &Model, mut chain: Chain, extra: usize) -> Result<Chain> {
    append_with_control(model, &mut chain, extra, |_| true)?;
    Ok(chain)
}

pub fn append_with_control(
    model: &Model,
    chain: &mut Chain,
    extra: usize,
    control: impl FnMut(&Progress) -> bool,
) -> Result<()> {
    let digest = model.digest();
    if digest != chain.meta.digest {
        return Err(Error::DigestMismatch {
            chain: chain.meta.digest.clone(),
            model: digest,
        });
    }
    let resume = chain
        .resume
        .clone()
        .ok_or_else(|| Error::Format("chain has no resumable sampler state".into()))?;
    let state = resume.snapshot.to_state(&model.data)?;
    let mut rng = ChainRng::seed_from_u64(chain.meta.seed);
    rng.set_word_pos(resume.rng_word_pos);
    let sampler = Sampler::new(
        model,
        state,
        rng,
        resume.iteration,
        Some((resume.alpha_tuners, resume.r_tuners)),
    );
    drive(sampler, chain, extra, control)
}

fn drive(
    mut sampler: Sampler<'_>,
    chain: &mut Chain,
    to_store: usize,
    mut control: impl FnMut(&Progress) -> bool,
) -> Result<()> {
    let (burn_in, thin) = (chain.meta.burn_in, chain.meta.thin);
    let target = chain.n_samples + to_store;
    let total = burn_in + target as u64 * thin;
    while chain.n_samples < target {
        sampler.step()?;
        let z = sampler.iteration;
        if z > burn_in && (z - burn_in).is_multiple_of(thin) {
            chain.push_sample(&sampler.state, &sampler.model.prevalence)?;
        }
        let progress = Progress {
            iteration: z,
            total,
            stored: chain.n_samples,
        };
        if !control(&progress) {
            break;
        }
    }
    chain.resume = Some(sampler.resume_state());
    chain.acceptance = sampler.acceptance_totals();
    Ok(())
}

/// Human cases at one (time, location) with a positive count.
#[derive(Debug, Clone, Copy)]
struct PositiveCell {
    ty: usize,
    y: f64,
}

struct Sampler<'m> {
    model: &'m Model,
    state: ModelState,
    rng: ChainRng,
    iteration: u64,
    alpha_tuners: Vec<AdaptiveTuner>,
    r_tuners: Vec<AdaptiveTuner>,
    /// `s_itl`, laid out like `y`.
    unit: Vec<f64>,
    /// Types with cases, per (time, location).
    positive: Vec<Vec<PositiveCell>>,
    y_star: Vec<u64>,
    source_totals: Vec<f64>,
    dp: DpPrior,
}

impl<'m> Sampler<'m> {
    fn new(
        model: &'m Model,
        state: ModelState,
        rng: ChainRng,
        iteration: u64,
        tuners: Option<(Vec<AdaptiveTuner>, Vec<AdaptiveTuner>)>,
    ) -> Self {
        let data = &model.data;
        let (n, m, nt, nl) = (
            data.n_types(),
            data.n_sources(),
            data.n_times(),
            data.n_locations(),
        );
        let (alpha_tuners, r_tuners) = tuners.unwrap_or_else(|| {
            (
                (0..nt * nl).map(|_| AdaptiveTuner::new(m)).collect(),
                (0..m * nt).map(|_| AdaptiveTuner::new(n)).collect(),
            )
        });
        let mut positive = vec![Vec::new(); nt * nl];
        for t in 0..nt {
            for l in 0..nl {
                for i in 0..n {
                    let y = data.y_at(i, t, l);
                    if y > 0 {
                        positive[t * nl + l].push(PositiveCell { ty: i, y: y as f64 });
                    }
                }
            }
        }
        let mut source_totals = vec![0.0; m * nt];
        for j in 0..m {
            for t in 0..nt {
                source_totals[j * nt + t] = data.x_source_total(j, t) as f64;
            }
        }
        let mut sampler = Self {
            model,
            state,
            rng,
            iteration,
            alpha_tuners,
            r_tuners,
            unit: vec![0.0; n * nt * nl],
            positive,
            y_star: (0..n).map(|i| data.y_total(i)).collect(),
            source_totals,
            dp: DpPrior::from(&model.priors),
        };
        for t in 0..nt {
            sampler.refresh_unit(t, None);
        }
        sampler
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.state.n_types,
            self.state.n_sources,
            self.state.n_times,
            self.state.n_locations,
        )
    }

    /// Recomputes `s_itl` for time `t` and either one location or all.
    fn refresh_unit(&mut self, t: usize, location: Option<usize>) {
        let (n, m, nt, nl) = self.dims();
        let k = &self.model.prevalence;
        let locations = match location {
            Some(l) => l..l + 1,
            None => 0..nl,
        };
        for l in locations {
            let alpha = self.state.alpha_block(t, l);
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in alpha.iter().enumerate() {
                    acc += a * self.state.r[(j * nt + t) * n + i] * k.at(j, t);
                }
                self.unit[(i * nt + t) * nl + l] = acc;
            }
        }
        let _ = m;
    }

    fn step(&mut self) -> Result<()> {
        self.iteration += 1;
        let (_, m, nt, nl) = self.dims();
        for t in 0..nt {
            for l in 0..nl {
                self.update_alpha(t, l);
            }
        }
        if !self.model.options.fixed_r {
            for j in 0..m {
                for t in 0..nt {
                    self.update_r(j, t);
                }
            }
        }
        self.update_q()
    }

    fn update_alpha(&mut self, t: usize, l: usize) {
        let (n, m, nt, nl) = self.dims();
        if m < 2 {
            return;
        }
        let k = &self.model.prevalence;
        let cells = &self.positive[t * nl + l];
        let mut target = AlphaTarget {
            m,
            unit: Vec::with_capacity(cells.len()),
            y: Vec::with_capacity(cells.len()),
            p: Vec::with_capacity(cells.len() * m),
            q_weighted: vec![0.0; m],
            linear: 0.0,
            y_total: 0.0,
        };
        for cell in cells {
            target.unit.push(self.unit[(cell.ty * nt + t) * nl + l]);
            target.y.push(cell.y);
            target.y_total += cell.y;
            for j in 0..m {
                target
                    .p
                    .push(self.state.r[(j * nt + t) * n + cell.ty] * k.at(j, t));
            }
        }
        for j in 0..m {
            let kj = k.at(j, t);
            let r = &self.state.r[(j * nt + t) * n..(j * nt + t + 1) * n];
            let mut acc = 0.0;
            for (i, ri) in r.iter().enumerate() {
                acc += self.state.clusters.q(i) * ri;
            }
            target.q_weighted[j] = acc * kj;
        }
        let start = self.state.alpha_index(0, t, l);
        let w = &mut self.state.alpha[start..start + m];
        target.linear = w.iter().zip(&target.q_weighted).map(|(a, b)| a * b).sum();
        update_dirichlet_vector(
            w,
            &self.model.priors.a_alpha,
            &mut self.alpha_tuners[t * nl + l],
            &mut target,
            &mut self.rng,
            m,
            self.iteration,
        );
        self.refresh_unit(t, Some(l));
    }

    fn update_r(&mut self, j: usize, t: usize) {
        let (n, _, nt, nl) = self.dims();
        let k = self.model.prevalence.at(j, t);
        let start = self.state.r_index(0, j, t);
        let mut target = RTarget {
            entries: Vec::new(),
            scale_total: 0.0,
            q: self.state.clusters.q_vec(),
            q_weighted: 0.0,
            counts: (0..n)
                .map(|i| self.model.data.x_at(i, j, t) as f64)
                .collect(),
            count_total: self.source_totals[j * nt + t],
        };
        let r = &self.state.r[start..start + n];
        target.q_weighted = r.iter().zip(&target.q).map(|(a, b)| a * b).sum();
        for l in 0..nl {
            let scale = self.state.alpha[self.state.alpha_index(j, t, l)] * k;
            target.scale_total += scale;
            for cell in &self.positive[t * nl + l] {
                let unit = self.unit[(cell.ty * nt + t) * nl + l];
                target.entries.push(REntry {
                    ty: cell.ty,
                    y: cell.y,
                    scale,
                    unit,
                });
            }
        }
        let w = &mut self.state.r[start..start + n];
        update_dirichlet_vector(
            w,
            &self.model.priors.a_r,
            &mut self.r_tuners[j * nt + t],
            &mut target,
            &mut self.rng,
            n,
            self.iteration,
        );
        self.refresh_unit(t, None);
    }

    fn update_q(&mut self) -> Result<()> {
        let (n, _, nt, nl) = self.dims();
        let stats = ClusterSufficientStats {
            y_star: self.y_star.clone(),
            lambda_star: (0..n)
                .map(|i| self.unit[i * nt * nl..(i + 1) * nt * nl].iter().sum())
                .collect(),
        };
        crp_update_assignments(
            &stats,
            &self.dp,
            &mut self.state.clusters,
            self.model.options.sweep_order,
            &mut self.rng,
        )?;
        update_cluster_values(&stats, &self.dp, &mut self.state.clusters, &mut self.rng);
        Ok(())
    }

    fn resume_state(&self) -> ResumeState {
        ResumeState {
            iteration: self.iteration,
            rng_word_pos: self.rng.get_word_pos(),
            snapshot: StateSnapshot::from_state(&self.state),
            alpha_tuners: self.alpha_tuners.clone(),
            r_tuners: self.r_tuners.clone(),
        }
    }

    fn acceptance_totals(&self) -> crate::chain::AcceptanceTotals {
        crate::chain::AcceptanceTotals {
            alpha: self
                .alpha_tuners
                .iter()
                .flat_map(|t| t.totals().collect::<Vec<_>>())
                .collect(),
            r: self
                .r_tuners
                .iter()
                .flat_map(|t| t.totals().collect::<Vec<_>>())
                .collect(),
        }
    }
}

/// Human-case likelihood of one `alpha_tl` vector.
///
/// With `dv = V_c - alpha_c` and `Z` the norm of the modified vector, the
/// new unit intensities are `s'_i = (s_i + dv P_ic) / Z`, where `P_ic =
/// r_ict k_ct`. Only types with cases need a logarithm; the linear term
/// `sum_i q_i s_i` updates in constant time through `sum_i q_i P_ic`.
struct AlphaTarget {
    m: usize,
    unit: Vec<f64>,
    y: Vec<f64>,
    p: Vec<f64>,
    q_weighted: Vec<f64>,
    linear: f64,
    y_total: f64,
}

impl SimplexTarget for AlphaTarget {
    fn log_likelihood_ratio(&mut self, current: &[f64], prop: &Proposal) -> f64 {
        let c = prop.component;
        let dv = prop.raw_value - current[c];
        let mut acc = 0.0;
        for (idx, (&s, &y)) in self.unit.iter().zip(&self.y).enumerate() {
            let p = self.p[idx * self.m + c];
            if p == 0.0 {
                continue;
            }
            let arg = dv * p / s;
            if arg <= -1.0 {
                return f64::NEG_INFINITY;
            }
            acc += y * arg.ln_1p();
        }
        let log_norm = prop.norm.ln();
        let linear = (self.linear + dv * self.q_weighted[c]) / prop.norm;
        acc - self.y_total * log_norm - (linear - self.linear)
    }

    fn accept(&mut self, current: &[f64], prop: &Proposal) {
        let c = prop.component;
        let dv = prop.raw_value - current[c];
        for (idx, s) in self.unit.iter_mut().enumerate() {
            *s = (*s + dv * self.p[idx * self.m + c]) / prop.norm;
        }
        self.linear = (self.linear + dv * self.q_weighted[c]) / prop.norm;
    }
}

#[derive(Debug, Clone, Copy)]
struct REntry {
    ty: usize,
    y: f64,
    /// `alpha_jtl k_jt` for this entry's location.
    scale: f64,
    unit: f64,
}

/// Joint source and human likelihood of one `r_jt` vector.
///
/// For a proposal changing component `c` from `r_c` to `v` with norm `Z`,
/// `r'_i - r_i = -r_i (v - r_c) / Z` for `i != c` and `(v - r_c)(1 - r_c) /
/// Z` for `c`. The multinomial term changes by `x_c log(v / r_c) - X log Z`.
struct RTarget {
    entries: Vec<REntry>,
    scale_total: f64,
    q: Vec<f64>,
    q_weighted: f64,
    counts: Vec<f64>,
    count_total: f64,
}

impl RTarget {
    #[inline]
    fn shift(current: &[f64], prop: &Proposal, i: usize) -> f64 {
        let c = prop.component;
        let dv = prop.raw_value - current[c];
        if i == c {
            dv * (1.0 - current[c]) / prop.norm
        } else {
            -current[i] * dv / prop.norm
        }
    }
}

impl SimplexTarget for RTarget {
    fn log_likelihood_ratio(&mut self, current: &[f64], prop: &Proposal) -> f64 {
        let c = prop.component;
        let (v, rc) = (prop.raw_value, current[c]);
        let log_norm = prop.norm.ln();
        let mut acc = -self.count_total * log_norm;
        if self.counts[c] > 0.0 {
            acc += self.counts[c] * (v.ln() - rc.ln());
        }
        let dv = v - rc;
        for e in &self.entries {
            let shift = if e.ty == c {
                dv * (1.0 - rc) / prop.norm
            } else {
                -current[e.ty] * dv / prop.norm
            };
            let arg = e.scale * shift / e.unit;
            if arg <= -1.0 {
                return f64::NEG_INFINITY;
            }
            acc += e.y * arg.ln_1p();
        }
        let qc = self.q[c];
        let q_weighted = (self.q_weighted - qc * rc + qc * v) / prop.norm;
        acc - self.scale_total * (q_weighted - self.q_weighted)
    }

    fn accept(&mut self, current: &[f64], prop: &Proposal) {
        for e in self.entries.iter_mut() {
            e.unit += e.scale * Self::shift(current, prop, e.ty);
        }
        let c = prop.component;
        let qc = self.q[c];
        self.q_weighted = (self.q_weighted - qc * current[c] + qc * prop.raw_value) / prop.norm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess, Concentration};
    use crate::random::dirichlet_variate;
    use rand::Rng;

    pub(crate) fn toy_model(seed: u64, nt: usize, nl: usize) -> Model {
        let mut rng = ChainRng::seed_from_u64(seed);
        let (n, m) = (6, 3);
        let lbl = |p: &str, c: usize| (0..c).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let y = (0..n * nt * nl).map(|_| rng.random_range(0..8)).collect();
        let x = (0..n * m * nt).map(|_| rng.random_range(0..5)).collect();
        let data =
            SurveillanceData::new(lbl("T", n), lbl("S", m), lbl("t", nt), lbl("L", nl), y, x)
                .unwrap();
        let data = preprocess(&data).unwrap().data;
        let prev = SourcePrevalence::from_values(m, nt, vec![0.4; m * nt]).unwrap();
        Model::new(data, prev, Priors::default(), ModelOptions::default()).unwrap()
    }

    /// Brute-force likelihood used to check the incremental targets.
    fn full_loglik(model: &Model, state: &ModelState) -> f64 {
        model::log_lik_human(state, &model.prevalence, &model.data)
            + model::log_lik_source(state, &model.data)
    }

    #[test]
    fn incremental_targets_match_full_recomputation() {
        let model = toy_model(4, 2, 2);
        let mut rng = ChainRng::seed_from_u64(10);
        let state = init_state(&model, &mut rng, None).unwrap();
        let sampler = Sampler::new(&model, state.clone(), rng.clone(), 1, None);
        let (n, m, nt, nl) = sampler.dims();

        // alpha block (t=1, l=0), component 2
        let t = 1;
        let l = 0;
        let mut at = {
            let k = &model.prevalence;
            let cells = &sampler.positive[t * nl + l];
            let mut target = AlphaTarget {
                m,
                unit: cells
                    .iter()
                    .map(|c| sampler.unit[(c.ty * nt + t) * nl + l])
                    .collect(),
                y: cells.iter().map(|c| c.y).collect(),
                p: cells
                    .iter()
                    .flat_map(|c| {
                        (0..m)
                            .map(|j| state.r[(j * nt + t) * n + c.ty] * k.at(j, t))
                            .collect::<Vec<_>>()
                    })
                    .collect(),
                q_weighted: (0..m)
                    .map(|j| {
                        (0..n)
                            .map(|i| state.q(i) * state.r[(j * nt + t) * n + i])
                            .sum::<f64>()
                            * k.at(j, t)
                    })
                    .collect(),
                linear: 0.0,
                y_total: cells.iter().map(|c| c.y).sum(),
            };
            target.linear = state
                .alpha_block(t, l)
                .iter()
                .zip(&target.q_weighted)
                .map(|(a, b)| a * b)
                .sum();
            target
        };
        let cur = state.alpha_block(t, l).to_vec();
        let prop = Proposal {
            component: 2,
            raw_value: cur[2] * 1.7,
            norm: 1.0 - cur[2] + cur[2] * 1.7,
        };
        let mut moved = state.clone();
        let start = moved.alpha_index(0, t, l);
        let mut buf = Vec::new();
        prop.materialise(&cur, &mut buf);
        moved.alpha[start..start + m].copy_from_slice(&buf);
        let expected = full_loglik(&model, &moved) - full_loglik(&model, &state);
        let got = at.log_likelihood_ratio(&cur, &prop);
        assert!(
            (got - expected).abs() < 1e-9 * expected.abs().max(1.0),
            "{got} vs {expected}"
        );
        at.accept(&cur, &prop);

        // r block (j=1, t=0), component 3
        let mut s2 = Sampler::new(&model, state.clone(), rng, 1, None);
        let (j, t) = (1, 0);
        let start = state.r_index(0, j, t);
        let cur = state.r[start..start + n].to_vec();
        let prop = Proposal {
            component: 3,
            raw_value: cur[3] * 0.3,
            norm: 1.0 - cur[3] + cur[3] * 0.3,
        };
        let mut moved = state.clone();
        prop.materialise(&cur, &mut buf);
        moved.r[start..start + n].copy_from_slice(&buf);
        let expected = full_loglik(&model, &moved) - full_loglik(&model, &state);
        // build the r target through the same code path as the sampler
        let got = {
            let k = model.prevalence.at(j, t);
            let mut target = RTarget {
                entries: Vec::new(),
                scale_total: 0.0,
                q: state.clusters.q_vec(),
                q_weighted: cur
                    .iter()
                    .zip(state.clusters.q_vec())
                    .map(|(a, b)| a * b)
                    .sum(),
                counts: (0..n).map(|i| model.data.x_at(i, j, t) as f64).collect(),
                count_total: model.data.x_source_total(j, t) as f64,
            };
            for l in 0..nl {
                let scale = state.alpha[state.alpha_index(j, t, l)] * k;
                target.scale_total += scale;
                for cell in &s2.positive[t * nl + l] {
                    target.entries.push(REntry {
                        ty: cell.ty,
                        y: cell.y,
                        scale,
                        unit: s2.unit[(cell.ty * nt + t) * nl + l],
                    });
                }
            }
            target.log_likelihood_ratio(&cur, &prop)
        };
        assert!(
            (got - expected).abs() < 1e-9 * expected.abs().max(1.0),
            "{got} vs {expected}"
        );
        s2.step().unwrap();
    }

    #[test]
    fn unit_cache_tracks_state_through_iterations() {
        let model = toy_model(5, 2, 3);
        let mut rng = ChainRng::seed_from_u64(2);
        let state = init_state(&model, &mut rng, None).unwrap();
        let mut sampler = Sampler::new(&model, state, rng, 0, None);
        for _ in 0..50 {
            sampler.step().unwrap();
        }
        let lam = model::lambda_i(&sampler.state, &model.prevalence);
        for (i, &s) in sampler.unit.iter().enumerate() {
            let q = sampler.state.q(i / (2 * 3));
            assert!((q * s - lam[i]).abs() <= 1e-12 * lam[i].max(1e-300));
        }
        sampler.state.check().unwrap();
    }

    #[test]
    fn init_state_is_valid_and_deterministic() {
        let model = toy_model(1, 1, 1);
        let a = init_state(&model, &mut ChainRng::seed_from_u64(3), None).unwrap();
        let b = init_state(&model, &mut ChainRng::seed_from_u64(3), None).unwrap();
        a.check().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.clusters.n_clusters(), 1);
    }

    #[test]
    fn init_rejects_bad_user_values() {
        let model = toy_model(1, 1, 1);
        let n = model.data.n_types();
        let m = model.data.n_sources();
        let mut r: Vec<f64> = Vec::new();
        for _ in 0..m {
            r.extend(vec![0.9 / n as f64; n]);
        }
        let user = UserInit {
            r: Some(r),
            ..UserInit::default()
        };
        let err = init_state(&model, &mut ChainRng::seed_from_u64(3), Some(&user)).unwrap_err();
        assert!(err.to_string().contains("r[source 0, time 0]"), "{err}");

        let mut rng = ChainRng::seed_from_u64(3);
        let alpha = dirichlet_variate(&Concentration::Symmetric(1.0), m, &mut rng);
        let user = UserInit {
            alpha: Some(alpha.clone()),
            clusters: Some((vec![0; n], vec![2.5])),
            ..UserInit::default()
        };
        let s = init_state(&model, &mut rng, Some(&user)).unwrap();
        assert_eq!(s.alpha, alpha);
        assert_eq!(s.clusters.values(), &[2.5]);
    }

    fn params(n_iter: usize, burn_in: u64, thin: u64) -> FitParams {
        FitParams {
            n_iter,
            burn_in,
            thin,
            seed: 77,
        }
    }

    #[test]
    fn run_produces_expected_shapes() {
        let model = toy_model(2, 2, 2);
        let chain = run(&model, &params(10, 0, 1), None).unwrap();
        let (n, m) = (model.data.n_types(), model.data.n_sources());
        assert_eq!(chain.n_samples, 10);
        assert_eq!(chain.alpha.len(), 10 * 2 * 2 * m);
        assert_eq!(chain.r.len(), 10 * m * 2 * n);
        assert_eq!(chain.q.len(), 10 * n);
        assert_eq!(chain.lambda_i.len(), 10 * n * 4);
        assert_eq!(chain.lambda_j_prop.len(), 10 * m * 4);
        for s in 0..10 {
            chain.state_at(s).check().unwrap();
        }
    }

    #[test]
    fn stored_lambdas_match_stored_parameters() {
        let model = toy_model(3, 2, 2);
        let chain = run(&model, &params(20, 5, 2), None).unwrap();
        let len = chain.lambda_i_len();
        for s in 0..chain.n_samples {
            let state = chain.state_at(s);
            let lam = model::lambda_i(&state, &model.prevalence);
            for (a, b) in lam.iter().zip(&chain.lambda_i[s * len..(s + 1) * len]) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            }
            let n = model.data.n_types();
            let labels = &chain.assignments[s * n..(s + 1) * n];
            for i in 0..n {
                for i2 in 0..n {
                    if labels[i] == labels[i2] {
                        assert_eq!(chain.q[s * n + i], chain.q[s * n + i2]);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_chains() {
        let model = toy_model(6, 1, 2);
        let a = run(&model, &params(15, 3, 2), None).unwrap();
        let b = run(&model, &params(15, 3, 2), None).unwrap();
        assert_eq!(a, b);
        let c = run(
            &model,
            &FitParams {
                seed: 78,
                ..params(15, 3, 2)
            },
            None,
        )
        .unwrap();
        assert_ne!(a.alpha, c.alpha);
    }

    #[test]
    fn append_continues_exactly() {
        let model = toy_model(7, 2, 1);
        let whole = run(&model, &params(10, 4, 3), None).unwrap();
        let half = run(&model, &params(5, 4, 3), None).unwrap();
        let joined = append(&model, half, 5).unwrap();
        assert_eq!(joined.n_samples, 10);
        assert_eq!(joined, whole);
    }

    #[test]
    fn append_survives_a_file_round_trip() {
        let model = toy_model(7, 2, 1);
        let whole = run(&model, &params(8, 2, 2), None).unwrap();
        let half = run(&model, &params(4, 2, 2), None).unwrap();
        let mut buf = Vec::new();
        half.write_to(&mut buf).unwrap();
        let back = Chain::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, half);
        assert_eq!(append(&model, back, 4).unwrap(), whole);
    }

    #[test]
    fn append_rejects_foreign_chain() {
        let chain = run(&toy_model(7, 2, 1), &params(2, 0, 1), None).unwrap();
        let err = append(&toy_model(8, 2, 1), chain, 2).unwrap_err();
        assert!(matches!(err, Error::DigestMismatch { .. }));
    }

    #[test]
    fn interrupted_run_keeps_stored_samples() {
        let model = toy_model(2, 1, 1);
        let chain = run_with_control(&model, &params(10, 0, 2), None, |p| p.iteration < 7).unwrap();
        assert_eq!(chain.n_samples, 3);
        assert_eq!(chain.alpha.len(), 3 * chain.alpha_len());
    }

    #[test]
    fn fixed_r_stores_the_mle() {
        let mut model = toy_model(9, 2, 2);
        model.options.fixed_r = true;
        let mle = model.data.relative_prevalence_mle();
        let chain = run(&model, &params(6, 2, 1), None).unwrap();
        for s in 0..chain.n_samples {
            assert_eq!(&chain.r[s * mle.len()..(s + 1) * mle.len()], mle.as_slice());
        }
        assert!(chain.acceptance.r.iter().all(|&(_, p)| p == 0));
    }

    #[test]
    fn acceptance_rates_are_fractions() {
        let model = toy_model(2, 1, 1);
        let chain = run(&model, &params(30, 0, 1), None).unwrap();
        let rows = chain.acceptance();
        assert_eq!(rows.len(), chain.alpha_len() + chain.r_len());
        for row in rows {
            assert_eq!(row.proposed, 30);
            assert!((0.0..=1.0).contains(&row.rate));
        }
    }

    #[test]
    fn digest_tracks_inputs() {
        let a = toy_model(1, 1, 1);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.priors.a_q = 0.2;
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.prevalence.k[0] = 0.41;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn fit_params_are_validated() {
        let model = toy_model(1, 1, 1);
        assert!(run(&model, &params(0, 0, 1), None).is_err());
        assert!(run(&model, &params(1, 0, 0), None).is_err());
        assert_eq!(params(1000, 10_000, 500).total_iterations(), 510_000);
    }
}
