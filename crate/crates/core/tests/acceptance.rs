//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so that expensive fits are
//! shared between criteria. Exits non-zero if any criterion fails.

use std::time::Instant;

use halddp::baselines::{dutch_attribute, dutch_bootstrap, dutch_model, BootstrapOptions};
use halddp::chain::Chain;
use halddp::data::{preprocess, Concentration, Priors};
use halddp::engine::{append, run, FitParams, Model, ModelOptions};
use halddp::model::ClusterState;
use halddp::posterior::{
    cluster_count_histogram, co_clustering_dissimilarity, extract, hierarchical_clustering,
    pairwise_correlation, summarize, IntervalMethod, Linkage, Selector,
};
use halddp::random::{dirichlet_variate, ChainRng};
use halddp::samplers::{
    crp_update_assignments, marginal_new_cluster_weight, update_cluster_values,
    update_dirichlet_vector, AdaptiveTuner, ClusterSufficientStats, DpPrior, FlatTarget,
    SweepOrder,
};
use halddp::stats::{batch_means_se, mean, median};
use halddp::synthgen;
use rand::SeedableRng;
use statrs::function::gamma::ln_gamma;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, ok: bool, name: &str, detail: impl AsRef<str>) {
        if !ok {
            self.failures += 1;
        }
        println!(
            "{} {name}: {}",
            if ok { "PASS" } else { "FAIL" },
            detail.as_ref()
        );
    }
}

/// Fit settings used for the case study.
const CAMPY_FIT: FitParams = FitParams {
    n_iter: 1000,
    burn_in: 10_000,
    thin: 500,
    seed: 59623,
};

fn campy_model() -> Model {
    let sim = synthgen::campy_reconstruction().expect("campy data");
    let data = preprocess(&sim.data).expect("preprocess").data;
    let priors = Priors {
        a_theta: 0.01,
        b_theta: 0.00001,
        a_alpha: Concentration::Symmetric(1.0),
        a_r: Concentration::Symmetric(0.1),
        a_q: 0.1,
    };
    Model::new(data, sim.prevalence, priors, ModelOptions::default()).expect("model")
}

fn lambda_j_series(chain: &Chain, source: &str) -> Vec<f64> {
    let sel = Selector {
        sources: Some(vec![source.to_string()]),
        ..Selector::default()
    };
    extract(chain, "lambda_j", &sel).unwrap().values
}

fn campy_criteria(rep: &mut Report, model: &Model, chain: &Chain, minutes: f64) {
    // major source
    let medians: Vec<(String, f64)> = chain
        .meta
        .sources
        .iter()
        .map(|s| (s.clone(), median(&lambda_j_series(chain, s))))
        .collect();
    let top = medians
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .clone();
    let listing = medians
        .iter()
        .map(|(s, m)| format!("{s}={m:.1}"))
        .collect::<Vec<_>>()
        .join(" ");
    rep.line(
        top.0.starts_with("Chicken") && minutes < 30.0,
        "campy-major-source",
        format!(
            "largest median lambda_j is {} [{listing}]; fit took {minutes:.1} min",
            top.0
        ),
    );

    // cluster structure
    let hist = cluster_count_histogram(chain);
    let modal = hist
        .iter()
        .max_by_key(|(k, c)| (**c, std::cmp::Reverse(**k)))
        .unwrap()
        .0;
    let d = co_clustering_dissimilarity(chain).unwrap();
    let tree = hierarchical_clustering(&d, Linkage::Average);
    let cut = tree.cut(0.5);
    let n = d.n();
    let n_blocks = cut.iter().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..n_blocks)
        .map(|b| cut.iter().filter(|&&c| c == b).count())
        .collect();
    let min_size = 3.max((0.05 * n as f64).ceil() as usize);
    let dominant = sizes.iter().filter(|&&s| s >= min_size).count();
    let q = extract(chain, "q", &Selector::default()).unwrap();
    let q_median: Vec<f64> = (0..n).map(|i| median(&q.series(i))).collect();
    let block_q: Vec<f64> = (0..n_blocks)
        .map(|b| {
            let members: Vec<f64> = (0..n)
                .filter(|&i| cut[i] == b)
                .map(|i| q_median[i])
                .collect();
            median(&members)
        })
        .collect();
    let high = (0..n_blocks)
        .max_by(|&a, &b| block_q[a].total_cmp(&block_q[b]))
        .unwrap();
    let high_size = sizes[high];
    rep.line(
        (3..=6).contains(modal) && dominant == 4 && (6..=12).contains(&high_size),
        "campy-clusters",
        format!(
            "modal cluster count {modal} (histogram {hist:?}); {dominant} blocks of >= {min_size} types \
             under an average-linkage cut at 0.5 (block sizes {sizes:?}); highest-q block has {high_size} types"
        ),
    );

    // posterior correlations
    let c_ovine = pairwise_correlation(chain, "lambda_j", "ChickenA", "Ovine", "1", "A").unwrap();
    let c_b = pairwise_correlation(chain, "lambda_j", "ChickenA", "ChickenB", "1", "A").unwrap();
    rep.line(
        (c_ovine - (-0.60)).abs() <= 0.20 && (c_b - (-0.65)).abs() <= 0.20,
        "campy-correlations",
        format!(
            "corr(ChickenA, Ovine) = {c_ovine:.3} (target -0.60 +/- 0.20), \
             corr(ChickenA, ChickenB) = {c_b:.3} (target -0.65 +/- 0.20)"
        ),
    );

    // Dutch baseline
    let (lij, lj) = dutch_attribute(&[30.0], &[0.2, 0.1], 2).unwrap();
    let hand = lij == [20.0, 10.0] && lj == [20.0, 10.0];
    let point = dutch_model(&model.data).unwrap();
    let cases: u64 = model.data.y.iter().sum();
    let attributed: f64 = point.lambda_j.iter().sum();
    let conserved = (attributed - cases as f64).abs() <= 1e-9 * cases as f64;
    let boot = dutch_bootstrap(&model.data, &BootstrapOptions::default(), 7).unwrap();
    let hald = summarize(
        &extract(chain, "lambda_j", &Selector::default()).unwrap(),
        0.05,
        IntervalMethod::Percentile,
    )
    .unwrap();
    let mut narrower = true;
    let mut widths = Vec::new();
    for (j, (lo, hi)) in boot.ci.as_ref().unwrap().iter().enumerate() {
        let h = &hald.rows[j];
        let (dw, hw) = (hi - lo, h.upper - h.lower);
        narrower &= dw < hw;
        let op = if dw < hw { "<" } else { ">=" };
        widths.push(format!("{} {dw:.1} {op} {hw:.1}", chain.meta.sources[j]));
    }
    rep.line(
        hand && conserved && narrower,
        "dutch-baseline",
        format!(
            "hand example exact: {hand}; sum lambda_j = {attributed} vs {cases} cases; \
             CI widths Dutch vs HaldDP: {}",
            widths.join(", ")
        ),
    );
}

/// One Gauss-Kronrod (7/15) panel: (Kronrod estimate, |Kronrod - Gauss|).
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    const XK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_5,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_48,
        0.0,
    ];
    const WK: [f64; 8] = [
        0.022_935_322_010_529_224,
        0.063_092_092_629_978_56,
        0.104_790_010_322_250_19,
        0.140_653_259_715_525_92,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_42,
        0.204_432_940_075_298_89,
        0.209_482_141_084_727_82,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_64,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    for idx in 0..7 {
        let pair = f(c - h * XK[idx]) + f(c + h * XK[idx]);
        k += WK[idx] * pair;
        if idx % 2 == 1 {
            g += WG[idx / 2] * pair;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive quadrature: keeps bisecting the panel with the largest
/// error estimate until the total estimate is below `rel_tol` of the
/// integral.
fn adaptive_gk(f: &dyn Fn(f64) -> f64, knots: &[f64], rel_tol: f64) -> f64 {
    let mut panels: Vec<(f64, f64, f64, f64)> = knots
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (v, e) = gk15(f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    for _ in 0..5000 {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= rel_tol * total.abs() {
            break;
        }
        let worst = (0..panels.len())
            .max_by(|&i, &j| panels[i].3.total_cmp(&panels[j].3))
            .unwrap();
        let (a, b, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (a + b);
        for (lo, hi) in [(a, mid), (mid, b)] {
            let (v, e) = gk15(f, lo, hi);
            panels.push((lo, hi, v, e));
        }
    }
    // sum small panels first
    let mut vals: Vec<f64> = panels.iter().map(|p| p.2).collect();
    vals.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    vals.iter().sum()
}

/// `int Poisson(y | theta lambda) Gamma(theta | a, b) dtheta` by quadrature
/// after substituting `theta = u^(1/a)`, which removes the singularity of
/// the Gamma density at zero.
fn poisson_gamma_quadrature(a: f64, b: f64, lambda: f64, y: u64) -> f64 {
    let yf = y as f64;
    let log_const = a * b.ln() - ln_gamma(a) - a.ln() - ln_gamma(yf + 1.0);
    let f = |u: f64| {
        if u <= 0.0 {
            return if y == 0 { (log_const).exp() } else { 0.0 };
        }
        let theta = (u.ln() / a).exp();
        let mut lg = log_const - (b + lambda) * theta;
        if y > 0 {
            lg += yf * (theta * lambda).ln();
        }
        lg.exp()
    };
    let theta_max = (a + yf + 80.0 + 15.0 * (a + yf).sqrt()) / (b + lambda);
    let u_max = theta_max.powf(a);
    // split at the mode region for accuracy
    let mode = ((a + yf - 1.0).max(0.0) / (b + lambda)).powf(a).min(u_max);
    adaptive_gk(
        &f,
        &[0.0, 0.5 * mode, mode, 0.5 * (mode + u_max), u_max],
        1e-13,
    )
}

fn conjugacy_criterion(rep: &mut Report) {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_at = (0.0, 0.0, 0.0, 0);
    for a in [0.01, 0.5, 1.0, 3.0] {
        for b in [1e-5, 0.1, 1.0, 5.0] {
            for lambda in [0.1, 1.0, 5.0, 20.0] {
                for y in [0u64, 1, 3, 10] {
                    let prior = DpPrior {
                        a_theta: a,
                        b_theta: b,
                        a_q: 1.0,
                    };
                    // reinstate the dropped lambda^y / y! factor
                    let closed = marginal_new_cluster_weight(y, lambda, &prior)
                        * (y as f64 * lambda.ln() - ln_gamma(y as f64 + 1.0)).exp();
                    let quad = poisson_gamma_quadrature(a, b, lambda, y);
                    let rel = ((closed - quad) / quad).abs();
                    if rel > worst {
                        worst = rel;
                        worst_at = (a, b, lambda, y);
                    }
                }
            }
        }
    }
    rep.line(
        worst < 1e-8,
        "conjugacy-quadrature",
        format!(
            "max relative error {worst:.2e} over 256 grid points (worst at a,b,lambda,y = {worst_at:?}); {:.2}s",
            t0.elapsed().as_secs_f64()
        ),
    );
}

fn gibbs_criterion(rep: &mut Report) {
    let prior = DpPrior {
        a_theta: 0.5,
        b_theta: 0.2,
        a_q: 0.7,
    };
    let stats = ClusterSufficientStats {
        y_star: vec![7],
        lambda_star: vec![2.3],
    };
    let mut rng = ChainRng::seed_from_u64(101);
    let mut clusters = ClusterState::single(1, 1.0);
    let n = 100_000;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        crp_update_assignments(&stats, &prior, &mut clusters, SweepOrder::Fixed, &mut rng).unwrap();
        update_cluster_values(&stats, &prior, &mut clusters, &mut rng);
        draws.push(clusters.values()[0]);
    }
    let shape = prior.a_theta + 7.0;
    let rate = prior.b_theta + 2.3;
    let (m_true, v_true) = (shape / rate, shape / (rate * rate));
    let m = mean(&draws);
    let sq: Vec<f64> = draws.iter().map(|x| (x - m_true).powi(2)).collect();
    let v = mean(&sq);
    let (se_m, se_v) = (batch_means_se(&draws), batch_means_se(&sq));
    rep.line(
        (m - m_true).abs() < 3.0 * se_m && (v - v_true).abs() < 3.0 * se_v,
        "gibbs-single-type",
        format!(
            "mean {m:.4} vs {m_true:.4} (3 s.e. = {:.4}), variance {v:.4} vs {v_true:.4} (3 s.e. = {:.4})",
            3.0 * se_m,
            3.0 * se_v
        ),
    );
}

fn prior_recovery_criterion(rep: &mut Report) {
    let t0 = Instant::now();
    let sweeps = 100_000;
    let mut all_ok = true;
    let mut details = Vec::new();
    let mut seed = 500;
    for d in [2usize, 3, 6] {
        for a in [0.1, 1.0, 5.0] {
            seed += 1;
            let conc = Concentration::Symmetric(a);
            let mut rng = ChainRng::seed_from_u64(seed);
            let mut w = dirichlet_variate(&conc, d, &mut rng);
            let mut tuner = AdaptiveTuner::new(d);
            let mut samples = vec![Vec::with_capacity(sweeps); d];
            for z in 1..=sweeps as u64 {
                update_dirichlet_vector(&mut w, &conc, &mut tuner, &mut FlatTarget, &mut rng, d, z);
                for c in 0..d {
                    samples[c].push(w[c]);
                }
            }
            let a0 = a * d as f64;
            let m_true = a / a0;
            let v_true = m_true * (1.0 - m_true) / (a0 + 1.0);
            let mut worst: f64 = 0.0;
            for s in &samples {
                let m = mean(s);
                let sq: Vec<f64> = s.iter().map(|x| (x - m_true).powi(2)).collect();
                let v = mean(&sq);
                let zm = (m - m_true).abs() / batch_means_se(s);
                let zv = (v - v_true).abs() / batch_means_se(&sq);
                worst = worst.max(zm).max(zv);
            }
            all_ok &= worst < 3.0;
            details.push(format!("d={d},a={a}: {worst:.2}"));
        }
    }
    rep.line(
        all_ok,
        "sampler-prior-recovery",
        format!(
            "largest |error|/s.e. per configuration [{}]; {:.1}s",
            details.join("; "),
            t0.elapsed().as_secs_f64()
        ),
    );
}

/// Fit settings for each simulated dataset.
const SBC_FIT: FitParams = FitParams {
    n_iter: 1000,
    burn_in: 5000,
    thin: 50,
    seed: 0,
};
const SBC_DATASETS: u64 = 20;

fn calibration_criterion(rep: &mut Report) {
    let t0 = Instant::now();
    let (mut covered, mut cells) = (0usize, 0usize);
    let (mut classified, mut typed) = (0usize, 0usize);
    for k in 0..SBC_DATASETS {
        let sim = synthgen::example_with_seed(1000 + k).unwrap();
        let lambda_true = sim.truth.lambda_j().unwrap();
        let pre = preprocess(&sim.data).unwrap();
        let model = Model::new(
            pre.data,
            sim.prevalence,
            Priors::default(),
            ModelOptions::default(),
        )
        .unwrap();
        let chain = run(
            &model,
            &FitParams {
                seed: 7 + k,
                ..SBC_FIT
            },
            None,
        )
        .unwrap();
        let table = summarize(
            &extract(&chain, "lambda_j", &Selector::default()).unwrap(),
            0.05,
            IntervalMethod::Percentile,
        )
        .unwrap();
        for (c, row) in table.rows.iter().enumerate() {
            cells += 1;
            if row.lower <= lambda_true[c] && lambda_true[c] <= row.upper {
                covered += 1;
            }
        }
        // co-clustering against the true labels of the retained types
        let d = co_clustering_dissimilarity(&chain).unwrap();
        let truth: Vec<usize> = chain
            .meta
            .types
            .iter()
            .map(|t| sim.truth.labels[sim.truth.types.iter().position(|u| u == t).unwrap()])
            .collect();
        let n = truth.len();
        for i in 0..n {
            let mates: Vec<usize> = (0..n).filter(|&j| j != i && truth[j] == truth[i]).collect();
            let others: Vec<usize> = (0..n).filter(|&j| truth[j] != truth[i]).collect();
            let together = mates.iter().filter(|&&j| d.get(i, j) < 0.5).count();
            let apart = others.iter().filter(|&&j| d.get(i, j) >= 0.5).count();
            typed += 1;
            if 2 * together > mates.len() && 2 * apart > others.len() {
                classified += 1;
            }
        }
    }
    let coverage = covered as f64 / cells as f64;
    let class_rate = classified as f64 / typed as f64;
    rep.line(
        coverage >= 0.90 && class_rate >= 0.80,
        "simulation-calibration",
        format!(
            "lambda_jtl coverage {covered}/{cells} = {:.1}% (need >= 90%); types classified with \
             their true cluster {classified}/{typed} = {:.1}% (need >= 80%); {} datasets in {:.0}s",
            100.0 * coverage,
            100.0 * class_rate,
            SBC_DATASETS,
            t0.elapsed().as_secs_f64()
        ),
    );
}

fn determinism_criterion(rep: &mut Report, model: &Model) {
    let params = FitParams {
        n_iter: 10,
        burn_in: 50,
        thin: 7,
        seed: 31,
    };
    let bytes = |c: &Chain| {
        let mut b = Vec::new();
        c.write_to(&mut b).unwrap();
        b
    };
    let a = bytes(&run(model, &params, None).unwrap());
    let b = bytes(&run(model, &params, None).unwrap());
    let half = run(
        model,
        &FitParams {
            n_iter: 5,
            ..params
        },
        None,
    )
    .unwrap();
    let joined = bytes(&append(model, half, 5).unwrap());
    rep.line(
        a == b && a == joined,
        "determinism",
        format!(
            "same seed byte-identical: {}; run(10) == run(5)+append(5): {} ({} bytes)",
            a == b,
            a == joined,
            a.len()
        ),
    );
}

fn main() {
    // optional name filters, e.g. `cargo test --test acceptance -- campy`
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wanted =
        |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut rep = Report { failures: 0 };
    if wanted("conjugacy") {
        conjugacy_criterion(&mut rep);
    }
    if wanted("gibbs") {
        gibbs_criterion(&mut rep);
    }
    if wanted("prior-recovery") {
        prior_recovery_criterion(&mut rep);
    }
    if wanted("determinism") || wanted("campy") || wanted("dutch") {
        let model = campy_model();
        if wanted("determinism") {
            determinism_criterion(&mut rep, &model);
        }
        if wanted("campy") || wanted("dutch") {
            let t0 = Instant::now();
            let chain = run(&model, &CAMPY_FIT, None).expect("campy fit");
            let minutes = t0.elapsed().as_secs_f64() / 60.0;
            campy_criteria(&mut rep, &model, &chain, minutes);
        }
    }
    if wanted("calibration") {
        calibration_criterion(&mut rep);
    }
    println!("acceptance: {} criteria failed", rep.failures);
    if rep.failures > 0 {
        std::process::exit(1);
    }
}
