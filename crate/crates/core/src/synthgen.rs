//! Forward simulation of surveillance data from the joint model.
//!
//! [`simulate`] draws human cases `y_itl ~ Poisson(lambda_itl)`, positive
//! source samples `s+_jt ~ Binomial(s_jt, k_jt)` and typed isolates
//! `x_jt ~ Multinomial(s+_jt, r_jt)`. Two fixed-seed presets are provided:
//! a two-time, two-location example with three true type-effect clusters,
//! and a single-period reconstruction shaped like the Manawatu
//! *Campylobacter* data (six sources with their published sample counts).

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};

use crate::data::{empirical_prevalence, Concentration, SourcePrevalence, SurveillanceData};
use crate::error::{Error, Result};
use crate::model::{self, ClusterState, ModelState};
use crate::random::{binomial_variate, dirichlet_variate, multinomial_variate, ChainRng};

/// Seed of the two-time, two-location example.
pub const EXAMPLE_SEED: u64 = 59623;
/// Seed of the campylobacteriosis reconstruction.
pub const CAMPY_SEED: u64 = 2005;

/// Ground truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParams {
    pub types: Vec<String>,
    pub sources: Vec<String>,
    pub times: Vec<String>,
    pub locations: Vec<String>,
    /// `[time, location, source]`.
    pub alpha: Vec<f64>,
    /// `[source, time, type]`.
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    /// True cluster of each type.
    pub labels: Vec<usize>,
    /// `[source, time]`.
    pub k: Vec<f64>,
}

impl TrueParams {
    pub fn to_state(&self) -> Result<ModelState> {
        let n_clusters = self.labels.iter().max().map_or(0, |m| m + 1);
        let mut values = vec![f64::NAN; n_clusters];
        for (i, &c) in self.labels.iter().enumerate() {
            if !values[c].is_nan() && values[c] != self.q[i] {
                return Err(Error::param(
                    "q",
                    format!("types in true cluster {c} have different values"),
                ));
            }
            values[c] = self.q[i];
        }
        let state = ModelState {
            n_types: self.types.len(),
            n_sources: self.sources.len(),
            n_times: self.times.len(),
            n_locations: self.locations.len(),
            alpha: self.alpha.clone(),
            r: self.r.clone(),
            clusters: ClusterState::new(self.labels.clone(), values)?,
        };
        state.check()?;
        Ok(state)
    }

    pub fn prevalence(&self) -> Result<SourcePrevalence> {
        SourcePrevalence::from_values(self.sources.len(), self.times.len(), self.k.clone())
    }

    /// True expected cases per type, `[type, time, location]`.
    pub fn lambda_i(&self) -> Result<Vec<f64>> {
        Ok(model::lambda_i(&self.to_state()?, &self.prevalence()?))
    }

    /// True expected cases per source, `[source, time, location]`.
    pub fn lambda_j(&self) -> Result<Vec<f64>> {
        Ok(model::lambda_j(&self.to_state()?, &self.prevalence()?))
    }

    /// Writes the truth as CSV with columns
    /// `Parameter,Type,Source,Time,Location,Value`; unused index columns
    /// are empty and cluster labels are reported under `cluster`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["Parameter", "Type", "Source", "Time", "Location", "Value"])
            .map_err(err)?;
        let (n, m, nt, nl) = (
            self.types.len(),
            self.sources.len(),
            self.times.len(),
            self.locations.len(),
        );
        let mut row = |p: &str,
                       i: Option<usize>,
                       j: Option<usize>,
                       t: Option<usize>,
                       l: Option<usize>,
                       v: String| {
            let pick = |idx: Option<usize>, labels: &[String]| {
                idx.map_or(String::new(), |x| labels[x].clone())
            };
            w.write_record([
                p.to_string(),
                pick(i, &self.types),
                pick(j, &self.sources),
                pick(t, &self.times),
                pick(l, &self.locations),
                v,
            ])
        };
        for t in 0..nt {
            for l in 0..nl {
                for j in 0..m {
                    let v = self.alpha[(t * nl + l) * m + j];
                    row("alpha", None, Some(j), Some(t), Some(l), format!("{v:?}")).map_err(err)?;
                }
            }
        }
        for j in 0..m {
            for t in 0..nt {
                for i in 0..n {
                    let v = self.r[(j * nt + t) * n + i];
                    row("r", Some(i), Some(j), Some(t), None, format!("{v:?}")).map_err(err)?;
                }
                let v = self.k[j * nt + t];
                row("k", None, Some(j), Some(t), None, format!("{v:?}")).map_err(err)?;
            }
        }
        for i in 0..n {
            row("q", Some(i), None, None, None, format!("{:?}", self.q[i])).map_err(err)?;
            row(
                "cluster",
                Some(i),
                None,
                None,
                None,
                self.labels[i].to_string(),
            )
            .map_err(err)?;
        }
        let lambda_i = self.lambda_i()?;
        let lambda_j = self.lambda_j()?;
        for i in 0..n {
            for t in 0..nt {
                for l in 0..nl {
                    let v = lambda_i[(i * nt + t) * nl + l];
                    row(
                        "lambda_i",
                        Some(i),
                        None,
                        Some(t),
                        Some(l),
                        format!("{v:?}"),
                    )
                    .map_err(err)?;
                }
            }
        }
        for j in 0..m {
            for t in 0..nt {
                for l in 0..nl {
                    let v = lambda_j[(j * nt + t) * nl + l];
                    row(
                        "lambda_j",
                        None,
                        Some(j),
                        Some(t),
                        Some(l),
                        format!("{v:?}"),
                    )
                    .map_err(err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// A simulated dataset with the prevalence an analyst would compute from
/// the simulated positives, and the parameters that generated it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: SurveillanceData,
    pub prevalence: SourcePrevalence,
    pub truth: TrueParams,
}

fn poisson_variate<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("finite positive mean")
        .sample(rng) as u64
}

/// Simulates one dataset. `sample_sizes` are the samples tested per
/// `[source, time]`.
pub fn simulate<R: Rng + ?Sized>(
    truth: &TrueParams,
    sample_sizes: &[u64],
    rng: &mut R,
) -> Result<Simulated> {
    let state = truth.to_state()?;
    let k_true = truth.prevalence()?;
    let (n, m, nt) = (state.n_types, state.n_sources, state.n_times);
    if sample_sizes.len() != m * nt {
        return Err(Error::validation(format!(
            "{} sample sizes given, expected {}",
            sample_sizes.len(),
            m * nt
        )));
    }
    let lambda = model::lambda_i(&state, &k_true);
    let y: Vec<u64> = lambda.iter().map(|&l| poisson_variate(l, rng)).collect();
    let mut positives = vec![0u64; m * nt];
    let mut x = vec![0u64; n * m * nt];
    for j in 0..m {
        for t in 0..nt {
            let s = binomial_variate(sample_sizes[j * nt + t], k_true.at(j, t), rng);
            positives[j * nt + t] = s;
            let counts = multinomial_variate(s, state.r_block(j, t), rng);
            for (i, c) in counts.into_iter().enumerate() {
                x[(i * m + j) * nt + t] = c;
            }
        }
    }
    let data = SurveillanceData::new(
        truth.types.clone(),
        truth.sources.clone(),
        truth.times.clone(),
        truth.locations.clone(),
        y,
        x,
    )?;
    let prevalence = empirical_prevalence(m, nt, sample_sizes, &positives)?;
    Ok(Simulated {
        data,
        prevalence,
        truth: truth.clone(),
    })
}

fn labels(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Truth and sample sizes of the example design: 30 types, 5 sources,
/// times `1, 2` and locations `A, B`, with type effects in three clusters
/// of 12, 10 and 8 types.
pub fn example_design<R: Rng + ?Sized>(rng: &mut R) -> (TrueParams, Vec<u64>) {
    let (n, m, nt, nl) = (30, 5, 2, 2);
    let cluster_values = [60.0, 350.0, 1800.0];
    let mut labels_true: Vec<usize> = [vec![0; 12], vec![1; 10], vec![2; 8]].concat();
    labels_true.shuffle(rng);
    let q = labels_true.iter().map(|&c| cluster_values[c]).collect();

    let mut alpha = Vec::with_capacity(nt * nl * m);
    for _ in 0..nt * nl {
        alpha.extend(dirichlet_variate(&Concentration::Symmetric(2.0), m, rng));
    }
    // each source has a base type profile that drifts a little over time
    let mut r = Vec::with_capacity(m * nt * n);
    for _ in 0..m {
        let base = dirichlet_variate(&Concentration::Symmetric(0.7), n, rng);
        let conc = Concentration::Vector(base.iter().map(|b| (40.0 * b).max(0.05)).collect());
        for _ in 0..nt {
            r.extend(dirichlet_variate(&conc, n, rng));
        }
    }
    let k = (0..m * nt).map(|_| rng.random_range(0.2..0.7)).collect();
    let truth = TrueParams {
        types: labels("", n),
        sources: labels("Source", m),
        times: labels("", nt),
        locations: vec!["A".into(), "B".into()],
        alpha,
        r,
        q,
        labels: labels_true,
        k,
    };
    (truth, vec![300; m * nt])
}

/// The example dataset generated with [`EXAMPLE_SEED`].
pub fn example() -> Result<Simulated> {
    example_with_seed(EXAMPLE_SEED)
}

pub fn example_with_seed(seed: u64) -> Result<Simulated> {
    let mut rng = ChainRng::seed_from_u64(seed);
    let (truth, sizes) = example_design(&mut rng);
    simulate(&truth, &sizes, &mut rng)
}

/// Published sample counts of the six campylobacter sources.
pub const CAMPY_SOURCES: [&str; 6] = [
    "ChickenA",
    "ChickenB",
    "ChickenC",
    "Ovine",
    "Bovine",
    "Environmental",
];
pub const CAMPY_TOTAL_SAMPLES: [u64; 6] = [239, 196, 127, 595, 552, 524];
pub const CAMPY_POSITIVE_SAMPLES: [u64; 6] = [181, 113, 109, 97, 165, 86];
/// Share of positive samples that were successfully typed.
pub const CAMPY_TYPED_FRACTION: f64 = 0.85;

/// Type-effect values of the four true clusters, lowest first.
const CAMPY_THETA: [f64; 4] = [2.0, 150.0, 800.0, 4000.0];
/// True source effects, in [`CAMPY_SOURCES`] order.
const CAMPY_ALPHA: [f64; 6] = [0.30, 0.12, 0.06, 0.18, 0.22, 0.12];

/// (type, cluster, relative abundance per source).
#[rustfmt::skip]
const CAMPY_TYPES: [(&str, usize, [u32; 6]); 37] = [
    // rare in sources, many human cases
    ("45",   3, [3, 2, 2, 1, 2, 4]),
    ("48",   3, [2, 0, 0, 3, 0, 0]),
    ("53",   3, [1, 1, 0, 2, 0, 0]),
    ("61",   3, [1, 0, 0, 3, 1, 0]),
    ("42",   3, [1, 0, 0, 2, 0, 0]),
    ("354",  3, [0, 1, 2, 1, 0, 0]),
    ("50",   3, [2, 1, 0, 2, 0, 0]),
    ("25",   3, [1, 0, 1, 0, 1, 0]),
    ("190",  3, [0, 0, 0, 1, 2, 1]),
    // common poultry and ruminant types
    ("474",  2, [60, 8, 0, 0, 0, 0]),
    ("520",  2, [3, 4, 4, 0, 0, 0]),
    ("257",  2, [4, 3, 2, 0, 0, 0]),
    ("2026", 2, [0, 2, 6, 0, 0, 0]),
    ("583",  2, [5, 0, 3, 0, 0, 0]),
    ("51",   2, [3, 6, 0, 0, 0, 0]),
    ("21",   2, [2, 0, 0, 4, 1, 0]),
    ("52",   2, [3, 0, 0, 4, 1, 0]),
    // moderate
    ("422",  1, [0, 0, 0, 3, 2, 0]),
    ("403",  1, [3, 0, 0, 2, 0, 0]),
    ("436",  1, [0, 0, 0, 0, 4, 0]),
    ("451",  1, [2, 2, 0, 0, 0, 0]),
    ("1517", 1, [3, 0, 0, 2, 0, 0]),
    ("3711", 1, [0, 0, 5, 0, 0, 0]),
    ("677",  1, [0, 0, 0, 0, 2, 1]),
    ("3610", 1, [2, 0, 0, 2, 0, 0]),
    ("1581", 1, [0, 3, 1, 0, 0, 0]),
    ("227",  1, [2, 3, 0, 0, 0, 0]),
    ("460",  1, [1, 0, 0, 2, 1, 0]),
    ("38",   1, [2, 0, 0, 2, 0, 0]),
    // seen mostly in the environment or a single ruminant sample
    ("177",  0, [0, 0, 0, 0, 0, 4]),
    ("1225", 0, [0, 0, 0, 0, 0, 3]),
    ("2381", 0, [0, 0, 0, 0, 0, 3]),
    ("2345", 0, [0, 0, 0, 0, 1, 2]),
    ("1304", 0, [0, 0, 0, 1, 0, 2]),
    ("2654", 0, [0, 0, 0, 0, 0, 2]),
    ("3230", 0, [0, 0, 0, 1, 1, 0]),
    ("3302", 0, [0, 0, 0, 0, 0, 2]),
];

/// Further low-effect types with a single unit of abundance in one source.
const CAMPY_RARE: usize = 41;
/// Types seen in human cases only; removed by preprocessing.
const CAMPY_HUMAN_ONLY: usize = 14;

/// Builds the campylobacteriosis reconstruction.
///
/// The real data are not redistributable here, so the dataset is generated
/// from a documented truth: six sources with the published sample totals
/// and positives, a dominant poultry type in supplier A, types shared
/// between supplier A, supplier B and ovine sources, and four type-effect
/// clusters whose largest member set has very small effects and no human
/// cases. Typed isolates per source are a fixed share of the positives.
/// Raw data also contain human-only types for preprocessing to remove.
pub fn campy_reconstruction() -> Result<Simulated> {
    let mut rng = ChainRng::seed_from_u64(CAMPY_SEED);
    let m = CAMPY_SOURCES.len();
    let mut types: Vec<String> = CAMPY_TYPES.iter().map(|t| t.0.to_string()).collect();
    let mut cluster: Vec<usize> = CAMPY_TYPES.iter().map(|t| t.1).collect();
    let mut weights: Vec<[u32; 6]> = CAMPY_TYPES.iter().map(|t| t.2).collect();
    for idx in 0..CAMPY_RARE {
        types.push((4000 + 37 * idx).to_string());
        cluster.push(0);
        let mut w = [0u32; 6];
        // spread over every source, most often the ruminant sources
        let j = [0, 4, 5, 3, 4, 1][idx % 6];
        w[j] = 1;
        weights.push(w);
    }
    let n = types.len();
    let mut r = vec![0.0; m * n];
    for j in 0..m {
        let total: u32 = weights.iter().map(|w| w[j]).sum();
        for i in 0..n {
            r[j * n + i] = f64::from(weights[i][j]) / f64::from(total);
        }
    }
    let k: Vec<f64> = CAMPY_POSITIVE_SAMPLES
        .iter()
        .zip(&CAMPY_TOTAL_SAMPLES)
        .map(|(&p, &s)| p as f64 / s as f64)
        .collect();
    let truth = TrueParams {
        types: types.clone(),
        sources: CAMPY_SOURCES.iter().map(|s| s.to_string()).collect(),
        times: vec!["1".into()],
        locations: vec!["A".into()],
        alpha: CAMPY_ALPHA.to_vec(),
        r,
        q: cluster.iter().map(|&c| CAMPY_THETA[c]).collect(),
        labels: cluster,
        k,
    };
    let state = truth.to_state()?;
    let prevalence = empirical_prevalence(m, 1, &CAMPY_TOTAL_SAMPLES, &CAMPY_POSITIVE_SAMPLES)?;
    let lambda = model::lambda_i(&state, &prevalence);
    let mut y: Vec<u64> = lambda
        .iter()
        .map(|&l| poisson_variate(l, &mut rng))
        .collect();
    let mut x = vec![0u64; n * m];
    for j in 0..m {
        let typed = (CAMPY_POSITIVE_SAMPLES[j] as f64 * CAMPY_TYPED_FRACTION).round() as u64;
        let counts = multinomial_variate(typed, state.r_block(j, 0), &mut rng);
        for (i, c) in counts.into_iter().enumerate() {
            x[i * m + j] = c;
        }
    }
    for idx in 0..CAMPY_HUMAN_ONLY {
        types.push((6000 + 53 * idx).to_string());
        y.push(1 + rng.random_range(0..3));
        x.extend(std::iter::repeat_n(0, m));
    }
    let data = SurveillanceData::new(
        types,
        truth.sources.clone(),
        truth.times.clone(),
        truth.locations.clone(),
        y,
        x,
    )?;
    Ok(Simulated {
        data,
        prevalence,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{memory_path, read_data, read_prevalence, write_data, write_prevalence};

    #[test]
    fn source_sums_equal_positives() {
        let sim = example().unwrap();
        let d = &sim.data;
        for j in 0..d.n_sources() {
            for t in 0..d.n_times() {
                let pos = sim.prevalence.positive_samples.as_ref().unwrap()[j * d.n_times() + t];
                assert_eq!(d.x_source_total(j, t), pos);
            }
        }
        assert_eq!(sim.truth.to_state().unwrap().clusters.n_clusters(), 3);
    }

    #[test]
    fn zero_prevalence_source_has_no_positives() {
        let mut rng = ChainRng::seed_from_u64(1);
        let (mut truth, sizes) = example_design(&mut rng);
        truth.k[2 * 2] = 0.0;
        truth.k[2 * 2 + 1] = 0.0;
        let sim = simulate(&truth, &sizes, &mut rng).unwrap();
        for t in 0..2 {
            assert_eq!(sim.data.x_source_total(2, t), 0);
        }
    }

    #[test]
    fn case_means_match_lambda() {
        let mut rng = ChainRng::seed_from_u64(2);
        let (truth, sizes) = example_design(&mut rng);
        let lambda = truth.lambda_i().unwrap();
        let reps = 10_000;
        let mut sums = vec![0.0; lambda.len()];
        let mut sq = vec![0.0; lambda.len()];
        for _ in 0..reps {
            let sim = simulate(&truth, &sizes, &mut rng).unwrap();
            for (c, &v) in sim.data.y.iter().enumerate() {
                sums[c] += v as f64;
                sq[c] += (v * v) as f64;
            }
        }
        let mut outside = 0;
        for c in 0..lambda.len() {
            let mean = sums[c] / reps as f64;
            let var = sq[c] / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt().max(1e-12);
            if (mean - lambda[c]).abs() > 3.0 * se {
                outside += 1;
            }
        }
        // 120 cells: a handful beyond 3 s.e. would still be chance, many would not
        assert!(outside <= 3, "{outside} cells outside 3 s.e.");
    }

    #[test]
    fn simulated_files_round_trip() {
        let sim = example().unwrap();
        let mut buf = Vec::new();
        write_data(&sim.data, &mut buf).unwrap();
        let data = read_data(buf.as_slice(), &memory_path()).unwrap();
        assert_eq!(data, sim.data);
        let mut buf = Vec::new();
        write_prevalence(&sim.prevalence, &data, &mut buf).unwrap();
        let prev = read_prevalence(buf.as_slice(), &memory_path(), &data).unwrap();
        assert_eq!(prev, sim.prevalence);
    }

    #[test]
    fn truth_csv_lists_every_parameter() {
        let sim = example().unwrap();
        let mut buf = Vec::new();
        sim.truth.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let count = |p: &str| {
            text.lines()
                .filter(|l| l.starts_with(&format!("{p},")))
                .count()
        };
        assert_eq!(count("alpha"), 2 * 2 * 5);
        assert_eq!(count("r"), 5 * 2 * 30);
        assert_eq!(count("cluster"), 30);
        assert_eq!(count("lambda_j"), 5 * 2 * 2);
    }

    #[test]
    fn campy_reconstruction_has_published_shape() {
        let sim = campy_reconstruction().unwrap();
        let d = &sim.data;
        assert_eq!(d.sources, CAMPY_SOURCES);
        let k = &sim.prevalence.k;
        assert!((k[0] - 181.0 / 239.0).abs() < 1e-15);
        for j in 0..6 {
            // typed isolates never exceed positives
            assert!(d.x_source_total(j, 0) <= CAMPY_POSITIVE_SAMPLES[j]);
        }
        for label in ["25", "42", "354", "474"] {
            assert!(d.types.iter().any(|t| t == label));
        }
        let pre = crate::data::preprocess(d).unwrap();
        assert!(pre.removed.len() >= CAMPY_HUMAN_ONLY);
        let cases: u64 = d.y.iter().sum();
        assert!((300..900).contains(&cases), "{cases} human cases");
        // the dominant supplier-A type carries a large share of cases
        let i474 = d.types.iter().position(|t| t == "474").unwrap();
        assert!(d.y[i474] as f64 > 0.15 * cases as f64);
    }

    #[test]
    fn campy_reconstruction_is_reproducible() {
        let a = campy_reconstruction().unwrap();
        let b = campy_reconstruction().unwrap();
        assert_eq!(a.data, b.data);
    }
}
