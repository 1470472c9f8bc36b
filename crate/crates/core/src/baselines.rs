//! The Dutch attribution model and its bootstrap intervals.
//!
//! Cases of each type are split between sources in proportion to the type's
//! relative occurrence in each source, with no source or type effects:
//! `lambda_ij = r_ij / sum_j r_ij * y_i` and `lambda_j = sum_i lambda_ij`.
//! Relative occurrences are the maximum likelihood estimates
//! `x_ijt / sum_i x_ijt`, and the split is done per (time, location).

use rand::SeedableRng;

use crate::data::SurveillanceData;
use crate::error::{Error, Result};
use crate::random::{multinomial_variate, ChainRng};
use crate::stats;

/// Point attribution for one (time, location).
///
/// `y` holds cases per type and `r` is `[type, source]`. Returns
/// `(lambda_ij, lambda_j)` with `lambda_ij` laid out like `r`.
pub fn dutch_attribute(y: &[f64], r: &[f64], n_sources: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if r.len() != y.len() * n_sources {
        return Err(Error::validation(format!(
            "relative occurrences have {} values, expected {} types x {n_sources} sources",
            r.len(),
            y.len()
        )));
    }
    let mut lambda_ij = vec![0.0; r.len()];
    let mut lambda_j = vec![0.0; n_sources];
    for (i, &yi) in y.iter().enumerate() {
        let row = &r[i * n_sources..(i + 1) * n_sources];
        if row.iter().any(|v| *v < 0.0) {
            return Err(Error::validation(format!(
                "type {i} has a negative relative occurrence"
            )));
        }
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return Err(Error::validation(format!(
                "type {i} occurs in no source; remove it by preprocessing first"
            )));
        }
        for j in 0..n_sources {
            let v = row[j] / total * yi;
            lambda_ij[i * n_sources + j] = v;
            lambda_j[j] += v;
        }
    }
    Ok((lambda_ij, lambda_j))
}

/// Dutch attribution over every (time, location), with optional bootstrap
/// intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct DutchResult {
    pub sources: Vec<String>,
    pub times: Vec<String>,
    pub locations: Vec<String>,
    /// `[type, source, time, location]`.
    pub lambda_ij: Vec<f64>,
    /// `[source, time, location]`.
    pub lambda_j: Vec<f64>,
    /// Cases of types with no isolates at their time, per
    /// `[time, location]`; these are not attributed to any source.
    pub unattributed: Vec<f64>,
    /// Percentile intervals per `[source, time, location]`.
    pub ci: Option<Vec<(f64, f64)>>,
    /// Bootstrap replicates used for `ci` (0 without bootstrap).
    pub replicates: usize,
}

impl DutchResult {
    /// Summary CSV with the columns of posterior summary tables:
    /// `source,time,location,median,lower,upper`. The point estimate fills
    /// the `median` column.
    pub fn to_csv(&self) -> String {
        let (nt, nl) = (self.times.len(), self.locations.len());
        let mut out = String::from("source,time,location,median,lower,upper\n");
        for j in 0..self.sources.len() {
            for t in 0..nt {
                for l in 0..nl {
                    let c = (j * nt + t) * nl + l;
                    let (lo, hi) = self.ci.as_ref().map_or((f64::NAN, f64::NAN), |ci| ci[c]);
                    out.push_str(&format!(
                        "{},{},{},{:?},{:?},{:?}\n",
                        self.sources[j], self.times[t], self.locations[l], self.lambda_j[c], lo, hi
                    ));
                }
            }
        }
        out
    }
}

/// `[type, source, time]` MLE of relative occurrence from counts laid out
/// like [`SurveillanceData::x`].
fn relative_occurrence(x: &[u64], n: usize, m: usize, nt: usize) -> Vec<f64> {
    let mut r = vec![0.0; n * m * nt];
    for j in 0..m {
        for t in 0..nt {
            let total: u64 = (0..n).map(|i| x[(i * m + j) * nt + t]).sum();
            if total == 0 {
                continue;
            }
            for i in 0..n {
                r[(i * m + j) * nt + t] = x[(i * m + j) * nt + t] as f64 / total as f64;
            }
        }
    }
    r
}

/// Point attribution for given case and isolate counts. Cases of types
/// absent from every source at their time are left unattributed.
fn attribute_counts(data: &SurveillanceData, y: &[u64], x: &[u64]) -> Result<Attribution> {
    let (n, m, nt, nl) = (
        data.n_types(),
        data.n_sources(),
        data.n_times(),
        data.n_locations(),
    );
    let r_all = relative_occurrence(x, n, m, nt);
    let mut lambda_ij = vec![0.0; n * m * nt * nl];
    let mut lambda_j = vec![0.0; m * nt * nl];
    let mut unattributed = vec![0.0; nt * nl];
    for t in 0..nt {
        let mut r = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                r[i * m + j] = r_all[(i * m + j) * nt + t];
            }
        }
        for l in 0..nl {
            let mut yy: Vec<f64> = (0..n).map(|i| y[(i * nt + t) * nl + l] as f64).collect();
            let mut rr = r.clone();
            for i in 0..n {
                if rr[i * m..(i + 1) * m].iter().all(|v| *v == 0.0) {
                    unattributed[t * nl + l] += yy[i];
                    yy[i] = 0.0;
                    rr[i * m] = 1.0;
                }
            }
            let (lij, lj) = dutch_attribute(&yy, &rr, m).map_err(|e| match e {
                Error::Validation(msg) => {
                    Error::Validation(format!("time `{}`: {msg}", data.times[t]))
                }
                other => other,
            })?;
            for i in 0..n {
                for j in 0..m {
                    lambda_ij[((i * m + j) * nt + t) * nl + l] = lij[i * m + j];
                }
            }
            for j in 0..m {
                lambda_j[(j * nt + t) * nl + l] = lj[j];
            }
        }
    }
    Ok(Attribution {
        lambda_ij,
        lambda_j,
        unattributed,
    })
}

struct Attribution {
    lambda_ij: Vec<f64>,
    lambda_j: Vec<f64>,
    unattributed: Vec<f64>,
}

/// Point attribution of `data`. Cases of a type that no source yielded at
/// the same time are reported in [`DutchResult::unattributed`].
pub fn dutch_model(data: &SurveillanceData) -> Result<DutchResult> {
    data.validate()?;
    let a = attribute_counts(data, &data.y, &data.x)?;
    Ok(DutchResult {
        sources: data.sources.clone(),
        times: data.times.clone(),
        locations: data.locations.clone(),
        lambda_ij: a.lambda_ij,
        lambda_j: a.lambda_j,
        unattributed: a.unattributed,
        ci: None,
        replicates: 0,
    })
}

/// What the bootstrap resamples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    /// Resample human cases multinomially over types, per (time, location).
    pub resample_humans: bool,
    /// Resample each source's typed isolates multinomially, per time.
    pub resample_sources: bool,
    /// Interval level is `1 - alpha`.
    pub alpha: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 1000,
            resample_humans: true,
            resample_sources: true,
            alpha: 0.05,
        }
    }
}

/// Point attribution plus percentile bootstrap intervals.
///
/// Replicate `b` draws from its own ChaCha stream of `seed`, so results do
/// not depend on evaluation order. As in the point estimate, cases of a
/// type missing from the (resampled) isolates are left unattributed.
pub fn dutch_bootstrap(
    data: &SurveillanceData,
    opts: &BootstrapOptions,
    seed: u64,
) -> Result<DutchResult> {
    if opts.replicates == 0 {
        return Err(Error::param("replicates", "must be at least 1"));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::param(
            "alpha",
            format!("{} is not in (0, 1)", opts.alpha),
        ));
    }
    let mut result = dutch_model(data)?;
    let (n, m, nt, nl) = (
        data.n_types(),
        data.n_sources(),
        data.n_times(),
        data.n_locations(),
    );
    let cells = m * nt * nl;
    let mut draws = vec![Vec::with_capacity(opts.replicates); cells];
    for b in 0..opts.replicates {
        let mut rng = ChainRng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let y = if opts.resample_humans {
            let mut y = vec![0u64; n * nt * nl];
            for t in 0..nt {
                for l in 0..nl {
                    let p: Vec<f64> = (0..n).map(|i| data.y_at(i, t, l) as f64).collect();
                    let total = p.iter().sum::<f64>() as u64;
                    for (i, c) in multinomial_variate(total, &p, &mut rng)
                        .into_iter()
                        .enumerate()
                    {
                        y[(i * nt + t) * nl + l] = c;
                    }
                }
            }
            y
        } else {
            data.y.clone()
        };
        let x = if opts.resample_sources {
            let mut x = vec![0u64; n * m * nt];
            for j in 0..m {
                for t in 0..nt {
                    let p: Vec<f64> = (0..n).map(|i| data.x_at(i, j, t) as f64).collect();
                    let total = data.x_source_total(j, t);
                    for (i, c) in multinomial_variate(total, &p, &mut rng)
                        .into_iter()
                        .enumerate()
                    {
                        x[(i * m + j) * nt + t] = c;
                    }
                }
            }
            x
        } else {
            data.x.clone()
        };
        let a = attribute_counts(data, &y, &x)?;
        for (c, v) in a.lambda_j.into_iter().enumerate() {
            draws[c].push(v);
        }
    }
    result.ci = Some(
        draws
            .iter()
            .map(|d| {
                let s = stats::sorted(d);
                (
                    stats::quantile_sorted(&s, opts.alpha / 2.0),
                    stats::quantile_sorted(&s, 1.0 - opts.alpha / 2.0),
                )
            })
            .collect(),
    );
    result.replicates = opts.replicates;
    Ok(result)
}
