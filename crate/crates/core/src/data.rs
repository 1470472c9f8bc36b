//! Surveillance data, source prevalences and priors.
//!
//! Counts are stored densely over the full index product. Human cases are
//! laid out as `y[type][time][location]` and typed source isolates as
//! `x[type][source][time]`; a combination without observations is a zero
//! count, never a missing cell.

use crate::error::{Error, Result};

/// Strain-typed human case counts and source isolate counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveillanceData {
    pub types: Vec<String>,
    pub sources: Vec<String>,
    pub times: Vec<String>,
    pub locations: Vec<String>,
    /// Human cases, `[type, time, location]`.
    pub y: Vec<u64>,
    /// Typed positive source samples, `[type, source, time]`.
    pub x: Vec<u64>,
}

impl SurveillanceData {
    pub fn new(
        types: Vec<String>,
        sources: Vec<String>,
        times: Vec<String>,
        locations: Vec<String>,
        y: Vec<u64>,
        x: Vec<u64>,
    ) -> Result<Self> {
        let data = Self {
            types,
            sources,
            times,
            locations,
            y,
            x,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    #[inline]
    pub fn y_index(&self, i: usize, t: usize, l: usize) -> usize {
        (i * self.n_times() + t) * self.n_locations() + l
    }

    #[inline]
    pub fn x_index(&self, i: usize, j: usize, t: usize) -> usize {
        (i * self.n_sources() + j) * self.n_times() + t
    }

    #[inline]
    pub fn y_at(&self, i: usize, t: usize, l: usize) -> u64 {
        self.y[self.y_index(i, t, l)]
    }

    #[inline]
    pub fn x_at(&self, i: usize, j: usize, t: usize) -> u64 {
        self.x[self.x_index(i, j, t)]
    }

    /// Checks index sets and array shapes.
    pub fn validate(&self) -> Result<()> {
        for (kind, labels) in [
            ("type", &self.types),
            ("source", &self.sources),
            ("time", &self.times),
            ("location", &self.locations),
        ] {
            if labels.is_empty() {
                return Err(Error::validation(format!("no {kind} labels")));
            }
            let mut seen = std::collections::HashSet::new();
            for label in labels.iter() {
                if !seen.insert(label.as_str()) {
                    return Err(Error::validation(format!(
                        "duplicate {kind} label `{label}`"
                    )));
                }
            }
        }
        let ny = self.n_types() * self.n_times() * self.n_locations();
        if self.y.len() != ny {
            return Err(Error::validation(format!(
                "human case array has {} cells, expected {ny} (types x times x locations); first missing cell is {}",
                self.y.len(),
                self.describe_y_cell(self.y.len().min(ny))
            )));
        }
        let nx = self.n_types() * self.n_sources() * self.n_times();
        if self.x.len() != nx {
            return Err(Error::validation(format!(
                "source count array has {} cells, expected {nx} (types x sources x times); first missing cell is {}",
                self.x.len(),
                self.describe_x_cell(self.x.len().min(nx))
            )));
        }
        Ok(())
    }

    fn describe_y_cell(&self, flat: usize) -> String {
        let (nt, nl) = (self.n_times(), self.n_locations());
        let i = flat / (nt * nl);
        let t = (flat / nl) % nt;
        let l = flat % nl;
        format!(
            "(type {}, time {}, location {})",
            self.types.get(i).map_or("?", String::as_str),
            self.times.get(t).map_or("?", String::as_str),
            self.locations.get(l).map_or("?", String::as_str)
        )
    }

    fn describe_x_cell(&self, flat: usize) -> String {
        let (nm, nt) = (self.n_sources(), self.n_times());
        let i = flat / (nm * nt);
        let j = (flat / nt) % nm;
        let t = flat % nt;
        format!(
            "(type {}, source {}, time {})",
            self.types.get(i).map_or("?", String::as_str),
            self.sources.get(j).map_or("?", String::as_str),
            self.times.get(t).map_or("?", String::as_str)
        )
    }

    /// Total human cases of type `i` over all times and locations.
    pub fn y_total(&self, i: usize) -> u64 {
        let start = self.y_index(i, 0, 0);
        self.y[start..start + self.n_times() * self.n_locations()]
            .iter()
            .sum()
    }

    /// Typed isolates of type `i` over all sources and times.
    pub fn x_type_total(&self, i: usize) -> u64 {
        let start = self.x_index(i, 0, 0);
        self.x[start..start + self.n_sources() * self.n_times()]
            .iter()
            .sum()
    }

    /// Typed isolates from source `j` at time `t`, summed over types.
    pub fn x_source_total(&self, j: usize, t: usize) -> u64 {
        (0..self.n_types()).map(|i| self.x_at(i, j, t)).sum()
    }

    /// Maximum likelihood relative prevalences `x_ijt / sum_i x_ijt`, laid
    /// out as `[source, time, type]`. Sources with no typed isolates at a
    /// time get a uniform vector.
    pub fn relative_prevalence_mle(&self) -> Vec<f64> {
        let (n, m, nt) = (self.n_types(), self.n_sources(), self.n_times());
        let mut r = vec![0.0; m * nt * n];
        for j in 0..m {
            for t in 0..nt {
                let total = self.x_source_total(j, t);
                let block = &mut r[(j * nt + t) * n..(j * nt + t + 1) * n];
                if total == 0 {
                    block.fill(1.0 / n as f64);
                } else {
                    for (i, v) in block.iter_mut().enumerate() {
                        *v = self.x_at(i, j, t) as f64 / total as f64;
                    }
                }
            }
        }
        r
    }

    /// Keeps only the listed types, in the given order.
    pub fn select_types(&self, keep: &[usize]) -> SurveillanceData {
        let (m, nt, nl) = (self.n_sources(), self.n_times(), self.n_locations());
        let mut y = Vec::with_capacity(keep.len() * nt * nl);
        let mut x = Vec::with_capacity(keep.len() * m * nt);
        for &i in keep {
            let ys = self.y_index(i, 0, 0);
            y.extend_from_slice(&self.y[ys..ys + nt * nl]);
            let xs = self.x_index(i, 0, 0);
            x.extend_from_slice(&self.x[xs..xs + m * nt]);
        }
        SurveillanceData {
            types: keep.iter().map(|&i| self.types[i].clone()).collect(),
            sources: self.sources.clone(),
            times: self.times.clone(),
            locations: self.locations.clone(),
            y,
            x,
        }
    }
}

/// Output of [`preprocess`]: the retained data plus the labels dropped.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub data: SurveillanceData,
    pub removed: Vec<String>,
}

/// Removes types that were never isolated from any source.
///
/// Such types carry no information about where their cases came from and
/// make the source likelihood degenerate. Retained types keep their order.
pub fn preprocess(raw: &SurveillanceData) -> Result<Preprocessed> {
    raw.validate()?;
    let (keep, removed): (Vec<usize>, Vec<usize>) =
        (0..raw.n_types()).partition(|&i| raw.x_type_total(i) > 0);
    if keep.is_empty() {
        return Err(Error::EmptyModel);
    }
    Ok(Preprocessed {
        data: raw.select_types(&keep),
        removed: removed.into_iter().map(|i| raw.types[i].clone()).collect(),
    })
}

/// Per (source, time) contamination prevalence `k`, stored as `[source, time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePrevalence {
    pub n_sources: usize,
    pub n_times: usize,
    pub k: Vec<f64>,
    /// Samples tested, when the prevalence was computed from counts.
    pub total_samples: Option<Vec<u64>>,
    /// Positive samples (typed or not), when known.
    pub positive_samples: Option<Vec<u64>>,
}

impl SourcePrevalence {
    /// Wraps externally supplied prevalence values.
    pub fn from_values(n_sources: usize, n_times: usize, k: Vec<f64>) -> Result<Self> {
        if k.len() != n_sources * n_times {
            return Err(Error::validation(format!(
                "prevalence has {} values, expected {} (sources x times)",
                k.len(),
                n_sources * n_times
            )));
        }
        if let Some(pos) = k.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(format!(
                "prevalence for source {} time {} is {}, outside [0, 1]",
                pos / n_times,
                pos % n_times,
                k[pos]
            )));
        }
        Ok(Self {
            n_sources,
            n_times,
            k,
            total_samples: None,
            positive_samples: None,
        })
    }

    #[inline]
    pub fn at(&self, j: usize, t: usize) -> f64 {
        self.k[j * self.n_times + t]
    }

    pub fn check_dims(&self, data: &SurveillanceData) -> Result<()> {
        if self.n_sources != data.n_sources() || self.n_times != data.n_times() {
            return Err(Error::validation(format!(
                "prevalence covers {} sources x {} times, data has {} x {}",
                self.n_sources,
                self.n_times,
                data.n_sources(),
                data.n_times()
            )));
        }
        Ok(())
    }
}

/// Fixes each `k_jt` at `positives / totals`.
///
/// `totals` and `positives` are laid out `[source, time]`. Positives include
/// isolates that could not be typed.
pub fn empirical_prevalence(
    n_sources: usize,
    n_times: usize,
    totals: &[u64],
    positives: &[u64],
) -> Result<SourcePrevalence> {
    let cells = n_sources * n_times;
    if totals.len() != cells || positives.len() != cells {
        return Err(Error::validation(format!(
            "expected {cells} total and positive counts, got {} and {}",
            totals.len(),
            positives.len()
        )));
    }
    let mut k = Vec::with_capacity(cells);
    for (c, (&s, &p)) in totals.iter().zip(positives).enumerate() {
        if s == 0 {
            return Err(Error::validation(format!(
                "source {} time {}: zero samples tested",
                c / n_times,
                c % n_times
            )));
        }
        if p > s {
            return Err(Error::validation(format!(
                "source {} time {}: {p} positives exceed {s} samples",
                c / n_times,
                c % n_times
            )));
        }
        k.push(p as f64 / s as f64);
    }
    Ok(SourcePrevalence {
        n_sources,
        n_times,
        k,
        total_samples: Some(totals.to_vec()),
        positive_samples: Some(positives.to_vec()),
    })
}

/// Dirichlet concentration: symmetric scalar or one value per component.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum Concentration {
    Symmetric(f64),
    Vector(Vec<f64>),
}

impl Concentration {
    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        match self {
            Concentration::Symmetric(a) => *a,
            Concentration::Vector(v) => v[idx],
        }
    }

    pub fn validate(&self, name: &str, dim: usize) -> Result<()> {
        match self {
            Concentration::Symmetric(a) => {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(Error::param(name, format!("{a} is not a positive number")));
                }
            }
            Concentration::Vector(v) => {
                if v.len() != dim {
                    return Err(Error::param(
                        name,
                        format!("has {} entries, expected {dim}", v.len()),
                    ));
                }
                if v.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return Err(Error::param(name, "entries must be positive numbers"));
                }
            }
        }
        Ok(())
    }
}

/// Prior hyperparameters of the joint model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Priors {
    /// Shape of the Gamma base distribution of the type-effect DP.
    pub a_theta: f64,
    /// Rate of the Gamma base distribution.
    pub b_theta: f64,
    pub a_alpha: Concentration,
    pub a_r: Concentration,
    /// DP concentration.
    pub a_q: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            a_theta: 0.01,
            b_theta: 0.00001,
            a_alpha: Concentration::Symmetric(1.0),
            a_r: Concentration::Symmetric(0.1),
            a_q: 0.1,
        }
    }
}

impl Priors {
    pub fn validate(&self, n_types: usize, n_sources: usize) -> Result<()> {
        for (name, v) in [
            ("a_theta", self.a_theta),
            ("b_theta", self.b_theta),
            ("a_q", self.a_q),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("{v} is not a positive number")));
            }
        }
        self.a_alpha.validate("a_alpha", n_sources)?;
        self.a_r.validate("a_r", n_types)?;
        Ok(())
    }
}
