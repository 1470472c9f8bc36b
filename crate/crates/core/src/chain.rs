//! Stored MCMC output and its on-disk format.
//!
//! Per-sample arrays are flat, sample-major and use these layouts:
//!
//! ```text
//! alpha          [sample, time, location, source]
//! r              [sample, source, time, type]
//! q              [sample, type]
//! assignments    [sample, type]      canonical labels, first appearance order
//! n_clusters     [sample]
//! lambda_i       [sample, type, time, location]
//! lambda_j       [sample, source, time, location]
//! lambda_j_prop  [sample, source, time, location]
//! ```
//!
//! # Binary format
//!
//! ```text
//! magic      8 bytes  "HALDDPCH"
//! version    u32 LE
//! header     u64 LE length, then UTF-8 JSON (metadata, resume state,
//!            acceptance tallies, sample count)
//! arrays     in the order above; each is a u64 LE element count followed by
//!            little-endian f64 (or u32 for assignments and n_clusters)
//! ```
//!
//! Floats are written as raw bits, so a round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Priors, SourcePrevalence, SurveillanceData};
use crate::engine::ModelOptions;
use crate::error::{Error, Result};
use crate::model::{self, ClusterState, ModelState};
use crate::samplers::dirichlet::AdaptiveTuner;

pub const MAGIC: &[u8; 8] = b"HALDDPCH";
pub const FORMAT_VERSION: u32 = 1;

/// Fit metadata stored with every chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub format_version: u32,
    pub types: Vec<String>,
    pub sources: Vec<String>,
    pub times: Vec<String>,
    pub locations: Vec<String>,
    /// Source prevalences, `[source, time]`.
    pub k: Vec<f64>,
    pub priors: Priors,
    pub options: ModelOptions,
    pub seed: u64,
    pub burn_in: u64,
    pub thin: u64,
    /// Digest of the model the chain was fitted to.
    pub digest: String,
}

impl ChainMeta {
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
}

/// Parameter values without derived quantities, as kept for resuming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub alpha: Vec<f64>,
    pub r: Vec<f64>,
    pub assignments: Vec<usize>,
    pub values: Vec<f64>,
}

impl StateSnapshot {
    pub fn from_state(state: &ModelState) -> Self {
        Self {
            alpha: state.alpha.clone(),
            r: state.r.clone(),
            assignments: state.clusters.assignments().to_vec(),
            values: state.clusters.values().to_vec(),
        }
    }

    pub fn to_state(&self, data: &SurveillanceData) -> Result<ModelState> {
        let state = ModelState {
            n_types: data.n_types(),
            n_sources: data.n_sources(),
            n_times: data.n_times(),
            n_locations: data.n_locations(),
            alpha: self.alpha.clone(),
            r: self.r.clone(),
            clusters: ClusterState::new(self.assignments.clone(), self.values.clone())?,
        };
        state.check()?;
        Ok(state)
    }
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    /// Raw iterations completed, burn-in included.
    pub iteration: u64,
    #[serde(with = "u128_string")]
    pub rng_word_pos: u128,
    pub snapshot: StateSnapshot,
    pub alpha_tuners: Vec<AdaptiveTuner>,
    pub r_tuners: Vec<AdaptiveTuner>,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Metropolis-Hastings tallies `(accepted, proposed)` per component, in the
/// `alpha` and `r` layouts. Burn-in proposals are included.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceTotals {
    pub alpha: Vec<(u64, u64)>,
    pub r: Vec<(u64, u64)>,
}

/// One row of the acceptance table.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceRow {
    pub parameter: &'static str,
    /// Labels of the indices, e.g. `[time, location, source]` for alpha.
    pub labels: Vec<String>,
    pub accepted: u64,
    pub proposed: u64,
    /// `accepted / proposed`, or NaN when nothing was proposed.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub meta: ChainMeta,
    pub n_samples: usize,
    pub alpha: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub assignments: Vec<u32>,
    pub n_clusters: Vec<u32>,
    pub lambda_i: Vec<f64>,
    pub lambda_j: Vec<f64>,
    pub lambda_j_prop: Vec<f64>,
    pub acceptance: AcceptanceTotals,
    pub resume: Option<ResumeState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: ChainMeta,
    n_samples: usize,
    acceptance: AcceptanceTotals,
    resume: Option<ResumeState>,
}

impl Chain {
    pub fn empty(meta: ChainMeta) -> Self {
        Self {
            meta,
            n_samples: 0,
            alpha: Vec::new(),
            r: Vec::new(),
            q: Vec::new(),
            assignments: Vec::new(),
            n_clusters: Vec::new(),
            lambda_i: Vec::new(),
            lambda_j: Vec::new(),
            lambda_j_prop: Vec::new(),
            acceptance: AcceptanceTotals::default(),
            resume: None,
        }
    }

    /// Stores one state together with its derived intensities.
    pub fn push_sample(&mut self, state: &ModelState, k: &SourcePrevalence) -> Result<()> {
        let lambda_j = model::lambda_j(state, k);
        let prop = model::proportions_by_source(
            &lambda_j,
            state.n_sources,
            state.n_times,
            state.n_locations,
        )?;
        self.alpha.extend_from_slice(&state.alpha);
        self.r.extend_from_slice(&state.r);
        self.q.extend(state.clusters.q_vec());
        self.assignments.extend(
            state
                .clusters
                .canonical_labels()
                .into_iter()
                .map(|c| c as u32),
        );
        self.n_clusters.push(state.clusters.n_clusters() as u32);
        self.lambda_i.extend(model::lambda_i(state, k));
        self.lambda_j.extend(lambda_j);
        self.lambda_j_prop.extend(prop);
        self.n_samples += 1;
        Ok(())
    }

    /// Per-sample block sizes of the stored arrays.
    pub fn alpha_len(&self) -> usize {
        self.meta.n_times() * self.meta.n_locations() * self.meta.n_sources()
    }
    pub fn r_len(&self) -> usize {
        self.meta.n_sources() * self.meta.n_times() * self.meta.n_types()
    }
    pub fn lambda_i_len(&self) -> usize {
        self.meta.n_types() * self.meta.n_times() * self.meta.n_locations()
    }
    pub fn lambda_j_len(&self) -> usize {
        self.meta.n_sources() * self.meta.n_times() * self.meta.n_locations()
    }

    /// The parameters of sample `s` as a model state.
    pub fn state_at(&self, s: usize) -> ModelState {
        let n = self.meta.n_types();
        let (al, rl) = (self.alpha_len(), self.r_len());
        let labels: Vec<usize> = self.assignments[s * n..(s + 1) * n]
            .iter()
            .map(|&c| c as usize)
            .collect();
        let q = &self.q[s * n..(s + 1) * n];
        let mut values = vec![0.0; self.n_clusters[s] as usize];
        for (i, &c) in labels.iter().enumerate() {
            values[c] = q[i];
        }
        ModelState {
            n_types: n,
            n_sources: self.meta.n_sources(),
            n_times: self.meta.n_times(),
            n_locations: self.meta.n_locations(),
            alpha: self.alpha[s * al..(s + 1) * al].to_vec(),
            r: self.r[s * rl..(s + 1) * rl].to_vec(),
            clusters: ClusterState::new(labels, values).expect("stored clusters are valid"),
        }
    }

    pub fn prevalence(&self) -> SourcePrevalence {
        SourcePrevalence {
            n_sources: self.meta.n_sources(),
            n_times: self.meta.n_times(),
            k: self.meta.k.clone(),
            total_samples: None,
            positive_samples: None,
        }
    }

    /// Per-component acceptance fractions for every alpha and r coordinate.
    pub fn acceptance(&self) -> Vec<AcceptanceRow> {
        let m = &self.meta;
        let mut rows = Vec::new();
        let rate = |a: u64, p: u64| {
            if p == 0 {
                f64::NAN
            } else {
                a as f64 / p as f64
            }
        };
        for (idx, &(a, p)) in self.acceptance.alpha.iter().enumerate() {
            let j = idx % m.n_sources();
            let tl = idx / m.n_sources();
            rows.push(AcceptanceRow {
                parameter: "alpha",
                labels: vec![
                    m.times[tl / m.n_locations()].clone(),
                    m.locations[tl % m.n_locations()].clone(),
                    m.sources[j].clone(),
                ],
                accepted: a,
                proposed: p,
                rate: rate(a, p),
            });
        }
        for (idx, &(a, p)) in self.acceptance.r.iter().enumerate() {
            let i = idx % m.n_types();
            let jt = idx / m.n_types();
            rows.push(AcceptanceRow {
                parameter: "r",
                labels: vec![
                    m.sources[jt / m.n_times()].clone(),
                    m.times[jt % m.n_times()].clone(),
                    m.types[i].clone(),
                ],
                accepted: a,
                proposed: p,
                rate: rate(a, p),
            });
        }
        rows
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            meta: self.meta.clone(),
            n_samples: self.n_samples,
            acceptance: self.acceptance.clone(),
            resume: self.resume.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let io = |e: std::io::Error| Error::Format(e.to_string());
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes())
            .map_err(io)?;
        w.write_all(&json).map_err(io)?;
        write_f64s(&mut w, &self.alpha).map_err(io)?;
        write_f64s(&mut w, &self.r).map_err(io)?;
        write_f64s(&mut w, &self.q).map_err(io)?;
        write_u32s(&mut w, &self.assignments).map_err(io)?;
        write_u32s(&mut w, &self.n_clusters).map_err(io)?;
        write_f64s(&mut w, &self.lambda_i).map_err(io)?;
        write_f64s(&mut w, &self.lambda_j).map_err(io)?;
        write_f64s(&mut w, &self.lambda_j_prop).map_err(io)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated chain file: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a chain file (bad magic bytes)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r).map_err(fmt)?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported chain format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let len = u64::from_le_bytes(read_array(&mut r).map_err(fmt)?) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(fmt)?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| Error::Format(format!("bad chain header: {e}")))?;
        let mut chain = Chain::empty(header.meta);
        chain.n_samples = header.n_samples;
        chain.acceptance = header.acceptance;
        chain.resume = header.resume;
        chain.alpha = read_f64s(&mut r).map_err(fmt)?;
        chain.r = read_f64s(&mut r).map_err(fmt)?;
        chain.q = read_f64s(&mut r).map_err(fmt)?;
        chain.assignments = read_u32s(&mut r).map_err(fmt)?;
        chain.n_clusters = read_u32s(&mut r).map_err(fmt)?;
        chain.lambda_i = read_f64s(&mut r).map_err(fmt)?;
        chain.lambda_j = read_f64s(&mut r).map_err(fmt)?;
        chain.lambda_j_prop = read_f64s(&mut r).map_err(fmt)?;
        chain.check_shapes()?;
        Ok(chain)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }

    fn check_shapes(&self) -> Result<()> {
        let s = self.n_samples;
        let n = self.meta.n_types();
        let checks = [
            ("alpha", self.alpha.len(), s * self.alpha_len()),
            ("r", self.r.len(), s * self.r_len()),
            ("q", self.q.len(), s * n),
            ("assignments", self.assignments.len(), s * n),
            ("n_clusters", self.n_clusters.len(), s),
            ("lambda_i", self.lambda_i.len(), s * self.lambda_i_len()),
            ("lambda_j", self.lambda_j.len(), s * self.lambda_j_len()),
            (
                "lambda_j_prop",
                self.lambda_j_prop.len(),
                s * self.lambda_j_len(),
            ),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Format(format!(
                    "array `{name}` has {got} values, expected {want}"
                )));
            }
        }
        Ok(())
    }

    /// Writes one parameter as CSV: a `sample` column then one column per
    /// index combination, named like `alpha[2019,North,Chicken]`.
    pub fn write_parameter_csv(&self, param: &str, mut w: impl Write) -> Result<()> {
        let m = &self.meta;
        let (values, dims): (Vec<f64>, Vec<&Vec<String>>) = match param {
            "alpha" => (self.alpha.clone(), vec![&m.times, &m.locations, &m.sources]),
            "r" => (self.r.clone(), vec![&m.sources, &m.times, &m.types]),
            "q" => (self.q.clone(), vec![&m.types]),
            "c" => (
                self.assignments.iter().map(|&c| c as f64).collect(),
                vec![&m.types],
            ),
            "lambda_i" => (
                self.lambda_i.clone(),
                vec![&m.types, &m.times, &m.locations],
            ),
            "lambda_j" => (
                self.lambda_j.clone(),
                vec![&m.sources, &m.times, &m.locations],
            ),
            "lambda_j_prop" => (
                self.lambda_j_prop.clone(),
                vec![&m.sources, &m.times, &m.locations],
            ),
            other => {
                return Err(Error::UnknownLabel {
                    kind: "parameter",
                    label: other.into(),
                    valid: PARAMETERS.join(", "),
                })
            }
        };
        let names = column_names(param, &dims);
        let io = |e: std::io::Error| Error::Format(e.to_string());
        write!(w, "sample").map_err(io)?;
        for name in &names {
            write!(w, ",\"{name}\"").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        let width = names.len();
        for s in 0..self.n_samples {
            write!(w, "{}", s + 1).map_err(io)?;
            for v in &values[s * width..(s + 1) * width] {
                write!(w, ",{v:?}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        Ok(())
    }
}

/// Parameter names understood by extraction and export.
pub const PARAMETERS: [&str; 7] = [
    "alpha",
    "r",
    "q",
    "c",
    "lambda_i",
    "lambda_j",
    "lambda_j_prop",
];

fn column_names(param: &str, dims: &[&Vec<String>]) -> Vec<String> {
    let mut out = vec![Vec::<&str>::new()];
    for labels in dims {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                labels.iter().map(move |l| {
                    let mut p = prefix.clone();
                    p.push(l.as_str());
                    p
                })
            })
            .collect();
    }
    out.into_iter()
        .map(|parts| format!("{param}[{}]", parts.join(",")))
        .collect()
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn write_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn write_u32s(w: &mut impl Write, v: &[u32]) -> std::io::Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_len(r: &mut impl Read) -> std::io::Result<usize> {
    let len = u64::from_le_bytes(read_array(r)?);
    if len > (1 << 40) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "array length out of range",
        ));
    }
    Ok(len as usize)
}

fn read_f64s(r: &mut impl Read) -> std::io::Result<Vec<f64>> {
    let len = read_len(r)?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_u32s(r: &mut impl Read) -> std::io::Result<Vec<u32>> {
    let len = read_len(r)?;
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
