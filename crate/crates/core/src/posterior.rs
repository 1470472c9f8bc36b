//! Posterior extraction and summaries of a stored chain.
//!
//! Credible intervals use either empirical percentiles (linear
//! interpolation between order statistics) or the Chen-Shao shortest
//! window: the narrowest run of `ceil((1 - alpha) S)` consecutive sorted
//! samples, earliest start on ties.
//!
//! Type clustering is summarised by the mismatch frequency of cluster
//! labels, `d(i, i') = P(c_i != c_i')` over stored samples, which is
//! Gower's coefficient for a single categorical variable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use crate::chain::{Chain, PARAMETERS};
use crate::error::{Error, Result};
use crate::stats;

/// Index dimensions, in storage order, of each parameter.
pub fn parameter_dims(param: &str) -> Result<&'static [Dim]> {
    use Dim::*;
    Ok(match param {
        "alpha" => &[Time, Location, Source],
        "r" => &[Source, Time, Type],
        "q" | "c" => &[Type],
        "lambda_i" => &[Type, Time, Location],
        "lambda_j" | "lambda_j_prop" => &[Source, Time, Location],
        other => {
            return Err(Error::UnknownLabel {
                kind: "parameter",
                label: other.to_string(),
                valid: PARAMETERS.join(", "),
            })
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Type,
    Source,
    Time,
    Location,
}

impl Dim {
    pub fn name(self) -> &'static str {
        match self {
            Dim::Type => "type",
            Dim::Source => "source",
            Dim::Time => "time",
            Dim::Location => "location",
        }
    }

    fn labels(self, chain: &Chain) -> &[String] {
        let m = &chain.meta;
        match self {
            Dim::Type => &m.types,
            Dim::Source => &m.sources,
            Dim::Time => &m.times,
            Dim::Location => &m.locations,
        }
    }
}

/// Label filters; `None` keeps every level of that dimension.
#[derive(Debug, Clone, Default)]
pub struct Selector {
    pub types: Option<Vec<String>>,
    pub sources: Option<Vec<String>>,
    pub times: Option<Vec<String>>,
    pub locations: Option<Vec<String>>,
    /// Stored-sample indices; clipped to the chain length.
    pub iterations: Option<Range<usize>>,
}

impl Selector {
    fn filter(&self, dim: Dim) -> Option<&Vec<String>> {
        match dim {
            Dim::Type => self.types.as_ref(),
            Dim::Source => self.sources.as_ref(),
            Dim::Time => self.times.as_ref(),
            Dim::Location => self.locations.as_ref(),
        }
    }
}

/// Samples of one parameter: `values` is `[sample, cell]` with cells
/// enumerated over `dims` in order, last dimension fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub param: String,
    pub dims: Vec<(Dim, Vec<String>)>,
    pub n_samples: usize,
    pub values: Vec<f64>,
}

impl Extracted {
    pub fn n_cells(&self) -> usize {
        self.dims.iter().map(|(_, l)| l.len()).product()
    }

    /// The samples of one cell.
    pub fn series(&self, cell: usize) -> Vec<f64> {
        let w = self.n_cells();
        (0..self.n_samples)
            .map(|s| self.values[s * w + cell])
            .collect()
    }

    /// Labels of each cell, in cell order.
    pub fn cell_labels(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new()];
        for (_, labels) in &self.dims {
            out = out
                .into_iter()
                .flat_map(|p| {
                    labels.iter().map(move |l| {
                        let mut p = p.clone();
                        p.push(l.clone());
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// Column names for flattened output, e.g. `alpha[1,A,ChickenA]`.
    pub fn column_names(&self) -> Vec<String> {
        self.cell_labels()
            .into_iter()
            .map(|l| format!("{}[{}]", self.param, l.join(",")))
            .collect()
    }
}

fn raw_values(chain: &Chain, param: &str) -> Vec<f64> {
    match param {
        "alpha" => chain.alpha.clone(),
        "r" => chain.r.clone(),
        "q" => chain.q.clone(),
        "c" => chain.assignments.iter().map(|&c| f64::from(c)).collect(),
        "lambda_i" => chain.lambda_i.clone(),
        "lambda_j" => chain.lambda_j.clone(),
        "lambda_j_prop" => chain.lambda_j_prop.clone(),
        _ => unreachable!("checked by parameter_dims"),
    }
}

/// Extracts one parameter. Selectors on dimensions the parameter does not
/// have are still checked against the chain's labels but otherwise ignored.
pub fn extract(chain: &Chain, param: &str, sel: &Selector) -> Result<Extracted> {
    let dims = parameter_dims(param)?;
    let mut kept: Vec<(Dim, Vec<usize>)> = Vec::new();
    for dim in [Dim::Type, Dim::Source, Dim::Time, Dim::Location] {
        let labels = dim.labels(chain);
        let idx: Vec<usize> = match sel.filter(dim) {
            Some(wanted) => wanted
                .iter()
                .map(|w| {
                    labels
                        .iter()
                        .position(|l| l == w)
                        .ok_or_else(|| Error::UnknownLabel {
                            kind: dim.name(),
                            label: w.clone(),
                            valid: labels.join(", "),
                        })
                })
                .collect::<Result<_>>()?,
            None => (0..labels.len()).collect(),
        };
        kept.push((dim, idx));
    }
    let pick = |d: Dim| &kept.iter().find(|(k, _)| *k == d).unwrap().1;
    let sizes: Vec<usize> = dims.iter().map(|d| d.labels(chain).len()).collect();
    let width: usize = sizes.iter().product();

    // flat source offsets of every retained cell
    let mut offsets = vec![0usize];
    for (pos, &d) in dims.iter().enumerate() {
        let stride: usize = sizes[pos + 1..].iter().product();
        offsets = offsets
            .into_iter()
            .flat_map(|o| pick(d).iter().map(move |&i| o + i * stride))
            .collect();
    }
    let range = sel.iterations.clone().unwrap_or(0..chain.n_samples);
    let range = range.start.min(chain.n_samples)..range.end.min(chain.n_samples);
    let raw = raw_values(chain, param);
    let mut values = Vec::with_capacity(range.len() * offsets.len());
    for s in range.clone() {
        values.extend(offsets.iter().map(|&o| raw[s * width + o]));
    }
    Ok(Extracted {
        param: param.to_string(),
        dims: dims
            .iter()
            .map(|&d| {
                let labels = d.labels(chain);
                (d, pick(d).iter().map(|&i| labels[i].clone()).collect())
            })
            .collect(),
        n_samples: range.len(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalMethod {
    Percentile,
    ChenShao,
}

impl IntervalMethod {
    pub fn name(self) -> &'static str {
        match self {
            IntervalMethod::Percentile => "percentile",
            IntervalMethod::ChenShao => "chen-shao",
        }
    }
}

impl std::str::FromStr for IntervalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "percentile" | "percentiles" => Ok(IntervalMethod::Percentile),
            "chen-shao" | "chenshao" | "chen_shao" => Ok(IntervalMethod::ChenShao),
            _ => Err(Error::UnsupportedMethod(s.to_string())),
        }
    }
}

/// Median and credible interval of one series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile interval `(alpha/2, 1 - alpha/2)` of sorted samples.
pub fn percentile_interval(sorted: &[f64], alpha: f64) -> (f64, f64) {
    (
        stats::quantile_sorted(sorted, alpha / 2.0),
        stats::quantile_sorted(sorted, 1.0 - alpha / 2.0),
    )
}

/// Shortest window of `ceil((1 - alpha) S)` consecutive sorted samples.
pub fn chen_shao_interval(sorted: &[f64], alpha: f64) -> (f64, f64) {
    let s = sorted.len();
    let w = (((1.0 - alpha) * s as f64).ceil() as usize).clamp(1, s);
    let mut best = 0;
    for start in 1..=s - w {
        if sorted[start + w - 1] - sorted[start] < sorted[best + w - 1] - sorted[best] {
            best = start;
        }
    }
    (sorted[best], sorted[best + w - 1])
}

fn check_level(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("{alpha} is not in (0, 1)")));
    }
    Ok(())
}

/// Summarises one series. The interval is widened to include the median in
/// the rare case (very large `alpha`) where the window would miss it.
pub fn summarize_series(samples: &[f64], alpha: f64, method: IntervalMethod) -> Result<Summary> {
    check_level(alpha)?;
    if samples.is_empty() {
        return Err(Error::validation("cannot summarise an empty sample"));
    }
    let sorted = stats::sorted(samples);
    let median = stats::quantile_sorted(&sorted, 0.5);
    let (lower, upper) = match method {
        IntervalMethod::Percentile => percentile_interval(&sorted, alpha),
        IntervalMethod::ChenShao => chen_shao_interval(&sorted, alpha),
    };
    Ok(Summary {
        median,
        lower: lower.min(median),
        upper: upper.max(median),
    })
}

/// Summaries of every cell of an extracted parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub param: String,
    pub dims: Vec<(Dim, Vec<String>)>,
    pub method: IntervalMethod,
    pub alpha: f64,
    pub rows: Vec<Summary>,
}

impl SummaryTable {
    /// CSV with one column per dimension then `median,lower,upper`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (d, _) in &self.dims {
            out.push_str(d.name());
            out.push(',');
        }
        out.push_str("median,lower,upper\n");
        let ex = Extracted {
            param: self.param.clone(),
            dims: self.dims.clone(),
            n_samples: 0,
            values: Vec::new(),
        };
        for (labels, row) in ex.cell_labels().iter().zip(&self.rows) {
            for l in labels {
                out.push_str(&csv_field(l));
                out.push(',');
            }
            let _ = writeln!(out, "{:?},{:?},{:?}", row.median, row.lower, row.upper);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn summarize(ex: &Extracted, alpha: f64, method: IntervalMethod) -> Result<SummaryTable> {
    check_level(alpha)?;
    if ex.n_samples == 0 {
        return Err(Error::validation(
            "cannot summarise a chain with no samples",
        ));
    }
    let rows = (0..ex.n_cells())
        .map(|c| summarize_series(&ex.series(c), alpha, method))
        .collect::<Result<_>>()?;
    Ok(SummaryTable {
        param: ex.param.clone(),
        dims: ex.dims.clone(),
        method,
        alpha,
        rows,
    })
}

/// Symmetric matrix of co-clustering mismatch frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub labels: Vec<String>,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
}

impl DissimilarityMatrix {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("type");
        for l in &self.labels {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for i in 0..self.n() {
            out.push_str(&csv_field(&self.labels[i]));
            for j in 0..self.n() {
                let _ = write!(out, ",{:?}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// `d(i, i')` from stored cluster labels, optionally over a sample range.
pub fn co_clustering_dissimilarity(chain: &Chain) -> Result<DissimilarityMatrix> {
    let n = chain.meta.n_types();
    let s_total = chain.n_samples;
    if s_total == 0 {
        return Err(Error::validation("chain has no samples"));
    }
    let mut mismatch = vec![0u64; n * n];
    for s in 0..s_total {
        let c = &chain.assignments[s * n..(s + 1) * n];
        for i in 0..n {
            for j in i + 1..n {
                if c[i] != c[j] {
                    mismatch[i * n + j] += 1;
                }
            }
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = mismatch[i * n + j] as f64 / s_total as f64;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DissimilarityMatrix {
        labels: chain.meta.types.clone(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            other => Err(Error::param(
                "linkage",
                format!("`{other}` is not one of average, complete, single"),
            )),
        }
    }
}

/// One agglomeration step. Nodes `0..n` are leaves, `n + k` is the node
/// created by merge `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

/// Agglomerative clustering of a dissimilarity matrix. Ties are broken by
/// the smallest (row, column) pair so the tree is deterministic.
pub fn hierarchical_clustering(d: &DissimilarityMatrix, linkage: Linkage) -> Dendrogram {
    let n = d.n();
    let mut dist = d.values.clone();
    let mut active: Vec<bool> = vec![true; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && dist[i * n + j] < best.0 {
                    best = (dist[i * n + j], i, j);
                }
            }
        }
        let (h, a, b) = best;
        merges.push(Merge {
            left: node[a],
            right: node[b],
            height: h,
            size: size[a] + size[b],
        });
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (da, db) = (dist[a * n + k], dist[b * n + k]);
            let v = match linkage {
                Linkage::Average => {
                    (da * size[a] as f64 + db * size[b] as f64) / (size[a] + size[b]) as f64
                }
                Linkage::Complete => da.max(db),
                Linkage::Single => da.min(db),
            };
            dist[a * n + k] = v;
            dist[k * n + a] = v;
        }
        active[b] = false;
        size[a] += size[b];
        node[a] = n + step;
    }
    Dendrogram {
        labels: d.labels.clone(),
        merges,
    }
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    fn root(&self) -> usize {
        if self.merges.is_empty() {
            0
        } else {
            self.n_leaves() + self.merges.len() - 1
        }
    }

    /// Leaves in the left-to-right order of the drawn tree.
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.n_leaves();
        if n == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![self.root()];
        while let Some(v) = stack.pop() {
            if v < n {
                out.push(v);
            } else {
                let m = self.merges[v - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out
    }

    /// Newick text with branch lengths from merge heights (halved, as in
    /// an ultrametric tree).
    pub fn newick(&self) -> String {
        let n = self.n_leaves();
        if n == 0 {
            return ";".into();
        }
        fn height(d: &Dendrogram, v: usize) -> f64 {
            if v < d.n_leaves() {
                0.0
            } else {
                d.merges[v - d.n_leaves()].height / 2.0
            }
        }
        fn rec(d: &Dendrogram, v: usize, out: &mut String) {
            let n = d.n_leaves();
            if v < n {
                out.push_str(&newick_label(&d.labels[v]));
                return;
            }
            let m = d.merges[v - n];
            let h = m.height / 2.0;
            out.push('(');
            rec(d, m.left, out);
            let _ = write!(out, ":{:?},", h - height(d, m.left));
            rec(d, m.right, out);
            let _ = write!(out, ":{:?})", h - height(d, m.right));
        }
        let mut out = String::new();
        rec(self, self.root(), &mut out);
        out.push(';');
        out
    }

    /// Flat clusters from applying every merge with height strictly below
    /// `height`. Labels are numbered by first leaf in index order.
    pub fn cut(&self, height: f64) -> Vec<usize> {
        let n = self.n_leaves();
        let mut parent: Vec<usize> = (0..n + self.merges.len()).collect();
        fn find(p: &mut [usize], mut v: usize) -> usize {
            while p[v] != v {
                p[v] = p[p[v]];
                v = p[v];
            }
            v
        }
        for (k, m) in self.merges.iter().enumerate() {
            if m.height < height {
                let (a, b) = (find(&mut parent, m.left), find(&mut parent, m.right));
                parent[a] = n + k;
                parent[b] = n + k;
            }
        }
        let mut map = BTreeMap::new();
        (0..n)
            .map(|i| {
                let root = find(&mut parent, i);
                let next = map.len();
                *map.entry(root).or_insert(next)
            })
            .collect()
    }
}

fn newick_label(s: &str) -> String {
    if s.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_string()
    }
}

/// Pearson correlation of two posterior series.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::validation(format!(
            "correlation needs two series of equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    stats::pearson(a, b).ok_or_else(|| {
        Error::Numeric("correlation is undefined because a series has zero variance".into())
    })
}

/// Correlation between the samples of two sources' `lambda_j` (or
/// `lambda_j_prop`) at one time and location.
pub fn pairwise_correlation(
    chain: &Chain,
    param: &str,
    source_a: &str,
    source_b: &str,
    time: &str,
    location: &str,
) -> Result<f64> {
    if param != "lambda_j" && param != "lambda_j_prop" {
        return Err(Error::param(
            "param",
            format!("`{param}` is not one of lambda_j, lambda_j_prop"),
        ));
    }
    let series = |src: &str| -> Result<Vec<f64>> {
        let sel = Selector {
            sources: Some(vec![src.to_string()]),
            times: Some(vec![time.to_string()]),
            locations: Some(vec![location.to_string()]),
            ..Selector::default()
        };
        Ok(extract(chain, param, &sel)?.values)
    };
    correlation(&series(source_a)?, &series(source_b)?)
}

/// Frequency of each active-cluster count across stored samples.
pub fn cluster_count_histogram(chain: &Chain) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &k in &chain.n_clusters {
        *h.entry(k as usize).or_insert(0) += 1;
    }
    h
}
