use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use halddp::baselines::{dutch_bootstrap, dutch_model, BootstrapOptions};
use halddp::chain::{Chain, PARAMETERS};
use halddp::data::{preprocess, Priors, SourcePrevalence, SurveillanceData};
use halddp::engine::{
    append_with_control, run_with_control, FitParams, Model, ModelOptions, Progress,
};
use halddp::io::{read_data_csv, read_prevalence_csv, write_data_csv, write_prevalence_csv};
use halddp::posterior::{
    co_clustering_dissimilarity, extract as extract_param, hierarchical_clustering, summarize,
    IntervalMethod, Linkage, Selector,
};
use halddp::samplers::SweepOrder;
use halddp::{stats, synthgen, Error, Result};

use crate::config::{self, ConfigFile, Manifest, RunConfig};
use crate::svg;
use crate::{
    AcceptanceArgs, AppendArgs, DutchArgs, ExtractArgs, FitArgs, HeatmapArgs, InputArgs,
    ReportArgs, SimulateArgs, SummaryArgs, OUT_DIR_ENV,
};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Output directory: flag, then configuration, then the environment, then
/// the working directory. Created if missing.
fn output_dir(flag: Option<&PathBuf>, cfg: Option<&ConfigFile>) -> Result<PathBuf> {
    let dir = flag
        .cloned()
        .or_else(|| cfg.and_then(|c| c.path_value("out_dir")))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn load_config(input: &InputArgs) -> Result<Option<ConfigFile>> {
    input.config.as_deref().map(ConfigFile::load).transpose()
}

fn input_path(flag: Option<&PathBuf>, cfg: Option<&ConfigFile>, key: &str) -> Result<PathBuf> {
    flag.cloned()
        .or_else(|| cfg.and_then(|c| c.path_value(key)))
        .ok_or_else(|| {
            Error::Validation(format!(
                "no {key} file given; use --{key} or `{key}` in the configuration"
            ))
        })
}

/// Checks a file against a digest recorded in a manifest.
fn check_digest(cfg: Option<&ConfigFile>, key: &str, path: &Path) -> Result<()> {
    if let Some(expected) = cfg.and_then(|c| c.raw(key)) {
        let actual = config::file_sha256(path)?;
        if actual != expected {
            return Err(Error::Validation(format!(
                "{} has SHA-256 {actual}, but the configuration expects {expected}",
                path.display()
            )));
        }
    }
    Ok(())
}

fn parse_with<T>(
    v: &str,
    what: &str,
    f: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<T> {
    f(v).map_err(|reason| Error::InvalidParameter {
        name: what.to_string(),
        reason,
    })
}

fn interval_method(name: &str) -> Result<IntervalMethod> {
    name.parse()
}

fn run_config(a: &FitArgs, cfg: Option<&ConfigFile>) -> Result<RunConfig> {
    let raw = |key: &str| cfg.and_then(|c| c.raw(key)).map(String::from);
    macro_rules! pick {
        ($flag:expr, $key:expr, $default:expr) => {
            match $flag {
                Some(v) => v,
                None => match cfg {
                    Some(c) => c.get($key)?.unwrap_or($default),
                    None => $default,
                },
            }
        };
    }
    let defaults = Priors::default();
    let data = input_path(a.input.data.as_ref(), cfg, "data")?;
    let prevalence = input_path(a.input.prevalence.as_ref(), cfg, "prevalence")?;
    let seed = match a.seed {
        Some(s) => s,
        None => cfg
            .map(|c| c.get::<u64>("seed"))
            .transpose()?
            .flatten()
            .ok_or_else(|| {
                Error::Validation(
                    "a seed is required: pass --seed or set `seed` in the configuration".into(),
                )
            })?,
    };
    let a_alpha = match &a.a_alpha {
        Some(v) => parse_with(v, "a_alpha", config::parse_concentration)?,
        None => cfg
            .map(|c| c.concentration("a_alpha"))
            .transpose()?
            .flatten()
            .unwrap_or(defaults.a_alpha.clone()),
    };
    let a_r = match &a.a_r {
        Some(v) => parse_with(v, "a_r", config::parse_concentration)?,
        None => cfg
            .map(|c| c.concentration("a_r"))
            .transpose()?
            .flatten()
            .unwrap_or(defaults.a_r.clone()),
    };
    let sweep_order = match a.sweep_order.clone().or(raw("sweep_order")) {
        Some(v) => parse_with(&v, "sweep_order", config::parse_sweep_order)?,
        None => SweepOrder::default(),
    };
    let interval = match raw("interval") {
        Some(v) => interval_method(&v)?,
        None => IntervalMethod::Percentile,
    };
    let fixed_r = a.fixed_r || pick!(None, "fixed_r", false);
    Ok(RunConfig {
        data,
        prevalence,
        out_dir: output_dir(a.out.as_ref(), cfg)?,
        priors: Priors {
            a_theta: pick!(a.a_theta, "a_theta", defaults.a_theta),
            b_theta: pick!(a.b_theta, "b_theta", defaults.b_theta),
            a_alpha,
            a_r,
            a_q: pick!(a.a_q, "a_q", defaults.a_q),
        },
        seed,
        n_iter: pick!(a.n_iter, "n_iter", 1000),
        burn_in: pick!(a.burn_in, "burn_in", 10_000),
        thin: pick!(a.thin, "thin", 500),
        chains: pick!(a.chains, "chains", 1),
        fixed_r,
        sweep_order,
        interval,
        ci_alpha: pick!(None, "ci_alpha", 0.05),
    })
}

/// Set by Ctrl-C; samplers stop at the next iteration.
fn interrupt_flag() -> Arc<AtomicBool> {
    static FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        // a handler may already be installed (e.g. in tests); then Ctrl-C
        // keeps its default behaviour
        let _ = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst));
        flag
    })
    .clone()
}

/// Progress reporter that prints roughly every 5% of a run.
fn progress(label: String, quiet: bool, stop: Arc<AtomicBool>) -> impl FnMut(&Progress) -> bool {
    let start = Instant::now();
    let mut next = 0u64;
    move |p: &Progress| {
        if !quiet && p.iteration >= next {
            let pct = 100.0 * p.iteration as f64 / p.total.max(1) as f64;
            eprintln!(
                "{label}iteration {}/{} ({pct:.0}%), {} stored, {:.0}s",
                p.iteration,
                p.total,
                p.stored,
                start.elapsed().as_secs_f64()
            );
            next = p.iteration + (p.total / 20).max(1);
        }
        !stop.load(Ordering::SeqCst)
    }
}

fn read_inputs(data: &Path, prevalence: &Path) -> Result<(SurveillanceData, SourcePrevalence)> {
    let raw = read_data_csv(data)?;
    let prev = read_prevalence_csv(prevalence, &raw)?;
    Ok((raw, prev))
}

fn write_acceptance(chain: &Chain, mut w: impl Write, path: &Path) -> Result<()> {
    let mut out = String::from("parameter,time,location,source,type,accepted,proposed,rate\n");
    for row in chain.acceptance() {
        let l = &row.labels;
        let (time, location, source, ty) = match row.parameter {
            "alpha" => (&l[0], &l[1], &l[2], ""),
            _ => (&l[1], &String::new(), &l[0], l[2].as_str()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:?}\n",
            row.parameter,
            csv_field(time),
            csv_field(location),
            csv_field(source),
            csv_field(ty),
            row.accepted,
            row.proposed,
            row.rate
        ));
    }
    w.write_all(out.as_bytes()).map_err(io_err(path))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn fit(a: FitArgs) -> Result<()> {
    let cfg = load_config(&a.input)?;
    let rc = run_config(&a, cfg.as_ref())?;
    if rc.chains == 0 {
        return Err(Error::InvalidParameter {
            name: "chains".into(),
            reason: "must be at least 1".into(),
        });
    }
    check_digest(cfg.as_ref(), "data_sha256", &rc.data)?;
    check_digest(cfg.as_ref(), "prevalence_sha256", &rc.prevalence)?;
    let (raw, prevalence) = read_inputs(&rc.data, &rc.prevalence)?;
    let pre = preprocess(&raw)?;
    if !pre.removed.is_empty() && !a.quiet {
        eprintln!(
            "preprocessing removed {} type(s) with no source isolates: {}",
            pre.removed.len(),
            pre.removed.join(", ")
        );
    }
    let options = ModelOptions {
        fixed_r: rc.fixed_r,
        sweep_order: rc.sweep_order,
    };
    let model = Model::new(pre.data, prevalence, rc.priors.clone(), options)?;
    let data_sha256 = config::file_sha256(&rc.data)?;
    let prevalence_sha256 = config::file_sha256(&rc.prevalence)?;
    let stop = interrupt_flag();

    let chains: Vec<Result<Chain>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..rc.chains)
            .map(|c| {
                let params = FitParams {
                    n_iter: rc.n_iter,
                    burn_in: rc.burn_in,
                    thin: rc.thin,
                    seed: rc.seed.wrapping_add(c as u64),
                };
                let label = if rc.chains > 1 {
                    format!("chain {}: ", c + 1)
                } else {
                    String::new()
                };
                let control = progress(label, a.quiet, stop.clone());
                let model = &model;
                scope.spawn(move || run_with_control(model, &params, None, control))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    });

    for (c, chain) in chains.into_iter().enumerate() {
        let chain = chain?;
        let suffix = if rc.chains > 1 {
            format!("-{}", c + 1)
        } else {
            String::new()
        };
        let chain_path = rc.out_dir.join(format!("chain{suffix}.hdp"));
        chain.save(&chain_path)?;
        let acc_path = rc.out_dir.join(format!("acceptance{suffix}.csv"));
        let file = std::fs::File::create(&acc_path).map_err(io_err(&acc_path))?;
        write_acceptance(&chain, file, &acc_path)?;
        // absolute paths so the manifest works from any directory
        let absolute = |p: &Path| std::fs::canonicalize(p).map_err(io_err(p));
        let single = RunConfig {
            data: absolute(&rc.data)?,
            prevalence: absolute(&rc.prevalence)?,
            out_dir: absolute(&rc.out_dir)?,
            seed: chain.meta.seed,
            chains: 1,
            ..rc.clone()
        };
        let manifest = Manifest {
            config: &single,
            data_sha256: data_sha256.clone(),
            prevalence_sha256: prevalence_sha256.clone(),
            removed_types: pre.removed.clone(),
        };
        write_file(
            &rc.out_dir.join(format!("manifest{suffix}.txt")),
            manifest.render(),
        )?;
        if !a.quiet {
            eprintln!(
                "wrote {} ({} samples)",
                chain_path.display(),
                chain.n_samples
            );
        }
        if chain.n_samples < rc.n_iter {
            return Err(Error::Numeric(format!(
                "interrupted: {} holds {} of {} samples; continue it with `halddp append`",
                chain_path.display(),
                chain.n_samples,
                rc.n_iter
            )));
        }
    }
    Ok(())
}

pub fn append(a: AppendArgs) -> Result<()> {
    let cfg = load_config(&a.input)?;
    let data_path = input_path(a.input.data.as_ref(), cfg.as_ref(), "data")?;
    let prev_path = input_path(a.input.prevalence.as_ref(), cfg.as_ref(), "prevalence")?;
    let mut chain = Chain::load(&a.chain)?;
    let (raw, prevalence) = read_inputs(&data_path, &prev_path)?;
    let pre = preprocess(&raw)?;
    let model = Model::new(
        pre.data,
        prevalence,
        chain.meta.priors.clone(),
        chain.meta.options,
    )?;
    let before = chain.n_samples;
    let control = progress(String::new(), a.quiet, interrupt_flag());
    append_with_control(&model, &mut chain, a.n_iter, control)?;
    let out = a.output.unwrap_or(a.chain);
    // write beside the target first so a failed write leaves the old chain intact
    let tmp = out.with_extension("hdp.tmp");
    chain.save(&tmp)?;
    std::fs::rename(&tmp, &out).map_err(io_err(&out))?;
    if !a.quiet {
        eprintln!("wrote {} ({} samples)", out.display(), chain.n_samples);
    }
    if chain.n_samples < before + a.n_iter {
        return Err(Error::Numeric(format!(
            "interrupted after {} of {} extra samples",
            chain.n_samples - before,
            a.n_iter
        )));
    }
    Ok(())
}

fn default_params() -> Vec<String> {
    PARAMETERS
        .iter()
        .filter(|p| **p != "c")
        .map(|p| p.to_string())
        .collect()
}

fn write_summaries(
    chain: &Chain,
    params: &[String],
    method: IntervalMethod,
    alpha: f64,
    dir: &Path,
) -> Result<()> {
    for p in params {
        let ex = extract_param(chain, p, &Selector::default())?;
        let table = summarize(&ex, alpha, method)?;
        write_file(&dir.join(format!("summary_{p}.csv")), table.to_csv())?;
    }
    Ok(())
}

pub fn summary(a: SummaryArgs) -> Result<()> {
    let chain = Chain::load(&a.chain)?;
    let method = interval_method(&a.interval.interval)?;
    let params = if a.param.is_empty() {
        default_params()
    } else {
        a.param
    };
    let dir = output_dir(a.out.as_ref(), None)?;
    write_summaries(&chain, &params, method, a.interval.ci_alpha, &dir)
}

fn non_empty(v: Vec<String>) -> Option<Vec<String>> {
    (!v.is_empty()).then_some(v)
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let chain = Chain::load(&a.chain)?;
    let from = a.from.unwrap_or(1).max(1) - 1;
    let to = a.to.unwrap_or(chain.n_samples);
    let sel = Selector {
        types: non_empty(a.types),
        sources: non_empty(a.sources),
        times: non_empty(a.times),
        locations: non_empty(a.locations),
        iterations: Some(from..to.max(from)),
    };
    let ex = extract_param(&chain, &a.param, &sel)?;
    let mut out = String::from("sample");
    for name in ex.column_names() {
        out.push(',');
        out.push_str(&csv_field(&name));
    }
    out.push('\n');
    let w = ex.n_cells();
    for s in 0..ex.n_samples {
        out.push_str(&(from + s + 1).to_string());
        for v in &ex.values[s * w..(s + 1) * w] {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    match a.output {
        Some(p) => write_file(&p, out),
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn write_heatmap(
    chain: &Chain,
    linkage: Linkage,
    dir: &Path,
) -> Result<(
    halddp::posterior::DissimilarityMatrix,
    halddp::posterior::Dendrogram,
)> {
    let d = co_clustering_dissimilarity(chain)?;
    let tree = hierarchical_clustering(&d, linkage);
    write_file(&dir.join("dissimilarity.csv"), d.to_csv())?;
    write_file(&dir.join("dendrogram.nwk"), format!("{}\n", tree.newick()))?;
    write_file(&dir.join("heatmap.svg"), svg::heatmap(&d, &tree))?;
    Ok((d, tree))
}

pub fn heatmap(a: HeatmapArgs) -> Result<()> {
    let chain = Chain::load(&a.chain)?;
    let linkage: Linkage = a.linkage.parse()?;
    let dir = output_dir(a.out.as_ref(), None)?;
    let (d, tree) = write_heatmap(&chain, linkage, &dir)?;
    if let Some(h) = a.cut {
        let cut = tree.cut(h);
        let mut out = String::from("type,cluster\n");
        for (label, c) in d.labels.iter().zip(cut) {
            out.push_str(&format!("{},{}\n", csv_field(label), c + 1));
        }
        write_file(&dir.join("clusters.csv"), out)?;
    }
    Ok(())
}

pub fn dutch(a: DutchArgs) -> Result<()> {
    let cfg = load_config(&a.input)?;
    let data_path = input_path(a.input.data.as_ref(), cfg.as_ref(), "data")?;
    let raw = read_data_csv(&data_path)?;
    let data = preprocess(&raw)?.data;
    let result = if a.replicates == 0 {
        dutch_model(&data)?
    } else {
        let opts = BootstrapOptions {
            replicates: a.replicates,
            resample_humans: !a.no_resample_humans,
            resample_sources: !a.no_resample_sources,
            alpha: a.ci_alpha,
        };
        dutch_bootstrap(&data, &opts, a.seed)?
    };
    let unattributed: f64 = result.unattributed.iter().sum();
    if unattributed > 0.0 {
        eprintln!(
            "warning: {unattributed} cases belong to types with no source isolates at their time \
             and are not attributed"
        );
    }
    let path = match a.output {
        Some(p) => p,
        None => output_dir(a.out.as_ref(), cfg.as_ref())?.join("dutch.csv"),
    };
    write_file(&path, result.to_csv())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let sim = match a.preset.as_str() {
        "example" => synthgen::example_with_seed(a.seed.unwrap_or(synthgen::EXAMPLE_SEED))?,
        "campy" => {
            if a.seed.is_some() {
                return Err(Error::Validation(
                    "the campy preset has a fixed seed".into(),
                ));
            }
            synthgen::campy_reconstruction()?
        }
        other => {
            return Err(Error::UnknownLabel {
                kind: "preset",
                label: other.to_string(),
                valid: "example, campy".into(),
            })
        }
    };
    let dir = output_dir(a.out.as_ref(), None)?;
    write_data_csv(&sim.data, dir.join("data.csv"))?;
    write_prevalence_csv(&sim.prevalence, &sim.data, dir.join("prevalence.csv"))?;
    let path = dir.join("truth.csv");
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    sim.truth.write_csv(file)
}

pub fn acceptance(a: AcceptanceArgs) -> Result<()> {
    let chain = Chain::load(&a.chain)?;
    match a.output {
        Some(p) => {
            let file = std::fs::File::create(&p).map_err(io_err(&p))?;
            write_acceptance(&chain, file, &p)
        }
        None => write_acceptance(&chain, std::io::stdout(), Path::new("<stdout>")),
    }
}

/// Turns `dimension=label` filters into a selector.
fn selector(filters: &[String]) -> Result<Selector> {
    let mut sel = Selector::default();
    for f in filters {
        let Some((dim, label)) = f.split_once('=') else {
            return Err(Error::Validation(format!(
                "filter `{f}` is not dimension=label"
            )));
        };
        let slot = match dim {
            "type" => &mut sel.types,
            "source" => &mut sel.sources,
            "time" => &mut sel.times,
            "location" => &mut sel.locations,
            _ => {
                return Err(Error::UnknownLabel {
                    kind: "dimension",
                    label: dim.to_string(),
                    valid: "type, source, time, location".into(),
                })
            }
        };
        slot.get_or_insert_with(Vec::new).push(label.to_string());
    }
    Ok(sel)
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn read_dutch(path: &Path) -> Result<Vec<(String, String, String, f64, f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let bad = |msg: String| Error::Csv {
            path: path.to_path_buf(),
            message: format!("line {}: {msg}", n + 2),
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", rec.len())));
        }
        let num = |k: usize| {
            rec[k]
                .parse::<f64>()
                .map_err(|_| bad(format!("`{}` is not a number", &rec[k])))
        };
        rows.push((
            rec[0].to_string(),
            rec[1].to_string(),
            rec[2].to_string(),
            num(3)?,
            num(4)?,
            num(5)?,
        ));
    }
    Ok(rows)
}

pub fn report(a: ReportArgs) -> Result<()> {
    let chain = Chain::load(&a.chain)?;
    let method = interval_method(&a.interval.interval)?;
    let linkage: Linkage = a.linkage.parse()?;
    let dir = output_dir(a.out.as_ref(), None)?;
    let m = &chain.meta;

    write_summaries(&chain, &default_params(), method, a.interval.ci_alpha, &dir)?;

    let sel = selector(&a.select)?;
    for p in &a.trace {
        let ex = extract_param(&chain, p, &sel)?;
        for (cell, labels) in ex.cell_labels().into_iter().enumerate().take(a.max_cells) {
            let series = ex.series(cell);
            let title = format!("{p}[{}]", labels.join(", "));
            let stem = file_stem(&format!("{p}_{}", labels.join("_")));
            write_file(
                &dir.join(format!("trace_{stem}.svg")),
                svg::trace(&title, &series),
            )?;
            let lags = a.lags.min(series.len().saturating_sub(1));
            let acf = stats::autocorrelation(&series, lags);
            write_file(
                &dir.join(format!("acf_{stem}.svg")),
                svg::acf(&title, &acf, series.len()),
            )?;
        }
    }

    let observed = match &a.data {
        Some(p) => Some(read_data_csv(p)?),
        None => None,
    };
    let lambda_i = extract_param(&chain, "lambda_i", &Selector::default())?;
    let lambda_j = extract_param(&chain, "lambda_j", &Selector::default())?;
    let (nt, nl) = (m.n_times(), m.n_locations());
    for t in 0..nt {
        for l in 0..nl {
            let types: Vec<svg::Violin> = (0..m.n_types())
                .map(|i| {
                    let obs = observed.as_ref().and_then(|d| {
                        let di = d.types.iter().position(|x| *x == m.types[i])?;
                        let dt = d.times.iter().position(|x| *x == m.times[t])?;
                        let dl = d.locations.iter().position(|x| *x == m.locations[l])?;
                        Some(d.y_at(di, dt, dl) as f64)
                    });
                    svg::Violin {
                        label: m.types[i].clone(),
                        samples: lambda_i.series((i * nt + t) * nl + l),
                        observed: obs,
                    }
                })
                .collect();
            let sources: Vec<svg::Violin> = (0..m.n_sources())
                .map(|j| svg::Violin {
                    label: m.sources[j].clone(),
                    samples: lambda_j.series((j * nt + t) * nl + l),
                    observed: None,
                })
                .collect();
            let tag = file_stem(&format!("{}_{}", m.times[t], m.locations[l]));
            let when = format!("time {}, location {}", m.times[t], m.locations[l]);
            write_file(
                &dir.join(format!("violin_lambda_i_{tag}.svg")),
                svg::violin(
                    &format!("Expected cases per type ({when})"),
                    "cases",
                    &types,
                ),
            )?;
            write_file(
                &dir.join(format!("violin_lambda_j_{tag}.svg")),
                svg::violin(
                    &format!("Expected cases per source ({when})"),
                    "cases",
                    &sources,
                ),
            )?;
        }
    }

    write_heatmap(&chain, linkage, &dir)?;

    if let Some(path) = &a.dutch {
        let rows = read_dutch(path)?;
        let props = summarize(
            &extract_param(&chain, "lambda_j_prop", &Selector::default())?,
            a.interval.ci_alpha,
            method,
        )?;
        for t in 0..nt {
            for l in 0..nl {
                let at = |r: &&(String, String, String, f64, f64, f64)| {
                    r.1 == m.times[t] && r.2 == m.locations[l]
                };
                let total: f64 = rows.iter().filter(at).map(|r| r.3).sum();
                let mut hald = Vec::new();
                let mut dutch = Vec::new();
                for j in 0..m.n_sources() {
                    let s = &props.rows[(j * nt + t) * nl + l];
                    hald.push(svg::IntervalBar {
                        value: s.median,
                        lower: s.lower,
                        upper: s.upper,
                    });
                    let row = rows
                        .iter()
                        .filter(at)
                        .find(|r| r.0 == m.sources[j])
                        .ok_or_else(|| {
                            Error::Validation(format!(
                                "{}: no row for source `{}` at time `{}`, location `{}`",
                                path.display(),
                                m.sources[j],
                                m.times[t],
                                m.locations[l]
                            ))
                        })?;
                    dutch.push(svg::IntervalBar {
                        value: row.3 / total,
                        lower: row.4 / total,
                        upper: row.5 / total,
                    });
                }
                let tag = file_stem(&format!("{}_{}", m.times[t], m.locations[l]));
                write_file(
                    &dir.join(format!("proportions_{tag}.svg")),
                    svg::grouped_intervals(
                        &format!(
                            "Proportion of cases per source (time {}, location {})",
                            m.times[t], m.locations[l]
                        ),
                        "proportion of cases",
                        &m.sources,
                        &[("HaldDP", hald), ("Dutch", dutch)],
                    ),
                )?;
            }
        }
    }
    Ok(())
}
