//! Long-format CSV input and output.
//!
//! Data files hold one row per (type, time, location):
//!
//! ```text
//! Human,ChickenA,Ovine,Type,Time,Location
//! 12,30,4,474,1,A
//! ```
//!
//! Every column other than `Human`, `Type`, `Time` and `Location` is a
//! source. `Time` and `Location` may be omitted, giving a single level named
//! `1` or `A`. Source counts belong to a (type, time) and must repeat
//! unchanged across the locations of that time. Missing combinations are
//! zero counts.
//!
//! Prevalence files hold `Value,Source,Time` with optional `Location`,
//! `Total` and `Positive` columns. With a `Location` column the value must
//! agree across locations.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::data::{SourcePrevalence, SurveillanceData};
use crate::error::{Error, Result};

const RESERVED: [&str; 4] = ["Human", "Type", "Time", "Location"];

fn csv_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

struct Table {
    headers: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(reader: impl Read, path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_err(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { headers, rows })
}

fn column(table: &Table, name: &str, path: &Path) -> Result<usize> {
    table
        .headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| csv_err(path, format!("missing column `{name}`")))
}

fn parse_count(s: &str, line: usize, col: &str, path: &Path) -> Result<u64> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let reason = match s.parse::<f64>() {
        Ok(v) if v < 0.0 => "is negative",
        Ok(_) => "is not an integer",
        Err(_) => "is not a number",
    };
    Err(csv_err(
        path,
        format!("line {line}, column `{col}`: value `{s}` {reason}"),
    ))
}

fn intern(labels: &mut Vec<String>, index: &mut HashMap<String, usize>, label: &str) -> usize {
    *index.entry(label.to_string()).or_insert_with(|| {
        labels.push(label.to_string());
        labels.len() - 1
    })
}

/// Reads surveillance data from a long-format CSV file.
pub fn read_data_csv(path: impl AsRef<Path>) -> Result<SurveillanceData> {
    let path = path.as_ref();
    read_data(open(path)?, path)
}

/// Reads surveillance data from any reader; `path` is only used in messages.
pub fn read_data(reader: impl Read, path: &Path) -> Result<SurveillanceData> {
    let table = read_table(reader, path)?;
    let human = column(&table, "Human", path)?;
    let type_col = column(&table, "Type", path)?;
    let time_col = table.headers.iter().position(|h| h == "Time");
    let loc_col = table.headers.iter().position(|h| h == "Location");
    let source_cols: Vec<usize> = (0..table.headers.len())
        .filter(|&c| !RESERVED.contains(&table.headers[c].as_str()))
        .collect();
    if source_cols.is_empty() {
        return Err(csv_err(path, "no source columns"));
    }
    let sources: Vec<String> = source_cols
        .iter()
        .map(|&c| table.headers[c].clone())
        .collect();

    let (mut types, mut times, mut locations) = (Vec::new(), Vec::new(), Vec::new());
    let (mut ti, mut tti, mut li) = (HashMap::new(), HashMap::new(), HashMap::new());
    struct Row {
        line: usize,
        i: usize,
        t: usize,
        l: usize,
        y: u64,
        x: Vec<u64>,
    }
    let mut parsed = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let line = *line;
        let label = |c: usize, name: &str| -> Result<String> {
            let v = rec[c].clone();
            if v.is_empty() {
                return Err(csv_err(
                    path,
                    format!("line {line}, column `{name}`: empty label"),
                ));
            }
            Ok(v)
        };
        let i = intern(&mut types, &mut ti, &label(type_col, "Type")?);
        let t = match time_col {
            Some(c) => intern(&mut times, &mut tti, &label(c, "Time")?),
            None => intern(&mut times, &mut tti, "1"),
        };
        let l = match loc_col {
            Some(c) => intern(&mut locations, &mut li, &label(c, "Location")?),
            None => intern(&mut locations, &mut li, "A"),
        };
        let y = parse_count(&rec[human], line, "Human", path)?;
        let x = source_cols
            .iter()
            .map(|&c| parse_count(&rec[c], line, &table.headers[c], path))
            .collect::<Result<Vec<_>>>()?;
        parsed.push(Row {
            line,
            i,
            t,
            l,
            y,
            x,
        });
    }
    if parsed.is_empty() {
        return Err(csv_err(path, "no data rows"));
    }

    let (n, m, nt, nl) = (types.len(), sources.len(), times.len(), locations.len());
    let mut y = vec![0u64; n * nt * nl];
    let mut x = vec![0u64; n * m * nt];
    let mut seen_cell: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut source_row: HashMap<(usize, usize), usize> = HashMap::new();
    for (idx, row) in parsed.iter().enumerate() {
        if let Some(prev) = seen_cell.insert((row.i, row.t, row.l), row.line) {
            return Err(csv_err(
                path,
                format!(
                    "line {}: duplicate row for type `{}`, time `{}`, location `{}` (first at line {prev})",
                    row.line, types[row.i], times[row.t], locations[row.l]
                ),
            ));
        }
        y[(row.i * nt + row.t) * nl + row.l] = row.y;
        match source_row.get(&(row.i, row.t)) {
            Some(&first) => {
                let other = &parsed[first];
                if let Some(j) = (0..m).find(|&j| other.x[j] != row.x[j]) {
                    return Err(csv_err(
                        path,
                        format!(
                            "line {}, column `{}`: source count {} differs from {} at line {} \
                             (source counts must be identical across locations within a time)",
                            row.line, sources[j], row.x[j], other.x[j], other.line
                        ),
                    ));
                }
            }
            None => {
                source_row.insert((row.i, row.t), idx);
                for j in 0..m {
                    x[(row.i * m + j) * nt + row.t] = row.x[j];
                }
            }
        }
    }
    SurveillanceData::new(types, sources, times, locations, y, x)
}

/// Writes data in the long format read by [`read_data`]. Every
/// (type, time, location) gets a row.
pub fn write_data(data: &SurveillanceData, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Format(e.to_string());
    let mut header = vec!["Human".to_string()];
    header.extend(data.sources.iter().cloned());
    header.extend(["Type", "Time", "Location"].map(String::from));
    w.write_record(&header).map_err(err)?;
    for i in 0..data.n_types() {
        for t in 0..data.n_times() {
            for l in 0..data.n_locations() {
                let mut rec = vec![data.y_at(i, t, l).to_string()];
                rec.extend((0..data.n_sources()).map(|j| data.x_at(i, j, t).to_string()));
                rec.extend([
                    data.types[i].clone(),
                    data.times[t].clone(),
                    data.locations[l].clone(),
                ]);
                w.write_record(&rec).map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_data_csv(data: &SurveillanceData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_data(data, file)
}

/// Reads source prevalences for the sources and times of `data`.
pub fn read_prevalence_csv(
    path: impl AsRef<Path>,
    data: &SurveillanceData,
) -> Result<SourcePrevalence> {
    let path = path.as_ref();
    read_prevalence(open(path)?, path, data)
}

pub fn read_prevalence(
    reader: impl Read,
    path: &Path,
    data: &SurveillanceData,
) -> Result<SourcePrevalence> {
    let table = read_table(reader, path)?;
    let value_col = column(&table, "Value", path)?;
    let source_col = column(&table, "Source", path)?;
    let time_col = table.headers.iter().position(|h| h == "Time");
    let total_col = table.headers.iter().position(|h| h == "Total");
    let pos_col = table.headers.iter().position(|h| h == "Positive");
    if total_col.is_some() != pos_col.is_some() {
        return Err(csv_err(
            path,
            "columns `Total` and `Positive` must be given together",
        ));
    }
    let (m, nt) = (data.n_sources(), data.n_times());
    let mut k: Vec<Option<(f64, usize)>> = vec![None; m * nt];
    let mut totals = vec![0u64; m * nt];
    let mut positives = vec![0u64; m * nt];
    for (line, rec) in &table.rows {
        let line = *line;
        let source = &rec[source_col];
        let j = data.sources.iter().position(|s| s == source).ok_or_else(|| {
            csv_err(
                path,
                format!(
                    "line {line}, column `Source`: unknown source `{source}`; valid sources are: {}",
                    data.sources.join(", ")
                ),
            )
        })?;
        let t = match time_col {
            Some(c) => {
                let time = &rec[c];
                data.times.iter().position(|s| s == time).ok_or_else(|| {
                    csv_err(
                        path,
                        format!(
                            "line {line}, column `Time`: unknown time `{time}`; valid times are: {}",
                            data.times.join(", ")
                        ),
                    )
                })?
            }
            None if nt == 1 => 0,
            None => return Err(csv_err(path, "missing column `Time`")),
        };
        let raw = &rec[value_col];
        let v: f64 = raw.parse().map_err(|_| {
            csv_err(
                path,
                format!("line {line}, column `Value`: `{raw}` is not a number"),
            )
        })?;
        if !(0.0..=1.0).contains(&v) {
            return Err(csv_err(
                path,
                format!("line {line}, column `Value`: prevalence {v} is outside [0, 1]"),
            ));
        }
        let cell = j * nt + t;
        match k[cell] {
            Some((prev, first)) if prev != v => {
                return Err(csv_err(
                    path,
                    format!(
                        "line {line}: prevalence {v} for source `{source}`, time `{}` conflicts with {prev} at line {first}",
                        data.times[t]
                    ),
                ))
            }
            Some(_) => continue,
            None => k[cell] = Some((v, line)),
        }
        if let (Some(tc), Some(pc)) = (total_col, pos_col) {
            totals[cell] = parse_count(&rec[tc], line, "Total", path)?;
            positives[cell] = parse_count(&rec[pc], line, "Positive", path)?;
        }
    }
    let mut values = Vec::with_capacity(m * nt);
    for (cell, v) in k.iter().enumerate() {
        match v {
            Some((v, _)) => values.push(*v),
            None => {
                return Err(csv_err(
                    path,
                    format!(
                        "no prevalence for source `{}`, time `{}`",
                        data.sources[cell / nt],
                        data.times[cell % nt]
                    ),
                ))
            }
        }
    }
    let mut prev = SourcePrevalence::from_values(m, nt, values)?;
    if total_col.is_some() {
        prev.total_samples = Some(totals);
        prev.positive_samples = Some(positives);
    }
    Ok(prev)
}

/// Writes prevalences as `Value,Source,Time`, plus `Total,Positive` when
/// counts are known. Values use the shortest representation that parses
/// back to the same double.
pub fn write_prevalence(
    prev: &SourcePrevalence,
    data: &SurveillanceData,
    writer: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Format(e.to_string());
    let counts = prev
        .total_samples
        .as_ref()
        .zip(prev.positive_samples.as_ref());
    let mut header = vec!["Value", "Source", "Time"];
    if counts.is_some() {
        header.extend(["Total", "Positive"]);
    }
    w.write_record(&header).map_err(err)?;
    for j in 0..prev.n_sources {
        for t in 0..prev.n_times {
            let mut rec = vec![
                format!("{:?}", prev.at(j, t)),
                data.sources[j].clone(),
                data.times[t].clone(),
            ];
            if let Some((tot, pos)) = counts {
                rec.push(tot[j * prev.n_times + t].to_string());
                rec.push(pos[j * prev.n_times + t].to_string());
            }
            w.write_record(&rec).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_prevalence_csv(
    prev: &SourcePrevalence,
    data: &SurveillanceData,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_prevalence(prev, data, file)
}

/// A placeholder path for in-memory readers.
pub fn memory_path() -> PathBuf {
    PathBuf::from("<memory>")
}
