use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Coefficients, DataError, GenConfig, Latent, OracleDecisionSet, PanelDataset, Result, TreatmentKind};

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => DataError::Parse {
            line,
            column: String::new(),
            msg: format!("ragged row: {len} fields, header has {expected_len}"),
        },
        other => DataError::Parse {
            line,
            column: String::new(),
            msg: format!("{other:?}"),
        },
    }
}

/// 17 significant digits: parses back to the same `f64`.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_columns(header: &mut Vec<String>, prefix: &str, n: usize) {
    header.extend((0..n).map(|i| format!("{prefix}{i}")));
}

/// Writes `unit,t,x0..,a0..,y` rows, plus `z*,c*,u*` when `with_latent` is set
/// and the panel carries latents.
pub fn save_panel(ds: &PanelDataset, path: &Path, with_latent: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let latent = ds.latent.as_ref().filter(|_| with_latent);
    let mut header = vec!["unit".to_string(), "t".to_string()];
    push_columns(&mut header, "x", ds.x_dim);
    push_columns(&mut header, "a", ds.a_dim);
    header.push("y".into());
    if let Some(l) = latent {
        push_columns(&mut header, "z", l.z_dim);
        push_columns(&mut header, "c", l.c_dim);
        push_columns(&mut header, "u", l.u_dim);
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for u in 0..ds.n {
        for t in 0..ds.len {
            rec.clear();
            rec.push(u.to_string());
            rec.push(t.to_string());
            rec.extend(ds.x_at(u, t).iter().map(|&v| fmt(v)));
            rec.extend(ds.a_at(u, t).iter().map(|&v| fmt(v)));
            rec.push(fmt(ds.y_at(u, t)));
            if let Some(l) = latent {
                let row = u * ds.len + t;
                for (block, d) in [(&l.z, l.z_dim), (&l.c, l.c_dim), (&l.u, l.u_dim)] {
                    rec.extend(block[row * d..(row + 1) * d].iter().map(|&v| fmt(v)));
                }
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Positions of `{prefix}0, {prefix}1, …` in the header.
fn indexed_columns(header: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut out = Vec::new();
    while let Some(pos) = header.iter().position(|h| h == format!("{prefix}{}", out.len())) {
        out.push(pos);
    }
    out
}

fn require(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn parse_cell(rec: &csv::StringRecord, idx: usize, header: &csv::StringRecord, line: usize) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or("");
    raw.trim().parse::<f64>().map_err(|_| DataError::Parse {
        line,
        column: header.get(idx).unwrap_or("?").to_string(),
        msg: format!("`{raw}` is not a number"),
    })
}

fn parse_index(rec: &csv::StringRecord, idx: usize, header: &csv::StringRecord, line: usize) -> Result<usize> {
    let raw = rec.get(idx).unwrap_or("");
    raw.trim().parse::<usize>().map_err(|_| DataError::Parse {
        line,
        column: header.get(idx).unwrap_or("?").to_string(),
        msg: format!("`{raw}` is not a non-negative integer"),
    })
}

/// Reads a long-format panel. Rows must be grouped by unit (0, 1, …) with
/// `t = 0..T` in order and the same `T` for every unit.
pub fn load_panel(path: &Path) -> Result<PanelDataset> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let unit_col = require(&header, "unit")?;
    let t_col = require(&header, "t")?;
    let x_cols = indexed_columns(&header, "x");
    let a_cols = indexed_columns(&header, "a");
    if x_cols.is_empty() {
        return Err(DataError::MissingColumn("x0".into()));
    }
    if a_cols.is_empty() {
        return Err(DataError::MissingColumn("a0".into()));
    }
    let y_col = require(&header, "y")?;
    let z_cols = indexed_columns(&header, "z");
    let c_cols = indexed_columns(&header, "c");
    let u_cols = indexed_columns(&header, "u");
    let has_latent = !z_cols.is_empty() || !c_cols.is_empty() || !u_cols.is_empty();
    if has_latent && (z_cols.is_empty() || c_cols.is_empty() || u_cols.is_empty()) {
        return Err(DataError::Schema(
            "latent columns must include all of z*, c*, u*".into(),
        ));
    }

    let (mut x, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let (mut z, mut c, mut u) = (Vec::new(), Vec::new(), Vec::new());
    let mut len: Option<usize> = None;
    let (mut cur_unit, mut cur_t, mut n) = (0usize, 0usize, 0usize);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let unit = parse_index(&rec, unit_col, &header, line)?;
        let t = parse_index(&rec, t_col, &header, line)?;
        if t == 0 {
            if n > 0 {
                match len {
                    None => len = Some(cur_t + 1),
                    Some(l) if l != cur_t + 1 => {
                        return Err(DataError::Parse {
                            line,
                            column: "t".into(),
                            msg: format!("unit {cur_unit} has {} rows, expected {l}", cur_t + 1),
                        })
                    }
                    _ => {}
                }
            }
            if unit != n {
                return Err(DataError::Parse {
                    line,
                    column: "unit".into(),
                    msg: format!("expected unit {n}, found {unit}"),
                });
            }
            n += 1;
        } else if unit != cur_unit || t != cur_t + 1 {
            return Err(DataError::Parse {
                line,
                column: "t".into(),
                msg: format!("expected unit {cur_unit} row {}, found unit {unit} row {t}", cur_t + 1),
            });
        }
        cur_unit = unit;
        cur_t = t;
        for &ci in &x_cols {
            x.push(parse_cell(&rec, ci, &header, line)?);
        }
        for &ci in &a_cols {
            a.push(parse_cell(&rec, ci, &header, line)?);
        }
        y.push(parse_cell(&rec, y_col, &header, line)?);
        for (cols, block) in [(&z_cols, &mut z), (&c_cols, &mut c), (&u_cols, &mut u)] {
            for &ci in cols.iter() {
                block.push(parse_cell(&rec, ci, &header, line)?);
            }
        }
    }
    if n == 0 {
        return Err(DataError::Schema(format!("{} has no data rows", path.display())));
    }
    let len = match len {
        None => cur_t + 1,
        Some(l) if l == cur_t + 1 => l,
        Some(l) => {
            return Err(DataError::Schema(format!(
                "unit {cur_unit} has {} rows, expected {l}",
                cur_t + 1
            )))
        }
    };
    let treatment = if a.iter().all(|&v| v == 0.0 || v == 1.0) {
        TreatmentKind::Binary
    } else {
        TreatmentKind::Continuous
    };
    let ds = PanelDataset {
        n,
        len,
        x_dim: x_cols.len(),
        a_dim: a_cols.len(),
        x,
        a,
        y,
        treatment,
        latent: has_latent.then_some(Latent {
            z_dim: z_cols.len(),
            c_dim: c_cols.len(),
            u_dim: u_cols.len(),
            z,
            c,
            u,
        }),
    };
    ds.validate()?;
    Ok(ds)
}

/// `unit,best,oracle,y_b0..y_b{2^tau−1}`; the decision window bounds go in the metadata.
pub fn save_oracle(set: &OracleDecisionSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["unit".to_string(), "best".into(), "oracle".into()];
    push_columns(&mut header, "y_b", set.candidates());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, row) in set.outcomes.iter().enumerate() {
        let mut rec = vec![i.to_string(), set.best[i].to_string(), fmt(set.oracle[i])];
        rec.extend(row.iter().map(|&v| fmt(v)));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads an oracle table written by [`save_oracle`] and pairs it with its history panel.
pub fn load_oracle(path: &Path, history: PanelDataset, tau: usize, start: usize) -> Result<OracleDecisionSet> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    require(&header, "unit")?;
    let cols = indexed_columns(&header, "y_b");
    if cols.len() != 1 << tau {
        return Err(DataError::Schema(format!(
            "oracle table has {} candidate columns, expected {}",
            cols.len(),
            1usize << tau
        )));
    }
    let mut outcomes = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = cols
            .iter()
            .map(|&ci| parse_cell(&rec, ci, &header, i + 2))
            .collect::<Result<Vec<_>>>()?;
        outcomes.push(row);
    }
    if outcomes.len() != history.n {
        return Err(DataError::Schema(format!(
            "oracle table has {} units, history has {}",
            outcomes.len(),
            history.n
        )));
    }
    if start + tau > history.len || start == 0 {
        return Err(DataError::Schema(format!(
            "decision window {start}..{} does not fit {} rows",
            start + tau,
            history.len
        )));
    }
    let mut set = OracleDecisionSet {
        tau,
        start,
        history,
        outcomes,
        oracle: Vec::new(),
        best: Vec::new(),
    };
    set.recompute_oracle();
    Ok(set)
}

/// Companion document written next to generated CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub generator: GenConfig,
    pub coefficients: Coefficients,
    pub x_dim: usize,
    pub a_dim: usize,
    pub treatment: TreatmentKind,
    pub splits: Vec<SplitMeta>,
    /// Decision window (decision generator only).
    pub decision_start: Option<usize>,
    pub tau: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMeta {
    pub name: String,
    pub file: String,
    pub n: usize,
    pub rows: usize,
    pub treatment_rate: f64,
    pub y_mean: f64,
    pub y_std: f64,
}

impl SplitMeta {
    pub fn describe(name: &str, file: &str, ds: &PanelDataset) -> Self {
        let m = ds.y.iter().sum::<f64>() / ds.y.len() as f64;
        let v = ds.y.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / ds.y.len() as f64;
        SplitMeta {
            name: name.into(),
            file: file.into(),
            n: ds.n,
            rows: ds.len,
            treatment_rate: ds.treatment_rate(),
            y_mean: m,
            y_std: v.sqrt(),
        }
    }
}

impl DatasetMeta {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| io_err(path, e))?;
        let text = serde_json::to_string_pretty(self).expect("metadata serializes");
        f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
        f.write_all(b"\n").map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Parse {
            line: e.line(),
            column: String::new(),
            msg: e.to_string(),
        })
    }
}
