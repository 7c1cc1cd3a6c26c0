use std::fs::File;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{build_oracle, Dataset, OracleDataset};
use crate::error::{Error, Result};

/// Result of reading a benchmark CSV.
#[derive(Clone, Debug, PartialEq)]
pub enum Loaded {
    Plain(Dataset),
    Oracle(OracleDataset),
}

impl Loaded {
    pub fn dataset(&self) -> &Dataset {
        match self {
            Loaded::Plain(d) => d,
            Loaded::Oracle(o) => &o.base,
        }
    }
}

const ORACLE_COLUMNS: [&str; 5] = ["mu0", "mu1", "pi1", "y0", "y1"];

/// Reads `x_0..x_{d-1}, a, y` plus optional oracle columns. Rows are numbered
/// from 1 (the first line after the header) in error messages.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let mut x_cols = Vec::new();
    while let Some(j) = find(&format!("x_{}", x_cols.len())) {
        x_cols.push(j);
    }
    if x_cols.is_empty() {
        return Err(Error::MissingColumn("x_0".into()));
    }
    let a_col = find("a").ok_or_else(|| Error::MissingColumn("a".into()))?;
    let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
    let oracle_cols: Vec<Option<usize>> = ORACLE_COLUMNS.iter().map(|c| find(c)).collect();
    let has_oracle = oracle_cols.iter().all(Option::is_some);

    let d = x_cols.len();
    let mut xs = Vec::new();
    let (mut a, mut y) = (Vec::new(), Vec::new());
    let mut extra: Vec<Vec<f64>> = vec![Vec::new(); ORACLE_COLUMNS.len()];

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let parse = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::NonFiniteValue {
                    row,
                    column: name.to_string(),
                }),
            }
        };
        for (k, &j) in x_cols.iter().enumerate() {
            xs.push(parse(j, &format!("x_{k}"))?);
        }
        let raw_a = record.get(a_col).unwrap_or("").trim();
        let t = match raw_a.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => v,
            _ => {
                return Err(Error::NonBinaryTreatment {
                    row,
                    value: raw_a.to_string(),
                })
            }
        };
        a.push(t);
        y.push(parse(y_col, "y")?);
        if has_oracle {
            for (k, col) in oracle_cols.iter().enumerate() {
                extra[k].push(parse(col.expect("checked"), ORACLE_COLUMNS[k])?);
            }
        }
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::InvalidDataset(format!("{} has no data rows", path.display())));
    }
    let x = Array2::from_shape_vec((n, d), xs).expect("row-major fill");
    if !has_oracle {
        return Ok(Loaded::Plain(Dataset::new(x, Array1::from(a), Array1::from(y))?));
    }
    let [mu0, mu1, pi1, y0, y1]: [Vec<f64>; 5] = extra.try_into().expect("five oracle columns");
    if let Some(row) = pi1.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidDataset(format!(
            "pi1 must lie in (0, 1); row {} has {}",
            row + 1,
            pi1[row]
        )));
    }
    let observed = Array1::from(y);
    let mut oracle = build_oracle(x, a, mu0, mu1, pi1, y0, y1, None);
    // keep the file's y column; consistency with y0/y1 is the writer's responsibility
    oracle.base.y = observed;
    Ok(Loaded::Oracle(oracle))
}

/// Writes an oracle dataset with every column `load_csv` understands (plus `tau`).
pub fn write_csv(data: &OracleDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let d = data.base.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
    header.extend(
        ["a", "y", "mu0", "mu1", "pi1", "tau", "y0", "y1"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.base.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(format!("{}", data.base.a[i] as u8));
        for v in [
            data.base.y[i],
            data.mu0[i],
            data.mu1[i],
            data.pi1[i],
            data.tau[i],
            data.y0[i],
            data.y1[i],
        ] {
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
