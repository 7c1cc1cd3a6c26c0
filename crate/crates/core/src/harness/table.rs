//! Sorted CSV tables with a crash journal.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one pipeline run (one trained representation).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobKey {
    pub config_hash: String,
    pub family: String,
    pub invertible: bool,
    /// Bit pattern of a non-negative alpha (orders like the value).
    pub alpha_bits: u64,
    pub ipm: String,
    pub seed: u64,
}

pub trait Record: Serialize + DeserializeOwned + Clone {
    fn job(&self) -> JobKey;
    /// Columns distinguishing records of the same job.
    fn cell(&self) -> Vec<String>;
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidDataset(format!("{}: {other:?}", path.display())),
    }
}

/// Reads a table; a missing file is empty. With `lenient`, rows that fail to
/// parse (a torn final line) are skipped.
pub fn load<R: Record>(path: &Path, lenient: bool) -> Result<Vec<R>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        match rec {
            Ok(r) => out.push(r),
            Err(e) if lenient => log::warn!("{}: skipping unreadable row ({e})", path.display()),
            Err(e) => return Err(csv_err(path, e)),
        }
    }
    Ok(out)
}

/// Sorts by job then cell and drops duplicates (the later record wins).
pub fn normalize<R: Record>(rows: Vec<R>) -> Vec<R> {
    let mut keyed: Vec<((JobKey, Vec<String>), usize, R)> =
        rows.into_iter().enumerate().map(|(i, r)| ((r.job(), r.cell()), i, r)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    keyed.dedup_by(|later, earlier| later.0 == earlier.0);
    keyed.into_iter().map(|(_, _, r)| r).collect()
}

/// Writes the table atomically (temp file then rename).
pub fn write<R: Record>(path: &Path, rows: &[R]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(|e| csv_err(&tmp, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| csv_err(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Append-only journal next to a table.
pub struct Journal {
    path: PathBuf,
}

impl Journal {
    pub fn for_table(table: &Path) -> Self {
        Journal {
            path: table.with_extension("journal.csv"),
        }
    }

    #[cfg(test)]
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<R: Record>(&self, rows: &[R]) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let fresh = !self.path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        for r in rows {
            w.serialize(r).map_err(|e| csv_err(&self.path, e))?;
        }
        w.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn load<R: Record>(&self) -> Result<Vec<R>> {
        load(&self.path, true)
    }

    pub fn remove(&self) -> Result<()> {
        if self.path.exists() {
            fs::remove_file(&self.path).map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }
}

/// Failed cell, recorded next to its NaN result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub config_hash: String,
    pub family: String,
    pub invertible: bool,
    pub alpha: f64,
    pub ipm: String,
    pub seed: u64,
    pub selector: String,
    pub loss: String,
    pub error: String,
}

impl Record for FailureRow {
    fn job(&self) -> JobKey {
        JobKey {
            config_hash: self.config_hash.clone(),
            family: self.family.clone(),
            invertible: self.invertible,
            alpha_bits: self.alpha.to_bits(),
            ipm: self.ipm.clone(),
            seed: self.seed,
        }
    }

    fn cell(&self) -> Vec<String> {
        vec![self.selector.clone(), self.loss.clone()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, loss: &str, err: &str) -> FailureRow {
        FailureRow {
            config_hash: "h".into(),
            family: "TARNet".into(),
            invertible: false,
            alpha: 0.0,
            ipm: "none".into(),
            seed,
            selector: "Phi".into(),
            loss: loss.into(),
            error: err.into(),
        }
    }

    #[test]
    fn normalize_sorts_and_keeps_latest() {
        let rows = vec![row(2, "R", "a"), row(1, "R", "b"), row(2, "R", "c"), row(1, "IVW", "d")];
        let out = normalize(rows);
        let got: Vec<(u64, &str, &str)> = out.iter().map(|r| (r.seed, r.loss.as_str(), r.error.as_str())).collect();
        assert_eq!(got, vec![(1, "IVW", "d"), (1, "R", "b"), (2, "R", "c")]);
    }

    #[test]
    fn journal_round_trip_tolerates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("t.csv");
        let j = Journal::for_table(&table);
        j.append(&[row(1, "R", "x")]).unwrap();
        j.append(&[row(2, "R", "y")]).unwrap();
        std::fs::OpenOptions::new()
            .append(true)
            .open(j.path())
            .and_then(|mut f| std::io::Write::write_all(&mut f, b"h,TARNet,fal"))
            .unwrap();
        let back: Vec<FailureRow> = j.load().unwrap();
        assert_eq!(back.len(), 2);
        write(&table, &back).unwrap();
        let again: Vec<FailureRow> = load(&table, false).unwrap();
        assert_eq!(again, back);
    }
}
