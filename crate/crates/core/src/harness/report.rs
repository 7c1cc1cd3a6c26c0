use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{BaselineRow, ResultRow, Setting};
use super::table::{self, JobKey, Record};
use crate::error::Result;
use crate::eval::Summary;

/// Mean and standard deviation over seeds of one result cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config_hash: String,
    pub family: String,
    pub invertible: bool,
    pub alpha: f64,
    pub ipm: String,
    pub selector: String,
    pub loss: String,
    pub quantity: String,
    pub metric_kind: String,
    pub value_mean: f64,
    pub value_std: f64,
    pub delta_mean: f64,
    pub delta_std: f64,
    pub n: usize,
    pub failed: usize,
}

impl Record for ReportRow {
    fn job(&self) -> JobKey {
        JobKey {
            config_hash: self.config_hash.clone(),
            family: self.family.clone(),
            invertible: self.invertible,
            alpha_bits: self.alpha.to_bits(),
            ipm: self.ipm.clone(),
            seed: 0,
        }
    }

    fn cell(&self) -> Vec<String> {
        vec![self.selector.clone(), self.loss.clone(), self.quantity.clone()]
    }
}

/// Aggregates rows over seeds; NaN (failed) cells are counted, not averaged.
pub fn summarize(rows: &[ResultRow]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(JobKey, Vec<String>), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let mut key = r.job();
        key.seed = 0;
        groups.entry((key, r.cell())).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let first = g[0];
            let ok: Vec<&ResultRow> = g.iter().copied().filter(|r| r.value.is_finite()).collect();
            let values: Vec<f64> = ok.iter().map(|r| r.value).collect();
            let deltas: Vec<f64> = ok.iter().map(|r| r.delta).collect();
            let nan = Summary {
                mean: f64::NAN,
                std: f64::NAN,
                n: 0,
            };
            let v = Summary::of(&values).unwrap_or(nan);
            let d = Summary::of(&deltas).unwrap_or(nan);
            ReportRow {
                config_hash: first.config_hash.clone(),
                family: first.family.clone(),
                invertible: first.invertible,
                alpha: first.alpha,
                ipm: first.ipm.clone(),
                selector: first.selector.clone(),
                loss: first.loss.clone(),
                quantity: first.quantity.clone(),
                metric_kind: first.metric_kind.clone(),
                value_mean: v.mean,
                value_std: v.std,
                delta_mean: d.mean,
                delta_std: d.std,
                n: v.n,
                failed: g.len() - ok.len(),
            }
        })
        .collect()
}

/// Plain-text table of a summary.
pub fn render(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:<11} {:>6} {:<5} {:<6} {:<8} {:<6} {:>17} {:>17} {:>3}",
        "config", "family", "alpha", "ipm", "input", "loss", "target", "metric", "delta", "n"
    );
    for r in rows {
        let fmt = |m: f64, sd: f64| format!("{m:.3} ± {sd:.3}");
        let _ = writeln!(
            s,
            "{:<12} {:<11} {:>6} {:<5} {:<6} {:<8} {:<6} {:>17} {:>17} {:>3}{}",
            r.config_hash,
            r.family,
            r.alpha,
            r.ipm,
            r.selector,
            r.loss,
            r.quantity,
            fmt(r.value_mean, r.value_std),
            fmt(r.delta_mean, r.delta_std),
            r.n,
            if r.failed > 0 { format!(" ({} failed)", r.failed) } else { String::new() }
        );
    }
    s
}

/// Summarizes every results table found in `dir`, writing `report.csv`.
pub fn report(dir: &Path) -> Result<(Vec<ReportRow>, String)> {
    let mut rows: Vec<ResultRow> = Vec::new();
    for setting in [Setting::One, Setting::Two] {
        rows.extend(table::load::<ResultRow>(&setting.results_path(dir), false)?);
        for b in table::load::<BaselineRow>(&setting.baselines_path(dir), false)? {
            rows.extend(b.as_result_rows());
        }
    }
    let summary = summarize(&rows);
    table::write(&dir.join("report.csv"), &summary)?;
    let text = render(&summary);
    Ok((summary, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_counts_failures_separately() {
        let mk = |seed: u64, value: f64| ResultRow {
            config_hash: "h".into(),
            family: "TARNet".into(),
            invertible: false,
            metric_kind: "rPEHE".into(),
            alpha: 0.0,
            ipm: "none".into(),
            selector: "Phi".into(),
            loss: "DRK".into(),
            seed,
            quantity: "CATE".into(),
            value,
            baseline_value: 1.0,
            delta: value - 1.0,
        };
        let s = summarize(&[mk(0, 0.5), mk(1, 1.5), mk(2, f64::NAN)]);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].n, s[0].failed), (2, 1));
        assert!((s[0].value_mean - 1.0).abs() < 1e-12);
        assert!(s[0].delta_mean.abs() < 1e-12);
        assert!(render(&s).contains("TARNet"));
    }
}
