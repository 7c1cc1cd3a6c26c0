//! Oracle metrics, deltas against plug-in baselines, and representation
//! diagnostics.

use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{DgpSpec, OracleDataset};
use crate::error::{Error, Result};
use crate::nn::CouplingFlow;
use crate::ortho::Quantity;
use crate::rng::{stream, tag};

/// Cap on the number of pairs used by [`expansion_ratio`].
pub const MAX_PAIRS: usize = 10_000;

fn root_mean_square(est: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch(est.len(), truth.len()));
    }
    if est.is_empty() {
        return Err(Error::EmptySample);
    }
    let s: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((s / est.len() as f64).sqrt())
}

/// `sqrt(mean((tau_hat - tau)^2))`.
pub fn rpehe(tau_hat: ArrayView1<f64>, tau: ArrayView1<f64>) -> Result<f64> {
    root_mean_square(tau_hat, tau)
}

/// `sqrt(mean((xi_hat - mu_a)^2))` against the oracle CAPO.
pub fn rmse_capo(xi_hat: ArrayView1<f64>, mu: ArrayView1<f64>) -> Result<f64> {
    root_mean_square(xi_hat, mu)
}

/// One out-of-sample error measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub quantity: Quantity,
    /// rMSE for CAPOs, rPEHE for the CATE.
    pub value: f64,
    pub n_eval: usize,
    pub method: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(quantity: Quantity, value: f64, n_eval: usize, method: impl Into<String>, seed: u64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: 0,
                detail: format!("metric value {value}"),
            });
        }
        Ok(MetricReport {
            quantity,
            value,
            n_eval,
            method: method.into(),
            seed,
        })
    }

    /// Evaluates predictions of `quantity` on an oracle test set.
    pub fn evaluate(
        quantity: Quantity,
        pred: ArrayView1<f64>,
        test: &OracleDataset,
        method: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        let value = match quantity {
            Quantity::Capo0 => rmse_capo(pred, test.mu0.view())?,
            Quantity::Capo1 => rmse_capo(pred, test.mu1.view())?,
            Quantity::Cate => rpehe(pred, test.tau.view())?,
        };
        MetricReport::new(quantity, value, test.n(), method, seed)
    }
}

/// OR-learner metric minus baseline metric (negative = improvement).
pub fn delta_vs_baseline(report: &MetricReport, baseline: &MetricReport) -> Result<f64> {
    if report.quantity != baseline.quantity {
        return Err(Error::MismatchedQuantity(
            report.quantity.name().into(),
            baseline.quantity.name().into(),
        ));
    }
    if report.n_eval != baseline.n_eval || report.seed != baseline.seed {
        return Err(Error::MismatchedQuantity(
            format!("{} on {} rows (seed {})", report.quantity.name(), report.n_eval, report.seed),
            format!("{} on {} rows (seed {})", baseline.quantity.name(), baseline.n_eval, baseline.seed),
        ));
    }
    Ok(report.value - baseline.value)
}

/// Mean and sample standard deviation over runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Summary { mean, std, n })
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Distribution of pairwise ratios `|Phi(x) - Phi(x')| / |x - x'|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub pairs: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Pairwise expansion statistics of `phi` over the rows of `x`; all pairs
/// when there are at most [`MAX_PAIRS`], otherwise a seeded subsample.
pub fn expansion_ratio(
    phi: impl Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
    x: ArrayView2<f64>,
    seed: u64,
) -> Result<ExpansionStats> {
    let n = x.nrows();
    let z = phi(x)?;
    if z.nrows() != n {
        return Err(Error::LengthMismatch(z.nrows(), n));
    }
    let total = n * n.saturating_sub(1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= MAX_PAIRS {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = stream(seed, &[tag::PAIRS]);
        (0..MAX_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let mut ratios: Vec<f64> = pairs
        .into_iter()
        .filter_map(|(i, j)| {
            let dx = dist(x.row(i), x.row(j));
            (dx > 1e-9).then(|| dist(z.row(i), z.row(j)) / dx)
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::DegenerateSample);
    }
    ratios.sort_by(f64::total_cmp);
    Ok(ExpansionStats {
        q1: quantile(&ratios, 0.25),
        median: quantile(&ratios, 0.5),
        q3: quantile(&ratios, 0.75),
        pairs: ratios.len(),
    })
}

/// Regular grid over the first two coordinates (others held at 0) with the
/// flow image of every point: columns `x_1..x_d, phi_1..phi_d`.
pub fn grid_transform(flow: &CouplingFlow, bounds: (f64, f64), resolution: usize) -> Result<Array2<f64>> {
    let d = flow.dim;
    let (lo, hi) = bounds;
    if resolution == 0 || !(hi >= lo) {
        return Err(Error::InvalidConfig("grid needs resolution >= 1 and lo <= hi".into()));
    }
    let step = if resolution > 1 {
        (hi - lo) / (resolution - 1) as f64
    } else {
        0.0
    };
    let mut x = Array2::zeros((resolution * resolution, d));
    for i in 0..resolution {
        for j in 0..resolution {
            let r = i * resolution + j;
            x[[r, 0]] = lo + i as f64 * step;
            x[[r, 1]] = lo + j as f64 * step;
        }
    }
    let phi = flow.forward(x.view())?;
    Ok(ndarray::concatenate![ndarray::Axis(1), x, phi])
}

/// Writes [`grid_transform`] as CSV.
pub fn grid_transform_export(
    flow: &CouplingFlow,
    bounds: (f64, f64),
    resolution: usize,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let table = grid_transform(flow, bounds, resolution)?;
    let d = flow.dim;
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidConfig(format!("{other:?}")),
    })?;
    let header: Vec<String> = (1..=d)
        .map(|k| format!("x{k}"))
        .chain((1..=d).map(|k| format!("phi{k}")))
        .collect();
    w.write_record(&header)?;
    for row in table.outer_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(table.nrows())
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    fn of_mean(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        match Summary::of(&v) {
            Ok(s) => Estimate {
                value: s.mean,
                se: s.se(),
            },
            Err(_) => Estimate {
                value: f64::NAN,
                se: f64::NAN,
            },
        }
    }

    /// `|self - other| > 3 * sqrt(se^2 + se_other^2)`.
    pub fn differs(&self, other: &Estimate) -> bool {
        (self.value - other.value).abs() > 3.0 * (self.se.powi(2) + other.se.powi(2)).sqrt()
    }
}

/// Adjusted (potential-outcome) versus unadjusted (arm-mean) quantities of
/// an oracle sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RicbReport {
    pub n: usize,
    /// `E[Y[a]]`.
    pub apo: [Estimate; 2],
    /// `E[Y | A = a]`.
    pub arm_mean: [Estimate; 2],
    pub ate: Estimate,
    pub diff_in_means: Estimate,
    /// Mean of the oracle CATE column.
    pub tau_mean: f64,
    /// `|APO_a - arm mean_a|` beyond 3 SE.
    pub gap: [bool; 2],
    /// `|ATE - difference in means|` beyond 3 SE.
    pub confounded: bool,
}

pub fn ricb_report(data: &OracleDataset) -> RicbReport {
    let n = data.n();
    let a = &data.base.a;
    let y = &data.base.y;
    let apo = [
        Estimate::of_mean(data.y0.iter().copied()),
        Estimate::of_mean(data.y1.iter().copied()),
    ];
    let arm_mean = [0.0, 1.0].map(|t| Estimate::of_mean((0..n).filter(|&i| a[i] == t).map(|i| y[i])));
    let ate = Estimate::of_mean((0..n).map(|i| data.y1[i] - data.y0[i]));
    let diff_in_means = Estimate {
        value: arm_mean[1].value - arm_mean[0].value,
        se: (arm_mean[0].se.powi(2) + arm_mean[1].se.powi(2)).sqrt(),
    };
    RicbReport {
        n,
        gap: [apo[0].differs(&arm_mean[0]), apo[1].differs(&arm_mean[1])],
        confounded: ate.differs(&diff_in_means),
        apo,
        arm_mean,
        ate,
        diff_in_means,
        tau_mean: data.tau.mean().unwrap_or(f64::NAN),
    }
}

/// Draws `n` rows from `dgp` and reports [`ricb_report`].
pub fn ricb_probe(dgp: &DgpSpec, n: usize) -> Result<RicbReport> {
    let spec = DgpSpec { n, ..dgp.clone() };
    Ok(ricb_report(&spec.generate()?))
}
