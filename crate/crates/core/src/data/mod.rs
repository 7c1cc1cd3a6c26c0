//! Datasets, synthetic oracle generators and CSV ingestion.

mod csv_io;
mod hcmnist;
mod kallus;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_csv, write_csv, Loaded};
pub use hcmnist::{generate_hcmnist_like, HcMnistOracle};
pub use kallus::generate_kallus_synthetic;

/// Observational sample `(X, A, Y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Array2<f64>,
    /// Treatment indicator stored as 0.0 / 1.0.
    pub a: Array1<f64>,
    pub y: Array1<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, a: Array1<f64>, y: Array1<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if a.len() != n || y.len() != n {
            return Err(Error::InvalidDataset(format!(
                "inconsistent lengths: x has {n} rows, a has {}, y has {}",
                a.len(),
                y.len()
            )));
        }
        for (row, &v) in a.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryTreatment {
                    row: row + 1,
                    value: v.to_string(),
                });
            }
        }
        for (row, r) in x.outer_iter().enumerate() {
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    row: row + 1,
                    column: format!("x_{j}"),
                });
            }
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: row + 1,
                column: "y".into(),
            });
        }
        Ok(Dataset { x, a, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn treated(&self, i: usize) -> bool {
        self.a[i] == 1.0
    }

    /// Number of (untreated, treated) rows.
    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self.a.iter().filter(|&&v| v == 1.0).count();
        (self.n() - treated, treated)
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            a: self.a.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
        }
    }
}

/// Synthetic dataset that also carries its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleDataset {
    pub base: Dataset,
    pub mu0: Array1<f64>,
    pub mu1: Array1<f64>,
    pub pi1: Array1<f64>,
    pub tau: Array1<f64>,
    pub y0: Array1<f64>,
    pub y1: Array1<f64>,
    /// Generator that produced the rows, when known. Enables closed-form oracle
    /// evaluation at covariates outside the sample.
    pub source: Option<DgpSpec>,
}

impl OracleDataset {
    pub fn n(&self) -> usize {
        self.base.n()
    }

    /// Ground-truth conditional mean of arm `a`.
    pub fn mu(&self, arm: usize) -> &Array1<f64> {
        if arm == 0 {
            &self.mu0
        } else {
            &self.mu1
        }
    }

    pub fn select(&self, rows: &[usize]) -> OracleDataset {
        OracleDataset {
            base: self.base.select(rows),
            mu0: self.mu0.select(Axis(0), rows),
            mu1: self.mu1.select(Axis(0), rows),
            pi1: self.pi1.select(Axis(0), rows),
            tau: self.tau.select(Axis(0), rows),
            y0: self.y0.select(Axis(0), rows),
            y1: self.y1.select(Axis(0), rows),
            source: self.source.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgpKind {
    KallusSynthetic,
    HcMnistLike,
}

/// Parameters of a synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    /// Confounding strength of the HC-MNIST-like generator.
    #[serde(default = "default_gamma")]
    pub gamma_star: f64,
    pub n: usize,
    pub seed: u64,
    /// Pixel count of the surrogate image (HC-MNIST-like only).
    #[serde(default = "default_image_dim")]
    pub image_dim: usize,
    /// Per-pixel noise standard deviation around the class intensity.
    #[serde(default = "default_pixel_sd")]
    pub pixel_sd: f64,
}

fn default_gamma() -> f64 {
    std::f64::consts::E
}

fn default_image_dim() -> usize {
    784
}

fn default_pixel_sd() -> f64 {
    1.0
}

impl DgpSpec {
    pub fn kallus(n: usize, seed: u64) -> Self {
        DgpSpec {
            kind: DgpKind::KallusSynthetic,
            gamma_star: default_gamma(),
            n,
            seed,
            image_dim: default_image_dim(),
            pixel_sd: default_pixel_sd(),
        }
    }

    pub fn hcmnist(n: usize, seed: u64) -> Self {
        DgpSpec {
            kind: DgpKind::HcMnistLike,
            ..Self::kallus(n, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("dgp.n must be >= 1".into()));
        }
        if self.kind == DgpKind::HcMnistLike {
            if !(self.gamma_star >= 1.0) || !self.gamma_star.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "gamma_star must be >= 1, got {}",
                    self.gamma_star
                )));
            }
            if self.image_dim == 0 || !(self.pixel_sd > 0.0) {
                return Err(Error::InvalidConfig(
                    "image_dim must be >= 1 and pixel_sd > 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Covariate dimension produced by this generator.
    pub fn covariate_dim(&self) -> usize {
        match self.kind {
            DgpKind::KallusSynthetic => 2,
            DgpKind::HcMnistLike => self.image_dim + 1,
        }
    }

    pub fn generate(&self) -> Result<OracleDataset> {
        self.validate()?;
        match self.kind {
            DgpKind::KallusSynthetic => Ok(generate_kallus_synthetic(self)),
            DgpKind::HcMnistLike => Ok(generate_hcmnist_like(self)),
        }
    }

    /// Ground-truth `(mu0, mu1, pi1)` at one covariate row.
    pub fn oracle_at(&self, x: &[f64]) -> (f64, f64, f64) {
        match self.kind {
            DgpKind::KallusSynthetic => (
                kallus::mu(0, x[0], x[1]),
                kallus::mu(1, x[0], x[1]),
                kallus::propensity(x[0], x[1]),
            ),
            DgpKind::HcMnistLike => HcMnistOracle::new(self).at(x),
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn build_oracle(
    x: Array2<f64>,
    a: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    pi1: Vec<f64>,
    y0: Vec<f64>,
    y1: Vec<f64>,
    source: Option<DgpSpec>,
) -> OracleDataset {
    let y: Vec<f64> = a
        .iter()
        .zip(y0.iter().zip(&y1))
        .map(|(&t, (&v0, &v1))| if t == 1.0 { v1 } else { v0 })
        .collect();
    let tau: Vec<f64> = mu1.iter().zip(&mu0).map(|(m1, m0)| m1 - m0).collect();
    OracleDataset {
        base: Dataset {
            x,
            a: Array1::from(a),
            y: Array1::from(y),
        },
        mu0: Array1::from(mu0),
        mu1: Array1::from(mu1),
        pi1: Array1::from(pi1),
        tau: Array1::from(tau),
        y0: Array1::from(y0),
        y1: Array1::from(y1),
        source,
    }
}
