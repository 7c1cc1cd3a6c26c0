//! Canonical form of a weighted empirical measure.
//!
//! Weights are normalized, zero-mass points dropped, rows sorted
//! lexicographically and exact duplicates merged. Estimators evaluated on the
//! canonical form depend only on the measure, not on row order or on how mass
//! is split between coincident points; that makes symmetry and zero-on-equal
//! hold exactly in floating point.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

pub(crate) struct Canonical {
    pub points: Array2<f64>,
    pub mass: Vec<f64>,
    /// Canonical index of every original row (`None` for zero-mass rows).
    pub slot: Vec<Option<usize>>,
    /// Normalized original weights.
    pub normalized: Vec<f64>,
    pub total: f64,
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

pub(crate) fn canonicalize(x: ArrayView2<f64>, w: Option<&[f64]>) -> Result<Canonical> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let raw: Vec<f64> = match w {
        Some(w) => {
            if w.len() != n {
                return Err(Error::LengthMismatch(w.len(), n));
            }
            if let Some(&bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidWeight(bad));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let normalized: Vec<f64> = if raw.iter().all(|&v| v == raw[0]) {
        vec![1.0 / n as f64; n]
    } else {
        raw.iter().map(|v| v / total).collect()
    };
    let rows: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| normalized[i] > 0.0).collect();
    order.sort_by(|&i, &j| cmp_rows(&rows[i], &rows[j]));

    let mut slot = vec![None; n];
    let mut kept: Vec<usize> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    for &i in &order {
        match kept.last() {
            Some(&k) if cmp_rows(&rows[k], &rows[i]) == Ordering::Equal => {
                *mass.last_mut().expect("non-empty") += normalized[i];
            }
            _ => {
                kept.push(i);
                mass.push(normalized[i]);
            }
        }
        slot[i] = Some(kept.len() - 1);
    }
    let d = x.ncols();
    let mut points = Array2::zeros((kept.len(), d));
    for (k, &i) in kept.iter().enumerate() {
        points.row_mut(k).assign(&x.row(i));
    }
    Ok(Canonical {
        points,
        mass,
        slot,
        normalized,
        total,
    })
}

impl Canonical {
    /// Total order on canonical measures.
    pub fn cmp(&self, other: &Canonical) -> Ordering {
        self.mass
            .len()
            .cmp(&other.mass.len())
            .then_with(|| cmp_rows(&self.mass, &other.mass))
            .then_with(|| {
                cmp_rows(
                    self.points.as_slice().expect("standard layout"),
                    other.points.as_slice().expect("standard layout"),
                )
            })
    }

    /// Maps gradients with respect to canonical positions / masses back to
    /// the original rows and raw (unnormalized) weights.
    ///
    /// `dropped_mass_grad(i)` supplies the mass derivative for zero-weight rows.
    pub fn pull_back(
        &self,
        g_points: &Array2<f64>,
        g_mass: &[f64],
        dropped_mass_grad: impl Fn(usize) -> f64,
    ) -> (Array2<f64>, Array1<f64>) {
        let n = self.slot.len();
        let d = self.points.ncols();
        let mut gx = Array2::zeros((n, d));
        let mut g_norm = vec![0.0; n];
        for i in 0..n {
            match self.slot[i] {
                Some(k) => {
                    let share = self.normalized[i] / self.mass[k];
                    for j in 0..d {
                        gx[[i, j]] = share * g_points[[k, j]];
                    }
                    g_norm[i] = g_mass[k];
                }
                None => g_norm[i] = dropped_mass_grad(i),
            }
        }
        // normalization w_i / sum(w)
        let mean: f64 = g_norm.iter().zip(&self.normalized).map(|(g, w)| g * w).sum();
        let gw = Array1::from_iter(g_norm.iter().map(|g| (g - mean) / self.total));
        (gx, gw)
    }
}
