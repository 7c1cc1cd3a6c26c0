//! Integral probability metrics between the untreated and treated
//! representation samples, with gradients with respect to both sample
//! coordinates and (unnormalized) sample weights.

mod canonical;
mod mmd;
mod sinkhorn;

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use canonical::canonicalize;

pub use mmd::{median_heuristic, mmd2, mmd2_w, mmd2_w_grad};
pub use sinkhorn::{wasserstein_sinkhorn, wm_w, wm_w_grad, DEFAULT_EPSILON, DEFAULT_ITERATIONS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pooled pairwise distance of the current minibatch (no gradient
    /// flows through the bandwidth).
    MedianHeuristic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Ipm {
    Mmd { bandwidth: Bandwidth },
    Wasserstein { epsilon: f64, iterations: usize },
}

impl Ipm {
    pub fn mmd() -> Self {
        Ipm::Mmd {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }

    pub fn wasserstein() -> Self {
        Ipm::Wasserstein {
            epsilon: DEFAULT_EPSILON,
            iterations: DEFAULT_ITERATIONS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Ipm::Mmd { .. } => "MMD",
            Ipm::Wasserstein { .. } => "WM",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "MMD" => Ok(Ipm::mmd()),
            "WM" | "WASSERSTEIN" => Ok(Ipm::wasserstein()),
            other => Err(Error::InvalidConfig(format!("unknown IPM `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Ipm::Mmd {
                bandwidth: Bandwidth::Fixed(s),
            } if !(s > 0.0) => Err(Error::InvalidConfig("MMD bandwidth must be positive".into())),
            Ipm::Wasserstein { epsilon, iterations } if !(epsilon > 0.0) || iterations == 0 => Err(
                Error::InvalidConfig("sinkhorn needs epsilon > 0 and iterations >= 1".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Distance and gradients between weighted samples (`None` = uniform).
    pub fn evaluate(
        &self,
        s0: ArrayView2<f64>,
        w0: Option<&[f64]>,
        s1: ArrayView2<f64>,
        w1: Option<&[f64]>,
    ) -> Result<IpmValue> {
        match *self {
            Ipm::Mmd { bandwidth } => {
                let sigma = match bandwidth {
                    Bandwidth::Fixed(s) => s,
                    Bandwidth::MedianHeuristic => median_heuristic(s0, s1),
                };
                mmd2_w_grad(s0, w0, s1, w1, sigma)
            }
            Ipm::Wasserstein { epsilon, iterations } => wm_w_grad(s0, w0, s1, w1, epsilon, iterations),
        }
    }
}

/// Balancing term of the representation objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancingSpec {
    pub metric: Ipm,
    /// Balancing strength; 0 disables the term.
    pub alpha: f64,
}

impl BalancingSpec {
    pub fn none() -> Self {
        BalancingSpec {
            metric: Ipm::wasserstein(),
            alpha: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "balancing strength must be >= 0, got {}",
                self.alpha
            )));
        }
        self.metric.validate()
    }
}

/// Distance plus gradients with respect to the original rows and raw weights.
#[derive(Clone, Debug)]
pub struct IpmValue {
    pub value: f64,
    pub grad_s0: Array2<f64>,
    pub grad_w0: Array1<f64>,
    pub grad_s1: Array2<f64>,
    pub grad_w1: Array1<f64>,
}

/// Result of an estimator on canonical measures.
pub(crate) struct CanonGrad {
    pub value: f64,
    pub gx: Array2<f64>,
    pub ga: Vec<f64>,
    pub gy: Array2<f64>,
    pub gb: Vec<f64>,
    /// Mass derivatives at zero-weight rows of each side.
    pub extra_x: Vec<f64>,
    pub extra_y: Vec<f64>,
}

impl CanonGrad {
    pub fn zero(n: usize, m: usize, d: usize, dropped_x: usize, dropped_y: usize) -> Self {
        CanonGrad {
            value: 0.0,
            gx: Array2::zeros((n, d)),
            ga: vec![0.0; n],
            gy: Array2::zeros((m, d)),
            gb: vec![0.0; m],
            extra_x: vec![0.0; dropped_x],
            extra_y: vec![0.0; dropped_y],
        }
    }
}

type CanonFn<'a> = dyn Fn(&Array2<f64>, &[f64], &Array2<f64>, &[f64], &Array2<f64>, &Array2<f64>) -> Result<CanonGrad> + 'a;

/// Evaluates a two-sample estimator on canonical forms, ordered so that the
/// result is exactly symmetric, and pulls gradients back to the inputs.
pub(crate) fn evaluate_pair(
    s0: ArrayView2<f64>,
    w0: Option<&[f64]>,
    s1: ArrayView2<f64>,
    w1: Option<&[f64]>,
    estimator: impl Fn(&Array2<f64>, &[f64], &Array2<f64>, &[f64], &Array2<f64>, &Array2<f64>) -> Result<CanonGrad>,
) -> Result<IpmValue> {
    if s0.nrows() == 0 || s1.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    if s0.ncols() != s1.ncols() {
        return Err(Error::DimensionMismatch(s0.ncols(), s1.ncols()));
    }
    let c0 = canonicalize(s0, w0)?;
    let c1 = canonicalize(s1, w1)?;
    let dropped = |c: &canonical::Canonical, s: &ArrayView2<f64>| -> (Vec<usize>, Array2<f64>) {
        let idx: Vec<usize> = (0..c.slot.len()).filter(|&i| c.slot[i].is_none()).collect();
        let pts = s.select(Axis(0), &idx);
        (idx, pts)
    };
    let (idx0, d0) = dropped(&c0, &s0);
    let (idx1, d1) = dropped(&c1, &s1);
    let d = s0.ncols();

    let order = c0.cmp(&c1);
    let est: &CanonFn = &estimator;
    let r = match order {
        Ordering::Equal => CanonGrad::zero(c0.mass.len(), c1.mass.len(), d, idx0.len(), idx1.len()),
        Ordering::Less => est(&c0.points, &c0.mass, &c1.points, &c1.mass, &d0, &d1)?,
        Ordering::Greater => {
            let r = est(&c1.points, &c1.mass, &c0.points, &c0.mass, &d1, &d0)?;
            CanonGrad {
                value: r.value,
                gx: r.gy,
                ga: r.gb,
                gy: r.gx,
                gb: r.ga,
                extra_x: r.extra_y,
                extra_y: r.extra_x,
            }
        }
    };
    let lookup = |idx: &[usize], extra: &[f64], i: usize| {
        idx.iter()
            .position(|&k| k == i)
            .map(|p| extra[p])
            .unwrap_or(0.0)
    };
    let (grad_s0, grad_w0) = c0.pull_back(&r.gx, &r.ga, |i| lookup(&idx0, &r.extra_x, i));
    let (grad_s1, grad_w1) = c1.pull_back(&r.gy, &r.gb, |i| lookup(&idx1, &r.extra_y, i));
    Ok(IpmValue {
        value: r.value,
        grad_s0,
        grad_w0,
        grad_s1,
        grad_w1,
    })
}
