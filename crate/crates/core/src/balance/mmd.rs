use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{evaluate_pair, CanonGrad, IpmValue};
use crate::error::{Error, Result};

#[inline]
fn sq_dist(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median pairwise Euclidean distance over the pooled sample; falls back to 1
/// when every point coincides.
pub fn median_heuristic(s0: ArrayView2<f64>, s1: ArrayView2<f64>) -> f64 {
    let pooled: Vec<ArrayView1<f64>> = s0.outer_iter().chain(s1.outer_iter()).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Biased (V-statistic) squared MMD with an RBF kernel of bandwidth `sigma`.
pub fn mmd2(s0: ArrayView2<f64>, s1: ArrayView2<f64>, sigma: f64) -> Result<f64> {
    Ok(mmd2_w_grad(s0, None, s1, None, sigma)?.value)
}

/// Weighted squared MMD; weights are normalized per sample.
pub fn mmd2_w(s0: ArrayView2<f64>, w0: &[f64], s1: ArrayView2<f64>, w1: &[f64], sigma: f64) -> Result<f64> {
    Ok(mmd2_w_grad(s0, Some(w0), s1, Some(w1), sigma)?.value)
}

pub fn mmd2_w_grad(
    s0: ArrayView2<f64>,
    w0: Option<&[f64]>,
    s1: ArrayView2<f64>,
    w1: Option<&[f64]>,
    sigma: f64,
) -> Result<IpmValue> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("MMD bandwidth must be positive, got {sigma}")));
    }
    evaluate_pair(s0, w0, s1, w1, |x, a, y, b, dx, dy| {
        Ok(mmd_canonical(x, a, y, b, dx, dy, sigma))
    })
}

fn mmd_canonical(
    x: &Array2<f64>,
    a: &[f64],
    y: &Array2<f64>,
    b: &[f64],
    dropped_x: &Array2<f64>,
    dropped_y: &Array2<f64>,
    sigma: f64,
) -> CanonGrad {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let k = |u: ArrayView1<f64>, v: ArrayView1<f64>| (-sq_dist(u, v) * inv).exp();
    let (n, m, d) = (x.nrows(), y.nrows(), x.ncols());

    let mut gx = Array2::zeros((n, d));
    let mut gy = Array2::zeros((m, d));
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; m];

    let mut kxx = 0.0;
    for i in 0..n {
        for j in 0..n {
            let kij = k(x.row(i), x.row(j));
            kxx += a[i] * a[j] * kij;
            ga[i] += 2.0 * a[j] * kij;
            // d k(x_i, x_j) / d x_i = -k (x_i - x_j) / sigma^2
            let c = -2.0 * a[i] * a[j] * kij * 2.0 * inv;
            for t in 0..d {
                gx[[i, t]] += c * (x[[i, t]] - x[[j, t]]);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..m {
        for j in 0..m {
            let kij = k(y.row(i), y.row(j));
            kyy += b[i] * b[j] * kij;
            gb[i] += 2.0 * b[j] * kij;
            let c = -2.0 * b[i] * b[j] * kij * 2.0 * inv;
            for t in 0..d {
                gy[[i, t]] += c * (y[[i, t]] - y[[j, t]]);
            }
        }
    }
    let mut kxy = 0.0;
    for i in 0..n {
        for j in 0..m {
            let kij = k(x.row(i), y.row(j));
            kxy += a[i] * b[j] * kij;
            ga[i] -= 2.0 * b[j] * kij;
            gb[j] -= 2.0 * a[i] * kij;
            let c = 2.0 * a[i] * b[j] * kij * 2.0 * inv;
            for t in 0..d {
                let diff = x[[i, t]] - y[[j, t]];
                gx[[i, t]] += c * diff;
                gy[[j, t]] -= c * diff;
            }
        }
    }
    let mass_grad = |p: ArrayView1<f64>, own: (&Array2<f64>, &[f64]), other: (&Array2<f64>, &[f64])| {
        let s_own: f64 = (0..own.0.nrows()).map(|j| own.1[j] * k(p, own.0.row(j))).sum();
        let s_other: f64 = (0..other.0.nrows()).map(|j| other.1[j] * k(p, other.0.row(j))).sum();
        2.0 * s_own - 2.0 * s_other
    };
    let extra_x = dropped_x
        .outer_iter()
        .map(|p| mass_grad(p, (x, a), (y, b)))
        .collect();
    let extra_y = dropped_y
        .outer_iter()
        .map(|p| mass_grad(p, (y, b), (x, a)))
        .collect();

    let value = (kxx + kyy - 2.0 * kxy).max(0.0);
    CanonGrad {
        value,
        gx,
        ga,
        gy,
        gb,
        extra_x,
        extra_y,
    }
}
