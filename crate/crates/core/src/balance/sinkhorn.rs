//! Entropic optimal transport with Euclidean ground cost.
//!
//! The reported distance is the debiased Sinkhorn divergence
//! `W(a, b) - W(a, a) / 2 - W(b, b) / 2`, where `W` is the entropic OT cost
//! `min_P <P, C> + eps_abs * KL(P | a x b)`. The regularization is relative:
//! `eps_abs = eps * s` with `s` the mean cross cost `sum_ij a_i b_j C_ij`, so
//! the transport plan is scale-free and the divergence is positively
//! homogeneous in the samples. Gradients use the dual potentials (envelope
//! theorem) plus the derivative through `s`.

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{evaluate_pair, CanonGrad, IpmValue};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_ITERATIONS: usize = 100;

#[inline]
fn dist(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    u.iter()
        .zip(v.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn cost(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), y.nrows()), |(i, j)| dist(x.row(i), y.row(j)))
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct OtSolution {
    f: Vec<f64>,
    g: Vec<f64>,
    value: f64,
    plan: Array2<f64>,
    kl: f64,
}

fn solve(c: &Array2<f64>, a: &[f64], b: &[f64], eps: f64, iterations: usize) -> Result<OtSolution> {
    let (n, m) = c.dim();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut row = vec![0.0; m.max(n)];
    for _ in 0..iterations {
        for i in 0..n {
            for j in 0..m {
                row[j] = log_b[j] + (g[j] - c[[i, j]]) / eps;
            }
            f[i] = -eps * log_sum_exp(row[..m].iter().copied());
        }
        for j in 0..m {
            for i in 0..n {
                row[i] = log_a[i] + (f[i] - c[[i, j]]) / eps;
            }
            g[j] = -eps * log_sum_exp(row[..n].iter().copied());
        }
    }
    if f.iter().chain(&g).any(|v| !v.is_finite()) {
        return Err(Error::NumericalUnderflow(format!(
            "non-finite dual potentials with eps = {eps:e}"
        )));
    }
    let value: f64 = a.iter().zip(&f).map(|(p, q)| p * q).sum::<f64>()
        + b.iter().zip(&g).map(|(p, q)| p * q).sum::<f64>();
    let plan = Array2::from_shape_fn((n, m), |(i, j)| {
        (log_a[i] + log_b[j] + (f[i] + g[j] - c[[i, j]]) / eps).exp()
    });
    let transport: f64 = plan.iter().zip(c.iter()).map(|(p, q)| p * q).sum();
    Ok(OtSolution {
        f,
        g,
        value,
        plan,
        kl: (value - transport) / eps,
    })
}

/// Unweighted Sinkhorn divergence between two samples.
pub fn wasserstein_sinkhorn(s0: ArrayView2<f64>, s1: ArrayView2<f64>, epsilon: f64, iterations: usize) -> Result<f64> {
    Ok(wm_w_grad(s0, None, s1, None, epsilon, iterations)?.value)
}

pub fn wm_w(
    s0: ArrayView2<f64>,
    w0: &[f64],
    s1: ArrayView2<f64>,
    w1: &[f64],
    epsilon: f64,
    iterations: usize,
) -> Result<f64> {
    Ok(wm_w_grad(s0, Some(w0), s1, Some(w1), epsilon, iterations)?.value)
}

pub fn wm_w_grad(
    s0: ArrayView2<f64>,
    w0: Option<&[f64]>,
    s1: ArrayView2<f64>,
    w1: Option<&[f64]>,
    epsilon: f64,
    iterations: usize,
) -> Result<IpmValue> {
    if !(epsilon > 0.0 && epsilon.is_finite()) || iterations == 0 {
        return Err(Error::InvalidConfig(format!(
            "sinkhorn needs epsilon > 0 and iterations >= 1 (got {epsilon}, {iterations})"
        )));
    }
    evaluate_pair(s0, w0, s1, w1, |x, a, y, b, dx, dy| {
        divergence(x, a, y, b, dx, dy, epsilon, iterations)
    })
}

#[allow(clippy::too_many_arguments)]
fn divergence(
    x: &Array2<f64>,
    a: &[f64],
    y: &Array2<f64>,
    b: &[f64],
    dropped_x: &Array2<f64>,
    dropped_y: &Array2<f64>,
    eps_rel: f64,
    iterations: usize,
) -> Result<CanonGrad> {
    let (n, m, d) = (x.nrows(), y.nrows(), x.ncols());
    let cxy = cost(x, y);
    let scale: f64 = (0..n)
        .map(|i| a[i] * (0..m).map(|j| b[j] * cxy[[i, j]]).sum::<f64>())
        .sum();
    let zero = || CanonGrad::zero(n, m, d, dropped_x.nrows(), dropped_y.nrows());
    if scale <= 0.0 {
        return Ok(zero());
    }
    let eps = eps_rel * scale;
    let cxx = cost(x, x);
    let cyy = cost(y, y);
    let xy = solve(&cxy, a, b, eps, iterations)?;
    let xx = solve(&cxx, a, a, eps, iterations)?;
    let yy = solve(&cyy, b, b, eps, iterations)?;
    let value = xy.value - 0.5 * xx.value - 0.5 * yy.value;
    if !(value > 0.0) {
        return Ok(zero());
    }
    // derivative of the divergence with respect to the cost scale
    let kappa = eps_rel * (xy.kl - 0.5 * xx.kl - 0.5 * yy.kl);

    let mut gx = Array2::zeros((n, d));
    let mut gy = Array2::zeros((m, d));
    for i in 0..n {
        for j in 0..m {
            let c = cxy[[i, j]];
            if c <= 0.0 {
                continue;
            }
            let coef = (xy.plan[[i, j]] + kappa * a[i] * b[j]) / c;
            for t in 0..d {
                let diff = x[[i, t]] - y[[j, t]];
                gx[[i, t]] += coef * diff;
                gy[[j, t]] -= coef * diff;
            }
        }
    }
    let self_term = |pts: &Array2<f64>, c: &Array2<f64>, sol: &OtSolution, g: &mut Array2<f64>| {
        let k = pts.nrows();
        for i in 0..k {
            for j in 0..k {
                if c[[i, j]] <= 0.0 {
                    continue;
                }
                let coef = -0.5 * sol.plan[[i, j]] / c[[i, j]];
                for t in 0..d {
                    let diff = pts[[i, t]] - pts[[j, t]];
                    g[[i, t]] += coef * diff;
                    g[[j, t]] -= coef * diff;
                }
            }
        }
    };
    self_term(x, &cxx, &xx, &mut gx);
    self_term(y, &cyy, &yy, &mut gy);

    let ga: Vec<f64> = (0..n)
        .map(|i| {
            let cross: f64 = (0..m).map(|j| b[j] * cxy[[i, j]]).sum();
            xy.f[i] - 0.5 * (xx.f[i] + xx.g[i]) + kappa * cross
        })
        .collect();
    let gb: Vec<f64> = (0..m)
        .map(|j| {
            let cross: f64 = (0..n).map(|i| a[i] * cxy[[i, j]]).sum();
            xy.g[j] - 0.5 * (yy.f[j] + yy.g[j]) + kappa * cross
        })
        .collect();

    // c-transform extension of the potentials to zero-mass points
    let extend = |p: ArrayView1<f64>, pts: &Array2<f64>, w: &[f64], pot: &[f64]| {
        -eps * log_sum_exp((0..pts.nrows()).map(|k| w[k].ln() + (pot[k] - dist(p, pts.row(k))) / eps))
    };
    let extra_x = dropped_x
        .outer_iter()
        .map(|p| {
            let cross: f64 = (0..m).map(|j| b[j] * dist(p, y.row(j))).sum();
            extend(p, y, b, &xy.g) - 0.5 * (extend(p, x, a, &xx.g) + extend(p, x, a, &xx.f)) + kappa * cross
        })
        .collect();
    let extra_y = dropped_y
        .outer_iter()
        .map(|p| {
            let cross: f64 = (0..n).map(|i| a[i] * dist(p, x.row(i))).sum();
            extend(p, x, a, &xy.f) - 0.5 * (extend(p, y, b, &yy.g) + extend(p, y, b, &yy.f)) + kappa * cross
        })
        .collect();

    Ok(CanonGrad {
        value,
        gx,
        ga,
        gy,
        gb,
        extra_x,
        extra_y,
    })
}
