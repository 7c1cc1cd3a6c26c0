//! Two-covariate synthetic benchmark with the confounder observed as `x2`.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{build_oracle, sigmoid, DgpSpec, OracleDataset};
use crate::rng::{self, tag};

/// Conditional mean of the potential outcome under arm `a`.
pub fn mu(a: usize, x1: f64, x2: f64) -> f64 {
    let s = if a == 1 { 1.0 } else { -1.0 };
    s * x1 + s - 2.0 * (2.0 * s * x1 + x2).sin() - 2.0 * x2 * (1.0 + 0.5 * x1)
}

pub fn propensity(x1: f64, x2: f64) -> f64 {
    sigmoid(0.75 * x1 - x2 + 0.5)
}

pub fn generate_kallus_synthetic(spec: &DgpSpec) -> OracleDataset {
    let n = spec.n;
    let mut rng = rng::stream(spec.seed, &[tag::DATASET]);
    let unif = Uniform::new(-2.0, 2.0).expect("valid bounds");
    let mut x = Array2::zeros((n, 2));
    let (mut a, mut mu0, mut mu1, mut pi1, mut y0, mut y1) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let x1: f64 = unif.sample(&mut rng);
        let x2: f64 = StandardNormal.sample(&mut rng);
        let p = propensity(x1, x2);
        let t = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let (m0, m1) = (mu(0, x1, x2), mu(1, x1, x2));
        x[[i, 0]] = x1;
        x[[i, 1]] = x2;
        a.push(t);
        pi1.push(p);
        mu0.push(m0);
        mu1.push(m1);
        y0.push(m0 + e0);
        y1.push(m1 + e1);
    }
    build_oracle(x, a, mu0, mu1, pi1, y0, y1, Some(spec.clone()))
}
