//! HC-MNIST-like generator with a synthetic image surrogate.
//!
//! Each "image" is a block of `image_dim` pixels drawn i.i.d. from
//! `N(m_c, pixel_sd^2)` where `m_c` is the class intensity of digit `c`. The
//! per-class mean and standard deviation of the average intensity are then
//! known exactly (`m_c` and `pixel_sd / sqrt(image_dim)`), so the one-dimensional
//! summary `phi` is a deterministic function of the pixels. Class intensities
//! are spaced `CLASS_SEPARATION` standard deviations apart, which makes the
//! label recoverable from the pixels. The latent confounder `U` is appended as
//! the last covariate.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{build_oracle, sigmoid, DgpSpec, OracleDataset};
use crate::rng::{self, tag};

pub const CLIP: f64 = 1.4;
pub const CLASS_SEPARATION: f64 = 20.0;

/// Closed-form ground truth of the HC-MNIST-like generator.
#[derive(Clone, Debug)]
pub struct HcMnistOracle {
    gamma: f64,
    image_dim: usize,
    class_sd: f64,
}

impl HcMnistOracle {
    pub fn new(spec: &DgpSpec) -> Self {
        HcMnistOracle {
            gamma: spec.gamma_star,
            image_dim: spec.image_dim,
            class_sd: spec.pixel_sd / (spec.image_dim as f64).sqrt(),
        }
    }

    pub fn class_intensity(&self, class: usize) -> f64 {
        class as f64 * CLASS_SEPARATION * self.class_sd
    }

    /// Maps a standardized intensity into the class band `[Min_c, Max_c]`.
    pub fn summary(class: usize, z: f64) -> f64 {
        let lo = -2.0 + 0.4 * class as f64;
        let hi = -2.0 + 0.4 * (class as f64 + 1.0);
        (z.clamp(-CLIP, CLIP) + CLIP) * (hi - lo) / (2.0 * CLIP) + lo
    }

    pub fn alpha(phi: f64, gamma: f64) -> f64 {
        1.0 / (gamma * sigmoid(0.75 * phi + 0.5)) + 1.0 - 1.0 / gamma
    }

    pub fn beta(phi: f64, gamma: f64) -> f64 {
        gamma / sigmoid(0.75 * phi + 0.5) + 1.0 - gamma
    }

    pub fn propensity(phi: f64, u: f64, gamma: f64) -> f64 {
        u / Self::alpha(phi, gamma) + (1.0 - u) / Self::beta(phi, gamma)
    }

    pub fn mu(a: usize, phi: f64, u: f64) -> f64 {
        let s = if a == 1 { 1.0 } else { -1.0 };
        s * phi + s - 2.0 * (2.0 * s * phi).sin() - 2.0 * (2.0 * u - 1.0) * (1.0 + 0.5 * phi)
    }

    /// Recovers `(class, phi, u)` from a covariate row.
    pub fn decode(&self, x: &[f64]) -> (usize, f64, f64) {
        let pixels = &x[..self.image_dim];
        let mean = pixels.iter().sum::<f64>() / self.image_dim as f64;
        let step = CLASS_SEPARATION * self.class_sd;
        let class = (mean / step).round().clamp(0.0, 9.0) as usize;
        let z = (mean - self.class_intensity(class)) / self.class_sd;
        (class, Self::summary(class, z), x[self.image_dim])
    }

    pub fn at(&self, x: &[f64]) -> (f64, f64, f64) {
        let (_, phi, u) = self.decode(x);
        (
            Self::mu(0, phi, u),
            Self::mu(1, phi, u),
            Self::propensity(phi, u, self.gamma),
        )
    }
}

pub fn generate_hcmnist_like(spec: &DgpSpec) -> OracleDataset {
    let n = spec.n;
    let d = spec.image_dim;
    let oracle = HcMnistOracle::new(spec);
    let mut rng = rng::stream(spec.seed, &[tag::DATASET]);
    let mut x = Array2::zeros((n, d + 1));
    let (mut a, mut mu0, mut mu1, mut pi1, mut y0, mut y1) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    for i in 0..n {
        let class = rng.random_range(0..10usize);
        let centre = oracle.class_intensity(class);
        let mut row = x.row_mut(i);
        for j in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            row[j] = centre + spec.pixel_sd * e;
        }
        let u = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        row[d] = u;
        let (_, phi, _) = oracle.decode(row.as_slice().expect("standard layout"));
        let p = HcMnistOracle::propensity(phi, u, spec.gamma_star);
        let t = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let e0: f64 = StandardNormal.sample(&mut rng);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let (m0, m1) = (HcMnistOracle::mu(0, phi, u), HcMnistOracle::mu(1, phi, u));
        a.push(t);
        pi1.push(p);
        mu0.push(m0);
        mu1.push(m1);
        y0.push(m0 + e0);
        y1.push(m1 + e1);
    }
    build_oracle(x, a, mu0, mu1, pi1, y0, y1, Some(spec.clone()))
}
