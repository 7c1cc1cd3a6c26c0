//! Affine coupling flows.
//!
//! Block `k` keeps the coordinates in `cond` fixed and maps the others with
//! `y_j = x_j * exp(s_j(x_cond)) + t_j(x_cond)`. Consecutive blocks swap the two
//! halves of the coordinate set, so every coordinate gets transformed.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseCache, DenseNet, OutputActivation, Params};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingBlock {
    pub cond: Vec<usize>,
    pub transformed: Vec<usize>,
    /// Maps `x[cond]` to `[s, t]`, each of length `transformed.len()`.
    pub net: DenseNet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingFlow {
    pub dim: usize,
    pub blocks: Vec<CouplingBlock>,
}

pub struct FlowCache {
    /// Input of each block plus the final output.
    states: Vec<Array2<f64>>,
    scales: Vec<Array2<f64>>,
    nets: Vec<DenseCache>,
}

impl FlowCache {
    pub fn output(&self) -> &Array2<f64> {
        self.states.last().expect("non-empty")
    }
}

impl CouplingFlow {
    /// `n_blocks` coupling blocks whose subnets have `depth` hidden layers of
    /// `width` units. Subnet output layers start at zero, so the flow is the
    /// identity map at initialization.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        n_blocks: usize,
        width: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        let half = dim / 2;
        let first: Vec<usize> = (0..half).collect();
        let second: Vec<usize> = (half..dim).collect();
        let blocks = (0..n_blocks)
            .map(|k| {
                let (cond, transformed) = if k % 2 == 0 {
                    (first.clone(), second.clone())
                } else {
                    (second.clone(), first.clone())
                };
                let mut sizes = vec![cond.len()];
                sizes.extend(std::iter::repeat_n(width, depth));
                sizes.push(2 * transformed.len());
                let mut net = DenseNet::new(&sizes, OutputActivation::Identity, rng);
                net.zero_last_layer();
                CouplingBlock {
                    cond,
                    transformed,
                    net,
                }
            })
            .collect();
        Ok(CouplingFlow { dim, blocks })
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.dim {
            return Err(Error::shape(format!("{} columns", self.dim), x.ncols()));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let mut h = x.to_owned();
        for b in &self.blocks {
            let (sc, sh) = b.scale_shift(&h)?;
            for (k, &j) in b.transformed.iter().enumerate() {
                let mut col = h.column_mut(j);
                for i in 0..col.len() {
                    col[i] = col[i] * sc[[i, k]].exp() + sh[[i, k]];
                }
            }
        }
        Ok(h)
    }

    pub fn inverse(&self, phi: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&phi)?;
        let mut h = phi.to_owned();
        for b in self.blocks.iter().rev() {
            // cond coordinates are untouched by the block, so s and t are
            // recomputable from its output
            let (sc, sh) = b.scale_shift(&h)?;
            for (k, &j) in b.transformed.iter().enumerate() {
                let mut col = h.column_mut(j);
                for i in 0..col.len() {
                    col[i] = (col[i] - sh[[i, k]]) * (-sc[[i, k]]).exp();
                }
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<FlowCache> {
        self.check(&x)?;
        let mut states = vec![x.to_owned()];
        let mut scales = Vec::with_capacity(self.blocks.len());
        let mut nets = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let h = states.last().expect("non-empty");
            let cond = h.select(Axis(1), &b.cond);
            let cache = b.net.forward_cached(cond.view())?;
            let m = b.transformed.len();
            let sc = cache.output.slice(s![.., ..m]).to_owned();
            let mut next = h.clone();
            for (k, &j) in b.transformed.iter().enumerate() {
                for i in 0..next.nrows() {
                    next[[i, j]] = h[[i, j]] * sc[[i, k]].exp() + cache.output[[i, m + k]];
                }
            }
            scales.push(sc);
            nets.push(cache);
            states.push(next);
        }
        Ok(FlowCache {
            states,
            scales,
            nets,
        })
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, cache: &FlowCache, grad_out: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        let mut g = grad_out.clone();
        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut off = 0;
        for b in &self.blocks {
            offsets.push(off);
            off += b.net.param_count();
        }
        for (bi, b) in self.blocks.iter().enumerate().rev() {
            let x = &cache.states[bi];
            let sc = &cache.scales[bi];
            let m = b.transformed.len();
            let n = x.nrows();
            let mut g_st = Array2::zeros((n, 2 * m));
            for (k, &j) in b.transformed.iter().enumerate() {
                for i in 0..n {
                    let e = sc[[i, k]].exp();
                    let gy = g[[i, j]];
                    g_st[[i, k]] = gy * x[[i, j]] * e;
                    g_st[[i, m + k]] = gy;
                    g[[i, j]] = gy * e;
                }
            }
            let k0 = offsets[bi];
            let k1 = k0 + b.net.param_count();
            let g_cond = b.net.backward(&cache.nets[bi], &g_st, &mut grads[k0..k1]);
            for (c, &j) in b.cond.iter().enumerate() {
                for i in 0..n {
                    g[[i, j]] += g_cond[[i, c]];
                }
            }
        }
        g
    }
}

impl CouplingBlock {
    fn scale_shift(&self, h: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let cond = h.select(Axis(1), &self.cond);
        let out = self.net.forward(cond.view())?;
        let m = self.transformed.len();
        Ok((
            out.slice(s![.., ..m]).to_owned(),
            out.slice(s![.., m..]).to_owned(),
        ))
    }
}

impl Params for CouplingFlow {
    fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.net.param_count()).sum()
    }

    fn write_params(&self, out: &mut [f64]) {
        let mut off = 0;
        for b in &self.blocks {
            let k = b.net.param_count();
            b.net.write_params(&mut out[off..off + k]);
            off += k;
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        let mut off = 0;
        for b in &mut self.blocks {
            let k = b.net.param_count();
            b.net.read_params(&src[off..off + k]);
            off += k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn randomized(dim: usize, seed: u64) -> CouplingFlow {
        let mut r = rng::stream(seed, &[]);
        let mut flow = CouplingFlow::new(dim, 3, 5, 3, &mut r).unwrap();
        let mut p = flow.flat_params();
        for v in &mut p {
            let e: f64 = StandardNormal.sample(&mut r);
            *v = 0.3 * e;
        }
        flow.read_params(&p);
        flow
    }

    #[test]
    fn fresh_flow_is_identity() {
        let flow = CouplingFlow::new(3, 3, 4, 3, &mut rng::stream(0, &[])).unwrap();
        let x = array![[0.1, -2.0, 3.5], [1.0, 0.0, -0.25]];
        assert_eq!(flow.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn dimension_one_is_rejected() {
        assert!(matches!(
            CouplingFlow::new(1, 2, 4, 3, &mut rng::stream(0, &[])),
            Err(Error::DimensionTooSmall(1))
        ));
    }

    #[test]
    fn random_flow_round_trip() {
        let mut r = rng::stream(9, &[]);
        for dim in [2, 3, 5] {
            let flow = randomized(dim, dim as u64);
            let x = Array2::from_shape_simple_fn((50, dim), || {
                let e: f64 = StandardNormal.sample(&mut r);
                2.0 * e
            });
            let back = flow.inverse(flow.forward(x.view()).unwrap().view()).unwrap();
            let err = (&back - &x).mapv(f64::abs).fold(0.0_f64, |a, &b| a.max(b));
            assert!(err < 1e-8, "round trip error {err}");
        }
    }

    #[test]
    fn hand_set_shift_on_second_partition() {
        let mut flow = CouplingFlow::new(2, 1, 3, 3, &mut rng::stream(1, &[])).unwrap();
        let last = flow.blocks[0].net.layers.last_mut().unwrap();
        last.bias[0] = 0.5; // s
        last.bias[1] = -1.25; // t
        let x = array![[0.7, 2.0]];
        let phi = flow.forward(x.view()).unwrap();
        assert_eq!(phi[[0, 0]], 0.7);
        assert!((phi[[0, 1]] - (2.0 * 0.5_f64.exp() - 1.25)).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut flow = randomized(3, 4);
        let x = array![[0.3, -0.7, 1.2], [1.1, 0.4, -0.3]];
        let w = array![[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]];
        let loss = |f: &CouplingFlow, x: &Array2<f64>| (f.forward(x.view()).unwrap() * &w).sum();
        let cache = flow.forward_cached(x.view()).unwrap();
        let mut grads = vec![0.0; flow.param_count()];
        let gx = flow.backward(&cache, &w, &mut grads);
        let base = flow.flat_params();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            flow.read_params(&p);
            let up = loss(&flow, &x);
            p[k] -= 2.0 * h;
            flow.read_params(&p);
            let down = loss(&flow, &x);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads[k]).abs() <= 1e-5 * fd.abs().max(1.0), "param {k}");
        }
        flow.read_params(&base);
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let up = loss(&flow, &xp);
                xp[[i, j]] -= 2.0 * h;
                let down = loss(&flow, &xp);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - gx[[i, j]]).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }
}
