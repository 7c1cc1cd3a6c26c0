//! Minimal neural substrate: dense nets, affine coupling flows, AdamW and EMA.
//!
//! Models expose their parameters as one flat vector (see [`Params`]); backward
//! passes accumulate gradients into a flat buffer with the same layout, so any
//! composite model can be trained by a single optimizer over concatenated
//! slices.

mod dense;
mod flow;
mod optim;

pub use dense::{DenseCache, DenseNet, Linear, OutputActivation, PROB_EPS};
pub use flow::{CouplingBlock, CouplingFlow, FlowCache};
pub use optim::{AdamW, Ema};

/// Flat view over a model's trainable parameters.
pub trait Params {
    fn param_count(&self) -> usize;
    /// Writes parameters into `out[..param_count()]`.
    fn write_params(&self, out: &mut [f64]);
    /// Reads parameters from `src[..param_count()]`.
    fn read_params(&mut self, src: &[f64]);

    fn flat_params(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.param_count()];
        self.write_params(&mut v);
        v
    }
}

/// Sequential concatenation of several parameter blocks.
pub fn flatten_all(parts: &[&dyn Params]) -> Vec<f64> {
    let total = parts.iter().map(|p| p.param_count()).sum();
    let mut out = vec![0.0; total];
    let mut off = 0;
    for p in parts {
        let k = p.param_count();
        p.write_params(&mut out[off..off + k]);
        off += k;
    }
    out
}
