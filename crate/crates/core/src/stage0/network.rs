use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{Family, HeadWiring, RepLearnerSpec};
use crate::balance::BalancingSpec;
use crate::error::{Error, Result};
use crate::nn::{CouplingFlow, DenseCache, DenseNet, FlowCache, OutputActivation, Params};
use crate::rng::{stream, tag};

/// Propensities below this value get zero inverse weight.
pub const CLIP_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Encoder {
    Dense(DenseNet),
    Flow(CouplingFlow),
}

enum EncoderCache {
    Dense(DenseCache),
    Flow(FlowCache),
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Dense(n) => n.input_dim(),
            Encoder::Flow(f) => f.dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Dense(n) => n.output_dim(),
            Encoder::Flow(f) => f.dim,
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Encoder::Dense(n) => n.forward(x),
            Encoder::Flow(f) => f.forward(x),
        }
    }

    pub fn as_flow(&self) -> Option<&CouplingFlow> {
        match self {
            Encoder::Flow(f) => Some(f),
            Encoder::Dense(_) => None,
        }
    }

    fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, EncoderCache)> {
        match self {
            Encoder::Dense(n) => {
                let c = n.forward_cached(x)?;
                Ok((c.output.clone(), EncoderCache::Dense(c)))
            }
            Encoder::Flow(f) => {
                let c = f.forward_cached(x)?;
                Ok((c.output().clone(), EncoderCache::Flow(c)))
            }
        }
    }

    fn backward(&self, cache: &EncoderCache, g: &Array2<f64>, grads: &mut [f64]) {
        match (self, cache) {
            (Encoder::Dense(n), EncoderCache::Dense(c)) => {
                n.backward(c, g, grads);
            }
            (Encoder::Flow(f), EncoderCache::Flow(c)) => {
                f.backward(c, g, grads);
            }
            _ => unreachable!("cache produced by a different encoder"),
        }
    }
}

impl Params for Encoder {
    fn param_count(&self) -> usize {
        match self {
            Encoder::Dense(n) => n.param_count(),
            Encoder::Flow(f) => f.param_count(),
        }
    }

    fn write_params(&self, out: &mut [f64]) {
        match self {
            Encoder::Dense(n) => n.write_params(out),
            Encoder::Flow(f) => f.write_params(out),
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        match self {
            Encoder::Dense(n) => n.read_params(src),
            Encoder::Flow(f) => f.read_params(src),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutcomeHeads {
    PerArm { h0: DenseNet, h1: DenseNet },
    /// Single head over `[phi, a]`.
    Shared(DenseNet),
}

impl OutcomeHeads {
    /// `h_arm(phi)` for every row.
    pub fn predict_arm(&self, phi: ArrayView2<f64>, arm: usize) -> Result<Array1<f64>> {
        let out = match self {
            OutcomeHeads::PerArm { h0, h1 } => {
                if arm == 0 {
                    h0.forward(phi)?
                } else {
                    h1.forward(phi)?
                }
            }
            OutcomeHeads::Shared(h) => {
                let col = Array2::from_elem((phi.nrows(), 1), arm as f64);
                h.forward(concatenate![Axis(1), phi, col].view())?
            }
        };
        Ok(out.column(0).to_owned())
    }

    /// `n x 2` matrix with columns `(h_0(phi), h_1(phi))`.
    pub fn predict_both(&self, phi: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((phi.nrows(), 2));
        for arm in 0..2 {
            out.column_mut(arm).assign(&self.predict_arm(phi, arm)?);
        }
        Ok(out)
    }

    fn parts(&self) -> Vec<&DenseNet> {
        match self {
            OutcomeHeads::PerArm { h0, h1 } => vec![h0, h1],
            OutcomeHeads::Shared(h) => vec![h],
        }
    }
}

impl Params for OutcomeHeads {
    fn param_count(&self) -> usize {
        self.parts().iter().map(|p| p.param_count()).sum()
    }

    fn write_params(&self, out: &mut [f64]) {
        let mut off = 0;
        for p in self.parts() {
            let k = p.param_count();
            p.write_params(&mut out[off..off + k]);
            off += k;
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        match self {
            OutcomeHeads::PerArm { h0, h1 } => {
                let k = h0.param_count();
                h0.read_params(&src[..k]);
                h1.read_params(&src[k..]);
            }
            OutcomeHeads::Shared(h) => h.read_params(src),
        }
    }
}

/// Encoder, outcome heads and the optional auxiliary heads.
///
/// Flat parameter layout: encoder, outcome heads, weight head, propensity
/// head. Everything before the propensity head is updated by the main
/// optimizer; the propensity head has its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationNetwork {
    pub encoder: Encoder,
    pub heads: OutcomeHeads,
    /// FC_w of RCFR (softplus output).
    pub weight: Option<DenseNet>,
    /// FC_{pi,phi} of CFR-ISW (sigmoid output).
    pub propensity: Option<DenseNet>,
}

/// Per-batch loss components. `total = factual + alpha * balance + bce`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTerms {
    pub factual: f64,
    pub balance: Option<f64>,
    pub bce: Option<f64>,
    pub total: f64,
    /// The balance term was requested but an arm was empty (or had zero
    /// total weight) in this batch.
    pub balance_skipped: bool,
    /// False when every sample weight in the batch is zero; no update is made.
    pub usable: bool,
    /// Sample weights used in the factual loss.
    pub weights: Array1<f64>,
}

impl RepresentationNetwork {
    /// Each component is initialized from its own stream, so the encoder and
    /// heads do not depend on which auxiliary heads a family adds.
    pub fn new(spec: &RepLearnerSpec, input_dim: usize, seed: u64) -> Result<Self> {
        spec.validate(input_dim)?;
        let mut r_enc = stream(seed, &[tag::STAGE0, tag::INIT, 0]);
        let mut r_head = stream(seed, &[tag::STAGE0, tag::INIT, 1]);
        let mut r_w = stream(seed, &[tag::STAGE0, tag::INIT, 2]);
        let mut r_p = stream(seed, &[tag::STAGE0, tag::INIT, 3]);
        let d = spec.rep_dim;
        let encoder = if spec.invertible {
            Encoder::Flow(CouplingFlow::new(
                input_dim,
                spec.flow_blocks,
                spec.hidden_phi,
                spec.flow_depth,
                &mut r_enc,
            )?)
        } else {
            Encoder::Dense(DenseNet::new(
                &[input_dim, spec.hidden_phi, d],
                OutputActivation::Identity,
                &mut r_enc,
            ))
        };
        let heads = match spec.wiring() {
            HeadWiring::PerArm => OutcomeHeads::PerArm {
                h0: DenseNet::new(&[d, spec.hidden_head, 1], OutputActivation::Identity, &mut r_head),
                h1: DenseNet::new(&[d, spec.hidden_head, 1], OutputActivation::Identity, &mut r_head),
            },
            HeadWiring::Shared => OutcomeHeads::Shared(DenseNet::new(
                &[d + 1, spec.hidden_head, 1],
                OutputActivation::Identity,
                &mut r_head,
            )),
        };
        let weight = (spec.family == Family::Rcfr).then(|| {
            // zero output layer: uniform weights at initialization
            let mut w = DenseNet::new(&[d, spec.hidden_aux, 1], OutputActivation::Softplus, &mut r_w);
            w.zero_last_layer();
            w
        });
        let propensity = (spec.family == Family::CfrIsw)
            .then(|| DenseNet::new(&[d, spec.hidden_aux, 1], OutputActivation::Sigmoid, &mut r_p));
        Ok(RepresentationNetwork {
            encoder,
            heads,
            weight,
            propensity,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn rep_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn phi(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.forward(x)
    }

    /// `(h_0(Phi(x)), h_1(Phi(x)))`.
    pub fn heads_at(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let phi = self.phi(x)?;
        self.heads.predict_both(phi.view())
    }

    /// Representation-level propensity `pi_1^phi(Phi(x))` (CFR-ISW only).
    pub fn propensity_phi(&self, x: ArrayView2<f64>) -> Result<Option<Array1<f64>>> {
        match &self.propensity {
            None => Ok(None),
            Some(p) => {
                let phi = self.phi(x)?;
                Ok(Some(p.forward(phi.view())?.column(0).to_owned()))
            }
        }
    }

    /// Number of parameters handled by the main optimizer.
    pub fn main_param_count(&self) -> usize {
        self.encoder.param_count() + self.heads.param_count() + self.weight.as_ref().map_or(0, |w| w.param_count())
    }

    /// Evaluates the training objective on one batch and accumulates its
    /// gradient into `grads` (flat layout, see the type docs).
    ///
    /// `cov_pi1` is the covariate propensity of each row (BWCFR). `frozen_w`
    /// replaces the family's sample weights by constants.
    #[allow(clippy::too_many_arguments)]
    pub fn objective(
        &self,
        family: Family,
        balancing: &BalancingSpec,
        x: ArrayView2<f64>,
        a: &[f64],
        y: &[f64],
        cov_pi1: Option<&[f64]>,
        frozen_w: Option<&[f64]>,
        grads: &mut [f64],
    ) -> Result<BatchTerms> {
        let n = x.nrows();
        if a.len() != n || y.len() != n {
            return Err(Error::LengthMismatch(a.len().min(y.len()), n));
        }
        if grads.len() != self.param_count() {
            return Err(Error::LengthMismatch(grads.len(), self.param_count()));
        }
        let n_enc = self.encoder.param_count();
        let n_heads = self.heads.param_count();
        let n_w = self.weight.as_ref().map_or(0, |w| w.param_count());
        let (g_enc, rest) = grads.split_at_mut(n_enc);
        let (g_heads, rest) = rest.split_at_mut(n_heads);
        let (g_wh, g_prop) = rest.split_at_mut(n_w);

        let (phi, enc_cache) = self.encoder.forward_cached(x)?;
        let d = phi.ncols();
        let idx: [Vec<usize>; 2] = [
            (0..n).filter(|&i| a[i] == 0.0).collect(),
            (0..n).filter(|&i| a[i] == 1.0).collect(),
        ];

        // factual predictions
        let mut pred = vec![0.0; n];
        let head_caches: Vec<(usize, DenseCache)> = match &self.heads {
            OutcomeHeads::PerArm { h0, h1 } => {
                let mut caches = Vec::new();
                for (arm, h) in [h0, h1].into_iter().enumerate() {
                    if idx[arm].is_empty() {
                        continue;
                    }
                    let sub = phi.select(Axis(0), &idx[arm]);
                    let c = h.forward_cached(sub.view())?;
                    for (k, &i) in idx[arm].iter().enumerate() {
                        pred[i] = c.output[[k, 0]];
                    }
                    caches.push((arm, c));
                }
                caches
            }
            OutcomeHeads::Shared(h) => {
                let col = Array2::from_shape_vec((n, 1), a.to_vec()).expect("column");
                let c = h.forward_cached(concatenate![Axis(1), phi, col].view())?;
                for i in 0..n {
                    pred[i] = c.output[[i, 0]];
                }
                vec![(2, c)]
            }
        };

        // propensity head on the detached representation
        let mut bce = None;
        let mut isw_weights = None;
        if let Some(p) = &self.propensity {
            let c = p.forward_cached(phi.view())?;
            let mut loss = 0.0;
            let mut g = Array2::zeros((n, 1));
            let mut w = Array1::zeros(n);
            for i in 0..n {
                let p1 = c.output[[i, 0]];
                let pa = if a[i] == 1.0 { p1 } else { 1.0 - p1 };
                loss -= pa.ln();
                g[[i, 0]] = if a[i] == 1.0 { -1.0 / p1 } else { 1.0 / (1.0 - p1) } / n as f64;
                w[i] = clipped_inverse(pa);
            }
            p.backward(&c, &g, g_prop);
            bce = Some(loss / n as f64);
            isw_weights = Some(w);
        }

        // sample weights
        let mut weight_cache = None;
        let weights: Option<Array1<f64>> = if let Some(w) = frozen_w {
            if w.len() != n {
                return Err(Error::LengthMismatch(w.len(), n));
            }
            Some(Array1::from(w.to_vec()))
        } else {
            match family {
                Family::CfrIsw => isw_weights,
                Family::Bwcfr => {
                    let pi = cov_pi1.ok_or_else(|| Error::MissingPropensity("BWCFR".into()))?;
                    if pi.len() != n {
                        return Err(Error::LengthMismatch(pi.len(), n));
                    }
                    Some((0..n).map(|i| clipped_inverse(if a[i] == 1.0 { pi[i] } else { 1.0 - pi[i] })).collect())
                }
                Family::Rcfr => {
                    let wh = self.weight.as_ref().expect("RCFR network has a weight head");
                    let c = wh.forward_cached(phi.view())?;
                    let u = c.output.column(0).to_owned();
                    let mean = u.mean().expect("non-empty batch");
                    let w = &u / mean;
                    weight_cache = Some((c, mean));
                    Some(w)
                }
                _ => None,
            }
        };
        let w_all = weights.clone().unwrap_or_else(|| Array1::ones(n));
        let sw: f64 = w_all.sum();
        if !(sw > 0.0) {
            return Ok(BatchTerms {
                factual: 0.0,
                balance: None,
                bce,
                total: bce.unwrap_or(0.0),
                balance_skipped: false,
                usable: false,
                weights: w_all,
            });
        }

        let mut factual = 0.0;
        for i in 0..n {
            let r = y[i] - pred[i];
            factual += w_all[i] * r * r;
        }
        factual /= sw;
        let mut g_pred = vec![0.0; n];
        let mut g_w = vec![0.0; n];
        for i in 0..n {
            let r = y[i] - pred[i];
            g_pred[i] = -2.0 * w_all[i] * r / sw;
            g_w[i] = (r * r - factual) / sw;
        }

        // balancing term
        let alpha = if family.balances() { balancing.alpha } else { 0.0 };
        let mut g_phi = Array2::<f64>::zeros((n, d));
        let mut balance = None;
        let mut balance_skipped = false;
        if alpha > 0.0 {
            if idx[0].is_empty() || idx[1].is_empty() {
                balance_skipped = true;
            } else {
                let s0 = phi.select(Axis(0), &idx[0]);
                let s1 = phi.select(Axis(0), &idx[1]);
                let (w0, w1) = match &weights {
                    Some(w) => (
                        Some(idx[0].iter().map(|&i| w[i]).collect::<Vec<_>>()),
                        Some(idx[1].iter().map(|&i| w[i]).collect::<Vec<_>>()),
                    ),
                    None => (None, None),
                };
                match balancing
                    .metric
                    .evaluate(s0.view(), w0.as_deref(), s1.view(), w1.as_deref())
                {
                    Ok(v) => {
                        balance = Some(v.value);
                        for (arm, gs, gw) in [(0, &v.grad_s0, &v.grad_w0), (1, &v.grad_s1, &v.grad_w1)] {
                            for (k, &i) in idx[arm].iter().enumerate() {
                                for j in 0..d {
                                    g_phi[[i, j]] += alpha * gs[[k, j]];
                                }
                                g_w[i] += alpha * gw[k];
                            }
                        }
                    }
                    Err(Error::AllZeroWeights) => balance_skipped = true,
                    Err(e) => return Err(e),
                }
            }
        }

        // outcome heads
        for (arm, cache) in &head_caches {
            match (&self.heads, *arm) {
                (OutcomeHeads::PerArm { h0, h1 }, arm) => {
                    let rows = &idx[arm];
                    let g = Array2::from_shape_fn((rows.len(), 1), |(k, _)| g_pred[rows[k]]);
                    let (net, off) = if arm == 0 { (h0, 0) } else { (h1, h0.param_count()) };
                    let gin = net.backward(cache, &g, &mut g_heads[off..off + net.param_count()]);
                    for (k, &i) in rows.iter().enumerate() {
                        for j in 0..d {
                            g_phi[[i, j]] += gin[[k, j]];
                        }
                    }
                }
                (OutcomeHeads::Shared(h), _) => {
                    let g = Array2::from_shape_vec((n, 1), g_pred.clone()).expect("column");
                    let gin = h.backward(cache, &g, g_heads);
                    g_phi += &gin.slice(s![.., ..d]);
                }
            }
        }

        // weight head (RCFR): W = u / mean(u)
        if let (Some((cache, mean)), Some(wh)) = (&weight_cache, &self.weight) {
            let proj: f64 = (0..n).map(|i| g_w[i] * w_all[i]).sum::<f64>() / n as f64;
            let g_u = Array2::from_shape_fn((n, 1), |(i, _)| (g_w[i] - proj) / mean);
            wh.backward(cache, &g_u, g_wh);
        }

        self.encoder.backward(&enc_cache, &g_phi, g_enc);

        let total = factual + alpha * balance.unwrap_or(0.0) + bce.unwrap_or(0.0);
        Ok(BatchTerms {
            factual,
            balance,
            bce,
            total,
            balance_skipped,
            usable: true,
            weights: w_all,
        })
    }
}

/// `1{p >= 0.05} / p`.
pub(crate) fn clipped_inverse(p: f64) -> f64 {
    if p >= CLIP_THRESHOLD {
        1.0 / p
    } else {
        0.0
    }
}

impl Params for RepresentationNetwork {
    fn param_count(&self) -> usize {
        self.main_param_count() + self.propensity.as_ref().map_or(0, |p| p.param_count())
    }

    fn write_params(&self, out: &mut [f64]) {
        let mut off = 0;
        let mut put = |p: &dyn Params| {
            let k = p.param_count();
            p.write_params(&mut out[off..off + k]);
            off += k;
        };
        put(&self.encoder);
        put(&self.heads);
        if let Some(w) = &self.weight {
            put(w);
        }
        if let Some(p) = &self.propensity {
            put(p);
        }
    }

    fn read_params(&mut self, src: &[f64]) {
        let mut off = 0;
        let k = self.encoder.param_count();
        self.encoder.read_params(&src[off..off + k]);
        off += k;
        let k = self.heads.param_count();
        self.heads.read_params(&src[off..off + k]);
        off += k;
        if let Some(w) = &mut self.weight {
            let k = w.param_count();
            w.read_params(&src[off..off + k]);
            off += k;
        }
        if let Some(p) = &mut self.propensity {
            let k = p.param_count();
            p.read_params(&src[off..off + k]);
        }
    }
}
