//! Stage 2: pseudo-outcomes, Neyman-orthogonal losses and target fitting.
//!
//! Every loss is a batch mean of a per-row term that is quadratic in the
//! target prediction `g(V)`; [`loss_and_grad`] returns the batch loss and its
//! derivative with respect to each prediction.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{AdamW, DenseNet, Ema, OutputActivation, Params};
use crate::nuisance::{clipped_inverse_weight, NuisanceSet, NuisanceValues};
use crate::rng::{stream, tag};
use crate::stage0::{Selector, TrainedRepresentation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantity {
    Capo0,
    Capo1,
    Cate,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Capo0, Quantity::Capo1, Quantity::Cate];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Capo0 => "CAPO0",
            Quantity::Capo1 => "CAPO1",
            Quantity::Cate => "CATE",
        }
    }

    pub fn capo(arm: usize) -> Self {
        if arm == 0 {
            Quantity::Capo0
        } else {
            Quantity::Capo1
        }
    }

    /// Metric name: rMSE for potential outcomes, rPEHE for effects.
    pub fn metric_name(self) -> &'static str {
        match self {
            Quantity::Cate => "rPEHE",
            _ => "rMSE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    DrKCapo(u8),
    DrFsCapo(u8),
    DrKCate,
    RCate,
    IvwCate,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::DrKCapo(0),
        LossKind::DrFsCapo(0),
        LossKind::DrKCapo(1),
        LossKind::DrFsCapo(1),
        LossKind::DrKCate,
        LossKind::RCate,
        LossKind::IvwCate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::DrKCapo(0) => "DRK0",
            LossKind::DrKCapo(_) => "DRK1",
            LossKind::DrFsCapo(0) => "DRFS0",
            LossKind::DrFsCapo(_) => "DRFS1",
            LossKind::DrKCate => "DRK",
            LossKind::RCate => "R",
            LossKind::IvwCate => "IVW",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let key = name.trim().to_ascii_uppercase();
        if key == "DRFS" {
            return Err(Error::InvalidConfig(
                "the DR-FS loss targets potential outcomes only; use DRFS0 or DRFS1".into(),
            ));
        }
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss `{name}`")))
    }

    pub fn quantity(self) -> Quantity {
        match self {
            LossKind::DrKCapo(a) | LossKind::DrFsCapo(a) => Quantity::capo(a as usize),
            _ => Quantity::Cate,
        }
    }
}

/// Hyperparameters of the target network (fixed, never tuned).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetHyper {
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema: f64,
}

impl TargetHyper {
    pub fn synthetic(hidden: usize) -> Self {
        TargetHyper {
            hidden,
            learning_rate: 0.005,
            weight_decay: 0.0,
            batch_size: 64,
            epochs: 200,
            ema: 0.995,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ema > 0.0 && self.ema < 1.0) {
            return Err(Error::InvalidConfig(format!("EMA smoothing must lie in (0, 1), got {}", self.ema)));
        }
        if self.hidden == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("invalid target network hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalLossSpec {
    pub kind: LossKind,
    pub selector: Selector,
    pub target: TargetHyper,
}

/// Rows of a stage-2 batch: treatment, outcome and nuisance values.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch {
    pub a: Array1<f64>,
    pub y: Array1<f64>,
    pub nuisances: NuisanceValues,
}

impl TargetBatch {
    pub fn new(a: Array1<f64>, y: Array1<f64>, nuisances: NuisanceValues) -> Result<Self> {
        if a.len() != y.len() || a.len() != nuisances.len() {
            return Err(Error::LengthMismatch(a.len(), nuisances.len()));
        }
        Ok(TargetBatch { a, y, nuisances })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> TargetBatch {
        TargetBatch {
            a: rows.iter().map(|&i| self.a[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            nuisances: self.nuisances.select(rows),
        }
    }

    fn alpha(&self, arm: usize, i: usize) -> f64 {
        clipped_inverse_weight(arm, self.a[i], self.nuisances.pi1[i])
    }

    /// DR pseudo-outcome of the CAPO of `arm` for row `i`.
    pub fn pseudo_capo(&self, arm: usize, i: usize) -> f64 {
        let mu = self.nuisances.mu(arm)[i];
        self.alpha(arm, i) * (self.y[i] - mu) + mu
    }

    /// DR pseudo-outcome of the CATE for row `i`.
    pub fn pseudo_cate(&self, i: usize) -> f64 {
        let v = &self.nuisances;
        let mu_a = if self.a[i] == 1.0 { v.mu1[i] } else { v.mu0[i] };
        (self.alpha(1, i) - self.alpha(0, i)) * (self.y[i] - mu_a) + v.mu1[i] - v.mu0[i]
    }

    pub fn pseudo(&self, quantity: Quantity) -> Array1<f64> {
        (0..self.len())
            .map(|i| match quantity {
                Quantity::Capo0 => self.pseudo_capo(0, i),
                Quantity::Capo1 => self.pseudo_capo(1, i),
                Quantity::Cate => self.pseudo_cate(i),
            })
            .collect()
    }

    /// True when `A - pi_1` vanishes on every row, so the R-loss does not
    /// depend on `g`.
    pub fn r_loss_degenerate(&self) -> bool {
        (0..self.len()).all(|i| (self.a[i] - self.nuisances.pi1[i]).abs() < 1e-12)
    }
}

/// `alpha_a (Y - mu_a) + mu_a` with the clipped inverse weight `alpha_a`.
pub fn pseudo_dr_capo(arm: usize, a: f64, y: f64, mu_a: f64, pi1: f64) -> f64 {
    clipped_inverse_weight(arm, a, pi1) * (y - mu_a) + mu_a
}

/// `(alpha_1 - alpha_0) (Y - mu_A) + mu_1 - mu_0`.
pub fn pseudo_dr_cate(a: f64, y: f64, mu0: f64, mu1: f64, pi1: f64) -> f64 {
    let mu_a = if a == 1.0 { mu1 } else { mu0 };
    (clipped_inverse_weight(1, a, pi1) - clipped_inverse_weight(0, a, pi1)) * (y - mu_a) + mu1 - mu0
}

/// Batch loss and its derivative with respect to each prediction `g[i]`.
pub fn loss_and_grad(kind: LossKind, g: &[f64], batch: &TargetBatch) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    if g.len() != n {
        return Err(Error::LengthMismatch(g.len(), n));
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let m = n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let (l, d) = match kind {
            LossKind::DrKCapo(arm) => {
                let r = batch.pseudo_capo(arm as usize, i) - g[i];
                (r * r, -2.0 * r)
            }
            LossKind::DrKCate => {
                let r = batch.pseudo_cate(i) - g[i];
                (r * r, -2.0 * r)
            }
            LossKind::DrFsCapo(arm) => {
                let arm = arm as usize;
                let w = batch.alpha(arm, i);
                let mu = batch.nuisances.mu(arm)[i];
                let (ry, rm) = (batch.y[i] - g[i], mu - g[i]);
                (w * ry * ry + (1.0 - w) * rm * rm, -2.0 * (w * ry + (1.0 - w) * rm))
            }
            LossKind::RCate => {
                let e = batch.a[i] - batch.nuisances.pi1[i];
                let r = (batch.y[i] - batch.nuisances.mu_x(i)) - e * g[i];
                (r * r, -2.0 * e * r)
            }
            LossKind::IvwCate => {
                let e = batch.a[i] - batch.nuisances.pi1[i];
                let r = batch.pseudo_cate(i) - g[i];
                (e * e * r * r, -2.0 * e * e * r)
            }
        };
        loss += l;
        grad[i] = d / m;
    }
    Ok((loss / m, grad))
}

/// DR-FS loss of the CAPO of `arm`.
pub fn loss_dr_fs_capo(g: &[f64], batch: &TargetBatch, arm: usize) -> Result<f64> {
    Ok(loss_and_grad(LossKind::DrFsCapo(arm as u8), g, batch)?.0)
}

/// R-loss of the CATE in product form.
pub fn loss_r_cate(g: &[f64], batch: &TargetBatch) -> Result<f64> {
    Ok(loss_and_grad(LossKind::RCate, g, batch)?.0)
}

/// Inverse-variance weighted loss of the CATE.
pub fn loss_ivw_cate(g: &[f64], batch: &TargetBatch) -> Result<f64> {
    Ok(loss_and_grad(LossKind::IvwCate, g, batch)?.0)
}

/// DR-K loss for a CAPO or the CATE.
pub fn loss_dr_k(g: &[f64], batch: &TargetBatch, quantity: Quantity) -> Result<f64> {
    let kind = match quantity {
        Quantity::Capo0 => LossKind::DrKCapo(0),
        Quantity::Capo1 => LossKind::DrKCapo(1),
        Quantity::Cate => LossKind::DrKCate,
    };
    Ok(loss_and_grad(kind, g, batch)?.0)
}

/// Fitted target network with its input selector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub spec: OrthogonalLossSpec,
    /// Network carrying the EMA shadow parameters (used for prediction).
    pub net: DenseNet,
    /// Network carrying the last optimizer iterate.
    pub last: DenseNet,
    pub representation: Box<TrainedRepresentation>,
    /// Mean batch loss per epoch.
    pub history: Vec<f64>,
}

impl TargetModel {
    pub fn quantity(&self) -> Quantity {
        self.spec.kind.quantity()
    }

    /// Predictions from raw covariates (the selector is applied internally).
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let v = self.representation.rep_inputs(x, self.spec.selector)?;
        Ok(self.net.forward(v.view())?.column(0).to_owned())
    }

    /// Predictions of the last iterate instead of the EMA shadow.
    pub fn predict_last(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let v = self.representation.rep_inputs(x, self.spec.selector)?;
        Ok(self.last.forward(v.view())?.column(0).to_owned())
    }
}

/// Layer sizes of the target network for a selector.
pub fn target_sizes(tr: &TrainedRepresentation, selector: Selector, hidden: usize) -> Vec<usize> {
    let input = tr.selector_dim(selector);
    match selector {
        Selector::RawXDeep => {
            // same stack of hidden layers as encoder + outcome head
            let s = &tr.spec;
            let mut sizes = vec![input];
            if s.invertible {
                sizes.extend(std::iter::repeat_n(s.hidden_phi, s.flow_depth));
            } else {
                sizes.push(s.hidden_phi);
                sizes.push(s.rep_dim);
            }
            sizes.push(hidden);
            sizes.push(1);
            sizes
        }
        _ => vec![input, hidden, 1],
    }
}

/// Fits the target network by minibatch AdamW on the orthogonal loss, tracking
/// an EMA of the weights.
pub fn fit_target(
    spec: &OrthogonalLossSpec,
    tr: &TrainedRepresentation,
    nuisances: &NuisanceSet,
    data: &Dataset,
    seed: u64,
) -> Result<TargetModel> {
    spec.target.validate()?;
    let values = nuisances.evaluate(data.x.view())?;
    let batch = TargetBatch::new(data.a.clone(), data.y.clone(), values)?;
    let v = tr.rep_inputs(data.x.view(), spec.selector)?;
    fit_target_on(spec, tr, &v, &batch, seed)
}

/// [`fit_target`] with precomputed inputs `v` and nuisance values.
pub fn fit_target_on(
    spec: &OrthogonalLossSpec,
    tr: &TrainedRepresentation,
    v: &Array2<f64>,
    batch: &TargetBatch,
    seed: u64,
) -> Result<TargetModel> {
    let hyper = &spec.target;
    hyper.validate()?;
    if v.nrows() != batch.len() {
        return Err(Error::LengthMismatch(v.nrows(), batch.len()));
    }
    if spec.kind == LossKind::RCate && batch.r_loss_degenerate() {
        log::warn!("R-loss is constant in g: the propensity residual A - pi_1 vanishes on every row");
    }
    let tag_kind = LossKind::ALL.iter().position(|k| *k == spec.kind).unwrap_or(0) as u64;
    let mut init = stream(seed, &[tag::TARGET, tag::INIT, tag_kind]);
    let sizes = target_sizes(tr, spec.selector, hyper.hidden);
    let mut net = DenseNet::new(&sizes, OutputActivation::Identity, &mut init);
    let mut flat = net.flat_params();
    let mut opt = AdamW::new(flat.len(), hyper.learning_rate, hyper.weight_decay);
    let mut ema = Ema::new(hyper.ema, &flat);
    let mut grads = vec![0.0; flat.len()];
    let mut order: Vec<usize> = (0..v.nrows()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut stream(seed, &[tag::TARGET, tag::EPOCH, tag_kind, epoch as u64]));
        let (mut total, mut count) = (0.0, 0usize);
        for rows in order.chunks(hyper.batch_size) {
            let vb = v.select(Axis(0), rows);
            let bb = batch.select(rows);
            let cache = net.forward_cached(vb.view())?;
            let g: Vec<f64> = cache.output.column(0).to_vec();
            let (loss, dg) = loss_and_grad(spec.kind, &g, &bb)?;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("target network {} epoch {}", spec.kind.name(), epoch + 1),
                });
            }
            let g_out = Array2::from_shape_vec((rows.len(), 1), dg).expect("column");
            grads.iter_mut().for_each(|x| *x = 0.0);
            net.backward(&cache, &g_out, &mut grads);
            opt.step(&mut flat, &grads);
            net.read_params(&flat);
            ema.update(&flat);
            total += loss;
            count += 1;
        }
        history.push(total / count.max(1) as f64);
    }
    let last = net.clone();
    net.read_params(&ema.shadow);
    Ok(TargetModel {
        spec: spec.clone(),
        net,
        last,
        representation: Box::new(tr.clone()),
        history,
    })
}
