//! Stage 1: nuisance functions `(mu_0^x, mu_1^x, pi_1^x)`.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DgpSpec, OracleDataset};
use crate::error::{Error, Result};
use crate::nn::{AdamW, DenseNet, OutputActivation, Params};
use crate::rng::{stream, tag};
use crate::stage0::{TrainedRepresentation, CLIP_THRESHOLD};

/// Hyperparameters of a one-hidden-layer nuisance network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetHyper {
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl NetHyper {
    pub fn synthetic(dim: usize) -> Self {
        NetHyper {
            hidden: 4 * dim,
            learning_rate: 0.005,
            weight_decay: 0.001,
            batch_size: 64,
            epochs: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("nuisance network needs hidden > 0 and batch_size > 0".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("nuisance network needs lr > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// Minibatch AdamW over one dense net. `batch_loss` receives the batch rows
/// and the network output and returns the loss and its output gradient.
fn train_net(
    net: &mut DenseNet,
    x: &Array2<f64>,
    hyper: &NetHyper,
    seed: u64,
    stage: u64,
    mut batch_loss: impl FnMut(&[usize], &Array2<f64>) -> (f64, Array2<f64>),
) -> Result<()> {
    let mut flat = net.flat_params();
    let mut opt = AdamW::new(flat.len(), hyper.learning_rate, hyper.weight_decay);
    let mut grads = vec![0.0; flat.len()];
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut stream(seed, &[stage, tag::EPOCH, epoch as u64]));
        for rows in order.chunks(hyper.batch_size) {
            let xb = x.select(Axis(0), rows);
            let cache = net.forward_cached(xb.view())?;
            let (loss, g_out) = batch_loss(rows, &cache.output);
            step += 1;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("nuisance network, epoch {}", epoch + 1),
                });
            }
            grads.iter_mut().for_each(|g| *g = 0.0);
            net.backward(&cache, &g_out, &mut grads);
            opt.step(&mut flat, &grads);
            net.read_params(&flat);
        }
    }
    Ok(())
}

/// Covariate propensity network `pi_1^x` (sigmoid output).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub net: DenseNet,
}

impl PropensityModel {
    /// `pi_1^x(x)`, clamped to `[1e-6, 1 - 1e-6]`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.forward(x)?.column(0).to_owned())
    }

    /// Mean binary cross-entropy on `data`.
    pub fn bce(&self, data: &Dataset) -> Result<f64> {
        let p = self.predict(data.x.view())?;
        Ok(bce(&p, &data.a))
    }
}

pub(crate) fn bce(p: &Array1<f64>, a: &Array1<f64>) -> f64 {
    let s: f64 = p
        .iter()
        .zip(a)
        .map(|(&p, &a)| if a == 1.0 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    s / p.len() as f64
}

/// Fits a one-hidden-layer propensity network by BCE.
pub fn fit_propensity(data: &Dataset, hyper: &NetHyper, seed: u64) -> Result<PropensityModel> {
    hyper.validate()?;
    let (n0, n1) = data.arm_counts();
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleArmData);
    }
    let mut rng = stream(seed, &[tag::PROPENSITY, tag::INIT]);
    let mut net = DenseNet::new(&[data.dim(), hyper.hidden, 1], OutputActivation::Sigmoid, &mut rng);
    train_net(&mut net, &data.x, hyper, seed, tag::PROPENSITY, |rows, out| {
        let m = rows.len() as f64;
        let mut loss = 0.0;
        let mut g = Array2::zeros((rows.len(), 1));
        for (k, &i) in rows.iter().enumerate() {
            let p = out[[k, 0]];
            if data.a[i] == 1.0 {
                loss -= p.ln();
                g[[k, 0]] = -1.0 / (p * m);
            } else {
                loss -= (1.0 - p).ln();
                g[[k, 0]] = 1.0 / ((1.0 - p) * m);
            }
        }
        (loss / m, g)
    })?;
    Ok(PropensityModel { net })
}

/// Outcome network over raw covariates: one shared hidden layer, two outputs
/// `(mu_0^x, mu_1^x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub net: DenseNet,
}

impl OutcomeModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward(x)
    }

    /// Unweighted factual MSE on `data`.
    pub fn factual_mse(&self, data: &Dataset) -> Result<f64> {
        let out = self.predict(data.x.view())?;
        let s: f64 = (0..data.n())
            .map(|i| (data.y[i] - out[[i, data.a[i] as usize]]).powi(2))
            .sum();
        Ok(s / data.n() as f64)
    }
}

/// Fits the outcome network by unweighted factual MSE.
pub fn fit_outcome(data: &Dataset, hyper: &NetHyper, seed: u64) -> Result<OutcomeModel> {
    hyper.validate()?;
    let mut rng = stream(seed, &[tag::OUTCOME, tag::INIT]);
    let mut net = DenseNet::new(&[data.dim(), hyper.hidden, 2], OutputActivation::Identity, &mut rng);
    train_net(&mut net, &data.x, hyper, seed, tag::OUTCOME, |rows, out| {
        let m = rows.len() as f64;
        let mut loss = 0.0;
        let mut g = Array2::zeros((rows.len(), 2));
        for (k, &i) in rows.iter().enumerate() {
            let arm = data.a[i] as usize;
            let r = out[[k, arm]] - data.y[i];
            loss += r * r;
            g[[k, arm]] = 2.0 * r / m;
        }
        (loss / m, g)
    })?;
    Ok(OutcomeModel { net })
}

/// Ground-truth nuisances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Oracle {
    /// Closed forms of a synthetic generator; evaluable anywhere.
    ClosedForm(DgpSpec),
    /// Stored columns of an oracle dataset; evaluable on its rows only.
    Table(OracleTable),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleTable {
    rows: HashMap<String, (f64, f64, f64)>,
}

impl OracleTable {
    fn key(row: &[f64]) -> String {
        row.iter().map(|v| format!("{:016x}", v.to_bits())).collect()
    }

    pub fn new(data: &OracleDataset) -> Self {
        let rows = data
            .base
            .x
            .outer_iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    Self::key(r.as_slice().expect("contiguous row")),
                    (data.mu0[i], data.mu1[i], data.pi1[i]),
                )
            })
            .collect();
        OracleTable { rows }
    }
}

impl Oracle {
    pub fn from_dataset(data: &OracleDataset) -> Self {
        match &data.source {
            Some(spec) => Oracle::ClosedForm(spec.clone()),
            None => Oracle::Table(OracleTable::new(data)),
        }
    }

    fn at(&self, row: &[f64]) -> Result<(f64, f64, f64)> {
        match self {
            Oracle::ClosedForm(spec) => Ok(spec.oracle_at(row)),
            Oracle::Table(t) => t.rows.get(&OracleTable::key(row)).copied().ok_or_else(|| {
                Error::OracleUnavailable(format!("covariate row {row:?} is not in the oracle table"))
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutcomeSource {
    Heads(Box<TrainedRepresentation>),
    Fresh(OutcomeModel),
    Oracle(Oracle),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PropensitySource {
    Fitted(PropensityModel),
    Oracle(Oracle),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    FromRepresentationHeads,
    FreshOutcomeNet,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NuisancePolicy {
    ReuseHeads,
    FreshOutcomeNet,
    Oracle,
}

impl NuisancePolicy {
    /// Reuse the heads unless balancing constrained a non-invertible encoder.
    pub fn for_representation(tr: &TrainedRepresentation) -> Self {
        if tr.spec.effective_alpha() > 0.0 && !tr.spec.invertible {
            NuisancePolicy::FreshOutcomeNet
        } else {
            NuisancePolicy::ReuseHeads
        }
    }
}

/// Nuisance values on a set of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceValues {
    pub mu0: Array1<f64>,
    pub mu1: Array1<f64>,
    pub pi1: Array1<f64>,
}

impl NuisanceValues {
    pub fn len(&self) -> usize {
        self.pi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi1.is_empty()
    }

    pub fn mu(&self, arm: usize) -> &Array1<f64> {
        if arm == 0 {
            &self.mu0
        } else {
            &self.mu1
        }
    }

    /// `mu^x = (1 - pi_1) mu_0 + pi_1 mu_1`.
    pub fn mu_x(&self, i: usize) -> f64 {
        (1.0 - self.pi1[i]) * self.mu0[i] + self.pi1[i] * self.mu1[i]
    }

    pub fn select(&self, rows: &[usize]) -> NuisanceValues {
        NuisanceValues {
            mu0: rows.iter().map(|&i| self.mu0[i]).collect(),
            mu1: rows.iter().map(|&i| self.mu1[i]).collect(),
            pi1: rows.iter().map(|&i| self.pi1[i]).collect(),
        }
    }
}

/// Fitted `(mu_0^x, mu_1^x, pi_1^x)`; immutable once assembled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub outcome: OutcomeSource,
    pub propensity: PropensitySource,
    pub provenance: Provenance,
}

impl NuisanceSet {
    pub fn oracle(data: &OracleDataset) -> Self {
        let o = Oracle::from_dataset(data);
        NuisanceSet {
            outcome: OutcomeSource::Oracle(o.clone()),
            propensity: PropensitySource::Oracle(o),
            provenance: Provenance::Oracle,
        }
    }

    pub fn evaluate(&self, x: ArrayView2<f64>) -> Result<NuisanceValues> {
        let n = x.nrows();
        let oracle_rows = |o: &Oracle| -> Result<Vec<(f64, f64, f64)>> {
            x.outer_iter().map(|r| o.at(&r.to_vec())).collect()
        };
        let (mu0, mu1) = match &self.outcome {
            OutcomeSource::Heads(tr) => {
                let h = tr.heads(x)?;
                (h.column(0).to_owned(), h.column(1).to_owned())
            }
            OutcomeSource::Fresh(m) => {
                let h = m.predict(x)?;
                (h.column(0).to_owned(), h.column(1).to_owned())
            }
            OutcomeSource::Oracle(o) => {
                let v = oracle_rows(o)?;
                (v.iter().map(|t| t.0).collect(), v.iter().map(|t| t.1).collect())
            }
        };
        let pi1 = match &self.propensity {
            PropensitySource::Fitted(p) => p.predict(x)?,
            PropensitySource::Oracle(o) => oracle_rows(o)?.iter().map(|t| t.2).collect(),
        };
        debug_assert_eq!(pi1.len(), n);
        Ok(NuisanceValues { mu0, mu1, pi1 })
    }
}

/// Binds the outcome nuisances according to `policy` and pairs them with a
/// covariate propensity model.
pub fn assemble_nuisances(
    tr: &TrainedRepresentation,
    data: &Dataset,
    policy: NuisancePolicy,
    propensity: Option<PropensityModel>,
    oracle: Option<&OracleDataset>,
    hyper: &NetHyper,
    seed: u64,
) -> Result<NuisanceSet> {
    if policy == NuisancePolicy::Oracle {
        let o = oracle.ok_or_else(|| Error::OracleUnavailable("no oracle dataset supplied".into()))?;
        return Ok(NuisanceSet::oracle(o));
    }
    let propensity = match propensity {
        Some(p) => p,
        None => fit_propensity(data, hyper, seed)?,
    };
    let (outcome, provenance) = match policy {
        NuisancePolicy::ReuseHeads => (
            OutcomeSource::Heads(Box::new(tr.clone())),
            Provenance::FromRepresentationHeads,
        ),
        _ => (
            OutcomeSource::Fresh(fit_outcome(data, hyper, seed)?),
            Provenance::FreshOutcomeNet,
        ),
    };
    Ok(NuisanceSet {
        outcome,
        propensity: PropensitySource::Fitted(propensity),
        provenance,
    })
}

/// `1{A = a} 1{pi_a >= 0.05} / pi_a` with `pi_0 = 1 - pi_1`.
pub fn clipped_inverse_weight(arm: usize, treatment: f64, pi1: f64) -> f64 {
    if treatment != arm as f64 {
        return 0.0;
    }
    let pa = if arm == 1 { pi1 } else { 1.0 - pi1 };
    if pa >= CLIP_THRESHOLD {
        1.0 / pa
    } else {
        0.0
    }
}
