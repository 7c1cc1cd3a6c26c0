use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Family, RepLearnerSpec, RepresentationNetwork, Selector};
use crate::data::Dataset;
use crate::digest::stable_hash;
use crate::error::{Error, Result};
use crate::nn::{AdamW, Params};
use crate::rng::{stream, tag};

/// Epoch means of the batch loss components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub factual: f64,
    /// `None` when the objective has no balancing term.
    pub balance: Option<f64>,
    pub bce: Option<f64>,
    pub total: f64,
    /// Batches whose balance term was skipped (one arm empty).
    pub balance_skipped: usize,
    /// Batches without any nonzero sample weight.
    pub unusable: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedRepresentation {
    pub spec: RepLearnerSpec,
    pub network: RepresentationNetwork,
    pub history: Vec<EpochRecord>,
}

/// Header written next to serialized networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub family: String,
    pub invertible: bool,
    pub input_dim: usize,
    pub rep_dim: usize,
    pub spec_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    manifest: Manifest,
    representation: TrainedRepresentation,
}

/// Trains a representation network on `data`.
///
/// `covariate_pi1` holds a covariate propensity `pi_1^x` per training row and
/// is required by BWCFR.
pub fn train_representation(
    spec: &RepLearnerSpec,
    data: &Dataset,
    seed: u64,
    covariate_pi1: Option<&[f64]>,
) -> Result<TrainedRepresentation> {
    let n = data.n();
    spec.validate(data.dim())?;
    if spec.family == Family::Bwcfr && covariate_pi1.is_none() {
        return Err(Error::MissingPropensity(spec.display_name().into()));
    }
    if let Some(p) = covariate_pi1 {
        if p.len() != n {
            return Err(Error::LengthMismatch(p.len(), n));
        }
    }
    let mut net = RepresentationNetwork::new(spec, data.dim(), seed)?;
    let mut flat = net.flat_params();
    let n_main = net.main_param_count();
    let mut opt_main = AdamW::new(n_main, spec.learning_rate, spec.weight_decay);
    let mut opt_prop = AdamW::new(flat.len() - n_main, spec.prop_learning_rate, spec.prop_weight_decay);
    let mut grads = vec![0.0; flat.len()];
    let tracks_balance = spec.effective_alpha() > 0.0;

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(spec.epochs);
    let mut step = 0;
    for epoch in 0..spec.epochs {
        let mut rng = stream(seed, &[tag::STAGE0, tag::EPOCH, epoch as u64]);
        order.shuffle(&mut rng);
        let mut rec = EpochRecord {
            epoch: epoch + 1,
            factual: 0.0,
            balance: tracks_balance.then_some(0.0),
            bce: net.propensity.as_ref().map(|_| 0.0),
            total: 0.0,
            balance_skipped: 0,
            unusable: 0,
        };
        let (mut n_batches, mut n_bal) = (0usize, 0usize);
        for rows in order.chunks(spec.batch_size) {
            let x = data.x.select(Axis(0), rows);
            let a: Vec<f64> = rows.iter().map(|&i| data.a[i]).collect();
            let y: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
            let pi: Option<Vec<f64>> = covariate_pi1.map(|p| rows.iter().map(|&i| p[i]).collect());
            grads.iter_mut().for_each(|g| *g = 0.0);
            let terms = net.objective(
                spec.family,
                &spec.balancing,
                x.view(),
                &a,
                &y,
                pi.as_deref(),
                None,
                &mut grads,
            )?;
            step += 1;
            if !terms.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("{} epoch {}", spec.display_name(), epoch + 1),
                });
            }
            if !terms.usable {
                rec.unusable += 1;
                continue;
            }
            opt_main.step(&mut flat[..n_main], &grads[..n_main]);
            if flat.len() > n_main {
                opt_prop.step(&mut flat[n_main..], &grads[n_main..]);
            }
            net.read_params(&flat);

            n_batches += 1;
            rec.factual += terms.factual;
            rec.total += terms.total;
            if let (Some(b), Some(acc)) = (terms.bce, rec.bce.as_mut()) {
                *acc += b;
            }
            if terms.balance_skipped {
                rec.balance_skipped += 1;
            }
            if let (Some(b), Some(acc)) = (terms.balance, rec.balance.as_mut()) {
                *acc += b;
                n_bal += 1;
            }
        }
        let nb = n_batches.max(1) as f64;
        rec.factual /= nb;
        rec.total /= nb;
        if let Some(b) = rec.bce.as_mut() {
            *b /= nb;
        }
        if let Some(b) = rec.balance.as_mut() {
            *b /= n_bal.max(1) as f64;
        }
        history.push(rec);
    }
    Ok(TrainedRepresentation {
        spec: spec.clone(),
        network: net,
        history,
    })
}

impl TrainedRepresentation {
    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn rep_dim(&self) -> usize {
        self.network.rep_dim()
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!("{} covariate columns", self.input_dim()), x.ncols()));
        }
        Ok(())
    }

    pub fn phi(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        self.network.phi(x)
    }

    /// Plug-in outcome predictions `(h_0(Phi(x)), h_1(Phi(x)))`.
    pub fn heads(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        self.network.heads_at(x)
    }

    /// Plug-in CATE `h_1(Phi(x)) - h_0(Phi(x))`.
    pub fn plugin_cate(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let h = self.heads(x)?;
        Ok(&h.column(1) - &h.column(0))
    }

    /// Unweighted factual MSE of the heads on `data`.
    pub fn factual_mse(&self, data: &Dataset) -> Result<f64> {
        let h = self.heads(data.x.view())?;
        let mut s = 0.0;
        for i in 0..data.n() {
            let r = data.y[i] - h[[i, data.a[i] as usize]];
            s += r * r;
        }
        Ok(s / data.n() as f64)
    }

    /// Target-network inputs for a selector.
    pub fn rep_inputs(&self, x: ArrayView2<f64>, selector: Selector) -> Result<Array2<f64>> {
        self.check(&x)?;
        match selector {
            Selector::RawX | Selector::RawXDeep => Ok(x.to_owned()),
            Selector::Phi => self.network.phi(x),
            Selector::Heads => self.network.heads_at(x),
        }
    }

    /// Column count produced by [`Self::rep_inputs`].
    pub fn selector_dim(&self, selector: Selector) -> usize {
        match selector {
            Selector::RawX | Selector::RawXDeep => self.input_dim(),
            Selector::Phi => self.rep_dim(),
            Selector::Heads => 2,
        }
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Ok(Manifest {
            family: self.spec.display_name().to_string(),
            invertible: self.spec.invertible,
            input_dim: self.input_dim(),
            rep_dim: self.rep_dim(),
            spec_hash: stable_hash(&self.spec)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let stored = Stored {
            manifest: self.manifest()?,
            representation: self.clone(),
        };
        let text = serde_json::to_string(&stored)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stored: Stored = serde_json::from_str(&text)?;
        let rep = stored.representation;
        if rep.manifest()? != stored.manifest {
            return Err(Error::InvalidDataset(format!(
                "{}: manifest does not match the stored network",
                path.display()
            )));
        }
        Ok(rep)
    }
}
