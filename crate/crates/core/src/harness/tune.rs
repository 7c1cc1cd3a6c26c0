use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::{bce, fit_outcome, fit_propensity, NetHyper};
use crate::rng::{stream, tag};
use crate::stage0::{train_representation, RepLearnerSpec};

/// Which network a search is run for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuneStage {
    Representation,
    Propensity,
    Outcome,
}

impl TuneStage {
    pub fn name(self) -> &'static str {
        match self {
            TuneStage::Representation => "representation",
            TuneStage::Propensity => "propensity",
            TuneStage::Outcome => "outcome",
        }
    }
}

/// One point of the search space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Encoder (or nuisance network) width.
    pub hidden: usize,
    /// Head / auxiliary head width; unused by nuisance networks.
    pub hidden_head: usize,
}

impl Candidate {
    pub fn apply_rep(&self, base: &RepLearnerSpec) -> RepLearnerSpec {
        RepLearnerSpec {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            hidden_phi: self.hidden,
            hidden_head: self.hidden_head,
            hidden_aux: self.hidden_head,
            prop_learning_rate: self.learning_rate,
            prop_weight_decay: self.weight_decay,
            ..base.clone()
        }
    }

    pub fn apply_net(&self, base: &NetHyper) -> NetHyper {
        NetHyper {
            hidden: self.hidden,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: base.epochs,
        }
    }
}

/// Discrete search space; candidates are the cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub learning_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub weight_decay: Vec<f64>,
    pub hidden: Vec<usize>,
    pub hidden_head: Vec<usize>,
}

/// Widths `{R d, 1.5 R d, 2 R d}`.
pub fn width_grid(d: usize, r: f64) -> Vec<usize> {
    let mut w: Vec<usize> = [1.0, 1.5, 2.0]
        .iter()
        .map(|m| ((m * r * d as f64).round() as usize).max(1))
        .collect();
    w.dedup();
    w
}

impl HyperGrid {
    /// Default ranges for `stage` with input dimension `d_in` and
    /// representation dimension `d_phi`.
    pub fn standard(stage: TuneStage, d_in: usize, d_phi: usize, r: f64) -> Self {
        let hidden_head = match stage {
            TuneStage::Representation => width_grid(d_phi, r),
            _ => vec![0],
        };
        HyperGrid {
            learning_rate: vec![0.001, 0.005, 0.01],
            batch_size: vec![32, 64, 128],
            weight_decay: vec![0.0, 0.001, 0.01, 0.1],
            hidden: width_grid(d_in, r),
            hidden_head,
        }
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &batch_size in &self.batch_size {
                for &weight_decay in &self.weight_decay {
                    for &hidden in &self.hidden {
                        for &hidden_head in &self.hidden_head {
                            out.push(Candidate {
                                learning_rate,
                                batch_size,
                                weight_decay,
                                hidden,
                                hidden_head,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub stage: TuneStage,
    pub best: Candidate,
    /// Position of `best` among the evaluated draws.
    pub best_draw: usize,
    /// Evaluated draws with their mean validation loss.
    pub scores: Vec<(Candidate, f64)>,
}

/// Row indices of the `k`-fold partition.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[tag::TUNE, tag::FOLDS]));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in order.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

/// Random search: evaluates up to `draws` distinct candidates by `folds`-fold
/// cross-validated `score(candidate, train, validation, train_rows)` and
/// returns the minimiser (earliest draw on ties). Candidates whose training
/// diverges score `+inf`.
pub fn random_search<F>(
    stage: TuneStage,
    grid: &HyperGrid,
    data: &Dataset,
    draws: usize,
    folds: usize,
    seed: u64,
    score: F,
) -> Result<TuneOutcome>
where
    F: Fn(&Candidate, &Dataset, &Dataset, &[usize]) -> Result<f64>,
{
    let mut pool = grid.candidates();
    if pool.is_empty() || draws == 0 {
        return Err(Error::EmptyGrid);
    }
    if folds < 2 || folds > data.n() {
        return Err(Error::InvalidConfig(format!(
            "cross-validation needs 2 <= folds <= n, got {folds} folds for {} rows",
            data.n()
        )));
    }
    pool.shuffle(&mut stream(seed, &[tag::TUNE, stage as u64]));
    pool.truncate(draws);
    let parts = fold_indices(data.n(), folds, seed);
    let mut scores = Vec::with_capacity(pool.len());
    for cand in &pool {
        let mut total = 0.0;
        for k in 0..folds {
            let train_rows: Vec<usize> = (0..folds).filter(|&j| j != k).flat_map(|j| parts[j].iter().copied()).collect();
            let train = data.select(&train_rows);
            let val = data.select(&parts[k]);
            let s = match score(cand, &train, &val, &train_rows) {
                Ok(s) if s.is_finite() => s,
                Ok(_) | Err(Error::NonFiniteLoss { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            total += s;
        }
        scores.push((*cand, total / folds as f64));
    }
    let mut best_draw = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s < scores[best_draw].1 {
            best_draw = i;
        }
    }
    log::info!(
        "tuned {} over {} draws: best draw {best_draw} with CV loss {:.5}",
        stage.name(),
        scores.len(),
        scores[best_draw].1
    );
    Ok(TuneOutcome {
        stage,
        best: scores[best_draw].0,
        best_draw,
        scores,
    })
}

/// Tunes a representation network on validation factual MSE (plus the BCE
/// of the representation propensity head for CFR-ISW).
pub fn tune_representation(
    base: &RepLearnerSpec,
    grid: &HyperGrid,
    data: &Dataset,
    draws: usize,
    folds: usize,
    seed: u64,
    covariate_pi1: Option<&[f64]>,
) -> Result<TuneOutcome> {
    random_search(TuneStage::Representation, grid, data, draws, folds, seed, |c, train, val, rows| {
        let spec = c.apply_rep(base);
        let pi: Option<Vec<f64>> = covariate_pi1.map(|p| rows.iter().map(|&i| p[i]).collect());
        let tr = train_representation(&spec, train, seed, pi.as_deref())?;
        let mut loss = tr.factual_mse(val)?;
        if let Some(p) = tr.network.propensity_phi(val.x.view())? {
            loss += bce(&p, &val.a);
        }
        Ok(loss)
    })
}

/// Tunes the covariate propensity network on validation BCE.
pub fn tune_propensity(
    base: &NetHyper,
    grid: &HyperGrid,
    data: &Dataset,
    draws: usize,
    folds: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    random_search(TuneStage::Propensity, grid, data, draws, folds, seed, |c, train, val, _| {
        fit_propensity(train, &c.apply_net(base), seed)?.bce(val)
    })
}

/// Tunes the outcome network on validation factual MSE.
pub fn tune_outcome(
    base: &NetHyper,
    grid: &HyperGrid,
    data: &Dataset,
    draws: usize,
    folds: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    random_search(TuneStage::Outcome, grid, data, draws, folds, seed, |c, train, val, _| {
        fit_outcome(train, &c.apply_net(base), seed)?.factual_mse(val)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DgpSpec;

    fn small() -> Dataset {
        DgpSpec::kallus(60, 1).generate().unwrap().base
    }

    fn grid() -> HyperGrid {
        HyperGrid {
            learning_rate: vec![0.001, 0.005],
            batch_size: vec![32],
            weight_decay: vec![0.0, 0.01],
            hidden: vec![4],
            hidden_head: vec![0],
        }
    }

    #[test]
    fn empty_grid_is_an_error() {
        let mut g = grid();
        g.batch_size.clear();
        let r = random_search(TuneStage::Outcome, &g, &small(), 5, 3, 0, |_, _, _, _| Ok(1.0));
        assert!(matches!(r, Err(Error::EmptyGrid)));
    }

    #[test]
    fn ties_go_to_the_earliest_draw() {
        let out = random_search(TuneStage::Outcome, &grid(), &small(), 10, 3, 0, |_, _, _, _| Ok(1.0)).unwrap();
        assert_eq!(out.best_draw, 0);
        assert_eq!(out.scores.len(), 4);
        assert_eq!(out.best, out.scores[0].0);
    }

    #[test]
    fn dominating_candidate_wins() {
        // lr 0.005 with wd 0.01 is strictly better on every fold
        let out = random_search(TuneStage::Outcome, &grid(), &small(), 10, 4, 3, |c, _, val, _| {
            let good = c.learning_rate == 0.005 && c.weight_decay == 0.01;
            Ok(val.n() as f64 + if good { 0.0 } else { 1.0 })
        })
        .unwrap();
        assert_eq!((out.best.learning_rate, out.best.weight_decay), (0.005, 0.01));
    }

    #[test]
    fn divergent_candidates_score_infinite() {
        let out = random_search(TuneStage::Outcome, &grid(), &small(), 10, 3, 0, |c, _, _, _| {
            if c.weight_decay == 0.0 {
                Err(Error::NonFiniteLoss { step: 1, detail: "x".into() })
            } else {
                Ok(2.0)
            }
        })
        .unwrap();
        assert_eq!(out.best.weight_decay, 0.01);
        assert!(out.scores.iter().any(|(_, s)| s.is_infinite()));
    }

    #[test]
    fn folds_partition_rows() {
        let f = fold_indices(23, 5, 9);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(f.iter().all(|p| p.len() >= 4));
    }

    #[test]
    fn standard_grids_match_widths() {
        let g = HyperGrid::standard(TuneStage::Representation, 2, 2, 2.0);
        assert_eq!(g.hidden, vec![4, 6, 8]);
        assert_eq!(g.candidates().len(), 3 * 3 * 4 * 3 * 3);
        assert_eq!(HyperGrid::standard(TuneStage::Propensity, 2, 2, 2.0).candidates().len(), 108);
    }

    #[test]
    fn real_nuisance_search_runs() {
        let data = small();
        let mut base = NetHyper::synthetic(2);
        base.epochs = 3;
        let out = tune_outcome(&base, &grid(), &data, 2, 2, 0).unwrap();
        assert_eq!(out.scores.len(), 2);
        assert!(out.scores.iter().all(|(_, s)| s.is_finite()));
    }
}
