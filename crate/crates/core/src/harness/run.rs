use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::table::{self, FailureRow, JobKey, Journal, Record};
use super::tune::{tune_outcome, tune_propensity, tune_representation, HyperGrid, TuneStage};
use crate::balance::{BalancingSpec, Ipm};
use crate::error::{Error, Result};
use crate::eval::{delta_vs_baseline, expansion_ratio, MetricReport, Summary};
use crate::nuisance::{assemble_nuisances, fit_propensity, NuisancePolicy};
use crate::ortho::{fit_target_on, LossKind, Quantity, TargetBatch};
use crate::stage0::{train_representation, Family, Selector};

/// Loss column of plug-in baseline rows.
pub const PLUGIN: &str = "plug-in";
/// IPM column of runs without a balancing term.
pub const NO_IPM: &str = "none";
/// Selector column of rows that do not use a target network.
pub const NO_SELECTOR: &str = "-";

const QUANTITIES: [Quantity; 3] = [Quantity::Capo0, Quantity::Capo1, Quantity::Cate];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    /// Unconstrained representations (TARNet, BNN) with every selector and loss.
    One,
    /// Balancing-strength sweep.
    Two,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::One => "setting1",
            Setting::Two => "setting2",
        }
    }

    pub fn results_path(self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_results.csv", self.name()))
    }

    pub fn baselines_path(self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_baselines.csv", self.name()))
    }

    pub fn failures_path(self, dir: &Path) -> PathBuf {
        dir.join(format!("{}_failures.csv", self.name()))
    }
}

pub fn expansion_path(dir: &Path) -> PathBuf {
    dir.join("setting2_expansion.csv")
}

pub fn ratios_path(dir: &Path) -> PathBuf {
    dir.join("setting2_ratios.csv")
}

/// One line of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub family: String,
    pub invertible: bool,
    pub metric_kind: String,
    pub alpha: f64,
    pub ipm: String,
    pub selector: String,
    pub loss: String,
    pub seed: u64,
    pub quantity: String,
    pub value: f64,
    pub baseline_value: f64,
    pub delta: f64,
}

impl Record for ResultRow {
    fn job(&self) -> JobKey {
        JobKey {
            config_hash: self.config_hash.clone(),
            family: self.family.clone(),
            invertible: self.invertible,
            alpha_bits: self.alpha.to_bits(),
            ipm: self.ipm.clone(),
            seed: self.seed,
        }
    }

    fn cell(&self) -> Vec<String> {
        vec![self.selector.clone(), self.loss.clone(), self.quantity.clone()]
    }
}

/// Plug-in metrics of one trained representation (one row per job).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub config_hash: String,
    pub family: String,
    pub invertible: bool,
    pub alpha: f64,
    pub ipm: String,
    pub seed: u64,
    pub rmse_capo0: f64,
    pub rmse_capo1: f64,
    pub rpehe: f64,
}

impl BaselineRow {
    pub fn value(&self, q: Quantity) -> f64 {
        match q {
            Quantity::Capo0 => self.rmse_capo0,
            Quantity::Capo1 => self.rmse_capo1,
            Quantity::Cate => self.rpehe,
        }
    }

    /// The same numbers in results-row form (loss `plug-in`).
    pub fn as_result_rows(&self) -> Vec<ResultRow> {
        QUANTITIES
            .iter()
            .map(|&q| ResultRow {
                config_hash: self.config_hash.clone(),
                family: self.family.clone(),
                invertible: self.invertible,
                metric_kind: q.metric_name().to_string(),
                alpha: self.alpha,
                ipm: self.ipm.clone(),
                selector: NO_SELECTOR.to_string(),
                loss: PLUGIN.to_string(),
                seed: self.seed,
                quantity: q.name().to_string(),
                value: self.value(q),
                baseline_value: self.value(q),
                delta: 0.0,
            })
            .collect()
    }
}

impl Record for BaselineRow {
    fn job(&self) -> JobKey {
        JobKey {
            config_hash: self.config_hash.clone(),
            family: self.family.clone(),
            invertible: self.invertible,
            alpha_bits: self.alpha.to_bits(),
            ipm: self.ipm.clone(),
            seed: self.seed,
        }
    }

    fn cell(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Pairwise expansion of the learned representation on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub config_hash: String,
    pub family: String,
    pub invertible: bool,
    pub alpha: f64,
    pub ipm: String,
    pub seed: u64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub pairs: usize,
}

impl Record for ExpansionRow {
    fn job(&self) -> JobKey {
        JobKey {
            config_hash: self.config_hash.clone(),
            family: self.family.clone(),
            invertible: self.invertible,
            alpha_bits: self.alpha.to_bits(),
            ipm: self.ipm.clone(),
            seed: self.seed,
        }
    }

    fn cell(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Metric of a method divided by the same-seed, same-family plug-in metric
/// at alpha = 0, aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub config_hash: String,
    pub family: String,
    pub invertible: bool,
    pub ipm: String,
    pub method: String,
    pub quantity: String,
    pub alpha: f64,
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Record for RatioRow {
    fn job(&self) -> JobKey {
        JobKey {
            config_hash: self.config_hash.clone(),
            family: self.family.clone(),
            invertible: self.invertible,
            alpha_bits: self.alpha.to_bits(),
            ipm: self.ipm.clone(),
            seed: 0,
        }
    }

    fn cell(&self) -> Vec<String> {
        vec![self.method.clone(), self.quantity.clone()]
    }
}

/// One representation to train.
#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub family: Family,
    pub invertible: bool,
    pub alpha: f64,
    /// `None` when no balancing term is active.
    pub ipm: Option<Ipm>,
    pub seed: u64,
}

impl Job {
    pub fn family_name(&self) -> &'static str {
        self.family.name(self.invertible)
    }

    pub fn ipm_name(&self) -> &'static str {
        self.ipm.map(|m| m.name()).unwrap_or(NO_IPM)
    }

    pub fn key(&self, hash: &str) -> JobKey {
        JobKey {
            config_hash: hash.to_string(),
            family: self.family_name().to_string(),
            invertible: self.invertible,
            alpha_bits: self.alpha.to_bits(),
            ipm: self.ipm_name().to_string(),
            seed: self.seed,
        }
    }
}

/// Jobs of a setting in a fixed order. Alpha = 0 (or a family without a
/// balancing term) is run once and shared by every IPM.
pub fn jobs(setting: Setting, cfg: &ExperimentConfig) -> Result<Vec<Job>> {
    let mut out = Vec::new();
    match setting {
        Setting::One => {
            for (family, invertible) in cfg.families(&cfg.setting1_families)? {
                for &seed in &cfg.seeds {
                    out.push(Job {
                        family,
                        invertible,
                        alpha: 0.0,
                        ipm: None,
                        seed,
                    });
                }
            }
        }
        Setting::Two => {
            let ipms = cfg.ipm_list()?;
            let mut alphas = cfg.alphas.clone();
            alphas.sort_by(f64::total_cmp);
            alphas.dedup();
            for (family, invertible) in cfg.families(&cfg.setting2_families)? {
                for &seed in &cfg.seeds {
                    let mut zero_done = false;
                    for &alpha in &alphas {
                        if alpha == 0.0 || !family.balances() {
                            if !zero_done {
                                out.push(Job {
                                    family,
                                    invertible,
                                    alpha: 0.0,
                                    ipm: None,
                                    seed,
                                });
                                zero_done = true;
                            }
                            continue;
                        }
                        for ipm in &ipms {
                            out.push(Job {
                                family,
                                invertible,
                                alpha,
                                ipm: Some(*ipm),
                                seed,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Stage-2 cells evaluated for every job of a setting.
fn cells(setting: Setting, cfg: &ExperimentConfig) -> Result<(Vec<Selector>, Vec<LossKind>)> {
    match setting {
        Setting::One => Ok((cfg.selector_list()?, cfg.loss_list(&cfg.losses)?)),
        Setting::Two => Ok((
            vec![Selector::parse(&cfg.setting2_selector)?],
            cfg.loss_list(&cfg.setting2_losses)?,
        )),
    }
}

#[derive(Clone, Debug, Default)]
pub struct JobOutput {
    pub rows: Vec<ResultRow>,
    pub baseline: Option<BaselineRow>,
    pub expansion: Option<ExpansionRow>,
    pub failures: Vec<FailureRow>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    hash: &'a str,
    job: &'a Job,
}

impl Ctx<'_> {
    fn baseline(&self, v: [f64; 3]) -> BaselineRow {
        BaselineRow {
            config_hash: self.hash.to_string(),
            family: self.job.family_name().to_string(),
            invertible: self.job.invertible,
            alpha: self.job.alpha,
            ipm: self.job.ipm_name().to_string(),
            seed: self.job.seed,
            rmse_capo0: v[0],
            rmse_capo1: v[1],
            rpehe: v[2],
        }
    }

    fn row(&self, selector: &str, loss: &str, q: Quantity, value: f64, baseline: f64) -> ResultRow {
        ResultRow {
            config_hash: self.hash.to_string(),
            family: self.job.family_name().to_string(),
            invertible: self.job.invertible,
            metric_kind: q.metric_name().to_string(),
            alpha: self.job.alpha,
            ipm: self.job.ipm_name().to_string(),
            selector: selector.to_string(),
            loss: loss.to_string(),
            seed: self.job.seed,
            quantity: q.name().to_string(),
            value,
            baseline_value: baseline,
            delta: value - baseline,
        }
    }

    fn failure(&self, selector: &str, loss: &str, err: &Error) -> FailureRow {
        FailureRow {
            config_hash: self.hash.to_string(),
            family: self.job.family_name().to_string(),
            invertible: self.job.invertible,
            alpha: self.job.alpha,
            ipm: self.job.ipm_name().to_string(),
            seed: self.job.seed,
            selector: selector.to_string(),
            loss: loss.to_string(),
            error: err.to_string(),
        }
    }
}

/// Runs one job; failures become NaN rows plus failure records.
pub fn run_job(setting: Setting, cfg: &ExperimentConfig, hash: &str, job: &Job) -> Result<JobOutput> {
    let (selectors, losses) = cells(setting, cfg)?;
    let ctx = Ctx { cfg, hash, job };
    log::info!(
        "{} {} alpha={} ipm={} seed={}",
        setting.name(),
        job.family_name(),
        job.alpha,
        job.ipm_name(),
        job.seed
    );
    match pipeline(setting, &ctx, &selectors, &losses) {
        Ok(out) => Ok(out),
        Err(e) => {
            log::warn!("{} {} seed {} failed: {e}", setting.name(), job.family_name(), job.seed);
            let mut out = JobOutput {
                baseline: Some(ctx.baseline([f64::NAN; 3])),
                ..Default::default()
            };
            for sel in &selectors {
                for kind in &losses {
                    out.rows.push(ctx.row(sel.name(), kind.name(), kind.quantity(), f64::NAN, f64::NAN));
                }
            }
            out.failures.push(ctx.failure(NO_SELECTOR, "*", &e));
            Ok(out)
        }
    }
}

fn pipeline(setting: Setting, ctx: &Ctx, selectors: &[Selector], losses: &[LossKind]) -> Result<JobOutput> {
    let (cfg, job) = (ctx.cfg, ctx.job);
    let seed = job.seed;
    let (train, test) = cfg.datasets(seed)?;
    let data = &train.base;
    let dim = data.dim();
    let balancing = BalancingSpec {
        metric: job.ipm.unwrap_or_else(Ipm::wasserstein),
        alpha: job.alpha,
    };
    let mut spec = cfg.rep_spec(job.family, job.invertible, balancing, dim);
    let mut prop_hyper = cfg.nuisance_hyper(dim);
    let mut out_hyper = prop_hyper.clone();

    if cfg.tuning {
        let (draws, folds, r) = (cfg.tuning_draws, cfg.tuning_folds, cfg.width_multiplier);
        let g = HyperGrid::standard(TuneStage::Propensity, dim, dim, r);
        prop_hyper = tune_propensity(&prop_hyper, &g, data, draws, folds, seed)?.best.apply_net(&prop_hyper);
    }
    let propensity = fit_propensity(data, &prop_hyper, seed)?;
    let pi_train = propensity.predict(data.x.view())?.to_vec();
    let covariate_pi = (job.family == Family::Bwcfr).then_some(pi_train.as_slice());
    if cfg.tuning {
        let g = HyperGrid::standard(TuneStage::Representation, dim, spec.rep_dim, cfg.width_multiplier);
        let t = tune_representation(&spec, &g, data, cfg.tuning_draws, cfg.tuning_folds, seed, covariate_pi)?;
        spec = t.best.apply_rep(&spec);
    }
    let tr = train_representation(&spec, data, seed, covariate_pi)?;

    let heads = tr.heads(test.base.x.view())?;
    let plugin_pred: [Array1<f64>; 3] = [
        heads.column(0).to_owned(),
        heads.column(1).to_owned(),
        &heads.column(1) - &heads.column(0),
    ];
    let mut plugin = Vec::with_capacity(3);
    for (q, pred) in QUANTITIES.iter().zip(&plugin_pred) {
        plugin.push(MetricReport::evaluate(*q, pred.view(), &test, PLUGIN, seed)?);
    }
    let mut out = JobOutput {
        baseline: Some(ctx.baseline([plugin[0].value, plugin[1].value, plugin[2].value])),
        ..Default::default()
    };

    let policy = NuisancePolicy::for_representation(&tr);
    if cfg.tuning && policy == NuisancePolicy::FreshOutcomeNet {
        let g = HyperGrid::standard(TuneStage::Outcome, dim, dim, cfg.width_multiplier);
        out_hyper = tune_outcome(&out_hyper, &g, data, cfg.tuning_draws, cfg.tuning_folds, seed)?
            .best
            .apply_net(&out_hyper);
    }
    let nuisances = assemble_nuisances(&tr, data, policy, Some(propensity), None, &out_hyper, seed)?;
    let values = nuisances.evaluate(data.x.view())?;
    let batch = TargetBatch::new(data.a.clone(), data.y.clone(), values)?;

    for &sel in selectors {
        let v = match tr.rep_inputs(data.x.view(), sel) {
            Ok(v) => v,
            Err(e) => {
                for &kind in losses {
                    let q = kind.quantity();
                    out.rows.push(ctx.row(sel.name(), kind.name(), q, f64::NAN, f64::NAN));
                    out.failures.push(ctx.failure(sel.name(), kind.name(), &e));
                }
                continue;
            }
        };
        for &kind in losses {
            let q = kind.quantity();
            let base = &plugin[QUANTITIES.iter().position(|x| *x == q).expect("quantity")];
            let result = (|| {
                let lspec = cfg.loss_spec(kind, sel, tr.spec.hidden_head);
                let model = fit_target_on(&lspec, &tr, &v, &batch, seed)?;
                let pred = model.predict(test.base.x.view())?;
                let rep = MetricReport::evaluate(q, pred.view(), &test, kind.name(), seed)?;
                delta_vs_baseline(&rep, base)?;
                Ok::<f64, Error>(rep.value)
            })();
            match result {
                Ok(value) => out.rows.push(ctx.row(sel.name(), kind.name(), q, value, base.value)),
                Err(e) => {
                    out.rows.push(ctx.row(sel.name(), kind.name(), q, f64::NAN, base.value));
                    out.failures.push(ctx.failure(sel.name(), kind.name(), &e));
                }
            }
        }
    }

    if setting == Setting::Two {
        match expansion_ratio(|x| tr.phi(x), data.x.view(), seed) {
            Ok(s) => {
                out.expansion = Some(ExpansionRow {
                    config_hash: ctx.hash.to_string(),
                    family: job.family_name().to_string(),
                    invertible: job.invertible,
                    alpha: job.alpha,
                    ipm: job.ipm_name().to_string(),
                    seed,
                    q1: s.q1,
                    median: s.median,
                    q3: s.q3,
                    pairs: s.pairs,
                })
            }
            Err(e) => out.failures.push(ctx.failure(NO_SELECTOR, "expansion", &e)),
        }
    }
    Ok(out)
}

/// Ratios against the same-seed alpha = 0 plug-in of the same family,
/// aggregated over seeds. Plug-in baselines enter as method `plug-in`; the
/// alpha = 0 point is repeated under every IPM in `ipms`.
pub fn ratios(rows: &[ResultRow], baselines: &[BaselineRow], ipms: &[&str]) -> Vec<RatioRow> {
    type Base = (String, String, bool, u64, String);
    let mut base: BTreeMap<Base, f64> = BTreeMap::new();
    let plugin_rows: Vec<ResultRow> = baselines.iter().flat_map(BaselineRow::as_result_rows).collect();
    for r in &plugin_rows {
        if r.alpha == 0.0 && r.value.is_finite() && r.value > 0.0 {
            base.insert(
                (r.config_hash.clone(), r.family.clone(), r.invertible, r.seed, r.quantity.clone()),
                r.value,
            );
        }
    }
    type Group = (String, String, bool, String, String, String, u64);
    let mut groups: BTreeMap<Group, Vec<f64>> = BTreeMap::new();
    for r in plugin_rows.iter().chain(rows) {
        let Some(b) = base.get(&(r.config_hash.clone(), r.family.clone(), r.invertible, r.seed, r.quantity.clone()))
        else {
            continue;
        };
        if !r.value.is_finite() {
            continue;
        }
        let targets: Vec<String> = if r.ipm == NO_IPM {
            ipms.iter().map(|s| s.to_string()).collect()
        } else {
            vec![r.ipm.clone()]
        };
        for ipm in targets {
            groups
                .entry((
                    r.config_hash.clone(),
                    r.family.clone(),
                    r.invertible,
                    ipm,
                    r.loss.clone(),
                    r.quantity.clone(),
                    r.alpha.to_bits(),
                ))
                .or_default()
                .push(r.value / b);
        }
    }
    groups
        .into_iter()
        .filter_map(|((config_hash, family, invertible, ipm, method, quantity, alpha), v)| {
            let s = Summary::of(&v).ok()?;
            Some(RatioRow {
                config_hash,
                family,
                invertible,
                ipm,
                method,
                quantity,
                alpha: f64::from_bits(alpha),
                mean: s.mean,
                se: s.se(),
                n: s.n,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub setting: Setting,
    pub config_hash: String,
    pub jobs_total: usize,
    pub jobs_run: usize,
    pub jobs_skipped: usize,
    pub new_failures: usize,
    pub results: PathBuf,
}

fn load_with_journal<R: Record>(path: &Path) -> Result<(Vec<R>, Journal)> {
    let journal = Journal::for_table(path);
    let mut rows: Vec<R> = table::load(path, false)?;
    rows.extend(journal.load::<R>()?);
    Ok((rows, journal))
}

/// Runs every job of `setting` not yet present in `out_dir` on a pool of
/// `threads` workers. Output tables are sorted, so their bytes do not depend
/// on the worker count or completion order.
pub fn run_setting(setting: Setting, cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let hash = cfg.hash()?;
    let results_path = setting.results_path(out_dir);
    let baselines_path = setting.baselines_path(out_dir);
    let failures_path = setting.failures_path(out_dir);
    let exp_path = expansion_path(out_dir);

    let (mut rows, j_rows) = load_with_journal::<ResultRow>(&results_path)?;
    let (mut baselines, j_base) = load_with_journal::<BaselineRow>(&baselines_path)?;
    let (mut failures, j_fail) = load_with_journal::<FailureRow>(&failures_path)?;
    let (mut expansion, j_exp) = if setting == Setting::Two {
        load_with_journal::<ExpansionRow>(&exp_path)?
    } else {
        (Vec::new(), Journal::for_table(&exp_path))
    };

    // a job's baseline row is journaled last, so it marks completion
    let done: HashSet<JobKey> = baselines.iter().map(Record::job).collect();
    let all = jobs(setting, cfg)?;
    let todo: Vec<&Job> = all.iter().filter(|j| !done.contains(&j.key(&hash))).collect();
    log::info!(
        "{} config {hash}: {} jobs, {} already complete",
        setting.name(),
        all.len(),
        all.len() - todo.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let journal_lock = Mutex::new(());
    let outputs: Vec<Result<JobOutput>> = pool.install(|| {
        todo.par_iter()
            .map(|job| {
                let out = run_job(setting, cfg, &hash, job)?;
                let _guard = journal_lock.lock().unwrap_or_else(|p| p.into_inner());
                j_fail.append(&out.failures)?;
                if let Some(e) = &out.expansion {
                    j_exp.append(std::slice::from_ref(e))?;
                }
                j_rows.append(&out.rows)?;
                if let Some(b) = &out.baseline {
                    j_base.append(std::slice::from_ref(b))?;
                }
                Ok(out)
            })
            .collect()
    });
    let mut new_failures = 0;
    for out in outputs {
        let out = out?;
        new_failures += out.failures.len();
        rows.extend(out.rows);
        baselines.extend(out.baseline);
        failures.extend(out.failures);
        expansion.extend(out.expansion);
    }

    let rows = table::normalize(rows);
    let baselines = table::normalize(baselines);
    table::write(&results_path, &rows)?;
    table::write(&baselines_path, &baselines)?;
    table::write(&failures_path, &table::normalize(failures))?;
    if setting == Setting::Two {
        table::write(&exp_path, &table::normalize(expansion))?;
        let names: Vec<&str> = cfg.ipm_list()?.iter().map(|m| m.name()).collect();
        let current: Vec<ResultRow> = rows.iter().filter(|r| r.config_hash == hash).cloned().collect();
        let current_base: Vec<BaselineRow> = baselines.iter().filter(|r| r.config_hash == hash).cloned().collect();
        let mut all_ratios: Vec<RatioRow> = table::load::<RatioRow>(&ratios_path(out_dir), false)?
            .into_iter()
            .filter(|r| r.config_hash != hash)
            .collect();
        all_ratios.extend(ratios(&current, &current_base, &names));
        table::write(&ratios_path(out_dir), &table::normalize(all_ratios))?;
        j_exp.remove()?;
    }
    for j in [&j_rows, &j_base, &j_fail] {
        j.remove()?;
    }
    Ok(RunSummary {
        setting,
        config_hash: hash,
        jobs_total: all.len(),
        jobs_run: todo.len(),
        jobs_skipped: all.len() - todo.len(),
        new_failures,
        results: results_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![0, 1],
            alphas: vec![0.0, 0.5, 1.0],
            ..Default::default()
        }
    }

    #[test]
    fn setting_one_has_one_job_per_family_and_seed() {
        let j = jobs(Setting::One, &cfg()).unwrap();
        assert_eq!(j.len(), 4);
        assert!(j.iter().all(|j| j.alpha == 0.0 && j.ipm.is_none()));
    }

    #[test]
    fn setting_two_shares_the_unbalanced_run() {
        let mut c = cfg();
        c.setting2_families = vec!["CFRFlow".into(), "TARNet".into()];
        let j = jobs(Setting::Two, &c).unwrap();
        // CFRFlow: 1 + 2 alphas x 2 ipms; TARNet: 1
        assert_eq!(j.len(), 2 * (1 + 4) + 2);
        let zero: Vec<_> = j.iter().filter(|j| j.alpha == 0.0).collect();
        assert_eq!(zero.len(), 4);
    }

    #[test]
    fn ratio_normalizes_by_alpha_zero_plugin() {
        let base = |alpha: f64, ipm: &str, seed: u64, v: f64| BaselineRow {
            config_hash: "h".into(),
            family: "CFRFlow".into(),
            invertible: true,
            alpha,
            ipm: ipm.into(),
            seed,
            rmse_capo0: 1.0,
            rmse_capo1: 1.0,
            rpehe: v,
        };
        let or = ResultRow {
            config_hash: "h".into(),
            family: "CFRFlow".into(),
            invertible: true,
            metric_kind: "rPEHE".into(),
            alpha: 1.0,
            ipm: "WM".into(),
            selector: "Phi".into(),
            loss: "DRK".into(),
            seed: 0,
            quantity: "CATE".into(),
            value: 1.0,
            baseline_value: 3.0,
            delta: -2.0,
        };
        let baselines = vec![
            base(0.0, NO_IPM, 0, 2.0),
            base(0.0, NO_IPM, 1, 4.0),
            base(1.0, "WM", 0, 3.0),
            base(1.0, "WM", 1, 2.0),
        ];
        let r = ratios(&[or], &baselines, &["MMD", "WM"]);
        let find = |ipm: &str, m: &str, a: f64| {
            r.iter()
                .find(|x| x.ipm == ipm && x.method == m && x.alpha == a && x.quantity == "CATE")
                .unwrap()
        };
        assert_eq!(find("MMD", PLUGIN, 0.0).mean, 1.0);
        assert_eq!(find("WM", PLUGIN, 0.0).n, 2);
        assert_eq!(find("WM", PLUGIN, 1.0).mean, 1.0);
        assert_eq!(find("WM", "DRK", 1.0).mean, 0.5);
        assert!(r.iter().all(|x| !(x.ipm == "MMD" && x.alpha == 1.0)));
    }
}
