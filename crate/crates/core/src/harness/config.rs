use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balance::{Bandwidth, BalancingSpec, Ipm};
use crate::data::{load_csv, DgpKind, DgpSpec, Loaded, OracleDataset};
use crate::digest::short_hash;
use crate::error::{Error, Result};
use crate::nuisance::NetHyper;
use crate::ortho::{LossKind, OrthogonalLossSpec, TargetHyper};
use crate::rng::{derive, tag};
use crate::stage0::{Family, RepLearnerSpec, Selector};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding `out_dir`.
pub const OUT_DIR_ENV: &str = "ORL_OUT_DIR";

/// Human-readable schema, printed on usage errors.
pub const SCHEMA: &str = r#"Experiment config (TOML, flat key = value; every key optional except schema_version)

schema_version      = 1
dgp                 = "kallus" | "hcmnist"     synthetic generator
data_csv            = "path.csv"               external data instead of a generator
n_train             = 500
n_test              = 2000
gamma_star          = 2.718281828459045        hcmnist confounding strength
image_dim           = 784                      hcmnist pixel count
seeds               = [0, 1, 2]
setting1_families   = ["TARNet", "BNN"]
setting2_families   = ["CFR", "CFRFlow"]
alphas              = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0]
ipms                = ["MMD", "WM"]
selectors           = ["Heads", "X", "X*", "Phi"]
losses              = ["DRK0", "DRFS0", "DRK1", "DRFS1", "DRK", "R", "IVW"]
setting2_selector   = "Phi"
setting2_losses     = ["DRK0", "DRK1", "DRK"]
rep_dim             = 2
epochs              = 200
learning_rate       = 0.005
weight_decay        = 0.001
batch_size          = 64
width_multiplier    = 2.0                      R in the width grid {R d, 1.5 R d, 2 R d}
flow_blocks         = 4
flow_depth          = 3
wm_epsilon          = 0.1
wm_iterations       = 100
mmd_bandwidth       = 0.0                      0 = median heuristic
target_epochs       = 200
target_learning_rate = 0.005
target_batch_size   = 64
ema                 = 0.995
tuning              = false
tuning_draws        = 50
tuning_folds        = 5
train_family        = "TARNet"                 used by train / tune / export-grid
train_alpha         = 0.0
train_ipm           = "WM"
grid_resolution     = 21
grid_bound          = 2.0
out_dir             = "results"                overridden by $ORL_OUT_DIR and --out
"#;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dgp: String,
    pub data_csv: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub gamma_star: f64,
    pub image_dim: usize,
    pub seeds: Vec<u64>,
    pub setting1_families: Vec<String>,
    pub setting2_families: Vec<String>,
    pub alphas: Vec<f64>,
    pub ipms: Vec<String>,
    pub selectors: Vec<String>,
    pub losses: Vec<String>,
    pub setting2_selector: String,
    pub setting2_losses: Vec<String>,
    pub rep_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub width_multiplier: f64,
    pub flow_blocks: usize,
    pub flow_depth: usize,
    pub wm_epsilon: f64,
    pub wm_iterations: usize,
    pub mmd_bandwidth: f64,
    pub target_epochs: usize,
    pub target_learning_rate: f64,
    pub target_batch_size: usize,
    pub ema: f64,
    pub tuning: bool,
    pub tuning_draws: usize,
    pub tuning_folds: usize,
    pub train_family: String,
    pub train_alpha: f64,
    pub train_ipm: String,
    pub grid_resolution: usize,
    pub grid_bound: f64,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            dgp: "kallus".into(),
            data_csv: None,
            n_train: 500,
            n_test: 2000,
            gamma_star: std::f64::consts::E,
            image_dim: 784,
            seeds: vec![0],
            setting1_families: vec!["TARNet".into(), "BNN".into()],
            setting2_families: vec!["CFR".into(), "CFRFlow".into()],
            alphas: vec![0.0, 0.01, 0.05, 0.1, 0.5, 1.0],
            ipms: vec!["MMD".into(), "WM".into()],
            selectors: Selector::ALL.iter().map(|s| s.name().to_string()).collect(),
            losses: LossKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            setting2_selector: "Phi".into(),
            setting2_losses: vec!["DRK0".into(), "DRK1".into(), "DRK".into()],
            rep_dim: 2,
            epochs: 200,
            learning_rate: 0.005,
            weight_decay: 0.001,
            batch_size: 64,
            width_multiplier: 2.0,
            flow_blocks: 4,
            flow_depth: 3,
            wm_epsilon: 0.1,
            wm_iterations: 100,
            mmd_bandwidth: 0.0,
            target_epochs: 200,
            target_learning_rate: 0.005,
            target_batch_size: 64,
            ema: 0.995,
            tuning: false,
            tuning_draws: 50,
            tuning_folds: 5,
            train_family: "TARNet".into(),
            train_alpha: 0.0,
            train_ipm: "WM".into(),
            grid_resolution: 21,
            grid_bound: 2.0,
            out_dir: "results".into(),
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidConfig(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.data_csv.is_none() {
            self.dgp_kind()?;
        }
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty");
        }
        if self.n_train < 2 || self.n_test < 1 {
            return invalid("n_train must be >= 2 and n_test >= 1");
        }
        for (name, list) in [
            ("setting1_families", &self.setting1_families),
            ("setting2_families", &self.setting2_families),
            ("ipms", &self.ipms),
            ("selectors", &self.selectors),
            ("losses", &self.losses),
            ("setting2_losses", &self.setting2_losses),
        ] {
            if list.is_empty() {
                return invalid(format!("{name} must not be empty"));
            }
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return invalid("alphas must be a non-empty list of finite values >= 0");
        }
        self.families(&self.setting1_families)?;
        self.families(&self.setting2_families)?;
        self.ipm_list()?;
        self.selector_list()?;
        self.loss_list(&self.losses)?;
        self.loss_list(&self.setting2_losses)?;
        Selector::parse(&self.setting2_selector)?;
        Family::parse(&self.train_family)?;
        self.ipm(&self.train_ipm)?;
        if !(self.width_multiplier > 0.0) {
            return invalid("width_multiplier must be positive");
        }
        if self.tuning && (self.tuning_draws == 0 || self.tuning_folds < 2) {
            return invalid("tuning needs tuning_draws >= 1 and tuning_folds >= 2");
        }
        if !(self.mmd_bandwidth >= 0.0) {
            return invalid("mmd_bandwidth must be >= 0");
        }
        if self.grid_resolution == 0 || !(self.grid_bound > 0.0) {
            return invalid("grid_resolution must be >= 1 and grid_bound > 0");
        }
        self.target_hyper(1).validate()?;
        let dim = self.covariate_dim_hint();
        for (f, inv) in self.families(&self.setting1_families)?.into_iter().chain(self.families(&self.setting2_families)?) {
            self.rep_spec(f, inv, BalancingSpec::none(), dim).validate(dim)?;
        }
        Ok(())
    }

    fn dgp_kind(&self) -> Result<DgpKind> {
        match self.dgp.to_ascii_lowercase().as_str() {
            "kallus" | "synthetic" => Ok(DgpKind::KallusSynthetic),
            "hcmnist" | "hc-mnist" => Ok(DgpKind::HcMnistLike),
            other => invalid(format!("unknown dgp `{other}`")),
        }
    }

    fn covariate_dim_hint(&self) -> usize {
        match self.dgp_kind() {
            Ok(DgpKind::HcMnistLike) => self.image_dim + 1,
            _ => 2,
        }
    }

    pub fn families(&self, names: &[String]) -> Result<Vec<(Family, bool)>> {
        names.iter().map(|n| Family::parse(n)).collect()
    }

    pub fn ipm(&self, name: &str) -> Result<Ipm> {
        let ipm = match Ipm::from_name(name)? {
            Ipm::Mmd { .. } if self.mmd_bandwidth > 0.0 => Ipm::Mmd {
                bandwidth: Bandwidth::Fixed(self.mmd_bandwidth),
            },
            Ipm::Mmd { .. } => Ipm::mmd(),
            Ipm::Wasserstein { .. } => Ipm::Wasserstein {
                epsilon: self.wm_epsilon,
                iterations: self.wm_iterations,
            },
        };
        ipm.validate()?;
        Ok(ipm)
    }

    pub fn ipm_list(&self) -> Result<Vec<Ipm>> {
        self.ipms.iter().map(|n| self.ipm(n)).collect()
    }

    pub fn selector_list(&self) -> Result<Vec<Selector>> {
        self.selectors.iter().map(|s| Selector::parse(s)).collect()
    }

    pub fn loss_list(&self, names: &[String]) -> Result<Vec<LossKind>> {
        names.iter().map(|s| LossKind::parse(s)).collect()
    }

    /// Default width `2 R d` (top of the tuning grid).
    pub fn width(&self, d: usize) -> usize {
        ((2.0 * self.width_multiplier * d as f64).round() as usize).max(1)
    }

    pub fn rep_spec(&self, family: Family, invertible: bool, balancing: BalancingSpec, dim: usize) -> RepLearnerSpec {
        let rep_dim = if invertible { dim } else { self.rep_dim };
        RepLearnerSpec {
            family,
            invertible,
            balancing,
            rep_dim,
            hidden_phi: self.width(dim),
            hidden_head: self.width(rep_dim),
            hidden_aux: self.width(rep_dim),
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            head_wiring: None,
            prop_learning_rate: self.learning_rate,
            prop_weight_decay: self.weight_decay,
            flow_blocks: self.flow_blocks,
            flow_depth: self.flow_depth,
        }
    }

    pub fn nuisance_hyper(&self, dim: usize) -> NetHyper {
        NetHyper {
            hidden: self.width(dim),
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }

    pub fn target_hyper(&self, hidden: usize) -> TargetHyper {
        TargetHyper {
            hidden,
            learning_rate: self.target_learning_rate,
            weight_decay: 0.0,
            batch_size: self.target_batch_size,
            epochs: self.target_epochs,
            ema: self.ema,
        }
    }

    pub fn loss_spec(&self, kind: LossKind, selector: Selector, hidden: usize) -> OrthogonalLossSpec {
        OrthogonalLossSpec {
            kind,
            selector,
            target: self.target_hyper(hidden),
        }
    }

    /// Hash of everything that affects results except the seed list and the
    /// output location. Independent of key order in the file.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("seeds");
            m.remove("out_dir");
        }
        short_hash(&v)
    }

    /// Output directory: explicit override, then `$ORL_OUT_DIR`, then the config.
    pub fn output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        match std::env::var(OUT_DIR_ENV) {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(&self.out_dir),
        }
    }

    pub fn dgp_spec(&self, n: usize, seed: u64) -> Result<DgpSpec> {
        let mut spec = match self.dgp_kind()? {
            DgpKind::KallusSynthetic => DgpSpec::kallus(n, seed),
            DgpKind::HcMnistLike => DgpSpec::hcmnist(n, seed),
        };
        spec.gamma_star = self.gamma_star;
        spec.image_dim = self.image_dim;
        spec.validate()?;
        Ok(spec)
    }

    /// Training and test samples for one seed. Generators draw independent
    /// samples; an external CSV is split by a seeded permutation.
    pub fn datasets(&self, seed: u64) -> Result<(OracleDataset, OracleDataset)> {
        match &self.data_csv {
            None => {
                let train = self.dgp_spec(self.n_train, derive(seed, &[tag::DATASET]))?.generate()?;
                let test = self.dgp_spec(self.n_test, derive(seed, &[tag::TEST_SET]))?.generate()?;
                Ok((train, test))
            }
            Some(path) => {
                let data = match load_csv(path)? {
                    Loaded::Oracle(d) => d,
                    Loaded::Plain(_) => {
                        return Err(Error::OracleUnavailable(format!(
                            "{path} has no oracle columns (mu0, mu1, pi1, y0, y1); metrics need them"
                        )))
                    }
                };
                let n = data.n();
                let n_test = self.n_test.min(n / 2);
                if n_test == 0 {
                    return Err(Error::InvalidDataset(format!("{path} is too small to split")));
                }
                let mut idx: Vec<usize> = (0..n).collect();
                use rand::seq::SliceRandom;
                idx.shuffle(&mut crate::rng::stream(seed, &[tag::FOLDS]));
                let (test_idx, train_idx) = idx.split_at(n_test);
                let take = self.n_train.min(train_idx.len());
                Ok((data.select(&train_idx[..take]), data.select(test_idx)))
            }
        }
    }
}
