use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use orl::balance::BalancingSpec;
use orl::data::write_csv;
use orl::eval::{grid_transform_export, ricb_report};
use orl::harness::{
    report, run_setting, tune_outcome, tune_propensity, tune_representation, ExperimentConfig, HyperGrid, Setting,
    TuneStage, SCHEMA,
};
use orl::nuisance::fit_propensity;
use orl::stage0::{train_representation, Family};
use orl::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "orl", version, about = "Orthogonal representation learning benchmarks")]
struct Cli {
    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a training sample with oracle columns and write it as CSV.
    GenData,
    /// Train one representation network and save it as JSON.
    Train,
    /// Cross-validated random search for the representation and nuisance networks.
    Tune,
    /// Unconstrained representations, every target input and loss.
    Setting1,
    /// Balancing-strength sweep with ratio curves and expansion diagnostics.
    Setting2,
    /// Compare adjusted and unadjusted means on a large oracle sample.
    ProbeRicb {
        /// Sample size.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
    },
    /// Train an invertible representation and export its image of a grid.
    ExportGrid,
    /// Summarize the results found in the output directory.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            eprintln!("{SCHEMA}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::InvalidConfig(format!("config file {} not found", path.display())));
            }
            ExperimentConfig::load(path)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

/// Output file: `--out`, else `name` inside the configured output directory.
fn out_file(cli: &Cli, cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    match &cli.out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            Ok(p.clone())
        }
        None => {
            let dir = cfg.output_dir(None);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            Ok(dir.join(name))
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_one(cfg: &ExperimentConfig, seed: u64, force_invertible: bool) -> Result<orl::stage0::TrainedRepresentation> {
    let (family, invertible) = Family::parse(&cfg.train_family)?;
    let invertible = invertible || force_invertible;
    let (train, _) = cfg.datasets(seed)?;
    let balancing = BalancingSpec {
        metric: cfg.ipm(&cfg.train_ipm)?,
        alpha: cfg.train_alpha,
    };
    let spec = cfg.rep_spec(family, invertible, balancing, train.base.dim());
    let pi = if family == Family::Bwcfr {
        let p = fit_propensity(&train.base, &cfg.nuisance_hyper(train.base.dim()), seed)?;
        Some(p.predict(train.base.x.view())?.to_vec())
    } else {
        None
    };
    train_representation(&spec, &train.base, seed, pi.as_deref())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let seed = cfg.seeds[0];
    match &cli.command {
        Command::GenData => {
            if cfg.data_csv.is_some() {
                return Err(Error::InvalidConfig("gen-data needs a synthetic dgp, not data_csv".into()));
            }
            let (train, _) = cfg.datasets(seed)?;
            let path = out_file(&cli, &cfg, "data.csv")?;
            write_csv(&train, &path)?;
            println!("wrote {} rows to {}", train.n(), path.display());
        }
        Command::Train => {
            let tr = train_one(&cfg, seed, false)?;
            let path = out_file(&cli, &cfg, "representation.json")?;
            tr.save(&path)?;
            if let Some(last) = tr.history.last() {
                println!(
                    "{} epoch {}: factual {:.5} total {:.5}",
                    tr.spec.display_name(),
                    last.epoch,
                    last.factual,
                    last.total
                );
            }
            println!("saved {}", path.display());
        }
        Command::Tune => {
            let (train, _) = cfg.datasets(seed)?;
            let data = &train.base;
            let dim = data.dim();
            let (family, invertible) = Family::parse(&cfg.train_family)?;
            let balancing = BalancingSpec {
                metric: cfg.ipm(&cfg.train_ipm)?,
                alpha: cfg.train_alpha,
            };
            let spec = cfg.rep_spec(family, invertible, balancing, dim);
            let hyper = cfg.nuisance_hyper(dim);
            let r = cfg.width_multiplier;
            let (draws, folds) = (cfg.tuning_draws, cfg.tuning_folds);
            let prop = tune_propensity(&hyper, &HyperGrid::standard(TuneStage::Propensity, dim, dim, r), data, draws, folds, seed)?;
            let pi = if family == Family::Bwcfr {
                let p = fit_propensity(data, &prop.best.apply_net(&hyper), seed)?;
                Some(p.predict(data.x.view())?.to_vec())
            } else {
                None
            };
            let rep_grid = HyperGrid::standard(TuneStage::Representation, dim, spec.rep_dim, r);
            let rep = tune_representation(&spec, &rep_grid, data, draws, folds, seed, pi.as_deref())?;
            let outcome = tune_outcome(&hyper, &HyperGrid::standard(TuneStage::Outcome, dim, dim, r), data, draws, folds, seed)?;
            let path = out_file(&cli, &cfg, "tuning.json")?;
            write_json(&path, &[&rep, &prop, &outcome])?;
            for t in [&rep, &prop, &outcome] {
                println!("{}: {:?}", t.stage.name(), t.best);
            }
            println!("saved {}", path.display());
        }
        Command::Setting1 | Command::Setting2 => {
            let setting = if matches!(cli.command, Command::Setting1) {
                Setting::One
            } else {
                Setting::Two
            };
            let dir = cfg.output_dir(cli.out.as_deref());
            let summary = run_setting(setting, &cfg, &dir, cli.jobs)?;
            println!(
                "{} config {}: {} jobs run, {} skipped, {} failed cells; results in {}",
                setting.name(),
                summary.config_hash,
                summary.jobs_run,
                summary.jobs_skipped,
                summary.new_failures,
                summary.results.display()
            );
        }
        Command::ProbeRicb { n } => {
            let mut big = cfg.clone();
            big.n_train = *n;
            let (sample, _) = big.datasets(seed)?;
            let rep = ricb_report(&sample);
            let text = serde_json::to_string_pretty(&rep)?;
            println!("{text}");
            if let Some(p) = &cli.out {
                write_json(p, &rep)?;
            }
        }
        Command::ExportGrid => {
            let tr = train_one(&cfg, seed, true)?;
            let flow = tr
                .network
                .encoder
                .as_flow()
                .ok_or_else(|| Error::InvalidConfig("export-grid needs an invertible encoder".into()))?;
            let path = out_file(&cli, &cfg, "grid.csv")?;
            let rows = grid_transform_export(flow, (-cfg.grid_bound, cfg.grid_bound), cfg.grid_resolution, &path)?;
            println!("wrote {rows} grid points to {}", path.display());
        }
        Command::Report => {
            let dir = cfg.output_dir(cli.out.as_deref());
            let (_, text) = report(&dir)?;
            print!("{text}");
        }
    }
    Ok(())
}
