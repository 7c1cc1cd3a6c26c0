use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
schema_version = 1
seeds = [0, 1]
n_train = 80
n_test = 60
epochs = 3
target_epochs = 3
setting1_families = ["TARNet"]
setting2_families = ["CFRFlow"]
alphas = [0.0, 1.0]
ipms = ["WM"]
flow_blocks = 2
grid_resolution = 5
"#;

fn orl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orl"))
        .args(args)
        .current_dir(dir)
        .env_remove("ORL_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn orl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn gen_data_writes_oracle_columns() {
    let dir = setup();
    let o = orl(dir.path(), &["gen-data", "--config", "small.toml", "--out", "d/train.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = lines(&dir.path().join("d/train.csv"));
    assert_eq!(rows[0], "x_0,x_1,a,y,mu0,mu1,pi1,tau,y0,y1");
    assert_eq!(rows.len(), 81);
}

#[test]
fn out_dir_from_environment() {
    let dir = setup();
    let env_dir = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_orl"))
        .args(["gen-data", "--config", "small.toml"])
        .current_dir(dir.path())
        .env("ORL_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_dir.join("data.csv").exists());
    assert!(!dir.path().join("results").exists());
}

#[test]
fn missing_config_names_the_path() {
    let dir = setup();
    let o = orl(dir.path(), &["setting1", "--config", "nope/absent.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope/absent.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "schema_version = 1\nlearnig_rate = 0.1\n").unwrap();
    let o = orl(dir.path(), &["gen-data", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learnig_rate"), "{}", stderr(&o));
}

#[test]
fn usage_error_prints_schema() {
    let dir = setup();
    let o = orl(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("schema_version"), "{err}");
    assert!(err.contains("setting2_losses"), "{err}");
    assert!(orl(dir.path(), &["--help"]).status.success());
}

#[test]
fn setting1_tables_resume_and_parallel_runs_agree() {
    let dir = setup();
    let o = orl(dir.path(), &["setting1", "--config", "small.toml", "--out", "one"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 jobs run, 0 skipped"), "{}", stdout(&o));

    let results = lines(&dir.path().join("one/setting1_results.csv"));
    assert_eq!(
        results[0],
        "config_hash,family,invertible,metric_kind,alpha,ipm,selector,loss,seed,quantity,value,baseline_value,delta"
    );
    // seeds x families x selectors x losses
    assert_eq!(results.len() - 1, 2 * 4 * 7);
    let baselines = lines(&dir.path().join("one/setting1_baselines.csv"));
    assert_eq!(baselines.len() - 1, 2);
    assert!(!results.iter().skip(1).any(|r| r.contains("plug-in")));

    let again = orl(dir.path(), &["setting1", "--config", "small.toml", "--out", "one"]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("0 jobs run, 2 skipped"), "{}", stdout(&again));
    assert_eq!(lines(&dir.path().join("one/setting1_results.csv")), results);

    let four = orl(dir.path(), &["setting1", "--config", "small.toml", "--out", "four", "--jobs", "4"]);
    assert!(four.status.success(), "{}", stderr(&four));
    for name in ["setting1_results.csv", "setting1_baselines.csv"] {
        let a = fs::read(dir.path().join("one").join(name)).unwrap();
        let b = fs::read(dir.path().join("four").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }

    let report = orl(dir.path(), &["report", "--out", "one"]);
    assert!(report.status.success(), "{}", stderr(&report));
    assert!(stdout(&report).contains("plug-in"));
    assert!(dir.path().join("one/report.csv").exists());
}

#[test]
fn seed_flag_adds_a_single_job() {
    let dir = setup();
    let o = orl(dir.path(), &["setting1", "--config", "small.toml", "--out", "s", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 jobs run"), "{}", stdout(&o));
    let results = lines(&dir.path().join("s/setting1_results.csv"));
    assert_eq!(results.len() - 1, 4 * 7);
    assert!(results.iter().skip(1).all(|r| r.split(',').nth(8) == Some("7")));
}

#[test]
fn setting2_writes_curves_and_expansion() {
    let dir = setup();
    let o = orl(dir.path(), &["setting2", "--config", "small.toml", "--out", "two"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("two");
    // alpha 0 once plus alpha 1 with WM, per seed
    assert_eq!(lines(&out.join("setting2_baselines.csv")).len() - 1, 2 * 2);
    assert_eq!(lines(&out.join("setting2_expansion.csv")).len() - 1, 2 * 2);
    let ratios = lines(&out.join("setting2_ratios.csv"));
    assert!(ratios[0].starts_with("config_hash,family,invertible,ipm,method,quantity,alpha,mean,se,n"));
    assert!(ratios.iter().any(|r| r.contains(",WM,DRK,CATE,1.0,") || r.contains(",WM,DRK,CATE,1,")));
    assert!(ratios.iter().any(|r| r.contains(",WM,plug-in,CATE,")));
}

#[test]
fn probe_and_grid_export() {
    let dir = setup();
    let o = orl(dir.path(), &["probe-ricb", "--config", "small.toml", "--n", "20000", "--out", "ricb.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("ricb.json")).unwrap()).unwrap();
    assert_eq!(v["n"], 20000);
    assert_eq!(v["confounded"], true);

    let g = orl(dir.path(), &["export-grid", "--config", "small.toml", "--out", "grid.csv"]);
    assert!(g.status.success(), "{}", stderr(&g));
    let rows = lines(&dir.path().join("grid.csv"));
    assert_eq!(rows[0], "x1,x2,phi1,phi2");
    assert_eq!(rows.len(), 1 + 25);
}

#[test]
fn train_saves_a_loadable_representation() {
    let dir = setup();
    let o = orl(dir.path(), &["train", "--config", "small.toml", "--out", "rep.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tr = orl::stage0::TrainedRepresentation::load(dir.path().join("rep.json")).unwrap();
    assert_eq!(tr.history.len(), 3);
}
