use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use pilot360::diffcore::{Checkpoint, LrSchedule};
use pilot360::eval::{benchmark, Benchmark, DpConfig, Method};
use pilot360::model::{Architecture, PilotModel};
use pilot360::observation::load_episodes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    run_env(args, &[])
}

fn run_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pilot360"));
    cmd.args(args).env_remove("PILOT360_OUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small scene and model so each command runs in well under a second.
const SMALL: &str = r#"
[scene]
frames = 24
objects = 3
slots = 4
appearance_dim = 4
motion_bins = 6

[model]
hidden_selector = 6
hidden_regressor = 5

[train]
max_epochs = 2
seq_len = 12
batch_size = 2
checkpoint_every = 1

[train.lr]
initial = 0.01
"#;

struct Fixture {
    dir: TempDir,
    config: PathBuf,
    data: PathBuf,
}

fn fixture(count: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    let data = dir.path().join("eps.jsonl");
    let o = run(&["gen-data", "--config", s(&config), "--seed", "3", "--count", &count.to_string(), "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    Fixture { dir, config, data }
}

fn small_arch() -> Architecture {
    Architecture {
        d: 4,
        k: 6,
        n: 4,
        hidden_selector: 6,
        hidden_regressor: 5,
    }
}

fn read_bench(path: &Path) -> Benchmark {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_zero_count_gives_empty_dataset() {
    let f = fixture(0);
    assert_eq!(fs::read_to_string(&f.data).unwrap(), "");
    assert!(load_episodes(&f.data).unwrap().is_empty());
}

#[test]
fn gen_data_is_deterministic() {
    let f = fixture(2);
    let again = f.dir.path().join("again.jsonl");
    let o = run(&["gen-data", "--config", s(&f.config), "--seed", "3", "--count", "2", "--out", s(&again)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&f.data).unwrap(), fs::read(&again).unwrap());
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["episodes"], 2);
    assert!(summary["main_top_score_rate"].as_f64().is_some());
}

#[test]
fn gen_data_reference_size_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ref.jsonl");
    let t = Instant::now();
    let o = run(&["gen-data", "--seed", "1", "--count", "50", "--frames", "200", "--out", s(&out)]);
    let elapsed = t.elapsed();
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    let eps = load_episodes(&out).unwrap();
    assert_eq!(eps.len(), 50);
    assert!(eps.iter().all(|e| e.len() == 200));
}

#[test]
fn train_zero_epochs_writes_initial_checkpoint() {
    let f = fixture(2);
    let out = f.dir.path().join("run");
    let o = run(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out-dir", s(&out), "--epochs", "0"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(out.join("checkpoint_00000.json").exists());
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.iter().filter(|n| n.to_string_lossy().starts_with("checkpoint")).count(), 1);
}

#[test]
fn train_resume_matches_uninterrupted_run() {
    let f = fixture(2);
    let a = f.dir.path().join("a");
    let b = f.dir.path().join("b");
    let o = run(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out-dir", s(&a), "--epochs", "3"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = run(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out-dir", s(&b), "--epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let o = run(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out-dir", s(&b), "--epochs", "3", "--resume"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(
        fs::read(a.join("checkpoint_00003.json")).unwrap(),
        fs::read(b.join("checkpoint_00003.json")).unwrap()
    );
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
    // resuming an empty directory is a usage error
    let empty = f.dir.path().join("empty");
    let o = run(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out-dir", s(&empty), "--resume"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn env_var_overrides_output_dir_but_flag_wins() {
    let f = fixture(1);
    let env_dir = f.dir.path().join("from_env");
    let o = run_env(&["train", "--config", s(&f.config), "--data", s(&f.data), "--epochs", "0"], &[("PILOT360_OUT_DIR", &env_dir)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(env_dir.join("checkpoint_00000.json").exists());
    let flag_dir = f.dir.path().join("from_flag");
    let o = run_env(
        &["train", "--config", s(&f.config), "--data", s(&f.data), "--epochs", "0", "--out-dir", s(&flag_dir)],
        &[("PILOT360_OUT_DIR", &env_dir)],
    );
    assert_eq!(code(&o), 0);
    assert!(flag_dir.join("checkpoint_00000.json").exists());
}

#[test]
fn eval_center_hold_and_gt_replay() {
    let f = fixture(2);
    let out = f.dir.path().join("b.json");
    let o = run(&["eval", "--config", s(&f.config), "--data", s(&f.data), "--methods", "center_hold", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let b = read_bench(&out);
    assert_eq!(b.rows.len(), 1);
    assert_eq!(b.rows[0].mvd, 0.0);
    let o = run(&["eval", "--config", s(&f.config), "--data", s(&f.data), "--methods", "gt_replay,center_hold", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(read_bench(&out).row(Method::GtReplay).unwrap().mo, 1.0);
}

#[test]
fn eval_unknown_method_is_a_usage_error() {
    let f = fixture(1);
    let o = run(&["eval", "--data", s(&f.data), "--methods", "center_hold,autocam"]);
    assert_eq!(code(&o), 2);
    let msg = text(&o);
    for m in Method::ALL {
        assert!(msg.contains(m.name()), "{msg}");
    }
    // model-based methods without a checkpoint
    let o = run(&["eval", "--config", s(&f.config), "--data", s(&f.data), "--methods", "agent"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn pilot_trajectory_rescores_like_in_process_eval() {
    let f = fixture(3);
    let run_dir = f.dir.path().join("run");
    let o = run(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out-dir", s(&run_dir)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let ck = run_dir.join("checkpoint_00002.json");
    let traj = f.dir.path().join("traj.jsonl");
    let o = run(&["pilot", "--checkpoint", s(&ck), "--data", s(&f.data), "--out", s(&traj)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let table = f.dir.path().join("t.json");
    let o = run(&[
        "eval", "--config", s(&f.config), "--checkpoint", s(&ck), "--data", s(&f.data), "--methods", "agent",
        "--trajectory", s(&traj), "--out", s(&table), "--jobs", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let b = read_bench(&table);
    assert_eq!(b.rows.len(), 2);
    assert!(b.rows[1].method.starts_with("trajectory:"));
    assert_eq!((b.rows[0].mo, b.rows[0].mvd), (b.rows[1].mo, b.rows[1].mvd));

    // and against the library directly
    let model = Checkpoint::load(&ck).unwrap().model().unwrap();
    let eps = load_episodes(&f.data).unwrap();
    let direct = benchmark(&[Method::Agent], &eps, Some(&model), &DpConfig::default(), 1).unwrap();
    assert_eq!(direct.rows[0].mo, b.rows[0].mo);
}

#[test]
fn pilot_with_zero_weights_holds_initial_angle() {
    let f = fixture(2);
    let ck = f.dir.path().join("zero.json");
    let rng = ChaCha8Rng::seed_from_u64(0);
    Checkpoint::new(&PilotModel::zeros(small_arch()), 0, LrSchedule::default(), &rng).save(&ck).unwrap();
    let traj = f.dir.path().join("traj.jsonl");
    let o = run(&["pilot", "--checkpoint", s(&ck), "--data", s(&f.data), "--out", s(&traj)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let (_, trajs) = pilot360::agent::read_trajectories(fs::read(&traj).unwrap().as_slice()).unwrap();
    let eps = load_episodes(&f.data).unwrap();
    for ((t, _), e) in trajs.iter().zip(&eps) {
        assert_eq!(t.len(), e.len());
        assert!(t.iter().all(|a| *a == e.init_angle()));
    }
}

#[test]
fn pilot_architecture_mismatch_is_a_config_error() {
    let f = fixture(1);
    let ck = f.dir.path().join("wide.json");
    let rng = ChaCha8Rng::seed_from_u64(0);
    let arch = Architecture { n: 8, ..small_arch() };
    Checkpoint::new(&PilotModel::zeros(arch), 0, LrSchedule::default(), &rng).save(&ck).unwrap();
    let o = run(&["pilot", "--checkpoint", s(&ck), "--data", s(&f.data), "--out", s(&f.dir.path().join("t.jsonl"))]);
    assert_eq!(code(&o), 4, "{}", text(&o));
}

#[test]
fn gradcheck_passes_and_negative_controls_fail() {
    let o = run(&["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("PASS"));

    let o = run(&["gradcheck", "--seeds", "1", "--corrupt-grad", "selector.w_s"]);
    assert_eq!(code(&o), 1);
    let msg = text(&o);
    assert!(msg.contains("FAIL") && msg.contains("selector.w_s"), "{msg}");

    // float noise sits well above 1e-12
    let o = run(&["gradcheck", "--seeds", "1", "--tolerance", "1e-12"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
}

#[test]
fn error_kinds_map_to_exit_codes() {
    let f = fixture(1);
    // I/O
    let o = run(&["eval", "--data", s(&f.dir.path().join("missing.jsonl")), "--methods", "center_hold"]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    // strict config
    let bad = f.dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nepochs = 3\n").unwrap();
    let o = run(&["train", "--config", s(&bad), "--data", s(&f.data)]);
    assert_eq!(code(&o), 4, "{}", text(&o));
    // clap usage
    let o = run(&["train"]);
    assert_eq!(code(&o), 2);
    // numerics: an absurd learning rate overflows the weights
    let blowup = f.dir.path().join("blowup.toml");
    fs::write(&blowup, SMALL.replace("initial = 0.01", "initial = 1e308").replace("checkpoint_every = 1", "checkpoint_every = 1\ngrad_clip = 0.0")).unwrap();
    let o = run(&["train", "--config", s(&blowup), "--data", s(&f.data), "--out-dir", s(&f.dir.path().join("x"))]);
    assert_eq!(code(&o), 5, "{}", text(&o));
}
