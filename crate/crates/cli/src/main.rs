//! `pilot360`: generate synthetic episodes, train the agent, benchmark it
//! against baselines, pilot episode files and check gradients.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage, 3 I/O or malformed input
//! files, 4 configuration, 5 numerical failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pilot360::agent::{pilot_stream, read_trajectories};
use pilot360::config::RunConfig;
use pilot360::diffcore::Checkpoint;
use pilot360::eval::{aggregate, benchmark, score_trajectory, EpisodeScore, Method};
use pilot360::model::{Architecture, PilotModel};
use pilot360::observation::{load_episodes, main_top_score_rate, save_episodes, synth_dataset};
use pilot360::training::{run_gradchecks, train, TrainOutput};
use pilot360::PilotError;
use serde_json::json;

/// Environment variable that overrides the output directory.
const OUT_DIR_ENV: &str = "PILOT360_OUT_DIR";

#[derive(Parser)]
#[command(name = "pilot360", version, about = "Online viewing-angle agent for 360° video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic episodes to an episode file.
    GenData(GenDataArgs),
    /// Train the agent on an episode file.
    Train(TrainArgs),
    /// Benchmark the agent and baselines on an episode file.
    Eval(EvalArgs),
    /// Run a checkpoint over an episode file and write its trajectories.
    Pilot(PilotArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, PilotError> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Base seed; episode i uses seed + i. Defaults to the config's train seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of episodes. Defaults to the config's train count.
    #[arg(long)]
    count: Option<usize>,
    /// Frames per episode (overrides the config).
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Needed by the `agent` and `selector_only` methods.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated methods (default: all).
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Also score a trajectory file written by `pilot`.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Worker threads for per-episode evaluation.
    #[arg(long)]
    jobs: Option<usize>,
    /// Where to write the JSON table (default: <out_dir>/benchmark.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PilotArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Take the architecture and lambda from this config instead of the
    /// small built-in dims.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed; `--seeds` consecutive seeds are checked.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Deliberately corrupt the named tensor's analytic gradient (negative
    /// control; the check must then fail on that tensor).
    #[arg(long)]
    corrupt_grad: Option<String>,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Check(String),
    Pilot(PilotError),
}

impl From<PilotError> for Failure {
    fn from(e: PilotError) -> Self {
        Failure::Pilot(e)
    }
}

type CmdResult = Result<(), Failure>;

fn out_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.paths.out_dir.clone(),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), PilotError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| PilotError::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| PilotError::io(path, e))
}

fn gen_data(args: GenDataArgs) -> CmdResult {
    let mut cfg = args.config.load()?;
    if let Some(f) = args.frames {
        cfg.scene.frames = f;
    }
    cfg.scene.validate().map_err(|e| PilotError::Config(e.to_string()))?;
    let seed = args.seed.unwrap_or(cfg.data.train_seed);
    let count = args.count.unwrap_or(cfg.data.train_count);
    let episodes = synth_dataset(&cfg.scene, seed, count)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| PilotError::io(parent, e))?;
    }
    save_episodes(&episodes, &args.out)?;
    let summary = json!({
        "path": args.out,
        "episodes": count,
        "frames": cfg.scene.frames,
        "objects": cfg.scene.objects,
        "slots": cfg.scene.slots,
        "main_top_score_rate": main_top_score_rate(&episodes),
    });
    println!("{summary}");
    Ok(())
}

fn train_cmd(args: TrainArgs) -> CmdResult {
    let mut cfg = args.config.load()?;
    if let Some(e) = args.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let episodes = load_episodes(&args.data)?;
    let output = TrainOutput {
        dir: out_dir(args.out_dir.as_deref(), &cfg),
    };
    let resume = if args.resume {
        match output.latest_checkpoint()? {
            Some(p) => Some(Checkpoint::load(&p)?),
            None => {
                return Err(Failure::Usage(format!(
                    "--resume: no checkpoint found in {}",
                    output.dir.display()
                )))
            }
        }
    } else {
        None
    };
    let result = train(&episodes, cfg.architecture(), &cfg.train, Some(&output), resume.as_ref())?;
    let (first, last) = (result.metrics.first(), result.metrics.last());
    let summary = json!({
        "out_dir": output.dir,
        "epochs_run": result.metrics.len(),
        "final_epoch": result.last.epoch,
        "checkpoints": result.checkpoints,
        "first_epoch_mean_reward": first.map(|m| m.mean_reward),
        "final_epoch_mean_reward": last.map(|m| m.mean_reward),
        "final_loss": last.map(|m| m.total),
    });
    println!("{summary}");
    Ok(())
}

fn load_model(path: &Path, expected: &Architecture) -> Result<(PilotModel, String), PilotError> {
    let ck = Checkpoint::load(path)?;
    let model = ck.model()?;
    if model.arch.obs_dims() != expected.obs_dims() {
        return Err(PilotError::Config(format!(
            "checkpoint {} expects (d={}, k={}, N={}), data has (d={}, k={}, N={})",
            path.display(),
            model.arch.d,
            model.arch.k,
            model.arch.n,
            expected.d,
            expected.k,
            expected.n
        )));
    }
    Ok((model, ck.id()))
}

fn eval_cmd(args: EvalArgs) -> CmdResult {
    let cfg = args.config.load()?;
    let methods: Vec<Method> = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(|e| Failure::Usage(e.to_string())))
            .collect::<Result<_, _>>()?
    };
    let episodes = load_episodes(&args.data)?;
    let Some(first) = episodes.first() else {
        return Err(PilotError::invalid(format!("{} holds no episodes", args.data.display())).into());
    };
    let dims = first.dims();
    let data_arch = Architecture {
        d: dims.d,
        k: dims.k,
        n: dims.n,
        ..cfg.architecture()
    };
    let model = match &args.checkpoint {
        Some(p) => Some(load_model(p, &data_arch)?.0),
        None if methods.iter().any(|m| m.needs_model()) => {
            return Err(Failure::Usage("methods agent and selector_only need --checkpoint".into()))
        }
        None => None,
    };
    let jobs = args.jobs.unwrap_or(cfg.eval.jobs).max(1);
    let mut bench = benchmark(&methods, &episodes, model.as_ref(), &cfg.eval.dp, jobs)?;

    if let Some(tpath) = &args.trajectory {
        let file = File::open(tpath).map_err(|e| PilotError::io(tpath, e))?;
        let (header, trajs) = read_trajectories(BufReader::new(file))?;
        if trajs.len() != episodes.len() {
            return Err(PilotError::invalid(format!(
                "{} has {} episodes, data has {}",
                tpath.display(),
                trajs.len(),
                episodes.len()
            ))
            .into());
        }
        let name = format!("trajectory:{}", header.checkpoint);
        let mut scores = Vec::with_capacity(trajs.len());
        for (i, ((traj, _), ep)) in trajs.iter().zip(&episodes).enumerate() {
            let (mo, mvd) = score_trajectory(traj, ep.gt())?;
            scores.push(EpisodeScore {
                method: name.clone(),
                episode: i,
                mo,
                mvd,
            });
        }
        let extra = aggregate(std::slice::from_ref(&name), scores);
        bench.rows.extend(extra.rows);
        bench.per_episode.extend(extra.per_episode);
    }

    print!("{}", bench.render());
    let out = args
        .out
        .unwrap_or_else(|| out_dir(None, &cfg).join("benchmark.json"));
    write_json(&out, &serde_json::to_value(&bench).expect("benchmark serializes"))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn pilot_cmd(args: PilotArgs) -> CmdResult {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let input = File::open(&args.data).map_err(|e| PilotError::io(&args.data, e))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| PilotError::io(parent, e))?;
    }
    let out = File::create(&args.out).map_err(|e| PilotError::io(&args.out, e))?;
    let mut out = BufWriter::new(out);
    let summary = pilot_stream(BufReader::new(input), &model, &ck.id(), &mut out, &args.data, &args.out)?;
    out.flush().map_err(|e| PilotError::io(&args.out, e))?;
    println!("{}", json!({"out": args.out, "episodes": summary.episodes, "frames": summary.frames}));
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs) -> CmdResult {
    let (arch, lambda) = match &args.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            (cfg.architecture(), cfg.train.lambda)
        }
        None => (
            Architecture {
                d: 8,
                k: 12,
                n: 4,
                hidden_selector: 16,
                hidden_regressor: 8,
            },
            pilot360::regressor::DEFAULT_LAMBDA,
        ),
    };
    if args.tolerance.is_nan() || args.tolerance <= 0.0 {
        return Err(Failure::Usage("--tolerance must be positive".into()));
    }
    if args.frames < 2 || args.seeds == 0 {
        return Err(Failure::Usage("--frames must be >= 2 and --seeds >= 1".into()));
    }
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let suite = run_gradchecks(arch, args.frames, lambda, &seeds, args.tolerance, args.corrupt_grad.as_deref())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&suite).expect("report serializes"));
    } else {
        for e in &suite.entries {
            let mark = if e.report.passed { "ok  " } else { "FAIL" };
            println!(
                "{mark} {:<16} seed {:<3} max rel err {:.3e}",
                e.objective,
                e.seed,
                e.report.max_rel_error()
            );
            for f in e.report.failures() {
                println!(
                    "     {:<24} rel err {:.3e} at [{}] (analytic {:.6e}, numeric {:.6e})",
                    f.name, f.max_rel_error, f.worst_index, f.analytic, f.numeric
                );
            }
        }
    }
    if suite.passed {
        println!("gradcheck PASS at tolerance {:.1e}", args.tolerance);
        Ok(())
    } else {
        let mut names: Vec<String> = suite
            .entries
            .iter()
            .flat_map(|e| e.report.failures().map(|f| f.name.clone()))
            .collect();
        names.sort();
        names.dedup();
        Err(Failure::Check(format!(
            "gradcheck FAIL at tolerance {:.1e}: {}",
            args.tolerance,
            names.join(", ")
        )))
    }
}

fn exit_code(e: &PilotError) -> u8 {
    match e {
        PilotError::Io { .. } | PilotError::Parse { .. } | PilotError::Version { .. } => 3,
        PilotError::Config(_) | PilotError::InvalidInput(_) => 4,
        PilotError::Numerics(_) => 5,
        PilotError::State(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Pilot(a) => pilot_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Pilot(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
