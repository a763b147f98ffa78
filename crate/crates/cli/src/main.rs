//! `crane-grasp`: train, evaluate and inspect the log-grasping agent.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use crane_grasp::config::{parse_diameters, RunConfig};
use crane_grasp::env::geometry::target_point;
use crane_grasp::env::{combined_distance, pose_error, reward_terms, ActionCommand, GraspEnv};
use crane_grasp::eval::{export_csv, export_text, monte_carlo, Controller, OracleController, PolicyController};
use crane_grasp::kinematics::{forward_kinematics, JointVector, JAW, N_ACTUATED, N_JOINTS};
use crane_grasp::sim::{LogSpec, Simulator};
use crane_grasp::train::curves::{curves_csv, read_metrics};
use crane_grasp::train::trainer::load_policy;
use crane_grasp::train::{Algo, TrainMetrics, Trainer};
use crane_grasp::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "crane-grasp", version, about = "Forestry crane log grasping: training, evaluation, inspection")]
#[command(after_long_help = after_help())]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set train.learning_rate=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Seed for training and evaluation [key: seed].
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy and write metrics and checkpoints.
    Train(TrainArgs),
    /// Monte Carlo evaluation over log diameters.
    Eval(EvalArgs),
    /// Print the grapple pose, relative pose and reward terms for one state.
    Inspect(InspectArgs),
    /// Convert metrics logs into a reward-per-update CSV.
    EmitCurves(CurveArgs),
    /// Print the effective configuration as TOML.
    DumpConfig,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// mppo (Beta head, perturbed sampling) or ppo (Gaussian head) [key: algo].
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algo>,
    /// Policy transitions to train for [key: train.total_steps].
    #[arg(long)]
    total_steps: Option<u64>,
    /// Parallel environments [key: train.n_envs].
    #[arg(long)]
    envs: Option<usize>,
    /// Policy transitions per environment per update [key: train.rollout_len].
    #[arg(long)]
    rollout_len: Option<usize>,
    /// Simulator steps per policy action [key: env.action_repeat].
    #[arg(long)]
    action_repeat: Option<usize>,
    /// Resume from this checkpoint and train on to --total-steps [key: paths.checkpoint].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// [key: paths.checkpoint_dir]
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// [key: paths.log_dir]
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Trained checkpoint to evaluate [key: paths.checkpoint].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate the scripted controller instead of a checkpoint [key: eval.oracle].
    #[arg(long)]
    oracle: bool,
    /// `a..b` in steps of 0.1, or a comma list [key: eval.diameters].
    #[arg(long)]
    diameters: Option<String>,
    /// Trials per diameter [key: eval.trials].
    #[arg(long)]
    trials: Option<usize>,
    /// Inject pose-measurement noise [key: noise.enabled].
    #[arg(long)]
    noise: bool,
    /// Worker threads, 0 for one per core [key: eval.workers].
    #[arg(long)]
    workers: Option<usize>,
    /// Output table [key: paths.eval_csv].
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for per-trial trajectory CSVs [key: eval.trajectory_dir].
    #[arg(long)]
    trajectories: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Eight comma-separated joint values q1..q8; defaults to the rest pose.
    #[arg(long, allow_hyphen_values = true)]
    q: Option<String>,
    /// Log as `x,y,yaw,diameter`; defaults to a sampled scene.
    #[arg(long, allow_hyphen_values = true)]
    log: Option<String>,
    /// Six commanded velocities for the balance term; defaults to zero.
    #[arg(long, allow_hyphen_values = true)]
    command: Option<String>,
}

#[derive(Args, Debug)]
struct CurveArgs {
    /// Metrics logs to convert; defaults to `<paths.log_dir>/metrics.jsonl`.
    #[arg(long = "metrics")]
    metrics: Vec<PathBuf>,
    /// Output CSV; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn after_help() -> String {
    format!(
        "Configuration keys and defaults (set in --config or with --set):\n{}\n\n\
         Exit codes: 0 success, 1 usage or configuration, 2 numerical failure, 3 I/O.\n\
         Log verbosity follows RUST_LOG (default: info).",
        RunConfig::default()
            .key_listing()
            .lines()
            .map(|l| format!("  {l}"))
            .collect::<Vec<_>>()
            .join("\n")
    )
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    match s {
        "mppo" => Ok(Algo::Mppo),
        "ppo" => Ok(Algo::Ppo),
        other => Err(format!("unknown algorithm `{other}` (expected mppo or ppo)")),
    }
}

fn parse_list(text: &str, n: usize, what: &str) -> anyhow::Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("{what}: not a number list: `{text}`")))?;
    if v.len() != n {
        return Err(Error::InvalidArgument(format!("{what}: expected {n} values, got {}", v.len())).into());
    }
    Ok(v)
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Train(a) => {
            if a.algo.is_some() {
                cfg.algo = a.algo;
            }
            set_opt(&mut cfg.train.total_steps, a.total_steps);
            set_opt(&mut cfg.train.n_envs, a.envs);
            set_opt(&mut cfg.train.rollout_len, a.rollout_len);
            set_opt(&mut cfg.env.action_repeat, a.action_repeat);
            set_opt(&mut cfg.paths.checkpoint_dir, a.checkpoint_dir.clone());
            set_opt(&mut cfg.paths.log_dir, a.log_dir.clone());
            if a.checkpoint.is_some() {
                cfg.paths.checkpoint = a.checkpoint.clone();
            }
        }
        Command::Eval(a) => {
            if a.checkpoint.is_some() {
                cfg.paths.checkpoint = a.checkpoint.clone();
            }
            cfg.eval.oracle |= a.oracle;
            cfg.noise.enabled |= a.noise;
            if let Some(d) = &a.diameters {
                cfg.eval.diameters = parse_diameters(d)?;
            }
            set_opt(&mut cfg.eval.trials, a.trials);
            set_opt(&mut cfg.eval.workers, a.workers);
            set_opt(&mut cfg.paths.eval_csv, a.csv.clone());
            if a.trajectories.is_some() {
                cfg.eval.trajectory_dir = a.trajectories.clone();
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn print_update(m: &TrainMetrics) {
    let reward = m.mean_episode_reward.map_or_else(|| "-".into(), |r| format!("{r:.2}"));
    let length = m.mean_episode_length.map_or_else(|| "-".into(), |l| format!("{l:.1}"));
    println!(
        "update {:>5}  steps {:>11}  reward {:>10}  length {:>7}  value_loss {:>10.4}  entropy {:>7.3}  sps {:>7.0}",
        m.update, m.total_steps, reward, length, m.value_loss, m.entropy, m.steps_per_sec
    );
}

fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let paths = cfg.run_paths();
    let mut trainer = match &cfg.paths.checkpoint {
        Some(ckpt) => {
            let mut t = Trainer::resume(ckpt)?;
            t.set_total_steps(cfg.train.total_steps);
            info!("resumed {} at update {}", ckpt.display(), t.updates_done());
            t
        }
        None => Trainer::new(cfg.env_settings(), cfg.resolved_train(), cfg.seed)?,
    };
    cfg.save(&paths.log_dir.join("config.toml"))?;
    info!(
        "training {} updates of {} steps ({:?} head)",
        trainer.total_updates(),
        trainer.steps_per_update(),
        trainer.config.distribution
    );
    trainer.run(Some(&paths), &mut print_update)?;
    println!(
        "done: {} updates, {} steps; checkpoint {}",
        trainer.updates_done(),
        trainer.steps_done(),
        paths.checkpoint_dir.join("latest.ckpt").display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let (policy, mut settings) = if cfg.eval.oracle {
        (None, cfg.env_settings())
    } else {
        let Some(path) = &cfg.paths.checkpoint else {
            bail!(Error::InvalidArgument("eval needs --checkpoint or --oracle".into()));
        };
        let (p, s) = load_policy(path)?;
        (Some(p), s)
    };
    settings.noise = cfg.noise.clone();
    settings.termination = cfg.termination.clone();

    let factory = || -> Box<dyn Controller + '_> {
        match &policy {
            Some(p) => Box::new(PolicyController { policy: p }),
            None => Box::new(OracleController::default()),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.eval.workers)
        .build()
        .context("building worker pool")?;
    let stats = pool.install(|| {
        monte_carlo(
            &factory,
            &settings,
            &cfg.eval.diameters,
            cfg.eval.trials,
            &cfg.criteria,
            cfg.seed,
            cfg.eval.trajectory_dir.as_deref(),
        )
    })?;
    let csv = export_csv(&stats);
    let out = &cfg.paths.eval_csv;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(out, &csv).map_err(|e| io_error(out, e))?;
    print!("{}", export_text(&stats));
    println!("table written to {}", out.display());
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn cmd_inspect(cfg: &RunConfig, args: &InspectArgs) -> anyhow::Result<()> {
    let settings = cfg.env_settings();
    let sim = Simulator::new(settings.kinematics.clone(), settings.sim.clone())?;
    let mut env = GraspEnv::new(settings.clone(), cfg.seed, 0)?;
    env.reset()?;
    let mut state = env.state().expect("reset above").clone();
    if let Some(text) = &args.q {
        let v = parse_list(text, N_JOINTS, "--q")?;
        let mut q = JointVector::zeros();
        q.0.copy_from_slice(&v);
        forward_kinematics(&q, &sim.kinematics)?;
        state.joints = q;
    }
    if let Some(text) = &args.log {
        let v = parse_list(text, 4, "--log")?;
        let s = &settings.scenario;
        state.log = LogSpec::on_ground(v[3], s.log_length, v[0], v[1], v[2], s.wood_density);
    }
    let command = match &args.command {
        Some(text) => {
            let v = parse_list(text, N_ACTUATED, "--command")?;
            let mut c = [0.0; N_ACTUATED];
            c.copy_from_slice(&v);
            ActionCommand(c)
        }
        None => ActionCommand([0.0; N_ACTUATED]),
    };

    let g = sim.grapple(&state);
    let (dp, dpsi) = pose_error(&g, &state, &settings.reward);
    let d = combined_distance(&dp, dpsi, &settings.reward);
    let grip = state.joints[JAW] / sim.kinematics.jaw_closed();
    let r = reward_terms(d, grip, state.log.position.z, command.norm(), &settings.reward);
    let v3 = |v: &nalgebra::Vector3<f64>| format!("[{:>9.5}, {:>9.5}, {:>9.5}]", v.x, v.y, v.z);
    let q: Vec<String> = state.joints.0.iter().map(|x| format!("{x:.4}")).collect();
    println!("q            {}", q.join(", "));
    println!("p_C          {}", v3(&g.position));
    println!("e_C,x        {}", v3(&g.x_axis));
    println!("e_C,y        {}", v3(&g.y_axis));
    println!("e_C,z        {}", v3(&g.z_axis));
    println!("jaw width    {:.4}", sim.jaw_width(&state));
    println!(
        "log          center {}  yaw {:.4}  diameter {:.3}",
        v3(&state.log.position),
        state.log.yaw,
        state.log.diameter
    );
    println!("target       {}", v3(&target_point(&state.log.position, settings.reward.max_log_diameter)));
    println!("delta_p      {}  |delta_p| {:.5}", v3(&dp), dp.norm());
    println!("delta_psi    {dpsi:.6}");
    println!("d_combine    {d:.6}");
    println!("r_distance   {:.6}", r.distance);
    println!("r_grapple    {:.6}", r.grapple);
    println!("r_lift       {:.6}", r.lift);
    println!("r_balance    {:.6}", r.balance);
    println!("R            {:.6}", r.total);
    Ok(())
}

fn cmd_emit_curves(cfg: &RunConfig, args: &CurveArgs) -> anyhow::Result<()> {
    let inputs = if args.metrics.is_empty() {
        vec![cfg.paths.log_dir.join("metrics.jsonl")]
    } else {
        args.metrics.clone()
    };
    let mut runs = Vec::new();
    for path in &inputs {
        let run = path
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        runs.push((run, read_metrics(path)?));
    }
    let bytes = curves_csv(&runs);
    match &args.out {
        Some(out) => {
            std::fs::write(out, &bytes).map_err(|e| io_error(out, e))?;
            println!("curves written to {}", out.display());
        }
        None => print!("{bytes}"),
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Numerical(_) => EXIT_NUMERICAL,
                Error::Io { .. } | Error::Checkpoint { .. } => EXIT_IO,
                _ => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train(_) => cmd_train(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Inspect(a) => cmd_inspect(&cfg, a),
        Command::EmitCurves(a) => cmd_emit_curves(&cfg, a),
        Command::DumpConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
