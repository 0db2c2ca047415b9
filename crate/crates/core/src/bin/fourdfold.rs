use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fourdfold::dataio::{load_trajectory, save_trajectory, synthesize, SynthConfig, SynthKind};
use fourdfold::diffusion::{iterative_rollout, reverse_sample, SampleRequest};
use fourdfold::eval::{
    r_table, tica_summary, write_scatter_png, EvalReport, EvalSettings, DEFAULT_S_VALUES, TICA_LAG,
};
use fourdfold::protein::{RigidGroupTemplates, Trajectory};
use fourdfold::trainer::{stage_options, Checkpoint, Dataset, TrainConfig, Trainer, SEED_ENV};

const HIST_BINS: usize = 32;

#[derive(Parser)]
#[command(name = "fourdfold", version, about = "Diffusion over protein frame trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train stage 1 or 2 from a TOML or JSON config.
    Train(TrainArgs),
    /// Generate future states after the end of a trajectory.
    Sample(SampleArgs),
    /// Compare predictions with a ground-truth trajectory.
    Eval(EvalArgs),
    /// Write a synthetic trajectory.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: Option<u8>,
    /// Continue this checkpoint, or start stage 2 from a stage-1 checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint to write; defaults to the config's `checkpoint`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Number of future states to generate.
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Generate one state per call instead of all at once.
    #[arg(long)]
    iterative: bool,
    /// Index of the reference state in the input; defaults to the last.
    #[arg(long)]
    reference_index: Option<usize>,
    #[arg(long, default_value_t = 100)]
    diffusion_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// One or more sampled trajectories of the same window.
    #[arg(long, num_args = 1.., required = true)]
    pred: Vec<PathBuf>,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Ground-truth state matching the first predicted state.
    #[arg(long, default_value_t = 0)]
    ref_start: usize,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Add a TICA projection fitted on the full reference.
    #[arg(long)]
    tica: bool,
    #[arg(long, default_value_t = TICA_LAG)]
    lag: usize,
    /// Scatter image of the TICA projection.
    #[arg(long, requires = "tica")]
    plot: Option<PathBuf>,
    /// Skip Kabsch superposition before each RMSE.
    #[arg(long)]
    no_align: bool,
    #[arg(long, value_delimiter = ',')]
    s_values: Option<Vec<usize>>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "hinge")]
    kind: SynthKind,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    len: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

enum Failure {
    Usage(String),
    Runtime(fourdfold::Error),
}

impl From<fourdfold::Error> for Failure {
    fn from(e: fourdfold::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult = Result<(), Failure>;

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}='{v}' is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn train(a: TrainArgs) -> CliResult {
    let mut cfg = TrainConfig::load(&a.config)?;
    cfg.apply_env()?;
    if let Some(m) = a.max_steps {
        cfg.max_steps = Some(m);
    }
    let stage = a.stage.unwrap_or(cfg.stage);
    cfg.stage = stage;
    let out = a
        .out
        .or_else(|| cfg.checkpoint.clone())
        .unwrap_or_else(|| PathBuf::from(format!("stage{stage}.ckpt")));
    let log_path = cfg.log.clone();
    let data = Dataset::from_config(&cfg)?;
    let resumed = a.resume.as_ref().map(Checkpoint::load).transpose()?;
    let mut trainer = match (stage, &resumed) {
        (1, None) => Trainer::new(cfg, &data)?,
        (_, None) => {
            return Err(Failure::Usage(
                "stage 2 starts from a stage-1 checkpoint given with --resume".into(),
            ))
        }
        (s, Some(ck)) if ck.stage == s => Trainer::resume(ck, &data)?,
        (2, Some(ck)) => Trainer::stage2(cfg, &data, ck)?,
        (_, Some(ck)) => {
            return Err(Failure::Usage(format!(
                "cannot continue a stage-{} checkpoint as stage 1",
                ck.stage
            )))
        }
    };
    let total = trainer.total_steps();
    log::info!(
        "stage {stage}: {} windows, {} steps per epoch, training to step {total}",
        data.len(),
        trainer.steps_per_epoch()
    );
    let records = match log_path {
        Some(path) => {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| fourdfold::Error::Io { path: path.clone(), source: e })?;
            trainer.run(usize::MAX, Some(&mut f as &mut dyn Write))?
        }
        None => trainer.run(usize::MAX, None)?,
    };
    trainer.checkpoint().save(&out)?;
    match records.last() {
        Some(r) => eprintln!("stage {stage} step {} loss {:.5}; wrote {}", r.step, r.loss, out.display()),
        None => eprintln!("stage {stage} already complete; wrote {}", out.display()),
    }
    Ok(())
}

fn sample(a: SampleArgs) -> CliResult {
    if a.steps == 0 || a.diffusion_steps == 0 {
        return Err(Failure::Usage("--steps and --diffusion-steps must be positive".into()));
    }
    let ck = Checkpoint::load(&a.ckpt)?;
    let input = load_trajectory(&a.input)?;
    let model = &ck.config.model;
    let r = a.reference_index.unwrap_or(input.len() - 1);
    if r >= input.len() || r < model.s_mot {
        return Err(Failure::Usage(format!(
            "reference index {r} needs {} earlier states inside a trajectory of {}",
            model.s_mot,
            input.len()
        )));
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let sched = ck.config.schedule()?;
    let req = SampleRequest {
        reference: &input.states[r],
        motion: &input.states[r - model.s_mot..r],
        s: if a.iterative { 1 } else { a.steps },
        n_steps: a.diffusion_steps,
        noise_scale: a.noise_scale,
        dt: input.dt,
        embedding: None,
        options: stage_options(ck.stage),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = RigidGroupTemplates::standard();
    let traj = if a.iterative {
        iterative_rollout(&ck.params, model, &sched, templates, &req, a.steps, &mut rng)?
    } else {
        reverse_sample(&ck.params, model, &sched, templates, &req, &mut rng)?
    };
    save_trajectory(&traj, &a.out)?;
    if let Some(p) = &a.json {
        save_trajectory(&traj, p)?;
    }
    eprintln!("sampled {} states with seed {seed}; wrote {}", traj.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let draws = a.pred.iter().map(load_trajectory).collect::<fourdfold::Result<Vec<_>>>()?;
    let reference = load_trajectory(&a.reference)?;
    if a.ref_start >= reference.len() {
        return Err(Failure::Usage(format!(
            "--ref-start {} is past the {} reference states",
            a.ref_start,
            reference.len()
        )));
    }
    let gt: Trajectory = reference.slice(a.ref_start, reference.len());
    let s_values = a.s_values.unwrap_or_else(|| DEFAULT_S_VALUES.to_vec());
    if s_values.is_empty() || s_values.contains(&0) {
        return Err(Failure::Usage("--s-values must be positive integers".into()));
    }
    let aligned = !a.no_align;
    let metrics = r_table(&draws, &gt, &s_values, aligned)?;
    let tica = if a.tica {
        let summary = tica_summary(&reference, &draws, a.lag, HIST_BINS)?;
        if let Some(p) = &a.plot {
            write_scatter_png(&summary.reference, &summary.predicted, p)?;
        }
        Some(summary)
    } else {
        None
    };
    let report = EvalReport {
        metrics,
        settings: EvalSettings {
            aligned,
            s_values,
            tica_lag: a.tica.then_some(a.lag),
        },
        tica,
    };
    report.write_json(&a.report)?;
    if let Some(p) = &a.csv {
        report.write_csv(p)?;
    }
    println!("{}", report.metrics.table_header());
    println!("{}", report.metrics.table_row());
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut cfg = SynthConfig::new(a.kind, a.n, a.len, a.dt, seed);
    if let Some(v) = a.amplitude {
        cfg.amplitude = v;
    }
    if let Some(v) = a.noise {
        cfg.noise = v;
    }
    let out = synthesize(&cfg)?;
    save_trajectory(&out.trajectory, &a.out)?;
    eprintln!(
        "wrote {} states of {} residues to {}",
        out.trajectory.len(),
        out.trajectory.n_residues(),
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
