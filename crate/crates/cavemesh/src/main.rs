use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cavemesh::cli;

#[derive(Parser)]
#[command(
    name = "cavemesh",
    about = "Adaptive implicit-surface meshing for tunnel and cave scans",
    disable_version_flag = true
)]
struct Args {
    /// Print version and config schema, then exit.
    #[arg(long, global = true)]
    version: bool,

    /// TOML run configuration; defaults apply where absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed for every random draw in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: frames, trajectory, and ground truth.
    Simulate {
        /// Scene spec TOML.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for frames and truth.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a mesh from frames and a trajectory.
    Reconstruct {
        /// Directory with frame_*.ply files.
        #[arg(long)]
        frames: PathBuf,
        /// Trajectory file (timestamp tx ty tz qx qy qz qw).
        #[arg(long)]
        trajectory: PathBuf,
        /// Output mesh path (.obj or .ply).
        #[arg(long)]
        out: PathBuf,
        /// Trained policy checkpoint; defaults drive the pipeline when
        /// absent.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Ground-truth cloud; prints a quality report when given.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Smooth point-cloud normals and write the result.
    Smooth {
        /// Input cloud (PLY or XYZ), treated as one scanblock.
        #[arg(long)]
        input: PathBuf,
        /// Output PLY with smoothed normals.
        #[arg(long)]
        out: PathBuf,
        /// Also write the oriented pre-smoothing normals.
        #[arg(long)]
        dump_raw: Option<PathBuf>,
        /// Neighborhood radius override (meters).
        #[arg(long)]
        radius: Option<f64>,
        /// Neighbor-count cap override.
        #[arg(long)]
        kmax: Option<usize>,
        /// Convergence weight override.
        #[arg(long)]
        beta: Option<f64>,
        /// Preservation weight override.
        #[arg(long)]
        eta: Option<f64>,
        /// Segment count override for orientation.
        #[arg(long)]
        segments: Option<usize>,
    },
    /// Score a mesh against a ground-truth cloud.
    Evaluate {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// F-score distance threshold in centimeters.
        #[arg(long)]
        threshold_cm: Option<f64>,
    },
    /// Train the parameter-selection agent on a scene set.
    TrainAgent {
        /// Directory of scene spec TOML files.
        #[arg(long)]
        scenes: PathBuf,
        /// PPO iterations to run.
        #[arg(long)]
        iters: usize,
        /// Weights checkpoint output.
        #[arg(long)]
        out: PathBuf,
        /// Reward curve CSV output (stdout when absent).
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Write the effective configuration as TOML.
    DumpConfig {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(args: Args) -> cavemesh::Result<()> {
    if args.version {
        println!("{}", cli::version_string());
        return Ok(());
    }
    let mut config = cli::load_config(args.config.as_deref())?;
    let Some(command) = args.command else {
        println!("{}", cli::version_string());
        println!("run with --help for usage");
        return Ok(());
    };
    match command {
        Command::Simulate { spec, out } => cli::cmd_simulate(&spec, &out, &config),
        Command::Reconstruct {
            frames,
            trajectory,
            out,
            weights,
            gt,
        } => cli::cmd_reconstruct(
            &cli::ReconstructArgs {
                frames_dir: &frames,
                trajectory: &trajectory,
                out: &out,
                weights: weights.as_deref(),
                gt: gt.as_deref(),
                seed: args.seed,
            },
            &config,
        ),
        Command::Smooth {
            input,
            out,
            dump_raw,
            radius,
            kmax,
            beta,
            eta,
            segments,
        } => {
            if let Some(r) = radius {
                config.smoothing.radius = r;
            }
            if let Some(k) = kmax {
                config.smoothing.k_max = k;
            }
            if let Some(b) = beta {
                config.smoothing.beta = b;
            }
            if let Some(e) = eta {
                config.smoothing.eta = e;
            }
            if let Some(s) = segments {
                config.smoothing.segments = s;
            }
            config.validate()?;
            cli::cmd_smooth(&input, &out, dump_raw.as_deref(), &config)
        }
        Command::Evaluate {
            mesh,
            gt,
            threshold_cm,
        } => cli::cmd_evaluate(&mesh, &gt, threshold_cm, args.seed, &config),
        Command::TrainAgent {
            scenes,
            iters,
            out,
            curve,
        } => cli::cmd_train_agent(&scenes, iters, args.seed, &out, curve.as_deref(), &config),
        Command::DumpConfig { out } => cli::cmd_dump_config(&out, &config),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
