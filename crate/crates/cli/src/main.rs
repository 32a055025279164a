//! Command-line front end. Log verbosity is read from `RALLYRECON_LOG`
//! (`error`, `warn`, `info`, `debug`; default `warn`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rallyrecon::commands::{
    cmd_bench, cmd_calibrate, cmd_plot, cmd_reconstruct, cmd_segment, load_bench_config, load_run_config, CmdError,
};

#[derive(Parser, Debug)]
#[command(name = "rallyrecon", version, about = "3D ball trajectory, velocity and spin from monocular detections")]
struct Cli {
    /// JSON settings file: pipeline settings, or the benchmark setup for `bench`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Benchmark seed, overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Physics preset (tabletennis, tennis-grass, tennis-clay) or parameter file.
    #[arg(long, global = true)]
    physics: Option<String>,
    /// Segment on positions only and ignore motion blur.
    #[arg(long, global = true)]
    no_blur: bool,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a filtered camera stream from table keypoints.
    Calibrate {
        keypoints: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Split a detection track into arcs and locate bounces and strikes.
    Segment {
        detections: PathBuf,
        /// Calibration stream; labels the events when given.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, default_value = "segments.jsonl")]
        segments_out: PathBuf,
        #[arg(long, default_value = "events.jsonl")]
        events_out: PathBuf,
    },
    /// Reconstruct every table bounce of a rally.
    Reconstruct {
        detections: PathBuf,
        calibration: PathBuf,
        #[arg(short, long)]
        out_dir: PathBuf,
        /// Also write top-down and side-view plots.
        #[arg(long)]
        svg: bool,
    },
    /// Run the synthetic benchmark.
    Bench {
        #[arg(short, long)]
        out_dir: PathBuf,
        /// Trajectories per view, overrides the config file.
        #[arg(short = 'n', long)]
        trajectories: Option<usize>,
        /// Also write an MAE scatter plot.
        #[arg(long)]
        svg: bool,
    },
    /// Plot trajectory CSVs or a benchmark report as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CmdError> {
    let run_config = || {
        let mut cfg = load_run_config(cli.config.as_deref())?;
        if let Some(p) = &cli.physics {
            cfg.physics = p.clone();
        }
        if cli.no_blur {
            cfg.seg.blur_weight = 0.0;
        }
        Ok::<_, CmdError>(cfg)
    };
    match &cli.command {
        Command::Calibrate { keypoints, out } => {
            let s = cmd_calibrate(keypoints, out, &run_config()?)?;
            println!("calibrated {}/{} frames, wrote {} records to {}", s.calibrated, s.frames, s.written, out.display());
        }
        Command::Segment { detections, calibration, segments_out, events_out } => {
            let s = cmd_segment(detections, calibration.as_deref(), segments_out, events_out, &run_config()?)?;
            println!("{} segments, {} events ({} table bounces)", s.segments, s.events, s.bounces);
        }
        Command::Reconstruct { detections, calibration, out_dir, svg } => {
            let s = cmd_reconstruct(detections, calibration, out_dir, &run_config()?, *svg)?;
            for r in &s.records {
                match (&r.v_minus, r.reproj_rmse) {
                    (Some(v), Some(rmse)) => println!(
                        "t* = {:.3} s  v- = ({:.2}, {:.2}, {:.2}) m/s  rmse = {:.2} px  {}",
                        r.t_star,
                        v[0],
                        v[1],
                        v[2],
                        rmse,
                        if r.success { "ok" } else { "failed" }
                    ),
                    _ => println!("t* = {:.3} s  {}", r.t_star, r.error.as_deref().unwrap_or("failed")),
                }
            }
        }
        Command::Bench { out_dir, trajectories, svg } => {
            let mut cfg = load_bench_config(cli.config.as_deref())?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if let Some(n) = trajectories {
                cfg.n_trajectories = *n;
            }
            if cli.physics.as_deref().is_some_and(|p| p != "tabletennis") {
                return Err(CmdError::Input("the benchmark simulates table tennis only".into()));
            }
            let report = cmd_bench(&cfg, out_dir, *svg)?;
            print!("{}", report.summary_table());
        }
        Command::Plot { inputs, out } => cmd_plot(inputs, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RALLYRECON_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
