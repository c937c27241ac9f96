//! `spcsfm`: simulate a crater scene, reconstruct it, and score the result.

mod config;
mod io;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spcsfm::metrics::{evaluate, MetricsError, METRIC_NAMES};
use spcsfm::scene::{simulate_measurements, ModelChoice, SceneError};
use spcsfm::sfm::{reconstruct, SfmError, Solution};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "spcsfm", version, about = "Keypoint stereophotoclinometry on a factor graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic crater scene into measurement files and ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reconstruct landmarks, normals, albedos, poses and Sun directions.
    Solve {
        /// Directory with measurements.txt and sun_measurements.txt.
        measurements: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Align a solution to a reference and write metric tables.
    Evaluate {
        solution: PathBuf,
        truth: PathBuf,
        /// Measurement directory; enables the photometric error.
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Defaults to the configuration stored with the solution.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    LunarLambert,
    Schroder,
}

#[derive(Args)]
struct Overrides {
    /// Seed of the scene and of the RANSAC stages.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long, value_name = "BOOL")]
    calibrated: Option<bool>,
    #[arg(long)]
    no_smoothness: bool,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(seed) = self.seed {
            c.scene.seed = seed;
            c.bootstrap.seed = seed;
        }
        if let Some(m) = self.model {
            c.photometry.model = match m {
                ModelArg::LunarLambert => ModelChoice::LunarLambert,
                ModelArg::Schroder => ModelChoice::Schroder,
            };
        }
        if let Some(cal) = self.calibrated {
            c.photometry.calibrated = cal;
        }
        if self.no_smoothness {
            c.bootstrap.smoothness = false;
        }
    }
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const CONFIG_ERROR: u8 = 1;
const DATA_ERROR: u8 = 2;
const SOLVER_ERROR: u8 = 3;

trait Classify<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn load_config(path: Option<&Path>, overrides: Option<&Overrides>) -> Result<RunConfig, Failure> {
    let mut c = match path {
        Some(p) => RunConfig::load(p).or_exit(CONFIG_ERROR)?,
        None => RunConfig::default(),
    };
    if let Some(o) = overrides {
        o.apply(&mut c);
    }
    Ok(c)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).or_exit(DATA_ERROR)
}

fn simulate(config: Option<&Path>, out: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let c = load_config(config, Some(overrides))?;
    let sim = simulate_measurements(&c.scene, &c.noise, &c.photometry).map_err(|e| {
        let code = if matches!(e, SceneError::InvalidConfig(_)) { CONFIG_ERROR } else { DATA_ERROR };
        Failure { code, error: e.into() }
    })?;
    let truth = out.join("truth");
    create_dir(&truth)?;
    io::write_measurements(out, &sim.measurements).or_exit(DATA_ERROR)?;
    io::write_reconstruction(&truth, &sim.truth, true).or_exit(DATA_ERROR)?;
    io::write_file(&out.join("config.toml"), &c.to_toml()).or_exit(DATA_ERROR)?;
    println!(
        "simulated {} views, {} landmarks, {} observations into {}",
        sim.truth.views.len(),
        sim.truth.landmarks.len(),
        sim.measurements.observations.len(),
        out.display()
    );
    Ok(())
}

fn run_log(c: &RunConfig, s: &Solution) -> String {
    let mut log = String::new();
    let b = &s.bootstrap;
    let w = &mut log;
    writeln!(w, "model {:?}, calibrated {}, smoothness {}", c.photometry.model, c.photometry.calibrated, c.bootstrap.smoothness)
        .unwrap();
    writeln!(w, "views {}", s.reconstruction.views.len()).unwrap();
    writeln!(w, "landmarks {}", s.reconstruction.landmarks.len()).unwrap();
    writeln!(w, "observations {}", s.observations.len()).unwrap();
    writeln!(w, "bootstrap scale view {}", b.scale_view).unwrap();
    writeln!(w, "bootstrap planar views {:?}", b.planar_views).unwrap();
    writeln!(w, "bootstrap failed views {:?}", b.failed_views).unwrap();
    writeln!(w, "bootstrap triangulated {}", b.triangulated).unwrap();
    writeln!(w, "bootstrap rejected observations {}", b.rejected_observations).unwrap();
    writeln!(w, "bootstrap landmarks without albedo {}", b.without_albedo).unwrap();
    if let Some(g) = &b.geometric {
        writeln!(
            w,
            "geometric refinement {} iterations, {:?}, cost {} -> {}",
            g.iterations,
            g.termination,
            g.initial_cost(),
            g.final_cost()
        )
        .unwrap();
    }
    let k = &s.counts;
    writeln!(
        w,
        "factors projection {} photometric {} sun {} smoothness {} prior {} total {}",
        k.projection,
        k.photometric,
        k.sun,
        k.smoothness,
        k.prior,
        k.total()
    )
    .unwrap();
    writeln!(w, "variables {}", s.num_variables).unwrap();
    let o = &s.optimizer;
    writeln!(w, "iterations {}", o.iterations).unwrap();
    writeln!(w, "termination {:?}", o.termination).unwrap();
    writeln!(w, "final gradient norm {}", o.final_gradient_norm).unwrap();
    writeln!(w, "final damping {}", o.final_damping).unwrap();
    writeln!(w, "# step cost").unwrap();
    for (i, cost) in o.cost_trace.iter().enumerate() {
        writeln!(w, "{i} {cost}").unwrap();
    }
    log
}

fn solve(measurements: &Path, config: Option<&Path>, out: &Path, overrides: &Overrides) -> Result<(), Failure> {
    let c = load_config(config, Some(overrides))?;
    let m = io::read_measurements(measurements).or_exit(DATA_ERROR)?;
    let solution = reconstruct(&m, &c.bootstrap, &c.photometry, &c.optimizer).map_err(|e| {
        let code = match e {
            SfmError::Graph(_) | SfmError::Factor(_) => SOLVER_ERROR,
            SfmError::InvalidConfig(_) => CONFIG_ERROR,
            _ => DATA_ERROR,
        };
        Failure { code, error: e.into() }
    })?;
    create_dir(out)?;
    io::write_reconstruction(out, &solution.reconstruction, !c.photometry.calibrated).or_exit(DATA_ERROR)?;
    io::write_file(&out.join("run_log.txt"), &run_log(&c, &solution)).or_exit(DATA_ERROR)?;
    io::write_file(&out.join("config.toml"), &c.to_toml()).or_exit(DATA_ERROR)?;
    let o = &solution.optimizer;
    println!(
        "{} landmarks, {} iterations, {:?}, cost {} -> {}",
        solution.reconstruction.landmarks.len(),
        o.iterations,
        o.termination,
        o.initial_cost(),
        o.final_cost()
    );
    if o.termination.is_failure() {
        return Err(Failure { code: SOLVER_ERROR, error: anyhow!("optimizer stopped: {:?}", o.termination) });
    }
    Ok(())
}

fn evaluate_cmd(
    solution: &Path,
    truth: &Path,
    measurements: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let stored = solution.join("config.toml");
    let c = match config {
        Some(p) => load_config(Some(p), None)?,
        None if stored.exists() => load_config(Some(&stored), None)?,
        None => RunConfig::default(),
    };
    let estimate = io::read_reconstruction(solution).or_exit(DATA_ERROR)?;
    let reference = io::read_reconstruction(truth).or_exit(DATA_ERROR)?;
    let observations = match measurements {
        Some(dir) => io::read_measurements(dir).or_exit(DATA_ERROR)?.observations,
        None => Vec::new(),
    };
    let eval = evaluate(
        &estimate,
        &reference,
        &observations,
        &c.photometry.reflectance_model(),
        c.photometry.cutoff_deg,
        c.bootstrap.alignment_landmarks,
        c.bootstrap.seed,
    )
    .map_err(|e| {
        let error = match e {
            MetricsError::NoCommonLandmarks => anyhow!("solution and truth share no landmark ids"),
            e => e.into(),
        };
        Failure { code: DATA_ERROR, error }
    })?;
    create_dir(out)?;
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<(), Failure> {
        let mut buf = Vec::new();
        f(&mut buf).or_exit(DATA_ERROR)?;
        let path = out.join(name);
        fs::write(&path, buf).with_context(|| format!("cannot write {}", path.display())).or_exit(DATA_ERROR)
    };
    write("landmarks.csv", &|b| eval.write_landmark_csv(b))?;
    write("views.csv", &|b| eval.write_view_csv(b))?;
    write("summary.csv", &|b| eval.write_summary_csv(b))?;
    println!("{:<20} {:>7} {:>12} {:>12} {:>12}", "metric", "count", "mean", "median", "p95");
    for name in METRIC_NAMES {
        match eval.summary(name) {
            Some(s) => println!("{name:<20} {:>7} {:>12.4e} {:>12.4e} {:>12.4e}", s.count, s.mean, s.median, s.p95),
            None => println!("{name:<20} {:>7}", 0),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate { config, out, overrides } => simulate(config.as_deref(), out, overrides),
        Command::Solve { measurements, config, out, overrides } => solve(measurements, config.as_deref(), out, overrides),
        Command::Evaluate { solution, truth, measurements, config, out } => {
            evaluate_cmd(solution, truth, measurements.as_deref(), config.as_deref(), out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(CONFIG_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
