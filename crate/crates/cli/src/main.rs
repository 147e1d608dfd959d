//! `himosa`: train, run, evaluate, profile and verify the super-resolution model.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use himosa::ablate::{run_sweep, Sweep};
use himosa::data::{load_image, save_image, DatasetManifest};
use himosa::eval::{evaluate, super_resolve};
use himosa::metrics::count_flops;
use himosa::model::{infer, ForwardOptions};
use himosa::oracle::OracleReport;
use himosa::routes::render_routes;
use himosa::train::{load_state, Precision, RunConfig, TrainState, Trainer};
use himosa::verify::{degeneracy_suite, grad_suite, oracle_suite};
use himosa::{Error, Real, Result};

const REFERENCE_LINE: &str = "# reference (paper config, 256x256 input): 3.26M params, 139.58G FLOPs";

#[derive(Parser)]
#[command(name = "himosa", version, about = "Hierarchical-window sparse attention super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset manifest, writing checkpoints and a log to DIR
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Super-resolve one image
    Sr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Per-image and mean PSNR/SSIM over a manifest
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Parameter and FLOP accounting per module
    Flops {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "256x256", value_parser = parse_size)]
        size: (usize, usize),
    },
    /// Train and compare model variants on a small budget
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        sweep: SweepArg,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the gradient and oracle verification suites
    Check {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Write per-layer, per-expert token selection masks
    Routes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Sparsity,
    Experts,
    Selection,
}

impl From<SweepArg> for Sweep {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::Sparsity => Sweep::Sparsity,
            SweepArg::Experts => Sweep::Experts,
            SweepArg::Selection => Sweep::Selection,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Grad,
    Oracle,
    All,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let dim = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| format!("bad extent `{v}`"));
    Ok((dim(h)?, dim(w)?))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("HIMOSA_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("HIMOSA_THREADS must be a non-negative integer, got `{raw}`")))?;
    #[cfg(feature = "parallel")]
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn load_pairs(run: &RunConfig, manifest: &Path) -> Result<Vec<himosa::data::ImagePair>> {
    DatasetManifest::load(manifest, run.model.scale, "all")?.load_pairs()
}

fn train<T: Real>(run: RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let pairs = load_pairs(&run, data)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let state = match resume {
        Some(ckpt) => {
            let mut s = load_state::<T>(ckpt, Some(&run.model))?;
            s.run = run;
            s
        }
        None => TrainState::new(run)?,
    };
    let log_path = out.join("train.log");
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut trainer = Trainer::new(state, &pairs)?;
    let start = trainer.state.iter;
    trainer.run(Some(out), &mut log)?;
    println!(
        "trained iterations {}..{}; log {}; checkpoint {}",
        start,
        trainer.state.iter,
        log_path.display(),
        out.join("last.himo").display()
    );
    Ok(())
}

fn sr<T: Real>(run: RunConfig, ckpt: &Path, input: &Path, out: &Path, scale: Option<usize>) -> Result<()> {
    if let Some(r) = scale.filter(|&r| r != run.model.scale) {
        return Err(Error::Config(format!("--scale {r} does not match the model scale {}", run.model.scale)));
    }
    let state = load_state::<T>(ckpt, Some(&run.model))?;
    let lr = load_image(input)?;
    let img = super_resolve(&run.model, &state.weights, &lr, run.train.seed)?;
    save_image(&img, out)?;
    println!("{}x{} -> {}x{} {}", lr.width(), lr.height(), img.width(), img.height(), out.display());
    Ok(())
}

fn eval<T: Real>(run: RunConfig, ckpt: &Path, data: &Path) -> Result<()> {
    let state = load_state::<T>(ckpt, Some(&run.model))?;
    let pairs = load_pairs(&run, data)?;
    println!("{}", evaluate(&run.model, &state.weights, &pairs, run.train.seed)?);
    Ok(())
}

fn ablate<T: Real>(run: RunConfig, sweep: Sweep, data: &Path) -> Result<()> {
    let pairs = load_pairs(&run, data)?;
    println!("{}", run_sweep::<T>(&run, sweep, &pairs)?);
    Ok(())
}

fn routes<T: Real>(run: RunConfig, ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let state = load_state::<T>(ckpt, Some(&run.model))?;
    let lr = load_image(input)?;
    let opts = ForwardOptions { seed: run.train.seed, record_routes: true, ..Default::default() };
    let (_, layer_routes) = infer(&run.model, &state.weights, &lr.to_tensor::<T>(), &opts)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let masks = render_routes(&lr, &layer_routes);
    for (name, img) in &masks {
        save_image(img, out.join(name))?;
    }
    println!("wrote {} masks to {}", masks.len(), out.display());
    Ok(())
}

fn check(suite: Suite) -> bool {
    let mut reports: Vec<OracleReport> = Vec::new();
    if suite != Suite::Oracle {
        reports.extend(grad_suite());
    }
    if suite != Suite::Grad {
        reports.extend(oracle_suite());
        reports.extend(degeneracy_suite());
    }
    println!("check\tmax_abs\tmax_rel\tresult");
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} checks, {} failed", reports.len(), failed);
    failed == 0
}

macro_rules! dispatch {
    ($run:expr, $f:ident($($arg:expr),*)) => {
        match $run.precision {
            Precision::F32 => $f::<f32>($run, $($arg),*),
            Precision::F64 => $f::<f64>($run, $($arg),*),
        }
    };
}

fn execute(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Train { config, data, out, resume } => {
            let run = RunConfig::load(&config)?;
            dispatch!(run, train(&data, &out, resume.as_deref()))?;
        }
        Command::Sr { config, ckpt, input, out, scale } => {
            let run = RunConfig::load(&config)?;
            dispatch!(run, sr(&ckpt, &input, &out, scale))?;
        }
        Command::Eval { config, ckpt, data } => {
            let run = RunConfig::load(&config)?;
            dispatch!(run, eval(&ckpt, &data))?;
        }
        Command::Flops { config, size } => {
            let run = RunConfig::load(&config)?;
            print!("{}", count_flops(&run.model, size.0, size.1)?);
            println!("{REFERENCE_LINE}");
        }
        Command::Ablate { config, sweep, data } => {
            let run = RunConfig::load(&config)?;
            dispatch!(run, ablate(sweep.into(), &data))?;
        }
        Command::Check { suite } => return Ok(check(suite)),
        Command::Routes { config, ckpt, input, out } => {
            let run = RunConfig::load(&config)?;
            dispatch!(run, routes(&ckpt, &input, &out))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = execute(cli);
    let _ = io::stdout().flush();
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
