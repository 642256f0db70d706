//! `savch`: run, verify and probe SAV Cahn-Hilliard simulations from a flat
//! `key = value` config file. Every output is CSV.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 usage or config error,
//! 3 energy-identity violation, 4 mass-drift violation.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use savch_core::sav::write_step_csv;
use savch_core::{
    convergence_study_threads, extract_zero_level, parse_config, spectral_probe, Error, RunConfig, ScalarField,
    Simulation, SolverWorkspace, SpectralProbeResult,
};

#[derive(Parser)]
#[command(name = "savch", version, about = "SAV Cahn-Hilliard solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Time-step the configured problem and write diagnostics and snapshots.
    Run(Common),
    /// Measure the temporal order by repeated step halving.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        halvings: usize,
    },
    /// Principal eigenvalue of the linearized operator at stored snapshots.
    Spectral {
        #[command(flatten)]
        common: Common,
        /// Snapshot CSV written by `run`; repeat for several.
        #[arg(long, required = true)]
        snapshot: Vec<PathBuf>,
        /// Relative residual at which the eigen-iteration stops.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Dump the truncated potential: polynomial coefficients and samples.
    Potential(Common),
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Io(PathBuf, io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::EnergyIdentity { .. }) => 3,
            Failure::Core(Error::MassDrift { .. }) => 4,
            Failure::Core(Error::Config { .. } | Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(c) => cmd_run(&c),
        Command::Convergence { common, halvings } => cmd_convergence(&common, halvings),
        Command::Spectral { common, snapshot, tol } => cmd_spectral(&common, &snapshot, tol),
        Command::Potential(c) => cmd_potential(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("savch: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load(common: &Common) -> CliResult<(RunConfig, PathBuf)> {
    let config = parse_config(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&out).map_err(|e| Failure::Io(out.clone(), e))?;
    Ok((config, out))
}

/// Writes `path` through a buffered writer, attaching the path to any I/O error.
fn write_file<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let io_err = |e| Failure::Io(path.to_path_buf(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    body(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// `SAVCH_THREADS`, or the machine's parallelism when unset. Zero means sequential.
fn thread_cap() -> usize {
    match std::env::var("SAVCH_THREADS") {
        Ok(v) => v.trim().parse().unwrap_or(0),
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

fn cmd_run(common: &Common) -> CliResult<()> {
    let (config, out) = load(common)?;
    let mut sim = Simulation::from_config(&config)?;
    let due = config.snapshot_steps();
    let mut index = Vec::new();
    let mut reports = Vec::with_capacity(config.steps());

    let snapshot = |sim: &Simulation, index: &mut Vec<(usize, f64, String)>| -> CliResult<()> {
        let state = sim.state();
        if due.binary_search(&state.n).is_err() {
            return Ok(());
        }
        let name = format!("snapshot_{:08}.csv", state.n);
        let path = out.join(&name);
        let file = File::create(&path).map_err(|e| Failure::Io(path.clone(), e))?;
        let mut w = BufWriter::new(file);
        state.u.write_csv(&mut w)?;
        w.flush().map_err(|e| Failure::Io(path.clone(), e))?;
        let level = extract_zero_level(&state.u);
        write_file(&out.join(format!("levelset_{:08}.csv", state.n)), |w| level.write_csv(w))?;
        index.push((state.n, state.t, name));
        Ok(())
    };

    snapshot(&sim, &mut index)?;
    let mut failure = None;
    for _ in 0..config.steps() {
        match sim.step() {
            Ok(r) => reports.push(r),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        snapshot(&sim, &mut index)?;
    }

    // History is written even when a step failed, so the run can be inspected.
    write_file(&out.join("steps.csv"), |w| write_step_csv(w, &reports))?;
    write_file(&out.join("snapshots.csv"), |w| {
        writeln!(w, "n,t,file")?;
        for (n, t, name) in &index {
            writeln!(w, "{n},{t:.16e},{name}")?;
        }
        Ok(())
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let last = reports.last().map_or(sim.initial_energy(), |r| r.energy);
    println!(
        "{} steps, energy {:.6e} -> {last:.6e}, min denominator {:.15}",
        reports.len(),
        sim.initial_energy(),
        sim.min_denom()
    );
    Ok(())
}

fn cmd_convergence(common: &Common, halvings: usize) -> CliResult<()> {
    let (config, out) = load(common)?;
    let report = convergence_study_threads(&config, halvings, thread_cap())?;
    write_file(&out.join("convergence.csv"), |w| report.write_csv(w))?;
    match report.finest_order() {
        Some(p) if p.is_finite() => println!("finest order {p:.4}"),
        _ => println!("order undefined: run differences vanished"),
    }
    Ok(())
}

/// Times recorded for snapshot files in a `snapshots.csv` next to them.
fn snapshot_time(path: &Path) -> Option<f64> {
    let name = path.file_name()?.to_str()?;
    let index = File::open(path.with_file_name("snapshots.csv")).ok()?;
    BufReader::new(index).lines().skip(1).map_while(|l| l.ok()).find_map(|line| {
        let mut parts = line.splitn(3, ',');
        let (_, t, file) = (parts.next()?, parts.next()?, parts.next()?);
        (file.trim() == name).then(|| t.trim().parse().ok()).flatten()
    })
}

fn probe_snapshot(path: &Path, config: &RunConfig, tol: f64) -> CliResult<SpectralProbeResult> {
    let file = File::open(path).map_err(|e| Failure::Io(path.to_path_buf(), e))?;
    let u = ScalarField::read_csv(BufReader::new(file))?;
    let ws = SolverWorkspace::new(*u.grid());
    Ok(spectral_probe(&ws, &u, config.eps, tol, &config.potential()?)?)
}

fn cmd_spectral(common: &Common, snapshots: &[PathBuf], tol: f64) -> CliResult<()> {
    let (config, out) = load(common)?;
    let threads = thread_cap().max(1);
    let mut results = Vec::with_capacity(snapshots.len());
    for chunk in snapshots.chunks(threads) {
        let batch: Vec<CliResult<SpectralProbeResult>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|p| s.spawn(|| probe_snapshot(p, &config, tol)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("probe thread panicked"))
                .collect()
        });
        for r in batch {
            results.push(r?);
        }
    }
    write_file(&out.join("spectral.csv"), |w| {
        writeln!(w, "t,lambda,iterations,residual")?;
        for (path, r) in snapshots.iter().zip(&results) {
            if let Some(t) = snapshot_time(path) {
                write!(w, "{t:.16e}")?;
            }
            writeln!(w, ",{:.16e},{},{:.16e}", r.lambda, r.iterations, r.residual)?;
        }
        Ok(())
    })?;
    for (path, r) in snapshots.iter().zip(&results) {
        println!("{}: lambda {:.10e} after {} iterations", path.display(), r.lambda, r.iterations);
    }
    Ok(())
}

fn cmd_potential(common: &Common) -> CliResult<()> {
    let (config, out) = load(common)?;
    let spec = config.potential()?;
    write_file(&out.join("potential_coefficients.csv"), |w| {
        writeln!(w, "interval,center,degree,coefficient")?;
        for (label, poly) in [("minus", spec.phi_minus()), ("plus", spec.phi_plus())] {
            for (d, c) in poly.coeffs.iter().enumerate() {
                writeln!(w, "{label},{:.16e},{d},{c:.16e}", poly.center)?;
            }
        }
        Ok(())
    })?;
    let span = 3.0 * spec.m();
    let n = 1201;
    write_file(&out.join("potential_samples.csv"), |w| {
        writeln!(w, "v,F,f,fp,fpp")?;
        for i in 0..n {
            let v = -span + 2.0 * span * i as f64 / (n - 1) as f64;
            writeln!(
                w,
                "{v:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                spec.F(v),
                spec.f(v),
                spec.fp(v),
                spec.fpp(v)
            )?;
        }
        Ok(())
    })?;
    println!("derivative bound L = {:.6e}", spec.l_bound());
    Ok(())
}
