use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use elastodyn::driver::{
    first_newton_system, linear_bench, run_benchmark, run_sweep, write_linear_bench_csv, write_sweep_csv, BenchmarkConfig,
    BenchmarkId, SweepConfig,
};
use elastodyn::precond::LinearSolverKind;
use log::info;

#[derive(Parser)]
#[command(name = "elastodyn", version, about = "Stabilised hyper-elastodynamics benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; keys not given keep the benchmark preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set material.nu=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for CSV and VTK output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a VTK snapshot every N steps.
    #[arg(long, value_name = "N")]
    vtk_every: Option<usize>,
    /// Linear solver: nested, simple, scr, ilu0-gmres or direct.
    #[arg(long)]
    solver: Option<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Exit with a failure status if any linear solve fails to converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compression of a unit block by a pressure on one quarter of its top.
    BlockCompression(Common),
    /// Tensile test of a fibre-reinforced specimen.
    TensileTest(Common),
    /// Cartesian parameter sweep described by a `[base]` / `[sweep]` file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// CSV output file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Solves the first Newton system of a benchmark with several solvers.
    LinearBench {
        #[arg(long, default_value = "block-compression")]
        benchmark: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Comma-separated solver list.
        #[arg(long, default_value = "nested,simple,ilu0-gmres")]
        solvers: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

fn resolve(id: BenchmarkId, config: &Option<PathBuf>, overrides: &[String]) -> Result<BenchmarkConfig> {
    let cfg = match config {
        Some(p) => {
            let cfg = BenchmarkConfig::load(p).with_context(|| format!("reading {}", p.display()))?;
            if cfg.benchmark != id {
                bail!("{} configures `{}`, not `{}`", p.display(), cfg.benchmark.name(), id.name());
            }
            cfg
        }
        None => BenchmarkConfig::preset(id),
    };
    Ok(cfg.with_overrides(overrides)?)
}

fn parse_benchmark(s: &str) -> Result<BenchmarkId> {
    match s {
        "block-compression" => Ok(BenchmarkId::BlockCompression),
        "tensile-test" => Ok(BenchmarkId::TensileTest),
        _ => bail!("unknown benchmark `{s}`"),
    }
}

fn run_single(id: BenchmarkId, c: Common) -> Result<bool> {
    let mut cfg = resolve(id, &c.config, &c.overrides)?;
    if let Some(s) = &c.solver {
        cfg.solver = LinearSolverKind::parse(s)?;
    }
    if let Some(d) = c.out {
        cfg.output.dir = Some(d);
    }
    if let Some(n) = c.vtk_every {
        cfg.output.vtk_every = n;
    }
    if c.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(true);
    }
    let report = run_benchmark(&cfg)?;
    let s = report.summary();
    println!("step,time,load,displacement,fiber_alignment,newton_iterations");
    for h in &report.history {
        println!(
            "{},{:.4e},{:.4e},{:.6e},{:.6e},{}",
            h.step, h.time, h.load, h.displacement, h.fiber_alignment, h.newton_iterations
        );
    }
    println!(
        "# newton={} mean_outer={:.2} mean_a={:.2} mean_s={:.2} mean_inner={:.2} mean_linear_s={:.3e} wall_s={:.2}",
        s.newton_iterations, s.mean_outer, s.mean_a, s.mean_s, s.mean_inner, s.mean_linear_seconds, report.wall_seconds
    );
    if !s.all_linear_converged {
        eprintln!("warning: some linear solves did not converge");
    }
    Ok(!c.strict || s.all_linear_converged)
}

fn emit(out: &Option<PathBuf>, buf: Vec<u8>) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, buf).with_context(|| format!("writing {}", p.display()))?;
            info!("wrote {}", p.display());
        }
        None => print!("{}", String::from_utf8(buf)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::BlockCompression(c) => run_single(BenchmarkId::BlockCompression, c),
        Command::TensileTest(c) => run_single(BenchmarkId::TensileTest, c),
        Command::Sweep { config, overrides, out, strict } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let (base, axes) = SweepConfig::from_toml_str(&text)?;
            let base = base.with_overrides(&overrides)?;
            let rows = run_sweep(&base, &axes);
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &rows)?;
            emit(&out, buf)?;
            let nc = rows.iter().filter(|r| r.is_nc()).count();
            if nc > 0 {
                eprintln!("{nc} of {} cells did not converge", rows.len());
            }
            Ok(!strict || nc == 0)
        }
        Command::LinearBench { benchmark, config, overrides, solvers, out, strict } => {
            let cfg = resolve(parse_benchmark(&benchmark)?, &config, &overrides)?;
            let kinds = solvers.split(',').map(|s| LinearSolverKind::parse(s.trim())).collect::<Result<Vec<_>, _>>()?;
            let (problem, sys) = first_newton_system(&cfg)?;
            info!("{} velocity and {} pressure unknowns", sys.nv(), sys.np());
            drop(problem);
            let rows = linear_bench(&sys, &kinds, &cfg.linear);
            let mut buf = Vec::new();
            write_linear_bench_csv(&mut buf, &rows)?;
            emit(&out, buf)?;
            Ok(!strict || rows.iter().all(|r| r.converged))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
