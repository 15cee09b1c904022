use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bcdlab::checks::{gradient_bound, monotone_violations};
use bcdlab::config::{Blocking, CompositeSpec, FStarMode, ProblemSpec, SolverConfig, LONG_RUN_MULTIPLIER};
use bcdlab::datasets::{DatasetId, Scale};
use bcdlab::sweep::Grid;
use bcdlab::trace::{emit_sidecar, to_csv};
use bcdlab::{emit_trace, run, BenchError, RunOutput};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bcdlab", version, about = "Block coordinate descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its trace.
    Run(RunArgs),
    /// Run every compatible combination of a JSON grid.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Run the invariant suites on the small problems.
    Verify {
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    problem: DatasetId,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// fixed:sort|fixed:avg|fixed:order|vb|greedy-forest|random-forest|red-black|tree-partition
    #[arg(long)]
    blocking: String,
    /// cyclic|random|lipschitz|gs|gsl|gsd:{li,litau,sirt}|gsq:exact|gsq:iht[:N]|gsq-prox
    #[arg(long)]
    select: String,
    /// grad-lb|grad-la|grad-diag:{li,litau,sirt}|matrix|matrix-la|newton|tree|prox-grad|prox-grad-global|tmp|prox-newton
    #[arg(long)]
    update: String,
    #[arg(long, default_value_t = 5)]
    block_size: usize,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// none|nonneg|l1:W|nnl1:W|nnl1:auto[:S]
    #[arg(long, default_value = "none")]
    composite: CompositeSpec,
    /// auto|direct|long-run[:M]
    #[arg(long, default_value = "auto")]
    f_star: String,
    /// fill the ms column with wall time
    #[arg(long)]
    wall_time: bool,
    #[arg(long)]
    out: PathBuf,
}

const EXIT_USAGE: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

fn f_star_mode(s: &str) -> Result<FStarMode, BenchError> {
    match s {
        "auto" => Ok(FStarMode::Auto),
        "direct" => Ok(FStarMode::DirectSolve),
        "long-run" => Ok(FStarMode::LongRun {
            multiplier: LONG_RUN_MULTIPLIER,
        }),
        _ => s
            .strip_prefix("long-run:")
            .and_then(|m| m.parse().ok())
            .filter(|m| *m > 0)
            .map(|multiplier| FStarMode::LongRun { multiplier })
            .ok_or_else(|| BenchError::Usage(format!("unknown f* mode `{s}`"))),
    }
}

fn config_of(a: &RunArgs) -> Result<SolverConfig, BenchError> {
    let usage = |e: bcd_core::BcdError| BenchError::Usage(e.to_string());
    Ok(SolverConfig {
        problem: ProblemSpec {
            dataset: a.problem,
            scale: a.scale,
            seed: a.seed,
            composite: a.composite,
        },
        blocking: Blocking::parse(&a.blocking, a.block_size)?,
        selection: a.select.parse().map_err(usage)?,
        update: a.update.parse().map_err(usage)?,
        iters: a.iters,
        seed: a.seed,
        f_star_mode: f_star_mode(&a.f_star)?,
        wall_time: a.wall_time,
    })
}

fn write_run(config: &SolverConfig, out: &RunOutput, path: &Path) -> Result<(), BenchError> {
    emit_trace(&out.trace, path)?;
    emit_sidecar(config, &out.report, path)
}

fn summary(name: &str, out: &RunOutput) {
    let last = out.trace.rows.last().expect("a trace has its starting row");
    let ident = out
        .report
        .identification_iteration
        .map_or(String::new(), |k| format!(" identified={k}"));
    println!("{name}: iters={} obj={:.12e} gap={:.6e}{ident}", last.iter, last.obj, last.gap);
    if let Some(v) = &out.report.violation {
        eprintln!("{name}: invariant violation at iteration {}: {:?}", v.iter, v);
    }
}

fn cmd_run(a: RunArgs) -> Result<u8, BenchError> {
    let config = config_of(&a)?;
    let out = run(&config)?;
    write_run(&config, &out, &a.out)?;
    summary(&a.out.display().to_string(), &out);
    Ok(if out.report.violation.is_some() { EXIT_INVARIANT } else { 0 })
}

fn cmd_sweep(grid: &Path) -> Result<u8, BenchError> {
    let text = fs::read_to_string(grid).map_err(|e| BenchError::io(grid, e))?;
    let g = Grid::from_json(&text)?;
    let (runs, skipped) = g.expand()?;
    for s in &skipped {
        eprintln!("skipped {s}");
    }
    fs::create_dir_all(&g.out_dir).map_err(|e| BenchError::io(&g.out_dir, e))?;
    let mut code = 0;
    for r in runs {
        let out = run(&r.config)?;
        write_run(&r.config, &out, &g.out_dir.join(format!("{}.csv", r.name)))?;
        summary(&r.name, &out);
        if out.report.violation.is_some() {
            code = EXIT_INVARIANT;
        }
    }
    Ok(code)
}

fn verify_configs(iters: usize, seed: u64) -> Vec<SolverConfig> {
    let fixed = |tau| Blocking::Fixed {
        strategy: bcd_core::PartitionStrategy::Sort,
        tau,
    };
    let mut out = Vec::new();
    for id in DatasetId::ALL {
        for (blocking, sel, upd) in [
            (fixed(10), "gs", "grad-lb"),
            (fixed(10), "gsl", "grad-lb"),
            (fixed(10), "gsq:exact", "matrix"),
            (Blocking::Variable { tau: 10 }, "gsd:sirt", "matrix"),
        ] {
            out.push(SolverConfig {
                problem: ProblemSpec {
                    dataset: id,
                    scale: Scale::Desk,
                    seed,
                    composite: CompositeSpec::None,
                },
                blocking,
                selection: sel.parse().expect("valid rule"),
                update: upd.parse().expect("valid rule"),
                iters,
                seed,
                f_star_mode: FStarMode::Auto,
                wall_time: false,
            });
        }
    }
    out
}

fn cmd_verify(iters: usize, seed: u64) -> Result<u8, BenchError> {
    let mut failures = 0;
    for config in verify_configs(iters, seed) {
        let name = bcdlab::sweep::run_name(&config);
        let a = run(&config)?;
        let b = run(&config)?;
        let mut problems = Vec::new();
        if let Some(v) = &a.report.violation {
            problems.push(format!("{:?} at iteration {}", v.kind, v.iter));
        }
        let mono = monotone_violations(&a.trace, 1e-10);
        if !mono.is_empty() {
            problems.push(format!("objective increased at {mono:?}"));
        }
        if let Err(e) = gradient_bound(&a.trace, a.report.f_star, 1e-10) {
            problems.push(format!("gradient bound fails at k = {}: {} > {}", e.k, e.lhs, e.rhs));
        }
        if to_csv(&a.trace)? != to_csv(&b.trace)? {
            problems.push("traces differ between identical runs".into());
        }
        if problems.is_empty() {
            println!("PASS {name}");
        } else {
            failures += 1;
            println!("FAIL {name}: {}", problems.join("; "));
        }
    }
    Ok(if failures == 0 { 0 } else { EXIT_INVARIANT })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep { grid } => cmd_sweep(&grid),
        Command::Verify { iters, seed } => cmd_verify(iters, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
