//! Command line for the solver: experiment runs, topology sweeps,
//! invariant verification, and data file inspection.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime or solver
//! error, 3 verification failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use netnewton::analysis::{
    aggregate_gaps, consensus_reference, solve_reference, steps_to_epsilon, weighted_error,
    Reference,
};
use netnewton::config::{AlgorithmChoice, ExperimentConfig, OutputFormat, SweepSection};
use netnewton::engine::{run_async_newton, run_gossip, run_sync_newton, Trace};
use netnewton::objectives::{Dataset, ProblemSpec};
use netnewton::topology::{build_graph, ConsensusMatrix, GraphKind};
use netnewton::verify as checks;
use netnewton::Error;

mod output;

/// Default output directory when neither `--out` nor the config sets one.
const OUT_ENV: &str = "NETNEWTON_OUT";

#[derive(Parser)]
#[command(
    name = "netnewton",
    version,
    about = "Asynchronous network Newton: runs, sweeps, and invariant checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithms and write trace, aggregate, constants,
    /// and plot artifacts.
    Run {
        config: PathBuf,
        /// Replace the schedule's base seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
        /// Output directory (overrides NETNEWTON_OUT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the topology/size grid from the [sweep] section and write one
    /// summary row per cell.
    Sweep {
        config: PathBuf,
        /// Replace the schedule's base seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
        /// Output directory (overrides NETNEWTON_OUT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the numerical invariants for the configured instance.
    Verify {
        config: PathBuf,
        /// Replace the schedule's base seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Print only the summary line.
        #[arg(long)]
        quiet: bool,
        /// Corrupt one mixing weight before checking (exercises the
        /// failure path; the run must then exit nonzero).
        #[arg(long, hide = true)]
        tamper_w: bool,
    },
    /// Parse a data file and print a summary.
    ParseData { file: PathBuf },
}

/// A failed command, tagged with the exit code its phase maps to.
struct Failure {
    code: i32,
    error: Error,
}

trait PhaseExt<T> {
    /// Errors while reading configuration or referenced inputs: exit 1.
    fn config_phase(self) -> Result<T, Failure>;
    /// Errors while solving or writing artifacts: exit 2.
    fn runtime_phase(self) -> Result<T, Failure>;
}

impl<T> PhaseExt<T> for netnewton::Result<T> {
    fn config_phase(self) -> Result<T, Failure> {
        self.map_err(|error| Failure { code: 1, error })
    }

    fn runtime_phase(self) -> Result<T, Failure> {
        self.map_err(|error| Failure { code: 2, error })
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::Run {
            config,
            seed_override,
            quiet,
            out,
        } => cmd_run(&config, seed_override, quiet, out),
        Command::Sweep {
            config,
            seed_override,
            quiet,
            out,
        } => cmd_sweep(&config, seed_override, quiet, out),
        Command::Verify {
            config,
            seed_override,
            quiet,
            tamper_w,
        } => cmd_verify(&config, seed_override, quiet, tamper_w),
        Command::ParseData { file } => cmd_parse_data(&file),
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut config = ExperimentConfig::from_path(path).config_phase()?;
    if let Some(seed) = seed_override {
        config.schedule.seed = seed;
    }
    Ok(config)
}

fn resolve_out(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| config.outputs.directory.clone())
}

fn create_out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))
        .runtime_phase()
}

fn cmd_run(
    path: &Path,
    seed_override: Option<u64>,
    quiet: bool,
    out: Option<PathBuf>,
) -> Result<i32, Failure> {
    let config = load_config(path, seed_override)?;
    let out_dir = resolve_out(out, &config);

    let graph = config.build_graph().config_phase()?;
    let spec = config.build_problem(&graph, 0).config_phase()?;
    let base_schedule = config.build_schedule(spec.n(), 0).config_phase()?;
    let (eps, constants) = config.effective_eps(&spec, &base_schedule).config_phase()?;

    let needs_penalized = config
        .run
        .algorithms
        .iter()
        .any(|a| !matches!(a, AlgorithmChoice::Gossip));
    let penalized_ref = if needs_penalized {
        Some(solve_reference(&spec).runtime_phase()?)
    } else {
        None
    };
    let consensus_ref = if config
        .run
        .algorithms
        .iter()
        .any(|a| matches!(a, AlgorithmChoice::Gossip))
    {
        Some(consensus_reference(&spec).runtime_phase()?)
    } else {
        None
    };

    create_out_dir(&out_dir)?;
    let csv = config.outputs.formats.contains(&OutputFormat::Csv);
    let plot = config.outputs.formats.contains(&OutputFormat::Plot);
    let seeds = config.run.seeds;
    let mut plot_series: Vec<(String, Vec<f64>)> = Vec::new();

    for algo in &config.run.algorithms {
        let label = algo.label();
        let traces: Vec<Trace> = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let schedule = config.build_schedule(spec.n(), s as u64)?;
                let cfg = config.run_config(spec.clone(), schedule, eps)?;
                match algo {
                    AlgorithmChoice::Async => run_async_newton(&cfg),
                    AlgorithmChoice::Sync => run_sync_newton(&cfg, config.run.sync_k),
                    AlgorithmChoice::Gossip => run_gossip(&cfg),
                }
            })
            .collect::<netnewton::Result<Vec<_>>>()
            .runtime_phase()?;

        let reference = match algo {
            AlgorithmChoice::Gossip => consensus_ref.as_ref().expect("built above"),
            _ => penalized_ref.as_ref().expect("built above"),
        };

        if csv {
            for (s, trace) in traces.iter().enumerate() {
                let weighted = match algo {
                    AlgorithmChoice::Async => weighted_map(&spec, trace, reference)?,
                    _ => BTreeMap::new(),
                };
                output::write_trace_csv(
                    &out_dir.join(format!("trace_{label}_seed{s}.csv")),
                    trace,
                    reference,
                    &weighted,
                )
                .runtime_phase()?;
            }
        }
        let rows = aggregate_gaps(&traces, reference.f_star);
        if csv {
            output::write_aggregate_csv(&out_dir.join(format!("aggregate_{label}.csv")), &rows)
                .runtime_phase()?;
        }

        let gap0 = rows.first().map(|r| r.mean_gap).unwrap_or(0.0);
        let rel: Vec<f64> = rows
            .iter()
            .map(|r| if gap0 > 0.0 { r.mean_gap / gap0 } else { 0.0 })
            .collect();
        plot_series.push((label.to_string(), rel));

        if !quiet {
            let final_gap = rows.last().map(|r| r.mean_gap).unwrap_or(0.0);
            println!("{label}: {seeds} seed(s), final mean gap = {final_gap:.3e}");
        }
    }

    output::write_constants_report(
        &out_dir.join("constants.txt"),
        &constants,
        eps,
        config.schedule.mode,
        penalized_ref.as_ref(),
    )
    .runtime_phase()?;

    if plot {
        output::write_plot_data(&out_dir.join("plot_rel_err.dat"), &plot_series)
            .runtime_phase()?;
        output::write_gnuplot_script(
            &out_dir.join("plot.gp"),
            "plot_rel_err.dat",
            &plot_series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        )
        .runtime_phase()?;
    }

    if !quiet {
        println!("artifacts written to {}", out_dir.display());
    }
    Ok(0)
}

/// Weighted errors at each snapshot activation, keyed by `t`.
fn weighted_map(
    spec: &ProblemSpec,
    trace: &Trace,
    reference: &Reference,
) -> Result<BTreeMap<usize, f64>, Failure> {
    let mut map = BTreeMap::new();
    for snap in &trace.snapshots {
        let prev = snap.previous_x();
        let w = weighted_error(spec, &snap.x, &prev, &reference.x_star).runtime_phase()?;
        map.insert(snap.t, w);
    }
    Ok(map)
}

fn cmd_sweep(
    path: &Path,
    seed_override: Option<u64>,
    quiet: bool,
    out: Option<PathBuf>,
) -> Result<i32, Failure> {
    let config = load_config(path, seed_override)?;
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Failure {
            code: 1,
            error: Error::Config {
                section: "sweep".into(),
                key: String::new(),
                message: "the sweep command needs a [sweep] section".into(),
            },
        })?;
    let out_dir = resolve_out(out, &config);
    create_out_dir(&out_dir)?;

    let mut rows = Vec::new();
    for kind in &sweep.topologies {
        for &n in &sweep.sizes {
            let row = match sweep_cell(&config, &sweep, *kind, n) {
                Ok(row) => row,
                Err(error) => output::SweepRow::failed(kind.to_string(), n, error.to_string()),
            };
            if !quiet {
                println!("{} n={}: {}", row.topology, row.n, row.status);
            }
            rows.push(row);
        }
    }
    output::write_sweep_csv(&out_dir.join("sweep.csv"), &rows).runtime_phase()?;
    if !quiet {
        println!("sweep table written to {}", out_dir.join("sweep.csv").display());
    }
    Ok(0)
}

/// One sweep cell: per-seed instances, auto stepsizes, and activation
/// counts to the relative-error target.
fn sweep_cell(
    config: &ExperimentConfig,
    sweep: &SweepSection,
    kind: GraphKind,
    n: usize,
) -> netnewton::Result<output::SweepRow> {
    let graph = build_graph(kind, n, config.topology.seed)?;
    let results: Vec<(Option<usize>, f64, f64, f64)> = (0..sweep.seeds)
        .into_par_iter()
        .map(|s| {
            let spec = config.build_problem(&graph, s as u64)?;
            let schedule = config.build_schedule(n, s as u64)?;
            let (eps, constants) = config.effective_eps(&spec, &schedule)?;
            let reference = solve_reference(&spec)?;
            let x0 = nalgebra::DVector::zeros(spec.stacked_len());
            let f0 = spec.penalized_value(&x0)?;
            let mut cfg = config.run_config(spec, schedule, eps)?;
            cfg.t_max = sweep.t_cap;
            cfg.record_every = sweep.t_cap.max(1);
            cfg.f_target = Some(reference.f_star + sweep.eps_rel * (f0 - reference.f_star));
            let trace = run_async_newton(&cfg)?;
            let steps = steps_to_epsilon(&trace, &reference, sweep.eps_rel);
            Ok((steps, eps, constants.rho, constants.beta))
        })
        .collect::<netnewton::Result<Vec<_>>>()?;

    let reached: Vec<usize> = results.iter().filter_map(|(s, ..)| *s).collect();
    let censored = results.len() - reached.len();
    let (eps, rho, beta) = results
        .first()
        .map(|&(_, e, r, b)| (e, r, b))
        .unwrap_or((0.0, 0.0, 0.0));
    let status = if censored == 0 {
        "ok".to_string()
    } else {
        format!("censored {censored}/{} at t_cap {}", results.len(), sweep.t_cap)
    };
    Ok(output::SweepRow {
        topology: kind.to_string(),
        n,
        seeds: results.len(),
        reached: reached.len(),
        mean_steps: if reached.is_empty() {
            None
        } else {
            Some(reached.iter().sum::<usize>() as f64 / reached.len() as f64)
        },
        min_steps: reached.iter().min().copied(),
        max_steps: reached.iter().max().copied(),
        eps: Some(eps),
        rho: Some(rho),
        beta: Some(beta),
        status,
    })
}

fn cmd_verify(
    path: &Path,
    seed_override: Option<u64>,
    quiet: bool,
    tamper_w: bool,
) -> Result<i32, Failure> {
    let config = load_config(path, seed_override)?;
    let graph = config.build_graph().config_phase()?;
    let mut spec = config.build_problem(&graph, 0).config_phase()?;
    if tamper_w {
        let mut m = spec.w().matrix().clone();
        m[(0, 1)] += 0.05;
        let cm = ConsensusMatrix::from_matrix(m, spec.w().neighbor_lists().to_vec())
            .runtime_phase()?;
        spec = ProblemSpec::new(spec.locals().to_vec(), spec.alpha(), cm).runtime_phase()?;
    }
    let schedule = config.build_schedule(spec.n(), 0).config_phase()?;
    let (eps, _) = config.effective_eps(&spec, &schedule).config_phase()?;
    let reference = solve_reference(&spec).runtime_phase()?;

    let states = checks::random_states(spec.stacked_len(), 25, 5.0, 9);
    let mut report = checks::check_consensus(spec.w());
    report.merge(checks::check_algebra(&spec, &states).runtime_phase()?);
    report.merge(checks::check_finite_differences(spec.locals(), 5, 11).runtime_phase()?);
    report.merge(checks::check_descent(&spec, &schedule, eps, &reference, &states).runtime_phase()?);
    report.merge(checks::check_recursion(&spec, &schedule, eps, &reference, &states).runtime_phase()?);
    report.merge(
        checks::check_envelope(
            &spec,
            &schedule,
            eps,
            &reference,
            config.run.seeds,
            config.run.t,
        )
        .runtime_phase()?,
    );

    if !quiet {
        print!("{report}");
    }
    let total = report.checks.len();
    let passed = report.checks.iter().filter(|c| c.passed).count();
    println!("verification: {passed}/{total} checks passed");
    Ok(if report.all_passed() { 0 } else { 3 })
}

fn cmd_parse_data(path: &Path) -> Result<i32, Failure> {
    let ds = Dataset::from_path(path).config_phase()?;
    let positive = ds.samples().iter().filter(|s| s.label > 0.0).count();
    let negative = ds.len() - positive;
    println!("file: {}", path.display());
    println!("samples: {}", ds.len());
    println!("dim: {}", ds.dim());
    println!("labels: {positive} positive, {negative} negative");
    Ok(0)
}
