use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vra::metrics::{
    boundary_windows, near_boundary_metrics, position_excess, realizable_fraction, velocity_excess,
};
use vra::scenario::load_scenario;
use vra::suite::{
    evaluate, fraction_plot_script, run_scenarios, run_suite, sweep_variants, trace_plot_script,
    Overrides, SuiteReport,
};
use vra::{ControllerKind, Error, Result, Trace};

/// Voltage-realizable acceleration experiments for a single PMSM joint.
#[derive(Debug, Parser)]
#[command(name = "vra", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario file (all of its trials).
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run every `*.toml` scenario in a directory.
    Suite {
        dir: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Compute metrics of a saved trace.
    Metrics {
        trace: PathBuf,
        /// Scenario supplying motor, joint and command parameters; the
        /// default preset is used otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Run a scenario once per value of one parameter.
    Sweep {
        scenario: PathBuf,
        /// Dotted field path as in the scenario file, e.g. `timing.dt_p`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Debug, Args)]
struct RunOpts {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed (trial k uses seed + k).
    #[arg(long)]
    seed: Option<u64>,
    /// Controller id: vra, vbac-ab, vbac-cb, vbac-mor or raw.
    #[arg(long)]
    controller: Option<ControllerKind>,
    /// Prediction period (s).
    #[arg(long = "dt-p")]
    dt_p: Option<f64>,
    /// Also write gnuplot scripts next to the CSV files.
    #[arg(long)]
    gnuplot: bool,
}

impl RunOpts {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            controller: self.controller,
            dt_p: self.dt_p,
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn write_plots(
    report: &SuiteReport,
    scenarios: &[(String, vra::Scenario)],
    out: &Path,
) -> Result<()> {
    for (id, sc) in scenarios {
        let (m, j) = (sc.motor_params(), sc.joint_params());
        for t in report.trials.iter().filter(|t| &t.id == id) {
            let name = format!("{id}_t{}", t.trial);
            let script = trace_plot_script(&format!("traces/{name}.csv"), &m, &j);
            std::fs::write(out.join(format!("{name}.gp")), script)?;
        }
    }
    std::fs::write(
        out.join("fractions.gp"),
        fraction_plot_script("summary.csv"),
    )?;
    Ok(())
}

fn finish(report: &SuiteReport, out: &Path) -> Result<ExitCode> {
    report.write_tables(out)?;
    print!("{}", report.comparison_table());
    for f in &report.failures {
        eprintln!("failed: {}: {}", f.id, f.error);
    }
    println!("wrote {}", out.display());
    Ok(if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run_batch(scenarios: Vec<(String, vra::Scenario)>, opts: &RunOpts) -> Result<ExitCode> {
    let report = run_scenarios(&scenarios, Some(&opts.out))?;
    if opts.gnuplot {
        write_plots(&report, &scenarios, &opts.out)?;
    }
    finish(&report, &opts.out)
}

fn metrics(trace_path: &Path, scenario: Option<&Path>) -> Result<ExitCode> {
    let trace = Trace::load(trace_path)?;
    let sc = match scenario {
        Some(p) => load_scenario(p)?,
        None => vra::Scenario::new("default"),
    };
    let (m, j) = (sc.motor_params(), sc.joint_params());
    let ev = evaluate(&trace, &m, &j, &sc.command)?;
    println!("rows               {}", trace.len());
    println!(
        "realizable_total   {:.6}",
        realizable_fraction(&trace.rows)?
    );
    println!("realizable_command {:.6}", ev.command_fraction);
    println!(
        "position_excess    {:.6e}",
        position_excess(&trace.rows, &j)
    );
    println!(
        "velocity_excess    {:.6e}",
        velocity_excess(&trace.rows, &j)
    );
    match (ev.boundary, boundary_windows(&trace, &j)) {
        (Some(r), Some(w)) => {
            println!(
                "window             {}..{} (braking from {})",
                w.approach_start, w.braking.end, w.braking.start
            );
            println!("window_realizable  {:.6}", r.realizable_fraction);
            println!("dqd_max            {:.6e}", r.dqd_max);
            println!("dqd_rms            {:.6e}", r.dqd_rms);
            println!("dtau_rms           {:.6e}", r.dtau_rms);
            println!("f_zc               {:.3}", r.f_zc);
            println!("success            {}", r.success);
        }
        _ => {
            let dt = trace.dt().ok_or(Error::EmptyTrace)?;
            let r = near_boundary_metrics(&trace, 0..trace.len(), &m, &j, dt)?;
            println!("window             none (no bound approached); whole trace below");
            println!("dqd_rms            {:.6e}", r.dqd_rms);
            println!("dtau_rms           {:.6e}", r.dtau_rms);
            println!("f_zc               {:.3}", r.f_zc);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, opts } => {
            let mut sc = load_scenario(&scenario)?;
            opts.overrides().apply(&mut sc)?;
            run_batch(vec![(stem(&scenario), sc)], &opts)
        }
        Command::Suite { dir, opts } => {
            let report = run_suite(&dir, &opts.overrides(), Some(&opts.out))?;
            if opts.gnuplot {
                let scenarios: Vec<_> = vra::suite::discover(&dir)?
                    .into_iter()
                    .filter_map(|p| load_scenario(&p).ok().map(|sc| (stem(&p), sc)))
                    .collect();
                write_plots(&report, &scenarios, &opts.out)?;
            }
            finish(&report, &opts.out)
        }
        Command::Metrics { trace, scenario } => metrics(&trace, scenario.as_deref()),
        Command::Sweep {
            scenario,
            param,
            values,
            opts,
        } => {
            let mut base = load_scenario(&scenario)?;
            opts.overrides().apply(&mut base)?;
            let variants = sweep_variants(&stem(&scenario), &base, &param, &values)?;
            run_batch(variants, &opts)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
