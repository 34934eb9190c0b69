//! Batch runs: scenario directories, parameter sweeps and the files they
//! leave behind.
//!
//! Episodes run in parallel; every file is written afterwards from the
//! collected results on the calling thread, so output is identical for any
//! thread count.
//!
//! Layout under the output directory:
//!
//! ```text
//! traces/<id>_t<trial>.csv   one trace per trial
//! trials.csv                 metrics per trial
//! summary.csv                metrics per scenario, averaged over trials
//! comparison.csv             metrics per (controller, dt_p), averaged over scenarios
//! failures.csv               scenarios that could not be loaded or run
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::actuator::{JointParams, MotorParams};
use crate::episode::{run_episode, trial_seed};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, boundary_metrics, command_window, position_excess, realizable_fraction,
    velocity_excess, MetricsReport,
};
use crate::pipeline::ControllerKind;
use crate::scenario::{load_scenario, CommandProfile, Scenario};
use crate::trace::Trace;

/// Command-line overrides applied to every scenario of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub controller: Option<ControllerKind>,
    pub dt_p: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, sc: &mut Scenario) -> Result<()> {
        if let Some(seed) = self.seed {
            sc.seed = seed;
        }
        if let Some(c) = self.controller {
            sc.controller = c;
        }
        if let Some(dt_p) = self.dt_p {
            sc.timing.dt_p = dt_p;
        }
        sc.validate()
    }
}

/// Metrics of one trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Realizable fraction over the command window (the whole trace if the
    /// command is never active).
    pub command_fraction: f64,
    pub position_excess: f64,
    pub velocity_excess: f64,
    /// Near-boundary metrics; `None` when the joint never nears a bound.
    pub boundary: Option<MetricsReport>,
}

pub fn evaluate(
    trace: &Trace,
    m: &MotorParams,
    j: &JointParams,
    command: &CommandProfile,
) -> Result<Evaluation> {
    let window = command_window(trace, command, 0);
    let rows = if window.is_empty() {
        &trace.rows[..]
    } else {
        &trace.rows[window]
    };
    let boundary = match boundary_metrics(trace, m, j) {
        Ok((_, report)) => Some(report),
        Err(Error::NoBoundaryApproach | Error::WindowTooShort { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        command_fraction: realizable_fraction(rows)?,
        position_excess: position_excess(&trace.rows, j),
        velocity_excess: velocity_excess(&trace.rows, j),
        boundary,
    })
}

/// One row of `trials.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub id: String,
    pub name: String,
    pub controller: ControllerKind,
    pub dt_p: f64,
    pub trial: u32,
    pub seed: u64,
    pub command_fraction: f64,
    pub position_excess: f64,
    pub velocity_excess: f64,
    pub window_fraction: Option<f64>,
    pub dqd_max: Option<f64>,
    pub dqd_rms: Option<f64>,
    pub dtau_rms: Option<f64>,
    pub f_zc: Option<f64>,
    pub success: Option<bool>,
}

impl TrialRecord {
    fn boundary(&self) -> Option<MetricsReport> {
        Some(MetricsReport {
            realizable_fraction: self.window_fraction?,
            dqd_max: self.dqd_max?,
            dqd_rms: self.dqd_rms?,
            dtau_rms: self.dtau_rms?,
            f_zc: self.f_zc?,
            success: self.success?,
        })
    }
}

/// One row of `summary.csv`: a scenario averaged over its trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub id: String,
    pub name: String,
    pub controller: ControllerKind,
    pub dt_p: f64,
    pub trials: u32,
    /// Every trial produced the same trace.
    pub identical_trials: bool,
    pub command_fraction: f64,
    pub position_excess: f64,
    pub velocity_excess: f64,
    pub window_fraction: Option<f64>,
    pub dqd_max: Option<f64>,
    pub dqd_rms: Option<f64>,
    pub dtau_rms: Option<f64>,
    pub f_zc: Option<f64>,
    pub success: Option<bool>,
}

/// One row of `comparison.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub controller: ControllerKind,
    pub dt_p: f64,
    /// Scenarios contributing near-boundary metrics.
    pub scenarios: usize,
    pub command_fraction: f64,
    pub dqd_max: f64,
    pub dqd_rms: f64,
    pub dtau_rms: f64,
    pub f_zc: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub trials: Vec<TrialRecord>,
    pub summaries: Vec<ScenarioSummary>,
    pub comparison: Vec<ComparisonRow>,
    pub failures: Vec<Failure>,
}

impl SuiteReport {
    pub fn is_empty(&self) -> bool {
        self.trials.is_empty() && self.failures.is_empty()
    }

    pub fn summary(&self, id: &str) -> Option<&ScenarioSummary> {
        self.summaries.iter().find(|s| s.id == id)
    }

    pub fn comparison_row(&self, controller: ControllerKind, dt_p: f64) -> Option<&ComparisonRow> {
        self.comparison
            .iter()
            .find(|r| r.controller == controller && (r.dt_p - dt_p).abs() < 1e-12)
    }

    /// Fixed-width rendering of the comparison table.
    pub fn comparison_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<9} {:>6} {:>4} {:>8} {:>10} {:>10} {:>10} {:>8} {:>7}",
            "ctrl", "dt_p", "n", "fraction", "dqd_max", "dqd_rms", "dtau_rms", "f_zc", "success"
        );
        for r in &self.comparison {
            let _ = writeln!(
                s,
                "{:<9} {:>6} {:>4} {:>8.3} {:>10.4} {:>10.4} {:>10.4} {:>8.1} {:>7}",
                r.controller.id(),
                r.dt_p,
                r.scenarios,
                r.command_fraction,
                r.dqd_max,
                r.dqd_rms,
                r.dtau_rms,
                r.f_zc,
                match (r.scenarios, r.success) {
                    (0, _) => "-",
                    (_, true) => "yes",
                    (_, false) => "no",
                }
            );
        }
        s
    }

    /// Write the report tables (not the traces) into `dir`.
    pub fn write_tables(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join("trials.csv"), &self.trials)?;
        write_rows(&dir.join("summary.csv"), &self.summaries)?;
        write_rows(&dir.join("comparison.csv"), &self.comparison)?;
        write_rows(&dir.join("failures.csv"), &self.failures)?;
        Ok(())
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Scenario files (`*.toml`) directly inside `dir`, sorted by name.
pub fn discover(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Load every scenario in `dir` and run it.
///
/// Files that fail to load are reported as failures; the rest still run.
/// An empty directory yields [`Error::NothingToRun`].
pub fn run_suite(dir: &Path, overrides: &Overrides, out: Option<&Path>) -> Result<SuiteReport> {
    let files = discover(dir)?;
    if files.is_empty() {
        return Err(Error::NothingToRun(dir.to_path_buf()));
    }
    let mut scenarios = Vec::new();
    let mut failures = Vec::new();
    for path in &files {
        let loaded = load_scenario(path).and_then(|mut sc| overrides.apply(&mut sc).map(|()| sc));
        match loaded {
            Ok(sc) => scenarios.push((stem(path), sc)),
            Err(e) => failures.push(Failure {
                id: stem(path),
                error: e.to_string(),
            }),
        }
    }
    let mut report = run_scenarios(&scenarios, out)?;
    failures.append(&mut report.failures);
    report.failures = failures;
    if let Some(dir) = out {
        report.write_tables(dir)?;
    }
    Ok(report)
}

struct TrialOutput {
    record: TrialRecord,
    trace: Trace,
}

fn run_trial(id: &str, sc: &Scenario, trial: u32) -> Result<TrialOutput> {
    let trace = run_episode(sc, trial)?;
    let ev = evaluate(&trace, &sc.motor_params(), &sc.joint_params(), &sc.command)?;
    let b = ev.boundary;
    Ok(TrialOutput {
        record: TrialRecord {
            id: id.to_owned(),
            name: sc.name.clone(),
            controller: sc.controller,
            dt_p: sc.timing.dt_p,
            trial,
            seed: trial_seed(sc, trial),
            command_fraction: ev.command_fraction,
            position_excess: ev.position_excess,
            velocity_excess: ev.velocity_excess,
            window_fraction: b.map(|r| r.realizable_fraction),
            dqd_max: b.map(|r| r.dqd_max),
            dqd_rms: b.map(|r| r.dqd_rms),
            dtau_rms: b.map(|r| r.dtau_rms),
            f_zc: b.map(|r| r.f_zc),
            success: b.map(|r| r.success),
        },
        trace,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn summarize(id: &str, sc: &Scenario, outputs: &[TrialOutput]) -> ScenarioSummary {
    let recs: Vec<&TrialRecord> = outputs.iter().map(|o| &o.record).collect();
    let boundary: Option<Vec<MetricsReport>> = recs.iter().map(|r| r.boundary()).collect();
    let agg = boundary.as_deref().and_then(aggregate);
    let identical = outputs
        .windows(2)
        .all(|w| w[0].trace.bit_identical(&w[1].trace));
    ScenarioSummary {
        id: id.to_owned(),
        name: sc.name.clone(),
        controller: sc.controller,
        dt_p: sc.timing.dt_p,
        trials: outputs.len() as u32,
        identical_trials: identical,
        command_fraction: mean(recs.iter().map(|r| r.command_fraction)),
        position_excess: mean(recs.iter().map(|r| r.position_excess)),
        velocity_excess: mean(recs.iter().map(|r| r.velocity_excess)),
        window_fraction: agg.map(|a| a.realizable_fraction),
        dqd_max: agg.map(|a| a.dqd_max),
        dqd_rms: agg.map(|a| a.dqd_rms),
        dtau_rms: agg.map(|a| a.dtau_rms),
        f_zc: agg.map(|a| a.f_zc),
        success: agg.map(|a| a.success),
    }
}

/// Group summaries by `(controller, dt_p)`; scenarios without near-boundary
/// metrics only contribute to the command fraction.
pub fn compare(summaries: &[ScenarioSummary]) -> Vec<ComparisonRow> {
    let mut groups: BTreeMap<(usize, u64), Vec<&ScenarioSummary>> = BTreeMap::new();
    for s in summaries {
        let order = ControllerKind::ALL
            .iter()
            .position(|&c| c == s.controller)
            .unwrap_or(usize::MAX);
        groups.entry((order, s.dt_p.to_bits())).or_default().push(s);
    }
    groups
        .into_values()
        .map(|g| {
            let b: Vec<&&ScenarioSummary> = g.iter().filter(|s| s.success.is_some()).collect();
            ComparisonRow {
                controller: g[0].controller,
                dt_p: g[0].dt_p,
                scenarios: b.len(),
                command_fraction: mean(g.iter().map(|s| s.command_fraction)),
                dqd_max: mean(b.iter().filter_map(|s| s.dqd_max)),
                dqd_rms: mean(b.iter().filter_map(|s| s.dqd_rms)),
                dtau_rms: mean(b.iter().filter_map(|s| s.dtau_rms)),
                f_zc: mean(b.iter().filter_map(|s| s.f_zc)),
                success: !b.is_empty() && b.iter().all(|s| s.success == Some(true)),
            }
        })
        .collect()
}

/// Run `scenarios` (id, scenario) with all their trials in parallel.
///
/// Traces are written to `out/traces` when `out` is given; the tables are
/// left to the caller.
pub fn run_scenarios(scenarios: &[(String, Scenario)], out: Option<&Path>) -> Result<SuiteReport> {
    let jobs: Vec<(usize, u32)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(k, (_, sc))| (0..sc.trials).map(move |t| (k, t)))
        .collect();
    let results: Vec<(usize, Result<TrialOutput>)> = jobs
        .par_iter()
        .map(|&(k, t)| {
            let (id, sc) = &scenarios[k];
            (k, run_trial(id, sc, t))
        })
        .collect();

    let mut per_scenario: Vec<Vec<TrialOutput>> = scenarios.iter().map(|_| Vec::new()).collect();
    let mut errors: Vec<Option<String>> = vec![None; scenarios.len()];
    for (k, r) in results {
        match r {
            Ok(o) => per_scenario[k].push(o),
            Err(e) => {
                errors[k].get_or_insert_with(|| e.to_string());
            }
        }
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("traces"))?;
    }
    let mut report = SuiteReport::default();
    for (k, ((id, sc), outputs)) in scenarios.iter().zip(per_scenario).enumerate() {
        if let Some(e) = errors[k].take() {
            report.failures.push(Failure {
                id: id.clone(),
                error: e,
            });
            continue;
        }
        if let Some(dir) = out {
            for o in &outputs {
                o.trace.save(
                    &dir.join("traces")
                        .join(format!("{id}_t{}.csv", o.record.trial)),
                )?;
            }
        }
        report.summaries.push(summarize(id, sc, &outputs));
        report.trials.extend(outputs.into_iter().map(|o| o.record));
    }
    report.comparison = compare(&report.summaries);
    Ok(report)
}

/// Parse a command-line value as a TOML value, falling back to a string.
fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_owned()))
}

/// Copy of `base` with the dotted field `param` (as in the scenario file,
/// e.g. `timing.dt_p` or `mismatch.r_scale`) set to `value`.
pub fn with_param(base: &Scenario, param: &str, value: &str) -> Result<Scenario> {
    let mut root = toml::Value::try_from(base)?;
    let keys: Vec<&str> = param.split('.').collect();
    let (last, parents) = keys
        .split_last()
        .filter(|(l, _)| !l.is_empty())
        .ok_or_else(|| Error::validation(param, "empty parameter name"))?;
    let mut node = &mut root;
    for key in parents {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::validation(param, format!("`{key}` is not a section")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::validation(param, "parent is not a section"))?
        .insert(last.to_string(), parse_value(value));
    let sc: Scenario = root
        .try_into()
        .map_err(|e: toml::de::Error| Error::validation(param, e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

/// One scenario per value of `param`, ids `<base id>_<param>=<value>`.
pub fn sweep_variants(
    id: &str,
    base: &Scenario,
    param: &str,
    values: &[String],
) -> Result<Vec<(String, Scenario)>> {
    values
        .iter()
        .map(|v| {
            let mut sc = with_param(base, param, v)?;
            sc.name = format!("{}_{param}={v}", base.name);
            Ok((format!("{id}_{param}={v}"), sc))
        })
        .collect()
}

/// Gnuplot script for a single trace: position, velocity, torque tracking
/// and voltage magnitude against the budget.
pub fn trace_plot_script(trace_csv: &str, m: &MotorParams, j: &JointParams) -> String {
    format!(
        r#"# gnuplot script, run with: gnuplot -p <this file>
set datafile separator ","
set key autotitle columnhead
set multiplot layout 4,1
set xlabel "time (s)"
set ylabel "q (rad)"
plot "{csv}" using "time":"q" with lines, {q_ub} title "q_ub" dt 2, {q_lb} title "q_lb" dt 2
set ylabel "qd (rad/s)"
plot "{csv}" using "time":"qd" with lines, {qd_ub} title "qd_ub" dt 2
set ylabel "torque (Nm)"
plot "{csv}" using "time":(column("iq_cmd")*{k_t}) title "commanded" with steps, \
     "{csv}" using "time":(column("iq")*{k_t}) title "realized" with lines
set ylabel "|u| (V)"
plot "{csv}" using "time":(sqrt(column("ud")**2+column("uq")**2)) title "applied" with lines, \
     "{csv}" using "time":(sqrt(column("ud_req")**2+column("uq_req")**2)) title "requested" with lines, \
     {v_limit} title "V_limit" dt 2
unset multiplot
"#,
        csv = trace_csv,
        q_ub = j.q_ub,
        q_lb = j.q_lb,
        qd_ub = j.qd_ub,
        k_t = m.k_t,
        v_limit = m.v_limit,
    )
}

/// Gnuplot script for stacked realizable / unrealizable bars per scenario,
/// read from `summary.csv`.
pub fn fraction_plot_script(summary_csv: &str) -> String {
    format!(
        r#"# gnuplot script, run with: gnuplot -p <this file>
set datafile separator ","
set style data histograms
set style histogram rowstacked
set style fill solid 0.8 border -1
set boxwidth 0.7
set yrange [0:1]
set ylabel "fraction of control steps"
set xtics rotate by -45
plot "{csv}" using "command_fraction":xtic(1) title "realizable", \
     "" using (1-column("command_fraction")) title "unrealizable"
"#,
        csv = summary_csv
    )
}
