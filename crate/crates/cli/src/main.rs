//! `gridform`: simulation and certification of grid-forming inverter microgrids.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use gridform_core::certificate::CertificateKind;
use gridform_core::linearize::continue_equilibrium;
use gridform_core::scenario::{emit_state, random_scenario};
use gridform_core::secondary::power_sharing_certificate;
use gridform_core::sim::{window_report, InitialCondition, SteadyStateReport, SETTLE_REL};
use gridform_core::{
    bundled, certify_inverters, parse_scenario_file, simulate, solve_equilibrium, theorem3_certificate, Certificate,
    Equilibrium, Error, Scenario, SweepOptions, Trajectory,
};
use serde::Serialize;

const EXIT_SCHEMA: u8 = 1;
const EXIT_CONVERGENCE: u8 = 2;
const EXIT_CERTIFICATE: u8 = 3;

/// Length of the terminal window used when a scenario declares none (s).
const DEFAULT_WINDOW: f64 = 0.5;

#[derive(Parser, Debug)]
#[command(name = "gridform", version, about = "Grid-forming inverter microgrid analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the closed loop; writes trajectory.csv and summary.toml.
    Simulate(Common),
    /// Solve the closed-loop equilibrium; writes equilibrium.toml.
    Equilibrium(Common),
    /// Frequency sweep of every inverter; writes passivity.csv and passivity.toml.
    Passivity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Secondary-layer convergence certificate; writes certify.toml.
    Certify(Common),
    /// Power-sharing certificate on the terminal window of a trajectory; writes share.toml.
    Share {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV (default: <out>/trajectory.csv).
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Relative tolerance on k_p * i_oD.
        #[arg(long, default_value_t = 0.02)]
        tol: f64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, required_unless_present = "seed")]
    scenario: Option<String>,
    /// Randomized benchmark parameters drawn from this seed.
    #[arg(long, conflicts_with = "scenario")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value_t = 1000)]
    sweep_points: usize,
    #[arg(long, default_value_t = 1e-2)]
    omega_min: f64,
    #[arg(long, default_value_t = 1e6)]
    omega_max: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_SCHEMA) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CERTIFICATE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. } | Error::Diverged { .. }) => EXIT_CONVERGENCE,
        _ => EXIT_SCHEMA,
    }
}

/// Returns whether every certificate produced passed.
fn run(command: Command) -> anyhow::Result<bool> {
    match command {
        Command::Simulate(c) => {
            let s = load(&c)?;
            let traj = simulate(&s)?;
            let dir = out_dir(&c.out)?;
            write_trajectory(&traj, &dir.join("trajectory.csv"))?;
            write_toml(&dir.join("summary.toml"), &Summary::new(&s, &traj))?;
            for (k, t) in &traj.diagnostics.angle_violations {
                log::warn!("inverter {} angle left (-pi/2, pi/2) at t = {t}", s.spec.inverters[*k].name);
            }
            Ok(true)
        }
        Command::Equilibrium(c) => {
            let s = load(&c)?;
            let eq = equilibrium(&c, &s)?;
            let dir = out_dir(&c.out)?;
            fs::write(dir.join("equilibrium.toml"), emit_state(&eq.state, &s.name, Some(eq.residual_norm))?)?;
            Ok(true)
        }
        Command::Passivity { common, sweep } => {
            let s = load(&common)?;
            let opts = SweepOptions {
                omega_min: sweep.omega_min,
                omega_max: sweep.omega_max,
                points: sweep.sweep_points,
                ..SweepOptions::default()
            };
            opts.validate()?;
            let eq = equilibrium(&common, &s)?;
            let results = certify_inverters(&eq, &s.spec, &opts)?;
            let dir = out_dir(&common.out)?;

            let mut w = csv::Writer::from_path(dir.join("passivity.csv"))?;
            let mut header = vec!["omega".to_string()];
            header.extend(results.iter().map(|r| format!("min_eig_{}", s.spec.inverters[r.inverter].name)));
            w.write_record(&header)?;
            let grid = results
                .iter()
                .find_map(|r| r.sweep.as_ref().map(|sw| sw.omega.clone()))
                .unwrap_or_default();
            for (i, omega) in grid.iter().enumerate() {
                let mut row = vec![omega.to_string()];
                for r in &results {
                    let v = r.sweep.as_ref().map_or(f64::NAN, |sw| sw.min_eigenvalues[i]);
                    row.push(v.to_string());
                }
                w.write_record(&row)?;
            }
            w.flush()?;

            let certificates: Vec<Certificate> = results.into_iter().map(|r| r.certificate).collect();
            let report = Report::new(&s.name, certificates);
            write_toml(&dir.join("passivity.toml"), &report)?;
            Ok(report.pass)
        }
        Command::Certify(c) => {
            let s = load(&c)?;
            let eq = equilibrium(&c, &s)?;
            let cert = match theorem3_certificate(&s.spec, &eq) {
                Ok(cert) => cert,
                Err(Error::Hypothesis(msg)) => Certificate::failed(CertificateKind::Theorem3, msg),
                Err(e) => return Err(e.into()),
            };
            let report = Report::new(&s.name, vec![cert]);
            write_toml(&out_dir(&c.out)?.join("certify.toml"), &report)?;
            Ok(report.pass)
        }
        Command::Share { common, trajectory, tol } => {
            let s = load(&common)?;
            let dir = out_dir(&common.out)?;
            let path = trajectory.unwrap_or_else(|| dir.join("trajectory.csv"));
            let table = CsvTable::read(&path)?;
            let end = *table.time.last().ok_or_else(|| anyhow!("{}: no samples", path.display()))?;
            let (start, end) = s.windows.last().copied().unwrap_or((end - DEFAULT_WINDOW, end));

            let (mut i_od, mut v_od, mut k_p) = (Vec::new(), Vec::new(), Vec::new());
            let mut names = Vec::new();
            for (j, inv) in s.spec.inverters.iter().enumerate() {
                let i = table.window_mean(&format!("iod_{}", j + 1), start, end)?;
                let v = table.window_mean(&format!("vod_{}", j + 1), start, end)?;
                if i.is_finite() && v.is_finite() {
                    i_od.push(i);
                    v_od.push(v);
                    k_p.push(inv.gains.frequency.k_p);
                    names.push(inv.name.clone());
                }
            }
            let cert = power_sharing_certificate(&i_od, &v_od, &k_p, tol)
                .with_value("window", vec![start, end])
                .with_note(format!("inverters: {}", names.join(", ")));
            let report = Report::new(&s.name, vec![cert]);
            write_toml(&dir.join("share.toml"), &report)?;
            Ok(report.pass)
        }
    }
}

fn load(c: &Common) -> anyhow::Result<Scenario> {
    if let Some(seed) = c.seed {
        return Ok(random_scenario(seed)?);
    }
    let name = c.scenario.as_deref().expect("clap requires --scenario or --seed");
    let parsed = if Path::new(name).exists() {
        parse_scenario_file(name).with_context(|| format!("reading {name}"))?
    } else {
        bundled(name)?
    };
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    Ok(parsed.scenario)
}

/// Solves from the scenario's initial state when it carries one. Randomized
/// draws that Newton cannot reach directly are continued from the bundled 5-bus point.
fn equilibrium(c: &Common, s: &Scenario) -> anyhow::Result<Equilibrium> {
    let guess = match &s.initial {
        InitialCondition::State(x) => Some(x),
        _ => None,
    };
    let eq = match (solve_equilibrium(&s.spec, guess), c.seed) {
        (Ok(eq), _) => eq,
        (Err(e), Some(_)) => {
            log::info!("direct solve failed ({e}); continuing from the bundled operating point");
            let base = bundled("table1_5bus")?.scenario;
            let start = solve_equilibrium(&base.spec, None)?;
            continue_equilibrium(&base.spec, &start, &s.spec, 20)?
        }
        (Err(e), _) => return Err(e.into()),
    };
    if !eq.converged {
        return Err(Error::NonConvergence {
            iterations: eq.iterations,
            residual: eq.residual_norm,
        }
        .into());
    }
    for w in &eq.warnings {
        log::warn!("{w}");
    }
    Ok(eq)
}

fn out_dir(dir: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = toml::to_string(value).with_context(|| format!("serializing {}", path.display()))?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_trajectory(traj: &Trajectory, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["time"];
    header.extend(traj.channel_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for (t, row) in traj.time.iter().zip(&traj.rows) {
        w.write_record(std::iter::once(t).chain(row).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Report {
    scenario: String,
    pass: bool,
    certificates: Vec<Certificate>,
}

impl Report {
    fn new(scenario: &str, certificates: Vec<Certificate>) -> Self {
        Report {
            scenario: scenario.to_string(),
            pass: certificates.iter().all(|c| c.pass),
            certificates,
        }
    }
}

#[derive(Serialize)]
struct Summary {
    scenario: String,
    horizon: f64,
    samples: usize,
    steps: usize,
    overmodulated_steps: usize,
    current_limited_steps: usize,
    cpl_clamped_steps: usize,
    events: Vec<EventRecord>,
    windows: Vec<WindowSummary>,
}

#[derive(Serialize)]
struct EventRecord {
    time: f64,
    description: String,
}

#[derive(Serialize)]
struct WindowSummary {
    start: f64,
    end: f64,
    samples: usize,
    unsettled: Vec<String>,
    mean: BTreeMap<String, f64>,
    max_deviation: BTreeMap<String, f64>,
}

impl WindowSummary {
    fn new(r: &SteadyStateReport) -> Self {
        // Inactive channels are NaN and left out.
        let active = || r.channels.iter().filter(|c| c.mean.is_finite());
        WindowSummary {
            start: r.start,
            end: r.end,
            samples: r.samples,
            unsettled: active().filter(|c| !c.settled).map(|c| c.name.clone()).collect(),
            mean: active().map(|c| (c.name.clone(), c.mean)).collect(),
            max_deviation: active().map(|c| (c.name.clone(), c.max_deviation)).collect(),
        }
    }
}

impl Summary {
    fn new(s: &Scenario, traj: &Trajectory) -> Self {
        let end = *traj.time.last().unwrap_or(&0.0);
        let windows = if s.windows.is_empty() {
            vec![((end - DEFAULT_WINDOW).max(0.0), end)]
        } else {
            s.windows.clone()
        };
        let d = &traj.diagnostics;
        Summary {
            scenario: s.name.clone(),
            horizon: s.horizon,
            samples: traj.time.len(),
            steps: d.steps,
            overmodulated_steps: d.overmodulated_steps,
            current_limited_steps: d.current_limited_steps,
            cpl_clamped_steps: d.cpl_clamped_steps,
            events: d
                .events
                .iter()
                .map(|(time, description)| EventRecord {
                    time: *time,
                    description: description.clone(),
                })
                .collect(),
            windows: windows
                .iter()
                .map(|&(a, b)| WindowSummary::new(&window_report(traj, a, b, SETTLE_REL)))
                .collect(),
        }
    }
}

/// Columns of a trajectory CSV keyed by header name.
struct CsvTable {
    time: Vec<f64>,
    columns: BTreeMap<String, Vec<f64>>,
}

impl CsvTable {
    fn read(path: &Path) -> anyhow::Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("time") {
            return Err(anyhow!("{}: first column must be `time`", path.display()));
        }
        let mut cols = vec![Vec::new(); header.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .with_context(|| format!("{}: row {}, column {}", path.display(), line + 2, header[k]))?;
                cols[k].push(v);
            }
        }
        let mut cols = cols.into_iter();
        let time = cols.next().unwrap_or_default();
        Ok(CsvTable {
            time,
            columns: header.into_iter().skip(1).zip(cols).collect(),
        })
    }

    /// NaN when the channel is inactive anywhere in the window.
    fn window_mean(&self, name: &str, start: f64, end: f64) -> anyhow::Result<f64> {
        let col = self
            .columns
            .get(name)
            .ok_or_else(|| anyhow!("trajectory has no channel `{name}`"))?;
        let vals: Vec<f64> = self
            .time
            .iter()
            .zip(col)
            .filter(|(t, _)| **t >= start - 1e-12 && **t <= end + 1e-12)
            .map(|(_, v)| *v)
            .collect();
        if vals.is_empty() {
            return Err(anyhow!("no samples in the window [{start}, {end}]"));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
