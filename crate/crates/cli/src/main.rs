//! `ratchet` — command-line front end for the homogenization toolkit.
//!
//! Exit codes: 0 success, 2 validation error, 3 solver failure,
//! 4 certification failure (a computed report did not pass its check).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ratchet_core::cell::{dhbar, solve_cell};
use ratchet_core::defaults;
use ratchet_core::effective::{check_convexity, coercivity_check, sweep, velocity, HbarTable};
use ratchet_core::experiments::{
    harnack_diag, multimass, profile_compare, transport, HarnackReport, ResolutionPolicy,
};
use ratchet_core::fokker_planck::{Bump, Diagnostics, DomainSpec, SimState};
use ratchet_core::model::{resolve_model, MotorModel, PRESET_FIELD_SAMPLES};
use ratchet_core::output::{two_column, write_atomic};
use ratchet_core::Error;

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(
    name = "ratchet",
    about = "Effective Hamiltonians and transport for two-species ratchet models",
    version
)]
struct Cli {
    /// TOML config file; values found in it override the matching flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problem at one momentum and print Hbar, DHbar, residual.
    Hbar(HbarArgs),
    /// Sweep Hbar over a momentum range and certify convexity/coercivity.
    Sweep(SweepArgs),
    /// Print the transport velocity vbar = DHbar(0) and Hstar(vbar).
    Velocity(VelocityArgs),
    /// Run the eps-scaled simulator and emit snapshots plus a manifest.
    Simulate(SimulateArgs),
    /// Verification experiments combining the solver and the simulator.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct ModelOpt {
    /// Preset name (flat, symmetric, asymmetric-ratchet) or spec-file path.
    #[arg(long)]
    model: String,
}

impl ModelOpt {
    fn load(&self) -> Result<MotorModel> {
        resolve_model(&self.model, PRESET_FIELD_SAMPLES)
    }
}

#[derive(Args)]
struct HbarArgs {
    #[command(flatten)]
    model: ModelOpt,
    /// Momentum at which to solve.
    #[arg(long, allow_hyphen_values = true)]
    p: f64,
    /// Cell grid size.
    #[arg(long, default_value_t = defaults::CELL_GRID_N)]
    grid: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[arg(long, allow_hyphen_values = true)]
    pmin: f64,
    #[arg(long, allow_hyphen_values = true)]
    pmax: f64,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = defaults::CELL_GRID_N)]
    grid: usize,
    /// Output directory (under RATCHET_OUT_DIR if relative).
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
    /// Skip solving; load this table CSV and re-run the certificates.
    #[arg(long)]
    check_table: Option<PathBuf>,
    /// Also write gnuplot script stubs.
    #[arg(long)]
    emit_gnuplot: bool,
}

#[derive(Args)]
struct VelocityArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[arg(long, default_value_t = defaults::CELL_GRID_N)]
    grid: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[arg(long)]
    eps: f64,
    /// Final time.
    #[arg(long = "T", visible_alias = "horizon", default_value_t = defaults::HORIZON)]
    t: f64,
    /// Bump file: lines of `center mass` (default: unit bump at 0).
    #[arg(long)]
    bumps: Option<PathBuf>,
    #[arg(long, default_value_t = defaults::CELLS_PER_PERIOD)]
    cells_per_period: usize,
    /// Torus size in eps-periods (default: sized from the horizon).
    #[arg(long)]
    periods: Option<usize>,
    /// Time step (default: CFL-limited).
    #[arg(long)]
    dt: Option<f64>,
    /// Steps between snapshots (default: aimed at ~40 snapshots).
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Envelope decay rate A of the initial bumps.
    #[arg(long, default_value_t = defaults::BUMP_DECAY)]
    decay_a: f64,
    /// Speed estimate for the outside-mass window diagnostic.
    #[arg(long, default_value_t = 0.0)]
    window_speed: f64,
    #[arg(long, default_value = "runs/simulate")]
    out: PathBuf,
    #[arg(long)]
    emit_gnuplot: bool,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Measure the center-of-mass velocity across an eps sequence.
    Transport(TransportArgs),
    /// Track several separated bumps and their masses.
    Multimass(MultimassArgs),
    /// Compare the simulated rate profile with the Hopf-Lax solution.
    Profile(ProfileArgs),
    /// Empirical Harnack-quotient constant across an eps sequence.
    Harnack(HarnackArgs),
}

#[derive(Args)]
struct PolicyOpt {
    #[arg(long, default_value_t = defaults::CELLS_PER_PERIOD)]
    cells_per_period: usize,
    #[arg(long, default_value_t = defaults::CELL_GRID_N)]
    grid: usize,
}

impl PolicyOpt {
    fn policy(&self) -> ResolutionPolicy {
        ResolutionPolicy {
            cells_per_period: self.cells_per_period,
            cell_grid_n: self.grid,
            ..ResolutionPolicy::default()
        }
    }
}

#[derive(Args)]
struct TransportArgs {
    #[command(flatten)]
    model: ModelOpt,
    /// Comma-separated, strictly decreasing eps values.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long = "T", default_value_t = defaults::HORIZON)]
    t: f64,
    #[command(flatten)]
    policy: PolicyOpt,
    #[arg(long, default_value = "runs/transport")]
    out: PathBuf,
}

#[derive(Args)]
struct MultimassArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[arg(long)]
    eps: f64,
    #[arg(long = "T", default_value_t = defaults::HORIZON)]
    t: f64,
    /// Bump file: lines of `center mass`.
    #[arg(long)]
    bumps: PathBuf,
    #[command(flatten)]
    policy: PolicyOpt,
    #[arg(long, default_value = "runs/multimass")]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    model: ModelOpt,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = defaults::HORIZON)]
    t_eval: f64,
    #[command(flatten)]
    policy: PolicyOpt,
    #[arg(long, default_value = "runs/profile")]
    out: PathBuf,
    #[arg(long)]
    emit_gnuplot: bool,
}

#[derive(Args)]
struct HarnackArgs {
    #[command(flatten)]
    model: ModelOpt,
    /// Comma-separated, strictly decreasing eps values.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    t0: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[command(flatten)]
    policy: PolicyOpt,
    #[arg(long, default_value = "runs/harnack")]
    out: PathBuf,
}

/// Keys a config file may set; present keys replace the matching flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    grid: Option<usize>,
    cells_per_period: Option<usize>,
    out: Option<String>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    fn apply(&self, model: &mut String, grid: Option<&mut usize>, out: Option<&mut PathBuf>) {
        if let Some(m) = &self.model {
            *model = m.clone();
        }
        if let (Some(g), Some(slot)) = (self.grid, grid) {
            *slot = g;
        }
        if let (Some(o), Some(slot)) = (&self.out, out) {
            *slot = PathBuf::from(o);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Resolves an output directory under the RATCHET_OUT_DIR root.
fn out_dir(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(defaults::OUT_DIR_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn run(cli: Cli) -> Result<u8> {
    let config = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Hbar(mut args) => {
            config.apply(&mut args.model.model, Some(&mut args.grid), None);
            cmd_hbar(args)
        }
        Command::Sweep(mut args) => {
            config.apply(
                &mut args.model.model,
                Some(&mut args.grid),
                Some(&mut args.out),
            );
            cmd_sweep(args)
        }
        Command::Velocity(mut args) => {
            config.apply(&mut args.model.model, Some(&mut args.grid), None);
            cmd_velocity(args)
        }
        Command::Simulate(mut args) => {
            config.apply(&mut args.model.model, None, Some(&mut args.out));
            if let Some(m) = config.cells_per_period {
                args.cells_per_period = m;
            }
            cmd_simulate(args)
        }
        Command::Experiment(exp) => match exp {
            ExperimentCommand::Transport(mut args) => {
                config.apply(
                    &mut args.model.model,
                    Some(&mut args.policy.grid),
                    Some(&mut args.out),
                );
                cmd_transport(args)
            }
            ExperimentCommand::Multimass(mut args) => {
                config.apply(
                    &mut args.model.model,
                    Some(&mut args.policy.grid),
                    Some(&mut args.out),
                );
                cmd_multimass(args)
            }
            ExperimentCommand::Profile(mut args) => {
                config.apply(
                    &mut args.model.model,
                    Some(&mut args.policy.grid),
                    Some(&mut args.out),
                );
                cmd_profile(args)
            }
            ExperimentCommand::Harnack(mut args) => {
                config.apply(
                    &mut args.model.model,
                    Some(&mut args.policy.grid),
                    Some(&mut args.out),
                );
                cmd_harnack(args)
            }
        },
    }
}

fn cmd_hbar(args: HbarArgs) -> Result<u8> {
    if !args.p.is_finite() {
        return Err(Error::InvalidArgument(format!("p = {}", args.p)));
    }
    let model = args.model.load()?;
    let sol = solve_cell(&model, args.p, args.grid)?;
    let grad = dhbar(&sol, &model)?;
    println!("p        = {:.6e}", args.p);
    println!("Hbar(p)  = {:.6e}", sol.hbar);
    println!("DHbar(p) = {:.6e}", grad);
    println!("residual = {:.3e}", sol.residual);
    Ok(0)
}

fn cmd_velocity(args: VelocityArgs) -> Result<u8> {
    let model = args.model.load()?;
    let report = velocity(&model, args.grid)?;
    println!("vbar         = {:.5e}", report.v_bar);
    println!("Hstar(vbar)  = {:.3e}", report.hstar_at_vbar);
    println!("coercivity C = {:.5e}", report.coercivity_c);
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let model = args.model.load()?;
    let dir = out_dir(&args.out);

    let table = match &args.check_table {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            HbarTable::from_csv(&text)?
        }
        None => sweep(&model, args.pmin, args.pmax, args.count, args.grid)?,
    };

    let convexity = check_convexity(&table);
    let coercivity = coercivity_check(&model, &table);

    if args.check_table.is_none() {
        table.write_csv(&dir.join("table.csv"))?;
        write_atomic(&dir.join("table.json"), &table.sidecar_json())?;
        let pairs: Vec<(f64, f64)> = table
            .p
            .iter()
            .copied()
            .zip(table.hbar.iter().copied())
            .collect();
        write_atomic(&dir.join("hbar.dat"), &two_column(&pairs))?;
        let reports = serde_json::json!({
            "convexity": convexity,
            "coercivity": coercivity,
        });
        write_atomic(
            &dir.join("certificates.json"),
            &serde_json::to_string_pretty(&reports).expect("report json"),
        )?;
        if args.emit_gnuplot {
            write_atomic(
                &dir.join("hbar.gp"),
                "set xlabel 'p'\nset ylabel 'Hbar(p)'\nplot 'hbar.dat' using 1:2 with linespoints title 'Hbar'\n",
            )?;
        }
        println!("wrote {}", dir.display());
    }

    print!("{convexity}");
    print!("{coercivity}");
    if convexity.pass && coercivity.pass {
        Ok(0)
    } else {
        Ok(4)
    }
}

fn parse_bumps(path: &Path) -> Result<Vec<Bump>> {
    let text = std::fs::read_to_string(path)?;
    let mut bumps = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "bump file line {}: expected `center mass`",
                lineno + 1
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::InvalidArgument(format!("bump file: bad float `{s}`: {e}")))
        };
        bumps.push(Bump {
            center: parse(fields[0])?,
            mass: parse(fields[1])?,
        });
    }
    if bumps.is_empty() {
        return Err(Error::InvalidMass("bump file has no bumps".into()));
    }
    Ok(bumps)
}

fn snapshot_csv(state: &SimState, diag: &Diagnostics) -> String {
    let mut out = String::from("x,n1,n2,r1,r2\n");
    for i in 0..state.cells() {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            state.x[i], state.n1[i], state.n2[i], diag.r1[i], diag.r2[i]
        ));
    }
    out
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    if args.eps.is_nan() || args.eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps = {}", args.eps)));
    }
    if args.t < 0.0 {
        return Err(Error::InvalidArgument(format!("T = {}", args.t)));
    }
    let model = args.model.load()?;
    let bumps = match &args.bumps {
        Some(path) => parse_bumps(path)?,
        None => vec![Bump {
            center: 0.0,
            mass: 1.0,
        }],
    };

    let span = bumps.iter().map(|b| b.center.abs()).fold(0.0f64, f64::max);
    let periods = match args.periods {
        Some(p) => p,
        None => {
            let needed = 2.0 * (span + args.window_speed.abs() * args.t + 3.2);
            ((needed / args.eps).ceil() as usize + 1).max(16)
        }
    };
    let domain = DomainSpec {
        periods,
        cells_per_period: args.cells_per_period,
    };
    let mut state = SimState::init(&model, args.eps, domain, &bumps, args.decay_a)?;
    state.window_speed = args.window_speed;

    let dt = match args.dt {
        Some(dt) => dt,
        None => state.max_stable_dt().min(defaults::DT_CAP_CELLS * state.h),
    };
    let steps = (args.t / dt).ceil().max(1.0) as usize;
    let every = args
        .snapshot_every
        .unwrap_or_else(|| (steps / defaults::SNAPSHOTS_PER_RUN).max(1));

    let dir = out_dir(&args.out);
    std::fs::create_dir_all(&dir)?;
    let mut snapshots = Vec::new();
    let mut index = 0usize;
    state.run_with(args.t, dt, every, |state, diag| {
        let file = format!("snap_{index:04}.csv");
        write_atomic(&dir.join(&file), &snapshot_csv(state, diag))?;
        snapshots.push((file, diag.clone()));
        index += 1;
        Ok(())
    })?;

    let max_drift = snapshots
        .iter()
        .map(|(_, d)| ((d.total - state.initial_mass) / state.initial_mass).abs())
        .fold(0.0f64, f64::max);
    let manifest = serde_json::json!({
        "fingerprint": model.fingerprint(),
        "epsilon": args.eps,
        "h": state.h,
        "dt": dt,
        "cells": state.cells(),
        "periods": periods,
        "cells_per_period": args.cells_per_period,
        "decay_a": args.decay_a,
        "envelope_b": state.envelope_b,
        "envelope_d": state.envelope_d,
        "initial_mass": state.initial_mass,
        "max_relative_mass_drift": max_drift,
        "mass_conservation_ok": max_drift < 1e-11,
        "snapshots": snapshots.iter().map(|(file, d)| serde_json::json!({
            "file": file,
            "t": d.t,
            "mass1": d.mass1,
            "mass2": d.mass2,
            "total": d.total,
            "com": d.com,
            "spread": d.spread,
            "argmin_r": d.argmin_r,
            "outside_fraction": d.outside_fraction,
            "envelope_margin": d.envelope_margin,
        })).collect::<Vec<_>>(),
    });
    write_atomic(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest json"),
    )?;
    let com: Vec<(f64, f64)> = snapshots.iter().map(|(_, d)| (d.t, d.com)).collect();
    write_atomic(&dir.join("com.dat"), &two_column(&com))?;
    if args.emit_gnuplot {
        write_atomic(
            &dir.join("com.gp"),
            "set xlabel 't'\nset ylabel 'center of mass'\nplot 'com.dat' using 1:2 with lines title 'com(t)'\n",
        )?;
    }
    println!(
        "wrote {} snapshots to {} (mass drift {max_drift:.3e})",
        snapshots.len(),
        dir.display()
    );
    Ok(0)
}

fn cmd_transport(args: TransportArgs) -> Result<u8> {
    let model = args.model.load()?;
    let report = transport(&model, &args.eps, args.t, &args.policy.policy())?;
    let dir = out_dir(&args.out);
    write_atomic(
        &dir.join("transport.json"),
        &serde_json::to_string_pretty(&report).expect("report json"),
    )?;
    write_atomic(&dir.join("transport.txt"), &report.to_string())?;
    for row in &report.rows {
        let name = format!("com_eps_{:.6}.dat", row.epsilon);
        write_atomic(&dir.join(name), &two_column(&row.com_series))?;
    }
    print!("{report}");
    Ok(if report.pass { 0 } else { 4 })
}

fn cmd_multimass(args: MultimassArgs) -> Result<u8> {
    let model = args.model.load()?;
    let bumps = parse_bumps(&args.bumps)?;
    let report = multimass(&model, args.eps, &bumps, args.t, &args.policy.policy())?;
    let dir = out_dir(&args.out);
    write_atomic(
        &dir.join("multimass.json"),
        &serde_json::to_string_pretty(&report).expect("report json"),
    )?;
    write_atomic(&dir.join("multimass.txt"), &report.to_string())?;
    print!("{report}");
    Ok(if report.pass { 0 } else { 4 })
}

fn cmd_profile(args: ProfileArgs) -> Result<u8> {
    let model = args.model.load()?;
    let report = profile_compare(&model, args.eps, args.t_eval, &args.policy.policy())?;
    let dir = out_dir(&args.out);
    write_atomic(
        &dir.join("profile.json"),
        &serde_json::to_string_pretty(&report).expect("report json"),
    )?;
    let r_pairs: Vec<(f64, f64)> = report.samples.iter().map(|s| (s.0, s.1)).collect();
    let h_pairs: Vec<(f64, f64)> = report.samples.iter().map(|s| (s.0, s.2)).collect();
    write_atomic(&dir.join("rprofile.dat"), &two_column(&r_pairs))?;
    write_atomic(&dir.join("hopf.dat"), &two_column(&h_pairs))?;
    if args.emit_gnuplot {
        write_atomic(
            &dir.join("profile.gp"),
            "set xlabel 'x'\nset ylabel 'rate'\nplot 'rprofile.dat' with lines title 'R_eps (shifted)', 'hopf.dat' with lines title 't Hstar(x/t)'\n",
        )?;
    }
    print!("{report}");
    Ok(if report.pass { 0 } else { 4 })
}

fn cmd_harnack(args: HarnackArgs) -> Result<u8> {
    let model = args.model.load()?;
    let policy = args.policy.policy();
    if args.eps.is_empty() {
        return Err(Error::InvalidArgument("need at least one eps".into()));
    }
    let mut reports: Vec<HarnackReport> = Vec::new();
    for &eps in &args.eps {
        let rep = harnack_diag(&model, eps, args.t0, args.delta, &policy)?;
        println!(
            "eps = {:.6}  C_hat = {:.6e}  (excluded cells: {})",
            rep.epsilon, rep.c_hat, rep.excluded
        );
        reports.push(rep);
    }
    let first = reports.first().expect("nonempty");
    let bounded = reports
        .iter()
        .all(|r| r.c_hat.is_finite() && r.c_hat <= 3.0 * first.c_hat.max(1e-12));
    if reports.len() > 1 {
        println!(
            "boundedness across eps: {}",
            if bounded { "PASS" } else { "FAIL" }
        );
    }
    let dir = out_dir(&args.out);
    write_atomic(
        &dir.join("harnack.json"),
        &serde_json::to_string_pretty(&reports).expect("report json"),
    )?;
    Ok(if bounded { 0 } else { 4 })
}
