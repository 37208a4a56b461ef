//! Dataset generation from the built-in systems.

use std::io::Write;

use clap::{Args, ValueEnum};
use koopman_core::data::{
    write_derivative_csv, write_snapshot_csv, write_trajectory_csv, TrajDataset,
};
use koopman_core::dynamics::{
    lhs_sample, limit_cycle_surrogate, make_diff_dataset, sample_trajectory, System,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{create_file, effective_seed, parse_vector, Cli, CliError};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenMode {
    /// Latin hypercube states paired with exact derivatives.
    LhsDerivative,
    /// Integrated trajectories from --x0 initial conditions.
    Trajectory,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// fixed-point, duffing, or limit-cycle-surrogate.
    pub system: String,
    #[arg(long, value_enum, default_value_t = GenMode::LhsDerivative)]
    pub mode: GenMode,
    /// Point count for lhs-derivative mode.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Per-dimension bounds "lo:hi,lo:hi"; one pair is broadcast to every
    /// dimension. Defaults to the system's neighborhood of interest.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Initial condition "x1,x2,..."; repeat the flag for several
    /// trajectories.
    #[arg(long = "x0", allow_hyphen_values = true)]
    pub x0: Vec<String>,
    /// Sampling interval for trajectory and surrogate output.
    #[arg(long, default_value_t = 0.02)]
    pub dt: f64,
    /// Steps per trajectory; each trajectory has steps + 1 rows.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Ambient dimension of the surrogate field.
    #[arg(long, default_value_t = 50)]
    pub full_dim: usize,
}

/// Companion metadata written next to snapshot CSVs; the pod command needs
/// the sampling interval to emit coefficient trajectories.
#[derive(Serialize)]
struct SnapshotMeta {
    dt: f64,
    rows: usize,
    full_dim: usize,
    seed: u64,
}

pub fn run(cli: &Cli, args: &GenerateArgs) -> Result<(), CliError> {
    let config = crate::load_config(cli)?;
    let seed = effective_seed(cli, config.as_ref());
    if !(args.dt.is_finite() && args.dt > 0.0) {
        return Err(CliError::Usage("--dt must be positive".into()));
    }
    let mut manifest = RunManifest::new("generate", seed);
    match args.system.as_str() {
        "fixed-point" | "duffing" => {
            let system = if args.system == "duffing" {
                System::duffing()
            } else {
                System::fixed_point()
            };
            match args.mode {
                GenMode::LhsDerivative => lhs_derivatives(cli, args, &system, seed, &mut manifest)?,
                GenMode::Trajectory => trajectories(cli, args, &system, &mut manifest)?,
            }
        }
        "limit-cycle-surrogate" => surrogate(cli, args, seed, &mut manifest)?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown system \"{other}\"; expected fixed-point, duffing, or limit-cycle-surrogate"
            )))
        }
    }
    manifest.write(&cli.out)
}

fn lhs_derivatives(
    cli: &Cli,
    args: &GenerateArgs,
    system: &System,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let n = args.samples.unwrap_or(0);
    if n == 0 {
        return Err(CliError::Usage(
            "lhs-derivative mode needs --samples with a positive count".into(),
        ));
    }
    let bounds = match &args.bounds {
        Some(text) => parse_bounds(text, system.dim())?,
        None => default_bounds(system),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = lhs_sample(&bounds, n, &mut rng)?;
    let data = make_diff_dataset(system, &points)?;
    let path = cli.out.join("derivatives.csv");
    let mut file = create_file(&path)?;
    write_derivative_csv(&mut file, &data)?;
    file.flush()?;
    manifest.add_output(&path)?;
    println!(
        "wrote {} derivative pairs from {} to {}",
        data.len(),
        system.name(),
        path.display()
    );
    Ok(())
}

fn trajectories(
    cli: &Cli,
    args: &GenerateArgs,
    system: &System,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    if args.x0.is_empty() {
        return Err(CliError::Usage(
            "trajectory mode needs at least one --x0".into(),
        ));
    }
    if args.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let mut trajectories = Vec::with_capacity(args.x0.len());
    for text in &args.x0 {
        let x0 = parse_vector(text)?;
        if x0.len() != system.dim() {
            return Err(CliError::Usage(format!(
                "--x0 \"{text}\" has {} components, {} needs {}",
                x0.len(),
                system.name(),
                system.dim()
            )));
        }
        trajectories.push(sample_trajectory(system, &x0, args.dt, args.steps)?);
    }
    let data = TrajDataset { trajectories };
    let path = cli.out.join("trajectories.csv");
    let mut file = create_file(&path)?;
    write_trajectory_csv(&mut file, &data)?;
    file.flush()?;
    manifest.add_output(&path)?;
    println!(
        "wrote {} trajectories of {} steps to {}",
        data.trajectories.len(),
        args.steps,
        path.display()
    );
    Ok(())
}

fn surrogate(
    cli: &Cli,
    args: &GenerateArgs,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    if args.steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let data = limit_cycle_surrogate(args.full_dim, args.steps, args.dt, seed)?;
    let snapshots = data.stack_states();

    let path = cli.out.join("snapshots.csv");
    let mut file = create_file(&path)?;
    write_snapshot_csv(&mut file, &snapshots)?;
    file.flush()?;
    manifest.add_output(&path)?;

    let meta = SnapshotMeta {
        dt: args.dt,
        rows: snapshots.rows(),
        full_dim: args.full_dim,
        seed,
    };
    let meta_path = cli.out.join("snapshots.meta.json");
    std::fs::write(
        &meta_path,
        format!("{}\n", serde_json::to_string_pretty(&meta)?),
    )?;
    manifest.add_output(&meta_path)?;
    println!(
        "wrote {} snapshots of dimension {} to {}",
        snapshots.rows(),
        args.full_dim,
        path.display()
    );
    Ok(())
}

fn default_bounds(system: &System) -> Vec<(f64, f64)> {
    let half = match system.name() {
        "duffing" => 2.0,
        _ => 0.5,
    };
    vec![(-half, half); system.dim()]
}

fn parse_bounds(text: &str, dim: usize) -> Result<Vec<(f64, f64)>, CliError> {
    let mut bounds = Vec::new();
    for part in text.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("bound \"{part}\" is not lo:hi")))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bound \"{part}\" is not numeric")))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bound \"{part}\" is not numeric")))?;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CliError::Usage(format!("bound \"{part}\" needs lo < hi")));
        }
        bounds.push((lo, hi));
    }
    if bounds.len() == 1 && dim > 1 {
        return Ok(vec![bounds[0]; dim]);
    }
    if bounds.len() != dim {
        return Err(CliError::Usage(format!(
            "expected {dim} bounds, got {}",
            bounds.len()
        )));
    }
    Ok(bounds)
}
