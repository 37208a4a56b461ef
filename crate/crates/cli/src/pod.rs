//! POD projection of high-dimensional snapshots onto a reduced basis.

use std::fs;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::Args;
use koopman_core::data::{read_snapshot_csv, write_trajectory_csv, TrajDataset, Trajectory};
use koopman_core::dynamics::pod_project;
use koopman_core::linalg::Matrix;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::{create_file, effective_seed, Cli, CliError};

#[derive(Args, Debug)]
pub struct PodArgs {
    /// Snapshot CSV, one snapshot per row.
    pub snapshots: PathBuf,
    /// Modes to retain.
    #[arg(long)]
    pub rank: usize,
    /// Metadata JSON with the sampling interval; defaults to the snapshot
    /// path with a .meta.json extension.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

/// Serialized basis: snapshot mean, orthonormal modes, and the full
/// singular value ladder so energy fractions can be recomputed.
#[derive(Serialize, Deserialize)]
pub struct PodBasisFile {
    pub mean: Vec<f64>,
    pub modes: Matrix,
    pub singular_values: Vec<f64>,
    pub energy_ratio: f64,
}

#[derive(Deserialize)]
struct SnapshotMeta {
    dt: f64,
}

pub fn run(cli: &Cli, args: &PodArgs) -> Result<(), CliError> {
    let file = fs::File::open(&args.snapshots)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.snapshots.display())))?;
    let snapshots = read_snapshot_csv(BufReader::new(file))?;
    let max_rank = snapshots.rows().min(snapshots.cols());
    if args.rank == 0 || args.rank > max_rank {
        return Err(CliError::Usage(format!(
            "--rank must lie in 1..={max_rank} for {} x {} snapshots",
            snapshots.rows(),
            snapshots.cols()
        )));
    }

    let meta_path = args
        .meta
        .clone()
        .unwrap_or_else(|| args.snapshots.with_extension("meta.json"));
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| {
        CliError::Data(format!(
            "cannot read snapshot metadata {}: {e}; pass --meta",
            meta_path.display()
        ))
    })?;
    let meta: SnapshotMeta = serde_json::from_str(&meta_text)
        .map_err(|e| CliError::Data(format!("metadata {}: {e}", meta_path.display())))?;
    if !(meta.dt.is_finite() && meta.dt > 0.0) {
        return Err(CliError::Data(format!(
            "metadata {} has a non-positive dt",
            meta_path.display()
        )));
    }

    let (basis, coeffs) = pod_project(&snapshots, args.rank)?;
    let times: Vec<f64> = (0..coeffs.rows()).map(|i| i as f64 * meta.dt).collect();
    let coeff_data = TrajDataset {
        trajectories: vec![Trajectory::new(times, coeffs)?],
    };

    let basis_path = cli.out.join("pod_basis.json");
    let basis_file = PodBasisFile {
        mean: basis.mean,
        modes: basis.modes,
        singular_values: basis.singular_values,
        energy_ratio: basis.energy_ratio,
    };
    fs::write(
        &basis_path,
        format!("{}\n", serde_json::to_string_pretty(&basis_file)?),
    )?;

    let coeff_path = cli.out.join("pod_coefficients.csv");
    let mut file = create_file(&coeff_path)?;
    write_trajectory_csv(&mut file, &coeff_data)?;
    file.flush()?;

    let config = crate::load_config(cli)?;
    let mut manifest = RunManifest::new("pod", effective_seed(cli, config.as_ref()));
    manifest.add_input(&args.snapshots)?;
    manifest.add_input(&meta_path)?;
    manifest.add_output(&basis_path)?;
    manifest.add_output(&coeff_path)?;
    manifest.write(&cli.out)?;
    println!(
        "kept {} of {} modes, energy ratio {:.6}",
        args.rank, max_rank, basis_file.energy_ratio
    );
    Ok(())
}
