//! Spectrum reports for saved checkpoints.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use koopman_core::vi::sample_posterior;

use crate::manifest::RunManifest;
use crate::{create_file, effective_seed, load_checkpoint, Checkpoint, Cli, CliError};

#[derive(Args, Debug)]
pub struct EigenArgs {
    /// Model or posterior checkpoint.
    pub checkpoint: PathBuf,
    /// Spectrum draws when the checkpoint is a posterior.
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
}

pub fn run(cli: &Cli, args: &EigenArgs) -> Result<(), CliError> {
    let config = crate::load_config(cli)?;
    let seed = effective_seed(cli, config.as_ref());
    let path = cli.out.join("eigenvalues.csv");
    match load_checkpoint(&args.checkpoint)? {
        Checkpoint::Model(model) => {
            let eigs = model.spectrum()?.sorted();
            let mut file = create_file(&path)?;
            writeln!(file, "re,im")?;
            for v in &eigs {
                writeln!(file, "{},{}", v.re, v.im)?;
            }
            file.flush()?;
            let max_real = eigs.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
            println!("{} eigenvalues, max real part {max_real:.6}", eigs.len());
        }
        Checkpoint::Posterior(q) => {
            if args.draws == 0 {
                return Err(CliError::Usage("--draws must be at least 1".into()));
            }
            let draws = sample_posterior(&q, args.draws, seed);
            let latent_dim = q.template().latent_dim();
            let mut mean = vec![(0.0, 0.0); latent_dim];
            let mut file = create_file(&path)?;
            writeln!(file, "draw,re,im")?;
            for (i, draw) in draws.iter().enumerate() {
                let eigs = draw.model.spectrum()?.sorted();
                for (k, v) in eigs.iter().enumerate() {
                    mean[k].0 += v.re;
                    mean[k].1 += v.im;
                    writeln!(file, "{i},{},{}", v.re, v.im)?;
                }
            }
            for (re, im) in &mean {
                writeln!(
                    file,
                    "mean,{},{}",
                    re / args.draws as f64,
                    im / args.draws as f64
                )?;
            }
            file.flush()?;
            println!("wrote {} spectrum draws and their mean", args.draws);
        }
    }
    let mut manifest = RunManifest::new("eigen", seed);
    if let Some(config) = &config {
        manifest.config = Some(serde_json::to_value(config)?);
    }
    manifest.add_input(&args.checkpoint)?;
    manifest.add_output(&path)?;
    manifest.write(&cli.out)
}
