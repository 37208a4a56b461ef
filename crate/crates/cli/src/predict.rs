//! Forecasts from saved checkpoints.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use koopman_core::uncertainty::{
    predict_map, predict_posterior_diff, predict_posterior_recurrent, PredictConfig,
};

use crate::config::Form;
use crate::manifest::RunManifest;
use crate::{
    create_file, effective_seed, load_checkpoint, parse_vector, Checkpoint, Cli, CliError,
};

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model or posterior checkpoint.
    pub checkpoint: PathBuf,
    /// Initial condition "x1,x2,...".
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    /// Forecast horizon.
    #[arg(long)]
    pub t_max: f64,
    /// Output interval.
    #[arg(long)]
    pub dt: f64,
    /// Posterior draws.
    #[arg(long, default_value_t = 100)]
    pub n_mc: usize,
    /// Noise paths per posterior draw.
    #[arg(long, default_value_t = 10)]
    pub m_mc: usize,
    /// Dynamics form for posterior propagation; defaults to the config's
    /// form when --config is given.
    #[arg(long, value_enum)]
    pub form: Option<Form>,
    /// Add reconstruction noise to the decoded states.
    #[arg(long)]
    pub with_noise: bool,
}

pub fn run(cli: &Cli, args: &PredictArgs) -> Result<(), CliError> {
    let config = crate::load_config(cli)?;
    let seed = effective_seed(cli, config.as_ref());
    if !(args.dt.is_finite() && args.dt > 0.0) {
        return Err(CliError::Usage("--dt must be positive".into()));
    }
    if !(args.t_max.is_finite() && args.t_max >= 0.0) {
        return Err(CliError::Usage("--t-max must be nonnegative".into()));
    }
    let x0 = parse_vector(&args.x0)?;
    let steps = (args.t_max / args.dt + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * args.dt).collect();

    let path = cli.out.join("prediction.csv");
    match load_checkpoint(&args.checkpoint)? {
        Checkpoint::Model(model) => {
            check_dim(x0.len(), model.state_dim())?;
            let traj = predict_map(&model, &x0, &times)?;
            let n = traj.cols();
            let mut file = create_file(&path)?;
            let mut header = vec!["t".to_string()];
            header.extend((1..=n).map(|j| format!("x_{j}")));
            writeln!(file, "{}", header.join(","))?;
            for (i, t) in times.iter().enumerate() {
                let mut fields = vec![t.to_string()];
                for j in 0..n {
                    fields.push(traj.get(i, j).to_string());
                }
                writeln!(file, "{}", fields.join(","))?;
            }
            file.flush()?;
            println!("wrote deterministic forecast over {} times", times.len());
        }
        Checkpoint::Posterior(q) => {
            check_dim(x0.len(), q.template().state_dim())?;
            if args.n_mc == 0 || args.m_mc == 0 {
                return Err(CliError::Usage(
                    "--n-mc and --m-mc must be at least 1".into(),
                ));
            }
            let form = args
                .form
                .or(config.as_ref().map(|c| c.form))
                .ok_or_else(|| {
                    CliError::Usage(
                        "posterior forecasts need --form diff|recurrent (or a config file)".into(),
                    )
                })?;
            let predict_config = PredictConfig {
                posterior_draws: args.n_mc,
                noise_draws: args.m_mc,
                observation_noise: args.with_noise,
                seed,
            };
            let ensemble = match form {
                Form::Diff => predict_posterior_diff(&q, &x0, &times, &predict_config)?,
                Form::Recurrent => predict_posterior_recurrent(&q, &x0, &times, &predict_config)?,
            };
            let summary = ensemble.summarize();
            let n = summary.mean.cols();
            let mut file = create_file(&path)?;
            let mut header = vec!["t".to_string()];
            header.extend((1..=n).map(|j| format!("mean_{j}")));
            header.extend((1..=n).map(|j| format!("std_{j}")));
            writeln!(file, "{}", header.join(","))?;
            for (i, t) in summary.times.iter().enumerate() {
                let mut fields = vec![t.to_string()];
                for j in 0..n {
                    fields.push(summary.mean.get(i, j).to_string());
                }
                for j in 0..n {
                    fields.push(summary.std.get(i, j).to_string());
                }
                writeln!(file, "{}", fields.join(","))?;
            }
            file.flush()?;
            println!(
                "wrote posterior forecast from {} trajectories over {} times",
                ensemble.trajectories.len(),
                times.len()
            );
        }
    }

    let mut manifest = RunManifest::new("predict", seed);
    if let Some(config) = &config {
        manifest.config = Some(serde_json::to_value(config)?);
    }
    manifest.add_input(&args.checkpoint)?;
    manifest.add_output(&path)?;
    manifest.write(&cli.out)
}

fn check_dim(got: usize, want: usize) -> Result<(), CliError> {
    if got != want {
        return Err(CliError::Usage(format!(
            "--x0 has {got} components, the checkpoint expects {want}"
        )));
    }
    Ok(())
}
