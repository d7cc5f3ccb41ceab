use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synthtilt::mechanisms::MechanismKind;
use synthtilt::pipeline::{self, DeltaPost, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(
    name = "synthtilt",
    version,
    about = "Post-process synthetic tabular data toward privately measured statistics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Privatize the workload answers on the real data.
    Measure(Common),
    /// Project the noisy answers onto answers consistent with the synthetic support.
    Denoise(Common),
    /// Fit the dual tilting parameters.
    Fit(Common),
    /// Draw the post-processed dataset.
    Resample(Common),
    /// Score the synthetic and post-processed data against the real data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Post-processed CSV to score (default: <output_dir>/post.csv).
        #[arg(long)]
        post: Option<PathBuf>,
    },
    /// Run every stage in order.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Seeds the mechanism, the optimizer and the resampler.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: Option<MechanismKind>,
    #[arg(long = "eps-post")]
    eps_post: Option<f64>,
}

fn parse_mechanism(s: &str) -> Result<MechanismKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "laplace" => Ok(MechanismKind::Laplace),
        "gaussian" => Ok(MechanismKind::Gaussian),
        _ => Err(format!(
            "unknown mechanism `{s}` (expected laplace or gaussian)"
        )),
    }
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = PipelineConfig::from_file(&self.config)?;
        if let Some(g) = self.gamma {
            cfg.projector.gamma = g;
        }
        if let Some(e) = self.epochs {
            cfg.projector.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.projector.batch_size = b;
        }
        if let Some(s) = self.seed {
            cfg.mechanism.seed = s;
            cfg.projector.seed = s;
            cfg.resample.seed = s;
        }
        if let Some(m) = self.mechanism {
            if m != cfg.mechanism.kind {
                cfg.mechanism.kind = m;
                // a δ rule written for the other mechanism no longer applies
                if !matches!(cfg.mechanism.delta_post, Some(DeltaPost::Value(_))) {
                    cfg.mechanism.delta_post = None;
                }
                cfg.denoise.mode = None;
            }
        }
        if let Some(e) = self.eps_post {
            cfg.mechanism.eps_post = e;
        }
        Ok(cfg)
    }
}

fn print<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => log::warn!("could not render summary: {e}"),
    }
}

fn dispatch(cmd: &Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Measure(c) => {
            let m = pipeline::cmd_measure(&c.load()?)?;
            print(&m.mechanism);
        }
        Command::Denoise(c) => {
            let d = pipeline::cmd_denoise(&c.load()?)?;
            if let Some(w) = &d.warning {
                log::warn!("{w}");
            }
            print(&serde_json::json!({
                "objective_value": d.objective_value,
                "iterations": d.iterations,
                "converged": d.converged,
            }));
        }
        Command::Fit(c) => {
            let s = pipeline::cmd_fit(&c.load()?)?;
            print(&serde_json::json!({
                "epochs_run": s.epochs_run,
                "converged": s.converged,
                "final_objective": s.objective_trace.last(),
            }));
        }
        Command::Resample(c) => print(&pipeline::cmd_resample(&c.load()?)?),
        Command::Evaluate { common, post } => {
            print(&pipeline::cmd_evaluate(&common.load()?, post.as_deref())?)
        }
        Command::Run(c) => {
            let s = pipeline::cmd_run(&c.load()?)?;
            print(&s.metrics);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
