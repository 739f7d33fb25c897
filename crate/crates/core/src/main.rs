use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dimer::cli::{self, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "dimer",
    version,
    about = "Truncated-Wigner simulation of a pumped, damped Bose-Hubbard dimer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write timeseries.csv and summary.txt.
    Run(Options),
    /// Steady-state tables for both configurations at chi = 1e-3 and 1e-2.
    Tables(Options),
    /// Compare a chi = 0 ensemble with the exact linear solution.
    OracleCheck(Options),
    /// Print the closed-form and mean-field fixed points.
    Steady(Options),
}

#[derive(Args)]
struct Options {
    /// Flat key=value file; flags given on the command line take precedence.
    #[arg(long = "config-file")]
    config_file: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    chi: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    tunnel: Option<String>,
    /// A: loss at well 2, B: loss at well 1.
    #[arg(long, allow_hyphen_values = true)]
    config: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    tmax: Option<String>,
    /// Integration steps between recorded outputs.
    #[arg(long, allow_hyphen_values = true)]
    stride: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    ntraj: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    workers: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    outdir: Option<String>,
    /// Angle grid spacing in degrees.
    #[arg(long = "angle-res", allow_hyphen_values = true)]
    angle_res: Option<String>,
    #[arg(long = "window-start", allow_hyphen_values = true)]
    window_start: Option<String>,
    #[arg(long = "window-end", allow_hyphen_values = true)]
    window_end: Option<String>,
    #[arg(long = "noise-scale", hide = true, allow_hyphen_values = true)]
    noise_scale: Option<String>,
}

impl Options {
    fn into_config(self, default_ntraj: Option<u64>) -> Result<RunConfig, CliError> {
        let pairs = [
            ("chi", self.chi),
            ("epsilon", self.epsilon),
            ("gamma", self.gamma),
            ("tunnel", self.tunnel),
            ("config", self.config),
            ("dt", self.dt),
            ("tmax", self.tmax),
            ("stride", self.stride),
            ("ntraj", self.ntraj),
            ("seed", self.seed),
            ("workers", self.workers),
            ("outdir", self.outdir),
            ("angle-res", self.angle_res),
            ("window-start", self.window_start),
            ("window-end", self.window_end),
            ("noise-scale", self.noise_scale),
        ];
        let mut config = RunConfig::default();
        if let Some(ntraj) = default_ntraj {
            config.n_traj = ntraj;
        }
        if let Some(path) = &self.config_file {
            config.apply_file(path)?;
        }
        for (key, value) in pairs {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(opts) => {
            let config = opts.into_config(None)?;
            let out = cli::cmd_run(&config)?;
            let e = &out.steady.estimate;
            println!(
                "wrote {} (n1={:.4}, n2={:.4}, rejected={})",
                config.outdir.display(),
                e.n1,
                e.n2,
                out.report.rejected
            );
        }
        Command::Tables(opts) => {
            let config = opts.into_config(Some(300_000))?;
            let rows = cli::cmd_reproduce_tables(&config)?;
            print!("{}", cli::tables_text(&rows));
        }
        Command::OracleCheck(opts) => {
            let config = opts.into_config(None)?;
            cli::cmd_oracle_check(&config)?;
        }
        Command::Steady(opts) => {
            let config = opts.into_config(None)?;
            print!("{}", cli::cmd_steady(&config)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
