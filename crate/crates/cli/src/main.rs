use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qteleport_cli::{cmd_audit, cmd_pulses, cmd_sweep, cmd_teleport, CliError, RunConfig, SweepRange, SweepSpec};

#[derive(Parser)]
#[command(name = "qteleport", version, about = "Cavity-decay atomic-state teleportation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set detection.efficiency=0.5`.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    jobs: usize,
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Analytic,
    Trajectory,
}

#[derive(Subcommand)]
enum Command {
    /// Photon modes and their overlap 1 - delta.
    Pulses,
    /// One teleportation run.
    Teleport {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Trajectory-mode sample count.
        #[arg(long)]
        n: Option<usize>,
        /// Ideal sources: matched modes, certain emission.
        #[arg(long)]
        ideal: bool,
    },
    /// Sweep one configuration key.
    Sweep {
        /// Dotted configuration path; falls back to the `[sweep]` section.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// `start:stop:count`.
        #[arg(long)]
        range: Option<String>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Closed-form fidelity versus the two-photon calculation.
    Audit,
}

fn parse_range(s: &str) -> Result<SweepRange, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Config(format!("range `{s}` is not start:stop:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(SweepRange {
        start: parts[0].trim().parse().map_err(|_| bad())?,
        stop: parts[1].trim().parse().map_err(|_| bad())?,
        count: parts[2].trim().parse().map_err(|_| bad())?,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut sets = cli.sets.clone();
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Command::Teleport { mode, n, ideal } = &cli.command {
        if let Some(m) = mode {
            let label = match m {
                Mode::Analytic => "analytic",
                Mode::Trajectory => "trajectory",
            };
            sets.push(format!("run.mode=\"{label}\""));
        }
        if let Some(n) = n {
            sets.push(format!("run.samples={n}"));
        }
        if *ideal {
            sets.push("run.force_mode_match=true".into());
        }
    }
    let config = RunConfig::load(cli.config.as_deref())?.with_overrides(&sets)?;

    match cli.command {
        Command::Pulses => {
            let r = cmd_pulses(&config, &cli.out)?;
            println!("one_minus_delta = {:.6}", r.one_minus_delta);
        }
        Command::Teleport { .. } => {
            let r = cmd_teleport(&config, &cli.out)?;
            print!("{}", r.summary_toml);
        }
        Command::Sweep { param, values, range, replications } => {
            let mut spec = config.sweep.clone().unwrap_or(SweepSpec {
                parameter: String::new(),
                values: Vec::new(),
                range: None,
                replications: 1,
            });
            if let Some(p) = param {
                spec.parameter = p;
            }
            if !values.is_empty() || range.is_some() {
                spec.values = values;
                spec.range = range.as_deref().map(parse_range).transpose()?;
            }
            if let Some(r) = replications {
                spec.replications = r;
            }
            if spec.parameter.is_empty() {
                return Err(CliError::Config("sweep needs --param or a [sweep] section".into()));
            }
            let rows = cmd_sweep(&config, &spec, cli.jobs, &cli.out)?;
            println!("{:>14} {:>4} {:>14} {:>14}", "value", "rep", "fidelity", "P(success)");
            for r in rows {
                println!("{:>14.6} {:>4} {:>14.9} {:>14.9}", r.value, r.replicate, r.fidelity, r.success_probability);
            }
        }
        Command::Audit => {
            let r = cmd_audit(&config, &cli.out)?;
            println!("rows = {}", r.rows.len());
            println!("max_abs_deviation = {:.9}", r.max_abs_deviation);
            println!("bound_holds = {}", r.bound_holds);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
