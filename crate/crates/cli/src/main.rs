use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sigload::config::{parse_override, parse_override_list};
use sigload::runner::{self, RunError};
use sigload::{ConfigError, ConfigSource};

/// Deterministic simulator of RRC signaling load in a UMTS network.
#[derive(Debug, Parser)]
#[command(name = "sigload", version)]
struct Cli {
    /// Directory for reports and traces.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Device mix file replacing the configured profiles.
    #[arg(long, global = true)]
    mix: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write `<name>.kpi.csv`.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write `<name>.trace.log`.
        #[arg(long)]
        trace: bool,
        /// `key=value`, applied after the file is parsed.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run two arms on the same seed and write a delta table.
    Compare {
        config: PathBuf,
        /// Comma-separated `key=value` list for arm A.
        #[arg(long, default_value = "")]
        a: String,
        /// Comma-separated `key=value` list for arm B.
        #[arg(long, default_value = "")]
        b: String,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run once per value of a parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, default_value = "")]
        values: String,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn read(path: &Path, section: &str) -> Result<String, RunError> {
    fs::read_to_string(path)
        .map_err(|e| ConfigError::new(section, format!("cannot read {}: {e}", path.display())).into())
}

fn load(config: &Path, mix: Option<&Path>) -> Result<ConfigSource, RunError> {
    let mut src = ConfigSource::parse(&read(config, "top-level")?)?;
    if let Some(mix) = mix {
        src = src.with_mix(&read(mix, "profiles")?)?;
    }
    Ok(src)
}

fn overrides(list: &[String]) -> Result<Vec<(String, String)>, RunError> {
    Ok(list.iter().map(|s| parse_override(s)).collect::<Result<_, _>>()?)
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>, RunError> {
    let mix = cli.mix.as_deref();
    match cli.command {
        Command::Run {
            config,
            seed,
            trace,
            overrides: ov,
        } => {
            let src = load(&config, mix)?;
            let mut ov = overrides(&ov)?;
            if let Some(seed) = seed {
                ov.push(("seed".into(), seed.to_string()));
            }
            Ok(runner::run(&src, &ov, trace, &cli.out)?.files)
        }
        Command::Compare {
            config,
            a,
            b,
            overrides: ov,
        } => {
            let src = load(&config, mix)?;
            let (a, b) = (parse_override_list(&a)?, parse_override_list(&b)?);
            let result = runner::compare_arms(&src, &overrides(&ov)?, &a, &b, &cli.out)?;
            Ok(result.files)
        }
        Command::Sweep {
            config,
            param,
            values,
            overrides: ov,
        } => {
            let src = load(&config, mix)?;
            let values: Vec<String> = values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(String::from)
                .collect();
            Ok(runner::sweep(&src, &overrides(&ov)?, &param, &values, &cli.out)?.files)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
