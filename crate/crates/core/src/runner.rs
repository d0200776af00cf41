//! Batch front end: single runs, A/B comparisons and parameter sweeps, with
//! report files written once all arms have finished.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::thread;

use thiserror::Error;

use crate::config::{ConfigError, ConfigSource, ScenarioConfig};
use crate::kpi::{compare, DeltaTable, KpiError, KpiReport};
use crate::sim::{simulate, SimError, SimOutput};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime contract violation: {0}")]
    Contract(SimError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => RunError::Config(c),
            other => RunError::Contract(other),
        }
    }
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Kpi(_) => 2,
            RunError::Contract(_) => 3,
            RunError::Io { .. } => 1,
        }
    }
}

/// Runs independent configurations on scoped threads, preserving order.
pub fn run_parallel(cfgs: &[ScenarioConfig], tracing: bool) -> Result<Vec<SimOutput>, RunError> {
    let results: Vec<Result<SimOutput, SimError>> = thread::scope(|s| {
        let handles: Vec<_> = cfgs.iter().map(|c| s.spawn(move || simulate(c, tracing))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    results.into_iter().map(|r| r.map_err(RunError::from)).collect()
}

fn write(path: PathBuf, body: &str) -> Result<PathBuf, RunError> {
    fs::write(&path, body).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn ensure_dir(out: &Path) -> Result<(), RunError> {
    fs::create_dir_all(out).map_err(|source| RunError::Io {
        path: out.to_path_buf(),
        source,
    })
}

/// Output of [`run`].
#[derive(Debug)]
pub struct RunResult {
    pub output: SimOutput,
    pub files: Vec<PathBuf>,
}

/// Builds the scenario, runs it and writes `<name>.kpi.csv` plus
/// `<name>.trace.log` when tracing.
pub fn run(src: &ConfigSource, overrides: &[(String, String)], tracing: bool, out: &Path) -> Result<RunResult, RunError> {
    let cfg = src.build(overrides)?;
    let output = simulate(&cfg, tracing)?;
    ensure_dir(out)?;
    let mut files = vec![write(out.join(format!("{}.kpi.csv", cfg.name)), &output.report.to_csv())?];
    if tracing {
        files.push(write(out.join(format!("{}.trace.log", cfg.name)), &output.trace.to_log())?);
    }
    Ok(RunResult { output, files })
}

/// Output of [`compare_arms`].
#[derive(Debug)]
pub struct CompareResult {
    pub table: DeltaTable,
    pub before: KpiReport,
    pub after: KpiReport,
    pub files: Vec<PathBuf>,
}

/// Runs arm A (`base` then `a`) and arm B (`base` then `b`) and writes
/// `<name>.compare.csv` and `<name>.compare.txt`. Both arms must keep the
/// same seed and duration.
pub fn compare_arms(
    src: &ConfigSource,
    base: &[(String, String)],
    a: &[(String, String)],
    b: &[(String, String)],
    out: &Path,
) -> Result<CompareResult, RunError> {
    let arm = |extra: &[(String, String)]| {
        let mut all = base.to_vec();
        all.extend_from_slice(extra);
        src.build(&all)
    };
    let (ca, cb) = (arm(a)?, arm(b)?);
    if ca.seed != cb.seed || ca.duration_s != cb.duration_s || ca.population != cb.population {
        return Err(ConfigError::new("top-level", "compare arms must share seed, duration and population").into());
    }
    let mut outputs = run_parallel(&[ca.clone(), cb], false)?.into_iter();
    let before = outputs.next().expect("two arms").report;
    let after = outputs.next().expect("two arms").report;
    let table = compare(&before, &after)?;
    ensure_dir(out)?;
    let files = vec![
        write(out.join(format!("{}.compare.csv", ca.name)), &table.to_csv())?,
        write(
            out.join(format!("{}.compare.txt", ca.name)),
            &table.to_text(&format!("{}: A -> B", ca.name)),
        )?,
    ];
    Ok(CompareResult {
        table,
        before,
        after,
        files,
    })
}

/// Output of [`sweep`].
#[derive(Debug)]
pub struct SweepResult {
    pub runs: Vec<(String, KpiReport)>,
    pub files: Vec<PathBuf>,
}

/// One run per value of `param`, all on the configured seed. Writes
/// `<name>.sweep.csv` with columns `param_value,kpi,value`.
pub fn sweep(
    src: &ConfigSource,
    base: &[(String, String)],
    param: &str,
    values: &[String],
    out: &Path,
) -> Result<SweepResult, RunError> {
    if values.is_empty() {
        return Err(ConfigError::new("sweep", format!("no values given for `{param}`")).into());
    }
    let cfgs = values
        .iter()
        .map(|v| {
            let mut all = base.to_vec();
            all.push((param.to_string(), v.clone()));
            src.build(&all)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = run_parallel(&cfgs, false)?;
    let runs: Vec<(String, KpiReport)> = values.iter().cloned().zip(outputs.into_iter().map(|o| o.report)).collect();
    ensure_dir(out)?;
    let file = write(out.join(format!("{}.sweep.csv", cfgs[0].name)), &sweep_csv(&runs))?;
    Ok(SweepResult { runs, files: vec![file] })
}

pub fn sweep_csv(runs: &[(String, KpiReport)]) -> String {
    let mut csv = String::from("param_value,kpi,value\n");
    for (value, report) in runs {
        for line in report.to_csv().lines().skip(1) {
            csv.push_str(value);
            csv.push(',');
            csv.push_str(line);
            csv.push('\n');
        }
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ConfigSource {
        ConfigSource::parse("population = 50\nduration_s = 600.0\n").unwrap()
    }

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn empty_sweep_is_a_config_error() {
        let dir = std::env::temp_dir();
        let e = sweep(&small(), &[], "fach.tb_count", &[], &dir).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_sweep_parameter_is_a_config_error() {
        let dir = std::env::temp_dir();
        let e = sweep(&small(), &[], "fach.nonsense", &["1".into()], &dir).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("fach"));
    }

    #[test]
    fn arms_must_share_the_seed() {
        let dir = std::env::temp_dir();
        let e = compare_arms(&small(), &[], &[ov("seed", "1")], &[ov("seed", "2")], &dir).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn sweep_csv_is_keyed_by_value() {
        let cfg = small().build(&[]).unwrap();
        let r = simulate(&cfg, false).unwrap().report;
        let csv = sweep_csv(&[("1".into(), r.clone()), ("2".into(), r)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("param_value,kpi,value"));
        assert!(lines.next().unwrap().starts_with("1,rrc_connection_attempts,"));
        assert!(csv.lines().any(|l| l.starts_with("2,ps_sessions,")));
    }
}
