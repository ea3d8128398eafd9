use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use qddlab::engine::SweepVariable;

use crate::CliError;

/// Bumped whenever an output layout changes.
pub const SCHEMA_REVISION: &str = "qddlab-output/1";

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `log10 D` against the swept value, with max-deviation error bars and a
/// dotted line where `J tau = beta tau`.
pub fn sweep_script(
    variable: SweepVariable,
    series: &[(String, PathBuf)],
    crossing: Option<f64>,
) -> String {
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    writeln!(s, "set key left top").unwrap();
    match variable {
        SweepVariable::N => {
            writeln!(s, "set xlabel 'n'").unwrap();
            writeln!(s, "set logscale y").unwrap();
        }
        v => {
            writeln!(s, "set xlabel '{} tau'", v.name()).unwrap();
            writeln!(s, "set logscale xy").unwrap();
            writeln!(s, "set format x '10^{{%L}}'").unwrap();
        }
    }
    writeln!(s, "set ylabel 'D'").unwrap();
    writeln!(s, "set format y '10^{{%L}}'").unwrap();
    if let Some(x) = crossing {
        writeln!(
            s,
            "set arrow from {x:e}, graph 0 to {x:e}, graph 1 nohead dashtype 3"
        )
        .unwrap();
    }
    let plots: Vec<String> = series
        .iter()
        .map(|(title, path)| {
            format!(
                "'{}' using 1:2:($2-$4 > 0 ? $2-$4 : $2/10):($2+$4) with yerrorlines title '{}'",
                file_name(path),
                title
            )
        })
        .collect();
    writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
    s
}

/// Mean distance against physical pulse count, one curve per scheme.
pub fn comparison_script(csv: &Path, schemes: &[String]) -> String {
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set xlabel 'pulses'").unwrap();
    writeln!(s, "set ylabel 'D'").unwrap();
    writeln!(s, "set logscale y").unwrap();
    writeln!(s, "set format y '10^{{%L}}'").unwrap();
    writeln!(s, "set key right top").unwrap();
    let plots: Vec<String> = schemes
        .iter()
        .map(|name| {
            format!(
                "'{}' every ::1 using (strcol(1) eq '{name}' ? $4 : NaN):5 with linespoints title '{name}'",
                file_name(csv)
            )
        })
        .collect();
    writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
    s
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_revision: &'static str,
    pub version: &'static str,
    pub command: String,
    pub arguments: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub digits: u32,
    pub jobs: Option<usize>,
    pub outputs: Vec<String>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    started_unix: u64,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn finish(
        self,
        config: serde_json::Value,
        seed: Option<u64>,
        digits: u32,
        jobs: Option<usize>,
        outputs: &[PathBuf],
    ) -> Manifest {
        Manifest {
            schema_revision: SCHEMA_REVISION,
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            arguments: std::env::args().skip(1).collect(),
            config,
            seed,
            digits,
            jobs,
            outputs: outputs.iter().map(|p| file_name(p)).collect(),
            started_unix_seconds: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, &text)
}
