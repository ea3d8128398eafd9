//! JSON run configuration. Real-valued fields are decimal strings so that
//! they keep full precision.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qddlab::engine::{ExperimentConfig, SequenceSpec, Sweep, SweepVariable};
use qddlab::hpmath::{Precision, DEFAULT_DIGITS};
use qddlab::model::{BathSpec, CouplingParams, DEFAULT_BATH_QUBITS};
use qddlab::sequences::{PulseAxis, PulseSequence, Scheme};

use crate::CliError;

pub const DIGITS_ENV: &str = "QDDLAB_DIGITS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Orders {
    One(usize),
    Many(Vec<usize>),
}

impl Orders {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            Orders::One(n) => vec![*n],
            Orders::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
}

fn default_per_decade() -> usize {
    7
}

/// `scheme` is one of the built-in names or `external`, in which case
/// `sequence_file` (a `time,axis` CSV) and `total_time` describe the schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default = "default_orders")]
    pub n: Orders,
    #[serde(default = "default_axis")]
    pub axis: PulseAxis,
    #[serde(default = "default_one")]
    pub tau: String,
    #[serde(rename = "J", default = "default_coupling")]
    pub j: String,
    #[serde(default = "default_coupling")]
    pub beta: String,
    #[serde(default = "default_bath")]
    pub bath_qubits: usize,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// compare only
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schemes: Option<Vec<Scheme>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_time: Option<String>,
}

fn default_scheme() -> String {
    "qdd".into()
}
fn default_orders() -> Orders {
    Orders::One(1)
}
fn default_axis() -> PulseAxis {
    PulseAxis::X
}
fn default_one() -> String {
    "1".into()
}
fn default_coupling() -> String {
    "1e-6".into()
}
fn default_bath() -> usize {
    DEFAULT_BATH_QUBITS
}
fn default_realizations() -> usize {
    10
}
fn default_seed() -> u64 {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub digits: Option<u32>,
}

/// Flag, then config file, then environment, then the built-in default.
pub fn resolve_digits(flag: Option<u32>, config: Option<u32>) -> Result<u32, CliError> {
    if let Some(d) = flag.or(config) {
        return Ok(d);
    }
    match std::env::var(DIGITS_ENV) {
        Ok(text) => text.trim().parse().map_err(|_| {
            CliError::Usage(format!("{DIGITS_ENV}={text:?} is not a digit count"))
        }),
        Err(_) => Ok(DEFAULT_DIGITS),
    }
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text).map_err(|e| match e {
        CliError::Config { path: p, message } => CliError::Config {
            path: format!("{}: {}", path.display(), p),
            message,
        },
        other => other,
    })
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn field_error(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn real(prec: Precision, path: &str, text: &str) -> Result<rug::Float, CliError> {
    prec.parse(text)
        .map_err(|e| field_error(path, e.to_string()))
}

/// Fully resolved settings for one run.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub precision: Precision,
    pub scheme: Option<Scheme>,
    pub external: Option<PulseSequence>,
    pub params: CouplingParams,
    pub bath: BathSpec,
    pub sweep: Option<Sweep>,
}

impl RunConfig {
    pub fn resolve(mut self, overrides: Overrides, base_dir: &Path) -> Result<Resolved, CliError> {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        let digits = resolve_digits(overrides.digits, self.digits)?;
        self.digits = Some(digits);
        let precision =
            Precision::new(digits).map_err(|e| field_error("digits", e.to_string()))?;

        let (scheme, external) = if self.scheme.eq_ignore_ascii_case("external") {
            let file = self
                .sequence_file
                .as_ref()
                .ok_or_else(|| field_error("sequence_file", "required for scheme \"external\""))?;
            let file = base_dir.join(file);
            let text = std::fs::read_to_string(&file).map_err(|source| CliError::Io {
                path: file.clone(),
                source,
            })?;
            let total = match &self.total_time {
                Some(t) => Some(real(precision, "total_time", t)?),
                None => None,
            };
            (None, Some(crate::import_sequence(&text, total, precision)?))
        } else {
            let scheme: Scheme = self
                .scheme
                .parse()
                .map_err(|e: qddlab::sequences::SequenceError| field_error("scheme", e.to_string()))?;
            (Some(scheme), None)
        };

        let params = CouplingParams::new(
            real(precision, "J", &self.j)?,
            real(precision, "beta", &self.beta)?,
            real(precision, "tau", &self.tau)?,
        )
        .map_err(|e| field_error("J/beta/tau", e.to_string()))?;
        let bath = BathSpec::new(self.bath_qubits, self.seed)
            .map_err(|e| field_error("bath_qubits", e.to_string()))?;

        let sweep = match &self.sweep {
            None => None,
            Some(s) => Some(resolve_sweep(s, precision)?),
        };
        if self.realizations == 0 {
            return Err(field_error("realizations", "must be at least 1"));
        }
        Ok(Resolved {
            config: self,
            precision,
            scheme,
            external,
            params,
            bath,
            sweep,
        })
    }
}

fn resolve_sweep(s: &SweepConfig, prec: Precision) -> Result<Sweep, CliError> {
    match (&s.grid, &s.from, &s.to) {
        (Some(grid), None, None) => {
            if grid.is_empty() {
                return Err(field_error("sweep.grid", "grid is empty"));
            }
            let grid = grid
                .iter()
                .enumerate()
                .map(|(i, v)| real(prec, &format!("sweep.grid[{i}]"), v))
                .collect::<Result<_, _>>()?;
            Ok(Sweep {
                variable: s.variable,
                grid,
            })
        }
        (None, Some(from), Some(to)) => {
            let from = real(prec, "sweep.from", from)?;
            let to = real(prec, "sweep.to", to)?;
            Sweep::log_grid(s.variable, &from, &to, s.per_decade, prec)
                .map_err(|e| field_error("sweep", e.to_string()))
        }
        _ => Err(field_error(
            "sweep",
            "give either \"grid\" or both \"from\" and \"to\"",
        )),
    }
}

impl Resolved {
    pub fn orders(&self) -> Vec<usize> {
        self.config.n.to_vec()
    }

    /// Experiment for order `n` (ignored for external sequences).
    pub fn experiment(&self, n: usize) -> ExperimentConfig {
        let sequence = match (&self.external, self.scheme) {
            (Some(seq), _) => SequenceSpec::External(seq.clone()),
            (None, Some(scheme)) => SequenceSpec::Scheme {
                scheme,
                m: self.config.m.unwrap_or(n),
                n,
                axis: self.config.axis,
            },
            (None, None) => unreachable!("resolve sets one of the two"),
        };
        ExperimentConfig {
            sequence,
            params: self.params.clone(),
            bath: self.bath,
            realizations: self.config.realizations,
            precision: self.precision,
            sweep: self.sweep.clone(),
        }
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.scheme, "qdd");
        assert_eq!(c.realizations, 10);
        assert_eq!(c.bath_qubits, 4);
        assert_eq!(c.j, "1e-6");
    }

    #[test]
    fn schema_errors_carry_the_path() {
        let err = parse(r#"{"sweep": {"variable": "J", "grid": ["1e-7", 1e-6]}}"#).unwrap_err();
        match err {
            CliError::Config { path, .. } => assert_eq!(path, "sweep.grid[1]"),
            other => panic!("{other:?}"),
        }
        let err = parse(r#"{"bogus": 1}"#).unwrap_err();
        assert!(matches!(err, CliError::Config { .. }));
        let err = parse(r#"{"J": 0.5}"#).unwrap_err();
        assert!(matches!(err, CliError::Config { ref path, .. } if path == "J"));
    }

    #[test]
    fn orders_accept_one_or_many() {
        assert_eq!(parse(r#"{"n": 3}"#).unwrap().n.to_vec(), vec![3]);
        assert_eq!(parse(r#"{"n": [0, 2]}"#).unwrap().n.to_vec(), vec![0, 2]);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let c = parse(r#"{"sweep": {"variable": "J", "grid": []}}"#).unwrap();
        assert!(c.resolve(Overrides::default(), Path::new(".")).is_err());
    }

    #[test]
    fn overrides_win() {
        let c = parse(r#"{"seed": 5, "digits": 40}"#).unwrap();
        let r = c
            .resolve(
                Overrides {
                    seed: Some(9),
                    digits: Some(30),
                },
                Path::new("."),
            )
            .unwrap();
        assert_eq!(r.bath.seed, 9);
        assert_eq!(r.precision.digits(), 30);
    }

    #[test]
    fn range_sweep() {
        let c = parse(
            r#"{"digits": 30, "sweep": {"variable": "beta", "from": "1e-6", "to": "1e-4", "per_decade": 2}}"#,
        )
        .unwrap();
        let r = c.resolve(Overrides::default(), Path::new(".")).unwrap();
        assert_eq!(r.sweep.unwrap().grid.len(), 5);
    }
}
