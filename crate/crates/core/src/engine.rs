//! Evolution under pulse sequences and averaged, seeded experiments.
//!
//! Realizations and grid points are independent tasks. With the `parallel`
//! feature they are spread over a rayon pool; without it they run in order.
//! Either way results are gathered by index and reduced sequentially, so the
//! output does not depend on the schedule.

use std::fmt::Write as _;

use rug::ops::NegAssign;

use rug::{Complex, Float};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpmath::{
    exp_i_apply, mat_exp_cost, mat_exp_i, partial_trace_bath, spectral_norm_estimate, to_sci_string, HPMatrix,
    HpError, Precision, StateVector,
};
use crate::model::{
    assemble_hamiltonian, realization, BathSpec, CouplingParams, ModelError, Realization,
};
use crate::sequences::{PulseAxis, PulseSequence, Scheme, SequenceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Math(#[from] HpError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reduced state of realization {0} is not a valid density matrix")]
    InvalidState(u64),
    #[error("grid point {index} (value {value}): {source}")]
    Point {
        index: usize,
        value: String,
        source: Box<EngineError>,
    },
}

/// Applies a Pauli pulse to the system qubit (the most significant tensor factor).
pub fn apply_pulse(psi: &mut StateVector, axis: PulseAxis) {
    let amps = psi.amplitudes_mut();
    let half = amps.len() / 2;
    let (top, bottom) = amps.split_at_mut(half);
    match axis {
        PulseAxis::Identity => {}
        PulseAxis::X => top.swap_with_slice(bottom),
        PulseAxis::Z => bottom.iter_mut().for_each(|z| z.neg_assign()),
        PulseAxis::Y => {
            // [[0, -i], [i, 0]]
            top.swap_with_slice(bottom);
            for z in top.iter_mut() {
                z.mul_i_mut(true);
            }
            for z in bottom.iter_mut() {
                z.mul_i_mut(false);
            }
        }
    }
}

/// How free-evolution propagators are applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    /// One dense `exp(-iHt)` per distinct duration, reused for repeats.
    Cached,
    /// Taylor series of the action on the state, no matrices formed.
    Direct,
    /// Per duration, whichever of the two costs fewer matrix-vector products.
    #[default]
    Auto,
}

fn direct_cost(theta: f64, bits: u32) -> f64 {
    let steps = (theta / 2.0).ceil().max(1.0);
    steps * terms_estimate(theta / steps, bits)
}

fn cached_cost(theta: f64, bits: u32, dim: usize) -> f64 {
    (mat_exp_cost(theta, bits) * dim) as f64
}

fn terms_estimate(theta: f64, bits: u32) -> f64 {
    if theta <= 0.0 {
        return 1.0;
    }
    let target = -(bits as f64) * std::f64::consts::LN_2;
    let mut log_term = 0.0;
    let mut k = 0.0;
    while log_term > target || k <= 2.0 * theta {
        k += 1.0;
        log_term += theta.ln() - f64::ln(k);
    }
    k
}

/// Evolves `psi0` through `seq`: for each interval `U(d tau)`, then its pulse.
pub fn evolve(
    seq: &PulseSequence,
    h: &HPMatrix,
    tau: &Float,
    psi0: &StateVector,
    prec: Precision,
) -> Result<StateVector, EngineError> {
    evolve_with(seq, h, tau, psi0, prec, Propagation::Auto)
}

pub fn evolve_with(
    seq: &PulseSequence,
    h: &HPMatrix,
    tau: &Float,
    psi0: &StateVector,
    prec: Precision,
    mode: Propagation,
) -> Result<StateVector, EngineError> {
    if !h.is_square() || h.rows() != psi0.dim() {
        return Err(HpError::DimensionMismatch(format!(
            "{}x{} Hamiltonian, state of length {}",
            h.rows(),
            h.cols(),
            psi0.dim()
        ))
        .into());
    }
    if psi0.dim() < 2 || !psi0.dim().is_power_of_two() {
        return Err(HpError::BadStateLength(psi0.dim()).into());
    }
    h.check_hermitian(prec)?;

    let durations = seq.distinct_durations();
    let tol = prec.tolerance(10);
    let slot_of = |d: &Float| {
        durations
            .iter()
            .position(|e| Float::with_val(d.prec(), d - e).abs() <= tol)
            .expect("duration was collected")
    };
    let slots: Vec<usize> = seq.intervals().iter().map(slot_of).collect();
    let norm1 = h.norm1_f64();

    // decide per duration whether to build a propagator
    let mut propagators: Vec<Option<HPMatrix>> = Vec::with_capacity(durations.len());
    for (idx, d) in durations.iter().enumerate() {
        let t = Float::with_val(prec.bits(), d * tau);
        let use_matrix = match mode {
            Propagation::Cached => true,
            Propagation::Direct => false,
            Propagation::Auto => {
                let uses = slots.iter().filter(|&&s| s == idx).count() as f64;
                let theta = norm1 * t.to_f64().abs();
                uses * direct_cost(theta, h.bits()) > cached_cost(theta, h.bits(), h.rows()) + uses
            }
        };
        propagators.push(if use_matrix {
            Some(mat_exp_i(h, &t, prec)?)
        } else {
            None
        });
    }

    let mut psi = psi0.clone();
    for ((&slot, d), &pulse) in slots.iter().zip(seq.intervals()).zip(seq.pulses()) {
        psi = match &propagators[slot] {
            Some(u) => u.apply(&psi)?,
            None => {
                let t = Float::with_val(prec.bits(), d * tau);
                exp_i_apply(h, &t, &psi, prec)?
            }
        };
        apply_pulse(&mut psi, pulse);
    }
    Ok(psi)
}

/// Which sequence an experiment runs.
#[derive(Clone, Debug, PartialEq)]
pub enum SequenceSpec {
    Scheme {
        scheme: Scheme,
        m: usize,
        n: usize,
        /// used by UDD only
        axis: PulseAxis,
    },
    External(PulseSequence),
}

impl SequenceSpec {
    pub fn qdd(m: usize, n: usize) -> Self {
        SequenceSpec::Scheme {
            scheme: Scheme::Qdd,
            m,
            n,
            axis: PulseAxis::X,
        }
    }

    pub fn build(&self, prec: Precision) -> Result<PulseSequence, EngineError> {
        match self {
            SequenceSpec::Scheme { n: 0, .. } => Ok(PulseSequence::free(prec)),
            SequenceSpec::Scheme { scheme, m, n, axis } => Ok(scheme.build(*m, *n, *axis, prec)?),
            SequenceSpec::External(seq) => Ok(seq.canonicalize()),
        }
    }

    /// Same scheme at order `n` (and `m = n` for QDD).
    fn with_order(&self, order: usize) -> Result<SequenceSpec, EngineError> {
        match self {
            SequenceSpec::Scheme { scheme, axis, .. } => Ok(SequenceSpec::Scheme {
                scheme: *scheme,
                m: order,
                n: order,
                axis: *axis,
            }),
            SequenceSpec::External(_) => Err(EngineError::Config(
                "an external sequence cannot be swept over n".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepVariable {
    #[serde(rename = "J")]
    J,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "n")]
    N,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::J => "J",
            SweepVariable::Beta => "beta",
            SweepVariable::N => "n",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub grid: Vec<Float>,
}

impl Sweep {
    /// `per_decade` logarithmically spaced points from `from` to `to` inclusive.
    pub fn log_grid(
        variable: SweepVariable,
        from: &Float,
        to: &Float,
        per_decade: usize,
        prec: Precision,
    ) -> Result<Sweep, EngineError> {
        if from.is_zero() || to.is_zero() || from.is_sign_negative() || to < from || per_decade == 0 {
            return Err(EngineError::Config("log grid needs 0 < from <= to".into()));
        }
        let bits = prec.bits();
        let lo = Float::with_val(bits, from.log10_ref());
        let hi = Float::with_val(bits, to.log10_ref());
        let span = Float::with_val(bits, &hi - &lo) * per_decade as u64;
        let steps = span.to_f64().round() as usize;
        let grid = (0..=steps)
            .map(|i| {
                let mut e = Float::with_val(bits, &hi - &lo);
                if steps > 0 {
                    e *= i as u64;
                    e /= steps as u64;
                }
                e += &lo;
                Float::with_val(bits, 10).pow(&e)
            })
            .collect();
        Ok(Sweep { variable, grid })
    }
}

use rug::ops::Pow;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub sequence: SequenceSpec,
    pub params: CouplingParams,
    pub bath: BathSpec,
    pub realizations: usize,
    pub precision: Precision,
    pub sweep: Option<Sweep>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.realizations == 0 {
            return Err(EngineError::Config("realizations must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.grid.is_empty() {
                return Err(EngineError::Config("sweep grid is empty".into()));
            }
            for v in &sweep.grid {
                let ok = match sweep.variable {
                    SweepVariable::J | SweepVariable::Beta => v.is_sign_positive() && !v.is_zero(),
                    SweepVariable::N => v.is_sign_positive() && v.is_integer(),
                };
                if !ok {
                    return Err(EngineError::Config(format!(
                        "grid value {} is not valid for {}",
                        to_sci_string(v, 10),
                        sweep.variable.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Sequence and parameters of each grid point, with the swept value.
    pub fn points(&self) -> Result<Vec<PointSpec>, EngineError> {
        let base_seq = self.sequence.build(self.precision)?;
        let Some(sweep) = &self.sweep else {
            return Ok(vec![PointSpec {
                value: self.default_value(),
                params: self.params.clone(),
                sequence: base_seq,
            }]);
        };
        sweep
            .grid
            .iter()
            .map(|v| {
                let mut params = self.params.clone();
                let sequence = match sweep.variable {
                    SweepVariable::J => {
                        params.j = v.clone();
                        base_seq.clone()
                    }
                    SweepVariable::Beta => {
                        params.beta = v.clone();
                        base_seq.clone()
                    }
                    SweepVariable::N => {
                        let order = v.to_f64() as usize;
                        self.sequence.with_order(order)?.build(self.precision)?
                    }
                };
                Ok(PointSpec {
                    value: v.clone(),
                    params,
                    sequence,
                })
            })
            .collect()
    }

    fn default_value(&self) -> Float {
        match &self.sequence {
            SequenceSpec::Scheme { n, .. } => self.precision.real(*n as u64),
            SequenceSpec::External(_) => self.precision.zero(),
        }
    }
}

/// One evaluated configuration: a sequence under fixed parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSpec {
    pub value: Float,
    pub params: CouplingParams,
    pub sequence: PulseSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceResult {
    pub distance: Float,
    /// spectral-norm estimate of H
    pub lambda: f64,
    /// `lambda * tau * total_duration < 1`
    pub converged: bool,
}

/// Distance between initial and final system states for one realization.
pub fn evaluate_instance(
    real: &Realization,
    params: &CouplingParams,
    seq: &PulseSequence,
    prec: Precision,
) -> Result<InstanceResult, EngineError> {
    let h = assemble_hamiltonian(&real.bath, params, prec)?;
    let n_bath = real.bath.n_bath();
    let final_state = evolve(seq, &h, &params.tau, &real.state, prec)?;
    let rho0 = partial_trace_bath(&real.state, n_bath)?;
    let rho_t = partial_trace_bath(&final_state, n_bath)?;
    if !rho_t.is_valid(prec) {
        return Err(EngineError::InvalidState(real.index));
    }
    let distance = crate::hpmath::trace_distance(&rho_t, &rho0, prec)?;
    let lambda = spectral_norm_estimate(&h);
    let span = params.tau.to_f64() * seq.total_duration().to_f64();
    Ok(InstanceResult {
        distance,
        lambda,
        converged: lambda * span < 1.0,
    })
}

/// Distance for realization `index` at the configuration's base parameters.
pub fn run_instance(config: &ExperimentConfig, index: u64) -> Result<InstanceResult, EngineError> {
    config.validate()?;
    let seq = config.sequence.build(config.precision)?;
    let real = realization(&config.bath, index, config.precision)?;
    evaluate_instance(&real, &config.params, &seq, config.precision)
}

/// Execution knobs that do not affect results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// worker cap; `None` uses the global pool, `Some(1)` runs inline
    pub jobs: Option<usize>,
}

#[cfg(feature = "parallel")]
fn map_indexed<T, F>(count: usize, opts: RunOptions, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match opts.jobs {
        Some(1) => (0..count).map(f).collect(),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool")
            .install(|| (0..count).into_par_iter().map(&f).collect()),
        None => (0..count).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_indexed<T, F>(count: usize, _opts: RunOptions, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(f).collect()
}

/// Averaged result at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: Float,
    pub label: String,
    pub pulse_count: usize,
    pub distances: Vec<Float>,
    pub mean: Float,
    pub max_deviation: Float,
    pub log10_mean: Float,
    /// every realization satisfied the convergence condition
    pub converged: bool,
    pub max_lambda: f64,
}

impl SweepPoint {
    fn reduce(point: &PointSpec, results: Vec<InstanceResult>, prec: Precision) -> SweepPoint {
        let bits = prec.bits();
        let mut mean = Float::new(bits);
        for r in &results {
            mean += &r.distance;
        }
        mean /= results.len() as u64;
        let mut max_deviation = Float::new(bits);
        for r in &results {
            let dev = Float::with_val(bits, &r.distance - &mean).abs();
            if dev > max_deviation {
                max_deviation = dev;
            }
        }
        let log10_mean = Float::with_val(bits, mean.log10_ref());
        SweepPoint {
            value: point.value.clone(),
            label: point.sequence.label().to_string(),
            pulse_count: point.sequence.pulse_count(),
            converged: results.iter().all(|r| r.converged),
            max_lambda: results.iter().map(|r| r.lambda).fold(0.0, f64::max),
            distances: results.into_iter().map(|r| r.distance).collect(),
            mean,
            max_deviation,
            log10_mean,
        }
    }

    pub fn mean_f64(&self) -> f64 {
        self.mean.to_f64()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub points: Vec<SweepPoint>,
}

/// Significant digits written to result CSVs.
pub const CSV_DIGITS: usize = 30;

impl SweepResult {
    pub fn csv_header(realizations: usize) -> String {
        let mut h = String::from("sweep_value,mean_D,log10_mean_D,max_deviation,converged");
        for r in 0..realizations {
            write!(h, ",realization_{}", r).unwrap();
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let realizations = self.points.first().map(|p| p.distances.len()).unwrap_or(0);
        let mut out = Self::csv_header(realizations);
        out.push('\n');
        for p in &self.points {
            let fmt = |x: &Float| to_sci_string(x, CSV_DIGITS);
            write!(
                out,
                "{},{},{},{},{}",
                fmt(&p.value),
                fmt(&p.mean),
                fmt(&p.log10_mean),
                fmt(&p.max_deviation),
                p.converged
            )
            .unwrap();
            for d in &p.distances {
                write!(out, ",{}", fmt(d)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// `(value, mean D)` pairs in double precision, for fitting.
    pub fn series(&self) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|p| (p.value.to_f64(), p.mean.to_f64()))
            .collect()
    }
}

/// Generates every realization of `bath` once, in parallel.
pub fn realizations(
    bath: &BathSpec,
    count: usize,
    prec: Precision,
    opts: RunOptions,
) -> Result<Vec<Realization>, EngineError> {
    map_indexed(count, opts, |r| realization(bath, r as u64, prec))
        .into_iter()
        .map(|r| r.map_err(EngineError::from))
        .collect()
}

/// Evaluates each point over the same realizations.
pub fn evaluate_points(
    points: &[PointSpec],
    reals: &[Realization],
    prec: Precision,
    opts: RunOptions,
) -> Result<Vec<SweepPoint>, EngineError> {
    let per_point = reals.len();
    let flat = map_indexed(points.len() * per_point, opts, |task| {
        let (pi, ri) = (task / per_point, task % per_point);
        evaluate_instance(&reals[ri], &points[pi].params, &points[pi].sequence, prec)
    });
    let mut flat = flat.into_iter();
    points
        .iter()
        .enumerate()
        .map(|(index, point)| {
            let results: Result<Vec<InstanceResult>, EngineError> =
                flat.by_ref().take(per_point).collect();
            let results = results.map_err(|e| EngineError::Point {
                index,
                value: to_sci_string(&point.value, 10),
                source: Box::new(e),
            })?;
            Ok(SweepPoint::reduce(point, results, prec))
        })
        .collect()
}

/// Runs all realizations at every grid point and averages the distances.
pub fn run_experiment(
    config: &ExperimentConfig,
    opts: RunOptions,
) -> Result<SweepResult, EngineError> {
    config.validate()?;
    let points = config.points()?;
    let reals = realizations(&config.bath, config.realizations, config.precision, opts)?;
    let variable = config
        .sweep
        .as_ref()
        .map(|s| s.variable)
        .unwrap_or(SweepVariable::N);
    Ok(SweepResult {
        variable,
        points: evaluate_points(&points, &reals, config.precision, opts)?,
    })
}

/// One `(scheme, n)` row of a scheme comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub scheme: Scheme,
    pub n: usize,
    /// slots of the unmerged construction
    pub nominal_pulses: usize,
    pub point: SweepPoint,
}

/// Evaluates several schemes on common realizations.
///
/// Order 0 of any scheme is free evolution for one `tau`.
pub fn run_comparison(
    base: &ExperimentConfig,
    entries: &[(Scheme, usize)],
    opts: RunOptions,
) -> Result<Vec<ComparisonRow>, EngineError> {
    base.validate()?;
    let prec = base.precision;
    let axis = match &base.sequence {
        SequenceSpec::Scheme { axis, .. } => *axis,
        SequenceSpec::External(_) => PulseAxis::X,
    };
    let points: Vec<PointSpec> = entries
        .iter()
        .map(|&(scheme, n)| {
            let sequence = SequenceSpec::Scheme { scheme, m: n, n, axis }.build(prec)?;
            Ok(PointSpec {
                value: prec.real(n as u64),
                params: base.params.clone(),
                sequence,
            })
        })
        .collect::<Result<_, EngineError>>()?;
    let reals = realizations(&base.bath, base.realizations, prec, opts)?;
    let evaluated = evaluate_points(&points, &reals, prec, opts)?;
    entries
        .iter()
        .zip(evaluated)
        .map(|(&(scheme, n), point)| {
            Ok(ComparisonRow {
                scheme,
                n,
                nominal_pulses: scheme.nominal_pulses(n, n, axis, prec)?,
                point,
            })
        })
        .collect()
}

/// `scheme,n,pulse_count,physical_pulses,mean_D,log10_mean_D,max_deviation,converged,realization_*`.
///
/// `pulse_count` is the nominal slot count; `physical_pulses` counts the
/// non-identity pulses left after merging.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let realizations = rows.first().map(|r| r.point.distances.len()).unwrap_or(0);
    let mut out = String::from(
        "scheme,n,pulse_count,physical_pulses,mean_D,log10_mean_D,max_deviation,converged",
    );
    for r in 0..realizations {
        write!(out, ",realization_{}", r).unwrap();
    }
    out.push('\n');
    let fmt = |x: &Float| to_sci_string(x, CSV_DIGITS);
    for row in rows {
        let p = &row.point;
        write!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.scheme,
            row.n,
            row.nominal_pulses,
            p.pulse_count,
            fmt(&p.mean),
            fmt(&p.log10_mean),
            fmt(&p.max_deviation),
            p.converged
        )
        .unwrap();
        for d in &p.distances {
            write!(out, ",{}", fmt(d)).unwrap();
        }
        out.push('\n');
    }
    out
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<Realization>();
    check::<PointSpec>();
    check::<Complex>();
}
