//! Log-log slope fits, regime classification and leading-order predictions.

use rug::ops::Pow;
use rug::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run_experiment, EngineError, ExperimentConfig, RunOptions, SweepVariable};
use crate::hpmath::Precision;
use crate::model::CouplingParams;
use crate::sequences::total_normalized_time;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("a slope fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("log-log fit needs positive data, got ({0}, {1})")]
    NonPositive(f64, f64),
    #[error("fit window [{0}, {1}] is outside the data range")]
    BadWindow(f64, f64),
    #[error("parameters are in {actual}, not {requested}")]
    RegimeMismatch { requested: Regime, actual: Regime },
    #[error("order estimation needs regime R1 over the whole grid: {0}")]
    NotR1(String),
    #[error("order estimation needs a J sweep")]
    NotJSweep,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Least-squares line through `(log10 x, log10 y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
    pub window: (f64, f64),
}

/// Fits `log10 D = slope * log10 x + intercept` over points with `x` in `window` (inclusive).
pub fn fit_loglog_slope(
    points: &[(f64, f64)],
    window: Option<(f64, f64)>,
) -> Result<SlopeFit, AnalysisError> {
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let (wlo, whi) = window.unwrap_or((lo, hi));
    if points.is_empty() || wlo > whi || wlo < lo * (1.0 - 1e-12) || whi > hi * (1.0 + 1e-12) {
        return Err(AnalysisError::BadWindow(wlo, whi));
    }
    let mut logs = Vec::new();
    for &(x, y) in points {
        if x < wlo || x > whi {
            continue;
        }
        if !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(AnalysisError::NonPositive(x, y));
        }
        logs.push((x.log10(), y.log10()));
    }
    let k = logs.len();
    if k < 3 {
        return Err(AnalysisError::TooFewPoints(k));
    }
    let kf = k as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / kf;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::TooFewPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (rss / (kf - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        points: k,
        window: (wlo, whi),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `beta tau < J tau < S^-2`
    R1,
    /// `J tau <= beta tau <= S^-2`
    R2,
    /// `beta tau > S^-2`
    R3,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::R1 => "R1",
            Regime::R2 => "R2",
            Regime::R3 => "R3",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeInfo {
    pub regime: Regime,
    /// `J tau`, where the first transition `J tau = beta tau` happens
    pub j_beta_transition: Float,
    /// `S_n^-2`, the onset of R3 in `beta tau`
    pub r3_onset: Float,
}

/// `S_n^-2` for the QDD window of order `n`.
pub fn r3_onset(n: usize, prec: Precision) -> Float {
    let s = total_normalized_time(n, prec);
    Float::with_val(prec.bits(), s.square_ref()).recip()
}

/// Ties go to the later regime: `J = beta` is R2, and R3 starts strictly above `S^-2`.
/// A strong coupling `J tau >= S^-2` with `beta < J` is still labelled R1.
pub fn classify_regime(params: &CouplingParams, n: usize, prec: Precision) -> RegimeInfo {
    classify_with_onset(params, r3_onset(n, prec), prec)
}

fn classify_with_onset(params: &CouplingParams, onset: Float, prec: Precision) -> RegimeInfo {
    let j_tau = params.j_tau();
    let beta_tau = params.beta_tau();
    let regime = if beta_tau > onset {
        Regime::R3
    } else if j_tau <= beta_tau {
        Regime::R2
    } else {
        Regime::R1
    };
    RegimeInfo {
        regime,
        j_beta_transition: Float::with_val(prec.bits(), j_tau),
        r3_onset: onset,
    }
}

/// Leading-order distance in `regime`; `c` is the free R3 constant.
pub fn leading_order_prediction(
    n: usize,
    params: &CouplingParams,
    regime: Regime,
    c: &Float,
    prec: Precision,
) -> Result<Float, AnalysisError> {
    let actual = classify_regime(params, n, prec).regime;
    if actual != regime {
        return Err(AnalysisError::RegimeMismatch {
            requested: regime,
            actual,
        });
    }
    let bits = prec.bits();
    let s = total_normalized_time(n, prec);
    let s2_tau = Float::with_val(bits, s.square_ref()) * &params.tau;
    let k = (n + 1) as u32;
    let factorial = Float::with_val(bits, Float::factorial(k));
    let j_term = Float::with_val(bits, &params.j * &s2_tau).pow(k) / &factorial;
    Ok(match regime {
        Regime::R1 => j_term,
        Regime::R2 => {
            let coeff = Float::with_val(bits, &params.beta).pow(n as u32) * &params.j * n as u64;
            coeff * Float::with_val(bits, s2_tau.pow(k)) / factorial
        }
        Regime::R3 => {
            let ratio = Float::with_val(bits, &params.j / &params.beta) * c + 1u32;
            ratio * j_term
        }
    })
}

/// Rounded order from an R1 J-slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderEstimate {
    pub fit: SlopeFit,
    pub order: i64,
    pub residual: f64,
    /// residual above [`UNRELIABLE_RESIDUAL`]
    pub unreliable: bool,
    pub converged: bool,
    pub regime: Regime,
}

pub const UNRELIABLE_RESIDUAL: f64 = 0.35;

/// Width, in decades, dropped from the fit window next to a regime boundary.
pub const BOUNDARY_MARGIN_DECADES: f64 = 0.5;

impl OrderEstimate {
    fn from_fit(fit: SlopeFit, converged: bool) -> OrderEstimate {
        let raw = fit.slope - 1.0;
        let order = raw.round() as i64;
        let residual = (raw - order as f64).abs();
        OrderEstimate {
            fit,
            order,
            residual,
            unreliable: residual > UNRELIABLE_RESIDUAL,
            converged,
            regime: Regime::R1,
        }
    }

    /// `{slope, stderr, window, regime, predicted_order}` plus the residual details.
    pub fn report(&self) -> FitReport {
        FitReport {
            slope: self.fit.slope,
            stderr: self.fit.stderr,
            window: self.fit.window,
            regime: self.regime,
            predicted_order: self.order,
            residual: self.residual,
            unreliable: self.unreliable,
            converged: self.converged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub slope: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub regime: Regime,
    pub predicted_order: i64,
    pub residual: f64,
    pub unreliable: bool,
    pub converged: bool,
}

/// Window of `J tau` inside R1 with the boundary margins removed.
///
/// `total_duration` is the normalized length of the sequence, which plays
/// the role of `S_n^2` for the R1 upper boundary.
pub fn r1_window(
    config: &ExperimentConfig,
    total_duration: &Float,
) -> Result<(f64, f64), AnalysisError> {
    let sweep = match &config.sweep {
        Some(s) if s.variable == SweepVariable::J => s,
        _ => return Err(AnalysisError::NotJSweep),
    };
    let prec = config.precision;
    let onset = Float::with_val(prec.bits(), total_duration.square_ref()).recip();
    let tau = &config.params.tau;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in &sweep.grid {
        let mut params = config.params.clone();
        params.j = j.clone();
        let info = classify_with_onset(&params, onset.clone(), prec);
        let j_tau = Float::with_val(prec.bits(), j * tau);
        if info.regime != Regime::R1 || j_tau >= onset {
            return Err(AnalysisError::NotR1(format!(
                "J tau = {} with beta tau = {}",
                j_tau.to_f64(),
                params.beta_tau().to_f64()
            )));
        }
        lo = lo.min(j_tau.to_f64());
        hi = hi.max(j_tau.to_f64());
    }
    let margin = 10f64.powf(BOUNDARY_MARGIN_DECADES);
    let beta_tau = config.params.beta_tau().to_f64();
    let lo_cut = (beta_tau * margin).max(lo);
    let hi_cut = (onset.to_f64() / margin).min(hi);
    if lo_cut > hi_cut {
        return Err(AnalysisError::NotR1(
            "the grid lies within half a decade of a regime boundary".into(),
        ));
    }
    Ok((lo_cut, hi_cut))
}

/// Runs the J sweep of `config` and reads the suppression order off the slope.
pub fn estimate_suppression_order(
    config: &ExperimentConfig,
    opts: RunOptions,
) -> Result<OrderEstimate, AnalysisError> {
    let seq = config.sequence.build(config.precision)?;
    let window = r1_window(config, &seq.total_duration())?;
    let result = run_experiment(config, opts)?;
    let tau = config.params.tau.to_f64();
    let series: Vec<(f64, f64)> = result
        .series()
        .into_iter()
        .map(|(j, d)| (j * tau, d))
        .collect();
    let fit = fit_loglog_slope(&series, Some(window))?;
    let converged = result.points.iter().all(|p| p.converged);
    Ok(OrderEstimate::from_fit(fit, converged))
}
