//! Pulse-sequence construction.
//!
//! A [`PulseSequence`] is an ordered list of free-evolution intervals, each
//! followed by an instantaneous Pauli pulse on the system qubit. Durations are
//! dimensionless multiples of the minimum interval `tau` and are computed
//! directly from closed forms at the working precision.
//!
//! Pulses are tracked modulo global phase, so the Pauli products form the
//! abelian group `Z2 x Z2`.

use std::fmt;
use std::str::FromStr;

use rug::{Assign, Float};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpmath::{HPMatrix, Precision};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("{scheme} requires order >= {min}, got {got}")]
    OrderTooSmall {
        scheme: &'static str,
        min: usize,
        got: usize,
    },
    #[error("pulse axis must not be the identity")]
    IdentityAxis,
    #[error("outer and inner axes must differ (both {0})")]
    SameAxes(PulseAxis),
    #[error("total time must be positive")]
    NonPositiveTime,
    #[error("invalid sequence: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("unknown pulse axis {0:?}")]
    UnknownAxis(String),
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
}

/// Instantaneous Pauli pulse on the system qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PulseAxis {
    Identity,
    X,
    Y,
    Z,
}

impl PulseAxis {
    pub const ALL: [PulseAxis; 4] = [PulseAxis::Identity, PulseAxis::X, PulseAxis::Y, PulseAxis::Z];

    /// (x, z) symplectic bits: X = (1,0), Z = (0,1), Y = (1,1).
    fn bits(self) -> (bool, bool) {
        match self {
            PulseAxis::Identity => (false, false),
            PulseAxis::X => (true, false),
            PulseAxis::Y => (true, true),
            PulseAxis::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => PulseAxis::Identity,
            (true, false) => PulseAxis::X,
            (true, true) => PulseAxis::Y,
            (false, true) => PulseAxis::Z,
        }
    }

    /// Product with another pulse, modulo global phase (order does not matter).
    pub fn compose(self, other: PulseAxis) -> PulseAxis {
        let (ax, az) = self.bits();
        let (bx, bz) = other.bits();
        Self::from_bits(ax ^ bx, az ^ bz)
    }

    /// `self^k` modulo phase.
    pub fn pow(self, k: usize) -> PulseAxis {
        if k.is_multiple_of(2) {
            PulseAxis::Identity
        } else {
            self
        }
    }

    pub fn is_identity(self) -> bool {
        self == PulseAxis::Identity
    }

    pub fn symbol(self) -> &'static str {
        match self {
            PulseAxis::Identity => "I",
            PulseAxis::X => "X",
            PulseAxis::Y => "Y",
            PulseAxis::Z => "Z",
        }
    }

    /// The 2x2 Pauli matrix.
    pub fn matrix(self, prec: Precision) -> HPMatrix {
        let entries: [(f64, f64); 4] = match self {
            PulseAxis::Identity => [(1., 0.), (0., 0.), (0., 0.), (1., 0.)],
            PulseAxis::X => [(0., 0.), (1., 0.), (1., 0.), (0., 0.)],
            PulseAxis::Y => [(0., 0.), (0., -1.), (0., 1.), (0., 0.)],
            PulseAxis::Z => [(1., 0.), (0., 0.), (0., 0.), (-1., 0.)],
        };
        HPMatrix::from_f64(2, 2, &entries, prec)
    }
}

impl fmt::Display for PulseAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for PulseAxis {
    type Err = SequenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I" | "i" => Ok(PulseAxis::Identity),
            "X" | "x" => Ok(PulseAxis::X),
            "Y" | "y" => Ok(PulseAxis::Y),
            "Z" | "z" => Ok(PulseAxis::Z),
            other => Err(SequenceError::UnknownAxis(other.to_string())),
        }
    }
}

/// Free-evolution intervals, each followed by a pulse.
#[derive(Clone, PartialEq)]
pub struct PulseSequence {
    intervals: Vec<Float>,
    pulses: Vec<PulseAxis>,
    label: String,
    prec: Precision,
}

impl fmt::Debug for PulseSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body: Vec<String> = self
            .intervals
            .iter()
            .zip(&self.pulses)
            .map(|(d, p)| format!("{:.6}:{}", d.to_f64(), p))
            .collect();
        write!(f, "PulseSequence[{}]({})", self.label, body.join(" "))
    }
}

impl PulseSequence {
    /// Validates and builds a sequence.
    ///
    /// The first interval must be positive; later intervals may be zero, which
    /// marks coincident pulses that [`canonicalize`](Self::canonicalize) merges.
    pub fn new(
        intervals: Vec<Float>,
        pulses: Vec<PulseAxis>,
        label: impl Into<String>,
        prec: Precision,
    ) -> Result<Self, SequenceError> {
        if intervals.is_empty() {
            return Err(SequenceError::Invalid("no intervals".into()));
        }
        if intervals.len() != pulses.len() {
            return Err(SequenceError::Invalid(format!(
                "{} intervals but {} pulses",
                intervals.len(),
                pulses.len()
            )));
        }
        if !intervals[0].is_sign_positive() || intervals[0].is_zero() {
            return Err(SequenceError::Invalid("first interval must be positive".into()));
        }
        if let Some(bad) = intervals.iter().find(|d| d.is_sign_negative() && !d.is_zero()) {
            return Err(SequenceError::Invalid(format!("negative interval {}", bad.to_f64())));
        }
        if intervals.iter().any(|d| !d.is_finite()) {
            return Err(SequenceError::Invalid("non-finite interval".into()));
        }
        Ok(PulseSequence {
            intervals,
            pulses,
            label: label.into(),
            prec,
        })
    }

    /// Single free interval of unit length.
    pub fn free(prec: Precision) -> Self {
        PulseSequence {
            intervals: vec![prec.real(1)],
            pulses: vec![PulseAxis::Identity],
            label: "free".into(),
            prec,
        }
    }

    pub fn intervals(&self) -> &[Float] {
        &self.intervals
    }

    pub fn pulses(&self) -> &[PulseAxis] {
        &self.pulses
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn precision(&self) -> Precision {
        self.prec
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn interval_count(&self) -> usize {
        self.intervals.len()
    }

    /// Number of non-identity pulses.
    pub fn pulse_count(&self) -> usize {
        self.pulses.iter().filter(|p| !p.is_identity()).count()
    }

    /// Sum of all intervals, in units of `tau`.
    pub fn total_duration(&self) -> Float {
        let mut total = self.prec.zero();
        for d in &self.intervals {
            total += d;
        }
        total
    }

    /// Product of every pulse, modulo phase.
    pub fn net_pulse(&self) -> PulseAxis {
        self.pulses
            .iter()
            .fold(PulseAxis::Identity, |acc, p| acc.compose(*p))
    }

    /// Distinct interval durations (to working precision), in order of first use.
    pub fn distinct_durations(&self) -> Vec<Float> {
        let tol = self.prec.tolerance(10);
        let mut out: Vec<Float> = Vec::new();
        for d in &self.intervals {
            let seen = out
                .iter()
                .any(|e| Float::with_val(d.prec(), d - e).abs() <= tol);
            if !seen {
                out.push(d.clone());
            }
        }
        out
    }

    /// Merges coincident pulses and removes interior identity pulses.
    ///
    /// A zero-length interval folds its pulse into the preceding one; an
    /// identity pulse between two intervals joins them into one interval. The
    /// terminating pulse may be the identity.
    pub fn canonicalize(&self) -> PulseSequence {
        let mut intervals: Vec<Float> = Vec::with_capacity(self.intervals.len());
        let mut pulses: Vec<PulseAxis> = Vec::with_capacity(self.pulses.len());
        for (d, &p) in self.intervals.iter().zip(&self.pulses) {
            if d.is_zero() && !pulses.is_empty() {
                let last = pulses.last_mut().unwrap();
                *last = last.compose(p);
                continue;
            }
            match pulses.last() {
                Some(PulseAxis::Identity) => {
                    *intervals.last_mut().unwrap() += d;
                    *pulses.last_mut().unwrap() = p;
                }
                _ => {
                    intervals.push(d.clone());
                    pulses.push(p);
                }
            }
        }
        PulseSequence {
            intervals,
            pulses,
            label: self.label.clone(),
            prec: self.prec,
        }
    }

    /// Structural equality of canonical forms, durations within `tol`.
    pub fn approx_eq(&self, other: &PulseSequence, tol: &Float) -> bool {
        let a = self.canonicalize();
        let b = other.canonicalize();
        a.pulses == b.pulses
            && a.intervals.len() == b.intervals.len()
            && a.intervals
                .iter()
                .zip(&b.intervals)
                .all(|(x, y)| Float::with_val(x.prec(), x - y).abs() <= *tol)
    }

    /// [`approx_eq`](Self::approx_eq) at the default tolerance `10^-(digits-10)`.
    pub fn equivalent(&self, other: &PulseSequence) -> bool {
        self.approx_eq(other, &self.prec.tolerance(10))
    }

    /// Pulse events with times scaled so the whole sequence lasts `total_time`.
    pub fn events(&self, total_time: &Float) -> Vec<PulseEvent> {
        let total = self.total_duration();
        let scale = Float::with_val(self.prec.bits(), total_time / &total);
        let mut elapsed = self.prec.zero();
        let mut out = Vec::new();
        for (d, &p) in self.intervals.iter().zip(&self.pulses) {
            elapsed += d;
            if !p.is_identity() {
                out.push(PulseEvent {
                    time: Float::with_val(self.prec.bits(), &elapsed * &scale),
                    axis: p,
                });
            }
        }
        out
    }

    /// `time,axis` CSV, one row per non-identity pulse.
    pub fn to_csv(&self, total_time: &Float) -> String {
        let digits = self.prec.digits() as usize;
        let mut out = String::from("time,axis\n");
        for e in self.events(total_time) {
            out.push_str(&e.time.to_string_radix(10, Some(digits)));
            out.push(',');
            out.push_str(e.axis.symbol());
            out.push('\n');
        }
        out
    }

    /// Parses a `time,axis` schedule spanning `[0, total_time]`.
    ///
    /// Intervals are expressed in units of the shortest positive gap. Rows with
    /// equal times are merged, and a trailing free interval is appended when the
    /// last pulse precedes `total_time`.
    pub fn from_csv(
        text: &str,
        total_time: &Float,
        prec: Precision,
    ) -> Result<PulseSequence, SequenceError> {
        if !total_time.is_sign_positive() || total_time.is_zero() {
            return Err(SequenceError::NonPositiveTime);
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| SequenceError::Csv {
            line: 1,
            message: e.to_string(),
        })?;
        if headers.len() != 2 || &headers[0] != "time" || &headers[1] != "axis" {
            return Err(SequenceError::Csv {
                line: 1,
                message: "expected header `time,axis`".into(),
            });
        }
        let tol = Float::with_val(prec.bits(), prec.tolerance(10) * total_time);
        let mut events: Vec<PulseEvent> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| SequenceError::Csv {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let csv_err = |message: String| SequenceError::Csv { line, message };
            let time = prec
                .parse(&record[0])
                .map_err(|_| csv_err(format!("bad time {:?}", &record[0])))?;
            let axis = match PulseAxis::from_str(&record[1]) {
                Ok(PulseAxis::Identity) | Err(_) => {
                    return Err(csv_err(format!("axis must be X, Y or Z, got {:?}", &record[1])))
                }
                Ok(a) => a,
            };
            if time.is_zero() || time.is_sign_negative() {
                return Err(csv_err("pulse times must be positive".into()));
            }
            if time > Float::with_val(prec.bits(), total_time + &tol) {
                return Err(csv_err("pulse time exceeds the total time".into()));
            }
            if let Some(prev) = events.last() {
                if time < prev.time {
                    return Err(csv_err("times must be non-decreasing".into()));
                }
            }
            events.push(PulseEvent { time, axis });
        }
        if events.is_empty() {
            return Err(SequenceError::Csv {
                line: 1,
                message: "no pulse rows".into(),
            });
        }

        // gaps, with coincidences snapped to exact zero
        let mut gaps: Vec<Float> = Vec::with_capacity(events.len() + 1);
        let mut prev = prec.zero();
        for e in &events {
            let mut gap = Float::with_val(prec.bits(), &e.time - &prev);
            if gap <= tol {
                gap.assign(0);
            }
            gaps.push(gap);
            prev.assign(&e.time);
        }
        let mut tail = Float::with_val(prec.bits(), total_time - &prev);
        if tail <= tol {
            tail.assign(0);
        }
        let unit = gaps
            .iter()
            .chain(std::iter::once(&tail))
            .filter(|g| !g.is_zero())
            .min_by(|a, b| a.partial_cmp(b).unwrap())
            .cloned()
            .ok_or_else(|| SequenceError::Invalid("all pulses at one instant".into()))?;

        let mut intervals: Vec<Float> = gaps.into_iter().map(|g| g / &unit).collect();
        let mut pulses: Vec<PulseAxis> = events.iter().map(|e| e.axis).collect();
        if !tail.is_zero() {
            intervals.push(tail / &unit);
            pulses.push(PulseAxis::Identity);
        }
        PulseSequence::new(intervals, pulses, "external", prec)
    }
}

/// A pulse at an absolute time.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseEvent {
    pub time: Float,
    pub axis: PulseAxis,
}

/// `sin(numer * pi / denom)` at working precision, for `0 <= numer <= denom`.
///
/// The angle is reflected into `[0, pi/2]` first so that `sin(x)` and
/// `sin(pi - x)` round identically.
fn sin_frac_pi(numer: usize, denom: usize, prec: Precision) -> Float {
    debug_assert!(numer <= denom);
    let numer = numer.min(denom - numer);
    let mut angle = prec.pi();
    angle *= numer as u64;
    angle /= denom as u64;
    angle.sin()
}

fn uhrig_indices(n: usize) -> std::ops::RangeInclusive<usize> {
    if n.is_multiple_of(2) {
        1..=n
    } else {
        1..=n + 1
    }
}

/// Uhrig pulse times `T sin^2(j pi / (2n + 2))`.
///
/// `j` runs to `n` for even `n` and to `n + 1` for odd `n`, where the last pulse
/// lands at `T`. Order zero is free evolution and has no pulses.
pub fn uhrig_times(n: usize, total: &Float, prec: Precision) -> Result<Vec<Float>, SequenceError> {
    if !total.is_sign_positive() || total.is_zero() {
        return Err(SequenceError::NonPositiveTime);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    Ok(uhrig_indices(n)
        .map(|j| {
            let s = sin_frac_pi(j, 2 * n + 2, prec);
            Float::with_val(prec.bits(), &s * &s) * total
        })
        .collect())
}

/// Normalized Uhrig intervals `s_j = sin((2j-1) pi/(2n+2)) / sin(pi/(2n+2))`, `j = 1..=n+1`.
pub fn normalized_intervals(n: usize, prec: Precision) -> Vec<Float> {
    let denom = sin_frac_pi(1, 2 * n + 2, prec);
    (1..=n + 1)
        .map(|j| sin_frac_pi(2 * j - 1, 2 * n + 2, prec) / &denom)
        .collect()
}

/// `S_n = csc^2(pi / (2n + 2))`.
pub fn total_normalized_time(n: usize, prec: Precision) -> Float {
    let s = sin_frac_pi(1, 2 * n + 2, prec);
    Float::with_val(prec.bits(), &s * &s).recip()
}

/// Lower bound on the pulse rate, `lambda csc^4(pi / (2n + 2))`, above which
/// `lambda S_n^2 tau < 1` holds.
pub fn min_pulse_rate(n: usize, lambda: &Float, prec: Precision) -> Float {
    let s = total_normalized_time(n, prec);
    Float::with_val(prec.bits(), &s * &s) * lambda
}

/// Single-axis Uhrig sequence of order `n`.
pub fn udd(n: usize, axis: PulseAxis, prec: Precision) -> Result<PulseSequence, SequenceError> {
    if axis.is_identity() {
        return Err(SequenceError::IdentityAxis);
    }
    let intervals = normalized_intervals(n, prec);
    let mut pulses = vec![axis; n];
    pulses.push(axis.pow(n));
    PulseSequence::new(intervals, pulses, format!("UDD{} n={}", axis, n), prec)
}

/// Appends intervals and folds extra pulses into the last one.
struct RawBuilder {
    intervals: Vec<Float>,
    pulses: Vec<PulseAxis>,
    prec: Precision,
}

impl RawBuilder {
    fn new(prec: Precision) -> Self {
        RawBuilder {
            intervals: Vec::new(),
            pulses: Vec::new(),
            prec,
        }
    }

    fn push_scaled(&mut self, seq: &PulseSequence, scale: &Float) {
        for (d, &p) in seq.intervals.iter().zip(&seq.pulses) {
            self.intervals.push(Float::with_val(self.prec.bits(), d * scale));
            self.pulses.push(p);
        }
    }

    fn push(&mut self, seq: &PulseSequence) {
        self.intervals.extend(seq.intervals.iter().cloned());
        self.pulses.extend(seq.pulses.iter().copied());
    }

    fn pulse(&mut self, p: PulseAxis) {
        let last = self.pulses.last_mut().expect("pulse before any interval");
        *last = last.compose(p);
    }

    fn finish(self, label: String) -> Result<PulseSequence, SequenceError> {
        PulseSequence::new(self.intervals, self.pulses, label, self.prec)
    }
}

/// Nested Uhrig sequence `outer_m(inner_n(tau))` before canonicalization.
///
/// Outer slot `j`, inner slot `k` lasts `s_j^(m) s_k^(n)`; this has exactly
/// `(m+1)(n+1)` intervals.
pub fn qdd_raw(
    m: usize,
    n: usize,
    outer: PulseAxis,
    inner: PulseAxis,
    prec: Precision,
) -> Result<PulseSequence, SequenceError> {
    if outer.is_identity() || inner.is_identity() {
        return Err(SequenceError::IdentityAxis);
    }
    if outer == inner {
        return Err(SequenceError::SameAxes(outer));
    }
    let inner_seq = udd(n, inner, prec)?;
    let outer_scales = normalized_intervals(m, prec);
    let mut b = RawBuilder::new(prec);
    for (j, scale) in outer_scales.iter().enumerate() {
        b.push_scaled(&inner_seq, scale);
        b.pulse(if j < m { outer } else { outer.pow(m) });
    }
    b.finish(format!("QDD m={} n={}", m, n))
}

/// Quadratic sequence `QDD_{m,n}` in canonical form.
pub fn qdd(
    m: usize,
    n: usize,
    outer: PulseAxis,
    inner: PulseAxis,
    prec: Precision,
) -> Result<PulseSequence, SequenceError> {
    Ok(qdd_raw(m, n, outer, inner, prec)?.canonicalize())
}

fn universal_decoupler(prec: Precision) -> PulseSequence {
    use PulseAxis::{X, Y};
    PulseSequence {
        intervals: (0..4).map(|_| prec.real(1)).collect(),
        pulses: vec![X, Y, X, Y],
        label: "UD".into(),
        prec,
    }
}

/// The universal decoupler repeated `n` times.
pub fn pdd(n: usize, prec: Precision) -> Result<PulseSequence, SequenceError> {
    if n == 0 {
        return Err(SequenceError::OrderTooSmall {
            scheme: "PDD",
            min: 1,
            got: n,
        });
    }
    let ud = universal_decoupler(prec);
    let mut b = RawBuilder::new(prec);
    for _ in 0..n {
        b.push(&ud);
    }
    Ok(b.finish(format!("PDD n={}", n))?.canonicalize())
}

/// Concatenated universal decoupler, unmerged: `4^n` unit intervals.
pub fn cdd_raw(n: usize, prec: Precision) -> Result<PulseSequence, SequenceError> {
    if n == 0 {
        return Err(SequenceError::OrderTooSmall {
            scheme: "CDD",
            min: 1,
            got: n,
        });
    }
    let template = universal_decoupler(prec);
    let mut level = template.clone();
    for _ in 1..n {
        let mut b = RawBuilder::new(prec);
        for &p in &template.pulses {
            b.push(&level);
            b.pulse(p);
        }
        level = b.finish(String::new())?;
    }
    Ok(level.with_label(format!("CDD n={}", n)))
}

/// Concatenated universal decoupler in canonical form.
pub fn cdd(n: usize, prec: Precision) -> Result<PulseSequence, SequenceError> {
    Ok(cdd_raw(n, prec)?.canonicalize())
}

/// Concatenated Uhrig sequence, unmerged: `(n+1) 2^n` intervals.
///
/// `n` binary levels of Z concatenation, `C_k = C_{k-1} Z C_{k-1} Z` in time
/// order, with every base slot filled by an X-type UDD of order `n`.
pub fn cudd_raw(n: usize, prec: Precision) -> Result<PulseSequence, SequenceError> {
    if n == 0 {
        return Err(SequenceError::OrderTooSmall {
            scheme: "CUDD",
            min: 1,
            got: n,
        });
    }
    let mut level = udd(n, PulseAxis::X, prec)?;
    for _ in 0..n {
        let mut b = RawBuilder::new(prec);
        for _ in 0..2 {
            b.push(&level);
            b.pulse(PulseAxis::Z);
        }
        level = b.finish(String::new())?;
    }
    Ok(level.with_label(format!("CUDD n={}", n)))
}

/// Concatenated Uhrig sequence in canonical form.
pub fn cudd(n: usize, prec: Precision) -> Result<PulseSequence, SequenceError> {
    Ok(cudd_raw(n, prec)?.canonicalize())
}

/// Absolute pulse times of `QDD_{m,n}` (outer Z, inner X) over total time `T`.
///
/// Outer pulses sit at the Uhrig times; inner pulses in outer slot `j` sit at
/// `t_{j,k} = tau_j sin^2(k pi/(2n+2)) + t_{j-1}` for every slot `j = 1..=m+1`.
/// Coincident X and Z pulses merge into Y.
pub fn physical_pulse_times(
    m: usize,
    n: usize,
    total: &Float,
    prec: Precision,
) -> Result<Vec<PulseEvent>, SequenceError> {
    if !total.is_sign_positive() || total.is_zero() {
        return Err(SequenceError::NonPositiveTime);
    }
    let bits = prec.bits();
    let s_outer = normalized_intervals(m, prec);
    let s_total = total_normalized_time(m, prec);
    let mut events: Vec<PulseEvent> = Vec::new();
    for t in uhrig_times(m, total, prec)? {
        events.push(PulseEvent {
            time: t,
            axis: PulseAxis::Z,
        });
    }
    // slot start t_{j-1} and length tau_j = T s_j / S_m
    let mut start = prec.zero();
    for (j, s) in s_outer.iter().enumerate() {
        let slot = Float::with_val(bits, total * s) / &s_total;
        if n > 0 {
            for k in uhrig_indices(n) {
                let w = sin_frac_pi(k, 2 * n + 2, prec);
                let frac = Float::with_val(bits, &w * &w);
                events.push(PulseEvent {
                    time: Float::with_val(bits, &slot * &frac) + &start,
                    axis: PulseAxis::X,
                });
            }
        }
        if j < m {
            // next slot starts at the Uhrig time itself, not an accumulated sum
            let w = sin_frac_pi(j + 1, 2 * m + 2, prec);
            start = Float::with_val(bits, &w * &w) * total;
        }
    }
    events.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());

    let tol = Float::with_val(bits, prec.tolerance(10) * total);
    let mut merged: Vec<PulseEvent> = Vec::with_capacity(events.len());
    for e in events {
        match merged.last_mut() {
            Some(last) if Float::with_val(bits, &e.time - &last.time).abs() <= tol => {
                last.axis = last.axis.compose(e.axis);
            }
            _ => merged.push(e),
        }
    }
    merged.retain(|e| !e.axis.is_identity());
    Ok(merged)
}

/// One cell of the outer-product picture: the toggling-frame Pauli in effect
/// during an interval, and the interval's duration.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub frame: PulseAxis,
    pub duration: Float,
}

/// `(n+1) x (n+1)` outer-product layout of `QDD_n`.
///
/// Row 0 is the last outer slot (`j = n+1`) and column 0 the last inner slot
/// (`k = n+1`), so reading rows top to bottom and each row left to right gives
/// the operator product in written order (latest first).
#[derive(Clone, Debug)]
pub struct GridView {
    n: usize,
    cells: Vec<Vec<GridCell>>,
    prec: Precision,
}

pub fn grid_view(n: usize, prec: Precision) -> GridView {
    let s = normalized_intervals(n, prec);
    let cells = (0..=n)
        .map(|r| {
            let j = n - r; // zero-based outer slot
            (0..=n)
                .map(|c| {
                    let k = n - c;
                    GridCell {
                        frame: PulseAxis::Z.pow(j).compose(PulseAxis::X.pow(k)),
                        duration: Float::with_val(prec.bits(), &s[j] * &s[k]),
                    }
                })
                .collect()
        })
        .collect();
    GridView { n, cells, prec }
}

impl GridView {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn cell(&self, row: usize, col: usize) -> &GridCell {
        &self.cells[row][col]
    }

    pub fn rows(&self) -> &[Vec<GridCell>] {
        &self.cells
    }

    /// Row-wise reading: equals `qdd_raw(n, n, Z, X)`.
    pub fn flatten_rows(&self) -> PulseSequence {
        let written: Vec<&GridCell> = self.cells.iter().flat_map(|row| row.iter()).collect();
        self.assemble_written(written, format!("QDD m={} n={}", self.n, self.n))
    }

    /// Column-wise reading: equals `qdd_raw(n, n, X, Z)`, the transposed nesting.
    pub fn flatten_columns(&self) -> PulseSequence {
        let written: Vec<&GridCell> = (0..=self.n)
            .flat_map(|c| self.cells.iter().map(move |row| &row[c]))
            .collect();
        self.assemble_written(written, format!("QDD m={} n={} (X outer)", self.n, self.n))
    }

    fn assemble_written(&self, written: Vec<&GridCell>, label: String) -> PulseSequence {
        let chrono: Vec<&GridCell> = written.into_iter().rev().collect();
        let mut intervals = Vec::with_capacity(chrono.len());
        let mut pulses = Vec::with_capacity(chrono.len());
        for (i, cell) in chrono.iter().enumerate() {
            intervals.push(cell.duration.clone());
            // the pulse after an interval maps its frame onto the next one;
            // the whole sequence has trivial net action
            let next = chrono.get(i + 1).map(|c| c.frame).unwrap_or(PulseAxis::Identity);
            pulses.push(cell.frame.compose(next));
        }
        PulseSequence {
            intervals,
            pulses,
            label,
            prec: self.prec,
        }
    }
}

/// Sequence families that can be built from an order pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Free,
    Pdd,
    Cdd,
    Cudd,
    Udd,
    Qdd,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Free,
        Scheme::Pdd,
        Scheme::Cdd,
        Scheme::Cudd,
        Scheme::Udd,
        Scheme::Qdd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Free => "free",
            Scheme::Pdd => "pdd",
            Scheme::Cdd => "cdd",
            Scheme::Cudd => "cudd",
            Scheme::Udd => "udd",
            Scheme::Qdd => "qdd",
        }
    }

    /// Canonical sequence. `m` is used by QDD only; UDD uses `axis`.
    pub fn build(
        self,
        m: usize,
        n: usize,
        axis: PulseAxis,
        prec: Precision,
    ) -> Result<PulseSequence, SequenceError> {
        match self {
            Scheme::Free => Ok(PulseSequence::free(prec)),
            Scheme::Pdd => pdd(n, prec),
            Scheme::Cdd => cdd(n, prec),
            Scheme::Cudd => cudd(n, prec),
            Scheme::Udd => udd(n, axis, prec),
            Scheme::Qdd => qdd(m, n, PulseAxis::Z, PulseAxis::X, prec),
        }
    }

    /// Construction before merging, for slot counting.
    pub fn build_raw(
        self,
        m: usize,
        n: usize,
        axis: PulseAxis,
        prec: Precision,
    ) -> Result<PulseSequence, SequenceError> {
        match self {
            Scheme::Cdd => cdd_raw(n, prec),
            Scheme::Cudd => cudd_raw(n, prec),
            Scheme::Qdd => qdd_raw(m, n, PulseAxis::Z, PulseAxis::X, prec),
            other => other.build(m, n, axis, prec),
        }
    }

    /// Pulse slots of the unmerged construction: `(n+1)^2` for QDD, `4n` for
    /// PDD, `4^n` for CDD, `(n+1) 2^n` for CUDD, `n+1` for UDD, 0 at order 0.
    pub fn nominal_pulses(
        self,
        m: usize,
        n: usize,
        axis: PulseAxis,
        prec: Precision,
    ) -> Result<usize, SequenceError> {
        if self == Scheme::Free || n == 0 {
            return Ok(0);
        }
        Ok(self.build_raw(m, n, axis, prec)?.interval_count())
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = SequenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SequenceError::UnknownScheme(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PulseAxis::{Identity as I, X, Y, Z};

    fn p() -> Precision {
        Precision::default()
    }

    fn f64s(v: &[Float]) -> Vec<f64> {
        v.iter().map(Float::to_f64).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn pauli_products() {
        assert_eq!(X.compose(Z), Y);
        assert_eq!(Z.compose(X), Y);
        assert_eq!(X.compose(X), I);
        assert_eq!(Y.compose(Z), X);
        assert_eq!(I.compose(Y), Y);
        for a in PulseAxis::ALL {
            for b in PulseAxis::ALL {
                assert_eq!(a.compose(b), b.compose(a));
            }
        }
    }

    #[test]
    fn pauli_matrices_multiply_up_to_phase() {
        // X Z = -i Y
        let xz = X.matrix(p()).matmul(&Z.matrix(p())).unwrap();
        let y = Y.matrix(p());
        let minus_i = rug::Complex::with_val(p().bits(), (0, -1));
        for r in 0..2 {
            for c in 0..2 {
                let want = rug::Complex::with_val(p().bits(), y.get(r, c) * &minus_i);
                assert_eq!(*xz.get(r, c), want);
            }
        }
    }

    #[test]
    fn uhrig_times_small_orders() {
        let one = p().real(1);
        assert_eq!(f64s(&uhrig_times(1, &one, p()).unwrap()), vec![0.5, 1.0]);
        assert!(close(&f64s(&uhrig_times(2, &one, p()).unwrap()), &[0.25, 0.75], 1e-15));
        assert!(uhrig_times(0, &one, p()).unwrap().is_empty());
        assert_eq!(
            uhrig_times(3, &p().real(-1), p()),
            Err(SequenceError::NonPositiveTime)
        );
    }

    #[test]
    fn normalized_intervals_small_orders() {
        assert!(close(&f64s(&normalized_intervals(1, p())), &[1., 1.], 1e-15));
        assert!(close(&f64s(&normalized_intervals(2, p())), &[1., 2., 1.], 1e-15));
        let r2 = 1.0 + 2f64.sqrt();
        assert!(close(&f64s(&normalized_intervals(3, p())), &[1., r2, r2, 1.], 1e-14));
        assert_eq!(normalized_intervals(0, p()).len(), 1);
    }

    #[test]
    fn total_time_and_rate() {
        assert!((total_normalized_time(0, p()).to_f64() - 1.0).abs() < 1e-15);
        assert!((total_normalized_time(1, p()).to_f64() - 2.0).abs() < 1e-15);
        assert!((min_pulse_rate(1, &p().real(1), p()).to_f64() - 4.0).abs() < 1e-14);
        assert!((min_pulse_rate(2, &p().real(1), p()).to_f64() - 16.0).abs() < 1e-13);
    }

    #[test]
    fn udd_shapes() {
        let z1 = udd(1, Z, p()).unwrap();
        assert_eq!(f64s(z1.intervals()), vec![1.0, 1.0]);
        assert_eq!(z1.pulses(), &[Z, Z]);
        let x2 = udd(2, X, p()).unwrap();
        assert_eq!(x2.pulses(), &[X, X, I]);
        let x0 = udd(0, X, p()).unwrap();
        assert_eq!(x0.pulses(), &[I]);
        assert_eq!(x0.interval_count(), 1);
        assert_eq!(udd(2, I, p()), Err(SequenceError::IdentityAxis));
    }

    #[test]
    fn qdd_one_is_universal_decoupler() {
        let q = qdd(1, 1, Z, X, p()).unwrap();
        assert_eq!(q.pulses(), &[X, Y, X, Y]);
        assert!(q.intervals().iter().all(|d| *d == 1));
    }

    #[test]
    fn qdd_two_durations_are_outer_product() {
        let q = qdd(2, 2, Z, X, p()).unwrap();
        assert!(close(
            &f64s(q.intervals()),
            &[1., 2., 1., 2., 4., 2., 1., 2., 1.],
            1e-14
        ));
        assert_eq!(q.pulses(), &[X, X, Z, X, X, Z, X, X, I]);
    }

    #[test]
    fn qdd_with_trivial_outer_is_udd() {
        let q = qdd(0, 2, Z, X, p()).unwrap();
        assert!(q.equivalent(&udd(2, X, p()).unwrap()));
    }

    #[test]
    fn qdd_rejects_bad_axes() {
        assert_eq!(qdd(1, 1, Z, Z, p()), Err(SequenceError::SameAxes(Z)));
        assert_eq!(qdd(1, 1, I, X, p()), Err(SequenceError::IdentityAxis));
    }

    #[test]
    fn pdd_and_cdd_shapes() {
        assert!(pdd(1, p()).unwrap().equivalent(&qdd(1, 1, Z, X, p()).unwrap()));
        let p2 = pdd(2, p()).unwrap();
        assert_eq!(p2.pulses(), &[X, Y, X, Y, X, Y, X, Y]);
        assert_eq!(pdd(3, p()).unwrap().pulse_count(), 12);
        assert!(pdd(0, p()).is_err());
        assert!(cdd(1, p()).unwrap().equivalent(&pdd(1, p()).unwrap()));
        let c2 = cdd_raw(2, p()).unwrap();
        assert_eq!(c2.interval_count(), 16);
        assert!(c2.intervals().iter().all(|d| *d == 1));
        let c3 = cdd_raw(3, p()).unwrap();
        assert_eq!(c3.interval_count(), 64);
        assert_eq!(c3.total_duration().to_f64(), 64.0);
        // the canonical form keeps the duration
        assert_eq!(cdd(3, p()).unwrap().total_duration().to_f64(), 64.0);
        assert!(cdd(0, p()).is_err());
    }

    #[test]
    fn cudd_shapes() {
        let c1 = cudd(1, p()).unwrap();
        assert_eq!(c1.pulses(), &[X, Y, X, Y]);
        assert_eq!(f64s(c1.intervals()), vec![1.0; 4]);
        assert_eq!(cudd_raw(2, p()).unwrap().interval_count(), 12);
        assert_eq!(cudd_raw(3, p()).unwrap().interval_count(), 32);
        assert!(cudd(0, p()).is_err());
    }

    #[test]
    fn canonicalize_merges_coincident_and_identity_pulses() {
        let seq = PulseSequence::new(
            vec![p().real(1), p().zero(), p().real(2)],
            vec![Z, X, I],
            "t",
            p(),
        )
        .unwrap();
        let c = seq.canonicalize();
        assert_eq!(c.pulses(), &[Y, I]);
        let seq = PulseSequence::new(
            vec![p().real(1), p().zero(), p().real(2), p().real(1)],
            vec![X, X, Z, I],
            "t",
            p(),
        )
        .unwrap();
        let c = seq.canonicalize();
        assert_eq!(c.pulses(), &[Z, I]);
        assert_eq!(f64s(c.intervals()), vec![3.0, 1.0]);
        let q = qdd(2, 2, Z, X, p()).unwrap();
        assert_eq!(q.canonicalize(), q);
    }

    #[test]
    fn sequence_validation() {
        assert!(PulseSequence::new(vec![p().zero()], vec![X], "", p()).is_err());
        assert!(PulseSequence::new(vec![p().real(1)], vec![X, X], "", p()).is_err());
        assert!(PulseSequence::new(vec![p().real(1), p().real(-1)], vec![X, X], "", p()).is_err());
        assert!(PulseSequence::new(vec![], vec![], "", p()).is_err());
    }

    #[test]
    fn physical_times_qdd_one() {
        let ev = physical_pulse_times(1, 1, &p().real(1), p()).unwrap();
        let times: Vec<f64> = ev.iter().map(|e| e.time.to_f64()).collect();
        let axes: Vec<PulseAxis> = ev.iter().map(|e| e.axis).collect();
        assert!(close(&times, &[0.25, 0.5, 0.75, 1.0], 1e-15));
        assert_eq!(axes, vec![X, Y, X, Y]);
    }

    #[test]
    fn physical_times_qdd_two() {
        let ev = physical_pulse_times(2, 2, &p().real(1), p()).unwrap();
        assert_eq!(ev.len(), 8);
        let zs: Vec<f64> = ev.iter().filter(|e| e.axis == Z).map(|e| e.time.to_f64()).collect();
        assert!(close(&zs, &[0.25, 0.75], 1e-15));
    }

    #[test]
    fn physical_times_match_interval_representation() {
        let tol = p().tolerance(10);
        let total = p().real(3);
        for (m, n) in [(1, 1), (2, 2), (3, 2), (2, 3), (4, 4), (0, 3), (3, 0)] {
            let from_closed_form = physical_pulse_times(m, n, &total, p()).unwrap();
            let from_sequence = qdd(m, n, Z, X, p()).unwrap().events(&total);
            assert_eq!(from_closed_form.len(), from_sequence.len(), "m={m} n={n}");
            for (a, b) in from_closed_form.iter().zip(&from_sequence) {
                assert_eq!(a.axis, b.axis);
                assert!(Float::with_val(p().bits(), &a.time - &b.time).abs() < tol);
            }
        }
    }

    #[test]
    fn grid_matches_table_layout() {
        let g = grid_view(1, p());
        assert!(g.rows().iter().flatten().all(|c| c.duration == 1));
        // bottom-right cell is the first interval in the identity frame
        assert_eq!(g.cell(1, 1).frame, I);
        assert_eq!(g.cell(1, 0).frame, X);
        assert_eq!(g.cell(0, 1).frame, Z);
        assert_eq!(g.cell(0, 0).frame, Y);
        let g2 = grid_view(2, p());
        assert!((g2.cell(0, 0).duration.to_f64() - 1.0).abs() < 1e-15);
        assert!((g2.cell(1, 1).duration.to_f64() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn grid_flattening_reproduces_constructions() {
        for n in 0..6 {
            let g = grid_view(n, p());
            let rows = g.flatten_rows();
            let raw = qdd_raw(n, n, Z, X, p()).unwrap();
            assert_eq!(rows.pulses(), raw.pulses(), "n={n}");
            assert!(rows.approx_eq(&raw, &p().tolerance(10)));
            let cols = g.flatten_columns();
            let transposed = qdd_raw(n, n, X, Z, p()).unwrap();
            assert_eq!(cols.pulses(), transposed.pulses(), "n={n}");
            assert!(cols.approx_eq(&transposed, &p().tolerance(10)));
        }
    }

    #[test]
    fn csv_round_trip() {
        let one = p().real(1);
        for seq in [
            qdd(3, 2, Z, X, p()).unwrap(),
            cdd(2, p()).unwrap(),
            udd(4, X, p()).unwrap(),
            cudd(2, p()).unwrap(),
        ] {
            let text = seq.to_csv(&one);
            let back = PulseSequence::from_csv(&text, &one, p()).unwrap();
            assert!(back.equivalent(&seq), "{}", seq.label());
        }
    }

    #[test]
    fn csv_merges_simultaneous_rows() {
        let text = "time,axis\n0.5,Z\n0.5,X\n1,Y\n";
        let seq = PulseSequence::from_csv(text, &p().real(1), p()).unwrap().canonicalize();
        assert_eq!(seq.pulses(), &[Y, Y]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let one = p().real(1);
        let err = PulseSequence::from_csv("time,axis\n0.5,X\n0.25,Q\n", &one, p()).unwrap_err();
        assert!(matches!(err, SequenceError::Csv { line: 3, .. }), "{err:?}");
        let err = PulseSequence::from_csv("time,axis\n0.5,X\n0.25,X\n", &one, p()).unwrap_err();
        assert!(matches!(err, SequenceError::Csv { line: 3, .. }), "{err:?}");
        let err = PulseSequence::from_csv("t,a\n0.5,X\n", &one, p()).unwrap_err();
        assert!(matches!(err, SequenceError::Csv { line: 1, .. }));
        let err = PulseSequence::from_csv("time,axis\nabc,X\n", &one, p()).unwrap_err();
        assert!(matches!(err, SequenceError::Csv { line: 2, .. }));
        let err = PulseSequence::from_csv("time,axis\n1.5,X\n", &one, p()).unwrap_err();
        assert!(matches!(err, SequenceError::Csv { line: 2, .. }));
    }

    #[test]
    fn scheme_names_parse() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("xdd".parse::<Scheme>().is_err());
    }
}
