//! Configurable-precision complex linear algebra.
//!
//! Everything here is built on MPFR floats (via `rug`). Matrices are dense and
//! row-major; the sizes of interest are at most a few hundred rows, so there is
//! no attempt at blocking or sparsity.
//!
//! Tolerances are expressed relative to the working precision: a check "with
//! `g` guard digits" accepts deviations up to `10^-(digits - g)`.

use std::fmt;

use rug::float::Constant;
use rug::ops::Pow;
use rug::{Complex, Float};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Arbitrary-precision real scalar.
pub type HPReal = Float;
/// Arbitrary-precision complex scalar.
pub type HPComplex = Complex;

pub const DEFAULT_DIGITS: u32 = 120;

/// Extra binary digits carried beyond the requested decimal precision.
const GUARD_BITS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpError {
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state length {0} is not 2^(1 + n_bath)")]
    BadStateLength(usize),
    #[error("cannot parse {0:?} as a number")]
    Parse(String),
    #[error("precision must be at least 20 decimal digits, got {0}")]
    PrecisionTooLow(u32),
}

/// Working precision in decimal digits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Precision {
    digits: u32,
}

impl Default for Precision {
    fn default() -> Self {
        Precision {
            digits: DEFAULT_DIGITS,
        }
    }
}

impl Precision {
    pub fn new(digits: u32) -> Result<Self, HpError> {
        if digits < 20 {
            return Err(HpError::PrecisionTooLow(digits));
        }
        Ok(Precision { digits })
    }

    pub fn digits(self) -> u32 {
        self.digits
    }

    /// Binary precision used for every float at this setting.
    pub fn bits(self) -> u32 {
        (self.digits as f64 * std::f64::consts::LOG2_10).ceil() as u32 + GUARD_BITS
    }

    pub fn real<T>(self, value: T) -> Float
    where
        Float: rug::Assign<T>,
    {
        Float::with_val(self.bits(), value)
    }

    pub fn zero(self) -> Float {
        Float::new(self.bits())
    }

    pub fn pi(self) -> Float {
        Float::with_val(self.bits(), Constant::Pi)
    }

    /// `10^-(digits - guard)`.
    pub fn tolerance(self, guard: u32) -> Float {
        let exp = -(self.digits.saturating_sub(guard) as i32);
        Float::with_val(self.bits(), 10).pow(exp)
    }

    /// Parses a decimal string (`"1e-6"`, `"0.25"`) at full precision.
    pub fn parse(self, text: &str) -> Result<Float, HpError> {
        let parsed = Float::parse(text.trim()).map_err(|_| HpError::Parse(text.to_string()))?;
        Ok(Float::with_val(self.bits(), parsed))
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} digits", self.digits)
    }
}

/// Formats `value` in scientific notation with `sig` significant digits.
pub fn to_sci_string(value: &Float, sig: usize) -> String {
    if value.is_zero() {
        return "0".to_string();
    }
    if value.is_infinite() {
        return if value.is_sign_negative() { "-inf" } else { "inf" }.to_string();
    }
    value.to_string_radix(10, Some(sig))
}

fn complex_abs_f64(z: &Complex) -> f64 {
    z.real().to_f64().hypot(z.imag().to_f64())
}

/// Dense complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct HPMatrix {
    rows: usize,
    cols: usize,
    bits: u32,
    data: Vec<Complex>,
}

impl fmt::Debug for HPMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "HPMatrix {}x{} @ {} bits", self.rows, self.cols, self.bits)?;
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|c| {
                    let z = self.get(r, c);
                    format!("{:.6}{:+.6}i", z.real().to_f64(), z.imag().to_f64())
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl HPMatrix {
    pub fn zeros(rows: usize, cols: usize, prec: Precision) -> Self {
        Self::zeros_bits(rows, cols, prec.bits())
    }

    fn zeros_bits(rows: usize, cols: usize, bits: u32) -> Self {
        HPMatrix {
            rows,
            cols,
            bits,
            data: (0..rows * cols).map(|_| Complex::new(bits)).collect(),
        }
    }

    pub fn identity(n: usize, prec: Precision) -> Self {
        Self::identity_bits(n, prec.bits())
    }

    fn identity_bits(n: usize, bits: u32) -> Self {
        let mut m = Self::zeros_bits(n, n, bits);
        for i in 0..n {
            m.data[i * n + i] += 1;
        }
        m
    }

    /// Builds a matrix from `(re, im)` pairs given row by row.
    pub fn from_f64(rows: usize, cols: usize, entries: &[(f64, f64)], prec: Precision) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count must be rows*cols");
        HPMatrix {
            rows,
            cols,
            bits: prec.bits(),
            data: entries
                .iter()
                .map(|&(re, im)| Complex::with_val(prec.bits(), (re, im)))
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &Complex {
        &self.data[r * self.cols + c]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut Complex {
        &mut self.data[r * self.cols + c]
    }

    pub fn entries(&self) -> &[Complex] {
        &self.data
    }

    pub fn adjoint(&self) -> HPMatrix {
        let mut out = Self::zeros_bits(self.cols, self.rows, self.bits);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let z = out.get_mut(c, r);
                z.assign(self.get(r, c));
                z.conj_mut();
            }
        }
        out
    }

    pub fn matmul(&self, other: &HPMatrix) -> Result<HPMatrix, HpError> {
        if self.cols != other.rows {
            return Err(HpError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let bits = self.bits.max(other.bits);
        let mut out = Self::zeros_bits(self.rows, other.cols, bits);
        let mut re = Float::new(bits);
        let mut im = Float::new(bits);
        for r in 0..self.rows {
            for c in 0..other.cols {
                re.assign(0);
                im.assign(0);
                for k in 0..self.cols {
                    let a = self.get(r, k);
                    let b = other.get(k, c);
                    complex_fma(&mut re, &mut im, a, b);
                }
                let z = out.get_mut(r, c);
                z.mut_real().assign(&re);
                z.mut_imag().assign(&im);
            }
        }
        Ok(out)
    }

    pub fn apply(&self, v: &StateVector) -> Result<StateVector, HpError> {
        if self.cols != v.dim() {
            return Err(HpError::DimensionMismatch(format!(
                "{}x{} matrix applied to length-{} vector",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        let mut out = StateVector::zeros_bits(self.rows, self.bits.max(v.bits()));
        self.apply_into(&v.amps, &mut out.amps);
        Ok(out)
    }

    fn apply_into(&self, src: &[Complex], dst: &mut [Complex]) {
        for (r, slot) in dst.iter_mut().enumerate() {
            let (re, im) = slot.as_mut_real_imag();
            re.assign(0);
            im.assign(0);
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (a, b) in row.iter().zip(src) {
                complex_fma(re, im, a, b);
            }
        }
    }

    /// `self += scale * other` for a real scale.
    pub fn add_scaled(&mut self, other: &HPMatrix, scale: &Float) -> Result<(), HpError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(HpError::DimensionMismatch(format!(
                "{}x{} plus {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            let (re, im) = a.as_mut_real_imag();
            *re += b.real() * scale;
            *im += b.imag() * scale;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: &Float) -> HPMatrix {
        let mut out = self.clone();
        for z in &mut out.data {
            let (re, im) = z.as_mut_real_imag();
            *re *= scale;
            *im *= scale;
        }
        out
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &HPMatrix) -> Float {
        let bits = self.bits.max(other.bits);
        let mut worst = Float::new(bits);
        let mut d = Complex::new(bits);
        for (a, b) in self.data.iter().zip(&other.data) {
            d.assign(a - b);
            let m = Float::with_val(bits, d.abs_ref());
            if m > worst {
                worst = m;
            }
        }
        worst
    }

    pub fn max_abs(&self) -> Float {
        let mut worst = Float::new(self.bits);
        for z in &self.data {
            let m = Float::with_val(self.bits, z.abs_ref());
            if m > worst {
                worst = m;
            }
        }
        worst
    }

    /// Maximum absolute column sum, in double precision.
    pub fn norm1_f64(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| complex_abs_f64(self.get(r, c))).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn hermitian_deviation(&self) -> Float {
        self.max_abs_diff(&self.adjoint())
    }

    /// Checks `H = H†` to `10^-(digits - 15)` relative to the largest entry.
    pub fn check_hermitian(&self, prec: Precision) -> Result<(), HpError> {
        if !self.is_square() {
            return Err(HpError::DimensionMismatch(format!(
                "{}x{} is not square",
                self.rows, self.cols
            )));
        }
        let dev = self.hermitian_deviation();
        let scale = self.max_abs().max(&Float::with_val(self.bits, 1));
        let tol = prec.tolerance(15) * scale;
        if dev > tol {
            return Err(HpError::NotHermitian {
                deviation: dev.to_f64(),
            });
        }
        Ok(())
    }

    pub fn to_f64_entries(&self) -> Vec<(f64, f64)> {
        self.data
            .iter()
            .map(|z| (z.real().to_f64(), z.imag().to_f64()))
            .collect()
    }

    fn with_bits(&self, bits: u32) -> HPMatrix {
        HPMatrix {
            rows: self.rows,
            cols: self.cols,
            bits,
            data: self.data.iter().map(|z| Complex::with_val(bits, z)).collect(),
        }
    }

    /// Multiplies by `-i * t`, at `bits` precision.
    fn times_minus_i(&self, t: &Float, bits: u32) -> HPMatrix {
        let mut out = Self::zeros_bits(self.rows, self.cols, bits);
        for (dst, src) in out.data.iter_mut().zip(&self.data) {
            let (re, im) = dst.as_mut_real_imag();
            // -i t (a + ib) = t b - i t a
            re.assign(src.imag() * t);
            im.assign(src.real() * t);
            im.neg_assign();
        }
        out
    }
}

use rug::ops::NegAssign;
use rug::Assign;

/// `(re, im) += a * b`.
#[inline]
fn complex_fma(re: &mut Float, im: &mut Float, a: &Complex, b: &Complex) {
    *re += a.real() * b.real();
    *re -= a.imag() * b.imag();
    *im += a.real() * b.imag();
    *im += a.imag() * b.real();
}

/// Tensor product; dimensions multiply.
pub fn kron(a: &HPMatrix, b: &HPMatrix) -> HPMatrix {
    let bits = a.bits.max(b.bits);
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = HPMatrix::zeros_bits(rows, cols, bits);
    for ar in 0..a.rows {
        for ac in 0..a.cols {
            let x = a.get(ar, ac);
            if x.is_zero() {
                continue;
            }
            for br in 0..b.rows {
                for bc in 0..b.cols {
                    let dst = out.get_mut(ar * b.rows + br, ac * b.cols + bc);
                    dst.assign(x * b.get(br, bc));
                }
            }
        }
    }
    out
}

/// Number of Taylor terms `k` such that `theta^k / k!` drops below `2^-bits`.
fn taylor_terms(theta: f64, bits: u32) -> usize {
    let target = -(bits as f64) * std::f64::consts::LN_2;
    if theta == 0.0 {
        return 1;
    }
    let ln_theta = theta.ln();
    let mut log_term = 0.0;
    let mut k = 0usize;
    loop {
        k += 1;
        log_term += ln_theta - (k as f64).ln();
        // geometric tail once k > 2 theta
        if (k as f64) > 2.0 * theta && log_term + std::f64::consts::LN_2 < target {
            return k;
        }
        if k > 100_000 {
            return k;
        }
    }
}

/// Matrix products needed to evaluate a degree-`k` polynomial by Paterson–Stockmeyer.
fn ps_products(k: usize) -> usize {
    let q = ps_block(k);
    (q - 1) + (k + 1).div_ceil(q) - 1
}

fn ps_block(k: usize) -> usize {
    ((k + 1) as f64).sqrt().ceil().max(1.0) as usize
}

/// Squarings and Taylor degree for `exp` of a matrix with 1-norm `theta`,
/// chosen to minimize the number of matrix products.
fn exp_plan(theta: f64, bits: u32) -> (u32, usize) {
    let first = if theta > 1.0 { theta.log2().ceil() as u32 } else { 0 };
    (first..first + 40)
        .map(|s| (s, taylor_terms(theta / 2f64.powi(s as i32), bits + s + 16)))
        .min_by_key(|&(s, k)| s as usize + ps_products(k))
        .expect("non-empty range")
}

/// Estimated matrix products spent by [`mat_exp_i`] for `||H t||_1 = theta`.
pub fn mat_exp_cost(theta: f64, bits: u32) -> usize {
    let (s, k) = exp_plan(theta, bits);
    s as usize + ps_products(k)
}

/// `exp(-i H t)` by scaling and squaring with a truncated Taylor series.
///
/// The series is summed at extra precision so that the `s` squarings do not
/// eat into the requested digits; the result is rounded back to `H`'s precision.
pub fn mat_exp_i(h: &HPMatrix, t: &Float, prec: Precision) -> Result<HPMatrix, HpError> {
    h.check_hermitian(prec)?;
    let n = h.rows;
    let theta = h.norm1_f64() * t.to_f64().abs();
    let (squarings, terms) = exp_plan(theta, h.bits);
    let bits = h.bits + squarings + 16;
    let mut scaled_t = Float::with_val(bits, t);
    scaled_t >>= squarings;
    let a = h.times_minus_i(&scaled_t, bits);

    // 1/k! for k = 0..=terms
    let mut coeffs = Vec::with_capacity(terms + 1);
    let mut c = Float::with_val(bits, 1);
    coeffs.push(c.clone());
    for k in 1..=terms {
        c /= k as u64;
        coeffs.push(c.clone());
    }

    // Paterson–Stockmeyer: powers A^0..A^q, then Horner in A^q over blocks
    let q = ps_block(terms);
    let mut powers = vec![HPMatrix::identity_bits(n, bits), a];
    for i in 2..=q {
        let next = powers[i - 1].matmul(&powers[1])?;
        powers.push(next);
    }
    let blocks = (terms + 1).div_ceil(q);
    let block_sum = |j: usize| {
        let mut acc = HPMatrix::zeros_bits(n, n, bits);
        for (i, power) in powers.iter().take(q).enumerate() {
            let k = j * q + i;
            if k > terms {
                break;
            }
            for (dst, src) in acc.data.iter_mut().zip(&power.data) {
                *dst += Complex::with_val(bits, src * &coeffs[k]);
            }
        }
        acc
    };
    let mut result = block_sum(blocks - 1);
    for j in (0..blocks - 1).rev() {
        result = result.matmul(&powers[q])?;
        for (dst, src) in result.data.iter_mut().zip(block_sum(j).data) {
            *dst += src;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    Ok(result.with_bits(h.bits))
}

/// `exp(-i H t) psi` without forming the propagator.
///
/// The interval is split into substeps with `||H dt||_1 <= 2`; each substep sums
/// the Taylor series of the action directly on the vector.
pub fn exp_i_apply(
    h: &HPMatrix,
    t: &Float,
    psi: &StateVector,
    prec: Precision,
) -> Result<StateVector, HpError> {
    if h.cols != psi.dim() || !h.is_square() {
        return Err(HpError::DimensionMismatch(format!(
            "{}x{} Hamiltonian on length-{} state",
            h.rows,
            h.cols,
            psi.dim()
        )));
    }
    h.check_hermitian(prec)?;
    let theta = h.norm1_f64() * t.to_f64().abs();
    let steps = (theta / 2.0).ceil().max(1.0) as u64;
    let bits = h.bits + 16 + (64 - steps.leading_zeros());
    let mut dt = Float::with_val(bits, t);
    dt /= steps;
    let a = h.times_minus_i(&dt, bits);
    let terms = taylor_terms(theta / steps as f64, bits);

    let dim = psi.dim();
    let mut acc: Vec<Complex> = psi.amps.iter().map(|z| Complex::with_val(bits, z)).collect();
    let mut term: Vec<Complex> = (0..dim).map(|_| Complex::new(bits)).collect();
    let mut next: Vec<Complex> = (0..dim).map(|_| Complex::new(bits)).collect();
    for _ in 0..steps {
        for (t, s) in term.iter_mut().zip(&acc) {
            t.assign(s);
        }
        for k in 1..=terms {
            a.apply_into(&term, &mut next);
            let inv = Float::with_val(bits, k).recip();
            for (x, y) in next.iter_mut().zip(&mut acc) {
                *x *= &inv;
                *y += &*x;
            }
            std::mem::swap(&mut term, &mut next);
        }
    }
    Ok(StateVector {
        amps: acc.into_iter().map(|z| Complex::with_val(h.bits, z)).collect(),
    })
}

/// Upper estimate of the largest absolute eigenvalue of a Hermitian matrix.
///
/// Power iteration on `H^2` in double precision; the result is only used to
/// gate the convergence condition, so `f64` is ample.
pub fn spectral_norm_estimate(h: &HPMatrix) -> f64 {
    let n = h.rows;
    if n == 0 {
        return 0.0;
    }
    let m: Vec<(f64, f64)> = h.to_f64_entries();
    let apply = |v: &[(f64, f64)]| -> Vec<(f64, f64)> {
        (0..n)
            .map(|r| {
                let mut re = 0.0;
                let mut im = 0.0;
                for c in 0..n {
                    let (a, b) = m[r * n + c];
                    let (x, y) = v[c];
                    re += a * x - b * y;
                    im += a * y + b * x;
                }
                (re, im)
            })
            .collect()
    };
    let norm = |v: &[(f64, f64)]| v.iter().map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
    // deterministic, generic start vector
    let mut v: Vec<(f64, f64)> = (0..n)
        .map(|i| (1.0 + 0.37 * (i as f64).sin(), 0.21 * (i as f64 * 1.7).cos()))
        .collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|z| {
        z.0 /= nv;
        z.1 /= nv;
    });
    let mut estimate = 0.0f64;
    for _ in 0..20_000 {
        let w = apply(&apply(&v));
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw.sqrt();
        v = w.into_iter().map(|(a, b)| (a / nw, b / nw)).collect();
        let done = (next - estimate).abs() <= 1e-12 * next;
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

/// Complex amplitude vector.
#[derive(Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<Complex>,
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateVector")
            .field("dim", &self.dim())
            .field("bits", &self.bits())
            .finish()
    }
}

impl StateVector {
    pub fn new(amps: Vec<Complex>) -> Self {
        StateVector { amps }
    }

    fn zeros_bits(dim: usize, bits: u32) -> Self {
        StateVector {
            amps: (0..dim).map(|_| Complex::new(bits)).collect(),
        }
    }

    /// Computational basis state `|index>`.
    pub fn basis(dim: usize, index: usize, prec: Precision) -> Self {
        let mut v = Self::zeros_bits(dim, prec.bits());
        v.amps[index] += 1;
        v
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn bits(&self) -> u32 {
        self.amps.first().map(|z| z.prec().0).unwrap_or(64)
    }

    pub fn amplitudes(&self) -> &[Complex] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex] {
        &mut self.amps
    }

    pub fn norm(&self) -> Float {
        let mut sum = Float::new(self.bits());
        for z in &self.amps {
            sum += z.real() * z.real();
            sum += z.imag() * z.imag();
        }
        sum.sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        for z in &mut self.amps {
            *z /= &n;
        }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &StateVector) -> Float {
        let bits = self.bits().max(other.bits());
        let mut worst = Float::new(bits);
        for (a, b) in self.amps.iter().zip(&other.amps) {
            let d = Complex::with_val(bits, a - b);
            let m = Float::with_val(bits, d.abs_ref());
            if m > worst {
                worst = m;
            }
        }
        worst
    }
}

/// Reduced 2x2 density matrix of the system qubit.
#[derive(Clone, PartialEq)]
pub struct DensityMatrix {
    /// row-major `[r00, r01, r10, r11]`
    entries: [Complex; 4],
}

impl fmt::Debug for DensityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.bloch();
        write!(
            f,
            "DensityMatrix(bloch = [{:.6e}, {:.6e}, {:.6e}])",
            b[0].to_f64(),
            b[1].to_f64(),
            b[2].to_f64()
        )
    }
}

impl DensityMatrix {
    pub fn from_entries(entries: [Complex; 4]) -> Self {
        DensityMatrix { entries }
    }

    /// `|psi><psi|` for a single-qubit pure state `a|0> + b|1>`.
    pub fn pure(a: &Complex, b: &Complex) -> Self {
        let bits = a.prec().0.max(b.prec().0);
        let outer = |x: &Complex, y: &Complex| {
            let mut yc = Complex::with_val(bits, y);
            yc.conj_mut();
            Complex::with_val(bits, x * &yc)
        };
        DensityMatrix {
            entries: [outer(a, a), outer(a, b), outer(b, a), outer(b, b)],
        }
    }

    /// `(I + r . sigma) / 2`.
    pub fn from_bloch(r: &[Float; 3]) -> Self {
        let bits = r[0].prec();
        let half = Float::with_val(bits, 0.5);
        let d00 = Float::with_val(bits, 1 + &r[2]) * &half;
        let d11 = Float::with_val(bits, 1 - &r[2]) * &half;
        let re = Float::with_val(bits, &r[0] * &half);
        let im = Float::with_val(bits, &r[1] * &half);
        let neg_im = Float::with_val(bits, -&im);
        DensityMatrix {
            entries: [
                Complex::with_val(bits, (d00, 0)),
                Complex::with_val(bits, (re.clone(), neg_im)),
                Complex::with_val(bits, (re, im)),
                Complex::with_val(bits, (d11, 0)),
            ],
        }
    }

    pub fn maximally_mixed(prec: Precision) -> Self {
        let z = [prec.zero(), prec.zero(), prec.zero()];
        Self::from_bloch(&z)
    }

    pub fn entry(&self, r: usize, c: usize) -> &Complex {
        &self.entries[r * 2 + c]
    }

    pub fn bits(&self) -> u32 {
        self.entries[0].prec().0
    }

    pub fn trace(&self) -> Complex {
        Complex::with_val(self.bits(), &self.entries[0] + &self.entries[3])
    }

    /// Bloch vector `(2 Re r01, -2 Im r01, r00 - r11)`.
    pub fn bloch(&self) -> [Float; 3] {
        let bits = self.bits();
        let x = Float::with_val(bits, self.entries[1].real() * 2);
        let y = Float::with_val(bits, self.entries[1].imag() * -2);
        let z = Float::with_val(bits, self.entries[0].real() - self.entries[3].real());
        [x, y, z]
    }

    /// Largest deviation from `rho = rho†`.
    pub fn hermitian_deviation(&self) -> Float {
        let bits = self.bits();
        let mut c = Complex::with_val(bits, &self.entries[2]);
        c.conj_mut();
        let off = Float::with_val(bits, Complex::with_val(bits, &self.entries[1] - &c).abs_ref());
        let d0 = Float::with_val(bits, self.entries[0].imag().abs_ref());
        let d1 = Float::with_val(bits, self.entries[3].imag().abs_ref());
        off.max(&d0).max(&d1)
    }

    /// Real determinant, which for a Hermitian 2x2 is the product of eigenvalues.
    pub fn determinant(&self) -> Float {
        let bits = self.bits();
        let diag = Float::with_val(bits, self.entries[0].real() * self.entries[3].real());
        let off = Float::with_val(bits, self.entries[1].norm_ref());
        Float::with_val(bits, &diag - &off)
    }

    /// Smallest eigenvalue, `(tr - sqrt(tr^2 - 4 det)) / 2`.
    pub fn min_eigenvalue(&self) -> Float {
        let bits = self.bits();
        let tr = Float::with_val(bits, self.entries[0].real() + self.entries[3].real());
        let det = self.determinant();
        let mut disc = Float::with_val(bits, &tr * &tr) - Float::with_val(bits, &det * 4);
        if disc.is_sign_negative() {
            disc.assign(0);
        }
        (tr - disc.sqrt()) / 2
    }

    /// Unit trace, Hermitian, positive semidefinite within `10^-(digits-15)`.
    pub fn is_valid(&self, prec: Precision) -> bool {
        let tol = prec.tolerance(15);
        let tr = self.trace();
        let tr_dev = Float::with_val(self.bits(), Complex::with_val(self.bits(), &tr - 1).abs_ref());
        tr_dev <= tol && self.hermitian_deviation() <= tol && self.min_eigenvalue() >= -tol
    }

    /// `tr(rho^2)`.
    pub fn purity(&self) -> Float {
        let bits = self.bits();
        let r = self.bloch();
        let sq = Float::with_val(bits, &r[0] * &r[0])
            + Float::with_val(bits, &r[1] * &r[1])
            + Float::with_val(bits, &r[2] * &r[2]);
        (sq + 1u32) / 2u32
    }
}

/// Reduced state of the system qubit, which is the first (most significant)
/// tensor factor of `psi`.
pub fn partial_trace_bath(psi: &StateVector, n_bath: usize) -> Result<DensityMatrix, HpError> {
    let len = psi.dim();
    if !len.is_power_of_two() || len != 1usize << (n_bath + 1) {
        return Err(HpError::BadStateLength(len));
    }
    let half = len / 2;
    let bits = psi.bits();
    let amps = psi.amplitudes();
    let mut entries: [Complex; 4] = std::array::from_fn(|_| Complex::new(bits));
    for (idx, (a, b)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let (re, im) = entries[idx].as_mut_real_imag();
        for k in 0..half {
            let x = &amps[a * half + k];
            let y = &amps[b * half + k];
            // x * conj(y)
            *re += x.real() * y.real();
            *re += x.imag() * y.imag();
            *im += x.imag() * y.real();
            *im -= x.real() * y.imag();
        }
    }
    Ok(DensityMatrix { entries })
}

/// `1/2 ||rho1 - rho2||_1`, via the Bloch-vector difference.
pub fn trace_distance(
    rho1: &DensityMatrix,
    rho2: &DensityMatrix,
    prec: Precision,
) -> Result<Float, HpError> {
    let bits = rho1.bits().max(rho2.bits());
    let diff = DensityMatrix {
        entries: std::array::from_fn(|i| Complex::with_val(bits, &rho1.entries[i] - &rho2.entries[i])),
    };
    let dev = diff.hermitian_deviation();
    if dev > prec.tolerance(15) {
        return Err(HpError::NotHermitian {
            deviation: dev.to_f64(),
        });
    }
    let r = diff.bloch();
    let sq = Float::with_val(bits, &r[0] * &r[0])
        + Float::with_val(bits, &r[1] * &r[1])
        + Float::with_val(bits, &r[2] * &r[2]);
    Ok(sq.sqrt() / 2u32)
}

/// Uhlmann fidelity `tr sqrt(sqrt(rho1) rho2 sqrt(rho1))`.
///
/// For qubits, `F^2 = tr(rho1 rho2) + 2 sqrt(det rho1 det rho2)`.
pub fn fidelity(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Float {
    let bits = rho1.bits().max(rho2.bits());
    let mut overlap = Float::new(bits);
    for r in 0..2 {
        for c in 0..2 {
            let prod = Complex::with_val(bits, rho1.entry(r, c) * rho2.entry(c, r));
            overlap += prod.real();
        }
    }
    let mut dets = rho1.determinant() * rho2.determinant();
    if dets.is_sign_negative() {
        dets.assign(0);
    }
    let mut f2 = overlap + dets.sqrt() * 2u32;
    if f2.is_sign_negative() {
        f2.assign(0);
    }
    let f = f2.sqrt();
    f.min(&Float::with_val(bits, 1))
}
