//! Random spin-bath model.
//!
//! The joint Hamiltonian is
//!
//! ```text
//! H = beta (I ⊗ B_I) + J (X ⊗ B_X + Y ⊗ B_Y + Z ⊗ B_Z)
//! ```
//!
//! with the system qubit as the first tensor factor. Each bath operator is a
//! sum over ordered pairs `i != j` of bath qubits and Pauli labels `k, l` of
//! `r * (sigma_k at site i)(sigma_l at site j)`, with one independent uniform
//! coefficient `r in [0, 1)` per `(alpha, i, j, k, l)`.
//!
//! # Random streams
//!
//! Realization `r` of master seed `s` draws from
//! `ChaCha20Rng::seed_from_u64(s)` with `set_stream(r)` (`rand_chacha` 0.3).
//! Within a stream, bath coefficients are drawn first (alpha in order I, X, Y,
//! Z, then lexicographic `(i, j, k, l)` with labels ordered I, X, Y, Z), followed
//! by the initial state.
//!
//! A uniform variate at `b` bits consumes `ceil(b / 64)` words `w_1, w_2, ...`
//! and equals `sum_k w_k 2^(-64 k)`. Normal variates use Box–Muller on pairs
//! `(u1, u2)`: `sqrt(-2 ln(1 - u1)) * (cos, sin)(2 pi u2)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rug::{Complex, Float};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpmath::{kron, HPMatrix, HpError, Precision, StateVector};
use crate::sequences::PulseAxis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("bath needs at least two qubits, got {0}")]
    BathTooSmall(usize),
    #[error("bath of {0} qubits is beyond the supported size")]
    BathTooLarge(usize),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("tau must be positive")]
    NonPositiveTau,
    #[error("coefficient site out of range: {0}")]
    BadSite(String),
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error(transparent)]
    Math(#[from] HpError),
}

pub const DEFAULT_BATH_QUBITS: usize = 4;
const MAX_BATH_QUBITS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BathSpec {
    pub n_bath: usize,
    pub seed: u64,
}

impl BathSpec {
    pub fn new(n_bath: usize, seed: u64) -> Result<Self, ModelError> {
        if n_bath < 2 {
            return Err(ModelError::BathTooSmall(n_bath));
        }
        if n_bath > MAX_BATH_QUBITS {
            return Err(ModelError::BathTooLarge(n_bath));
        }
        Ok(BathSpec { n_bath, seed })
    }

    /// Dimension of the joint system-bath space.
    pub fn joint_dim(&self) -> usize {
        1 << (self.n_bath + 1)
    }
}

/// Random stream for one realization.
pub fn substream(seed: u64, realization: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(realization);
    rng
}

/// Uniform variate in `[0, 1)` carrying the full working precision.
pub fn uniform(rng: &mut impl RngCore, prec: Precision) -> Float {
    let bits = prec.bits();
    let words = bits.div_ceil(64);
    let mut value = Float::new(bits);
    for k in 1..=words {
        let mut w = Float::with_val(bits, rng.next_u64());
        w >>= 64 * k;
        value += w;
    }
    value
}

/// Pair of independent standard normals by Box–Muller.
pub fn normal_pair(rng: &mut impl RngCore, prec: Precision) -> (Float, Float) {
    let bits = prec.bits();
    let u1 = uniform(rng, prec);
    let u2 = uniform(rng, prec);
    let one_minus = Float::with_val(bits, 1 - &u1); // in (0, 1]
    let radius = (one_minus.ln() * -2i32).sqrt();
    let angle = prec.pi() * 2u32 * u2;
    let (s, c) = angle.sin_cos(Float::new(bits));
    (Float::with_val(bits, &radius * &c), radius * s)
}

/// One coefficient `r_{kl}^alpha` of the pair `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BathCoefficient {
    pub alpha: PulseAxis,
    pub i: usize,
    pub j: usize,
    pub k: PulseAxis,
    pub l: PulseAxis,
    pub value: Float,
}

#[derive(Serialize, Deserialize)]
struct CoefficientRecord {
    alpha: String,
    i: usize,
    j: usize,
    k: String,
    l: String,
    value: String,
}

/// The four bath operators together with the coefficients that built them.
#[derive(Clone, Debug)]
pub struct BathOperators {
    n_bath: usize,
    coefficients: Vec<BathCoefficient>,
    /// indexed I, X, Y, Z
    ops: [HPMatrix; 4],
}

fn axis_index(a: PulseAxis) -> usize {
    match a {
        PulseAxis::Identity => 0,
        PulseAxis::X => 1,
        PulseAxis::Y => 2,
        PulseAxis::Z => 3,
    }
}

/// `<row|sigma|col>` for a single qubit, as `(re, im)`.
fn pauli_entry(a: PulseAxis, row: usize, col: usize) -> (i32, i32) {
    match (a, row, col) {
        (PulseAxis::Identity, r, c) if r == c => (1, 0),
        (PulseAxis::X, r, c) if r != c => (1, 0),
        (PulseAxis::Y, 0, 1) => (0, -1),
        (PulseAxis::Y, 1, 0) => (0, 1),
        (PulseAxis::Z, 0, 0) => (1, 0),
        (PulseAxis::Z, 1, 1) => (-1, 0),
        _ => (0, 0),
    }
}

/// `target += value * (sigma_k at site i)(sigma_l at site j)`; site 0 is the
/// most significant qubit of the bath register.
fn add_pair_term(
    target: &mut HPMatrix,
    n_bath: usize,
    (i, k): (usize, PulseAxis),
    (j, l): (usize, PulseAxis),
    value: &Float,
) {
    let dim = 1usize << n_bath;
    let shift = |site: usize| n_bath - 1 - site;
    let flips = |site: usize, a: PulseAxis| {
        if matches!(a, PulseAxis::X | PulseAxis::Y) {
            1usize << shift(site)
        } else {
            0
        }
    };
    // i == j never happens for pair terms, so the two factors act on distinct bits
    let mask = flips(i, k) ^ flips(j, l);
    for row in 0..dim {
        let col = row ^ mask;
        let (ar, ai) = pauli_entry(k, (row >> shift(i)) & 1, (col >> shift(i)) & 1);
        let (br, bi) = pauli_entry(l, (row >> shift(j)) & 1, (col >> shift(j)) & 1);
        let re = ar * br - ai * bi;
        let im = ar * bi + ai * br;
        let (dre, dim_) = target.get_mut(row, col).as_mut_real_imag();
        if re != 0 {
            *dre += Float::with_val(value.prec(), value * re);
        }
        if im != 0 {
            *dim_ += Float::with_val(value.prec(), value * im);
        }
    }
}

impl BathOperators {
    /// Builds the operators from an explicit coefficient list.
    pub fn from_coefficients(
        n_bath: usize,
        coefficients: Vec<BathCoefficient>,
        prec: Precision,
    ) -> Result<Self, ModelError> {
        if n_bath < 2 {
            return Err(ModelError::BathTooSmall(n_bath));
        }
        let dim = 1usize << n_bath;
        let mut ops: [HPMatrix; 4] = std::array::from_fn(|_| HPMatrix::zeros(dim, dim, prec));
        for c in &coefficients {
            if c.i >= n_bath || c.j >= n_bath || c.i == c.j {
                return Err(ModelError::BadSite(format!("({}, {})", c.i, c.j)));
            }
            add_pair_term(
                &mut ops[axis_index(c.alpha)],
                n_bath,
                (c.i, c.k),
                (c.j, c.l),
                &c.value,
            );
        }
        Ok(BathOperators {
            n_bath,
            coefficients,
            ops,
        })
    }

    pub fn n_bath(&self) -> usize {
        self.n_bath
    }

    pub fn coefficients(&self) -> &[BathCoefficient] {
        &self.coefficients
    }

    /// `B_alpha`.
    pub fn operator(&self, alpha: PulseAxis) -> &HPMatrix {
        &self.ops[axis_index(alpha)]
    }

    /// Coefficient tensor as JSON records with decimal-string values.
    pub fn coefficients_json(&self) -> String {
        let records: Vec<CoefficientRecord> = self
            .coefficients
            .iter()
            .map(|c| CoefficientRecord {
                alpha: c.alpha.symbol().into(),
                i: c.i,
                j: c.j,
                k: c.k.symbol().into(),
                l: c.l.symbol().into(),
                value: c.value.to_string_radix(10, None),
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("records serialize")
    }
}

/// Draws every coefficient of one realization from `rng`, in the pinned order.
pub fn draw_bath_operators(
    n_bath: usize,
    rng: &mut impl RngCore,
    prec: Precision,
) -> Result<BathOperators, ModelError> {
    if n_bath < 2 {
        return Err(ModelError::BathTooSmall(n_bath));
    }
    let mut coefficients = Vec::with_capacity(4 * n_bath * (n_bath - 1) * 16);
    for alpha in PulseAxis::ALL {
        for i in 0..n_bath {
            for j in 0..n_bath {
                if i == j {
                    continue;
                }
                for k in PulseAxis::ALL {
                    for l in PulseAxis::ALL {
                        coefficients.push(BathCoefficient {
                            alpha,
                            i,
                            j,
                            k,
                            l,
                            value: uniform(rng, prec),
                        });
                    }
                }
            }
        }
    }
    BathOperators::from_coefficients(n_bath, coefficients, prec)
}

/// Bath operators of realization 0 of `spec`.
pub fn random_bath_operators(spec: &BathSpec, prec: Precision) -> Result<BathOperators, ModelError> {
    draw_bath_operators(spec.n_bath, &mut substream(spec.seed, 0), prec)
}

/// Coupling strengths and the minimum pulse interval.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingParams {
    pub j: Float,
    pub beta: Float,
    pub tau: Float,
}

impl CouplingParams {
    pub fn new(j: Float, beta: Float, tau: Float) -> Result<Self, ModelError> {
        if j.is_sign_negative() && !j.is_zero() {
            return Err(ModelError::Negative("J"));
        }
        if beta.is_sign_negative() && !beta.is_zero() {
            return Err(ModelError::Negative("beta"));
        }
        if tau.is_zero() || tau.is_sign_negative() {
            return Err(ModelError::NonPositiveTau);
        }
        Ok(CouplingParams { j, beta, tau })
    }

    /// `J tau`.
    pub fn j_tau(&self) -> Float {
        Float::with_val(self.j.prec(), &self.j * &self.tau)
    }

    /// `beta tau`.
    pub fn beta_tau(&self) -> Float {
        Float::with_val(self.beta.prec(), &self.beta * &self.tau)
    }
}

/// `beta (I ⊗ B_I) + J (X ⊗ B_X + Y ⊗ B_Y + Z ⊗ B_Z)`.
pub fn assemble_hamiltonian(
    ops: &BathOperators,
    params: &CouplingParams,
    prec: Precision,
) -> Result<HPMatrix, ModelError> {
    let dim = 2 << ops.n_bath;
    let mut h = HPMatrix::zeros(dim, dim, prec);
    h.add_scaled(
        &kron(&PulseAxis::Identity.matrix(prec), ops.operator(PulseAxis::Identity)),
        &params.beta,
    )?;
    for a in [PulseAxis::X, PulseAxis::Y, PulseAxis::Z] {
        h.add_scaled(&kron(&a.matrix(prec), ops.operator(a)), &params.j)?;
    }
    Ok(h)
}

/// Haar-random unit vector of length `dim` from Box–Muller normals.
pub fn draw_joint_state(
    dim: usize,
    rng: &mut impl RngCore,
    prec: Precision,
) -> Result<StateVector, ModelError> {
    if !dim.is_power_of_two() {
        return Err(ModelError::NotPowerOfTwo(dim));
    }
    let amps = (0..dim)
        .map(|_| {
            let (re, im) = normal_pair(rng, prec);
            Complex::with_val(prec.bits(), (re, im))
        })
        .collect();
    let mut v = StateVector::new(amps);
    v.normalize();
    Ok(v)
}

/// Haar-random state from its own seed (stream 0).
pub fn random_joint_state(seed: u64, dim: usize, prec: Precision) -> Result<StateVector, ModelError> {
    draw_joint_state(dim, &mut substream(seed, 0), prec)
}

/// Everything random in one experiment instance.
#[derive(Clone, Debug)]
pub struct Realization {
    pub index: u64,
    pub bath: BathOperators,
    pub state: StateVector,
}

/// Fresh bath and initial state for realization `index`.
pub fn realization(spec: &BathSpec, index: u64, prec: Precision) -> Result<Realization, ModelError> {
    let mut rng = substream(spec.seed, index);
    let bath = draw_bath_operators(spec.n_bath, &mut rng, prec)?;
    let state = draw_joint_state(spec.joint_dim(), &mut rng, prec)?;
    Ok(Realization { index, bath, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpmath::{partial_trace_bath, DensityMatrix};
    use PulseAxis::{Identity as I, X, Y, Z};

    fn p() -> Precision {
        Precision::default()
    }

    fn params(j: f64, beta: f64) -> CouplingParams {
        CouplingParams::new(p().real(j), p().real(beta), p().real(1)).unwrap()
    }

    #[test]
    fn bath_spec_validation() {
        assert_eq!(BathSpec::new(1, 0), Err(ModelError::BathTooSmall(1)));
        assert!(BathSpec::new(2, 0).is_ok());
        assert_eq!(BathSpec::new(4, 0).unwrap().joint_dim(), 32);
    }

    #[test]
    fn zero_coefficients_give_zero_operators() {
        let coeffs = vec![BathCoefficient {
            alpha: X,
            i: 0,
            j: 1,
            k: Z,
            l: Y,
            value: p().zero(),
        }];
        let ops = BathOperators::from_coefficients(2, coeffs, p()).unwrap();
        for a in PulseAxis::ALL {
            assert!(ops.operator(a).max_abs().is_zero());
        }
    }

    #[test]
    fn single_term_embeds_at_the_right_site() {
        let coeffs = vec![BathCoefficient {
            alpha: Z,
            i: 0,
            j: 2,
            k: X,
            l: I,
            value: p().real(1),
        }];
        let ops = BathOperators::from_coefficients(3, coeffs, p()).unwrap();
        let want = kron(&kron(&X.matrix(p()), &I.matrix(p())), &I.matrix(p()));
        assert!(ops.operator(Z).max_abs_diff(&want).is_zero());
        let coeffs = vec![BathCoefficient {
            alpha: I,
            i: 2,
            j: 1,
            k: Y,
            l: Z,
            value: p().real(0.5),
        }];
        let ops = BathOperators::from_coefficients(3, coeffs, p()).unwrap();
        let want = kron(&kron(&I.matrix(p()), &Z.matrix(p())), &Y.matrix(p())).scaled(&p().real(0.5));
        assert!(ops.operator(I).max_abs_diff(&want).is_zero());
    }

    #[test]
    fn coefficient_sites_are_checked() {
        let bad = vec![BathCoefficient {
            alpha: Z,
            i: 1,
            j: 1,
            k: X,
            l: X,
            value: p().real(1),
        }];
        assert!(BathOperators::from_coefficients(2, bad, p()).is_err());
    }

    #[test]
    fn draws_are_deterministic_and_complete() {
        let spec = BathSpec::new(3, 42).unwrap();
        let a = random_bath_operators(&spec, p()).unwrap();
        let b = random_bath_operators(&spec, p()).unwrap();
        assert_eq!(a.coefficients(), b.coefficients());
        assert_eq!(a.coefficients().len(), 4 * 3 * 2 * 16);
        assert!(a.coefficients().iter().all(|c| c.value >= 0 && c.value < 1));
        let other = random_bath_operators(&BathSpec::new(3, 43).unwrap(), p()).unwrap();
        assert_ne!(a.coefficients()[0].value, other.coefficients()[0].value);
        // pinned order: first coefficient is (I, 0, 1, I, I)
        let first = &a.coefficients()[0];
        assert_eq!((first.alpha, first.i, first.j, first.k, first.l), (I, 0, 1, I, I));
    }

    #[test]
    fn realizations_use_disjoint_streams() {
        let spec = BathSpec::new(2, 7).unwrap();
        let r0 = realization(&spec, 0, p()).unwrap();
        let r1 = realization(&spec, 1, p()).unwrap();
        assert_ne!(r0.bath.coefficients()[0].value, r1.bath.coefficients()[0].value);
        let again = realization(&spec, 1, p()).unwrap();
        assert_eq!(r1.state, again.state);
    }

    #[test]
    fn uniform_uses_full_precision() {
        let mut rng = substream(1, 0);
        let u = uniform(&mut rng, p());
        // more than 53 significant bits survive
        let rounded = Float::with_val(p().bits(), u.to_f64());
        assert_ne!(u, rounded);
    }

    #[test]
    fn hamiltonian_is_hermitian_for_many_seeds() {
        for seed in 0..100 {
            let spec = BathSpec::new(2, seed).unwrap();
            let ops = random_bath_operators(&spec, p()).unwrap();
            for a in PulseAxis::ALL {
                ops.operator(a).check_hermitian(p()).unwrap();
            }
            let h = assemble_hamiltonian(&ops, &params(0.3, 0.7), p()).unwrap();
            h.check_hermitian(p()).unwrap();
        }
    }

    #[test]
    fn hamiltonian_limits() {
        let ops = random_bath_operators(&BathSpec::new(2, 3).unwrap(), p()).unwrap();
        let h = assemble_hamiltonian(&ops, &params(0.0, 0.0), p()).unwrap();
        assert!(h.max_abs().is_zero());
        // J = 0 is block diagonal in the system basis
        let h = assemble_hamiltonian(&ops, &params(0.0, 2.0), p()).unwrap();
        for r in 0..4 {
            for c in 4..8 {
                assert!(h.get(r, c).is_zero() && h.get(c, r).is_zero());
            }
        }
    }

    #[test]
    fn hamiltonian_is_linear_in_j() {
        let ops = random_bath_operators(&BathSpec::new(2, 11).unwrap(), p()).unwrap();
        let h1 = assemble_hamiltonian(&ops, &params(0.25, 0.5), p()).unwrap();
        let h2 = assemble_hamiltonian(&ops, &params(0.5, 0.5), p()).unwrap();
        let mut coupling = HPMatrix::zeros(8, 8, p());
        for a in [X, Y, Z] {
            coupling
                .add_scaled(&kron(&a.matrix(p()), ops.operator(a)), &p().real(0.25))
                .unwrap();
        }
        let mut sum = h1.clone();
        sum.add_scaled(&coupling, &p().real(1)).unwrap();
        // equal up to the rounding of differently ordered sums
        assert!(sum.max_abs_diff(&h2) < p().tolerance(15));
    }

    #[test]
    fn joint_state_is_normalized_and_deterministic() {
        let a = random_joint_state(9, 32, p()).unwrap();
        let b = random_joint_state(9, 32, p()).unwrap();
        assert_eq!(a, b);
        let err = Float::with_val(p().bits(), a.norm() - 1u32).abs();
        assert!(err < p().tolerance(15));
        assert!(random_joint_state(9, 24, p()).is_err());
    }

    fn mean_purity(dim: usize, draws: u64, prec: Precision) -> f64 {
        let n_bath = dim.trailing_zeros() as usize - 1;
        (0..draws)
            .map(|s| {
                let psi = draw_joint_state(dim, &mut substream(1000, s), prec).unwrap();
                let rho: DensityMatrix = partial_trace_bath(&psi, n_bath).unwrap();
                rho.purity().to_f64()
            })
            .sum::<f64>()
            / draws as f64
    }

    #[test]
    fn haar_purity_two_qubits() {
        // two qubits: purity = 1 - 2|det C|^2 and E|det C|^2 = 1/10, so 4/5
        let prec = Precision::new(30).unwrap();
        let m = mean_purity(4, 4000, prec);
        assert!((m - 0.8).abs() < 0.01, "{m}");
    }

    #[test]
    fn haar_purity_matches_closed_form() {
        // (d_S + d_B) / (d_S d_B + 1) with d_S = 2, d_B = 16
        let m = mean_purity(32, 1000, p());
        assert!((m - 18.0 / 33.0).abs() < 0.02, "{m}");
    }

    #[test]
    fn coefficient_dump_is_json() {
        let ops = random_bath_operators(&BathSpec::new(2, 5).unwrap(), p()).unwrap();
        let text = ops.coefficients_json();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let first = &parsed[0];
        assert_eq!(first["alpha"], "I");
        let value = p().parse(first["value"].as_str().unwrap()).unwrap();
        assert_eq!(value, ops.coefficients()[0].value);
    }

    #[test]
    fn coupling_params_validation() {
        assert!(CouplingParams::new(p().real(-1), p().zero(), p().real(1)).is_err());
        assert!(CouplingParams::new(p().zero(), p().zero(), p().zero()).is_err());
        assert!(CouplingParams::new(p().zero(), p().zero(), p().real(1)).is_ok());
    }
}
