//! Upper bound on the eavesdropper's Holevo information from the extremal
//! Gaussian state with the same second moments, plus the bookkeeping that
//! transfers the bound from the true state to its finite-dimensional
//! projection: trace-distance budget from the out-of-range probability and
//! the continuity penalty on the Holevo information.
//!
//! The covariance data enter as three scalars: the symmetrized photon
//! numbers `gamma_A`, `gamma_B` of the two modes and the correlation
//! `gamma_AB`. The bound builds the standardized two-mode covariance
//! matrix, takes its symplectic spectrum and the conditional spectrum
//! after an ideal double-homodyne measurement of mode B, and combines them
//! through the Gaussian entropy function `g`. Symplectic eigenvalues are
//! computed from the spectrum of the symplectic form times the covariance
//! matrix and cross-checked against the two-mode closed form; a mismatch
//! reports an error rather than a silently wrong bound.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::tolerances;

/// Errors from covariance validation and penalty evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianError {
    /// The entropy function is undefined for negative arguments.
    NegativeArgument(f64),
    /// A mode variance lies below the vacuum floor of one half.
    VarianceBelowVacuum(f64),
    /// The covariance triple violates the uncertainty relation.
    UnphysicalCovariance {
        /// Symmetrized photon number of mode A.
        gamma_a: f64,
        /// Symmetrized photon number of mode B.
        gamma_b: f64,
        /// Correlation element.
        gamma_ab: f64,
        /// Value of `gamma_a gamma_b - gamma_ab^2 - 1/4`, negative here.
        slack: f64,
    },
    /// A symplectic eigenvalue fell below the vacuum floor by more than
    /// the rounding guard.
    SymplecticBelowVacuum(f64),
    /// Eigenvalue route and closed-form route disagree, indicating a
    /// numerical defect.
    RouteMismatch {
        /// Symplectic eigenvalue from the spectrum of the form times CM.
        eigen: f64,
        /// Same eigenvalue from the two-mode closed form.
        closed: f64,
    },
    /// Trace-distance argument outside `[0, 2]`.
    DistanceOutOfRange(f64),
    /// Out-of-range probability too large for the normalization to stay
    /// meaningful; the protocol aborts in this regime.
    ProbabilityTooLarge(f64),
    /// Bin count must be at least one.
    EmptyAlphabet,
}

impl core::fmt::Display for GaussianError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NegativeArgument(x) => write!(f, "entropy argument {x} is negative"),
            Self::VarianceBelowVacuum(g) => write!(f, "mode variance {g} is below 1/2"),
            Self::UnphysicalCovariance {
                gamma_a,
                gamma_b,
                gamma_ab,
                slack,
            } => write!(
                f,
                "covariance ({gamma_a}, {gamma_b}, {gamma_ab}) violates the uncertainty relation by {slack}"
            ),
            Self::SymplecticBelowVacuum(nu) => {
                write!(f, "symplectic eigenvalue {nu} is below 1/2")
            }
            Self::RouteMismatch { eigen, closed } => {
                write!(f, "symplectic routes disagree: {eigen} vs {closed}")
            }
            Self::DistanceOutOfRange(d) => write!(f, "trace distance {d} outside [0, 2]"),
            Self::ProbabilityTooLarge(p) => {
                write!(f, "out-of-range probability {p} not in [0, 1/4)")
            }
            Self::EmptyAlphabet => write!(f, "bin count must be at least 1"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GaussianError {}

// ═══════════════════════════════════════════════════════════════════════
// Gaussian entropy
// ═══════════════════════════════════════════════════════════════════════

/// Entropy of a thermal state with mean photon number `x`, in bits:
/// `(x+1) log2(x+1) - x log2 x`, continuously extended by 0 at 0.
pub fn g_entropy(x: f64) -> Result<f64, GaussianError> {
    if !(x >= 0.0) {
        return Err(GaussianError::NegativeArgument(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok((x + 1.0) * libm::log2(x + 1.0) - x * libm::log2(x))
}

fn g_clamped(nu: f64) -> Result<f64, GaussianError> {
    if nu < 0.5 - tolerances::PHYSICALITY_SLACK {
        return Err(GaussianError::SymplecticBelowVacuum(nu));
    }
    g_entropy((nu - 0.5).max(0.0))
}

// ═══════════════════════════════════════════════════════════════════════
// Covariance bound
// ═══════════════════════════════════════════════════════════════════════

/// Covariance triple with its symplectic data and the resulting Holevo
/// bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovBounds {
    gamma_a: f64,
    gamma_b: f64,
    gamma_ab: f64,
    nu_plus: f64,
    nu_minus: f64,
    nu_zero: f64,
    fchi: f64,
}

impl CovBounds {
    /// Symmetrized photon number of mode A.
    pub fn gamma_a(&self) -> f64 {
        self.gamma_a
    }

    /// Symmetrized photon number of mode B.
    pub fn gamma_b(&self) -> f64 {
        self.gamma_b
    }

    /// Correlation element.
    pub fn gamma_ab(&self) -> f64 {
        self.gamma_ab
    }

    /// Larger symplectic eigenvalue of the two-mode covariance matrix.
    pub fn nu_plus(&self) -> f64 {
        self.nu_plus
    }

    /// Smaller symplectic eigenvalue.
    pub fn nu_minus(&self) -> f64 {
        self.nu_minus
    }

    /// Symplectic eigenvalue of Alice's state conditioned on an ideal
    /// double-homodyne measurement of mode B.
    pub fn nu_zero(&self) -> f64 {
        self.nu_zero
    }

    /// Holevo bound in bits.
    pub fn fchi(&self) -> f64 {
        self.fchi
    }
}

/// Standardized two-mode covariance matrix in `(q_A, p_A, q_B, p_B)`
/// ordering: diagonal blocks `gamma I`, off-diagonal `diag(c, -c)`.
fn covariance_matrix(gamma_a: f64, gamma_b: f64, gamma_ab: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            gamma_a, 0.0, gamma_ab, 0.0, //
            0.0, gamma_a, 0.0, -gamma_ab, //
            gamma_ab, 0.0, gamma_b, 0.0, //
            0.0, -gamma_ab, 0.0, gamma_b,
        ],
    )
}

/// Symplectic spectrum of the two-mode covariance matrix: moduli of the
/// eigenvalues of the symplectic form times the matrix, deduplicated into
/// the pair `(nu_plus, nu_minus)`.
fn symplectic_pair(cm: &DMatrix<f64>) -> (f64, f64) {
    let omega = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            -1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, -1.0, 0.0,
        ],
    );
    let product = omega * cm;
    let mut moduli: Vec<f64> = product
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).expect("eigenvalue moduli are finite"));
    (moduli[0], moduli[2])
}

/// Validates a covariance triple and evaluates the Holevo bound.
pub fn cov_bounds(gamma_a: f64, gamma_b: f64, gamma_ab: f64) -> Result<CovBounds, GaussianError> {
    if !(gamma_a >= 0.5 - tolerances::PHYSICALITY_SLACK) {
        return Err(GaussianError::VarianceBelowVacuum(gamma_a));
    }
    if !(gamma_b >= 0.5 - tolerances::PHYSICALITY_SLACK) {
        return Err(GaussianError::VarianceBelowVacuum(gamma_b));
    }
    let slack = gamma_a * gamma_b - gamma_ab * gamma_ab - 0.25;
    if slack < -tolerances::PHYSICALITY_SLACK {
        return Err(GaussianError::UnphysicalCovariance {
            gamma_a,
            gamma_b,
            gamma_ab,
            slack,
        });
    }

    let (nu_plus, nu_minus) = symplectic_pair(&covariance_matrix(gamma_a, gamma_b, gamma_ab));

    // Closed-form cross-check of the same spectrum: nu^2 are the roots of
    // x^2 - (gA^2 + gB^2 - 2 gAB^2) x + det = 0 with det = (gA gB - gAB^2)^2.
    let trace_inv = gamma_a * gamma_a + gamma_b * gamma_b - 2.0 * gamma_ab * gamma_ab;
    let det_root = gamma_a * gamma_b - gamma_ab * gamma_ab;
    let disc = (trace_inv * trace_inv - 4.0 * det_root * det_root).max(0.0);
    let closed_plus = libm::sqrt(0.5 * (trace_inv + libm::sqrt(disc)));
    let closed_minus = libm::sqrt((0.5 * (trace_inv - libm::sqrt(disc))).max(0.0));
    for (eigen, closed) in [(nu_plus, closed_plus), (nu_minus, closed_minus)] {
        if (eigen - closed).abs() > tolerances::ROUTE_AGREE_ABS * (1.0 + eigen.abs()) {
            return Err(GaussianError::RouteMismatch { eigen, closed });
        }
    }

    // Conditional covariance of mode A after an ideal double-homodyne
    // measurement of B: A - C (B + I/2)^{-1} C^T, here a multiple of the
    // identity.
    let nu_zero = gamma_a - gamma_ab * gamma_ab / (gamma_b + 0.5);

    // Measuring mode B cannot raise the entropy of the joint state, so
    // the bound is non-negative up to rounding; clamp the residual.
    let fchi_raw = g_clamped(nu_plus)? + g_clamped(nu_minus)? - g_clamped(nu_zero)?;
    debug_assert!(fchi_raw > -1e-6, "holevo bound {fchi_raw} is negative");
    Ok(CovBounds {
        gamma_a,
        gamma_b,
        gamma_ab,
        nu_plus,
        nu_minus,
        nu_zero,
        fchi: fchi_raw.max(0.0),
    })
}

/// Holevo bound in bits for a covariance triple.
pub fn f_chi(gamma_a: f64, gamma_b: f64, gamma_ab: f64) -> Result<f64, GaussianError> {
    Ok(cov_bounds(gamma_a, gamma_b, gamma_ab)?.fchi())
}

// ═══════════════════════════════════════════════════════════════════════
// Continuity and cutoff bookkeeping
// ═══════════════════════════════════════════════════════════════════════

/// Continuity penalty on the Holevo information, in bits, for a key
/// alphabet of `d^2` symbols and a trace distance `delta_prime` between
/// the true state and its truncated surrogate:
/// `delta' log2 d^2 + 2 (1 + delta') log2(1 + delta') - 2 delta' log2 delta'`.
pub fn shirokov_penalty(delta_prime: f64, d: usize) -> Result<f64, GaussianError> {
    if !(0.0..=2.0).contains(&delta_prime) {
        return Err(GaussianError::DistanceOutOfRange(delta_prime));
    }
    if d == 0 {
        return Err(GaussianError::EmptyAlphabet);
    }
    if delta_prime == 0.0 {
        return Ok(0.0);
    }
    let dd = d as f64;
    Ok(delta_prime * libm::log2(dd * dd)
        + 2.0 * (1.0 + delta_prime) * libm::log2(1.0 + delta_prime)
        - 2.0 * delta_prime * libm::log2(delta_prime))
}

/// Cutoff bookkeeping derived from the out-of-range probability: the
/// data-driven photon-number cutoff, the trace-distance budget of the
/// gentle-measurement argument and the normalization floor of the
/// projected state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffBudget {
    p0: f64,
    n_cut: usize,
    delta_prime: f64,
}

impl CutoffBudget {
    /// Out-of-range probability the budget was built from.
    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// Photon-number cutoff: states above this number carry at most twice
    /// the out-of-range probability.
    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    /// Trace-distance bound `2 sqrt(2 P0)` between the true state and its
    /// normalized truncation.
    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }

    /// Normalization floor `1 - 2 P0` of the truncated state.
    pub fn floor(&self) -> f64 {
        1.0 - 2.0 * self.p0
    }

    /// Continuity penalty in bits for a `d`-bin receiver.
    pub fn penalty_bits(&self, d: usize) -> Result<f64, GaussianError> {
        shirokov_penalty(self.delta_prime, d)
    }
}

/// Builds the cutoff budget for an out-of-range probability `p0 < 1/4`
/// (beyond that the normalization floor degenerates) and range `r`.
pub fn cutoff_budget(p0: f64, r: f64) -> Result<CutoffBudget, GaussianError> {
    if !(p0 >= 0.0 && p0 < 0.25) {
        return Err(GaussianError::ProbabilityTooLarge(p0));
    }
    Ok(CutoffBudget {
        p0,
        n_cut: libm::floor(2.0 * r * r) as usize,
        delta_prime: 2.0 * libm::sqrt(2.0 * p0),
    })
}

/// Conservative ceiling on the symmetrized photon number of Alice's mode
/// after the truncation of Bob's mode: the projection can only renormalize
/// the known value `|alpha|^2 + 1/2` by the floor `1 - 2 P0`.
pub fn gamma_a_ceiling(amp: f64, p0: f64) -> Result<f64, GaussianError> {
    if !(p0 >= 0.0 && p0 < 0.25) {
        return Err(GaussianError::ProbabilityTooLarge(p0));
    }
    Ok((amp * amp + 0.5) / (1.0 - 2.0 * p0))
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn entropy_reference_values() {
        assert_eq!(g_entropy(0.0).unwrap(), 0.0);
        assert_relative_eq!(g_entropy(1.0).unwrap(), 2.0, max_relative = 1e-15);
        assert!(g_entropy(-1e-12).is_err());
        for x in [10.0, 100.0, 1e4] {
            let diff = g_entropy(x).unwrap() - libm::log2(core::f64::consts::E * x);
            let tail = 1.0 / (2.0 * x * core::f64::consts::LN_2);
            assert!(diff > 0.0 && diff <= tail * 1.0001, "x = {x}: diff {diff} vs {tail}");
        }
    }

    #[test]
    fn entropy_is_monotone() {
        let mut prev = 0.0;
        for i in 1..=100 {
            let x = i as f64 * 0.17;
            let g = g_entropy(x).unwrap();
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn vacuum_has_no_holevo_information() {
        let cb = cov_bounds(0.5, 0.5, 0.0).unwrap();
        assert_eq!(cb.fchi(), 0.0);
        assert_relative_eq!(cb.nu_plus(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(cb.nu_minus(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(cb.nu_zero(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pure_two_mode_family_has_no_holevo_information() {
        // gamma_AB = sqrt(gamma^2 - 1/4) saturates the uncertainty
        // relation; both global eigenvalues sit at the vacuum floor and
        // the conditional one is exactly 1/2.
        for a in [0.6, 1.3, 2.5] {
            let c = libm::sqrt(a * a - 0.25);
            let cb = cov_bounds(a, a, c).unwrap();
            assert!(cb.fchi() <= 1e-9, "a = {a}: fchi = {}", cb.fchi());
            assert_relative_eq!(cb.nu_zero(), 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn holevo_bound_monotone_in_covariance_elements() {
        let base = f_chi(0.75, 1.25, 0.20).unwrap();
        assert!(base < f_chi(0.75, 1.30, 0.20).unwrap());
        assert!(f_chi(0.75, 1.25, 0.25).unwrap() < base);
        assert!(base < f_chi(0.80, 1.25, 0.20).unwrap());
    }

    #[test]
    fn no_correlation_reduces_to_single_mode_entropy() {
        for gamma_a in [0.5, 0.8, 2.0] {
            for gamma_b in [0.5, 1.3, 4.0] {
                let f = f_chi(gamma_a, gamma_b, 0.0).unwrap();
                let expect = g_entropy(gamma_b - 0.5).unwrap();
                assert_relative_eq!(f, expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn unphysical_covariance_is_rejected() {
        assert!(matches!(
            cov_bounds(0.5, 0.5, 0.2),
            Err(GaussianError::UnphysicalCovariance { .. })
        ));
        assert!(matches!(
            cov_bounds(0.4, 1.0, 0.0),
            Err(GaussianError::VarianceBelowVacuum(_))
        ));
    }

    #[test]
    fn continuity_penalty_reference_values() {
        assert_eq!(shirokov_penalty(0.0, 16).unwrap(), 0.0);
        let p = shirokov_penalty(0.01, 16).unwrap();
        assert!((p - 0.2419).abs() < 5e-4);
        assert_relative_eq!(p, 0.24187481, max_relative = 1e-6);
        let p32 = shirokov_penalty(0.01, 32).unwrap();
        assert_relative_eq!(p32 - p, 0.02, max_relative = 1e-10);
        assert!(shirokov_penalty(2.1, 16).is_err());
        assert!(shirokov_penalty(-0.1, 16).is_err());
        assert!(shirokov_penalty(0.5, 0).is_err());
    }

    #[test]
    fn cutoff_budget_reference_values() {
        let zero = cutoff_budget(0.0, 7.0).unwrap();
        assert_eq!(zero.delta_prime(), 0.0);
        assert_eq!(zero.floor(), 1.0);
        assert_eq!(zero.n_cut(), 98);
        assert_eq!(zero.penalty_bits(16).unwrap(), 0.0);
        let small = cutoff_budget(1e-11, 7.0).unwrap();
        assert_relative_eq!(small.delta_prime(), 8.944271909999159e-6, max_relative = 1e-12);
        assert!(cutoff_budget(0.25, 7.0).is_err());
        assert!(cutoff_budget(-1e-3, 7.0).is_err());
    }

    #[test]
    fn penalty_vanishes_with_the_out_of_range_probability() {
        let mut prev = f64::INFINITY;
        for p0 in [1e-6, 1e-9, 1e-12, 1e-15] {
            let budget = cutoff_budget(p0, 7.0).unwrap();
            let delta = budget.penalty_bits(16).unwrap();
            assert!(delta < prev);
            prev = delta;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn alice_ceiling_reference_values() {
        assert_relative_eq!(gamma_a_ceiling(0.5, 0.0).unwrap(), 0.75, epsilon = 1e-15);
        assert!(gamma_a_ceiling(0.5, 1e-3).unwrap() > 0.75);
        assert!(gamma_a_ceiling(0.5, 0.25).is_err());
    }

    proptest! {
        // Spectrum routes agree and the bound stays non-negative across
        // random physical covariance triples.
        #[test]
        fn routes_agree_on_physical_triples(
            gamma_a in 0.5f64..5.0,
            gamma_b in 0.5f64..5.0,
            frac in 0.0f64..0.999,
        ) {
            // Largest correlation the uncertainty relation allows for the
            // given mode variances (the determinant condition alone is
            // weaker and admits unphysical triples).
            let cmax_sq = gamma_a * gamma_b - 0.25 - 0.5 * (gamma_a - gamma_b).abs();
            let cb = cov_bounds(gamma_a, gamma_b, frac * libm::sqrt(cmax_sq.max(0.0))).unwrap();
            prop_assert!(cb.fchi() >= 0.0);
            prop_assert!(cb.nu_plus() >= cb.nu_minus());
            prop_assert!(cb.nu_minus() >= 0.5 - 1e-9);
            prop_assert!(cb.nu_zero() >= 0.5 - 1e-9);
        }

        #[test]
        fn penalty_monotone_in_distance(
            lo in 0.0f64..1.0,
            gap in 1e-6f64..0.5,
        ) {
            let hi = (lo + gap).min(1.0);
            let a = shirokov_penalty(lo, 16).unwrap();
            let b = shirokov_penalty(hi, 16).unwrap();
            prop_assert!(b >= a);
        }
    }
}
