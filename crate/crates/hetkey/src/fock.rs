//! Truncated-Fock-basis construction of the detector POVM and of every
//! operator the optimization problems consume.
//!
//! The receiver measures both quadratures jointly, keeps outcomes inside
//! the square `[-r, r]^2` and coarse-grains them into a `d x d` grid of
//! rectangular bins. Each bin corresponds to a POVM element: the integral
//! of coherent-state projectors over the bin. This module expands those
//! elements in the number basis and assembles the aggregate observables:
//!
//! - the range operator (sum of all bin elements, the on-range part of the
//!   POVM resolution),
//! - the second-moment observable (bin elements weighted by the squared
//!   modulus of their center),
//! - the amplitude observable (bin elements weighted by their center),
//! - photon-number tail diagnostics for the cutoff argument,
//! - the photon-number and correlation objectives of the two extremal
//!   covariance problems.
//!
//! Matrix elements reduce to 1D truncated Gaussian moments through the
//! binomial expansion of `(q + ip)^n (q - ip)^n'`. The moments are
//! computed from regularized incomplete gamma functions, which are stable
//! in all regimes (the textbook integration-by-parts recursion amplifies
//! roundoff geometrically once the degree exceeds the interval scale).
//! Expansion coefficients are exact `i128` integers; scaled moments keep
//! every intermediate inside `f64` range up to degree 260.
//!
//! Grid symmetry makes entries vanish unless the photon-number difference
//! meets a residue condition modulo 4 (0 for the range and second-moment
//! operators, 1 for the amplitude operator). The assembly asserts the
//! computed residue of each forbidden entry is at rounding level, then
//! pins it to zero so downstream sparsity is exact.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::protocol::EBRepresentation;
use crate::special;
use crate::tolerances;

/// Largest supported photon-number cutoff for bin-operator assembly; the
/// exact integer expansion coefficients fit `i128` up to this point.
pub const NMAX_LIMIT: usize = 130;

/// Largest supported detection range; keeps `exp(-2 r^2)` normal.
pub const RANGE_LIMIT: f64 = 18.0;

/// Errors from detector geometry and operator assembly.
#[derive(Debug, Clone, PartialEq)]
pub enum FockError {
    /// Detection range must be positive and at most [`RANGE_LIMIT`].
    RangeOutOfBounds(f64),
    /// Bins per quadrature must lie in `1..=512`.
    BinsOutOfBounds(usize),
    /// Photon cutoff too large for exact coefficient arithmetic.
    CutoffTooLarge(usize),
    /// Photon cutoff must cover the range-induced cutoff space.
    CutoffBelowRange {
        /// Requested truncation.
        nmax: usize,
        /// Range-induced cutoff it must reach.
        n_cut: usize,
    },
    /// Bin index outside `1..=d`.
    BinIndexOutOfRange(usize),
    /// Coherent amplitude too large for the stated accuracy envelope.
    AmplitudeTooLarge(f64),
    /// Moment degree or interval outside the overflow-free envelope.
    MomentOutOfRange {
        /// Requested moment degree.
        degree: usize,
        /// Largest interval endpoint magnitude.
        bound: f64,
    },
    /// An entry that must vanish by grid symmetry exceeded the rounding
    /// budget, indicating an assembly defect.
    SymmetryResidue {
        /// Row photon number.
        n: usize,
        /// Column photon number.
        np: usize,
        /// Magnitude of the offending entry.
        residue: f64,
    },
}

impl core::fmt::Display for FockError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::RangeOutOfBounds(r) => write!(f, "detection range {r} outside (0, {RANGE_LIMIT}]"),
            Self::BinsOutOfBounds(d) => write!(f, "bin count {d} outside 1..=512"),
            Self::CutoffTooLarge(n) => write!(f, "photon cutoff {n} exceeds {NMAX_LIMIT}"),
            Self::CutoffBelowRange { nmax, n_cut } => {
                write!(f, "photon cutoff {nmax} below range-induced cutoff {n_cut}")
            }
            Self::BinIndexOutOfRange(j) => write!(f, "bin index {j} outside 1..=d"),
            Self::AmplitudeTooLarge(b) => write!(f, "coherent amplitude modulus {b} exceeds 20"),
            Self::MomentOutOfRange { degree, bound } => {
                write!(f, "moment degree {degree} with interval bound {bound} would overflow")
            }
            Self::SymmetryResidue { n, np, residue } => {
                write!(f, "forbidden entry ({n}, {np}) has residue {residue}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FockError {}

// ═══════════════════════════════════════════════════════════════════════
// Detector geometry
// ═══════════════════════════════════════════════════════════════════════

/// Geometry of the range-limited, discretized double-quadrature receiver.
///
/// Both quadrature axes share the same uniform grid of `d` bins over
/// `[-r, r]`. Bin indices are 1-based to match the usual labeling of
/// outcomes; index 0 is reserved by callers for the inconclusive outcome.
#[derive(Debug, Clone)]
pub struct DetectorModel {
    r: f64,
    d: usize,
    edges: Vec<f64>,
    centers: Vec<f64>,
}

impl DetectorModel {
    /// Builds the grid. Edges and centers are computed in a mirror-exact
    /// form: the grid point at `-x` is the exact f64 negation of the one
    /// at `x`, which the operator assembly relies on for exact parity
    /// cancellations.
    pub fn new(r: f64, d: usize) -> Result<Self, FockError> {
        if !(r > 0.0 && r <= RANGE_LIMIT && r.is_finite()) {
            return Err(FockError::RangeOutOfBounds(r));
        }
        if d == 0 || d > 512 {
            return Err(FockError::BinsOutOfBounds(d));
        }
        let df = d as f64;
        let edges = (0..=d).map(|j| r * (2.0 * j as f64 - df) / df).collect();
        let centers =
            (1..=d).map(|j| r * (2.0 * j as f64 - 1.0 - df) / df).collect();
        Ok(Self { r, d, edges, centers })
    }

    /// Detection range.
    pub fn r(&self) -> f64 {
        self.r
    }

    /// Bins per quadrature.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Range-induced photon cutoff `floor(2 r^2)`: photon numbers above
    /// this are classed as tail by the cutoff argument.
    pub fn n_cut(&self) -> usize {
        libm::floor(2.0 * self.r * self.r) as usize
    }

    /// Bin edges, `d + 1` values from `-r` to `r`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Bin centers, `d` values.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Quadrature interval of 1-based bin `j`.
    pub fn bin_interval(&self, j: usize) -> Result<(f64, f64), FockError> {
        if j == 0 || j > self.d {
            return Err(FockError::BinIndexOutOfRange(j));
        }
        Ok((self.edges[j - 1], self.edges[j]))
    }

    /// Complex center of the 2D bin `(j, k)`, `(q_j + i p_k) / sqrt(2)`.
    pub fn beta_center(&self, j: usize, k: usize) -> Result<Complex64, FockError> {
        if j == 0 || j > self.d {
            return Err(FockError::BinIndexOutOfRange(j));
        }
        if k == 0 || k > self.d {
            return Err(FockError::BinIndexOutOfRange(k));
        }
        Ok(Complex64::new(self.centers[j - 1], self.centers[k - 1])
            / Complex64::from(core::f64::consts::SQRT_2))
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Coherent amplitudes and Gaussian moments
// ═══════════════════════════════════════════════════════════════════════

/// Number-basis amplitudes `<n|beta>` for `n = 0..=nmax`.
///
/// Uses the stable product form `c_n = c_{n-1} beta / sqrt(n)` seeded with
/// the Gaussian normalization. Requires `|beta| <= 20` and `nmax <= 400`;
/// within that envelope every intermediate is far from f64 limits and the
/// truncated norm deficit is the exact Poisson tail.
pub fn coherent_amplitudes(beta: Complex64, nmax: usize) -> Result<Vec<Complex64>, FockError> {
    if !(beta.norm_sqr() <= 400.0) {
        return Err(FockError::AmplitudeTooLarge(beta.norm()));
    }
    if nmax > 400 {
        return Err(FockError::CutoffTooLarge(nmax));
    }
    let mut coeffs = alloc::vec![Complex64::new(0.0, 0.0); nmax + 1];
    let mut c = Complex64::from(libm::exp(-0.5 * beta.norm_sqr()));
    coeffs[0] = c;
    for (n, slot) in coeffs.iter_mut().enumerate().skip(1) {
        c *= beta / Complex64::from(libm::sqrt(n as f64));
        *slot = c;
    }
    Ok(coeffs)
}

/// Ascending series for the regularized lower incomplete gamma function
/// `P(s, w)` at order `s = two_s / 2`. All terms are positive; accurate
/// whenever `w < s + 1`, including arbitrarily small tail values.
fn gamma_series_p(two_s: u32, w: f64) -> f64 {
    debug_assert!(two_s >= 1);
    debug_assert!(w >= 0.0);
    if w == 0.0 {
        return 0.0;
    }
    let s = two_s as f64 / 2.0;
    // P(s, w) = w^s e^-w / Gamma(s+1) * sum_k w^k / ((s+1)...(s+k)).
    let ln_pref = s * libm::log(w) - w - special::ln_gamma(s + 1.0);
    let pref = libm::exp(ln_pref);
    if pref == 0.0 {
        return 0.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= w / (s + k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    (pref * sum).min(1.0)
}

/// Regularized upper incomplete gamma function `Q(s, w)` at order
/// `s = two_s / 2`, by the upward order recursion
/// `Q(s+1) = Q(s) + w^s e^-w / Gamma(s+1)` seeded with `erfc` or `exp`.
/// All terms are positive; accurate whenever `w >= s + 1`, including
/// arbitrarily small tail values.
fn gamma_ladder_q(two_s: u32, w: f64) -> f64 {
    debug_assert!(two_s >= 1);
    debug_assert!(w > 0.0);
    let s = two_s as f64 / 2.0;
    let (mut q, mut s_cur, mut step) = if two_s % 2 == 1 {
        let root = libm::sqrt(w);
        // Increment toward Q(3/2): w^(1/2) e^-w / Gamma(3/2).
        (special::erfc(root), 0.5, root * libm::exp(-w) * 2.0 / libm::sqrt(core::f64::consts::PI))
    } else {
        let e = libm::exp(-w);
        (e, 1.0, w * e)
    };
    while s_cur + 0.5 < s + 0.25 {
        q += step;
        step *= w / (s_cur + 1.0);
        s_cur += 1.0;
    }
    debug_assert!(libm::fabs(s_cur - s) < 0.25);
    q.min(1.0)
}

/// True when `(two_s/2, w)` lies in the regime where the upper-tail
/// ladder is the direct (cancellation-free) evaluation.
#[inline]
fn upper_branch(two_s: u32, w: f64) -> bool {
    w >= two_s as f64 / 2.0 + 1.0
}

/// `ln` of the scale factor relating scaled to unscaled moments of degree
/// `g`: scaled moments are divided by `2^(g/2) sqrt(g!)`.
fn ln_moment_scale(g: usize) -> f64 {
    0.5 * (g as f64) * core::f64::consts::LN_2 + 0.5 * special::ln_factorial(g as u64)
}

/// Scaled moment over `[a, b]` with `0 <= a <= b`, carrying an extra
/// log-space factor: `exp(ln_extra) int_a^b t^g exp(-t^2/2) dt /
/// (2^(g/2) sqrt(g!))`.
///
/// Reduces to a difference of regularized incomplete gamma values at
/// `w = a^2/2, b^2/2`; each side is evaluated on its direct branch so
/// that small tail differences never pass through `1 - Q` roundtrips.
/// `ln_extra` is folded into the single exponential so callers that
/// rescale afterwards never route the value through the subnormal range.
fn m_hat_pos(g: usize, a: f64, b: f64, ln_extra: f64) -> f64 {
    debug_assert!(0.0 <= a && a <= b);
    let two_s = (g + 1) as u32;
    let w1 = 0.5 * a * a;
    let w2 = 0.5 * b * b;
    let diff = if upper_branch(two_s, w1) {
        // Both endpoints in the tail regime (w1 <= w2).
        gamma_ladder_q(two_s, w1) - gamma_ladder_q(two_s, w2)
    } else if upper_branch(two_s, w2) {
        (1.0 - gamma_ladder_q(two_s, w2)) - gamma_series_p(two_s, w1)
    } else {
        gamma_series_p(two_s, w2) - gamma_series_p(two_s, w1)
    };
    // Unscaled antiderivative carries 2^((g-1)/2) Gamma((g+1)/2); net of
    // the moment scale this leaves Gamma((g+1)/2) / (sqrt(2) sqrt(g!)).
    let ln_val = special::ln_gamma((g as f64 + 1.0) / 2.0)
        - 0.5 * special::ln_factorial(g as u64)
        - 0.5 * core::f64::consts::LN_2;
    libm::exp(ln_val + ln_extra) * diff
}

/// Scaled moment over an arbitrary interval `[lo, hi]`, extending
/// [`m_hat_pos`] by the exact integrand parity. Mirror intervals produce
/// exactly negated or identical floats, which the operator assembly
/// relies on.
fn m_hat_with(g: usize, lo: f64, hi: f64, ln_extra: f64) -> f64 {
    debug_assert!(lo <= hi);
    let parity = if g % 2 == 0 { 1.0 } else { -1.0 };
    if lo >= 0.0 {
        m_hat_pos(g, lo, hi, ln_extra)
    } else if hi <= 0.0 {
        parity * m_hat_pos(g, -hi, -lo, ln_extra)
    } else {
        let left = m_hat_pos(g, 0.0, -lo, ln_extra);
        let right = m_hat_pos(g, 0.0, hi, ln_extra);
        if g % 2 == 0 {
            right + left
        } else {
            right - left
        }
    }
}

/// Scaled moment over `[lo, hi]` (no extra factor).
fn m_hat(g: usize, lo: f64, hi: f64) -> f64 {
    m_hat_with(g, lo, hi, 0.0)
}

/// Truncated Gaussian moment `int_lo^hi t^degree exp(-t^2/2) dt`.
///
/// Direct incomplete-gamma evaluation, accurate to ~1e-12 relative in all
/// regimes; the classical integration-by-parts recursion satisfies the
/// same values but amplifies roundoff geometrically once the degree
/// exceeds the squared interval bound, so it is only used as a
/// cross-check in its stable regime. The overflow-free envelope is
/// `degree <= 260` with `|lo|, |hi| <= 14`; the detector grids this crate
/// targets stay well inside it.
pub fn gauss_moment(degree: usize, lo: f64, hi: f64) -> Result<f64, FockError> {
    let bound = libm::fmax(libm::fabs(lo), libm::fabs(hi));
    if degree > 260 || bound > 14.0 {
        return Err(FockError::MomentOutOfRange { degree, bound });
    }
    if lo > hi {
        return Err(FockError::MomentOutOfRange { degree, bound });
    }
    Ok(m_hat_with(degree, lo, hi, ln_moment_scale(degree)))
}

// ═══════════════════════════════════════════════════════════════════════
// Exact expansion coefficients
// ═══════════════════════════════════════════════════════════════════════

/// Coefficient row of `(1 - u)^n`: signed binomials, exact.
fn signed_binomial_row(n: usize) -> Vec<i128> {
    let mut row = alloc::vec![0i128; n + 1];
    row[0] = 1;
    for _ in 0..n {
        for g in (1..row.len()).rev() {
            row[g] = row[g] - row[g - 1];
        }
    }
    row
}

/// In-place multiply of a coefficient row by `(1 + u)`, growing it by one.
fn multiply_one_plus_u(row: &mut Vec<i128>) {
    row.push(0);
    for g in (1..row.len()).rev() {
        row[g] += row[g - 1];
    }
}

/// `i^e` projected on the real axis; `e` must be even.
#[inline]
fn ipow_real(e: i64) -> f64 {
    debug_assert!(e % 2 == 0);
    if e.rem_euclid(4) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `i^e` as a complex unit.
#[inline]
fn ipow(e: i64) -> Complex64 {
    match e.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Factorial-ratio ladder `rho[g] = sqrt(g! (G-g)! / (n! np!))` for
/// `g = 0..=G`, `G = n + np`, built from the stable ratio recurrence.
fn rho_ladder(n: usize, np: usize) -> Vec<f64> {
    let g_tot = n + np;
    let ln_rho0 = 0.5
        * (special::ln_factorial(g_tot as u64)
            - special::ln_factorial(n as u64)
            - special::ln_factorial(np as u64));
    let mut rho = alloc::vec![0.0; g_tot + 1];
    rho[0] = libm::exp(ln_rho0);
    for g in 0..g_tot {
        rho[g + 1] = rho[g] * libm::sqrt((g as f64 + 1.0) / (g_tot - g) as f64);
    }
    rho
}

// ═══════════════════════════════════════════════════════════════════════
// Aggregate detector operators
// ═══════════════════════════════════════════════════════════════════════

/// Scaled per-bin moments and symmetry-exact weighted sums over one axis.
struct MomentTable {
    /// `m_hat[g][j]`: scaled moment of degree `g` over bin `j` (0-based).
    m_hat: Vec<Vec<f64>>,
    /// Unweighted sums over bins; exactly zero for odd `g`.
    s0: Vec<f64>,
    /// Center-weighted sums; exactly zero for even `g`.
    s1: Vec<f64>,
    /// Squared-center-weighted sums; exactly zero for odd `g`.
    s2: Vec<f64>,
}

impl MomentTable {
    /// Builds moments of all degrees `0..=gmax` on the detector grid.
    ///
    /// The weighted sums are assembled from mirror bin pairs so that the
    /// parities forced by grid symmetry hold exactly in f64, not just to
    /// rounding: the two members of a pair contribute identical floats
    /// with equal or opposite signs, combined once.
    fn build(det: &DetectorModel, gmax: usize) -> Self {
        let d = det.d;
        let mut m_hat = alloc::vec![alloc::vec![0.0; d]; gmax + 1];
        let mut s0 = alloc::vec![0.0; gmax + 1];
        let mut s1 = alloc::vec![0.0; gmax + 1];
        let mut s2 = alloc::vec![0.0; gmax + 1];
        for g in 0..=gmax {
            for j in 0..d {
                m_hat[g][j] = crate::fock::m_hat(g, det.edges[j], det.edges[j + 1]);
            }
            // Full-range sum over one interval: exactly zero for odd
            // degrees by the straddle parity inside m_hat.
            s0[g] = crate::fock::m_hat(g, -det.r, det.r);
            // Mirror pairs: bin d-1-j is the reflection of bin j, its
            // moment is (-1)^g times the same float, its center the exact
            // negation, so one parity survives with a factor 2 and the
            // other cancels identically.
            for j in 0..d / 2 {
                let q = det.centers[j];
                let dm = m_hat[g][j];
                if g % 2 == 1 {
                    s1[g] += 2.0 * q * dm;
                } else {
                    s2[g] += 2.0 * q * q * dm;
                }
            }
            // An odd middle bin is self-mirrored with center exactly zero:
            // it contributes to s0 only, which the full-range value covers.
        }
        Self { m_hat, s0, s1, s2 }
    }
}

/// Aggregate observables of the binned receiver in the number basis.
#[derive(Debug, Clone)]
pub struct DetectorOperators {
    /// Sum of all bin elements: the on-range part of the POVM resolution.
    pub range_op: DMatrix<f64>,
    /// Bin elements weighted by the squared modulus of their center.
    pub second_moment_op: DMatrix<f64>,
    /// Bin elements weighted by their complex center; real in the number
    /// basis by grid symmetry.
    pub amplitude_op: DMatrix<f64>,
}

/// Assembles the range, second-moment and amplitude observables for
/// photon numbers `0..=nmax`.
///
/// Grid symmetry confines support to photon-number differences that are
/// 0 mod 4 (range, second moment) or 1 mod 4 (amplitude, column minus
/// row). Forbidden entries are assembled anyway, asserted to be at
/// rounding level and pinned to exact zeros.
pub fn build_detector_operators(
    det: &DetectorModel,
    nmax: usize,
) -> Result<DetectorOperators, FockError> {
    if nmax > NMAX_LIMIT {
        return Err(FockError::CutoffTooLarge(nmax));
    }
    let dim = nmax + 1;
    let table = MomentTable::build(det, 2 * nmax);
    let inv_2pi = 0.5 / core::f64::consts::PI;
    let inv_2pi_sqrt2 = inv_2pi / core::f64::consts::SQRT_2;

    let mut range_op = DMatrix::zeros(dim, dim);
    let mut second_moment_op = DMatrix::zeros(dim, dim);
    let mut amplitude_op = DMatrix::zeros(dim, dim);

    for n in 0..dim {
        let mut kappa = signed_binomial_row(n);
        for np in 0..dim {
            if np > 0 {
                multiply_one_plus_u(&mut kappa);
            }
            let g_tot = n + np;
            let diff = np as i64 - n as i64;
            if diff.rem_euclid(2) == 0 {
                // Candidate entries of the range and second-moment
                // operators. The total degree is even here and only even
                // degrees carry weight on both axes.
                let rho = rho_ladder(n, np);
                let mut acc_u = 0.0;
                let mut acc_v = 0.0;
                let mut g = 0;
                while g <= g_tot {
                    let gp = g_tot - g;
                    let sign = ipow_real(n as i64 - np as i64 + g as i64);
                    let base = sign * kappa[g] as f64 * rho[g];
                    acc_u += base * table.s0[g] * table.s0[gp];
                    acc_v +=
                        base * 0.5 * (table.s2[g] * table.s0[gp] + table.s0[g] * table.s2[gp]);
                    g += 2;
                }
                acc_u *= inv_2pi;
                acc_v *= inv_2pi;
                if diff.rem_euclid(4) == 2 {
                    let residue = libm::fmax(libm::fabs(acc_u), libm::fabs(acc_v));
                    if residue > tolerances::SPARSITY_RESIDUE_ABS {
                        return Err(FockError::SymmetryResidue { n, np, residue });
                    }
                } else {
                    range_op[(n, np)] = acc_u;
                    second_moment_op[(n, np)] = acc_v;
                }
            } else {
                // Candidate entries of the amplitude observable. The real
                // part of the center weights odd q-degrees, the imaginary
                // part (with its extra factor i) odd p-degrees; in both
                // cases the unit i^(n-np+g) or i^(n-np+g+1) is real
                // because the photon-number difference is odd here.
                let rho = rho_ladder(n, np);
                let mut acc_b = 0.0;
                for g in 0..=g_tot {
                    let gp = g_tot - g;
                    let base = kappa[g] as f64 * rho[g];
                    if g % 2 == 1 && gp % 2 == 0 {
                        acc_b += ipow_real(n as i64 - np as i64 + g as i64)
                            * base
                            * table.s1[g]
                            * table.s0[gp];
                    } else if g % 2 == 0 && gp % 2 == 1 {
                        acc_b += ipow_real(n as i64 - np as i64 + g as i64 + 1)
                            * base
                            * table.s0[g]
                            * table.s1[gp];
                    }
                }
                acc_b *= inv_2pi_sqrt2;
                if diff.rem_euclid(4) == 3 {
                    if libm::fabs(acc_b) > tolerances::SPARSITY_RESIDUE_ABS {
                        return Err(FockError::SymmetryResidue { n, np, residue: acc_b });
                    }
                } else {
                    amplitude_op[(n, np)] = acc_b;
                }
            }
        }
    }
    Ok(DetectorOperators { range_op, second_moment_op, amplitude_op })
}

/// Number-basis matrix of the POVM element of bin `(j, k)` (1-based).
///
/// Individual bins have no symmetry protection, so the result is a dense
/// complex Hermitian matrix.
pub fn bin_projector(
    det: &DetectorModel,
    j: usize,
    k: usize,
    nmax: usize,
) -> Result<DMatrix<Complex64>, FockError> {
    if nmax > NMAX_LIMIT {
        return Err(FockError::CutoffTooLarge(nmax));
    }
    if j == 0 || j > det.d {
        return Err(FockError::BinIndexOutOfRange(j));
    }
    if k == 0 || k > det.d {
        return Err(FockError::BinIndexOutOfRange(k));
    }
    let dim = nmax + 1;
    let table = MomentTable::build(det, 2 * nmax);
    let mq = |g: usize| table.m_hat[g][j - 1];
    let mp = |g: usize| table.m_hat[g][k - 1];
    let inv_2pi = 0.5 / core::f64::consts::PI;
    let mut out = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        let mut kappa = signed_binomial_row(n);
        for np in 0..dim {
            if np > 0 {
                multiply_one_plus_u(&mut kappa);
            }
            let g_tot = n + np;
            let rho = rho_ladder(n, np);
            let mut acc = Complex64::new(0.0, 0.0);
            for g in 0..=g_tot {
                let unit = ipow(n as i64 - np as i64 + g as i64);
                acc += unit * (kappa[g] as f64 * rho[g] * mq(g) * mp(g_tot - g));
            }
            out[(n, np)] = acc * inv_2pi;
        }
    }
    Ok(out)
}

// ═══════════════════════════════════════════════════════════════════════
// Tail diagnostics and objectives
// ═══════════════════════════════════════════════════════════════════════

/// Photon-number tail diagnostics for the cutoff argument.
#[derive(Debug, Clone)]
pub struct TailOperators {
    /// Diagonal of the tail-mass observable: `mass[n]` is the probability
    /// that a level-`n` Fock state produces an outcome outside the range,
    /// lower-bounded by the radial tail `Q(n+1, 2 r^2)` of the outcome
    /// distribution.
    pub mass: DVector<f64>,
    /// Diagonal indicator of photon numbers strictly above `2 r^2`.
    pub indicator: DVector<f64>,
}

/// Builds the tail diagnostics for photon numbers `0..=nmax`.
pub fn tail_operators(r: f64, nmax: usize) -> Result<TailOperators, FockError> {
    if !(r > 0.0 && r <= RANGE_LIMIT && r.is_finite()) {
        return Err(FockError::RangeOutOfBounds(r));
    }
    let two_r2 = 2.0 * r * r;
    let mass = DVector::from_fn(nmax + 1, |n, _| {
        special::reg_upper_gamma_int(n as u32 + 1, two_r2)
    });
    let indicator =
        DVector::from_fn(nmax + 1, |n, _| if n as f64 > two_r2 { 1.0 } else { 0.0 });
    Ok(TailOperators { mass, indicator })
}

/// Kronecker product with the left factor indexing the slow (block) axis.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let av = a[(i, j)];
            if av == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = av * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Objectives of the two extremal covariance problems on the truncated
/// space, with the photon support restricted to the cutoff block.
///
/// Returns `(photon_objective, corr_objective)`:
/// - `photon_objective`: diagonal `n + 1/2` for `n <= n_cut`, zero above;
///   the symmetrized photon-number observable compressed by the cutoff
///   projector.
/// - `corr_objective`: symmetrized product of Alice's compressed ladder
///   matrix (rotated basis) with the cutoff-truncated ladder operator on
///   the received mode, dimension `4 (nmax + 1)`.
pub fn build_objectives(
    ebr: &EBRepresentation,
    nmax: usize,
    n_cut: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>), FockError> {
    if nmax < n_cut {
        return Err(FockError::CutoffBelowRange { nmax, n_cut });
    }
    let dim = nmax + 1;
    let photon = DMatrix::from_fn(dim, dim, |n, np| {
        if n == np && n <= n_cut {
            n as f64 + 0.5
        } else {
            0.0
        }
    });
    // Cutoff-truncated ladder operator: entries sqrt(n) at (n-1, n) for
    // n <= n_cut.
    let mut ladder = DMatrix::zeros(dim, dim);
    for n in 1..=n_cut {
        ladder[(n - 1, n)] = libm::sqrt(n as f64);
    }
    let half = 0.5;
    let corr = (kron(ebr.a_rot(), &ladder) + kron(&ebr.a_rot().transpose(), &ladder.transpose()))
        * half;
    Ok((photon, corr))
}

// ═══════════════════════════════════════════════════════════════════════
// Bundle
// ═══════════════════════════════════════════════════════════════════════

/// Every truncated-basis operator the optimization problems consume, for
/// one detector geometry, source and photon cutoff.
#[derive(Debug, Clone)]
pub struct FockOperatorSet {
    nmax: usize,
    n_cut: usize,
    det: DetectorModel,
    /// On-range part of the POVM resolution.
    pub range_op: DMatrix<f64>,
    /// Second-moment observable.
    pub second_moment_op: DMatrix<f64>,
    /// Amplitude observable.
    pub amplitude_op: DMatrix<f64>,
    /// Tail-mass diagonal.
    pub tail_mass: DVector<f64>,
    /// Tail-indicator diagonal.
    pub tail_indicator: DVector<f64>,
    /// Photon-number objective (cutoff-compressed), `nmax + 1` dims.
    pub photon_objective: DMatrix<f64>,
    /// Correlation objective on the joint register, `4 (nmax + 1)` dims.
    pub corr_objective: DMatrix<f64>,
    /// Correlation constraint observable on the joint register: the
    /// symmetrized product of the constellation operator with the
    /// amplitude observable.
    pub corr_constraint: DMatrix<f64>,
}

impl FockOperatorSet {
    /// Builds all operators. `nmax` must cover the range-induced cutoff.
    pub fn build(
        det: &DetectorModel,
        ebr: &EBRepresentation,
        nmax: usize,
    ) -> Result<Self, FockError> {
        let n_cut = det.n_cut();
        if nmax < n_cut {
            return Err(FockError::CutoffBelowRange { nmax, n_cut });
        }
        if nmax > NMAX_LIMIT {
            return Err(FockError::CutoffTooLarge(nmax));
        }
        let ops = build_detector_operators(det, nmax)?;
        let tails = tail_operators(det.r(), nmax)?;
        let (photon_objective, corr_objective) = build_objectives(ebr, nmax, n_cut)?;
        let corr_constraint = (kron(&ebr.amp_rot().transpose(), &ops.amplitude_op)
            + kron(ebr.amp_rot(), &ops.amplitude_op.transpose()))
            * 0.5;
        Ok(Self {
            nmax,
            n_cut,
            det: det.clone(),
            range_op: ops.range_op,
            second_moment_op: ops.second_moment_op,
            amplitude_op: ops.amplitude_op,
            tail_mass: tails.mass,
            tail_indicator: tails.indicator,
            photon_objective,
            corr_objective,
            corr_constraint,
        })
    }

    /// Photon cutoff (inclusive); matrices have `nmax + 1` dimensions.
    pub fn nmax(&self) -> usize {
        self.nmax
    }

    /// Range-induced cutoff `floor(2 r^2)`.
    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    /// Detector geometry the operators were built for.
    pub fn detector(&self) -> &DetectorModel {
        &self.det
    }

    /// Diagonal of the cutoff projector: 1 up to `n_cut`, 0 above.
    pub fn cutoff_diag(&self) -> DVector<f64> {
        DVector::from_fn(self.nmax + 1, |n, _| if n <= self.n_cut { 1.0 } else { 0.0 })
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::integrate_gl;
    use approx::assert_relative_eq;

    #[test]
    fn detector_grid_mirror_exact() {
        let det = DetectorModel::new(7.0, 16).unwrap();
        assert_eq!(det.n_cut(), 98);
        assert_eq!(det.edges().len(), 17);
        assert_eq!(det.centers().len(), 16);
        for j in 0..=16 {
            assert_eq!(det.edges()[j], -det.edges()[16 - j]);
        }
        for j in 0..16 {
            assert_eq!(det.centers()[j], -det.centers()[15 - j]);
        }
        assert_eq!(det.edges()[0], -7.0);
        assert_eq!(det.edges()[16], 7.0);
        let (lo, hi) = det.bin_interval(1).unwrap();
        assert_relative_eq!(lo, -7.0);
        assert_relative_eq!(hi, -6.125);
        let beta = det.beta_center(1, 16).unwrap();
        assert_relative_eq!(beta.re, -6.5625 / core::f64::consts::SQRT_2, max_relative = 1e-15);
        assert_relative_eq!(beta.im, 6.5625 / core::f64::consts::SQRT_2, max_relative = 1e-15);
        assert!(det.bin_interval(0).is_err());
        assert!(det.bin_interval(17).is_err());
        assert!(DetectorModel::new(0.0, 16).is_err());
        assert!(DetectorModel::new(7.0, 0).is_err());
        assert!(DetectorModel::new(19.0, 16).is_err());
    }

    #[test]
    fn coherent_amplitudes_normalized_and_overlapping() {
        let b1 = Complex64::new(0.3, -0.4);
        let b2 = Complex64::new(-1.1, 0.7);
        let c1 = coherent_amplitudes(b1, 60).unwrap();
        let c2 = coherent_amplitudes(b2, 60).unwrap();
        let norm1: f64 = c1.iter().map(|c| c.norm_sqr()).sum();
        assert_relative_eq!(norm1, 1.0, max_relative = 1e-13);
        let overlap: Complex64 = c1.iter().zip(&c2).map(|(a, b)| a.conj() * b).sum();
        let expect =
            (-0.5 * (b1.norm_sqr() + b2.norm_sqr()) + b1.conj() * b2).exp();
        assert!((overlap - expect).norm() < 1e-13);
        assert!(coherent_amplitudes(Complex64::new(25.0, 0.0), 10).is_err());
    }

    #[test]
    fn gauss_moment_closed_forms() {
        let s2 = core::f64::consts::SQRT_2;
        let spi2 = libm::sqrt(core::f64::consts::FRAC_PI_2);
        for &(lo, hi) in &[(-7.0, 7.0), (0.0, 1.5), (-2.0, 0.5), (3.0, 7.0)] {
            let m0 = gauss_moment(0, lo, hi).unwrap();
            let expect0 = spi2 * (special::erf(hi / s2) - special::erf(lo / s2));
            assert_relative_eq!(m0, expect0, max_relative = 1e-13, epsilon = 1e-305);
            let m1 = gauss_moment(1, lo, hi).unwrap();
            let expect1 = libm::exp(-0.5 * lo * lo) - libm::exp(-0.5 * hi * hi);
            assert_relative_eq!(m1, expect1, max_relative = 1e-12, epsilon = 1e-305);
            // Integration by parts: M_2 = [-t e^(-t^2/2)] + M_0.
            let m2 = gauss_moment(2, lo, hi).unwrap();
            let expect2 = lo * libm::exp(-0.5 * lo * lo) - hi * libm::exp(-0.5 * hi * hi) + m0;
            assert_relative_eq!(m2, expect2, max_relative = 1e-12, epsilon = 1e-305);
        }
    }

    #[test]
    fn gauss_moment_odd_symmetric_exactly_zero() {
        for degree in (1..60).step_by(2) {
            assert_eq!(gauss_moment(degree, -3.7, 3.7).unwrap(), 0.0);
        }
    }

    /// Panelized fixed-order quadrature: high degrees vary too fast over
    /// a full bin for one 64-node rule, but are machine-accurate on
    /// eighths.
    fn quad_panels(degree: usize, lo: f64, hi: f64) -> f64 {
        let panels = 8;
        let mut total = 0.0;
        for p in 0..panels {
            let a = lo + (hi - lo) * p as f64 / panels as f64;
            let b = lo + (hi - lo) * (p + 1) as f64 / panels as f64;
            total += integrate_gl(
                |t| libm::pow(libm::fabs(t), degree as f64) * libm::exp(-0.5 * t * t)
                    * if t < 0.0 && degree % 2 == 1 { -1.0 } else { 1.0 },
                a,
                b,
                64,
            );
        }
        total
    }

    #[test]
    fn gauss_moment_against_quadrature() {
        // Spot grid over degrees and intervals, including supercritical
        // degrees where the naive forward recursion collapses.
        let det = DetectorModel::new(7.0, 16).unwrap();
        for &degree in &[0usize, 1, 2, 3, 7, 20, 57, 120, 199, 260] {
            for j in [1usize, 5, 8, 9, 12, 16] {
                let (lo, hi) = det.bin_interval(j).unwrap();
                let direct = gauss_moment(degree, lo, hi).unwrap();
                let quad = quad_panels(degree, lo, hi);
                assert_relative_eq!(
                    direct,
                    quad,
                    max_relative = crate::tolerances::MOMENT_QUAD_REL,
                    epsilon = 1e-280
                );
            }
        }
        assert!(gauss_moment(261, 0.0, 1.0).is_err());
        assert!(gauss_moment(4, -15.0, 1.0).is_err());
    }

    #[test]
    fn gauss_moment_matches_parts_recursion_in_stable_regime() {
        // The integration-by-parts identity
        // M_a = [-t^(a-1) e^(-t^2/2)] + (a-1) M_(a-2)
        // is numerically stable while the degree stays below the interval
        // scale; there it provides an independent oracle.
        let (lo, hi) = (3.0, 7.0);
        let mut prev2 = gauss_moment(0, lo, hi).unwrap();
        let mut prev1 = gauss_moment(1, lo, hi).unwrap();
        for a in 2..=9usize {
            let boundary = libm::pow(lo, (a - 1) as f64) * libm::exp(-0.5 * lo * lo)
                - libm::pow(hi, (a - 1) as f64) * libm::exp(-0.5 * hi * hi);
            let expect = boundary + (a as f64 - 1.0) * prev2;
            let direct = gauss_moment(a, lo, hi).unwrap();
            assert_relative_eq!(direct, expect, max_relative = 1e-11);
            prev2 = prev1;
            prev1 = direct;
        }
    }

    #[test]
    fn tail_mass_reference() {
        let r = 2.0;
        let tails = tail_operators(r, 20).unwrap();
        assert_relative_eq!(tails.mass[0], libm::exp(-8.0), max_relative = 1e-13);
        // Monotone in n: higher Fock levels leak more mass outside.
        for n in 1..=20 {
            assert!(tails.mass[n] >= tails.mass[n - 1]);
        }
        // Indicator switches strictly above 2 r^2 = 8.
        for n in 0..=8 {
            assert_eq!(tails.indicator[n], 0.0);
        }
        for n in 9..=20 {
            assert_eq!(tails.indicator[n], 1.0);
        }
        // Indicator dominated by twice the mass: above the mean the
        // radial tail probability exceeds one half.
        for n in 0..=20 {
            assert!(2.0 * tails.mass[n] >= tails.indicator[n]);
        }
    }

    /// Brute-force complex bin element by 2D quadrature, for cross-checks.
    fn bin_entry_quadrature(
        det: &DetectorModel,
        j: usize,
        k: usize,
        n: usize,
        np: usize,
    ) -> Complex64 {
        let (qlo, qhi) = det.bin_interval(j).unwrap();
        let (plo, phi) = det.bin_interval(k).unwrap();
        let fac = libm::exp(
            -0.5 * (special::ln_factorial(n as u64) + special::ln_factorial(np as u64)),
        ) * libm::pow(2.0, -((n + np) as f64) / 2.0)
            / (2.0 * core::f64::consts::PI);
        let integrand = |q: f64, p: f64| -> Complex64 {
            let zp = Complex64::new(q, p);
            let zm = Complex64::new(q, -p);
            zp.powu(n as u32) * zm.powu(np as u32) * libm::exp(-0.5 * (q * q + p * p))
        };
        // Nested fixed-order quadrature, real and imaginary parts.
        let re = integrate_gl(
            |q| integrate_gl(|p| integrand(q, p).re, plo, phi, 48),
            qlo,
            qhi,
            48,
        );
        let im = integrate_gl(
            |q| integrate_gl(|p| integrand(q, p).im, plo, phi, 48),
            qlo,
            qhi,
            48,
        );
        Complex64::new(re, im) * fac
    }

    #[test]
    fn bin_projector_matches_quadrature() {
        let det = DetectorModel::new(1.5, 2).unwrap();
        let nmax = 6;
        for j in 1..=2 {
            for k in 1..=2 {
                let op = bin_projector(&det, j, k, nmax).unwrap();
                // Hermiticity.
                let dev = (&op - op.adjoint()).norm();
                assert!(dev < 1e-14, "bin ({j},{k}) hermiticity {dev}");
                for n in 0..=nmax {
                    for np in 0..=nmax {
                        let direct = bin_entry_quadrature(&det, j, k, n, np);
                        let diff = (op[(n, np)] - direct).norm();
                        assert!(
                            diff < 1e-12,
                            "bin ({j},{k}) entry ({n},{np}): {} vs {direct}",
                            op[(n, np)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn aggregates_match_weighted_bin_sums() {
        let det = DetectorModel::new(1.5, 3).unwrap();
        let nmax = 8;
        let ops = build_detector_operators(&det, nmax).unwrap();
        let dim = nmax + 1;
        let mut sum_u = DMatrix::<Complex64>::zeros(dim, dim);
        let mut sum_v = DMatrix::<Complex64>::zeros(dim, dim);
        let mut sum_b = DMatrix::<Complex64>::zeros(dim, dim);
        for j in 1..=3 {
            for k in 1..=3 {
                let p = bin_projector(&det, j, k, nmax).unwrap();
                let beta = det.beta_center(j, k).unwrap();
                sum_u += &p;
                sum_v += &p * Complex64::from(beta.norm_sqr());
                sum_b += &p * beta;
            }
        }
        for n in 0..dim {
            for np in 0..dim {
                assert!((sum_u[(n, np)] - Complex64::from(ops.range_op[(n, np)])).norm() < 1e-12);
                assert!(
                    (sum_v[(n, np)] - Complex64::from(ops.second_moment_op[(n, np)])).norm()
                        < 1e-12
                );
                assert!(
                    (sum_b[(n, np)] - Complex64::from(ops.amplitude_op[(n, np)])).norm() < 1e-12,
                    "amplitude entry ({n},{np}): {} vs {}",
                    sum_b[(n, np)],
                    ops.amplitude_op[(n, np)]
                );
            }
        }
    }

    #[test]
    fn sparsity_pattern_exact() {
        let det = DetectorModel::new(2.0, 4).unwrap();
        let nmax = 12;
        let ops = build_detector_operators(&det, nmax).unwrap();
        for n in 0..=nmax {
            for np in 0..=nmax {
                let diff = (np as i64 - n as i64).rem_euclid(4);
                if diff != 0 {
                    assert_eq!(ops.range_op[(n, np)], 0.0);
                    assert_eq!(ops.second_moment_op[(n, np)], 0.0);
                }
                if diff != 1 {
                    assert_eq!(ops.amplitude_op[(n, np)], 0.0);
                }
            }
        }
    }

    #[test]
    fn range_op_vacuum_and_spectrum() {
        let det = DetectorModel::new(7.0, 16).unwrap();
        let nmax = 40;
        let ops = build_detector_operators(&det, nmax).unwrap();
        // Vacuum element: product of two 1D Gaussian range masses.
        let e = special::erf(7.0 / core::f64::consts::SQRT_2);
        assert_relative_eq!(ops.range_op[(0, 0)], e * e, max_relative = 1e-12);
        // Symmetric with spectrum inside [0, 1] up to rounding.
        let dev = (&ops.range_op - ops.range_op.transpose()).norm();
        assert!(dev < 1e-13);
        let eigs = nalgebra::SymmetricEigen::new(ops.range_op.clone()).eigenvalues;
        for e in eigs.iter() {
            assert!(*e > crate::tolerances::PSD_EIG_FLOOR);
            assert!(*e < 1.0 + 1e-10);
        }
        // Diagonal entry at a level whose outcome cloud leaks outside the
        // square: cross-check against direct 2D quadrature of the radial
        // outcome density over the detection square.
        let n = 40usize;
        let ln_fac = special::ln_factorial(n as u64);
        let density = |q: f64, p: f64| {
            let r2 = 0.5 * (q * q + p * p);
            if r2 == 0.0 {
                0.0
            } else {
                libm::exp(n as f64 * libm::log(r2) - r2 - ln_fac)
            }
        };
        // Quadrant symmetry; 4x one-quadrant integral.
        let quad = 4.0
            * integrate_gl(
                |q| integrate_gl(|p| density(q, p), 0.0, 7.0, 96),
                0.0,
                7.0,
                96,
            )
            / (2.0 * core::f64::consts::PI);
        assert_relative_eq!(ops.range_op[(n, n)], quad, max_relative = 1e-9);
    }

    #[test]
    fn second_moment_dominates_on_vacuum() {
        // On the vacuum the second-moment observable averages |beta|^2
        // over the outcome distribution; it must be positive and below
        // the corner value r^2.
        let det = DetectorModel::new(2.0, 8).unwrap();
        let ops = build_detector_operators(&det, 10).unwrap();
        let v00 = ops.second_moment_op[(0, 0)];
        assert!(v00 > 0.0);
        assert!(v00 < det.r() * det.r());
    }

    #[test]
    fn objectives_shapes_and_values() {
        let ebr = EBRepresentation::qpsk(0.5).unwrap();
        let (photon, corr) = build_objectives(&ebr, 10, 8).unwrap();
        assert_eq!(photon.nrows(), 11);
        assert_eq!(corr.nrows(), 44);
        for n in 0..=10 {
            let expect = if n <= 8 { n as f64 + 0.5 } else { 0.0 };
            assert_eq!(photon[(n, n)], expect);
        }
        // Symmetry of the correlation objective.
        let dev = (&corr - corr.transpose()).norm();
        assert!(dev < 1e-15);
        assert!(build_objectives(&ebr, 5, 8).is_err());
    }

    #[test]
    fn corr_objective_identity_channel_expectation() {
        // On the lossless channel the joint state is the source
        // purification; the correlation objective must average to
        // amp^2 sum_y lambda_{y-1}^(3/2) lambda_y^(-1/2) up to the photon
        // cutoff truncation.
        let amp = 0.5;
        let ebr = EBRepresentation::qpsk(amp).unwrap();
        let nmax = 30;
        let n_cut = 30;
        let (_, corr) = build_objectives(&ebr, nmax, n_cut).unwrap();
        let dim = nmax + 1;
        // Joint state coefficients in (rotated register) x (Fock) basis:
        // Psi[y][n] = sqrt(lambda_y) e^(-i y pi/4) phi_y[n].
        let mut psi = alloc::vec![Complex64::new(0.0, 0.0); 4 * dim];
        for y in 0..4 {
            let weight = Complex64::from_polar(
                libm::sqrt(ebr.lambdas()[y]),
                -(y as f64) * core::f64::consts::FRAC_PI_4,
            );
            let phi = ebr.schmidt_vector_emitted(y, nmax);
            for n in 0..dim {
                psi[y * dim + n] = weight * phi[n];
            }
        }
        let mut expect = Complex64::new(0.0, 0.0);
        for a in 0..4 * dim {
            for b in 0..4 * dim {
                expect += psi[a].conj() * Complex64::from(corr[(a, b)]) * psi[b];
            }
        }
        let l = ebr.lambdas();
        let analytic: f64 = (0..4)
            .map(|y| amp * amp * libm::pow(l[(y + 3) % 4], 1.5) / libm::sqrt(l[y]))
            .sum();
        assert!(libm::fabs(expect.im) < 1e-13);
        assert_relative_eq!(expect.re, analytic, max_relative = 1e-10);
    }

    #[test]
    fn operator_set_bundles_consistently() {
        let det = DetectorModel::new(2.0, 4).unwrap();
        let ebr = EBRepresentation::qpsk(0.5).unwrap();
        let set = FockOperatorSet::build(&det, &ebr, 10).unwrap();
        assert_eq!(set.nmax(), 10);
        assert_eq!(set.n_cut(), 8);
        assert_eq!(set.corr_constraint.nrows(), 44);
        // Correlation constraint symmetric.
        let dev = (&set.corr_constraint - set.corr_constraint.transpose()).norm();
        assert!(dev < 1e-13);
        let pi = set.cutoff_diag();
        assert_eq!(pi[8], 1.0);
        assert_eq!(pi[9], 0.0);
        // nmax below the cutoff is rejected.
        assert!(FockOperatorSet::build(&det, &ebr, 5).is_err());
    }
}
