//! Constellation definition and the entanglement-based description of the
//! source.
//!
//! The protocol prepares one of four coherent states `alpha_x = alpha i^x`
//! with equal probability, where `alpha = amp * exp(i pi/4)` places the
//! constellation on the diagonals. Security proofs work in the equivalent
//! entanglement-based picture: Alice holds a four-dimensional register, the
//! source emits a pure two-mode state whose reduction to Alice is a fixed
//! known state `sigma`, and Alice's ladder operator compresses to a 4x4
//! matrix on her register.
//!
//! The four Schmidt vectors of the purification are superpositions of Fock
//! states with photon number fixed modulo 4. Rotating the `y`-th Schmidt
//! vector by `exp(i y pi/4)` makes every matrix this crate feeds into the
//! optimization real, which halves SDP variable counts. The rotation is a
//! local unitary on Alice's register, so no bound is affected; the
//! construction asserts the imaginary parts it discards are at rounding
//! level.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::tolerances;

/// Errors from constellation and source construction.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolError {
    /// Coherent amplitude must be positive and moderate.
    AmplitudeOutOfRange(f64),
    /// A spectral weight underflowed to a value too small to divide by.
    DegenerateSpectrum(usize),
    /// A matrix expected to be real after rotation had a large imaginary part.
    ResidualImaginary(f64),
}

impl core::fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::AmplitudeOutOfRange(a) => {
                write!(f, "coherent amplitude {a} outside the supported range (0, 5]")
            }
            Self::DegenerateSpectrum(y) => {
                write!(f, "source spectral weight {y} underflowed")
            }
            Self::ResidualImaginary(r) => {
                write!(f, "residual imaginary part {r} after basis rotation")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ProtocolError {}

/// Number of constellation points.
pub const QPSK_POINTS: usize = 4;

// ═══════════════════════════════════════════════════════════════════════
// Constellation
// ═══════════════════════════════════════════════════════════════════════

/// A finite set of coherent signal states with prior probabilities.
#[derive(Debug, Clone)]
pub struct Constellation {
    amplitudes: Vec<Complex64>,
    probs: Vec<f64>,
}

impl Constellation {
    /// Quadrature phase-shift keying: `alpha_x = amp exp(i pi/4) i^x`,
    /// uniform priors.
    pub fn qpsk(amp: f64) -> Result<Self, ProtocolError> {
        validate_amp(amp)?;
        let alpha = Complex64::from_polar(amp, core::f64::consts::FRAC_PI_4);
        let i = Complex64::new(0.0, 1.0);
        let amplitudes = (0..QPSK_POINTS).map(|x| alpha * i.powu(x as u32)).collect();
        Ok(Self { amplitudes, probs: alloc::vec![0.25; QPSK_POINTS] })
    }

    /// Number of signal states.
    pub fn m(&self) -> usize {
        self.amplitudes.len()
    }

    /// Signal amplitudes `alpha_x`.
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Prior probabilities.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Modulus of the signal amplitudes (equal for all points by design).
    pub fn amp(&self) -> f64 {
        self.amplitudes[0].norm()
    }

    /// Sub-Gaussian scale of the per-round correlation variable: the
    /// largest value of `Re(conj(alpha_x) beta)` over signals and over
    /// outcomes `beta` inside the square detection region of range 1,
    /// namely `max_x (|Re alpha_x| + |Im alpha_x|) / sqrt(2)`.
    pub fn a_param(&self) -> f64 {
        let mut a: f64 = 0.0;
        for alpha in &self.amplitudes {
            a = a.max((alpha.re.abs() + alpha.im.abs()) / core::f64::consts::SQRT_2);
        }
        a
    }

    /// Upper bound on the operator norm of the correlation observable for
    /// detection range `r`: the observable averages `Re(conj(alpha_x) beta)`
    /// over bin centers, all of which lie inside the square of range `r`.
    pub fn cnorm_bound(&self, r: f64) -> f64 {
        self.a_param() * r
    }
}

fn validate_amp(amp: f64) -> Result<(), ProtocolError> {
    if !(amp > 0.0 && amp <= 5.0 && amp.is_finite()) {
        return Err(ProtocolError::AmplitudeOutOfRange(amp));
    }
    Ok(())
}

// ═══════════════════════════════════════════════════════════════════════
// Source spectrum
// ═══════════════════════════════════════════════════════════════════════

/// Spectral weights of Alice's reduced state for the QPSK source.
///
/// `lambda_y` collects the Poisson weights of photon numbers congruent to
/// `y` modulo 4:
///
/// ```text
/// lambda_y = exp(-amp^2) * sum_{n>=0} amp^(2(y+4n)) / (y+4n)!
/// ```
///
/// The series is evaluated term by term (all terms positive, no
/// cancellation) until relative convergence; the tests pin it against the
/// closed hyperbolic/trigonometric form.
pub fn qpsk_lambdas(amp: f64) -> Result<[f64; 4], ProtocolError> {
    validate_amp(amp)?;
    let z = amp * amp;
    let mut lambdas = [0.0_f64; 4];
    for (y, lam) in lambdas.iter_mut().enumerate() {
        // First term: exp(-z) z^y / y!.
        let mut term = libm::exp(-z);
        for k in 1..=y {
            term *= z / k as f64;
        }
        let mut sum = term;
        let mut m = y;
        loop {
            // Advance four photon numbers: multiply by z^4 / ((m+1)..(m+4)).
            for _ in 0..4 {
                m += 1;
                term *= z / m as f64;
            }
            sum += term;
            if term < sum * 1e-18 {
                break;
            }
        }
        *lam = sum;
    }
    Ok(lambdas)
}

// ═══════════════════════════════════════════════════════════════════════
// Reduced state and ladder compression
// ═══════════════════════════════════════════════════════════════════════

/// Alice's reduced state in the signal basis: Gram matrix of the signal
/// ensemble, `sigma[x][x'] = sqrt(p_x p_x') <alpha_x' | alpha_x>`.
pub fn sigma_matrix(con: &Constellation) -> DMatrix<Complex64> {
    let m = con.m();
    let amps = con.amplitudes();
    let probs = con.probs();
    DMatrix::from_fn(m, m, |x, xp| {
        let ax = amps[x];
        let axp = amps[xp];
        let overlap =
            (-0.5 * (ax.norm_sqr() + axp.norm_sqr()) + axp.conj() * ax).exp();
        Complex64::from(libm::sqrt(probs[x] * probs[xp])) * overlap
    })
}

/// Compression of the annihilation operator to Alice's register in the
/// signal basis.
///
/// The four Schmidt vectors of the source purification span an invariant
/// subspace of the annihilation operator: it maps the subspace into itself,
/// lowering the photon-number residue cyclically with amplitude ratios
/// `sqrt(lambda_{y-1} / lambda_y)`. Expressed in the signal basis the
/// entries are
///
/// ```text
/// <psi_x| a |psi_x'> = conj(alpha_x)/4 * sum_y exp(i y (x - x') pi/2)
///                                            sqrt(lambda_{y-1}/lambda_y)
/// ```
pub fn a_matrix(amp: f64) -> Result<DMatrix<Complex64>, ProtocolError> {
    let lambdas = qpsk_lambdas(amp)?;
    let ratios = ladder_ratios(&lambdas)?;
    let alpha = Complex64::from_polar(amp, core::f64::consts::FRAC_PI_4);
    let i = Complex64::new(0.0, 1.0);
    Ok(DMatrix::from_fn(QPSK_POINTS, QPSK_POINTS, |x, xp| {
        let mut s = Complex64::new(0.0, 0.0);
        for (y, ratio) in ratios.iter().enumerate() {
            let phase = Complex64::from_polar(
                1.0,
                y as f64 * (x as f64 - xp as f64) * core::f64::consts::FRAC_PI_2,
            );
            s += phase * *ratio;
        }
        (alpha * i.powu(x as u32)).conj() * s * 0.25
    }))
}

/// `sqrt(lambda_{y-1} / lambda_y)` with the index taken cyclically.
fn ladder_ratios(lambdas: &[f64; 4]) -> Result<[f64; 4], ProtocolError> {
    let mut ratios = [0.0_f64; 4];
    for y in 0..4 {
        if lambdas[y] < 1e-300 {
            return Err(ProtocolError::DegenerateSpectrum(y));
        }
        ratios[y] = libm::sqrt(lambdas[(y + 3) % 4] / lambdas[y]);
    }
    Ok(ratios)
}

// ═══════════════════════════════════════════════════════════════════════
// Entanglement-based representation
// ═══════════════════════════════════════════════════════════════════════

/// Everything the bounds need about the source, in both the signal basis
/// and the rotated Schmidt basis in which all matrices are real.
#[derive(Debug, Clone)]
pub struct EBRepresentation {
    con: Constellation,
    lambdas: [f64; 4],
    sigma: DMatrix<Complex64>,
    aop: DMatrix<Complex64>,
    gamma_a: f64,
    a_rot: DMatrix<f64>,
    amp_rot: DMatrix<f64>,
}

impl EBRepresentation {
    /// Builds the representation for the QPSK source of modulus `amp`.
    pub fn qpsk(amp: f64) -> Result<Self, ProtocolError> {
        let con = Constellation::qpsk(amp)?;
        let lambdas = qpsk_lambdas(amp)?;
        let sigma = sigma_matrix(&con);
        let aop = a_matrix(amp)?;
        let ratios = ladder_ratios(&lambdas)?;

        // Rotated ladder compression: superdiagonal sqrt(lambda_{y-1} /
        // lambda_y) scaled by amp, with a sign flip on the cyclic wrap.
        let mut a_rot = DMatrix::zeros(QPSK_POINTS, QPSK_POINTS);
        for y in 1..QPSK_POINTS {
            a_rot[(y - 1, y)] = amp * ratios[y];
        }
        a_rot[(QPSK_POINTS - 1, 0)] = -amp * ratios[0];

        // Rotated constellation operator: subdiagonal amp, sign flip on
        // the wrap.
        let mut amp_rot = DMatrix::zeros(QPSK_POINTS, QPSK_POINTS);
        for y in 1..QPSK_POINTS {
            amp_rot[(y, y - 1)] = amp;
        }
        amp_rot[(0, QPSK_POINTS - 1)] = -amp;

        let ebr = Self {
            con,
            lambdas,
            sigma,
            aop,
            gamma_a: amp * amp + 0.5,
            a_rot,
            amp_rot,
        };
        ebr.check_rotation()?;
        Ok(ebr)
    }

    /// Constellation this representation describes.
    pub fn constellation(&self) -> &Constellation {
        &self.con
    }

    /// Spectral weights `lambda_y` of the reduced state.
    pub fn lambdas(&self) -> &[f64; 4] {
        &self.lambdas
    }

    /// Reduced state in the signal basis.
    pub fn sigma(&self) -> &DMatrix<Complex64> {
        &self.sigma
    }

    /// Ladder compression in the signal basis.
    pub fn aop(&self) -> &DMatrix<Complex64> {
        &self.aop
    }

    /// Alice's symmetrized quadrature variance, `amp^2 + 1/2`.
    pub fn gamma_a(&self) -> f64 {
        self.gamma_a
    }

    /// Ladder compression in the rotated Schmidt basis (real).
    pub fn a_rot(&self) -> &DMatrix<f64> {
        &self.a_rot
    }

    /// Constellation operator in the rotated Schmidt basis (real).
    pub fn amp_rot(&self) -> &DMatrix<f64> {
        &self.amp_rot
    }

    /// Reduced state in the rotated Schmidt basis: diagonal of spectral
    /// weights.
    pub fn sigma_rot(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.lambdas)
    }

    /// Fock coefficients of the `y`-th Schmidt vector on Alice's side
    /// (built from the conjugated amplitude), up to photon number `nmax`.
    pub fn schmidt_vector_alice(&self, y: usize, nmax: usize) -> Vec<Complex64> {
        self.schmidt_vector(y, nmax, true)
    }

    /// Fock coefficients of the `y`-th Schmidt vector on the emitted mode.
    pub fn schmidt_vector_emitted(&self, y: usize, nmax: usize) -> Vec<Complex64> {
        self.schmidt_vector(y, nmax, false)
    }

    fn schmidt_vector(&self, y: usize, nmax: usize, conjugate: bool) -> Vec<Complex64> {
        assert!(y < QPSK_POINTS);
        let amp = self.con.amp();
        let mut alpha = Complex64::from_polar(amp, core::f64::consts::FRAC_PI_4);
        if conjugate {
            alpha = alpha.conj();
        }
        let norm = libm::exp(-0.5 * amp * amp) / libm::sqrt(self.lambdas[y]);
        let mut coeffs = alloc::vec![Complex64::new(0.0, 0.0); nmax + 1];
        // alpha^n / sqrt(n!) by recurrence, keeping only n = y mod 4.
        let mut term = Complex64::new(1.0, 0.0);
        for n in 0..=nmax {
            if n > 0 {
                term *= alpha / Complex64::from(libm::sqrt(n as f64));
            }
            if n % 4 == y {
                coeffs[n] = term * norm;
            }
        }
        coeffs
    }

    /// Verifies that the analytic rotated matrices agree with conjugating
    /// the signal-basis matrices by the basis change and rotation phases.
    fn check_rotation(&self) -> Result<(), ProtocolError> {
        // Transformation matrix T[y][x] = <phi~_y | psi_x> = exp(-i y pi/4)
        // / 2 * exp(-i x y pi/2) maps signal-basis coordinates to rotated
        // Schmidt coordinates.
        let t = DMatrix::from_fn(QPSK_POINTS, QPSK_POINTS, |y, x| {
            Complex64::from_polar(
                0.5,
                -(y as f64) * core::f64::consts::FRAC_PI_4
                    - (x as f64) * (y as f64) * core::f64::consts::FRAC_PI_2,
            )
        });
        let th = t.adjoint();
        let mut worst = 0.0_f64;
        for (analytic, signal_basis) in
            [(&self.a_rot, &self.aop), (&self.amp_rot, &constellation_op(&self.con))]
        {
            let rotated = &t * signal_basis * &th;
            for y in 0..QPSK_POINTS {
                for yp in 0..QPSK_POINTS {
                    let v = rotated[(y, yp)];
                    worst = worst.max(libm::fabs(v.im));
                    worst = worst.max(libm::fabs(v.re - analytic[(y, yp)]));
                }
            }
        }
        let sigma_rotated = &t * &self.sigma * &th;
        for y in 0..QPSK_POINTS {
            for yp in 0..QPSK_POINTS {
                let expect = if y == yp { self.lambdas[y] } else { 0.0 };
                worst = worst.max((sigma_rotated[(y, yp)] - Complex64::from(expect)).norm());
            }
        }
        if worst > tolerances::SOURCE_CONSISTENCY_ABS {
            return Err(ProtocolError::ResidualImaginary(worst));
        }
        Ok(())
    }
}

/// Constellation operator in the signal basis: diagonal of amplitudes.
fn constellation_op(con: &Constellation) -> DMatrix<Complex64> {
    let m = con.m();
    let mut op = DMatrix::zeros(m, m);
    for (x, alpha) in con.amplitudes().iter().enumerate() {
        op[(x, x)] = *alpha;
    }
    op
}

/// Embeds a Hermitian complex matrix as the real symmetric matrix
/// `[[Re H, -Im H], [Im H, Re H]]`, preserving the spectrum (doubled).
///
/// Used by the general-constellation path when no rotation makes the data
/// real; for the QPSK source the rotated basis is preferred.
pub fn realify_hermitian(h: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = h.nrows();
    assert_eq!(n, h.ncols());
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            out[(r, c)] = h[(r, c)].re;
            out[(r, c + n)] = -h[(r, c)].im;
            out[(r + n, c)] = h[(r, c)].im;
            out[(r + n, c + n)] = h[(r, c)].re;
        }
    }
    out
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
