//! Finite-size security accounting: confidence intervals for the three
//! estimated channel summaries, the equipartition and hashing
//! corrections, and assembly of asymptotic and finite-block key rates.
//!
//! The composable analysis runs on three measured summaries: the mean
//! binned second moment, the sender-receiver correlation and the
//! out-of-range probability. Each gets a one-sided confidence radius
//! from an exponential tail bound, inverted so that the failure
//! probability of each interval is exactly a third of the parameter
//! estimation budget. The covariance programs are then fed the shifted
//! summaries (second moment and out-of-range probability up, correlation
//! down), which is the pessimistic direction for both bounds, and the
//! resulting rate holds except with probability `eps_prime`, the sum of
//! the smoothing, hashing and estimation budgets.
//!
//! The finite-block rate subtracts two more terms from the asymptotic
//! bound: an equipartition correction shrinking as the inverse square
//! root of the block size, and a hashing correction shrinking linearly.
//! Negative rates are reported with their full component breakdown
//! rather than clamped, so sweeps show the crossing point.

use crate::channel::ChannelStats;
use crate::fock::DetectorModel;
use crate::gaussian_bound::{f_chi, CutoffBudget, GaussianError};
use crate::protocol::Constellation;

/// Errors from parameter validation and rate assembly.
#[derive(Debug, Clone, PartialEq)]
pub enum FiniteSizeError {
    /// Block size must be at least one round.
    BlockSizeZero,
    /// A failure probability outside `(0, 1)`.
    ProbabilityOutOfRange(f64),
    /// Reconciliation efficiency outside `(0, 1]`.
    EfficiencyOutOfRange(f64),
    /// The correction formulas need at least a binary alphabet.
    AlphabetTooSmall(usize),
    /// Measured second moment outside `[0, R^2]`.
    SecondMomentOutOfRange(f64),
    /// Measured out-of-range probability outside `[0, 1]`.
    EstimateOutOfRange(f64),
    /// The shifted covariance entries failed the physicality checks.
    Covariance(GaussianError),
}

impl core::fmt::Display for FiniteSizeError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::BlockSizeZero => write!(f, "block size must be positive"),
            Self::ProbabilityOutOfRange(p) => {
                write!(f, "failure probability {p} not in (0, 1)")
            }
            Self::EfficiencyOutOfRange(x) => {
                write!(f, "reconciliation efficiency {x} not in (0, 1]")
            }
            Self::AlphabetTooSmall(d) => write!(f, "alphabet size {d} below 2"),
            Self::SecondMomentOutOfRange(v) => {
                write!(f, "second moment {v} outside the detector range")
            }
            Self::EstimateOutOfRange(p) => {
                write!(f, "out-of-range estimate {p} not in [0, 1]")
            }
            Self::Covariance(e) => write!(f, "covariance: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FiniteSizeError {}

impl From<GaussianError> for FiniteSizeError {
    fn from(e: GaussianError) -> Self {
        Self::Covariance(e)
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Security parameters
// ═══════════════════════════════════════════════════════════════════════

/// Block size, reconciliation efficiency and the failure-probability
/// budget of one protocol run.
///
/// The parameter estimation budget is split evenly over the three
/// estimated summaries; the total failure probability of the run is
/// [`eps_prime`](Self::eps_prime) by the union bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityParams {
    n: u64,
    xi: f64,
    eps_s: f64,
    eps_h: f64,
    eps_pe: f64,
}

impl SecurityParams {
    /// Validates and stores the parameters of one run.
    pub fn new(
        n: u64,
        xi: f64,
        eps_s: f64,
        eps_h: f64,
        eps_pe: f64,
    ) -> Result<Self, FiniteSizeError> {
        if n == 0 {
            return Err(FiniteSizeError::BlockSizeZero);
        }
        if !(xi > 0.0 && xi <= 1.0) {
            return Err(FiniteSizeError::EfficiencyOutOfRange(xi));
        }
        for eps in [eps_s, eps_h, eps_pe] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(FiniteSizeError::ProbabilityOutOfRange(eps));
            }
        }
        Ok(Self {
            n,
            xi,
            eps_s,
            eps_h,
            eps_pe,
        })
    }

    /// Number of rounds in the block.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Reconciliation efficiency.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Smoothing budget.
    pub fn eps_s(&self) -> f64 {
        self.eps_s
    }

    /// Hashing budget.
    pub fn eps_h(&self) -> f64 {
        self.eps_h
    }

    /// Parameter estimation budget.
    pub fn eps_pe(&self) -> f64 {
        self.eps_pe
    }

    /// Total failure probability of the run.
    pub fn eps_prime(&self) -> f64 {
        self.eps_s + self.eps_h + self.eps_pe
    }

    /// Share of the estimation budget spent on the second moment.
    pub fn eps_v(&self) -> f64 {
        self.eps_pe / 3.0
    }

    /// Share spent on the correlation.
    pub fn eps_c(&self) -> f64 {
        self.eps_pe / 3.0
    }

    /// Share spent on the out-of-range probability.
    pub fn eps_p(&self) -> f64 {
        self.eps_pe / 3.0
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Corrections
// ═══════════════════════════════════════════════════════════════════════

/// Equipartition correction coefficient `4 (1 + log2 d) sqrt(log2(2 /
/// eps_s^2))`; the rate pays this divided by the square root of the
/// block size.
///
/// `d` is the per-quadrature alphabet size, passed explicitly so the
/// sensitivity to the choice of alphabet (per quadrature or per pair)
/// can be probed directly.
pub fn aep_delta(d: usize, eps_s: f64) -> Result<f64, FiniteSizeError> {
    if d < 2 {
        return Err(FiniteSizeError::AlphabetTooSmall(d));
    }
    if !(eps_s > 0.0 && eps_s < 1.0) {
        return Err(FiniteSizeError::ProbabilityOutOfRange(eps_s));
    }
    let log_d = libm::log2(d as f64);
    let inner = libm::log2(2.0 / (eps_s * eps_s));
    Ok(4.0 * (1.0 + log_d) * libm::sqrt(inner))
}

/// One-sided confidence radii for the three estimated summaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceDeltas {
    delta_v: f64,
    delta_c: f64,
    delta_p: f64,
}

impl ConfidenceDeltas {
    /// Radius for the second moment.
    pub fn delta_v(&self) -> f64 {
        self.delta_v
    }

    /// Radius for the correlation.
    pub fn delta_c(&self) -> f64 {
        self.delta_c
    }

    /// Radius for the out-of-range probability.
    pub fn delta_p(&self) -> f64 {
        self.delta_p
    }

    /// All-zero radii, the asymptotic limit.
    pub fn zero() -> Self {
        Self {
            delta_v: 0.0,
            delta_c: 0.0,
            delta_p: 0.0,
        }
    }
}

/// Inverts the three tail bounds at failure probability a third of the
/// estimation budget each.
///
/// The correlation radius inverts a bounded-range tail directly. The
/// other two bounds involve the unknown true parameter; replacing it by
/// the estimate plus its own radius and solving the resulting quadratic
/// gives radii whose guarantee is self-consistent: plugging the radius
/// back into the tail bound at the shifted parameter returns exactly the
/// budgeted failure probability.
pub fn confidence_deltas(
    stats: &ChannelStats,
    sp: &SecurityParams,
    det: &DetectorModel,
    con: &Constellation,
) -> Result<ConfidenceDeltas, FiniteSizeError> {
    let r = det.r();
    let v_hat = stats.v();
    let p_hat = stats.p0().max(0.0);
    if !(0.0..=r * r + 1e-9).contains(&v_hat) {
        return Err(FiniteSizeError::SecondMomentOutOfRange(v_hat));
    }
    if p_hat > 1.0 {
        return Err(FiniteSizeError::EstimateOutOfRange(p_hat));
    }
    let n = sp.n() as f64;
    let ell = -libm::log(sp.eps_v());
    let a = con.a_param();

    let delta_c = a * r * libm::sqrt(ell / (2.0 * n));
    let tv = r * r * ell / n;
    let delta_v = tv + libm::sqrt(tv * tv + 2.0 * v_hat * r * r * ell / n);
    let tp = ell / n;
    let delta_p = tp + libm::sqrt(tp * tp + 2.0 * p_hat * ell / n);
    Ok(ConfidenceDeltas {
        delta_v,
        delta_c,
        delta_p,
    })
}

/// Which summary a tail bound protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailKind {
    /// Mean binned second moment, underestimated.
    SecondMoment,
    /// Mean sender-receiver correlation, overestimated.
    Correlation,
    /// Out-of-range probability, underestimated.
    OutOfRange,
}

/// Analytic probability that the named estimator misses its mean by more
/// than `delta` in the dangerous direction, for checking empirical
/// violation frequencies against.
pub fn tail_bound_check(
    kind: TailKind,
    stats: &ChannelStats,
    det: &DetectorModel,
    con: &Constellation,
    n: u64,
    delta: f64,
) -> f64 {
    let r = det.r();
    let n = n as f64;
    match kind {
        TailKind::SecondMoment => {
            let v = stats.v();
            if v <= 0.0 {
                return if delta > 0.0 { 0.0 } else { 1.0 };
            }
            libm::exp(-n * delta * delta / (2.0 * r * r * v))
        }
        TailKind::Correlation => {
            let a = con.a_param();
            libm::exp(-2.0 * n * delta * delta / (a * a * r * r))
        }
        TailKind::OutOfRange => {
            let p0 = stats.p0().max(0.0);
            if p0 <= 0.0 {
                return if delta > 0.0 { 0.0 } else { 1.0 };
            }
            libm::exp(-n * delta * delta / (2.0 * p0))
        }
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Key rate assembly
// ═══════════════════════════════════════════════════════════════════════

/// Which rate to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMode {
    /// Infinite-block limit: no equipartition or hashing terms.
    Asymptotic,
    /// Composable finite-block rate.
    Finite,
}

/// Sign classification of the operative rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateStatus {
    /// Positive extractable rate.
    Positive,
    /// Zero or negative; the breakdown shows which term dominates.
    NonPositive,
    /// The computation did not finish; set by callers that catch
    /// numerical failures mid-sweep.
    Aborted,
}

/// One assembled rate with its component breakdown.
#[derive(Debug, Clone, Copy)]
pub struct RateResult {
    r_inf: f64,
    r_n: f64,
    i_xy: f64,
    f_chi: f64,
    shirokov: f64,
    aep_term: f64,
    hash_term: f64,
    deltas: ConfidenceDeltas,
    eps_prime: f64,
    status: RateStatus,
}

impl RateResult {
    /// Asymptotic rate from the same covariance inputs.
    pub fn r_inf(&self) -> f64 {
        self.r_inf
    }

    /// Operative rate: equals [`r_inf`](Self::r_inf) in asymptotic mode.
    pub fn r_n(&self) -> f64 {
        self.r_n
    }

    /// Reconciled mutual information input.
    pub fn i_xy(&self) -> f64 {
        self.i_xy
    }

    /// Holevo bound at the extremal Gaussian state.
    pub fn f_chi(&self) -> f64 {
        self.f_chi
    }

    /// Cutoff continuity penalty in bits.
    pub fn shirokov(&self) -> f64 {
        self.shirokov
    }

    /// Equipartition correction already divided by sqrt(n).
    pub fn aep_term(&self) -> f64 {
        self.aep_term
    }

    /// Hashing correction, nonpositive.
    pub fn hash_term(&self) -> f64 {
        self.hash_term
    }

    /// Confidence radii that produced the covariance inputs.
    pub fn deltas(&self) -> &ConfidenceDeltas {
        &self.deltas
    }

    /// Total failure probability of the run.
    pub fn eps_prime(&self) -> f64 {
        self.eps_prime
    }

    /// Sign classification of the operative rate.
    pub fn status(&self) -> RateStatus {
        self.status
    }

    /// Copy reclassified as aborted, for sweep drivers that must record
    /// a failed point without discarding the partial breakdown.
    pub fn aborted(mut self) -> Self {
        self.status = RateStatus::Aborted;
        self
    }
}

/// Assembles the key rate from the mutual information, the three
/// covariance entries (Alice's ceiling, the received-mode upper bound
/// and the correlation lower bound), the cutoff budget and the security
/// parameters.
///
/// In finite mode the covariance entries must come from programs fed the
/// replaced summaries, and `deltas` records the radii used; the rate
/// then holds except with probability `eps_prime`. A correlation bound
/// that came out negative carries no certified correlation and enters as
/// zero, the pessimistic choice since the Holevo bound falls with
/// correlation magnitude.
#[allow(clippy::too_many_arguments)]
pub fn key_rate(
    mode: RateMode,
    i_xy: f64,
    gamma_a: f64,
    gamma_b: f64,
    gamma_ab: f64,
    budget: &CutoffBudget,
    deltas: &ConfidenceDeltas,
    sp: &SecurityParams,
    d: usize,
) -> Result<RateResult, FiniteSizeError> {
    let holevo = f_chi(gamma_a, gamma_b, gamma_ab.max(0.0))?;
    let shirokov = budget.penalty_bits(d)?;
    let r_inf = sp.xi() * i_xy - holevo - shirokov;
    let (r_n, aep_term, hash_term, deltas) = match mode {
        RateMode::Asymptotic => (r_inf, 0.0, 0.0, ConfidenceDeltas::zero()),
        RateMode::Finite => {
            let n = sp.n() as f64;
            let aep_term = aep_delta(d, sp.eps_s())? / libm::sqrt(n);
            let hash_term =
                2.0 * libm::log2(core::f64::consts::SQRT_2 * sp.eps_h()) / n;
            (r_inf - aep_term + hash_term, aep_term, hash_term, *deltas)
        }
    };
    let status = if r_n > 0.0 {
        RateStatus::Positive
    } else {
        RateStatus::NonPositive
    };
    Ok(RateResult {
        r_inf,
        r_n,
        i_xy,
        f_chi: holevo,
        shirokov,
        aep_term,
        hash_term,
        deltas,
        eps_prime: sp.eps_prime(),
        status,
    })
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
