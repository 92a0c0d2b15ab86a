//! Shannon quantities of the digitized variables: the receiver entropy
//! `H(Y)`, the conditional entropy `H(Y|X)` and the mutual information
//! `I(X;Y)` that multiplies the reconciliation efficiency in the key rate.
//!
//! By default the sums run over the `d x d` conclusive outcomes only; the
//! inconclusive mass is neither renormalized away nor given a symbol of
//! its own, matching the estimator sums whose expectation the bounds use.
//! At the design operating range that mass is of order 1e-11, so the
//! choice is numerically invisible there; an alternative treatment that
//! appends the inconclusive outcome as an extra symbol is available for
//! sensitivity studies at small ranges.

use alloc::vec::Vec;

use crate::channel::ChannelStats;
use crate::protocol::Constellation;

/// Errors from joint-distribution validation.
#[derive(Debug, Clone, PartialEq)]
pub enum InfoError {
    /// The conditional table has no rows or no columns.
    EmptyJoint,
    /// A row differs in length from the first row.
    RaggedRow {
        /// Offending row index.
        row: usize,
        /// Its length.
        len: usize,
        /// Length of the first row.
        expect: usize,
    },
    /// A probability entry is negative (or NaN).
    NegativeMass {
        /// Row index.
        row: usize,
        /// Column index.
        col: usize,
        /// Offending entry.
        value: f64,
    },
    /// A conditional row carries more than unit mass.
    RowMassExceedsOne {
        /// Row index.
        row: usize,
        /// Its total mass.
        mass: f64,
    },
    /// A prior is negative (or NaN).
    PriorOutOfRange(f64),
    /// Priors do not sum to one.
    PriorSumNotOne(f64),
    /// Number of priors does not match the number of rows.
    PriorCountMismatch {
        /// Conditional rows present.
        rows: usize,
        /// Priors supplied.
        priors: usize,
    },
}

impl core::fmt::Display for InfoError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::EmptyJoint => write!(f, "joint distribution has no cells"),
            Self::RaggedRow { row, len, expect } => {
                write!(f, "row {row} has {len} cells, expected {expect}")
            }
            Self::NegativeMass { row, col, value } => {
                write!(f, "cell ({row}, {col}) holds invalid mass {value}")
            }
            Self::RowMassExceedsOne { row, mass } => {
                write!(f, "row {row} carries mass {mass} > 1")
            }
            Self::PriorOutOfRange(p) => write!(f, "prior {p} is not a probability"),
            Self::PriorSumNotOne(s) => write!(f, "priors sum to {s}, not 1"),
            Self::PriorCountMismatch { rows, priors } => {
                write!(f, "{priors} priors for {rows} rows")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for InfoError {}

/// Mass below which a row sum may exceed one by accumulated rounding.
const MASS_SLACK: f64 = 1e-12;

/// Conditional distribution of the digitized outcome given the input,
/// together with the input priors and the implied outcome marginal.
///
/// Rows may carry less than unit mass; the deficit is the per-input
/// probability of an inconclusive outcome.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    cond: Vec<Vec<f64>>,
    priors: Vec<f64>,
    marginal: Vec<f64>,
}

impl DiscreteJoint {
    /// Validates a conditional table (one row per input) and priors.
    pub fn new(cond: Vec<Vec<f64>>, priors: Vec<f64>) -> Result<Self, InfoError> {
        if cond.is_empty() || cond[0].is_empty() {
            return Err(InfoError::EmptyJoint);
        }
        let cells = cond[0].len();
        if priors.len() != cond.len() {
            return Err(InfoError::PriorCountMismatch {
                rows: cond.len(),
                priors: priors.len(),
            });
        }
        for (row, r) in cond.iter().enumerate() {
            if r.len() != cells {
                return Err(InfoError::RaggedRow {
                    row,
                    len: r.len(),
                    expect: cells,
                });
            }
            let mut mass = 0.0;
            for (col, &p) in r.iter().enumerate() {
                if !(p >= 0.0) {
                    return Err(InfoError::NegativeMass { row, col, value: p });
                }
                mass += p;
            }
            if mass > 1.0 + MASS_SLACK {
                return Err(InfoError::RowMassExceedsOne { row, mass });
            }
        }
        let mut prior_sum = 0.0;
        for &p in &priors {
            if !(p >= 0.0) {
                return Err(InfoError::PriorOutOfRange(p));
            }
            prior_sum += p;
        }
        if (prior_sum - 1.0).abs() > MASS_SLACK {
            return Err(InfoError::PriorSumNotOne(prior_sum));
        }
        let mut marginal = alloc::vec![0.0; cells];
        for (r, &px) in cond.iter().zip(&priors) {
            for (m, &p) in marginal.iter_mut().zip(r) {
                *m += px * p;
            }
        }
        Ok(Self {
            cond,
            priors,
            marginal,
        })
    }

    /// Builds the joint from analytic channel statistics.
    pub fn from_stats(stats: &ChannelStats, con: &Constellation) -> Result<Self, InfoError> {
        Self::new(stats.bin_probs().to_vec(), con.probs().to_vec())
    }

    /// Conditional rows.
    pub fn cond(&self) -> &[Vec<f64>] {
        &self.cond
    }

    /// Input priors.
    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    /// Outcome marginal (prior-weighted average of the rows).
    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }
}

/// Treatment of the inconclusive outcome in the entropy sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InconclusiveTreatment {
    /// Sum over conclusive cells only; the deficit mass contributes
    /// nothing. This is the default and matches the quantities whose
    /// expectations the security bounds consume.
    Excluded,
    /// Append the deficit as one extra outcome symbol per row.
    ExtraSymbol,
}

/// Entropies of the digitized outcome, in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoQuantities {
    /// Outcome entropy `H(Y)`.
    pub h_y: f64,
    /// Conditional outcome entropy `H(Y|X)`.
    pub h_y_given_x: f64,
    /// Mutual information `I(X;Y) = H(Y) - H(Y|X)`.
    pub i_xy: f64,
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * libm::log2(p)
    } else {
        0.0
    }
}

/// `H(Y)`, `H(Y|X)` and `I(X;Y)` with the default treatment of the
/// inconclusive outcome ([`InconclusiveTreatment::Excluded`]).
pub fn mutual_information(dj: &DiscreteJoint) -> InfoQuantities {
    mutual_information_with(dj, InconclusiveTreatment::Excluded)
}

/// [`mutual_information`] with an explicit inconclusive-outcome treatment.
pub fn mutual_information_with(
    dj: &DiscreteJoint,
    treatment: InconclusiveTreatment,
) -> InfoQuantities {
    let mut h_cond = 0.0;
    let mut marginal_deficit = 0.0;
    for (row, &px) in dj.cond().iter().zip(dj.priors()) {
        let mut h_row = 0.0;
        let mut mass = 0.0;
        for &p in row {
            h_row -= plogp(p);
            mass += p;
        }
        if treatment == InconclusiveTreatment::ExtraSymbol {
            let deficit = (1.0 - mass).max(0.0);
            h_row -= plogp(deficit);
            marginal_deficit += px * deficit;
        }
        h_cond += px * h_row;
    }
    let mut h_y = -plogp(marginal_deficit);
    for &m in dj.marginal() {
        h_y -= plogp(m);
    }
    InfoQuantities {
        h_y,
        h_y_given_x: h_cond,
        i_xy: h_y - h_cond,
    }
}

#[cfg(test)]
mod tests {
    use alloc::vec;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::channel::{expected_stats, substream_rng, ChannelModel};
    use crate::fock::DetectorModel;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn qpsk_joint(eta: f64, u: f64, r: f64, d: usize, amp: f64) -> DiscreteJoint {
        let ch = ChannelModel::new(eta, u).unwrap();
        let det = DetectorModel::new(r, d).unwrap();
        let con = Constellation::qpsk(amp).unwrap();
        let stats = expected_stats(&ch, &det, &con);
        DiscreteJoint::from_stats(&stats, &con).unwrap()
    }

    #[test]
    fn validation_rejects_malformed_tables() {
        assert!(matches!(
            DiscreteJoint::new(vec![], vec![]),
            Err(InfoError::EmptyJoint)
        ));
        assert!(matches!(
            DiscreteJoint::new(vec![vec![0.5], vec![0.5, 0.1]], vec![0.5, 0.5]),
            Err(InfoError::RaggedRow { .. })
        ));
        assert!(matches!(
            DiscreteJoint::new(vec![vec![-0.1, 0.2]], vec![1.0]),
            Err(InfoError::NegativeMass { .. })
        ));
        assert!(matches!(
            DiscreteJoint::new(vec![vec![0.9, 0.2]], vec![1.0]),
            Err(InfoError::RowMassExceedsOne { .. })
        ));
        assert!(matches!(
            DiscreteJoint::new(vec![vec![0.5, 0.2]], vec![0.7]),
            Err(InfoError::PriorSumNotOne(_))
        ));
        assert!(matches!(
            DiscreteJoint::new(vec![vec![0.5]], vec![0.5, 0.5]),
            Err(InfoError::PriorCountMismatch { .. })
        ));
    }

    #[test]
    fn single_bin_carries_no_information() {
        let dj = qpsk_joint(0.8, 0.05, 2.0, 1, 0.5);
        let info = mutual_information(&dj);
        // All four inputs see the same in-range mass by the symmetry of
        // the constellation, so the rows are identical.
        let mass = dj.cond()[0][0];
        assert_relative_eq!(info.h_y, -mass * libm::log2(mass), max_relative = 1e-14);
        assert_relative_eq!(info.h_y, info.h_y_given_x, max_relative = 1e-14);
        assert!(info.i_xy.abs() < 1e-14);
    }

    #[test]
    fn identical_rows_mean_independence() {
        let row = vec![0.3, 0.4, 0.25];
        let dj = DiscreteJoint::new(vec![row.clone(), row], vec![0.6, 0.4]).unwrap();
        let info = mutual_information(&dj);
        assert!(info.i_xy.abs() < 1e-15);
    }

    #[test]
    fn relabeling_leaves_information_unchanged() {
        let dj = qpsk_joint(0.9, 0.001, 3.0, 4, 0.5);
        let base = mutual_information(&dj);
        // Reverse the outcome labels and swap two input labels (with
        // their priors).
        let mut cond: Vec<Vec<f64>> = dj
            .cond()
            .iter()
            .map(|r| r.iter().rev().copied().collect())
            .collect();
        cond.swap(0, 3);
        let mut priors = dj.priors().to_vec();
        priors.swap(0, 3);
        let relabeled = mutual_information(&DiscreteJoint::new(cond, priors).unwrap());
        assert_relative_eq!(base.i_xy, relabeled.i_xy, max_relative = 1e-12);
        assert_relative_eq!(base.h_y, relabeled.h_y, max_relative = 1e-12);
    }

    #[test]
    fn refining_bins_never_loses_information() {
        for (eta, u, r, d) in [(0.9, 0.001, 7.0, 8), (0.6, 0.05, 3.0, 3)] {
            let coarse = mutual_information(&qpsk_joint(eta, u, r, d, 0.5)).i_xy;
            let fine = mutual_information(&qpsk_joint(eta, u, r, 2 * d, 0.5)).i_xy;
            assert!(
                fine >= coarse - 1e-12,
                "refinement lost information: {coarse} -> {fine}"
            );
        }
    }

    #[test]
    fn information_within_alphabet_bounds() {
        let dj = qpsk_joint(0.9, 0.001, 7.0, 16, 0.5);
        let info = mutual_information(&dj);
        assert!(info.i_xy >= -1e-12);
        assert!(info.i_xy <= 2.0 + 1e-12);
        assert!(info.i_xy <= 2.0 * libm::log2(16.0) + 1e-12);
    }

    #[test]
    fn extra_symbol_treatment_tracks_deficit() {
        // Wide range: the inconclusive mass is ~1e-11 and both treatments
        // agree to far better than the entropy scale.
        let wide = qpsk_joint(0.9, 0.001, 7.0, 16, 0.5);
        let excl = mutual_information_with(&wide, InconclusiveTreatment::Excluded);
        let extra = mutual_information_with(&wide, InconclusiveTreatment::ExtraSymbol);
        assert_relative_eq!(excl.i_xy, extra.i_xy, epsilon = 1e-8);
        // Narrow range: the extra symbol carries real mass and raises the
        // outcome entropy.
        let narrow = qpsk_joint(0.9, 0.001, 1.0, 2, 0.5);
        let excl_n = mutual_information_with(&narrow, InconclusiveTreatment::Excluded);
        let extra_n = mutual_information_with(&narrow, InconclusiveTreatment::ExtraSymbol);
        assert!(extra_n.h_y > excl_n.h_y + 0.1);
        assert!(extra_n.i_xy >= -1e-12);
    }

    // Monte Carlo oracle: a plug-in estimate of I(X;Y) from sampled
    // rounds, Miller-Madow corrected per batch, must agree with the
    // analytic value within three standard errors of the batch mean.
    #[test]
    fn analytic_information_matches_sampled_plugin() {
        let eta = 1.0;
        let u = 0.0;
        let r = 7.0;
        let d = 16usize;
        let amp = 0.5;
        let exact = mutual_information(&qpsk_joint(eta, u, r, d, amp)).i_xy;

        let ch = ChannelModel::new(eta, u).unwrap();
        let con = Constellation::qpsk(amp).unwrap();
        let centers_len = d * d;
        let batches = 10usize;
        let per_batch = 1_000_000u64;
        let mut estimates = Vec::with_capacity(batches);
        for b in 0..batches {
            let mut rng = substream_rng(9_347, b as u64 + 1);
            let mut counts = vec![0u64; 4 * centers_len];
            let mut x_counts = [0u64; 4];
            let root_eta = libm::sqrt(ch.eta());
            let sigma = libm::sqrt(ch.u() + 1.0);
            for _ in 0..per_batch {
                let ux: f64 = rng.random();
                let x = ((ux * 4.0) as usize).min(3);
                x_counts[x] += 1;
                let a = con.amplitudes()[x];
                let zq: f64 = rng.sample(StandardNormal);
                let zp: f64 = rng.sample(StandardNormal);
                let q = root_eta * core::f64::consts::SQRT_2 * a.re + sigma * zq;
                let p = root_eta * core::f64::consts::SQRT_2 * a.im + sigma * zp;
                if q.abs() <= r && p.abs() <= r {
                    let j = (((q + r) / (2.0 * r) * d as f64) as usize).min(d - 1);
                    let k = (((p + r) / (2.0 * r) * d as f64) as usize).min(d - 1);
                    counts[x * centers_len + j * d + k] += 1;
                }
            }
            let n = per_batch as f64;
            let mut marg = vec![0.0f64; centers_len];
            for x in 0..4 {
                for c in 0..centers_len {
                    marg[c] += counts[x * centers_len + c] as f64 / n;
                }
            }
            let mut h_y = 0.0;
            let mut nonzero_cells = 0usize;
            for &m in &marg {
                h_y -= plogp(m);
                if m > 0.0 {
                    nonzero_cells += 1;
                }
            }
            let mut h_cond = 0.0;
            for x in 0..4 {
                let nx = x_counts[x] as f64;
                let mut h_row = 0.0;
                for c in 0..centers_len {
                    h_row -= plogp(counts[x * centers_len + c] as f64 / nx);
                }
                h_cond += (nx / n) * h_row;
            }
            // First-order plug-in bias of I is (Kx-1)(Ky-1)/(2 n ln 2).
            let bias = 3.0 * (nonzero_cells as f64 - 1.0) / (2.0 * n * core::f64::consts::LN_2);
            estimates.push(h_y - h_cond - bias);
        }
        let mean: f64 = estimates.iter().sum::<f64>() / batches as f64;
        let var: f64 = estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (batches as f64 - 1.0);
        let se_mean = libm::sqrt(var / batches as f64);
        assert!(
            (mean - exact).abs() <= 3.0 * se_mean,
            "plug-in {mean} vs analytic {exact}, 3 SE = {}",
            3.0 * se_mean
        );
    }

    proptest! {
        // Full-mass random tables: information is non-negative and capped
        // by both alphabet sizes.
        #[test]
        fn information_bounds_hold_for_random_tables(
            m in 1usize..=5,
            cells in 1usize..=8,
            raw in proptest::collection::vec(1e-6f64..1.0, 40),
        ) {
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    let chunk = &raw[i * cells..(i + 1) * cells];
                    let s: f64 = chunk.iter().sum();
                    chunk.iter().map(|v| v / s).collect()
                })
                .collect();
            let priors = alloc::vec![1.0 / m as f64; m];
            let dj = DiscreteJoint::new(rows, priors).unwrap();
            let info = mutual_information(&dj);
            prop_assert!(info.i_xy >= -1e-12);
            let cap = libm::log2(m as f64).min(libm::log2(cells as f64));
            prop_assert!(info.i_xy <= cap + 1e-12);
            prop_assert!(info.h_y >= info.h_y_given_x - 1e-12);
        }
    }
}
