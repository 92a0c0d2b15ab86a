//! Gaussian-channel statistics of the coarse-grained receiver: analytic
//! bin probabilities, the second moments consumed by the optimization
//! constraints, and a seeded Monte Carlo sampler producing finite-sample
//! estimates of the same quantities.
//!
//! The channel attenuates each signal by a transmissivity `eta` and adds
//! excess noise of variance `u`. For an input with displaced quadratures
//! `(q_x, p_x)` the measured pair is then bivariate normal with mean
//! `(sqrt(eta) q_x, sqrt(eta) p_x)` and per-axis variance `u + 1`: one half
//! unit of vacuum from the signal itself plus one half from the beam
//! splitter of the double-homodyne receiver, plus the excess noise. Every
//! in-range probability is therefore a difference of error functions, and
//! the coarse-grained moments are finite sums over bin centers.
//!
//! The sampler mirrors the estimators used in the security analysis: each
//! round digitizes a fresh Gaussian draw, out-of-range rounds raise an
//! inconclusive flag, and the variance and covariance estimates sum the
//! bin-center values of the conclusive rounds. Sampling is deterministic
//! for a fixed seed, with numbered substreams so that parallel scans can
//! draw independent, reproducible streams.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::fock::DetectorModel;
use crate::protocol::Constellation;

/// Errors from channel-model validation and sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelError {
    /// Transmissivity must lie in `[0, 1]`.
    TransmissivityOutOfRange(f64),
    /// Excess-noise variance must be finite and non-negative.
    NoiseOutOfRange(f64),
    /// Bin index outside `1..=d`.
    BinIndexOutOfRange(usize),
    /// Constellation input index outside `0..m`.
    InputIndexOutOfRange(usize),
    /// Sampling requires at least one round.
    EmptySample,
}

impl core::fmt::Display for ChannelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::TransmissivityOutOfRange(eta) => {
                write!(f, "transmissivity {eta} outside [0, 1]")
            }
            Self::NoiseOutOfRange(u) => write!(f, "excess noise variance {u} is not finite and non-negative"),
            Self::BinIndexOutOfRange(j) => write!(f, "bin index {j} outside 1..=d"),
            Self::InputIndexOutOfRange(x) => write!(f, "input index {x} outside the constellation"),
            Self::EmptySample => write!(f, "sample size must be at least 1"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ChannelError {}

// ═══════════════════════════════════════════════════════════════════════
// Channel model
// ═══════════════════════════════════════════════════════════════════════

/// Phase-insensitive Gaussian channel with loss and excess noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    eta: f64,
    u: f64,
}

impl ChannelModel {
    /// Builds a channel from a transmissivity in `[0, 1]` and an excess
    /// noise variance `u >= 0`.
    pub fn new(eta: f64, u: f64) -> Result<Self, ChannelError> {
        if !(eta >= 0.0 && eta <= 1.0) {
            return Err(ChannelError::TransmissivityOutOfRange(eta));
        }
        if !(u >= 0.0 && u.is_finite()) {
            return Err(ChannelError::NoiseOutOfRange(u));
        }
        Ok(Self { eta, u })
    }

    /// Builds a channel from an attenuation in decibels (`>= 0`), so that
    /// `eta = 10^(-loss_db / 10)`.
    pub fn from_loss_db(loss_db: f64, u: f64) -> Result<Self, ChannelError> {
        if !(loss_db >= 0.0) {
            return Err(ChannelError::TransmissivityOutOfRange(loss_db));
        }
        Self::new(libm::pow(10.0, -loss_db / 10.0), u)
    }

    /// Transmissivity.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Excess-noise variance.
    pub fn u(&self) -> f64 {
        self.u
    }

    /// Attenuation in decibels; infinite for a fully opaque channel.
    pub fn loss_db(&self) -> f64 {
        -10.0 * libm::log10(self.eta)
    }

    /// Per-axis variance of the measured quadrature distribution.
    fn axis_variance(&self) -> f64 {
        self.u + 1.0
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Analytic bin probabilities
// ═══════════════════════════════════════════════════════════════════════

/// Probability that one quadrature axis lands in bin `j` when the input
/// displaces that axis to the coordinate `m` (before loss scaling).
fn axis_bin_prob(j: usize, m: f64, ch: &ChannelModel, det: &DetectorModel) -> f64 {
    let d = det.d() as i64;
    let jj = j as i64;
    let denom = det.d() as f64 * libm::sqrt(2.0 * ch.axis_variance());
    let drift = det.d() as f64 * libm::sqrt(ch.eta()) * m;
    let upper = ((2 + d - 2 * jj) as f64 * det.r() + drift) / denom;
    let lower = ((d - 2 * jj) as f64 * det.r() + drift) / denom;
    0.5 * crate::special::erf(upper) - 0.5 * crate::special::erf(lower)
}

/// Probability that the q-axis outcome falls in bin `j` given input `x`.
///
/// Half the two-dimensional story: the full bin probability factorizes as
/// `P(jk|x) = P(j|x) P'(k|x)` where the second factor is the same formula
/// on the p-axis coordinate.
pub fn bin_prob_1d(
    j: usize,
    x: usize,
    ch: &ChannelModel,
    det: &DetectorModel,
    con: &Constellation,
) -> Result<f64, ChannelError> {
    if j == 0 || j > det.d() {
        return Err(ChannelError::BinIndexOutOfRange(j));
    }
    if x >= con.m() {
        return Err(ChannelError::InputIndexOutOfRange(x));
    }
    let qx = core::f64::consts::SQRT_2 * con.amplitudes()[x].re;
    Ok(axis_bin_prob(j, qx, ch, det))
}

/// Input-conditional axis displacement coordinates `(q_x, p_x)`.
fn input_coords(x: usize, con: &Constellation) -> (f64, f64) {
    let a = con.amplitudes()[x];
    (
        core::f64::consts::SQRT_2 * a.re,
        core::f64::consts::SQRT_2 * a.im,
    )
}

// ═══════════════════════════════════════════════════════════════════════
// Statistics container
// ═══════════════════════════════════════════════════════════════════════

/// Coarse-grained channel statistics: the analytic bin distribution and
/// moments, plus finite-sample estimates when produced by the sampler.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    v: f64,
    c: f64,
    p0: f64,
    bin_probs: Vec<Vec<f64>>,
    n_samples: u64,
    v_hat: f64,
    c_hat: f64,
    p0_hat: f64,
}

impl ChannelStats {
    /// Mean half-sum of squared binned quadratures.
    pub fn v(&self) -> f64 {
        self.v
    }

    /// Mean half-sum of sender-receiver quadrature products.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Probability that at least one axis lands outside the range.
    pub fn p0(&self) -> f64 {
        self.p0
    }

    /// Conditional bin distributions, one row per input; entry
    /// `(j-1) * d + (k-1)` holds `P(jk|x)`. Rows sum to `1 - P(0|x)`.
    pub fn bin_probs(&self) -> &[Vec<f64>] {
        &self.bin_probs
    }

    /// Number of sampled rounds; zero for purely analytic statistics.
    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    /// Finite-sample estimates `(v, c, p0)` when this came from the
    /// sampler.
    pub fn estimates(&self) -> Option<(f64, f64, f64)> {
        if self.n_samples == 0 {
            None
        } else {
            Some((self.v_hat, self.c_hat, self.p0_hat))
        }
    }

    /// Copy with the sampled estimates promoted to the working
    /// summaries, for pipelines that consume measured rather than
    /// analytic values. The bin distribution stays analytic; the sampler
    /// does not tally per-bin counts. Returns `None` when this did not
    /// come from the sampler.
    pub fn using_estimates(&self) -> Option<Self> {
        if self.n_samples == 0 {
            return None;
        }
        let mut out = self.clone();
        out.v = self.v_hat;
        out.c = self.c_hat;
        out.p0 = self.p0_hat;
        Some(out)
    }

    /// Copy with every summary shifted to its confidence-interval edge:
    /// the second moment and out-of-range probability up, the
    /// correlation down. Each shift is the pessimistic direction for the
    /// bounds computed downstream.
    pub fn with_replacements(&self, delta_v: f64, delta_c: f64, delta_p: f64) -> Self {
        Self {
            v: self.v + delta_v,
            c: self.c - delta_c,
            p0: self.p0 + delta_p,
            bin_probs: self.bin_probs.clone(),
            n_samples: self.n_samples,
            v_hat: self.v_hat,
            c_hat: self.c_hat,
            p0_hat: self.p0_hat,
        }
    }
}

/// Analytic coarse-grained statistics of the channel-and-receiver pair.
pub fn expected_stats(ch: &ChannelModel, det: &DetectorModel, con: &Constellation) -> ChannelStats {
    let d = det.d();
    let centers = det.centers();
    let mut v = 0.0;
    let mut c = 0.0;
    let mut in_range = 0.0;
    let mut bin_probs = Vec::with_capacity(con.m());
    for (x, &px) in con.probs().iter().enumerate() {
        let (qx, pxc) = input_coords(x, con);
        let qrow: Vec<f64> = (1..=d).map(|j| axis_bin_prob(j, qx, ch, det)).collect();
        let prow: Vec<f64> = (1..=d).map(|k| axis_bin_prob(k, pxc, ch, det)).collect();
        let q0: f64 = qrow.iter().sum();
        let p0: f64 = prow.iter().sum();
        let q1: f64 = qrow.iter().zip(centers).map(|(w, t)| w * t).sum();
        let p1: f64 = prow.iter().zip(centers).map(|(w, t)| w * t).sum();
        let q2: f64 = qrow.iter().zip(centers).map(|(w, t)| w * t * t).sum();
        let p2: f64 = prow.iter().zip(centers).map(|(w, t)| w * t * t).sum();
        v += px * 0.5 * (q2 * p0 + q0 * p2);
        c += px * 0.5 * (qx * q1 * p0 + pxc * p1 * q0);
        in_range += px * q0 * p0;
        let mut row = Vec::with_capacity(d * d);
        for wq in &qrow {
            for wp in &prow {
                row.push(wq * wp);
            }
        }
        bin_probs.push(row);
    }
    ChannelStats {
        v,
        c,
        p0: 1.0 - in_range,
        bin_probs,
        n_samples: 0,
        v_hat: 0.0,
        c_hat: 0.0,
        p0_hat: 0.0,
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Monte Carlo sampler
// ═══════════════════════════════════════════════════════════════════════

/// One sampled round: input index, bin pair and inconclusive flag.
///
/// An out-of-range round stores `j = k = 0` with the flag set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundRecord {
    /// Constellation input index.
    pub x: u8,
    /// q-axis bin, 1-based; 0 when inconclusive.
    pub j: u16,
    /// p-axis bin, 1-based; 0 when inconclusive.
    pub k: u16,
    /// Inconclusive flag: the outcome fell outside the range.
    pub s: bool,
}

impl RoundRecord {
    /// Formats the record as the CSV line `i,x,j,k,S`.
    pub fn csv_line(&self, i: u64) -> String {
        alloc::format!("{},{},{},{},{}", i, self.x, self.j, self.k, u8::from(self.s))
    }
}

/// Treatment of out-of-range rounds in the moment estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutOfRangePolicy {
    /// Count the round with value zero, dividing by the full round count.
    /// This is the default and matches the estimator support assumption
    /// that every summand lies in `[0, R^2]`.
    CountZero,
    /// Drop the round entirely, dividing by the conclusive count only.
    /// Intended for sensitivity studies; the estimates become NaN when
    /// every round is inconclusive.
    Discard,
}

/// Deterministic generator for numbered substreams of a common seed.
///
/// Streams with different numbers are statistically independent, so a
/// parallel scan can give each point its own stream while staying exactly
/// reproducible.
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Bin index for one axis value, or `None` when it falls outside the
/// range. Bins are the cells `(e_{j-1}, e_j]` of the edge grid except that
/// the leftmost bin also contains its lower edge, so a value exactly on an
/// interior edge goes to the lower bin.
fn digitize(val: f64, det: &DetectorModel) -> Option<usize> {
    let edges = det.edges();
    let d = det.d();
    if !(val >= edges[0] && val <= edges[d]) {
        return None;
    }
    let interior = &edges[1..=d];
    let below = interior.partition_point(|&e| e < val);
    Some((below + 1).min(d))
}

struct RawSample {
    v_sum: f64,
    c_sum: f64,
    out_count: u64,
    records: Vec<RoundRecord>,
}

fn raw_sample(
    n: u64,
    seed: u64,
    stream: u64,
    ch: &ChannelModel,
    det: &DetectorModel,
    con: &Constellation,
    collect: bool,
) -> Result<RawSample, ChannelError> {
    if n == 0 {
        return Err(ChannelError::EmptySample);
    }
    let mut rng = substream_rng(seed, stream);
    let root_eta = libm::sqrt(ch.eta());
    let sigma = libm::sqrt(ch.axis_variance());
    let coords: Vec<(f64, f64)> = (0..con.m()).map(|x| input_coords(x, con)).collect();
    let probs = con.probs();
    let centers = det.centers();

    let mut records = Vec::with_capacity(if collect { n as usize } else { 0 });
    let mut v_sum = 0.0;
    let mut c_sum = 0.0;
    let mut out_count: u64 = 0;
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut x = 0usize;
        let mut acc = probs[0];
        while u > acc && x + 1 < probs.len() {
            x += 1;
            acc += probs[x];
        }
        let (qx, px) = coords[x];
        let zq: f64 = rng.sample(StandardNormal);
        let zp: f64 = rng.sample(StandardNormal);
        let q = root_eta * qx + sigma * zq;
        let p = root_eta * px + sigma * zp;
        let (j, k) = match (digitize(q, det), digitize(p, det)) {
            (Some(j), Some(k)) => (j, k),
            _ => (0, 0),
        };
        if j == 0 {
            out_count += 1;
        } else {
            let qc = centers[j - 1];
            let pc = centers[k - 1];
            v_sum += 0.5 * (qc * qc + pc * pc);
            c_sum += 0.5 * (qx * qc + px * pc);
        }
        if collect {
            records.push(RoundRecord {
                x: x as u8,
                j: j as u16,
                k: k as u16,
                s: j == 0,
            });
        }
    }
    Ok(RawSample {
        v_sum,
        c_sum,
        out_count,
        records,
    })
}

fn stats_from_raw(
    raw: &RawSample,
    n: u64,
    ch: &ChannelModel,
    det: &DetectorModel,
    con: &Constellation,
    policy: OutOfRangePolicy,
) -> ChannelStats {
    let denom = match policy {
        OutOfRangePolicy::CountZero => n as f64,
        OutOfRangePolicy::Discard => (n - raw.out_count) as f64,
    };
    let mut stats = expected_stats(ch, det, con);
    stats.n_samples = n;
    stats.v_hat = raw.v_sum / denom;
    stats.c_hat = raw.c_sum / denom;
    stats.p0_hat = raw.out_count as f64 / n as f64;
    stats
}

/// Samples `n` i.i.d. rounds and returns the statistics together with the
/// per-round records. Out-of-range rounds count as zero in the moment
/// estimates.
pub fn sample_records(
    n: u64,
    seed: u64,
    ch: &ChannelModel,
    det: &DetectorModel,
    con: &Constellation,
) -> Result<(ChannelStats, Vec<RoundRecord>), ChannelError> {
    sample_records_with(n, seed, ch, det, con, OutOfRangePolicy::CountZero)
}

/// Raw estimator triple `(v, c, p0)` for one numbered trial, without the
/// analytic recomputation of [`sample_stats_stream`]; meant for coverage
/// studies running many thousands of trials.
pub fn sample_estimates_stream(
    n: u64,
    seed: u64,
    stream: u64,
    ch: &ChannelModel,
    det: &DetectorModel,
    con: &Constellation,
) -> Result<(f64, f64, f64), ChannelError> {
    let raw = raw_sample(n, seed, stream, ch, det, con, false)?;
    let nf = n as f64;
    Ok((raw.v_sum / nf, raw.c_sum / nf, raw.out_count as f64 / nf))
}

#[cfg(test)]
mod tests {
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::special::erf;

    fn fig_point() -> (ChannelModel, DetectorModel, Constellation) {
        (
            ChannelModel::new(0.9, 0.001).unwrap(),
            DetectorModel::new(7.0, 16).unwrap(),
            Constellation::qpsk(0.5).unwrap(),
        )
    }

    #[test]
    fn model_validation() {
        assert!(ChannelModel::new(-0.1, 0.0).is_err());
        assert!(ChannelModel::new(1.1, 0.0).is_err());
        assert!(ChannelModel::new(0.5, -1.0).is_err());
        assert!(ChannelModel::new(0.5, f64::NAN).is_err());
        assert!(ChannelModel::from_loss_db(-1.0, 0.0).is_err());
        let ch = ChannelModel::from_loss_db(3.0, 0.01).unwrap();
        assert_relative_eq!(ch.eta(), libm::pow(10.0, -0.3), max_relative = 1e-15);
        assert_relative_eq!(ch.loss_db(), 3.0, max_relative = 1e-12);
        assert_eq!(ChannelModel::new(1.0, 0.0).unwrap().loss_db(), 0.0);
    }

    #[test]
    fn axis_sum_telescopes_to_range_mass() {
        let (ch, det, con) = fig_point();
        for x in 0..4 {
            let total: f64 = (1..=16)
                .map(|j| bin_prob_1d(j, x, &ch, &det, &con).unwrap())
                .sum();
            let qx = core::f64::consts::SQRT_2 * con.amplitudes()[x].re;
            let s = libm::sqrt(2.0 * (ch.u() + 1.0));
            let drift = libm::sqrt(ch.eta()) * qx;
            let expect = 0.5 * erf((det.r() + drift) / s) - 0.5 * erf((-det.r() + drift) / s);
            assert_relative_eq!(total, expect, max_relative = 1e-13);
        }
    }

    #[test]
    fn mirrored_bins_without_drift() {
        let ch = ChannelModel::new(0.0, 0.0).unwrap();
        let det = DetectorModel::new(3.0, 9).unwrap();
        let con = Constellation::qpsk(0.7).unwrap();
        for j in 1..=9 {
            let left = bin_prob_1d(j, 2, &ch, &det, &con).unwrap();
            let right = bin_prob_1d(10 - j, 2, &ch, &det, &con).unwrap();
            assert_eq!(left, right);
        }
    }

    #[test]
    fn single_bin_covers_range() {
        let ch = ChannelModel::new(0.8, 0.02).unwrap();
        let det = DetectorModel::new(2.5, 1).unwrap();
        let con = Constellation::qpsk(0.5).unwrap();
        for x in 0..4 {
            let p = bin_prob_1d(1, x, &ch, &det, &con).unwrap();
            let qx = core::f64::consts::SQRT_2 * con.amplitudes()[x].re;
            let s = libm::sqrt(2.0 * (ch.u() + 1.0));
            let drift = libm::sqrt(ch.eta()) * qx;
            let expect = 0.5 * erf((det.r() + drift) / s) - 0.5 * erf((-det.r() + drift) / s);
            assert_relative_eq!(p, expect, max_relative = 1e-15);
        }
    }

    #[test]
    fn bin_prob_rejects_bad_indices() {
        let (ch, det, con) = fig_point();
        assert_eq!(
            bin_prob_1d(0, 0, &ch, &det, &con),
            Err(ChannelError::BinIndexOutOfRange(0))
        );
        assert_eq!(
            bin_prob_1d(17, 0, &ch, &det, &con),
            Err(ChannelError::BinIndexOutOfRange(17))
        );
        assert_eq!(
            bin_prob_1d(1, 4, &ch, &det, &con),
            Err(ChannelError::InputIndexOutOfRange(4))
        );
    }

    #[test]
    fn bin_mass_partitions_against_out_of_range() {
        let con = Constellation::qpsk(0.5).unwrap();
        for (eta, u, r, d) in [
            (1.0, 0.0, 7.0, 16),
            (0.9, 0.001, 7.0, 16),
            (0.3, 0.05, 1.5, 5),
        ] {
            let ch = ChannelModel::new(eta, u).unwrap();
            let det = DetectorModel::new(r, d).unwrap();
            let stats = expected_stats(&ch, &det, &con);
            let mut total_in = 0.0;
            for (x, row) in stats.bin_probs().iter().enumerate() {
                assert_eq!(row.len(), d * d);
                assert!(row.iter().all(|&p| p >= 0.0));
                let mass: f64 = row.iter().sum();
                assert!(mass <= 1.0 + 1e-12);
                total_in += con.probs()[x] * mass;
            }
            assert_relative_eq!(stats.p0(), 1.0 - total_in, epsilon = 1e-12);
            assert!(stats.p0() >= -1e-15 && stats.p0() <= 1.0);
            assert!(stats.v() >= 0.0);
        }
    }

    // The binned second moment exceeds the continuum value u + 1 + eta
    // |alpha|^2 by the quantization term h^2/12 (h = 2R/d is the bin
    // width), because v averages squared bin centers rather than squared
    // outcomes. The first moments entering c have no such offset, so c
    // does agree with the continuum sqrt(eta) |alpha|^2 at this range.
    #[test]
    fn moments_near_continuum_at_reference_point() {
        let ch = ChannelModel::new(1.0, 0.0).unwrap();
        let det = DetectorModel::new(7.0, 16).unwrap();
        let con = Constellation::qpsk(0.5).unwrap();
        let stats = expected_stats(&ch, &det, &con);
        let h = 2.0 * det.r() / det.d() as f64;
        assert_relative_eq!(stats.v(), 1.25 + h * h / 12.0, max_relative = 1e-8);
        assert_relative_eq!(stats.c(), 0.25, max_relative = crate::tolerances::STATS_AGREE_REL);
        // Values frozen against an independent 40-digit evaluation of the
        // same sums.
        assert_relative_eq!(stats.v(), 1.3138020810320091, max_relative = 1e-12);
        assert_relative_eq!(stats.c(), 0.24999999984030572, max_relative = 1e-12);
        assert_relative_eq!(stats.p0(), 8.038382951e-11, max_relative = 1e-6);
        assert!(stats.estimates().is_none());

        let (ch2, det2, con2) = fig_point();
        let stats2 = expected_stats(&ch2, &det2, &con2);
        assert_relative_eq!(stats2.v(), 1.2898020813469347, max_relative = 1e-12);
        assert_relative_eq!(stats2.c(), 0.23717082437565211, max_relative = 1e-12);
        assert_relative_eq!(stats2.p0(), 6.927195701e-11, max_relative = 1e-6);
    }

    #[test]
    fn covariance_vanishes_for_opaque_channel() {
        let ch = ChannelModel::new(0.0, 0.0).unwrap();
        let det = DetectorModel::new(4.0, 8).unwrap();
        let con = Constellation::qpsk(0.5).unwrap();
        let stats = expected_stats(&ch, &det, &con);
        assert_eq!(stats.c(), 0.0);
        assert!(stats.v() > 0.9);
    }

    #[test]
    fn digitize_ties_go_to_lower_bin() {
        let det = DetectorModel::new(2.0, 4).unwrap();
        assert_eq!(digitize(-2.0, &det), Some(1));
        assert_eq!(digitize(-1.0, &det), Some(1));
        assert_eq!(digitize(-0.5, &det), Some(2));
        assert_eq!(digitize(0.0, &det), Some(2));
        assert_eq!(digitize(1.0, &det), Some(3));
        assert_eq!(digitize(1.5, &det), Some(4));
        assert_eq!(digitize(2.0, &det), Some(4));
        assert_eq!(digitize(2.0000001, &det), None);
        assert_eq!(digitize(-2.0000001, &det), None);
        assert_eq!(digitize(f64::NAN, &det), None);
    }

    #[test]
    fn sampler_is_deterministic_with_distinct_substreams() {
        let (ch, det, con) = fig_point();
        let (s1, r1) = sample_records(500, 42, &ch, &det, &con).unwrap();
        let (s2, r2) = sample_records(500, 42, &ch, &det, &con).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(s1.estimates(), s2.estimates());
        let a = sample_stats_stream(500, 42, 1, &ch, &det, &con).unwrap();
        let b = sample_stats_stream(500, 42, 2, &ch, &det, &con).unwrap();
        assert_ne!(a.estimates(), b.estimates());
        let (ve, ce, pe) = sample_estimates_stream(500, 42, 1, &ch, &det, &con).unwrap();
        let (va, ca, pa) = a.estimates().unwrap();
        assert_eq!((ve, ce, pe), (va, ca, pa));
        assert!(sample_records(0, 1, &ch, &det, &con).is_err());
    }

    #[test]
    fn record_csv_lines() {
        let hit = RoundRecord {
            x: 2,
            j: 3,
            k: 16,
            s: false,
        };
        assert_eq!(hit.csv_line(7), "7,2,3,16,0");
        let miss = RoundRecord {
            x: 1,
            j: 0,
            k: 0,
            s: true,
        };
        assert_eq!(miss.csv_line(8), "8,1,0,0,1");
    }

    #[test]
    fn estimates_track_analytic_values() {
        let ch = ChannelModel::new(1.0, 0.0).unwrap();
        let det = DetectorModel::new(7.0, 16).unwrap();
        let con = Constellation::qpsk(0.5).unwrap();
        let n = 1_000_000;
        let stats = sample_stats(n, 20260816, &ch, &det, &con).unwrap();
        let (v_hat, c_hat, p0_hat) = stats.estimates().unwrap();
        let scale = 1.0 / libm::sqrt(n as f64);
        assert!((v_hat - stats.v()).abs() < 5.0 * stats.v() * scale);
        assert!((c_hat - stats.c()).abs() < 5.0 * libm::sqrt(stats.v() / 8.0) * scale);
        assert_eq!(p0_hat, 0.0);
    }

    #[test]
    fn discard_policy_rescales_by_conclusive_count() {
        let ch = ChannelModel::new(0.9, 0.5).unwrap();
        let det = DetectorModel::new(1.0, 4).unwrap();
        let con = Constellation::qpsk(0.5).unwrap();
        let n = 20_000u64;
        let (zero, recs) =
            sample_records_with(n, 7, &ch, &det, &con, OutOfRangePolicy::CountZero).unwrap();
        let (disc, _) =
            sample_records_with(n, 7, &ch, &det, &con, OutOfRangePolicy::Discard).unwrap();
        let out = recs.iter().filter(|r| r.s).count() as u64;
        assert!(out > 0 && out < n);
        let (vz, cz, pz) = zero.estimates().unwrap();
        let (vd, cd, pd) = disc.estimates().unwrap();
        assert_eq!(pz, pd);
        assert_relative_eq!(vd * (n - out) as f64, vz * n as f64, max_relative = 1e-13);
        assert_relative_eq!(cd * (n - out) as f64, cz * n as f64, max_relative = 1e-13);
    }

    #[test]
    fn sampled_frequencies_fit_analytic_cells() {
        let (ch, det, con) = fig_point();
        let n = 1_000_000u64;
        let (stats, recs) = sample_records(n, 31, &ch, &det, &con).unwrap();
        let d = det.d();
        let cells = con.m() * (d * d + 1);
        let mut counts = vec![0u64; cells];
        for r in &recs {
            let code = if r.s {
                0
            } else {
                1 + (r.j as usize - 1) * d + (r.k as usize - 1)
            };
            counts[r.x as usize * (d * d + 1) + code] += 1;
        }
        let mut expected = vec![0.0f64; cells];
        for x in 0..con.m() {
            let row = &stats.bin_probs()[x];
            let mass: f64 = row.iter().sum();
            expected[x * (d * d + 1)] = con.probs()[x] * (1.0 - mass);
            for (idx, &p) in row.iter().enumerate() {
                expected[x * (d * d + 1) + 1 + idx] = con.probs()[x] * p;
            }
        }
        // Pool cells whose expected count is below 5 so the chi-square
        // sampling distribution applies.
        let mut chi2 = 0.0;
        let mut kept = 0usize;
        let mut pooled_obs = 0.0;
        let mut pooled_exp = 0.0;
        for (idx, &p) in expected.iter().enumerate() {
            let e = p * n as f64;
            let o = counts[idx] as f64;
            if e >= 5.0 {
                chi2 += (o - e) * (o - e) / e;
                kept += 1;
            } else {
                pooled_obs += o;
                pooled_exp += e;
            }
        }
        if pooled_exp > 0.0 {
            chi2 += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
            kept += 1;
        }
        let dof = (kept - 1) as f64;
        // Wilson-Hilferty upper quantile at significance 1e-3.
        let z = 3.0902;
        let crit = dof * libm::pow(1.0 - 2.0 / (9.0 * dof) + z * libm::sqrt(2.0 / (9.0 * dof)), 3.0);
        assert!(
            chi2 < crit,
            "chi-square {chi2:.1} exceeds critical value {crit:.1} at {dof} dof"
        );
    }

    proptest! {
        #[test]
        fn mass_partition_holds_for_random_models(
            eta in 0.0f64..=1.0,
            u in 0.0f64..2.0,
            r in 0.5f64..9.0,
            d in 1usize..=24,
            amp in 0.05f64..1.2,
        ) {
            let ch = ChannelModel::new(eta, u).unwrap();
            let det = DetectorModel::new(r, d).unwrap();
            let con = Constellation::qpsk(amp).unwrap();
            let stats = expected_stats(&ch, &det, &con);
            let mut total_in = 0.0;
            for (x, row) in stats.bin_probs().iter().enumerate() {
                for &p in row {
                    prop_assert!(p >= -1e-15);
                }
                let mass: f64 = row.iter().sum();
                prop_assert!(mass <= 1.0 + 1e-12);
                total_in += con.probs()[x] * mass;
            }
            prop_assert!((stats.p0() - (1.0 - total_in)).abs() <= 1e-12);
            prop_assert!(stats.v() >= 0.0);
        }
    }
}

/// [`sample_records`] with an explicit out-of-range policy.
pub fn sample_records_with(
    n: u64,
    seed: u64,
    ch: &ChannelModel,
    det: &DetectorModel,
    con: &Constellation,
    policy: OutOfRangePolicy,
) -> Result<(ChannelStats, Vec<RoundRecord>), ChannelError> {
    let raw = raw_sample(n, seed, 0, ch, det, con, true)?;
    let stats = stats_from_raw(&raw, n, ch, det, con, policy);
    Ok((stats, raw.records))
}

/// Samples `n` rounds keeping only the aggregate statistics. Identical to
/// [`sample_records`] for the same seed, without the memory cost of the
/// record list; meant for repeated-trial studies.
pub fn sample_stats(
    n: u64,
    seed: u64,
    ch: &ChannelModel,
    det: &DetectorModel,
    con: &Constellation,
) -> Result<ChannelStats, ChannelError> {
    sample_stats_stream(n, seed, 0, ch, det, con)
}

/// [`sample_stats`] drawing from a numbered substream of the seed, for
/// independent repeated trials.
pub fn sample_stats_stream(
    n: u64,
    seed: u64,
    stream: u64,
    ch: &ChannelModel,
    det: &DetectorModel,
    con: &Constellation,
) -> Result<ChannelStats, ChannelError> {
    let raw = raw_sample(n, seed, stream, ch, det, con, false)?;
    Ok(stats_from_raw(
        &raw,
        n,
        ch,
        det,
        con,
        OutOfRangePolicy::CountZero,
    ))
}
