//! Sweep execution: expands a configuration into a grid of points, runs
//! the full bound pipeline on each, and renders the results as CSV.
//!
//! Points are independent and dispatched to a worker pool; the output
//! order follows the input grid regardless of completion order. A point
//! that fails numerically is recorded in its `status` column and the
//! sweep continues.

use std::time::Instant;

use rayon::prelude::*;

use hetkey::channel::{expected_stats, sample_stats_stream, ChannelModel, ChannelStats};
use hetkey::finite_size::{
    confidence_deltas, key_rate, ConfidenceDeltas, RateMode, RateStatus, SecurityParams,
};
use hetkey::fock::{DetectorModel, FockOperatorSet};
use hetkey::gaussian_bound::{cutoff_budget, gamma_a_ceiling};
use hetkey::infotheory::{mutual_information, DiscreteJoint};
use hetkey::protocol::EBRepresentation;
use hetkey::sdp::{build_gammaAB_primal, build_gammaB_primal, gamma_bounds, solve, SolveStatus};

use crate::config::{parse_rate_mode, RunConfig};

/// Fixed CSV header; the schema is stable across runs and modes.
pub const CSV_HEADER: &str = "eta_db,eta,n,mode,R,d,I_xy,gammaB_bound,gammaAB_bound,\
f_chi,delta_shirokov,aep_term,hash_term,delta_v,delta_c,delta_P,P0_used,\
sdp_gap_B,sdp_gap_AB,rate_bits,status,eps_prime,runtime_s";

/// One grid coordinate: a channel point, an optional block size (absent
/// for asymptotic rows) and the operator dimension.
#[derive(Debug, Clone, Copy)]
struct SweepPoint {
    index: usize,
    loss_db: f64,
    n: Option<u64>,
    dim: usize,
}

/// One output row. Numeric fields are `NaN` past the stage where a
/// failed point stopped; `detail` carries the failure message for the
/// stderr summary and is not serialized.
#[derive(Debug, Clone)]
pub struct Row {
    pub loss_db: f64,
    pub eta: f64,
    pub n: u64,
    pub mode: String,
    pub range: f64,
    pub bins: usize,
    pub i_xy: f64,
    pub gamma_b: f64,
    pub gamma_ab: f64,
    pub f_chi: f64,
    pub shirokov: f64,
    pub aep_term: f64,
    pub hash_term: f64,
    pub delta_v: f64,
    pub delta_c: f64,
    pub delta_p: f64,
    pub p0_used: f64,
    pub gap_b: f64,
    pub gap_ab: f64,
    pub rate_bits: f64,
    pub status: String,
    pub eps_prime: f64,
    pub runtime_s: f64,
    pub detail: Option<String>,
}

impl Row {
    /// Whether this point completed and produced a certified rate.
    pub fn succeeded(&self) -> bool {
        self.detail.is_none()
    }

    /// Renders the row in header order.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.loss_db,
            self.eta,
            self.n,
            self.mode,
            self.range,
            self.bins,
            self.i_xy,
            self.gamma_b,
            self.gamma_ab,
            self.f_chi,
            self.shirokov,
            self.aep_term,
            self.hash_term,
            self.delta_v,
            self.delta_c,
            self.delta_p,
            self.p0_used,
            self.gap_b,
            self.gap_ab,
            self.rate_bits,
            self.status,
            self.eps_prime,
            self.runtime_s,
        )
    }
}

/// A sweep that could not start at all, as opposed to per-point
/// failures.
#[derive(Debug, Clone)]
pub struct SetupError(pub String);

impl core::fmt::Display for SetupError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SetupError {}

/// Everything a sweep produces: ordered rows plus the failure count that
/// decides the exit code.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<Row>,
    pub failed: usize,
}

/// Partial result of one point, accumulated stage by stage so a failure
/// keeps the values computed before it.
#[derive(Debug, Clone, Copy)]
struct Partial {
    i_xy: f64,
    gamma_b: f64,
    gamma_ab: f64,
    f_chi: f64,
    shirokov: f64,
    aep_term: f64,
    hash_term: f64,
    delta_v: f64,
    delta_c: f64,
    delta_p: f64,
    p0_used: f64,
    gap_b: f64,
    gap_ab: f64,
    rate_bits: f64,
    eps_prime: f64,
}

impl Partial {
    fn blank() -> Self {
        Self {
            i_xy: f64::NAN,
            gamma_b: f64::NAN,
            gamma_ab: f64::NAN,
            f_chi: f64::NAN,
            shirokov: f64::NAN,
            aep_term: f64::NAN,
            hash_term: f64::NAN,
            delta_v: f64::NAN,
            delta_c: f64::NAN,
            delta_p: f64::NAN,
            p0_used: f64::NAN,
            gap_b: f64::NAN,
            gap_ab: f64::NAN,
            rate_bits: f64::NAN,
            eps_prime: f64::NAN,
        }
    }
}

/// Stage tag and message of a failed point.
struct PointFailure {
    stage: &'static str,
    message: String,
}

fn fail<E: core::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> PointFailure {
    move |e| PointFailure {
        stage,
        message: e.to_string(),
    }
}

/// Runs the full pipeline on one grid point, writing into `acc` as each
/// stage lands so failures keep their prefix of values.
fn compute_stages(
    cfg: &RunConfig,
    det: &DetectorModel,
    ebr: &EBRepresentation,
    ops: &FockOperatorSet,
    point: &SweepPoint,
    acc: &mut Partial,
) -> Result<RateStatus, PointFailure> {
    let con = ebr.constellation();
    let ch = ChannelModel::from_loss_db(point.loss_db, cfg.excess_noise)
        .map_err(fail("channel"))?;

    let stats: ChannelStats = if cfg.samples == 0 {
        expected_stats(&ch, det, con)
    } else {
        sample_stats_stream(cfg.samples, cfg.seed, point.index as u64, &ch, det, con)
            .map_err(fail("sampling"))?
            .using_estimates()
            .expect("sampled statistics carry estimates")
    };

    let dj = DiscreteJoint::from_stats(&stats, con).map_err(fail("statistics"))?;
    acc.i_xy = mutual_information(&dj).i_xy;

    let sp = SecurityParams::new(
        point.n.unwrap_or(1),
        cfg.reconciliation,
        cfg.eps_smoothing,
        cfg.eps_hashing,
        cfg.eps_estimation,
    )
    .map_err(fail("security"))?;
    acc.eps_prime = sp.eps_prime();

    let (deltas, stats_used) = match cfg.rate_mode {
        RateMode::Asymptotic => (ConfidenceDeltas::zero(), stats.clone()),
        RateMode::Finite => {
            let d = confidence_deltas(&stats, &sp, det, con).map_err(fail("confidence"))?;
            let shifted = stats.with_replacements(d.delta_v(), d.delta_c(), d.delta_p());
            (d, shifted)
        }
    };
    acc.delta_v = deltas.delta_v();
    acc.delta_c = deltas.delta_c();
    acc.delta_p = deltas.delta_p();
    acc.p0_used = stats_used.p0();

    let budget = cutoff_budget(acc.p0_used, det.r()).map_err(fail("budget"))?;
    let gamma_a = gamma_a_ceiling(con.amp(), acc.p0_used).map_err(fail("budget"))?;

    let prog_b =
        build_gammaB_primal(ops, &stats_used, cfg.truncation).map_err(fail("build_gammaB"))?;
    let sol_b = solve(&prog_b, cfg.tolerance).map_err(fail("solve_gammaB"))?;
    acc.gap_b = sol_b.gap();
    if sol_b.status() == SolveStatus::Infeasible {
        return Err(PointFailure {
            stage: "solve_gammaB",
            message: "program reported infeasible".to_string(),
        });
    }
    if !sol_b.certified() {
        return Err(PointFailure {
            stage: "certify_gammaB",
            message: "dual certificate could not be repaired".to_string(),
        });
    }

    let prog_ab = build_gammaAB_primal(ops, ebr, &stats_used, cfg.truncation)
        .map_err(fail("build_gammaAB"))?;
    let sol_ab = solve(&prog_ab, cfg.tolerance).map_err(fail("solve_gammaAB"))?;
    acc.gap_ab = sol_ab.gap();
    if sol_ab.status() == SolveStatus::Infeasible {
        return Err(PointFailure {
            stage: "solve_gammaAB",
            message: "program reported infeasible".to_string(),
        });
    }
    if !sol_ab.certified() {
        return Err(PointFailure {
            stage: "certify_gammaAB",
            message: "dual certificate could not be repaired".to_string(),
        });
    }

    let (gamma_b, gamma_ab) =
        gamma_bounds(&sol_b, &sol_ab, acc.p0_used).map_err(fail("bounds"))?;
    acc.gamma_b = gamma_b;
    acc.gamma_ab = gamma_ab;

    let rate = key_rate(
        cfg.rate_mode,
        acc.i_xy,
        gamma_a,
        gamma_b,
        gamma_ab,
        &budget,
        &deltas,
        &sp,
        cfg.bins,
    )
    .map_err(fail("rate"))?;
    acc.f_chi = rate.f_chi();
    acc.shirokov = rate.shirokov();
    acc.aep_term = rate.aep_term();
    acc.hash_term = rate.hash_term();
    acc.rate_bits = rate.r_n();
    Ok(rate.status())
}

fn compute_point(
    cfg: &RunConfig,
    det: &DetectorModel,
    ebr: &EBRepresentation,
    ops: &FockOperatorSet,
    point: &SweepPoint,
) -> Row {
    let start = Instant::now();
    let mut acc = Partial::blank();
    let outcome = compute_stages(cfg, det, ebr, ops, point, &mut acc);
    let runtime_s = start.elapsed().as_secs_f64();

    let (status, detail) = match outcome {
        Ok(RateStatus::Positive) => ("positive".to_string(), None),
        Ok(RateStatus::NonPositive) => ("nonpositive".to_string(), None),
        Ok(RateStatus::Aborted) => unreachable!("the pipeline never reclassifies"),
        Err(f) => (format!("failed({})", f.stage), Some(f.message)),
    };

    let mode_word = match cfg.rate_mode {
        RateMode::Asymptotic => "asymptotic",
        RateMode::Finite => "finite",
    };
    let trunc_word = match cfg.truncation {
        hetkey::sdp::TruncationMode::InfiniteTruncated => format!("dim{}", point.dim),
        hetkey::sdp::TruncationMode::FiniteDim => "projected".to_string(),
    };

    Row {
        loss_db: point.loss_db,
        eta: 10f64.powf(-point.loss_db / 10.0),
        n: point.n.unwrap_or(0),
        mode: format!("{mode_word}-{trunc_word}"),
        range: det.r(),
        bins: det.d(),
        i_xy: acc.i_xy,
        gamma_b: acc.gamma_b,
        gamma_ab: acc.gamma_ab,
        f_chi: acc.f_chi,
        shirokov: acc.shirokov,
        aep_term: acc.aep_term,
        hash_term: acc.hash_term,
        delta_v: acc.delta_v,
        delta_c: acc.delta_c,
        delta_p: acc.delta_p,
        p0_used: acc.p0_used,
        gap_b: acc.gap_b,
        gap_ab: acc.gap_ab,
        rate_bits: acc.rate_bits,
        status,
        eps_prime: acc.eps_prime,
        runtime_s,
        detail,
    }
}

/// Expands the configuration into its point grid and computes every
/// point on the current worker pool, preserving grid order.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutcome, SetupError> {
    let det = DetectorModel::new(cfg.range, cfg.bins)
        .map_err(|e| SetupError(format!("detector: {e}")))?;
    let ebr = EBRepresentation::qpsk(cfg.amplitude)
        .map_err(|e| SetupError(format!("constellation: {e}")))?;

    let op_sets: Vec<(usize, FockOperatorSet)> = cfg
        .working_dims()
        .into_iter()
        .map(|dim| {
            FockOperatorSet::build(&det, &ebr, dim - 1)
                .map(|ops| (dim, ops))
                .map_err(|e| SetupError(format!("operators at dimension {dim}: {e}")))
        })
        .collect::<Result<_, _>>()?;

    let block_axis: Vec<Option<u64>> = match cfg.rate_mode {
        RateMode::Asymptotic => vec![None],
        RateMode::Finite => cfg.block_sizes.iter().copied().map(Some).collect(),
    };

    let mut points = Vec::new();
    for &loss_db in &cfg.loss_db {
        for &n in &block_axis {
            for (dim, _) in &op_sets {
                points.push(SweepPoint {
                    index: points.len(),
                    loss_db,
                    n,
                    dim: *dim,
                });
            }
        }
    }

    let rows: Vec<Row> = points
        .par_iter()
        .map(|point| {
            let ops = &op_sets
                .iter()
                .find(|(dim, _)| *dim == point.dim)
                .expect("grid dims come from op_sets")
                .1;
            compute_point(cfg, &det, &ebr, ops, point)
        })
        .collect();

    let failed = rows.iter().filter(|r| !r.succeeded()).count();
    Ok(SweepOutcome { rows, failed })
}

/// Renders the outcome as a CSV document with the fixed header.
pub fn render_csv(outcome: &SweepOutcome) -> String {
    let mut out = String::with_capacity(256 * (outcome.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &outcome.rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

/// Short human-readable account of the sweep for stderr.
pub fn render_summary(outcome: &SweepOutcome, wall_s: f64) -> String {
    let total = outcome.rows.len();
    let positive = outcome
        .rows
        .iter()
        .filter(|r| r.status == "positive")
        .count();
    let best = outcome
        .rows
        .iter()
        .filter(|r| r.succeeded())
        .map(|r| r.rate_bits)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = format!(
        "{} points, {} ok ({} positive), {} failed, {:.1} s",
        total,
        total - outcome.failed,
        positive,
        outcome.failed,
        wall_s
    );
    if best > f64::NEG_INFINITY {
        s.push_str(&format!("; best rate {best} bits"));
    }
    for row in outcome.rows.iter().filter(|r| !r.succeeded()) {
        s.push_str(&format!(
            "\n  {} dB, n={}, {}: {} ({})",
            row.loss_db,
            row.n,
            row.mode,
            row.status,
            row.detail.as_deref().unwrap_or(""),
        ));
    }
    s
}

/// Entry point behind `main`: reads and validates the configuration,
/// applies command-line overrides, runs the sweep and writes the CSV.
/// Returns the process exit code: 0 for a clean sweep, 2 for
/// configuration problems, 3 when any point failed numerically.
pub fn run(cli: &crate::Cli) -> i32 {
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("hetkey: cannot read {}: {e}", cli.config.display());
            return 2;
        }
    };
    let mut cfg = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hetkey: {}: {e}", cli.config.display());
            return 2;
        }
    };

    if let Some(mode) = &cli.mode {
        match parse_rate_mode(mode) {
            Some(m) => cfg.rate_mode = m,
            None => {
                eprintln!("hetkey: --mode {mode} is neither `asymptotic` nor `finite`");
                return 2;
            }
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tol) = cli.tol {
        cfg.tolerance = tol;
    }
    if let Some(out) = &cli.output {
        cfg.output = Some(out.display().to_string());
    }
    if let Err(e) = cfg.validate() {
        eprintln!("hetkey: {e}");
        return 2;
    }

    let started = Instant::now();
    let sweep = || run_sweep(&cfg);
    let outcome = match cli.threads {
        Some(threads) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("hetkey: worker pool: {e}");
                    return 2;
                }
            };
            pool.install(sweep)
        }
        None => sweep(),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            eprintln!("hetkey: {e}");
            return 2;
        }
    };

    let csv = render_csv(&outcome);
    match &cfg.output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, csv) {
                eprintln!("hetkey: cannot write {path}: {e}");
                return 2;
            }
        }
        None => print!("{csv}"),
    }
    eprintln!("hetkey: {}", render_summary(&outcome, started.elapsed().as_secs_f64()));

    if outcome.failed > 0 {
        3
    } else {
        0
    }
}
