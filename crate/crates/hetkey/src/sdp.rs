//! Semidefinite programs for the two covariance bounds, the matching
//! Lagrange duals, and a dense primal-dual interior-point solver that
//! certifies its answers.
//!
//! Two families of programs are built. The photon-number program
//! maximizes the symmetrized photon number of the received mode subject
//! to the measured second moment, the in-range mass and normalization;
//! its optimum upper-bounds `gamma_B`. The correlation program minimizes
//! the symmetrized two-mode correlation subject to the same budgets, the
//! measured correlation floor and Alice's fixed marginal; its optimum
//! lower-bounds `gamma_AB`. Each comes in two variants: the truncated
//! image of the original infinite-dimensional program at a caller-chosen
//! dimension, and the finite-dimensional relaxation on the cutoff block
//! with budgets rescaled by the normalization floor.
//!
//! All data are real symmetric in the rotated source basis. Restricting
//! the matrix variable to real symmetric matrices loses no generality:
//! the data matrices are real, so the real part of any feasible Hermitian
//! point is feasible with the same objective value. The imaginary-part
//! rows of the marginal constraint become zero matrices with zero right
//! hand sides in this formulation; they are emitted literally and retired
//! by the presolve with multiplier zero.
//!
//! The solver runs on a self-dual canonical pair: minimize `<C, X>` over
//! a block cone (one dense block plus scalar slacks for inequalities)
//! subject to trace equalities, against its dual of maximizing `b^T y`
//! with slack `Z = C - sum y_i A_i >= 0`. One predictor-corrector run
//! produces both primal and dual iterates, and the reported bound is
//! taken from the certified dual side: multipliers are clamped to their
//! sign constraints, the dual slack is rebuilt, and any negative
//! eigenvalue is absorbed by shifting multipliers along an identity
//! combination. The certified value is a true bound by weak duality no
//! matter how inexact the solve was. Solver instances share no state;
//! separate problems can be solved from separate threads freely.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::channel::ChannelStats;
use crate::fock::{kron, FockOperatorSet};
use crate::protocol::EBRepresentation;
use crate::tolerances;

/// Hard cap on the dense variable dimension.
pub const MAX_DENSE_DIM: usize = 1024;

/// Iteration budget of the interior-point loop.
pub const MAX_ITERATIONS: usize = 200;

/// Fraction of the distance to the cone boundary taken per step.
const STEP_FRACTION: f64 = 0.98;

// ═══════════════════════════════════════════════════════════════════════
// Errors
// ═══════════════════════════════════════════════════════════════════════

/// Errors from problem construction, parsing and solving.
#[derive(Debug, Clone, PartialEq)]
pub enum SdpError {
    /// Out-of-range probability at or beyond one quarter; the
    /// normalization floor degenerates there.
    ProbabilityTooLarge(f64),
    /// Variable dimension beyond the dense-solver regime.
    DimensionTooLarge(usize),
    /// Requested tolerance below the trust floor of the solver.
    ToleranceTooTight(f64),
    /// A constraint matrix is not symmetric.
    NotSymmetric {
        /// Label of the offending constraint.
        label: String,
        /// Largest asymmetry found.
        residue: f64,
    },
    /// A matrix has the wrong shape for the declared dimension.
    ShapeMismatch {
        /// Label of the offending matrix.
        label: String,
        /// Rows found.
        rows: usize,
        /// Columns found.
        cols: usize,
        /// Dimension expected on both axes.
        expect: usize,
    },
    /// Mismatched field lengths in a scalar-variable problem.
    LengthMismatch {
        /// Field that disagrees with the cost vector.
        field: &'static str,
        /// Length found.
        len: usize,
        /// Length expected.
        expect: usize,
    },
    /// Equality constraints are mutually inconsistent.
    InconsistentConstraints {
        /// Label of the row that contradicts the ones before it.
        label: String,
        /// Size of the contradiction.
        residue: f64,
    },
    /// The Newton system could not be factored.
    SingularSystem,
    /// A dump could not be parsed.
    ParseError {
        /// One-based line number of the offending token.
        line: usize,
        /// What was wrong.
        message: String,
    },
}

impl core::fmt::Display for SdpError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::ProbabilityTooLarge(p) => {
                write!(f, "out-of-range probability {p} not in [0, 1/4)")
            }
            Self::DimensionTooLarge(n) => {
                write!(f, "dimension {n} exceeds the dense limit {MAX_DENSE_DIM}")
            }
            Self::ToleranceTooTight(t) => write!(f, "tolerance {t} below 1e-10"),
            Self::NotSymmetric { label, residue } => {
                write!(f, "constraint {label} asymmetric by {residue}")
            }
            Self::ShapeMismatch {
                label,
                rows,
                cols,
                expect,
            } => write!(f, "matrix {label} is {rows}x{cols}, expected {expect}x{expect}"),
            Self::LengthMismatch { field, len, expect } => {
                write!(f, "field {field} has length {len}, expected {expect}")
            }
            Self::InconsistentConstraints { label, residue } => {
                write!(f, "constraint {label} inconsistent by {residue}")
            }
            Self::SingularSystem => write!(f, "Newton system is singular"),
            Self::ParseError { line, message } => write!(f, "parse error at line {line}: {message}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SdpError {}

// ═══════════════════════════════════════════════════════════════════════
// Problem types
// ═══════════════════════════════════════════════════════════════════════

/// Optimization direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// Minimize the objective.
    Minimize,
    /// Maximize the objective.
    Maximize,
}

/// How the photon cutoff enters the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationMode {
    /// Truncated image of the original program at the full operator
    /// dimension; budgets enter unscaled and the objective carries the
    /// cutoff compression.
    InfiniteTruncated,
    /// Finite-dimensional relaxation on the cutoff block, with budgets
    /// rescaled by the normalization floor.
    FiniteDim,
}

/// Which bound a problem computes, recorded for downstream normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Photon-number maximization on the received mode.
    PhotonBound,
    /// Correlation minimization on the joint register.
    CorrelationBound,
    /// Hand-built problem without pipeline bookkeeping.
    Generic,
}

/// One linear constraint on the matrix variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    /// Symmetric coefficient matrix.
    pub matrix: DMatrix<f64>,
    /// Right hand side.
    pub rhs: f64,
    /// Human-readable row name, kept through dumps and diagnostics.
    pub label: String,
}

impl LinearConstraint {
    /// Convenience constructor.
    pub fn new(matrix: DMatrix<f64>, rhs: f64, label: &str) -> Self {
        Self {
            matrix,
            rhs,
            label: label.to_string(),
        }
    }
}

/// Program over a positive semidefinite matrix variable `X`:
/// optimize `<objective, X>` subject to `<A, X> <= rhs` for every
/// inequality row and `<B, X> = rhs` for every equality row.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVarForm {
    /// Variable dimension.
    pub dim: usize,
    /// Objective matrix.
    pub objective: DMatrix<f64>,
    /// Upper-bound rows; rows meant as lower bounds enter negated.
    pub inequalities: Vec<LinearConstraint>,
    /// Equality rows.
    pub equalities: Vec<LinearConstraint>,
}

/// Program over scalar variables `y` with one linear matrix inequality:
/// optimize `cost^T y` subject to `constant + sum y_i coefficients_i >= 0`
/// and `y_i >= 0` where flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiForm {
    /// Dimension of the matrix inequality.
    pub dim: usize,
    /// Objective coefficients.
    pub cost: Vec<f64>,
    /// Sign constraints per variable.
    pub nonneg: Vec<bool>,
    /// Constant term of the matrix inequality.
    pub constant: DMatrix<f64>,
    /// Coefficient matrix per variable.
    pub coefficients: Vec<DMatrix<f64>>,
    /// Variable names, parallel to `cost`.
    pub labels: Vec<String>,
}

/// Either representation of a semidefinite program.
#[derive(Debug, Clone, PartialEq)]
pub enum SdpForm {
    /// Matrix-variable form.
    MatrixVariable(MatrixVarForm),
    /// Scalar-variable form with one matrix inequality.
    LinearMatrix(LmiForm),
}

/// A semidefinite program with its direction and pipeline bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    sense: Sense,
    form: SdpForm,
    kind: ProblemKind,
    mode: Option<TruncationMode>,
}

impl SdpProblem {
    /// Wraps a validated matrix-variable program.
    pub fn from_matrix_form(sense: Sense, form: MatrixVarForm) -> Result<Self, SdpError> {
        validate_square(&form.objective, form.dim, "objective")?;
        validate_symmetric(&form.objective, "objective")?;
        for row in form.inequalities.iter().chain(form.equalities.iter()) {
            validate_square(&row.matrix, form.dim, &row.label)?;
            validate_symmetric(&row.matrix, &row.label)?;
        }
        Ok(Self {
            sense,
            form: SdpForm::MatrixVariable(form),
            kind: ProblemKind::Generic,
            mode: None,
        })
    }

    /// Wraps a validated scalar-variable program.
    pub fn from_lmi_form(sense: Sense, form: LmiForm) -> Result<Self, SdpError> {
        let k = form.cost.len();
        if form.nonneg.len() != k {
            return Err(SdpError::LengthMismatch {
                field: "nonneg",
                len: form.nonneg.len(),
                expect: k,
            });
        }
        if form.coefficients.len() != k {
            return Err(SdpError::LengthMismatch {
                field: "coefficients",
                len: form.coefficients.len(),
                expect: k,
            });
        }
        if form.labels.len() != k {
            return Err(SdpError::LengthMismatch {
                field: "labels",
                len: form.labels.len(),
                expect: k,
            });
        }
        validate_square(&form.constant, form.dim, "constant")?;
        validate_symmetric(&form.constant, "constant")?;
        for (mat, label) in form.coefficients.iter().zip(form.labels.iter()) {
            validate_square(mat, form.dim, label)?;
            validate_symmetric(mat, label)?;
        }
        Ok(Self {
            sense,
            form: SdpForm::LinearMatrix(form),
            kind: ProblemKind::Generic,
            mode: None,
        })
    }

    /// Optimization direction.
    pub fn sense(&self) -> Sense {
        self.sense
    }

    /// Representation.
    pub fn form(&self) -> &SdpForm {
        &self.form
    }

    /// Which bound the problem computes.
    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    /// Cutoff treatment, when built by the pipeline.
    pub fn mode(&self) -> Option<TruncationMode> {
        self.mode
    }

    /// Dimension of the matrix variable or matrix inequality.
    pub fn dim(&self) -> usize {
        match &self.form {
            SdpForm::MatrixVariable(m) => m.dim,
            SdpForm::LinearMatrix(l) => l.dim,
        }
    }
}

fn validate_square(mat: &DMatrix<f64>, dim: usize, label: &str) -> Result<(), SdpError> {
    if mat.nrows() != dim || mat.ncols() != dim {
        return Err(SdpError::ShapeMismatch {
            label: label.to_string(),
            rows: mat.nrows(),
            cols: mat.ncols(),
            expect: dim,
        });
    }
    Ok(())
}

fn validate_symmetric(mat: &DMatrix<f64>, label: &str) -> Result<(), SdpError> {
    let mut scale = 0.0_f64;
    let mut residue = 0.0_f64;
    for r in 0..mat.nrows() {
        for c in (r + 1)..mat.ncols() {
            residue = residue.max((mat[(r, c)] - mat[(c, r)]).abs());
        }
        for c in 0..mat.ncols() {
            scale = scale.max(mat[(r, c)].abs());
        }
    }
    if residue > 1e-12 * (1.0 + scale) {
        return Err(SdpError::NotSymmetric {
            label: label.to_string(),
            residue,
        });
    }
    Ok(())
}

// ═══════════════════════════════════════════════════════════════════════
// Solutions
// ═══════════════════════════════════════════════════════════════════════

/// Termination classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// All residuals below tolerance.
    Optimal,
    /// Iteration or progress budget exhausted; values are best certified.
    NumericalLimit,
    /// A certificate of primal infeasibility was detected.
    Infeasible,
}

/// Result of a solve, with both sides of the duality sandwich.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    primal_value: f64,
    dual_value: f64,
    safe_value: f64,
    gap: f64,
    primal_matrix: Option<DMatrix<f64>>,
    multipliers: Vec<f64>,
    status: SolveStatus,
    certified: bool,
    iterations: usize,
    residuals: (f64, f64, f64),
    kind: ProblemKind,
    mode: Option<TruncationMode>,
}

impl SdpSolution {
    /// Objective value at the returned solution of the problem itself.
    pub fn primal_value(&self) -> f64 {
        self.primal_value
    }

    /// Value of the opposite side of the duality pair, certified when
    /// `certified` reports true.
    pub fn dual_value(&self) -> f64 {
        self.dual_value
    }

    /// The side that stays a valid bound under solver inexactness: the
    /// certified dual bound for matrix-variable problems, the certified
    /// feasible objective for scalar-variable problems.
    pub fn safe_value(&self) -> f64 {
        self.safe_value
    }

    /// Relative duality gap `|primal - dual| / (1 + |primal|)`.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// Main block of the matrix variable (matrix-variable form) or the
    /// matrix-inequality slack at the certified point (scalar form).
    pub fn primal_matrix(&self) -> Option<&DMatrix<f64>> {
        self.primal_matrix.as_ref()
    }

    /// Multipliers in the problem's own convention: one per constraint
    /// row (matrix-variable form, inequality rows first) or one per
    /// scalar variable. Rows retired by the presolve report zero.
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// Termination classification.
    pub fn status(&self) -> SolveStatus {
        self.status
    }

    /// Whether the reported dual side passed the feasibility repair.
    pub fn certified(&self) -> bool {
        self.certified
    }

    /// Interior-point iterations consumed.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Final `(relative gap, primal infeasibility, dual infeasibility)`.
    pub fn residuals(&self) -> (f64, f64, f64) {
        self.residuals
    }

    /// Which bound the problem computes.
    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    /// Cutoff treatment of the originating problem.
    pub fn mode(&self) -> Option<TruncationMode> {
        self.mode
    }

    #[cfg(test)]
    fn stub(safe_value: f64, kind: ProblemKind, mode: Option<TruncationMode>) -> Self {
        Self {
            primal_value: safe_value,
            dual_value: safe_value,
            safe_value,
            gap: 0.0,
            primal_matrix: None,
            multipliers: Vec::new(),
            status: SolveStatus::Optimal,
            certified: true,
            iterations: 0,
            residuals: (0.0, 0.0, 0.0),
            kind,
            mode,
        }
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Problem builders
// ═══════════════════════════════════════════════════════════════════════

fn top_left(mat: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    mat.view((0, 0), (dim, dim)).into_owned()
}

fn checked_p0(stats: &ChannelStats) -> Result<f64, SdpError> {
    // Rounding in the analytic sums can leave a tiny negative residue.
    let p0 = stats.p0().max(0.0);
    if p0 >= 0.25 {
        return Err(SdpError::ProbabilityTooLarge(p0));
    }
    Ok(p0)
}

/// Builds the photon-number maximization for the received mode.
///
/// The truncated variant keeps the caller-chosen operator dimension and
/// the measured budgets; the finite variant restricts to the cutoff
/// block, drops the (now redundant) cutoff compression from the
/// objective and rescales both budget rows by the normalization floor.
#[allow(non_snake_case)]
pub fn build_gammaB_primal(
    ops: &FockOperatorSet,
    stats: &ChannelStats,
    mode: TruncationMode,
) -> Result<SdpProblem, SdpError> {
    let p0 = checked_p0(stats)?;
    let (dim, v_rhs, u_rhs) = match mode {
        TruncationMode::InfiniteTruncated => (ops.nmax() + 1, stats.v(), 1.0 - p0),
        TruncationMode::FiniteDim => {
            let floor = 1.0 - 2.0 * p0;
            (ops.n_cut() + 1, stats.v() / floor, 1.0 - p0 / floor)
        }
    };
    let objective = top_left(&ops.photon_objective, dim);
    let inequalities = vec![
        LinearConstraint::new(top_left(&ops.second_moment_op, dim), v_rhs, "second_moment"),
        LinearConstraint::new(-top_left(&ops.range_op, dim), -u_rhs, "range_mass"),
    ];
    let equalities = vec![LinearConstraint::new(
        DMatrix::identity(dim, dim),
        1.0,
        "trace",
    )];
    let mut problem = SdpProblem::from_matrix_form(
        Sense::Maximize,
        MatrixVarForm {
            dim,
            objective,
            inequalities,
            equalities,
        },
    )?;
    problem.kind = ProblemKind::PhotonBound;
    problem.mode = Some(mode);
    Ok(problem)
}

/// Builds the correlation minimization on the joint register.
///
/// The marginal constraint is emitted literally as one row per real
/// matrix-unit direction on Alice's side. In the rotated basis the
/// marginal is real, so the imaginary-direction rows are zero matrices
/// with zero right hand sides; the presolve retires them. The finite
/// variant additionally lowers the correlation floor by the operator-norm
/// allowance for swapping the true state with its truncation.
#[allow(non_snake_case)]
pub fn build_gammaAB_primal(
    ops: &FockOperatorSet,
    ebr: &EBRepresentation,
    stats: &ChannelStats,
    mode: TruncationMode,
) -> Result<SdpProblem, SdpError> {
    let p0 = checked_p0(stats)?;
    let m = ebr.constellation().m();
    let (dim_b, v_rhs, u_rhs, c_rhs, objective, corr) = match mode {
        TruncationMode::InfiniteTruncated => (
            ops.nmax() + 1,
            stats.v(),
            1.0 - p0,
            stats.c(),
            ops.corr_objective.clone(),
            ops.corr_constraint.clone(),
        ),
        TruncationMode::FiniteDim => {
            let floor = 1.0 - 2.0 * p0;
            let nb = ops.n_cut() + 1;
            let cnorm = ebr.constellation().cnorm_bound(ops.detector().r());
            let allowance = 2.0 * libm::sqrt(2.0 * p0) * cnorm;
            // Ladder restricted to the cutoff block; every retained level
            // is below the cutoff, so no further compression applies.
            let mut ladder = DMatrix::zeros(nb, nb);
            for n in 1..nb {
                ladder[(n - 1, n)] = libm::sqrt(n as f64);
            }
            let objective = (kron(ebr.a_rot(), &ladder)
                + kron(&ebr.a_rot().transpose(), &ladder.transpose()))
                * 0.5;
            let amp_b = top_left(&ops.amplitude_op, nb);
            let corr = (kron(&ebr.amp_rot().transpose(), &amp_b)
                + kron(ebr.amp_rot(), &amp_b.transpose()))
                * 0.5;
            (nb, stats.v() / floor, 1.0 - p0 / floor, stats.c() - allowance, objective, corr)
        }
    };
    let dim = m * dim_b;
    let eye_a = DMatrix::identity(m, m);
    let eye_b = DMatrix::identity(dim_b, dim_b);
    let inequalities = vec![
        LinearConstraint::new(
            kron(&eye_a, &top_left(&ops.second_moment_op, dim_b)),
            v_rhs,
            "second_moment",
        ),
        LinearConstraint::new(-corr, -c_rhs, "correlation"),
        LinearConstraint::new(
            -kron(&eye_a, &top_left(&ops.range_op, dim_b)),
            -u_rhs,
            "range_mass",
        ),
    ];
    let sigma = ebr.sigma_rot();
    let mut equalities = Vec::with_capacity(m * m + 1);
    for h in 0..m {
        for k in 0..=h {
            let mut unit = DMatrix::zeros(m, m);
            unit[(h, k)] = 0.5;
            unit[(k, h)] += 0.5;
            let rhs = if h == k { sigma[h] } else { 0.0 };
            equalities.push(LinearConstraint::new(
                kron(&unit, &eye_b),
                rhs,
                &format!("marginal_re_{h}_{k}"),
            ));
        }
    }
    for h in 0..m {
        for k in (h + 1)..m {
            // Imaginary-direction rows vanish identically in the real
            // formulation; emitted for completeness, retired by presolve.
            equalities.push(LinearConstraint::new(
                DMatrix::zeros(dim, dim),
                0.0,
                &format!("marginal_im_{h}_{k}"),
            ));
        }
    }
    equalities.push(LinearConstraint::new(
        DMatrix::identity(dim, dim),
        1.0,
        "trace",
    ));
    let mut problem = SdpProblem::from_matrix_form(
        Sense::Minimize,
        MatrixVarForm {
            dim,
            objective,
            inequalities,
            equalities,
        },
    )?;
    problem.kind = ProblemKind::CorrelationBound;
    problem.mode = Some(mode);
    Ok(problem)
}

/// Builds the explicit Lagrange dual of a matrix-variable program, or
/// recovers the matrix-variable dual of a scalar-variable program.
///
/// For a maximization with rows `<A_i, X> <= a_i`, `<B_j, X> = b_j` the
/// dual minimizes `sum y_i a_i + sum z_j b_j` over `y >= 0`, `z` free,
/// subject to `-objective + sum y_i A_i + sum z_j B_j >= 0`; the
/// minimization dual follows from negating the objective. Weak duality
/// holds at every feasible point of the pair by construction.
pub fn build_dual(p: &SdpProblem) -> Result<SdpProblem, SdpError> {
    let dual = match (&p.form, p.sense) {
        (SdpForm::MatrixVariable(m), sense) => {
            let k = m.inequalities.len() + m.equalities.len();
            let mut cost = Vec::with_capacity(k);
            let mut nonneg = Vec::with_capacity(k);
            let mut coefficients = Vec::with_capacity(k);
            let mut labels = Vec::with_capacity(k);
            for row in m.inequalities.iter() {
                cost.push(row.rhs);
                nonneg.push(true);
                coefficients.push(row.matrix.clone());
                labels.push(row.label.clone());
            }
            for row in m.equalities.iter() {
                cost.push(row.rhs);
                nonneg.push(false);
                coefficients.push(row.matrix.clone());
                labels.push(row.label.clone());
            }
            let (dual_sense, constant, cost) = match sense {
                Sense::Maximize => (Sense::Minimize, -m.objective.clone(), cost),
                Sense::Minimize => (
                    Sense::Maximize,
                    m.objective.clone(),
                    cost.iter().map(|a| -a).collect(),
                ),
            };
            SdpProblem::from_lmi_form(
                dual_sense,
                LmiForm {
                    dim: m.dim,
                    cost,
                    nonneg,
                    constant,
                    coefficients,
                    labels,
                },
            )?
        }
        (SdpForm::LinearMatrix(l), sense) => {
            // The dual of the scalar-variable form is the matrix-variable
            // program it came from: stationarity in each variable gives
            // one row, tight for free variables, one-sided for
            // sign-constrained ones.
            let mut inequalities = Vec::new();
            let mut equalities = Vec::new();
            let (dual_sense, objective, flip) = match sense {
                Sense::Minimize => (Sense::Maximize, -l.constant.clone(), 1.0),
                Sense::Maximize => (Sense::Minimize, l.constant.clone(), -1.0),
            };
            for i in 0..l.cost.len() {
                let row = LinearConstraint::new(
                    l.coefficients[i].clone() * flip,
                    flip * l.cost[i],
                    &l.labels[i],
                );
                if l.nonneg[i] {
                    inequalities.push(row);
                } else {
                    equalities.push(row);
                }
            }
            SdpProblem::from_matrix_form(
                dual_sense,
                MatrixVarForm {
                    dim: l.dim,
                    objective,
                    inequalities,
                    equalities,
                },
            )?
        }
    };
    let mut dual = dual;
    dual.kind = p.kind;
    dual.mode = p.mode;
    Ok(dual)
}

// ═══════════════════════════════════════════════════════════════════════
// Block-diagonal linear algebra
// ═══════════════════════════════════════════════════════════════════════

#[derive(Debug, Clone)]
struct BlockMat {
    blocks: Vec<DMatrix<f64>>,
}

impl BlockMat {
    fn zeros(dims: &[usize]) -> Self {
        Self {
            blocks: dims.iter().map(|&d| DMatrix::zeros(d, d)).collect(),
        }
    }

    fn identity_scaled(dims: &[usize], a: f64) -> Self {
        Self {
            blocks: dims
                .iter()
                .map(|&d| DMatrix::identity(d, d) * a)
                .collect(),
        }
    }

    fn dot(&self, o: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(o.blocks.iter())
            .map(|(a, b)| a.zip_fold(b, 0.0, |acc, x, y| acc + x * y))
            .sum()
    }

    fn axpy(&mut self, a: f64, o: &Self) {
        for (t, s) in self.blocks.iter_mut().zip(o.blocks.iter()) {
            *t += s * a;
        }
    }

    fn frob_norm(&self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    fn symmetrize(&mut self) {
        for b in self.blocks.iter_mut() {
            let t = b.transpose();
            *b += t;
            *b *= 0.5;
        }
    }

    fn mul(&self, o: &Self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(o.blocks.iter())
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    fn cholesky(&self) -> Option<Vec<Cholesky<f64, Dyn>>> {
        self.blocks
            .iter()
            .map(|b| Cholesky::new(b.clone()))
            .collect()
    }

    fn inverse_from_chol(chols: &[Cholesky<f64, Dyn>]) -> Self {
        Self {
            blocks: chols.iter().map(|c| {
                let mut inv = c.inverse();
                let t = inv.transpose();
                inv += t;
                inv *= 0.5;
                inv
            }).collect(),
        }
    }

    fn min_eig(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for b in &self.blocks {
            if b.nrows() == 1 {
                lo = lo.min(b[(0, 0)]);
            } else {
                let eig = SymmetricEigen::new(b.clone());
                lo = lo.min(eig.eigenvalues.min());
            }
        }
        lo
    }
}

/// Largest `alpha` with `state + alpha * dir` still in the cone, from the
/// spectrum of the direction in the Cholesky frame of the state.
fn max_step(state: &BlockMat, dir: &BlockMat) -> f64 {
    let mut alpha = f64::INFINITY;
    for (s, d) in state.blocks.iter().zip(dir.blocks.iter()) {
        let lam = if s.nrows() == 1 {
            if s[(0, 0)] <= 0.0 {
                return 0.0;
            }
            d[(0, 0)] / s[(0, 0)]
        } else {
            let chol = match Cholesky::new(s.clone()) {
                Some(c) => c,
                None => return 0.0,
            };
            let l = chol.l();
            let w1 = match l.solve_lower_triangular(d) {
                Some(w) => w,
                None => return 0.0,
            };
            let mut w2 = match l.solve_lower_triangular(&w1.transpose()) {
                Some(w) => w,
                None => return 0.0,
            };
            let t = w2.transpose();
            w2 += t;
            w2 *= 0.5;
            SymmetricEigen::new(w2).eigenvalues.min()
        };
        if lam < -1e-14 {
            alpha = alpha.min(-1.0 / lam);
        }
    }
    alpha
}

/// Sparse symmetric constraint matrix over the block structure, stored as
/// full (not triangular) triplets per block.
#[derive(Debug, Clone)]
struct SparseRow {
    blocks: Vec<Vec<(usize, usize, f64)>>,
}

impl SparseRow {
    fn from_block_mats(mats: &[DMatrix<f64>]) -> Self {
        let blocks = mats
            .iter()
            .map(|m| {
                let mut t = Vec::new();
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        let v = m[(r, c)];
                        if v != 0.0 {
                            t.push((r, c, v));
                        }
                    }
                }
                t
            })
            .collect();
        Self { blocks }
    }

    fn inner(&self, x: &BlockMat) -> f64 {
        let mut acc = 0.0;
        for (t, b) in self.blocks.iter().zip(x.blocks.iter()) {
            for &(r, c, v) in t {
                acc += v * b[(r, c)];
            }
        }
        acc
    }

    /// Trace of the product against a possibly nonsymmetric block matrix.
    fn inner_product_trace(&self, x: &BlockMat) -> f64 {
        let mut acc = 0.0;
        for (t, b) in self.blocks.iter().zip(x.blocks.iter()) {
            for &(r, c, v) in t {
                acc += v * b[(c, r)];
            }
        }
        acc
    }

    fn add_into(&self, target: &mut BlockMat, coeff: f64) {
        for (t, b) in self.blocks.iter().zip(target.blocks.iter_mut()) {
            for &(r, c, v) in t {
                b[(r, c)] += coeff * v;
            }
        }
    }

    /// Product of this matrix with a dense block matrix on the right.
    fn mul_dense(&self, x: &BlockMat) -> BlockMat {
        let mut out = BlockMat::zeros(&x.blocks.iter().map(|b| b.nrows()).collect::<Vec<_>>());
        for ((t, xb), ob) in self
            .blocks
            .iter()
            .zip(x.blocks.iter())
            .zip(out.blocks.iter_mut())
        {
            let n = xb.ncols();
            for &(r, c, v) in t {
                for k in 0..n {
                    ob[(r, k)] += v * xb[(c, k)];
                }
            }
        }
        out
    }

    fn frob_norm(&self) -> f64 {
        let mut acc = 0.0;
        for t in &self.blocks {
            for &(_, _, v) in t {
                acc += v * v;
            }
        }
        libm::sqrt(acc)
    }

    fn scale(&mut self, a: f64) {
        for t in self.blocks.iter_mut() {
            for e in t.iter_mut() {
                e.2 *= a;
            }
        }
    }

    fn has_entries_outside_main(&self) -> bool {
        self.blocks.iter().skip(1).any(|t| !t.is_empty())
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Canonicalization
// ═══════════════════════════════════════════════════════════════════════

/// Canonical pair: minimize `<c, X>` over the block cone subject to
/// `<rows_i, X> = b_i`, against maximizing `b^T y` with slack
/// `c - sum y_i rows_i >= 0`.
struct Canonical {
    dims: Vec<usize>,
    c: BlockMat,
    rows: Vec<SparseRow>,
    b: Vec<f64>,
    labels: Vec<String>,
    /// Sign each multiplier must satisfy at a feasible dual point:
    /// `+1.0` for `y <= 0`, `-1.0` for `y >= 0`, `0.0` for free. The
    /// convention matches the slack coefficient: a slack entry `s` forces
    /// `s * y <= 0`.
    sign_limit: Vec<f64>,
    /// Original objective value per unit canonical primal value.
    value_scale: f64,
    /// Whether the problem's own optimum lives on the canonical dual
    /// side (scalar-variable input) or the primal side (matrix input).
    original_on_dual_side: bool,
    /// Multiplier reported for original row `i` is
    /// `multiplier_sign * y_i` (after unscaling).
    multiplier_sign: f64,
}

fn canonicalize(p: &SdpProblem) -> Canonical {
    match (&p.form, p.sense) {
        (SdpForm::MatrixVariable(m), sense) => {
            let n_ineq = m.inequalities.len();
            let mut dims = vec![m.dim];
            dims.extend(core::iter::repeat(1).take(n_ineq));
            let (obj_scale, value_scale) = match sense {
                Sense::Minimize => (1.0, 1.0),
                Sense::Maximize => (-1.0, -1.0),
            };
            let mut c = BlockMat::zeros(&dims);
            c.blocks[0] = &m.objective * obj_scale;
            let mut rows = Vec::new();
            let mut b = Vec::new();
            let mut labels = Vec::new();
            let mut sign_limit = Vec::new();
            for (i, row) in m.inequalities.iter().enumerate() {
                let mut mats: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
                mats[0] = row.matrix.clone();
                mats[1 + i][(0, 0)] = 1.0;
                rows.push(SparseRow::from_block_mats(&mats));
                b.push(row.rhs);
                labels.push(row.label.clone());
                sign_limit.push(1.0);
            }
            for row in m.equalities.iter() {
                let mut mats: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
                mats[0] = row.matrix.clone();
                rows.push(SparseRow::from_block_mats(&mats));
                b.push(row.rhs);
                labels.push(row.label.clone());
                sign_limit.push(0.0);
            }
            Canonical {
                dims,
                c,
                rows,
                b,
                labels,
                sign_limit,
                value_scale,
                original_on_dual_side: false,
                multiplier_sign: -1.0,
            }
        }
        (SdpForm::LinearMatrix(l), sense) => {
            let n_sign = l.nonneg.iter().filter(|&&f| f).count();
            let mut dims = vec![l.dim];
            dims.extend(core::iter::repeat(1).take(n_sign));
            let mut c = BlockMat::zeros(&dims);
            c.blocks[0] = l.constant.clone();
            let (b_scale, value_scale) = match sense {
                Sense::Minimize => (-1.0, -1.0),
                Sense::Maximize => (1.0, 1.0),
            };
            let mut rows = Vec::new();
            let mut b = Vec::new();
            let mut labels = Vec::new();
            let mut sign_limit = Vec::new();
            let mut slack_idx = 0;
            for i in 0..l.cost.len() {
                let mut mats: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
                mats[0] = -l.coefficients[i].clone();
                if l.nonneg[i] {
                    mats[1 + slack_idx][(0, 0)] = -1.0;
                    slack_idx += 1;
                    sign_limit.push(-1.0);
                } else {
                    sign_limit.push(0.0);
                }
                rows.push(SparseRow::from_block_mats(&mats));
                b.push(b_scale * l.cost[i]);
                labels.push(l.labels[i].clone());
            }
            Canonical {
                dims,
                c,
                rows,
                b,
                labels,
                sign_limit,
                value_scale,
                original_on_dual_side: true,
                multiplier_sign: 1.0,
            }
        }
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Presolve
// ═══════════════════════════════════════════════════════════════════════

/// Length and offsets of the scaled upper-triangle vectorization.
fn svec_layout(dims: &[usize]) -> (usize, Vec<usize>) {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut total = 0;
    for &d in dims {
        offsets.push(total);
        total += d * (d + 1) / 2;
    }
    (total, offsets)
}

fn svec_of_row(row: &SparseRow, len: usize, offsets: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (bi, t) in row.blocks.iter().enumerate() {
        for &(r, c, v) in t {
            if r > c {
                continue;
            }
            // Index of (r, c) with r <= c in the packed upper triangle.
            let idx = offsets[bi] + c * (c + 1) / 2 + r;
            out[idx] += if r == c {
                v
            } else {
                v * core::f64::consts::SQRT_2
            };
        }
    }
    out
}

/// Orthogonalizes the constraint rows, dropping dependent ones after
/// checking that their right hand sides agree with the combination they
/// duplicate. Returns the indices of retained rows.
fn presolve(can: &Canonical) -> Result<Vec<usize>, SdpError> {
    let (len, offsets) = svec_layout(&can.dims);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut basis_rhs: Vec<f64> = Vec::new();
    let mut kept = Vec::new();
    for (i, row) in can.rows.iter().enumerate() {
        let mut v = svec_of_row(row, len, &offsets);
        let mut rhs = can.b[i];
        let norm0 = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        // Two passes of modified Gram-Schmidt keep the basis orthogonal
        // to rounding accuracy.
        for _ in 0..2 {
            for (q, g) in basis.iter().zip(basis_rhs.iter()) {
                let proj: f64 = v.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
                if proj != 0.0 {
                    for (a, b) in v.iter_mut().zip(q.iter()) {
                        *a -= proj * b;
                    }
                    rhs -= proj * g;
                }
            }
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm <= tolerances::PRESOLVE_DROP_TOL * (1.0 + norm0) {
            // Dependent row: the remaining right hand side must vanish.
            if rhs.abs() > tolerances::PRESOLVE_CONSISTENCY_ABS * (1.0 + can.b[i].abs()) {
                return Err(SdpError::InconsistentConstraints {
                    label: can.labels[i].clone(),
                    residue: rhs.abs(),
                });
            }
            continue;
        }
        for a in v.iter_mut() {
            *a /= norm;
        }
        basis.push(v);
        basis_rhs.push(rhs / norm);
        kept.push(i);
    }
    Ok(kept)
}

// ═══════════════════════════════════════════════════════════════════════
// Interior-point solver
// ═══════════════════════════════════════════════════════════════════════

struct IterateReport {
    x: BlockMat,
    y: Vec<f64>,
    status: SolveStatus,
    iterations: usize,
    residuals: (f64, f64, f64),
}

/// Newton-system factorization that falls back to a small diagonal ridge
/// when degeneracy defeats the plain factorization.
struct SchurSolver {
    base: DMatrix<f64>,
    lu: nalgebra::LU<f64, Dyn, Dyn>,
    ridged: bool,
}

impl SchurSolver {
    fn new(base: DMatrix<f64>) -> Self {
        let lu = base.clone().lu();
        Self {
            base,
            lu,
            ridged: false,
        }
    }

    fn solve(&mut self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        if let Some(v) = self.lu.solve(rhs) {
            if v.iter().all(|x| x.is_finite()) {
                return Some(v);
            }
        }
        if self.ridged {
            return None;
        }
        self.ridged = true;
        let m = self.base.nrows();
        let scale = (0..m).fold(0.0_f64, |acc, i| acc.max(self.base[(i, i)].abs()));
        let mut ridged = self.base.clone();
        for i in 0..m {
            ridged[(i, i)] += 1e-12 * (1.0 + scale);
        }
        self.lu = ridged.lu();
        self.lu
            .solve(rhs)
            .filter(|v| v.iter().all(|x| x.is_finite()))
    }
}

fn initial_radius(can: &Canonical, rows: &[SparseRow], b: &[f64]) -> (f64, f64) {
    let n = can.c.total_dim() as f64;
    let bmax = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let amax = rows.iter().fold(0.0_f64, |m, r| m.max(r.frob_norm()));
    let cnorm = can.c.frob_norm();
    let xr = (10.0_f64).max(libm::sqrt(n) * (1.0 + bmax));
    let zr = (10.0_f64).max(1.0 + cnorm / libm::sqrt(n) + amax);
    (xr, zr)
}

/// Predictor-corrector path following on the canonical pair.
fn run_interior_point(
    can: &Canonical,
    kept: &[usize],
    tol: f64,
) -> Result<IterateReport, SdpError> {
    // Work on unit-norm copies of the retained rows; multipliers are
    // mapped back by the same scale factors in the caller.
    let mut rows: Vec<SparseRow> = Vec::with_capacity(kept.len());
    let mut b: Vec<f64> = Vec::with_capacity(kept.len());
    let mut scales: Vec<f64> = Vec::with_capacity(kept.len());
    for &i in kept {
        let mut r = can.rows[i].clone();
        let s = r.frob_norm();
        r.scale(1.0 / s);
        rows.push(r);
        b.push(can.b[i] / s);
        scales.push(s);
    }
    let m = rows.len();
    let nu = can.c.total_dim() as f64;
    let bnorm = libm::sqrt(b.iter().map(|v| v * v).sum::<f64>());
    let cnorm = can.c.frob_norm();

    let (xr, zr) = initial_radius(can, &rows, &b);
    let mut x = BlockMat::identity_scaled(&can.dims, xr);
    let mut z = BlockMat::identity_scaled(&can.dims, zr);
    let mut y = vec![0.0_f64; m];

    let mut status = SolveStatus::NumericalLimit;
    let mut iterations = 0;
    let mut residuals = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut stall_count = 0;

    for iter in 0..MAX_ITERATIONS {
        iterations = iter + 1;
        // Residuals.
        let ax: Vec<f64> = rows.iter().map(|r| r.inner(&x)).collect();
        let rp: Vec<f64> = b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect();
        let mut rd = can.c.clone();
        rd.axpy(-1.0, &z);
        for (i, r) in rows.iter().enumerate() {
            r.add_into(&mut rd, -y[i]);
        }
        let mu = x.dot(&z) / nu;
        let pobj = can.c.dot(&x);
        let dobj: f64 = b.iter().zip(y.iter()).map(|(bi, yi)| bi * yi).sum();
        let relgap = x.dot(&z) / (1.0 + pobj.abs() + dobj.abs());
        // Per-row scaling keeps one large right hand side from masking
        // violations of the small rows.
        let pinf = rp
            .iter()
            .zip(b.iter())
            .fold(0.0_f64, |acc, (r, bi)| acc.max(r.abs() / (1.0 + bi.abs())));
        let dinf = rd.frob_norm() / (1.0 + cnorm);
        residuals = (relgap, pinf, dinf);
        if relgap < tol && pinf < tol && dinf < tol {
            status = SolveStatus::Optimal;
            break;
        }
        // A dual objective running away while dual feasibility holds is
        // a ray certifying primal infeasibility.
        if dobj > 1e8 * (1.0 + bnorm) && dinf < 1e-7 {
            status = SolveStatus::Infeasible;
            break;
        }

        let chol_z = match z.cholesky() {
            Some(c) => c,
            None => break,
        };
        let zinv = BlockMat::inverse_from_chol(&chol_z);

        // Schur complement M[i][j] = <A_i, X A_j Zinv>.
        let mut schur = DMatrix::zeros(m, m);
        for j in 0..m {
            let pj = rows[j].mul_dense(&zinv);
            let hj = BlockMat {
                blocks: x
                    .blocks
                    .iter()
                    .zip(pj.blocks.iter())
                    .map(|(a, p)| a * p)
                    .collect(),
            };
            for i in 0..m {
                schur[(i, j)] = rows[i].inner_product_trace(&hj);
            }
        }
        let mut newton = SchurSolver::new(schur);

        // Common right-hand-side pieces.
        let xrd = x.mul(&rd);
        let xrd_zinv = xrd.mul(&zinv);
        let a_of_zinv: Vec<f64> = rows.iter().map(|r| r.inner(&zinv)).collect();
        let a_of_xrdz: Vec<f64> = rows.iter().map(|r| r.inner_product_trace(&xrd_zinv)).collect();

        // Predictor: pure Newton step toward feasibility and zero product.
        let rhs_aff = DVector::from_fn(m, |i, _| b[i] + a_of_xrdz[i]);
        let dy_aff = match newton.solve(&rhs_aff) {
            Some(v) => v,
            // Give up on progress and certify the current iterate.
            None => break,
        };
        let mut dz_aff = rd.clone();
        for (i, r) in rows.iter().enumerate() {
            r.add_into(&mut dz_aff, -dy_aff[i]);
        }
        let dx_aff = {
            let xdz_zinv = x.mul(&dz_aff).mul(&zinv);
            let mut d = BlockMat::zeros(&can.dims);
            d.axpy(-1.0, &x);
            d.axpy(-1.0, &xdz_zinv);
            d.symmetrize();
            d
        };
        let ap_aff = max_step(&x, &dx_aff).min(1.0);
        let ad_aff = max_step(&z, &dz_aff).min(1.0);
        let mut x_try = x.clone();
        x_try.axpy(ap_aff, &dx_aff);
        let mut z_try = z.clone();
        z_try.axpy(ad_aff, &dz_aff);
        let mu_aff = x_try.dot(&z_try) / nu;
        let sigma = ((mu_aff / mu) * (mu_aff / mu) * (mu_aff / mu)).clamp(1e-8, 0.9999);

        // Corrector with the centering target and the cross term.
        let cross = dx_aff.mul(&dz_aff);
        let cross_zinv = cross.mul(&zinv);
        let t = sigma * mu;
        let rhs = DVector::from_fn(m, |i, _| {
            b[i] - t * a_of_zinv[i] + a_of_xrdz[i] + rows[i].inner_product_trace(&cross_zinv)
        });
        let dy = match newton.solve(&rhs) {
            Some(v) => v,
            None => break,
        };
        let mut dz = rd.clone();
        for (i, r) in rows.iter().enumerate() {
            r.add_into(&mut dz, -dy[i]);
        }
        let dx = {
            let xdz = x.mul(&dz);
            let mut sum = xdz;
            sum.axpy(1.0, &cross);
            let sum_zinv = sum.mul(&zinv);
            let mut d = BlockMat::zeros(&can.dims);
            d.axpy(t, &zinv);
            d.axpy(-1.0, &x);
            d.axpy(-1.0, &sum_zinv);
            d.symmetrize();
            d
        };
        let ap = (STEP_FRACTION * max_step(&x, &dx)).min(1.0);
        let ad = (STEP_FRACTION * max_step(&z, &dz)).min(1.0);
        if ap < 1e-8 && ad < 1e-8 {
            stall_count += 1;
            if stall_count >= 3 {
                break;
            }
        } else {
            stall_count = 0;
        }
        x.axpy(ap, &dx);
        for i in 0..m {
            y[i] += ad * dy[i];
        }
        z.axpy(ad, &dz);
    }

    // Undo the row normalization on the multipliers.
    for (yi, s) in y.iter_mut().zip(scales.iter()) {
        *yi /= s;
    }
    Ok(IterateReport {
        x,
        y,
        status,
        iterations,
        residuals,
    })
}

// ═══════════════════════════════════════════════════════════════════════
// Certification
// ═══════════════════════════════════════════════════════════════════════

struct Certificate {
    dual_value: f64,
    y: Vec<f64>,
    slack_main: DMatrix<f64>,
    certified: bool,
}

/// Repairs an approximate multiplier vector into a feasible dual point:
/// clamps sign-constrained multipliers, rebuilds the slack, and shifts
/// along a combination of free rows that sums to the identity to absorb
/// any negative eigenvalue. The returned value is then a true bound by
/// weak duality.
fn certify(can: &Canonical, kept: &[usize], y_kept: &[f64]) -> Certificate {
    let mut y = vec![0.0_f64; can.rows.len()];
    for (slot, &i) in kept.iter().enumerate() {
        y[i] = y_kept[slot];
    }
    for (i, limit) in can.sign_limit.iter().enumerate() {
        if *limit > 0.0 && y[i] > 0.0 {
            y[i] = 0.0;
        }
        if *limit < 0.0 && y[i] < 0.0 {
            y[i] = 0.0;
        }
    }
    let rebuild = |y: &[f64]| -> BlockMat {
        let mut zc = can.c.clone();
        for (i, r) in can.rows.iter().enumerate() {
            if y[i] != 0.0 {
                r.add_into(&mut zc, -y[i]);
            }
        }
        zc
    };
    let mut zc = rebuild(&y);
    let scale = 1.0 + can.c.frob_norm();
    let mut lam = zc.min_eig();
    let mut certified = true;
    if lam < 0.0 {
        // Find free rows confined to the main block whose combination is
        // the identity; shifting along it moves the whole spectrum.
        let free: Vec<usize> = (0..can.rows.len())
            .filter(|&i| {
                can.sign_limit[i] == 0.0
                    && kept.contains(&i)
                    && !can.rows[i].has_entries_outside_main()
            })
            .collect();
        let combo = identity_combination(can, &free);
        if let Some(w) = combo {
            let shift = lam * (1.0 + 1e-9) - 1e-15 * scale;
            for (slot, &i) in free.iter().enumerate() {
                y[i] += shift * w[slot];
            }
            zc = rebuild(&y);
            lam = zc.min_eig();
        }
        if lam < -1e-9 * scale {
            certified = false;
        }
    }
    let dual_value: f64 = can.b.iter().zip(y.iter()).map(|(b, y)| b * y).sum();
    Certificate {
        dual_value,
        y,
        slack_main: zc.blocks[0].clone(),
        certified,
    }
}

/// Least-squares weights making the main blocks of the given rows sum to
/// the identity, if they can.
fn identity_combination(can: &Canonical, free: &[usize]) -> Option<Vec<f64>> {
    if free.is_empty() {
        return None;
    }
    let k = free.len();
    let dim = can.dims[0];
    let dense: Vec<DMatrix<f64>> = free
        .iter()
        .map(|&i| {
            let mut m = DMatrix::zeros(dim, dim);
            for &(r, c, v) in &can.rows[i].blocks[0] {
                m[(r, c)] += v;
            }
            m
        })
        .collect();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for a in 0..k {
        for b in a..k {
            let g = dense[a].zip_fold(&dense[b], 0.0, |acc, x, y| acc + x * y);
            gram[(a, b)] = g;
            gram[(b, a)] = g;
        }
        rhs[a] = dense[a].trace();
    }
    let w = gram.lu().solve(&rhs)?;
    let mut resid = DMatrix::identity(dim, dim);
    for (a, m) in dense.iter().enumerate() {
        resid -= m * w[a];
    }
    let res_norm = resid.iter().map(|v| v * v).sum::<f64>();
    if libm::sqrt(res_norm) > 1e-8 * libm::sqrt(dim as f64) {
        return None;
    }
    Some(w.iter().copied().collect())
}

// ═══════════════════════════════════════════════════════════════════════
// Solve entry point
// ═══════════════════════════════════════════════════════════════════════

/// Solves a program to the requested tolerance and certifies the dual
/// side. The safe value is the certified bound: an upper bound for
/// maximizations entered in matrix form, a lower bound for
/// minimizations, and the certified feasible objective for
/// scalar-variable problems.
pub fn solve(p: &SdpProblem, tol: f64) -> Result<SdpSolution, SdpError> {
    if p.dim() > MAX_DENSE_DIM {
        return Err(SdpError::DimensionTooLarge(p.dim()));
    }
    if !(tol >= 1e-10) {
        return Err(SdpError::ToleranceTooTight(tol));
    }
    let can = canonicalize(p);
    let kept = presolve(&can)?;
    let report = run_interior_point(&can, &kept, tol)?;
    let cert = certify(&can, &kept, &report.y);

    let can_primal = can.c.dot(&report.x);
    let (primal_value, dual_value, primal_matrix) = if can.original_on_dual_side {
        (
            can.value_scale * cert.dual_value,
            can.value_scale * can_primal,
            Some(cert.slack_main.clone()),
        )
    } else {
        (
            can.value_scale * can_primal,
            can.value_scale * cert.dual_value,
            Some(report.x.blocks[0].clone()),
        )
    };
    let gap = (primal_value - dual_value).abs() / (1.0 + primal_value.abs());
    let multipliers: Vec<f64> = cert.y.iter().map(|v| can.multiplier_sign * v).collect();
    let safe_value = if can.original_on_dual_side {
        primal_value
    } else {
        dual_value
    };
    Ok(SdpSolution {
        primal_value,
        dual_value,
        safe_value,
        gap,
        primal_matrix,
        multipliers,
        status: report.status,
        certified: cert.certified,
        iterations: report.iterations,
        residuals: report.residuals,
        kind: p.kind,
        mode: p.mode,
    })
}

// ═══════════════════════════════════════════════════════════════════════
// Bound normalization
// ═══════════════════════════════════════════════════════════════════════

/// Turns the two certified optima into the covariance bounds used by the
/// rate formula. The photon bound divides by the normalization floor
/// only in the truncated mode (the finite-dimensional program already
/// optimizes over the normalized state); the correlation bound passes
/// through unchanged in both modes.
pub fn gamma_bounds(
    sol_b: &SdpSolution,
    sol_ab: &SdpSolution,
    p0: f64,
) -> Result<(f64, f64), SdpError> {
    if !(p0 >= 0.0 && p0 < 0.25) {
        return Err(SdpError::ProbabilityTooLarge(p0));
    }
    let gamma_b = match sol_b.mode {
        Some(TruncationMode::InfiniteTruncated) | None => sol_b.safe_value() / (1.0 - 2.0 * p0),
        Some(TruncationMode::FiniteDim) => sol_b.safe_value(),
    };
    let gamma_ab = sol_ab.safe_value();
    Ok((gamma_b, gamma_ab))
}

// ═══════════════════════════════════════════════════════════════════════
// Plain-text dump and parse
// ═══════════════════════════════════════════════════════════════════════

fn push_matrix(out: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{:.17e}", m[(r, c)]));
        }
        out.push('\n');
    }
}

/// Serializes a problem into a line-oriented text format: a header, the
/// objective data, then one section per constraint with its right hand
/// side and label, each matrix in row-major order.
pub fn dump_problem(p: &SdpProblem) -> String {
    let mut out = String::new();
    out.push_str("conic-problem v1\n");
    out.push_str(match p.sense {
        Sense::Minimize => "sense min\n",
        Sense::Maximize => "sense max\n",
    });
    match &p.form {
        SdpForm::MatrixVariable(m) => {
            out.push_str("form matrix\n");
            out.push_str(&format!("dim {}\n", m.dim));
            out.push_str("objective\n");
            push_matrix(&mut out, &m.objective);
            for row in &m.inequalities {
                out.push_str(&format!("ineq {:.17e} {}\n", row.rhs, row.label));
                push_matrix(&mut out, &row.matrix);
            }
            for row in &m.equalities {
                out.push_str(&format!("eq {:.17e} {}\n", row.rhs, row.label));
                push_matrix(&mut out, &row.matrix);
            }
        }
        SdpForm::LinearMatrix(l) => {
            out.push_str("form lmi\n");
            out.push_str(&format!("dim {}\n", l.dim));
            out.push_str(&format!("vars {}\n", l.cost.len()));
            out.push_str("cost");
            for v in &l.cost {
                out.push_str(&format!(" {v:.17e}"));
            }
            out.push('\n');
            out.push_str("nonneg");
            for f in &l.nonneg {
                out.push_str(if *f { " 1" } else { " 0" });
            }
            out.push('\n');
            out.push_str("constant\n");
            push_matrix(&mut out, &l.constant);
            for (mat, label) in l.coefficients.iter().zip(l.labels.iter()) {
                out.push_str(&format!("coeff {label}\n"));
                push_matrix(&mut out, mat);
            }
        }
    }
    out.push_str("end\n");
    out
}

struct LineReader<'a> {
    lines: core::iter::Enumerate<core::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str), SdpError> {
        for (i, line) in self.lines.by_ref() {
            let t = line.trim();
            if !t.is_empty() {
                return Ok((i + 1, t));
            }
        }
        Err(SdpError::ParseError {
            line: 0,
            message: "unexpected end of input".to_string(),
        })
    }
}

fn parse_err(line: usize, message: &str) -> SdpError {
    SdpError::ParseError {
        line,
        message: message.to_string(),
    }
}

fn parse_f64(line: usize, tok: &str) -> Result<f64, SdpError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, "expected a number"))
}

fn parse_matrix(reader: &mut LineReader<'_>, dim: usize) -> Result<DMatrix<f64>, SdpError> {
    let mut m = DMatrix::zeros(dim, dim);
    for r in 0..dim {
        let (ln, line) = reader.next()?;
        let mut cols = 0;
        for (c, tok) in line.split_whitespace().enumerate() {
            if c >= dim {
                return Err(parse_err(ln, "too many columns"));
            }
            m[(r, c)] = parse_f64(ln, tok)?;
            cols += 1;
        }
        if cols != dim {
            return Err(parse_err(ln, "too few columns"));
        }
    }
    Ok(m)
}

/// Parses a problem dumped by [`dump_problem`].
pub fn parse_problem(text: &str) -> Result<SdpProblem, SdpError> {
    let mut reader = LineReader::new(text);
    let (ln, magic) = reader.next()?;
    if magic != "conic-problem v1" {
        return Err(parse_err(ln, "bad header"));
    }
    let (ln, sense_line) = reader.next()?;
    let sense = match sense_line {
        "sense min" => Sense::Minimize,
        "sense max" => Sense::Maximize,
        _ => return Err(parse_err(ln, "expected sense")),
    };
    let (ln, form_line) = reader.next()?;
    let (ln2, dim_line) = reader.next()?;
    let dim: usize = dim_line
        .strip_prefix("dim ")
        .ok_or_else(|| parse_err(ln2, "expected dim"))?
        .parse()
        .map_err(|_| parse_err(ln2, "bad dimension"))?;
    match form_line {
        "form matrix" => {
            let (ln3, obj_line) = reader.next()?;
            if obj_line != "objective" {
                return Err(parse_err(ln3, "expected objective"));
            }
            let objective = parse_matrix(&mut reader, dim)?;
            let mut inequalities = Vec::new();
            let mut equalities = Vec::new();
            loop {
                let (ln4, line) = reader.next()?;
                if line == "end" {
                    break;
                }
                let mut parts = line.splitn(3, ' ');
                let tag = parts.next().unwrap_or("");
                let rhs = parse_f64(ln4, parts.next().ok_or_else(|| parse_err(ln4, "missing rhs"))?)?;
                let label = parts.next().unwrap_or("row").to_string();
                let matrix = parse_matrix(&mut reader, dim)?;
                match tag {
                    "ineq" => inequalities.push(LinearConstraint { matrix, rhs, label }),
                    "eq" => equalities.push(LinearConstraint { matrix, rhs, label }),
                    _ => return Err(parse_err(ln4, "expected ineq, eq or end")),
                }
            }
            SdpProblem::from_matrix_form(
                sense,
                MatrixVarForm {
                    dim,
                    objective,
                    inequalities,
                    equalities,
                },
            )
        }
        "form lmi" => {
            let (ln3, vars_line) = reader.next()?;
            let k: usize = vars_line
                .strip_prefix("vars ")
                .ok_or_else(|| parse_err(ln3, "expected vars"))?
                .parse()
                .map_err(|_| parse_err(ln3, "bad variable count"))?;
            let (ln4, cost_line) = reader.next()?;
            let cost_toks: Vec<&str> = cost_line
                .strip_prefix("cost")
                .ok_or_else(|| parse_err(ln4, "expected cost"))?
                .split_whitespace()
                .collect();
            if cost_toks.len() != k {
                return Err(parse_err(ln4, "wrong cost length"));
            }
            let mut cost = Vec::with_capacity(k);
            for tok in cost_toks {
                cost.push(parse_f64(ln4, tok)?);
            }
            let (ln5, nn_line) = reader.next()?;
            let nn_toks: Vec<&str> = nn_line
                .strip_prefix("nonneg")
                .ok_or_else(|| parse_err(ln5, "expected nonneg"))?
                .split_whitespace()
                .collect();
            if nn_toks.len() != k {
                return Err(parse_err(ln5, "wrong nonneg length"));
            }
            let nonneg: Vec<bool> = nn_toks.iter().map(|t| *t == "1").collect();
            let (ln6, const_line) = reader.next()?;
            if const_line != "constant" {
                return Err(parse_err(ln6, "expected constant"));
            }
            let constant = parse_matrix(&mut reader, dim)?;
            let mut coefficients = Vec::with_capacity(k);
            let mut labels = Vec::with_capacity(k);
            for _ in 0..k {
                let (ln7, line) = reader.next()?;
                let label = line
                    .strip_prefix("coeff ")
                    .ok_or_else(|| parse_err(ln7, "expected coeff"))?;
                labels.push(label.to_string());
                coefficients.push(parse_matrix(&mut reader, dim)?);
            }
            let (ln8, end_line) = reader.next()?;
            if end_line != "end" {
                return Err(parse_err(ln8, "expected end"));
            }
            SdpProblem::from_lmi_form(
                sense,
                LmiForm {
                    dim,
                    cost,
                    nonneg,
                    constant,
                    coefficients,
                    labels,
                },
            )
        }
        _ => Err(parse_err(ln, "expected form")),
    }
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
