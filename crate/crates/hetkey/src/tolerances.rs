//! Centralized numeric tolerances used across the crate and its test suite.
//!
//! Every constant documents the error mechanism it guards against. Keeping
//! them in one place makes the accuracy budget auditable: a module that
//! loosens a tolerance has to justify it here, not inline at the call site.
//!
//! | Category        | Constants                                   |
//! |-----------------|---------------------------------------------|
//! | Fock operators  | `BIN_SUM_ABS`, `PSD_EIG_FLOOR`, `SPARSITY_RESIDUE_ABS`, `MOMENT_QUAD_REL` |
//! | Source model    | `LAMBDA_AGREE_REL`, `SOURCE_CONSISTENCY_ABS` |
//! | SDP solver      | `SOLVER_DEFAULT_TOL`, `GAP_TARGET`, `PRESOLVE_DROP_TOL`, `PRESOLVE_CONSISTENCY_ABS` |
//! | Entropy bounds  | `ROUTE_AGREE_ABS`, `PHYSICALITY_SLACK`       |
//! | Statistics      | `STATS_AGREE_REL`                            |

// ═══════════════════════════════════════════════════════════════════════
// Fock operators
// ═══════════════════════════════════════════════════════════════════════

/// Absolute entrywise tolerance for the resolution check: the sum of all
/// bin projectors must reproduce the range operator. The moment recurrences
/// lose at most ~1e-9 to cancellation at extreme tail bins; entries of the
/// summed operator see averaged, not worst-case, error.
pub const BIN_SUM_ABS: f64 = 1e-10;

/// Eigenvalues of operators that are positive semidefinite in exact
/// arithmetic may dip this far below zero after f64 assembly.
pub const PSD_EIG_FLOOR: f64 = -1e-10;

/// Entries that vanish by the fourfold symmetry of the bin grid are
/// asserted smaller than this in magnitude before being pinned to zero.
pub const SPARSITY_RESIDUE_ABS: f64 = 1e-10;

/// Relative agreement between recurrence-based truncated Gaussian moments
/// and fixed-order Gauss-Legendre quadrature of the same integrand.
pub const MOMENT_QUAD_REL: f64 = 1e-9;

// ═══════════════════════════════════════════════════════════════════════
// Source model
// ═══════════════════════════════════════════════════════════════════════

/// Relative agreement between the series evaluation of the source spectrum
/// and its closed hyperbolic/trigonometric form. Both routes are stable for
/// the amplitudes this crate targets, so agreement is near machine level.
pub const LAMBDA_AGREE_REL: f64 = 1e-12;

/// Absolute tolerance for internal consistency checks of the
/// entanglement-based source description (eigenvalue match, ladder action,
/// purification overlaps).
pub const SOURCE_CONSISTENCY_ABS: f64 = 1e-10;

// ═══════════════════════════════════════════════════════════════════════
// SDP solver
// ═══════════════════════════════════════════════════════════════════════

/// Default termination tolerance on relative gap and scaled feasibility
/// residuals of the interior-point solver.
pub const SOLVER_DEFAULT_TOL: f64 = 1e-8;

/// Certified relative gap the production solves are expected to reach.
pub const GAP_TARGET: f64 = 1e-7;

/// A constraint row whose component orthogonal to the preceding rows has
/// norm below this fraction of its original norm is treated as linearly
/// dependent and dropped by the presolve.
pub const PRESOLVE_DROP_TOL: f64 = 1e-10;

/// A dependent row must have its right-hand side reproduced by the same
/// linear combination of kept rows within this absolute tolerance,
/// otherwise the problem is reported infeasible.
pub const PRESOLVE_CONSISTENCY_ABS: f64 = 1e-8;

// ═══════════════════════════════════════════════════════════════════════
// Entropy bounds
// ═══════════════════════════════════════════════════════════════════════

/// Absolute agreement between the eigenvalue route and the closed-form
/// route to the symplectic spectrum of the two-mode covariance matrix.
pub const ROUTE_AGREE_ABS: f64 = 1e-10;

/// Slack accepted on physicality checks of covariance matrices assembled
/// from optimization output (uncertainty-relation determinant, symplectic
/// eigenvalue floor).
pub const PHYSICALITY_SLACK: f64 = 1e-9;

// ═══════════════════════════════════════════════════════════════════════
// Statistics
// ═══════════════════════════════════════════════════════════════════════

/// Relative agreement between closed-form channel moments and their values
/// recomputed by direct summation over the coarse-grained distribution.
/// Limited by the truncation of the distribution to the detection range.
pub const STATS_AGREE_REL: f64 = 5e-3;
