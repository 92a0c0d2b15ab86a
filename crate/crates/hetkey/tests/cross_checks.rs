//! Cross-module consistency checks on the identity channel.
//!
//! The coarse-grained statistics can be computed two independent ways:
//! analytically from the channel model, and as expectation values of the
//! measurement operators against the explicit source state in the photon
//! basis. The two routes share no code beyond the error function, so
//! agreement pins down the operator construction, the basis rotation and
//! the channel sums at once. The semidefinite bounds are then checked
//! against the same explicit state, which is feasible for both programs.

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use num_complex::Complex64;

use hetkey::channel::{expected_stats, ChannelModel};
use hetkey::fock::{DetectorModel, FockOperatorSet};
use hetkey::protocol::EBRepresentation;
use hetkey::sdp::{build_gammaAB_primal, build_gammaB_primal, solve, TruncationMode};

/// Real coefficients of the source state in the rotated product basis,
/// flattened with the source index slow and the photon index fast.
fn rotated_source_vector(ebr: &EBRepresentation, nmax: usize) -> Vec<f64> {
    let dim_b = nmax + 1;
    let lambdas = ebr.lambdas();
    let mut psi = vec![0.0; 4 * dim_b];
    for y in 0..4 {
        let phase = Complex64::from_polar(1.0, -(y as f64) * core::f64::consts::FRAC_PI_4);
        let weight = libm::sqrt(lambdas[y]);
        for (n, coeff) in ebr.schmidt_vector_emitted(y, nmax).iter().enumerate() {
            let value = phase * weight * coeff;
            assert!(
                value.im.abs() < 1e-12,
                "rotated coefficient ({y}, {n}) has imaginary residue {}",
                value.im
            );
            psi[y * dim_b + n] = value.re;
        }
    }
    psi
}

/// Reduced state of the emitted mode in the photon basis.
fn emitted_mode_state(ebr: &EBRepresentation, nmax: usize) -> DMatrix<f64> {
    let dim_b = nmax + 1;
    let psi = rotated_source_vector(ebr, nmax);
    let mut rho = DMatrix::zeros(dim_b, dim_b);
    for y in 0..4 {
        for n in 0..dim_b {
            for m in 0..dim_b {
                rho[(n, m)] += psi[y * dim_b + n] * psi[y * dim_b + m];
            }
        }
    }
    rho
}

fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.zip_fold(b, 0.0, |acc, x, y| acc + x * y)
}

#[test]
fn operators_reproduce_channel_statistics() {
    // Full detector at its own cutoff; the source tail is far below
    // working precision there.
    let nmax = 98;
    let det = DetectorModel::new(7.0, 16).unwrap();
    let ebr = EBRepresentation::qpsk(0.5).unwrap();
    let ops = FockOperatorSet::build(&det, &ebr, nmax).unwrap();
    let ch = ChannelModel::new(1.0, 0.0).unwrap();
    let stats = expected_stats(&ch, &det, ebr.constellation());

    let rho_b = emitted_mode_state(&ebr, nmax);
    assert_relative_eq!(rho_b.trace(), 1.0, epsilon = 1e-12);

    // Second moment, in-range mass and correlation through the operator
    // route against the analytic channel sums.
    let v_op = frob_inner(&ops.second_moment_op, &rho_b);
    assert_relative_eq!(v_op, stats.v(), max_relative = 1e-9);

    let mass_op = frob_inner(&ops.range_op, &rho_b);
    assert_relative_eq!(mass_op, 1.0 - stats.p0(), max_relative = 1e-9);

    let psi = rotated_source_vector(&ebr, nmax);
    let dim = 4 * (nmax + 1);
    let joint = DMatrix::from_fn(dim, dim, |i, j| psi[i] * psi[j]);
    let c_op = frob_inner(&ops.corr_constraint, &joint);
    assert_relative_eq!(c_op, stats.c(), max_relative = 1e-9);

    // The joint state's marginal on the source side is the spectral
    // diagonal the programs constrain against.
    let dim_b = nmax + 1;
    for y in 0..4 {
        let mut block = 0.0;
        for n in 0..dim_b {
            block += joint[(y * dim_b + n, y * dim_b + n)];
        }
        assert_relative_eq!(block, ebr.lambdas()[y], epsilon = 1e-12);
    }
}

#[test]
fn lossy_channel_statistics_match_attenuated_source() {
    // Pure loss maps the source through amplitude scaling; the operator
    // route at the scaled amplitude must match the channel route at the
    // original amplitude with transmittance.
    let nmax = 98;
    let det = DetectorModel::new(7.0, 16).unwrap();
    let eta: f64 = 0.9;
    let ebr_in = EBRepresentation::qpsk(0.5).unwrap();
    let ebr_out = EBRepresentation::qpsk(0.5 * libm::sqrt(eta)).unwrap();
    let ops = FockOperatorSet::build(&det, &ebr_out, nmax).unwrap();
    let ch = ChannelModel::new(eta, 0.0).unwrap();
    let stats = expected_stats(&ch, &det, ebr_in.constellation());

    let rho_b = emitted_mode_state(&ebr_out, nmax);
    let v_op = frob_inner(&ops.second_moment_op, &rho_b);
    assert_relative_eq!(v_op, stats.v(), max_relative = 1e-9);
    let mass_op = frob_inner(&ops.range_op, &rho_b);
    assert_relative_eq!(mass_op, 1.0 - stats.p0(), max_relative = 1e-9);
}

#[test]
fn semidefinite_bounds_sandwich_the_explicit_state() {
    // Small detector so the programs stay quick; the identity-channel
    // source state is feasible for both, so the photon maximum sits at
    // or above its photon value and the correlation minimum at or below
    // its correlation value.
    let nmax = 12;
    let det = DetectorModel::new(2.0, 4).unwrap();
    let ebr = EBRepresentation::qpsk(0.5).unwrap();
    let ops = FockOperatorSet::build(&det, &ebr, nmax).unwrap();
    let ch = ChannelModel::new(1.0, 0.0).unwrap();
    let stats = expected_stats(&ch, &det, ebr.constellation());

    let rho_b = emitted_mode_state(&ebr, nmax);
    let photon_at_state = frob_inner(&ops.photon_objective, &rho_b);
    let pb = build_gammaB_primal(&ops, &stats, TruncationMode::InfiniteTruncated).unwrap();
    let sol_b = solve(&pb, 1e-8).unwrap();
    assert!(
        sol_b.primal_value() >= photon_at_state - 1e-7,
        "photon bound {} under the state value {photon_at_state}",
        sol_b.primal_value()
    );
    // The certified side must also clear the state value.
    assert!(sol_b.safe_value() >= photon_at_state - 1e-7);

    let psi = rotated_source_vector(&ebr, nmax);
    let dim = 4 * (nmax + 1);
    let joint = DMatrix::from_fn(dim, dim, |i, j| psi[i] * psi[j]);
    let corr_at_state = frob_inner(&ops.corr_objective, &joint);
    let pab = build_gammaAB_primal(&ops, &ebr, &stats, TruncationMode::InfiniteTruncated).unwrap();
    let sol_ab = solve(&pab, 1e-8).unwrap();
    assert!(
        sol_ab.primal_value() <= corr_at_state + 1e-7,
        "correlation bound {} over the state value {corr_at_state}",
        sol_ab.primal_value()
    );
    assert!(sol_ab.safe_value() <= corr_at_state + 1e-7);

    // Projecting the state onto the cutoff block and renormalizing gives
    // another physical reference point; the certified lower bound stays
    // below its correlation too.
    let nb = ops.n_cut() + 1;
    let mut proj = Vec::with_capacity(4 * nb);
    for y in 0..4 {
        for n in 0..nb {
            proj.push(psi[y * (nmax + 1) + n]);
        }
    }
    let norm2: f64 = proj.iter().map(|x| x * x).sum();
    let ops_block = FockOperatorSet::build(&det, &ebr, ops.n_cut()).unwrap();
    let joint_proj =
        DMatrix::from_fn(4 * nb, 4 * nb, |i, j| proj[i] * proj[j] / norm2);
    let corr_at_projected = frob_inner(&ops_block.corr_objective, &joint_proj);
    assert!(sol_ab.safe_value() <= corr_at_projected + 1e-6);
}

#[test]
fn sampled_statistics_agree_with_analytic_statistics() {
    use hetkey::channel::sample_stats;

    let det = DetectorModel::new(4.0, 8).unwrap();
    let ebr = EBRepresentation::qpsk(0.5).unwrap();
    let ch = ChannelModel::new(0.9, 0.01).unwrap();
    let analytic = expected_stats(&ch, &det, ebr.constellation());
    let sampled = sample_stats(400_000, 99, &ch, &det, ebr.constellation()).unwrap();
    let (v_hat, c_hat, _) = sampled.estimates().unwrap();
    assert_relative_eq!(v_hat, analytic.v(), max_relative = 5e-3);
    assert_relative_eq!(c_hat, analytic.c(), max_relative = 2e-2);
}
