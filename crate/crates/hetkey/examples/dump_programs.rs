//! Writes the two bound programs at the reference channel point to
//! plain-text files, for cross-checking against an external conic
//! solver. See `tools/cross_validate.py` for a consumer.
//!
//! Usage: `cargo run --example dump_programs -- <output-dir>`

use hetkey::channel::{expected_stats, ChannelModel};
use hetkey::fock::{DetectorModel, FockOperatorSet};
use hetkey::protocol::EBRepresentation;
use hetkey::sdp::{
    build_dual, build_gammaAB_primal, build_gammaB_primal, dump_problem, solve, TruncationMode,
};

fn main() {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| ".".to_string());
    std::fs::create_dir_all(&dir).expect("create output directory");

    let det = DetectorModel::new(7.0, 16).unwrap();
    let ebr = EBRepresentation::qpsk(0.5).unwrap();
    let ops = FockOperatorSet::build(&det, &ebr, 98).unwrap();
    let ch = ChannelModel::new(0.9, 0.001).unwrap();
    let stats = expected_stats(&ch, &det, ebr.constellation());

    let prog_b = build_gammaB_primal(&ops, &stats, TruncationMode::InfiniteTruncated).unwrap();
    let prog_ab =
        build_gammaAB_primal(&ops, &ebr, &stats, TruncationMode::InfiniteTruncated).unwrap();

    // The matrix-variable originals and their scalar-variable duals; an
    // external solver handles the dual side of the large program far
    // more cheaply, and strong duality makes the optima interchangeable.
    let dual_b = build_dual(&prog_b).unwrap();
    let dual_ab = build_dual(&prog_ab).unwrap();
    for (name, prog) in [
        ("photon_bound_eta09.sdp", &prog_b),
        ("correlation_bound_eta09.sdp", &prog_ab),
        ("photon_bound_eta09_dual.sdp", &dual_b),
        ("correlation_bound_eta09_dual.sdp", &dual_ab),
    ] {
        let path = format!("{dir}/{name}");
        std::fs::write(&path, dump_problem(prog)).expect("write program");
        println!("wrote {path}");
    }

    for (label, prog) in [("photon", &prog_b), ("correlation", &prog_ab)] {
        let sol = solve(prog, 1e-8).unwrap();
        println!(
            "{label}: optimal {:.12e}, certified {:.12e}, gap {:.3e}",
            sol.primal_value(),
            sol.safe_value(),
            sol.gap()
        );
    }
}
