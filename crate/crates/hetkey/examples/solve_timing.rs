//! Rough timing probe for the full-scale programs.

use std::time::Instant;

use hetkey::channel::{expected_stats, ChannelModel};
use hetkey::fock::{DetectorModel, FockOperatorSet};
use hetkey::protocol::EBRepresentation;
use hetkey::sdp::{build_gammaAB_primal, build_gammaB_primal, solve, TruncationMode};

fn main() {
    let det = DetectorModel::new(7.0, 16).unwrap();
    let ebr = EBRepresentation::qpsk(0.5).unwrap();
    let ch = ChannelModel::new(0.9, 0.001).unwrap();
    let stats = expected_stats(&ch, &det, ebr.constellation());
    println!(
        "v={:.12} c={:.12} p0={:.3e}",
        stats.v(),
        stats.c(),
        stats.p0()
    );
    for nmax in [98usize, 109] {
        let t0 = Instant::now();
        let ops = FockOperatorSet::build(&det, &ebr, nmax).unwrap();
        println!("nmax={nmax}: operators in {:.2?}", t0.elapsed());

        let t0 = Instant::now();
        let p = build_gammaB_primal(&ops, &stats, TruncationMode::InfiniteTruncated).unwrap();
        let sol = solve(&p, 1e-8).unwrap();
        println!(
            "  photon dim={} value={:.10} status={:?} iters={} gap={:.2e} in {:.2?}",
            p.dim(),
            sol.primal_value(),
            sol.status(),
            sol.iterations(),
            sol.gap(),
            t0.elapsed()
        );

        let t0 = Instant::now();
        let p = build_gammaAB_primal(&ops, &ebr, &stats, TruncationMode::InfiniteTruncated).unwrap();
        let sol = solve(&p, 1e-8).unwrap();
        println!(
            "  corr   dim={} value={:.10} status={:?} iters={} gap={:.2e} in {:.2?}",
            p.dim(),
            sol.primal_value(),
            sol.status(),
            sol.iterations(),
            sol.gap(),
            t0.elapsed()
        );
    }
}
