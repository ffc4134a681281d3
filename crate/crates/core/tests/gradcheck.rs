mod common;

use common::{net_gradient_check, op_gradient_suite, GRAD_TOL};
use fusenet::zoo::{FusionStrategy, Modality, NetKind, StreamConfig};

#[test]
fn every_op_matches_finite_differences() {
    for r in op_gradient_suite(11) {
        assert!(r.passed(), "{}: worst {:.3e} at {} ({} probes)", r.name, r.worst, r.worst_at, r.probes);
    }
}

#[test]
fn every_network_matches_finite_differences() {
    let cfg = StreamConfig::desk_32(4);
    let mut kinds = vec![NetKind::Unimodal(Modality::Image)];
    kinds.extend(FusionStrategy::ALL.map(NetKind::Fusion));
    for (i, kind) in kinds.into_iter().enumerate() {
        let r = net_gradient_check(kind, &cfg, 100 + i as u64);
        assert!(r.passed(), "{}: worst {:.3e} > {GRAD_TOL} at {}", r.name, r.worst, r.worst_at);
    }
}
