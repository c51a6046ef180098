mod common;

use common::{batch_loss, load_adjoints, random_setup, MODEL_FLOOR};
use ridde_core::model::{Ablation, ForwardConfig};
use ridde_core::numerics::{grad_check, GradCheckConfig, Stencil};

fn check(seed: u64, ablation: Ablation, rho: f64) -> ridde_core::numerics::GradCheckReport {
    let (mut params, kb, windows) = random_setup(seed, 50);
    let batch = &windows[..3];
    let cfg = ForwardConfig {
        k: 3,
        ablation,
        temperature: 0.5,
        ..ForwardConfig::default()
    };
    load_adjoints(&mut params, &kb, batch, &cfg, rho);
    let gc = GradCheckConfig {
        step: 1e-3,
        abs_floor: MODEL_FLOOR,
        stencil: Stencil::FivePoint,
        ..GradCheckConfig::default()
    };
    grad_check(&mut params, |p| batch_loss(p, &kb, batch, &cfg, rho), gc).unwrap()
}

#[test]
fn full_graph_matches_finite_differences() {
    for seed in 0..3 {
        let r = check(seed, Ablation::Full, 0.5);
        assert!(r.passes(1e-4), "seed {seed}: {:?} worst {:?} {:?}", r.max_rel_err, r.worst, r.worst_values);
    }
}

#[test]
fn ablated_graphs_match_finite_differences() {
    for ablation in [Ablation::NoIdd, Ablation::NoRetrieval] {
        let r = check(11, ablation, 0.5);
        assert!(r.passes(1e-4), "{ablation}: {:?} worst {:?}", r.max_rel_err, r.worst);
    }
}
