//! The two-state counterexample channel pinned at first build.

use matrix_transfer::channel::{check_isometry, ChannelSpec};
use matrix_transfer::constraints::check_constraint;
use matrix_transfer::memory::memory_table;
use matrix_transfer::optimizer::OptimizerConfig;
use matrix_transfer::qcore::DensityMatrix;
use matrix_transfer::scenarios::{
    example_setup, make_two_state_setup, search_two_state_nondiagonal_counterexample, COUNTEREXAMPLE_THRESHOLD,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Setup {
    rho: DensityMatrix,
    chi: DensityMatrix,
}

#[derive(Deserialize)]
struct Golden {
    setup: Setup,
    dc: usize,
    seed: u64,
    restarts: usize,
    recorded_memory_12: f64,
    channel: ChannelSpec,
}

fn golden() -> Golden {
    let text = include_str!("golden/two_state_counterexample.json");
    serde_json::from_str(text).unwrap()
}

#[test]
fn pinned_channel_still_transfers_and_remembers() {
    let g = golden();
    let setup = make_two_state_setup(g.setup.rho, g.setup.chi).unwrap();
    assert_eq!(setup, example_setup());
    assert_eq!(g.channel.dc(), g.dc);
    let tc = setup.nondiagonal_constraint();
    assert!(check_constraint(&g.channel, &tc).unwrap() <= 1e-8);
    assert!(check_isometry(&g.channel).max() <= 1e-8);
    let memory = memory_table(&g.channel).entry(0, 1);
    assert!(memory >= g.recorded_memory_12 - 1e-6);
    assert!(memory >= COUNTEREXAMPLE_THRESHOLD);
}

#[test]
fn search_reproduces_the_pinned_value() {
    let g = golden();
    let cfg = OptimizerConfig {
        dc: g.dc,
        seed: g.seed,
        restarts: g.restarts,
        ..OptimizerConfig::default()
    };
    let res = search_two_state_nondiagonal_counterexample(&example_setup(), &cfg).unwrap();
    assert!(res.achieved >= g.recorded_memory_12 - 1e-6, "{}", res.achieved);
    assert!(res.constraint_residual <= 1e-8 && res.isometry_residual <= 1e-8);
    let again = search_two_state_nondiagonal_counterexample(&example_setup(), &cfg).unwrap();
    assert_eq!(res, again);
}
