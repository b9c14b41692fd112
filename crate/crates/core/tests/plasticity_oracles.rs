mod common;

use proptest::prelude::*;
use rewire::exec::Exec;
use rewire::plasticity::{Stdp, StdpParams};
use rewire::ragged::SynapseVars;
use rewire::rng::CounterRng;

#[test]
fn stdp_traces_match_all_pairs_sums() {
    for seed in 0..4 {
        let e = common::stdp_max_error(5, 1000, seed, &Exec::serial());
        assert!(e < 1e-10, "seed {seed}: {e}");
    }
    assert!(common::stdp_max_error(5, 1000, 9, &Exec::with_workers(2)) < 1e-10);
}

#[test]
fn same_step_spikes_count_as_causal() {
    let p = StdpParams { clamp: false, ..StdpParams::default() };
    let m = common::full_matrix(1, 1);
    let t = m.remap_transpose();
    let mut vars = SynapseVars::new(&m, &["g"]);
    let mut s = Stdp::new(1, 1, p);
    s.step(&m, &t, vars.plane_mut(0), &[0], &[0], &Exec::serial()).unwrap();
    assert!((vars.plane(0)[0] - p.a_plus()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn clamped_weights_stay_in_bounds(seed in any::<u64>(), rate in 0.01f64..0.5, start in 0.0f64..0.2) {
        let p = StdpParams::default();
        let m = common::full_matrix(4, 4);
        let t = m.remap_transpose();
        let mut vars = SynapseVars::new(&m, &["g"]);
        vars.plane_mut(0).fill(start);
        let mut s = Stdp::new(4, 4, p);
        let mut rng = CounterRng::keyed(seed, 12, 0, 0);
        let pre = common::spike_trains(4, 300, rate, &mut rng);
        let post = common::spike_trains(4, 300, rate, &mut rng);
        for k in 0..300 {
            s.step(&m, &t, vars.plane_mut(0), &pre[k], &post[k], &Exec::serial()).unwrap();
            for (i, sl, _) in m.edges() {
                let g = vars.plane(0)[m.index(i, sl)];
                prop_assert!((p.w_min..=p.w_max()).contains(&g), "{g}");
            }
        }
    }
}

#[test]
fn eligibility_recursion_matches_unrolled_sums() {
    for seed in 0..3 {
        let e = common::eprop_max_error(100, seed);
        assert!(e < 1e-10, "seed {seed}: {e}");
    }
}

#[test]
fn output_gradients_match_finite_differences() {
    for seed in 0..3 {
        let e = common::output_grad_fd_error(seed);
        assert!(e < 1e-5, "seed {seed}: {e}");
    }
}
