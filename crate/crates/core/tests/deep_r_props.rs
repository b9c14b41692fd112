mod common;

use rewire::exec::Exec;

#[test]
fn rewiring_conserves_synapses() {
    let mut m = common::deep_r_model(128, 0.05, 3, Exec::serial());
    let run = common::deep_r_cycles(&mut m, 30, 3).unwrap();
    assert!(run.removed > 0);
    assert_eq!(run.added_per_pre.iter().sum::<f64>() as u64, run.removed);
}

#[test]
fn formations_spread_uniformly_over_rows() {
    let mut m = common::deep_r_model(64, 0.2, 5, Exec::serial());
    let run = common::deep_r_cycles(&mut m, 60, 5).unwrap();
    let chi2 = common::chi_square_uniform(&run.added_per_pre);
    let bound = common::chi_square_bound(63);
    assert!(chi2 < bound, "chi2 {chi2} over {bound} with {} formations", run.removed);
}

#[test]
fn worker_count_does_not_change_rewiring() {
    let fingerprint = |workers| {
        let mut m = common::deep_r_model(96, 0.1, 8, Exec::with_workers(workers));
        common::deep_r_cycles(&mut m, 10, 8).unwrap();
        let p = m.projection_by_name("p").unwrap();
        let edges: Vec<(usize, usize, u64)> =
            p.matrix().edges().map(|(i, s, j)| (i, j, p.vars().plane(0)[p.matrix().index(i, s)].to_bits())).collect();
        edges
    };
    assert_eq!(fingerprint(1), fingerprint(3));
}
