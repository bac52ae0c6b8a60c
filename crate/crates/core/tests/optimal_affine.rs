//! The learned affine map beats PBDW on a space it was not aligned with.

use redinv::affine_opt::{build_problem, primal_dual_solve, PrimalDualOptions};
use redinv::forward::{greedy_reduced_basis, sample_training_set};
use redinv::pbdw::{max_with_index, reconstruction_errors, PbdwOperator};
use redinv::sensing::Dictionary;
use redinv::testbed;

#[test]
fn optimal_affine_beats_pbdw_on_misaligned_offset() {
    let model = testbed::misaligned_offset(255).unwrap();
    let space = model.space();
    let t = sample_training_set(&model, &[7, 7]).unwrap();
    let dict = Dictionary::uniform_averages(space, 10, 0.04).unwrap();
    let setup = dict.observation(space, &(0..10).collect::<Vec<_>>()).unwrap();
    let vn = greedy_reduced_basis(space, t.snapshots(), 5, 0.0).unwrap().basis;
    let pbdw = PbdwOperator::fit(space, &vn, &setup).unwrap();
    let pbdw_worst = max_with_index(&reconstruction_errors(space, |u| pbdw.estimate_state(u), &t)).0;

    let prob = build_problem(space, &t, &setup, &vn).unwrap();
    let opts = PrimalDualOptions {
        iters: 40_000,
        stall_tol: None,
        ..Default::default()
    };
    let res = primal_dual_solve(&prob, &opts).unwrap();
    let errs = reconstruction_errors(space, |u| res.map.estimate_state(u).unwrap(), &t);
    let worst = max_with_index(&errs).0;
    assert!(worst <= pbdw_worst, "{worst:.4e} vs {pbdw_worst:.4e}");
    assert!(res.history.windows(2).all(|w| w[1].best <= w[0].best));
}
