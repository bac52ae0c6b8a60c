//! Learn the optimal affine recovery map with primal-dual iterations and
//! compare with PBDW on the same reduced space.

use redinv::affine_opt::{build_problem, primal_dual_solve, subgradient_baseline, PrimalDualOptions};
use redinv::forward::{greedy_reduced_basis, sample_training_set};
use redinv::pbdw::{max_with_index, reconstruction_errors, PbdwOperator};
use redinv::sensing::Dictionary;
use redinv::testbed;

fn main() -> redinv::Result<()> {
    let model = testbed::misaligned_offset(255)?;
    let space = model.space();
    let t = sample_training_set(&model, &[7, 7])?;
    let dict = Dictionary::uniform_averages(space, 10, 0.04)?;
    let setup = dict.observation(space, &(0..10).collect::<Vec<_>>())?;
    let vn = greedy_reduced_basis(space, t.snapshots(), 5, 0.0)?.basis;

    let pbdw = PbdwOperator::fit(space, &vn, &setup)?;
    let pbdw_worst = max_with_index(&reconstruction_errors(space, |u| pbdw.estimate_state(u), &t)).0;

    let prob = build_problem(space, &t, &setup, &vn)?;
    let opts = PrimalDualOptions {
        iters: 40_000,
        stall_tol: None,
        ..Default::default()
    };
    let res = primal_dual_solve(&prob, &opts)?;
    for s in res.history.iter().step_by(400) {
        println!("iter {:>6}: objective {:.4e}", s.iteration, s.best);
    }
    let errs = reconstruction_errors(space, |u| res.map.estimate_state(u).expect("map has a frame"), &t);
    let sg = subgradient_baseline(&prob, opts.iters, None)?;
    println!("pbdw worst error          {pbdw_worst:.4e}");
    println!("optimal affine worst error {:.4e}", max_with_index(&errs).0);
    println!("subgradient objective      {:.4e} vs primal-dual {:.4e}", sg.last().unwrap_or(&f64::NAN), res.best_objective);
    Ok(())
}
