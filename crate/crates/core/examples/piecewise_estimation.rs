//! Piecewise affine estimation on a parameter box split until every cell
//! satisfies μ_k ε_k ≤ σ, with cells picked by the residual surrogate.

use redinv::forward::sample_training_set;
use redinv::piecewise::{build_family, Criterion, Selection, SplitStrategy};
use redinv::sensing::Dictionary;
use redinv::testbed;

fn main() -> redinv::Result<()> {
    let model = testbed::two_branch(255)?;
    let space = model.space();
    let t = sample_training_set(&model, &[129])?;
    let dict = Dictionary::uniform_points(space, 4)?;
    let setup = dict.observation(space, &[0, 1, 2, 3])?;
    let fam = build_family(&model, &t, &setup, Criterion::Sigma(5e-3), SplitStrategy::FullDyadic, 64)?;
    println!("{} cells, admissible = {}", fam.len(), fam.admissible());
    for (k, c) in fam.cells.iter().enumerate() {
        println!(
            "  cell {k}: [{:+.4}, {:+.4}]  n = {}  mu eps = {:.3e}",
            c.param_box.lo[0], c.param_box.hi[0], c.chosen_n, c.tau
        );
    }
    for y in [-0.9, -0.31, 0.02, 0.55] {
        let u = model.solve(&[y])?;
        let est = fam.estimate_state(&model, &u, Selection::Surrogate)?;
        println!("y = {y:+.2}: cell {}  error {:.3e}", est.cell, space.distance(&u, &est.state));
    }
    Ok(())
}
