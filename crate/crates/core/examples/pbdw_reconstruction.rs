//! Linear PBDW from point sensors: stability, training error and the
//! error bound on fresh parameters.

use redinv::forward::{greedy_reduced_basis, sample_training_set};
use redinv::linalg::OrthonormalBasis;
use redinv::pbdw::{worst_case_error, PbdwOperator};
use redinv::sensing::Dictionary;
use redinv::testbed;

fn main() -> redinv::Result<()> {
    let model = testbed::elliptic(255, 4)?;
    let space = model.space();
    let t = sample_training_set(&model, &[4, 4, 4, 4])?;
    let dict = Dictionary::uniform_points(space, 8)?;
    let setup = dict.observation(space, &(0..8).collect::<Vec<_>>())?;
    let greedy = greedy_reduced_basis(space, t.snapshots(), 5, 0.0)?;

    for n in 1..=greedy.basis.dim() {
        let vn = greedy.basis.leading(n);
        let op = PbdwOperator::fit(space, &vn, &setup)?;
        let (worst, j) = worst_case_error(space, &op, &t);
        println!("n = {n}: beta = {:.4}, worst training error {worst:.3e} at y = {:?}", op.beta(), t.params()[j]);
    }

    let vn = greedy.basis.leading(3);
    let op = PbdwOperator::fit(space, &vn, &setup)?;
    let proj = OrthonormalBasis::from_subspace(space, &vn)?;
    for y in [[0.1, -0.9, 0.5, 0.0], [-0.6, 0.6, -0.2, 0.8]] {
        let u = model.solve(&y)?;
        let err = space.distance(&u, &op.estimate_state(&u));
        let bound = op.mu() * space.norm(&proj.residual(&u));
        println!("y = {y:?}: error {err:.3e} <= mu * dist(u, V_3) = {bound:.3e}");
    }
    Ok(())
}
