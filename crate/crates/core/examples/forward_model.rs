//! Solve the two-parameter diffusion problem, sample a training set and
//! compare the POD width proxy with a greedy reduced basis.

use redinv::forward::{greedy_reduced_basis, pod_width_proxy, sample_training_set};
use redinv::testbed;

fn main() -> redinv::Result<()> {
    let model = testbed::rotating_layers(255)?;
    let u = model.solve(&[0.3, -0.7])?;
    println!(
        "u(0.3, -0.7): |u| = {:.4e}, residual = {:.2e}",
        model.space().norm(&u),
        model.residual_norm(&u, &[0.3, -0.7])
    );

    let t = sample_training_set(&model, &[9, 9])?;
    println!("training set: {} snapshots", t.len());
    let width = pod_width_proxy(model.space(), &t, 8)?;
    let greedy = greedy_reduced_basis(model.space(), t.snapshots(), 8, 0.0)?;
    println!("{:>3} {:>12} {:>12}", "n", "pod worst", "greedy");
    for n in 0..=8 {
        println!("{n:>3} {:>12.4e} {:>12.4e}", width.worst[n], greedy.errors[n]);
    }
    Ok(())
}
