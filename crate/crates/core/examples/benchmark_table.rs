//! Compare every estimator on held-out parameters next to the δ̃_σ benchmark.

use redinv::affine_opt::PrimalDualOptions;
use redinv::benchmarks::{compare_estimators, held_out_grid, CompareConfig};
use redinv::forward::{sample_training_set, training_set_from};
use redinv::piecewise::SplitStrategy;
use redinv::sensing::Dictionary;
use redinv::testbed;

fn main() -> redinv::Result<()> {
    let model = testbed::two_branch(255)?;
    let space = model.space();
    let train = sample_training_set(&model, &[65])?;
    let held = training_set_from(&model, held_out_grid(model.param_box(), &[40])?)?;
    let dict = Dictionary::uniform_points(space, 4)?;
    let setup = dict.observation(space, &[0, 1, 2, 3])?;
    let cfg = CompareConfig {
        n: 3,
        sigma: 5e-3,
        budget: 64,
        strategy: SplitStrategy::FullDyadic,
        primal_dual: PrimalDualOptions::default(),
        sigmas: vec![0.0, 1e-3, 1e-2],
        width_order: 5,
    };
    let report = compare_estimators(&model, &train, &held, &setup, &cfg)?;
    report.write_csv(std::io::stdout())?;
    Ok(())
}
