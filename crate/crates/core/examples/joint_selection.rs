//! Joint selection of the reduced space and the sensors: the nested greedy
//! with a stability floor and GEIM.

use redinv::forward::sample_training_set;
use redinv::joint::{geim, nested_greedy};
use redinv::sensing::Dictionary;
use redinv::testbed;

fn main() -> redinv::Result<()> {
    let model = testbed::rotating_layers(255)?;
    let space = model.space();
    let t = sample_training_set(&model, &[9, 9])?;
    let dict = Dictionary::uniform_points(space, 63)?;

    let nested = nested_greedy(space, &t, &dict, 0.7, 1e-4, 8, 40)?;
    println!("nested greedy: {:?}", nested.status);
    for n in 0..nested.n() {
        println!(
            "  n = {}  m(n) = {:>2}  err = {:.3e}  beta = {:.3}",
            n + 1,
            nested.m_of_n[n],
            nested.err_history[n + 1],
            nested.beta_history[n]
        );
    }

    let g = geim(space, &t, &dict, 8, 1e-4)?;
    println!("geim: {:?}", g.status);
    for n in 0..g.n() {
        println!("  n = m = {}  err = {:.3e}  beta = {:.3}", n + 1, g.err_history[n + 1], g.beta_history[n]);
    }
    Ok(())
}
