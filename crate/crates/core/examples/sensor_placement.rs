//! Greedy sensor placement for a Fourier reduced space: collective and
//! worst-case OMP against the J(V_n) rate.

use redinv::forward::h10_space;
use redinv::omp::{collective_omp, compute_j_fourier, worst_case_omp, GreedyOptions};
use redinv::sensing::Dictionary;
use redinv::testbed;

fn main() -> redinv::Result<()> {
    let n = 4;
    let space = h10_space(511);
    let dict = Dictionary::uniform_points(&space, 511)?;
    let vn = testbed::fourier_space(511, n)?;
    let j = compute_j_fourier(n)?;
    let opts = GreedyOptions {
        beta_star: 0.7,
        ..Default::default()
    };
    let c = collective_omp(&space, &vn, &dict, &opts)?;
    let w = worst_case_omp(&space, &vn, &dict, &opts)?;
    println!("J(V_{n}) = {j:.4}");
    for (name, run) in [("collective", &c), ("worst-case", &w)] {
        println!("{name}: m = {}, beta = {:.4}, reached = {}", run.m(), run.final_beta(), run.reached);
        for (k, (rm, beta)) in run.rm_history.iter().zip(&run.beta_history).enumerate() {
            println!("  m = {:>2}  r_m = {rm:.4e}  J^2/(m+1) = {:.4e}  beta = {beta:.4}", k + 1, j * j / (k + 2) as f64);
        }
    }
    c.write_csv(std::io::stdout(), &dict)?;
    Ok(())
}
