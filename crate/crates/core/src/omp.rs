//! Greedy selection of measurement functionals from a finite dictionary.
//!
//! Both algorithms grow `W_k = span{ω_1..ω_k}` until `β(V_n, W_k) ≥ β*`.
//! Collective OMP scores `Σ_i <φ_i - P_W φ_i, ω>²` over an orthonormal basis
//! of `V_n`; worst-case OMP scores `|<v_k - P_W v_k, ω>|` for the unit
//! `v_k ∈ V_n` worst captured by the current `W`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{inf_sup, orthonormalize, InnerProductSpace, OrthonormalBasis, Subspace};
use crate::sensing::Dictionary;

/// Relative tolerance under which two scores count as tied (lowest index wins).
pub const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct GreedyOptions {
    /// Target inf-sup value `β*`.
    pub beta_star: f64,
    /// Weakness parameter `κ ∈ (0, 1]`.
    pub kappa: f64,
    /// Budget on the total number of sensors (seed included).
    pub m_max: usize,
    /// Optional extra stop once `r_m` falls below this value; `β*` is then ignored.
    pub rm_target: Option<f64>,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            beta_star: 0.5,
            kappa: 1.0,
            m_max: 100,
            rm_target: None,
        }
    }
}

/// History of one greedy selection.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyRun {
    /// Dictionary indices, seed sensors first.
    pub selected: Vec<usize>,
    /// Number of leading entries of `selected` that were given as seed.
    pub seeded: usize,
    /// `r_k = Σ_i ‖φ_i - P_{W_k} φ_i‖²` after each sensor (seed included).
    pub rm_history: Vec<f64>,
    /// `β(V_n, W_k)` after each sensor.
    pub beta_history: Vec<f64>,
    pub kappa: f64,
    pub target: f64,
    /// True when the stop criterion was met within budget.
    pub reached: bool,
}

impl GreedyRun {
    pub fn m(&self) -> usize {
        self.selected.len()
    }

    pub fn final_beta(&self) -> f64 {
        self.beta_history.last().copied().unwrap_or(0.0)
    }

    /// Rows `(k, selected_index, location, r_k, beta_k)`.
    pub fn write_csv<W: Write>(&self, out: W, dict: &Dictionary) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["k", "selected_index", "location", "r_k", "beta_k"])?;
        for (k, &idx) in self.selected.iter().enumerate() {
            wtr.write_record([
                (k + 1).to_string(),
                idx.to_string(),
                format!("{:.12e}", dict.sensors()[idx].location),
                format!("{:.12e}", self.rm_history[k]),
                format!("{:.12e}", self.beta_history[k]),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Rule {
    Collective,
    WorstCase,
}

struct State<'a> {
    space: &'a InnerProductSpace,
    v: Subspace,
    dict: &'a Dictionary,
    w: OrthonormalBasis,
    residual: DMatrix<f64>,
    mask: Vec<bool>,
    run: GreedyRun,
}

impl<'a> State<'a> {
    fn new(
        space: &'a InnerProductSpace,
        vn: &Subspace,
        dict: &'a Dictionary,
        opts: &GreedyOptions,
    ) -> Result<Self> {
        space.check_subspace("omp", vn)?;
        if dict.representers().nrows() != space.dim() {
            return Err(Error::DimensionMismatch {
                op: "omp (dictionary)",
                expected: space.dim(),
                got: dict.representers().nrows(),
            });
        }
        if !(opts.kappa > 0.0 && opts.kappa <= 1.0) {
            return Err(Error::InvalidInput(format!("kappa must lie in (0, 1], got {}", opts.kappa)));
        }
        if !(opts.beta_star > 0.0 && opts.beta_star <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "beta_star must lie in (0, 1], got {}",
                opts.beta_star
            )));
        }
        if vn.dim() == 0 {
            return Err(Error::InvalidInput("reduced space is empty".into()));
        }
        let v = if vn.is_orthonormal() {
            vn.clone()
        } else {
            orthonormalize(space, vn)?
        };
        Ok(Self {
            space,
            residual: v.basis().clone(),
            v,
            dict,
            w: OrthonormalBasis::new(space.dim()),
            mask: vec![false; dict.len()],
            run: GreedyRun {
                selected: Vec::new(),
                seeded: 0,
                rm_history: Vec::new(),
                beta_history: Vec::new(),
                kappa: opts.kappa,
                target: opts.beta_star,
                reached: false,
            },
        })
    }

    fn rm(&self) -> f64 {
        (0..self.residual.ncols())
            .map(|i| {
                let r = self.residual.column(i).into_owned();
                self.space.inner(&r, &r)
            })
            .sum()
    }

    /// Adds member `idx`; returns `false` if it is already in `W` numerically.
    fn add(&mut self, idx: usize) -> Result<bool> {
        self.mask[idx] = true;
        let omega = self.dict.representers().column(idx).into_owned();
        if !self.w.push(self.space, &omega, 1e-10) {
            return Ok(false);
        }
        self.residual = self.w.residual_mat(self.v.basis());
        self.run.selected.push(idx);
        self.run.rm_history.push(self.rm());
        let beta = inf_sup(self.space, &self.v, &self.w.to_subspace())?.beta;
        self.run.beta_history.push(beta);
        Ok(true)
    }

    fn done(&self, opts: &GreedyOptions) -> bool {
        match opts.rm_target {
            Some(t) => self.run.rm_history.last().is_some_and(|&r| r < t),
            None => self.run.final_beta() >= opts.beta_star,
        }
    }
}

/// Index chosen by the (weak) argmax rule on nonnegative scores.
fn pick(scores: &[f64], mask: &[bool], kappa: f64) -> Option<usize> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(s, _)| *s)
        .fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let threshold = if kappa >= 1.0 {
        max * (1.0 - TIE_TOL)
    } else {
        kappa * kappa * max
    };
    scores
        .iter()
        .zip(mask)
        .position(|(s, &m)| !m && *s >= threshold)
}

fn run_greedy(
    rule: Rule,
    space: &InnerProductSpace,
    vn: &Subspace,
    dict: &Dictionary,
    seed: &[usize],
    opts: &GreedyOptions,
) -> Result<GreedyRun> {
    let mut st = State::new(space, vn, dict, opts)?;
    for &idx in seed {
        if idx >= dict.len() {
            return Err(Error::InvalidInput(format!("seed sensor {idx} out of range")));
        }
        if !st.add(idx)? {
            return Err(Error::Conditioning {
                first: idx,
                second: idx,
                overlap: 1.0,
            });
        }
    }
    st.run.seeded = st.run.selected.len();
    let functionals = dict.functionals();
    while !st.done(opts) && st.run.selected.len() < opts.m_max {
        let scores: Vec<f64> = match rule {
            Rule::Collective => {
                let inner = functionals.tr_mul(&st.residual);
                inner.row_iter().map(|r| r.norm_squared()).collect()
            }
            Rule::WorstCase => {
                let dir = if st.w.dim() == 0 {
                    st.v.column(0)
                } else {
                    let is = inf_sup(space, &st.v, &st.w.to_subspace())?;
                    st.v.combine(&is.direction)
                };
                let r = st.w.residual(&dir);
                functionals.tr_mul(&r).iter().map(|s| s * s).collect()
            }
        };
        let Some(idx) = pick(&scores, &st.mask, opts.kappa) else {
            log::warn!("greedy selection stalled: all remaining dictionary scores vanish");
            break;
        };
        st.add(idx)?;
        if st.mask.iter().all(|&m| m) {
            break;
        }
    }
    st.run.reached = st.done(opts);
    Ok(st.run)
}

/// Collective OMP from an empty observation space.
pub fn collective_omp(
    space: &InnerProductSpace,
    vn: &Subspace,
    dict: &Dictionary,
    opts: &GreedyOptions,
) -> Result<GreedyRun> {
    run_greedy(Rule::Collective, space, vn, dict, &[], opts)
}

/// Worst-case OMP from an empty observation space; the first direction is `φ_1`.
pub fn worst_case_omp(
    space: &InnerProductSpace,
    vn: &Subspace,
    dict: &Dictionary,
    opts: &GreedyOptions,
) -> Result<GreedyRun> {
    run_greedy(Rule::WorstCase, space, vn, dict, &[], opts)
}

/// Worst-case OMP continuing from the sensors in `seed`.
pub fn worst_case_omp_from(
    space: &InnerProductSpace,
    vn: &Subspace,
    dict: &Dictionary,
    seed: &[usize],
    opts: &GreedyOptions,
) -> Result<GreedyRun> {
    run_greedy(Rule::WorstCase, space, vn, dict, seed, opts)
}

/// `J(V_n) = ∫₀¹ (Σ_k |φ_k''|²)^{1/2}` for `φ_k = √2/(πk) sin(kπx)`, by
/// 3-point Gauss on 10⁴ panels.
pub fn compute_j_fourier(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("J(V_n) needs n >= 1".into()));
    }
    const PANELS: usize = 10_000;
    let nodes = [
        (-0.774_596_669_241_483_4, 5.0 / 9.0),
        (0.0, 8.0 / 9.0),
        (0.774_596_669_241_483_4, 5.0 / 9.0),
    ];
    let integrand = |x: f64| -> f64 {
        (1..=n)
            .map(|k| {
                let kp = k as f64 * PI;
                let d2 = 2f64.sqrt() * kp * (kp * x).sin();
                d2 * d2
            })
            .sum::<f64>()
            .sqrt()
    };
    let h = 1.0 / PANELS as f64;
    let total = (0..PANELS)
        .map(|p| {
            let mid = (p as f64 + 0.5) * h;
            nodes
                .iter()
                .map(|(xi, w)| w * integrand(mid + 0.5 * h * xi))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum();
    Ok(total)
}

/// `σ_m = max_{v∈V_n, ‖v‖=1} ‖v - P_W v‖ = (1 - β²)^{1/2}`.
pub fn sigma_from_beta(beta: f64) -> f64 {
    (1.0 - beta * beta).max(0.0).sqrt()
}

/// `Σ_i ‖φ_i - P_W φ_i‖²` for an orthonormal `V_n` and an observation basis.
pub fn residual_energy(space: &InnerProductSpace, vn: &Subspace, w: &OrthonormalBasis) -> f64 {
    let r = w.residual_mat(vn.basis());
    (0..r.ncols())
        .map(|i| {
            let c: DVector<f64> = r.column(i).into_owned();
            space.inner(&c, &c)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::h10_space;
    use crate::sensing::riesz_point_eval;
    use crate::testbed::fourier_space;

    #[test]
    fn j_of_one_is_two_root_two() {
        assert!((compute_j_fourier(1).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-9);
        for n in 1..=20 {
            assert!(compute_j_fourier(n).unwrap() >= (n as f64).sqrt());
        }
    }

    #[test]
    fn j_grows_like_n_three_halves() {
        let r10 = compute_j_fourier(10).unwrap() / 10f64.powf(1.5);
        for n in 5..=20 {
            let r = compute_j_fourier(n).unwrap() / (n as f64).powf(1.5);
            assert!(r >= 0.8 * r10 && r <= 1.2 * r10, "n = {n}: ratio {r}");
        }
    }

    #[test]
    fn self_selection_when_phi_is_in_the_dictionary() {
        let space = h10_space(63);
        let phi = riesz_point_eval(&space, 0.3).unwrap();
        let dict = Dictionary::new(
            &space,
            vec![0.1, 0.3, 0.6].into_iter().map(crate::sensing::Sensor::point).collect(),
        )
        .unwrap();
        let v = Subspace::from_vectors(63, &[phi]);
        let run = collective_omp(&space, &v, &dict, &GreedyOptions::default()).unwrap();
        assert_eq!(run.selected, vec![1]);
        assert!(run.rm_history[0] <= 1e-12);
        assert!((run.beta_history[0] - 1.0).abs() < 1e-12);
        assert!(run.reached);
    }

    #[test]
    fn n_one_rules_coincide() {
        let space = h10_space(127);
        let dict = Dictionary::uniform_points(&space, 63).unwrap();
        let v = fourier_space(127, 3).unwrap().leading(1);
        let opts = GreedyOptions {
            beta_star: 0.999,
            m_max: 8,
            ..Default::default()
        };
        let a = collective_omp(&space, &v, &dict, &opts).unwrap();
        let b = worst_case_omp(&space, &v, &dict, &opts).unwrap();
        assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn histories_are_consistent() {
        let space = h10_space(127);
        let dict = Dictionary::uniform_points(&space, 63).unwrap();
        let v = fourier_space(127, 4).unwrap();
        let opts = GreedyOptions {
            beta_star: 0.9,
            m_max: 40,
            ..Default::default()
        };
        for run in [
            collective_omp(&space, &v, &dict, &opts).unwrap(),
            worst_case_omp(&space, &v, &dict, &opts).unwrap(),
        ] {
            assert!(run.rm_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert!(run.beta_history.iter().all(|b| (0.0..=1.0).contains(b)));
            let mut s = run.selected.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), run.selected.len());
            for (r, b) in run.rm_history.iter().zip(&run.beta_history) {
                assert!(sigma_from_beta(*b) <= r.sqrt() + 1e-10);
                if *r <= 1.0 - 0.9f64.powi(2) {
                    assert!(*b >= 0.9 - 1e-12);
                }
            }
            assert!(run.reached);
        }
    }

    #[test]
    fn weak_rule_accepts_first_good_candidate() {
        let scores = [0.1, 0.5, 0.9, 1.0];
        let mask = [false; 4];
        assert_eq!(pick(&scores, &mask, 1.0), Some(3));
        assert_eq!(pick(&scores, &mask, 0.7), Some(1));
        assert_eq!(pick(&scores, &mask, 0.8), Some(2));
        assert_eq!(pick(&[1.0, 1.0 - 1e-12], &[false, false], 1.0), Some(0));
        assert_eq!(pick(&[1.0, 1.0], &[true, false], 1.0), Some(1));
        assert_eq!(pick(&[0.0, 0.0], &[false, false], 1.0), None);
    }
}
