//! Joint selection of the reduced space and the sensors.
//!
//! Both procedures add the training snapshot worst reconstructed by the
//! current PBDW map. The nested greedy then restores `β ≥ β_lower` with
//! worst-case OMP; GEIM adds exactly one sensor, the dictionary member best
//! aligned with the new snapshot's reconstruction residual.

use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::forward::TrainingSet;
use crate::linalg::{InnerProductSpace, OrthonormalBasis, Subspace, RANK_TOL};
use crate::omp::{worst_case_omp_from, GreedyOptions};
use crate::pbdw::{max_with_index, reconstruction_errors, PbdwOperator};
use crate::sensing::Dictionary;

/// How a joint run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointStatus {
    /// Training error fell below `ε_stop`.
    Converged,
    /// `n_max` steps completed.
    BudgetReached,
    /// The worst snapshot is already in `V_{n-1}`.
    ManifoldCaptured,
    /// Worst-case OMP could not restore `β ≥ β_lower` within its sensor budget.
    SensorBudgetExhausted,
}

#[derive(Clone, Debug)]
pub struct JointRun {
    /// Snapshot index added at each step.
    pub u_selected: Vec<usize>,
    /// Sensors added at each step (`𝒪_n`).
    pub sensor_groups: Vec<Vec<usize>>,
    /// Cumulative sensor count `m(n)` after each step.
    pub m_of_n: Vec<usize>,
    /// `err_history[n]` = max training error of `(V_n, W_{m(n)})`; entry 0 is `max ‖u‖`.
    pub err_history: Vec<f64>,
    /// `β(V_n, W_{m(n)})` after each step.
    pub beta_history: Vec<f64>,
    /// Orthonormal basis of the final `V_n`.
    pub basis: Subspace,
    pub status: JointStatus,
}

impl JointRun {
    pub fn n(&self) -> usize {
        self.u_selected.len()
    }

    /// All selected sensors in order.
    pub fn sensors(&self) -> Vec<usize> {
        self.sensor_groups.iter().flatten().copied().collect()
    }

    /// Rows `(n, snapshot_index, new_sensor_indices, m_of_n, err, beta)`; sensor lists are `;`-separated.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["n", "snapshot_index", "new_sensor_indices", "m_of_n", "err", "beta"])?;
        for k in 0..self.n() {
            let group: Vec<String> = self.sensor_groups[k].iter().map(|i| i.to_string()).collect();
            wtr.write_record([
                (k + 1).to_string(),
                self.u_selected[k].to_string(),
                group.join(";"),
                self.m_of_n[k].to_string(),
                format!("{:.12e}", self.err_history[k + 1]),
                format!("{:.12e}", self.beta_history[k]),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

struct Progress {
    v: OrthonormalBasis,
    sensors: Vec<usize>,
    op: Option<PbdwOperator>,
    run: JointRun,
}

impl Progress {
    fn new(space: &InnerProductSpace, t: &TrainingSet) -> Self {
        let norms: Vec<f64> = (0..t.len()).map(|j| space.norm(&t.snapshot(j))).collect();
        let e0 = norms.iter().cloned().fold(0.0, f64::max);
        Self {
            v: OrthonormalBasis::new(space.dim()),
            sensors: Vec::new(),
            op: None,
            run: JointRun {
                u_selected: Vec::new(),
                sensor_groups: Vec::new(),
                m_of_n: Vec::new(),
                err_history: vec![e0],
                beta_history: Vec::new(),
                basis: Subspace::zero(space.dim()),
                status: JointStatus::BudgetReached,
            },
        }
    }

    /// Current reconstruction `A_{n-1}(P_W u)`; zero before the first step.
    fn estimate(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.op {
            Some(op) => op.estimate_state(u),
            None => DVector::zeros(u.len()),
        }
    }

    fn errors(&self, space: &InnerProductSpace, t: &TrainingSet) -> Vec<f64> {
        reconstruction_errors(space, |u| self.estimate(u), t)
    }

    fn finish(mut self, status: JointStatus) -> JointRun {
        self.run.basis = self.v.to_subspace();
        self.run.status = status;
        self.run
    }
}

fn check_inputs(space: &InnerProductSpace, t: &TrainingSet, dict: &Dictionary) -> Result<()> {
    if t.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if t.snapshots().nrows() != space.dim() || dict.representers().nrows() != space.dim() {
        return Err(Error::DimensionMismatch {
            op: "joint",
            expected: space.dim(),
            got: t.snapshots().nrows().min(dict.representers().nrows()),
        });
    }
    Ok(())
}

/// Nested greedy: snapshot selection with sensor augmentation keeping `β ≥ β_lower`.
///
/// `m_max` caps the total number of sensors used by the inner worst-case OMP.
pub fn nested_greedy(
    space: &InnerProductSpace,
    t: &TrainingSet,
    dict: &Dictionary,
    beta_lower: f64,
    eps_stop: f64,
    n_max: usize,
    m_max: usize,
) -> Result<JointRun> {
    check_inputs(space, t, dict)?;
    if !(beta_lower > 0.0 && beta_lower < 1.0) {
        return Err(Error::InvalidInput(format!("beta_lower must lie in (0, 1), got {beta_lower}")));
    }
    let mut p = Progress::new(space, t);
    let mut errors = p.errors(space, t);
    loop {
        let (worst, j) = max_with_index(&errors);
        if worst < eps_stop {
            return Ok(p.finish(JointStatus::Converged));
        }
        if p.run.n() >= n_max {
            return Ok(p.finish(JointStatus::BudgetReached));
        }
        if !p.v.push(space, &t.snapshot(j), RANK_TOL) {
            return Ok(p.finish(JointStatus::ManifoldCaptured));
        }
        let vn = p.v.to_subspace();
        let w_now = if p.sensors.is_empty() {
            Subspace::zero(space.dim())
        } else {
            dict.observation(space, &p.sensors)?.w_subspace()
        };
        let beta_now = crate::linalg::inf_sup_beta(space, &vn, &w_now)?;
        let mut group = Vec::new();
        if beta_now < beta_lower {
            let opts = GreedyOptions {
                beta_star: beta_lower,
                kappa: 1.0,
                m_max,
                rm_target: None,
            };
            let omp = worst_case_omp_from(space, &vn, dict, &p.sensors, &opts)?;
            group = omp.selected[omp.seeded..].to_vec();
            p.sensors.extend(&group);
            if !omp.reached {
                p.run.u_selected.push(j);
                p.run.sensor_groups.push(group);
                p.run.m_of_n.push(p.sensors.len());
                p.run.beta_history.push(omp.final_beta());
                p.run.err_history.push(f64::NAN);
                return Ok(p.finish(JointStatus::SensorBudgetExhausted));
            }
        }
        let setup = dict.observation(space, &p.sensors)?;
        let op = PbdwOperator::fit(space, &vn, &setup)?;
        p.run.u_selected.push(j);
        p.run.sensor_groups.push(group);
        p.run.m_of_n.push(p.sensors.len());
        p.run.beta_history.push(op.beta());
        p.op = Some(op);
        errors = p.errors(space, t);
        p.run.err_history.push(max_with_index(&errors).0);
    }
}

/// Generalized empirical interpolation: one snapshot and one sensor per step, `m(n) = n`.
pub fn geim(
    space: &InnerProductSpace,
    t: &TrainingSet,
    dict: &Dictionary,
    n_max: usize,
    eps_stop: f64,
) -> Result<JointRun> {
    check_inputs(space, t, dict)?;
    if n_max > dict.len() {
        return Err(Error::InvalidInput(format!(
            "n_max = {n_max} exceeds dictionary size {}",
            dict.len()
        )));
    }
    let mut p = Progress::new(space, t);
    let mut errors = p.errors(space, t);
    let mut used = vec![false; dict.len()];
    loop {
        let (worst, j) = max_with_index(&errors);
        if worst < eps_stop {
            return Ok(p.finish(JointStatus::Converged));
        }
        if p.run.n() >= n_max {
            return Ok(p.finish(JointStatus::BudgetReached));
        }
        let u = t.snapshot(j);
        let residual = &u - p.estimate(&u);
        if !p.v.push(space, &u, RANK_TOL) {
            return Ok(p.finish(JointStatus::ManifoldCaptured));
        }
        let scores = dict.functionals().tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in scores.iter().enumerate() {
            if used[i] {
                continue;
            }
            if best.is_none_or(|(_, b)| s.abs() > b) {
                best = Some((i, s.abs()));
            }
        }
        let Some((i, s)) = best.filter(|(_, s)| *s > 0.0) else {
            return Ok(p.finish(JointStatus::ManifoldCaptured));
        };
        log::debug!("geim step {}: snapshot {j}, sensor {i} (score {s:.3e})", p.run.n() + 1);
        used[i] = true;
        p.sensors.push(i);
        let setup = dict.observation(space, &p.sensors)?;
        let op = PbdwOperator::fit(space, &p.v.to_subspace(), &setup)?;
        p.run.u_selected.push(j);
        p.run.sensor_groups.push(vec![i]);
        p.run.m_of_n.push(p.sensors.len());
        p.run.beta_history.push(op.beta());
        p.op = Some(op);
        errors = p.errors(space, t);
        p.run.err_history.push(max_with_index(&errors).0);
    }
}

/// PBDW operator of a finished run.
pub fn operator_of(space: &InnerProductSpace, run: &JointRun, dict: &Dictionary) -> Result<PbdwOperator> {
    let setup = dict.observation(space, &run.sensors())?;
    PbdwOperator::fit(space, &run.basis, &setup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{nodal_interpolant, sample_training_set};
    use crate::testbed;
    use nalgebra::DMatrix;

    fn setup() -> (crate::forward::ParametricModel, TrainingSet, Dictionary) {
        let model = testbed::elliptic_2d(127).unwrap();
        let t = sample_training_set(&model, &[7, 7]).unwrap();
        let dict = Dictionary::uniform_points(model.space(), 63).unwrap();
        (model, t, dict)
    }

    #[test]
    fn nested_greedy_starts_at_max_norm_and_keeps_beta() {
        let (model, t, dict) = setup();
        let space = model.space();
        let run = nested_greedy(space, &t, &dict, 0.6, 1e-6, 6, 60).unwrap();
        let norms: Vec<f64> = (0..t.len()).map(|j| space.norm(&t.snapshot(j))).collect();
        assert_eq!(run.u_selected[0], max_with_index(&norms).1);
        assert!(run.beta_history.iter().all(|b| *b >= 0.6 - 1e-10));
        assert!(run.err_history.iter().all(|e| *e <= run.err_history[0]));
        for k in 1..run.n() {
            if run.sensor_groups[k].is_empty() {
                assert_eq!(run.m_of_n[k], run.m_of_n[k - 1]);
            }
        }
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), run.n() + 1);
    }

    #[test]
    fn nested_greedy_recovers_low_rank_sets() {
        let (model, t, dict) = setup();
        let space = model.space();
        let (a, b) = (t.snapshot(0), t.snapshot(30));
        let cols: Vec<DVector<f64>> = (0..6).map(|k| &a * (k as f64) - &b * (1.0 + 0.5 * k as f64)).collect();
        let low = TrainingSet::new(vec![vec![0.0, 0.0]; 6], DMatrix::from_columns(&cols)).unwrap();
        let run = nested_greedy(space, &low, &dict, 0.5, 1e-8, 10, 60).unwrap();
        assert!(run.n() <= 2);
        assert_eq!(run.status, JointStatus::Converged);
        assert!(*run.err_history.last().unwrap() <= 1e-10);
    }

    #[test]
    fn geim_interpolates_and_projects() {
        let (model, t, dict) = setup();
        let space = model.space();
        let run = geim(space, &t, &dict, 5, 0.0).unwrap();
        assert_eq!(run.m_of_n, (1..=run.n()).collect::<Vec<_>>());
        let sensors = run.sensors();
        let norms: Vec<f64> = (0..t.len()).map(|j| space.norm(&t.snapshot(j))).collect();
        assert_eq!(run.u_selected[0], max_with_index(&norms).1);
        let first = dict.functionals().tr_mul(&t.snapshot(run.u_selected[0]));
        let best = (0..dict.len())
            .max_by(|&a, &b| first[a].abs().total_cmp(&first[b].abs()).then(b.cmp(&a)))
            .unwrap();
        assert_eq!(sensors[0], best);

        let op = operator_of(space, &run, &dict).unwrap();
        let setup = dict.observation(space, &sensors).unwrap();
        let v = nodal_interpolant(127, |x| (11.0 * x).sin() * x);
        let rec = op.estimate_state(&v);
        assert!((setup.observe(&rec) - setup.observe(&v)).amax() < 1e-10);
        let inside = run.basis.combine(&DVector::from_fn(run.n(), |i, _| 1.0 / (i + 1) as f64));
        assert!(space.distance(&op.estimate_state(&inside), &inside) < 1e-10 * space.norm(&inside));
    }
}
