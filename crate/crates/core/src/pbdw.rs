//! Linear and affine PBDW reconstruction.
//!
//! With orthonormal bases `Q_W` of `W` and `V` of `V_n`, the cross-Gram
//! `C = Q_Wᵀ G V` carries everything: `v* = V a*` with `a* = argmin ‖w - C a‖`,
//! `A_n(w) = w + v* - P_W v*`, and `β(V_n, W) = σ_min(C)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forward::TrainingSet;
use crate::linalg::{orthonormalize, InnerProductSpace, OrthonormalBasis, Subspace, BETA_FLOOR};
use crate::sensing::ObservationSetup;

/// Fits with `β` at or below this value are refused.
pub const BETA_MIN: f64 = 1e-10;

/// Precomputed linear PBDW map `w ↦ A_n(w)`.
#[derive(Clone, Debug)]
pub struct PbdwOperator {
    v: Subspace,
    w: OrthonormalBasis,
    cross: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    beta: f64,
    mu: f64,
}

impl PbdwOperator {
    /// Fits the operator; `vn` is orthonormalized if needed.
    pub fn fit(space: &InnerProductSpace, vn: &Subspace, setup: &ObservationSetup) -> Result<Self> {
        space.check_subspace("pbdw::fit", vn)?;
        let (n, m) = (vn.dim(), setup.m());
        if n > m {
            return Err(Error::Refused(format!(
                "reduced dimension n = {n} exceeds number of measurements m = {m}"
            )));
        }
        let v = if vn.is_orthonormal() {
            vn.clone()
        } else {
            orthonormalize(space, vn)?
        };
        let w = setup.w_basis().clone();
        let cross = w.gram_applied().tr_mul(v.basis());
        let beta = if n == 0 {
            1.0
        } else {
            let sv = cross.clone().svd(false, false).singular_values;
            sv.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0)
        };
        if beta <= BETA_MIN {
            return Err(Error::Unstable { beta });
        }
        let (q, r) = if n == 0 {
            (DMatrix::zeros(m, 0), DMatrix::zeros(0, 0))
        } else {
            let qr = cross.clone().qr();
            (qr.q(), qr.r())
        };
        let mu = if beta < BETA_FLOOR { f64::INFINITY } else { 1.0 / beta };
        Ok(Self {
            v,
            w,
            cross,
            q,
            r,
            beta,
            mu,
        })
    }

    pub fn n(&self) -> usize {
        self.v.dim()
    }

    pub fn m(&self) -> usize {
        self.w.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Stability constant `μ = 1/β`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Orthonormal basis of `V_n` used by the operator.
    pub fn reduced_space(&self) -> &Subspace {
        &self.v
    }

    /// Coefficients `a*` of `v* = V a*` for orthonormal data coordinates.
    pub fn background_coefficients(&self, coords: &DVector<f64>) -> DVector<f64> {
        if self.n() == 0 {
            return DVector::zeros(0);
        }
        let rhs = self.q.tr_mul(coords);
        self.r
            .solve_upper_triangular(&rhs)
            .expect("R is nonsingular when beta > 0")
    }

    /// `A_n(w)` from the orthonormal `W`-coordinates of `w`.
    pub fn reconstruct(&self, coords: &DVector<f64>) -> DVector<f64> {
        let a = self.background_coefficients(coords);
        let correction = coords - &self.cross * &a;
        self.v.combine(&a) + self.w.matrix() * correction
    }

    /// `A_n(w)` for an ambient `w ∈ W`.
    pub fn reconstruct_w(&self, w: &DVector<f64>) -> DVector<f64> {
        self.reconstruct(&self.w.coefficients(w))
    }

    /// `A_n(P_W u)`.
    pub fn estimate_state(&self, u: &DVector<f64>) -> DVector<f64> {
        self.reconstruct_w(u)
    }
}

/// Affine PBDW `w ↦ ū + A_n(w - P_W ū)`.
#[derive(Clone, Debug)]
pub struct AffinePbdw {
    op: PbdwOperator,
    ubar: DVector<f64>,
    ubar_coords: DVector<f64>,
}

impl AffinePbdw {
    pub fn fit(
        space: &InnerProductSpace,
        ubar: DVector<f64>,
        vbar: &Subspace,
        setup: &ObservationSetup,
    ) -> Result<Self> {
        space.check_vector("pbdw::AffinePbdw::fit", &ubar)?;
        let op = PbdwOperator::fit(space, vbar, setup)?;
        let ubar_coords = setup.coords(&ubar);
        Ok(Self {
            op,
            ubar,
            ubar_coords,
        })
    }

    pub fn linear(&self) -> &PbdwOperator {
        &self.op
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.ubar
    }

    pub fn reconstruct(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.ubar + self.op.reconstruct(&(coords - &self.ubar_coords))
    }

    pub fn estimate_state(&self, u: &DVector<f64>) -> DVector<f64> {
        let coords = self.op.w.coefficients(u);
        self.reconstruct(&coords)
    }
}

/// Reconstruction errors `‖u_j - A(P_W u_j)‖` for every training snapshot.
pub fn reconstruction_errors(
    space: &InnerProductSpace,
    estimate: impl Fn(&DVector<f64>) -> DVector<f64>,
    t: &TrainingSet,
) -> Vec<f64> {
    (0..t.len())
        .map(|j| {
            let u = t.snapshot(j);
            space.distance(&u, &estimate(&u))
        })
        .collect()
}

/// Largest value and the lowest index attaining it.
pub fn max_with_index(values: &[f64]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, &v) in values.iter().enumerate() {
        if v > best.0 {
            best = (v, j);
        }
    }
    best
}

/// Training estimate of the worst-case error of linear PBDW.
pub fn worst_case_error(space: &InnerProductSpace, op: &PbdwOperator, t: &TrainingSet) -> (f64, usize) {
    max_with_index(&reconstruction_errors(space, |u| op.estimate_state(u), t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{greedy_reduced_basis, nodal_interpolant, sample_training_set};
    use crate::linalg::{inf_sup_beta, project};
    use crate::sensing::{Dictionary, Sensor, build_observation};
    use crate::testbed;

    fn fourier(n_h: usize, n: usize) -> Subspace {
        testbed::fourier_space(n_h, n).unwrap()
    }

    #[test]
    fn w_equal_v_gives_identity() {
        let space = crate::forward::h10_space(63);
        let setup = build_observation(&space, vec![Sensor::point(0.25), Sensor::point(0.5), Sensor::point(0.75)]).unwrap();
        let op = PbdwOperator::fit(&space, &Subspace::new(setup.representers().clone()), &setup).unwrap();
        assert!((op.beta() - 1.0).abs() < 1e-12);
        let u = nodal_interpolant(63, |x| x.sin() * x * (1.0 - x));
        let w = setup.measure(&u).w;
        assert!(space.distance(&op.reconstruct_w(&w), &w) < 1e-12);
    }

    #[test]
    fn refuses_n_above_m() {
        let space = crate::forward::h10_space(31);
        let setup = build_observation(&space, vec![Sensor::point(0.5)]).unwrap();
        assert!(matches!(
            PbdwOperator::fit(&space, &fourier(31, 2), &setup),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn unstable_pair_is_reported() {
        let space = crate::forward::h10_space(31);
        // sin(2πx) vanishes at 0.5.
        let setup = build_observation(&space, vec![Sensor::point(0.5)]).unwrap();
        let v = Subspace::from_vectors(31, &[nodal_interpolant(31, |x| (2.0 * std::f64::consts::PI * x).sin())]);
        assert!(matches!(PbdwOperator::fit(&space, &v, &setup), Err(Error::Unstable { .. })));
    }

    #[test]
    fn exact_on_reduced_space_and_linear() {
        let space = crate::forward::h10_space(127);
        let dict = Dictionary::uniform_points(&space, 31).unwrap();
        let setup = dict.observation(&space, &[2, 6, 10, 15, 20, 24, 29]).unwrap();
        let v = fourier(127, 4);
        let op = PbdwOperator::fit(&space, &v, &setup).unwrap();
        assert!((op.beta() - inf_sup_beta(&space, &v, &setup.w_subspace()).unwrap()).abs() < 1e-10);
        let u = v.combine(&DVector::from_vec(vec![1.0, -0.3, 0.2, 0.05]));
        let rec = op.estimate_state(&u);
        assert!(space.distance(&rec, &u) <= 1e-10 * space.norm(&u));
        assert!(op.reconstruct(&DVector::zeros(7)).amax() == 0.0);

        let u2 = nodal_interpolant(127, |x| x * x * (1.0 - x));
        let (w1, w2) = (setup.measure(&u).w, setup.measure(&u2).w);
        let lhs = op.reconstruct_w(&(&w1 * 2.5 + &w2));
        let rhs = op.reconstruct_w(&w1) * 2.5 + op.reconstruct_w(&w2);
        assert!(space.distance(&lhs, &rhs) <= 1e-10 * space.norm(&rhs));
        // Data consistency.
        let rec2 = op.reconstruct_w(&w2);
        assert!((setup.observe(&rec2) - setup.observe(&u2)).amax() < 1e-10);
    }

    #[test]
    fn affine_variant() {
        let space = crate::forward::h10_space(63);
        let setup = build_observation(&space, vec![Sensor::point(0.2), Sensor::point(0.45), Sensor::point(0.8)]).unwrap();
        let v = fourier(63, 2);
        let ubar = nodal_interpolant(63, |x| x.powi(3) * (1.0 - x));
        let aff = AffinePbdw::fit(&space, ubar.clone(), &v, &setup).unwrap();
        assert!(space.distance(&aff.estimate_state(&ubar), &ubar) < 1e-12);
        let u = &ubar + v.combine(&DVector::from_vec(vec![0.4, -1.1]));
        assert!(space.distance(&aff.estimate_state(&u), &u) <= 1e-10 * space.norm(&u));

        let zero = AffinePbdw::fit(&space, DVector::zeros(63), &v, &setup).unwrap();
        let lin = PbdwOperator::fit(&space, &v, &setup).unwrap();
        let x = nodal_interpolant(63, |x| (9.0 * x).sin());
        assert!(space.distance(&zero.estimate_state(&x), &lin.estimate_state(&x)) < 1e-14);
    }

    #[test]
    fn error_bound_and_floor_on_testbed() {
        let model = testbed::elliptic_2d(127).unwrap();
        let space = model.space();
        let t = sample_training_set(&model, &[9, 9]).unwrap();
        let gb = greedy_reduced_basis(space, t.snapshots(), 3, 0.0).unwrap();
        let dict = Dictionary::uniform_points(space, 63).unwrap();
        let setup = dict.observation(space, &[5, 15, 25, 35, 45, 55]).unwrap();
        let op = PbdwOperator::fit(space, &gb.basis, &setup).unwrap();
        let sum = gb.basis.concat(&setup.w_subspace());
        for j in 0..t.len() {
            let u = t.snapshot(j);
            let err = space.distance(&u, &op.estimate_state(&u));
            let dist_v = space.distance(&u, &project(space, &gb.basis, &u).unwrap());
            assert!(err <= op.mu() * dist_v * (1.0 + 1e-8));
            let floor = space.distance(&u, &project(space, &sum, &u).unwrap());
            assert!(err >= floor - 1e-10);
        }
        let (worst, idx) = worst_case_error(space, &op, &t);
        let single = t.select(&[idx]);
        assert_eq!(worst_case_error(space, &op, &single).0, worst);
    }
}
