//! 1D affine-parametric diffusion problem `-(a(x;y) u')' = f(x;y)` on (0,1)
//! with homogeneous Dirichlet conditions, discretized by P1 finite elements
//! on a uniform mesh.
//!
//! `a(x;y) = ā(x) + Σ y_j ψ_j(x)` and `f(x;y) = f̄(x) + Σ y_j g_j(x)`, all
//! fields piecewise constant. Element integrals are exact for such data.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_sorted, InnerProductSpace, OrthonormalBasis, Subspace, RANK_TOL};

/// Largest training grid accepted by [`sample_training_set`].
pub const MAX_TRAINING_POINTS: usize = 1_000_000;

/// Piecewise-constant field on [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    /// Increasing breakpoints from 0 to 1 (one more than `values`).
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || breaks.len() != values.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "field needs len(breaks) = len(values) + 1, got {} and {}",
                breaks.len(),
                values.len()
            )));
        }
        if breaks[0] != 0.0 || *breaks.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput("field breaks must start at 0 and end at 1".into()));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("field breaks must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field values must be finite".into()));
        }
        Ok(Self { breaks, values })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            breaks: vec![0.0, 1.0],
            values: vec![c],
        }
    }

    /// `value` on (a, b), zero elsewhere.
    pub fn indicator(a: f64, b: f64, value: f64) -> Result<Self> {
        let mut breaks = vec![0.0];
        let mut values = Vec::new();
        if a > 0.0 {
            breaks.push(a);
            values.push(0.0);
        }
        breaks.push(b);
        values.push(value);
        if b < 1.0 {
            breaks.push(1.0);
            values.push(0.0);
        }
        Self::new(breaks, values)
    }

    /// Value on the piece containing `x` (right-continuous, last piece closed).
    pub fn at(&self, x: f64) -> f64 {
        let k = self.breaks[1..].partition_point(|&b| b <= x);
        self.values[k.min(self.values.len() - 1)]
    }

    /// Integral of the field over [a, b].
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for (k, v) in self.values.iter().enumerate() {
            let lo = self.breaks[k].max(a);
            let hi = self.breaks[k + 1].min(b);
            if hi > lo {
                total += v * (hi - lo);
            }
        }
        total
    }

    /// Per-element averages on a uniform mesh with `n_elements` cells.
    pub fn element_averages(&self, n_elements: usize) -> Vec<f64> {
        let h = 1.0 / n_elements as f64;
        (0..n_elements)
            .map(|e| self.integral(e as f64 * h, (e + 1) as f64 * h) / h)
            .collect()
    }

    /// Exact load vector `(∫ f φ_i)_i` for the interior hat functions.
    pub fn load_vector(&self, n_h: usize) -> DVector<f64> {
        let n_el = n_h + 1;
        let h = 1.0 / n_el as f64;
        let mut b = DVector::zeros(n_h);
        for e in 0..n_el {
            let (x0, x1) = (e as f64 * h, (e + 1) as f64 * h);
            // Hats are linear on each sub-piece, so the midpoint rule is exact.
            for (k, v) in self.values.iter().enumerate() {
                let lo = self.breaks[k].max(x0);
                let hi = self.breaks[k + 1].min(x1);
                if hi <= lo || *v == 0.0 {
                    continue;
                }
                let mid = 0.5 * (lo + hi);
                let w = v * (hi - lo);
                let t = (mid - x0) / h;
                if e >= 1 {
                    b[e - 1] += w * (1.0 - t);
                }
                if e < n_h {
                    b[e] += w * t;
                }
            }
        }
        b
    }
}

/// Axis-parallel rectangle `Y = Π [lo_j, hi_j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::InvalidInput(format!(
                "box bounds must be nonempty and of equal length, got {} and {}",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (j, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidInput(format!(
                    "box requires lo < hi, violated on axis {j}: lo = {l}, hi = {h}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn clamp(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }

    /// All 2^d corners, lexicographic with `lo` before `hi`.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|j| {
                        if mask >> (d - 1 - j) & 1 == 1 {
                            self.hi[j]
                        } else {
                            self.lo[j]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Symmetric tridiagonal matrix.
#[derive(Clone, Debug)]
pub(crate) struct Tridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiag {
    /// P1 stiffness matrix from per-element coefficients (`n_h + 1` of them).
    fn stiffness(coef: &[f64]) -> Self {
        let n_h = coef.len() - 1;
        let h = 1.0 / coef.len() as f64;
        let diag = (0..n_h).map(|i| (coef[i] + coef[i + 1]) / h).collect();
        let off = (0..n_h.saturating_sub(1)).map(|i| -coef[i + 1] / h).collect();
        Self { diag, off }
    }

    fn axpy(&mut self, alpha: f64, other: &Tridiag) {
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += alpha * b;
        }
        for (a, b) in self.off.iter_mut().zip(&other.off) {
            *a += alpha * b;
        }
    }

    pub fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.diag.len();
        DVector::from_fn(n, |i, _| {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.off[i - 1] * v[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * v[i + 1];
            }
            s
        })
    }

    /// Thomas algorithm; `None` on a vanishing pivot.
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.diag.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom.abs() < f64::MIN_POSITIVE {
            return None;
        }
        if n > 1 {
            c[0] = self.off[0] / denom;
        }
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.off[i - 1] * c[i - 1];
            if denom.abs() < f64::MIN_POSITIVE {
                return None;
            }
            if i + 1 < n {
                c[i] = self.off[i] / denom;
            }
            d[i] = (rhs[i] - self.off[i - 1] * d[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Some(DVector::from_vec(d))
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }
}

/// The affine-parametric model together with its pre-assembled terms.
#[derive(Clone, Debug)]
pub struct ParametricModel {
    n_h: usize,
    abar: Field,
    psis: Vec<Field>,
    rhs: Field,
    rhs_terms: Vec<Field>,
    param_box: ParameterBox,
    a0: Tridiag,
    a_terms: Vec<Tridiag>,
    f0: DVector<f64>,
    f_terms: Vec<DVector<f64>>,
    space: InnerProductSpace,
}

impl ParametricModel {
    /// Model with parameter-independent load `rhs`.
    pub fn new(
        n_h: usize,
        abar: Field,
        psis: Vec<Field>,
        rhs: Field,
        param_box: ParameterBox,
    ) -> Result<Self> {
        Self::with_affine_rhs(n_h, abar, psis, rhs, Vec::new(), param_box)
    }

    /// Model with load `f̄ + Σ y_j g_j`; `rhs_terms` is empty or has one field per parameter.
    pub fn with_affine_rhs(
        n_h: usize,
        abar: Field,
        psis: Vec<Field>,
        rhs: Field,
        rhs_terms: Vec<Field>,
        param_box: ParameterBox,
    ) -> Result<Self> {
        if n_h == 0 {
            return Err(Error::InvalidInput("mesh needs at least one interior node".into()));
        }
        param_box.validate()?;
        let d = param_box.dim();
        if psis.len() != d {
            return Err(Error::DimensionMismatch {
                op: "ParametricModel::new (psis vs box dimension)",
                expected: d,
                got: psis.len(),
            });
        }
        if !rhs_terms.is_empty() && rhs_terms.len() != d {
            return Err(Error::DimensionMismatch {
                op: "ParametricModel::new (rhs terms vs box dimension)",
                expected: d,
                got: rhs_terms.len(),
            });
        }
        check_coercivity(&abar, &psis, &param_box, n_h + 1)?;

        let n_el = n_h + 1;
        let a0 = Tridiag::stiffness(&abar.element_averages(n_el));
        let a_terms = psis
            .iter()
            .map(|p| Tridiag::stiffness(&p.element_averages(n_el)))
            .collect();
        let f0 = rhs.load_vector(n_h);
        let f_terms = rhs_terms.iter().map(|g| g.load_vector(n_h)).collect();
        let space = h10_space(n_h);
        Ok(Self {
            n_h,
            abar,
            psis,
            rhs,
            rhs_terms,
            param_box,
            a0,
            a_terms,
            f0,
            f_terms,
            space,
        })
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn mesh_size(&self) -> f64 {
        1.0 / (self.n_h + 1) as f64
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> Vec<f64> {
        mesh_nodes(self.n_h)
    }

    pub fn param_box(&self) -> &ParameterBox {
        &self.param_box
    }

    pub fn param_dim(&self) -> usize {
        self.param_box.dim()
    }

    pub fn abar(&self) -> &Field {
        &self.abar
    }

    pub fn psis(&self) -> &[Field] {
        &self.psis
    }

    pub fn rhs(&self) -> &Field {
        &self.rhs
    }

    pub fn rhs_terms(&self) -> &[Field] {
        &self.rhs_terms
    }

    /// The H¹₀ inner-product space (reference stiffness, `a ≡ 1`).
    pub fn space(&self) -> &InnerProductSpace {
        &self.space
    }

    fn operator(&self, y: &[f64]) -> Tridiag {
        let mut a = self.a0.clone();
        for (yj, aj) in y.iter().zip(&self.a_terms) {
            a.axpy(*yj, aj);
        }
        a
    }

    fn load(&self, y: &[f64]) -> DVector<f64> {
        let mut f = self.f0.clone();
        for (yj, gj) in y.iter().zip(&self.f_terms) {
            f.axpy(*yj, gj, 1.0);
        }
        f
    }

    /// Stiffness matrix `A(y)` as a dense matrix (diagnostics and tests).
    pub fn stiffness_dense(&self, y: &[f64]) -> DMatrix<f64> {
        self.operator(y).to_dense()
    }

    pub fn load_vector(&self, y: &[f64]) -> DVector<f64> {
        self.load(y)
    }

    /// Galerkin solution `u(y)`; points outside `Y` are clamped with a warning.
    pub fn solve(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                op: "forward::solve",
                expected: self.param_dim(),
                got: y.len(),
            });
        }
        let y = if self.param_box.contains(y) {
            y.to_vec()
        } else {
            let c = self.param_box.clamp(y);
            log::warn!("parameter {y:?} outside Y, clamped to {c:?}");
            c
        };
        let a = self.operator(&y);
        a.solve(&self.load(&y))
            .ok_or(Error::Singular { op: "forward::solve" })
    }

    /// `A(y) v - f(y)`.
    pub fn residual(&self, v: &DVector<f64>, y: &[f64]) -> DVector<f64> {
        self.operator(y).mul(v) - self.load(y)
    }

    /// Residual norm `‖A(y) v - f(y)‖_{V'}`.
    pub fn residual_norm(&self, v: &DVector<f64>, y: &[f64]) -> f64 {
        let r = self.residual(v, y);
        r.dot(&self.space.solve(&r)).max(0.0).sqrt()
    }
}

fn check_coercivity(abar: &Field, psis: &[Field], param_box: &ParameterBox, n_el: usize) -> Result<()> {
    let mut breaks: Vec<f64> = abar.breaks.clone();
    for p in psis {
        breaks.extend_from_slice(&p.breaks);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let corners = param_box.corners();
    let mut worst = (f64::INFINITY, 0usize);
    for w in breaks.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        for c in &corners {
            let a = abar.at(mid) + c.iter().zip(psis).map(|(y, p)| y * p.at(mid)).sum::<f64>();
            if a < worst.0 {
                worst = (a, ((mid * n_el as f64) as usize).min(n_el - 1));
            }
        }
    }
    if !(worst.0 > 0.0) {
        return Err(Error::Coercivity {
            min_value: worst.0,
            element: worst.1,
        });
    }
    Ok(())
}

pub fn mesh_nodes(n_h: usize) -> Vec<f64> {
    let h = 1.0 / (n_h + 1) as f64;
    (1..=n_h).map(|i| i as f64 * h).collect()
}

/// H¹₀ inner product of the P1 space: stiffness matrix with `a ≡ 1`.
pub fn h10_space(n_h: usize) -> InnerProductSpace {
    let g = Tridiag::stiffness(&vec![1.0; n_h + 1]).to_dense();
    InnerProductSpace::new(g).expect("reference stiffness is SPD")
}

/// Value at `x` of the P1 function with interior nodal values `u`.
pub fn evaluate(u: &DVector<f64>, x: f64) -> f64 {
    let n_el = u.len() + 1;
    let s = (x.clamp(0.0, 1.0) * n_el as f64).min(n_el as f64);
    let e = (s.floor() as usize).min(n_el - 1);
    let t = s - e as f64;
    let left = if e == 0 { 0.0 } else { u[e - 1] };
    let right = if e >= u.len() { 0.0 } else { u[e] };
    left * (1.0 - t) + right * t
}

/// Nodal interpolation of a P1 function onto a uniform mesh with `n_h` interior nodes.
pub fn interpolate(u: &DVector<f64>, n_h: usize) -> DVector<f64> {
    DVector::from_iterator(n_h, mesh_nodes(n_h).into_iter().map(|x| evaluate(u, x)))
}

/// Nodal interpolant of a continuous function.
pub fn nodal_interpolant(n_h: usize, f: impl Fn(f64) -> f64) -> DVector<f64> {
    DVector::from_iterator(n_h, mesh_nodes(n_h).into_iter().map(f))
}

/// Snapshots of the solution manifold on a parameter grid.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    params: Vec<Vec<f64>>,
    snapshots: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(params: Vec<Vec<f64>>, snapshots: DMatrix<f64>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidInput("training set must be nonempty".into()));
        }
        if params.len() != snapshots.ncols() {
            return Err(Error::DimensionMismatch {
                op: "TrainingSet::new",
                expected: params.len(),
                got: snapshots.ncols(),
            });
        }
        if snapshots.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("snapshots contain non-finite values".into()));
        }
        Ok(Self { params, snapshots })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    /// Columns are snapshots.
    pub fn snapshots(&self) -> &DMatrix<f64> {
        &self.snapshots
    }

    pub fn snapshot(&self, j: usize) -> DVector<f64> {
        self.snapshots.column(j).into_owned()
    }

    /// Sub-set with the given indices, in the given order.
    pub fn select(&self, idx: &[usize]) -> TrainingSet {
        let params = idx.iter().map(|&j| self.params[j].clone()).collect();
        let snapshots = self.snapshots.select_columns(idx);
        TrainingSet { params, snapshots }
    }

    /// Max residual of the snapshots against the model (validation after loading).
    pub fn max_relative_residual(&self, model: &ParametricModel) -> f64 {
        (0..self.len())
            .map(|j| {
                let y = &self.params[j];
                let f = model.load(y);
                let scale = f.norm().max(f64::MIN_POSITIVE);
                model.residual(&self.snapshot(j), y).norm() / scale
            })
            .fold(0.0, f64::max)
    }
}

/// Tensor grid with `resolution[j]` points on axis `j` (the center when 1,
/// endpoints included otherwise), lexicographic with the first axis slowest.
pub fn parameter_grid(param_box: &ParameterBox, resolution: &[usize]) -> Result<Vec<Vec<f64>>> {
    if resolution.len() != param_box.dim() {
        return Err(Error::DimensionMismatch {
            op: "parameter_grid",
            expected: param_box.dim(),
            got: resolution.len(),
        });
    }
    if resolution.contains(&0) {
        return Err(Error::InvalidInput("grid resolution must be at least 1 per axis".into()));
    }
    let total = resolution
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .filter(|&t| t <= MAX_TRAINING_POINTS)
        .ok_or_else(|| {
            Error::Refused(format!(
                "training grid {resolution:?} exceeds {MAX_TRAINING_POINTS} points"
            ))
        })?;
    let axes: Vec<Vec<f64>> = resolution
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let (lo, hi) = (param_box.lo[j], param_box.hi[j]);
            if r == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..r)
                    .map(|k| lo + (hi - lo) * k as f64 / (r - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut out = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut y = vec![0.0; axes.len()];
        for j in (0..axes.len()).rev() {
            y[j] = axes[j][flat % axes[j].len()];
            flat /= axes[j].len();
        }
        out.push(y);
    }
    Ok(out)
}

/// Snapshots for an explicit list of parameters (parallel, order preserved).
pub fn training_set_from(model: &ParametricModel, params: Vec<Vec<f64>>) -> Result<TrainingSet> {
    if params.len() > MAX_TRAINING_POINTS {
        return Err(Error::Refused(format!(
            "{} training points exceed {MAX_TRAINING_POINTS}",
            params.len()
        )));
    }
    let cols: Vec<DVector<f64>> = params
        .par_iter()
        .map(|y| model.solve(y))
        .collect::<Result<_>>()?;
    let mut snapshots = DMatrix::zeros(model.n_h(), cols.len());
    for (j, c) in cols.iter().enumerate() {
        snapshots.set_column(j, c);
    }
    TrainingSet::new(params, snapshots)
}

pub fn sample_training_set(model: &ParametricModel, resolution: &[usize]) -> Result<TrainingSet> {
    training_set_from(model, parameter_grid(model.param_box(), resolution)?)
}

/// Proper orthogonal decomposition of a snapshot set (no centering).
#[derive(Clone, Debug)]
pub struct Pod {
    /// Orthonormal POD modes, in decreasing energy order.
    pub modes: Subspace,
    /// Squared singular values `λ_1 ≥ λ_2 ≥ …` of the snapshot correlation.
    pub eigenvalues: Vec<f64>,
}

pub fn pod(space: &InnerProductSpace, snapshots: &DMatrix<f64>, n: usize) -> Result<Pod> {
    if snapshots.nrows() != space.dim() {
        return Err(Error::DimensionMismatch {
            op: "pod",
            expected: space.dim(),
            got: snapshots.nrows(),
        });
    }
    let j = snapshots.ncols();
    // Correlation C = Sᵀ G S; modes S v / √λ.
    let gs = space.apply_mat(snapshots);
    let c = snapshots.tr_mul(&gs);
    let (vals, vecs) = sym_eigen_sorted(c);
    let mut eigenvalues: Vec<f64> = vals.iter().rev().map(|v| v.max(0.0)).collect();
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let mut basis = OrthonormalBasis::new(space.dim());
    for k in 0..n.min(j) {
        if eigenvalues[k] <= 1e-24 * top.max(f64::MIN_POSITIVE) {
            break;
        }
        let v = vecs.column(j - 1 - k).into_owned();
        let mode = snapshots * v;
        if !basis.push(space, &mode, RANK_TOL) {
            break;
        }
    }
    eigenvalues.truncate(j);
    Ok(Pod {
        modes: basis.to_subspace(),
        eigenvalues,
    })
}

/// POD estimate of the Kolmogorov width on a training set.
#[derive(Clone, Debug)]
pub struct WidthProxy {
    /// `max_j dist(u_j, POD_k)` for k = 0..=n; lower-bound estimate of `d_k`.
    pub worst: Vec<f64>,
    /// `sqrt(mean_j dist(u_j, POD_k)²)`; a rigorous lower bound for the
    /// worst-case error of any k-dimensional linear space on the training set.
    pub rms: Vec<f64>,
}

pub fn pod_width_proxy(space: &InnerProductSpace, t: &TrainingSet, n: usize) -> Result<WidthProxy> {
    if n > t.len() {
        return Err(Error::InvalidInput(format!(
            "width proxy order {n} exceeds training size {}",
            t.len()
        )));
    }
    let p = pod(space, t.snapshots(), n)?;
    let ob = OrthonormalBasis::from_subspace(space, &p.modes)?;
    let mut worst = Vec::with_capacity(n + 1);
    let mut rms = Vec::with_capacity(n + 1);
    let mut r = t.snapshots().clone();
    for k in 0..=n {
        if k > 0 && k <= ob.dim() {
            let q = ob.matrix().column(k - 1);
            let gq = ob.gram_applied().column(k - 1);
            let coeffs = gq.transpose() * &r;
            r -= q * coeffs;
        }
        let norms: Vec<f64> = (0..r.ncols())
            .map(|j| space.norm(&r.column(j).into_owned()))
            .collect();
        let w = norms.iter().cloned().fold(0.0, f64::max);
        let m = (norms.iter().map(|x| x * x).sum::<f64>() / norms.len() as f64).sqrt();
        // Nested spaces: enforce monotonicity against round-off.
        worst.push(worst.last().map_or(w, |&p: &f64| p.min(w)));
        rms.push(rms.last().map_or(m, |&p: &f64| p.min(m)));
    }
    Ok(WidthProxy { worst, rms })
}

/// Output of the weak greedy on a finite set.
#[derive(Clone, Debug)]
pub struct GreedyBasis {
    /// Orthonormal, nested: `basis.leading(k)` is `V_k`.
    pub basis: Subspace,
    pub selected: Vec<usize>,
    /// `errors[k] = max_j dist(u_j, V_k)` for k = 0..=dim.
    pub errors: Vec<f64>,
}

/// Greedy reduced basis: repeatedly add the column farthest from the current span.
///
/// Stops at `n_max`, once the training error is `≤ target`, or when the
/// remaining columns are numerically in the span.
pub fn greedy_reduced_basis(
    space: &InnerProductSpace,
    snapshots: &DMatrix<f64>,
    n_max: usize,
    target: f64,
) -> Result<GreedyBasis> {
    if snapshots.nrows() != space.dim() {
        return Err(Error::DimensionMismatch {
            op: "greedy_reduced_basis",
            expected: space.dim(),
            got: snapshots.nrows(),
        });
    }
    let j = snapshots.ncols();
    let col_norms: Vec<f64> = (0..j)
        .map(|c| space.norm(&snapshots.column(c).into_owned()))
        .collect();
    let mut basis = OrthonormalBasis::new(space.dim());
    let mut selected = Vec::new();
    let mut r = snapshots.clone();
    let mut norms = col_norms.clone();
    let mut errors = vec![norms.iter().cloned().fold(0.0, f64::max)];
    while selected.len() < n_max.min(j) && *errors.last().unwrap() > target {
        let (best, best_val) = argmax_lowest(&norms);
        if best_val <= RANK_TOL * col_norms[best].max(f64::MIN_POSITIVE) {
            break;
        }
        let candidate = r.column(best).into_owned();
        if !basis.push(space, &candidate, RANK_TOL) {
            break;
        }
        selected.push(best);
        let k = basis.dim() - 1;
        let q = basis.matrix().column(k);
        let gq = basis.gram_applied().column(k);
        let coeffs = gq.transpose() * &r;
        r -= q * coeffs;
        norms = (0..j).map(|c| space.norm(&r.column(c).into_owned())).collect();
        let e = norms.iter().cloned().fold(0.0, f64::max);
        errors.push(e.min(*errors.last().unwrap()));
    }
    Ok(GreedyBasis {
        basis: basis.to_subspace(),
        selected,
        errors,
    })
}

/// Index of the maximum, lowest index among ties within 1e-12 relative.
pub(crate) fn argmax_lowest(values: &[f64]) -> (usize, f64) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * max.abs();
    let idx = values.iter().position(|&v| v >= max - tol).unwrap_or(0);
    (idx, values[idx])
}

/// Minimum of the PDE residual over the parameter box.
#[derive(Clone, Debug)]
pub struct Surrogate {
    /// `𝒮(v) = min_{y∈Y} ‖A(y)v - f(y)‖_{V'}`.
    pub value: f64,
    pub y_star: Vec<f64>,
    /// Set when the residual quadratic is only positive semidefinite; `y_star` is then one minimizer among many.
    pub semidefinite: bool,
}

const PG_ITERS: usize = 500;

/// Residual surrogate `𝒮(v)` with its minimizing parameter.
pub fn residual_surrogate(model: &ParametricModel, v: &DVector<f64>) -> Result<Surrogate> {
    model.space.check_vector("residual_surrogate", v)?;
    let d = model.param_dim();
    let r0 = model.a0.mul(v) - &model.f0;
    let rj: Vec<DVector<f64>> = (0..d)
        .map(|j| {
            let mut r = model.a_terms[j].mul(v);
            if let Some(g) = model.f_terms.get(j) {
                r -= g;
            }
            r
        })
        .collect();
    let space = &model.space;
    let sj: Vec<DVector<f64>> = rj.iter().map(|r| space.solve(r)).collect();
    let s0 = space.solve(&r0);
    let h = DMatrix::from_fn(d, d, |a, b| 0.5 * (rj[a].dot(&sj[b]) + rj[b].dot(&sj[a])));
    let g = DVector::from_fn(d, |a, _| rj[a].dot(&s0));
    let c = r0.dot(&s0);
    let quad = |y: &DVector<f64>| c + 2.0 * g.dot(y) + y.dot(&(&h * y));

    let (vals, _) = sym_eigen_sorted(h.clone());
    let lmax = vals.last().copied().unwrap_or(0.0).max(0.0);
    let lmin = vals.first().copied().unwrap_or(0.0);
    let semidefinite = lmax <= 0.0 || lmin <= 1e-12 * lmax;
    let bx = model.param_box();
    let clamp = |y: &DVector<f64>| DVector::from_vec(bx.clamp(y.as_slice()));

    let mut y = if !semidefinite {
        let chol = h.clone().cholesky().ok_or(Error::Singular {
            op: "forward::residual_surrogate",
        })?;
        chol.solve(&(-&g))
    } else if lmax > 0.0 {
        h.clone()
            .pseudo_inverse(1e-12 * lmax)
            .map(|p| -(p * &g))
            .unwrap_or_else(|_| DVector::from_vec(bx.center()))
    } else {
        DVector::from_vec(bx.center())
    };

    if !bx.contains(y.as_slice()) {
        y = clamp(&y);
        if lmax > 0.0 {
            let step = 1.0 / lmax;
            for _ in 0..PG_ITERS {
                let grad = &h * &y + &g;
                y = clamp(&(&y - grad * step));
            }
            y = polish_active_set(&h, &g, y, bx, &quad);
        }
    }
    let y_star: Vec<f64> = y.iter().cloned().collect();
    Ok(Surrogate {
        value: model.residual_norm(v, &y_star),
        y_star,
        semidefinite,
    })
}

/// Solve exactly on the free coordinates of the projected-gradient point.
fn polish_active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    y: DVector<f64>,
    bx: &ParameterBox,
    quad: &dyn Fn(&DVector<f64>) -> f64,
) -> DVector<f64> {
    let d = y.len();
    let scale = |j: usize| 1e-9 * (bx.hi[j] - bx.lo[j]);
    let free: Vec<usize> = (0..d)
        .filter(|&j| y[j] > bx.lo[j] + scale(j) && y[j] < bx.hi[j] - scale(j))
        .collect();
    let mut cand = y.clone();
    for j in 0..d {
        if !free.contains(&j) {
            cand[j] = if y[j] - bx.lo[j] < bx.hi[j] - y[j] { bx.lo[j] } else { bx.hi[j] };
        }
    }
    if !free.is_empty() {
        let hff = h.select_rows(&free).select_columns(&free);
        let mut rhs = -g.select_rows(&free);
        for (a, &i) in free.iter().enumerate() {
            for j in 0..d {
                if !free.contains(&j) {
                    rhs[a] -= h[(i, j)] * cand[j];
                }
            }
        }
        match hff.cholesky() {
            Some(ch) => {
                let sol = ch.solve(&rhs);
                for (a, &i) in free.iter().enumerate() {
                    cand[i] = sol[a];
                }
            }
            None => return y,
        }
    }
    if bx.contains(cand.as_slice()) && quad(&cand) <= quad(&y) {
        cand
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_model(n_h: usize) -> ParametricModel {
        ParametricModel::new(
            n_h,
            Field::constant(1.0),
            vec![Field::constant(0.0)],
            Field::constant(1.0),
            ParameterBox::new(vec![0.0], vec![1.0]).unwrap(),
        )
        .unwrap()
    }

    fn two_param_model(n_h: usize) -> ParametricModel {
        ParametricModel::new(
            n_h,
            Field::constant(1.0),
            vec![
                Field::indicator(0.0, 0.5, 0.5).unwrap(),
                Field::indicator(0.5, 1.0, 0.5).unwrap(),
            ],
            Field::constant(1.0),
            ParameterBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_data_is_exact_at_nodes() {
        let m = unit_model(63);
        let u = m.solve(&[0.5]).unwrap();
        for (i, x) in m.nodes().iter().enumerate() {
            assert!((u[i] - x * (1.0 - x) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_data_gives_symmetric_solution() {
        let m = ParametricModel::new(
            40,
            Field::new(vec![0.0, 0.25, 0.75, 1.0], vec![2.0, 1.0, 2.0]).unwrap(),
            vec![Field::constant(0.0)],
            Field::new(vec![0.0, 0.3, 0.7, 1.0], vec![1.0, 3.0, 1.0]).unwrap(),
            ParameterBox::new(vec![0.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let u = m.solve(&[0.0]).unwrap();
        let n = u.len();
        for i in 0..n {
            assert!((u[i] - u[n - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_load_doubles_solution() {
        let base = two_param_model(50);
        let double = ParametricModel::new(
            50,
            base.abar().clone(),
            base.psis().to_vec(),
            Field::constant(2.0),
            base.param_box().clone(),
        )
        .unwrap();
        let y = [0.3, -0.7];
        let (u1, u2) = (base.solve(&y).unwrap(), double.solve(&y).unwrap());
        assert!((u2 - 2.0 * &u1).norm() <= 1e-12 * u1.norm());
    }

    #[test]
    fn non_coercive_box_is_rejected() {
        let r = ParametricModel::new(
            10,
            Field::constant(1.0),
            vec![Field::constant(1.0)],
            Field::constant(1.0),
            ParameterBox::new(vec![-2.0], vec![0.0]).unwrap(),
        );
        assert!(matches!(r, Err(Error::Coercivity { .. })));
    }

    #[test]
    fn grid_shapes() {
        let m = two_param_model(15);
        let t = sample_training_set(&m, &[1, 1]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.params()[0], vec![0.0, 0.0]);
        let g = parameter_grid(m.param_box(), &[3, 3]).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![-1.0, -1.0]);
        assert_eq!(g[1], vec![-1.0, 0.0]);
        assert_eq!(g[4], vec![0.0, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
        assert!(matches!(
            parameter_grid(m.param_box(), &[1001, 1001]),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn nested_grids_fill_the_box() {
        let m = two_param_model(31);
        let fine = sample_training_set(&m, &[17, 17]).unwrap();
        let mut last = f64::INFINITY;
        for r in [3, 5, 9, 17] {
            let coarse_fine: Vec<f64> = (0..fine.len())
                .map(|j| {
                    let c = sample_training_set(&m, &[r, r]).unwrap();
                    (0..c.len())
                        .map(|k| m.space().distance(&fine.snapshot(j), &c.snapshot(k)))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let fill = coarse_fine.iter().cloned().fold(0.0, f64::max);
            assert!(fill <= last + 1e-15);
            last = fill;
        }
        assert!(last < 1e-14);
    }

    #[test]
    fn pod_proxy_cases() {
        let m = two_param_model(31);
        let space = m.space();
        let t = sample_training_set(&m, &[5, 5]).unwrap();
        let w = pod_width_proxy(space, &t, 8).unwrap();
        assert!(w.worst.windows(2).all(|p| p[1] <= p[0]));
        assert!(w.rms.iter().zip(&w.worst).all(|(r, x)| r <= &(x + 1e-15)));

        let single = t.select(&[3]);
        let w = pod_width_proxy(space, &single, 1).unwrap();
        assert!((w.worst[0] - space.norm(&single.snapshot(0))).abs() < 1e-12);
        assert!(w.worst[1] < 1e-10 * w.worst[0]);

        // Three snapshots spanning a 2D subspace.
        let a = t.snapshot(0);
        let b = t.snapshot(5);
        let s = DMatrix::from_columns(&[a.clone(), b.clone(), &a * 2.0 - &b * 0.5]);
        let low = TrainingSet::new(vec![vec![0.0, 0.0]; 3], s).unwrap();
        let w = pod_width_proxy(space, &low, 2).unwrap();
        assert!(w.worst[2] <= 1e-10 * w.worst[0]);
    }

    #[test]
    fn greedy_first_pick_is_max_norm() {
        let m = two_param_model(31);
        let space = m.space();
        let t = sample_training_set(&m, &[4, 4]).unwrap();
        let g = greedy_reduced_basis(space, t.snapshots(), 6, 0.0).unwrap();
        let norms: Vec<f64> = (0..t.len()).map(|j| space.norm(&t.snapshot(j))).collect();
        assert_eq!(g.selected[0], argmax_lowest(&norms).0);
        assert!(g.errors.windows(2).all(|p| p[1] <= p[0]));
        let q = g.basis.basis();
        let gram = q.transpose() * space.gram() * q;
        assert!((gram - DMatrix::identity(q.ncols(), q.ncols())).amax() < 1e-10);
    }

    #[test]
    fn surrogate_vanishes_at_truth() {
        let m = two_param_model(63);
        let y0 = [0.4, -0.6];
        let u = m.solve(&y0).unwrap();
        let s = residual_surrogate(&m, &u).unwrap();
        assert!(s.value <= 1e-8);
        assert!(!s.semidefinite);
        assert!((s.y_star[0] - y0[0]).abs() < 1e-6 && (s.y_star[1] - y0[1]).abs() < 1e-6);
    }

    #[test]
    fn surrogate_of_zero_is_load_dual_norm() {
        let m = two_param_model(63);
        let z = DVector::zeros(63);
        let s = residual_surrogate(&m, &z).unwrap();
        let f = m.load_vector(&[0.0, 0.0]);
        let expected = f.dot(&m.space().solve(&f)).sqrt();
        assert!(s.semidefinite);
        assert!((s.value - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn surrogate_clamps_to_nearer_endpoint() {
        // Truth at y = 1.5 lies outside Y = [0, 1].
        let bx = ParameterBox::new(vec![0.0], vec![1.0]).unwrap();
        let psi = Field::indicator(0.0, 0.5, 1.0).unwrap();
        let m = ParametricModel::new(63, Field::constant(1.0), vec![psi.clone()], Field::constant(1.0), bx).unwrap();
        let wide = ParametricModel::new(
            63,
            Field::constant(1.0),
            vec![psi],
            Field::constant(1.0),
            ParameterBox::new(vec![0.0], vec![2.0]).unwrap(),
        )
        .unwrap();
        let v = wide.solve(&[1.5]).unwrap();
        let s = residual_surrogate(&m, &v).unwrap();
        assert_eq!(s.y_star, vec![1.0]);
        let scan = (0..=10_000)
            .map(|k| m.residual_norm(&v, &[k as f64 / 10_000.0]))
            .fold(f64::INFINITY, f64::min);
        assert!((s.value - scan).abs() < 1e-8);
    }

    #[test]
    fn load_vector_of_constant_matches_hat_integrals() {
        let b = Field::constant(1.0).load_vector(9);
        assert!(b.iter().all(|v| (v - 0.1).abs() < 1e-15));
        let f = Field::indicator(0.0, 0.5, 2.0).unwrap();
        // Interior hats sum to 1 except on the boundary element, which loses h/2.
        let total: f64 = f.load_vector(99).sum();
        assert!((total - (1.0 - 2.0 * 0.01 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn evaluation_and_interpolation() {
        let u = nodal_interpolant(7, |x| x * (1.0 - x));
        assert!((evaluate(&u, 0.5) - 0.25).abs() < 1e-15);
        assert_eq!(evaluate(&u, 0.0), 0.0);
        assert_eq!(evaluate(&u, 1.0), 0.0);
        let fine = interpolate(&u, 15);
        assert!((evaluate(&fine, 0.3) - evaluate(&u, 0.3)).abs() < 1e-15);
    }
}
