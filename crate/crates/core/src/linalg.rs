//! Finite-dimensional inner-product spaces.
//!
//! Every ambient vector is a coefficient vector against one fixed reference
//! basis, and the inner product is `<a, b> = aᵀ G b` with an SPD Gram
//! matrix `G` (the FEM stiffness matrix for the H¹₀ testbed). Subspaces
//! are stored as coefficient columns; all cross-space quantities (Gram
//! blocks, projections, inf-sup constants) reduce to small dense problems.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Ambient coefficient vector in the reference basis.
pub type CoefficientVector = DVector<f64>;

/// Relative pivot tolerance used for rank decisions.
pub const RANK_TOL: f64 = 1e-12;

/// Below this inf-sup value the stability constant is reported as infinite.
pub const BETA_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug)]
struct BandCholesky {
    n: usize,
    p: usize,
    // Row-major band of L: entry (i, j) with i - p <= j <= i lives at i*(p+1) + (j + p - i).
    band: Vec<f64>,
}

impl BandCholesky {
    fn factor(a: &DMatrix<f64>, p: usize) -> Option<Self> {
        let n = a.nrows();
        let w = p + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let jlo = i.saturating_sub(p);
            for j in jlo..=i {
                let klo = jlo.max(j.saturating_sub(p));
                let mut s = a[(i, j)];
                for k in klo..j {
                    s -= band[i * w + (k + p - i)] * band[j * w + (k + p - j)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    band[i * w + p] = s.sqrt();
                } else {
                    band[i * w + (j + p - i)] = s / band[j * w + p];
                }
            }
        }
        Some(Self { n, p, band })
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.p + 1) + (j + self.p - i)]
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let (n, p) = (self.n, self.p);
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(p)..i {
                s -= self.l(i, j) * x[j];
            }
            x[i] = s / self.l(i, i);
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n.min(i + p + 1) {
                s -= self.l(j, i) * x[j];
            }
            x[i] = s / self.l(i, i);
        }
    }

    /// Solves `Lᵀ x = y`.
    fn lt_solve(&self, y: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n.min(i + p + 1) {
                s -= self.l(j, i) * x[j];
            }
            x[i] = s / self.l(i, i);
        }
        x
    }

    /// `Lᵀ x`, so that `‖x‖_G = ‖Lᵀ x‖₂`.
    fn lt_mul(&self, x: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        (0..n)
            .map(|i| {
                (i..n.min(i + p + 1))
                    .map(|j| self.l(j, i) * x[j])
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Reference basis metadata: dimension plus the SPD Gram matrix defining `<·,·>`.
#[derive(Clone, Debug)]
pub struct InnerProductSpace {
    gram: DMatrix<f64>,
    bandwidth: usize,
    chol: BandCholesky,
}

impl InnerProductSpace {
    /// Validates symmetry (1e-12 relative) and positive definiteness.
    pub fn new(gram: DMatrix<f64>) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || gram.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "Gram matrix must be square and nonempty, got {}x{}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Gram matrix has non-finite entries".into()));
        }
        let scale = gram.amax();
        let mut bandwidth = 0;
        for j in 0..n {
            for i in 0..n {
                if (gram[(i, j)] - gram[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "Gram matrix not symmetric at ({i}, {j})"
                    )));
                }
                if gram[(i, j)] != 0.0 {
                    bandwidth = bandwidth.max(i.abs_diff(j));
                }
            }
        }
        let chol = BandCholesky::factor(&gram, bandwidth).ok_or(Error::Singular {
            op: "InnerProductSpace::new (Gram not positive definite)",
        })?;
        Ok(Self {
            gram,
            bandwidth,
            chol,
        })
    }

    /// `ℝⁿ` with the Euclidean inner product.
    pub fn euclidean(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Half-bandwidth of the Gram matrix (1 for the 1D stiffness matrix).
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// `G v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let p = self.bandwidth;
        DVector::from_fn(n, |i, _| {
            let lo = i.saturating_sub(p);
            let hi = n.min(i + p + 1);
            (lo..hi).map(|j| self.gram[(i, j)] * v[j]).sum()
        })
    }

    /// `G M`, column by column.
    pub fn apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (j, col) in m.column_iter().enumerate() {
            out.set_column(j, &self.apply(&col.into_owned()));
        }
        out
    }

    /// `G⁻¹ r` (Riesz map from dual to primal coefficients).
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = rhs.as_slice().to_vec();
        self.chol.solve_in_place(&mut x);
        DVector::from_vec(x)
    }

    /// Coordinates in an orthonormal frame: `‖v‖_G = ‖whiten(v)‖₂`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.chol.lt_mul(v.as_slice()))
    }

    /// Inverse of [`whiten`](Self::whiten).
    pub fn unwhiten(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.chol.lt_solve(w.as_slice()))
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&self.apply(b))
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    pub fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.norm(&(a - b))
    }

    pub(crate) fn check_vector(&self, op: &'static str, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_subspace(&self, op: &'static str, s: &Subspace) -> Result<()> {
        if s.ambient_dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.dim(),
                got: s.ambient_dim(),
            });
        }
        Ok(())
    }
}

/// A finite-dimensional subspace given by coefficient columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
    orthonormal: bool,
}

impl Subspace {
    /// A subspace spanned by arbitrary (assumed independent) columns.
    pub fn new(basis: DMatrix<f64>) -> Self {
        Self {
            basis,
            orthonormal: false,
        }
    }

    /// The zero subspace of an ambient space of dimension `ambient`.
    pub fn zero(ambient: usize) -> Self {
        Self {
            basis: DMatrix::zeros(ambient, 0),
            orthonormal: true,
        }
    }

    pub(crate) fn orthonormal_unchecked(basis: DMatrix<f64>) -> Self {
        Self {
            basis,
            orthonormal: true,
        }
    }

    pub fn from_vectors(ambient: usize, vectors: &[DVector<f64>]) -> Self {
        let mut basis = DMatrix::zeros(ambient, vectors.len());
        for (j, v) in vectors.iter().enumerate() {
            basis.set_column(j, v);
        }
        Self::new(basis)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.basis.column(j).into_owned()
    }

    /// Span of the first `k` columns; keeps the orthonormal flag.
    pub fn leading(&self, k: usize) -> Subspace {
        Self {
            basis: self.basis.columns(0, k.min(self.dim())).into_owned(),
            orthonormal: self.orthonormal,
        }
    }

    /// Column concatenation `[self | other]` (not orthonormal in general).
    pub fn concat(&self, other: &Subspace) -> Subspace {
        let n = self.ambient_dim();
        let mut basis = DMatrix::zeros(n, self.dim() + other.dim());
        basis.columns_mut(0, self.dim()).copy_from(&self.basis);
        basis
            .columns_mut(self.dim(), other.dim())
            .copy_from(&other.basis);
        Subspace::new(basis)
    }

    /// Element of the subspace with the given basis coefficients.
    pub fn combine(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.basis * coeffs
    }
}

/// `𝔾(F, H)_{ij} = <f_i, h_j>`.
pub fn gram_matrix(space: &InnerProductSpace, f: &Subspace, h: &Subspace) -> Result<DMatrix<f64>> {
    space.check_subspace("gram_matrix", f)?;
    space.check_subspace("gram_matrix", h)?;
    Ok(f.basis().transpose() * space.apply_mat(h.basis()))
}

/// Incrementally built orthonormal basis caching `G Q` for cheap coefficient extraction.
#[derive(Clone, Debug)]
pub struct OrthonormalBasis {
    q: DMatrix<f64>,
    gq: DMatrix<f64>,
}

impl OrthonormalBasis {
    pub fn new(ambient: usize) -> Self {
        Self {
            q: DMatrix::zeros(ambient, 0),
            gq: DMatrix::zeros(ambient, 0),
        }
    }

    /// Wraps an already orthonormal subspace.
    pub fn from_subspace(space: &InnerProductSpace, s: &Subspace) -> Result<Self> {
        let s = if s.is_orthonormal() {
            s.clone()
        } else {
            orthonormalize(space, s)?
        };
        Ok(Self {
            gq: space.apply_mat(s.basis()),
            q: s.basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `G Q`; row `i` of its transpose is the functional `<q_i, ·>`.
    pub fn gram_applied(&self) -> &DMatrix<f64> {
        &self.gq
    }

    pub fn to_subspace(&self) -> Subspace {
        Subspace::orthonormal_unchecked(self.q.clone())
    }

    /// `Qᵀ G v`.
    pub fn coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        self.gq.tr_mul(v)
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.q * self.coefficients(v)
    }

    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.project(v)
    }

    /// Column-wise `(I - P) M`.
    pub fn residual_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m - &self.q * self.gq.tr_mul(m)
    }

    /// Orthogonalize `v` (two Gram-Schmidt passes) and append it.
    ///
    /// Returns `false` without modifying the basis when the remaining pivot
    /// is below `tol` times the original norm.
    pub fn push(&mut self, space: &InnerProductSpace, v: &DVector<f64>, tol: f64) -> bool {
        let original = space.norm(v);
        if original == 0.0 || !original.is_finite() {
            return false;
        }
        let mut r = self.residual(v);
        r = self.residual(&r);
        let pivot = space.norm(&r);
        if pivot <= tol * original {
            return false;
        }
        r /= pivot;
        let gr = space.apply(&r);
        let k = self.dim();
        self.q = std::mem::replace(&mut self.q, DMatrix::zeros(0, 0)).insert_column(k, 0.0);
        self.q.set_column(k, &r);
        self.gq = std::mem::replace(&mut self.gq, DMatrix::zeros(0, 0)).insert_column(k, 0.0);
        self.gq.set_column(k, &gr);
        true
    }
}

fn fix_sign(v: &mut DVector<f64>) {
    let scale = v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-14 * scale) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Stabilized Gram-Schmidt with a re-orthogonalization pass, fixed column
/// order, and the sign convention "first nonzero coefficient positive".
pub fn orthonormalize(space: &InnerProductSpace, s: &Subspace) -> Result<Subspace> {
    space.check_subspace("orthonormalize", s)?;
    let mut q = OrthonormalBasis::new(s.ambient_dim());
    for j in 0..s.dim() {
        let col = s.column(j);
        if !q.push(space, &col, RANK_TOL) {
            let original = space.norm(&col);
            let pivot = if original > 0.0 {
                space.norm(&q.residual(&q.residual(&col))) / original
            } else {
                0.0
            };
            return Err(Error::RankDeficient { column: j, pivot });
        }
    }
    Ok(Subspace::orthonormal_unchecked(signed(q.q)))
}

/// Like [`orthonormalize`] but silently drops dependent columns.
///
/// Returns the orthonormal basis and the indices of the kept columns.
pub fn orthonormalize_dropping(
    space: &InnerProductSpace,
    s: &Subspace,
    tol: f64,
) -> Result<(Subspace, Vec<usize>)> {
    space.check_subspace("orthonormalize_dropping", s)?;
    let mut q = OrthonormalBasis::new(s.ambient_dim());
    let mut kept = Vec::new();
    for j in 0..s.dim() {
        if q.push(space, &s.column(j), tol) {
            kept.push(j);
        }
    }
    Ok((Subspace::orthonormal_unchecked(signed(q.q)), kept))
}

fn signed(mut q: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in q.column_iter_mut() {
        let mut v = col.clone_owned();
        fix_sign(&mut v);
        col.copy_from(&v);
    }
    q
}

/// Orthogonal projection of `v` onto `span(F)`.
pub fn project(space: &InnerProductSpace, f: &Subspace, v: &DVector<f64>) -> Result<DVector<f64>> {
    space.check_subspace("project", f)?;
    space.check_vector("project", v)?;
    if f.dim() == 0 {
        return Ok(DVector::zeros(v.len()));
    }
    let rhs = f.basis().tr_mul(&space.apply(v));
    if f.is_orthonormal() {
        return Ok(f.combine(&rhs));
    }
    let gff = gram_matrix(space, f, f)?;
    let chol = Cholesky::new(gff).ok_or(Error::Singular { op: "project" })?;
    Ok(f.combine(&chol.solve(&rhs)))
}

/// Inf-sup constant together with its extremal direction.
#[derive(Clone, Debug)]
pub struct InfSup {
    /// `β(V, W) ∈ [0, 1]`.
    pub beta: f64,
    /// `1/β`, or `+∞` when `β` is below [`BETA_FLOOR`].
    pub mu: f64,
    /// Coefficients (in the basis of `V`) of the unit vector of `V` realizing
    /// the minimum; it is the element of `V` worst captured by `W`.
    pub direction: DVector<f64>,
}

/// Sorted (ascending) symmetric eigen-decomposition.
pub(crate) fn sym_eigen_sorted(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(a.nrows(), order.len());
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        fix_sign(&mut v);
        vectors.set_column(k, &v);
    }
    (values, vectors)
}

/// `β(V, W)` via the symmetric reduction of `𝕄 c = λ 𝔾(V,V) c`.
pub fn inf_sup(space: &InnerProductSpace, v: &Subspace, w: &Subspace) -> Result<InfSup> {
    space.check_subspace("inf_sup", v)?;
    space.check_subspace("inf_sup", w)?;
    let n = v.dim();
    if n == 0 {
        return Ok(InfSup {
            beta: 1.0,
            mu: 1.0,
            direction: DVector::zeros(0),
        });
    }

    // Whitening of V: coefficients c = T e give unit vectors for unit e.
    let t = if v.is_orthonormal() {
        DMatrix::identity(n, n)
    } else {
        let gvv = gram_matrix(space, v, v)?;
        let chol = Cholesky::new(gvv).ok_or(Error::Singular {
            op: "inf_sup (V basis dependent)",
        })?;
        let l = chol.l();
        l.transpose()
            .try_inverse()
            .ok_or(Error::Singular { op: "inf_sup" })?
    };

    if w.dim() == 0 {
        let mut e = DVector::zeros(n);
        e[0] = 1.0;
        return Ok(InfSup {
            beta: 0.0,
            mu: f64::INFINITY,
            direction: &t * e,
        });
    }

    let gv = space.apply_mat(v.basis());
    let gwv = w.basis().tr_mul(&gv);
    let m = if w.is_orthonormal() {
        gwv.tr_mul(&gwv)
    } else {
        let gww = gram_matrix(space, w, w)?;
        let chol = Cholesky::new(gww).ok_or(Error::Singular {
            op: "inf_sup (W Gram)",
        })?;
        gwv.tr_mul(&chol.solve(&gwv))
    };
    let reduced = t.transpose() * m * &t;
    let (values, vectors) = sym_eigen_sorted(reduced);
    let lambda = values[0].clamp(0.0, 1.0);
    let beta = lambda.sqrt();
    let mu = if beta < BETA_FLOOR {
        f64::INFINITY
    } else {
        1.0 / beta
    };
    Ok(InfSup {
        beta,
        mu,
        direction: &t * vectors.column(0),
    })
}

/// `β(V, W) = min_{v∈V} ‖P_W v‖ / ‖v‖`.
pub fn inf_sup_beta(space: &InnerProductSpace, v: &Subspace, w: &Subspace) -> Result<f64> {
    inf_sup(space, v, w).map(|r| r.beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stiffness(n: usize) -> InnerProductSpace {
        let h = 1.0 / (n as f64 + 1.0);
        let g = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 / h
            } else if i.abs_diff(j) == 1 {
                -1.0 / h
            } else {
                0.0
            }
        });
        InnerProductSpace::new(g).unwrap()
    }

    #[test]
    fn gram_of_orthonormal_basis_is_identity() {
        let space = stiffness(20);
        let raw = Subspace::new(DMatrix::from_fn(20, 4, |i, j| ((i * 7 + j * 3) % 11) as f64 + 0.5 * j as f64));
        let q = orthonormalize(&space, &raw).unwrap();
        let g = gram_matrix(&space, &q, &q).unwrap();
        assert!((g - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn gram_of_single_vector_is_squared_norm() {
        let space = InnerProductSpace::euclidean(3);
        let v = Subspace::new(DMatrix::from_column_slice(3, 1, &[2.0, 0.0, 0.0]));
        let g = gram_matrix(&space, &v, &v).unwrap();
        assert_eq!(g[(0, 0)], 4.0);
    }

    #[test]
    fn adjacent_hats_have_minus_one_over_h() {
        let n = 9;
        let h = 0.1;
        let space = stiffness(n);
        let mut e = DMatrix::zeros(n, 2);
        e[(3, 0)] = 1.0;
        e[(4, 1)] = 1.0;
        let s = Subspace::new(e);
        let g = gram_matrix(&space, &s, &s).unwrap();
        assert!((g[(0, 1)] + 1.0 / h).abs() < 1e-12);
    }

    #[test]
    fn gram_dimension_mismatch_is_rejected() {
        let space = InnerProductSpace::euclidean(3);
        let s = Subspace::new(DMatrix::zeros(4, 1));
        assert!(matches!(
            gram_matrix(&space, &s, &s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn orthonormal_input_is_unchanged() {
        let space = InnerProductSpace::euclidean(3);
        let s = Subspace::new(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let q = orthonormalize(&space, &s).unwrap();
        assert!((q.basis() - s.basis()).amax() < 1e-15);
        let flipped = Subspace::new(-s.basis());
        let q = orthonormalize(&space, &flipped).unwrap();
        assert!((q.basis() - s.basis()).amax() < 1e-15);
    }

    #[test]
    fn duplicated_column_is_rank_error() {
        let space = stiffness(10);
        let mut b = DMatrix::from_fn(10, 3, |i, j| (i + j) as f64 * 0.1 + (i * j) as f64);
        let c0 = b.column(0).into_owned();
        b.set_column(2, &c0);
        match orthonormalize(&space, &Subspace::new(b)) {
            Err(Error::RankDeficient { column, .. }) => assert_eq!(column, 2),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn projection_cases() {
        let space = stiffness(12);
        let f = Subspace::new(DMatrix::from_fn(12, 3, |i, j| ((i + 1) as f64).powi(j as i32 + 1)));
        let inside = f.combine(&DVector::from_vec(vec![1.0, -2.0, 0.5]));
        let p = project(&space, &f, &inside).unwrap();
        assert!(space.distance(&p, &inside) <= 1e-10 * space.norm(&inside));

        let q = orthonormalize(&space, &f).unwrap();
        let ob = OrthonormalBasis::from_subspace(&space, &q).unwrap();
        let v = DVector::from_fn(12, |i, _| (i as f64 * 0.7).sin());
        let perp = ob.residual(&v);
        let p = project(&space, &f, &perp).unwrap();
        assert!(space.norm(&p) <= 1e-10 * space.norm(&v));
    }

    #[test]
    fn beta_of_identical_spaces_is_one() {
        let space = stiffness(15);
        let v = Subspace::new(DMatrix::from_fn(15, 3, |i, j| ((i + 2 * j) % 5) as f64 + j as f64));
        assert!((inf_sup_beta(&space, &v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beta_of_orthogonal_spaces_is_zero() {
        let space = InnerProductSpace::euclidean(4);
        let v = Subspace::new(DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]));
        let w = Subspace::new(DMatrix::from_column_slice(4, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let r = inf_sup(&space, &v, &w).unwrap();
        assert!(r.beta.abs() < 1e-14);
        assert!(r.mu.is_infinite());
    }

    #[test]
    fn beta_in_the_plane_is_cosine_of_angle() {
        // Oracle: ‖P_W e₁‖ = |cos θ| for W = span{(cos θ, sin θ)}.
        let space = InnerProductSpace::euclidean(2);
        let theta = std::f64::consts::PI / 3.0;
        let v = Subspace::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let w = Subspace::new(DMatrix::from_column_slice(2, 1, &[theta.cos(), theta.sin()]));
        assert!((inf_sup_beta(&space, &v, &w).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn beta_with_singular_w_gram_errors() {
        let space = InnerProductSpace::euclidean(3);
        let v = Subspace::new(DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]));
        let w = Subspace::new(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        assert!(matches!(inf_sup(&space, &v, &w), Err(Error::Singular { .. })));
    }

    #[test]
    fn band_solver_matches_dense() {
        let space = stiffness(30);
        let b = DVector::from_fn(30, |i, _| (i as f64).cos());
        let x = space.solve(&b);
        assert!((space.gram() * &x - &b).amax() < 1e-10);
        let w = space.whiten(&b);
        assert!((w.norm_squared() - space.inner(&b, &b)).abs() < 1e-10 * space.inner(&b, &b));
        assert!((space.unwhiten(&w) - &b).amax() < 1e-10);
    }
}
