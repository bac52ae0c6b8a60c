//! Optimal affine recovery on a training set.
//!
//! With an orthonormal basis `Q_W` of `W` and an orthonormal basis `Ψ` of
//! the part of `Z_N` orthogonal to `W`, an affine map with `P_W A(w) = w` is
//! `A(w) = Q_W w + Ψ (b + R w)`. Fitting `(R, b)` minimizes
//! `max_j ‖u^j - R w^j - b‖²`, written as `min t` subject to
//! `(Q_j x, t) ∈ epi f_j` with `x = vec(R, b)` and solved by primal-dual
//! splitting. `x` has `N (m + 1)` entries.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::TrainingSet;
use crate::linalg::{orthonormalize_dropping, InnerProductSpace, OrthonormalBasis, Subspace};
use crate::sensing::ObservationSetup;

/// Drop tolerance when deflating `Z_N` against `W`.
pub const DEFLATION_TOL: f64 = 1e-10;

/// Training data in `W`/`W̃^⊥` coordinates.
#[derive(Clone, Debug)]
pub struct EpigraphProblem {
    /// `w^j ∈ ℝ^m`.
    pub ws: Vec<DVector<f64>>,
    /// `u^j ∈ ℝ^N`.
    pub us: Vec<DVector<f64>>,
    /// `J + Σ_j ‖Q_j‖²`, an upper bound of `‖L‖²`.
    pub lnorm2_bound: f64,
    /// `max_j dist(u_j, W ⊕ Z_N)`.
    pub eps_n: f64,
    frame: Option<Frame>,
}

#[derive(Clone, Debug)]
struct Frame {
    w: OrthonormalBasis,
    psi: DMatrix<f64>,
}

impl EpigraphProblem {
    /// Problem from raw coordinates (no ambient frame attached).
    pub fn from_coordinates(ws: Vec<DVector<f64>>, us: Vec<DVector<f64>>) -> Result<Self> {
        if ws.len() != us.len() {
            return Err(Error::DimensionMismatch {
                op: "EpigraphProblem::from_coordinates",
                expected: ws.len(),
                got: us.len(),
            });
        }
        if let (Some(w0), Some(u0)) = (ws.first(), us.first()) {
            if ws.iter().any(|w| w.len() != w0.len()) || us.iter().any(|u| u.len() != u0.len()) {
                return Err(Error::InvalidInput("inconsistent coordinate lengths".into()));
            }
        }
        let lnorm2_bound = ws.len() as f64 + ws.iter().map(|w| w.norm_squared() + 1.0).sum::<f64>();
        Ok(Self {
            ws,
            us,
            lnorm2_bound,
            eps_n: 0.0,
            frame: None,
        })
    }

    pub fn j(&self) -> usize {
        self.ws.len()
    }

    pub fn m(&self) -> usize {
        self.ws.first().map_or(0, |w| w.len())
    }

    pub fn n(&self) -> usize {
        self.us.first().map_or(0, |u| u.len())
    }

    /// `F̃(R, b) = max_j ‖u^j - R w^j - b‖²`.
    pub fn objective(&self, r: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        self.ws
            .iter()
            .zip(&self.us)
            .map(|(w, u)| (u - r * w - b).norm_squared())
            .fold(0.0, f64::max)
    }

    /// `Q_j x` as a dense `N × N(m+1)` matrix (columns: `R` column-major, then `b`).
    pub fn q_matrix(&self, j: usize) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut q = DMatrix::zeros(n, n * (m + 1));
        for k in 0..m {
            for i in 0..n {
                q[(i, k * n + i)] = self.ws[j][k];
            }
        }
        for i in 0..n {
            q[(i, m * n + i)] = 1.0;
        }
        q
    }
}

/// Coordinates of the training set for `W` and the deflated `Z_N`.
pub fn build_problem(
    space: &InnerProductSpace,
    t: &TrainingSet,
    setup: &ObservationSetup,
    zn: &Subspace,
) -> Result<EpigraphProblem> {
    space.check_subspace("affine_opt::build_problem", zn)?;
    let w = setup.w_basis().clone();
    let deflated = Subspace::new(w.residual_mat(zn.basis()));
    let (psi, _) = orthonormalize_dropping(space, &deflated, DEFLATION_TOL)?;
    if psi.dim() == 0 {
        return Err(Error::InvalidInput(
            "Z_N lies inside W after deflation (N = 0): nothing to learn".into(),
        ));
    }
    let gpsi = space.apply_mat(psi.basis());
    let mut ws = Vec::with_capacity(t.len());
    let mut us = Vec::with_capacity(t.len());
    let mut eps_n: f64 = 0.0;
    for j in 0..t.len() {
        let u = t.snapshot(j);
        let wc = w.coefficients(&u);
        let uc = gpsi.tr_mul(&u);
        let rest = &u - w.matrix() * &wc - psi.basis() * &uc;
        eps_n = eps_n.max(space.norm(&rest));
        ws.push(wc);
        us.push(uc);
    }
    let mut p = EpigraphProblem::from_coordinates(ws, us)?;
    p.eps_n = eps_n;
    p.frame = Some(Frame {
        w,
        psi: psi.basis().clone(),
    });
    Ok(p)
}

/// Euclidean projection of `(v, t)` onto `{(y, s) : ‖u - y‖² ≤ s}`.
pub fn project_epigraph(u: &DVector<f64>, v: &DVector<f64>, t: f64) -> (DVector<f64>, f64) {
    let d = v - u;
    let rho = d.norm();
    if rho * rho <= t {
        return (v.clone(), t);
    }
    let r = epigraph_radius(rho, t);
    let y = if rho > 0.0 { u + d * (r / rho) } else { u.clone() };
    (y, r * r)
}

/// Unique root in `[0, ρ]` of `2r³ + (1 - 2t) r - ρ` by safeguarded Newton.
pub fn epigraph_radius(rho: f64, t: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let f = |r: f64| 2.0 * r * r * r + (1.0 - 2.0 * t) * r - rho;
    let (mut lo, mut hi) = (0.0, rho);
    let mut r = if t <= 0.5 { rho / (1.0 - 2.0 * t) } else { rho };
    r = r.clamp(lo, hi);
    let tol = 1e-12 * rho.max(1.0);
    for _ in 0..200 {
        let fr = f(r);
        if fr == 0.0 {
            return r;
        }
        if fr < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let df = 6.0 * r * r + 1.0 - 2.0 * t;
        let newton = r - fr / df;
        let next = if df > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - r).abs() <= tol || hi - lo <= tol {
            return next;
        }
        r = next;
    }
    r
}

#[derive(Clone, Debug)]
pub struct PrimalDualOptions {
    /// Defaults to `0.99 / √(‖L‖² bound)`.
    pub gamma_g: Option<f64>,
    /// Defaults to `0.99 / √(‖L‖² bound)`.
    pub gamma_f: Option<f64>,
    pub theta: f64,
    pub iters: usize,
    /// Stop once the best objective improves by less than this over 100 iterations.
    pub stall_tol: Option<f64>,
}

impl Default for PrimalDualOptions {
    fn default() -> Self {
        Self {
            gamma_g: None,
            gamma_f: None,
            theta: 1.0,
            iters: 20_000,
            stall_tol: Some(1e-10),
        }
    }
}

/// One objective evaluation of the solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSample {
    pub iteration: usize,
    pub objective: f64,
    pub best: f64,
}

/// Learned map `w ↦ Q_W w + Ψ (c̄ + B̄ w)`.
#[derive(Clone, Debug)]
pub struct AffineRecoveryMap {
    pub cbar: DVector<f64>,
    pub bbar: DMatrix<f64>,
    frame: Option<Frame>,
}

impl AffineRecoveryMap {
    pub fn new(cbar: DVector<f64>, bbar: DMatrix<f64>) -> Self {
        Self {
            cbar,
            bbar,
            frame: None,
        }
    }

    /// `W̃^⊥` coordinates `c̄ + B̄ w`.
    pub fn correction(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.cbar + &self.bbar * w
    }

    /// Ambient reconstruction from orthonormal `W`-coordinates.
    pub fn apply(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.frame.as_ref().ok_or_else(|| {
            Error::InvalidInput("map has no ambient frame (built from raw coordinates)".into())
        })?;
        Ok(f.w.matrix() * w + &f.psi * self.correction(w))
    }

    /// `Ã(P_W u)`.
    pub fn estimate_state(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.frame.as_ref().ok_or_else(|| {
            Error::InvalidInput("map has no ambient frame (built from raw coordinates)".into())
        })?;
        self.apply(&f.w.coefficients(u))
    }

    /// Orthonormal basis of `W̃^⊥` (ambient columns), if attached.
    pub fn psi(&self) -> Option<&DMatrix<f64>> {
        self.frame.as_ref().map(|f| &f.psi)
    }
}

#[derive(Clone, Debug)]
pub struct PrimalDualResult {
    pub map: AffineRecoveryMap,
    pub history: Vec<ObjectiveSample>,
    /// Squared worst training error of the returned map.
    pub best_objective: f64,
    pub iterations: usize,
}

impl PrimalDualResult {
    /// Worst training error `sqrt(F̃)`.
    pub fn worst_error(&self) -> f64 {
        self.best_objective.max(0.0).sqrt()
    }
}

const EVAL_EVERY: usize = 10;
const STALL_WINDOW: usize = 100;

/// Primal-dual iterations with `prox_G(x, t) = (x, t - γ_G)` and the dual prox by Moreau's identity.
pub fn primal_dual_solve(prob: &EpigraphProblem, opts: &PrimalDualOptions) -> Result<PrimalDualResult> {
    let jn = prob.j();
    if jn == 0 {
        return Err(Error::InvalidInput("epigraph problem has no snapshots".into()));
    }
    let (n, m) = (prob.n(), prob.m());
    let default_gamma = 0.99 / prob.lnorm2_bound.sqrt();
    let gg = opts.gamma_g.unwrap_or(default_gamma);
    let gf = opts.gamma_f.unwrap_or(default_gamma);
    if !(gg > 0.0 && gf > 0.0) || gg * gf * prob.lnorm2_bound >= 1.0 {
        return Err(Error::Refused(format!(
            "step sizes violate gamma_G * gamma_F * |L|^2 < 1 ({gg:.3e} * {gf:.3e} * {:.3e})",
            prob.lnorm2_bound
        )));
    }
    if !opts.theta.is_finite() || opts.theta < -1.0 {
        return Err(Error::InvalidInput(format!("theta must be >= -1, got {}", opts.theta)));
    }

    let mut r = DMatrix::zeros(n, m);
    let mut b = DVector::zeros(n);
    let mut t = prob.us.iter().map(|u| u.norm_squared()).fold(0.0, f64::max);
    let (mut rbar, mut bbar, mut tbar) = (r.clone(), b.clone(), t);
    let mut eta: Vec<DVector<f64>> = vec![DVector::zeros(n); jn];
    let mut s = vec![0.0; jn];

    let mut best = (prob.objective(&r, &b), r.clone(), b.clone());
    let mut history = vec![ObjectiveSample {
        iteration: 0,
        objective: best.0,
        best: best.0,
    }];
    let mut iterations = 0;
    for k in 1..=opts.iters {
        // Dual step: ξ ← ξ + γ_F L x̄, then prox of γ_F F* blockwise.
        let blocks: Vec<(DVector<f64>, f64)> = (0..jn)
            .into_par_iter()
            .map(|j| {
                let qx = &rbar * &prob.ws[j] + &bbar;
                let zv = &eta[j] + qx * gf;
                let zt = s[j] + gf * tbar;
                let (py, ps) = project_epigraph(&prob.us[j], &(&zv / gf), zt / gf);
                (zv - py * gf, zt - gf * ps)
            })
            .collect();
        for (j, (e, st)) in blocks.into_iter().enumerate() {
            eta[j] = e;
            s[j] = st;
        }
        // Primal step: x ← prox_G(x - γ_G L* ξ).
        let mut grad_r = DMatrix::zeros(n, m);
        let mut grad_b = DVector::zeros(n);
        for j in 0..jn {
            grad_r += &eta[j] * prob.ws[j].transpose();
            grad_b += &eta[j];
        }
        let grad_t: f64 = s.iter().sum();
        let r_new = &r - grad_r * gg;
        let b_new = &b - grad_b * gg;
        let t_new = t - gg * grad_t - gg;
        rbar = &r_new + (&r_new - &r) * opts.theta;
        bbar = &b_new + (&b_new - &b) * opts.theta;
        tbar = t_new + opts.theta * (t_new - t);
        r = r_new;
        b = b_new;
        t = t_new;
        iterations = k;

        if k % EVAL_EVERY == 0 {
            let obj = prob.objective(&r, &b);
            if obj < best.0 {
                best = (obj, r.clone(), b.clone());
            }
            history.push(ObjectiveSample {
                iteration: k,
                objective: obj,
                best: best.0,
            });
            if let Some(tol) = opts.stall_tol {
                let back = STALL_WINDOW / EVAL_EVERY;
                if history.len() > back {
                    let old = history[history.len() - 1 - back].best;
                    if old - best.0 < tol {
                        break;
                    }
                }
            }
        }
        if !t.is_finite() {
            return Err(Error::Singular {
                op: "affine_opt::primal_dual_solve (diverged)",
            });
        }
    }
    Ok(PrimalDualResult {
        map: AffineRecoveryMap {
            cbar: best.2,
            bbar: best.1,
            frame: prob.frame.clone(),
        },
        history,
        best_objective: best.0,
        iterations,
    })
}

/// Subgradient descent on `F̃` with step `c / √k` along the normalized
/// subgradient of an active term. Returns the best-so-far objective every
/// 10 iterations (entry 0 is the starting value).
pub fn subgradient_baseline(prob: &EpigraphProblem, iters: usize, c: Option<f64>) -> Result<Vec<f64>> {
    if prob.j() == 0 {
        return Err(Error::InvalidInput("epigraph problem has no snapshots".into()));
    }
    let (n, m) = (prob.n(), prob.m());
    let scale = c.unwrap_or_else(|| prob.us.iter().map(|u| u.norm()).fold(0.0, f64::max).max(1e-300));
    let mut r = DMatrix::zeros(n, m);
    let mut b = DVector::zeros(n);
    let mut best = prob.objective(&r, &b);
    let mut hist = vec![best];
    for k in 1..=iters {
        let (mut jstar, mut fmax) = (0, f64::NEG_INFINITY);
        for j in 0..prob.j() {
            let f = (&prob.us[j] - &r * &prob.ws[j] - &b).norm_squared();
            if f > fmax {
                (jstar, fmax) = (j, f);
            }
        }
        let res = &prob.us[jstar] - &r * &prob.ws[jstar] - &b;
        let g_r = &res * prob.ws[jstar].transpose() * -2.0;
        let g_b = &res * -2.0;
        let gnorm = (g_r.norm_squared() + g_b.norm_squared()).sqrt();
        if gnorm == 0.0 {
            best = 0.0;
            hist.push(best);
            break;
        }
        let step = scale / (k as f64).sqrt() / gnorm;
        r -= g_r * step;
        b -= g_b * step;
        let obj = prob.objective(&r, &b);
        best = best.min(obj);
        if k % EVAL_EVERY == 0 {
            hist.push(best);
        }
    }
    Ok(hist)
}
