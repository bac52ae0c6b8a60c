//! Benchmark quantities on finite training sets and the estimator table.
//!
//! `δ̃_σ = max{‖u − v‖ : u, v ∈ T, ‖P_W(u − v)‖ ≤ σ}` is computed by a pair
//! scan. It frames the unknown `δ_σ` of the continuous manifold through
//! `δ_σ − 2σ ≤ δ̃_{2σ} ≤ δ_σ + 2σ`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::affine_opt::{build_problem, primal_dual_solve, PrimalDualOptions};
use crate::error::{Error, Result};
use crate::forward::{greedy_reduced_basis, pod_width_proxy, ParameterBox, ParametricModel, TrainingSet};
use crate::linalg::InnerProductSpace;
use crate::pbdw::{AffinePbdw, PbdwOperator};
use crate::piecewise::{build_family, Criterion, Selection, SplitStrategy};
use crate::sensing::ObservationSetup;

/// Largest training set accepted by the pair scan.
pub const MAX_PAIR_SCAN: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeltaRow {
    pub sigma: f64,
    pub delta_tilde: f64,
    /// `δ̃_{2σ}`.
    pub delta_tilde_2sigma: f64,
    /// Interval `[δ̃_{2σ} − 2σ, δ̃_{2σ} + 2σ]` containing `δ_σ`, clipped at 0.
    pub frame_lo: f64,
    pub frame_hi: f64,
}

/// `δ̃_σ` for every `σ`, with the framing interval for `δ_σ`.
pub fn delta_tilde(
    space: &InnerProductSpace,
    t: &TrainingSet,
    setup: &ObservationSetup,
    sigmas: &[f64],
) -> Result<Vec<DeltaRow>> {
    if t.len() > MAX_PAIR_SCAN {
        return Err(Error::InvalidInput(format!(
            "pair scan limited to {MAX_PAIR_SCAN} snapshots, got {}",
            t.len()
        )));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidInput(format!("sigma must be nonnegative, got {s}")));
    }
    let mut levels: Vec<f64> = sigmas.iter().flat_map(|s| [*s, 2.0 * s]).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let white: Vec<DVector<f64>> = (0..t.len()).map(|j| space.whiten(&t.snapshot(j))).collect();
    let coords: Vec<DVector<f64>> = (0..t.len()).map(|j| setup.coords(&t.snapshot(j))).collect();
    let jn = t.len();
    // best[l] = max distance over pairs whose first admissible level is l.
    let best = (0..jn)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0f64; levels.len()];
            for k in i + 1..jn {
                let pw = (&coords[i] - &coords[k]).norm();
                let l = levels.partition_point(|s| *s < pw);
                if l < levels.len() {
                    row[l] = row[l].max((&white[i] - &white[k]).norm());
                }
            }
            row
        })
        .reduce(
            || vec![0.0; levels.len()],
            |a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
        );
    let mut prefix = best;
    for l in 1..prefix.len() {
        prefix[l] = prefix[l].max(prefix[l - 1]);
    }
    let at = |s: f64| prefix[levels.partition_point(|v| *v < s)];
    Ok(sigmas
        .iter()
        .map(|&sigma| {
            let d2 = at(2.0 * sigma);
            DeltaRow {
                sigma,
                delta_tilde: at(sigma),
                delta_tilde_2sigma: d2,
                frame_lo: (d2 - 2.0 * sigma).max(0.0),
                frame_hi: d2 + 2.0 * sigma,
            }
        })
        .collect())
}

/// Largest pairwise distance.
pub fn diameter(space: &InnerProductSpace, points: &DMatrix<f64>) -> f64 {
    let white: Vec<DVector<f64>> = (0..points.ncols())
        .map(|j| space.whiten(&points.column(j).into_owned()))
        .collect();
    let mut d: f64 = 0.0;
    for i in 0..white.len() {
        for k in i + 1..white.len() {
            d = d.max((&white[i] - &white[k]).norm());
        }
    }
    d
}

/// Largest set accepted by [`chebyshev_finite`].
pub const MAX_CHEBYSHEV_POINTS: usize = 500;
const FW_ITERS: usize = 20_000;

/// Minimal enclosing ball `(center, radius)` of the columns of `points`.
///
/// Frank–Wolfe with away steps on the dual `max_λ Σ λ_j ‖x_j‖² − ‖Σ λ_j x_j‖²`
/// over the simplex, followed by an exact solve on the support.
pub fn chebyshev_finite(space: &InnerProductSpace, points: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    let p = points.ncols();
    if p == 0 || p > MAX_CHEBYSHEV_POINTS {
        return Err(Error::InvalidInput(format!(
            "chebyshev_finite needs 1..={MAX_CHEBYSHEV_POINTS} points, got {p}"
        )));
    }
    if points.nrows() != space.dim() {
        return Err(Error::DimensionMismatch {
            op: "chebyshev_finite",
            expected: space.dim(),
            got: points.nrows(),
        });
    }
    let x = DMatrix::from_columns(
        &(0..p)
            .map(|j| space.whiten(&points.column(j).into_owned()))
            .collect::<Vec<_>>(),
    );
    let gram = x.tr_mul(&x);
    let sq: DVector<f64> = gram.diagonal();
    let scale = sq.max().max(f64::MIN_POSITIVE);

    let mut lambda = DVector::zeros(p);
    lambda[0] = 1.0;
    let mut glam = gram.column(0).into_owned();
    for _ in 0..FW_ITERS {
        // Gradient of the dual: ‖x_j‖² − 2 ⟨x_j, c⟩.
        let grad = &sq - &glam * 2.0;
        let s = grad.imax();
        let active: Vec<usize> = (0..p).filter(|&j| lambda[j] > 0.0).collect();
        let a = *active
            .iter()
            .min_by(|&&i, &&k| grad[i].total_cmp(&grad[k]).then(i.cmp(&k)))
            .unwrap();
        let gap_fw = grad[s] - grad.dot(&lambda);
        let gap_away = grad.dot(&lambda) - grad[a];
        if gap_fw.max(gap_away) <= 1e-15 * scale {
            break;
        }
        // Direction d = e_s − λ (toward) or λ − e_a (away).
        let (d, max_step) = if gap_fw >= gap_away {
            let mut d = -lambda.clone();
            d[s] += 1.0;
            (d, 1.0)
        } else {
            let mut d = lambda.clone();
            d[a] -= 1.0;
            let la = lambda[a];
            (d, if la < 1.0 { la / (1.0 - la) } else { f64::INFINITY })
        };
        // Exact line search on the concave quadratic.
        let gd = &gram * &d;
        let curv = 2.0 * d.dot(&gd);
        let slope = grad.dot(&d);
        let step = if curv > 0.0 { (slope / curv).min(max_step) } else { max_step };
        if !(step > 0.0) || !step.is_finite() {
            break;
        }
        lambda += &d * step;
        glam += gd * step;
        lambda.iter_mut().for_each(|v| {
            if *v < 1e-16 {
                *v = 0.0;
            }
        });
        let total = lambda.sum();
        lambda /= total;
        glam = &gram * &lambda;
    }
    let lambda = polish_support(&gram, &sq, lambda);
    let center_white = &x * &lambda;
    let radius = (0..p)
        .map(|j| (x.column(j) - &center_white).norm())
        .fold(0.0, f64::max);
    Ok((points * &lambda, radius))
}

/// Equidistant center on the support of `λ`, kept only if it improves the radius.
fn polish_support(gram: &DMatrix<f64>, sq: &DVector<f64>, lambda: DVector<f64>) -> DVector<f64> {
    let support: Vec<usize> = (0..lambda.len()).filter(|&j| lambda[j] > 1e-12).collect();
    let k = support.len();
    let radius2 = |l: &DVector<f64>| {
        let gl = gram * l;
        let cc = l.dot(&gl);
        (0..l.len())
            .map(|j| sq[j] - 2.0 * gl[j] + cc)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    // 2 ⟨x_i, Σ μ_j x_j⟩ + ρ = ‖x_i‖² on the support, Σ μ = 1.
    let mut a = DMatrix::zeros(k + 1, k + 1);
    let mut b = DVector::zeros(k + 1);
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            a[(r, c)] = 2.0 * gram[(i, j)];
        }
        a[(r, k)] = 1.0;
        a[(k, r)] = 1.0;
        b[r] = sq[i];
    }
    b[k] = 1.0;
    let Some(sol) = a.lu().solve(&b) else {
        return lambda;
    };
    if sol.rows(0, k).iter().any(|v| *v < -1e-12) {
        return lambda;
    }
    let mut polished = DVector::zeros(lambda.len());
    for (r, &j) in support.iter().enumerate() {
        polished[j] = sol[r].max(0.0);
    }
    polished /= polished.sum();
    if radius2(&polished) <= radius2(&lambda) {
        polished
    } else {
        lambda
    }
}

/// Midpoints of the `resolution` grid cells, a grid shifted by half a cell.
pub fn held_out_grid(param_box: &ParameterBox, resolution: &[usize]) -> Result<Vec<Vec<f64>>> {
    if resolution.len() != param_box.dim() || resolution.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "held-out resolution {resolution:?} does not fit a box of dimension {}",
            param_box.dim()
        )));
    }
    let axes: Vec<Vec<f64>> = resolution
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let (lo, hi) = (param_box.lo[i], param_box.hi[i]);
            (0..r).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / r as f64).collect()
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CompareConfig {
    /// Reduced dimension of the linear and affine PBDW spaces and `N` of `Z_N`.
    pub n: usize,
    pub sigma: f64,
    pub budget: usize,
    pub strategy: SplitStrategy,
    pub primal_dual: PrimalDualOptions,
    /// Noise levels for the `δ̃` rows.
    pub sigmas: Vec<f64>,
    /// Width proxy computed for `k = 0..=width_order`.
    pub width_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub method: String,
    pub worst: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub estimators: Vec<EstimatorRow>,
    pub delta_tilde: Vec<DeltaRow>,
    /// Worst-case POD residuals on the training set.
    pub width_proxy: Vec<f64>,
    pub piecewise_cells: usize,
}

fn stats(errors: &[f64]) -> (f64, f64) {
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    (worst, errors.iter().sum::<f64>() / errors.len().max(1) as f64)
}

/// Fits every estimator on `train` and evaluates it on `held_out`.
pub fn compare_estimators(
    model: &ParametricModel,
    train: &TrainingSet,
    held_out: &TrainingSet,
    setup: &ObservationSetup,
    cfg: &CompareConfig,
) -> Result<BenchmarkReport> {
    if held_out.is_empty() {
        return Err(Error::InvalidInput("held-out set is empty".into()));
    }
    let space = model.space();
    let truth: Vec<DVector<f64>> = (0..held_out.len()).map(|j| held_out.snapshot(j)).collect();
    let eval = |f: &(dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync)| -> Result<(f64, f64)> {
        let errs = truth
            .par_iter()
            .map(|u| Ok(space.distance(u, &f(u)?)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(stats(&errs))
    };
    let mut rows = Vec::new();
    let mut push = |method: &str, (worst, mean): (f64, f64)| {
        rows.push(EstimatorRow {
            method: method.to_string(),
            worst,
            mean,
        })
    };

    let gb = greedy_reduced_basis(space, train.snapshots(), cfg.n, 0.0)?;
    let lin = PbdwOperator::fit(space, &gb.basis, setup)?;
    push("linear_pbdw", eval(&|u| Ok(lin.estimate_state(u)))?);

    let ubar = model.solve(&model.param_box().center())?;
    let centered = DMatrix::from_columns(&(0..train.len()).map(|j| train.snapshot(j) - &ubar).collect::<Vec<_>>());
    let gb_c = greedy_reduced_basis(space, &centered, cfg.n, 0.0)?;
    let aff = AffinePbdw::fit(space, ubar, &gb_c.basis, setup)?;
    push("affine_pbdw", eval(&|u| Ok(aff.estimate_state(u)))?);

    let prob = build_problem(space, train, setup, &gb.basis)?;
    let opt = primal_dual_solve(&prob, &cfg.primal_dual)?;
    push("optimal_affine", eval(&|u| opt.map.estimate_state(u))?);

    let fam = build_family(model, train, setup, Criterion::Sigma(cfg.sigma), cfg.strategy, cfg.budget)?;
    push(
        "piecewise_oracle",
        eval(&|u| Ok(fam.estimate_state(model, u, Selection::Oracle(u))?.state))?,
    );
    push(
        "piecewise_surrogate",
        eval(&|u| Ok(fam.estimate_state(model, u, Selection::Surrogate)?.state))?,
    );

    let delta = delta_tilde(space, train, setup, &cfg.sigmas)?;
    let width = pod_width_proxy(space, train, cfg.width_order.min(train.len()))?;
    Ok(BenchmarkReport {
        estimators: rows,
        delta_tilde: delta,
        width_proxy: width.worst,
        piecewise_cells: fam.len(),
    })
}

impl BenchmarkReport {
    pub fn estimator(&self, method: &str) -> Option<&EstimatorRow> {
        self.estimators.iter().find(|r| r.method == method)
    }

    /// Rows `(kind, key, worst_or_value, mean_or_frame_lo, frame_hi)` for every section.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let f = |v: f64| format!("{v:.12e}");
        wtr.write_record(["kind", "key", "value", "mean_or_frame_lo", "frame_hi"])?;
        for r in &self.estimators {
            wtr.write_record(["estimator", &r.method, &f(r.worst), &f(r.mean), ""])?;
        }
        for d in &self.delta_tilde {
            wtr.write_record(["delta_tilde", &f(d.sigma), &f(d.delta_tilde), &f(d.frame_lo), &f(d.frame_hi)])?;
        }
        for (k, w) in self.width_proxy.iter().enumerate() {
            wtr.write_record(["width_proxy", &k.to_string(), &f(*w), "", ""])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{sample_training_set, training_set_from, Field};
    use crate::sensing::Dictionary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn euclid(points: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(points[0].len(), points.len(), |i, j| points[j][i])
    }

    #[test]
    fn two_snapshot_delta() {
        let space = InnerProductSpace::euclidean(2);
        let setup = crate::sensing::build_observation_from(&space, Vec::new(), DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let t = TrainingSet::new(
            vec![vec![0.0], vec![1.0]],
            DMatrix::from_column_slice(2, 2, &[0.0, 0.0, 0.1, 0.99498743710662]),
        )
        .unwrap();
        let rows = delta_tilde(&space, &t, &setup, &[0.05, 0.1, 1e9]).unwrap();
        assert_eq!(rows[0].delta_tilde, 0.0);
        assert!((rows[1].delta_tilde - 1.0).abs() < 1e-12);
        assert!((rows[2].delta_tilde - 1.0).abs() < 1e-12);
        assert!((rows[0].frame_hi - (rows[0].delta_tilde_2sigma + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn delta_on_testbed_is_monotone() {
        let model = crate::testbed::elliptic_2d(63).unwrap();
        let t = sample_training_set(&model, &[6, 6]).unwrap();
        let dict = Dictionary::uniform_points(model.space(), 8).unwrap();
        let setup = dict.observation(model.space(), &[1, 4, 6]).unwrap();
        let sigmas = [0.0, 1e-3, 1e-2, 1e-1, 1e9];
        let rows = delta_tilde(model.space(), &t, &setup, &sigmas).unwrap();
        assert_eq!(rows[0].delta_tilde, 0.0);
        assert!(rows.windows(2).all(|w| w[1].delta_tilde >= w[0].delta_tilde));
        assert!((rows[4].delta_tilde - diameter(model.space(), t.snapshots())).abs() < 1e-12);
        for r in &rows {
            assert!(r.frame_lo <= r.frame_hi);
        }
    }

    #[test]
    fn chebyshev_small_cases() {
        let space = InnerProductSpace::euclidean(2);
        let (c, r) = chebyshev_finite(&space, &euclid(&[&[0.3, -2.0]])).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(c.as_slice(), &[0.3, -2.0]);
        let (c, r) = chebyshev_finite(&space, &euclid(&[&[0.0, 0.0], &[2.0, 2.0]])).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12 && (c[0] - 1.0).abs() < 1e-12);
        let s = 1.7;
        let tri = euclid(&[&[0.0, 0.0], &[s, 0.0], &[0.5 * s, 0.5 * 3f64.sqrt() * s]]);
        let (_, r) = chebyshev_finite(&space, &tri).unwrap();
        assert!((r - s / 3f64.sqrt()).abs() < 1e-12);
        // Obtuse triangle: the ball is the longest side's diametral ball.
        let (_, r) = chebyshev_finite(&space, &euclid(&[&[0.0, 0.0], &[4.0, 0.0], &[2.0, 0.5]])).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_in_fem_metric() {
        let space = crate::forward::h10_space(15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = DMatrix::from_fn(15, 12, |_, _| rng.random_range(-1.0..1.0));
        let (c, r) = chebyshev_finite(&space, &pts).unwrap();
        let far = (0..12)
            .map(|j| space.distance(&c, &pts.column(j).into_owned()))
            .fold(0.0, f64::max);
        assert!((far - r).abs() < 1e-10 * r);
        let d = diameter(&space, &pts);
        assert!(0.5 * d <= r * (1.0 + 1e-12) && r <= d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn radius_between_half_diameter_and_diameter(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..40)
        ) {
            let space = InnerProductSpace::euclidean(3);
            let m = DMatrix::from_fn(3, pts.len(), |i, j| pts[j][i]);
            let (c, r) = chebyshev_finite(&space, &m).unwrap();
            let d = diameter(&space, &m);
            prop_assert!(0.5 * d <= r * (1.0 + 1e-12) + 1e-12);
            prop_assert!(r <= d + 1e-12);
            for j in 0..pts.len() {
                prop_assert!((m.column(j) - &c).norm() <= r * (1.0 + 1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn held_out_grid_is_shifted() {
        let bx = ParameterBox::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let g = held_out_grid(&bx, &[2, 4]).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], vec![-0.5, 0.125]);
        assert_eq!(g[7], vec![0.5, 0.875]);
    }

    #[test]
    fn affine_manifold_all_methods_exact() {
        let model = ParametricModel::with_affine_rhs(
            63,
            Field::constant(1.0),
            vec![Field::constant(0.0)],
            Field::constant(1.0),
            vec![Field::indicator(0.2, 0.7, 1.0).unwrap()],
            ParameterBox::new(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let train = sample_training_set(&model, &[9]).unwrap();
        let held = training_set_from(&model, held_out_grid(model.param_box(), &[8]).unwrap()).unwrap();
        let dict = Dictionary::uniform_points(model.space(), 7).unwrap();
        let setup = dict.observation(model.space(), &[1, 3, 5]).unwrap();
        let cfg = CompareConfig {
            n: 3,
            sigma: 1e-8,
            budget: 8,
            strategy: SplitStrategy::FullDyadic,
            primal_dual: PrimalDualOptions {
                iters: 4000,
                ..Default::default()
            },
            sigmas: vec![0.0, 0.01],
            width_order: 3,
        };
        let report = compare_estimators(&model, &train, &held, &setup, &cfg).unwrap();
        for r in &report.estimators {
            // The primal-dual solver converges at O(1/k); the others are exact.
            let tol = if r.method == "optimal_affine" { 1e-4 } else { 1e-8 };
            assert!(r.worst <= tol, "{} {}", r.method, r.worst);
        }
        let oracle = report.estimator("piecewise_oracle").unwrap().worst;
        assert!(oracle <= report.estimator("piecewise_surrogate").unwrap().worst + 1e-15);
        let mut a = Vec::new();
        let mut b = Vec::new();
        report.write_csv(&mut a).unwrap();
        compare_estimators(&model, &train, &held, &setup, &cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
