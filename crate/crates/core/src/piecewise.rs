//! Piecewise affine reduced models on a partition of the parameter box.
//!
//! Each cell `Y_k` carries an offset `ū_k = u(ȳ_k)` at its center and a
//! nested greedy hierarchy `V̄_{0,k} ⊂ … ⊂ V̄_{m,k}` fitted to the local
//! training snapshots. A cell is accepted when its test quantity `τ_k`
//! passes the admissibility criterion; otherwise it is split and the
//! children are tested in breadth-first order.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{greedy_reduced_basis, residual_surrogate, ParameterBox, ParametricModel, TrainingSet};
use crate::linalg::{inf_sup_beta, Subspace};
use crate::pbdw::{AffinePbdw, BETA_MIN};
use crate::sensing::ObservationSetup;

/// Admissibility test for a cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `min_n μ_n ε_n ≤ σ`.
    Sigma(f64),
    /// `min_n max(μ_n/μ, ε_n/ε) ≤ 1`.
    EpsMu { eps: f64, mu: f64 },
}

impl Criterion {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Criterion::Sigma(s) => s >= 0.0,
            Criterion::EpsMu { eps, mu } => eps >= 0.0 && mu >= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid admissibility criterion {self:?}")))
        }
    }

    pub fn accepts(&self, tau: f64) -> bool {
        match self {
            Criterion::Sigma(s) => tau <= *s,
            Criterion::EpsMu { .. } => tau <= 1.0,
        }
    }
}

/// `τ` and the lowest `n` attaining it.
pub fn tau(eps: &[f64], mu: &[f64], criterion: Criterion) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (n, (&e, &m)) in eps.iter().zip(mu).enumerate() {
        let v = match criterion {
            Criterion::Sigma(_) => {
                if m.is_infinite() {
                    f64::INFINITY
                } else {
                    m * e
                }
            }
            Criterion::EpsMu { eps: eps_t, mu: mu_t } => (m / mu_t).max(e / eps_t),
        };
        if v < best.0 {
            best = (v, n);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Halve every side: `2^d` children.
    FullDyadic,
    /// Halve one side, chosen by the children's `τ`; cyclic on even levels.
    GreedyCoordinate,
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub param_box: ParameterBox,
    /// Number of splits from the root.
    pub level: usize,
    pub center: Vec<f64>,
    /// `ū_k = u(ȳ_k)`.
    pub ubar: DVector<f64>,
    /// Orthonormal greedy basis; `basis.leading(n)` is `V̄_{n,k}`.
    pub basis: Subspace,
    /// `ε_{n,k}` for `n = 0..=basis.dim()`.
    pub eps: Vec<f64>,
    /// `μ_{n,k}`, infinite when `β ≤ 1e-10`.
    pub mu: Vec<f64>,
    pub chosen_n: usize,
    pub tau: f64,
    /// Indices of the training snapshots inside the cell.
    pub train_idx: Vec<usize>,
    op: Option<AffinePbdw>,
}

impl Cell {
    pub fn reduced_space(&self) -> Subspace {
        self.basis.leading(self.chosen_n)
    }

    /// `ε_k` of the chosen space.
    pub fn eps_chosen(&self) -> f64 {
        self.eps[self.chosen_n]
    }

    /// `μ_k` of the chosen space.
    pub fn mu_chosen(&self) -> f64 {
        self.mu[self.chosen_n]
    }

    /// Affine PBDW of the chosen space; `None` if unstable.
    pub fn operator(&self) -> Option<&AffinePbdw> {
        self.op.as_ref()
    }
}

/// Half-open membership `lo < y ≤ hi`, closed at the root's lower faces.
pub fn in_cell(root: &ParameterBox, cell: &ParameterBox, y: &[f64]) -> bool {
    y.iter().enumerate().all(|(i, &v)| {
        let (lo, hi) = (cell.lo[i], cell.hi[i]);
        v <= hi && (v > lo || (lo <= root.lo[i] && v >= lo))
    })
}

struct Ctx<'a> {
    model: &'a ParametricModel,
    t: &'a TrainingSet,
    setup: &'a ObservationSetup,
    w: Subspace,
    criterion: Criterion,
}

impl Ctx<'_> {
    fn build(&self, bx: ParameterBox, level: usize) -> Result<Cell> {
        let space = self.model.space();
        let root = self.model.param_box();
        let train_idx: Vec<usize> = (0..self.t.len())
            .filter(|&j| in_cell(root, &bx, &self.t.params()[j]))
            .collect();
        let center = bx.center();
        let ubar = self.model.solve(&center)?;
        let cols: Vec<DVector<f64>> = train_idx.iter().map(|&j| self.t.snapshot(j) - &ubar).collect();
        // The center snapshot is one of the local points; its difference is zero.
        let cap = self.setup.m().min(train_idx.len());
        let (basis, eps) = if cols.is_empty() {
            (Subspace::zero(space.dim()), vec![0.0])
        } else {
            let gb = greedy_reduced_basis(space, &DMatrix::from_columns(&cols), cap, 0.0)?;
            (gb.basis, gb.errors)
        };
        let mut mu = vec![1.0];
        for n in 1..eps.len() {
            let beta = inf_sup_beta(space, &basis.leading(n), &self.w)?;
            mu.push(if beta <= BETA_MIN { f64::INFINITY } else { 1.0 / beta });
        }
        let (tau, chosen_n) = tau(&eps, &mu, self.criterion);
        let op = if mu[chosen_n].is_finite() {
            Some(AffinePbdw::fit(space, ubar.clone(), &basis.leading(chosen_n), self.setup)?)
        } else {
            None
        };
        Ok(Cell {
            param_box: bx,
            level,
            center,
            ubar,
            basis,
            eps,
            mu,
            chosen_n,
            tau,
            train_idx,
            op,
        })
    }

    fn build_all(&self, boxes: Vec<ParameterBox>, level: usize) -> Result<Vec<Cell>> {
        boxes.into_par_iter().map(|b| self.build(b, level)).collect()
    }
}

fn halves(bx: &ParameterBox, axes: &[usize]) -> Vec<ParameterBox> {
    let mut out = vec![bx.clone()];
    for &i in axes {
        let mid = 0.5 * (bx.lo[i] + bx.hi[i]);
        out = out
            .into_iter()
            .flat_map(|b| {
                let mut lower = b.clone();
                lower.hi[i] = mid;
                let mut upper = b;
                upper.lo[i] = mid;
                [lower, upper]
            })
            .collect();
    }
    out
}

/// Smallest positive gap between distinct training values along each axis.
fn grid_spacing(t: &TrainingSet, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let mut v: Vec<f64> = t.params().iter().map(|y| y[i]).collect();
            v.sort_by(f64::total_cmp);
            v.windows(2)
                .map(|w| w[1] - w[0])
                .filter(|g| *g > 1e-12)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn split_with(ctx: &Ctx<'_>, cell: &Cell, strategy: SplitStrategy, spacing: &[f64]) -> Result<Vec<Cell>> {
    let bx = &cell.param_box;
    let d = bx.dim();
    let splittable = |i: usize| 0.5 * (bx.hi[i] - bx.lo[i]) >= spacing[i] * (1.0 - 1e-9);
    let starved = || Error::RefinementStarvation {
        level: cell.level,
        local_points: cell.train_idx.len(),
    };
    let level = cell.level + 1;
    match strategy {
        SplitStrategy::FullDyadic => {
            if !(0..d).all(splittable) {
                return Err(starved());
            }
            ctx.build_all(halves(bx, &(0..d).collect::<Vec<_>>()), level)
        }
        SplitStrategy::GreedyCoordinate => {
            if cell.level % 2 == 0 {
                let i = (cell.level / 2) % d;
                if !splittable(i) {
                    return Err(starved());
                }
                return ctx.build_all(halves(bx, &[i]), level);
            }
            let mut best: Option<(f64, Vec<Cell>)> = None;
            for i in (0..d).filter(|&i| splittable(i)) {
                let children = ctx.build_all(halves(bx, &[i]), level)?;
                let t = children.iter().map(|c| c.tau).fold(0.0, f64::max);
                if best.as_ref().is_none_or(|(b, _)| t < *b) {
                    best = Some((t, children));
                }
            }
            best.map(|(_, c)| c).ok_or_else(starved)
        }
    }
}

/// Accepted cells partitioning `Y`.
#[derive(Clone, Debug)]
pub struct AdmissibleFamily {
    pub cells: Vec<Cell>,
    pub criterion: Criterion,
    pub strategy: SplitStrategy,
    /// Set when the budget stopped refinement; failing cells are kept.
    pub partial: bool,
    root: ParameterBox,
    setup: ObservationSetup,
}

/// Builds a family by breadth-first splitting.
///
/// `budget` caps the number of cells. A cell that must be split but is
/// already as thin as the training grid raises a refinement-starvation error.
pub fn build_family(
    model: &ParametricModel,
    t: &TrainingSet,
    setup: &ObservationSetup,
    criterion: Criterion,
    strategy: SplitStrategy,
    budget: usize,
) -> Result<AdmissibleFamily> {
    criterion.validate()?;
    if budget == 0 {
        return Err(Error::InvalidInput("cell budget must be at least 1".into()));
    }
    if t.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let d = model.param_dim();
    if t.params()[0].len() != d {
        return Err(Error::DimensionMismatch {
            op: "piecewise::build_family",
            expected: d,
            got: t.params()[0].len(),
        });
    }
    let ctx = Ctx {
        model,
        t,
        setup,
        w: setup.w_subspace(),
        criterion,
    };
    let spacing = grid_spacing(t, d);
    let children_per_split = match strategy {
        SplitStrategy::FullDyadic => 1usize << d,
        SplitStrategy::GreedyCoordinate => 2,
    };
    let mut queue = VecDeque::from([ctx.build(model.param_box().clone(), 0)?]);
    let mut accepted = Vec::new();
    let mut partial = false;
    while let Some(cell) = queue.pop_front() {
        if criterion.accepts(cell.tau) {
            accepted.push(cell);
            continue;
        }
        if accepted.len() + queue.len() + children_per_split > budget {
            partial = true;
            accepted.push(cell);
            continue;
        }
        queue.extend(split_with(&ctx, &cell, strategy, &spacing)?);
    }
    accepted.sort_by(|a, b| {
        a.param_box
            .lo
            .iter()
            .zip(&b.param_box.lo)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if partial {
        let failing = accepted.iter().filter(|c| !criterion.accepts(c.tau)).count();
        log::warn!("cell budget {budget} reached with {failing} failing cells");
    }
    Ok(AdmissibleFamily {
        cells: accepted,
        criterion,
        strategy,
        partial,
        root: model.param_box().clone(),
        setup: setup.clone(),
    })
}

/// How the estimate picks a cell.
#[derive(Clone, Copy, Debug)]
pub enum Selection<'a> {
    /// True state known: minimize `‖u - u*_k‖`.
    Oracle(&'a DVector<f64>),
    /// Minimize the distance of `u*_k` to the training snapshots and to the
    /// solution at the residual minimizer.
    Ideal(&'a TrainingSet),
    /// Minimize the residual surrogate `𝒮(u*_k)`.
    Surrogate,
}

#[derive(Clone, Debug)]
pub struct CellScore {
    pub k: usize,
    /// Selection score; `None` for unstable cells.
    pub score: Option<f64>,
    /// `‖u - u*_k‖` when the truth is known.
    pub error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FamilyEstimate {
    pub state: DVector<f64>,
    pub cell: usize,
    pub scores: Vec<CellScore>,
}

impl FamilyEstimate {
    /// Rows `(k, score, error)`; missing values are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["k", "score", "error"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for s in &self.scores {
            wtr.write_record([s.k.to_string(), opt(s.score), opt(s.error)])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct CellRecord<'a> {
    lo: &'a [f64],
    hi: &'a [f64],
    level: usize,
    chosen_n: usize,
    tau: f64,
    eps: &'a [f64],
    mu: &'a [f64],
    train_points: usize,
}

#[derive(Serialize)]
struct FamilyRecord<'a> {
    criterion: Criterion,
    strategy: SplitStrategy,
    partial: bool,
    k: usize,
    cells: Vec<CellRecord<'a>>,
}

/// Lossless form of a cell; operators are refitted on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellData {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub level: usize,
    pub ubar: Vec<f64>,
    /// Basis columns.
    pub basis: Vec<Vec<f64>>,
    pub eps: Vec<f64>,
    /// `None` encodes an infinite `μ`.
    pub mu: Vec<Option<f64>>,
    pub chosen_n: usize,
    pub tau: f64,
    pub train_idx: Vec<usize>,
}

/// Lossless form of a family for caching.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyData {
    pub criterion: Criterion,
    pub strategy: SplitStrategy,
    pub partial: bool,
    pub cells: Vec<CellData>,
}

impl AdmissibleFamily {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn setup(&self) -> &ObservationSetup {
        &self.setup
    }

    /// Cell containing `y` under the half-open convention.
    pub fn cell_of(&self, y: &[f64]) -> Option<usize> {
        self.cells.iter().position(|c| in_cell(&self.root, &c.param_box, y))
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.param_box.volume()).sum()
    }

    /// Whether every cell passes the criterion.
    pub fn admissible(&self) -> bool {
        self.cells.iter().all(|c| self.criterion.accepts(c.tau))
    }

    /// Estimate from orthonormal `W`-coordinates.
    pub fn estimate(
        &self,
        model: &ParametricModel,
        coords: &DVector<f64>,
        selection: Selection<'_>,
        truth: Option<&DVector<f64>>,
    ) -> Result<FamilyEstimate> {
        if coords.len() != self.setup.m() {
            return Err(Error::DimensionMismatch {
                op: "piecewise::estimate",
                expected: self.setup.m(),
                got: coords.len(),
            });
        }
        let space = model.space();
        let truth = match selection {
            Selection::Oracle(u) => Some(u),
            _ => truth,
        };
        let per_cell: Vec<Result<(Option<DVector<f64>>, CellScore)>> = self
            .cells
            .par_iter()
            .enumerate()
            .map(|(k, cell)| {
                let Some(op) = cell.op.as_ref() else {
                    return Ok((None, CellScore { k, score: None, error: None }));
                };
                let u = op.reconstruct(coords);
                let error = truth.map(|x| space.distance(x, &u));
                let score = match selection {
                    Selection::Oracle(_) => error.expect("oracle has a truth"),
                    Selection::Surrogate => residual_surrogate(model, &u)?.value,
                    Selection::Ideal(t) => {
                        let near = (0..t.len())
                            .map(|j| space.distance(&t.snapshot(j), &u))
                            .fold(f64::INFINITY, f64::min);
                        let y = residual_surrogate(model, &u)?.y_star;
                        near.min(space.distance(&model.solve(&y)?, &u))
                    }
                };
                Ok((Some(u), CellScore { k, score: Some(score), error }))
            })
            .collect();
        let mut best: Option<(f64, usize)> = None;
        let mut states = Vec::with_capacity(per_cell.len());
        let mut scores = Vec::with_capacity(per_cell.len());
        for r in per_cell {
            let (u, s) = r?;
            if let Some(v) = s.score {
                if best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, s.k));
                }
            }
            states.push(u);
            scores.push(s);
        }
        let Some((_, cell)) = best else {
            return Err(Error::Refused("no cell of the family is stable with respect to W".into()));
        };
        Ok(FamilyEstimate {
            state: states.swap_remove(cell).expect("selected cell is stable"),
            cell,
            scores,
        })
    }

    /// Estimate from the noiseless observation of `u`.
    pub fn estimate_state(
        &self,
        model: &ParametricModel,
        u: &DVector<f64>,
        selection: Selection<'_>,
    ) -> Result<FamilyEstimate> {
        self.estimate(model, &self.setup.coords(u), selection, Some(u))
    }

    pub fn to_data(&self) -> FamilyData {
        FamilyData {
            criterion: self.criterion,
            strategy: self.strategy,
            partial: self.partial,
            cells: self
                .cells
                .iter()
                .map(|c| CellData {
                    lo: c.param_box.lo.clone(),
                    hi: c.param_box.hi.clone(),
                    level: c.level,
                    ubar: c.ubar.iter().copied().collect(),
                    basis: (0..c.basis.dim()).map(|k| c.basis.column(k).iter().copied().collect()).collect(),
                    eps: c.eps.clone(),
                    mu: c.mu.iter().map(|m| m.is_finite().then_some(*m)).collect(),
                    chosen_n: c.chosen_n,
                    tau: c.tau,
                    train_idx: c.train_idx.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds a family saved with [`AdmissibleFamily::to_data`].
    pub fn from_data(model: &ParametricModel, setup: &ObservationSetup, data: FamilyData) -> Result<Self> {
        let space = model.space();
        let cells = data
            .cells
            .into_iter()
            .map(|c| {
                let param_box = ParameterBox::new(c.lo, c.hi)?;
                let ubar = DVector::from_vec(c.ubar);
                space.check_vector("piecewise::from_data", &ubar)?;
                let cols: Vec<DVector<f64>> = c.basis.into_iter().map(DVector::from_vec).collect();
                let basis = Subspace::from_vectors(space.dim(), &cols);
                let mu: Vec<f64> = c.mu.iter().map(|m| m.unwrap_or(f64::INFINITY)).collect();
                if c.eps.len() != basis.dim() + 1 || mu.len() != c.eps.len() || c.chosen_n >= mu.len() {
                    return Err(Error::InvalidInput("inconsistent cached cell hierarchy".into()));
                }
                let op = if mu[c.chosen_n].is_finite() {
                    Some(AffinePbdw::fit(space, ubar.clone(), &basis.leading(c.chosen_n), setup)?)
                } else {
                    None
                };
                Ok(Cell {
                    center: param_box.center(),
                    param_box,
                    level: c.level,
                    ubar,
                    basis,
                    eps: c.eps,
                    mu,
                    chosen_n: c.chosen_n,
                    tau: c.tau,
                    train_idx: c.train_idx,
                    op,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cells,
            criterion: data.criterion,
            strategy: data.strategy,
            partial: data.partial,
            root: model.param_box().clone(),
            setup: setup.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let record = FamilyRecord {
            criterion: self.criterion,
            strategy: self.strategy,
            partial: self.partial,
            k: self.len(),
            cells: self
                .cells
                .iter()
                .map(|c| CellRecord {
                    lo: &c.param_box.lo,
                    hi: &c.param_box.hi,
                    level: c.level,
                    chosen_n: c.chosen_n,
                    tau: c.tau,
                    eps: &c.eps,
                    mu: &c.mu,
                    train_points: c.train_idx.len(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{sample_training_set, Field};
    use crate::sensing::Dictionary;
    use crate::testbed;

    #[test]
    fn tau_arithmetic() {
        assert_eq!(tau(&[0.5, 0.1], &[1.0, 20.0], Criterion::Sigma(0.3)), (0.5, 0));
        assert_eq!(tau(&[0.0, 0.0], &[1.0, 3.0], Criterion::Sigma(0.1)), (0.0, 0));
        let (t, n) = tau(&[0.4, 0.05, 0.01], &[1.0, 2.0, 8.0], Criterion::EpsMu { eps: 0.1, mu: 4.0 });
        assert!((t - 0.5).abs() < 1e-15);
        assert_eq!(n, 1);
        assert!(tau(&[0.3, 0.2], &[1.0, f64::INFINITY], Criterion::Sigma(1.0)).0 == 0.3);
    }

    #[test]
    fn membership_is_half_open() {
        let root = ParameterBox::new(vec![-1.0], vec![1.0]).unwrap();
        let left = ParameterBox::new(vec![-1.0], vec![0.0]).unwrap();
        let right = ParameterBox::new(vec![0.0], vec![1.0]).unwrap();
        assert!(in_cell(&root, &left, &[-1.0]) && in_cell(&root, &left, &[0.0]));
        assert!(!in_cell(&root, &right, &[0.0]) && in_cell(&root, &right, &[1.0]));
    }

    #[test]
    fn halves_cover_the_parent() {
        let bx = ParameterBox::new(vec![0.0, -1.0, 2.0], vec![1.0, 1.0, 3.0]).unwrap();
        let kids = halves(&bx, &[0, 1, 2]);
        assert_eq!(kids.len(), 8);
        let v: f64 = kids.iter().map(|b| b.volume()).sum();
        assert!((v - bx.volume()).abs() < 1e-12);
        assert_eq!(halves(&bx, &[1]).len(), 2);
    }

    fn setup_2d() -> (ParametricModel, TrainingSet, ObservationSetup) {
        let model = testbed::rotating_layers(63).unwrap();
        let t = sample_training_set(&model, &[9, 9]).unwrap();
        let dict = Dictionary::uniform_points(model.space(), 6).unwrap();
        let setup = dict.observation(model.space(), &(0..6).collect::<Vec<_>>()).unwrap();
        (model, t, setup)
    }

    #[test]
    fn hierarchy_invariants() {
        let (model, t, setup) = setup_2d();
        let fam = build_family(&model, &t, &setup, Criterion::Sigma(1e9), SplitStrategy::FullDyadic, 16).unwrap();
        assert_eq!(fam.len(), 1);
        let c = &fam.cells[0];
        assert_eq!(c.mu[0], 1.0);
        assert_eq!(c.train_idx.len(), t.len());
        assert!(c.eps.windows(2).all(|w| w[1] <= w[0]));
        assert!(c.mu.iter().all(|m| *m >= 1.0 - 1e-12));
        assert_eq!(c.chosen_n, tau(&c.eps, &c.mu, fam.criterion).1);
    }

    #[test]
    fn sigma_family_is_admissible_and_partitions() {
        let (model, t, setup) = setup_2d();
        let root = build_family(&model, &t, &setup, Criterion::Sigma(1e9), SplitStrategy::FullDyadic, 1).unwrap();
        let sigma = 0.2 * root.cells[0].tau;
        for (strategy, s) in [
            (SplitStrategy::FullDyadic, sigma),
            (SplitStrategy::FullDyadic, 0.5 * sigma),
            (SplitStrategy::GreedyCoordinate, sigma),
        ] {
            let fam = build_family(&model, &t, &setup, Criterion::Sigma(s), strategy, 64).unwrap();
            assert!(!fam.partial && fam.admissible());
            assert!((fam.total_volume() - 4.0).abs() < 1e-12);
            for c in &fam.cells {
                assert!(c.mu_chosen() * c.eps_chosen() <= s);
            }
            for (j, y) in t.params().iter().enumerate() {
                let owners: Vec<usize> = (0..fam.len()).filter(|&k| fam.cells[k].train_idx.contains(&j)).collect();
                assert_eq!(owners, vec![fam.cell_of(y).unwrap()]);
            }
            let worst = (0..t.len())
                .map(|j| {
                    let u = t.snapshot(j);
                    let e = fam.estimate_state(&model, &u, Selection::Oracle(&u)).unwrap();
                    model.space().distance(&u, &e.state)
                })
                .fold(0.0, f64::max);
            assert!(worst <= s * (1.0 + 1e-8));
        }
        let k = |s: f64| {
            build_family(&model, &t, &setup, Criterion::Sigma(s), SplitStrategy::FullDyadic, 64)
                .unwrap()
                .len()
        };
        assert!(k(0.5 * sigma) >= k(sigma));
    }

    #[test]
    fn greedy_coordinate_forces_first_axis() {
        let (model, t, setup) = setup_2d();
        let fam = build_family(&model, &t, &setup, Criterion::Sigma(0.0), SplitStrategy::GreedyCoordinate, 2).unwrap();
        assert!(fam.partial);
        assert_eq!(fam.len(), 2);
        assert_eq!(fam.cells[0].param_box.hi, vec![0.0, 1.0]);
        assert_eq!(fam.cells[1].param_box.lo, vec![0.0, -1.0]);
    }

    #[test]
    fn starvation_is_reported() {
        let (model, _, setup) = setup_2d();
        let coarse = sample_training_set(&model, &[3, 3]).unwrap();
        let err = build_family(&model, &coarse, &setup, Criterion::Sigma(0.0), SplitStrategy::FullDyadic, 1000).unwrap_err();
        assert!(matches!(err, Error::RefinementStarvation { .. }));
    }

    #[test]
    fn affine_manifold_needs_one_cell() {
        let model = ParametricModel::with_affine_rhs(
            63,
            Field::constant(1.0),
            vec![Field::constant(0.0), Field::constant(0.0)],
            Field::constant(1.0),
            vec![Field::indicator(0.0, 0.5, 1.0).unwrap(), Field::indicator(0.3, 0.9, 2.0).unwrap()],
            ParameterBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let t = sample_training_set(&model, &[5, 5]).unwrap();
        let dict = Dictionary::uniform_points(model.space(), 5).unwrap();
        let setup = dict.observation(model.space(), &[0, 2, 4]).unwrap();
        let fam = build_family(&model, &t, &setup, Criterion::Sigma(1e-8), SplitStrategy::FullDyadic, 16).unwrap();
        assert_eq!(fam.len(), 1);
        assert_eq!(fam.cells[0].chosen_n, 2);
        assert!(fam.cells[0].eps_chosen() < 1e-10);
        let u = model.solve(&[0.3, -0.7]).unwrap();
        let e = fam.estimate_state(&model, &u, Selection::Surrogate).unwrap();
        assert!(model.space().distance(&u, &e.state) < 1e-8);
    }

    #[test]
    fn single_cell_is_affine_pbdw_and_selections_order() {
        let (model, t, setup) = setup_2d();
        let fam = build_family(&model, &t, &setup, Criterion::Sigma(1e9), SplitStrategy::FullDyadic, 1).unwrap();
        let c = &fam.cells[0];
        let direct = AffinePbdw::fit(model.space(), c.ubar.clone(), &c.reduced_space(), &setup).unwrap();
        let u = model.solve(&[0.33, -0.21]).unwrap();
        let e = fam.estimate_state(&model, &u, Selection::Surrogate).unwrap();
        assert!(model.space().distance(&e.state, &direct.estimate_state(&u)) < 1e-12);

        let fam = build_family(&model, &t, &setup, Criterion::Sigma(0.0), SplitStrategy::FullDyadic, 16).unwrap();
        let held = [[0.37, -0.52], [-0.81, 0.12], [0.05, 0.93]];
        for y in held {
            let u = model.solve(&y).unwrap();
            let oracle = fam.estimate_state(&model, &u, Selection::Oracle(&u)).unwrap();
            let ideal = fam.estimate_state(&model, &u, Selection::Ideal(&t)).unwrap();
            let sur = fam.estimate_state(&model, &u, Selection::Surrogate).unwrap();
            let err = |s: &DVector<f64>| model.space().distance(&u, s);
            assert!(err(&oracle.state) <= err(&ideal.state) + 1e-14);
            assert!(err(&oracle.state) <= err(&sur.state) + 1e-14);
            let mut buf = Vec::new();
            sur.write_csv(&mut buf).unwrap();
            assert_eq!(String::from_utf8(buf).unwrap().lines().count(), fam.len() + 1);
        }
        let data = serde_json::to_string(&fam.to_data()).unwrap();
        let back = AdmissibleFamily::from_data(&model, &setup, serde_json::from_str(&data).unwrap()).unwrap();
        let u = model.solve(&[0.61, 0.44]).unwrap();
        let (a, b) = (
            fam.estimate_state(&model, &u, Selection::Surrogate).unwrap(),
            back.estimate_state(&model, &u, Selection::Surrogate).unwrap(),
        );
        assert_eq!(a.cell, b.cell);
        assert!(model.space().distance(&a.state, &b.state) < 1e-12);
        let json: serde_json::Value = serde_json::from_str(&fam.to_json().unwrap()).unwrap();
        assert_eq!(json["k"], fam.len());
        assert_eq!(json["cells"][0]["mu"][0], 1.0);
    }

    #[test]
    fn noise_growth_is_bounded() {
        let (model, t, setup) = setup_2d();
        let root = build_family(&model, &t, &setup, Criterion::Sigma(1e9), SplitStrategy::FullDyadic, 1).unwrap();
        let sigma = 0.3 * root.cells[0].tau;
        let fam = build_family(&model, &t, &setup, Criterion::Sigma(sigma), SplitStrategy::FullDyadic, 64).unwrap();
        let eps_noise = 1e-3;
        for j in [3, 40, 77] {
            let u = t.snapshot(j);
            let k = fam.cell_of(&t.params()[j]).unwrap();
            let clean = fam.estimate_state(&model, &u, Selection::Oracle(&u)).unwrap();
            assert_eq!(clean.cell, k);
            let data = setup.measure(&u);
            let noisy = setup.add_noise(&data, eps_noise, j as u64).unwrap();
            let op = fam.cells[k].operator().unwrap();
            let e_clean = model.space().distance(&u, &op.reconstruct(&setup.coords(&data.w)));
            let e_noisy = model.space().distance(&u, &op.reconstruct(&setup.coords(&noisy.w)));
            assert!(e_noisy <= e_clean + 3.0 * fam.cells[k].mu_chosen() * eps_noise);
        }
    }
}
