//! Measurement functionals on the P1 space and their Riesz representers.
//!
//! A functional `ℓ` is stored through its load vector `(ℓ(φ_i))_i`. The
//! representer `ω` solves `G ω = ℓ`; dictionary members are normalized so
//! that `‖ω‖ = 1`, hence `ℓ(u) / ‖ℓ‖ = <ω, u> = (G ω)ᵀ u`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_sorted, InnerProductSpace, OrthonormalBasis, Subspace};

/// Normalization constant of the quartic bump `c (1 - s²)²` on [-1, 1].
pub const BUMP_C: f64 = 15.0 / 16.0;

/// Kind of measurement functional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    PointEval,
    LocalAverage,
}

/// One dictionary member: a point evaluation at `location`, or a local
/// average of half-width `width` centred there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub kind: SensorKind,
    pub location: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

impl Sensor {
    pub fn point(x: f64) -> Self {
        Self {
            kind: SensorKind::PointEval,
            location: x,
            width: None,
        }
    }

    pub fn average(x: f64, tau: f64) -> Self {
        Self {
            kind: SensorKind::LocalAverage,
            location: x,
            width: Some(tau),
        }
    }

    /// Unit-norm representer on `space` (uniform P1 mesh with `space.dim()` interior nodes).
    pub fn representer(&self, space: &InnerProductSpace) -> Result<DVector<f64>> {
        match self.kind {
            SensorKind::PointEval => riesz_point_eval(space, self.location),
            SensorKind::LocalAverage => {
                let tau = self.width.ok_or_else(|| {
                    Error::InvalidInput("local average sensor without width".into())
                })?;
                riesz_local_average(space, self.location, tau)
            }
        }
    }
}

fn normalize_functional(space: &InnerProductSpace, load: DVector<f64>) -> Result<DVector<f64>> {
    let g = space.solve(&load);
    let norm2 = load.dot(&g);
    if !(norm2 > 0.0) {
        return Err(Error::Domain("functional vanishes on the discrete space".into()));
    }
    Ok(g / norm2.sqrt())
}

/// Normalized representer of `u ↦ u(x)`.
pub fn riesz_point_eval(space: &InnerProductSpace, x: f64) -> Result<DVector<f64>> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("point evaluation at {x} outside (0, 1)")));
    }
    let n_h = space.dim();
    let n_el = n_h + 1;
    let s = x * n_el as f64;
    let e = (s.floor() as usize).min(n_el - 1);
    let t = s - e as f64;
    let mut load = DVector::zeros(n_h);
    if e >= 1 {
        load[e - 1] = 1.0 - t;
    }
    if e < n_h {
        load[e] += t;
    }
    normalize_functional(space, load)
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// `∫_a^b f φ_i` for all interior hats; exact when `f` is a polynomial of
/// degree ≤ 4 on [a, b].
fn hat_moments(n_h: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> DVector<f64> {
    let n_el = n_h + 1;
    let h = 1.0 / n_el as f64;
    let mut load = DVector::zeros(n_h);
    let e_lo = ((a / h).floor() as usize).min(n_el - 1);
    let e_hi = ((b / h).ceil() as usize).min(n_el);
    for e in e_lo..e_hi {
        let lo = (e as f64 * h).max(a);
        let hi = ((e + 1) as f64 * h).min(b);
        if hi <= lo {
            continue;
        }
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (xi, wt) in GAUSS3 {
            let s = mid + half * xi;
            let t = (s - e as f64 * h) / h;
            let val = wt * half * f(s);
            if e >= 1 {
                load[e - 1] += val * (1.0 - t);
            }
            if e < n_h {
                load[e] += val * t;
            }
        }
    }
    load
}

/// Normalized representer of `u ↦ ∫ u φ_τ(· - x)` with the quartic bump.
pub fn riesz_local_average(space: &InnerProductSpace, x: f64, tau: f64) -> Result<DVector<f64>> {
    if !(tau > 0.0) || !(x - tau > 0.0 && x + tau < 1.0) {
        return Err(Error::Domain(format!(
            "local average support [{}, {}] not inside (0, 1)",
            x - tau,
            x + tau
        )));
    }
    let load = hat_moments(space.dim(), x - tau, x + tau, |s| {
        let r = (s - x) / tau;
        BUMP_C * (1.0 - r * r).powi(2) / tau
    });
    normalize_functional(space, load)
}

/// Finite dictionary of unit-norm representers.
#[derive(Clone, Debug)]
pub struct Dictionary {
    sensors: Vec<Sensor>,
    representers: DMatrix<f64>,
    functionals: DMatrix<f64>,
}

impl Dictionary {
    /// Representers are computed eagerly, in parallel over candidates.
    pub fn new(space: &InnerProductSpace, sensors: Vec<Sensor>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidInput("dictionary must be nonempty".into()));
        }
        let cols: Vec<DVector<f64>> = sensors
            .par_iter()
            .map(|s| s.representer(space))
            .collect::<Result<_>>()?;
        let representers = DMatrix::from_columns(&cols);
        let functionals = space.apply_mat(&representers);
        Ok(Self {
            sensors,
            representers,
            functionals,
        })
    }

    /// `count` point evaluations at `k / (count + 1)`.
    pub fn uniform_points(space: &InnerProductSpace, count: usize) -> Result<Self> {
        Self::new(space, uniform_locations(count).into_iter().map(Sensor::point).collect())
    }

    /// `count` local averages of half-width `tau`, equispaced over `[tau, 1 - tau]`'s interior.
    pub fn uniform_averages(space: &InnerProductSpace, count: usize, tau: f64) -> Result<Self> {
        let span = 1.0 - 2.0 * tau;
        let sensors = uniform_locations(count)
            .into_iter()
            .map(|s| Sensor::average(tau + span * s, tau))
            .collect();
        Self::new(space, sensors)
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    /// Columns are the unit-norm representers `ω`.
    pub fn representers(&self) -> &DMatrix<f64> {
        &self.representers
    }

    /// Columns are `G ω`, so `<ω, u> = col ᵀ u`.
    pub fn functionals(&self) -> &DMatrix<f64> {
        &self.functionals
    }

    /// Observation setup of the members with the given indices.
    pub fn observation(&self, space: &InnerProductSpace, indices: &[usize]) -> Result<ObservationSetup> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!(
                "dictionary index {bad} out of range ({} members)",
                self.len()
            )));
        }
        let sensors = indices.iter().map(|&i| self.sensors[i].clone()).collect();
        build_observation_from(
            space,
            sensors,
            self.representers.select_columns(indices),
        )
    }
}

pub fn uniform_locations(count: usize) -> Vec<f64> {
    (1..=count).map(|k| k as f64 / (count + 1) as f64).collect()
}

/// Ordered sensors with their Gram matrix and an orthonormal basis of `W`.
#[derive(Clone, Debug)]
pub struct ObservationSetup {
    sensors: Vec<Sensor>,
    omega: DMatrix<f64>,
    functionals: DMatrix<f64>,
    b: DMatrix<f64>,
    b_chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    w: OrthonormalBasis,
}

/// Setup from a list of sensors.
pub fn build_observation(space: &InnerProductSpace, sensors: Vec<Sensor>) -> Result<ObservationSetup> {
    let cols: Vec<DVector<f64>> = sensors
        .iter()
        .map(|s| s.representer(space))
        .collect::<Result<_>>()?;
    let omega = if cols.is_empty() {
        DMatrix::zeros(space.dim(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    build_observation_from(space, sensors, omega)
}

/// Setup from precomputed unit-norm representers.
pub fn build_observation_from(
    space: &InnerProductSpace,
    sensors: Vec<Sensor>,
    omega: DMatrix<f64>,
) -> Result<ObservationSetup> {
    if omega.nrows() != space.dim() {
        return Err(Error::DimensionMismatch {
            op: "build_observation",
            expected: space.dim(),
            got: omega.nrows(),
        });
    }
    let m = omega.ncols();
    let functionals = space.apply_mat(&omega);
    let b = omega.tr_mul(&functionals);
    let b = (&b + b.transpose()) * 0.5;
    if m > 0 {
        let (vals, _) = sym_eigen_sorted(b.clone());
        let (lmin, lmax) = (vals[0], vals[m - 1]);
        if !(lmin > 1e-12 * lmax) {
            let (mut first, mut second, mut overlap) = (0, 0, -1.0);
            for j in 0..m {
                for i in 0..j {
                    let c = b[(i, j)].abs() / (b[(i, i)] * b[(j, j)]).sqrt();
                    if c > overlap {
                        (first, second, overlap) = (i, j, c);
                    }
                }
            }
            return Err(Error::Conditioning {
                first,
                second,
                overlap,
            });
        }
    }
    let b_chol = if m > 0 {
        Some(Cholesky::new(b.clone()).ok_or(Error::Singular {
            op: "build_observation",
        })?)
    } else {
        None
    };
    // Gram-Schmidt of the representers; conditioning was checked above.
    let mut w = OrthonormalBasis::new(space.dim());
    for j in 0..m {
        if !w.push(space, &omega.column(j).into_owned(), 1e-13) {
            return Err(Error::Conditioning {
                first: j.saturating_sub(1),
                second: j,
                overlap: 1.0,
            });
        }
    }
    Ok(ObservationSetup {
        sensors,
        omega,
        functionals,
        b,
        b_chol,
        w,
    })
}

/// Data `z = (ℓ_i(u))_i` together with `w = P_W u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub z: DVector<f64>,
    pub w: DVector<f64>,
}

impl ObservationSetup {
    pub fn m(&self) -> usize {
        self.omega.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.omega.nrows()
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn representers(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// `𝔹 = (<ω_i, ω_j>)`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Orthonormal basis of `W`.
    pub fn w_basis(&self) -> &OrthonormalBasis {
        &self.w
    }

    pub fn w_subspace(&self) -> Subspace {
        self.w.to_subspace()
    }

    /// `z_i = <ω_i, u>`.
    pub fn observe(&self, u: &DVector<f64>) -> DVector<f64> {
        self.functionals.tr_mul(u)
    }

    /// `w = Σ c_i ω_i` with `𝔹 c = z`.
    pub fn w_from_z(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.b_chol {
            Some(ch) => &self.omega * ch.solve(z),
            None => DVector::zeros(self.ambient_dim()),
        }
    }

    pub fn measure(&self, u: &DVector<f64>) -> Measurement {
        let z = self.observe(u);
        let w = self.w_from_z(&z);
        Measurement { z, w }
    }

    /// Coordinates of `P_W u` in the orthonormal basis of `W`.
    pub fn coords(&self, u: &DVector<f64>) -> DVector<f64> {
        self.w.coefficients(u)
    }

    /// Orthonormal coordinates from raw data `z`.
    pub fn coords_from_z(&self, z: &DVector<f64>) -> DVector<f64> {
        self.coords(&self.w_from_z(z))
    }

    /// Ambient element of `W` with the given orthonormal coordinates.
    pub fn from_coords(&self, coords: &DVector<f64>) -> DVector<f64> {
        self.w.matrix() * coords
    }

    /// Adds `η ∈ W` with `‖η‖ = eps` exactly, direction uniform on the sphere of `W`.
    pub fn add_noise(&self, data: &Measurement, eps: f64, seed: u64) -> Result<Measurement> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidInput(format!("noise level must be nonnegative, got {eps}")));
        }
        if eps == 0.0 || self.m() == 0 {
            return Ok(data.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g: DVector<f64> = DVector::from_fn(self.m(), |_, _| StandardNormal.sample(&mut rng));
        while g.norm() == 0.0 {
            g = DVector::from_fn(self.m(), |_, _| StandardNormal.sample(&mut rng));
        }
        let g: DVector<f64> = &g * (eps / g.norm());
        let eta = self.from_coords(&g);
        Ok(Measurement {
            z: &data.z + self.observe(&eta),
            w: &data.w + eta,
        })
    }
}
