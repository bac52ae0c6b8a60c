//! Ready-made models and spaces used by the examples and tests.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::Result;
use crate::forward::{h10_space, nodal_interpolant, Field, ParameterBox, ParametricModel};
use crate::linalg::{orthonormalize, Subspace};

/// `a = 1 + y₁ ψ₁ + y₂ ψ₂` with `ψ₁ = ½` on (0, ½), `ψ₂ = ½` on (½, 1), `f = 1`, `Y = [-1, 1]²`.
pub fn elliptic_2d(n_h: usize) -> Result<ParametricModel> {
    ParametricModel::new(
        n_h,
        Field::constant(1.0),
        vec![
            Field::indicator(0.0, 0.5, 0.5)?,
            Field::indicator(0.5, 1.0, 0.5)?,
        ],
        Field::constant(1.0),
        ParameterBox::new(vec![-1.0, -1.0], vec![1.0, 1.0])?,
    )
}

/// `a = 1 + Σ y_j ψ_j` with `d` equal-width subdomain indicators scaled by ½, `f = 1`, `Y = [-1, 1]^d`.
pub fn elliptic(n_h: usize, d: usize) -> Result<ParametricModel> {
    let psis = (0..d)
        .map(|j| Field::indicator(j as f64 / d as f64, (j + 1) as f64 / d as f64, 0.5))
        .collect::<Result<Vec<_>>>()?;
    ParametricModel::new(
        n_h,
        Field::constant(1.0),
        psis,
        Field::constant(1.0),
        ParameterBox::new(vec![-1.0; d], vec![1.0; d])?,
    )
}

/// `φ_k = √2/(πk) sin(kπx)`, k = 1..n, as an orthonormal P1 subspace.
///
/// Nodal sines are exact eigenvectors of the 1D stiffness matrix, so
/// orthonormalization only rescales them.
pub fn fourier_space(n_h: usize, n: usize) -> Result<Subspace> {
    let space = h10_space(n_h);
    let cols: Vec<DVector<f64>> = (1..=n)
        .map(|k| {
            let c = 2f64.sqrt() / (PI * k as f64);
            nodal_interpolant(n_h, |x| c * (k as f64 * PI * x).sin())
        })
        .collect();
    orthonormalize(&space, &Subspace::from_vectors(n_h, &cols))
}

/// Two-parameter medium with 16 layers whose coefficients respond to `y`
/// along rotating directions: on layer k, `a = 1 + 0.45 (y₁ cos θ_k + y₂ sin θ_k)`
/// with `θ_k = 2πk/16`; `f = 1`, `Y = [-1, 1]²`. Each layer contributes its
/// own nonlinear profile `1/a_k(y)`, so the manifold is not low-rank.
pub fn rotating_layers(n_h: usize) -> Result<ParametricModel> {
    const K: usize = 16;
    let breaks: Vec<f64> = (0..=K).map(|k| k as f64 / K as f64).collect();
    let theta = |k: usize| 2.0 * PI * k as f64 / K as f64;
    let cos: Vec<f64> = (0..K).map(|k| 0.45 * theta(k).cos()).collect();
    let sin: Vec<f64> = (0..K).map(|k| 0.45 * theta(k).sin()).collect();
    ParametricModel::new(
        n_h,
        Field::constant(1.0),
        vec![Field::new(breaks.clone(), cos)?, Field::new(breaks, sin)?],
        Field::constant(1.0),
        ParameterBox::new(vec![-1.0, -1.0], vec![1.0, 1.0])?,
    )
}

/// [`rotating_layers`] driven by `f = 1 + 4 s(x)`, `s = ±1` alternating on 32
/// cells. The oscillating part of every state is nearly invisible to local
/// averages wider than a cell, so the manifold's offset is badly aligned
/// with such observation spaces.
pub fn misaligned_offset(n_h: usize) -> Result<ParametricModel> {
    let base = rotating_layers(n_h)?;
    let breaks: Vec<f64> = (0..=32).map(|k| k as f64 / 32.0).collect();
    let values: Vec<f64> = (0..32).map(|k| if k % 2 == 0 { 5.0 } else { -3.0 }).collect();
    ParametricModel::new(
        n_h,
        base.abar().clone(),
        base.psis().to_vec(),
        Field::new(breaks, values)?,
        base.param_box().clone(),
    )
}

/// Two-branch high-contrast testbed, `d = 1`, `Y = [-1, 1]`, `f = 1`.
///
/// Sixteen layers with `a = 1 + c_k y` and `c_k = ±0.97 (1 - k/32)` of
/// alternating sign: for `y > 0` the odd layers soften towards
/// `a ≈ 0.03`, for `y < 0` the even ones do. The state moves sharply near
/// both ends of `Y` along two different branches.
pub fn two_branch(n_h: usize) -> Result<ParametricModel> {
    const K: usize = 16;
    let breaks: Vec<f64> = (0..=K).map(|k| k as f64 / K as f64).collect();
    let c: Vec<f64> = (0..K)
        .map(|k| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            s * 0.97 * (1.0 - k as f64 / 32.0)
        })
        .collect();
    ParametricModel::new(
        n_h,
        Field::constant(1.0),
        vec![Field::new(breaks, c)?],
        Field::constant(1.0),
        ParameterBox::new(vec![-1.0], vec![1.0])?,
    )
}
