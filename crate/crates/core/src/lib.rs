//! State estimation for parametric elliptic problems from a few linear
//! measurements, using reduced models of the solution manifold.
//!
//! The pieces build on each other:
//!
//! - [`linalg`]: inner-product spaces, subspaces, projections and `β(V, W)`.
//! - [`forward`]: the P1 diffusion model, training sets, POD and greedy bases.
//! - [`sensing`]: point and local-average sensors with their representers.
//! - [`pbdw`]: linear and affine PBDW reconstruction.
//! - [`affine_opt`]: the optimal affine recovery map by primal-dual iterations.
//! - [`omp`] and [`joint`]: greedy sensor placement, alone or with the reduced space.
//! - [`piecewise`]: families of local affine models with cell selection.
//! - [`benchmarks`]: `δ̃_σ`, Chebyshev radii and the estimator table.
//! - [`cli`]: the experiment runner behind the `redinv` binary.
//!
//! ```
//! use redinv::{forward::sample_training_set, pbdw::PbdwOperator, sensing::Dictionary, testbed};
//!
//! let model = testbed::elliptic_2d(63)?;
//! let t = sample_training_set(&model, &[5, 5])?;
//! let dict = Dictionary::uniform_points(model.space(), 7)?;
//! let setup = dict.observation(model.space(), &[1, 3, 5])?;
//! let vn = redinv::forward::pod(model.space(), t.snapshots(), 2)?.modes;
//! let op = PbdwOperator::fit(model.space(), &vn, &setup)?;
//! assert!(op.beta() > 0.0);
//! # Ok::<(), redinv::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub use error::{Error, Result};

pub mod affine_opt;
pub mod benchmarks;
pub mod cli;
pub mod forward;
pub mod joint;
pub mod linalg;
pub mod omp;
pub mod pbdw;
pub mod piecewise;
pub mod sensing;
pub mod testbed;
