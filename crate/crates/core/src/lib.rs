//! Kernel operator learning (KOL) surrogates for controlled compartmental
//! epidemic models.
//!
//! The crate learns the map from a sampled non-pharmaceutical intervention
//! schedule `u(t)` to the compartment trajectories `x(t)` (mode [`Mode::Map`])
//! or to their time derivatives (mode [`Mode::Derivative`]) with kernel ridge
//! regression, and uses the fitted surrogates inside two optimal-control
//! solvers.
//!
//! Pipeline overview:
//!
//! * [`epimodels`]: SIR/SIS/SIRD/SEIRD right-hand sides and a sub-stepped
//!   explicit Euler integrator.
//! * [`controls`]: parametric control families and their sampling.
//! * [`datagen`]: synthetic datasets and their on-disk format.
//! * [`kernels`]: scalar kernels, including closed-form neural tangent kernels.
//! * [`kol`]: fitting, prediction and model persistence.
//! * [`evaluation`]: error metric, boxplot statistics and benchmark runners.
//! * [`optcontrol`]: minimum eradication time and quadratic-cost control.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controls;
pub mod datagen;
pub mod epimodels;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod kernels;
pub mod kol;
pub mod linalg;
pub mod optcontrol;
pub mod presets;

pub use controls::{ControlSignal, ControlSpec, SamplingBounds};
pub use datagen::{Dataset, ScenarioConfig, Split};
pub use epimodels::{EpiParams, ModelKind, Trajectory};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use kernels::{Activation, KernelSpec};
pub use kol::{FitOptions, KolModel, Mode, Prediction, TrainingSet};
pub use linalg::Matrix;

/// Ridge penalty used when none is configured.
pub const DEFAULT_RIDGE: f64 = 1e-10;

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Runs `f` for every index in `0..n`, possibly in parallel; output order
/// follows the index.
pub(crate) fn par_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    par_map(&idx, |_, &i| f(i))
}
