//! Optimal control over the true dynamics or a fitted surrogate.

pub mod eradication;
pub mod optimizer;
pub mod quadratic;

use serde::{Deserialize, Serialize};

use crate::epimodels::{validate_state, Dynamics, EpiParams, ModelKind};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kol::KolModel;
use crate::linalg::Matrix;

pub use eradication::{eradication_time, min_eradication, r_umax, EradicationConfig, EradicationResult, SweepPoint};
pub use optimizer::{minimize_box, OptOptions, OptOutcome};
pub use quadratic::{cross_evaluate, optimize_quadratic, quad_cost, OcResult, QuadConfig};

/// Ground-truth simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueOdeConfig {
    pub model: ModelKind,
    pub params: EpiParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub grid: TimeGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
}

impl TrueOdeConfig {
    pub fn provider(&self) -> Result<StateProvider<'static>> {
        let dynamics = Dynamics::new(self.model, self.params)?;
        let x0 = self.x0.clone().unwrap_or_else(|| self.model.default_initial_state());
        validate_state(self.model, &x0)?;
        let substeps = match self.substeps {
            Some(0) => return Err(Error::Config("substeps must be at least 1".into())),
            Some(s) => s,
            None => dynamics.default_substeps(self.grid.dt()),
        };
        Ok(StateProvider::TrueOde {
            dynamics,
            x0,
            grid: self.grid,
            substeps,
        })
    }
}

/// Source of trajectories for a sampled control.
#[derive(Debug, Clone)]
pub enum StateProvider<'a> {
    TrueOde {
        dynamics: Dynamics,
        x0: Vec<f64>,
        grid: TimeGrid,
        substeps: usize,
    },
    Surrogate(&'a KolModel),
}

impl StateProvider<'_> {
    pub fn grid(&self) -> TimeGrid {
        match self {
            StateProvider::TrueOde { grid, .. } => *grid,
            StateProvider::Surrogate(m) => m.grid(),
        }
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        match self {
            StateProvider::TrueOde { dynamics, .. } => Ok(dynamics.model),
            StateProvider::Surrogate(m) => m
                .model_kind()
                .ok_or_else(|| Error::Config("surrogate does not record its compartmental model".into())),
        }
    }

    pub fn x0(&self) -> &[f64] {
        match self {
            StateProvider::TrueOde { x0, .. } => x0,
            StateProvider::Surrogate(m) => m.x0(),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            StateProvider::TrueOde { .. } => "ode".into(),
            StateProvider::Surrogate(m) => format!("kol-{}", m.mode().name()),
        }
    }

    /// `d x n` trajectory for control samples on the provider grid.
    pub fn trajectory(&self, control: &[f64]) -> Result<Matrix> {
        match self {
            StateProvider::TrueOde {
                dynamics,
                x0,
                grid,
                substeps,
            } => Ok(dynamics.integrate(x0, control, grid, *substeps)?.values),
            StateProvider::Surrogate(m) => Ok(m.predict_values(control)?.values),
        }
    }

    /// Control families the provider was trained on; `None` for the true
    /// dynamics or when unknown.
    pub fn training_families(&self) -> Option<&[String]> {
        match self {
            StateProvider::Surrogate(m) if !m.families().is_empty() => Some(m.families()),
            _ => None,
        }
    }
}
