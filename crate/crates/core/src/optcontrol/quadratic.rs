//! Quadratic-cost control over piecewise-constant schedules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optimizer::{minimize_box, OptOptions, OptOutcome};
use super::StateProvider;
use crate::controls::{rng_from_seed, ControlSpec};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// `C_I ∫ I² dt + C_u ∫ u² dt`, both integrals by the trapezoid rule on the
/// grid.
pub fn quad_cost(infected: &[f64], control: &[f64], c_i: f64, c_u: f64, grid: &TimeGrid) -> Result<f64> {
    let n = grid.len();
    if infected.len() != n || control.len() != n {
        return Err(Error::Dimension(format!(
            "cost inputs have {} and {} samples, grid has {n}",
            infected.len(),
            control.len()
        )));
    }
    let trap = |v: &[f64]| {
        let inner: f64 = v[1..n - 1].iter().map(|x| x * x).sum();
        grid.dt() * (0.5 * (v[0] * v[0] + v[n - 1] * v[n - 1]) + inner)
    };
    Ok(c_i * trap(infected) + c_u * trap(control))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub c_i: f64,
    pub c_u: f64,
    pub phases: usize,
    #[serde(default = "default_upper")]
    pub u_upper: f64,
    #[serde(default = "default_multistart")]
    pub multistart: usize,
    #[serde(default)]
    pub optimizer: OptOptions,
}

fn default_upper() -> f64 {
    0.7
}

fn default_multistart() -> usize {
    5
}

impl QuadConfig {
    pub fn new(c_i: f64, c_u: f64, phases: usize) -> Self {
        QuadConfig {
            c_i,
            c_u,
            phases,
            u_upper: default_upper(),
            multistart: default_multistart(),
            optimizer: OptOptions::default(),
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if !(self.c_i >= 0.0 && self.c_u >= 0.0) {
            return Err(Error::Config("cost weights must be non-negative".into()));
        }
        if self.phases == 0 || !(grid.len() - 1).is_multiple_of(self.phases) {
            return Err(Error::Config(format!(
                "{} phases do not split the {} grid intervals evenly",
                self.phases,
                grid.len() - 1
            )));
        }
        if !(0.0..=1.0).contains(&self.u_upper) {
            return Err(Error::Config(format!("u_upper must lie in [0, 1], got {}", self.u_upper)));
        }
        if self.multistart == 0 {
            return Err(Error::Config("multistart must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcResult {
    pub provider: String,
    pub levels: Vec<f64>,
    /// Objective under the provider that was optimised.
    pub objective: f64,
    /// Objective of the same schedule under the true dynamics, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_objective: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Outcome of every start, in start order.
    pub starts: Vec<OptOutcome>,
}

fn schedule(levels: &[f64], grid: &TimeGrid) -> Vec<f64> {
    ControlSpec::PiecewiseConstant { values: levels.to_vec() }
        .discretize(grid)
        .samples
}

/// Objective of a level vector under `provider`.
pub fn objective(provider: &StateProvider, cfg: &QuadConfig, levels: &[f64]) -> Result<f64> {
    let grid = provider.grid();
    let u = schedule(levels, &grid);
    let traj = provider.trajectory(&u)?;
    let i = provider.model_kind()?.infected_index();
    quad_cost(traj.row(i), &u, cfg.c_i, cfg.c_u, &grid)
}

/// Multistart minimisation of the quadratic cost over `[0, u_upper]^N`.
/// Starts: the box midpoint, then uniform draws from `seed`.
pub fn optimize_quadratic(provider: &StateProvider, cfg: &QuadConfig, seed: u64) -> Result<OcResult> {
    let grid = provider.grid();
    cfg.validate(&grid)?;
    provider.model_kind()?;
    let n = cfg.phases;
    let lo = vec![0.0; n];
    let hi = vec![cfg.u_upper; n];
    let mut rng = rng_from_seed(seed);
    let mut starts = vec![vec![0.5 * cfg.u_upper; n]];
    for _ in 1..cfg.multistart {
        starts.push((0..n).map(|_| rng.random_range(0.0..=cfg.u_upper)).collect());
    }
    let f = |x: &[f64]| objective(provider, cfg, x);
    let outcomes = crate::par_map(&starts, |_, x0| minimize_box(&f, x0, &lo, &hi, &cfg.optimizer));
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.f < outcomes[best].f {
            best = i;
        }
    }
    let b = &outcomes[best];
    Ok(OcResult {
        provider: provider.tag(),
        levels: b.x.clone(),
        objective: b.f,
        true_objective: None,
        iterations: b.iterations,
        evaluations: outcomes.iter().map(|o| o.evaluations).sum(),
        converged: b.converged,
        starts: outcomes.clone(),
    })
}

/// Cost of the schedule under the true dynamics.
pub fn cross_evaluate(levels: &[f64], truth: &StateProvider, cfg: &QuadConfig) -> Result<f64> {
    if !matches!(truth, StateProvider::TrueOde { .. }) {
        return Err(Error::Config("cross evaluation needs the true dynamics".into()));
    }
    if levels.iter().any(|v| !(0.0..=cfg.u_upper).contains(v)) {
        return Err(Error::Domain(format!("levels outside [0, {}]: {levels:?}", cfg.u_upper)));
    }
    if levels.len() != cfg.phases {
        return Err(Error::Dimension(format!("{} levels for {} phases", levels.len(), cfg.phases)));
    }
    objective(truth, cfg, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epimodels::{EpiParams, ModelKind};
    use crate::optcontrol::TrueOdeConfig;

    fn truth() -> StateProvider<'static> {
        TrueOdeConfig {
            model: ModelKind::Sir,
            params: EpiParams { r0: 4.0, gamma: 0.05, ..Default::default() },
            x0: Some(vec![0.99, 0.01, 0.0]),
            grid: TimeGrid::new(5.0, 0.05).unwrap(),
            substeps: None,
        }
        .provider()
        .unwrap()
    }

    #[test]
    fn cost_examples() {
        let g = TimeGrid::new(5.0, 0.05).unwrap();
        let zeros = vec![0.0; g.len()];
        let u = vec![0.3; g.len()];
        let c = quad_cost(&zeros, &u, 1.0, 2.0, &g).unwrap();
        assert!((c - 2.0 * 0.09 * 5.0).abs() < 1e-12);
        assert_eq!(quad_cost(&u, &u, 0.0, 0.0, &g).unwrap(), 0.0);
        let a = quad_cost(&u, &zeros, 1.0, 0.0, &g).unwrap();
        let b = quad_cost(&u, &zeros, 2.0, 0.0, &g).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn no_infection_weight_gives_zero_schedule() {
        let p = truth();
        let r = optimize_quadratic(&p, &QuadConfig::new(0.0, 1.0, 5), 3).unwrap();
        assert!(r.levels.iter().all(|v| *v == 0.0), "{:?}", r.levels);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn zero_levels_cross_evaluation_is_epidemic_cost() {
        let p = truth();
        let cfg = QuadConfig::new(1.0, 0.1, 5);
        let c = cross_evaluate(&[0.0; 5], &p, &cfg).unwrap();
        let traj = p.trajectory(&vec![0.0; p.grid().len()]).unwrap();
        let want = quad_cost(traj.row(1), &vec![0.0; p.grid().len()], 1.0, 0.0, &p.grid()).unwrap();
        assert_eq!(c, want);
    }

    #[test]
    fn phases_must_split_grid() {
        let p = truth();
        assert!(optimize_quadratic(&p, &QuadConfig::new(1.0, 0.1, 3), 0).unwrap_err().is_config());
    }
}
