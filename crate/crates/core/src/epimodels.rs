//! Compartmental models with a transmission-reducing control and their
//! fixed-step explicit Euler integration.
//!
//! Compartment ordering: SIR `[S, I, R]`, SIS `[S, I]`, SIRD `[S, I, R, D]`,
//! SEIRD `[S, E, I, R, D]`. The control `u ∈ [0, 1]` scales transmission by
//! `1 - u`.

use serde::{Deserialize, Serialize};

use crate::controls::ControlSignal;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sir,
    Sis,
    Sird,
    Seird,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Sir, ModelKind::Sis, ModelKind::Sird, ModelKind::Seird];

    /// Number of compartments.
    pub fn dim(self) -> usize {
        match self {
            ModelKind::Sir => 3,
            ModelKind::Sis => 2,
            ModelKind::Sird => 4,
            ModelKind::Seird => 5,
        }
    }

    pub fn compartments(self) -> &'static [&'static str] {
        match self {
            ModelKind::Sir => &["S", "I", "R"],
            ModelKind::Sis => &["S", "I"],
            ModelKind::Sird => &["S", "I", "R", "D"],
            ModelKind::Seird => &["S", "E", "I", "R", "D"],
        }
    }

    pub fn index_of(self, name: &str) -> Option<usize> {
        self.compartments().iter().position(|c| *c == name)
    }

    pub fn infected_index(self) -> usize {
        match self {
            ModelKind::Seird => 2,
            _ => 1,
        }
    }

    /// Default initial condition: 1% infected (exposed for SEIRD), the rest
    /// susceptible.
    pub fn default_initial_state(self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        x[0] = 0.99;
        // SEIRD seeds the outbreak in E, index 1 like I in the other models
        x[1] = 0.01;
        x
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sir => "sir",
            ModelKind::Sis => "sis",
            ModelKind::Sird => "sird",
            ModelKind::Seird => "seird",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sir" => Ok(ModelKind::Sir),
            "sis" => Ok(ModelKind::Sis),
            "sird" => Ok(ModelKind::Sird),
            "seird" => Ok(ModelKind::Seird),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Epidemic rates. `delta`/`epsilon` are used by SEIRD only, `phi` by SIRD
/// and SEIRD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpiParams {
    pub r0: f64,
    pub gamma: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub phi: f64,
}

impl Default for EpiParams {
    fn default() -> Self {
        EpiParams {
            r0: 4.0,
            gamma: 0.05,
            delta: 0.4,
            epsilon: 0.05,
            phi: 0.05,
        }
    }
}

impl EpiParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.gamma, self.delta, self.epsilon, self.phi];
        if !(self.r0 > 0.0) || !self.r0.is_finite() {
            return Err(Error::Config(format!("r0 must be positive, got {}", self.r0)));
        }
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("rates must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Transmission rate matching the model's basic reproduction number.
pub fn beta_from_r0(model: ModelKind, p: &EpiParams) -> Result<f64> {
    p.validate()?;
    let beta = match model {
        ModelKind::Sir | ModelKind::Sis => {
            if p.gamma == 0.0 {
                return Err(Error::DegenerateParameters("gamma = 0".into()));
            }
            p.r0 * p.gamma
        }
        ModelKind::Sird => {
            let exit = p.gamma + p.phi;
            if exit == 0.0 {
                return Err(Error::DegenerateParameters("gamma + phi = 0".into()));
            }
            p.r0 * exit
        }
        ModelKind::Seird => {
            let exit = p.gamma + p.phi;
            if exit == 0.0 || p.delta == 0.0 {
                return Err(Error::DegenerateParameters(
                    "SEIRD needs gamma + phi > 0 and delta > 0".into(),
                ));
            }
            p.r0 * exit * (p.delta + p.epsilon) / p.delta
        }
    };
    Ok(beta)
}

/// A model with its transmission rate resolved; cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub model: ModelKind,
    pub params: EpiParams,
    pub beta: f64,
}

impl Dynamics {
    pub fn new(model: ModelKind, params: EpiParams) -> Result<Self> {
        let beta = beta_from_r0(model, &params)?;
        Ok(Dynamics { model, params, beta })
    }

    /// Sum of every rate appearing in the right-hand side. Used to choose
    /// a stable internal step.
    pub fn max_rate(&self) -> f64 {
        let p = &self.params;
        match self.model {
            ModelKind::Sir | ModelKind::Sis => self.beta + p.gamma,
            ModelKind::Sird => self.beta + p.gamma + p.phi,
            ModelKind::Seird => self.beta + p.gamma + p.phi + p.delta + p.epsilon,
        }
    }

    /// Smallest substep count with `max_rate * dt / substeps <= 0.1`.
    pub fn default_substeps(&self, dt: f64) -> usize {
        ((self.max_rate() * dt / 0.1).ceil() as usize).max(1)
    }

    /// Writes `F(x, u)` into `out`.
    #[inline]
    pub fn rhs_into(&self, x: &[f64], u: f64, out: &mut [f64]) {
        let p = &self.params;
        let b = self.beta * (1.0 - u);
        match self.model {
            ModelKind::Sir => {
                let inf = b * x[0] * x[1];
                let rec = p.gamma * x[1];
                out[0] = -inf;
                out[1] = inf - rec;
                out[2] = rec;
            }
            ModelKind::Sis => {
                let inf = b * x[0] * x[1];
                let rec = p.gamma * x[1];
                out[0] = -inf + rec;
                out[1] = inf - rec;
            }
            ModelKind::Sird => {
                let inf = b * x[0] * x[1];
                let rec = p.gamma * x[1];
                let die = p.phi * x[1];
                out[0] = -inf;
                out[1] = inf - rec - die;
                out[2] = rec;
                out[3] = die;
            }
            ModelKind::Seird => {
                let inf = b * x[0] * x[2];
                let lat = p.delta * x[1];
                let rem = p.epsilon * x[1];
                let rec = p.gamma * x[2];
                let die = p.phi * x[2];
                out[0] = -inf;
                out[1] = inf - lat - rem;
                out[2] = lat - rec - die;
                out[3] = rec + rem;
                out[4] = die;
            }
        }
    }

    pub fn rhs(&self, x: &[f64], u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.model.dim()];
        self.rhs_into(x, u, &mut out);
        out
    }

    /// Forward Euler with `substeps` internal steps per observation interval;
    /// the control is held at its left-node value inside each interval.
    pub fn integrate(
        &self,
        x0: &[f64],
        control: &[f64],
        grid: &TimeGrid,
        substeps: usize,
    ) -> Result<Trajectory> {
        let d = self.model.dim();
        let n = grid.len();
        validate_state(self.model, x0)?;
        if control.len() != n {
            return Err(Error::Dimension(format!(
                "control has {} samples, grid has {n} points",
                control.len()
            )));
        }
        if substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        let h = grid.dt() / substeps as f64;
        let mut values = Matrix::zeros(d, n);
        let mut x = x0.to_vec();
        let mut f = vec![0.0; d];
        for (i, xi) in x.iter().enumerate() {
            values.set(i, 0, *xi);
        }
        for k in 0..n - 1 {
            let u = control[k];
            for _ in 0..substeps {
                self.rhs_into(&x, u, &mut f);
                for (xi, fi) in x.iter_mut().zip(&f) {
                    *xi += h * fi;
                }
            }
            if x.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
                return Err(Error::Instability {
                    step: k + 1,
                    time: grid.point(k + 1),
                    substeps,
                });
            }
            for (i, xi) in x.iter().enumerate() {
                values.set(i, k + 1, *xi);
            }
        }
        Ok(Trajectory {
            model: self.model,
            grid: *grid,
            values,
        })
    }

    /// Exact right-hand side at every collocation node.
    pub fn derivative_observations(&self, traj: &Trajectory, control: &[f64]) -> Result<Matrix> {
        let n = traj.grid.len();
        if control.len() != n {
            return Err(Error::Dimension(format!(
                "control has {} samples, trajectory has {n} points",
                control.len()
            )));
        }
        let d = self.model.dim();
        let mut out = Matrix::zeros(d, n);
        let mut x = vec![0.0; d];
        let mut f = vec![0.0; d];
        for (k, u) in control.iter().enumerate() {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = traj.values.get(i, k);
            }
            self.rhs_into(&x, *u, &mut f);
            for (i, fi) in f.iter().enumerate() {
                out.set(i, k, *fi);
            }
        }
        Ok(out)
    }
}

/// Checks the state invariants: components in `[0, 1]`, summing to one.
pub fn validate_state(model: ModelKind, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "{} state needs {} compartments, got {}",
            model.name(),
            model.dim(),
            x.len()
        )));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(format!("state components must lie in [0, 1]: {x:?}")));
    }
    let s: f64 = x.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("state must sum to 1, sums to {s}")));
    }
    Ok(())
}

pub fn rhs(model: ModelKind, params: &EpiParams, x: &[f64], u: f64) -> Result<Vec<f64>> {
    Ok(Dynamics::new(model, *params)?.rhs(x, u))
}

pub fn integrate(
    model: ModelKind,
    params: &EpiParams,
    x0: &[f64],
    control: &ControlSignal,
    substeps: usize,
) -> Result<Trajectory> {
    Dynamics::new(model, *params)?.integrate(x0, &control.samples, &control.grid, substeps)
}

pub fn derivative_observations(
    model: ModelKind,
    params: &EpiParams,
    traj: &Trajectory,
    control: &ControlSignal,
) -> Result<Matrix> {
    if !traj.grid.same_as(&control.grid) {
        return Err(Error::Dimension("trajectory and control grids differ".into()));
    }
    Dynamics::new(model, *params)?.derivative_observations(traj, &control.samples)
}

/// Compartment fractions at the collocation nodes (`d x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: ModelKind,
    pub grid: TimeGrid,
    pub values: Matrix,
}

impl Trajectory {
    pub fn compartment(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.values.rows()).map(|i| self.values.get(i, k)).collect()
    }

    /// Largest `|sum_i x_i(t_k) - 1|` over the grid.
    pub fn conservation_defect(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| (self.column(k).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// First strictly negative entry `(compartment, node, value)`, if any.
    /// Integration never clips; callers decide what to do with this.
    pub fn first_negative(&self) -> Option<(usize, usize, f64)> {
        for k in 0..self.grid.len() {
            for i in 0..self.values.rows() {
                let v = self.values.get(i, k);
                if v < 0.0 {
                    return Some((i, k, v));
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sir() -> Dynamics {
        Dynamics::new(
            ModelKind::Sir,
            EpiParams {
                r0: 4.0,
                gamma: 0.05,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn beta_examples() {
        let p = EpiParams { r0: 4.0, gamma: 0.05, ..Default::default() };
        assert!((beta_from_r0(ModelKind::Sir, &p).unwrap() - 0.2).abs() < 1e-15);
        let p = EpiParams { r0: 2.0, gamma: 5.0, ..Default::default() };
        assert_eq!(beta_from_r0(ModelKind::Sir, &p).unwrap(), 10.0);
        let p = EpiParams { r0: 1.0, gamma: 0.05, phi: 0.05, ..Default::default() };
        assert_eq!(beta_from_r0(ModelKind::Sird, &p).unwrap(), 0.1);
    }

    #[test]
    fn beta_degenerate() {
        let p = EpiParams { r0: 2.0, gamma: 0.0, phi: 0.0, delta: 0.4, epsilon: 0.0 };
        for m in ModelKind::ALL {
            assert!(matches!(beta_from_r0(m, &p), Err(Error::DegenerateParameters(_))));
        }
        let p = EpiParams { r0: 2.0, gamma: 0.1, phi: 0.0, delta: 0.0, epsilon: 0.1 };
        assert!(matches!(
            beta_from_r0(ModelKind::Seird, &p),
            Err(Error::DegenerateParameters(_))
        ));
    }

    #[test]
    fn rhs_examples() {
        let dyns = sir();
        let f = dyns.rhs(&[0.99, 0.01, 0.0], 0.0);
        assert!((f[1] - 1.48e-3).abs() < 1e-15);
        assert!((f[0] + 1.98e-3).abs() < 1e-15);
        assert!((f[2] - 5e-4).abs() < 1e-15);
        let f = dyns.rhs(&[0.5, 0.3, 0.2], 1.0);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], -0.05 * 0.3);
        assert_eq!(f[2], 0.05 * 0.3);
    }

    #[test]
    fn disease_free_equilibrium() {
        for m in ModelKind::ALL {
            let d = Dynamics::new(m, EpiParams::default()).unwrap();
            let mut x = vec![0.0; m.dim()];
            x[0] = 0.7;
            *x.last_mut().unwrap() += 0.3;
            if m == ModelKind::Sis {
                x = vec![1.0, 0.0];
            }
            assert!(d.rhs(&x, 0.3).iter().all(|v| *v == 0.0), "{m:?}");
        }
    }

    #[test]
    fn lockdown_euler_closed_form() {
        let dyns = sir();
        let grid = TimeGrid::new(100.0, 1.0).unwrap();
        let traj = dyns
            .integrate(&[0.99, 0.01, 0.0], &vec![1.0; grid.len()], &grid, 1)
            .unwrap();
        for k in 0..grid.len() {
            let expected = 0.01 * (1.0f64 - 0.05).powi(k as i32);
            let got = traj.values.get(1, k);
            assert!((got - expected).abs() <= 1e-15 * (1.0 + k as f64), "k={k}");
        }
    }

    #[test]
    fn uncontrolled_epidemic_burns_out() {
        let dyns = sir();
        let grid = TimeGrid::new(100.0, 1.0).unwrap();
        let traj = dyns
            .integrate(&[0.99, 0.01, 0.0], &vec![0.0; grid.len()], &grid, 100)
            .unwrap();
        assert!(traj.values.get(0, 100) < 0.05);
        assert!(traj.conservation_defect() <= 1e-12);
    }

    #[test]
    fn instability_is_reported() {
        let dyns = Dynamics::new(ModelKind::Sir, EpiParams { r0: 2.0, gamma: 5.0, ..Default::default() })
            .unwrap();
        let grid = TimeGrid::new(100.0, 1.0).unwrap();
        let x0 = [2000.0 / 2001.0, 1.0 / 2001.0, 0.0];
        let err = dyns.integrate(&x0, &vec![0.0; grid.len()], &grid, 1).unwrap_err();
        assert!(matches!(err, Error::Instability { substeps: 1, .. }), "{err}");
        let ok = dyns.integrate(&x0, &vec![0.0; grid.len()], &grid, dyns.default_substeps(1.0));
        assert!(ok.is_ok());
    }

    #[test]
    fn derivative_columns_sum_to_zero() {
        let dyns = sir();
        let grid = TimeGrid::new(10.0, 1.0).unwrap();
        let u: Vec<f64> = (0..grid.len()).map(|k| (k as f64 / 10.0).min(1.0)).collect();
        let traj = dyns.integrate(&[0.99, 0.01, 0.0], &u, &grid, 4).unwrap();
        let der = dyns.derivative_observations(&traj, &u).unwrap();
        assert!((der.get(0, 0) + 1.98e-3).abs() < 1e-15);
        for k in 0..grid.len() {
            let s: f64 = (0..3).map(|i| der.get(i, k)).sum();
            assert!(s.abs() <= 1e-15);
        }
    }

    #[test]
    fn rejects_bad_initial_state() {
        let dyns = sir();
        let grid = TimeGrid::new(1.0, 0.5).unwrap();
        assert!(dyns.integrate(&[0.9, 0.2, 0.0], &[0.0; 3], &grid, 1).is_err());
        assert!(dyns.integrate(&[0.9, 0.1], &[0.0; 3], &grid, 1).is_err());
    }
}
