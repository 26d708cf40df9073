//! Parametric control families, their sampling, and pointwise observation
//! on the collocation grid.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// A control function `u(t)` on `[0, t*]`.
///
/// JSON encoding: `{"family": "step", "params": {"u0": 0.2, "u1": 0.6, "t0": 50}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ControlSpec {
    /// Ramp from `u0` to `u1` over `Δt/3`, plateau for `Δt`, ramp back over `Δt/3`.
    LinearPulse { u0: f64, u1: f64, t0: f64, dt: f64 },
    Step { u0: f64, u1: f64, t0: f64 },
    Seasonality { u0: f64, dt: f64 },
    DoubleStep { u0: f64, u1: f64, t0: f64, dt: f64 },
    /// Equal-length slabs over `(0, t*]`; slab `i` covers `[t_{i-1}, t_i)`
    /// and the last value also applies at `t*`.
    PiecewiseConstant { values: Vec<f64> },
    Constant { value: f64 },
}

impl ControlSpec {
    /// Heaviside switch-on at `tau`: `u_max * H(t - tau)`.
    pub fn heaviside(u_max: f64, tau: f64) -> Self {
        ControlSpec::Step { u0: 0.0, u1: u_max, t0: tau }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ControlSpec::LinearPulse { .. } => "linear_pulse",
            ControlSpec::Step { .. } => "step",
            ControlSpec::Seasonality { .. } => "seasonality",
            ControlSpec::DoubleStep { .. } => "double_step",
            ControlSpec::PiecewiseConstant { .. } => "piecewise_constant",
            ControlSpec::Constant { .. } => "constant",
        }
    }

    /// Levels the family can take (for bound checks).
    pub fn levels(&self) -> Vec<f64> {
        match self {
            ControlSpec::LinearPulse { u0, u1, .. }
            | ControlSpec::Step { u0, u1, .. }
            | ControlSpec::DoubleStep { u0, u1, .. } => vec![*u0, *u1],
            // Range of (u0/2)(1 + cos/2) is [u0/4, 3u0/4].
            ControlSpec::Seasonality { u0, .. } => vec![0.25 * u0, 0.75 * u0],
            ControlSpec::PiecewiseConstant { values } => values.clone(),
            ControlSpec::Constant { value } => vec![*value],
        }
    }

    pub fn validate(&self, t_star: f64) -> Result<()> {
        if !(t_star > 0.0 && t_star.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {t_star}")));
        }
        if self.levels().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("control levels must lie in [0, 1]: {self:?}")));
        }
        match self {
            ControlSpec::PiecewiseConstant { values } if values.is_empty() => {
                Err(Error::Config("piecewise-constant control needs at least one value".into()))
            }
            ControlSpec::LinearPulse { dt, .. }
            | ControlSpec::DoubleStep { dt, .. }
            | ControlSpec::Seasonality { dt, .. }
                if !(*dt >= 0.0) =>
            {
                Err(Error::Config(format!("duration must be non-negative: {self:?}")))
            }
            _ => Ok(()),
        }
    }

    /// Evaluates the control at `t ∈ [0, t_star]`.
    pub fn eval(&self, t: f64, t_star: f64) -> Result<f64> {
        if !(0.0..=t_star).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {t_star}]")));
        }
        Ok(self.eval_unchecked(t, t_star))
    }

    fn eval_unchecked(&self, t: f64, t_star: f64) -> f64 {
        match *self {
            ControlSpec::LinearPulse { u0, u1, t0, dt } => {
                let b1 = t0 + dt / 3.0;
                let b2 = t0 + 4.0 * dt / 3.0;
                let b3 = t0 + 5.0 * dt / 3.0;
                if t <= t0 {
                    u0
                } else if t <= b1 {
                    let s = (t - t0) / (b1 - t0);
                    if s >= 1.0 {
                        u1
                    } else {
                        u0 + s * (u1 - u0)
                    }
                } else if t <= b2 {
                    u1
                } else if t <= b3 {
                    let s = (t - b2) / (b3 - b2);
                    if s >= 1.0 {
                        u0
                    } else {
                        u1 + s * (u0 - u1)
                    }
                } else {
                    u0
                }
            }
            ControlSpec::Step { u0, u1, t0 } => {
                if t <= t0 {
                    u0
                } else {
                    u1
                }
            }
            ControlSpec::Seasonality { u0, dt } => {
                0.5 * u0 * (1.0 + 0.5 * (2.0 * PI * t / t_star + dt / t_star * (PI / 2.0)).cos())
            }
            ControlSpec::DoubleStep { u0, u1, t0, dt } => {
                if t <= t0 {
                    u0
                } else if t <= t0 + dt / 2.0 {
                    u1
                } else if t <= t0 + dt {
                    u0
                } else {
                    u1
                }
            }
            ControlSpec::PiecewiseConstant { ref values } => {
                values[piecewise_slab(t, t_star, values.len())]
            }
            ControlSpec::Constant { value } => value,
        }
    }

    /// Pointwise observation on the grid nodes.
    pub fn discretize(&self, grid: &TimeGrid) -> ControlSignal {
        let t_star = grid.t_star();
        let samples = (0..grid.len())
            .map(|k| self.eval_unchecked(grid.point(k), t_star))
            .collect();
        ControlSignal { grid: *grid, samples }
    }
}

/// Slab index for `t` in an `n_slabs` equal partition of `[0, t_star]`.
///
/// The small slack absorbs rounding when `t` sits on a slab boundary, so that
/// a node at a boundary belongs to the slab starting there.
pub fn piecewise_slab(t: f64, t_star: f64, n_slabs: usize) -> usize {
    let pos = t * n_slabs as f64 / t_star;
    ((pos + 1e-9).floor() as usize).min(n_slabs - 1)
}

/// Sampled control values `U = (u(t_1), ..., u(t_n))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub grid: TimeGrid,
    pub samples: Vec<f64>,
}

impl ControlSignal {
    pub fn new(grid: TimeGrid, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} samples for a grid of {} points",
                samples.len(),
                grid.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("control samples must be finite".into()));
        }
        Ok(ControlSignal { grid, samples })
    }

    pub fn constant(grid: TimeGrid, level: f64) -> Self {
        ControlSignal {
            grid,
            samples: vec![level; grid.len()],
        }
    }
}

/// Uniform sampling ranges for the dofs of the parametric families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBounds {
    /// Range for `u0` and `u1`.
    pub level: [f64; 2],
    /// Range for the switch time `t0`; defaults to `[0, t*]`.
    #[serde(default)]
    pub t0: Option<[f64; 2]>,
    /// Range for durations `Δt`; defaults to `[0, t*/3]`.
    #[serde(default)]
    pub duration: Option<[f64; 2]>,
}

impl Default for SamplingBounds {
    fn default() -> Self {
        SamplingBounds {
            level: [0.0, 1.0],
            t0: None,
            duration: None,
        }
    }
}

impl SamplingBounds {
    pub fn t0_range(&self, t_star: f64) -> [f64; 2] {
        self.t0.unwrap_or([0.0, t_star])
    }

    pub fn duration_range(&self, t_star: f64) -> [f64; 2] {
        self.duration.unwrap_or([0.0, t_star / 3.0])
    }

    pub fn validate(&self, t_star: f64) -> Result<()> {
        let ok_level = valid_range(self.level, 0.0, 1.0);
        let ok_t0 = valid_range(self.t0_range(t_star), 0.0, t_star);
        let ok_dur = valid_range(self.duration_range(t_star), 0.0, t_star);
        if ok_level && ok_t0 && ok_dur {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sampling bounds {self:?} for t* = {t_star}")))
        }
    }
}

fn valid_range(r: [f64; 2], lo: f64, hi: f64) -> bool {
    r[0] <= r[1] && r[0] >= lo && r[1] <= hi
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The four parametric families in their fixed sampling order.
pub const MIXED_FAMILIES: [&str; 4] = ["linear_pulse", "step", "seasonality", "double_step"];

/// Draws `count` controls split evenly across the four parametric families
/// (remainder assigned in family order), dofs i.i.d. uniform in `bounds`.
pub fn sample_mixed_specs(seed: u64, count: usize, bounds: &SamplingBounds, t_star: f64) -> Result<Vec<ControlSpec>> {
    if count < 4 {
        return Err(Error::Config(format!("mixed sampling needs count >= 4, got {count}")));
    }
    bounds.validate(t_star)?;
    let mut rng = rng_from_seed(seed);
    let base = count / 4;
    let rem = count % 4;
    let lv = bounds.level;
    let t0r = bounds.t0_range(t_star);
    let dr = bounds.duration_range(t_star);
    let mut out = Vec::with_capacity(count);
    for fam in 0..4 {
        let m = base + usize::from(fam < rem);
        for _ in 0..m {
            let spec = match fam {
                0 => ControlSpec::LinearPulse {
                    u0: uniform(&mut rng, lv),
                    u1: uniform(&mut rng, lv),
                    t0: uniform(&mut rng, t0r),
                    dt: uniform(&mut rng, dr),
                },
                1 => ControlSpec::Step {
                    u0: uniform(&mut rng, lv),
                    u1: uniform(&mut rng, lv),
                    t0: uniform(&mut rng, t0r),
                },
                2 => ControlSpec::Seasonality {
                    u0: uniform(&mut rng, lv),
                    dt: uniform(&mut rng, dr),
                },
                _ => ControlSpec::DoubleStep {
                    u0: uniform(&mut rng, lv),
                    u1: uniform(&mut rng, lv),
                    t0: uniform(&mut rng, t0r),
                    dt: uniform(&mut rng, dr),
                },
            };
            out.push(spec);
        }
    }
    Ok(out)
}

pub fn sample_mixed(seed: u64, count: usize, bounds: &SamplingBounds, grid: &TimeGrid) -> Result<Vec<ControlSignal>> {
    Ok(sample_mixed_specs(seed, count, bounds, grid.t_star())?
        .iter()
        .map(|s| s.discretize(grid))
        .collect())
}

/// Piecewise-constant schedules with `n_phases` levels i.i.d. uniform in
/// `level_range`.
pub fn sample_piecewise_specs(seed: u64, count: usize, n_phases: usize, level_range: [f64; 2]) -> Result<Vec<ControlSpec>> {
    if n_phases == 0 {
        return Err(Error::Config("n_phases must be at least 1".into()));
    }
    if !valid_range(level_range, 0.0, 1.0) {
        return Err(Error::Config(format!("invalid level range {level_range:?}")));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..count)
        .map(|_| ControlSpec::PiecewiseConstant {
            values: (0..n_phases).map(|_| uniform(&mut rng, level_range)).collect(),
        })
        .collect())
}

pub fn sample_piecewise(
    seed: u64,
    count: usize,
    n_phases: usize,
    level_range: [f64; 2],
    grid: &TimeGrid,
) -> Result<Vec<ControlSignal>> {
    Ok(sample_piecewise_specs(seed, count, n_phases, level_range)?
        .iter()
        .map(|s| s.discretize(grid))
        .collect())
}

/// Step controls switching on at `t0` from zero to a height drawn from
/// `heights`, i.e. Heaviside schedules `h * H(t - t0)`.
pub fn sample_step_heights_specs(seed: u64, count: usize, heights: [f64; 2], t0: [f64; 2]) -> Result<Vec<ControlSpec>> {
    if !valid_range(heights, 0.0, 1.0) || t0[0] > t0[1] {
        return Err(Error::Config(format!("invalid step sampling ranges {heights:?}, {t0:?}")));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..count)
        .map(|_| {
            let h = uniform(&mut rng, heights);
            let t = uniform(&mut rng, t0);
            ControlSpec::heaviside(h, t)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_examples() {
        let s = ControlSpec::Step { u0: 0.2, u1: 0.6, t0: 50.0 };
        assert_eq!(s.eval(49.0, 100.0).unwrap(), 0.2);
        assert_eq!(s.eval(51.0, 100.0).unwrap(), 0.6);
        assert_eq!(s.eval(50.0, 100.0).unwrap(), 0.2);
        assert!(s.eval(100.5, 100.0).is_err());
    }

    #[test]
    fn step_at_node_uses_left_branch() {
        let grid = TimeGrid::new(10.0, 1.0).unwrap();
        let s = ControlSpec::Step { u0: 0.0, u1: 1.0, t0: grid.point(4) };
        let sig = s.discretize(&grid);
        assert_eq!(sig.samples[4], 0.0);
        assert_eq!(sig.samples[5], 1.0);
    }

    #[test]
    fn seasonality_at_zero() {
        let s = ControlSpec::Seasonality { u0: 0.8, dt: 0.0 };
        assert!((s.eval(0.0, 100.0).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn degenerate_pulse_is_constant() {
        let s = ControlSpec::LinearPulse { u0: 0.3, u1: 0.3, t0: 10.0, dt: 30.0 };
        for k in 0..=100 {
            assert_eq!(s.eval(k as f64, 100.0).unwrap(), 0.3);
        }
    }

    #[test]
    fn pulse_breakpoints() {
        let s = ControlSpec::LinearPulse { u0: 0.0, u1: 0.9, t0: 10.0, dt: 30.0 };
        assert_eq!(s.eval(10.0, 100.0).unwrap(), 0.0);
        assert!((s.eval(15.0, 100.0).unwrap() - 0.45).abs() < 1e-12);
        assert!((s.eval(20.0, 100.0).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(s.eval(40.0, 100.0).unwrap(), 0.9);
        assert!((s.eval(55.0, 100.0).unwrap() - 0.45).abs() < 1e-12);
        assert_eq!(s.eval(60.0, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn double_step_breakpoints() {
        let s = ControlSpec::DoubleStep { u0: 0.1, u1: 0.7, t0: 10.0, dt: 20.0 };
        assert_eq!(s.eval(10.0, 100.0).unwrap(), 0.1);
        assert_eq!(s.eval(15.0, 100.0).unwrap(), 0.7);
        assert_eq!(s.eval(20.0, 100.0).unwrap(), 0.7);
        assert_eq!(s.eval(25.0, 100.0).unwrap(), 0.1);
        assert_eq!(s.eval(30.0, 100.0).unwrap(), 0.1);
        assert_eq!(s.eval(31.0, 100.0).unwrap(), 0.7);
    }

    #[test]
    fn piecewise_interval_convention() {
        let grid = TimeGrid::new(2.0, 1.0).unwrap();
        let s = ControlSpec::PiecewiseConstant { values: vec![0.1, 0.5] };
        assert_eq!(s.discretize(&grid).samples, vec![0.1, 0.5, 0.5]);

        let grid = TimeGrid::new(5.0, 0.05).unwrap();
        let s = ControlSpec::PiecewiseConstant { values: vec![0.0, 0.1, 0.2, 0.3, 0.4] };
        let sig = s.discretize(&grid);
        assert_eq!(sig.samples[19], 0.0);
        assert_eq!(sig.samples[20], 0.1);
        assert_eq!(sig.samples[60], 0.3);
        assert_eq!(sig.samples[100], 0.4);
    }

    #[test]
    fn mixed_counts_and_determinism() {
        let grid = TimeGrid::new(100.0, 1.0).unwrap();
        let b = SamplingBounds::default();
        for (count, per) in [(500, 125), (100, 25)] {
            let specs = sample_mixed_specs(7, count, &b, 100.0).unwrap();
            for fam in MIXED_FAMILIES {
                assert_eq!(specs.iter().filter(|s| s.family() == fam).count(), per);
            }
        }
        let specs = sample_mixed_specs(7, 6, &b, 100.0).unwrap();
        let fams: Vec<_> = specs.iter().map(ControlSpec::family).collect();
        assert_eq!(fams, ["linear_pulse", "linear_pulse", "step", "step", "seasonality", "double_step"]);
        let a = sample_mixed(3, 40, &b, &grid).unwrap();
        let c = sample_mixed(3, 40, &b, &grid).unwrap();
        assert_eq!(a, c);
        assert!(sample_mixed(3, 3, &b, &grid).is_err());
    }

    #[test]
    fn piecewise_sampling_bounds() {
        let grid = TimeGrid::new(5.0, 0.05).unwrap();
        let sigs = sample_piecewise(11, 800, 5, [0.0, 0.8], &grid).unwrap();
        assert_eq!(sigs.len(), 800);
        assert!(sigs.iter().flat_map(|s| &s.samples).all(|v| (0.0..=0.8).contains(v)));
        let constant = sample_piecewise(11, 10, 1, [0.0, 0.8], &grid).unwrap();
        for s in constant {
            assert!(s.samples.iter().all(|v| *v == s.samples[0]));
        }
    }

    #[test]
    fn json_encoding() {
        let s = ControlSpec::Step { u0: 0.2, u1: 0.6, t0: 50.0 };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["family"], "step");
        assert_eq!(v["params"]["t0"], 50.0);
        let back: ControlSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        let pc: ControlSpec =
            serde_json::from_str(r#"{"family":"piecewise_constant","params":{"values":[0.1,0.2]}}"#).unwrap();
        assert_eq!(pc, ControlSpec::PiecewiseConstant { values: vec![0.1, 0.2] });
    }
}
