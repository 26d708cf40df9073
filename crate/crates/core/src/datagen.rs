//! Synthetic datasets: sampled controls, true trajectories and exact
//! derivative observations, with an on-disk format.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json   scenario, split, shapes, control specs, SHA-256 per block
//! controls.bin    N x n        little-endian f64, row-major
//! traj.bin        N x (d n)    compartment-major within a row
//! deriv.bin       N x (d n)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controls::{self, ControlSpec, SamplingBounds};
use crate::epimodels::{validate_state, Dynamics, EpiParams, ModelKind, Trajectory};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kol::{Mode, TrainingSet};
use crate::linalg::Matrix;

pub const FORMAT: u32 = 1;

/// How the control inputs of a dataset are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingPlan {
    /// Even split over pulse, step, seasonality and double-step families.
    Mixed {
        #[serde(default)]
        bounds: SamplingBounds,
    },
    /// Piecewise-constant schedules over `phases` equal slabs.
    Piecewise { phases: usize, level: [f64; 2] },
    /// Heaviside schedules `h H(t - t0)`.
    StepHeights {
        heights: [f64; 2],
        #[serde(default)]
        t0: Option<[f64; 2]>,
    },
    /// A fixed list of controls, cycled to the requested size.
    Explicit { controls: Vec<ControlSpec> },
}

impl SamplingPlan {
    pub fn families(&self) -> Vec<String> {
        match self {
            SamplingPlan::Mixed { .. } => controls::MIXED_FAMILIES.iter().map(|s| s.to_string()).collect(),
            SamplingPlan::Piecewise { .. } => vec!["piecewise_constant".into()],
            SamplingPlan::StepHeights { .. } => vec!["step".into()],
            SamplingPlan::Explicit { controls } => {
                let mut f: Vec<String> = controls.iter().map(|c| c.family().to_string()).collect();
                f.sort();
                f.dedup();
                f
            }
        }
    }

    pub fn sample(&self, seed: u64, count: usize, grid: &TimeGrid) -> Result<Vec<ControlSpec>> {
        let t_star = grid.t_star();
        let specs = match self {
            SamplingPlan::Mixed { bounds } => controls::sample_mixed_specs(seed, count, bounds, t_star)?,
            SamplingPlan::Piecewise { phases, level } => {
                controls::sample_piecewise_specs(seed, count, *phases, *level)?
            }
            SamplingPlan::StepHeights { heights, t0 } => {
                controls::sample_step_heights_specs(seed, count, *heights, t0.unwrap_or([0.0, t_star]))?
            }
            SamplingPlan::Explicit { controls } => {
                if controls.is_empty() {
                    return Err(Error::Config("explicit plan needs at least one control".into()));
                }
                controls.iter().cycle().take(count).cloned().collect()
            }
        };
        for s in &specs {
            s.validate(t_star)?;
        }
        Ok(specs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sizes {
    pub train: usize,
    #[serde(default)]
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub train: u64,
    /// Defaults to a value derived from `train` through an independent mix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<u64>,
}

impl Seeds {
    pub fn test_seed(&self) -> u64 {
        self.test.unwrap_or_else(|| splitmix64(self.train ^ 0x7e57_5eed_0000_0001))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    pub params: EpiParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub grid: TimeGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    pub plan: SamplingPlan,
    pub sizes: Sizes,
    pub seeds: Seeds,
}

impl ScenarioConfig {
    pub fn initial_state(&self) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| self.model.default_initial_state())
    }

    pub fn dynamics(&self) -> Result<Dynamics> {
        Dynamics::new(self.model, self.params)
    }

    pub fn resolved_substeps(&self) -> Result<usize> {
        match self.substeps {
            Some(0) => Err(Error::Config("substeps must be at least 1".into())),
            Some(s) => Ok(s),
            None => Ok(self.dynamics()?.default_substeps(self.grid.dt())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.dynamics()?;
        validate_state(self.model, &self.initial_state()).map_err(|e| Error::Config(e.to_string()))?;
        self.resolved_substeps()?;
        if self.sizes.train == 0 {
            return Err(Error::Config("training size must be at least 1".into()));
        }
        if let SamplingPlan::Mixed { bounds } = &self.plan {
            bounds.validate(self.grid.t_star())?;
        }
        Ok(())
    }

    pub fn seed_for(&self, split: Split) -> u64 {
        match split {
            Split::Train => self.seeds.train,
            Split::Test => self.seeds.test_seed(),
        }
    }

    pub fn size_for(&self, split: Split) -> usize {
        match split {
            Split::Train => self.sizes.train,
            Split::Test => self.sizes.test,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Controls with their true trajectories and derivative observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub split: Split,
    pub specs: Vec<ControlSpec>,
    /// `N x n`
    pub controls: Matrix,
    /// `N x (d n)`, compartment-major within a row.
    pub trajectories: Matrix,
    /// `N x (d n)`
    pub derivatives: Matrix,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.controls.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.config.model.dim()
    }

    pub fn grid(&self) -> TimeGrid {
        self.config.grid
    }

    /// Trajectory of sample `i` as a `d x n` matrix.
    pub fn trajectory(&self, i: usize) -> Matrix {
        Matrix::from_vec(self.dim(), self.grid().len(), self.trajectories.row(i).to_vec()).expect("shape")
    }

    pub fn derivative(&self, i: usize) -> Matrix {
        Matrix::from_vec(self.dim(), self.grid().len(), self.derivatives.row(i).to_vec()).expect("shape")
    }

    /// Largest `|Σ_c x_c(T_k) - 1|` over all samples and nodes.
    pub fn max_conservation_defect(&self) -> f64 {
        let (d, n) = (self.dim(), self.grid().len());
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            let row = self.trajectories.row(i);
            for k in 0..n {
                let s: f64 = (0..d).map(|c| row[c * n + k]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    /// Smallest trajectory value over the dataset.
    pub fn min_value(&self) -> f64 {
        self.trajectories.min()
    }

    pub fn to_training_set(&self, mode: Mode) -> Result<TrainingSet> {
        let targets = match mode {
            Mode::Map => self.trajectories.clone(),
            Mode::Derivative => self.derivatives.clone(),
        };
        let mut ts = TrainingSet::new(
            mode,
            self.grid(),
            self.dim(),
            self.controls.clone(),
            targets,
            self.config.initial_state(),
        )?;
        ts.model = Some(self.config.model);
        ts.families = self.config.plan.families();
        Ok(ts)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let blocks = [
            ("controls.bin", &self.controls),
            ("traj.bin", &self.trajectories),
            ("deriv.bin", &self.derivatives),
        ];
        let mut checksums = std::collections::BTreeMap::new();
        for (name, m) in blocks {
            let bytes = to_le_bytes(m.as_slice());
            checksums.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
            fs::write(dir.join(name), bytes)?;
        }
        let manifest = DatasetManifest {
            format: FORMAT,
            config: self.config.clone(),
            split: self.split,
            samples: self.len(),
            points: self.grid().len(),
            compartments: self.dim(),
            specs: self.specs.clone(),
            sha256: checksums,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| Error::from(e).context(format!("reading {}", dir.join("manifest.json").display())))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("dataset manifest: {e}")))?;
        if m.format != FORMAT {
            return Err(Error::Format(format!("dataset format {} is not supported", m.format)));
        }
        let n = m.config.grid.len();
        let d = m.config.model.dim();
        if m.points != n || m.compartments != d || m.specs.len() != m.samples {
            return Err(Error::Format("manifest shapes are inconsistent".into()));
        }
        let load = |name: &str, cols: usize| -> Result<Matrix> {
            let bytes = fs::read(dir.join(name))?;
            let want = m
                .sha256
                .get(name)
                .ok_or_else(|| Error::Format(format!("manifest has no checksum for {name}")))?;
            if &hex::encode(Sha256::digest(&bytes)) != want {
                return Err(Error::Format(format!("checksum mismatch in {name}")));
            }
            if bytes.len() != 8 * m.samples * cols {
                return Err(Error::Format(format!(
                    "{name} has {} bytes, expected {}",
                    bytes.len(),
                    8 * m.samples * cols
                )));
            }
            Matrix::from_vec(m.samples, cols, from_le_bytes(&bytes))
        };
        let ds = Dataset {
            controls: load("controls.bin", n)?,
            trajectories: load("traj.bin", d * n)?,
            derivatives: load("deriv.bin", d * n)?,
            config: m.config,
            split: m.split,
            specs: m.specs,
        };
        if ds
            .controls
            .as_slice()
            .iter()
            .chain(ds.trajectories.as_slice())
            .chain(ds.derivatives.as_slice())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Format("dataset contains non-finite values".into()));
        }
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    format: u32,
    config: ScenarioConfig,
    split: Split,
    samples: usize,
    points: usize,
    compartments: usize,
    specs: Vec<ControlSpec>,
    sha256: std::collections::BTreeMap<String, String>,
}

fn to_le_bytes(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * v.len());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn from_le_bytes(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

/// Simulates the given controls under the scenario's dynamics.
pub fn simulate_specs(config: &ScenarioConfig, split: Split, specs: Vec<ControlSpec>) -> Result<Dataset> {
    config.validate()?;
    let dynamics = config.dynamics()?;
    let grid = config.grid;
    let x0 = config.initial_state();
    let substeps = config.resolved_substeps()?;
    let (d, n) = (config.model.dim(), grid.len());

    let rows: Vec<Result<(Vec<f64>, Trajectory, Matrix)>> = crate::par_map(&specs, |i, spec| {
        let u = spec.discretize(&grid);
        let traj = dynamics
            .integrate(&x0, &u.samples, &grid, substeps)
            .map_err(|e| e.context(format!("sample {i}")))?;
        let der = dynamics.derivative_observations(&traj, &u.samples)?;
        Ok((u.samples, traj, der))
    });
    let count = specs.len();
    let mut controls = Matrix::zeros(count, n);
    let mut trajectories = Matrix::zeros(count, d * n);
    let mut derivatives = Matrix::zeros(count, d * n);
    for (i, r) in rows.into_iter().enumerate() {
        let (u, traj, der) = r?;
        controls.row_mut(i).copy_from_slice(&u);
        trajectories.row_mut(i).copy_from_slice(traj.values.as_slice());
        derivatives.row_mut(i).copy_from_slice(der.as_slice());
    }
    Ok(Dataset {
        config: config.clone(),
        split,
        specs,
        controls,
        trajectories,
        derivatives,
    })
}

/// Samples the split's controls from the plan and simulates them.
pub fn generate(config: &ScenarioConfig, split: Split) -> Result<Dataset> {
    config.validate()?;
    let count = config.size_for(split);
    let specs = config.plan.sample(config.seed_for(split), count, &config.grid)?;
    simulate_specs(config, split, specs)
}

/// Derivative estimate from trajectory samples alone: central differences
/// inside, second-order one-sided differences at the ends.
pub fn central_differences(values: &Matrix, dt: f64) -> Result<Matrix> {
    let (d, n) = (values.rows(), values.cols());
    if n < 3 {
        return Err(Error::Dimension("finite differences need at least 3 nodes".into()));
    }
    let mut out = Matrix::zeros(d, n);
    for c in 0..d {
        let x = values.row(c);
        let o = out.row_mut(c);
        o[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
        for k in 1..n - 1 {
            o[k] = (x[k + 1] - x[k - 1]) / (2.0 * dt);
        }
        o[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
    }
    Ok(out)
}
