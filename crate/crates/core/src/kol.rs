//! Kernel operator learning regressors.
//!
//! Both modes solve `(S(U, U) + λI) A = V` with one shared Cholesky factor
//! and predict `v(u) = Σ_j S(u, U_j) A_j`:
//!
//! * [`Mode::Map`] regresses the trajectories directly. With positivity on,
//!   the regression targets are `sqrt(x)` and predictions are squared.
//! * [`Mode::Derivative`] regresses the time derivatives and reconstructs
//!   the trajectory as `x0` plus the cumulative trapezoid of the prediction.

use std::fs;
use std::io::Write;
use std::path::Path;
use web_time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controls::ControlSignal;
use crate::epimodels::ModelKind;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernels::{self, KernelSpec};
use crate::linalg::{axpy, dot, Cholesky, Matrix};

const MAGIC: &[u8; 8] = b"KOLMODEL";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Control-to-trajectory map.
    #[serde(rename = "m")]
    Map,
    /// Control-to-derivative map followed by time integration.
    #[serde(rename = "partial", alias = "d")]
    Derivative,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Map => "m",
            Mode::Derivative => "partial",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m" | "map" | "kol-m" => Ok(Mode::Map),
            "partial" | "d" | "derivative" | "kol-d" => Ok(Mode::Derivative),
            other => Err(Error::Config(format!("unknown mode '{other}' (expected m or partial)"))),
        }
    }
}

/// Regression data: `N` control samples and their flattened targets.
///
/// Targets are compartment-major: entry `c * n + k` is compartment `c` at
/// node `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub mode: Mode,
    pub grid: TimeGrid,
    pub dim: usize,
    pub inputs: Matrix,
    pub targets: Matrix,
    pub x0: Vec<f64>,
    pub model: Option<ModelKind>,
    /// Control families present in the inputs, when known.
    pub families: Vec<String>,
}

impl TrainingSet {
    pub fn new(mode: Mode, grid: TimeGrid, dim: usize, inputs: Matrix, targets: Matrix, x0: Vec<f64>) -> Result<Self> {
        let ts = TrainingSet {
            mode,
            grid,
            dim,
            inputs,
            targets,
            x0,
            model: None,
            families: Vec::new(),
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if self.inputs.rows() == 0 {
            return Err(Error::Dimension("training set is empty".into()));
        }
        if self.inputs.rows() != self.targets.rows() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                self.inputs.rows(),
                self.targets.rows()
            )));
        }
        if self.inputs.cols() != n {
            return Err(Error::Dimension(format!(
                "inputs have {} columns, grid has {n} points",
                self.inputs.cols()
            )));
        }
        if self.dim == 0 || self.targets.cols() != self.dim * n {
            return Err(Error::Dimension(format!(
                "targets have {} columns, expected {} x {n}",
                self.targets.cols(),
                self.dim
            )));
        }
        if self.x0.len() != self.dim {
            return Err(Error::Dimension(format!(
                "initial state has {} entries, expected {}",
                self.x0.len(),
                self.dim
            )));
        }
        if let Some(m) = self.model {
            if m.dim() != self.dim {
                return Err(Error::Dimension(format!("{} has {} compartments, not {}", m.name(), m.dim(), self.dim)));
            }
        }
        if self.inputs.as_slice().iter().chain(self.targets.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("training data must be finite".into()));
        }
        if self.mode == Mode::Map {
            if let Some((i, v)) = self
                .targets
                .as_slice()
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                let (row, col) = (i / self.targets.cols(), i % self.targets.cols());
                return Err(Error::Domain(format!(
                    "trajectory target {v} outside [0, 1] (sample {row}, compartment {}, node {})",
                    col / n,
                    col % n
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Square-root/square positivity transform. Defaults to on for
    /// [`Mode::Map`]; not available for [`Mode::Derivative`].
    #[serde(default)]
    pub positivity: Option<bool>,
}

fn default_ridge() -> f64 {
    crate::DEFAULT_RIDGE
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: crate::DEFAULT_RIDGE,
            positivity: None,
        }
    }
}

/// Wall-clock breakdown of a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTiming {
    pub gram_seconds: f64,
    pub factor_seconds: f64,
    pub solve_seconds: f64,
}

impl FitTiming {
    pub fn total(&self) -> f64 {
        self.gram_seconds + self.factor_seconds + self.solve_seconds
    }
}

/// A fitted surrogate. Immutable; share freely across threads.
#[derive(Debug, Clone)]
pub struct KolModel {
    mode: Mode,
    kernel: KernelSpec,
    grid: TimeGrid,
    x0: Vec<f64>,
    dim: usize,
    ridge: f64,
    positivity: bool,
    inputs: Matrix,
    self_dots: Vec<f64>,
    coeffs: Matrix,
    min_pivot: f64,
    model: Option<ModelKind>,
    families: Vec<String>,
    timing: FitTiming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub grid: TimeGrid,
    /// `d x n` trajectory.
    pub values: Matrix,
    /// Raw derivative prediction (`d x n`), derivative mode only.
    pub derivative: Option<Matrix>,
}

impl Prediction {
    /// Piecewise-linear interpolation of the trajectory at `t`.
    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        let (k, frac) = self.grid.locate(t)?;
        Ok((0..self.values.rows())
            .map(|c| {
                let a = self.values.get(c, k);
                if frac == 0.0 {
                    a
                } else {
                    let b = self.values.get(c, k + 1);
                    a + frac * (b - a)
                }
            })
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    mode: Mode,
    kernel: KernelSpec,
    ridge: f64,
    positivity: bool,
    grid: TimeGrid,
    x0: Vec<f64>,
    dims: Dims,
    min_pivot: f64,
    #[serde(default)]
    model: Option<ModelKind>,
    #[serde(default)]
    families: Vec<String>,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    n_train: usize,
    n_points: usize,
    compartments: usize,
}

/// Fits a surrogate on `ts` with the given kernel.
pub fn fit(ts: &TrainingSet, kernel: &KernelSpec, opts: &FitOptions) -> Result<KolModel> {
    ts.validate()?;
    kernel.validate()?;
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be non-negative, got {}", opts.ridge)));
    }
    let positivity = match (ts.mode, opts.positivity) {
        (Mode::Map, p) => p.unwrap_or(true),
        (Mode::Derivative, Some(true)) => {
            return Err(Error::Config("positivity transform applies to trajectory mode only".into()))
        }
        (Mode::Derivative, _) => false,
    };

    let t = Instant::now();
    let mut g = kernels::gram(kernel, &ts.inputs)?;
    for i in 0..g.rows() {
        g.set(i, i, g.get(i, i) + opts.ridge);
    }
    let gram_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let chol = Cholesky::factor(&g)?;
    drop(g);
    let factor_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let rhs = if positivity {
        let data = ts.targets.as_slice().iter().map(|v| v.sqrt()).collect();
        Matrix::from_vec(ts.targets.rows(), ts.targets.cols(), data)?
    } else {
        ts.targets.clone()
    };
    let coeffs = chol.solve_many(&rhs)?;
    let solve_seconds = t.elapsed().as_secs_f64();

    let self_dots = (0..ts.inputs.rows()).map(|i| dot(ts.inputs.row(i), ts.inputs.row(i))).collect();
    Ok(KolModel {
        mode: ts.mode,
        kernel: kernel.clone(),
        grid: ts.grid,
        x0: ts.x0.clone(),
        dim: ts.dim,
        ridge: opts.ridge,
        positivity,
        inputs: ts.inputs.clone(),
        self_dots,
        coeffs,
        min_pivot: chol.min_pivot(),
        model: ts.model,
        families: ts.families.clone(),
        timing: FitTiming {
            gram_seconds,
            factor_seconds,
            solve_seconds,
        },
    })
}

impl KolModel {
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }
    pub fn x0(&self) -> &[f64] {
        &self.x0
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn ridge(&self) -> f64 {
        self.ridge
    }
    pub fn positivity(&self) -> bool {
        self.positivity
    }
    pub fn n_train(&self) -> usize {
        self.inputs.rows()
    }
    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }
    /// `N x (d n)` coefficient matrix.
    pub fn coefficients(&self) -> &Matrix {
        &self.coeffs
    }
    /// Smallest Cholesky pivot of the regularised Gram matrix.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }
    pub fn model_kind(&self) -> Option<ModelKind> {
        self.model
    }
    pub fn families(&self) -> &[String] {
        &self.families
    }
    /// Timing of the fit; zero for models loaded from disk.
    pub fn timing(&self) -> FitTiming {
        self.timing
    }

    /// `k(u)^T A` reshaped to `d x n`, before any output transform.
    pub fn raw(&self, samples: &[f64]) -> Result<Matrix> {
        let k = kernels::cross(&self.kernel, &self.inputs, &self.self_dots, samples)?;
        let mut out = vec![0.0; self.coeffs.cols()];
        for (i, ki) in k.iter().enumerate() {
            axpy(*ki, self.coeffs.row(i), &mut out);
        }
        Matrix::from_vec(self.dim, self.grid.len(), out)
    }

    /// Prediction from raw control samples on the model grid.
    pub fn predict_values(&self, samples: &[f64]) -> Result<Prediction> {
        if samples.len() != self.grid.len() {
            return Err(Error::Dimension(format!(
                "control has {} samples, model grid has {} points",
                samples.len(),
                self.grid.len()
            )));
        }
        let raw = self.raw(samples)?;
        match self.mode {
            Mode::Map => {
                let values = if self.positivity {
                    let data = raw.as_slice().iter().map(|v| v * v).collect();
                    Matrix::from_vec(raw.rows(), raw.cols(), data)?
                } else {
                    raw
                };
                Ok(Prediction {
                    grid: self.grid,
                    values,
                    derivative: None,
                })
            }
            Mode::Derivative => {
                let values = cumulative_trapezoid(&raw, &self.x0, self.grid.dt());
                Ok(Prediction {
                    grid: self.grid,
                    values,
                    derivative: Some(raw),
                })
            }
        }
    }

    pub fn predict_samples(&self, u: &ControlSignal) -> Result<Prediction> {
        if !u.grid.same_as(&self.grid) {
            return Err(Error::Dimension(format!(
                "control grid ({} points over [0, {}]) differs from the model grid ({} points over [0, {}])",
                u.grid.len(),
                u.grid.t_star(),
                self.grid.len(),
                self.grid.t_star()
            )));
        }
        self.predict_values(&u.samples)
    }

    pub fn predict_at(&self, u: &ControlSignal, t: f64) -> Result<Vec<f64>> {
        self.grid.locate(t)?;
        self.predict_samples(u)?.at(t)
    }

    pub fn batch_predict(&self, controls: &[ControlSignal]) -> Result<Vec<Prediction>> {
        crate::par_map(controls, |i, u| {
            self.predict_samples(u).map_err(|e| e.context(format!("batch element {i}")))
        })
        .into_iter()
        .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut blocks = Vec::with_capacity(8 * (self.inputs.as_slice().len() + self.coeffs.as_slice().len()));
        for v in self.inputs.as_slice().iter().chain(self.coeffs.as_slice()) {
            blocks.extend_from_slice(&v.to_le_bytes());
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            mode: self.mode,
            kernel: self.kernel.clone(),
            ridge: self.ridge,
            positivity: self.positivity,
            grid: self.grid,
            x0: self.x0.clone(),
            dims: Dims {
                n_train: self.inputs.rows(),
                n_points: self.grid.len(),
                compartments: self.dim,
            },
            min_pivot: self.min_pivot,
            model: self.model,
            families: self.families.clone(),
            sha256: hex::encode(Sha256::digest(&blocks)),
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        let tmp = path.with_extension("partial");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(MAGIC)?;
            f.write_all(&(json.len() as u64).to_le_bytes())?;
            f.write_all(&json)?;
            f.write_all(&blocks)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(Error::Format("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.version
            )));
        }
        let Dims {
            n_train,
            n_points,
            compartments,
        } = manifest.dims;
        if n_points != manifest.grid.len() || manifest.x0.len() != compartments || n_train == 0 {
            return Err(Error::Format("inconsistent dimensions in manifest".into()));
        }
        let n_u = n_train * n_points;
        let n_a = n_train * compartments * n_points;
        let data = &body[mlen..];
        if data.len() != 8 * (n_u + n_a) {
            return Err(Error::Format(format!(
                "data section has {} bytes, manifest declares {}",
                data.len(),
                8 * (n_u + n_a)
            )));
        }
        if hex::encode(Sha256::digest(data)) != manifest.sha256 {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let floats: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let inputs = Matrix::from_vec(n_train, n_points, floats[..n_u].to_vec())?;
        let coeffs = Matrix::from_vec(n_train, compartments * n_points, floats[n_u..].to_vec())?;
        manifest.kernel.validate()?;
        let self_dots = (0..n_train).map(|i| dot(inputs.row(i), inputs.row(i))).collect();
        Ok(KolModel {
            mode: manifest.mode,
            kernel: manifest.kernel,
            grid: manifest.grid,
            x0: manifest.x0,
            dim: compartments,
            ridge: manifest.ridge,
            positivity: manifest.positivity,
            inputs,
            self_dots,
            coeffs,
            min_pivot: manifest.min_pivot,
            model: manifest.model,
            families: manifest.families,
            timing: FitTiming::default(),
        })
    }
}

/// `x0` plus the cumulative trapezoid of each row of `rates`.
pub fn cumulative_trapezoid(rates: &Matrix, x0: &[f64], dt: f64) -> Matrix {
    let (d, n) = (rates.rows(), rates.cols());
    let mut out = Matrix::zeros(d, n);
    for c in 0..d {
        let r = rates.row(c);
        let o = out.row_mut(c);
        o[0] = x0[c];
        for k in 1..n {
            o[k] = o[k - 1] + 0.5 * dt * (r[k - 1] + r[k]);
        }
    }
    out
}
