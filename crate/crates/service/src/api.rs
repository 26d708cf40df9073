use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use kol_core::datagen::{self, ScenarioConfig, Split};
use kol_core::evaluation;
use kol_core::kol::{self, FitOptions, KolModel, Mode};
use kol_core::optcontrol::{
    self, EradicationConfig, EradicationResult, OcResult, OptOptions, QuadConfig, StateProvider, TrueOdeConfig,
};
use kol_core::{ControlSignal, ControlSpec, EpiParams, KernelSpec, Matrix, ModelKind, TimeGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::{AppState, Entry};

type Shared = State<Arc<AppState>>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("worker failed: {e}"))
    })?
}

/// Registry metadata of a published model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    /// Publication order, starting at 1.
    pub seq: u64,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    pub compartments: Vec<String>,
    /// The kernel exactly as submitted (or as stored in a loaded file).
    pub kernel: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub n_train: usize,
    pub ridge: f64,
    pub positivity: bool,
    pub families: Vec<String>,
    /// Smallest and largest control value seen in training.
    pub control_range: [f64; 2],
    pub min_pivot: f64,
    pub fit_seconds: f64,
    /// Error on the training set itself, when defined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_p_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

fn compartment_names(kind: Option<ModelKind>, dim: usize) -> Vec<String> {
    match kind {
        Some(k) => k.compartments().iter().map(|s| s.to_string()).collect(),
        None => (0..dim).map(|c| format!("x{c}")).collect(),
    }
}

impl ModelInfo {
    pub fn from_model(
        id: String,
        seq: u64,
        model: &KolModel,
        kernel: Option<Value>,
        scenario: Option<ScenarioConfig>,
        train_p_err: Option<f64>,
        source: Option<String>,
    ) -> Self {
        let inputs = model.inputs().as_slice();
        let lo = inputs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = inputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ModelInfo {
            id,
            seq,
            mode: model.mode(),
            model: model.model_kind(),
            compartments: compartment_names(model.model_kind(), model.dim()),
            kernel: kernel.unwrap_or_else(|| serde_json::to_value(model.kernel()).expect("kernel encodes")),
            scenario,
            grid: model.grid(),
            x0: model.x0().to_vec(),
            n_train: model.n_train(),
            ridge: model.ridge(),
            positivity: model.positivity(),
            families: model.families().to_vec(),
            control_range: [lo, hi],
            min_pivot: model.min_pivot(),
            fit_seconds: model.timing().total(),
            train_p_err,
            source,
        }
    }
}

/// `POST /models` body.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    pub scenario: ScenarioConfig,
    pub kernel: Value,
    pub mode: Mode,
    #[serde(default)]
    pub fit: FitOptions,
}

/// `POST /models/{id}/predict` body: raw samples on the model grid or a
/// parametric control.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub samples: Option<Vec<f64>>,
    #[serde(default)]
    pub control: Option<ControlSpec>,
}

impl PredictRequest {
    fn signal(self, grid: TimeGrid) -> ApiResult<ControlSignal> {
        control_signal(self.samples, self.control, grid)
    }
}

fn control_signal(samples: Option<Vec<f64>>, control: Option<ControlSpec>, grid: TimeGrid) -> ApiResult<ControlSignal> {
    match (samples, control) {
        (Some(s), None) => Ok(ControlSignal::new(grid, s)?),
        (None, Some(c)) => {
            c.validate(grid.t_star())?;
            Ok(c.discretize(&grid))
        }
        _ => Err(ApiError::bad_request("give exactly one of 'samples' or 'control'")),
    }
}

/// `POST /simulate` body.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    pub model: ModelKind,
    pub params: EpiParams,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub grid: TimeGrid,
    #[serde(default)]
    pub substeps: Option<usize>,
    #[serde(default)]
    pub samples: Option<Vec<f64>>,
    #[serde(default)]
    pub control: Option<ControlSpec>,
}

/// `POST /models/{id}/optimize` body.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizeRequest {
    Quadratic {
        c_i: f64,
        c_u: f64,
        phases: usize,
        #[serde(default)]
        u_upper: Option<f64>,
        #[serde(default)]
        multistart: Option<usize>,
        #[serde(default)]
        optimizer: Option<OptOptions>,
        #[serde(default)]
        seed: u64,
        /// Ground truth for cross-evaluating the returned schedule.
        #[serde(default)]
        simulate: Option<TrueOdeConfig>,
    },
    Eradication {
        u_max: f64,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        tau_step: Option<f64>,
        #[serde(default)]
        tau_max: Option<f64>,
    },
}

/// Trajectory payload shared by predict and simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub grid: TimeGrid,
    pub times: Vec<f64>,
    pub compartments: Vec<String>,
    /// The control samples that were used.
    pub control: Vec<f64>,
    /// One row per compartment.
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conservation_defect: Option<f64>,
}

pub type TrainResponse = ModelInfo;

pub async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

pub async fn not_found() -> ApiError {
    ApiError::not_found("no such route")
}

pub async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this route")
}

pub async fn list_models(State(state): Shared) -> Json<Vec<ModelInfo>> {
    Json(state.list())
}

pub async fn get_model(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<ModelInfo>> {
    Ok(Json(state.get(&id)?.info.clone()))
}

pub async fn train(State(state): Shared, body: Bytes) -> ApiResult<Json<TrainResponse>> {
    let req: TrainRequest = parse(&body)?;
    let kernel: KernelSpec = serde_json::from_value(req.kernel.clone())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", format!("kernel: {e}")))?;
    kernel.validate()?;
    req.scenario.validate()?;
    if req.scenario.sizes.train > state.max_train {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_large",
            format!(
                "training size {} exceeds the cap of {}",
                req.scenario.sizes.train, state.max_train
            ),
        ));
    }
    let _guard = state.training.lock().await;
    let scenario = req.scenario.clone();
    let (mode, fit_opts) = (req.mode, req.fit);
    let (model, train_err) = blocking(move || {
        let ds = datagen::generate(&scenario, Split::Train)?;
        let model = kol::fit(&ds.to_training_set(mode)?, &kernel, &fit_opts)?;
        let err = evaluation::evaluate(&model, &ds).ok().map(|r| r.p_err);
        Ok((model, err))
    })
    .await?;
    let raw_kernel = req.kernel;
    let scenario = req.scenario;
    let entry = state.publish(move |id, seq| Entry {
        info: ModelInfo::from_model(id, seq, &model, Some(raw_kernel), Some(scenario), train_err, None),
        model,
    });
    Ok(Json(entry.info.clone()))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.to_rows()
}

pub async fn predict(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<TrajectoryResponse>> {
    let entry = state.get(&id)?;
    let req: PredictRequest = parse(&body)?;
    let grid = entry.model.grid();
    let u = req.signal(grid)?;
    let p = entry.model.predict_samples(&u)?;
    Ok(Json(TrajectoryResponse {
        model: Some(id),
        mode: Some(entry.model.mode()),
        grid,
        times: grid.points(),
        compartments: entry.info.compartments.clone(),
        control: u.samples,
        values: rows(&p.values),
        derivative: p.derivative.as_ref().map(rows),
        conservation_defect: None,
    }))
}

pub async fn simulate(body: Bytes) -> ApiResult<Json<TrajectoryResponse>> {
    let req: SimulateRequest = parse(&body)?;
    let cfg = TrueOdeConfig {
        model: req.model,
        params: req.params,
        x0: req.x0,
        grid: req.grid,
        substeps: req.substeps,
    };
    let u = control_signal(req.samples, req.control, cfg.grid)?;
    let provider = cfg.provider()?;
    let traj = provider.trajectory(&u.samples)?;
    let defect = (0..traj.cols())
        .map(|k| ((0..traj.rows()).map(|c| traj.get(c, k)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(Json(TrajectoryResponse {
        model: None,
        mode: None,
        grid: cfg.grid,
        times: cfg.grid.points(),
        compartments: compartment_names(Some(cfg.model), cfg.model.dim()),
        control: u.samples,
        values: rows(&traj),
        derivative: None,
        conservation_defect: Some(defect),
    }))
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OptimizeResponse {
    Quadratic { model: String, result: OcResult },
    Eradication { model: String, result: EradicationResult },
}

pub async fn optimize(State(state): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let entry = state.get(&id)?;
    let req: OptimizeRequest = parse(&body)?;
    let model_id = id.clone();
    let response = blocking(move || {
        let provider = StateProvider::Surrogate(&entry.model);
        match req {
            OptimizeRequest::Quadratic {
                c_i,
                c_u,
                phases,
                u_upper,
                multistart,
                optimizer,
                seed,
                simulate,
            } => {
                let mut cfg = QuadConfig::new(c_i, c_u, phases);
                if let Some(v) = u_upper {
                    cfg.u_upper = v;
                }
                if let Some(v) = multistart {
                    cfg.multistart = v;
                }
                if let Some(v) = optimizer {
                    cfg.optimizer = v;
                }
                let mut result = optcontrol::optimize_quadratic(&provider, &cfg, seed)?;
                if let Some(truth) = simulate {
                    let truth = truth.provider()?;
                    result.true_objective = Some(optcontrol::cross_evaluate(&result.levels, &truth, &cfg)?);
                }
                Ok(OptimizeResponse::Quadratic { model: model_id, result })
            }
            OptimizeRequest::Eradication {
                u_max,
                eta,
                tau_step,
                tau_max,
            } => {
                let mut cfg = EradicationConfig::new(u_max);
                cfg.eta = eta;
                cfg.tau_max = tau_max;
                if let Some(s) = tau_step {
                    cfg.tau_step = s;
                }
                let result = optcontrol::min_eradication(&provider, &cfg)?;
                Ok(OptimizeResponse::Eradication { model: model_id, result })
            }
        }
    })
    .await?;
    let converged = match &response {
        OptimizeResponse::Quadratic { result, .. } => result.converged,
        OptimizeResponse::Eradication { .. } => true,
    };
    let body = serde_json::to_value(&response).map_err(|e| ApiError::from(kol_core::Error::from(e)))?;
    if !converged {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "not_converged",
            "optimizer stopped before meeting its tolerances; the best schedule found is attached",
        )
        .with_context(body));
    }
    Ok(Json(body))
}
