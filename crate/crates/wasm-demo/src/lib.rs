//! WebAssembly bindings for the static browser demo in `www/`.
//!
//! Each operation is a plain Rust function taking and returning JSON text, so
//! it can be tested natively; the `#[wasm_bindgen]` wrappers only convert the
//! error type.

use kol_core::datagen::SamplingPlan;
use kol_core::evaluation::prediction_error;
use kol_core::optcontrol::{self, optimize_quadratic, QuadConfig, TrueOdeConfig};
use kol_core::presets::train_surrogate;
use kol_core::{ControlSpec, FitOptions, KernelSpec, KolModel, Mode};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

type DemoResult<T> = Result<T, String>;

fn parse<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> DemoResult<T> {
    serde_json::from_str(text).map_err(|e| format!("{what}: {e}"))
}

fn to_json<T: Serialize>(v: &T) -> DemoResult<String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn core<T>(r: kol_core::Result<T>) -> DemoResult<T> {
    r.map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curves {
    times: Vec<f64>,
    compartments: Vec<String>,
    control: Vec<f64>,
    /// One row per compartment.
    values: Vec<Vec<f64>>,
}

fn curves(setup: &TrueOdeConfig, control: Vec<f64>, values: &kol_core::Matrix) -> Curves {
    Curves {
        times: setup.grid.points(),
        compartments: setup.model.compartments().iter().map(|s| s.to_string()).collect(),
        control,
        values: values.to_rows(),
    }
}

fn schedule(setup: &TrueOdeConfig, levels: &[f64]) -> DemoResult<Vec<f64>> {
    let spec = ControlSpec::PiecewiseConstant { values: levels.to_vec() };
    core(spec.validate(setup.grid.t_star()))?;
    Ok(spec.discretize(&setup.grid).samples)
}

/// True trajectory under a piecewise-constant schedule with equal phases.
pub fn simulate_json(setup: &str, levels: &str) -> DemoResult<String> {
    let setup: TrueOdeConfig = parse(setup, "setup")?;
    let levels: Vec<f64> = parse(levels, "levels")?;
    let u = schedule(&setup, &levels)?;
    let traj = core(core(setup.provider())?.trajectory(&u))?;
    to_json(&curves(&setup, u, &traj))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub phases: usize,
    pub size: usize,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: [f64; 2],
    pub kernel: KernelSpec,
}

fn default_level() -> [f64; 2] {
    [0.0, 0.8]
}

/// Largest training set the page may request; keeps the browser responsive.
pub const MAX_TRAIN: usize = 1000;

/// A KOL-m surrogate trained on random piecewise-constant schedules.
pub struct Surrogate {
    setup: TrueOdeConfig,
    model: KolModel,
}

#[derive(Serialize)]
struct Comparison {
    truth: Curves,
    prediction: Curves,
    p_err: f64,
}

impl Surrogate {
    pub fn train(setup: &str, options: &str) -> DemoResult<Self> {
        let setup: TrueOdeConfig = parse(setup, "setup")?;
        let o: TrainOptions = parse(options, "training options")?;
        if o.size == 0 || o.size > MAX_TRAIN {
            return Err(format!("training size must lie in 1..={MAX_TRAIN}, got {}", o.size));
        }
        let plan = SamplingPlan::Piecewise { phases: o.phases, level: o.level };
        let model = core(train_surrogate(&setup, plan, o.size, o.seed, Mode::Map, &o.kernel, &FitOptions::default()))?;
        Ok(Surrogate { setup, model })
    }

    pub fn summary(&self) -> String {
        format!(
            "KOL-m, {} on {} schedules, min pivot {:.2e}",
            self.model.kernel().label(),
            self.model.n_train(),
            self.model.min_pivot()
        )
    }

    /// Surrogate and true trajectories for one schedule, with their error.
    pub fn compare_json(&self, levels: &str) -> DemoResult<String> {
        let levels: Vec<f64> = parse(levels, "levels")?;
        let u = schedule(&self.setup, &levels)?;
        let truth = core(core(self.setup.provider())?.trajectory(&u))?;
        let pred = core(self.model.predict_values(&u))?.values;
        let p_err = core(prediction_error(std::slice::from_ref(&pred), std::slice::from_ref(&truth)))?.p_err;
        to_json(&Comparison {
            truth: curves(&self.setup, u.clone(), &truth),
            prediction: curves(&self.setup, u, &pred),
            p_err,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeOptions {
    pub phases: usize,
    pub c_i: f64,
    pub c_u: f64,
    #[serde(default = "default_upper")]
    pub u_upper: f64,
    #[serde(default = "default_multistart")]
    pub multistart: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_upper() -> f64 {
    0.7
}

fn default_multistart() -> usize {
    3
}

#[derive(Serialize)]
struct Optimum {
    levels: Vec<f64>,
    objective: f64,
    converged: bool,
    evaluations: usize,
    trajectory: Curves,
}

/// Quadratic-cost optimal schedule under the true dynamics.
pub fn optimize_json(setup: &str, options: &str) -> DemoResult<String> {
    let setup: TrueOdeConfig = parse(setup, "setup")?;
    let o: OptimizeOptions = parse(options, "optimize options")?;
    let q = QuadConfig {
        u_upper: o.u_upper,
        multistart: o.multistart,
        ..QuadConfig::new(o.c_i, o.c_u, o.phases)
    };
    let truth = core(setup.provider())?;
    let r = core(optimize_quadratic(&truth, &q, o.seed))?;
    let u = schedule(&setup, &r.levels)?;
    let traj = core(truth.trajectory(&u))?;
    to_json(&Optimum {
        objective: r.objective,
        converged: r.converged,
        evaluations: r.evaluations,
        trajectory: curves(&setup, u, &traj),
        levels: r.levels,
    })
}

/// Quadratic cost of a schedule under the true dynamics.
pub fn cost_json(setup: &str, levels: &str, c_i: f64, c_u: f64) -> DemoResult<f64> {
    let setup: TrueOdeConfig = parse(setup, "setup")?;
    let levels: Vec<f64> = parse(levels, "levels")?;
    let q = QuadConfig {
        u_upper: 1.0,
        ..QuadConfig::new(c_i, c_u, levels.len())
    };
    core(optcontrol::quadratic::objective(&core(setup.provider())?, &q, &levels))
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub fn simulate(setup: &str, levels: &str) -> Result<String, JsError> {
    simulate_json(setup, levels).map_err(js)
}

#[wasm_bindgen]
pub fn optimize(setup: &str, options: &str) -> Result<String, JsError> {
    optimize_json(setup, options).map_err(js)
}

#[wasm_bindgen]
pub fn cost(setup: &str, levels: &str, c_i: f64, c_u: f64) -> Result<f64, JsError> {
    cost_json(setup, levels, c_i, c_u).map_err(js)
}

#[wasm_bindgen(js_name = Surrogate)]
pub struct JsSurrogate(Surrogate);

#[wasm_bindgen(js_class = Surrogate)]
impl JsSurrogate {
    #[wasm_bindgen(constructor)]
    pub fn new(setup: &str, options: &str) -> Result<JsSurrogate, JsError> {
        Surrogate::train(setup, options).map(JsSurrogate).map_err(js)
    }

    pub fn summary(&self) -> String {
        self.0.summary()
    }

    pub fn compare(&self, levels: &str) -> Result<String, JsError> {
        self.0.compare_json(levels).map_err(js)
    }
}
