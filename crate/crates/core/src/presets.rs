//! Named experiment protocols with every parameter pinned in a JSON file
//! under `configs/`, plus the runners for the two control studies.

use serde::{Deserialize, Serialize};

use crate::datagen::{self, SamplingPlan, ScenarioConfig, Seeds, Sizes, Split};
use crate::error::{Error, Result};
use crate::evaluation::{KernelBenchConfig, ScalingConfig};
use crate::kernels::KernelSpec;
use crate::kol::{self, FitOptions, KolModel, Mode};
use crate::optcontrol::{
    self, min_eradication, optimize_quadratic, EradicationConfig, QuadConfig, StateProvider, TrueOdeConfig,
};

pub const FIGS: &str = include_str!("../../../configs/figs.json");
pub const TABLE1: &str = include_str!("../../../configs/table1.json");
pub const FIG7: &str = include_str!("../../../configs/fig7.json");
pub const OCQUAD: &str = include_str!("../../../configs/ocquad.json");

pub const NAMES: [&str; 4] = ["figs", "table1", "fig7", "ocquad"];

/// Raw JSON of a named preset.
pub fn text(name: &str) -> Result<&'static str> {
    match name {
        "figs" => Ok(FIGS),
        "table1" => Ok(TABLE1),
        "fig7" => Ok(FIG7),
        "ocquad" => Ok(OCQUAD),
        other => Err(Error::Config(format!("unknown preset '{other}' (expected one of {NAMES:?})"))),
    }
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{what} config: {e}")))
}

pub fn figs() -> KernelBenchConfig {
    parse(FIGS, "figs").expect("embedded preset")
}

pub fn table1() -> ScalingConfig {
    parse(TABLE1, "table1").expect("embedded preset")
}

pub fn fig7() -> Fig7Config {
    parse(FIG7, "fig7").expect("embedded preset")
}

pub fn ocquad() -> OcQuadConfig {
    parse(OCQUAD, "ocquad").expect("embedded preset")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Ode,
    KolM,
    KolD,
}

impl ProviderKind {
    pub const ALL: [ProviderKind; 3] = [ProviderKind::Ode, ProviderKind::KolM, ProviderKind::KolD];

    pub fn name(self) -> &'static str {
        match self {
            ProviderKind::Ode => "ode",
            ProviderKind::KolM => "kol-m",
            ProviderKind::KolD => "kol-d",
        }
    }

    fn mode(self) -> Option<Mode> {
        match self {
            ProviderKind::Ode => None,
            ProviderKind::KolM => Some(Mode::Map),
            ProviderKind::KolD => Some(Mode::Derivative),
        }
    }
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(ProviderKind::Ode),
            "kol-m" | "m" => Ok(ProviderKind::KolM),
            "kol-d" | "kol-partial" | "partial" | "d" => Ok(ProviderKind::KolD),
            other => Err(Error::Config(format!("unknown provider '{other}' (expected ode, kol-m or kol-d)"))),
        }
    }
}

/// Surrogate training data for a control study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTraining {
    pub plan: SamplingPlan,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig7Config {
    pub truth: TrueOdeConfig,
    pub training: StepTraining,
    pub u_max: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "default_tau_step")]
    pub tau_step: f64,
    pub map_kernel: KernelSpec,
    pub derivative_kernel: KernelSpec,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_tau_step() -> f64 {
    0.01
}

fn scenario_for(truth: &TrueOdeConfig, plan: SamplingPlan, size: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        model: truth.model,
        params: truth.params,
        x0: truth.x0.clone(),
        grid: truth.grid,
        substeps: truth.substeps,
        plan,
        sizes: Sizes { train: size, test: 0 },
        seeds: Seeds { train: seed, test: None },
    }
}

/// Fits one surrogate on freshly generated data.
pub fn train_surrogate(
    truth: &TrueOdeConfig,
    plan: SamplingPlan,
    size: usize,
    seed: u64,
    mode: Mode,
    kernel: &KernelSpec,
    fit: &FitOptions,
) -> Result<KolModel> {
    let scen = scenario_for(truth, plan, size, seed);
    let ds = datagen::generate(&scen, Split::Train)?;
    kol::fit(&ds.to_training_set(mode)?, kernel, fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig7Row {
    pub provider: String,
    pub u_max: f64,
    pub r_umax: f64,
    /// Expected regime: `switching` when `R_umax < 1` (a positive switching
    /// time is optimal), `tau_zero` otherwise (switch on at once).
    pub branch: String,
    pub tau_star: f64,
    pub te_star: f64,
    pub s_at_te: f64,
    /// Constant intervention from `t = 0`.
    pub te_at_zero: Option<f64>,
    pub s_at_zero: Option<f64>,
}

impl Fig7Config {
    pub fn surrogate(&self, kind: ProviderKind) -> Result<Option<KolModel>> {
        let Some(mode) = kind.mode() else { return Ok(None) };
        let kernel = match mode {
            Mode::Map => &self.map_kernel,
            Mode::Derivative => &self.derivative_kernel,
        };
        let t = &self.training;
        train_surrogate(&self.truth, t.plan.clone(), t.size, t.seed, mode, kernel, &self.fit)
            .map(Some)
            .map_err(|e| e.context(format!("training the {} surrogate", kind.name())))
    }

    /// Runs the sweep for every `u_max` with the given provider.
    pub fn run(&self, kind: ProviderKind) -> Result<(Vec<Fig7Row>, Vec<optcontrol::EradicationResult>)> {
        let truth = self.truth.provider()?;
        let model = self.surrogate(kind)?;
        let provider = match &model {
            Some(m) => StateProvider::Surrogate(m),
            None => truth.clone(),
        };
        let beta = crate::epimodels::beta_from_r0(self.truth.model, &self.truth.params)?;
        let mut rows = Vec::new();
        let mut full = Vec::new();
        for &u_max in &self.u_max {
            let cfg = EradicationConfig {
                u_max,
                eta: self.eta,
                tau_step: self.tau_step,
                tau_max: None,
            };
            let r = min_eradication(&provider, &cfg).map_err(|e| e.context(format!("u_max = {u_max}")))?;
            let r_umax = optcontrol::r_umax(beta, self.truth.params.gamma, u_max)?;
            rows.push(Fig7Row {
                provider: kind.name().into(),
                u_max,
                r_umax,
                branch: if r_umax < 1.0 { "switching" } else { "tau_zero" }.into(),
                tau_star: r.tau_star,
                te_star: r.te_star,
                s_at_te: r.s_at_te,
                te_at_zero: r.te_at_zero,
                s_at_zero: r.sweep[0].s_at_te,
            });
            full.push(r);
        }
        Ok((rows, full))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseTraining {
    pub level: [f64; 2],
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcQuadConfig {
    pub truth: TrueOdeConfig,
    pub training: PiecewiseTraining,
    pub phases: Vec<usize>,
    /// `(C_I, C_u)` pairs.
    pub weights: Vec<[f64; 2]>,
    #[serde(default = "default_upper")]
    pub u_upper: f64,
    #[serde(default = "default_multistart")]
    pub multistart: usize,
    pub seed: u64,
    pub map_kernel: KernelSpec,
    pub derivative_kernel: KernelSpec,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_upper() -> f64 {
    0.7
}

fn default_multistart() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcQuadRow {
    pub phases: usize,
    pub c_i: f64,
    pub c_u: f64,
    pub provider: String,
    pub levels: Vec<f64>,
    pub objective: f64,
    pub true_objective: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl OcQuadConfig {
    pub fn surrogate(&self, kind: ProviderKind, phases: usize) -> Result<Option<KolModel>> {
        let Some(mode) = kind.mode() else { return Ok(None) };
        let kernel = match mode {
            Mode::Map => &self.map_kernel,
            Mode::Derivative => &self.derivative_kernel,
        };
        let plan = SamplingPlan::Piecewise {
            phases,
            level: self.training.level,
        };
        train_surrogate(&self.truth, plan, self.training.size, self.training.seed, mode, kernel, &self.fit)
            .map(Some)
            .map_err(|e| e.context(format!("training the {} surrogate for {phases} phases", kind.name())))
    }

    pub fn quad(&self, phases: usize, c_i: f64, c_u: f64) -> QuadConfig {
        QuadConfig {
            c_i,
            c_u,
            phases,
            u_upper: self.u_upper,
            multistart: self.multistart,
            optimizer: Default::default(),
        }
    }

    /// Optimises every weight pair for every phase count with the given
    /// providers and cross-evaluates each schedule under the true model.
    pub fn run(&self, providers: &[ProviderKind]) -> Result<Vec<OcQuadRow>> {
        let truth = self.truth.provider()?;
        let mut rows = Vec::new();
        for &phases in &self.phases {
            for &kind in providers {
                let model = self.surrogate(kind, phases)?;
                let provider = match &model {
                    Some(m) => StateProvider::Surrogate(m),
                    None => truth.clone(),
                };
                for &[c_i, c_u] in &self.weights {
                    let q = self.quad(phases, c_i, c_u);
                    let r = optimize_quadratic(&provider, &q, self.seed).map_err(|e| {
                        e.context(format!("{} with N = {phases}, C_I = {c_i}, C_u = {c_u}", kind.name()))
                    })?;
                    let true_objective = optcontrol::cross_evaluate(&r.levels, &truth, &q)?;
                    rows.push(OcQuadRow {
                        phases,
                        c_i,
                        c_u,
                        provider: kind.name().into(),
                        levels: r.levels,
                        objective: r.objective,
                        true_objective,
                        converged: r.converged,
                        evaluations: r.evaluations,
                    });
                }
            }
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_presets_parse() {
        let f = figs();
        f.scenario.validate().unwrap();
        assert_eq!((f.batches, f.batch_size), (5, 200));
        let t = table1();
        assert_eq!(t.sizes, vec![25, 100, 500]);
        let e = fig7();
        assert_eq!(e.u_max, vec![0.55, 0.6, 0.65, 0.7]);
        e.truth.provider().unwrap();
        let q = ocquad();
        assert_eq!(q.weights.len(), 13);
        for name in NAMES {
            text(name).unwrap();
        }
        assert!(text("fig9").is_err());
    }
}
