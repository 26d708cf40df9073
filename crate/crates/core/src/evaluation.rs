//! Prediction error metric, boxplot statistics and benchmark runners.

use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{self, Dataset, ScenarioConfig, Split};
use crate::epimodels::ModelKind;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::kol::{self, FitOptions, KolModel, Mode};
use crate::linalg::Matrix;

/// Relative prediction error over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Mean over samples of the per-sample sums.
    pub p_err: f64,
    /// `Σ_c ‖x_p,c − x_c‖₂ / ‖x_c‖₂` for each sample.
    pub per_sample: Vec<f64>,
    /// Mean over samples of each compartment's relative error.
    pub per_compartment: Vec<f64>,
    #[serde(default)]
    pub fit_seconds: f64,
    #[serde(default)]
    pub predict_seconds: f64,
}

pub fn prediction_error(preds: &[Matrix], refs: &[Matrix]) -> Result<ErrorReport> {
    if preds.len() != refs.len() || preds.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} references",
            preds.len(),
            refs.len()
        )));
    }
    let d = refs[0].rows();
    let mut per_sample = Vec::with_capacity(refs.len());
    let mut per_compartment = vec![0.0; d];
    for (s, (p, r)) in preds.iter().zip(refs).enumerate() {
        if p.rows() != r.rows() || p.cols() != r.cols() || r.rows() != d {
            return Err(Error::Dimension(format!("sample {s}: prediction and reference shapes differ")));
        }
        let mut sum = 0.0;
        for c in 0..d {
            let (pr, rr) = (p.row(c), r.row(c));
            let norm = rr.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::SingularReference { sample: s, compartment: c });
            }
            let diff = pr.iter().zip(rr).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let e = diff / norm;
            per_compartment[c] += e;
            sum += e;
        }
        per_sample.push(sum);
    }
    let count = refs.len() as f64;
    per_compartment.iter_mut().for_each(|v| *v /= count);
    Ok(ErrorReport {
        p_err: per_sample.iter().sum::<f64>() / count,
        per_sample,
        per_compartment,
        fit_seconds: 0.0,
        predict_seconds: 0.0,
    })
}

/// Predicts every control of `ds` and scores against its trajectories.
pub fn evaluate(model: &KolModel, ds: &Dataset) -> Result<ErrorReport> {
    if !ds.grid().same_as(&model.grid()) || ds.dim() != model.dim() {
        return Err(Error::Dimension("test set grid or compartments differ from the model".into()));
    }
    let t = Instant::now();
    let preds: Vec<Result<Matrix>> = crate::par_range(ds.len(), |i| {
        model
            .predict_values(ds.controls.row(i))
            .map(|p| p.values)
            .map_err(|e| e.context(format!("test sample {i}")))
    });
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    let predict_seconds = t.elapsed().as_secs_f64();
    let refs: Vec<Matrix> = (0..ds.len()).map(|i| ds.trajectory(i)).collect();
    let mut report = prediction_error(&preds, &refs)?;
    report.fit_seconds = model.timing().total();
    report.predict_seconds = predict_seconds;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics
/// (position `p (n - 1)` in the sorted data).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn boxplot(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::Domain("boxplot of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("boxplot input contains NaN".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let median = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
    let outliers = s.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect();
    Ok(BoxplotStats {
        median,
        q1,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers,
    })
}

/// Kernel comparison: every kernel, both modes, several training batches,
/// one shared test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBenchConfig {
    pub scenario: ScenarioConfig,
    pub kernels: Vec<(String, KernelSpec)>,
    pub batches: usize,
    pub batch_size: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Map, Mode::Derivative]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBenchEntry {
    pub kernel: String,
    pub spec: KernelSpec,
    pub mode: Mode,
    /// Aggregate test error of each batch, in batch order.
    pub batch_errors: Vec<f64>,
    /// Per-sample test errors pooled over batches.
    pub sample_errors: Vec<f64>,
    pub stats: BoxplotStats,
    pub fit_seconds: Vec<f64>,
}

pub fn kernel_benchmark(cfg: &KernelBenchConfig) -> Result<Vec<KernelBenchEntry>> {
    if cfg.batches == 0 || cfg.batch_size == 0 || cfg.kernels.is_empty() {
        return Err(Error::Config("kernel benchmark needs batches, batch_size and kernels".into()));
    }
    for (_, k) in &cfg.kernels {
        k.validate()?;
    }
    let test = datagen::generate(&cfg.scenario, Split::Test).map_err(|e| e.context("test set"))?;
    if test.is_empty() {
        return Err(Error::Config("kernel benchmark needs a non-empty test set".into()));
    }
    let batch_ids: Vec<usize> = (0..cfg.batches).collect();
    let per_batch: Vec<Result<Vec<(f64, Vec<f64>, f64)>>> = crate::par_map(&batch_ids, |_, &b| {
        let mut scen = cfg.scenario.clone();
        scen.sizes.train = cfg.batch_size;
        scen.seeds.train = cfg.scenario.seeds.train.wrapping_add(b as u64);
        let train = datagen::generate(&scen, Split::Train).map_err(|e| e.context(format!("batch {b}")))?;
        let mut out = Vec::new();
        for (name, spec) in &cfg.kernels {
            for &mode in &cfg.modes {
                let ts = train.to_training_set(mode)?;
                let model = kol::fit(&ts, spec, &cfg.fit)
                    .map_err(|e| e.context(format!("batch {b}, kernel {name}, mode {}", mode.name())))?;
                let rep = evaluate(&model, &test)?;
                out.push((rep.p_err, rep.per_sample, model.timing().total()));
            }
        }
        Ok(out)
    });
    let per_batch = per_batch.into_iter().collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    let mut idx = 0;
    for (name, spec) in &cfg.kernels {
        for &mode in &cfg.modes {
            let mut batch_errors = Vec::new();
            let mut sample_errors = Vec::new();
            let mut fit_seconds = Vec::new();
            for b in &per_batch {
                let (e, s, t) = &b[idx];
                batch_errors.push(*e);
                sample_errors.extend_from_slice(s);
                fit_seconds.push(*t);
            }
            entries.push(KernelBenchEntry {
                kernel: name.clone(),
                spec: spec.clone(),
                mode,
                stats: boxplot(&sample_errors)?,
                batch_errors,
                sample_errors,
                fit_seconds,
            });
            idx += 1;
        }
    }
    Ok(entries)
}

/// Error and wall-clock time against training size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub scenario: ScenarioConfig,
    pub models: Vec<ModelKind>,
    pub sizes: Vec<usize>,
    pub map_kernel: KernelSpec,
    pub derivative_kernel: KernelSpec,
    #[serde(default)]
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub model: ModelKind,
    pub mode: Mode,
    pub size: usize,
    pub error: f64,
    pub fit_seconds: f64,
    pub gram_seconds: f64,
    pub factor_seconds: f64,
    pub solve_seconds: f64,
    pub predict_seconds: f64,
    pub generation_seconds: f64,
}

/// Runs sequentially so that timings are not skewed by contention between
/// runs (each fit still uses internal parallelism).
pub fn scaling_benchmark(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if cfg.sizes.is_empty() || cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sizes must be non-empty and strictly ascending".into()));
    }
    let mut rows = Vec::new();
    for &model in &cfg.models {
        let mut scen = cfg.scenario.clone();
        scen.model = model;
        scen.x0 = None;
        let test = datagen::generate(&scen, Split::Test).map_err(|e| e.context(format!("{} test set", model.name())))?;
        for &size in &cfg.sizes {
            scen.sizes.train = size;
            let t = Instant::now();
            let train = datagen::generate(&scen, Split::Train)?;
            let generation_seconds = t.elapsed().as_secs_f64();
            for (mode, kernel) in [(Mode::Map, &cfg.map_kernel), (Mode::Derivative, &cfg.derivative_kernel)] {
                let ts = train.to_training_set(mode)?;
                let fitted = kol::fit(&ts, kernel, &cfg.fit)
                    .map_err(|e| e.context(format!("{} {} size {size}", model.name(), mode.name())))?;
                let rep = evaluate(&fitted, &test)?;
                let timing = fitted.timing();
                rows.push(ScalingRow {
                    model,
                    mode,
                    size,
                    error: rep.p_err,
                    fit_seconds: timing.total(),
                    gram_seconds: timing.gram_seconds,
                    factor_seconds: timing.factor_seconds,
                    solve_seconds: timing.solve_seconds,
                    predict_seconds: rep.predict_seconds,
                    generation_seconds,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV with a header row; floats in shortest round-trip form.
pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = String::from(
        "model,mode,size,error,fit_seconds,gram_seconds,factor_seconds,solve_seconds,predict_seconds,generation_seconds\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.model.name(),
            r.mode.name(),
            r.size,
            r.error,
            r.fit_seconds,
            r.gram_seconds,
            r.factor_seconds,
            r.solve_seconds,
            r.predict_seconds,
            r.generation_seconds
        ));
    }
    s
}

/// Aligned text table with size, error and time columns.
pub fn scaling_table(rows: &[ScalingRow]) -> String {
    let mut s = format!("{:<8}{:<9}{:>8}{:>14}{:>12}\n", "model", "method", "size", "error", "time [s]");
    for r in rows {
        let method = match r.mode {
            Mode::Map => "KOL-m",
            Mode::Derivative => "KOL-d",
        };
        s.push_str(&format!(
            "{:<8}{:<9}{:>8}{:>14.3e}{:>12.3}\n",
            r.model.name().to_uppercase(),
            method,
            r.size,
            r.error,
            r.fit_seconds
        ));
    }
    s
}

pub fn kernel_bench_csv(entries: &[KernelBenchEntry]) -> String {
    let mut s = String::from("kernel,mode,median,q1,q3,whisker_low,whisker_high,outliers\n");
    for e in entries {
        let st = &e.stats;
        s.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{}\n",
            e.kernel,
            e.mode.name(),
            st.median,
            st.q1,
            st.q3,
            st.whisker_low,
            st.whisker_high,
            st.outliers.len()
        ));
    }
    s
}

pub fn kernel_bench_table(entries: &[KernelBenchEntry]) -> String {
    let mut s = format!("{:<22}{:<9}{:>12}{:>12}{:>12}{:>10}\n", "kernel", "mode", "median", "q1", "q3", "outliers");
    for e in entries {
        s.push_str(&format!(
            "{:<22}{:<9}{:>12.3e}{:>12.3e}{:>12.3e}{:>10}\n",
            e.kernel,
            e.mode.name(),
            e.stats.median,
            e.stats.q1,
            e.stats.q3,
            e.stats.outliers.len()
        ));
    }
    s
}
