//! Minimum eradication time over Heaviside schedules `u_max H(t - τ)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StateProvider;
use crate::controls::ControlSpec;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// `β (1 − u_max) / γ`.
pub fn r_umax(beta: f64, gamma: f64, u_max: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::DegenerateParameters(format!("gamma must be positive, got {gamma}")));
    }
    Ok(beta * (1.0 - u_max) / gamma)
}

/// First time the infected curve falls to `eta` after having been above it.
///
/// The crossing inside `[T_{k-1}, T_k]` is located by linear interpolation.
/// Returns `Some(0.0)` when the curve never exceeds `eta`, or starts at or
/// below it and is initially non-increasing; `None` when it stays above
/// `eta` until the horizon.
pub fn eradication_time(infected: &[f64], eta: f64, grid: &TimeGrid) -> Option<f64> {
    let n = infected.len();
    if n == 0 {
        return None;
    }
    if infected[0] <= eta && (n == 1 || infected[1] <= infected[0]) {
        return Some(0.0);
    }
    if infected.iter().all(|v| *v <= eta) {
        return Some(0.0);
    }
    for k in 1..n {
        let (a, b) = (infected[k - 1], infected[k]);
        if a > eta && b <= eta {
            let frac = (a - eta) / (a - b);
            let (t0, t1) = (grid.point(k - 1), grid.point(k));
            return Some(if frac >= 1.0 { t1 } else { t0 + frac * (t1 - t0) });
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EradicationConfig {
    pub u_max: f64,
    /// Threshold as a population fraction. Defaults to the initial infected
    /// fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "default_tau_step")]
    pub tau_step: f64,
    /// Largest switching time explored; defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
}

fn default_tau_step() -> f64 {
    0.01
}

impl EradicationConfig {
    pub fn new(u_max: f64) -> Self {
        EradicationConfig {
            u_max,
            eta: None,
            tau_step: default_tau_step(),
            tau_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub t_e: Option<f64>,
    pub s_at_te: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EradicationResult {
    pub provider: String,
    pub u_max: f64,
    pub eta: f64,
    pub tau_star: f64,
    pub te_star: f64,
    pub s_at_te: f64,
    /// Eradication time of the schedule switched on at `τ = 0`.
    pub te_at_zero: Option<f64>,
    pub sweep: Vec<SweepPoint>,
    /// Number of distinct discretised schedules simulated.
    pub simulations: usize,
    pub warnings: Vec<String>,
}

/// Brute-force sweep over `τ ∈ {0, Δτ, 2Δτ, ...}`; ties go to the smallest τ.
///
/// The schedule is observed on the provider grid, so every τ in
/// `[T_{k-1}, T_k)` produces the same sampled control; each distinct one is
/// simulated once.
pub fn min_eradication(provider: &StateProvider, cfg: &EradicationConfig) -> Result<EradicationResult> {
    let grid = provider.grid();
    let model = provider.model_kind()?;
    let i_idx = model.infected_index();
    let s_idx = 0;
    if !(0.0..=1.0).contains(&cfg.u_max) {
        return Err(Error::Config(format!("u_max must lie in [0, 1], got {}", cfg.u_max)));
    }
    if !(cfg.tau_step > 0.0) {
        return Err(Error::Config("tau_step must be positive".into()));
    }
    let eta = cfg.eta.unwrap_or(provider.x0()[i_idx]);
    if !(eta > 0.0) {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    let tau_max = cfg.tau_max.unwrap_or(grid.t_star()).min(grid.t_star());
    let mut warnings = Vec::new();
    if let Some(f) = provider.training_families() {
        if !f.iter().any(|s| s == "step") {
            warnings.push(format!(
                "surrogate was trained on {f:?}; Heaviside schedules lie outside its training family"
            ));
        }
    }

    let count = (tau_max / cfg.tau_step + 1e-9).floor() as usize + 1;
    let taus: Vec<f64> = (0..count).map(|j| j as f64 * cfg.tau_step).collect();
    // the sampled schedule only depends on the first node strictly after τ
    let key = |tau: f64| (0..grid.len()).find(|&k| grid.point(k) > tau).unwrap_or(grid.len());
    let mut unique: BTreeMap<usize, f64> = BTreeMap::new();
    for &t in &taus {
        unique.entry(key(t)).or_insert(t);
    }
    let entries: Vec<(usize, f64)> = unique.into_iter().collect();
    let outcomes: Vec<Result<(usize, Option<f64>, Option<f64>)>> = crate::par_map(&entries, |_, &(k, tau)| {
        let u = ControlSpec::heaviside(cfg.u_max, tau).discretize(&grid);
        let traj = provider
            .trajectory(&u.samples)
            .map_err(|e| e.context(format!("switching time {tau}")))?;
        let te = eradication_time(traj.row(i_idx), eta, &grid);
        let s = match te {
            Some(t) => {
                let (j, frac) = grid.locate(t)?;
                let a = traj.get(s_idx, j);
                Some(if frac == 0.0 { a } else { a + frac * (traj.get(s_idx, j + 1) - a) })
            }
            None => None,
        };
        Ok((k, te, s))
    });
    let mut by_key = BTreeMap::new();
    for o in outcomes {
        let (k, te, s) = o?;
        by_key.insert(k, (te, s));
    }

    let sweep: Vec<SweepPoint> = taus
        .iter()
        .map(|&tau| {
            let (te, s) = by_key[&key(tau)];
            SweepPoint { tau, t_e: te, s_at_te: s }
        })
        .collect();
    let mut best: Option<&SweepPoint> = None;
    for p in &sweep {
        if let Some(te) = p.t_e {
            if best.is_none_or(|b| te < b.t_e.expect("set")) {
                best = Some(p);
            }
        }
    }
    let best = best.ok_or(Error::NoEradication)?;
    Ok(EradicationResult {
        provider: provider.tag(),
        u_max: cfg.u_max,
        eta,
        tau_star: best.tau,
        te_star: best.t_e.expect("set"),
        s_at_te: best.s_at_te.expect("set"),
        te_at_zero: sweep[0].t_e,
        simulations: by_key.len(),
        sweep,
        warnings,
    })
}
