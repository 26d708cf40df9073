//! Bound-constrained quasi-Newton minimisation with finite-difference
//! gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptOptions {
    pub max_iter: usize,
    /// Stop when the infinity norm of the projected gradient is below this.
    pub grad_tol: f64,
    /// Stop when an accepted step changes the objective by less than this.
    pub f_tol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            max_iter: 200,
            grad_tol: 1e-8,
            f_tol: 1e-12,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Counted<'a, F> {
    f: &'a F,
    evals: std::sync::atomic::AtomicUsize,
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> Counted<'_, F> {
    fn call(&self, x: &[f64]) -> Result<f64> {
        self.evals.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let v = (self.f)(x)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective is not finite at {x:?}")));
        }
        Ok(v)
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Central differences inside the box, one-sided at the bounds.
fn gradient<F: Fn(&[f64]) -> Result<f64> + Sync>(
    f: &Counted<F>,
    x: &[f64],
    fx: f64,
    lo: &[f64],
    hi: &[f64],
    rel: f64,
) -> Result<Vec<f64>> {
    crate::par_range(x.len(), |i| {
        let h = rel * x[i].abs().max(1.0);
        let mut xp = x.to_vec();
        if x[i] - h >= lo[i] && x[i] + h <= hi[i] {
            xp[i] = x[i] + h;
            let fp = f.call(&xp)?;
            xp[i] = x[i] - h;
            let fm = f.call(&xp)?;
            Ok((fp - fm) / (2.0 * h))
        } else if x[i] + h <= hi[i] {
            xp[i] = x[i] + h;
            Ok((f.call(&xp)? - fx) / h)
        } else {
            xp[i] = x[i] - h;
            Ok((fx - f.call(&xp)?) / h)
        }
    })
    .into_iter()
    .collect()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| (x[i] - (x[i] - g[i]).clamp(lo[i], hi[i])).abs())
        .fold(0.0, f64::max)
}

/// Minimises `f` over the box `[lo, hi]` starting from `x0`.
///
/// Projected BFGS: the inverse-Hessian approximation acts on the free
/// variables, variables held at a bound by the gradient stay fixed, and the
/// step is chosen by Armijo backtracking along the projected path.
pub fn minimize_box<F>(f: &F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &OptOptions) -> Result<OptOutcome>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n = x0.len();
    if n == 0 || lo.len() != n || hi.len() != n {
        return Err(Error::Dimension("start point and bounds must share a non-zero length".into()));
    }
    if (0..n).any(|i| !(lo[i] <= hi[i])) {
        return Err(Error::Config("lower bound exceeds upper bound".into()));
    }
    let f = Counted {
        f,
        evals: std::sync::atomic::AtomicUsize::new(0),
    };
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut fx = f.call(&x)?;
    let mut g = gradient(&f, &x, fx, lo, hi, opts.fd_step)?;
    let mut h = identity(n);
    let mut scaled = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &g, lo, hi) <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let eps = 1e-12;
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] + eps && g[i] > 0.0) || (x[i] >= hi[i] - eps && g[i] < 0.0)))
            .collect();

        let mut step = None;
        for attempt in 0..2 {
            if attempt == 1 {
                h = identity(n);
                scaled = false;
            }
            let d = direction(&h, &g, &free);
            let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                continue;
            }
            if let Some(s) = line_search(&f, &x, fx, &g, &d, lo, hi)? {
                step = Some(s);
                break;
            }
        }
        let Some((x_new, f_new)) = step else {
            // no descent at the resolution of the gradient estimate
            converged = true;
            break;
        };
        let g_new = gradient(&f, &x_new, f_new, lo, hi, opts.fd_step)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() && yy > 0.0 {
            if !scaled {
                let gamma = sy / yy;
                h = identity(n);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        let df = (fx - f_new).abs();
        x = x_new;
        fx = f_new;
        g = g_new;
        if df <= opts.f_tol {
            converged = true;
            break;
        }
    }
    Ok(OptOutcome {
        x,
        f: fx,
        iterations,
        evaluations: f.evals.load(std::sync::atomic::Ordering::Relaxed),
        converged,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn direction(h: &[f64], g: &[f64], free: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if !free[i] {
                return 0.0;
            }
            -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>()
        })
        .collect()
}

fn line_search<F: Fn(&[f64]) -> Result<f64> + Sync>(
    f: &Counted<F>,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<Option<(Vec<f64>, f64)>> {
    let mut alpha = 1.0;
    for _ in 0..40 {
        let mut xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        project(&mut xt, lo, hi);
        let decrease: f64 = xt.iter().zip(x).zip(g).map(|((a, b), gi)| gi * (a - b)).sum();
        if decrease >= 0.0 {
            alpha *= 0.5;
            continue;
        }
        let ft = f.call(&xt)?;
        if ft <= fx + 1e-4 * decrease {
            return Ok(Some((xt, ft)));
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// `H <- (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
