//! Infinite-width neural tangent kernel and a finite-width Monte-Carlo
//! estimate of the same quantity.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CORR_CLAMP_TOL: f64 = 1e-9;
const GH_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Erf,
    /// Logistic sigmoid. No closed form; expectations use Gauss-Hermite
    /// quadrature.
    Logistic,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Erf => "erf",
            Activation::Logistic => "logistic",
        }
    }

    pub fn default_weight_variance(self) -> f64 {
        match self {
            Activation::Relu => 2.0,
            _ => 1.0,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Erf => statrs::function::erf::erf(x),
            Activation::Logistic => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Erf => 2.0 / PI.sqrt() * (-x * x).exp(),
            Activation::Logistic => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }

    /// `(E[σ(u)σ(v)], E[σ'(u)σ'(v)])` for zero-mean Gaussian `(u, v)` with
    /// covariance `[[saa, sab], [sab, sbb]]`.
    fn expectations(self, saa: f64, sbb: f64, sab: f64) -> Result<(f64, f64)> {
        match self {
            Activation::Relu => {
                let norm = (saa * sbb).sqrt();
                if norm == 0.0 {
                    return Ok((0.0, 0.25));
                }
                let rho = clamp_corr(sab / norm)?;
                let theta = rho.acos();
                let e = norm / (2.0 * PI) * (theta.sin() + (PI - theta) * rho);
                let ed = (PI - theta) / (2.0 * PI);
                Ok((e, ed))
            }
            Activation::Erf => {
                let da = 1.0 + 2.0 * saa;
                let db = 1.0 + 2.0 * sbb;
                let arg = clamp_corr(2.0 * sab / (da * db).sqrt())?;
                let e = 2.0 / PI * arg.asin();
                let det = (da * db - 4.0 * sab * sab).max(0.0);
                if det == 0.0 {
                    return Err(Error::Numeric("degenerate covariance in erf NTK".into()));
                }
                Ok((e, 4.0 / PI / det.sqrt()))
            }
            Activation::Logistic => Ok(gauss_hermite_2d(self, saa, sbb, sab)),
        }
    }
}

fn clamp_corr(rho: f64) -> Result<f64> {
    if !rho.is_finite() || rho.abs() > 1.0 + CORR_CLAMP_TOL {
        return Err(Error::Numeric(format!("correlation {rho} outside [-1, 1]")));
    }
    Ok(rho.clamp(-1.0, 1.0))
}

/// Physicists' Gauss-Hermite nodes and weights for `∫ e^{-x²} f(x) dx`.
fn hermite_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GH_NODES;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let m = n.div_ceil(2);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        (x, w)
    })
}

fn gauss_hermite_2d(act: Activation, saa: f64, sbb: f64, sab: f64) -> (f64, f64) {
    let (x, w) = hermite_rule();
    let sa = saa.max(0.0).sqrt();
    let sb = sbb.max(0.0).sqrt();
    let rho = if sa * sb > 0.0 { (sab / (sa * sb)).clamp(-1.0, 1.0) } else { 0.0 };
    let rc = (1.0 - rho * rho).max(0.0).sqrt();
    let s2 = std::f64::consts::SQRT_2;
    let (mut e, mut ed) = (0.0, 0.0);
    for (xi, wi) in x.iter().zip(w) {
        let u = s2 * sa * xi;
        let (fu, du) = (act.apply(u), act.derivative(u));
        for (yj, wj) in x.iter().zip(w) {
            let v = s2 * sb * (rho * xi + rc * yj);
            let ww = wi * wj;
            e += ww * fu * act.apply(v);
            ed += ww * du * act.derivative(v);
        }
    }
    (e / PI, ed / PI)
}

/// Infinite-width NTK from the three inner products of the inputs.
///
/// `depth` counts nonlinear hidden layers; the readout is linear.
#[allow(clippy::too_many_arguments)]
pub fn ntk_from_dots(
    depth: usize,
    activation: Activation,
    w_var: f64,
    b_var: f64,
    aa: f64,
    bb: f64,
    ab: f64,
    n: usize,
) -> Result<f64> {
    let scale = w_var / n as f64;
    let mut saa = scale * aa + b_var;
    let mut sbb = scale * bb + b_var;
    let mut sab = scale * ab + b_var;
    let mut theta = sab;
    for _ in 0..depth {
        let (e_ab, ed_ab) = activation.expectations(saa, sbb, sab)?;
        let (e_aa, _) = activation.expectations(saa, saa, saa)?;
        let (e_bb, _) = activation.expectations(sbb, sbb, sbb)?;
        sab = w_var * e_ab + b_var;
        saa = w_var * e_aa + b_var;
        sbb = w_var * e_bb + b_var;
        theta = sab + theta * w_var * ed_ab;
    }
    if !theta.is_finite() {
        return Err(Error::Numeric("non-finite NTK value".into()));
    }
    Ok(theta)
}

/// Empirical tangent kernel of a randomly initialised network, averaged over
/// `seeds` initialisations. Each entry of the result corresponds to a pair.
pub fn finite_width_ntk_mc_pairs(
    depth: usize,
    activation: Activation,
    w_var: f64,
    b_var: f64,
    width: usize,
    seeds: &[u64],
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<f64>> {
    if depth == 0 || width == 0 || seeds.is_empty() || pairs.is_empty() {
        return Err(Error::Config("depth, width, seeds and pairs must be non-empty".into()));
    }
    let n = pairs[0].0.len();
    if pairs.iter().any(|(a, b)| a.len() != n || b.len() != n) {
        return Err(Error::Dimension("all inputs must share one length".into()));
    }
    let per_seed: Vec<Vec<f64>> = crate::par_map(seeds, |_, &seed| {
        let net = Network::sample(seed, n, width, depth);
        pairs
            .iter()
            .map(|(a, b)| {
                let ga = net.tangent(a, activation, w_var, b_var);
                let gb = net.tangent(b, activation, w_var, b_var);
                tangent_dot(&ga, &gb, w_var, b_var)
            })
            .collect()
    });
    let mut out = vec![0.0; pairs.len()];
    for row in &per_seed {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v / seeds.len() as f64;
        }
    }
    Ok(out)
}

/// Single-pair form of [`finite_width_ntk_mc_pairs`] with default variances.
pub fn finite_width_ntk_mc(
    depth: usize,
    activation: Activation,
    width: usize,
    seeds: &[u64],
    a: &[f64],
    b: &[f64],
) -> Result<f64> {
    let v = finite_width_ntk_mc_pairs(
        depth,
        activation,
        activation.default_weight_variance(),
        0.1,
        width,
        seeds,
        &[(a.to_vec(), b.to_vec())],
    )?;
    Ok(v[0])
}

struct Network {
    /// `weights[l]` is `fan_out x fan_in`, row-major; the last layer has one row.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    fan_in: Vec<usize>,
    width: usize,
}

/// Per-layer layer inputs and backpropagated sensitivities.
struct Tangent {
    inputs: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Network {
    fn sample(seed: u64, n: usize, width: usize, depth: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(depth + 1);
        let mut biases = Vec::with_capacity(depth + 1);
        let mut fan_in = Vec::with_capacity(depth + 1);
        for l in 0..=depth {
            let fi = if l == 0 { n } else { width };
            let fo = if l == depth { 1 } else { width };
            weights.push((0..fi * fo).map(|_| StandardNormal.sample(&mut rng)).collect());
            biases.push((0..fo).map(|_| StandardNormal.sample(&mut rng)).collect());
            fan_in.push(fi);
        }
        Network { weights, biases, fan_in, width }
    }

    fn tangent(&self, x: &[f64], act: Activation, w_var: f64, b_var: f64) -> Tangent {
        let layers = self.weights.len();
        let sb = b_var.sqrt();
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(layers - 1);
        for l in 0..layers - 1 {
            let fi = self.fan_in[l];
            let sw = (w_var / fi as f64).sqrt();
            let inp = &inputs[l];
            let h: Vec<f64> = (0..self.width)
                .map(|i| sw * crate::linalg::dot(&self.weights[l][i * fi..(i + 1) * fi], inp) + sb * self.biases[l][i])
                .collect();
            inputs.push(h.iter().map(|&v| act.apply(v)).collect());
            pre.push(h);
        }
        let mut deltas = vec![Vec::new(); layers];
        deltas[layers - 1] = vec![1.0];
        for l in (0..layers - 1).rev() {
            // sensitivity of the output to the pre-activations feeding layer l+1
            let fo = deltas[l + 1].len();
            let fi = self.fan_in[l + 1];
            let sw = (w_var / fi as f64).sqrt();
            let mut back = vec![0.0; fi];
            for i in 0..fo {
                let d = deltas[l + 1][i] * sw;
                crate::linalg::axpy(d, &self.weights[l + 1][i * fi..(i + 1) * fi], &mut back);
            }
            deltas[l] = back
                .iter()
                .zip(&pre[l])
                .map(|(g, h)| g * act.derivative(*h))
                .collect();
        }
        Tangent { inputs, deltas }
    }
}

fn tangent_dot(a: &Tangent, b: &Tangent, w_var: f64, b_var: f64) -> f64 {
    let mut total = 0.0;
    for l in 0..a.inputs.len() {
        let fi = a.inputs[l].len() as f64;
        let inner = w_var / fi * crate::linalg::dot(&a.inputs[l], &b.inputs[l]) + b_var;
        total += crate::linalg::dot(&a.deltas[l], &b.deltas[l]) * inner;
    }
    total
}
