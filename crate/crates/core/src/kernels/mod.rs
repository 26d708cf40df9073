//! Scalar kernels `S(U_1, U_2)` on sampled control vectors and Gram assembly.
//!
//! A single scalar Gram matrix serves every output coordinate (diagonal
//! operator-valued kernel), so the regression solves one `N x N` system with
//! many right-hand sides.

mod bessel;
pub mod ntk;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

pub use bessel::bessel_k;
pub use ntk::{finite_width_ntk_mc, Activation};

use crate::error::{Error, Result};
use crate::linalg::{dot, sq_dist, Matrix};

/// Kernel selection and hyperparameters.
///
/// JSON encoding is tagged by `kind`, e.g.
/// `{"kind": "ntk", "depth": 1, "activation": "relu", "w_var": 2.0, "b_var": 0.1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Linear,
    Matern {
        nu: f64,
        rho: f64,
    },
    Rbf {
        sigma: f64,
    },
    RationalQuadratic {
        alpha: f64,
        l: f64,
    },
    /// Infinite-width neural tangent kernel of a fully connected network
    /// with `depth` nonlinear hidden layers and a linear readout.
    Ntk {
        depth: usize,
        activation: Activation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_var: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_var: Option<f64>,
    },
}

impl KernelSpec {
    pub fn ntk(depth: usize, activation: Activation) -> Self {
        KernelSpec::Ntk {
            depth,
            activation,
            w_var: None,
            b_var: None,
        }
    }

    /// Hyperparameters used by the kernel benchmarks.
    pub fn benchmark_set() -> Vec<(String, KernelSpec)> {
        vec![
            ("linear".into(), KernelSpec::Linear),
            ("matern".into(), KernelSpec::Matern { nu: 0.05, rho: 0.55 }),
            ("rbf".into(), KernelSpec::Rbf { sigma: 0.05 }),
            ("rational_quadratic".into(), KernelSpec::RationalQuadratic { alpha: 0.055, l: 0.5 }),
            ("ntk_relu".into(), KernelSpec::ntk(1, Activation::Relu)),
            ("ntk_erf".into(), KernelSpec::ntk(1, Activation::Erf)),
        ]
    }

    pub fn label(&self) -> String {
        match self {
            KernelSpec::Linear => "linear".into(),
            KernelSpec::Matern { nu, rho } => format!("matern(nu={nu},rho={rho})"),
            KernelSpec::Rbf { sigma } => format!("rbf(sigma={sigma})"),
            KernelSpec::RationalQuadratic { alpha, l } => format!("rq(alpha={alpha},l={l})"),
            KernelSpec::Ntk { depth, activation, .. } => {
                format!("ntk({},depth={depth})", activation.name())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("kernel parameter {name} must be positive, got {v}")))
            }
        };
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Matern { nu, rho } => {
                if nu < 1e-3 {
                    return Err(Error::Config(format!(
                        "Matérn smoothness nu = {nu} is below the supported minimum 1e-3"
                    )));
                }
                positive("nu", nu)?;
                positive("rho", rho)
            }
            KernelSpec::Rbf { sigma } => positive("sigma", sigma),
            KernelSpec::RationalQuadratic { alpha, l } => {
                positive("alpha", alpha)?;
                positive("l", l)
            }
            KernelSpec::Ntk { depth, activation, .. } => {
                if depth == 0 {
                    return Err(Error::Config("NTK depth must be at least 1".into()));
                }
                let (w, b) = self.ntk_variances().unwrap_or((0.0, 0.0));
                let _ = activation;
                positive("w_var", w)?;
                if !(b >= 0.0) {
                    return Err(Error::Config(format!("b_var must be non-negative, got {b}")));
                }
                Ok(())
            }
        }
    }

    /// `(w_var, b_var)` with activation-dependent defaults: `w_var = 2` for
    /// ReLU, `1` otherwise; `b_var = 0.1`.
    pub fn ntk_variances(&self) -> Option<(f64, f64)> {
        match *self {
            KernelSpec::Ntk { activation, w_var, b_var, .. } => Some((
                w_var.unwrap_or(activation.default_weight_variance()),
                b_var.unwrap_or(0.1),
            )),
            _ => None,
        }
    }

    /// `S(a, b)`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Dimension(format!(
                "kernel inputs must have equal non-zero length ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        if a.iter().chain(b).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("kernel inputs must be finite".into()));
        }
        self.validate()?;
        let aa = dot(a, a);
        let bb = dot(b, b);
        self.pair(a, b, aa, bb)
    }

    /// Kernel value given precomputed self inner products.
    #[inline]
    pub(crate) fn pair(&self, a: &[f64], b: &[f64], aa: f64, bb: f64) -> Result<f64> {
        match *self {
            KernelSpec::Linear => Ok(dot(a, b)),
            KernelSpec::Rbf { sigma } => Ok((-sq_dist(a, b) / (2.0 * sigma * sigma)).exp()),
            KernelSpec::RationalQuadratic { alpha, l } => {
                Ok((1.0 + sq_dist(a, b) / (2.0 * alpha * l * l)).powf(-alpha))
            }
            KernelSpec::Matern { nu, rho } => Ok(matern(nu, rho, sq_dist(a, b).sqrt())),
            KernelSpec::Ntk { depth, activation, .. } => {
                let (w, bv) = self.ntk_variances().expect("ntk variant");
                ntk::ntk_from_dots(depth, activation, w, bv, aa, bb, dot(a, b), a.len())
            }
        }
    }
}

/// Matérn kernel as a function of the Euclidean distance.
pub fn matern(nu: f64, rho: f64, dist: f64) -> f64 {
    if dist == 0.0 {
        return 1.0;
    }
    let r = (2.0 * nu).sqrt() * dist / rho;
    if nu == 0.5 {
        return (-r).exp();
    }
    if nu == 1.5 {
        return (1.0 + r) * (-r).exp();
    }
    if nu == 2.5 {
        return (1.0 + r + r * r / 3.0) * (-r).exp();
    }
    if r > 700.0 {
        return 0.0;
    }
    matern_general(nu, r)
}

/// `2^{1-ν}/Γ(ν) r^ν K_ν(r)` through the Bessel route, no closed-form
/// shortcuts.
pub fn matern_general(nu: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let log_pref = (1.0 - nu) * std::f64::consts::LN_2 - gamma(nu).ln() + nu * r.ln();
    (log_pref + bessel_k(nu, r).ln()).exp()
}

/// Gram matrix `S(U, U)` over the rows of `inputs`.
pub fn gram(spec: &KernelSpec, inputs: &Matrix) -> Result<Matrix> {
    let n_rows = inputs.rows();
    if n_rows == 0 || inputs.cols() == 0 {
        return Err(Error::Dimension("Gram matrix of an empty input set".into()));
    }
    if inputs.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("kernel inputs must be finite".into()));
    }
    spec.validate()?;
    let self_dots: Vec<f64> = (0..n_rows).map(|i| dot(inputs.row(i), inputs.row(i))).collect();
    let upper: Vec<Result<Vec<f64>>> = crate::par_range(n_rows, |i| {
        (i..n_rows)
            .map(|j| {
                spec.pair(inputs.row(i), inputs.row(j), self_dots[i], self_dots[j])
                    .map_err(|e| e.context(format!("Gram entry ({i}, {j})")))
            })
            .collect()
    });
    let mut g = Matrix::zeros(n_rows, n_rows);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row?.into_iter().enumerate() {
            let j = i + off;
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    Ok(g)
}

/// `[S(x, U_1), ..., S(x, U_N)]`.
pub fn cross(spec: &KernelSpec, inputs: &Matrix, self_dots: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != inputs.cols() {
        return Err(Error::Dimension(format!(
            "input has length {}, training inputs have length {}",
            x.len(),
            inputs.cols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("kernel inputs must be finite".into()));
    }
    let xx = dot(x, x);
    (0..inputs.rows())
        .map(|j| spec.pair(x, inputs.row(j), xx, self_dots[j]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_specs() -> Vec<KernelSpec> {
        let mut v: Vec<KernelSpec> = KernelSpec::benchmark_set().into_iter().map(|(_, k)| k).collect();
        v.push(KernelSpec::Matern { nu: 1.5, rho: 0.7 });
        v.push(KernelSpec::ntk(3, Activation::Relu));
        v.push(KernelSpec::ntk(2, Activation::Erf));
        v
    }

    #[test]
    fn linear_orthogonal() {
        assert_eq!(KernelSpec::Linear.eval(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn rbf_zero_distance() {
        let a = [0.3, -2.0, 5.0];
        for sigma in [0.01, 1.0, 40.0] {
            assert_eq!(KernelSpec::Rbf { sigma }.eval(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn matern_half_matches_exponential_and_bessel_route() {
        let a = [0.1, 0.4, 0.9];
        let b = [0.3, 0.2, 0.5];
        let d = sq_dist(&a, &b).sqrt();
        let rho = 0.55;
        let closed = KernelSpec::Matern { nu: 0.5, rho }.eval(&a, &b).unwrap();
        assert!((closed - (-d / rho).exp()).abs() < 1e-15);
        let via_bessel = matern_general(0.5, d / rho);
        assert!((via_bessel - closed).abs() < 1e-13);
        let closed = KernelSpec::Matern { nu: 2.5, rho }.eval(&a, &b).unwrap();
        let via_bessel = matern_general(2.5, (5.0f64).sqrt() * d / rho);
        assert!((via_bessel - closed).abs() < 1e-13);
    }

    #[test]
    fn matern_limits() {
        assert_eq!(matern(0.05, 0.55, 0.0), 1.0);
        let near = matern(0.05, 0.55, 1e-12);
        assert!(near < 1.0 && near > 0.9);
        assert!(KernelSpec::Matern { nu: 1e-4, rho: 1.0 }.validate().is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            KernelSpec::Linear.eval(&[f64::NAN], &[1.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn gram_small_cases() {
        let one = Matrix::from_rows(&[vec![0.2, 0.4]]).unwrap();
        let g = gram(&KernelSpec::Rbf { sigma: 1.0 }, &one).unwrap();
        assert_eq!(g.rows(), 1);
        assert_eq!(g.get(0, 0), 1.0);
        let eye = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let g = gram(&KernelSpec::Linear, &eye).unwrap();
        assert_eq!(g, eye);
    }

    #[test]
    fn rbf_gram_is_psd() {
        use nalgebra::DMatrix;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..8).map(|_| rng.random::<f64>()).collect()).collect();
        let g = gram(&KernelSpec::Rbf { sigma: 0.5 }, &Matrix::from_rows(&rows).unwrap()).unwrap();
        let m = DMatrix::from_row_slice(50, 50, g.as_slice());
        let eig = m.symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-8, "min eigenvalue {min}");
    }

    #[test]
    fn rational_quadratic_tends_to_rbf() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let sigma = 0.8;
        let rq = KernelSpec::RationalQuadratic { alpha: 1e6, l: sigma };
        let rbf = KernelSpec::Rbf { sigma };
        for _ in 0..100 {
            let a: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let (x, y) = (rq.eval(&a, &b).unwrap(), rbf.eval(&a, &b).unwrap());
            assert!(((x - y) / y).abs() < 1e-3);
        }
    }

    #[test]
    fn json_encoding() {
        let k: KernelSpec =
            serde_json::from_str(r#"{"kind":"ntk","depth":2,"activation":"relu","w_var":2.0,"b_var":0.1}"#).unwrap();
        assert_eq!(
            k,
            KernelSpec::Ntk { depth: 2, activation: Activation::Relu, w_var: Some(2.0), b_var: Some(0.1) }
        );
        let k: KernelSpec = serde_json::from_str(r#"{"kind":"matern","nu":0.05,"rho":0.55}"#).unwrap();
        assert_eq!(k, KernelSpec::Matern { nu: 0.05, rho: 0.55 });
        assert!(serde_json::from_str::<KernelSpec>(r#"{"kind":"poly","degree":2}"#).is_err());
    }

    proptest! {
        #[test]
        fn symmetric(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..20);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for spec in all_specs() {
                let ab = spec.eval(&a, &b).unwrap();
                let ba = spec.eval(&b, &a).unwrap();
                prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab.abs()), "{:?}", spec);
            }
        }

        #[test]
        fn stationary_kernels_translation_invariant(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..20);
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ac: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x + y).collect();
            let bc: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x + y).collect();
            for spec in [
                KernelSpec::Matern { nu: 0.05, rho: 0.55 },
                KernelSpec::Matern { nu: 1.5, rho: 0.3 },
                KernelSpec::Rbf { sigma: 0.7 },
                KernelSpec::RationalQuadratic { alpha: 0.055, l: 0.5 },
            ] {
                let k1 = spec.eval(&a, &b).unwrap();
                let k2 = spec.eval(&ac, &bc).unwrap();
                prop_assert!((k1 - k2).abs() <= 1e-12, "{:?}: {} vs {}", spec, k1, k2);
            }
        }
    }
}
