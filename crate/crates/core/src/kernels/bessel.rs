//! Modified Bessel function of the second kind `K_ν(x)` for real `ν ≥ 0`,
//! `x > 0`.
//!
//! Temme's series for `x < 2`, Steed's continued fraction otherwise, both on
//! the reduced order `μ = ν - round(ν) ∈ [-1/2, 1/2]`, followed by upward
//! recurrence in the order.

use std::f64::consts::PI;

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAXIT: usize = 10_000;
const XMIN: f64 = 2.0;

const C1: [f64; 7] = [
    -1.142022680371168e0,
    6.5165112670737e-3,
    3.087090173086e-4,
    -3.4706269649e-6,
    6.9437664e-9,
    3.67795e-11,
    -1.356e-13,
];
const C2: [f64; 8] = [
    1.843740587300905e0,
    -7.68528408447867e-2,
    1.2719271366546e-3,
    -4.9717367042e-6,
    -3.31261198e-8,
    2.423096e-10,
    -1.702e-13,
    -1.49e-15,
];

fn chebev(c: &[f64], x: f64) -> f64 {
    let y2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &cj in c[1..].iter().rev() {
        let sv = d;
        d = y2 * d - dd + cj;
        dd = sv;
    }
    x * d - dd + 0.5 * c[0]
}

/// `(gam1, gam2, 1/Γ(1+x), 1/Γ(1-x))` for `|x| <= 1/2`, where
/// `gam1 = (1/Γ(1-x) - 1/Γ(1+x)) / 2x` and `gam2 = (1/Γ(1-x) + 1/Γ(1+x)) / 2`.
pub(crate) fn temme_gammas(x: f64) -> (f64, f64, f64, f64) {
    let xx = 8.0 * x * x - 1.0;
    let gam1 = chebev(&C1, xx);
    let gam2 = chebev(&C2, xx);
    (gam1, gam2, gam2 - x * gam1, gam2 + x * gam1)
}

/// `K_ν(x)`. Returns `+∞` at `x = 0` and NaN for invalid arguments.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    if !(nu >= 0.0) || !(x >= 0.0) {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::INFINITY;
    }
    let nl = (nu + 0.5).floor() as usize;
    let xmu = nu - nl as f64;
    let xmu2 = xmu * xmu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut rkmu, mut rk1);
    if x < XMIN {
        let x2 = 0.5 * x;
        let pimu = PI * xmu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = xmu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(xmu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - xmu2);
            c *= dd / fi;
            p /= fi - xmu;
            q /= fi + xmu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        rkmu = sum;
        rk1 = sum1 * xi2;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - xmu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        rkmu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        rk1 = rkmu * (xmu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (xmu + i as f64) * xi2 * rk1 + rkmu;
        rkmu = rk1;
        rk1 = next;
    }
    rkmu
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;

    /// K_ν(x) = ∫_0^∞ exp(-x cosh t) cosh(ν t) dt by composite Simpson.
    fn k_quadrature(nu: f64, x: f64) -> f64 {
        let upper = 12.0;
        let m = 40_000;
        let h = upper / m as f64;
        let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
        let mut s = f(0.0) + f(upper);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn temme_gammas_match_gamma_function() {
        for &x in &[-0.5, -0.3, -0.01, 0.0, 0.05, 0.25, 0.5] {
            let (_, _, gampl, gammi) = temme_gammas(x);
            assert!((gampl - 1.0 / gamma(1.0 + x)).abs() < 1e-14, "x={x}");
            assert!((gammi - 1.0 / gamma(1.0 - x)).abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn half_order_closed_form() {
        for &x in &[0.01, 0.3, 1.0, 1.99, 2.0, 5.0, 30.0] {
            let exact = (PI / (2.0 * x)).sqrt() * (-x).exp();
            let got = bessel_k(0.5, x);
            assert!(((got - exact) / exact).abs() < 1e-13, "x={x} got={got} exact={exact}");
            let exact32 = exact * (1.0 + 1.0 / x);
            let got32 = bessel_k(1.5, x);
            assert!(((got32 - exact32) / exact32).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn agrees_with_integral_representation() {
        for &nu in &[0.001, 0.05, 0.1, 0.37, 0.8, 1.3, 2.7] {
            for &x in &[0.05, 0.5, 1.5, 2.5, 7.0] {
                let q = k_quadrature(nu, x);
                let got = bessel_k(nu, x);
                assert!(((got - q) / q).abs() < 1e-9, "nu={nu} x={x} got={got} quad={q}");
            }
        }
    }
}
