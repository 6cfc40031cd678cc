//! Special functions evaluated in `f64`.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn chebyshev(coeffs: &[f64], x: f64) -> f64 {
    let y2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &c in coeffs.iter().skip(1).rev() {
        let sv = d;
        d = y2 * d - dd + c;
        dd = sv;
    }
    x * d - dd + 0.5 * coeffs[0]
}

/// `(Γ₁, Γ₂, 1/Γ(1+μ), 1/Γ(1−μ))` for `|μ| ≤ 1/2`, as used by Temme's series.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
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
    let xx = 8.0 * mu * mu - 1.0;
    let g1 = chebyshev(&C1, xx);
    let g2 = chebyshev(&C2, xx);
    (g1, g2, g2 - mu * g1, g2 + mu * g1)
}

/// Modified Bessel function of the second kind `K_ν(x)` for `ν ≥ 0`, `x > 0`.
///
/// Temme's series for `x < 2`, Steed's continued fraction otherwise, then
/// forward recurrence in the order.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0 && nu >= 0.0, "bessel_k needs x > 0, nu >= 0");
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;
    let (mut k_mu, mut k_mu1);
    if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = std::f64::consts::PI * mu;
        let fact = if pimu.abs() < EPS {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (g1, g2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (g1 * e.cosh() + g2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        k_mu = sum;
        k_mu1 = sum1 * xi2;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        k_mu = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        k_mu1 = k_mu * (mu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    k_mu
}

/// `u^ν K_ν(u)`, continuous at `u = 0` where it equals `Γ(ν) 2^(ν−1)`.
pub fn scaled_bessel_k(nu: f64, u: f64) -> f64 {
    assert!(nu > 0.0, "scaled_bessel_k needs nu > 0");
    let root = (std::f64::consts::PI / 2.0).sqrt();
    let half_integer = |target: f64| (nu - target).abs() < 1e-15;
    if half_integer(0.5) {
        return root * (-u).exp();
    }
    if half_integer(1.5) {
        return root * (1.0 + u) * (-u).exp();
    }
    if half_integer(2.5) {
        return root * (3.0 + 3.0 * u + u * u) * (-u).exp();
    }
    if u < 1e-12 {
        return gamma(nu) * 2f64.powf(nu - 1.0);
    }
    u.powf(nu) * bessel_k(nu, u)
}
