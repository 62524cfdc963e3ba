//! Special functions and small numerical helpers shared by the models.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_ur, ln_gamma};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Density of N(mu, sigma^2) at `x`.
pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

pub fn normal_ln_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal survival function `1 - Phi(z)` without cancellation.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

pub fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    std_normal_cdf((x - mu) / sigma)
}

/// Standard normal quantile, polished by one Newton step.
pub fn std_normal_quantile(p: f64) -> f64 {
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    if !z.is_finite() {
        return z;
    }
    let density = normal_pdf(z, 0.0, 1.0);
    if density > 0.0 {
        let residual = if z < 0.0 { std_normal_cdf(z) - p } else { (1.0 - p) - std_normal_sf(z) };
        z - residual / density
    } else {
        z
    }
}

/// Natural log of the upper incomplete gamma function `Gamma(a, z)` for
/// `a < 1`, `a` not a non-positive integer, and `z > 0`. Negative shapes in
/// `(-1, 0)` are what the tilted stable tail needs.
pub fn ln_upper_incomplete_gamma(a: f64, z: f64) -> f64 {
    debug_assert!(z > 0.0);
    if z >= 1.0 {
        return ln_upper_gamma_cf(a, z);
    }
    if a > 0.0 {
        return ln_gamma(a) + gamma_ur(a, z).ln();
    }
    // Gamma(a, z) = (z^a e^{-z} - Gamma(a + 1, z)) / (-a), valid for a in (-1, 0).
    let lead = a * z.ln() - z;
    let next = ln_gamma(a + 1.0) + gamma_ur(a + 1.0, z).ln();
    lead + (-(next - lead).exp()).ln_1p() - (-a).ln()
}

/// Legendre continued fraction for `Gamma(a, z)`, modified Lentz evaluation.
fn ln_upper_gamma_cf(a: f64, z: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = z + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    -z + a * z.ln() + h.ln()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if order == 1 { (x, 1.0) } else { (p1, p0) };
            dp = n * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

/// Composite 20-point Gauss-Legendre quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = gl20();
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        let sum: f64 = nodes
            .iter()
            .zip(weights)
            .map(|(x, w)| w * f(mid + 0.5 * width * x))
            .sum();
        total += 0.5 * width * sum;
    }
    total
}

/// Root of a nondecreasing function `f` crossing `target` inside `[lo, hi]`.
pub fn bisect_increasing<F: Fn(f64) -> f64>(
    f: F,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// CDF of the noncentral t distribution with `df` degrees of freedom and
/// noncentrality `ncp`, by integrating `Phi(t s - ncp)` against the law of
/// `s = sqrt(V / df)`, `V ~ chi^2(df)`.
pub fn noncentral_t_cdf(t: f64, df: f64, ncp: f64) -> f64 {
    let sd = (0.5 / df).sqrt();
    let lo = (1.0 - 40.0 * sd).max(0.0);
    let hi = 1.0 + 40.0 * sd;
    let half = 0.5 * df;
    let ln_norm = half * 2f64.ln() + ln_gamma(half);
    let density = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let v = df * s * s;
        ((half - 1.0) * v.ln() - 0.5 * v - ln_norm).exp() * 2.0 * df * s
    };
    let value = integrate(|s| std_normal_cdf(t * s - ncp) * density(s), lo, hi, 96);
    value.clamp(0.0, 1.0)
}

/// Quantile of the noncentral t distribution by bracketing the CDF.
pub fn noncentral_t_quantile(q: f64, df: f64, ncp: f64) -> f64 {
    let cdf = |t: f64| noncentral_t_cdf(t, df, ncp);
    let mut width = 1.0f64.max(0.1 * ncp.abs());
    let (mut lo, mut hi) = (ncp - width, ncp + width);
    while cdf(lo) > q {
        width *= 2.0;
        lo = ncp - width;
    }
    width = 1.0f64.max(0.1 * ncp.abs());
    while cdf(hi) < q {
        width *= 2.0;
        hi = ncp + width;
    }
    let tol = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
    bisect_increasing(cdf, q, lo, hi, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn upper_gamma_matches_quadrature() {
        // Gamma(a, z) = int_z^inf t^{a-1} e^{-t} dt, substituting t = z + y.
        for &a in &[-0.4, -0.9, -0.1, 0.6] {
            for &z in &[0.01, 0.3, 0.99, 1.0, 2.5, 20.0] {
                let oracle = integrate(
                    |y: f64| {
                        let t = z + y * y / (1.0 - y) / (1.0 - y);
                        let dt = 2.0 * y / (1.0 - y).powi(3);
                        (t.powf(a - 1.0) * (-t).exp()) * dt
                    },
                    0.0,
                    1.0 - 1e-9,
                    4000,
                );
                let got = ln_upper_incomplete_gamma(a, z).exp();
                assert!(
                    ((got - oracle) / oracle).abs() < 1e-7,
                    "a={a} z={z} got={got} oracle={oracle}"
                );
            }
        }
    }

    #[test]
    fn noncentral_t_reduces_to_ratio_law() {
        // ncp = 0 and df = 1 is Cauchy.
        let c = noncentral_t_cdf(1.0, 1.0, 0.0);
        assert!((c - 0.75).abs() < 1e-9, "{c}");
        let q = noncentral_t_quantile(0.05, 3.0, -2.0);
        assert!((q - -6.852347517145711).abs() < 1e-6, "{q}");
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        for &p in &[1e-6, 0.05, 0.5, 0.9] {
            let back = std_normal_cdf(std_normal_quantile(p));
            assert!((back - p).abs() < 1e-13 * p.max(1e-2), "{p}: {back:e}");
        }
    }
}
