//! Ferguson-Klass jumps of the exponentially tilted stable intensity
//! `e^{-u s} gamma / Gamma(1 - gamma) s^{-1-gamma}`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::special::ln_upper_incomplete_gamma;

/// Hard cap on the number of generated jumps per call.
pub const MAX_JUMPS: usize = 100_000;

/// Tail mass of the tilted stable Levy measure.
#[derive(Debug, Clone, Copy)]
pub struct StableTail {
    gamma: f64,
    tilt: f64,
    ln_gamma_1m: f64,
}

impl StableTail {
    pub fn new(gamma: f64, tilt: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("gamma out of range"));
        }
        if !(tilt >= 0.0) || !tilt.is_finite() {
            return Err(Error::invalid("tilt must be finite and non-negative"));
        }
        Ok(StableTail {
            gamma,
            tilt,
            ln_gamma_1m: ln_gamma(1.0 - gamma),
        })
    }

    /// `ln M(x)` with `M(x) = int_x^inf e^{-u s} rho(s) ds`.
    pub fn ln_tail(&self, x: f64) -> f64 {
        let g = self.gamma;
        if self.tilt == 0.0 {
            return -g * x.ln() - self.ln_gamma_1m;
        }
        // M(x) = gamma / Gamma(1 - gamma) * u^gamma * Gamma(-gamma, u x)
        g.ln() - self.ln_gamma_1m + g * self.tilt.ln() + ln_upper_incomplete_gamma(-g, self.tilt * x)
    }

    /// `d ln M / d ln x`, always negative.
    fn ln_tail_slope(&self, x: f64, ln_tail: f64) -> f64 {
        let g = self.gamma;
        // x * rho(x) e^{-u x} / M(x)
        let ln_num = g.ln() - self.ln_gamma_1m - g * x.ln() - self.tilt * x;
        -(ln_num - ln_tail).exp()
    }

    /// Solves `M(x) = tau` for `x`.
    pub fn invert(&self, tau: f64) -> f64 {
        let g = self.gamma;
        let target = tau.ln();
        // Untilted solution; tilting only lowers M, so it bounds the root from above.
        let mut hi = -(target + self.ln_gamma_1m) / g;
        if self.tilt == 0.0 {
            return hi.exp();
        }
        let mut lo = hi - 1.0;
        let mut step = 1.0;
        while self.ln_tail(lo.exp()) < target {
            hi = lo;
            step *= 2.0;
            lo -= step;
        }
        // Safeguarded Newton on y = ln x.
        let mut y = 0.5 * (lo + hi);
        for _ in 0..200 {
            let x = y.exp();
            let f = self.ln_tail(x);
            let resid = f - target;
            if resid > 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            if resid.abs() < 1e-13 || hi - lo < 1e-14 {
                break;
            }
            let slope = self.ln_tail_slope(x, f);
            let mut next = y - resid / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            y = next;
        }
        y.exp()
    }
}

/// Jumps `M^{-1}(tau_i)` for given Poisson arrival times.
pub fn jumps_from_arrivals(gamma: f64, tilt: f64, arrivals: &[f64]) -> Result<Vec<f64>> {
    let tail = StableTail::new(gamma, tilt)?;
    Ok(arrivals.iter().map(|&t| tail.invert(t)).collect())
}

/// Generates the decreasing jump sequence of the tilted stable CRM.
///
/// Generation stops once the next jump is below `tol` times the mass
/// accumulated so far; that jump is discarded. At least one jump is returned.
pub fn truncate_jumps<R: Rng + ?Sized>(gamma: f64, tilt: f64, tol: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::invalid("truncation tolerance must lie in (0, 1)"));
    }
    let tail = StableTail::new(gamma, tilt)?;
    let mut arrival = 0.0;
    let mut total = 0.0;
    let mut jumps = Vec::new();
    while jumps.len() < MAX_JUMPS {
        let e: f64 = Exp1.sample(rng);
        arrival += e;
        let jump = tail.invert(arrival);
        if !jumps.is_empty() && jump < tol * total {
            break;
        }
        // Strict decrease can fail only at the underflow floor.
        if jump <= 0.0 || jumps.last().is_some_and(|&last| jump >= last) {
            break;
        }
        total += jump;
        jumps.push(jump);
    }
    Ok(jumps)
}
