use crate::error::{Error, Result};

/// Effective sample size from Geyer's initial positive sequence: lag
/// autocorrelations are summed in adjacent pairs until a pair sum turns
/// non-positive, each pair capped at its predecessor. The result is clipped
/// to the trace length.
pub fn effective_sample_size(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::invalid("trace must have at least 10 values"));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return Err(Error::invalid("zero variance trace"));
    }
    let autocorr = |lag: usize| {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
            / c0
    };
    let mut pair_sum = 0.0;
    let mut previous = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocorr(2 * m) + autocorr(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(previous);
        pair_sum += pair;
        previous = pair;
        m += 1;
    }
    let tau = 2.0 * pair_sum - 1.0;
    let ess = if tau > 0.0 { n as f64 / tau } else { n as f64 };
    Ok(ess.min(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn iid_normals_have_nearly_full_ess() {
        for seed in 0..20 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let trace: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let ess = effective_sample_size(&trace).unwrap();
            assert!((800.0..=1200.0).contains(&ess), "seed {seed}: {ess}");
        }
    }

    #[test]
    fn ar1_chain_has_reduced_ess() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut x = 0.0;
        let trace: Vec<f64> = (0..5000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = 0.9 * x + e;
                x
            })
            .collect();
        // Theoretical ratio (1 - 0.9) / (1 + 0.9).
        let ess = effective_sample_size(&trace).unwrap();
        assert!(ess > 150.0 && ess < 450.0, "{ess}");
    }

    #[test]
    fn alternating_trace_is_clipped() {
        let trace: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(effective_sample_size(&trace).unwrap(), 100.0);
    }

    #[test]
    fn constant_trace_errors() {
        let err = effective_sample_size(&[2.0; 20]).unwrap_err();
        assert_eq!(err.to_string(), "zero variance trace");
        assert!(effective_sample_size(&[1.0, 2.0]).is_err());
    }
}
