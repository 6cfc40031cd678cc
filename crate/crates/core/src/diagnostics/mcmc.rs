//! Convergence diagnostics for scalar chains.

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Potential scale reduction over several equal-length chains.
/// Returns `1` for constant identical chains and `∞` for constant distinct ones.
pub fn rhat(chains: &[&[f64]]) -> f64 {
    let len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.len() < 2 || len < 2 {
        return f64::NAN;
    }
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(&c[..len])).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, b_over_n) = mean_var(&means);
    if w <= 0.0 {
        return if b_over_n <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let n = len as f64;
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// [`rhat`] of the two halves of one chain.
pub fn split_rhat(chain: &[f64]) -> f64 {
    let half = chain.len() / 2;
    if half < 2 {
        return f64::NAN;
    }
    rhat(&[&chain[..half], &chain[chain.len() - half..]])
}

/// Effective sample size with Geyer's initial positive sequence estimator.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let (m, _) = mean_var(chain);
    let centered: Vec<f64> = chain.iter().map(|v| v - m).collect();
    let autocov = |lag: usize| {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = autocov(lag) + autocov(lag + 1);
        if pair <= 0.0 {
            break;
        }
        // initial monotone sequence
        pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (2.0 * sum_pairs / c0 - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}
