//! Small helpers for arithmetic on log-domain weights.

/// `log(Σ exp(x_i))`, stable for arbitrary magnitudes.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log(mean(exp(x_i)))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mean = values.iter().map(|&v| (v - max).exp()).sum::<f64>() / values.len() as f64;
    max + mean.ln()
}

/// Natural log of a nonnegative weight, mapping zero to `-inf`.
#[inline]
pub fn ln_weight(w: f64) -> f64 {
    if w == 0.0 {
        f64::NEG_INFINITY
    } else {
        w.ln()
    }
}
