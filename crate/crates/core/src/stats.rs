//! Small numerical helpers shared by the posterior summaries and tests.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics: position `h = (n - 1) p`, value `x[floor h] + frac(h) *
/// (x[floor h + 1] - x[floor h])`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted(xs), 0.5)
}

/// Pearson correlation, or `None` when either series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Monte-Carlo standard error of the mean of a correlated series, by
/// non-overlapping batch means with `floor(sqrt(n))` batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let batches = (n as f64).sqrt().floor() as usize;
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    (variance(&means) / batches as f64).sqrt()
}

/// Sample autocorrelation at lags `0..=max_lag`.
pub fn autocorrelation(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            if c0 == 0.0 {
                return if lag == 0 { 1.0 } else { 0.0 };
            }
            let c: f64 = (0..n - lag).map(|t| (xs[t] - m) * (xs[t + lag] - m)).sum();
            c / c0
        })
        .collect()
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
