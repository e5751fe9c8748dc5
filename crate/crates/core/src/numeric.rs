//! Small numerical helpers.

/// `log(sum(exp(xs)))` without overflow. Empty input or all `-inf` gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights in place into probabilities. Returns `false` when
/// every weight is `-inf` (nothing admissible).
pub fn softmax_in_place(xs: &mut [f64]) -> bool {
    let lse = log_sum_exp(xs);
    if !lse.is_finite() {
        return false;
    }
    for x in xs.iter_mut() {
        *x = (*x - lse).exp();
    }
    // renormalize so the row sums to one to machine precision
    let s: f64 = xs.iter().sum();
    xs.iter_mut().for_each(|x| *x /= s);
    true
}

/// `x log x` with the `0 log 0 = 0` convention.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `x log y` with `0 log y = 0` for any `y`, including zero.
#[inline]
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Derives an independent 64-bit seed from a parent seed and a stream index
/// (SplitMix64 finalizer over the combined words).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
