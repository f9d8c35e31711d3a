//! Float helpers that `core` does not provide.

use alloc::vec::Vec;

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// `sign(x)` with `sign(0) = 0`.
#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn max(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log Σ exp(x_k / t)` with the maximum factored out.
pub(crate) fn log_sum_exp(values: &[f64], t: f64) -> f64 {
    let m = max(values) / t;
    let s: f64 = values.iter().map(|&v| exp(v / t - m)).sum();
    m + ln(s)
}

/// Softmax of `values / t`, written into `out`.
pub(crate) fn softmax_into(values: &[f64], t: f64, out: &mut Vec<f64>) {
    out.clear();
    let m = max(values) / t;
    out.extend(values.iter().map(|&v| exp(v / t - m)));
    let s: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= s;
    }
}
