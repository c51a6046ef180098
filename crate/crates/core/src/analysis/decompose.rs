//! Moving-average seasonal/trend split and the seasonal-share score.

use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How far the floating-point trend may be nudged, in ulps, to make
/// `trend + seasonal` round back to the input.
pub const TREND_NUDGE_ULPS: usize = 4;

/// Centered window of length `period` around `i`, truncated at the edges:
/// `[i − ⌊(p−1)/2⌋, i + ⌈(p−1)/2⌉]`.
fn window(i: usize, n: usize, period: usize) -> (usize, usize) {
    let back = (period - 1) / 2;
    let fwd = period - 1 - back;
    (i.saturating_sub(back), (i + fwd + 1).min(n))
}

fn check(n: usize, period: usize) -> Result<()> {
    if period < 2 {
        return Err(Error::Domain(format!("decomposition period must be ≥ 2, got {period}")));
    }
    if n < 2 * period {
        return Err(Error::Domain(format!(
            "series of length {n} is too short for period {period}; need at least {}",
            2 * period
        )));
    }
    Ok(())
}

/// `trend` is the centered moving average over `period` samples (shrinking
/// at the edges) and `seasonal = y − trend`.
///
/// In floating point `trend + seasonal` need not round back to `y`; when a
/// trend value within [`TREND_NUDGE_ULPS`] of the average restores it, that
/// value is used. Some inputs admit no such pair at all (e.g. `y` on a finer
/// binade grid than both parts); use [`decompose_series_exact`] over an
/// exact field when reconstruction must hold unconditionally.
pub fn decompose_series<S: Scalar>(y: &[S], period: usize) -> Result<(Vec<S>, Vec<S>)> {
    check(y.len(), period)?;
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite value at index {i}")));
    }
    let n = y.len();
    let mut trend = Vec::with_capacity(n);
    let mut seasonal = Vec::with_capacity(n);
    for (i, &yi) in y.iter().enumerate() {
        let (a, b) = window(i, n, period);
        let avg = y[a..b].iter().copied().sum::<S>() / S::of_usize(b - a);
        let t = reconstructing_trend(yi, avg).unwrap_or(avg);
        trend.push(t);
        seasonal.push(yi - t);
    }
    Ok((trend, seasonal))
}

/// Nearest value to `avg` (within the nudge budget) for which
/// `t + (y − t)` rounds to `y`.
fn reconstructing_trend<S: Scalar>(y: S, avg: S) -> Option<S> {
    let ok = |t: S| t + (y - t) == y;
    if ok(avg) {
        return Some(avg);
    }
    let (mut up, mut down) = (avg, avg);
    for _ in 0..TREND_NUDGE_ULPS {
        up = up.step_ulp(true);
        down = down.step_ulp(false);
        if ok(up) {
            return Some(up);
        }
        if ok(down) {
            return Some(down);
        }
    }
    None
}

/// The same split over an exact number type (e.g. rationals), where
/// `trend + seasonal == y` holds by construction.
pub fn decompose_series_exact<T>(y: &[T], period: usize) -> Result<(Vec<T>, Vec<T>)>
where
    T: Num + Clone + FromPrimitive,
{
    check(y.len(), period)?;
    let n = y.len();
    let mut trend = Vec::with_capacity(n);
    let mut seasonal = Vec::with_capacity(n);
    for (i, yi) in y.iter().enumerate() {
        let (a, b) = window(i, n, period);
        let sum = y[a..b].iter().cloned().fold(T::zero(), |acc, v| acc + v);
        let count = T::from_usize(b - a).ok_or_else(|| Error::Domain("window length not representable".into()))?;
        let t = sum / count;
        seasonal.push(yi.clone() - t.clone());
        trend.push(t);
    }
    Ok((trend, seasonal))
}

/// Indices where `trend + seasonal` differs from `y` in any bit.
pub fn reconstruction_mismatches<S: Scalar>(y: &[S], trend: &[S], seasonal: &[S]) -> Vec<usize> {
    (0..y.len())
        .filter(|&i| (trend[i] + seasonal[i]).widen().to_bits() != y[i].widen().to_bits())
        .collect()
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// `var(seasonal) / (var(seasonal) + var(trend))`: near 1 for strongly
/// fluctuating series, near 0 for smooth ones. A constant series scores 0.
pub fn seasonal_share<S: Scalar>(y: &[S], period: usize) -> Result<f64> {
    let (t, s) = decompose_series(y, period)?;
    let vt = variance(&t.iter().map(|v| v.widen()).collect::<Vec<_>>());
    let vs = variance(&s.iter().map(|v| v.widen()).collect::<Vec<_>>());
    Ok(if vs + vt > 0.0 { vs / (vs + vt) } else { 0.0 })
}

/// Flags channels whose seasonal share is at or above the median share.
pub fn high_fluctuation<S: Scalar>(series: &[&[S]], period: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    let scores = series.iter().map(|s| seasonal_share(s, period)).collect::<Result<Vec<_>>>()?;
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let median = match sorted.len() {
        0 => return Ok((scores, Vec::new())),
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    };
    let flags = scores.iter().map(|&s| s >= median).collect();
    Ok((scores, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use std::f64::consts::PI;

    #[test]
    fn constant_series() {
        let y = vec![2.5; 40];
        let (t, s) = decompose_series(&y, 8).unwrap();
        assert!(t.iter().all(|&v| v == 2.5));
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_period_sinusoid_averages_out() {
        for p in [6usize, 7, 16] {
            let y: Vec<f64> = (0..5 * p).map(|i| (2.0 * PI * i as f64 / p as f64 + 0.3).sin()).collect();
            let (t, s) = decompose_series(&y, p).unwrap();
            for i in p..4 * p {
                assert!(t[i].abs() < 1e-6, "p={p} i={i} trend {}", t[i]);
                assert!((s[i] - y[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn edge_windows_shrink() {
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let (t, _) = decompose_series(&y, 4).unwrap();
        // p = 4: one back, two forward.
        assert_eq!(t[0], (0.0 + 1.0 + 2.0) / 3.0);
        assert_eq!(t[1], 1.5);
        assert_eq!(t[7], 6.5);
    }

    #[test]
    fn too_short_or_bad_period() {
        assert!(matches!(decompose_series(&[1.0; 7], 4), Err(Error::Domain(_))));
        assert!(matches!(decompose_series(&[1.0; 7], 1), Err(Error::Domain(_))));
    }

    #[test]
    fn exact_version_reconstructs() {
        let y: Vec<BigRational> = (0..30)
            .map(|i| BigRational::new(BigInt::from((i * 37 % 11) as i64 - 5), BigInt::from(i as i64 + 3)))
            .collect();
        let (t, s) = decompose_series_exact(&y, 7).unwrap();
        for i in 0..y.len() {
            assert_eq!(&t[i] + &s[i], y[i]);
        }
    }

    #[test]
    fn seasonal_share_orders_series() {
        let smooth: Vec<f64> = (0..64).map(|i| i as f64 * 0.1).collect();
        let wavy: Vec<f64> = (0..64).map(|i| (2.0 * PI * i as f64 / 8.0).sin()).collect();
        let a = seasonal_share(&smooth, 8).unwrap();
        let b = seasonal_share(&wavy, 8).unwrap();
        assert!(a < 0.1 && b > 0.9, "{a} {b}");
        let (_, flags) = high_fluctuation(&[&smooth[..], &wavy[..]], 8).unwrap();
        assert_eq!(flags, vec![false, true]);
    }
}
