//! Moment, correlation and rank statistics over plain slices.
//!
//! All variances are population (1/N) moments unless stated otherwise.

use num_traits::Float;

use crate::scalar::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len()))
}

/// Two-pass population variance.
pub fn pop_variance<T: Scalar>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Some(ss / T::from_usize_lossy(xs.len()))
}

pub fn pop_stdev<T: Scalar>(xs: &[T]) -> Option<T> {
    pop_variance(xs).map(Float::sqrt)
}

pub fn pop_covariance<T: Scalar>(xs: &[T], ys: &[T]) -> Option<T> {
    if xs.len() != ys.len() {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let s: T = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    Some(s / T::from_usize_lossy(xs.len()))
}

/// Pearson correlation. `None` when either side has zero variance or the
/// inputs are shorter than two samples.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Option<T> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let vx = pop_variance(xs)?;
    let vy = pop_variance(ys)?;
    if vx <= T::zero() || vy <= T::zero() {
        return None;
    }
    let c = pop_covariance(xs, ys)?;
    let r = c / (vx.sqrt() * vy.sqrt());
    Some(r.max(-T::one()).min(T::one()))
}

/// Kendall rank correlation (tau-b) of a series against its index.
///
/// Measures monotone trend; ties in the values are handled by the tau-b
/// denominator. `None` below two samples or for a constant series.
pub fn kendall_tau_trend<T: Scalar>(values: &[T]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let (mut concordant, mut discordant, mut ties) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            match values[j].partial_cmp(&values[i])? {
                std::cmp::Ordering::Greater => concordant += 1,
                std::cmp::Ordering::Less => discordant += 1,
                std::cmp::Ordering::Equal => ties += 1,
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let denom = (pairs * (pairs - ties as f64)).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn population_moments() {
        let xs = [0.01, 0.03];
        assert_relative_eq!(mean(&xs).unwrap(), 0.02, epsilon = 1e-15);
        assert_relative_eq!(pop_stdev(&xs).unwrap(), 0.01, epsilon = 1e-15);
        assert!(mean::<f64>(&[]).is_none());
    }

    #[test]
    fn pearson_of_affine_copy_is_one() {
        let xs: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        assert_relative_eq!(pearson(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_relative_eq!(pearson(&xs, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert!(pearson(&xs, &[1.0; 20]).is_none());
    }

    #[test]
    fn kendall_extremes() {
        assert_eq!(kendall_tau_trend(&[1.0, 2.0, 3.0, 4.0]), Some(1.0));
        assert_eq!(kendall_tau_trend(&[4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(kendall_tau_trend(&[1.0, 1.0, 1.0]), None);
        // 1 concordant-minus-discordant pair out of 3: (1,3) (1,2) (3,2)
        let t = kendall_tau_trend(&[1.0, 3.0, 2.0]).unwrap();
        assert_relative_eq!(t, 1.0 / 3.0, epsilon = 1e-12);
    }
}
