//! Shared helpers for tests: finite-difference gradient checks and a
//! two-sample Kolmogorov-Smirnov statistic.

use crate::model::ModelSpec;

/// Asserts the analytic gradient matches central finite differences within
/// 1e-5 relative error (step 1e-6*(1+|xi|) per coordinate).
pub fn check_gradient(model: &ModelSpec, xi: &[f64], lambda: f64) {
    let (_, grad) = model.eval_unchecked(xi, lambda);
    let mut point = xi.to_vec();
    for i in 0..xi.len() {
        let h = 1e-6 * (1.0 + xi[i].abs());
        point[i] = xi[i] + h;
        let (up, _) = model.eval_unchecked(&point, lambda);
        point[i] = xi[i] - h;
        let (dn, _) = model.eval_unchecked(&point, lambda);
        point[i] = xi[i];
        let fd = (up - dn) / (2.0 * h);
        let denom = 1.0_f64.max(grad[i].abs()).max(fd.abs());
        assert!(
            (grad[i] - fd).abs() / denom < 1e-5,
            "gradient mismatch at coord {i}, xi={xi:?}: analytic {} vs fd {}",
            grad[i],
            fd
        );
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    ys.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xs[i].min(ys[j]);
        while i < n && xs[i] <= x {
            i += 1;
        }
        while j < m && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Critical value for the two-sample KS test at significance level 0.01.
pub fn ks_critical_value_001(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_statistic(&xs, &xs), 0.0);
    }

    #[test]
    fn ks_of_disjoint_samples_is_one() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = (100..150).map(|i| i as f64).collect();
        assert!((ks_statistic(&xs, &ys) - 1.0).abs() < 1e-12);
    }
}
