//! Order-stable reductions for ensemble estimators.

/// Pairwise (cascade) summation; error grows like `O(log n)` and the result
/// depends only on the order of `xs`, never on how work was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n == 1 {
            return Estimate { mean, se: 0.0 };
        }
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Estimate {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }

    /// Sample variance recovered from the standard error.
    pub fn variance(&self, n: usize) -> f64 {
        self.se * self.se * n as f64
    }
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (values[0] + values[n - 1]) + values[1..n - 1].iter().sum::<f64>()),
    }
}

/// `true` when each consecutive estimate is smaller than the previous one by
/// more than `k` combined standard errors.
pub fn strictly_decreasing_beyond(estimates: &[(f64, f64)], k: f64) -> bool {
    estimates
        .windows(2)
        .all(|w| w[0].0 - w[1].0 > k * (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integers() {
        let xs: Vec<f64> = (1..=10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 50_005_000.0);
    }

    #[test]
    fn mean_and_se() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let var = 5.0 / 3.0;
        assert!((e.se - (var / 4.0f64).sqrt()).abs() < 1e-15);
        assert!((e.variance(4) - var).abs() < 1e-12);
        assert_eq!(Estimate::from_samples(&[3.0]).se, 0.0);
        assert!(Estimate::from_samples(&[]).mean.is_nan());
    }

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let h = 0.1;
        let ys: Vec<f64> = (0..=10).map(|i| 2.0 * i as f64 * h + 1.0).collect();
        assert!((trapezoid(&ys, h) - 2.0).abs() < 1e-14);
        assert_eq!(trapezoid(&[5.0], h), 0.0);
    }

    #[test]
    fn decreasing_check() {
        assert!(strictly_decreasing_beyond(&[(1.0, 0.01), (0.5, 0.01), (0.1, 0.01)], 2.0));
        assert!(!strictly_decreasing_beyond(&[(1.0, 0.3), (0.5, 0.3)], 2.0));
        assert!(strictly_decreasing_beyond(&[(1.0, 0.3)], 2.0));
    }
}
