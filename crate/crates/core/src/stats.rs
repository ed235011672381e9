//! Small numeric helpers shared by the estimators and the experiment code.

/// Neumaier-compensated running sum.
///
/// Terms are added in call order; callers feed them in ascending company
/// index so results are reproducible bit-for-bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().total()
}

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Empirical moments of a sample of estimates against a known truth.
///
/// `variance` is the population (divide-by-n) variance so that
/// `mse == squared_bias + variance` holds for the same sample; it is `None`
/// for a single observation. Standard errors use the unbiased sample
/// variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub n: usize,
    pub mean: f64,
    pub bias: f64,
    pub variance: Option<f64>,
    pub mse: f64,
    /// Standard error of `mean` (and therefore of `bias`).
    pub se_mean: Option<f64>,
    /// Standard error of the squared-error average.
    pub se_mse: Option<f64>,
    /// Delta-method standard error of `variance`.
    pub se_variance: Option<f64>,
}

impl EmpiricalMoments {
    pub fn from_sample(xs: &[f64], truth: f64) -> Self {
        let n = xs.len();
        assert!(n > 0, "empty sample");
        let nf = n as f64;
        let mean = mean(xs);
        let bias = mean - truth;
        let central2 = compensated_sum(xs.iter().map(|x| (x - mean).powi(2))) / nf;
        let (variance, se_mean, se_mse, se_variance) = if n < 2 {
            (None, None, None, None)
        } else {
            let sample_var = central2 * nf / (nf - 1.0);
            let central4 = compensated_sum(xs.iter().map(|x| (x - mean).powi(4))) / nf;
            let sq: Vec<f64> = xs.iter().map(|x| (x - truth).powi(2)).collect();
            let sq_mean = self::mean(&sq);
            let sq_var = compensated_sum(sq.iter().map(|e| (e - sq_mean).powi(2))) / (nf - 1.0);
            (
                Some(central2),
                Some((sample_var / nf).sqrt()),
                Some((sq_var / nf).sqrt()),
                Some(((central4 - central2 * central2).max(0.0) / nf).sqrt()),
            )
        };
        let mse = bias * bias + variance.unwrap_or(0.0);
        Self {
            n,
            mean,
            bias,
            variance,
            mse,
            se_mean,
            se_mse,
            se_variance,
        }
    }
}
