//! Stable log-space arithmetic.

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Streaming `log(sum exp(x_i))`.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut acc = LogSumExp::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sum of terms `sign_i * exp(log_mag_i)` evaluated relative to the largest
/// magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedSum {
    /// Largest `log_mag_i`.
    pub log_scale: f64,
    /// The sum divided by `exp(log_scale)`.
    pub scaled: f64,
}

impl SignedSum {
    /// `log |sum|`.
    pub fn log_abs(&self) -> f64 {
        self.log_scale + self.scaled.abs().ln()
    }

    pub fn is_positive(&self) -> bool {
        self.scaled > 0.0
    }

    /// Ratio of `|sum|` to the largest single term.
    pub fn relative_magnitude(&self) -> f64 {
        self.scaled.abs()
    }
}

/// Signed log-sum-exp with compensated accumulation of the rescaled terms.
/// Terms with `log_mag = -inf` contribute nothing. Returns `None` for an
/// empty or all-zero series.
pub fn signed_log_sum_exp(log_mags: &[f64], signs: &[f64]) -> Option<SignedSum> {
    debug_assert_eq!(log_mags.len(), signs.len());
    let log_scale = log_mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if log_scale == f64::NEG_INFINITY {
        return None;
    }
    let scaled = compensated_sum(log_mags.iter().zip(signs).map(|(&l, &s)| s * (l - log_scale).exp()));
    Some(SignedSum { log_scale, scaled })
}
