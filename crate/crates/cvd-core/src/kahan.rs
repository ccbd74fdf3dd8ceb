//! Compensated (Neumaier) summation. Components can be orders of magnitude
//! smaller than the total variance, so plain accumulation is not enough to
//! hold the 1e-10 sum identity at scale.

#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice.
pub fn sum(values: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.total()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    sum(values) / values.len() as f64
}

/// Sample variance with the n-1 denominator.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let mut acc = KahanSum::new();
    for &v in values {
        let d = v - m;
        acc.add(d * d);
    }
    acc.total() / (n - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive_on_small_terms() {
        let mut values = vec![1e10];
        values.extend(std::iter::repeat(1e-6).take(1_000_000));
        values.push(-1e10);
        let exact = 1.0;
        assert!((sum(&values) - exact).abs() < 1e-9);
    }

    #[test]
    fn variance_of_symmetric_triple() {
        assert_eq!(sample_variance(&[-1.0, 0.0, 1.0]), 1.0);
    }
}
