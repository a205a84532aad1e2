//! Small numerical helpers shared by the estimators.

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut acc = CompensatedSum::new();
    xs.iter().for_each(|&x| acc.add(x));
    acc.value() / xs.len() as f64
}

/// Standard error of the mean; zero for fewer than two samples.
pub fn standard_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Median of a sample (average of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mx = mean(xs);
    let my = mean(ys);
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

/// `log Σ exp(x_i)`, returning `-inf` for an empty input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add((x - max).exp());
    }
    max + acc.value().ln()
}

/// Shannon entropy `-Σ p log p` with `0 log 0 = 0`.
pub fn shannon_entropy(masses: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for p in masses {
        if p > 0.0 {
            acc.add(-p * p.ln());
        }
    }
    acc.value()
}

/// Standard error with a relative resolution floor folded in, so that
/// deterministic estimates still carry their numerical resolution.
pub fn with_resolution(se: f64, value: f64, resolution: f64) -> f64 {
    let floor = resolution * value.abs().max(1.0);
    (se * se + floor * floor).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x - 1.0).collect();
        assert!((regression_slope(&xs, &ys) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn lse_matches_direct_sum() {
        let xs = [0.1, -2.0, 3.5];
        let direct: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp(std::iter::empty::<f64>()), f64::NEG_INFINITY);
    }

    #[test]
    fn entropy_of_uniform() {
        let h = shannon_entropy(vec![0.25; 4]);
        assert!((h - 4f64.ln()).abs() < 1e-15);
        assert_eq!(shannon_entropy(vec![1.0, 0.0]), 0.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::new();
        acc.add(1e16);
        for _ in 0..10 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 10.0);
    }
}
