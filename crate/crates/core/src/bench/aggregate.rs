//! Streaming mean and standard error across Monte-Carlo runs.

use serde::{Deserialize, Serialize};

/// Mean and standard error of the mean (sample standard deviation over `√k`;
/// zero for a single observation).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Welford accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn stat(&self) -> Stat {
        let stderr = if self.count > 1 {
            (self.m2 / (self.count - 1) as f64).sqrt() / (self.count as f64).sqrt()
        } else {
            0.0
        };
        Stat {
            mean: self.mean,
            stderr,
            count: self.count,
        }
    }
}

/// Position-wise statistics of several series; position `j` uses every series
/// long enough to have it.
pub fn aggregate_series(series: &[Vec<f64>]) -> Vec<Stat> {
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|j| {
            let mut w = Welford::default();
            for s in series.iter().filter(|s| j < s.len()) {
                w.push(s[j]);
            }
            w.stat()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_observation_has_zero_stderr() {
        let s = aggregate_series(&[vec![1.0, 2.0]]);
        assert_eq!(s[1], Stat { mean: 2.0, stderr: 0.0, count: 1 });
    }

    #[test]
    fn known_sample() {
        let s = aggregate_series(&[vec![2.0], vec![4.0], vec![4.0], vec![4.0], vec![5.0], vec![5.0], vec![7.0], vec![9.0]]);
        assert!((s[0].mean - 5.0).abs() < 1e-15);
        let sd = (32.0f64 / 7.0).sqrt();
        assert!((s[0].stderr - sd / 8f64.sqrt()).abs() < 1e-14);
    }
}
