//! Small statistics kit: mergeable accumulators, fits and goodness-of-fit tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub n: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum / self.n as f64
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.sum / n;
        ((self.sumsq - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            stderr: self.stderr(),
            n: self.n,
        }
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Accumulator::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    /// Bernoulli estimate with stderr sqrt(p(1-p)/n).
    pub fn proportion(hits: u64, n: u64) -> Estimate {
        let p = hits as f64 / n.max(1) as f64;
        Estimate {
            mean: p,
            stderr: (p * (1.0 - p) / n.max(1) as f64).sqrt(),
            n,
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Median of block means; `blocks` contiguous blocks of equal size.
pub fn median_of_means(xs: &[f64], blocks: usize) -> f64 {
    let blocks = blocks.clamp(1, xs.len().max(1));
    let size = xs.len() / blocks;
    if size == 0 {
        return f64::NAN;
    }
    let mut means: Vec<f64> = xs
        .chunks_exact(size)
        .take(blocks)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let m = means.len();
    if m % 2 == 1 {
        means[m / 2]
    } else {
        0.5 * (means[m / 2 - 1] + means[m / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Least squares y = intercept + slope·x, optionally weighted by 1/σ².
pub fn linear_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1.0 }).collect(),
        None => vec![1.0; x.len()],
    };
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = match sigma {
        Some(_) => (1.0 / sxx).sqrt(),
        None => {
            let n = x.len() as f64;
            let rss: f64 = x.iter().zip(y).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
            if n > 2.0 {
                (rss / (n - 2.0) / sxx).sqrt()
            } else {
                0.0
            }
        }
    };
    LinearFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Asymptotic Kolmogorov survival function P(K > x).
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample KS test on weighted samples. Weights may be unnormalized;
/// effective sample sizes use Kish's formula. Returns (D, p-value).
pub fn ks_two_sample_weighted(a: &[(f64, f64)], b: &[(f64, f64)]) -> (f64, f64) {
    fn prep(v: &[(f64, f64)]) -> (Vec<(f64, f64)>, f64) {
        let mut v = v.to_vec();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        let s: f64 = v.iter().map(|p| p.1).sum();
        let s2: f64 = v.iter().map(|p| p.1 * p.1).sum();
        for p in v.iter_mut() {
            p.1 /= s;
        }
        (v, s * s / s2)
    }
    let (a, na) = prep(a);
    let (b, nb) = prep(b);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb, mut d) = (0.0f64, 0.0f64, 0.0f64);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => break,
        };
        while i < a.len() && a[i].0 <= x {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 <= x {
            fb += b[j].1;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    let ne = na * nb / (na + nb);
    let sq = ne.sqrt();
    (d, kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d))
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let wa: Vec<(f64, f64)> = a.iter().map(|x| (*x, 1.0)).collect();
    let wb: Vec<(f64, f64)> = b.iter().map(|x| (*x, 1.0)).collect();
    ks_two_sample_weighted(&wa, &wb)
}

/// Pearson chi-square test of observed counts against expected probabilities.
/// Returns (statistic, p-value).
pub fn chi_square(observed: &[u64], expected_p: &[f64]) -> (f64, f64) {
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected_p)
        .map(|(o, p)| {
            let e = p * n as f64;
            (*o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(dof).expect("dof > 0").cdf(stat);
    (stat, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_merge_matches_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let all: Accumulator = xs.iter().copied().collect();
        let mut a: Accumulator = xs[..37].iter().copied().collect();
        let b: Accumulator = xs[37..].iter().copied().collect();
        a.merge(&b);
        assert_eq!(a.n, all.n);
        assert!((a.mean() - all.mean()).abs() < 1e-14);
        assert!((a.stderr() - all.stderr()).abs() < 1e-14);
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = linear_fit(&x, &y, None);
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_known_value() {
        // P(K > 1.36) ≈ 0.049
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn median_of_means_of_constant() {
        assert_eq!(median_of_means(&[2.0; 64], 16), 2.0);
    }

    #[test]
    fn chi_square_perfect_fit() {
        let (s, p) = chi_square(&[25, 25, 25, 25], &[0.25; 4]);
        assert_eq!(s, 0.0);
        assert!(p > 0.99);
    }
}
