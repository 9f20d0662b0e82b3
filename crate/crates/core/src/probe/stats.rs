//! Two-sample and goodness-of-fit statistics used by the probes.

use statrs::distribution::{ContinuousCDF, Normal};
use tensorkit::Rng;

use crate::error::{invalid, Result};

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `N(0, 1)`.
pub fn ks_standard_normal(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("KS statistic of an empty sample"));
    }
    let normal = Normal::standard();
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    Ok(x.iter().enumerate().fold(0.0, |d, (i, &v)| {
        let f = normal.cdf(v);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    }))
}

/// Asymptotic critical value of the one-sample KS statistic at level `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Pairwise Euclidean distances of the pooled points.
fn distance_matrix(points: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = euclid(points[i], points[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

fn energy_from(d: &[Vec<f64>], in_x: &[bool]) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    let nx = in_x.iter().filter(|&&b| b).count() as f64;
    let ny = in_x.len() as f64 - nx;
    for i in 0..d.len() {
        for j in 0..d.len() {
            match (in_x[i], in_x[j]) {
                (true, true) => xx += d[i][j],
                (false, false) => yy += d[i][j],
                (true, false) => xy += d[i][j],
                _ => {}
            }
        }
    }
    2.0 * xy / (nx * ny) - xx / (nx * (nx - 1.0)) - yy / (ny * (ny - 1.0))
}

/// Energy distance between two samples and its permutation p-value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyTest {
    pub distance: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Energy distance `2 E|X-Y| - E|X-X'| - E|Y-Y'|` (within-sample terms
/// exclude self pairs) with a label-permutation p-value.
pub fn energy_test(x: &[Vec<f64>], y: &[Vec<f64>], permutations: usize, rng: &mut Rng) -> Result<EnergyTest> {
    if x.len() < 2 || y.len() < 2 {
        return Err(invalid("energy distance needs at least two points per sample"));
    }
    let dim = x[0].len();
    if x.iter().chain(y).any(|p| p.len() != dim) {
        return Err(invalid("energy distance points differ in dimension"));
    }
    let pooled: Vec<&[f64]> = x.iter().chain(y).map(Vec::as_slice).collect();
    let d = distance_matrix(&pooled);
    let mut labels: Vec<bool> = (0..pooled.len()).map(|i| i < x.len()).collect();
    let distance = energy_from(&d, &labels);
    let mut at_least = 0usize;
    for _ in 0..permutations {
        rng.shuffle(&mut labels);
        if energy_from(&d, &labels) >= distance {
            at_least += 1;
        }
    }
    Ok(EnergyTest {
        distance,
        p_value: (at_least + 1) as f64 / (permutations + 1) as f64,
        permutations,
    })
}

/// Area under the ROC curve of scores for positives against negatives, ties
/// counted as one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(invalid("AUC needs both classes"));
    }
    let mut wins = 0.0;
    for &p in positive {
        for &n in negative {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (positive.len() * negative.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let normal = Normal::standard();
        let n = 1000;
        let q: Vec<f64> = (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
        let d = ks_standard_normal(&q).unwrap();
        assert!((d - 0.5 / n as f64).abs() < 1e-9, "{d}");
        let shifted: Vec<f64> = q.iter().map(|v| v + 3.0).collect();
        // sup |Phi(x) - Phi(x - 3)| sits at x = 1.5.
        let exact = 2.0 * normal.cdf(1.5) - 1.0;
        assert!((ks_standard_normal(&shifted).unwrap() - exact).abs() < 1.0 / n as f64);
    }

    #[test]
    fn ks_critical_value_at_one_percent() {
        assert!((ks_critical(1, 0.01) - 1.6276).abs() < 1e-4);
        assert!((ks_critical(100, 0.01) - 0.16276).abs() < 1e-5);
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1], &[0.9]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[0.5]).unwrap(), 0.5);
    }

    #[test]
    fn energy_separates_shifted_samples() {
        let mut rng = Rng::new(3);
        let draw = |rng: &mut Rng, mu: f64| -> Vec<Vec<f64>> {
            (0..60).map(|_| vec![rng.normal() + mu, rng.normal()]).collect()
        };
        let a = draw(&mut rng, 0.0);
        let b = draw(&mut rng, 0.0);
        let c = draw(&mut rng, 2.0);
        let same = energy_test(&a, &b, 200, &mut rng).unwrap();
        let diff = energy_test(&a, &c, 200, &mut rng).unwrap();
        assert!(same.p_value > 0.01, "{same:?}");
        assert!(diff.p_value < 0.01 && diff.distance > same.distance, "{diff:?}");
    }
}
