use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{CoreError, Result};
use crate::trajectory::ControlSequence;

/// Linear-β variance schedule. Levels are 1-based: `beta(i)` and
/// `alpha_bar(i)` for `i in 1..=N`, with `alpha_bar(0) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(CoreError::Config("noise schedule needs at least one level".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(CoreError::Config(format!("beta must lie in (0, 1), got {b}")));
        }
        let alpha_bar = beta
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha_bar })
    }

    pub fn levels(&self) -> usize {
        self.beta.len()
    }

    pub fn alpha_bar(&self, level: usize) -> f64 {
        if level == 0 {
            1.0
        } else {
            self.alpha_bar[level - 1]
        }
    }
}

pub fn make_noise_schedule(levels: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if levels == 0 {
        return Err(CoreError::Config("N must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(CoreError::Config(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let beta = if levels == 1 {
        vec![beta_min]
    } else {
        (0..levels)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (levels - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(beta)
}

/// `Y_i = √ᾱ_i·Y_0 + √(1 − ᾱ_i)·ε`.
pub fn forward_noise(
    y0: &ControlSequence,
    level: usize,
    schedule: &NoiseSchedule,
    rng: &RngStream,
) -> ControlSequence {
    let ab = schedule.alpha_bar(level);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut r = rng.rng();
    let flat: Vec<f64> = y0
        .to_flat()
        .into_iter()
        .map(|y| {
            let eps: f64 = StandardNormal.sample(&mut r);
            a * y + s * eps
        })
        .collect();
    ControlSequence::from_flat(&flat, y0.control_dim())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_products() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3]).unwrap();
        let expect = [0.9, 0.72, 0.504];
        for (a, e) in s.alpha_bar.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn single_level() {
        let eps = 1e-9;
        let s = make_noise_schedule(1, eps, eps).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - eps);
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = make_noise_schedule(30, 1e-4, 0.05).unwrap();
        assert!((s.beta[0] - 1e-4).abs() < 1e-18 && (s.beta[29] - 0.05).abs() < 1e-15);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar[0] <= 1.0);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(make_noise_schedule(5, 0.0, 0.1).is_err());
        assert!(make_noise_schedule(5, 0.2, 0.1).is_err());
        assert!(make_noise_schedule(5, 0.1, 1.0).is_err());
        assert!(make_noise_schedule(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn zero_noise_level_is_identity() {
        let s = NoiseSchedule::from_betas(vec![0.3]).unwrap();
        let y0 = ControlSequence::from_flat(&[0.5, -1.0, 2.0, 0.25], 2);
        assert_eq!(forward_noise(&y0, 0, &s, &RngStream::new(1)), y0);
    }

    #[test]
    fn variance_matches_alpha_bar() {
        let s = NoiseSchedule::from_betas(vec![0.5]).unwrap();
        let y0 = ControlSequence::zeros(50_000, 2);
        let y = forward_noise(&y0, 1, &s, &RngStream::new(7)).to_flat();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.5).abs() / 0.5 < 0.02, "sample variance {var}");
    }

    #[test]
    fn fixed_stream_is_reproducible() {
        let s = make_noise_schedule(10, 1e-3, 0.1).unwrap();
        let y0 = ControlSequence::from_flat(&[0.1; 20], 2);
        let rng = RngStream::new(9).child(3);
        assert_eq!(forward_noise(&y0, 7, &s, &rng), forward_noise(&y0, 7, &s, &rng));
    }
}
