//! Optimized unary encoding (OUE) frequency oracle.
//!
//! A value is one-hot encoded over the domain, every bit is randomized on the
//! client (set bits survive with probability 1/2, clear bits are set with
//! probability `q = 1/(e^ε + 1)`), and the curator unbiases the per-bit
//! counts. Estimates are returned raw, so they may be negative.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_finite() && epsilon > 0.0 {
            Ok(Self { epsilon })
        } else {
            Err(Error::invalid(
                "epsilon",
                format!("must be > 0, got {epsilon}"),
            ))
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Probability that a clear bit is reported as set.
    pub fn q(&self) -> f64 {
        1.0 / (self.epsilon.exp() + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitReport {
    bits: Vec<bool>,
}

impl BitReport {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn encode(index: usize, size: usize) -> Result<BitReport> {
    if index >= size {
        return Err(Error::IndexOutOfDomain { index, size });
    }
    let mut bits = vec![false; size];
    bits[index] = true;
    Ok(BitReport { bits })
}

pub fn perturb<R: Rng + ?Sized>(v: &BitReport, eps: PrivacyParams, rng: &mut R) -> BitReport {
    let q = eps.q();
    let bits = v
        .bits
        .iter()
        .map(|&b| {
            if b {
                rng.gen_bool(0.5)
            } else {
                rng.gen_bool(q)
            }
        })
        .collect();
    BitReport { bits }
}

/// Encodes and perturbs in one pass without materializing the one-hot vector.
pub fn encode_perturbed<R: Rng + ?Sized>(
    index: usize,
    size: usize,
    eps: PrivacyParams,
    rng: &mut R,
) -> Result<BitReport> {
    if index >= size {
        return Err(Error::IndexOutOfDomain { index, size });
    }
    let q = eps.q();
    let bits = (0..size)
        .map(|i| {
            if i == index {
                rng.gen_bool(0.5)
            } else {
                rng.gen_bool(q)
            }
        })
        .collect();
    Ok(BitReport { bits })
}

/// OUE estimator variance `4e^ε / (n (e^ε − 1)²)`, evaluated as
/// `1 / (n sinh²(ε/2))` so large budgets do not overflow.
pub fn variance(eps: PrivacyParams, n: usize) -> f64 {
    let s = (eps.epsilon / 2.0).sinh();
    1.0 / (n as f64 * s * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    pub values: Vec<f64>,
    pub n: usize,
    pub epsilon_used: f64,
}

impl FrequencyEstimate {
    pub fn is_usable(&self) -> bool {
        self.n > 0
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Running per-bit counts; mergeable so reports can be reduced in parallel.
#[derive(Debug, Clone)]
pub struct Aggregator {
    counts: Vec<u64>,
    n: usize,
}

impl Aggregator {
    pub fn new(size: usize) -> Self {
        Self {
            counts: vec![0; size],
            n: 0,
        }
    }

    pub fn add(&mut self, report: &BitReport) -> Result<()> {
        if report.len() != self.counts.len() {
            return Err(Error::MixedLengths {
                expected: self.counts.len(),
                found: report.len(),
            });
        }
        for (c, &b) in self.counts.iter_mut().zip(&report.bits) {
            *c += b as u64;
        }
        self.n += 1;
        Ok(())
    }

    pub fn merge(mut self, other: Aggregator) -> Result<Self> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::MixedLengths {
                expected: self.counts.len(),
                found: other.counts.len(),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.n += other.n;
        Ok(self)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn finish(&self, eps: PrivacyParams) -> FrequencyEstimate {
        let values = if self.n == 0 {
            vec![0.0; self.counts.len()]
        } else {
            let q = eps.q();
            let n = self.n as f64;
            self.counts
                .iter()
                .map(|&c| (c as f64 / n - q) / (0.5 - q))
                .collect()
        };
        FrequencyEstimate {
            values,
            n: self.n,
            epsilon_used: eps.epsilon,
        }
    }
}

/// Unbiased frequency estimate from perturbed reports. An empty batch yields
/// an all-zero estimate with `n = 0`, which [`FrequencyEstimate::is_usable`]
/// reports as unusable. `size` fixes the vector length for that case.
pub fn aggregate(
    reports: &[BitReport],
    size: usize,
    eps: PrivacyParams,
) -> Result<FrequencyEstimate> {
    let mut agg = Aggregator::new(size);
    for r in reports {
        agg.add(r)?;
    }
    Ok(agg.finish(eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ln3() -> PrivacyParams {
        PrivacyParams::new(3f64.ln()).unwrap()
    }

    #[test]
    fn encode_one_hot() {
        assert_eq!(encode(2, 4).unwrap().bits(), &[false, false, true, false]);
        assert_eq!(encode(0, 1).unwrap().bits(), &[true]);
        assert!(matches!(
            encode(5, 4),
            Err(Error::IndexOutOfDomain { index: 5, size: 4 })
        ));
    }

    #[test]
    fn epsilon_must_be_positive() {
        assert!(PrivacyParams::new(0.0).is_err());
        assert!(PrivacyParams::new(-1.0).is_err());
        assert!(PrivacyParams::new(f64::NAN).is_err());
    }

    #[test]
    fn q_at_ln3_is_quarter() {
        assert_relative_eq!(ln3().q(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn perturb_is_reproducible() {
        let v = encode(3, 40).unwrap();
        let eps = PrivacyParams::new(1.0).unwrap();
        let a = perturb(&v, eps, &mut ChaCha8Rng::seed_from_u64(9));
        let b = perturb(&v, eps, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn perturb_large_epsilon_limit() {
        let eps = PrivacyParams::new(50.0).unwrap();
        let v = encode(1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = 100_000;
        let mut ones = [0usize; 3];
        for _ in 0..trials {
            for (o, b) in ones.iter_mut().zip(perturb(&v, eps, &mut rng).bits()) {
                *o += *b as usize;
            }
        }
        let share = ones[1] as f64 / trials as f64;
        // binomial sd at p = 1/2 is ~0.0016
        assert!((share - 0.5).abs() < 0.01, "{share}");
        assert_eq!(ones[0] + ones[2], 0);
    }

    #[test]
    fn aggregate_hand_values() {
        let eps = ln3();
        let mut reports = Vec::new();
        for i in 0..8 {
            // bit 0 set in 4 of 8 reports, bit 1 never set
            reports.push(BitReport::from_bits(vec![i % 2 == 0, false]));
        }
        let est = aggregate(&reports, 2, eps).unwrap();
        assert_eq!(est.n, 8);
        assert_relative_eq!(est.values[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(est.values[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_empty_is_unusable() {
        let est = aggregate(&[], 5, ln3()).unwrap();
        assert!(!est.is_usable());
        assert_eq!(est.values, vec![0.0; 5]);
    }

    #[test]
    fn aggregate_rejects_mixed_lengths() {
        let r = [encode(0, 3).unwrap(), encode(0, 4).unwrap()];
        assert!(matches!(
            aggregate(&r, 3, ln3()),
            Err(Error::MixedLengths { .. })
        ));
    }

    #[test]
    fn variance_hand_values() {
        assert_relative_eq!(variance(ln3(), 300), 0.01, epsilon = 1e-15);
        assert_relative_eq!(variance(ln3(), 3), 1.0, epsilon = 1e-12);
        let e1 = 1f64.exp();
        let direct = 4.0 * e1 / (50.0 * (e1 - 1.0).powi(2));
        assert_relative_eq!(
            variance(PrivacyParams::new(1.0).unwrap(), 50),
            direct,
            epsilon = 1e-15
        );
        assert_eq!(variance(PrivacyParams::new(1000.0).unwrap(), 10), 0.0);
        for e in [0.1, 1.0, 4.0] {
            let p = PrivacyParams::new(e).unwrap();
            assert_relative_eq!(variance(p, 20), variance(p, 10) / 2.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn variance_decreases_in_epsilon_and_n() {
        let mut prev = f64::INFINITY;
        for i in 1..60 {
            let v = variance(PrivacyParams::new(i as f64 * 0.1).unwrap(), 100);
            assert!(v < prev);
            prev = v;
        }
        let eps = PrivacyParams::new(1.0).unwrap();
        assert!((1..200).all(|n| variance(eps, n + 1) < variance(eps, n)));
    }

    #[test]
    fn estimates_sum_near_one_for_single_items() {
        let eps = PrivacyParams::new(2.0).unwrap();
        let size = 10;
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut agg = Aggregator::new(size);
        for u in 0..n {
            agg.add(&encode_perturbed(u % size, size, eps, &mut rng).unwrap())
                .unwrap();
        }
        let est = agg.finish(eps);
        let sum: f64 = est.values.iter().sum();
        // sum of `size` estimates, each with the oracle variance
        let sd = (size as f64 * variance(eps, n)).sqrt();
        assert!((sum - 1.0).abs() < 4.0 * sd, "sum {sum}, sd {sd}");
    }

    #[test]
    fn merged_aggregators_match_sequential() {
        let eps = PrivacyParams::new(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reports: Vec<_> = (0..50)
            .map(|i| encode_perturbed(i % 7, 7, eps, &mut rng).unwrap())
            .collect();
        let whole = aggregate(&reports, 7, eps).unwrap();
        let mut a = Aggregator::new(7);
        let mut b = Aggregator::new(7);
        for (i, r) in reports.iter().enumerate() {
            if i < 20 { a.add(r) } else { b.add(r) }.unwrap();
        }
        assert_eq!(a.merge(b).unwrap().finish(eps), whole);
    }
}
