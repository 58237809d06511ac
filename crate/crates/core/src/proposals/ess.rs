//! Self-normalised weight bookkeeping in log space.

use crate::bn::PartialState;
use crate::error::{Error, Result};
use crate::exact::MarginalVector;

use super::EstimateResult;

/// Kish's effective sample size `(sum w)^2 / sum w^2`.
pub fn kish_ess(weights: &[f64]) -> Result<f64> {
    let (s, s2) = weights.iter().fold((0.0, 0.0), |(s, s2), &w| (s + w, s2 + w * w));
    if s <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    Ok(s * s / s2)
}

/// Kish ESS from log-weights, shifted by their maximum before exponentiating.
pub fn kish_ess_log(log_weights: &[f64]) -> Result<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllZeroWeights);
    }
    let shifted: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    kish_ess(&shifted)
}

/// Running sums of `exp(log_w - max_log_w)`. When a sample exceeds the
/// current maximum every sum is rescaled to the new reference.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAccumulator {
    count: usize,
    max_log_weight: f64,
    sum_w: f64,
    sum_w2: f64,
    mass_true: Vec<f64>,
}

impl WeightAccumulator {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            count: 0,
            max_log_weight: f64::NEG_INFINITY,
            sum_w: 0.0,
            sum_w2: 0.0,
            mass_true: vec![0.0; n_nodes],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn rescale(&mut self, new_max: f64) {
        if new_max <= self.max_log_weight {
            return;
        }
        let r = (self.max_log_weight - new_max).exp();
        self.sum_w *= r;
        self.sum_w2 *= r * r;
        for m in &mut self.mass_true {
            *m *= r;
        }
        self.max_log_weight = new_max;
    }

    pub fn add(&mut self, log_weight: f64, values: &[bool]) {
        self.count += 1;
        if log_weight == f64::NEG_INFINITY {
            return;
        }
        self.rescale(log_weight);
        let w = (log_weight - self.max_log_weight).exp();
        self.sum_w += w;
        self.sum_w2 += w * w;
        for (m, &v) in self.mass_true.iter_mut().zip(values) {
            if v {
                *m += w;
            }
        }
    }

    pub fn merge(&mut self, mut other: WeightAccumulator) {
        let max = self.max_log_weight.max(other.max_log_weight);
        self.rescale(max);
        other.rescale(max);
        self.count += other.count;
        self.sum_w += other.sum_w;
        self.sum_w2 += other.sum_w2;
        for (a, b) in self.mass_true.iter_mut().zip(other.mass_true) {
            *a += b;
        }
    }

    pub fn finish(self, evidence: &PartialState) -> Result<EstimateResult> {
        if self.sum_w <= 0.0 {
            return Err(Error::AllZeroWeights);
        }
        let mut marginals =
            MarginalVector(self.mass_true.iter().map(|m| (m / self.sum_w).clamp(0.0, 1.0)).collect());
        marginals.pin(evidence);
        let ess = (self.sum_w * self.sum_w / self.sum_w2).min(self.count as f64);
        Ok(EstimateResult {
            marginals,
            ess,
            n_samples: self.count,
            sum_weights: self.sum_w,
            sum_sq_weights: self.sum_w2,
            max_log_weight: self.max_log_weight,
        })
    }
}
