//! Online inverse-probability-weighted estimate of the value of the
//! estimated optimal rule, its plugin variance, and an optional augmented
//! (AIPW) variant.
//!
//! A step is *consistent* when the sampled action equals the action the
//! current rule prefers. Under epsilon-greedy sampling that happens with
//! known probability `1 - eps/2`, so no propensity model is needed.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RewardModel;
use crate::rng::RngStream;
use crate::types::{decide_optimal, Action, Observation};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueAccumulator {
    sum_v: f64,
    sum_v2: f64,
    sum_aipw: f64,
    sum_aipw2: f64,
    aipw_t: usize,
    t: usize,
}

/// Plugin variance with the clamp applied; `raw` keeps the unclamped value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub variance: f64,
    pub raw: f64,
    pub clamped: bool,
}

impl VarianceEstimate {
    fn from_raw(raw: f64) -> Self {
        VarianceEstimate {
            variance: raw.max(0.0),
            raw,
            clamped: raw < 0.0,
        }
    }
}

/// Consistency propensity `1 - eps/2`.
pub fn consistency_propensity(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::domain(format!(
            "exploration rate must lie in (0, 1], got {eps}"
        )));
    }
    Ok(1.0 - eps / 2.0)
}

impl ValueAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn sum_v(&self) -> f64 {
        self.sum_v
    }

    pub fn sum_v2(&self) -> f64 {
        self.sum_v2
    }

    /// `decided` is the rule's preferred action at sampling time and `eps`
    /// the exploration rate that sampled `obs.a`. `mu_hat`, when given, is
    /// the fitted mean reward of `decided` and feeds the AIPW sums.
    pub fn update(
        &mut self,
        obs: &Observation,
        decided: Action,
        eps: f64,
        mu_hat: Option<f64>,
    ) -> Result<()> {
        let pi_c = consistency_propensity(eps)?;
        let c = if obs.a == decided { 1.0 } else { 0.0 };
        let ipw = c * obs.y / pi_c;
        self.sum_v += ipw;
        self.sum_v2 += c * obs.y * obs.y / pi_c;
        if let Some(mu) = mu_hat {
            let term = ipw - (c - pi_c) / pi_c * mu;
            self.sum_aipw += term;
            self.sum_aipw2 += term * term;
            self.aipw_t += 1;
        }
        self.t += 1;
        Ok(())
    }

    pub fn estimate(&self) -> Result<f64> {
        if self.t == 0 {
            return Err(Error::Empty);
        }
        Ok(self.sum_v / self.t as f64)
    }

    /// `2/(2 - eps) * mean(C Y^2 / pi_C) - V^2`, clamped at zero.
    pub fn variance(&self, eps: f64) -> Result<VarianceEstimate> {
        let v = self.estimate()?;
        consistency_propensity(eps)?;
        let second = 2.0 / (2.0 - eps) * self.sum_v2 / self.t as f64;
        Ok(VarianceEstimate::from_raw(second - v * v))
    }

    /// Standard error of the estimate, `sqrt(variance / t)`.
    pub fn standard_error(&self, eps: f64) -> Result<f64> {
        Ok((self.variance(eps)?.variance / self.t as f64).sqrt())
    }

    pub fn aipw_estimate(&self) -> Result<f64> {
        if self.aipw_t == 0 {
            return Err(Error::Empty);
        }
        Ok(self.sum_aipw / self.aipw_t as f64)
    }

    /// Empirical variance of the AIPW summands. No asymptotic theory backs
    /// this; treat it as a heuristic.
    pub fn aipw_variance(&self) -> Result<VarianceEstimate> {
        let m = self.aipw_estimate()?;
        Ok(VarianceEstimate::from_raw(
            self.sum_aipw2 / self.aipw_t as f64 - m * m,
        ))
    }

    pub fn aipw_standard_error(&self) -> Result<f64> {
        Ok((self.aipw_variance()?.variance / self.aipw_t as f64).sqrt())
    }

    pub fn merge(&mut self, other: &ValueAccumulator) {
        self.sum_v += other.sum_v;
        self.sum_v2 += other.sum_v2;
        self.sum_aipw += other.sum_aipw;
        self.sum_aipw2 += other.sum_aipw2;
        self.aipw_t += other.aipw_t;
        self.t += other.t;
    }
}

/// Monte Carlo value of the true optimal rule: the mean over `n` simulated
/// features of the expected reward of the best action under `beta0`.
/// Returns the mean and its standard error.
pub fn oracle_value<M, F>(
    model: &M,
    beta0: &DVector<f64>,
    n: usize,
    mut draw_feature: F,
    rng: &mut RngStream,
) -> Result<(f64, f64)>
where
    M: RewardModel + ?Sized,
    F: FnMut(&mut RngStream) -> DVector<f64>,
{
    if n == 0 {
        return Err(Error::Empty);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 1..=n {
        let x = draw_feature(rng);
        let best = decide_optimal(model, beta0, &x)?;
        let mu = model.mean_reward(best, &x, beta0)?;
        let delta = mu - mean;
        mean += delta / k as f64;
        m2 += delta * (mu - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    Ok((mean, (var / n as f64).sqrt()))
}
