//! Reward-model families.
//!
//! Both shipped families are index models: the mean reward of action `a` is a
//! link function of `u(a, x; beta) = x . beta_a`, where `beta_a` is the block
//! of `beta` belonging to `a`. Gradients and Hessians of the per-observation
//! loss are therefore supported on the active block only.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::types::{Action, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Logistic,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Family::Linear),
            "logistic" => Ok(Family::Logistic),
            other => Err(Error::Config(format!("unknown model family {other:?}"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Linear => "linear",
            Family::Logistic => "logistic",
        })
    }
}

/// Which second derivative the logistic family reports.
///
/// `Exact` is the analytic `mu (1 - mu) grad_u grad_u^T`. `PaperOuter` uses
/// `(mu - y)^2 grad_u grad_u^T`, which has the same expectation at the loss
/// minimizer. The linear family ignores the distinction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianVariant {
    #[default]
    Exact,
    #[serde(rename = "paper")]
    PaperOuter,
}

impl FromStr for HessianVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(HessianVariant::Exact),
            "paper" => Ok(HessianVariant::PaperOuter),
            other => Err(Error::Config(format!("unknown hessian variant {other:?}"))),
        }
    }
}

/// A parametric model of `E[Y | A, X]` together with its working loss.
pub trait RewardModel: Send + Sync {
    /// Feature dimension `p`; parameters have length `2p`.
    fn dim(&self) -> usize;

    fn family(&self) -> Family;

    fn mean_reward(&self, a: Action, x: &DVector<f64>, beta: &DVector<f64>) -> Result<f64>;

    fn loss(&self, beta: &DVector<f64>, obs: &Observation) -> Result<f64>;

    fn loss_gradient(&self, beta: &DVector<f64>, obs: &Observation) -> Result<DVector<f64>>;

    fn loss_hessian(
        &self,
        beta: &DVector<f64>,
        obs: &Observation,
        variant: HessianVariant,
    ) -> Result<DMatrix<f64>>;

    /// `target += weight * loss_hessian(beta, obs, variant)`.
    fn add_weighted_hessian(
        &self,
        beta: &DVector<f64>,
        obs: &Observation,
        variant: HessianVariant,
        weight: f64,
        target: &mut DMatrix<f64>,
    ) -> Result<()> {
        let h = self.loss_hessian(beta, obs, variant)?;
        *target += h * weight;
        Ok(())
    }

    /// Rejects rewards outside the family's support.
    fn validate_reward(&self, _y: f64) -> Result<()> {
        Ok(())
    }
}

/// `u(a, x; beta) = x . beta[a-block]`.
pub fn linear_index(a: Action, x: &DVector<f64>, beta: &DVector<f64>) -> Result<f64> {
    let p = x.len();
    check_dim(2 * p, beta.len())?;
    Ok(x.dot(&beta.rows(a.index() * p, p)))
}

fn checked_index(p: usize, a: Action, x: &DVector<f64>, beta: &DVector<f64>) -> Result<f64> {
    check_dim(p, x.len())?;
    let u = linear_index(a, x, beta)?;
    if u.is_finite() {
        Ok(u)
    } else {
        Err(Error::Numeric(format!("non-finite linear index {u}")))
    }
}

/// `residual * grad_u`, zero outside the active block.
fn index_gradient(p: usize, a: Action, x: &DVector<f64>, residual: f64) -> DVector<f64> {
    let mut g = DVector::zeros(2 * p);
    g.rows_mut(a.index() * p, p).axpy(residual, x, 0.0);
    g
}

fn add_index_outer(p: usize, a: Action, x: &DVector<f64>, scale: f64, target: &mut DMatrix<f64>) {
    let off = a.index() * p;
    let mut block = target.view_mut((off, off), (p, p));
    block.ger(scale, x, x, 1.0);
}

/// Numerically stable logistic function.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Identity link with quadratic loss `(y - u)^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearModel {
    p: usize,
}

impl LinearModel {
    pub fn new(p: usize) -> Self {
        LinearModel { p }
    }
}

impl RewardModel for LinearModel {
    fn dim(&self) -> usize {
        self.p
    }

    fn family(&self) -> Family {
        Family::Linear
    }

    fn mean_reward(&self, a: Action, x: &DVector<f64>, beta: &DVector<f64>) -> Result<f64> {
        checked_index(self.p, a, x, beta)
    }

    fn loss(&self, beta: &DVector<f64>, obs: &Observation) -> Result<f64> {
        let r = obs.y - checked_index(self.p, obs.a, &obs.x, beta)?;
        Ok(0.5 * r * r)
    }

    fn loss_gradient(&self, beta: &DVector<f64>, obs: &Observation) -> Result<DVector<f64>> {
        let u = checked_index(self.p, obs.a, &obs.x, beta)?;
        Ok(index_gradient(self.p, obs.a, &obs.x, u - obs.y))
    }

    fn loss_hessian(
        &self,
        beta: &DVector<f64>,
        obs: &Observation,
        variant: HessianVariant,
    ) -> Result<DMatrix<f64>> {
        let mut h = DMatrix::zeros(2 * self.p, 2 * self.p);
        self.add_weighted_hessian(beta, obs, variant, 1.0, &mut h)?;
        Ok(h)
    }

    fn add_weighted_hessian(
        &self,
        beta: &DVector<f64>,
        obs: &Observation,
        _variant: HessianVariant,
        weight: f64,
        target: &mut DMatrix<f64>,
    ) -> Result<()> {
        checked_index(self.p, obs.a, &obs.x, beta)?;
        check_dim(2 * self.p, target.nrows())?;
        add_index_outer(self.p, obs.a, &obs.x, weight, target);
        Ok(())
    }
}

/// Logistic link with cross-entropy loss; rewards must be 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogisticModel {
    p: usize,
}

impl LogisticModel {
    pub fn new(p: usize) -> Self {
        LogisticModel { p }
    }

    fn curvature(&self, u: f64, y: f64, variant: HessianVariant) -> f64 {
        let mu = sigmoid(u);
        match variant {
            HessianVariant::Exact => mu * (1.0 - mu),
            HessianVariant::PaperOuter => (mu - y) * (mu - y),
        }
    }
}

impl RewardModel for LogisticModel {
    fn dim(&self) -> usize {
        self.p
    }

    fn family(&self) -> Family {
        Family::Logistic
    }

    fn mean_reward(&self, a: Action, x: &DVector<f64>, beta: &DVector<f64>) -> Result<f64> {
        Ok(sigmoid(checked_index(self.p, a, x, beta)?))
    }

    fn loss(&self, beta: &DVector<f64>, obs: &Observation) -> Result<f64> {
        self.validate_reward(obs.y)?;
        let u = checked_index(self.p, obs.a, &obs.x, beta)?;
        // -y ln(mu) - (1 - y) ln(1 - mu) == softplus(u) - y u
        Ok(softplus(u) - obs.y * u)
    }

    fn loss_gradient(&self, beta: &DVector<f64>, obs: &Observation) -> Result<DVector<f64>> {
        self.validate_reward(obs.y)?;
        let u = checked_index(self.p, obs.a, &obs.x, beta)?;
        Ok(index_gradient(self.p, obs.a, &obs.x, sigmoid(u) - obs.y))
    }

    fn loss_hessian(
        &self,
        beta: &DVector<f64>,
        obs: &Observation,
        variant: HessianVariant,
    ) -> Result<DMatrix<f64>> {
        let mut h = DMatrix::zeros(2 * self.p, 2 * self.p);
        self.add_weighted_hessian(beta, obs, variant, 1.0, &mut h)?;
        Ok(h)
    }

    fn add_weighted_hessian(
        &self,
        beta: &DVector<f64>,
        obs: &Observation,
        variant: HessianVariant,
        weight: f64,
        target: &mut DMatrix<f64>,
    ) -> Result<()> {
        self.validate_reward(obs.y)?;
        let u = checked_index(self.p, obs.a, &obs.x, beta)?;
        check_dim(2 * self.p, target.nrows())?;
        let c = self.curvature(u, obs.y, variant);
        add_index_outer(self.p, obs.a, &obs.x, weight * c, target);
        Ok(())
    }

    fn validate_reward(&self, y: f64) -> Result<()> {
        if y == 0.0 || y == 1.0 {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "logistic reward must be 0 or 1, got {y}"
            )))
        }
    }
}

/// Closed set of shipped families, for configuration-driven code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Linear(LinearModel),
    Logistic(LogisticModel),
}

impl ModelFamily {
    pub fn new(family: Family, p: usize) -> Self {
        match family {
            Family::Linear => ModelFamily::Linear(LinearModel::new(p)),
            Family::Logistic => ModelFamily::Logistic(LogisticModel::new(p)),
        }
    }

    fn inner(&self) -> &dyn RewardModel {
        match self {
            ModelFamily::Linear(m) => m,
            ModelFamily::Logistic(m) => m,
        }
    }
}

impl RewardModel for ModelFamily {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn family(&self) -> Family {
        self.inner().family()
    }

    fn mean_reward(&self, a: Action, x: &DVector<f64>, beta: &DVector<f64>) -> Result<f64> {
        self.inner().mean_reward(a, x, beta)
    }

    fn loss(&self, beta: &DVector<f64>, obs: &Observation) -> Result<f64> {
        self.inner().loss(beta, obs)
    }

    fn loss_gradient(&self, beta: &DVector<f64>, obs: &Observation) -> Result<DVector<f64>> {
        self.inner().loss_gradient(beta, obs)
    }

    fn loss_hessian(
        &self,
        beta: &DVector<f64>,
        obs: &Observation,
        variant: HessianVariant,
    ) -> Result<DMatrix<f64>> {
        self.inner().loss_hessian(beta, obs, variant)
    }

    fn add_weighted_hessian(
        &self,
        beta: &DVector<f64>,
        obs: &Observation,
        variant: HessianVariant,
        weight: f64,
        target: &mut DMatrix<f64>,
    ) -> Result<()> {
        self.inner()
            .add_weighted_hessian(beta, obs, variant, weight, target)
    }

    fn validate_reward(&self, y: f64) -> Result<()> {
        self.inner().validate_reward(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn beta0() -> DVector<f64> {
        DVector::from_vec(vec![0.3, -0.1, 0.7, 0.8, 0.5, -0.4])
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn obs(x: &[f64], a: Action, y: f64) -> Observation {
        Observation::new(v(x), a, y).unwrap()
    }

    #[test]
    fn index_selects_block() {
        let x = v(&[1.0, 0.0, 0.0]);
        assert_eq!(linear_index(Action::One, &x, &beta0()).unwrap(), 0.8);
        assert_eq!(linear_index(Action::Zero, &x, &beta0()).unwrap(), 0.3);
        assert_eq!(
            linear_index(Action::One, &x, &DVector::zeros(6)).unwrap(),
            0.0
        );
        assert!(linear_index(Action::One, &x, &DVector::zeros(5)).is_err());
    }

    #[test]
    fn mean_reward_values() {
        let lin = LinearModel::new(3);
        let log = LogisticModel::new(3);
        assert_relative_eq!(
            lin.mean_reward(Action::Zero, &v(&[1.0, 1.0, 1.0]), &beta0())
                .unwrap(),
            0.9,
            epsilon = 1e-15
        );
        assert_eq!(
            log.mean_reward(Action::Zero, &v(&[1.0, 0.0, 0.0]), &DVector::zeros(6))
                .unwrap(),
            0.5
        );
        let m = log
            .mean_reward(Action::One, &v(&[1.0, 0.0, 0.0]), &beta0())
            .unwrap();
        // independent route: tanh form of the logistic function
        let oracle = 0.5 * (1.0 + (0.4f64).tanh());
        assert_relative_eq!(m, oracle, epsilon = 1e-15);
        assert_relative_eq!(m, 0.68997, epsilon = 1e-5);
    }

    #[test]
    fn non_finite_index_is_numeric_error() {
        let beta = v(&[f64::INFINITY, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let err = LogisticModel::new(3).mean_reward(Action::Zero, &v(&[1.0, 0.0, 0.0]), &beta);
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        let log = LogisticModel::new(1);
        let big = obs(&[1.0], Action::Zero, 0.0);
        let l = log.loss(&v(&[800.0, 0.0]), &big).unwrap();
        assert_relative_eq!(l, 800.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_values() {
        let lin = LinearModel::new(3);
        let x = [1.0, 0.0, 0.0];
        assert_eq!(lin.loss(&beta0(), &obs(&x, Action::One, 0.8)).unwrap(), 0.0);
        assert_relative_eq!(
            lin.loss(&beta0(), &obs(&x, Action::One, 0.9)).unwrap(),
            0.005,
            epsilon = 1e-15
        );
        let log = LogisticModel::new(3);
        assert_relative_eq!(
            log.loss(&DVector::zeros(6), &obs(&x, Action::One, 1.0))
                .unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert!(log.loss(&beta0(), &obs(&x, Action::One, 0.5)).is_err());
    }

    #[test]
    fn gradient_blocks() {
        let lin = LinearModel::new(3);
        let g = lin
            .loss_gradient(&beta0(), &obs(&[1.0, 2.0, 3.0], Action::One, 0.0))
            .unwrap();
        assert!(g.rows(0, 3).iter().all(|&c| c == 0.0));
        let g = lin
            .loss_gradient(&beta0(), &obs(&[1.0, 0.0, 0.0], Action::Zero, 0.0))
            .unwrap();
        assert_eq!(g.as_slice(), &[0.3, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn hessian_unit_outer_product() {
        let h = LinearModel::new(3)
            .loss_hessian(
                &beta0(),
                &obs(&[1.0, 0.0, 0.0], Action::Zero, 0.0),
                HessianVariant::Exact,
            )
            .unwrap();
        let mut expected = DMatrix::zeros(6, 6);
        expected[(0, 0)] = 1.0;
        assert_eq!(h, expected);
    }

    #[test]
    fn logistic_exact_is_scaled_linear() {
        let o = obs(&[1.0, -0.7, 0.4], Action::One, 1.0);
        let lin = LinearModel::new(3)
            .loss_hessian(&beta0(), &o, HessianVariant::Exact)
            .unwrap();
        let log = LogisticModel::new(3)
            .loss_hessian(&beta0(), &o, HessianVariant::Exact)
            .unwrap();
        let mu = LogisticModel::new(3)
            .mean_reward(Action::One, &o.x, &beta0())
            .unwrap();
        assert_relative_eq!(log, lin * (mu * (1.0 - mu)), epsilon = 1e-15);
        let at_zero = LogisticModel::new(3)
            .loss_hessian(&DVector::zeros(6), &o, HessianVariant::Exact)
            .unwrap();
        let lin0 = LinearModel::new(3)
            .loss_hessian(&DVector::zeros(6), &o, HessianVariant::Exact)
            .unwrap();
        assert_relative_eq!(at_zero, lin0 * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn paper_outer_variant() {
        let o = obs(&[1.0, 0.5, 0.0], Action::Zero, 0.0);
        let m = LogisticModel::new(3);
        let mu = m.mean_reward(Action::Zero, &o.x, &beta0()).unwrap();
        let h = m
            .loss_hessian(&beta0(), &o, HessianVariant::PaperOuter)
            .unwrap();
        assert_relative_eq!(h[(0, 0)], mu * mu, epsilon = 1e-15);
        assert_relative_eq!(h[(0, 1)], mu * mu * 0.5, epsilon = 1e-15);
        assert_eq!(h[(3, 3)], 0.0);
    }

    #[test]
    fn family_dispatch_matches_concrete() {
        let o = obs(&[1.0, 0.2, -0.3], Action::One, 1.0);
        let fam = ModelFamily::new(Family::Logistic, 3);
        assert_eq!(
            fam.loss_gradient(&beta0(), &o).unwrap(),
            LogisticModel::new(3).loss_gradient(&beta0(), &o).unwrap()
        );
        assert_eq!(fam.family(), Family::Logistic);
        assert_eq!("linear".parse::<Family>().unwrap(), Family::Linear);
        assert!("probit".parse::<Family>().is_err());
    }

    #[test]
    fn cross_entropy_convex_along_lines() {
        let m = LogisticModel::new(3);
        let o = obs(&[1.0, 1.3, -0.8], Action::One, 1.0);
        let dir = v(&[0.3, -1.0, 0.5, 1.0, 0.7, -0.2]);
        let h = 1e-3;
        for k in -50..50 {
            let b = beta0() + &dir * (k as f64 * 0.2);
            let f = |s: f64| m.loss(&(&b + &dir * s), &o).unwrap();
            let second = f(h) - 2.0 * f(0.0) + f(-h);
            assert!(second >= -1e-10, "second difference {second} at k={k}");
        }
    }
}
