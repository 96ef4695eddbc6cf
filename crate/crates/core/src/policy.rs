//! Step-size and exploration schedules, epsilon-greedy propensity, action sampling.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::RewardModel;
use crate::rng::RngStream;
use crate::types::{
    decide_optimal, Action, ExplorationKind, ExplorationSchedule, LearningSchedule,
};

impl LearningSchedule {
    /// `alpha * t^(-gamma)` for `t >= 1`.
    pub fn rate(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::domain("learning rate is defined for t >= 1"));
        }
        Ok(self.alpha() * (t as f64).powf(-self.gamma()))
    }
}

impl ExplorationSchedule {
    /// Exploration rate for decision step `t` (1-based, absolute).
    pub fn rate(&self, t: usize) -> f64 {
        if t <= self.burn_in() {
            return 1.0;
        }
        match self.kind() {
            ExplorationKind::Fixed { eps } => eps,
            ExplorationKind::Decaying { exponent, floor } => {
                (t.max(1) as f64).powf(-exponent).max(floor)
            }
        }
    }

    pub fn in_burn_in(&self, t: usize) -> bool {
        t <= self.burn_in()
    }
}

pub fn learning_rate(schedule: &LearningSchedule, t: usize) -> Result<f64> {
    schedule.rate(t)
}

pub fn exploration_rate(schedule: &ExplorationSchedule, t: usize) -> f64 {
    schedule.rate(t)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "exploration rate must lie in (0, 1], got {eps}"
        )))
    }
}

/// Probability of action 1 given which action is currently estimated best.
pub fn greedy_propensity(best: Action, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(match best {
        Action::One => 1.0 - eps / 2.0,
        Action::Zero => eps / 2.0,
    })
}

/// `(1 - eps) * I{mu(1, x) > mu(0, x)} + eps / 2` under `bar_beta`.
pub fn propensity<M: RewardModel + ?Sized>(
    model: &M,
    bar_beta: &DVector<f64>,
    x: &DVector<f64>,
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    greedy_propensity(decide_optimal(model, bar_beta, x)?, eps)
}

/// Inversion sampling: one uniform draw `u`, action 1 iff `u < pi`.
pub fn sample_action(pi: f64, rng: &mut RngStream) -> Result<Action> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::domain(format!(
            "propensity must lie in (0, 1), got {pi}"
        )));
    }
    Ok(Action::from(rng.uniform() < pi))
}
