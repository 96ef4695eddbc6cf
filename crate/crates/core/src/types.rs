//! Shared data model: observations, parameter state, schedules and reports.
//!
//! Parameters for the two actions are stored in one vector of length `2p`:
//! the first `p` entries belong to action 0 and the last `p` to action 1.
//! Every matrix in the crate uses the same block order.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::RewardModel;

/// Binary action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Zero,
    One,
}

impl Action {
    pub fn from_int(v: i64) -> Result<Self> {
        match v {
            0 => Ok(Action::Zero),
            1 => Ok(Action::One),
            other => Err(Error::domain(format!("action must be 0 or 1, got {other}"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::Zero => 0,
            Action::One => 1,
        }
    }

    pub fn is_one(self) -> bool {
        self == Action::One
    }

    pub fn other(self) -> Self {
        match self {
            Action::Zero => Action::One,
            Action::One => Action::Zero,
        }
    }
}

impl From<bool> for Action {
    fn from(b: bool) -> Self {
        if b {
            Action::One
        } else {
            Action::Zero
        }
    }
}

/// One decision step: feature, action taken, reward observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: DVector<f64>,
    pub a: Action,
    pub y: f64,
}

impl Observation {
    pub fn new(x: DVector<f64>, a: Action, y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::domain(format!("reward must be finite, got {y}")));
        }
        Ok(Observation { x, a, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Raw SGD iterate, its running average, and the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub hat_beta: DVector<f64>,
    pub bar_beta: DVector<f64>,
    pub t: usize,
}

impl ParameterState {
    /// The all-zero starting point for feature dimension `p`.
    pub fn zeros(p: usize) -> Self {
        ParameterState {
            hat_beta: DVector::zeros(2 * p),
            bar_beta: DVector::zeros(2 * p),
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.hat_beta.len() / 2
    }
}

/// Learning rate `alpha * t^(-gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningSchedule {
    alpha: f64,
    gamma: f64,
}

impl LearningSchedule {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::domain(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(gamma > 0.5 && gamma < 1.0) {
            return Err(Error::domain(format!(
                "gamma must lie in (0.5, 1), got {gamma}"
            )));
        }
        Ok(LearningSchedule { alpha, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExplorationKind {
    Fixed {
        eps: f64,
    },
    /// `max(t^(-exponent), floor)`.
    Decaying {
        exponent: f64,
        floor: f64,
    },
}

/// Exploration rate schedule with a pure-exploration burn-in prefix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    kind: ExplorationKind,
    burn_in: usize,
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in (0, 1], got {v}")))
    }
}

impl ExplorationSchedule {
    pub fn new(kind: ExplorationKind, burn_in: usize) -> Result<Self> {
        match kind {
            ExplorationKind::Fixed { eps } => check_unit_interval("eps", eps)?,
            ExplorationKind::Decaying { exponent, floor } => {
                if !(exponent > 0.0 && exponent.is_finite()) {
                    return Err(Error::domain(format!(
                        "decay exponent must be positive, got {exponent}"
                    )));
                }
                check_unit_interval("eps floor", floor)?;
            }
        }
        Ok(ExplorationSchedule { kind, burn_in })
    }

    pub fn fixed(eps: f64, burn_in: usize) -> Result<Self> {
        Self::new(ExplorationKind::Fixed { eps }, burn_in)
    }

    pub fn decaying(exponent: f64, floor: f64, burn_in: usize) -> Result<Self> {
        Self::new(ExplorationKind::Decaying { exponent, floor }, burn_in)
    }

    pub fn kind(&self) -> ExplorationKind {
        self.kind
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    /// The limiting exploration rate.
    pub fn limit(&self) -> f64 {
        match self.kind {
            ExplorationKind::Fixed { eps } => eps,
            ExplorationKind::Decaying { floor, .. } => floor,
        }
    }
}

/// Parses `fixed:EPS` or `decay:EXPONENT,FLOOR`. Burn-in is set separately.
impl FromStr for ExplorationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected fixed:F or decay:EXP,FLOOR, got {s:?}"));
        let (tag, rest) = s.split_once(':').ok_or_else(bad)?;
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        match tag.trim() {
            "fixed" => Ok(ExplorationKind::Fixed { eps: num(rest)? }),
            "decay" => {
                let (e, f) = rest.split_once(',').ok_or_else(bad)?;
                Ok(ExplorationKind::Decaying {
                    exponent: num(e)?,
                    floor: num(f)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ExplorationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExplorationKind::Fixed { eps } => write!(f, "fixed:{eps}"),
            ExplorationKind::Decaying { exponent, floor } => write!(f, "decay:{exponent},{floor}"),
        }
    }
}

/// One row of an inference table. Missing statistics (singular Hessian,
/// value rows without a test) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub t_value: Option<f64>,
    pub p_value: Option<f64>,
}

impl ReportRow {
    pub fn estimate_only(name: impl Into<String>, estimate: f64) -> Self {
        ReportRow {
            name: name.into(),
            estimate,
            se: None,
            ci_lo: None,
            ci_hi: None,
            t_value: None,
            p_value: None,
        }
    }
}

/// Parameter rows followed by the value row, at one step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub t: usize,
    pub rows: Vec<ReportRow>,
    pub flags: Vec<String>,
}

/// Conventional row names: `beta_<action>_<coordinate>`, coordinates 1-based.
pub fn parameter_names(p: usize) -> Vec<String> {
    (0..2)
        .flat_map(|a| (1..=p).map(move |j| format!("beta_{a}_{j}")))
        .collect()
}

/// Splits a `2p` parameter vector into the action-0 and action-1 halves.
pub fn split_parameters(beta: &DVector<f64>, p: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim(2 * p, beta.len())?;
    Ok((beta.rows(0, p).into_owned(), beta.rows(p, p).into_owned()))
}

pub fn concat_parameters(b0: &DVector<f64>, b1: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(b0.len(), b1.len())?;
    Ok(DVector::from_iterator(
        b0.len() * 2,
        b0.iter().chain(b1.iter()).copied(),
    ))
}

/// `1` iff action 1 has strictly larger mean reward; ties go to `0`.
pub fn decide_optimal<M: RewardModel + ?Sized>(
    model: &M,
    beta: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<Action> {
    let m1 = model.mean_reward(Action::One, x, beta)?;
    let m0 = model.mean_reward(Action::Zero, x, beta)?;
    Ok(Action::from(m1 > m0))
}
