//! Online plugin estimates of the gradient second moment and the Hessian,
//! the sandwich covariance of the averaged iterate, and Wald summaries.
//!
//! Storage is two `2p x 2p` running sums and a count, independent of the
//! number of steps seen.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::engine::{ipw_gradient, ipw_weight};
use crate::error::{check_dim, Error, Result};
use crate::model::{HessianVariant, RewardModel};
use crate::normal::{normal_quantile, two_sided_p};
use crate::types::{Observation, ReportRow};

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Variances more negative than this are reported as numeric failures.
const NEGATIVE_VARIANCE_TOL: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PluginAccumulators {
    s_sum: DMatrix<f64>,
    h_sum: DMatrix<f64>,
    n: usize,
    variant: HessianVariant,
}

impl PluginAccumulators {
    pub fn new(p: usize, variant: HessianVariant) -> Self {
        PluginAccumulators {
            s_sum: DMatrix::zeros(2 * p, 2 * p),
            h_sum: DMatrix::zeros(2 * p, 2 * p),
            n: 0,
            variant,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn variant(&self) -> HessianVariant {
        self.variant
    }

    pub fn s_sum(&self) -> &DMatrix<f64> {
        &self.s_sum
    }

    pub fn h_sum(&self) -> &DMatrix<f64> {
        &self.h_sum
    }

    /// Adds one step evaluated at the pre-step average `bar_beta_prev`
    /// with the propensity that sampled `obs.a`.
    pub fn accumulate<M: RewardModel + ?Sized>(
        &mut self,
        model: &M,
        bar_beta_prev: &DVector<f64>,
        obs: &Observation,
        pi_prev: f64,
    ) -> Result<()> {
        check_dim(self.s_sum.nrows(), bar_beta_prev.len())?;
        let g = ipw_gradient(model, bar_beta_prev, obs, pi_prev)?;
        let w = ipw_weight(obs.a, pi_prev)?;
        model.add_weighted_hessian(bar_beta_prev, obs, self.variant, w, &mut self.h_sum)?;
        self.s_sum.ger(1.0, &g, &g, 1.0);
        self.n += 1;
        Ok(())
    }

    pub fn s_hat(&self) -> Result<DMatrix<f64>> {
        self.mean_of(&self.s_sum)
    }

    pub fn h_hat(&self) -> Result<DMatrix<f64>> {
        self.mean_of(&self.h_sum)
    }

    fn mean_of(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.n == 0 {
            return Err(Error::Empty);
        }
        Ok(m / self.n as f64)
    }

    /// Combines sums from another stream of the same shape.
    pub fn merge(&mut self, other: &PluginAccumulators) -> Result<()> {
        check_dim(self.s_sum.nrows(), other.s_sum.nrows())?;
        self.s_sum += &other.s_sum;
        self.h_sum += &other.h_sum;
        self.n += other.n;
        Ok(())
    }

    /// `H^-1 S H^-1 / n`, the plugin covariance of the averaged iterate.
    pub fn sandwich_covariance(&self) -> Result<Sandwich> {
        self.sandwich_with(false)
    }

    /// As [`sandwich_covariance`](Self::sandwich_covariance), but adds
    /// `lambda I` with `lambda = 1e-8 trace(H) / 2p` when `H` is ill-conditioned.
    pub fn sandwich_covariance_ridged(&self) -> Result<Sandwich> {
        self.sandwich_with(true)
    }

    fn sandwich_with(&self, allow_ridge: bool) -> Result<Sandwich> {
        let mut h = self.h_hat()?;
        let s = self.s_hat()?;
        let dim = h.nrows();
        let condition = condition_number(&h);
        let mut ridge = None;
        if condition > MAX_CONDITION {
            let trace = h.trace();
            if !allow_ridge || trace.is_nan() || trace <= 0.0 {
                return Err(Error::Singular { condition });
            }
            let lambda = 1e-8 * trace / dim as f64;
            for i in 0..dim {
                h[(i, i)] += lambda;
            }
            ridge = Some(lambda);
        }
        let chol = h.clone().cholesky().ok_or(Error::Singular { condition })?;
        let left = chol.solve(&s);
        let mut cov = chol.solve(&left.transpose()).transpose();
        cov = (&cov + cov.transpose()) * (0.5 / self.n as f64);
        Ok(Sandwich {
            cov,
            condition,
            ridge,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    pub cov: DMatrix<f64>,
    /// Condition number of the plugin Hessian before any ridge.
    pub condition: f64,
    /// Ridge added to the diagonal, if the fallback was used.
    pub ridge: Option<f64>,
}

impl Sandwich {
    pub fn standard_errors(&self) -> Result<DVector<f64>> {
        standard_errors(&self.cov)
    }
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn standard_errors(cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = cov.diagonal();
    let mut se = DVector::zeros(d.len());
    for (i, &v) in d.iter().enumerate() {
        if v < NEGATIVE_VARIANCE_TOL || v.is_nan() {
            return Err(Error::Numeric(format!("variance {v} at coordinate {i}")));
        }
        se[i] = v.max(0.0).sqrt();
    }
    Ok(se)
}

/// Two-sided normal critical value for confidence `level`.
pub fn critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(normal_quantile((1.0 + level) / 2.0))
}

/// Wald interval and two-sided test of `estimate == null`.
pub fn wald_row(name: &str, estimate: f64, se: f64, level: f64, null: f64) -> Result<ReportRow> {
    let z = critical_value(level)?;
    if se.is_nan() || se < 0.0 {
        return Err(Error::Numeric(format!(
            "invalid standard error {se} for {name}"
        )));
    }
    let diff = estimate - null;
    let (t, p) = if se > 0.0 {
        let t = diff / se;
        (t, two_sided_p(t))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (diff.signum() * f64::INFINITY, 0.0)
    };
    Ok(ReportRow {
        name: name.to_string(),
        estimate,
        se: Some(se),
        ci_lo: Some(estimate - z * se),
        ci_hi: Some(estimate + z * se),
        t_value: Some(t),
        p_value: Some(p),
    })
}

/// Per-coordinate Wald rows from an estimate and its covariance.
pub fn wald_report(
    names: &[String],
    estimate: &DVector<f64>,
    cov: &DMatrix<f64>,
    level: f64,
    null: Option<&DVector<f64>>,
) -> Result<Vec<ReportRow>> {
    check_dim(estimate.len(), names.len())?;
    check_dim(estimate.len(), cov.nrows())?;
    if let Some(n) = null {
        check_dim(estimate.len(), n.len())?;
    }
    let se = standard_errors(cov)?;
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let h0 = null.map_or(0.0, |n| n[j]);
            wald_row(name, estimate[j], se[j], level, h0)
        })
        .collect()
}
