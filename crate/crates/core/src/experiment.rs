//! Experiment configuration and drivers: single runs, Monte Carlo suites,
//! learning-rate sweeps and replay evaluation.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    run_stream, run_stream_lagged, CsvTrace, LearnerConfig, Snapshot, StepObserver, StreamOutcome,
    TrajectorySummary,
};
use crate::env::{
    draw_feature, Delayed, LagSchedule, ReplayEnv, ReplayLog, SyntheticConfig, SyntheticEnv,
};
use crate::error::{Error, Result};
use crate::inference::critical_value;
use crate::model::{Family, HessianVariant};
use crate::report::{
    build_report, emit_reports, ensure_dir, to_json, write_file, OutputFormat, ReportOptions,
    AIPW_ROW, VALUE_ROW,
};
use crate::rng::{replication_seed, RngStream};
use crate::types::{
    parameter_names, ExplorationKind, ExplorationSchedule, InferenceReport, LearningSchedule,
};
use crate::value::oracle_value;

pub const ENV_STREAM: u64 = 0;
pub const POLICY_STREAM: u64 = 1;
pub const LAG_STREAM: u64 = 2;
pub const ORACLE_STREAM: u64 = 3;

impl FromStr for LagSchedule {
    type Err = Error;

    /// `const:S` or `geom:P`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("lag must be const:S or geom:P, got {s:?}"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let lag = match kind.trim() {
            "const" => LagSchedule::Constant(arg.trim().parse().map_err(|_| bad())?),
            "geom" => LagSchedule::Geometric(arg.trim().parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        lag.validate()?;
        Ok(lag)
    }
}

/// A list written either as a TOML array or as a comma-separated string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ListValue<T> {
    Items(Vec<T>),
    Text(String),
}

impl<T: FromStr> ListValue<T> {
    fn resolve(&self, key: &str) -> Result<Vec<T>>
    where
        T: Clone,
    {
        match self {
            ListValue::Items(v) => Ok(v.clone()),
            ListValue::Text(s) => parse_list(s, key),
        }
    }
}

pub fn parse_list<T: FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {:?}", p.trim())))
        })
        .collect()
}

/// One layer of settings. Every key is optional; later layers override
/// earlier ones. The config file is a flat TOML table of these keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct ConfigLayer {
    pub model: Option<Family>,
    pub p: Option<usize>,
    pub beta0: Option<ListValue<f64>>,
    pub sigma2: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub eps: Option<String>,
    pub burn_in: Option<usize>,
    pub horizon: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoints: Option<ListValue<usize>>,
    pub hessian: Option<HessianVariant>,
    pub aipw: Option<bool>,
    pub ridge: Option<bool>,
    pub value_burn_in: Option<bool>,
    pub level: Option<f64>,
    pub lag: Option<String>,
    pub replay_log: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub alpha_grid: Option<ListValue<f64>>,
    pub loss_bin: Option<usize>,
    pub trace: Option<bool>,
    pub oracle_draws: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copies every key set in `other` over this layer.
    pub fn merge(&mut self, other: &ConfigLayer) {
        overlay!(self, other; model, p, beta0, sigma2, alpha, gamma, eps, burn_in, horizon,
            reps, seed, checkpoints, hessian, aipw, ridge, value_burn_in, level, lag,
            replay_log, out, format, alpha_grid, loss_bin, trace, oracle_draws);
    }
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticConfig,
    pub learning: LearningSchedule,
    pub exploration: ExplorationSchedule,
    pub horizon: usize,
    pub reps: usize,
    pub seed: u64,
    /// Sorted, distinct, within `[1, horizon]`, always ending at `horizon`.
    pub checkpoints: Vec<usize>,
    pub hessian: HessianVariant,
    pub aipw: bool,
    pub ridge: bool,
    pub value_burn_in: bool,
    pub level: f64,
    pub lag: Option<LagSchedule>,
    pub replay_log: Option<PathBuf>,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub alpha_grid: Vec<f64>,
    pub loss_bin: usize,
    pub trace: bool,
    pub oracle_draws: usize,
}

pub const DEFAULT_SEED: u64 = 20_240_601;

/// Default reporting grid `{1e3, 1e4, 1e5}` restricted to `[1, horizon]`,
/// plus the horizon itself.
pub fn default_checkpoints(horizon: usize) -> Vec<usize> {
    let mut cps: Vec<usize> = [1_000, 10_000, 100_000]
        .into_iter()
        .filter(|&t| t <= horizon)
        .collect();
    if cps.last() != Some(&horizon) {
        cps.push(horizon);
    }
    cps
}

impl ExperimentConfig {
    pub fn resolve(layer: &ConfigLayer) -> Result<Self> {
        let family = layer.model.unwrap_or(Family::Linear);
        let standard = SyntheticConfig::standard(family);
        let p = layer.p.unwrap_or(standard.p);
        let beta0 = match &layer.beta0 {
            Some(v) => DVector::from_vec(v.resolve("beta0")?),
            None if p == standard.p => standard.beta0.clone(),
            None => {
                return Err(Error::Config(format!(
                    "beta0 must be given when p = {p} (the default beta0 has p = 3)"
                )))
            }
        };
        let synthetic =
            SyntheticConfig::new(family, p, beta0, layer.sigma2.unwrap_or(standard.sigma2))?;
        let cfg_err = |e: Error| match e {
            Error::Domain(m) => Error::Config(m),
            other => other,
        };
        let learning =
            LearningSchedule::new(layer.alpha.unwrap_or(0.5), layer.gamma.unwrap_or(0.501))
                .map_err(cfg_err)?;
        let kind: ExplorationKind = layer
            .eps
            .as_deref()
            .unwrap_or("fixed:0.2")
            .parse()
            .map_err(cfg_err)?;
        let exploration =
            ExplorationSchedule::new(kind, layer.burn_in.unwrap_or(50)).map_err(cfg_err)?;
        let horizon = layer.horizon.unwrap_or(10_000);
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let reps = layer.reps.unwrap_or(1_000);
        if reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        let mut checkpoints = match &layer.checkpoints {
            Some(v) => v.resolve("checkpoints")?,
            None => default_checkpoints(horizon),
        };
        if let Some(&bad) = checkpoints.iter().find(|&&t| t == 0 || t > horizon) {
            return Err(Error::Config(format!(
                "checkpoint {bad} outside [1, {horizon}]"
            )));
        }
        checkpoints.push(horizon);
        checkpoints.sort_unstable();
        checkpoints.dedup();
        let level = layer.level.unwrap_or(0.95);
        critical_value(level).map_err(cfg_err)?;
        let lag = layer.lag.as_deref().map(str::parse).transpose()?;
        let alpha_grid = match &layer.alpha_grid {
            Some(v) => v.resolve("alpha_grid")?,
            None => vec![0.1, 0.5, 1.0],
        };
        if alpha_grid.is_empty() {
            return Err(Error::Config("alpha_grid must not be empty".into()));
        }
        for &a in &alpha_grid {
            LearningSchedule::new(a, learning.gamma()).map_err(cfg_err)?;
        }
        let oracle_draws = layer.oracle_draws.unwrap_or(1_000_000);
        if oracle_draws == 0 {
            return Err(Error::Config("oracle_draws must be at least 1".into()));
        }
        Ok(ExperimentConfig {
            synthetic,
            learning,
            exploration,
            horizon,
            reps,
            seed: layer.seed.unwrap_or(DEFAULT_SEED),
            checkpoints,
            hessian: layer.hessian.unwrap_or_default(),
            aipw: layer.aipw.unwrap_or(false),
            ridge: layer.ridge.unwrap_or(false),
            value_burn_in: layer.value_burn_in.unwrap_or(true),
            level,
            lag,
            replay_log: layer.replay_log.clone(),
            out: layer.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            format: layer.format.unwrap_or_default(),
            alpha_grid,
            loss_bin: layer.loss_bin.unwrap_or((horizon / 50).max(1)),
            trace: layer.trace.unwrap_or(false),
            oracle_draws,
        })
    }

    /// The standard simulation setting with all defaults.
    pub fn standard(family: Family) -> Self {
        Self::resolve(&ConfigLayer {
            model: Some(family),
            ..Default::default()
        })
        .expect("defaults are valid")
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            learning: self.learning,
            exploration: self.exploration,
            hessian: self.hessian,
            aipw: self.aipw,
            value_includes_burn_in: self.value_burn_in,
            loss_bin: self.loss_bin,
        }
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            level: self.level,
            ridge: self.ridge,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self.checkpoints.retain(|&t| t <= horizon);
        if self.checkpoints.last() != Some(&horizon) {
            self.checkpoints.push(horizon);
        }
        self
    }
}

/// Runs one synthetic stream, seeded for replication `index`.
pub fn run_replication(
    cfg: &ExperimentConfig,
    index: u64,
    observer: Option<&mut dyn StepObserver>,
) -> Result<StreamOutcome> {
    let seed = replication_seed(cfg.seed, index);
    let model = cfg.synthetic.model();
    let env = SyntheticEnv::new(cfg.synthetic.clone(), RngStream::new(seed, ENV_STREAM));
    let mut policy = RngStream::new(seed, POLICY_STREAM);
    let lc = cfg.learner_config();
    match cfg.lag {
        None => {
            let mut env = env;
            run_stream(
                &mut env,
                model,
                &lc,
                &mut policy,
                cfg.horizon,
                &cfg.checkpoints,
                observer,
            )
        }
        Some(lag) => {
            let mut env = Delayed::new(env, lag, RngStream::new(seed, LAG_STREAM))?;
            run_stream_lagged(
                &mut env,
                model,
                &lc,
                &mut policy,
                cfg.horizon,
                &cfg.checkpoints,
                observer,
            )
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleRun {
    pub reports: Vec<InferenceReport>,
    pub summary: TrajectorySummary,
}

fn reports_for(snapshots: &[Snapshot], opts: &ReportOptions) -> Result<Vec<InferenceReport>> {
    snapshots.iter().map(|s| build_report(s, opts)).collect()
}

/// Replication 0 of the configured experiment, with a report at every
/// checkpoint.
pub fn run_single(cfg: &ExperimentConfig) -> Result<SingleRun> {
    let mut trace = if cfg.trace {
        ensure_dir(&cfg.out)?;
        let path = cfg.out.join("trace.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Some(CsvTrace::new(std::io::BufWriter::new(file)))
    } else {
        None
    };
    let outcome = run_replication(cfg, 0, trace.as_mut().map(|t| t as &mut dyn StepObserver))?;
    if let Some(t) = trace {
        use std::io::Write;
        t.into_inner()
            .flush()
            .map_err(|e| Error::io(cfg.out.join("trace.csv"), e))?;
    }
    Ok(SingleRun {
        reports: reports_for(&outcome.snapshots, &cfg.report_options())?,
        summary: outcome.summary,
    })
}

/// Runs the decision loop against a logged trial. The horizon caps the
/// number of matched steps.
pub fn run_replay(cfg: &ExperimentConfig, log: &ReplayLog) -> Result<SingleRun> {
    if log.dim() != cfg.synthetic.p {
        return Err(Error::Config(format!(
            "log has {} feature columns but p = {}",
            log.dim(),
            cfg.synthetic.p
        )));
    }
    let mut env = ReplayEnv::new(log);
    let mut policy = RngStream::new(replication_seed(cfg.seed, 0), POLICY_STREAM);
    let outcome = run_stream(
        &mut env,
        cfg.synthetic.model(),
        &cfg.learner_config(),
        &mut policy,
        cfg.horizon,
        &cfg.checkpoints,
        None,
    )?;
    if outcome.state.t == 0 {
        return Err(Error::Empty);
    }
    Ok(SingleRun {
        reports: reports_for(&outcome.snapshots, &cfg.report_options())?,
        summary: outcome.summary,
    })
}

/// Writes a single run's reports plus `summary.json` under `cfg.out`.
pub fn write_single(cfg: &ExperimentConfig, run: &SingleRun) -> Result<Vec<PathBuf>> {
    let mut paths = emit_reports(&run.reports, cfg.format, &cfg.out)?;
    let path = cfg.out.join("summary.json");
    write_file(&path, &to_json(&run.summary)?)?;
    paths.push(path);
    Ok(paths)
}

/// Per-replication statistics at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub t: usize,
    pub estimates: Vec<f64>,
    /// `None` where the Hessian was singular.
    pub se: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub index: u64,
    pub checkpoints: Vec<CheckpointStats>,
    pub losses: Vec<f64>,
    pub cumulative_reward: f64,
}

fn replication_result(
    cfg: &ExperimentConfig,
    index: u64,
    outcome: &StreamOutcome,
) -> Result<ReplicationResult> {
    let opts = cfg.report_options();
    let checkpoints = outcome
        .snapshots
        .iter()
        .map(|s| {
            let rep = build_report(s, &opts)?;
            Ok(CheckpointStats {
                t: s.t,
                estimates: rep.rows.iter().map(|r| r.estimate).collect(),
                se: rep.rows.iter().map(|r| r.se).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicationResult {
        index,
        checkpoints,
        losses: outcome.summary.losses.bins().to_vec(),
        cumulative_reward: outcome.summary.cumulative_reward,
    })
}

/// Runs replications `indices`, in parallel when `parallel` is set. The
/// output order follows `indices` either way.
pub fn run_replications(
    cfg: &ExperimentConfig,
    indices: Range<u64>,
    parallel: bool,
) -> Vec<Result<ReplicationResult>> {
    let one = |i: u64| {
        let outcome = run_replication(cfg, i, None)?;
        replication_result(cfg, i, &outcome)
    };
    if parallel {
        indices.into_par_iter().map(one).collect()
    } else {
        indices.map(one).collect()
    }
}

/// Names of the summary rows: parameters, the value, and the AIPW value
/// when enabled.
pub fn row_names(cfg: &ExperimentConfig) -> Vec<String> {
    let mut names = parameter_names(cfg.synthetic.p);
    names.push(VALUE_ROW.into());
    if cfg.aipw {
        names.push(AIPW_ROW.into());
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub checkpoint: usize,
    pub name: String,
    /// Mean standard error over the Monte Carlo standard deviation.
    pub ratio: f64,
    pub coverage: f64,
    pub mean_length: f64,
    pub coverage_se: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub rows: Vec<SummaryRow>,
    pub replications: usize,
    pub excluded: usize,
    pub notes: Vec<String>,
    pub truth: Vec<f64>,
}

impl MonteCarloSummary {
    pub fn row(&self, checkpoint: usize, name: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.checkpoint == checkpoint && r.name == name)
    }
}

/// True parameters followed by the oracle value, once per value row.
pub fn truth_vector(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let model = cfg.synthetic.model();
    let mut rng = RngStream::new(cfg.seed, ORACLE_STREAM);
    let p = cfg.synthetic.p;
    let (v, _) = oracle_value(
        &model,
        &cfg.synthetic.beta0,
        cfg.oracle_draws,
        |r| draw_feature(p, r),
        &mut rng,
    )?;
    let mut truth: Vec<f64> = cfg.synthetic.beta0.iter().copied().collect();
    truth.push(v);
    if cfg.aipw {
        truth.push(v);
    }
    Ok(truth)
}

/// Ratio, coverage and mean interval length per row and checkpoint.
/// Failed replications are excluded and counted; replications without a
/// standard error at a checkpoint are left out of that row.
pub fn summarize(
    cfg: &ExperimentConfig,
    results: &[Result<ReplicationResult>],
    truth: &[f64],
) -> Result<MonteCarloSummary> {
    let names = row_names(cfg);
    if truth.len() != names.len() {
        return Err(Error::Dimension {
            expected: names.len(),
            got: truth.len(),
        });
    }
    let z = critical_value(cfg.level)?;
    let ok: Vec<&ReplicationResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let excluded = results.len() - ok.len();
    let mut notes: Vec<String> = results
        .iter()
        .filter_map(|r| r.as_ref().err().map(|e| format!("replication failed: {e}")))
        .collect();
    let mut checkpoints: Vec<usize> = ok
        .iter()
        .flat_map(|r| r.checkpoints.iter().map(|c| c.t))
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let mut rows = Vec::new();
    for &t in &checkpoints {
        for (j, name) in names.iter().enumerate() {
            let pairs: Vec<(f64, f64)> = ok
                .iter()
                .filter_map(|r| r.checkpoints.iter().find(|c| c.t == t))
                .filter_map(|c| Some((*c.estimates.get(j)?, (*c.se.get(j)?)?)))
                .collect();
            let n = pairs.len();
            if n == 0 {
                notes.push(format!("no usable replications for {name} at t={t}"));
                continue;
            }
            let nf = n as f64;
            let mean_est = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
            let sd = if n > 1 {
                (pairs.iter().map(|p| (p.0 - mean_est).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            let mean_se = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
            let covered = pairs
                .iter()
                .filter(|(e, s)| (e - truth[j]).abs() <= z * s)
                .count() as f64
                / nf;
            rows.push(SummaryRow {
                checkpoint: t,
                name: name.clone(),
                ratio: mean_se / sd,
                coverage: covered,
                mean_length: 2.0 * z * mean_se,
                coverage_se: (covered * (1.0 - covered) / nf).sqrt(),
                n_used: n,
            });
        }
    }
    if excluded > 0 {
        notes.insert(0, format!("{excluded} replications excluded"));
    }
    Ok(MonteCarloSummary {
        rows,
        replications: results.len(),
        excluded,
        notes,
        truth: truth.to_vec(),
    })
}

pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<MonteCarloSummary> {
    if cfg.reps < 2 {
        return Err(Error::Config("Monte Carlo needs reps >= 2".into()));
    }
    let truth = truth_vector(cfg)?;
    let results = run_replications(cfg, 0..cfg.reps as u64, true);
    summarize(cfg, &results, &truth)
}

pub const SUMMARY_COLUMNS: [&str; 7] =
    ["checkpoint", "name", "R", "C", "L", "coverage_se", "n_used"];

pub fn write_monte_carlo(cfg: &ExperimentConfig, summary: &MonteCarloSummary) -> Result<PathBuf> {
    use crate::report::sig6;
    ensure_dir(&cfg.out)?;
    match cfg.format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let err = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
            w.write_record(SUMMARY_COLUMNS).map_err(err)?;
            for r in &summary.rows {
                w.write_record([
                    r.checkpoint.to_string(),
                    r.name.clone(),
                    sig6(r.ratio),
                    sig6(r.coverage),
                    sig6(r.mean_length),
                    sig6(r.coverage_se),
                    r.n_used.to_string(),
                ])
                .map_err(err)?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Numeric(format!("csv write: {e}")))?;
            let path = cfg.out.join("mc_summary.csv");
            write_file(&path, &bytes)?;
            if !summary.notes.is_empty() {
                write_file(
                    &cfg.out.join("mc_notes.txt"),
                    (summary.notes.join("\n") + "\n").as_bytes(),
                )?;
            }
            Ok(path)
        }
        OutputFormat::Json => {
            let path = cfg.out.join("mc_summary.json");
            write_file(&path, &to_json(summary)?)?;
            Ok(path)
        }
    }
}

/// Mean binned loss trajectory for one learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub alpha: f64,
    /// Update count at the end of each bin.
    pub bin_end: Vec<usize>,
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    pub n_used: usize,
}

impl LossCurve {
    /// Mean loss over the last bin, averaged across replications.
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub curves: Vec<LossCurve>,
    pub best_alpha: f64,
    pub excluded: usize,
}

/// Linear-interpolation quantile of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// For each learning rate in the grid, runs `cfg.reps` replications with
/// the same seeds and records binned mean losses. The best rate has the
/// smallest final mean loss.
pub fn tune_alpha(cfg: &ExperimentConfig) -> Result<TuneResult> {
    if cfg.loss_bin == 0 || cfg.loss_bin > cfg.horizon {
        return Err(Error::Config(format!(
            "loss_bin must lie in [1, {}]",
            cfg.horizon
        )));
    }
    let mut curves = Vec::new();
    let mut excluded = 0;
    for &alpha in &cfg.alpha_grid {
        let mut c = cfg.clone();
        c.learning = LearningSchedule::new(alpha, cfg.learning.gamma())?;
        c.checkpoints = vec![cfg.horizon];
        let results = run_replications(&c, 0..cfg.reps as u64, true);
        let ok: Vec<Vec<f64>> = results
            .into_iter()
            .filter_map(|r| r.ok().map(|r| r.losses))
            .collect();
        excluded += cfg.reps - ok.len();
        let nbins = ok.iter().map(Vec::len).min().unwrap_or(0);
        let mut curve = LossCurve {
            alpha,
            bin_end: (1..=nbins).map(|k| k * cfg.loss_bin).collect(),
            mean: Vec::with_capacity(nbins),
            q05: Vec::with_capacity(nbins),
            q95: Vec::with_capacity(nbins),
            n_used: ok.len(),
        };
        for k in 0..nbins {
            let mut col: Vec<f64> = ok.iter().map(|l| l[k]).collect();
            curve.mean.push(col.iter().sum::<f64>() / col.len() as f64);
            col.sort_by(f64::total_cmp);
            curve.q05.push(quantile_sorted(&col, 0.05));
            curve.q95.push(quantile_sorted(&col, 0.95));
        }
        curves.push(curve);
    }
    let best_alpha = curves
        .iter()
        .filter(|c| c.final_mean().is_finite())
        .min_by(|a, b| a.final_mean().total_cmp(&b.final_mean()))
        .map(|c| c.alpha)
        .ok_or_else(|| Error::Numeric("no learning rate produced a finite loss".into()))?;
    Ok(TuneResult {
        curves,
        best_alpha,
        excluded,
    })
}

pub fn write_tune(cfg: &ExperimentConfig, result: &TuneResult) -> Result<Vec<PathBuf>> {
    use crate::report::sig6;
    ensure_dir(&cfg.out)?;
    match cfg.format {
        OutputFormat::Csv => {
            let err = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["alpha", "bin_end", "mean_loss", "q05", "q95"])
                .map_err(err)?;
            for c in &result.curves {
                for k in 0..c.mean.len() {
                    w.write_record([
                        c.alpha.to_string(),
                        c.bin_end[k].to_string(),
                        sig6(c.mean[k]),
                        sig6(c.q05[k]),
                        sig6(c.q95[k]),
                    ])
                    .map_err(err)?;
                }
            }
            let curves = cfg.out.join("alpha_loss.csv");
            write_file(
                &curves,
                &w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?,
            )?;
            let mut s = csv::Writer::from_writer(Vec::new());
            s.write_record(["alpha", "final_mean_loss", "n_used", "best"])
                .map_err(err)?;
            for c in &result.curves {
                s.write_record([
                    c.alpha.to_string(),
                    sig6(c.final_mean()),
                    c.n_used.to_string(),
                    (c.alpha == result.best_alpha).to_string(),
                ])
                .map_err(err)?;
            }
            let summary = cfg.out.join("alpha_summary.csv");
            write_file(
                &summary,
                &s.into_inner().map_err(|e| Error::Numeric(e.to_string()))?,
            )?;
            Ok(vec![curves, summary])
        }
        OutputFormat::Json => {
            let path = cfg.out.join("alpha_tuning.json");
            write_file(&path, &to_json(result)?)?;
            Ok(vec![path])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(family: Family) -> ExperimentConfig {
        ExperimentConfig::resolve(&ConfigLayer {
            model: Some(family),
            horizon: Some(2_000),
            reps: Some(8),
            oracle_draws: Some(10_000),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::standard(Family::Linear);
        assert_eq!(cfg.horizon, 10_000);
        assert_eq!(cfg.checkpoints, vec![1_000, 10_000]);
        assert_eq!(cfg.exploration.burn_in(), 50);
        assert_eq!(cfg.learning.gamma(), 0.501);
        assert_eq!(cfg.reps, 1_000);
        assert_eq!(default_checkpoints(500), vec![500]);
        assert_eq!(default_checkpoints(100_000), vec![1_000, 10_000, 100_000]);
    }

    #[test]
    fn toml_layers_merge() {
        let file = ConfigLayer::from_toml(
            "model = \"logistic\"\nbeta0 = \"0.1, 0.2, 0.3, 0.4\"\np = 2\neps = \"decay:0.3,0.1\"\ncheckpoints = [10, 20]\nhorizon = 30\n",
        )
        .unwrap();
        let mut layer = file.clone();
        layer.merge(&ConfigLayer {
            horizon: Some(40),
            ..Default::default()
        });
        let cfg = ExperimentConfig::resolve(&layer).unwrap();
        assert_eq!(cfg.synthetic.family, Family::Logistic);
        assert_eq!(cfg.synthetic.beta0.as_slice(), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(cfg.checkpoints, vec![10, 20, 40]);
        assert!(matches!(
            cfg.exploration.kind(),
            ExplorationKind::Decaying { .. }
        ));
        assert!(ConfigLayer::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn invalid_configs() {
        let bad = |layer: ConfigLayer| {
            assert!(matches!(
                ExperimentConfig::resolve(&layer),
                Err(Error::Config(_))
            ))
        };
        bad(ConfigLayer {
            reps: Some(0),
            ..Default::default()
        });
        bad(ConfigLayer {
            horizon: Some(0),
            ..Default::default()
        });
        bad(ConfigLayer {
            checkpoints: Some(ListValue::Items(vec![20_000])),
            ..Default::default()
        });
        bad(ConfigLayer {
            p: Some(4),
            ..Default::default()
        });
        bad(ConfigLayer {
            gamma: Some(1.0),
            ..Default::default()
        });
        bad(ConfigLayer {
            eps: Some("fixed:0".into()),
            ..Default::default()
        });
        bad(ConfigLayer {
            lag: Some("geom:2".into()),
            ..Default::default()
        });
        bad(ConfigLayer {
            alpha_grid: Some(ListValue::Items(vec![])),
            ..Default::default()
        });
    }

    #[test]
    fn single_run_is_deterministic() {
        let cfg = small(Family::Linear);
        let a = run_single(&cfg).unwrap();
        let b = run_single(&cfg).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.reports.len(), 2);
        assert_eq!(a.reports[1].t, 2_000);
    }

    #[test]
    fn horizon_one_does_not_crash() {
        let cfg = small(Family::Logistic).with_horizon(1);
        let run = run_single(&cfg).unwrap();
        assert_eq!(run.reports.len(), 1);
        assert!(!run.reports[0].flags.is_empty());
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = small(Family::Logistic);
        let par = run_replications(&cfg, 0..4, true);
        let ser = run_replications(&cfg, 0..4, false);
        for (a, b) in par.iter().zip(&ser) {
            assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
        }
    }

    #[test]
    fn summary_is_permutation_invariant() {
        let cfg = small(Family::Linear);
        let truth = truth_vector(&cfg).unwrap();
        let mut results = run_replications(&cfg, 0..6, false);
        let fwd = summarize(&cfg, &results, &truth).unwrap();
        results.reverse();
        let rev = summarize(&cfg, &results, &truth).unwrap();
        for (a, b) in fwd.rows.iter().zip(&rev.rows) {
            assert_eq!((a.coverage, a.n_used), (b.coverage, b.n_used));
            assert!((a.ratio - b.ratio).abs() <= 1e-10 * a.ratio.abs());
            assert!((a.mean_length - b.mean_length).abs() <= 1e-10 * a.mean_length);
        }
    }

    #[test]
    fn failures_are_counted() {
        let cfg = small(Family::Linear);
        let truth = truth_vector(&cfg).unwrap();
        let mut results = run_replications(&cfg, 0..3, false);
        results.push(Err(Error::Numeric("synthetic failure".into())));
        let s = summarize(&cfg, &results, &truth).unwrap();
        assert_eq!((s.replications, s.excluded), (4, 1));
        assert!(s.rows.iter().all(|r| r.n_used == 3));
        assert!(s.notes[0].contains("1 replications excluded"));
    }

    #[test]
    fn noiseless_summary_well_formed() {
        let mut cfg = small(Family::Linear);
        cfg.synthetic.sigma2 = 0.0;
        cfg.reps = 4;
        let s = run_monte_carlo(&cfg).unwrap();
        assert!(s
            .rows
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.coverage) && r.mean_length >= 0.0));
    }

    #[test]
    fn single_point_grid() {
        let mut cfg = small(Family::Linear);
        cfg.alpha_grid = vec![0.7];
        cfg.reps = 3;
        let r = tune_alpha(&cfg).unwrap();
        assert_eq!(r.best_alpha, 0.7);
        assert_eq!(r.curves[0].mean.len(), 50);
    }

    #[test]
    fn noiseless_losses_decrease() {
        let mut cfg = small(Family::Linear);
        cfg.synthetic.sigma2 = 0.0;
        cfg = cfg.with_horizon(20_000);
        cfg.loss_bin = 2_000;
        cfg.reps = 3;
        let r = tune_alpha(&cfg).unwrap();
        for c in &r.curves {
            assert!(
                c.final_mean() < 0.05 * c.mean[0],
                "alpha {}: {:?}",
                c.alpha,
                c.mean
            );
        }
    }

    #[test]
    fn quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 3.0);
        assert_eq!(quantile_sorted(&xs, 0.05), 1.2);
        assert_eq!(quantile_sorted(&xs, 1.0), 5.0);
    }

    #[test]
    fn lag_parsing() {
        assert_eq!(
            "const:3".parse::<LagSchedule>().unwrap(),
            LagSchedule::Constant(3)
        );
        assert_eq!(
            "geom:0.5".parse::<LagSchedule>().unwrap(),
            LagSchedule::Geometric(0.5)
        );
        assert!("poisson:1".parse::<LagSchedule>().is_err());
    }
}
