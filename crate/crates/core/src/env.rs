//! Observation sources: synthetic generators, lagged delivery, and offline
//! replay of logged randomized data.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{Family, ModelFamily, RewardModel};
use crate::rng::RngStream;
use crate::types::{Action, Observation};

/// A source of contexts and rewards for the online loop.
pub trait Environment {
    fn dim(&self) -> usize;

    /// Next context, or `None` once the source is exhausted.
    fn next_context(&mut self) -> Result<Option<DVector<f64>>>;

    /// Reward for `action` on the most recent context. `None` means the
    /// environment discarded the step.
    fn respond(&mut self, action: Action) -> Result<Option<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardArrival {
    pub step: usize,
    pub reward: f64,
}

/// An environment whose rewards arrive some steps after the action.
pub trait LaggedEnvironment {
    fn dim(&self) -> usize;

    fn next_context(&mut self) -> Result<Option<DVector<f64>>>;

    /// Takes `action` for decision `step` on the most recent context.
    fn act(&mut self, step: usize, action: Action) -> Result<()>;

    /// Rewards available before decision `now`, in step order. Each reward
    /// is returned once.
    fn arrivals(&mut self, now: usize) -> Result<Vec<RewardArrival>>;
}

/// Data-generating process for the simulation studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub family: Family,
    pub p: usize,
    pub beta0: DVector<f64>,
    /// Noise variance, used by the linear family only.
    pub sigma2: f64,
}

impl SyntheticConfig {
    pub fn new(family: Family, p: usize, beta0: DVector<f64>, sigma2: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("p must be at least 1".into()));
        }
        if beta0.len() != 2 * p {
            return Err(Error::Config(format!(
                "beta0 must have length 2p = {}, got {}",
                2 * p,
                beta0.len()
            )));
        }
        if beta0.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("beta0 must be finite".into()));
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::Config(format!(
                "sigma2 must be non-negative, got {sigma2}"
            )));
        }
        Ok(SyntheticConfig {
            family,
            p,
            beta0,
            sigma2,
        })
    }

    /// `p = 3`, `beta0 = (0.3, -0.1, 0.7, 0.8, 0.5, -0.4)`, `sigma2 = 0.01`.
    pub fn standard(family: Family) -> Self {
        SyntheticConfig {
            family,
            p: 3,
            beta0: DVector::from_vec(vec![0.3, -0.1, 0.7, 0.8, 0.5, -0.4]),
            sigma2: 0.01,
        }
    }

    pub fn model(&self) -> ModelFamily {
        ModelFamily::new(self.family, self.p)
    }
}

/// Intercept followed by `p - 1` independent standard normals.
pub fn draw_feature(p: usize, rng: &mut RngStream) -> DVector<f64> {
    DVector::from_fn(p, |i, _| if i == 0 { 1.0 } else { rng.standard_normal() })
}

/// Linear: mean plus `N(0, sigma2)` noise. Logistic: Bernoulli of the mean.
pub fn draw_reward(
    config: &SyntheticConfig,
    x: &DVector<f64>,
    a: Action,
    rng: &mut RngStream,
) -> Result<f64> {
    check_dim(config.p, x.len())?;
    let mu = config.model().mean_reward(a, x, &config.beta0)?;
    Ok(match config.family {
        Family::Linear => {
            if config.sigma2 == 0.0 {
                mu
            } else {
                mu + config.sigma2.sqrt() * rng.standard_normal()
            }
        }
        Family::Logistic => {
            if rng.uniform() < mu {
                1.0
            } else {
                0.0
            }
        }
    })
}

/// Endless i.i.d. stream drawn from one random stream.
#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    config: SyntheticConfig,
    rng: RngStream,
    current: Option<DVector<f64>>,
}

impl SyntheticEnv {
    pub fn new(config: SyntheticConfig, rng: RngStream) -> Self {
        SyntheticEnv {
            config,
            rng,
            current: None,
        }
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }
}

impl Environment for SyntheticEnv {
    fn dim(&self) -> usize {
        self.config.p
    }

    fn next_context(&mut self) -> Result<Option<DVector<f64>>> {
        let x = draw_feature(self.config.p, &mut self.rng);
        self.current = Some(x.clone());
        Ok(Some(x))
    }

    fn respond(&mut self, action: Action) -> Result<Option<f64>> {
        let x = self
            .current
            .take()
            .ok_or_else(|| Error::Protocol("respond called without a pending context".into()))?;
        draw_reward(&self.config, &x, action, &mut self.rng).map(Some)
    }
}

/// Delay, in decision steps, between an action and its reward. A lag of 0
/// delivers the reward before the next decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LagSchedule {
    Constant(usize),
    /// Lag drawn i.i.d. from the geometric law on `{0, 1, ...}` with
    /// success probability `p`, mean `(1 - p) / p`.
    Geometric(f64),
}

impl LagSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LagSchedule::Constant(_) => Ok(()),
            LagSchedule::Geometric(p) if p > 0.0 && p <= 1.0 => Ok(()),
            LagSchedule::Geometric(p) => Err(Error::Config(format!(
                "geometric lag probability must lie in (0, 1], got {p}"
            ))),
        }
    }
}

/// Wraps an environment and holds each reward back according to a
/// [`LagSchedule`]. Deliveries stay in step order: a reward is never
/// released before the reward of an earlier step.
#[derive(Debug, Clone)]
pub struct Delayed<E> {
    inner: E,
    lag: LagSchedule,
    geometric: Option<Geometric>,
    rng: RngStream,
    queue: VecDeque<(usize, RewardArrival)>,
    last_due: usize,
}

impl<E: Environment> Delayed<E> {
    pub fn new(inner: E, lag: LagSchedule, rng: RngStream) -> Result<Self> {
        lag.validate()?;
        let geometric = match lag {
            LagSchedule::Geometric(p) => {
                Some(Geometric::new(p).map_err(|e| Error::Config(format!("geometric lag: {e}")))?)
            }
            LagSchedule::Constant(_) => None,
        };
        Ok(Delayed {
            inner,
            lag,
            geometric,
            rng,
            queue: VecDeque::new(),
            last_due: 0,
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Rewards drawn but not yet delivered.
    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    fn draw_lag(&mut self) -> usize {
        match (self.lag, &self.geometric) {
            (LagSchedule::Constant(s), _) => s,
            (LagSchedule::Geometric(_), Some(g)) => g.sample(&mut self.rng) as usize,
            (LagSchedule::Geometric(_), None) => unreachable!("geometric law built in new"),
        }
    }
}

impl<E: Environment> LaggedEnvironment for Delayed<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn next_context(&mut self) -> Result<Option<DVector<f64>>> {
        self.inner.next_context()
    }

    fn act(&mut self, step: usize, action: Action) -> Result<()> {
        let reward = self.inner.respond(action)?.ok_or_else(|| {
            Error::Protocol("delayed delivery needs an environment that answers every step".into())
        })?;
        let due = (step + self.draw_lag()).max(self.last_due);
        self.last_due = due;
        self.queue.push_back((due, RewardArrival { step, reward }));
        Ok(())
    }

    fn arrivals(&mut self, now: usize) -> Result<Vec<RewardArrival>> {
        let mut out = Vec::new();
        while let Some(&(due, arrival)) = self.queue.front() {
            if due >= now {
                break;
            }
            out.push(arrival);
            self.queue.pop_front();
        }
        Ok(out)
    }
}

/// One record of a logged randomized trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLogEntry {
    pub x: DVector<f64>,
    pub action: Action,
    pub reward: f64,
    pub propensity: f64,
}

/// A parsed replay log; read-only and shareable between cursors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    p: usize,
    entries: Vec<ReplayLogEntry>,
}

impl ReplayLog {
    pub fn new(p: usize, entries: Vec<ReplayLogEntry>) -> Result<Self> {
        for e in &entries {
            check_dim(p, e.x.len())?;
        }
        Ok(ReplayLog { p, entries })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn entries(&self) -> &[ReplayLogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cursor(&self) -> ReplayCursor<'_> {
        ReplayCursor {
            log: self,
            pos: 0,
            matched: 0,
            skipped: 0,
        }
    }

    /// Writes the log under the `x1..xp,action,reward,propensity` schema.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.p).map(|j| format!("x{j}")).collect();
        header.extend(["action", "reward", "propensity"].map(String::from));
        let csv_err = |e: csv::Error| Error::Numeric(format!("csv write: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for e in &self.entries {
            let mut row: Vec<String> = e.x.iter().map(|v| v.to_string()).collect();
            row.push(e.action.index().to_string());
            row.push(e.reward.to_string());
            row.push(e.propensity.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("replay log", e))
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses a replay log. The header must read `x1,...,xp,action,reward`
/// with an optional trailing `propensity` column (default 0.5). Line
/// numbers in errors count the header as line 1.
pub fn parse_replay_log<R: Read>(input: R) -> Result<ReplayLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_prop = cols.last() == Some(&"propensity");
    let p = cols.len().saturating_sub(if has_prop { 3 } else { 2 });
    if p == 0 {
        return Err(parse_err(
            1,
            "header needs x1..xp, action and reward columns",
        ));
    }
    for (j, c) in cols[..p].iter().enumerate() {
        if *c != format!("x{}", j + 1) {
            return Err(parse_err(
                1,
                format!("expected column x{}, found {c:?}", j + 1),
            ));
        }
    }
    if cols[p] != "action" || cols[p + 1] != "reward" {
        return Err(parse_err(
            1,
            format!("expected action,reward after x{p}, found {:?}", &cols[p..]),
        ));
    }

    let mut entries = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != cols.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", cols.len(), rec.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = rec[k].parse().map_err(|_| {
                parse_err(line, format!("{}: not a number: {:?}", cols[k], &rec[k]))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("{}: not finite", cols[k])))
            }
        };
        let x = DVector::from_iterator(p, (0..p).map(num).collect::<Result<Vec<_>>>()?);
        let action = match &rec[p] {
            "0" => Action::Zero,
            "1" => Action::One,
            other => {
                return Err(parse_err(
                    line,
                    format!("action must be 0 or 1, got {other:?}"),
                ))
            }
        };
        let reward = num(p + 1)?;
        let propensity = if has_prop { num(p + 2)? } else { 0.5 };
        if !(propensity > 0.0 && propensity < 1.0) {
            return Err(parse_err(
                line,
                format!("propensity must lie in (0, 1), got {propensity}"),
            ));
        }
        entries.push(ReplayLogEntry {
            x,
            action,
            reward,
            propensity,
        });
    }
    Ok(ReplayLog { p, entries })
}

pub fn load_replay_log(path: impl AsRef<Path>) -> Result<ReplayLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_replay_log(file)
}

/// Simulates a log in which every action was chosen by a fair coin.
pub fn simulate_uniform_log(
    config: &SyntheticConfig,
    n: usize,
    rng: &mut RngStream,
) -> Result<ReplayLog> {
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let x = draw_feature(config.p, rng);
        let action = Action::from(rng.uniform() < 0.5);
        let reward = draw_reward(config, &x, action, rng)?;
        entries.push(ReplayLogEntry {
            x,
            action,
            reward,
            propensity: 0.5,
        });
    }
    ReplayLog::new(config.p, entries)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayOutcome {
    /// The proposal matched the logged action; the entry's reward is kept.
    Matched(Observation),
    /// The proposal disagreed with the log; the entry is dropped.
    Skipped,
    Exhausted,
}

/// Position in a [`ReplayLog`]. Each entry is consumed at most once.
#[derive(Debug, Clone)]
pub struct ReplayCursor<'a> {
    log: &'a ReplayLog,
    pos: usize,
    matched: usize,
    skipped: usize,
}

impl<'a> ReplayCursor<'a> {
    /// The entry the next [`replay_step`] will consume.
    pub fn peek(&self) -> Option<&'a ReplayLogEntry> {
        self.log.entries.get(self.pos)
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn matched(&self) -> usize {
        self.matched
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos >= self.log.entries.len()
    }
}

/// Consumes one entry against `proposed`.
pub fn replay_step(cursor: &mut ReplayCursor<'_>, proposed: Action) -> ReplayOutcome {
    let Some(entry) = cursor.peek() else {
        return ReplayOutcome::Exhausted;
    };
    cursor.pos += 1;
    if entry.action == proposed {
        cursor.matched += 1;
        ReplayOutcome::Matched(Observation {
            x: entry.x.clone(),
            a: proposed,
            y: entry.reward,
        })
    } else {
        cursor.skipped += 1;
        ReplayOutcome::Skipped
    }
}

/// Replays a log as an [`Environment`]: contexts come from the log in
/// order and mismatched decisions are discarded.
#[derive(Debug, Clone)]
pub struct ReplayEnv<'a> {
    cursor: ReplayCursor<'a>,
    awaiting: bool,
}

impl<'a> ReplayEnv<'a> {
    pub fn new(log: &'a ReplayLog) -> Self {
        ReplayEnv {
            cursor: log.cursor(),
            awaiting: false,
        }
    }

    pub fn cursor(&self) -> &ReplayCursor<'a> {
        &self.cursor
    }
}

impl Environment for ReplayEnv<'_> {
    fn dim(&self) -> usize {
        self.cursor.log.p
    }

    fn next_context(&mut self) -> Result<Option<DVector<f64>>> {
        if self.awaiting {
            return Err(Error::Protocol(
                "previous context was never answered".into(),
            ));
        }
        Ok(self.cursor.peek().map(|e| {
            self.awaiting = true;
            e.x.clone()
        }))
    }

    fn respond(&mut self, action: Action) -> Result<Option<f64>> {
        if !self.awaiting {
            return Err(Error::Protocol(
                "respond called without a pending context".into(),
            ));
        }
        self.awaiting = false;
        match replay_step(&mut self.cursor, action) {
            ReplayOutcome::Matched(obs) => Ok(Some(obs.y)),
            ReplayOutcome::Skipped => Ok(None),
            ReplayOutcome::Exhausted => Err(Error::Protocol("log exhausted mid-step".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn feature_moments() {
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| draw_feature(3, &mut rng)).collect();
        assert!(draws.iter().all(|x| x[0] == 1.0));
        let (m2, _) = mean_var(&draws.iter().map(|x| x[1]).collect::<Vec<_>>());
        assert!(m2.abs() < 4.0 / (n as f64).sqrt());
        let (_, v3) = mean_var(&draws.iter().map(|x| x[2]).collect::<Vec<_>>());
        assert!((v3 - 1.0).abs() < 0.05);
    }

    #[test]
    fn reward_laws() {
        let x = DVector::from_vec(vec![1.0, 0.4, -1.2]);
        let mut rng = RngStream::new(5, 0);

        let mut quiet = SyntheticConfig::standard(Family::Linear);
        quiet.sigma2 = 0.0;
        let mu = quiet
            .model()
            .mean_reward(Action::One, &x, &quiet.beta0)
            .unwrap();
        assert_eq!(draw_reward(&quiet, &x, Action::One, &mut rng).unwrap(), mu);

        let lin = SyntheticConfig::standard(Family::Linear);
        let ys: Vec<f64> = (0..100_000)
            .map(|_| draw_reward(&lin, &x, Action::Zero, &mut rng).unwrap())
            .collect();
        let (_, var) = mean_var(&ys);
        assert!((var / 0.01 - 1.0).abs() < 0.05, "variance {var}");

        let logit = SyntheticConfig::standard(Family::Logistic);
        let mu = logit
            .model()
            .mean_reward(Action::One, &x, &logit.beta0)
            .unwrap();
        let n = 100_000;
        let ys: Vec<f64> = (0..n)
            .map(|_| draw_reward(&logit, &x, Action::One, &mut rng).unwrap())
            .collect();
        assert!(ys.iter().all(|&y| y == 0.0 || y == 1.0));
        let mean = ys.iter().sum::<f64>() / n as f64;
        let se = (mu * (1.0 - mu) / n as f64).sqrt();
        assert!((mean - mu).abs() < 4.0 * se);
    }

    #[test]
    fn synthetic_streams_reproduce() {
        let cfg = SyntheticConfig::standard(Family::Logistic);
        let run = || {
            let mut env = SyntheticEnv::new(cfg.clone(), RngStream::new(8, 0));
            (0..50)
                .map(|i| {
                    let x = env.next_context().unwrap().unwrap();
                    let y = env.respond(Action::from(i % 2 == 0)).unwrap().unwrap();
                    (x, y)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        let b = DVector::from_vec(vec![0.0; 4]);
        assert!(SyntheticConfig::new(Family::Linear, 3, b.clone(), 0.01).is_err());
        assert!(SyntheticConfig::new(Family::Linear, 2, b.clone(), -1.0).is_err());
        assert!(SyntheticConfig::new(Family::Linear, 2, b, 0.0).is_ok());
    }

    const FIXTURE: &str =
        "x1,x2,action,reward,propensity\n1,0.25,1,0.5,0.5\n1,-1.5,0,1,0.3\n1,2,1,0,0.9\n";

    #[test]
    fn parse_fixture_round_trip() {
        let log = parse_replay_log(FIXTURE.as_bytes()).unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.dim(), 2);
        let e = &log.entries()[1];
        assert_eq!(e.x.as_slice(), &[1.0, -1.5]);
        assert_eq!((e.action, e.reward, e.propensity), (Action::Zero, 1.0, 0.3));
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(parse_replay_log(buf.as_slice()).unwrap(), log);
    }

    #[test]
    fn parse_defaults_and_errors() {
        let log = parse_replay_log("x1,action,reward\n1,0,0.2\n".as_bytes()).unwrap();
        assert_eq!(log.entries()[0].propensity, 0.5);
        assert!(parse_replay_log("x1,action,reward\n".as_bytes())
            .unwrap()
            .is_empty());

        let bad_action = "x1,action,reward\n1,0,0.2\n1,2,0.1\n";
        match parse_replay_log(bad_action.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad_prop = "x1,action,reward,propensity\n1,0,0.2,1.0\n";
        assert!(matches!(
            parse_replay_log(bad_prop.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_replay_log("x1,reward\n1,0\n".as_bytes()).is_err());
        assert!(parse_replay_log("x2,action,reward\n1,0,0\n".as_bytes()).is_err());
        assert!(parse_replay_log("x1,action,reward\n1,1\n".as_bytes()).is_err());
        assert!(parse_replay_log("x1,action,reward\nfoo,1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn replay_match_and_drop() {
        let log = parse_replay_log(FIXTURE.as_bytes()).unwrap();
        let mut cur = log.cursor();
        match replay_step(&mut cur, Action::One) {
            ReplayOutcome::Matched(o) => assert_eq!(o.y, 0.5),
            other => panic!("{other:?}"),
        }
        assert_eq!(replay_step(&mut cur, Action::One), ReplayOutcome::Skipped);
        assert_eq!(cur.position(), 2);
        replay_step(&mut cur, Action::Zero);
        assert_eq!(
            replay_step(&mut cur, Action::Zero),
            ReplayOutcome::Exhausted
        );
        assert_eq!(cur.matched() + cur.skipped(), log.len());
    }

    #[test]
    fn uniform_log_matches_half() {
        let cfg = SyntheticConfig::standard(Family::Linear);
        let mut rng = RngStream::new(1, 0);
        let log = simulate_uniform_log(&cfg, 100_000, &mut rng).unwrap();
        let mut cur = log.cursor();
        let mut policy = RngStream::new(2, 1);
        while !cur.is_exhausted() {
            let proposal = Action::from(policy.uniform() < 0.8);
            replay_step(&mut cur, proposal);
        }
        let n = log.len() as f64;
        let frac = cur.matched() as f64 / n;
        assert!((frac - 0.5).abs() < 4.0 * (0.25 / n).sqrt(), "{frac}");
    }

    #[test]
    fn replay_env_protocol() {
        let log = parse_replay_log(FIXTURE.as_bytes()).unwrap();
        let mut env = ReplayEnv::new(&log);
        assert!(env.respond(Action::One).is_err());
        env.next_context().unwrap();
        assert!(env.next_context().is_err());
        assert_eq!(env.respond(Action::One).unwrap(), Some(0.5));
        env.next_context().unwrap();
        assert_eq!(env.respond(Action::One).unwrap(), None);
        env.next_context().unwrap();
        env.respond(Action::One).unwrap();
        assert_eq!(env.next_context().unwrap(), None);
    }

    #[test]
    fn delayed_delivery_stays_ordered() {
        let cfg = SyntheticConfig::standard(Family::Linear);
        let inner = SyntheticEnv::new(cfg, RngStream::new(3, 0));
        let mut env =
            Delayed::new(inner, LagSchedule::Geometric(0.3), RngStream::new(3, 2)).unwrap();
        let mut seen = Vec::new();
        for t in 1..=500 {
            seen.extend(env.arrivals(t).unwrap().iter().map(|a| a.step));
            env.next_context().unwrap();
            env.act(t, Action::One).unwrap();
        }
        seen.extend(env.arrivals(usize::MAX).unwrap().iter().map(|a| a.step));
        assert_eq!(seen, (1..=500).collect::<Vec<_>>());
        assert!(Delayed::new(
            SyntheticEnv::new(
                SyntheticConfig::standard(Family::Linear),
                RngStream::new(0, 0)
            ),
            LagSchedule::Geometric(0.0),
            RngStream::new(0, 2)
        )
        .is_err());
    }

    #[test]
    fn constant_lag_timing() {
        let cfg = SyntheticConfig::standard(Family::Linear);
        let inner = SyntheticEnv::new(cfg, RngStream::new(3, 0));
        let mut env = Delayed::new(inner, LagSchedule::Constant(2), RngStream::new(3, 2)).unwrap();
        env.next_context().unwrap();
        env.act(1, Action::Zero).unwrap();
        assert!(env.arrivals(2).unwrap().is_empty());
        assert!(env.arrivals(3).unwrap().is_empty());
        assert_eq!(env.arrivals(4).unwrap()[0].step, 1);
    }
}
