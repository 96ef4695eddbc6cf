//! The online decision loop: epsilon-greedy sampling, IPW-weighted SGD with
//! iterate averaging, and the lagged-reward variant.
//!
//! [`Learner`] holds everything one stream needs and exposes the loop as two
//! calls, [`Learner::decide`] and [`Learner::update`]. The `run_*` drivers
//! wire a learner to an [`Environment`].

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, LaggedEnvironment};
use crate::error::{check_dim, Error, Result};
use crate::inference::PluginAccumulators;
use crate::model::{HessianVariant, RewardModel};
use crate::policy::{greedy_propensity, sample_action};
use crate::rng::RngStream;
use crate::types::{
    decide_optimal, Action, ExplorationSchedule, LearningSchedule, Observation, ParameterState,
};
use crate::value::ValueAccumulator;

/// Importance weight that moves the sampled action to a fair coin:
/// `1/(2 pi)` for action 1, `1/(2 (1 - pi))` for action 0.
pub fn ipw_weight(a: Action, pi: f64) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::domain(format!(
            "propensity must lie in (0, 1), got {pi}"
        )));
    }
    Ok(match a {
        Action::One => 0.5 / pi,
        Action::Zero => 0.5 / (1.0 - pi),
    })
}

/// Loss gradient reweighted by [`ipw_weight`].
pub fn ipw_gradient<M: RewardModel + ?Sized>(
    model: &M,
    beta: &DVector<f64>,
    obs: &Observation,
    pi: f64,
) -> Result<DVector<f64>> {
    let w = ipw_weight(obs.a, pi)?;
    let mut g = model.loss_gradient(beta, obs)?;
    g *= w;
    Ok(g)
}

fn sgd_step_in_place<M: RewardModel + ?Sized>(
    state: &mut ParameterState,
    model: &M,
    schedule: &LearningSchedule,
    obs: &Observation,
    pi_used: f64,
) -> Result<()> {
    let t = state.t + 1;
    let rate = schedule.rate(t)?;
    let g = ipw_gradient(model, &state.hat_beta, obs, pi_used)?;
    state.hat_beta.axpy(-rate, &g, 1.0);
    let prev = (t - 1) as f64;
    state.bar_beta.zip_apply(&state.hat_beta, |bar, hat| {
        *bar = (hat + prev * *bar) / t as f64
    });
    state.t = t;
    Ok(())
}

/// One IPW-weighted SGD step followed by the running-average update.
pub fn sgd_step<M: RewardModel + ?Sized>(
    state: &ParameterState,
    model: &M,
    schedule: &LearningSchedule,
    obs: &Observation,
    pi_used: f64,
) -> Result<ParameterState> {
    let mut next = state.clone();
    sgd_step_in_place(&mut next, model, schedule, obs, pi_used)?;
    Ok(next)
}

/// A decision awaiting its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based decision step.
    pub step: usize,
    pub x: DVector<f64>,
    pub action: Action,
    /// Probability of action 1 used to sample `action`.
    pub pi: f64,
    pub eps: f64,
    /// Action preferred by the rule in force at sampling time.
    pub preferred: Action,
    /// Fitted mean reward of `preferred`, kept when AIPW is enabled.
    pub mu_hat: Option<f64>,
}

/// Decisions whose rewards have not arrived, oldest first.
#[derive(Debug, Clone, Default)]
pub struct PendingBuffer {
    queue: VecDeque<StepRecord>,
}

impl PendingBuffer {
    pub fn push(&mut self, record: StepRecord) {
        self.queue.push_back(record);
    }

    /// Removes the record for `step`, which must be the oldest pending one.
    pub fn take(&mut self, step: usize) -> Result<StepRecord> {
        match self.queue.front() {
            Some(r) if r.step == step => Ok(self.queue.pop_front().expect("front exists")),
            Some(r) => Err(Error::Protocol(format!(
                "reward for step {step} arrived while step {} is the oldest pending",
                r.step
            ))),
            None => Err(Error::Protocol(format!(
                "reward for step {step} arrived with nothing pending"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// What the learner did with one reward, for tracing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateEvent {
    pub step: usize,
    pub update: usize,
    pub eps: f64,
    pub pi: f64,
    pub action: Action,
    pub reward: f64,
    /// `loss(bar_beta_prev; O)`, the pre-update average at the new observation.
    pub loss: f64,
}

pub trait StepObserver {
    fn on_update(&mut self, event: &UpdateEvent) -> Result<()>;
}

/// Per-step CSV trace: `step,eps,pi,action,reward,loss`.
pub struct CsvTrace<W: Write> {
    out: W,
    wrote_header: bool,
}

impl<W: Write> CsvTrace<W> {
    pub fn new(out: W) -> Self {
        CsvTrace {
            out,
            wrote_header: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> StepObserver for CsvTrace<W> {
    fn on_update(&mut self, e: &UpdateEvent) -> Result<()> {
        let io = |err| Error::io("trace", err);
        if !self.wrote_header {
            writeln!(self.out, "step,eps,pi,action,reward,loss").map_err(io)?;
            self.wrote_header = true;
        }
        writeln!(
            self.out,
            "{},{},{},{},{},{}",
            e.step,
            e.eps,
            e.pi,
            e.action.index(),
            e.reward,
            e.loss
        )
        .map_err(io)
    }
}

/// Mean per-step loss over consecutive bins of `width` updates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    width: usize,
    sum: f64,
    count: usize,
    bins: Vec<f64>,
}

impl LossTrace {
    pub fn new(width: usize) -> Self {
        LossTrace {
            width,
            ..Default::default()
        }
    }

    fn push(&mut self, loss: f64) {
        if self.width == 0 {
            return;
        }
        self.sum += loss;
        self.count += 1;
        if self.count == self.width {
            self.bins.push(self.sum / self.width as f64);
            self.sum = 0.0;
            self.count = 0;
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Completed bins; bin `k` covers updates `k*width + 1 ..= (k+1)*width`.
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub learning: LearningSchedule,
    pub exploration: ExplorationSchedule,
    pub hessian: HessianVariant,
    pub aipw: bool,
    /// Whether burn-in steps enter the value sums.
    pub value_includes_burn_in: bool,
    /// Width of loss-trace bins; zero disables the trace.
    pub loss_bin: usize,
}

impl LearnerConfig {
    pub fn new(learning: LearningSchedule, exploration: ExplorationSchedule) -> Self {
        LearnerConfig {
            learning,
            exploration,
            hessian: HessianVariant::Exact,
            aipw: false,
            value_includes_burn_in: true,
            loss_bin: 0,
        }
    }
}

/// State of one online stream.
#[derive(Debug, Clone)]
pub struct Learner<M> {
    model: M,
    config: LearnerConfig,
    state: ParameterState,
    plugin: PluginAccumulators,
    value: ValueAccumulator,
    decisions: usize,
    cumulative_reward: f64,
    last_eps: f64,
    losses: LossTrace,
}

impl<M: RewardModel> Learner<M> {
    pub fn new(model: M, config: LearnerConfig) -> Self {
        let p = model.dim();
        Learner {
            plugin: PluginAccumulators::new(p, config.hessian),
            state: ParameterState::zeros(p),
            value: ValueAccumulator::new(),
            decisions: 0,
            cumulative_reward: 0.0,
            last_eps: 1.0,
            losses: LossTrace::new(config.loss_bin),
            model,
            config,
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn state(&self) -> &ParameterState {
        &self.state
    }

    pub fn plugin(&self) -> &PluginAccumulators {
        &self.plugin
    }

    pub fn value(&self) -> &ValueAccumulator {
        &self.value
    }

    pub fn losses(&self) -> &LossTrace {
        &self.losses
    }

    /// Decisions committed so far.
    pub fn decisions(&self) -> usize {
        self.decisions
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.cumulative_reward
    }

    /// Exploration rate of the most recent update.
    pub fn current_eps(&self) -> f64 {
        self.last_eps
    }

    /// Samples an action for `x` under the current average. Nothing is
    /// recorded until [`commit`](Self::commit).
    pub fn decide(&self, x: DVector<f64>, rng: &mut RngStream) -> Result<StepRecord> {
        check_dim(self.model.dim(), x.len())?;
        let step = self.decisions + 1;
        let eps = self.config.exploration.rate(step);
        let bar = &self.state.bar_beta;
        let preferred = decide_optimal(&self.model, bar, &x)?;
        let pi = greedy_propensity(preferred, eps)?;
        let action = sample_action(pi, rng)?;
        let mu_hat = if self.config.aipw {
            Some(self.model.mean_reward(preferred, &x, bar)?)
        } else {
            None
        };
        Ok(StepRecord {
            step,
            x,
            action,
            pi,
            eps,
            preferred,
            mu_hat,
        })
    }

    /// Counts `record` as a taken decision step.
    pub fn commit(&mut self, record: &StepRecord) -> Result<()> {
        if record.step != self.decisions + 1 {
            return Err(Error::Protocol(format!(
                "committing step {} but next step is {}",
                record.step,
                self.decisions + 1
            )));
        }
        self.decisions += 1;
        Ok(())
    }

    /// Applies the reward for a committed decision: accumulators first, at
    /// the pre-update average, then the SGD step.
    pub fn update(&mut self, record: &StepRecord, reward: f64) -> Result<UpdateEvent> {
        if record.step > self.decisions {
            return Err(Error::Protocol(format!(
                "reward for uncommitted step {}",
                record.step
            )));
        }
        self.model.validate_reward(reward)?;
        let obs = Observation::new(record.x.clone(), record.action, reward)?;
        let bar_prev = &self.state.bar_beta;
        let loss = self.model.loss(bar_prev, &obs)?;
        self.plugin
            .accumulate(&self.model, bar_prev, &obs, record.pi)?;
        if self.config.value_includes_burn_in || !self.config.exploration.in_burn_in(record.step) {
            self.value
                .update(&obs, record.preferred, record.eps, record.mu_hat)?;
        }
        sgd_step_in_place(
            &mut self.state,
            &self.model,
            &self.config.learning,
            &obs,
            record.pi,
        )?;
        self.cumulative_reward += reward;
        self.last_eps = record.eps;
        self.losses.push(loss);
        Ok(UpdateEvent {
            step: record.step,
            update: self.state.t,
            eps: record.eps,
            pi: record.pi,
            action: record.action,
            reward,
            loss,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.state.t,
            bar_beta: self.state.bar_beta.clone(),
            plugin: self.plugin.clone(),
            value: self.value,
            eps: self.last_eps,
        }
    }
}

/// Estimator state captured after a given number of updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub bar_beta: DVector<f64>,
    pub plugin: PluginAccumulators,
    pub value: ValueAccumulator,
    /// Exploration rate in force at the latest update.
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    /// Updates applied.
    pub steps: usize,
    /// Decisions discarded by the environment (replay mismatches).
    pub skipped: usize,
    /// Decisions still waiting for rewards at the end (lagged mode).
    pub pending: usize,
    pub cumulative_reward: f64,
    /// The environment ran out before the horizon.
    pub exhausted: bool,
    pub losses: LossTrace,
}

#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub state: ParameterState,
    pub plugin: PluginAccumulators,
    pub value: ValueAccumulator,
    pub snapshots: Vec<Snapshot>,
    pub summary: TrajectorySummary,
}

struct Checkpoints<'a> {
    wanted: &'a [usize],
    taken: Vec<Snapshot>,
}

impl<'a> Checkpoints<'a> {
    fn observe<M: RewardModel>(&mut self, learner: &Learner<M>) {
        let t = learner.state().t;
        if self.wanted.contains(&t) && self.taken.last().is_none_or(|s| s.t != t) {
            self.taken.push(learner.snapshot());
        }
    }
}

fn finish<M: RewardModel>(
    learner: Learner<M>,
    mut snapshots: Vec<Snapshot>,
    skipped: usize,
    pending: usize,
    exhausted: bool,
) -> StreamOutcome {
    if learner.state.t > 0 && snapshots.last().is_none_or(|s| s.t != learner.state.t) {
        snapshots.push(learner.snapshot());
    }
    let summary = TrajectorySummary {
        steps: learner.state.t,
        skipped,
        pending,
        cumulative_reward: learner.cumulative_reward,
        exhausted,
        losses: learner.losses.clone(),
    };
    StreamOutcome {
        state: learner.state,
        plugin: learner.plugin,
        value: learner.value,
        snapshots,
        summary,
    }
}

/// Runs the decision loop until `horizon` updates have been applied or the
/// environment is exhausted. Snapshots are taken after each update count in
/// `checkpoints` and at the end of the stream.
pub fn run_stream<M: RewardModel>(
    env: &mut dyn Environment,
    model: M,
    config: &LearnerConfig,
    rng: &mut RngStream,
    horizon: usize,
    checkpoints: &[usize],
    mut observer: Option<&mut dyn StepObserver>,
) -> Result<StreamOutcome> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    check_dim(model.dim(), env.dim())?;
    let mut learner = Learner::new(model, config.clone());
    let mut cps = Checkpoints {
        wanted: checkpoints,
        taken: Vec::new(),
    };
    let mut skipped = 0;
    let mut exhausted = false;
    while learner.state().t < horizon {
        let Some(x) = env.next_context()? else {
            exhausted = true;
            break;
        };
        let record = learner.decide(x, rng)?;
        match env.respond(record.action)? {
            Some(y) => {
                learner.commit(&record)?;
                let event = learner.update(&record, y)?;
                if let Some(obs) = observer.as_deref_mut() {
                    obs.on_update(&event)?;
                }
                cps.observe(&learner);
            }
            None => skipped += 1,
        }
    }
    Ok(finish(learner, cps.taken, skipped, 0, exhausted))
}

/// The lagged-reward loop. At decision step `t` the context is observed,
/// every reward that has arrived is applied in step order using the
/// propensity stored with its decision, and only then is the next action
/// sampled. Learning-rate indices count updates, not decisions.
///
/// Rewards that never arrive are left pending and never update the model.
pub fn run_stream_lagged<M: RewardModel>(
    env: &mut dyn LaggedEnvironment,
    model: M,
    config: &LearnerConfig,
    rng: &mut RngStream,
    horizon: usize,
    checkpoints: &[usize],
    mut observer: Option<&mut dyn StepObserver>,
) -> Result<StreamOutcome> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    check_dim(model.dim(), env.dim())?;
    let mut learner = Learner::new(model, config.clone());
    let mut cps = Checkpoints {
        wanted: checkpoints,
        taken: Vec::new(),
    };
    let mut pending = PendingBuffer::default();
    let mut apply = |learner: &mut Learner<M>,
                     pending: &mut PendingBuffer,
                     cps: &mut Checkpoints,
                     now: usize,
                     env: &mut dyn LaggedEnvironment|
     -> Result<()> {
        for arrival in env.arrivals(now)? {
            let record = pending.take(arrival.step)?;
            let event = learner.update(&record, arrival.reward)?;
            if let Some(obs) = observer.as_deref_mut() {
                obs.on_update(&event)?;
            }
            cps.observe(learner);
        }
        Ok(())
    };
    let mut exhausted = false;
    for t in 1..=horizon {
        let Some(x) = env.next_context()? else {
            exhausted = true;
            break;
        };
        apply(&mut learner, &mut pending, &mut cps, t, env)?;
        let record = learner.decide(x, rng)?;
        learner.commit(&record)?;
        env.act(record.step, record.action)?;
        pending.push(record);
    }
    let now = learner.decisions() + 1;
    apply(&mut learner, &mut pending, &mut cps, now, env)?;
    let left = pending.len();
    Ok(finish(learner, cps.taken, 0, left, exhausted))
}
