//! Experiment routines: telemetry-recording runs, the online label-flip
//! benchmark, TAM → SGDM warmup switching, linear-interpolation loss
//! barriers and learning-rate grid search.
//!
//! Every routine is a pure function of its configuration and seeds. A run
//! seed `s` drives two streams: landscape noise from `split_seed(s, 1)` and
//! mini-batch shuffling from `split_seed(s, 2)`.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::landscapes::{Landscape, LandscapeSpec};
use crate::nn::{evaluate_batch, init_mlp, Dataset, MlpSpec, TaskStream};
use crate::optim::{step, HyperParams, OptimizerKind, OptimizerState, StepTelemetry};
use crate::vecmath::{split_seed, ParamVector, RngStream};

/// Default number of interpolation points for [`loss_barrier`].
pub const DEFAULT_N_ALPHA: usize = 11;

/// Default per-task budget of the online benchmark, in epochs.
pub const DEFAULT_EPOCHS_PER_TASK: usize = 40;

const NOISE_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// What is being optimized.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Landscape {
        spec: LandscapeSpec,
        theta0: ParamVector,
    },
    Mlp {
        spec: MlpSpec,
        data: Dataset,
        /// Seed of the He-uniform initialization; independent of the run seed
        /// so that runs differing only in batch order share an init.
        init_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub optimizer: OptimizerKind,
    pub hp: HyperParams,
    pub problem: Problem,
    /// Mini-batch size (MLP problems only).
    pub batch_size: usize,
    /// Step budget.
    pub steps: u64,
    pub seed: u64,
    /// Keep telemetry for steps whose index is a multiple of this.
    pub telemetry_every: u64,
    /// Starting value of the smoothed similarity ŝ₀.
    pub initial_s_hat: f64,
}

impl RunConfig {
    pub fn new(optimizer: OptimizerKind, hp: HyperParams, problem: Problem) -> Self {
        RunConfig {
            optimizer,
            hp,
            problem,
            batch_size: 32,
            steps: 100,
            seed: 0,
            telemetry_every: 1,
            initial_s_hat: 0.0,
        }
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.steps == 0 {
            return Err(Error::domain("step budget must be >= 1"));
        }
        if self.telemetry_every == 0 {
            return Err(Error::domain("telemetry cadence must be >= 1"));
        }
        if !(-1.0..=1.0).contains(&self.initial_s_hat) {
            return Err(Error::domain("initial s_hat outside [-1, 1]"));
        }
        match &self.problem {
            Problem::Landscape { spec, theta0 } => Error::check_dims(spec.dim(), theta0.len()),
            Problem::Mlp { spec, data, .. } => {
                Error::check_dims(spec.input_dim(), data.dim())?;
                if data.n_classes() != spec.n_classes() {
                    return Err(Error::domain("dataset classes differ from the output width"));
                }
                if self.batch_size == 0 || self.batch_size > data.len() {
                    return Err(Error::domain(format!(
                        "batch size {} must be in [1, {}]",
                        self.batch_size,
                        data.len()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Telemetry of one run.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub telemetry: Vec<StepTelemetry>,
    pub final_theta: ParamVector,
    pub final_state: OptimizerState,
    /// Last step run with the first optimizer of a warmup switch.
    pub switch_step: Option<u64>,
    pub wall_time: Duration,
}

/// Equality ignores wall time.
impl PartialEq for TrajectoryRecord {
    fn eq(&self, other: &Self) -> bool {
        self.telemetry == other.telemetry
            && self.final_theta == other.final_theta
            && self.final_state == other.final_state
            && self.switch_step == other.switch_step
    }
}

impl TrajectoryRecord {
    pub fn final_loss(&self) -> Option<f64> {
        self.telemetry.last().map(|t| t.loss)
    }
}

/// Epoch-wise sampler: shuffle, hand out consecutive full batches, reshuffle
/// when fewer than `batch_size` indices remain (the remainder is dropped).
#[derive(Debug, Clone)]
struct BatchSampler {
    rng: RngStream,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchSampler {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        BatchSampler {
            rng: RngStream::new(seed),
            order: (0..n).collect(),
            cursor: n,
            batch_size,
        }
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.sort_unstable();
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let batch = &self.order[self.cursor..self.cursor + self.batch_size];
        self.cursor += self.batch_size;
        batch
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = RngStream::new(seed);
        self.cursor = self.order.len();
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Objective {
    Landscape(Box<dyn Landscape>),
    Mlp {
        spec: MlpSpec,
        data: Dataset,
        sampler: BatchSampler,
    },
}

/// Result of one [`Session::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub telemetry: StepTelemetry,
    /// Accuracy on the mini-batch, measured before the update (MLP only).
    pub batch_accuracy: Option<f64>,
}

/// A live optimization run: parameters, optimizer state and objective.
#[derive(Debug, Clone)]
pub struct Session {
    optimizer: OptimizerKind,
    hp: HyperParams,
    theta: ParamVector,
    state: OptimizerState,
    objective: Objective,
}

impl Session {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (theta, objective) = match &cfg.problem {
            Problem::Landscape { spec, theta0 } => (
                theta0.clone(),
                Objective::Landscape(spec.build(split_seed(cfg.seed, NOISE_STREAM))?),
            ),
            Problem::Mlp {
                spec,
                data,
                init_seed,
            } => (
                init_mlp(spec, &mut RngStream::new(*init_seed)),
                Objective::Mlp {
                    spec: spec.clone(),
                    data: data.clone(),
                    sampler: BatchSampler::new(
                        data.len(),
                        cfg.batch_size,
                        split_seed(cfg.seed, SHUFFLE_STREAM),
                    ),
                },
            ),
        };
        let state = OptimizerState::with_s_hat(theta.len(), cfg.initial_s_hat)?;
        Ok(Session {
            optimizer: cfg.optimizer,
            hp: cfg.hp,
            theta,
            state,
            objective,
        })
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn optimizer(&self) -> OptimizerKind {
        self.optimizer
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.hp
    }

    /// Replaces the parameters, keeping optimizer state.
    pub fn set_theta(&mut self, theta: ParamVector) -> Result<()> {
        Error::check_dims(self.theta.len(), theta.len())?;
        self.theta = theta;
        Ok(())
    }

    /// Switches the update rule; state (momentum, ŝ, v, t) carries over.
    pub fn set_optimizer(&mut self, optimizer: OptimizerKind, hp: HyperParams) -> Result<()> {
        hp.validate()?;
        self.optimizer = optimizer;
        self.hp = hp;
        Ok(())
    }

    /// Swaps the training data of an MLP session (same shape required);
    /// the shuffle stream continues.
    pub fn set_data(&mut self, new_data: Dataset) -> Result<()> {
        match &mut self.objective {
            Objective::Mlp { data, .. } => {
                Error::check_dims(data.len(), new_data.len())?;
                Error::check_dims(data.dim(), new_data.dim())?;
                *data = new_data;
                Ok(())
            }
            Objective::Landscape(_) => Err(Error::domain("landscape sessions have no dataset")),
        }
    }

    /// Restarts the shuffle and noise streams from run seed `seed`.
    pub fn reseed(&mut self, seed: u64) {
        match &mut self.objective {
            Objective::Landscape(l) => l.reseed(split_seed(seed, NOISE_STREAM)),
            Objective::Mlp { sampler, .. } => sampler.reseed(split_seed(seed, SHUFFLE_STREAM)),
        }
    }

    /// Full-batches per pass over the data (1 for landscapes).
    pub fn steps_per_epoch(&self) -> u64 {
        match &self.objective {
            Objective::Landscape(_) => 1,
            Objective::Mlp { data, sampler, .. } => (data.len() / sampler.batch_size) as u64,
        }
    }

    /// Clean objective at the current parameters: landscape loss, or mean
    /// cross-entropy over the full dataset.
    pub fn full_loss(&self) -> Result<f64> {
        self.loss_at(&self.theta)
    }

    pub fn loss_at(&self, theta: &ParamVector) -> Result<f64> {
        match &self.objective {
            Objective::Landscape(l) => l.loss(theta),
            Objective::Mlp { spec, data, .. } => {
                Ok(evaluate_batch(theta, spec, data.inputs(), data.labels(), false)?.loss)
            }
        }
    }

    /// One sample-evaluate-update iteration.
    pub fn step(&mut self) -> Result<StepReport> {
        let next_t = self.state.t + 1;
        let (loss, grad, batch_accuracy) = match &mut self.objective {
            Objective::Landscape(l) => {
                let (loss, grad) = l.evaluate(&self.theta).map_err(|e| diverged(next_t, e))?;
                (loss, grad, None)
            }
            Objective::Mlp {
                spec,
                data,
                sampler,
            } => {
                let (x, y) = data.gather(sampler.next_batch());
                let r = evaluate_batch(&self.theta, spec, &x, &y, true)
                    .map_err(|e| diverged(next_t, e))?;
                let acc = r.accuracy();
                (r.loss, r.grad.expect("gradient requested"), Some(acc))
            }
        };
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: next_t,
                detail: format!("loss = {loss}"),
            });
        }
        let out = step(self.optimizer, &self.theta, &grad, &self.state, &self.hp)
            .map_err(|e| diverged(next_t, e))?;
        let mut telemetry = out.telemetry;
        telemetry.loss = loss;
        self.theta = out.theta;
        self.state = out.state;
        Ok(StepReport {
            telemetry,
            batch_accuracy,
        })
    }

    /// Runs `steps` iterations, keeping telemetry every `every` steps.
    pub fn run(&mut self, steps: u64, every: u64) -> Result<Vec<StepTelemetry>> {
        let mut kept = Vec::new();
        for _ in 0..steps {
            let report = self.step()?;
            if report.telemetry.t % every == 0 {
                kept.push(report.telemetry);
            }
        }
        Ok(kept)
    }

    fn into_record(self, telemetry: Vec<StepTelemetry>, started: Instant) -> TrajectoryRecord {
        TrajectoryRecord {
            telemetry,
            final_theta: self.theta,
            final_state: self.state,
            switch_step: None,
            wall_time: started.elapsed(),
        }
    }
}

fn diverged(step: u64, cause: Error) -> Error {
    match cause {
        e @ Error::Diverged { .. } => e,
        other => Error::Diverged {
            step,
            detail: other.to_string(),
        },
    }
}

/// Runs the optimizer loop of `cfg` and records telemetry.
///
/// A non-finite loss, gradient or update aborts with [`Error::Diverged`]
/// naming the failing step.
pub fn run_trajectory(cfg: &RunConfig) -> Result<TrajectoryRecord> {
    let started = Instant::now();
    let mut session = Session::new(cfg)?;
    let telemetry = session.run(cfg.steps, cfg.telemetry_every)?;
    Ok(session.into_record(telemetry, started))
}

/// TAM at η for steps `1..=sw`, then SGDM at η/2 for the rest of the budget.
///
/// The momentum vector and step counter carry over unchanged; SGDM does not
/// consume ŝ. `cfg.optimizer` is ignored.
pub fn run_warmup_switch(cfg: &RunConfig, sw: u64) -> Result<TrajectoryRecord> {
    if sw > cfg.steps {
        return Err(Error::domain(format!(
            "switch step {sw} beyond budget {}",
            cfg.steps
        )));
    }
    let started = Instant::now();
    let mut tam_cfg = cfg.clone();
    tam_cfg.optimizer = OptimizerKind::Tam;
    let mut session = Session::new(&tam_cfg)?;
    let mut telemetry = session.run(sw, cfg.telemetry_every)?;
    session.set_optimizer(OptimizerKind::Sgdm, cfg.hp.with_eta(cfg.hp.eta * 0.5))?;
    telemetry.extend(session.run(cfg.steps - sw, cfg.telemetry_every)?);
    let mut record = session.into_record(telemetry, started);
    record.switch_step = Some(sw);
    Ok(record)
}

/// Continues two copies of `parent` for `steps` steps each, differing only
/// in their shuffle/noise seeds. Parameters and optimizer state are cloned,
/// never re-initialized.
pub fn spawn_and_diverge(
    parent: &Session,
    steps: u64,
    seed_a: u64,
    seed_b: u64,
) -> Result<(ParamVector, ParamVector)> {
    let run = |mut child: Session, seed: u64| -> Result<ParamVector> {
        child.reseed(seed);
        child.run(steps, u64::MAX)?;
        Ok(child.theta)
    };
    let (child_a, child_b) = (parent.clone(), parent.clone());
    let (a, b) = rayon::join(|| run(child_a, seed_a), || run(child_b, seed_b));
    Ok((a?, b?))
}

/// Loss along the segment between two parameter vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierReport {
    pub alphas: Vec<f64>,
    /// Loss at `θ(α) = θ₁ + α (θ₂ − θ₁)` for each α.
    pub losses: Vec<f64>,
    /// `(L(θ₁), L(θ₂))`.
    pub endpoint_losses: (f64, f64),
    /// `max_α [L(θ(α)) − ((1 − α) L(θ₁) + α L(θ₂))]`.
    pub barrier: f64,
}

impl BarrierReport {
    /// Linear interpolation of the endpoint losses at grid point `i`.
    pub fn linear_baseline(&self, i: usize) -> f64 {
        let (l1, l2) = self.endpoint_losses;
        l1 + self.alphas[i] * (l2 - l1)
    }

    /// Barrier recomputed from the stored losses.
    pub fn recompute_barrier(&self) -> f64 {
        (0..self.alphas.len())
            .map(|i| self.losses[i] - self.linear_baseline(i))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Evaluates `loss_eval` on `n_alpha` evenly spaced points from `θ₁` (α = 0)
/// to `θ₂` (α = 1). Endpoints are evaluated at `θ₁` and `θ₂` exactly, so
/// the barrier is never negative.
pub fn loss_barrier<F>(
    theta1: &ParamVector,
    theta2: &ParamVector,
    mut loss_eval: F,
    n_alpha: usize,
) -> Result<BarrierReport>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    Error::check_dims(theta1.len(), theta2.len())?;
    if n_alpha < 2 {
        return Err(Error::domain("n_alpha must be >= 2"));
    }
    let alphas: Vec<f64> = (0..n_alpha)
        .map(|i| i as f64 / (n_alpha - 1) as f64)
        .collect();
    let mut losses = Vec::with_capacity(n_alpha);
    for (i, &alpha) in alphas.iter().enumerate() {
        let point = if i == 0 {
            theta1.clone()
        } else if i == n_alpha - 1 {
            theta2.clone()
        } else {
            ParamVector::checked(
                "theta",
                theta1
                    .iter()
                    .zip(theta2.iter())
                    .map(|(a, b)| a + alpha * (b - a))
                    .collect(),
            )?
        };
        losses.push(loss_eval(&point)?);
    }
    let mut report = BarrierReport {
        endpoint_losses: (losses[0], losses[n_alpha - 1]),
        alphas,
        losses,
        barrier: 0.0,
    };
    report.barrier = report.recompute_barrier();
    Ok(report)
}

/// Online benchmark settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub optimizer: OptimizerKind,
    pub hp: HyperParams,
    pub spec: MlpSpec,
    pub init_seed: u64,
    /// Overrides the seeded initialization when set.
    pub initial_theta: Option<ParamVector>,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskResult {
    /// Mean pre-update batch accuracy over the task's steps.
    pub online_accuracy: f64,
    /// Pre-update accuracy of the task's first batch.
    pub first_batch_accuracy: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineReport {
    pub tasks: Vec<TaskResult>,
    /// Mean of the per-task online accuracies.
    pub mean_accuracy: f64,
}

/// Trains through every task of `stream` in order without resetting
/// parameters or optimizer state. Each batch is scored before the update it
/// produces (prequential accuracy).
pub fn run_online(stream: &TaskStream, cfg: &OnlineConfig) -> Result<OnlineReport> {
    if stream.is_empty() {
        return Err(Error::domain("task stream is empty"));
    }
    if cfg.epochs_per_task == 0 {
        return Err(Error::domain("epochs_per_task must be >= 1"));
    }
    let run_cfg = RunConfig {
        optimizer: cfg.optimizer,
        hp: cfg.hp,
        problem: Problem::Mlp {
            spec: cfg.spec.clone(),
            data: stream.task(0)?,
            init_seed: cfg.init_seed,
        },
        batch_size: cfg.batch_size,
        steps: 1,
        seed: cfg.seed,
        telemetry_every: 1,
        initial_s_hat: 0.0,
    };
    let mut session = Session::new(&run_cfg)?;
    if let Some(theta) = &cfg.initial_theta {
        session.set_theta(theta.clone())?;
    }
    let steps = session.steps_per_epoch() * cfg.epochs_per_task as u64;
    let mut tasks = Vec::with_capacity(stream.len());
    for k in 0..stream.len() {
        if k > 0 {
            session.set_data(stream.task(k)?)?;
        }
        let mut acc_sum = 0.0;
        let mut first = f64::NAN;
        for i in 0..steps {
            let acc = session.step()?.batch_accuracy.expect("mlp session");
            if i == 0 {
                first = acc;
            }
            acc_sum += acc;
        }
        tasks.push(TaskResult {
            online_accuracy: acc_sum / steps as f64,
            first_batch_accuracy: first,
            steps,
        });
    }
    let mean_accuracy = tasks.iter().map(|t| t.online_accuracy).sum::<f64>() / tasks.len() as f64;
    Ok(OnlineReport {
        tasks,
        mean_accuracy,
    })
}

/// Direction of a grid-search metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    /// Metric per seed, in seed order; empty on failure.
    pub per_seed: Vec<f64>,
    /// Mean over seeds.
    pub mean: Option<f64>,
    /// First error encountered, if any seed failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    /// Index of the best successful row; ties go to the earliest.
    pub best: Option<usize>,
}

/// Evaluates `metric(config, seed)` for every config and seed, averages per
/// config and picks the best mean. A failing config is recorded in its row
/// and excluded from selection; the search continues. Work is spread over
/// `threads` workers (0 = rayon default) without affecting the result.
pub fn grid_search<T, F>(
    configs: &[T],
    seeds: &[u64],
    goal: Goal,
    threads: usize,
    metric: F,
) -> Result<GridReport>
where
    T: Sync,
    F: Fn(&T, u64) -> Result<f64> + Sync,
{
    if configs.is_empty() || seeds.is_empty() {
        return Err(Error::domain("grid search needs at least one config and one seed"));
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let eval = || -> Vec<Result<f64>> {
        jobs.par_iter()
            .map(|&(c, s)| {
                metric(&configs[c], s).and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::domain(format!("metric is {v}")))
                    }
                })
            })
            .collect()
    };
    let results = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?
        .install(eval);

    let rows: Vec<GridRow> = results
        .chunks(seeds.len())
        .map(|chunk| {
            if let Some(Err(e)) = chunk.iter().find(|r| r.is_err()) {
                return GridRow {
                    per_seed: Vec::new(),
                    mean: None,
                    failure: Some(e.to_string()),
                };
            }
            let per_seed: Vec<f64> = chunk.iter().map(|r| *r.as_ref().unwrap()).collect();
            let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            GridRow {
                per_seed,
                mean: Some(mean),
                failure: None,
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        let Some(m) = row.mean else { continue };
        let better = match best.and_then(|b| rows[b].mean) {
            None => true,
            Some(cur) => match goal {
                Goal::Minimize => m < cur,
                Goal::Maximize => m > cur,
            },
        };
        if better {
            best = Some(i);
        }
    }
    Ok(GridReport { rows, best })
}
