//! Subcommand implementations. Each one resolves per-seed run settings from
//! the experiment file, runs the bench routine and writes its outputs.
//!
//! Seed index `i` runs with `split_seed(seed, i)`; index 0 uses `seed`
//! itself.

use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde_json::{json, Value};

use tamopt_core::bench::{
    grid_search, loss_barrier, run_online, run_trajectory, run_warmup_switch, spawn_and_diverge,
    OnlineConfig, Problem, RunConfig, Session,
};
use tamopt_core::gradcheck::check_gradient;
use tamopt_core::nn::{dataset_accuracy, evaluate_batch, init_mlp, TaskStream};
use tamopt_core::vecmath::split_seed;
use tamopt_core::{Error, HyperParams, RngStream};

use crate::config::{ConfigError, ExperimentFile, Metric};
use crate::output::{csv_text, fmt_f64, telemetry_csv, OutputDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Trajectory,
    Online,
    Warmup,
    Barrier,
    Gridsearch,
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Trajectory => "trajectory",
            Command::Online => "online",
            Command::Warmup => "warmup",
            Command::Barrier => "barrier",
            Command::Gridsearch => "gridsearch",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone)]
pub struct Options {
    pub out_dir: Option<PathBuf>,
    pub seeds: Option<usize>,
    /// Worker threads; 0 picks the rayon default.
    pub threads: usize,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(Error),
    Io(std::io::Error),
    GradcheckFailed { max_rel_error: f64, tolerance: f64 },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(e) => e.kind(),
            CliError::Run(Error::Diverged { .. }) => "diverged",
            CliError::Run(_) => "run_error",
            CliError::Io(_) => "io",
            CliError::GradcheckFailed { .. } => "gradcheck_failed",
        }
    }

    /// Single-line JSON description for machine consumption.
    pub fn to_json(&self) -> Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config(e) => {
                if let Some(line) = e.line() {
                    err["line"] = json!(line);
                }
                if let Some(key) = e.key() {
                    err["key"] = json!(key);
                }
            }
            CliError::Run(Error::Diverged { step, .. }) => err["step"] = json!(step),
            CliError::GradcheckFailed {
                max_rel_error,
                tolerance,
            } => {
                err["max_rel_error"] = json!(max_rel_error);
                err["tolerance"] = json!(tolerance);
            }
            _ => {}
        }
        json!({ "error": err })
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => e.fmt(f),
            CliError::Run(e) => e.fmt(f),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::GradcheckFailed {
                max_rel_error,
                tolerance,
            } => write!(f, "gradient check failed: max relative error {max_rel_error:e} >= {tolerance:e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// What a successful command produced.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable summary lines for stdout.
    pub report: String,
}

pub fn run(cmd: Command, cfg: &ExperimentFile, opts: &Options) -> Result<Outcome> {
    let root = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutputDir::create(&root)?;
    let seeds = opts.seeds.unwrap_or(cfg.seeds).max(1);
    let ctx = Ctx {
        cfg,
        seeds,
        threads: opts.threads,
    };
    let report = match cmd {
        Command::Trajectory => trajectory(&ctx, &mut out)?,
        Command::Online => online(&ctx, &mut out)?,
        Command::Warmup => warmup(&ctx, &mut out)?,
        Command::Barrier => barrier(&ctx, &mut out)?,
        Command::Gridsearch => gridsearch(&ctx, &mut out)?,
        Command::Gradcheck => gradcheck(&ctx, &mut out)?,
    };
    Ok(Outcome {
        files: out.written().to_vec(),
        report,
    })
}

struct Ctx<'a> {
    cfg: &'a ExperimentFile,
    seeds: usize,
    threads: usize,
}

impl Ctx<'_> {
    fn seed(&self, index: usize) -> u64 {
        split_seed(self.cfg.seed, index as u64)
    }

    fn run_config(&self, hp: HyperParams, seed: u64) -> RunConfig {
        let c = self.cfg;
        RunConfig {
            optimizer: c.optimizer,
            hp,
            problem: c.problem.clone(),
            batch_size: c.batch_size,
            steps: c.steps,
            seed,
            telemetry_every: c.telemetry_every,
            initial_s_hat: c.s_hat0,
        }
    }

    /// Runs `f(index, seed)` for every seed index on the worker pool. The
    /// first failure in index order is reported.
    fn per_seed<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, u64) -> tamopt_core::Result<T> + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
        let results: Vec<_> = pool.install(|| {
            (0..self.seeds)
                .into_par_iter()
                .map(|i| f(i, self.seed(i)))
                .collect()
        });
        results.into_iter().map(|r| r.map_err(CliError::from)).collect()
    }

    fn common_json(&self, command: Command) -> Value {
        let c = self.cfg;
        json!({
            "command": command.name(),
            "optimizer": c.optimizer_name,
            "hyperparameters": hp_json(&c.hp),
            "steps": c.steps,
            "seed": c.seed,
            "seeds": self.seeds,
        })
    }
}

fn hp_json(hp: &HyperParams) -> Value {
    let damping = match hp.damping {
        tamopt_core::optim::Damping::Torque => json!("torque"),
        tamopt_core::optim::Damping::Fixed(d) => json!(d),
    };
    json!({
        "eta": hp.eta,
        "beta": hp.beta,
        "gamma": hp.gamma,
        "epsilon": hp.epsilon,
        "beta2": hp.beta2,
        "c": hp.c,
        "weight_decay": hp.weight_decay,
        "damping": damping,
    })
}

fn per_seed_json(values: &[f64], ctx: &Ctx) -> Value {
    Value::Array(
        values
            .iter()
            .enumerate()
            .map(|(i, v)| json!({ "index": i, "seed": ctx.seed(i), "value": v }))
            .collect(),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn require_mlp(cfg: &ExperimentFile, command: Command) -> Result<()> {
    if cfg.is_mlp() {
        Ok(())
    } else {
        Err(CliError::Config(ConfigError::Missing {
            key: "model".into(),
            message: format!("`{}` needs `model = mlp`", command.name()),
        }))
    }
}

fn task_stream(cfg: &ExperimentFile, seed: u64) -> tamopt_core::Result<TaskStream> {
    let Problem::Mlp { data, .. } = &cfg.problem else {
        unreachable!("checked by require_mlp")
    };
    TaskStream::generate(
        data.clone(),
        cfg.online.tasks,
        cfg.online.delta,
        &mut RngStream::new(split_seed(seed, 4)),
    )
}

fn online_config(cfg: &ExperimentFile, hp: HyperParams, seed: u64) -> OnlineConfig {
    let Problem::Mlp { spec, init_seed, .. } = &cfg.problem else {
        unreachable!("checked by require_mlp")
    };
    OnlineConfig {
        optimizer: cfg.optimizer,
        hp,
        spec: spec.clone(),
        init_seed: *init_seed,
        initial_theta: None,
        batch_size: cfg.batch_size,
        epochs_per_task: cfg.online.epochs_per_task,
        seed,
    }
}

/// Scores one (hyperparameters, seed) pair.
fn evaluate_metric(ctx: &Ctx, hp: HyperParams, seed: u64, metric: Metric) -> tamopt_core::Result<f64> {
    hp.validate()?;
    if metric == Metric::OnlineAccuracy {
        let stream = task_stream(ctx.cfg, seed)?;
        return Ok(run_online(&stream, &online_config(ctx.cfg, hp, seed))?.mean_accuracy);
    }
    let mut rc = ctx.run_config(hp, seed);
    rc.telemetry_every = u64::MAX;
    let record = run_trajectory(&rc)?;
    match (metric, &rc.problem) {
        (Metric::FinalAccuracy, Problem::Mlp { spec, data, .. }) => {
            dataset_accuracy(&record.final_theta, spec, data)
        }
        _ => Session::new(&rc)?.loss_at(&record.final_theta),
    }
}

fn trajectory(ctx: &Ctx, out: &mut OutputDir) -> Result<String> {
    let records = ctx.per_seed(|_, seed| {
        let rc = ctx.run_config(ctx.cfg.hp, seed);
        let record = run_trajectory(&rc)?;
        let final_loss = Session::new(&rc)?.loss_at(&record.final_theta)?;
        Ok((record, final_loss))
    })?;
    let mut finals = Vec::new();
    for (i, (record, final_loss)) in records.iter().enumerate() {
        out.write(&format!("trajectory_{i}.csv"), &telemetry_csv(&record.telemetry))?;
        finals.push(*final_loss);
    }
    let mut summary = ctx.common_json(Command::Trajectory);
    summary["metric"] = json!("final_loss");
    summary["per_seed"] = per_seed_json(&finals, ctx);
    summary["mean"] = json!(mean(&finals));
    out.write_json("summary.json", &summary)?;
    Ok(format!("final_loss mean = {}", fmt_f64(mean(&finals))))
}

fn online(ctx: &Ctx, out: &mut OutputDir) -> Result<String> {
    require_mlp(ctx.cfg, Command::Online)?;
    let reports = ctx.per_seed(|_, seed| {
        let stream = task_stream(ctx.cfg, seed)?;
        run_online(&stream, &online_config(ctx.cfg, ctx.cfg.hp, seed))
    })?;
    let mut means = Vec::new();
    let mut per_task = Vec::new();
    for (i, report) in reports.iter().enumerate() {
        let mut csv = String::from("task,online_accuracy,first_batch_accuracy,steps\n");
        for (k, t) in report.tasks.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{k},{},{},{}",
                fmt_f64(t.online_accuracy),
                fmt_f64(t.first_batch_accuracy),
                t.steps
            );
        }
        let _ = writeln!(csv, "mean,{},,", fmt_f64(report.mean_accuracy));
        out.write(&format!("online_{i}.csv"), &csv)?;
        means.push(report.mean_accuracy);
        per_task.push(json!(report
            .tasks
            .iter()
            .map(|t| t.online_accuracy)
            .collect::<Vec<_>>()));
    }
    let mut summary = ctx.common_json(Command::Online);
    summary["metric"] = json!("online_accuracy");
    summary["tasks"] = json!(ctx.cfg.online.tasks);
    summary["delta"] = json!(ctx.cfg.online.delta);
    summary["epochs_per_task"] = json!(ctx.cfg.online.epochs_per_task);
    summary["per_seed"] = per_seed_json(&means, ctx);
    summary["per_task"] = Value::Array(per_task);
    summary["mean"] = json!(mean(&means));
    out.write_json("summary.json", &summary)?;
    Ok(format!("online_accuracy mean = {}", fmt_f64(mean(&means))))
}

fn warmup(ctx: &Ctx, out: &mut OutputDir) -> Result<String> {
    let sw = ctx.cfg.switch_step.ok_or_else(|| {
        CliError::Config(ConfigError::Missing {
            key: "switch_step".into(),
            message: "`warmup` needs [warmup] switch_step".into(),
        })
    })?;
    let records = ctx.per_seed(|_, seed| {
        let rc = ctx.run_config(ctx.cfg.hp, seed);
        let record = run_warmup_switch(&rc, sw)?;
        let final_loss = Session::new(&rc)?.loss_at(&record.final_theta)?;
        Ok((record, final_loss))
    })?;
    let mut finals = Vec::new();
    for (i, (record, final_loss)) in records.iter().enumerate() {
        out.write(&format!("warmup_{i}.csv"), &telemetry_csv(&record.telemetry))?;
        finals.push(*final_loss);
    }
    let mut summary = ctx.common_json(Command::Warmup);
    summary["switch_step"] = json!(sw);
    summary["eta_tam"] = json!(ctx.cfg.hp.eta);
    summary["eta_sgdm"] = json!(ctx.cfg.hp.eta * 0.5);
    summary["metric"] = json!("final_loss");
    summary["per_seed"] = per_seed_json(&finals, ctx);
    summary["mean"] = json!(mean(&finals));
    out.write_json("summary.json", &summary)?;
    Ok(format!("switch at step {sw}; final_loss mean = {}", fmt_f64(mean(&finals))))
}

fn barrier(ctx: &Ctx, out: &mut OutputDir) -> Result<String> {
    let b = &ctx.cfg.barrier;
    let reports = ctx.per_seed(|_, seed| {
        let rc = ctx.run_config(ctx.cfg.hp, seed);
        let mut parent = Session::new(&rc)?;
        parent.run(b.spawn_step, u64::MAX)?;
        let seed_a = b.seed_a.unwrap_or(split_seed(seed, 5));
        let seed_b = b.seed_b.unwrap_or(split_seed(seed, 6));
        let (ta, tb) = spawn_and_diverge(&parent, b.train_steps, seed_a, seed_b)?;
        let distance = tamopt_core::vecmath::distance(&ta, &tb)?;
        let report = loss_barrier(&ta, &tb, |t| parent.loss_at(t), b.n_alpha)?;
        Ok((report, distance))
    })?;
    let mut barriers = Vec::new();
    let mut details = Vec::new();
    for (i, (report, distance)) in reports.iter().enumerate() {
        let mut csv = String::from("alpha,loss,linear,excess\n");
        for (k, (&a, &l)) in report.alphas.iter().zip(&report.losses).enumerate() {
            let lin = report.linear_baseline(k);
            let _ = writeln!(csv, "{},{},{},{}", fmt_f64(a), fmt_f64(l), fmt_f64(lin), fmt_f64(l - lin));
        }
        out.write(&format!("barrier_{i}.csv"), &csv)?;
        barriers.push(report.barrier);
        details.push(json!({
            "endpoint_losses": [report.endpoint_losses.0, report.endpoint_losses.1],
            "distance": distance,
        }));
    }
    let mut summary = ctx.common_json(Command::Barrier);
    summary["metric"] = json!("barrier");
    summary["n_alpha"] = json!(b.n_alpha);
    summary["spawn_step"] = json!(b.spawn_step);
    summary["train_steps"] = json!(b.train_steps);
    summary["per_seed"] = per_seed_json(&barriers, ctx);
    summary["endpoints"] = Value::Array(details);
    summary["mean"] = json!(mean(&barriers));
    out.write_json("summary.json", &summary)?;
    Ok(format!("barrier mean = {}", fmt_f64(mean(&barriers))))
}

fn gridsearch(ctx: &Ctx, out: &mut OutputDir) -> Result<String> {
    let grid = ctx.cfg.grid.as_ref().ok_or_else(|| {
        CliError::Config(ConfigError::Missing {
            key: "grid".into(),
            message: "`gridsearch` needs a [grid] section with `param` and `values`".into(),
        })
    })?;
    if grid.metric != Metric::FinalLoss {
        require_mlp(ctx.cfg, Command::Gridsearch)?;
    }
    let seeds: Vec<u64> = (0..ctx.seeds).map(|i| ctx.seed(i)).collect();
    let report = grid_search(&grid.values, &seeds, grid.goal, ctx.threads, |&v, seed| {
        evaluate_metric(ctx, grid.param.apply(ctx.cfg.hp, v), seed, grid.metric)
    })?;

    let mut csv = format!("index,{},mean", grid.param.name());
    for i in 0..seeds.len() {
        let _ = write!(csv, ",seed_{i}");
    }
    csv.push_str(",failure\n");
    let mut rows = Vec::new();
    for (i, (row, &v)) in report.rows.iter().zip(&grid.values).enumerate() {
        let _ = write!(csv, "{i},{},{}", fmt_f64(v), row.mean.map(fmt_f64).unwrap_or_default());
        for k in 0..seeds.len() {
            let cell = row.per_seed.get(k).copied().map(fmt_f64).unwrap_or_default();
            let _ = write!(csv, ",{cell}");
        }
        let _ = writeln!(csv, ",{}", row.failure.as_deref().map(csv_text).unwrap_or_default());
        rows.push(json!({
            "index": i,
            "value": v,
            "mean": row.mean,
            "per_seed": row.per_seed,
            "failure": row.failure,
        }));
    }
    out.write("grid.csv", &csv)?;

    let mut summary = ctx.common_json(Command::Gridsearch);
    summary["param"] = json!(grid.param.name());
    summary["metric"] = json!(grid.metric.name());
    summary["goal"] = json!(match grid.goal {
        tamopt_core::bench::Goal::Minimize => "minimize",
        tamopt_core::bench::Goal::Maximize => "maximize",
    });
    summary["results"] = Value::Array(rows);
    summary["best"] = match report.best {
        Some(b) => json!({
            "index": b,
            "value": grid.values[b],
            "mean": report.rows[b].mean,
            "per_seed": per_seed_json(&report.rows[b].per_seed, ctx),
        }),
        None => Value::Null,
    };
    out.write_json("summary.json", &summary)?;
    Ok(match report.best {
        Some(b) => format!(
            "best {} = {} ({} = {})",
            grid.param.name(),
            grid.values[b],
            grid.metric.name(),
            fmt_f64(report.rows[b].mean.unwrap_or(f64::NAN))
        ),
        None => "every grid point failed".to_string(),
    })
}

fn gradcheck(ctx: &Ctx, out: &mut OutputDir) -> Result<String> {
    let g = &ctx.cfg.gradcheck;
    let mut worst = 0.0f64;
    let mut points = Vec::new();
    for i in 0..g.points {
        let seed = split_seed(ctx.cfg.seed, i as u64);
        let check = match &ctx.cfg.problem {
            Problem::Mlp { spec, data, .. } => {
                let theta = init_mlp(spec, &mut RngStream::new(seed));
                let n = ctx.cfg.batch_size.min(data.len());
                let idx: Vec<usize> = RngStream::new(split_seed(seed, 1)).sample_indices(data.len(), n);
                let (x, y) = data.gather(&idx);
                let analytic = evaluate_batch(&theta, spec, &x, &y, true)?
                    .grad
                    .expect("gradient requested");
                check_gradient(
                    |t| Ok(evaluate_batch(t, spec, &x, &y, false)?.loss),
                    &theta,
                    &analytic,
                    g.step,
                )?
            }
            Problem::Landscape { spec, .. } => {
                if spec.is_stochastic() {
                    return Err(CliError::Config(ConfigError::Missing {
                        key: "landscape".into(),
                        message: "`gradcheck` needs a deterministic landscape".into(),
                    }));
                }
                let mut landscape = spec.build(seed)?;
                let mut rng = RngStream::new(seed);
                let theta = tamopt_core::ParamVector::new(rng.normal_vec(spec.dim()))?;
                let (_, analytic) = landscape.evaluate(&theta)?;
                check_gradient(|t| landscape.loss(t), &theta, &analytic, g.step)?
            }
        };
        worst = worst.max(check.max_rel_error);
        points.push(json!({
            "index": i,
            "max_rel_error": check.max_rel_error,
            "worst_index": check.worst_index,
        }));
    }
    let passed = worst < g.tolerance;
    let mut summary = json!({
        "command": Command::Gradcheck.name(),
        "step": g.step,
        "tolerance": g.tolerance,
        "max_rel_error": worst,
        "passed": passed,
        "points": points,
    });
    if let Problem::Mlp { spec, .. } = &ctx.cfg.problem {
        summary["layers"] = json!(spec.layer_sizes());
    }
    out.write_json("gradcheck.json", &summary)?;
    if !passed {
        return Err(CliError::GradcheckFailed {
            max_rel_error: worst,
            tolerance: g.tolerance,
        });
    }
    Ok(format!(
        "max_rel_error = {worst:.3e} over {} points (threshold {:e}): PASS",
        g.points, g.tolerance
    ))
}
