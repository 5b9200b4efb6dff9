//! Optimizer family as pure state machines.
//!
//! Every step function takes `(θ, g, state, hyperparams)` and returns the new
//! parameters, the new state and a telemetry record; nothing is mutated in
//! place. The torque-aware rules share one pipeline:
//!
//! ```text
//! S_t  = cos(m_{t-1}, g_t)                (0 when either norm is 0)
//! ŝ_t  = γ ŝ_{t-1} + (1 - γ) S_t
//! d_t  = (1 + ŝ_t) / 2
//! ```
//!
//! after which TAM, AdaTAM and AdaTAM2 differ only in how `(ε + d_t)` enters
//! the momentum recurrence and whether a second moment rescales the update.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::vecmath::{dot_slices, norm_slice, ParamVector};

/// How the gradient weight `d_t` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    /// `d_t = (1 + ŝ_t) / 2`.
    Torque,
    /// Constant `d_t`. `Fixed(1.0)` with `ε = 0` collapses TAM onto SGDM.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Learning rate η.
    pub eta: f64,
    /// Momentum coefficient β (β₁ for the adaptive rules).
    pub beta: f64,
    /// Decay γ of the smoothed similarity.
    pub gamma: f64,
    /// Floor ε added to the damping factor.
    pub epsilon: f64,
    /// Second-moment decay β₂.
    pub beta2: f64,
    /// Constant `c` in the adaptive denominator `√v + c`.
    pub c: f64,
    /// Decoupled weight decay λ; 0 disables it.
    pub weight_decay: f64,
    pub damping: Damping,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            eta: 0.1,
            beta: 0.9,
            gamma: 0.9,
            epsilon: 1e-8,
            beta2: 0.999,
            c: 1e-8,
            weight_decay: 0.0,
            damping: Damping::Torque,
        }
    }
}

impl HyperParams {
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_damping(mut self, damping: Damping) -> Self {
        self.damping = damping;
        self
    }

    /// Checks every field against its admissible range.
    ///
    /// `eta = 0` is accepted so that a frozen model can be evaluated through
    /// the same training loop.
    pub fn validate(&self) -> Result<()> {
        fn check(name: &str, value: f64, ok: bool, range: &str) -> Result<()> {
            if value.is_finite() && ok {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} = {value} outside {range}")))
            }
        }
        check("eta", self.eta, self.eta >= 0.0, "[0, inf)")?;
        check("beta", self.beta, (0.0..1.0).contains(&self.beta), "[0, 1)")?;
        check("gamma", self.gamma, (0.0..=1.0).contains(&self.gamma), "[0, 1]")?;
        check("epsilon", self.epsilon, self.epsilon >= 0.0, "[0, inf)")?;
        check("beta2", self.beta2, (0.0..1.0).contains(&self.beta2), "[0, 1)")?;
        check("c", self.c, self.c > 0.0, "(0, inf)")?;
        check("weight_decay", self.weight_decay, self.weight_decay >= 0.0, "[0, inf)")?;
        if let Damping::Fixed(d) = self.damping {
            check("damping", d, (0.0..=1.0).contains(&d), "[0, 1]")?;
        }
        Ok(())
    }
}

/// Mutable optimizer state, carried between steps by value.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Momentum `m`.
    pub m: ParamVector,
    /// Smoothed similarity `ŝ`.
    pub s_hat: f64,
    /// Second moment `v` (adaptive rules only; stays zero otherwise).
    pub v: ParamVector,
    /// Number of completed steps.
    pub t: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        OptimizerState {
            m: ParamVector::zeros(dim),
            s_hat: 0.0,
            v: ParamVector::zeros(dim),
            t: 0,
        }
    }

    /// Fresh state whose smoothed similarity starts at `s_hat` instead of 0.
    pub fn with_s_hat(dim: usize, s_hat: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&s_hat) {
            return Err(Error::domain(format!("s_hat = {s_hat} outside [-1, 1]")));
        }
        Ok(OptimizerState {
            s_hat,
            ..Self::new(dim)
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Applies the same index permutation as [`ParamVector::permuted`].
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Ok(OptimizerState {
            m: self.m.permuted(perm)?,
            s_hat: self.s_hat,
            v: self.v.permuted(perm)?,
            t: self.t,
        })
    }
}

/// One step's diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTelemetry {
    /// Index of this step, starting at 1.
    pub t: u64,
    /// Loss at the pre-step parameters. The step functions leave it NaN;
    /// whoever evaluated the objective fills it in.
    pub loss: f64,
    pub grad_norm: f64,
    /// Raw cosine `S_t`.
    pub cosine: f64,
    pub s_hat: f64,
    /// Damping factor `d_t`.
    pub damping: f64,
    pub m_norm: f64,
    /// `‖θ' − θ‖`.
    pub update_norm: f64,
}

impl StepTelemetry {
    pub fn bounds_hold(&self) -> bool {
        (-1.0..=1.0).contains(&self.cosine)
            && (-1.0..=1.0).contains(&self.s_hat)
            && (0.0..=1.0).contains(&self.damping)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub theta: ParamVector,
    pub state: OptimizerState,
    pub telemetry: StepTelemetry,
}

/// Registry of optimizer rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Sgdm,
    Tam,
    Adam,
    AdaTam,
    AdaTam2,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 6] = [
        OptimizerKind::Sgd,
        OptimizerKind::Sgdm,
        OptimizerKind::Tam,
        OptimizerKind::Adam,
        OptimizerKind::AdaTam,
        OptimizerKind::AdaTam2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::Tam => "tam",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdaTam => "adatam",
            OptimizerKind::AdaTam2 => "adatam2",
        }
    }

    /// Whether the update consumes `d_t`.
    pub fn is_torque_aware(self) -> bool {
        matches!(
            self,
            OptimizerKind::Tam | OptimizerKind::AdaTam | OptimizerKind::AdaTam2
        )
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown optimizer `{s}`")))
    }
}

/// Runs one step of `kind`, wrapping it in decoupled weight decay when
/// `hp.weight_decay > 0`.
pub fn step(
    kind: OptimizerKind,
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
) -> Result<StepOutput> {
    let inner = |theta: &ParamVector, g: &ParamVector, state: &OptimizerState, hp: &HyperParams| {
        match kind {
            OptimizerKind::Sgd => sgd_step_stateful(theta, g, state, hp),
            OptimizerKind::Sgdm => sgdm_step(theta, g, state, hp),
            OptimizerKind::Tam => tam_step(theta, g, state, hp),
            OptimizerKind::Adam => adam_step(theta, g, state, hp),
            OptimizerKind::AdaTam => adatam_step(theta, g, state, hp),
            OptimizerKind::AdaTam2 => adatam2_step(theta, g, state, hp),
        }
    };
    if hp.weight_decay > 0.0 {
        with_decoupled_weight_decay(inner, hp.weight_decay)?(theta, g, state, hp)
    } else {
        inner(theta, g, state, hp)
    }
}

/// Cosine of the angle between `m_prev` and `g`, clamped to `[-1, 1]`.
/// Returns 0 when either vector has zero norm.
pub fn cosine_similarity(m_prev: &ParamVector, g: &ParamVector) -> Result<f64> {
    Error::check_dims(m_prev.len(), g.len())?;
    Ok(cosine_slices(m_prev.as_slice(), g.as_slice()))
}

fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let na = norm_slice(a);
    let nb = norm_slice(b);
    let safe = |n: f64| n.is_finite() && n > 1e-150;
    if safe(na) && safe(nb) {
        return (dot_slices(a, b) / (na * nb)).clamp(-1.0, 1.0);
    }
    // squares overflowed or underflowed: rescale by the largest magnitude
    let scaled = |v: &[f64]| -> Option<Vec<f64>> {
        let max = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        (max > 0.0).then(|| v.iter().map(|x| x / max).collect())
    };
    match (scaled(a), scaled(b)) {
        (Some(a), Some(b)) => {
            (dot_slices(&a, &b) / (norm_slice(&a) * norm_slice(&b))).clamp(-1.0, 1.0)
        }
        _ => 0.0,
    }
}

struct Torque {
    cosine: f64,
    s_hat: f64,
    damping: f64,
}

fn torque(m_prev: &[f64], g: &[f64], s_hat_prev: f64, hp: &HyperParams) -> Torque {
    let cosine = cosine_slices(m_prev, g);
    let s_hat = hp.gamma * s_hat_prev + (1.0 - hp.gamma) * cosine;
    let damping = match hp.damping {
        Damping::Torque => (1.0 + s_hat) / 2.0,
        Damping::Fixed(d) => d,
    };
    debug_assert!((-1.0..=1.0).contains(&cosine), "S out of range: {cosine}");
    debug_assert!((-1.0..=1.0).contains(&s_hat), "s_hat out of range: {s_hat}");
    debug_assert!((0.0..=1.0).contains(&damping), "d out of range: {damping}");
    Torque {
        cosine,
        s_hat,
        damping,
    }
}

fn validate(
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
) -> Result<()> {
    hp.validate()?;
    let n = theta.len();
    Error::check_dims(n, g.len())?;
    Error::check_dims(n, state.m.len())?;
    Error::check_dims(n, state.v.len())?;
    if !state.s_hat.is_finite() {
        return Err(Error::NonFinite {
            field: "state.s_hat",
            index: 0,
        });
    }
    Ok(())
}

// Shared tail: package new θ/m/v into checked vectors and telemetry.
fn finish(
    theta: &ParamVector,
    g: &ParamVector,
    new_theta: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    s_hat: f64,
    t: u64,
    torque: &Torque,
) -> Result<StepOutput> {
    let m = ParamVector::checked("m", m)?;
    let v = ParamVector::checked("v", v)?;
    let new_theta = ParamVector::checked("theta", new_theta)?;
    let update_norm = update_norm(theta.as_slice(), new_theta.as_slice());
    let telemetry = StepTelemetry {
        t,
        loss: f64::NAN,
        grad_norm: norm_slice(g.as_slice()),
        cosine: torque.cosine,
        s_hat: torque.s_hat,
        damping: torque.damping,
        m_norm: norm_slice(m.as_slice()),
        update_norm,
    };
    Ok(StepOutput {
        theta: new_theta,
        state: OptimizerState { m, s_hat, v, t },
        telemetry,
    })
}

fn update_norm(before: &[f64], after: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in before.iter().zip(after) {
        let d = b - a;
        acc += d * d;
    }
    acc.sqrt()
}

/// Torque-aware momentum:
/// `m_t = β m_{t-1} + (ε + d_t) g_t`, `θ' = θ − η m_t`.
pub fn tam_step(
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
) -> Result<StepOutput> {
    validate(theta, g, state, hp)?;
    let tq = torque(state.m.as_slice(), g.as_slice(), state.s_hat, hp);
    let coef = hp.epsilon + tq.damping;
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(g.iter())
        .map(|(mi, gi)| hp.beta * mi + coef * gi)
        .collect();
    let new_theta = theta.iter().zip(&m).map(|(p, mi)| p - hp.eta * mi).collect();
    finish(
        theta,
        g,
        new_theta,
        m,
        state.v.as_slice().to_vec(),
        tq.s_hat,
        state.t + 1,
        &tq,
    )
}

/// Heavy-ball momentum: `m_t = β m_{t-1} + g_t`, `θ' = θ − η m_t`.
///
/// `S_t`, `ŝ_t` and `d_t` are tracked for telemetry only.
pub fn sgdm_step(
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
) -> Result<StepOutput> {
    validate(theta, g, state, hp)?;
    let tq = torque(state.m.as_slice(), g.as_slice(), state.s_hat, hp);
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(g.iter())
        .map(|(mi, gi)| hp.beta * mi + gi)
        .collect();
    let new_theta = theta.iter().zip(&m).map(|(p, mi)| p - hp.eta * mi).collect();
    finish(
        theta,
        g,
        new_theta,
        m,
        state.v.as_slice().to_vec(),
        tq.s_hat,
        state.t + 1,
        &tq,
    )
}

/// Plain SGD, `θ' = θ − η g`. Stateless; telemetry reports `S = ŝ = 0`,
/// `d = 1` and `‖m‖ = ‖g‖`.
pub fn sgd_step(
    theta: &ParamVector,
    g: &ParamVector,
    hp: &HyperParams,
) -> Result<(ParamVector, StepTelemetry)> {
    let out = sgd_step_stateful(theta, g, &OptimizerState::new(theta.len()), hp)?;
    Ok((out.theta, out.telemetry))
}

fn sgd_step_stateful(
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
) -> Result<StepOutput> {
    validate(theta, g, state, hp)?;
    let new_theta = ParamVector::checked(
        "theta",
        theta.iter().zip(g.iter()).map(|(p, gi)| p - hp.eta * gi).collect(),
    )?;
    let grad_norm = norm_slice(g.as_slice());
    let telemetry = StepTelemetry {
        t: state.t + 1,
        loss: f64::NAN,
        grad_norm,
        cosine: 0.0,
        s_hat: 0.0,
        damping: 1.0,
        m_norm: grad_norm,
        update_norm: update_norm(theta.as_slice(), new_theta.as_slice()),
    };
    Ok(StepOutput {
        theta: new_theta,
        state: OptimizerState {
            t: state.t + 1,
            ..state.clone()
        },
        telemetry,
    })
}

fn second_moment(v: &ParamVector, g: &ParamVector, beta2: f64) -> Vec<f64> {
    v.iter()
        .zip(g.iter())
        .map(|(vi, gi)| beta2 * vi + (1.0 - beta2) * gi * gi)
        .collect()
}

fn bias_correction(decay: f64, t: u64) -> f64 {
    1.0 - decay.powi(t.min(i32::MAX as u64) as i32)
}

/// Adam with bias correction on both moments:
/// `θ' = θ − η m̂ / (√v̂ + c)`.
pub fn adam_step(
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
) -> Result<StepOutput> {
    validate(theta, g, state, hp)?;
    let tq = torque(state.m.as_slice(), g.as_slice(), state.s_hat, hp);
    let t = state.t + 1;
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(g.iter())
        .map(|(mi, gi)| hp.beta * mi + (1.0 - hp.beta) * gi)
        .collect();
    let v = second_moment(&state.v, g, hp.beta2);
    let bc1 = bias_correction(hp.beta, t);
    let bc2 = bias_correction(hp.beta2, t);
    let new_theta = theta
        .iter()
        .zip(m.iter().zip(&v))
        .map(|(p, (mi, vi))| p - hp.eta * (mi / bc1) / ((vi / bc2).sqrt() + hp.c))
        .collect();
    finish(theta, g, new_theta, m, v, tq.s_hat, t, &tq)
}

/// AdaTAM: TAM momentum with Adam's second moment and no bias correction:
/// `θ' = θ − η m_t / (√v_t + c)`.
pub fn adatam_step(
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
) -> Result<StepOutput> {
    validate(theta, g, state, hp)?;
    let tq = torque(state.m.as_slice(), g.as_slice(), state.s_hat, hp);
    let coef = hp.epsilon + tq.damping;
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(g.iter())
        .map(|(mi, gi)| hp.beta * mi + coef * gi)
        .collect();
    adaptive_finish(theta, g, state, hp, m, tq)
}

/// AdaTAM2: exponential-moving-average momentum
/// `m_t = (1 − (ε + d_t)) m_{t-1} + (ε + d_t) g_t`.
///
/// The complement `1 − (ε + d_t)` is used as written; at `d_t = 1` it equals
/// `−ε`.
pub fn adatam2_step(
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
) -> Result<StepOutput> {
    validate(theta, g, state, hp)?;
    let tq = torque(state.m.as_slice(), g.as_slice(), state.s_hat, hp);
    let coef = hp.epsilon + tq.damping;
    let keep = 1.0 - coef;
    let m: Vec<f64> = state
        .m
        .iter()
        .zip(g.iter())
        .map(|(mi, gi)| keep * mi + coef * gi)
        .collect();
    adaptive_finish(theta, g, state, hp, m, tq)
}

fn adaptive_finish(
    theta: &ParamVector,
    g: &ParamVector,
    state: &OptimizerState,
    hp: &HyperParams,
    m: Vec<f64>,
    tq: Torque,
) -> Result<StepOutput> {
    let v = second_moment(&state.v, g, hp.beta2);
    let new_theta = theta
        .iter()
        .zip(m.iter().zip(&v))
        .map(|(p, (mi, vi))| p - hp.eta * mi / (vi.sqrt() + hp.c))
        .collect();
    finish(theta, g, new_theta, m, v, tq.s_hat, state.t + 1, &tq)
}

/// Wraps a step rule with decoupled weight decay: after the inner update,
/// `θ' ← θ' − η λ θ` where `θ` is the pre-step parameter.
pub fn with_decoupled_weight_decay<F>(
    inner: F,
    lambda: f64,
) -> Result<impl Fn(&ParamVector, &ParamVector, &OptimizerState, &HyperParams) -> Result<StepOutput>>
where
    F: Fn(&ParamVector, &ParamVector, &OptimizerState, &HyperParams) -> Result<StepOutput>,
{
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("weight decay {lambda} must be >= 0")));
    }
    Ok(move |theta: &ParamVector, g: &ParamVector, state: &OptimizerState, hp: &HyperParams| {
        let mut out = inner(theta, g, state, hp)?;
        if lambda == 0.0 {
            return Ok(out);
        }
        let decay = hp.eta * lambda;
        let decayed = out
            .theta
            .iter()
            .zip(theta.iter())
            .map(|(p, p0)| p - decay * p0)
            .collect();
        out.theta = ParamVector::checked("theta", decayed)?;
        out.telemetry.update_norm = update_norm(theta.as_slice(), out.theta.as_slice());
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::RngStream;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn state_with(m: &[f64], s_hat: f64) -> OptimizerState {
        OptimizerState {
            m: pv(m),
            s_hat,
            v: ParamVector::zeros(m.len()),
            t: 0,
        }
    }

    // Scalar re-statement of the TAM recurrence, written against raw slices.
    fn tam_oracle(
        theta: &mut [f64],
        m: &mut [f64],
        s_hat: &mut f64,
        g: &[f64],
        eta: f64,
        beta: f64,
        gamma: f64,
        eps: f64,
    ) {
        let mut mg = 0.0;
        let mut mm = 0.0;
        let mut gg = 0.0;
        for i in 0..g.len() {
            mg += m[i] * g[i];
            mm += m[i] * m[i];
            gg += g[i] * g[i];
        }
        let s = if mm == 0.0 || gg == 0.0 {
            0.0
        } else {
            (mg / (mm.sqrt() * gg.sqrt())).clamp(-1.0, 1.0)
        };
        *s_hat = gamma * *s_hat + (1.0 - gamma) * s;
        let d = 0.5 * (1.0 + *s_hat);
        for i in 0..g.len() {
            m[i] = beta * m[i] + (eps + d) * g[i];
            theta[i] -= eta * m[i];
        }
    }

    #[test]
    fn hyperparam_defaults() {
        let hp = HyperParams::default();
        assert_eq!(hp.gamma, 0.9);
        assert_eq!(hp.epsilon, 1e-8);
        assert_eq!(hp.beta, 0.9);
        assert_eq!(hp.beta2, 0.999);
        assert_eq!(hp.c, 1e-8);
        assert_eq!(hp.weight_decay, 0.0);
        assert!(hp.validate().is_ok());
        assert!(hp.with_gamma(1.5).validate().is_err());
        assert!(hp.with_beta(1.0).validate().is_err());
    }

    #[test]
    fn cosine_examples() {
        let c = |a: &[f64], b: &[f64]| cosine_similarity(&pv(a), &pv(b)).unwrap();
        assert_eq!(c(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(c(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(c(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert_eq!(c(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
        assert!(cosine_similarity(&pv(&[1.0]), &pv(&[1.0, 2.0])).is_err());
        // extreme magnitudes
        assert!((c(&[1e200, 1e200], &[3e200, 3e200]) - 1.0).abs() < 1e-15);
        assert!((c(&[1e-200, 0.0], &[1e-200, 1e-200]) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((c(&[1e300, 0.0], &[1e-300, -1e-300]) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tam_first_step_from_rest() {
        let hp = HyperParams {
            eta: 1.0,
            beta: 0.9,
            gamma: 0.9,
            epsilon: 0.0,
            ..Default::default()
        };
        let out = tam_step(&pv(&[0.0]), &pv(&[1.0]), &OptimizerState::new(1), &hp).unwrap();
        assert_eq!(out.telemetry.cosine, 0.0);
        assert_eq!(out.telemetry.s_hat, 0.0);
        assert_eq!(out.telemetry.damping, 0.5);
        assert_eq!(out.state.m[0], 0.5);
        assert_eq!(out.theta[0], -0.5);
        assert_eq!(out.state.t, 1);
    }

    #[test]
    fn tam_aligned_and_opposed() {
        let hp = HyperParams::default().with_gamma(0.0);
        let aligned = tam_step(&pv(&[0.0]), &pv(&[1.0]), &state_with(&[1.0], 0.3), &hp).unwrap();
        assert_eq!(aligned.telemetry.cosine, 1.0);
        assert_eq!(aligned.telemetry.damping, 1.0);
        assert_eq!(aligned.state.m[0], 0.9 + (1e-8 + 1.0));

        let opposed = tam_step(&pv(&[0.0]), &pv(&[-1.0]), &state_with(&[1.0], 0.3), &hp).unwrap();
        assert_eq!(opposed.telemetry.s_hat, -1.0);
        assert_eq!(opposed.telemetry.damping, 0.0);
        assert_eq!(opposed.state.m[0], 0.9 - 1e-8);
    }

    #[test]
    fn tam_matches_scalar_oracle_on_random_2d_steps() {
        let hp = HyperParams::default();
        let mut rng = RngStream::new(11);
        let mut theta = pv(&[0.3, -0.7]);
        let mut state = OptimizerState::new(2);
        let (mut o_theta, mut o_m, mut o_s) = (vec![0.3, -0.7], vec![0.0; 2], 0.0);
        for _ in 0..5 {
            let g = rng.normal_vec(2);
            let out = tam_step(&theta, &pv(&g), &state, &hp).unwrap();
            tam_oracle(&mut o_theta, &mut o_m, &mut o_s, &g, hp.eta, hp.beta, hp.gamma, hp.epsilon);
            for i in 0..2 {
                assert!((out.theta[i] - o_theta[i]).abs() <= 1e-12);
                assert!((out.state.m[i] - o_m[i]).abs() <= 1e-12);
            }
            theta = out.theta;
            state = out.state;
        }
    }

    #[test]
    fn sgdm_examples() {
        let hp = HyperParams::default().with_eta(0.1);
        let out = sgdm_step(&pv(&[0.0]), &pv(&[1.0]), &state_with(&[1.0], 0.0), &hp).unwrap();
        assert_eq!(out.state.m[0], 1.9);
        assert!((out.theta[0] + 0.19).abs() < 1e-15);

        let hp0 = hp.with_beta(0.0);
        let g = pv(&[1.0, -2.0]);
        let out = sgdm_step(&pv(&[1.0, 1.0]), &g, &state_with(&[5.0, 5.0], 0.0), &hp0).unwrap();
        assert_eq!(out.theta, pv(&[1.0 - 0.1, 1.0 + 0.1 * 2.0]));
    }

    #[test]
    fn sgd_examples() {
        let hp = HyperParams::default().with_eta(0.1);
        let (theta, _) = sgd_step(&pv(&[0.0, 0.0]), &pv(&[1.0, -2.0]), &hp).unwrap();
        assert_eq!(theta, pv(&[-0.1, 0.2]));
        let (theta, tel) = sgd_step(&pv(&[0.5, 0.25]), &ParamVector::zeros(2), &hp).unwrap();
        assert_eq!(theta, pv(&[0.5, 0.25]));
        assert_eq!(tel.update_norm, 0.0);
    }

    #[test]
    fn sgd_equals_sgdm_without_momentum() {
        let hp = HyperParams::default().with_eta(0.05).with_beta(0.0);
        let mut rng = RngStream::new(2);
        let mut a = pv(&[1.0, 2.0, 3.0]);
        let mut b = a.clone();
        let mut state = OptimizerState::new(3);
        for _ in 0..100 {
            let g = pv(&rng.normal_vec(3));
            a = sgd_step(&a, &g, &hp).unwrap().0;
            let out = sgdm_step(&b, &g, &state, &hp).unwrap();
            b = out.theta;
            state = out.state;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn tam_with_unit_damping_is_sgdm_bitwise() {
        let sgdm_hp = HyperParams::default().with_eta(0.03);
        let tam_hp = sgdm_hp.with_epsilon(0.0).with_damping(Damping::Fixed(1.0));
        let mut rng = RngStream::new(5);
        let mut ta = pv(&[0.1, -0.2, 0.3, 0.0]);
        let mut tb = ta.clone();
        let (mut sa, mut sb) = (OptimizerState::new(4), OptimizerState::new(4));
        for _ in 0..100 {
            let g = pv(&rng.normal_vec(4));
            let a = tam_step(&ta, &g, &sa, &tam_hp).unwrap();
            let b = sgdm_step(&tb, &g, &sb, &sgdm_hp).unwrap();
            assert_eq!(a.theta, b.theta);
            assert_eq!(a.state.m, b.state.m);
            (ta, sa, tb, sb) = (a.theta, a.state, b.theta, b.state);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let hp = HyperParams::default().with_eta(1e-3);
        let theta = pv(&[0.4, -1.0]);
        let out = adam_step(&theta, &ParamVector::zeros(2), &OptimizerState::new(2), &hp).unwrap();
        assert_eq!(out.theta, theta);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_eta() {
        let hp = HyperParams {
            eta: 1e-3,
            c: 1e-12,
            ..Default::default()
        };
        let g = pv(&[0.5, -3.0]);
        let mut theta = pv(&[0.0, 0.0]);
        let mut state = OptimizerState::new(2);
        let mut last = (0.0, 0.0);
        for _ in 0..5000 {
            let out = adam_step(&theta, &g, &state, &hp).unwrap();
            last = (out.theta[0] - theta[0], out.theta[1] - theta[1]);
            theta = out.theta;
            state = out.state;
        }
        assert!((last.0.abs() - 1e-3).abs() < 1e-9);
        assert!((last.1.abs() - 1e-3).abs() < 1e-9);
        assert!(last.0 < 0.0 && last.1 > 0.0);
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let hp = HyperParams::default().with_eta(1e-2);
        let mut rng = RngStream::new(13);
        let mut theta = pv(&[1.0, -1.0]);
        let mut state = OptimizerState::new(2);
        let (mut ot, mut om, mut ov) = ([1.0, -1.0], [0.0; 2], [0.0; 2]);
        for t in 1..=3 {
            let g = rng.normal_vec(2);
            let out = adam_step(&theta, &pv(&g), &state, &hp).unwrap();
            let (b1, b2) = (hp.beta, hp.beta2);
            let mut c1 = 1.0;
            let mut c2 = 1.0;
            for _ in 0..t {
                c1 *= b1;
                c2 *= b2;
            }
            for i in 0..2 {
                om[i] = b1 * om[i] + (1.0 - b1) * g[i];
                ov[i] = b2 * ov[i] + (1.0 - b2) * g[i] * g[i];
                let mh = om[i] / (1.0 - c1);
                let vh = ov[i] / (1.0 - c2);
                ot[i] -= hp.eta * mh / (vh.sqrt() + hp.c);
                assert!((out.theta[i] - ot[i]).abs() <= 1e-12);
            }
            theta = out.theta;
            state = out.state;
        }
    }

    #[test]
    fn adatam_zero_gradient_from_rest_is_noop() {
        let theta = pv(&[2.0, 3.0]);
        let out = adatam_step(
            &theta,
            &ParamVector::zeros(2),
            &OptimizerState::new(2),
            &HyperParams::default(),
        )
        .unwrap();
        assert_eq!(out.theta, theta);
    }

    #[test]
    fn adatam_with_unit_damping_uses_sgdm_momentum() {
        let hp = HyperParams::default()
            .with_epsilon(0.0)
            .with_damping(Damping::Fixed(1.0));
        let mut rng = RngStream::new(17);
        let mut theta = pv(&[0.0; 3]);
        let mut state = OptimizerState::new(3);
        let mut m_ref = [0.0; 3];
        for _ in 0..10 {
            let g = rng.normal_vec(3);
            let out = adatam_step(&theta, &pv(&g), &state, &hp).unwrap();
            for i in 0..3 {
                m_ref[i] = hp.beta * m_ref[i] + g[i];
                assert_eq!(out.state.m[i], m_ref[i]);
            }
            theta = out.theta;
            state = out.state;
        }
    }

    #[test]
    fn adatam_matches_scalar_oracle() {
        let hp = HyperParams::default().with_eta(1e-2);
        let mut rng = RngStream::new(19);
        let mut theta = pv(&[0.5, 0.5]);
        let mut state = OptimizerState::new(2);
        let (mut ot, mut om, mut ov, mut os) = (vec![0.5, 0.5], vec![0.0; 2], [0.0; 2], 0.0);
        for _ in 0..5 {
            let g = rng.normal_vec(2);
            let out = adatam_step(&theta, &pv(&g), &state, &hp).unwrap();
            // reuse the TAM oracle for m and ŝ with η=0, then apply the
            // adaptive update by hand
            let mut scratch = ot.clone();
            tam_oracle(&mut scratch, &mut om, &mut os, &g, 0.0, hp.beta, hp.gamma, hp.epsilon);
            for i in 0..2 {
                ov[i] = hp.beta2 * ov[i] + (1.0 - hp.beta2) * g[i] * g[i];
                ot[i] -= hp.eta * om[i] / (ov[i].sqrt() + hp.c);
                assert!((out.theta[i] - ot[i]).abs() <= 1e-12);
            }
            theta = out.theta;
            state = out.state;
        }
    }

    #[test]
    fn adatam2_extremes() {
        let g = pv(&[0.7, -0.2]);
        let m_prev = [0.3, 0.9];
        let full = HyperParams::default()
            .with_epsilon(0.0)
            .with_damping(Damping::Fixed(1.0));
        let out = adatam2_step(&pv(&[0.0, 0.0]), &g, &state_with(&m_prev, 0.0), &full).unwrap();
        assert_eq!(out.state.m, g);

        let frozen = full.with_damping(Damping::Fixed(0.0));
        let out = adatam2_step(&pv(&[0.0, 0.0]), &g, &state_with(&m_prev, 0.0), &frozen).unwrap();
        assert_eq!(out.state.m, pv(&m_prev));
    }

    #[test]
    fn adatam2_complement_goes_negative_at_full_alignment() {
        let hp = HyperParams::default().with_gamma(0.0).with_epsilon(1e-3);
        let out = adatam2_step(&pv(&[0.0]), &pv(&[2.0]), &state_with(&[1.0], 0.0), &hp).unwrap();
        assert_eq!(out.telemetry.damping, 1.0);
        let coef = 1e-3 + 1.0;
        assert_eq!(out.state.m[0], (1.0 - coef) * 1.0 + coef * 2.0);
    }

    #[test]
    fn weight_decay_wrapper() {
        let hp = HyperParams::default().with_eta(1.0);
        let inner = |t: &ParamVector, g: &ParamVector, s: &OptimizerState, hp: &HyperParams| {
            sgd_step_stateful(t, g, s, hp)
        };
        let wrapped = with_decoupled_weight_decay(inner, 0.1).unwrap();
        let out = wrapped(&pv(&[1.0]), &pv(&[0.0]), &OptimizerState::new(1), &hp).unwrap();
        assert!((out.theta[0] - 0.9).abs() < 1e-15);

        let plain = with_decoupled_weight_decay(inner, 0.0).unwrap();
        let g = pv(&[0.3]);
        let a = plain(&pv(&[1.0]), &g, &OptimizerState::new(1), &hp).unwrap();
        let b = inner(&pv(&[1.0]), &g, &OptimizerState::new(1), &hp).unwrap();
        assert_eq!((a.theta, a.state), (b.theta, b.state));
        assert!(with_decoupled_weight_decay(inner, -1.0).is_err());
    }

    #[test]
    fn adamw_differs_from_l2_regularized_adam() {
        let curv = [1.0, 10.0, 100.0];
        let lambda = 0.1;
        let hp = HyperParams::default().with_eta(1e-2);
        let hp_w = hp.with_weight_decay(lambda);
        let mut tw = pv(&[1.0, 1.0, 1.0]);
        let mut tl = tw.clone();
        let (mut sw, mut sl) = (OptimizerState::new(3), OptimizerState::new(3));
        let mut max_gap: f64 = 0.0;
        for _ in 0..50 {
            let gw = pv(&[curv[0] * tw[0], curv[1] * tw[1], curv[2] * tw[2]]);
            let gl = pv(&(0..3).map(|i| curv[i] * tl[i] + lambda * tl[i]).collect::<Vec<_>>());
            let a = step(OptimizerKind::Adam, &tw, &gw, &sw, &hp_w).unwrap();
            let b = step(OptimizerKind::Adam, &tl, &gl, &sl, &hp).unwrap();
            (tw, sw, tl, sl) = (a.theta, a.state, b.theta, b.state);
            for i in 0..3 {
                max_gap = max_gap.max((tw[i] - tl[i]).abs());
            }
        }
        assert!(max_gap > 1e-6, "trajectories coincide: {max_gap}");
    }

    #[test]
    fn non_finite_result_names_field() {
        let hp = HyperParams::default().with_eta(1e300);
        let err = sgdm_step(&pv(&[1e300]), &pv(&[1e300]), &OptimizerState::new(1), &hp).unwrap_err();
        assert!(matches!(err, Error::NonFinite { field: "theta", .. }));
        let mut state = OptimizerState::new(1);
        state.s_hat = f64::NAN;
        let err = tam_step(&pv(&[0.0]), &pv(&[1.0]), &state, &HyperParams::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { field: "state.s_hat", .. }));
    }

    #[test]
    fn momentum_is_affine_in_damping() {
        let m_prev = state_with(&[0.3, -1.1, 2.0], 0.2);
        let g = pv(&[0.25, 0.5, -0.75]);
        let hp = HyperParams::default();
        let one = tam_step(&pv(&[0.0; 3]), &g, &m_prev, &hp.with_damping(Damping::Fixed(1.0))).unwrap();
        let zero = tam_step(&pv(&[0.0; 3]), &g, &m_prev, &hp.with_damping(Damping::Fixed(0.0))).unwrap();
        for i in 0..3 {
            let diff = one.state.m[i] - zero.state.m[i];
            assert!((diff - g[i]).abs() <= 1e-15, "{diff} vs {}", g[i]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn torque_bounds_hold(seed in any::<u64>(), gamma in 0.0f64..=1.0, kind_idx in 0usize..6) {
            let kind = OptimizerKind::ALL[kind_idx];
            let hp = HyperParams::default().with_gamma(gamma).with_eta(1e-3);
            let mut rng = RngStream::new(seed);
            let mut theta = pv(&rng.normal_vec(4));
            let mut state = OptimizerState::new(4);
            for _ in 0..20 {
                let g = pv(&rng.normal_vec(4));
                let out = step(kind, &theta, &g, &state, &hp).unwrap();
                prop_assert!(out.telemetry.bounds_hold());
                prop_assert!((-1.0..=1.0).contains(&out.state.s_hat));
                theta = out.theta;
                state = out.state;
            }
        }

        #[test]
        fn permutation_equivariance(seed in any::<u64>(), kind_idx in 0usize..6) {
            let kind = OptimizerKind::ALL[kind_idx];
            let n = 6;
            let hp = HyperParams::default().with_eta(1e-2);
            let mut rng = RngStream::new(seed);
            let perm = rng.sample_indices(n, n);
            let mut theta = pv(&rng.normal_vec(n));
            let mut state = OptimizerState::new(n);
            let mut p_theta = theta.permuted(&perm).unwrap();
            let mut p_state = state.permuted(&perm).unwrap();
            for _ in 0..5 {
                let g = pv(&rng.normal_vec(n));
                let a = step(kind, &theta, &g, &state, &hp).unwrap();
                let b = step(kind, &p_theta, &g.permuted(&perm).unwrap(), &p_state, &hp).unwrap();
                let a_perm = a.theta.permuted(&perm).unwrap();
                for i in 0..n {
                    prop_assert!((a_perm[i] - b.theta[i]).abs() <= 1e-12);
                }
                theta = a.theta;
                state = a.state;
                p_theta = b.theta;
                p_state = b.state;
            }
        }
    }
}
