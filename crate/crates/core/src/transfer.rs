//! Effective learning rates and the SGDM → TAM learning-rate transfer.
//!
//! For large `t` SGDM moves like SGD with rate `η / (1 − β)`. If TAM's
//! smoothed similarity settles at `s*`, its damping settles at `(1 + s*) / 2`
//! and its effective rate is `(1 + s*) / (2 (1 − β)) · η`. Equating the two
//! gives the transfer rule. The ε floor is ignored throughout.

use crate::error::{Error, Result};

/// Stabilized similarity assumed when no measurement is available.
pub const DEFAULT_S_STAR: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferInputs {
    /// Tuned SGDM learning rate.
    pub eta_sgdm: f64,
    pub beta_sgdm: f64,
    pub beta_tam: f64,
    /// Stabilized similarity `s*` in `(-1, 1]`.
    pub s_star: f64,
}

impl TransferInputs {
    pub fn new(eta_sgdm: f64, beta_sgdm: f64, beta_tam: f64) -> Self {
        TransferInputs {
            eta_sgdm,
            beta_sgdm,
            beta_tam,
            s_star: DEFAULT_S_STAR,
        }
    }

    pub fn with_s_star(mut self, s_star: f64) -> Self {
        self.s_star = s_star;
        self
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::domain(format!("beta = {beta} outside [0, 1)")))
    }
}

fn check_s_star(s_star: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&s_star) {
        Ok(())
    } else {
        Err(Error::domain(format!("s* = {s_star} outside [-1, 1]")))
    }
}

/// `η / (1 − β)`.
pub fn eta_eff_sgdm(eta: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(eta / (1.0 - beta))
}

/// `(1 + s*) / (2 (1 − β)) · η`.
pub fn eta_eff_tam(eta: f64, beta: f64, s_star: f64) -> Result<f64> {
    check_beta(beta)?;
    check_s_star(s_star)?;
    Ok((1.0 + s_star) * eta / (2.0 * (1.0 - beta)))
}

/// TAM learning rate whose effective rate equals that of the given SGDM
/// setting: `2 (1 − β_TAM) / ((1 + s*) (1 − β_SGDM)) · η_SGDM`.
pub fn transfer_lr(inp: &TransferInputs) -> Result<f64> {
    check_beta(inp.beta_sgdm)?;
    check_beta(inp.beta_tam)?;
    check_s_star(inp.s_star)?;
    if inp.s_star == -1.0 {
        return Err(Error::domain("s* = -1 makes the TAM effective rate zero"));
    }
    if !(inp.eta_sgdm > 0.0 && inp.eta_sgdm.is_finite()) {
        return Err(Error::domain(format!("eta_sgdm = {} must be > 0", inp.eta_sgdm)));
    }
    // ratio first: equal betas give exactly 1, so s* = 0 doubles η exactly
    let beta_ratio = (1.0 - inp.beta_tam) / (1.0 - inp.beta_sgdm);
    Ok(2.0 * beta_ratio * inp.eta_sgdm / (1.0 + inp.s_star))
}
