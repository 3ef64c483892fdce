//! Acceleration parameters `(α, β, γ)` and the spectral inputs they derive from.

use log::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelParams {
    pub mu: f64,
    pub nu: f64,
    /// Stepsize on the `x` update, in `(0, 2)`.
    pub omega: f64,
    /// Weight of `v` in the interpolation `y = αv + (1−α)x`.
    pub alpha: f64,
    /// Momentum retained by `v`.
    pub beta: f64,
    /// Extrapolation weight on the correction in the `v` update.
    pub gamma: f64,
    /// `2ω − ω²`.
    pub eta: f64,
    /// Guaranteed per-iteration contraction of the Lyapunov function.
    pub rho: f64,
}

fn check_spectral(mu: f64, nu: f64) -> Result<()> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mu = {mu} must be positive")));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidParameter(format!("nu = {nu} must be positive")));
    }
    if !lemma_bounds_hold(mu, nu) {
        warn!("(mu, nu) = ({mu:e}, {nu:e}) violates 1 <= nu <= 1/mu; proceeding");
    }
    Ok(())
}

/// `1 ≤ ν ≤ 1/μ`, the range every exact pair falls in.
pub fn lemma_bounds_hold(mu: f64, nu: f64) -> bool {
    nu >= 1.0 && nu <= 1.0 / mu
}

/// Parameters for stepsize `ω`:
/// `β = 1 − √(μη/ν)`, `γ = √(η/(μν))`, `α = 1/(1+γν)` with `η = 2ω − ω²`.
pub fn derive_params(mu: f64, nu: f64, omega: f64) -> Result<AccelParams> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::InvalidStepsize(omega));
    }
    check_spectral(mu, nu)?;
    let eta = 2.0 * omega - omega * omega;
    let beta = 1.0 - (mu * eta / nu).sqrt();
    let gamma = (eta / (mu * nu)).sqrt();
    let alpha = 1.0 / (1.0 + gamma * nu);
    Ok(AccelParams { mu, nu, omega, alpha, beta, gamma, eta, rho: beta })
}

/// The one-parameter family trading `α` against the rate; `s = 1` is [`derive_params`] with `ω = 1`.
///
/// `β(s)` is evaluated in the cancellation-free form
/// `2(1 − μ/ν) / (1 + s + √((s−1)² + 4μs/ν))`, algebraically equal to
/// `(1 + s − s√((ν + 4μs − 2νs + νs²)/(νs²))) / (2s)`.
pub fn params_from_s(mu: f64, nu: f64, s: f64) -> Result<AccelParams> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidFamilyParameter(s));
    }
    check_spectral(mu, nu)?;
    let ratio = mu / nu;
    let root = ((s - 1.0) * (s - 1.0) + 4.0 * ratio * s).sqrt();
    let beta = 2.0 * (1.0 - ratio) / (1.0 + s + root);
    let gamma = 1.0 / ((1.0 - s * beta) * nu);
    // s = (1 − α)/(α γ ν)
    let alpha = 1.0 / (1.0 + s * gamma * nu);
    Ok(AccelParams { mu, nu, omega: 1.0, alpha, beta, gamma, eta: 1.0, rho: beta.max(s * beta) })
}

impl AccelParams {
    /// Directly chosen `(α, β, γ)` with `ω = 1`; `μ`, `ν` and `ρ` are left undefined (NaN).
    pub fn explicit(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v}")));
            }
        }
        Ok(AccelParams { mu: f64::NAN, nu: f64::NAN, omega: 1.0, alpha, beta, gamma, eta: 1.0, rho: f64::NAN })
    }

    /// Rate of the non-accelerated method, `1 − μ`.
    pub fn plain_rate(&self) -> f64 {
        1.0 - self.mu
    }
}
