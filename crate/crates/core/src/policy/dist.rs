//! Per-dimension action distributions: Beta on [0, 1] and diagonal Gaussian.
//!
//! Every function here works on a single dimension; joint densities are sums
//! of per-dimension log-densities.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Clamp margin η keeping Beta arguments away from {0, 1}.
pub const BOUNDARY_EPS: f64 = 1e-6;

/// ψ₁(x), the derivative of the digamma function, for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + 0.5 * inv2
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

fn check_shape(alpha: f64, beta: f64, floor: f64) -> Result<()> {
    if alpha > floor && beta > floor && alpha.is_finite() && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "Beta parameters must exceed {floor}, got alpha = {alpha}, beta = {beta}"
        )))
    }
}

/// ln Beta(a; α, β) with `a` clamped into [η, 1 − η].
pub fn beta_log_prob(a: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!("Beta argument {a} outside [0, 1]")));
    }
    check_shape(alpha, beta, 0.0)?;
    Ok(beta_log_prob_unchecked(a, alpha, beta))
}

pub(crate) fn beta_log_prob_unchecked(a: f64, alpha: f64, beta: f64) -> f64 {
    let a = a.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS);
    ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta)
        + (alpha - 1.0) * a.ln()
        + (beta - 1.0) * (1.0 - a).ln()
}

/// Partial derivatives of [`beta_log_prob`] with respect to (α, β, a).
///
/// The derivative in `a` is taken at the clamped argument.
pub fn beta_log_prob_grad(a: f64, alpha: f64, beta: f64) -> (f64, f64, f64) {
    let a = a.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS);
    let common = digamma(alpha + beta);
    (
        common - digamma(alpha) + a.ln(),
        common - digamma(beta) + (1.0 - a).ln(),
        (alpha - 1.0) / a - (beta - 1.0) / (1.0 - a),
    )
}

pub fn beta_mean(alpha: f64, beta: f64) -> Result<f64> {
    check_shape(alpha, beta, 1.0)?;
    Ok(alpha / (alpha + beta))
}

/// Draws `X/(X+Y)` with `X ~ Γ(α, 1)`, `Y ~ Γ(β, 1)`, clamped into (η, 1 − η).
pub fn beta_sample<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<f64> {
    check_shape(alpha, beta, 1.0)?;
    let ga = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let gb = Gamma::new(beta, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let x: f64 = ga.sample(rng);
    let y: f64 = gb.sample(rng);
    Ok((x / (x + y)).clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS))
}

/// Differential entropy of Beta(α, β).
pub fn beta_entropy(alpha: f64, beta: f64) -> Result<f64> {
    check_shape(alpha, beta, 1.0)?;
    Ok(beta_entropy_unchecked(alpha, beta))
}

pub(crate) fn beta_entropy_unchecked(alpha: f64, beta: f64) -> f64 {
    ln_beta(alpha, beta) - (alpha - 1.0) * digamma(alpha) - (beta - 1.0) * digamma(beta)
        + (alpha + beta - 2.0) * digamma(alpha + beta)
}

/// Partial derivatives of the Beta entropy with respect to (α, β).
pub fn beta_entropy_grad(alpha: f64, beta: f64) -> (f64, f64) {
    let t = (alpha + beta - 2.0) * trigamma(alpha + beta);
    (
        t - (alpha - 1.0) * trigamma(alpha),
        t - (beta - 1.0) * trigamma(beta),
    )
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("Gaussian sigma must be positive, got {sigma}")))
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn gaussian_log_prob(a: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(gaussian_log_prob_unchecked(a, mu, sigma.ln()))
}

pub(crate) fn gaussian_log_prob_unchecked(a: f64, mu: f64, log_sigma: f64) -> f64 {
    let z = (a - mu) * (-log_sigma).exp();
    -0.5 * z * z - log_sigma - HALF_LN_2PI
}

/// Partial derivatives of the Gaussian log-density with respect to (μ, ln σ).
pub fn gaussian_log_prob_grad(a: f64, mu: f64, log_sigma: f64) -> (f64, f64) {
    let inv_var = (-2.0 * log_sigma).exp();
    let diff = a - mu;
    (diff * inv_var, diff * diff * inv_var - 1.0)
}

pub fn gaussian_sample<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> Result<f64> {
    check_sigma(sigma)?;
    let n: f64 = StandardNormal.sample(rng);
    Ok(mu + sigma * n)
}

/// `½·ln(2πe) + ln σ`.
pub fn gaussian_entropy(log_sigma: f64) -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_sigma
}

/// Per-dimension physical action range `[a̲, ā]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActionBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::config("action_bounds", "lower/upper length mismatch"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u && l.is_finite() && u.is_finite()) {
                return Err(Error::config(
                    format!("action_bounds[{i}]"),
                    format!("degenerate range [{l}, {u}]"),
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric bounds `±max`.
    pub fn symmetric(max: &[f64]) -> Result<Self> {
        Self::new(max.iter().map(|m| -m).collect(), max.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// `a_n = (a − a̲)/(ā − a̲)`.
    pub fn normalize(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / (self.upper[i] - self.lower[i]))
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize); the result is clamped into
    /// the bounds so rounding can never leave them.
    pub fn denormalize(&self, a_n: &[f64]) -> Vec<f64> {
        a_n.iter()
            .enumerate()
            .map(|(i, v)| {
                (self.lower[i] + v * (self.upper[i] - self.lower[i])).clamp(self.lower[i], self.upper[i])
            })
            .collect()
    }
}

/// `clip(a_n + g, 0, 1)` with `g ~ U(−ε, ε)`.
pub fn rpo_perturb<R: Rng + ?Sized>(a_n: f64, epsilon: f64, rng: &mut R) -> f64 {
    if epsilon <= 0.0 {
        return a_n;
    }
    (a_n + rng.random_range(-epsilon..=epsilon)).clamp(0.0, 1.0)
}
