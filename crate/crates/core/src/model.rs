//! Gaussian linear model and its population losses.
//!
//! Data follow `Y = <X, theta_opt> + W` with `X ~ N(0, Sigma)` and
//! `W ~ N(0, sigma_w^2)`. For an attacker bounded in `l_p` with budget `eps`
//! the population adversarial loss has the closed form
//!
//! ```text
//! L_{p,eps}(theta) = c2 * s^2 + (c1 * s + eps * ||theta||_q)^2
//! s^2 = (theta - theta_opt)' Sigma (theta - theta_opt) + sigma_w^2
//! ```
//!
//! where `q` is the dual exponent of `p`, `c1 = sqrt(2/pi)` and `c2 = 1 - c1^2`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue slack accepted when checking that a covariance is PSD.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// One of the three supported vector norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    LInf,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::L1, Norm::L2, Norm::LInf];

    pub fn from_exponent(p: f64) -> Result<Norm> {
        if p == 1.0 {
            Ok(Norm::L1)
        } else if p == 2.0 {
            Ok(Norm::L2)
        } else if p == f64::INFINITY {
            Ok(Norm::LInf)
        } else {
            Err(Error::UnsupportedNorm(p))
        }
    }

    pub fn exponent(self) -> f64 {
        match self {
            Norm::L1 => 1.0,
            Norm::L2 => 2.0,
            Norm::LInf => f64::INFINITY,
        }
    }

    /// The norm `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::LInf,
            Norm::L2 => Norm::L2,
            Norm::LInf => Norm::L1,
        }
    }

    pub fn of(self, v: &DVector<f64>) -> f64 {
        self.of_slice(v.as_slice())
    }

    pub fn of_slice(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::LInf => v.iter().fold(0.0, |acc, x| acc.max(x.abs())),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::LInf => "linf",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Norm> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(Norm::L1),
            "l2" | "2" => Ok(Norm::L2),
            "linf" | "inf" | "l_inf" => Ok(Norm::LInf),
            other => Err(Error::InvalidOption(format!("unknown norm '{other}'"))),
        }
    }
}

/// Dual exponent of `p` for `p` in {1, 2, inf}.
pub fn dual_exponent(p: f64) -> Result<f64> {
    Norm::from_exponent(p).map(|n| n.dual().exponent())
}

/// Attack norm and budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub norm: Norm,
    pub epsilon: f64,
}

impl AttackSpec {
    pub fn new(norm: Norm, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidBudget(epsilon));
        }
        Ok(AttackSpec { norm, epsilon })
    }

    pub fn dual(&self) -> Norm {
        self.norm.dual()
    }

    fn validate(&self) -> Result<()> {
        AttackSpec::new(self.norm, self.epsilon).map(|_| ())
    }
}

/// The two constants of the closed-form loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConstants {
    pub c1: f64,
    pub c2: f64,
}

impl LossConstants {
    /// `c1 = E|Z|` for standard normal `Z`, `c2 = 1 - c1^2`.
    pub fn gaussian() -> Self {
        Self::with_c1((2.0 / std::f64::consts::PI).sqrt())
    }

    /// Constants built from an arbitrary `c1`; used for fault injection.
    pub fn with_c1(c1: f64) -> Self {
        LossConstants {
            c1,
            c2: 1.0 - c1 * c1,
        }
    }
}

impl Default for LossConstants {
    fn default() -> Self {
        Self::gaussian()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinearModel {
    sigma: DMatrix<f64>,
    theta_opt: DVector<f64>,
    sigma_w: f64,
    core_set: Vec<usize>,
}

impl GaussianLinearModel {
    pub fn new(
        sigma: DMatrix<f64>,
        theta_opt: DVector<f64>,
        sigma_w: f64,
        core_set: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let m = theta_opt.len();
        if sigma.nrows() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: sigma.nrows(),
            });
        }
        if sigma.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: sigma.ncols(),
            });
        }
        if !(sigma_w > 0.0 && sigma_w.is_finite()) {
            return Err(Error::InvalidNoise(sigma_w));
        }
        let scale = sigma.amax().max(1.0);
        if (&sigma - sigma.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotSymmetric);
        }
        if m > 0 {
            let min_eig = sigma.clone().symmetric_eigenvalues().min();
            if min_eig < -PSD_TOLERANCE {
                return Err(Error::NotPsd(min_eig));
            }
        }
        let mut core_set: Vec<usize> = core_set.into_iter().collect();
        core_set.sort_unstable();
        core_set.dedup();
        if let Some(&index) = core_set.iter().find(|&&i| i >= m) {
            return Err(Error::CoreIndexOutOfRange { index, dim: m });
        }
        for (i, &t) in theta_opt.iter().enumerate() {
            if t != 0.0 && core_set.binary_search(&i).is_err() {
                return Err(Error::ThetaOutsideCore(i));
            }
        }
        Ok(GaussianLinearModel {
            sigma,
            theta_opt,
            sigma_w,
            core_set,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_opt.len()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn theta_opt(&self) -> &DVector<f64> {
        &self.theta_opt
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn core_set(&self) -> &[usize] {
        &self.core_set
    }

    pub fn is_core(&self, i: usize) -> bool {
        self.core_set.binary_search(&i).is_ok()
    }

    /// Complement of the core set.
    pub fn spurious_set(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| !self.is_core(i)).collect()
    }

    /// Same model with a different covariance (labels unchanged).
    pub fn with_sigma(&self, sigma: DMatrix<f64>) -> Result<Self> {
        GaussianLinearModel::new(
            sigma,
            self.theta_opt.clone(),
            self.sigma_w,
            self.core_set.clone(),
        )
    }

    pub(crate) fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `(theta - theta_opt)' Sigma (theta - theta_opt)` without the noise term.
    pub(crate) fn excess_risk(&self, theta: &DVector<f64>) -> f64 {
        excess_risk_under(&self.sigma, &self.theta_opt, theta)
    }
}

pub(crate) fn excess_risk_under(
    sigma: &DMatrix<f64>,
    theta_opt: &DVector<f64>,
    theta: &DVector<f64>,
) -> f64 {
    let d = theta - theta_opt;
    let q = (sigma * &d).dot(&d);
    // Rounding can push a PSD quadratic form a hair below zero.
    q.max(0.0)
}

/// Standard deviation of the residual `Y - <X, theta>`.
pub fn sigma_theta(model: &GaussianLinearModel, theta: &DVector<f64>) -> Result<f64> {
    model.check_dim(theta)?;
    Ok((model.excess_risk(theta) + model.sigma_w * model.sigma_w).sqrt())
}

pub fn standard_loss(model: &GaussianLinearModel, theta: &DVector<f64>) -> Result<f64> {
    model.check_dim(theta)?;
    Ok(model.excess_risk(theta) + model.sigma_w * model.sigma_w)
}

pub fn adversarial_loss_closed_form(
    model: &GaussianLinearModel,
    theta: &DVector<f64>,
    attack: &AttackSpec,
) -> Result<f64> {
    adversarial_loss_with_constants(model, theta, attack, &LossConstants::gaussian())
}

pub fn adversarial_loss_with_constants(
    model: &GaussianLinearModel,
    theta: &DVector<f64>,
    attack: &AttackSpec,
    constants: &LossConstants,
) -> Result<f64> {
    model.check_dim(theta)?;
    Ok(LossEvaluator::new(model, attack, *constants)?.eval(theta.as_slice()))
}

/// Closed-form adversarial loss for a fixed model and attack, evaluated
/// without allocating. Suited to dense grid scans.
pub struct LossEvaluator<'a> {
    model: &'a GaussianLinearModel,
    attack: AttackSpec,
    constants: LossConstants,
}

impl<'a> LossEvaluator<'a> {
    pub fn new(
        model: &'a GaussianLinearModel,
        attack: &AttackSpec,
        constants: LossConstants,
    ) -> Result<Self> {
        attack.validate()?;
        Ok(LossEvaluator {
            model,
            attack: *attack,
            constants,
        })
    }

    /// Panics if `theta.len()` differs from the model dimension.
    pub fn eval(&self, theta: &[f64]) -> f64 {
        let m = self.model.dim();
        assert_eq!(theta.len(), m, "dimension mismatch");
        let sigma = &self.model.sigma;
        let opt = self.model.theta_opt.as_slice();
        let mut quad = 0.0;
        for j in 0..m {
            let dj = theta[j] - opt[j];
            let mut col = 0.0;
            for i in 0..m {
                col += sigma[(i, j)] * (theta[i] - opt[i]);
            }
            quad += col * dj;
        }
        let s = (quad.max(0.0) + self.model.sigma_w * self.model.sigma_w).sqrt();
        let shifted =
            self.constants.c1 * s + self.attack.epsilon * self.attack.dual().of_slice(theta);
        self.constants.c2 * s * s + shifted * shifted
    }
}

/// Element `u` of the unit ball of `ball` with `<u, v> = ||v||_{ball.dual()}`.
///
/// Zero coordinates get zero weight, and for the `l1` ball ties on `|v_i|`
/// go to the lowest index. Returns the zero vector when `v = 0`.
pub fn holder_maximizer(v: &DVector<f64>, ball: Norm) -> DVector<f64> {
    let mut u = DVector::zeros(v.len());
    match ball {
        Norm::LInf => {
            for (ui, vi) in u.iter_mut().zip(v.iter()) {
                *ui = sign_or_zero(*vi);
            }
        }
        Norm::L2 => {
            let n = v.norm();
            if n > 0.0 {
                u = v / n;
            }
        }
        Norm::L1 => {
            if let Some(i) = argmax_abs(v) {
                u[i] = sign_or_zero(v[i]);
            }
        }
    }
    u
}

/// First index attaining `max |v_i|`, or `None` when `v` is all zeros.
pub(crate) fn argmax_abs(v: &DVector<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.iter().enumerate() {
        let a = x.abs();
        if a > 0.0 && best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

fn sign_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_pair(x: &DVector<f64>, theta: &DVector<f64>) -> Result<()> {
    if x.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Perturbation inside the `l_p` ball of radius `eps` maximizing the squared
/// residual `(y - <x + delta, theta>)^2`.
///
/// With `r = y - <x, theta>` the result satisfies
/// `<delta, theta> = -sign(r) * eps * ||theta||_q`, where `sign(0) = +1`.
pub fn worst_case_delta(
    x: &DVector<f64>,
    y: f64,
    theta: &DVector<f64>,
    attack: &AttackSpec,
) -> Result<DVector<f64>> {
    attack.validate()?;
    check_pair(x, theta)?;
    let r = y - x.dot(theta);
    let sign_r = if r >= 0.0 { 1.0 } else { -1.0 };
    Ok(holder_maximizer(theta, attack.norm) * (-sign_r * attack.epsilon))
}

/// `max_{||delta||_p <= eps} (y - <x + delta, theta>)^2`.
pub fn inner_max_value(
    x: &DVector<f64>,
    y: f64,
    theta: &DVector<f64>,
    attack: &AttackSpec,
) -> Result<f64> {
    attack.validate()?;
    check_pair(x, theta)?;
    let v = (y - x.dot(theta)).abs() + attack.epsilon * attack.dual().of(theta);
    Ok(v * v)
}
