//! Adversarial training on the population loss, and the NFS reliance metric.
//!
//! Two solvers are provided.
//!
//! [`Method::RadiusSplit`] (the default) writes `tau = eps * ||theta||_q` and
//! minimizes
//!
//! ```text
//! g(tau) = min { h(theta, tau) : eps * ||theta||_q <= tau, theta supported on the mask }
//! h(theta, tau) = c2 * s^2 + (c1 * s + tau)^2
//! ```
//!
//! `h` is smooth in `theta` because `s >= sigma_w > 0`, so each inner problem is
//! solved by restarted accelerated projected gradient onto the `l_q` ball. `g`
//! is convex and its derivative is available from the inner multiplier,
//! `g'(tau) = 2 (c1 s + tau) - ||grad_theta h||_p / eps`, so the outer search is
//! a bisection on the sign of `g'`.
//!
//! [`Method::Subgradient`] is plain projected subgradient descent with step
//! `a / sqrt(t)` and best-iterate tracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    adversarial_loss_closed_form, holder_maximizer, AttackSpec, GaussianLinearModel, LossConstants,
};
use crate::projection::project_onto_ball;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    RadiusSplit,
    Subgradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    /// Iteration budget (per inner solve for `RadiusSplit`).
    pub max_iters: usize,
    /// `a` in the subgradient step `a / sqrt(t)`.
    pub step_scale: f64,
    /// Minimum best-objective improvement per window before the subgradient
    /// method stops.
    pub tolerance: f64,
    pub window: usize,
    /// Free coordinates; `None` means all of them.
    pub support_mask: Option<Vec<usize>>,
    /// Starting point; defaults to zero.
    pub init: Option<DVector<f64>>,
    pub method: Method,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            max_iters: 50_000,
            step_scale: 0.1,
            tolerance: 1e-10,
            window: 500,
            support_mask: None,
            init: None,
            method: Method::RadiusSplit,
        }
    }
}

impl OptimizerOptions {
    pub fn with_mask(mut self, mask: impl IntoIterator<Item = usize>) -> Self {
        self.support_mask = Some(mask.into_iter().collect());
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    fn support(&self, m: usize) -> Result<Vec<bool>> {
        if self.max_iters == 0 {
            return Err(Error::InvalidOption("max_iters must be >= 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidOption("tolerance must be > 0".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidOption("window must be >= 1".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::InvalidOption("step scale must be > 0".into()));
        }
        let Some(mask) = &self.support_mask else {
            return Ok(vec![true; m]);
        };
        if mask.is_empty() {
            return Err(Error::InvalidOption("support mask is empty".into()));
        }
        let mut flags = vec![false; m];
        for &i in mask {
            if i >= m {
                return Err(Error::InvalidOption(format!(
                    "mask index {i} out of range for dimension {m}"
                )));
            }
            flags[i] = true;
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn is_zero(&self) -> bool {
        self.theta_hat.iter().all(|&x| x == 0.0)
    }
}

/// An element of the subdifferential of the adversarial loss at `theta`.
pub fn subgradient(
    model: &GaussianLinearModel,
    attack: &AttackSpec,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.check_dim(theta)?;
    let attack = AttackSpec::new(attack.norm, attack.epsilon)?;
    let LossConstants { c1, c2 } = LossConstants::gaussian();
    let d = theta - model.theta_opt();
    let sigma_d = model.sigma() * &d;
    let s = (sigma_d.dot(&d).max(0.0) + model.sigma_w() * model.sigma_w()).sqrt();
    let grad_s = &sigma_d / s;
    let n = attack.dual().of(theta);
    let u = holder_maximizer(theta, attack.norm);
    let outer = 2.0 * (c1 * s + attack.epsilon * n);
    Ok(&sigma_d * (2.0 * c2) + (grad_s * c1 + u * attack.epsilon) * outer)
}

/// Norm fraction over spurious coordinates: `sum_{i not in C} theta_i^2 / ||theta||^2`.
pub fn nfs(theta: &DVector<f64>, core_set: &[usize]) -> Result<f64> {
    let total = theta.norm_squared();
    if total == 0.0 {
        return Err(Error::ZeroVector);
    }
    let core: f64 = core_set
        .iter()
        .filter(|&&i| i < theta.len())
        .map(|&i| theta[i] * theta[i])
        .sum();
    Ok(((total - core) / total).clamp(0.0, 1.0))
}

/// `(Sigma theta_opt)` restricted to the support.
fn masked_signal(model: &GaussianLinearModel, support: &[bool]) -> DVector<f64> {
    let mut b = model.sigma() * model.theta_opt();
    for (bi, &free) in b.iter_mut().zip(support) {
        if !free {
            *bi = 0.0;
        }
    }
    b
}

/// Budget at and above which the minimizer over the support is exactly zero:
/// `||(Sigma theta_opt)_M||_p / (c1 * sigma_0)`.
pub fn collapse_budget(
    model: &GaussianLinearModel,
    attack: &AttackSpec,
    support_mask: Option<&[usize]>,
) -> Result<f64> {
    let options = OptimizerOptions {
        support_mask: support_mask.map(|m| m.to_vec()),
        ..Default::default()
    };
    let support = options.support(model.dim())?;
    let b = masked_signal(model, &support);
    let s0 = (model.theta_opt().dot(&(model.sigma() * model.theta_opt()))
        + model.sigma_w().powi(2))
    .sqrt();
    Ok(attack.norm.of(&b) / (LossConstants::gaussian().c1 * s0))
}

/// Direction the minimizer approaches as the budget rises to the collapse
/// point: the unit `l_q` vector maximizing `<u, (Sigma theta_opt)_M>`.
pub fn limiting_direction(
    model: &GaussianLinearModel,
    attack: &AttackSpec,
    support_mask: Option<&[usize]>,
) -> Result<DVector<f64>> {
    let options = OptimizerOptions {
        support_mask: support_mask.map(|m| m.to_vec()),
        ..Default::default()
    };
    let support = options.support(model.dim())?;
    Ok(holder_maximizer(
        &masked_signal(model, &support),
        attack.dual(),
    ))
}

/// NFS of a fit. When the budget has collapsed the fit to exactly zero the
/// ratio is taken along [`limiting_direction`], its continuous extension.
pub fn spurious_reliance(
    model: &GaussianLinearModel,
    attack: &AttackSpec,
    fit: &FitResult,
    support_mask: Option<&[usize]>,
) -> Result<f64> {
    if fit.is_zero() && attack.epsilon > 0.0 {
        nfs(
            &limiting_direction(model, attack, support_mask)?,
            model.core_set(),
        )
    } else {
        nfs(&fit.theta_hat, model.core_set())
    }
}

pub fn minimize_adversarial_loss(
    model: &GaussianLinearModel,
    attack: &AttackSpec,
    options: &OptimizerOptions,
) -> Result<FitResult> {
    let attack = AttackSpec::new(attack.norm, attack.epsilon)?;
    let support = options.support(model.dim())?;
    if let Some(init) = &options.init {
        model.check_dim(init)?;
    }
    match options.method {
        Method::RadiusSplit => RadiusSplit::new(model, attack, options, support).solve(),
        Method::Subgradient => subgradient_descent(model, &attack, options, &support),
    }
}

fn zero_outside(v: &mut DVector<f64>, support: &[bool]) {
    for (x, &free) in v.iter_mut().zip(support) {
        if !free {
            *x = 0.0;
        }
    }
}

fn subgradient_descent(
    model: &GaussianLinearModel,
    attack: &AttackSpec,
    options: &OptimizerOptions,
    support: &[bool],
) -> Result<FitResult> {
    let mut theta = options
        .init
        .clone()
        .unwrap_or_else(|| DVector::zeros(model.dim()));
    zero_outside(&mut theta, support);
    let mut best_theta = theta.clone();
    let mut best = adversarial_loss_closed_form(model, &theta, attack)?;
    let mut window_start_best = best;
    let mut iterations = 0;
    let mut converged = false;
    for t in 1..=options.max_iters {
        let mut g = subgradient(model, attack, &theta)?;
        zero_outside(&mut g, support);
        theta -= g * (options.step_scale / (t as f64).sqrt());
        let value = adversarial_loss_closed_form(model, &theta, attack)?;
        if value < best {
            best = value;
            best_theta.copy_from(&theta);
        }
        iterations = t;
        if t % options.window == 0 {
            if window_start_best - best < options.tolerance {
                converged = true;
                break;
            }
            window_start_best = best;
        }
    }
    Ok(FitResult {
        theta_hat: best_theta,
        objective: best,
        iterations,
        converged,
    })
}

/// Relative step size below which an inner solve is considered converged.
const INNER_STEP_TOL: f64 = 1e-14;
const MAX_BISECTIONS: usize = 200;

struct RadiusSplit<'a> {
    model: &'a GaussianLinearModel,
    attack: AttackSpec,
    options: &'a OptimizerOptions,
    support: Vec<bool>,
    constants: LossConstants,
    lambda_max: f64,
    iterations: usize,
    converged: bool,
}

struct InnerSolution {
    theta: DVector<f64>,
    s: f64,
    grad: DVector<f64>,
}

impl<'a> RadiusSplit<'a> {
    fn new(
        model: &'a GaussianLinearModel,
        attack: AttackSpec,
        options: &'a OptimizerOptions,
        support: Vec<bool>,
    ) -> Self {
        let idx: Vec<usize> = (0..model.dim()).filter(|&i| support[i]).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| model.sigma()[(idx[i], idx[j])]);
        let lambda_max = sub.symmetric_eigenvalues().max().max(0.0);
        RadiusSplit {
            model,
            attack,
            options,
            support,
            constants: LossConstants::gaussian(),
            lambda_max,
            iterations: 0,
            converged: true,
        }
    }

    fn solve(mut self) -> Result<FitResult> {
        if self.attack.epsilon == 0.0 {
            return self.least_squares();
        }
        let b = masked_signal(self.model, &self.support);
        let s0 = (self
            .model
            .theta_opt()
            .dot(&(self.model.sigma() * self.model.theta_opt()))
            + self.model.sigma_w().powi(2))
        .sqrt();
        if self.attack.norm.of(&b) <= self.constants.c1 * s0 * self.attack.epsilon {
            let zero = DVector::zeros(self.model.dim());
            return self.finish(zero);
        }

        let mut warm = self
            .options
            .init
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.model.dim()));
        let (mut lo, mut hi) = (0.0, s0);
        let mut best_theta = DVector::zeros(self.model.dim());
        let mut best = adversarial_loss_closed_form(self.model, &best_theta, &self.attack)?;
        for _ in 0..MAX_BISECTIONS {
            if hi - lo <= 4.0 * f64::EPSILON * s0 {
                break;
            }
            let tau = 0.5 * (lo + hi);
            let inner = self.inner(tau, &warm);
            let value = adversarial_loss_closed_form(self.model, &inner.theta, &self.attack)?;
            if value < best {
                best = value;
                best_theta.copy_from(&inner.theta);
            }
            let multiplier = self.attack.norm.of(&inner.grad) / self.attack.epsilon;
            let slope = 2.0 * (self.constants.c1 * inner.s + tau) - multiplier;
            if slope < 0.0 {
                lo = tau;
            } else {
                hi = tau;
            }
            warm = inner.theta;
        }
        self.finish(best_theta)
    }

    /// Unpenalized fit: solve the masked normal equations.
    fn least_squares(mut self) -> Result<FitResult> {
        let idx: Vec<usize> = (0..self.model.dim()).filter(|&i| self.support[i]).collect();
        let sigma = self.model.sigma();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| sigma[(idx[i], idx[j])]);
        let b = masked_signal(self.model, &self.support);
        let rhs = DVector::from_fn(idx.len(), |i, _| b[idx[i]]);
        let cutoff = 1e-13 * self.lambda_max.max(f64::MIN_POSITIVE);
        let solved = sub
            .svd(true, true)
            .solve(&rhs, cutoff)
            .map_err(|e| Error::InvalidOption(e.to_string()))?;
        let mut theta = DVector::zeros(self.model.dim());
        for (k, &i) in idx.iter().enumerate() {
            theta[i] = solved[k];
        }
        self.iterations = 1;
        self.finish(theta)
    }

    fn finish(self, theta: DVector<f64>) -> Result<FitResult> {
        let objective = adversarial_loss_closed_form(self.model, &theta, &self.attack)?;
        Ok(FitResult {
            theta_hat: theta,
            objective,
            iterations: self.iterations,
            converged: self.converged,
        })
    }

    /// Gradient of `h(., tau)` at `theta`, restricted to the support, and `s(theta)`.
    fn gradient(&self, theta: &DVector<f64>, tau: f64) -> (DVector<f64>, f64) {
        let d = theta - self.model.theta_opt();
        let mut sigma_d = self.model.sigma() * &d;
        let s = (sigma_d.dot(&d).max(0.0) + self.model.sigma_w().powi(2)).sqrt();
        zero_outside(&mut sigma_d, &self.support);
        let scale = 2.0 * (s + self.constants.c1 * tau) / s;
        (sigma_d * scale, s)
    }

    /// Minimize `h(., tau)` over the `l_q` ball of radius `tau / eps`.
    fn inner(&mut self, tau: f64, warm: &DVector<f64>) -> InnerSolution {
        let q = self.attack.dual();
        let radius = tau / self.attack.epsilon;
        let project = |v: &DVector<f64>| project_onto_ball(v, q, radius, &self.support);
        let lipschitz =
            (2.0 * self.lambda_max * (1.0 + self.constants.c1 * tau / self.model.sigma_w()))
                .max(f64::MIN_POSITIVE);

        let mut x = project(warm);
        let mut y = x.clone();
        let mut momentum = 1.0_f64;
        let mut done = false;
        for _ in 0..self.options.max_iters {
            self.iterations += 1;
            let (g, _) = self.gradient(&y, tau);
            let x_next = project(&(&y - g / lipschitz));
            let step = (&x_next - &x).amax();
            // Restart when the momentum direction stops being a descent direction.
            if (&y - &x_next).dot(&(&x_next - &x)) > 0.0 {
                momentum = 1.0;
                y.copy_from(&x_next);
            } else {
                let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                y = &x_next + (&x_next - &x) * ((momentum - 1.0) / next);
                momentum = next;
            }
            x = x_next;
            if step <= INNER_STEP_TOL * (1.0 + x.amax()) {
                done = true;
                break;
            }
        }
        if !done {
            self.converged = false;
        }
        let (grad, s) = self.gradient(&x, tau);
        InnerSolution { theta: x, s, grad }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::QMatrixSpec;
    use crate::model::Norm;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn five_feature(eta: f64) -> GaussianLinearModel {
        QMatrixSpec::five_by_two(eta).unwrap().model(0.1).unwrap()
    }

    #[test]
    fn nfs_examples() {
        let core = [0, 1];
        assert_eq!(nfs(&v(&[1.0, 1.0, 0.0, 0.0, 0.0]), &core).unwrap(), 0.0);
        assert_eq!(nfs(&v(&[0.0, 0.0, 0.0, 0.0, 1.0]), &core).unwrap(), 1.0);
        assert_abs_diff_eq!(nfs(&v(&[1.0; 5]), &core).unwrap(), 0.6, epsilon = 1e-15);
        assert_eq!(
            nfs(&DVector::zeros(5), &core).unwrap_err(),
            Error::ZeroVector
        );
    }

    #[test]
    fn zero_budget_recovers_theta_opt() {
        for eta in [0.0, 0.25, 0.5] {
            let model = five_feature(eta);
            let attack = AttackSpec::new(Norm::L2, 0.0).unwrap();
            let fit =
                minimize_adversarial_loss(&model, &attack, &OptimizerOptions::default()).unwrap();
            assert!((&fit.theta_hat - model.theta_opt()).amax() < 1e-12);
            assert!(nfs(&fit.theta_hat, model.core_set()).unwrap() < 1e-20);
            assert_abs_diff_eq!(fit.objective, 0.01, epsilon = 1e-14);
        }
    }

    #[test]
    fn subgradient_vanishes_at_optimum_without_attack() {
        let model = five_feature(0.25);
        let g = subgradient(
            &model,
            &AttackSpec::new(Norm::L1, 0.0).unwrap(),
            model.theta_opt(),
        )
        .unwrap();
        assert!(g.amax() < 1e-15);
    }

    #[test]
    fn subgradient_at_origin_for_l2() {
        // Norm term contributes zero; only the smooth part remains.
        let model = five_feature(0.25);
        let zero = DVector::zeros(5);
        let g = subgradient(&model, &AttackSpec::new(Norm::L2, 0.7).unwrap(), &zero).unwrap();
        // 2 c2 Sigma d + 2 (c1 s0) (c1 Sigma d / s0) = 2 Sigma d
        let expected = model.sigma() * (-model.theta_opt()) * 2.0;
        assert!((&g - &expected).amax() < 1e-13);
    }

    #[test]
    fn collapse_above_threshold() {
        let model = five_feature(0.25);
        let attack = AttackSpec::new(Norm::LInf, 1.0).unwrap();
        let eps_star = collapse_budget(&model, &attack, None).unwrap();
        let above = AttackSpec::new(Norm::LInf, eps_star * 1.01).unwrap();
        let fit = minimize_adversarial_loss(&model, &above, &OptimizerOptions::default()).unwrap();
        assert!(fit.is_zero());
        let below = AttackSpec::new(Norm::LInf, eps_star * 0.99).unwrap();
        let fit = minimize_adversarial_loss(&model, &below, &OptimizerOptions::default()).unwrap();
        assert!(!fit.is_zero());
    }

    #[test]
    fn mask_zeroes_coordinates() {
        let model = five_feature(0.5);
        let attack = AttackSpec::new(Norm::L2, 0.8).unwrap();
        let core = minimize_adversarial_loss(
            &model,
            &attack,
            &OptimizerOptions::default().with_mask([0, 1]),
        )
        .unwrap();
        for i in 2..5 {
            assert_eq!(core.theta_hat[i], 0.0);
        }
        let total =
            minimize_adversarial_loss(&model, &attack, &OptimizerOptions::default()).unwrap();
        assert!(total.objective <= core.objective + 1e-12);
        assert!(total.theta_hat.iter().skip(2).all(|&x| x != 0.0));
    }

    #[test]
    fn invalid_options() {
        let model = five_feature(0.5);
        let attack = AttackSpec::new(Norm::L2, 0.8).unwrap();
        let bad = [
            OptimizerOptions {
                max_iters: 0,
                ..Default::default()
            },
            OptimizerOptions {
                tolerance: 0.0,
                ..Default::default()
            },
            OptimizerOptions::default().with_mask([]),
            OptimizerOptions::default().with_mask([7]),
            OptimizerOptions {
                init: Some(DVector::zeros(3)),
                ..Default::default()
            },
        ];
        for o in &bad {
            assert!(minimize_adversarial_loss(&model, &attack, o).is_err());
        }
    }

    #[test]
    fn fit_objective_matches_closed_form() {
        let model = five_feature(0.25);
        for n in Norm::ALL {
            let attack = AttackSpec::new(n, 0.6).unwrap();
            let fit =
                minimize_adversarial_loss(&model, &attack, &OptimizerOptions::default()).unwrap();
            assert!(fit.converged);
            assert_eq!(
                fit.objective,
                adversarial_loss_closed_form(&model, &fit.theta_hat, &attack).unwrap()
            );
        }
    }

    #[test]
    fn coordinate_perturbations_do_not_improve() {
        for eta in [0.25, 0.5] {
            let model = five_feature(eta);
            for n in Norm::ALL {
                for eps in [0.3, 1.0, 1.7] {
                    let attack = AttackSpec::new(n, eps).unwrap();
                    let fit =
                        minimize_adversarial_loss(&model, &attack, &OptimizerOptions::default())
                            .unwrap();
                    for i in 0..5 {
                        for sign in [-1.0, 1.0] {
                            let mut t = fit.theta_hat.clone();
                            t[i] += sign * 1e-4;
                            let l = adversarial_loss_closed_form(&model, &t, &attack).unwrap();
                            assert!(l > fit.objective - 1e-8, "{n} eps={eps} coord {i}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn subgradient_method_agrees_on_smooth_instance() {
        let model = five_feature(0.25);
        let attack = AttackSpec::new(Norm::L2, 1.0).unwrap();
        let exact =
            minimize_adversarial_loss(&model, &attack, &OptimizerOptions::default()).unwrap();
        let sg = minimize_adversarial_loss(
            &model,
            &attack,
            &OptimizerOptions::default().with_method(Method::Subgradient),
        )
        .unwrap();
        assert!(sg.objective >= exact.objective - 1e-12);
        assert!(
            sg.objective - exact.objective < 1e-6,
            "gap {}",
            sg.objective - exact.objective
        );
    }

    #[test]
    fn subgradient_method_respects_mask_and_is_deterministic() {
        let model = five_feature(0.5);
        let attack = AttackSpec::new(Norm::L1, 0.5).unwrap();
        let o = OptimizerOptions {
            max_iters: 5_000,
            ..Default::default()
        }
        .with_method(Method::Subgradient)
        .with_mask([0, 1]);
        let a = minimize_adversarial_loss(&model, &attack, &o).unwrap();
        let b = minimize_adversarial_loss(&model, &attack, &o).unwrap();
        assert_eq!(a, b);
        assert!(a.theta_hat.iter().skip(2).all(|&x| x == 0.0));
    }

    #[test]
    fn limiting_direction_gives_plateau() {
        let spec = QMatrixSpec::new(8, 4, 0.5, 1.0).unwrap();
        let model = spec.model(0.1).unwrap();
        let attack = AttackSpec::new(Norm::L1, 1e3).unwrap();
        let fit = minimize_adversarial_loss(&model, &attack, &OptimizerOptions::default()).unwrap();
        assert!(fit.is_zero());
        let r = spurious_reliance(&model, &attack, &fit, None).unwrap();
        assert_abs_diff_eq!(r, 0.5, epsilon = 1e-12);
    }
}
