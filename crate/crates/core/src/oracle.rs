//! Independent estimators used to certify the closed forms and the solver.
//!
//! Nothing here calls the optimizer. The Monte-Carlo estimator samples data and
//! averages the inner maximum; the brute-force inner max searches random
//! perturbations; the grid search scans a box exhaustively.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::covariance::{covariance, DataSampler};
use crate::error::{Error, Result};
use crate::model::{
    adversarial_loss_with_constants, excess_risk_under, inner_max_value, worst_case_delta,
    AttackSpec, GaussianLinearModel, LossConstants, LossEvaluator, Norm,
};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub estimate: f64,
    pub standard_error: f64,
    pub closed_form: f64,
    pub z_score: f64,
    pub samples: usize,
}

impl OracleReport {
    fn from_samples(sum: f64, sum_sq: f64, n: usize, closed_form: f64) -> Self {
        let nf = n as f64;
        let estimate = sum / nf;
        let var = ((sum_sq - nf * estimate * estimate) / (nf - 1.0)).max(0.0);
        let standard_error = (var / nf).sqrt();
        let diff = (estimate - closed_form).abs();
        let z_score = if standard_error > 0.0 {
            diff / standard_error
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        OracleReport {
            estimate,
            standard_error,
            closed_form,
            z_score,
            samples: n,
        }
    }
}

/// A square factor `F` with `F F' = sigma`, from the eigendecomposition
/// (negative rounding-level eigenvalues are clipped to zero).
pub fn covariance_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sigma.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Sample mean of the inner maximum over `n` draws of `(x, y)` from the model,
/// compared with the closed form.
pub fn monte_carlo_adversarial_loss(
    model: &GaussianLinearModel,
    theta: &DVector<f64>,
    attack: &AttackSpec,
    n: usize,
    seed: u64,
) -> Result<OracleReport> {
    monte_carlo_with_constants(model, theta, attack, n, seed, &LossConstants::gaussian())
}

/// As [`monte_carlo_adversarial_loss`], with the closed form evaluated under
/// arbitrary constants.
pub fn monte_carlo_with_constants(
    model: &GaussianLinearModel,
    theta: &DVector<f64>,
    attack: &AttackSpec,
    n: usize,
    seed: u64,
    constants: &LossConstants,
) -> Result<OracleReport> {
    if n < 100 {
        return Err(Error::InvalidOption(format!(
            "monte-carlo needs at least 100 samples, got {n}"
        )));
    }
    let closed_form = adversarial_loss_with_constants(model, theta, attack, constants)?;
    let factor = covariance_factor(model.sigma());
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (x, y) in DataSampler::new(&factor, model.theta_opt(), model.sigma_w(), seed)?.take(n) {
        let v = inner_max_value(&x, y, theta, attack)?;
        sum += v;
        sum_sq += v * v;
    }
    Ok(OracleReport::from_samples(sum, sum_sq, n, closed_form))
}

/// Uniform draw from the `norm` ball of the given radius in `dim` dimensions.
pub fn sample_in_ball(norm: Norm, radius: f64, dim: usize, rng: &mut Rng) -> DVector<f64> {
    match norm {
        Norm::LInf => DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius)),
        Norm::L2 => {
            let dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = dir.norm();
            if n == 0.0 {
                return DVector::zeros(dim);
            }
            let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
            dir * (r / n)
        }
        Norm::L1 => {
            // First `dim` coordinates of a uniform point on the (dim+1)-simplex,
            // with random signs.
            let e: Vec<f64> = (0..=dim).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = e.iter().sum();
            DVector::from_fn(dim, |i, _| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * radius * e[i] / total
            })
        }
    }
}

/// Largest squared residual over `probes` random perturbations in the attack
/// ball and the analytic worst case.
pub fn brute_force_inner_max(
    x: &DVector<f64>,
    y: f64,
    theta: &DVector<f64>,
    attack: &AttackSpec,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if probes == 0 {
        return Err(Error::InvalidOption("probes must be >= 1".into()));
    }
    let residual = |delta: &DVector<f64>| {
        let r = y - (x + delta).dot(theta);
        r * r
    };
    let mut best = residual(&worst_case_delta(x, y, theta, attack)?);
    let mut rng = rng_from_seed(seed);
    for _ in 0..probes {
        let delta = sample_in_ball(attack.norm, attack.epsilon, x.len(), &mut rng);
        best = best.max(residual(&delta));
    }
    Ok(best)
}

fn check_shift_dims(
    theta: &DVector<f64>,
    q_shifted: &DMatrix<f64>,
    theta_opt: &DVector<f64>,
) -> Result<()> {
    let m = theta_opt.len();
    if theta.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: theta.len(),
        });
    }
    if q_shifted.nrows() != m || q_shifted.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: q_shifted.nrows(),
        });
    }
    Ok(())
}

/// Squared loss of `theta` when `X ~ N(0, Q'Q'^T)` and labels are unchanged.
pub fn shifted_standard_loss(
    theta: &DVector<f64>,
    q_shifted: &DMatrix<f64>,
    theta_opt: &DVector<f64>,
    sigma_w: f64,
) -> Result<f64> {
    check_shift_dims(theta, q_shifted, theta_opt)?;
    Ok(excess_risk_under(&covariance(q_shifted), theta_opt, theta) + sigma_w * sigma_w)
}

/// Closed-form adversarial loss of `theta` under the shifted covariance.
pub fn shifted_adversarial_loss(
    theta: &DVector<f64>,
    q_shifted: &DMatrix<f64>,
    theta_opt: &DVector<f64>,
    sigma_w: f64,
    attack: &AttackSpec,
) -> Result<f64> {
    check_shift_dims(theta, q_shifted, theta_opt)?;
    let s2 = excess_risk_under(&covariance(q_shifted), theta_opt, theta) + sigma_w * sigma_w;
    let LossConstants { c1, c2 } = LossConstants::gaussian();
    let s = s2.sqrt();
    let shifted = c1 * s + attack.epsilon * attack.dual().of(theta);
    Ok(c2 * s2 + shifted * shifted)
}

/// Central differences of `f` at `theta` with step `h`.
pub fn finite_difference_gradient(
    f: impl Fn(&DVector<f64>) -> f64,
    theta: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    DVector::from_fn(theta.len(), |i, _| {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += h;
        minus[i] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// Distance from `theta` to the nearest kink of `||.||_q`: zero coordinates
/// for `q = 1`, ties of the largest magnitude for `q = inf`, the origin for
/// `q = 2`.
pub fn kink_distance(theta: &DVector<f64>, dual: Norm) -> f64 {
    match dual {
        Norm::L1 => theta.iter().fold(f64::INFINITY, |acc, x| acc.min(x.abs())),
        Norm::L2 => theta.norm(),
        Norm::LInf => {
            let mut mags: Vec<f64> = theta.iter().map(|x| x.abs()).collect();
            mags.sort_unstable_by(|a, b| b.total_cmp(a));
            match mags.as_slice() {
                [] => 0.0,
                [only] => *only,
                [a, b, ..] => ((a - b) / 2.0).min(*a),
            }
        }
    }
}

/// `L(l a + (1-l) b) - (l L(a) + (1-l) L(b))`; nonpositive for a convex loss.
pub fn convexity_gap(
    model: &GaussianLinearModel,
    attack: &AttackSpec,
    a: &DVector<f64>,
    b: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    let eval = LossEvaluator::new(model, attack, LossConstants::gaussian())?;
    model_dim_check(model, a)?;
    model_dim_check(model, b)?;
    let mix = a * lambda + b * (1.0 - lambda);
    Ok(eval.eval(mix.as_slice())
        - (lambda * eval.eval(a.as_slice()) + (1.0 - lambda) * eval.eval(b.as_slice())))
}

fn model_dim_check(model: &GaussianLinearModel, v: &DVector<f64>) -> Result<()> {
    if v.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Exhaustive box scan followed by shrinking local grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSearch {
    pub lower: f64,
    pub upper: f64,
    pub pitch: f64,
    /// Local grids have `2 * half_width + 1` points per free coordinate.
    pub half_width: usize,
    /// Refinement stops once the local pitch drops below this.
    pub final_pitch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub theta: DVector<f64>,
    pub objective: f64,
    pub evaluations: usize,
}

impl GridSearch {
    /// Pitch `1e-3` on `[-3, 3]` for up to two free coordinates, `0.02` for
    /// three. Larger problems are rejected by [`GridSearch::minimize`].
    pub fn for_free_dims(k: usize) -> Self {
        GridSearch {
            lower: -3.0,
            upper: 3.0,
            pitch: if k <= 2 { 1e-3 } else { 0.02 },
            half_width: 10,
            final_pitch: 1e-11,
        }
    }

    /// Minimize the closed-form loss over the coordinates in `support`
    /// (all coordinates when `None`).
    pub fn minimize(
        &self,
        model: &GaussianLinearModel,
        attack: &AttackSpec,
        support: Option<&[usize]>,
    ) -> Result<GridSearchResult> {
        let m = model.dim();
        let free: Vec<usize> = match support {
            Some(s) => {
                let mut s = s.to_vec();
                s.sort_unstable();
                s.dedup();
                if let Some(&bad) = s.iter().find(|&&i| i >= m) {
                    return Err(Error::CoreIndexOutOfRange { index: bad, dim: m });
                }
                s
            }
            None => (0..m).collect(),
        };
        let k = free.len();
        if k == 0 || k > 3 {
            return Err(Error::InvalidOption(format!(
                "grid search supports 1..=3 free coordinates, got {k}"
            )));
        }
        let eval = LossEvaluator::new(model, attack, LossConstants::gaussian())?;
        let objective = |point: &[f64]| {
            let mut theta = vec![0.0; m];
            for (&i, &v) in free.iter().zip(point) {
                theta[i] = v;
            }
            eval.eval(&theta)
        };

        let n = ((self.upper - self.lower) / self.pitch).round() as usize + 1;
        let axis = |j: usize| self.lower + j as f64 * self.pitch;
        let total = n.pow(k as u32);
        let (best_idx, best_val) = (0..total)
            .into_par_iter()
            .map(|flat| {
                let point = unflatten(flat, n, k, axis);
                (flat, objective(&point))
            })
            .reduce(|| (usize::MAX, f64::INFINITY), better);
        let mut center = unflatten(best_idx, n, k, axis);
        let mut best = best_val;
        let mut evaluations = total;

        let width = 2 * self.half_width + 1;
        let mut step = self.pitch / self.half_width as f64 * 2.0;
        while step >= self.final_pitch {
            let offsets = width.pow(k as u32);
            let (idx, val) = (0..offsets)
                .map(|flat| {
                    let mut point = center.clone();
                    let mut rest = flat;
                    for p in point.iter_mut() {
                        *p += (rest % width) as f64 * step - self.half_width as f64 * step;
                        rest /= width;
                    }
                    (flat, objective(&point))
                })
                .fold((usize::MAX, f64::INFINITY), better);
            evaluations += offsets;
            let mut rest = idx;
            let moved = val < best;
            if moved {
                for p in center.iter_mut() {
                    *p += (rest % width) as f64 * step - self.half_width as f64 * step;
                    rest /= width;
                }
                best = val;
            }
            // Re-center at the same pitch while the best point sits on the
            // stencil edge; otherwise shrink.
            let on_edge = moved && {
                let mut rest = idx;
                (0..k).any(|_| {
                    let j = rest % width;
                    rest /= width;
                    j == 0 || j == width - 1
                })
            };
            if !on_edge {
                step /= self.half_width as f64 / 2.0;
            }
        }

        let mut theta = DVector::zeros(m);
        for (&i, &v) in free.iter().zip(&center) {
            theta[i] = v;
        }
        Ok(GridSearchResult {
            theta,
            objective: best,
            evaluations,
        })
    }
}

fn unflatten(mut flat: usize, n: usize, k: usize, axis: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let j = flat % n;
            flat /= n;
            axis(j)
        })
        .collect()
}

/// Lower value wins; ties go to the lower index so reductions are
/// order-independent.
fn better(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
    match a.1.total_cmp(&b.1) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => {
            if a.0 <= b.0 {
                a
            } else {
                b
            }
        }
    }
}
