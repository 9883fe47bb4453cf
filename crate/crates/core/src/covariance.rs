//! Structured covariances `Sigma = Q Q'` with correlated core and spurious
//! features, plus the data sampler `x = Q z`, `z ~ N(0, I)`.
//!
//! The first `c` rows of `Q` are core features; the remaining `m - c` rows are
//! spurious. Before normalization a core row has 1 on its diagonal and 1/2 on
//! every other core column; a spurious row has `eta` in every core column and 1
//! on its own diagonal.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::GaussianLinearModel;
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QMatrixSpec {
    pub m: usize,
    pub c: usize,
    pub eta: f64,
    pub spurious_scale: f64,
}

impl QMatrixSpec {
    pub fn new(m: usize, c: usize, eta: f64, spurious_scale: f64) -> Result<Self> {
        let spec = QMatrixSpec {
            m,
            c,
            eta,
            spurious_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 5-feature, 2-core configuration with unit spurious scale.
    pub fn five_by_two(eta: f64) -> Result<Self> {
        QMatrixSpec::new(5, 2, eta, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.c >= 1 && self.c < self.m) {
            return Err(Error::InvalidFeatureCounts {
                m: self.m,
                c: self.c,
            });
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Negative {
                name: "eta",
                value: self.eta,
            });
        }
        if !(self.spurious_scale > 0.0 && self.spurious_scale.is_finite()) {
            return Err(Error::NonPositiveScale(self.spurious_scale));
        }
        Ok(())
    }

    pub fn core_set(&self) -> std::ops::Range<usize> {
        0..self.c
    }

    pub fn spurious_rows(&self) -> std::ops::Range<usize> {
        self.c..self.m
    }

    /// Build, row-normalize, then scale the spurious rows.
    pub fn q_matrix(&self) -> Result<DMatrix<f64>> {
        let q = normalize_rows(&build_q_tilde(self)?)?;
        scale_spurious_rows(&q, self, self.spurious_scale)
    }

    /// `theta_opt` with every core coordinate set to 1.
    pub fn default_theta_opt(&self) -> DVector<f64> {
        DVector::from_fn(self.m, |i, _| if i < self.c { 1.0 } else { 0.0 })
    }

    /// Model with `Sigma = Q Q'` and the default `theta_opt`.
    pub fn model(&self, sigma_w: f64) -> Result<GaussianLinearModel> {
        let q = self.q_matrix()?;
        GaussianLinearModel::new(
            covariance(&q),
            self.default_theta_opt(),
            sigma_w,
            self.core_set(),
        )
    }
}

pub fn build_q_tilde(spec: &QMatrixSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (m, c) = (spec.m, spec.c);
    Ok(DMatrix::from_fn(m, m, |i, j| match (i < c, j < c) {
        (true, true) if i == j => 1.0,
        (true, true) => 0.5,
        (true, false) => 0.0,
        (false, true) => spec.eta,
        (false, false) if i == j => 1.0,
        (false, false) => 0.0,
    }))
}

/// Divide each row by its Euclidean norm.
pub fn normalize_rows(q_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut q = q_tilde.clone();
    for i in 0..q.nrows() {
        let n = q.row(i).norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroRow(i));
        }
        q.row_mut(i).unscale_mut(n);
    }
    Ok(q)
}

fn check_square(q: &DMatrix<f64>, spec: &QMatrixSpec) -> Result<()> {
    if q.nrows() != spec.m {
        return Err(Error::DimensionMismatch {
            expected: spec.m,
            got: q.nrows(),
        });
    }
    if q.ncols() != spec.m {
        return Err(Error::DimensionMismatch {
            expected: spec.m,
            got: q.ncols(),
        });
    }
    Ok(())
}

pub fn scale_spurious_rows(q: &DMatrix<f64>, spec: &QMatrixSpec, s: f64) -> Result<DMatrix<f64>> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::NonPositiveScale(s));
    }
    check_square(q, spec)?;
    let mut out = q.clone();
    for i in spec.spurious_rows() {
        out.row_mut(i).scale_mut(s);
    }
    Ok(out)
}

/// Add independent `N(0, sigma_q^2)` noise to every entry of every spurious row.
pub fn perturb_spurious_rows(
    q: &DMatrix<f64>,
    spec: &QMatrixSpec,
    sigma_q: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let mut rng = rng_from_seed(seed);
    perturb_spurious_rows_with(q, spec, sigma_q, &mut rng)
}

pub(crate) fn perturb_spurious_rows_with(
    q: &DMatrix<f64>,
    spec: &QMatrixSpec,
    sigma_q: f64,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    if !(sigma_q >= 0.0 && sigma_q.is_finite()) {
        return Err(Error::Negative {
            name: "sigma_q",
            value: sigma_q,
        });
    }
    check_square(q, spec)?;
    let mut out = q.clone();
    if sigma_q == 0.0 {
        return Ok(out);
    }
    for i in spec.spurious_rows() {
        for j in 0..spec.m {
            let z: f64 = rng.sample(StandardNormal);
            out[(i, j)] += sigma_q * z;
        }
    }
    Ok(out)
}

/// `Q Q'`, symmetric bit-for-bit.
pub fn covariance(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = q.row(i).dot(&q.row(j));
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    sigma
}

/// Stream of `(x, y)` draws with `x = Q z` and `y = <x, theta_opt> + w`.
pub struct DataSampler<'a> {
    q: &'a DMatrix<f64>,
    theta_opt: &'a DVector<f64>,
    noise: Normal<f64>,
    rng: Rng,
}

impl<'a> DataSampler<'a> {
    pub fn new(
        q: &'a DMatrix<f64>,
        theta_opt: &'a DVector<f64>,
        sigma_w: f64,
        seed: u64,
    ) -> Result<Self> {
        if q.nrows() != theta_opt.len() {
            return Err(Error::DimensionMismatch {
                expected: theta_opt.len(),
                got: q.nrows(),
            });
        }
        let noise = Normal::new(0.0, sigma_w).map_err(|_| Error::InvalidNoise(sigma_w))?;
        Ok(DataSampler {
            q,
            theta_opt,
            noise,
            rng: rng_from_seed(seed),
        })
    }
}

impl Iterator for DataSampler<'_> {
    type Item = (DVector<f64>, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let z = DVector::from_fn(self.q.ncols(), |_, _| {
            self.rng.sample::<f64, _>(StandardNormal)
        });
        let x = self.q * z;
        let y = x.dot(self.theta_opt) + self.noise.sample(&mut self.rng);
        Some((x, y))
    }
}

pub fn sample_data(
    q: &DMatrix<f64>,
    theta_opt: &DVector<f64>,
    sigma_w: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<(DVector<f64>, f64)>> {
    if n == 0 {
        return Err(Error::InvalidOption("sample count must be >= 1".into()));
    }
    Ok(DataSampler::new(q, theta_opt, sigma_w, seed)?
        .take(n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn five_feature_pattern() {
        let eta = 0.3;
        let q = build_q_tilde(&QMatrixSpec::five_by_two(eta).unwrap()).unwrap();
        let expected = DMatrix::from_row_slice(
            5,
            5,
            &[
                1.0, 0.5, 0.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, eta, eta, 1.0, 0.0, 0.0, eta,
                eta, 0.0, 1.0, 0.0, eta, eta, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(q, expected);
    }

    #[test]
    fn three_feature_instance() {
        let q = build_q_tilde(&QMatrixSpec::new(3, 2, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(
            q.row(2).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn larger_core_block() {
        let q = build_q_tilde(&QMatrixSpec::new(6, 3, 0.5, 1.0).unwrap()).unwrap();
        assert_eq!(q[(0, 2)], 0.5);
        assert_eq!(q[(2, 1)], 0.5);
        assert_eq!(q[(1, 4)], 0.0);
        assert_eq!(q[(5, 2)], 0.5);
        assert_eq!(q[(5, 5)], 1.0);
        assert_eq!(q[(5, 4)], 0.0);
    }

    #[test]
    fn zero_eta_decouples_blocks() {
        let spec = QMatrixSpec::five_by_two(0.0).unwrap();
        let q = spec.q_matrix().unwrap();
        let sigma = covariance(&q);
        for i in 0..2 {
            for j in 2..5 {
                assert_eq!(sigma[(i, j)], 0.0);
            }
        }
        for i in 2..5 {
            let mut e = DVector::zeros(5);
            e[i] = 1.0;
            assert_eq!(q.row(i).transpose(), e);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(QMatrixSpec::new(3, 3, 0.1, 1.0).is_err());
        assert!(QMatrixSpec::new(3, 0, 0.1, 1.0).is_err());
        assert!(QMatrixSpec::new(3, 1, -0.1, 1.0).is_err());
        assert!(QMatrixSpec::new(3, 1, 0.1, 0.0).is_err());
    }

    #[test]
    fn normalize_example() {
        let q = normalize_rows(&build_q_tilde(&QMatrixSpec::five_by_two(0.25).unwrap()).unwrap())
            .unwrap();
        assert_abs_diff_eq!(q[(0, 0)], 0.894_427_190_999_915_9, epsilon = 1e-15);
        assert_abs_diff_eq!(q[(0, 1)], 0.447_213_595_499_958, epsilon = 1e-15);
        assert_eq!(q[(0, 2)], 0.0);
        assert_eq!(
            normalize_rows(&DMatrix::identity(4, 4)).unwrap(),
            DMatrix::identity(4, 4)
        );
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let mut q = DMatrix::identity(3, 3);
        q[(1, 1)] = 0.0;
        assert_eq!(normalize_rows(&q).unwrap_err(), Error::ZeroRow(1));
    }

    #[test]
    fn scaling() {
        let spec = QMatrixSpec::five_by_two(0.25).unwrap();
        let q = normalize_rows(&build_q_tilde(&spec).unwrap()).unwrap();
        assert_eq!(scale_spurious_rows(&q, &spec, 1.0).unwrap(), q);
        let s2 = scale_spurious_rows(&q, &spec, 2.0).unwrap();
        for i in 0..2 {
            assert_eq!(s2.row(i), q.row(i));
        }
        for i in 2..5 {
            assert_abs_diff_eq!(s2.row(i).norm(), 2.0, epsilon = 1e-14);
        }
        let sigma = covariance(&scale_spurious_rows(&q, &spec, 3.0).unwrap());
        for i in 2..5 {
            assert_abs_diff_eq!(sigma[(i, i)], 9.0, epsilon = 1e-13);
        }
        assert!(scale_spurious_rows(&q, &spec, 0.0).is_err());
        assert!(scale_spurious_rows(&q, &spec, -1.0).is_err());
    }

    #[test]
    fn perturbation_contract() {
        let spec = QMatrixSpec::five_by_two(0.25).unwrap();
        let q = spec.q_matrix().unwrap();
        assert_eq!(perturb_spurious_rows(&q, &spec, 0.0, 1).unwrap(), q);
        let a = perturb_spurious_rows(&q, &spec, 0.5, 9).unwrap();
        let b = perturb_spurious_rows(&q, &spec, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, perturb_spurious_rows(&q, &spec, 0.5, 10).unwrap());
        for i in 0..2 {
            assert_eq!(a.row(i), q.row(i));
        }
        assert!(perturb_spurious_rows(&q, &spec, -0.1, 1).is_err());
    }

    #[test]
    fn perturbation_variance() {
        let spec = QMatrixSpec::five_by_two(0.25).unwrap();
        let q = spec.q_matrix().unwrap();
        let sigma_q = 0.5;
        let mut rng = rng_from_seed(77);
        let draws = 10_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let p = perturb_spurious_rows_with(&q, &spec, sigma_q, &mut rng).unwrap();
            let inc = p[(3, 1)] - q[(3, 1)];
            sum += inc;
            sum_sq += inc * inc;
        }
        let n = draws as f64;
        let var = sum_sq / n - (sum / n).powi(2);
        // se of a normal sample variance: sigma^2 * sqrt(2/(n-1))
        let se = 0.25 * (2.0 / (n - 1.0)).sqrt();
        assert!((var - 0.25).abs() < 4.0 * se, "var {var}");
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(
            covariance(&DMatrix::identity(3, 3)),
            DMatrix::identity(3, 3)
        );

        let q = QMatrixSpec::five_by_two(0.25).unwrap().q_matrix().unwrap();
        let sigma = covariance(&q);
        // hand-computed from row norms sqrt(1.25) and sqrt(1.125)
        assert_abs_diff_eq!(sigma[(0, 1)], 0.8, epsilon = 1e-14);
        assert_abs_diff_eq!(sigma[(0, 2)], 0.316_227_766_016_837_9, epsilon = 1e-14);
        assert_abs_diff_eq!(sigma[(1, 4)], 0.316_227_766_016_837_9, epsilon = 1e-14);
        assert_abs_diff_eq!(sigma[(2, 3)], 0.111_111_111_111_111_1, epsilon = 1e-14);
        for i in 0..5 {
            assert_abs_diff_eq!(sigma[(i, i)], 1.0, epsilon = 1e-14);
        }
        assert_eq!(sigma, sigma.transpose());
    }

    #[test]
    fn sample_covariance_matches() {
        let spec = QMatrixSpec::five_by_two(0.5).unwrap();
        let q = spec.q_matrix().unwrap();
        let theta = spec.default_theta_opt();
        let n = 100_000;
        let samples = sample_data(&q, &theta, 0.1, n, 3).unwrap();
        let mut acc = DMatrix::<f64>::zeros(5, 5);
        for (x, _) in &samples {
            acc += x * x.transpose();
        }
        acc /= n as f64;
        let sigma = covariance(&q);
        let tol = 5.0 / (n as f64).sqrt();
        assert!((acc - sigma).amax() < tol);
    }

    #[test]
    fn pure_noise_response() {
        let spec = QMatrixSpec::five_by_two(0.5).unwrap();
        let q = spec.q_matrix().unwrap();
        let zero = DVector::zeros(5);
        let n = 50_000;
        let ys: Vec<f64> = sample_data(&q, &zero, 0.1, n, 4)
            .unwrap()
            .into_iter()
            .map(|(_, y)| y)
            .collect();
        let var = ys.iter().map(|y| y * y).sum::<f64>() / n as f64;
        assert!((var - 0.01).abs() < 4.0 * 0.01 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn sampler_is_deterministic() {
        let q = QMatrixSpec::five_by_two(0.25).unwrap().q_matrix().unwrap();
        let theta = DVector::from_column_slice(&[1.0, 1.0, 0.0, 0.0, 0.0]);
        let a = sample_data(&q, &theta, 0.1, 100, 8).unwrap();
        let b = sample_data(&q, &theta, 0.1, 100, 8).unwrap();
        assert_eq!(a, b);
        assert!(sample_data(&q, &theta, 0.1, 0, 8).is_err());
    }

    proptest! {
        #[test]
        fn normalized_rows_are_unit(
            m in 2usize..12,
            c_frac in 0.0f64..1.0,
            eta in 0.0f64..3.0,
        ) {
            let c = 1 + ((m - 1) as f64 * c_frac) as usize;
            let c = c.min(m - 1);
            let spec = QMatrixSpec::new(m, c, eta, 1.0).unwrap();
            let q = normalize_rows(&build_q_tilde(&spec).unwrap()).unwrap();
            for i in 0..m {
                prop_assert!((q.row(i).norm() - 1.0).abs() <= 1e-12);
            }
            let sigma = covariance(&q);
            for i in 0..m {
                prop_assert!((sigma[(i, i)] - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn perturbation_never_touches_core_rows(
            sigma_q in 0.0f64..2.0,
            seed in any::<u64>(),
            eta in 0.0f64..1.0,
        ) {
            let spec = QMatrixSpec::new(6, 3, eta, 2.0).unwrap();
            let q = spec.q_matrix().unwrap();
            let p = perturb_spurious_rows(&q, &spec, sigma_q, seed).unwrap();
            for i in spec.core_set() {
                prop_assert_eq!(p.row(i), q.row(i));
            }
        }
    }
}
