//! Grid sweeps over the correlated-feature model, written as CSV tables.
//!
//! Every cell of a sweep is independent. Cells run on the rayon pool and are
//! collected in grid order; any randomness in a cell is drawn from a stream
//! seeded by `derive_seed(master_seed, cell_index)`, so the table does not
//! depend on the number of threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{perturb_spurious_rows, QMatrixSpec};
use crate::error::{Error, Result};
use crate::model::{standard_loss, AttackSpec, GaussianLinearModel, Norm};
use crate::optimizer::{minimize_adversarial_loss, spurious_reliance, FitResult, OptimizerOptions};
use crate::oracle::{shifted_adversarial_loss, shifted_standard_loss};
use crate::rng::derive_seed;

pub const DEFAULT_SEED: u64 = 20_240_607;
pub const DEFAULT_SIGMA_W: f64 = 0.1;
pub const PLATEAU_TAIL: [f64; 3] = [10.0, 100.0, 1000.0];

/// `count` evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| {
                if i == count - 1 {
                    stop
                } else {
                    start + (stop - start) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    NfsSweep,
    ScaleHeatmap,
    ShiftRobustness,
    Plateau,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::NfsSweep,
        Experiment::ScaleHeatmap,
        Experiment::ShiftRobustness,
        Experiment::Plateau,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Experiment::NfsSweep => "nfs-sweep",
            Experiment::ScaleHeatmap => "scale-heatmap",
            Experiment::ShiftRobustness => "shift-robustness",
            Experiment::Plateau => "plateau",
        }
    }

    /// Budget grid used when none is configured.
    pub fn default_eps_grid(self, norm: Norm) -> Vec<f64> {
        let wide = !matches!(
            (self, norm),
            (Experiment::ShiftRobustness, _) | (_, Norm::LInf)
        );
        let mut grid = if wide {
            linspace(0.0, 2.0, 21)
        } else {
            linspace(0.0, 1.0, 21)
        };
        if self == Experiment::Plateau {
            grid.extend(PLATEAU_TAIL);
        }
        grid
    }

    /// Spurious scale used when none is configured.
    pub fn default_scales(self, norm: Norm) -> Vec<f64> {
        match (self, norm) {
            (Experiment::ScaleHeatmap, _) => vec![1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0],
            (Experiment::ShiftRobustness, Norm::LInf) => vec![3.0],
            _ => vec![1.0],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.label() == s)
            .ok_or_else(|| Error::InvalidOption(format!("unknown experiment `{s}`")))
    }
}

/// Which loss is averaged over perturbed covariances in the shift experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftLoss {
    #[default]
    Standard,
    Adversarial,
}

impl FromStr for ShiftLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ShiftLoss::Standard),
            "adversarial" => Ok(ShiftLoss::Adversarial),
            _ => Err(Error::InvalidOption(format!("unknown shift loss `{s}`"))),
        }
    }
}

/// Fit on every coordinate, or on the core coordinates only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Total,
    Core,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Total => "total",
            ModelKind::Core => "core",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub norms: Vec<Norm>,
    /// `None` selects [`Experiment::default_eps_grid`] per norm.
    pub eps: Option<Vec<f64>>,
    pub etas: Vec<f64>,
    pub m: Vec<usize>,
    pub c: Vec<usize>,
    /// `None` selects [`Experiment::default_scales`] per norm.
    pub scales: Option<Vec<f64>>,
    pub sigma_qs: Vec<f64>,
    pub noise_draws: usize,
    pub seed: u64,
    pub sigma_w: f64,
    pub shift_loss: ShiftLoss,
    pub optimizer: OptimizerOptions,
}

impl SweepConfig {
    pub fn new(experiment: Experiment) -> Self {
        let (norms, etas, m, c) = match experiment {
            Experiment::NfsSweep => (Norm::ALL.to_vec(), vec![0.0, 0.25, 0.5], vec![5], vec![2]),
            Experiment::ScaleHeatmap => (vec![Norm::LInf], vec![0.5], vec![5], vec![2]),
            Experiment::ShiftRobustness => (Norm::ALL.to_vec(), vec![0.25], vec![5], vec![2]),
            Experiment::Plateau => (
                vec![Norm::L1, Norm::L2],
                vec![0.5],
                vec![5, 8, 12, 20],
                vec![4, 10],
            ),
        };
        SweepConfig {
            experiment,
            norms,
            eps: None,
            etas,
            m,
            c,
            scales: None,
            sigma_qs: linspace(0.0, 1.0, 11),
            noise_draws: 100,
            seed: DEFAULT_SEED,
            sigma_w: DEFAULT_SIGMA_W,
            shift_loss: ShiftLoss::Standard,
            optimizer: OptimizerOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::InvalidOption(format!("{name} grid is empty")))
            } else {
                Ok(())
            }
        };
        nonempty("norm", self.norms.len())?;
        nonempty("eta", self.etas.len())?;
        nonempty("m", self.m.len())?;
        nonempty("c", self.c.len())?;
        if let Some(eps) = &self.eps {
            nonempty("epsilon", eps.len())?;
            if let Some(&bad) = eps.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
                return Err(Error::InvalidBudget(bad));
            }
        }
        if let Some(scales) = &self.scales {
            nonempty("scale", scales.len())?;
            if let Some(&bad) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
                return Err(Error::NonPositiveScale(bad));
            }
        }
        if let Some(&bad) = self.etas.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(Error::Negative {
                name: "eta",
                value: bad,
            });
        }
        if self.experiment == Experiment::ShiftRobustness {
            nonempty("sigma_q", self.sigma_qs.len())?;
            if let Some(&bad) = self
                .sigma_qs
                .iter()
                .find(|s| !(**s >= 0.0 && s.is_finite()))
            {
                return Err(Error::Negative {
                    name: "sigma_q",
                    value: bad,
                });
            }
            if self.noise_draws == 0 {
                return Err(Error::InvalidOption("noise_draws must be >= 1".into()));
            }
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidNoise(self.sigma_w));
        }
        if self.feature_pairs().is_empty() {
            return Err(Error::InvalidFeatureCounts {
                m: self.m[0],
                c: self.c[0],
            });
        }
        // A single explicit pair must itself be valid.
        if self.m.len() == 1 && self.c.len() == 1 {
            QMatrixSpec::new(self.m[0], self.c[0], 0.0, 1.0)?;
        }
        Ok(())
    }

    /// Every `(m, c)` in the product of the two lists with `m > c >= 1`.
    pub fn feature_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for &c in &self.c {
            for &m in &self.m {
                if c >= 1 && m > c {
                    pairs.push((m, c));
                }
            }
        }
        pairs
    }

    pub fn eps_for(&self, norm: Norm) -> Vec<f64> {
        self.eps
            .clone()
            .unwrap_or_else(|| self.experiment.default_eps_grid(norm))
    }

    pub fn scales_for(&self, norm: Norm) -> Vec<f64> {
        self.scales
            .clone()
            .unwrap_or_else(|| self.experiment.default_scales(norm))
    }

    /// Number of rows the sweep emits.
    pub fn row_count(&self) -> usize {
        let per_norm: usize = self
            .norms
            .iter()
            .map(|&n| self.eps_for(n).len() * self.scales_for(n).len())
            .sum();
        let base = self.feature_pairs().len() * self.etas.len() * per_norm;
        match self.experiment {
            Experiment::ShiftRobustness => base * self.sigma_qs.len() * 2,
            _ => base,
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub experiment: Experiment,
    pub norm: Norm,
    pub m: usize,
    pub c: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub scale: f64,
    pub sigma_q: Option<f64>,
    pub model: ModelKind,
    pub seed: u64,
    pub nfs: f64,
    pub clean_loss: f64,
    pub adversarial_loss: f64,
    pub shifted_loss: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub theta_hat: Vec<f64>,
}

pub const CSV_HEADER: [&str; 17] = [
    "experiment",
    "norm",
    "m",
    "c",
    "epsilon",
    "eta",
    "scale",
    "sigma_q",
    "model",
    "seed",
    "nfs",
    "clean_loss",
    "adversarial_loss",
    "shifted_loss",
    "converged",
    "iterations",
    "theta_hat",
];

impl SweepRecord {
    fn fields(&self) -> [String; 17] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let theta = self
            .theta_hat
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        [
            self.experiment.label().to_string(),
            self.norm.label().to_string(),
            self.m.to_string(),
            self.c.to_string(),
            self.epsilon.to_string(),
            self.eta.to_string(),
            self.scale.to_string(),
            opt(self.sigma_q),
            self.model.label().to_string(),
            self.seed.to_string(),
            self.nfs.to_string(),
            self.clean_loss.to_string(),
            self.adversarial_loss.to_string(),
            opt(self.shifted_loss),
            self.converged.to_string(),
            self.iterations.to_string(),
            theta,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub records: Vec<SweepRecord>,
}

impl SweepTable {
    /// Comma-separated table with a header row. `f64` values use Rust's
    /// shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record(r.fields())?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn unconverged(&self) -> usize {
        self.records.iter().filter(|r| !r.converged).count()
    }
}

/// Grid coordinates of one fit.
#[derive(Debug, Clone, Copy)]
struct Cell {
    index: usize,
    norm: Norm,
    m: usize,
    c: usize,
    eta: f64,
    scale: f64,
    epsilon: f64,
}

fn cells(config: &SweepConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for (m, c) in config.feature_pairs() {
        for &norm in &config.norms {
            for &eta in &config.etas {
                for scale in config.scales_for(norm) {
                    for epsilon in config.eps_for(norm) {
                        out.push(Cell {
                            index: out.len(),
                            norm,
                            m,
                            c,
                            eta,
                            scale,
                            epsilon,
                        });
                    }
                }
            }
        }
    }
    out
}

struct Fitted {
    fit: FitResult,
    nfs: f64,
    clean_loss: f64,
}

fn fit_cell(
    model: &GaussianLinearModel,
    attack: &AttackSpec,
    options: &OptimizerOptions,
) -> Result<Fitted> {
    let fit = minimize_adversarial_loss(model, attack, options)?;
    let nfs = spurious_reliance(model, attack, &fit, options.support_mask.as_deref())?;
    let clean_loss = standard_loss(model, &fit.theta_hat)?;
    Ok(Fitted {
        fit,
        nfs,
        clean_loss,
    })
}

fn record(
    config: &SweepConfig,
    cell: &Cell,
    seed: u64,
    kind: ModelKind,
    fitted: &Fitted,
) -> SweepRecord {
    SweepRecord {
        experiment: config.experiment,
        norm: cell.norm,
        m: cell.m,
        c: cell.c,
        epsilon: cell.epsilon,
        eta: cell.eta,
        scale: cell.scale,
        sigma_q: None,
        model: kind,
        seed,
        nfs: fitted.nfs,
        clean_loss: fitted.clean_loss,
        adversarial_loss: fitted.fit.objective,
        shifted_loss: None,
        converged: fitted.fit.converged,
        iterations: fitted.fit.iterations,
        theta_hat: fitted.fit.theta_hat.iter().copied().collect(),
    }
}

/// Fit every cell of the grid on the full coordinate set.
fn run_fit_grid(config: &SweepConfig) -> Result<SweepTable> {
    config.validate()?;
    let rows = cells(config)
        .par_iter()
        .map(|cell| {
            let spec = QMatrixSpec::new(cell.m, cell.c, cell.eta, cell.scale)?;
            let model = spec.model(config.sigma_w)?;
            let attack = AttackSpec::new(cell.norm, cell.epsilon)?;
            let fitted = fit_cell(&model, &attack, &config.optimizer)?;
            Ok(record(
                config,
                cell,
                derive_seed(config.seed, cell.index as u64),
                ModelKind::Total,
                &fitted,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { records: rows })
}

/// NFS of the adversarially trained fit across attack norms, budgets and
/// correlation levels.
pub fn run_nfs_sweep(config: &SweepConfig) -> Result<SweepTable> {
    run_fit_grid(config)
}

/// NFS across spurious-row scales and budgets.
pub fn run_scale_heatmap(config: &SweepConfig) -> Result<SweepTable> {
    run_fit_grid(config)
}

/// NFS across feature counts, with budgets large enough to reach the plateau.
pub fn run_plateau_sweep(config: &SweepConfig) -> Result<SweepTable> {
    run_fit_grid(config)
}

/// `2 q - noisy`: the perturbation reflected through `q`.
fn mirror(q: &DMatrix<f64>, noisy: &DMatrix<f64>) -> DMatrix<f64> {
    q - (noisy - q)
}

/// Core-only and all-feature fits trained on the unshifted covariance, then
/// scored under random perturbations of the spurious rows.
///
/// Draws come in antithetic pairs `Q + D`, `Q - D`. Both fits in a cell are
/// scored on the same perturbed matrices.
pub fn run_shift_robustness(config: &SweepConfig) -> Result<SweepTable> {
    config.validate()?;
    let n_sigma = config.sigma_qs.len();
    let per_cell = cells(config)
        .par_iter()
        .map(|cell| {
            let spec = QMatrixSpec::new(cell.m, cell.c, cell.eta, cell.scale)?;
            let q = spec.q_matrix()?;
            let model = spec.model(config.sigma_w)?;
            let attack = AttackSpec::new(cell.norm, cell.epsilon)?;
            let core_options = OptimizerOptions {
                support_mask: Some(spec.core_set().collect()),
                ..config.optimizer.clone()
            };
            let total = fit_cell(&model, &attack, &config.optimizer)?;
            let core = fit_cell(&model, &attack, &core_options)?;
            let score = |theta: &DVector<f64>, q_shifted: &DMatrix<f64>| match config.shift_loss {
                ShiftLoss::Standard => {
                    shifted_standard_loss(theta, q_shifted, model.theta_opt(), config.sigma_w)
                }
                ShiftLoss::Adversarial => shifted_adversarial_loss(
                    theta,
                    q_shifted,
                    model.theta_opt(),
                    config.sigma_w,
                    &attack,
                ),
            };

            let mut rows = Vec::with_capacity(2 * n_sigma);
            for (k, &sigma_q) in config.sigma_qs.iter().enumerate() {
                let seed = derive_seed(config.seed, (cell.index * n_sigma + k) as u64);
                let (core_loss, total_loss) = if sigma_q == 0.0 {
                    (
                        score(&core.fit.theta_hat, &q)?,
                        score(&total.fit.theta_hat, &q)?,
                    )
                } else {
                    let (mut sc, mut st) = (0.0, 0.0);
                    let mut noisy = q.clone();
                    for d in 0..config.noise_draws {
                        let shifted = if d % 2 == 0 {
                            noisy = perturb_spurious_rows(
                                &q,
                                &spec,
                                sigma_q,
                                derive_seed(seed, (d / 2) as u64),
                            )?;
                            noisy.clone()
                        } else {
                            mirror(&q, &noisy)
                        };
                        sc += score(&core.fit.theta_hat, &shifted)?;
                        st += score(&total.fit.theta_hat, &shifted)?;
                    }
                    let n = config.noise_draws as f64;
                    (sc / n, st / n)
                };
                for (kind, fitted, loss) in [
                    (ModelKind::Core, &core, core_loss),
                    (ModelKind::Total, &total, total_loss),
                ] {
                    let mut r = record(config, cell, seed, kind, fitted);
                    r.sigma_q = Some(sigma_q);
                    r.shifted_loss = Some(loss);
                    rows.push(r);
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        records: per_cell.into_iter().flatten().collect(),
    })
}

pub fn run_experiment(config: &SweepConfig) -> Result<SweepTable> {
    match config.experiment {
        Experiment::NfsSweep => run_nfs_sweep(config),
        Experiment::ScaleHeatmap => run_scale_heatmap(config),
        Experiment::ShiftRobustness => run_shift_robustness(config),
        Experiment::Plateau => run_plateau_sweep(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_hits_endpoints_exactly() {
        let g = linspace(0.0, 2.0, 21);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 1.0);
        assert_eq!(g[20], 2.0);
        let h = linspace(0.0, 1.0, 21);
        assert_eq!(h[5], 0.25);
        assert_eq!(h[10], 0.5);
        assert_eq!(linspace(3.0, 4.0, 1), vec![3.0]);
    }

    #[test]
    fn default_grids() {
        assert_eq!(
            Experiment::NfsSweep.default_eps_grid(Norm::L1).last(),
            Some(&2.0)
        );
        assert_eq!(
            Experiment::NfsSweep.default_eps_grid(Norm::LInf).last(),
            Some(&1.0)
        );
        assert_eq!(
            Experiment::ShiftRobustness
                .default_eps_grid(Norm::L2)
                .last(),
            Some(&1.0)
        );
        let p = Experiment::Plateau.default_eps_grid(Norm::L1);
        assert_eq!(p.len(), 24);
        assert_eq!(p.last(), Some(&1000.0));
        assert_eq!(
            Experiment::ShiftRobustness.default_scales(Norm::LInf),
            vec![3.0]
        );
    }

    #[test]
    fn feature_pairs_filter_invalid_combinations() {
        let config = SweepConfig::new(Experiment::Plateau);
        assert_eq!(
            config.feature_pairs(),
            vec![(5, 4), (8, 4), (12, 4), (20, 4), (12, 10), (20, 10)]
        );
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut config = SweepConfig::new(Experiment::NfsSweep);
        config.c = vec![5];
        assert!(config.validate().is_err());
        let mut config = SweepConfig::new(Experiment::NfsSweep);
        config.eps = Some(vec![]);
        assert!(config.validate().is_err());
        let mut config = SweepConfig::new(Experiment::NfsSweep);
        config.eps = Some(vec![-1.0]);
        assert!(config.validate().is_err());
        let mut config = SweepConfig::new(Experiment::ShiftRobustness);
        config.noise_draws = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn small_sweep_has_expected_rows_and_header() {
        let mut config = SweepConfig::new(Experiment::NfsSweep);
        config.eps = Some(vec![0.0, 0.5]);
        config.etas = vec![0.25];
        let table = run_nfs_sweep(&config).unwrap();
        assert_eq!(table.records.len(), config.row_count());
        assert_eq!(table.records.len(), 6);
        let csv = table.to_csv_string().unwrap();
        assert!(csv.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(csv.lines().count(), 7);
        for r in &table.records {
            assert!((0.0..=1.0).contains(&r.nfs));
            assert!(r.clean_loss >= 0.01 && r.adversarial_loss >= 0.01);
            if r.epsilon == 0.0 {
                assert!(r.nfs < 1e-20);
            }
        }
    }

    #[test]
    fn shift_rows_pair_core_and_total() {
        let mut config = SweepConfig::new(Experiment::ShiftRobustness);
        config.norms = vec![Norm::L2];
        config.eps = Some(vec![0.5]);
        config.sigma_qs = vec![0.0, 0.8];
        config.noise_draws = 10;
        let table = run_shift_robustness(&config).unwrap();
        assert_eq!(table.records.len(), config.row_count());
        let rows = &table.records;
        assert_eq!(rows[0].model, ModelKind::Core);
        assert_eq!(rows[1].model, ModelKind::Total);
        for r in &rows[..2] {
            assert_eq!(r.shifted_loss, Some(r.clean_loss));
        }
        assert_eq!(rows[2].seed, rows[3].seed);
        assert_eq!(rows[0].nfs, 0.0);
        assert!(rows[1].adversarial_loss <= rows[0].adversarial_loss + 1e-9);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let mut config = SweepConfig::new(Experiment::ShiftRobustness);
        config.eps = Some(vec![0.3]);
        config.sigma_qs = vec![0.5];
        config.noise_draws = 5;
        let a = run_shift_robustness(&config)
            .unwrap()
            .to_csv_string()
            .unwrap();
        let b = run_shift_robustness(&config)
            .unwrap()
            .to_csv_string()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shifted_mean_tracks_its_expectation() {
        // E ||(Q + D)'d||^2 = ||Q'd||^2 + sigma_q^2 * m * ||d_S||^2.
        let mut config = SweepConfig::new(Experiment::ShiftRobustness);
        config.norms = vec![Norm::L2];
        config.eps = Some(vec![1.0]);
        config.sigma_qs = vec![0.7];
        config.noise_draws = 4000;
        let table = run_shift_robustness(&config).unwrap();
        let total = &table.records[1];
        let theta_s: f64 = total.theta_hat[2..].iter().map(|v| v * v).sum();
        let expected = total.clean_loss + 0.49 * 5.0 * theta_s;
        let got = total.shifted_loss.unwrap();
        assert!(
            (got - expected).abs() < 0.03 * expected,
            "{got} vs {expected}"
        );
        assert!(theta_s > 0.01);
        let core = &table.records[0];
        assert!((core.shifted_loss.unwrap() - core.clean_loss).abs() < 1e-12);
    }
}
