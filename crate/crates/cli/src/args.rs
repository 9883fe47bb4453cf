//! Command-line flags, the `key=value` config file, and their merge into a
//! [`SweepConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use advspur_core::experiments::{linspace, Experiment, ShiftLoss, SweepConfig};
use advspur_core::Norm;
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "advspur",
    version,
    about = "Adversarial training and spurious-feature reliance in Gaussian linear regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the oracle suite; exits 1 if any check fails.
    Validate(ValidateArgs),
    /// NFS of adversarial fits across norms, budgets and correlation levels.
    NfsSweep(SweepArgs),
    /// NFS across spurious-row scales and budgets.
    ScaleHeatmap(SweepArgs),
    /// Shifted loss of core-only and all-feature fits.
    ShiftRobustness(SweepArgs),
    /// NFS across feature counts up to large budgets.
    Plateau(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the constant c1 in the closed form (fault injection).
    #[arg(long, hide = true)]
    pub c1: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    /// key=value file with the same keys as the long flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub c: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub eta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub norm: Vec<Norm>,
    /// start:stop:count
    #[arg(long)]
    pub eps_grid: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    /// start:stop:count or a comma-separated list.
    #[arg(long)]
    pub scale_grid: Option<String>,
    /// start:stop:count or a comma-separated list.
    #[arg(long)]
    pub sigma_q_grid: Option<String>,
    #[arg(long)]
    pub noise_draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render an SVG next to the CSV.
    #[arg(long)]
    pub emit_plots: bool,
    /// Loss averaged under shift: standard or adversarial.
    #[arg(long)]
    pub shift_loss: Option<ShiftLoss>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

/// A fully merged sweep invocation.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub config: SweepConfig,
    pub out: Option<PathBuf>,
    pub emit_plots: bool,
}

/// `start:stop:count`, or a comma-separated list of values.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let [start, stop, count] = parts.as_slice() else {
            bail!("grid `{s}` must be start:stop:count");
        };
        let start: f64 = start
            .parse()
            .with_context(|| format!("bad grid start in `{s}`"))?;
        let stop: f64 = stop
            .parse()
            .with_context(|| format!("bad grid stop in `{s}`"))?;
        let count: usize = count
            .parse()
            .with_context(|| format!("bad grid count in `{s}`"))?;
        if count == 0 {
            bail!("grid `{s}` has zero points");
        }
        if !(start.is_finite() && stop.is_finite()) || stop < start {
            bail!("grid `{s}` must have finite start <= stop");
        }
        return Ok(linspace(start, stop, count));
    }
    parse_list(s)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| anyhow!("bad value `{t}`: {e}")))
        .collect()
}

const KEYS: [&str; 14] = [
    "m",
    "c",
    "eta",
    "norm",
    "eps-grid",
    "eps",
    "scale-grid",
    "sigma-q-grid",
    "noise-draws",
    "seed",
    "out",
    "emit-plots",
    "shift-loss",
    "max-iters",
];

/// Parse a config file: one `key = value` per line, `#` comments, keys as in
/// the long flags (underscores accepted). Repeated keys append for list keys
/// and overwrite otherwise.
pub fn parse_config_text(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value", n + 1))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if !allowed.contains(&key.as_str()) {
            bail!("line {}: unknown key `{key}`", n + 1);
        }
        let value = value.trim().to_string();
        let list_key = matches!(key.as_str(), "m" | "c" | "eta" | "norm" | "eps");
        match out.get_mut(&key) {
            Some(existing) if list_key => {
                existing.push(',');
                existing.push_str(&value);
            }
            _ => {
                out.insert(key, value);
            }
        }
    }
    Ok(out)
}

fn read_config(path: &Path, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config_text(&text, allowed).with_context(|| format!("in config {}", path.display()))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("bad boolean `{s}`"),
    }
}

impl SweepArgs {
    /// Defaults for the experiment, then the config file, then flags.
    pub fn plan(&self, experiment: Experiment) -> Result<SweepPlan> {
        let mut file = match &self.config {
            Some(path) => read_config(path, &KEYS)?,
            None => BTreeMap::new(),
        };
        let mut take = |key: &str| file.remove(key);

        let mut config = SweepConfig::new(experiment);
        macro_rules! list {
            ($flag:expr, $key:expr, $ty:ty) => {{
                let from_file = take($key);
                if !$flag.is_empty() {
                    Some($flag.clone())
                } else if let Some(v) = from_file {
                    Some(parse_list::<$ty>(&v).with_context(|| format!("config key `{}`", $key))?)
                } else {
                    None
                }
            }};
        }
        if let Some(m) = list!(self.m, "m", usize) {
            config.m = m;
        }
        if let Some(c) = list!(self.c, "c", usize) {
            config.c = c;
        }
        if let Some(eta) = list!(self.eta, "eta", f64) {
            config.etas = eta;
        }
        if let Some(norms) = list!(self.norm, "norm", Norm) {
            config.norms = norms;
        }

        // Budgets: the grid and the explicit values are merged; either one
        // given on the command line replaces both from the file.
        let file_grid = take("eps-grid");
        let file_eps = take("eps");
        let (grid, extra) = if self.eps_grid.is_some() || !self.eps.is_empty() {
            (self.eps_grid.clone(), self.eps.clone())
        } else {
            let extra = match file_eps {
                Some(v) => parse_list::<f64>(&v).context("config key `eps`")?,
                None => Vec::new(),
            };
            (file_grid, extra)
        };
        if grid.is_some() || !extra.is_empty() {
            let mut eps = match grid {
                Some(g) => parse_grid(&g).context("epsilon grid")?,
                None => Vec::new(),
            };
            eps.extend(extra);
            if eps.iter().any(|e| e.is_nan()) {
                bail!("epsilon grid contains NaN");
            }
            eps.sort_by(f64::total_cmp);
            eps.dedup();
            config.eps = Some(eps);
        }

        let file_scale = take("scale-grid");
        if let Some(g) = self.scale_grid.clone().or(file_scale) {
            config.scales = Some(parse_grid(&g).context("scale grid")?);
        }
        let file_sigma = take("sigma-q-grid");
        if let Some(g) = self.sigma_q_grid.clone().or(file_sigma) {
            config.sigma_qs = parse_grid(&g).context("sigma_q grid")?;
        }
        let file_draws = take("noise-draws");
        if let Some(n) = self.noise_draws {
            config.noise_draws = n;
        } else if let Some(v) = file_draws {
            config.noise_draws = v.parse().context("config key `noise-draws`")?;
        }
        let file_seed = take("seed");
        if let Some(s) = self.seed {
            config.seed = s;
        } else if let Some(v) = file_seed {
            config.seed = v.parse().context("config key `seed`")?;
        }
        let file_loss = take("shift-loss");
        if let Some(l) = self.shift_loss {
            config.shift_loss = l;
        } else if let Some(v) = file_loss {
            config.shift_loss = v.parse()?;
        }
        let file_iters = take("max-iters");
        if let Some(n) = self.max_iters {
            config.optimizer.max_iters = n;
        } else if let Some(v) = file_iters {
            config.optimizer.max_iters = v.parse().context("config key `max-iters`")?;
        }
        let file_out = take("out");
        let out = self.out.clone().or(file_out.map(PathBuf::from));
        let file_plots = take("emit-plots");
        let emit_plots = self.emit_plots
            || file_plots
                .map(|v| parse_bool(&v))
                .transpose()?
                .unwrap_or(false);

        config.validate()?;
        if config.optimizer.max_iters == 0 {
            bail!("max-iters must be >= 1");
        }
        Ok(SweepPlan {
            config,
            out,
            emit_plots,
        })
    }
}

/// Merged settings for `validate`.
#[derive(Debug, Clone)]
pub struct ValidatePlan {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub c1: Option<f64>,
}

impl ValidateArgs {
    pub fn plan(&self) -> Result<ValidatePlan> {
        let mut file = match &self.config {
            Some(path) => read_config(path, &["seed", "out"])?,
            None => BTreeMap::new(),
        };
        let seed = match (self.seed, file.remove("seed")) {
            (Some(s), _) => Some(s),
            (None, Some(v)) => Some(v.parse().context("config key `seed`")?),
            (None, None) => None,
        };
        let out = self.out.clone().or(file.remove("out").map(PathBuf::from));
        if let Some(c1) = self.c1 {
            if !(c1 > 0.0 && c1 < 1.0) {
                bail!("c1 must lie in (0, 1)");
            }
        }
        Ok(ValidatePlan {
            seed,
            out,
            c1: self.c1,
        })
    }
}
