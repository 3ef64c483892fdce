//! Experiment settings: a TOML file with one table per section, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// `αI + β11ᵀ`.
    AlphaBeta,
    /// Eigenvalues `1, 2, …, n` in a random basis.
    UniformGrid,
    /// One small eigenvalue, the rest large.
    Outlier,
    /// One large eigenvalue, the rest small.
    OutlierLarge,
    /// `diag(1, 2, …, n)`.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SketchKind {
    Convenient,
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamSource {
    /// `μᴾ = λ_min/Tr`, `νᴾ = Tr/min A_ii`.
    Analytic,
    /// Brute-force spectral constants (small `n` only).
    Oracle,
    /// `νᴾ` with `μ = 1/(divisor·ν)`.
    Heuristic,
    /// `--mu`, `--nu` as given.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Euclidean,
    System,
}

/// Overwrites each field of `$dst` that `$src` sets.
macro_rules! overlay {
    ($dst:expr, $src:expr; $($f:ident),+ $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )+
    };
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemArgs {
    /// Test matrix family.
    #[arg(long = "problem", value_enum)]
    pub kind: Option<ProblemKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// Small eigenvalue of the outlier families.
    #[arg(long)]
    pub small: Option<f64>,
    /// Large eigenvalue of the outlier families.
    #[arg(long)]
    pub large: Option<f64>,
    /// Seed of the random orthonormal basis.
    #[arg(long)]
    pub matrix_seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchArgs {
    #[arg(long = "sketch", value_enum)]
    pub strategy: Option<SketchKind>,
    /// Columns per sketch.
    #[arg(long)]
    pub sketch_rank: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamArgs {
    #[arg(long = "params", value_enum)]
    pub source: Option<ParamSource>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub divisor: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    /// Monte-Carlo draws for oracle estimates under Gaussian sketches.
    #[arg(long)]
    pub oracle_samples: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// Comma-separated methods to run.
    #[arg(long = "mode", value_delimiter = ',')]
    pub modes: Option<Vec<String>>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Wall-clock cap per run, in seconds.
    #[arg(long)]
    pub time_budget_s: Option<f64>,
    /// Comma-separated seeds; one run per seed and mode.
    #[arg(long = "seed-list", value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record `λ_min(X_k)` during inversion.
    #[arg(long)]
    pub track_lambda_min: Option<bool>,
    /// Norm for linear-system projections.
    #[arg(long, value_enum)]
    pub metric: Option<MetricKind>,
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeArgs {
    /// LIBSVM dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Regularization; defaults to `1/m`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fixed stepsize; grid-searched when absent.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub center: Option<bool>,
    #[arg(long)]
    pub normalize: Option<bool>,
    #[arg(long)]
    pub bias: Option<bool>,
    /// Label treated as +1 for multiclass files.
    #[arg(long, allow_hyphen_values = true)]
    pub positive_class: Option<f64>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Iteration cap of the reference run that fixes `f*`.
    #[arg(long)]
    pub reference_iters: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridArgs {
    /// Time budget of each cell run, in seconds.
    #[arg(long)]
    pub cell_budget_s: Option<f64>,
}

/// Every section; a file supplies the base and flags override it.
#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub sketch: SketchArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub optimize: OptimizeArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set in `flags` win.
    pub fn overlay(mut self, flags: &Settings) -> Self {
        overlay!(self.problem, flags.problem; kind, n, alpha, beta, small, large, matrix_seed);
        overlay!(self.sketch, flags.sketch; strategy, sketch_rank);
        overlay!(self.params, flags.params; source, mu, nu, divisor, omega, oracle_samples);
        overlay!(self.run, flags.run; modes, max_iter, record_every, time_budget_s, seeds, out, track_lambda_min, metric);
        overlay!(self.optimize, flags.optimize; data, lambda, eta, center, normalize, bias, positive_class, grad_tol, reference_iters);
        overlay!(self.grid, flags.grid; cell_budget_s);
        self
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let seeds = self.run.seeds.clone().unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            bail!("seed list is empty");
        }
        Ok(seeds)
    }

    pub fn modes(&self, default: &[&str]) -> Result<Vec<String>> {
        let modes = self.run.modes.clone().unwrap_or_else(|| default.iter().map(|s| s.to_string()).collect());
        if modes.is_empty() {
            bail!("no modes requested");
        }
        Ok(modes)
    }

    pub fn time_budget(&self) -> Result<Option<std::time::Duration>> {
        match self.run.time_budget_s {
            None => Ok(None),
            Some(t) if t > 0.0 && t.is_finite() => Ok(Some(std::time::Duration::from_secs_f64(t))),
            Some(t) => bail!("time budget must be positive, got {t}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_sections_parse() {
        let s = Settings::from_toml(
            r#"
            [problem]
            kind = "alpha-beta"
            n = 50
            alpha = 1.1
            beta = -0.01

            [sketch]
            strategy = "gaussian"
            sketch_rank = 2

            [params]
            source = "heuristic"
            divisor = 100.0

            [run]
            modes = ["plain", "accel"]
            seeds = [1, 2, 3]
            time_budget_s = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(s.problem.kind, Some(ProblemKind::AlphaBeta));
        assert_eq!(s.sketch.strategy, Some(SketchKind::Gaussian));
        assert_eq!(s.params.source, Some(ParamSource::Heuristic));
        assert_eq!(s.seeds().unwrap(), vec![1, 2, 3]);
        assert_eq!(s.time_budget().unwrap(), Some(std::time::Duration::from_millis(500)));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Settings::from_toml("[run]\nmax_iters = 3\n").is_err());
        assert!(Settings::from_toml("[nope]\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = Settings::from_toml("[problem]\nn = 10\nalpha = 2.0\n[run]\nseeds = [4]\n").unwrap();
        let mut flags = Settings::default();
        flags.problem.n = Some(20);
        flags.run.max_iter = Some(7);
        let s = file.overlay(&flags);
        assert_eq!(s.problem.n, Some(20));
        assert_eq!(s.problem.alpha, Some(2.0));
        assert_eq!(s.run.max_iter, Some(7));
        assert_eq!(s.seeds().unwrap(), vec![4]);
    }

    #[test]
    fn bad_values_rejected() {
        let mut s = Settings::default();
        s.run.seeds = Some(vec![]);
        assert!(s.seeds().is_err());
        s.run.time_budget_s = Some(0.0);
        assert!(s.time_budget().is_err());
        s.run.modes = Some(vec![]);
        assert!(s.modes(&["plain"]).is_err());
    }
}
