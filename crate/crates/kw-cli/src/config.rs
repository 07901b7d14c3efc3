//! Flat run configuration shared by every subcommand.
//!
//! Each field can come from a JSON config file (snake_case keys) or from the
//! matching kebab-case flag; flags win.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use kw_lattice::absorption_solver::{critical_alpha, BarrierBand, ExtremalOptions};
use kw_lattice::greens::{default_cache_dir, DEFAULT_QUADRATURE_POINTS};
use kw_lattice::IterationOptions;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Source,
    Absorption,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Stated,
    Widened,
}

impl Band {
    pub fn band(self) -> BarrierBand {
        match self {
            Band::Stated => BarrierBand::STATED,
            Band::Widened => BarrierBand::WIDENED,
        }
    }
}

macro_rules! run_config {
    ($( $(#[$meta:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        #[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct RunConfig {
            $(
                $(#[$meta])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl RunConfig {
            /// Fields set in `over` replace those in `self`.
            pub fn overlay(mut self, over: RunConfig) -> RunConfig {
                $( if over.$field.is_some() { self.$field = over.$field; } )*
                self
            }
        }
    };
}

run_config! {
    /// Output directory for reports and CSV artifacts [default: kw-out]
    #[arg(long, global = true, help_heading = "Paths")]
    out: PathBuf,
    /// Green's table cache directory [default: $KW_LATTICE_CACHE or the system temp dir]
    #[arg(long, global = true, help_heading = "Paths")]
    cache_dir: PathBuf,

    /// Exact radius of the Green's table [default: 256; box radius + 4 for extremal]
    #[arg(long, global = true, help_heading = "Green's table")]
    table_radius: usize,
    /// Quadrature points per Green's table entry
    #[arg(long, global = true, help_heading = "Green's table")]
    quadrature: usize,

    /// Nonlinearity strength
    #[arg(long, global = true, help_heading = "Problem")]
    kappa: f64,
    /// Total mass of the nonlinear term
    #[arg(long, global = true, help_heading = "Problem", conflicts_with = "sigma")]
    alpha: f64,
    /// Decay exponent sigma = alpha kappa / 2pi (alternative to --alpha)
    #[arg(long, global = true, help_heading = "Problem")]
    sigma: f64,
    /// Point mass at the origin
    #[arg(long, global = true, help_heading = "Problem")]
    beta: f64,
    /// Domain radius; for `greens` commands the table radius
    #[arg(long, global = true, help_heading = "Problem")]
    radius: u32,
    /// Equation family for sweeps [default: absorption]
    #[arg(long, global = true, help_heading = "Problem", value_enum)]
    equation: Equation,

    /// Comma-separated alpha values
    #[arg(long, global = true, help_heading = "Sweeps", value_delimiter = ',', conflicts_with = "sigmas")]
    alphas: Vec<f64>,
    /// Comma-separated sigma values (alternative to --alphas)
    #[arg(long, global = true, help_heading = "Sweeps", value_delimiter = ',')]
    sigmas: Vec<f64>,
    /// Comma-separated beta values
    #[arg(long, global = true, help_heading = "Sweeps", value_delimiter = ',')]
    betas: Vec<f64>,
    /// Comma-separated kappa values
    #[arg(long, global = true, help_heading = "Sweeps", value_delimiter = ',')]
    kappas: Vec<f64>,
    /// Worker threads for sweeps [default: all cores]
    #[arg(long, global = true, help_heading = "Sweeps")]
    jobs: usize,

    /// Fixed-point tolerance
    #[arg(long, global = true, help_heading = "Iteration")]
    tol: f64,
    #[arg(long, global = true, help_heading = "Iteration")]
    max_iter: usize,
    #[arg(long, global = true, help_heading = "Iteration")]
    damping: f64,
    #[arg(long, global = true, help_heading = "Iteration")]
    patience: usize,

    /// Extremal box radius [default: 512]
    #[arg(long, global = true, help_heading = "Extremal")]
    box_radius: u32,
    /// Radius of the intermediate regular solve [default: box radius / 2]
    #[arg(long, global = true, help_heading = "Extremal")]
    mid_radius: u32,
    /// Barrier band
    #[arg(long, global = true, help_heading = "Extremal", value_enum)]
    band: Band,
    /// Offsets alpha - alpha0 for the limit check (comma-separated)
    #[arg(long, global = true, help_heading = "Extremal", value_delimiter = ',')]
    limit_offsets: Vec<f64>,
    /// Inner radius of the limit-check comparison [default: mid radius / 4]
    #[arg(long, global = true, help_heading = "Extremal")]
    inner_radius: u32,

    /// Decay exponents m for `verify decay` (comma-separated) [default: 3,4,6]
    #[arg(long, global = true, help_heading = "Verification", value_delimiter = ',')]
    m: Vec<f64>,
    /// Number of random instances
    #[arg(long, global = true, help_heading = "Verification")]
    trials: usize,
    #[arg(long, global = true, help_heading = "Verification")]
    seed: u64,

    /// Smallest sigma - 2 on the scan grid [default: 0.05]
    #[arg(long, global = true, help_heading = "Threshold scan")]
    sigma_min_offset: f64,
    /// Largest sigma on the scan grid [default: 20]
    #[arg(long, global = true, help_heading = "Threshold scan")]
    sigma_max: f64,
    /// Scan grid size [default: 400]
    #[arg(long, global = true, help_heading = "Threshold scan")]
    points: usize,
    /// Override the measured constant c0
    #[arg(long, global = true, help_heading = "Threshold scan")]
    c0: f64,
    #[arg(long, global = true, help_heading = "Threshold scan")]
    c1: f64,
    #[arg(long, global = true, help_heading = "Threshold scan")]
    c2: f64,
}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

fn positive(name: &str, v: f64) -> Result<f64, UsageError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        usage(format!("--{name} must be positive and finite, got {v}"))
    }
}

/// File values overlaid by flags; a flag for one of `alpha`/`sigma` (or
/// `alphas`/`sigmas`) drops the other from the file.
pub fn merge(mut file: RunConfig, flags: RunConfig) -> RunConfig {
    if flags.alpha.is_some() {
        file.sigma = None;
    }
    if flags.sigma.is_some() {
        file.alpha = None;
    }
    if flags.alphas.is_some() {
        file.sigmas = None;
    }
    if flags.sigmas.is_some() {
        file.alphas = None;
    }
    file.overlay(flags)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("bad config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("kw-out"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(default_cache_dir)
    }

    pub fn quadrature(&self) -> usize {
        self.quadrature.unwrap_or(DEFAULT_QUADRATURE_POINTS)
    }

    pub fn kappa(&self) -> Result<f64, UsageError> {
        match self.kappa {
            Some(k) => positive("kappa", k),
            None => usage("--kappa is required"),
        }
    }

    pub fn beta_or(&self, default: f64) -> f64 {
        self.beta.unwrap_or(default)
    }

    pub fn beta(&self) -> Result<f64, UsageError> {
        self.beta.ok_or_else(|| UsageError("--beta is required".into()))
    }

    /// Mass from `--alpha`, or from `--sigma` through `alpha = 2 pi sigma / kappa`.
    pub fn alpha(&self, kappa: f64) -> Result<f64, UsageError> {
        match (self.alpha, self.sigma) {
            (Some(_), Some(_)) => usage("give either --alpha or --sigma, not both"),
            (Some(a), None) => positive("alpha", a),
            (None, Some(s)) => Ok(2.0 * PI * positive("sigma", s)? / kappa),
            (None, None) => usage("--alpha or --sigma is required"),
        }
    }

    /// Swept masses from `--alphas` or `--sigmas`.
    pub fn alphas(&self, kappa: f64) -> Result<Vec<f64>, UsageError> {
        let list = match (&self.alphas, &self.sigmas) {
            (Some(_), Some(_)) => return usage("give either --alphas or --sigmas, not both"),
            (Some(a), None) => a.clone(),
            (None, Some(s)) => s.iter().map(|s| 2.0 * PI * s / kappa).collect(),
            (None, None) => return usage("--alphas or --sigmas is required"),
        };
        nonempty("alphas", list)
    }

    pub fn list(&self, name: &str, v: &Option<Vec<f64>>) -> Result<Vec<f64>, UsageError> {
        match v {
            Some(v) => nonempty(name, v.clone()),
            None => usage(format!("--{name} is required")),
        }
    }

    pub fn radius_or(&self, default: u32) -> u32 {
        self.radius.unwrap_or(default)
    }

    pub fn equation(&self) -> Equation {
        self.equation.unwrap_or(Equation::Absorption)
    }

    pub fn iteration(&self) -> Result<IterationOptions, UsageError> {
        let d = IterationOptions::default();
        let o = IterationOptions {
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            damping: self.damping.unwrap_or(d.damping),
            patience: self.patience.unwrap_or(d.patience),
            ..d
        };
        o.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(o)
    }

    pub fn extremal(&self) -> ExtremalOptions {
        let d = ExtremalOptions::default();
        let radius = self.box_radius.unwrap_or(d.radius);
        ExtremalOptions {
            radius,
            mid_radius: self.mid_radius.unwrap_or(radius / 2),
            band: self.band.unwrap_or(Band::Widened).band(),
            ..d
        }
    }

    /// Masses `alpha0 + offset` in decreasing order for the limit check.
    pub fn limit_alphas(&self, kappa: f64) -> Option<Vec<f64>> {
        let a0 = critical_alpha(kappa);
        self.limit_offsets.as_ref().map(|offs| {
            let mut a: Vec<f64> = offs.iter().map(|o| a0 + o).collect();
            a.sort_by(|x, y| y.total_cmp(x));
            a
        })
    }

    pub fn decay_exponents(&self) -> Vec<f64> {
        self.m.clone().unwrap_or_else(|| vec![3.0, 4.0, 6.0])
    }
}

fn nonempty(name: &str, v: Vec<f64>) -> Result<Vec<f64>, UsageError> {
    if v.is_empty() {
        return usage(format!("--{name} must not be empty"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return usage(format!("--{name} must be finite"));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: RunConfig = serde_json::from_str(r#"{"kappa": 1.0, "beta": 3.0, "alphas": [7, 8]}"#).unwrap();
        let flags = RunConfig { kappa: Some(2.0), ..RunConfig::default() };
        let merged = file.overlay(flags);
        assert_eq!(merged.kappa, Some(2.0));
        assert_eq!(merged.beta, Some(3.0));
        assert_eq!(merged.alphas, Some(vec![7.0, 8.0]));
    }

    #[test]
    fn flag_sigma_replaces_file_alpha() {
        let file = RunConfig { alpha: Some(9.0), ..RunConfig::default() };
        let flags = RunConfig { sigma: Some(3.0), ..RunConfig::default() };
        let m = merge(file, flags);
        assert_eq!((m.alpha, m.sigma), (None, Some(3.0)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"kapa": 1.0}"#).is_err());
    }

    #[test]
    fn sigma_is_normalized_to_alpha() {
        let c = RunConfig { sigma: Some(4.0), ..RunConfig::default() };
        assert!((c.alpha(0.5).unwrap() - 16.0 * PI).abs() < 1e-12);
        let both = RunConfig { alpha: Some(1.0), ..c };
        assert!(both.alpha(0.5).is_err());
    }

    #[test]
    fn limit_offsets_sort_decreasing() {
        let c = RunConfig { limit_offsets: Some(vec![0.01, 1.0, 0.1]), ..RunConfig::default() };
        let a = c.limit_alphas(2.0).unwrap();
        assert!(a.windows(2).all(|w| w[0] > w[1]));
        assert!((a[2] - 2.0 * PI - 0.01).abs() < 1e-12);
    }
}
