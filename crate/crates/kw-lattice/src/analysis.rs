//! Asymptotic fits, measured universal constants and the threshold scan.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::convolution::mean_zero_decay_check;
use crate::error::{argument, Result};
use crate::greens::{estimate_c1, GreensTable};
use crate::lattice_core::{tail_bound, GridFunction, LatticePoint, TruncatedDomain};
use crate::numeric::{linear_fit, NeumaierSum};

/// Minimum number of lattice points an annulus fit needs.
pub const MIN_FIT_POINTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Log,
    LogDoubleLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub residual_sup: f64,
    pub annulus: (f64, f64),
    pub model: FitModel,
    pub n_points: usize,
}

fn annulus_samples(u: &GridFunction, r_in: f64, r_out: f64) -> Result<Vec<(f64, f64)>> {
    if !(r_in > 0.0 && r_in < r_out) || r_out > u.domain().radius() as f64 {
        return argument(format!(
            "annulus ({r_in}, {r_out}) must satisfy 0 < r_in < r_out <= domain radius"
        ));
    }
    let samples: Vec<(f64, f64)> = u
        .domain()
        .points()
        .iter()
        .zip(u.values())
        .filter_map(|(p, v)| {
            let r = p.norm();
            (r >= r_in && r <= r_out).then_some((r, *v))
        })
        .collect();
    if samples.len() < MIN_FIT_POINTS {
        return argument(format!(
            "annulus contains {} points, need at least {MIN_FIT_POINTS}",
            samples.len()
        ));
    }
    Ok(samples)
}

/// Least-squares fit `u(x) ~ slope ln|x| + intercept` over `r_in <= |x| <= r_out`.
pub fn fit_log_asymptote(u: &GridFunction, r_in: f64, r_out: f64) -> Result<FitResult> {
    let s = annulus_samples(u, r_in, r_out)?;
    let xs: Vec<f64> = s.iter().map(|(r, _)| r.ln()).collect();
    let ys: Vec<f64> = s.iter().map(|(_, v)| *v).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    let residual_sup = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    Ok(FitResult {
        slope,
        intercept,
        residual_sup,
        annulus: (r_in, r_out),
        model: FitModel::Log,
        n_points: s.len(),
    })
}

/// Fit `u(x) ~ -(2/kappa)(ln|x| + ln ln|x|) + d` with the slopes pinned; only
/// `d` is free. `slope` reports the pinned value `-2/kappa`.
pub fn fit_double_log(u: &GridFunction, kappa: f64, r_in: f64, r_out: f64) -> Result<FitResult> {
    if !(kappa > 0.0) || r_in <= 1.0 {
        return argument("double-log fit needs kappa > 0 and r_in > 1");
    }
    let s = annulus_samples(u, r_in, r_out)?;
    let a = 2.0 / kappa;
    let z: Vec<f64> = s
        .iter()
        .map(|(r, v)| v + a * (r.ln() + r.ln().ln()))
        .collect();
    let mut acc = NeumaierSum::new();
    z.iter().for_each(|v| acc.add(*v));
    let intercept = acc.value() / z.len() as f64;
    let residual_sup = z.iter().map(|v| (v - intercept).abs()).fold(0.0, f64::max);
    Ok(FitResult {
        slope: -a,
        intercept,
        residual_sup,
        annulus: (r_in, r_out),
        model: FitModel::LogDoubleLog,
        n_points: s.len(),
    })
}

/// Oscillation `max - min` of `u + (2/kappa)(ln|x| + ln ln|x|)` on the annulus.
pub fn double_log_oscillation(u: &GridFunction, kappa: f64, r_in: f64, r_out: f64) -> Result<f64> {
    let s = annulus_samples(u, r_in, r_out)?;
    let a = 2.0 / kappa;
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (r, v)| {
        let z = v + a * (r.ln() + r.ln().ln());
        (lo.min(z), hi.max(z))
    });
    Ok(hi - lo)
}

/// Measured stand-ins for the universal constants entering the threshold `h0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniversalConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl UniversalConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c1 > 0.0 && self.c2 > 0.0)
            || !(self.c0.is_finite() && self.c1.is_finite() && self.c2.is_finite())
        {
            return argument("universal constants must be positive and finite");
        }
        Ok(())
    }
}

/// Smallest `C2 >= 1` with `sum_x (1+|x|)^{-sigma} <= C2/(sigma-2)` for every
/// `sigma` in the sample, using an exact head on `|x| <= radius` plus the
/// analytic tail bound.
pub fn measure_c2(sigmas: &[f64], radius: u32) -> Result<f64> {
    let d = TruncatedDomain::euclidean(radius)?;
    let mut c2: f64 = 1.0;
    for &s in sigmas {
        if !(s > 2.0) {
            return argument("measure_c2 needs sigma > 2");
        }
        let mut acc = NeumaierSum::new();
        for p in d.points() {
            acc.add((1.0 + p.norm()).powf(-s));
        }
        let tail = tail_bound(s, 0.0, d.extent() as f64 + 1.0)?;
        c2 = c2.max((acc.value() + tail) * (s - 2.0));
    }
    Ok(c2)
}

/// `c0` as the largest `b^{1/m}` over mean-zero probes, where `b` is the
/// measured constant of the weighted decay bound.
pub fn measure_c0(table: &GreensTable, ms: &[f64], radius: u32) -> Result<f64> {
    let d = TruncatedDomain::euclidean(radius)?;
    let probes: [fn(LatticePoint) -> f64; 2] = [
        |p| match (p.x1, p.x2) {
            (0, 0) => 1.0,
            (1, 0) => -1.0,
            _ => 0.0,
        },
        |p| match (p.x1, p.x2) {
            (0, 0) => 4.0,
            (1, 0) | (-1, 0) | (0, 1) | (0, -1) => -1.0,
            _ => 0.0,
        },
    ];
    let mut c0: f64 = 1.0;
    for &m in ms {
        for probe in probes {
            let f = GridFunction::from_fn(d.clone(), probe);
            let rep = mean_zero_decay_check(table, &f, m)?;
            c0 = c0.max(rep.bound_constant.powf(1.0 / m));
        }
    }
    Ok(c0)
}

/// Measures all three constants from the table on modest grids.
pub fn measure_constants(table: &GreensTable) -> Result<UniversalConstants> {
    Ok(UniversalConstants {
        c0: measure_c0(table, &[3.0, 4.0, 6.0], 40)?,
        c1: estimate_c1(table),
        c2: measure_c2(&[2.25, 2.5, 3.0, 4.0, 6.0, 10.0, 20.0], 200)?,
    })
}

/// `ln h0(sigma)`; finite even where `h0` itself overflows.
pub fn ln_threshold_h0(sigma: f64, k: &UniversalConstants) -> Result<f64> {
    if !(sigma > 2.0) {
        return argument(format!("threshold needs sigma > 2, got {sigma}"));
    }
    k.validate()?;
    let exponent = 2.0 * PI * k.c1 * sigma
        + 24.0 * PI * (sigma * k.c0.ln()).exp() * sigma * (sigma - 2.0).powf(-4.0 - 1.0 / (sigma + 1.0));
    Ok(sigma * k.c2.ln() + (sigma - 2.0).ln() + exponent)
}

/// One row of the threshold table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub sigma: f64,
    pub ln_h0: f64,
    pub h0: f64,
    /// True when `kappa * h0(sigma) <= 1` for the supplied kappa (if any).
    pub kappa_star_flag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonThreshold {
    pub epsilon: f64,
    pub kappa_bar: f64,
    pub ln_kappa_bar: f64,
    /// `kappa_bar > kappa_star`, the ordering asserted for this quantity.
    pub exceeds_kappa_star: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub constants: UniversalConstants,
    pub rows: Vec<ScanRow>,
    pub a0: f64,
    pub ln_h0_min: f64,
    pub kappa_star: f64,
    pub ln_kappa_star: f64,
    pub interior_minimum: bool,
    /// `ln h0` at the grid ends minus `ln h0(a0)`.
    pub left_excess_ln: f64,
    pub right_excess_ln: f64,
    pub epsilon_thresholds: Vec<EpsilonThreshold>,
}

impl ScanTable {
    /// Writes `sigma,h0,kappa_star_flag`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sigma", "h0", "kappa_star_flag"])?;
        for r in &self.rows {
            w.write_record([
                format!("{}", r.sigma),
                format!("{:e}", r.h0),
                format!("{}", r.kappa_star_flag),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Golden-section refinement of the minimum of `ln h0` on `[a, b]`.
fn golden_min(k: &UniversalConstants, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = ln_threshold_h0(x1, k)?;
    let mut f2 = ln_threshold_h0(x2, k)?;
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = ln_threshold_h0(x1, k)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = ln_threshold_h0(x2, k)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, ln_threshold_h0(x, k)?))
}

/// Tabulates `h0` on `sigma_grid`, locates its minimum `a0` (grid search then
/// golden section), and reports `kappa* = 1/min h0` and
/// `kappa_bar(eps) = 1/max_{[2+eps, 2+1/eps]} h0` for `eps` in {0.1, 0.5, 0.9}.
/// `kappa` (if given) sets the per-row admissibility flag.
pub fn admissible_region_scan(
    constants: &UniversalConstants,
    sigma_grid: &[f64],
    kappa: Option<f64>,
) -> Result<ScanTable> {
    constants.validate()?;
    if sigma_grid.len() < 3 {
        return argument("threshold scan needs at least three grid points");
    }
    let mut rows = Vec::with_capacity(sigma_grid.len());
    for &s in sigma_grid {
        let ln_h0 = ln_threshold_h0(s, constants)?;
        let flag = kappa.map(|k| k.ln() + ln_h0 <= 0.0).unwrap_or(false);
        rows.push(ScanRow {
            sigma: s,
            ln_h0,
            h0: ln_h0.exp(),
            kappa_star_flag: flag,
        });
    }
    let (imin, _) = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.ln_h0.total_cmp(&b.1.ln_h0))
        .expect("nonempty grid");
    let interior_minimum = imin > 0 && imin + 1 < rows.len();
    let (a0, ln_h0_min) = if interior_minimum {
        golden_min(constants, rows[imin - 1].sigma, rows[imin + 1].sigma)?
    } else {
        (rows[imin].sigma, rows[imin].ln_h0)
    };
    let ln_kappa_star = -ln_h0_min;
    let mut epsilon_thresholds = Vec::new();
    for eps in [0.1, 0.5, 0.9] {
        let (lo, hi) = (2.0 + eps, 2.0 + 1.0 / eps);
        let n = 2000;
        let mut max_ln = f64::NEG_INFINITY;
        for i in 0..=n {
            let s = lo + (hi - lo) * i as f64 / n as f64;
            max_ln = max_ln.max(ln_threshold_h0(s, constants)?);
        }
        epsilon_thresholds.push(EpsilonThreshold {
            epsilon: eps,
            kappa_bar: (-max_ln).exp(),
            ln_kappa_bar: -max_ln,
            exceeds_kappa_star: -max_ln > ln_kappa_star,
        });
    }
    Ok(ScanTable {
        constants: *constants,
        left_excess_ln: rows[0].ln_h0 - ln_h0_min,
        right_excess_ln: rows[rows.len() - 1].ln_h0 - ln_h0_min,
        rows,
        a0,
        ln_h0_min,
        kappa_star: ln_kappa_star.exp(),
        ln_kappa_star,
        interior_minimum,
        epsilon_thresholds,
    })
}

/// Log-spaced grid of `n` points on `(2, hi]` starting at `2 + lo_offset`.
pub fn sigma_log_grid(lo_offset: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo_offset.ln(), (hi - 2.0).ln());
    (0..n)
        .map(|i| 2.0 + (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_log_model_is_recovered() {
        let d = TruncatedDomain::euclidean(60).unwrap();
        let u = GridFunction::from_fn(d, |p| if p.is_origin() { 0.0 } else { -3.0 * p.norm().ln() + 7.0 });
        let fit = fit_log_asymptote(&u, 20.0, 60.0).unwrap();
        assert!((fit.slope + 3.0).abs() < 1e-8);
        assert!((fit.intercept - 7.0).abs() < 1e-8);
        assert!(fit.residual_sup < 1e-8);
    }

    #[test]
    fn too_few_points_rejected() {
        let d = TruncatedDomain::euclidean(60).unwrap();
        let u = GridFunction::zeros(d);
        assert!(fit_log_asymptote(&u, 10.0, 10.5).is_err());
        assert!(fit_log_asymptote(&u, 10.0, 70.0).is_err());
    }

    #[test]
    fn pinned_double_log_recovers_constant() {
        let d = TruncatedDomain::euclidean(80).unwrap();
        let k = 2.0;
        let u = GridFunction::from_fn(d, |p| {
            let r = p.norm().max(2.0);
            -(2.0 / k) * (r.ln() + r.ln().ln()) + 1.25
        });
        let fit = fit_double_log(&u, k, 40.0, 80.0).unwrap();
        assert!((fit.intercept - 1.25).abs() < 1e-10);
        assert!(double_log_oscillation(&u, k, 40.0, 80.0).unwrap() < 1e-10);
    }

    #[test]
    fn h0_arithmetic() {
        let one = UniversalConstants { c0: 1.0, c1: 1.0, c2: 1.0 };
        let expect = 2f64.ln() + 8.0 * PI + 96.0 * PI * 2f64.powf(-4.2);
        assert!((ln_threshold_h0(4.0, &one).unwrap() - expect).abs() < 1e-12);
        assert!(ln_threshold_h0(2.0, &one).is_err());
    }

    #[test]
    fn scan_has_interior_minimum_and_monotone_in_c0() {
        let k = UniversalConstants { c0: 1.2, c1: 1.0, c2: 1.5 };
        let grid = sigma_log_grid(0.05, 20.0, 200);
        let t = admissible_region_scan(&k, &grid, None).unwrap();
        assert!(t.interior_minimum);
        assert!(t.left_excess_ln > 10f64.ln() && t.right_excess_ln > 10f64.ln());
        let bigger = UniversalConstants { c0: 1.5, ..k };
        let t2 = admissible_region_scan(&bigger, &grid, None).unwrap();
        assert!(t2.kappa_star < t.kappa_star);
        for (a, b) in t.epsilon_thresholds.iter().zip(&t2.epsilon_thresholds) {
            assert!(b.kappa_bar <= a.kappa_bar);
        }
    }
}
