//! Convolution with the Green's function and the decay checks for mean-zero
//! and nonzero-mean data.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{argument, KwError, Result};
use crate::greens::GreensTable;
use crate::lattice_core::{weighted_norm, GridFunction, LatticePoint};
use crate::numeric::{compensated_sum, linear_fit, next_smooth, NeumaierSum};

/// Work above which [`convolve`] switches from direct summation to FFT.
const DIRECT_WORK_LIMIT: usize = 20_000_000;

/// Linear convolution with `Phi0` through a zero-padded periodic FFT.
///
/// Sources live in `[-src_extent, src_extent]^2`, outputs in
/// `[-out_extent, out_extent]^2`; the period is large enough that no
/// wrap-around occurs, so results equal the direct sums up to rounding.
pub struct FftConvolver {
    period: usize,
    src_extent: i64,
    out_extent: i64,
    kernel_hat: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftConvolver {
    pub fn new(table: &GreensTable, src_extent: i64, out_extent: i64) -> Self {
        let reach = src_extent + out_extent;
        let period = next_smooth((2 * reach + 1) as usize);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(period);
        let inverse = planner.plan_fft_inverse(period);
        let mut kernel = vec![Complex64::new(0.0, 0.0); period * period];
        let p = period as i64;
        for z1 in -reach..=reach {
            let row = z1.rem_euclid(p) as usize * period;
            for z2 in -reach..=reach {
                kernel[row + z2.rem_euclid(p) as usize] = Complex64::new(table.eval(z1, z2), 0.0);
            }
        }
        let mut conv = Self {
            period,
            src_extent,
            out_extent,
            kernel_hat: Vec::new(),
            forward,
            inverse,
        };
        conv.transform(&mut kernel, false);
        conv.kernel_hat = kernel;
        conv
    }

    pub fn period(&self) -> usize {
        self.period
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        plan.process(buf);
        transpose(buf, self.period);
        plan.process(buf);
    }

    /// `out(x) = sum_y Phi0(y - x) f(y)` at the requested output points.
    pub fn apply(
        &self,
        src_points: &[LatticePoint],
        src_values: &[f64],
        out_points: &[LatticePoint],
    ) -> Vec<f64> {
        let n = self.period;
        let p = n as i64;
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        for (q, v) in src_points.iter().zip(src_values) {
            debug_assert!(q.sup_norm() <= self.src_extent);
            buf[q.x1.rem_euclid(p) as usize * n + q.x2.rem_euclid(p) as usize].re += v;
        }
        self.transform(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.transform(&mut buf, true);
        let scale = 1.0 / (n * n) as f64;
        out_points
            .iter()
            .map(|q| {
                debug_assert!(q.sup_norm() <= self.out_extent);
                buf[q.x1.rem_euclid(p) as usize * n + q.x2.rem_euclid(p) as usize].re * scale
            })
            .collect()
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    const B: usize = 32;
    for bi in (0..n).step_by(B) {
        for bj in (bi..n).step_by(B) {
            for i in bi..(bi + B).min(n) {
                let start = if bi == bj { i + 1 } else { bj };
                for j in start..(bj + B).min(n) {
                    buf.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

/// Direct summation `out(x) = sum_y Phi0(y - x) f(y)` in slot order.
pub fn convolve_direct(
    table: &GreensTable,
    src_points: &[LatticePoint],
    src_values: &[f64],
    out_points: &[LatticePoint],
) -> Vec<f64> {
    let support: Vec<(LatticePoint, f64)> = src_points
        .iter()
        .zip(src_values)
        .filter(|(_, v)| **v != 0.0)
        .map(|(p, v)| (*p, *v))
        .collect();
    out_points
        .iter()
        .map(|x| {
            let mut acc = NeumaierSum::new();
            for (y, v) in &support {
                acc.add(table.eval(y.x1 - x.x1, y.x2 - x.x2) * v);
            }
            acc.value()
        })
        .collect()
}

/// `(Phi0 * f)(x) = sum_y Phi0(y - x) f(y)` at every stored point of `f`'s domain.
pub fn convolve(table: &GreensTable, f: &GridFunction) -> GridFunction {
    let d = f.domain();
    let nnz = f.values().iter().filter(|v| **v != 0.0).count();
    let values = if nnz.saturating_mul(d.len()) <= DIRECT_WORK_LIMIT {
        convolve_direct(table, d.points(), f.values(), d.points())
    } else {
        let e = d.extent();
        FftConvolver::new(table, e, e).apply(d.points(), f.values(), d.points())
    };
    GridFunction::new(d.clone(), values).expect("same domain")
}

/// Decay envelope `(e+|x|)^{(2-m)/(m+1)} ln(e+|x|)^{1/(m+1)}`.
pub fn decay_envelope(r: f64, m: f64) -> f64 {
    let t = E + r;
    t.powf((2.0 - m) / (m + 1.0)) * t.ln().powf(1.0 / (m + 1.0))
}

/// Constant `c0^m/(m-2)^4 * (1/(m-2-tau(m+1)))^{1/(m+1)}` of the weighted bound
/// `||Phi0 * f||_tau <= b ||f||_m` for mean-zero `f`.
pub fn weighted_bound_constant(c0: f64, m: f64, tau: f64) -> Result<f64> {
    if !(m > 2.0) || !(tau > 0.0) || !(tau < (m - 2.0) / (m + 1.0)) {
        return argument("weighted bound needs m > 2 and 0 < tau < (m-2)/(m+1)");
    }
    Ok(c0.powf(m) / (m - 2.0).powi(4) * (1.0 / (m - 2.0 - tau * (m + 1.0))).powf(1.0 / (m + 1.0)))
}

/// Outcome of a decay check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub m: f64,
    pub observed_ratio_sup: f64,
    pub bound_constant: f64,
    pub witness: [i64; 2],
    /// Weighted norm `||f||_m` with weight `(1+|x|)^m`.
    pub norm_f: f64,
    /// `(1/2pi) sum f` for nonzero-mean checks.
    pub beta_f: Option<f64>,
}

impl DecayReport {
    pub fn witness_point(&self) -> LatticePoint {
        LatticePoint::new(self.witness[0], self.witness[1])
    }
}

fn ratio_sup(points: &[LatticePoint], numer: impl Fn(usize) -> f64, m: f64) -> (f64, LatticePoint) {
    let mut best = (0.0, LatticePoint::ORIGIN);
    for (i, p) in points.iter().enumerate() {
        let r = numer(i).abs() / decay_envelope(p.norm(), m);
        if r > best.0 {
            best = (r, *p);
        }
    }
    best
}

/// Checks the decay of `Phi0 * f` for mean-zero `f` against the envelope.
pub fn mean_zero_decay_check(table: &GreensTable, f: &GridFunction, m: f64) -> Result<DecayReport> {
    if !(m > 2.0) {
        return argument(format!("decay check needs m > 2, got {m}"));
    }
    let total = compensated_sum(f.values().iter().copied());
    if total.abs() > 1e-12 {
        return Err(KwError::Precondition(format!(
            "mean-zero check needs sum f = 0, got {total:e}"
        )));
    }
    let g = convolve(table, f);
    let (ratio, witness) = ratio_sup(f.domain().points(), |i| g.values()[i], m);
    let norm_f = weighted_norm(f, m);
    let bound_constant = if norm_f > 0.0 {
        ratio * (m - 2.0).powi(4) / norm_f
    } else {
        0.0
    };
    Ok(DecayReport {
        m,
        observed_ratio_sup: ratio,
        bound_constant,
        witness: [witness.x1, witness.x2],
        norm_f,
        beta_f: None,
    })
}

/// Residual `(Phi0 * f)(x) + beta_f ln(1+|x|) + 2 pi beta_f C` at every stored point.
pub fn nonzero_mean_residual(table: &GreensTable, f: &GridFunction) -> (f64, Vec<f64>) {
    let beta = compensated_sum(f.values().iter().copied()) / (2.0 * PI);
    let g = convolve(table, f);
    let c = table.fitted_constant();
    let res = f
        .domain()
        .points()
        .iter()
        .zip(g.values())
        .map(|(p, v)| v + beta * (1.0 + p.norm()).ln() + 2.0 * PI * beta * c)
        .collect();
    (beta, res)
}

/// Checks the logarithmic asymptotics of `Phi0 * f` for `f` with positive mass.
pub fn nonzero_mean_decay_check(table: &GreensTable, f: &GridFunction, m: f64) -> Result<DecayReport> {
    if !(m > 2.0) {
        return argument(format!("decay check needs m > 2, got {m}"));
    }
    let beta = compensated_sum(f.values().iter().copied()) / (2.0 * PI);
    if !(beta > 0.0) {
        return Err(KwError::Precondition(format!(
            "nonzero-mean check needs positive mass, got beta_f = {beta:e}"
        )));
    }
    let (beta, res) = nonzero_mean_residual(table, f);
    let (ratio, witness) = ratio_sup(f.domain().points(), |i| res[i], m);
    let norm_f = weighted_norm(f, m);
    Ok(DecayReport {
        m,
        observed_ratio_sup: ratio,
        bound_constant: ratio * (m - 2.0).powi(4) / (norm_f + beta),
        witness: [witness.x1, witness.x2],
        norm_f,
        beta_f: Some(beta),
    })
}

/// Largest envelope ratio on each unit shell `r <= |x| < r+1`.
pub fn shell_ratio_profile(
    points: &[LatticePoint],
    values: &[f64],
    m: f64,
    radii: std::ops::RangeInclusive<u32>,
) -> Vec<(u32, f64)> {
    let (lo, hi) = (*radii.start(), *radii.end());
    let mut best = vec![0.0f64; (hi - lo + 1) as usize];
    for (p, v) in points.iter().zip(values) {
        let r = p.norm();
        let shell = r.floor() as i64;
        if shell >= lo as i64 && shell <= hi as i64 {
            let k = (shell - lo as i64) as usize;
            best[k] = best[k].max(v.abs() / decay_envelope(r, m));
        }
    }
    (lo..=hi).zip(best).collect()
}

/// Log-log slope of a shell profile (least squares).
pub fn profile_slope(profile: &[(u32, f64)]) -> f64 {
    let xs: Vec<f64> = profile.iter().map(|(r, _)| (*r as f64).ln()).collect();
    let ys: Vec<f64> = profile.iter().map(|(_, v)| v.max(f64::MIN_POSITIVE).ln()).collect();
    linear_fit(&xs, &ys).0
}
