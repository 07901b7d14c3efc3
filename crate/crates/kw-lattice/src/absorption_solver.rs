//! Absorption case `-Delta u + e^{kappa u} = beta delta0`: the regular family
//! `u_alpha` for `alpha in (4pi/kappa, beta)`, its layer structure, the
//! double-log barrier and the extremal solution at `alpha0 = 4pi/kappa`.

use std::f64::consts::{E, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{double_log_oscillation, fit_double_log, FitResult};
use crate::error::{argument, KwError, Result};
use crate::fixed_point::IterationOptions;
use crate::greens::GreensTable;
use crate::lattice_core::{
    laplacian_at_slot, GridFunction, LatticePoint, TailKind, TailModel, TruncatedDomain,
};
use crate::linear_dirichlet::DirichletSolver;
use crate::numeric::compensated_sum;
use crate::regular::{solve_regular, uniqueness_gap, EquationSign, NormalizedMap, SolveReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionProblem {
    pub kappa: f64,
    pub beta: f64,
    pub alpha: f64,
    pub domain_radius: u32,
}

/// Critical mass `4pi / kappa`.
pub fn critical_alpha(kappa: f64) -> f64 {
    4.0 * PI / kappa
}

impl AbsorptionProblem {
    pub fn from_sigma(kappa: f64, sigma: f64, beta: f64, domain_radius: u32) -> Self {
        Self {
            kappa,
            beta,
            alpha: 2.0 * PI * sigma / kappa,
            domain_radius,
        }
    }

    pub fn alpha0(&self) -> f64 {
        critical_alpha(self.kappa)
    }

    pub fn sigma(&self) -> f64 {
        self.alpha * self.kappa / (2.0 * PI)
    }

    /// Checks `beta > alpha0` and `alpha in (alpha0, beta)`.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return argument("kappa must be positive");
        }
        let a0 = self.alpha0();
        if !(self.beta > a0) {
            return argument(format!("need beta > 4pi/kappa = {a0}"));
        }
        if !(self.alpha > a0 && self.alpha < self.beta) {
            return argument(format!(
                "need alpha in (4pi/kappa, beta) = ({a0}, {}), got {}",
                self.beta, self.alpha
            ));
        }
        Ok(())
    }
}

/// The absorption-case fixed-point map for `p`.
pub fn absorption_map(table: &GreensTable, p: &AbsorptionProblem) -> Result<NormalizedMap> {
    p.validate()?;
    NormalizedMap::new(
        table,
        EquationSign::Absorption,
        p.kappa,
        p.alpha,
        p.beta,
        p.domain_radius,
    )
}

/// Solves the regular absorption problem by damped iteration from `v = 0`.
pub fn solve_absorption(
    p: &AbsorptionProblem,
    table: &GreensTable,
    opts: &IterationOptions,
) -> Result<SolveReport> {
    let map = absorption_map(table, p)?;
    solve_regular(&map, opts, None)
}

/// Re-solves from a perturbed start; returns `sup |u' - u|`.
pub fn uniqueness_check(
    p: &AbsorptionProblem,
    table: &GreensTable,
    opts: &IterationOptions,
    reference: &SolveReport,
    amplitude: f64,
) -> Result<f64> {
    let map = absorption_map(table, p)?;
    uniqueness_gap(&map, opts, reference, amplitude)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub holds: bool,
    pub pointwise_ordered: bool,
    pub energies_decreasing: bool,
    /// Largest `u_{alpha_{k+1}} - u_{alpha_k}` over interior points and pairs.
    pub max_violation: f64,
    pub violations: usize,
    /// Largest `|total_energy - (beta - alpha)| / (beta - alpha)`.
    pub energy_mismatch: f64,
    pub energies_match: bool,
}

/// Relative energy tolerance used by [`layer_structure_check`].
pub const LAYER_ENERGY_TOL: f64 = 1e-3;

/// Checks `u_{alpha_1} >= u_{alpha_2}` (up to `10 tol`) for consecutive reports
/// with increasing `alpha`, and that energies decrease and match `beta - alpha`
/// to [`LAYER_ENERGY_TOL`] relative.
pub fn layer_structure_check(reports: &[SolveReport], tol: f64) -> Result<LayerReport> {
    for w in reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.sign != EquationSign::Absorption
            || b.sign != EquationSign::Absorption
            || a.kappa != b.kappa
            || a.beta != b.beta
            || a.radius != b.radius
        {
            return argument("layer check needs absorption reports sharing kappa, beta and domain");
        }
        if !(b.alpha > a.alpha) {
            return argument("layer check needs strictly increasing alpha");
        }
    }
    let mut max_violation: f64 = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut energies_decreasing = true;
    let mut energy_mismatch: f64 = 0.0;
    for r in reports {
        let target = r.beta - r.alpha;
        energy_mismatch = energy_mismatch.max((r.total_energy - target).abs() / target);
    }
    for w in reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let n = a.solution.domain().n_interior();
        for (ua, ub) in a.solution.values()[..n].iter().zip(&b.solution.values()[..n]) {
            let gap = ub - ua;
            max_violation = max_violation.max(gap);
            if gap > 10.0 * tol {
                violations += 1;
            }
        }
        energies_decreasing &= b.total_energy < a.total_energy;
    }
    let pointwise_ordered = violations == 0;
    let energies_match = energy_mismatch <= LAYER_ENERGY_TOL;
    Ok(LayerReport {
        holds: pointwise_ordered && energies_decreasing && energies_match,
        pointwise_ordered,
        energies_decreasing,
        energies_match,
        max_violation: if reports.len() < 2 { 0.0 } else { max_violation },
        violations,
        energy_mismatch,
    })
}

/// Radius below which the barrier vanishes.
pub const BARRIER_CUTOFF: f64 = E * E;

/// `ln ln(1/2 + |x|^2)` for `|x| >= e^2`, else 0.
pub fn barrier_eval(x: LatticePoint) -> f64 {
    let r2 = x.norm_sq() as f64;
    if r2 >= BARRIER_CUTOFF * BARRIER_CUTOFF {
        (0.5 + r2).ln().ln()
    } else {
        0.0
    }
}

/// Exact four-neighbour Laplacian of the barrier.
pub fn barrier_laplacian(x: LatticePoint) -> f64 {
    let c = barrier_eval(x);
    x.neighbors().iter().map(|y| barrier_eval(*y) - c).sum()
}

/// `q(x) = (1/2 + |x|^2) ln(1/2 + |x|^2)^2`.
pub fn barrier_scale(x: LatticePoint) -> f64 {
    let q0 = 0.5 + x.norm_sq() as f64;
    q0 * q0.ln().powi(2)
}

/// Two-sided band `lower / q <= Delta Lambda0 <= upper / q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierBand {
    pub lower: f64,
    pub upper: f64,
}

impl BarrierBand {
    /// The band `[-2/q, -1/(2q)]`.
    pub const STATED: BarrierBand = BarrierBand {
        lower: -2.0,
        upper: -0.5,
    };
    /// A band around the asymptotic value `q Delta Lambda0 -> -4`.
    pub const WIDENED: BarrierBand = BarrierBand {
        lower: -5.0,
        upper: -3.0,
    };

    pub fn contains(&self, x: LatticePoint) -> bool {
        let s = barrier_laplacian(x) * barrier_scale(x);
        s >= self.lower && s <= self.upper
    }
}

/// Statistics of `q Delta Lambda0` over an annulus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandScan {
    pub r_in: f64,
    pub r_out: f64,
    pub points: usize,
    pub violations: usize,
    pub min_scaled: f64,
    pub max_scaled: f64,
    /// Largest radius of a violating point.
    pub last_violation_radius: Option<f64>,
}

/// Scans every lattice point with `r_in <= |x| <= r_out` (one octant, by symmetry).
pub fn scan_barrier_band(band: BarrierBand, r_in: f64, r_out: f64) -> BandScan {
    let mut scan = BandScan {
        r_in,
        r_out,
        points: 0,
        violations: 0,
        min_scaled: f64::INFINITY,
        max_scaled: f64::NEG_INFINITY,
        last_violation_radius: None,
    };
    let (lo2, hi2) = (r_in * r_in, r_out * r_out);
    let top = r_out.floor() as i64;
    for x1 in 0..=top {
        for x2 in 0..=x1 {
            let r2 = (x1 * x1 + x2 * x2) as f64;
            if r2 < lo2 || r2 > hi2 {
                continue;
            }
            let p = LatticePoint::new(x1, x2);
            let s = barrier_laplacian(p) * barrier_scale(p);
            scan.points += 1;
            scan.min_scaled = scan.min_scaled.min(s);
            scan.max_scaled = scan.max_scaled.max(s);
            if !(s >= band.lower && s <= band.upper) {
                scan.violations += 1;
                let r = r2.sqrt();
                scan.last_violation_radius = Some(scan.last_violation_radius.map_or(r, |v| v.max(r)));
            }
        }
    }
    scan
}

/// Measured barrier data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierFunction {
    pub cutoff: f64,
    pub m0: u32,
    /// `max_{|x| <= m0} |Delta Lambda0(x)|`.
    pub d0: f64,
    pub band: BarrierBand,
    /// Scan of `m0 <= |x| <= 4 m0`.
    pub scan: BandScan,
    /// Band membership at sampled points on radii `10 m0` and `100 m0`.
    pub spot_checks_hold: bool,
}

/// Smallest `m0 >= 10` such that the stated band holds on `m0 <= |x| <= 4 m0`.
pub fn find_m0() -> Result<BarrierFunction> {
    find_m0_with_band(BarrierBand::STATED, 10_000)
}

/// Smallest `m0 >= 10` (up to `max_m0`) such that `band` holds at every lattice
/// point with `m0 <= |x| <= 4 m0`.
pub fn find_m0_with_band(band: BarrierBand, max_m0: u32) -> Result<BarrierFunction> {
    if !(band.lower < band.upper) {
        return argument("band needs lower < upper");
    }
    let mut m = 10u32;
    let mut last_scan = None;
    while m <= max_m0 {
        let scan = scan_barrier_band(band, m as f64, 4.0 * m as f64);
        match scan.last_violation_radius {
            None => {
                let spot_checks_hold = [10.0, 100.0].iter().all(|k| {
                    let r = k * m as f64;
                    (0..16).all(|j| {
                        let th = j as f64 * PI / 32.0;
                        band.contains(LatticePoint::new(
                            (r * th.cos()).round() as i64,
                            (r * th.sin()).round() as i64,
                        ))
                    })
                });
                let top = m as i64;
                let mut d0: f64 = 0.0;
                for x1 in 0..=top {
                    for x2 in 0..=x1 {
                        if x1 * x1 + x2 * x2 <= top * top {
                            d0 = d0.max(barrier_laplacian(LatticePoint::new(x1, x2)).abs());
                        }
                    }
                }
                return Ok(BarrierFunction {
                    cutoff: BARRIER_CUTOFF,
                    m0: m,
                    d0,
                    band,
                    scan,
                    spot_checks_hold,
                });
            }
            Some(r) => {
                m = (r.floor() as u32 + 1).max(m + 1);
                last_scan = Some(scan);
            }
        }
    }
    let detail = last_scan
        .map(|s| {
            format!(
                "; last scan of {}..{}: {} of {} points outside, q*Delta(Lambda0) in [{:.4}, {:.4}]",
                s.r_in, s.r_out, s.violations, s.points, s.min_scaled, s.max_scaled
            )
        })
        .unwrap_or_default();
    Err(KwError::Construction(format!(
        "no m0 <= {max_m0} with q*Delta(Lambda0) in [{}, {}] on m0..4m0{detail}",
        band.lower, band.upper
    )))
}

/// Farthest radius searched for the gluing radius `n0`.
const N0_RAY_LIMIT: i64 = 1_000_000;

/// Controls for [`solve_extremal`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtremalOptions {
    /// Radius of the fixed box of the monotone iteration.
    pub radius: u32,
    /// Radius of the regular solve at `alpha_mid`.
    pub mid_radius: u32,
    pub mid_tol: f64,
    pub band: BarrierBand,
    pub d_min: f64,
    pub d_max: f64,
    pub max_outer: usize,
    /// Sup-norm residual tolerance of each linear solve.
    pub linear_tol: f64,
}

impl Default for ExtremalOptions {
    fn default() -> Self {
        Self {
            radius: 512,
            mid_radius: 256,
            mid_tol: 1e-10,
            band: BarrierBand::WIDENED,
            d_min: -50.0,
            d_max: 50.0,
            max_outer: 20_000,
            linear_tol: 1e-13,
        }
    }
}

/// Outcome of the extremal construction.
#[derive(Clone, Debug, Serialize)]
pub struct ExtremalReport {
    pub kappa: f64,
    pub beta: f64,
    pub alpha0: f64,
    pub alpha_mid: f64,
    pub radius: u32,
    #[serde(skip)]
    pub solution: GridFunction,
    pub mid: SolveReport,
    pub barrier: BarrierFunction,
    pub d1: f64,
    pub d2: f64,
    /// Smallest radius beyond which `u_d2 > u_{alpha_mid}` (measured in the box
    /// and along a ray beyond it).
    pub n0: u32,
    pub n0_within_box: bool,
    /// Shift `s0` of the radial exterior profile
    /// `-(2/kappa)(ln r + ln(ln r + s0)) + (1/kappa) ln(2/kappa)` used as box data.
    pub ring_shift: f64,
    /// Admissible range of `s0` (ring data between `w0` and `u_d1`).
    pub ring_shift_range: (f64, f64),
    /// Box solves spent matching the boundary flux.
    pub matching_solves: usize,
    /// Relative energy error of the box solve with `s0` closest to 0, before matching.
    pub unmatched_relative_energy_error: f64,
    /// Largest positive part of `-Delta w0 + e^{kappa w0} - beta delta0`.
    pub w0_subsolution_defect: f64,
    pub iterations: usize,
    pub final_gap: f64,
    pub gap_series: Vec<(usize, f64)>,
    pub monotonicity_violations: usize,
    pub max_monotonicity_violation: f64,
    pub upper_violations: usize,
    pub max_upper_violation: f64,
    pub lower_violations: usize,
    /// `sup (z_n - w_n)` between the decreasing and increasing iterates at exit.
    pub bracket_width: f64,
    pub equation_residual: f64,
    pub head_energy: f64,
    /// Exterior mass of the radial profile, `alpha0 / (ln R_eff + s0)`.
    pub tail_energy: f64,
    /// Exterior mass `alpha0 R_eff sqrt(kappa hbar / 2)` from the mean ring density.
    pub tail_energy_ring_model: f64,
    /// Outward flux across the box boundary.
    pub boundary_flux: f64,
    /// Exterior mass `2 pi e^{kappa d} / ln R` from the double-log fit.
    pub tail_energy_fit_model: f64,
    pub total_energy: f64,
    pub target_energy: f64,
    pub relative_energy_error: f64,
    pub double_log_fit: FitResult,
    pub double_log_oscillation: f64,
    pub warnings: Vec<String>,
}

impl ExtremalReport {
    /// Writes `n,gap` with `gap = sup |w_n - w_{n-1}|`.
    pub fn write_gap_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "gap"])?;
        for (n, g) in &self.gap_series {
            w.write_record([n.to_string(), format!("{g:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest (if `decreasing`) or smallest `d` in `[lo, hi]` satisfying a
/// monotone predicate, by bisection.
fn bisect_threshold(lo: f64, hi: f64, decreasing: bool, pred: impl Fn(f64) -> bool) -> Option<f64> {
    let (good, bad) = if decreasing { (lo, hi) } else { (hi, lo) };
    if !pred(good) {
        return None;
    }
    if pred(bad) {
        return Some(bad);
    }
    let (mut g, mut b) = (good, bad);
    for _ in 0..200 {
        if (g - b).abs() < 1e-12 {
            break;
        }
        let mid = 0.5 * (g + b);
        if pred(mid) {
            g = mid;
        } else {
            b = mid;
        }
    }
    Some(g)
}

/// Absolute residual target for a linear solve: `floor`, relaxed to
/// `1e-12 sup |rhs|` for large right-hand sides.
fn linear_tol(rhs: &[f64], floor: f64) -> f64 {
    floor.max(1e-12 * rhs.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

/// Residual `-Delta w + e^{kappa w} - beta delta0` on the interior.
fn absorption_residual(d: &TruncatedDomain, w: &[f64], kappa: f64, beta: f64) -> Vec<f64> {
    let origin = d.origin_slot();
    (0..d.n_interior())
        .map(|i| {
            let delta = if i == origin { beta } else { 0.0 };
            -laplacian_at_slot(d, w, i) + (kappa * w[i]).exp() - delta
        })
        .collect()
}

/// Builds the extremal solution by the shifted monotone iteration between the
/// glued subsolution `w0 = max(u_{alpha_mid}, u_{d2})` and the supersolution
/// `u_{d1}`, where `u_d = alpha0 Phi0 - (2/kappa) Lambda0 + d`.
pub fn solve_extremal(
    kappa: f64,
    beta: f64,
    table: &GreensTable,
    opts: &IterationOptions,
    ext: &ExtremalOptions,
) -> Result<ExtremalReport> {
    opts.validate()?;
    if !(kappa > 0.0) {
        return argument("kappa must be positive");
    }
    let alpha0 = critical_alpha(kappa);
    if !(beta > alpha0) {
        return argument(format!("need beta > 4pi/kappa = {alpha0}"));
    }
    if ext.mid_radius < 16 || ext.radius < ext.mid_radius {
        return argument("need 16 <= mid_radius <= radius");
    }
    if table.crossover_radius() < ext.radius as usize + 1 {
        return argument(format!(
            "the Green's table is exact only up to radius {}; the extremal box of radius {} needs exact values up to {}",
            table.crossover_radius(),
            ext.radius,
            ext.radius + 1
        ));
    }
    let alpha_mid = 0.5 * (alpha0 + beta);
    let mid_problem = AbsorptionProblem {
        kappa,
        beta,
        alpha: alpha_mid,
        domain_radius: ext.mid_radius,
    };
    let mid_opts = IterationOptions {
        tol: ext.mid_tol,
        ..opts.clone()
    };
    let mid = solve_absorption(&mid_problem, table, &mid_opts)?;
    let barrier = find_m0_with_band(ext.band, 10_000)?;
    let m0 = barrier.m0 as f64;

    let d = TruncatedDomain::euclidean(ext.radius)?;
    let n = d.n_interior();
    let pts = d.points();
    let base: Vec<f64> = pts
        .iter()
        .map(|p| alpha0 * table.eval(p.x1, p.x2) - (2.0 / kappa) * barrier_eval(*p))
        .collect();
    let origin = d.origin_slot();
    let a_part: Vec<f64> = (0..n)
        .map(|i| -laplacian_at_slot(&d, &base, i) - if i == origin { beta } else { 0.0 })
        .collect();
    let b_part: Vec<f64> = base[..n].iter().map(|b| (kappa * b).exp()).collect();
    let u_mid: Vec<f64> = pts.iter().map(|p| mid.eval(*p)).collect();
    let limit_ratio = 8.0 / kappa * (4.0 * PI * table.fitted_constant()).exp();
    let norms: Vec<f64> = pts.iter().map(|p| p.norm()).collect();

    let sub = |dv: f64| {
        let ed = (kappa * dv).exp();
        if ed > limit_ratio * (1.0 - 1e-3) {
            return false;
        }
        (0..n).all(|i| norms[i] < m0 || a_part[i] + ed * b_part[i] <= 0.0)
            && (0..d.len()).all(|i| norms[i] > m0 || base[i] + dv <= u_mid[i])
    };
    let d2 = bisect_threshold(ext.d_min, ext.d_max, true, sub).ok_or_else(|| {
        KwError::Construction("no subsolution constant d2 in the search range".into())
    })?;
    let u_d2: Vec<f64> = base.iter().map(|b| b + d2).collect();
    let mut last_below = (0..d.len())
        .filter(|&i| u_d2[i] <= u_mid[i])
        .map(|i| norms[i])
        .fold(0.0f64, f64::max);
    for r in (ext.radius as i64 + 1)..=N0_RAY_LIMIT {
        let p = LatticePoint::new(r, 0);
        let ud2 = alpha0 * table.eval(r, 0) - (2.0 / kappa) * barrier_eval(p) + d2;
        if ud2 <= mid.eval(p) {
            last_below = r as f64;
        }
    }
    if last_below >= N0_RAY_LIMIT as f64 {
        return Err(KwError::Construction(
            "u_d2 stays below the regular solution along the whole search ray".into(),
        ));
    }
    let n0 = (last_below.floor() as u32 + 1).max(barrier.m0 + 1);
    let w0: Vec<f64> = u_d2.iter().zip(&u_mid).map(|(a, b)| a.max(*b)).collect();
    let w0_subsolution_defect = absorption_residual(&d, &w0, kappa, beta)
        .into_iter()
        .fold(0.0f64, f64::max);

    let sup = |dv: f64| {
        let ed = (kappa * dv).exp();
        ed >= limit_ratio * (1.0 + 1e-3)
            && (0..n).all(|i| a_part[i] + ed * b_part[i] >= 0.0)
            && (0..d.len()).all(|i| base[i] + dv >= w0[i])
    };
    let d1 = bisect_threshold(ext.d_min, ext.d_max, false, sup).ok_or_else(|| {
        KwError::Construction("no supersolution constant d1 in the search range".into())
    })?;
    let u_d1: Vec<f64> = base.iter().map(|b| b + d1).collect();

    let r_eff = (n as f64 / PI).sqrt();
    let ln_r_eff = r_eff.ln();
    let ring_logs: Vec<f64> = norms[n..].iter().map(|r| r.ln()).collect();
    let profile_const = (2.0 / kappa).ln() / kappa;
    let profile_head: Vec<f64> = ring_logs.iter().map(|s| -(2.0 / kappa) * s + profile_const).collect();
    let mut s_lo = f64::NEG_INFINITY;
    let mut s_hi = f64::INFINITY;
    for (k, s) in ring_logs.iter().enumerate() {
        let a = profile_head[k];
        s_lo = s_lo.max((0.5 * kappa * (a - u_d1[n + k])).exp() - s);
        s_hi = s_hi.min((0.5 * kappa * (a - w0[n + k])).exp() - s);
    }
    if !(s_lo <= s_hi) {
        return Err(KwError::Construction(format!(
            "no radial exterior profile fits between w0 and u_d1 on the box boundary (s0 range [{s_lo}, {s_hi}])"
        )));
    }
    let ring_at = |s0: f64| -> Vec<f64> {
        ring_logs
            .iter()
            .zip(&profile_head)
            .map(|(s, a)| a - (2.0 / kappa) * (s + s0).ln())
            .collect()
    };
    let target_energy = beta - alpha0;
    let mismatch = |run: &BoxRun, s0: f64| boundary_flux_of(&d, &run.w) - alpha0 * (1.0 + 1.0 / (ln_r_eff + s0));

    let setup = BoxSetup {
        domain: &d,
        kappa,
        beta,
        w0: &w0,
        upper: &u_d1,
        tol: opts.tol,
        linear_tol: ext.linear_tol,
        max_outer: ext.max_outer,
    };
    let first = 0.0f64.clamp(s_lo, s_hi);
    let run = perron_box(&setup, &ring_at(first))?;
    let g_first = mismatch(&run, first);
    let unmatched_relative_energy_error = g_first.abs() / target_energy;
    let mut matching_solves = 1;
    let energy_tol = MATCH_TOL * target_energy;
    let (mut s0, mut best) = (first, run);
    if g_first.abs() > energy_tol {
        // The mismatch increases with s0: lower ring data steepens the profile.
        let (mut a, mut ga) = (first, g_first);
        let mut step = 1.0;
        let (mut b, mut gb);
        loop {
            b = if ga < 0.0 { (a + step).min(s_hi) } else { (a - step).max(s_lo) };
            let run = perron_box(&setup, &ring_at(b))?;
            matching_solves += 1;
            gb = mismatch(&run, b);
            best = run;
            if gb.signum() != ga.signum() || gb.abs() <= energy_tol {
                break;
            }
            if b == s_hi || b == s_lo {
                return Err(KwError::Construction(format!(
                    "boundary flux cannot be matched for s0 in [{s_lo}, {s_hi}]"
                )));
            }
            a = b;
            ga = gb;
            step *= 2.0;
        }
        s0 = b;
        let mut side = 0i8;
        while gb.abs() > energy_tol {
            if matching_solves >= MAX_MATCH_SOLVES {
                return Err(KwError::NonConvergence {
                    iterations: matching_solves,
                    last_update: gb.abs(),
                    history: best.gap_series.iter().map(|g| g.1).collect(),
                });
            }
            let c = b - gb * (b - a) / (gb - ga);
            let run = perron_box(&setup, &ring_at(c))?;
            matching_solves += 1;
            let gc = mismatch(&run, c);
            best = run;
            s0 = c;
            if gc.signum() == gb.signum() {
                if side == 1 {
                    ga *= 0.5;
                }
                side = 1;
            } else {
                a = b;
                ga = gb;
                side = -1;
            }
            b = c;
            gb = gc;
        }
    }
    let run = best;
    let w = run.w;

    let equation_residual = absorption_residual(&d, &w, kappa, beta)
        .into_iter()
        .fold(0.0f64, |m, r| m.max(r.abs()));
    let head_energy = compensated_sum(w[..n].iter().map(|u| (kappa * u).exp()));
    let boundary_flux = boundary_flux_of(&d, &w);
    let ring_vals = &w[n..];
    let hbar = compensated_sum(ring_vals.iter().map(|u| (kappa * u).exp())) / ring_vals.len() as f64;
    let tail_energy_ring_model = alpha0 * r_eff * (0.5 * kappa * hbar).sqrt();
    let tail_energy = alpha0 / (ln_r_eff + s0);
    let r = ext.radius as f64;
    let solution = GridFunction::new(d.clone(), w)?;
    let double_log_fit = fit_double_log(&solution, kappa, r / 2.0, r)?;
    let double_log_oscillation = double_log_oscillation(&solution, kappa, r / 2.0, r)?;
    let solution = solution.with_tail(TailModel {
        slope_a: 2.0 / kappa,
        constant_d: double_log_fit.intercept,
        kind: TailKind::LogDoubleLog,
    });
    let tail_energy_fit_model = 2.0 * PI * (kappa * double_log_fit.intercept).exp() / ln_r_eff;
    let total_energy = head_energy + tail_energy;
    let mut warnings = Vec::new();
    if w0_subsolution_defect > 10.0 * opts.tol {
        warnings.push(format!(
            "glued subsolution has a positive defect {w0_subsolution_defect:e} (regular solution continued beyond its domain)"
        ));
    }
    if n0 > ext.radius {
        warnings.push(format!(
            "gluing radius n0 = {n0} lies beyond the box radius {}; box data is the radial exterior profile",
            ext.radius
        ));
    }
    Ok(ExtremalReport {
        kappa,
        beta,
        alpha0,
        alpha_mid,
        radius: ext.radius,
        solution,
        mid,
        barrier,
        d1,
        d2,
        n0,
        n0_within_box: n0 <= ext.radius,
        ring_shift: s0,
        ring_shift_range: (s_lo, s_hi),
        matching_solves,
        unmatched_relative_energy_error,
        w0_subsolution_defect,
        iterations: run.iterations,
        final_gap: run.final_gap,
        gap_series: run.gap_series,
        monotonicity_violations: run.monotonicity_violations,
        max_monotonicity_violation: run.max_monotonicity_violation,
        upper_violations: run.upper_violations,
        max_upper_violation: run.max_upper_violation,
        lower_violations: run.lower_violations,
        bracket_width: run.bracket_width,
        equation_residual,
        head_energy,
        tail_energy,
        tail_energy_ring_model,
        boundary_flux,
        tail_energy_fit_model,
        total_energy,
        target_energy,
        relative_energy_error: (total_energy - target_energy).abs() / target_energy,
        double_log_fit,
        double_log_oscillation,
        warnings,
    })
}

/// Relative energy tolerance of the flux matching.
const MATCH_TOL: f64 = 1e-6;
const MAX_MATCH_SOLVES: usize = 40;

/// `sum (w(in) - w(out))` over edges from the interior to the boundary layer.
fn boundary_flux_of(d: &TruncatedDomain, w: &[f64]) -> f64 {
    let n = d.n_interior();
    compensated_sum((0..n).flat_map(|i| {
        d.neighbor_slots(i)
            .into_iter()
            .filter(move |&nb| nb >= n)
            .map(move |nb| w[i] - w[nb])
    }))
}

struct BoxSetup<'a> {
    domain: &'a std::sync::Arc<TruncatedDomain>,
    kappa: f64,
    beta: f64,
    w0: &'a [f64],
    upper: &'a [f64],
    tol: f64,
    linear_tol: f64,
    max_outer: usize,
}

struct BoxRun {
    w: Vec<f64>,
    iterations: usize,
    final_gap: f64,
    gap_series: Vec<(usize, f64)>,
    monotonicity_violations: usize,
    max_monotonicity_violation: f64,
    upper_violations: usize,
    max_upper_violation: f64,
    lower_violations: usize,
    bracket_width: f64,
}

/// Monotone iteration on the fixed box with boundary values `ring`: an
/// increasing sequence from `w0` and a decreasing one from the supersolution,
/// both in increment form `(-Delta + lambda) delta = -F(w)` with
/// `lambda = kappa e^{kappa z_n}` taken from the current upper iterate.
fn perron_box(setup: &BoxSetup<'_>, ring: &[f64]) -> Result<BoxRun> {
    let d = setup.domain;
    let n = d.n_interior();
    let (kappa, beta, tol) = (setup.kappa, setup.beta, setup.tol);
    let zero_boundary = vec![0.0; d.len() - n];
    let mut w = setup.w0.to_vec();
    w[n..].copy_from_slice(ring);
    let mut z = setup.upper.to_vec();
    z[n..].copy_from_slice(ring);
    let mut run = BoxRun {
        w: Vec::new(),
        iterations: 0,
        final_gap: f64::INFINITY,
        gap_series: Vec::new(),
        monotonicity_violations: 0,
        max_monotonicity_violation: 0.0,
        upper_violations: 0,
        max_upper_violation: f64::NEG_INFINITY,
        lower_violations: 0,
        bracket_width: f64::INFINITY,
    };
    let mut bracket_violations = 0;
    for it in 1..=setup.max_outer {
        let shift: Vec<f64> = z[..n].iter().map(|u| kappa * (kappa * u).exp()).collect();
        let solver = DirichletSolver::new(d.clone(), Some(shift))?;
        let rhs_w: Vec<f64> = absorption_residual(d, &w, kappa, beta).iter().map(|r| -r).collect();
        let delta_w = solver.solve(&rhs_w, &zero_boundary, None, linear_tol(&rhs_w, setup.linear_tol))?;
        let rhs_z: Vec<f64> = absorption_residual(d, &z, kappa, beta).iter().map(|r| -r).collect();
        let delta_z = solver.solve(&rhs_z, &zero_boundary, None, linear_tol(&rhs_z, setup.linear_tol))?;
        let mut gap: f64 = 0.0;
        let mut width: f64 = 0.0;
        for i in 0..n {
            let step = delta_w[i];
            gap = gap.max(step.abs());
            if step < -10.0 * tol {
                run.monotonicity_violations += 1;
            }
            run.max_monotonicity_violation = run.max_monotonicity_violation.max(-step);
            w[i] += step;
            z[i] += delta_z[i].min(0.0);
            if w[i] > setup.upper[i] + 10.0 * tol {
                run.upper_violations += 1;
            }
            run.max_upper_violation = run.max_upper_violation.max(w[i] - setup.upper[i]);
            if w[i] < setup.w0[i] - 10.0 * tol {
                run.lower_violations += 1;
            }
            if delta_z[i] > 10.0 * tol || w[i] > z[i] + 10.0 * tol {
                bracket_violations += 1;
            }
            width = width.max(z[i] - w[i]);
        }
        run.gap_series.push((it, gap));
        run.iterations = it;
        run.final_gap = gap;
        run.bracket_width = width;
        if run.monotonicity_violations > 0
            || run.upper_violations > 0
            || run.lower_violations > 0
            || bracket_violations > 0
        {
            return Err(KwError::Consistency(format!(
                "monotone iteration left its bracket at step {it}: {} decreases (max {:e}), {} above u_d1, {} below w0, {bracket_violations} upper-iterate violations",
                run.monotonicity_violations,
                run.max_monotonicity_violation,
                run.upper_violations,
                run.lower_violations
            )));
        }
        if gap < tol {
            run.w = w;
            return Ok(run);
        }
    }
    Err(KwError::NonConvergence {
        iterations: run.iterations,
        last_update: run.final_gap,
        history: run.gap_series.iter().map(|g| g.1).collect(),
    })
}

/// Convergence of the regular family toward the extremal solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub alphas: Vec<f64>,
    pub energies: Vec<f64>,
    /// `sup_{|x| <= inner_radius} |u_alpha - u_alpha0|` per alpha.
    pub gaps: Vec<f64>,
    pub monotone_increase: bool,
    pub below_extremal: bool,
    pub gaps_decreasing: bool,
}

/// Solves the regular family for `alphas` (strictly decreasing toward alpha0)
/// and compares it with `extremal` on the ball of radius `inner_radius`.
pub fn limit_consistency_check(
    alphas: &[f64],
    extremal: &ExtremalReport,
    table: &GreensTable,
    opts: &IterationOptions,
    domain_radius: u32,
    inner_radius: u32,
) -> Result<LimitReport> {
    if alphas.windows(2).any(|w| !(w[1] < w[0])) {
        return argument("alphas must be strictly decreasing");
    }
    let mut energies = Vec::new();
    let mut gaps = Vec::new();
    let mut reports: Vec<SolveReport> = Vec::new();
    let inner = TruncatedDomain::euclidean(inner_radius)?;
    let mut below_extremal = true;
    for &alpha in alphas {
        let p = AbsorptionProblem {
            kappa: extremal.kappa,
            beta: extremal.beta,
            alpha,
            domain_radius,
        };
        let rep = solve_absorption(&p, table, opts)?;
        let mut gap: f64 = 0.0;
        for q in inner.points() {
            let ue = extremal.solution.get(*q).unwrap_or(f64::NAN);
            let ua = rep.eval(*q);
            gap = gap.max((ua - ue).abs());
            below_extremal &= ua <= ue + 10.0 * opts.tol;
        }
        energies.push(rep.total_energy);
        gaps.push(gap);
        reports.push(rep);
    }
    let monotone_increase = reports.windows(2).all(|w| {
        inner
            .points()
            .iter()
            .all(|q| w[1].eval(*q) >= w[0].eval(*q) - 10.0 * opts.tol)
    });
    let gaps_decreasing = gaps.windows(2).all(|g| g[1] < g[0]);
    Ok(LimitReport {
        alphas: alphas.to_vec(),
        energies,
        gaps,
        monotone_increase,
        below_extremal,
        gaps_decreasing,
    })
}
