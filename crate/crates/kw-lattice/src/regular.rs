//! The normalized fixed-point map shared by the source and absorption solvers.
//!
//! With `u = v + c/kappa + alpha Phi0`, `K = exp(alpha kappa Phi0)` and
//! `g = g_mass delta0`, both equations become `v = s Phi0 * (K e^{kappa v + c} - g)`
//! where `s = +1` (source) or `s = -1` (absorption) and `c` normalizes the total
//! mass of `K e^{kappa v + c}` to `g_mass`.
//!
//! The state holds `v` on the interior slots followed by a radial exterior
//! profile on the log grid `t = ln(rho / R_eff)`, `R_eff = sqrt(N_interior/pi)`,
//! so that the mass beyond the truncated domain (which is large when `sigma`
//! is close to 2) is part of the fixed point instead of an afterthought.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::fit_log_asymptote;
use crate::convolution::FftConvolver;
use crate::error::{argument, KwError, Result};
use crate::fixed_point::{iterate, weighted_sup_norm, FixedPointOutcome, IterationOptions};
use crate::greens::{stated_gamma0, GreensTable};
use crate::lattice_core::{
    laplacian_at_slot, tail_bound, GridFunction, LatticePoint, TailKind, TailModel, TruncatedDomain,
};
use crate::linear_dirichlet::boundary_flux;
use crate::numeric::{compensated_sum, NeumaierSum};

const EXTERIOR_NODES: usize = 4000;

/// Which sign the exponential carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationSign {
    /// `-Delta u = e^{kappa u} + beta delta0`
    Source,
    /// `-Delta u + e^{kappa u} = beta delta0`
    Absorption,
}

impl EquationSign {
    pub fn factor(self) -> f64 {
        match self {
            EquationSign::Source => 1.0,
            EquationSign::Absorption => -1.0,
        }
    }
}

/// Radial log grid beyond the truncated domain.
#[derive(Clone, Debug)]
struct ExteriorGrid {
    r_eff: f64,
    dt: f64,
    ln_rho: Vec<f64>,
}

impl ExteriorGrid {
    fn new(r_eff: f64, sigma: f64) -> Self {
        let t_max = (40.0 / (sigma - 2.0)).min(5000.0);
        let dt = t_max / (EXTERIOR_NODES - 1) as f64;
        let l0 = r_eff.ln();
        Self {
            r_eff,
            dt,
            ln_rho: (0..EXTERIOR_NODES).map(|i| l0 + i as f64 * dt).collect(),
        }
    }

    fn trapz(&self, f: impl Iterator<Item = f64>) -> f64 {
        let mut acc = NeumaierSum::new();
        let mut first = None;
        let mut last = 0.0;
        for v in f {
            if first.is_none() {
                first = Some(v);
            }
            acc.add(v);
            last = v;
        }
        self.dt * (acc.value() - 0.5 * (first.unwrap_or(0.0) + last))
    }

    /// `I(t_i) = int_{t_i}^inf H(t') (t' - t_i) dt'` by two backward cumulative
    /// trapezoid passes (`dI/dt = -int_t^inf H`).
    fn tail_moment(&self, h: &[f64]) -> Vec<f64> {
        let n = h.len();
        let mut b = vec![0.0; n];
        for i in (0..n - 1).rev() {
            b[i] = b[i + 1] + 0.5 * self.dt * (h[i] + h[i + 1]);
        }
        let mut moment = vec![0.0; n];
        for i in (0..n - 1).rev() {
            moment[i] = moment[i + 1] + 0.5 * self.dt * (b[i] + b[i + 1]);
        }
        moment
    }
}

/// Radial continuation of a regular solution beyond its domain.
#[derive(Clone, Debug)]
pub struct ExteriorProfile {
    r_eff: f64,
    dt: f64,
    v_ext: Vec<f64>,
    c_over_kappa: f64,
    alpha: f64,
    green_constant: f64,
}

impl ExteriorProfile {
    /// `u(r) = v_ext(r) + c/kappa + alpha (-(1/2pi) ln r - C)` for `r >= R_eff`.
    pub fn eval(&self, r: f64) -> f64 {
        let t = (r / self.r_eff).ln().max(0.0);
        let pos = t / self.dt;
        let i = pos.floor() as usize;
        let v = if i + 1 >= self.v_ext.len() {
            0.0
        } else {
            let w = pos - i as f64;
            (1.0 - w) * self.v_ext[i] + w * self.v_ext[i + 1]
        };
        v + self.c_over_kappa + self.alpha * (-r.ln() / (2.0 * PI) - self.green_constant)
    }

    pub fn effective_radius(&self) -> f64 {
        self.r_eff
    }
}

/// The map `T(v) = s Phi0 * (K e^{kappa v + c_v} - g)` on interior-plus-exterior states.
pub struct NormalizedMap {
    domain: Arc<TruncatedDomain>,
    sign: EquationSign,
    kappa: f64,
    alpha: f64,
    beta: f64,
    g_mass: f64,
    sigma: f64,
    green_constant: f64,
    phi: Vec<f64>,
    conv: FftConvolver,
    ext: ExteriorGrid,
    weights: Vec<f64>,
    tau1: f64,
}

pub(crate) struct MapEval {
    /// `T(v)` on every slot of the domain.
    pub v_new: Vec<f64>,
    pub ext_new: Vec<f64>,
    pub c: f64,
}

impl NormalizedMap {
    /// Builds the map for `-Delta u = s e^{kappa u} + beta delta0` with total
    /// mass `alpha`; `g_mass = |alpha - beta|` must be positive.
    pub fn new(
        table: &GreensTable,
        sign: EquationSign,
        kappa: f64,
        alpha: f64,
        beta: f64,
        radius: u32,
    ) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return argument("kappa must be positive and finite");
        }
        let sigma = alpha * kappa / (2.0 * PI);
        if !(sigma > 2.0) {
            return argument(format!("need sigma = alpha kappa / 2pi > 2, got {sigma}"));
        }
        let g_mass = match sign {
            EquationSign::Source => alpha - beta,
            EquationSign::Absorption => beta - alpha,
        };
        if !(g_mass > 0.0) {
            return argument(match sign {
                EquationSign::Source => "source case needs beta < alpha",
                EquationSign::Absorption => "absorption case needs alpha < beta",
            });
        }
        if radius < 8 {
            return argument("domain radius must be at least 8");
        }
        let domain = TruncatedDomain::euclidean(radius)?;
        let phi: Vec<f64> = domain.points().iter().map(|p| table.eval(p.x1, p.x2)).collect();
        let e = domain.extent();
        let conv = FftConvolver::new(table, e - 1, e);
        let r_eff = (domain.n_interior() as f64 / PI).sqrt();
        let ext = ExteriorGrid::new(r_eff, sigma);
        let tau1 = (sigma - 2.0) / (2.0 * (sigma + 1.0));
        let mut weights: Vec<f64> = domain.interior().iter().map(|p| (1.0 + p.norm()).powf(tau1)).collect();
        weights.extend(ext.ln_rho.iter().map(|l| (tau1 * (l.max(0.0) + (-l.abs()).exp().ln_1p())).exp()));
        Ok(Self {
            domain,
            sign,
            kappa,
            alpha,
            beta,
            g_mass,
            sigma,
            green_constant: table.fitted_constant(),
            phi,
            conv,
            ext,
            weights,
            tau1,
        })
    }

    pub fn domain(&self) -> &Arc<TruncatedDomain> {
        &self.domain
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn g_mass(&self) -> f64 {
        self.g_mass
    }

    /// Convergence-norm exponent `(sigma - 2) / (2 (sigma + 1))`.
    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn n_interior(&self) -> usize {
        self.domain.n_interior()
    }

    pub fn exterior_len(&self) -> usize {
        self.ext.ln_rho.len()
    }

    pub fn state_len(&self) -> usize {
        self.n_interior() + self.exterior_len()
    }

    /// Radii of the exterior nodes.
    pub fn exterior_radii(&self) -> Vec<f64> {
        self.ext.ln_rho.iter().map(|l| l.exp()).collect()
    }

    /// Convergence weights `(1+|x|)^{tau1}` for every state entry.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_len(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_len() {
            return argument(format!(
                "state has {} entries, expected {}",
                state.len(),
                self.state_len()
            ));
        }
        Ok(())
    }

    fn log_weight(&self, slot: usize) -> f64 {
        self.alpha * self.kappa * self.phi[slot]
    }

    fn exterior_density(&self, v_ext: &[f64]) -> Vec<f64> {
        let k0 = -self.alpha * self.kappa * self.green_constant;
        v_ext
            .iter()
            .zip(&self.ext.ln_rho)
            .map(|(v, l)| (k0 + (2.0 - self.sigma) * l + self.kappa * v).exp())
            .collect()
    }

    /// `(sum_interior K e^{kappa v}, exterior mass of K e^{kappa v})`.
    fn masses(&self, state: &[f64]) -> (Vec<f64>, f64, Vec<f64>, f64) {
        let n = self.n_interior();
        let (v, v_ext) = state.split_at(n);
        let h: Vec<f64> = (0..n).map(|i| (self.log_weight(i) + self.kappa * v[i]).exp()).collect();
        let head = compensated_sum(h.iter().copied());
        let h_ext = self.exterior_density(v_ext);
        let tail = 2.0 * PI * self.ext.trapz(h_ext.iter().copied());
        (h, head, h_ext, tail)
    }

    /// Normalization constant `c_v = ln(g_mass / sum K e^{kappa v})`.
    pub fn normalization(&self, state: &[f64]) -> Result<f64> {
        self.check_len(state)?;
        let (_, head, _, tail) = self.masses(state);
        Ok((self.g_mass / (head + tail)).ln())
    }

    pub(crate) fn eval(&self, state: &[f64]) -> MapEval {
        let s = self.sign.factor();
        let (h, head, h_ext, tail) = self.masses(state);
        let ec = self.g_mass / (head + tail);
        let density: Vec<f64> = h.iter().map(|x| x * ec).collect();
        let d = &self.domain;
        let conv = self.conv.apply(d.interior(), &density, d.points());
        let hc: Vec<f64> = h_ext.iter().map(|x| x * ec).collect();
        let ext_mass = 2.0 * PI * self.ext.trapz(hc.iter().copied());
        let ext_log_moment = self.ext.trapz(hc.iter().zip(&self.ext.ln_rho).map(|(a, l)| a * l));
        let far = -ext_log_moment - self.green_constant * ext_mass;
        let v_new = conv
            .iter()
            .zip(&self.phi)
            .map(|(cv, ph)| s * (cv + far - self.g_mass * ph))
            .collect();
        let ext_new = self.ext.tail_moment(&hc).into_iter().map(|m| -s * m).collect();
        MapEval {
            v_new,
            ext_new,
            c: ec.ln(),
        }
    }

    /// Applies the map to a state (interior values then exterior profile).
    pub fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_len(state)?;
        let ev = self.eval(state);
        let mut out = ev.v_new;
        out.truncate(self.n_interior());
        out.extend(ev.ext_new);
        Ok(out)
    }
}

/// Bound `d <= (1/kappa) ln(beta - alpha) - C alpha` on the additive constant
/// of an absorption solution, evaluated with two candidate Green's constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantBound {
    pub bound_measured_constant: f64,
    pub bound_stated_constant: f64,
    pub holds_measured: bool,
    pub holds_stated: bool,
    /// The constant compared against the bounds (the asymptotic one).
    pub compared_d: f64,
}

/// Outcome of a regular solve.
#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub sign: EquationSign,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub radius: u32,
    #[serde(skip)]
    pub solution: GridFunction,
    #[serde(skip)]
    pub exterior: Option<ExteriorProfile>,
    pub iterations: usize,
    pub final_update_norm: f64,
    pub used_anderson: bool,
    /// `sum e^{kappa u}` over the interior plus the modelled exterior mass.
    pub total_energy: f64,
    pub target_energy: f64,
    pub identity_residual: f64,
    pub relative_identity_residual: f64,
    pub head_energy: f64,
    pub tail_energy: f64,
    /// Upper estimate `e^{kappa d} * tail_bound(sigma, 0, R+1)` of the exterior mass.
    pub tail_energy_bound: f64,
    pub fitted_slope: f64,
    pub fitted_constant_d: f64,
    pub fit_residual_sup: f64,
    pub expected_slope: f64,
    /// Annulus mean of `u + (alpha/2pi) ln|x|`.
    pub pinned_constant_d: f64,
    /// `c/kappa - alpha C`, the limit of `u + (alpha/2pi) ln|x|`.
    pub asymptotic_constant_d: f64,
    pub normalization_constant: f64,
    /// `ln(g_mass / sum K)`, the normalization at `v = 0`.
    pub initial_normalization_constant: f64,
    pub perturbation_sup: f64,
    /// `|c - c0| <= kappa sup|v|`.
    pub normalization_bracket_holds: bool,
    /// `sup |-Delta u - s e^{kappa u} - beta delta0|` over the interior.
    pub equation_residual: f64,
    pub boundary_flux: f64,
    /// `|flux - (beta + s sum_interior e^{kappa u})|`.
    pub flux_balance_residual: f64,
    pub green_constant_measured: f64,
    pub green_constant_stated: f64,
    pub constant_bound: Option<ConstantBound>,
    pub update_history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// Value of the solution at `p`, using the exterior profile beyond the domain.
    pub fn eval(&self, p: LatticePoint) -> f64 {
        match (self.solution.get(p), &self.exterior) {
            (Some(v), _) => v,
            (None, Some(ext)) => ext.eval(p.norm()),
            (None, None) => self.solution.eval(p).unwrap_or(f64::NAN),
        }
    }
}

/// Stopping threshold on the weighted update norm that keeps the equation
/// residual below `tol`.
pub(crate) fn stop_threshold(tol: f64, kappa: f64, g_mass: f64) -> f64 {
    tol * (1.0f64).min(1.0 / (kappa * g_mass))
}

/// Runs the damped iteration from `initial` (zero if absent) and assembles the report.
pub(crate) fn solve_regular(
    map: &NormalizedMap,
    opts: &IterationOptions,
    initial: Option<Vec<f64>>,
) -> Result<SolveReport> {
    opts.validate()?;
    let x0 = match initial {
        Some(x) => {
            map.check_len(&x)?;
            x
        }
        None => vec![0.0; map.state_len()],
    };
    let stop = stop_threshold(opts.tol, map.kappa, map.g_mass);
    let outcome = iterate(x0, map.weights(), |x| map.apply(x), opts, stop)?;
    assemble(map, outcome)
}

fn assemble(map: &NormalizedMap, outcome: FixedPointOutcome) -> Result<SolveReport> {
    let d = map.domain.clone();
    let n = d.n_interior();
    let kappa = map.kappa;
    let s = map.sign.factor();
    let ev = map.eval(&outcome.state);
    let c = ev.c;
    let values: Vec<f64> = ev
        .v_new
        .iter()
        .zip(&map.phi)
        .map(|(v, ph)| v + c / kappa + map.alpha * ph)
        .collect();
    let head_energy = compensated_sum(values[..n].iter().map(|u| (kappa * u).exp()));
    let tail_energy =
        c.exp() * 2.0 * PI * map.ext.trapz(map.exterior_density(&ev.ext_new).into_iter());
    let total_energy = head_energy + tail_energy;
    let target_energy = map.g_mass;
    let identity_residual = (total_energy - target_energy).abs();
    let origin = d.origin_slot();
    let equation_residual = (0..n)
        .map(|i| {
            let delta = if i == origin { map.beta } else { 0.0 };
            (-laplacian_at_slot(&d, &values, i) - s * (kappa * values[i]).exp() - delta).abs()
        })
        .fold(0.0, f64::max);
    let asymptotic_constant_d = c / kappa - map.alpha * map.green_constant;
    let slope_a = map.alpha / (2.0 * PI);
    let solution = GridFunction::new(d.clone(), values)?.with_tail(TailModel {
        slope_a,
        constant_d: asymptotic_constant_d,
        kind: TailKind::Log,
    });
    let r = d.radius() as f64;
    let fit = fit_log_asymptote(&solution, r / 2.0, r)?;
    let mut pinned = NeumaierSum::new();
    let mut count = 0usize;
    for (p, u) in d.points().iter().zip(solution.values()) {
        let rr = p.norm();
        if rr >= r / 2.0 && rr <= r {
            pinned.add(u + slope_a * rr.ln());
            count += 1;
        }
    }
    let pinned_constant_d = pinned.value() / count as f64;
    let tail_energy_bound = (kappa * asymptotic_constant_d).exp() * tail_bound(map.sigma, 0.0, r + 1.0)?;
    let zero = vec![0.0; map.state_len()];
    let initial_normalization_constant = map.normalization(&zero)?;
    let perturbation_sup = outcome.state.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let normalization_bracket_holds =
        (c - initial_normalization_constant).abs() <= kappa * perturbation_sup + 1e-12;
    let flux = boundary_flux(&solution);
    let flux_balance_residual = (flux - (map.beta + s * head_energy)).abs();
    let constant_bound = (map.sign == EquationSign::Absorption).then(|| {
        let base = map.g_mass.ln() / kappa;
        let bm = base - map.green_constant * map.alpha;
        let bs = base - stated_gamma0() / 2.0 * map.alpha;
        ConstantBound {
            bound_measured_constant: bm,
            bound_stated_constant: bs,
            holds_measured: asymptotic_constant_d <= bm + 1e-12,
            holds_stated: asymptotic_constant_d <= bs + 1e-12,
            compared_d: asymptotic_constant_d,
        }
    });
    let mut warnings = Vec::new();
    if tail_energy > 0.01 * head_energy {
        warnings.push(format!(
            "exterior mass is {:.3}% of the interior mass; the identity relies on the radial exterior model",
            100.0 * tail_energy / head_energy
        ));
    }
    let exterior = ExteriorProfile {
        r_eff: map.ext.r_eff,
        dt: map.ext.dt,
        v_ext: ev.ext_new,
        c_over_kappa: c / kappa,
        alpha: map.alpha,
        green_constant: map.green_constant,
    };
    Ok(SolveReport {
        sign: map.sign,
        kappa,
        alpha: map.alpha,
        beta: map.beta,
        sigma: map.sigma,
        radius: d.radius(),
        solution,
        exterior: Some(exterior),
        iterations: outcome.iterations,
        final_update_norm: outcome.final_update_norm,
        used_anderson: outcome.used_anderson,
        total_energy,
        target_energy,
        identity_residual,
        relative_identity_residual: identity_residual / target_energy,
        head_energy,
        tail_energy,
        tail_energy_bound,
        fitted_slope: fit.slope,
        fitted_constant_d: fit.intercept,
        fit_residual_sup: fit.residual_sup,
        expected_slope: -slope_a,
        pinned_constant_d,
        asymptotic_constant_d,
        normalization_constant: c,
        initial_normalization_constant,
        perturbation_sup,
        normalization_bracket_holds,
        equation_residual,
        boundary_flux: flux,
        flux_balance_residual,
        green_constant_measured: map.green_constant,
        green_constant_stated: stated_gamma0() / 2.0,
        constant_bound,
        update_history: outcome.history,
        warnings,
    })
}

/// Weighted distance between two states in the convergence norm.
pub fn state_distance(map: &NormalizedMap, a: &[f64], b: &[f64]) -> Result<f64> {
    map.check_len(a)?;
    map.check_len(b)?;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(weighted_sup_norm(&diff, map.weights()))
}

/// Re-solves from a smooth perturbed start and returns `sup |u_perturbed - u|`
/// over the domain; a value within `10 tol` indicates the same solution.
pub fn uniqueness_gap(
    map: &NormalizedMap,
    opts: &IterationOptions,
    reference: &SolveReport,
    amplitude: f64,
) -> Result<f64> {
    if !amplitude.is_finite() {
        return Err(KwError::Argument("perturbation amplitude must be finite".into()));
    }
    let d = map.domain();
    let r2 = (d.radius() as f64).powi(2);
    let mut x0: Vec<f64> = d
        .interior()
        .iter()
        .map(|p| amplitude * (-(p.norm_sq() as f64) / r2).exp())
        .collect();
    x0.extend(std::iter::repeat(0.0).take(map.exterior_len()));
    let other = solve_regular(map, opts, Some(x0))?;
    Ok(other
        .solution
        .values()
        .iter()
        .zip(reference.solution.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
