//! Source case `-Delta u = e^{kappa u} + beta delta0`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{ln_threshold_h0, UniversalConstants};
use crate::error::{argument, Result};
use crate::fixed_point::IterationOptions;
use crate::greens::GreensTable;
use crate::lattice_core::{GridFunction, TailKind, TailModel, TruncatedDomain};
use crate::numeric::compensated_sum;
use crate::regular::{solve_regular, EquationSign, NormalizedMap, SolveReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceProblem {
    pub kappa: f64,
    /// Total mass; `sigma = alpha kappa / 2pi`.
    pub alpha: f64,
    pub beta: f64,
    pub domain_radius: u32,
}

impl SourceProblem {
    /// Builds the problem from `sigma` instead of `alpha`.
    pub fn from_sigma(kappa: f64, sigma: f64, beta: f64, domain_radius: u32) -> Self {
        Self {
            kappa,
            alpha: 2.0 * PI * sigma / kappa,
            beta,
            domain_radius,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.alpha * self.kappa / (2.0 * PI)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return argument("kappa must be positive");
        }
        if !(self.sigma() > 2.0) {
            return argument(format!("need sigma > 2, got {}", self.sigma()));
        }
        if !(self.beta >= 0.0) || !(self.beta < self.alpha) {
            return argument("need 0 <= beta < alpha");
        }
        Ok(())
    }
}

/// `K_alpha = exp(alpha kappa Phi0)` on a domain, with its power-law tail.
#[derive(Clone, Debug)]
pub struct SourceWeight {
    pub values: GridFunction,
    pub sigma: f64,
    /// Model of `ln K` beyond the domain: `-sigma ln|x| - alpha kappa C`.
    pub log_tail: TailModel,
    /// Radius where the tail integral starts: `sqrt(#stored points / pi)`.
    pub tail_start: f64,
}

impl SourceWeight {
    /// Interior-plus-boundary sum of the stored values.
    pub fn head_sum(&self) -> f64 {
        compensated_sum(self.values.values().iter().copied())
    }

    /// `int_{|x| > r0} e^{-alpha kappa C} |x|^{-sigma} dx` with `r0 = tail_start`.
    pub fn tail_sum(&self) -> f64 {
        2.0 * PI * self.log_tail.constant_d.exp() * self.tail_start.powf(2.0 - self.sigma)
            / (self.sigma - 2.0)
    }

    pub fn total_sum(&self) -> f64 {
        self.head_sum() + self.tail_sum()
    }
}

/// Tabulates `K_alpha` on the Euclidean ball of radius `radius`.
pub fn source_weight(table: &GreensTable, alpha: f64, kappa: f64, radius: u32) -> Result<SourceWeight> {
    let sigma = alpha * kappa / (2.0 * PI);
    if !(sigma > 2.0) {
        return argument(format!("need sigma > 2, got {sigma}"));
    }
    let d = TruncatedDomain::euclidean(radius)?;
    let ak = alpha * kappa;
    let values = GridFunction::from_fn(d.clone(), |p| (ak * table.eval(p.x1, p.x2)).exp());
    Ok(SourceWeight {
        tail_start: (d.len() as f64 / PI).sqrt(),
        values,
        sigma,
        log_tail: TailModel {
            slope_a: sigma,
            constant_d: -ak * table.fitted_constant(),
            kind: TailKind::Log,
        },
    })
}

/// Normalization `c_v = ln(g_mass / sum K e^{kappa v})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub c: f64,
    pub head: f64,
    pub tail: f64,
    /// Set when the tail correction exceeds 1% of the head sum.
    pub accuracy_warning: Option<String>,
}

/// Computes `c_v`; the tail integrand is `K_asym e^{kappa v_edge}` with `v_edge`
/// the mean of `v` over the boundary layer.
pub fn normalization_constant(
    k: &SourceWeight,
    g_mass: f64,
    v: &GridFunction,
    kappa: f64,
) -> Result<Normalization> {
    if !(g_mass > 0.0) {
        return argument("g_mass must be positive");
    }
    let dk = k.values.domain();
    let dv = v.domain();
    if !Arc::ptr_eq(dk, dv) && (dk.radius() != dv.radius() || dk.norm_kind() != dv.norm_kind()) {
        return argument("K and v live on different domains");
    }
    let head = compensated_sum(
        k.values
            .values()
            .iter()
            .zip(v.values())
            .map(|(a, b)| a * (kappa * b).exp()),
    );
    let boundary = &v.values()[dv.n_interior()..];
    let v_edge = compensated_sum(boundary.iter().copied()) / boundary.len().max(1) as f64;
    let tail = k.tail_sum() * (kappa * v_edge).exp();
    let total = head + tail;
    if !(total > 0.0) || !total.is_finite() {
        return argument("sum K e^{kappa v} must be positive and finite");
    }
    let accuracy_warning = (tail > 0.01 * head).then(|| {
        format!(
            "tail correction is {:.2}% of the head sum",
            100.0 * tail / head
        )
    });
    Ok(Normalization {
        c: (g_mass / total).ln(),
        head,
        tail,
        accuracy_warning,
    })
}

/// The source-case fixed-point map for `p`.
pub fn source_map(table: &GreensTable, p: &SourceProblem) -> Result<NormalizedMap> {
    p.validate()?;
    NormalizedMap::new(
        table,
        EquationSign::Source,
        p.kappa,
        p.alpha,
        p.beta,
        p.domain_radius,
    )
}

/// Solves the source case by damped iteration from `v = 0`.
pub fn solve_source(p: &SourceProblem, table: &GreensTable, opts: &IterationOptions) -> Result<SolveReport> {
    let map = source_map(table, p)?;
    solve_regular(&map, opts, None)
}

/// `h0(sigma) = C2^sigma (sigma-2) exp(2 pi c1 sigma + 24 pi c0^sigma sigma (sigma-2)^{-4-1/(sigma+1)})`.
pub fn threshold_h0(sigma: f64, constants: &UniversalConstants) -> Result<f64> {
    Ok(ln_threshold_h0(sigma, constants)?.exp())
}
