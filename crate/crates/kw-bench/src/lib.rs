//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use kw_lattice::{GridFunction, LatticePoint, TruncatedDomain};

/// Smooth, mean-nonzero data on a Euclidean ball.
pub fn bump(radius: u32) -> GridFunction {
    let d = TruncatedDomain::euclidean(radius).expect("domain");
    GridFunction::from_fn(d, |p: LatticePoint| (-(p.norm_sq() as f64) / 50.0).exp())
}

/// Right-hand side and boundary data for a Dirichlet solve on `domain`.
pub fn dirichlet_data(domain: &Arc<TruncatedDomain>) -> (Vec<f64>, Vec<f64>) {
    let rhs = domain
        .interior()
        .iter()
        .map(|p| ((p.x1 * 3 + p.x2 * 5).rem_euclid(7)) as f64 / 7.0)
        .collect();
    let bnd = domain.boundary().iter().map(|p| (p.x1 as f64 * 0.01).sin()).collect();
    (rhs, bnd)
}
