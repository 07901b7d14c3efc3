//! Linear Dirichlet problems `(-Delta + c) u = rhs` on a truncated domain with
//! prescribed boundary values, and the maximum-principle oracle.

use std::sync::Arc;

use crate::error::{argument, KwError, Result};
use crate::lattice_core::{laplacian_at_slot, GridFunction, TruncatedDomain};
use crate::linalg::{factor_shifted, pcg, BandCholesky, Multigrid};
use crate::numeric::NeumaierSum;

/// Default absolute sup-norm residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest number of unknowns solved by direct factorization.
pub const DIRECT_LIMIT: usize = 40_000;

/// `(-Delta + c) u = rhs` in the interior, `u = boundary_data` on the boundary layer.
#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub domain: Arc<TruncatedDomain>,
    /// Right-hand side at interior slots.
    pub rhs: Vec<f64>,
    /// Prescribed values at boundary slots, in slot order.
    pub boundary_data: Vec<f64>,
    /// Optional nonnegative potential `c` at interior slots (zero if absent).
    pub potential: Option<Vec<f64>>,
}

impl DirichletProblem {
    /// Takes the interior values of `rhs` and the boundary values of `boundary`.
    pub fn from_functions(rhs: &GridFunction, boundary: &GridFunction) -> Result<Self> {
        if !Arc::ptr_eq(rhs.domain(), boundary.domain())
            && (rhs.domain().radius() != boundary.domain().radius()
                || rhs.domain().norm_kind() != boundary.domain().norm_kind())
        {
            return argument("rhs and boundary data live on different domains");
        }
        let d = rhs.domain().clone();
        let n = d.n_interior();
        Ok(Self {
            rhs: rhs.values()[..n].to_vec(),
            boundary_data: boundary.values()[n..].to_vec(),
            domain: d,
            potential: None,
        })
    }

    fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if self.rhs.len() != d.n_interior() {
            return argument("rhs must have one value per interior point");
        }
        if self.boundary_data.len() != d.len() - d.n_interior() {
            return argument("boundary data must have one value per boundary point");
        }
        if let Some(c) = &self.potential {
            if c.len() != d.n_interior() || c.iter().any(|v| !(*v >= 0.0)) {
                return argument("potential must be nonnegative at every interior point");
            }
        }
        Ok(())
    }
}

enum Method {
    Direct(BandCholesky),
    Multigrid(Multigrid),
}

/// A reusable solver for a fixed domain and potential: the matrix is factored
/// (or its multigrid hierarchy built) once and reused for every right-hand side.
pub struct DirichletSolver {
    domain: Arc<TruncatedDomain>,
    shift: Vec<f64>,
    method: Method,
}

impl DirichletSolver {
    pub fn new(domain: Arc<TruncatedDomain>, potential: Option<Vec<f64>>) -> Result<Self> {
        let n = domain.n_interior();
        let shift = potential.unwrap_or_else(|| vec![0.0; n]);
        if shift.len() != n || shift.iter().any(|v| !(*v >= 0.0)) {
            return argument("potential must be nonnegative at every interior point");
        }
        let method = if n <= DIRECT_LIMIT {
            Method::Direct(factor_shifted(&domain, &shift)?)
        } else {
            Method::Multigrid(Multigrid::new(&domain, &shift)?)
        };
        Ok(Self {
            domain,
            shift,
            method,
        })
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.method, Method::Direct(_))
    }

    pub fn domain(&self) -> &Arc<TruncatedDomain> {
        &self.domain
    }

    /// Folds boundary data into the interior right-hand side.
    fn effective_rhs(&self, rhs: &[f64], boundary: &[f64]) -> Vec<f64> {
        let d = &self.domain;
        let n = d.n_interior();
        (0..n)
            .map(|i| {
                let mut b = rhs[i];
                for nb in d.neighbor_slots(i) {
                    if nb >= n {
                        b += boundary[nb - n];
                    }
                }
                b
            })
            .collect()
    }

    /// Sup-norm residual of `(-Delta + c) u = rhs` over the interior.
    pub fn residual(&self, values: &[f64], rhs: &[f64]) -> f64 {
        let d = &self.domain;
        (0..d.n_interior())
            .map(|i| (-laplacian_at_slot(d, values, i) + self.shift[i] * values[i] - rhs[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Solves with the given interior right-hand side and boundary values,
    /// starting from `guess` (interior values) when provided.
    pub fn solve(
        &self,
        rhs: &[f64],
        boundary: &[f64],
        guess: Option<&[f64]>,
        tol: f64,
    ) -> Result<Vec<f64>> {
        if !(tol > 0.0) {
            return argument("tolerance must be positive");
        }
        let d = &self.domain;
        let n = d.n_interior();
        let b = self.effective_rhs(rhs, boundary);
        let mut values = vec![0.0; d.len()];
        values[n..].copy_from_slice(boundary);
        match &self.method {
            Method::Direct(ch) => {
                let mut x = b.clone();
                ch.solve(&mut x);
                values[..n].copy_from_slice(&x);
                for _ in 0..3 {
                    if self.residual(&values, rhs) <= tol {
                        break;
                    }
                    let mut r: Vec<f64> = (0..n)
                        .map(|i| {
                            rhs[i] + laplacian_at_slot(d, &values, i) - self.shift[i] * values[i]
                        })
                        .collect();
                    ch.solve(&mut r);
                    for i in 0..n {
                        values[i] += r[i];
                    }
                }
            }
            Method::Multigrid(mg) => {
                let mut x = guess.map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
                pcg(
                    d,
                    &self.shift,
                    &|r, z| mg.precondition(r, z),
                    &b,
                    &mut x,
                    tol,
                    2000,
                )?;
                values[..n].copy_from_slice(&x);
            }
        }
        let res = self.residual(&values, rhs);
        if res > tol {
            return Err(KwError::LinearSolver {
                message: "residual above tolerance after solve".into(),
                residual: res,
            });
        }
        Ok(values)
    }
}

/// Solves a Dirichlet problem to sup-norm residual `tol`.
pub fn solve_dirichlet(p: &DirichletProblem, tol: f64) -> Result<GridFunction> {
    p.validate()?;
    let solver = DirichletSolver::new(p.domain.clone(), p.potential.clone())?;
    let values = solver.solve(&p.rhs, &p.boundary_data, None, tol)?;
    GridFunction::new(p.domain.clone(), values)
}

/// Checks the conclusion of the maximum principle for `-Delta u + c u`:
/// whenever `-Delta u + c u >= -tol` in the interior and `u >= -tol` on the
/// boundary, then `u >= -10 tol` in the interior. Returns `true` when the
/// implication holds (including vacuously).
pub fn maximum_principle_check(u: &GridFunction, c: &[f64], tol: f64) -> bool {
    let d = u.domain();
    let n = d.n_interior();
    let v = u.values();
    let hyp_interior =
        (0..n).all(|i| -laplacian_at_slot(d, v, i) + c[i] * v[i] >= -tol);
    let hyp_boundary = v[n..].iter().all(|x| *x >= -tol);
    if !(hyp_interior && hyp_boundary) {
        return true;
    }
    v[..n].iter().all(|x| *x >= -10.0 * tol)
}

/// Flux `sum (u(in) - u(out))` over edges from the interior to the boundary layer.
pub fn boundary_flux(u: &GridFunction) -> f64 {
    let d = u.domain();
    let n = d.n_interior();
    let v = u.values();
    let mut acc = NeumaierSum::new();
    for i in 0..n {
        for nb in d.neighbor_slots(i) {
            if nb >= n {
                acc.add(v[i] - v[nb]);
            }
        }
    }
    acc.value()
}

/// `sum_interior (-Delta u)`, which equals [`boundary_flux`] exactly in exact arithmetic.
pub fn interior_mass(u: &GridFunction) -> f64 {
    let d = u.domain();
    let mut acc = NeumaierSum::new();
    for i in 0..d.n_interior() {
        acc.add(-laplacian_at_slot(d, u.values(), i));
    }
    acc.value()
}
