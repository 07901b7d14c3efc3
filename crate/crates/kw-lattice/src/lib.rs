//! Green's-function based solvers for Kazdan-Warner type equations
//! `-Delta u = eps e^{kappa u} + beta delta_0` on the integer lattice.

pub mod absorption_solver;
pub mod analysis;
pub mod convolution;
pub mod error;
pub mod fixed_point;
pub mod greens;
pub mod lattice_core;
pub mod linalg;
pub mod linear_dirichlet;
pub mod numeric;
pub mod regular;
pub mod source_solver;

pub use absorption_solver::{AbsorptionProblem, ExtremalReport};
pub use analysis::{FitResult, UniversalConstants};
pub use error::{KwError, Result};
pub use fixed_point::IterationOptions;
pub use greens::{build_greens_table, eval_phi0, GreensTable};
pub use lattice_core::{GridFunction, LatticePoint, NormKind, TailKind, TailModel, TruncatedDomain};
pub use regular::{EquationSign, NormalizedMap, SolveReport};
pub use source_solver::SourceProblem;
