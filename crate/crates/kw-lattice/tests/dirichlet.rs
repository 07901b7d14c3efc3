mod common;

use std::sync::Arc;

use common::laplacian_of;
use kw_lattice::linear_dirichlet::{
    boundary_flux, interior_mass, maximum_principle_check, solve_dirichlet, DirichletProblem,
    DirichletSolver,
};
use kw_lattice::{NormKind, TruncatedDomain};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    domain: Arc<TruncatedDomain>,
    rhs: Vec<f64>,
    boundary: Vec<f64>,
    potential: Vec<f64>,
}

fn instance(seed: u64, radius: u32, kind: NormKind, nonneg: bool) -> Instance {
    let domain = Arc::new(TruncatedDomain::new(radius, kind).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = domain.n_interior();
    let nb = domain.len() - n;
    let lo = if nonneg { 0.0 } else { -1.0 };
    let potential_scale = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..5.0) };
    Instance {
        rhs: (0..n).map(|_| rng.random_range(lo..1.0)).collect(),
        boundary: (0..nb).map(|_| rng.random_range(lo..1.0)).collect(),
        potential: (0..n).map(|_| potential_scale * rng.random::<f64>()).collect(),
        domain,
    }
}

fn solve(inst: &Instance) -> kw_lattice::GridFunction {
    let p = DirichletProblem {
        domain: inst.domain.clone(),
        rhs: inst.rhs.clone(),
        boundary_data: inst.boundary.clone(),
        potential: Some(inst.potential.clone()),
    };
    solve_dirichlet(&p, 1e-12).unwrap()
}

fn kind_strategy() -> impl Strategy<Value = NormKind> {
    prop_oneof![Just(NormKind::EuclideanBall), Just(NormKind::TaxicabBall)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn maximum_principle_has_no_counterexample(seed in any::<u64>(), radius in 1u32..12, kind in kind_strategy()) {
        let inst = instance(seed, radius, kind, true);
        let u = solve(&inst);
        prop_assert!(maximum_principle_check(&u, &inst.potential, 1e-10));
        prop_assert!(u.values().iter().all(|v| *v >= -1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn comparison_is_monotone(seed in any::<u64>(), radius in 1u32..15) {
        let low = instance(seed, radius, NormKind::EuclideanBall, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let high = Instance {
            domain: low.domain.clone(),
            rhs: low.rhs.iter().map(|v| v + rng.random_range(0.0..1.0)).collect(),
            boundary: low.boundary.iter().map(|v| v + rng.random_range(0.0..1.0)).collect(),
            potential: low.potential.clone(),
        };
        let (ul, uh) = (solve(&low), solve(&high));
        for (a, b) in ul.values().iter().zip(uh.values()) {
            prop_assert!(*a <= *b + 1e-10);
        }
    }

    #[test]
    fn solution_satisfies_equation_pointwise(seed in any::<u64>(), radius in 1u32..15) {
        let inst = instance(seed, radius, NormKind::EuclideanBall, false);
        let u = solve(&inst);
        let d = &inst.domain;
        let f = |a: i64, b: i64| u.get(kw_lattice::LatticePoint::new(a, b)).unwrap();
        for (i, p) in d.interior().iter().enumerate() {
            let lhs = -laplacian_of(&f, p.x1, p.x2) + inst.potential[i] * f(p.x1, p.x2);
            prop_assert!((lhs - inst.rhs[i]).abs() < 1e-10);
        }
        for (k, v) in inst.boundary.iter().enumerate() {
            prop_assert_eq!(u.values()[d.n_interior() + k], *v);
        }
    }
}

#[test]
fn check_reports_a_violation_when_the_potential_is_negative() {
    let d = TruncatedDomain::euclidean(3).unwrap();
    let mut u = kw_lattice::GridFunction::zeros(d.clone());
    let o = d.origin_slot();
    u.values_mut()[o] = -1e-3;
    let mut c = vec![0.0; d.n_interior()];
    assert!(maximum_principle_check(&u, &c, 1e-12));
    c[o] = -10.0;
    assert!(!maximum_principle_check(&u, &c, 1e-12));
}

#[test]
fn flux_equals_interior_mass() {
    let inst = instance(3, 20, NormKind::EuclideanBall, false);
    let p = DirichletProblem {
        domain: inst.domain.clone(),
        rhs: inst.rhs.clone(),
        boundary_data: inst.boundary.clone(),
        potential: None,
    };
    let u = solve_dirichlet(&p, 1e-12).unwrap();
    let total: f64 = inst.rhs.iter().sum();
    assert!((interior_mass(&u) - total).abs() < 1e-8);
    assert!((boundary_flux(&u) - total).abs() < 1e-8);
}

#[test]
fn multigrid_and_direct_paths_agree() {
    let d = TruncatedDomain::euclidean(125).unwrap();
    assert!(d.n_interior() > kw_lattice::linear_dirichlet::DIRECT_LIMIT);
    let n = d.n_interior();
    let rhs: Vec<f64> = d.interior().iter().map(|p| ((p.x1 * 3 + p.x2 * 5) % 7) as f64 / 7.0).collect();
    let bnd: Vec<f64> = d.boundary().iter().map(|p| (p.x1 as f64 * 0.01).sin()).collect();
    let shift: Vec<f64> = d.interior().iter().map(|p| 0.1 + 0.01 * (p.x2.abs() % 3) as f64).collect();
    let mg = DirichletSolver::new(d.clone(), Some(shift.clone())).unwrap();
    assert!(!mg.is_direct());
    let u = mg.solve(&rhs, &bnd, None, 1e-11).unwrap();
    assert!(mg.residual(&u, &rhs) < 1e-10);
    let band = kw_lattice::linalg::factor_shifted(&d, &shift).unwrap();
    let mut b: Vec<f64> = (0..n)
        .map(|i| {
            let mut v = rhs[i];
            for nb in d.neighbor_slots(i) {
                if nb >= n {
                    v += bnd[nb - n];
                }
            }
            v
        })
        .collect();
    band.solve(&mut b);
    let worst = b.iter().zip(&u[..n]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst:e}");
}
