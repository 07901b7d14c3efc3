mod common;

use std::f64::consts::PI;

use common::{laplacian_of, phi0_oracle, table_128};
use kw_lattice::greens::{
    asymptotic_fit, cache_path, classical_constant, load_or_build, recurrence_octant,
};
use kw_lattice::{build_greens_table, eval_phi0, GreensTable, LatticePoint};
use proptest::prelude::*;

#[test]
fn oracle_reproduces_known_values() {
    assert_eq!(phi0_oracle(0, 0), 0.0);
    assert!((phi0_oracle(1, 0) + 0.25).abs() < 1e-10);
    assert!((phi0_oracle(1, 1) + 1.0 / PI).abs() < 1e-10);
    assert!((phi0_oracle(2, 0) - (-1.0 + 2.0 / PI)).abs() < 1e-10);
}

#[test]
fn table_agrees_with_oracle() {
    let t = table_128();
    assert_eq!(t.eval(1, 0), -0.25);
    for (x1, x2) in [(1, 1), (2, 0), (2, 1), (3, 2), (5, 0), (7, 4), (12, 9)] {
        let o = phi0_oracle(x1, x2);
        let v = t.eval(x1, x2);
        assert!((v - o).abs() < 1e-9, "Phi0({x1},{x2}) = {v}, oracle {o}");
    }
}

#[test]
fn table_solves_defining_equation() {
    let t = table_128();
    let f = |a: i64, b: i64| t.eval(a, b);
    let lim = t.crossover_radius() as i64 - 1;
    let mut worst: f64 = 0.0;
    for x1 in -lim..=lim {
        for x2 in -lim..=lim {
            let delta = if x1 == 0 && x2 == 0 { 1.0 } else { 0.0 };
            worst = worst.max((-laplacian_of(&f, x1, x2) - delta).abs());
        }
    }
    assert!(worst < 1e-10, "residual {worst:e}");
    assert!(t.diagnostics().laplacian_residual < 1e-10);
}

#[test]
fn recurrence_matches_table_near_origin() {
    let t = table_128();
    let rec = recurrence_octant(8);
    let mut k = 0;
    for m in 0..=8i64 {
        for n in 0..=m {
            assert!((rec[k] - t.eval(m, n)).abs() < 1e-9, "({m},{n})");
            k += 1;
        }
    }
}

#[test]
fn additive_constant_is_classical_and_residual_decays_like_inverse_radius() {
    let t = table_128();
    let fit = asymptotic_fit(t).unwrap();
    assert!((fit.constant - classical_constant()).abs() < 1e-6);
    assert!(fit.max_residual_times_r < 0.1);
    for r in [40i64, 80, 120] {
        let p = LatticePoint::new(r, r / 3);
        let res = eval_phi0(t, p) + p.norm().ln() / (2.0 * PI) + fit.constant;
        assert!(res.abs() * p.norm() < 0.1, "r = {r}: {res:e}");
    }
}

#[test]
fn asymptotic_branch_is_continuous_at_the_seam() {
    let t = table_128();
    let r = t.crossover_radius() as i64;
    let inside = t.eval(r - 1, 0);
    let outside = t.eval(r + 1, 0);
    let model = |x: f64| -x.ln() / (2.0 * PI) - t.fitted_constant();
    assert!((inside - model((r - 1) as f64)).abs() < 1e-5);
    assert!((outside - model((r + 1) as f64)).abs() < 1e-5);
}

#[test]
fn cache_round_trip_preserves_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let a = load_or_build(dir.path(), 24, 256).unwrap();
    assert!(cache_path(dir.path(), 24, 256).exists());
    let b = load_or_build(dir.path(), 24, 256).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    for m in 0..24 {
        assert_eq!(a.eval(m, m / 2).to_bits(), b.eval(m, m / 2).to_bits());
    }
    let path = dir.path().join("explicit.bin");
    a.save(&path).unwrap();
    let c = GreensTable::load(&path).unwrap();
    assert_eq!(c.fingerprint(), a.fingerprint());
}

#[test]
fn builds_are_deterministic() {
    let a = build_greens_table(20, 256).unwrap();
    let b = build_greens_table(20, 256).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dihedral_symmetry(x1 in -300i64..300, x2 in -300i64..300) {
        let t = table_128();
        let v = t.eval(x1, x2);
        for (a, b) in [(-x1, x2), (x1, -x2), (x2, x1), (-x2, x1), (-x1, -x2)] {
            prop_assert_eq!(v.to_bits(), t.eval(a, b).to_bits());
        }
    }

    #[test]
    fn values_are_negative_and_radially_ordered(x1 in 1i64..200, x2 in 0i64..200) {
        let t = table_128();
        let p = t.eval(x1, x2);
        prop_assert!(p < 0.0);
        prop_assert!(t.eval(2 * x1, 2 * x2) < p);
    }
}
