mod common;

use std::f64::consts::PI;

use common::{ksum, laplacian_of, octant_shells, table_128};
use kw_lattice::convolution::{convolve, convolve_direct, FftConvolver};
use kw_lattice::lattice_core::{laplacian, norm_ordering_check, tail_bound, weighted_norm};
use kw_lattice::{GridFunction, LatticePoint, NormKind, TruncatedDomain};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_function(radius: u32, kind: NormKind, seed: u64) -> GridFunction {
    let d = std::sync::Arc::new(TruncatedDomain::new(radius, kind).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    GridFunction::new(d, values).unwrap()
}

fn kind_strategy() -> impl Strategy<Value = NormKind> {
    prop_oneof![Just(NormKind::EuclideanBall), Just(NormKind::TaxicabBall)]
}

#[test]
fn domain_counts_match_brute_force() {
    for r in [1u32, 5, 17, 40] {
        let d = TruncatedDomain::new(r, NormKind::EuclideanBall).unwrap();
        let ri = r as i64;
        let mut count = 0;
        let mut inside = 0;
        for x1 in -ri - 1..=ri + 1 {
            for x2 in -ri - 1..=ri + 1 {
                let here = x1 * x1 + x2 * x2 <= ri * ri;
                if here {
                    inside += 1;
                }
                let touches = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|(a, b)| (x1 + a) * (x1 + a) + (x2 + b) * (x2 + b) <= ri * ri);
                if here || touches {
                    count += 1;
                }
            }
        }
        assert_eq!(d.n_interior(), inside, "radius {r}");
        assert_eq!(d.len(), count, "radius {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weighted_norm_is_monotone_in_exponent(
        seed in any::<u64>(),
        radius in 1u32..30,
        kind in kind_strategy(),
        s2 in 0.0f64..6.0,
        gap in 1e-3f64..4.0,
    ) {
        let f = random_function(radius, kind, seed);
        prop_assert!(norm_ordering_check(&f, s2 + gap, s2).unwrap());
        prop_assert!(weighted_norm(&f, s2) <= weighted_norm(&f, s2 + gap));
    }

    #[test]
    fn laplacian_is_linear(
        seed in any::<u64>(),
        radius in 2u32..20,
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let f = random_function(radius, NormKind::EuclideanBall, seed);
        let g = random_function(radius, NormKind::EuclideanBall, seed.wrapping_add(1));
        let d = f.domain().clone();
        let combo = GridFunction::new(
            d.clone(),
            f.values().iter().zip(g.values()).map(|(x, y)| a * x + b * y).collect(),
        ).unwrap();
        for p in d.interior() {
            let lhs = laplacian(&combo, *p).unwrap();
            let rhs = a * laplacian(&f, *p).unwrap() + b * laplacian(&g, *p).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + a.abs() + b.abs()) * 8.0);
            let direct = laplacian_of(&|x1, x2| combo.get(LatticePoint::new(x1, x2)).unwrap(), p.x1, p.x2);
            prop_assert!((lhs - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_bound_dominates_lattice_sum(sigma in 2.3f64..6.0, r in 4.0f64..40.0, rho in prop_oneof![Just(0.0), Just(1.0), Just(2.0), Just(-1.0), Just(-2.0)]) {
        prop_assume!(rho != -1.0 || r >= 4.0 * (2.0 / (sigma - 2.0)).exp());
        let bound = tail_bound(sigma, rho, r).unwrap();
        let r_max = 1500.0;
        let mut terms = Vec::new();
        octant_shells(r, r_max, |x1, x2, m| {
            let q = ((x1 * x1 + x2 * x2) as f64).sqrt();
            terms.push(m * q.powf(-sigma) * q.ln().powf(-rho));
        });
        let partial = ksum(terms);
        prop_assert!(partial <= bound, "partial {partial} > bound {bound}");
    }

    #[test]
    fn convolution_is_linear_and_fft_matches_direct(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let t = table_128();
        let f = random_function(12, NormKind::EuclideanBall, seed);
        let g = random_function(12, NormKind::EuclideanBall, seed ^ 0x5555);
        let d = f.domain().clone();
        let e = d.extent();
        let conv = FftConvolver::new(t, e, e);
        let cf = conv.apply(d.points(), f.values(), d.points());
        let cg = conv.apply(d.points(), g.values(), d.points());
        let combo: Vec<f64> = f.values().iter().zip(g.values()).map(|(x, y)| a * x + b * y).collect();
        let cc = conv.apply(d.points(), &combo, d.points());
        let scale = cf.iter().chain(&cg).fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..d.len() {
            prop_assert!((cc[i] - a * cf[i] - b * cg[i]).abs() < 1e-11 * scale * 6.0);
        }
        let direct = convolve_direct(t, d.points(), f.values(), d.points());
        for (x, y) in cf.iter().zip(&direct) {
            prop_assert!((x - y).abs() < 1e-10 * scale);
        }
    }
}

#[test]
fn convolution_against_brute_force_double_loop() {
    let t = table_128();
    let f = random_function(9, NormKind::TaxicabBall, 7);
    let d = f.domain().clone();
    let out = convolve(t, &f);
    for (x, v) in d.points().iter().zip(out.values()) {
        let mut acc = Vec::new();
        for (y, fy) in d.points().iter().zip(f.values()) {
            acc.push(t.eval(y.x1 - x.x1, y.x2 - x.x2) * fy);
        }
        assert!((ksum(acc) - v).abs() < 1e-11);
    }
}

#[test]
fn convolution_inverts_the_laplacian() {
    let t = table_128();
    let f = random_function(10, NormKind::EuclideanBall, 99);
    let big = TruncatedDomain::euclidean(14).unwrap();
    let src: Vec<f64> = big
        .points()
        .iter()
        .map(|p| f.get(*p).unwrap_or(0.0))
        .collect();
    let e = big.extent();
    let g = FftConvolver::new(t, e, e).apply(big.points(), &src, big.points());
    let gf = GridFunction::new(big.clone(), g).unwrap();
    for (p, fv) in big.interior().iter().zip(&src) {
        assert!((-laplacian(&gf, *p).unwrap() - fv).abs() < 1e-10);
    }
}

#[test]
fn logarithmic_growth_of_point_mass() {
    let t = table_128();
    let mass = 3.0;
    let d = TruncatedDomain::euclidean(100).unwrap();
    let f = GridFunction::from_fn(d.clone(), |p| if p.is_origin() { mass } else { 0.0 });
    let g = convolve(t, &f);
    let p = LatticePoint::new(90, 20);
    let expect = -mass * (p.norm().ln() / (2.0 * PI) + t.fitted_constant());
    assert!((g.get(p).unwrap() - expect).abs() < 1e-4);
}
