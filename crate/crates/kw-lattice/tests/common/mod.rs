//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::OnceLock;

use kw_lattice::{build_greens_table, GreensTable};

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite rule on `[0, pi]`, panels halving toward 0.
fn graded_rule(levels: u32, nodes: usize) -> Vec<(f64, f64)> {
    let gl = gauss_legendre(nodes);
    let mut breaks = vec![0.0];
    for k in (0..=levels).rev() {
        breaks.push(PI / 2f64.powi(k as i32));
    }
    let mut rule = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (x, wt) in &gl {
            rule.push((0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * wt));
        }
    }
    rule
}

/// `Phi0(x) = (1/pi^2) int_{[0,pi]^2} (cos(x1 t1) cos(x2 t2) - 1) / mu(t) dt` by
/// tensor Gauss-Legendre quadrature after subtracting the leading singular
/// part `-(x1^2 t1^2 + x2^2 t2^2) / (2|t|^2)`, whose integral is
/// `-(x1^2 + x2^2) pi^2 / 4`.
pub fn phi0_oracle(x1: i64, x2: i64) -> f64 {
    let rule = graded_rule(24, 20);
    let (a1, a2) = (x1 as f64, x2 as f64);
    let mut acc = 0.0;
    let mut comp = 0.0;
    for (t1, w1) in &rule {
        let s1 = (0.5 * t1).sin().powi(2);
        let c1 = (0.5 * a1 * t1).sin().powi(2);
        for (t2, w2) in &rule {
            let s2 = (0.5 * t2).sin().powi(2);
            let c2 = (0.5 * a2 * t2).sin().powi(2);
            let num = -2.0 * c1 - 2.0 * c2 + 4.0 * c1 * c2;
            let mu = 4.0 * (s1 + s2);
            let sing = -(a1 * a1 * t1 * t1 + a2 * a2 * t2 * t2) / (2.0 * (t1 * t1 + t2 * t2));
            let term = w1 * w2 * (num / mu - sing);
            let y = term - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        }
    }
    (acc - (a1 * a1 + a2 * a2) * PI * PI / 4.0) / (PI * PI)
}

/// Four-neighbour Laplacian of a closure.
pub fn laplacian_of(f: &dyn Fn(i64, i64) -> f64, x1: i64, x2: i64) -> f64 {
    f(x1 + 1, x2) + f(x1 - 1, x2) + f(x1, x2 + 1) + f(x1, x2 - 1) - 4.0 * f(x1, x2)
}

/// Kahan-summed total.
pub fn ksum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// Calls `f(x1, x2, multiplicity)` for every lattice point with
/// `r_lo <= |x| <= r_hi` via the octant `0 <= x2 <= x1`.
pub fn octant_shells(r_lo: f64, r_hi: f64, mut f: impl FnMut(i64, i64, f64)) {
    let (lo2, hi2) = (r_lo * r_lo, r_hi * r_hi);
    let top = r_hi.floor() as i64;
    for x1 in 0..=top {
        for x2 in 0..=x1 {
            let r2 = (x1 * x1 + x2 * x2) as f64;
            if r2 < lo2 || r2 > hi2 {
                continue;
            }
            let mult = match (x1, x2) {
                (0, 0) => 1.0,
                (_, 0) => 4.0,
                (a, b) if a == b => 4.0,
                _ => 8.0,
            };
            f(x1, x2, mult);
        }
    }
}

pub fn table_128() -> &'static GreensTable {
    static T: OnceLock<GreensTable> = OnceLock::new();
    T.get_or_init(|| build_greens_table(128, 1024).expect("table"))
}
