//! Sparse symmetric positive-definite solvers for `(-Delta + c) u = b` on the
//! interior of a truncated domain: banded Cholesky and multigrid-preconditioned
//! conjugate gradients.

use crate::error::{KwError, Result};
use crate::lattice_core::TruncatedDomain;

/// Banded Cholesky factor `A = L L^T` with lower bandwidth `bw`.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Factors a symmetric matrix given its diagonal and strictly lower entries.
    pub fn factor(n: usize, diag: &[f64], lower: &[Vec<(usize, f64)>]) -> Result<Self> {
        let bw = lower
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(j, _)| i - j))
            .max()
            .unwrap_or(0);
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            l[i * w + bw] = diag[i];
            for &(j, v) in &lower[i] {
                l[i * w + bw - (i - j)] = v;
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = l[i * w + bw - (i - j)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in klo..j {
                    s -= l[ri + k] * l[rj + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(KwError::LinearSolver {
                            message: format!("matrix is not positive definite at row {i}"),
                            residual: s,
                        });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + bw - (i - j)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            let ri = i * w + bw - i;
            for k in lo..i {
                s -= self.l[ri + k] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            b[i] /= self.l[i * w + bw];
            let lo = i.saturating_sub(bw);
            let ri = i * w + bw - i;
            let bi = b[i];
            for k in lo..i {
                b[k] -= self.l[ri + k] * bi;
            }
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }
}

/// `y = (-Delta + c) x` on interior slots, treating boundary values as zero.
pub fn apply_shifted(domain: &TruncatedDomain, shift: &[f64], x: &[f64], y: &mut [f64]) {
    let n = domain.n_interior();
    for i in 0..n {
        let mut s = (4.0 + shift[i]) * x[i];
        for nb in domain.neighbor_slots(i) {
            if nb < n {
                s -= x[nb];
            }
        }
        y[i] = s;
    }
}

/// Banded Cholesky factor of `-Delta + c` on the interior slots.
pub fn factor_shifted(domain: &TruncatedDomain, shift: &[f64]) -> Result<BandCholesky> {
    let n = domain.n_interior();
    let diag: Vec<f64> = shift.iter().map(|c| 4.0 + c).collect();
    let lower: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            domain
                .neighbor_slots(i)
                .into_iter()
                .filter(|&j| j < i)
                .map(|j| (j, -1.0))
                .collect()
        })
        .collect();
    BandCholesky::factor(n, &diag, &lower)
}

struct Level {
    side: usize,
    active: Vec<bool>,
    /// Operator scale `1/h^2` relative to the finest grid.
    scale: f64,
    shift: Vec<f64>,
}

impl Level {
    #[inline]
    fn diag(&self, k: usize) -> f64 {
        4.0 * self.scale + self.shift[k]
    }

    fn residual(&self, u: &[f64], b: &[f64], r: &mut [f64]) {
        let n = self.side;
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                if !self.active[k] {
                    r[k] = 0.0;
                    continue;
                }
                let mut nb = 0.0;
                if i > 0 {
                    nb += u[k - n];
                }
                if i + 1 < n {
                    nb += u[k + n];
                }
                if j > 0 {
                    nb += u[k - 1];
                }
                if j + 1 < n {
                    nb += u[k + 1];
                }
                r[k] = b[k] - (self.diag(k) * u[k] - self.scale * nb);
            }
        }
    }

    fn smooth_color(&self, u: &mut [f64], b: &[f64], color: usize) {
        let n = self.side;
        for i in 0..n {
            let start = (i + color) % 2;
            let mut j = start;
            while j < n {
                let k = i * n + j;
                if self.active[k] {
                    let mut nb = 0.0;
                    if i > 0 {
                        nb += u[k - n];
                    }
                    if i + 1 < n {
                        nb += u[k + n];
                    }
                    if j > 0 {
                        nb += u[k - 1];
                    }
                    if j + 1 < n {
                        nb += u[k + 1];
                    }
                    u[k] = (b[k] + self.scale * nb) / self.diag(k);
                }
                j += 2;
            }
        }
    }
}

const FW: [f64; 3] = [0.25, 0.5, 0.25];

fn coarse_side(n: usize) -> usize {
    (n - 1) / 2 + 1
}

fn restrict(fine: &[f64], nf: usize, coarse: &mut [f64], nc: usize) {
    for ic in 0..nc {
        for jc in 0..nc {
            let (ci, cj) = (2 * ic as i64, 2 * jc as i64);
            let mut s = 0.0;
            for (a, wa) in FW.iter().enumerate() {
                let i = ci + a as i64 - 1;
                if i < 0 || i >= nf as i64 {
                    continue;
                }
                for (b, wb) in FW.iter().enumerate() {
                    let j = cj + b as i64 - 1;
                    if j < 0 || j >= nf as i64 {
                        continue;
                    }
                    s += wa * wb * fine[i as usize * nf + j as usize];
                }
            }
            coarse[ic * nc + jc] = s;
        }
    }
}

/// Adds the bilinear interpolation of `coarse` to the active cells of `fine`.
fn prolong_add(coarse: &[f64], nc: usize, fine: &mut [f64], nf: usize, active: &[bool]) {
    for i in 0..nf {
        let (i0, ti) = (i / 2, i % 2);
        for j in 0..nf {
            let k = i * nf + j;
            if !active[k] {
                continue;
            }
            let (j0, tj) = (j / 2, j % 2);
            let at = |a: usize, b: usize| -> f64 {
                if a < nc && b < nc {
                    coarse[a * nc + b]
                } else {
                    0.0
                }
            };
            let v = match (ti, tj) {
                (0, 0) => at(i0, j0),
                (1, 0) => 0.5 * (at(i0, j0) + at(i0 + 1, j0)),
                (0, 1) => 0.5 * (at(i0, j0) + at(i0, j0 + 1)),
                _ => 0.25 * (at(i0, j0) + at(i0 + 1, j0) + at(i0, j0 + 1) + at(i0 + 1, j0 + 1)),
            };
            fine[k] += v;
        }
    }
}

/// Symmetric V-cycle preconditioner for `-Delta + c` on a masked square grid.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: Option<(BandCholesky, Vec<usize>)>,
    /// Grid cell of each interior slot on the finest level.
    cell_of_slot: Vec<usize>,
    sweeps: usize,
}

impl Multigrid {
    pub fn new(domain: &TruncatedDomain, shift: &[f64]) -> Result<Self> {
        let e = domain.extent();
        let side = (2 * e + 1) as usize;
        let mut active = vec![false; side * side];
        let mut fine_shift = vec![0.0; side * side];
        let mut cell_of_slot = Vec::with_capacity(domain.n_interior());
        for (s, p) in domain.interior().iter().enumerate() {
            let k = (p.x1 + e) as usize * side + (p.x2 + e) as usize;
            active[k] = true;
            fine_shift[k] = shift[s];
            cell_of_slot.push(k);
        }
        let mut levels = vec![Level {
            side,
            active,
            scale: 1.0,
            shift: fine_shift,
        }];
        while levels.last().map_or(false, |l| l.side > 33) {
            let f = levels.last().unwrap();
            let nc = coarse_side(f.side);
            let mut active = vec![false; nc * nc];
            for ic in 0..nc {
                for jc in 0..nc {
                    active[ic * nc + jc] = f.active[2 * ic * f.side + 2 * jc];
                }
            }
            let mut shift = vec![0.0; nc * nc];
            restrict(&f.shift, f.side, &mut shift, nc);
            for (s, a) in shift.iter_mut().zip(&active) {
                if !a {
                    *s = 0.0;
                }
            }
            let scale = f.scale * 0.25;
            levels.push(Level {
                side: nc,
                active,
                scale,
                shift,
            });
        }
        let last = levels.last().unwrap();
        let cells: Vec<usize> = (0..last.side * last.side).filter(|&k| last.active[k]).collect();
        let coarse = if cells.is_empty() {
            None
        } else {
            let mut index = vec![usize::MAX; last.side * last.side];
            for (i, &k) in cells.iter().enumerate() {
                index[k] = i;
            }
            let n = last.side;
            let diag: Vec<f64> = cells.iter().map(|&k| last.diag(k)).collect();
            let lower: Vec<Vec<(usize, f64)>> = cells
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let mut row = Vec::new();
                    if k >= n && index[k - n] < i {
                        row.push((index[k - n], -last.scale));
                    }
                    if k % n > 0 && index[k - 1] < i {
                        row.push((index[k - 1], -last.scale));
                    }
                    row
                })
                .collect();
            Some((BandCholesky::factor(cells.len(), &diag, &lower)?, cells))
        };
        Ok(Self {
            levels,
            coarse,
            cell_of_slot,
            sweeps: 2,
        })
    }

    fn vcycle(&self, level: usize, b: &[f64], u: &mut [f64]) {
        let lv = &self.levels[level];
        if level + 1 == self.levels.len() {
            u.iter_mut().for_each(|x| *x = 0.0);
            if let Some((chol, cells)) = &self.coarse {
                let mut rhs: Vec<f64> = cells.iter().map(|&k| b[k]).collect();
                chol.solve(&mut rhs);
                for (&k, v) in cells.iter().zip(rhs) {
                    u[k] = v;
                }
            }
            return;
        }
        u.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..self.sweeps {
            lv.smooth_color(u, b, 0);
            lv.smooth_color(u, b, 1);
        }
        let mut r = vec![0.0; lv.side * lv.side];
        lv.residual(u, b, &mut r);
        let nc = self.levels[level + 1].side;
        let mut rc = vec![0.0; nc * nc];
        restrict(&r, lv.side, &mut rc, nc);
        let act = &self.levels[level + 1].active;
        for (v, a) in rc.iter_mut().zip(act) {
            if !a {
                *v = 0.0;
            }
        }
        let mut ec = vec![0.0; nc * nc];
        self.vcycle(level + 1, &rc, &mut ec);
        prolong_add(&ec, nc, u, lv.side, &lv.active);
        for _ in 0..self.sweeps {
            lv.smooth_color(u, b, 1);
            lv.smooth_color(u, b, 0);
        }
    }

    /// Applies one V-cycle to an interior-slot vector.
    pub fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let side = self.levels[0].side;
        let mut b = vec![0.0; side * side];
        for (&k, v) in self.cell_of_slot.iter().zip(r) {
            b[k] = *v;
        }
        let mut u = vec![0.0; side * side];
        self.vcycle(0, &b, &mut u);
        for (&k, out) in self.cell_of_slot.iter().zip(z.iter_mut()) {
            *out = u[k];
        }
    }
}

/// Statistics of a conjugate-gradient solve.
#[derive(Clone, Copy, Debug)]
pub struct CgStats {
    pub iterations: usize,
    pub residual_sup: f64,
}

/// Preconditioned conjugate gradients for `(-Delta + c) x = b` until the
/// sup-norm residual drops below `tol`. `x` holds the initial guess.
pub fn pcg(
    domain: &TruncatedDomain,
    shift: &[f64],
    precond: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = domain.n_interior();
    let mut r = vec![0.0; n];
    apply_shifted(domain, shift, x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut res = sup(&r);
    if res <= tol {
        return Ok(CgStats {
            iterations: 0,
            residual_sup: res,
        });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply_shifted(domain, shift, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(KwError::LinearSolver {
                message: "conjugate gradients lost positive definiteness".into(),
                residual: res,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = sup(&r);
        if res <= tol {
            apply_shifted(domain, shift, x, &mut ap);
            let true_res = (0..n).fold(0.0f64, |m, i| m.max((b[i] - ap[i]).abs()));
            if true_res <= tol {
                return Ok(CgStats {
                    iterations: it,
                    residual_sup: true_res,
                });
            }
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        precond(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(KwError::LinearSolver {
        message: format!("conjugate gradients did not reach {tol:e} in {max_iter} iterations"),
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_cholesky_tridiagonal() {
        let n = 6;
        let diag = vec![2.0; n];
        let lower: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| if i > 0 { vec![(i - 1, -1.0)] } else { vec![] })
            .collect();
        let ch = BandCholesky::factor(n, &diag, &lower).unwrap();
        let mut b = vec![1.0; n];
        ch.solve(&mut b);
        // exact solution of the 1D Poisson problem with unit load
        for (i, v) in b.iter().enumerate() {
            let k = (i + 1) as f64;
            assert!((v - k * (n as f64 + 1.0 - k) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn multigrid_pcg_matches_cholesky() {
        let d = TruncatedDomain::new(60, crate::lattice_core::NormKind::EuclideanBall).unwrap();
        let n = d.n_interior();
        let shift: Vec<f64> = d
            .interior()
            .iter()
            .map(|p| 5.0 / (1.0 + p.norm_sq() as f64))
            .collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        let ch = factor_shifted(&d, &shift).unwrap();
        let mut exact = b.clone();
        ch.solve(&mut exact);
        let mg = Multigrid::new(&d, &shift).unwrap();
        let mut x = vec![0.0; n];
        let stats = pcg(&d, &shift, &|r, z| mg.precondition(r, z), &b, &mut x, 1e-10, 200).unwrap();
        assert!(stats.iterations < 40, "{stats:?}");
        for (a, e) in x.iter().zip(&exact) {
            assert!((a - e).abs() < 1e-7);
        }
    }
}
