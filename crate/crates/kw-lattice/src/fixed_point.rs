//! Damped Picard iteration with step halving and an Anderson fallback.

use serde::{Deserialize, Serialize};

use crate::error::{KwError, Result};

/// Controls for the nonlinear fixed-point loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterationOptions {
    /// Stop when the weighted update norm falls below this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial Picard damping `omega` in `v <- (1-omega) v + omega T(v)`.
    pub damping: f64,
    /// Steps without improvement before switching strategy or giving up.
    pub patience: usize,
    pub anderson_depth: usize,
    pub use_anderson: bool,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 5000,
            damping: 0.5,
            patience: 30,
            anderson_depth: 3,
            use_anderson: true,
        }
    }
}

impl IterationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.damping > 0.0 && self.damping <= 1.0) || self.max_iter == 0 {
            return Err(KwError::Argument(
                "iteration options need tol > 0, 0 < damping <= 1 and max_iter > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FixedPointOutcome {
    pub state: Vec<f64>,
    pub iterations: usize,
    pub final_update_norm: f64,
    pub history: Vec<f64>,
    pub used_anderson: bool,
    pub final_damping: f64,
}

/// Weighted sup norm `max_i |x_i| w_i`.
pub fn weighted_sup_norm(x: &[f64], weights: &[f64]) -> f64 {
    x.iter()
        .zip(weights)
        .map(|(a, w)| a.abs() * w)
        .fold(0.0, f64::max)
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

struct Anderson {
    depth: usize,
    xs: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
}

impl Anderson {
    fn step(&mut self, x: &[f64], f: &[f64], weights: &[f64], mixing: f64) -> Vec<f64> {
        self.xs.push(x.to_vec());
        self.fs.push(f.to_vec());
        if self.xs.len() > self.depth + 1 {
            self.xs.remove(0);
            self.fs.remove(0);
        }
        let m = self.xs.len() - 1;
        let plain: Vec<f64> = x.iter().zip(f).map(|(a, b)| a + mixing * b).collect();
        if m == 0 {
            return plain;
        }
        let df: Vec<Vec<f64>> = (0..m)
            .map(|i| self.fs[i + 1].iter().zip(&self.fs[i]).map(|(a, b)| a - b).collect())
            .collect();
        let dx: Vec<Vec<f64>> = (0..m)
            .map(|i| self.xs[i + 1].iter().zip(&self.xs[i]).map(|(a, b)| a - b).collect())
            .collect();
        let w2: Vec<f64> = weights.iter().map(|w| w * w).collect();
        let dot = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(&w2).map(|((x, y), w)| x * y * w).sum()
        };
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            for j in 0..m {
                gram[i][j] = dot(&df[i], &df[j]);
            }
            rhs[i] = dot(&df[i], f);
        }
        let trace: f64 = (0..m).map(|i| gram[i][i]).sum();
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] += 1e-12 * trace.max(f64::MIN_POSITIVE);
        }
        match solve_small(gram, rhs) {
            Some(gamma) => {
                let mut out = plain;
                for (i, g) in gamma.iter().enumerate() {
                    for k in 0..out.len() {
                        out[k] -= g * (dx[i][k] + mixing * df[i][k]);
                    }
                }
                out
            }
            None => plain,
        }
    }
}

/// Iterates `x <- x + omega (T(x) - x)` until the weighted update norm is below
/// `stop_tol`. The damping halves whenever the update norm grows; after
/// `patience` steps without a new best norm the loop switches to Anderson
/// mixing (if enabled) and otherwise reports nonconvergence.
pub fn iterate<F>(
    x0: Vec<f64>,
    weights: &[f64],
    mut map: F,
    opts: &IterationOptions,
    stop_tol: f64,
) -> Result<FixedPointOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    opts.validate()?;
    let mut x = x0;
    let mut omega = opts.damping;
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut prev = f64::INFINITY;
    let mut anderson: Option<Anderson> = None;
    for k in 1..=opts.max_iter {
        let tx = map(&x)?;
        let f: Vec<f64> = tx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let res = weighted_sup_norm(&f, weights);
        history.push(res);
        if !res.is_finite() {
            return Err(KwError::NonConvergence {
                iterations: k,
                last_update: res,
                history,
            });
        }
        if res < stop_tol {
            return Ok(FixedPointOutcome {
                state: x,
                iterations: k,
                final_update_norm: res,
                history,
                used_anderson: anderson.is_some(),
                final_damping: omega,
            });
        }
        if res < best * (1.0 - 1e-3) {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
        }
        match anderson.as_mut() {
            None => {
                if res > 1.05 * prev {
                    omega = (omega * 0.5).max(1.0 / 64.0);
                }
                if since_best >= opts.patience {
                    if !opts.use_anderson {
                        return Err(KwError::NonConvergence {
                            iterations: k,
                            last_update: res,
                            history,
                        });
                    }
                    anderson = Some(Anderson {
                        depth: opts.anderson_depth.max(1),
                        xs: Vec::new(),
                        fs: Vec::new(),
                    });
                    since_best = 0;
                    best = res;
                }
                for (xi, fi) in x.iter_mut().zip(&f) {
                    *xi += omega * fi;
                }
            }
            Some(acc) => {
                if since_best >= opts.patience {
                    return Err(KwError::NonConvergence {
                        iterations: k,
                        last_update: res,
                        history,
                    });
                }
                x = acc.step(&x, &f, weights, omega);
            }
        }
        prev = res;
    }
    Err(KwError::NonConvergence {
        iterations: opts.max_iter,
        last_update: *history.last().unwrap_or(&f64::INFINITY),
        history,
    })
}
