//! The lattice Green's function `Phi0`, the solution of `-Delta Phi0 = delta_0`
//! with `Phi0(0) = 0` and logarithmic growth.
//!
//! Values near the origin come from a one-dimensional reduction of the
//! Fourier integral
//!
//! ```text
//! Phi0(m, n) = -(1/2pi) * int_0^pi (1 - cos(m t) e^{-|n| s(t)}) / sinh(s(t)) dt,
//! s(t) = 2 asinh(sin(t/2)),
//! ```
//!
//! evaluated by composite Gauss-Legendre quadrature, and are cross-checked
//! against the classical recurrence seeded on the diagonal. Far points use
//! `-(1/2pi) ln|x| - C` with `C` measured from the table.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{argument, KwError, Result};
use crate::lattice_core::LatticePoint;
use crate::numeric::{gauss_legendre, NeumaierSum};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Classical additive constant of the potential kernel, `(2 gamma_E + 3 ln 2) / (4 pi)`.
pub fn classical_constant() -> f64 {
    (2.0 * EULER_GAMMA + 3.0 * 2f64.ln()) / (4.0 * PI)
}

/// The constant `gamma0 = (gamma_E + ln(2)/2) / pi` appearing in the stated
/// asymptotic law `-(1/2pi) ln|x| - gamma0/2`.
pub fn stated_gamma0() -> f64 {
    (EULER_GAMMA + 0.5 * 2f64.ln()) / PI
}

/// Default number of one-dimensional quadrature nodes.
pub const DEFAULT_QUADRATURE_POINTS: usize = 2048;

/// Radius inside which the recurrence and the quadrature are compared.
const RECURRENCE_RADIUS: usize = 8;
const NODES_PER_PANEL: usize = 16;
const SEAM_TARGET: f64 = 1e-6;

/// Precomputed Green's function values with an asymptotic continuation.
#[derive(Clone, Debug)]
pub struct GreensTable {
    exact_radius: usize,
    /// Octant values `Phi0(m, n)` for `0 <= n <= m <= exact_radius`.
    octant: Vec<f64>,
    gamma0: f64,
    fitted_constant: f64,
    crossover_radius: usize,
    diagnostics: GreensDiagnostics,
}

/// Build-time consistency measurements of a table.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GreensDiagnostics {
    pub quadrature_points: usize,
    /// Largest `|quadrature - recurrence|` inside the recurrence radius.
    pub recurrence_discrepancy: f64,
    /// Largest `|-Delta Phi0 - delta_0|` over `|x|_inf <= exact_radius - 1`.
    pub laplacian_residual: f64,
    /// Largest `|exact - asymptotic|` for `|x|` within 1 of the crossover radius.
    pub seam_error: f64,
    pub seam_within_target: bool,
    /// Largest `|Phi0 + ln|x|/2pi + C| * |x|` over the fit annulus.
    pub max_residual_times_r: f64,
    pub fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct GreensMeta {
    exact_radius: usize,
    crossover_radius: usize,
    fitted_constant: f64,
    gamma0: f64,
    diagnostics: GreensDiagnostics,
}

#[inline]
fn octant_index(m: usize, n: usize) -> usize {
    m * (m + 1) / 2 + n
}

fn octant_len(radius: usize) -> usize {
    (radius + 1) * (radius + 2) / 2
}

/// Panel layout on `[0, pi]` with geometric grading towards `t = 0`.
fn quadrature_rule(total_points: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = total_points.div_ceil(NODES_PER_PANEL).max(8);
    let graded = (panels / 4).min(8);
    let uniform = panels - graded;
    let h = PI / (uniform + 1) as f64;
    let mut breaks = vec![0.0];
    for j in (0..graded).rev() {
        breaks.push(h / 2f64.powi(j as i32));
    }
    for j in 1..=uniform {
        breaks.push(h + (PI - h) * j as f64 / uniform as f64);
    }
    let (gx, gw) = gauss_legendre(NODES_PER_PANEL);
    let mut nodes = Vec::with_capacity(panels * NODES_PER_PANEL);
    let mut weights = Vec::with_capacity(panels * NODES_PER_PANEL);
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        for (x, wt) in gx.iter().zip(&gw) {
            nodes.push(a + half * (x + 1.0));
            weights.push(half * wt);
        }
    }
    (nodes, weights)
}

/// Octant values by quadrature of the one-dimensional reduction.
fn quadrature_octant(radius: usize, quadrature_points: usize) -> (Vec<f64>, usize) {
    let (theta, w) = quadrature_rule(quadrature_points);
    let k = theta.len();
    let s: Vec<f64> = theta.iter().map(|t| 2.0 * (t / 2.0).sin().asinh()).collect();
    let wk: Vec<f64> = w.iter().zip(&s).map(|(w, s)| w / s.sinh()).collect();
    // we[n][k] = wk * exp(-n s_k)
    let mut we = vec![0.0; (radius + 1) * k];
    for n in 0..=radius {
        for j in 0..k {
            we[n * k + j] = wk[j] * (-(n as f64) * s[j]).exp();
        }
    }
    let head: Vec<f64> = (0..=radius)
        .map(|n| {
            let mut acc = NeumaierSum::new();
            for j in 0..k {
                acc.add(-wk[j] * (-(n as f64) * s[j]).exp_m1());
            }
            acc.value()
        })
        .collect();
    let mut octant = vec![0.0; octant_len(radius)];
    let mut sin2 = vec![0.0; k];
    for m in 0..=radius {
        for j in 0..k {
            let h = (0.5 * m as f64 * theta[j]).sin();
            sin2[j] = 2.0 * h * h;
        }
        for n in 0..=m {
            let row = &we[n * k..(n + 1) * k];
            let dot: f64 = sin2.iter().zip(row).map(|(a, b)| a * b).sum();
            octant[octant_index(m, n)] = -(head[n] + dot) / (2.0 * PI);
        }
    }
    (octant, k)
}

/// Octant values inside `radius` from the diagonal closed form and the
/// defining equation.
pub fn recurrence_octant(radius: usize) -> Vec<f64> {
    let mut oct = vec![0.0; octant_len(radius + 1)];
    let get = |oct: &Vec<f64>, m: i64, n: i64| -> f64 {
        let (a, b) = (m.unsigned_abs() as usize, n.unsigned_abs() as usize);
        let (a, b) = if a >= b { (a, b) } else { (b, a) };
        oct[octant_index(a, b)]
    };
    let mut diag = 0.0;
    for n in 1..=radius + 1 {
        diag += 1.0 / (2 * n - 1) as f64;
        oct[octant_index(n, n)] = -diag / PI;
    }
    oct[octant_index(1, 0)] = -0.25;
    for n in 1..radius {
        let ni = n as i64;
        let v = 2.0 * get(&oct, ni, ni) - get(&oct, ni, ni - 1);
        oct[octant_index(n + 1, n)] = v;
        for k in (0..n).rev() {
            let ki = k as i64;
            let v = 4.0 * get(&oct, ni, ki)
                - get(&oct, ni - 1, ki)
                - get(&oct, ni, ki + 1)
                - get(&oct, ni, ki - 1);
            oct[octant_index(n + 1, k)] = v;
        }
    }
    oct.truncate(octant_len(radius));
    oct
}

/// Builds the Green's function table for `|x|_inf <= exact_radius`.
pub fn build_greens_table(exact_radius: usize, quadrature_points: usize) -> Result<GreensTable> {
    if exact_radius < RECURRENCE_RADIUS {
        return argument(format!(
            "exact_radius must be at least {RECURRENCE_RADIUS}, got {exact_radius}"
        ));
    }
    if quadrature_points < 8 * NODES_PER_PANEL {
        return argument(format!(
            "quadrature_points must be at least {}, got {quadrature_points}",
            8 * NODES_PER_PANEL
        ));
    }
    let (mut octant, nodes) = quadrature_octant(exact_radius, quadrature_points);

    let rec = recurrence_octant(RECURRENCE_RADIUS);
    let mut recurrence_discrepancy: f64 = 0.0;
    for m in 0..=RECURRENCE_RADIUS {
        for n in 0..=m {
            let i = octant_index(m, n);
            recurrence_discrepancy = recurrence_discrepancy.max((octant[i] - rec[i]).abs());
        }
    }
    if recurrence_discrepancy > 1e-8 {
        return Err(KwError::Construction(format!(
            "quadrature and recurrence disagree by {recurrence_discrepancy:e} inside radius {RECURRENCE_RADIUS}"
        )));
    }
    // The defining equation at the origin and the fourfold symmetry fix this value.
    octant[octant_index(1, 0)] = -0.25;
    octant[0] = 0.0;

    let mut table = GreensTable {
        exact_radius,
        octant,
        gamma0: stated_gamma0(),
        fitted_constant: 0.0,
        crossover_radius: exact_radius - 1,
        diagnostics: GreensDiagnostics {
            quadrature_points: nodes,
            recurrence_discrepancy,
            laplacian_residual: 0.0,
            seam_error: 0.0,
            seam_within_target: false,
            max_residual_times_r: 0.0,
            fingerprint: String::new(),
        },
    };
    table.validate_shape()?;
    table.diagnostics.laplacian_residual = table.laplacian_residual();
    if table.diagnostics.laplacian_residual > 1e-8 {
        return Err(KwError::Construction(format!(
            "defining equation residual {:e} exceeds 1e-8; increase quadrature_points",
            table.diagnostics.laplacian_residual
        )));
    }
    let (c, rr) = table.fit_annulus();
    table.fitted_constant = c;
    table.diagnostics.max_residual_times_r = rr;
    table.diagnostics.seam_error = table.seam_error();
    table.diagnostics.seam_within_target = table.diagnostics.seam_error < SEAM_TARGET;
    table.diagnostics.fingerprint = table.compute_fingerprint();
    Ok(table)
}

impl GreensTable {
    pub fn exact_radius(&self) -> usize {
        self.exact_radius
    }

    pub fn crossover_radius(&self) -> usize {
        self.crossover_radius
    }

    /// The stated constant `gamma0`; the asymptotic branch does not use it.
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Additive constant `C` in `Phi0(x) ~ -(1/2pi) ln|x| - C`, measured at build time.
    pub fn fitted_constant(&self) -> f64 {
        self.fitted_constant
    }

    pub fn diagnostics(&self) -> &GreensDiagnostics {
        &self.diagnostics
    }

    pub fn fingerprint(&self) -> &str {
        &self.diagnostics.fingerprint
    }

    /// Table value for `|x|_inf <= exact_radius`.
    #[inline]
    pub fn exact(&self, x1: i64, x2: i64) -> Option<f64> {
        let (a, b) = (x1.unsigned_abs() as usize, x2.unsigned_abs() as usize);
        let (m, n) = if a >= b { (a, b) } else { (b, a) };
        (m <= self.exact_radius).then(|| self.octant[octant_index(m, n)])
    }

    /// Asymptotic branch `-(1/2pi) ln|x| - C`.
    #[inline]
    pub fn asymptotic(&self, r: f64) -> f64 {
        -r.ln() / (2.0 * PI) - self.fitted_constant
    }

    /// `Phi0(x)`: table value inside the crossover radius, asymptotic law outside.
    #[inline]
    pub fn eval(&self, x1: i64, x2: i64) -> f64 {
        let (a, b) = (x1.unsigned_abs() as usize, x2.unsigned_abs() as usize);
        let (m, n) = if a >= b { (a, b) } else { (b, a) };
        if m <= self.crossover_radius {
            self.octant[octant_index(m, n)]
        } else {
            self.asymptotic(((a * a + b * b) as f64).sqrt())
        }
    }

    fn validate_shape(&self) -> Result<()> {
        for m in 1..=self.exact_radius {
            for n in 0..=m {
                let v = self.octant[octant_index(m, n)];
                if !(v < 0.0) {
                    return Err(KwError::Construction(format!(
                        "table value at ({m}, {n}) is not negative: {v}"
                    )));
                }
            }
            if m < self.exact_radius
                && !(self.octant[octant_index(m + 1, 0)] < self.octant[octant_index(m, 0)])
            {
                return Err(KwError::Construction(format!(
                    "axis values are not decreasing at ({m}, 0)"
                )));
            }
        }
        Ok(())
    }

    fn laplacian_residual(&self) -> f64 {
        let r = self.exact_radius as i64 - 1;
        let mut worst: f64 = 0.0;
        for m in 0..=r {
            for n in 0..=m {
                let c = self.exact(m, n).unwrap();
                let sum = self.exact(m + 1, n).unwrap()
                    + self.exact(m - 1, n).unwrap()
                    + self.exact(m, n + 1).unwrap()
                    + self.exact(m, n - 1).unwrap();
                let delta = if m == 0 && n == 0 { 1.0 } else { 0.0 };
                worst = worst.max((4.0 * c - sum - delta).abs());
            }
        }
        worst
    }

    /// Mean of `-Phi0 - ln|x|/2pi` and the largest scaled residual over
    /// `R/2 <= |x| <= R`.
    fn fit_annulus(&self) -> (f64, f64) {
        let r = self.exact_radius as i64;
        let (lo, hi) = ((r * r) as f64 / 4.0, (r * r) as f64);
        let mut acc = NeumaierSum::new();
        let mut count = 0usize;
        let mut pts = Vec::new();
        for x1 in -r..=r {
            for x2 in -r..=r {
                let q = (x1 * x1 + x2 * x2) as f64;
                if q >= lo && q <= hi {
                    let rad = q.sqrt();
                    let d = -self.exact(x1, x2).unwrap() - rad.ln() / (2.0 * PI);
                    acc.add(d);
                    count += 1;
                    pts.push((rad, d));
                }
            }
        }
        let c = acc.value() / count as f64;
        let rr = pts
            .iter()
            .map(|(rad, d)| (d - c).abs() * rad)
            .fold(0.0, f64::max);
        (c, rr)
    }

    fn seam_error(&self) -> f64 {
        let rc = self.crossover_radius as f64;
        let r = self.exact_radius as i64;
        let mut worst: f64 = 0.0;
        for x1 in 0..=r {
            for x2 in 0..=x1 {
                let rad = ((x1 * x1 + x2 * x2) as f64).sqrt();
                if (rad - rc).abs() <= 1.0 {
                    let e = self.exact(x1, x2).unwrap();
                    worst = worst.max((e - self.asymptotic(rad)).abs());
                }
            }
        }
        worst
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.exact_radius as u64).to_le_bytes());
        h.update((self.diagnostics.quadrature_points as u64).to_le_bytes());
        for v in &self.octant {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Writes every table point as `x1,x2,phi0` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x1", "x2", "phi0"])?;
        let r = self.exact_radius as i64;
        for x1 in -r..=r {
            for x2 in -r..=r {
                let v = self.exact(x1, x2).unwrap();
                w.write_record([x1.to_string(), x2.to_string(), format!("{v:.17e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn meta(&self) -> GreensMeta {
        GreensMeta {
            exact_radius: self.exact_radius,
            crossover_radius: self.crossover_radius,
            fitted_constant: self.fitted_constant,
            gamma0: self.gamma0,
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Metadata as JSON: radius, crossover, constants and diagnostics.
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::to_value(self.meta()).expect("metadata serializes")
    }

    /// Writes the octant as little-endian `f64` plus a JSON metadata file.
    pub fn save(&self, bin_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.octant.len() * 8);
        for v in &self.octant {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(bin_path, &bytes)?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        write_atomic(&bin_path.with_extension("json"), meta.as_bytes())?;
        Ok(())
    }

    /// Loads a table written by [`GreensTable::save`], verifying its fingerprint.
    pub fn load(bin_path: &Path) -> Result<Self> {
        let meta: GreensMeta =
            serde_json::from_str(&fs::read_to_string(bin_path.with_extension("json"))?)?;
        let bytes = fs::read(bin_path)?;
        if bytes.len() != octant_len(meta.exact_radius) * 8 {
            return Err(KwError::Consistency(format!(
                "cached table {} has the wrong size",
                bin_path.display()
            )));
        }
        let octant = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let table = GreensTable {
            exact_radius: meta.exact_radius,
            octant,
            gamma0: meta.gamma0,
            fitted_constant: meta.fitted_constant,
            crossover_radius: meta.crossover_radius,
            diagnostics: meta.diagnostics,
        };
        if table.compute_fingerprint() != table.diagnostics.fingerprint {
            return Err(KwError::Consistency(format!(
                "cached table {} fails its fingerprint check",
                bin_path.display()
            )));
        }
        Ok(table)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Result of [`asymptotic_fit`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AsymptoticFit {
    pub constant: f64,
    pub max_residual_times_r: f64,
}

/// Additive constant measured on the annulus `R/2 <= |x| <= R` and the
/// largest value of `|Phi0(x) + ln|x|/2pi + C| * |x|` there.
pub fn asymptotic_fit(table: &GreensTable) -> Result<AsymptoticFit> {
    if table.exact_radius < 64 {
        return argument("asymptotic fit needs exact_radius >= 64");
    }
    let (constant, max_residual_times_r) = table.fit_annulus();
    Ok(AsymptoticFit {
        constant,
        max_residual_times_r,
    })
}

/// `Phi0(x)` through the table (exact inside the crossover, asymptotic outside).
pub fn eval_phi0(table: &GreensTable, x: LatticePoint) -> f64 {
    table.eval(x.x1, x.x2)
}

/// Smallest `c1 >= 1` with `|Phi0 + ln(1+|x|)/2pi| <= c1` and
/// `-c1 ln(1+|x|) <= Phi0 <= -ln(1+|x|)/c1` at every stored `x != 0`.
pub fn estimate_c1(table: &GreensTable) -> f64 {
    let mut c1: f64 = 1.0;
    for m in 1..=table.exact_radius {
        for n in 0..=m {
            let phi = table.octant[octant_index(m, n)];
            let l = (1.0 + ((m * m + n * n) as f64).sqrt()).ln();
            c1 = c1
                .max((phi + l / (2.0 * PI)).abs())
                .max(-phi / l)
                .max(l / -phi);
        }
    }
    c1
}

/// Environment variable that overrides the table cache directory.
pub const CACHE_ENV: &str = "KW_LATTICE_CACHE";

/// Cache directory: `$KW_LATTICE_CACHE`, else `kw-lattice-cache` under the
/// system temporary directory.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("kw-lattice-cache"))
}

pub fn cache_path(dir: &Path, exact_radius: usize, quadrature_points: usize) -> PathBuf {
    dir.join(format!("phi0_r{exact_radius}_q{quadrature_points}.bin"))
}

struct CacheLock(PathBuf);

impl CacheLock {
    fn acquire(path: PathBuf) -> Result<Self> {
        let start = Instant::now();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Self(path));
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let stale = fs::metadata(&path)
                        .and_then(|m| m.modified())
                        .map(|t| t.elapsed().unwrap_or_default() > Duration::from_secs(600))
                        .unwrap_or(false);
                    if stale || start.elapsed() > Duration::from_secs(900) {
                        let _ = fs::remove_file(&path);
                    } else {
                        std::thread::sleep(Duration::from_millis(100));
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Loads a cached table or builds and stores it, serialized by a lock file.
pub fn load_or_build(dir: &Path, exact_radius: usize, quadrature_points: usize) -> Result<GreensTable> {
    fs::create_dir_all(dir)?;
    let path = cache_path(dir, exact_radius, quadrature_points);
    if let Ok(t) = GreensTable::load(&path) {
        return Ok(t);
    }
    let _lock = CacheLock::acquire(path.with_extension("lock"))?;
    if let Ok(t) = GreensTable::load(&path) {
        return Ok(t);
    }
    let table = build_greens_table(exact_radius, quadrature_points)?;
    table.save(&path)?;
    Ok(table)
}
