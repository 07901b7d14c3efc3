//! Lattice geometry, grid functions, weighted norms, the discrete Laplacian
//! and tail-sum bounds.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Sub};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{argument, KwError, Result};

/// A vertex of the integer lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub x1: i64,
    pub x2: i64,
}

impl LatticePoint {
    pub const ORIGIN: LatticePoint = LatticePoint { x1: 0, x2: 0 };

    pub const fn new(x1: i64, x2: i64) -> Self {
        Self { x1, x2 }
    }

    pub fn norm_sq(&self) -> i64 {
        self.x1 * self.x1 + self.x2 * self.x2
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    /// Taxicab norm `|x1| + |x2|`.
    pub fn taxicab(&self) -> i64 {
        self.x1.abs() + self.x2.abs()
    }

    pub fn sup_norm(&self) -> i64 {
        self.x1.abs().max(self.x2.abs())
    }

    pub fn is_origin(&self) -> bool {
        self.x1 == 0 && self.x2 == 0
    }

    /// The four lattice neighbours in the order east, west, north, south.
    pub fn neighbors(&self) -> [LatticePoint; 4] {
        [
            LatticePoint::new(self.x1 + 1, self.x2),
            LatticePoint::new(self.x1 - 1, self.x2),
            LatticePoint::new(self.x1, self.x2 + 1),
            LatticePoint::new(self.x1, self.x2 - 1),
        ]
    }
}

impl Add for LatticePoint {
    type Output = LatticePoint;
    fn add(self, rhs: Self) -> Self {
        LatticePoint::new(self.x1 + rhs.x1, self.x2 + rhs.x2)
    }
}

impl Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(self, rhs: Self) -> Self {
        LatticePoint::new(self.x1 - rhs.x1, self.x2 - rhs.x2)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x1, self.x2)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    EuclideanBall,
    TaxicabBall,
}

impl NormKind {
    pub fn contains(&self, p: LatticePoint, radius: u32) -> bool {
        let r = radius as i64;
        match self {
            NormKind::EuclideanBall => p.norm_sq() <= r * r,
            NormKind::TaxicabBall => p.taxicab() <= r,
        }
    }
}

const NO_SLOT: u32 = u32::MAX;

/// A finite ball of the lattice together with its one-point boundary layer.
///
/// Points are stored in slots: interior points first, then boundary points,
/// each group in lexicographic order of `(x1, x2)`.
#[derive(Debug)]
pub struct TruncatedDomain {
    radius: u32,
    norm_kind: NormKind,
    points: Vec<LatticePoint>,
    n_interior: usize,
    index: Vec<u32>,
    neighbors: Vec<[u32; 4]>,
}

impl TruncatedDomain {
    pub fn new(radius: u32, norm_kind: NormKind) -> Result<Self> {
        if radius == 0 {
            return argument("domain radius must be positive");
        }
        let r = radius as i64;
        let mut interior = Vec::new();
        for x1 in -r..=r {
            for x2 in -r..=r {
                let p = LatticePoint::new(x1, x2);
                if norm_kind.contains(p, radius) {
                    interior.push(p);
                }
            }
        }
        let mut boundary = Vec::new();
        for x1 in -r - 1..=r + 1 {
            for x2 in -r - 1..=r + 1 {
                let p = LatticePoint::new(x1, x2);
                if !norm_kind.contains(p, radius)
                    && p.neighbors().iter().any(|q| norm_kind.contains(*q, radius))
                {
                    boundary.push(p);
                }
            }
        }
        let n_interior = interior.len();
        let mut points = interior;
        points.extend(boundary);
        let side = (2 * radius + 3) as usize;
        let mut index = vec![NO_SLOT; side * side];
        let offset = r + 1;
        for (slot, p) in points.iter().enumerate() {
            let i = (p.x1 + offset) as usize * side + (p.x2 + offset) as usize;
            index[i] = slot as u32;
        }
        let mut neighbors = Vec::with_capacity(n_interior);
        for p in &points[..n_interior] {
            let mut nb = [0u32; 4];
            for (k, q) in p.neighbors().iter().enumerate() {
                let i = (q.x1 + offset) as usize * side + (q.x2 + offset) as usize;
                nb[k] = index[i];
            }
            neighbors.push(nb);
        }
        Ok(Self {
            radius,
            norm_kind,
            points,
            n_interior,
            index,
            neighbors,
        })
    }

    /// Euclidean ball of the given radius, wrapped for sharing.
    pub fn euclidean(radius: u32) -> Result<Arc<Self>> {
        Ok(Arc::new(Self::new(radius, NormKind::EuclideanBall)?))
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    /// All stored points (interior then boundary).
    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn interior(&self) -> &[LatticePoint] {
        &self.points[..self.n_interior]
    }

    pub fn boundary(&self) -> &[LatticePoint] {
        &self.points[self.n_interior..]
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Half-width of the square grid enclosing interior and boundary.
    pub fn extent(&self) -> i64 {
        self.radius as i64 + 1
    }

    pub fn slot(&self, p: LatticePoint) -> Option<usize> {
        let e = self.extent();
        if p.x1.abs() > e || p.x2.abs() > e {
            return None;
        }
        let side = (2 * e + 1) as usize;
        let s = self.index[(p.x1 + e) as usize * side + (p.x2 + e) as usize];
        (s != NO_SLOT).then_some(s as usize)
    }

    pub fn is_interior(&self, p: LatticePoint) -> bool {
        self.slot(p).is_some_and(|s| s < self.n_interior)
    }

    pub fn is_interior_slot(&self, slot: usize) -> bool {
        slot < self.n_interior
    }

    /// Slots of the four neighbours of an interior slot.
    #[inline]
    pub fn neighbor_slots(&self, interior_slot: usize) -> [usize; 4] {
        let nb = self.neighbors[interior_slot];
        [nb[0] as usize, nb[1] as usize, nb[2] as usize, nb[3] as usize]
    }

    pub fn origin_slot(&self) -> usize {
        self.slot(LatticePoint::ORIGIN).expect("origin is always interior")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    /// `-a ln|x| + d`
    Log,
    /// `-a ln|x| - a ln ln|x| + d`
    LogDoubleLog,
}

/// Analytic continuation of a grid function beyond its domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub slope_a: f64,
    pub constant_d: f64,
    pub kind: TailKind,
}

impl TailModel {
    pub fn eval(&self, r: f64) -> f64 {
        let l = r.ln();
        match self.kind {
            TailKind::Log => -self.slope_a * l + self.constant_d,
            TailKind::LogDoubleLog => -self.slope_a * (l + l.ln()) + self.constant_d,
        }
    }
}

/// Real values on the stored points of a domain, optionally with a tail model.
#[derive(Clone, Debug)]
pub struct GridFunction {
    domain: Arc<TruncatedDomain>,
    values: Vec<f64>,
    tail: Option<TailModel>,
}

#[derive(Serialize, Deserialize)]
struct GridSidecar {
    radius: u32,
    norm_kind: NormKind,
    tail: Option<TailModel>,
}

impl GridFunction {
    pub fn new(domain: Arc<TruncatedDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return argument(format!(
                "expected {} values, got {}",
                domain.len(),
                values.len()
            ));
        }
        Ok(Self {
            domain,
            values,
            tail: None,
        })
    }

    pub fn zeros(domain: Arc<TruncatedDomain>) -> Self {
        let n = domain.len();
        Self {
            domain,
            values: vec![0.0; n],
            tail: None,
        }
    }

    pub fn from_fn(domain: Arc<TruncatedDomain>, f: impl Fn(LatticePoint) -> f64) -> Self {
        let values = domain.points().iter().map(|&p| f(p)).collect();
        Self {
            domain,
            values,
            tail: None,
        }
    }

    pub fn with_tail(mut self, tail: TailModel) -> Self {
        self.tail = Some(tail);
        self
    }

    pub fn domain(&self) -> &Arc<TruncatedDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interior_values(&self) -> &[f64] {
        &self.values[..self.domain.n_interior()]
    }

    pub fn tail(&self) -> Option<&TailModel> {
        self.tail.as_ref()
    }

    /// Stored value, if `p` is an interior or boundary point.
    pub fn get(&self, p: LatticePoint) -> Option<f64> {
        self.domain.slot(p).map(|s| self.values[s])
    }

    /// Stored value, or the tail model for points beyond the domain.
    pub fn eval(&self, p: LatticePoint) -> Result<f64> {
        if let Some(v) = self.get(p) {
            return Ok(v);
        }
        match &self.tail {
            Some(t) if p.norm() > self.domain.radius() as f64 => Ok(t.eval(p.norm())),
            _ => Err(KwError::Domain(format!("{p} is outside the stored domain"))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            domain: self.domain.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            tail: None,
        }
    }

    /// Writes `x1,x2,value` rows plus a JSON sidecar next to `csv_path`.
    pub fn write_csv(&self, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        w.write_record(["x1", "x2", "value"])?;
        for (p, v) in self.domain.points().iter().zip(&self.values) {
            w.write_record([p.x1.to_string(), p.x2.to_string(), format!("{v:.17e}")])?;
        }
        w.flush()?;
        let sidecar = GridSidecar {
            radius: self.domain.radius(),
            norm_kind: self.domain.norm_kind(),
            tail: self.tail,
        };
        let mut f = std::fs::File::create(csv_path.with_extension("json"))?;
        f.write_all(serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
        Ok(())
    }

    /// Reads a grid function written by [`GridFunction::write_csv`].
    pub fn read_csv(csv_path: &Path) -> Result<Self> {
        let mut s = String::new();
        std::fs::File::open(csv_path.with_extension("json"))?.read_to_string(&mut s)?;
        let sidecar: GridSidecar = serde_json::from_str(&s)?;
        let domain = Arc::new(TruncatedDomain::new(sidecar.radius, sidecar.norm_kind)?);
        let mut values = vec![f64::NAN; domain.len()];
        let mut r = csv::Reader::from_path(csv_path)?;
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| KwError::Argument(format!("malformed row {rec:?}")))
            };
            let p = LatticePoint::new(parse(0)? as i64, parse(1)? as i64);
            let slot = domain
                .slot(p)
                .ok_or_else(|| KwError::Domain(format!("{p} not in domain")))?;
            values[slot] = parse(2)?;
        }
        if values.iter().any(|v| v.is_nan()) {
            return argument("grid file does not cover every stored point");
        }
        let mut g = GridFunction::new(domain, values)?;
        g.tail = sidecar.tail;
        Ok(g)
    }
}

/// Discrete Laplacian `sum_{y~x} (f(y) - f(x))` at an interior point.
pub fn laplacian(f: &GridFunction, x: LatticePoint) -> Result<f64> {
    let d = f.domain();
    match d.slot(x) {
        Some(s) if d.is_interior_slot(s) => Ok(laplacian_at_slot(d, f.values(), s)),
        _ => Err(KwError::Domain(format!(
            "{x} is not an interior point of the domain"
        ))),
    }
}

#[inline]
pub(crate) fn laplacian_at_slot(d: &TruncatedDomain, values: &[f64], slot: usize) -> f64 {
    let c = values[slot];
    d.neighbor_slots(slot)
        .iter()
        .map(|&n| values[n] - c)
        .sum()
}

/// Laplacian at every interior slot.
pub fn laplacian_interior(d: &TruncatedDomain, values: &[f64]) -> Vec<f64> {
    (0..d.n_interior())
        .map(|s| laplacian_at_slot(d, values, s))
        .collect()
}

/// `sup_x |f(x)| (1+|x|)^sigma` over the stored points (tail excluded).
pub fn weighted_norm(f: &GridFunction, sigma: f64) -> f64 {
    weighted_sup(f.domain().points(), f.values(), sigma)
}

pub(crate) fn weighted_sup(points: &[LatticePoint], values: &[f64], sigma: f64) -> f64 {
    points
        .iter()
        .zip(values)
        .map(|(p, v)| v.abs() * (1.0 + p.norm()).powf(sigma))
        .fold(0.0, f64::max)
}

/// Checks that the weighted norm is monotone in the weight exponent.
pub fn norm_ordering_check(f: &GridFunction, sigma1: f64, sigma2: f64) -> Result<bool> {
    if sigma1 <= sigma2 {
        return argument("norm ordering requires sigma1 > sigma2");
    }
    Ok(weighted_norm(f, sigma2) <= weighted_norm(f, sigma1))
}

/// Upper bound for `sum_{|x| >= r} |x|^{-sigma} (ln|x|)^{-rho}`.
pub fn tail_bound(sigma: f64, rho: f64, r: f64) -> Result<f64> {
    if !(sigma > 2.0) {
        return argument(format!("tail bound needs sigma > 2, got {sigma}"));
    }
    if rho == -1.0 {
        let threshold = 4.0 * (2.0 / (sigma - 2.0)).exp();
        if r < threshold {
            return argument(format!(
                "tail bound with rho = -1 needs r >= {threshold}, got {r}"
            ));
        }
        return Ok(std::f64::consts::PI * 2f64.powf(2.0 * sigma + 3.0) / (sigma - 2.0)
            * r.powf(2.0 - sigma)
            * r.ln());
    }
    if r < 4.0 {
        return argument(format!("tail bound needs r >= 4, got {r}"));
    }
    let varpi = if rho >= 0.0 {
        1.0 / (sigma - 2.0)
    } else {
        let n = (-rho).ceil() as i32;
        let factorial: f64 = (1..=n).map(f64::from).product();
        factorial * sigma.powi(n) / (sigma - 2.0).powi(n + 1)
    };
    Ok(std::f64::consts::PI
        * 2f64.powf(2.0 * sigma + 2.0 * rho.abs() - 1.0)
        * varpi
        * r.powf(2.0 - sigma)
        * r.ln().powf(-rho))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(r: u32) -> Arc<TruncatedDomain> {
        TruncatedDomain::euclidean(r).unwrap()
    }

    #[test]
    fn point_norms() {
        let p = LatticePoint::new(3, -4);
        assert_eq!(p.norm(), 5.0);
        assert_eq!(p.taxicab(), 7);
        assert!(p.taxicab() as f64 / 2f64.sqrt() <= p.norm());
    }

    #[test]
    fn domain_boundary_layer_is_closed() {
        for kind in [NormKind::EuclideanBall, NormKind::TaxicabBall] {
            let d = TruncatedDomain::new(7, kind).unwrap();
            for p in d.boundary() {
                assert!(!d.is_interior(*p));
                assert!(p.neighbors().iter().any(|q| d.is_interior(*q)));
            }
            for p in d.interior() {
                for q in p.neighbors() {
                    assert!(d.slot(q).is_some());
                }
            }
            let mut sorted = d.interior().to_vec();
            sorted.sort();
            assert_eq!(sorted, d.interior());
        }
    }

    #[test]
    fn laplacian_examples() {
        let d = dom(10);
        let c = GridFunction::from_fn(d.clone(), |_| 2.5);
        assert_eq!(laplacian(&c, LatticePoint::new(2, 3)).unwrap(), 0.0);
        let delta = GridFunction::from_fn(d.clone(), |p| if p.is_origin() { 1.0 } else { 0.0 });
        assert_eq!(laplacian(&delta, LatticePoint::ORIGIN).unwrap(), -4.0);
        let lin = GridFunction::from_fn(d.clone(), |p| p.x1 as f64);
        assert_eq!(laplacian(&lin, LatticePoint::new(3, 5)).unwrap(), 0.0);
        assert!(laplacian(&lin, LatticePoint::new(11, 0)).is_err());
    }

    #[test]
    fn weighted_norm_examples() {
        let d = dom(50);
        let delta = GridFunction::from_fn(d.clone(), |p| if p.is_origin() { 1.0 } else { 0.0 });
        assert_eq!(weighted_norm(&delta, 3.0), 1.0);
        let one = GridFunction::from_fn(dom(10), |_| 1.0);
        assert_eq!(weighted_norm(&one, 0.0), 1.0);
        let decay = GridFunction::from_fn(d, |p| (1.0 + p.norm()).powi(-2));
        assert!((weighted_norm(&decay, 2.0) - 1.0).abs() < 1e-12);
        assert!(norm_ordering_check(&delta, 3.0, 1.0).unwrap());
        assert!(norm_ordering_check(&delta, 1.0, 3.0).is_err());
    }

    #[test]
    fn tail_bound_examples() {
        let pi = std::f64::consts::PI;
        assert!((tail_bound(4.0, 0.0, 4.0).unwrap() - 4.0 * pi).abs() < 1e-12);
        assert!((tail_bound(3.0, 0.0, 10.0).unwrap() - 3.2 * pi).abs() < 1e-12);
        assert!(tail_bound(2.0, 0.0, 10.0).is_err());
        assert!(tail_bound(3.0, 0.0, 3.0).is_err());
        assert!(tail_bound(3.0, -1.0, 10.0).is_err());
        assert!(tail_bound(3.0, -1.0, 40.0).is_ok());
    }

    #[test]
    fn tail_model_evaluates_beyond_domain() {
        let g = GridFunction::zeros(dom(4)).with_tail(TailModel {
            slope_a: 2.0,
            constant_d: 1.0,
            kind: TailKind::Log,
        });
        let v = g.eval(LatticePoint::new(100, 0)).unwrap();
        assert!((v - (1.0 - 2.0 * 100f64.ln())).abs() < 1e-12);
        assert_eq!(g.eval(LatticePoint::new(1, 1)).unwrap(), 0.0);
        let bare = GridFunction::zeros(dom(4));
        assert!(bare.eval(LatticePoint::new(100, 0)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let g = GridFunction::from_fn(dom(5), |p| p.x1 as f64 * 0.1 - p.x2 as f64).with_tail(
            TailModel {
                slope_a: 1.0,
                constant_d: 0.5,
                kind: TailKind::LogDoubleLog,
            },
        );
        g.write_csv(&path).unwrap();
        let h = GridFunction::read_csv(&path).unwrap();
        assert_eq!(g.values(), h.values());
        assert_eq!(g.tail(), h.tail());
    }
}
