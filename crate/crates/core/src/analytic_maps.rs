//! Closed-form maps with exact jets.
//!
//! Each map is addressed by a name plus a `key=value,...` parameter string,
//! e.g. `power` with `gamma=1`. Jets are hand-differentiated; the tests gate
//! them against finite differences of the value.

use std::f64::consts::{SQRT_2, PI};
use std::fmt;

use serde::Serialize;

use crate::error::{QcError, Result};
use crate::pde_residuals::Jet2;
use crate::tensor_core::{Matrix, Tensor};

/// Anything that yields a second-order jet at a point of its domain.
pub trait PointJet: Sync {
    /// `(n, N)`.
    fn dims(&self) -> (usize, usize);

    fn contains(&self, x: &[f64]) -> bool;

    fn jet(&self, x: &[f64]) -> Result<Jet2>;

    fn gradient(&self, x: &[f64]) -> Result<Matrix> {
        Ok(self.jet(x)?.du)
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.jet(x)?.u)
    }

    /// Whether the closed ball `B_r(x)` lies in the domain.
    fn ball_inside(&self, x: &[f64], r: f64) -> bool;

    fn label(&self) -> String;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MapKind {
    Identity { n: usize },
    /// `x ↦ A x + b` on `ℝ²`.
    Affine { a: [[f64; 2]; 2], b: [f64; 2] },
    Rotation { theta: f64 },
    ScaledRotation { lambda: f64, theta: f64 },
    /// `x ↦ x/|x|²` on the annulus `r_min ≤ |x| ≤ r_max`.
    Inversion { n: usize, r_min: f64, r_max: f64 },
    /// `x ↦ |x|^γ x` on the punctured plane (punctured unit disc for `γ < 0`).
    Power { gamma: f64, n: usize },
    /// `(cos x − cos y, sin x − sin y)`.
    ComplexExp,
    /// `(eˣ, √2 y eˣ, √3 z eˣ)`.
    Exp3d,
    /// `(x³, y)` on `x ≠ 0`.
    CubicY,
    /// `(x, y, a x² + b x y + c y²)`; `a = b = c = 0` is the flat plane embedding.
    QuadricGraph { a: f64, b: f64, c: f64 },
}

/// A catalog map.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalyticMap {
    pub name: String,
    pub params: String,
    pub kind: MapKind,
}

impl fmt::Display for AnalyticMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.params.is_empty() {
            write!(f, "{}", self.name)
        } else {
            write!(f, "{}[{}]", self.name, self.params)
        }
    }
}

/// One line of the catalog listing.
#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub params: &'static str,
    pub n: &'static str,
    #[serde(rename = "N")]
    pub big_n: &'static str,
    pub description: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    let e = |name, params, n, big_n, description| CatalogEntry { name, params, n, big_n, description };
    vec![
        e("identity", "n=2", "n", "n", "identity map"),
        e("affine", "a11=1,a12=0,a21=0,a22=1,b1=0,b2=0", "2", "2", "x ↦ Ax + b"),
        e("rotation", "theta=0.5", "2", "2", "rotation by theta"),
        e("scaled-rotation", "lambda=2,theta=0.5", "2", "2", "lambda times a rotation"),
        e("inversion", "n=2,rmin=0.25,rmax=4", "n", "n", "x ↦ x/|x|² on an annulus"),
        e("power", "gamma=1,n=2", "n", "n", "x ↦ |x|^gamma x"),
        e("complex-exp", "", "2", "2", "(cos x − cos y, sin x − sin y)"),
        e("exp3d", "", "3", "3", "(e^x, √2 y e^x, √3 z e^x)"),
        e("cubic-y", "", "2", "2", "(x³, y)"),
        e("plane", "", "2", "3", "(x, y, 0)"),
        e("quadric-graph", "a=0.5,b=0,c=0.25", "2", "3", "(x, y, a x² + b xy + c y²)"),
    ]
}

fn parse_params(params: &str) -> Result<Vec<(String, f64)>> {
    params
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| QcError::Config(format!("parameter '{kv}' is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| QcError::Config(format!("parameter '{k}' has non-numeric value '{v}'")))?;
            if !v.is_finite() {
                return Err(QcError::Config(format!("parameter '{k}' must be finite")));
            }
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

struct Params {
    map: &'static str,
    values: Vec<(String, f64)>,
    used: Vec<bool>,
}

impl Params {
    fn get(&mut self, key: &str, default: f64) -> f64 {
        match self.values.iter().position(|(k, _)| k == key) {
            Some(i) => {
                self.used[i] = true;
                self.values[i].1
            }
            None => default,
        }
    }

    fn dim(&mut self, default: usize) -> Result<usize> {
        let v = self.get("n", default as f64);
        if v.fract() != 0.0 || !(1.0..=8.0).contains(&v) {
            return Err(QcError::Config(format!("{}: n must be an integer in 1..=8, got {v}", self.map)));
        }
        Ok(v as usize)
    }

    fn finish(self) -> Result<()> {
        match self.values.iter().zip(&self.used).find(|(_, u)| !**u) {
            Some(((k, _), _)) => Err(QcError::Config(format!("map '{}' has no parameter '{k}'", self.map))),
            None => Ok(()),
        }
    }
}

impl AnalyticMap {
    /// Looks up a catalog map by name and `key=value` parameters.
    pub fn from_name(name: &str, params: &str) -> Result<Self> {
        let entry = catalog()
            .into_iter()
            .find(|e| e.name == name)
            .ok_or_else(|| QcError::Config(format!("unknown map '{name}' (see `maps list`)")))?;
        let values = parse_params(params)?;
        let mut p = Params { map: entry.name, used: vec![false; values.len()], values };
        let kind = match name {
            "identity" => MapKind::Identity { n: p.dim(2)? },
            "affine" => {
                let a = [[p.get("a11", 1.0), p.get("a12", 0.0)], [p.get("a21", 0.0), p.get("a22", 1.0)]];
                if a[0][0] * a[1][1] - a[0][1] * a[1][0] == 0.0 {
                    return Err(QcError::Config("affine: matrix A must be invertible".into()));
                }
                MapKind::Affine { a, b: [p.get("b1", 0.0), p.get("b2", 0.0)] }
            }
            "rotation" => MapKind::Rotation { theta: p.get("theta", 0.5) },
            "scaled-rotation" => {
                let lambda = p.get("lambda", 2.0);
                if lambda == 0.0 {
                    return Err(QcError::Config("scaled-rotation: lambda must be non-zero".into()));
                }
                MapKind::ScaledRotation { lambda, theta: p.get("theta", 0.5) }
            }
            "inversion" => {
                let (r_min, r_max) = (p.get("rmin", 0.25), p.get("rmax", 4.0));
                if !(r_min > 0.0 && r_max > r_min) {
                    return Err(QcError::Config("inversion: need 0 < rmin < rmax".into()));
                }
                MapKind::Inversion { n: p.dim(2)?, r_min, r_max }
            }
            "power" => {
                let gamma = p.get("gamma", 1.0);
                if !(gamma > -1.0) {
                    return Err(QcError::Config(format!("power: gamma must exceed -1, got {gamma}")));
                }
                MapKind::Power { gamma, n: p.dim(2)? }
            }
            "complex-exp" => MapKind::ComplexExp,
            "exp3d" => MapKind::Exp3d,
            "cubic-y" => MapKind::CubicY,
            "plane" => MapKind::QuadricGraph { a: 0.0, b: 0.0, c: 0.0 },
            "quadric-graph" => MapKind::QuadricGraph { a: p.get("a", 0.5), b: p.get("b", 0.0), c: p.get("c", 0.25) },
            _ => unreachable!("catalog entry without constructor"),
        };
        p.finish()?;
        Ok(AnalyticMap { name: name.to_string(), params: params.to_string(), kind })
    }

    pub fn power(gamma: f64) -> Self {
        AnalyticMap::from_name("power", &format!("gamma={gamma}")).expect("valid power map")
    }

    pub fn identity(n: usize) -> Self {
        AnalyticMap::from_name("identity", &format!("n={n}")).expect("valid identity map")
    }

    /// Conformal members of the catalog (`identity`, `rotation`, `scaled-rotation`, `inversion`, `plane`).
    pub fn conformal(name: &str, params: &str) -> Result<Self> {
        const CONFORMAL: [&str; 5] = ["identity", "rotation", "scaled-rotation", "inversion", "plane"];
        if !CONFORMAL.contains(&name) {
            return Err(QcError::Config(format!("'{name}' is not a conformal catalog map")));
        }
        AnalyticMap::from_name(name, params)
    }

    /// Closed-form dilation where the catalog knows one.
    pub fn known_dilation(&self) -> Option<f64> {
        match self.kind {
            MapKind::Identity { n } | MapKind::Inversion { n, .. } => Some(n as f64),
            MapKind::Rotation { .. } | MapKind::ScaledRotation { .. } => Some(2.0),
            MapKind::QuadricGraph { a, b, c } if a == 0.0 && b == 0.0 && c == 0.0 => Some(2.0),
            MapKind::Power { gamma, n: 2 } => Some(2.0 + gamma * gamma / (gamma + 1.0)),
            _ => None,
        }
    }

    /// Box on which the CLI samples the map by default.
    pub fn default_box(&self) -> (Vec<f64>, Vec<f64>) {
        let sq = |lo: f64, hi: f64, n: usize| (vec![lo; n], vec![hi; n]);
        match self.kind {
            MapKind::Identity { n } => sq(-1.0, 1.0, n),
            MapKind::Inversion { n, r_min, r_max } => {
                let s = r_max / (n as f64).sqrt();
                let lo = r_min.max(0.5 * s);
                sq(lo, s, n)
            }
            MapKind::Power { gamma, n } => {
                if gamma < 0.0 {
                    sq(-0.7, 0.7, n)
                } else {
                    sq(-1.0, 1.0, n)
                }
            }
            MapKind::ComplexExp => sq(-0.3, 0.3, 2),
            MapKind::Exp3d => sq(-0.5, 0.5, 3),
            MapKind::CubicY => sq(1.0, 2.0, 2),
            _ => sq(-1.0, 1.0, 2),
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        let (n, _) = self.dims();
        if x.len() != n {
            return Err(QcError::Shape(format!("{self} expects points in ℝ^{n}, got {}", x.len())));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(QcError::map_domain(format!("non-finite point {x:?}")));
        }
        if !self.contains(x) {
            return Err(QcError::map_domain(format!("{x:?} is outside the domain of {self}")));
        }
        Ok(())
    }
}

fn radius(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn linear_jet(x: &[f64], a: Matrix, b: &[f64]) -> Result<Jet2> {
    let mut u = a.mat_vec(x);
    for (ui, bi) in u.iter_mut().zip(b) {
        *ui += bi;
    }
    let (big, n) = (a.rows(), a.cols());
    Jet2::new(x.to_vec(), u, a, Tensor::zeros(&[big, n, n]))
}

fn rotation(theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_rows(&[&[c, -s], &[s, c]])
}

impl PointJet for AnalyticMap {
    fn dims(&self) -> (usize, usize) {
        match self.kind {
            MapKind::Identity { n } | MapKind::Inversion { n, .. } | MapKind::Power { n, .. } => (n, n),
            MapKind::Exp3d => (3, 3),
            MapKind::QuadricGraph { .. } => (2, 3),
            _ => (2, 2),
        }
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self.kind {
            MapKind::Inversion { r_min, r_max, .. } => {
                let r = radius(x);
                r >= r_min && r <= r_max
            }
            MapKind::Power { gamma, .. } => {
                let r = radius(x);
                r > 0.0 && (gamma >= 0.0 || r <= 1.0)
            }
            MapKind::CubicY => x[0] != 0.0,
            _ => true,
        }
    }

    fn ball_inside(&self, x: &[f64], r: f64) -> bool {
        if !self.contains(x) {
            return false;
        }
        let rx = radius(x);
        match self.kind {
            MapKind::Inversion { r_min, r_max, .. } => rx - r >= r_min && rx + r <= r_max,
            MapKind::Power { gamma, .. } => rx > r && (gamma >= 0.0 || rx + r <= 1.0),
            MapKind::CubicY => x[0].abs() > r,
            _ => true,
        }
    }

    fn label(&self) -> String {
        self.to_string()
    }

    fn jet(&self, x: &[f64]) -> Result<Jet2> {
        self.check_point(x)?;
        match self.kind {
            MapKind::Identity { n } => linear_jet(x, Matrix::identity(n), &vec![0.0; n]),
            MapKind::Affine { a, b } => linear_jet(x, Matrix::from_rows(&[&a[0], &a[1]]), &b),
            MapKind::Rotation { theta } => linear_jet(x, rotation(theta), &[0.0, 0.0]),
            MapKind::ScaledRotation { lambda, theta } => linear_jet(x, rotation(theta).scale(lambda), &[0.0, 0.0]),
            MapKind::Inversion { n, .. } => inversion_jet(x, n),
            MapKind::Power { gamma, n } => power_jet(x, gamma, n),
            MapKind::ComplexExp => complex_exp_jet(x),
            MapKind::Exp3d => exp3d_jet(x),
            MapKind::CubicY => {
                let (px, py) = (x[0], x[1]);
                let du = Matrix::diag(&[3.0 * px * px, 1.0]);
                let mut d2 = Tensor::zeros(&[2, 2, 2]);
                d2.set(&[0, 0, 0], 6.0 * px);
                Jet2::new(x.to_vec(), vec![px * px * px, py], du, d2)
            }
            MapKind::QuadricGraph { a, b, c } => {
                let (px, py) = (x[0], x[1]);
                let f = a * px * px + b * px * py + c * py * py;
                let du = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0 * a * px + b * py, b * px + 2.0 * c * py]]);
                let d2 = Tensor::from_vec(&[3, 2, 2], vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0 * a, b, b, 2.0 * c])?;
                Jet2::new(x.to_vec(), vec![px, py, f], du, d2)
            }
        }
    }
}

/// Exact jet of `u^γ(x) = |x|^γ x`.
pub fn power_map_jet(x: &[f64], gamma: f64) -> Result<Jet2> {
    if !(gamma > -1.0) {
        return Err(QcError::Precondition(format!("gamma must exceed -1, got {gamma}")));
    }
    if radius(x) == 0.0 {
        return Err(QcError::map_domain("the power map is not differentiable at the origin"));
    }
    power_jet(x, gamma, x.len())
}

fn power_jet(x: &[f64], gamma: f64, n: usize) -> Result<Jet2> {
    let r = radius(x);
    let rg = r.powf(gamma);
    let u: Vec<f64> = x.iter().map(|v| rg * v).collect();
    let c1 = gamma * r.powf(gamma - 2.0);
    let c2 = gamma * (gamma - 2.0) * r.powf(gamma - 4.0);
    let du = Matrix::from_fn(n, n, |a, i| rg * if a == i { 1.0 } else { 0.0 } + c1 * x[a] * x[i]);
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let d2 = Tensor::from_fn(&[n, n, n], |ix| {
        let (a, i, j) = (ix[0], ix[1], ix[2]);
        c1 * (x[j] * d(a, i) + x[i] * d(a, j) + x[a] * d(i, j)) + c2 * x[a] * x[i] * x[j]
    });
    Jet2::new(x.to_vec(), u, du, d2)
}

fn inversion_jet(x: &[f64], n: usize) -> Result<Jet2> {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let u: Vec<f64> = x.iter().map(|v| v / r2).collect();
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let du = Matrix::from_fn(n, n, |a, i| d(a, i) / r2 - 2.0 * x[a] * x[i] / (r2 * r2));
    let d2 = Tensor::from_fn(&[n, n, n], |ix| {
        let (a, i, j) = (ix[0], ix[1], ix[2]);
        -2.0 * (x[j] * d(a, i) + x[i] * d(a, j) + x[a] * d(i, j)) / (r2 * r2) + 8.0 * x[a] * x[i] * x[j] / (r2 * r2 * r2)
    });
    Jet2::new(x.to_vec(), u, du, d2)
}

/// Exact jet of `(cos x − cos y, sin x − sin y)`.
pub fn complex_exp_map_jet(x: &[f64]) -> Result<Jet2> {
    if x.len() != 2 {
        return Err(QcError::Shape("complex-exp lives on ℝ²".into()));
    }
    complex_exp_jet(x)
}

fn complex_exp_jet(x: &[f64]) -> Result<Jet2> {
    let ((sx, cx), (sy, cy)) = (x[0].sin_cos(), x[1].sin_cos());
    let du = Matrix::from_rows(&[&[-sx, sy], &[cx, -cy]]);
    let d2 = Tensor::from_vec(&[2, 2, 2], vec![-cx, 0.0, 0.0, cy, -sx, 0.0, 0.0, sy])?;
    Jet2::new(x.to_vec(), vec![cx - cy, sx - sy], du, d2)
}

/// Exact jet of `(eˣ, √2 y eˣ, √3 z eˣ)`.
pub fn exp3d_map_jet(x: &[f64]) -> Result<Jet2> {
    if x.len() != 3 {
        return Err(QcError::Shape("exp3d lives on ℝ³".into()));
    }
    exp3d_jet(x)
}

fn exp3d_jet(x: &[f64]) -> Result<Jet2> {
    let s3 = 3f64.sqrt();
    let e = x[0].exp();
    let (y, z) = (x[1], x[2]);
    let du = Matrix::from_rows(&[&[e, 0.0, 0.0], &[SQRT_2 * y * e, SQRT_2 * e, 0.0], &[s3 * z * e, 0.0, s3 * e]]);
    let mut d2 = Tensor::zeros(&[3, 3, 3]);
    d2.set(&[0, 0, 0], e);
    d2.set(&[1, 0, 0], SQRT_2 * y * e);
    d2.set(&[1, 0, 1], SQRT_2 * e);
    d2.set(&[1, 1, 0], SQRT_2 * e);
    d2.set(&[2, 0, 0], s3 * z * e);
    d2.set(&[2, 0, 2], s3 * e);
    d2.set(&[2, 2, 0], s3 * e);
    Jet2::new(x.to_vec(), vec![e, SQRT_2 * y * e, s3 * z * e], du, d2)
}

/// Evenly spaced points on the circle of radius `r` (used by several reports).
pub fn circle_points(r: f64, count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / count as f64;
            [r * t.cos(), r * t.sin()]
        })
        .collect()
}
