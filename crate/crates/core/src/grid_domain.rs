//! Rectangular grids over `Ω ⊂ ℝⁿ`, sampled maps and their finite-difference jets.
//!
//! Nodes are stored row-major with the first axis fastest. A node is
//! `Outside` when it is masked out (a hole or a point outside the map's
//! domain), `Boundary` when it lies on the grid edge or touches an `Outside`
//! node through its 3ⁿ neighbourhood, and `Interior` otherwise. Interior nodes
//! carry full central-difference stencils.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic_maps::PointJet;
use crate::dilation_calculus::dilation;
use crate::error::{QcError, Result};
use crate::pde_residuals::Jet2;
use crate::tensor_core::{svd, Matrix, Tensor};

pub const MIN_POINTS_PER_AXIS: usize = 5;
pub const FIELD_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let n = lo.len();
        if !(2..=3).contains(&n) || hi.len() != n || counts.len() != n {
            return Err(QcError::Config(format!(
                "grid needs matching extents in 2 or 3 dimensions (lo {}, hi {}, counts {})",
                lo.len(),
                hi.len(),
                counts.len()
            )));
        }
        if let Some(c) = counts.iter().find(|&&c| c < MIN_POINTS_PER_AXIS) {
            return Err(QcError::Config(format!("grid needs ≥ {MIN_POINTS_PER_AXIS} points per axis, got {c}")));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
            return Err(QcError::Config(format!("grid extents must satisfy lo < hi, got {lo:?}..{hi:?}")));
        }
        Ok(Grid { lo, hi, counts })
    }

    /// The same number of points on every axis of the box `[lo, hi]`.
    pub fn uniform(lo: &[f64], hi: &[f64], points: usize) -> Result<Self> {
        Grid::new(lo.to_vec(), hi.to_vec(), vec![points; lo.len()])
    }

    pub fn n(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.counts[axis] - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut node: usize) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&c| {
                let k = node % c;
                node /= c;
                k
            })
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.counts).rev().fold(0, |acc, (&k, &c)| acc * c + k)
    }

    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        // Endpoints are hit exactly.
        if k + 1 == self.counts[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + k as f64 * self.spacing(axis)
        }
    }

    pub fn point(&self, node: usize) -> Vec<f64> {
        self.coords(node).iter().enumerate().map(|(a, &k)| self.coordinate(a, k)).collect()
    }

    /// Node reached by moving `offsets[a]` steps along each axis, if on the grid.
    pub fn offset(&self, node: usize, offsets: &[isize]) -> Option<usize> {
        let mut c = self.coords(node);
        for (a, &o) in offsets.iter().enumerate() {
            let k = c[a] as isize + o;
            if k < 0 || k >= self.counts[a] as isize {
                return None;
            }
            c[a] = k as usize;
        }
        Some(self.index(&c))
    }

    pub fn neighbor(&self, node: usize, axis: usize, step: isize) -> Option<usize> {
        let mut off = vec![0; self.n()];
        off[axis] = step;
        self.offset(node, &off)
    }

    pub fn on_edge(&self, node: usize) -> bool {
        self.coords(node).iter().zip(&self.counts).any(|(&k, &c)| k == 0 || k + 1 == c)
    }

    /// All offsets in `{−1, 0, 1}ⁿ` except zero.
    pub fn stencil_offsets(&self) -> Vec<Vec<isize>> {
        let n = self.n();
        (0..3usize.pow(n as u32))
            .map(|mut k| {
                (0..n)
                    .map(|_| {
                        let o = (k % 3) as isize - 1;
                        k /= 3;
                        o
                    })
                    .collect::<Vec<_>>()
            })
            .filter(|o| o.iter().any(|&v| v != 0))
            .collect()
    }

    /// Number of cells (`Π (counts − 1)`).
    pub fn cell_count(&self) -> usize {
        self.counts.iter().map(|c| c - 1).product()
    }

    /// Lower-corner node of a cell.
    pub fn cell_origin(&self, mut cell: usize) -> usize {
        let c: Vec<usize> = self
            .counts
            .iter()
            .map(|&c| {
                let k = cell % (c - 1);
                cell /= c - 1;
                k
            })
            .collect();
        self.index(&c)
    }

    /// Corner nodes of a cell; corner `m` has bit `a` set when it sits on the upper side of axis `a`.
    pub fn cell_corners(&self, cell: usize) -> Vec<usize> {
        let base = self.coords(self.cell_origin(cell));
        (0..1usize << self.n())
            .map(|m| {
                let c: Vec<usize> = base.iter().enumerate().map(|(a, &k)| k + ((m >> a) & 1)).collect();
                self.index(&c)
            })
            .collect()
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        let base = self.point(self.cell_origin(cell));
        base.iter().enumerate().map(|(a, v)| v + 0.5 * self.spacing(a)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.n()).map(|a| self.spacing(a)).product()
    }

    /// Cell containing `x` (clamped to the last cell on upper edges), if `x` lies in the box.
    pub fn locate(&self, x: &[f64]) -> Option<(usize, Vec<f64>)> {
        let mut cell = Vec::with_capacity(self.n());
        let mut frac = Vec::with_capacity(self.n());
        for a in 0..self.n() {
            if !(x[a] >= self.lo[a] && x[a] <= self.hi[a]) {
                return None;
            }
            let t = (x[a] - self.lo[a]) / self.spacing(a);
            let k = (t.floor() as usize).min(self.counts[a] - 2);
            cell.push(k);
            frac.push(t - k as f64);
        }
        let idx = cell.iter().zip(&self.counts).rev().fold(0, |acc, (&k, &c)| acc * (c - 1) + k);
        Some((idx, frac))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Interior,
    Boundary,
    Outside,
}

/// Classifies nodes from an activity mask (`false` = outside).
pub fn classify_nodes(grid: &Grid, active: &[bool]) -> Vec<NodeKind> {
    let offs = grid.stencil_offsets();
    (0..grid.len())
        .map(|v| {
            if !active[v] {
                NodeKind::Outside
            } else if grid.on_edge(v) || offs.iter().any(|o| grid.offset(v, o).is_none_or(|w| !active[w])) {
                NodeKind::Boundary
            } else {
                NodeKind::Interior
            }
        })
        .collect()
}

/// Axis-aligned box excluded from a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxHole {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxHole {
    /// Strict containment, so the hole's edge nodes stay in the domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| v > l && v < h)
    }
}

/// A map sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MapField {
    grid: Grid,
    big_n: usize,
    values: Vec<f64>,
    kinds: Vec<NodeKind>,
    tau: f64,
    immersion: bool,
}

impl MapField {
    /// `values` holds `N` numbers per node; `active[v] = false` marks node `v` as outside.
    pub fn new(grid: Grid, big_n: usize, values: Vec<f64>, active: &[bool], tau: f64) -> Result<Self> {
        if big_n < grid.n() {
            return Err(QcError::Shape(format!("target dimension {big_n} is below domain dimension {}", grid.n())));
        }
        if values.len() != grid.len() * big_n || active.len() != grid.len() {
            return Err(QcError::Shape(format!(
                "{} values / {} flags for {} nodes with N = {big_n}",
                values.len(),
                active.len(),
                grid.len()
            )));
        }
        for (v, a) in active.iter().enumerate() {
            if *a && values[v * big_n..(v + 1) * big_n].iter().any(|x| !x.is_finite()) {
                return Err(QcError::Precondition(format!("non-finite value at node {v}")));
            }
        }
        let kinds = classify_nodes(&grid, active);
        let mut f = MapField { grid, big_n, values, kinds, tau, immersion: false };
        f.immersion = f.check_immersion();
        Ok(f)
    }

    /// Samples an analytic map; nodes outside its domain or inside `hole` are marked outside.
    pub fn sample(map: &dyn PointJet, grid: Grid, hole: Option<&BoxHole>, tau: f64) -> Result<Self> {
        let (n, big_n) = map.dims();
        if n != grid.n() {
            return Err(QcError::Config(format!("map '{}' has n = {n}, grid has {}", map.label(), grid.n())));
        }
        let rows: Vec<Option<Vec<f64>>> = (0..grid.len())
            .into_par_iter()
            .map(|v| {
                let x = grid.point(v);
                if hole.is_some_and(|h| h.contains(&x)) || !map.contains(&x) {
                    return Ok(None);
                }
                map.jet(&x).map(|j| Some(j.u))
            })
            .collect::<Result<_>>()?;
        let active: Vec<bool> = rows.iter().map(Option::is_some).collect();
        let values = rows.into_iter().flat_map(|r| r.unwrap_or_else(|| vec![0.0; big_n])).collect();
        MapField::new(grid, big_n, values, &active, tau)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn big_n(&self) -> usize {
        self.big_n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.big_n..(node + 1) * self.big_n]
    }

    pub fn active(&self) -> Vec<bool> {
        self.kinds.iter().map(|k| *k != NodeKind::Outside).collect()
    }

    pub fn is_immersion(&self) -> bool {
        self.immersion
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&v| self.kinds[v] == NodeKind::Interior).collect()
    }

    /// Replaces all nodal values and refreshes the immersion flag.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(QcError::Shape("replacement values have the wrong length".into()));
        }
        self.values = values;
        self.immersion = self.check_immersion();
        Ok(())
    }

    fn check_immersion(&self) -> bool {
        let n = self.grid.n();
        (0..self.grid.len()).into_par_iter().filter(|&v| self.kinds[v] == NodeKind::Interior).all(|v| {
            let du = self.fd_gradient(v);
            let s = svd(&du).sigma;
            du.is_finite() && s[0] > 0.0 && s.iter().filter(|&&x| x > self.tau * s[0]).count() == n
        })
    }

    fn fd_gradient(&self, v: usize) -> Matrix {
        let (n, big) = (self.grid.n(), self.big_n);
        let mut du = Matrix::zeros(big, n);
        for i in 0..n {
            let (p, m) = (self.grid.neighbor(v, i, 1).unwrap(), self.grid.neighbor(v, i, -1).unwrap());
            let h = self.grid.spacing(i);
            for a in 0..big {
                du[(a, i)] = (self.value(p)[a] - self.value(m)[a]) / (2.0 * h);
            }
        }
        du
    }

    /// Central-difference gradient at an interior node.
    pub fn node_gradient(&self, node: usize) -> Result<Matrix> {
        if self.kinds[node] != NodeKind::Interior {
            return Err(QcError::StencilOutOfDomain { node });
        }
        Ok(self.fd_gradient(node))
    }

    /// Gradient at a cell centre: each column averages the `2^{n−1}` edge differences along that axis.
    pub fn cell_gradient(&self, cell: usize) -> Matrix {
        let (n, big) = (self.grid.n(), self.big_n);
        let corners = self.grid.cell_corners(cell);
        let w = 1.0 / (1usize << (n - 1)) as f64;
        let mut du = Matrix::zeros(big, n);
        for (m, &v) in corners.iter().enumerate() {
            for i in 0..n {
                let s = if (m >> i) & 1 == 1 { w } else { -w } / self.grid.spacing(i);
                for a in 0..big {
                    du[(a, i)] += s * self.value(v)[a];
                }
            }
        }
        du
    }

    /// Cells whose corners are all inside the domain.
    pub fn active_cells(&self) -> Vec<usize> {
        (0..self.grid.cell_count())
            .filter(|&c| self.grid.cell_corners(c).iter().all(|&v| self.kinds[v] != NodeKind::Outside))
            .collect()
    }
}

/// Finite-difference jet at an interior node.
///
/// Gradient and Hessian use `±1` stencils: three-point second differences and
/// four-point cross differences, which are symmetric by construction.
pub fn jet_from_field(field: &MapField, node: usize) -> Result<Jet2> {
    let du = field.node_gradient(node)?;
    let g = &field.grid;
    let (n, big) = (g.n(), field.big_n);
    let mut d2 = Tensor::zeros(&[big, n, n]);
    let u0 = field.value(node);
    for i in 0..n {
        let hi = g.spacing(i);
        let (p, m) = (g.neighbor(node, i, 1).unwrap(), g.neighbor(node, i, -1).unwrap());
        for a in 0..big {
            d2.set(&[a, i, i], (field.value(p)[a] - 2.0 * u0[a] + field.value(m)[a]) / (hi * hi));
        }
        for j in i + 1..n {
            let hj = g.spacing(j);
            let at = |si: isize, sj: isize| {
                let mut o = vec![0; n];
                o[i] = si;
                o[j] = sj;
                g.offset(node, &o).unwrap()
            };
            let (pp, pm, mp, mm) = (at(1, 1), at(1, -1), at(-1, 1), at(-1, -1));
            for a in 0..big {
                let v = (field.value(pp)[a] - field.value(pm)[a] - field.value(mp)[a] + field.value(mm)[a]) / (4.0 * hi * hj);
                d2.set(&[a, i, j], v);
                d2.set(&[a, j, i], v);
            }
        }
    }
    Jet2::new(g.point(node), u0.to_vec(), du, d2)
}

/// Per-node jets for grid sweeps, exact or finite-difference.
pub trait JetSource: Sync {
    fn grid(&self) -> &Grid;
    fn kinds(&self) -> &[NodeKind];
    fn node_gradient(&self, node: usize) -> Result<Matrix>;
    fn node_jet(&self, node: usize) -> Result<Jet2>;
    /// `"exact"` or `"finite-difference"`.
    fn provenance(&self) -> &'static str;

    /// Nodes with a jet.
    fn evaluable(&self, node: usize) -> bool;
}

impl JetSource for MapField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }
    fn node_gradient(&self, node: usize) -> Result<Matrix> {
        MapField::node_gradient(self, node)
    }
    fn node_jet(&self, node: usize) -> Result<Jet2> {
        jet_from_field(self, node)
    }
    fn provenance(&self) -> &'static str {
        "finite-difference"
    }
    fn evaluable(&self, node: usize) -> bool {
        self.kinds[node] == NodeKind::Interior
    }
}

/// An analytic map evaluated exactly at the nodes of a grid.
pub struct SampledMap<'a> {
    map: &'a dyn PointJet,
    grid: Grid,
    kinds: Vec<NodeKind>,
}

impl<'a> SampledMap<'a> {
    pub fn new(map: &'a dyn PointJet, grid: Grid) -> Result<Self> {
        if map.dims().0 != grid.n() {
            return Err(QcError::Config(format!("map '{}' does not live on a {}-d grid", map.label(), grid.n())));
        }
        let kinds = (0..grid.len())
            .map(|v| if map.contains(&grid.point(v)) { NodeKind::Interior } else { NodeKind::Outside })
            .collect();
        Ok(SampledMap { map, grid, kinds })
    }

    pub fn map(&self) -> &dyn PointJet {
        self.map
    }
}

impl JetSource for SampledMap<'_> {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }
    fn node_gradient(&self, node: usize) -> Result<Matrix> {
        self.map.gradient(&self.grid.point(node))
    }
    fn node_jet(&self, node: usize) -> Result<Jet2> {
        self.map.jet(&self.grid.point(node))
    }
    fn provenance(&self) -> &'static str {
        "exact"
    }
    fn evaluable(&self, node: usize) -> bool {
        self.kinds[node] != NodeKind::Outside
    }
}

/// Multilinear interpolation of nodal finite-difference jets; every corner of
/// the containing cell must be an interior node.
impl PointJet for MapField {
    fn dims(&self) -> (usize, usize) {
        (self.grid.n(), self.big_n)
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self.grid.locate(x) {
            Some((cell, _)) => self.grid.cell_corners(cell).iter().all(|&v| self.kinds[v] == NodeKind::Interior),
            None => false,
        }
    }

    fn ball_inside(&self, x: &[f64], r: f64) -> bool {
        // Probes the centre, the axis extremes and the diagonal directions.
        let n = self.grid.n();
        let mut probes = vec![x.to_vec()];
        for m in 1..3usize.pow(n as u32) {
            let mut k = m;
            let dir: Vec<f64> = (0..n)
                .map(|_| {
                    let o = (k % 3) as f64 - 1.0;
                    k /= 3;
                    o
                })
                .collect();
            let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            if len > 0.0 {
                probes.push(x.iter().zip(&dir).map(|(xi, d)| xi + r * d / len).collect());
            }
        }
        probes.iter().all(|p| self.contains(p))
    }

    fn label(&self) -> String {
        format!("field on {:?}", self.grid.counts())
    }

    fn jet(&self, x: &[f64]) -> Result<Jet2> {
        let (cell, frac) = self
            .grid
            .locate(x)
            .ok_or_else(|| QcError::map_domain(format!("{x:?} is outside the grid")))?;
        let corners = self.grid.cell_corners(cell);
        let (n, big) = (self.grid.n(), self.big_n);
        let mut u = vec![0.0; big];
        let mut du = Matrix::zeros(big, n);
        let mut d2 = Tensor::zeros(&[big, n, n]);
        for (m, &v) in corners.iter().enumerate() {
            let w: f64 = (0..n).map(|a| if (m >> a) & 1 == 1 { frac[a] } else { 1.0 - frac[a] }).product();
            if w == 0.0 {
                continue;
            }
            let j = jet_from_field(self, v)?;
            for a in 0..big {
                u[a] += w * j.u[a];
            }
            du += &j.du.scale(w);
            for (t, s) in d2.data_mut().iter_mut().zip(j.d2u.data()) {
                *t += w * s;
            }
        }
        Jet2::new(x.to_vec(), u, du, d2)
    }
}

/// `L^p` norm of `K(Du)` by the midpoint rule on active cells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpNorm {
    pub p: f64,
    /// `∫ K^p` (`sup K` when `p = ∞`); may overflow to `+∞` for large `p`.
    pub raw: f64,
    /// `(⨍ K^p)^{1/p}` (`sup K` when `p = ∞`).
    pub normalized: f64,
    pub sup: f64,
    pub measure: f64,
}

pub fn lp_norm_of_dilation(field: &MapField, p: f64) -> Result<LpNorm> {
    if !(p >= 1.0) {
        return Err(QcError::Precondition(format!("p must lie in [1, ∞], got {p}")));
    }
    let cells = field.active_cells();
    if cells.is_empty() {
        return Err(QcError::Precondition("field has no active cells".into()));
    }
    let ks: Vec<f64> = cells
        .par_iter()
        .map(|&c| {
            dilation(&field.cell_gradient(c)).map_err(|e| match e {
                QcError::DomainViolation { set, detail } => QcError::DomainViolation {
                    set,
                    detail: format!("cell centred at {:?}: {detail}", field.grid.cell_center(c)),
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let vol = field.grid.cell_volume();
    let measure = vol * cells.len() as f64;
    let sup = ks.iter().fold(0.0f64, |m, &k| m.max(k));
    if p.is_infinite() {
        return Ok(LpNorm { p, raw: sup, normalized: sup, sup, measure });
    }
    let mean: f64 = ks.iter().map(|k| (k / sup).powf(p)).sum::<f64>() / cells.len() as f64;
    let normalized = sup * mean.powf(1.0 / p);
    let raw = (p * sup.ln() + (mean * measure).ln()).exp();
    Ok(LpNorm { p, raw, normalized, sup, measure })
}

/// Connected components of `mask` under axis adjacency; returns per-node ids and the count.
pub fn connected_components(grid: &Grid, mask: &[bool]) -> (Vec<Option<usize>>, usize) {
    let mut id = vec![None; grid.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        if !mask[start] || id[start].is_some() {
            continue;
        }
        id[start] = Some(count);
        stack.push(start);
        while let Some(v) = stack.pop() {
            for a in 0..grid.n() {
                for s in [-1, 1] {
                    if let Some(w) = grid.neighbor(v, a, s) {
                        if mask[w] && id[w].is_none() {
                            id[w] = Some(count);
                            stack.push(w);
                        }
                    }
                }
            }
        }
        count += 1;
    }
    (id, count)
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    schema: u32,
    n: usize,
    #[serde(rename = "N")]
    big_n: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    tau: f64,
    /// Indices of outside nodes.
    outside: Vec<usize>,
    values: Vec<Vec<f64>>,
}

impl MapField {
    pub fn to_json(&self) -> Result<String> {
        let f = FieldFile {
            schema: FIELD_SCHEMA,
            n: self.grid.n(),
            big_n: self.big_n,
            lo: self.grid.lo.clone(),
            hi: self.grid.hi.clone(),
            counts: self.grid.counts.clone(),
            tau: self.tau,
            outside: (0..self.grid.len()).filter(|&v| self.kinds[v] == NodeKind::Outside).collect(),
            values: self.values.chunks(self.big_n).map(<[f64]>::to_vec).collect(),
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: FieldFile = serde_json::from_str(text)?;
        if f.schema != FIELD_SCHEMA {
            return Err(QcError::Parse(format!("unsupported field schema {}", f.schema)));
        }
        let grid = Grid::new(f.lo, f.hi, f.counts)?;
        if grid.n() != f.n || f.values.iter().any(|r| r.len() != f.big_n) {
            return Err(QcError::Parse("field header does not match its values".into()));
        }
        let mut active = vec![true; grid.len()];
        for v in f.outside {
            *active.get_mut(v).ok_or_else(|| QcError::Parse(format!("outside node {v} is off the grid")))? = false;
        }
        MapField::new(grid, f.big_n, f.values.concat(), &active, f.tau)
    }

    /// CSV with a commented header carrying the grid; one row per node.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";");
        let mut s = format!(
            "# qcinf-field schema={FIELD_SCHEMA} n={} N={} lo={} hi={} counts={} tau={:?}\n",
            g.n(),
            self.big_n,
            join(&g.lo),
            join(&g.hi),
            g.counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"),
            self.tau
        );
        let idx: Vec<String> = (0..g.n()).map(|a| format!("i{a}")).collect();
        let vals: Vec<String> = (0..self.big_n).map(|a| format!("u{a}")).collect();
        s.push_str(&format!("{},active,{}\n", idx.join(","), vals.join(",")));
        for v in 0..g.len() {
            let c: Vec<String> = g.coords(v).iter().map(|k| k.to_string()).collect();
            let u: Vec<String> = self.value(v).iter().map(|x| format!("{x:?}")).collect();
            let act = u8::from(self.kinds[v] != NodeKind::Outside);
            s.push_str(&format!("{},{act},{}\n", c.join(","), u.join(",")));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| QcError::Parse("empty field CSV".into()))?;
        let mut kv = std::collections::HashMap::new();
        for tok in header.trim_start_matches('#').split_whitespace().skip(1) {
            if let Some((k, v)) = tok.split_once('=') {
                kv.insert(k, v);
            }
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| QcError::Parse(format!("field CSV header lacks '{k}'")));
        let floats = |s: &str| -> Result<Vec<f64>> {
            s.split(';').map(|t| t.parse().map_err(|_| QcError::Parse(format!("bad number '{t}'")))).collect()
        };
        if get("schema")? != FIELD_SCHEMA.to_string() {
            return Err(QcError::Parse("unsupported field schema".into()));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| QcError::Parse(format!("bad integer '{s}'")));
        let n = parse_usize(get("n")?)?;
        let big_n = parse_usize(get("N")?)?;
        let counts = get("counts")?.split(';').map(parse_usize).collect::<Result<Vec<_>>>()?;
        let tau: f64 = get("tau")?.parse().map_err(|_| QcError::Parse("bad tau".into()))?;
        let grid = Grid::new(floats(get("lo")?)?, floats(get("hi")?)?, counts)?;
        if grid.n() != n {
            return Err(QcError::Parse("dimension mismatch in field header".into()));
        }
        lines.next();
        let mut values = vec![0.0; grid.len() * big_n];
        let mut active = vec![false; grid.len()];
        let mut seen = vec![false; grid.len()];
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != n + 1 + big_n {
                return Err(QcError::Parse(format!("row '{line}' has {} columns", cols.len())));
            }
            let c = cols[..n].iter().map(|t| parse_usize(t)).collect::<Result<Vec<_>>>()?;
            if c.iter().zip(grid.counts()).any(|(k, m)| k >= m) {
                return Err(QcError::Parse(format!("row index {c:?} is off the grid")));
            }
            let v = grid.index(&c);
            seen[v] = true;
            active[v] = cols[n] == "1";
            for a in 0..big_n {
                values[v * big_n + a] =
                    cols[n + 1 + a].parse().map_err(|_| QcError::Parse(format!("bad value '{}'", cols[n + 1 + a])))?;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(QcError::Parse("field CSV does not cover every node".into()));
        }
        MapField::new(grid, big_n, values, &active, tau)
    }

    /// Writes `.json` or `.csv` depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.to_csv(),
            _ => self.to_json()?,
        };
        let mut f = fs::File::create(path)?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => MapField::from_csv(&text),
            _ => MapField::from_json(&text),
        }
    }
}
