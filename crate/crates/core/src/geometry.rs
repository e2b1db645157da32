//! Lattice spacetimes `I × S¹` with metric `g = β dt⊗dt − a² dx⊗dx`,
//! their causal structure, regions, metric perturbations and worldlines.
//!
//! The lattice causal relation is the domain of influence of the explicit
//! three-point scheme used by [`crate::field`]: one step in time may move at
//! most one site in space. Under the CFL condition this cone contains the
//! physical cone `|dx/dt| ≤ √β/a`. The scheme itself only reaches `k − 1`
//! sites after `k` steps, so every cone built here over-approximates the
//! true support of propagated fields by one cell, and every Cauchy development
//! under-approximates the true domain of dependence by one cell.

use std::f64::consts::PI;
use std::ops::Range;

use crate::dual::Scalar;
use crate::error::{Error, Result};

/// Dense row-major grid over `(time level, site)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    n_t: usize,
    n_x: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(n_t: usize, n_x: usize, value: T) -> Self {
        Grid { n_t, n_x, data: vec![value; n_t * n_x] }
    }

    pub fn from_vec(n_t: usize, n_x: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n_t * n_x {
            return Err(Error::LengthMismatch { left: data.len(), right: n_t * n_x });
        }
        Ok(Grid { n_t, n_x, data })
    }

    pub fn from_fn(n_t: usize, n_x: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n_t * n_x);
        for n in 0..n_t {
            for j in 0..n_x {
                data.push(f(n, j));
            }
        }
        Grid { n_t, n_x, data }
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid { n_t: self.n_t, n_x: self.n_x, data: self.data.iter().map(f).collect() }
    }
}

impl<T> Grid<T> {
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn row(&self, n: usize) -> &[T] {
        &self.data[n * self.n_x..(n + 1) * self.n_x]
    }
    pub fn row_mut(&mut self, n: usize) -> &mut [T] {
        &mut self.data[n * self.n_x..(n + 1) * self.n_x]
    }
}

impl<T> std::ops::Index<(usize, usize)> for Grid<T> {
    type Output = T;
    fn index(&self, (n, j): (usize, usize)) -> &T {
        &self.data[n * self.n_x + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Grid<T> {
    fn index_mut(&mut self, (n, j): (usize, usize)) -> &mut T {
        &mut self.data[n * self.n_x + j]
    }
}

/// Mass and curvature coupling of `P = □ + m² + ξR`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KgParams {
    pub m_sq: f64,
    pub xi: f64,
}

impl KgParams {
    pub fn new(m_sq: f64, xi: f64) -> Result<Self> {
        if !(m_sq >= 0.0) || !xi.is_finite() {
            return Err(Error::InvalidSpacetime(format!("need m_sq >= 0 and finite xi, got {m_sq}, {xi}")));
        }
        Ok(KgParams { m_sq, xi })
    }

    pub fn massive(m_sq: f64) -> Self {
        KgParams { m_sq, xi: 0.0 }
    }

    pub fn massless() -> Self {
        KgParams { m_sq: 0.0, xi: 0.0 }
    }
}

/// Lattice shape and tolerances shared by every spacetime on the same grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub n_t: usize,
    pub n_x: usize,
    pub dt: f64,
    pub dx: f64,
    pub cfl_factor: f64,
    /// Time levels at each end of the window kept free of sources and perturbations.
    pub n_pad: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec { n_t: 256, n_x: 128, dt: 0.05, dx: 0.1, cfl_factor: 0.8, n_pad: 4 }
    }
}

impl LatticeSpec {
    pub fn new(n_t: usize, n_x: usize, dx: f64) -> Self {
        LatticeSpec { n_t, n_x, dt: 0.5 * dx, dx, ..Default::default() }
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }

    pub fn circumference(&self) -> f64 {
        self.n_x as f64 * self.dx
    }

    /// Rows that may carry sources: `n_pad .. n_t - n_pad`.
    pub fn interior_rows(&self) -> Range<usize> {
        self.n_pad..self.n_t.saturating_sub(self.n_pad)
    }

    /// Signed periodic separation `x_j - x_k` in sites, in `(-n_x/2, n_x/2]`.
    pub fn site_offset(&self, j: usize, k: usize) -> isize {
        let n = self.n_x as isize;
        let mut d = (j as isize - k as isize).rem_euclid(n);
        if d > n / 2 {
            d -= n;
        }
        d
    }

    pub fn wrap(&self, j: isize) -> usize {
        j.rem_euclid(self.n_x as isize) as usize
    }
}

/// Coefficients of the weighted operator `A = w P`:
///
/// `(A u)_{n,j} = [c_{n+½,j}(u_{n+1,j}-u_{n,j}) - c_{n-½,j}(u_{n,j}-u_{n-1,j})]/dt²
///              - [d_{n,j+½}(u_{n,j+1}-u_{n,j}) - d_{n,j-½}(u_{n,j}-u_{n,j-1})]/dx²
///              + w_{n,j} V_{n,j} u_{n,j}`
///
/// with `c = a/√β`, `d = √β/a`, `w = a√β`, `V = m² + ξR`.
#[derive(Debug, Clone)]
pub(crate) struct Coefficients<S> {
    /// `(n_t - 1) × n_x`, entry `(n, j)` sits between levels `n` and `n + 1`.
    pub c_half: Vec<S>,
    /// `n_t × n_x`, entry `(n, j)` sits on the link `j → j + 1`.
    pub d_link: Vec<S>,
    pub w: Vec<S>,
    pub v: Vec<S>,
    /// `w · V`
    pub wv: Vec<S>,
}

pub(crate) fn coefficients<S: Scalar>(
    lat: &LatticeSpec,
    kg: &KgParams,
    beta: &dyn Fn(usize, usize) -> S,
    a: &dyn Fn(usize, usize) -> S,
) -> Coefficients<S> {
    let (n_t, n_x) = (lat.n_t, lat.n_x);
    let half = S::from_f64(0.5);
    let mut lapse = Vec::with_capacity(n_t * n_x);
    let mut scale = Vec::with_capacity(n_t * n_x);
    for n in 0..n_t {
        for j in 0..n_x {
            lapse.push(beta(n, j).sqrt());
            scale.push(a(n, j));
        }
    }
    let idx = |n: usize, j: usize| n * n_x + j;
    let c_node: Vec<S> = (0..n_t * n_x).map(|i| scale[i] / lapse[i]).collect();
    let d_node: Vec<S> = (0..n_t * n_x).map(|i| lapse[i] / scale[i]).collect();
    let w: Vec<S> = (0..n_t * n_x).map(|i| scale[i] * lapse[i]).collect();

    let mut c_half = Vec::with_capacity((n_t - 1) * n_x);
    for n in 0..n_t - 1 {
        for j in 0..n_x {
            c_half.push(half * (c_node[idx(n, j)] + c_node[idx(n + 1, j)]));
        }
    }
    let mut d_link = Vec::with_capacity(n_t * n_x);
    for n in 0..n_t {
        for j in 0..n_x {
            d_link.push(half * (d_node[idx(n, j)] + d_node[idx(n, (j + 1) % n_x)]));
        }
    }

    // Scalar curvature for signature (+,-):
    // R = -(2/(N a)) [∂_t(∂_t a / N) - ∂_x(∂_x N / a)],  N = √β.
    let m_sq = S::from_f64(kg.m_sq);
    let xi = S::from_f64(kg.xi);
    let (dt, dx) = (S::from_f64(lat.dt), S::from_f64(lat.dx));
    let two = S::from_f64(2.0);
    let mut v = vec![m_sq; n_t * n_x];
    if kg.xi != 0.0 {
        for n in 1..n_t - 1 {
            for j in 0..n_x {
                let jp = (j + 1) % n_x;
                let jm = (j + n_x - 1) % n_x;
                let n_up = half * (lapse[idx(n, j)] + lapse[idx(n + 1, j)]);
                let n_dn = half * (lapse[idx(n, j)] + lapse[idx(n - 1, j)]);
                let t_term = ((scale[idx(n + 1, j)] - scale[idx(n, j)]) / (dt * n_up)
                    - (scale[idx(n, j)] - scale[idx(n - 1, j)]) / (dt * n_dn))
                    / dt;
                let a_r = half * (scale[idx(n, j)] + scale[idx(n, jp)]);
                let a_l = half * (scale[idx(n, j)] + scale[idx(n, jm)]);
                let x_term = ((lapse[idx(n, jp)] - lapse[idx(n, j)]) / (dx * a_r)
                    - (lapse[idx(n, j)] - lapse[idx(n, jm)]) / (dx * a_l))
                    / dx;
                let r = -(two / (lapse[idx(n, j)] * scale[idx(n, j)])) * (t_term - x_term);
                v[idx(n, j)] = m_sq + xi * r;
            }
        }
    }
    let wv = w.iter().zip(&v).map(|(a, b)| *a * *b).collect();
    Coefficients { c_half, d_link, w, v, wv }
}

/// A globally hyperbolic lattice spacetime in standard split form.
#[derive(Debug, Clone)]
pub struct Spacetime {
    lat: LatticeSpec,
    kg: KgParams,
    beta: Grid<f64>,
    a: Grid<f64>,
    pub(crate) coeffs: Coefficients<f64>,
}

impl PartialEq for Spacetime {
    fn eq(&self, other: &Self) -> bool {
        self.lat == other.lat && self.kg == other.kg && self.beta == other.beta && self.a == other.a
    }
}

impl Spacetime {
    pub fn new(lat: LatticeSpec, kg: KgParams, beta: Grid<f64>, a: Grid<f64>) -> Result<Self> {
        validate(&lat, &kg, &beta, &a)?;
        let coeffs = coefficients(&lat, &kg, &|n, j| beta[(n, j)], &|n, j| a[(n, j)]);
        Ok(Spacetime { lat, kg, beta, a, coeffs })
    }

    /// Samples `(β, a)` from a profile in continuum coordinates `(t, x)`.
    pub fn from_profile(lat: LatticeSpec, kg: KgParams, profile: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let beta = Grid::from_fn(lat.n_t, lat.n_x, |n, j| profile(lat.t(n), lat.x(j)).0);
        let a = Grid::from_fn(lat.n_t, lat.n_x, |n, j| profile(lat.t(n), lat.x(j)).1);
        Spacetime::new(lat, kg, beta, a)
    }

    /// Spatially flat expanding universe: `β = 1` and `a(t)` rising smoothly
    /// from `a0` to `a1` between `t0` and `t1`.
    pub fn cosmological(lat: LatticeSpec, kg: KgParams, a0: f64, a1: f64, t0: f64, t1: f64) -> Result<Self> {
        Spacetime::from_profile(lat, kg, |t, _| (1.0, a0 + (a1 - a0) * smoothstep((t - t0) / (t1 - t0))))
    }

    pub fn flat(lat: LatticeSpec, kg: KgParams) -> Result<Self> {
        Spacetime::from_profile(lat, kg, |_, _| (1.0, 1.0))
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lat
    }
    pub fn kg(&self) -> &KgParams {
        &self.kg
    }
    pub fn beta(&self) -> &Grid<f64> {
        &self.beta
    }
    pub fn a(&self) -> &Grid<f64> {
        &self.a
    }
    pub fn n_t(&self) -> usize {
        self.lat.n_t
    }
    pub fn n_x(&self) -> usize {
        self.lat.n_x
    }
    pub fn dt(&self) -> f64 {
        self.lat.dt
    }
    pub fn dx(&self) -> f64 {
        self.lat.dx
    }

    /// Volume weight `√|g| = a√β` at a node.
    pub fn volume(&self, n: usize, j: usize) -> f64 {
        self.coeffs.w[n * self.lat.n_x + j]
    }

    /// `m² + ξR` at a node.
    pub fn potential(&self, n: usize, j: usize) -> f64 {
        self.coeffs.v[n * self.lat.n_x + j]
    }

    /// Same lattice, different field parameters.
    pub fn with_kg(&self, kg: KgParams) -> Result<Self> {
        Spacetime::new(self.lat, kg, self.beta.clone(), self.a.clone())
    }

    /// True when `β ≡ 1` and `a` does not depend on time.
    pub fn is_ultrastatic(&self) -> bool {
        let tol = 1e-14;
        let a0 = self.a.row(0);
        (0..self.n_t()).all(|n| {
            self.beta.row(n).iter().all(|b| (b - 1.0).abs() <= tol)
                && self.a.row(n).iter().zip(a0).all(|(x, y)| (x - y).abs() <= tol)
        })
    }

    /// Metric components agree on the rows `rows` of `self` and `other`
    /// starting at row `offset` of `other`.
    pub fn agrees_with(&self, rows: Range<usize>, other: &Spacetime, offset: usize, tol: f64) -> bool {
        if self.n_x() != other.n_x() || (self.dx() - other.dx()).abs() > tol || (self.dt() - other.dt()).abs() > tol {
            return false;
        }
        rows.clone().all(|n| {
            let m = n + offset;
            m < other.n_t()
                && self.beta.row(n).iter().zip(other.beta.row(m)).all(|(x, y)| (x - y).abs() <= tol)
                && self.a.row(n).iter().zip(other.a.row(m)).all(|(x, y)| (x - y).abs() <= tol)
        })
    }
}

fn validate(lat: &LatticeSpec, kg: &KgParams, beta: &Grid<f64>, a: &Grid<f64>) -> Result<()> {
    if lat.n_t < 2 * lat.n_pad + 3 || lat.n_x < 3 {
        return Err(Error::InvalidSpacetime(format!(
            "grid {}x{} too small for n_pad = {}",
            lat.n_t, lat.n_x, lat.n_pad
        )));
    }
    if !(lat.dt > 0.0 && lat.dx > 0.0) {
        return Err(Error::InvalidSpacetime("lattice spacings must be positive".into()));
    }
    if !(kg.m_sq >= 0.0) {
        return Err(Error::InvalidSpacetime(format!("m_sq = {} < 0", kg.m_sq)));
    }
    for g in [beta, a] {
        if g.n_t() != lat.n_t || g.n_x() != lat.n_x {
            return Err(Error::LengthMismatch { left: g.n_t() * g.n_x(), right: lat.n_t * lat.n_x });
        }
    }
    let mut min_ratio = f64::INFINITY;
    for (b, s) in beta.as_slice().iter().zip(a.as_slice()) {
        if !(*b > 0.0) || !(*s > 0.0) || !b.is_finite() || !s.is_finite() {
            return Err(Error::InvalidSpacetime(format!("signature violated: beta = {b}, a = {s}")));
        }
        min_ratio = min_ratio.min(s / b.sqrt());
    }
    let bound = lat.cfl_factor * lat.dx * min_ratio;
    if lat.dt > bound * (1.0 + 1e-12) {
        return Err(Error::InvalidSpacetime(format!("CFL violated: dt = {} > {}", lat.dt, bound)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Diamond,
    Slab,
    Custom,
}

/// A set of lattice points with O(1) membership.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    n_t: usize,
    n_x: usize,
    mask: Vec<bool>,
    kind: RegionKind,
}

impl Region {
    pub fn empty(lat: &LatticeSpec) -> Self {
        Region { n_t: lat.n_t, n_x: lat.n_x, mask: vec![false; lat.n_t * lat.n_x], kind: RegionKind::Custom }
    }

    pub fn full(lat: &LatticeSpec) -> Self {
        Region { n_t: lat.n_t, n_x: lat.n_x, mask: vec![true; lat.n_t * lat.n_x], kind: RegionKind::Slab }
    }

    pub fn from_points(lat: &LatticeSpec, points: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut r = Region::empty(lat);
        for (n, j) in points {
            r.insert(n, j);
        }
        r
    }

    pub fn from_predicate(lat: &LatticeSpec, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut r = Region::empty(lat);
        for n in 0..lat.n_t {
            for j in 0..lat.n_x {
                if f(n, j) {
                    r.insert(n, j);
                }
            }
        }
        r
    }

    /// Full rows `rows`.
    pub fn slab(lat: &LatticeSpec, rows: Range<usize>) -> Self {
        let mut r = Region::from_predicate(lat, |n, _| rows.contains(&n));
        r.kind = RegionKind::Slab;
        r
    }

    /// Rows `rows` × sites `center - half_width ..= center + half_width` (periodic).
    pub fn rect(lat: &LatticeSpec, rows: Range<usize>, center: usize, half_width: usize) -> Self {
        Region::from_predicate(lat, |n, j| {
            rows.contains(&n) && lat.site_offset(j, center).unsigned_abs() <= half_width
        })
    }

    /// Lattice diamond `|n - n0| + |j - j0| ≤ radius`: the development of the
    /// base interval of half-width `radius` on row `n0`.
    pub fn diamond(lat: &LatticeSpec, n0: usize, j0: usize, radius: usize) -> Self {
        let mut r = Region::from_predicate(lat, |n, j| {
            (n as isize - n0 as isize).unsigned_abs() + lat.site_offset(j, j0).unsigned_abs() <= radius
        });
        r.kind = RegionKind::Diamond;
        r
    }

    fn from_grids(d_beta: &Grid<f64>, d_a: &Grid<f64>) -> Self {
        Region {
            n_t: d_beta.n_t(),
            n_x: d_beta.n_x(),
            mask: d_beta.as_slice().iter().zip(d_a.as_slice()).map(|(b, a)| *b != 0.0 || *a != 0.0).collect(),
            kind: RegionKind::Custom,
        }
    }

    pub fn with_kind(mut self, kind: RegionKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn contains(&self, n: usize, j: usize) -> bool {
        n < self.n_t && j < self.n_x && self.mask[n * self.n_x + j]
    }

    pub fn insert(&mut self, n: usize, j: usize) {
        if n < self.n_t && j < self.n_x {
            self.mask[n * self.n_x + j] = true;
        }
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    /// Points in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n_x = self.n_x;
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i / n_x, i % n_x))
    }

    pub fn row_mask(&self, n: usize) -> &[bool] {
        &self.mask[n * self.n_x..(n + 1) * self.n_x]
    }

    /// Smallest and largest occupied rows.
    pub fn row_span(&self) -> Option<(usize, usize)> {
        let rows: Vec<usize> = (0..self.n_t).filter(|&n| self.row_mask(n).iter().any(|&b| b)).collect();
        Some((*rows.first()?, *rows.last()?))
    }

    fn zip_with(&self, other: &Region, f: impl Fn(bool, bool) -> bool) -> Region {
        assert_eq!((self.n_t, self.n_x), (other.n_t, other.n_x), "regions on different lattices");
        Region {
            n_t: self.n_t,
            n_x: self.n_x,
            mask: self.mask.iter().zip(&other.mask).map(|(&a, &b)| f(a, b)).collect(),
            kind: RegionKind::Custom,
        }
    }

    pub fn union(&self, other: &Region) -> Region {
        self.zip_with(other, |a, b| a || b)
    }
    pub fn intersection(&self, other: &Region) -> Region {
        self.zip_with(other, |a, b| a && b)
    }
    pub fn difference(&self, other: &Region) -> Region {
        self.zip_with(other, |a, b| a && !b)
    }
    pub fn complement(&self) -> Region {
        Region {
            n_t: self.n_t,
            n_x: self.n_x,
            mask: self.mask.iter().map(|&b| !b).collect(),
            kind: RegionKind::Custom,
        }
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint(&self, other: &Region) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !(a && b))
    }

    /// One-cell dilation in space and time (8-neighbourhood, periodic in space).
    pub fn dilate(&self) -> Region {
        let mut out = self.clone();
        out.kind = RegionKind::Custom;
        for (n, j) in self.points() {
            for dn in -1isize..=1 {
                let m = n as isize + dn;
                if m < 0 || m >= self.n_t as isize {
                    continue;
                }
                for dj in -1isize..=1 {
                    let k = (j as isize + dj).rem_euclid(self.n_x as isize) as usize;
                    out.mask[m as usize * self.n_x + k] = true;
                }
            }
        }
        out
    }

    /// Points whose four nearest neighbours (two in time, two in space) lie in the region.
    pub fn erode_cross(&self) -> Region {
        let mut out = self.clone();
        out.kind = RegionKind::Custom;
        for (n, j) in self.points() {
            let jp = (j + 1) % self.n_x;
            let jm = (j + self.n_x - 1) % self.n_x;
            let keep = n > 0
                && n + 1 < self.n_t
                && self.contains(n - 1, j)
                && self.contains(n + 1, j)
                && self.contains(n, jp)
                && self.contains(n, jm);
            if !keep {
                out.mask[n * self.n_x + j] = false;
            }
        }
        out
    }

    /// Points whose full 8-neighbourhood lies in the region.
    pub fn erode(&self) -> Region {
        self.complement().dilate().complement()
    }

    /// Restriction to rows `rows`.
    pub fn restrict_rows(&self, rows: Range<usize>) -> Region {
        let mut out = self.clone();
        out.kind = RegionKind::Custom;
        for n in 0..self.n_t {
            if !rows.contains(&n) {
                out.mask[n * self.n_x..(n + 1) * self.n_x].iter_mut().for_each(|b| *b = false);
            }
        }
        out
    }

    /// Rigid translation in time (cells shifted off the window are dropped).
    pub fn shift_rows(&self, lat: &LatticeSpec, by: isize) -> Region {
        Region::from_points(
            lat,
            self.points().filter_map(|(n, j)| {
                let m = n as isize + by;
                (m >= 0 && (m as usize) < lat.n_t).then_some((m as usize, j))
            }),
        )
    }
}

fn spread_row(src: &[bool], dst: &mut [bool]) {
    let n_x = src.len();
    for j in 0..n_x {
        if src[j] {
            dst[(j + n_x - 1) % n_x] = true;
            dst[j] = true;
            dst[(j + 1) % n_x] = true;
        }
    }
}

fn check_lattice(st: &Spacetime, s: &Region) -> Result<()> {
    if s.n_t != st.n_t() || s.n_x != st.n_x() {
        return Err(Error::LengthMismatch { left: s.n_t * s.n_x, right: st.n_t() * st.n_x() });
    }
    if s.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(())
}

/// Lattice causal future `J⁺(S)`: points reachable from `S` by steps
/// `(n, j) → (n + 1, j')` with `|j' − j| ≤ 1`.
pub fn causal_future(st: &Spacetime, s: &Region) -> Result<Region> {
    check_lattice(st, s)?;
    let mut out = s.clone().with_kind(RegionKind::Custom);
    let n_x = s.n_x;
    for n in 1..s.n_t {
        let (lo, hi) = out.mask.split_at_mut(n * n_x);
        spread_row(&lo[(n - 1) * n_x..], &mut hi[..n_x]);
    }
    Ok(out)
}

/// Lattice causal past `J⁻(S)`.
pub fn causal_past(st: &Spacetime, s: &Region) -> Result<Region> {
    check_lattice(st, s)?;
    let mut out = s.clone().with_kind(RegionKind::Custom);
    let n_x = s.n_x;
    for n in (0..s.n_t - 1).rev() {
        let (lo, hi) = out.mask.split_at_mut((n + 1) * n_x);
        spread_row(&hi[..n_x], &mut lo[n * n_x..]);
    }
    Ok(out)
}

/// Closed causal hull `(J⁺(O) ∪ J⁻(O))` dilated by one cell.
pub fn causal_hull(st: &Spacetime, o: &Region) -> Result<Region> {
    Ok(causal_future(st, o)?.union(&causal_past(st, o)?).dilate())
}

/// Open causal complement `O′ = M \ hull(O)`.
pub fn causal_complement(st: &Spacetime, o: &Region) -> Result<Region> {
    Ok(causal_hull(st, o)?.complement())
}

/// `J⁺(O) ∩ J⁻(O) ⊆ O`.
pub fn is_causally_convex(st: &Spacetime, o: &Region) -> Result<bool> {
    let hull = causal_future(st, o)?.intersection(&causal_past(st, o)?);
    Ok(hull.is_subset(o))
}

/// Lattice Cauchy development of a base set lying on a single time level:
/// points all of whose inextendible lattice causal paths meet the base.
pub fn cauchy_development(st: &Spacetime, base: &Region) -> Result<Region> {
    check_lattice(st, base)?;
    let (n0, n1) = base.row_span().ok_or(Error::EmptyRegion)?;
    if n0 != n1 {
        return Err(Error::BaseNotOnSurface);
    }
    let n_x = base.n_x;
    let mut out = base.clone().with_kind(RegionKind::Diamond);
    let erode_row = |src: &[bool]| -> Vec<bool> {
        (0..n_x).map(|j| src[(j + n_x - 1) % n_x] && src[j] && src[(j + 1) % n_x]).collect()
    };
    let mut row: Vec<bool> = base.row_mask(n0).to_vec();
    for n in n0 + 1..base.n_t {
        row = erode_row(&row);
        out.mask[n * n_x..(n + 1) * n_x].copy_from_slice(&row);
    }
    let mut row: Vec<bool> = base.row_mask(n0).to_vec();
    for n in (0..n0).rev() {
        row = erode_row(&row);
        out.mask[n * n_x..(n + 1) * n_x].copy_from_slice(&row);
    }
    Ok(out)
}

/// Relation between two regions for commutator checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausalRelation {
    /// `O2` lies in the open causal complement of `O1`.
    Disjoint,
    /// `O2` meets the closed hull of `O1` only on its boundary cells.
    Touching,
    Related,
}

/// Classifies `o2` relative to `o1`. Boundary cells are those of the closed
/// hull that are not in the (undilated) cone of the scheme's influence.
pub fn causal_relation(st: &Spacetime, o1: &Region, o2: &Region) -> Result<CausalRelation> {
    let hull = causal_hull(st, o1)?;
    if o2.is_disjoint(&hull) {
        return Ok(CausalRelation::Disjoint);
    }
    let cone = causal_future(st, o1)?.union(&causal_past(st, o1)?);
    if o2.is_disjoint(&cone) {
        return Ok(CausalRelation::Touching);
    }
    // the scheme reaches k - 1 sites after k steps: the outermost ring of the
    // cone that is not the region itself is still outside the influence set
    let influence = scheme_influence(st, o1);
    if o2.is_disjoint(&influence) {
        Ok(CausalRelation::Touching)
    } else {
        Ok(CausalRelation::Related)
    }
}

/// Cells the explicit scheme can reach from `o`: `o` itself, plus rows at
/// distance `k ≥ 1` within `k − 1` sites.
fn scheme_influence(st: &Spacetime, o: &Region) -> Region {
    let lat = st.lattice();
    let n_x = lat.n_x;
    let mut out = o.clone().with_kind(RegionKind::Custom);
    // forward
    let mut reach = vec![false; n_x];
    let mut prev_src = vec![false; n_x];
    for n in 0..lat.n_t {
        let mut next = vec![false; n_x];
        // cells reached at this row from sources at earlier rows
        spread_row(&reach, &mut next);
        // sources from the row directly below reach only their own column
        for j in 0..n_x {
            if prev_src[j] {
                next[j] = true;
            }
        }
        for j in 0..n_x {
            if next[j] {
                out.mask[n * n_x + j] = true;
            }
        }
        reach = next;
        prev_src = o.row_mask(n).to_vec();
    }
    let mut reach = vec![false; n_x];
    let mut prev_src = vec![false; n_x];
    for n in (0..lat.n_t).rev() {
        let mut next = vec![false; n_x];
        spread_row(&reach, &mut next);
        for j in 0..n_x {
            if prev_src[j] {
                next[j] = true;
            }
        }
        for j in 0..n_x {
            if next[j] {
                out.mask[n * n_x + j] = true;
            }
        }
        reach = next;
        prev_src = o.row_mask(n).to_vec();
    }
    out
}

/// C^∞ bump supported on `|r| < 1`, equal to 1 at the origin.
pub fn smooth_bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// C¹ smoothstep, 0 for `s ≤ 0` and 1 for `s ≥ 1`.
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Compactly supported change `(δβ, δa)` of the metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPerturbation {
    d_beta: Grid<f64>,
    d_a: Grid<f64>,
    support: Region,
}

impl MetricPerturbation {
    pub fn new(lat: &LatticeSpec, d_beta: Grid<f64>, d_a: Grid<f64>) -> Result<Self> {
        if d_beta.n_t() != lat.n_t || d_beta.n_x() != lat.n_x || d_a.n_t() != lat.n_t || d_a.n_x() != lat.n_x {
            return Err(Error::LengthMismatch { left: d_beta.as_slice().len(), right: lat.n_t * lat.n_x });
        }
        let support = Region::from_grids(&d_beta, &d_a);
        let allowed = lat.interior_rows();
        if support.points().any(|(n, _)| !allowed.contains(&n)) {
            return Err(Error::SupportInPadding { n_pad: lat.n_pad });
        }
        Ok(MetricPerturbation { d_beta, d_a, support })
    }

    pub fn zero(lat: &LatticeSpec) -> Self {
        MetricPerturbation {
            d_beta: Grid::filled(lat.n_t, lat.n_x, 0.0),
            d_a: Grid::filled(lat.n_t, lat.n_x, 0.0),
            support: Region::empty(lat),
        }
    }

    /// Product bump `amp · b((t − t0)/rt) · b((x − x0)/rx)` in `δβ` and `δa`.
    pub fn bump(lat: &LatticeSpec, spec: &BumpSpec) -> Result<Self> {
        let shape = |n: usize, j: usize| {
            let mut sep = (lat.x(j) - spec.x0).rem_euclid(lat.circumference());
            if sep > 0.5 * lat.circumference() {
                sep -= lat.circumference();
            }
            smooth_bump((lat.t(n) - spec.t0) / spec.rt) * smooth_bump(sep / spec.rx)
        };
        let d_beta = Grid::from_fn(lat.n_t, lat.n_x, |n, j| spec.amp_beta * shape(n, j));
        let d_a = Grid::from_fn(lat.n_t, lat.n_x, |n, j| spec.amp_a * shape(n, j));
        MetricPerturbation::new(lat, d_beta, d_a)
    }

    pub fn d_beta(&self) -> &Grid<f64> {
        &self.d_beta
    }
    pub fn d_a(&self) -> &Grid<f64> {
        &self.d_a
    }
    pub fn support(&self) -> &Region {
        &self.support
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let d_beta = self.d_beta.map(|v| v * s);
        let d_a = self.d_a.map(|v| v * s);
        let support = Region::from_grids(&d_beta, &d_a);
        MetricPerturbation { d_beta, d_a, support }
    }

    pub fn add(&self, other: &MetricPerturbation) -> Self {
        let d_beta = Grid::from_fn(self.d_beta.n_t(), self.d_beta.n_x(), |n, j| {
            self.d_beta[(n, j)] + other.d_beta[(n, j)]
        });
        let d_a = Grid::from_fn(self.d_a.n_t(), self.d_a.n_x(), |n, j| self.d_a[(n, j)] + other.d_a[(n, j)]);
        let support = Region::from_grids(&d_beta, &d_a);
        MetricPerturbation { d_beta, d_a, support }
    }

    /// Multiplies the perturbation by the indicator of `region`.
    pub fn masked(&self, region: &Region) -> Self {
        let d_beta = Grid::from_fn(self.d_beta.n_t(), self.d_beta.n_x(), |n, j| {
            if region.contains(n, j) {
                self.d_beta[(n, j)]
            } else {
                0.0
            }
        });
        let d_a = Grid::from_fn(self.d_a.n_t(), self.d_a.n_x(), |n, j| {
            if region.contains(n, j) {
                self.d_a[(n, j)]
            } else {
                0.0
            }
        });
        let support = Region::from_grids(&d_beta, &d_a);
        MetricPerturbation { d_beta, d_a, support }
    }
}

/// Parameters of a product bump perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpSpec {
    pub t0: f64,
    pub x0: f64,
    pub rt: f64,
    pub rx: f64,
    pub amp_beta: f64,
    pub amp_a: f64,
}

/// `M[h]`: the spacetime with `β + δβ`, `a + δa`.
pub fn perturb(st: &Spacetime, h: &MetricPerturbation) -> Result<Spacetime> {
    if h.is_zero() {
        return Ok(st.clone());
    }
    let lat = *st.lattice();
    let beta = Grid::from_fn(lat.n_t, lat.n_x, |n, j| st.beta()[(n, j)] + h.d_beta[(n, j)]);
    let a = Grid::from_fn(lat.n_t, lat.n_x, |n, j| st.a()[(n, j)] + h.d_a[(n, j)]);
    Spacetime::new(lat, *st.kg(), beta, a).map_err(|e| Error::PerturbationTooLarge(e.to_string()))
}

/// Vector field `X = X^t ∂_t + X^x ∂_x` sampled on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub xt: Grid<f64>,
    pub xx: Grid<f64>,
}

impl VectorField {
    pub fn from_fn(lat: &LatticeSpec, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        VectorField {
            xt: Grid::from_fn(lat.n_t, lat.n_x, |n, j| f(lat.t(n), lat.x(j)).0),
            xx: Grid::from_fn(lat.n_t, lat.n_x, |n, j| f(lat.t(n), lat.x(j)).1),
        }
    }
}

/// Discrete `£_X g` split into the diagonal part carried by
/// [`MetricPerturbation`] and the discarded `dt⊗dx` component.
#[derive(Debug, Clone)]
pub struct LieDerivative {
    pub perturbation: MetricPerturbation,
    /// `(£_X g)_{tx} = β ∂_x X^t − a² ∂_t X^x`.
    pub off_diagonal: Grid<f64>,
}

impl LieDerivative {
    pub fn max_off_diagonal(&self) -> f64 {
        self.off_diagonal.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `£_X g` by centred differences. `δβ = (£_X g)_{tt}` and `δa` is the
/// first-order change of `a` induced by `(£_X g)_{xx} = −δ(a²)`.
pub fn lie_perturbation(st: &Spacetime, x: &VectorField) -> Result<LieDerivative> {
    let lat = *st.lattice();
    let inner = (lat.n_pad + 1)..lat.n_t.saturating_sub(lat.n_pad + 1);
    for n in 0..lat.n_t {
        if inner.contains(&n) {
            continue;
        }
        if x.xt.row(n).iter().chain(x.xx.row(n)).any(|v| *v != 0.0) {
            return Err(Error::SupportInPadding { n_pad: lat.n_pad });
        }
    }
    let (beta, a) = (st.beta(), st.a());
    let dt_c = |g: &Grid<f64>, n: usize, j: usize| {
        if n == 0 || n + 1 >= lat.n_t {
            0.0
        } else {
            (g[(n + 1, j)] - g[(n - 1, j)]) / (2.0 * lat.dt)
        }
    };
    let dx_c = |g: &Grid<f64>, n: usize, j: usize| {
        let jp = (j + 1) % lat.n_x;
        let jm = (j + lat.n_x - 1) % lat.n_x;
        (g[(n, jp)] - g[(n, jm)]) / (2.0 * lat.dx)
    };
    let mut d_beta = Grid::filled(lat.n_t, lat.n_x, 0.0);
    let mut d_a = Grid::filled(lat.n_t, lat.n_x, 0.0);
    let mut off = Grid::filled(lat.n_t, lat.n_x, 0.0);
    for n in inner {
        for j in 0..lat.n_x {
            let (xt, xx) = (x.xt[(n, j)], x.xx[(n, j)]);
            let b = beta[(n, j)];
            let s = a[(n, j)];
            d_beta[(n, j)] = xt * dt_c(beta, n, j) + xx * dx_c(beta, n, j) + 2.0 * b * dt_c(&x.xt, n, j);
            d_a[(n, j)] = xt * dt_c(a, n, j) + xx * dx_c(a, n, j) + s * dx_c(&x.xx, n, j);
            off[(n, j)] = b * dx_c(&x.xt, n, j) - s * s * dt_c(&x.xx, n, j);
        }
    }
    let perturbation = MetricPerturbation::new(&lat, d_beta, d_a)?;
    Ok(LieDerivative { perturbation, off_diagonal: off })
}

/// A timelike lattice curve with proper-time increments.
#[derive(Debug, Clone, PartialEq)]
pub struct Worldline {
    points: Vec<(usize, usize)>,
    dtau: Vec<f64>,
}

impl Worldline {
    pub fn new(st: &Spacetime, points: Vec<(usize, usize)>) -> Result<Self> {
        let lat = st.lattice();
        let mut dtau = Vec::with_capacity(points.len().saturating_sub(1));
        for (k, w) in points.windows(2).enumerate() {
            let ((n0, j0), (n1, j1)) = (w[0], w[1]);
            if n1 != n0 + 1 {
                return Err(Error::NotTimelike(k));
            }
            let b = 0.5 * (st.beta()[(n0, j0)] + st.beta()[(n1, j1)]);
            let s = 0.5 * (st.a()[(n0, j0)] + st.a()[(n1, j1)]);
            let dxs = lat.site_offset(j1, j0) as f64 * lat.dx;
            let q = b * lat.dt * lat.dt - s * s * dxs * dxs;
            if !(q > 0.0) {
                return Err(Error::NotTimelike(k));
            }
            dtau.push(q.sqrt());
        }
        Ok(Worldline { points, dtau })
    }

    /// Observer at rest at site `j` over the given rows.
    pub fn stationary(st: &Spacetime, j: usize, rows: Range<usize>) -> Result<Self> {
        Worldline::new(st, rows.map(|n| (n, j)).collect())
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn proper_time_steps(&self) -> &[f64] {
        &self.dtau
    }

    /// Proper time at each point, starting from zero.
    pub fn proper_times(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        out.push(0.0);
        for d in &self.dtau {
            acc += d;
            out.push(acc);
        }
        out
    }

    pub fn is_stationary(&self) -> bool {
        self.points.windows(2).all(|w| w[0].1 == w[1].1)
    }
}

/// Angular wave number of the `k`-th Fourier mode on the circle.
pub fn wave_number(lat: &LatticeSpec, k: i64) -> f64 {
    2.0 * PI * k as f64 / lat.circumference()
}
