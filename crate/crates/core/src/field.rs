//! The Klein–Gordon operator on a lattice spacetime, its retarded and
//! advanced Green operators, the commutator function `E = E⁻ − E⁺`
//! (advanced minus retarded), Cauchy data and the quotient map.
//!
//! The discrete operator is `A = w P` with
//!
//! ```text
//! (A u)_{n,j} = [c_{n+½,j}(u_{n+1,j} − u_{n,j}) − c_{n−½,j}(u_{n,j} − u_{n−1,j})] / dt²
//!             − [d_{n,j+½}(u_{n,j+1} − u_{n,j}) − d_{n,j−½}(u_{n,j} − u_{n,j−1})] / dx²
//!             + w_{n,j} V_{n,j} u_{n,j}
//! ```
//!
//! which is symmetric for the plain sum over rows `1..n_t−1`. Equations are
//! imposed on those rows only; rows `0` and `n_t − 1` carry no equation.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{smooth_bump, smoothstep, Coefficients, Grid, LatticeSpec, Region, Spacetime};

/// Compactly supported source on the lattice, vanishing on the padding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    values: Grid<Complex64>,
    support: Region,
}

impl TestFunction {
    pub fn new(st: &Spacetime, values: Grid<Complex64>) -> Result<Self> {
        let lat = st.lattice();
        if values.n_t() != lat.n_t || values.n_x() != lat.n_x {
            return Err(Error::LengthMismatch { left: values.as_slice().len(), right: lat.n_t * lat.n_x });
        }
        let support = Region::from_predicate(lat, |n, j| values[(n, j)] != Complex64::new(0.0, 0.0));
        let rows = lat.interior_rows();
        if support.points().any(|(n, _)| !rows.contains(&n)) {
            return Err(Error::SupportInPadding { n_pad: lat.n_pad });
        }
        Ok(TestFunction { values, support })
    }

    pub fn from_real(st: &Spacetime, values: &Grid<f64>) -> Result<Self> {
        TestFunction::new(st, values.map(|v| Complex64::new(*v, 0.0)))
    }

    pub fn zero(st: &Spacetime) -> Self {
        let lat = st.lattice();
        TestFunction { values: Grid::filled(lat.n_t, lat.n_x, Complex64::new(0.0, 0.0)), support: Region::empty(lat) }
    }

    /// Unit value at a single lattice point.
    pub fn point(st: &Spacetime, n: usize, j: usize) -> Result<Self> {
        let lat = st.lattice();
        let mut g = Grid::filled(lat.n_t, lat.n_x, 0.0);
        g[(n, j)] = 1.0;
        TestFunction::from_real(st, &g)
    }

    /// Smooth product bump centred at `(t0, x0)` with radii `(rt, rx)` in continuum units.
    pub fn bump(st: &Spacetime, t0: f64, x0: f64, rt: f64, rx: f64) -> Result<Self> {
        let lat = st.lattice();
        let l = lat.circumference();
        let g = Grid::from_fn(lat.n_t, lat.n_x, |n, j| {
            let mut sep = (lat.x(j) - x0).rem_euclid(l);
            if sep > 0.5 * l {
                sep -= l;
            }
            smooth_bump((lat.t(n) - t0) / rt) * smooth_bump(sep / rx)
        });
        TestFunction::from_real(st, &g)
    }

    /// Independent uniform values in `[-1, 1]` on `region` (padding rows excluded).
    pub fn random_real<R: Rng + ?Sized>(st: &Spacetime, region: &Region, rng: &mut R) -> Result<Self> {
        let lat = st.lattice();
        let rows = lat.interior_rows();
        let mut g = Grid::filled(lat.n_t, lat.n_x, 0.0);
        for (n, j) in region.points() {
            if rows.contains(&n) {
                g[(n, j)] = rng.random_range(-1.0..1.0);
            }
        }
        TestFunction::from_real(st, &g)
    }

    /// Random complex values on `region`.
    pub fn random_complex<R: Rng + ?Sized>(st: &Spacetime, region: &Region, rng: &mut R) -> Result<Self> {
        let lat = st.lattice();
        let rows = lat.interior_rows();
        let mut g = Grid::filled(lat.n_t, lat.n_x, Complex64::new(0.0, 0.0));
        for (n, j) in region.points() {
            if rows.contains(&n) {
                g[(n, j)] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        TestFunction::new(st, g)
    }

    pub fn values(&self) -> &Grid<Complex64> {
        &self.values
    }
    pub fn support(&self) -> &Region {
        &self.support
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.as_slice().iter().map(|z| z.re).collect()
    }
    pub fn im(&self) -> Vec<f64> {
        self.values.as_slice().iter().map(|z| z.im).collect()
    }

    pub fn is_real(&self) -> bool {
        self.values.as_slice().iter().all(|z| z.im == 0.0)
    }

    pub fn conj(&self) -> Self {
        TestFunction { values: self.values.map(|z| z.conj()), support: self.support.clone() }
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        let values = self.values.map(|z| z * alpha);
        let support = support_of(&values);
        TestFunction { values, support }
    }

    pub fn add(&self, other: &TestFunction) -> Self {
        let data = self.values.as_slice().iter().zip(other.values.as_slice()).map(|(a, b)| a + b).collect();
        let values = Grid::from_vec(self.values.n_t(), self.values.n_x(), data).expect("same lattice");
        let support = support_of(&values);
        TestFunction { values, support }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.as_slice().iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Builds a test function without the padding check.
    pub(crate) fn from_raw_parts(lat: &LatticeSpec, re: &[f64], im: &[f64]) -> Self {
        let data = re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        let values = Grid::from_vec(lat.n_t, lat.n_x, data).expect("lattice-sized buffer");
        let support = support_of(&values);
        TestFunction { values, support }
    }
}

fn support_of(values: &Grid<Complex64>) -> Region {
    let lat = LatticeSpec { n_t: values.n_t(), n_x: values.n_x(), ..Default::default() };
    Region::from_predicate(&lat, |n, j| values[(n, j)] != Complex64::new(0.0, 0.0))
}

/// Field configuration on the whole lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub values: Grid<Complex64>,
}

impl SolutionField {
    pub fn from_real(values: &Grid<f64>) -> Self {
        SolutionField { values: values.map(|v| Complex64::new(*v, 0.0)) }
    }

    pub fn from_fn(lat: &LatticeSpec, f: impl Fn(usize, usize) -> Complex64) -> Self {
        SolutionField { values: Grid::from_fn(lat.n_t, lat.n_x, f) }
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.as_slice().iter().map(|z| z.re).collect()
    }
    pub fn im(&self) -> Vec<f64> {
        self.values.as_slice().iter().map(|z| z.im).collect()
    }

    fn from_parts(lat: &LatticeSpec, re: &[f64], im: &[f64]) -> Self {
        let data = re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        SolutionField { values: Grid::from_vec(lat.n_t, lat.n_x, data).expect("lattice-sized buffer") }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.as_slice().iter().fold(0.0, |m, z| m.max(z.norm()))
    }
}

/// Field value and weighted momentum `π = (a/√β) ∂_t φ` on one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyData {
    pub phi: Vec<Complex64>,
    pub pi: Vec<Complex64>,
    pub surface: usize,
    pub dx: f64,
}

impl CauchyData {
    pub fn from_real(phi: &[f64], pi: &[f64], surface: usize, dx: f64) -> Self {
        CauchyData {
            phi: phi.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
            pi: pi.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
            surface,
            dx,
        }
    }

    /// Coordinates in the site basis: `φ` entries then `π` entries.
    pub fn to_vector(&self) -> Vec<Complex64> {
        self.phi.iter().chain(&self.pi).copied().collect()
    }

    pub fn from_vector(v: &[Complex64], surface: usize, dx: f64) -> Self {
        let n = v.len() / 2;
        CauchyData { phi: v[..n].to_vec(), pi: v[n..].to_vec(), surface, dx }
    }

    pub fn real_vector(&self) -> Vec<f64> {
        self.to_vector().iter().map(|z| z.re).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.phi.iter().chain(&self.pi).fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn norm(&self) -> f64 {
        self.phi.iter().chain(&self.pi).map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &CauchyData) -> CauchyData {
        CauchyData {
            phi: self.phi.iter().zip(&other.phi).map(|(a, b)| a - b).collect(),
            pi: self.pi.iter().zip(&other.pi).map(|(a, b)| a - b).collect(),
            surface: self.surface,
            dx: self.dx,
        }
    }
}

/// `σ(d₁, d₂) = Σ_x (φ₁π₂ − π₁φ₂) dx`.
pub fn symplectic_form(d1: &CauchyData, d2: &CauchyData) -> Result<Complex64> {
    if d1.phi.len() != d2.phi.len() || d1.pi.len() != d2.pi.len() || d1.phi.len() != d1.pi.len() {
        return Err(Error::LengthMismatch { left: d1.phi.len(), right: d2.phi.len() });
    }
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..d1.phi.len() {
        s += d1.phi[j] * d2.pi[j] - d1.pi[j] * d2.phi[j];
    }
    Ok(s * d1.dx)
}

/// The weighted operator `A = w P` of a spacetime.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteP<'a> {
    st: &'a Spacetime,
}

impl<'a> DiscreteP<'a> {
    pub fn new(st: &'a Spacetime) -> Self {
        DiscreteP { st }
    }

    /// `P u` on rows `1..n_t−1`, zero on the two boundary rows.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        apply_p_real(self.st, u)
    }

    /// `w P u`.
    pub fn apply_weighted(&self, u: &[f64]) -> Vec<f64> {
        let lat = self.st.lattice();
        let mut out = vec![0.0; u.len()];
        apply_a_rows(lat, &self.st.coeffs, u, &mut out, 1..lat.n_t - 1);
        out
    }

    pub fn weights(&self) -> &[f64] {
        &self.st.coeffs.w
    }

    /// `⟨u, v⟩_w = Σ w u v dt dx`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        weighted_inner(self.st, u, v)
    }
}

pub(crate) fn weighted_inner(st: &Spacetime, u: &[f64], v: &[f64]) -> f64 {
    let w = &st.coeffs.w;
    let mut s = 0.0;
    for i in 0..u.len() {
        s += w[i] * u[i] * v[i];
    }
    s * st.dt() * st.dx()
}

/// `(A u)` on the given rows, using arbitrary coefficient arrays of the stencil.
pub(crate) fn apply_stencil(
    lat: &LatticeSpec,
    c_half: &[f64],
    d_link: &[f64],
    wv: &[f64],
    u: &[f64],
    out: &mut [f64],
    rows: std::ops::Range<usize>,
) {
    let n_x = lat.n_x;
    let (idt2, idx2) = (1.0 / (lat.dt * lat.dt), 1.0 / (lat.dx * lat.dx));
    for n in rows {
        let (r, up, dn) = (n * n_x, (n + 1) * n_x, (n - 1) * n_x);
        for j in 0..n_x {
            let jp = if j + 1 == n_x { 0 } else { j + 1 };
            let jm = if j == 0 { n_x - 1 } else { j - 1 };
            let uc = u[r + j];
            let time = c_half[r + j] * (u[up + j] - uc) - c_half[dn + j] * (uc - u[dn + j]);
            let space = d_link[r + j] * (u[r + jp] - uc) - d_link[r + jm] * (uc - u[r + jm]);
            out[r + j] = time * idt2 - space * idx2 + wv[r + j] * uc;
        }
    }
}

fn apply_a_rows(lat: &LatticeSpec, c: &Coefficients<f64>, u: &[f64], out: &mut [f64], rows: std::ops::Range<usize>) {
    apply_stencil(lat, &c.c_half, &c.d_link, &c.wv, u, out, rows)
}

pub(crate) fn apply_p_real(st: &Spacetime, u: &[f64]) -> Vec<f64> {
    let lat = st.lattice();
    let mut out = vec![0.0; u.len()];
    apply_a_rows(lat, &st.coeffs, u, &mut out, 1..lat.n_t - 1);
    for (o, w) in out.iter_mut().zip(&st.coeffs.w) {
        *o /= w;
    }
    for j in 0..lat.n_x {
        out[j] = 0.0;
        out[(lat.n_t - 1) * lat.n_x + j] = 0.0;
    }
    out
}

/// Discrete `(□ + m² + ξR) u`, zero on the boundary rows.
pub fn apply_p(st: &Spacetime, u: &SolutionField) -> SolutionField {
    let lat = st.lattice();
    SolutionField::from_parts(lat, &apply_p_real(st, &u.re()), &apply_p_real(st, &u.im()))
}

/// Spatial part `X_n = [d(u_{j+1} − u_j) − d(u_j − u_{j−1})]/dx² − wV u` of row `n`.
#[inline]
fn spatial_row(lat: &LatticeSpec, c: &Coefficients<f64>, u: &[f64], n: usize, j: usize) -> f64 {
    let n_x = lat.n_x;
    let r = n * n_x;
    let jp = if j + 1 == n_x { 0 } else { j + 1 };
    let jm = if j == 0 { n_x - 1 } else { j - 1 };
    let uc = u[r + j];
    (c.d_link[r + j] * (u[r + jp] - uc) - c.d_link[r + jm] * (uc - u[r + jm])) / (lat.dx * lat.dx) - c.wv[r + j] * uc
}

/// Solves `A u = s` on rows `1..n_t−1` forward in time from `u₀ = u₁ = 0`.
/// `s` is the weighted source `w f`.
pub(crate) fn retarded_weighted(st: &Spacetime, s: &[f64]) -> Vec<f64> {
    let lat = st.lattice();
    let c = &st.coeffs;
    let n_x = lat.n_x;
    let dt2 = lat.dt * lat.dt;
    let mut u = vec![0.0; lat.n_t * n_x];
    let first = s.iter().position(|v| *v != 0.0).map(|i| i / n_x);
    let Some(first) = first else { return u };
    for n in first.max(1)..lat.n_t - 1 {
        for j in 0..n_x {
            let (r, up, dn) = (n * n_x + j, (n + 1) * n_x + j, (n - 1) * n_x + j);
            let rhs = s[r] + c.c_half[dn] * (u[r] - u[dn]) / dt2 + spatial_row(lat, c, &u, n, j);
            u[up] = u[r] + dt2 * rhs / c.c_half[r];
        }
    }
    u
}

/// Solves `A u = s` on rows `1..n_t−1` backward in time from vanishing top rows.
pub(crate) fn advanced_weighted(st: &Spacetime, s: &[f64]) -> Vec<f64> {
    let lat = st.lattice();
    let c = &st.coeffs;
    let n_x = lat.n_x;
    let dt2 = lat.dt * lat.dt;
    let mut u = vec![0.0; lat.n_t * n_x];
    let last = s.iter().rposition(|v| *v != 0.0).map(|i| i / n_x);
    let Some(last) = last else { return u };
    for n in (1..=last.min(lat.n_t - 2)).rev() {
        for j in 0..n_x {
            let (r, up, dn) = (n * n_x + j, (n + 1) * n_x + j, (n - 1) * n_x + j);
            let rhs = c.c_half[r] * (u[up] - u[r]) / dt2 - spatial_row(lat, c, &u, n, j) - s[r];
            u[dn] = u[r] - dt2 * rhs / c.c_half[dn];
        }
    }
    u
}

fn weighted_source(st: &Spacetime, f: &[f64]) -> Vec<f64> {
    f.iter().zip(&st.coeffs.w).map(|(a, b)| a * b).collect()
}

pub(crate) fn retarded_real(st: &Spacetime, f: &[f64]) -> Vec<f64> {
    retarded_weighted(st, &weighted_source(st, f))
}

pub(crate) fn advanced_real(st: &Spacetime, f: &[f64]) -> Vec<f64> {
    advanced_weighted(st, &weighted_source(st, f))
}

/// `E f = E⁻ f − E⁺ f` (advanced minus retarded).
pub(crate) fn commutator_real(st: &Spacetime, f: &[f64]) -> Vec<f64> {
    let s = weighted_source(st, f);
    let (adv, ret) = rayon::join(|| advanced_weighted(st, &s), || retarded_weighted(st, &s));
    adv.iter().zip(&ret).map(|(a, r)| a - r).collect()
}

fn check_solvable(st: &Spacetime, u: &[f64]) -> Result<()> {
    if st.coeffs.c_half.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Error::Solvability("non-positive time coefficient".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solvability("non-finite values in time stepping".into()));
    }
    Ok(())
}

fn solve_complex(st: &Spacetime, f: &TestFunction, solver: fn(&Spacetime, &[f64]) -> Vec<f64>) -> Result<SolutionField> {
    let re = solver(st, &f.re());
    check_solvable(st, &re)?;
    let im = if f.is_real() { vec![0.0; re.len()] } else { solver(st, &f.im()) };
    check_solvable(st, &im)?;
    Ok(SolutionField::from_parts(st.lattice(), &re, &im))
}

/// `E⁺ f`: the solution of `P u = f` vanishing below `supp f`.
pub fn green_retarded(st: &Spacetime, f: &TestFunction) -> Result<SolutionField> {
    solve_complex(st, f, retarded_real)
}

/// `E⁻ f`: the solution of `P u = f` vanishing above `supp f`.
pub fn green_advanced(st: &Spacetime, f: &TestFunction) -> Result<SolutionField> {
    solve_complex(st, f, advanced_real)
}

/// `E f = E⁻ f − E⁺ f`.
pub fn commutator_solution(st: &Spacetime, f: &TestFunction) -> Result<SolutionField> {
    solve_complex(st, f, commutator_real)
}

/// `E(f, h) = ⟨f, E h⟩_w`, bilinear.
pub fn commutator_function(st: &Spacetime, f: &TestFunction, h: &TestFunction) -> Result<Complex64> {
    let (hr, hi) = (h.re(), h.im());
    let ehr = commutator_real(st, &hr);
    check_solvable(st, &ehr)?;
    let (fr, fi) = (f.re(), f.im());
    let mut re = weighted_inner(st, &fr, &ehr);
    let mut im = weighted_inner(st, &fi, &ehr);
    if !h.is_real() {
        let ehi = commutator_real(st, &hi);
        re -= weighted_inner(st, &fi, &ehi);
        im += weighted_inner(st, &fr, &ehi);
    }
    Ok(Complex64::new(re, im))
}

fn check_surface(lat: &LatticeSpec, surface: usize) -> Result<()> {
    if surface + 1 >= lat.n_t {
        return Err(Error::SurfaceOutOfRange { surface, n_t: lat.n_t });
    }
    Ok(())
}

/// Real Cauchy data `(φ, π)` of a lattice field on row `n`, stacked.
pub(crate) fn data_of_real(st: &Spacetime, u: &[f64], n: usize) -> Vec<f64> {
    let lat = st.lattice();
    let n_x = lat.n_x;
    let mut out = vec![0.0; 2 * n_x];
    for j in 0..n_x {
        let (a, b) = (u[n * n_x + j], u[(n + 1) * n_x + j]);
        out[j] = a;
        out[n_x + j] = st.coeffs.c_half[n * n_x + j] * (b - a) / lat.dt;
    }
    out
}

/// Cauchy data of a field on the surface `surface`.
pub fn cauchy_data(st: &Spacetime, u: &SolutionField, surface: usize) -> Result<CauchyData> {
    let lat = st.lattice();
    check_surface(lat, surface)?;
    let re = data_of_real(st, &u.re(), surface);
    let im = data_of_real(st, &u.im(), surface);
    let v: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
    Ok(CauchyData::from_vector(&v, surface, lat.dx))
}

pub(crate) fn quotient_real(st: &Spacetime, f: &[f64], t_ref: usize) -> Vec<f64> {
    data_of_real(st, &commutator_real(st, f), t_ref)
}

/// The quotient map `f ↦ f + P C₀`, realised as the Cauchy data of `E f` on `t_ref`.
pub fn to_quotient(st: &Spacetime, f: &TestFunction, t_ref: usize) -> Result<CauchyData> {
    check_surface(st.lattice(), t_ref)?;
    let u = commutator_solution(st, f)?;
    cauchy_data(st, &u, t_ref)
}

/// Homogeneous solution on the whole window with Cauchy data `d` on row `surface`.
pub(crate) fn solution_from_data(st: &Spacetime, d: &[f64], surface: usize) -> Vec<f64> {
    let lat = st.lattice();
    let c = &st.coeffs;
    let n_x = lat.n_x;
    let dt2 = lat.dt * lat.dt;
    let mut u = vec![0.0; lat.n_t * n_x];
    for j in 0..n_x {
        u[surface * n_x + j] = d[j];
        u[(surface + 1) * n_x + j] = d[j] + lat.dt * d[n_x + j] / c.c_half[surface * n_x + j];
    }
    for n in surface + 1..lat.n_t - 1 {
        for j in 0..n_x {
            let (r, up, dn) = (n * n_x + j, (n + 1) * n_x + j, (n - 1) * n_x + j);
            let rhs = c.c_half[dn] * (u[r] - u[dn]) / dt2 + spatial_row(lat, c, &u, n, j);
            u[up] = u[r] + dt2 * rhs / c.c_half[r];
        }
    }
    for n in (1..=surface).rev() {
        for j in 0..n_x {
            let (r, up, dn) = (n * n_x + j, (n + 1) * n_x + j, (n - 1) * n_x + j);
            let rhs = c.c_half[r] * (u[up] - u[r]) / dt2 - spatial_row(lat, c, &u, n, j);
            u[dn] = u[r] - dt2 * rhs / c.c_half[dn];
        }
    }
    u
}

/// Evolves real stacked data from row `from` to row `to` with the homogeneous equation.
pub(crate) fn evolve_real(st: &Spacetime, d: &[f64], from: usize, to: usize) -> Vec<f64> {
    if from == to {
        return d.to_vec();
    }
    let lat = st.lattice();
    let c = &st.coeffs;
    let n_x = lat.n_x;
    let dt2 = lat.dt * lat.dt;
    // two rolling rows: lo = row k, hi = row k + 1
    let mut lo: Vec<f64> = d[..n_x].to_vec();
    let mut hi: Vec<f64> =
        (0..n_x).map(|j| d[j] + lat.dt * d[n_x + j] / c.c_half[from * n_x + j]).collect();
    let row_x = |row: &[f64], n: usize, j: usize| {
        let r = n * n_x;
        let jp = if j + 1 == n_x { 0 } else { j + 1 };
        let jm = if j == 0 { n_x - 1 } else { j - 1 };
        (c.d_link[r + j] * (row[jp] - row[j]) - c.d_link[r + jm] * (row[j] - row[jm])) / (lat.dx * lat.dx)
            - c.wv[r + j] * row[j]
    };
    if to > from {
        for k in from..to {
            // equation at row k + 1 gives row k + 2
            let n = k + 1;
            let next: Vec<f64> = (0..n_x)
                .map(|j| {
                    let rhs = c.c_half[(n - 1) * n_x + j] * (hi[j] - lo[j]) / dt2 + row_x(&hi, n, j);
                    hi[j] + dt2 * rhs / c.c_half[n * n_x + j]
                })
                .collect();
            lo = std::mem::replace(&mut hi, next);
        }
    } else {
        for k in (to..from).rev() {
            // equation at row k + 1 gives row k
            let n = k + 1;
            let prev: Vec<f64> = (0..n_x)
                .map(|j| {
                    let rhs = c.c_half[n * n_x + j] * (hi[j] - lo[j]) / dt2 - row_x(&lo, n, j);
                    lo[j] - dt2 * rhs / c.c_half[k * n_x + j]
                })
                .collect();
            hi = std::mem::replace(&mut lo, prev);
        }
    }
    let mut out = vec![0.0; 2 * n_x];
    for j in 0..n_x {
        out[j] = lo[j];
        out[n_x + j] = c.c_half[to * n_x + j] * (hi[j] - lo[j]) / lat.dt;
    }
    out
}

/// Evolves Cauchy data to another surface of the same spacetime.
pub fn evolve(st: &Spacetime, d: &CauchyData, to: usize) -> Result<CauchyData> {
    let lat = st.lattice();
    check_surface(lat, d.surface)?;
    check_surface(lat, to)?;
    if d.phi.len() != lat.n_x || d.pi.len() != lat.n_x {
        return Err(Error::LengthMismatch { left: d.phi.len(), right: lat.n_x });
    }
    let v = d.to_vector();
    let re: Vec<f64> = v.iter().map(|z| z.re).collect();
    let im: Vec<f64> = v.iter().map(|z| z.im).collect();
    let (re, im) = (evolve_real(st, &re, d.surface, to), evolve_real(st, &im, d.surface, to));
    let out: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
    Ok(CauchyData::from_vector(&out, to, lat.dx))
}

/// Evolution matrix (column-major columns as `Vec`) from row `from` to row `to`.
pub(crate) fn evolution_columns(st: &Spacetime, from: usize, to: usize) -> Vec<Vec<f64>> {
    let dim = 2 * st.n_x();
    (0..dim)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            evolve_real(st, &e, from, to)
        })
        .collect()
}

/// Quotient map restricted to test functions supported in a fixed region,
/// assembled from the homogeneous solutions `u_k` with basis data `e_k` on
/// `t_ref` through the discrete Green identity `σ(Q f, e_k) = ⟨f, u_k⟩_w`.
pub(crate) struct RegionQuotient {
    cells: Vec<(usize, usize)>,
    /// `2 n_x × |cells|`, column `p` is `Q(δ_p)`.
    columns: Vec<Vec<f64>>,
}

impl RegionQuotient {
    pub fn new(st: &Spacetime, region: &Region, t_ref: usize) -> Self {
        let lat = st.lattice();
        let n_x = lat.n_x;
        let rows = lat.interior_rows();
        let cells: Vec<(usize, usize)> = region.points().filter(|(n, _)| rows.contains(n)).collect();
        let dim = 2 * n_x;
        let scale = lat.dt * lat.dx;
        // pairing[k][p] = ⟨δ_p, u_k⟩_w
        let pairing: Vec<Vec<f64>> = (0..dim)
            .into_par_iter()
            .map(|k| {
                let mut e = vec![0.0; dim];
                e[k] = 1.0;
                let u = solution_from_data(st, &e, t_ref);
                cells.iter().map(|&(n, j)| st.coeffs.w[n * n_x + j] * u[n * n_x + j] * scale).collect()
            })
            .collect();
        let columns = (0..cells.len())
            .map(|p| {
                let mut q = vec![0.0; dim];
                for j in 0..n_x {
                    q[j] = pairing[n_x + j][p] / lat.dx;
                    q[n_x + j] = -pairing[j][p] / lat.dx;
                }
                q
            })
            .collect();
        RegionQuotient { cells, columns }
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }
}

/// Test function `f = A(χ u)/w` with `χ = 1` on rows `≤ cut` and `0` above, for the
/// homogeneous solution `u` with the given data. Then `E f = u`, and `f` lives on
/// rows `cut` and `cut + 1`.
pub(crate) fn testfunction_from_data_real(st: &Spacetime, d: &[f64], surface: usize, cut: usize) -> Vec<f64> {
    let lat = st.lattice();
    let n_x = lat.n_x;
    let c = &st.coeffs;
    let u = solution_from_data(st, d, surface);
    let mut chi_u = vec![0.0; u.len()];
    let lo = cut - 1;
    chi_u[lo * n_x..(cut + 1) * n_x].copy_from_slice(&u[lo * n_x..(cut + 1) * n_x]);
    let mut out = vec![0.0; u.len()];
    apply_stencil(lat, &c.c_half, &c.d_link, &c.wv, &chi_u, &mut out, cut..cut + 2);
    for i in cut * n_x..(cut + 2) * n_x {
        out[i] /= c.w[i];
    }
    out
}

/// Test function whose quotient class has the given Cauchy data.
pub fn testfunction_from_data(st: &Spacetime, d: &CauchyData, cut: usize) -> Result<TestFunction> {
    let lat = st.lattice();
    check_surface(lat, d.surface)?;
    let rows = lat.interior_rows();
    if !(rows.contains(&cut) && rows.contains(&(cut + 1))) {
        return Err(Error::SupportInPadding { n_pad: lat.n_pad });
    }
    let v = d.to_vector();
    let re: Vec<f64> = v.iter().map(|z| z.re).collect();
    let im: Vec<f64> = v.iter().map(|z| z.im).collect();
    let fr = testfunction_from_data_real(st, &re, d.surface, cut);
    let fi = testfunction_from_data_real(st, &im, d.surface, cut);
    let values = Grid::from_vec(lat.n_t, lat.n_x, fr.iter().zip(&fi).map(|(a, b)| Complex64::new(*a, *b)).collect())?;
    TestFunction::new(st, values)
}

/// Time cutoff equal to 1 on rows `≤ b0`, 0 on rows `≥ b1`, smoothstep between.
pub fn band_cutoff(n: usize, b0: usize, b1: usize) -> f64 {
    if n <= b0 {
        1.0
    } else if n >= b1 {
        0.0
    } else {
        1.0 - smoothstep((n - b0) as f64 / (b1 - b0) as f64)
    }
}

pub(crate) fn timeslice_real(st: &Spacetime, f: &[f64], b0: usize, b1: usize) -> Vec<f64> {
    let lat = st.lattice();
    let n_x = lat.n_x;
    let u = commutator_real(st, f);
    let c = &st.coeffs;
    let chi_u: Vec<f64> = (0..u.len()).map(|i| band_cutoff(i / n_x, b0, b1) * u[i]).collect();
    let mut a_chi_u = vec![0.0; u.len()];
    let mut a_u = vec![0.0; u.len()];
    apply_stencil(lat, &c.c_half, &c.d_link, &c.wv, &chi_u, &mut a_chi_u, b0..b1 + 1);
    apply_stencil(lat, &c.c_half, &c.d_link, &c.wv, &u, &mut a_u, b0..b1 + 1);
    let mut out = vec![0.0; u.len()];
    for n in b0..=b1 {
        let chi = band_cutoff(n, b0, b1);
        for j in 0..n_x {
            let i = n * n_x + j;
            out[i] = (a_chi_u[i] - chi * a_u[i]) / c.w[i];
        }
    }
    out
}

/// Band representative `f′ = P χ E f` of the class of `f`, supported in rows `band`
/// (inclusive bounds `band.0 ..= band.1`).
pub fn timeslice_representative(st: &Spacetime, f: &TestFunction, band: (usize, usize)) -> Result<TestFunction> {
    let lat = st.lattice();
    let (b0, b1) = band;
    if b1 < b0 + 2 {
        return Err(Error::BandTooThin(b1.saturating_sub(b0) + 1));
    }
    let rows = lat.interior_rows();
    if !(rows.contains(&b0) && rows.contains(&b1)) {
        return Err(Error::SupportInPadding { n_pad: lat.n_pad });
    }
    let re = timeslice_real(st, &f.re(), b0, b1);
    let im = if f.is_real() { vec![0.0; re.len()] } else { timeslice_real(st, &f.im(), b0, b1) };
    let values = Grid::from_vec(lat.n_t, lat.n_x, re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect())?;
    TestFunction::new(st, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::KgParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(kg: KgParams) -> Spacetime {
        Spacetime::flat(LatticeSpec::new(64, 32, 0.1), kg).unwrap()
    }

    #[test]
    fn constants_are_massless_solutions() {
        let st = small(KgParams::massless());
        let u = vec![1.0; 64 * 32];
        assert!(apply_p_real(&st, &u).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn discrete_plane_wave_solves_the_stencil() {
        // lattice dispersion of the leapfrog stencil:
        // (2/dt)² sin²(ω dt/2) = (2/dx)² sin²(k dx/2) + m²
        let m_sq = 0.7;
        let st = small(KgParams::massive(m_sq));
        let lat = *st.lattice();
        let k = 2.0 * std::f64::consts::PI * 3.0 / lat.circumference();
        let rhs = (2.0 / lat.dx * (k * lat.dx / 2.0).sin()).powi(2) + m_sq;
        let omega = 2.0 / lat.dt * (rhs.sqrt() * lat.dt / 2.0).asin();
        let u: Vec<f64> =
            (0..lat.n_t * lat.n_x).map(|i| (k * lat.x(i % lat.n_x) - omega * lat.t(i / lat.n_x)).cos()).collect();
        // residual measured against the stencil scale 4/dt²
        let r = apply_p_real(&st, &u);
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs())) * lat.dt * lat.dt / 4.0;
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn retarded_inverts_and_vanishes_below_source() {
        let st = small(KgParams::massive(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let region = Region::rect(st.lattice(), 20..30, 10, 4);
        let f = TestFunction::random_real(&st, &region, &mut rng).unwrap();
        let u = retarded_real(&st, &f.re());
        let pu = apply_p_real(&st, &u);
        let fr = f.re();
        let err = pu.iter().zip(&fr).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-11, "{err}");
        assert!(u[..20 * 32].iter().all(|v| *v == 0.0));
        let v = advanced_real(&st, &fr);
        assert!(v[31 * 32..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn point_source_numerical_support() {
        let st = small(KgParams::massless());
        let f = TestFunction::point(&st, 30, 16).unwrap();
        let u = retarded_real(&st, &f.re());
        for n in 0..64 {
            for j in 0..32usize {
                let v = u[n * 32 + j];
                let k = n as isize - 30;
                let inside = k >= 1 && (j as isize - 16).abs() <= k - 1;
                if !inside {
                    assert_eq!(v, 0.0, "({n},{j})");
                }
            }
        }
    }

    #[test]
    fn quotient_vs_pairing_sign() {
        let st = small(KgParams::massive(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lat = *st.lattice();
        let f = TestFunction::random_real(&st, &Region::rect(&lat, 10..20, 5, 3), &mut rng).unwrap();
        let h = TestFunction::random_real(&st, &Region::rect(&lat, 30..40, 8, 3), &mut rng).unwrap();
        let e = commutator_function(&st, &f, &h).unwrap();
        for t_ref in [5, 25, 50] {
            let s = symplectic_form(&to_quotient(&st, &f, t_ref).unwrap(), &to_quotient(&st, &h, t_ref).unwrap())
                .unwrap();
            assert!((s - e).norm() < 1e-11 * (1.0 + e.norm()), "{s} vs {e}");
        }
        assert!(e.norm() > 1e-6);
    }

    #[test]
    fn data_roundtrip_and_evolution() {
        let st = Spacetime::from_profile(LatticeSpec::new(64, 32, 0.1), KgParams::massive(0.5), |t, x| {
            (1.0 + 0.1 * (x).sin(), 1.0 + 0.05 * t)
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = solution_from_data(&st, &d, 20);
        let back = data_of_real(&st, &u, 20);
        assert!(d.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-13));
        let at40 = evolve_real(&st, &d, 20, 40);
        let direct = data_of_real(&st, &u, 40);
        assert!(at40.iter().zip(&direct).all(|(a, b)| (a - b).abs() < 1e-10));
        let again = evolve_real(&st, &at40, 40, 20);
        assert!(d.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-9));
        let f = testfunction_from_data_real(&st, &d, 20, 30);
        let q = quotient_real(&st, &f, 20);
        assert!(d.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(f.iter().enumerate().all(|(i, v)| *v == 0.0 || (30..32).contains(&(i / 32))));
    }

    #[test]
    fn thin_band_is_rejected() {
        let st = small(KgParams::massless());
        let f = TestFunction::point(&st, 30, 3).unwrap();
        assert_eq!(timeslice_representative(&st, &f, (20, 21)), Err(Error::BandTooThin(2)));
    }
}
