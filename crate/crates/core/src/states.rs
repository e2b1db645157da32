//! Quasifree states on the Cauchy-data space of a reference surface.
//!
//! A state is fixed by its two-point matrix `W = C + (i/2)σ` on data vectors,
//! `ω(Φ(q) Φ(r)) = qᵀ W r`. Field operators on the surface are
//! `φ̂_j = Φ(−e^π_j / dx)` and `π̂_j = Φ(e^φ_j / dx)`, so `[φ̂_j, π̂_k] = i δ_jk / dx`.
//! Mode computations use the canonical pair `(φ̂, p̂)` with `p̂ = dx π̂`.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::AlgebraElement;
use crate::error::{Error, Result};
use crate::field::{evolution_columns, evolve_real, to_quotient, TestFunction};
use crate::geometry::{smooth_bump, Spacetime, Worldline};
use crate::linalg;

/// Regulator mass for the massless zero mode.
pub const M_REG: f64 = 1e-4;
/// Largest supported number of points in an n-point function.
pub const MAX_POINTS: usize = 8;
/// Growth factor above which a probe difference counts as divergent.
pub const HADAMARD_GROWTH: f64 = 2.0;

fn sigma_matrix(n_x: usize, dx: f64) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n_x, 2 * n_x, |r, c| {
        if r < n_x && c == r + n_x {
            dx
        } else if c < n_x && r == c + n_x {
            -dx
        } else {
            0.0
        }
    })
}

/// `ℓ = Lm q` expresses `Φ(q) = ℓᵀ (φ̂, p̂)`.
fn data_to_canonical(n_x: usize, dx: f64) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n_x, 2 * n_x, |r, c| {
        if r < n_x && c == r + n_x {
            -dx
        } else if r >= n_x && c + n_x == r {
            1.0
        } else {
            0.0
        }
    })
}

fn canonical_to_data(n_x: usize, dx: f64) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n_x, 2 * n_x, |r, c| {
        if r < n_x && c == r + n_x {
            1.0
        } else if r >= n_x && c + n_x == r {
            -1.0 / dx
        } else {
            0.0
        }
    })
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Gaussian state with zero one-point function.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasifreeState {
    w: DMatrix<Complex64>,
    surface: usize,
    dx: f64,
}

impl QuasifreeState {
    /// `W = C + (i/2)σ`; checks symmetry of `C` and positivity of `W`.
    pub fn from_covariance(c: DMatrix<f64>, surface: usize, dx: f64) -> Result<Self> {
        if c.nrows() != c.ncols() || c.nrows() % 2 != 0 {
            return Err(Error::LengthMismatch { left: c.nrows(), right: c.ncols() });
        }
        let asym = linalg::max_abs(&(&c - c.transpose()));
        if asym > 1e-11 * linalg::max_abs(&c).max(1.0) {
            return Err(Error::InvalidState(format!("covariance not symmetric ({asym:.2e})")));
        }
        let c = (&c + c.transpose()) * 0.5;
        let half_sigma = sigma_matrix(c.nrows() / 2, dx) * 0.5;
        let w = DMatrix::from_fn(c.nrows(), c.ncols(), |r, k| Complex64::new(c[(r, k)], half_sigma[(r, k)]));
        let state = QuasifreeState { w, surface, dx };
        state.validate()?;
        Ok(state)
    }

    pub fn two_point_matrix(&self) -> &DMatrix<Complex64> {
        &self.w
    }

    /// Symmetric part `C = Re W`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.w.map(|z| z.re)
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.w.nrows() / 2
    }

    pub fn surface(&self) -> usize {
        self.surface
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// `qᵀ W r` (bilinear, no conjugation).
    pub fn two_point(&self, q: &[Complex64], r: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, qa) in q.iter().enumerate() {
            if *qa == Complex64::new(0.0, 0.0) {
                continue;
            }
            let row: Complex64 = r.iter().enumerate().map(|(b, rb)| self.w[(a, b)] * rb).sum();
            acc += qa * row;
        }
        acc
    }

    /// `max |W − Wᵀ − iσ|`.
    pub fn ccr_defect(&self) -> f64 {
        let sigma = sigma_matrix(self.n_x(), self.dx);
        let d = self.dim();
        let mut m: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let z = self.w[(r, c)] - self.w[(c, r)] - Complex64::new(0.0, sigma[(r, c)]);
                m = m.max(z.norm());
            }
        }
        m
    }

    /// Smallest eigenvalue of the hermitian matrix `W`, via its real embedding.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let re = self.w.map(|z| z.re);
        let im = self.w.map(|z| z.im);
        let emb = DMatrix::from_fn(2 * d, 2 * d, |r, c| match (r < d, c < d) {
            (true, true) => re[(r, c)],
            (true, false) => -im[(r, c - d)],
            (false, true) => im[(r - d, c)],
            (false, false) => re[(r - d, c - d)],
        });
        let emb = (&emb + emb.transpose()) * 0.5;
        SymmetricEigen::new(emb).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Both state invariants: CCR compatibility and positivity.
    pub fn validate(&self) -> Result<()> {
        let scale = self.w.iter().fold(1.0f64, |m, z| m.max(z.norm()));
        let ccr = self.ccr_defect();
        if ccr > 1e-11 * scale {
            return Err(Error::InvalidState(format!("W − Wᵀ ≠ iσ (defect {ccr:.2e})")));
        }
        let min = self.min_eigenvalue();
        if min < -1e-10 * scale {
            return Err(Error::InvalidState(format!("W not positive (min eigenvalue {min:.2e})")));
        }
        Ok(())
    }

    /// Symmetrised covariance of the canonical pair `(φ̂, p̂)`.
    pub fn field_covariance(&self) -> DMatrix<f64> {
        let inv = canonical_to_data(self.n_x(), self.dx);
        inv.transpose() * self.covariance() * inv
    }

    /// Pullback `W ↦ Lᵀ W L` along a data map `L` into this state's surface;
    /// the result lives on `surface`.
    pub fn pullback(&self, l: &DMatrix<f64>, surface: usize) -> Result<QuasifreeState> {
        if l.nrows() != self.dim() || l.ncols() != self.dim() {
            return Err(Error::LengthMismatch { left: l.nrows(), right: self.dim() });
        }
        let defect = crate::dynamics::symplectic_defect(l);
        if defect > 1e-9 {
            return Err(Error::NotSymplectic(defect));
        }
        let lc = complexify(l);
        let w = lc.transpose() * &self.w * lc;
        let state = QuasifreeState { w, surface, dx: self.dx };
        state.validate()?;
        Ok(state)
    }

    /// The same state expressed on the data of another surface of `st`.
    pub fn on_surface(&self, st: &Spacetime, to: usize) -> Result<QuasifreeState> {
        if to + 1 >= st.n_t() {
            return Err(Error::SurfaceOutOfRange { surface: to, n_t: st.n_t() });
        }
        let l = linalg::from_columns(self.dim(), &evolution_columns(st, to, self.surface));
        self.pullback(&l, to)
    }
}

/// `W ↦ Lᵀ W L` for a symplectic data map `L` on the state's surface.
pub fn bogoliubov_transport(state: &QuasifreeState, l: &DMatrix<f64>) -> Result<QuasifreeState> {
    state.pullback(l, state.surface)
}

/// Total occupation of `state` relative to the pure reference state,
/// `¼ tr(C_ref⁻¹ C) − dim/4`.
pub fn particle_number(reference: &QuasifreeState, state: &QuasifreeState) -> Result<f64> {
    if reference.dim() != state.dim() {
        return Err(Error::LengthMismatch { left: reference.dim(), right: state.dim() });
    }
    let c_ref = reference.covariance();
    let chol = c_ref
        .cholesky()
        .ok_or_else(|| Error::InvalidState("reference covariance not positive definite".into()))?;
    let x = chol.solve(&state.covariance());
    Ok(0.25 * x.trace() - 0.25 * state.dim() as f64)
}

/// Normal modes of the spatial operator of an ultrastatic spacetime on one
/// surface, `K v = λ M v` with `vᵀ M v = 1`, ascending in `λ`.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    surface: usize,
    dt: f64,
    dx: f64,
    lambda: Vec<f64>,
    regulated: bool,
    /// `n_x × n_x`, columns are the mode profiles.
    v: DMatrix<f64>,
    mass: Vec<f64>,
}

impl ModeBasis {
    pub fn new(st: &Spacetime, surface: usize) -> Result<Self> {
        if !st.is_ultrastatic() {
            return Err(Error::NotUltrastatic("metric depends on time or β ≠ 1".into()));
        }
        if surface + 1 >= st.n_t() {
            return Err(Error::SurfaceOutOfRange { surface, n_t: st.n_t() });
        }
        let (n_x, dx, dt) = (st.n_x(), st.dx(), st.dt());
        let c = &st.coeffs;
        let r = surface * n_x;
        let mass: Vec<f64> = (0..n_x).map(|j| dx * c.c_half[r + j]).collect();
        let mut k = DMatrix::<f64>::zeros(n_x, n_x);
        for j in 0..n_x {
            let jm = (j + n_x - 1) % n_x;
            let jp = (j + 1) % n_x;
            k[(j, j)] += dx * ((c.d_link[r + j] + c.d_link[r + jm]) / (dx * dx) + c.wv[r + j]);
            k[(j, jp)] -= dx * c.d_link[r + j] / (dx * dx);
            k[(j, jm)] -= dx * c.d_link[r + jm] / (dx * dx);
        }
        let s: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        let a = DMatrix::from_fn(n_x, n_x, |i, j| s[i] * k[(i, j)] * s[j]);
        let a = (&a + a.transpose()) * 0.5;
        let eig: SymmetricEigen<f64, nalgebra::Dyn> = SymmetricEigen::new(a);
        let mut order: Vec<usize> = (0..n_x).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
        let massless = st.kg().m_sq == 0.0;
        let mut regulated = false;
        let lambda: Vec<f64> = order
            .iter()
            .map(|&i| {
                let l = eig.eigenvalues[i];
                if massless && l < M_REG * M_REG {
                    regulated = true;
                    M_REG * M_REG
                } else {
                    l
                }
            })
            .collect();
        let v = DMatrix::from_fn(n_x, n_x, |row, col| s[row] * eig.eigenvectors[(row, order[col])]);
        if lambda.iter().any(|l| !(*l > 0.0) || dt * dt * l >= 4.0) {
            return Err(Error::Solvability("mode outside the stable range of the time step".into()));
        }
        Ok(ModeBasis { surface, dt, dx, lambda, regulated, v, mass })
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn surface(&self) -> usize {
        self.surface
    }

    /// True when the zero mode was lifted to `M_REG`.
    pub fn is_regulated(&self) -> bool {
        self.regulated
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.lambda[k]
    }

    /// Spatial-lattice frequency `√λ_k`.
    pub fn frequency(&self, k: usize) -> f64 {
        self.lambda[k].sqrt()
    }

    /// Phase advance per time step, `cos θ = 1 − dt² λ / 2`.
    pub fn angle(&self, k: usize) -> f64 {
        (1.0 - 0.5 * self.dt * self.dt * self.lambda[k]).acos()
    }

    pub fn profile(&self, k: usize) -> Vec<f64> {
        self.v.column(k).iter().copied().collect()
    }

    /// One time step of the mode amplitudes `(α, β)`.
    pub fn step(&self, k: usize) -> Matrix2<f64> {
        let (dt, l) = (self.dt, self.lambda[k]);
        Matrix2::new(1.0, dt, -dt * l, 1.0 - dt * dt * l)
    }

    /// Stationary pure covariance of mode `k`, `Γ₀ = −½ J Ω` with the complex
    /// structure `J = (T − cos θ)/sin θ`.
    pub fn vacuum(&self, k: usize) -> Matrix2<f64> {
        let th = self.angle(k);
        let (c, s) = (th.cos(), th.sin());
        let j = (self.step(k) - Matrix2::identity() * c) / s;
        let omega = Matrix2::new(0.0, 1.0, -1.0, 0.0);
        let g = -0.5 * j * omega;
        (g + g.transpose()) * 0.5
    }

    /// Maps mode amplitudes `(α₁…α_n, β₁…β_n)` to `(φ̂, p̂)`.
    pub fn site_transform(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut p = DMatrix::zeros(2 * n, 2 * n);
        p.view_mut((0, 0), (n, n)).copy_from(&self.v);
        let mv = DMatrix::from_fn(n, n, |r, c| self.mass[r] * self.v[(r, c)]);
        p.view_mut((n, n), (n, n)).copy_from(&mv);
        p
    }

    fn mode_transform_inverse(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut p = DMatrix::zeros(2 * n, 2 * n);
        let vtm = DMatrix::from_fn(n, n, |r, c| self.v[(c, r)] * self.mass[c]);
        p.view_mut((0, 0), (n, n)).copy_from(&vtm);
        p.view_mut((n, n), (n, n)).copy_from(&self.v.transpose());
        p
    }

    /// Product state with the given per-mode covariances.
    pub fn state(&self, covs: &[Matrix2<f64>]) -> Result<QuasifreeState> {
        let n = self.len();
        if covs.len() != n {
            return Err(Error::LengthMismatch { left: covs.len(), right: n });
        }
        let mut g = DMatrix::zeros(2 * n, 2 * n);
        for (k, m) in covs.iter().enumerate() {
            g[(k, k)] = m[(0, 0)];
            g[(k, n + k)] = m[(0, 1)];
            g[(n + k, k)] = m[(1, 0)];
            g[(n + k, n + k)] = m[(1, 1)];
        }
        let p = self.site_transform();
        let gamma = &p * g * p.transpose();
        let lm = data_to_canonical(n, self.dx);
        QuasifreeState::from_covariance(lm.transpose() * gamma * lm, self.surface, self.dx)
    }

    pub fn vacuum_covariances(&self) -> Vec<Matrix2<f64>> {
        (0..self.len()).map(|k| self.vacuum(k)).collect()
    }

    pub fn vacuum_state(&self) -> Result<QuasifreeState> {
        self.state(&self.vacuum_covariances())
    }

    /// Diagonal mode blocks of a state's covariance.
    pub fn mode_covariances(&self, state: &QuasifreeState) -> Vec<Matrix2<f64>> {
        let n = self.len();
        let q = self.mode_transform_inverse();
        let g = &q * state.field_covariance() * q.transpose();
        (0..n).map(|k| Matrix2::new(g[(k, k)], g[(k, n + k)], g[(n + k, k)], g[(n + k, n + k)])).collect()
    }

    /// Per-mode occupation `¼ tr(Γ₀⁻¹ Γ_k) − ½` relative to this basis' vacuum.
    pub fn occupations(&self, state: &QuasifreeState) -> Vec<f64> {
        self.mode_covariances(state)
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let inv = self.vacuum(k).try_inverse().expect("vacuum covariance is invertible");
                0.25 * (inv * g).trace() - 0.5
            })
            .collect()
    }
}

/// Pure single-mode covariance obtained by squeezing `gamma0` by `r` along angle `phi`.
pub fn squeezed(gamma0: &Matrix2<f64>, r: f64, phi: f64) -> Matrix2<f64> {
    let g = (gamma0 * 2.0).cholesky().expect("positive definite mode covariance").l();
    let (c, s) = (phi.cos(), phi.sin());
    let rot = Matrix2::new(c, -s, s, c);
    let d = Matrix2::new((2.0 * r).exp(), 0.0, 0.0, (-2.0 * r).exp());
    let m = 0.5 * g * rot * d * rot.transpose() * g.transpose();
    (m + m.transpose()) * 0.5
}

/// Ground state of an ultrastatic spacetime on `surface`.
pub fn ultrastatic_vacuum(st: &Spacetime, surface: usize) -> Result<QuasifreeState> {
    ModeBasis::new(st, surface)?.vacuum_state()
}

fn wick(pair: &dyn Fn(usize, usize) -> Complex64, idx: &[usize]) -> Complex64 {
    if idx.is_empty() {
        return Complex64::new(1.0, 0.0);
    }
    if idx.len() % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    let first = idx[0];
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 1..idx.len() {
        let rest: Vec<usize> = idx[1..].iter().enumerate().filter(|(i, _)| *i + 1 != k).map(|(_, v)| *v).collect();
        acc += pair(first, idx[k]) * wick(pair, &rest);
    }
    acc
}

/// `ω(Φ(q₁) ⋯ Φ(q_n))` by the quasifree pairing rule.
pub fn n_point_data(state: &QuasifreeState, qs: &[Vec<Complex64>]) -> Result<Complex64> {
    if qs.len() > MAX_POINTS {
        return Err(Error::TooManyPoints { n: qs.len(), max: MAX_POINTS });
    }
    let n = qs.len();
    let mut w2 = vec![Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        for b in a + 1..n {
            w2[a * n + b] = state.two_point(&qs[a], &qs[b]);
        }
    }
    let idx: Vec<usize> = (0..n).collect();
    Ok(wick(&|a, b| w2[a * n + b], &idx))
}

/// `ω(Φ(f₁) ⋯ Φ(f_n))`.
pub fn n_point(st: &Spacetime, state: &QuasifreeState, fs: &[TestFunction]) -> Result<Complex64> {
    if fs.len() > MAX_POINTS {
        return Err(Error::TooManyPoints { n: fs.len(), max: MAX_POINTS });
    }
    let qs = fs
        .iter()
        .map(|f| to_quotient(st, f, state.surface).map(|d| d.to_vector()))
        .collect::<Result<Vec<_>>>()?;
    n_point_data(state, &qs)
}

/// `ω(A)` for an element of the field algebra over the state's surface.
pub fn expectation(state: &QuasifreeState, a: &AlgebraElement) -> Complex64 {
    let w = &state.w;
    let mut acc = Complex64::new(0.0, 0.0);
    for (word, c) in a.terms() {
        let letters: Vec<usize> = word.iter().map(|i| *i as usize).collect();
        let idx: Vec<usize> = (0..letters.len()).collect();
        acc += c * wick(&|x, y| w[(letters[x], letters[y])], &idx);
    }
    acc
}

/// Shrinking pair of probes centred on two null-separated points.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFamily {
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    /// Probe radii in continuum units, decreasing.
    pub radii: Vec<f64>,
}

impl ProbeFamily {
    /// Second point displaced by `sep` along the right-moving null direction.
    pub fn null_pair(st: &Spacetime, t0: f64, x0: f64, sep: f64) -> Self {
        let dx = st.dx();
        ProbeFamily { p1: (t0, x0), p2: (t0 + sep, x0 + sep), radii: [8.0, 6.0, 4.0, 3.0, 2.0].iter().map(|r| r * dx).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HadamardReport {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// `|value at smallest radius| / |value at largest radius|`.
    pub growth: f64,
    pub compatible: bool,
}

fn unit_probe(st: &Spacetime, t: f64, x: f64, r: f64) -> Result<TestFunction> {
    let f = TestFunction::bump(st, t, x, r, r)?;
    let lat = st.lattice();
    let total: f64 = f
        .values()
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, v)| v.re * st.volume(i / lat.n_x, i % lat.n_x))
        .sum();
    Ok(f.scale(Complex64::new(1.0 / total, 0.0)))
}

/// `(w₂¹ − w₂²)(f_ε, h_ε)` along a shrinking probe family.
pub fn hadamard_difference(
    st: &Spacetime,
    s1: &QuasifreeState,
    s2: &QuasifreeState,
    probes: &ProbeFamily,
) -> Result<HadamardReport> {
    if s1.dim() != s2.dim() || s1.surface != s2.surface {
        return Err(Error::LengthMismatch { left: s1.dim(), right: s2.dim() });
    }
    let mut values = Vec::with_capacity(probes.radii.len());
    for &r in &probes.radii {
        let f = unit_probe(st, probes.p1.0, probes.p1.1, r)?;
        let h = unit_probe(st, probes.p2.0, probes.p2.1, r)?;
        let qf = to_quotient(st, &f, s1.surface)?.to_vector();
        let qh = to_quotient(st, &h, s1.surface)?.to_vector();
        values.push((s1.two_point(&qf, &qh) - s2.two_point(&qf, &qh)).norm());
    }
    let first = values.first().copied().unwrap_or(0.0);
    let last = values.last().copied().unwrap_or(0.0);
    let growth = if last <= 1e-12 { 1.0 } else { last / first.max(1e-300) };
    Ok(HadamardReport { radii: probes.radii.clone(), values, growth, compatible: growth <= HADAMARD_GROWTH })
}

/// Quadratic data forms at row `n` whose expectations sum to the coordinate
/// energy density at site `j`.
fn density_terms(st: &Spacetime, n: usize, j: usize) -> Vec<(f64, Vec<f64>)> {
    let (n_x, dx) = (st.n_x(), st.dx());
    let c = &st.coeffs;
    let r = n * n_x;
    let mut out = Vec::with_capacity(4);
    let mut q = vec![0.0; 2 * n_x];
    q[j] = 1.0 / dx;
    out.push((0.5 / c.c_half[r + j], q));
    let mut q = vec![0.0; 2 * n_x];
    q[n_x + j] = -1.0 / dx;
    out.push((0.5 * c.wv[r + j], q));
    for l in [(j + n_x - 1) % n_x, j] {
        let mut q = vec![0.0; 2 * n_x];
        q[n_x + (l + 1) % n_x] -= 1.0 / (dx * dx);
        q[n_x + l] += 1.0 / (dx * dx);
        out.push((0.25 * c.d_link[r + l], q));
    }
    out
}

/// Matrix `B` with `ρ(n, j) = Σ B_ab ΔC_ab` for states on `surface`, where
/// `ρ = T_ab u^a u^b` for the static observer at `(n, j)`.
pub fn local_energy_form(st: &Spacetime, surface: usize, n: usize, j: usize) -> Result<DMatrix<f64>> {
    if n + 1 >= st.n_t() || surface + 1 >= st.n_t() {
        return Err(Error::SurfaceOutOfRange { surface: n.max(surface), n_t: st.n_t() });
    }
    let dim = 2 * st.n_x();
    let mut b = DMatrix::zeros(dim, dim);
    let w = st.coeffs.w[n * st.n_x() + j];
    for (coef, q) in density_terms(st, n, j) {
        let qs = nalgebra::DVector::from_vec(evolve_real(st, &q, n, surface));
        b += (coef / w) * &qs * qs.transpose();
    }
    Ok(b)
}

fn relative_covariance(state: &QuasifreeState, reference: &QuasifreeState) -> Result<DMatrix<f64>> {
    if state.dim() != reference.dim() || state.surface != reference.surface {
        return Err(Error::LengthMismatch { left: state.dim(), right: reference.dim() });
    }
    Ok(state.covariance() - reference.covariance())
}

fn contract(b: &DMatrix<f64>, dc: &DMatrix<f64>) -> f64 {
    b.iter().zip(dc.iter()).map(|(x, y)| x * y).sum()
}

/// Relative energy density `⟨ρ⟩_state − ⟨ρ⟩_ref` along a static worldline,
/// as `(τ, ρ)` pairs.
pub fn energy_density(
    st: &Spacetime,
    state: &QuasifreeState,
    reference: &QuasifreeState,
    gamma: &Worldline,
) -> Result<Vec<(f64, f64)>> {
    if !gamma.is_stationary() {
        return Err(Error::NotStatic);
    }
    let dc = relative_covariance(state, reference)?;
    let taus = gamma.proper_times();
    gamma
        .points()
        .iter()
        .zip(taus)
        .map(|(&(n, j), tau)| Ok((tau, contract(&local_energy_form(st, state.surface, n, j)?, &dc))))
        .collect()
}

/// Relative energy `Σ_j ε_j dx` on the state's surface, with `ε` the coordinate
/// energy density.
pub fn total_energy(st: &Spacetime, state: &QuasifreeState, reference: &QuasifreeState) -> Result<f64> {
    let dc = relative_covariance(state, reference)?;
    let s = state.surface;
    let (n_x, dx) = (st.n_x(), st.dx());
    let mut b = DMatrix::zeros(2 * n_x, 2 * n_x);
    for j in 0..n_x {
        for (coef, q) in density_terms(st, s, j) {
            let q = nalgebra::DVector::from_vec(q);
            b += (coef * dx) * &q * q.transpose();
        }
    }
    Ok(contract(&b, &dc))
}

/// Nonnegative weights `f²(τ)` on a worldline's samples, with trapezoidal
/// proper-time quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingFunction {
    weights: Vec<f64>,
    quadrature: Vec<f64>,
}

impl SamplingFunction {
    pub fn new(gamma: &Worldline, weights: Vec<f64>) -> Result<Self> {
        let pts = gamma.points().len();
        if weights.len() != pts {
            return Err(Error::LengthMismatch { left: weights.len(), right: pts });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidState("sampling weights must be nonnegative".into()));
        }
        if pts < 3 || weights[0] != 0.0 || weights[pts - 1] != 0.0 {
            return Err(Error::InvalidState("sampling function must vanish at the worldline ends".into()));
        }
        let steps = gamma.proper_time_steps();
        let quadrature = (0..pts)
            .map(|i| {
                let left = if i > 0 { steps[i - 1] } else { 0.0 };
                let right = if i < steps.len() { steps[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect();
        Ok(SamplingFunction { weights, quadrature })
    }

    /// `exp(−(τ−τ₀)²/s²)` times a smooth cutoff at `|τ−τ₀| = 5s`.
    pub fn gaussian(gamma: &Worldline, tau0: f64, s: f64) -> Result<Self> {
        let w = gamma
            .proper_times()
            .iter()
            .map(|t| {
                let u = (t - tau0) / s;
                (-u * u).exp() * smooth_bump(u / 5.0)
            })
            .collect();
        SamplingFunction::new(gamma, w)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        SamplingFunction { weights: self.weights.iter().map(|w| w * lambda).collect(), quadrature: self.quadrature.clone() }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ f² dτ`.
    pub fn norm(&self) -> f64 {
        self.weights.iter().zip(&self.quadrature).map(|(a, b)| a * b).sum()
    }
}

/// Matrix `B` with `∫ ρ f² dτ = Σ B_ab ΔC_ab` for states on `surface`.
pub fn averaged_energy_form(
    st: &Spacetime,
    surface: usize,
    gamma: &Worldline,
    f: &SamplingFunction,
) -> Result<DMatrix<f64>> {
    if !gamma.is_stationary() {
        return Err(Error::NotStatic);
    }
    let dim = 2 * st.n_x();
    let mut b = DMatrix::zeros(dim, dim);
    for (i, &(n, j)) in gamma.points().iter().enumerate() {
        let g = f.weights[i] * f.quadrature[i];
        if g != 0.0 {
            b += local_energy_form(st, surface, n, j)? * g;
        }
    }
    Ok(b)
}

pub fn averaged_energy(form: &DMatrix<f64>, state: &QuasifreeState, reference: &QuasifreeState) -> Result<f64> {
    Ok(contract(form, &relative_covariance(state, reference)?))
}

/// Per-mode lower bound for the sampled energy over product Gaussian states.
#[derive(Debug, Clone)]
pub struct QeiBound {
    pub bound: f64,
    pub per_mode: Vec<f64>,
    /// `B_k` with `∫ ρ f² dτ = Σ_k tr(B_k (Γ_k − Γ₀_k))`.
    pub forms: Vec<Matrix2<f64>>,
    /// Minimising covariance for each mode.
    pub optimal: Vec<Matrix2<f64>>,
}

/// Each mode contributes `tr(B_k Γ_k)`, minimised over pure and mixed Gaussian
/// covariances at `√det B_k` (`B_k ⪰ 0`).
pub fn qei_bound(st: &Spacetime, modes: &ModeBasis, gamma: &Worldline, f: &SamplingFunction) -> Result<QeiBound> {
    if !gamma.is_stationary() {
        return Err(Error::NotStatic);
    }
    let (n_x, dx) = (st.n_x(), st.dx());
    let c = &st.coeffs;
    let pts = gamma.points();
    let Some(&(_, j)) = pts.first() else { return Err(Error::EmptyRegion) };
    let r = modes.surface * n_x;
    let w = c.w[r + j];
    let jm = (j + n_x - 1) % n_x;
    let mut forms = Vec::with_capacity(modes.len());
    let mut per_mode = Vec::with_capacity(modes.len());
    let mut optimal = Vec::with_capacity(modes.len());
    let mut bound = 0.0;
    for k in 0..modes.len() {
        let v = modes.profile(k);
        let grad = |l: usize| {
            let d = (v[(l + 1) % n_x] - v[l]) / dx;
            c.d_link[r + l] * d * d
        };
        let e_alpha = 0.5 * (0.5 * (grad(jm) + grad(j)) + c.wv[r + j] * v[j] * v[j]) / w;
        let e_beta = 0.5 * c.c_half[r + j] * v[j] * v[j] / w;
        let m = Matrix2::new(e_alpha, 0.0, 0.0, e_beta);
        let t = modes.step(k);
        let t_inv = t.try_inverse().expect("unimodular step");
        let mut b = Matrix2::zeros();
        for (i, &(n, _)) in pts.iter().enumerate() {
            let g = f.weights[i] * f.quadrature[i];
            if g == 0.0 {
                continue;
            }
            let mut p = Matrix2::identity();
            if n >= modes.surface {
                for _ in modes.surface..n {
                    p = t * p;
                }
            } else {
                for _ in n..modes.surface {
                    p = t_inv * p;
                }
            }
            b += g * p.transpose() * m * p;
        }
        let b = (b + b.transpose()) * 0.5;
        let g0 = modes.vacuum(k);
        let det = b.determinant().max(0.0);
        let min = det.sqrt() - (b * g0).trace();
        let opt = if det > 0.0 { b.try_inverse().expect("nonsingular form") * (0.5 * det.sqrt()) } else { g0 };
        bound += min;
        per_mode.push(min);
        forms.push(b);
        optimal.push(opt);
    }
    Ok(QeiBound { bound, per_mode, forms, optimal })
}

#[derive(Debug, Clone)]
pub struct QeiReport {
    pub values: Vec<f64>,
    pub bound: f64,
    pub min_value: f64,
    /// `min_value − bound`.
    pub gap: f64,
    pub n_negative: usize,
    pub regulated: bool,
    pub pass: bool,
}

/// Sampled energies of a state family against the per-mode bound.
pub fn qei_check(
    st: &Spacetime,
    family: &[QuasifreeState],
    gamma: &Worldline,
    f: &SamplingFunction,
    surface: usize,
) -> Result<QeiReport> {
    let modes = ModeBasis::new(st, surface)?;
    let reference = modes.vacuum_state()?;
    let bound = qei_bound(st, &modes, gamma, f)?.bound;
    let form = averaged_energy_form(st, surface, gamma, f)?;
    let values = family.iter().map(|s| averaged_energy(&form, s, &reference)).collect::<Result<Vec<f64>>>()?;
    let min_value = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let n_negative = values.iter().filter(|v| **v < 0.0).count();
    Ok(QeiReport {
        pass: values.iter().all(|v| *v >= bound - 1e-8) && bound.is_finite() && bound < 0.0,
        values,
        bound,
        min_value,
        gap: min_value - bound,
        n_negative,
        regulated: modes.is_regulated(),
    })
}

/// Random product Gaussian states. Each member squeezes one or two random
/// modes with a random phase and `r` log-uniform in `[10⁻⁴, 1]·max_squeeze`,
/// and with probability ⅕ thermally populates one more. Sampled energy forms
/// are close to the vacuum, so negative averages need `r` well below one; the
/// log-uniform draw covers both regimes. The first member is the vacuum.
pub fn random_gaussian_family(modes: &ModeBasis, n_states: usize, max_squeeze: f64, seed: u64) -> Result<Vec<QuasifreeState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_states);
    for i in 0..n_states {
        let mut covs = modes.vacuum_covariances();
        if i > 0 && !modes.is_empty() {
            for _ in 0..rng.random_range(1..=2usize) {
                let k = rng.random_range(0..modes.len());
                let r = max_squeeze * 10f64.powf(rng.random_range(-4.0..0.0));
                let phi = rng.random_range(0.0..std::f64::consts::PI);
                covs[k] = squeezed(&covs[k], r, phi);
            }
            if rng.random::<f64>() < 0.2 {
                let k = rng.random_range(0..modes.len());
                covs[k] *= 1.0 + rng.random_range(0.0..1.0);
            }
        }
        out.push(modes.state(&covs)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{KgParams, LatticeSpec};

    fn flat(m_sq: f64) -> Spacetime {
        Spacetime::flat(LatticeSpec::new(64, 16, 0.1), KgParams::massive(m_sq)).unwrap()
    }

    #[test]
    fn vacuum_is_pure_and_positive() {
        let st = flat(1.0);
        let vac = ultrastatic_vacuum(&st, 20).unwrap();
        assert!(vac.ccr_defect() < 1e-14);
        assert!(vac.min_eigenvalue() > -1e-12);
        let modes = ModeBasis::new(&st, 20).unwrap();
        for k in 0..modes.len() {
            assert!((modes.vacuum(k).determinant() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn squeezing_preserves_purity() {
        let st = flat(1.0);
        let modes = ModeBasis::new(&st, 20).unwrap();
        let g = squeezed(&modes.vacuum(3), 0.8, 0.4);
        assert!((g.determinant() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn non_static_metric_is_rejected() {
        let lat = LatticeSpec::new(64, 16, 0.1);
        let st = Spacetime::from_profile(lat, KgParams::massive(1.0), |t, _| (1.0, 1.0 + 0.1 * t)).unwrap();
        assert!(matches!(ultrastatic_vacuum(&st, 20), Err(Error::NotUltrastatic(_))));
    }

    #[test]
    fn massless_zero_mode_is_regulated() {
        let st = flat(0.0);
        let modes = ModeBasis::new(&st, 20).unwrap();
        assert!(modes.is_regulated());
        assert_eq!(modes.lambda(0), M_REG * M_REG);
    }

    #[test]
    fn too_many_points() {
        let st = flat(1.0);
        let vac = ultrastatic_vacuum(&st, 20).unwrap();
        let qs = vec![vec![Complex64::new(0.0, 0.0); 32]; 9];
        assert_eq!(n_point_data(&vac, &qs).unwrap_err(), Error::TooManyPoints { n: 9, max: 8 });
    }
}
