//! Relative Cauchy evolution and its derivative, the stress-energy pairing,
//! and fixed subspaces under perturbations localised away from a region.
//!
//! For `f` supported to the future of a perturbation `h`,
//! `rce[h] Φ(f) = Φ(f − (P_{M[h]} − P_M) E_{M[h]} f)`.
//! The one-particle matrix is read off on a reference surface by feeding the
//! test functions whose quotient classes are the basis data.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebra::{kinematic_subspace, Morphism};
use crate::dual::Dual;
use crate::error::{Error, Result};
use crate::field::{
    apply_p_real, apply_stencil, commutator_real, evolve_real, quotient_real,
    testfunction_from_data_real, CauchyData, SolutionField, TestFunction,
};
use crate::geometry::{
    causal_complement, coefficients, perturb, smooth_bump, BumpSpec, Grid, LatticeSpec, MetricPerturbation, Region,
    Spacetime,
};
use crate::linalg;

/// Rows on which `P_{M[h]}` may differ from `P_M`.
fn influence_rows(st: &Spacetime, h: &MetricPerturbation) -> Option<(usize, usize)> {
    let (lo, hi) = h.support().row_span()?;
    Some((lo.saturating_sub(1).max(1), (hi + 1).min(st.n_t() - 2)))
}

fn check_above(st: &Spacetime, h: &MetricPerturbation, f_rows: Option<(usize, usize)>) -> Result<()> {
    if let (Some((_, hi)), Some((lo, _))) = (influence_rows(st, h), f_rows) {
        if lo <= hi {
            return Err(Error::NotAbovePerturbation);
        }
    }
    Ok(())
}

fn rce_testfunction_real(st: &Spacetime, sh: &Spacetime, rows: (usize, usize), f: &[f64]) -> Vec<f64> {
    let lat = st.lattice();
    let n_x = lat.n_x;
    let u = commutator_real(sh, f);
    let mut out = f.to_vec();
    let (mut a_h, mut a_m) = (vec![0.0; u.len()], vec![0.0; u.len()]);
    let (ch, cm) = (&sh.coeffs, &st.coeffs);
    apply_stencil(lat, &ch.c_half, &ch.d_link, &ch.wv, &u, &mut a_h, rows.0..rows.1 + 1);
    apply_stencil(lat, &cm.c_half, &cm.d_link, &cm.wv, &u, &mut a_m, rows.0..rows.1 + 1);
    for i in rows.0 * n_x..(rows.1 + 1) * n_x {
        out[i] -= a_h[i] / ch.w[i] - a_m[i] / cm.w[i];
    }
    out
}

/// `f − (P_{M[h]} − P_M) E_{M[h]} f` for `f` supported above the perturbation.
pub fn rce_testfunction(st: &Spacetime, h: &MetricPerturbation, f: &TestFunction) -> Result<TestFunction> {
    check_above(st, h, f.support().row_span())?;
    let Some(rows) = influence_rows(st, h) else { return Ok(f.clone()) };
    let sh = perturb(st, h)?;
    let re = rce_testfunction_real(st, &sh, rows, &f.re());
    let im = if f.is_real() { vec![0.0; re.len()] } else { rce_testfunction_real(st, &sh, rows, &f.im()) };
    Ok(TestFunction::from_raw_parts(st.lattice(), &re, &im))
}

/// One-particle matrix of the relative Cauchy evolution on a reference surface.
#[derive(Debug, Clone)]
pub struct RceMap {
    pub h: MetricPerturbation,
    pub matrix: DMatrix<f64>,
    pub t_ref: usize,
    /// Cut row used for the test functions (a surface above the perturbation).
    pub sigma_plus: usize,
    /// A surface below the perturbation, where the transported data is compared.
    pub sigma_minus: usize,
    /// `max |Rᵀ σ R − σ| / dx`.
    pub symplectic_defect: f64,
}

impl RceMap {
    pub fn apply_vector(&self, v: &[f64]) -> Vec<f64> {
        let x = nalgebra::DVector::from_column_slice(v);
        (&self.matrix * x).iter().copied().collect()
    }

    pub fn apply(&self, d: &CauchyData) -> Result<CauchyData> {
        let v = d.to_vector();
        if v.len() != self.matrix.ncols() {
            return Err(Error::LengthMismatch { left: v.len(), right: self.matrix.ncols() });
        }
        let re: Vec<f64> = v.iter().map(|z| z.re).collect();
        let im: Vec<f64> = v.iter().map(|z| z.im).collect();
        let (re, im) = (self.apply_vector(&re), self.apply_vector(&im));
        let out: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        Ok(CauchyData::from_vector(&out, d.surface, d.dx))
    }

    /// Generator-wise extension to the field algebra.
    pub fn as_morphism(&self) -> Morphism {
        Morphism { matrix: self.matrix.clone(), source_surface: self.t_ref, target_surface: self.t_ref }
    }

    pub fn identity_defect(&self) -> f64 {
        let n = self.matrix.nrows();
        linalg::max_abs(&(&self.matrix - DMatrix::identity(n, n)))
    }
}

/// `max |Mᵀ σ M − σ| / dx` for the site-basis symplectic form.
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows() / 2;
    let j = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        if r < n && c == r + n {
            1.0
        } else if c < n && r == c + n {
            -1.0
        } else {
            0.0
        }
    });
    linalg::max_abs(&(m.transpose() * &j * m - j))
}

/// Default surfaces for a perturbation: the cut just above its influence rows
/// and a surface just below.
pub fn default_surfaces(st: &Spacetime, h: &MetricPerturbation) -> (usize, usize) {
    match influence_rows(st, h) {
        Some((lo, hi)) => ((hi + 1).min(st.n_t() - 3), lo.saturating_sub(2)),
        None => (st.lattice().interior_rows().start, st.lattice().interior_rows().start),
    }
}

pub fn rce(st: &Spacetime, h: &MetricPerturbation, t_ref: usize) -> Result<RceMap> {
    let (plus, _) = default_surfaces(st, h);
    rce_with_surface(st, h, t_ref, plus)
}

/// `rce[h]` using test functions cut at row `sigma_plus`.
pub fn rce_with_surface(st: &Spacetime, h: &MetricPerturbation, t_ref: usize, sigma_plus: usize) -> Result<RceMap> {
    let lat = *st.lattice();
    if t_ref + 1 >= lat.n_t {
        return Err(Error::SurfaceOutOfRange { surface: t_ref, n_t: lat.n_t });
    }
    let dim = 2 * lat.n_x;
    let (_, minus) = default_surfaces(st, h);
    let Some(rows) = influence_rows(st, h) else {
        return Ok(RceMap {
            h: h.clone(),
            matrix: DMatrix::identity(dim, dim),
            t_ref,
            sigma_plus,
            sigma_minus: minus,
            symplectic_defect: 0.0,
        });
    };
    if sigma_plus <= rows.1 {
        return Err(Error::NotAbovePerturbation);
    }
    if sigma_plus + 2 > lat.n_t - lat.n_pad {
        return Err(Error::SupportInPadding { n_pad: lat.n_pad });
    }
    let sh = perturb(st, h)?;
    let cols: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            let d = evolve_real(st, &e, t_ref, sigma_plus);
            let f = testfunction_from_data_real(st, &d, sigma_plus, sigma_plus);
            let g = rce_testfunction_real(st, &sh, rows, &f);
            quotient_real(st, &g, t_ref)
        })
        .collect();
    let matrix = linalg::from_columns(dim, &cols);
    let defect = symplectic_defect(&matrix);
    if !(defect <= 1e-8) {
        return Err(Error::NotSymplectic(defect));
    }
    Ok(RceMap { h: h.clone(), matrix, t_ref, sigma_plus, sigma_minus: minus, symplectic_defect: defect })
}

/// Exact linearisation `L[h] u = −(d/ds) P_{M[sh]} u |₀` of the lattice operator.
pub(crate) fn apply_l_real(st: &Spacetime, h: &MetricPerturbation, u: &[f64]) -> Vec<f64> {
    let lat = *st.lattice();
    let mut out = vec![0.0; u.len()];
    let Some(rows) = influence_rows(st, h) else { return out };
    let (beta, a) = (st.beta(), st.a());
    let (db, da) = (h.d_beta(), h.d_a());
    let dc = coefficients::<Dual>(
        &lat,
        st.kg(),
        &|n, j| Dual::new(beta[(n, j)], db[(n, j)]),
        &|n, j| Dual::new(a[(n, j)], da[(n, j)]),
    );
    let eps = |v: &[Dual]| v.iter().map(|d| d.eps).collect::<Vec<f64>>();
    let (c_eps, d_eps, wv_eps, w_eps) = (eps(&dc.c_half), eps(&dc.d_link), eps(&dc.wv), eps(&dc.w));
    let mut a_dot = vec![0.0; u.len()];
    let mut a_u = vec![0.0; u.len()];
    let r = rows.0..rows.1 + 1;
    apply_stencil(&lat, &c_eps, &d_eps, &wv_eps, u, &mut a_dot, r.clone());
    let c = &st.coeffs;
    apply_stencil(&lat, &c.c_half, &c.d_link, &c.wv, u, &mut a_u, r);
    for i in rows.0 * lat.n_x..(rows.1 + 1) * lat.n_x {
        let w = c.w[i];
        out[i] = -a_dot[i] / w + w_eps[i] * a_u[i] / (w * w);
    }
    out
}

/// `L[h] φ`, the first-order change `−(d/ds) P_{M[sh]} φ` at `s = 0`.
pub fn apply_l(st: &Spacetime, h: &MetricPerturbation, phi: &SolutionField) -> SolutionField {
    let lat = st.lattice();
    let re = apply_l_real(st, h, &phi.re());
    let im = apply_l_real(st, h, &phi.im());
    SolutionField::from_fn(lat, |n, j| Complex64::new(re[n * lat.n_x + j], im[n * lat.n_x + j]))
}

fn to_data(re: &[f64], im: &[f64], surface: usize, dx: f64) -> CauchyData {
    let v: Vec<Complex64> = re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
    CauchyData::from_vector(&v, surface, dx)
}

fn split(f: &TestFunction) -> (Vec<f64>, Option<Vec<f64>>) {
    (f.re(), if f.is_real() { None } else { Some(f.im()) })
}

/// `to_quotient(L[h] E f)`.
pub fn stress_energy_pairing(st: &Spacetime, h: &MetricPerturbation, f: &TestFunction, t_ref: usize) -> Result<CauchyData> {
    if t_ref + 1 >= st.n_t() {
        return Err(Error::SurfaceOutOfRange { surface: t_ref, n_t: st.n_t() });
    }
    let run = |v: &[f64]| quotient_real(st, &apply_l_real(st, h, &commutator_real(st, v)), t_ref);
    let (re, im) = split(f);
    let qr = run(&re);
    let qi = im.map(|v| run(&v)).unwrap_or_else(|| vec![0.0; qr.len()]);
    Ok(to_data(&qr, &qi, t_ref, st.dx()))
}

fn rce_data(st: &Spacetime, h: &MetricPerturbation, s: f64, f: &[f64], t_ref: usize) -> Result<Vec<f64>> {
    let hs = h.scaled(s);
    let sh = perturb(st, &hs)?;
    let g = match influence_rows(st, &hs) {
        Some(rows) => rce_testfunction_real(st, &sh, rows, f),
        None => f.to_vec(),
    };
    Ok(quotient_real(st, &g, t_ref))
}

fn central_difference(st: &Spacetime, h: &MetricPerturbation, s: f64, f: &[f64], t_ref: usize) -> Result<Vec<f64>> {
    let (p, m) = (rce_data(st, h, s, f, t_ref)?, rce_data(st, h, -s, f, t_ref)?);
    Ok(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * s)).collect())
}

/// Plain central difference `(rce[s h] − rce[−s h]) Φ(f) / 2s` on the data of `f`.
pub fn rce_central_difference(
    st: &Spacetime,
    h: &MetricPerturbation,
    f: &TestFunction,
    t_ref: usize,
    s: f64,
) -> Result<CauchyData> {
    check_above(st, h, f.support().row_span())?;
    let (re, im) = split(f);
    let dr = central_difference(st, h, s, &re, t_ref)?;
    let di = match im {
        Some(v) => central_difference(st, h, s, &v, t_ref)?,
        None => vec![0.0; dr.len()],
    };
    Ok(to_data(&dr, &di, t_ref, st.dx()))
}

/// `(d/ds) rce[s h] Φ(f) |₀` by central differences, Richardson-extrapolated
/// over `s₀` and `s₀/2`.
pub fn rce_derivative(st: &Spacetime, h: &MetricPerturbation, f: &TestFunction, t_ref: usize, s0: f64) -> Result<CauchyData> {
    let d1 = rce_central_difference(st, h, f, t_ref, s0)?.to_vector();
    let d2 = rce_central_difference(st, h, f, t_ref, 0.5 * s0)?.to_vector();
    let out: Vec<Complex64> = d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
    Ok(CauchyData::from_vector(&out, t_ref, st.dx()))
}

/// Stress-energy pairing for a gauge perturbation, normalised by the pairing
/// with the pointwise absolute value of the same perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationReport {
    pub residual: f64,
    pub scale: f64,
    pub relative: f64,
    pub max_off_diagonal: f64,
}

pub fn conservation_check(
    st: &Spacetime,
    lie: &crate::geometry::LieDerivative,
    f: &TestFunction,
    t_ref: usize,
) -> Result<ConservationReport> {
    let h = &lie.perturbation;
    let residual = stress_energy_pairing(st, h, f, t_ref)?.norm();
    let lat = st.lattice();
    let abs_h = MetricPerturbation::new(lat, h.d_beta().map(|v| v.abs()), h.d_a().map(|v| v.abs()))?;
    let scale = stress_energy_pairing(st, &abs_h, f, t_ref)?.norm();
    Ok(ConservationReport {
        residual,
        scale,
        relative: if scale > 0.0 { residual / scale } else { 0.0 },
        max_off_diagonal: lie.max_off_diagonal(),
    })
}

/// Sum of `n_bumps` smooth bumps with random centres in `region`, random signs
/// and amplitude `amp` in both metric functions, multiplied by the indicator
/// of `region`.
pub fn random_perturbation<R: Rng + ?Sized>(
    lat: &LatticeSpec,
    region: &Region,
    n_bumps: usize,
    amp: f64,
    rng: &mut R,
) -> Result<MetricPerturbation> {
    let cells: Vec<(usize, usize)> = region.points().collect();
    if cells.is_empty() {
        return Ok(MetricPerturbation::zero(lat));
    }
    let t_extent = lat.t(lat.n_t - 1);
    let l = lat.circumference();
    let mut total = MetricPerturbation::zero(lat);
    let mut d_beta = Grid::filled(lat.n_t, lat.n_x, 0.0);
    let mut d_a = Grid::filled(lat.n_t, lat.n_x, 0.0);
    for _ in 0..n_bumps {
        let (n, j) = cells[rng.random_range(0..cells.len())];
        let spec = BumpSpec {
            t0: lat.t(n),
            x0: lat.x(j),
            rt: rng.random_range(0.15..0.3) * t_extent,
            rx: rng.random_range(0.15..0.3) * l,
            amp_beta: amp * if rng.random::<bool>() { 1.0 } else { -1.0 },
            amp_a: amp * if rng.random::<bool>() { 1.0 } else { -1.0 },
        };
        for m in 0..lat.n_t {
            for k in 0..lat.n_x {
                if !region.contains(m, k) {
                    continue;
                }
                let mut sep = (lat.x(k) - spec.x0).rem_euclid(l);
                if sep > 0.5 * l {
                    sep -= l;
                }
                let b = smooth_bump((lat.t(m) - spec.t0) / spec.rt) * smooth_bump(sep / spec.rx);
                d_beta[(m, k)] += spec.amp_beta * b;
                d_a[(m, k)] += spec.amp_a * b;
            }
        }
    }
    total = total.add(&MetricPerturbation::new(lat, d_beta, d_a)?);
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedSubspaceOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub t_ref: usize,
    pub amplitude: f64,
    pub n_bumps: usize,
    /// Singular-value threshold for `rce − id`.
    pub threshold: f64,
}

impl Default for FixedSubspaceOptions {
    fn default() -> Self {
        FixedSubspaceOptions { n_samples: 20, seed: 42, t_ref: 128, amplitude: 0.05, n_bumps: 12, threshold: 1e-8 }
    }
}

/// Intersection of the fixed spaces of sampled relative Cauchy evolutions.
#[derive(Debug, Clone)]
pub struct FixedSubspace {
    pub basis: DMatrix<f64>,
    /// Dimension after each sample.
    pub dims: Vec<usize>,
}

/// Data left invariant by `rce[h]` for sampled `h` supported in the causal
/// complement of `K`.
pub fn fixed_subspace(st: &Spacetime, k: &Region, opts: &FixedSubspaceOptions) -> Result<FixedSubspace> {
    let lat = *st.lattice();
    let dim = 2 * lat.n_x;
    let allowed = Region::slab(&lat, lat.n_pad..lat.n_t - lat.n_pad - 3);
    let comp = causal_complement(st, k)?.intersection(&allowed);
    if comp.is_empty() {
        return Ok(FixedSubspace { basis: DMatrix::identity(dim, dim), dims: vec![dim; opts.n_samples] });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let hs: Vec<MetricPerturbation> = (0..opts.n_samples)
        .map(|_| random_perturbation(&lat, &comp, opts.n_bumps, opts.amplitude, &mut rng))
        .collect::<Result<_>>()?;
    let maps: Vec<DMatrix<f64>> = hs
        .iter()
        .map(|h| Ok(rce(st, h, opts.t_ref)?.matrix))
        .collect::<Result<_>>()?;
    let mut basis = DMatrix::<f64>::identity(dim, dim);
    let mut dims = Vec::with_capacity(maps.len());
    for r in &maps {
        if basis.ncols() > 0 {
            let defect = (r - DMatrix::<f64>::identity(dim, dim)) * &basis;
            let null = linalg::null_space(&defect, opts.threshold);
            basis = &basis * null;
        }
        dims.push(basis.ncols());
    }
    Ok(FixedSubspace { basis, dims })
}

/// Outcome of comparing dynamically and kinematically localised data.
#[derive(Debug, Clone)]
pub struct DynLocReport {
    pub dim_fixed: usize,
    pub dim_kinematic: usize,
    pub principal_angles: Vec<f64>,
    pub max_angle: f64,
    pub dims_vs_samples: Vec<usize>,
    pub verdict: String,
}

/// Fixed subspace of the compact core `K` of `O` against the kinematic
/// subspace of `O`. `K` is `O` eroded twice by the nearest-neighbour cross,
/// which offsets the one-cell dilation in the lattice causal hull of `K`.
pub fn dynamical_vs_kinematic(st: &Spacetime, o: &Region, opts: &FixedSubspaceOptions, angle_tol: f64) -> Result<DynLocReport> {
    if o.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let k = o.erode_cross().erode_cross();
    if k.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let fixed = fixed_subspace(st, &k, opts)?;
    let kin = kinematic_subspace(st, o, opts.t_ref)?;
    let (df, dk) = (fixed.basis.ncols(), kin.dim());
    let principal_angles = if df >= dk {
        linalg::principal_angles(&fixed.basis, &kin.basis)
    } else {
        linalg::principal_angles(&kin.basis, &fixed.basis)
    };
    let max_angle = principal_angles.first().copied().unwrap_or(0.0);
    let verdict = if df == dk && max_angle <= angle_tol {
        "match".to_string()
    } else if df > dk {
        format!("mismatch (+{})", df - dk)
    } else {
        format!("mismatch (-{})", dk - df)
    };
    Ok(DynLocReport { dim_fixed: df, dim_kinematic: dk, principal_angles, max_angle, dims_vs_samples: fixed.dims, verdict })
}

/// `P_M` applied to a real lattice field (re-exported for oracles).
pub fn apply_p_lattice(st: &Spacetime, u: &[f64]) -> Vec<f64> {
    apply_p_real(st, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::KgParams;

    fn setup() -> (Spacetime, MetricPerturbation) {
        let lat = LatticeSpec::new(96, 24, 0.1);
        let st = Spacetime::flat(lat, KgParams::massive(1.0)).unwrap();
        let h = MetricPerturbation::bump(
            &lat,
            &BumpSpec { t0: 1.6, x0: 1.2, rt: 0.8, rx: 0.8, amp_beta: 0.05, amp_a: -0.03 },
        )
        .unwrap();
        (st, h)
    }

    #[test]
    fn zero_perturbation_gives_identity() {
        let (st, _) = setup();
        let r = rce(&st, &MetricPerturbation::zero(st.lattice()), 40).unwrap();
        assert_eq!(r.matrix, DMatrix::identity(48, 48));
    }

    #[test]
    fn rce_is_symplectic_and_nontrivial() {
        let (st, h) = setup();
        let r = rce(&st, &h, 40).unwrap();
        assert!(r.symplectic_defect < 1e-10, "{}", r.symplectic_defect);
        assert!(r.identity_defect() > 1e-4);
    }

    #[test]
    fn linearisation_matches_operator_difference() {
        let (st, h) = setup();
        let lat = *st.lattice();
        let u: Vec<f64> = (0..lat.n_t * lat.n_x).map(|i| ((i % 7) as f64 * 0.3).sin() + (i / lat.n_x) as f64 * 0.01).collect();
        let l = apply_l_real(&st, &h, &u);
        let s = 1e-4;
        let pp = apply_p_real(&perturb(&st, &h.scaled(s)).unwrap(), &u);
        let pm = apply_p_real(&perturb(&st, &h.scaled(-s)).unwrap(), &u);
        let fd: Vec<f64> = pp.iter().zip(&pm).map(|(a, b)| -(a - b) / (2.0 * s)).collect();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = l.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-7 * scale, "err {err} scale {scale}");
    }

    #[test]
    fn test_function_below_perturbation_is_rejected() {
        let (st, h) = setup();
        let f = TestFunction::point(&st, 10, 3).unwrap();
        assert_eq!(rce_testfunction(&st, &h, &f).unwrap_err(), Error::NotAbovePerturbation);
    }
}
