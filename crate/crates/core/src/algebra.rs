//! Polynomial field algebra over the Cauchy-data space.
//!
//! Generators `Φ_i` correspond to the site basis of Cauchy data on a
//! reference surface (`φ` deltas, then `π` deltas). Elements are stored in
//! normal order (ascending index words); products are reduced with
//! `Φ_x Φ_y = Φ_y Φ_x + i σ_xy`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{self, RegionQuotient, TestFunction};
use crate::geometry::{causal_complement, Region, Spacetime};
use crate::linalg;

/// Default truncation degree.
pub const D_MAX: usize = 6;

/// Relative pruning threshold for coefficients.
pub const PRUNE: f64 = 1e-14;

/// Drop tolerance used when orthonormalising kinematic subspaces.
pub const SUBSPACE_TOL: f64 = 1e-10;

/// Site basis of Cauchy data on one surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneParticleBasis {
    n_x: usize,
    dx: f64,
    surface: usize,
}

impl OneParticleBasis {
    pub fn new(st: &Spacetime, surface: usize) -> Result<Self> {
        if surface + 1 >= st.n_t() {
            return Err(Error::SurfaceOutOfRange { surface, n_t: st.n_t() });
        }
        Ok(OneParticleBasis { n_x: st.n_x(), dx: st.dx(), surface })
    }

    pub fn dim(&self) -> usize {
        2 * self.n_x
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn surface(&self) -> usize {
        self.surface
    }

    /// `σ(e_i, e_j)`.
    pub fn sigma(&self, i: usize, j: usize) -> f64 {
        let n = self.n_x;
        if i < n && j == i + n {
            self.dx
        } else if j < n && i == j + n {
            -self.dx
        } else {
            0.0
        }
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.sigma(i, j))
    }

    /// σ is antisymmetric and of full rank.
    pub fn is_nondegenerate(&self) -> bool {
        let s = self.sigma_matrix();
        linalg::max_abs(&(&s + s.transpose())) == 0.0 && linalg::rank(&s, 1e-12) == self.dim()
    }
}

/// Normal-ordered polynomial in the generators.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlgebraElement {
    terms: BTreeMap<Vec<u32>, Complex64>,
}

impl AlgebraElement {
    pub fn zero() -> Self {
        AlgebraElement::default()
    }

    pub fn unit() -> Self {
        AlgebraElement::scalar(Complex64::new(1.0, 0.0))
    }

    pub fn scalar(c: Complex64) -> Self {
        let mut terms = BTreeMap::new();
        if c != Complex64::new(0.0, 0.0) {
            terms.insert(Vec::new(), c);
        }
        AlgebraElement { terms }
    }

    /// `c · Φ_{w₀} ⋯ Φ_{w_k}` for an ascending word.
    pub fn monomial(word: &[u32], c: Complex64) -> Result<Self> {
        if word.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidState("monomial word must be ascending".into()));
        }
        let mut terms = BTreeMap::new();
        if c != Complex64::new(0.0, 0.0) {
            terms.insert(word.to_vec(), c);
        }
        Ok(AlgebraElement { terms })
    }

    pub fn terms(&self) -> &BTreeMap<Vec<u32>, Complex64> {
        &self.terms
    }

    pub fn coefficient(&self, word: &[u32]) -> Complex64 {
        self.terms.get(word).copied().unwrap_or_default()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|w| w.len()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest coefficient modulus.
    pub fn norm(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.norm()))
    }

    pub fn add(&self, other: &AlgebraElement) -> AlgebraElement {
        let mut terms = self.terms.clone();
        for (w, c) in &other.terms {
            *terms.entry(w.clone()).or_default() += c;
        }
        prune(AlgebraElement { terms })
    }

    pub fn sub(&self, other: &AlgebraElement) -> AlgebraElement {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, alpha: Complex64) -> AlgebraElement {
        prune(AlgebraElement { terms: self.terms.iter().map(|(w, c)| (w.clone(), c * alpha)).collect() })
    }

    /// Part of exact degree `k`.
    pub fn homogeneous_part(&self, k: usize) -> AlgebraElement {
        AlgebraElement { terms: self.terms.iter().filter(|(w, _)| w.len() == k).map(|(w, c)| (w.clone(), *c)).collect() }
    }

    /// Stable text form, one monomial per line: `re im : i₀ i₁ …`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, c) in &self.terms {
            let idx: Vec<String> = w.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("{:+.17e} {:+.17e} : {}\n", c.re, c.im, idx.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut terms = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::InvalidState(format!("malformed element text at line {}", lineno + 1));
            let (coef, word) = line.split_once(':').ok_or_else(bad)?;
            let mut parts = coef.split_whitespace();
            let re: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let im: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let w: Vec<u32> = word.split_whitespace().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
            terms.insert(w, Complex64::new(re, im));
        }
        Ok(AlgebraElement { terms })
    }
}

impl fmt::Display for AlgebraElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn prune(mut a: AlgebraElement) -> AlgebraElement {
    let max = a.norm();
    a.terms.retain(|_, c| c.norm() > PRUNE * max && *c != Complex64::new(0.0, 0.0));
    a
}

/// Multiplication context: the basis fixes σ, `d_max` bounds the degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Algebra {
    basis: OneParticleBasis,
    d_max: usize,
}

impl Algebra {
    pub fn new(basis: OneParticleBasis) -> Self {
        Algebra { basis, d_max: D_MAX }
    }

    pub fn with_d_max(mut self, d_max: usize) -> Self {
        self.d_max = d_max;
        self
    }

    pub fn basis(&self) -> &OneParticleBasis {
        &self.basis
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// Degree-one element `Σ v_i Φ_i`.
    pub fn generator(&self, v: &[Complex64]) -> Result<AlgebraElement> {
        if v.len() != self.basis.dim() {
            return Err(Error::LengthMismatch { left: v.len(), right: self.basis.dim() });
        }
        let terms = v
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != Complex64::new(0.0, 0.0))
            .map(|(i, c)| (vec![i as u32], *c))
            .collect();
        Ok(AlgebraElement { terms })
    }

    pub fn generator_real(&self, v: &[f64]) -> Result<AlgebraElement> {
        let c: Vec<Complex64> = v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        self.generator(&c)
    }

    /// `Φ(f)`: the degree-one element with the quotient data of `f`.
    pub fn gen(&self, st: &Spacetime, f: &TestFunction) -> Result<AlgebraElement> {
        let d = field::to_quotient(st, f, self.basis.surface)?;
        self.generator(&d.to_vector())
    }

    /// Normal-ordered product.
    pub fn mul(&self, a: &AlgebraElement, b: &AlgebraElement) -> Result<AlgebraElement> {
        let degree = a.degree() + b.degree();
        if degree > self.d_max && !a.is_zero() && !b.is_zero() {
            return Err(Error::DegreeOverflow { degree, max: self.d_max });
        }
        let mut out: BTreeMap<Vec<u32>, Complex64> = BTreeMap::new();
        let mut word = Vec::with_capacity(degree);
        for (wa, ca) in &a.terms {
            for (wb, cb) in &b.terms {
                word.clear();
                word.extend_from_slice(wa);
                word.extend_from_slice(wb);
                self.normal_order(&mut word.clone(), ca * cb, &mut out);
            }
        }
        Ok(prune(AlgebraElement { terms: out }))
    }

    fn normal_order(&self, word: &mut Vec<u32>, c: Complex64, out: &mut BTreeMap<Vec<u32>, Complex64>) {
        let Some(i) = word.windows(2).position(|w| w[0] > w[1]) else {
            *out.entry(word.clone()).or_default() += c;
            return;
        };
        let (x, y) = (word[i], word[i + 1]);
        let s = self.basis.sigma(x as usize, y as usize);
        if s != 0.0 {
            let mut contracted = Vec::with_capacity(word.len() - 2);
            contracted.extend_from_slice(&word[..i]);
            contracted.extend_from_slice(&word[i + 2..]);
            self.normal_order(&mut contracted, c * Complex64::new(0.0, s), out);
        }
        word.swap(i, i + 1);
        self.normal_order(word, c, out);
    }

    /// `[a, b] = ab − ba`.
    pub fn commutator(&self, a: &AlgebraElement, b: &AlgebraElement) -> Result<AlgebraElement> {
        Ok(self.mul(a, b)?.sub(&self.mul(b, a)?))
    }

    /// Antilinear involution; the generators are hermitian.
    pub fn adjoint(&self, a: &AlgebraElement) -> AlgebraElement {
        let mut out = BTreeMap::new();
        for (w, c) in &a.terms {
            let mut rev: Vec<u32> = w.iter().rev().copied().collect();
            self.normal_order(&mut rev, c.conj(), &mut out);
        }
        prune(AlgebraElement { terms: out })
    }
}

/// Span of the quotient data of test functions supported in a region.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicSubspace {
    pub region: Region,
    pub t_ref: usize,
    /// Orthonormal columns in the site basis.
    pub basis: DMatrix<f64>,
}

impl KinematicSubspace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Residual of `v` after projection onto the subspace.
    pub fn residual(&self, v: &[f64]) -> f64 {
        let x = nalgebra::DVector::from_column_slice(v);
        let p = &self.basis * (self.basis.transpose() * &x);
        (x - p).norm()
    }

    pub fn contains(&self, other: &KinematicSubspace, tol: f64) -> bool {
        linalg::containment_residual(&self.basis, &other.basis) <= tol
    }
}

/// Span of `to_quotient(δ_p)` over lattice cells `p ∈ O` (padding rows
/// excluded), orthonormalised with relative drop tolerance `1e−10`.
pub fn kinematic_subspace(st: &Spacetime, o: &Region, t_ref: usize) -> Result<KinematicSubspace> {
    if o.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if t_ref + 1 >= st.n_t() {
        return Err(Error::SurfaceOutOfRange { surface: t_ref, n_t: st.n_t() });
    }
    let rq = RegionQuotient::new(st, o, t_ref);
    if rq.cells().is_empty() {
        return Err(Error::EmptyRegion);
    }
    let m = linalg::from_columns(2 * st.n_x(), rq.columns());
    Ok(KinematicSubspace { region: o.clone(), t_ref, basis: linalg::orthonormal_basis(&m, SUBSPACE_TOL) })
}

/// Lattice identification of `M` with the rows `offset .. offset + n_t(M)` of `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub row_offset: usize,
}

impl Embedding {
    pub fn identity() -> Self {
        Embedding { row_offset: 0 }
    }

    pub fn then(&self, next: &Embedding) -> Embedding {
        Embedding { row_offset: self.row_offset + next.row_offset }
    }

    /// `ψ_* f`.
    pub fn push(&self, m: &Spacetime, n: &Spacetime, f: &TestFunction) -> Result<TestFunction> {
        check_isometric(m, n, self)?;
        let lat = n.lattice();
        let mut g = crate::geometry::Grid::filled(lat.n_t, lat.n_x, Complex64::new(0.0, 0.0));
        for (r, j) in f.support().points() {
            g[(r + self.row_offset, j)] = f.values()[(r, j)];
        }
        TestFunction::new(n, g)
    }
}

fn check_isometric(m: &Spacetime, n: &Spacetime, emb: &Embedding) -> Result<()> {
    if m.n_x() != n.n_x() || m.dx() != n.dx() || m.dt() != n.dt() {
        return Err(Error::NotIsometric("lattice spacings or circle size differ".into()));
    }
    if emb.row_offset + m.n_t() > n.n_t() {
        return Err(Error::NotIsometric("image exceeds the target window".into()));
    }
    if m.kg() != n.kg() {
        return Err(Error::NotIsometric("field parameters differ".into()));
    }
    if !m.agrees_with(0..m.n_t(), n, emb.row_offset, 0.0) {
        return Err(Error::NotIsometric("metric differs on the image".into()));
    }
    Ok(())
}

/// Algebra morphism induced by an embedding, acting through its one-particle
/// data map `L` from the source reference surface to the target one.
#[derive(Debug, Clone, PartialEq)]
pub struct Morphism {
    pub matrix: DMatrix<f64>,
    pub source_surface: usize,
    pub target_surface: usize,
}

impl Morphism {
    /// Image of a degree-one element.
    pub fn map_vector(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.matrix.nrows();
        (0..n).map(|r| (0..v.len()).map(|c| v[c] * self.matrix[(r, c)]).sum()).collect()
    }

    /// Extends the data map multiplicatively to the whole algebra.
    pub fn apply(&self, target: &Algebra, a: &AlgebraElement) -> Result<AlgebraElement> {
        let dim = self.matrix.nrows();
        let mut out = AlgebraElement::zero();
        for (w, c) in a.terms() {
            let mut term = AlgebraElement::scalar(*c);
            for &i in w {
                let col: Vec<f64> = (0..dim).map(|r| self.matrix[(r, i as usize)]).collect();
                term = target.mul(&term, &target.generator_real(&col)?)?;
            }
            out = out.add(&term);
        }
        Ok(out)
    }

    /// `self ∘ first`.
    pub fn after(&self, first: &Morphism) -> Morphism {
        Morphism {
            matrix: &self.matrix * &first.matrix,
            source_surface: first.source_surface,
            target_surface: self.target_surface,
        }
    }

    /// Smallest singular value of the data map (positive iff injective).
    pub fn injectivity_margin(&self) -> f64 {
        self.matrix.clone().svd(false, false).singular_values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// `A(ψ)` for a row-offset embedding `M → N`: `Φ_M(f) ↦ Φ_N(ψ_* f)`.
pub fn pushforward_morphism(
    m: &Spacetime,
    n: &Spacetime,
    emb: &Embedding,
    t_ref_m: usize,
    t_ref_n: usize,
) -> Result<Morphism> {
    check_isometric(m, n, emb)?;
    OneParticleBasis::new(m, t_ref_m)?;
    OneParticleBasis::new(n, t_ref_n)?;
    let cols = field::evolution_columns(n, t_ref_m + emb.row_offset, t_ref_n);
    Ok(Morphism {
        matrix: linalg::from_columns(2 * n.n_x(), &cols),
        source_surface: t_ref_m,
        target_surface: t_ref_n,
    })
}

/// Degree-two comparison of even elements localised in two regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvenSpanReport {
    pub dim1: usize,
    pub dim2: usize,
    /// Dimension of the symmetric degree-two part over the union.
    pub dim_union: usize,
    /// Dimension of the span of the two separate symmetric degree-two parts.
    pub dim_separate: usize,
    pub deficit: usize,
}

fn sym_gram(vecs: &[(nalgebra::DVector<f64>, nalgebra::DVector<f64>)]) -> DMatrix<f64> {
    let k = vecs.len();
    DMatrix::from_fn(k, k, |p, q| {
        let (a, b) = &vecs[p];
        let (c, d) = &vecs[q];
        0.5 * (a.dot(c) * b.dot(d) + a.dot(d) * b.dot(c))
    })
}

fn sym_pairs(q: &DMatrix<f64>) -> Vec<(nalgebra::DVector<f64>, nalgebra::DVector<f64>)> {
    let mut out = Vec::new();
    for i in 0..q.ncols() {
        for j in i..q.ncols() {
            out.push((q.column(i).into_owned(), q.column(j).into_owned()));
        }
    }
    out
}

/// Compares `Sym²(S₁) + Sym²(S₂)` with `Sym²(S₁ + S₂)` for the kinematic
/// subspaces of two causally disjoint regions.
pub fn even_subalgebra_span(st: &Spacetime, o1: &Region, o2: &Region, t_ref: usize) -> Result<EvenSpanReport> {
    let dim_of = |o: &Region| -> Result<DMatrix<f64>> {
        if o.is_empty() {
            Ok(DMatrix::zeros(2 * st.n_x(), 0))
        } else {
            Ok(kinematic_subspace(st, o, t_ref)?.basis)
        }
    };
    if !o1.is_empty() && !o2.is_empty() && !o2.is_subset(&causal_complement(st, o1)?) {
        return Err(Error::NotCausallyDisjoint);
    }
    let (q1, q2) = (dim_of(o1)?, dim_of(o2)?);
    let mut joined = DMatrix::zeros(q1.nrows(), q1.ncols() + q2.ncols());
    joined.view_mut((0, 0), (q1.nrows(), q1.ncols())).copy_from(&q1);
    joined.view_mut((0, q1.ncols()), (q2.nrows(), q2.ncols())).copy_from(&q2);
    let d = linalg::rank(&joined, SUBSPACE_TOL);
    let dim_union = d * (d + 1) / 2;
    let mut pairs = sym_pairs(&q1);
    pairs.extend(sym_pairs(&q2));
    let dim_separate = if pairs.is_empty() { 0 } else { linalg::rank(&sym_gram(&pairs), 1e-12) };
    Ok(EvenSpanReport {
        dim1: q1.ncols(),
        dim2: q2.ncols(),
        dim_union,
        dim_separate,
        deficit: dim_union.saturating_sub(dim_separate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{KgParams, LatticeSpec};

    fn toy(n_x: usize) -> (Spacetime, Algebra) {
        let st = Spacetime::flat(LatticeSpec::new(24, n_x, 0.1), KgParams::massive(1.0)).unwrap();
        let alg = Algebra::new(OneParticleBasis::new(&st, 10).unwrap());
        (st, alg)
    }

    fn phi(alg: &Algebra, i: usize) -> AlgebraElement {
        let mut v = vec![0.0; alg.basis().dim()];
        v[i] = 1.0;
        alg.generator_real(&v).unwrap()
    }

    #[test]
    fn canonical_pair_commutator() {
        let (_, alg) = toy(3);
        let dx = alg.basis().dx();
        let c = alg.commutator(&phi(&alg, 0), &phi(&alg, 3)).unwrap();
        assert_eq!(c, AlgebraElement::scalar(Complex64::new(0.0, dx)));
        let c = alg.commutator(&phi(&alg, 0), &phi(&alg, 4)).unwrap();
        assert!(c.is_zero());
    }

    #[test]
    fn reordering_a_reversed_word() {
        // Φ₃ Φ₀ = Φ₀ Φ₃ + iσ₃₀ with σ₃₀ = −dx
        let (_, alg) = toy(3);
        let dx = alg.basis().dx();
        let p = alg.mul(&phi(&alg, 3), &phi(&alg, 0)).unwrap();
        assert_eq!(p.coefficient(&[0, 3]), Complex64::new(1.0, 0.0));
        assert_eq!(p.coefficient(&[]), Complex64::new(0.0, -dx));
    }

    #[test]
    fn degree_overflow_is_an_error() {
        let (_, alg) = toy(3);
        let alg = alg.with_d_max(2);
        let a = alg.mul(&phi(&alg, 0), &phi(&alg, 1)).unwrap();
        assert_eq!(alg.mul(&a, &phi(&alg, 2)), Err(Error::DegreeOverflow { degree: 3, max: 2 }));
    }

    #[test]
    fn text_roundtrip() {
        let (_, alg) = toy(3);
        let a = alg.mul(&phi(&alg, 4), &phi(&alg, 1)).unwrap().add(&AlgebraElement::scalar(Complex64::new(0.5, -2.0)));
        assert_eq!(AlgebraElement::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn sigma_is_nondegenerate() {
        let (_, alg) = toy(5);
        assert!(alg.basis().is_nondegenerate());
    }
}
