//! Exact exterior algebra on an oriented 7-dimensional inner-product space.
//!
//! Forms are stored densely: a degree-`k` form carries `C(7, k)` coefficients
//! ordered lexicographically by their strictly increasing multi-index, so
//! `e¹²³` precedes `e¹²⁴`. Axes are numbered `0..7` in code and `1..7` in
//! prose and in the `Display` output.
//!
//! All sign bookkeeping (wedge reordering, interior contraction, Hodge
//! complements) is read from tables built once on first use.

use std::cell::Cell;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::OnceLock;

use nalgebra::SMatrix;

use crate::{Error, Result};

/// Dimension of the underlying vector space.
pub const DIM: usize = 7;

/// Largest component count of any degree (`C(7,3) = C(7,4) = 35`).
pub const MAX_COMPONENTS: usize = 35;

/// Number of components of a degree-`k` form.
pub const COMPONENTS: [usize; DIM + 1] = [1, 7, 21, 35, 35, 21, 7, 1];

pub type Mat7 = SMatrix<f64, DIM, DIM>;
pub type Vec7 = nalgebra::SVector<f64, DIM>;

/// Number of components of a degree-`k` form; zero outside `0..=7`.
pub fn n_components(k: usize) -> usize {
    COMPONENTS.get(k).copied().unwrap_or(0)
}

/// A strictly increasing set of axes, stored as a 7-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(u8);

impl MultiIndex {
    /// Builds a multi-index from 0-based axes, which must be strictly increasing.
    pub fn new(axes: &[usize]) -> Result<Self> {
        let mut mask = 0u8;
        let mut last: Option<usize> = None;
        for &a in axes {
            if a >= DIM || last.is_some_and(|l| a <= l) {
                return Err(Error::InvalidMultiIndex(axes.to_vec()));
            }
            mask |= 1 << a;
            last = Some(a);
        }
        Ok(Self(mask))
    }

    pub fn from_mask(mask: u8) -> Self {
        Self(mask & 0x7f)
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn degree(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, axis: usize) -> bool {
        self.0 & (1 << axis) != 0
    }

    /// Axes in increasing order.
    pub fn axes(self) -> impl Iterator<Item = usize> {
        (0..DIM).filter(move |&a| self.0 & (1 << a) != 0)
    }

    /// Position of this index within the lexicographic basis of its degree.
    pub fn position(self) -> usize {
        tables().position[self.0 as usize] as usize
    }

    /// The `n`-th basis index of degree `k`.
    pub fn of_degree(k: usize, n: usize) -> Self {
        Self(tables().masks[k][n])
    }

    pub fn complement(self) -> Self {
        Self(!self.0 & 0x7f)
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e")?;
        if self.0 == 0 {
            return write!(f, "∅");
        }
        for a in self.axes() {
            write!(f, "{}", a + 1)?;
        }
        Ok(())
    }
}

/// Sign of the permutation that sorts the concatenation `I ++ J` of two
/// disjoint increasing index sets.
fn merge_sign(i: u8, j: u8) -> f64 {
    let mut inversions = 0u32;
    for b in 0..DIM {
        if j & (1 << b) != 0 {
            // elements of I greater than b have to move past it
            inversions += (i >> (b + 1)).count_ones();
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy)]
pub(crate) struct WedgeTerm {
    pub a: u8,
    pub b: u8,
    pub out: u8,
    pub sign: f64,
}

#[derive(Clone, Copy)]
pub(crate) struct InteriorTerm {
    pub axis: u8,
    pub src: u8,
    pub dst: u8,
    pub sign: f64,
}

pub(crate) struct Tables {
    pub masks: [Vec<u8>; DIM + 1],
    pub position: [u8; 128],
    /// `wedge[ka * 8 + kb]`
    pub wedge: Vec<Vec<WedgeTerm>>,
    pub interior: [Vec<InteriorTerm>; DIM + 1],
    /// `star_sign[k][n]` is the sign of `(I, Iᶜ)` for the `n`-th index of degree `k`.
    pub star_sign: [Vec<f64>; DIM + 1],
    /// `star_target[k][n]` is the position of `Iᶜ` in degree `7 - k`.
    pub star_target: [Vec<u8>; DIM + 1],
    /// `laplace_rows[d][I] = (i₀, position of I∖i₀)` with `i₀` the first axis of `I`.
    pub laplace_rows: [Vec<(u8, u8)>; DIM + 1],
    /// `laplace_cols[d][J·d + r] = (j_r, position of J∖j_r, (−1)^r)`.
    pub laplace_cols: [Vec<(u8, u8, f64)>; DIM + 1],
}

pub(crate) fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(build_tables)
}

fn build_tables() -> Tables {
    let mut masks: [Vec<u8>; DIM + 1] = Default::default();
    // Lexicographic order on increasing tuples.
    fn rec(start: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<u8>) {
        if cur.len() == k {
            out.push(cur.iter().fold(0u8, |m, &a| m | (1 << a)));
            return;
        }
        for a in start..DIM {
            cur.push(a);
            rec(a + 1, k, cur, out);
            cur.pop();
        }
    }
    for (k, m) in masks.iter_mut().enumerate() {
        rec(0, k, &mut Vec::new(), m);
    }
    let mut position = [0u8; 128];
    for m in &masks {
        for (n, &mask) in m.iter().enumerate() {
            position[mask as usize] = n as u8;
        }
    }

    let mut wedge = vec![Vec::new(); (DIM + 1) * (DIM + 1)];
    for ka in 0..=DIM {
        for kb in 0..=(DIM - ka) {
            let terms = &mut wedge[ka * 8 + kb];
            for (ia, &ma) in masks[ka].iter().enumerate() {
                for (ib, &mb) in masks[kb].iter().enumerate() {
                    if ma & mb != 0 {
                        continue;
                    }
                    terms.push(WedgeTerm {
                        a: ia as u8,
                        b: ib as u8,
                        out: position[(ma | mb) as usize],
                        sign: merge_sign(ma, mb),
                    });
                }
            }
        }
    }

    let mut interior: [Vec<InteriorTerm>; DIM + 1] = Default::default();
    for (k, terms) in interior.iter_mut().enumerate().skip(1) {
        for (src, &m) in masks[k].iter().enumerate() {
            for axis in 0..DIM {
                if m & (1 << axis) == 0 {
                    continue;
                }
                let below = (m & ((1u8 << axis) - 1)).count_ones();
                terms.push(InteriorTerm {
                    axis: axis as u8,
                    src: src as u8,
                    dst: position[(m & !(1 << axis)) as usize],
                    sign: if below % 2 == 0 { 1.0 } else { -1.0 },
                });
            }
        }
    }

    let mut star_sign: [Vec<f64>; DIM + 1] = Default::default();
    let mut star_target: [Vec<u8>; DIM + 1] = Default::default();
    for k in 0..=DIM {
        for &m in &masks[k] {
            let c = !m & 0x7f;
            star_sign[k].push(merge_sign(m, c));
            star_target[k].push(position[c as usize]);
        }
    }

    let mut laplace_rows: [Vec<(u8, u8)>; DIM + 1] = Default::default();
    let mut laplace_cols: [Vec<(u8, u8, f64)>; DIM + 1] = Default::default();
    for d in 1..=DIM {
        for &m in &masks[d] {
            let i0 = m.trailing_zeros() as u8;
            laplace_rows[d].push((i0, position[(m & !(1 << i0)) as usize]));
            let mut sign = 1.0;
            for jr in 0..DIM as u8 {
                if m & (1 << jr) != 0 {
                    laplace_cols[d].push((jr, position[(m & !(1 << jr)) as usize], sign));
                    sign = -sign;
                }
            }
        }
    }

    Tables {
        masks,
        position,
        wedge,
        interior,
        star_sign,
        star_target,
        laplace_rows,
        laplace_cols,
    }
}

thread_local! {
    static STAR_SIGN_FAULT: Cell<Option<(usize, usize)>> = const { Cell::new(None) };
}

/// Flips one entry of the Hodge-star sign table on the current thread while
/// the guard is alive. Only meant for negative tests of the validation suite.
#[doc(hidden)]
pub fn inject_star_sign_fault(degree: usize, index: usize) -> StarFaultGuard {
    STAR_SIGN_FAULT.with(|f| f.set(Some((degree, index))));
    StarFaultGuard(())
}

#[doc(hidden)]
pub struct StarFaultGuard(());

impl Drop for StarFaultGuard {
    fn drop(&mut self) {
        STAR_SIGN_FAULT.with(|f| f.set(None));
    }
}

/// A degree-`k` alternating form at a point.
#[derive(Clone, Copy, PartialEq)]
pub struct AltForm {
    degree: usize,
    coeffs: [f64; MAX_COMPONENTS],
}

impl AltForm {
    pub fn zero(degree: usize) -> Self {
        assert!(degree <= DIM, "form degree {degree} exceeds {DIM}");
        Self {
            degree,
            coeffs: [0.0; MAX_COMPONENTS],
        }
    }

    /// Builds a form from its coefficients in lexicographic order.
    pub fn from_coeffs(degree: usize, coeffs: &[f64]) -> Result<Self> {
        if degree > DIM {
            return Err(Error::DegreeOutOfRange(degree));
        }
        if coeffs.len() != n_components(degree) {
            return Err(Error::CoefficientCount {
                degree,
                expected: n_components(degree),
                found: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("form coefficients"));
        }
        let mut f = Self::zero(degree);
        f.coeffs[..coeffs.len()].copy_from_slice(coeffs);
        Ok(f)
    }

    /// The basis monomial `e^{i₁…i_k}` for 0-based strictly increasing axes.
    pub fn basis(axes: &[usize]) -> Result<Self> {
        let idx = MultiIndex::new(axes)?;
        let mut f = Self::zero(idx.degree());
        f.coeffs[idx.position()] = 1.0;
        Ok(f)
    }

    /// The 1-form with the given components.
    pub fn covector(v: &[f64; DIM]) -> Self {
        let mut f = Self::zero(1);
        f.coeffs[..DIM].copy_from_slice(v);
        f
    }

    pub fn scalar(c: f64) -> Self {
        let mut f = Self::zero(0);
        f.coeffs[0] = c;
        f
    }

    /// `c · e¹²³⁴⁵⁶⁷`.
    pub fn top(c: f64) -> Self {
        let mut f = Self::zero(DIM);
        f.coeffs[0] = c;
        f
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs[..n_components(self.degree)]
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        let n = n_components(self.degree);
        &mut self.coeffs[..n]
    }

    pub fn get(&self, idx: MultiIndex) -> f64 {
        if idx.degree() != self.degree {
            return 0.0;
        }
        self.coeffs[idx.position()]
    }

    pub fn set(&mut self, idx: MultiIndex, value: f64) {
        assert_eq!(idx.degree(), self.degree, "multi-index degree mismatch");
        self.coeffs[idx.position()] = value;
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.coeffs().iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Euclidean norm of the coefficient vector (the flat-metric form norm).
    pub fn coeff_norm(&self) -> f64 {
        self.coeffs().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs().iter().all(|c| c.is_finite())
    }

    /// `self + s·other`, in place.
    pub fn axpy(&mut self, s: f64, other: &AltForm) {
        assert_eq!(self.degree, other.degree, "degree mismatch in axpy");
        for (a, b) in self.coeffs_mut().iter_mut().zip(other.coeffs()) {
            *a += s * b;
        }
    }

    /// Non-zero terms as `(index, coefficient)` pairs.
    pub fn terms(&self) -> impl Iterator<Item = (MultiIndex, f64)> + '_ {
        let k = self.degree;
        self.coeffs()
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(move |(n, &c)| (MultiIndex::of_degree(k, n), c))
    }
}

impl fmt::Debug for AltForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AltForm<{}>[", self.degree)?;
        let mut first = true;
        for (idx, c) in self.terms() {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            write!(f, "{c:+}·{idx:?}")?;
        }
        write!(f, "]")
    }
}

impl Add for AltForm {
    type Output = AltForm;
    fn add(mut self, rhs: AltForm) -> AltForm {
        self += rhs;
        self
    }
}

impl AddAssign for AltForm {
    fn add_assign(&mut self, rhs: AltForm) {
        self.axpy(1.0, &rhs);
    }
}

impl Sub for AltForm {
    type Output = AltForm;
    fn sub(mut self, rhs: AltForm) -> AltForm {
        self -= rhs;
        self
    }
}

impl SubAssign for AltForm {
    fn sub_assign(&mut self, rhs: AltForm) {
        self.axpy(-1.0, &rhs);
    }
}

impl Mul<f64> for AltForm {
    type Output = AltForm;
    fn mul(mut self, s: f64) -> AltForm {
        self.coeffs_mut().iter_mut().for_each(|c| *c *= s);
        self
    }
}

impl Mul<AltForm> for f64 {
    type Output = AltForm;
    fn mul(self, f: AltForm) -> AltForm {
        f * self
    }
}

impl Neg for AltForm {
    type Output = AltForm;
    fn neg(self) -> AltForm {
        self * -1.0
    }
}

/// Wedge product `a ∧ b`.
pub fn wedge(a: &AltForm, b: &AltForm) -> Result<AltForm> {
    let (ka, kb) = (a.degree, b.degree);
    if ka + kb > DIM {
        return Err(Error::DegreeOverflow { left: ka, right: kb });
    }
    let mut out = AltForm::zero(ka + kb);
    for t in &tables().wedge[ka * 8 + kb] {
        out.coeffs[t.out as usize] += t.sign * a.coeffs[t.a as usize] * b.coeffs[t.b as usize];
    }
    Ok(out)
}

/// Coefficient of `e¹²³⁴⁵⁶⁷` in `a ∧ b`, for complementary degrees.
pub(crate) fn wedge_top(a: &AltForm, b: &AltForm) -> f64 {
    debug_assert_eq!(a.degree + b.degree, DIM);
    tables().wedge[a.degree * 8 + b.degree]
        .iter()
        .map(|t| t.sign * a.coeffs[t.a as usize] * b.coeffs[t.b as usize])
        .sum()
}

/// Interior product `v ⌟ a` of a vector with a form of degree ≥ 1.
pub fn interior(v: &[f64; DIM], a: &AltForm) -> Result<AltForm> {
    if a.degree == 0 {
        return Err(Error::DegreeUnderflow("interior product of a 0-form"));
    }
    let mut out = AltForm::zero(a.degree - 1);
    for t in &tables().interior[a.degree] {
        out.coeffs[t.dst as usize] += t.sign * v[t.axis as usize] * a.coeffs[t.src as usize];
    }
    Ok(out)
}

/// `e_axis ⌟ a` without allocation of a full vector.
pub(crate) fn interior_axis(axis: usize, a: &AltForm) -> AltForm {
    let mut out = AltForm::zero(a.degree.saturating_sub(1));
    if a.degree == 0 {
        return out;
    }
    for t in tables().interior[a.degree].iter().filter(|t| t.axis as usize == axis) {
        out.coeffs[t.dst as usize] += t.sign * a.coeffs[t.src as usize];
    }
    out
}

/// A Riemannian metric on the model space together with its inverse and
/// volume scale `√det g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    g: Mat7,
    g_inv: Mat7,
    vol_scale: f64,
}

/// Relative tolerance for the symmetry check on incoming metrics.
const SYMMETRY_TOL: f64 = 1e-12;

impl Metric {
    /// Validates `g` (symmetric, positive definite) and caches its inverse.
    pub fn new(g: Mat7) -> Result<Self> {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("metric"));
        }
        let scale = g.amax().max(f64::MIN_POSITIVE);
        if (g - g.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric);
        }
        let sym = (g + g.transpose()) * 0.5;
        let chol = sym.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let vol_scale: f64 = chol.l_dirty().diagonal().iter().product();
        if !(vol_scale > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let mut g_inv = chol.inverse();
        g_inv = (g_inv + g_inv.transpose()) * 0.5;
        Ok(Self {
            g: sym,
            g_inv,
            vol_scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            g: Mat7::identity(),
            g_inv: Mat7::identity(),
            vol_scale: 1.0,
        }
    }

    pub fn g(&self) -> &Mat7 {
        &self.g
    }

    pub fn g_inv(&self) -> &Mat7 {
        &self.g_inv
    }

    /// `√det g`.
    pub fn vol_scale(&self) -> f64 {
        self.vol_scale
    }

    /// The metric volume form `√det g · e¹²³⁴⁵⁶⁷`.
    pub fn volume_form(&self) -> AltForm {
        AltForm::top(self.vol_scale)
    }

    /// Ratio of extreme eigenvalues.
    pub fn condition_number(&self) -> f64 {
        let eig = self.g.symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        hi / lo
    }

    /// Lowers a vector to a covector.
    pub fn flat(&self, v: &[f64; DIM]) -> [f64; DIM] {
        let r = self.g * Vec7::from_column_slice(v);
        r.into()
    }

    /// Raises a covector to a vector.
    pub fn sharp(&self, w: &[f64; DIM]) -> [f64; DIM] {
        let r = self.g_inv * Vec7::from_column_slice(w);
        r.into()
    }

    /// Trace of a symmetric 2-tensor with respect to this metric.
    pub fn trace(&self, h: &Mat7) -> f64 {
        self.g_inv.component_mul(h).sum()
    }
}

/// The `k`-th compound (exterior power) of a 7×7 matrix, acting on
/// coefficient vectors of `k`-forms. Entry `(I, J)` is the minor
/// `det A[I, J]`.
#[derive(Clone)]
pub struct Compound {
    degree: usize,
    data: Vec<f64>,
}

impl Compound {
    pub fn new(a: &Mat7, k: usize) -> Self {
        assert!(k <= DIM);
        let mut prev = Self::identity0();
        for d in 1..=k {
            prev = prev.raise(a, d);
        }
        prev
    }

    /// All compounds `C_0 ..= C_k` of `a`.
    pub fn tower(a: &Mat7, k: usize) -> Vec<Self> {
        let mut out = vec![Self::identity0()];
        for d in 1..=k {
            let next = out[d - 1].raise(a, d);
            out.push(next);
        }
        out
    }

    fn identity0() -> Self {
        Self {
            degree: 0,
            data: vec![1.0],
        }
    }

    /// Laplace expansion along the first row index:
    /// `C_d[I,J] = Σ_r (-1)^r a[i₀, j_r] C_{d-1}[I∖i₀, J∖j_r]`.
    fn raise(&self, a: &Mat7, d: usize) -> Self {
        debug_assert_eq!(self.degree + 1, d);
        let t = tables();
        let n = n_components(d);
        let np = n_components(d - 1);
        let cols = &t.laplace_cols[d];
        let mut data = Vec::with_capacity(n * n);
        for &(i0, rest_i) in &t.laplace_rows[d] {
            let arow = a.row(i0 as usize);
            let prev = &self.data[rest_i as usize * np..(rest_i as usize + 1) * np];
            data.extend(cols.chunks_exact(d).map(|terms| {
                terms
                    .iter()
                    .map(|&(jr, rest_j, sign)| sign * arow[jr as usize] * prev[rest_j as usize])
                    .sum::<f64>()
            }));
        }
        Self { degree: d, data }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * n_components(self.degree) + j]
    }

    /// `C · a` for a form of matching degree.
    pub fn apply(&self, a: &AltForm) -> AltForm {
        debug_assert_eq!(a.degree, self.degree);
        let n = n_components(self.degree);
        let mut out = AltForm::zero(self.degree);
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            out.coeffs[i] = row.iter().zip(&a.coeffs[..n]).map(|(r, x)| r * x).sum();
        }
        out
    }

    /// `aᵀ C b`.
    pub fn bilinear(&self, a: &AltForm, b: &AltForm) -> f64 {
        let cb = self.apply(b);
        a.coeffs().iter().zip(cb.coeffs()).map(|(x, y)| x * y).sum()
    }
}

/// Maps raised coefficients `a^I` onto the complementary basis with the
/// orientation signs, scaled by `vol_scale`: `(*a)_{Iᶜ} = √det g · σ(I,Iᶜ) · a^I`.
pub(crate) fn complement_scaled(raised: &AltForm, vol_scale: f64) -> AltForm {
    let k = raised.degree;
    let t = tables();
    let fault = STAR_SIGN_FAULT.with(|f| f.get());
    let mut out = AltForm::zero(DIM - k);
    for n in 0..n_components(k) {
        let mut sign = t.star_sign[k][n];
        if fault == Some((k, n)) {
            sign = -sign;
        }
        out.coeffs[t.star_target[k][n] as usize] = vol_scale * sign * raised.coeffs[n];
    }
    out
}

/// Hodge star of `a` with respect to `m`, so that `a ∧ *b = ⟨a, b⟩ vol`.
pub fn hodge_star(a: &AltForm, m: &Metric) -> AltForm {
    let raised = Compound::new(&m.g_inv, a.degree).apply(a);
    complement_scaled(&raised, m.vol_scale)
}

/// Pointwise inner product of two forms of equal degree.
pub fn form_inner(a: &AltForm, b: &AltForm, m: &Metric) -> Result<f64> {
    if a.degree != b.degree {
        return Err(Error::DegreeMismatch {
            left: a.degree,
            right: b.degree,
        });
    }
    Ok(Compound::new(&m.g_inv, a.degree).bilinear(a, b))
}

/// Pointwise norm squared.
pub fn form_norm2(a: &AltForm, m: &Metric) -> f64 {
    Compound::new(&m.g_inv, a.degree).bilinear(a, a)
}
