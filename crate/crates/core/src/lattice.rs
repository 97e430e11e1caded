//! Discrete exterior calculus on a flat periodic 7-dimensional grid.
//!
//! Sites are numbered row-major with the last axis fastest. A field of
//! degree `k` stores one contiguous plane of site values per basis
//! component, in lexicographic component order.
//!
//! Both derivative schemes are real antisymmetric circulant operators, so
//! the discrete `d` squares to zero and its transpose is available exactly.
//! The codifferential is defined as the adjoint of `d` for the metric-weighted
//! `L²` pairing.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::exterior::{n_components, AltForm, Compound, Mat7, Metric, MultiIndex, DIM};
use crate::{Error, Result};

/// Spatial derivative discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Fourier differentiation with the Nyquist mode removed.
    Spectral,
    /// Second-order central differences `(f(x+h) − f(x−h)) / 2h`.
    Central,
}

impl Scheme {
    pub fn tag(self) -> u8 {
        match self {
            Scheme::Spectral => 0,
            Scheme::Central => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Scheme::Spectral),
            1 => Ok(Scheme::Central),
            t => Err(Error::Format(format!("unknown scheme tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Spectral => "spectral",
            Scheme::Central => "central",
        }
    }
}

/// A periodic grid. Directions of extent 1 are degenerate: fields are
/// constant along them and their derivatives vanish.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    extents: [usize; DIM],
    spacings: [f64; DIM],
    scheme: Scheme,
    strides: [usize; DIM],
    sites: usize,
}

impl Grid {
    pub fn new(extents: [usize; DIM], spacings: [f64; DIM], scheme: Scheme) -> Result<Self> {
        for a in 0..DIM {
            if extents[a] == 0 {
                return Err(Error::InvalidGrid(format!("extent of axis {} is zero", a + 1)));
            }
            if !(spacings[a].is_finite() && spacings[a] > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "spacing of axis {} must be finite and positive, got {}",
                    a + 1,
                    spacings[a]
                )));
            }
            if scheme == Scheme::Spectral && (2..4).contains(&extents[a]) {
                return Err(Error::InvalidGrid(format!(
                    "spectral scheme needs extent 1 or at least 4 on axis {}, got {}",
                    a + 1,
                    extents[a]
                )));
            }
        }
        let sites = extents
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidGrid("site count overflows".into()))?;
        let mut strides = [1usize; DIM];
        for a in (0..DIM - 1).rev() {
            strides[a] = strides[a + 1] * extents[a + 1];
        }
        Ok(Self {
            extents,
            spacings,
            scheme,
            strides,
            sites,
        })
    }

    /// A grid with `n` points on each listed axis over a period `length`,
    /// degenerate elsewhere.
    pub fn cube(axes: &[usize], n: usize, length: f64, scheme: Scheme) -> Result<Self> {
        let mut extents = [1; DIM];
        let mut spacings = [1.0; DIM];
        for &a in axes {
            if a >= DIM {
                return Err(Error::InvalidGrid(format!("axis {a} out of range")));
            }
            extents[a] = n;
            spacings[a] = length / n as f64;
        }
        Self::new(extents, spacings, scheme)
    }

    pub fn extents(&self) -> [usize; DIM] {
        self.extents
    }

    pub fn spacings(&self) -> [f64; DIM] {
        self.spacings
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn with_scheme(&self, scheme: Scheme) -> Result<Self> {
        Self::new(self.extents, self.spacings, scheme)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Period `N·h` of each axis.
    pub fn lengths(&self) -> [f64; DIM] {
        std::array::from_fn(|a| self.extents[a] as f64 * self.spacings[a])
    }

    /// `∏ h_i`.
    pub fn cell_volume(&self) -> f64 {
        self.spacings.iter().product()
    }

    /// Total volume `∏ N_i h_i`.
    pub fn total_volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn active_axes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..DIM).filter(|&a| self.extents[a] > 1)
    }

    pub fn coords(&self, site: usize) -> [usize; DIM] {
        std::array::from_fn(|a| (site / self.strides[a]) % self.extents[a])
    }

    pub fn site(&self, coords: [usize; DIM]) -> usize {
        (0..DIM).map(|a| (coords[a] % self.extents[a]) * self.strides[a]).sum()
    }

    pub fn position(&self, site: usize) -> [f64; DIM] {
        let c = self.coords(site);
        std::array::from_fn(|a| c[a] as f64 * self.spacings[a])
    }

    /// Signed integer frequency of FFT bin `j` along `axis`.
    pub fn frequency(&self, axis: usize, j: usize) -> i64 {
        let n = self.extents[axis];
        if 2 * j <= n {
            j as i64
        } else {
            j as i64 - n as i64
        }
    }

    /// Real symbol `k` of the first-derivative operator on bin `j`, so that
    /// `∂ e^{2πi m x/L} = i k e^{2πi m x/L}`.
    pub fn wavenumber(&self, axis: usize, j: usize) -> f64 {
        let n = self.extents[axis];
        if n == 1 {
            return 0.0;
        }
        match self.scheme {
            Scheme::Spectral => {
                if 2 * j == n {
                    0.0
                } else {
                    2.0 * PI * self.frequency(axis, j) as f64 / self.lengths()[axis]
                }
            }
            Scheme::Central => (2.0 * PI * j as f64 / n as f64).sin() / self.spacings[axis],
        }
    }

    /// Largest `|k|` along an axis.
    pub fn max_wavenumber(&self, axis: usize) -> f64 {
        (0..self.extents[axis])
            .map(|j| self.wavenumber(axis, j).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest nonzero eigenvalue of the flat Laplacian `Σ k_a²` on this grid.
    pub fn first_eigenvalue(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for a in self.active_axes() {
            for j in 0..self.extents[a] {
                let k2 = self.wavenumber(a, j).powi(2);
                if k2 > 1e-12 * (1.0 + self.max_wavenumber(a).powi(2)) {
                    best = Some(best.map_or(k2, |b| b.min(k2)));
                }
            }
        }
        best
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Sum that is deterministic, independent of thread count and of the order
/// of the input: values are sorted, then added along a balanced binary tree.
pub fn reduce_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    pairwise_sum(&v)
}

/// Balanced binary-tree summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// A degree-`k` form field on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField {
    grid: Grid,
    degree: usize,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(grid: &Grid, degree: usize) -> Self {
        assert!(degree <= DIM, "form degree {degree} exceeds {DIM}");
        Self {
            grid: grid.clone(),
            degree,
            values: vec![0.0; n_components(degree) * grid.sites()],
        }
    }

    /// The same form at every site.
    pub fn uniform(grid: &Grid, form: &AltForm) -> Self {
        let mut f = Self::zeros(grid, form.degree());
        for (c, &v) in form.coeffs().iter().enumerate() {
            f.plane_mut(c).fill(v);
        }
        f
    }

    /// Samples `f(x)` at every site position.
    pub fn from_fn<F>(grid: &Grid, degree: usize, f: F) -> Result<Self>
    where
        F: Fn([f64; DIM]) -> AltForm + Sync,
    {
        let field = par_map_sites(grid, degree, |s| f(grid.position(s)));
        if field.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sampled field"));
        }
        Ok(field)
    }

    /// Builds a field from coefficients in site-major order (the snapshot layout).
    pub fn from_site_major(grid: &Grid, degree: usize, data: &[f64]) -> Result<Self> {
        if degree > DIM {
            return Err(Error::DegreeOutOfRange(degree));
        }
        let nc = n_components(degree);
        if data.len() != nc * grid.sites() {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients, found {}",
                nc * grid.sites(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field data"));
        }
        let mut f = Self::zeros(grid, degree);
        let n = grid.sites();
        for s in 0..n {
            for c in 0..nc {
                f.values[c * n + s] = data[s * nc + c];
            }
        }
        Ok(f)
    }

    pub fn to_site_major(&self) -> Vec<f64> {
        let nc = self.n_components();
        let n = self.grid.sites();
        let mut out = vec![0.0; nc * n];
        for c in 0..nc {
            for s in 0..n {
                out[s * nc + c] = self.values[c * n + s];
            }
        }
        out
    }

    pub(crate) fn from_site_forms(grid: &Grid, degree: usize, forms: &[AltForm]) -> Self {
        let n = grid.sites();
        let nc = n_components(degree);
        let mut values = vec![0.0; nc * n];
        for (s, f) in forms.iter().enumerate() {
            debug_assert_eq!(f.degree(), degree);
            for (c, &v) in f.coeffs().iter().enumerate() {
                values[c * n + s] = v;
            }
        }
        Self {
            grid: grid.clone(),
            degree,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_components(&self) -> usize {
        n_components(self.degree)
    }

    /// Site values of one basis component.
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.grid.sites();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.sites();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn at(&self, site: usize) -> AltForm {
        let n = self.grid.sites();
        let mut f = AltForm::zero(self.degree);
        for (c, v) in f.coeffs_mut().iter_mut().enumerate() {
            *v = self.values[c * n + site];
        }
        f
    }

    pub fn set(&mut self, site: usize, form: &AltForm) {
        assert_eq!(form.degree(), self.degree);
        let n = self.grid.sites();
        for (c, &v) in form.coeffs().iter().enumerate() {
            self.values[c * n + site] = v;
        }
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += s·other`.
    pub fn axpy(&mut self, s: f64, other: &LatticeField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch {
                left: self.degree,
                right: other.degree,
            });
        }
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += s * b);
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s·other` as a new field.
    pub fn plus(&self, s: f64, other: &LatticeField) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(s, other)?;
        Ok(out)
    }

    /// Grid mean of each component.
    pub fn component_means(&self) -> Vec<f64> {
        let n = self.grid.sites() as f64;
        (0..self.n_components())
            .map(|c| reduce_sum(self.plane(c)) / n)
            .collect()
    }

    /// Cyclic shift by whole lattice steps: the value at site `x` moves to `x + offset`.
    pub fn translated(&self, offset: [usize; DIM]) -> Self {
        let g = &self.grid;
        let mut out = Self::zeros(g, self.degree);
        for c in 0..self.n_components() {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for s in 0..g.sites() {
                let mut x = g.coords(s);
                for a in 0..DIM {
                    x[a] += offset[a];
                }
                dst[g.site(x)] = src[s];
            }
        }
        out
    }

    /// Flat (identity metric, cell-weighted) squared `L²` norm of the coefficients.
    pub fn flat_norm2(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        reduce_sum(&sq) * self.grid.cell_volume()
    }
}

/// Evaluates `f` at every site in parallel and collects the result as a field.
pub(crate) fn par_map_sites<F>(grid: &Grid, degree: usize, f: F) -> LatticeField
where
    F: Fn(usize) -> AltForm + Sync,
{
    let forms: Vec<AltForm> = (0..grid.sites()).into_par_iter().map(|s| f(s)).collect();
    LatticeField::from_site_forms(grid, degree, &forms)
}

/// Fallible site map; reports the lowest failing site.
pub(crate) fn try_map_sites<T, F>(grid: &Grid, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..grid.sites()).into_par_iter().map(|s| f(s)).collect();
    results.into_iter().collect()
}

/// A metric at every site.
#[derive(Clone, Debug)]
pub struct MetricField {
    grid: Grid,
    metrics: Vec<Metric>,
    identity: bool,
}

impl MetricField {
    pub fn new(grid: &Grid, metrics: Vec<Metric>) -> Result<Self> {
        if metrics.len() != grid.sites() {
            return Err(Error::InvalidInput(format!(
                "metric field needs {} sites, got {}",
                grid.sites(),
                metrics.len()
            )));
        }
        for m in &metrics {
            let cond = m.condition_number();
            if cond > crate::g2::MAX_CONDITION {
                return Err(Error::IllConditioned(cond));
            }
        }
        let identity = metrics.iter().all(|m| *m.g() == Mat7::identity());
        Ok(Self {
            grid: grid.clone(),
            metrics,
            identity,
        })
    }

    /// Skips the conditioning check for metrics already validated by their frames.
    pub(crate) fn from_conditioned(grid: &Grid, metrics: Vec<Metric>) -> Self {
        debug_assert_eq!(metrics.len(), grid.sites());
        let identity = metrics.iter().all(|m| *m.g() == Mat7::identity());
        Self {
            grid: grid.clone(),
            metrics,
            identity,
        }
    }

    pub fn flat(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            metrics: vec![Metric::identity(); grid.sites()],
            identity: true,
        }
    }

    pub fn uniform(grid: &Grid, m: Metric) -> Result<Self> {
        Self::new(grid, vec![m; grid.sites()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn at(&self, site: usize) -> &Metric {
        &self.metrics[site]
    }

    pub fn metrics(&self) -> &[Metric] {
        &self.metrics
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// The common metric if every site carries the same one.
    pub fn uniform_value(&self) -> Option<Metric> {
        let first = self.metrics[0];
        self.metrics.iter().all(|m| *m == first).then_some(first)
    }

    /// Component `(i, j)` of `g` as a scalar plane.
    pub fn component(&self, i: usize, j: usize) -> Vec<f64> {
        self.metrics.iter().map(|m| m.g()[(i, j)]).collect()
    }

    /// Integral of the metric volume form.
    pub fn volume(&self) -> f64 {
        let v: Vec<f64> = self.metrics.iter().map(|m| m.vol_scale()).collect();
        reduce_sum(&v) * self.grid.cell_volume()
    }
}

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut p = planner().lock().expect("fft planner lock");
    (p.plan_fft_forward(n), p.plan_fft_inverse(n))
}

/// Base indices of all lines along `axis`.
fn line_starts(grid: &Grid, axis: usize) -> Vec<usize> {
    let n = grid.extents[axis];
    let s = grid.strides[axis];
    let outer = grid.sites / (n * s);
    let mut starts = Vec::with_capacity(outer * s);
    for o in 0..outer {
        for i in 0..s {
            starts.push(o * n * s + i);
        }
    }
    starts
}

/// First derivative of a scalar plane along `axis`.
pub fn partial(grid: &Grid, plane: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.extents[axis];
    let mut out = vec![0.0; plane.len()];
    if n == 1 {
        return out;
    }
    let s = grid.strides[axis];
    match grid.scheme {
        Scheme::Central => {
            let inv = 0.5 / grid.spacings[axis];
            for start in line_starts(grid, axis) {
                for j in 0..n {
                    let fwd = plane[start + ((j + 1) % n) * s];
                    let bwd = plane[start + ((j + n - 1) % n) * s];
                    out[start + j * s] = (fwd - bwd) * inv;
                }
            }
        }
        Scheme::Spectral => {
            let (fwd, inv) = fft_pair(n);
            let k: Vec<f64> = (0..n).map(|j| grid.wavenumber(axis, j) / n as f64).collect();
            let starts = line_starts(grid, axis);
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len()];
            // Two real lines share one complex transform.
            for pair in starts.chunks(2) {
                let (a, b) = (pair[0], pair.get(1).copied());
                for j in 0..n {
                    let im = b.map_or(0.0, |b| plane[b + j * s]);
                    buf[j] = Complex64::new(plane[a + j * s], im);
                }
                fwd.process_with_scratch(&mut buf, &mut scratch);
                for (z, kj) in buf.iter_mut().zip(&k) {
                    *z = Complex64::new(-z.im * kj, z.re * kj);
                }
                inv.process_with_scratch(&mut buf, &mut scratch);
                for j in 0..n {
                    out[a + j * s] = buf[j].re;
                    if let Some(b) = b {
                        out[b + j * s] = buf[j].im;
                    }
                }
            }
        }
    }
    out
}

/// Discrete Fourier transform of a scalar plane over all active axes.
pub fn fft_nd(grid: &Grid, plane: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_nd(grid, &mut data, false);
    data
}

/// Inverse of [`fft_nd`], including the `1/N` normalization.
pub fn ifft_nd(grid: &Grid, data: &[Complex64]) -> Vec<Complex64> {
    let mut out = data.to_vec();
    transform_nd(grid, &mut out, true);
    let scale = 1.0 / grid.sites() as f64;
    out.iter_mut().for_each(|z| *z *= scale);
    out
}

fn transform_nd(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    for axis in grid.active_axes().collect::<Vec<_>>() {
        let n = grid.extents[axis];
        let s = grid.strides[axis];
        let (fwd, inv) = fft_pair(n);
        let plan = if inverse { inv } else { fwd };
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for start in line_starts(grid, axis) {
            for j in 0..n {
                buf[j] = data[start + j * s];
            }
            plan.process_with_scratch(&mut buf, &mut scratch);
            for j in 0..n {
                data[start + j * s] = buf[j];
            }
        }
    }
}

/// Per-axis coordinate of every site, for the active axes only.
fn active_coords(grid: &Grid) -> (Vec<usize>, Vec<Vec<usize>>) {
    let axes: Vec<usize> = grid.active_axes().collect();
    let coords = axes
        .iter()
        .map(|&a| {
            (0..grid.sites())
                .map(|s| (s / grid.strides[a]) % grid.extents[a])
                .collect()
        })
        .collect();
    (axes, coords)
}

/// `Σ_ab q^{ab} k_a k_b` for the FFT bin of every site.
pub(crate) fn symbol_table(grid: &Grid, q: &Mat7) -> Vec<f64> {
    let (axes, coords) = active_coords(grid);
    let k: Vec<Vec<f64>> = axes
        .iter()
        .map(|&a| (0..grid.extents[a]).map(|j| grid.wavenumber(a, j)).collect())
        .collect();
    (0..grid.sites())
        .map(|s| {
            let mut acc = 0.0;
            for (i, &a) in axes.iter().enumerate() {
                let ka = k[i][coords[i][s]];
                if ka == 0.0 {
                    continue;
                }
                for (j, &b) in axes.iter().enumerate() {
                    acc += q[(a, b)] * ka * k[j][coords[j][s]];
                }
            }
            acc
        })
        .collect()
}

/// Multiplies every component of a field by `mult` in Fourier space.
pub(crate) fn apply_multiplier(field: &LatticeField, mult: &[f64]) -> LatticeField {
    let g = field.grid();
    let planes: Vec<Vec<f64>> = (0..field.n_components())
        .into_par_iter()
        .map(|c| {
            let mut hat = fft_nd(g, field.plane(c));
            hat.iter_mut().zip(mult).for_each(|(z, m)| *z *= *m);
            ifft_nd(g, &hat).into_iter().map(|z| z.re).collect()
        })
        .collect();
    let mut out = LatticeField::zeros(g, field.degree());
    for (c, p) in planes.into_iter().enumerate() {
        out.plane_mut(c).copy_from_slice(&p);
    }
    out
}

/// Hodge Laplacian for a spatially constant metric, applied in Fourier space.
/// Agrees with [`hodge_laplacian`] for uniform metric fields.
pub fn constant_metric_laplacian(field: &LatticeField, m: &Metric) -> LatticeField {
    let q = *m.g_inv();
    type Cached = Option<(Grid, Mat7, Arc<Vec<f64>>)>;
    thread_local! {
        static LAST: std::cell::RefCell<Cached> = const { std::cell::RefCell::new(None) };
    }
    let table = LAST.with(|last| {
        let mut last = last.borrow_mut();
        match &*last {
            Some((g, cq, t)) if g == field.grid() && *cq == q => t.clone(),
            _ => {
                let t = Arc::new(symbol_table(field.grid(), &q));
                *last = Some((field.grid().clone(), q, t.clone()));
                t
            }
        }
    });
    apply_multiplier(field, &table)
}

/// Exponential spectral filter: every Fourier coefficient is multiplied by
/// `∏_a exp(−strength · η_a^order)`, where `η_a = |m_a| / (N_a/2)` on each
/// active axis. The mean is untouched and the filter commutes with `d`.
pub fn exponential_filter(field: &LatticeField, order: u32, strength: f64) -> Result<LatticeField> {
    let g = field.grid();
    if g.scheme != Scheme::Spectral {
        return Err(Error::InvalidInput("the spectral filter needs a spectral grid".into()));
    }
    let (axes, coords) = active_coords(g);
    let mult: Vec<f64> = (0..g.sites())
        .map(|s| {
            let e: f64 = axes
                .iter()
                .zip(&coords)
                .map(|(&a, c)| {
                    let eta = g.frequency(a, c[s]).unsigned_abs() as f64 / (g.extents[a] / 2) as f64;
                    eta.powi(order as i32)
                })
                .sum();
            (-strength * e).exp()
        })
        .collect();
    Ok(apply_multiplier(field, &mult))
}

/// Sign of `e^a ∧ e^I = sign · e^{I∪a}`.
fn insert_sign(mask: u8, axis: usize) -> f64 {
    if (mask & ((1u8 << axis) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Exterior derivative `dα = Σ_a e^a ∧ ∂_a α`.
pub fn d(field: &LatticeField) -> Result<LatticeField> {
    let k = field.degree;
    if k >= DIM {
        return Err(Error::DegreeOverflow { left: k, right: 1 });
    }
    let g = &field.grid;
    let tasks: Vec<(usize, usize)> = (0..n_components(k))
        .flat_map(|c| {
            let mask = MultiIndex::of_degree(k, c).mask();
            g.active_axes()
                .filter(move |&a| mask & (1 << a) == 0)
                .map(move |a| (c, a))
                .collect::<Vec<_>>()
        })
        .collect();
    let derivs: Vec<Vec<f64>> = tasks.par_iter().map(|&(c, a)| partial(g, field.plane(c), a)).collect();
    let mut out = LatticeField::zeros(g, k + 1);
    for (&(c, a), dp) in tasks.iter().zip(&derivs) {
        let mask = MultiIndex::of_degree(k, c).mask();
        let sign = insert_sign(mask, a);
        let target = MultiIndex::from_mask(mask | (1 << a)).position();
        out.plane_mut(target)
            .iter_mut()
            .zip(dp)
            .for_each(|(o, v)| *o += sign * v);
    }
    Ok(out)
}

/// Euclidean transpose of [`d`]: `dᵀβ = −Σ_a ∂_a (e_a⌟β)`.
fn d_transpose(field: &LatticeField) -> LatticeField {
    let k = field.degree;
    let g = &field.grid;
    let tasks: Vec<(usize, usize)> = (0..n_components(k))
        .flat_map(|c| {
            let mask = MultiIndex::of_degree(k, c).mask();
            g.active_axes()
                .filter(move |&a| mask & (1 << a) != 0)
                .map(move |a| (c, a))
                .collect::<Vec<_>>()
        })
        .collect();
    let derivs: Vec<Vec<f64>> = tasks.par_iter().map(|&(c, a)| partial(g, field.plane(c), a)).collect();
    let mut out = LatticeField::zeros(g, k - 1);
    for (&(c, a), dp) in tasks.iter().zip(&derivs) {
        let mask = MultiIndex::of_degree(k, c).mask();
        let rest = mask & !(1 << a);
        let sign = -insert_sign(rest, a);
        let target = MultiIndex::from_mask(rest).position();
        out.plane_mut(target)
            .iter_mut()
            .zip(dp)
            .for_each(|(o, v)| *o += sign * v);
    }
    out
}

/// Codifferential: the adjoint of [`d`] for [`l2_inner`] under `mf`.
///
/// With `w = √det g`, `β ↦ w·C_k(g⁻¹)β` lowers the indices, the transpose of
/// the derivative stencil is applied, and `C_{k−1}(g)/w` raises them back.
pub fn codiff(field: &LatticeField, mf: &MetricField) -> Result<LatticeField> {
    let k = field.degree;
    if k == 0 {
        return Err(Error::DegreeUnderflow("codifferential of a 0-form"));
    }
    field.grid.check_same(&mf.grid)?;
    if mf.identity {
        return Ok(d_transpose(field));
    }
    let lowered = par_map_sites(&field.grid, k, |s| {
        let m = mf.at(s);
        Compound::new(m.g_inv(), k).apply(&field.at(s)) * m.vol_scale()
    });
    let t = d_transpose(&lowered);
    Ok(par_map_sites(&field.grid, k - 1, |s| {
        let m = mf.at(s);
        Compound::new(m.g(), k - 1).apply(&t.at(s)) * (1.0 / m.vol_scale())
    }))
}

/// Hodge Laplacian `dδ + δd`.
pub fn hodge_laplacian(field: &LatticeField, mf: &MetricField) -> Result<LatticeField> {
    let k = field.degree;
    let mut out = LatticeField::zeros(&field.grid, k);
    if k < DIM {
        out.axpy(1.0, &codiff(&d(field)?, mf)?)?;
    }
    if k > 0 {
        out.axpy(1.0, &d(&codiff(field, mf)?)?)?;
    }
    Ok(out)
}

/// `∫ ⟨a, b⟩_g vol_g`, as `Σ_sites ⟨a,b⟩ √det g ∏h`.
pub fn l2_inner(a: &LatticeField, b: &LatticeField, mf: &MetricField) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    a.grid.check_same(&mf.grid)?;
    if a.degree != b.degree {
        return Err(Error::DegreeMismatch {
            left: a.degree,
            right: b.degree,
        });
    }
    let k = a.degree;
    let terms: Vec<f64> = (0..a.grid.sites())
        .into_par_iter()
        .map(|s| {
            let m = mf.at(s);
            let (x, y) = (a.at(s), b.at(s));
            let ip = if mf.identity {
                x.coeffs().iter().zip(y.coeffs()).map(|(p, q)| p * q).sum()
            } else {
                Compound::new(m.g_inv(), k).bilinear(&x, &y)
            };
            ip * m.vol_scale()
        })
        .collect();
    Ok(reduce_sum(&terms) * a.grid.cell_volume())
}

/// Riemann sum of a top-degree field.
pub fn integrate_top(field: &LatticeField) -> Result<f64> {
    if field.degree != DIM {
        return Err(Error::DegreeMismatch {
            left: field.degree,
            right: DIM,
        });
    }
    Ok(reduce_sum(field.plane(0)) * field.grid.cell_volume())
}

/// Per-component grid means of a (closed) form field.
#[derive(Clone, Debug, PartialEq)]
pub struct Periods {
    pub degree: usize,
    pub values: Vec<f64>,
    /// Largest coefficient of `d` of the field.
    pub d_residual: f64,
}

impl Periods {
    /// Largest componentwise difference to another set of periods.
    pub fn drift(&self, other: &Periods) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

pub fn periods(field: &LatticeField) -> Periods {
    let d_residual = if field.degree < DIM {
        d(field).map(|f| f.max_abs()).unwrap_or(0.0)
    } else {
        0.0
    };
    Periods {
        degree: field.degree,
        values: field.component_means(),
        d_residual,
    }
}

/// Nonzero integer frequency vectors over the active axes with
/// `|m|² ≤ shells`, one representative of each `±m` pair.
pub fn low_modes(grid: &Grid, shells: usize) -> Vec<[i64; DIM]> {
    let active: Vec<usize> = grid.active_axes().collect();
    let r = (shells as f64).sqrt().floor() as i64;
    let mut out = Vec::new();
    let mut m = [0i64; DIM];
    fn rec(idx: usize, active: &[usize], r: i64, shells: i64, m: &mut [i64; DIM], out: &mut Vec<[i64; DIM]>) {
        if idx == active.len() {
            let n2: i64 = m.iter().map(|x| x * x).sum();
            // Keep the representative whose first nonzero entry is positive.
            let first = m.iter().find(|&&x| x != 0);
            if n2 > 0 && n2 <= shells && first.is_some_and(|&x| x > 0) {
                out.push(*m);
            }
            return;
        }
        for v in -r..=r {
            m[active[idx]] = v;
            rec(idx + 1, active, r, shells, m, out);
        }
        m[active[idx]] = 0;
    }
    rec(0, &active, r, shells as i64, &mut m, &mut out);
    out
}

/// A random real field whose every component is a combination of the
/// Fourier modes with `0 < |m|² ≤ shells`, with coefficients drawn uniformly
/// from `[−amplitude, amplitude]` by a seeded generator. The grid mean is zero.
pub fn band_limited_random(
    grid: &Grid,
    degree: usize,
    shells: usize,
    amplitude: f64,
    seed: u64,
) -> Result<LatticeField> {
    if degree > DIM {
        return Err(Error::DegreeOutOfRange(degree));
    }
    let modes = low_modes(grid, shells);
    for m in &modes {
        for a in grid.active_axes() {
            if grid.scheme == Scheme::Spectral && 2 * m[a].unsigned_abs() as usize >= grid.extents[a] {
                return Err(Error::InvalidGrid(format!(
                    "axis {} with {} points cannot resolve shell {}",
                    a + 1,
                    grid.extents[a],
                    shells
                )));
            }
        }
    }
    let nc = n_components(degree);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // coeffs[c][mode] = (cos, sin)
    let coeffs: Vec<Vec<(f64, f64)>> = (0..nc)
        .map(|_| {
            modes
                .iter()
                .map(|_| {
                    (
                        rng.gen_range(-amplitude..=amplitude),
                        rng.gen_range(-amplitude..=amplitude),
                    )
                })
                .collect()
        })
        .collect();
    let lengths = grid.lengths();
    Ok(par_map_sites(grid, degree, |s| {
        let x = grid.position(s);
        let phases: Vec<f64> = modes
            .iter()
            .map(|m| (0..DIM).map(|a| 2.0 * PI * m[a] as f64 * x[a] / lengths[a]).sum())
            .collect();
        let mut f = AltForm::zero(degree);
        for (c, v) in f.coeffs_mut().iter_mut().enumerate() {
            *v = phases
                .iter()
                .zip(&coeffs[c])
                .map(|(p, (a, b))| a * p.cos() + b * p.sin())
                .sum();
        }
        f
    }))
}

/// Fraction of the mean-free spectral energy of a field carried by modes in
/// the upper half of the resolved band on some active axis.
pub fn highest_frequency_fraction(field: &LatticeField) -> f64 {
    let g = field.grid();
    let (axes, coords) = active_coords(g);
    let high: Vec<bool> = (0..g.sites())
        .map(|s| {
            axes.iter()
                .zip(&coords)
                .any(|(&a, c)| 4 * g.frequency(a, c[s]).unsigned_abs() as usize > g.extents[a])
        })
        .collect();
    let parts: Vec<(f64, f64)> = (0..field.n_components())
        .into_par_iter()
        .map(|c| {
            let hat = fft_nd(g, field.plane(c));
            let mut total = Vec::with_capacity(hat.len());
            let mut top = Vec::new();
            for (s, z) in hat.iter().enumerate().skip(1) {
                let e = z.norm_sqr();
                total.push(e);
                if high[s] {
                    top.push(e);
                }
            }
            // Fixed site order, so no sort is needed for determinism.
            (pairwise_sum(&top), pairwise_sum(&total))
        })
        .collect();
    let top: f64 = pairwise_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let total: f64 = pairwise_sum(&parts.iter().map(|p| p.1).collect::<Vec<_>>());
    if total <= f64::MIN_POSITIVE {
        0.0
    } else {
        top / total
    }
}

/// Exact solution of `∂f/∂t = −Δf` for a constant metric, evaluated by
/// damping each Fourier coefficient with `e^{−λt}`, where `λ` is the discrete
/// symbol of the grid's Laplacian.
pub fn spectral_heat_reference(initial: &LatticeField, mf: &MetricField, t: f64) -> Result<LatticeField> {
    initial.grid.check_same(&mf.grid)?;
    let m = mf
        .uniform_value()
        .ok_or_else(|| Error::InvalidInput("heat reference needs a spatially constant metric".into()))?;
    let q = *m.g_inv();
    let g = initial.grid();
    let damping: Vec<f64> = symbol_table(g, &q).into_iter().map(|l| (-t * l).exp()).collect();
    Ok(apply_multiplier(initial, &damping))
}
