//! Scalar functionals of G2 structures and curvature cross-checks.
//!
//! The curvature oracle works from the metric field alone (central-difference
//! Christoffel symbols), so comparing it with torsion-based formulas is a
//! check between two independent routes.

use rayon::prelude::*;

use crate::exterior::{interior_axis, wedge, AltForm, Compound, Mat7, DIM};
use crate::g2::{decompose_variation, j_map, TorsionFit};
use crate::lattice::{
    d, hodge_laplacian, par_map_sites, partial, periods, reduce_sum, Grid, LatticeField, MetricField, Periods, Scheme,
};
use crate::structure::{torsion_field, FrameField};
use crate::{Error, Result};

/// A symmetric 2-tensor at every site.
pub type Sym2Field = Vec<Mat7>;

/// Christoffel symbols at every site: `gamma[s][k][(i, j)] = Γᵏ_ij`.
pub type ChristoffelField = Vec<[Mat7; DIM]>;

fn central(grid: &Grid) -> Grid {
    grid.with_scheme(Scheme::Central)
        .expect("central differences accept every extent")
}

/// `(i, j, a)` for `i ≤ j` and every active axis `a`.
fn sym_tasks(active: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for i in 0..DIM {
        for j in i..DIM {
            out.extend(active.iter().map(|&a| (i, j, a)));
        }
    }
    out
}

/// `∂_a g_ij` at every site, differentiated on `deriv_grid`.
fn metric_derivatives(mf: &MetricField, deriv_grid: &Grid) -> Vec<[Mat7; DIM]> {
    let n = deriv_grid.sites();
    let mut out = vec![[Mat7::zeros(); DIM]; n];
    let active: Vec<usize> = deriv_grid.active_axes().collect();
    let tasks = sym_tasks(&active);
    let planes: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(i, j, a)| partial(deriv_grid, &mf.component(i, j), a))
        .collect();
    for (&(i, j, a), p) in tasks.iter().zip(&planes) {
        for s in 0..n {
            out[s][a][(i, j)] = p[s];
            out[s][a][(j, i)] = p[s];
        }
    }
    out
}

/// Christoffel symbols of the metric field with derivatives on `deriv_grid`.
pub fn christoffel_with(mf: &MetricField, deriv_grid: &Grid) -> ChristoffelField {
    let dg = metric_derivatives(mf, deriv_grid);
    (0..deriv_grid.sites())
        .into_par_iter()
        .map(|s| {
            let dg = &dg[s];
            // Γ_lij = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
            let mut lower = [Mat7::zeros(); DIM];
            for (l, low) in lower.iter_mut().enumerate() {
                for i in 0..DIM {
                    for j in 0..DIM {
                        low[(i, j)] = 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                }
            }
            let gi = mf.at(s).g_inv();
            std::array::from_fn(|k| {
                let mut m = Mat7::zeros();
                for (l, low) in lower.iter().enumerate() {
                    m += low * gi[(k, l)];
                }
                m
            })
        })
        .collect()
}

/// Christoffel symbols from central differences.
pub fn christoffel(mf: &MetricField) -> ChristoffelField {
    christoffel_with(mf, &central(mf.grid()))
}

/// Ricci tensor from Christoffel symbols differentiated on `deriv_grid`:
/// `R_ij = ∂_k Γᵏ_ij − ∂_j Γᵏ_ik + Γᵏ_kl Γˡ_ij − Γᵏ_jl Γˡ_ik`.
pub fn ricci_with(mf: &MetricField, deriv_grid: &Grid) -> Sym2Field {
    let n = deriv_grid.sites();
    let gamma = christoffel_with(mf, deriv_grid);
    let active: Vec<usize> = deriv_grid.active_axes().collect();
    // ∂_k Γᵏ_ij summed over active k.
    let pairs: Vec<(usize, usize)> = (0..DIM).flat_map(|i| (i..DIM).map(move |j| (i, j))).collect();
    let div_planes: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut acc = vec![0.0; n];
            for &k in &active {
                let plane: Vec<f64> = gamma.iter().map(|g| g[k][(i, j)]).collect();
                for (a, v) in acc.iter_mut().zip(partial(deriv_grid, &plane, k)) {
                    *a += v;
                }
            }
            acc
        })
        .collect();
    // v_i = Γᵏ_ik and its derivatives ∂_j v_i.
    let trace_planes: Vec<Vec<f64>> = (0..DIM)
        .map(|i| gamma.iter().map(|g| (0..DIM).map(|k| g[k][(i, k)]).sum()).collect())
        .collect();
    let grad_tasks: Vec<(usize, usize)> = (0..DIM).flat_map(|i| active.iter().map(move |&j| (i, j))).collect();
    let grad_planes: Vec<Vec<f64>> = grad_tasks
        .par_iter()
        .map(|&(i, j)| partial(deriv_grid, &trace_planes[i], j))
        .collect();
    let mut dv = vec![Mat7::zeros(); n];
    for (&(i, j), p) in grad_tasks.iter().zip(&grad_planes) {
        for s in 0..n {
            dv[s][(i, j)] = p[s];
        }
    }
    (0..n)
        .into_par_iter()
        .map(|s| {
            let g = &gamma[s];
            let trace: [f64; DIM] = std::array::from_fn(|l| (0..DIM).map(|k| g[k][(k, l)]).sum());
            let mut ric = Mat7::zeros();
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let mut v = div_planes[p][s] - 0.5 * (dv[s][(i, j)] + dv[s][(j, i)]);
                for l in 0..DIM {
                    v += trace[l] * g[l][(i, j)];
                }
                for k in 0..DIM {
                    for l in 0..DIM {
                        v -= g[k][(j, l)] * g[l][(i, k)];
                    }
                }
                ric[(i, j)] = v;
                ric[(j, i)] = v;
            }
            ric
        })
        .collect()
}

/// Ricci tensor of a metric field by central differences.
pub fn ricci_oracle(mf: &MetricField) -> Sym2Field {
    ricci_with(mf, &central(mf.grid()))
}

/// `R = g^{ij} R_ij` at every site.
pub fn scalar_curvature(mf: &MetricField, ric: &[Mat7]) -> Vec<f64> {
    ric.iter().zip(mf.metrics()).map(|(r, m)| m.trace(r)).collect()
}

/// `∫ f vol_g` for a scalar field.
pub fn integrate_scalar(mf: &MetricField, f: &[f64]) -> f64 {
    let terms: Vec<f64> = f.iter().zip(mf.metrics()).map(|(v, m)| v * m.vol_scale()).collect();
    reduce_sum(&terms) * mf.grid().cell_volume()
}

/// The volume `∫ vol_φ` and the same quantity written as `(1/7)∫ φ∧*φ`.
#[derive(Clone, Copy, Debug)]
pub struct VolumeReport {
    pub via_volume_form: f64,
    pub via_phi_psi: f64,
}

impl VolumeReport {
    pub fn relative_discrepancy(&self) -> f64 {
        (self.via_volume_form - self.via_phi_psi).abs() / self.via_volume_form.abs()
    }
}

pub fn volume_functional(phi: &LatticeField) -> Result<VolumeReport> {
    let frames = FrameField::new(phi)?;
    Ok(volume_from_frames(&frames))
}

pub(crate) fn volume_from_frames(frames: &FrameField) -> VolumeReport {
    let cell = frames.grid().cell_volume();
    let vol: Vec<f64> = frames.vol_scales();
    let wedge_top: Vec<f64> = frames
        .frames()
        .iter()
        .map(|f| wedge(f.phi(), f.psi()).expect("3+4").coeffs()[0] / 7.0)
        .collect();
    VolumeReport {
        via_volume_form: reduce_sum(&vol) * cell,
        via_phi_psi: reduce_sum(&wedge_top) * cell,
    }
}

/// `∫ |α|²_g vol_g` for a form field and per-site frames.
fn l2_norm2_frames(alpha: &LatticeField, frames: &FrameField) -> f64 {
    let terms: Vec<f64> = (0..alpha.grid().sites())
        .into_par_iter()
        .map(|s| {
            let f = frames.at(s);
            f.norm2(&alpha.at(s)) * f.metric().vol_scale()
        })
        .collect();
    reduce_sum(&terms) * alpha.grid().cell_volume()
}

/// `D(φ) = ½ ∫ (|dφ|² + |d*φ|²) vol_φ`.
pub fn dirichlet_d(phi: &LatticeField) -> Result<f64> {
    let frames = FrameField::new(phi)?;
    dirichlet_d_frames(phi, &frames)
}

fn dirichlet_d_frames(phi: &LatticeField, frames: &FrameField) -> Result<f64> {
    let dphi = d(phi)?;
    let dpsi = d(&frames.psi_field())?;
    Ok(0.5 * (l2_norm2_frames(&dphi, frames) + l2_norm2_frames(&dpsi, frames)))
}

/// `L²` norms squared `(∫τ0², ∫|τ1|², ∫|τ2|², ∫|τ3|²)` of fitted torsion.
pub fn torsion_l2_norms2(fits: &[TorsionFit], frames: &FrameField) -> [f64; 4] {
    let cell = frames.grid().cell_volume();
    let per_site: Vec<[f64; 4]> = fits
        .par_iter()
        .zip(frames.frames())
        .map(|(t, f)| {
            let w = f.metric().vol_scale();
            t.forms.norms2(f).map(|v| v * w)
        })
        .collect();
    std::array::from_fn(|i| reduce_sum(&per_site.iter().map(|v| v[i]).collect::<Vec<_>>()) * cell)
}

/// Torsion weights under which `D_ν` equals `D` for fields on the torsion
/// ansatz: `|dφ|² + |d*φ|² = 7τ0² + 84|τ1|² + |τ2|² + |τ3|²`.
pub const NU_MATCHING_D: [f64; 4] = [7.0, 84.0, 1.0, 1.0];

/// `D_ν(φ) = Σ (ν_i/2) ∫ |τ_i|² vol_φ`.
pub fn dirichlet_dnu(phi: &LatticeField, nu: &[f64; 4]) -> Result<f64> {
    let frames = FrameField::new(phi)?;
    let fits = torsion_field(phi, &frames)?;
    let n = torsion_l2_norms2(&fits, &frames);
    Ok((0..4).map(|i| 0.5 * nu[i] * n[i]).sum())
}

/// `|∇φ|²_g = g^{ab} ⟨∇_a φ, ∇_b φ⟩` at every site, with
/// `∇_a φ = ∂_a φ − Σ Γˡ_ai eⁱ ∧ (e_l ⌟ φ)` and central differences.
pub fn covariant_derivative_norm2(phi: &LatticeField, frames: &FrameField) -> Vec<f64> {
    let mf = frames.metric_field();
    let cgrid = central(phi.grid());
    let gamma = christoffel_with(mf, &cgrid);
    let active: Vec<usize> = cgrid.active_axes().collect();
    let k = phi.degree();
    let nc = phi.n_components();
    let tasks: Vec<(usize, usize)> = (0..nc).flat_map(|c| active.iter().map(move |&a| (c, a))).collect();
    let planes: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(c, a)| partial(&cgrid, phi.plane(c), a))
        .collect();
    (0..cgrid.sites())
        .into_par_iter()
        .map(|s| {
            let form = phi.at(s);
            let contractions: [AltForm; DIM] = std::array::from_fn(|l| interior_axis(l, &form));
            let nabla: [AltForm; DIM] = std::array::from_fn(|a| {
                let mut f = AltForm::zero(k);
                for (t, &(c, ta)) in tasks.iter().enumerate() {
                    if ta == a {
                        f.coeffs_mut()[c] = planes[t][s];
                    }
                }
                for i in 0..DIM {
                    let mut inner = AltForm::zero(k - 1);
                    for (l, cl) in contractions.iter().enumerate() {
                        let gam = gamma[s][l][(a, i)];
                        if gam != 0.0 {
                            inner.axpy(gam, cl);
                        }
                    }
                    let e_i = AltForm::basis(&[i]).expect("axis");
                    f -= wedge(&e_i, &inner).expect("1+2");
                }
                f
            });
            let m = frames.at(s).metric();
            let c3 = Compound::new(m.g_inv(), k);
            let gi = m.g_inv();
            let mut acc = 0.0;
            for a in 0..DIM {
                for b in 0..DIM {
                    if gi[(a, b)] != 0.0 {
                        acc += gi[(a, b)] * c3.bilinear(&nabla[a], &nabla[b]);
                    }
                }
            }
            acc
        })
        .collect()
}

/// `C(φ) = ½ ∫ |∇φ|² vol_φ`.
pub fn dirichlet_c(phi: &LatticeField) -> Result<f64> {
    let frames = FrameField::new(phi)?;
    let n2 = covariant_derivative_norm2(phi, &frames);
    Ok(0.5 * integrate_scalar(frames.metric_field(), &n2))
}

/// Coefficients in `Ric = −h + c₁|τ2|² g + c₂ j_φ(*(τ2∧τ2))`, where `h` is
/// half the metric rate induced by `Δ_φ φ` on a closed structure.
pub const RICCI_TAU2_SCALAR: f64 = 1.0 / 12.0;
pub const RICCI_TAU2_J: f64 = 1.0 / 8.0;

/// Ricci tensor of a closed structure read off its Hodge Laplacian.
pub fn ricci_from_laplacian(phi: &LatticeField) -> Result<Sym2Field> {
    ricci_from_laplacian_with(phi, RICCI_TAU2_SCALAR, RICCI_TAU2_J)
}

/// [`ricci_from_laplacian`] with explicit coefficients `c₁`, `c₂`.
pub fn ricci_from_laplacian_with(phi: &LatticeField, c_scalar: f64, c_j: f64) -> Result<Sym2Field> {
    let frames = FrameField::new(phi)?;
    let residual = d(phi)?.max_abs();
    if residual > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "structure is not closed (max |dφ| = {residual:.3e})"
        )));
    }
    let lap = hodge_laplacian(phi, frames.metric_field())?;
    let fits = torsion_field(phi, &frames)?;
    Ok((0..phi.grid().sites())
        .into_par_iter()
        .map(|s| {
            let f = frames.at(s);
            let h = decompose_variation(f, &lap.at(s)).h;
            let tau2 = fits[s].forms.tau2;
            let q = f.star(&wedge(&tau2, &tau2).expect("2+2"));
            -h + f.metric().g() * (c_scalar * f.norm2(&tau2)) + j_map(f, &q) * c_j
        })
        .collect())
}

/// `G(k) = k − ½ tr_h(k) h`.
pub fn gravitational_tensor(k: &[Mat7], h: &MetricField) -> Result<Sym2Field> {
    if k.len() != h.grid().sites() {
        return Err(Error::GridMismatch);
    }
    Ok(k.iter()
        .zip(h.metrics())
        .map(|(k, m)| k - m.g() * (0.5 * m.trace(k)))
        .collect())
}

/// `Div(k)_j = −h^{il} ∇_l k_ij` with the Levi-Civita connection of `h`,
/// all derivatives on `deriv_grid`.
pub fn divergence_with(k: &[Mat7], h: &MetricField, deriv_grid: &Grid) -> Vec<[f64; DIM]> {
    let n = deriv_grid.sites();
    let gamma = christoffel_with(h, deriv_grid);
    let active: Vec<usize> = deriv_grid.active_axes().collect();
    let tasks = sym_tasks(&active);
    let planes: Vec<Vec<f64>> = tasks
        .par_iter()
        .map(|&(i, j, a)| {
            let plane: Vec<f64> = k.iter().map(|m| m[(i, j)]).collect();
            partial(deriv_grid, &plane, a)
        })
        .collect();
    let mut dk = vec![[Mat7::zeros(); DIM]; n];
    for (&(i, j, a), p) in tasks.iter().zip(&planes) {
        for s in 0..n {
            dk[s][a][(i, j)] = p[s];
            dk[s][a][(j, i)] = p[s];
        }
    }
    (0..n)
        .into_par_iter()
        .map(|s| {
            let gi = h.at(s).g_inv();
            let g = &gamma[s];
            let km = &k[s];
            std::array::from_fn(|j| {
                let mut acc = 0.0;
                for l in 0..DIM {
                    for i in 0..DIM {
                        let w = gi[(i, l)];
                        if w == 0.0 {
                            continue;
                        }
                        let mut cov = dk[s][l][(i, j)];
                        for m in 0..DIM {
                            cov -= g[m][(l, i)] * km[(m, j)] + g[m][(l, j)] * km[(i, m)];
                        }
                        acc -= w * cov;
                    }
                }
                acc
            })
        })
        .collect()
}

/// `Div(k) + ½ d(tr_h k)`, the second route to `Div G(k)`.
pub fn divergence_of_gravitational_via_trace(k: &[Mat7], h: &MetricField, deriv_grid: &Grid) -> Vec<[f64; DIM]> {
    let div = divergence_with(k, h, deriv_grid);
    let tr: Vec<f64> = k.iter().zip(h.metrics()).map(|(k, m)| m.trace(k)).collect();
    let grads: Vec<Vec<f64>> = (0..DIM)
        .map(|a| {
            if deriv_grid.extents()[a] > 1 {
                partial(deriv_grid, &tr, a)
            } else {
                vec![0.0; tr.len()]
            }
        })
        .collect();
    div.iter()
        .enumerate()
        .map(|(s, v)| std::array::from_fn(|j| v[j] + 0.5 * grads[j][s]))
        .collect()
}

/// DeTurck vector field `X^m = (k⁻¹)^{mj} (Div_h G_h(k))_j` for the evolving
/// metric `h` and background `k`, derivatives in the grid's own scheme.
pub fn deturck_vector(h: &MetricField, k: &MetricField) -> Result<Vec<[f64; DIM]>> {
    if h.grid() != k.grid() {
        return Err(Error::GridMismatch);
    }
    let km: Vec<Mat7> = k.metrics().iter().map(|m| *m.g()).collect();
    let gk = gravitational_tensor(&km, h)?;
    let div = divergence_with(&gk, h, h.grid());
    Ok(div.iter().zip(k.metrics()).map(|(v, m)| m.sharp(v)).collect())
}

/// Lie derivative `(L_X g)_ij = ∇_i X_j + ∇_j X_i` for the metric field's own
/// connection, derivatives in the grid's scheme.
pub fn lie_derivative_of_metric(mf: &MetricField, x: &[[f64; DIM]]) -> Sym2Field {
    let grid = mf.grid();
    let n = grid.sites();
    let gamma = christoffel_with(mf, grid);
    let flat: Vec<[f64; DIM]> = x.iter().zip(mf.metrics()).map(|(v, m)| m.flat(v)).collect();
    let active: Vec<usize> = grid.active_axes().collect();
    let mut dx = vec![Mat7::zeros(); n];
    for j in 0..DIM {
        let plane: Vec<f64> = flat.iter().map(|v| v[j]).collect();
        for &i in &active {
            let p = partial(grid, &plane, i);
            for s in 0..n {
                dx[s][(i, j)] = p[s];
            }
        }
    }
    (0..n)
        .map(|s| {
            let mut out = Mat7::zeros();
            for i in 0..DIM {
                for j in 0..DIM {
                    let mut v = dx[s][(i, j)] + dx[s][(j, i)];
                    for k in 0..DIM {
                        v -= 2.0 * gamma[s][k][(i, j)] * flat[s][k];
                    }
                    out[(i, j)] = v;
                }
            }
            out
        })
        .collect()
}

/// Largest `|c − |τ2|²/7|` over all sites, where `c φ` is the `Λ³_1` part of
/// the rate `Δ_φ φ` of a closed structure.
pub fn laplacian_scalar_identity_residual(lap: &LatticeField, frames: &FrameField, fits: &[TorsionFit]) -> f64 {
    (0..lap.grid().sites())
        .into_par_iter()
        .map(|s| {
            let f = frames.at(s);
            let c = f.inner(&lap.at(s), f.phi()) / 7.0;
            (c - f.norm2(&fits[s].forms.tau2) / 7.0).abs()
        })
        .reduce(|| 0.0, f64::max)
}

/// Which form's periods are tracked along a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeriodTarget {
    Phi,
    Psi,
}

/// One sample of a flow's diagnostic time series. Quantities that do not
/// apply to the flowed field are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub t: f64,
    pub vol: Option<f64>,
    pub energy_c: Option<f64>,
    pub energy_d: Option<f64>,
    pub energy_dnu: Option<f64>,
    pub tau_norms: Option<[f64; 4]>,
    pub scalar_curvature_integral: Option<f64>,
    pub d_residual: Option<f64>,
    pub dstar_residual: Option<f64>,
    pub period_drift: Option<f64>,
    pub f0_identity_residual: Option<f64>,
    pub highest_frequency_fraction: Option<f64>,
    pub mean_deviation_l2: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "step",
    "t",
    "vol",
    "energy_c",
    "energy_d",
    "energy_dnu",
    "tau0_l2",
    "tau1_l2",
    "tau2_l2",
    "tau3_l2",
    "scalar_curvature_integral",
    "d_residual",
    "dstar_residual",
    "period_drift",
    "f0_identity_residual",
    "highest_frequency_fraction",
    "mean_deviation_l2",
    "",
];

impl DiagnosticsRecord {
    pub fn csv_header() -> String {
        CSV_COLUMNS[..17].join(",")
    }

    /// One CSV row with 17 significant digits; inapplicable cells are empty.
    pub fn csv_row(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        let tau = |i: usize| fmt(self.tau_norms.map(|t| t[i]));
        [
            self.step.to_string(),
            format!("{:.16e}", self.t),
            fmt(self.vol),
            fmt(self.energy_c),
            fmt(self.energy_d),
            fmt(self.energy_dnu),
            tau(0),
            tau(1),
            tau(2),
            tau(3),
            fmt(self.scalar_curvature_integral),
            fmt(self.d_residual),
            fmt(self.dstar_residual),
            fmt(self.period_drift),
            fmt(self.f0_identity_residual),
            fmt(self.highest_frequency_fraction),
            fmt(self.mean_deviation_l2),
        ]
        .join(",")
    }
}

/// Full diagnostics of a 3-form structure.
pub fn structure_record(
    phi: &LatticeField,
    nu: &[f64; 4],
    reference: Option<(&Periods, PeriodTarget)>,
) -> Result<DiagnosticsRecord> {
    let frames = FrameField::new(phi)?;
    let mf = frames.metric_field();
    let fits = torsion_field(phi, &frames)?;
    let n = torsion_l2_norms2(&fits, &frames);
    let ric = ricci_oracle(mf);
    let r = scalar_curvature(mf, &ric);
    let cov = covariant_derivative_norm2(phi, &frames);
    let psi = frames.psi_field();
    let lap = hodge_laplacian(phi, mf)?;
    let drift = reference.map(|(p, target)| match target {
        PeriodTarget::Phi => periods(phi).drift(p),
        PeriodTarget::Psi => periods(&psi).drift(p),
    });
    Ok(DiagnosticsRecord {
        vol: Some(volume_from_frames(&frames).via_volume_form),
        energy_c: Some(0.5 * integrate_scalar(mf, &cov)),
        energy_d: Some(dirichlet_d_frames(phi, &frames)?),
        energy_dnu: Some((0..4).map(|i| 0.5 * nu[i] * n[i]).sum()),
        tau_norms: Some(n.map(f64::sqrt)),
        scalar_curvature_integral: Some(integrate_scalar(mf, &r)),
        d_residual: Some(d(phi)?.max_abs()),
        dstar_residual: Some(d(&psi)?.max_abs()),
        period_drift: drift,
        f0_identity_residual: Some(laplacian_scalar_identity_residual(&lap, &frames, &fits)),
        highest_frequency_fraction: Some(crate::lattice::highest_frequency_fraction(phi)),
        ..Default::default()
    })
}

/// Diagnostics of a heat-flow field under the flat metric.
pub fn heat_record(field: &LatticeField) -> Result<DiagnosticsRecord> {
    let means = field.component_means();
    let mut centered = field.clone();
    for (c, m) in means.iter().enumerate() {
        centered.plane_mut(c).iter_mut().for_each(|v| *v -= m);
    }
    let flat = MetricField::flat(field.grid());
    let d_res = if field.degree() < DIM {
        Some(d(field)?.max_abs())
    } else {
        None
    };
    let ds_res = if field.degree() > 0 {
        Some(crate::lattice::codiff(field, &flat)?.max_abs())
    } else {
        None
    };
    Ok(DiagnosticsRecord {
        d_residual: d_res,
        dstar_residual: ds_res,
        highest_frequency_fraction: Some(crate::lattice::highest_frequency_fraction(field)),
        mean_deviation_l2: Some(centered.flat_norm2().sqrt()),
        ..Default::default()
    })
}

/// Per-site `|τ2|²` and the pointwise identity `dτ2∧ψ = |τ2|² vol` residual.
pub fn tau2_exactness_residual(phi: &LatticeField) -> Result<f64> {
    let frames = FrameField::new(phi)?;
    let fits = torsion_field(phi, &frames)?;
    let tau2 = par_map_sites(phi.grid(), 2, |s| fits[s].forms.tau2);
    let dtau2 = d(&tau2)?;
    Ok((0..phi.grid().sites())
        .map(|s| {
            let f = frames.at(s);
            let lhs = wedge(&dtau2.at(s), f.psi()).expect("3+4").coeffs()[0];
            let rhs = f.norm2(&fits[s].forms.tau2) * f.metric().vol_scale();
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max))
}
