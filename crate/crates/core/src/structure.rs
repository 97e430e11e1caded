//! G2 structures as lattice fields: per-site frames, the induced metric
//! field, torsion fields, and closed perturbations of the standard structure.

use rayon::prelude::*;

use crate::exterior::DIM;
use crate::g2::{standard_phi, torsion_from_derivatives, G2Frame, TorsionFit};
use crate::lattice::{d, par_map_sites, try_map_sites, Grid, LatticeField, MetricField};
use crate::{Error, Result};

/// The frame of a 3-form field at every site.
#[derive(Clone, Debug)]
pub struct FrameField {
    grid: Grid,
    frames: Vec<G2Frame>,
    metrics: MetricField,
}

impl FrameField {
    /// Builds all frames; fails with the first non-positive site.
    pub fn new(phi: &LatticeField) -> Result<Self> {
        if phi.degree() != 3 {
            return Err(Error::DegreeMismatch {
                left: phi.degree(),
                right: 3,
            });
        }
        let grid = phi.grid().clone();
        let frames = try_map_sites(&grid, |s| {
            G2Frame::new(phi.at(s)).map_err(|e| match e {
                Error::NotPositive(m) => Error::NotPositive(format!("site {:?}: {m}", grid.coords(s))),
                other => other,
            })
        })?;
        let metrics = MetricField::from_conditioned(&grid, frames.iter().map(|f| *f.metric()).collect());
        Ok(Self { grid, frames, metrics })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn frames(&self) -> &[G2Frame] {
        &self.frames
    }

    pub fn at(&self, site: usize) -> &G2Frame {
        &self.frames[site]
    }

    pub fn metric_field(&self) -> &MetricField {
        &self.metrics
    }

    pub fn psi_field(&self) -> LatticeField {
        par_map_sites(&self.grid, 4, |s| *self.frames[s].psi())
    }

    /// `√det g` at every site.
    pub fn vol_scales(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.metric().vol_scale()).collect()
    }
}

/// Torsion fitted at every site from the lattice derivatives `dφ` and `dψ`.
pub fn torsion_field(phi: &LatticeField, frames: &FrameField) -> Result<Vec<TorsionFit>> {
    let dphi = d(phi)?;
    let dpsi = d(&frames.psi_field())?;
    Ok((0..phi.grid().sites())
        .into_par_iter()
        .map(|s| torsion_from_derivatives(frames.at(s), &dphi.at(s), &dpsi.at(s)))
        .collect())
}

/// `φ₀ + ε dη`, which is closed and has the periods of `φ₀`.
///
/// Fails if the result is not positive everywhere; the error message carries
/// the largest admissible `ε` found by bisection.
pub fn make_closed_perturbation(base: &LatticeField, eta: &LatticeField, eps: f64) -> Result<LatticeField> {
    if base.degree() != 3 || eta.degree() != 2 {
        return Err(Error::InvalidInput(
            "closed perturbation needs a 3-form base and a 2-form potential".into(),
        ));
    }
    let deta = d(eta)?;
    let build = |e: f64| base.plus(e, &deta);
    let candidate = build(eps)?;
    if FrameField::new(&candidate).is_ok() {
        return Ok(candidate);
    }
    let (mut lo, mut hi) = (0.0, eps.abs());
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if FrameField::new(&build(mid * eps.signum())?).is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NotPositive(format!(
        "perturbation with ε = {eps} leaves the positive cone; largest admissible |ε| ≈ {lo:.6e}"
    )))
}

/// The standard structure at every site of `grid`.
pub fn uniform_standard(grid: &Grid) -> LatticeField {
    LatticeField::uniform(grid, &standard_phi())
}

/// `X⌟α` at every site for a vector field `X`.
pub fn contract_field(x: &[[f64; DIM]], alpha: &LatticeField) -> LatticeField {
    let k = alpha.degree();
    par_map_sites(alpha.grid(), k - 1, |s| {
        crate::exterior::interior(&x[s], &alpha.at(s)).expect("degree ≥ 1")
    })
}

/// Largest `(dφ, dψ)` residuals off the torsion ansatz over all sites.
pub fn ansatz_residuals(fits: &[TorsionFit]) -> (f64, f64) {
    fits.iter().fold((0.0f64, 0.0f64), |(a, b), f| {
        (a.max(f.dphi_residual), b.max(f.dpsi_residual))
    })
}
