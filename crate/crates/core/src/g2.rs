//! Pointwise algebra of G2 structures: positivity and the induced metric,
//! the maps `i_φ` and `j_φ`, type decompositions of 2- and 3-forms, torsion
//! extraction, and the bookkeeping of a general variation of `φ`.
//!
//! The standard 3-form is
//! `φ₀ = e¹²³ + e¹⁴⁵ + e¹⁶⁷ + e²⁴⁶ − e²⁵⁷ − e³⁴⁷ − e³⁵⁶`,
//! whose induced metric is the identity and whose dual 4-form is
//! `ψ₀ = e⁴⁵⁶⁷ + e²³⁶⁷ + e²³⁴⁵ + e¹³⁵⁷ − e¹³⁴⁶ − e¹²⁵⁶ − e¹²⁴⁷`.

use std::sync::OnceLock;

use crate::exterior::{form_inner, hodge_star, interior, interior_axis, wedge, wedge_top, AltForm, Mat7, Metric, DIM};
use crate::{Error, Result};

/// Frames whose metric condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e8;

const STANDARD_TERMS: [(f64, [usize; 3]); 7] = [
    (1.0, [0, 1, 2]),
    (1.0, [0, 3, 4]),
    (1.0, [0, 5, 6]),
    (1.0, [1, 3, 5]),
    (-1.0, [1, 4, 6]),
    (-1.0, [2, 3, 6]),
    (-1.0, [2, 4, 5]),
];

/// The standard positive 3-form `φ₀`.
pub fn standard_phi() -> AltForm {
    let mut phi = AltForm::zero(3);
    for (s, axes) in STANDARD_TERMS {
        phi.axpy(s, &AltForm::basis(&axes).expect("valid axes"));
    }
    phi
}

fn unit(axis: usize) -> [f64; DIM] {
    let mut v = [0.0; DIM];
    v[axis] = 1.0;
    v
}

fn unit_covector(axis: usize) -> AltForm {
    AltForm::covector(&unit(axis))
}

/// The symmetric matrix `B_ij = [(e_i⌟φ) ∧ (e_j⌟φ) ∧ φ]`, where `[·]` is the
/// coefficient of `e¹²³⁴⁵⁶⁷`. For a positive `φ` it equals `6 √det g · g`.
pub fn bilinear_candidate(phi: &AltForm) -> Mat7 {
    let contractions: [AltForm; DIM] = std::array::from_fn(|i| interior_axis(i, phi));
    let mut b = Mat7::zeros();
    for i in 0..DIM {
        for j in i..DIM {
            let w = wedge(&contractions[i], &contractions[j]).expect("2+2 ≤ 7");
            let v = wedge_top(&w, phi);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    b
}

/// Recovers the metric `g_φ` and volume form of a positive 3-form.
///
/// With `B = 6 √det g · g` one has `det B = 6⁷ (det g)^{9/2}`, so
/// `√det g = (det B / 6⁷)^{1/9}` and `g = B / (6 √det g)`.
pub fn metric_from_phi(phi: &AltForm) -> Result<(Metric, AltForm)> {
    if phi.degree() != 3 {
        return Err(Error::DegreeMismatch {
            left: phi.degree(),
            right: 3,
        });
    }
    if !phi.is_finite() {
        return Err(Error::NonFinite("3-form"));
    }
    let b = bilinear_candidate(phi);
    let chol = b.cholesky().ok_or_else(|| {
        let eig = b.symmetric_eigenvalues();
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Error::NotPositive(format!("bilinear candidate has eigenvalues in [{lo:.3e}, {hi:.3e}]"))
    })?;
    let det_b: f64 = chol.l_dirty().diagonal().iter().map(|d| d * d).product();
    let vol_scale = (det_b / 6f64.powi(7)).powf(1.0 / 9.0);
    if !(vol_scale.is_finite() && vol_scale > 0.0) {
        return Err(Error::NotPositive(format!("degenerate volume scale {vol_scale:e}")));
    }
    let g = b / (6.0 * vol_scale);
    let metric = Metric::new(g).map_err(|e| Error::NotPositive(e.to_string()))?;
    let cond = metric.condition_number();
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    Ok((metric, metric.volume_form()))
}

/// A positive 3-form with its induced metric, dual 4-form and volume form.
#[derive(Clone, Copy, Debug)]
pub struct G2Frame {
    phi: AltForm,
    metric: Metric,
    psi: AltForm,
    vol: AltForm,
}

impl G2Frame {
    pub fn new(phi: AltForm) -> Result<Self> {
        let (metric, vol) = metric_from_phi(&phi)?;
        let psi = hodge_star(&phi, &metric);
        Ok(Self { phi, metric, psi, vol })
    }

    /// The frame of `φ₀`.
    pub fn standard() -> Self {
        Self::new(standard_phi()).expect("standard 3-form is positive")
    }

    pub fn phi(&self) -> &AltForm {
        &self.phi
    }

    pub fn psi(&self) -> &AltForm {
        &self.psi
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn vol(&self) -> &AltForm {
        &self.vol
    }

    pub fn star(&self, a: &AltForm) -> AltForm {
        hodge_star(a, &self.metric)
    }

    pub fn inner(&self, a: &AltForm, b: &AltForm) -> f64 {
        form_inner(a, b, &self.metric).expect("equal degrees")
    }

    pub fn norm2(&self, a: &AltForm) -> f64 {
        self.inner(a, a)
    }

    /// `X⌟ψ`.
    pub fn contract_psi(&self, x: &[f64; DIM]) -> AltForm {
        interior(x, &self.psi).expect("degree 4")
    }

    /// `X⌟φ`.
    pub fn contract_phi(&self, x: &[f64; DIM]) -> AltForm {
        interior(x, &self.phi).expect("degree 3")
    }
}

fn check_symmetric(h: &Mat7) -> Result<()> {
    let scale = h.amax().max(1.0);
    if (h - h.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotSymmetric);
    }
    Ok(())
}

/// `i_φ(h) = Σ_ij h_ij (e^i ∧ *(e^j ∧ ψ) + e^j ∧ *(e^i ∧ ψ))` for a symmetric
/// covariant 2-tensor `h`; satisfies `i_φ(g_φ) = 6φ`.
pub fn i_map(frame: &G2Frame, h: &Mat7) -> Result<AltForm> {
    check_symmetric(h)?;
    let mut out = AltForm::zero(3);
    let s: [AltForm; DIM] =
        std::array::from_fn(|j| frame.star(&wedge(&unit_covector(j), &frame.psi).expect("1+4 ≤ 7")));
    for i in 0..DIM {
        let mut col = AltForm::zero(2);
        for (j, sj) in s.iter().enumerate() {
            col.axpy(h[(i, j)], sj);
        }
        out.axpy(2.0, &wedge(&unit_covector(i), &col).expect("1+2 ≤ 7"));
    }
    Ok(out)
}

/// `j_φ(γ)(u, v) = *((u⌟φ) ∧ (v⌟φ) ∧ γ)`; satisfies `j_φ(φ) = 6 g_φ`.
pub fn j_map(frame: &G2Frame, gamma: &AltForm) -> Mat7 {
    assert_eq!(gamma.degree(), 3, "j_map takes a 3-form");
    let contractions: [AltForm; DIM] = std::array::from_fn(|i| interior_axis(i, &frame.phi));
    let inv_vol = 1.0 / frame.metric.vol_scale();
    let mut out = Mat7::zeros();
    for i in 0..DIM {
        for j in i..DIM {
            let w = wedge(&contractions[i], &contractions[j]).expect("2+2 ≤ 7");
            let v = wedge_top(&w, gamma) * inv_vol;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Constants of `j_φ ∘ i_φ = a·h + b·tr_g(h)·g`, measured at the standard point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JiConstants {
    pub a: f64,
    pub b: f64,
}

impl JiConstants {
    /// `a + 7b`, which must equal 36 because `i(g) = 6φ` and `j(φ) = 6g`.
    pub fn trace_sum(&self) -> f64 {
        self.a + 7.0 * self.b
    }
}

/// Measures the `j∘i` constants on basis tensors at the standard point.
pub fn calibrate_ji() -> JiConstants {
    let frame = G2Frame::standard();
    let mut off = Mat7::zeros();
    off[(0, 1)] = 1.0;
    off[(1, 0)] = 1.0;
    let a = j_map(&frame, &i_map(&frame, &off).expect("symmetric"))[(0, 1)];
    let mut diag = Mat7::zeros();
    diag[(0, 0)] = 1.0;
    let b = j_map(&frame, &i_map(&frame, &diag).expect("symmetric"))[(1, 1)];
    JiConstants { a, b }
}

/// Cached result of [`calibrate_ji`].
pub fn ji_constants() -> JiConstants {
    static CONSTANTS: OnceLock<JiConstants> = OnceLock::new();
    *CONSTANTS.get_or_init(calibrate_ji)
}

/// Inverts `i_φ` on `Λ³_1 ⊕ Λ³_27`: returns the symmetric `h` with
/// `i_φ(h) = γ` when `γ` has no `Λ³_7` part.
pub fn i_inverse(frame: &G2Frame, gamma: &AltForm) -> Mat7 {
    let JiConstants { a, b } = ji_constants();
    let jg = j_map(frame, gamma);
    let tr_h = frame.metric.trace(&jg) / (a + 7.0 * b);
    (jg - frame.metric.g() * (b * tr_h)) / a
}

/// Splits a 2-form into its `Λ²_7` and `Λ²_14` parts.
///
/// The operator `β ↦ *(β∧φ)` has eigenvalue 2 on `Λ²_7` and −1 on `Λ²_14`,
/// so `(T + 1)/3` and `(2 − T)/3` are the two projectors.
pub fn project2(frame: &G2Frame, beta: &AltForm) -> (AltForm, AltForm) {
    assert_eq!(beta.degree(), 2, "project2 takes a 2-form");
    let t = frame.star(&wedge(beta, &frame.phi).expect("2+3 ≤ 7"));
    let b7 = (t + *beta) * (1.0 / 3.0);
    (b7, *beta - b7)
}

/// The vector `X` with `X⌟φ` equal to the `Λ²_7` part of `β`,
/// from `⟨X⌟φ, Y⌟φ⟩ = 3 g(X, Y)`.
pub fn vector_from_lambda2_7(frame: &G2Frame, beta: &AltForm) -> [f64; DIM] {
    let flat: [f64; DIM] = std::array::from_fn(|a| frame.inner(beta, &interior_axis(a, &frame.phi)) / 3.0);
    frame.metric.sharp(&flat)
}

/// The vector `X` with `X⌟ψ` equal to the `Λ³_7` part of `γ`,
/// from `⟨X⌟ψ, Y⌟ψ⟩ = 4 g(X, Y)`.
pub fn vector_from_lambda3_7(frame: &G2Frame, gamma: &AltForm) -> [f64; DIM] {
    let flat: [f64; DIM] = std::array::from_fn(|a| frame.inner(gamma, &interior_axis(a, &frame.psi)) / 4.0);
    frame.metric.sharp(&flat)
}

/// Type components of a 3-form.
#[derive(Clone, Copy, Debug)]
pub struct ThreeFormParts {
    /// `γ₁ = c·φ`
    pub c: f64,
    /// `γ₇ = X⌟ψ`
    pub x: [f64; DIM],
    pub gamma1: AltForm,
    pub gamma7: AltForm,
    pub gamma27: AltForm,
}

/// Splits a 3-form into `Λ³_1 ⊕ Λ³_7 ⊕ Λ³_27`.
pub fn project3_parts(frame: &G2Frame, gamma: &AltForm) -> ThreeFormParts {
    assert_eq!(gamma.degree(), 3, "project3 takes a 3-form");
    let c = frame.inner(gamma, &frame.phi) / 7.0;
    let x = vector_from_lambda3_7(frame, gamma);
    let gamma1 = frame.phi * c;
    let gamma7 = frame.contract_psi(&x);
    let gamma27 = *gamma - gamma1 - gamma7;
    ThreeFormParts {
        c,
        x,
        gamma1,
        gamma7,
        gamma27,
    }
}

/// Splits a 3-form into its `Λ³_1`, `Λ³_7` and `Λ³_27` parts.
pub fn project3(frame: &G2Frame, gamma: &AltForm) -> (AltForm, AltForm, AltForm) {
    let p = project3_parts(frame, gamma);
    (p.gamma1, p.gamma7, p.gamma27)
}

/// The intrinsic torsion `(τ0, τ1, τ2, τ3)` of a G2 structure, defined by
/// `dφ = τ0 ψ + 3 τ1∧φ + *τ3` and `dψ = 4 τ1∧ψ + τ2∧φ`.
#[derive(Clone, Copy, Debug)]
pub struct TorsionForms {
    pub tau0: f64,
    pub tau1: AltForm,
    pub tau2: AltForm,
    pub tau3: AltForm,
}

impl TorsionForms {
    pub fn zero() -> Self {
        Self {
            tau0: 0.0,
            tau1: AltForm::zero(1),
            tau2: AltForm::zero(2),
            tau3: AltForm::zero(3),
        }
    }

    /// `(dφ, dψ)` built from the torsion forms.
    pub fn assemble(&self, frame: &G2Frame) -> (AltForm, AltForm) {
        let dphi = frame.psi * self.tau0 + wedge(&self.tau1, &frame.phi).expect("1+3") * 3.0 + frame.star(&self.tau3);
        let dpsi = wedge(&self.tau1, &frame.psi).expect("1+4") * 4.0 + wedge(&self.tau2, &frame.phi).expect("2+3");
        (dphi, dpsi)
    }

    /// Pointwise squared norms `(τ0², |τ1|², |τ2|², |τ3|²)`.
    pub fn norms2(&self, frame: &G2Frame) -> [f64; 4] {
        [
            self.tau0 * self.tau0,
            frame.norm2(&self.tau1),
            frame.norm2(&self.tau2),
            frame.norm2(&self.tau3),
        ]
    }
}

/// Torsion forms fitted to a pair `(dφ, dψ)` together with the part of the
/// input the torsion ansatz cannot represent.
#[derive(Clone, Copy, Debug)]
pub struct TorsionFit {
    pub forms: TorsionForms,
    /// Largest coefficient of `dφ − assemble(τ).0`.
    pub dphi_residual: f64,
    /// Largest coefficient of `dψ − assemble(τ).1`.
    pub dpsi_residual: f64,
    /// Difference between the `τ1` read from `dφ` and from `dψ`, measured in
    /// the metric norm.
    pub tau1_mismatch: f64,
}

/// Extracts torsion forms from exterior derivatives of `φ` and `ψ`.
///
/// `τ0`, `τ3` and one estimate of `τ1` come from the types of `*dφ`; `τ2`
/// and a second `τ1` estimate come from the types of `*dψ`. The two `τ1`
/// estimates are combined by least squares with weights 36 and 48, the
/// squared norms of `τ1 ↦ 3τ1∧φ` and `τ1 ↦ 4τ1∧ψ`.
pub fn torsion_from_derivatives(frame: &G2Frame, dphi: &AltForm, dpsi: &AltForm) -> TorsionFit {
    assert_eq!(dphi.degree(), 4, "dφ must be a 4-form");
    assert_eq!(dpsi.degree(), 5, "dψ must be a 5-form");
    // *dφ = τ0 φ + 3 *(τ1∧φ) + τ3, and *(α∧φ) = −α♯⌟ψ.
    let p = project3_parts(frame, &frame.star(dphi));
    let tau1_a = frame.metric.flat(&p.x).map(|v| -v / 3.0);
    // *dψ = 4 τ1♯⌟φ − τ2.
    let (b7, b14) = project2(frame, &frame.star(dpsi));
    let x = vector_from_lambda2_7(frame, &b7);
    let tau1_b = frame.metric.flat(&x).map(|v| v / 4.0);
    let tau1 = AltForm::covector(&std::array::from_fn(|i| (36.0 * tau1_a[i] + 48.0 * tau1_b[i]) / 84.0));
    let forms = TorsionForms {
        tau0: p.c,
        tau1,
        tau2: -b14,
        tau3: p.gamma27,
    };
    let (a_phi, a_psi) = forms.assemble(frame);
    let mismatch = AltForm::covector(&tau1_a) - AltForm::covector(&tau1_b);
    TorsionFit {
        forms,
        dphi_residual: (*dphi - a_phi).max_abs(),
        dpsi_residual: (*dpsi - a_psi).max_abs(),
        tau1_mismatch: frame.norm2(&mismatch).sqrt(),
    }
}

/// A variation `φ̇` written both as `3f0 φ + *(f1∧φ) + f3` and as
/// `½ i_φ(h) + X⌟ψ`, where `h` is half the induced rate of change of the metric.
#[derive(Clone, Copy, Debug)]
pub struct FlowDecomposition {
    pub f0: f64,
    pub f1: AltForm,
    pub f3: AltForm,
    pub h: Mat7,
    pub x: [f64; DIM],
}

impl FlowDecomposition {
    /// `3f0 φ + *(f1∧φ) + f3`.
    pub fn reassemble(&self, frame: &G2Frame) -> AltForm {
        frame.phi * (3.0 * self.f0) + frame.star(&wedge(&self.f1, &frame.phi).expect("1+3")) + self.f3
    }

    /// `½ i_φ(h) + X⌟ψ`.
    pub fn reassemble_from_metric(&self, frame: &G2Frame) -> AltForm {
        i_map(frame, &self.h).expect("h is symmetric") * 0.5 + frame.contract_psi(&self.x)
    }

    /// The induced metric rate `∂g = 2h = 2f0 g + ½ j_φ(f3)`.
    pub fn metric_rate(&self) -> Mat7 {
        self.h * 2.0
    }

    /// The induced 4-form rate `∂ψ = 4f0 ψ + f1∧φ − *f3`, valid for
    /// variations without a `Λ³_7` part.
    pub fn psi_rate(&self, frame: &G2Frame) -> AltForm {
        frame.psi * (4.0 * self.f0) + wedge(&self.f1, &frame.phi).expect("1+3") - frame.star(&self.f3)
    }
}

/// Decomposes a variation of `φ` into its type components.
pub fn decompose_variation(frame: &G2Frame, dot_phi: &AltForm) -> FlowDecomposition {
    let p = project3_parts(frame, dot_phi);
    let f0 = p.c / 3.0;
    // X⌟ψ = *(f1∧φ) = −f1♯⌟ψ.
    let f1 = AltForm::covector(&frame.metric.flat(&p.x).map(|v| -v));
    let h = frame.metric.g() * f0 + j_map(frame, &p.gamma27) * 0.25;
    FlowDecomposition {
        f0,
        f1,
        f3: p.gamma27,
        h,
        x: p.x,
    }
}

/// Solves `∂ψ = 4f0 ψ + f1∧φ − *f3` for `(f0, f1, f3)` and returns the
/// corresponding 3-form rate `3f0 φ + *(f1∧φ) + f3`, together with the
/// decomposition.
pub fn phi_rate_from_psi_rate(frame: &G2Frame, dot_psi: &AltForm) -> FlowDecomposition {
    assert_eq!(dot_psi.degree(), 4, "∂ψ must be a 4-form");
    // *∂ψ = 4f0 φ + *(f1∧φ) − f3, and *(f1∧φ) = −f1♯⌟ψ.
    let p = project3_parts(frame, &frame.star(dot_psi));
    let f0 = p.c / 4.0;
    let f1 = AltForm::covector(&frame.metric.flat(&p.x).map(|v| -v));
    let f3 = -p.gamma27;
    let h = frame.metric.g() * f0 + j_map(frame, &f3) * 0.25;
    FlowDecomposition { f0, f1, f3, h, x: p.x }
}

/// The scalar coefficient `τ0² + τ0(c − 7τ0/2) = τ0(c − 5τ0/2)` that the
/// modified coflow adds in front of `ψ` for a nearly parallel structure.
pub fn nearly_parallel_coflow_coefficient(tau0: f64, c: f64) -> f64 {
    tau0 * (c - 2.5 * tau0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exterior::{form_norm2, MultiIndex};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_form(rng: &mut impl Rng, k: usize, scale: f64) -> AltForm {
        let c: Vec<f64> = (0..crate::exterior::n_components(k))
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        AltForm::from_coeffs(k, &c).unwrap()
    }

    pub(crate) fn random_frame(rng: &mut impl Rng) -> G2Frame {
        G2Frame::new(standard_phi() + random_form(rng, 3, 0.15)).unwrap()
    }

    fn random_sym(rng: &mut impl Rng) -> Mat7 {
        let mut h = Mat7::zeros();
        for x in h.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        h + h.transpose()
    }

    fn random_vec(rng: &mut impl Rng) -> [f64; DIM] {
        std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
    }

    /// Dimension of the span of a family of forms, by SVD.
    fn rank(forms: &[AltForm]) -> usize {
        let n = forms[0].coeffs().len();
        let m = nalgebra::DMatrix::from_fn(forms.len(), n, |r, c| forms[r].coeffs()[c]);
        m.singular_values().iter().filter(|s| **s > 1e-9).count()
    }

    #[test]
    fn standard_point_metric_is_identity() {
        let b = bilinear_candidate(&standard_phi());
        assert!((b - Mat7::identity() * 6.0).amax() < 1e-14);
        let (m, vol) = metric_from_phi(&standard_phi()).unwrap();
        assert!((m.g() - Mat7::identity()).amax() < 1e-14);
        assert_abs_diff_eq!(vol.coeffs()[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn standard_psi_components() {
        let f = G2Frame::standard();
        let expected: [(f64, [usize; 4]); 7] = [
            (-1.0, [0, 1, 3, 6]),
            (-1.0, [0, 1, 4, 5]),
            (-1.0, [0, 2, 3, 5]),
            (1.0, [0, 2, 4, 6]),
            (1.0, [1, 2, 3, 4]),
            (1.0, [1, 2, 5, 6]),
            (1.0, [3, 4, 5, 6]),
        ];
        let mut psi = AltForm::zero(4);
        for (s, axes) in expected {
            psi.set(MultiIndex::new(&axes).unwrap(), s);
        }
        assert!((*f.psi() - psi).max_abs() < 1e-15);
        let w = wedge(f.phi(), f.psi()).unwrap();
        assert_abs_diff_eq!(w.coeffs()[0], 7.0, epsilon = 1e-14);
        assert_abs_diff_eq!(form_norm2(f.phi(), f.metric()), 7.0, epsilon = 1e-14);
    }

    #[test]
    fn scaling_homogeneity_of_metric() {
        let lambda: f64 = 1.3;
        let (m, vol) = metric_from_phi(&(standard_phi() * lambda.powi(3))).unwrap();
        assert!((m.g() - Mat7::identity() * lambda * lambda).amax() < 1e-12);
        assert_abs_diff_eq!(vol.coeffs()[0], lambda.powi(7), epsilon = 1e-12);
    }

    #[test]
    fn rejects_negative_and_degenerate() {
        assert!(matches!(metric_from_phi(&-standard_phi()), Err(Error::NotPositive(_))));
        let degenerate = AltForm::basis(&[0, 1, 2]).unwrap();
        assert!(matches!(metric_from_phi(&degenerate), Err(Error::NotPositive(_))));
        assert!(metric_from_phi(&AltForm::zero(3)).is_err());
    }

    #[test]
    fn contraction_of_phi_is_lambda2_7() {
        let f = G2Frame::standard();
        let beta = interior_axis(0, f.phi());
        let (b7, b14) = project2(&f, &beta);
        assert!(b14.max_abs() < 1e-12);
        assert!((b7 - beta).max_abs() < 1e-12);
    }

    #[test]
    fn projector_ranks_at_standard_point() {
        let f = G2Frame::standard();
        let basis2: Vec<AltForm> = (0..21)
            .map(|n| AltForm::basis(&MultiIndex::of_degree(2, n).axes().collect::<Vec<_>>()).unwrap())
            .collect();
        let p7: Vec<AltForm> = basis2.iter().map(|b| project2(&f, b).0).collect();
        let p14: Vec<AltForm> = basis2.iter().map(|b| project2(&f, b).1).collect();
        assert_eq!((rank(&p7), rank(&p14)), (7, 14));
        let basis3: Vec<AltForm> = (0..35)
            .map(|n| AltForm::basis(&MultiIndex::of_degree(3, n).axes().collect::<Vec<_>>()).unwrap())
            .collect();
        let parts: Vec<_> = basis3.iter().map(|b| project3(&f, b)).collect();
        let r1 = rank(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
        let r7 = rank(&parts.iter().map(|p| p.1).collect::<Vec<_>>());
        let r27 = rank(&parts.iter().map(|p| p.2).collect::<Vec<_>>());
        assert_eq!((r1, r7, r27), (1, 7, 27));
    }

    #[test]
    fn eigenvalues_of_phi_wedge_operator() {
        // Oracle: diagonalize β ↦ *(β∧φ) as a 21×21 matrix.
        let f = G2Frame::standard();
        let m = nalgebra::DMatrix::from_fn(21, 21, |r, c| {
            let b = AltForm::basis(&MultiIndex::of_degree(2, c).axes().collect::<Vec<_>>()).unwrap();
            f.star(&wedge(&b, f.phi()).unwrap()).coeffs()[r]
        });
        let eig = m.symmetric_eigen().eigenvalues;
        let twos = eig.iter().filter(|e| (*e - 2.0).abs() < 1e-10).count();
        let minus = eig.iter().filter(|e| (*e + 1.0).abs() < 1e-10).count();
        assert_eq!((twos, minus), (7, 14));
    }

    #[test]
    fn calibrated_ji_constants() {
        let c = calibrate_ji();
        assert_abs_diff_eq!(c.a, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.b, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.trace_sum(), 36.0, epsilon = 1e-12);
    }

    #[test]
    fn i_map_rejects_asymmetric() {
        let mut h = Mat7::zeros();
        h[(0, 1)] = 1.0;
        assert!(matches!(i_map(&G2Frame::standard(), &h), Err(Error::NotSymmetric)));
        assert_eq!(i_map(&G2Frame::standard(), &Mat7::zeros()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn decompose_phi_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_frame(&mut rng);
        let d = decompose_variation(&f, f.phi());
        assert_abs_diff_eq!(d.f0, 1.0 / 3.0, epsilon = 1e-12);
        assert!(d.f1.max_abs() < 1e-12);
        assert!(d.f3.max_abs() < 1e-12);
        assert!((d.h - f.metric().g() / 3.0).amax() < 1e-12);
    }

    #[test]
    fn metric_rate_matches_finite_difference() {
        // Oracle: differentiate metric_from_phi along γ numerically.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_frame(&mut rng);
        let gamma = random_form(&mut rng, 3, 1.0);
        let eps = 1e-6;
        let gp = *metric_from_phi(&(*f.phi() + gamma * eps)).unwrap().0.g();
        let gm = *metric_from_phi(&(*f.phi() - gamma * eps)).unwrap().0.g();
        let fd = (gp - gm) / (2.0 * eps);
        let d = decompose_variation(&f, &gamma);
        assert!(
            (fd - d.metric_rate()).amax() < 1e-7,
            "{}",
            (fd - d.metric_rate()).amax()
        );
    }

    #[test]
    fn psi_rate_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_frame(&mut rng);
        let gamma = random_form(&mut rng, 3, 1.0);
        let d = decompose_variation(&f, &gamma);
        let no7 = gamma - f.contract_psi(&d.x);
        let eps = 1e-6;
        let pp = *G2Frame::new(*f.phi() + no7 * eps).unwrap().psi();
        let pm = *G2Frame::new(*f.phi() - no7 * eps).unwrap().psi();
        let fd = (pp - pm) * (0.5 / eps);
        let d0 = decompose_variation(&f, &no7);
        assert!((fd - d0.psi_rate(&f)).max_abs() < 1e-7);
    }

    #[test]
    fn phi_rate_from_psi_rate_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_frame(&mut rng);
        let dpsi = random_form(&mut rng, 4, 1.0);
        let d = phi_rate_from_psi_rate(&f, &dpsi);
        assert!((d.psi_rate(&f) - dpsi).max_abs() < 1e-10);
    }

    #[test]
    fn torsion_simple_cases() {
        let f = G2Frame::standard();
        let fit = torsion_from_derivatives(&f, f.psi(), &AltForm::zero(5));
        assert_abs_diff_eq!(fit.forms.tau0, 1.0, epsilon = 1e-14);
        assert!(fit.forms.tau1.max_abs() < 1e-14);
        assert!(fit.forms.tau2.max_abs() < 1e-14);
        assert!(fit.forms.tau3.max_abs() < 1e-14);
    }

    #[test]
    fn tau2_is_recovered_and_star_relation_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_frame(&mut rng);
        let tau2 = project2(&f, &random_form(&mut rng, 2, 1.0)).1;
        let dpsi = wedge(&tau2, f.phi()).unwrap();
        assert!((dpsi + f.star(&tau2)).max_abs() < 1e-12);
        let fit = torsion_from_derivatives(&f, &AltForm::zero(4), &dpsi);
        assert!((fit.forms.tau2 - tau2).max_abs() < 1e-12);
        assert!(fit.forms.tau1.max_abs() < 1e-12);
        assert!(fit.forms.tau0.abs() < 1e-12);
    }

    #[test]
    fn off_ansatz_input_is_reported() {
        let f = G2Frame::standard();
        // A Λ⁴_7 part in dφ that disagrees with dψ.
        let dphi = wedge(&unit_covector(0), f.phi()).unwrap();
        let fit = torsion_from_derivatives(&f, &dphi, &AltForm::zero(5));
        assert!(fit.tau1_mismatch > 0.1);
        assert!(fit.dphi_residual > 0.1);
    }

    #[test]
    fn nearly_parallel_coefficient_values() {
        assert_eq!(nearly_parallel_coflow_coefficient(2.0, 5.0), 0.0);
        assert_eq!(nearly_parallel_coflow_coefficient(0.0, 3.7), 0.0);
        assert_abs_diff_eq!(nearly_parallel_coflow_coefficient(1.0, 0.0), -2.5, epsilon = 1e-15);
    }

    fn random_torsion(rng: &mut impl Rng, f: &G2Frame) -> TorsionForms {
        TorsionForms {
            tau0: rng.gen_range(-1.0..1.0),
            tau1: random_form(rng, 1, 1.0),
            tau2: project2(f, &random_form(rng, 2, 1.0)).1,
            tau3: project3(f, &random_form(rng, 3, 1.0)).2,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn frame_invariants(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            prop_assert!((f.norm2(f.phi()) - 7.0).abs() < 1e-10);
            prop_assert!((f.norm2(f.psi()) - 7.0).abs() < 1e-10);
            let w = wedge(f.phi(), f.psi()).unwrap();
            prop_assert!((w - *f.vol() * 7.0).max_abs() < 1e-10);
        }

        #[test]
        fn i_and_j_anchor_identities(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            let ig = i_map(&f, f.metric().g()).unwrap();
            prop_assert!((ig - *f.phi() * 6.0).max_abs() < 1e-10);
            let jp = j_map(&f, f.phi());
            prop_assert!((jp - f.metric().g() * 6.0).amax() < 1e-10);
            let x = random_vec(&mut rng);
            prop_assert!(j_map(&f, &f.contract_psi(&x)).amax() < 1e-10);
        }

        #[test]
        fn j_after_i_is_calibrated(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            let h = random_sym(&mut rng);
            let c = ji_constants();
            let lhs = j_map(&f, &i_map(&f, &h).unwrap());
            let rhs = h * c.a + f.metric().g() * (c.b * f.metric().trace(&h));
            prop_assert!((lhs - rhs).amax() < 1e-9);
            let (_, g7, _) = project3(&f, &i_map(&f, &h).unwrap());
            prop_assert!(g7.max_abs() < 1e-10);
            let back = i_inverse(&f, &i_map(&f, &h).unwrap());
            prop_assert!((back - h).amax() < 1e-9);
        }

        #[test]
        fn traceless_image_is_pure_27(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            let mut h = random_sym(&mut rng);
            h -= f.metric().g() * (f.metric().trace(&h) / 7.0);
            let (g1, g7, _) = project3(&f, &i_map(&f, &h).unwrap());
            prop_assert!(g1.max_abs() < 1e-10 && g7.max_abs() < 1e-10);
        }

        #[test]
        fn project2_is_a_splitting(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            let beta = random_form(&mut rng, 2, 1.0);
            let (b7, b14) = project2(&f, &beta);
            prop_assert!((b7 + b14 - beta).max_abs() < 1e-12);
            prop_assert!(wedge(&b14, f.psi()).unwrap().max_abs() < 1e-10);
            prop_assert!((wedge(&b14, f.phi()).unwrap() + f.star(&b14)).max_abs() < 1e-10);
            prop_assert!(f.inner(&b7, &b14).abs() < 1e-10);
            let (b77, b714) = project2(&f, &b7);
            prop_assert!((b77 - b7).max_abs() < 1e-10 && b714.max_abs() < 1e-10);
        }

        #[test]
        fn project3_is_a_splitting(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            let gamma = random_form(&mut rng, 3, 1.0);
            let (g1, g7, g27) = project3(&f, &gamma);
            prop_assert!((g1 + g7 + g27 - gamma).max_abs() < 1e-12);
            prop_assert!(f.inner(&g1, &g7).abs() < 1e-10);
            prop_assert!(f.inner(&g1, &g27).abs() < 1e-10);
            prop_assert!(f.inner(&g7, &g27).abs() < 1e-10);
            prop_assert!(j_map(&f, &g7).amax() < 1e-10);
            prop_assert!(wedge(&g27, f.phi()).unwrap().max_abs() < 1e-10);
            prop_assert!(wedge(&g27, f.psi()).unwrap().max_abs() < 1e-10);
            let (a, b, c) = project3(&f, &g27);
            prop_assert!(a.max_abs() < 1e-10 && b.max_abs() < 1e-10 && (c - g27).max_abs() < 1e-10);
            let x = random_vec(&mut rng);
            let (p1, p7, p27) = project3(&f, &f.contract_psi(&x));
            prop_assert!(p1.max_abs() < 1e-10 && p27.max_abs() < 1e-10);
            prop_assert!((p7 - f.contract_psi(&x)).max_abs() < 1e-10);
        }

        #[test]
        fn torsion_roundtrip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            let t = random_torsion(&mut rng, &f);
            let (dphi, dpsi) = t.assemble(&f);
            let fit = torsion_from_derivatives(&f, &dphi, &dpsi);
            prop_assert!((fit.forms.tau0 - t.tau0).abs() < 1e-9);
            prop_assert!((fit.forms.tau1 - t.tau1).max_abs() < 1e-9);
            prop_assert!((fit.forms.tau2 - t.tau2).max_abs() < 1e-9);
            prop_assert!((fit.forms.tau3 - t.tau3).max_abs() < 1e-9);
            prop_assert!(fit.dphi_residual < 1e-9 && fit.dpsi_residual < 1e-9);
        }

        #[test]
        fn decomposition_reassembles(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            let gamma = random_form(&mut rng, 3, 1.0);
            let d = decompose_variation(&f, &gamma);
            prop_assert!((d.reassemble(&f) - gamma).max_abs() < 1e-10);
            prop_assert!((d.reassemble_from_metric(&f) - gamma).max_abs() < 1e-10);
            // The metric rate ignores the Λ³_7 part.
            let x = random_vec(&mut rng);
            let d2 = decompose_variation(&f, &(gamma + f.contract_psi(&x)));
            prop_assert!((d2.h - d.h).amax() < 1e-10);
        }

        #[test]
        fn torsion_scaling_law(seed in any::<u64>(), lambda in 0.5f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_frame(&mut rng);
            let t = random_torsion(&mut rng, &f);
            let (dphi, dpsi) = t.assemble(&f);
            let fs = G2Frame::new(*f.phi() * lambda.powi(3)).unwrap();
            let fit = torsion_from_derivatives(&fs, &(dphi * lambda.powi(3)), &(dpsi * lambda.powi(4)));
            prop_assert!((fit.forms.tau0 - t.tau0 / lambda).abs() < 1e-9);
            let n2 = fs.norm2(&fit.forms.tau2);
            prop_assert!((n2 - f.norm2(&t.tau2) / (lambda * lambda)).abs() < 1e-9);
        }
    }
}
