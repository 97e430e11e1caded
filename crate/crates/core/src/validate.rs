//! Pointwise identity suite run by `g2flow validate`.
//!
//! Checks are ordered so that the first failure names the lowest-level
//! broken ingredient: a corrupted Hodge star shows up as a failed involution
//! before it spoils the G2 identities built on top of it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exterior::{hodge_star, n_components, AltForm, Mat7, Metric, MultiIndex, DIM};
use crate::g2::{
    calibrate_ji, i_map, j_map, project2, project3, torsion_from_derivatives, G2Frame, JiConstants, TorsionForms,
};

/// Tolerance of the `i(g) = 6φ` and `j(φ) = 6g` anchors.
pub const ANCHOR_TOL: f64 = 1e-10;
/// Tolerance of the torsion roundtrip.
pub const TORSION_TOL: f64 = 1e-9;
/// Tolerance of the Hodge star involution.
pub const STAR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub checks: Vec<IdentityCheck>,
    pub ji: JiConstants,
    pub samples: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(IdentityCheck::passed)
    }

    pub fn first_failure(&self) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| !c.passed())
    }

    pub fn check(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn random_form(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> AltForm {
    let mut f = AltForm::zero(k);
    f.coeffs_mut()
        .iter_mut()
        .for_each(|c| *c = rng.gen_range(-scale..scale));
    f
}

fn random_metric(rng: &mut ChaCha8Rng) -> Metric {
    let mut a = Mat7::zeros();
    a.iter_mut().for_each(|x| *x = rng.gen_range(-0.4..0.4));
    Metric::new(Mat7::identity() + a * a.transpose()).expect("positive definite")
}

/// Standard structure plus `samples` random positive perturbations of it.
pub fn random_frames(rng: &mut ChaCha8Rng, samples: usize) -> Vec<G2Frame> {
    let mut out = vec![G2Frame::standard()];
    while out.len() < samples + 1 {
        let phi = *G2Frame::standard().phi() + random_form(rng, 3, 0.3);
        if let Ok(f) = G2Frame::new(phi) {
            out.push(f);
        }
    }
    out
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|s| **s > 1e-9 * top.max(1.0)).count()
}

/// Matrix of a linear map on `Λ^k` in the coefficient basis.
fn operator_matrix(k: usize, f: impl Fn(&AltForm) -> AltForm) -> DMatrix<f64> {
    let n = n_components(k);
    let mut m = DMatrix::zeros(n, n);
    for col in 0..n {
        let idx = MultiIndex::of_degree(k, col);
        let axes: Vec<usize> = idx.axes().collect();
        let img = f(&AltForm::basis(&axes).expect("basis"));
        for row in 0..n {
            m[(row, col)] = img.coeffs()[row];
        }
    }
    m
}

fn check(name: &'static str, residual: f64, tolerance: f64, detail: String) -> IdentityCheck {
    IdentityCheck {
        name,
        residual,
        tolerance,
        detail,
    }
}

fn star_involution(rng: &mut ChaCha8Rng, samples: usize) -> IdentityCheck {
    let mut worst = 0.0f64;
    let mut at = String::new();
    let mut metrics = vec![Metric::identity()];
    metrics.extend((0..samples.min(20)).map(|_| random_metric(rng)));
    for m in &metrics {
        for k in 0..=DIM {
            for n in 0..n_components(k) {
                let idx = MultiIndex::of_degree(k, n);
                let axes: Vec<usize> = idx.axes().collect();
                let a = AltForm::basis(&axes).expect("basis");
                let back = hodge_star(&hodge_star(&a, m), m);
                // ** = (−1)^{k(7−k)} = 1 in dimension 7.
                let r = (back - a).max_abs();
                if r > worst {
                    worst = r;
                    at = format!("degree {k}, {idx:?}");
                }
            }
        }
    }
    check("star_involution", worst, STAR_TOL, at)
}

fn anchors(frames: &[G2Frame]) -> [IdentityCheck; 2] {
    let mut wi = 0.0f64;
    let mut wj = 0.0f64;
    for f in frames {
        let scale = f.phi().max_abs();
        let i = i_map(f, f.metric().g()).expect("metric is symmetric");
        wi = wi.max((i - *f.phi() * 6.0).max_abs() / scale);
        let j = j_map(f, f.phi());
        wj = wj.max((j - f.metric().g() * 6.0).amax() / f.metric().g().amax());
    }
    let n = format!("{} structures", frames.len());
    [
        check("i_of_metric_is_6phi", wi, ANCHOR_TOL, n.clone()),
        check("j_of_phi_is_6g", wj, ANCHOR_TOL, n),
    ]
}

fn ranks(frames: &[G2Frame]) -> [IdentityCheck; 2] {
    let mut bad2 = 0usize;
    let mut bad3 = 0usize;
    let mut seen2 = (0, 0);
    let mut seen3 = (0, 0, 0);
    for f in frames.iter().take(20) {
        let p7 = rank(&operator_matrix(2, |b| project2(f, b).0));
        let p14 = rank(&operator_matrix(2, |b| project2(f, b).1));
        if (p7, p14) != (7, 14) {
            bad2 += 1;
            seen2 = (p7, p14);
        }
        let q1 = rank(&operator_matrix(3, |g| project3(f, g).0));
        let q7 = rank(&operator_matrix(3, |g| project3(f, g).1));
        let q27 = rank(&operator_matrix(3, |g| project3(f, g).2));
        if (q1, q7, q27) != (1, 7, 27) {
            bad3 += 1;
            seen3 = (q1, q7, q27);
        }
    }
    [
        check(
            "lambda2_ranks_7_14",
            bad2 as f64,
            0.0,
            if bad2 == 0 {
                "ranks (7, 14)".into()
            } else {
                format!("found {seen2:?}")
            },
        ),
        check(
            "lambda3_ranks_1_7_27",
            bad3 as f64,
            0.0,
            if bad3 == 0 {
                "ranks (1, 7, 27)".into()
            } else {
                format!("found {seen3:?}")
            },
        ),
    ]
}

/// Random torsion forms of the right types at `frame`.
pub fn random_torsion(rng: &mut ChaCha8Rng, frame: &G2Frame) -> TorsionForms {
    TorsionForms {
        tau0: rng.gen_range(-1.0..1.0),
        tau1: random_form(rng, 1, 1.0),
        tau2: project2(frame, &random_form(rng, 2, 1.0)).1,
        tau3: project3(frame, &random_form(rng, 3, 1.0)).2,
    }
}

fn torsion_roundtrip(rng: &mut ChaCha8Rng, frames: &[G2Frame], samples: usize) -> IdentityCheck {
    let mut worst = 0.0f64;
    for n in 0..samples {
        let f = &frames[n % frames.len()];
        let t = random_torsion(rng, f);
        let (dphi, dpsi) = t.assemble(f);
        let fit = torsion_from_derivatives(f, &dphi, &dpsi).forms;
        let err = (fit.tau0 - t.tau0)
            .abs()
            .max((fit.tau1 - t.tau1).max_abs())
            .max((fit.tau2 - t.tau2).max_abs())
            .max((fit.tau3 - t.tau3).max_abs());
        worst = worst.max(err);
    }
    check("torsion_roundtrip", worst, TORSION_TOL, format!("{samples} quadruples"))
}

/// Runs every pointwise identity on the standard structure and `samples`
/// random perturbations drawn from `seed`.
pub fn run_identity_suite(seed: u64, samples: usize) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![star_involution(&mut rng, samples)];
    let frames = random_frames(&mut rng, samples);
    let ji = calibrate_ji();
    checks.push(check(
        "ji_trace_sum_36",
        (ji.trace_sum() - 36.0).abs(),
        ANCHOR_TOL,
        format!("a = {:.12}, b = {:.12}", ji.a, ji.b),
    ));
    checks.extend(anchors(&frames));
    checks.extend(ranks(&frames));
    checks.push(torsion_roundtrip(&mut rng, &frames, samples));
    ValidationReport { checks, ji, samples }
}
