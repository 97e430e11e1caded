use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use g2flow::diagnostics::{
    dirichlet_c, dirichlet_d, heat_record, integrate_scalar, ricci_oracle, scalar_curvature, structure_record,
    torsion_l2_norms2, volume_functional, DiagnosticsRecord, PeriodTarget, NU_MATCHING_D,
};
use g2flow::exterior::{inject_star_sign_fault, AltForm};
use g2flow::flows::{run, FlowKind, FlowSpec, FlowState, RunReference, Termination};
use g2flow::lattice::{band_limited_random, periods, LatticeField, Periods};
use g2flow::snapshot;
use g2flow::structure::{ansatz_residuals, make_closed_perturbation, torsion_field, uniform_standard, FrameField};
use g2flow::validate::run_identity_suite;

use crate::config::{InitialCondition, RunConfig};
use crate::{termination_exit_code, CliError};

pub const CSV_NAME: &str = "trajectory.csv";
pub const INITIAL_NAME: &str = "initial.g2f";
pub const FINAL_NAME: &str = "final.g2f";
pub const SUMMARY_NAME: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Seed and sample count of the identity suite behind `validate`.
pub const VALIDATE_SEED: u64 = 20_240_601;
pub const VALIDATE_SAMPLES: usize = 200;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Runs the pointwise identity suite; returns whether every identity held.
pub fn cmd_validate<W: Write>(out: &mut W, star_fault: Option<(usize, usize)>) -> Result<bool, CliError> {
    let _guard = star_fault.map(|(k, i)| inject_star_sign_fault(k, i));
    let report = run_identity_suite(VALIDATE_SEED, VALIDATE_SAMPLES);
    for c in &report.checks {
        writeln!(
            out,
            "{:<4} {:<22} residual {:.3e} (tolerance {:.1e}) {}",
            if c.passed() { "ok" } else { "FAIL" },
            c.name,
            c.residual,
            c.tolerance,
            c.detail
        )?;
    }
    writeln!(
        out,
        "j∘i constants: a = {:.12}, b = {:.12}, a + 7b = {:.12}",
        report.ji.a,
        report.ji.b,
        report.ji.trace_sum()
    )?;
    match report.first_failure() {
        None => writeln!(out, "all {} identities hold", report.checks.len())?,
        Some(c) => writeln!(out, "first failure: {}", c.name)?,
    }
    Ok(report.passed())
}

/// How a run ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub termination: String,
    pub message: Option<String>,
    pub t: f64,
    pub step: u64,
    pub exit_code: i32,
}

/// Sidecar record written next to every checkpoint snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub flow_kind: String,
    pub t: f64,
    /// Exact bits of `t`.
    pub t_bits: String,
    pub step: u64,
    pub seed: u64,
    pub snapshot: String,
    pub output_dir: PathBuf,
    /// Length of the trajectory CSV before the row of this step.
    pub csv_bytes: u64,
    pub initial_limit_bits: String,
    pub initial_energy_bits: String,
    pub config: RunConfig,
}

fn bits(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn from_bits(s: &str) -> Result<f64, CliError> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| CliError::Format(format!("bad float bits {s:?}: {e}")))
}

pub fn initial_field(cfg: &RunConfig) -> Result<LatticeField, CliError> {
    let grid = cfg.grid()?;
    match &cfg.initial {
        InitialCondition::UniformStandard => Ok(uniform_standard(&grid)),
        InitialCondition::ClosedPerturbation {
            epsilon,
            shells,
            amplitude,
        } => {
            let eta = band_limited_random(&grid, 2, *shells, *amplitude, cfg.seed)?;
            make_closed_perturbation(&uniform_standard(&grid), &eta, *epsilon).map_err(|e| match e {
                g2flow::Error::NotPositive(m) => CliError::Config(m),
                other => other.into(),
            })
        }
        InitialCondition::RandomField {
            degree,
            shells,
            amplitude,
            mean,
        } => {
            let f = band_limited_random(&grid, *degree, *shells, *amplitude, cfg.seed)?;
            let mut c = AltForm::zero(*degree);
            c.coeffs_mut().iter_mut().for_each(|v| *v = *mean);
            Ok(f.plus(1.0, &LatticeField::uniform(&grid, &c))?)
        }
        InitialCondition::FromSnapshot { path } => {
            let f = snapshot::load(path)?;
            if f.grid() != &grid {
                return Err(CliError::Config(format!(
                    "snapshot {} is on a different grid than the config",
                    path.display()
                )));
            }
            Ok(f)
        }
    }
}

fn period_target(kind: &FlowKind) -> PeriodTarget {
    match kind {
        FlowKind::Coflow | FlowKind::ModifiedCoflow { .. } => PeriodTarget::Psi,
        _ => PeriodTarget::Phi,
    }
}

fn reference_periods(spec: &FlowSpec, initial: &LatticeField) -> Result<Option<Periods>, CliError> {
    if !spec.kind.is_structure_flow() {
        return Ok(None);
    }
    Ok(Some(match period_target(&spec.kind) {
        PeriodTarget::Phi => periods(initial),
        PeriodTarget::Psi => periods(&FrameField::new(initial)?.psi_field()),
    }))
}

/// Diagnostics row for one state of a run.
pub fn record_for(
    field: &LatticeField,
    spec: &FlowSpec,
    reference: Option<&Periods>,
    step: u64,
    t: f64,
) -> Result<DiagnosticsRecord, CliError> {
    let mut rec = if spec.kind.is_structure_flow() {
        let nu = match spec.kind {
            FlowKind::DirichletGradient { nu } => nu,
            _ => NU_MATCHING_D,
        };
        structure_record(field, &nu, reference.map(|p| (p, period_target(&spec.kind))))?
    } else {
        heat_record(field)?
    };
    rec.step = step;
    rec.t = t;
    Ok(rec)
}

struct Run<'a> {
    cfg: &'a RunConfig,
    spec: FlowSpec,
    out_dir: PathBuf,
    reference: Option<Periods>,
}

fn checkpoint_paths(out_dir: &Path, step: u64) -> (PathBuf, PathBuf) {
    let dir = out_dir.join(CHECKPOINT_DIR);
    (
        dir.join(format!("step_{step:010}.g2f")),
        dir.join(format!("step_{step:010}.json")),
    )
}

impl Run<'_> {
    fn drive<W: Write>(
        &self,
        state: FlowState,
        mut csv: BufWriter<File>,
        mut csv_len: u64,
        log: &mut W,
    ) -> Result<RunSummary, CliError> {
        let csv_path = self.out_dir.join(CSV_NAME);
        let start_step = state.step;
        let reference_data = state.reference(None);
        let mut failure: Option<CliError> = None;
        let traj = run(state, &self.spec, self.cfg.t_end, self.cfg.sample_every, |s| {
            let result = (|| -> Result<(), CliError> {
                let row = record_for(s.field(), &self.spec, self.reference.as_ref(), s.step, s.t)?.csv_row();
                if let Some(every) = self.cfg.checkpoint_every {
                    if s.step % every == 0 && s.step != start_step {
                        csv.flush().map_err(|e| io_err(&csv_path, e))?;
                        self.write_checkpoint(s, &reference_data, csv_len)?;
                    }
                }
                writeln!(csv, "{row}").map_err(|e| io_err(&csv_path, e))?;
                csv_len += row.len() as u64 + 1;
                Ok(())
            })();
            result.map_err(|e| {
                let msg = e.to_string();
                failure = Some(e);
                g2flow::Error::InvalidInput(msg)
            })
        });
        let traj = match (traj, failure) {
            (_, Some(e)) => return Err(e),
            (Err(e), None) => return Err(e.into()),
            (Ok(t), None) => t,
        };
        csv.flush().map_err(|e| io_err(&csv_path, e))?;
        let fs = &traj.final_state;
        snapshot::save(&self.out_dir.join(FINAL_NAME), fs.field())?;
        let summary = RunSummary {
            termination: traj.termination.name().to_string(),
            message: traj.message.clone(),
            t: fs.t,
            step: fs.step,
            exit_code: termination_exit_code(traj.termination),
        };
        let path = self.out_dir.join(SUMMARY_NAME);
        fs::write(
            &path,
            serde_json::to_string_pretty(&summary).expect("serializable") + "\n",
        )
        .map_err(|e| io_err(&path, e))?;
        writeln!(
            log,
            "{}: {} at t = {:.6e} after {} steps{}",
            self.spec.kind.name(),
            summary.termination,
            summary.t,
            summary.step,
            summary
                .message
                .as_deref()
                .map(|m| format!(" ({m})"))
                .unwrap_or_default()
        )?;
        if traj.termination != Termination::ReachedT {
            writeln!(log, "run stopped early: {}", traj.termination.name())?;
        }
        Ok(summary)
    }

    fn write_checkpoint(&self, s: &FlowState, reference: &RunReference, csv_bytes: u64) -> Result<(), CliError> {
        let (snap, side) = checkpoint_paths(&self.out_dir, s.step);
        let dir = snap.parent().expect("checkpoint dir");
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        snapshot::save(&snap, s.field())?;
        let record = Checkpoint {
            version: 1,
            flow_kind: self.spec.kind.name().to_string(),
            t: s.t,
            t_bits: bits(s.t),
            step: s.step,
            seed: self.cfg.seed,
            snapshot: snap.file_name().expect("file").to_string_lossy().into_owned(),
            output_dir: self.out_dir.clone(),
            csv_bytes,
            initial_limit_bits: bits(reference.initial_limit),
            initial_energy_bits: bits(reference.initial_energy),
            config: self.cfg.clone(),
        };
        fs::write(
            &side,
            serde_json::to_string_pretty(&record).expect("serializable") + "\n",
        )
        .map_err(|e| io_err(&side, e))
    }
}

fn state_error(e: g2flow::flows::FlowError) -> CliError {
    use g2flow::flows::FlowError;
    match e {
        FlowError::PositivityLost(m) => CliError::Positivity(m),
        FlowError::Invalid(e) => e.into(),
        other => CliError::Numerics(g2flow::Error::InvalidInput(other.to_string())),
    }
}

/// Starts a configured run writing into `out_dir`.
pub fn cmd_run<W: Write>(cfg: &RunConfig, out_dir: &Path, log: &mut W) -> Result<RunSummary, CliError> {
    let spec = cfg.flow_spec()?;
    let initial = initial_field(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    snapshot::save(&out_dir.join(INITIAL_NAME), &initial)?;
    let state = FlowState::new(initial.clone(), &spec).map_err(state_error)?;
    let csv_path = out_dir.join(CSV_NAME);
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?);
    let header = DiagnosticsRecord::csv_header();
    writeln!(csv, "{header}").map_err(|e| io_err(&csv_path, e))?;
    let run = Run {
        cfg,
        spec,
        out_dir: out_dir.to_path_buf(),
        reference: reference_periods(&spec, &initial)?,
    };
    run.drive(state, csv, header.len() as u64 + 1, log)
}

/// Continues a run from a checkpoint sidecar. Output goes to the run's
/// original directory unless `out_dir` overrides it.
pub fn cmd_resume<W: Write>(sidecar: &Path, out_dir: Option<&Path>, log: &mut W) -> Result<RunSummary, CliError> {
    let text = fs::read_to_string(sidecar).map_err(|e| io_err(sidecar, e))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", sidecar.display())))?;
    if ck.version != 1 {
        return Err(CliError::Format(format!(
            "checkpoint version {} is not supported",
            ck.version
        )));
    }
    let cfg = ck.config.clone();
    cfg.check()?;
    let spec = cfg.flow_spec()?;
    let out_dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| ck.output_dir.clone());
    let snap_dir = sidecar.parent().unwrap_or_else(|| Path::new("."));
    let field = snapshot::load(&snap_dir.join(&ck.snapshot))?;
    let initial = snapshot::load(&out_dir.join(INITIAL_NAME))?;
    let reference = RunReference {
        initial_limit: from_bits(&ck.initial_limit_bits)?,
        initial_energy: from_bits(&ck.initial_energy_bits)?,
        background: (spec.kind == FlowKind::LaplacianDeturck).then(|| initial.clone()),
    };
    let state = FlowState::resume(field, from_bits(&ck.t_bits)?, ck.step, &reference, &spec).map_err(state_error)?;
    let csv_path = out_dir.join(CSV_NAME);
    let file = OpenOptions::new()
        .read(true)
        .write(true)
        .open(&csv_path)
        .map_err(|e| io_err(&csv_path, e))?;
    let len = file.metadata().map_err(|e| io_err(&csv_path, e))?.len();
    if len < ck.csv_bytes {
        return Err(CliError::Io(format!(
            "{} holds {len} bytes but the checkpoint expects at least {}",
            csv_path.display(),
            ck.csv_bytes
        )));
    }
    file.set_len(ck.csv_bytes).map_err(|e| io_err(&csv_path, e))?;
    let mut file = file;
    std::io::Seek::seek(&mut file, std::io::SeekFrom::End(0)).map_err(|e| io_err(&csv_path, e))?;
    writeln!(
        log,
        "resuming {} at step {} (t = {:.6e})",
        spec.kind.name(),
        ck.step,
        ck.t
    )?;
    let run = Run {
        cfg: &cfg,
        spec,
        out_dir: out_dir.clone(),
        reference: reference_periods(&spec, &initial)?,
    };
    run.drive(state, BufWriter::new(file), ck.csv_bytes, log)
}

/// Full diagnostics of one snapshot.
pub fn cmd_diagnose<W: Write>(path: &Path, out: &mut W) -> Result<(), CliError> {
    let field = snapshot::load(path)?;
    let g = field.grid();
    writeln!(out, "snapshot        {}", path.display())?;
    writeln!(out, "grid            {:?} ({})", g.extents(), g.scheme().name())?;
    writeln!(out, "degree          {}", field.degree())?;
    if field.degree() != 3 {
        let rec = heat_record(&field)?;
        writeln!(
            out,
            "mean_deviation_l2          {:.16e}",
            rec.mean_deviation_l2.unwrap_or(f64::NAN)
        )?;
        writeln!(
            out,
            "highest_frequency_fraction {:.16e}",
            rec.highest_frequency_fraction.unwrap_or(f64::NAN)
        )?;
        return Ok(());
    }
    let rec = structure_record(&field, &NU_MATCHING_D, None)?;
    let frames = FrameField::new(&field)?;
    let fits = torsion_field(&field, &frames)?;
    let (rphi, rpsi) = ansatz_residuals(&fits);
    let mismatch = fits.iter().map(|f| f.tau1_mismatch).fold(0.0, f64::max);
    let n2 = torsion_l2_norms2(&fits, &frames);
    let mf = frames.metric_field();
    let r_oracle = integrate_scalar(mf, &scalar_curvature(mf, &ricci_oracle(mf)));
    let r_torsion = -0.5 * n2[2];
    let d_minus_c = dirichlet_d(&field)? - dirichlet_c(&field)?;
    let vol = volume_functional(&field)?;
    let line = |out: &mut W, k: &str, v: f64| writeln!(out, "{k:<34} {v:.16e}");
    line(out, "vol", vol.via_volume_form)?;
    line(out, "vol_via_phi_wedge_psi", vol.via_phi_psi)?;
    line(out, "energy_c", rec.energy_c.unwrap_or(f64::NAN))?;
    line(out, "energy_d", rec.energy_d.unwrap_or(f64::NAN))?;
    line(out, "energy_dnu", rec.energy_dnu.unwrap_or(f64::NAN))?;
    for (i, v) in rec.tau_norms.unwrap_or([f64::NAN; 4]).iter().enumerate() {
        line(out, &format!("tau{i}_l2"), *v)?;
    }
    line(out, "d_residual", rec.d_residual.unwrap_or(f64::NAN))?;
    line(out, "dstar_residual", rec.dstar_residual.unwrap_or(f64::NAN))?;
    line(out, "dphi_ansatz_residual", rphi)?;
    line(out, "dpsi_ansatz_residual", rpsi)?;
    line(out, "tau1_mismatch", mismatch)?;
    line(
        out,
        "f0_identity_residual",
        rec.f0_identity_residual.unwrap_or(f64::NAN),
    )?;
    line(
        out,
        "highest_frequency_fraction",
        rec.highest_frequency_fraction.unwrap_or(f64::NAN),
    )?;
    line(out, "scalar_curvature_integral_oracle", r_oracle)?;
    line(out, "minus_half_tau2_l2_squared", r_torsion)?;
    line(out, "d_minus_c", d_minus_c)?;
    line(out, "oracle_vs_torsion_deviation", (r_oracle - r_torsion).abs())?;
    line(out, "oracle_vs_d_minus_c_deviation", (r_oracle - d_minus_c).abs())?;
    line(out, "torsion_vs_d_minus_c_deviation", (r_torsion - d_minus_c).abs())?;
    Ok(())
}
