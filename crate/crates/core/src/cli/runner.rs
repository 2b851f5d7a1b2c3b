//! Experiment orchestration and report files.
//!
//! Every output is rendered in memory and then written through a temporary
//! file that is renamed into place, so a file is either complete or absent.
//! Floats are printed with 17 significant digits and no timing information
//! is recorded, which makes identical runs byte-identical.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path as FsPath, PathBuf};

use super::config::ExperimentConfig;
use crate::model::{
    check_coercivity, check_contraction, check_local_monotonicity, check_sigma_condition, AssumptionReport,
    InitialSegment, NeutralSystem, SampleDomain, SigmaVariant, DEFAULT_TOLERANCE,
};
use crate::stability::{
    as_exponent_from_sq_norms, estimate_ms_exponent, find_decay_base, recursion_diagnostics, run_ensemble,
    verify_weighted_bound, with_workers, Bootstrap, CertificateInputs, ExponentEstimate, MomentTrajectory,
    RecursionDiagnostics, SegmentMoments, StabilityCertificate, WeightedBound,
};
use crate::stats::quantile_sorted;
use crate::{Error, Result, Vector};

pub const MOMENTS_FILE: &str = "moments.csv";
pub const EXPONENTS_FILE: &str = "exponents.csv";
pub const CERTIFICATE_FILE: &str = "certificate.txt";
pub const ASSUMPTIONS_FILE: &str = "assumptions.txt";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for path simulation; defaults to the available parallelism.
    pub workers: Option<usize>,
    /// Treat failed hypothesis checks as errors.
    pub strict: bool,
    /// Overrides `out.dir`.
    pub out_dir: Option<PathBuf>,
}

/// What a run produced. The files are already on disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub trajectory: MomentTrajectory,
    pub ms_exponent: Option<ExponentEstimate>,
    /// Per-path pathwise exponent estimates, by stream id (`+inf` for diverged paths).
    pub as_exponents: Vec<f64>,
    pub certificate: Option<StabilityCertificate>,
    pub weighted_bound: Option<WeightedBound>,
    pub assumptions: Vec<AssumptionReport>,
    /// Human-readable description of every failed hypothesis check.
    pub hypothesis_failures: Vec<String>,
    pub strict: bool,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.trajectory.divergence_count > 0
    }

    /// Nonzero iff a path diverged, or a hypothesis check failed in strict mode.
    pub fn exit_code(&self) -> u8 {
        if self.diverged() {
            2
        } else if self.strict && !self.hypothesis_failures.is_empty() {
            3
        } else {
            0
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "wrote {} files to {}", self.files.len(), self.out_dir.display());
        if let Some(ms) = &self.ms_exponent {
            let _ = writeln!(
                s,
                "mean-square exponent {:.6} (95% CI {:.6} .. {:.6})",
                ms.slope, ms.ci_lo, ms.ci_hi
            );
        }
        if let Some(step) = self.trajectory.first_divergence {
            let _ = writeln!(
                s,
                "divergence: {} of {} paths diverged, first at step {step}",
                self.trajectory.divergence_count, self.trajectory.path_count
            );
        }
        for failure in &self.hypothesis_failures {
            let label = if self.strict { "error" } else { "note" };
            let _ = writeln!(s, "{label}: hypothesis check failed: {failure}");
        }
        s
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_atomic(dir: &FsPath, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let target = dir.join(name);
    let mut tmp = tempfile::Builder::new()
        .prefix(&format!(".{name}."))
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(&target).map_err(|e| Error::io(&target, e.error))?;
    Ok(target)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::invalid(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv encoding failed: {e}")))
}

fn assumption_checks(config: &ExperimentConfig) -> Result<Vec<(AssumptionReport, Option<SigmaVariant>)>> {
    let sys = &config.system;
    let domain = SampleDomain::default();
    let pairs = domain.pairs(sys.state_dim());
    let quads = domain.quads(sys.state_dim());
    let h = config.grid.h();
    Ok(vec![
        (check_coercivity(sys, config.k_tilde, &pairs)?, None),
        (check_contraction(&|y: &Vector| sys.neutral(y), &pairs, DEFAULT_TOLERANCE)?, None),
        (check_local_monotonicity(sys, domain.radius, &quads)?, None),
        (
            check_sigma_condition(sys, &config.stability, h, SigmaVariant::Statement, &pairs)?,
            Some(SigmaVariant::Statement),
        ),
        (
            check_sigma_condition(sys, &config.stability, h, SigmaVariant::Proof, &pairs)?,
            Some(SigmaVariant::Proof),
        ),
    ])
}

/// Runs the configured experiment and writes `moments.csv`, `exponents.csv`,
/// `certificate.txt` and `assumptions.txt`. Divergence is not an error: the
/// partial outputs are written and reflected in [`RunOutcome::exit_code`].
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    let out_dir = options.out_dir.clone().unwrap_or_else(|| config.out_dir.clone());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let grid = &config.grid;
    let h = grid.h();
    let mut failures = Vec::new();

    // Hypothesis checks.
    let checks = assumption_checks(config)?;
    let mut assumptions_txt = String::new();
    for (report, variant) in &checks {
        if let Some(v) = variant {
            let _ = writeln!(assumptions_txt, "# variant = {v}");
        }
        let _ = writeln!(assumptions_txt, "{report}");
        if !report.holds_on_sample {
            let what = match variant {
                Some(v) => format!("{} ({v} variant)", report.assumption),
                None => report.assumption.to_string(),
            };
            failures.push(format!(
                "{what}: {} of {} sampled points violate it",
                report.violations.len(),
                report.sample_count
            ));
        }
    }

    let inputs = CertificateInputs {
        kappa: config.kappa,
        tau: grid.tau(),
        lambda2: config.stability.lambda2,
        lambda3: config.stability.lambda3,
        k_tilde: config.k_tilde,
        h,
    };
    let certificate = match find_decay_base(&inputs) {
        Ok(c) => Some(c),
        Err(e @ Error::HypothesisViolated { .. }) => {
            failures.push(e.to_string());
            None
        }
        Err(e) => return Err(e),
    };

    // Ensemble.
    let segment = InitialSegment::constant(grid.tau(), Vector::from_element(1, config.segment_value));
    let workers = options
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let (trajectory, ms_exponent, ms_error) = with_workers(workers, || -> Result<_> {
        let run = run_ensemble(&config.system, &segment, grid, &config.scheme, config.seed, config.paths)?;
        let trajectory = MomentTrajectory::from_ensemble(run, grid);
        let ms = estimate_ms_exponent(&trajectory, config.window_fraction, &Bootstrap::default());
        Ok(match ms {
            Ok(ms) => (trajectory, Some(ms), None),
            Err(e) => (trajectory, None, Some(e.to_string())),
        })
    })??;

    let mut as_exponents = Vec::with_capacity(trajectory.path_count);
    for sq in &trajectory.path_sq_norms {
        let full = sq.len() == grid.steps() + 1;
        as_exponents.push(if full {
            as_exponent_from_sq_norms(sq, h, config.window_fraction)?
        } else {
            f64::INFINITY
        });
    }
    let mut sorted = as_exponents.clone();
    sorted.sort_by(f64::total_cmp);

    let weighted_bound = match &certificate {
        Some(c) => Some(verify_weighted_bound(&trajectory, c)?),
        None => None,
    };
    let recursion: Option<RecursionDiagnostics> = match &certificate {
        Some(c) => {
            let seg = SegmentMoments::estimate(&config.system, &segment, grid, config.seed, 1)?;
            Some(recursion_diagnostics(c, &seg, grid)?)
        }
        None => None,
    };

    // Files.
    let mut files = Vec::new();
    let moments = csv_bytes(
        &["step", "k_times_h", "mean_sq", "std_err"],
        (0..trajectory.len()).map(|k| {
            vec![
                k.to_string(),
                num(trajectory.times[k]),
                num(trajectory.moments[k]),
                num(trajectory.std_errors[k]),
            ]
        }),
    )?;
    files.push(write_atomic(&out_dir, MOMENTS_FILE, &moments)?);

    let (slope, lo, hi) = ms_exponent.map_or((f64::NAN, f64::NAN, f64::NAN), |m| (m.slope, m.ci_lo, m.ci_hi));
    let exponents = csv_bytes(
        &["ms_slope", "ms_ci_lo", "ms_ci_hi", "as_q05", "as_q50", "as_q95"],
        [vec![
            num(slope),
            num(lo),
            num(hi),
            num(quantile_sorted(&sorted, 0.05)),
            num(quantile_sorted(&sorted, 0.50)),
            num(quantile_sorted(&sorted, 0.95)),
        ]],
    )?;
    files.push(write_atomic(&out_dir, EXPONENTS_FILE, &exponents)?);

    let mut cert_txt = String::new();
    let _ = writeln!(cert_txt, "# resolved configuration");
    for line in config.to_string().lines() {
        let _ = writeln!(cert_txt, "# {line}");
    }
    let _ = writeln!(cert_txt, "f_at_one = {}", num(inputs.f(1.0)));
    let _ = writeln!(
        cert_txt,
        "requirement lambda2 > lambda3 + 4 K_tilde = {}",
        inputs.lambda2 > inputs.lambda3 + 4.0 * inputs.k_tilde
    );
    let _ = writeln!(cert_txt, "stability hypotheses lambda1 > 2 and lambda2 > lambda3 > 0 = true");
    match (&certificate, &weighted_bound, &recursion) {
        (Some(c), Some(wb), Some(r)) => {
            let _ = writeln!(cert_txt, "C_bar = {}", num(c.c_bar));
            let _ = writeln!(cert_txt, "f_at_C_bar = {}", num(inputs.f(c.c_bar)));
            let _ = writeln!(cert_txt, "C = {}", num(c.c));
            let _ = writeln!(cert_txt, "ms_rate = {}", num(c.ms_rate));
            let _ = writeln!(cert_txt, "as_rate = {}", num(c.as_rate));
            let _ = writeln!(cert_txt, "empirical_K_bar = {}", num(wb.empirical_k_bar));
            let _ = writeln!(cert_txt, "weighted_trend_slope = {}", num(wb.trend_slope));
            let _ = writeln!(cert_txt, "weighted_trend_se = {}", num(wb.trend_se));
            let _ = writeln!(cert_txt, "weighted_positive_trend = {}", wb.positive_trend);
            // the literal product -log C * log K_bar, reported next to -log C
            let _ = writeln!(
                cert_txt,
                "rate_times_log_K_bar = {}",
                num(-c.c.ln() * wb.empirical_k_bar.ln())
            );
            let _ = writeln!(cert_txt, "recursion_c1 = {}", num(r.c1));
            let _ = writeln!(cert_txt, "recursion_c2 = {}", num(r.c2));
            let _ = writeln!(
                cert_txt,
                "recursion_final_weighted_bound = {}",
                num(*r.weighted_bound.last().unwrap_or(&f64::NAN))
            );
        }
        _ => {
            let _ = writeln!(cert_txt, "certificate = unavailable");
        }
    }
    if let Some(e) = &ms_error {
        let _ = writeln!(cert_txt, "ms_fit_error = {e}");
    }
    let _ = writeln!(cert_txt, "paths = {}", trajectory.path_count);
    let _ = writeln!(cert_txt, "diverged_paths = {}", trajectory.divergence_count);
    if let Some(step) = trajectory.first_divergence {
        let _ = writeln!(cert_txt, "first_divergence_step = {step}");
    }
    for (report, variant) in &checks {
        let label = match variant {
            Some(v) => format!("{}[{v}]", report.assumption),
            None => report.assumption.to_string(),
        };
        let _ = writeln!(cert_txt, "check {label} holds_on_sample = {}", report.holds_on_sample);
    }
    files.push(write_atomic(&out_dir, CERTIFICATE_FILE, cert_txt.as_bytes())?);
    files.push(write_atomic(&out_dir, ASSUMPTIONS_FILE, assumptions_txt.as_bytes())?);

    Ok(RunOutcome {
        out_dir,
        files,
        trajectory,
        ms_exponent,
        as_exponents,
        certificate,
        weighted_bound,
        assumptions: checks.into_iter().map(|(r, _)| r).collect(),
        hypothesis_failures: failures,
        strict: options.strict,
    })
}
