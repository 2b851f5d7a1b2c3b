//! Ensemble moment estimation, exponent estimators and the decay-base
//! certificate for exponential stability of the tamed scheme.
//!
//! The limits superior in the stability definitions are not finitely
//! computable. The mean-square exponent is estimated as the least-squares
//! slope of `log E|Y_k|^2` over a trailing window, the pathwise exponent as
//! the maximum of `log|Y_k| / kh` over a trailing window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::grid::{BrownianDriver, TimeGrid};
use crate::model::{InitialSegment, NeutralSystem};
use crate::scheme::{drive_path, Path, PathState, SchemeConfig};
use crate::stats::{fit_line, mean_std, normal_quantile, quantile_sorted};
use crate::{Error, Result};

/// Squared norms `|Y_k|^2` of every path of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    /// One entry per stream id, truncated at the path's divergence.
    pub sq_norms: Vec<Vec<f64>>,
    pub diverged_at: Vec<Option<usize>>,
}

/// Runs `paths` independent paths with stream ids `0..paths` on the current
/// rayon pool. Results are ordered by stream id whatever the scheduling.
pub fn run_ensemble(
    system: &dyn NeutralSystem,
    segment: &InitialSegment,
    grid: &TimeGrid,
    config: &SchemeConfig,
    seed: u64,
    paths: usize,
) -> Result<EnsembleRun> {
    let results: Vec<Result<(Vec<f64>, Option<usize>)>> = (0..paths as u64)
        .into_par_iter()
        .map(|stream| {
            let mut driver = BrownianDriver::new(seed, stream, system.noise_dim());
            let mut state = PathState::from_segment(system, segment, grid, &driver)?;
            let mut sq = Vec::with_capacity(grid.steps() + 1);
            sq.push(state.y().norm_squared());
            let diverged = drive_path(system, grid, config, &mut driver, &mut state, |s, _| {
                sq.push(s.y().norm_squared())
            })?;
            Ok((sq, diverged))
        })
        .collect();
    let mut run = EnsembleRun {
        sq_norms: Vec::with_capacity(paths),
        diverged_at: Vec::with_capacity(paths),
    };
    for r in results {
        let (sq, d) = r?;
        run.sq_norms.push(sq);
        run.diverged_at.push(d);
    }
    Ok(run)
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Ensemble estimate of `E|Y_k|^2` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub moments: Vec<f64>,
    /// Sample standard deviation over `sqrt(N)`.
    pub std_errors: Vec<f64>,
    pub path_count: usize,
    pub divergence_count: usize,
    /// Earliest divergence step over the ensemble; the trajectory stops
    /// just before it.
    pub first_divergence: Option<usize>,
    /// Per-path `|Y_k|^2`, kept for bootstrap resampling. Empty for
    /// trajectories built directly from moments.
    pub path_sq_norms: Vec<Vec<f64>>,
}

impl MomentTrajectory {
    /// Trajectory without per-path data, e.g. for synthetic inputs.
    pub fn from_moments(times: Vec<f64>, moments: Vec<f64>) -> Self {
        let n = moments.len();
        MomentTrajectory {
            times,
            moments,
            std_errors: vec![0.0; n],
            path_count: 0,
            divergence_count: 0,
            first_divergence: None,
            path_sq_norms: Vec::new(),
        }
    }

    pub fn from_ensemble(run: EnsembleRun, grid: &TimeGrid) -> Self {
        let first_divergence = run.diverged_at.iter().flatten().min().copied();
        let len = first_divergence.unwrap_or(grid.steps() + 1);
        let n = run.sq_norms.len();
        let (mut moments, mut std_errors) = (Vec::with_capacity(len), Vec::with_capacity(len));
        for k in 0..len {
            let (mean, sd) = mean_std(run.sq_norms.iter().map(|p| p[k]));
            moments.push(mean);
            std_errors.push(sd / (n as f64).sqrt());
        }
        MomentTrajectory {
            times: (0..len).map(|k| grid.time(k as i64)).collect(),
            moments,
            std_errors,
            path_count: n,
            divergence_count: run.diverged_at.iter().filter(|d| d.is_some()).count(),
            first_divergence,
            path_sq_norms: run.sq_norms,
        }
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    /// Grid spacing of the trajectory.
    pub fn h(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }
}

/// Ensemble estimate of `E|Y_k|^2` from `paths >= 2` independent paths.
pub fn estimate_second_moment(
    system: &dyn NeutralSystem,
    segment: &InitialSegment,
    grid: &TimeGrid,
    config: &SchemeConfig,
    seed: u64,
    paths: usize,
) -> Result<MomentTrajectory> {
    if paths < 2 {
        return Err(Error::invalid(format!("at least 2 paths are needed, got {paths}")));
    }
    let run = run_ensemble(system, segment, grid, config, seed, paths)?;
    Ok(MomentTrajectory::from_ensemble(run, grid))
}

/// Percentile bootstrap over paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bootstrap {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Bootstrap {
            resamples: 1000,
            seed: 0x0b00_7572_a900,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentEstimate {
    pub slope: f64,
    /// 95% bootstrap interval; collapses to the slope without per-path data.
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// First trajectory index of the fitting window.
    pub window_start: usize,
}

fn window_start(times: &[f64], fraction: f64) -> usize {
    let horizon = *times.last().unwrap_or(&0.0);
    let start_time = (1.0 - fraction) * horizon;
    let slack = 1e-9 * horizon.max(1.0);
    times.iter().position(|t| *t >= start_time - slack).unwrap_or(times.len())
}

/// Mean-square exponent as the least-squares slope of `log moments[k]`
/// against `kh` over the final `window_fraction` of the horizon.
pub fn estimate_ms_exponent(
    traj: &MomentTrajectory,
    window_fraction: f64,
    bootstrap: &Bootstrap,
) -> Result<ExponentEstimate> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "window fraction must lie in (0, 1], got {window_fraction}"
        )));
    }
    let start = window_start(&traj.times, window_fraction);
    let times = &traj.times[start..];
    let window = &traj.moments[start..];
    if window.len() < 10 {
        return Err(Error::CannotFit(format!(
            "the window holds {} points, at least 10 are needed",
            window.len()
        )));
    }
    if let Some(bad) = window.iter().position(|m| !(*m > 0.0)) {
        return Err(Error::CannotFit(format!(
            "moment {} at index {} is not positive",
            window[bad],
            start + bad
        )));
    }
    let logs: Vec<f64> = window.iter().map(|m| m.ln()).collect();
    let slope = fit_line(times, &logs).slope;

    let paths = &traj.path_sq_norms;
    if paths.is_empty() || bootstrap.resamples == 0 {
        return Ok(ExponentEstimate {
            slope,
            ci_lo: slope,
            ci_hi: slope,
            window_start: start,
        });
    }
    let end = traj.len();
    let mut slopes: Vec<f64> = (0..bootstrap.resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(bootstrap.seed);
            rng.set_stream(r);
            let mut acc = vec![0.0; end - start];
            for _ in 0..paths.len() {
                let p = &paths[rng.random_range(0..paths.len())];
                for (a, v) in acc.iter_mut().zip(&p[start..end]) {
                    *a += v;
                }
            }
            if acc.iter().any(|a| !(*a > 0.0)) {
                return f64::NAN;
            }
            let logs: Vec<f64> = acc.iter().map(|a| (a / paths.len() as f64).ln()).collect();
            fit_line(times, &logs).slope
        })
        .collect();
    slopes.retain(|s| s.is_finite());
    slopes.sort_by(f64::total_cmp);
    Ok(ExponentEstimate {
        slope,
        ci_lo: quantile_sorted(&slopes, 0.025),
        ci_hi: quantile_sorted(&slopes, 0.975),
        window_start: start,
    })
}

/// Pathwise exponent proxy: `max log|Y_k| / (kh)` over the final
/// `tail_fraction` of the path, from squared norms. Returns `-inf` when the
/// path hits zero inside the window.
pub fn as_exponent_from_sq_norms(sq_norms: &[f64], h: f64, tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let last = sq_norms.len().saturating_sub(1);
    if last == 0 {
        return Err(Error::invalid("the path needs at least one step"));
    }
    let start = (((1.0 - tail_fraction) * last as f64).ceil() as usize).max(1);
    let mut best = f64::NEG_INFINITY;
    for (k, sq) in sq_norms.iter().enumerate().skip(start) {
        if *sq == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        best = best.max(0.5 * sq.ln() / (k as f64 * h));
    }
    Ok(best)
}

/// [`as_exponent_from_sq_norms`] for a simulated path.
pub fn estimate_as_exponent(path: &Path, grid: &TimeGrid, tail_fraction: f64) -> Result<f64> {
    let sq: Vec<f64> = path.states.iter().map(|y| y.norm_squared()).collect();
    as_exponent_from_sq_norms(&sq, grid.h(), tail_fraction)
}

/// Parameters of the decay-base function `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateInputs {
    pub kappa: f64,
    pub tau: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub k_tilde: f64,
    pub h: f64,
}

impl CertificateInputs {
    /// `f(x) = (1 + x^tau)(x - 1)(1 + kappa^2) + (-lambda2 + x^tau lambda3 + 2 K_tilde (1 + x^tau)) h`
    pub fn f(&self, x: f64) -> f64 {
        eval_f(x, self.kappa, self.tau, self.lambda2, self.lambda3, self.k_tilde, self.h)
    }
}

pub fn eval_f(x: f64, kappa: f64, tau: f64, lambda2: f64, lambda3: f64, k_tilde: f64, h: f64) -> f64 {
    let x_tau = x.powf(tau);
    (1.0 + x_tau) * (x - 1.0) * (1.0 + kappa * kappa)
        + (-lambda2 + x_tau * lambda3 + 2.0 * k_tilde * (1.0 + x_tau)) * h
}

/// Root `C_bar` of `f` on `(1, inf)`, the chosen decay base `C` and the
/// certified exponential rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCertificate {
    pub kappa: f64,
    pub k_tilde: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau: f64,
    pub h: f64,
    pub f_at_one: f64,
    pub c_bar: f64,
    /// `(1 + C_bar) / 2`
    pub c: f64,
    /// `-log C`
    pub ms_rate: f64,
    /// `-(log C) / 2`
    pub as_rate: f64,
}

impl StabilityCertificate {
    pub fn inputs(&self) -> CertificateInputs {
        CertificateInputs {
            kappa: self.kappa,
            tau: self.tau,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            k_tilde: self.k_tilde,
            h: self.h,
        }
    }
}

const ROOT_RESIDUAL: f64 = 1e-10;
const ROOT_BRACKET: f64 = 1e-12;

/// Bisection for the root of `f` on `[1, x_hi]`, with `x_hi` doubled from 2
/// until `f(x_hi) > 0`. Requires `f(1) < 0`.
pub fn find_decay_base(inputs: &CertificateInputs) -> Result<StabilityCertificate> {
    let CertificateInputs {
        kappa,
        tau,
        lambda2,
        lambda3,
        k_tilde,
        h,
    } = *inputs;
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::StepTooLarge { h });
    }
    if !(tau > 0.0) || [kappa, lambda2, lambda3, k_tilde].iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("certificate parameters must be finite with tau > 0"));
    }
    let f_at_one = inputs.f(1.0);
    if !(f_at_one < 0.0) {
        return Err(Error::HypothesisViolated {
            f_at_one,
            lambda2,
            lambda3,
            k_tilde,
        });
    }

    let mut hi = 2.0;
    while !(inputs.f(hi) > 0.0) {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::invalid("f has no sign change on [1, inf)"));
        }
    }
    let (mut lo, mut f_lo, mut f_hi) = (1.0, f_at_one, inputs.f(hi));
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = inputs.f(mid);
        if f_mid < 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
        if hi - lo <= ROOT_BRACKET && f_lo.abs().min(f_hi.abs()) <= ROOT_RESIDUAL {
            break;
        }
    }
    let c_bar = if f_lo.abs() <= f_hi.abs() { lo } else { hi };
    let c = 0.5 * (1.0 + c_bar);
    let ms_rate = -c.ln();
    Ok(StabilityCertificate {
        kappa,
        k_tilde,
        lambda2,
        lambda3,
        tau,
        h,
        f_at_one,
        c_bar,
        c,
        ms_rate,
        as_rate: ms_rate / 2.0,
    })
}

/// Number of strict sign changes of `f` over `points` equally spaced
/// samples of `[lo, hi]`; zeros are skipped.
pub fn sign_changes_on_grid(inputs: &CertificateInputs, lo: f64, hi: f64, points: usize) -> usize {
    let mut changes = 0;
    let mut prev = 0.0f64;
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let v = inputs.f(x);
        if v != 0.0 {
            if prev != 0.0 && (v > 0.0) != (prev > 0.0) {
                changes += 1;
            }
            prev = v;
        }
    }
    changes
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBound {
    /// `C^{kh} moments[k]`
    pub weights: Vec<f64>,
    /// `sup_k` of the weights.
    pub empirical_k_bar: f64,
    pub trend_slope: f64,
    pub trend_se: f64,
    /// Slope of the weights against `k` significantly positive (one-sided 95%).
    pub positive_trend: bool,
}

/// Checks `C^{kh} E|Y_k|^2 <= K_bar` on a trajectory.
pub fn verify_weighted_bound(traj: &MomentTrajectory, cert: &StabilityCertificate) -> Result<WeightedBound> {
    if let Some(h) = traj.h() {
        if (h - cert.h).abs() > 1e-9 * cert.h {
            return Err(Error::invalid(format!(
                "trajectory step {h} differs from the certificate's h = {}",
                cert.h
            )));
        }
    }
    if traj.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let weights: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.moments)
        .map(|(t, m)| cert.c.powf(*t) * m)
        .collect();
    let empirical_k_bar = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ks: Vec<f64> = (0..weights.len()).map(|k| k as f64).collect();
    let fit = fit_line(&ks, &weights);
    let positive_trend = if fit.slope_se > 0.0 {
        fit.slope / fit.slope_se > normal_quantile(0.95)
    } else {
        fit.slope > 1e-12 * empirical_k_bar.abs()
    };
    Ok(WeightedBound {
        weights,
        empirical_k_bar,
        trend_slope: fit.slope,
        trend_se: fit.slope_se,
        positive_trend,
    })
}

/// Second moments of the initial data entering the recursion constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMoments {
    /// `E|Z_0|^2 = E|xi(0) - D(xi(-tau))|^2`
    pub z0_sq: f64,
    /// `E|xi(ih)|^2` for `i = -m, ..., 0`.
    pub xi_sq: Vec<f64>,
}

impl SegmentMoments {
    /// Averages over `samples` segment draws (one suffices for deterministic
    /// segments), using stream ids `0..samples` of `seed`.
    pub fn estimate(
        system: &dyn NeutralSystem,
        segment: &InitialSegment,
        grid: &TimeGrid,
        seed: u64,
        samples: usize,
    ) -> Result<Self> {
        let samples = if segment.is_random() { samples.max(1) } else { 1 };
        let m = grid.lag();
        let mut z0_sq = 0.0;
        let mut xi_sq = vec![0.0; m + 1];
        for s in 0..samples as u64 {
            let driver = BrownianDriver::new(seed, s, system.noise_dim());
            let values = segment.values_on_grid(m, grid.h(), &mut driver.segment_rng())?;
            z0_sq += (&values[m] - system.neutral(&values[0])).norm_squared();
            for (acc, v) in xi_sq.iter_mut().zip(&values) {
                *acc += v.norm_squared();
            }
        }
        let n = samples as f64;
        Ok(SegmentMoments {
            z0_sq: z0_sq / n,
            xi_sq: xi_sq.into_iter().map(|v| v / n).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursionDiagnostics {
    pub c1: f64,
    /// `(1 + kappa^2) C^tau`; exceeds 1 whenever `C > 1`.
    pub c2: f64,
    /// Unrolled bound on `a_j = C^{jh} E|Y_j|^2` for `j = 1, ..., M`.
    pub weighted_bound: Vec<f64>,
    /// The same bound divided by `C^{jh}`, comparable with the moments.
    pub moment_bound: Vec<f64>,
}

/// Constants of the recursion `a_{k+1} <= c1 + c2 a_{k+1-m}` and its unrolled
/// bound
/// `a_j <= c1 sum_{i=0}^{q} c2^i + c2^{q+1} E|xi((j - (q+1)m) h)|^2`, `q = floor(j/m)`.
///
/// Reported literally; no boundedness is asserted.
pub fn recursion_diagnostics(
    cert: &StabilityCertificate,
    segment: &SegmentMoments,
    grid: &TimeGrid,
) -> Result<RecursionDiagnostics> {
    let m = grid.lag();
    if segment.xi_sq.len() != m + 1 {
        return Err(Error::invalid(format!(
            "segment moments have {} entries, expected m + 1 = {}",
            segment.xi_sq.len(),
            m + 1
        )));
    }
    let (c, h) = (cert.c, grid.h());
    let kk = 1.0 + cert.kappa * cert.kappa;
    let c_tau = c.powf(cert.tau);
    let mut delayed_sum = 0.0;
    for i in -(m as i64)..0 {
        let (now, next) = (c.powf(i as f64 * h), c.powf((i + 1) as f64 * h));
        let weight = (next - now) * kk + next * (cert.lambda3 + 2.0 * cert.k_tilde) * h;
        delayed_sum += weight * segment.xi_sq[(i + m as i64) as usize];
    }
    let c1 = kk * (segment.z0_sq + c_tau * delayed_sum);
    let c2 = kk * c_tau;

    let mut weighted_bound = Vec::with_capacity(grid.steps());
    let mut moment_bound = Vec::with_capacity(grid.steps());
    for j in 1..=grid.steps() {
        let q = j / m;
        let geometric: f64 = (0..=q).map(|i| c2.powi(i as i32)).sum();
        let bound = c1 * geometric + c2.powi(q as i32 + 1) * segment.xi_sq[j - q * m];
        weighted_bound.push(bound);
        moment_bound.push(bound / c.powf(j as f64 * h));
    }
    Ok(RecursionDiagnostics {
        c1,
        c2,
        weighted_bound,
        moment_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnSystem;
    use crate::{Matrix, Vector};
    use proptest::prelude::*;

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn scalar_system(
        d: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        s: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> FnSystem {
        FnSystem::new(
            1,
            1,
            move |y| v(d(y[0])),
            move |x, y| v(b(x[0], y[0])),
            move |x, y| Matrix::from_element(1, 1, s(x[0], y[0])),
        )
        .unwrap()
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 4.0, 10).unwrap()
    }

    fn tamed() -> SchemeConfig {
        SchemeConfig::tamed(0.5).unwrap()
    }

    #[test]
    fn zero_system_has_unit_moments() {
        let sys = scalar_system(|_| 0.0, |_, _| 0.0, |_, _| 0.0);
        let seg = InitialSegment::constant(1.0, v(1.0));
        let t = estimate_second_moment(&sys, &seg, &grid(), &tamed(), 1, 20).unwrap();
        assert_eq!(t.len(), 41);
        assert!(t.moments.iter().all(|m| *m == 1.0));
        assert!(t.std_errors.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn deterministic_decay_matches_single_path() {
        let sys = scalar_system(|_| 0.0, |x, _| -x, |_, _| 0.0);
        let seg = InitialSegment::constant(1.0, v(1.0));
        let g = grid();
        let t = estimate_second_moment(&sys, &seg, &g, &tamed(), 1, 8).unwrap();
        let path = crate::scheme::simulate_path(&sys, &seg, &g, &tamed(), &mut BrownianDriver::new(0, 0, 1)).unwrap();
        for (m, y) in t.moments.iter().zip(&path.states) {
            assert_eq!(*m, y.norm_squared());
        }
        assert!(t.std_errors.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn additive_noise_moments_track_one_plus_kh() {
        let sys = scalar_system(|_| 0.0, |_, _| 0.0, |_, _| 1.0);
        let seg = InitialSegment::constant(1.0, v(1.0));
        let g = grid();
        let t = estimate_second_moment(&sys, &seg, &g, &tamed(), 17, 4000).unwrap();
        for (k, (m, se)) in t.moments.iter().zip(&t.std_errors).enumerate() {
            let exact = 1.0 + k as f64 * g.h();
            assert!((m - exact).abs() <= 4.0 * se, "k = {k}: {m} vs {exact} (se {se})");
        }
    }

    #[test]
    fn estimate_needs_two_paths() {
        let sys = scalar_system(|_| 0.0, |_, _| 0.0, |_, _| 0.0);
        let seg = InitialSegment::constant(1.0, v(1.0));
        assert!(estimate_second_moment(&sys, &seg, &grid(), &tamed(), 1, 1).is_err());
    }

    #[test]
    fn divergence_truncates_trajectory() {
        let sys = scalar_system(|_| 0.0, |x, _| -x * x * x, |_, _| 0.0);
        let seg = InitialSegment::constant(1.0, v(10.0));
        let t = estimate_second_moment(&sys, &seg, &grid(), &SchemeConfig::classic(), 1, 4).unwrap();
        assert_eq!(t.first_divergence, Some(6));
        assert_eq!(t.divergence_count, 4);
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn ensemble_is_independent_of_worker_count() {
        let sys = scalar_system(|y| 0.1 * y, |x, y| -2.0 * x + 0.25 * y, |_, y| 0.25 * y);
        let seg = InitialSegment::constant(1.0, v(1.0));
        let g = grid();
        let one = with_workers(1, || estimate_second_moment(&sys, &seg, &g, &tamed(), 5, 64)).unwrap().unwrap();
        let four = with_workers(4, || estimate_second_moment(&sys, &seg, &g, &tamed(), 5, 64)).unwrap().unwrap();
        assert_eq!(one, four);
    }

    fn synthetic(f: impl Fn(f64) -> f64) -> MomentTrajectory {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let moments = times.iter().map(|t| f(*t)).collect();
        MomentTrajectory::from_moments(times, moments)
    }

    #[test]
    fn ms_exponent_of_exact_exponential() {
        let est = estimate_ms_exponent(&synthetic(|t| (-2.0 * t).exp()), 0.5, &Bootstrap::default()).unwrap();
        assert!((est.slope + 2.0).abs() < 1e-9);
        assert_eq!(est.window_start, 50);
        let est = estimate_ms_exponent(&synthetic(|_| 3.0), 0.5, &Bootstrap::default()).unwrap();
        assert!(est.slope.abs() < 1e-12);
    }

    #[test]
    fn ms_exponent_of_linear_growth_matches_regression_oracle() {
        let est = estimate_ms_exponent(&synthetic(|t| 1.0 + t), 0.5, &Bootstrap::default()).unwrap();
        // independent closed-form regression of ln(1 + t) on t for t = 5.0, 5.1, ..., 10.0
        let ts: Vec<f64> = (50..=100).map(|k| k as f64 / 10.0).collect();
        let n = ts.len() as f64;
        let (sx, sy) = (ts.iter().sum::<f64>(), ts.iter().map(|t| (1.0 + t).ln()).sum::<f64>());
        let sxy = ts.iter().map(|t| t * (1.0 + t).ln()).sum::<f64>();
        let sxx = ts.iter().map(|t| t * t).sum::<f64>();
        let oracle = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(oracle > 0.0);
        assert!((est.slope - oracle).abs() < 1e-10, "{} vs {oracle}", est.slope);
    }

    #[test]
    fn ms_exponent_errors() {
        let t = synthetic(|t| if t > 8.0 { 0.0 } else { 1.0 });
        assert!(matches!(estimate_ms_exponent(&t, 0.5, &Bootstrap::default()), Err(Error::CannotFit(_))));
        let short = MomentTrajectory::from_moments(vec![0.0, 0.1, 0.2], vec![1.0; 3]);
        assert!(matches!(estimate_ms_exponent(&short, 1.0, &Bootstrap::default()), Err(Error::CannotFit(_))));
        assert!(estimate_ms_exponent(&synthetic(|_| 1.0), 0.0, &Bootstrap::default()).is_err());
    }

    #[test]
    fn eval_f_examples() {
        let f1 = eval_f(1.0, 0.3, 1.7, 1.0, 0.1, 0.05, 0.01);
        assert!((f1 + 0.007).abs() < 1e-17);
        let f2 = eval_f(2.0, 0.0, 1.0, 1.0, 0.1, 0.05, 0.01);
        assert!((f2 - 2.995).abs() < 1e-14);
        assert!(eval_f(1e6, 0.1, 1.0, 1.0, 0.1, 0.05, 0.01) > 1e11);
    }

    fn inputs(h: f64) -> CertificateInputs {
        CertificateInputs {
            kappa: 0.0,
            tau: 1.0,
            lambda2: 1.0,
            lambda3: 0.1,
            k_tilde: 0.05,
            h,
        }
    }

    #[test]
    fn decay_base_root() {
        let inp = inputs(0.01);
        let cert = find_decay_base(&inp).unwrap();
        assert!((cert.f_at_one + 0.007).abs() < 1e-17);
        assert!(inp.f(cert.c_bar).abs() <= 1e-10);
        assert!(cert.c_bar > 1.0 && cert.c > 1.0 && cert.c < cert.c_bar);
        assert_eq!(cert.as_rate, cert.ms_rate / 2.0);
        assert!(cert.ms_rate < 0.0);
        assert_eq!(sign_changes_on_grid(&inp, 1.0, 2.0 * cert.c_bar, 10_000), 1);
        // closed form for tau = 1, kappa = 0: x^2 - 1 + (-0.9 + 0.2 x) 0.01 = x^2 + 0.002 x - 1.009
        let exact = (-0.002 + (0.002f64 * 0.002 + 4.0 * 1.009).sqrt()) / 2.0;
        assert!((cert.c_bar - exact).abs() < 1e-11);
    }

    #[test]
    fn decay_base_rejects_equal_lambdas() {
        let inp = CertificateInputs {
            lambda3: 1.0,
            ..inputs(0.01)
        };
        match find_decay_base(&inp) {
            Err(Error::HypothesisViolated { f_at_one, .. }) => assert!((f_at_one - 4.0 * 0.05 * 0.01).abs() < 1e-17),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decay_base_shrinks_with_h() {
        let roots: Vec<f64> = [0.1, 0.01, 0.001].iter().map(|h| find_decay_base(&inputs(*h)).unwrap().c_bar).collect();
        assert!(roots[0] > roots[1] && roots[1] > roots[2] && roots[2] > 1.0, "{roots:?}");
    }

    #[test]
    fn weighted_bound_examples() {
        let cert = StabilityCertificate {
            c: 1.5,
            h: 0.1,
            ..find_decay_base(&inputs(0.1)).unwrap()
        };
        let t = synthetic(|t| 1.5f64.powf(-t));
        let wb = verify_weighted_bound(&t, &cert).unwrap();
        assert!(wb.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
        assert!((wb.empirical_k_bar - 1.0).abs() < 1e-12);
        assert!(!wb.positive_trend);

        let cert_e = StabilityCertificate {
            c: std::f64::consts::E,
            ..cert
        };
        let wb = verify_weighted_bound(&synthetic(|t| (-2.0 * t).exp()), &cert_e).unwrap();
        assert!((wb.weights[30] - (-3.0f64).exp()).abs() < 1e-12);
        assert_eq!(wb.empirical_k_bar, wb.weights[0]);
        assert!(!wb.positive_trend);

        let wb = verify_weighted_bound(&synthetic(f64::exp), &cert).unwrap();
        assert!(wb.positive_trend);
    }

    #[test]
    fn weighted_bound_with_unit_base_is_raw_supremum() {
        let cert = StabilityCertificate {
            c: 1.0,
            ..find_decay_base(&inputs(0.1)).unwrap()
        };
        let t = synthetic(|t| 2.0 + (3.0 * t).sin());
        let wb = verify_weighted_bound(&t, &cert).unwrap();
        let sup = t.moments.iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(wb.empirical_k_bar, sup);
    }

    #[test]
    fn weighted_bound_rejects_mismatched_step() {
        let cert = find_decay_base(&inputs(0.01)).unwrap();
        assert!(verify_weighted_bound(&synthetic(|_| 1.0), &cert).is_err());
    }

    #[test]
    fn as_exponent_examples() {
        let h = 0.1;
        let sq: Vec<f64> = (0..=200).map(|k| (-(k as f64) * h).exp().powi(2)).collect();
        assert!((as_exponent_from_sq_norms(&sq, h, 0.5).unwrap() + 1.0).abs() < 1e-12);

        let c: f64 = 1.7;
        let sq: Vec<f64> = (0..=200).map(|k| c.powf(-(k as f64) * h / 2.0).powi(2)).collect();
        assert!((as_exponent_from_sq_norms(&sq, h, 0.5).unwrap() + c.ln() / 2.0).abs() < 1e-12);

        let sq = vec![4.0; 201];
        let est = as_exponent_from_sq_norms(&sq, h, 0.5).unwrap();
        assert!((est - 2f64.ln() / (100.0 * h)).abs() < 1e-12);
        let longer = as_exponent_from_sq_norms(&vec![4.0; 2001], h, 0.5).unwrap();
        assert!(longer < est && longer > 0.0);

        let mut sq = vec![1.0; 11];
        sq[8] = 0.0;
        assert_eq!(as_exponent_from_sq_norms(&sq, h, 0.5).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn recursion_with_zero_segment_is_zero() {
        let g = grid();
        let cert = find_decay_base(&CertificateInputs { kappa: 0.1, ..inputs(g.h()) }).unwrap();
        let sys = scalar_system(|y| 0.1 * y, |x, _| -x, |_, _| 0.0);
        let seg = SegmentMoments::estimate(&sys, &InitialSegment::constant(1.0, v(0.0)), &g, 0, 1).unwrap();
        let d = recursion_diagnostics(&cert, &seg, &g).unwrap();
        assert_eq!(d.c1, 0.0);
        assert!(d.weighted_bound.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn recursion_converges_geometrically_for_small_c2() {
        // c2 < 1 needs C < 1, outside the certificate's range; the formulas
        // are exercised directly.
        let g = TimeGrid::new(0.1, 40.0, 1).unwrap();
        let mut cert = find_decay_base(&inputs(0.1)).unwrap();
        cert.c = 0.5;
        cert.kappa = 0.0;
        let seg = SegmentMoments { z0_sq: 1.0, xi_sq: vec![2.0, 1.0] };
        let d = recursion_diagnostics(&cert, &seg, &g).unwrap();
        assert!(d.c2 < 1.0);
        let limit = d.c1 / (1.0 - d.c2);
        assert!((d.weighted_bound.last().unwrap() - limit).abs() < 1e-9 * limit);
    }

    #[test]
    fn recursion_constants_by_hand() {
        let g = TimeGrid::new(1.0, 2.0, 2).unwrap();
        let cert = find_decay_base(&CertificateInputs { kappa: 0.1, ..inputs(0.5) }).unwrap();
        let seg = SegmentMoments { z0_sq: 0.81, xi_sq: vec![1.0, 1.0, 1.0] };
        let d = recursion_diagnostics(&cert, &seg, &g).unwrap();
        let (c, kk, h) = (cert.c, 1.01, 0.5);
        let lam = 0.1 + 2.0 * 0.05;
        let term = |i: f64| (c.powf((i + 1.0) * h) - c.powf(i * h)) * kk + c.powf((i + 1.0) * h) * lam * h;
        let c1 = kk * (0.81 + c * (term(-2.0) + term(-1.0)));
        assert!((d.c1 - c1).abs() < 1e-14);
        assert!((d.c2 - kk * c).abs() < 1e-15);
        assert!(d.c2 > 1.0);
        // j = 1: q = 0, xi index 1; j = 4: q = 2, xi index 0
        assert!((d.weighted_bound[0] - (c1 + d.c2)).abs() < 1e-13);
        let b4 = c1 * (1.0 + d.c2 + d.c2 * d.c2) + d.c2.powi(3);
        assert!((d.weighted_bound[3] - b4).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn root_back_substitution(kappa in 0.0f64..0.99, tau in 0.1f64..5.0, l3 in 0.01f64..2.0,
                                  gap in 0.05f64..3.0, k_tilde in 0.0f64..0.5, h in 1e-3f64..0.99) {
            let inp = CertificateInputs { kappa, tau, lambda2: l3 + 4.0 * k_tilde + gap, lambda3: l3, k_tilde, h };
            let cert = find_decay_base(&inp).unwrap();
            prop_assert!(inp.f(cert.c_bar).abs() <= 1e-10);
            prop_assert!(1.0 < cert.c && cert.c < cert.c_bar);
            prop_assert_eq!(cert.as_rate, cert.ms_rate / 2.0);
        }

        #[test]
        fn ms_exponent_is_scale_invariant(scale in 1e-6f64..1e6, rate in -3.0f64..3.0) {
            let base = synthetic(|t| (rate * t).exp() * (1.0 + 0.1 * (5.0 * t).sin()));
            let scaled = MomentTrajectory::from_moments(base.times.clone(), base.moments.iter().map(|m| m * scale).collect());
            let a = estimate_ms_exponent(&base, 0.5, &Bootstrap::default()).unwrap().slope;
            let b = estimate_ms_exponent(&scaled, 0.5, &Bootstrap::default()).unwrap().slope;
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
