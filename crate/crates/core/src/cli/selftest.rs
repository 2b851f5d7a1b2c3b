//! Runtime property suites behind `nsdde selftest`.
//!
//! Every suite is seeded, so repeated invocations print identical reports.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::builtin::BuiltinSystem;
use crate::grid::{BrownianDriver, DelayBuffer, TimeGrid};
use crate::model::InitialSegment;
use crate::scheme::{simulate_path, split_square_bound, tame_drift, PathState, SchemeConfig};
use crate::stability::{
    estimate_second_moment, find_decay_base, sign_changes_on_grid, with_workers, CertificateInputs,
};
use crate::stats::mean_std;
use crate::{Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestOptions {
    /// Taming exponent under test.
    pub alpha: f64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions { alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            let verdict = if s.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {}: {}", s.name, s.detail)?;
        }
        let passed = self.suites.iter().filter(|s| s.passed).count();
        writeln!(f, "{passed}/{} suites passed", self.suites.len())
    }
}

fn suite(name: &'static str, body: impl FnOnce() -> Result<std::result::Result<String, String>>) -> SuiteResult {
    match body() {
        Ok(Ok(detail)) => SuiteResult {
            name,
            passed: true,
            detail,
        },
        Ok(Err(detail)) => SuiteResult {
            name,
            passed: false,
            detail,
        },
        Err(e) => SuiteResult {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn taming(alpha: f64) -> Result<std::result::Result<String, String>> {
    SchemeConfig::tamed(alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = 10_000;
    for _ in 0..draws {
        let b = Vector::from_element(1, rng.random_range(-1e9..1e9));
        let h: f64 = rng.random_range(1e-6..1.0);
        let out = tame_drift(&b, h, alpha);
        let cap = b.norm().min(h.powf(-alpha));
        let step_cap = h.powf(1.0 - alpha) * (1.0 + 4.0 * f64::EPSILON);
        if out.norm() > cap || (out * h).norm() > step_cap {
            return Ok(Err(format!("bound violated at b = {}, h = {h}", b[0])));
        }
    }
    Ok(Ok(format!("{draws} draws within min(|b|, h^-alpha) at alpha = {alpha}")))
}

fn elementary_inequality() -> Result<std::result::Result<String, String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 10_000;
    for _ in 0..draws {
        let a = Vector::from_fn(3, |_, _| rng.random_range(-100.0..100.0));
        let b = Vector::from_fn(3, |_, _| rng.random_range(-100.0..100.0));
        let eps: f64 = rng.random_range(1e-3..1e3);
        if (&a + &b).norm_squared() > split_square_bound(&a, &b, eps) * (1.0 + 1e-12) {
            return Ok(Err(format!("violated at eps = {eps}")));
        }
    }
    Ok(Ok(format!("{draws} draws satisfy |a+b|^2 <= (1+eps)(|a|^2+|b|^2/eps)")))
}

fn buffer_oracle() -> Result<std::result::Result<String, String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in 1..=8usize {
        let init: Vec<Vector> = (0..=m).map(|i| Vector::from_element(1, i as f64)).collect();
        let mut history = init.clone();
        let mut buf = DelayBuffer::from_values(init)?;
        for _ in 0..50 {
            let v = Vector::from_element(1, rng.random::<f64>());
            buf.push(v.clone());
            history.push(v);
            for lag in 0..=m {
                if buf.get(lag)? != &history[history.len() - 1 - lag] {
                    return Ok(Err(format!("lag {lag} mismatch for m = {m}")));
                }
            }
        }
    }
    Ok(Ok("buffer lags match the full history for m = 1..8".into()))
}

fn martingale_means() -> Result<std::result::Result<String, String>> {
    let sys = BuiltinSystem::linear(0.1, 2.0, 0.25, 0.25)?;
    let grid = TimeGrid::new(1.0, 2.0, 10)?;
    let values: Vec<Vector> = (0..=10).map(|i| Vector::from_element(1, 1.0 + 0.1 * i as f64)).collect();
    let start = PathState::new(&sys, DelayBuffer::from_values(values)?)?;
    let config = SchemeConfig::tamed(0.5)?;
    let steps = 20_000;
    let mut terms = [Vec::with_capacity(steps), Vec::with_capacity(steps), Vec::with_capacity(steps)];
    for i in 0..steps {
        let mut state = start.clone();
        let dw = BrownianDriver::new(4, i as u64, 1).increment(0, grid.h());
        let d = state.advance(&sys, grid.h(), &config, &dw)?;
        terms[0].push(d.m1);
        terms[1].push(d.m2);
        terms[2].push(d.m3);
    }
    let mut detail = Vec::new();
    for (name, t) in ["M1", "M2", "M3"].iter().zip(&terms) {
        let (mean, sd) = mean_std(t.iter().copied());
        let se = sd / (steps as f64).sqrt();
        if mean.abs() > 4.0 * se {
            return Ok(Err(format!("{name} mean {mean:.3e} exceeds 4 standard errors ({se:.3e})")));
        }
        detail.push(format!("{name} {:.2} se", mean / se));
    }
    Ok(Ok(format!("{steps} single steps: {}", detail.join(", "))))
}

fn decay_base() -> Result<std::result::Result<String, String>> {
    let inputs = CertificateInputs {
        kappa: 0.1,
        tau: 1.0,
        lambda2: 1.0,
        lambda3: 0.1,
        k_tilde: 0.05,
        h: 0.01,
    };
    let cert = find_decay_base(&inputs)?;
    let residual = inputs.f(cert.c_bar);
    if residual.abs() > 1e-10 {
        return Ok(Err(format!("|f(C_bar)| = {residual:e}")));
    }
    let changes = sign_changes_on_grid(&inputs, 1.0, 2.0 * cert.c_bar, 10_000);
    if changes != 1 {
        return Ok(Err(format!("{changes} sign changes on [1, 2 C_bar]")));
    }
    Ok(Ok(format!("C_bar = {:.12}, single sign change", cert.c_bar)))
}

fn determinism() -> Result<std::result::Result<String, String>> {
    let sys = BuiltinSystem::linear(0.1, 2.0, 0.25, 0.25)?;
    let grid = TimeGrid::new(1.0, 5.0, 10)?;
    let segment = InitialSegment::constant(1.0, Vector::from_element(1, 1.0));
    let config = SchemeConfig::tamed(0.5)?;
    let a = simulate_path(&sys, &segment, &grid, &config, &mut BrownianDriver::new(7, 3, 1))?;
    let b = simulate_path(&sys, &segment, &grid, &config, &mut BrownianDriver::new(7, 3, 1))?;
    if a != b {
        return Ok(Err("repeated path differs".into()));
    }
    let one = with_workers(1, || estimate_second_moment(&sys, &segment, &grid, &config, 7, 64))??;
    let three = with_workers(3, || estimate_second_moment(&sys, &segment, &grid, &config, 7, 64))??;
    if one != three {
        return Ok(Err("ensemble depends on the worker count".into()));
    }
    Ok(Ok("paths and ensembles are bit-identical across reruns and worker counts".into()))
}

/// Runs every suite and collects the verdicts; failures are report entries.
pub fn run_selftest(options: &SelftestOptions) -> SelftestReport {
    SelftestReport {
        suites: vec![
            suite("taming-bound", || taming(options.alpha)),
            suite("elementary-inequality", elementary_inequality),
            suite("delay-buffer", buffer_oracle),
            suite("martingale-means", martingale_means),
            suite("decay-base-root", decay_base),
            suite("determinism", determinism),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_selftest_passes_and_is_repeatable() {
        let a = run_selftest(&SelftestOptions::default());
        assert!(a.all_passed(), "{a}");
        let b = run_selftest(&SelftestOptions::default());
        assert_eq!(a.to_string(), b.to_string());
    }

    #[test]
    fn corrupted_alpha_fails_taming_suite() {
        let r = run_selftest(&SelftestOptions { alpha: 0.7 });
        let taming = r.suites.iter().find(|s| s.name == "taming-bound").unwrap();
        assert!(!taming.passed);
        assert!(!r.all_passed());
    }
}
