//! NSDDE systems, initial segments and sampling-based falsifiers for the
//! standing assumptions on the coefficients.
//!
//! The checkers cannot prove an assumption, since the constants quantify over
//! all of `R^n`. They evaluate the inequality on a finite sample, report the
//! largest observed ratio (a lower bound on the true constant) and the point
//! that achieved it.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Matrix, Result, Vector};

/// Coefficients `(D, b, sigma)` of a neutral stochastic delay equation.
///
/// `D(0) = 0` is required. The checkers in this module can be used to
/// falsify the remaining assumptions on a sample.
pub trait NeutralSystem: Send + Sync {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;
    /// Dimension of the driving Wiener process.
    fn noise_dim(&self) -> usize;
    /// Neutral term `D(y)`.
    fn neutral(&self, y: &Vector) -> Vector;
    /// Drift `b(x, y)`, with `y` the delayed state.
    fn drift(&self, x: &Vector, y: &Vector) -> Vector;
    /// Diffusion `sigma(x, y)`, an `n x noise_dim` matrix.
    fn diffusion(&self, x: &Vector, y: &Vector) -> Matrix;
}

type NeutralFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type DriftFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;
type DiffusionFn = dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync;

/// A [`NeutralSystem`] built from closures.
#[derive(Clone)]
pub struct FnSystem {
    state_dim: usize,
    noise_dim: usize,
    neutral: Arc<NeutralFn>,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
}

impl FnSystem {
    /// Builds a system and checks it at the origin: `D(0)` must be exactly
    /// zero and every coefficient must be finite with the declared shape.
    pub fn new(
        state_dim: usize,
        noise_dim: usize,
        neutral: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        drift: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
        diffusion: impl Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static,
    ) -> Result<Self> {
        if state_dim == 0 || noise_dim == 0 {
            return Err(Error::invalid("state_dim and noise_dim must be positive"));
        }
        let system = FnSystem {
            state_dim,
            noise_dim,
            neutral: Arc::new(neutral),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        };
        validate_system(&system)?;
        Ok(system)
    }
}

impl fmt::Debug for FnSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSystem")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .finish_non_exhaustive()
    }
}

impl NeutralSystem for FnSystem {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn neutral(&self, y: &Vector) -> Vector {
        (self.neutral)(y)
    }
    fn drift(&self, x: &Vector, y: &Vector) -> Vector {
        (self.drift)(x, y)
    }
    fn diffusion(&self, x: &Vector, y: &Vector) -> Matrix {
        (self.diffusion)(x, y)
    }
}

/// Checks the structural invariants of a system at the origin.
pub fn validate_system(system: &dyn NeutralSystem) -> Result<()> {
    let n = system.state_dim();
    let zero = Vector::zeros(n);
    let d0 = system.neutral(&zero);
    if d0.len() != n {
        return Err(Error::invalid(format!("D returned dimension {}, expected {n}", d0.len())));
    }
    if d0.iter().any(|v| *v != 0.0) {
        return Err(Error::invalid(format!("D(0) must be exactly 0, got |D(0)| = {}", d0.norm())));
    }
    let b0 = system.drift(&zero, &zero);
    if b0.len() != n || b0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("b(0, 0) must be a finite n-vector"));
    }
    let s0 = system.diffusion(&zero, &zero);
    if s0.shape() != (n, system.noise_dim()) || s0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma(0, 0) must be a finite {n} x {} matrix, got {:?}",
            system.noise_dim(),
            s0.shape()
        )));
    }
    Ok(())
}

type SegmentFn = dyn Fn(f64) -> Vector + Send + Sync;
type SegmentSampler = dyn Fn(f64, &mut ChaCha8Rng) -> Vector + Send + Sync;

#[derive(Clone)]
enum SegmentSource {
    /// Deterministic segment defined on `[lower, 0]`.
    Function { lower: f64, f: Arc<SegmentFn> },
    /// Random segment; the sampler is called at each grid offset in
    /// increasing order with the path's segment generator.
    Random(Arc<SegmentSampler>),
}

/// Initial data `xi` on `[-tau, 0]`.
#[derive(Clone)]
pub struct InitialSegment {
    tau: f64,
    source: SegmentSource,
}

impl InitialSegment {
    /// `xi(theta) = value` for every `theta`.
    pub fn constant(tau: f64, value: Vector) -> Self {
        Self::from_fn(tau, move |_| value.clone())
    }

    pub fn from_fn(tau: f64, f: impl Fn(f64) -> Vector + Send + Sync + 'static) -> Self {
        Self::from_fn_on(tau, -tau, f)
    }

    /// Segment only defined on `[lower, 0]`; building a delay buffer from it
    /// fails when `lower > -tau`.
    pub fn from_fn_on(tau: f64, lower: f64, f: impl Fn(f64) -> Vector + Send + Sync + 'static) -> Self {
        InitialSegment {
            tau,
            source: SegmentSource::Function {
                lower,
                f: Arc::new(f),
            },
        }
    }

    pub fn random(
        tau: f64,
        sampler: impl Fn(f64, &mut ChaCha8Rng) -> Vector + Send + Sync + 'static,
    ) -> Self {
        InitialSegment {
            tau,
            source: SegmentSource::Random(Arc::new(sampler)),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_random(&self) -> bool {
        matches!(self.source, SegmentSource::Random(_))
    }

    /// Values `xi(k h)` for `k = -m, ..., 0`, in that order.
    ///
    /// `rng` is only consulted for random segments.
    pub fn values_on_grid(&self, m: usize, h: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vector>> {
        let offsets = (0..=m).map(|i| -((m - i) as f64) * h);
        let values: Vec<Vector> = match &self.source {
            SegmentSource::Function { lower, f } => {
                let slack = 1e-12 * self.tau.abs().max(1.0);
                let mut out = Vec::with_capacity(m + 1);
                for theta in offsets {
                    if theta < lower - slack {
                        return Err(Error::invalid(format!(
                            "initial segment is defined on [{lower}, 0] but the grid needs theta = {theta}"
                        )));
                    }
                    out.push(f(theta));
                }
                out
            }
            SegmentSource::Random(sampler) => offsets.map(|theta| sampler(theta, rng)).collect(),
        };
        if let Some(v) = values.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("initial segment produced a non-finite value {v:?}")));
        }
        Ok(values)
    }
}

impl fmt::Debug for InitialSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialSegment")
            .field("tau", &self.tau)
            .field("random", &self.is_random())
            .finish()
    }
}

/// Constants of the stability condition on `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl StabilityParams {
    /// Requires `lambda1 > 2` and `lambda2 > lambda3 > 0`.
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        if !(lambda1 > 2.0) {
            return Err(Error::invalid(format!("lambda1 must exceed 2, got {lambda1}")));
        }
        if !(lambda2 > lambda3 && lambda3 > 0.0) {
            return Err(Error::invalid(format!(
                "lambda2 > lambda3 > 0 is required, got lambda2 = {lambda2}, lambda3 = {lambda3}"
            )));
        }
        Ok(StabilityParams {
            lambda1,
            lambda2,
            lambda3,
        })
    }

    /// `-lambda1 - lambda2 |x|^2 + lambda3 |y|^2`
    pub fn rhs(&self, x: &Vector, y: &Vector) -> f64 {
        -self.lambda1 - self.lambda2 * x.norm_squared() + self.lambda3 * y.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionId {
    /// Weak coercivity with constant `K_tilde`.
    A1,
    /// Contraction of the neutral term.
    A2,
    /// Local one-sided Lipschitz bound on a ball.
    A3,
    /// Stability condition on `sigma`.
    SigmaCond,
}

impl fmt::Display for AssumptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AssumptionId::A1 => "A1",
            AssumptionId::A2 => "A2",
            AssumptionId::A3 => "A3",
            AssumptionId::SigmaCond => "SigmaCond",
        };
        f.write_str(s)
    }
}

/// Outcome of one sampling-based assumption check.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub assumption: AssumptionId,
    pub holds_on_sample: bool,
    /// Largest observed ratio over the sample. For `SigmaCond` this is the
    /// largest excess `|sigma|^2 - bound`, so non-positive means it holds.
    pub estimated_constant: f64,
    /// Input achieving `estimated_constant`, as `[x, y]` or `[x, y, x_bar, y_bar]`.
    pub worst_point: Option<Vec<Vector>>,
    pub sample_count: usize,
    /// Indices of sampled inputs violating the inequality.
    pub violations: Vec<usize>,
    /// `K_R` estimate (sup of `|b|` on the sample) for A3.
    pub drift_bound: Option<f64>,
    /// For `SigmaCond`: indices where the right-hand side is negative, so no
    /// `sigma` can satisfy the inequality there.
    pub negative_rhs: Vec<usize>,
}

impl AssumptionReport {
    fn new(assumption: AssumptionId, sample_count: usize) -> Self {
        AssumptionReport {
            assumption,
            holds_on_sample: true,
            estimated_constant: f64::NEG_INFINITY,
            worst_point: None,
            sample_count,
            violations: Vec::new(),
            drift_bound: None,
            negative_rhs: Vec::new(),
        }
    }

    fn observe(&mut self, value: f64, point: impl FnOnce() -> Vec<Vector>) {
        if value > self.estimated_constant || value.is_nan() {
            self.estimated_constant = value;
            self.worst_point = Some(point());
        }
    }

    fn finish(mut self) -> Self {
        if self.estimated_constant == f64::NEG_INFINITY {
            self.estimated_constant = 0.0;
        }
        self
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}]", self.assumption)?;
        writeln!(f, "holds_on_sample = {}", self.holds_on_sample)?;
        writeln!(f, "estimated_constant = {:.16e}", self.estimated_constant)?;
        writeln!(f, "sample_count = {}", self.sample_count)?;
        writeln!(f, "violations = {}", self.violations.len())?;
        if let Some(kr) = self.drift_bound {
            writeln!(f, "drift_bound = {kr:.16e}")?;
        }
        if self.assumption == AssumptionId::SigmaCond {
            writeln!(f, "negative_rhs = {}", self.negative_rhs.len())?;
        }
        if let Some(p) = &self.worst_point {
            let parts: Vec<String> = p
                .iter()
                .map(|v| {
                    let c: Vec<String> = v.iter().map(|c| format!("{c:.6e}")).collect();
                    format!("({})", c.join(", "))
                })
                .collect();
            writeln!(f, "worst_point = {}", parts.join(" "))?;
        }
        Ok(())
    }
}

/// Default tolerance for equality-like checks such as `D(0) = 0`.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Sampling domain for the checkers: the origin, points on the coordinate
/// axes and uniform draws from the ball of the given radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDomain {
    pub radius: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SampleDomain {
    fn default() -> Self {
        SampleDomain {
            radius: 10.0,
            count: 10_000,
            seed: 0,
        }
    }
}

impl SampleDomain {
    fn rng(&self, tag: u64) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tag);
        rng
    }

    fn structured_points(&self, dim: usize) -> Vec<Vector> {
        let mut pts = vec![Vector::zeros(dim)];
        for i in 0..dim {
            for scale in [1.0, -1.0, 0.5 * self.radius, -0.5 * self.radius, self.radius, -self.radius] {
                let mut e = Vector::zeros(dim);
                e[i] = scale;
                pts.push(e);
            }
        }
        pts
    }

    fn ball_point(&self, dim: usize, rng: &mut ChaCha8Rng) -> Vector {
        loop {
            let dir = Vector::from_fn(dim, |_, _| StandardNormal.sample(rng));
            let norm = dir.norm();
            if norm > 0.0 {
                let u: f64 = rng.random();
                return dir * (self.radius * u.powf(1.0 / dim as f64) / norm);
            }
        }
    }

    /// `count` pairs `(x, y)`: every combination of structured points first,
    /// then uniform draws from the ball.
    pub fn pairs(&self, dim: usize) -> Vec<(Vector, Vector)> {
        let structured = self.structured_points(dim);
        let mut out = Vec::with_capacity(self.count);
        'outer: for x in &structured {
            for y in &structured {
                if out.len() == self.count {
                    break 'outer;
                }
                out.push((x.clone(), y.clone()));
            }
        }
        let mut rng = self.rng(1);
        while out.len() < self.count {
            let x = self.ball_point(dim, &mut rng);
            let y = self.ball_point(dim, &mut rng);
            out.push((x, y));
        }
        out
    }

    /// `count` quadruples `(x, y, x_bar, y_bar)` inside the ball.
    pub fn quads(&self, dim: usize) -> Vec<(Vector, Vector, Vector, Vector)> {
        let structured = self.structured_points(dim);
        let mut rng = self.rng(2);
        let mut out = Vec::with_capacity(self.count);
        for (i, x) in structured.iter().enumerate() {
            if out.len() == self.count {
                break;
            }
            let partner = &structured[(i + 1) % structured.len()];
            out.push((x.clone(), partner.clone(), partner.clone(), x.clone()));
        }
        while out.len() < self.count {
            let x = self.ball_point(dim, &mut rng);
            let y = self.ball_point(dim, &mut rng);
            let xb = self.ball_point(dim, &mut rng);
            let yb = self.ball_point(dim, &mut rng);
            out.push((x, y, xb, yb));
        }
        out
    }
}

/// Falsifier for the contraction assumption on `D`.
///
/// `kappa_hat` is the largest `|D(x) - D(x_bar)| / |x - x_bar|` over the
/// sample (pairs with `x = x_bar` are skipped). The assumption holds on the
/// sample iff `kappa_hat < 1 - tolerance` and `|D(0)| <= tolerance`.
pub fn check_contraction(
    neutral: &dyn Fn(&Vector) -> Vector,
    sample_pairs: &[(Vector, Vector)],
    tolerance: f64,
) -> Result<AssumptionReport> {
    if sample_pairs.is_empty() {
        return Err(Error::invalid("check_contraction needs at least one sample pair"));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be nonnegative, got {tolerance}")));
    }
    let mut report = AssumptionReport::new(AssumptionId::A2, sample_pairs.len());
    for (i, (x, xb)) in sample_pairs.iter().enumerate() {
        let dist = (x - xb).norm();
        if dist == 0.0 {
            continue;
        }
        let ratio = (neutral(x) - neutral(xb)).norm() / dist;
        if !(ratio < 1.0 - tolerance) {
            report.violations.push(i);
        }
        report.observe(ratio, || vec![x.clone(), xb.clone()]);
    }
    let dim = sample_pairs[0].0.len();
    let d0 = neutral(&Vector::zeros(dim)).norm();
    let mut report = report.finish();
    report.holds_on_sample = report.estimated_constant < 1.0 - tolerance && d0 <= tolerance;
    Ok(report)
}

fn coercivity_lhs(system: &dyn NeutralSystem, x: &Vector, y: &Vector) -> f64 {
    let inner = (x - system.neutral(y)).dot(&system.drift(x, y));
    inner.max(system.diffusion(x, y).norm_squared())
}

/// Falsifier for weak coercivity:
/// `<x - D(y), b(x, y)> v |sigma(x, y)|^2 <= K_tilde (1 + |x|^2 + |y|^2)`.
pub fn check_coercivity(
    system: &dyn NeutralSystem,
    k_tilde: f64,
    sample_pairs: &[(Vector, Vector)],
) -> Result<AssumptionReport> {
    if !(k_tilde > 0.0) {
        return Err(Error::invalid(format!("K_tilde must be positive, got {k_tilde}")));
    }
    let mut report = AssumptionReport::new(AssumptionId::A1, sample_pairs.len());
    for (i, (x, y)) in sample_pairs.iter().enumerate() {
        let lhs = coercivity_lhs(system, x, y);
        let weight = 1.0 + x.norm_squared() + y.norm_squared();
        if !(lhs <= k_tilde * weight) {
            report.violations.push(i);
        }
        report.observe(lhs / weight, || vec![x.clone(), y.clone()]);
    }
    let mut report = report.finish();
    report.holds_on_sample = report.violations.is_empty();
    Ok(report)
}

/// Estimates the local one-sided Lipschitz constant `K_tilde_R` and the
/// drift bound `K_R` on the ball of the given radius.
///
/// The assumption only asks for finite constants, so it holds on the sample
/// iff every evaluated ratio and drift norm is finite.
pub fn check_local_monotonicity(
    system: &dyn NeutralSystem,
    radius: f64,
    sample_quads: &[(Vector, Vector, Vector, Vector)],
) -> Result<AssumptionReport> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    let slack = radius * 1e-12;
    for (i, (x, y, xb, yb)) in sample_quads.iter().enumerate() {
        let max_norm = x.norm().max(y.norm()).max(xb.norm()).max(yb.norm());
        if max_norm > radius + slack {
            return Err(Error::invalid(format!(
                "sample {i} has a point of norm {max_norm} outside the ball of radius {radius}"
            )));
        }
    }
    let mut report = AssumptionReport::new(AssumptionId::A3, sample_quads.len());
    let mut drift_bound: f64 = 0.0;
    for (i, (x, y, xb, yb)) in sample_quads.iter().enumerate() {
        let b = system.drift(x, y);
        let b_bar = system.drift(xb, yb);
        drift_bound = drift_bound.max(b.norm()).max(b_bar.norm());
        let denom = (x - xb).norm_squared() + (y - yb).norm_squared();
        if denom == 0.0 {
            continue;
        }
        let lhs_vec = x - system.neutral(y) - xb + system.neutral(yb);
        let inner = lhs_vec.dot(&(&b - &b_bar));
        let sig = (system.diffusion(x, y) - system.diffusion(xb, yb)).norm_squared();
        let ratio = inner.max(sig) / denom;
        if !ratio.is_finite() {
            report.violations.push(i);
        }
        report.observe(ratio, || vec![x.clone(), y.clone(), xb.clone(), yb.clone()]);
    }
    let mut report = report.finish();
    report.drift_bound = Some(drift_bound);
    report.holds_on_sample = report.violations.is_empty() && drift_bound.is_finite();
    Ok(report)
}

/// Which scaling of the stability condition on `sigma` to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaVariant {
    /// `|sigma|^2 <= (1/h)(-lambda1 - lambda2 |x|^2 + lambda3 |y|^2)`
    Statement,
    /// `|sigma|^2 <= h(-lambda1 - lambda2 |x|^2 + lambda3 |y|^2)`
    Proof,
}

impl SigmaVariant {
    pub fn factor(self, h: f64) -> f64 {
        match self {
            SigmaVariant::Statement => 1.0 / h,
            SigmaVariant::Proof => h,
        }
    }
}

impl fmt::Display for SigmaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaVariant::Statement => "statement",
            SigmaVariant::Proof => "proof",
        })
    }
}

/// Checks the stability condition on `sigma` in the requested scaling.
///
/// The origin pair `(0, 0)` is always probed in addition to the sample (it is
/// appended last), because the right-hand side equals `-lambda1 < 0` there.
pub fn check_sigma_condition(
    system: &dyn NeutralSystem,
    params: &StabilityParams,
    h: f64,
    variant: SigmaVariant,
    sample_pairs: &[(Vector, Vector)],
) -> Result<AssumptionReport> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::StepTooLarge { h });
    }
    let n = system.state_dim();
    let origin = (Vector::zeros(n), Vector::zeros(n));
    let factor = variant.factor(h);
    let mut report = AssumptionReport::new(AssumptionId::SigmaCond, sample_pairs.len() + 1);
    for (i, (x, y)) in sample_pairs.iter().chain(std::iter::once(&origin)).enumerate() {
        let rhs = params.rhs(x, y);
        if rhs < 0.0 {
            report.negative_rhs.push(i);
        }
        let excess = system.diffusion(x, y).norm_squared() - factor * rhs;
        if !(excess <= 0.0) {
            report.violations.push(i);
        }
        report.observe(excess, || vec![x.clone(), y.clone()]);
    }
    let mut report = report.finish();
    report.holds_on_sample = report.violations.is_empty();
    Ok(report)
}
