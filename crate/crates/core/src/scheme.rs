//! Tamed and classic Euler–Maruyama steppers for neutral delay equations.
//!
//! Both schemes advance the auxiliary process `Z_k = Y_k - D(Y_{k-m})`:
//!
//! ```text
//! Z_{k+1} = Z_k + drift(Y_k, Y_{k-m}) h + sigma(Y_k, Y_{k-m}) dw_k
//! Y_{k+1} = Z_{k+1} + D(Y_{k+1-m})
//! ```
//!
//! where the tamed scheme uses `b_h = b / (1 + h^alpha |b|)` as drift.

use std::fmt;

use crate::grid::{BrownianDriver, DelayBuffer, TimeGrid};
use crate::model::{InitialSegment, NeutralSystem};
use crate::{Error, Result, Vector};

/// A step producing `|Y| > DIVERGENCE_THRESHOLD` marks the path diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Tamed,
    Classic,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Tamed => "tamed",
            SchemeKind::Classic => "classic",
        })
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tamed" => Ok(SchemeKind::Tamed),
            "classic" => Ok(SchemeKind::Classic),
            other => Err(Error::invalid(format!(
                "scheme kind must be `tamed` or `classic`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    alpha: f64,
    kind: SchemeKind,
}

impl SchemeConfig {
    /// `alpha` must lie in `(0, 1/2]` for either kind.
    pub fn new(kind: SchemeKind, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 0.5) {
            return Err(Error::invalid(format!("alpha must lie in (0, 0.5], got {alpha}")));
        }
        Ok(SchemeConfig { alpha, kind })
    }

    pub fn tamed(alpha: f64) -> Result<Self> {
        Self::new(SchemeKind::Tamed, alpha)
    }

    pub fn classic() -> Self {
        SchemeConfig {
            alpha: 0.5,
            kind: SchemeKind::Classic,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    /// Drift actually used by the scheme for a raw drift value.
    pub fn effective_drift(&self, b: Vector, h: f64) -> Vector {
        match self.kind {
            SchemeKind::Tamed => tame_drift(&b, h, self.alpha),
            SchemeKind::Classic => b,
        }
    }
}

/// `b / (1 + h^alpha |b|)`.
///
/// The result points along `b` and its norm never exceeds
/// `min(|b|, h^-alpha)`.
pub fn tame_drift(b: &Vector, h: f64, alpha: f64) -> Vector {
    let scale = 1.0 + h.powf(alpha) * b.norm();
    b / scale
}

/// `(1 + eps)(|a|^2 + |b|^2 / eps)`, an upper bound for `|a + b|^2` for any
/// `eps > 0`.
pub fn split_square_bound(a: &Vector, b: &Vector, eps: f64) -> f64 {
    (1.0 + eps) * (a.norm_squared() + b.norm_squared() / eps)
}

/// The three martingale-difference terms of one step:
/// `M1 = 2<Z_k, sigma dw_k>`, `M2 = 2<drift h, sigma dw_k>` and
/// `M3 = |sigma|^2 (|dw_k|^2 - h)`, with coefficients evaluated at
/// `(Y_k, Y_{k-m})` and `|.|` the Hilbert–Schmidt norm for `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDecomposition {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

/// State of one path after `k` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    k: usize,
    y: Vector,
    buffer: DelayBuffer,
    z: Vector,
}

impl PathState {
    pub fn new(system: &dyn NeutralSystem, buffer: DelayBuffer) -> Result<Self> {
        let n = system.state_dim();
        if buffer.iter().any(|v| v.len() != n) {
            return Err(Error::invalid(format!("initial segment values must have dimension {n}")));
        }
        let y = buffer.get(0)?.clone();
        let z = &y - system.neutral(buffer.get(buffer.lag())?);
        Ok(PathState {
            k: buffer.head_index(),
            y,
            buffer,
            z,
        })
    }

    pub fn from_segment(
        system: &dyn NeutralSystem,
        segment: &InitialSegment,
        grid: &TimeGrid,
        driver: &BrownianDriver,
    ) -> Result<Self> {
        Self::new(system, DelayBuffer::from_segment(segment, grid, driver)?)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `Y_k`
    pub fn y(&self) -> &Vector {
        &self.y
    }

    /// `Z_k = Y_k - D(Y_{k-m})`
    pub fn z(&self) -> &Vector {
        &self.z
    }

    /// `Y_{k-m}`
    pub fn delayed(&self) -> &Vector {
        self.buffer
            .get(self.buffer.lag())
            .expect("the delay lag is always addressable")
    }

    pub fn buffer(&self) -> &DelayBuffer {
        &self.buffer
    }

    /// Advances to `k + 1` in place. On divergence the state is unchanged.
    pub fn advance(
        &mut self,
        system: &dyn NeutralSystem,
        h: f64,
        config: &SchemeConfig,
        dw: &Vector,
    ) -> Result<StepDecomposition> {
        if dw.len() != system.noise_dim() {
            return Err(Error::invalid(format!(
                "increment has dimension {}, expected {}",
                dw.len(),
                system.noise_dim()
            )));
        }
        let lag = self.buffer.lag();
        let delayed = self.delayed();
        let drift_h = config.effective_drift(system.drift(&self.y, delayed), h) * h;
        let sigma = system.diffusion(&self.y, delayed);
        let noise = &sigma * dw;

        let z_next = &self.z + &drift_h + &noise;
        // Y_{k+1-m}: the newest state when m = 1
        let y_next = &z_next + system.neutral(self.buffer.get(lag - 1)?);
        if y_next.iter().any(|c| !c.is_finite()) || y_next.norm() > DIVERGENCE_THRESHOLD {
            return Err(Error::PathDiverged { step: self.k + 1 });
        }

        let decomposition = StepDecomposition {
            m1: 2.0 * self.z.dot(&noise),
            m2: 2.0 * drift_h.dot(&noise),
            m3: sigma.norm_squared() * (dw.norm_squared() - h),
        };
        self.buffer.push(y_next.clone());
        self.y = y_next;
        self.z = z_next;
        self.k += 1;
        Ok(decomposition)
    }
}

/// One tamed step with the taming exponent of `config`.
pub fn step_tamed(
    mut state: PathState,
    system: &dyn NeutralSystem,
    grid: &TimeGrid,
    config: &SchemeConfig,
    dw: &Vector,
) -> Result<PathState> {
    let tamed = SchemeConfig::tamed(config.alpha())?;
    state.advance(system, grid.h(), &tamed, dw)?;
    Ok(state)
}

/// One classic (untamed) Euler–Maruyama step.
pub fn step_classic(
    mut state: PathState,
    system: &dyn NeutralSystem,
    grid: &TimeGrid,
    dw: &Vector,
) -> Result<PathState> {
    state.advance(system, grid.h(), &SchemeConfig::classic(), dw)?;
    Ok(state)
}

/// A simulated path `Y_0, ..., Y_M`, truncated at the first divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// `xi(kh)` for `k = -m, ..., 0`.
    pub segment: Vec<Vector>,
    /// `Y_0, Y_1, ...`; `M + 1` entries unless the path diverged.
    pub states: Vec<Vector>,
    /// Decomposition of step `k -> k + 1` at index `k`.
    pub decompositions: Vec<StepDecomposition>,
    /// Step index whose computed state was non-finite or above the threshold.
    pub diverged_at: Option<usize>,
}

impl Path {
    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// `Err(PathDiverged)` if the path diverged.
    pub fn ensure_finite(&self) -> Result<&Self> {
        match self.diverged_at {
            Some(step) => Err(Error::PathDiverged { step }),
            None => Ok(self),
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|y| y.norm()).collect()
    }
}

/// Drives a path until step `M` or the first divergence, handing each new
/// state to `observe`. Returns the divergence step, if any.
pub(crate) fn drive_path(
    system: &dyn NeutralSystem,
    grid: &TimeGrid,
    config: &SchemeConfig,
    driver: &mut BrownianDriver,
    state: &mut PathState,
    mut observe: impl FnMut(&PathState, StepDecomposition),
) -> Result<Option<usize>> {
    let h = grid.h();
    while state.k() < grid.steps() {
        let dw = driver.increment(state.k(), h);
        match state.advance(system, h, config, &dw) {
            Ok(d) => observe(state, d),
            Err(Error::PathDiverged { step }) => return Ok(Some(step)),
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Simulates one path. Divergence is recorded in [`Path::diverged_at`]
/// rather than discarding the partial path; use [`Path::ensure_finite`] to
/// turn it into an error.
pub fn simulate_path(
    system: &dyn NeutralSystem,
    segment: &InitialSegment,
    grid: &TimeGrid,
    config: &SchemeConfig,
    driver: &mut BrownianDriver,
) -> Result<Path> {
    if driver.noise_dim() != system.noise_dim() {
        return Err(Error::invalid("driver and system disagree on the noise dimension"));
    }
    let mut state = PathState::from_segment(system, segment, grid, driver)?;
    let segment_values: Vec<Vector> = state.buffer().iter().cloned().collect();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    let mut decompositions = Vec::with_capacity(grid.steps());
    states.push(state.y().clone());
    let diverged_at = drive_path(system, grid, config, driver, &mut state, |s, d| {
        states.push(s.y().clone());
        decompositions.push(d);
    })?;
    Ok(Path {
        segment: segment_values,
        states,
        decompositions,
        diverged_at,
    })
}

/// Piecewise-constant interpolant `Y(floor(s/h) h)` on `[-tau, T]`.
///
/// Values of `s` within `1e-9` steps of a grid point snap to it, so `s = kh`
/// computed in floating point returns `Y_k`.
pub fn interpolate<'a>(path: &'a Path, grid: &TimeGrid, s: f64) -> Result<&'a Vector> {
    let (lower, upper) = (-grid.tau(), grid.t_end());
    let slack = 1e-9 * grid.h();
    if !(s >= lower - slack && s <= upper + slack) {
        return Err(Error::OutOfRange { s, lower, upper });
    }
    let r = s / grid.h();
    let nearest = r.round();
    let k = if (r - nearest).abs() <= 1e-9 { nearest } else { r.floor() } as i64;
    let m = grid.lag() as i64;
    let k = k.clamp(-m, grid.steps() as i64);
    if k < 0 {
        return Ok(&path.segment[(k + m) as usize]);
    }
    path.states.get(k as usize).ok_or(Error::OutOfRange {
        s,
        lower,
        upper: grid.time(path.states.len() as i64 - 1),
    })
}
