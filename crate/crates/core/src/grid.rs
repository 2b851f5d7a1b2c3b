//! Uniform time grid with `h = T/M = tau/m`, reproducible Brownian
//! increments and the FIFO buffer that serves delayed states.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::InitialSegment;
use crate::{Error, Result, Vector};

/// Relative tolerance when deciding whether `T/h` is an integer.
const DIVISIBILITY_TOLERANCE: f64 = 1e-9;

/// Immutable uniform grid on `[-tau, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    tau: f64,
    t_end: f64,
    lag: usize,
    steps: usize,
    h: f64,
}

impl TimeGrid {
    /// Grid with `lag` steps per delay interval. Fails unless `T/h` is an
    /// integer and `h < 1`.
    pub fn new(tau: f64, t_end: f64, lag: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive and finite, got {tau}")));
        }
        if !(t_end > tau && t_end.is_finite()) {
            return Err(Error::invalid(format!("T must exceed tau, got T = {t_end}, tau = {tau}")));
        }
        if lag == 0 {
            return Err(Error::invalid("the delay lag m must be at least 1"));
        }
        let h = tau / lag as f64;
        let ratio = t_end / h;
        let steps = ratio.round();
        if (ratio - steps).abs() > DIVISIBILITY_TOLERANCE * ratio {
            return Err(Error::GridIncompatible { t_end, h, ratio });
        }
        if h >= 1.0 {
            return Err(Error::StepTooLarge { h });
        }
        Ok(TimeGrid {
            tau,
            t_end,
            lag,
            steps: steps as usize,
            h,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Delay lag `m` in steps.
    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Total number of steps `M`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Time of grid index `k` (negative indices address the initial segment).
    pub fn time(&self, k: i64) -> f64 {
        k as f64 * self.h
    }

    /// `kh` for `k = 0, ..., M`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k as i64)).collect()
    }
}

/// Free-function form of [`TimeGrid::new`].
pub fn make_grid(tau: f64, t_end: f64, lag: usize) -> Result<TimeGrid> {
    TimeGrid::new(tau, t_end, lag)
}

/// Words of ChaCha keystream reserved for each step; far more than the
/// Gaussian sampler consumes for any realistic noise dimension.
const WORDS_PER_STEP: u128 = 1 << 32;

/// Key tweak separating random initial segments from Brownian increments.
const SEGMENT_KEY_TWEAK: u64 = 0x5eed_5e67_0000_0001;

/// Brownian increments `w((k+1)h) - w(kh)` for one path.
///
/// The keystream is selected by `(seed, stream_id)` and positioned by the
/// step index, so an increment depends only on `(seed, stream_id, step)`
/// and never on call order or on other paths.
#[derive(Debug, Clone)]
pub struct BrownianDriver {
    seed: u64,
    stream_id: u64,
    noise_dim: usize,
    rng: ChaCha8Rng,
}

impl BrownianDriver {
    pub fn new(seed: u64, stream_id: u64, noise_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        BrownianDriver {
            seed,
            stream_id,
            noise_dim,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// `noise_dim` independent `N(0, h)` draws for step `step_index`.
    pub fn increment(&mut self, step_index: usize, h: f64) -> Vector {
        self.rng.set_word_pos(step_index as u128 * WORDS_PER_STEP);
        let scale = h.sqrt();
        let rng = &mut self.rng;
        Vector::from_fn(self.noise_dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
    }

    /// Generator for random initial segments of this path.
    pub fn segment_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ SEGMENT_KEY_TWEAK);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Free-function form of [`BrownianDriver::increment`].
pub fn sample_increment(driver: &mut BrownianDriver, step_index: usize, h: f64) -> Vector {
    driver.increment(step_index, h)
}

/// The last `m + 1` states `Y_{k-m}, ..., Y_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBuffer {
    entries: VecDeque<Vector>,
    head: usize,
}

impl DelayBuffer {
    /// Buffer holding `values = [Y_{-m}, ..., Y_0]` with head index 0.
    pub fn from_values(values: Vec<Vector>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("a delay buffer needs m + 1 >= 2 entries"));
        }
        Ok(DelayBuffer {
            entries: values.into(),
            head: 0,
        })
    }

    /// Buffer for `segment` on `grid`, using the driver's segment generator
    /// when the segment is random.
    pub fn from_segment(segment: &InitialSegment, grid: &TimeGrid, driver: &BrownianDriver) -> Result<Self> {
        let mut rng = driver.segment_rng();
        Self::from_values(segment.values_on_grid(grid.lag(), grid.h(), &mut rng)?)
    }

    /// Delay lag `m`.
    pub fn lag(&self) -> usize {
        self.entries.len() - 1
    }

    /// Index `k` of the newest entry.
    pub fn head_index(&self) -> usize {
        self.head
    }

    /// Appends `Y_{k+1}` and evicts `Y_{k-m}`.
    pub fn push(&mut self, value: Vector) {
        self.entries.pop_front();
        self.entries.push_back(value);
        self.head += 1;
    }

    /// `Y_{k - lag}` for `lag` in `0..=m`.
    pub fn get(&self, lag: usize) -> Result<&Vector> {
        let m = self.lag();
        if lag > m {
            return Err(Error::invalid(format!("lag {lag} exceeds the buffer's delay lag {m}")));
        }
        Ok(&self.entries[m - lag])
    }

    /// Entries oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Vector> {
        self.entries.iter()
    }
}

/// Free-function form of [`DelayBuffer::from_segment`] for deterministic segments.
pub fn buffer_init(segment: &InitialSegment, grid: &TimeGrid) -> Result<DelayBuffer> {
    DelayBuffer::from_segment(segment, grid, &BrownianDriver::new(0, 0, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn grid_exact_division() {
        let g = make_grid(1.0, 2.0, 4).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.steps(), 8);
        assert_eq!(g.times().len(), 9);
    }

    #[test]
    fn grid_rejects_incompatible_horizon() {
        let err = make_grid(1.0, 1.1, 4).unwrap_err();
        assert!(matches!(err, Error::GridIncompatible { .. }), "{err}");
    }

    #[test]
    fn grid_rejects_unit_step() {
        let err = make_grid(1.0, 2.0, 1).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { h } if h == 1.0));
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(make_grid(0.0, 2.0, 4).is_err());
        assert!(make_grid(1.0, 1.0, 4).is_err());
        assert!(make_grid(1.0, 2.0, 0).is_err());
    }

    #[test]
    fn grid_with_inexact_decimal_step() {
        let g = make_grid(1.0, 20.0, 10).unwrap();
        assert_eq!(g.steps(), 200);
        assert!((g.h() * 10.0 - 1.0).abs() <= 4.0 * f64::EPSILON);
        assert!((g.h() * 200.0 - 20.0).abs() <= 20.0 * 4.0 * f64::EPSILON);
    }

    #[test]
    fn increments_are_deterministic_and_order_free() {
        let mut a = BrownianDriver::new(42, 0, 3);
        let first = a.increment(0, 0.1);
        let _ = a.increment(7, 0.1);
        assert_eq!(a.increment(0, 0.1), first);
        let mut b = BrownianDriver::new(42, 0, 3);
        assert_eq!(b.increment(0, 0.1), first);
        let mut c = BrownianDriver::new(42, 1, 3);
        assert_ne!(c.increment(0, 0.1), first);
    }

    fn draws(n: usize, h: f64) -> Vec<f64> {
        let mut d = BrownianDriver::new(2024, 3, 1);
        (0..n).map(|k| d.increment(k, h)[0]).collect()
    }

    #[test]
    fn increment_mean_and_variance() {
        let h = 0.01;
        let n = 1_000_000;
        let x = draws(n, h);
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 * (h / n as f64).sqrt(), "mean {mean}");
        // chi-square with 10^6 dof: relative sd of the variance is sqrt(2/n) ~ 0.0014
        assert!((var / h - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn increments_pass_kolmogorov_smirnov() {
        let h = 0.25;
        let n = 100_000;
        let mut x = draws(n, h);
        x.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, h.sqrt()).unwrap();
        let d = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = normal.cdf(*v);
                (f - i as f64 / n as f64).abs().max((i + 1) as f64 / n as f64 - f)
            })
            .fold(0.0, f64::max);
        // asymptotic critical value sqrt(-ln(alpha / 2) / 2) / sqrt(n) at alpha = 0.001
        let critical = (-(0.0005f64).ln() / 2.0).sqrt() / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} >= {critical}");
    }

    #[test]
    fn streams_are_uncorrelated() {
        let n = 100_000;
        let mut a = BrownianDriver::new(9, 0, 1);
        let mut b = BrownianDriver::new(9, 1, 1);
        let corr = (0..n).map(|k| a.increment(k, 1.0)[0] * b.increment(k, 1.0)[0]).sum::<f64>() / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "correlation {corr}");
    }

    #[test]
    fn buffer_from_constant_segment() {
        let g = make_grid(0.75, 1.5, 3).unwrap();
        let b = buffer_init(&InitialSegment::constant(0.75, v(1.0)), &g).unwrap();
        assert_eq!(b.head_index(), 0);
        assert_eq!(b.lag(), 3);
        assert!(b.iter().all(|e| *e == v(1.0)));
    }

    #[test]
    fn buffer_from_linear_segment() {
        let g = make_grid(1.0, 2.0, 2).unwrap();
        let b = buffer_init(&InitialSegment::from_fn(1.0, v), &g).unwrap();
        let entries: Vec<f64> = b.iter().map(|e| e[0]).collect();
        assert_eq!(entries, vec![-1.0, -0.5, 0.0]);
    }

    #[test]
    fn buffer_rejects_half_segment() {
        let g = make_grid(1.0, 2.0, 4).unwrap();
        let seg = InitialSegment::from_fn_on(1.0, -0.5, v);
        assert!(buffer_init(&seg, &g).is_err());
    }

    #[test]
    fn buffer_fifo_semantics() {
        let mut b = DelayBuffer::from_values(vec![v(0.0); 3]).unwrap();
        assert_eq!(b.get(0).unwrap(), &v(0.0));
        for x in [1.0, 2.0, 3.0] {
            b.push(v(x));
        }
        assert_eq!(b.get(2).unwrap(), &v(1.0));
        assert_eq!(b.get(0).unwrap(), &v(3.0));
        assert_eq!(b.head_index(), 3);
        assert!(b.get(3).is_err());
    }

    #[test]
    fn random_segment_is_reproducible_per_stream() {
        use rand::Rng;
        let g = make_grid(1.0, 2.0, 4).unwrap();
        let seg = InitialSegment::random(1.0, |_, rng| v(rng.random::<f64>()));
        let a = DelayBuffer::from_segment(&seg, &g, &BrownianDriver::new(5, 2, 1)).unwrap();
        let b = DelayBuffer::from_segment(&seg, &g, &BrownianDriver::new(5, 2, 1)).unwrap();
        let c = DelayBuffer::from_segment(&seg, &g, &BrownianDriver::new(5, 3, 1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn buffer_matches_full_history(m in 1usize..8, pushes in proptest::collection::vec(-1e3f64..1e3, 0..40)) {
            let init: Vec<Vector> = (0..=m).map(|i| v(-(i as f64) - 0.5)).collect();
            let mut history = init.clone();
            let mut buf = DelayBuffer::from_values(init).unwrap();
            for x in pushes {
                buf.push(v(x));
                history.push(v(x));
            }
            let newest = history.len() - 1;
            for lag in 0..=m {
                prop_assert_eq!(buf.get(lag).unwrap(), &history[newest - lag]);
            }
            prop_assert!(buf.get(m + 1).is_err());
        }

        #[test]
        fn grid_consistency(tau in 0.1f64..10.0, m in 11usize..200, mult in 2usize..50) {
            let t_end = tau * mult as f64;
            let g = make_grid(tau, t_end, m).unwrap();
            prop_assert_eq!(g.steps(), m * mult);
            prop_assert!((g.lag() as f64 * g.h() - tau).abs() <= 4.0 * f64::EPSILON * tau);
            prop_assert!((g.steps() as f64 * g.h() - t_end).abs() <= 4.0 * f64::EPSILON * t_end);
        }
    }
}
