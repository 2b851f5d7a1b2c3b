use std::fmt;

use crate::model::NeutralSystem;
use crate::{Error, Matrix, Result, Vector};

/// Scalar example systems shipped with the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinSystem {
    /// `D(y) = kappa0 y`, `b(x, y) = -a x + btilde y`, `sigma(x, y) = s y`.
    Linear { kappa0: f64, a: f64, btilde: f64, s: f64 },
    /// `D = 0`, `b(x, y) = -x^3`, `sigma = 0`.
    Cubic,
    /// `D = 0`, `b = 0`, `sigma = 1`.
    PureNoise,
}

impl BuiltinSystem {
    pub fn linear(kappa0: f64, a: f64, btilde: f64, s: f64) -> Result<Self> {
        if !(kappa0.abs() < 1.0) {
            return Err(Error::invalid(format!("kappa0 must satisfy |kappa0| < 1, got {kappa0}")));
        }
        if ![a, btilde, s].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("linear coefficients must be finite"));
        }
        Ok(BuiltinSystem::Linear { kappa0, a, btilde, s })
    }

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinSystem::Linear { .. } => "linear",
            BuiltinSystem::Cubic => "cubic",
            BuiltinSystem::PureNoise => "pure_noise",
        }
    }

    /// Contraction constant of the neutral term.
    pub fn neutral_contraction(&self) -> f64 {
        match self {
            BuiltinSystem::Linear { kappa0, .. } => kappa0.abs(),
            _ => 0.0,
        }
    }
}

impl fmt::Display for BuiltinSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuiltinSystem::Linear { kappa0, a, btilde, s } => {
                write!(f, "linear(kappa0={kappa0}, a={a}, btilde={btilde}, s={s})")
            }
            other => f.write_str(other.name()),
        }
    }
}

fn scalar(x: f64) -> Vector {
    Vector::from_element(1, x)
}

impl NeutralSystem for BuiltinSystem {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn neutral(&self, y: &Vector) -> Vector {
        match self {
            BuiltinSystem::Linear { kappa0, .. } => y * *kappa0,
            _ => Vector::zeros(1),
        }
    }

    fn drift(&self, x: &Vector, y: &Vector) -> Vector {
        match self {
            BuiltinSystem::Linear { a, btilde, .. } => scalar(-a * x[0] + btilde * y[0]),
            BuiltinSystem::Cubic => scalar(-x[0] * x[0] * x[0]),
            BuiltinSystem::PureNoise => Vector::zeros(1),
        }
    }

    fn diffusion(&self, _x: &Vector, y: &Vector) -> Matrix {
        match self {
            BuiltinSystem::Linear { s, .. } => Matrix::from_element(1, 1, s * y[0]),
            BuiltinSystem::Cubic => Matrix::zeros(1, 1),
            BuiltinSystem::PureNoise => Matrix::from_element(1, 1, 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_contraction, check_coercivity, validate_system, SampleDomain};

    #[test]
    fn builtins_are_valid_systems() {
        for sys in [BuiltinSystem::linear(0.1, 2.0, 0.25, 0.25).unwrap(), BuiltinSystem::Cubic, BuiltinSystem::PureNoise] {
            validate_system(&sys).unwrap();
        }
        assert!(BuiltinSystem::linear(1.0, 2.0, 0.25, 0.25).is_err());
    }

    #[test]
    fn linear_system_satisfies_contraction_and_coercivity() {
        let sys = BuiltinSystem::linear(0.1, 2.0, 0.25, 0.25).unwrap();
        let pairs = SampleDomain::default().pairs(1);
        let a2 = check_contraction(&|y: &Vector| sys.neutral(y), &pairs, 1e-9).unwrap();
        assert!(a2.holds_on_sample);
        assert!((a2.estimated_constant - 0.1).abs() < 1e-12);
        // |sigma|^2 / (1 + x^2 + y^2) < s^2
        let a1 = check_coercivity(&sys, 0.0625, &pairs).unwrap();
        assert!(a1.holds_on_sample);
    }
}
