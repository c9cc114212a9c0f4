use super::{KernelSpec, ScalarKernel};

/// Inhomogeneous polynomial kernel. With `offset > 0` and `degree >= 1` the
/// hypothesis space contains every polynomial map of degree at most `degree`,
/// in particular the identity.
#[derive(Debug, Clone, Copy)]
pub struct Polynomial {
    degree: u32,
    offset: f64,
}

impl Polynomial {
    pub fn new(degree: u32, offset: f64) -> Self {
        Self { degree, offset }
    }

    fn base(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + self.offset
    }

    /// `s^e` with the convention that a zero exponent yields 1 even at `s = 0`.
    fn pow(s: f64, e: i64) -> f64 {
        if e <= 0 {
            1.0
        } else {
            s.powi(e as i32)
        }
    }
}

impl ScalarKernel for Polynomial {
    fn spec(&self) -> KernelSpec {
        KernelSpec::Polynomial {
            degree: self.degree,
            offset: self.offset,
        }
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        Self::pow(self.base(x, y), self.degree as i64)
    }

    fn grad_first(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        let d = self.degree as i64;
        d as f64 * Self::pow(self.base(x, y), d - 1) * y[j]
    }

    fn mixed_second(&self, i: usize, j: usize, x: &[f64], y: &[f64]) -> f64 {
        let d = self.degree as i64;
        let s = self.base(x, y);
        let delta = if i == j { 1.0 } else { 0.0 };
        let curvature = if d >= 2 {
            (d * (d - 1)) as f64 * Self::pow(s, d - 2) * x[i] * y[j]
        } else {
            0.0
        };
        curvature + d as f64 * Self::pow(s, d - 1) * delta
    }
}
