//! Scalar Mercer kernels and the derivative-augmented Gram assembly.
//!
//! Section convention: the section at a center `c` is `k(c, .)`. A "first
//! argument" derivative differentiates the center, a "second argument"
//! derivative differentiates the evaluation point. Axis indices are 0-based.

mod gaussian;
mod gram;
mod polynomial;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::registry::{Params, Registry};

pub use gaussian::Gaussian;
pub use gram::{
    assemble_feature_vector, assemble_gram, feature_jacobian, Centers, GramAssembly,
};
pub use polynomial::Polynomial;

/// A twice continuously differentiable, symmetric, positive semidefinite
/// kernel on R^n.
///
/// Implementations may assume `x.len() == y.len()` and in-range axes; the
/// checked free functions in this module validate before dispatching.
pub trait ScalarKernel: Send + Sync + fmt::Debug {
    fn spec(&self) -> KernelSpec;

    fn eval(&self, x: &[f64], y: &[f64]) -> f64;

    /// `d k / d x_j` (first argument).
    fn grad_first(&self, j: usize, x: &[f64], y: &[f64]) -> f64;

    /// `d k / d y_i` (second argument).
    fn grad_second(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        self.grad_first(i, y, x)
    }

    /// `d^2 k / (d y_i d x_j)`.
    fn mixed_second(&self, i: usize, j: usize, x: &[f64], y: &[f64]) -> f64;
}

/// Serializable description of a kernel family and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `exp(-|x - y|^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// `(x . y + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian { sigma }
    }

    pub fn polynomial(degree: u32, offset: f64) -> Self {
        KernelSpec::Polynomial { degree, offset }
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Polynomial { .. } => "polynomial",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidParameter(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            KernelSpec::Polynomial { degree, .. } if degree < 1 => Err(Error::InvalidParameter(
                "polynomial degree must be at least 1".into(),
            )),
            KernelSpec::Polynomial { offset, .. } if !(offset >= 0.0 && offset.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "polynomial offset must be nonnegative, got {offset}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn ScalarKernel>> {
        self.validate()?;
        Ok(match *self {
            KernelSpec::Gaussian { sigma } => Box::new(Gaussian::new(sigma)),
            KernelSpec::Polynomial { degree, offset } => Box::new(Polynomial::new(degree, offset)),
        })
    }

    /// Characteristic length used for tie-breaking during model selection.
    /// Polynomial kernels have none and compare by offset.
    pub fn scale(&self) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => sigma,
            KernelSpec::Polynomial { offset, .. } => offset,
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
            KernelSpec::Polynomial { degree, offset } => {
                write!(f, "polynomial(degree={degree}, offset={offset})")
            }
        }
    }
}

/// Registry of kernel families, keyed by the names used on the command line.
pub fn kernel_registry() -> Registry<dyn ScalarKernel> {
    let mut reg: Registry<dyn ScalarKernel> = Registry::new("kernel");
    reg.register("gaussian", |p: &Params| {
        KernelSpec::gaussian(p.require("sigma")?).build()
    });
    reg.register("polynomial", |p: &Params| {
        let degree = p.get_or("degree", 3.0);
        if degree < 1.0 || degree.fract() != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "polynomial degree must be a positive integer, got {degree}"
            )));
        }
        KernelSpec::polynomial(degree as u32, p.get_or("offset", 1.0)).build()
    });
    reg
}

fn check_axis(axis: usize, dim: usize) -> Result<()> {
    if axis < dim {
        Ok(())
    } else {
        Err(Error::AxisOutOfRange { axis, dim })
    }
}

pub fn kernel_eval(kernel: &dyn ScalarKernel, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    Ok(kernel.eval(x, y))
}

pub fn kernel_grad_first(kernel: &dyn ScalarKernel, j: usize, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    check_axis(j, x.len())?;
    Ok(kernel.grad_first(j, x, y))
}

pub fn kernel_mixed_second(
    kernel: &dyn ScalarKernel,
    i: usize,
    j: usize,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    check_axis(i, x.len())?;
    check_axis(j, x.len())?;
    Ok(kernel.mixed_second(i, j, x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_matches_documented_format() {
        let g = serde_json::to_string(&KernelSpec::gaussian(0.5)).unwrap();
        assert_eq!(g, r#"{"family":"gaussian","sigma":0.5}"#);
        let p = serde_json::to_string(&KernelSpec::polynomial(3, 1.0)).unwrap();
        assert_eq!(p, r#"{"family":"polynomial","degree":3,"offset":1.0}"#);
        let back: KernelSpec = serde_json::from_str(&p).unwrap();
        assert_eq!(back, KernelSpec::polynomial(3, 1.0));
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        assert!(KernelSpec::gaussian(0.0).build().is_err());
        assert!(KernelSpec::gaussian(-1.0).build().is_err());
        assert!(KernelSpec::polynomial(0, 1.0).build().is_err());
        assert!(KernelSpec::polynomial(2, -0.5).build().is_err());
    }

    #[test]
    fn registry_builds_both_families() {
        let reg = kernel_registry();
        let g = reg.create("gaussian", &Params::new().with("sigma", 2.0)).unwrap();
        assert_eq!(g.spec(), KernelSpec::gaussian(2.0));
        let p = reg
            .create("polynomial", &Params::new().with("degree", 2.0).with("offset", 0.5))
            .unwrap();
        assert_eq!(p.spec(), KernelSpec::polynomial(2, 0.5));
        assert!(reg.create("gaussian", &Params::new()).is_err());
        assert!(reg.create("laplace", &Params::new()).is_err());
    }

    #[test]
    fn checked_entry_points_validate_shapes() {
        let k = KernelSpec::gaussian(1.0).build().unwrap();
        assert!(matches!(
            kernel_eval(k.as_ref(), &[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            kernel_grad_first(k.as_ref(), 2, &[0.0, 1.0], &[0.0, 0.0]),
            Err(Error::AxisOutOfRange { axis: 2, dim: 2 })
        ));
        assert!(kernel_mixed_second(k.as_ref(), 0, 5, &[0.0, 1.0], &[0.0, 0.0]).is_err());
    }
}
