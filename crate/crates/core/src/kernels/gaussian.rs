use super::{KernelSpec, ScalarKernel};

#[derive(Debug, Clone, Copy)]
pub struct Gaussian {
    sigma: f64,
    inv_var: f64,
}

impl Gaussian {
    pub fn new(sigma: f64) -> Self {
        Self {
            sigma,
            inv_var: 1.0 / (sigma * sigma),
        }
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

impl ScalarKernel for Gaussian {
    fn spec(&self) -> KernelSpec {
        KernelSpec::Gaussian { sigma: self.sigma }
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        (-0.5 * sq_dist(x, y) * self.inv_var).exp()
    }

    fn grad_first(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        -(x[j] - y[j]) * self.inv_var * self.eval(x, y)
    }

    fn grad_second(&self, i: usize, x: &[f64], y: &[f64]) -> f64 {
        (x[i] - y[i]) * self.inv_var * self.eval(x, y)
    }

    fn mixed_second(&self, i: usize, j: usize, x: &[f64], y: &[f64]) -> f64 {
        let di = x[i] - y[i];
        let dj = x[j] - y[j];
        let delta = if i == j { 1.0 } else { 0.0 };
        self.eval(x, y) * (delta * self.inv_var - di * dj * self.inv_var * self.inv_var)
    }
}
