use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ScalarKernel;
use crate::error::{check_dim, Error, Result};

/// Ordered interpolation points: the origin, the data points, then the grid
/// points. Index `i` in `0..=p` addresses a point; indices `p + 1 ..= p + n`
/// address the first-derivative sections at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Centers {
    dim: usize,
    origin: DVector<f64>,
    data: Vec<DVector<f64>>,
    grid: Vec<DVector<f64>>,
}

impl Centers {
    pub fn new(dim: usize, data: Vec<DVector<f64>>, grid: Vec<DVector<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        for x in data.iter().chain(&grid) {
            check_dim(dim, x.len())?;
        }
        if let Some(z) = grid.iter().find(|z| z.norm() == 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid points must be nonzero, got {:?}",
                z.as_slice()
            )));
        }
        Ok(Self {
            dim,
            origin: DVector::zeros(dim),
            data,
            grid,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_data(&self) -> usize {
        self.data.len()
    }

    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }

    /// Number of point centers besides the origin.
    pub fn p(&self) -> usize {
        self.data.len() + self.grid.len()
    }

    /// Length of the feature vector.
    pub fn m(&self) -> usize {
        1 + self.p() + self.dim
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        let ns = self.data.len();
        match i {
            0 => &self.origin,
            i if i <= ns => &self.data[i - 1],
            i => &self.grid[i - 1 - ns],
        }
    }

    pub fn points(&self) -> impl Iterator<Item = &DVector<f64>> {
        std::iter::once(&self.origin).chain(&self.data).chain(&self.grid)
    }

    pub fn data_points(&self) -> &[DVector<f64>] {
        &self.data
    }

    pub fn grid_points(&self) -> &[DVector<f64>] {
        &self.grid
    }

    pub fn data_index(&self, k: usize) -> usize {
        1 + k
    }

    pub fn grid_index(&self, k: usize) -> usize {
        1 + self.data.len() + k
    }

    pub fn derivative_index(&self, axis: usize) -> usize {
        self.p() + 1 + axis
    }
}

/// Gram matrix of all sections together with the Jacobian of the feature
/// map at the origin.
#[derive(Debug, Clone)]
pub struct GramAssembly {
    pub k: DMatrix<f64>,
    /// `m x n`; column `j` is the derivative of the feature vector along axis `j` at 0.
    pub jacobian: DMatrix<f64>,
}

impl GramAssembly {
    pub fn m(&self) -> usize {
        self.k.nrows()
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.k.column(i).into_owned()
    }
}

/// Feature vector `k(x)`: point sections `k(x_i, x)` for `i = 0..=p`
/// followed by derivative sections `d/dc_j k(c, x)` at `c = 0`.
pub fn assemble_feature_vector(
    kernel: &dyn ScalarKernel,
    centers: &Centers,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim(centers.dim(), x.len())?;
    let p = centers.p();
    let zero = vec![0.0; centers.dim()];
    let xs = x.as_slice();
    Ok(DVector::from_fn(centers.m(), |i, _| {
        if i <= p {
            kernel.eval(centers.point(i).as_slice(), xs)
        } else {
            kernel.grad_first(i - p - 1, &zero, xs)
        }
    }))
}

/// Jacobian `Dk(x)` of the feature map, `m x n`.
pub fn feature_jacobian(
    kernel: &dyn ScalarKernel,
    centers: &Centers,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_dim(centers.dim(), x.len())?;
    let p = centers.p();
    let zero = vec![0.0; centers.dim()];
    let xs = x.as_slice();
    Ok(DMatrix::from_fn(centers.m(), centers.dim(), |i, l| {
        if i <= p {
            kernel.grad_second(l, centers.point(i).as_slice(), xs)
        } else {
            kernel.mixed_second(l, i - p - 1, &zero, xs)
        }
    }))
}

fn gram_entry(kernel: &dyn ScalarKernel, centers: &Centers, zero: &[f64], i1: usize, i2: usize) -> f64 {
    let p = centers.p();
    match (i1 <= p, i2 <= p) {
        (true, true) => kernel.eval(centers.point(i2).as_slice(), centers.point(i1).as_slice()),
        (true, false) => kernel.grad_first(i2 - p - 1, zero, centers.point(i1).as_slice()),
        (false, true) => kernel.grad_second(i1 - p - 1, centers.point(i2).as_slice(), zero),
        (false, false) => kernel.mixed_second(i1 - p - 1, i2 - p - 1, zero, zero),
    }
}

/// Builds `K` entry by entry (rows in parallel; each entry is computed
/// independently so the result does not depend on the thread count).
pub fn assemble_gram(kernel: &dyn ScalarKernel, centers: &Centers) -> GramAssembly {
    let m = centers.m();
    let zero = vec![0.0; centers.dim()];
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i1| (0..m).map(|i2| gram_entry(kernel, centers, &zero, i1, i2)).collect())
        .collect();
    let k = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
    let jacobian = feature_jacobian(kernel, centers, &DVector::zeros(centers.dim()))
        .expect("origin has the centers' dimension");
    GramAssembly { k, jacobian }
}
