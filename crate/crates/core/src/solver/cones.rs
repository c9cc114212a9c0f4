//! Per-cone arithmetic for the interior point method: Jordan products,
//! Nesterov-Todd scalings and step lengths on nonnegative and PSD blocks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::linalg::{smat, svec, sym};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Nonneg(usize),
    Psd(usize),
}

impl Kind {
    pub fn rows(&self) -> usize {
        match *self {
            Kind::Nonneg(k) => k,
            Kind::Psd(d) => d * (d + 1) / 2,
        }
    }

    pub fn degree(&self) -> usize {
        match *self {
            Kind::Nonneg(k) => k,
            Kind::Psd(d) => d,
        }
    }
}

/// The cone part of a problem: an ordered list of blocks over one vector.
#[derive(Debug, Clone)]
pub(crate) struct Product {
    pub blocks: Vec<(Kind, usize)>,
    pub rows: usize,
}

impl Product {
    pub fn new(kinds: &[Kind]) -> Self {
        let mut offset = 0;
        let blocks = kinds
            .iter()
            .map(|&k| {
                let b = (k, offset);
                offset += k.rows();
                b
            })
            .collect();
        Self { blocks, rows: offset }
    }

    pub fn degree(&self) -> usize {
        self.blocks.iter().map(|(k, _)| k.degree()).sum()
    }

    fn map2(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        f: impl Fn(Kind, &[f64], &[f64], &mut [f64]),
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        for &(k, off) in &self.blocks {
            let r = off..off + k.rows();
            f(k, &u.as_slice()[r.clone()], &v.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
        }
        out
    }

    pub fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.rows);
        for &(k, off) in &self.blocks {
            match k {
                Kind::Nonneg(n) => e.rows_mut(off, n).fill(1.0),
                Kind::Psd(d) => e.rows_mut(off, k.rows()).copy_from(&svec(&DMatrix::identity(d, d))),
            }
        }
        e
    }

    /// Jordan product `u o v`.
    pub fn circ(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.map2(u, v, |k, a, b, out| match k {
            Kind::Nonneg(_) => {
                for i in 0..a.len() {
                    out[i] = a[i] * b[i];
                }
            }
            Kind::Psd(_) => {
                let (ma, mb) = (smat(a), smat(b));
                out.copy_from_slice(svec(&sym(&(&ma * &mb))).as_slice());
            }
        })
    }

    /// Solves `lambda o x = d` for `x`, where `lambda` is a scaled point whose
    /// PSD blocks are diagonal (given by their eigenvalues).
    pub fn inv_circ(&self, lambda: &Scaled, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        for (i, &(k, off)) in self.blocks.iter().enumerate() {
            let n = k.rows();
            let db = &d.as_slice()[off..off + n];
            let ob = &mut out.as_mut_slice()[off..off + n];
            match (&lambda.blocks[i], k) {
                (Scaling::Nonneg { lambda: l, .. }, _) => {
                    for j in 0..n {
                        ob[j] = db[j] / l[j];
                    }
                }
                (Scaling::Psd { lambda: l, .. }, Kind::Psd(dim)) => {
                    let dm = smat(db);
                    let x = DMatrix::from_fn(dim, dim, |r, c| 2.0 * dm[(r, c)] / (l[r] + l[c]));
                    ob.copy_from_slice(svec(&x).as_slice());
                }
                _ => unreachable!("scaling kind matches cone kind"),
            }
        }
        out
    }

    /// Most negative "eigenvalue" of a vector with respect to the cone.
    pub fn min_eig(&self, u: &DVector<f64>) -> f64 {
        let mut m = f64::INFINITY;
        for &(k, off) in &self.blocks {
            let b = &u.as_slice()[off..off + k.rows()];
            let e = match k {
                Kind::Nonneg(_) => b.iter().cloned().fold(f64::INFINITY, f64::min),
                Kind::Psd(_) => SymmetricEigen::new(smat(b)).eigenvalues.min(),
            };
            m = m.min(e);
        }
        m
    }

    /// Largest `alpha` such that `lambda + alpha * dir` stays in the cone
    /// (`f64::INFINITY` if unbounded).
    pub fn max_step(&self, lambda: &Scaled, dir: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for (i, &(k, off)) in self.blocks.iter().enumerate() {
            let b = &dir.as_slice()[off..off + k.rows()];
            match &lambda.blocks[i] {
                Scaling::Nonneg { lambda: l, .. } => {
                    for j in 0..b.len() {
                        if b[j] < 0.0 {
                            alpha = alpha.min(-l[j] / b[j]);
                        }
                    }
                }
                Scaling::Psd { lambda: l, .. } => {
                    let x = smat(b);
                    let d = l.len();
                    let m = DMatrix::from_fn(d, d, |r, c| x[(r, c)] / (l[r] * l[c]).sqrt());
                    let e = SymmetricEigen::new(m).eigenvalues.min();
                    if e < 0.0 {
                        alpha = alpha.min(-1.0 / e);
                    }
                }
            }
        }
        alpha
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Scaling {
    /// `W = diag(w)`, `lambda = sqrt(s z)`.
    Nonneg { w: DVector<f64>, lambda: DVector<f64> },
    /// `W(Z) = r' Z r`, `W^{-T}(S) = r^{-1} S r^{-T}`; both map to `diag(lambda)`.
    Psd {
        r: DMatrix<f64>,
        r_inv: DMatrix<f64>,
        lambda: DVector<f64>,
    },
}

/// Nesterov-Todd scaling of every block at a strictly interior `(s, z)`.
#[derive(Debug, Clone)]
pub(crate) struct Scaled {
    pub blocks: Vec<Scaling>,
}

impl Scaled {
    /// Returns `None` when `s` or `z` is not strictly inside the cone.
    pub fn new(cones: &Product, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut blocks = Vec::with_capacity(cones.blocks.len());
        for &(k, off) in &cones.blocks {
            let n = k.rows();
            let sb = &s.as_slice()[off..off + n];
            let zb = &z.as_slice()[off..off + n];
            match k {
                Kind::Nonneg(_) => {
                    if sb.iter().chain(zb).any(|&v| !(v > 0.0)) {
                        return None;
                    }
                    let w = DVector::from_iterator(n, sb.iter().zip(zb).map(|(s, z)| (s / z).sqrt()));
                    let lambda = DVector::from_iterator(n, sb.iter().zip(zb).map(|(s, z)| (s * z).sqrt()));
                    blocks.push(Scaling::Nonneg { w, lambda });
                }
                Kind::Psd(_) => {
                    let ls = smat(sb).cholesky()?.l();
                    let lz = smat(zb).cholesky()?.l();
                    let svd = (lz.transpose() * &ls).svd(true, true);
                    let v = svd.v_t?.transpose();
                    let lambda = svd.singular_values;
                    if lambda.iter().any(|&l| !(l > 0.0)) {
                        return None;
                    }
                    let inv_sqrt = DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l.sqrt()));
                    let r = &ls * &v * inv_sqrt;
                    let r_inv = r.clone().try_inverse()?;
                    blocks.push(Scaling::Psd { r, r_inv, lambda });
                }
            }
        }
        Some(Self { blocks })
    }

    /// The scaled point `lambda = W z = W^{-T} s` in vector form.
    pub fn lambda(&self, cones: &Product) -> DVector<f64> {
        let mut out = DVector::zeros(cones.rows);
        for (i, &(k, off)) in cones.blocks.iter().enumerate() {
            match &self.blocks[i] {
                Scaling::Nonneg { lambda, .. } => out.rows_mut(off, k.rows()).copy_from(lambda),
                Scaling::Psd { lambda, .. } => out
                    .rows_mut(off, k.rows())
                    .copy_from(&svec(&DMatrix::from_diagonal(lambda))),
            }
        }
        out
    }

    fn apply(&self, cones: &Product, v: &DVector<f64>, op: Op) -> DVector<f64> {
        let mut out = DVector::zeros(cones.rows);
        for (i, &(k, off)) in cones.blocks.iter().enumerate() {
            let n = k.rows();
            let vb = &v.as_slice()[off..off + n];
            let ob = &mut out.as_mut_slice()[off..off + n];
            match &self.blocks[i] {
                Scaling::Nonneg { w, .. } => {
                    for j in 0..n {
                        ob[j] = match op {
                            Op::W | Op::Wt => w[j] * vb[j],
                            Op::WInv | Op::WInvT => vb[j] / w[j],
                        };
                    }
                }
                Scaling::Psd { r, r_inv, .. } => {
                    let m = smat(vb);
                    let res = match op {
                        Op::W => r.transpose() * m * r,
                        Op::Wt => r * m * r.transpose(),
                        Op::WInv => r_inv.transpose() * m * r_inv,
                        Op::WInvT => r_inv * m * r_inv.transpose(),
                    };
                    ob.copy_from_slice(svec(&res).as_slice());
                }
            }
        }
        out
    }

    #[cfg(test)]
    pub fn w(&self, cones: &Product, v: &DVector<f64>) -> DVector<f64> {
        self.apply(cones, v, Op::W)
    }

    pub fn wt(&self, cones: &Product, v: &DVector<f64>) -> DVector<f64> {
        self.apply(cones, v, Op::Wt)
    }

    pub fn w_inv(&self, cones: &Product, v: &DVector<f64>) -> DVector<f64> {
        self.apply(cones, v, Op::WInv)
    }

    pub fn w_inv_t(&self, cones: &Product, v: &DVector<f64>) -> DVector<f64> {
        self.apply(cones, v, Op::WInvT)
    }

    /// `W^{-T} G`, column by column.
    pub fn w_inv_t_columns(&self, cones: &Product, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for j in 0..g.ncols() {
            out.set_column(j, &self.w_inv_t(cones, &g.column(j).into_owned()));
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Op {
    #[cfg_attr(not(test), allow(dead_code))]
    W,
    Wt,
    WInv,
    WInvT,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psd_vec(m: &[f64], d: usize) -> DVector<f64> {
        svec(&DMatrix::from_row_slice(d, d, m))
    }

    fn product() -> Product {
        Product::new(&[Kind::Nonneg(2), Kind::Psd(2)])
    }

    fn point(a: &[f64], m: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(5);
        v[0] = a[0];
        v[1] = a[1];
        v.rows_mut(2, 3).copy_from(&psd_vec(m, 2));
        v
    }

    #[test]
    fn nt_scaling_maps_both_points_to_lambda() {
        let cones = product();
        let s = point(&[2.0, 0.5], &[2.0, 0.3, 0.3, 1.0]);
        let z = point(&[0.1, 3.0], &[1.0, -0.4, -0.4, 0.7]);
        let sc = Scaled::new(&cones, &s, &z).unwrap();
        let lam = sc.lambda(&cones);
        assert!((sc.w(&cones, &z) - &lam).amax() < 1e-12);
        assert!((sc.w_inv_t(&cones, &s) - &lam).amax() < 1e-12);
        let v = point(&[0.3, -1.0], &[0.2, 0.5, 0.5, -0.1]);
        assert!((sc.w_inv(&cones, &sc.w(&cones, &v)) - &v).amax() < 1e-12);
        assert!((sc.wt(&cones, &sc.w_inv_t(&cones, &v)) - &v).amax() < 1e-12);
        // <W u, v> = <u, W' v>
        let u = point(&[1.0, 2.0], &[0.3, 0.1, 0.1, 0.9]);
        let lhs = sc.w(&cones, &u).dot(&v);
        let rhs = u.dot(&sc.wt(&cones, &v));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn inverse_jordan_product() {
        let cones = product();
        let s = point(&[2.0, 0.5], &[2.0, 0.3, 0.3, 1.0]);
        let z = point(&[0.1, 3.0], &[1.0, -0.4, -0.4, 0.7]);
        let sc = Scaled::new(&cones, &s, &z).unwrap();
        let lam = sc.lambda(&cones);
        let d = point(&[0.7, -0.2], &[0.4, 0.8, 0.8, -1.5]);
        let x = cones.inv_circ(&sc, &d);
        assert!((cones.circ(&lam, &x) - d).amax() < 1e-12);
    }

    #[test]
    fn step_length_hits_boundary() {
        let cones = product();
        let e = cones.identity();
        let sc = Scaled::new(&cones, &e, &e).unwrap();
        let dir = point(&[-0.5, 1.0], &[-0.25, 0.0, 0.0, 1.0]);
        let a = cones.max_step(&sc, &dir);
        assert!((a - 2.0).abs() < 1e-12);
        let dir = point(&[1.0, 1.0], &[0.0, 2.0, 2.0, 0.0]);
        assert!((cones.max_step(&sc, &dir) - 0.5).abs() < 1e-12);
        assert_eq!(cones.max_step(&sc, &e), f64::INFINITY);
    }

    #[test]
    fn rejects_boundary_points() {
        let cones = product();
        let e = cones.identity();
        let s = point(&[1.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(Scaled::new(&cones, &s, &e).is_none());
        let s = point(&[1.0, 1.0], &[1.0, 1.0, 1.0, 1.0]);
        assert!(Scaled::new(&cones, &s, &e).is_none());
        assert!((cones.min_eig(&s)).abs() < 1e-12);
    }
}
