//! The convex identification program over `(A, P)`:
//!
//! ```text
//! minimize    sum_i |P y_i - A K_i|^2 + lambda tr(A K A') + rho |P|_F^2
//! subject to  z' A K_z <= -|z|^2          for every grid point z
//!             (A J + J'A')/2 <= -I
//!             P >= I
//!             A K_0 = 0
//! ```
//!
//! `K_i` is the Gram column of center `i` and `J` holds the derivative
//! columns of `K`. The fitted field is `P^{-1} A k(x)`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::DataSet;
use crate::error::{check_dim, Error, Result};
use crate::kernels::{Centers, GramAssembly};
use crate::linalg::{min_eigenvalue, smat, svec, svec_basis, svec_len, sym};
use crate::solver::{BlockLabel, Cone, ConeBlock, ConeProgram, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: f64,
    pub include_grid_constraints: bool,
    pub fix_p_to_identity: bool,
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub rho: f64,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            lambda: 1e-3,
            include_grid_constraints: true,
            fix_p_to_identity: false,
            feas_tol: s.feas_tol,
            gap_tol: s.gap_tol,
            rho: 0.0,
            max_iter: s.max_iter,
        }
    }
}

impl FitConfig {
    pub fn constrained(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    /// `P = I` and no grid constraints.
    pub fn ablation(lambda: f64) -> Self {
        Self {
            lambda,
            include_grid_constraints: false,
            fix_p_to_identity: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.feas_tol > 0.0 && self.gap_tol > 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be nonnegative, got {}", self.rho)));
        }
        Ok(())
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            feas_tol: self.feas_tol,
            gap_tol: self.gap_tol,
            max_iter: self.max_iter,
        }
    }
}

/// Residuals of a candidate `(A, P)` (or of a canonical solution) against
/// the constraint blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KKTReport {
    pub objective: f64,
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    /// Smallest eigenvalue over all PSD slacks.
    pub min_psd_eig: Option<f64>,
    /// Smallest eigenvalue of `-((AJ + J'A')/2 + I)`.
    pub lmi_margin: Option<f64>,
    /// Smallest eigenvalue of `P - I`.
    pub p_margin: Option<f64>,
    pub dual_residual: Option<f64>,
    pub dual_cone_violation: Option<f64>,
    pub relative_gap: Option<f64>,
}

impl KKTReport {
    pub fn new(objective: f64) -> Self {
        Self {
            objective,
            max_eq_residual: 0.0,
            max_ineq_violation: 0.0,
            min_psd_eig: None,
            lmi_margin: None,
            p_margin: None,
            dual_residual: None,
            dual_cone_violation: None,
            relative_gap: None,
        }
    }

    pub(crate) fn note_psd(&mut self, eig: f64) {
        self.min_psd_eig = Some(self.min_psd_eig.map_or(eig, |m| m.min(eig)));
    }

    /// Largest violation of any primal constraint.
    pub fn max_primal_violation(&self) -> f64 {
        let neg = |v: Option<f64>| v.map_or(0.0, |e| (-e).max(0.0));
        self.max_eq_residual
            .max(self.max_ineq_violation)
            .max(neg(self.min_psd_eig))
            .max(neg(self.lmi_margin))
            .max(neg(self.p_margin))
    }

    /// Every available entry is within `tol`.
    pub fn within(&self, tol: f64) -> bool {
        let ok = |v: Option<f64>| v.is_none_or(|x| x <= tol);
        self.max_primal_violation() <= tol
            && ok(self.dual_residual)
            && ok(self.dual_cone_violation)
            && ok(self.relative_gap)
    }

    pub fn is_finite(&self) -> bool {
        let fin = |v: Option<f64>| v.is_none_or(f64::is_finite);
        self.objective.is_finite()
            && self.max_eq_residual.is_finite()
            && self.max_ineq_violation.is_finite()
            && fin(self.min_psd_eig)
            && fin(self.lmi_margin)
            && fin(self.p_margin)
            && fin(self.dual_residual)
            && fin(self.dual_cone_violation)
            && fin(self.relative_gap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub n_eq: usize,
    pub n_ineq: usize,
    /// Matrix sizes of the PSD constraints on the LMI.
    pub lmi_dims: [usize; 1],
    /// Matrix size of the `P >= I` constraint, absent when `P` is fixed.
    pub p_psd_dim: Option<usize>,
}

/// Multipliers of the program's constraint blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramDuals {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub lmi: DMatrix<f64>,
    pub p_cone: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct ConicProgram {
    dim: usize,
    p: usize,
    k: DMatrix<f64>,
    data_cols: Vec<usize>,
    ys: Vec<DVector<f64>>,
    /// Gram column and location of each constrained grid point.
    grid: Vec<(usize, DVector<f64>)>,
    config: FitConfig,
}

pub fn assemble_program(
    gram: &GramAssembly,
    dataset: &DataSet,
    centers: &Centers,
    config: &FitConfig,
) -> Result<ConicProgram> {
    config.validate()?;
    check_dim(centers.m(), gram.m())?;
    check_dim(centers.m(), gram.k.ncols())?;
    check_dim(centers.dim(), dataset.dim)?;
    check_dim(centers.n_data(), dataset.len())?;
    for (k, x) in dataset.xs.iter().enumerate() {
        if x != centers.point(centers.data_index(k)) {
            return Err(Error::InvalidParameter(format!(
                "data point {k} does not match its center"
            )));
        }
    }
    let grid = if config.include_grid_constraints {
        centers
            .grid_points()
            .iter()
            .enumerate()
            .map(|(k, z)| (centers.grid_index(k), z.clone()))
            .collect()
    } else {
        Vec::new()
    };
    Ok(ConicProgram {
        dim: centers.dim(),
        p: centers.p(),
        k: gram.k.clone(),
        data_cols: (0..dataset.len()).map(|k| centers.data_index(k)).collect(),
        ys: dataset.ys.clone(),
        grid,
        config: *config,
    })
}

impl ConicProgram {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.k.nrows()
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn counts(&self) -> BlockCounts {
        BlockCounts {
            n_eq: self.dim,
            n_ineq: self.grid.len(),
            lmi_dims: [self.dim],
            p_psd_dim: (!self.config.fix_p_to_identity).then_some(self.dim),
        }
    }

    /// Derivative columns of `K` (`m x n`).
    pub fn j(&self) -> DMatrix<f64> {
        self.k.columns(self.p + 1, self.dim).into_owned()
    }

    /// Grid points carrying an inequality, paired with their Gram column.
    pub fn grid_constraints(&self) -> &[(usize, DVector<f64>)] {
        &self.grid
    }

    fn p_or_identity(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        if self.config.fix_p_to_identity {
            DMatrix::identity(self.dim, self.dim)
        } else {
            p.clone()
        }
    }

    /// Objective evaluated directly from its definition.
    pub fn objective(&self, a: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
        let p = self.p_or_identity(p);
        let ak = a * &self.k;
        let fit: f64 = self
            .data_cols
            .iter()
            .zip(&self.ys)
            .map(|(&c, y)| (&p * y - ak.column(c)).norm_squared())
            .sum();
        let reg = (&ak * a.transpose()).trace();
        fit + self.config.lambda * reg + self.config.rho * p.norm_squared()
    }

    /// Residuals of every block at `(A, P)`. With duals, also the relative
    /// complementarity gap.
    pub fn kkt_report(&self, a: &DMatrix<f64>, p: &DMatrix<f64>, duals: Option<&ProgramDuals>) -> KKTReport {
        let p = self.p_or_identity(p);
        let n = self.dim;
        let mut report = KKTReport::new(self.objective(a, &p));
        let ak = a * &self.k;
        report.max_eq_residual = ak.column(0).amax();

        let ineq_slack: Vec<f64> = self
            .grid
            .iter()
            .map(|(c, z)| -z.norm_squared() - z.dot(&ak.column(*c)))
            .collect();
        report.max_ineq_violation = ineq_slack.iter().fold(0.0_f64, |acc, &s| acc.max(-s));

        let lmi_slack = -(sym(&(a * self.j())) + DMatrix::identity(n, n));
        let lmi = min_eigenvalue(&lmi_slack);
        report.lmi_margin = Some(lmi);
        report.note_psd(lmi);

        let p_slack = &p - DMatrix::identity(n, n);
        let pm = min_eigenvalue(&p_slack);
        report.p_margin = Some(pm);
        if !self.config.fix_p_to_identity {
            report.note_psd(pm);
        }

        if let Some(d) = duals {
            let mut comp: f64 = d.ineq.iter().zip(&ineq_slack).map(|(z, s)| z * s).sum();
            comp += (&d.lmi * &lmi_slack).trace();
            if let Some(zp) = &d.p_cone {
                comp += (zp * &p_slack).trace();
            }
            report.relative_gap = Some(comp.abs() / report.objective.abs().max(1.0));
        }
        report
    }

    /// Checks a field `f = B k(x)` against the bilinear constraint set for a
    /// fixed `P`: the constraints on `(P B, P)` are the same expressions.
    pub fn kkt_report_bilinear(&self, b: &DMatrix<f64>, p: &DMatrix<f64>) -> KKTReport {
        self.kkt_report(&(p * b), p, None)
    }

    pub fn canonicalize(&self) -> CanonicalConic {
        self.canonicalize_with(BasisChoice::default())
    }

    pub fn canonicalize_with(&self, choice: BasisChoice) -> CanonicalConic {
        let basis = CoefficientBasis::new(&self.k, choice);
        CanonicalConic::build(self, basis)
    }
}

/// How the coefficient matrix is parametrized in the canonical program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisChoice {
    /// `A` itself, entry by entry.
    Identity,
    /// `A = C Psi` with `Psi = Lambda^{-1/2} V'` over the eigenpairs of `K`
    /// above `rel_tol * lambda_max`. Every term of the program depends on
    /// `A` only through `A K`, so this drops only directions that `K`
    /// annihilates (up to `rel_tol`) and whitens the rest.
    Spectral { rel_tol: f64 },
}

impl Default for BasisChoice {
    fn default() -> Self {
        BasisChoice::Spectral { rel_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct CoefficientBasis {
    /// `r x m`, `A = C psi`.
    pub psi: DMatrix<f64>,
    /// `m x r`, right inverse of `psi`.
    pub psi_pinv: DMatrix<f64>,
    /// `psi K`.
    pub reduced: DMatrix<f64>,
    /// `psi K psi'`.
    pub gram: DMatrix<f64>,
}

impl CoefficientBasis {
    pub fn new(k: &DMatrix<f64>, choice: BasisChoice) -> Self {
        match choice {
            BasisChoice::Identity => Self {
                psi: DMatrix::identity(k.nrows(), k.nrows()),
                psi_pinv: DMatrix::identity(k.nrows(), k.nrows()),
                reduced: k.clone(),
                gram: k.clone(),
            },
            BasisChoice::Spectral { rel_tol } => {
                let eig = SymmetricEigen::new(sym(k));
                let top = eig.eigenvalues.max().max(0.0);
                let mut keep: Vec<usize> = (0..k.nrows())
                    .filter(|&i| eig.eigenvalues[i] > rel_tol * top)
                    .collect();
                keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
                let r = keep.len();
                let m = k.nrows();
                let mut psi = DMatrix::zeros(r, m);
                let mut psi_pinv = DMatrix::zeros(m, r);
                let mut reduced = DMatrix::zeros(r, m);
                for (row, &i) in keep.iter().enumerate() {
                    let l = eig.eigenvalues[i];
                    let v = eig.eigenvectors.column(i);
                    psi.set_row(row, &(v.transpose() / l.sqrt()));
                    psi_pinv.set_column(row, &(v * l.sqrt()));
                    reduced.set_row(row, &(v.transpose() * l.sqrt()));
                }
                Self {
                    psi,
                    psi_pinv,
                    reduced,
                    gram: DMatrix::identity(r, r),
                }
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.psi.nrows()
    }
}

/// The program in solver standard form together with the map back to
/// `(A, P)`.
///
/// Variables: the coefficients `C` (row-major, `n x r`), then `svec(P)`
/// unless `P` is fixed to the identity. Blocks, in order: equilibrium
/// equalities, grid inequalities (if any), the LMI, and `P >= I`.
#[derive(Debug, Clone)]
pub struct CanonicalConic {
    pub cone: ConeProgram,
    pub basis: CoefficientBasis,
    dim: usize,
    fix_p: bool,
}

impl CanonicalConic {
    fn build(prog: &ConicProgram, basis: CoefficientBasis) -> Self {
        let n = prog.dim;
        let r = basis.rank();
        let nc = n * r;
        let np = if prog.config.fix_p_to_identity { 0 } else { svec_len(n) };
        let nv = nc + np;
        let idx = |row: usize, col: usize| row * r + col;
        let rm = &basis.reduced;

        let d = DMatrix::from_fn(r, prog.data_cols.len(), |i, k| rm[(i, prog.data_cols[k])]);
        let y = DMatrix::from_fn(n, prog.ys.len(), |i, k| prog.ys[k][i]);
        let hess = (&d * d.transpose() + &basis.gram * prog.config.lambda) * 2.0;

        let mut quad = DMatrix::zeros(nv, nv);
        let mut lin = DVector::zeros(nv);
        let mut offset = 0.0;
        for row in 0..n {
            quad.view_mut((row * r, row * r), (r, r)).copy_from(&hess);
        }
        if prog.config.fix_p_to_identity {
            let cross = &y * d.transpose();
            for row in 0..n {
                for col in 0..r {
                    lin[idx(row, col)] = -2.0 * cross[(row, col)];
                }
            }
            offset = y.norm_squared() + prog.config.rho * n as f64;
        } else {
            let moment = &y * y.transpose();
            let basis_mats: Vec<DMatrix<f64>> = (0..np).map(|b| svec_basis(n, b)).collect();
            for (b, eb) in basis_mats.iter().enumerate() {
                for (b2, eb2) in basis_mats.iter().enumerate() {
                    let mut v = 2.0 * (eb * &moment * eb2).trace();
                    if b == b2 {
                        v += 2.0 * prog.config.rho;
                    }
                    quad[(nc + b, nc + b2)] = v;
                }
                let cross = eb * &y * d.transpose();
                for row in 0..n {
                    for col in 0..r {
                        let v = -2.0 * cross[(row, col)];
                        quad[(idx(row, col), nc + b)] = v;
                        quad[(nc + b, idx(row, col))] = v;
                    }
                }
            }
        }

        let n_grid = prog.grid.len();
        let lmi_rows = svec_len(n);
        let rows = n + n_grid + lmi_rows + np;
        let mut g = DMatrix::zeros(rows, nv);
        let mut h = DVector::zeros(rows);
        let mut blocks = vec![ConeBlock::new(Cone::Zero(n), BlockLabel::Equilibrium)];

        for row in 0..n {
            for col in 0..r {
                g[(row, idx(row, col))] = rm[(col, 0)];
            }
        }
        let mut at = n;
        if n_grid > 0 {
            blocks.push(ConeBlock::new(Cone::Nonneg(n_grid), BlockLabel::Grid));
            for (c, z) in &prog.grid {
                for row in 0..n {
                    for col in 0..r {
                        g[(at, idx(row, col))] = z[row] * rm[(col, *c)];
                    }
                }
                h[at] = -z.norm_squared();
                at += 1;
            }
        }

        blocks.push(ConeBlock::new(Cone::Psd(n), BlockLabel::Lmi));
        let rj = rm.columns(prog.p + 1, n);
        for row in 0..n {
            for col in 0..r {
                let mut e = DMatrix::zeros(n, n);
                e.set_row(row, &rj.row(col));
                g.view_mut((at, idx(row, col)), (lmi_rows, 1))
                    .copy_from(&svec(&sym(&e)));
            }
        }
        h.rows_mut(at, lmi_rows).copy_from(&svec(&(-DMatrix::identity(n, n))));
        at += lmi_rows;

        if np > 0 {
            blocks.push(ConeBlock::new(Cone::Psd(n), BlockLabel::PLowerBound));
            for b in 0..np {
                g[(at + b, nc + b)] = -1.0;
            }
            h.rows_mut(at, np).copy_from(&(-svec(&DMatrix::identity(n, n))));
        }

        let cone = ConeProgram::new(quad, lin, offset, g, h, blocks)
            .expect("canonical blocks are consistent by construction");
        Self {
            cone,
            basis,
            dim: n,
            fix_p: prog.config.fix_p_to_identity,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.cone.n_vars()
    }

    fn n_coeff(&self) -> usize {
        self.dim * self.basis.rank()
    }

    /// `(A, P)` from a canonical variable vector.
    pub fn recover(&self, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let r = self.basis.rank();
        let c = DMatrix::from_fn(self.dim, r, |row, col| x[row * r + col]);
        let a = c * &self.basis.psi;
        let p = if self.fix_p {
            DMatrix::identity(self.dim, self.dim)
        } else {
            smat(&x.as_slice()[self.n_coeff()..])
        };
        (a, p)
    }

    /// Canonical variables for `(A, P)`; `A` is projected onto the basis.
    pub fn encode(&self, a: &DMatrix<f64>, p: &DMatrix<f64>) -> DVector<f64> {
        let c = a * &self.basis.psi_pinv;
        let mut x = DVector::zeros(self.n_vars());
        let r = self.basis.rank();
        for row in 0..self.dim {
            for col in 0..r {
                x[row * r + col] = c[(row, col)];
            }
        }
        if !self.fix_p {
            x.rows_mut(self.n_coeff(), svec_len(self.dim)).copy_from(&svec(p));
        }
        x
    }

    pub fn recover_duals(&self, z: &DVector<f64>) -> ProgramDuals {
        let mut duals = ProgramDuals {
            eq: DVector::zeros(0),
            ineq: DVector::zeros(0),
            lmi: DMatrix::zeros(self.dim, self.dim),
            p_cone: None,
        };
        for (block, range) in self.cone.block_ranges() {
            let zb = z.rows(range.start, range.len()).into_owned();
            match block.label {
                BlockLabel::Equilibrium => duals.eq = zb,
                BlockLabel::Grid => duals.ineq = zb,
                BlockLabel::Lmi => duals.lmi = smat(zb.as_slice()),
                BlockLabel::PLowerBound => duals.p_cone = Some(smat(zb.as_slice())),
                BlockLabel::Generic => {}
            }
        }
        duals
    }

    /// Plain-text sparse dump: cost, cone sizes and affine triplets.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(write_dump(&self.cone).as_bytes())?;
        Ok(())
    }
}

fn write_dump(p: &ConeProgram) -> String {
    let mut s = String::new();
    let triplets = |m: &DMatrix<f64>, upper_only: bool| -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 && (!upper_only || i <= j) {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        t
    };
    let _ = writeln!(s, "vars {}", p.n_vars());
    let _ = writeln!(s, "offset {:e}", p.offset);
    let q = triplets(&p.quad, true);
    let _ = writeln!(s, "quad {}", q.len());
    for (i, j, v) in q {
        let _ = writeln!(s, "{i} {j} {v:e}");
    }
    let lin: Vec<_> = p.lin.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
    let _ = writeln!(s, "lin {}", lin.len());
    for (i, v) in lin {
        let _ = writeln!(s, "{i} {v:e}");
    }
    let _ = writeln!(s, "cones {}", p.blocks.len());
    for b in &p.blocks {
        let (kind, size) = match b.cone {
            Cone::Zero(k) => ("zero", k),
            Cone::Nonneg(k) => ("nonneg", k),
            Cone::Psd(d) => ("psd", d),
        };
        let label = serde_json::to_string(&b.label).expect("label serializes");
        let _ = writeln!(s, "{kind} {size} {}", label.trim_matches('"'));
    }
    let g = triplets(&p.g, false);
    let _ = writeln!(s, "g {}", g.len());
    for (i, j, v) in g {
        let _ = writeln!(s, "{i} {j} {v:e}");
    }
    let h: Vec<_> = p.h.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
    let _ = writeln!(s, "h {}", h.len());
    for (i, v) in h {
        let _ = writeln!(s, "{i} {v:e}");
    }
    s
}

fn dump_err(msg: &str) -> Error {
    Error::Format(format!("program dump: {msg}"))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| dump_err(&format!("bad number `{s}`")))
}

fn keyed<'a>(it: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = it.next().ok_or_else(|| dump_err("unexpected end"))?;
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| dump_err(&format!("expected `{key}`")))
}

fn section<'a>(it: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Vec<Vec<&'a str>>> {
    let count: usize = num(keyed(it, key)?)?;
    (0..count)
        .map(|_| {
            it.next()
                .map(|l| l.split_whitespace().collect())
                .ok_or_else(|| dump_err("truncated section"))
        })
        .collect()
}

fn field<'a>(t: &[&'a str], i: usize) -> Result<&'a str> {
    t.get(i).copied().ok_or_else(|| dump_err("short line"))
}

/// Parses the format written by [`CanonicalConic::dump`].
pub fn read_dump<R: BufRead>(input: R) -> Result<ConeProgram> {
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty());

    let n: usize = num(keyed(&mut it, "vars")?)?;
    let offset: f64 = num(keyed(&mut it, "offset")?)?;
    let mut quad = DMatrix::zeros(n, n);
    for t in section(&mut it, "quad")? {
        let (i, j): (usize, usize) = (num(field(&t, 0)?)?, num(field(&t, 1)?)?);
        let v: f64 = num(field(&t, 2)?)?;
        quad[(i, j)] = v;
        quad[(j, i)] = v;
    }
    let mut lin = DVector::zeros(n);
    for t in section(&mut it, "lin")? {
        lin[num::<usize>(field(&t, 0)?)?] = num(field(&t, 1)?)?;
    }
    let mut blocks = Vec::new();
    for t in section(&mut it, "cones")? {
        let size: usize = num(field(&t, 1)?)?;
        let cone = match field(&t, 0)? {
            "zero" => Cone::Zero(size),
            "nonneg" => Cone::Nonneg(size),
            "psd" => Cone::Psd(size),
            other => return Err(dump_err(&format!("unknown cone `{other}`"))),
        };
        let label: BlockLabel = serde_json::from_str(&format!("\"{}\"", t.get(2).unwrap_or(&"generic")))?;
        blocks.push(ConeBlock::new(cone, label));
    }
    let rows: usize = blocks.iter().map(|b| b.cone.rows()).sum();
    let mut g = DMatrix::zeros(rows, n);
    for t in section(&mut it, "g")? {
        g[(num::<usize>(field(&t, 0)?)?, num::<usize>(field(&t, 1)?)?)] = num(field(&t, 2)?)?;
    }
    let mut h = DVector::zeros(rows);
    for t in section(&mut it, "h")? {
        h[num::<usize>(field(&t, 0)?)?] = num(field(&t, 1)?)?;
    }
    ConeProgram::new(quad, lin, offset, g, h, blocks)
}
