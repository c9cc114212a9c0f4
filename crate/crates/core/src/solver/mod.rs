//! Conic quadratic programs over products of zero, nonnegative and
//! positive-semidefinite cones, and the solvers for them.
//!
//! The standard form is
//!
//! ```text
//! minimize    1/2 x'Qx + q'x + c0
//! subject to  h - Gx in K_1 x ... x K_k
//! ```
//!
//! where each `K_j` is a zero cone (equality rows), the nonnegative orthant or
//! a PSD cone stored in scaled half-vectorized form (see [`crate::linalg::svec`]).

mod cones;
mod ipm;

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, smat, svec_len};
use crate::program::KKTReport;
use crate::registry::{Params, Registry};

pub use ipm::InteriorPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    /// PSD cone of `d x d` matrices, occupying `d(d+1)/2` rows.
    Psd(usize),
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(k) | Cone::Nonneg(k) => k,
            Cone::Psd(d) => svec_len(d),
        }
    }
}

/// What a block of rows encodes; used to label residuals in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLabel {
    Equilibrium,
    Grid,
    Lmi,
    PLowerBound,
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeBlock {
    pub cone: Cone,
    pub label: BlockLabel,
}

impl ConeBlock {
    pub fn new(cone: Cone, label: BlockLabel) -> Self {
        Self { cone, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub offset: f64,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub blocks: Vec<ConeBlock>,
}

impl ConeProgram {
    pub fn new(
        quad: DMatrix<f64>,
        lin: DVector<f64>,
        offset: f64,
        g: DMatrix<f64>,
        h: DVector<f64>,
        blocks: Vec<ConeBlock>,
    ) -> Result<Self> {
        let n = lin.len();
        let rows: usize = blocks.iter().map(|b| b.cone.rows()).sum();
        let bad = |what: &str| Err(Error::InvalidParameter(format!("cone program: {what}")));
        if quad.shape() != (n, n) {
            return bad("Q must be square with one row per variable");
        }
        if g.nrows() != rows || h.len() != rows {
            return bad("G and h must have one row per cone coordinate");
        }
        if g.ncols() != n && rows > 0 {
            return bad("G must have one column per variable");
        }
        if (&quad - quad.transpose()).amax() > 1e-12 * (1.0 + quad.amax()) {
            return bad("Q must be symmetric");
        }
        let g = if rows == 0 { DMatrix::zeros(0, n) } else { g };
        Ok(Self {
            quad,
            lin,
            offset,
            g,
            h,
            blocks,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.lin.len()
    }

    pub fn n_rows(&self) -> usize {
        self.h.len()
    }

    /// Row range of every block, in order.
    pub fn block_ranges(&self) -> Vec<(ConeBlock, Range<usize>)> {
        let mut start = 0;
        self.blocks
            .iter()
            .map(|b| {
                let end = start + b.cone.rows();
                let r = (*b, start..end);
                start = end;
                r
            })
            .collect()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.quad * x)) + self.lin.dot(x) + self.offset
    }

    /// `h - Gx`.
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h - &self.g * x
    }

    /// Multiplies the objective by `factor`.
    pub fn scale_objective(&self, factor: f64) -> Self {
        Self {
            quad: &self.quad * factor,
            lin: &self.lin * factor,
            offset: self.offset * factor,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleDetected,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            gap_tol: 1e-7,
            max_iter: 100,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.gap_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "solver tolerances must be positive and max_iter nonzero: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Multipliers for every row of `G`, stacked like the blocks (PSD blocks
    /// in svec form).
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_time: std::time::Duration,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Turns a non-optimal outcome into an error.
    pub fn into_optimal(self) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
                detail: format!("stopped after {} iterations", self.iterations),
            })
        }
    }
}

pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConeProgram, settings: &SolverSettings) -> Result<Solution>;
}

pub fn solver_registry() -> Registry<dyn ConicSolver> {
    let mut reg: Registry<dyn ConicSolver> = Registry::new("conic solver");
    reg.register("ipm", |_: &Params| Ok(Box::new(InteriorPoint::default())));
    reg
}

/// Solves with the default interior point method.
pub fn solve(program: &ConeProgram, settings: &SolverSettings) -> Result<Solution> {
    InteriorPoint::default().solve(program, settings)
}

/// Recomputes feasibility, stationarity and complementarity of a solution
/// from the program data alone.
pub fn verify_solution(program: &ConeProgram, solution: &Solution) -> KKTReport {
    let x = &solution.x;
    let z = &solution.z;
    let slack = program.slack(x);
    let objective = program.objective(x);

    let mut report = KKTReport::new(objective);
    let mut dual_cone_violation = 0.0_f64;
    for (block, range) in program.block_ranges() {
        let s = slack.rows(range.start, range.len()).into_owned();
        let zb = z.rows(range.start, range.len()).into_owned();
        match block.cone {
            Cone::Zero(_) => {
                report.max_eq_residual = report.max_eq_residual.max(s.amax());
            }
            Cone::Nonneg(_) => {
                let viol = s.iter().fold(0.0_f64, |acc, &v| acc.max(-v));
                report.max_ineq_violation = report.max_ineq_violation.max(viol);
                let zviol = zb.iter().fold(0.0_f64, |acc, &v| acc.max(-v));
                dual_cone_violation = dual_cone_violation.max(zviol);
            }
            Cone::Psd(_) => {
                let e = min_eigenvalue(&smat(s.as_slice()));
                report.note_psd(e);
                match block.label {
                    BlockLabel::Lmi => report.lmi_margin = Some(report.lmi_margin.map_or(e, |m| m.min(e))),
                    BlockLabel::PLowerBound => report.p_margin = Some(e),
                    _ => {}
                }
                let ze = min_eigenvalue(&smat(zb.as_slice()));
                dual_cone_violation = dual_cone_violation.max(-ze);
            }
        }
    }

    let grad = &program.quad * x + &program.lin + program.g.transpose() * z;
    let scale = [
        1.0,
        (&program.quad * x).amax(),
        program.lin.amax(),
        (program.g.transpose() * z).amax(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    report.dual_residual = Some(grad.amax() / scale);
    report.dual_cone_violation = Some(dual_cone_violation);

    // Over the equality rows the multipliers are free, and `s = 0` there, so
    // they do not enter the complementarity sum.
    let comp: f64 = program
        .block_ranges()
        .into_iter()
        .filter(|(b, _)| !matches!(b.cone, Cone::Zero(_)))
        .map(|(_, r)| {
            slack
                .rows(r.start, r.len())
                .dot(&z.rows(r.start, r.len()))
        })
        .sum();
    report.relative_gap = Some(comp.abs() / objective.abs().max(1.0));
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn program_validation() {
        let q = DMatrix::identity(2, 2);
        let l = DVector::zeros(2);
        let blocks = vec![ConeBlock::new(Cone::Nonneg(1), BlockLabel::Generic)];
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let h = DVector::from_element(1, 1.0);
        assert!(ConeProgram::new(q.clone(), l.clone(), 0.0, g.clone(), h.clone(), blocks.clone()).is_ok());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(ConeProgram::new(asym, l.clone(), 0.0, g.clone(), h.clone(), blocks.clone()).is_err());
        assert!(ConeProgram::new(q, l, 0.0, g, DVector::zeros(2), blocks).is_err());
    }

    #[test]
    fn block_ranges_are_contiguous() {
        let blocks = vec![
            ConeBlock::new(Cone::Zero(2), BlockLabel::Equilibrium),
            ConeBlock::new(Cone::Nonneg(3), BlockLabel::Grid),
            ConeBlock::new(Cone::Psd(2), BlockLabel::Lmi),
        ];
        let p = ConeProgram::new(
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            0.0,
            DMatrix::zeros(8, 1),
            DVector::zeros(8),
            blocks,
        )
        .unwrap();
        let ranges: Vec<_> = p.block_ranges().into_iter().map(|(_, r)| r).collect();
        assert_eq!(ranges, vec![0..2, 2..5, 5..8]);
    }

    #[test]
    fn registry_has_interior_point() {
        let reg = solver_registry();
        assert_eq!(reg.create("ipm", &Params::new()).unwrap().name(), "ipm");
        assert!(reg.create("admm", &Params::new()).is_err());
    }
}
