//! Primal-dual interior point method with Nesterov-Todd scaling and
//! Mehrotra predictor-corrector steps.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::cones::{Kind, Product, Scaled};
use super::{Cone, ConeProgram, ConicSolver, Solution, SolveStatus, SolverSettings};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct InteriorPoint {
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Diagonal regularization of the reduced KKT matrix, relative to its
    /// largest diagonal entry.
    pub regularization: f64,
    pub refinement_steps: usize,
}

impl Default for InteriorPoint {
    fn default() -> Self {
        Self {
            step_fraction: 0.99,
            regularization: 1e-13,
            refinement_steps: 3,
        }
    }
}

impl ConicSolver for InteriorPoint {
    fn name(&self) -> &'static str {
        "ipm"
    }

    fn solve(&self, program: &ConeProgram, settings: &SolverSettings) -> Result<Solution> {
        settings.validate()?;
        let start = Instant::now();
        let scaled = Equilibrated::new(program);
        let mut run = Run::new(&scaled, self, settings);
        let (status, iterations) = run.iterate();
        let (x, z) = scaled.unscale(&run.x, &run.y, &run.z);
        Ok(Solution {
            objective: program.objective(&x),
            x,
            z,
            status,
            iterations,
            solve_time: start.elapsed(),
        })
    }
}

/// The program split into equality rows and cone rows, with rows and the
/// objective rescaled to unit size.
struct Equilibrated {
    quad: DMatrix<f64>,
    lin: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    cones: Product,
    obj_scale: f64,
    /// Per original row: (is_equality, index into the split system, row scale).
    row_map: Vec<(bool, usize, f64)>,
}

impl Equilibrated {
    fn new(p: &ConeProgram) -> Self {
        let n = p.n_vars();
        let obj_scale = p.quad.amax().max(p.lin.amax()).max(1.0);

        let mut eq_rows = Vec::new();
        let mut cone_rows = Vec::new();
        let mut kinds = Vec::new();
        let mut row_map = vec![(false, 0, 1.0); p.n_rows()];
        for (block, range) in p.block_ranges() {
            let norms: Vec<f64> = range
                .clone()
                .map(|i| p.g.row(i).norm().max(p.h[i].abs()).max(1e-300))
                .collect();
            match block.cone {
                Cone::Zero(_) => {
                    for (k, i) in range.enumerate() {
                        row_map[i] = (true, eq_rows.len(), norms[k]);
                        eq_rows.push(i);
                    }
                }
                Cone::Nonneg(k) => {
                    kinds.push(Kind::Nonneg(k));
                    for (j, i) in range.enumerate() {
                        row_map[i] = (false, cone_rows.len(), norms[j]);
                        cone_rows.push(i);
                    }
                }
                Cone::Psd(d) => {
                    kinds.push(Kind::Psd(d));
                    // A PSD block must be scaled uniformly to stay a PSD cone.
                    let s = norms.iter().cloned().fold(1e-300, f64::max);
                    for i in range {
                        row_map[i] = (false, cone_rows.len(), s);
                        cone_rows.push(i);
                    }
                }
            }
        }

        let build = |rows: &[usize]| {
            let mut m = DMatrix::zeros(rows.len(), n);
            let mut v = DVector::zeros(rows.len());
            for (k, &i) in rows.iter().enumerate() {
                let s = row_map[i].2;
                m.set_row(k, &(p.g.row(i) / s));
                v[k] = p.h[i] / s;
            }
            (m, v)
        };
        let (a, b) = build(&eq_rows);
        let (g, h) = build(&cone_rows);
        Self {
            quad: &p.quad / obj_scale,
            lin: &p.lin / obj_scale,
            a,
            b,
            g,
            h,
            cones: Product::new(&kinds),
            obj_scale,
            row_map,
        }
    }

    /// Maps the internal iterate back to original variables and multipliers.
    fn unscale(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let full = DVector::from_iterator(
            self.row_map.len(),
            self.row_map.iter().map(|&(eq, k, s)| {
                let v = if eq { y[k] } else { z[k] };
                v * self.obj_scale / s
            }),
        );
        (x.clone(), full)
    }
}

struct Run<'a> {
    p: &'a Equilibrated,
    solver: &'a InteriorPoint,
    settings: &'a SolverSettings,
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
}

struct Residuals {
    rx: DVector<f64>,
    ry: DVector<f64>,
    rz: DVector<f64>,
    pres: f64,
    dres: f64,
    gap: f64,
}

/// LU factorization of the reduced KKT matrix at one scaling.
struct Factored {
    exact: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    g_tilde: DMatrix<f64>,
    scaling: Scaled,
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
    dz_t: DVector<f64>,
    ds_t: DVector<f64>,
}

impl<'a> Run<'a> {
    fn new(p: &'a Equilibrated, solver: &'a InteriorPoint, settings: &'a SolverSettings) -> Self {
        let n = p.lin.len();
        Self {
            p,
            solver,
            settings,
            x: DVector::zeros(n),
            y: DVector::zeros(p.a.nrows()),
            z: DVector::zeros(p.cones.rows),
            s: DVector::zeros(p.cones.rows),
        }
    }

    fn residuals(&self) -> Residuals {
        let p = self.p;
        let qx = &p.quad * &self.x;
        let aty = p.a.transpose() * &self.y;
        let gtz = p.g.transpose() * &self.z;
        let rx = &qx + &p.lin + &aty + &gtz;
        let ry = &p.a * &self.x - &p.b;
        let rz = &p.g * &self.x + &self.s - &p.h;
        let pres = (ry.amax() / (1.0 + p.b.amax())).max(rz.amax() / (1.0 + p.h.amax()));
        let dscale = [1.0, qx.amax(), p.lin.amax(), aty.amax(), gtz.amax()]
            .into_iter()
            .fold(0.0, f64::max);
        let dres = rx.amax() / dscale;
        let gap = self.s.dot(&self.z);
        Residuals {
            rx,
            ry,
            rz,
            pres,
            dres,
            gap,
        }
    }

    fn primal_objective(&self) -> f64 {
        0.5 * self.x.dot(&(&self.p.quad * &self.x)) + self.p.lin.dot(&self.x)
    }

    fn factor(&self, scaling: Scaled) -> Option<Factored> {
        let p = self.p;
        let n = p.lin.len();
        let me = p.a.nrows();
        let g_tilde = scaling.w_inv_t_columns(&p.cones, &p.g);
        let h = &p.quad + g_tilde.transpose() * &g_tilde;
        let mut exact = DMatrix::zeros(n + me, n + me);
        exact.view_mut((0, 0), (n, n)).copy_from(&h);
        exact.view_mut((0, n), (n, me)).copy_from(&p.a.transpose());
        exact.view_mut((n, 0), (me, n)).copy_from(&p.a);
        let diag_max = h.diagonal().amax().max(1.0);
        let delta = self.solver.regularization * diag_max;
        let mut reg = exact.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for i in n..n + me {
            reg[(i, i)] -= delta;
        }
        let lu = reg.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Factored {
            exact,
            lu,
            g_tilde,
            scaling,
        })
    }

    /// Solves `[H A'; A 0] [u; v] = rhs` with iterative refinement against
    /// the unregularized matrix.
    fn solve_reduced(&self, f: &Factored, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut sol = f.lu.solve(rhs)?;
        for _ in 0..self.solver.refinement_steps {
            let r = rhs - &f.exact * &sol;
            sol += f.lu.solve(&r)?;
        }
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }

    /// Newton direction for the residual right-hand sides and the
    /// complementarity target `lambda o (dz~ + ds~) = bs`.
    fn direction(&self, f: &Factored, res: &Residuals, bs: &DVector<f64>) -> Option<Direction> {
        let p = self.p;
        let cones = &p.cones;
        let n = p.lin.len();
        let t = cones.inv_circ(&f.scaling, bs);
        let bz = -&res.rz;
        let winvt_bz = f.scaling.w_inv_t(cones, &bz);
        let mut rhs = DVector::zeros(n + p.a.nrows());
        rhs.rows_mut(0, n)
            .copy_from(&(-&res.rx + f.g_tilde.transpose() * (&winvt_bz - &t)));
        rhs.rows_mut(n, p.a.nrows()).copy_from(&(-&res.ry));
        let sol = self.solve_reduced(f, &rhs)?;
        let dx = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, p.a.nrows()).into_owned();
        let dz_t = &f.g_tilde * &dx - &winvt_bz + &t;
        let ds_t = &t - &dz_t;
        let dz = f.scaling.w_inv(cones, &dz_t);
        let ds = f.scaling.wt(cones, &ds_t);
        Some(Direction {
            dx,
            dy,
            dz,
            ds,
            dz_t,
            ds_t,
        })
    }

    /// Starting point from the least-squares problem with identity scaling,
    /// shifted into the cone interior.
    fn initialize(&mut self) -> bool {
        let p = self.p;
        let cones = &p.cones;
        let e = cones.identity();
        let Some(identity) = Scaled::new(cones, &e, &e) else {
            return false;
        };
        let Some(f) = self.factor(identity) else {
            return false;
        };
        let n = p.lin.len();
        let mut rhs = DVector::zeros(n + p.a.nrows());
        rhs.rows_mut(0, n).copy_from(&(-&p.lin + p.g.transpose() * &p.h));
        rhs.rows_mut(n, p.a.nrows()).copy_from(&p.b);
        let Some(sol) = self.solve_reduced(&f, &rhs) else {
            return false;
        };
        self.x = sol.rows(0, n).into_owned();
        self.y = sol.rows(n, p.a.nrows()).into_owned();
        let gx = &p.g * &self.x;
        let mut s = &p.h - &gx;
        let mut z = &gx - &p.h;
        if cones.rows > 0 {
            for v in [&mut s, &mut z] {
                let shift = -cones.min_eig(v);
                if shift >= -1e-8 {
                    *v += &e * (1.0 + shift.max(0.0));
                }
            }
        }
        self.s = s;
        self.z = z;
        true
    }

    fn converged(&self, res: &Residuals) -> bool {
        let k = self.p.obj_scale;
        let relgap = res.gap.abs() * k / (self.primal_objective() * k).abs().max(1.0);
        res.pres <= self.settings.feas_tol
            && res.dres <= self.settings.feas_tol
            && relgap <= self.settings.gap_tol
    }

    /// Certificate of primal infeasibility: a dual ray with
    /// `A'y + G'z = 0`, `z` in the cone and `b'y + h'z < 0`.
    fn infeasibility_certificate(&self) -> bool {
        let p = self.p;
        let t = -(p.b.dot(&self.y) + p.h.dot(&self.z));
        if !(t > 0.0) {
            return false;
        }
        let ray = p.a.transpose() * &self.y + p.g.transpose() * &self.z;
        let qx_small = (&p.quad * &self.x).amax() <= 1e-8 * t;
        ray.amax() / t <= 1e-8 && qx_small && (self.z.amax() + self.y.amax()) > 1e6
    }

    fn iterate(&mut self) -> (SolveStatus, usize) {
        if !self.initialize() {
            return (SolveStatus::NumericalFailure, 0);
        }
        let cones = &self.p.cones;
        let degree = cones.degree() as f64;
        let e = cones.identity();
        for iter in 0..self.settings.max_iter {
            let res = self.residuals();
            if self.converged(&res) {
                return (SolveStatus::Optimal, iter);
            }
            if self.infeasibility_certificate() {
                return (SolveStatus::InfeasibleDetected, iter);
            }
            let Some(scaling) = Scaled::new(cones, &self.s, &self.z) else {
                return (SolveStatus::NumericalFailure, iter);
            };
            let lambda = scaling.lambda(cones);
            let Some(f) = self.factor(scaling) else {
                return (SolveStatus::NumericalFailure, iter);
            };
            let mu = if degree > 0.0 { res.gap / degree } else { 0.0 };
            let lambda_sq = cones.circ(&lambda, &lambda);

            let Some(aff) = self.direction(&f, &res, &(-&lambda_sq)) else {
                return (SolveStatus::NumericalFailure, iter);
            };
            let alpha_aff = cones
                .max_step(&f.scaling, &aff.ds_t)
                .min(cones.max_step(&f.scaling, &aff.dz_t))
                .min(1.0);
            let sigma = if degree > 0.0 {
                let s_aff = &lambda + &aff.ds_t * alpha_aff;
                let z_aff = &lambda + &aff.dz_t * alpha_aff;
                (s_aff.dot(&z_aff) / degree / mu).clamp(0.0, 1.0).powi(3)
            } else {
                0.0
            };

            let bs = -&lambda_sq - cones.circ(&aff.ds_t, &aff.dz_t) + &e * (sigma * mu);
            let Some(dir) = self.direction(&f, &res, &bs) else {
                return (SolveStatus::NumericalFailure, iter);
            };
            let alpha_max = cones
                .max_step(&f.scaling, &dir.ds_t)
                .min(cones.max_step(&f.scaling, &dir.dz_t));
            let alpha = (self.solver.step_fraction * alpha_max).min(1.0);
            if !(alpha > 0.0) {
                return (SolveStatus::NumericalFailure, iter);
            }
            self.x += &dir.dx * alpha;
            self.y += &dir.dy * alpha;
            self.z += &dir.dz * alpha;
            self.s += &dir.ds * alpha;
        }
        let res = self.residuals();
        if self.converged(&res) {
            (SolveStatus::Optimal, self.settings.max_iter)
        } else {
            (SolveStatus::MaxIter, self.settings.max_iter)
        }
    }
}
