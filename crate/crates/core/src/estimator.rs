//! Fitting a vector field model end to end, evaluating it, and choosing
//! hyperparameters by cross-validation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, DataSet, VectorField};
use crate::error::{check_dim, Error, Result};
use crate::grid::{GridSet, RegionSpec};
use crate::kernels::{assemble_feature_vector, assemble_gram, feature_jacobian, Centers, KernelSpec, ScalarKernel};
use crate::linalg::{max_eigenvalue, min_eigenvalue, sym};
use crate::program::{assemble_program, FitConfig, KKTReport};
use crate::sampling::stream_rng;
use crate::solver::{verify_solution, ConicSolver, InteriorPoint, SolveStatus};

/// Tolerances of the fitted-model invariants.
pub const CONSTRAINT_TOL: f64 = 1e-6;
pub const P_EIG_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_time_ms: f64,
    pub basis_rank: usize,
    /// Residuals of `(A, P)` against the program, with the complementarity gap.
    pub program: KKTReport,
    /// Residuals of the raw solver output against the canonical program.
    pub canonical: KKTReport,
}

#[derive(Debug, Clone)]
pub struct VectorFieldModel {
    spec: KernelSpec,
    kernel: Arc<dyn ScalarKernel>,
    centers: Centers,
    a: DMatrix<f64>,
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    lambda: f64,
    diagnostics: Option<FitDiagnostics>,
}

impl VectorFieldModel {
    pub fn new(
        spec: KernelSpec,
        centers: Centers,
        a: DMatrix<f64>,
        p: DMatrix<f64>,
        lambda: f64,
        diagnostics: Option<FitDiagnostics>,
    ) -> Result<Self> {
        let n = centers.dim();
        check_dim(n, a.nrows())?;
        check_dim(centers.m(), a.ncols())?;
        check_dim(n, p.nrows())?;
        check_dim(n, p.ncols())?;
        let p = sym(&p);
        let p_inv = p
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Invariant("P is singular".into()))?;
        Ok(Self {
            kernel: Arc::from(spec.build()?),
            spec,
            centers,
            a,
            p,
            p_inv,
            lambda,
            diagnostics,
        })
    }

    pub fn kernel_spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn centers(&self) -> &Centers {
        &self.centers
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        self.diagnostics.as_ref()
    }

    pub fn features(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        assemble_feature_vector(self.kernel.as_ref(), &self.centers, x)
    }

    /// `g(x) = A k(x)`, the field in Lyapunov coordinates (`g = P f`).
    pub fn g(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * self.features(x)?)
    }

    /// `P^{-1} A k(x)`.
    pub fn predict(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.p_inv * self.g(x)?)
    }

    /// `P^{-1} A J`.
    pub fn jacobian_at_origin(&self) -> DMatrix<f64> {
        self.jacobian_at(&DVector::zeros(self.centers.dim()))
            .expect("origin has the model's dimension")
    }

    pub fn jacobian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(&self.p_inv * &self.a * feature_jacobian(self.kernel.as_ref(), &self.centers, x)?)
    }

    /// Checks `P >= I`, `A K_0 = 0`, the LMI and every grid inequality
    /// carried by the centers.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.centers.dim();
        let p_min = min_eigenvalue(&self.p);
        if p_min < 1.0 - P_EIG_TOL {
            return Err(Error::Invariant(format!("min eig(P) = {p_min} < 1")));
        }
        let g0 = self.g(&DVector::zeros(n))?.amax();
        if g0 > CONSTRAINT_TOL {
            return Err(Error::Invariant(format!("|A K_0| = {g0:e}")));
        }
        let aj = &self.p * self.jacobian_at_origin();
        let lmi = max_eigenvalue(&sym(&aj));
        if lmi > -1.0 + CONSTRAINT_TOL {
            return Err(Error::Invariant(format!("max eig((AJ + J'A')/2) = {lmi} > -1")));
        }
        for z in self.centers.grid_points() {
            let v = z.dot(&self.g(z)?) + z.norm_squared();
            if v > CONSTRAINT_TOL {
                return Err(Error::Invariant(format!(
                    "grid inequality at {:?} violated by {v:e}",
                    z.as_slice()
                )));
            }
        }
        Ok(())
    }
}

impl VectorField for VectorFieldModel {
    fn dim(&self) -> usize {
        self.centers.dim()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.predict(x).expect("state has the model's dimension")
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian_at(x).expect("state has the model's dimension")
    }
}

/// Fits with the default interior point solver.
pub fn fit(
    dataset: &DataSet,
    region: &RegionSpec,
    grid: &GridSet,
    kernel: &KernelSpec,
    config: &FitConfig,
) -> Result<VectorFieldModel> {
    fit_with_solver(dataset, region, grid, kernel, config, &InteriorPoint::default())
}

/// Centers are the origin, the data and, when grid constraints are imposed,
/// the grid. Unconstrained grid centers would not change the fitted field,
/// so they are left out.
pub fn fit_with_solver(
    dataset: &DataSet,
    region: &RegionSpec,
    grid: &GridSet,
    kernel: &KernelSpec,
    config: &FitConfig,
    solver: &dyn ConicSolver,
) -> Result<VectorFieldModel> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("dataset is empty".into()));
    }
    config.validate()?;
    check_dim(region.dim, dataset.dim)?;
    grid.validate_in(region)?;
    let grid_points = if config.include_grid_constraints {
        grid.points.clone()
    } else {
        Vec::new()
    };
    let centers = Centers::new(dataset.dim, dataset.xs.clone(), grid_points)?;
    let k = kernel.build()?;
    let gram = assemble_gram(k.as_ref(), &centers);
    let program = assemble_program(&gram, dataset, &centers, config)?;
    let canonical = program.canonicalize();
    let solution = solver.solve(&canonical.cone, &config.solver_settings())?;
    let canonical_report = verify_solution(&canonical.cone, &solution);
    let solution = solution.into_optimal()?;

    let (a, p) = canonical.recover(&solution.x);
    let p = if config.fix_p_to_identity {
        p
    } else {
        clip_below_identity(&p)
    };
    let duals = canonical.recover_duals(&solution.z);
    let diagnostics = FitDiagnostics {
        status: solution.status,
        iterations: solution.iterations,
        solve_time_ms: solution.solve_time.as_secs_f64() * 1e3,
        basis_rank: canonical.basis.rank(),
        program: program.kkt_report(&a, &p, Some(&duals)),
        canonical: canonical_report,
    };
    let model = VectorFieldModel::new(*kernel, centers, a, p, config.lambda, Some(diagnostics))?;
    model.check_invariants()?;
    Ok(model)
}

/// Raises eigenvalues of a symmetric matrix below 1 to exactly 1.
fn clip_below_identity(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(sym(p));
    if eig.eigenvalues.min() >= 1.0 {
        return sym(p);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(1.0));
    sym(&(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub n_samples: usize,
    /// Fraction of samples with `x'P f(x) < 0`.
    pub fraction_negative: f64,
    /// Largest `eps` with `x'P f(x) <= -eps |x|^2` on every sample, floored at 0.
    pub epsilon: f64,
    /// Sample attaining the smallest decay rate.
    pub witness: Vec<f64>,
}

/// Samples the Lyapunov decay condition `x'P f(x) < 0` uniformly over the region.
pub fn certify_decay(model: &VectorFieldModel, region: &RegionSpec, n_samples: usize, seed: u64) -> Result<CertificateReport> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    check_dim(region.dim, model.dim())?;
    let mut rng = stream_rng(seed, 0);
    let samples: Vec<DVector<f64>> = (0..n_samples).map(|_| region.sample(&mut rng)).collect();
    let rates: Vec<(f64, bool)> = samples
        .par_iter()
        .map(|x| {
            // x'P P^{-1} A k(x)
            let v = x.dot(&model.g(x).expect("sample has the model's dimension"));
            let nx = x.norm_squared();
            let rate = if nx > 0.0 { -v / nx } else { f64::INFINITY };
            (rate, v < 0.0)
        })
        .collect();
    let negative = rates.iter().filter(|r| r.1).count();
    let (worst, min_rate) = rates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, r)| (i, r.0))
        .expect("at least one sample");
    Ok(CertificateReport {
        n_samples,
        fraction_negative: negative as f64 / n_samples as f64,
        epsilon: min_rate.max(0.0),
        witness: samples[worst].iter().copied().collect(),
    })
}

/// Axis-aligned box for evaluation lattices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl EvalBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidParameter("box needs lo < hi on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `[-1, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// `res^dim` uniformly spaced points including the corners; the first
    /// axis varies fastest.
    pub fn lattice(&self, res: usize) -> Result<Vec<DVector<f64>>> {
        if res < 2 {
            return Err(Error::InvalidParameter(format!("lattice resolution must be >= 2, got {res}")));
        }
        let n = self.dim();
        let total = res.pow(n as u32);
        Ok((0..total)
            .map(|mut idx| {
                DVector::from_fn(n, |axis, _| {
                    let k = idx % res;
                    idx /= res;
                    self.lo[axis] + (self.hi[axis] - self.lo[axis]) * k as f64 / (res - 1) as f64
                })
            })
            .collect())
    }
}

/// Truth and model values on the evaluation lattice.
#[derive(Debug, Clone)]
pub struct LatticeValues {
    pub points: Vec<DVector<f64>>,
    pub truth: Vec<DVector<f64>>,
    pub model: Vec<DVector<f64>>,
}

pub fn lattice_values(model: &dyn VectorField, truth: &dyn VectorField, eval_box: &EvalBox, res: usize) -> Result<LatticeValues> {
    check_dim(eval_box.dim(), model.dim())?;
    check_dim(eval_box.dim(), truth.dim())?;
    let points = eval_box.lattice(res)?;
    let (truth_vals, model_vals) = points
        .par_iter()
        .map(|x| (truth.eval(x), model.eval(x)))
        .unzip();
    Ok(LatticeValues {
        points,
        truth: truth_vals,
        model: model_vals,
    })
}

/// Pooled coefficient of determination over all components.
pub fn r_squared(model: &dyn VectorField, truth: &dyn VectorField, eval_box: &EvalBox, res: usize) -> Result<f64> {
    let vals = lattice_values(model, truth, eval_box, res)?;
    r_squared_from(&vals)
}

fn r_squared_from(vals: &LatticeValues) -> Result<f64> {
    let count = vals.truth.len() as f64;
    let mean = vals.truth.iter().fold(DVector::zeros(vals.truth[0].len()), |acc, f| acc + f) / count;
    let ss_tot: f64 = vals.truth.iter().map(|f| (f - &mean).norm_squared()).sum();
    let ss_res: f64 = vals.truth.iter().zip(&vals.model).map(|(f, g)| (f - g).norm_squared()).sum();
    if ss_tot <= f64::MIN_POSITIVE {
        return Err(Error::ZeroVariance);
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub init: Vec<f64>,
    /// Largest `|x_model(t) - x_truth(t)|` over the common time span.
    pub max_deviation: f64,
    pub model_final_norm: f64,
    pub truth_final_norm: f64,
    pub model_diverged: bool,
    pub truth_diverged: bool,
}

pub fn rollout_compare(
    model: &dyn VectorField,
    truth: &dyn VectorField,
    inits: &[DVector<f64>],
    t_end: f64,
    dt: f64,
) -> Result<Vec<RolloutReport>> {
    inits
        .iter()
        .map(|x0| {
            let tm = integrate(model, x0, t_end, dt)?;
            let tt = integrate(truth, x0, t_end, dt)?;
            let common = tm.len().min(tt.len());
            let max_deviation = (0..common)
                .map(|i| (&tm.states[i] - &tt.states[i]).norm())
                .fold(0.0, f64::max);
            Ok(RolloutReport {
                init: x0.iter().copied().collect(),
                max_deviation,
                model_final_norm: tm.last().norm(),
                truth_final_norm: tt.last().norm(),
                model_diverged: tm.diverged,
                truth_diverged: tt.diverged,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the truth has no variance on the lattice.
    pub r_squared: Option<f64>,
    pub rmse: Vec<f64>,
    pub rollouts: Vec<RolloutReport>,
}

pub fn evaluate(
    model: &dyn VectorField,
    truth: &dyn VectorField,
    eval_box: &EvalBox,
    res: usize,
    rollouts: &[DVector<f64>],
    t_end: f64,
    dt: f64,
) -> Result<EvalReport> {
    let vals = lattice_values(model, truth, eval_box, res)?;
    let r_squared = match r_squared_from(&vals) {
        Ok(r) => Some(r),
        Err(Error::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    let n = model.dim();
    let count = vals.points.len() as f64;
    let rmse = (0..n)
        .map(|c| {
            let ss: f64 = vals.truth.iter().zip(&vals.model).map(|(f, g)| (f[c] - g[c]).powi(2)).sum();
            (ss / count).sqrt()
        })
        .collect();
    Ok(EvalReport {
        r_squared,
        rmse,
        rollouts: rollout_compare(model, truth, rollouts, t_end, dt)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub kernel: KernelSpec,
    pub lambda: f64,
    /// Summed squared validation error; infinite if any fold failed to fit.
    pub score: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub table: Vec<CvCell>,
}

/// Fold assignment: a seeded shuffle of `0..n` dealt round-robin.
pub fn fold_indices(n: usize, k_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k_folds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k_folds}")));
    }
    if k_folds > n {
        return Err(Error::InvalidParameter(format!(
            "{k_folds} folds over {n} samples leaves a fold without data"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut folds = vec![Vec::new(); k_folds];
    for (j, i) in order.into_iter().enumerate() {
        folds[j % k_folds].push(i);
    }
    Ok(folds)
}

/// Validation error of one hyperparameter pair on every fold.
pub fn cv_fold_scores(
    dataset: &DataSet,
    region: &RegionSpec,
    grid: &GridSet,
    folds: &[Vec<usize>],
    kernel: &KernelSpec,
    config: &FitConfig,
) -> Vec<f64> {
    folds
        .iter()
        .map(|held_out| {
            let train: Vec<usize> = (0..dataset.len()).filter(|i| !held_out.contains(i)).collect();
            let score = || -> Result<f64> {
                let model = fit(&dataset.subset(&train)?, region, grid, kernel, config)?;
                held_out.iter().try_fold(0.0, |acc, &i| {
                    Ok(acc + (&dataset.ys[i] - model.predict(&dataset.xs[i])?).norm_squared())
                })
            };
            score().unwrap_or(f64::INFINITY)
        })
        .collect()
}

/// Picks the lowest score; exact ties go to the larger `lambda`, then to
/// the larger kernel scale.
pub fn select_cell(table: &[CvCell]) -> Option<&CvCell> {
    table.iter().min_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(b.lambda.total_cmp(&a.lambda))
            .then(b.kernel.scale().total_cmp(&a.kernel.scale()))
    })
}

/// k-fold cross-validation over every (kernel, lambda) pair. Grid and
/// equilibrium constraints (per `base`) apply in every fold; only the data
/// pairs are split.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    dataset: &DataSet,
    region: &RegionSpec,
    grid: &GridSet,
    kernel_grid: &[KernelSpec],
    lambda_grid: &[f64],
    k_folds: usize,
    seed: u64,
    base: &FitConfig,
) -> Result<CvOutcome> {
    if kernel_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::InvalidParameter("hyperparameter grids must be nonempty".into()));
    }
    for k in kernel_grid {
        k.validate()?;
    }
    for &l in lambda_grid {
        FitConfig { lambda: l, ..*base }.validate()?;
    }
    let folds = fold_indices(dataset.len(), k_folds, seed)?;
    let cells: Vec<(KernelSpec, f64)> = kernel_grid
        .iter()
        .flat_map(|k| lambda_grid.iter().map(move |&l| (*k, l)))
        .collect();
    let table: Vec<CvCell> = cells
        .par_iter()
        .map(|&(kernel, lambda)| {
            let config = FitConfig { lambda, ..*base };
            let fold_scores = cv_fold_scores(dataset, region, grid, &folds, &kernel, &config);
            CvCell {
                kernel,
                lambda,
                score: fold_scores.iter().sum(),
                fold_scores,
            }
        })
        .collect();
    let best = select_cell(&table).expect("nonempty table");
    Ok(CvOutcome {
        kernel: best.kernel,
        lambda: best.lambda,
        table: table.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DataSetMeta, LinearField};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn linear_data(xs: &[DVector<f64>]) -> DataSet {
        let ys = xs.iter().map(|x| -x * 2.0).collect();
        DataSet::new(2, xs.to_vec(), ys, DataSetMeta::default()).unwrap()
    }

    #[test]
    fn lattice_layout() {
        let pts = EvalBox::unit(2).lattice(3).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], v(&[-1.0, -1.0]));
        assert_eq!(pts[1], v(&[0.0, -1.0]));
        assert_eq!(pts[8], v(&[1.0, 1.0]));
        assert!(EvalBox::unit(2).lattice(1).is_err());
        assert!(EvalBox::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn r_squared_of_truth_and_of_mean() {
        let truth = LinearField::new(DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]));
        let b = EvalBox::unit(2);
        assert_eq!(r_squared(&truth, &truth, &b, 11).unwrap(), 1.0);
        // The field is odd, so its lattice mean is zero.
        let zero = LinearField::new(DMatrix::zeros(2, 2));
        assert!(r_squared(&zero, &truth, &b, 11).unwrap().abs() < 1e-12);
        assert!(matches!(r_squared(&truth, &zero, &b, 11), Err(Error::ZeroVariance)));
    }

    #[test]
    fn folds_partition_the_data() {
        let folds = fold_indices(38, 5, 4).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..38).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 7 || f.len() == 8));
        assert_eq!(folds, fold_indices(38, 5, 4).unwrap());
        assert!(fold_indices(3, 4, 0).is_err());
        assert!(fold_indices(3, 1, 0).is_err());
    }

    #[test]
    fn selection_breaks_ties_toward_regularization() {
        let cell = |sigma: f64, lambda: f64, score: f64| CvCell {
            kernel: KernelSpec::gaussian(sigma),
            lambda,
            score,
            fold_scores: vec![score],
        };
        let table = vec![cell(0.5, 1e-3, 1.0), cell(0.5, 1e-2, 1.0), cell(1.0, 1e-2, 1.0), cell(2.0, 1.0, 2.0)];
        let best = select_cell(&table).unwrap();
        assert_eq!((best.kernel, best.lambda), (KernelSpec::gaussian(1.0), 1e-2));
    }

    #[test]
    fn near_interpolation_of_one_sample() {
        let data = linear_data(&[v(&[0.3, -0.2])]);
        let region = RegionSpec::ball(2, 1.0).unwrap();
        let model = fit(
            &data,
            &region,
            &GridSet::empty(2),
            &KernelSpec::gaussian(0.5),
            &FitConfig::ablation(1e-6),
        )
        .unwrap();
        let err = (model.predict(&data.xs[0]).unwrap() - &data.ys[0]).amax();
        assert!(err < 1e-2, "{err}");
        assert!(model.predict(&DVector::zeros(2)).unwrap().amax() < 1e-6);
    }

    #[test]
    fn constrained_fit_satisfies_invariants() {
        let xs: Vec<_> = (0..8)
            .map(|i| {
                let t = i as f64 * 0.8;
                v(&[0.7 * t.cos(), 0.7 * t.sin()])
            })
            .collect();
        let data = linear_data(&xs);
        let region = RegionSpec::ball(2, 1.0).unwrap();
        let grid = crate::grid::generate_polar_grid(&region, 3, 8).unwrap();
        let model = fit(&data, &region, &grid, &KernelSpec::gaussian(0.6), &FitConfig::constrained(1e-3)).unwrap();
        model.check_invariants().unwrap();
        let diag = model.diagnostics().unwrap();
        assert_eq!(diag.status, SolveStatus::Optimal);
        assert!(diag.program.max_primal_violation() < 1e-6, "{:?}", diag.program);
        let cert = certify_decay(&model, &region, 2000, 1).unwrap();
        assert_eq!(cert.fraction_negative, 1.0);
        assert!(cert.epsilon > 0.0);
    }
}
