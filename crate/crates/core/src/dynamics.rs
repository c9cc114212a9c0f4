//! Vector fields, fixed-step integration, synthetic data generation and
//! derivative estimation from sampled trajectories.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::registry::{Params, Registry};
use crate::sampling::stream_rng;

/// An autonomous vector field `x' = f(x)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `Df(x)`; central differences unless overridden.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let h = 1e-6 * (1.0 + x.norm());
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (self.eval(&xp) - self.eval(&xm)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    }

    /// Second derivative applied to a pair of directions, `D^2 f(x)(h1, h2)`.
    fn second_derivative(&self, x: &DVector<f64>, h1: &DVector<f64>, h2: &DVector<f64>) -> DVector<f64> {
        let t = 1e-4 * (1.0 + x.norm());
        let jp = self.jacobian(&(x + h2 * t));
        let jm = self.jacobian(&(x - h2 * t));
        (jp - jm) * h1 / (2.0 * t)
    }
}

/// The planar cubic benchmark
///
/// ```text
/// x1' = -5 x2 - 4 x1 + x1 x2^2 - 6 x1^3
/// x2' = c x1 - 4 x2 + 4 x1^2 x2 + x2^3
/// ```
///
/// With the printed coupling `c = -20` the linearization at the origin,
/// `[[-4, -5], [-20, -4]]`, has eigenvalues `-4 +- 10`, so the origin is a
/// saddle and trajectories from the benchmark's initial points blow up
/// within a fraction of a second. With `c = +20` the eigenvalues are
/// `-4 +- 10i`, the disk of radius 1.5 lies inside the region of
/// attraction, and `(1, 1.5)` lies outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicBenchmark {
    pub coupling: f64,
}

impl CubicBenchmark {
    pub const PRINTED_COUPLING: f64 = -20.0;
    pub const STABLE_COUPLING: f64 = 20.0;

    pub fn printed() -> Self {
        Self {
            coupling: Self::PRINTED_COUPLING,
        }
    }

    pub fn stable() -> Self {
        Self {
            coupling: Self::STABLE_COUPLING,
        }
    }

    fn hessians(x: &DVector<f64>) -> [DMatrix<f64>; 2] {
        let (a, b) = (x[0], x[1]);
        [
            DMatrix::from_row_slice(2, 2, &[-36.0 * a, 2.0 * b, 2.0 * b, 2.0 * a]),
            DMatrix::from_row_slice(2, 2, &[8.0 * b, 8.0 * a, 8.0 * a, 6.0 * b]),
        ]
    }
}

impl VectorField for CubicBenchmark {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, b) = (x[0], x[1]);
        DVector::from_column_slice(&[
            -5.0 * b - 4.0 * a + a * b * b - 6.0 * a * a * a,
            self.coupling * a - 4.0 * b + 4.0 * a * a * b + b * b * b,
        ])
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (a, b) = (x[0], x[1]);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -4.0 + b * b - 18.0 * a * a,
                -5.0 + 2.0 * a * b,
                self.coupling + 8.0 * a * b,
                -4.0 + 4.0 * a * a + 3.0 * b * b,
            ],
        )
    }

    fn second_derivative(&self, x: &DVector<f64>, h1: &DVector<f64>, h2: &DVector<f64>) -> DVector<f64> {
        let [h_1, h_2] = Self::hessians(x);
        DVector::from_column_slice(&[h1.dot(&(h_1 * h2)), h1.dot(&(h_2 * h2))])
    }
}

/// The benchmark exactly as printed (coupling `-20`).
pub fn example_system() -> CubicBenchmark {
    CubicBenchmark::printed()
}

/// The benchmark with the coupling sign that makes the origin attracting.
pub fn stable_example_system() -> CubicBenchmark {
    CubicBenchmark::stable()
}

#[derive(Debug, Clone)]
pub struct LinearField {
    pub matrix: DMatrix<f64>,
}

impl LinearField {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square(), "linear field needs a square matrix");
        Self { matrix }
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn second_derivative(&self, _x: &DVector<f64>, _h1: &DVector<f64>, _h2: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim())
    }
}

/// Wraps a closure as a field; derivatives fall back to finite differences.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }
}

/// Named reference systems for the command line.
pub fn system_registry() -> Registry<dyn VectorField> {
    let mut reg: Registry<dyn VectorField> = Registry::new("system");
    reg.register("eq27", |_: &Params| Ok(Box::new(CubicBenchmark::printed())));
    reg.register("eq27-stable", |_: &Params| Ok(Box::new(CubicBenchmark::stable())));
    reg.register("cubic", |p: &Params| {
        Ok(Box::new(CubicBenchmark {
            coupling: p.get_or("coupling", CubicBenchmark::PRINTED_COUPLING),
        }))
    });
    reg
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Set when a non-finite state was reached; the trajectory is truncated
    /// at the last finite state.
    pub diverged: bool,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<DVector<f64>>) -> Result<Self> {
        check_dim(times.len(), states.len())?;
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("sample times must be strictly increasing".into()));
        }
        Ok(Self {
            times,
            states,
            diverged: false,
        })
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Above this norm a state is treated as blown up even if still finite.
const BLOWUP_NORM: f64 = 1e100;

fn rk4_step(field: &dyn VectorField, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = field.eval(x);
    let k2 = field.eval(&(x + &k1 * (0.5 * h)));
    let k3 = field.eval(&(x + &k2 * (0.5 * h)));
    let k4 = field.eval(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Classical fixed-step RK4 from `t = 0` to `t_end`, recording every step.
/// The final step is shortened when `t_end` is not a multiple of `dt`.
pub fn integrate(field: &dyn VectorField, x0: &DVector<f64>, t_end: f64, dt: f64) -> Result<Trajectory> {
    check_dim(field.dim(), x0.len())?;
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "integration needs dt > 0 and t_end > 0, got dt={dt}, t_end={t_end}"
        )));
    }
    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.clone());
    let mut x = x0.clone();
    let mut diverged = false;
    for k in 0..steps {
        let t = k as f64 * dt;
        let h = if k + 1 == steps { t_end - t } else { dt };
        let next = rk4_step(field, &x, h);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > BLOWUP_NORM {
            diverged = true;
            break;
        }
        x = next;
        times.push(if k + 1 == steps { t_end } else { (k + 1) as f64 * dt });
        states.push(x.clone());
    }
    Ok(Trajectory {
        times,
        states,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DataSetMeta {
    pub seed: Option<u64>,
    pub noise_var: Option<f64>,
    pub t_end: Option<f64>,
    pub n_per_traj: Option<usize>,
    pub inits: Vec<Vec<f64>>,
    pub system: Option<String>,
}

/// Pairs `(x_j, y_j)` where `y_j` approximates `f(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub dim: usize,
    pub xs: Vec<DVector<f64>>,
    pub ys: Vec<DVector<f64>>,
    pub meta: DataSetMeta,
}

impl DataSet {
    pub fn new(dim: usize, xs: Vec<DVector<f64>>, ys: Vec<DVector<f64>>, meta: DataSetMeta) -> Result<Self> {
        check_dim(xs.len(), ys.len())?;
        if xs.is_empty() {
            return Err(Error::InvalidParameter("a data set needs at least one pair".into()));
        }
        for v in xs.iter().chain(&ys) {
            check_dim(dim, v.len())?;
            if !v.iter().all(|e| e.is_finite()) {
                return Err(Error::NonFinite { at: v.iter().copied().collect() });
            }
        }
        Ok(Self { dim, xs, ys, meta })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<DataSet> {
        DataSet::new(
            self.dim,
            indices.iter().map(|&i| self.xs[i].clone()).collect(),
            indices.iter().map(|&i| self.ys[i].clone()).collect(),
            self.meta.clone(),
        )
    }
}

/// Sub-step used between sample instants when generating data.
const SAMPLING_DT: f64 = 1e-3;

/// Integrates from each initial point, samples `n_per_traj` states at
/// uniform spacing over `[0, t_end]`, and pairs each with `f(x) + noise`
/// (noise on the derivative targets, `N(0, noise_var I)`).
pub fn sample_dataset(
    field: &dyn VectorField,
    inits: &[DVector<f64>],
    n_per_traj: usize,
    t_end: f64,
    noise_var: f64,
    seed: u64,
) -> Result<DataSet> {
    if inits.is_empty() {
        return Err(Error::InvalidParameter("at least one initial point is required".into()));
    }
    if n_per_traj < 2 {
        return Err(Error::InvalidParameter("need at least two samples per trajectory".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance must be >= 0, got {noise_var}")));
    }
    let n = field.dim();
    let spacing = t_end / (n_per_traj - 1) as f64;
    let sub = (spacing / SAMPLING_DT).ceil().max(1.0) as usize;
    let dt = spacing / sub as f64;
    let noise = Normal::new(0.0, noise_var.sqrt())
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut xs = Vec::with_capacity(inits.len() * n_per_traj);
    let mut ys = Vec::with_capacity(inits.len() * n_per_traj);
    for (ti, x0) in inits.iter().enumerate() {
        check_dim(n, x0.len())?;
        let traj = integrate(field, x0, t_end, dt)?;
        if traj.diverged || traj.len() < (n_per_traj - 1) * sub + 1 {
            return Err(Error::Divergence {
                time: *traj.times.last().unwrap_or(&0.0),
            });
        }
        let mut rng = stream_rng(seed, ti as u64);
        for k in 0..n_per_traj {
            let x = traj.states[k * sub].clone();
            let mut y = field.eval(&x);
            if noise_var > 0.0 {
                for e in y.iter_mut() {
                    *e += noise.sample(&mut rng);
                }
            }
            xs.push(x);
            ys.push(y);
        }
    }
    let meta = DataSetMeta {
        seed: Some(seed),
        noise_var: Some(noise_var),
        t_end: Some(t_end),
        n_per_traj: Some(n_per_traj),
        inits: inits.iter().map(|v| v.iter().copied().collect()).collect(),
        system: None,
    };
    DataSet::new(n, xs, ys, meta)
}

/// Finite-difference time derivatives: central differences in the interior,
/// second-order one-sided stencils at the ends.
pub fn estimate_derivatives(traj: &Trajectory) -> Result<Vec<DVector<f64>>> {
    let (t, x) = (&traj.times, &traj.states);
    let k = x.len();
    if k < 3 {
        return Err(Error::InvalidParameter(format!(
            "derivative estimation needs at least 3 samples, got {k}"
        )));
    }
    let mut out = Vec::with_capacity(k);
    {
        let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
        let c0 = -(2.0 * h1 + h2) / (h1 * (h1 + h2));
        let c1 = (h1 + h2) / (h1 * h2);
        let c2 = -h1 / (h2 * (h1 + h2));
        out.push(&x[0] * c0 + &x[1] * c1 + &x[2] * c2);
    }
    for i in 1..k - 1 {
        out.push((&x[i + 1] - &x[i - 1]) / (t[i + 1] - t[i - 1]));
    }
    {
        let (h1, h2) = (t[k - 1] - t[k - 2], t[k - 2] - t[k - 3]);
        let c0 = (2.0 * h1 + h2) / (h1 * (h1 + h2));
        let c1 = -(h1 + h2) / (h1 * h2);
        let c2 = h1 / (h2 * (h1 + h2));
        out.push(&x[k - 1] * c0 + &x[k - 2] * c1 + &x[k - 3] * c2);
    }
    Ok(out)
}

/// Data set built from measured trajectories and their estimated derivatives.
pub fn dataset_from_trajectories(trajs: &[Trajectory]) -> Result<DataSet> {
    let dim = trajs
        .first()
        .map(|t| t.initial().len())
        .ok_or_else(|| Error::InvalidParameter("no trajectories given".into()))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for traj in trajs {
        ys.extend(estimate_derivatives(traj)?);
        xs.extend(traj.states.iter().cloned());
    }
    let meta = DataSetMeta {
        inits: trajs.iter().map(|t| t.initial().iter().copied().collect()).collect(),
        ..DataSetMeta::default()
    };
    DataSet::new(dim, xs, ys, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn benchmark_values() {
        let f = example_system();
        assert_eq!(f.eval(&v(&[0.0, 0.0])), v(&[0.0, 0.0]));
        assert_eq!(f.eval(&v(&[1.0, -1.0])), v(&[-4.0, -21.0]));
        let j0 = f.jacobian(&v(&[0.0, 0.0]));
        assert_eq!(j0, DMatrix::from_row_slice(2, 2, &[-4.0, -5.0, -20.0, -4.0]));
    }

    #[test]
    fn printed_benchmark_is_a_saddle_and_stable_variant_spirals_in() {
        let printed = example_system().jacobian(&v(&[0.0, 0.0]));
        // Eigenvalues -4 +- 10: trace -8, determinant -84.
        assert_eq!(printed.trace(), -8.0);
        assert!((printed.determinant() + 84.0).abs() < 1e-12);
        assert!(integrate(&example_system(), &v(&[1.0, -1.0]), 1.0, 1e-3).unwrap().diverged);

        let stable = stable_example_system();
        assert_eq!(stable.eval(&v(&[1.0, -1.0])), v(&[-4.0, 19.0]));
        for x0 in [v(&[1.0, -1.0]), v(&[-1.0, 1.0]), v(&[-1.45, 0.0])] {
            let t = integrate(&stable, &x0, 10.0, 1e-3).unwrap();
            assert!(!t.diverged && t.last().norm() < 1e-6, "{x0:?}");
        }
        assert!(integrate(&stable, &v(&[1.0, 1.5]), 10.0, 1e-3).unwrap().diverged);
    }

    #[test]
    fn benchmark_derivatives_match_finite_differences() {
        let f = example_system();
        let fd = FnField::new(2, |x: &DVector<f64>| CubicBenchmark::printed().eval(x));
        for p in [v(&[0.3, -0.8]), v(&[-1.1, 0.4]), v(&[0.9, 1.2])] {
            let err = (f.jacobian(&p) - fd.jacobian(&p)).abs().max();
            assert!(err < 1e-7, "jacobian error {err}");
            let (h1, h2) = (v(&[0.6, 0.8]), v(&[-1.0, 0.0]));
            let err2 = (f.second_derivative(&p, &h1, &h2) - fd.second_derivative(&p, &h1, &h2)).norm();
            assert!(err2 < 1e-4, "second derivative error {err2}");
        }
    }

    #[test]
    fn zero_field_is_constant_and_equilibrium_is_preserved() {
        let zero = LinearField::new(DMatrix::zeros(2, 2));
        let traj = integrate(&zero, &v(&[0.4, -2.0]), 1.0, 0.1).unwrap();
        assert!(traj.states.iter().all(|s| s == &v(&[0.4, -2.0])));
        let eq = integrate(&example_system(), &v(&[0.0, 0.0]), 10.0, 0.01).unwrap();
        assert!(eq.states.iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let decay = LinearField::new(DMatrix::from_element(1, 1, -1.0));
        let traj = integrate(&decay, &v(&[1.0]), 1.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 1001);
        assert!((traj.last()[0] - (-1.0f64).exp()).abs() <= 1e-9);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
    }

    #[test]
    fn partial_final_step_lands_on_t_end() {
        let decay = LinearField::new(DMatrix::from_element(1, 1, -1.0));
        let traj = integrate(&decay, &v(&[1.0]), 0.25, 0.1).unwrap();
        assert_eq!(traj.times.len(), 4);
        assert_eq!(*traj.times.last().unwrap(), 0.25);
        assert!((traj.last()[0] - (-0.25f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn blowup_is_truncated_and_flagged() {
        let blow = FnField::new(1, |x: &DVector<f64>| x.map(|e| e * e));
        let traj = integrate(&blow, &v(&[1.0]), 5.0, 1e-2).unwrap();
        assert!(traj.diverged);
        assert!(traj.states.iter().all(|s| s[0].is_finite()));
        assert!(*traj.times.last().unwrap() < 5.0);
    }

    #[test]
    fn invalid_integration_arguments() {
        let f = example_system();
        assert!(integrate(&f, &v(&[1.0, 0.0]), 1.0, 0.0).is_err());
        assert!(integrate(&f, &v(&[1.0, 0.0]), -1.0, 0.1).is_err());
        assert!(integrate(&f, &v(&[1.0]), 1.0, 0.1).is_err());
    }

    #[test]
    fn noiseless_dataset_is_exact_and_seeded_dataset_is_reproducible() {
        let f = stable_example_system();
        let inits = [v(&[1.0, -1.0]), v(&[-1.0, -1.0])];
        let clean = sample_dataset(&f, &inits, 19, 1.0, 0.0, 0).unwrap();
        assert_eq!(clean.len(), 38);
        for (x, y) in clean.xs.iter().zip(&clean.ys) {
            assert_eq!(&f.eval(x), y);
        }
        assert_eq!(clean.xs[0], inits[0]);
        assert_eq!(clean.xs[19], inits[1]);
        let a = sample_dataset(&f, &inits, 19, 1.0, 0.001, 42).unwrap();
        let b = sample_dataset(&f, &inits, 19, 1.0, 0.001, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(&f, &inits, 19, 1.0, 0.001, 43).unwrap();
        assert_ne!(a.ys, c.ys);
        assert_eq!(a.xs, c.xs);
    }

    #[test]
    fn dataset_errors() {
        let f = example_system();
        assert!(sample_dataset(&f, &[], 19, 1.0, 0.0, 0).is_err());
        assert!(sample_dataset(&f, &[v(&[1.0, 0.0])], 1, 1.0, 0.0, 0).is_err());
        assert!(sample_dataset(&f, &[v(&[1.0, 0.0])], 5, 1.0, -1.0, 0).is_err());
        // Far outside the region of attraction the cubic terms blow up.
        assert!(matches!(
            sample_dataset(&f, &[v(&[5.0, 5.0])], 5, 10.0, 0.0, 0),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn derivative_estimates_are_exact_on_affine_and_quadratic_motion() {
        let times: Vec<f64> = (0..6).map(|k| 0.3 * k as f64).collect();
        let vel = v(&[2.0, -1.5]);
        let states = times.iter().map(|&t| &vel * t).collect();
        let traj = Trajectory::new(times, states).unwrap();
        for d in estimate_derivatives(&traj).unwrap() {
            assert!((d - &vel).norm() < 1e-12);
        }

        let times = vec![0.0, 0.1, 0.2];
        let states = times.iter().map(|&t| v(&[t * t, 0.0])).collect();
        let traj = Trajectory::new(times, states).unwrap();
        let d = estimate_derivatives(&traj).unwrap();
        assert!((d[1][0] - 0.2).abs() < 1e-15);
        assert!((d[0][0] - 0.0).abs() < 1e-12);
        assert!((d[2][0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn derivative_estimation_needs_three_samples() {
        let traj = Trajectory::new(vec![0.0, 1.0], vec![v(&[0.0]), v(&[1.0])]).unwrap();
        assert!(estimate_derivatives(&traj).is_err());
        assert!(Trajectory::new(vec![0.0, 0.0], vec![v(&[0.0]), v(&[1.0])]).is_err());
    }

    #[test]
    fn trajectory_data_set_uses_estimated_derivatives() {
        let f = stable_example_system();
        let t1 = integrate(&f, &v(&[1.0, -1.0]), 0.5, 0.002).unwrap();
        let ds = dataset_from_trajectories(&[t1.clone()]).unwrap();
        assert_eq!(ds.len(), t1.len());
        let err = ds.xs.iter().zip(&ds.ys).skip(1).take(t1.len() - 2)
            .map(|(x, y)| (f.eval(x) - y).norm())
            .fold(0.0, f64::max);
        assert!(err < 5e-2, "max err {err}");
    }
}
