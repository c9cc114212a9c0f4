//! Region-of-attraction grids: the (alpha, beta) cover condition, the bounds
//! on alpha and beta that make a grid certify decay on the whole region, grid
//! constructors and sampling-based verification.
//!
//! A set `Z` of nonzero points in the region `Omega` is an (alpha, beta)-grid
//! when `Omega` is contained in the union of the balls `B(z, alpha |z|)` and
//! `B(0, beta)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::VectorField;
use crate::error::{check_dim, Error, Result};
use crate::linalg::spectral_norm;
use crate::registry::{Params, Registry};
use crate::sampling::{stream_rng, uniform_in_ball, unit_direction};

/// Closed ball of the given radius centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub dim: usize,
    pub radius: f64,
}

impl RegionSpec {
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "region needs dim > 0 and radius > 0, got dim={dim}, radius={radius}"
            )));
        }
        Ok(Self { dim, radius })
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim && x.norm() <= self.radius * (1.0 + 1e-12)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        uniform_in_ball(rng, self.dim, self.radius)
    }
}

/// Inputs and outputs of the grid certificate bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCertificateParams {
    pub eps: f64,
    pub l1: f64,
    pub l2: f64,
    pub norm_p: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GridCertificateParams {
    /// Largest admissible alpha and beta for the given constants.
    pub fn from_bounds(eps: f64, l1: f64, l2: f64, norm_p: f64) -> Result<Self> {
        let (alpha, beta) = alpha_beta_bounds(eps, l1, l2, norm_p)?;
        Ok(Self {
            eps,
            l1,
            l2,
            norm_p,
            alpha,
            beta,
        })
    }

    /// True when alpha and beta respect the bounds.
    pub fn is_admissible(&self) -> bool {
        match alpha_beta_bounds(self.eps, self.l1, self.l2, self.norm_p) {
            Ok((a, b)) => self.alpha > 0.0 && self.beta > 0.0 && self.alpha <= a && self.beta <= b,
            Err(_) => false,
        }
    }
}

/// `alpha_max = sqrt((1 + L1 |P|) / (eps + L1 |P|)) - 1` and
/// `beta_max = (1 - eps) / (L2 |P|)` (infinite when `L2 |P| = 0`).
pub fn alpha_beta_bounds(eps: f64, l1: f64, l2: f64, norm_p: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(l1 >= 0.0 && l2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Lipschitz constants must be nonnegative, got L1={l1}, L2={l2}"
        )));
    }
    if !(norm_p >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "|P| must be at least 1 since P >= I, got {norm_p}"
        )));
    }
    let a = l1 * norm_p;
    let alpha = ((1.0 + a) / (eps + a)).sqrt() - 1.0;
    let b = l2 * norm_p;
    let beta = if b == 0.0 { f64::INFINITY } else { (1.0 - eps) / b };
    Ok((alpha, beta))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSet {
    pub dim: usize,
    pub points: Vec<DVector<f64>>,
}

impl GridSet {
    pub fn new(dim: usize, points: Vec<DVector<f64>>) -> Result<Self> {
        for z in &points {
            check_dim(dim, z.len())?;
            if z.norm() == 0.0 {
                return Err(Error::InvalidParameter("grid points must be nonzero".into()));
            }
        }
        Ok(Self { dim, points })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            points: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate_in(&self, region: &RegionSpec) -> Result<()> {
        check_dim(region.dim, self.dim)?;
        match self.points.iter().find(|z| !region.contains(z)) {
            Some(z) => Err(Error::InvalidParameter(format!(
                "grid point {:?} lies outside the region",
                z.as_slice()
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub covered: bool,
    pub witness: Option<Vec<f64>>,
    pub n_samples: usize,
    /// Worst point's normalized distance: `min(|x| / beta, min_i |x - z_i| / (alpha |z_i|))`
    /// maximized over the checked points. At most 1 when covered.
    pub max_gap_ratio: f64,
}

/// Radii `r j / n_radial` for `j = 1..=n_radial` times angles `2 pi k / n_angular`.
pub fn generate_polar_grid(region: &RegionSpec, n_radial: usize, n_angular: usize) -> Result<GridSet> {
    if region.dim != 2 {
        return Err(Error::InvalidParameter(format!(
            "polar grids are planar; region has dimension {} (use the greedy cover instead)",
            region.dim
        )));
    }
    if n_radial == 0 || n_angular == 0 {
        return Err(Error::InvalidParameter("polar grid needs at least one radius and one angle".into()));
    }
    let mut points = Vec::with_capacity(n_radial * n_angular);
    for j in 1..=n_radial {
        let rho = region.radius * j as f64 / n_radial as f64;
        for k in 0..n_angular {
            let theta = std::f64::consts::TAU * k as f64 / n_angular as f64;
            points.push(DVector::from_column_slice(&[rho * theta.cos(), rho * theta.sin()]));
        }
    }
    GridSet::new(2, points)
}

/// Coverage ratio of a single point (<= 1 means covered).
fn gap_ratio(x: &DVector<f64>, grid: &GridSet, alpha: f64, beta: f64) -> f64 {
    let mut best = x.norm() / beta;
    for z in &grid.points {
        let r = (x - z).norm() / (alpha * z.norm());
        if r < best {
            best = r;
        }
    }
    best
}

/// Integer lattice of spacing `h` clipped to the box `[-(extent), extent]^n`.
struct Lattice {
    dim: usize,
    h: f64,
    half: i64,
    side: usize,
}

impl Lattice {
    fn new(dim: usize, h: f64, extent: f64) -> Self {
        let half = (extent / h).ceil() as i64;
        Self {
            dim,
            h,
            half,
            side: (2 * half + 1) as usize,
        }
    }

    fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    fn coords(&self, mut idx: usize) -> Vec<i64> {
        let mut c = vec![0; self.dim];
        for slot in c.iter_mut() {
            *slot = (idx % self.side) as i64 - self.half;
            idx /= self.side;
        }
        c
    }

    fn index(&self, c: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for &ci in c.iter().rev() {
            if ci < -self.half || ci > self.half {
                return None;
            }
            idx = idx * self.side + (ci + self.half) as usize;
        }
        Some(idx)
    }

    fn point(&self, idx: usize) -> DVector<f64> {
        DVector::from_iterator(self.dim, self.coords(idx).into_iter().map(|c| c as f64 * self.h))
    }

    /// Calls `f` for every lattice index inside the ball `B(center, radius)`.
    fn for_each_in_ball(&self, center: &DVector<f64>, radius: f64, mut f: impl FnMut(usize)) {
        let lo: Vec<i64> = center.iter().map(|c| ((c - radius) / self.h).floor() as i64).collect();
        let hi: Vec<i64> = center.iter().map(|c| ((c + radius) / self.h).ceil() as i64).collect();
        let mut cur = lo.clone();
        let r2 = radius * radius;
        loop {
            let d2: f64 = cur
                .iter()
                .zip(center.iter())
                .map(|(&ci, &x)| (ci as f64 * self.h - x).powi(2))
                .sum();
            if d2 <= r2 {
                if let Some(idx) = self.index(&cur) {
                    f(idx);
                }
            }
            let mut axis = 0;
            loop {
                if axis == self.dim {
                    return;
                }
                cur[axis] += 1;
                if cur[axis] <= hi[axis] {
                    break;
                }
                cur[axis] = lo[axis];
                axis += 1;
            }
        }
    }
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct HeapEntry {
    gain: usize,
    norm_bits: u64,
    rev_index: std::cmp::Reverse<usize>,
}

/// Greedy set cover over a lattice of candidates.
///
/// Lattice points are both candidate centers and cover targets. A candidate
/// `z` only claims a target `t` when `|t - z| + delta <= alpha |z|`, where
/// `delta` is the lattice covering radius, so every point of the region
/// (not just every target) ends up inside a chosen ball or inside
/// `B(0, beta)`. Ties go to the candidate with the largest norm.
pub fn greedy_cover_grid(region: &RegionSpec, alpha: f64, beta: f64, oversample: f64) -> Result<GridSet> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha and beta must be positive, got alpha={alpha}, beta={beta}"
        )));
    }
    if !(oversample >= 1.0) {
        return Err(Error::InvalidParameter(format!("oversample factor must be >= 1, got {oversample}")));
    }
    let n = region.dim;
    let r = region.radius;
    if beta >= r {
        return Ok(GridSet::empty(n));
    }

    let delta = alpha * beta / (2.5 * (1.0 + alpha) * oversample);
    let h = 2.0 * delta / (n as f64).sqrt();
    let lattice = Lattice::new(n, h, r + delta);
    if lattice.len() > 50_000_000 {
        return Err(Error::InvalidParameter(format!(
            "greedy cover lattice too large ({} points); increase alpha or beta",
            lattice.len()
        )));
    }

    // `true` marks lattice points that do not need covering.
    let mut done = vec![true; lattice.len()];
    let mut remaining = 0usize;
    let mut candidates = Vec::new();
    for idx in 0..lattice.len() {
        let norm = lattice.point(idx).norm();
        if norm >= beta - delta && norm <= r + delta {
            done[idx] = false;
            remaining += 1;
        }
        if norm > 0.0 && norm <= r {
            candidates.push((idx, norm));
        }
    }

    let claim_radius = |norm: f64| alpha * norm - delta;
    let gain_of = |done: &[bool], idx: usize, norm: f64| -> usize {
        let radius = claim_radius(norm);
        if radius <= 0.0 {
            return 0;
        }
        let mut g = 0;
        lattice.for_each_in_ball(&lattice.point(idx), radius, |t| {
            if !done[t] {
                g += 1;
            }
        });
        g
    };

    let mut heap: BinaryHeap<HeapEntry> = candidates
        .iter()
        .enumerate()
        .filter_map(|(ci, &(idx, norm))| {
            let gain = gain_of(&done, idx, norm);
            (gain > 0).then_some(HeapEntry {
                gain,
                norm_bits: norm.to_bits(),
                rev_index: std::cmp::Reverse(ci),
            })
        })
        .collect();

    let mut chosen = Vec::new();
    while remaining > 0 {
        let Some(top) = heap.pop() else { break };
        let (idx, norm) = candidates[top.rev_index.0];
        let gain = gain_of(&done, idx, norm);
        if gain == 0 {
            continue;
        }
        let still_best = heap.peek().is_none_or(|next| {
            (gain, top.norm_bits, top.rev_index).cmp(&(next.gain, next.norm_bits, next.rev_index))
                != Ordering::Less
        });
        if gain < top.gain && !still_best {
            heap.push(HeapEntry { gain, ..top });
            continue;
        }
        let center = lattice.point(idx);
        lattice.for_each_in_ball(&center, claim_radius(norm), |t| {
            if !done[t] {
                done[t] = true;
                remaining -= 1;
            }
        });
        chosen.push(center);
    }

    if remaining > 0 {
        let witness = done
            .iter()
            .position(|d| !d)
            .map(|idx| lattice.point(idx).iter().copied().collect())
            .unwrap_or_default();
        return Err(Error::CoverFailure { witness });
    }
    GridSet::new(n, chosen)
}

/// Number of deterministic directions used to probe the outer boundary.
const BOUNDARY_DIRECTIONS: usize = 720;

/// Sampling-based check of the cover condition: `n_samples` uniform points
/// plus a deterministic lattice over the region and a ring of points on its
/// boundary sphere.
pub fn verify_cover(
    grid: &GridSet,
    alpha: f64,
    beta: f64,
    region: &RegionSpec,
    n_samples: usize,
    seed: u64,
) -> CoverReport {
    let n = region.dim;
    let r = region.radius;
    let mut probes: Vec<DVector<f64>> = Vec::with_capacity(n_samples + 2 * BOUNDARY_DIRECTIONS);

    let mut rng = stream_rng(seed, 0);
    probes.extend((0..n_samples).map(|_| region.sample(&mut rng)));

    let per_axis = ((n_samples.max(1) as f64).powf(1.0 / n as f64) / 2.0).ceil().max(2.0);
    let lattice = Lattice::new(n, r / per_axis, r);
    probes.extend(
        (0..lattice.len())
            .map(|i| lattice.point(i))
            .filter(|p| p.norm() <= r),
    );

    if n == 2 {
        probes.extend((0..BOUNDARY_DIRECTIONS).map(|k| {
            let t = std::f64::consts::TAU * k as f64 / BOUNDARY_DIRECTIONS as f64;
            DVector::from_column_slice(&[r * t.cos(), r * t.sin()])
        }));
    } else {
        let mut dir_rng = stream_rng(seed, 1);
        probes.extend((0..BOUNDARY_DIRECTIONS).map(|_| unit_direction(&mut dir_rng, n) * r));
        for axis in 0..n {
            for sign in [-1.0, 1.0] {
                let mut e = DVector::zeros(n);
                e[axis] = sign * r;
                probes.push(e);
            }
        }
    }

    let mut worst = 0.0_f64;
    let mut witness = None;
    for x in &probes {
        let ratio = gap_ratio(x, grid, alpha, beta);
        if ratio > worst {
            worst = ratio;
            witness = Some(x);
        }
    }
    let covered = worst <= 1.0;
    CoverReport {
        covered,
        witness: if covered {
            None
        } else {
            witness.map(|w| w.iter().copied().collect())
        },
        n_samples: probes.len(),
        max_gap_ratio: worst,
    }
}

/// Safety factor applied to sampled suprema.
pub const LIPSCHITZ_INFLATION: f64 = 1.1;

/// Random starting pairs refined per sample when estimating `L2`.
const L2_STARTS: usize = 4;

/// `sup_{|h1|,|h2| <= 1} |D^2 f(x)(h1, h2)|` by alternating maximization from a
/// few random starts: for fixed `h2` the map `h1 -> D^2 f(x)(h1, h2)` is linear,
/// so the best `h1` is its top right singular vector, and vice versa.
fn bilinear_sup<R: Rng + ?Sized>(field: &dyn VectorField, x: &DVector<f64>, rng: &mut R) -> f64 {
    let n = field.dim();
    let basis: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            e
        })
        .collect();
    let partial = |other: &DVector<f64>| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for (j, e) in basis.iter().enumerate() {
            m.set_column(j, &field.second_derivative(x, e, other));
        }
        m
    };
    let top_right = |m: &DMatrix<f64>| -> (f64, DVector<f64>) {
        let gram = m.transpose() * m;
        let eig = SymmetricEigen::new(gram);
        let (k, &lam) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        (lam.max(0.0).sqrt(), eig.eigenvectors.column(k).into_owned())
    };

    let mut best = 0.0_f64;
    for _ in 0..L2_STARTS {
        let mut h2 = unit_direction(rng, n);
        for _ in 0..4 {
            // D^2 f is symmetric in its arguments, so the same partial map
            // serves both alternation steps.
            let (val, h1) = top_right(&partial(&h2));
            best = best.max(val);
            let (val, next) = top_right(&partial(&h1));
            best = best.max(val);
            h2 = next;
        }
    }
    best
}

/// Sampled Lipschitz constants of a field over the region: `L1` bounds the
/// spectral norm of `Df`, `L2` bounds the second derivative as a bilinear
/// map. Both are inflated by [`LIPSCHITZ_INFLATION`].
pub fn estimate_lipschitz(
    field: &dyn VectorField,
    region: &RegionSpec,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_dim(region.dim, field.dim())?;
    let mut rng = stream_rng(seed, 0);
    let mut pair_rng = stream_rng(seed, 1);
    let mut l1 = 0.0_f64;
    let mut l2 = 0.0_f64;
    let origin = DVector::zeros(region.dim);
    for i in 0..=n_samples {
        let x = if i == 0 { origin.clone() } else { region.sample(&mut rng) };
        let jac = field.jacobian(&x);
        let s1 = spectral_norm(&jac);
        let s2 = bilinear_sup(field, &x, &mut pair_rng);
        if !s1.is_finite() || !s2.is_finite() {
            return Err(Error::NonFinite { at: x.iter().copied().collect() });
        }
        l1 = l1.max(s1);
        l2 = l2.max(s2);
    }
    Ok((LIPSCHITZ_INFLATION * l1, LIPSCHITZ_INFLATION * l2))
}

/// A strategy that produces a grid for a region.
pub trait GridBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, region: &RegionSpec) -> Result<GridSet>;
}

#[derive(Debug, Clone, Copy)]
pub struct PolarGrid {
    pub n_radial: usize,
    pub n_angular: usize,
}

impl GridBuilder for PolarGrid {
    fn name(&self) -> &'static str {
        "polar"
    }

    fn build(&self, region: &RegionSpec) -> Result<GridSet> {
        generate_polar_grid(region, self.n_radial, self.n_angular)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GreedyCover {
    pub alpha: f64,
    pub beta: f64,
    pub oversample: f64,
}

impl GridBuilder for GreedyCover {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn build(&self, region: &RegionSpec) -> Result<GridSet> {
        greedy_cover_grid(region, self.alpha, self.beta, self.oversample)
    }
}

fn count_param(p: &Params, key: &str, default: f64) -> Result<usize> {
    let v = p.get_or(key, default);
    if v < 1.0 || v.fract() != 0.0 {
        return Err(Error::InvalidParameter(format!("`{key}` must be a positive integer, got {v}")));
    }
    Ok(v as usize)
}

pub fn grid_registry() -> Registry<dyn GridBuilder> {
    let mut reg: Registry<dyn GridBuilder> = Registry::new("grid builder");
    reg.register("polar", |p: &Params| {
        Ok(Box::new(PolarGrid {
            n_radial: count_param(p, "n_radial", 15.0)?,
            n_angular: count_param(p, "n_angular", 20.0)?,
        }))
    });
    reg.register("greedy", |p: &Params| {
        Ok(Box::new(GreedyCover {
            alpha: p.require("alpha")?,
            beta: p.require("beta")?,
            oversample: p.get_or("oversample", 1.0),
        }))
    });
    reg
}
