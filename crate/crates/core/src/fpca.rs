//! Functional principal components: covariance estimation for the error
//! process and PACE-style reconstruction of noisy, sparsely observed
//! covariates.
//!
//! The covariance model is `Σ(s,t) = Σ_k λ_k φ_k(s) φ_k(t) + σ² 1{s = t}`.
//! Two estimation paths share the same eigen step:
//!
//! - default: raw cross-products binned on the pooled time positions and
//!   smoothed by a local-linear surface smoother (diagonal excluded), with
//!   the bandwidth chosen by GCV;
//! - opt-in via [`FpcaConfig::dense_shortcut`], when all subjects share one
//!   common grid of 10..=100 points: the sample covariance on that grid, its
//!   diagonal replaced by the average of the neighbouring off-diagonals.
//!
//! The unsmoothed sample covariance keeps sampling noise as spurious
//! components, which inflates the size of the downstream score test.
//!
//! The noise variance is the mean positive part of (raw diagonal − smooth
//! diagonal) over the central 80% of the domain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::basis::Interval;
use crate::design::Curve;
use crate::error::{Error, Result};

/// Largest number of distinct pooled positions binned exactly; beyond this,
/// observations snap to an equispaced grid of this size.
pub const MAX_BINS: usize = 101;
const GCV_GRID_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FpcaConfig {
    /// Proportion of variance the retained components must explain.
    pub pve_target: f64,
    /// Grid size for the smoothed path. The dense path uses the data grid.
    pub working_grid_size: usize,
    /// Fixed smoother bandwidth; `None` selects it by GCV.
    pub bandwidth: Option<f64>,
    pub max_components: usize,
    /// Use the unsmoothed sample covariance when all curves share one grid.
    /// Off by default.
    pub dense_shortcut: bool,
}

impl Default for FpcaConfig {
    fn default() -> Self {
        Self {
            pve_target: 0.99,
            working_grid_size: 51,
            bandwidth: None,
            max_components: 20,
            dense_shortcut: false,
        }
    }
}

impl FpcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pve_target > 0.0 && self.pve_target <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "pve target {} must lie in (0, 1]",
                self.pve_target
            )));
        }
        if self.working_grid_size < 10 {
            return Err(Error::InvalidInput(format!(
                "working grid size {} is below 10",
                self.working_grid_size
            )));
        }
        if let Some(h) = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidInput(format!("bandwidth {h} must be positive")));
            }
        }
        if self.max_components == 0 {
            return Err(Error::InvalidInput("max_components must be positive".into()));
        }
        Ok(())
    }
}

/// How the smooth covariance surface was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceMethod {
    /// Sample covariance on a common grid.
    SampleCovariance,
    /// Local-linear surface smoothing.
    LocalLinear { bandwidth: f64 },
    /// Pure white noise, no smooth part.
    WhiteNoise,
}

/// Truncated eigen-expansion of a covariance kernel plus white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub domain: Interval,
    pub grid: Vec<f64>,
    /// Mean function of the modelled process on `grid`.
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// One vector per component, on `grid`, orthonormal under trapezoid
    /// weights.
    pub eigenfunctions: Vec<Vec<f64>>,
    pub noise_var: f64,
    /// Realized proportion of variance explained by the retained components.
    pub pve: f64,
    pub method: CovarianceMethod,
}

/// Linear interpolation on a sorted grid, clamped at the ends.
pub(crate) fn interpolate(grid: &[f64], values: &[f64], t: f64) -> f64 {
    let n = grid.len();
    if n == 1 || t <= grid[0] {
        return values[0];
    }
    if t >= grid[n - 1] {
        return values[n - 1];
    }
    let j = grid.partition_point(|&g| g <= t);
    let (g0, g1) = (grid[j - 1], grid[j]);
    let w = (t - g0) / (g1 - g0);
    values[j - 1] * (1.0 - w) + values[j] * w
}

pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for j in 0..n.saturating_sub(1) {
        let h = 0.5 * (grid[j + 1] - grid[j]);
        w[j] += h;
        w[j + 1] += h;
    }
    w
}

impl CovarianceModel {
    /// `Σ(s,t) = variance · 1{s = t}` on `domain`.
    pub fn white_noise(domain: Interval, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "white-noise variance {variance} must be positive"
            )));
        }
        Ok(Self {
            domain,
            grid: vec![domain.lo, domain.hi],
            mean: vec![0.0, 0.0],
            eigenvalues: Vec::new(),
            eigenfunctions: Vec::new(),
            noise_var: variance,
            pve: 1.0,
            method: CovarianceMethod::WhiteNoise,
        })
    }

    pub fn num_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenfunction_at(&self, k: usize, t: f64) -> f64 {
        interpolate(&self.grid, &self.eigenfunctions[k], t)
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        interpolate(&self.grid, &self.mean, t)
    }

    /// Smooth part `Σ_k λ_k φ_k(s) φ_k(t)`.
    pub fn kernel(&self, s: f64, t: f64) -> f64 {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(k, l)| l * self.eigenfunction_at(k, s) * self.eigenfunction_at(k, t))
            .sum()
    }

    /// Covariance matrix of the process observed at `times`.
    ///
    /// With zero noise variance a jitter of `1e-8 · Σλ` keeps the block
    /// invertible.
    pub fn sigma_block(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let m = times.len();
        let k = self.num_components();
        let mut phi = DMatrix::zeros(m, k);
        for (j, &t) in times.iter().enumerate() {
            let t = self.domain.check(t)?;
            for c in 0..k {
                phi[(j, c)] = self.eigenfunction_at(c, t) * self.eigenvalues[c].sqrt();
            }
        }
        let mut sigma = &phi * phi.transpose();
        let diag = if self.noise_var > 0.0 {
            self.noise_var
        } else {
            1e-8 * self.eigenvalues.iter().sum::<f64>()
        };
        for j in 0..m {
            sigma[(j, j)] += diag;
        }
        Ok(sigma)
    }
}

/// Distinct sorted positions used to bin pooled observation times.
struct Positions {
    x: Vec<f64>,
}

impl Positions {
    fn from_times<'a>(times: impl Iterator<Item = &'a f64>, domain: Interval) -> Self {
        let mut x: Vec<f64> = times.copied().collect();
        x.sort_by(f64::total_cmp);
        x.dedup();
        if x.len() > MAX_BINS {
            x = domain.grid(MAX_BINS);
        }
        Self { x }
    }

    fn index(&self, t: f64) -> usize {
        let j = self.x.partition_point(|&g| g < t);
        if j == 0 {
            0
        } else if j == self.x.len() {
            j - 1
        } else if t - self.x[j - 1] <= self.x[j] - t {
            j - 1
        } else {
            j
        }
    }

    fn window(&self, center: f64, h: f64) -> core::ops::Range<usize> {
        let lo = self.x.partition_point(|&g| g <= center - h);
        let hi = self.x.partition_point(|&g| g < center + h);
        lo..hi
    }

    fn max_gap(&self) -> f64 {
        self.x.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

#[inline]
fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        1.0 - u * u
    } else {
        0.0
    }
}

/// Weighted bin means on one axis.
struct Bins1 {
    w: Vec<f64>,
    mean: Vec<f64>,
    /// Residual sum of squares of the raw values about their bin means.
    within: f64,
    total: f64,
}

impl Bins1 {
    fn new(pos: &Positions, obs: impl Iterator<Item = (f64, f64)>) -> Self {
        let g = pos.x.len();
        let mut w = vec![0.0; g];
        let mut sum = vec![0.0; g];
        let mut squares = 0.0;
        for (t, v) in obs {
            let i = pos.index(t);
            w[i] += 1.0;
            sum[i] += v;
            squares += v * v;
        }
        let total = w.iter().sum();
        let mean: Vec<f64> = w.iter().zip(&sum).map(|(&w, &s)| if w > 0.0 { s / w } else { 0.0 }).collect();
        let between: f64 = w.iter().zip(&mean).map(|(w, m)| w * m * m).sum();
        Self {
            w,
            mean,
            within: (squares - between).max(0.0),
            total,
        }
    }

    /// Local-linear estimate at `x0` and the leverage of a unit-weight
    /// observation located at `x0`.
    fn fit(&self, pos: &Positions, x0: f64, h: f64) -> Option<(f64, f64)> {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in pos.window(x0, h) {
            if self.w[i] == 0.0 {
                continue;
            }
            let u = (pos.x[i] - x0) / h;
            let k = epanechnikov(u) * self.w[i];
            s0 += k;
            s1 += k * u;
            s2 += k * u * u;
            t0 += k * self.mean[i];
            t1 += k * u * self.mean[i];
        }
        let det = s0 * s2 - s1 * s1;
        if !(s0 > 0.0) || det <= 1e-10 * s0 * s0 {
            return None;
        }
        Some(((s2 * t0 - s1 * t1) / det, s2 / det))
    }

    fn gcv(&self, pos: &Positions, h: f64) -> Option<f64> {
        let (mut rss, mut trace) = (self.within, 0.0);
        for i in 0..pos.x.len() {
            if self.w[i] == 0.0 {
                continue;
            }
            let (est, lev) = self.fit(pos, pos.x[i], h)?;
            rss += self.w[i] * (self.mean[i] - est).powi(2);
            trace += self.w[i] * lev;
        }
        let frac = trace / self.total;
        (frac < 1.0).then(|| rss / ((1.0 - frac) * (1.0 - frac)))
    }
}

/// Weighted bin means on the product of the positions.
struct Bins2 {
    w: DMatrix<f64>,
    /// Per-bin sums, `w ∘ mean`.
    wz: DMatrix<f64>,
    mean: DMatrix<f64>,
    /// Residual sum of squares of the raw values about their bin means.
    within: f64,
    total: f64,
}

/// `K(u) u^p` with `u = (x_a − target_i)/h`, one row per target.
fn kernel_moments(targets: &[f64], x: &[f64], h: f64, p: i32) -> DMatrix<f64> {
    DMatrix::from_fn(targets.len(), x.len(), |i, a| {
        let u = (x[a] - targets[i]) / h;
        epanechnikov(u) * u.powi(p)
    })
}

impl Bins2 {
    /// Local-linear surface fits at every `(rows[i], cols[j])`, with the
    /// leverage of a unit-weight observation at that point. Entries are NaN
    /// where the local design is singular.
    fn fit_grid(&self, x: &[f64], rows: &[f64], cols: &[f64], h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let a: Vec<DMatrix<f64>> = (0..3).map(|p| kernel_moments(rows, x, h, p)).collect();
        let c: Vec<DMatrix<f64>> = (0..3).map(|q| kernel_moments(cols, x, h, q)).collect();
        let wc: Vec<DMatrix<f64>> = c.iter().map(|cq| &self.w * cq.transpose()).collect();
        let zc: Vec<DMatrix<f64>> = c[..2].iter().map(|cq| &self.wz * cq.transpose()).collect();
        let s00 = &a[0] * &wc[0];
        let s10 = &a[1] * &wc[0];
        let s01 = &a[0] * &wc[1];
        let s20 = &a[2] * &wc[0];
        let s11 = &a[1] * &wc[1];
        let s02 = &a[0] * &wc[2];
        let b0 = &a[0] * &zc[0];
        let b1 = &a[1] * &zc[0];
        let b2 = &a[0] * &zc[1];
        let (nr, nc) = (rows.len(), cols.len());
        let mut est = DMatrix::from_element(nr, nc, f64::NAN);
        let mut lev = DMatrix::from_element(nr, nc, f64::NAN);
        for j in 0..nc {
            for i in 0..nr {
                let w0 = s00[(i, j)];
                if !(w0 > 0.0) {
                    continue;
                }
                let m = Matrix3::new(
                    w0, s10[(i, j)], s01[(i, j)],
                    s10[(i, j)], s20[(i, j)], s11[(i, j)],
                    s01[(i, j)], s11[(i, j)], s02[(i, j)],
                );
                if m.determinant() <= 1e-10 * w0 * w0 * w0 {
                    continue;
                }
                if let Some(inv) = m.try_inverse() {
                    let coef = inv * Vector3::new(b0[(i, j)], b1[(i, j)], b2[(i, j)]);
                    est[(i, j)] = coef[0];
                    lev[(i, j)] = inv[(0, 0)];
                }
            }
        }
        (est, lev)
    }

    fn gcv(&self, pos: &Positions, h: f64) -> Option<f64> {
        let (est, lev) = self.fit_grid(&pos.x, &pos.x, &pos.x, h);
        let (mut rss, mut trace) = (self.within, 0.0);
        for (idx, &w) in self.w.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            if est[idx].is_nan() {
                return None;
            }
            rss += w * (self.mean[idx] - est[idx]).powi(2);
            trace += w * lev[idx];
        }
        let frac = trace / self.total;
        (frac < 1.0).then(|| rss / ((1.0 - frac) * (1.0 - frac)))
    }
}

fn bandwidth_candidates(pos: &Positions, domain: Interval) -> Vec<f64> {
    let width = domain.width();
    let lo = (0.05 * width).max(2.0 * pos.max_gap());
    let hi = (0.4 * width).max(1.5 * lo);
    let ratio = (hi / lo).powf(1.0 / (GCV_GRID_POINTS - 1) as f64);
    (0..GCV_GRID_POINTS).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// Bandwidth minimizing `gcv`; widens the search when every candidate is
/// numerically infeasible.
fn select_bandwidth(
    fixed: Option<f64>,
    pos: &Positions,
    domain: Interval,
    gcv: impl Fn(f64) -> Option<f64>,
) -> Result<f64> {
    if let Some(h) = fixed {
        return Ok(h);
    }
    let mut candidates = bandwidth_candidates(pos, domain);
    for _ in 0..4 {
        let best = candidates
            .iter()
            .filter_map(|&h| gcv(h).map(|score| (h, score)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((h, _)) = best {
            return Ok(h);
        }
        let top = *candidates.last().unwrap();
        candidates = (1..=GCV_GRID_POINTS).map(|i| top * (1.0 + 0.3 * i as f64)).collect();
    }
    Err(Error::DegenerateInput(
        "observation times too sparse for the covariance smoother".into(),
    ))
}

/// Evaluate a fit on every target, widening the bandwidth until it succeeds.
fn fit_all<T, F: Fn(f64) -> Option<T>>(h: f64, domain: Interval, fit: F) -> Result<(f64, T)> {
    let mut h = h;
    for _ in 0..30 {
        if let Some(v) = fit(h) {
            return Ok((h, v));
        }
        h *= 1.2;
        if h > 4.0 * domain.width() {
            break;
        }
    }
    Err(Error::DegenerateInput(
        "local-linear smoother is singular for every bandwidth".into(),
    ))
}

struct Eigen {
    values: Vec<f64>,
    functions: Vec<Vec<f64>>,
    pve: f64,
}

/// Eigen-decomposition of the integral operator with kernel `g` on `grid`
/// under trapezoid weights, truncated by proportion of variance explained.
fn eigen_truncate(grid: &[f64], g: &DMatrix<f64>, config: &FpcaConfig) -> Result<Eigen> {
    let n = grid.len();
    let w = trapezoid_weights(grid);
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| sw[i] * 0.5 * (g[(i, j)] + g[(j, i)]) * sw[j]);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure("non-finite covariance surface".into()));
    }
    let eig = SymmetricEigen::try_new(a, 1e-13, 10_000)
        .ok_or_else(|| Error::EigenFailure("covariance operator".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let positive: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * top && top > 0.0)
        .collect();
    let total: f64 = positive.iter().map(|&i| eig.eigenvalues[i]).sum();
    let mut k = 0;
    let mut acc = 0.0;
    while k < positive.len() && k < config.max_components {
        acc += eig.eigenvalues[positive[k]];
        k += 1;
        if acc >= config.pve_target * total * (1.0 - 1e-12) {
            break;
        }
    }
    let mut values = Vec::with_capacity(k);
    let mut functions = Vec::with_capacity(k);
    for &i in &positive[..k] {
        let col = eig.eigenvectors.column(i);
        let mut phi: Vec<f64> = (0..n).map(|j| col[j] / sw[j]).collect();
        let integral: f64 = phi.iter().zip(&w).map(|(p, w)| p * w).sum();
        let flip = if integral.abs() > 1e-8 {
            integral < 0.0
        } else {
            let jmax = (0..n).max_by(|&a, &b| phi[a].abs().total_cmp(&phi[b].abs())).unwrap();
            phi[jmax] < 0.0
        };
        if flip {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
        values.push(eig.eigenvalues[i]);
        functions.push(phi);
    }
    let pve = if total > 0.0 { acc / total } else { 1.0 };
    Ok(Eigen {
        values,
        functions,
        pve,
    })
}

/// Mean of `values` over grid points in the central 80% of the domain.
fn central_mean(grid: &[f64], domain: Interval, values: impl Fn(usize) -> f64) -> f64 {
    let lo = domain.lo + 0.1 * domain.width();
    let hi = domain.hi - 0.1 * domain.width();
    let idx: Vec<usize> = (0..grid.len()).filter(|&j| grid[j] >= lo && grid[j] <= hi).collect();
    if idx.is_empty() {
        return (0..grid.len()).map(&values).sum::<f64>() / grid.len() as f64;
    }
    idx.iter().map(|&j| values(j)).sum::<f64>() / idx.len() as f64
}

fn prepare_curves(curves: &[Curve], domain: Interval) -> Result<Vec<Curve>> {
    if curves.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "covariance estimation needs at least 2 subjects, got {}",
            curves.len()
        )));
    }
    curves
        .iter()
        .map(|c| {
            if c.is_empty() {
                return Err(Error::InvalidInput("subject with zero observations".into()));
            }
            for &t in &c.times {
                domain.check(t)?;
            }
            c.sorted()
        })
        .collect()
}

fn common_grid(curves: &[Curve]) -> Option<&[f64]> {
    let first = &curves[0].times;
    let m = first.len();
    ((10..=100).contains(&m) && curves.iter().all(|c| &c.times == first)).then_some(first.as_slice())
}

/// Estimate mean, eigen-expansion and noise variance from per-subject
/// observations of one process.
pub fn estimate_covariance(
    curves: &[Curve],
    domain: Interval,
    config: &FpcaConfig,
) -> Result<CovarianceModel> {
    config.validate()?;
    let curves = prepare_curves(curves, domain)?;
    let scale = curves
        .iter()
        .flat_map(|c| c.values.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));

    if let Some(grid) = common_grid(&curves).filter(|_| config.dense_shortcut) {
        return estimate_dense(&curves, grid, domain, config, scale);
    }
    estimate_smoothed(&curves, domain, config, scale)
}

fn degenerate() -> Error {
    Error::DegenerateInput("observations have zero variance".into())
}

fn estimate_dense(
    curves: &[Curve],
    grid: &[f64],
    domain: Interval,
    config: &FpcaConfig,
    scale: f64,
) -> Result<CovarianceModel> {
    let n = curves.len();
    let m = grid.len();
    let mut mean = vec![0.0; m];
    for c in curves {
        for (acc, v) in mean.iter_mut().zip(&c.values) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let centered = DMatrix::from_fn(n, m, |i, j| curves[i].values[j] - mean[j]);
    if centered.amax() <= 1e-12 * scale.max(1e-300) {
        return Err(degenerate());
    }
    let raw = centered.tr_mul(&centered) / (n - 1) as f64;

    let mut smooth = raw.clone();
    for j in 0..m {
        smooth[(j, j)] = if j == 0 {
            raw[(0, 1)]
        } else if j == m - 1 {
            raw[(m - 1, m - 2)]
        } else {
            0.5 * (raw[(j, j - 1)] + raw[(j, j + 1)])
        };
    }
    let noise_var = central_mean(grid, domain, |j| (raw[(j, j)] - smooth[(j, j)]).max(0.0));
    let eig = eigen_truncate(grid, &smooth, config)?;
    finish(
        domain,
        grid.to_vec(),
        mean,
        eig,
        noise_var,
        CovarianceMethod::SampleCovariance,
    )
}

fn estimate_smoothed(
    curves: &[Curve],
    domain: Interval,
    config: &FpcaConfig,
    scale: f64,
) -> Result<CovarianceModel> {
    let pos = Positions::from_times(curves.iter().flat_map(|c| c.times.iter()), domain);
    if pos.x.len() < 3 {
        return Err(Error::DegenerateInput(
            "pooled observation times take fewer than 3 distinct values".into(),
        ));
    }
    let work = domain.grid(config.working_grid_size);

    // Mean function from the pooled observations.
    let pooled = Bins1::new(
        &pos,
        curves.iter().flat_map(|c| c.times.iter().copied().zip(c.values.iter().copied())),
    );
    let h_mean = select_bandwidth(config.bandwidth, &pos, domain, |h| pooled.gcv(&pos, h))?;
    let (_, mean_pos) = fit_all(h_mean, domain, |h| {
        pos.x.iter().map(|&x| pooled.fit(&pos, x, h).map(|f| f.0)).collect::<Option<Vec<f64>>>()
    })?;
    let mean_work: Vec<f64> = work.iter().map(|&t| interpolate(&pos.x, &mean_pos, t)).collect();

    let resid: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| {
            c.times
                .iter()
                .zip(&c.values)
                .map(|(&t, &v)| v - interpolate(&pos.x, &mean_pos, t))
                .collect()
        })
        .collect();
    if resid.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())) <= 1e-12 * scale.max(1e-300) {
        return Err(degenerate());
    }

    // Raw covariance: off-diagonal cross-products on the product grid, squared
    // deviations on the diagonal.
    let g = pos.x.len();
    let mut w2 = DMatrix::zeros(g, g);
    let mut sum2 = DMatrix::zeros(g, g);
    let mut squares = 0.0;
    for (c, e) in curves.iter().zip(&resid) {
        let idx: Vec<usize> = c.times.iter().map(|&t| pos.index(t)).collect();
        for a in 0..idx.len() {
            for b in 0..idx.len() {
                if idx[a] == idx[b] {
                    continue;
                }
                let v = e[a] * e[b];
                w2[(idx[a], idx[b])] += 1.0;
                sum2[(idx[a], idx[b])] += v;
                squares += v * v;
            }
        }
    }
    let total2: f64 = w2.sum();
    if total2 == 0.0 {
        return Err(Error::DegenerateInput(
            "no subject has two distinct observation times".into(),
        ));
    }
    let mean2 = sum2.zip_map(&w2, |s, w| if w > 0.0 { s / w } else { 0.0 });
    let between: f64 = sum2.zip_map(&mean2, |s, m| s * m).sum();
    let surface = Bins2 {
        w: w2,
        wz: sum2,
        mean: mean2,
        within: (squares - between).max(0.0),
        total: total2,
    };
    let h_cov = select_bandwidth(config.bandwidth, &pos, domain, |h| surface.gcv(&pos, h))?;
    let (h_cov, smooth) = fit_all(h_cov, domain, |h| {
        let (est, _) = surface.fit_grid(&pos.x, &work, &work, h);
        (!est.iter().any(|v| v.is_nan())).then(|| (&est + est.transpose()) * 0.5)
    })?;

    let diag = Bins1::new(
        &pos,
        curves
            .iter()
            .zip(&resid)
            .flat_map(|(c, e)| c.times.iter().copied().zip(e.iter().map(|v| v * v))),
    );
    let h_diag = select_bandwidth(config.bandwidth, &pos, domain, |h| diag.gcv(&pos, h))?;
    let (_, diag_pos) = fit_all(h_diag, domain, |h| {
        pos.x.iter().map(|&x| diag.fit(&pos, x, h).map(|f| f.0)).collect::<Option<Vec<f64>>>()
    })?;
    let noise_var = central_mean(&work, domain, |j| {
        (interpolate(&pos.x, &diag_pos, work[j]) - smooth[(j, j)]).max(0.0)
    });

    let eig = eigen_truncate(&work, &smooth, config)?;
    finish(
        domain,
        work,
        mean_work,
        eig,
        noise_var,
        CovarianceMethod::LocalLinear { bandwidth: h_cov },
    )
}

fn finish(
    domain: Interval,
    grid: Vec<f64>,
    mean: Vec<f64>,
    eig: Eigen,
    noise_var: f64,
    method: CovarianceMethod,
) -> Result<CovarianceModel> {
    if eig.values.is_empty() && !(noise_var > 0.0) {
        return Err(degenerate());
    }
    Ok(CovarianceModel {
        domain,
        grid,
        mean,
        eigenvalues: eig.values,
        eigenfunctions: eig.functions,
        noise_var,
        pve: eig.pve,
        method,
    })
}

/// Smallest measurement-error variance used when predicting scores.
pub const MIN_NOISE_VAR: f64 = 1e-8;

/// Per-subject curve predictions `X̂_i(t) = μ(t) + Σ_k ξ_ik φ_k(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateReconstruction {
    pub model: CovarianceModel,
    /// Measurement-error variance used for the score predictions.
    pub noise_var: f64,
    /// Set when the estimated noise variance fell below [`MIN_NOISE_VAR`].
    pub noise_floored: bool,
    pub scores: Vec<Vec<f64>>,
}

impl CovariateReconstruction {
    pub fn num_subjects(&self) -> usize {
        self.scores.len()
    }

    pub fn evaluate(&self, subject: usize, t: f64) -> Result<f64> {
        let scores = self.scores.get(subject).ok_or(Error::IndexOutOfRange {
            index: subject,
            len: self.scores.len(),
        })?;
        let t = self.model.domain.check(t)?;
        Ok(self.model.mean_at(t)
            + scores
                .iter()
                .enumerate()
                .map(|(k, xi)| xi * self.model.eigenfunction_at(k, t))
                .sum::<f64>())
    }

    pub fn evaluate_many(&self, subject: usize, times: &[f64]) -> Result<Vec<f64>> {
        times.iter().map(|&t| self.evaluate(subject, t)).collect()
    }
}

/// Conditional-expectation scores `Λ Φᵀ (Φ Λ Φᵀ + κ² I)⁻¹ (u − μ)`, computed
/// in the equivalent `K × K` form `(ΦᵀΦ/κ² + Λ⁻¹)⁻¹ Φᵀ (u − μ) / κ²`.
pub fn predict_scores(model: &CovarianceModel, noise_var: f64, curve: &Curve) -> Result<Vec<f64>> {
    if curve.is_empty() {
        return Err(Error::InvalidInput("subject with zero observations".into()));
    }
    let k = model.num_components();
    if k == 0 {
        return Ok(Vec::new());
    }
    let m = curve.len();
    let mut phi = DMatrix::zeros(m, k);
    let mut centered = DVector::zeros(m);
    for (j, (&t, &u)) in curve.times.iter().zip(&curve.values).enumerate() {
        let t = model.domain.check(t)?;
        centered[j] = u - model.mean_at(t);
        for c in 0..k {
            phi[(j, c)] = model.eigenfunction_at(c, t);
        }
    }
    let mut a = phi.tr_mul(&phi) / noise_var;
    for c in 0..k {
        a[(c, c)] += 1.0 / model.eigenvalues[c];
    }
    let rhs = phi.tr_mul(&centered) / noise_var;
    let chol = Cholesky::new(a).ok_or_else(|| Error::NotPositiveDefinite("score system".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Fit an FPCA model to noisy observations of a covariate and predict every
/// subject's smooth trajectory.
pub fn reconstruct_covariate(
    curves: &[Curve],
    domain: Interval,
    config: &FpcaConfig,
) -> Result<CovariateReconstruction> {
    let model = estimate_covariance(curves, domain, config)?;
    let noise_floored = model.noise_var < MIN_NOISE_VAR;
    let noise_var = model.noise_var.max(MIN_NOISE_VAR);
    let scores = curves
        .iter()
        .map(|c| predict_scores(&model, noise_var, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(CovariateReconstruction {
        model,
        noise_var,
        noise_floored,
        scores,
    })
}
