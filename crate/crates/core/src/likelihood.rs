//! Marginal likelihood of the random-effects representation and its
//! constrained maximization.
//!
//! With `C = [B | Z₁ | … | Z_p]` and `V = Σ + Σ_k τ_k C_k C_kᵀ`, everything is
//! computed from the whitened quantities `Ũ = L⁻¹C`, `ỹ = L⁻¹y` (`LLᵀ = Σ`,
//! block-diagonal by subject) through the Woodbury identity. After whitening
//! once, a likelihood evaluation costs `O(K³)` in the total basis size `K`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[allow(unused_imports)]
use num_traits::Float;

use crate::design::StackedDesign;
use crate::error::{Error, Result};
use crate::fpca::CovarianceModel;

/// Variance components `τ₀` (intercept) and `τ₁..τ_p` (covariates).
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceParams {
    pub tau: Vec<f64>,
}

impl VarianceParams {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if let Some(t) = tau.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "variance component {t} must be finite and nonnegative"
            )));
        }
        Ok(Self { tau })
    }

    pub fn zeros(num_components: usize) -> Self {
        Self {
            tau: vec![0.0; num_components],
        }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

/// The stacked model whitened by the per-subject error covariance.
#[derive(Debug, Clone)]
pub struct WhitenedSystem {
    columns: Vec<Range<usize>>,
    rows: Vec<Range<usize>>,
    factor_of: Vec<usize>,
    factors: Vec<DMatrix<f64>>,
    u: DMatrix<f64>,
    y: DVector<f64>,
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    yy: f64,
    log_det_sigma: f64,
}

fn time_key(times: &[f64]) -> Vec<u64> {
    times.iter().map(|t| t.to_bits()).collect()
}

impl WhitenedSystem {
    /// Whiten with the blocks `Σ̂_i` of `cov` on each subject's grid.
    pub fn new(design: &StackedDesign, cov: &CovarianceModel) -> Result<Self> {
        Self::with_sigma(design, |times| cov.sigma_block(times))
    }

    /// Whiten with `Σ = I`.
    pub fn identity(design: &StackedDesign) -> Result<Self> {
        Self::with_sigma(design, |times| Ok(DMatrix::identity(times.len(), times.len())))
    }

    /// Whiten with blocks produced by `sigma`, evaluated once per distinct
    /// subject grid.
    pub fn with_sigma(
        design: &StackedDesign,
        sigma: impl Fn(&[f64]) -> Result<DMatrix<f64>>,
    ) -> Result<Self> {
        let n_obs = design.num_obs();
        let mut columns = Vec::with_capacity(design.num_components());
        let mut k_total = 0;
        for c in 0..design.num_components() {
            let k = design.component(c).ncols();
            columns.push(k_total..k_total + k);
            k_total += k;
        }
        let mut raw = DMatrix::zeros(n_obs, k_total);
        for (c, cols) in columns.iter().enumerate() {
            raw.columns_mut(cols.start, cols.len()).copy_from(design.component(c));
        }

        let mut cache: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let mut factors = Vec::new();
        let mut factor_of = Vec::with_capacity(design.num_subjects());
        let mut log_det_sigma = 0.0;
        let mut u = DMatrix::zeros(n_obs, k_total);
        let mut y = DVector::zeros(n_obs);
        for (i, rows) in design.block_offsets.iter().enumerate() {
            let times = &design.times_per_subject[i];
            let idx = match cache.get(&time_key(times)) {
                Some(&idx) => idx,
                None => {
                    let block = sigma(times)?;
                    if block.nrows() != times.len() || block.ncols() != times.len() {
                        return Err(Error::DimensionMismatch(format!(
                            "covariance block {}x{} for {} times",
                            block.nrows(),
                            block.ncols(),
                            times.len()
                        )));
                    }
                    let l = Cholesky::new(block)
                        .ok_or_else(|| {
                            Error::NotPositiveDefinite(format!(
                                "error covariance of subject {}",
                                design.subject_ids[i]
                            ))
                        })?
                        .unpack();
                    factors.push(l);
                    cache.insert(time_key(times), factors.len() - 1);
                    factors.len() - 1
                }
            };
            let l = &factors[idx];
            log_det_sigma += 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let m = rows.len();
            let ub = l
                .solve_lower_triangular(&raw.rows(rows.start, m).into_owned())
                .ok_or_else(|| Error::NotPositiveDefinite("singular covariance factor".into()))?;
            u.rows_mut(rows.start, m).copy_from(&ub);
            let yb = l
                .solve_lower_triangular(&design.y.rows(rows.start, m).into_owned())
                .ok_or_else(|| Error::NotPositiveDefinite("singular covariance factor".into()))?;
            y.rows_mut(rows.start, m).copy_from(&yb);
            factor_of.push(idx);
        }
        let gram = u.tr_mul(&u);
        let cross = u.tr_mul(&y);
        let yy = y.norm_squared();
        Ok(Self {
            columns,
            rows: design.block_offsets.clone(),
            factor_of,
            factors,
            u,
            y,
            gram,
            cross,
            yy,
            log_det_sigma,
        })
    }

    /// Same design and covariance, new raw response.
    pub fn with_response(&self, y: &DVector<f64>) -> Result<Self> {
        if y.len() != self.num_obs() {
            return Err(Error::DimensionMismatch(format!(
                "response of length {} for {} observations",
                y.len(),
                self.num_obs()
            )));
        }
        let white = self.whiten(y);
        let mut out = self.clone();
        out.cross = self.u.tr_mul(&white);
        out.yy = white.norm_squared();
        out.y = white;
        Ok(out)
    }

    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for (rows, &f) in self.rows.iter().zip(&self.factor_of) {
            let mut block = out.rows_mut(rows.start, rows.len());
            self.factors[f].solve_lower_triangular_mut(&mut block);
        }
        out
    }

    fn unwhiten_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for (rows, &f) in self.rows.iter().zip(&self.factor_of) {
            let mut block = out.rows_mut(rows.start, rows.len());
            self.factors[f].tr_solve_lower_triangular_mut(&mut block);
        }
        out
    }

    pub fn num_obs(&self) -> usize {
        self.y.len()
    }

    pub fn num_subjects(&self) -> usize {
        self.rows.len()
    }

    pub fn num_components(&self) -> usize {
        self.columns.len()
    }

    /// Column range of component `k` in the concatenated design.
    pub fn columns(&self, k: usize) -> Range<usize> {
        self.columns[k].clone()
    }

    /// `CᵀΣ⁻¹C`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `CᵀΣ⁻¹y`.
    pub fn cross(&self) -> &DVector<f64> {
        &self.cross
    }

    /// `yᵀΣ⁻¹y`.
    pub fn yy(&self) -> f64 {
        self.yy
    }

    pub fn log_det_sigma(&self) -> f64 {
        self.log_det_sigma
    }

    /// `tr(C_kᵀΣ⁻¹C_k)`.
    pub fn component_trace(&self, k: usize) -> f64 {
        self.columns[k].clone().map(|c| self.gram[(c, c)]).sum()
    }

    fn check_params(&self, params: &VarianceParams) -> Result<()> {
        if params.len() != self.num_components() {
            return Err(Error::DimensionMismatch(format!(
                "{} variance components for {} design components",
                params.len(),
                self.num_components()
            )));
        }
        VarianceParams::new(params.tau.clone()).map(|_| ())
    }

    pub fn operator(&self, params: &VarianceParams) -> Result<WoodburyOperator<'_>> {
        self.check_params(params)?;
        let mut active = Vec::new();
        let mut scale = Vec::new();
        for (k, &t) in params.tau.iter().enumerate() {
            if t > 0.0 {
                for c in self.columns[k].clone() {
                    active.push(c);
                    scale.push(t.sqrt());
                }
            }
        }
        let ka = active.len();
        let cap = if ka == 0 {
            None
        } else {
            let mut m = DMatrix::from_fn(ka, ka, |a, b| {
                scale[a] * self.gram[(active[a], active[b])] * scale[b]
            });
            for a in 0..ka {
                m[(a, a)] += 1.0;
            }
            Some(
                Cholesky::new(m)
                    .ok_or_else(|| Error::NotPositiveDefinite("capacitance matrix".into()))?,
            )
        };
        let log_det_cap = cap
            .as_ref()
            .map_or(0.0, |c| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>());
        Ok(WoodburyOperator {
            system: self,
            active,
            scale: DVector::from_vec(scale),
            cap,
            log_det: self.log_det_sigma + log_det_cap,
        })
    }

    /// `−½(log|V| + yᵀV⁻¹y)`.
    pub fn log_likelihood(&self, params: &VarianceParams) -> Result<f64> {
        let op = self.operator(params)?;
        Ok(-0.5 * (op.log_det() + op.response_quadratic()))
    }

    /// Log-likelihood of `V = s(Σ + Σ_k ρ_k C_k C_kᵀ)` with the scale `s`
    /// profiled out, and the maximizing scale.
    pub fn profiled_log_likelihood(&self, ratios: &VarianceParams) -> Result<(f64, f64)> {
        let op = self.operator(ratios)?;
        let n = self.num_obs() as f64;
        let q = op.response_quadratic();
        if !(q > 0.0) {
            return Err(Error::DegenerateInput("response is identically zero".into()));
        }
        let s = q / n;
        Ok((-0.5 * (n * s.ln() + op.log_det() + n), s))
    }

    /// Posterior-mean fit `Σ_k τ_k C_k C_kᵀ V⁻¹ y`, using the unwhitened
    /// design.
    pub fn blup_fitted(&self, design: &StackedDesign, params: &VarianceParams) -> Result<DVector<f64>> {
        let op = self.operator(params)?;
        let w = op.cross_response();
        let mut fitted = DVector::zeros(self.num_obs());
        for (k, &t) in params.tau.iter().enumerate() {
            if t > 0.0 {
                let cols = self.columns[k].clone();
                fitted += design.component(k) * (w.rows(cols.start, cols.len()) * t);
            }
        }
        Ok(fitted)
    }
}

/// `V⁻¹` in Woodbury form: `Σ⁻¹ − Σ⁻¹ U (I + UᵀΣ⁻¹U)⁻¹ UᵀΣ⁻¹` with `U` the
/// active columns scaled by `√τ`.
#[derive(Debug, Clone)]
pub struct WoodburyOperator<'a> {
    system: &'a WhitenedSystem,
    active: Vec<usize>,
    scale: DVector<f64>,
    cap: Option<Cholesky<f64, Dyn>>,
    log_det: f64,
}

impl WoodburyOperator<'_> {
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Number of columns in the low-rank block.
    pub fn rank(&self) -> usize {
        self.active.len()
    }

    /// `S r_A` for a whitened cross vector `r`.
    fn scaled_active(&self, r: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.active.len(), |a, _| self.scale[a] * r[self.active[a]])
    }

    /// `V⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let sys = self.system;
        if v.len() != sys.num_obs() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} for {} observations",
                v.len(),
                sys.num_obs()
            )));
        }
        let mut white = sys.whiten(v);
        if let Some(cap) = &self.cap {
            let proj = DVector::from_fn(self.active.len(), |a, _| {
                self.scale[a] * sys.u.column(self.active[a]).dot(&white)
            });
            let coef = cap.solve(&proj);
            for (a, &c) in self.active.iter().enumerate() {
                white.axpy(-self.scale[a] * coef[a], &sys.u.column(c), 1.0);
            }
        }
        Ok(sys.unwhiten_transpose(&white))
    }

    /// `vᵀV⁻¹v`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(v.dot(&self.solve(v)?))
    }

    /// `CᵀV⁻¹C` over all components, active or not.
    pub fn cross_gram(&self) -> DMatrix<f64> {
        let g = &self.system.gram;
        match &self.cap {
            None => g.clone(),
            Some(cap) => {
                let p = DMatrix::from_fn(self.active.len(), g.ncols(), |a, j| {
                    self.scale[a] * g[(self.active[a], j)]
                });
                let solved = cap.solve(&p);
                let m = g - p.tr_mul(&solved);
                (&m + m.transpose()) * 0.5
            }
        }
    }

    /// `CᵀV⁻¹y`.
    pub fn cross_response(&self) -> DVector<f64> {
        let sys = self.system;
        match &self.cap {
            None => sys.cross.clone(),
            Some(cap) => {
                let sr = self.scaled_active(&sys.cross);
                let coef = cap.solve(&sr);
                let mut out = sys.cross.clone();
                for (a, &c) in self.active.iter().enumerate() {
                    let sc = self.scale[a] * coef[a];
                    for j in 0..out.len() {
                        out[j] -= sys.gram[(c, j)] * sc;
                    }
                }
                out
            }
        }
    }

    /// `yᵀV⁻¹y`.
    pub fn response_quadratic(&self) -> f64 {
        let sys = self.system;
        match &self.cap {
            None => sys.yy,
            Some(cap) => {
                let sr = self.scaled_active(&sys.cross);
                sys.yy - sr.dot(&cap.solve(&sr))
            }
        }
    }
}

/// `−½(log|V| + yᵀV⁻¹y)` for the design and covariance model.
pub fn log_likelihood(design: &StackedDesign, cov: &CovarianceModel, params: &VarianceParams) -> Result<f64> {
    WhitenedSystem::new(design, cov)?.log_likelihood(params)
}

/// Posterior-mean fitted values under `params`.
pub fn blup_fitted(design: &StackedDesign, cov: &CovarianceModel, params: &VarianceParams) -> Result<DVector<f64>> {
    WhitenedSystem::new(design, cov)?.blup_fitted(design, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    /// Points of the per-coordinate log-grid scan.
    pub grid_points: usize,
    /// Scan range in decades either side of the reference scale.
    pub grid_decades: f64,
    /// Absolute log-likelihood improvement per cycle that ends the search.
    pub tolerance: f64,
    pub max_cycles: usize,
    /// Golden-section bracket width, in decades, at which refinement stops.
    pub golden_tolerance: f64,
    /// Newton steps with the expected information after the coordinate
    /// search.
    pub polish_steps: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            grid_points: 25,
            grid_decades: 6.0,
            tolerance: 1e-8,
            max_cycles: 200,
            golden_tolerance: 1e-7,
            polish_steps: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub params: VarianceParams,
    pub log_likelihood: f64,
    pub cycles: usize,
    /// Objective after each accepted cycle or polishing step; nondecreasing.
    pub trace: Vec<f64>,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximize `f` over `log10 τ ∈ [a, b]` by golden-section search.
fn golden(
    f: &mut impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(10f64.powf(c))?;
    let mut fd = f(10f64.powf(d))?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(10f64.powf(c))?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(10f64.powf(d))?;
        }
    }
    Ok(if fc >= fd { (10f64.powf(c), fc) } else { (10f64.powf(d), fd) })
}

/// One coordinate update: scan `{0} ∪ reference·10^grid`, refine around the
/// best grid point, keep the result only if it beats `current`.
fn update_coordinate(
    f: &mut impl FnMut(f64) -> Result<f64>,
    current: (f64, f64),
    reference: f64,
    opts: &MleOptions,
) -> Result<(f64, f64)> {
    let mut best = current;
    if current.0 != 0.0 {
        let v = f(0.0)?;
        if v > best.1 {
            best = (0.0, v);
        }
    }
    let lo = reference.log10() - opts.grid_decades;
    let step = 2.0 * opts.grid_decades / (opts.grid_points - 1) as f64;
    let mut exps: Vec<f64> = (0..opts.grid_points).map(|j| lo + step * j as f64).collect();
    let mut vals = exps.iter().map(|&e| f(10f64.powf(e))).collect::<Result<Vec<f64>>>()?;
    // The upper end of the scan is not a boundary of the parameter space.
    while vals.len() >= 2
        && vals[vals.len() - 1] > vals[vals.len() - 2]
        && exps[exps.len() - 1] < lo + 4.0 * opts.grid_decades
    {
        let e = exps[exps.len() - 1] + step;
        exps.push(e);
        vals.push(f(10f64.powf(e))?);
    }
    let j = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let a = if j == 0 { exps[0] - step } else { exps[j - 1] };
    let b = if j + 1 == exps.len() { exps[j] + step } else { exps[j + 1] };
    let refined = golden(f, a, b, opts.golden_tolerance)?;
    for cand in [(10f64.powf(exps[j]), vals[j]), refined] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(best)
}

fn coordinate_search(
    objective: &impl Fn(&[f64]) -> Result<f64>,
    start: Vec<f64>,
    free: &[bool],
    references: &[f64],
    opts: &MleOptions,
) -> Result<MleFit> {
    let mut tau = start;
    let mut value = objective(&tau)?;
    let mut trace = vec![value];
    for cycle in 1..=opts.max_cycles {
        let before = value;
        for k in (0..tau.len()).filter(|&k| free[k]) {
            let mut probe = tau.clone();
            let mut f = |t: f64| {
                probe[k] = t;
                objective(&probe)
            };
            let (t, v) = update_coordinate(&mut f, (tau[k], value), references[k], opts)?;
            tau[k] = t;
            value = v;
        }
        trace.push(value);
        if value - before < opts.tolerance {
            return Ok(MleFit {
                params: VarianceParams { tau },
                log_likelihood: value,
                cycles: cycle,
                trace,
            });
        }
    }
    Err(Error::NonConvergence {
        cycles: opts.max_cycles,
        best: tau,
        best_loglik: value,
    })
}

/// Gradient of the log-likelihood in `τ` and the expected information.
pub fn score_and_information(
    system: &WhitenedSystem,
    params: &VarianceParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let op = system.operator(params)?;
    let m = op.cross_gram();
    let w = op.cross_response();
    let nc = system.num_components();
    let mut grad = DVector::zeros(nc);
    let mut info = DMatrix::zeros(nc, nc);
    for j in 0..nc {
        let cj = system.columns(j);
        let tr: f64 = cj.clone().map(|c| m[(c, c)]).sum();
        let wn: f64 = cj.clone().map(|c| w[c] * w[c]).sum();
        grad[j] = -0.5 * (tr - wn);
        for k in j..nc {
            let ck = system.columns(k);
            let block = m.view((cj.start, ck.start), (cj.len(), ck.len()));
            let v = 0.5 * block.norm_squared();
            info[(j, k)] = v;
            info[(k, j)] = v;
        }
    }
    Ok((grad, info))
}

/// Fisher-scoring steps on the strictly positive free coordinates, accepted
/// only when they raise the likelihood.
fn polish(system: &WhitenedSystem, fit: &mut MleFit, free: &[bool], opts: &MleOptions) -> Result<()> {
    for _ in 0..opts.polish_steps {
        let interior: Vec<usize> = (0..free.len()).filter(|&k| free[k] && fit.params.tau[k] > 0.0).collect();
        if interior.is_empty() {
            return Ok(());
        }
        let (grad, info) = score_and_information(system, &fit.params)?;
        let g = DVector::from_fn(interior.len(), |a, _| grad[interior[a]]);
        let h = DMatrix::from_fn(interior.len(), interior.len(), |a, b| info[(interior[a], interior[b])]);
        let Some(chol) = Cholesky::new(h) else {
            return Ok(());
        };
        let step = chol.solve(&g);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut tau = fit.params.tau.clone();
            let mut feasible = true;
            for (a, &k) in interior.iter().enumerate() {
                tau[k] += scale * step[a];
                feasible &= tau[k] > 0.0;
            }
            if feasible {
                let p = VarianceParams { tau };
                let v = system.log_likelihood(&p)?;
                if v > fit.log_likelihood {
                    let gain = v - fit.log_likelihood;
                    fit.params = p;
                    fit.log_likelihood = v;
                    fit.trace.push(v);
                    accepted = gain > 0.0;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            return Ok(());
        }
    }
    Ok(())
}

fn references(system: &WhitenedSystem, signal: f64) -> (Vec<f64>, Vec<bool>) {
    let n = system.num_obs() as f64;
    let mut refs = Vec::new();
    let mut usable = Vec::new();
    for k in 0..system.num_components() {
        let tr = system.component_trace(k) / n;
        usable.push(tr > 0.0 && tr.is_finite());
        let r = signal / tr;
        refs.push(if r > 0.0 && r.is_finite() { r } else { 1.0 });
    }
    (refs, usable)
}

/// Maximize the likelihood over `τ ≥ 0` with the components in `fixed_zero`
/// pinned at 0.
pub fn fit_mle(system: &WhitenedSystem, fixed_zero: &[usize], opts: &MleOptions) -> Result<MleFit> {
    let nc = system.num_components();
    if let Some(&k) = fixed_zero.iter().find(|&&k| k >= nc) {
        return Err(Error::IndexOutOfRange { index: k, len: nc });
    }
    let n = system.num_obs() as f64;
    let signal = if system.yy() > 0.0 { system.yy() / n } else { 1.0 };
    let (refs, usable) = references(system, signal);
    let free: Vec<bool> = (0..nc).map(|k| usable[k] && !fixed_zero.contains(&k)).collect();
    let objective = |tau: &[f64]| system.log_likelihood(&VarianceParams { tau: tau.to_vec() });
    let mut fit = coordinate_search(&objective, vec![0.0; nc], &free, &refs, opts)?;
    polish(system, &mut fit, &free, opts)?;
    Ok(fit)
}

/// Null fit: component `test_index` (a covariate, `≥ 1`) fixed at 0.
pub fn fit_null_mle(
    design: &StackedDesign,
    cov: &CovarianceModel,
    test_index: usize,
    opts: &MleOptions,
) -> Result<MleFit> {
    if test_index == 0 || test_index >= design.num_components() {
        return Err(Error::IndexOutOfRange {
            index: test_index,
            len: design.num_components(),
        });
    }
    fit_mle(&WhitenedSystem::new(design, cov)?, &[test_index], opts)
}

pub fn fit_full_mle(design: &StackedDesign, cov: &CovarianceModel, opts: &MleOptions) -> Result<MleFit> {
    fit_mle(&WhitenedSystem::new(design, cov)?, &[], opts)
}

/// Full-model fit under white noise of unknown level, `V = s I + Σ τ_k C_k C_kᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteNoiseFit {
    pub params: VarianceParams,
    pub noise_var: f64,
    pub log_likelihood: f64,
    pub fitted: DVector<f64>,
}

/// Fit the full model with white-noise errors, profiling the noise level.
pub fn fit_full_white_noise(design: &StackedDesign, opts: &MleOptions) -> Result<WhiteNoiseFit> {
    let system = WhitenedSystem::identity(design)?;
    if !(system.yy() > 0.0) {
        return Ok(WhiteNoiseFit {
            params: VarianceParams::zeros(system.num_components()),
            noise_var: 0.0,
            log_likelihood: f64::INFINITY,
            fitted: DVector::zeros(system.num_obs()),
        });
    }
    let (refs, free) = references(&system, 1.0);
    let objective = |rho: &[f64]| {
        system
            .profiled_log_likelihood(&VarianceParams { tau: rho.to_vec() })
            .map(|(v, _)| v)
    };
    let fit = coordinate_search(&objective, vec![0.0; system.num_components()], &free, &refs, opts)?;
    let (value, s) = system.profiled_log_likelihood(&fit.params)?;
    let fitted = system.blup_fitted(design, &fit.params)?;
    Ok(WhiteNoiseFit {
        params: VarianceParams {
            tau: fit.params.tau.iter().map(|r| r * s).collect(),
        },
        noise_var: s,
        log_likelihood: value,
        fitted,
    })
}
