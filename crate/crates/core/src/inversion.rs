//! Cluster-size distributions from coherence spectra.
//!
//! The half spectrum `S_k` (even `k >= 0`) is modelled as a mixture of
//! unnormalized Gaussians, `S_k = sum_j exp(-k^2 / s_j) f_j + noise`, on a
//! logarithmic size grid. `f >= 0` is recovered by Tikhonov-regularized
//! non-negative least squares with a second-difference penalty.
//!
//! `f_j` is the `k = 0` amplitude of component `j`. Over the full lattice of
//! even orders that component carries mass `Z_j = sum_k exp(-k^2/s_j)` and
//! second moment close to `Z_j s_j / 2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mqc::CoherenceSpectrum;
use crate::optimize::NelderMead;

pub const DEFAULT_GRID_POINTS: usize = 64;
pub const DEFAULT_S_MIN: f64 = 1.0;
pub const DEFAULT_S_MAX: f64 = 1e4;
/// Unregularized condition numbers above this are reported.
pub const ILL_CONDITIONED: f64 = 1e12;

/// `n` points spaced evenly in `ln s` over `[s_min, s_max]`.
pub fn log_grid(s_min: f64, s_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(s_min > 0.0 && s_max > s_min && n >= 2) {
        return Err(Error::InvalidArgument(format!("bad size grid [{s_min}, {s_max}] with {n} points")));
    }
    let (a, b) = (s_min.ln(), s_max.ln());
    Ok((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect())
}

pub fn default_grid() -> Vec<f64> {
    log_grid(DEFAULT_S_MIN, DEFAULT_S_MAX, DEFAULT_GRID_POINTS).expect("valid default grid")
}

/// `exp(-k^2 / s)` summed over all even `k`, both signs.
pub fn lattice_mass(s: f64) -> f64 {
    lattice_sum(s, |_| 1.0)
}

/// `k^2 exp(-k^2 / s)` summed over all even `k`, both signs.
pub fn lattice_second_moment(s: f64) -> f64 {
    lattice_sum(s, |k| k * k)
}

fn lattice_sum(s: f64, weight: impl Fn(f64) -> f64) -> f64 {
    let mut total = weight(0.0);
    let mut k = 2.0;
    loop {
        let term = weight(k) * (-k * k / s).exp();
        total += 2.0 * term;
        if k * k > 40.0 * s && term < 1e-300_f64.max(total * 1e-18) {
            break;
        }
        k += 2.0;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProblem {
    /// Coherence orders `k >= 0`.
    pub orders: Vec<f64>,
    /// Strictly increasing sizes `s_j > 0`.
    pub size_grid: Vec<f64>,
    pub data: Vec<f64>,
    /// Standard deviation of the noise on each data point, if known.
    pub noise_estimate: Option<f64>,
    #[serde(skip)]
    kernel: DMatrix<f64>,
}

impl KernelProblem {
    pub fn new(orders: Vec<f64>, data: Vec<f64>, size_grid: Vec<f64>, noise_estimate: Option<f64>) -> Result<Self> {
        if orders.len() != data.len() {
            return Err(Error::DimensionMismatch { expected: orders.len(), got: data.len() });
        }
        if orders.len() < 2 {
            return Err(Error::InvalidArgument("need at least two coherence orders".into()));
        }
        if size_grid.len() < 8 {
            return Err(Error::InvalidArgument(format!("size grid needs >= 8 points, got {}", size_grid.len())));
        }
        if let Some(i) = orders.iter().position(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(Error::InvalidArgument(format!("order {} at index {i} is not a non-negative number", orders[i])));
        }
        if size_grid[0] <= 0.0 || size_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("size grid must be positive and strictly increasing".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("data contain non-finite values".into()));
        }
        if let Some(e) = noise_estimate {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::InvalidArgument(format!("noise estimate must be >= 0, got {e}")));
            }
        }
        let kernel = DMatrix::from_fn(orders.len(), size_grid.len(), |i, j| (-orders[i] * orders[i] / size_grid[j]).exp());
        Ok(KernelProblem { orders, size_grid, data, noise_estimate, kernel })
    }

    /// Half spectrum (even `k >= 0`) of a normalized coherence spectrum.
    pub fn from_spectrum(spectrum: &CoherenceSpectrum, size_grid: Vec<f64>, noise_estimate: Option<f64>) -> Result<Self> {
        let (orders, data) = spectrum.half_spectrum();
        Self::new(orders, data, size_grid, noise_estimate)
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn forward(&self, f: &[f64]) -> Vec<f64> {
        (&self.kernel * DVector::from_column_slice(f)).iter().copied().collect()
    }

    pub fn residual_norm(&self, f: &[f64]) -> f64 {
        self.forward(f).iter().zip(&self.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// Expected noise norm `eps sqrt(m)`.
    pub fn noise_norm(&self) -> Option<f64> {
        self.noise_estimate.map(|e| e * (self.data.len() as f64).sqrt())
    }

    /// Ratio of extreme singular values of the kernel.
    pub fn condition_number(&self) -> f64 {
        let sv = self.kernel.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

/// Second-difference operator on the size grid index, `(n - 2) x n`.
pub fn second_difference(n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n.saturating_sub(2), n);
    for i in 0..n.saturating_sub(2) {
        l[(i, i)] = 1.0;
        l[(i, i + 1)] = -2.0;
        l[(i, i + 2)] = 1.0;
    }
    l
}

/// Second difference with `f` taken as zero just beyond both grid ends,
/// `n x n`. Unlike [`second_difference`] it penalizes mass piled at an edge.
pub fn second_difference_zero_padded(n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = -2.0;
        if i > 0 {
            l[(i, i - 1)] = 1.0;
        }
        if i + 1 < n {
            l[(i, i + 1)] = 1.0;
        }
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Interior rows only; constant and linear trends are free.
    Free,
    /// `f = 0` beyond the grid.
    #[default]
    Zero,
}

/// Regularization parameter: a number or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Alpha {
    Fixed(f64),
    Auto(AutoAlpha),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoAlpha {
    Auto,
}

impl Alpha {
    pub const AUTO: Alpha = Alpha::Auto(AutoAlpha::Auto);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSelection {
    Fixed,
    Discrepancy,
    LCurve,
    /// The data norm is already within the noise; `f = 0`.
    NoiseFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistribution {
    pub size_grid: Vec<f64>,
    pub f: Vec<f64>,
    pub alpha: f64,
    pub selection: AlphaSelection,
    pub residual_norm: f64,
    pub n_blocks: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ClusterDistribution {
    pub fn total(&self) -> f64 {
        self.f.iter().sum()
    }

    /// `sum_j f_j Z_j s_j / 2`: second moment of the recovered mixture over
    /// the full spectrum.
    pub fn mixture_second_moment(&self) -> f64 {
        self.size_grid.iter().zip(&self.f).map(|(s, f)| f * lattice_mass(*s) * s / 2.0).sum()
    }

    /// Same quantity with exact lattice sums instead of `Z_j s_j / 2`.
    pub fn mixture_second_moment_exact(&self) -> f64 {
        self.size_grid.iter().zip(&self.f).map(|(s, f)| f * lattice_second_moment(*s)).sum()
    }

    /// `f_j Z_j`: spectral mass carried by each component.
    pub fn spectral_mass(&self) -> Vec<f64> {
        self.size_grid.iter().zip(&self.f).map(|(s, f)| f * lattice_mass(*s)).collect()
    }
}

/// Settings for the automatic choice of `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionOptions {
    /// Target residual is `discrepancy_factor * noise norm`.
    pub discrepancy_factor: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub bisection_steps: usize,
    /// Grid size of the L-curve scan.
    pub l_curve_points: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl Default for InversionOptions {
    fn default() -> Self {
        InversionOptions { discrepancy_factor: 1.0, alpha_min: 1e-8, alpha_max: 1e3, bisection_steps: 60, l_curve_points: 48, boundary: Boundary::Zero }
    }
}

pub fn invert(problem: &KernelProblem, alpha: Alpha) -> Result<ClusterDistribution> {
    invert_with(problem, alpha, &InversionOptions::default())
}

/// `min ||K f - S||^2 + alpha^2 ||L f||^2` subject to `f >= 0`. With
/// [`Alpha::AUTO`], `alpha` follows the discrepancy principle when the noise
/// level is known and the L-curve corner otherwise.
pub fn invert_with(problem: &KernelProblem, alpha: Alpha, options: &InversionOptions) -> Result<ClusterDistribution> {
    let data_norm = problem.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if problem.data.iter().all(|v| *v <= 0.0) {
        return Err(Error::NoFeasibleSolution(if data_norm == 0.0 {
            "all data are zero".into()
        } else {
            "no positive data point".into()
        }));
    }
    let mut warnings = Vec::new();
    let cond = problem.condition_number();
    if cond > ILL_CONDITIONED {
        let msg = format!("ill-conditioned kernel (condition number {cond:.2e}); regularization required");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let n = problem.size_grid.len();
    let solver = TikhonovSolver::new(problem, options.boundary);
    let (alpha, selection, f) = match alpha {
        Alpha::Fixed(a) => {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {a}")));
            }
            (a, AlphaSelection::Fixed, solver.solve(a))
        }
        Alpha::Auto(_) => match problem.noise_norm() {
            Some(noise) if data_norm <= options.discrepancy_factor * noise => {
                let msg = "data norm is within the noise level; returning f = 0".to_string();
                log::warn!("{msg}");
                warnings.push(msg);
                (options.alpha_max, AlphaSelection::NoiseFloor, vec![0.0; n])
            }
            Some(noise) => {
                let (a, f) = discrepancy(&solver, options.discrepancy_factor * noise, options, &mut warnings);
                (a, AlphaSelection::Discrepancy, f)
            }
            None => {
                let (a, f) = l_curve(&solver, options);
                (a, AlphaSelection::LCurve, f)
            }
        },
    };
    let residual_norm = problem.residual_norm(&f);
    Ok(ClusterDistribution { size_grid: problem.size_grid.clone(), f, alpha, selection, residual_norm, n_blocks: None, warnings })
}

struct TikhonovSolver<'a> {
    problem: &'a KernelProblem,
    l: DMatrix<f64>,
}

impl<'a> TikhonovSolver<'a> {
    fn new(problem: &'a KernelProblem, boundary: Boundary) -> Self {
        let n = problem.size_grid.len();
        let l = match boundary {
            Boundary::Free => second_difference(n),
            Boundary::Zero => second_difference_zero_padded(n),
        };
        TikhonovSolver { problem, l }
    }

    fn solve(&self, alpha: f64) -> Vec<f64> {
        let k = self.problem.kernel();
        let (m, n) = k.shape();
        let p = self.l.nrows();
        let mut a = DMatrix::zeros(m + p, n);
        a.rows_mut(0, m).copy_from(k);
        a.rows_mut(m, p).copy_from(&(&self.l * alpha));
        let mut b = DVector::zeros(m + p);
        b.rows_mut(0, m).copy_from(&DVector::from_column_slice(&self.problem.data));
        nnls(&a, &b).iter().copied().collect()
    }

    fn seminorm(&self, f: &[f64]) -> f64 {
        (&self.l * DVector::from_column_slice(f)).norm()
    }
}

fn discrepancy(solver: &TikhonovSolver, target: f64, options: &InversionOptions, warnings: &mut Vec<String>) -> (f64, Vec<f64>) {
    let residual = |a: f64| {
        let f = solver.solve(a);
        (solver.problem.residual_norm(&f), f)
    };
    let (r_lo, f_lo) = residual(options.alpha_min);
    if r_lo > target {
        let msg = format!("residual {r_lo:.3e} at the smallest alpha exceeds the discrepancy target {target:.3e}");
        log::warn!("{msg}");
        warnings.push(msg);
        return (options.alpha_min, f_lo);
    }
    let (r_hi, f_hi) = residual(options.alpha_max);
    if r_hi <= target {
        return (options.alpha_max, f_hi);
    }
    // residual grows with alpha; keep the largest alpha meeting the target
    let (mut lo, mut hi) = (options.alpha_min.ln(), options.alpha_max.ln());
    let mut best = (options.alpha_min, f_lo);
    for _ in 0..options.bisection_steps {
        let mid = 0.5 * (lo + hi);
        let (r, f) = residual(mid.exp());
        if r <= target {
            lo = mid;
            best = (mid.exp(), f);
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    best
}

/// Corner of `(ln ||K f - S||, ln ||L f||)` by maximum discrete curvature.
fn l_curve(solver: &TikhonovSolver, options: &InversionOptions) -> (f64, Vec<f64>) {
    let m = options.l_curve_points.max(5);
    let (lo, hi) = (options.alpha_min.ln(), options.alpha_max.ln());
    let alphas: Vec<f64> = (0..m).map(|i| (lo + (hi - lo) * i as f64 / (m - 1) as f64).exp()).collect();
    let sols: Vec<Vec<f64>> = alphas.iter().map(|a| solver.solve(*a)).collect();
    let floor = 1e-300;
    let pts: Vec<(f64, f64)> = sols
        .iter()
        .map(|f| (solver.problem.residual_norm(f).max(floor).ln(), solver.seminorm(f).max(floor).ln()))
        .collect();
    let mut best = (0.0, m / 2);
    for i in 1..m - 1 {
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        let (x2, y2) = pts[i + 1];
        let a = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let b = ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt();
        let c = ((x2 - x0).powi(2) + (y2 - y0).powi(2)).sqrt();
        if a * b * c == 0.0 {
            continue;
        }
        // signed Menger curvature; the corner bends toward the origin
        let cross = (x1 - x0) * (y2 - y1) - (y1 - y0) * (x2 - x1);
        let kappa = 2.0 * cross / (a * b * c);
        if kappa > best.0 {
            best = (kappa, i);
        }
    }
    (alphas[best.1], sols[best.1].clone())
}

/// Lawson-Hanson active-set solution of `min ||A x - b||` with `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 10.0 * f64::EPSILON * a.norm() * m.max(n) as f64;
    let max_outer = 3 * n + 10;
    let at = a.transpose();

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&idx);
        let sol = sub.svd(true, true).solve(b, 1e-15).expect("SVD with both factors");
        let mut z = DVector::zeros(n);
        for (p, &j) in idx.iter().enumerate() {
            z[j] = sol[p];
        }
        z
    };

    for _ in 0..max_outer {
        let w = &at * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        passive[t] = true;
        let mut guard = 0;
        loop {
            guard += 1;
            let z = solve_passive(&passive);
            if (0..n).filter(|&j| passive[j]).all(|j| z[j] > 0.0) || guard > 3 * n {
                x = z.map(|v| v.max(0.0));
                break;
            }
            let mut step = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    let denom = x[j] - z[j];
                    if denom > 0.0 {
                        step = step.min(x[j] / denom);
                    }
                }
            }
            if !step.is_finite() {
                step = 0.0;
            }
            x += (z - &x) * step;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    /// Minimum prominence as a fraction of the largest `f`.
    pub prominence: f64,
    /// Cumulative fraction defining the front.
    pub front_fraction: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { prominence: 0.02, front_fraction: 0.97 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    /// Location refined by a parabola through three points in `ln s`.
    pub s: f64,
    pub height: f64,
    pub prominence: f64,
    /// Half-height crossings, interpolated linearly in `ln s`.
    pub half_left: f64,
    pub half_right: f64,
    /// `half_right - half_left`.
    pub fwhm: f64,
    /// A crossing fell off the grid; the width is a lower bound.
    pub truncated: bool,
    /// Sum of `f` between the neighbouring valleys; valley points are
    /// shared equally.
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionAnalytics {
    pub peaks: Vec<Peak>,
    /// Size at which the cumulative mass reaches the front fraction.
    pub front_97: f64,
    pub total_mass: f64,
}

impl DistributionAnalytics {
    /// Peak holding the most mass.
    pub fn dominant(&self) -> &Peak {
        self.peaks.iter().max_by(|a, b| a.population.total_cmp(&b.population)).expect("at least one peak")
    }
}

pub fn analyze(distribution: &ClusterDistribution) -> Result<DistributionAnalytics> {
    analyze_with(&distribution.size_grid, &distribution.f, &AnalysisOptions::default())
}

pub fn analyze_with(size_grid: &[f64], f: &[f64], options: &AnalysisOptions) -> Result<DistributionAnalytics> {
    let n = f.len();
    if n != size_grid.len() {
        return Err(Error::DimensionMismatch { expected: size_grid.len(), got: n });
    }
    let max = f.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::NoPeaks);
    }
    let total: f64 = f.iter().sum();
    let ln_s: Vec<f64> = size_grid.iter().map(|s| s.ln()).collect();

    // local maxima; plateaus are represented by their first point
    let mut maxima = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || f[i] > f[i - 1];
        let mut r = i;
        while r + 1 < n && f[r + 1] == f[i] {
            r += 1;
        }
        let right_ok = r == n - 1 || f[i] > f[r + 1];
        if left_ok && right_ok && f[i] > 0.0 {
            maxima.push(i);
        }
    }
    // f is taken as zero beyond the grid, so a side without a higher point
    // bottoms out at zero
    let prominence = |i: usize| -> f64 {
        let mut left_base = 0.0;
        for j in (0..i).rev() {
            if f[j] > f[i] {
                left_base = f[j..i].iter().copied().fold(f[i], f64::min);
                break;
            }
        }
        let mut right_base = 0.0;
        for j in i + 1..n {
            if f[j] > f[i] {
                right_base = f[i + 1..j].iter().copied().fold(f[i], f64::min);
                break;
            }
        }
        f[i] - f64::max(left_base, right_base)
    };
    let kept: Vec<(usize, f64)> =
        maxima.into_iter().map(|i| (i, prominence(i))).filter(|(_, p)| *p >= options.prominence * max).collect();
    if kept.is_empty() {
        return Err(Error::NoPeaks);
    }

    // valleys between consecutive kept peaks
    let mut valleys = Vec::with_capacity(kept.len().saturating_sub(1));
    for w in kept.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        let v = (a..=b).min_by(|&x, &y| f[x].total_cmp(&f[y])).expect("non-empty range");
        valleys.push(v);
    }

    let mut peaks = Vec::with_capacity(kept.len());
    for (p, &(i, prom)) in kept.iter().enumerate() {
        let (s, height) = if i > 0 && i + 1 < n {
            refine(ln_s[i - 1], ln_s[i], ln_s[i + 1], f[i - 1], f[i], f[i + 1])
        } else {
            (ln_s[i], f[i])
        };
        let half = 0.5 * f[i];
        let mut truncated = false;
        let mut l = i;
        while l > 0 && f[l - 1] > half {
            l -= 1;
        }
        let half_left = if l == 0 {
            truncated = true;
            ln_s[0]
        } else {
            lerp_crossing(ln_s[l - 1], ln_s[l], f[l - 1], f[l], half)
        };
        let mut r = i;
        while r + 1 < n && f[r + 1] > half {
            r += 1;
        }
        let half_right = if r == n - 1 {
            truncated = true;
            ln_s[n - 1]
        } else {
            lerp_crossing(ln_s[r], ln_s[r + 1], f[r], f[r + 1], half)
        };
        let lo = if p == 0 { None } else { Some(valleys[p - 1]) };
        let hi = valleys.get(p).copied();
        let mut population = 0.0;
        let start = lo.unwrap_or(0);
        let end = hi.unwrap_or(n - 1);
        for j in start..=end {
            let shared = Some(j) == lo || Some(j) == hi;
            population += if shared { 0.5 * f[j] } else { f[j] };
        }
        peaks.push(Peak {
            index: i,
            s: s.exp(),
            height,
            prominence: prom,
            half_left: half_left.exp(),
            half_right: half_right.exp(),
            fwhm: half_right.exp() - half_left.exp(),
            truncated,
            population,
        });
    }
    let front_97 = cumulative_front(size_grid, f, options.front_fraction);
    Ok(DistributionAnalytics { peaks, front_97, total_mass: total })
}

/// Vertex of the parabola through three points (in `ln s`), clamped to the
/// bracketing interval.
fn refine(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> (f64, f64) {
    let d1 = (y1 - y0) / (x1 - x0);
    let d2 = (y2 - y1) / (x2 - x1);
    let a = (d2 - d1) / (x2 - x0);
    if a >= 0.0 {
        return (x1, y1);
    }
    let b = d1 - a * (x0 + x1);
    let c = y0 - a * x0 * x0 - b * x0;
    let xv = (-b / (2.0 * a)).clamp(x0, x2);
    (xv, a * xv * xv + b * xv + c)
}

fn lerp_crossing(x0: f64, x1: f64, y0: f64, y1: f64, level: f64) -> f64 {
    if y1 == y0 {
        return x0;
    }
    x0 + (level - y0) * (x1 - x0) / (y1 - y0)
}

/// Size where the cumulative fraction of `f` first reaches `fraction`,
/// interpolated linearly in `ln s` between grid points.
pub fn cumulative_front(size_grid: &[f64], f: &[f64], fraction: f64) -> f64 {
    let total: f64 = f.iter().sum();
    let mut acc = 0.0;
    for j in 0..f.len() {
        let prev = acc;
        acc += f[j] / total;
        if acc >= fraction {
            if j == 0 {
                return size_grid[0];
            }
            let (x0, x1) = (size_grid[j - 1].ln(), size_grid[j].ln());
            return lerp_crossing(x0, x1, prev, acc, fraction).exp();
        }
    }
    size_grid[size_grid.len() - 1]
}

/// Cumulative fraction of `f` at `s`, linear in `ln s` between grid points.
pub fn cumulative_at(size_grid: &[f64], f: &[f64], s: f64) -> f64 {
    let total: f64 = f.iter().sum();
    let mut acc = 0.0;
    for j in 0..f.len() {
        let prev = acc;
        acc += f[j] / total;
        if s <= size_grid[j] {
            if j == 0 {
                return acc;
            }
            let (x0, x1) = (size_grid[j - 1].ln(), size_grid[j].ln());
            return prev + (acc - prev) * (s.ln() - x0) / (x1 - x0);
        }
    }
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcedFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// Rms of `ln y - ln(A t^b)`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// Coefficient of determination in log-log space.
    pub r_squared: f64,
    pub residual: f64,
    pub forced: Option<ForcedFit>,
}

/// Least squares line through `(ln t, ln y)`. With `forced_exponent` the
/// prefactor of `y = A t^b` at that fixed `b` is reported as well.
pub fn fit_power_law(times: &[f64], values: &[f64], forced_exponent: Option<f64>) -> Result<PowerLawFit> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
    }
    if times.len() < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 points, got {}", times.len())));
    }
    for (i, (t, y)) in times.iter().zip(values).enumerate() {
        if !(*t > 0.0) {
            return Err(Error::NonPositiveData { index: i, value: *t });
        }
        if !(*y > 0.0) {
            return Err(Error::NonPositiveData { index: i, value: *y });
        }
    }
    let x: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all times are equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = x.iter().zip(&y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let forced = forced_exponent.map(|bf| {
        let af = y.iter().zip(&x).map(|(yi, xi)| yi - bf * xi).sum::<f64>() / n;
        let res = (x.iter().zip(&y).map(|(xi, yi)| (yi - af - bf * xi).powi(2)).sum::<f64>() / n).sqrt();
        ForcedFit { exponent: bf, prefactor: af.exp(), residual: res }
    });
    Ok(PowerLawFit { exponent: b, prefactor: a.exp(), r_squared, residual: (ss_res / n).sqrt(), forced })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBaseline {
    pub amplitude: f64,
    /// Width `s` of `A exp(-k^2 / s)`.
    pub s: f64,
    /// Euclidean norm of the fit residual.
    pub residual: f64,
    /// Only `k = 0` carries weight, so `s` is not determined.
    pub degenerate: bool,
}

/// Single-Gaussian fit `S_k = A exp(-k^2 / s)` to a half spectrum.
pub fn gaussian_fit_baseline(orders: &[f64], data: &[f64]) -> Result<GaussianBaseline> {
    if orders.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: orders.len(), got: data.len() });
    }
    if data.iter().all(|v| *v == 0.0) {
        return Err(Error::FitFailure("spectrum is identically zero".into()));
    }
    let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if orders.iter().zip(data).all(|(k, v)| *k == 0.0 || v.abs() <= 1e-14 * scale) {
        let amplitude = orders.iter().zip(data).filter(|(k, _)| **k == 0.0).map(|(_, v)| *v).sum::<f64>().max(0.0);
        let residual = orders.iter().zip(data).filter(|(k, _)| **k != 0.0).map(|(_, v)| v * v).sum::<f64>().sqrt();
        return Ok(GaussianBaseline { amplitude, s: 0.0, residual, degenerate: true });
    }
    let eval = |u: f64| -> (f64, f64) {
        let s = u.exp();
        let (mut g, mut b) = (0.0, 0.0);
        for (k, y) in orders.iter().zip(data) {
            let e = (-k * k / s).exp();
            g += e * e;
            b += e * y;
        }
        let a = if g > 0.0 { (b / g).max(0.0) } else { 0.0 };
        let ss: f64 = orders.iter().zip(data).map(|(k, y)| (y - a * (-k * k / s).exp()).powi(2)).sum();
        (ss, a)
    };
    let start = (-6..=20)
        .map(|i| i as f64)
        .min_by(|a, b| eval(*a).0.total_cmp(&eval(*b).0))
        .expect("non-empty start grid");
    let nm = NelderMead { x_tol: 1e-12, f_tol: 1e-30, ..NelderMead::default() };
    let m = nm.minimize(|x| eval(x[0]).0, &[start]);
    let (ss, amplitude) = eval(m.x[0]);
    if amplitude <= 0.0 {
        return Err(Error::FitFailure("no positive Gaussian component fits the spectrum".into()));
    }
    Ok(GaussianBaseline { amplitude, s: m.x[0].exp(), residual: ss.sqrt(), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn orders(k_max: usize) -> Vec<f64> {
        (0..=k_max / 2).map(|i| 2.0 * i as f64).collect()
    }

    fn mixture(k: &[f64], comps: &[(f64, f64)]) -> Vec<f64> {
        k.iter().map(|k| comps.iter().map(|(s, w)| w * (-k * k / s).exp()).sum()).collect()
    }

    fn brute_nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        // projected gradient descent to high accuracy; objective value only
        let n = a.ncols();
        let ata = a.transpose() * a;
        let atb = a.transpose() * b;
        let lip = ata.clone().symmetric_eigen().eigenvalues.max();
        let mut x = DVector::<f64>::zeros(n);
        for _ in 0..200_000 {
            let g = &ata * &x - &atb;
            x = (&x - g / lip).map(|v| v.max(0.0));
        }
        (a * x - b).norm()
    }

    #[test]
    fn nnls_matches_projected_gradient() {
        let a = DMatrix::from_fn(7, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 2.5);
        let b = DVector::from_fn(7, |i, _| (i as f64 * 0.7).sin());
        let x = nnls(&a, &b);
        assert!(x.iter().all(|v| *v >= 0.0));
        assert!(((&a * &x - &b).norm() - brute_nnls(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn lattice_sums_match_continuum() {
        for s in [10.0, 50.0, 500.0] {
            let z = lattice_mass(s);
            assert!((z / ((std::f64::consts::PI * s).sqrt() / 2.0) - 1.0).abs() < 1e-6);
            assert!((lattice_second_moment(s) / (z * s / 2.0) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn delta_truth_recovered() {
        let grid = default_grid();
        let j = grid.iter().position(|s| (s / 100.0 - 1.0).abs() < 0.08).unwrap();
        let k = orders(60);
        let data = mixture(&k, &[(grid[j], 1.0)]);
        let p = KernelProblem::new(k, data, grid.clone(), Some(1e-6)).unwrap();
        let d = invert(&p, Alpha::AUTO).unwrap();
        let a = analyze(&d).unwrap();
        assert_eq!(a.peaks.len(), 1, "{:?}", a.peaks);
        let step = (grid[1] / grid[0]).ln();
        assert!((a.peaks[0].s / 100.0).ln().abs() <= step);
        assert!((d.f.iter().sum::<f64>() - 1.0).abs() < 0.05);
    }

    #[test]
    fn pure_noise_gives_small_mass() {
        let k = orders(40);
        let eps = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, eps).unwrap();
        let data: Vec<f64> = k.iter().map(|_| noise.sample(&mut rng)).collect();
        let p = KernelProblem::new(k, data, default_grid(), Some(eps)).unwrap();
        match invert(&p, Alpha::AUTO) {
            Ok(d) => assert!(d.total() < 5.0 * eps, "mass {}", d.total()),
            Err(Error::NoFeasibleSolution(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn zero_data_is_infeasible() {
        let p = KernelProblem::new(orders(10), vec![0.0; 6], default_grid(), None).unwrap();
        assert!(matches!(invert(&p, Alpha::AUTO), Err(Error::NoFeasibleSolution(_))));
    }

    #[test]
    fn kernel_is_ill_conditioned() {
        let p = KernelProblem::new(orders(60), vec![1.0; 31], default_grid(), None).unwrap();
        assert!(p.condition_number() > ILL_CONDITIONED);
        let d = invert(&p, Alpha::Fixed(1e-3)).unwrap();
        assert!(d.warnings.iter().any(|w| w.contains("ill-conditioned")));
    }

    #[test]
    fn l_curve_without_noise_estimate() {
        let k = orders(60);
        let data = mixture(&k, &[(30.0, 0.4), (600.0, 0.6)]);
        let p = KernelProblem::new(k, data, default_grid(), None).unwrap();
        let d = invert(&p, Alpha::AUTO).unwrap();
        assert_eq!(d.selection, AlphaSelection::LCurve);
        assert!(d.residual_norm < 0.05);
    }

    #[test]
    fn single_gaussian_bump_width() {
        let grid = log_grid(1.0, 1e4, 400).unwrap();
        let (mu, sigma) = (100f64.ln(), 0.4);
        let f: Vec<f64> = grid.iter().map(|s| (-(s.ln() - mu).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
        let a = analyze_with(&grid, &f, &AnalysisOptions::default()).unwrap();
        assert_eq!(a.peaks.len(), 1);
        let half = (2.0 * 2f64.ln()).sqrt() * sigma;
        let expected = (mu + half).exp() - (mu - half).exp();
        assert!((a.peaks[0].fwhm / expected - 1.0).abs() < 0.05);
        assert!((a.peaks[0].s / 100.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn two_bumps_partition_mass() {
        let grid = default_grid();
        let f: Vec<f64> = grid
            .iter()
            .map(|s| 0.3 * (-(s.ln() - 3.0).powi(2) / 0.3).exp() + 0.7 * (-(s.ln() - 6.0).powi(2) / 0.5).exp())
            .collect();
        let a = analyze_with(&grid, &f, &AnalysisOptions::default()).unwrap();
        assert_eq!(a.peaks.len(), 2);
        let sum: f64 = a.peaks.iter().map(|p| p.population).sum();
        assert!((sum - a.total_mass).abs() < 1e-6);
    }

    #[test]
    fn delta_front() {
        let grid = default_grid();
        let mut f = vec![0.0; grid.len()];
        f[30] = 1.0;
        let a = analyze_with(&grid, &f, &AnalysisOptions::default()).unwrap();
        assert!(a.front_97 >= grid[29] && a.front_97 <= grid[30]);
    }

    #[test]
    fn flat_zero_has_no_peaks() {
        assert!(matches!(analyze_with(&default_grid(), &[0.0; 64], &AnalysisOptions::default()), Err(Error::NoPeaks)));
    }

    #[test]
    fn exact_power_law() {
        let t: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let y: Vec<f64> = t.iter().map(|t| 5.0 * t.powi(3)).collect();
        let fit = fit_power_law(&t, &y, Some(3.0)).unwrap();
        assert!((fit.exponent - 3.0).abs() < 1e-10);
        assert!((fit.prefactor - 5.0).abs() < 1e-9);
        let forced = fit.forced.unwrap();
        assert!((forced.prefactor - 5.0).abs() < 1e-9 && forced.residual < 1e-12);
    }

    #[test]
    fn power_law_rejects_non_positive() {
        let r = fit_power_law(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, 2.0, 3.0], None);
        assert!(matches!(r, Err(Error::NonPositiveData { index: 1, .. })));
    }

    #[test]
    fn noisy_quadratic_exponent() {
        let t: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.05).unwrap();
            let y: Vec<f64> = t.iter().map(|t| 2.0 * t * t * (1.0 + noise.sample(&mut rng))).collect();
            let fit = fit_power_law(&t, &y, Some(2.0)).unwrap();
            assert!((1.8..=2.2).contains(&fit.exponent), "seed {seed}: {}", fit.exponent);
        }
    }

    #[test]
    fn gaussian_baseline() {
        let k = orders(40);
        let data = mixture(&k, &[(57.0, 0.8)]);
        let g = gaussian_fit_baseline(&k, &data).unwrap();
        assert!((g.s / 57.0 - 1.0).abs() < 1e-6 && g.residual < 1e-8);

        let bimodal = mixture(&k, &[(20.0, 0.3), (400.0, 0.7)]);
        let g = gaussian_fit_baseline(&k, &bimodal).unwrap();
        let p = KernelProblem::new(k.clone(), bimodal, default_grid(), Some(1e-4)).unwrap();
        let d = invert(&p, Alpha::AUTO).unwrap();
        assert!(g.residual > 5.0 * d.residual_norm, "{} vs {}", g.residual, d.residual_norm);

        let g = gaussian_fit_baseline(&[0.0, 2.0, 4.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(g.degenerate);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn smoother_with_larger_alpha(s1 in 5.0f64..50.0, s2 in 200.0f64..2000.0, w in 0.2f64..0.8, a1 in -4.0f64..-1.0, gap in 0.2f64..2.0) {
            let k = orders(60);
            let data = mixture(&k, &[(s1, w), (s2, 1.0 - w)]);
            let p = KernelProblem::new(k, data, default_grid(), None).unwrap();
            let solver = TikhonovSolver::new(&p, Boundary::Zero);
            let (alpha1, alpha2) = (10f64.powf(a1), 10f64.powf(a1 + gap));
            let f1 = solver.solve(alpha1);
            let f2 = solver.solve(alpha2);
            prop_assert!(f1.iter().chain(&f2).all(|v| *v >= 0.0));
            prop_assert!(solver.seminorm(&f1) >= solver.seminorm(&f2) - 1e-9);
        }
    }
}
