//! Floquet dynamical-decoupling detection.
//!
//! A `pi/2` pulse about Y turns `rho = Iz` into `Ix`. Each cycle then runs
//! `tau/2` under `Hzz`, samples the transverse magnetization at the window
//! center, runs another `tau/2` and applies a `theta` pulse about X. Samples
//! sit at `t_j = (j + 1/2) tau`.
//!
//! The one-cycle operator `F = U(tau/2) R_x(theta) U(tau/2)` is unitary, so
//! its Schur form is diagonal and sample `j` costs one `O(4^N)` sum instead
//! of two dense products.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{rotate_ket, Axis, EvolutionConfig, Generator};
use crate::linalg::{self, CMat};
use crate::operators::{complex_matrix, OperatorKind};
use crate::optimize::NelderMead;
use crate::system::SpinSystem;

pub const DEFAULT_TRANSIENT_SKIP: usize = 8;
pub const DEFAULT_N_CYCLES: usize = 2048;

/// Which transverse component the acquisition windows record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    /// `Tr{Ix rho} / Tr{Ix^2}`, aligned with the magnetization after the
    /// initial pulse.
    #[default]
    Ix,
    /// `sqrt(<Ix>^2 + <Iy>^2)`, normalized the same way.
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdConfig {
    /// Cycle period in seconds.
    pub tau: f64,
    /// Pulse angle in radians, `0 < theta <= pi`.
    pub theta: f64,
    pub n_cycles: usize,
    #[serde(default = "default_skip")]
    pub transient_skip: usize,
    /// Per-sample noise standard deviation for a single scan.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_scans")]
    pub n_scans: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub detection: Detection,
    #[serde(default)]
    pub evolution: EvolutionConfig,
}

fn default_skip() -> usize {
    DEFAULT_TRANSIENT_SKIP
}

fn default_scans() -> usize {
    1
}

impl DdConfig {
    pub fn new(tau: f64, theta: f64, n_cycles: usize) -> Self {
        DdConfig {
            tau,
            theta,
            n_cycles,
            transient_skip: DEFAULT_TRANSIENT_SKIP,
            noise_sigma: 0.0,
            n_scans: 1,
            rng_seed: 0,
            detection: Detection::Ix,
            evolution: EvolutionConfig::default(),
        }
    }

    pub fn with_noise(mut self, sigma: f64, n_scans: usize, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.n_scans = n_scans;
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.theta > 0.0 && self.theta <= PI) {
            return Err(Error::InvalidArgument(format!("theta must lie in (0, pi], got {}", self.theta)));
        }
        if self.n_cycles == 0 {
            return Err(Error::InvalidArgument("n_cycles must be positive".into()));
        }
        if self.n_scans == 0 {
            return Err(Error::InvalidArgument("n_scans must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Standard deviation of one averaged sample, `sigma / sqrt(N_S)`.
    pub fn noise_scale(&self) -> f64 {
        self.noise_sigma / (self.n_scans as f64).sqrt()
    }
}

/// Acquired time series. `clean` is the noiseless signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdSeries {
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
    pub clean: Vec<f64>,
    pub noise_scale: f64,
}

impl DdSeries {
    pub fn fit(&self, transient_skip: usize) -> Result<DecayFit> {
        fit_biexponential(&self.times, &self.signal, transient_skip)
    }

    pub fn cumulative_snr(&self) -> Vec<f64> {
        cumulative_snr(&self.signal, self.noise_scale)
    }
}

pub fn run_dd(system: &SpinSystem, config: &DdConfig) -> Result<DdSeries> {
    let generator = Generator::new(OperatorKind::Hzz, system, &config.evolution)?;
    run_dd_with(&generator, config)
}

/// As [`run_dd`] with a prepared `Hzz` generator, so sweeps diagonalize once.
pub fn run_dd_with(generator: &Generator, config: &DdConfig) -> Result<DdSeries> {
    config.validate()?;
    if generator.kind() != OperatorKind::Hzz {
        return Err(Error::InvalidArgument("DD detection runs under Hzz".into()));
    }
    let clean = floquet_signal(generator, config)?;
    let times: Vec<f64> = (0..config.n_cycles).map(|j| (j as f64 + 0.5) * config.tau).collect();
    let noise_scale = config.noise_scale();
    let signal = add_noise(&clean, noise_scale, config.rng_seed);
    Ok(DdSeries { times, signal, clean, noise_scale })
}

/// Adds white Gaussian noise of standard deviation `scale`.
pub fn add_noise(clean: &[f64], scale: f64, seed: u64) -> Vec<f64> {
    if scale == 0.0 {
        return clean.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, scale).expect("finite noise scale");
    clean.iter().map(|v| v + rng.sample(normal)).collect()
}

fn dense_rotation(n_spins: usize, axis: Axis, angle: f64) -> CMat {
    let mut r = linalg::identity(1 << n_spins);
    let dim = r.nrows();
    for col in r.as_mut_slice().chunks_mut(dim) {
        rotate_ket(col, n_spins, axis, angle);
    }
    r
}

fn floquet_signal(generator: &Generator, config: &DdConfig) -> Result<Vec<f64>> {
    let system = generator.system();
    let n = system.n_spins();
    let u_half = generator.propagator(0.5 * config.tau)?.dense();
    let rotation = dense_rotation(n, Axis::X, config.theta);
    let floquet = linalg::cmul(&u_half, &linalg::cmul(&rotation, &u_half));
    let ix = complex_matrix(OperatorKind::IxTotal, system);
    let iy = match config.detection {
        Detection::Ix => None,
        Detection::Magnitude => Some(complex_matrix(OperatorKind::IyTotal, system)),
    };
    let rho0 = linalg::cmul_adj(&linalg::cmul(&u_half, &ix), &u_half);
    let norm = n as f64 * 2f64.powi(n as i32 - 2);

    let (x, y) = match schur_series(&floquet, &rho0, &ix, iy.as_ref(), config.n_cycles) {
        Some(series) => series,
        None => {
            log::debug!("Floquet Schur form not diagonal; stepping densities directly");
            direct_series(&floquet, &rho0, &ix, iy.as_ref(), config.n_cycles)
        }
    };
    Ok(match y {
        None => x.iter().map(|v| v / norm).collect(),
        Some(y) => x.iter().zip(&y).map(|(a, b)| a.hypot(*b) / norm).collect(),
    })
}

type Series = (Vec<f64>, Option<Vec<f64>>);

fn direct_series(floquet: &CMat, rho0: &CMat, ix: &CMat, iy: Option<&CMat>, n_cycles: usize) -> Series {
    let mut rho = rho0.clone();
    let mut x = Vec::with_capacity(n_cycles);
    let mut y = iy.map(|_| Vec::with_capacity(n_cycles));
    for j in 0..n_cycles {
        x.push(ix.dotc(&rho).re);
        if let (Some(y), Some(iy)) = (y.as_mut(), iy) {
            y.push(iy.dotc(&rho).re);
        }
        if j + 1 < n_cycles {
            rho = linalg::cmul_adj(&linalg::cmul(floquet, &rho), floquet);
        }
    }
    (x, y)
}

/// `Tr{O F^j rho F^-j}` from the Schur form `F = Q D Q^dag`. Returns `None`
/// when the triangular factor is not diagonal to working precision.
fn schur_series(floquet: &CMat, rho0: &CMat, ix: &CMat, iy: Option<&CMat>, n_cycles: usize) -> Option<Series> {
    let dim = floquet.nrows();
    let (q, t) = floquet.clone().try_schur(1e-15, 10_000)?.unpack();
    let mut off = 0.0f64;
    for c in 0..dim {
        for r in 0..c {
            off = off.max(t[(r, c)].norm());
        }
    }
    if off > 1e-9 {
        return None;
    }
    let angles: Vec<f64> = (0..dim).map(|a| t[(a, a)].arg()).collect();
    let rho_t = linalg::cmul(&q.adjoint(), &linalg::cmul(rho0, &q));
    // weights c_ab = O~_ba rho~_ab
    let weights = |o: &CMat| {
        let o_t = linalg::cmul(&q.adjoint(), &linalg::cmul(o, &q));
        CMat::from_fn(dim, dim, |a, b| o_t[(b, a)] * rho_t[(a, b)])
    };
    let cx = weights(ix);
    let cy = iy.map(weights);
    let x = floquet_sums(&cx, &angles, n_cycles);
    let y = cy.map(|cy| floquet_sums(&cy, &angles, n_cycles));
    Some((x, y))
}

/// `s_j = sum_ab c_ab exp(i (l_a - l_b) j)` for `j < n_cycles`, batched as
/// `W = C conj(V)` with `V_aj = exp(i l_a j)`.
fn floquet_sums(c: &CMat, angles: &[f64], n_cycles: usize) -> Vec<f64> {
    const CHUNK: usize = 256;
    let dim = angles.len();
    let mut out = Vec::with_capacity(n_cycles);
    let mut start = 0;
    while start < n_cycles {
        let len = CHUNK.min(n_cycles - start);
        let v = CMat::from_fn(dim, len, |a, j| Complex64::from_polar(1.0, angles[a] * (start + j) as f64));
        let w = linalg::cmul(c, &v.map(|z| z.conj()));
        out.extend((0..len).map(|j| v.column(j).iter().zip(w.column(j).iter()).map(|(a, b)| a * b).sum::<Complex64>().re));
        start += len;
    }
    out
}

/// `SNR(N) = sum_{j<N} |s_j| / (sigma_eff sqrt(N))`. A zero noise scale is
/// treated as unit noise, which leaves the argmax unchanged.
pub fn cumulative_snr(signal: &[f64], noise_scale: f64) -> Vec<f64> {
    let sigma = if noise_scale > 0.0 { noise_scale } else { 1.0 };
    let mut acc = 0.0;
    signal
        .iter()
        .enumerate()
        .map(|(j, s)| {
            acc += s.abs();
            acc / (sigma * ((j + 1) as f64).sqrt())
        })
        .collect()
}

/// `(N*, SNR(N*))` with `N*` the cycle count maximizing the cumulative SNR
/// (earliest on ties).
pub fn optimal_cycles(snr: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in snr.iter().enumerate() {
        if best.is_none_or(|(_, b)| *v > b) {
            best = Some((j + 1, *v));
        }
    }
    best
}

/// Noise-free figure of merit `max_N sum_{j<N} |s_j| / sqrt(N)`; the SNR of
/// an acquisition is this times `sqrt(N_S) / sigma`.
pub fn signal_merit(signal: &[f64]) -> f64 {
    optimal_cycles(&cumulative_snr(signal, 1.0)).map_or(0.0, |(_, v)| v)
}

/// Scans a `low` acquisition needs to match the SNR that `high` reaches with
/// `n_scans_high` scans under the same per-scan noise: `N_high (q_high / q_low)^2`.
pub fn scans_to_match(high: &[f64], n_scans_high: f64, low: &[f64]) -> Result<f64> {
    let q_low = signal_merit(low);
    if q_low <= 0.0 {
        return Err(Error::InvalidArgument("low-retention signal is identically zero".into()));
    }
    Ok(n_scans_high * (signal_merit(high) / q_low).powi(2))
}

/// Empirical SNR of `sum_{j<window} s_j` over seeded noise realizations:
/// mean over standard deviation.
pub fn monte_carlo_snr(clean: &[f64], sigma: f64, n_scans: usize, window: usize, trials: usize, seed: u64) -> f64 {
    let window = window.min(clean.len());
    let scale = sigma / (n_scans as f64).sqrt();
    let sums: Vec<f64> = (0..trials)
        .map(|i| {
            let noisy = add_noise(&clean[..window], scale, seed ^ splitmix64(i as u64));
            noisy.iter().sum()
        })
        .collect();
    let mean = sums.iter().sum::<f64>() / trials as f64;
    let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
    mean.abs() / var.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a_fast: f64,
    pub t_fast: f64,
    pub a_slow: f64,
    pub t_slow: f64,
    pub residual_rms: f64,
    /// First and last sample index used.
    pub fit_window: [usize; 2],
    /// The two decay constants merged into one; `a_fast` is zero.
    pub degenerate: bool,
    /// A decay constant sits on the limit of `[dt_min, max_window_multiple *
    /// t_max]`, so it is a bound rather than an estimate. Finite systems
    /// whose signal plateaus pin `t_slow` at the upper limit.
    #[serde(default)]
    pub at_bound: bool,
}

impl DecayFit {
    /// Extrapolation of the fitted signal to `t = 0`.
    pub fn total_amplitude(&self) -> f64 {
        self.a_fast + self.a_slow
    }

    pub fn eval(&self, t: f64) -> f64 {
        let fast = if self.a_fast == 0.0 { 0.0 } else { self.a_fast * (-t / self.t_fast).exp() };
        fast + self.a_slow * (-t / self.t_slow).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fails when the residual rms exceeds this fraction of the data rms.
    pub max_relative_residual: f64,
    /// Relative gap between decay constants below which they are merged.
    pub degenerate_tolerance: f64,
    /// Amplitude fraction below which a component is dropped.
    pub min_amplitude_fraction: f64,
    /// Decay constants are confined to `[dt_min, max_window_multiple * t_max]`
    /// with `dt_min` the smallest sample spacing. Outside this range a
    /// constant is not identifiable from the data.
    pub max_window_multiple: f64,
    pub min_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_relative_residual: 0.5, degenerate_tolerance: 0.05, min_amplitude_fraction: 1e-3, max_window_multiple: 1e3, min_points: 8 }
    }
}

pub fn fit_biexponential(times: &[f64], values: &[f64], transient_skip: usize) -> Result<DecayFit> {
    fit_biexponential_with(times, values, transient_skip, &FitOptions::default())
}

/// Least squares fit of `A_f exp(-t/T_f) + A_s exp(-t/T_s)` with `A >= 0`.
/// Amplitudes are eliminated exactly for each pair of decay constants, and
/// the log decay constants are searched by Nelder-Mead from a fixed grid of
/// starting pairs.
pub fn fit_biexponential_with(times: &[f64], values: &[f64], transient_skip: usize, options: &FitOptions) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
    }
    let n = times.len().saturating_sub(transient_skip);
    if n < options.min_points {
        return Err(Error::InvalidArgument(format!(
            "{n} points after skipping {transient_skip}, need at least {}",
            options.min_points
        )));
    }
    let t_raw = &times[transient_skip..];
    let y = &values[transient_skip..];
    if t_raw.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let scale = t_raw.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if scale <= 0.0 {
        return Err(Error::InvalidArgument("time axis has no extent".into()));
    }
    let t: Vec<f64> = t_raw.iter().map(|v| v / scale).collect();
    let data_rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if data_rms == 0.0 {
        return Err(Error::FitFailure("data are identically zero".into()));
    }

    let dt_min = t.windows(2).map(|w| (w[1] - w[0]).abs()).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    if !dt_min.is_finite() {
        return Err(Error::InvalidArgument("time axis has no extent".into()));
    }
    let bounds = (dt_min.ln(), options.max_window_multiple.ln());
    let model = ExpModel { t: &t, y, bounds };
    let nm = NelderMead::default();
    let grid: Vec<f64> = (0..9).map(|k| model.clamp((10f64).powf(-2.5 + 0.5 * k as f64).ln())).collect();

    let mut starts: Vec<(f64, [f64; 2])> = Vec::new();
    for i in 0..grid.len() {
        for j in (i + 1)..grid.len() {
            let p = [grid[i], grid[j]];
            starts.push((model.pair(p[0], p[1]).0, p));
        }
    }
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (_, p) in starts.iter().take(6) {
        let m = nm.minimize(|x| model.pair(x[0], x[1]).0, p);
        if best.as_ref().is_none_or(|b| m.f < b.0) {
            best = Some((m.f, m.x));
        }
    }
    let (_, x) = best.expect("non-empty start grid");
    let (u, v) = (model.clamp(x[0]), model.clamp(x[1]));
    let (ss_pair, a1, a2) = model.pair(u, v);
    let (mut tf, mut ts, mut af, mut as_) = (u.exp(), v.exp(), a1, a2);
    if tf > ts {
        std::mem::swap(&mut tf, &mut ts);
        std::mem::swap(&mut af, &mut as_);
    }
    let total = af + as_;
    let merge = total <= 0.0
        || (ts - tf) / ts < options.degenerate_tolerance
        || af.min(as_) < options.min_amplitude_fraction * total;

    let (fit, ss) = if merge {
        let start = grid
            .iter()
            .copied()
            .min_by(|a, b| model.single(*a).0.total_cmp(&model.single(*b).0))
            .expect("non-empty grid");
        let m = nm.minimize(|x| model.single(x[0]).0, &[start]);
        let u = model.clamp(m.x[0]);
        let (ss, a) = model.single(u);
        let ts = u.exp() * scale;
        (
            DecayFit {
                a_fast: 0.0,
                t_fast: ts,
                a_slow: a,
                t_slow: ts,
                residual_rms: 0.0,
                fit_window: [0, 0],
                degenerate: true,
                at_bound: model.at_bound(u),
            },
            ss,
        )
    } else {
        (
            DecayFit {
                a_fast: af,
                t_fast: tf * scale,
                a_slow: as_,
                t_slow: ts * scale,
                residual_rms: 0.0,
                fit_window: [0, 0],
                degenerate: false,
                at_bound: model.at_bound(u) || model.at_bound(v),
            },
            ss_pair,
        )
    };
    let residual_rms = (ss / n as f64).sqrt();
    let fit = DecayFit { residual_rms, fit_window: [transient_skip, times.len() - 1], ..fit };
    if fit.total_amplitude() <= 0.0 {
        return Err(Error::FitFailure(format!("no decaying component (data rms {data_rms:.3e})")));
    }
    if residual_rms > options.max_relative_residual * data_rms {
        return Err(Error::FitFailure(format!(
            "residual rms {residual_rms:.3e} exceeds {} x data rms {data_rms:.3e}; best parameters {fit:?}",
            options.max_relative_residual
        )));
    }
    Ok(fit)
}

struct ExpModel<'a> {
    t: &'a [f64],
    y: &'a [f64],
    /// Range of the log decay constant.
    bounds: (f64, f64),
}

impl ExpModel<'_> {
    fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.bounds.0, self.bounds.1)
    }

    fn at_bound(&self, u: f64) -> bool {
        let tol = 1e-6 * (self.bounds.1 - self.bounds.0);
        u <= self.bounds.0 + tol || u >= self.bounds.1 - tol
    }

    fn residual(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.t.iter().zip(self.y).map(|(t, y)| (y - f(*t)).powi(2)).sum()
    }

    /// Best non-negative amplitude for one decay constant `exp(u)`.
    fn single(&self, u: f64) -> (f64, f64) {
        let tc = self.clamp(u).exp();
        let (mut g, mut b) = (0.0, 0.0);
        for (t, y) in self.t.iter().zip(self.y) {
            let e = (-t / tc).exp();
            g += e * e;
            b += e * y;
        }
        let a = if g > 0.0 { (b / g).max(0.0) } else { 0.0 };
        (self.residual(|t| a * (-t / tc).exp()), a)
    }

    /// Best non-negative amplitudes for decay constants `exp(u)`, `exp(v)`.
    fn pair(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let (t1, t2) = (self.clamp(u).exp(), self.clamp(v).exp());
        let (mut g11, mut g12, mut g22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (t, y) in self.t.iter().zip(self.y) {
            let (e1, e2) = ((-t / t1).exp(), (-t / t2).exp());
            g11 += e1 * e1;
            g12 += e1 * e2;
            g22 += e2 * e2;
            b1 += e1 * y;
            b2 += e2 * y;
        }
        let det = g11 * g22 - g12 * g12;
        let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(3);
        if det > 1e-14 * g11 * g22 {
            let a1 = (g22 * b1 - g12 * b2) / det;
            let a2 = (g11 * b2 - g12 * b1) / det;
            if a1 >= 0.0 && a2 >= 0.0 {
                candidates.push((a1, a2));
            }
        }
        if candidates.is_empty() {
            candidates.push((if g11 > 0.0 { (b1 / g11).max(0.0) } else { 0.0 }, 0.0));
            candidates.push((0.0, if g22 > 0.0 { (b2 / g22).max(0.0) } else { 0.0 }));
        }
        candidates
            .into_iter()
            .map(|(a1, a2)| (self.residual(|t| a1 * (-t / t1).exp() + a2 * (-t / t2).exp()), a1, a2))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one candidate")
    }
}

/// Grid and noise model of a `(tau, theta)` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub tau_grid: Vec<f64>,
    pub theta_grid: Vec<f64>,
    #[serde(default = "default_cycles")]
    pub n_cycles: usize,
    #[serde(default = "default_skip")]
    pub transient_skip: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_scans")]
    pub n_scans: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub detection: Detection,
    #[serde(default)]
    pub evolution: EvolutionConfig,
}

fn default_cycles() -> usize {
    DEFAULT_N_CYCLES
}

impl SweepConfig {
    /// `d_max tau` in {0.05, 0.1, 0.2, 0.4}, theta in {22.5, 45, 67.5, 90}
    /// degrees, 2048 cycles.
    pub fn default_for(system: &SpinSystem) -> SweepConfig {
        let d = system.max_coupling().max(f64::MIN_POSITIVE);
        SweepConfig {
            tau_grid: [0.05, 0.1, 0.2, 0.4].iter().map(|x| x / d).collect(),
            theta_grid: [PI / 8.0, PI / 4.0, 3.0 * PI / 8.0, PI / 2.0].to_vec(),
            n_cycles: DEFAULT_N_CYCLES,
            transient_skip: DEFAULT_TRANSIENT_SKIP,
            noise_sigma: 0.0,
            n_scans: 1,
            base_seed: 0,
            detection: Detection::Ix,
            evolution: EvolutionConfig::default(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.tau_grid.len() * self.theta_grid.len()
    }

    /// Config of cell `index`, laid out tau-major.
    pub fn cell_config(&self, index: usize) -> DdConfig {
        let nt = self.theta_grid.len();
        DdConfig {
            tau: self.tau_grid[index / nt],
            theta: self.theta_grid[index % nt],
            n_cycles: self.n_cycles,
            transient_skip: self.transient_skip,
            noise_sigma: self.noise_sigma,
            n_scans: self.n_scans,
            rng_seed: cell_seed(self.base_seed, index),
            detection: self.detection,
            evolution: self.evolution.clone(),
        }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sweep cell `index`: `base ^ splitmix64(index)`.
pub fn cell_seed(base: u64, index: usize) -> u64 {
    base ^ splitmix64(index as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub index: usize,
    pub tau: f64,
    pub theta: f64,
    pub fit: Option<DecayFit>,
    pub n_star: usize,
    pub snr: f64,
    /// `ok` or the failure message.
    pub status: String,
}

impl SweepCell {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn total_amplitude(&self) -> Option<f64> {
        self.fit.as_ref().map(DecayFit::total_amplitude)
    }
}

/// Evaluates every cell independently. Cell failures are recorded in
/// `status`; only an empty grid or an unusable system is an error.
pub fn sweep(system: &SpinSystem, config: &SweepConfig) -> Result<Vec<SweepCell>> {
    if config.n_cells() == 0 {
        return Err(Error::InvalidArgument("sweep grids must be non-empty".into()));
    }
    let generator = Generator::new(OperatorKind::Hzz, system, &config.evolution)?;
    Ok((0..config.n_cells()).into_par_iter().map(|i| sweep_cell(&generator, config, i)).collect())
}

pub fn sweep_cell(generator: &Generator, config: &SweepConfig, index: usize) -> SweepCell {
    let cell = config.cell_config(index);
    let mut out = SweepCell { index, tau: cell.tau, theta: cell.theta, fit: None, n_star: 0, snr: 0.0, status: "ok".into() };
    let series = match run_dd_with(generator, &cell) {
        Ok(s) => s,
        Err(e) => {
            out.status = format!("error: {e}");
            return out;
        }
    };
    if let Some((n_star, snr)) = optimal_cycles(&series.cumulative_snr()) {
        out.n_star = n_star;
        out.snr = snr;
    }
    match series.fit(cell.transient_skip) {
        Ok(fit) => out.fit = Some(fit),
        Err(e) => out.status = format!("fit_failure: {e}"),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::{collective_pulse, evolve_density};
    use crate::system::{build_system, Geometry};

    fn synthetic(n: usize, dt: f64, f: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * dt).collect();
        let y = t.iter().map(|t| f(*t)).collect();
        (t, y)
    }

    #[test]
    fn free_spins_with_pi_pulses_echo_perfectly() {
        let s = build_system(Geometry::Explicit { matrix: vec![vec![0.0; 3]; 3] }, 3).unwrap();
        let series = run_dd(&s, &DdConfig::new(1e-5, PI, 64)).unwrap();
        assert!(series.signal.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn schur_matches_direct_stepping() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 3 }, 5).unwrap();
        for detection in [Detection::Ix, Detection::Magnitude] {
            let mut cfg = DdConfig::new(0.3, 0.7, 40);
            cfg.detection = detection;
            let series = run_dd(&s, &cfg).unwrap();

            // brute force: pulses and delays on the density itself
            let n = s.n_spins();
            let norm = n as f64 * 2f64.powi(n as i32 - 2);
            let ix = complex_matrix(OperatorKind::IxTotal, &s);
            let iy = complex_matrix(OperatorKind::IyTotal, &s);
            let iz = complex_matrix(OperatorKind::IzTotal, &s);
            let mut rho = collective_pulse(&iz, n, Axis::Y, PI / 2.0);
            for j in 0..40 {
                rho = evolve_density(&rho, OperatorKind::Hzz, &s, 0.15).unwrap();
                let x = ix.dotc(&rho).re / norm;
                let y = iy.dotc(&rho).re / norm;
                let expected = match detection {
                    Detection::Ix => x,
                    Detection::Magnitude => x.hypot(y),
                };
                assert!((series.clean[j] - expected).abs() < 1e-10, "cycle {j}: {} vs {expected}", series.clean[j]);
                rho = evolve_density(&rho, OperatorKind::Hzz, &s, 0.15).unwrap();
                rho = collective_pulse(&rho, n, Axis::X, 0.7);
            }
        }
    }

    #[test]
    fn noise_is_seeded() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 4).unwrap();
        let cfg = DdConfig::new(0.1, PI / 4.0, 50).with_noise(0.01, 4, 9);
        let a = run_dd(&s, &cfg).unwrap();
        let b = run_dd(&s, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.signal != a.clean);
        let c = run_dd(&s, &DdConfig { rng_seed: 10, ..cfg }).unwrap();
        assert!(c.signal != a.signal);
    }

    #[test]
    fn recovers_biexponential() {
        let (t, y) = synthetic(400, 0.05, |t| 0.7 * (-t).exp() + 0.3 * (-t / 10.0).exp());
        let fit = fit_biexponential(&t, &y, 8).unwrap();
        assert!(!fit.degenerate);
        for (got, want) in [(fit.a_fast, 0.7), (fit.t_fast, 1.0), (fit.a_slow, 0.3), (fit.t_slow, 10.0)] {
            assert!((got / want - 1.0).abs() < 0.01, "{fit:?}");
        }
        assert!(fit.residual_rms < 1e-6);
        assert_eq!(fit.fit_window, [8, 399]);
        assert!(!fit.at_bound);
    }

    #[test]
    fn plateau_pins_slow_constant() {
        let (t, y) = synthetic(300, 0.1, |t| 0.6 * (-t).exp() + 0.4);
        let fit = fit_biexponential(&t, &y, 0).unwrap();
        assert!(fit.at_bound, "{fit:?}");
        assert!((fit.a_slow - 0.4).abs() < 1e-3);
    }

    // finite systems plateau instead of decaying slowly; the retained
    // fraction still orders with the drive period
    #[test]
    fn shorter_period_retains_more_signal() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 8).unwrap();
        let slow = |tau: f64| run_dd(&s, &DdConfig::new(tau, PI / 4.0, 1024)).unwrap().fit(DEFAULT_TRANSIENT_SKIP).unwrap().a_slow;
        let (short, long) = (slow(0.1 / s.max_coupling()), slow(0.4 / s.max_coupling()));
        assert!(short > long + 0.1, "{short} vs {long}");
    }

    #[test]
    fn single_exponential_collapses() {
        let (t, y) = synthetic(200, 0.1, |t| 0.9 * (-t / 4.0).exp());
        let fit = fit_biexponential(&t, &y, 0).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.a_fast, 0.0);
        assert!((fit.t_slow / 4.0 - 1.0).abs() < 0.01);
        assert!(fit.t_fast <= fit.t_slow);
    }

    #[test]
    fn white_noise_fails() {
        let noise = add_noise(&[0.0; 300], 0.1, 4);
        let t: Vec<f64> = (0..300).map(|j| j as f64).collect();
        assert!(matches!(fit_biexponential(&t, &noise, 8), Err(Error::FitFailure(_))));
    }

    #[test]
    fn snr_grows_for_constant_signal() {
        let snr = cumulative_snr(&[1.0; 100], 0.5);
        assert!(snr.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(optimal_cycles(&snr).unwrap().0, 100);
        assert!((snr[99] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn scan_ratio_is_squared_retention_ratio() {
        let base: Vec<f64> = (0..500).map(|j| (-(j as f64) / 80.0).exp()).collect();
        let low: Vec<f64> = base.iter().map(|v| 0.25 * v).collect();
        assert!((scans_to_match(&base, 8.0, &low).unwrap() - 128.0).abs() < 1e-9);
    }

    #[test]
    fn cell_seeds_differ() {
        let seeds: Vec<u64> = (0..16).map(|i| cell_seed(7, i)).collect();
        let mut unique = seeds.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 16);
    }

    #[test]
    fn default_sweep_grid_has_operating_point() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 4).unwrap();
        let g = SweepConfig::default_for(&s);
        assert!(g.theta_grid.iter().any(|t| (t - PI / 4.0).abs() < 1e-15));
        assert_eq!(g.n_cycles, 2048);
    }
}
