//! Multiple-quantum-coherence protocol: forward double-quantum evolution,
//! collective phase shift, time-reversed evolution and `Iz` readout.
//!
//! The initial state is the traceless deviation `rho(0) = Iz`. Signals and
//! spectra are normalized by `Tr{Iz^2} = N 2^{N-2}` so that `S_{0,phi} = 1`.
//!
//! Two independent routes give the coherence spectrum: Fourier analysis of
//! the phase-cycled echo ([`spectrum_from_phases`]) and direct partition of
//! `|rho_rc|^2` of the forward-evolved density by coherence order
//! ([`spectrum_from_density`]), which no experiment has access to.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{coherence_order, BasisIndex};
use crate::error::{Error, Result};
use crate::evolution::{compile_program, dq_block, DqTiming, EvolutionConfig, Generator};
use crate::linalg::{self, CMat};
use crate::operators::{iz_vector, OperatorKind};
use crate::system::SpinSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exact propagation under `Hdq` and `-Hdq`.
    IdealHamiltonian,
    /// Eight-pulse blocks under `Hzz`; the backward block has every pulse
    /// phase advanced by 90 degrees, which realizes `-Hdq` at zeroth order.
    PulseLevel,
}

/// Settings shared by every run on one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    /// Duration of one DQ block in seconds.
    pub tau_dq: f64,
    pub mode: Mode,
    /// Relative coupling mismatch of the backward blocks: they run with
    /// couplings multiplied by `1 + mismatch`.
    #[serde(default)]
    pub mismatch: f64,
    /// Optional free evolution under `Hzz` before readout.
    #[serde(default)]
    pub filter_delay: Option<f64>,
    /// Budget on the total number of pulses of one pulse-level run.
    #[serde(default = "default_max_pulses")]
    pub max_pulses: usize,
    #[serde(default)]
    pub evolution: EvolutionConfig,
}

fn default_max_pulses() -> usize {
    4096
}

impl ProtocolSettings {
    pub fn ideal(tau_dq: f64) -> Self {
        ProtocolSettings {
            tau_dq,
            mode: Mode::IdealHamiltonian,
            mismatch: 0.0,
            filter_delay: None,
            max_pulses: default_max_pulses(),
            evolution: EvolutionConfig::default(),
        }
    }

    pub fn pulse_level(tau_dq: f64) -> Self {
        ProtocolSettings { mode: Mode::PulseLevel, ..Self::ideal(tau_dq) }
    }

    pub fn with_mismatch(mut self, mismatch: f64) -> Self {
        self.mismatch = mismatch;
        self
    }
}

/// One protocol execution: `n_blocks` forward and backward blocks, one
/// acquisition per phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqcRun {
    pub system: SpinSystem,
    pub n_blocks: usize,
    pub phases: Vec<f64>,
    pub settings: ProtocolSettings,
}

impl MqcRun {
    /// Total forward evolution time `t_n = n tau_dq`.
    pub fn evolution_time(&self) -> f64 {
        self.n_blocks as f64 * self.settings.tau_dq
    }
}

/// `M` equally spaced phases `2 pi j / M`.
pub fn uniform_phases(m: usize) -> Vec<f64> {
    (0..m).map(|j| TAU * j as f64 / m as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSignal {
    pub phi: Vec<f64>,
    pub values: Vec<Complex64>,
    pub n_blocks: usize,
}

/// Coherence-order distribution. `weights` are normalized to unit sum;
/// `normalization` is the raw sum before normalizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceSpectrum {
    pub orders: Vec<i32>,
    pub weights: Vec<f64>,
    pub n_blocks: usize,
    pub normalization: f64,
}

impl CoherenceSpectrum {
    pub fn weight(&self, k: i32) -> f64 {
        self.orders.iter().position(|&o| o == k).map_or(0.0, |i| self.weights[i])
    }

    pub fn raw_weight(&self, k: i32) -> f64 {
        self.weight(k) * self.normalization
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn odd_mass(&self) -> f64 {
        self.orders.iter().zip(&self.weights).filter(|(k, _)| *k % 2 != 0).map(|(_, w)| w).sum()
    }

    pub fn max_order(&self) -> i32 {
        self.orders.iter().map(|k| k.abs()).max().unwrap_or(0)
    }

    /// Largest `|S_k - S_{-k}|`.
    pub fn symmetry_error(&self) -> f64 {
        self.orders.iter().map(|&k| (self.weight(k) - self.weight(-k)).abs()).fold(0.0, f64::max)
    }

    /// Even orders `k >= 0` with their normalized weights, for inversion.
    pub fn half_spectrum(&self) -> (Vec<f64>, Vec<f64>) {
        let mut pairs: Vec<(i32, f64)> = self
            .orders
            .iter()
            .zip(&self.weights)
            .filter(|(k, _)| **k >= 0 && **k % 2 == 0)
            .map(|(k, w)| (*k, *w))
            .collect();
        pairs.sort_by_key(|p| p.0);
        pairs.into_iter().map(|(k, w)| (k as f64, w)).unzip()
    }
}

enum Dynamics {
    Ideal(Generator),
    Pulse { forward: CMat, backward: CMat },
}

/// Prepared propagators for repeated runs on one system.
pub struct MqcEngine {
    system: SpinSystem,
    settings: ProtocolSettings,
    dynamics: Dynamics,
    iz: nalgebra::DVector<f64>,
    iz_norm: f64,
    filter: Option<Generator>,
}

impl MqcEngine {
    pub fn new(system: &SpinSystem, settings: &ProtocolSettings) -> Result<MqcEngine> {
        if !(settings.tau_dq > 0.0) {
            return Err(Error::InvalidArgument(format!("tau_dq must be positive, got {}", settings.tau_dq)));
        }
        let cfg = &settings.evolution;
        cfg.limits.check(system.n_spins())?;
        let dynamics = match settings.mode {
            Mode::IdealHamiltonian => Dynamics::Ideal(Generator::new(OperatorKind::Hdq, system, cfg)?),
            Mode::PulseLevel => {
                let block = dq_block(DqTiming::for_cycle(settings.tau_dq))?;
                let forward = compile_program(&block, system, cfg)?.dense();
                let mismatched = system.scaled(1.0 + settings.mismatch);
                let backward = compile_program(&block.phase_advanced(), &mismatched, cfg)?.dense();
                Dynamics::Pulse { forward, backward }
            }
        };
        let filter = match settings.filter_delay {
            Some(t) if t > 0.0 => Some(Generator::new(OperatorKind::Hzz, system, cfg)?),
            _ => None,
        };
        let n = system.n_spins();
        Ok(MqcEngine {
            system: system.clone(),
            settings: settings.clone(),
            dynamics,
            iz: iz_vector(system),
            iz_norm: n as f64 * 2f64.powi(n as i32 - 2),
            filter,
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn settings(&self) -> &ProtocolSettings {
        &self.settings
    }

    fn check_budget(&self, n_blocks: usize) -> Result<()> {
        if let Dynamics::Pulse { .. } = self.dynamics {
            let pulses = 16 * n_blocks;
            if pulses > self.settings.max_pulses {
                return Err(Error::InvalidArgument(format!(
                    "{pulses} pulses exceed the budget of {}",
                    self.settings.max_pulses
                )));
            }
        }
        Ok(())
    }

    fn block_power(u: &CMat, n: usize) -> CMat {
        let mut out = linalg::identity(u.nrows());
        for _ in 0..n {
            out = linalg::cmul(u, &out);
        }
        out
    }

    /// `rho(t_n)` after the forward blocks, unnormalized.
    pub fn forward_density(&self, n_blocks: usize) -> Result<CMat> {
        self.check_budget(n_blocks)?;
        let iz = linalg::diagonal(&self.iz);
        match &self.dynamics {
            Dynamics::Ideal(g) => g.evolve_density(&iz, n_blocks as f64 * self.settings.tau_dq),
            Dynamics::Pulse { forward, .. } => {
                let u = Self::block_power(forward, n_blocks);
                Ok(linalg::cmul_adj(&linalg::cmul(&u, &iz), &u))
            }
        }
    }

    /// Applies the `n_blocks` backward blocks to `x`.
    fn backward(&self, x: &CMat, n_blocks: usize) -> Result<CMat> {
        match &self.dynamics {
            Dynamics::Ideal(g) => {
                g.evolve_density(x, -(1.0 + self.settings.mismatch) * n_blocks as f64 * self.settings.tau_dq)
            }
            Dynamics::Pulse { backward, .. } => {
                let u = Self::block_power(backward, n_blocks);
                Ok(linalg::cmul_adj(&linalg::cmul(&u, x), &u))
            }
        }
    }

    fn readout(&self, rho: &CMat) -> Result<Complex64> {
        let rho = match (&self.filter, self.settings.filter_delay) {
            (Some(g), Some(t)) => g.evolve_density(rho, t)?,
            _ => rho.clone(),
        };
        Ok(linalg::trace_with_diagonal(&self.iz, &rho) / self.iz_norm)
    }

    /// `U_B^dag Iz U_B`: the readout observable carried back through the
    /// backward blocks.
    fn heisenberg_readout(&self, n_blocks: usize) -> Result<CMat> {
        let iz = linalg::diagonal(&self.iz);
        match &self.dynamics {
            Dynamics::Ideal(g) => g.evolve_density(&iz, (1.0 + self.settings.mismatch) * n_blocks as f64 * self.settings.tau_dq),
            Dynamics::Pulse { backward, .. } => {
                let u = Self::block_power(backward, n_blocks);
                let u_adj = u.adjoint();
                Ok(linalg::cmul(&linalg::cmul(&u_adj, &iz), &u))
            }
        }
    }

    /// Phase-cycled echo `S_{n,phi} = Tr{Iz rho_phi(2 t_n)} / Tr{Iz^2}`.
    pub fn phase_signal(&self, n_blocks: usize, phases: &[f64]) -> Result<PhaseSignal> {
        Ok(self.observe(n_blocks, phases)?.0)
    }

    /// Phase signal and density spectrum from one forward propagation. The
    /// echo is evaluated as `Tr{(U_B^dag Iz U_B) R_phi rho(t_n) R_phi^dag}`;
    /// the final `z` rotation and the filter delay commute with the readout.
    pub fn observe(&self, n_blocks: usize, phases: &[f64]) -> Result<(PhaseSignal, CoherenceSpectrum)> {
        if phases.is_empty() {
            return Err(Error::InvalidArgument("at least one phase is required".into()));
        }
        if phases.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("phases must be strictly increasing".into()));
        }
        let rho_t = self.forward_density(n_blocks)?;
        // Tr{A B} = sum_rc A_cr B_rc
        let observable = self.heisenberg_readout(n_blocks)?.transpose();
        let values: Vec<Complex64> = phases
            .par_iter()
            .map(|&phi| {
                let shifted = linalg::rotate_z(&rho_t, &self.iz, -phi);
                let tr: Complex64 = observable.iter().zip(shifted.iter()).map(|(a, b)| a * b).sum();
                tr / self.iz_norm
            })
            .collect();
        let spectrum = partition_by_order(&rho_t, self.system.n_spins(), self.iz_norm, n_blocks);
        Ok((PhaseSignal { phi: phases.to_vec(), values, n_blocks }, spectrum))
    }

    /// Coherence spectrum of the forward-evolved density.
    pub fn density_spectrum(&self, n_blocks: usize) -> Result<CoherenceSpectrum> {
        let rho = self.forward_density(n_blocks)?;
        Ok(partition_by_order(&rho, self.system.n_spins(), self.iz_norm, n_blocks))
    }

    /// Loschmidt echoes `S_{n,0}` for `n = 0..=n_max`.
    pub fn loschmidt_echo(&self, n_max: usize) -> Result<Vec<f64>> {
        self.check_budget(n_max)?;
        let iz = linalg::diagonal(&self.iz);
        match &self.dynamics {
            Dynamics::Ideal(_) => (0..=n_max)
                .into_par_iter()
                .map(|n| {
                    let rho = self.forward_density(n)?;
                    Ok(self.readout(&self.backward(&rho, n)?)?.re)
                })
                .collect(),
            Dynamics::Pulse { forward, backward } => {
                let dim = iz.nrows();
                let mut f = linalg::identity(dim);
                let mut b = linalg::identity(dim);
                let mut out = Vec::with_capacity(n_max + 1);
                for n in 0..=n_max {
                    if n > 0 {
                        f = linalg::cmul(forward, &f);
                        b = linalg::cmul(backward, &b);
                    }
                    let u = linalg::cmul(&b, &f);
                    let rho = linalg::cmul_adj(&linalg::cmul(&u, &iz), &u);
                    out.push(self.readout(&rho)?.re);
                }
                Ok(out)
            }
        }
    }
}

/// Sums `|rho_rc|^2 / norm` by coherence order `k = m(r) - m(c)`, `k = -N..=N`.
pub fn partition_by_order(rho: &CMat, n_spins: usize, norm: f64, n_blocks: usize) -> CoherenceSpectrum {
    let n = n_spins as i32;
    let mut raw = vec![0.0; (2 * n + 1) as usize];
    for c in 0..rho.ncols() {
        for r in 0..rho.nrows() {
            let k = coherence_order(BasisIndex(r), BasisIndex(c));
            raw[(k + n) as usize] += rho[(r, c)].norm_sqr();
        }
    }
    let raw: Vec<f64> = raw.into_iter().map(|v| v / norm).collect();
    let total: f64 = raw.iter().sum();
    CoherenceSpectrum {
        orders: (-n..=n).collect(),
        weights: raw.iter().map(|v| v / total).collect(),
        n_blocks,
        normalization: total,
    }
}

/// Runs the full protocol for every phase of `run`.
pub fn run_protocol(run: &MqcRun) -> Result<PhaseSignal> {
    MqcEngine::new(&run.system, &run.settings)?.phase_signal(run.n_blocks, &run.phases)
}

/// Forward-only oracle spectrum.
pub fn spectrum_from_density(
    system: &SpinSystem,
    n_blocks: usize,
    settings: &ProtocolSettings,
) -> Result<CoherenceSpectrum> {
    MqcEngine::new(system, settings)?.density_spectrum(n_blocks)
}

/// Loschmidt echo for `n = 0..=n_max`.
pub fn loschmidt_echo(system: &SpinSystem, n_max: usize, settings: &ProtocolSettings) -> Result<Vec<f64>> {
    MqcEngine::new(system, settings)?.loschmidt_echo(n_max)
}

/// Imaginary residues below this are dropped silently.
pub const IMAG_TOLERANCE: f64 = 1e-8;

/// Discrete Fourier analysis over a uniform phase grid of `M` points:
/// `S_k = (1/M) sum_j S_{phi_j} exp(i phi_j k)` for `|k| <= M/2 - 1`.
pub fn spectrum_from_phases(signal: &PhaseSignal) -> Result<CoherenceSpectrum> {
    let m = signal.phi.len();
    if m < 2 || signal.values.len() != m {
        return Err(Error::NonUniformPhaseGrid(format!("{m} phases, {} values", signal.values.len())));
    }
    for (j, phi) in signal.phi.iter().enumerate() {
        let expected = TAU * j as f64 / m as f64;
        if (phi - expected).abs() > 1e-9 {
            return Err(Error::NonUniformPhaseGrid(format!("phase {j} is {phi}, expected {expected}")));
        }
    }
    let k_max = (m / 2) as i32 - 1;
    let orders: Vec<i32> = (-k_max..=k_max).collect();
    let mut raw = Vec::with_capacity(orders.len());
    for &k in &orders {
        let s: Complex64 = signal
            .phi
            .iter()
            .zip(&signal.values)
            .map(|(phi, v)| v * Complex64::from_polar(1.0, phi * k as f64))
            .sum::<Complex64>()
            / m as f64;
        if s.im.abs() > IMAG_TOLERANCE {
            log::warn!("order {k}: imaginary residue {:.3e} discarded", s.im);
        }
        raw.push(s.re);
    }
    let total: f64 = raw.iter().sum();
    if total.abs() < f64::MIN_POSITIVE {
        return Err(Error::InvalidArgument("phase signal has zero mean".into()));
    }
    let weights = raw
        .iter()
        .map(|v| {
            if *v < -IMAG_TOLERANCE {
                log::warn!("negative coherence weight {v:.3e} clipped to zero");
            }
            v.max(0.0) / total
        })
        .collect();
    Ok(CoherenceSpectrum { orders, weights, n_blocks: signal.n_blocks, normalization: total })
}

/// `sum_k k^2 S_k` of a normalized spectrum.
pub fn otoc_second_moment(spectrum: &CoherenceSpectrum) -> f64 {
    spectrum.orders.iter().zip(&spectrum.weights).map(|(k, w)| (*k as f64).powi(2) * w).sum()
}

/// Cluster-size estimates: the second moment itself and the Gaussian-width
/// convention of the classic spin-counting model (twice the second moment).
pub fn cluster_size_estimates(spectrum: &CoherenceSpectrum) -> (f64, f64) {
    let s = otoc_second_moment(spectrum);
    (s, 2.0 * s)
}

/// `-Tr{[Iz, Iz(t)]^2} / Tr{Iz^2}` with `Iz(t) = exp(i Hdq t) Iz exp(-i Hdq t)`,
/// from the explicit commutator.
pub fn otoc_direct(system: &SpinSystem, t: f64, config: &EvolutionConfig) -> Result<f64> {
    let n = system.n_spins();
    let iz_vec = iz_vector(system);
    let iz = linalg::diagonal(&iz_vec);
    let heisenberg = Generator::new(OperatorKind::Hdq, system, config)?.evolve_density(&iz, -t)?;
    let commutator = linalg::cmul(&iz, &heisenberg) - linalg::cmul(&heisenberg, &iz);
    let square = linalg::cmul(&commutator, &commutator);
    let norm = n as f64 * 2f64.powi(n as i32 - 2);
    Ok(-square.trace().re / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::system::{build_system, Geometry};

    fn two_spins() -> SpinSystem {
        build_system(Geometry::AllToAll { d0: 1.0 }, 2).unwrap()
    }

    #[test]
    fn no_blocks_gives_unit_signal() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 1 }, 4).unwrap();
        let run = MqcRun { system: s, n_blocks: 0, phases: uniform_phases(8), settings: ProtocolSettings::ideal(0.3) };
        let sig = run_protocol(&run).unwrap();
        assert!(sig.values.iter().all(|v| (v - 1.0).norm() < 1e-12));
        let spec = spectrum_from_density(&run.system, 0, &run.settings).unwrap();
        assert!((spec.weight(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_spin_phase_signal() {
        let settings = ProtocolSettings::ideal(0.25);
        let engine = MqcEngine::new(&two_spins(), &settings).unwrap();
        let phases = uniform_phases(16);
        for n in 1..6 {
            let t = n as f64 * 0.25;
            let sig = engine.phase_signal(n, &phases).unwrap();
            for (phi, v) in phases.iter().zip(&sig.values) {
                let expected = t.cos().powi(2) + t.sin().powi(2) * (2.0 * phi).cos();
                assert!((v.re - expected).abs() < 1e-10);
                assert!(v.im.abs() < 1e-10);
                assert!((v.re - reference::mqc_signal(&two_spins(), t, *phi)).abs() < 1e-10);
            }
            let spec = spectrum_from_phases(&sig).unwrap();
            assert!((spec.weight(0) - t.cos().powi(2)).abs() < 1e-10);
            assert!((spec.weight(2) - t.sin().powi(2) / 2.0).abs() < 1e-10);
            assert!((spec.weight(-2) - t.sin().powi(2) / 2.0).abs() < 1e-10);
            let dens = engine.density_spectrum(n).unwrap();
            assert!((dens.weight(2) - t.sin().powi(2) / 2.0).abs() < 1e-10);
            assert!((otoc_second_moment(&dens) - 4.0 * t.sin().powi(2)).abs() < 1e-10);
            let direct = otoc_direct(&two_spins(), t, &EvolutionConfig::default()).unwrap();
            assert!((direct - 4.0 * t.sin().powi(2)).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_signal_is_pure_zero_order() {
        let sig = PhaseSignal { phi: uniform_phases(8), values: vec![Complex64::new(1.0, 0.0); 8], n_blocks: 0 };
        let spec = spectrum_from_phases(&sig).unwrap();
        assert_eq!(spec.orders, (-3..=3).collect::<Vec<_>>());
        assert!((spec.weight(0) - 1.0).abs() < 1e-15);
        assert!(spec.orders.iter().filter(|&&k| k != 0).all(|&k| spec.weight(k).abs() < 1e-15));
    }

    #[test]
    fn rejects_non_uniform_grid() {
        let sig = PhaseSignal { phi: vec![0.0, 1.0, 2.0], values: vec![Complex64::new(1.0, 0.0); 3], n_blocks: 0 };
        assert!(matches!(spectrum_from_phases(&sig), Err(Error::NonUniformPhaseGrid(_))));
    }

    #[test]
    fn phase_route_matches_density_route_at_six_spins() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 21 }, 6).unwrap();
        let engine = MqcEngine::new(&s, &ProtocolSettings::ideal(0.2)).unwrap();
        for n in 1..=3 {
            let a = spectrum_from_phases(&engine.phase_signal(n, &uniform_phases(16)).unwrap()).unwrap();
            let b = engine.density_spectrum(n).unwrap();
            for k in -6..=6 {
                assert!((a.weight(k) - b.weight(k)).abs() < 1e-8, "n={n} k={k}");
            }
            assert!(b.odd_mass() < 1e-12);
            assert!(b.symmetry_error() < 1e-12);
        }
    }

    #[test]
    fn ideal_echo_is_perfect() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 2 }, 5).unwrap();
        let le = loschmidt_echo(&s, 5, &ProtocolSettings::ideal(0.3)).unwrap();
        assert!(le.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn pulse_level_echo_at_vanishing_coupling() {
        let s = build_system(Geometry::AllToAll { d0: 1e-3 }, 4).unwrap();
        let le = loschmidt_echo(&s, 3, &ProtocolSettings::pulse_level(60e-6)).unwrap();
        assert!(le.iter().all(|v| (v - 1.0).abs() < 1e-9), "{le:?}");
    }

    #[test]
    fn pulse_budget_enforced() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 3).unwrap();
        let mut settings = ProtocolSettings::pulse_level(60e-6);
        settings.max_pulses = 32;
        let engine = MqcEngine::new(&s, &settings).unwrap();
        assert!(engine.forward_density(2).is_ok());
        assert!(engine.forward_density(3).is_err());
    }

    #[test]
    fn filter_delay_does_not_change_readout() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 3 }, 4).unwrap();
        let mut settings = ProtocolSettings::ideal(0.4);
        let plain = MqcEngine::new(&s, &settings).unwrap().phase_signal(2, &uniform_phases(8)).unwrap();
        settings.filter_delay = Some(0.7);
        let filtered = MqcEngine::new(&s, &settings).unwrap().phase_signal(2, &uniform_phases(8)).unwrap();
        for (a, b) in plain.values.iter().zip(&filtered.values) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
