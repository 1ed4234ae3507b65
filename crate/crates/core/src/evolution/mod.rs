//! Unitary time evolution of kets and density matrices.
//!
//! Interaction Hamiltonians are real symmetric in the computational basis, so
//! up to `eigen_max_spins` they are diagonalized once with a real symmetric
//! eigensolver; larger systems fall back to matrix-free Lanczos propagation,
//! column by column for densities. Collective `I_alpha` generators are applied
//! as products of single-spin rotations. Negative times run the dynamics
//! backwards.

pub mod krylov;
pub mod pulse;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use krylov::KrylovSettings;
pub use pulse::{
    collective_pulse, compile_program, dq_block, dq_block_with_layout, phase_shift, rotate_ket, Axis, DqLayout, DqTiming,
    PulseProgram, Step,
};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, RMat};
use crate::operators::{iz_vector, real_matrix, OperatorKind};
use crate::system::{Limits, SpinSystem};
use pulse::Generator1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Auto,
    Eigen,
    Krylov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub method: Method,
    /// `Auto` diagonalizes up to this many spins.
    pub eigen_max_spins: usize,
    pub krylov: KrylovSettingsDoc,
    pub limits: Limits,
}

/// Serializable mirror of [`KrylovSettings`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovSettingsDoc {
    pub tolerance: f64,
    pub max_dim: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        let k = KrylovSettings::default();
        EvolutionConfig {
            method: Method::Auto,
            eigen_max_spins: 10,
            krylov: KrylovSettingsDoc { tolerance: k.tolerance, max_dim: k.max_dim },
            limits: Limits::default(),
        }
    }
}

impl EvolutionConfig {
    pub fn krylov_settings(&self) -> KrylovSettings {
        KrylovSettings { tolerance: self.krylov.tolerance, max_dim: self.krylov.max_dim, ..Default::default() }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }
}

/// Eigendecomposition `H = R V diag(E) V^T R^dag` of a real symmetric
/// Hamiltonian, with `R = exp(-i phi Iz)` carrying the phase of `HdqPhase`.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: RMat,
    eigenvectors_t: RMat,
    pub phase: f64,
    iz: DVector<f64>,
}

impl SpectralDecomposition {
    pub fn compute(kind: OperatorKind, system: &SpinSystem) -> Result<SpectralDecomposition> {
        let (base, phase) = match kind {
            OperatorKind::HdqPhase(phi) => (OperatorKind::Hdq, phi),
            OperatorKind::Hzz | OperatorKind::Hdq | OperatorKind::IzTotal | OperatorKind::IxTotal => (kind, 0.0),
            OperatorKind::IyTotal => {
                return Err(Error::InvalidArgument("Iy has no real eigendecomposition".into()))
            }
        };
        let h = real_matrix(base, system).expect("real operator");
        let eig = h.symmetric_eigen();
        let eigenvectors_t = eig.eigenvectors.transpose();
        Ok(SpectralDecomposition {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            eigenvectors_t,
            phase,
            iz: iz_vector(system),
        })
    }

    fn phases(&self, t: f64) -> Vec<Complex64> {
        self.eigenvalues.iter().map(|e| Complex64::from_polar(1.0, -e * t)).collect()
    }

    /// `V^T X V` in the eigenbasis (phase frame removed).
    pub fn to_eigenbasis(&self, x: &CMat) -> CMat {
        let x = linalg::rotate_z(x, &self.iz, -self.phase);
        linalg::real_sandwich(&self.eigenvectors_t, &x, &self.eigenvectors)
    }

    pub fn from_eigenbasis(&self, x: &CMat) -> CMat {
        let out = linalg::real_sandwich(&self.eigenvectors, x, &self.eigenvectors_t);
        linalg::rotate_z(&out, &self.iz, self.phase)
    }

    /// Evolves an eigenbasis operator by `t`: element `(a, b)` gains
    /// `exp(-i (E_a - E_b) t)`.
    pub fn advance_eigenbasis(&self, x: &CMat, t: f64) -> CMat {
        let p = self.phases(t);
        CMat::from_fn(x.nrows(), x.ncols(), |a, b| x[(a, b)] * p[a] * p[b].conj())
    }

    pub fn evolve_density(&self, rho: &CMat, t: f64) -> CMat {
        self.from_eigenbasis(&self.advance_eigenbasis(&self.to_eigenbasis(rho), t))
    }

    pub fn evolve_ket(&self, psi: &[Complex64], t: f64) -> Vec<Complex64> {
        let r: Vec<Complex64> = self.iz.iter().map(|m| Complex64::from_polar(1.0, -self.phase * m)).collect();
        let shifted: Vec<Complex64> = psi.iter().zip(&r).map(|(a, b)| a * b.conj()).collect();
        let (re, im): (Vec<f64>, Vec<f64>) = shifted.iter().map(|v| (v.re, v.im)).unzip();
        let dim = psi.len();
        let cre = &self.eigenvectors_t * DVector::from_vec(re);
        let cim = &self.eigenvectors_t * DVector::from_vec(im);
        let p = self.phases(t);
        let coeff: Vec<Complex64> = (0..dim).map(|a| Complex64::new(cre[a], cim[a]) * p[a]).collect();
        let (re, im): (Vec<f64>, Vec<f64>) = coeff.iter().map(|v| (v.re, v.im)).unzip();
        let ore = &self.eigenvectors * DVector::from_vec(re);
        let oim = &self.eigenvectors * DVector::from_vec(im);
        (0..dim).map(|i| Complex64::new(ore[i], oim[i]) * r[i]).collect()
    }

    /// Dense `exp(-i H t)`.
    pub fn unitary(&self, t: f64) -> CMat {
        let p = self.phases(t);
        let dim = self.eigenvalues.len();
        let vc = DMatrix::from_fn(dim, dim, |i, a| self.eigenvectors[(i, a)] * p[a].re);
        let vs = DMatrix::from_fn(dim, dim, |i, a| self.eigenvectors[(i, a)] * p[a].im);
        let u = linalg::join(&(&vc * &self.eigenvectors_t), &(&vs * &self.eigenvectors_t));
        linalg::rotate_z(&u, &self.iz, self.phase)
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Spectral(Arc<SpectralDecomposition>),
    Krylov(KrylovSettings),
    Collective(Generator1),
}

/// A Hamiltonian bound to a system together with the propagation method
/// chosen for it.
#[derive(Debug, Clone)]
pub struct Generator {
    kind: OperatorKind,
    system: SpinSystem,
    backend: Backend,
}

impl Generator {
    pub fn new(kind: OperatorKind, system: &SpinSystem, config: &EvolutionConfig) -> Result<Generator> {
        config.limits.check(system.n_spins())?;
        let backend = match kind {
            OperatorKind::IzTotal => Backend::Collective(Generator1::Z),
            OperatorKind::IxTotal => Backend::Collective(Generator1::X),
            OperatorKind::IyTotal => Backend::Collective(Generator1::Y),
            _ => {
                let eigen = match config.method {
                    Method::Eigen => true,
                    Method::Krylov => false,
                    Method::Auto => system.n_spins() <= config.eigen_max_spins,
                };
                if eigen {
                    Backend::Spectral(Arc::new(SpectralDecomposition::compute(kind, system)?))
                } else {
                    Backend::Krylov(config.krylov_settings())
                }
            }
        };
        Ok(Generator { kind, system: system.clone(), backend })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn spectral(&self) -> Option<&SpectralDecomposition> {
        match &self.backend {
            Backend::Spectral(s) => Some(s),
            _ => None,
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let dim = self.system.dim();
        if len != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: len });
        }
        Ok(())
    }

    /// `exp(-i H t) |psi>`.
    pub fn evolve_ket(&self, psi: &[Complex64], t: f64) -> Result<Vec<Complex64>> {
        self.check_len(psi.len())?;
        match &self.backend {
            Backend::Spectral(s) => Ok(s.evolve_ket(psi, t)),
            Backend::Krylov(settings) => krylov::expm_krylov(self.kind, &self.system, psi, t, settings),
            Backend::Collective(g) => {
                let mut out = psi.to_vec();
                pulse::rotate_ket_generic(&mut out, self.system.n_spins(), *g, t);
                Ok(out)
            }
        }
    }

    /// `exp(-i H t) rho exp(i H t)`.
    pub fn evolve_density(&self, rho: &CMat, t: f64) -> Result<CMat> {
        self.check_len(rho.nrows())?;
        self.check_len(rho.ncols())?;
        match &self.backend {
            Backend::Spectral(s) => Ok(s.evolve_density(rho, t)),
            Backend::Krylov(_) => {
                let left = self.evolve_columns(rho, t)?;
                let right = self.evolve_columns(&left.adjoint(), t)?;
                Ok(right.adjoint())
            }
            Backend::Collective(g) => {
                let mut out = rho.clone();
                pulse::rotate_density_generic(&mut out, self.system.n_spins(), *g, t);
                Ok(out)
            }
        }
    }

    /// `exp(-i H t) X`, each column propagated independently.
    fn evolve_columns(&self, x: &CMat, t: f64) -> Result<CMat> {
        let dim = x.nrows();
        let columns: Vec<Vec<Complex64>> = (0..x.ncols())
            .into_par_iter()
            .map(|c| self.evolve_ket(x.column(c).as_slice(), t))
            .collect::<Result<_>>()?;
        Ok(CMat::from_fn(dim, x.ncols(), |r, c| columns[c][r]))
    }

    pub fn propagator(&self, t: f64) -> Result<Propagator> {
        Ok(match &self.backend {
            Backend::Spectral(s) => Propagator {
                form: PropagatorForm::Eigen { decomposition: s.clone(), time: t },
                kind: Some(self.kind),
                duration: t,
            },
            _ => {
                let u = self.evolve_columns(&linalg::identity(self.system.dim()), t)?;
                Propagator::from_dense(u, Some(self.kind), t)
            }
        })
    }
}

#[derive(Debug, Clone)]
pub enum PropagatorForm {
    Eigen { decomposition: Arc<SpectralDecomposition>, time: f64 },
    DenseUnitary(CMat),
}

/// A unitary together with the Hamiltonian and duration that generated it.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub form: PropagatorForm,
    pub kind: Option<OperatorKind>,
    pub duration: f64,
}

impl Propagator {
    pub fn from_dense(matrix: CMat, kind: Option<OperatorKind>, duration: f64) -> Propagator {
        Propagator { form: PropagatorForm::DenseUnitary(matrix), kind, duration }
    }

    pub fn dense_matrix(&self) -> CMat {
        self.dense()
    }

    pub fn dense(&self) -> CMat {
        match &self.form {
            PropagatorForm::Eigen { decomposition, time } => decomposition.unitary(*time),
            PropagatorForm::DenseUnitary(m) => m.clone(),
        }
    }

    pub fn apply_density(&self, rho: &CMat) -> CMat {
        match &self.form {
            PropagatorForm::Eigen { decomposition, time } => decomposition.evolve_density(rho, *time),
            PropagatorForm::DenseUnitary(u) => linalg::cmul_adj(&linalg::cmul(u, rho), u),
        }
    }

    pub fn unitarity_error(&self) -> f64 {
        linalg::unitarity_error(&self.dense())
    }
}

/// Convenience: `exp(-i H t) |psi>` with the default configuration.
pub fn evolve_ket(psi: &[Complex64], kind: OperatorKind, system: &SpinSystem, t: f64) -> Result<Vec<Complex64>> {
    Generator::new(kind, system, &EvolutionConfig::default())?.evolve_ket(psi, t)
}

/// Convenience: `exp(-i H t) rho exp(i H t)` with the default configuration.
pub fn evolve_density(rho: &CMat, kind: OperatorKind, system: &SpinSystem, t: f64) -> Result<CMat> {
    Generator::new(kind, system, &EvolutionConfig::default())?.evolve_density(rho, t)
}

/// Normalized Frobenius distance `|U_program - exp(-i H_target T)| / 2^{N/2}`
/// with every coupling multiplied by `scale`.
pub fn aht_error(
    program: &PulseProgram,
    target: OperatorKind,
    system: &SpinSystem,
    scale: f64,
    config: &EvolutionConfig,
) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("coupling scale must be positive, got {scale}")));
    }
    let scaled = system.scaled(scale);
    let u_program = compile_program(program, &scaled, config)?.dense();
    let u_target = Generator::new(target, &scaled, config)?.propagator(program.total_duration())?.dense();
    let diff = u_program - u_target;
    let frob = diff.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    Ok(frob / (system.dim() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::complex_matrix;
    use crate::reference;
    use crate::system::{build_system, Geometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ket(dim: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<Complex64> =
            (0..dim).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn antiparallel_pair_is_stationary_under_dq() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 2).unwrap();
        let mut psi = vec![Complex64::new(0.0, 0.0); 4];
        psi[0b01] = Complex64::new(1.0, 0.0);
        for t in [0.1, 1.0, 7.3] {
            let out = evolve_ket(&psi, OperatorKind::Hdq, &s, t).unwrap();
            assert!(max_diff(&out, &psi) < 1e-14);
        }
    }

    #[test]
    fn two_spin_density_rotation() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 2).unwrap();
        let iz = complex_matrix(OperatorKind::IzTotal, &s);
        let h = reference::kron_operator(OperatorKind::Hdq, &s);
        for t in [0.2, 0.9, 2.4] {
            let rho = evolve_density(&iz, OperatorKind::Hdq, &s, t).unwrap();
            assert!((rho[(3, 0)].norm() - f64::sin(t).abs()).abs() < 1e-12);
            assert!((rho[(3, 3)].re - f64::cos(t)).abs() < 1e-12);
            assert!((rho[(0, 0)].re + f64::cos(t)).abs() < 1e-12);
            let u = reference::propagator(&h, t);
            let brute = &u * &iz * u.adjoint();
            assert!((brute - rho).camax() < 1e-12);
        }
    }

    #[test]
    fn norm_preserved_under_zz() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 2 }, 6).unwrap();
        let psi = random_ket(64, 3);
        let out = evolve_ket(&psi, OperatorKind::Hzz, &s, 3.7).unwrap();
        let n: f64 = out.iter().map(|x| x.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composition_and_reversal() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 9 }, 5).unwrap();
        let rho = complex_matrix(OperatorKind::IzTotal, &s) + complex_matrix(OperatorKind::IyTotal, &s);
        for kind in [OperatorKind::Hzz, OperatorKind::Hdq, OperatorKind::HdqPhase(0.8)] {
            for method in [Method::Eigen, Method::Krylov] {
                let g = Generator::new(kind, &s, &EvolutionConfig::default().with_method(method)).unwrap();
                let a = g.evolve_density(&rho, 0.7 + 1.1).unwrap();
                let b = g.evolve_density(&g.evolve_density(&rho, 0.7).unwrap(), 1.1).unwrap();
                assert!((&a - &b).camax() < 1e-10);
                let back = g.evolve_density(&a, -1.8).unwrap();
                assert!((back - &rho).camax() < 1e-10);
            }
        }
    }

    #[test]
    fn eigen_and_krylov_agree_at_eight_spins() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 4 }, 8).unwrap();
        for (i, kind) in [OperatorKind::Hzz, OperatorKind::Hdq, OperatorKind::HdqPhase(2.0)].into_iter().enumerate() {
            let psi = random_ket(256, 10 + i as u64);
            let eig = Generator::new(kind, &s, &EvolutionConfig::default().with_method(Method::Eigen)).unwrap();
            let kry = Generator::new(kind, &s, &EvolutionConfig::default().with_method(Method::Krylov)).unwrap();
            let a = eig.evolve_ket(&psi, 2.5).unwrap();
            let b = kry.evolve_ket(&psi, 2.5).unwrap();
            assert!(max_diff(&a, &b) < 1e-8, "{kind:?}");
        }
    }

    #[test]
    fn propagators_are_unitary() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 4 }, 6).unwrap();
        for kind in [OperatorKind::Hzz, OperatorKind::Hdq, OperatorKind::HdqPhase(0.3), OperatorKind::IyTotal] {
            let p = Generator::new(kind, &s, &EvolutionConfig::default()).unwrap().propagator(4.2).unwrap();
            assert!(p.unitarity_error() < 1e-10, "{kind:?}");
            let brute = reference::propagator(&reference::kron_operator(kind, &s), 4.2);
            assert!((p.dense() - brute).camax() < 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn single_delay_program_matches_evolve() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 8 }, 4).unwrap();
        let p = PulseProgram::new("one", vec![Step::Delay { t: 1.3, h: OperatorKind::Hzz }]);
        let cfg = EvolutionConfig::default();
        let u = compile_program(&p, &s, &cfg).unwrap();
        let direct = Generator::new(OperatorKind::Hzz, &s, &cfg).unwrap().propagator(1.3).unwrap();
        assert!((u.dense() - direct.dense()).camax() < 1e-12);
        assert_eq!(aht_error(&p, OperatorKind::Hzz, &s, 1.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn dq_block_error_vanishes_at_small_coupling() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 6 }, 4).unwrap();
        let block = dq_block(DqTiming::default()).unwrap();
        let cfg = EvolutionConfig::default();
        let tau = block.total_duration();
        let e1 = aht_error(&block, OperatorKind::Hdq, &s, 0.04 / tau, &cfg).unwrap();
        let e2 = aht_error(&block, OperatorKind::Hdq, &s, 0.02 / tau, &cfg).unwrap();
        let tiny = aht_error(&block, OperatorKind::Hdq, &s, 1e-4 / tau, &cfg).unwrap();
        assert!(tiny < 1e-7, "{tiny}");
        assert!((e2 / e1 - 0.25).abs() < 0.0625, "ratio {}", e2 / e1);
        // the time-symmetric layout cancels the first-order term
        let sym = dq_block_with_layout(DqTiming::default(), DqLayout::Symmetric).unwrap();
        let s1 = aht_error(&sym, OperatorKind::Hdq, &s, 0.04 / tau, &cfg).unwrap();
        let s2 = aht_error(&sym, OperatorKind::Hdq, &s, 0.02 / tau, &cfg).unwrap();
        assert!((s2 / s1 - 0.125).abs() < 0.02, "symmetric ratio {}", s2 / s1);
        // the quarter-turned block realizes -Hdq
        let scaled = s.scaled(0.02 / tau);
        let back = compile_program(&block.phase_advanced(), &scaled, &cfg).unwrap().dense();
        let target = Generator::new(OperatorKind::Hdq, &scaled, &cfg).unwrap().propagator(-tau).unwrap().dense();
        let e_back = (back - target).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() / 4.0;
        assert!(e_back < 2.0 * e2, "{e_back} vs {e2}");
    }
}
