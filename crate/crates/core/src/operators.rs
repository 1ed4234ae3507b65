//! Matrix-free application of the collective spin operators and the two
//! dipolar Hamiltonians.
//!
//! `Hzz = sum_{i<j} d_ij (3 Iz_i Iz_j - I_i . I_j)` is the secular dipolar
//! interaction and `Hdq = -1/2 sum_{i<j} d_ij (I+_i I+_j + I-_i I-_j)` the
//! double-quantum Hamiltonian. Both are real symmetric in the computational
//! basis. Matrix elements are generated column by column from bit flips;
//! nothing of size `4^N` is built here.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::BasisIndex;
use crate::error::{Error, Result};
use crate::system::SpinSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    #[serde(rename = "iz")]
    IzTotal,
    #[serde(rename = "ix")]
    IxTotal,
    #[serde(rename = "iy")]
    IyTotal,
    #[serde(rename = "zz")]
    Hzz,
    #[serde(rename = "dq")]
    Hdq,
    /// `exp(-i phi Iz) Hdq exp(i phi Iz)`
    #[serde(rename = "dq_phase")]
    HdqPhase(f64),
}

impl OperatorKind {
    /// True when the matrix is real in the computational basis.
    pub fn is_real(self) -> bool {
        match self {
            OperatorKind::IyTotal => false,
            OperatorKind::HdqPhase(phi) => (phi.sin() * 2.0 * phi.cos()).abs() == 0.0,
            _ => true,
        }
    }

    /// Hamiltonians whose matrix elements scale with the couplings.
    pub fn is_interaction(self) -> bool {
        matches!(self, OperatorKind::Hzz | OperatorKind::Hdq | OperatorKind::HdqPhase(_))
    }
}

/// Visits every non-zero element `<row| O |col>` of column `col`.
/// Rows may repeat (the caller accumulates).
pub fn for_each_in_column<F>(kind: OperatorKind, system: &SpinSystem, col: usize, mut f: F)
where
    F: FnMut(usize, Complex64),
{
    let n = system.n_spins();
    let re = |v: f64| Complex64::new(v, 0.0);
    match kind {
        OperatorKind::IzTotal => f(col, re(BasisIndex(col).magnetization(n))),
        OperatorKind::IxTotal => {
            for i in 0..n {
                f(col ^ (1 << i), re(0.5));
            }
        }
        OperatorKind::IyTotal => {
            for i in 0..n {
                // Iy|dn> = -i/2 |up>, Iy|up> = +i/2 |dn>
                let sign = if col >> i & 1 == 1 { 0.5 } else { -0.5 };
                f(col ^ (1 << i), Complex64::new(0.0, sign));
            }
        }
        OperatorKind::Hzz => {
            let mut diag = 0.0;
            for (i, j, d) in system.pairs() {
                let (bi, bj) = (col >> i & 1, col >> j & 1);
                if bi == bj {
                    diag += 0.5 * d;
                } else {
                    diag -= 0.5 * d;
                    f(col ^ (1 << i) ^ (1 << j), re(-0.5 * d));
                }
            }
            f(col, re(diag));
        }
        OperatorKind::Hdq | OperatorKind::HdqPhase(_) => {
            let phi = if let OperatorKind::HdqPhase(p) = kind { p } else { 0.0 };
            for (i, j, d) in system.pairs() {
                let (bi, bj) = (col >> i & 1, col >> j & 1);
                if bi == bj {
                    // both down -> both up raises m by 2, phase exp(-2 i phi)
                    let delta_m = if bi == 0 { 2.0 } else { -2.0 };
                    let phase = Complex64::from_polar(1.0, -phi * delta_m);
                    f(col ^ (1 << i) ^ (1 << j), phase * (-0.5 * d));
                }
            }
        }
    }
}

/// `O |psi>` computed matrix-free.
pub fn apply_operator(kind: OperatorKind, system: &SpinSystem, state: &[Complex64]) -> Result<Vec<Complex64>> {
    let dim = system.dim();
    if state.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: state.len() });
    }
    let mut out = vec![Complex64::new(0.0, 0.0); dim];
    apply_into(kind, system, state, &mut out);
    Ok(out)
}

/// Accumulating variant used by the Krylov propagator: `out = O state`.
pub(crate) fn apply_into(kind: OperatorKind, system: &SpinSystem, state: &[Complex64], out: &mut [Complex64]) {
    out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    if let OperatorKind::IzTotal = kind {
        let n = system.n_spins();
        for (b, (o, s)) in out.iter_mut().zip(state).enumerate() {
            *o = s * BasisIndex(b).magnetization(n);
        }
        return;
    }
    let pairs = system.pairs();
    match kind {
        OperatorKind::Hzz => {
            for (col, &amp) in state.iter().enumerate() {
                if amp == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let mut diag = 0.0;
                for &(i, j, d) in &pairs {
                    if (col >> i ^ col >> j) & 1 == 0 {
                        diag += 0.5 * d;
                    } else {
                        diag -= 0.5 * d;
                        out[col ^ (1 << i) ^ (1 << j)] += amp * (-0.5 * d);
                    }
                }
                out[col] += amp * diag;
            }
        }
        OperatorKind::Hdq => {
            for (col, &amp) in state.iter().enumerate() {
                if amp == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for &(i, j, d) in &pairs {
                    if (col >> i ^ col >> j) & 1 == 0 {
                        out[col ^ (1 << i) ^ (1 << j)] += amp * (-0.5 * d);
                    }
                }
            }
        }
        _ => {
            for (col, &amp) in state.iter().enumerate() {
                if amp == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for_each_in_column(kind, system, col, |row, v| out[row] += v * amp);
            }
        }
    }
}

/// Dense real matrix of a real operator, assembled from the matrix-free
/// column generator. Returns `None` for complex kinds.
pub fn real_matrix(kind: OperatorKind, system: &SpinSystem) -> Option<DMatrix<f64>> {
    if !kind.is_real() {
        return None;
    }
    let dim = system.dim();
    let mut m = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        for_each_in_column(kind, system, col, |row, v| m[(row, col)] += v.re);
    }
    Some(m)
}

/// Dense complex matrix of any operator kind.
pub fn complex_matrix(kind: OperatorKind, system: &SpinSystem) -> DMatrix<Complex64> {
    let dim = system.dim();
    let mut m = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        for_each_in_column(kind, system, col, |row, v| m[(row, col)] += v);
    }
    m
}

/// Total `Iz` as a diagonal vector.
pub fn iz_vector(system: &SpinSystem) -> DVector<f64> {
    DVector::from_vec(crate::basis::iz_diagonal(system.n_spins()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::system::{build_system, Geometry};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn ket(n: usize, up: &[bool]) -> Vec<Complex64> {
        let mut v = vec![c(0.0); 1 << n];
        v[BasisIndex::from_spins(up).0] = c(1.0);
        v
    }

    fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..dim).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn dq_annihilates_antiparallel_pair() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 2).unwrap();
        let out = apply_operator(OperatorKind::Hdq, &s, &ket(2, &[true, false])).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn dq_flips_down_down() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 2).unwrap();
        let out = apply_operator(OperatorKind::Hdq, &s, &ket(2, &[false, false])).unwrap();
        let expected = ket(2, &[true, true]).into_iter().map(|v| v * -0.5).collect::<Vec<_>>();
        assert_eq!(out, expected);
    }

    #[test]
    fn iz_eigenvalue() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 3).unwrap();
        let psi = ket(3, &[true, true, false]);
        let out = apply_operator(OperatorKind::IzTotal, &s, &psi).unwrap();
        let expected: Vec<_> = psi.iter().map(|v| v * 0.5).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn dimension_mismatch() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 3).unwrap();
        let err = apply_operator(OperatorKind::Hzz, &s, &[c(1.0); 4]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 8, got: 4 }));
    }

    #[test]
    fn matches_kronecker_reference() {
        let kinds = [
            OperatorKind::IzTotal,
            OperatorKind::IxTotal,
            OperatorKind::IyTotal,
            OperatorKind::Hzz,
            OperatorKind::Hdq,
            OperatorKind::HdqPhase(0.7),
        ];
        for n in 2..=6 {
            let s = build_system(Geometry::RandomAllToAll { d0: 1.3, seed: n as u64 }, n).unwrap();
            for kind in kinds {
                let dense = reference::kron_operator(kind, &s);
                let mine = complex_matrix(kind, &s);
                assert!((dense - &mine).camax() < 1e-12, "{kind:?} N={n}");
                // and through apply_operator on basis vectors
                for col in [0, 1, s.dim() - 1, s.dim() / 3] {
                    let mut e = vec![c(0.0); s.dim()];
                    e[col] = c(1.0);
                    let out = apply_operator(kind, &s, &e).unwrap();
                    for (row, v) in out.iter().enumerate() {
                        assert!((v - mine[(row, col)]).norm() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn hermitian_inner_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 3 }, 7).unwrap();
        for kind in [OperatorKind::Hzz, OperatorKind::Hdq, OperatorKind::HdqPhase(1.1)] {
            let psi = random_state(s.dim(), &mut rng);
            let chi = random_state(s.dim(), &mut rng);
            let hpsi = apply_operator(kind, &s, &psi).unwrap();
            let hchi = apply_operator(kind, &s, &chi).unwrap();
            let lhs = dot(&chi, &hpsi);
            let rhs = dot(&psi, &hchi).conj();
            assert!((lhs - rhs).norm() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn phase_factor_on_double_flip() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 2).unwrap();
        let plain = complex_matrix(OperatorKind::Hdq, &s);
        assert!((complex_matrix(OperatorKind::HdqPhase(0.0), &s) - &plain).camax() < 1e-15);
        let quarter = complex_matrix(OperatorKind::HdqPhase(std::f64::consts::FRAC_PI_2), &s);
        // I+I+ element <up up|H|dn dn> picks up exp(-2 i phi) = -1
        assert!((quarter[(3, 0)] + plain[(3, 0)]).norm() < 1e-15);
        assert!((quarter[(0, 3)] + plain[(0, 3)]).norm() < 1e-15);
        assert!((plain[(3, 0)] - c(-0.5)).norm() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sector_rule(seed in 0u64..1000, col in 0usize..256) {
            let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed }, 8).unwrap();
            let m_col = BasisIndex(col).popcount() as i32;
            for_each_in_column(OperatorKind::Hdq, &s, col, |row, _| {
                let dm = BasisIndex(row).popcount() as i32 - m_col;
                assert!(dm == 2 || dm == -2);
            });
            for_each_in_column(OperatorKind::Hzz, &s, col, |row, _| {
                assert_eq!(BasisIndex(row).popcount() as i32, m_col);
            });
        }
    }
}
