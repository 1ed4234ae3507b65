//! Brute-force reference routines: operators assembled from Kronecker
//! products of single-spin matrices and matrix exponentials by scaled Taylor
//! series. They share no code with the matrix-free and eigendecomposition
//! paths and exist to cross-check them on small systems.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::operators::OperatorKind;
use crate::system::SpinSystem;

type CMat = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Single-spin matrices in the ordered basis `{|dn>, |up>}`.
fn single(which: char) -> CMat {
    match which {
        'z' => CMat::from_row_slice(2, 2, &[c(-0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.5, 0.0)]),
        'x' => CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)]),
        // Iy = (I+ - I-) / 2i
        'y' => CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.5), c(0.0, -0.5), c(0.0, 0.0)]),
        '+' => CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]),
        '-' => CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
        _ => unreachable!(),
    }
}

/// Embeds single-spin operators `ops[k] = (spin, matrix)` in the full space.
/// Spin 0 is the least significant bit, i.e. the rightmost Kronecker factor.
fn embed(n: usize, ops: &[(usize, char)]) -> CMat {
    let mut out = CMat::identity(1, 1);
    for spin in (0..n).rev() {
        let factor = ops
            .iter()
            .find(|(s, _)| *s == spin)
            .map(|(_, w)| single(*w))
            .unwrap_or_else(|| CMat::identity(2, 2));
        out = out.kronecker(&factor);
    }
    out
}

/// Dense operator built from Kronecker products.
pub fn kron_operator(kind: OperatorKind, system: &SpinSystem) -> CMat {
    let n = system.n_spins();
    let dim = 1 << n;
    let mut h = CMat::zeros(dim, dim);
    match kind {
        OperatorKind::IzTotal | OperatorKind::IxTotal | OperatorKind::IyTotal => {
            let w = match kind {
                OperatorKind::IzTotal => 'z',
                OperatorKind::IxTotal => 'x',
                _ => 'y',
            };
            for i in 0..n {
                h += embed(n, &[(i, w)]);
            }
        }
        OperatorKind::Hzz => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = system.coupling(i, j);
                    let zz = embed(n, &[(i, 'z'), (j, 'z')]);
                    let xx = embed(n, &[(i, 'x'), (j, 'x')]);
                    let yy = embed(n, &[(i, 'y'), (j, 'y')]);
                    h += (zz * c(3.0, 0.0) - xx - yy - embed(n, &[(i, 'z'), (j, 'z')])) * c(d, 0.0);
                }
            }
        }
        OperatorKind::Hdq | OperatorKind::HdqPhase(_) => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = system.coupling(i, j);
                    let pp = embed(n, &[(i, '+'), (j, '+')]);
                    let mm = embed(n, &[(i, '-'), (j, '-')]);
                    h += (pp + mm) * c(-0.5 * d, 0.0);
                }
            }
            if let OperatorKind::HdqPhase(phi) = kind {
                let iz = kron_operator(OperatorKind::IzTotal, system);
                let r = expm(&(iz.clone() * c(0.0, -phi)));
                let r_inv = expm(&(iz * c(0.0, phi)));
                h = &r * h * r_inv;
            }
        }
    }
    h
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &CMat) -> CMat {
    let norm = a.iter().map(|v| v.norm()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.25 {
        squarings += 1;
    }
    let scaled = a / c(2f64.powi(squarings), 0.0);
    let dim = a.nrows();
    let mut result = CMat::identity(dim, dim);
    let mut term = CMat::identity(dim, dim);
    for k in 1..=24 {
        term = &term * &scaled / c(k as f64, 0.0);
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `exp(-i H t)` for a Hermitian `H`.
pub fn propagator(h: &CMat, t: f64) -> CMat {
    expm(&(h * c(0.0, -t)))
}

/// Signal `Tr{Iz rho_phi(2t)} / Tr{Iz^2}` of the phase-shifted echo under
/// ideal `Hdq` dynamics, by explicit dense propagators.
pub fn mqc_signal(system: &SpinSystem, t: f64, phi: f64) -> f64 {
    let iz = kron_operator(OperatorKind::IzTotal, system);
    let hdq = kron_operator(OperatorKind::Hdq, system);
    let forward = propagator(&hdq, t);
    let backward = propagator(&hdq, -t);
    let rot = propagator(&iz, phi);
    let rot_inv = propagator(&iz, -phi);
    let u = &rot * backward * rot_inv * forward;
    let rho = &u * &iz * u.adjoint();
    let norm = (&iz * &iz).trace().re;
    (&iz * rho).trace().re / norm
}

/// Normalized coherence spectrum of `rho(t) = U Iz U^dag` under ideal `Hdq`,
/// indexed by `k + N`.
pub fn mqc_spectrum(system: &SpinSystem, t: f64) -> Vec<f64> {
    let n = system.n_spins();
    let iz = kron_operator(OperatorKind::IzTotal, system);
    let u = propagator(&kron_operator(OperatorKind::Hdq, system), t);
    let rho = &u * &iz * u.adjoint();
    let norm = (&iz * &iz).trace().re;
    let mut out = vec![0.0; 2 * n + 1];
    for r in 0..rho.nrows() {
        for col in 0..rho.ncols() {
            let k = r.count_ones() as i64 - col.count_ones() as i64;
            out[(k + n as i64) as usize] += rho[(r, col)].norm_sqr() / norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{build_system, Geometry};

    #[test]
    fn expm_of_pauli_rotation() {
        // exp(-i theta sigma_x / 2) = cos(theta/2) - i sin(theta/2) sigma_x
        let ix = single('x');
        let theta: f64 = 1.234;
        let u = expm(&(ix * c(0.0, -theta)));
        assert!((u[(0, 0)] - c((theta / 2.0).cos(), 0.0)).norm() < 1e-14);
        assert!((u[(0, 1)] - c(0.0, -(theta / 2.0).sin())).norm() < 1e-14);
    }

    #[test]
    fn two_spin_signal_formula() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 2).unwrap();
        for &(t, phi) in &[(0.3, 0.4), (1.1, 2.0), (2.5, 5.9)] {
            let expected = f64::cos(t).powi(2) + f64::sin(t).powi(2) * f64::cos(2.0 * phi);
            assert!((mqc_signal(&s, t, phi) - expected).abs() < 1e-12);
        }
    }
}
