//! Lanczos approximation of `exp(-i H t) psi` for Hermitian `H` applied
//! matrix-free.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operators::{apply_into, OperatorKind};
use crate::system::SpinSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovSettings {
    pub tolerance: f64,
    pub max_dim: usize,
    /// Maximum number of halvings of the time step before giving up.
    pub max_splits: u32,
}

impl Default for KrylovSettings {
    fn default() -> Self {
        KrylovSettings { tolerance: 1e-10, max_dim: 30, max_splits: 40 }
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// One Lanczos step of length `dt`. Returns the propagated vector and the
/// a-posteriori error estimate relative to `|psi|`.
fn lanczos_step(
    kind: OperatorKind,
    system: &SpinSystem,
    psi: &[Complex64],
    dt: f64,
    settings: &KrylovSettings,
) -> (Vec<Complex64>, f64) {
    let dim = psi.len();
    let beta0 = norm(psi);
    if beta0 == 0.0 {
        return (psi.to_vec(), 0.0);
    }
    let mut basis: Vec<Vec<Complex64>> = vec![psi.iter().map(|v| v / beta0).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![Complex64::new(0.0, 0.0); dim];
    let mut breakdown = false;
    let max_dim = settings.max_dim.min(dim);
    for j in 0..max_dim {
        apply_into(kind, system, &basis[j], &mut w);
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        // full reorthogonalization (twice is enough)
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(q, &w);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let b = norm(&w);
        if b < 1e-13 * beta0.max(1.0) || j + 1 == max_dim {
            beta.push(b);
            breakdown = b < 1e-13 * beta0.max(1.0);
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|v| v / b).collect());
    }
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let eig = t.symmetric_eigen();
    // exp(-i T dt) e_1
    let coeffs: DVector<Complex64> = DVector::from_fn(m, |r, _| {
        (0..m)
            .map(|k| {
                eig.eigenvectors[(r, k)]
                    * eig.eigenvectors[(0, k)]
                    * Complex64::from_polar(1.0, -eig.eigenvalues[k] * dt)
            })
            .sum()
    });
    let estimate = if breakdown { 0.0 } else { beta[m - 1] * coeffs[m - 1].norm() };
    let mut out = vec![Complex64::new(0.0, 0.0); dim];
    for (q, cf) in basis.iter().zip(coeffs.iter()) {
        let s = cf * beta0;
        out.iter_mut().zip(q).for_each(|(o, v)| *o += s * v);
    }
    (out, estimate)
}

/// `exp(-i H t) psi` with adaptive step splitting.
pub fn expm_krylov(
    kind: OperatorKind,
    system: &SpinSystem,
    psi: &[Complex64],
    t: f64,
    settings: &KrylovSettings,
) -> Result<Vec<Complex64>> {
    if t == 0.0 {
        return Ok(psi.to_vec());
    }
    let mut state = psi.to_vec();
    let mut remaining = t;
    let mut dt = t;
    let mut splits = 0;
    let reference = norm(psi).max(f64::MIN_POSITIVE);
    while remaining.abs() > 0.0 {
        if dt.abs() > remaining.abs() {
            dt = remaining;
        }
        let (next, err) = lanczos_step(kind, system, &state, dt, settings);
        if err <= settings.tolerance * reference {
            state = next;
            remaining -= dt;
            if remaining.abs() < 1e-15 * t.abs() {
                break;
            }
        } else {
            splits += 1;
            if splits > settings.max_splits {
                return Err(Error::NonConvergence { residual: err / reference, tolerance: settings.tolerance });
            }
            dt *= 0.5;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::system::{build_system, Geometry};

    #[test]
    fn agrees_with_taylor_reference() {
        let s = build_system(Geometry::RandomAllToAll { d0: 1.0, seed: 5 }, 5).unwrap();
        let psi: Vec<Complex64> =
            (0..32).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        for kind in [OperatorKind::Hzz, OperatorKind::Hdq, OperatorKind::HdqPhase(0.4)] {
            let u = reference::propagator(&reference::kron_operator(kind, &s), 2.3);
            let expected = &u * DVector::from_vec(psi.clone());
            let got = expm_krylov(kind, &s, &psi, 2.3, &KrylovSettings::default()).unwrap();
            let diff: f64 = got.iter().zip(expected.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-9, "{kind:?}: {diff}");
        }
    }

    #[test]
    fn reports_non_convergence() {
        let s = build_system(Geometry::AllToAll { d0: 1.0 }, 6).unwrap();
        let psi: Vec<Complex64> = (0..64).map(|i| Complex64::new(1.0 / (1.0 + i as f64), 0.0)).collect();
        let settings = KrylovSettings { tolerance: 1e-10, max_dim: 2, max_splits: 2 };
        let err = expm_krylov(OperatorKind::Hzz, &s, &psi, 50.0, &settings).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }
}
