//! Dense complex products routed through real GEMM.
//!
//! nalgebra multiplies complex matrices with a generic kernel that is an
//! order of magnitude slower than its real `matrixmultiply` path, so complex
//! products are assembled from real and imaginary parts.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type RMat = DMatrix<f64>;

pub fn split(m: &CMat) -> (RMat, RMat) {
    (m.map(|v| v.re), m.map(|v| v.im))
}

pub fn join(re: &RMat, im: &RMat) -> CMat {
    re.zip_map(im, Complex64::new)
}

/// `a * b` for complex matrices.
pub fn cmul(a: &CMat, b: &CMat) -> CMat {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    join(&re, &im)
}

/// `a * b^dag`.
pub fn cmul_adj(a: &CMat, b: &CMat) -> CMat {
    cmul(a, &b.adjoint())
}

/// `left * x * right` with real outer factors.
pub fn real_sandwich(left: &RMat, x: &CMat, right: &RMat) -> CMat {
    let (xr, xi) = split(x);
    let re = left * (&xr * right);
    let im = left * (&xi * right);
    join(&re, &im)
}

/// `e^{-i phi Iz} X e^{i phi Iz}`: element `(r, c)` gains `exp(-i phi (m_r - m_c))`.
pub fn rotate_z(x: &CMat, iz: &DVector<f64>, phi: f64) -> CMat {
    if phi == 0.0 {
        return x.clone();
    }
    let phases: Vec<Complex64> = iz.iter().map(|m| Complex64::from_polar(1.0, -phi * m)).collect();
    CMat::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] * phases[r] * phases[c].conj())
}

/// `Tr{diag(d) X}`.
pub fn trace_with_diagonal(d: &DVector<f64>, x: &CMat) -> Complex64 {
    d.iter().enumerate().map(|(i, v)| x[(i, i)] * *v).sum()
}

/// Largest elementwise deviation of `U U^dag` from the identity.
pub fn unitarity_error(u: &CMat) -> f64 {
    let prod = cmul_adj(u, u);
    let mut worst: f64 = 0.0;
    for r in 0..prod.nrows() {
        for c in 0..prod.ncols() {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((prod[(r, c)] - target).norm());
        }
    }
    worst
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

/// Dense matrix with `iz` on the diagonal.
pub fn diagonal(iz: &DVector<f64>) -> CMat {
    CMat::from_diagonal(&iz.map(|v| Complex64::new(v, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_product_matches_generic_kernel() {
        let a = CMat::from_fn(7, 5, |r, c| Complex64::new((r * 3 + c) as f64 * 0.1, (r as f64 - c as f64) * 0.2));
        let b = CMat::from_fn(5, 6, |r, c| Complex64::new((r + 2 * c) as f64 * -0.3, (r * c) as f64 * 0.05));
        assert!((cmul(&a, &b) - &a * &b).camax() < 1e-12);
        let v = RMat::from_fn(7, 7, |r, c| ((r * 5 + c * 3) % 7) as f64);
        let x = CMat::from_fn(7, 7, |r, c| Complex64::new(r as f64, c as f64));
        let expected = v.map(|t| Complex64::new(t, 0.0)) * &x * v.transpose().map(|t| Complex64::new(t, 0.0));
        assert!((real_sandwich(&v, &x, &v.transpose()) - expected).camax() < 1e-10);
    }
}
