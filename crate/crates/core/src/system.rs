//! Spin systems: geometry descriptors and the dipolar coupling matrix.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of spins.
pub const DEFAULT_MAX_SPINS: usize = 14;
/// Default memory budget for one dense density matrix (8 GiB).
pub const DEFAULT_MEMORY_BUDGET: u64 = 8 << 30;

/// Size limits applied when building a system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_spins: usize,
    /// Bytes available for a single dense `2^N x 2^N` complex matrix.
    pub memory_budget: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_spins: DEFAULT_MAX_SPINS, memory_budget: DEFAULT_MEMORY_BUDGET }
    }
}

impl Limits {
    pub fn check(&self, n_spins: usize) -> Result<()> {
        if n_spins > self.max_spins {
            return Err(Error::CapExceeded {
                n_spins,
                reason: format!("max_spins = {}", self.max_spins),
            });
        }
        let bytes = dense_bytes(n_spins);
        if bytes > self.memory_budget {
            return Err(Error::CapExceeded {
                n_spins,
                reason: format!(
                    "dense density matrix needs {bytes} bytes, budget is {}",
                    self.memory_budget
                ),
            });
        }
        Ok(())
    }
}

/// Bytes of one dense complex `2^N x 2^N` matrix (saturating).
pub fn dense_bytes(n_spins: usize) -> u64 {
    if n_spins >= 30 {
        return u64::MAX;
    }
    16u64.saturating_mul(1u64 << (2 * n_spins))
}

/// How the couplings are laid out. All power-law couplings are in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    /// Every pair coupled with the same strength.
    AllToAll { d0: f64 },
    /// Open chain with `d_ij = d0 / |i - j|^exponent`.
    Chain { d0: f64, exponent: f64 },
    /// Simple cubic lattice with unit spacing; pairs beyond `cutoff` are
    /// uncoupled. Sites are filled x-fastest. Without `extent` the smallest
    /// cube holding `n_spins` sites is used.
    Lattice3D {
        d0: f64,
        cutoff: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        extent: Option<[usize; 3]>,
    },
    /// All pairs coupled with `d0 * u`, `u` uniform in [-1, 1), drawn from `seed`.
    RandomAllToAll { d0: f64, seed: u64 },
    /// User supplied symmetric matrix.
    Explicit { matrix: Vec<Vec<f64>> },
}

/// `N` spin-1/2 particles with a symmetric coupling matrix (zero diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    n_spins: usize,
    geometry: Geometry,
    couplings: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpinSystemDoc {
    n_spins: usize,
    geometry: Geometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    couplings: Option<Vec<Vec<f64>>>,
}

impl Serialize for SpinSystem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpinSystemDoc {
            n_spins: self.n_spins,
            geometry: self.geometry.clone(),
            couplings: Some(matrix_rows(&self.couplings)),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpinSystem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = SpinSystemDoc::deserialize(d)?;
        let system = build_system(doc.geometry, doc.n_spins).map_err(D::Error::custom)?;
        if let Some(rows) = doc.couplings {
            let given = rows_to_matrix(&rows, doc.n_spins).map_err(D::Error::custom)?;
            if (&given - system.couplings()).amax() > 1e-9 * system.max_coupling().max(1.0) {
                return Err(D::Error::custom("couplings do not match the geometry"));
            }
        }
        Ok(system)
    }
}

/// Builds a system with the default [`Limits`].
pub fn build_system(geometry: Geometry, n_spins: usize) -> Result<SpinSystem> {
    build_system_with(geometry, n_spins, &Limits::default())
}

pub fn build_system_with(geometry: Geometry, n_spins: usize, limits: &Limits) -> Result<SpinSystem> {
    if n_spins < 2 {
        return Err(Error::InvalidGeometry(format!("need at least 2 spins, got {n_spins}")));
    }
    limits.check(n_spins)?;
    let couplings = match &geometry {
        Geometry::AllToAll { d0 } => {
            positive("d0", *d0)?;
            DMatrix::from_fn(n_spins, n_spins, |i, j| if i == j { 0.0 } else { *d0 })
        }
        Geometry::Chain { d0, exponent } => {
            positive("d0", *d0)?;
            positive("exponent", *exponent)?;
            DMatrix::from_fn(n_spins, n_spins, |i, j| {
                if i == j {
                    0.0
                } else {
                    d0 / (i.abs_diff(j) as f64).powf(*exponent)
                }
            })
        }
        Geometry::Lattice3D { d0, cutoff, extent } => {
            positive("d0", *d0)?;
            positive("cutoff", *cutoff)?;
            let extent = match extent {
                Some(e) => {
                    if e.iter().product::<usize>() < n_spins || e.contains(&0) {
                        return Err(Error::InvalidGeometry(format!(
                            "lattice extent {e:?} holds fewer than {n_spins} sites"
                        )));
                    }
                    *e
                }
                None => {
                    let mut side = 1;
                    while side * side * side < n_spins {
                        side += 1;
                    }
                    [side; 3]
                }
            };
            let site = |i: usize| {
                let x = i % extent[0];
                let y = (i / extent[0]) % extent[1];
                let z = i / (extent[0] * extent[1]);
                [x as f64, y as f64, z as f64]
            };
            DMatrix::from_fn(n_spins, n_spins, |i, j| {
                if i == j {
                    return 0.0;
                }
                let (a, b) = (site(i), site(j));
                let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                if r <= *cutoff {
                    d0 / r.powi(3)
                } else {
                    0.0
                }
            })
        }
        Geometry::RandomAllToAll { d0, seed } => {
            positive("d0", *d0)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut m = DMatrix::zeros(n_spins, n_spins);
            for i in 0..n_spins {
                for j in (i + 1)..n_spins {
                    let v = d0 * rng.random_range(-1.0..1.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            m
        }
        Geometry::Explicit { matrix } => {
            let m = rows_to_matrix(matrix, n_spins)?;
            for i in 0..n_spins {
                if m[(i, i)] != 0.0 {
                    return Err(Error::InvalidGeometry(format!("diagonal entry {i} is not zero")));
                }
                for j in 0..i {
                    if m[(i, j)] != m[(j, i)] {
                        return Err(Error::InvalidGeometry(format!("matrix not symmetric at ({i}, {j})")));
                    }
                    if !m[(i, j)].is_finite() {
                        return Err(Error::InvalidGeometry(format!("non-finite coupling at ({i}, {j})")));
                    }
                }
            }
            m
        }
    };
    Ok(SpinSystem { n_spins, geometry, couplings })
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGeometry(format!("{name} must be positive, got {v}")))
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidGeometry(format!("coupling matrix must be {n} x {n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl SpinSystem {
    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    /// Hilbert space dimension `2^N`.
    pub fn dim(&self) -> usize {
        1 << self.n_spins
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn couplings(&self) -> &DMatrix<f64> {
        &self.couplings
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[(i, j)]
    }

    pub fn max_coupling(&self) -> f64 {
        self.couplings.amax()
    }

    /// Non-zero pairs `(i, j, d_ij)` with `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n_spins {
            for j in (i + 1)..self.n_spins {
                let d = self.couplings[(i, j)];
                if d != 0.0 {
                    out.push((i, j, d));
                }
            }
        }
        out
    }

    /// Copy with every coupling multiplied by `factor`. The result carries
    /// an explicit geometry.
    pub fn scaled(&self, factor: f64) -> SpinSystem {
        let couplings = &self.couplings * factor;
        SpinSystem {
            n_spins: self.n_spins,
            geometry: Geometry::Explicit { matrix: matrix_rows(&couplings) },
            couplings,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<SpinSystem> {
        Ok(serde_json::from_str(s)?)
    }
}
