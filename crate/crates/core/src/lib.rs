//! Exact simulation of multiple-quantum-coherence experiments on dipolar
//! spin-1/2 systems, Floquet decoupling detection, and recovery of
//! cluster-size distributions from coherence spectra.

pub mod basis;
pub mod ddprobe;
pub mod error;
pub mod evolution;
pub mod inversion;
pub mod linalg;
pub mod mqc;
pub mod operators;
pub mod optimize;
pub mod reference;
pub mod system;

pub use error::{Error, Result};
