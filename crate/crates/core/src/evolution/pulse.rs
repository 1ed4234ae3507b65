//! Ideal collective pulses and pulse programs.

use std::collections::HashMap;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{EvolutionConfig, Generator, Propagator};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::operators::OperatorKind;
use crate::system::SpinSystem;

/// Rotation axes available to pulses (rotating frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    #[serde(rename = "-X")]
    MinusX,
    #[serde(rename = "-Y")]
    MinusY,
}

/// Collective rotation generators, including `Z` for phase shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Generator1 {
    X,
    Y,
    Z,
}

impl Axis {
    fn generator(self) -> (Generator1, f64) {
        match self {
            Axis::X => (Generator1::X, 1.0),
            Axis::Y => (Generator1::Y, 1.0),
            Axis::MinusX => (Generator1::X, -1.0),
            Axis::MinusY => (Generator1::Y, -1.0),
        }
    }

    /// Axis advanced by 90 degrees of RF phase (X -> Y -> -X -> -Y).
    pub fn quarter_turn(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::MinusX,
            Axis::MinusX => Axis::MinusY,
            Axis::MinusY => Axis::X,
        }
    }
}

/// `exp(-i angle I_g)` on one spin, basis `{|dn>, |up>}`.
fn gate(g: Generator1, angle: f64) -> [[Complex64; 2]; 2] {
    let (c, s) = ((0.5 * angle).cos(), (0.5 * angle).sin());
    let z = Complex64::new(0.0, 0.0);
    match g {
        Generator1::X => [[Complex64::new(c, 0.0), Complex64::new(0.0, -s)], [Complex64::new(0.0, -s), Complex64::new(c, 0.0)]],
        Generator1::Y => [[Complex64::new(c, 0.0), Complex64::new(s, 0.0)], [Complex64::new(-s, 0.0), Complex64::new(c, 0.0)]],
        Generator1::Z => [[Complex64::new(c, s), z], [z, Complex64::new(c, -s)]],
    }
}

/// Applies the single-spin gate to every spin along a strided index.
fn apply_gate_strided(data: &mut [Complex64], offset: usize, stride: usize, n_spins: usize, g: &[[Complex64; 2]; 2]) {
    let dim = 1usize << n_spins;
    for spin in 0..n_spins {
        let bit = 1 << spin;
        for b in 0..dim {
            if b & bit != 0 {
                continue;
            }
            let i0 = offset + b * stride;
            let i1 = offset + (b | bit) * stride;
            let (a0, a1) = (data[i0], data[i1]);
            data[i0] = g[0][0] * a0 + g[0][1] * a1;
            data[i1] = g[1][0] * a0 + g[1][1] * a1;
        }
    }
}

pub(crate) fn rotate_ket_generic(psi: &mut [Complex64], n_spins: usize, g: Generator1, angle: f64) {
    let gt = gate(g, angle);
    apply_gate_strided(psi, 0, 1, n_spins, &gt);
}

/// `G X` for a dense matrix (gate applied along the row index).
pub(crate) fn rotate_rows(x: &mut CMat, n_spins: usize, g: Generator1, angle: f64) {
    let gt = gate(g, angle);
    let dim = x.nrows();
    let ncols = x.ncols();
    let data = x.as_mut_slice();
    for c in 0..ncols {
        apply_gate_strided(data, c * dim, 1, n_spins, &gt);
    }
}

pub(crate) fn rotate_density_generic(rho: &mut CMat, n_spins: usize, g: Generator1, angle: f64) {
    let gt = gate(g, angle);
    let conj = [[gt[0][0].conj(), gt[0][1].conj()], [gt[1][0].conj(), gt[1][1].conj()]];
    let dim = rho.nrows();
    let data = rho.as_mut_slice();
    for c in 0..dim {
        apply_gate_strided(data, c * dim, 1, n_spins, &gt);
    }
    for r in 0..dim {
        apply_gate_strided(data, r, dim, n_spins, &conj);
    }
}

/// `exp(-i angle I_axis) |psi>` as a product of single-spin rotations.
pub fn rotate_ket(psi: &mut [Complex64], n_spins: usize, axis: Axis, angle: f64) {
    let (g, sign) = axis.generator();
    rotate_ket_generic(psi, n_spins, g, sign * angle);
}

/// `R rho R^dag` with `R = exp(-i angle I_axis)`.
pub fn collective_pulse(rho: &CMat, n_spins: usize, axis: Axis, angle: f64) -> CMat {
    let mut out = rho.clone();
    let (g, sign) = axis.generator();
    rotate_density_generic(&mut out, n_spins, g, sign * angle);
    out
}

/// `exp(-i phi Iz) rho exp(i phi Iz)`.
pub fn phase_shift(rho: &CMat, iz: &DVector<f64>, phi: f64) -> CMat {
    linalg::rotate_z(rho, iz, phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Pulse { axis: Axis, angle: f64 },
    Delay { t: f64, h: OperatorKind },
}

/// Ordered list of instantaneous pulses and free-evolution delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseProgram {
    pub name: String,
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProgramDoc {
    Bare(Vec<Step>),
    Named { name: String, steps: Vec<Step> },
}

impl PulseProgram {
    pub fn new(name: impl Into<String>, steps: Vec<Step>) -> Self {
        PulseProgram { name: name.into(), steps }
    }

    pub fn total_duration(&self) -> f64 {
        self.steps.iter().map(|s| if let Step::Delay { t, .. } = s { *t } else { 0.0 }).sum()
    }

    pub fn pulse_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Pulse { .. })).count()
    }

    /// Steps as a bare JSON array.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.steps)?)
    }

    /// Accepts a bare step array or a `{name, steps}` object.
    pub fn from_json(text: &str) -> Result<PulseProgram> {
        Ok(match serde_json::from_str::<ProgramDoc>(text)? {
            ProgramDoc::Bare(steps) => PulseProgram::new("unnamed", steps),
            ProgramDoc::Named { name, steps } => PulseProgram { name, steps },
        })
    }

    /// Same program with every pulse axis advanced by a quarter turn.
    pub fn phase_advanced(&self) -> PulseProgram {
        let steps = self
            .steps
            .iter()
            .map(|s| match s {
                Step::Pulse { axis, angle } => Step::Pulse { axis: axis.quarter_turn(), angle: *angle },
                d => d.clone(),
            })
            .collect();
        PulseProgram { name: format!("{}+90", self.name), steps }
    }
}

/// Timing of the eight-pulse double-quantum block.
///
/// `delta1` is the short window around the `z` toggling frame and `delta2`
/// the long window between paired pulses; the nominal pulse width is
/// `delta2 - 2 delta1`. With ideal pulses that width is split evenly between
/// the neighbouring delays, so the block lasts `12 (delta2 - delta1)` and the
/// toggling frame spends one third of it along `z` and two thirds along `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqTiming {
    pub delta1: f64,
    pub delta2: f64,
}

impl Default for DqTiming {
    fn default() -> Self {
        DqTiming { delta1: 3e-6, delta2: 8e-6 }
    }
}

impl DqTiming {
    /// Timing with the default `delta1 : delta2` ratio for a block of length `tau_dq`.
    pub fn for_cycle(tau_dq: f64) -> DqTiming {
        DqTiming { delta1: tau_dq / 20.0, delta2: tau_dq * 2.0 / 15.0 }
    }

    pub fn pulse_width(&self) -> f64 {
        self.delta2 - 2.0 * self.delta1
    }

    pub fn cycle_time(&self) -> f64 {
        12.0 * (self.delta2 - self.delta1)
    }
}

/// Where the eight-pulse cycle starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DqLayout {
    /// Starts with a pulse and ends with a `z`-frame window. The first-order
    /// average Hamiltonian does not vanish, so the leading error of the
    /// block is quadratic in the couplings.
    #[default]
    PulseFirst,
    /// Starts and ends with half `z`-frame windows. The toggling-frame
    /// Hamiltonian is time symmetric, odd Magnus orders cancel and the
    /// leading error is cubic in the couplings.
    Symmetric,
}

/// Eight `pi/2` pulses `X X -X -X X X -X -X` under `Hzz`, realizing `Hdq`
/// at zeroth order. Advancing every phase by 90 degrees gives `-Hdq`.
pub fn dq_block(timing: DqTiming) -> Result<PulseProgram> {
    dq_block_with_layout(timing, DqLayout::default())
}

pub fn dq_block_with_layout(timing: DqTiming, layout: DqLayout) -> Result<PulseProgram> {
    let tp = timing.pulse_width();
    if !(timing.delta1 > 0.0 && tp >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "DQ timing needs delta1 > 0 and delta2 >= 2 delta1, got {timing:?}"
        )));
    }
    let short = timing.delta1 + tp;
    let long = timing.delta2 + tp;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let delay = |t: f64| Step::Delay { t, h: OperatorKind::Hzz };
    let pulse = |axis: Axis| Step::Pulse { axis, angle: half_pi };
    let axes = [Axis::X, Axis::X, Axis::MinusX, Axis::MinusX, Axis::X, Axis::X, Axis::MinusX, Axis::MinusX];
    let mut steps = Vec::with_capacity(17);
    if layout == DqLayout::Symmetric {
        steps.push(delay(0.5 * short));
    }
    for (i, axis) in axes.iter().enumerate() {
        steps.push(pulse(*axis));
        let gap = match (i % 2, i == axes.len() - 1, layout) {
            (0, _, _) => long,
            (_, true, DqLayout::Symmetric) => 0.5 * short,
            _ => short,
        };
        steps.push(delay(gap));
    }
    Ok(PulseProgram::new("dq_block", steps))
}

/// Product of the step propagators, latest step leftmost.
pub fn compile_program(program: &PulseProgram, system: &SpinSystem, config: &EvolutionConfig) -> Result<Propagator> {
    if program.steps.is_empty() {
        return Err(Error::InvalidArgument("pulse program is empty".into()));
    }
    let n = system.n_spins();
    let mut u = linalg::identity(system.dim());
    let mut generators: HashMap<String, Generator> = HashMap::new();
    for step in &program.steps {
        match step {
            Step::Pulse { axis, angle } => {
                if !angle.is_finite() {
                    return Err(Error::InvalidArgument(format!("pulse angle {angle} is not finite")));
                }
                let (g, sign) = axis.generator();
                rotate_rows(&mut u, n, g, sign * angle);
            }
            Step::Delay { t, h } => {
                let key = format!("{h:?}");
                if !generators.contains_key(&key) {
                    generators.insert(key.clone(), Generator::new(*h, system, config)?);
                }
                let step_u = generators[&key].propagator(*t)?.dense();
                u = linalg::cmul(&step_u, &u);
            }
        }
    }
    Ok(Propagator::from_dense(u, None, program.total_duration()))
}
