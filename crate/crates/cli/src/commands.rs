//! The five subcommands. Each returns the files it wrote, relative to the
//! output directory, and fills resolved defaults back into the config so the
//! manifest records exactly what ran.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use spinscramble::ddprobe::{run_dd, sweep, SweepCell};
use spinscramble::inversion::{analyze_with, fit_power_law, invert_with, KernelProblem};
use spinscramble::mqc::{otoc_second_moment, spectrum_from_phases, uniform_phases, CoherenceSpectrum, MqcEngine};

use crate::config::{Format, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{self, *};

/// Files written and the number of per-item failures that were skipped.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub failures: Vec<String>,
}

impl Outcome {
    fn wrote(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }
}

/// Weights below this are treated as empty when trimming spectrum files.
const SUPPORT_FLOOR: f64 = 1e-14;

fn support(spectra: &[CoherenceSpectrum]) -> i32 {
    spectra
        .iter()
        .flat_map(|s| s.orders.iter().zip(&s.weights))
        .filter(|(_, w)| **w > SUPPORT_FLOOR)
        .map(|(k, _)| k.abs())
        .max()
        .unwrap_or(0)
}

fn spectrum_rows(spectra: &[CoherenceSpectrum], k_max: i32) -> Vec<SpectrumRow> {
    spectra
        .iter()
        .flat_map(|s| (-k_max..=k_max).map(move |k| SpectrumRow { n: s.n_blocks, k, value: s.weight(k) }))
        .collect()
}

pub fn simulate_mqc(cfg: &mut RunConfig, out: &Path) -> Result<Outcome> {
    let system = cfg.build_system()?;
    let (settings, n_phases) = cfg.protocol(system.n_spins())?;
    if let Some(m) = cfg.mqc.as_mut() {
        m.n_phases = Some(n_phases);
    }
    let n_max = cfg.mqc_section()?.n_max;
    let engine = MqcEngine::new(&system, &settings)?;
    let phases = uniform_phases(n_phases);

    let mut phase_signals = Vec::new();
    let mut density = Vec::with_capacity(n_max + 1);
    let mut cycled = Vec::with_capacity(n_max + 1);
    let mut series = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let (signal, d) = engine.observe(n, &phases)?;
        phase_signals.extend(signal.phi.iter().zip(&signal.values).map(|(phi, v)| PhaseRow { n, phi: *phi, value: v.re }));
        // phases start at 0, so the first value is the Loschmidt echo
        let echo = signal.values[0].re;
        series.push(SeriesRow { n, t: n as f64 * settings.tau_dq, loschmidt_echo: echo, second_moment: otoc_second_moment(&d) });
        cycled.push(spectrum_from_phases(&signal)?);
        density.push(d);
    }
    let k_max = support(&density);
    let output = MqcOutput {
        phase_signals,
        spectrum_density: spectrum_rows(&density, k_max),
        spectrum_phases: spectrum_rows(&cycled, k_max),
        series,
    };

    let mut outcome = Outcome::default();
    match cfg.format {
        Format::Csv => {
            write_phase_csv(&out.join("phase_signals.csv"), &output.phase_signals)?;
            write_spectrum_csv(&out.join("spectrum_density.csv"), &output.spectrum_density)?;
            write_spectrum_csv(&out.join("spectrum_phases.csv"), &output.spectrum_phases)?;
            write_series_csv(&out.join("series.csv"), &output.series)?;
            for f in ["phase_signals.csv", "spectrum_density.csv", "spectrum_phases.csv", "series.csv"] {
                outcome.wrote(f);
            }
        }
        Format::Json => {
            write_json(&out.join("mqc.json"), "mqc", &output)?;
            outcome.wrote("mqc.json");
        }
    }
    Ok(outcome)
}

/// One cell of the sweep machinery, so a 1x1 sweep reproduces it exactly.
pub fn simulate_dd(cfg: &mut RunConfig, out: &Path) -> Result<Outcome> {
    let system = cfg.build_system()?;
    let sweep_cfg = cfg.sweep_config(&system, true)?;
    let cell_cfg = sweep_cfg.cell_config(0);
    let series = run_dd(&system, &cell_cfg)?;
    let cells = sweep(&system, &sweep_cfg)?;
    let cell = cells.into_iter().next().expect("one cell");
    let snr = series.cumulative_snr();
    let rows: Vec<DdRow> = series
        .times
        .iter()
        .enumerate()
        .map(|(j, t)| DdRow { cycle: j + 1, t: *t, signal: series.signal[j], clean: series.clean[j], cumulative_snr: snr[j] })
        .collect();

    let mut outcome = Outcome::default();
    if !cell.is_ok() {
        eprintln!("warning: {}", cell.status);
    }
    match cfg.format {
        Format::Csv => {
            write_dd_csv(&out.join("dd_series.csv"), &rows)?;
            write_sweep_csv(&out.join("dd_fit.csv"), &sweep_rows(std::slice::from_ref(&cell)))?;
            outcome.wrote("dd_series.csv");
            outcome.wrote("dd_fit.csv");
        }
        Format::Json => {
            write_json(&out.join("dd.json"), "dd", &DdOutput { series: rows, cell })?;
            outcome.wrote("dd.json");
        }
    }
    Ok(outcome)
}

pub fn run_sweep(cfg: &mut RunConfig, out: &Path) -> Result<Outcome> {
    let system = cfg.build_system()?;
    let sweep_cfg = cfg.sweep_config(&system, false)?;
    let section = cfg.sweep.get_or_insert_with(Default::default);
    section.tau_grid = Some(sweep_cfg.tau_grid.clone());
    section.theta_grid = Some(sweep_cfg.theta_grid.clone());
    let cells: Vec<SweepCell> = sweep(&system, &sweep_cfg)?;

    let mut outcome = Outcome::default();
    for c in cells.iter().filter(|c| !c.is_ok()) {
        // partial failures stay in the table; they are not run errors
        eprintln!("warning: cell tau = {}, theta = {}: {}", c.tau, c.theta, c.status);
    }
    match cfg.format {
        Format::Csv => {
            write_sweep_csv(&out.join("sweep.csv"), &sweep_rows(&cells))?;
            outcome.wrote("sweep.csv");
        }
        Format::Json => {
            write_json(&out.join("sweep.json"), "sweep", &SweepOutput { cells })?;
            outcome.wrote("sweep.json");
        }
    }
    Ok(outcome)
}

/// Even orders `k >= 0`; a `+-k` pair is averaged.
pub fn half_spectrum(points: &[(i32, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut sums: std::collections::BTreeMap<i32, (f64, usize)> = Default::default();
    for &(k, v) in points {
        if k % 2 == 0 {
            let e = sums.entry(k.abs()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, c))| (k as f64, s / c as f64)).unzip()
}

fn invert_one(n: usize, points: &[(i32, f64)], grid: &[f64], cfg: &crate::config::InversionSection) -> (InversionEntry, Vec<f64>) {
    let (orders, mut data) = half_spectrum(points);
    let data_second_moment = 2.0 * orders.iter().zip(&data).map(|(k, v)| k * k * v).sum::<f64>();
    let mut entry = InversionEntry {
        n,
        alpha: None,
        selection: None,
        residual_norm: None,
        data_second_moment,
        mixture_second_moment: None,
        analytics: None,
        warnings: Vec::new(),
        error: None,
    };
    let clipped = data.iter().filter(|v| **v < 0.0).count();
    if clipped > 0 {
        entry.warnings.push(format!("{clipped} negative weights clipped to zero"));
        data.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let result = KernelProblem::new(orders, data, grid.to_vec(), cfg.noise_estimate)
        .and_then(|p| invert_with(&p, cfg.alpha, &cfg.options))
        .and_then(|mut d| {
            d.n_blocks = Some(n);
            let a = analyze_with(&d.size_grid, &d.f, &cfg.analysis);
            Ok((d, a))
        });
    match result {
        Ok((d, a)) => {
            entry.alpha = Some(d.alpha);
            entry.selection = Some(d.selection);
            entry.residual_norm = Some(d.residual_norm);
            entry.mixture_second_moment = Some(d.mixture_second_moment());
            entry.warnings.extend(d.warnings.iter().cloned());
            match a {
                Ok(a) => entry.analytics = Some(a),
                Err(e) => entry.warnings.push(format!("analysis: {e}")),
            }
            (entry, d.f)
        }
        Err(e) => {
            entry.error = Some(e.to_string());
            (entry, Vec::new())
        }
    }
}

pub fn invert(cfg: &mut RunConfig, out: &Path, inputs: &[PathBuf], continue_on_error: bool) -> Result<Outcome> {
    if inputs.is_empty() {
        return Err(CliError::Usage("invert needs at least one spectrum file".into()));
    }
    let section = cfg.inversion_section()?;
    let continue_on_error = continue_on_error || section.continue_on_error;
    let grid = RunConfig::size_grid(&section)?;
    cfg.inversion = Some(section.clone());
    let stems = output_stems(inputs)?;

    let mut outcome = Outcome::default();
    for (path, stem) in inputs.iter().zip(&stems) {
        let rows = read_spectrum_csv(path)?;
        if rows.is_empty() {
            return Err(CliError::schema(path, "no spectrum rows"));
        }
        let groups: Vec<(usize, Vec<(i32, f64)>)> = io::group_by_n(&rows).into_iter().collect();
        let results: Vec<(InversionEntry, Vec<f64>)> =
            groups.par_iter().map(|(n, points)| invert_one(*n, points, &grid, &section)).collect();

        let mut dist = Vec::new();
        let mut entries = Vec::with_capacity(results.len());
        for (entry, f) in results {
            if let Some(e) = &entry.error {
                let msg = format!("{}: n = {}: {e}", path.display(), entry.n);
                if !continue_on_error {
                    return Err(CliError::Runtime(msg));
                }
                outcome.failures.push(msg);
            }
            dist.extend(grid.iter().zip(&f).map(|(s, f)| DistributionRow { n: entry.n, s: *s, f: *f }));
            entries.push(entry);
        }
        let report = AnalyticsReport { source: path.display().to_string(), entries };
        match cfg.format {
            Format::Csv => {
                let d = format!("{stem}_distribution.csv");
                let a = format!("{stem}_analytics.json");
                write_distribution_csv(&out.join(&d), &dist)?;
                write_json(&out.join(&a), "analytics", &report)?;
                outcome.wrote(&d);
                outcome.wrote(&a);
            }
            Format::Json => {
                let d = format!("{stem}_distribution.json");
                write_json(&out.join(&d), "distribution", &DistributionOutput { rows: dist, report })?;
                outcome.wrote(&d);
            }
        }
    }
    Ok(outcome)
}

fn output_stems(inputs: &[PathBuf]) -> Result<Vec<String>> {
    let mut seen = BTreeSet::new();
    inputs
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
            if !seen.insert(stem.clone()) {
                return Err(CliError::Usage(format!("two inputs share the file name `{stem}`; outputs would collide")));
            }
            Ok(stem)
        })
        .collect()
}

pub fn fit_growth(cfg: &mut RunConfig, out: &Path, inputs: &[PathBuf]) -> Result<Outcome> {
    if inputs.is_empty() {
        return Err(CliError::Usage("fit-growth needs at least one analytics file".into()));
    }
    let g = cfg.growth_section()?;
    cfg.growth = Some(g.clone());
    let mut points = Vec::new();
    for path in inputs {
        let report = read_analytics(path)?;
        for e in &report.entries {
            if let (Some(a), true) = (&e.analytics, e.n > 0) {
                if !a.peaks.is_empty() {
                    points.push(GrowthPoint { n: e.n, t: e.n as f64 * g.time_per_block, front_97: a.front_97, width: a.dominant().fwhm });
                }
            }
        }
    }
    points.sort_by(|a, b| a.t.total_cmp(&b.t));
    let t: Vec<f64> = points.iter().map(|p| p.t).collect();
    let front: Vec<f64> = points.iter().map(|p| p.front_97).collect();
    let width: Vec<f64> = points.iter().map(|p| p.width).collect();
    let front_fit = fit_power_law(&t, &front, Some(g.front_exponent))?;
    let (width_fit, width_error) = match fit_power_law(&t, &width, Some(g.width_exponent)) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = GrowthReport { points, front: front_fit, width: width_fit, width_error };

    let mut outcome = Outcome::default();
    write_json(&out.join("growth.json"), "growth", &report)?;
    outcome.wrote("growth.json");
    if cfg.format == Format::Csv {
        write_growth_csv(&out.join("growth_points.csv"), &report.points)?;
        outcome.wrote("growth_points.csv");
    }
    Ok(outcome)
}
