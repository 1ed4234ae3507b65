use std::fs;

use proptest::prelude::*;
use spinscramble_cli::config::{Manifest, RunConfig};
use spinscramble_cli::io::*;
use spinscramble_cli::CliError;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3f64..1e3, Just(0.0), Just(1e-300)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectrum_csv_roundtrip(rows in prop::collection::vec((0usize..50, -40i32..40, finite()), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let rows: Vec<SpectrumRow> = rows.into_iter().map(|(n, k, value)| SpectrumRow { n, k, value }).collect();
        write_spectrum_csv(&path, &rows).unwrap();
        prop_assert_eq!(read_spectrum_csv(&path).unwrap(), rows);
    }

    #[test]
    fn sweep_csv_roundtrip(
        rows in prop::collection::vec((finite(), finite(), prop::option::of((finite(), finite(), finite(), finite())), 0usize..5000, finite(), "[a-z_: ,\"]{0,30}"), 0..20)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let rows: Vec<SweepRow> = rows
            .into_iter()
            .map(|(tau, theta, fit, n_star, snr, status)| SweepRow {
                tau,
                theta,
                a_fast: fit.map(|f| f.0),
                t_fast: fit.map(|f| f.1),
                a_slow: fit.map(|f| f.2),
                t_slow: fit.map(|f| f.3),
                n_star,
                snr,
                // an empty status would read back as an empty field, which is the same string
                status,
            })
            .collect();
        write_sweep_csv(&path, &rows).unwrap();
        prop_assert_eq!(read_sweep_csv(&path).unwrap(), rows);
    }

    #[test]
    fn numeric_tables_roundtrip(v in prop::collection::vec((0usize..100, finite(), finite(), finite()), 0..30)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        let phase: Vec<PhaseRow> = v.iter().map(|r| PhaseRow { n: r.0, phi: r.1, value: r.2 }).collect();
        write_phase_csv(&p.join("p.csv"), &phase).unwrap();
        prop_assert_eq!(read_phase_csv(&p.join("p.csv")).unwrap(), phase);

        let series: Vec<SeriesRow> = v.iter().map(|r| SeriesRow { n: r.0, t: r.1, loschmidt_echo: r.2, second_moment: r.3 }).collect();
        write_series_csv(&p.join("s.csv"), &series).unwrap();
        prop_assert_eq!(read_series_csv(&p.join("s.csv")).unwrap(), series);

        let dd: Vec<DdRow> = v.iter().map(|r| DdRow { cycle: r.0, t: r.1, signal: r.2, clean: r.3, cumulative_snr: r.1 }).collect();
        write_dd_csv(&p.join("d.csv"), &dd).unwrap();
        prop_assert_eq!(read_dd_csv(&p.join("d.csv")).unwrap(), dd);

        let dist: Vec<DistributionRow> = v.iter().map(|r| DistributionRow { n: r.0, s: r.1, f: r.2 }).collect();
        write_distribution_csv(&p.join("f.csv"), &dist).unwrap();
        prop_assert_eq!(read_distribution_csv(&p.join("f.csv")).unwrap(), dist);

        let growth: Vec<GrowthPoint> = v.iter().map(|r| GrowthPoint { n: r.0, t: r.1, front_97: r.2, width: r.3 }).collect();
        write_growth_csv(&p.join("g.csv"), &growth).unwrap();
        prop_assert_eq!(read_growth_csv(&p.join("g.csv")).unwrap(), growth);
    }

    #[test]
    fn config_toml_and_manifest_roundtrip(seed in any::<u64>(), n in 2usize..12, d0 in 1e-3f64..1e5, tau in 1e-7f64..1.0, n_max in 0usize..40, noise in prop::option::of(1e-6f64..0.1)) {
        let text = format!(
            "rng_seed = {seed}\n[system]\nn_spins = {n}\ngeometry = {{ type = \"random_all_to_all\", d0 = {d0:?}, seed = 3 }}\n\
             [mqc]\nn_max = {n_max}\ntau_dq = {tau:?}\n[inversion]\nalpha = \"auto\"\n{}",
            noise.map(|e| format!("noise_estimate = {e:?}\n")).unwrap_or_default()
        );
        let cfg = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), &cfg);

        let manifest = Manifest::new("simulate-mqc", cfg.clone(), &[]);
        let json = serde_json::to_string(&manifest).unwrap();
        let back: Manifest = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.config, cfg);
    }
}

#[test]
fn json_documents_roundtrip_and_check_kind() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    let report = AnalyticsReport { source: "x.csv".into(), entries: vec![] };
    write_json(&path, "analytics", &report).unwrap();
    assert_eq!(read_analytics(&path).unwrap(), report);
    assert!(matches!(read_json::<AnalyticsReport>(&path, "growth"), Err(CliError::Schema { .. })));

    let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
    fs::write(&path, text).unwrap();
    let err = read_analytics(&path).unwrap_err().to_string();
    assert!(err.contains("schema_version 99"), "{err}");
}

#[test]
fn csv_schema_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "n,k,weight\n0,0,1\n").unwrap();
    let err = read_spectrum_csv(&path).unwrap_err().to_string();
    assert!(err.contains("unknown column `weight`"), "{err}");

    fs::write(&path, "n,value\n0,1\n").unwrap();
    assert!(read_spectrum_csv(&path).unwrap_err().to_string().contains("missing column `k`"));

    fs::write(&path, "n,k,value\n0,0,1\n1,x,2\n").unwrap();
    assert!(read_spectrum_csv(&path).unwrap_err().to_string().contains("line 3"));

    // measured single spectra may leave out n
    fs::write(&path, "k,value\n0,0.5\n2,0.25\n").unwrap();
    let rows = read_spectrum_csv(&path).unwrap();
    assert_eq!(rows[1], SpectrumRow { n: 0, k: 2, value: 0.25 });
}

#[test]
fn config_errors_name_the_field() {
    let err = RunConfig::from_toml("[system]\nn_spins = 4\ngeometry = { type = \"all_to_all\", d0 = 1.0 }\n[mqc]\nn_max = 3\ntau_dq = 0.1\nmode = \"ideal\"\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let msg = err.to_string();
    assert!(msg.contains("line 7") && msg.contains("ideal"), "{msg}");

    let err = RunConfig::from_toml("rng_sed = 3\n").unwrap_err().to_string();
    assert!(err.contains("rng_sed"), "{err}");

    let cfg = RunConfig::from_toml("[system]\nn_spins = 4\ngeometry = { type = \"all_to_all\", d0 = 1.0 }\n[mqc]\nn_max = 3\ntau_dq = -0.1\n").unwrap();
    let err = cfg.protocol(4).unwrap_err().to_string();
    assert!(err.contains("mqc.tau_dq"), "{err}");
}

#[test]
fn output_lock_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let first = OutputLock::acquire(dir.path()).unwrap();
    let err = OutputLock::acquire(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    drop(first);
    OutputLock::acquire(dir.path()).unwrap();
}

