use std::path::Path;
use std::process::{Command, Output};

use polqed::fit::TransmissionDataset;
use polqed::SystemParams;

fn polqed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polqed"))
        .args(args)
        .env_remove("POLQED_THREADS")
        .output()
        .expect("binary runs")
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

#[test]
fn params_report_prints_cooperativity() {
    let out = polqed(&["params-report", "--preset", "qd_a"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("cooperativity = 0.42"), "{text}");
    let out = polqed(&["params-report", "--preset", "qd_b"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("cooperativity = 1.55"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let out = polqed(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(polqed(&["g2-map", "--preset", "qd_z"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[params]\nkappa_per_ns = 69.0\n").unwrap();
    let out = polqed(&["g2-map", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("g_x_per_ns"));
}

#[test]
fn missing_files_exit_4() {
    let out = polqed(&["fit", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(4));
    let out = polqed(&["g2-map", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn g2_map_is_deterministic_and_reproducible_from_its_header() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = polqed(&[
            "g2-map",
            "--preset",
            "qd_a",
            "--n-fock",
            "3",
            "--out",
            a.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(std::fs::read(a.join("g2_map.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let fa = runs.pop().unwrap();

    let lines = data_lines(&a.join("g2_map.csv"));
    assert_eq!(lines[0], "qd_offset_ghz,theta_out_deg,g2_zero");
    assert_eq!(lines.len(), 1 + 121 * 91);

    // The header comment is a complete config.
    let text = String::from_utf8(fa).unwrap();
    let header: String = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .skip(1)
        .map(|l| format!("{}\n", l.strip_prefix(' ').unwrap_or(l)))
        .collect();
    let cfg = dir.path().join("rerun.toml");
    std::fs::write(&cfg, header).unwrap();
    let c = dir.path().join("c");
    let out = polqed(&[
        "g2-map",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines, data_lines(&c.join("g2_map.csv")));
}

#[test]
fn g2_trace_has_one_column_per_jitter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("trace.toml");
    std::fs::write(
        &cfg,
        "preset = \"qd_b\"\nscenario = \"g2_trace\"\nn_fock = 3\ntheta_out_deg = -78.0\njitter_ps = [50, 500]\n\
         [params]\nf_laser_ghz = 2.38\n[propagation]\ntau_max = 2.0\nn_samples = 401\nrel_tol = 1e-8\nabs_tol = 1e-11\n",
    )
    .unwrap();
    let out = polqed(&[
        "g2-trace",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = data_lines(&dir.path().join("g2_trace.csv"));
    assert_eq!(lines[0], "tau_ns,g2_raw,g2_conv_50ps,g2_conv_500ps");
    assert_eq!(lines.len(), 1 + 801);
    let mid: Vec<f64> = lines[401].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(mid[0], 0.0);
    assert!(mid[1] > mid[2] && mid[2] > mid[3] && mid[3] > 1.0, "{mid:?}");
}

#[test]
fn photon_number_and_transmission_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(
        polqed(&["photon-number", "--preset", "qd_a", "--n-fock", "3", "--out", d])
            .status
            .success()
    );
    let lines = data_lines(&dir.path().join("photon_number.csv"));
    assert_eq!(lines[0], "theta_out_deg,p0,p1,p2,p3,p4");
    assert!(
        polqed(&["transmission-map", "--preset", "qd_a", "--n-fock", "3", "--out", d])
            .status
            .success()
    );
    let lines = data_lines(&dir.path().join("transmission_map.csv"));
    assert_eq!(lines[0], "laser_detuning_ghz,theta_out_deg,T_raw,T_colnorm");
    let out = polqed(&[
        "kappa-sweep",
        "--preset",
        "qd_b",
        "--n-fock",
        "3",
        "--format",
        "json",
        "--out",
        d,
    ]);
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("kappa_sweep.json")).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 5);
}

#[test]
fn fit_writes_json_result() {
    let dir = tempfile::tempdir().unwrap();
    let truth = SystemParams {
        n_fock: 3,
        ..SystemParams::qd_a()
    };
    let det: Vec<f64> = (0..12).map(|k| -3.0 + 0.5 * k as f64).collect();
    let data = TransmissionDataset::synthetic(&truth, &[-45.0, 0.0], &det).unwrap();
    let csv = dir.path().join("data.csv");
    data.write_csv(std::fs::File::create(&csv).unwrap()).unwrap();
    let cfg = dir.path().join("fit.toml");
    std::fs::write(&cfg, "preset = \"qd_a\"\nn_fock = 3\n[params]\nf_qd_x_ghz = -1.3\n").unwrap();
    let out = polqed(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        csv.to_str().unwrap(),
        "--free",
        "f_qd_x",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit_result.json")).unwrap()).unwrap();
    let f = v["params"]["f_qd_x_ghz"].as_f64().unwrap();
    assert!((f + 1.5).abs() < 1e-4, "{f}");
}
