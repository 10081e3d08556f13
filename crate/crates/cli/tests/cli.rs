use std::fs;
use std::path::Path;
use std::process::Command;

use ovfl_cli::{run_experiment, RunConfig};

const SMOKE: &str = r#"
name = "smoke"
rounds = 3
seeds = [5, 6]

[world]
rss_per_slot = 100

[grid]
quantizer = [
    { kind = "uniform_scalar", bits_per_component = 2 },
    { kind = "uniform_scalar", bits_per_component = 4 },
    { kind = "uniform_scalar", bits_per_component = 32 },
]
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ovfl"));
    c.env_remove("OVFL_OUTPUT_DIR");
    c
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn grid_writes_one_file_per_cell_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = RunConfig::from_toml(SMOKE).unwrap();
    let summary = run_experiment(&config, tmp.path()).unwrap();
    assert_eq!(summary.run_files.len(), 3 * 2);
    for f in &summary.run_files {
        let text = fs::read_to_string(f).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "round,train_loss,test_loss,bits_up,bits_down,cum_bits,wall_ms");
        assert_eq!(lines.len(), 1 + 3);
    }
    assert!(tmp.path().join("smoke/ovfl_u4_seed6.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut config = RunConfig::from_toml(SMOKE).unwrap();
    config.analysis.enabled = true;
    config.analysis.comparator_budget = 2;
    run_experiment(&config, a.path()).unwrap();
    config.threads = 1;
    run_experiment(&config, b.path()).unwrap();
    let fa = read_dir_sorted(&a.path().join("smoke"));
    let fb = read_dir_sorted(&b.path().join("smoke"));
    assert_eq!(fa.len(), 6 + 2);
    assert_eq!(fa, fb);
}

#[test]
fn analysis_files_have_a_row_per_round_and_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = RunConfig::from_toml(SMOKE).unwrap();
    config.analysis.enabled = true;
    config.analysis.comparator_budget = 2;
    let s = run_experiment(&config, tmp.path()).unwrap();
    let regret = fs::read_to_string(s.regret_file.unwrap()).unwrap();
    assert_eq!(regret.lines().count(), 1 + 6 * 3);
    let probes = fs::read_to_string(s.probe_file.unwrap()).unwrap();
    assert_eq!(probes.lines().count(), 1 + 6);
    assert!(probes.lines().next().unwrap().starts_with("cell,seed,l_hat,rho_hat"));
}

#[test]
fn binary_runs_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("smoke.toml");
    fs::write(&cfg, SMOKE).unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args(["run", cfg.to_str().unwrap(), "--seed-override", "9", "--output-dir", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let files = read_dir_sorted(&out.join("smoke"));
    let names: Vec<_> = files.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, vec!["ovfl_u2_seed9.csv", "ovfl_u32_seed9.csv", "ovfl_u4_seed9.csv"]);
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "name = \"env\"\nrounds = 2\nseeds = [1]\n").unwrap();
    let out = bin()
        .env("OVFL_OUTPUT_DIR", tmp.path().join("envout"))
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("envout/env/ovfl_u32_seed1.csv").exists());
}

#[test]
fn invalid_config_fails_with_the_field_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[quantizer]\nkind = \"uniform_scalar\"\nbits_per_component = 0\n").unwrap();
    let out = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantizer.bits_per_component"));

    fs::write(&cfg, "rounds = 3\nrounds = 4\n").unwrap();
    let out = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = bin().args(["run", tmp.path().join("missing.toml").to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
}

#[test]
fn divergence_exits_nonzero_with_the_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("div.toml");
    fs::write(&cfg, "rounds = 30\nseeds = [0]\neta = 1e9\nE = 4\n").unwrap();
    let out = bin().args(["run", cfg.to_str().unwrap(), "--output-dir", tmp.path().to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("divergence at round"), "{err}");
}

#[test]
fn presets_are_listed_and_unknown_names_rejected() {
    let out = bin().args(["presets", "list"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in [
        "fig4_loss_vs_rounds",
        "fig5_loss_vs_bits",
        "fig6_E_sweep",
        "fig7_v_sweep",
        "fig8_9_hex",
        "fig10_pu_sweep",
        "fig11_su_sweep",
        "fig12_bus_trace",
    ] {
        assert!(text.contains(name), "{name}");
    }
    let out = bin().args(["presets", "run", "fig99"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["presets", "show", "fig6_E_sweep"]).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("local_iters = [1, 4]"));
}

#[test]
fn trace_directory_is_resolved_next_to_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let routes = tmp.path().join("routes");
    fs::create_dir(&routes).unwrap();
    fs::write(routes.join("a.csv"), "10,10\n100,10\n").unwrap();
    fs::write(routes.join("b.csv"), "x,y\n400,400\n400,100\n").unwrap();
    let cfg = tmp.path().join("t.toml");
    fs::write(
        &cfg,
        "name = \"tr\"\nrounds = 2\nseeds = [0]\n[world]\nnum_sus = 2\n[traces]\ndir = \"routes\"\nspeeds = [3.0, 5.0]\n",
    )
    .unwrap();
    let config = RunConfig::load(&cfg).unwrap();
    let env = ovfl_cli::runner::environment(&config, 0).unwrap();
    assert_eq!(env.state().positions, vec![[10.0, 10.0], [400.0, 400.0]]);
}
