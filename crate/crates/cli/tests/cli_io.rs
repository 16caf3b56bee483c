//! Config handling, exit codes, rerun determinism and stage isolation.

use fhm_cli::{preset, ExperimentConfig, Pipeline};
use std::path::PathBuf;
use std::process::Command;

fn tmp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("fhm_cli_io_{tag}"));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn small_solve_config(seed: u64, out: &str) -> String {
    format!(
        r#"
seed = {seed}
output_dir = "{out}"

[model]
kind = "dirichlet"
b = 5.5
n = 3
q = 3

[grid]
n = 3
dims = [32, 32, 32]
shape = "ball"
radius = 0.5

[boundary]
kind = "hedgehog"

[solve]
enabled = true
max_iters = 200
step0 = 0.05
backtrack_factor = 0.5
energy_tol = 1e-8
residual_tol = 0.1
residual_trials = 8

[analysis]
centers = [[0.0, 0.0, 0.0]]
radii = {{ min = 0.13, max = 0.3, count = 6, log = false }}
eps_mollifier = 0.1
flux_directions = 64

[strata]
eps0 = 20.0
eps_strat = 0.05
delta_pinch = 0.5
rho = 0.4
r0 = 0.125
reifenberg_delta = 0.1
detect_rmax = 0.25
scales = [0.2]
"#
    )
}

#[test]
fn presets_parse_and_validate() {
    for name in ["hedgehog-dirichlet", "hedgehog-f1", "cylinder", "two-hedgehogs"] {
        let text = preset(name).unwrap();
        ExperimentConfig::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    assert!(preset("no-such-preset").is_none());
}

#[test]
fn tabulated_model_loads_from_table_file() {
    let dir = tmp_dir("table");
    let table = dir.join("f.tbl");
    let mut text = String::from("# p  F\n");
    for i in 0..=200 {
        let p = 1e4 * (i as f64 / 200.0).powi(4);
        text.push_str(&format!("{} {}\n", p, p * (2.0 - (p + 1.0f64).powf(-0.4))));
    }
    std::fs::write(&table, text).unwrap();
    let cfg_text = small_solve_config(1, dir.to_str().unwrap())
        .replace(
            "kind = \"dirichlet\"",
            &format!("kind = \"tabulated\"\ntable_path = \"{}\"", table.display()),
        )
        .replace("b = 5.5", "b = 10.0");
    let cfg = ExperimentConfig::from_toml(&cfg_text).unwrap();
    let mut model = cfg.build_model().unwrap();
    let rep = model.verify_assumptions(&fhm_core::integrand::log_samples(1e4, 100));
    assert!(rep.ellipticity_ok && rep.integrability_ok, "{rep:?}");
}

#[test]
fn rejects_unknown_keys_and_bad_values() {
    let good = small_solve_config(1, "out");
    assert!(ExperimentConfig::from_toml(&good).is_ok());
    let with_typo = good.replace("eps_mollifier = 0.1", "eps_molifier = 0.1");
    let err = ExperimentConfig::from_toml(&with_typo).unwrap_err();
    assert!(err.to_string().contains("eps_molifier"), "{err}");
    let negative_spacing = good.replace(
        "shape = \"ball\"\nradius = 0.5",
        "shape = \"box\"\nspacing = -0.1",
    );
    assert!(ExperimentConfig::from_toml(&negative_spacing).is_err());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_fhm");
    let dir = tmp_dir("exit");
    // config parse failure → 2
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "definitely not a config").unwrap();
    let st = Command::new(bin)
        .args(["verify-integrand", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&st.stderr));
    // negative spacing diagnostic → 2
    let neg = dir.join("neg.toml");
    std::fs::write(
        &neg,
        small_solve_config(1, dir.join("o").to_str().unwrap()).replace(
            "shape = \"ball\"\nradius = 0.5",
            "shape = \"box\"\nspacing = -0.1",
        ),
    )
    .unwrap();
    let st = Command::new(bin)
        .args(["verify-integrand", "--config"])
        .arg(&neg)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("spacing"));
    // healthy verify → 0
    let ok = dir.join("ok.toml");
    std::fs::write(&ok, small_solve_config(1, dir.join("o2").to_str().unwrap())).unwrap();
    let st = Command::new(bin)
        .args(["verify-integrand", "--config"])
        .arg(&ok)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&st.stderr));
}

#[test]
fn rerun_same_seed_is_byte_identical() {
    let d1 = tmp_dir("det1");
    let d2 = tmp_dir("det2");
    for d in [&d1, &d2] {
        let text = small_solve_config(42, d.to_str().unwrap());
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let p = Pipeline::new(cfg, text, None).unwrap();
        p.run().unwrap();
    }
    for name in ["profiles.csv", "singular.csv", "strata.csv", "beta.csv", "minkowski.csv"] {
        let a = std::fs::read(d1.join(name)).unwrap();
        let b = std::fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let a = std::fs::read(d1.join("map.fhm")).unwrap();
    let b = std::fs::read(d2.join("map.fhm")).unwrap();
    assert_eq!(a, b, "solved maps differ between identical runs");
}

#[test]
fn analyze_on_saved_map_reproduces_profiles_bitwise() {
    let d = tmp_dir("iso");
    let text = small_solve_config(7, d.to_str().unwrap());
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let p = Pipeline::new(cfg, text.clone(), None).unwrap();
    let prepared = p.prepare_map(None).unwrap();
    let (csv_inline, _) = p.analyze(&prepared).unwrap();
    // reload the saved map through the analyze-on-file path
    let map_path = d.join("map.fhm");
    let cfg2 = ExperimentConfig::from_toml(&text).unwrap();
    let p2 = Pipeline::new(cfg2, text, Some(d.join("iso2").to_str().unwrap())).unwrap();
    let prepared2 = p2.prepare_map(Some(&map_path)).unwrap();
    let (csv_file, _) = p2.analyze(&prepared2).unwrap();
    assert_eq!(csv_inline, csv_file, "profiles differ between pipeline and saved-map analysis");
}

#[test]
fn loading_2d_map_into_3d_pipeline_is_dimension_error() {
    let d = tmp_dir("dim");
    let grid = fhm_core::GridDomain::box_domain(2, &[16, 16], 1.0 / 16.0, &[0.0, 0.0]).unwrap();
    let map2d = fhm_core::SphereMap::circle_phase(grid, 1.0).unwrap();
    let path = d.join("flat.fhm");
    map2d.save(&path).unwrap();
    let text = small_solve_config(1, d.to_str().unwrap());
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let p = Pipeline::new(cfg, text, None).unwrap();
    let err = match p.prepare_map(Some(&path)) {
        Ok(_) => panic!("2-d map accepted by a 3-d pipeline"),
        Err(e) => e,
    };
    assert!(matches!(err, fhm_core::Error::Dimension(_)), "{err}");
}
