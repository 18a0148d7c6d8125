use std::path::{Path, PathBuf};
use std::process::Command;

use obstacle_harness::config::ProblemConfig;
use obstacle_harness::run::{norms_from_field, read_field, read_record, run, write_outputs};
use obstacle_harness::sweep::{sweep_cz_ratio, sweep_holder, CzSweepConfig, HolderSweepConfig};
use obstacle_harness::verify::verify;
use obstacle_harness::ValidationError;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small(kind: &str, preset: &str, res: usize) -> ProblemConfig {
    let mut v = serde_json::json!({
        "kind": kind,
        "domain": { "preset": preset, "resolution": res },
        "coefficients": [{ "preset": "identity" }],
        "f": { "preset": "constant", "value": 0.0 },
        "psi": { "preset": "paraboloid", "peak": 0.5, "curvature": 1.0 },
        "eps": { "eps0": 0.1, "factor": 0.5, "count": 5 },
        "sampler": { "stride": 2, "seed": 1, "probes": 2, "r_max": 0.25 }
    });
    if preset == "interval" {
        v["exponents"] = serde_json::json!({ "p": 4.0, "theta": 0.5, "s": 2.0, "sigma": 0.5 });
    }
    if kind == "linear-parabolic" {
        v["psi"] = serde_json::json!({ "preset": "constant", "value": -0.5 });
        v["f"] = serde_json::json!({ "preset": "constant", "value": -2.0 });
        v["time"] = serde_json::json!({ "t_final": 0.5, "steps": 5 });
    }
    serde_json::from_value(v).unwrap()
}

fn validation(err: anyhow::Error) -> ValidationError {
    err.downcast::<ValidationError>().expect("a validation error")
}

#[test]
fn every_shipped_config_parses_and_validates() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name.starts_with("sweep-cz") {
            serde_json::from_str::<CzSweepConfig>(&text).unwrap().validate().unwrap();
        } else if name.starts_with("sweep-holder") {
            serde_json::from_str::<HolderSweepConfig>(&text).unwrap().validate().unwrap();
        } else {
            ProblemConfig::from_json(&text).unwrap().validate().unwrap();
        }
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let text = r#"{"kind":"linear-elliptic","domain":{"preset":"interval","resolution":8},
        "coefficients":[{"preset":"identity"}],"f":{"preset":"constant","value":0},
        "psi":{"preset":"constant","value":-1},"eps":{"eps0":0.1,"factor":0.5,"count":2},
        "exponets":{"p":4}}"#;
    let err = ProblemConfig::from_json(text).unwrap_err().to_string();
    assert!(err.contains("exponets"), "{err}");
}

#[test]
fn trivial_config_gives_zero_field() {
    let mut cfg = small("linear-elliptic", "square", 8);
    cfg.psi = obstacle_core::field::FieldExpr::Constant { value: -1.0 };
    let out = run(&cfg).unwrap();
    assert!(out.field.values.iter().all(|v| *v == 0.0));
    let r = &out.record.residuals;
    assert!(r.fixed_point <= r.tol_fp);
    assert!(r.complementarity.r_obstacle <= r.tol_fp && r.complementarity.r_equation <= r.tol_fp);
    assert!(r.equation_defect <= r.tol_fp);
}

#[test]
fn contact_config_meets_the_residual_invariants() {
    let cfg = small("linear-elliptic", "interval", 64);
    let out = run(&cfg).unwrap();
    let r = &out.record.residuals;
    assert_eq!(r.obstacle_violation, 0.0);
    assert!(r.equation_defect <= r.tol_fp);
    assert!(r.complementarity.r_product > 0.0 && r.complementarity.r_product < cfg.eps.last());
    assert_eq!(out.record.solver.stages.len(), cfg.eps.count);
}

#[test]
fn small_p_is_rejected_naming_p() {
    let mut cfg = small("linear-elliptic", "interval", 16);
    cfg.exponents.p = 1.5;
    cfg.exponents.theta = 3.0;
    cfg.eps.factor = 2.0;
    let err = validation(run(&cfg).err().unwrap());
    assert!(err.names("exponents.p"));
    // every violated field is reported, not only the first
    assert!(err.names("exponents.theta"));
    assert!(err.names("eps"));
}

#[test]
fn bellman_accepts_families_and_linear_rejects_them() {
    let mut cfg = small("bellman-elliptic", "square", 8);
    cfg.coefficients.push(obstacle_core::calculus::CoefficientPreset::Diagonal { a11: 1.0, a22: 4.0 });
    assert!(cfg.validate().is_ok());
    cfg.kind = obstacle_harness::config::ProblemKind::LinearElliptic;
    assert!(cfg.validate().unwrap_err().names("coefficients"));
    cfg.kind = obstacle_harness::config::ProblemKind::BellmanElliptic;
    cfg.coefficients.clear();
    assert!(cfg.validate().unwrap_err().names("coefficients"));
}

#[test]
fn power_weight_at_a_node_is_rejected() {
    let mut cfg = small("linear-elliptic", "interval", 16);
    cfg.weight = obstacle_harness::config::WeightSpec::Power { gamma: -0.5 };
    assert!(cfg.validate().unwrap_err().names("weight"));
    cfg.domain.resolution = 17;
    let r = cfg.validate();
    assert!(r.is_ok(), "{r:?}");
}

#[test]
fn hash_tracks_content() {
    let a = small("linear-elliptic", "interval", 16);
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 16);
    b.sampler.seed += 1;
    assert_ne!(a.hash(), b.hash());
    let round: ProblemConfig = ProblemConfig::from_json(&a.to_canonical_json()).unwrap();
    assert_eq!(round.hash(), a.hash());
}

#[test]
fn records_round_trip_and_verify() {
    let tmp = tempfile::tempdir().unwrap();
    for cfg in [small("linear-elliptic", "square", 12), small("linear-parabolic", "interval", 16)] {
        let dir = tmp.path().join(cfg.hash());
        let out = run(&cfg).unwrap();
        write_outputs(&cfg, &out, &dir).unwrap();
        let (c2, rec) = read_record(&dir).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(rec.norms, out.record.norms);
        let field = read_field(&dir).unwrap();
        assert_eq!(field, out.field);
        assert_eq!(norms_from_field(&cfg, &field).unwrap(), out.record.norms);
        let report = verify(&dir).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn verify_flags_a_tampered_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("linear-elliptic", "interval", 32);
    let out = run(&cfg).unwrap();
    write_outputs(&cfg, &out, tmp.path()).unwrap();
    let mut bytes = std::fs::read(tmp.path().join("u.bin")).unwrap();
    let mid = 8 * (bytes.len() / 16);
    bytes[mid..mid + 8].copy_from_slice(&1.0f64.to_le_bytes());
    std::fs::write(tmp.path().join("u.bin"), bytes).unwrap();
    let report = verify(tmp.path()).unwrap();
    assert!(!report.passed());
    assert!(report.checks.iter().any(|c| c.name == "stored-field-defect" && !c.pass));
}

#[test]
fn cz_sweep_is_homogeneous_and_reports_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = CzSweepConfig {
        base: small("linear-elliptic", "square", 8),
        scalings: vec![0.5, 1.0, 3.0],
        resolutions: vec![8, 12],
        families: None,
    };
    let result = sweep_cz_ratio(&sweep, Some(tmp.path())).unwrap();
    assert_eq!(result.rows.len(), 6);
    assert!(result.summary[0].scaling_spread <= 1.0 + 1e-6);
    let csv = std::fs::read_to_string(tmp.path().join("sweep_cz.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    // every row's config is stored under its hash
    for r in &result.rows {
        let cfg = ProblemConfig::load(&tmp.path().join("configs").join(format!("{}.json", r.config_hash))).unwrap();
        assert_eq!(cfg.hash(), r.config_hash);
    }
}

#[test]
fn cz_sweep_keeps_going_after_a_failed_row() {
    let mut base = small("linear-elliptic", "square", 8);
    base.tolerances.max_iters = 1;
    base.tolerances.method = obstacle_core::elliptic::FixedPointMethod::Picard { omega: 0.01 };
    let sweep = CzSweepConfig { base, scalings: vec![0.5, 1.0, 2.0], resolutions: vec![8, 10], families: None };
    let result = sweep_cz_ratio(&sweep, None).unwrap();
    assert_eq!(result.rows.len(), 6);
    assert!(result.rows.iter().all(|r| r.error.is_some()));
    assert_eq!(result.summary[0].failed_rows, 6);
}

#[test]
fn cz_sweep_preconditions() {
    let base = small("linear-elliptic", "square", 8);
    let bad = CzSweepConfig { base: base.clone(), scalings: vec![1.0, 2.0], resolutions: vec![8], families: Some(vec![]) };
    let err = bad.validate().unwrap_err();
    assert!(err.names("scalings") && err.names("resolutions") && err.names("families"));
    let empty = CzSweepConfig { base, scalings: vec![1.0, 2.0, 3.0], resolutions: vec![8, 12], families: Some(vec![vec![]]) };
    assert!(empty.validate().unwrap_err().names("families"));
}

#[test]
fn holder_sweep_gate_and_header() {
    let mut base = small("linear-elliptic", "square", 12);
    base.exponents.p = 4.0;
    base.exponents.theta = 1.0;
    let ok = HolderSweepConfig { base: base.clone(), resolutions: vec![8, 12] };
    let result = sweep_holder(&ok, None).unwrap();
    assert_eq!(result.alpha, 0.75);
    let csv = obstacle_harness::sweep::holder_csv(&result, &ok);
    assert!(csv.starts_with("# n=2 p=4 theta=1 alpha=0.75\n"));
    // p + theta = n exactly is rejected
    let mut edge = HolderSweepConfig { base, resolutions: vec![8, 12] };
    edge.base.kind = obstacle_harness::config::ProblemKind::BellmanElliptic;
    edge.base.exponents.p = 1.5;
    edge.base.exponents.theta = 0.5;
    assert!(edge.base.validate().is_ok());
    let err = edge.validate().unwrap_err();
    assert!(err.to_string().contains("p + theta > n"), "{err}");
    assert!(sweep_holder(&edge, None).is_err());
}

#[test]
fn cli_solve_verify_and_norms() {
    let bin = env!("CARGO_BIN_EXE_obstacle");
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.json");
    std::fs::write(&cfg_path, small("linear-elliptic", "interval", 32).to_canonical_json()).unwrap();
    let out = tmp.path().join("rec");
    let solve = Command::new(bin).args(["solve", "--seed", "5", "--config"]).arg(&cfg_path).arg("--out").arg(&out).output().unwrap();
    assert!(solve.status.success(), "{}", String::from_utf8_lossy(&solve.stderr));
    for f in ["record.json", "norms.csv", "u.bin", "u.json", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(ProblemConfig::load(&out.join("config.json")).unwrap().sampler.seed, 5);
    let verify = Command::new(bin).args(["verify", "--record"]).arg(&out).output().unwrap();
    assert!(verify.status.success());
    assert!(String::from_utf8_lossy(&verify.stdout).contains("[PASS] norms-reproducible"));
    let norms = Command::new(bin).args(["norms", "--record"]).arg(&out).output().unwrap();
    assert_eq!(norms.stdout, std::fs::read(out.join("norms.csv")).unwrap());
    let mut bad = small("linear-elliptic", "interval", 32);
    bad.exponents.p = 1.5;
    std::fs::write(&cfg_path, bad.to_canonical_json()).unwrap();
    let fail = Command::new(bin).args(["solve", "--config"]).arg(&cfg_path).arg("--out").arg(tmp.path().join("x")).output().unwrap();
    assert!(!fail.status.success());
    assert!(String::from_utf8_lossy(&fail.stderr).contains("exponents.p"));
}
