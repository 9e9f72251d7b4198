use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use hjb_cli::{emit_scenario, parse_scenario, parse_scenario_str, CliError};
use hjb_core::checks::TheoremId;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn shipped() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(scenarios())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn hjb(args: &[&str], file: &str, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_hjb"))
        .args(args)
        .arg(scenarios().join(file))
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn shipped_scenarios_round_trip() {
    let mut parsed = 0;
    for p in shipped() {
        let Ok(sc) = parse_scenario(&p) else { continue };
        let text = emit_scenario(&sc).unwrap();
        assert_eq!(parse_scenario_str(&text).unwrap(), sc, "{}", p.display());
        parsed += 1;
    }
    assert!(parsed >= 8);
}

#[test]
fn shipped_suite_covers_every_statement() {
    let sc = parse_scenario(&scenarios().join("suite_default.toml")).unwrap();
    let ids: BTreeSet<TheoremId> = sc.suite.unwrap().checks.iter().map(|c| c.theorem).collect();
    assert_eq!(ids, TheoremId::ALL.into_iter().collect());
}

#[test]
fn minimal_file_gets_defaults() {
    let sc = parse_scenario_str("name = \"m\"\n[grid]\nextents = [[0.0, 1.0]]\nn = [9]\n[family]\nkind = \"laplacian\"\n").unwrap();
    assert_eq!(sc.seeds, vec![0]);
    assert_eq!(sc.branch.n_samples, 11);
    assert_eq!(sc.branch.ladder_count, 20);
    assert_eq!(sc.eigen.tol, 1e-10);
    let text = emit_scenario(&sc).unwrap();
    assert!(text.contains("ladder_count = 20"));
}

#[test]
fn unknown_key_names_its_path() {
    let err = parse_scenario(&scenarios().join("bad_key.toml")).unwrap_err();
    match &err {
        CliError::Schema { path, msg } => {
            assert_eq!(path, "family.gamma_typo");
            assert!(msg.contains("gamma_typo"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
    let nested = "name = \"x\"\n[grid]\nextents = [[0.0, 1.0]]\nn = [9]\n[family]\nkind = \"laplacian\"\n[branch]\nsamples = 3\n";
    match parse_scenario_str(nested).unwrap_err() {
        CliError::Schema { path, .. } => assert_eq!(path, "branch.samples"),
        other => panic!("unexpected {other:?}"),
    }
    match parse_scenario_str("name = \"x\"\ncolour = 1\n").unwrap_err() {
        CliError::Schema { path, .. } => assert_eq!(path, "colour"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn too_few_nodes_is_schema_error() {
    let err = parse_scenario(&scenarios().join("bad_n.toml")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("grid.n[0]"));
}

#[test]
fn unknown_check_parameter_rejected() {
    let text = "name = \"x\"\n[grid]\nextents = [[0.0, 1.0]]\nn = [9]\n[family]\nkind = \"laplacian\"\n\
                [[suite.checks]]\ntheorem = \"P6.1\"\nparams = { typo = 1.0 }\n";
    match parse_scenario_str(text).unwrap_err() {
        CliError::Schema { path, .. } => assert_eq!(path, "suite.checks[0].params.typo"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn eigen_manifest_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(hjb(&["eigen"], "laplacian.toml", &a), 0);
    assert_eq!(hjb(&["eigen", "--jobs", "2"], "laplacian.toml", &b), 0);
    for f in ["eigen_plus.csv", "eigen_minus.csv", "summary.json", "run.json", "scenario.toml"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    for f in ["eigen_plus.csv", "eigen_minus.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let csv = std::fs::read_to_string(a.join("eigen_plus.csv")).unwrap();
    assert!(csv.starts_with("x,value\n") && !csv.contains('\r'));
    let first = csv.lines().nth(1).unwrap();
    let mantissa = first.split(',').nth(1).unwrap().split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["exit_code"], 0);
    assert_eq!(run["scenario"]["name"], "laplacian");
    assert!(run["versions"]["hjb-core"].is_string());
}

#[test]
fn diagram_after_branch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fold");
    assert_eq!(hjb(&["branch"], "fucik_fold.toml", &out), 0);
    assert_eq!(hjb(&["diagram"], "fucik_fold.toml", &out), 0);
    let svg = std::fs::read_to_string(out.join("bifurcation.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains("t* ="));
}

#[test]
fn seed_flag_recorded() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hjb(&["solve", "--seed", "42"], "fucik_subcritical.toml", dir.path()), 0);
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 42);
    assert!(dir.path().join("solution.csv").exists());
}

#[test]
fn exit_code_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("suite", "suite_failing.toml", 1),
        ("eigen", "bad_key.toml", 2),
        ("eigen", "bad_n.toml", 2),
        ("eigen", "bad_cfl.toml", 3),
        ("branch", "bad_regime.toml", 4),
        ("tstar", "fucik_subcritical.toml", 4),
        ("suite", "laplacian.toml", 2),
    ];
    for (i, (cmd, file, want)) in cases.into_iter().enumerate() {
        assert_eq!(hjb(&[cmd], file, &dir.path().join(i.to_string())), want, "{cmd} {file}");
    }
}
