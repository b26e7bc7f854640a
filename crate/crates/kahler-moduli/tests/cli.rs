use kahler_moduli::cli::config::{RunConfig, KEYS};
use kahler_moduli::cli::{self, exit_code, run, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};
use kahler_moduli::spectral::Delta0Reading;
use kahler_moduli::Error;
use std::path::{Path, PathBuf};

fn scratch(name: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("kahler-moduli-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&p);
    std::fs::create_dir_all(&p).unwrap();
    p
}

fn args(dir: &Path, rest: &[&str]) -> Vec<String> {
    let mut v = vec!["kahler-moduli".to_string(), "--output".into(), dir.display().to_string()];
    v.extend(rest.iter().map(|s| s.to_string()));
    v
}

#[test]
fn defaults_parse_from_empty_file() {
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    assert_eq!(RunConfig::parse("# only a comment\n\n").unwrap(), RunConfig::default());
}

#[test]
fn every_key_is_read() {
    let text = "level = 2\nn = 3\nk = 0\nseed = 11\nsolver.rel_tol = 1e-10\nsolver.max_iter = 50\nsolver.direct_threshold = 7\n\
                formula.shift = 0.25\nformula.delta0 = one_forms\nformula.audit = true\nformula.variants = ricci.4[minus_ad_nu]\noutput = runs/a\n";
    let c = RunConfig::parse(text).unwrap();
    assert_eq!((c.level, c.n, c.k, c.seed), (2, 3, 0, 11));
    assert_eq!((c.solver.rel_tol, c.solver.max_iter, c.solver.direct_threshold), (1e-10, 50, 7));
    assert_eq!((c.shift, c.delta0, c.audit), (0.25, Delta0Reading::OneForms, true));
    assert_eq!(c.variants, vec!["ricci.4[minus_ad_nu]".to_string()]);
    assert_eq!(c.output, PathBuf::from("runs/a"));
}

#[test]
fn written_form_round_trips() {
    let mut c = RunConfig::default();
    c.seed = 99;
    c.solver.rel_tol = 3.5e-11;
    c.shift = 0.125;
    c.variants = vec!["metric.4[minus_mu_derivative]".into(), "ricci.4[minus_ad_nu]".into()];
    let text = c.to_kv();
    assert_eq!(RunConfig::parse(&text).unwrap(), c);
    let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap().trim()).collect();
    assert_eq!(keys, KEYS);
}

#[test]
fn unknown_key_is_named() {
    match RunConfig::parse("level = 2\nmesh.level = 3\n") {
        Err(Error::Config(m)) => assert!(m.contains("mesh.level"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_values_name_the_key() {
    for (text, key) in [("level = two", "level"), ("formula.delta0 = forms", "formula.delta0"), ("formula.audit = yes", "formula.audit")] {
        match RunConfig::parse(text) {
            Err(Error::Config(m)) => assert!(m.contains(key), "{m}"),
            other => panic!("{text}: {other:?}"),
        }
    }
    assert!(matches!(RunConfig::parse("level 3"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::parse("seed = 1\nseed = 2"), Err(Error::Config(_))));
}

#[test]
fn invalid_settings_are_rejected() {
    for text in ["formula.shift = 0", "formula.shift = -1", "solver.rel_tol = 2", "n = 0", "formula.variants = metric.4[nope]"] {
        assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
    }
}

#[test]
fn error_kinds_map_to_exit_codes() {
    assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
    assert_eq!(exit_code(&Error::UnsupportedDegree(1)), EXIT_CONFIG);
    assert_eq!(exit_code(&Error::LevelOutOfRange(9)), EXIT_CONFIG);
    assert_eq!(exit_code(&Error::SolverBreakdown { iterations: 3, residual: 1.0 }), EXIT_NUMERICAL);
    assert_eq!(exit_code(&Error::TailFitUnstable("x".into())), EXIT_NUMERICAL);
    let d = cli::diagnostic(&Error::UnsupportedDegree(1));
    assert_eq!(d["error"], "UnsupportedDegree");
    assert_eq!(d["exit_code"], EXIT_CONFIG);
}

#[test]
fn config_file_with_unknown_key_exits_2() {
    let dir = scratch("unknown");
    let cfg = dir.join("run.kv");
    std::fs::write(&cfg, "level = 2\ncolour = blue\n").unwrap();
    let c = cfg.display().to_string();
    assert_eq!(run(args(&dir, &["--config", &c, "init"])), EXIT_CONFIG);
    assert!(!dir.join("mesh.json").exists());
}

#[test]
fn bad_arguments_exit_2() {
    let dir = scratch("args");
    assert_eq!(run(args(&dir, &["frobnicate"])), EXIT_CONFIG);
    assert_eq!(run(args(&dir, &["spectral", "--operator", "lap7"])), EXIT_CONFIG);
    assert_eq!(run(args(&dir, &["--level", "2", "beltrami", "--direction", "5"])), EXIT_CONFIG);
    assert_eq!(run(args(&dir, &["--level", "12", "init"])), EXIT_CONFIG);
    assert_eq!(run(args(&dir, &["--config", "/nonexistent/run.kv", "init"])), EXIT_CONFIG);
}

#[test]
fn too_few_eigenvalues_is_a_numerical_breakdown() {
    let dir = scratch("tail");
    assert_eq!(run(args(&dir, &["--level", "2", "spectral", "--operator", "lapAdE", "--count", "40"])), EXIT_NUMERICAL);
}

#[test]
fn init_reports_embed_config_and_version() {
    let dir = scratch("init");
    assert_eq!(run(args(&dir, &["--level", "2", "--seed", "5", "init"])), EXIT_OK);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("init.json")).unwrap()).unwrap();
    assert_eq!(r["code_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["command"], "init");
    assert_eq!(r["config"]["level"], 2);
    assert_eq!(r["config"]["seed"], 5);
    let back = RunConfig::parse(r["config_text"].as_str().unwrap()).unwrap();
    assert_eq!((back.level, back.seed), (2, 5));
    assert_eq!(r["result"]["validation"]["passed"], true);
    assert!(dir.join("mesh.json").exists() && dir.join("rep.json").exists());
}

#[test]
fn hodge_writes_bases_and_operators() {
    let dir = scratch("hodge");
    assert_eq!(run(args(&dir, &["--level", "2", "hodge"])), EXIT_OK);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("hodge.json")).unwrap()).unwrap();
    assert_eq!([&r["result"]["tx"]["dim"], &r["result"]["end"]["dim"], &r["result"]["ad"]["dim"]], [3, 5, 3]);
    let mtx = std::fs::read_to_string(dir.join("dbar_end.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate complex general"));
    for b in ["basis_tx.json", "basis_end.json", "basis_ad.json"] {
        assert!(dir.join(b).exists(), "{b}");
    }
}

#[test]
fn identical_runs_write_identical_bytes() {
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    for dir in [&a, &b] {
        // same relative output path in both reports
        let out = dir.display().to_string();
        assert_eq!(run(["kahler-moduli", "--output", &out, "--level", "2", "tensors", "--formula", "ricci", "--audit"]), EXIT_OK);
        assert_eq!(run(["kahler-moduli", "--output", &out, "--level", "2", "beltrami", "--scale", "0.01"]), EXIT_OK);
    }
    for f in ["tensor_ricci.json", "audit_ricci.json", "formula_ricci.json", "mapping.bin", "mapping.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // reports differ only in the recorded output directory
    for f in ["tensors_ricci.json", "beltrami.json"] {
        let strip = |d: &Path| std::fs::read_to_string(d.join(f)).unwrap().replace(&d.display().to_string(), "OUT");
        assert_eq!(strip(&a), strip(&b), "{f}");
    }
}

#[test]
fn audit_is_limited_to_tensors_with_variants() {
    let dir = scratch("audit");
    assert_eq!(run(args(&dir, &["--level", "2", "tensors", "--formula", "kahler", "--audit"])), EXIT_CONFIG);
}
