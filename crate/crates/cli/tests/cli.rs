use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdaregion"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("spawn fdaregion")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
}

fn samples(dir: &Path) {
    ok(
        dir,
        &[
            "sample",
            "--n",
            "30",
            "--grid-size",
            "40",
            "--seed",
            "3",
            "--out",
            "a.csv",
            "--mean-out",
            "mean.csv",
        ],
    );
    ok(
        dir,
        &[
            "sample",
            "--n",
            "25",
            "--grid-size",
            "40",
            "--seed",
            "4",
            "--shift",
            "0.3",
            "--out",
            "b.csv",
        ],
    );
}

#[test]
fn region_reports_pvalue_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    samples(d);
    for region in ["e_norm", "e_c", "r_z", "r_zs", "b_s"] {
        let out = ok(
            d,
            &[
                "region",
                "--sample",
                "a.csv",
                "--theta0",
                "mean.csv",
                "--region",
                region,
                "--summary",
                "s.csv",
            ],
        );
        let p: f64 = field(&out, "pvalue").parse().unwrap();
        assert!((0.0..=1.0).contains(&p), "{region}: {p}");
        assert_eq!(field(&out, "region"), region);
        assert!(d.join("s.csv").exists());
    }
    let out = ok(
        d,
        &[
            "region", "--sample", "a.csv", "--theta0", "mean.csv", "--region", "b_ec",
        ],
    );
    assert_eq!(field(&out, "pvalue"), "NA");
}

#[test]
fn far_hypothesis_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    samples(d);
    // b.csv's first row is the grid, its second a curve far from the mean
    let out = ok(
        d,
        &["region", "--sample", "a.csv", "--theta0", "b.csv", "--region", "e_c"],
    );
    assert_eq!(field(&out, "reject"), "true");
}

#[test]
fn band_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    samples(d);
    for kind in ["b_ec", "b_s", "naive_t"] {
        ok(
            d,
            &[
                "band",
                "--sample",
                "a.csv",
                "--kind",
                kind,
                "--csv",
                "band.csv",
                "--svg",
                "band.svg",
                "--overlay",
                "mean.csv",
            ],
        );
        let csv = std::fs::read_to_string(d.join("band.csv")).unwrap();
        assert!(csv.starts_with("t,center,lower,upper"));
        assert_eq!(csv.lines().count(), 41);
        let svg = std::fs::read_to_string(d.join("band.svg")).unwrap();
        assert!(svg.starts_with("<svg"));
    }
    assert!(!run(d, &["band", "--sample", "a.csv"]).status.success());
}

#[test]
fn twosample_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    samples(d);
    let out = ok(
        d,
        &[
            "twosample",
            "a.csv",
            "b.csv",
            "--out-dir",
            "ts",
            "--regions",
            "e_norm,e_c,r_z",
        ],
    );
    assert!(out.starts_with("label,pvalue,reject"));
    assert_eq!(out.lines().count(), 4);
    for f in ["pvalues.csv", "marginals.csv", "band.svg"] {
        assert!(d.join("ts").join(f).exists(), "{f}");
    }
    let bad = run(
        d,
        &[
            "twosample",
            "a.csv",
            "b.csv",
            "--out-dir",
            "ts",
            "--marginal-region",
            "e_c",
        ],
    );
    assert!(!bad.status.success());
}

#[test]
fn simulate_is_deterministic_and_reads_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["simulate", "type1", "--n", "25", "--reps", "20", "--grid-size", "40"];
    // grid size only comes from a config file
    assert!(!run(d, &args).status.success());
    std::fs::write(d.join("c.json"), r#"{"kind": "type1", "grid_size": 40, "nboot": 200}"#).unwrap();
    let args = [
        "simulate",
        "type1",
        "--config",
        "c.json",
        "--n",
        "25",
        "--reps",
        "20",
        "--cov",
        "known",
        "--regions",
        "e_c,r_z,b_s",
        "--seed",
        "9",
    ];
    let a = ok(d, &args);
    let b = ok(d, &args);
    assert_eq!(a, b);
    assert!(a.starts_with("label,e_c,r_z,b_s\ntype1,"));
    ok(
        d,
        &[&args[..], &["--out", "t.csv", "--meta", "m.json", "--svg", "t.svg"]].concat(),
    );
    assert_eq!(std::fs::read_to_string(d.join("t.csv")).unwrap(), a);
    let meta = std::fs::read_to_string(d.join("m.json")).unwrap();
    assert!(meta.contains("\"grid_size\": 40"));
}

#[test]
fn simulate_rejects_bad_designs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["simulate", "power", "--reps", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario"));
    std::fs::write(d.join("bad.json"), r#"{"kind": "type1", "bogus": 1}"#).unwrap();
    assert!(!run(d, &["simulate", "type1", "--config", "bad.json"]).status.success());
    assert!(!run(d, &["simulate", "type1", "--regions", "e_q"]).status.success());
}

#[test]
fn dry_run_echoes_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &[
            "simulate",
            "power",
            "--scenario",
            "local-shift",
            "--deltas",
            "0.01,0.02",
            "--var-frac",
            "0.99",
            "--dry-run",
        ],
    );
    assert!(out.contains("local_shift"));
    assert!(out.contains("0.99"));
}

#[test]
fn smooth_keeps_shape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    samples(d);
    ok(d, &["smooth", "--sample", "a.csv", "--n-basis", "10", "--out", "s.csv"]);
    let s = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(s.lines().count(), 31);
}
