use posi_rip::cli::{run, Outcome, CSV_HEADER};
use serde_json::Value;

fn posi(args: &str) -> Outcome {
    run(std::iter::once("posi").chain(args.split_whitespace()))
}

fn json(args: &str) -> Value {
    let out = posi(args);
    assert_eq!(out.code, 0, "{args}: {}", out.stderr);
    assert!(out.stderr.is_empty());
    serde_json::from_str(&out.stdout).unwrap()
}

fn error_of(args: &str) -> (i32, Value) {
    let out = posi(args);
    assert!(out.stdout.is_empty());
    assert_eq!(out.stderr.matches('\n').count(), 1, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stderr).unwrap();
    assert_eq!(v["exit_code"].as_i64().unwrap(), out.code as i64);
    (out.code, v)
}

#[test]
fn estimate_identity_and_dof_ordering() {
    let inf = json("estimate --ensemble identity:p=10 --s 3 --alpha 0.05 --r inf --reps 200000 --seed 1");
    assert_eq!(inf["version"], posi_rip::cli::VERSION);
    assert_eq!(inf["config"]["r"], "inf");
    let k_inf = inf["result"]["k_hat"].as_f64().unwrap();
    assert!((k_inf - 2.80).abs() < 0.02, "{k_inf}");
    let five = json("estimate --ensemble identity:p=10 --s 3 --alpha 0.05 --r 5 --reps 200000 --seed 1");
    assert_eq!(five["config"]["r"], 5);
    assert!(five["result"]["k_hat"].as_f64().unwrap() > k_inf);
}

#[test]
fn estimate_from_design_file_and_models_file() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("x.csv");
    std::fs::write(&design, "1,0.3,0\n0,0.9539392014169456,0\n0,0,1\n").unwrap();
    let models = dir.path().join("models.txt");
    std::fs::write(&models, "# two models\n1 2\n3\n").unwrap();
    let v = json(&format!("estimate --design {} --models {} --reps 2000", design.display(), models.display()));
    assert_eq!(v["result"]["pairs"], 3);
    assert_eq!(v["config"]["family"]["explicit"]["models"], 2);
}

#[test]
fn rank_deficient_models() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("x.csv");
    std::fs::write(&design, "1,2,0\n1,2,0\n0,0,1\n").unwrap();
    let (code, err) = error_of(&format!("estimate --design {} --s 2 --reps 1000", design.display()));
    assert_eq!(code, 3);
    assert_eq!(err["error"], "ModelRankDeficient");
    let v = json(&format!("estimate --design {} --s 2 --reps 1000 --skip-rank-deficient", design.display()));
    assert_eq!(v["result"]["skipped_models"], serde_json::json!([[1, 2]]));
}

#[test]
fn rip_examples() {
    let v = json("rip --ensemble equicorr:p=20,k=10,c=0.2 --s 5");
    assert!((v["result"]["delta"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    assert!(v["result"]["argmax_delta"].as_array().unwrap().iter().all(|i| i.as_u64().unwrap() >= 1));
    let v = json("rip --ensemble identity:p=8 --s 4");
    assert_eq!(v["result"]["delta"].as_f64().unwrap(), 0.0);
    assert_eq!(v["result"]["delta_bound_from_kappa"].as_f64().unwrap(), 0.0);
    let (code, err) = error_of("rip --ensemble gauss:n=50,p=40,seed=1 --s 8 --cap 100000");
    assert_eq!((code, err["error"].as_str().unwrap()), (3, "EnumerationLimit"));
    let v = json("rip --ensemble gauss:n=50,p=40,seed=1 --s 8 --cap 100000 --sample 2000");
    assert_eq!(v["result"]["exact"], false);
}

#[test]
fn bounds_json_and_csv_agree() {
    let args = "bounds --p 100 --s 5 --delta 0.1 --alpha 0.05 --r inf --grid 400";
    let v = json(args);
    let r = &v["result"];
    assert!((r["u_rip"].as_f64().unwrap() - 4.868).abs() < 1e-3);
    assert!((r["u_bar_rip"].as_f64().unwrap() - 6.828).abs() < 1e-3);
    assert!(r["rates"]["upper"].as_f64().unwrap() > 0.0);

    let csv = posi(&format!("{args} --format csv")).stdout;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.join(","), CSV_HEADER);
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(lines.next().is_none());
    for (name, field) in header.iter().zip(&row) {
        let j = &r[*name];
        match j {
            Value::Null => assert_eq!(*field, "", "{name}"),
            Value::String(s) => assert_eq!(field, s, "{name}"),
            Value::Number(n) => assert_eq!(field.parse::<f64>().unwrap(), n.as_f64().unwrap(), "{name}"),
            other => panic!("{name}: {other}"),
        }
    }
}

#[test]
fn bounds_from_design_uses_exhaustive_delta() {
    let v = json("bounds --ensemble equicorr:p=20,k=10,c=0.2 --s 5 --grid 200");
    assert_eq!(v["config"]["delta_source"], "exhaustive");
    assert!((v["config"]["delta"].as_f64().unwrap() - 0.4).abs() < 1e-12);
}

#[test]
fn bounds_lower_expr_needs_all_inputs() {
    let v = json("bounds --p 100 --s 5 --delta 0.1 --grid 200 --k 40 --c 0.2 --a 1");
    assert!((v["result"]["lower_expr"].as_f64().unwrap() - 0.0812942).abs() < 1e-6);
    assert_eq!(error_of("bounds --p 100 --s 5 --delta 0.1 --k 40 --c 0.2").0, 2);
}

#[test]
fn validation_errors() {
    let cases = [
        ("bounds --p 100 --s 5 --delta 1.0", "DeltaOutOfRange"),
        ("estimate --ensemble identity:p=10,q=3 --s 2", "ParseError"),
        ("estimate --ensemble identity:p=10 --s 2 --reps 10", "TooFewReps"),
        ("estimate --ensemble identity:p=10 --s 2 --alpha 1.5", "ParseError"),
        ("lower --p 10 --k 5 --c 0.5 --s 2", "InvalidCorrelation"),
        ("bl --q 1", "QLessThanTwo"),
        ("estimate --ensemble identity:p=10 --s 2 --r banana", "UsageError"),
        ("bogus", "UsageError"),
    ];
    for (args, kind) in cases {
        let (code, err) = error_of(args);
        assert_eq!(code, 2, "{args}");
        assert_eq!(err["error"], kind, "{args}");
    }
    assert_eq!(error_of("estimate --design /no/such/file.csv --s 1").0, 4);
}

#[test]
fn help_and_version_go_to_stdout() {
    let out = posi("--help");
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains("estimate") && out.stdout.contains("cover"));
    let out = posi("--version");
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains(posi_rip::cli::VERSION));
}

#[test]
fn lower_examples() {
    let v = json("lower --p 64 --k 32 --c 0.1 --s 4 --reps 2000");
    let r = &v["result"];
    let emp = r["empirical_lower"].as_f64().unwrap();
    assert!(emp <= r["gauss_width_hat"].as_f64().unwrap() + 3.0 * r["gauss_width_se"].as_f64().unwrap());
    assert!(r["lower_expr"].is_null());
    let v = json("lower --p 20 --k 10 --c 0.2 --s 1 --reps 1000");
    assert_eq!(v["result"]["empirical_lower"].as_f64().unwrap(), 0.0);
}

#[test]
fn bl_examples() {
    let v = json("bl --q 20 --r inf --rho 1 --level 0.05 --grid 4000");
    assert!((v["result"]["value"].as_f64().unwrap() - 1.960).abs() < 5e-3);
    let v = json("bl --q 20 --r 10 --rho 1 --level 0.05 --grid 4000");
    assert!((v["result"]["value"].as_f64().unwrap() - 2.228).abs() < 5e-3);
    let v = json("bl --q 20 --r inf --rho 1e30 --grid 500");
    assert!((v["config"]["ln_rho"].as_f64().unwrap() - 30.0 * std::f64::consts::LN_10).abs() < 1e-9);
    assert_eq!(error_of("bl --q 20 --rho 0.5").0, 2);
}

#[test]
fn cover_with_each_k_source() {
    let base = "cover --ensemble identity:p=4 --s 2 --reps 4000";
    let fixed = json(&format!("{base} --k 10"));
    assert_eq!(fixed["result"]["coverage"].as_f64().unwrap(), 1.0);
    let sparse = json(&format!("{base} --k u_bar_sparse"));
    assert!(sparse["result"]["coverage"].as_f64().unwrap() >= 0.95);
    let est = json(&format!("{base} --k estimate --k-reps 50000"));
    assert_eq!(est["config"]["k_seed"], 2);
    let c = est["result"]["coverage"].as_f64().unwrap();
    assert!((c - 0.95).abs() < 4.0 * (0.95f64 * 0.05 / 4000.0).sqrt(), "{c}");
    assert_eq!(error_of(&format!("{base} --k nope")).0, 2);
    assert_eq!(error_of(&format!("{base} --k 2 --mu 1,2")).0, 2);
}

fn write_spec(dir: &std::path::Path, body: &str) -> String {
    let path = dir.join("grid.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn scan_rows_header_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), r#"{"p": [50], "s": [3], "delta": [0.1, 0.2, 0.3], "grid": 200}"#);
    let full = posi(&format!("scan --grid-spec {spec}"));
    assert_eq!(full.code, 0, "{}", full.stderr);
    let lines: Vec<&str> = full.stdout.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("50,3,50,0.1,0.05,inf,"));
    assert!(lines[1].ends_with(",,,,,,,"));

    let again = posi(&format!("scan --grid-spec {spec}"));
    assert_eq!(again.stdout, full.stdout);

    let out = dir.path().join("scan.csv").display().to_string();
    let first = posi(&format!("--output {out} scan --grid-spec {spec}"));
    assert!(first.stdout.is_empty() && first.code == 0);
    let partial: String = full.stdout.lines().take(2).map(|l| format!("{l}\n")).collect();
    std::fs::write(&out, &partial).unwrap();
    assert_eq!(posi(&format!("--output {out} scan --grid-spec {spec} --start-row 1")).code, 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), full.stdout);
}

#[test]
fn scan_over_ensembles_with_monte_carlo() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        r#"{"ensembles": ["equicorr:p=16,k=8,c=0.2"], "s_exponent": 0.5, "alpha": [0.05, 0.1], "reps": 2000, "seed": 3, "grid": 200}"#,
    );
    let out = posi(&format!("scan --grid-spec {spec}"));
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows: Vec<Vec<&str>> = out.stdout.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.len(), 19);
        assert_eq!(row[1], "4");
        assert!((row[3].parse::<f64>().unwrap() - 0.2 * 3f64.sqrt()).abs() < 1e-12);
        assert!(row.iter().all(|f| !f.is_empty()));
        assert_eq!(row[18], "3");
    }
    let resumed = posi(&format!("scan --grid-spec {spec} --start-row 1"));
    assert_eq!(resumed.stdout, format!("{}\n", out.stdout.lines().nth(2).unwrap()));
}

#[test]
fn scan_rate_diagnostics_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        r#"{"p": [64, 512, 4096], "s_exponent": 0.3333333333333333, "delta_power": -0.25, "grid": 200}"#,
    );
    let out = posi(&format!("scan --grid-spec {spec}"));
    assert_eq!(out.code, 0, "{}", out.stderr);
    let s: Vec<&str> = out.stdout.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(s, ["4", "8", "16"]);
}

#[test]
fn scan_spec_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), r#"{"p": [10], "s": [2]}"#);
    assert_eq!(error_of(&format!("scan --grid-spec {spec}")).0, 2);
    let spec = write_spec(dir.path(), "not json");
    assert_eq!(error_of(&format!("scan --grid-spec {spec}")).1["error"], "ParseError");
}

#[test]
fn binary_exit_codes_and_streams() {
    let bin = env!("CARGO_BIN_EXE_posi");
    let ok = std::process::Command::new(bin).args(["bounds", "--p", "10", "--s", "2", "--delta", "0.1", "--grid", "200"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(serde_json::from_slice::<Value>(&ok.stdout).is_ok());
    let bad = std::process::Command::new(bin).args(["rip", "--ensemble", "gauss:n=10,p=40,seed=1", "--s", "9", "--cap", "10"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(3));
    assert!(bad.stdout.is_empty());
    let v: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(v["error"], "EnumerationLimit");
}
