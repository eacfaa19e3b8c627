use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn zonepred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zonepred"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Short heating-only data set: 30 identification days, 30 initialization
/// days and a few evaluation days.
fn short_data(dir: &Path, days: &str) -> PathBuf {
    let out = dir.join("data");
    let o = zonepred(&["simulate", "--preset", "heavy", "--days", days, "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("data.csv")
}

fn summary_rows(bundle: &Path) -> Vec<String> {
    fs::read_to_string(bundle.join("summary.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn simulate_year_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = zonepred(&["simulate", "--preset", "heavy", "--seed", "7", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let csv_a = fs::read(a.join("data.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("data.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("scenario.json")).unwrap(),
        fs::read(b.join("scenario.json")).unwrap()
    );
    let rows = String::from_utf8(csv_a).unwrap().lines().count() - 1;
    assert_eq!(rows, 365 * 96);
}

#[test]
fn simulate_gap_fraction() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("gaps");
    let o = zonepred(&["simulate", "--days", "60", "--gap-fraction", "0.1", "--seed", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("data.csv")).unwrap();
    let (mut cells, mut gaps) = (0usize, 0usize);
    for line in text.lines().skip(1) {
        for v in line.split(',').skip(1) {
            cells += 1;
            gaps += usize::from(v.is_empty() || v.eq_ignore_ascii_case("nan"));
        }
    }
    let frac = gaps as f64 / cells as f64;
    assert!((frac - 0.1).abs() < 0.01, "gap fraction {frac}");
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = zonepred(&["simulate", "--preset", "castle", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("castle"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(zonepred(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(zonepred(&["--help"]).status.code(), Some(0));
}

#[test]
fn bench_filters_and_report() {
    let dir = TempDir::new().unwrap();
    let data = short_data(dir.path(), "63");

    let adaptive = dir.path().join("adaptive");
    let o = zonepred(&[
        "bench", s(&data), "--variants", "bst_adaptive", "--eval-stride", "40", "--out", s(&adaptive),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary_rows(&adaptive).len(), 60);
    assert_eq!(fs::read_dir(adaptive.join("variants")).unwrap().count(), 60);

    let arx = dir.path().join("arx");
    let o = zonepred(&["bench", s(&data), "--variants", "arx_adaptive", "--eval-stride", "40", "--out", s(&arx)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(summary_rows(&arx).len(), 3);

    let o = zonepred(&["bench", s(&data), "--variants", "nothing_like_this", "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no variants selected"));

    let single = dir.path().join("single");
    let o = zonepred(&["bench", s(&data), "--variants", "arx_static", "--eval-stride", "40", "--out", s(&single)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = zonepred(&["report", s(&single)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn full_grid_report_is_ranked() {
    let dir = TempDir::new().unwrap();
    let data = short_data(dir.path(), "62");
    let bundle = dir.path().join("grid");
    let o = zonepred(&["bench", s(&data), "--eval-stride", "48", "--sigma-min-every", "1", "--out", s(&bundle)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = zonepred(&["report", s(&bundle)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().skip(1).map(String::from).collect();
    assert_eq!(lines.len(), 69);
    let rmse: Vec<f64> = lines
        .iter()
        .map(|l| l.split_whitespace().nth(3).unwrap().parse().unwrap())
        .collect();
    assert!(rmse.windows(2).all(|w| w[0] <= w[1]));

    let o = zonepred(&["report", s(&bundle), "--top", "4"]);
    assert!(o.status.success());
    let fams: Vec<String> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().nth(2).unwrap().to_string())
        .collect();
    assert_eq!(fams.len(), 4);
    let mut sorted = fams.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 4);

    for f in [
        "metadata.json",
        "per_step.csv",
        "seasonal_points.csv",
        "seasonal_fit.csv",
        "seasonal_curve.csv",
        "sigma_min.csv",
        "sigma_min_points.csv",
        "skipped.csv",
    ] {
        assert!(bundle.join(f).is_file(), "{f} missing");
    }
}

/// Drops the named column from every line of a CSV file.
fn without_column(path: &Path, name: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let Some(col) = header.iter().position(|h| *h == name) else {
        return text;
    };
    text.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != col)
                .map(|(_, v)| v)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn bench_is_idempotent_apart_from_timing() {
    let dir = TempDir::new().unwrap();
    let data = short_data(dir.path(), "62");
    let runs: Vec<PathBuf> = ["r1", "r2"].iter().map(|n| dir.path().join(n)).collect();
    for out in &runs {
        let o = zonepred(&[
            "bench", s(&data), "--variants", "arx_adaptive,bst_static,bst_adaptive-most_correlated-w181",
            "--eval-stride", "24", "--seed", "5", "--keep-predictions", "--out", s(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = files(&runs[0]);
    let b = files(&runs[1]);
    assert_eq!(a.len(), b.len());
    for (fa, fb) in a.iter().zip(&b) {
        assert_eq!(fa.strip_prefix(&runs[0]).unwrap(), fb.strip_prefix(&runs[1]).unwrap());
        let col = if fa.ends_with("summary.csv") { "mean_wall_time" } else { "wall_time" };
        assert_eq!(without_column(fa, col), without_column(fb, col), "{} differs", fa.display());
    }
}

#[test]
fn partial_failure_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = short_data(dir.path(), "40");
    let cfg = dir.path().join("run.toml");
    // One identification day is shorter than a BST trajectory but enough
    // for the ARX fit.
    fs::write(
        &cfg,
        r#"
schema_version = 1
seed = 2

[bench]
variants = ["arx_static", "bst_static-l1e2"]
eval_stride = 32

[bench.phases]
identification = [[0.0, 1.0]]
initialization = [5.0, 30.0]
evaluation = [30.0]
"#,
    )
    .unwrap();
    let out = dir.path().join("partial");
    let o = zonepred(&["--config", s(&cfg), "bench", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("bst_static-l1e2"));
    let rows = summary_rows(&out);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("arx_static,"));
    let meta = fs::read_to_string(out.join("metadata.json")).unwrap();
    assert!(meta.contains("\"failures\""));
}

#[test]
fn config_version_and_schema_checks() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "schema_version = 9\n").unwrap();
    let o = zonepred(&["--config", s(&cfg), "simulate", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schema_version"));

    let odd = dir.path().join("odd.csv");
    fs::write(&odd, "timestamp,a,b\n2021-01-01T00:00:00Z,1,2\n").unwrap();
    let o = zonepred(&["bench", s(&odd), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schema mismatch"));
}

#[test]
fn corrupt_bundle_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = zonepred(&["report", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    fs::write(dir.path().join("metadata.json"), "{}").unwrap();
    fs::write(dir.path().join("summary.csv"), "variant,rmse\nnot_a_variant,x\n").unwrap();
    let o = zonepred(&["report", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("corrupt bundle"));
}

#[test]
fn ingest_resamples_onto_the_grid() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.csv");
    let mut text = String::from("timestamp,P_heat,T_amb,I_sol,T_z\n");
    for i in 0..24 {
        let (h, m) = (i * 5 / 60, i * 5 % 60);
        let tz = if i == 7 { String::new() } else { format!("{}", 20.0 + i as f64 * 0.1) };
        text += &format!("2021-01-01T{h:02}:{m:02}:00Z,1.0,5.0,0.0,{tz}\n");
    }
    fs::write(&raw, text).unwrap();
    let out = dir.path().join("ing");
    let o = zonepred(&["ingest", s(&raw), "--raw-dt-minutes", "5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = fs::read_to_string(out.join("data.csv")).unwrap();
    let lines: Vec<&str> = data.lines().collect();
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines[1].starts_with("2021-01-01T00:00:00Z"));
    // The third block holds the missing sample.
    assert!(lines[3].ends_with(',') || lines[3].to_lowercase().ends_with("nan"));
    let tz: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!((tz - 20.1).abs() < 1e-9);
}
