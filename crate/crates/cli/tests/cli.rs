use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn parbart(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parbart"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = parbart(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn column(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn generate_fit_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "n=2000", "d=5", "noise=0.5", "seed=3", "output=train.csv"]);
    ok(d, &["fit", "data=train.csv", "m=50", "draws=1000", "burn=500", "output=model.txt"]);
    ok(d, &["predict", "model=model.txt", "input=train.csv", "output=pred.csv"]);
    let f = column(&d.join("train.csv.truth.csv"));
    let y = column(&d.join("train.csv"));
    let p = column(&d.join("pred.csv"));
    assert_eq!(p.len(), 2000);
    let rmse = (f.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / f.len() as f64).sqrt();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (y.len() - 1) as f64).sqrt();
    assert!(rmse < sd, "rmse {rmse} vs sd {sd}");
    let log = fs::read_to_string(d.join("model.txt.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1001);
}

#[test]
fn tcp_cluster_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "n=700", "d=3", "noise=0.3", "seed=5", "output=data.csv"]);
    let common = ["data=data.csv", "m=10", "draws=60", "burn=10", "seed=21", "reduction_blocks=2"];
    let with = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = vec!["fit".into()];
        v.extend(common.iter().map(|s| s.to_string()));
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let serial = with(&["output=serial.txt"]);
    ok(d, &serial.iter().map(String::as_str).collect::<Vec<_>>());

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let master = with(&["role=master", "workers=2", "verify=true", "output=dist.txt", &format!("listen={addr}")]);
    let mut master = Command::new(env!("CARGO_BIN_EXE_parbart")).current_dir(d).args(&master).stderr(Stdio::null()).spawn().unwrap();
    let workers: Vec<_> = [1, 2]
        .iter()
        .map(|r| {
            let args = with(&["role=worker", "workers=2", &format!("rank={r}"), &format!("connect={addr}")]);
            Command::new(env!("CARGO_BIN_EXE_parbart")).current_dir(d).args(&args).stderr(Stdio::null()).spawn().unwrap()
        })
        .collect();
    assert!(master.wait().unwrap().success());
    for mut w in workers {
        assert!(w.wait().unwrap().success());
    }
    assert_eq!(fs::read(d.join("serial.txt")).unwrap(), fs::read(d.join("dist.txt")).unwrap());
    assert_eq!(
        fs::read(d.join("serial.txt.log.csv")).unwrap(),
        fs::read(d.join("dist.txt.log.csv")).unwrap()
    );
}

#[test]
fn config_errors_fail_with_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "n=50", "d=2", "output=t.csv"]);
    for (args, needle) in [
        (vec!["fit", "data=t.csv", "draws=100", "burn=100", "output=m.txt"], "empty posterior"),
        (vec!["fit", "data=t.csv", "kfac=0", "output=m.txt"], "kfac"),
        (vec!["fit", "data=t.csv", "colour=red"], "colour"),
        (vec!["fit", "role=worker", "connect=127.0.0.1:1", "rank=1", "workers=1"], "data"),
        (vec!["fit", "data=missing.csv", "output=m.txt"], "missing.csv"),
    ] {
        let out = parbart(d, &args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }
    assert!(!d.join("m.txt").exists());
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "n=200", "d=2", "output=t.csv"]);
    fs::write(d.join("run.cfg"), "# small\nm = 3\ndraws = 20\nburn = 5\noutput = a.txt\n").unwrap();
    ok(d, &["fit", "--config", "run.cfg", "data=t.csv", "output=b.txt"]);
    assert!(!d.join("a.txt").exists());
    let head = fs::read_to_string(d.join("b.txt")).unwrap();
    assert!(head.lines().nth(1).unwrap().starts_with("m 3 d 2 draws 15"));
}

#[test]
fn sensitivity_and_bench_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "n=500", "d=3", "output=t.csv", "seed=2"]);
    ok(d, &["fit", "data=t.csv", "m=10", "draws=60", "burn=20", "output=m.txt"]);
    ok(d, &["sensitivity", "model=m.txt", "n_s=2000", "parts=2", "grid_points=5", "n_mc=200", "output=sens"]);
    let idx = fs::read_to_string(d.join("sens.indices.csv")).unwrap();
    assert_eq!(idx.lines().count(), 4);
    let main = fs::read_to_string(d.join("sens.main.csv")).unwrap();
    assert_eq!(main.lines().count(), 1 + 3 * 5);

    ok(d, &["bench", "bench_n=300", "bench_m=5", "bench_p=1,2", "iterations=10", "d=3", "records=t.rec"]);
    let rec = fs::read_to_string(d.join("t.rec")).unwrap();
    assert_eq!(rec.lines().count(), 3);
}
