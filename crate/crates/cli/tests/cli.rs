use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn xysync(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xysync"))
        .args(args)
        .current_dir(dir)
        .env_remove("XYSYNC_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn sync_check_reports_surviving_pair() {
    let tmp = TempDir::new().unwrap();
    let o = xysync(tmp.path(), &["sync-check", "--N", "5", "--sites", "3", "--out", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("stable synchronization: yes"), "{text}");
    assert!(text.contains("surviving pair: (2,4)"), "{text}");
    assert!(text.contains("frequency: 2"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("out/sync.json"))).unwrap();
    assert_eq!(json["satisfied"], true);
}

#[test]
fn modes_table_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let o = xysync(tmp.path(), &["modes", "--N", "5", "--sites", "3", "--out", "m"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = rows(&read(&tmp.path().join("m/modes.csv")));
    assert_eq!(table[0][..6], ["k", "l", "frequency", "degeneracy", "m", "m_exact"]);
    assert_eq!(table.len(), 1 + 10);
    let row = table.iter().find(|r| r[0] == "2" && r[1] == "4").unwrap();
    assert_eq!(row[4].parse::<f64>().unwrap(), 0.0);

    let manifest: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("m/manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "modes");
    assert_eq!(manifest["config"]["chain"]["n"], 5);
    let files = manifest["files"].as_array().unwrap();
    let modes = files.iter().find(|f| f["file"] == "modes.csv").unwrap();
    let bytes = std::fs::read(tmp.path().join("m/modes.csv")).unwrap();
    assert_eq!(modes["bytes"], bytes.len());
    assert_eq!(modes["sha256"].as_str().unwrap().len(), 64);
    assert!(chrono_like(manifest["timestamp"].as_str().unwrap()));
}

fn chrono_like(s: &str) -> bool {
    s.len() >= 20 && s.as_bytes()[4] == b'-' && s.contains('T')
}

#[test]
fn config_file_with_flag_override() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(
        tmp.path().join("run.toml"),
        "output_dir = \"from-file\"\n[chain]\nn = 5\n[noise]\ngamma = 0.2\nsites = [3]\n[time]\nt_max = 2.0\n",
    )
    .unwrap();
    let o = xysync(tmp.path(), &["evolve", "--config", "run.toml", "--dt", "0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = rows(&read(&tmp.path().join("from-file/magnetizations.csv")));
    assert_eq!(table[0], ["tau", "sz_1", "sz_2", "sz_3", "sz_4", "sz_5"]);
    assert_eq!(table.len(), 1 + 5);
    assert!((table[1][1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    // the echoed configuration reproduces the run
    let echo = read(&tmp.path().join("from-file/config.toml"));
    assert!(echo.contains("dt = 0.5"), "{echo}");
}

#[test]
fn output_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_xysync"))
        .args(["sync-check", "--N", "5", "--sites", "3"])
        .current_dir(tmp.path())
        .env("XYSYNC_OUTPUT_DIR", "envdir")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("envdir/sync.json").exists());
}

#[test]
fn engines_agree_with_diagnostics() {
    let tmp = TempDir::new().unwrap();
    let common = ["--N", "4", "--sites", "2,3", "--gamma", "0.2", "--t-max", "5", "--dt", "0.25"];
    let mut jw = vec!["evolve", "--out", "jw", "--diagnostics", "pearson:1-4", "--diagnostics", "concurrence:1-4"];
    jw.extend(common);
    let mut re = vec!["evolve", "--engine", "reference", "--out", "ref", "--diagnostics", "concurrence:1-4"];
    re.extend(common);
    for args in [jw, re] {
        let o = xysync(tmp.path(), &args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = rows(&read(&tmp.path().join("jw/magnetizations.csv")));
    let b = rows(&read(&tmp.path().join("ref/magnetizations.csv")));
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b).skip(1) {
        for (x, y) in ra.iter().zip(rb) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
    let ca = rows(&read(&tmp.path().join("jw/concurrence.csv")));
    let cb = rows(&read(&tmp.path().join("ref/concurrence.csv")));
    assert_eq!(ca[0], ["tau", "concurrence_1_4"]);
    for (ra, rb) in ca.iter().zip(&cb).skip(1) {
        let (x, y): (f64, f64) = (ra[1].parse().unwrap(), rb[1].parse().unwrap());
        assert!((x - y).abs() < 1e-8);
    }
    let p = rows(&read(&tmp.path().join("jw/pearson.csv")));
    assert_eq!(p[0], ["tau", "C_1_4"]);
    // incomplete leading windows are left empty
    assert_eq!(p[1][1], "");
}

#[test]
fn trajectory_ensemble_writes_stderr() {
    let tmp = TempDir::new().unwrap();
    let o = xysync(
        tmp.path(),
        &["traj", "--N", "3", "--sites", "2", "--gamma", "0.3", "--t-max", "1", "--n-traj", "8", "--traj-dt", "0.01", "--output-dt", "0.5", "--seed", "7", "--out", "t"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mean = rows(&read(&tmp.path().join("t/magnetizations.csv")));
    let err = rows(&read(&tmp.path().join("t/magnetizations_stderr.csv")));
    assert_eq!(mean.len(), 1 + 3);
    assert_eq!(err[0], ["tau", "stderr_1", "stderr_2", "stderr_3"]);

    let o = xysync(
        tmp.path(),
        &["traj", "--N", "3", "--sites", "2", "--gamma", "0.3", "--t-max", "1", "--n-traj", "8", "--traj-dt", "0.01", "--output-dt", "0.5", "--seed", "7", "--out", "t2"],
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read(&tmp.path().join("t/magnetizations.csv")), read(&tmp.path().join("t2/magnetizations.csv")));
}

#[test]
fn sweep_and_fit_from_table() {
    let tmp = TempDir::new().unwrap();
    let o = xysync(tmp.path(), &["sweep", "--ns", "5,8", "--sites", "3", "--points", "12", "--out", "s"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let opt = rows(&read(&tmp.path().join("s/optimum.csv")));
    assert_eq!(opt[0], ["N", "gamma_opt", "r_max", "unimodal", "interior_maxima"]);
    assert_eq!(opt.len(), 3);
    let sweep = rows(&read(&tmp.path().join("s/sweep.csv")));
    assert_eq!(sweep.len(), 1 + 2 * 12);

    std::fs::write(
        tmp.path().join("optimum.csv"),
        "N,gamma_opt,r_max\n8,0.4112,0.097649\n11,0.2915,0.030024\n14,0.2507,0.013248\n17,0.2299,0.007029\n20,0.2173,0.004182\n",
    )
    .unwrap();
    let o = xysync(tmp.path(), &["fit", "--input", "optimum.csv", "--out", "f"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fit: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("f/fit.json"))).unwrap();
    for key in ["a", "b", "c", "r_squared"] {
        assert!(fit[key].is_number(), "{key}");
    }
    assert!(fit["r_squared"].as_f64().unwrap() > 0.99);
}

#[test]
fn twoqubit_matches_reference() {
    let tmp = TempDir::new().unwrap();
    let o = xysync(tmp.path(), &["twoqubit", "--J", "0.5", "--Gamma", "0.4", "--t-max", "10", "--out", "q"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = rows(&read(&tmp.path().join("q/twoqubit.csv")));
    assert_eq!(table[0], ["t", "sz_1", "sz_2", "sz_1_reference", "sz_2_reference"]);
    for r in &table[1..] {
        let v: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[1] - v[3]).abs() < 1e-8 && (v[2] - v[4]).abs() < 1e-8, "{r:?}");
    }
    assert!(stdout(&o).contains("underdamped"));
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    // invalid value
    let o = xysync(tmp.path(), &["modes", "--N", "5", "--sites", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise.sites"), "{}", stderr(&o));
    // unknown flag
    assert_eq!(xysync(tmp.path(), &["modes", "--colour", "red"]).status.code(), Some(2));
    // unknown config key
    std::fs::write(tmp.path().join("bad.toml"), "[chain]\nn = 5\nlength = 2\n").unwrap();
    let o = xysync(tmp.path(), &["modes", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("length"), "{}", stderr(&o));
    // reference engine beyond its cap
    let o = xysync(tmp.path(), &["evolve", "--engine", "reference", "--N", "9", "--sites", "3", "--t-max", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    // independent channels are not modelled by the averaged engine
    let o = xysync(tmp.path(), &["evolve", "--N", "4", "--sites", "2,3", "--channels", "independent", "--t-max", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!tmp.path().join("xysync-out/magnetizations.csv").exists());
}
