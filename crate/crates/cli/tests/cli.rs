use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn avfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avfuse"))
        .args(args)
        .env_remove("AVFUSE_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn snapshot_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots")
}

/// Compares against a stored snapshot; `UPDATE_SNAPSHOTS=1` rewrites it.
fn check_snapshot(name: &str, actual: &str) {
    let path = snapshot_dir().join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing snapshot {}; run with UPDATE_SNAPSHOTS=1", path.display()));
    assert_eq!(actual, expected, "snapshot {name} differs");
}

#[test]
fn help_snapshots() {
    let top = avfuse(&["--help"]);
    assert!(top.status.success());
    check_snapshot("help", &stdout(&top));
    for sub in ["synth", "train", "predict", "eval", "grid", "postprocess", "experiment", "report"] {
        let o = avfuse(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        check_snapshot(&format!("help-{sub}"), &stdout(&o));
    }
}

#[test]
fn exit_codes() {
    assert_eq!(avfuse(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(avfuse(&["eval", "--pred", "x.csv"]).status.code(), Some(1));
    assert_eq!(avfuse(&["--version"]).status.code(), Some(0));
    let missing = avfuse(&["eval", "--pred", "/nonexistent/p.csv", "--gold", "/nonexistent/g.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/p.csv"));

    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "dimension = \"arousal\"\nunknown_key = 1\n").unwrap();
    let o = avfuse(&["experiment", "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn nonconvergence_is_a_numerical_failure() {
    let dir = experiment_dir();
    let strict = format!("{CONFIG}\n[svr]\nmax_passes = 1\nfail_on_nonconvergence = true\n");
    let cfg = dir.path().join("strict.toml");
    fs::write(&cfg, strict).unwrap();
    let o = avfuse(&["experiment", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.csv");
    fs::write(&g, "frame,value\n0,0.1\n1,-0.4\n2,0.3\n3,0.9\n").unwrap();
    let o = avfuse(&["eval", "--pred", g.to_str().unwrap(), "--gold", g.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("ccc=1.000000 "), "{}", stdout(&o));
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = avfuse(&["synth", "--out", d.path().to_str().unwrap(), "--seed", "7",
            "--train-subjects", "2", "--dev-subjects", "1", "--frames", "120"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    // manifest, spec echo, then two feature files and two traces per subject
    assert_eq!(ta.len(), 2 + 3 * 2 + 3 * 2);
    assert_eq!(ta, tb);
}

const CONFIG: &str = r#"
name = "cli-early"
dimension = "valence"
seed = 2

[data]
manifest = "data/manifest.toml"

[fusion]
scheme = "early"
modalities = ["video-fc50", "audio-egemaps"]

[delay]
arousal = 0
valence = 0

[grid]
c_values = [0.01, 0.1]
epsilon_values = [0.1]
kernels = [{ type = "linear" }]
"#;

fn experiment_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = avfuse(&["synth", "--out", data.to_str().unwrap(), "--seed", "2",
        "--train-subjects", "2", "--dev-subjects", "2", "--frames", "250"]);
    assert!(o.status.success());
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn experiment_end_to_end() {
    let dir = experiment_dir();
    let cfg = dir.path().join("exp.toml");
    let out = dir.path().join("out");
    let o = avfuse(&["experiment", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("final_ccc="), "{text}");
    assert!(text.contains("video+audio") && text.contains("early"), "{text}");

    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    for prefix in ["config-", "report-", "frames-", "table-", "model-"] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix} in {names:?}");
    }
    // the echoed config reproduces the run
    let echoed = names.iter().find(|n| n.starts_with("config-")).unwrap();
    let records = names.iter().find(|n| n.starts_with("report-")).unwrap();
    let rep = avfuse(&["report", "--audit", out.join(records).to_str().unwrap()]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    assert!(stdout(&rep).contains("valence"));

    let out2 = dir.path().join("out2");
    let o2 = avfuse(&["experiment", "--config", out.join(echoed).to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert!(o2.status.success(), "{}", String::from_utf8_lossy(&o2.stderr));
    let strip = |p: &Path| -> String {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("time."))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&out.join(records)), strip(&out2.join(records)));
}

#[test]
fn output_root_from_environment() {
    let dir = experiment_dir();
    let root = dir.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_avfuse"))
        .args(["experiment", "--config", dir.path().join("exp.toml").to_str().unwrap(), "--scheme", "late"])
        .env("AVFUSE_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("scheme=late"));
    assert!(fs::read_dir(&root).unwrap().count() >= 5);
}
