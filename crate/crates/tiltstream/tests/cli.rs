use std::process::Command;

use tempfile::TempDir;

fn tiltstream(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tiltstream")).args(args).output().unwrap()
}

fn code(out: &std::process::Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn session_then_analyze_reproduces_the_trace() {
    let dir = TempDir::new().unwrap();
    let run = dir.path().join("run");
    let replay = dir.path().join("replay");
    let out =
        tiltstream(&["session", "--size", "32", "--preset", "NC-3", "--seed", "2", "--em-iterations", "2", "-o", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = tiltstream(&["analyze", run.to_str().unwrap(), "-o", replay.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(run.join("trace.csv")).unwrap(), std::fs::read(replay.join("trace.csv")).unwrap());

    let report = tiltstream(&["report", run.to_str().unwrap(), "--es-at", "5", "--iterations", "2"]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8(report.stdout).unwrap().contains("shape error"));

    let em = dir.path().join("em5.f32");
    let out = tiltstream(&["reconstruct", run.to_str().unwrap(), "--n", "5", "--iterations", "2", "-o", em.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::metadata(&em).unwrap().len(), 4 * 32 * 32 * 32);
}

#[test]
fn simulate_writes_a_loadable_series() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("sim");
    let out = tiltstream(&["simulate", "--size", "24", "--scheme", "is", "--increment", "10", "-o", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let series = tiltstream::io::load_tilt_series(&out_dir.join("series")).unwrap();
    assert_eq!(series.len(), 15);
    tiltstream::io::verify_manifest(&out_dir).unwrap();
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&tiltstream(&["simulate", "--size", "4"])), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"x\"\n").unwrap();
    let out = tiltstream(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert_eq!(code(&tiltstream(&["analyze", dir.path().join("missing").to_str().unwrap()])), 3);
    // an empty reference makes the shape error undefined
    let run = dir.path().join("run");
    let out = tiltstream(&["simulate", "--size", "16", "--n", "4", "-o", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(run.join("reference.f32"), vec![0u8; 4 * 16 * 16 * 16]).unwrap();
    let out = tiltstream(&["report", run.to_str().unwrap(), "--es-at", "4", "--iterations", "1"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}
