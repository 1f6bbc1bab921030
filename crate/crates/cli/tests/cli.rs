use std::io::Write;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use p300_core::acquisition::{load_model, load_record};
use p300_core::EvaluationReport;

const BIN: &str = env!("CARGO_BIN_EXE_p300");

fn p300(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn p300")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = p300(dir, args);
    assert!(
        out.status.success(),
        "p300 {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn free_port() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

fn read_report(path: &Path) -> EvaluationReport {
    EvaluationReport::from_toml(&std::fs::read_to_string(path).unwrap())
        .unwrap()
        .without_wall_clock()
}

/// Short protocol so end-to-end runs stay quick.
const QUICK: &[&str] = &["--repetitions", "1", "--runs-per-session", "2", "--seed", "11"];

#[test]
fn simulate_prints_durations_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["simulate", "--out", "a.eegs", "--events", "a.tsv"]);
    assert!(out.contains("d_scenario  317.200 s"), "{out}");
    assert!(out.contains("events      864 (72 targets)"));
    ok(dir.path(), &["simulate", "--out", "b.eegs"]);
    let a = std::fs::read(dir.path().join("a.eegs")).unwrap();
    let b = std::fs::read(dir.path().join("b.eegs")).unwrap();
    assert_eq!(a, b);
    let record = load_record(dir.path().join("a.eegs")).unwrap();
    assert_eq!(record.markers().len(), 864);
    let meta = std::fs::read_to_string(dir.path().join("a.eegs.meta.toml")).unwrap();
    assert!(meta.contains("seed = 2016"));
    let table = std::fs::read_to_string(dir.path().join("a.tsv")).unwrap();
    assert_eq!(table.lines().count(), 865);

    ok(dir.path(), &["simulate", "--out", "c.eegs", "--seed", "3"]);
    assert_ne!(std::fs::read(dir.path().join("c.eegs")).unwrap(), a);
}

#[test]
fn train_inspect_and_select() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--out", "r.eegs"]);
    let out = ok(
        dir.path(),
        &[
            "train",
            "--record",
            "r.eegs",
            "--model",
            "m.toml",
            "--features-csv",
            "f.csv",
        ],
    );
    assert!(out.contains("feature size    845"), "{out}");
    assert!(out.contains("CV AUC"));
    let model = load_model(dir.path().join("m.toml")).unwrap();
    assert_eq!(model.lda.weights.len(), 845);
    assert_eq!(model.meta.as_ref().unwrap()["seed"].as_integer(), Some(2016));
    let csv = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert_eq!(csv.lines().count(), 865);

    // Same inputs and seed give the same model file.
    ok(
        dir.path(),
        &["train", "--record", "r.eegs", "--model", "m2.toml", "--cv-folds", "0"],
    );
    assert_eq!(
        std::fs::read(dir.path().join("m.toml")).unwrap(),
        std::fs::read(dir.path().join("m2.toml")).unwrap()
    );

    let summary = ok(dir.path(), &["inspect", "m.toml"]);
    assert!(summary.contains("LDA: 845 weights"));
    let summary = ok(dir.path(), &["inspect", "r.eegs", "--events"]);
    assert!(summary.contains("markers: 864 (72 targets, 0 unlabeled)"));

    let sel = ok(
        dir.path(),
        &[
            "select",
            "--model",
            "m.toml",
            "--target",
            "3",
            "--online-offset",
            "0",
            "--p300-amp",
            "30",
        ],
    );
    assert!(sel.contains("latency       11.2 s"), "{sel}");
    assert!(sel.contains("message       Get my chauffeur prepare my car"), "{sel}");
}

#[test]
fn evaluate_report_rows_add_up() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["evaluate", "--report", "r.toml"];
    args.extend_from_slice(QUICK);
    let out = ok(dir.path(), &args);
    assert!(out.contains("phase 2:"));
    let report = read_report(&dir.path().join("r.toml"));
    assert_eq!(report.seed, 11);
    for phase in [&report.phase1, &report.phase2] {
        assert_eq!(phase.objects.len(), 12);
        assert_eq!(phase.total, 12);
        assert_eq!(phase.objects.iter().map(|o| o.correct).sum::<usize>(), phase.correct);
        assert_eq!(phase.objects.iter().map(|o| o.attempts).sum::<usize>(), phase.total);
    }
    let printed = ok(dir.path(), &["inspect", "r.toml"]);
    assert!(printed.contains("seed 11"));
}

fn loopback(dir: &Path, report: &str, extra_serve: &[&str]) {
    let addr = free_port();
    let mut serve_args = vec!["stream", "serve", "--listen", &addr];
    serve_args.extend_from_slice(extra_serve);
    serve_args.extend_from_slice(QUICK);
    let mut server = Command::new(BIN)
        .current_dir(dir)
        .args(&serve_args)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut connect_args = vec!["stream", "connect", "--connect", &addr, "--report", report];
    connect_args.extend_from_slice(QUICK);
    let out = p300(dir, &connect_args);
    let served = server.wait().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(served.success());
}

#[test]
fn loopback_stream_reproduces_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["evaluate", "--report", "direct.toml"];
    args.extend_from_slice(QUICK);
    ok(dir.path(), &args);
    loopback(dir.path(), "streamed.toml", &[]);
    loopback(dir.path(), "paced.toml", &["--speed", "100"]);
    let direct = read_report(&dir.path().join("direct.toml"));
    assert_eq!(read_report(&dir.path().join("streamed.toml")), direct);
    assert_eq!(read_report(&dir.path().join("paced.toml")), direct);
}

#[test]
fn malformed_stream_exits_with_protocol_code() {
    let dir = tempfile::tempdir().unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let feeder = std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let _ = s.write_all(b"EEGX\x00\x04\x00\x00\x00garbage");
    });
    let out = p300(dir.path(), &["stream", "connect", "--connect", &addr]);
    feeder.join().unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(p300(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        p300(dir.path(), &["evaluate", "--repetitions", "0"]).status.code(),
        Some(1)
    );
    assert_eq!(
        p300(dir.path(), &["train", "--record", "missing.eegs", "--model", "m.toml"])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(dir.path().join("junk.toml"), "x = 1").unwrap();
    assert_eq!(p300(dir.path(), &["inspect", "junk.toml"]).status.code(), Some(2));
    assert_eq!(p300(dir.path(), &["--help"]).status.code(), Some(0));

    // Noiseless data with no shrinkage leaves a singular scatter matrix.
    ok(
        dir.path(),
        &[
            "simulate",
            "--out",
            "flat.eegs",
            "--background-rms",
            "0",
            "--alpha-amp",
            "0",
            "--blink-amp",
            "0",
            "--blink-rate",
            "0",
            "--nan-fraction",
            "0",
        ],
    );
    let out = p300(
        dir.path(),
        &[
            "train",
            "--record",
            "flat.eegs",
            "--model",
            "m.toml",
            "--shrinkage",
            "0",
            "--cv-folds",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 7\n[subject]\np300_amp = 3.5\n[pipeline]\nica_enabled = true\n",
    )
    .unwrap();
    let out = ok(
        dir.path(),
        &["config", "--config", "run.toml", "--seed", "9", "--no-ica"],
    );
    let cfg: p300_core::EvaluationConfig = toml::from_str(&out).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.subject.p300_amp, 3.5);
    assert!(!cfg.pipeline.ica_enabled);
    assert_eq!(cfg.n_trials, 3);

    std::fs::write(dir.path().join("bad.toml"), "seed = \"x\"").unwrap();
    assert_eq!(
        p300(dir.path(), &["config", "--config", "bad.toml"]).status.code(),
        Some(1)
    );
}
