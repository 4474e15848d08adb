use std::process::Command;

fn cotsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cotsim"))
}

#[test]
fn example1_prints_the_worked_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = cotsim().args(["example1", "--assert", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0.36"), "{text}");
    assert!(text.contains("0.56"), "{text}");
    assert!(text.contains("[PASS] example1"), "{text}");
    assert!(dir.path().join("example1.json").exists());
    assert!(dir.path().join("seeds.json").exists());
}

#[test]
fn gradcheck_writes_a_csv_with_the_documented_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.toml");
    std::fs::write(&cfg, "kind = \"gradcheck\"\n[gradcheck]\ninstances = 4\n").unwrap();
    let out = cotsim()
        .args(["gradcheck", "--threads", "1", "--assert", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "instance,dim,k,context_columns,grad_norm,rel_error"
    );
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn assert_flag_turns_failed_checks_into_exit_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.toml");
    std::fs::write(&cfg, "kind = \"gradcheck\"\n[gradcheck]\ninstances = 2\ntolerance = 1e-300\n").unwrap();
    let run = |assert: bool| {
        let mut c = cotsim();
        c.arg("run").arg(&cfg).arg("--out").arg(dir.path());
        if assert {
            c.arg("--assert");
        }
        c.output().unwrap()
    };
    let plain = run(false);
    assert!(plain.status.success());
    assert!(String::from_utf8_lossy(&plain.stdout).contains("[FAIL]"));
    assert_eq!(run(true).status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_reported_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kind = \"gradcheck\"\n[training]\netaa = 0.1\n").unwrap();
    let out = cotsim().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("etaa"), "{err}");
    assert!(err.contains("line 3") || err.contains("3:"), "{err}");
}

#[test]
fn sweep_subcommand_rejects_other_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.toml");
    std::fs::write(&cfg, "kind = \"example1\"\n").unwrap();
    let out = cotsim().arg("sweep").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cot_sweep"));
}

#[test]
fn train_writes_history_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(
        &cfg,
        "kind = \"train_dynamics\"\n[training]\niterations = 20\ncheckpoint_every = 10\nprobes = 12\n",
    )
    .unwrap();
    let out = cotsim()
        .arg("train")
        .arg(&cfg)
        .args(["--log-every", "5", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let hist = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let iters: Vec<&str> = hist.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters, ["0", "5", "10", "15", "20"]);
    for name in ["model.json", "model_000010.json", "model_000020.json", "summary.csv", "config.toml"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let written = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(written.contains("seed = 3"), "{written}");
}
