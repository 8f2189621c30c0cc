use std::path::Path;
use std::process::{Command, Output};

fn isoprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isoprune")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = isoprune(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const TINY: &str = "3 epochs, 0:0.01,2:0.001";

#[test]
fn pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let common = ["--synthetic", "200", "--seed", "3", "--out", out, "--jsv-samples", "4"];
    let with = |extra: &[&str]| -> Vec<String> {
        extra.iter().chain(common.iter()).map(|s| s.to_string()).collect()
    };
    let run = |extra: &[&str]| {
        let args = with(extra);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let stdout = run(&["train", "--arch", "MLP7_RELU", "--lr-schedule", TINY]);
    assert!(stdout.contains("test accuracy"), "{stdout}");
    let model = dir.path().join("model.ckpt");
    assert!(model.exists());
    assert_eq!(header(&dir.path().join("train_log.csv")), isoprune::harness::RUN_LOG_HEADER);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);

    let model = model.to_str().unwrap().to_string();
    run(&["prune", "--checkpoint", &model, "--ratio", "0.5"]);
    assert!(dir.path().join("pruned.ckpt").exists());
    let plan = std::fs::read_to_string(dir.path().join("plan.txt")).unwrap();
    assert_eq!(plan.lines().count(), 6);
    assert_eq!(header(&dir.path().join("prune_jsv.csv")), "stage,mean,std,max,min,K,samples");

    let pruned = dir.path().join("pruned.ckpt").to_str().unwrap().to_string();
    let stdout = run(&["orthp", "--checkpoint", &pruned]);
    assert!(stdout.contains("after"), "{stdout}");

    let stdout = run(&["jsv", "--checkpoint", &pruned]);
    assert!(stdout.contains("JSV mean"), "{stdout}");

    run(&["finetune", "--checkpoint", &pruned, "--orthp", "--lr-schedule", TINY]);
    assert_eq!(header(&dir.path().join("finetune_log.csv")), isoprune::harness::RUN_LOG_HEADER);

    let stdout = run(&["sweep", "--checkpoint", &model, "--ratio", "0,0.5"]);
    assert_eq!(stdout.lines().count(), 3, "{stdout}");
}

#[test]
fn hypotheses_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        format!(
            "arch = MLP7_LINEAR\nsynthetic = 120\nrepeat = 1\npretrain_schedule = 2 epochs, 0:0.01\nout = {}\n",
            dir.path().display()
        ),
    )
    .unwrap();
    // Finetuning cells use the fixed 90-epoch schedules; keep the data tiny.
    let stdout = ok(&["hypotheses", "--config", cfg.to_str().unwrap(), "--batch-size", "60"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], isoprune::harness::HYPOTHESES_HEADER);
    assert_eq!(lines.len(), 4, "{stdout}");
    assert!(lines[3].starts_with("Scratch,"));
    let runs = std::fs::read_to_string(dir.path().join("hypotheses_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 5);
}

#[test]
fn errors_are_reported() {
    let out = isoprune(&["train", "--synthetic", "50", "--lr-schedule", "90 epochs, 30:0.01"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("first breakpoint must be epoch 0"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let out = isoprune(&["jsv", "--synthetic", "50", "--checkpoint", bogus.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    let out = isoprune(&["train", "--arch", "RESNET"]);
    assert!(!out.status.success());
}
