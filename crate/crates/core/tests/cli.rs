use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmamba"))
        .args(args)
        .env_remove("STMAMBA_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &["--h", "6", "--z", "3", "--d_f", "2", "--d_a", "2", "--n_state", "2", "--d_conv", "2"];

#[test]
fn help_lists_keys_with_defaults() {
    let o = run(&["train", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for needle in ["--d_f", "[default: 24]", "--n_state", "[default: 64]", "--patience", "[default: 30]", "--lr"] {
        assert!(text.contains(needle), "missing {needle}");
    }
}

#[test]
fn configuration_errors_exit_one_and_name_the_key() {
    let o = run(&["train", "--d_f", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("d_f"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "batch = 8\nwarp_factor = 9\n").unwrap();
    let o = run(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("warp_factor"));

    let o = run(&["train", "--no_such_flag", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_then_command_line_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# bench sweep\nbench_reps = 7\nseed = 4\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "synth", "--config", s(&cfg), "--seed", "9", "--data_dir", s(&out), "--synth_days", "2", "--synth_sensors", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("bench_reps = 7\n"));
    assert!(text.contains("seed = 9\n"));
    assert!(text.contains("d_f = 24\n"));
}

#[test]
fn eval_without_checkpoint_exits_one_and_missing_data_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--data_dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint"));
    let o = run(&["train", "--data_dir", s(&dir.path().join("absent"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn synth_train_eval_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let o = run(&["synth", "--data_dir", s(&data), "--synth_sensors", "3", "--synth_days", "3", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut args = vec!["train", "--data_dir", s(&data), "--out_dir", s(&out), "--max_steps", "10"];
    args.extend_from_slice(TINY);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("model.ckpt");
    assert!(ckpt.exists());
    let history = fs::read_to_string(out.join("history.tsv")).unwrap();
    assert!(history.lines().count() >= 2);

    let o = run(&["eval", "--data_dir", s(&data), "--out_dir", s(&out), "--checkpoint", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("eval_metrics.tsv")).unwrap();
    assert!(report.contains("mae"));

    let o = run(&[
        "predict", "--data_dir", s(&data), "--out_dir", s(&out), "--checkpoint", s(&ckpt), "--window_index", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let forecast = out.join("forecast");
    let bin = fs::read(forecast.join("data.bin")).unwrap();
    assert_eq!(bin.len(), 3 * 3 * 4);
    let meta = fs::read_to_string(forecast.join("meta.json")).unwrap();
    assert!(meta.contains("\"T\": 3"));
    assert!(forecast.join("metrics.tsv").exists());

    let o = run(&[
        "predict", "--data_dir", s(&data), "--out_dir", s(&out), "--checkpoint", s(&ckpt), "--window_index", "100000",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["eval", "--data_dir", s(&data), "--checkpoint", s(&dir.path().join("nope.ckpt"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn convert_reads_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flow.csv");
    let mut body = String::from("s0,s1\n");
    for i in 0..600 {
        body.push_str(&format!("{},{}\n", i % 50, 100 + i % 7));
    }
    fs::write(&csv, body).unwrap();
    let data = dir.path().join("data");
    let o = run(&["convert", "--csv", s(&csv), "--data_dir", s(&data), "--n_sensors", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(data.join("data.bin")).unwrap().len(), 600 * 2 * 4);
}

#[test]
fn gradcheck_and_bench_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gradcheck", "--gradcheck_seeds", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("end_to_end"));
    let o = run(&[
        "bench", "--out_dir", s(dir.path()), "--bench_sweep", "16,32,64,128", "--bench_d_h", "8", "--bench_n_state", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["bench.tsv", "flops.tsv", "plot_selective_scan.tsv", "plot_attention.tsv"] {
        assert!(dir.path().join("bench").join(f).exists(), "missing {f}");
    }
}
