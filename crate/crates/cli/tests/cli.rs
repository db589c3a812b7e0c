use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lesionseg::data;

const TINY: &str = "schema = lesionseg-config/1
seed = 3
data.train_cases = 2
data.val_cases = 1
data.test_cases = 2
data.extents = 8 20 20
data.lesions_max = 1
data.radius_min_mm = 3
data.radius_max_mm = 3.5
model.input_extents = 8 16 16
model.base_channels = 2
model.text_dim = 8
refiner.hidden = 8
refiner.heads = 2
schedule.total_epochs = 6
schedule.steps_per_epoch = 2
schedule.transfer_start = 2
schedule.refine_start = 4
schedule.warmup_epochs = 1
schedule.ramp_epochs = 1
ablate.seeds = 1
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesionseg"))
        .args(args)
        .env("LESIONSEG_LOG", "warn")
        .output()
        .expect("spawn binary")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("cfg.txt"), config).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, p: &str) -> String {
        self.root.join(p).display().to_string()
    }

    fn gen_data(&self) -> String {
        ok(&["gen-data", "--config", &self.path("cfg.txt"), "--out", &self.path("data")])
    }
}

#[test]
fn gen_data_is_deterministic_and_prints_the_manifest() {
    let ws = Workspace::new(TINY);
    let first = ws.gen_data();
    assert_eq!(first.lines().count(), 6);
    assert!(first.starts_with("case_id,split,lesion_count\n"));
    let again = ok(&["gen-data", "--config", &ws.path("cfg.txt"), "--out", &ws.path("data2")]);
    assert_eq!(first, again);
    for id in ["case_0000", "case_0004"] {
        for f in ["header.txt", "t2w.bin", "adc.bin", "dwi.bin", "mask.bin"] {
            let a = fs::read(ws.root.join("data/cases").join(id).join(f)).unwrap();
            let b = fs::read(ws.root.join("data2/cases").join(id).join(f)).unwrap();
            assert_eq!(a, b, "{id}/{f}");
        }
    }
    assert!(ws.root.join("data/config.txt").exists());
}

#[test]
fn invalid_config_exits_nonzero() {
    let ws = Workspace::new(&TINY.replace("model.base_channels = 2", "model.base_channels = 0"));
    let out = run(&["gen-data", "--config", &ws.path("cfg.txt"), "--out", &ws.path("data")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("base_channels"));

    let ws = Workspace::new(&format!("{TINY}model.depth = 3\n"));
    assert!(!run(&["config", "--config", &ws.path("cfg.txt")]).status.success());
}

#[test]
fn config_prints_the_resolved_document() {
    let ws = Workspace::new(TINY);
    let text = ok(&["config", "--config", &ws.path("cfg.txt")]);
    let back = lesionseg::config::RunConfig::from_canonical(&text).unwrap();
    assert_eq!(back.seed, 3);
    assert_eq!(back.to_canonical(), text);
}

fn train_dice(stdout: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("final training Dice "))
        .expect("dice line")
        .parse()
        .unwrap()
}

#[test]
fn train_then_eval_reproduces_training_dice() {
    let ws = Workspace::new(TINY);
    ws.gen_data();
    let stdout = ok(&[
        "train", "--config", &ws.path("cfg.txt"), "--data", &ws.path("data"), "--out", &ws.path("run"),
    ]);
    let logged = train_dice(&stdout);
    for label in ["phase1", "phase2", "final"] {
        assert!(ws.root.join(format!("run/checkpoints/{label}.ckpt")).exists(), "{label}");
    }
    for f in ["config.txt", "epoch_log.csv", "train_cases.csv", "train_report.json"] {
        assert!(ws.root.join("run").join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(ws.root.join("run/epoch_log.csv")).unwrap().lines().count(), 7);

    let json = ok(&[
        "eval",
        "--checkpoint",
        &ws.path("run/checkpoints/final.ckpt"),
        "--data",
        &ws.path("data"),
        "--split",
        "train",
        "--json",
    ]);
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    let cases = report["cases"].as_array().expect("cases array");
    let mean: f64 = cases.iter().map(|c| c["dice"].as_f64().unwrap()).sum::<f64>() / cases.len() as f64;
    assert!((mean - logged).abs() <= 1e-6, "eval {mean} vs logged {logged}");
}

#[test]
fn seg_only_writes_a_single_checkpoint() {
    let ws = Workspace::new(TINY);
    ws.gen_data();
    ok(&[
        "train", "--config", &ws.path("cfg.txt"), "--data", &ws.path("data"), "--out", &ws.path("run"),
        "--phases", "seg-only",
    ]);
    let names: Vec<_> = fs::read_dir(ws.root.join("run/checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, vec!["final.ckpt"]);
    let log = fs::read_to_string(ws.root.join("run/epoch_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().skip(1).all(|l| l.split(',').nth(1) == Some("seg-only")));
}

#[test]
fn diverging_training_exits_nonzero_with_a_dump() {
    let ws = Workspace::new(&format!("{TINY}optim.lr = 1e300\noptim.grad_clip = 0\n"));
    ws.gen_data();
    let out = run(&["train", "--config", &ws.path("cfg.txt"), "--data", &ws.path("data"), "--out", &ws.path("run")]);
    assert!(!out.status.success());
    let dump = fs::read_to_string(ws.root.join("run/failure.txt")).unwrap();
    assert!(dump.contains("non-finite"), "{dump}");
    assert!(dump.contains("schema = "));
}

#[test]
fn eval_exports_heatmaps_in_case_format() {
    let ws = Workspace::new(&TINY.replace("schedule.total_epochs = 6", "schedule.total_epochs = 5"));
    ws.gen_data();
    ok(&["train", "--config", &ws.path("cfg.txt"), "--data", &ws.path("data"), "--out", &ws.path("run")]);
    let table = ok(&[
        "eval",
        "--checkpoint",
        &ws.path("run/checkpoints/final.ckpt"),
        "--data",
        &ws.path("data"),
        "--out",
        &ws.path("ev"),
        "--export-heatmap",
    ]);
    assert!(table.contains("test"));
    for f in ["config.txt", "cases.csv", "report.json", "report.md"] {
        assert!(ws.root.join("ev").join(f).exists(), "{f}");
    }
    let exported = data::load_case(&data::case_dir(&ws.root.join("ev/heatmaps"), "case_0003")).unwrap();
    let names: Vec<_> = exported.volume.channels.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["heatmap", "probability"]);
    let source = data::load_case(&data::case_dir(&ws.root.join("data"), "case_0003")).unwrap();
    assert_eq!(exported.volume.extents, source.volume.extents);
    let lo = 1.0 / (1.0 + 1f64.exp());
    assert!(exported.volume.channels[0].data.iter().all(|&v| v >= lo - 1e-6 && v <= 1.0 - lo + 1e-6));
}

#[test]
fn missing_checkpoint_exits_nonzero() {
    let ws = Workspace::new(TINY);
    ws.gen_data();
    let out = run(&["eval", "--checkpoint", &ws.path("nope.ckpt"), "--data", &ws.path("data")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
}

#[test]
fn invariant_audit_passes() {
    let stdout = ok(&["audit", "--what", "invariants"]);
    assert!(stdout.contains("checks passed"));
}

#[test]
fn gradient_audit_passes_with_few_trials() {
    let stdout = ok(&["audit", "--what", "gradients", "--trials", "5"]);
    assert!(stdout.contains("checks passed"));
}

#[test]
fn ablate_writes_five_rows() {
    let ws = Workspace::new(&TINY.replace("schedule.total_epochs = 6", "schedule.total_epochs = 5"));
    ws.gen_data();
    let table = ok(&["ablate", "--config", &ws.path("cfg.txt"), "--data", &ws.path("data"), "--out", &ws.path("ab")]);
    let md = fs::read_to_string(ws.root.join("ab/ablation.md")).unwrap();
    assert_eq!(table, md);
    let rows = md.lines().filter(|l| l.starts_with('|')).count();
    assert_eq!(rows, 2 + 5, "{md}");
    let csvs = fs::read_dir(ws.root.join("ab"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 5);
    assert!(Path::new(&ws.path("ab/config.txt")).exists());
}

#[test]
fn unknown_ablation_variant_is_rejected() {
    let ws = Workspace::new(TINY);
    ws.gen_data();
    let out = run(&[
        "ablate", "--config", &ws.path("cfg.txt"), "--data", &ws.path("data"), "--out", &ws.path("ab"),
        "--variants", "nope",
    ]);
    assert!(!out.status.success());
}
