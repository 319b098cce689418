use std::fs;
use std::path::Path;
use std::process::Command;

fn segrefine(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_segrefine"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "segrefine {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CONFIG: &str = r#"
schema_version = 1
data_dir = "data"
run_dir = "runs"
folds = 2
seed = 3
arms = ["baseline", "discrepancy-diff"]

[baseline.model]
levels = 2
base_width = 2

[baseline.train]
epochs = 1

[diffusion.model]
levels = 2
base_width = 2
time_features = 4
time_dim = 4
sample_steps = 2

[diffusion.train]
epochs = 1
"#;

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let config = root.join("study.toml");
    fs::write(&config, CONFIG).unwrap();

    segrefine(&["gen-data", "--out", p(&data), "--cases", "4", "--dims", "32,32,32", "--seed", "1"]);
    assert!(data.join("case_0003/image.nii").is_file());

    let base = root.join("ckpt/baseline.json");
    segrefine(&["train-baseline", "--data", p(&data), "--out", p(&base), "--config", p(&config), "--seed", "2"]);
    let den = root.join("ckpt/denoiser.json");
    segrefine(&[
        "train-diffusion", "--data", p(&data), "--baseline", p(&base), "--variant", "concat", "--target",
        "discrepancy", "--out", p(&den), "--config", p(&config),
    ]);

    let case = data.join("case_0000");
    let preds = root.join("preds/case_0000");
    let deltas = root.join("deltas/case_0000");
    segrefine(&["predict", "--model", p(&base), "--case", p(&case), "--out", p(&preds)]);
    segrefine(&[
        "sample", "--model", p(&den), "--baseline", p(&base), "--case", p(&case), "--steps", "2", "--seed", "4",
        "--out", p(&deltas),
    ]);
    assert!(deltas.join("delta.nii").is_file());
    let refined = root.join("refined");
    segrefine(&[
        "refine", "--baseline-pred", p(&root.join("preds")), "--delta", p(&root.join("deltas")), "--out",
        p(&refined),
    ]);
    assert!(refined.join("case_0000/mask.nii").is_file());

    let scores = root.join("scores.csv");
    segrefine(&["evaluate", "--pred", p(&refined), "--gt", p(&data), "--spacing", "1,1,1", "--out", p(&scores)]);
    let text = fs::read_to_string(&scores).unwrap();
    assert!(text.starts_with("case_id,region,dice,hd95,sentinel_flag\ncase_0000,WT,"));
    assert!(text.contains("# summary,cases=1"));

    segrefine(&["crossval", "--config", p(&config)]);
    for dir in ["runs/baseline/fold2", "runs/discrepancy-diff/fold1"] {
        for item in ["checkpoints", "preds", "scores.csv", "config.snapshot"] {
            assert!(root.join(dir).join(item).exists(), "{dir}/{item}");
        }
    }
    let md = segrefine(&["report", "--runs", p(&root.join("runs")), "--format", "md"]);
    assert!(md.contains("| fold2 | discrepancy-diff |"));
    let csv = segrefine(&["report", "--runs", p(&root.join("runs/baseline")), p(&root.join("runs/discrepancy-diff")), "--format", "csv"]);
    assert!(csv.starts_with("section,fold,arm,"));
}

#[test]
fn bad_input_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_segrefine"))
        .args(["report", "--runs", "/nonexistent", "--format", "md"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_segrefine"))
        .args(["gen-data", "--out", "x", "--cases", "1", "--dims", "3,3"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("three"));
}
