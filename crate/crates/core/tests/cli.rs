use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
# two tiny domains
[synthetic]
num_domains = 2
windows_per_class = 8
window_len = 16

[model]
kernel_width = 3
channels_block1 = 4
channels_block2 = 8

[train]
max_epochs = 2
batch_per_domain = 4
";

fn sdmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdmix")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.ini");
    fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sdmix(&args)
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn smoke_run_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run("run", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for target in [0, 1] {
        let d = out.join(format!("sdmix_full_seed0_target{target}"));
        for f in ["config.ini", "history.csv", "metrics.csv", "confusion.csv", "report.txt", "checkpoint.bin"] {
            assert!(d.join(f).is_file(), "{target}/{f}");
        }
        assert_eq!(rows(&d.join("history.csv")).len(), 2);
    }
    assert!(out.join("summary.csv").is_file());
    assert!(out.join("runs.csv").is_file());
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let cfg = write_config(dir.path(), "[train]\nalpha = banana\n");
    let o = run("run", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));

    let cfg = write_config(dir.path(), "[train]\nalpah = 0.2\n");
    let o = run("run", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.alpah"));

    let cfg = write_config(dir.path(), "[data]\nsource = csv\nfiles = missing0.csv, missing1.csv\n");
    assert_eq!(run("run", &cfg, &out, &[]).status.code(), Some(2));

    assert_eq!(sdmix(&["run", "--config", "/nonexistent/exp.ini"]).status.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("run", &cfg, &a, &[]).status.success());
    assert!(run("run", &cfg, &b, &[]).status.success());
    let rel = Path::new("sdmix_full_seed0_target1");
    for f in ["metrics.csv", "confusion.csv", "history.csv", "checkpoint.bin", "config.ini"] {
        assert_eq!(fs::read(a.join(rel).join(f)).unwrap(), fs::read(b.join(rel).join(f)).unwrap(), "{f}");
    }

    // The echoed per-run config reproduces the run.
    let c = dir.path().join("c");
    let echo = a.join(rel).join("config.ini");
    assert!(run("run", &echo, &c, &[]).status.success());
    assert_eq!(
        fs::read(a.join(rel).join("metrics.csv")).unwrap(),
        fs::read(c.join(rel).join("metrics.csv")).unwrap()
    );
}

#[test]
fn ablation_grid_summary_averages_runs() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{SMALL}algorithms = vanilla_mixup, sdmix_semantic_only, sdmix_margin_only, sdmix_full\nseeds = 0, 1, 2\n\n[data]\ntargets = 1\n"
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = run("run", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().join("report.txt").is_file())
        .count();
    assert_eq!(reports, 12);

    let runs = rows(&out.join("runs.csv"));
    assert_eq!(runs.len(), 12);
    let summary = rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), 4);
    for s in &summary {
        let mine: Vec<f64> = runs.iter().filter(|r| r[0] == s[0]).map(|r| r[3].parse().unwrap()).collect();
        assert_eq!(mine.len(), 3);
        assert_eq!(s[1], "3");
        let mean = mine.iter().sum::<f64>() / 3.0;
        let reported: f64 = s[2].parse().unwrap();
        assert!((reported - mean).abs() < 1e-12, "{}: {reported} vs {mean}", s[0]);
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}seeds = 0, 1\n"));
    let out = dir.path().join("out");
    assert!(run("run", &cfg, &out, &["--seed", "7"]).status.success());
    assert!(out.join("sdmix_full_seed7_target0").is_dir());
    assert!(!out.join("sdmix_full_seed0_target0").exists());
}

#[test]
fn toy_grid_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[toy]\nsamples_per_class = 30\nmax_epochs = 2\ngrid_w = 7\ngrid_h = 5\n",
    );
    let out = dir.path().join("out");
    let o = run("toy", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for alg in ["vanilla_mixup", "sdmix_semantic_only", "sdmix_full"] {
        let grid = rows(&out.join(format!("{alg}_seed0_grid.csv")));
        assert_eq!(grid.len(), 35);
        assert!(grid.iter().all(|r| r[2] == "0" || r[2] == "1"));
    }
    assert_eq!(rows(&out.join("toy_summary.csv")).len(), 3);
}

#[test]
fn generated_csvs_train_without_being_modified() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let data = dir.path().join("data");
    let o = run("gen-synth", &cfg, &data, &["--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = [data.join("domain0.csv"), data.join("domain1.csv")];
    let before: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();

    let out = dir.path().join("out");
    let o = run("run", &data.join("config.ini"), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sdmix_full_seed0_target1").join("metrics.csv").is_file());
    let after: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn sweep_selects_one_point_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{SMALL}max_epochs = 1\nalgorithms = vanilla_mixup, sdmix_full\nalpha_grid = 0.2, 1\ntop_c_grid = 1\ngamma_grid = 10, 100\n\n[data]\ntargets = 0\n"
    );
    let body = body.replacen("max_epochs = 2\n", "", 1);
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let o = run("sweep", &cfg, &out, &["--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = rows(&out.join("sweep.csv"));
    // Vanilla ignores the margin grid.
    assert_eq!(table.len(), 2 + 4);
    for alg in ["vanilla_mixup", "sdmix_full"] {
        let picked = table.iter().filter(|r| r[0] == alg && r[6] == "true").count();
        assert_eq!(picked, 1, "{alg}");
    }
}
