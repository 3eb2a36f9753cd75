use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use rafe_cli::pipeline::{load_set, set_diversity};
use rafe_cli::report::{read_metrics, write_report};
use rafe_cli::{run_pipeline, ExperimentConfig, Pipeline, StageId};

fn smoke() -> ExperimentConfig {
    ExperimentConfig::preset("smoke").unwrap()
}

/// Relative path -> bytes of every file under `root`, skipping `logs/`.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if rel == "logs" {
                continue;
            }
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let s = run_pipeline(&cfg, a.path()).unwrap();
    assert_eq!(s.executed.len(), StageId::ALL.len());
    run_pipeline(&cfg, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 20);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs");
    }
    assert!(a.path().join("logs/train.csv").exists());

    // A different seed changes the artifacts.
    let c = tempfile::tempdir().unwrap();
    run_pipeline(&ExperimentConfig { seed: 1, ..cfg }, c.path()).unwrap();
    assert_ne!(tree(c.path())["synth/train/000.raff"], ta["synth/train/000.raff"]);
}

#[test]
fn downstream_change_reuses_upstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    run_pipeline(&cfg, dir.path()).unwrap();
    let stamp = |s: &str| std::fs::metadata(dir.path().join(s).join(".stamp")).unwrap().modified().unwrap();
    let before: Vec<_> = ["synth", "degrade", "restore-2d", "fit-coarse", "perframe", "train"]
        .iter()
        .map(|s| stamp(s))
        .collect();
    let again = run_pipeline(&cfg, dir.path()).unwrap();
    assert!(again.executed.is_empty());

    let mut changed = cfg.clone();
    changed.eval.samples = 2;
    let s = run_pipeline(&changed, dir.path()).unwrap();
    assert_eq!(s.executed, vec!["render", "eval", "report"]);
    let after: Vec<_> = ["synth", "degrade", "restore-2d", "fit-coarse", "perframe", "train"]
        .iter()
        .map(|s| stamp(s))
        .collect();
    assert_eq!(before, after);

    let mut restored = changed.clone();
    restored.restore.amplitude = 0.5;
    let s = run_pipeline(&restored, dir.path()).unwrap();
    assert_eq!(s.cached, vec!["synth", "degrade", "fit-coarse"]);
}

#[test]
fn report_matches_emitted_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    run_pipeline(&cfg, dir.path()).unwrap();
    let r = write_report(dir.path()).unwrap();
    assert!(r.missing.is_empty(), "{:?}", r.missing);
    assert_eq!(r.samples, 3);
    // clean | degraded | restored | perframe | z0 z1 z2
    let strip = rafe_cli::io::load_image(&r.strips[0]).unwrap();
    assert_eq!(strip.width, 7 * cfg.rig.width);
    assert_eq!(r.strips.len(), cfg.rig.test);

    let sets: Vec<_> = (0..3)
        .map(|j| load_set(&dir.path().join(format!("render/rafe/z{j}")), "test").unwrap().images)
        .collect();
    let metrics = read_metrics(&dir.path().join("eval/metrics.csv")).unwrap();
    let row = &metrics[&("two_primitives".to_string(), "smoke".to_string())];
    assert_eq!(row["rafe.diversity"], set_diversity(&sets).unwrap());
    for m in ["degraded", "restored_2d", "coarse", "perframe", "rafe"] {
        assert!(row.contains_key(&format!("{m}.psnr")), "{m}");
    }
    assert!(r.markdown.contains("| rafe |"));
}

#[test]
fn empty_directory_reports_no_data() {
    let dir = tempfile::tempdir().unwrap();
    let r = write_report(dir.path()).unwrap();
    assert!(r.markdown.contains("no data"));
    assert!(!r.missing.is_empty());
    assert!(dir.path().join("report/report.md").exists());
}

#[test]
fn stage_failure_names_the_stage_and_keeps_partial_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    // Restoration needs patches no larger than the views.
    cfg.train.patch_size = 32;
    cfg.train.discriminator.mbstd_group = 2;
    let mut p = Pipeline::new(cfg, dir.path()).unwrap();
    let err = p.run_until(StageId::Report).unwrap_err();
    assert_eq!(err.stage, "train");
    assert!(err.to_string().contains("train"));
    assert!(dir.path().join("fit-coarse/field.bin").exists());
    assert!(!dir.path().join("train/.stamp").exists());
}

#[test]
fn nerf_like_mode_feeds_renders_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("nerf_like").unwrap();
    let s = smoke();
    cfg.rig = s.rig.clone();
    cfg.coarse = s.coarse.clone();
    cfg.degradation.nerf_like_iterations = 5;
    let mut p = Pipeline::new(cfg, dir.path()).unwrap();
    p.run_until(StageId::Degrade).unwrap();
    let clean = p.load(StageId::Synth, "train").unwrap();
    let deg = p.load(StageId::Degrade, "train").unwrap();
    assert_eq!(clean.cameras, deg.cameras);
    assert_ne!(clean.images, deg.images);
}

#[test]
fn super_resolution_shrinks_degraded_cameras() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("sr").unwrap();
    cfg.rig = smoke().rig;
    cfg.rig.width = 32;
    cfg.rig.height = 32;
    let mut p = Pipeline::new(cfg, dir.path()).unwrap();
    p.run_until(StageId::Restore2d).unwrap();
    let deg = p.load(StageId::Degrade, "train").unwrap();
    assert_eq!((deg.cameras[0].width, deg.images[0].width), (8, 8));
    assert!((deg.cameras[0].fov_x - 0.69).abs() < 1e-12);
    let restored = p.load(StageId::Restore2d, "train").unwrap();
    assert_eq!(restored.images[0].width, 32);
}

fn rafe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rafe"))
}

#[test]
fn binary_runs_stages_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = rafe()
        .args(["synth", "--config", "smoke", "--seed", "4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("synth/transforms_train.json").exists());
    assert!(!dir.path().join("degrade").exists());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"bad\"\n[scene]\ndataset = \"nowhere\"\n").unwrap();
    let out = rafe()
        .args(["degrade", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("bad"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `synth`"));

    let out = rafe().args(["run", "--config", "no-such-preset"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}
