use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "seeds = 1-2\niterations_gesture = 6\niterations_recitation = 6\niterations_main = 6\n\
                    test_batches = 1\neval_every = 3\ncheckpoint_every = 0\n";

fn pointcount(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointcount"))
        .current_dir(dir)
        .env_remove("POINTCOUNT_OUT")
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) {
    let mut full = vec!["--config", "tiny.cfg", "--out", "out"];
    full.extend_from_slice(args);
    let o = pointcount(dir, &full);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pointcount(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(pointcount(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(pointcount(dir.path(), &["stats", "--study", "4"]).status.code(), Some(1));

    let o = pointcount(dir.path(), &["--set", "learning_rate=1", "stats"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown key"), "{}", stderr(&o));

    fs::write(dir.path().join("bad.cfg"), "seeds 1\n").unwrap();
    let o = pointcount(dir.path(), &["--config", "bad.cfg", "stats"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn render_writes_a_binary_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointcount(dir.path(), &["--out", "o", "render", "balls=2:1,7:3 hand=2 trigger=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(dir.path().join("o/render/scene.pgm")).unwrap();
    let header = b"P5\n24 11\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 24 * 11);
    assert!(bytes[header.len()..].contains(&255));
    assert!(dir.path().join("o/render/config.txt").exists());

    let o = pointcount(dir.path(), &["--out", "o", "--set", "geometry=full", "render", "", "--output", "empty.pgm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(dir.path().join("empty.pgm")).unwrap();
    let header = b"P5\n134 40\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|&b| b == 0));
}

#[test]
fn render_rejects_bad_specs_with_a_position() {
    let dir = tempfile::tempdir().unwrap();
    let o = pointcount(dir.path(), &["--out", "o", "render", "balls=11:0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("byte 6"), "{}", stderr(&o));
    let o = pointcount(dir.path(), &["--out", "o", "render", "balls=1:0,1:2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_root_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pointcount"))
        .current_dir(dir.path())
        .env("POINTCOUNT_OUT", "from-env")
        .args(["render", "balls=0:0"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from-env/render/scene.pgm").exists());
}

#[test]
fn study_needs_pretraining_unless_forced() {
    let dir = tiny();
    let o = pointcount(dir.path(), &["--config", "tiny.cfg", "--out", "out", "study", "--study", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("pointcount pretrain"), "{}", stderr(&o));

    run(dir.path(), &["study", "--study", "1", "--force-fresh"]);
    let conditions = fs::read_to_string(dir.path().join("out/study1/conditions.csv")).unwrap();
    assert_eq!(conditions.lines().next(), Some("skill,seed,accuracy"));
    assert_eq!(conditions.lines().count(), 1 + 3 * 2);

    let o = pointcount(dir.path(), &["--config", "tiny.cfg", "--out", "out", "analyze"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("study --study 3"), "{}", stderr(&o));
}

#[test]
fn pipeline_outputs_and_reruns() {
    let dir = tiny();
    let root = dir.path().join("out");
    run(dir.path(), &["pretrain", "--iterations-gesture", "0"]);
    let config = fs::read_to_string(root.join("pretrain/config.txt")).unwrap();
    assert!(config.contains("iterations_gesture = 0"), "{config}");
    for seed in [1, 2] {
        let ckpt = root.join(format!("checkpoints/seed-{seed}"));
        assert!(ckpt.join("gesture_pre.ckpt").exists());
        assert!(ckpt.join("recitation_pre.ckpt").exists());
    }
    for stem in ["gesture_curves", "recitation_curves"] {
        for ext in ["csv", "dat", "svg"] {
            assert!(root.join(format!("pretrain/{stem}.{ext}")).exists(), "{stem}.{ext}");
        }
    }

    run(dir.path(), &["study", "--study", "3"]);
    let study3 = root.join("study3");
    for f in ["conditions.csv", "stats.txt", "bars.dat", "bars.svg", "curves.csv", "metrics/seed-1.csv"] {
        assert!(study3.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(study3.join("bars.dat")).unwrap().contains(" 0.825"));
    let first = fs::read(study3.join("conditions.csv")).unwrap();
    let stats = fs::read_to_string(study3.join("stats.txt")).unwrap();
    assert!(stats.starts_with("test\tlabel\t"));

    // rerun with another worker count: same bytes
    run(dir.path(), &["study", "--study", "3", "--jobs", "2"]);
    assert_eq!(fs::read(study3.join("conditions.csv")).unwrap(), first);

    // statistics recomputed from the CSV alone
    fs::remove_file(study3.join("stats.txt")).unwrap();
    run(dir.path(), &["stats", "--study", "3"]);
    assert_eq!(fs::read_to_string(study3.join("stats.txt")).unwrap(), stats);

    run(dir.path(), &["analyze", "--rows", "low"]);
    let distance = fs::read_to_string(root.join("analyze/distance.csv")).unwrap();
    assert!(distance.lines().skip(1).all(|l| l.starts_with("low,")), "{distance}");
    assert!(!root.join("analyze/setsize.csv").exists());

    run(dir.path(), &["analyze"]);
    let distance = fs::read_to_string(root.join("analyze/distance.csv")).unwrap();
    assert!(distance.lines().any(|l| l.starts_with("high,")));
    for f in ["setsize.csv", "setsize_stats.txt", "setsize.svg", "distance_stats.txt", "distance.svg"] {
        assert!(root.join("analyze").join(f).exists(), "{f}");
    }
}
