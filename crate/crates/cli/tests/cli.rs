use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn danet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_danet"))
        .current_dir(dir)
        .args(args)
        .env_remove("DANET_SEED")
        .output()
        .expect("spawn danet")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_NET: [&str; 6] = ["--set", "net.hidden=8", "--set", "net.cells=4", "--set", "net.layers=1"];

fn tiny_corpus(dir: &Path, k: &str) {
    ok(&danet(
        dir,
        &[
            "gen-data", "--out", "corpus", "--k", k, "--n-train", "4", "--n-val", "2", "--n-test", "3", "--duration",
            "0.5", "--seed", "7",
        ],
    ));
}

fn tiny_train(dir: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--corpus", "corpus", "--out", "run", "--epochs", "2", "--set", "train.k=0"];
    args.extend(TINY_NET);
    args.extend(extra);
    ok(&danet(dir, &args));
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.push((rel, fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn gen_data_writes_manifests_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    tiny_corpus(a.path(), "2");
    tiny_corpus(b.path(), "2");
    for split in ["train", "val", "test"] {
        assert!(a.path().join("corpus").join(format!("{split}.csv")).exists());
    }
    assert_eq!(read_dir_bytes(&a.path().join("corpus")), read_dir_bytes(&b.path().join("corpus")));
    let resolved = fs::read_to_string(a.path().join("corpus/config.resolved")).unwrap();
    assert!(resolved.contains("seed=7"));
    assert!(resolved.contains("data.n_train=4"));
}

#[test]
fn mixed_k_corpus() {
    let d = tempfile::tempdir().unwrap();
    ok(&danet(
        d.path(),
        &["gen-data", "--out", "c", "--k", "2,3", "--n-train", "12", "--n-val", "1", "--n-test", "1", "--duration", "0.3"],
    ));
    let text = fs::read_to_string(d.path().join("c/train.csv")).unwrap();
    let ks: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert!(ks.contains(&"2") && ks.contains(&"3"), "{ks:?}");
}

#[test]
fn invalid_spec_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let out = danet(d.path(), &["gen-data", "--out", "c", "--k", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_keys_exit_2() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.cfg"), "train.epochz = 3\n").unwrap();
    let out = danet(d.path(), &["cluster-bench", "--out", "b.csv", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_danet"))
        .current_dir(d.path())
        .args(["cluster-bench", "--out", "b.csv", "--instances", "2"])
        .env("DANET_NOT_A_KEY", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = danet(d.path(), &["cluster-bench", "--out", "b.csv", "--set", "bench.nope=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_env_and_flags_layer() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("run.cfg"), "bench.instances = 3\nbench.dim = 4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_danet"))
        .current_dir(d.path())
        .args(["cluster-bench", "--out", "b.csv", "--config", "run.cfg", "--dim", "5"])
        .env("DANET_BENCH_INSTANCES", "2")
        .output()
        .unwrap();
    ok(&out);
    let echo = fs::read_to_string(d.path().join("b.config")).unwrap();
    assert!(echo.contains("bench.instances=2"), "{echo}");
    assert!(echo.contains("bench.dim=5"), "{echo}");
    let rows = fs::read_to_string(d.path().join("b.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2 + 2);
}

#[test]
fn train_separate_evaluate_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    tiny_corpus(p, "2,3");
    tiny_train(p, &["--head", "danet"]);
    let metrics = fs::read_to_string(p.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2);
    assert!(metrics.starts_with("epoch,train_loss,val_si_sdri,lr"));
    assert!(p.join("run/attractor_history.csv").exists());
    assert!(p.join("run/config.resolved").exists());

    // separation with two strategies on the same input
    let mix = "corpus/test/00000_mix.wav";
    let mut outs = Vec::new();
    for (dir, strategy) in [("sep_e", "e2-euclid"), ("sep_s", "e2-spherical")] {
        ok(&danet(
            p,
            &["separate", "--checkpoint", "run/model.ckpt", "--input", mix, "--out", dir, "--k", "2", "--strategy", strategy],
        ));
        assert!(p.join(dir).join("out_1.wav").exists());
        assert!(p.join(dir).join("out_2.wav").exists());
        outs.push(fs::read(p.join(dir).join("out_1.wav")).unwrap());
    }
    let input_len = fs::metadata(p.join(mix)).unwrap().len();
    assert_eq!(fs::metadata(p.join("sep_e/out_1.wav")).unwrap().len(), input_len);

    // fixed attractors recorded from training
    ok(&danet(
        p,
        &["separate", "--checkpoint", "run/model.ckpt", "--input", mix, "--out", "sep_f", "--strategy", "e1"],
    ));

    // evaluation under both metrics and an iteration sweep
    for (csv, metric) in [("res/euclid.csv", "euclidean"), ("res/spherical.csv", "spherical")] {
        ok(&danet(
            p,
            &["evaluate", "--checkpoint", "run/model.ckpt", "--manifest", "corpus/test.csv", "--out", csv, "--metric", metric],
        ));
        let text = fs::read_to_string(p.join(csv)).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
        let utt: Vec<f64> = rows.iter().filter(|r| r[0] != "mean").map(|r| r[5].parse().unwrap()).collect();
        let mean: f64 = rows.iter().find(|r| r[0] == "mean").unwrap()[5].parse().unwrap();
        assert_eq!(utt.len(), 3);
        assert!((mean - utt.iter().sum::<f64>() / 3.0).abs() < 1e-5);
    }
    assert!(p.join("res/euclid.config").exists());
    ok(&danet(
        p,
        &[
            "evaluate", "--checkpoint", "run/model.ckpt", "--manifest", "corpus/test.csv", "--out", "sweep.csv",
            "--unfold-sweep", "1,3,5",
        ],
    ));
    let text = fs::read_to_string(p.join("sweep.csv")).unwrap();
    let summary: Vec<&str> = text.lines().filter(|l| l.starts_with("mean")).collect();
    assert_eq!(summary.len(), 3);
}

#[test]
fn kmeans_head_model_separates_more_sources_than_trained() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    tiny_corpus(p, "2,3");
    tiny_train(p, &["--head", "kmeans-danet", "--metric", "spherical", "--unfold", "2"]);
    assert!(!p.join("run/attractor_history.csv").exists());
    ok(&danet(
        p,
        &["separate", "--checkpoint", "run/model.ckpt", "--input", "corpus/test/00000_mix.wav", "--out", "sep", "--k", "3"],
    ));
    for l in 1..=3 {
        assert!(p.join(format!("sep/out_{l}.wav")).exists());
    }
}

#[test]
fn training_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        tiny_corpus(d, "2");
        tiny_train(d, &["--seed", "3"]);
    }
    assert_eq!(
        fs::read(a.path().join("run/model.ckpt")).unwrap(),
        fs::read(b.path().join("run/model.ckpt")).unwrap()
    );
}

#[test]
fn corrupt_checkpoint_exits_4() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    tiny_corpus(p, "2");
    fs::write(p.join("bogus.ckpt"), b"garbage").unwrap();
    let out = danet(
        p,
        &["separate", "--checkpoint", "bogus.ckpt", "--input", "corpus/test/00000_mix.wav", "--out", "sep"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn e1_without_attractors_exits_4() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    tiny_corpus(p, "2");
    tiny_train(p, &["--head", "kmeans-danet", "--unfold", "1"]);
    let out = danet(
        p,
        &["separate", "--checkpoint", "run/model.ckpt", "--input", "corpus/test/00000_mix.wav", "--out", "s", "--strategy", "e1"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn missing_files_are_listed() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    tiny_corpus(p, "2");
    tiny_train(p, &[]);
    fs::remove_file(p.join("corpus/test/00001_s2.wav")).unwrap();
    let out = danet(
        p,
        &["evaluate", "--checkpoint", "run/model.ckpt", "--manifest", "corpus/test.csv", "--out", "r.csv"],
    );
    assert_ne!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("00001_s2.wav"), "{err}");
}

#[test]
fn cluster_bench_is_seeded_and_favours_spherical_on_rays() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(&danet(p, &["cluster-bench", "--out", "a.csv", "--seed", "4"]));
    ok(&danet(p, &["cluster-bench", "--out", "b.csv", "--seed", "4"]));
    let a = fs::read_to_string(p.join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(p.join("b.csv")).unwrap());
    let mean = |metric: &str| -> f64 {
        a.lines()
            .find(|l| l.starts_with(&format!("mean,{metric},")))
            .unwrap()
            .split(',')
            .nth(2)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(mean("spherical") <= mean("euclidean"));
}
