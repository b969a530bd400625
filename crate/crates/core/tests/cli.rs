use std::path::Path;
use std::process::{Command, Output};

fn dove(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dove")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) -> Output {
    dove(&["synth", "--images", "6", "--clusters", "2", "--n-r", "4", "--d-in", "8", "--d-r", "4", "--vocab", "40", "--out", dir.to_str().unwrap()])
}

#[test]
fn synth_is_deterministic_and_validates() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (oa, ob) = (synth(a.path()), synth(b.path()));
    assert_eq!(code(&oa), 0);
    assert_eq!(stdout(&oa), stdout(&ob));
    for f in ["msv.bank", "roi.bank", "captions.txt", "vocab.txt", "embeddings.bank"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    let bad = dove(&["synth", "--images", "1", "--clusters", "2", "--out", a.path().to_str().unwrap()]);
    assert_eq!(code(&bad), 2);
    assert!(!bad.stderr.is_empty());
}

#[test]
fn default_header_and_missing_data() {
    let o = dove(&["train"]);
    assert!(stdout(&o).contains("lr0=0.0002 B=100 alpha=0.2 lambda_g=10.0 d=512"), "{}", stdout(&o));
    assert_eq!(code(&o), 2);
}

#[test]
fn train_eval_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&synth(&data)), 0);
    let ckpt = dir.path().join("c.bin");
    let report = dir.path().join("r.json");
    let subset = dir.path().join("sig.txt");
    std::fs::write(&subset, "0\n2\n4\n").unwrap();
    let (d, c, r, s) = (data.to_str().unwrap(), ckpt.to_str().unwrap(), report.to_str().unwrap(), subset.to_str().unwrap());

    let t = dove(&["train", "--data", d, "--checkpoint", c, "--d", "8", "--batch-size", "3", "--epochs", "2", "--ablate", "no_ifa"]);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));

    let e = dove(&["eval", "--checkpoint", c, "--data", d, "--subset", s, "--out", r, "--distances"]);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["r1_i2t", "r5_i2t", "r10_i2t", "r1_t2i", "r5_t2i", "r10_t2i", "mr", "config_hash", "seed", "prng"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["subsets"][0]["n_images"], 3);
    assert!(json["distances"]["v_mr_t_rg"]["median"].is_number());

    let i = dove(&["inspect", c]);
    assert_eq!(code(&i), 0);
    assert!(stdout(&i).contains("no_ifa = true"));
    let i = dove(&["inspect", data.join("roi.bank").to_str().unwrap()]);
    assert!(stdout(&i).contains("samples 6  rows 4  cols 4"));
}

#[test]
fn io_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let j = junk.to_str().unwrap();
    assert_eq!(code(&dove(&["inspect", j])), 3);
    assert_eq!(code(&dove(&["eval", "--checkpoint", j, "--data", j])), 3);
    assert_eq!(code(&dove(&["distances", "--checkpoint", "/nonexistent/c.bin", "--data", j])), 3);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&dove(&["train", "--ablate", "no_such_module"])), 2);
    assert_eq!(code(&dove(&["frobnicate"])), 2);
}

#[test]
fn gradcheck_passes() {
    let o = dove(&["gradcheck", "--seed", "7"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("overall max_rel_err"));
}
