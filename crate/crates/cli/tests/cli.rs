use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tfa_core::audio::{colored_noise, mix_at_snr, read_wav, synth_clean, write_wav, CleanKind, MixSpec, Waveform};
use tfa_core::metrics::si_sdr;

const TINY: &str = "blocks = 4\nd_model = 32\nd_f = 16\nepochs = 2\nbatches_per_epoch = 2\nbatch_size = 2\nval_size = 2\ntest_per_condition = 1\n";

fn tfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `clean.wav` and a 5 dB `noisy.wav` of `n` samples.
fn wav_pair(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let clean = synth_clean(CleanKind::Harmonic, n, 3).unwrap();
    let clean = Waveform::new(clean.samples().iter().map(|v| 0.3 * v).collect()).unwrap();
    let noise = colored_noise(-1.0, n, 4).unwrap();
    let spec = MixSpec {
        snr_db: 5.0,
        noise_offset: 0,
        seed: 0,
    };
    let (noisy, _) = mix_at_snr(&clean, &noise, &spec).unwrap();
    let (c, x) = (dir.join("clean.wav"), dir.join("noisy.wav"));
    write_wav(&clean, &c).unwrap();
    write_wav(&noisy, &x).unwrap();
    (c, x)
}

fn trained(dir: &Path, variant: &str) -> PathBuf {
    let cfg = tiny_config(dir);
    let out = dir.join(format!("run_{variant}"));
    let o = tfa(&["train", "--config", s(&cfg), "--variant", variant, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn train_is_deterministic_and_creates_its_directory() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("nested/a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = tfa(&["train", "--config", s(&cfg), "--seed", "7", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in [
        "history.csv",
        "best.ckpt",
        "last.ckpt",
        "effective_config.toml",
        "batch_digests.csv",
    ] {
        assert!(a.join(f).exists(), "{f}");
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let history = fs::read_to_string(a.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_mse,val_mse\n"));
    assert_eq!(history.lines().count(), 3);
    let echoed = fs::read_to_string(a.join("effective_config.toml")).unwrap();
    assert!(echoed.contains("seed = 7"), "{echoed}");
}

#[test]
fn overrides_beat_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("o");
    let o = tfa(&[
        "train",
        "--config",
        s(&cfg),
        "--set",
        "epochs=1",
        "--set",
        "seed=3",
        "--seed",
        "4",
        "--target",
        "psm",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echoed = fs::read_to_string(out.join("effective_config.toml")).unwrap();
    assert!(echoed.contains("epochs = 1"), "{echoed}");
    assert!(echoed.contains("seed = 4"), "{echoed}");
    assert!(echoed.contains("target = \"psm\""), "{echoed}");
    assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 2);
}

#[test]
fn unknown_key_names_the_nearest_one() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "d_modle = 32\n").unwrap();
    let o = tfa(&["train", "--config", s(&path), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("d_modle") && err.contains("d_model"), "{err}");
    assert!(err.contains("batches_per_epoch"), "valid keys listed: {err}");

    let o = tfa(&["train", "--set", "epochz=3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epochs"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&tfa(&["frobnicate"])), 1);
    assert_eq!(code(&tfa(&["train", "--variant", "xyz"])), 1);
    assert_eq!(code(&tfa(&["enhance", "a.wav", "b.wav"])), 1);
    assert_eq!(code(&tfa(&["enhance", "a.wav", "b.wav", "--oracle", "irm"])), 1);
    assert_eq!(code(&tfa(&["ablate", "--variant", "ta"])), 1);
    assert_eq!(code(&tfa(&["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.wav");
    let out = dir.path().join("o.wav");
    let o = tfa(&[
        "enhance",
        s(&missing),
        s(&out),
        "--oracle",
        "irm",
        "--clean",
        s(&missing),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = tfa(&[
        "evaluate",
        "--checkpoint",
        s(&dir.path().join("none.ckpt")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn oracle_enhance_preserves_length_and_helps() {
    let dir = TempDir::new().unwrap();
    let (clean, noisy) = wav_pair(dir.path(), 12345);
    let out = dir.path().join("sub/enh.wav");
    let o = tfa(&["enhance", s(&noisy), s(&out), "--oracle", "irm", "--clean", s(&clean)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (c, x, e) = (
        read_wav(&clean).unwrap(),
        read_wav(&noisy).unwrap(),
        read_wav(&out).unwrap(),
    );
    assert_eq!(e.len(), x.len());
    let gain = si_sdr(&c, &e).unwrap() - si_sdr(&c, &x).unwrap();
    assert!(gain > 0.0, "{gain}");
}

#[test]
fn model_enhance_dumps_one_attention_csv_per_block() {
    let dir = TempDir::new().unwrap();
    let run = trained(dir.path(), "tfa");
    let (_, noisy) = wav_pair(dir.path(), 5000);
    let out = dir.path().join("enh.wav");
    let maps = dir.path().join("maps");
    let ckpt = run.join("best.ckpt");
    let o = tfa(&[
        "enhance",
        s(&noisy),
        s(&out),
        "--checkpoint",
        s(&ckpt),
        "--dump-attention",
        "--out",
        s(&maps),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_wav(&out).unwrap().len(), 5000);
    let frames = 5000usize.div_ceil(256);
    for b in 1..=4 {
        let csv = fs::read_to_string(maps.join(format!("attention_block{b}.csv"))).unwrap();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), 2 + 32);
        assert_eq!(&header[..3], &["frame", "ta", "tf_0"]);
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), frames);
        for r in rows {
            let v: Vec<f64> = r.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
            assert!(v.iter().all(|x| *x > 0.0 && *x < 1.0));
        }
    }
    assert!(!maps.join("attention_block5.csv").exists());
}

#[test]
fn off_checkpoint_enhances_without_attention() {
    let dir = TempDir::new().unwrap();
    let run = trained(dir.path(), "off");
    let (_, noisy) = wav_pair(dir.path(), 3000);
    let out = dir.path().join("enh.wav");
    let o = tfa(&[
        "enhance",
        s(&noisy),
        s(&out),
        "--checkpoint",
        s(&run.join("last.ckpt")),
        "--dump-attention",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_wav(&out).unwrap().len(), 3000);
    assert!(!dir.path().join("attention_block1.csv").exists());
}

#[test]
fn checkpoint_config_mismatch_names_the_tensor() {
    let dir = TempDir::new().unwrap();
    let run = trained(dir.path(), "off");
    let (_, noisy) = wav_pair(dir.path(), 3000);
    let ckpt = run.join("best.ckpt");
    let out = dir.path().join("enh.wav");
    let o = tfa(&[
        "enhance",
        s(&noisy),
        s(&out),
        "--checkpoint",
        s(&ckpt),
        "--variant",
        "tfa",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("block1"), "{}", stderr(&o));
    let o = tfa(&[
        "enhance",
        s(&noisy),
        s(&out),
        "--checkpoint",
        s(&ckpt),
        "--set",
        "d_f=8",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("shape"), "{}", stderr(&o));
}

#[test]
fn evaluate_writes_per_system_reports() {
    let dir = TempDir::new().unwrap();
    let run = trained(dir.path(), "tfa");
    let ckpt = run.join("best.ckpt");
    let out = dir.path().join("eval");
    let o = tfa(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&out),
        "--per-utterance",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["noisy", "oracle_irm", "oracle_psm", "model"] {
        let csv = fs::read_to_string(out.join(format!("eval_{name}.csv"))).unwrap();
        assert!(csv.starts_with("condition_noise,condition_snr_db,metric,mean,count\n"));
        assert_eq!(csv.lines().count(), 1 + 5 * 5 * 3, "{name}");
        let utterances = fs::read_to_string(out.join(format!("utterances_{name}.csv"))).unwrap();
        assert_eq!(utterances.lines().count(), 1 + 25);
    }
    let again = dir.path().join("eval2");
    let o = tfa(&["evaluate", "--checkpoint", s(&ckpt), "--out", s(&again)]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(out.join("eval_model.csv")).unwrap(),
        fs::read(again.join("eval_model.csv")).unwrap()
    );
}

#[test]
fn ablate_shares_batches_and_reports_four_variants() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("abl");
    let o = tfa(&["ablate", "--config", s(&cfg), "--set", "epochs=1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("ablation_summary.csv")).unwrap();
    let variants: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["off", "ta", "fa", "tfa"]);
    let eval = fs::read_to_string(out.join("ablation_eval.csv")).unwrap();
    let rows: Vec<Vec<&str>> = eval.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for noise in ["colored-2.00", "colored+0.00", "babble"] {
        for snr in ["-5", "0", "15"] {
            let n = rows
                .iter()
                .filter(|r| r[1] == noise && r[2] == snr && r[3] == "si_sdr")
                .count();
            assert_eq!(n, 4, "{noise} {snr}");
        }
    }
    let digests = fs::read_to_string(out.join("batch_digests.csv")).unwrap();
    let epoch1: Vec<&str> = digests
        .lines()
        .filter(|l| l.contains(",1,"))
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(epoch1.len(), 4);
    assert!(epoch1.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn gradcheck_passes_and_injected_fault_fails() {
    let o = tfa(&["gradcheck", "--draws", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(table.contains("restcn_toy_tfa") && !table.contains("FAIL"), "{table}");
    let o = tfa(&["gradcheck", "--draws", "1", "--inject-fault"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}
