use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cldnn::config::Config;
use cldnn::experiment::run_sweep;
use cldnn::synth::{write_corpus, SynthSpec};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cldnn")).args(args).output().expect("spawn cli")
}

fn write_cfg(path: &Path, pairs: &[(&str, String)]) {
    let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(path, text).unwrap();
}

fn tiny_model() -> Vec<(&'static str, String)> {
    vec![
        ("maps", "2".into()),
        ("blstm_cells", "4".into()),
        ("fc_sizes", "8,4,4".into()),
        ("max_epochs", "2".into()),
    ]
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn cli_pipeline_step_by_step() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth_cfg = d.join("synth.cfg");
    write_cfg(
        &synth_cfg,
        &[
            ("speakers", "4".into()),
            ("utterances", "2".into()),
            ("n_noise_clips", "3".into()),
            ("seed", "5".into()),
        ],
    );
    let corpus = d.join("corpus");
    assert_ok(&cli(&["synth", "--config", synth_cfg.to_str().unwrap(), "--out", corpus.to_str().unwrap()]));
    assert_eq!(fs::read_to_string(corpus.join("manifest.csv")).unwrap().lines().count(), 49);

    let out = d.join("out");
    let mut pairs = vec![
        ("name", "cli".to_string()),
        ("manifest", corpus.join("manifest.csv").display().to_string()),
        ("noise_manifest", corpus.join("noise.csv").display().to_string()),
        ("model", "fst-cldnn".into()),
        ("input", "mfcc".into()),
        ("condition", "noisy".into()),
        ("n_noise", "2".into()),
        ("n_snr", "1".into()),
    ];
    pairs.extend(tiny_model());
    let cfg = d.join("exp.cfg");
    write_cfg(&cfg, &pairs);
    let c = cfg.to_str().unwrap();
    let o = out.to_str().unwrap();
    for sub in ["partition", "features", "augment"] {
        assert_ok(&cli(&[sub, "--config", c, "--out", o, "--seed", "3"]));
    }
    let root = out.join("cli");
    let augmented = root.join("features/augmented.csv");
    // 48 utterances x 2 clips x 1 level.
    assert_eq!(fs::read_to_string(&augmented).unwrap().lines().count(), 97);
    assert!(root.join("reports/partition.csv").exists());
    assert_eq!(fs::read_dir(root.join("features")).unwrap().count(), 49);

    pairs.push(("augmented", augmented.display().to_string()));
    write_cfg(&cfg, &pairs);
    for sub in ["train", "eval", "probe"] {
        assert_ok(&cli(&[sub, "--config", c, "--out", o, "--seed", "3"]));
    }
    assert!(root.join("checkpoints/best.ckpt").exists());
    let history = fs::read_to_string(root.join("reports/history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_ua"));
    let eval = fs::read_to_string(root.join("reports/eval.csv")).unwrap();
    assert_eq!(eval.lines().next(), Some("split,condition,ua"));
    let probe = fs::read_to_string(root.join("reports/probe.csv")).unwrap();
    assert_eq!(probe.lines().next(), Some("model,tap,label_type,probe_ua,rho"));
    // 4 taps x 3 label types.
    assert_eq!(probe.lines().count(), 13);
    assert!(root.join("reports/scatter_cnn_emotion.csv").exists());
}

#[test]
fn cli_run_matches_library_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = write_corpus(
        &SynthSpec {
            n_speakers: 3,
            utterances_per_speaker_per_class: 1,
            ..Default::default()
        },
        2,
        d.join("corpus"),
    )
    .unwrap();
    let mut pairs = vec![
        ("name", "r".to_string()),
        ("manifest", corpus.manifest.display().to_string()),
        ("model", "ldnn".into()),
        ("input", "mfcc".into()),
    ];
    pairs.extend(tiny_model());
    let cfg = d.join("run.cfg");
    write_cfg(&cfg, &pairs);
    let c = cfg.to_str().unwrap();
    for (out, seed) in [("a", "9"), ("b", "9"), ("c", "10")] {
        assert_ok(&cli(&["run", "--config", c, "--out", d.join(out).to_str().unwrap(), "--seed", seed]));
    }
    let ckpt = |o: &str| fs::read(d.join(o).join("r/checkpoints/best.ckpt")).unwrap();
    assert_eq!(ckpt("a"), ckpt("b"));
    assert_ne!(ckpt("a"), ckpt("c"));
}

#[test]
fn cli_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    write_cfg(&cfg, &[("model", "ldnn".into())]);
    let out = cli(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(line["error"], "MissingKey");
    assert!(line["message"].as_str().unwrap().contains("manifest"));

    let out = cli(&["eval", "--config", dir.path().join("absent.cfg").to_str().unwrap()]);
    assert!(!out.status.success());
    let line: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert!(line["error"].is_string());

    write_cfg(&cfg, &[("model", "s-cldnn".into()), ("input", "mfcc".into()), ("manifest", "x.csv".into())]);
    let out = cli(&["partition", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn sweep_covers_every_value_under_both_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = write_corpus(
        &SynthSpec {
            n_classes: 3,
            n_speakers: 3,
            utterances_per_speaker_per_class: 1,
            duration: (0.15, 0.2),
            seed: 2,
        },
        2,
        d.join("corpus"),
    )
    .unwrap();
    let mut cfg = Config::new()
        .with("name", "sw")
        .with("out", d.join("out").display())
        .with("manifest", corpus.manifest.display())
        .with("noise_manifest", corpus.noise_manifest.display())
        .with("model", "s-cldnn")
        .with("input", "logmel")
        .with("n_noise", 1)
        .with("n_snr", 1);
    for (k, v) in tiny_model() {
        cfg.set(k, v);
    }
    cfg.set("max_epochs", 1);
    let values: Vec<usize> = (4..=12).collect();
    let rows = run_sweep(&cfg, "h1", &values, 5).unwrap();
    assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), values);
    let seeds: std::collections::BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 9);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.val_ua_clean) && (0.0..=1.0).contains(&r.val_ua_noisy));
    }
    let csv = fs::read_to_string(d.join("out/sw/reports/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert_eq!(
        csv.lines().next(),
        Some("h1,seed,val_ua_clean,val_ua_noisy,val_ua_clean_median,val_ua_noisy_median")
    );

    // An invalid value fails before any training starts.
    let err = run_sweep(&cfg, "h1", &[4, 41], 5).unwrap_err();
    assert!(matches!(err, cldnn::Error::Geometry(_) | cldnn::Error::Spec(_)), "{err}");
}
