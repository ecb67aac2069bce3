//! Config-driven end-to-end run: synthetic corpus, noisy training,
//! evaluation and probing, with every artifact written under a temp dir.

use cldnn::config::Config;
use cldnn::experiment::{run_experiment, run_sweep};
use cldnn::synth::{write_corpus, SynthSpec};

fn main() -> cldnn::Result<()> {
    let root = std::env::temp_dir().join("cldnn_experiment_example");
    let corpus = write_corpus(
        &SynthSpec {
            n_speakers: 5,
            utterances_per_speaker_per_class: 2,
            ..SynthSpec::default()
        },
        6,
        root.join("corpus"),
    )?;
    let config = Config::new()
        .with("name", "demo")
        .with("out", root.join("out").display())
        .with("manifest", corpus.manifest.display())
        .with("noise_manifest", corpus.noise_manifest.display())
        .with("model", "t-cldnn")
        .with("input", "mfcc")
        .with("maps", 8)
        .with("blstm_cells", 16)
        .with("condition", "noisy")
        .with("n_noise", 2)
        .with("n_snr", 1)
        .with("max_epochs", 3)
        .with("probe", true);
    let summary = run_experiment(&config)?;
    for (split, cond, ua) in &summary.eval {
        println!("{} {} UA {ua:.3}", split.name(), cond.name());
    }
    println!("artifacts in {}", summary.layout.root.display());

    let rows = run_sweep(&config.clone().with("max_epochs", 1), "w1", &[3, 5], 1)?;
    for r in rows {
        println!("w1={} clean {:.3} noisy {:.3}", r.value, r.val_ua_clean, r.val_ua_noisy);
    }
    Ok(())
}
