//! Noise mixing at target SNRs and the augmented manifest for a small corpus.

use std::path::PathBuf;

use cldnn::augment::{augment_corpus, measured_snr_db, mix_at_snr, render_mix, AugmentConfig};
use cldnn::corpus::CleanEntry;
use cldnn::synth::{synth_noise_pool, synth_utterances, SynthSpec};

fn main() -> cldnn::Result<()> {
    let spec = SynthSpec {
        n_speakers: 1,
        utterances_per_speaker_per_class: 1,
        ..SynthSpec::default()
    };
    let utts = synth_utterances(&spec)?;
    let pool = synth_noise_pool(5, 1.0, 7)?;

    for snr in [-10.0, 0.0, 15.0] {
        let mixed = mix_at_snr(&utts[0].waveform, &pool[0], snr, 123)?;
        println!("requested {snr:>6.1} dB, measured {:>9.5} dB", measured_snr_db(&utts[0].waveform, &mixed));
    }

    let clean: Vec<CleanEntry> = utts
        .iter()
        .map(|u| CleanEntry {
            path: PathBuf::from(format!("wav/{}.wav", u.id)),
            speaker: u.speaker.clone(),
            label: u.label.clone(),
        })
        .collect();
    let cfg = AugmentConfig {
        n_noise: 3,
        n_snr: 2,
        snr_range: (-10.0, 15.0),
        seed: 1,
    };
    let mixes = augment_corpus(&clean, &pool, &cfg)?;
    println!("{} clean -> {} mixes", clean.len(), mixes.len());
    for m in mixes.iter().take(4) {
        let w = render_mix(m, &utts[0].waveform, &pool)?;
        println!("{} noise={} snr={:.2} offset={} len={}", m.parent_id, m.noise_id, m.snr_db, m.offset, w.len());
    }
    Ok(())
}
