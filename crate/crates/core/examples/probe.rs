//! Module-wise probing of a briefly trained model: linear-probe UA and
//! cluster inertia ratio per tap and label type.

use cldnn::conv::ConvType;
use cldnn::dsp::{FeatureExtractor, FrontendConfig};
use cldnn::model::{InputKind, ModelConfig, Variant};
use cldnn::probe::{probe_all, ProbeItem};
use cldnn::synth::{synth_utterances, SynthSpec};
use cldnn::train::{train, Sample, Split, TrainOptions};

fn main() -> cldnn::Result<()> {
    let fx = FeatureExtractor::new(FrontendConfig::default())?;
    let variant = Variant::Cldnn(ConvType::FST, InputKind::LogMel40);
    let kind = variant.input_kind().feature_kind();
    let utts = synth_utterances(&SynthSpec {
        n_speakers: 6,
        utterances_per_speaker_per_class: 2,
        ..SynthSpec::default()
    })?;
    let split_of = |spk: &str| match spk {
        "spk04" => Split::Validation,
        "spk05" => Split::Test,
        _ => Split::Train,
    };
    let mut items = Vec::new();
    for u in &utts {
        items.push(ProbeItem {
            id: u.id.clone(),
            input: fx.spliced(&u.waveform, kind)?,
            emotion: u.class,
            speaker: u.speaker.clone(),
            gender: u.gender.clone(),
            split: split_of(&u.speaker),
        });
    }
    let samples = |split: Split| -> Vec<Sample> {
        items
            .iter()
            .filter(|i| i.split == split)
            .map(|i| Sample {
                id: i.id.clone(),
                input: i.input.clone(),
                label: i.emotion,
            })
            .collect()
    };
    let opts = TrainOptions {
        max_epochs: 5,
        ..TrainOptions::default()
    };
    let out = train(&ModelConfig::preset(variant, 6)?, &samples(Split::Train), &samples(Split::Validation), &opts)?;
    let report = probe_all(&out.best, &variant.to_string(), &items, 6, 0)?;
    for r in &report.rows {
        let rho = r.rho.map_or("inf".into(), |v| format!("{v:.3}"));
        println!("{:<6} {:<8} UA {:.3}  rho {rho}", r.tap.name(), r.label_type.name(), r.probe_ua);
    }
    Ok(())
}
