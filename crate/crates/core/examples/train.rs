//! Train an FST-CLDNN on log-Mels of a synthetic corpus and report UA.

use cldnn::conv::ConvType;
use cldnn::dsp::{FeatureExtractor, FrontendConfig};
use cldnn::model::{InputKind, ModelConfig, Variant};
use cldnn::synth::{synth_utterances, SynthSpec};
use cldnn::train::{evaluate_ua, train, Sample, TrainOptions};

fn main() -> cldnn::Result<()> {
    let fx = FeatureExtractor::new(FrontendConfig::default())?;
    let variant = Variant::Cldnn(ConvType::FST, InputKind::LogMel40);
    let kind = variant.input_kind().feature_kind();
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for u in synth_utterances(&SynthSpec::default())? {
        let s = Sample {
            input: fx.spliced(&u.waveform, kind)?,
            id: u.id,
            label: u.class,
        };
        if u.speaker == "spk03" {
            val_set.push(s);
        } else {
            train_set.push(s);
        }
    }
    let config = ModelConfig::preset(variant, 6)?;
    let opts = TrainOptions {
        max_epochs: 10,
        seed: 1,
        ..TrainOptions::default()
    };
    let out = train(&config, &train_set, &val_set, &opts)?;
    for r in &out.history {
        println!("epoch {:>2}  loss {:.4}  val UA {:.3}", r.epoch, r.train_loss, r.val_ua);
    }
    println!(
        "best epoch {}; train UA {:.3}, val UA {:.3}",
        out.best_epoch,
        evaluate_ua(&out.best, &train_set)?,
        evaluate_ua(&out.best, &val_set)?
    );
    Ok(())
}
