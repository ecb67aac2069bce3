//! Log-Mel and MFCC extraction with context splicing on one synthetic utterance.

use cldnn::dsp::{FeatureExtractor, FeatureKind, FrontendConfig};
use cldnn::synth::{synth_utterances, SynthSpec};

fn main() -> cldnn::Result<()> {
    let utt = synth_utterances(&SynthSpec::default())?.remove(0);
    let fx = FeatureExtractor::new(FrontendConfig::default())?;

    let lm = fx.log_mels(&utt.waveform)?;
    let mfcc = fx.mfccs(&utt.waveform)?;
    println!("{}: {:.3}s", utt.id, utt.waveform.duration_secs());
    println!("log-Mels {} x {}, MFCCs {} x {}", lm.num_frames(), lm.dim(), mfcc.num_frames(), mfcc.dim());

    for kind in [FeatureKind::LogMel, FeatureKind::Mfcc] {
        let spliced = fx.spliced(&utt.waveform, kind)?;
        println!("{kind:?}: {} blocks of {:?}", spliced.len(), spliced.block_shape());
    }
    let first: Vec<String> = mfcc.frames.row(0).iter().take(5).map(|v| format!("{v:.2}")).collect();
    println!("first MFCC frame: [{} ...]", first.join(", "));
    Ok(())
}
