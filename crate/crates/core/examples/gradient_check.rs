//! Analytic gradients of a tiny FST-CLDNN against central differences.

use cldnn::conv::ConvType;
use cldnn::dsp::{FeatureKind, SplicedSequence};
use cldnn::model::{cross_entropy, model_backward, model_forward_cached, InputKind, LdnnConfig, Mode, ModelConfig, ModelParams};
use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(input: &SplicedSequence, p: &ModelParams, cfg: &ModelConfig) -> f64 {
    let (out, _) = model_forward_cached(input, p, cfg, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    cross_entropy(&out.probs, 1).0
}

fn main() -> cldnn::Result<()> {
    let ldnn = LdnnConfig {
        blstm_cells: 4,
        fc_sizes: vec![12, 8, 8, 3],
        dropout: 0.2,
    };
    let cfg = ModelConfig::cldnn(ConvType::FST, InputKind::Mfcc13, (13, 5, 1, 2), 2, ldnn)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ModelParams::init(&cfg, &mut rng)?;
    // Biases start at zero; move them off the ReLU kink.
    params.for_each_mut(|name, _, s| {
        if name.ends_with(".b") || name.ends_with(".bias") || name.contains(".u_") {
            s.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    });
    let input = SplicedSequence {
        blocks: (0..3)
            .map(|_| Array2::from_shape_simple_fn((13, 16), || rng.random_range(-1.0..1.0)))
            .collect(),
        source_kind: FeatureKind::Mfcc,
        left: 10,
        right: 5,
    };

    let (out, cache) = model_forward_cached(&input, &params, &cfg, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1))?;
    let (_, g) = cross_entropy(&out.probs, 1);
    let grads = model_backward(&g, &cache, &params, &cfg)?;

    let eps = 1e-5;
    let mut analytic = Vec::new();
    grads.for_each(|name, _, s| analytic.push((name.to_string(), s.to_vec())));
    for (name, an) in analytic {
        let mut worst = 0.0f64;
        for i in 0..an.len() {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                p.for_each_mut(|n, _, s| {
                    if n == name {
                        s[i] += delta;
                    }
                });
                loss(&input, &p, &cfg)
            };
            let num = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            worst = worst.max((an[i] - num).abs() / an[i].abs().max(num.abs()).max(1e-5));
        }
        println!("{name:<18} {:>4} params, max rel error {worst:.2e}", an.len());
    }
    Ok(())
}
