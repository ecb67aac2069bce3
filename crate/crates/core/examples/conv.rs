//! The four convolution families on a 40 x 16 spliced block, with pooling.

use cldnn::conv::{conv_layer, ConvLayerSpec, ConvParams, ConvType};
use cldnn::model::{preset_filters, InputKind};
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cldnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Array3::from_shape_fn((1, 40, 16), |(_, f, t)| ((f * 16 + t) as f64 * 0.37).sin());
    for t in [ConvType::S, ConvType::T, ConvType::ST, ConvType::FST] {
        let (h1, w1, h2, w2) = preset_filters(t, InputKind::LogMel40);
        let l1 = ConvLayerSpec::preset(t, 1, 8, h1, w1);
        let l2 = ConvLayerSpec::preset(t, 8, 8, h2, w2);
        let p1 = ConvParams::init(&l1, &mut rng);
        let p2 = ConvParams::init(&l2, &mut rng);
        let y1 = conv_layer(&x, &p1, &l1)?;
        let y2 = conv_layer(&y1, &p2, &l2)?;
        println!(
            "{t:>3}: filters {h1}x{w1} then {h2}x{w2}, {:?} -> {:?} -> {:?} ({} features per frame)",
            x.dim(),
            y1.dim(),
            y2.dim(),
            y2.len()
        );
    }
    Ok(())
}
