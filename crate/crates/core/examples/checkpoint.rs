//! Save a model to the binary checkpoint format, list its tensors, reload it.

use cldnn::checkpoint;
use cldnn::model::{InputKind, Model, ModelConfig, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cldnn::Result<()> {
    let config = ModelConfig::preset(Variant::Ldnn(InputKind::Mfcc13), 6)?;
    let model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let path = std::env::temp_dir().join("cldnn_example.ckpt");
    checkpoint::save(&path, &model)?;
    println!("{} ({} bytes, {} parameters)", path.display(), std::fs::metadata(&path)?.len(), model.params.num_params());
    for (name, dims, _) in model.params.named_tensors().iter().take(6) {
        println!("  {name:<16} {dims:?}");
    }
    let back = checkpoint::load(&path)?;
    println!("reloaded identical: {}", back == model);
    std::fs::remove_file(&path)?;
    Ok(())
}
