//! Write a synthetic labelled corpus and noise pool to a directory.

use cldnn::synth::{write_corpus, SynthSpec};

fn main() -> cldnn::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synth_corpus".into());
    let corpus = write_corpus(&SynthSpec::default(), 20, &dir)?;
    println!("{} utterances", corpus.entries.len());
    println!("manifest {}", corpus.manifest.display());
    println!("speakers {}", corpus.speakers.display());
    println!("noise    {}", corpus.noise_manifest.display());
    Ok(())
}
