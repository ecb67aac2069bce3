use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{FeatureKind, SpectralSequence, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const DUMP_MAGIC: &[u8; 4] = b"SPEC";
const DUMP_VERSION: u32 = 1;

/// Reads a mono 16-bit PCM WAV at 16 kHz, scaling samples into `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedRate(format!(
            "{}: {} Hz (expected {SAMPLE_RATE} Hz)",
            path.as_ref().display(),
            spec.sample_rate
        )));
    }
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::UnsupportedRate(format!(
            "{}: expected mono 16-bit PCM",
            path.as_ref().display()
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM, clamping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &w.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Flat binary dump: `"SPEC"`, version u32, kind u8, T u32, D u32, then
/// row-major little-endian f64 values.
pub fn write_feature_dump(mut out: impl Write, s: &SpectralSequence) -> Result<()> {
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&DUMP_VERSION.to_le_bytes())?;
    out.write_all(&[s.kind.code()])?;
    out.write_all(&(s.num_frames() as u32).to_le_bytes())?;
    out.write_all(&(s.dim() as u32).to_le_bytes())?;
    for v in s.frames.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_feature_dump(mut input: impl Read) -> Result<SpectralSequence> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Format("feature dump: bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != DUMP_VERSION {
        return Err(Error::Format(format!("feature dump: unknown version {version}")));
    }
    let mut kind = [0u8; 1];
    input.read_exact(&mut kind)?;
    let kind = FeatureKind::from_code(kind[0])
        .ok_or_else(|| Error::Format(format!("feature dump: unknown kind {}", kind[0])))?;
    input.read_exact(&mut u32buf)?;
    let t = u32::from_le_bytes(u32buf) as usize;
    input.read_exact(&mut u32buf)?;
    let d = u32::from_le_bytes(u32buf) as usize;
    let mut data = Vec::with_capacity(t * d);
    let mut f64buf = [0u8; 8];
    for _ in 0..t * d {
        input.read_exact(&mut f64buf)?;
        data.push(f64::from_le_bytes(f64buf));
    }
    let frames = Array2::from_shape_vec((t, d), data)
        .map_err(|e| Error::Format(format!("feature dump: {e}")))?;
    Ok(SpectralSequence {
        frames,
        kind,
        frame_shift: 0.010,
    })
}
