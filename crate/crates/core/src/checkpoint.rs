//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CKPT"  u32 version (=1)
//! u32 config length, UTF-8 config text (`key = value` lines)
//! repeated until EOF:
//!   u16 name length, name bytes
//!   u8 rank, rank x u32 dims
//!   prod(dims) x f64 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams, NamedTensor};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_checkpoint(w: &mut impl Write, model: &Model) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    let echo = model.config.to_config().to_string();
    put_u32(w, echo.len())?;
    w.write_all(echo.as_bytes())?;
    let mut res = Ok(());
    model.params.for_each(|name, dims, data| {
        if res.is_err() {
            return;
        }
        res = (|| {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format("tensor name too long".into()))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let rank = u8::try_from(dims.len()).map_err(|_| Error::Format("tensor rank too large".into()))?;
            w.write_all(&[rank])?;
            for &d in dims {
                put_u32(w, d)?;
            }
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        })();
    });
    res
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n = get_u32(r)? as usize;
    let mut text = vec![0u8; n];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("config echo is not UTF-8".into()))?;
    let config = ModelConfig::from_config(&Config::parse(&text)?)?;

    let mut tensors: Vec<NamedTensor> = Vec::new();
    loop {
        let mut b = [0u8; 2];
        match r.read(&mut b[..1])? {
            0 => break,
            _ => r.read_exact(&mut b[1..])?,
        }
        let len = u16::from_le_bytes(b) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let rank = rank[0] as usize;
        let dims = (0..rank)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let mut raw = vec![0u8; count * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, dims, data));
    }
    let params = ModelParams::from_named_tensors(&config, &tensors)?;
    Ok(Model { config, params })
}

pub fn save(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
