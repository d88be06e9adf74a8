//! `EVWT` weight checkpoints.
//!
//! Layout, little-endian: magic `EVWT`, version `u16`, then the network
//! configuration (input channels, height, width, time steps, class count,
//! block count as `u32`; per block out-channels `u32`, kernel `u32`, beta
//! `f64`, threshold `f64`, reset `u8`; output beta, threshold and reset;
//! surrogate slope `f64`), then a `u32` tensor count and per tensor its rank
//! `u32`, extents `u32` each and `f64` data in row-major order.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use evsnn_core::{ConvBlockConfig, LifParams, NetworkConfig, NetworkWeights, ResetMode, SurrogateSpec, Tensor};

use crate::dataset::{fill, read_exact, truncated};
use crate::error::{Context, Error, Result};

pub const MAGIC: [u8; 4] = *b"EVWT";
pub const VERSION: u16 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_lif<W: Write>(w: &mut W, lif: &LifParams) -> Result<()> {
    w.write_all(&lif.beta.to_le_bytes())?;
    w.write_all(&lif.threshold.to_le_bytes())?;
    let reset: u8 = match lif.reset {
        ResetMode::Subtract => 0,
        ResetMode::Zero => 1,
    };
    w.write_all(&[reset])?;
    Ok(())
}

pub fn write_checkpoint_to<W: Write>(mut w: W, config: &NetworkConfig, weights: &NetworkWeights) -> Result<()> {
    // re-validates shapes against the configuration
    let weights = NetworkWeights::from_tensors(config, weights.tensors().to_vec())?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [
        config.input_channels,
        config.input_height,
        config.input_width,
        config.time_steps,
        config.num_classes,
        config.blocks.len(),
    ] {
        put_u32(&mut w, v)?;
    }
    for block in &config.blocks {
        put_u32(&mut w, block.out_channels)?;
        put_u32(&mut w, block.kernel)?;
        put_lif(&mut w, &block.lif)?;
    }
    put_lif(&mut w, &config.output_lif)?;
    w.write_all(&config.surrogate.slope.to_le_bytes())?;
    put_u32(&mut w, weights.tensors().len())?;
    for t in weights.tensors() {
        put_u32(&mut w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut w, d)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

struct Input<R> {
    r: R,
}

impl<R: Read> Input<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        read_exact(&mut self.r, &mut b, what)?;
        Ok(b)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes(what)?) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn lif(&mut self, what: &str) -> Result<LifParams> {
        let beta = self.f64(what)?;
        let threshold = self.f64(what)?;
        let reset = match self.bytes::<1>(what)?[0] {
            0 => ResetMode::Subtract,
            1 => ResetMode::Zero,
            b => return Err(Error::Format(format!("{what}: unknown reset mode {b}"))),
        };
        LifParams::new(beta, threshold, reset).map_err(|e| Error::Format(format!("{what}: {e}")))
    }
}

pub fn read_checkpoint_from<R: Read>(r: R) -> Result<(NetworkConfig, NetworkWeights)> {
    let mut input = Input { r };
    let magic: [u8; 4] = input.bytes("header")?;
    if magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(input.bytes("header")?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let input_channels = input.u32("configuration")?;
    let input_height = input.u32("configuration")?;
    let input_width = input.u32("configuration")?;
    let time_steps = input.u32("configuration")?;
    let num_classes = input.u32("configuration")?;
    let block_count = input.u32("configuration")?;
    let mut blocks = Vec::new();
    for b in 0..block_count {
        let out_channels = input.u32("block configuration")?;
        let kernel = input.u32("block configuration")?;
        let lif = input.lif(&format!("block {} LIF parameters", b + 1))?;
        blocks.push(ConvBlockConfig {
            out_channels,
            kernel,
            lif,
        });
    }
    let output_lif = input.lif("output LIF parameters")?;
    let surrogate = SurrogateSpec::new(input.f64("surrogate")?).map_err(|e| Error::Format(e.to_string()))?;
    let config = NetworkConfig {
        input_channels,
        input_height,
        input_width,
        time_steps,
        blocks,
        num_classes,
        output_lif,
        surrogate,
    };
    let expected = config
        .weight_shapes()
        .map_err(|e| Error::Format(format!("invalid stored configuration: {e}")))?;

    let count = input.u32("tensor count")?;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "{count} tensors stored, configuration needs {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (i, want) in expected.iter().enumerate() {
        let rank = input.u32("tensor header")?;
        if rank != want.len() {
            return Err(Error::Format(format!(
                "tensor {i} has rank {rank}, expected {}",
                want.len()
            )));
        }
        let shape = (0..rank)
            .map(|_| input.u32("tensor header"))
            .collect::<Result<Vec<_>>>()?;
        if &shape != want {
            return Err(Error::Format(format!(
                "tensor {i} has shape {shape:?}, expected {want:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let mut raw = Vec::new();
        (&mut input.r).take(len as u64 * 8).read_to_end(&mut raw)?;
        if raw.len() != len * 8 {
            return Err(truncated("tensor data"));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    if fill(&mut input.r, &mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }
    let weights = NetworkWeights::from_tensors(&config, tensors)?;
    Ok((config, weights))
}

pub fn encode_checkpoint(config: &NetworkConfig, weights: &NetworkWeights) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_checkpoint_to(&mut out, config, weights)?;
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetworkConfig, NetworkWeights)> {
    read_checkpoint_from(bytes)
}

pub fn write_checkpoint(path: &Path, config: &NetworkConfig, weights: &NetworkWeights) -> Result<()> {
    let file = std::fs::File::create(path).in_file(path)?;
    write_checkpoint_to(BufWriter::new(file), config, weights).in_file(path)
}

pub fn read_checkpoint(path: &Path) -> Result<(NetworkConfig, NetworkWeights)> {
    let file = std::fs::File::open(path).in_file(path)?;
    read_checkpoint_from(BufReader::new(file)).in_file(path)
}
