//! `EVDS` dataset files and a lazily binned view over their batches.
//!
//! Layout, little-endian: magic `EVDS`, version `u16`, then records until
//! end of file. Each record is label `u16`, subject `u16`, duration `u64`,
//! event count `u64`, then per event timestamp `u64`, x `u16`, y `u16`,
//! polarity `u8`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use evsnn_core::events::bin_to_frames;
use evsnn_core::training::Dataset;
use evsnn_core::{EncodingMode, Event, EventBatch, FrameTensor, NetworkConfig, Polarity, SensorGeometry};

use crate::error::{Context, Error, Result};

pub const MAGIC: [u8; 4] = *b"EVDS";
pub const VERSION: u16 = 1;
const EVENT_BYTES: usize = 13;

pub fn write_dataset_to<W: Write>(mut w: W, batches: &[EventBatch]) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for batch in batches {
        batch.validate()?;
        w.write_all(&batch.label.to_le_bytes())?;
        w.write_all(&batch.subject.to_le_bytes())?;
        w.write_all(&batch.duration.to_le_bytes())?;
        w.write_all(&(batch.events.len() as u64).to_le_bytes())?;
        for ev in &batch.events {
            w.write_all(&ev.timestamp.to_le_bytes())?;
            w.write_all(&ev.x.to_le_bytes())?;
            w.write_all(&ev.y.to_le_bytes())?;
            w.write_all(&[ev.polarity.bit()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from<R: Read>(mut r: R) -> Result<Vec<EventBatch>> {
    let mut header = [0u8; 6];
    read_exact(&mut r, &mut header, "header")?;
    if header[..4] != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let mut batches = Vec::new();
    loop {
        let mut head = [0u8; 20];
        match fill(&mut r, &mut head)? {
            0 => break,
            20 => {}
            _ => return Err(truncated("batch header")),
        }
        let label = u16::from_le_bytes([head[0], head[1]]);
        let subject = u16::from_le_bytes([head[2], head[3]]);
        let duration = u64::from_le_bytes(head[4..12].try_into().unwrap());
        let count = u64::from_le_bytes(head[12..20].try_into().unwrap());
        let bytes = count
            .checked_mul(EVENT_BYTES as u64)
            .ok_or_else(|| Error::Format(format!("event count {count} too large")))?;
        let mut raw = Vec::new();
        (&mut r).take(bytes).read_to_end(&mut raw)?;
        if raw.len() as u64 != bytes {
            return Err(truncated("event records"));
        }
        let events = raw
            .chunks_exact(EVENT_BYTES)
            .map(|c| {
                let polarity = Polarity::from_bit(c[12])
                    .ok_or_else(|| Error::Format(format!("polarity byte {} is not 0 or 1", c[12])))?;
                Ok(Event::new(
                    u64::from_le_bytes(c[..8].try_into().unwrap()),
                    u16::from_le_bytes([c[8], c[9]]),
                    u16::from_le_bytes([c[10], c[11]]),
                    polarity,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = EventBatch {
            label,
            subject,
            duration,
            events,
        };
        batch
            .validate()
            .map_err(|e| Error::Format(format!("batch {}: {e}", batches.len())))?;
        batches.push(batch);
    }
    Ok(batches)
}

pub fn encode_dataset(batches: &[EventBatch]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_dataset_to(&mut out, batches)?;
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<EventBatch>> {
    read_dataset_from(bytes)
}

pub fn write_dataset(path: &Path, batches: &[EventBatch]) -> Result<()> {
    let file = std::fs::File::create(path).in_file(path)?;
    write_dataset_to(BufWriter::new(file), batches).in_file(path)
}

pub fn read_dataset(path: &Path) -> Result<Vec<EventBatch>> {
    let file = std::fs::File::open(path).in_file(path)?;
    read_dataset_from(BufReader::new(file)).in_file(path)
}

/// Reads until `buf` is full or the stream ends; returns the bytes read.
pub(crate) fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(n)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    if fill(r, buf)? != buf.len() {
        return Err(truncated(what));
    }
    Ok(())
}

pub(crate) fn truncated(what: &str) -> Error {
    Error::Format(format!("truncated {what}"))
}

/// Batches rasterised on demand for one network configuration.
#[derive(Debug, Clone)]
pub struct FramedDataset {
    batches: Vec<EventBatch>,
    bin_window: u64,
    mode: EncodingMode,
    geometry: SensorGeometry,
}

impl FramedDataset {
    /// Checks every batch against the network input (time steps, channels,
    /// sensor size, labels) so that training cannot fail part-way.
    pub fn new(
        batches: Vec<EventBatch>,
        bin_window: u64,
        mode: EncodingMode,
        geometry: SensorGeometry,
        net: &NetworkConfig,
    ) -> Result<Self> {
        if bin_window == 0 {
            return Err(Error::Mismatch("bin window must be positive".into()));
        }
        check_dim("input channels", net.input_channels, mode.channels())?;
        check_dim("input height", net.input_height, geometry.height)?;
        check_dim("input width", net.input_width, geometry.width)?;
        for (i, batch) in batches.iter().enumerate() {
            let steps = batch.duration.div_ceil(bin_window) as usize;
            check_dim("time steps", net.time_steps, steps)?;
            if batch.label as usize >= net.num_classes {
                return Err(Error::Mismatch(format!(
                    "batch {i}: label {} but the network has {} classes",
                    batch.label, net.num_classes
                )));
            }
            if let Some(ev) = batch.events.iter().find(|e| !geometry.contains(e.x, e.y)) {
                return Err(Error::Mismatch(format!(
                    "batch {i}: event at x={}, y={} outside the {}x{} sensor",
                    ev.x, ev.y, geometry.width, geometry.height
                )));
            }
        }
        Ok(FramedDataset {
            batches,
            bin_window,
            mode,
            geometry,
        })
    }

    pub fn batches(&self) -> &[EventBatch] {
        &self.batches
    }
}

fn check_dim(name: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Mismatch(format!(
            "{name} mismatch: network expects {expected}, data gives {found}"
        )));
    }
    Ok(())
}

impl Dataset for FramedDataset {
    fn len(&self) -> usize {
        self.batches.len()
    }

    fn label(&self, index: usize) -> usize {
        self.batches[index].label as usize
    }

    fn frames(&self, index: usize) -> evsnn_core::Result<FrameTensor> {
        bin_to_frames(&self.batches[index], self.bin_window, self.mode, &self.geometry)
    }
}
