//! Event streams, their slicing into labelled batches, and binning into
//! binary spike frames.
//!
//! Time is in integer microseconds. Windows and bins are half-open,
//! `[k * w, (k + 1) * w)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    /// Brightness decrease, encoded 0.
    Off,
    /// Brightness increase, encoded 1.
    On,
}

impl Polarity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub timestamp: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(timestamp: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Event {
            timestamp,
            x,
            y,
            polarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorGeometry {
    pub width: usize,
    pub height: usize,
}

impl SensorGeometry {
    /// Pixel coordinates are stored as `u16`, which bounds the extents.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        let max = u16::MAX as usize + 1;
        if width == 0 || height == 0 || width > max || height > max {
            return Err(Error::InvalidArgument(format!(
                "sensor geometry {width}x{height} must have extents in 1..={max}"
            )));
        }
        Ok(SensorGeometry { width, height })
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn check(&self, event: &Event) -> Result<()> {
        if self.contains(event.x, event.y) {
            Ok(())
        } else {
            Err(Error::Range(format!(
                "pixel ({}, {}) outside {}x{} sensor",
                event.x, event.y, self.width, self.height
            )))
        }
    }
}

impl Default for SensorGeometry {
    /// DAVIS240C resolution.
    fn default() -> Self {
        SensorGeometry {
            width: 240,
            height: 180,
        }
    }
}

/// A labelled, fixed-duration slice of a recording with timestamps relative
/// to its own start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventBatch {
    pub label: u16,
    pub subject: u16,
    pub duration: u64,
    pub events: Vec<Event>,
}

impl EventBatch {
    /// Checks ordering and that every timestamp falls inside the duration.
    pub fn validate(&self) -> Result<()> {
        check_sorted(&self.events)?;
        if let Some(last) = self.events.last() {
            if last.timestamp >= self.duration {
                return Err(Error::Range(format!(
                    "event at {} us in a batch lasting {} us",
                    last.timestamp, self.duration
                )));
            }
        }
        Ok(())
    }
}

fn check_sorted(events: &[Event]) -> Result<()> {
    match events.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        Some(i) => Err(Error::Unsorted { index: i + 1 }),
        None => Ok(()),
    }
}

/// Cuts a time-ordered recording into consecutive windows of `window` us.
///
/// Each window that holds at least one event becomes a batch whose
/// timestamps are rebased to the window start; empty windows produce nothing.
pub fn slice_into_batches(events: &[Event], window: u64, label: u16, subject: u16) -> Result<Vec<EventBatch>> {
    if window == 0 {
        return Err(Error::InvalidArgument("batch window must be positive".into()));
    }
    check_sorted(events)?;
    let mut batches: Vec<EventBatch> = Vec::new();
    let mut current: Option<u64> = None;
    for ev in events {
        let k = ev.timestamp / window;
        if current != Some(k) {
            current = Some(k);
            batches.push(EventBatch {
                label,
                subject,
                duration: window,
                events: Vec::new(),
            });
        }
        let start = k * window;
        // current was just set, so a batch exists
        let batch = batches.last_mut().expect("batch opened above");
        batch.events.push(Event {
            timestamp: ev.timestamp - start,
            ..*ev
        });
    }
    Ok(batches)
}

/// Picks `k` distinct batches uniformly without replacement.
pub fn sample_batches<R: Rng + ?Sized>(batches: &[EventBatch], k: usize, rng: &mut R) -> Result<Vec<EventBatch>> {
    if k > batches.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {k} batches from {}",
            batches.len()
        )));
    }
    Ok(rand::seq::index::sample(rng, batches.len(), k)
        .into_iter()
        .map(|i| batches[i].clone())
        .collect())
}

/// Per-class shuffled split: each class contributes
/// `floor(train_fraction * n_class)` items to training and the rest to
/// validation. Classes are visited in ascending label order.
pub fn split_train_val<T: Clone, R: Rng + ?Sized>(
    items: &[T],
    label_of: impl Fn(&T) -> usize,
    train_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_class.entry(label_of(item)).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class {
        idx.shuffle(rng);
        let n_train = floor_fraction(idx.len(), train_fraction);
        train.extend(idx[..n_train].iter().map(|&i| items[i].clone()));
        val.extend(idx[n_train..].iter().map(|&i| items[i].clone()));
    }
    Ok((train, val))
}

fn floor_fraction(n: usize, fraction: f64) -> usize {
    // floor() without libm; fraction*n is non-negative
    ((fraction * n as f64) as usize).min(n)
}

/// One channel per polarity, or a single channel marking any event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncodingMode {
    MergedSingleChannel,
    #[default]
    PolaritySplit,
}

impl EncodingMode {
    pub fn channels(self) -> usize {
        match self {
            EncodingMode::MergedSingleChannel => 1,
            EncodingMode::PolaritySplit => 2,
        }
    }
}

/// Binary spike frames laid out `[T, C, H, W]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameTensor {
    dims: [usize; 4],
    data: Vec<u8>,
}

impl FrameTensor {
    pub fn zeros(dims: [usize; 4]) -> Self {
        FrameTensor {
            dims,
            data: vec![0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn time_steps(&self) -> usize {
        self.dims[0]
    }

    fn offset(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, h, w] = self.dims;
        ((t * cs + c) * h + y) * w + x
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> u8 {
        self.data[self.offset(t, c, y, x)]
    }

    pub fn set(&mut self, t: usize, c: usize, y: usize, x: usize) {
        let i = self.offset(t, c, y, x);
        self.data[i] = 1;
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Step `t` as a `[C, H, W]` tensor of 0.0 / 1.0.
    pub fn frame(&self, t: usize) -> Tensor {
        let [_, c, h, w] = self.dims;
        let n = c * h * w;
        let data = self.data[t * n..(t + 1) * n].iter().map(|&v| v as f64).collect();
        Tensor::from_vec(&[c, h, w], data).expect("frame extents are positive")
    }
}

/// Rasterises a batch into `ceil(duration / bin_window)` binary frames.
/// Repeated events in one cell saturate at 1.
pub fn bin_to_frames(
    batch: &EventBatch,
    bin_window: u64,
    mode: EncodingMode,
    geometry: &SensorGeometry,
) -> Result<FrameTensor> {
    if bin_window == 0 {
        return Err(Error::InvalidArgument("bin window must be positive".into()));
    }
    if batch.duration == 0 {
        return Err(Error::InvalidArgument("batch duration must be positive".into()));
    }
    batch.validate()?;
    let steps = batch.duration.div_ceil(bin_window) as usize;
    let mut frames = FrameTensor::zeros([steps, mode.channels(), geometry.height, geometry.width]);
    for ev in &batch.events {
        geometry.check(ev)?;
        let t = (ev.timestamp / bin_window) as usize;
        let c = match mode {
            EncodingMode::MergedSingleChannel => 0,
            EncodingMode::PolaritySplit => ev.polarity.bit() as usize,
        };
        frames.set(t, c, ev.y as usize, ev.x as usize);
    }
    Ok(frames)
}

/// Parameters of the synthetic gesture generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub geometry: SensorGeometry,
    pub num_classes: usize,
    pub duration: u64,
    /// Events emitted per motion tick.
    pub events_per_step: usize,
    /// Motion tick length in microseconds.
    pub tick: u64,
    /// Fraction of events scattered uniformly over the sensor as noise.
    pub noise: f64,
}

impl SynthParams {
    pub fn new(geometry: SensorGeometry, num_classes: usize, duration: u64, events_per_step: usize) -> Self {
        SynthParams {
            geometry,
            num_classes,
            duration,
            events_per_step,
            tick: 5_000,
            noise: 0.05,
        }
    }
}

const GLYPH: usize = 3;

/// Upper bound on synthetic classes; one distinct glyph each.
pub const MAX_SYNTH_CLASSES: usize = 256;

/// 3x3 occupancy pattern for a class. Masks are visited in the order of an
/// odd-multiplier permutation of 0..512 so neighbouring classes differ in
/// several cells; masks with fewer than three lit cells are skipped.
fn glyph(class_id: usize) -> [bool; GLYPH * GLYPH] {
    let mask = (0..512usize)
        .map(|i| (i * 317) % 512)
        .filter(|m| m.count_ones() >= 3)
        .nth(class_id)
        .unwrap_or(511);
    let mut cells = [false; GLYPH * GLYPH];
    for (i, c) in cells.iter_mut().enumerate() {
        *c = mask & (1 << i) != 0;
    }
    cells
}

/// Emits a class-specific silhouette sweeping left and right across the
/// sensor, sampled as a sorted event stream.
///
/// The silhouette is a 3x3 grid of blocks whose occupancy pattern and
/// vertical placement depend on the class; pixels on the leading side of a
/// block fire `On`, the trailing side `Off`.
pub fn generate_synthetic<R: Rng + ?Sized>(class_id: usize, params: &SynthParams, rng: &mut R) -> Result<EventBatch> {
    if params.duration == 0 {
        return Err(Error::InvalidArgument("synthetic duration must be positive".into()));
    }
    if class_id >= params.num_classes {
        return Err(Error::Range(format!(
            "class {class_id} not below class count {}",
            params.num_classes
        )));
    }
    if params.num_classes > MAX_SYNTH_CLASSES || params.tick == 0 {
        return Err(Error::InvalidArgument("unsupported synthetic parameters".into()));
    }
    let SensorGeometry { width, height } = params.geometry;
    let cells = glyph(class_id);
    let block = (width.min(height) / 8).max(1);
    let size = block * GLYPH;
    let span = width.saturating_sub(size);
    let vertical_room = height.saturating_sub(size);
    let top = if params.num_classes > 1 {
        vertical_room * (class_id % 4) / 3
    } else {
        vertical_room / 2
    };
    let period = (params.duration as f64).max(1.0) / 1.5;
    let lit: Vec<(usize, usize)> = (0..GLYPH * GLYPH)
        .filter(|&i| cells[i])
        .map(|i| (i / GLYPH, i % GLYPH))
        .collect();

    let mut events = Vec::new();
    let mut t0 = 0;
    while t0 < params.duration {
        let t_end = (t0 + params.tick).min(params.duration);
        let phase = libm::sin(2.0 * core::f64::consts::PI * t0 as f64 / period);
        let left = ((phase + 1.0) * 0.5 * span as f64) as usize;
        let moving_right = libm::cos(2.0 * core::f64::consts::PI * t0 as f64 / period) >= 0.0;
        for _ in 0..params.events_per_step {
            let ts = rng.gen_range(t0..t_end);
            let (x, y, polarity) = if rng.gen_bool(params.noise) {
                let pol = if rng.gen_bool(0.5) { Polarity::On } else { Polarity::Off };
                (rng.gen_range(0..width), rng.gen_range(0..height), pol)
            } else {
                let (row, col) = lit[rng.gen_range(0..lit.len())];
                let dx = rng.gen_range(0..block);
                let dy = rng.gen_range(0..block);
                let leading = (dx >= block / 2) == moving_right;
                let pol = if leading { Polarity::On } else { Polarity::Off };
                let x = (left + col * block + dx).min(width - 1);
                let y = (top + row * block + dy).min(height - 1);
                (x, y, pol)
            };
            events.push(Event::new(ts, x as u16, y as u16, polarity));
        }
        t0 = t_end;
    }
    events.sort_by_key(|e| e.timestamp);
    Ok(EventBatch {
        label: class_id as u16,
        subject: 0,
        duration: params.duration,
        events,
    })
}
