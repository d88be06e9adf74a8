//! Command-line front end: `synth-gen`, `ingest`, `train` and `eval`.
//!
//! Every command resolves and checks its whole flag set before reading or
//! writing any file. Exit codes: 0 on success, 2 for usage errors, 1 for
//! failures while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use evsnn_core::events::{generate_synthetic, sample_batches, slice_into_batches, split_train_val, SynthParams};
use evsnn_core::training::{self, evaluate, seeded_rng, LossTargets};
use evsnn_core::{
    AdamParams, ConvBlockConfig, EncodingMode, EventBatch, LifParams, NetworkConfig, ResetMode, SensorGeometry,
    SurrogateSpec, TrainConfig,
};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::dataset::{read_dataset, write_dataset, FramedDataset};
use crate::error::{Context, Error};
use crate::event_csv::read_event_csv;
use crate::metrics::export_metrics;
use crate::parallel::ThreadPoolExecutor;

/// Side length of the `--small-geometry` sensor.
pub const SMALL_SIDE: usize = 32;
pub const SMALL_WINDOW_MS: u64 = 1000;
pub const SMALL_KERNEL: usize = 3;
pub const DEFAULT_WINDOW_MS: u64 = 3000;
pub const DEFAULT_KERNEL: usize = 5;

// Random streams derived from --seed. Training uses the streams defined in
// evsnn_core::training.
const SPLIT_STREAM: u64 = 10;
const SYNTH_STREAM: u64 = 11;
const SAMPLE_STREAM: u64 = 12;

#[derive(Debug, Parser)]
#[command(
    name = "evsnn",
    version,
    about = "Train convolutional spiking networks on event-camera data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic gesture dataset
    SynthGen(SynthGenArgs),
    /// Slice `<subject>_<label>.csv` recordings into a dataset file
    Ingest(IngestArgs),
    /// Train a network; writes a checkpoint and a metrics CSV
    Train(TrainArgs),
    /// Print loss and accuracy of a checkpoint on a dataset
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SensorArgs {
    /// Sensor width in pixels [default: 240]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=65536))]
    pub width: Option<u32>,
    /// Sensor height in pixels [default: 180]
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=65536))]
    pub height: Option<u32>,
    /// 32x32 sensor, 1 s batches and 3x3 kernels
    #[arg(long, conflicts_with_all = ["width", "height"])]
    pub small_geometry: bool,
}

impl SensorArgs {
    fn resolve(&self, default: SensorGeometry) -> SensorGeometry {
        if self.small_geometry {
            return SensorGeometry {
                width: SMALL_SIDE,
                height: SMALL_SIDE,
            };
        }
        SensorGeometry {
            width: self.width.map_or(default.width, |w| w as usize),
            height: self.height.map_or(default.height, |h| h as usize),
        }
    }

    fn explicit(&self) -> bool {
        self.small_geometry || self.width.is_some() || self.height.is_some()
    }

    fn window_ms(&self, flag: Option<u64>) -> u64 {
        flag.unwrap_or(if self.small_geometry {
            SMALL_WINDOW_MS
        } else {
            DEFAULT_WINDOW_MS
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Encoding {
    /// One channel per polarity
    PolaritySplit,
    /// A single channel marking any event
    Merged,
}

impl From<Encoding> for EncodingMode {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::PolaritySplit => EncodingMode::PolaritySplit,
            Encoding::Merged => EncodingMode::MergedSingleChannel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Reset {
    Subtract,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    All,
    Train,
    Val,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=evsnn_core::events::MAX_SYNTH_CLASSES as u64))]
    pub classes: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=65536))]
    pub per_class: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Batch duration in milliseconds [default: 3000, or 1000 with --small-geometry]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub duration_ms: Option<u64>,
    /// Events emitted per 5 ms tick
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..=1_000_000))]
    pub events_per_step: u64,
    /// Fraction of events scattered uniformly over the sensor
    #[arg(long, default_value_t = 0.05, value_parser = probability)]
    pub noise: f64,
    #[command(flatten)]
    pub sensor: SensorArgs,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of `<subject>_<label>.csv` recordings
    #[arg(long)]
    pub csv_dir: PathBuf,
    /// Batch window in milliseconds [default: 3000, or 1000 with --small-geometry]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub window_ms: Option<u64>,
    /// Batches sampled per recording
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub sample_k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sensor: SensorArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Per-class fraction of batches used for training
    #[arg(long, default_value_t = 0.7, value_parser = open_unit)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_weights: PathBuf,
    #[arg(long)]
    pub out_metrics: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 0.0005, value_parser = positive)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9, value_parser = decay)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999, value_parser = decay)]
    pub beta2: f64,
    /// Time bin width in milliseconds
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub bin_ms: u64,
    #[arg(long, value_enum, default_value_t = Encoding::PolaritySplit)]
    pub encoding: Encoding,
    /// Number of output neurons
    #[arg(long, default_value_t = 24, value_parser = clap::value_parser!(u64).range(2..=65536))]
    pub classes: u64,
    /// Filters per convolution block
    #[arg(long, value_delimiter = ',', default_value = "12,32,45", value_parser = clap::value_parser!(u64).range(1..))]
    pub filters: Vec<u64>,
    /// Square kernel size [default: 5, or 3 with --small-geometry]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub kernel: Option<u64>,
    /// Membrane decay
    #[arg(long, default_value_t = 0.5, value_parser = open_unit)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = Reset::Subtract)]
    pub reset: Reset,
    #[arg(long, default_value_t = 25.0, value_parser = positive)]
    pub surrogate_slope: f64,
    /// Keep the dataset order instead of reshuffling each epoch
    #[arg(long)]
    pub no_shuffle: bool,
    /// Worker threads; 0 uses one per core
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[command(flatten)]
    pub sensor: SensorArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub bin_ms: u64,
    /// Frame encoding [default: inferred from the checkpoint]
    #[arg(long, value_enum)]
    pub encoding: Option<Encoding>,
    /// Which part of the dataset to evaluate; `train` and `val` repeat the
    /// split made by `train` with the same --seed and --train-frac
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
    #[arg(long, default_value_t = 0.7, value_parser = open_unit)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[command(flatten)]
    pub sensor: SensorArgs,
}

fn parse_real(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not finite"))
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v = parse_real(s)?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not strictly between 0 and 1"))
    }
}

fn decay(s: &str) -> Result<f64, String> {
    let v = parse_real(s)?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1)"))
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let v = parse_real(s)?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = parse_real(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not positive"))
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl<E: Into<Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn distinct_paths(paths: &[(&str, &Path)]) -> Result<(), Failure> {
    for (i, (a, pa)) in paths.iter().enumerate() {
        for (b, pb) in &paths[i + 1..] {
            if pa == pb {
                return Err(Failure::Usage(format!(
                    "--{a} and --{b} name the same file {}",
                    pa.display()
                )));
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::SynthGen(a) => synth_gen(a, out),
        Command::Ingest(a) => ingest(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn synth_gen(args: &SynthGenArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let geometry = args.sensor.resolve(SensorGeometry::default());
    let mut params = SynthParams::new(
        geometry,
        args.classes as usize,
        args.sensor.window_ms(args.duration_ms) * 1000,
        args.events_per_step as usize,
    );
    params.noise = args.noise;

    let mut rng = seeded_rng(args.seed, SYNTH_STREAM);
    let mut batches = Vec::with_capacity((args.classes * args.per_class) as usize);
    for class in 0..args.classes as usize {
        for k in 0..args.per_class {
            let mut batch = generate_synthetic(class, &params, &mut rng)?;
            batch.subject = k as u16;
            batches.push(batch);
        }
    }
    write_dataset(&args.out, &batches)?;
    let _ = writeln!(out, "wrote {} batches to {}", batches.len(), args.out.display());
    Ok(())
}

/// Subject and label encoded in a `<subject>_<label>.csv` file name.
pub fn recording_metadata(path: &Path) -> Option<(u16, u16)> {
    let stem = path.file_stem()?.to_str()?;
    let (subject, label) = stem.split_once('_')?;
    Some((subject.parse().ok()?, label.parse().ok()?))
}

fn ingest(args: &IngestArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let geometry = args.sensor.resolve(SensorGeometry::default());
    let window = args.sensor.window_ms(args.window_ms) * 1000;
    if args.out.starts_with(&args.csv_dir) && args.out.extension().is_some_and(|e| e == "csv") {
        return Err(Failure::Usage("--out must not be a CSV file inside --csv-dir".into()));
    }

    let mut files = Vec::new();
    for entry in std::fs::read_dir(&args.csv_dir).in_file(&args.csv_dir)? {
        let path = entry.in_file(&args.csv_dir)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "csv") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Mismatch(format!("no .csv files in {}", args.csv_dir.display())).into());
    }

    let mut rng = seeded_rng(args.seed, SAMPLE_STREAM);
    let mut batches = Vec::new();
    for path in &files {
        let (subject, label) = recording_metadata(path)
            .ok_or_else(|| Error::Mismatch(format!("{}: file name is not <subject>_<label>.csv", path.display())))?;
        let events = read_event_csv(path, &geometry)?;
        let sliced = slice_into_batches(&events, window, label, subject).in_file(path)?;
        batches.extend(sample_batches(&sliced, args.sample_k as usize, &mut rng).in_file(path)?);
    }
    write_dataset(&args.out, &batches)?;
    let _ = writeln!(
        out,
        "wrote {} batches from {} recordings to {}",
        batches.len(),
        files.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug)]
struct TrainPlan {
    geometry: SensorGeometry,
    net: NetworkConfig,
    config: TrainConfig,
}

fn plan_train(args: &TrainArgs) -> Result<TrainPlan, Failure> {
    distinct_paths(&[
        ("data", &args.data),
        ("out-weights", &args.out_weights),
        ("out-metrics", &args.out_metrics),
    ])?;
    let geometry = args.sensor.resolve(SensorGeometry::default());
    let kernel = args.kernel.map_or(
        if args.sensor.small_geometry {
            SMALL_KERNEL
        } else {
            DEFAULT_KERNEL
        },
        |k| k as usize,
    );
    let reset = match args.reset {
        Reset::Subtract => ResetMode::Subtract,
        Reset::Zero => ResetMode::Zero,
    };
    let lif = LifParams::new(args.beta, args.threshold, reset).map_err(|e| Failure::Usage(e.to_string()))?;
    let net = NetworkConfig {
        input_channels: EncodingMode::from(args.encoding).channels(),
        input_height: geometry.height,
        input_width: geometry.width,
        // replaced by the batch duration once the data is read
        time_steps: 1,
        blocks: args
            .filters
            .iter()
            .map(|&f| ConvBlockConfig {
                out_channels: f as usize,
                kernel,
                lif,
            })
            .collect(),
        num_classes: args.classes as usize,
        output_lif: lif,
        surrogate: SurrogateSpec::new(args.surrogate_slope).map_err(|e| Failure::Usage(e.to_string()))?,
    };
    net.layout()
        .map_err(|e| Failure::Usage(format!("network does not fit the sensor: {e}")))?;
    let config = TrainConfig {
        epochs: args.epochs as usize,
        batch_size: args.batch_size as usize,
        seed: args.seed,
        shuffle: !args.no_shuffle,
        targets: LossTargets::default(),
        adam: AdamParams {
            learning_rate: args.lr,
            beta1: args.beta1,
            beta2: args.beta2,
            ..AdamParams::default()
        },
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(TrainPlan { geometry, net, config })
}

fn common_duration(batches: &[EventBatch]) -> Result<u64, Error> {
    let first = batches
        .first()
        .ok_or_else(|| Error::Mismatch("dataset is empty".into()))?;
    if let Some((i, b)) = batches.iter().enumerate().find(|(_, b)| b.duration != first.duration) {
        return Err(Error::Mismatch(format!(
            "batch durations differ: batch 0 lasts {} us, batch {i} lasts {} us",
            first.duration, b.duration
        )));
    }
    Ok(first.duration)
}

fn split(batches: Vec<EventBatch>, frac: f64, seed: u64) -> Result<(Vec<EventBatch>, Vec<EventBatch>), Error> {
    Ok(split_train_val(
        &batches,
        |b| b.label as usize,
        frac,
        &mut seeded_rng(seed, SPLIT_STREAM),
    )?)
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let TrainPlan {
        geometry,
        mut net,
        config,
    } = plan_train(args)?;
    let mode = EncodingMode::from(args.encoding);
    let bin = args.bin_ms * 1000;

    let batches = read_dataset(&args.data)?;
    net.time_steps = common_duration(&batches)
        .map_err(|e| e.in_file(&args.data))?
        .div_ceil(bin) as usize;
    let (train_batches, val_batches) = split(batches, args.train_frac, args.seed)?;
    if train_batches.is_empty() {
        return Err(Error::Mismatch("training split is empty; raise --train-frac or add data".into()).into());
    }
    let train_set = FramedDataset::new(train_batches, bin, mode, geometry, &net).in_file(&args.data)?;
    let val_set = if val_batches.is_empty() {
        None
    } else {
        Some(FramedDataset::new(val_batches, bin, mode, geometry, &net).in_file(&args.data)?)
    };
    let executor = ThreadPoolExecutor::new(args.threads)?;

    let outcome = training::train(&train_set, val_set.as_ref(), &config, &net, &executor, |row| {
        let _ = writeln!(
            out,
            "epoch {} iter {} loss {:.6} acc {:.4}",
            row.epoch, row.iteration, row.train_loss, row.train_accuracy
        );
        if let (Some(l), Some(a)) = (row.val_loss, row.val_accuracy) {
            let _ = writeln!(out, "epoch {} val_loss {l:.6} val_acc {a:.4}", row.epoch);
        }
    })?;

    write_checkpoint(&args.out_weights, &net, &outcome.weights)?;
    export_metrics(&args.out_metrics, &outcome.history)?;
    let _ = writeln!(
        out,
        "wrote {} and {}",
        args.out_weights.display(),
        args.out_metrics.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    distinct_paths(&[("data", &args.data), ("weights", &args.weights)])?;
    let bin = args.bin_ms * 1000;

    let (net, weights) = read_checkpoint(&args.weights)?;
    let stored = SensorGeometry {
        width: net.input_width,
        height: net.input_height,
    };
    let geometry = if args.sensor.explicit() {
        args.sensor.resolve(stored)
    } else {
        stored
    };
    let mode = match args.encoding {
        Some(e) => e.into(),
        None if net.input_channels == 1 => EncodingMode::MergedSingleChannel,
        None => EncodingMode::PolaritySplit,
    };

    let batches = read_dataset(&args.data)?;
    let batches = match args.split {
        Split::All => batches,
        Split::Train => split(batches, args.train_frac, args.seed)?.0,
        Split::Val => split(batches, args.train_frac, args.seed)?.1,
    };
    if batches.is_empty() {
        return Err(Error::Mismatch("nothing to evaluate: the selected split is empty".into()).into());
    }
    let set = FramedDataset::new(batches, bin, mode, geometry, &net)?;
    let executor = ThreadPoolExecutor::new(args.threads)?;
    let result = evaluate(&set, &weights, &net, &LossTargets::default(), &executor)?;
    let _ = writeln!(out, "loss={:.6} accuracy={:.3}", result.loss, result.accuracy);
    Ok(())
}
