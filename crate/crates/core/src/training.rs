//! Spike-count MSE loss, Adam, and the mini-batch training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::events::FrameTensor;
use crate::network::{self, init_weights, NetworkConfig, NetworkWeights};
use crate::tensor::Tensor;

/// Target firing rates for the correct class and for every other class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTargets {
    pub correct_rate: f64,
    pub incorrect_rate: f64,
}

impl LossTargets {
    pub fn new(correct_rate: f64, incorrect_rate: f64) -> Result<Self> {
        for r in [correct_rate, incorrect_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("target rate {r} outside [0, 1]")));
            }
        }
        Ok(LossTargets {
            correct_rate,
            incorrect_rate,
        })
    }
}

impl Default for LossTargets {
    fn default() -> Self {
        LossTargets {
            correct_rate: 0.8,
            incorrect_rate: 0.2,
        }
    }
}

/// MSE between per-neuron firing rates and target rates.
///
/// Each entry of `trains` is one sample's output spikes, `[T, K]`. With
/// `rate = count / T`, the loss is the mean of `(rate - target)^2` over
/// samples and classes. The returned gradients are with respect to every
/// individual spike and have the same shapes as `trains`.
pub fn spike_count_loss(trains: &[Tensor], labels: &[usize], targets: &LossTargets) -> Result<(f64, Vec<Tensor>)> {
    if trains.len() != labels.len() || trains.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} spike trains for {} labels",
            trains.len(),
            labels.len()
        )));
    }
    let shape = trains[0].shape().to_vec();
    let [steps, k] = shape[..] else {
        return Err(Error::shape("spike_count_loss", &[0, 0], &shape));
    };
    let batch = trains.len();
    let norm = (batch * k) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(batch);
    for (train, &label) in trains.iter().zip(labels) {
        if train.shape() != &shape[..] {
            return Err(Error::shape("spike_count_loss", &shape, train.shape()));
        }
        if label >= k {
            return Err(Error::Range(format!("label {label} with {k} output neurons")));
        }
        let mut counts = vec![0.0; k];
        for row in train.data().chunks_exact(k) {
            for (c, s) in counts.iter_mut().zip(row) {
                *c += s;
            }
        }
        let mut grad = Tensor::zeros(&shape);
        let mut per_class = vec![0.0; k];
        for (c, count) in counts.iter().enumerate() {
            let target = if c == label {
                targets.correct_rate
            } else {
                targets.incorrect_rate
            };
            let diff = count / steps as f64 - target;
            loss += diff * diff / norm;
            per_class[c] = 2.0 * diff / (steps as f64 * norm);
        }
        for row in grad.data_mut().chunks_exact_mut(k) {
            row.copy_from_slice(&per_class);
        }
        grads.push(grad);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !betas_ok || !positive(self.learning_rate) || !positive(self.epsilon) {
            return Err(Error::InvalidArgument(format!("invalid Adam parameters {self:?}")));
        }
        Ok(())
    }
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-element moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    params: AdamParams,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    beta1_pow: f64,
    beta2_pow: f64,
    steps: u64,
}

impl Adam {
    pub fn new(params: AdamParams) -> Result<Self> {
        params.validate()?;
        Ok(Adam {
            params,
            first: Vec::new(),
            second: Vec::new(),
            beta1_pow: 1.0,
            beta2_pow: 1.0,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn step(&mut self, weights: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if weights.len() != grads.len() {
            return Err(Error::InvalidArgument("weight and gradient counts differ".into()));
        }
        for (w, g) in weights.iter().zip(grads) {
            if w.shape() != g.shape() {
                return Err(Error::shape("adam_step", w.shape(), g.shape()));
            }
        }
        if !grads.iter().all(Tensor::is_finite) {
            return Err(Error::NonFinite("gradient"));
        }
        if self.first.is_empty() {
            self.first = weights.iter().map(|w| vec![0.0; w.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != weights.len()
            || self.first.iter().zip(weights.iter()).any(|(m, w)| m.len() != w.len())
        {
            return Err(Error::InvalidArgument("optimizer state does not match weights".into()));
        }

        let AdamParams {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        self.steps += 1;
        self.beta1_pow *= beta1;
        self.beta2_pow *= beta2;
        let (c1, c2) = (1.0 - self.beta1_pow, 1.0 - self.beta2_pow);
        for (((w, g), m), v) in weights
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((wv, &gv), mv), vv) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *wv -= lr * m_hat / (libm::sqrt(v_hat) + epsilon);
            }
        }
        Ok(())
    }
}

/// Runs independent per-item jobs and returns their results in index order.
pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Labelled samples whose frames may be produced on demand.
pub trait Dataset: Sync {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn frames(&self, index: usize) -> Result<FrameTensor>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: FrameTensor,
    pub label: usize,
}

impl Dataset for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn label(&self, index: usize) -> usize {
        self[index].label
    }

    fn frames(&self, index: usize) -> Result<FrameTensor> {
        Ok(self[index].frames.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub targets: LossTargets,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 25,
            seed: 0,
            shuffle: true,
            targets: LossTargets::default(),
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        self.adam.validate()
    }
}

/// One line of training history. Validation fields are filled on the last
/// iteration of each epoch when a validation set is supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub iteration: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub history: Vec<MetricsRow>,
}

/// Mini-batches per epoch when the trailing partial batch is kept.
pub fn iterations_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size)
}

/// Independent random stream `stream` derived from `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const INIT_STREAM: u64 = 1;
pub const SHUFFLE_STREAM: u64 = 2;

struct SamplePass {
    loss: f64,
    correct: bool,
    grads: NetworkWeights,
}

fn sample_pass<D: Dataset + ?Sized>(
    data: &D,
    index: usize,
    weights: &NetworkWeights,
    net: &NetworkConfig,
    targets: &LossTargets,
    batch: usize,
) -> Result<SamplePass> {
    let frames = data.frames(index)?;
    let label = data.label(index);
    let record = network::forward(&frames, weights, net)?;
    let (loss, mut grads) = spike_count_loss(core::slice::from_ref(&record.output_spikes), &[label], targets)?;
    // per-sample mean -> contribution to the batch mean
    let scale = 1.0 / batch as f64;
    grads[0].scale(scale);
    let weight_grads = network::backward(&record, &grads[0], weights, net)?;
    Ok(SamplePass {
        loss: loss * scale,
        correct: network::predict(&record.output_spikes) == label,
        grads: weight_grads,
    })
}

/// Trains from freshly initialised weights (seeded by `config.seed`).
pub fn train<D, V, E>(
    train_set: &D,
    val_set: Option<&V>,
    config: &TrainConfig,
    net: &NetworkConfig,
    executor: &E,
    observer: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome>
where
    D: Dataset + ?Sized,
    V: Dataset + ?Sized,
    E: Executor,
{
    let weights = init_weights(net, &mut seeded_rng(config.seed, INIT_STREAM))?;
    train_from(weights, train_set, val_set, config, net, executor, observer)
}

/// Like [`train`] but starting from the given weights.
pub fn train_from<D, V, E>(
    mut weights: NetworkWeights,
    train_set: &D,
    val_set: Option<&V>,
    config: &TrainConfig,
    net: &NetworkConfig,
    executor: &E,
    mut observer: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome>
where
    D: Dataset + ?Sized,
    V: Dataset + ?Sized,
    E: Executor,
{
    config.validate()?;
    net.layout()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut adam = Adam::new(config.adam)?;
    let mut shuffle_rng = seeded_rng(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut iteration = 0;

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let batches = iterations_per_epoch(order.len(), config.batch_size);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let passes = executor.map(chunk.len(), |j| {
                sample_pass(train_set, chunk[j], &weights, net, &config.targets, chunk.len())
            });
            let mut loss = 0.0;
            let mut correct = 0usize;
            let mut total: Option<NetworkWeights> = None;
            for pass in passes {
                let pass = pass?;
                loss += pass.loss;
                correct += pass.correct as usize;
                match total.as_mut() {
                    Some(t) => t.add_assign(&pass.grads)?,
                    None => total = Some(pass.grads),
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let grads = total.expect("mini-batches are never empty");
            adam.step(weights.tensors_mut(), grads.tensors())?;
            iteration += 1;

            let mut row = MetricsRow {
                epoch,
                iteration,
                train_loss: loss,
                train_accuracy: correct as f64 / chunk.len() as f64,
                val_loss: None,
                val_accuracy: None,
            };
            if b + 1 == batches {
                if let Some(val) = val_set.filter(|v| !v.is_empty()) {
                    let e = evaluate(val, &weights, net, &config.targets, executor)?;
                    row.val_loss = Some(e.loss);
                    row.val_accuracy = Some(e.accuracy);
                }
            }
            observer(&row);
            history.push(row);
        }
    }
    Ok(TrainOutcome { weights, history })
}

/// Loss and accuracy over a whole dataset without touching the weights.
pub fn evaluate<D, E>(
    data: &D,
    weights: &NetworkWeights,
    net: &NetworkConfig,
    targets: &LossTargets,
    executor: &E,
) -> Result<Evaluation>
where
    D: Dataset + ?Sized,
    E: Executor,
{
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let outputs = executor.map(data.len(), |i| {
        let frames = data.frames(i)?;
        Ok(network::forward(&frames, weights, net)?.output_spikes)
    });
    let trains: Vec<Tensor> = outputs.into_iter().collect::<Result<_>>()?;
    let labels: Vec<usize> = (0..data.len()).map(|i| data.label(i)).collect();
    let (loss, _) = spike_count_loss(&trains, &labels, targets)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("evaluation loss"));
    }
    let correct = trains
        .iter()
        .zip(&labels)
        .filter(|(t, &l)| network::predict(t) == l)
        .count();
    Ok(Evaluation {
        loss,
        accuracy: correct as f64 / data.len() as f64,
    })
}
