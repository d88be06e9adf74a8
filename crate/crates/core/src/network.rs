//! The convolutional spiking network: a stack of conv -> 2x2 max-pool -> LIF
//! blocks, then a fully connected layer feeding LIF output neurons.
//!
//! Membranes start at zero for every sample and carry across its time steps.
//! The backward pass walks the layers in reverse, running each layer's
//! reverse-time LIF recurrence and summing weight gradients over all steps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::events::FrameTensor;
use crate::lif::{lif_sequence_backward, Firing, LifParams, LifState, SurrogateSpec};
use crate::tensor::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, flatten, linear_backward, linear_forward,
    maxpool2d_backward, maxpool2d_forward, unflatten, ConvSpec, PoolIndices, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvBlockConfig {
    pub out_channels: usize,
    /// Square kernel extent.
    pub kernel: usize,
    pub lif: LifParams,
}

impl ConvBlockConfig {
    pub fn new(out_channels: usize, kernel: usize) -> Self {
        ConvBlockConfig {
            out_channels,
            kernel,
            lif: LifParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub time_steps: usize,
    pub blocks: Vec<ConvBlockConfig>,
    pub num_classes: usize,
    pub output_lif: LifParams,
    pub surrogate: SurrogateSpec,
}

impl Default for NetworkConfig {
    /// 2x180x240 input over 30 steps; 12, 32 and 45 filters of 5x5; 24
    /// output neurons.
    fn default() -> Self {
        NetworkConfig {
            input_channels: 2,
            input_height: 180,
            input_width: 240,
            time_steps: 30,
            blocks: vec![
                ConvBlockConfig::new(12, 5),
                ConvBlockConfig::new(32, 5),
                ConvBlockConfig::new(45, 5),
            ],
            num_classes: 24,
            output_lif: LifParams::default(),
            surrogate: SurrogateSpec::default(),
        }
    }
}

/// Shapes of one conv block as seen by a particular input geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub conv: ConvSpec,
    pub input: [usize; 3],
    pub conv_out: [usize; 3],
    pub pooled: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub blocks: Vec<BlockLayout>,
    pub flatten_dim: usize,
}

impl NetworkConfig {
    /// Validates the configuration and derives every intermediate shape.
    pub fn layout(&self) -> Result<Layout> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.time_steps == 0 || self.input_channels == 0 {
            return Err(Error::Config("time steps and input channels must be positive".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("at least one conv block is required".into()));
        }
        self.output_lif.validate()?;
        self.surrogate.validate()?;

        let mut shape = [self.input_channels, self.input_height, self.input_width];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            block.lif.validate()?;
            if block.out_channels == 0 || block.kernel == 0 {
                return Err(Error::Config(format!("block {}: zero filters or kernel size", i + 1)));
            }
            let conv = ConvSpec::new(shape[0], block.out_channels, block.kernel);
            let (h, w) = conv.output_hw(shape[1], shape[2]).ok_or_else(|| {
                Error::Config(format!(
                    "block {} convolution: {k}x{k} kernel does not fit a {}x{} input",
                    i + 1,
                    shape[1],
                    shape[2],
                    k = block.kernel
                ))
            })?;
            if h < 2 || w < 2 {
                return Err(Error::Config(format!(
                    "block {} pooling: 2x2 pool needs at least 2x2, convolution left {h}x{w}",
                    i + 1
                )));
            }
            let conv_out = [block.out_channels, h, w];
            let pooled = [block.out_channels, h / 2, w / 2];
            blocks.push(BlockLayout {
                conv,
                input: shape,
                conv_out,
                pooled,
            });
            shape = pooled;
        }
        Ok(Layout {
            blocks,
            flatten_dim: shape.iter().product(),
        })
    }

    pub fn frame_dims(&self) -> [usize; 4] {
        [
            self.time_steps,
            self.input_channels,
            self.input_height,
            self.input_width,
        ]
    }

    /// Shapes of the weight tensors in declaration order: each block's kernel
    /// and bias, then the FC weight and bias.
    pub fn weight_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let layout = self.layout()?;
        let mut shapes = Vec::new();
        for b in &layout.blocks {
            shapes.push(b.conv.kernel_shape().to_vec());
            shapes.push(vec![b.conv.out_channels]);
        }
        shapes.push(vec![self.num_classes, layout.flatten_dim]);
        shapes.push(vec![self.num_classes]);
        Ok(shapes)
    }
}

/// All trainable tensors, in [`NetworkConfig::weight_shapes`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    tensors: Vec<Tensor>,
}

impl NetworkWeights {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        Ok(NetworkWeights {
            tensors: config.weight_shapes()?.iter().map(|s| Tensor::zeros(s)).collect(),
        })
    }

    pub fn from_tensors(config: &NetworkConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = config.weight_shapes()?;
        if shapes.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weight tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (s, t) in shapes.iter().zip(&tensors) {
            if t.shape() != &s[..] {
                return Err(Error::shape("NetworkWeights", s, t.shape()));
            }
        }
        Ok(NetworkWeights { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn conv_kernel(&self, block: usize) -> &Tensor {
        &self.tensors[2 * block]
    }

    pub fn conv_bias(&self, block: usize) -> &Tensor {
        &self.tensors[2 * block + 1]
    }

    pub fn fc_weight(&self) -> &Tensor {
        &self.tensors[self.tensors.len() - 2]
    }

    pub fn fc_bias(&self) -> &Tensor {
        &self.tensors[self.tensors.len() - 1]
    }

    pub fn num_blocks(&self) -> usize {
        (self.tensors.len() - 2) / 2
    }

    pub fn add_assign(&mut self, other: &NetworkWeights) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::InvalidArgument("weight sets differ in length".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(factor));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))` for kernels and the FC
/// weight; biases start at zero.
pub fn init_weights<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<NetworkWeights> {
    let mut weights = NetworkWeights::zeros(config)?;
    for t in weights.tensors.iter_mut() {
        if t.shape().len() < 2 {
            continue;
        }
        let fan_in: usize = t.shape()[1..].iter().product();
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
    }
    Ok(weights)
}

/// What one LIF layer did over a sample, indexed by time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerTrace {
    pub pre_reset: Vec<Tensor>,
    pub spikes: Vec<Tensor>,
    /// Max-pool winners feeding this layer; empty for the output layer.
    pub pools: Vec<PoolIndices>,
}

/// Everything BPTT needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub inputs: Vec<Tensor>,
    pub blocks: Vec<LayerTrace>,
    pub output: LayerTrace,
    /// `[T, num_classes]`.
    pub output_spikes: Tensor,
}

impl ForwardRecord {
    pub fn time_steps(&self) -> usize {
        self.inputs.len()
    }
}

pub fn forward(frames: &FrameTensor, weights: &NetworkWeights, config: &NetworkConfig) -> Result<ForwardRecord> {
    forward_with(frames, weights, config, Firing::Hard)
}

pub fn forward_with(
    frames: &FrameTensor,
    weights: &NetworkWeights,
    config: &NetworkConfig,
    firing: Firing,
) -> Result<ForwardRecord> {
    let layout = config.layout()?;
    if frames.dims() != config.frame_dims() {
        return Err(Error::shape("forward", &config.frame_dims(), &frames.dims()));
    }
    if weights.num_blocks() != layout.blocks.len() {
        return Err(Error::InvalidArgument(format!(
            "weights have {} conv blocks, configuration has {}",
            weights.num_blocks(),
            layout.blocks.len()
        )));
    }
    let steps = config.time_steps;
    let surrogate = config.surrogate;
    let mut states: Vec<LifState> = layout.blocks.iter().map(|b| LifState::zeros(&b.pooled)).collect();
    let mut out_state = LifState::zeros(&[config.num_classes]);

    let mut inputs = Vec::with_capacity(steps);
    let mut blocks: Vec<LayerTrace> = vec![LayerTrace::default(); layout.blocks.len()];
    let mut output = LayerTrace::default();
    let mut output_spikes = Tensor::zeros(&[steps, config.num_classes]);

    for t in 0..steps {
        let frame = frames.frame(t);
        let mut x = frame.clone();
        for (b, bl) in layout.blocks.iter().enumerate() {
            let conv = conv2d_forward(&x, weights.conv_kernel(b), weights.conv_bias(b), &bl.conv)?;
            let (pooled, idx) = maxpool2d_forward(&conv)?;
            let step = states[b].step_with(&pooled, &config.blocks[b].lif, firing, &surrogate)?;
            x = step.spikes.clone();
            blocks[b].pre_reset.push(step.pre_reset);
            blocks[b].spikes.push(step.spikes);
            blocks[b].pools.push(idx);
        }
        let current = linear_forward(&flatten(&x), weights.fc_weight(), weights.fc_bias())?;
        let step = out_state.step_with(&current, &config.output_lif, firing, &surrogate)?;
        let k = config.num_classes;
        output_spikes.data_mut()[t * k..(t + 1) * k].copy_from_slice(step.spikes.data());
        output.pre_reset.push(step.pre_reset);
        output.spikes.push(step.spikes);
        inputs.push(frame);
    }
    Ok(ForwardRecord {
        inputs,
        blocks,
        output,
        output_spikes,
    })
}

/// Gradients of every weight given the loss gradient on the output spike
/// train (`[T, num_classes]`), summed over all time steps.
pub fn backward(
    record: &ForwardRecord,
    grad_output: &Tensor,
    weights: &NetworkWeights,
    config: &NetworkConfig,
) -> Result<NetworkWeights> {
    let layout = config.layout()?;
    let (steps, k) = (config.time_steps, config.num_classes);
    if grad_output.shape() != [steps, k] {
        return Err(Error::shape("backward", &[steps, k], grad_output.shape()));
    }
    if record.time_steps() != steps
        || record.blocks.len() != layout.blocks.len()
        || record.output.spikes.len() != steps
        || record
            .blocks
            .iter()
            .any(|b| b.spikes.len() != steps || b.pools.len() != steps)
    {
        return Err(Error::InvalidArgument(
            "forward record does not match the network configuration".into(),
        ));
    }
    let mut grads = NetworkWeights::zeros(config)?;
    let nb = layout.blocks.len();

    let grad_out_spikes: Vec<Tensor> = grad_output
        .data()
        .chunks_exact(k)
        .map(|row| Tensor::from_vec(&[k], row.to_vec()))
        .collect::<Result<_>>()?;
    let grad_current = lif_sequence_backward(
        &record.output.pre_reset,
        &record.output.spikes,
        &grad_out_spikes,
        None,
        &config.output_lif,
        &config.surrogate,
    )?;

    let last = &layout.blocks[nb - 1];
    let mut grad_spikes = Vec::with_capacity(steps);
    for (t, g) in grad_current.iter().enumerate() {
        let x = flatten(&record.blocks[nb - 1].spikes[t]);
        let lg = linear_backward(g, &x, weights.fc_weight())?;
        let n = grads.tensors.len();
        grads.tensors[n - 2].add_assign(&lg.weight)?;
        grads.tensors[n - 1].add_assign(&lg.bias)?;
        grad_spikes.push(unflatten(&lg.input, &last.pooled)?);
    }

    for b in (0..nb).rev() {
        let bl = &layout.blocks[b];
        let trace = &record.blocks[b];
        let grad_pooled = lif_sequence_backward(
            &trace.pre_reset,
            &trace.spikes,
            &grad_spikes,
            None,
            &config.blocks[b].lif,
            &config.surrogate,
        )?;
        let mut grad_below = Vec::with_capacity(if b > 0 { steps } else { 0 });
        for (t, gp) in grad_pooled.iter().enumerate() {
            let grad_conv = maxpool2d_backward(gp, &trace.pools[t], &bl.conv_out)?;
            let x = if b == 0 {
                &record.inputs[t]
            } else {
                &record.blocks[b - 1].spikes[t]
            };
            let cg = if b == 0 {
                conv2d_backward_params(&grad_conv, x, weights.conv_kernel(b), &bl.conv)?
            } else {
                conv2d_backward(&grad_conv, x, weights.conv_kernel(b), &bl.conv)?
            };
            grads.tensors[2 * b].add_assign(&cg.kernel)?;
            grads.tensors[2 * b + 1].add_assign(&cg.bias)?;
            if let Some(gx) = cg.input {
                grad_below.push(gx);
            }
        }
        grad_spikes = grad_below;
    }
    Ok(grads)
}

/// Class with the most output spikes; ties go to the lowest index.
pub fn predict(output_spikes: &Tensor) -> usize {
    let k = output_spikes.shape().last().copied().unwrap_or(0);
    if k == 0 {
        return 0;
    }
    let mut counts = vec![0.0; k];
    for row in output_spikes.data().chunks_exact(k) {
        for (c, s) in counts.iter_mut().zip(row) {
            *c += s;
        }
    }
    argmax_first(&counts)
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
