//! Leaky integrate-and-fire dynamics and their surrogate-gradient adjoint.
//!
//! The continuous membrane equation `tau dU/dt = -U + R I` is only used in
//! its discrete form
//!
//! ```text
//! U_pre(t) = beta * U(t-1) + (1 - beta) * I(t)
//! S(t)     = 1 if U_pre(t) >= threshold else 0
//! U(t)     = U_pre(t) - S(t) * threshold      (ResetMode::Subtract)
//!          = U_pre(t) * (1 - S(t))            (ResetMode::Zero)
//! ```
//!
//! `beta` stands in for the discretised time constant and `R` is folded into
//! the incoming weights, so neither `tau` nor `R` exist as parameters.
//!
//! The backward pass replaces `dS/dU_pre` with the fast-sigmoid surrogate
//! `1 / (1 + k|U_pre - threshold|)^2`, including on the reset path.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResetMode {
    /// Keep the super-threshold excess.
    #[default]
    Subtract,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    pub beta: f64,
    pub threshold: f64,
    pub reset: ResetMode,
}

impl LifParams {
    pub fn new(beta: f64, threshold: f64, reset: ResetMode) -> Result<Self> {
        let params = LifParams { beta, threshold, reset };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "LIF beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "LIF threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            beta: 0.5,
            threshold: 1.0,
            reset: ResetMode::Subtract,
        }
    }
}

/// Fast-sigmoid surrogate with slope `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSpec {
    pub slope: f64,
}

impl SurrogateSpec {
    pub fn new(slope: f64) -> Result<Self> {
        let spec = SurrogateSpec { slope };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "surrogate slope must be positive, got {}",
                self.slope
            )));
        }
        Ok(())
    }

    /// Stand-in for the Heaviside derivative at distance `v` from threshold.
    #[inline]
    pub fn grad(&self, v: f64) -> f64 {
        let d = 1.0 + self.slope * v.abs();
        1.0 / (d * d)
    }

    /// Smooth spike whose exact derivative is [`SurrogateSpec::grad`]:
    /// `1/2 + v / (1 + k|v|)`.
    #[inline]
    pub fn relaxed_spike(&self, v: f64) -> f64 {
        0.5 + v / (1.0 + self.slope * v.abs())
    }
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec { slope: 25.0 }
    }
}

pub fn surrogate_grad(v: &Tensor, spec: &SurrogateSpec) -> Tensor {
    let mut out = v.clone();
    out.data_mut().iter_mut().for_each(|x| *x = spec.grad(*x));
    out
}

/// How a neuron turns its pre-reset membrane into an output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Firing {
    /// Binary spikes; what training and inference run.
    #[default]
    Hard,
    /// [`SurrogateSpec::relaxed_spike`] in place of the step. Under this
    /// forward the surrogate backward is an exact gradient, which is what
    /// gradient checks compare against.
    Relaxed,
}

/// Per-neuron membrane potentials carried across time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    membrane: Tensor,
}

/// Output of one [`LifState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct LifStep {
    pub spikes: Tensor,
    /// Membrane after integration, before reset. BPTT needs it.
    pub pre_reset: Tensor,
}

impl LifState {
    pub fn zeros(shape: &[usize]) -> Self {
        LifState {
            membrane: Tensor::zeros(shape),
        }
    }

    pub fn from_membrane(membrane: Tensor) -> Self {
        LifState { membrane }
    }

    pub fn membrane(&self) -> &Tensor {
        &self.membrane
    }

    pub fn step(&mut self, input: &Tensor, params: &LifParams) -> Result<LifStep> {
        self.step_with(input, params, Firing::Hard, &SurrogateSpec::default())
    }

    pub fn step_with(
        &mut self,
        input: &Tensor,
        params: &LifParams,
        firing: Firing,
        surrogate: &SurrogateSpec,
    ) -> Result<LifStep> {
        if input.shape() != self.membrane.shape() {
            return Err(Error::shape("lif_step", self.membrane.shape(), input.shape()));
        }
        let (beta, theta) = (params.beta, params.threshold);
        let mut pre = input.clone();
        let mut spikes = Tensor::zeros(input.shape());
        for ((p, u), s) in pre
            .data_mut()
            .iter_mut()
            .zip(self.membrane.data_mut())
            .zip(spikes.data_mut())
        {
            let u_pre = beta * *u + (1.0 - beta) * *p;
            let spike = match firing {
                Firing::Hard => {
                    if u_pre >= theta {
                        1.0
                    } else {
                        0.0
                    }
                }
                Firing::Relaxed => surrogate.relaxed_spike(u_pre - theta),
            };
            *p = u_pre;
            *s = spike;
            *u = match params.reset {
                ResetMode::Subtract => u_pre - spike * theta,
                ResetMode::Zero => u_pre * (1.0 - spike),
            };
        }
        Ok(LifStep { spikes, pre_reset: pre })
    }
}

/// Reverse-time adjoint of a sequence of [`LifState::step`] calls.
///
/// `pre_reset[t]` and `spikes[t]` are what the forward produced at step `t`;
/// `grad_spikes[t]` is the loss gradient arriving at the spikes of step `t`
/// and `grad_final` the gradient on the membrane left after the last step.
/// Returns the gradient with respect to each step's input current.
pub fn lif_sequence_backward(
    pre_reset: &[Tensor],
    spikes: &[Tensor],
    grad_spikes: &[Tensor],
    grad_final: Option<&Tensor>,
    params: &LifParams,
    surrogate: &SurrogateSpec,
) -> Result<Vec<Tensor>> {
    let steps = pre_reset.len();
    if spikes.len() != steps || grad_spikes.len() != steps {
        return Err(Error::InvalidArgument(format!(
            "lif_sequence_backward: {steps} saved membranes, {} saved spike tensors, {} spike gradients",
            spikes.len(),
            grad_spikes.len()
        )));
    }
    if steps == 0 {
        return Ok(Vec::new());
    }
    let shape = pre_reset[0].shape();
    for t in 0..steps {
        for tensor in [&pre_reset[t], &spikes[t], &grad_spikes[t]] {
            if tensor.shape() != shape {
                return Err(Error::shape("lif_sequence_backward", shape, tensor.shape()));
            }
        }
    }
    let mut grad_u = match grad_final {
        Some(g) if g.shape() != shape => return Err(Error::shape("lif_sequence_backward", shape, g.shape())),
        Some(g) => g.data().to_vec(),
        None => vec![0.0; pre_reset[0].len()],
    };

    let (beta, theta) = (params.beta, params.threshold);
    let mut out = vec![Tensor::zeros(shape); steps];
    for t in (0..steps).rev() {
        let iter = pre_reset[t]
            .data()
            .iter()
            .zip(spikes[t].data())
            .zip(grad_spikes[t].data())
            .zip(grad_u.iter_mut())
            .zip(out[t].data_mut());
        for ((((&u_pre, &s), &g_s), g_u), g_i) in iter {
            let sg = surrogate.grad(u_pre - theta);
            let d_reset = match params.reset {
                ResetMode::Subtract => 1.0 - theta * sg,
                ResetMode::Zero => (1.0 - s) - u_pre * sg,
            };
            let g_pre = g_s * sg + *g_u * d_reset;
            *g_i = (1.0 - beta) * g_pre;
            *g_u = beta * g_pre;
        }
    }
    Ok(out)
}
