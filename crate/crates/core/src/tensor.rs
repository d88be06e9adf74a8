//! Dense row-major tensors and the kernels the network is built from.
//!
//! Convolution is "valid" (no padding) with stride 1 and uses the
//! cross-correlation orientation `y[o,i,j] = b[o] + sum x[c,i+m,j+n] k[o,c,m,n]`.
//! Pooling is non-overlapping 2x2 with floor semantics: a trailing odd row or
//! column is dropped.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.contains(&0) || data.len() != len {
            return Err(Error::InvalidArgument(alloc::format!(
                "shape {shape:?} needs {len} positive-extent elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims3(&self, op: &'static str) -> Result<[usize; 3]> {
        match self.shape[..] {
            [c, h, w] => Ok([c, h, w]),
            _ => Err(Error::shape(op, &[0, 0, 0], &self.shape)),
        }
    }
}

/// Geometry of one convolution layer. Stride is 1 and padding 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
        }
    }

    /// Output extents for an `h x w` input, `None` when the kernel does not fit.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h < self.kernel_h || w < self.kernel_w {
            return None;
        }
        Some((h - self.kernel_h + 1, w - self.kernel_w + 1))
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    fn check(&self, op: &'static str, x: &Tensor, k: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let [c, h, w] = x.dims3(op)?;
        if c != self.in_channels {
            return Err(Error::shape(op, &[self.in_channels, h, w], x.shape()));
        }
        if k.shape() != self.kernel_shape() {
            return Err(Error::shape(op, &self.kernel_shape(), k.shape()));
        }
        let (oh, ow) = self
            .output_hw(h, w)
            .ok_or_else(|| Error::shape(op, &[c, self.kernel_h, self.kernel_w], x.shape()))?;
        Ok((h, w, oh, ow))
    }
}

pub fn conv2d_forward(x: &Tensor, k: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let op = "conv2d_forward";
    let (h, w, oh, ow) = spec.check(op, x, k)?;
    if bias.shape() != [spec.out_channels] {
        return Err(Error::shape(op, &[spec.out_channels], bias.shape()));
    }
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let mut y = Tensor::zeros(&[spec.out_channels, oh, ow]);
    let xd = x.data();
    let kd = k.data();
    for (o, yo) in y.data.chunks_exact_mut(oh * ow).enumerate() {
        yo.fill(bias.data[o]);
        for c in 0..spec.in_channels {
            let xc = &xd[c * h * w..(c + 1) * h * w];
            let kc = &kd[(o * spec.in_channels + c) * kh * kw..][..kh * kw];
            for m in 0..kh {
                for n in 0..kw {
                    let kv = kc[m * kw + n];
                    if kv == 0.0 {
                        continue;
                    }
                    for i in 0..oh {
                        let xrow = &xc[(i + m) * w + n..][..ow];
                        let yrow = &mut yo[i * ow..(i + 1) * ow];
                        for (yv, xv) in yrow.iter_mut().zip(xrow) {
                            *yv += kv * xv;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    /// `None` when the caller asked for parameter gradients only.
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(grad_y: &Tensor, x: &Tensor, k: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    conv_backward(grad_y, x, k, spec, true)
}

/// Like [`conv2d_backward`] but skips the input gradient, which the first
/// layer of a network never needs.
pub fn conv2d_backward_params(grad_y: &Tensor, x: &Tensor, k: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    conv_backward(grad_y, x, k, spec, false)
}

fn conv_backward(grad_y: &Tensor, x: &Tensor, k: &Tensor, spec: &ConvSpec, want_input: bool) -> Result<ConvGrads> {
    let op = "conv2d_backward";
    let (h, w, oh, ow) = spec.check(op, x, k)?;
    if grad_y.shape() != [spec.out_channels, oh, ow] {
        return Err(Error::shape(op, &[spec.out_channels, oh, ow], grad_y.shape()));
    }
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let mut grad_k = Tensor::zeros(k.shape());
    let mut grad_b = Tensor::zeros(&[spec.out_channels]);
    let mut grad_x = want_input.then(|| Tensor::zeros(x.shape()));
    let xd = x.data();
    let kd = k.data();

    for (o, gyo) in grad_y.data.chunks_exact(oh * ow).enumerate() {
        grad_b.data[o] = gyo.iter().sum();
        for c in 0..spec.in_channels {
            let xc = &xd[c * h * w..(c + 1) * h * w];
            let base = (o * spec.in_channels + c) * kh * kw;
            for m in 0..kh {
                for n in 0..kw {
                    let mut acc = 0.0;
                    for i in 0..oh {
                        let xrow = &xc[(i + m) * w + n..][..ow];
                        let grow = &gyo[i * ow..(i + 1) * ow];
                        acc += grow.iter().zip(xrow).map(|(g, x)| g * x).sum::<f64>();
                    }
                    grad_k.data[base + m * kw + n] = acc;

                    if let Some(gx) = grad_x.as_mut() {
                        let kv = kd[base + m * kw + n];
                        if kv == 0.0 {
                            continue;
                        }
                        let gxc = &mut gx.data[c * h * w..(c + 1) * h * w];
                        for i in 0..oh {
                            let grow = &gyo[i * ow..(i + 1) * ow];
                            let xrow = &mut gxc[(i + m) * w + n..][..ow];
                            for (xv, g) in xrow.iter_mut().zip(grow) {
                                *xv += kv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: grad_x,
        kernel: grad_k,
        bias: grad_b,
    })
}

/// Winning input positions of a max-pool, one flat input index per output cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 3],
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn maxpool2d_forward(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let [c, h, w] = x.dims3("maxpool2d_forward")?;
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2d_forward", &[c, 2, 2], x.shape()));
    }
    let (ph, pw) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[c, ph, pw]);
    let mut argmax = Vec::with_capacity(c * ph * pw);
    let xd = x.data();
    for ch in 0..c {
        for i in 0..ph {
            for j in 0..pw {
                let top = ch * h * w + 2 * i * w + 2 * j;
                // Row-major scan; only a strictly larger value displaces the
                // current winner, so ties go to the first cell.
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if xd[cand] > xd[best] {
                        best = cand;
                    }
                }
                y.data[(ch * ph + i) * pw + j] = xd[best];
                argmax.push(best);
            }
        }
    }
    Ok((
        y,
        PoolIndices {
            input_shape: [c, h, w],
            argmax,
        },
    ))
}

pub fn maxpool2d_backward(grad_y: &Tensor, indices: &PoolIndices, input_shape: &[usize]) -> Result<Tensor> {
    let op = "maxpool2d_backward";
    if input_shape != indices.input_shape {
        return Err(Error::shape(op, &indices.input_shape, input_shape));
    }
    let [c, h, w] = indices.input_shape;
    if grad_y.shape() != [c, h / 2, w / 2] {
        return Err(Error::shape(op, &[c, h / 2, w / 2], grad_y.shape()));
    }
    let mut grad_x = Tensor::zeros(input_shape);
    for (&g, &idx) in grad_y.data.iter().zip(&indices.argmax) {
        grad_x.data[idx] += g;
    }
    Ok(grad_x)
}

/// `y = w x + bias` with `w` of shape `[K, D]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (k, d) = linear_dims("linear_forward", x, w)?;
    if bias.shape() != [k] {
        return Err(Error::shape("linear_forward", &[k], bias.shape()));
    }
    let mut y = bias.clone();
    for (yv, row) in y.data.iter_mut().zip(w.data.chunks_exact(d)) {
        *yv += row.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(grad_y: &Tensor, x: &Tensor, w: &Tensor) -> Result<LinearGrads> {
    let (k, d) = linear_dims("linear_backward", x, w)?;
    if grad_y.shape() != [k] {
        return Err(Error::shape("linear_backward", &[k], grad_y.shape()));
    }
    let mut grad_x = Tensor::zeros(&[d]);
    let mut grad_w = Tensor::zeros(&[k, d]);
    for ((&g, row), grow) in grad_y
        .data
        .iter()
        .zip(w.data.chunks_exact(d))
        .zip(grad_w.data.chunks_exact_mut(d))
    {
        if g == 0.0 {
            continue;
        }
        for ((gx, wv), (gw, xv)) in grad_x.data.iter_mut().zip(row).zip(grow.iter_mut().zip(&x.data)) {
            *gx += g * wv;
            *gw = g * xv;
        }
    }
    Ok(LinearGrads {
        input: grad_x,
        weight: grad_w,
        bias: grad_y.clone(),
    })
}

fn linear_dims(op: &'static str, x: &Tensor, w: &Tensor) -> Result<(usize, usize)> {
    match (x.shape(), w.shape()) {
        (&[d], &[k, d2]) if d == d2 => Ok((k, d)),
        (&[d], _) => Err(Error::shape(
            op,
            &[w.shape().first().copied().unwrap_or(0), d],
            w.shape(),
        )),
        (xs, _) => Err(Error::shape(op, &[w.shape().last().copied().unwrap_or(0)], xs)),
    }
}

/// Row-major flatten to a vector; [`unflatten`] is its inverse.
pub fn flatten(x: &Tensor) -> Tensor {
    Tensor {
        shape: vec![x.len()],
        data: x.data.clone(),
    }
}

pub fn unflatten(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if x.shape().len() != 1 || shape.iter().product::<usize>() != x.len() {
        return Err(Error::shape("unflatten", &[shape.iter().product()], x.shape()));
    }
    Tensor::from_vec(shape, x.data.clone())
}
