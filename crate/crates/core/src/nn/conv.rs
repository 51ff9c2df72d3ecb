use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{he_init, Real, Tensor};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// 3x3, stride 1, zero "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        Self {
            kernel: Tensor::zeros(&[out_channels, in_channels, KERNEL, KERNEL]),
            bias: Tensor::zeros(&[out_channels]),
            activation,
        }
    }

    pub fn he(in_channels: usize, out_channels: usize, activation: Activation, seed: u64) -> Self {
        Self {
            kernel: he_init(&[out_channels, in_channels, KERNEL, KERNEL], seed),
            bias: Tensor::zeros(&[out_channels]),
            activation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            kernel: self.kernel.cast(),
            bias: self.bias.cast(),
            activation: self.activation,
        }
    }

    fn check(&self) -> Result<()> {
        let s = self.kernel.shape();
        if s.len() != 4 || s[2] != KERNEL || s[3] != KERNEL {
            return Err(Error::ShapeMismatch(format!("kernel must be Cout x Cin x 3 x 3, got {s:?}")));
        }
        if self.bias.shape() != [s[0]] {
            return Err(Error::ShapeMismatch(format!(
                "bias shape {:?} does not match {} output channels",
                self.bias.shape(),
                s[0]
            )));
        }
        Ok(())
    }
}

/// For tap offset `d` in {-1, 0, 1}, the destination index range whose source
/// index `i + d` stays inside `0..len`.
#[inline]
fn valid_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d.max(0)).max(lo as isize) as usize;
    (lo, hi)
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], src: &[T], a: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Same-padded 3x3 correlation plus bias, followed by the layer activation.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    layer.check()?;
    let (n, cin, h, w) = input.dims4()?;
    if cin != layer.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "input has {cin} channels, layer expects {}",
            layer.in_channels()
        )));
    }
    let cout = layer.out_channels();
    let plane = h * w;
    let k = layer.kernel.values();
    let src = input.values();
    let mut out = vec![T::zero(); n * cout * plane];

    for b in 0..n {
        for co in 0..cout {
            let dst = &mut out[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            dst.fill(layer.bias.values()[co]);
            for ci in 0..cin {
                let sp = &src[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                let taps = &k[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                for ky in 0..KERNEL {
                    let dy = ky as isize - 1;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..KERNEL {
                        let wv = taps[ky * KERNEL + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let dx = kx as isize - 1;
                        let (x0, x1) = valid_range(w, dx);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let drow = &mut dst[y * w + x0..y * w + x1];
                            let srow = &sp[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                            axpy(drow, srow, wv);
                        }
                    }
                }
            }
            if layer.activation == Activation::Relu {
                for v in dst.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, h, w], out)
}

/// Gradients of one convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

/// Exact reverse pass of [`conv2d_forward`]. `output` is the forward result;
/// the ReLU mask is recovered from it (`out > 0`).
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    output: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<ConvGrads<T>> {
    layer.check()?;
    let (n, cin, h, w) = input.dims4()?;
    let cout = layer.out_channels();
    let expected = [n, cout, h, w];
    if grad_out.shape() != expected || output.shape() != expected || cin != layer.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "backward got grad {:?}, output {:?}, input {:?} for a {}->{} layer",
            grad_out.shape(),
            output.shape(),
            input.shape(),
            layer.in_channels(),
            cout
        )));
    }
    let plane = h * w;
    let k = layer.kernel.values();
    let src = input.values();

    let mut gpre = grad_out.values().to_vec();
    if layer.activation == Activation::Relu {
        for (g, &o) in gpre.iter_mut().zip(output.values()) {
            if o <= T::zero() {
                *g = T::zero();
            }
        }
    }

    let mut gk = vec![0.0f64; k.len()];
    let mut gb = vec![0.0f64; cout];
    let mut gin = vec![T::zero(); input.len()];

    for b in 0..n {
        for co in 0..cout {
            let gp = &gpre[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            gb[co] += gp.iter().map(|v| v.as_f64()).sum::<f64>();
            for ci in 0..cin {
                let sp = &src[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                let gi = &mut gin[(b * cin + ci) * plane..(b * cin + ci + 1) * plane];
                let base = (co * cin + ci) * 9;
                for ky in 0..KERNEL {
                    let dy = ky as isize - 1;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..KERNEL {
                        let dx = kx as isize - 1;
                        let (x0, x1) = valid_range(w, dx);
                        let wv = k[base + ky * KERNEL + kx];
                        let mut acc = 0.0f64;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &gp[y * w + x0..y * w + x1];
                            let lo = sy * w + (x0 as isize + dx) as usize;
                            let hi = sy * w + (x1 as isize + dx) as usize;
                            acc += dot(grow, &sp[lo..hi]).as_f64();
                            if wv != T::zero() {
                                axpy(&mut gi[lo..hi], grow, wv);
                            }
                        }
                        gk[base + ky * KERNEL + kx] += acc;
                    }
                }
            }
        }
    }

    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), gin)?,
        kernel: gk.into_iter().map(T::lit).collect(),
        bias: gb.into_iter().map(T::lit).collect(),
    })
}

/// A feed-forward chain of convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack<T = f32> {
    pub layers: Vec<ConvLayer<T>>,
}

/// Activations recorded by [`ConvStack::forward_cached`]: entry 0 is the
/// input, entry `l + 1` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct StackCache<T = f32> {
    pub activations: Vec<Tensor<T>>,
}

impl<T: Real> StackCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl<T: Real> ConvStack<T> {
    pub fn new(layers: Vec<ConvLayer<T>>) -> Self {
        Self { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn cast<U: Real>(&self) -> ConvStack<U> {
        ConvStack {
            layers: self.layers.iter().map(ConvLayer::cast).collect(),
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = conv2d_forward(&x, layer)?;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor<T>) -> Result<StackCache<T>> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let next = conv2d_forward(activations.last().expect("non-empty"), layer)?;
            activations.push(next);
        }
        Ok(StackCache { activations })
    }

    /// Returns the gradient with respect to the stack input and per-layer
    /// parameter gradients (in layer order).
    pub fn backward(&self, grad_out: &Tensor<T>, cache: &StackCache<T>) -> Result<(Tensor<T>, Vec<ConvGrads<T>>)> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::ShapeMismatch("cache does not belong to this stack".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let cg = conv2d_backward(&g, &cache.activations[l], &cache.activations[l + 1], layer)?;
            g = cg.input.clone();
            grads.push(cg);
        }
        grads.reverse();
        Ok((g, grads))
    }
}
