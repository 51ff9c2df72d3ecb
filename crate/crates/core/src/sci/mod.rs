//! Self-calibrated illumination model on a luminance plane (or on RGB for the
//! baseline mode).
//!
//! Training unrolls `T` weight-shared stages starting from `v_0 = y`:
//!
//! ```text
//! u_t     = H(v_t)                       residual illumination
//! x_t     = clamp(v_t + u_t, eps, 1)     illumination
//! z_t     = clamp(y / x_t, 0, 1)         enhanced plane
//! s_t     = K(z_t)                       calibration residual
//! v_{t+1} = clamp(y + s_t, 0, 1)
//! ```
//!
//! Inference evaluates only stage 0: `clamp(y / clamp(y + H(y), eps, 1), 0, 1)`.

mod checkpoint;
mod loss;

pub use checkpoint::{load_weights, save_weights, weights_from_bytes, weights_to_bytes, FORMAT_VERSION, MAGIC};
pub use loss::{loss_breakdown, loss_value, sci_loss, CascadeObjective, LayerGrads, LossBreakdown, LossWeights, SciGrads};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, PlanarImage};
use crate::nn::{Activation, ConvLayer, ConvStack, Real, StackCache, Tensor};

pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_EPSILON: f32 = 1e-3;
pub const DEFAULT_STAGES: usize = 3;

/// Parameters of the illumination estimator and the calibration network.
#[derive(Debug, Clone, PartialEq)]
pub struct SciWeights<T = f32> {
    pub illumination: ConvStack<T>,
    pub calibration: ConvStack<T>,
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub epsilon: T,
}

fn three_layer_stack<T: Real>(channels: usize, hidden: usize, seed: Option<u64>) -> ConvStack<T> {
    let shapes = [
        (channels, hidden, Activation::Relu),
        (hidden, hidden, Activation::Relu),
        (hidden, channels, Activation::None),
    ];
    ConvStack::new(
        shapes.iter()
            .enumerate()
            .map(|(i, &(cin, cout, act))| match seed {
                Some(s) => ConvLayer::he(cin, cout, act, s.wrapping_add(i as u64)),
                None => ConvLayer::zeros(cin, cout, act),
            })
            .collect(),
    )
}

impl<T: Real> SciWeights<T> {
    /// He-initialized weights; the two networks draw from disjoint seed streams.
    pub fn init(in_channels: usize, hidden_channels: usize, epsilon: f64, seed: u64) -> Self {
        let k_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x5CA1_AB1E);
        Self {
            illumination: three_layer_stack(in_channels, hidden_channels, Some(seed)),
            calibration: three_layer_stack(in_channels, hidden_channels, Some(k_seed)),
            in_channels,
            hidden_channels,
            epsilon: T::lit(epsilon),
        }
    }

    pub fn zeros(in_channels: usize, hidden_channels: usize, epsilon: f64) -> Self {
        Self {
            illumination: three_layer_stack(in_channels, hidden_channels, None),
            calibration: three_layer_stack(in_channels, hidden_channels, None),
            in_channels,
            hidden_channels,
            epsilon: T::lit(epsilon),
        }
    }

    pub fn param_count(&self) -> usize {
        self.illumination.param_count() + self.calibration.param_count()
    }

    pub fn cast<U: Real>(&self) -> SciWeights<U> {
        SciWeights {
            illumination: self.illumination.cast(),
            calibration: self.calibration.cast(),
            in_channels: self.in_channels,
            hidden_channels: self.hidden_channels,
            epsilon: U::lit(self.epsilon.as_f64()),
        }
    }

    /// All parameter tensors in checkpoint order: illumination layers then
    /// calibration layers, kernel before bias.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.illumination
            .layers
            .iter_mut()
            .chain(self.calibration.layers.iter_mut())
            .flat_map(|l| [&mut l.kernel, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.illumination
            .layers
            .iter()
            .chain(self.calibration.layers.iter())
            .flat_map(|l| [&l.kernel, &l.bias])
            .collect()
    }
}

/// FNV-1a over the bit patterns of a stack's parameters.
pub fn stack_digest<T: Real>(stack: &ConvStack<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for layer in &stack.layers {
        for v in layer.kernel.values().iter().chain(layer.bias.values()) {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// One unrolled stage. Network caches are kept only when the trace is meant
/// for backpropagation.
#[derive(Debug, Clone)]
pub struct StageTrace<T = f32> {
    pub v: Tensor<T>,
    pub u: Tensor<T>,
    pub x: Tensor<T>,
    pub z: Tensor<T>,
    pub s: Tensor<T>,
    /// Digest of the illumination parameters this stage evaluated.
    pub illumination_digest: u64,
    pub(crate) h_cache: Option<StackCache<T>>,
    pub(crate) k_cache: Option<StackCache<T>>,
}

#[derive(Debug, Clone)]
pub struct CascadeTrace<T = f32> {
    pub y: Tensor<T>,
    pub stages: Vec<StageTrace<T>>,
    pub epsilon: T,
}

impl<T: Real> CascadeTrace<T> {
    pub fn has_caches(&self) -> bool {
        self.stages.iter().all(|s| s.h_cache.is_some() && s.k_cache.is_some())
    }
}

fn check_unit_range<T: Real>(values: &[T]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::BadRange(format!("input contains {:?}", v)));
    }
    Ok(())
}

fn check_channels<T: Real>(y: &Tensor<T>, w: &SciWeights<T>) -> Result<()> {
    let (n, c, _, _) = y.dims4()?;
    if n != 1 || c != w.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "weights take 1x{} planes, input is {:?}",
            w.in_channels,
            y.shape()
        )));
    }
    Ok(())
}

#[inline]
fn clamp<T: Real>(v: T, lo: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// `x = clamp(v + u, eps, 1)` and `z = clamp(y / x, 0, 1)`; shared by the
/// cascade and single-block inference so the two agree bit for bit.
fn illuminate<T: Real>(y: &Tensor<T>, v: &Tensor<T>, u: &Tensor<T>, eps: T) -> (Tensor<T>, Tensor<T>) {
    let x: Vec<T> = v
        .values()
        .iter()
        .zip(u.values())
        .map(|(&a, &b)| clamp(a + b, eps, T::one()))
        .collect();
    let z: Vec<T> = y
        .values()
        .iter()
        .zip(&x)
        .map(|(&yi, &xi)| clamp(yi / xi, T::zero(), T::one()))
        .collect();
    (
        Tensor::from_vec(y.shape(), x).expect("same shape"),
        Tensor::from_vec(y.shape(), z).expect("same shape"),
    )
}

/// Unrolls `stages` weight-shared stages on a `1 x C x H x W` tensor.
pub fn cascade_tensor<T: Real>(
    y: &Tensor<T>,
    w: &SciWeights<T>,
    stages: usize,
    keep_caches: bool,
) -> Result<CascadeTrace<T>> {
    if stages == 0 {
        return Err(Error::Config("cascade needs at least one stage".into()));
    }
    check_channels(y, w)?;
    check_unit_range(y.values())?;
    let eps = w.epsilon;
    let mut out = Vec::with_capacity(stages);
    let mut v = y.clone();
    for _ in 0..stages {
        let digest = stack_digest(&w.illumination);
        let (u, h_cache) = if keep_caches {
            let c = w.illumination.forward_cached(&v)?;
            (c.output().clone(), Some(c))
        } else {
            (w.illumination.forward(&v)?, None)
        };
        let (x, z) = illuminate(y, &v, &u, eps);
        let (s, k_cache) = if keep_caches {
            let c = w.calibration.forward_cached(&z)?;
            (c.output().clone(), Some(c))
        } else {
            (w.calibration.forward(&z)?, None)
        };
        let next: Vec<T> = y
            .values()
            .iter()
            .zip(s.values())
            .map(|(&a, &b)| clamp(a + b, T::zero(), T::one()))
            .collect();
        let next = Tensor::from_vec(y.shape(), next)?;
        out.push(StageTrace {
            v: std::mem::replace(&mut v, next),
            u,
            x,
            z,
            s,
            illumination_digest: digest,
            h_cache,
            k_cache,
        });
    }
    Ok(CascadeTrace {
        y: y.clone(),
        stages: out,
        epsilon: eps,
    })
}

/// Single-block enhancement of a `1 x C x H x W` tensor.
pub fn infer_tensor<T: Real>(y: &Tensor<T>, w: &SciWeights<T>) -> Result<Tensor<T>> {
    check_channels(y, w)?;
    check_unit_range(y.values())?;
    let u = w.illumination.forward(y)?;
    Ok(illuminate(y, y, &u, w.epsilon).1)
}

pub(crate) fn image_to_tensor(img: &PlanarImage) -> Tensor<f32> {
    Tensor::from_vec(&[1, img.channels(), img.height(), img.width()], img.data().to_vec())
        .expect("image geometry is consistent")
}

fn check_image_channels(y: &PlanarImage, w: &SciWeights) -> Result<()> {
    let needed = if y.space() == ColorSpace::Rgb { 3 } else { 1 };
    if y.channels() != needed || !matches!(y.space(), ColorSpace::Gray | ColorSpace::Rgb) {
        return Err(Error::WrongSpace {
            expected: if w.in_channels == 3 { ColorSpace::Rgb } else { ColorSpace::Gray },
            found: y.space(),
        });
    }
    if needed != w.in_channels {
        return Err(Error::ModeMismatch {
            weights: w.in_channels,
            mode: format!("{:?}", y.space()).to_lowercase(),
            needed,
        });
    }
    Ok(())
}

/// Runs the training cascade on a GRAY (or, for 3-channel weights, RGB) image.
pub fn cascade_forward(y: &PlanarImage, w: &SciWeights, stages: usize) -> Result<CascadeTrace<f32>> {
    check_image_channels(y, w)?;
    cascade_tensor(&image_to_tensor(y), w, stages, true)
}

/// Enhances a GRAY (or RGB, for 3-channel weights) image with one block.
pub fn infer(y: &PlanarImage, w: &SciWeights) -> Result<PlanarImage> {
    check_image_channels(y, w)?;
    let z = infer_tensor(&image_to_tensor(y), w)?;
    PlanarImage::new(y.height(), y.width(), y.channels(), y.space(), z.into_values())
}
