//! Unsupervised cascade loss and its gradient.
//!
//! ```text
//! L   = sum_t alpha * F_t + beta * S_t
//! F_t = mean_i (x_t,i - v_t,i)^2
//! S_t = (1/N) sum_i sum_{d in right, down} w_i,d * |x_t,i - x_t,i+d|
//! w_i,d = exp(-(y_i - y_i+d)^2 / (2 sigma^2))
//! ```
//!
//! The reverse pass walks the stages backwards, carrying the gradient with
//! respect to each stage input `v_t` into the calibration network of the
//! previous stage. Clamps pass gradient inside their range (bounds included)
//! and block it outside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{set_stack_param, stack_param, ConvGrads, Differentiable, Real, Tensor};

use super::{cascade_tensor, CascadeTrace, SciWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T = f32> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SciGrads<T = f32> {
    pub illumination: Vec<LayerGrads<T>>,
    pub calibration: Vec<LayerGrads<T>>,
}

impl<T: Real> SciGrads<T> {
    fn zeros_like(w: &SciWeights<T>) -> Self {
        let z = |s: &crate::nn::ConvStack<T>| {
            s.layers
                .iter()
                .map(|l| LayerGrads {
                    kernel: vec![T::zero(); l.kernel.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect()
        };
        Self {
            illumination: z(&w.illumination),
            calibration: z(&w.calibration),
        }
    }

    /// Gradient slices in the order of [`SciWeights::params_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        self.illumination
            .iter()
            .chain(&self.calibration)
            .flat_map(|g| [&g.kernel[..], &g.bias[..]])
            .collect()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.slices().into_iter().flatten().copied().collect()
    }
}

fn accumulate<T: Real>(dst: &mut [LayerGrads<T>], src: Vec<ConvGrads<T>>) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.kernel.iter_mut().zip(s.kernel) {
            *a += b;
        }
        for (a, b) in d.bias.iter_mut().zip(s.bias) {
            *a += b;
        }
    }
}

/// Edge-aware smoothness weights toward the right and lower neighbours;
/// zero where the neighbour falls outside the plane.
fn edge_weights<T: Real>(y: &Tensor<T>, sigma: f64) -> (Vec<T>, Vec<T>) {
    let (_, c, h, w) = y.dims4().expect("rank-4 plane");
    let yv = y.values();
    let denom = 2.0 * sigma * sigma;
    let mut right = vec![T::zero(); yv.len()];
    let mut down = vec![T::zero(); yv.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..h {
            for col in 0..w {
                let i = base + r * w + col;
                if col + 1 < w {
                    let d = yv[i].as_f64() - yv[i + 1].as_f64();
                    right[i] = T::lit((-(d * d) / denom).exp());
                }
                if r + 1 < h {
                    let d = yv[i].as_f64() - yv[i + w].as_f64();
                    down[i] = T::lit((-(d * d) / denom).exp());
                }
            }
        }
    }
    (right, down)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub fidelity: Vec<f64>,
    pub smoothness: Vec<f64>,
    pub total: f64,
}

fn fidelity<T: Real>(x: &[T], v: &[T]) -> f64 {
    x.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / x.len() as f64
}

fn smoothness<T: Real>(x: &[T], right: &[T], down: &[T], width: usize) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..x.len() {
        let wr = right[i].as_f64();
        if wr != 0.0 {
            acc += wr * (x[i].as_f64() - x[i + 1].as_f64()).abs();
        }
        let wd = down[i].as_f64();
        if wd != 0.0 {
            acc += wd * (x[i].as_f64() - x[i + width].as_f64()).abs();
        }
    }
    acc / x.len() as f64
}

/// Per-stage fidelity and smoothness terms and the weighted total.
pub fn loss_breakdown<T: Real>(trace: &CascadeTrace<T>, lw: &LossWeights) -> LossBreakdown {
    let (right, down) = edge_weights(&trace.y, lw.sigma);
    let width = trace.y.shape()[3];
    let mut out = LossBreakdown {
        fidelity: Vec::with_capacity(trace.stages.len()),
        smoothness: Vec::with_capacity(trace.stages.len()),
        total: 0.0,
    };
    for st in &trace.stages {
        let f = fidelity(st.x.values(), st.v.values());
        let s = smoothness(st.x.values(), &right, &down, width);
        out.total += lw.alpha * f + lw.beta * s;
        out.fidelity.push(f);
        out.smoothness.push(s);
    }
    out
}

pub fn loss_value<T: Real>(trace: &CascadeTrace<T>, lw: &LossWeights) -> f64 {
    loss_breakdown(trace, lw).total
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Loss value and its gradient with respect to both networks. The trace
/// must have been produced with caches by the same weights.
pub fn sci_loss<T: Real>(
    trace: &CascadeTrace<T>,
    w: &SciWeights<T>,
    lw: &LossWeights,
) -> Result<(f64, SciGrads<T>)> {
    if !trace.has_caches() {
        return Err(Error::Config("sci_loss needs a trace recorded with gradient caches".into()));
    }
    let value = loss_value(trace, lw);
    let (right, down) = edge_weights(&trace.y, lw.sigma);
    let shape = trace.y.shape().to_vec();
    let width = shape[3];
    let y = trace.y.values();
    let n = y.len();
    let inv_n = T::lit(1.0 / n as f64);
    let two_alpha = T::lit(2.0 * lw.alpha);
    let beta = T::lit(lw.beta);
    let eps = trace.epsilon;
    let mut grads = SciGrads::zeros_like(w);

    // Gradient with respect to v_{t+1}; nothing consumes v_T.
    let mut g_next: Option<Vec<T>> = None;

    for st in trace.stages.iter().rev() {
        let x = st.x.values();
        let v = st.v.values();
        let mut gx = vec![T::zero(); n];

        if let Some(gv_next) = g_next.take() {
            // v_{t+1} = clamp(y + s_t, 0, 1)
            let gs: Vec<T> = gv_next
                .iter()
                .zip(y.iter().zip(st.s.values()))
                .map(|(&g, (&yi, &si))| {
                    let b = yi + si;
                    if b >= T::zero() && b <= T::one() {
                        g
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let k_cache = st.k_cache.as_ref().expect("checked above");
            let (gz, kg) = w.calibration.backward(&Tensor::from_vec(&shape, gs)?, k_cache)?;
            accumulate(&mut grads.calibration, kg);
            // z_t = clamp(y / x_t, 0, 1)
            for i in 0..n {
                let q = y[i] / x[i];
                if q <= T::one() {
                    gx[i] -= gz.values()[i] * y[i] / (x[i] * x[i]);
                }
            }
        }

        // Fidelity.
        let mut gv = vec![T::zero(); n];
        for i in 0..n {
            let g = two_alpha * (x[i] - v[i]) * inv_n;
            gx[i] += g;
            gv[i] -= g;
        }
        // Smoothness.
        for i in 0..n {
            if right[i] != T::zero() {
                let g = beta * right[i] * sign(x[i] - x[i + 1]) * inv_n;
                gx[i] += g;
                gx[i + 1] -= g;
            }
            if down[i] != T::zero() {
                let g = beta * down[i] * sign(x[i] - x[i + width]) * inv_n;
                gx[i] += g;
                gx[i + width] -= g;
            }
        }

        // x_t = clamp(v_t + u_t, eps, 1)
        let u = st.u.values();
        let ga: Vec<T> = gx
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let a = v[i] + u[i];
                if a >= eps && a <= T::one() {
                    g
                } else {
                    T::zero()
                }
            })
            .collect();
        let h_cache = st.h_cache.as_ref().expect("checked above");
        let (gv_h, hg) = w.illumination.backward(&Tensor::from_vec(&shape, ga.clone())?, h_cache)?;
        accumulate(&mut grads.illumination, hg);
        for i in 0..n {
            gv[i] += ga[i] + gv_h.values()[i];
        }
        g_next = Some(gv);
    }
    Ok((value, grads))
}

/// The full cascade-plus-loss as a [`Differentiable`] for gradient checks.
pub struct CascadeObjective {
    pub weights: SciWeights<f64>,
    pub y: Tensor<f64>,
    pub stages: usize,
    pub loss: LossWeights,
}

impl CascadeObjective {
    fn split_index(&self, i: usize) -> (bool, usize) {
        let nh = self.weights.illumination.param_count();
        if i < nh {
            (true, i)
        } else {
            (false, i - nh)
        }
    }
}

impl Differentiable for CascadeObjective {
    fn param_count(&self) -> usize {
        self.weights.param_count()
    }

    fn param(&self, i: usize) -> f64 {
        match self.split_index(i) {
            (true, j) => stack_param(&self.weights.illumination.layers, j),
            (false, j) => stack_param(&self.weights.calibration.layers, j),
        }
    }

    fn set_param(&mut self, i: usize, value: f64) {
        match self.split_index(i) {
            (true, j) => set_stack_param(&mut self.weights.illumination.layers, j, value),
            (false, j) => set_stack_param(&mut self.weights.calibration.layers, j, value),
        }
    }

    fn loss(&self) -> f64 {
        let trace = cascade_tensor(&self.y, &self.weights, self.stages, false).expect("valid input");
        loss_value(&trace, &self.loss)
    }

    fn gradient(&self) -> Vec<f64> {
        let trace = cascade_tensor(&self.y, &self.weights, self.stages, true).expect("valid input");
        sci_loss(&trace, &self.weights, &self.loss).expect("trace has caches").1.flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor<f64> {
        let v = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Tensor::from_vec(&[1, 1, h, w], v).unwrap()
    }

    #[test]
    fn zero_weights_have_no_fidelity_cost() {
        let w = SciWeights::<f64>::zeros(1, 4, 1e-3);
        let y = plane(6, 6, |r, c| 0.1 + 0.05 * r as f64 + 0.02 * c as f64);
        let trace = cascade_tensor(&y, &w, 3, false).unwrap();
        let b = loss_breakdown(&trace, &LossWeights::default());
        assert!(b.fidelity.iter().all(|&f| f == 0.0));
        assert!(b.smoothness.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn constant_plane_is_perfectly_smooth() {
        let mut w = SciWeights::<f64>::zeros(1, 4, 1e-3);
        w.illumination.layers[2].bias.values_mut()[0] = 0.2;
        let y = plane(5, 7, |_, _| 0.3);
        let trace = cascade_tensor(&y, &w, 3, false).unwrap();
        let b = loss_breakdown(&trace, &LossWeights::default());
        assert!(b.smoothness.iter().all(|&s| s == 0.0));
        assert!(b.fidelity.iter().all(|&f| f > 0.0));
    }

    #[test]
    fn smoothness_by_hand() {
        // 1x2 plane, x = y because weights are zero: one right-neighbour pair.
        let w = SciWeights::<f64>::zeros(1, 2, 1e-3);
        let y = plane(1, 2, |_, c| if c == 0 { 0.2 } else { 0.4 });
        let trace = cascade_tensor(&y, &w, 1, false).unwrap();
        let lw = LossWeights::default();
        let expected = (-(0.2f64 * 0.2) / (2.0 * 0.01)).exp() * 0.2 / 2.0;
        let b = loss_breakdown(&trace, &lw);
        assert!((b.smoothness[0] - expected).abs() < 1e-12);
        assert!((b.total - lw.beta * expected).abs() < 1e-12);
    }

    #[test]
    fn requires_caches() {
        let w = SciWeights::<f64>::zeros(1, 2, 1e-3);
        let y = plane(3, 3, |_, _| 0.5);
        let trace = cascade_tensor(&y, &w, 2, false).unwrap();
        assert!(sci_loss(&trace, &w, &LossWeights::default()).is_err());
    }

    /// He init zeroes the biases, and later stages see planes clamped to
    /// exactly 0; together they park ReLU units on their kink, where a
    /// central difference measures half a slope. Checks run off the kink.
    fn with_random_biases(mut w: SciWeights<f64>, seed: u64) -> SciWeights<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in w.illumination.layers.iter_mut().chain(w.calibration.layers.iter_mut()) {
            for b in l.bias.values_mut() {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        w
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y = plane(8, 8, |_, _| rng.random_range(0.05..0.6));
        let mut obj = CascadeObjective {
            weights: with_random_biases(SciWeights::init(1, 4, 1e-3, 5), 6),
            y,
            stages: 3,
            loss: LossWeights::default(),
        };
        let report = grad_check_model(&mut obj, 1e-6);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn f32_and_f64_gradients_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f32> = (0..100).map(|_| rng.random_range(0.05..0.5)).collect();
        let y32 = Tensor::from_vec(&[1, 1, 10, 10], vals).unwrap();
        let w32 = SciWeights::<f32>::init(1, 4, 1e-3, 2);
        let w64 = w32.cast::<f64>();
        let lw = LossWeights::default();
        let t32 = cascade_tensor(&y32, &w32, 3, true).unwrap();
        let t64 = cascade_tensor(&y32.cast::<f64>(), &w64, 3, true).unwrap();
        let (l32, g32) = sci_loss(&t32, &w32, &lw).unwrap();
        let (l64, g64) = sci_loss(&t64, &w64, &lw).unwrap();
        assert!((l32 - l64).abs() < 1e-5 * l64.abs().max(1.0));
        let g32 = g32.flatten();
        let g64 = g64.flatten();
        let scale = g64.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in g32.iter().zip(&g64) {
            assert!((*a as f64 - b).abs() < 1e-3 * scale);
        }
    }
}
