use super::{ConvLayer, ConvStack, Tensor};

/// A scalar objective over a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn param_count(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, value: f64);
    fn loss(&self) -> f64;
    fn gradient(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index with the largest error, if any parameter was checked.
    pub worst: Option<usize>,
    pub checked: usize,
}

/// Below this magnitude gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of every parameter with a central finite
/// difference of half-width `step`.
pub fn grad_check_model<M: Differentiable + ?Sized>(model: &mut M, step: f64) -> GradCheckReport {
    let analytic = model.gradient();
    assert_eq!(analytic.len(), model.param_count(), "gradient length");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = model.param(i);
        model.set_param(i, orig + step);
        let plus = model.loss();
        model.set_param(i, orig - step);
        let minus = model.loss();
        model.set_param(i, orig);
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(a, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(i);
        }
    }
    report
}

pub(crate) fn stack_param<T: super::Real>(layers: &[ConvLayer<T>], mut i: usize) -> T {
    for l in layers {
        if i < l.kernel.len() {
            return l.kernel.values()[i];
        }
        i -= l.kernel.len();
        if i < l.bias.len() {
            return l.bias.values()[i];
        }
        i -= l.bias.len();
    }
    panic!("parameter index out of range")
}

pub(crate) fn set_stack_param<T: super::Real>(layers: &mut [ConvLayer<T>], mut i: usize, v: T) {
    for l in layers {
        if i < l.kernel.len() {
            l.kernel.values_mut()[i] = v;
            return;
        }
        i -= l.kernel.len();
        if i < l.bias.len() {
            l.bias.values_mut()[i] = v;
            return;
        }
        i -= l.bias.len();
    }
    panic!("parameter index out of range")
}

struct StackObjective<'a, F> {
    stack: ConvStack<f64>,
    input: &'a Tensor<f64>,
    loss: F,
}

impl<F> Differentiable for StackObjective<'_, F>
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    fn param_count(&self) -> usize {
        self.stack.param_count()
    }

    fn param(&self, i: usize) -> f64 {
        stack_param(&self.stack.layers, i)
    }

    fn set_param(&mut self, i: usize, value: f64) {
        set_stack_param(&mut self.stack.layers, i, value)
    }

    fn loss(&self) -> f64 {
        let out = self.stack.forward(self.input).expect("consistent shapes");
        (self.loss)(&out).0
    }

    fn gradient(&self) -> Vec<f64> {
        let cache = self.stack.forward_cached(self.input).expect("consistent shapes");
        let (_, g_out) = (self.loss)(cache.output());
        let (_, grads) = self.stack.backward(&g_out, &cache).expect("consistent shapes");
        grads
            .into_iter()
            .flat_map(|g| g.kernel.into_iter().chain(g.bias))
            .collect()
    }
}

/// Maximum relative error between backpropagated and finite-difference
/// gradients for a conv chain under `loss`, which returns the loss value and
/// its gradient with respect to the chain output.
pub fn grad_check<F>(network: &[ConvLayer<f64>], input: &Tensor<f64>, loss: F) -> f64
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let mut obj = StackObjective {
        stack: ConvStack::new(network.to_vec()),
        input,
        loss,
    };
    grad_check_model(&mut obj, 1e-5).max_rel_error
}
