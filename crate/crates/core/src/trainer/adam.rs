use crate::error::{Error, Result};
use crate::net::{Gradients, RegNetModel};
use crate::scalar::Scalar;

/// Moment buffers for one parameter set, laid out as a list of groups
/// (one per network tensor, or a single group for a bare vector).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(group_lens: &[usize]) -> Self {
        Self {
            m: group_lens.iter().map(|n| vec![T::zero(); *n]).collect(),
            v: group_lens.iter().map(|n| vec![T::zero(); *n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &RegNetModel<T>) -> Self {
        let lens: Vec<usize> = model.tensors().iter().map(|t| t.data.len()).collect();
        Self::new(&lens)
    }

    /// Bias-corrected step sizes for the current `t` (after increment).
    fn corrections(&self) -> (T, T) {
        let t = self.t as i32;
        let c1 = T::one() - T::lit(self.beta1).powi(t);
        let c2 = T::one() - T::lit(self.beta2).powi(t);
        (c1, c2)
    }

    fn step_group(&mut self, k: usize, params: &mut [T], grad: &[T], lr: &[T], c: (T, T)) {
        let (b1, b2, eps) = (T::lit(self.beta1), T::lit(self.beta2), T::lit(self.eps));
        let one = T::one();
        let (m, v) = (&mut self.m[k], &mut self.v[k]);
        for i in 0..params.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let mh = m[i] / c.0;
            let vh = v[i] / c.1;
            params[i] -= lr[i.min(lr.len() - 1)] * mh / (vh.sqrt() + eps);
        }
    }

    /// One step on a single-group state; `lr` is either one rate or one per parameter.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: &[T]) -> Result<()> {
        if self.m.len() != 1 || self.m[0].len() != params.len() || grad.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state for {:?} parameters, got {} parameters and {} gradients",
                self.m.iter().map(Vec::len).collect::<Vec<_>>(),
                params.len(),
                grad.len()
            )));
        }
        if lr.is_empty() || (lr.len() != 1 && lr.len() != params.len()) {
            return Err(Error::ShapeMismatch(format!("{} learning rates for {} parameters", lr.len(), params.len())));
        }
        self.t += 1;
        let c = self.corrections();
        self.step_group(0, params, grad, lr, c);
        Ok(())
    }
}

/// Bias-corrected Adam step over every trainable tensor of `model`, with the
/// per-tensor multiplier of [`crate::net::NetConfig::lr_scale`]; frozen tensors and their
/// moment buffers are left untouched.
pub fn adam_update<T: Scalar>(
    state: &mut AdamState<T>,
    model: &mut RegNetModel<T>,
    grads: &Gradients<T>,
    lr: f64,
) -> Result<()> {
    let shapes_ok = state.m.len() == model.tensors().len()
        && state.m.iter().zip(model.tensors()).all(|(m, t)| m.len() == t.data.len());
    if !shapes_ok {
        return Err(Error::ShapeMismatch("adam state does not match the model".into()));
    }
    state.t += 1;
    let c = state.corrections();
    let cfg = model.config().clone();
    model.update_trainable(grads, |k, params, g| state.step_group(k, params, g, &[T::lit(lr * cfg.lr_scale(k))], c))
}
