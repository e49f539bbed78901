//! Named parameter groups and the SGD-with-momentum optimizer.

use crate::error::{Error, Result};
use crate::grid::Grid4;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    name: String,
    value: Grid4,
    velocity: Vec<f64>,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Grid4 {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Grid4 {
        &mut self.value
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// Ordered set of uniquely named parameters, each with a momentum buffer
/// of the same shape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGroup {
    params: Vec<Param>,
}

impl ParamGroup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Grid4) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let velocity = vec![0.0; value.shape().len()];
        self.params.push(Param {
            name,
            value: value.detached(),
            velocity,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Grid4> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Grid4> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().len()).sum()
    }

    /// Records every parameter on `tape`; constants when `trainable` is false.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let v = if trainable {
                    tape.leaf(p.value.detached())
                } else {
                    tape.constant(p.value.detached())
                };
                (p.name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Copies gradients from a finished backward pass into the gradient
    /// slots; parameters the loss did not reach get zeros.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<()> {
        for p in &mut self.params {
            let v = bound.var(&p.name)?;
            p.value.set_grad(tape.grad_or_zero(v))?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.value.clear_grad();
        }
    }

    pub fn reset_velocity(&mut self) {
        for p in &mut self.params {
            p.velocity.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Moves every parameter of `other` into this group.
    pub fn extend(&mut self, other: ParamGroup) -> Result<()> {
        for p in other.params {
            if self.get(&p.name).is_some() {
                return Err(Error::invalid(format!("duplicate parameter name `{}`", p.name)));
            }
            self.params.push(p);
        }
        Ok(())
    }

    /// True when values are bitwise identical (gradients and velocity ignored).
    pub fn values_bit_equal(&self, other: &ParamGroup) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Tape handles for one bound [`ParamGroup`], looked up by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::invalid(format!("no bound parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// One SGD step with classical momentum:
/// `v <- momentum * v + grad; p <- p - lr * v`. Gradients are zeroed
/// afterwards.
pub fn sgd_momentum_step(params: &mut ParamGroup, lr: f64, momentum: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate {lr} must be finite and >= 0")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid(format!("momentum {momentum} not in [0, 1)")));
    }
    if let Some(p) = params.params.iter().find(|p| p.value.grad().is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    for p in &mut params.params {
        let grad = p.value.grad().expect("checked above").to_vec();
        for ((w, v), g) in p.value.data_mut().iter_mut().zip(&mut p.velocity).zip(&grad) {
            *v = momentum * *v + g;
            *w -= lr * *v;
        }
        p.value.zero_grad();
    }
    Ok(())
}
