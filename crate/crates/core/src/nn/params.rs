//! Arena of parameter tensors.
//!
//! Networks never own weights directly; they hold [`ParamId`]s into a
//! [`ParamStore`]. Two networks that resolve a name to the same id read and
//! write the same storage, which is how filter sharing is realized.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which network(s) a stored tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partition {
    /// Owned by a single standalone network.
    Standalone,
    Shared,
    ElrOnly,
    HrOnly,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Standalone => "standalone",
            Partition::Shared => "shared",
            Partition::ElrOnly => "elr",
            Partition::HrOnly => "hr",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub partition: Partition,
    pub value: Tensor<T>,
    /// Momentum buffer.
    pub velocity: Tensor<T>,
    /// Number of optimizer updates applied so far.
    pub updates: u64,
}

/// SGD with momentum and L2 weight decay:
/// `v ← momentum·v − lr·(g + weight_decay·θ)`, `θ ← θ + v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdStep {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
    generation: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            generation: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, partition: Partition, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::InvalidSpec(format!("duplicate parameter name {name:?}")));
        }
        let velocity = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            partition,
            value,
            velocity,
            updates: 0,
        });
        self.generation += 1;
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Mutable access; bumps the generation so outstanding caches go stale.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        self.generation += 1;
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, partition: Partition) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.partition == partition)
            .map(|(id, _)| id)
            .collect()
    }

    /// Counter that changes whenever any stored value changes.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn sgd_update(&mut self, id: ParamId, grad: &Tensor<T>, step: SgdStep) -> Result<()> {
        let p = &mut self.params[id.0];
        grad.expect_shape("sgd_update", p.value.shape())?;
        let (lr, mu, wd) = (T::lit(step.lr), T::lit(step.momentum), T::lit(step.weight_decay));
        for ((theta, v), &g) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.velocity.data_mut())
            .zip(grad.data())
        {
            *v = mu * *v - lr * (g + wd * *theta);
            *theta += *v;
        }
        p.updates += 1;
        self.generation += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Partition::Standalone, Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Partition::Shared, Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn momentum_update_by_hand() {
        let mut s = ParamStore::<f64>::new();
        let id = s
            .insert("w", Partition::Standalone, Tensor::from_vec(&[1], vec![1.0]).unwrap())
            .unwrap();
        let step = SgdStep {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.5,
        };
        let g = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        s.sgd_update(id, &g, step).unwrap();
        // v = -0.1 * (2 + 0.5) = -0.25
        assert!((s.value(id).data()[0] - 0.75).abs() < 1e-15);
        s.sgd_update(id, &g, step).unwrap();
        // v = 0.9*-0.25 - 0.1*(2 + 0.375) = -0.4625
        assert!((s.value(id).data()[0] - (0.75 - 0.4625)).abs() < 1e-15);
        assert_eq!(s.get(id).updates, 2);
    }

    #[test]
    fn mutation_bumps_generation() {
        let mut s = ParamStore::<f32>::new();
        let id = s.insert("w", Partition::Standalone, Tensor::zeros(&[1])).unwrap();
        let g0 = s.generation();
        s.value_mut(id).data_mut()[0] = 1.0;
        assert!(s.generation() > g0);
    }
}
