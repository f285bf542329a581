use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Convolution kernel.
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub kind: ParamKind,
}

impl<T: Real> Param<T> {
    pub fn trainable(&self) -> bool {
        self.kind.trainable()
    }
}

/// Named parameters in definition order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: IndexMap::new() }
    }

    /// Adds a parameter with a zero gradient and returns its index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> Result<usize> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config { layer: name, reason: "duplicate parameter name".into() });
        }
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.entries.insert_full(name, Param { value, grad, kind });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.entries[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.entries[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        self.entries.get_index(idx).map(|(k, _)| k.as_str()).expect("index in range")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Scalar count; running statistics only with `include_non_trainable`.
    pub fn count(&self, include_non_trainable: bool) -> u64 {
        self.entries
            .values()
            .filter(|p| include_non_trainable || p.trainable())
            .map(|p| p.value.len() as u64)
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(T::zero());
        }
    }

    pub(crate) fn set_grad(&mut self, idx: usize, grad: Tensor<T>) -> Result<()> {
        let p = &mut self.entries[idx];
        if p.value.shape() != grad.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} does not match parameter {:?}",
                grad.shape(),
                p.value.shape()
            )));
        }
        p.grad = grad;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), grad: p.grad.cast(), kind: p.kind }))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_and_counts() {
        let mut s = ParamStore::<f32>::new();
        s.insert("b.weight", Tensor::zeros(&[2, 3]), ParamKind::Weight).unwrap();
        s.insert("a.bias", Tensor::zeros(&[2]), ParamKind::Bias).unwrap();
        s.insert("bn.running_mean", Tensor::zeros(&[2]), ParamKind::RunningMean).unwrap();
        let names: Vec<_> = s.iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["b.weight", "a.bias", "bn.running_mean"]);
        assert_eq!(s.count(false), 8);
        assert_eq!(s.count(true), 10);
        assert!(s.insert("a.bias", Tensor::zeros(&[1]), ParamKind::Bias).is_err());
    }
}
