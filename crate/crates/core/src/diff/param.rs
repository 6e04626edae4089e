use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DiffError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Ones,
    Normal { std: f64 },
    /// Uniform in +-sqrt(6 / (fan_in + fan_out)).
    Xavier,
}

impl Init {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(self, rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
        let n = rows * cols;
        let data: Vec<T> = match self {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| T::of(dist.sample(rng))).collect()
            }
            Init::Xavier => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect()
            }
        };
        Tensor::new(rows, cols, data).expect("sized above")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub init: Init,
    /// Whether decoupled weight decay applies. Off for biases and gains.
    pub decay: bool,
}

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamRegistry<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamRegistry<T> {
    pub fn new() -> Self {
        ParamRegistry { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, init: Init, decay: bool) -> Result<ParamId, DiffError> {
        if self.by_name.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param { name: name.to_string(), value, init, decay });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Adds a freshly initialized parameter.
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        decay: bool,
        rng: &mut R,
    ) -> Result<ParamId, DiffError> {
        let value = init.sample(rows, cols, rng);
        self.insert(name, value, init, decay)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamRegistry<U> {
        ParamRegistry {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), init: p.init, decay: p.decay })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Overwrites values by name from `other`; every name must exist here
    /// with the same shape.
    pub fn load_values(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<(), DiffError> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in named {
            let id = self.id(&name).ok_or_else(|| DiffError::Checkpoint(format!("unexpected tensor `{name}`")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != t.shape() {
                return Err(DiffError::Shape(format!(
                    "`{name}`: checkpoint {:?} vs model {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t;
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(DiffError::Checkpoint(format!("missing tensor `{}`", self.params[i].name)));
        }
        Ok(())
    }
}

/// Per-parameter gradients, indexed like the registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(n: usize) -> Self {
        ParamGrads { grads: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot => *slot = Some(g.clone()),
        }
    }

    pub fn set(&mut self, id: ParamId, g: Tensor<T>) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0] = Some(g);
    }

    /// Adds another gradient set into this one.
    pub fn merge(&mut self, other: &ParamGrads<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.all_finite())
    }

    /// Global L2 norm over every gradient.
    pub fn norm(&self) -> f64 {
        let sq: f64 = self.grads.iter().flatten().flat_map(|g| g.data()).map(|x| x.to_f64c() * x.to_f64c()).sum();
        sq.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut r = ParamRegistry::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        r.add("w", 2, 2, Init::Xavier, true, &mut rng).unwrap();
        assert!(matches!(r.add("w", 1, 1, Init::Zeros, false, &mut rng), Err(DiffError::DuplicateParam(_))));
        assert_eq!(r.numel(), 4);
    }

    #[test]
    fn xavier_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f64> = Init::Xavier.sample(10, 20, &mut rng);
        assert!(t.max_abs() <= (6.0f64 / 30.0).sqrt());
    }
}
