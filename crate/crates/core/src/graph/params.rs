use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{GraphError, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor with its gradient buffer and AdaGrad accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub accum: Vec<f64>,
    /// Entries marked `false` are never updated by the optimizer.
    pub trainable: Option<Vec<bool>>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.value.clone())
    }

    /// Width of one row (trailing axis).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.value[r * c..(r + 1) * c]
    }
}

/// Owns every parameter of a model. Shapes are fixed at registration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(GraphError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let shape = tensor.shape().to_vec();
        let value = tensor.into_data();
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            shape,
            value,
            grad: vec![0.0; n],
            accum: vec![0.0; n],
            trainable: None,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers a parameter filled with `N(0, std²)` draws.
    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| normal.sample(rng)).collect()
        } else {
            vec![0.0; n]
        };
        self.add(name, Tensor::new(shape, data))
    }

    pub(crate) fn push_raw(&mut self, param: Param) -> Result<ParamId> {
        if self.by_name.contains_key(&param.name) {
            return Err(GraphError::DuplicateParam(param.name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| GraphError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        Ok(self.get(self.id(name)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Freezes the given flat entries of a parameter.
    pub fn freeze_entries(&mut self, id: ParamId, entries: impl IntoIterator<Item = usize>) {
        let p = &mut self.params[id.0];
        let mask = p.trainable.get_or_insert_with(|| vec![true; p.value.len()]);
        for e in entries {
            mask[e] = false;
        }
    }
}
