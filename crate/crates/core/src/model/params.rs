use std::collections::BTreeMap;
use std::ops::Index;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameter storage, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.insert(
            name.to_string(),
            Param {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    /// Uniform in `±sqrt(1/fan_in)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        let a = (1.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-a..=a)).collect();
        self.insert(name, shape, data);
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, shape, vec![value; shape.iter().product()]);
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Wraps every parameter in a tensor; trainable tensors collect gradients.
    pub fn bind(&self, trainable: bool) -> Bound {
        let tensors = self
            .params
            .iter()
            .map(|(k, p)| {
                let t = if trainable {
                    Tensor::leaf(&p.shape, p.data.clone())
                } else {
                    Tensor::new(&p.shape, p.data.clone())
                };
                (k.clone(), t.expect("stored shape matches data"))
            })
            .collect();
        Bound { tensors }
    }

    /// Checks that `other` holds exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        for (k, p) in &self.params {
            match other.params.get(k) {
                None => return Err(Error::Checkpoint(format!("missing parameter {k}"))),
                Some(q) if q.shape != p.shape => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {k} has shape {:?}, expected {:?}",
                        q.shape, p.shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(k) = other.params.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter {k}")));
        }
        Ok(())
    }
}

/// Parameters bound to tensors for one forward/backward pass.
pub struct Bound {
    tensors: BTreeMap<String, Tensor>,
}

impl Bound {
    /// Binds externally created tensors under the given names.
    pub fn from_tensors(names: &[String], tensors: &[Tensor]) -> Self {
        Self {
            tensors: names.iter().cloned().zip(tensors.iter().cloned()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    /// Gradients after `backward`; parameters outside the graph get zeros.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                let g = t.grad().map(|g| g.clone()).unwrap_or_else(|| vec![0.0; t.numel()]);
                (k.clone(), g)
            })
            .collect()
    }
}

impl<S: AsRef<str>> Index<S> for Bound {
    type Output = Tensor;

    fn index(&self, name: S) -> &Tensor {
        let name = name.as_ref();
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }
}
