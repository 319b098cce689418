use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// Named learnable tensors of one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

/// Serialized form of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<F>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    /// Kaiming-uniform weights with bound `sqrt(6 / fan_in)`.
    pub fn kaiming(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| F::c(bound * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        self.push(name, shape, data)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> ParamId {
        let n = shape.iter().product();
        self.push(name, shape, vec![F::c(value); n])
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p
                        .data
                        .iter()
                        .map(|v| G::c(v.to_f64().unwrap_or(f64::NAN)))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_stored(&self) -> Vec<StoredParam> {
        self.params
            .iter()
            .map(|p| StoredParam {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            })
            .collect()
    }

    /// Overwrites values from a stored list; names and shapes must match
    /// this store exactly, in order.
    pub fn load_stored(&mut self, stored: &[StoredParam]) -> Result<(), String> {
        if stored.len() != self.params.len() {
            return Err(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                stored.len()
            ));
        }
        for (p, s) in self.params.iter_mut().zip(stored) {
            if p.name != s.name || p.shape != s.shape {
                return Err(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    p.name, p.shape, s.name, s.shape
                ));
            }
            p.data = s.data.iter().map(|&v| F::c(v as f64)).collect();
        }
        Ok(())
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub grads: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            grads: store.iter().map(|p| vec![F::zero(); p.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.grads[id.0]
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}
