use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

use super::{Graph, Gradients, Scalar, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    /// Non-trainable entries (running statistics) are skipped by optimisers.
    pub trainable: bool,
}

/// Named `f32` parameters of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f32>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter {name}")));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!("parameter {name}: {} values for {shape:?}", data.len())));
        }
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            trainable,
        });
        Ok(ParamId(id))
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn kaiming_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, shape, data, true)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize], trainable: bool) -> Result<ParamId> {
        self.add(name, shape, vec![0.0; shape.iter().product()], trainable)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.params[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    /// Places every parameter on `graph`. Trainable entries become variables
    /// when `requires_grad` is set; running statistics are always constants.
    pub fn bind<T: Scalar>(&self, graph: &Graph<T>, requires_grad: bool) -> Bound<T> {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                let v: Vec<T> = p.data.iter().map(|&x| T::from_f64(f64::from(x))).collect();
                let t = if requires_grad && p.trainable {
                    graph.variable(v, &p.shape)
                } else {
                    graph.constant(v, &p.shape)
                };
                t.expect("stored parameters always match their shape")
            })
            .collect();
        Bound { tensors }
    }

    /// Collects per-parameter gradients after `backward`; `None` where the
    /// parameter did not influence the loss.
    pub fn collect_grads<T: Scalar>(&self, bound: &Bound<T>, grads: &Gradients<T>) -> Vec<Option<Vec<f32>>> {
        bound
            .tensors
            .iter()
            .zip(&self.params)
            .map(|(t, p)| {
                if !p.trainable {
                    return None;
                }
                grads
                    .get(t)
                    .map(|g| g.values().iter().map(|v| v.as_f64() as f32).collect())
            })
            .collect()
    }

    /// Gradients of `loss` with respect to the trainable entries of `bound`
    /// only; the rest of the tape is left alone.
    pub fn grads_of<T: Scalar>(&self, bound: &Bound<T>, loss: &Tensor<T>) -> crate::Result<Vec<Option<Vec<f32>>>> {
        let picked: Vec<usize> = (0..self.params.len())
            .filter(|&i| self.params[i].trainable && bound.tensors[i].requires_grad())
            .collect();
        let wrt: Vec<&Tensor<T>> = picked.iter().map(|&i| &bound.tensors[i]).collect();
        let grads = loss.graph().grad(loss, &wrt, false)?;
        let mut out = vec![None; self.params.len()];
        for (&i, g) in picked.iter().zip(grads) {
            out[i] = g.map(|t| t.values().iter().map(|v| v.as_f64() as f32).collect());
        }
        Ok(out)
    }

    /// Tensors named `prefix + name`, for checkpointing.
    pub fn export(&self, prefix: &str) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: format!("{prefix}{}", p.name),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
            .collect()
    }

    /// Overwrites every parameter from `tensors`; all must be present with matching shapes.
    pub fn import(&mut self, prefix: &str, tensors: &HashMap<String, NamedTensor>) -> Result<()> {
        for p in &mut self.params {
            let key = format!("{prefix}{}", p.name);
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {key} has shape {:?}, expected {:?}",
                    t.shape, p.shape
                )));
            }
            p.data.clone_from(&t.data);
        }
        Ok(())
    }
}

/// A tensor with a name, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Parameters of a [`ParamStore`] placed on one graph.
pub struct Bound<T: Scalar> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Bound<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }
}
