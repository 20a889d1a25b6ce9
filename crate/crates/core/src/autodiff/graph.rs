use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::exec::Exec;

use super::kernels::ConvGeom;
use super::Scalar;

pub(crate) type Values<T> = Rc<Vec<T>>;

/// Recorded operation of a node. Saved state is whatever the vector-Jacobian
/// product needs beyond the parent values and the node's own output.
#[derive(Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(T),
    AddScalar,
    Sqrt,
    LeakyRelu(T),
    SumAll,
    BroadcastAll,
    SumPerSample,
    BroadcastPerSample,
    AddChannelBias,
    ChannelSum,
    BroadcastChannel,
    ChannelScale(Values<T>),
    Conv(ConvGeom),
    ConvInputGrad(ConvGeom),
    ConvKernelGrad(ConvGeom),
    PixelShuffle(usize),
    PixelUnshuffle(usize),
    Bilinear,
    BilinearAdjoint,
    AvgPool2,
    AvgPool2Adjoint,
    Concat(usize),
    Slice { axis: usize, start: usize },
    Pad { axis: usize, before: usize },
    InstanceNorm { inv_std: Values<T> },
    Softmax(usize),
    /// Result of a backward rule that is not itself differentiable.
    FirstOrderOnly(&'static str),
}

pub(crate) struct Node<T> {
    pub value: Values<T>,
    pub shape: Vec<usize>,
    pub op: Op<T>,
    pub parents: Vec<usize>,
    pub requires_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    exec: Exec,
}

/// Append-only tape of tensor operations.
///
/// Handles are cheap to clone; a graph and all its tensors live on one thread.
pub struct Graph<T: Scalar> {
    inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
pub struct Tensor<T: Scalar> {
    graph: Graph<T>,
    id: usize,
    shape: Vec<usize>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            graph: self.graph.clone(),
            id: self.id,
            shape: self.shape.clone(),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .finish()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Self {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                recording: true,
                exec,
            })),
        }
    }

    pub fn exec(&self) -> Exec {
        self.inner.borrow().exec
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, values: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape(format!(
                "{} values cannot fill shape {shape:?}",
                values.len()
            )));
        }
        Ok(self.push_node(Rc::new(values), shape.to_vec(), Op::Leaf, &[], requires_grad))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, values: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.leaf(values, shape, false)
    }

    /// A leaf that gradients are accumulated into.
    pub fn variable(&self, values: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.leaf(values, shape, true)
    }

    pub fn scalar(&self, v: T) -> Tensor<T> {
        self.push_node(Rc::new(vec![v]), vec![], Op::Leaf, &[], false)
    }

    pub fn full(&self, shape: &[usize], v: T) -> Tensor<T> {
        let n = shape.iter().product();
        self.push_node(Rc::new(vec![v; n]), shape.to_vec(), Op::Leaf, &[], false)
    }

    pub(crate) fn shared_constant(&self, values: Values<T>, shape: &[usize]) -> Tensor<T> {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.push_node(values, shape.to_vec(), Op::Leaf, &[], false)
    }

    pub(crate) fn push(
        &self,
        value: Vec<T>,
        shape: Vec<usize>,
        op: Op<T>,
        parents: &[&Tensor<T>],
    ) -> Tensor<T> {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let ids: Vec<usize> = parents
            .iter()
            .map(|p| {
                assert!(
                    Rc::ptr_eq(&p.graph.inner, &self.inner),
                    "tensors from different graphs cannot be combined"
                );
                p.id
            })
            .collect();
        let requires = {
            let inner = self.inner.borrow();
            inner.recording && ids.iter().any(|&i| inner.nodes[i].requires_grad)
        };
        if requires {
            self.push_node(Rc::new(value), shape, op, &ids, true)
        } else {
            self.push_node(Rc::new(value), shape, Op::Leaf, &[], false)
        }
    }

    fn push_node(
        &self,
        value: Values<T>,
        shape: Vec<usize>,
        op: Op<T>,
        parents: &[usize],
        requires_grad: bool,
    ) -> Tensor<T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            shape: shape.clone(),
            op,
            parents: parents.to_vec(),
            requires_grad,
        });
        Tensor {
            graph: self.clone(),
            id,
            shape,
        }
    }

    pub(crate) fn values_of(&self, id: usize) -> Values<T> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn handle(&self, id: usize) -> Tensor<T> {
        let shape = self.inner.borrow().nodes[id].shape.clone();
        Tensor {
            graph: self.clone(),
            id,
            shape,
        }
    }

    /// Gradients of a scalar `loss` with respect to every variable it depends on.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        let map = self.run_backward(loss, None, false)?;
        Ok(Gradients { map })
    }

    /// Gradients of `loss` with respect to `wrt` only.
    ///
    /// With `create_graph` the returned gradients are themselves recorded on
    /// the tape and can be differentiated again.
    pub fn grad(
        &self,
        loss: &Tensor<T>,
        wrt: &[&Tensor<T>],
        create_graph: bool,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let targets: Vec<usize> = wrt.iter().map(|t| t.id).collect();
        let mut map = self.run_backward(loss, Some(&targets), create_graph)?;
        Ok(targets.iter().map(|id| map.remove(id)).collect())
    }

    fn run_backward(
        &self,
        loss: &Tensor<T>,
        targets: Option<&[usize]>,
        create_graph: bool,
    ) -> Result<HashMap<usize, Tensor<T>>> {
        if loss.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape
            )));
        }
        let n = loss.id + 1;
        let relevant: Vec<bool> = {
            let inner = self.inner.borrow();
            let mut rel = vec![false; n];
            match targets {
                None => {
                    for (id, r) in rel.iter_mut().enumerate() {
                        *r = inner.nodes[id].requires_grad;
                    }
                }
                Some(t) => {
                    for &id in t {
                        if id < n {
                            rel[id] = true;
                        }
                    }
                    for id in 0..n {
                        let node = &inner.nodes[id];
                        if !rel[id] && node.requires_grad {
                            rel[id] = node.parents.iter().any(|&p| rel[p]);
                        }
                    }
                }
            }
            rel
        };
        let is_target = |id: usize| targets.map_or(false, |t| t.contains(&id));

        let previous = std::mem::replace(&mut self.inner.borrow_mut().recording, create_graph);
        let result = (|| {
            let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
            let mut out = HashMap::new();
            grads[loss.id] = Some(self.full(&loss.shape, T::one()));
            for id in (0..n).rev() {
                if !relevant[id] {
                    continue;
                }
                let Some(g) = grads[id].take() else { continue };
                let (op, parents) = {
                    let inner = self.inner.borrow();
                    let node = &inner.nodes[id];
                    (node.op.clone(), node.parents.clone())
                };
                if parents.is_empty() {
                    if targets.is_none() || is_target(id) {
                        out.insert(id, g);
                    }
                    continue;
                }
                if is_target(id) {
                    out.insert(id, g.clone());
                }
                let want: Vec<bool> = parents.iter().map(|&p| relevant[p]).collect();
                let pgrads = self.vjp(&op, id, &parents, &want, &g)?;
                for ((&p, pg), w) in parents.iter().zip(pgrads).zip(want) {
                    let (Some(pg), true) = (pg, w) else { continue };
                    grads[p] = Some(match grads[p].take() {
                        Some(acc) => acc.add(&pg)?,
                        None => pg,
                    });
                }
            }
            Ok(out)
        })();
        self.inner.borrow_mut().recording = previous;
        result
    }

    /// Vector-Jacobian product of one node, expressed with tape operations.
    fn vjp(
        &self,
        op: &Op<T>,
        id: usize,
        parents: &[usize],
        want: &[bool],
        g: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let p = |i: usize| self.handle(parents[i]);
        let me = || self.handle(id);
        let only = |t: Tensor<T>| vec![Some(t)];
        Ok(match op {
            Op::Leaf => vec![],
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.scale(-T::one()))],
            Op::Mul => vec![
                if want[0] { Some(g.mul(&p(1))?) } else { None },
                if want[1] { Some(g.mul(&p(0))?) } else { None },
            ],
            Op::Scale(c) => only(g.scale(*c)),
            Op::AddScalar => only(g.clone()),
            Op::Sqrt => {
                let y = me().values();
                let gv = g.values();
                let dx = gv
                    .iter()
                    .zip(y.iter())
                    .map(|(&gi, &yi)| {
                        if yi > T::zero() {
                            gi * T::from_f64(0.5) / yi
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                only(self.first_order("sqrt", dx, &p(0), g))
            }
            Op::LeakyRelu(slope) => {
                let x = p(0).values();
                let mask = x
                    .iter()
                    .map(|&v| if v > T::zero() { T::one() } else { *slope })
                    .collect();
                let mask = self.constant(mask, &p(0).shape)?;
                only(g.mul(&mask)?)
            }
            Op::SumAll => only(g.broadcast_to(&p(0).shape)?),
            Op::BroadcastAll => only(g.sum_all()),
            Op::SumPerSample => only(g.broadcast_per_sample(&p(0).shape)?),
            Op::BroadcastPerSample => only(g.sum_per_sample()?),
            Op::AddChannelBias => vec![
                Some(g.clone()),
                if want[1] { Some(g.channel_sum()?) } else { None },
            ],
            Op::ChannelSum => only(g.broadcast_channel(&p(0).shape)?),
            Op::BroadcastChannel => only(g.channel_sum()?),
            Op::ChannelScale(scale) => only(g.channel_scale_shared(Rc::clone(scale))?),
            Op::Conv(geom) => vec![
                if want[0] { Some(g.conv_input_grad(&p(1), *geom)?) } else { None },
                if want[1] { Some(g.conv_kernel_grad(&p(0), *geom)?) } else { None },
            ],
            Op::ConvInputGrad(geom) => vec![
                if want[0] { Some(g.conv_geom(&p(1), *geom)?) } else { None },
                if want[1] { Some(p(0).conv_kernel_grad(g, *geom)?) } else { None },
            ],
            Op::ConvKernelGrad(geom) => vec![
                if want[0] { Some(p(1).conv_geom(g, *geom)?) } else { None },
                if want[1] { Some(p(0).conv_input_grad(g, *geom)?) } else { None },
            ],
            Op::PixelShuffle(r) => only(g.pixel_unshuffle(*r)?),
            Op::PixelUnshuffle(r) => only(g.pixel_shuffle(*r)?),
            Op::Bilinear => {
                let s = p(0).shape;
                let r = s.len();
                only(g.bilinear_adjoint(s[r - 2], s[r - 1])?)
            }
            Op::BilinearAdjoint => {
                let s = p(0).shape;
                let r = s.len();
                only(g.bilinear_upsample(s[r - 2], s[r - 1])?)
            }
            Op::AvgPool2 => only(g.avg_pool2_adjoint()?),
            Op::AvgPool2Adjoint => only(g.avg_pool2()?),
            Op::Concat(axis) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parents.len());
                for i in 0..parents.len() {
                    let len = p(i).shape[*axis];
                    out.push(if want[i] {
                        Some(g.slice(*axis, offset, len)?)
                    } else {
                        None
                    });
                    offset += len;
                }
                out
            }
            Op::Slice { axis, start } => {
                let full = p(0).shape[*axis];
                let len = g.shape[*axis];
                only(g.pad(*axis, *start, full - start - len)?)
            }
            Op::Pad { axis, before } => {
                let len = p(0).shape[*axis];
                only(g.slice(*axis, *before, len)?)
            }
            Op::InstanceNorm { inv_std } => {
                let y = me().values();
                let shape = &g.shape;
                let plane: usize = shape[2..].iter().product();
                let dx = super::kernels::instance_norm_backward(&g.values(), &y, inv_std, plane);
                only(self.first_order("instance_norm", dx, &p(0), g))
            }
            Op::Softmax(axis) => {
                let y = me().values();
                let dx = super::kernels::softmax_backward(&g.values(), &y, &g.shape, *axis);
                only(self.first_order("softmax", dx, &p(0), g))
            }
            Op::FirstOrderOnly(name) => {
                return Err(Error::Unsupported(format!(
                    "second-order gradient through {name}"
                )))
            }
        })
    }

    fn first_order(&self, name: &'static str, dx: Vec<T>, x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
        self.push(dx, x.shape.clone(), Op::FirstOrderOnly(name), &[x, g])
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn values(&self) -> Values<T> {
        self.graph.values_of(self.id)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.values().as_ref().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        let v = self.values();
        assert_eq!(v.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        v[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// Same values, cut off from the tape.
    pub fn detach(&self) -> Tensor<T> {
        self.graph.shared_constant(self.values(), &self.shape)
    }
}

/// Gradients produced by [`Graph::backward`], keyed by leaf.
pub struct Gradients<T: Scalar> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&t.id)
    }

    pub fn values(&self, t: &Tensor<T>) -> Option<Vec<T>> {
        self.get(t).map(Tensor::to_vec)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
