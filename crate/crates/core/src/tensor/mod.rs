//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major array. Applying a primitive to
//! tensors that require gradients records a node linking the output to its
//! inputs; [`backward`] walks those links in reverse topological order (the
//! [`Tape`]) and accumulates vector-Jacobian products.
//!
//! The primitive set is deliberately small and fixed, see [`apply_primitive`].
//! There is no broadcasting apart from scalar scaling.

mod gradcheck;
pub(crate) mod kernels;
mod ops;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rustfft::num_traits::{Float, FromPrimitive};
use rustfft::{Fft, FftNum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{gradcheck, GradcheckReport};
pub(crate) use ops::Op;
pub use ops::{Axis, LinearOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Scalar types a tensor can hold.
pub trait Element: Float + FftNum + FromPrimitive + Default + fmt::Display {
    const DTYPE: DType;

    fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<Self>>;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossless(self) -> f64;
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<Self>> {
        kernels::plan_f64(len, inverse)
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn to_f64_lossless(self) -> f64 {
        self
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<Self>> {
        kernels::plan_f32(len, inverse)
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Identity of a tensor value, used to key gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

pub(crate) struct Node<T: Element> {
    pub op: Op<T>,
    pub inputs: Vec<Tensor<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Element = f64> {
    shape: Vec<usize>,
    data: Arc<[T]>,
    requires_grad: bool,
    id: TensorId,
    node: Option<Arc<Node<T>>>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.requires_grad)
            .finish_non_exhaustive()
    }
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::contract("tensor", format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self::leaf(shape.to_vec(), data))
    }

    pub(crate) fn leaf(shape: Vec<usize>, data: Vec<T>) -> Self {
        Tensor { shape, data: data.into(), requires_grad: false, id: TensorId(fresh_id()), node: None }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![T::zero(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::leaf(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn scalar(v: T) -> Self {
        Self::leaf(vec![1], vec![v])
    }

    /// Same values as a fresh trainable leaf.
    pub fn param(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: true,
            id: TensorId(fresh_id()),
            node: None,
        }
    }

    /// Same values, cut off from any recorded history.
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            id: TensorId(fresh_id()),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.to_vec()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[&Tensor<T>]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            !inputs.iter().all(|t| t.data.iter().all(|v| v.is_finite())) || data.iter().all(|v| v.is_finite()),
            "{} produced a non-finite value from finite inputs",
            op.name()
        );
        let track = inputs.iter().any(|t| t.requires_grad);
        Tensor {
            shape,
            data: data.into(),
            requires_grad: track,
            id: TensorId(fresh_id()),
            node: track.then(|| Arc::new(Node { op, inputs: inputs.iter().map(|t| (*t).clone()).collect() })),
        }
    }
}

/// Value of a primitive attribute.
#[derive(Clone, Debug, PartialEq)]
pub enum Attr {
    Int(i64),
    Float(f64),
    Ints(Vec<usize>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Attrs(BTreeMap<String, Attr>);

impl Attrs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn int(mut self, key: &str, v: i64) -> Self {
        self.0.insert(key.to_string(), Attr::Int(v));
        self
    }

    pub fn float(mut self, key: &str, v: f64) -> Self {
        self.0.insert(key.to_string(), Attr::Float(v));
        self
    }

    pub fn ints(mut self, key: &str, v: Vec<usize>) -> Self {
        self.0.insert(key.to_string(), Attr::Ints(v));
        self
    }

    fn get_usize(&self, op: &'static str, key: &str) -> Result<usize> {
        match self.0.get(key) {
            Some(Attr::Int(v)) if *v >= 0 => Ok(*v as usize),
            _ => Err(Error::contract(op, format!("missing non-negative int attribute `{key}`"))),
        }
    }

    fn get_usize_or(&self, op: &'static str, key: &str, default: usize) -> Result<usize> {
        if self.0.contains_key(key) {
            self.get_usize(op, key)
        } else {
            Ok(default)
        }
    }

    fn get_f64(&self, op: &'static str, key: &str) -> Result<f64> {
        match self.0.get(key) {
            Some(Attr::Float(v)) => Ok(*v),
            Some(Attr::Int(v)) => Ok(*v as f64),
            _ => Err(Error::contract(op, format!("missing float attribute `{key}`"))),
        }
    }

    fn get_ints(&self, op: &'static str, key: &str) -> Result<Vec<usize>> {
        match self.0.get(key) {
            Some(Attr::Ints(v)) => Ok(v.clone()),
            _ => Err(Error::contract(op, format!("missing int-list attribute `{key}`"))),
        }
    }

    fn get_axis(&self, op: &'static str) -> Result<Axis> {
        match self.get_usize(op, "axis")? {
            1 => Ok(Axis::Height),
            2 => Ok(Axis::Width),
            a => Err(Error::contract(op, format!("axis must be 1 or 2, got {a}"))),
        }
    }
}

/// Applies a primitive by name. Returns one tensor for every primitive except
/// `split_channels`, which returns one per requested part.
///
/// Inputs and attributes per primitive:
///
/// | name | inputs | attrs |
/// |---|---|---|
/// | add, sub, mul | a, b (same shape) | |
/// | scale | x | `factor` |
/// | sum, mean, square, gelu, sigmoid | x | |
/// | matvec | m `[r, c]`, v `[c]` | |
/// | conv2d | x `[ci,h,w]`, w `[co,ci,k,k]`, optional bias `[co]` | `stride`, `pad` |
/// | conv2d_transpose | x `[ci,h,w]`, w `[ci,co,k,k]`, optional bias | `stride`, `pad`, `out_pad` (default 0) |
/// | concat_channels | one or more `[c_i,h,w]` | |
/// | split_channels | x | `sizes` |
/// | slice_rows | x | `start`, `len` |
/// | pad_rows | x | `before`, `after` |
/// | reshape | x | `shape` |
/// | rfft_axis | x `[c,h,w]` | `axis` (1 = height, 2 = width) |
/// | irfft_axis | y `[2c,..]` | `axis`, `len` |
/// | fft_axis | z `[2c,h,w]` | `axis` |
/// | complex_hadamard | z `[2c,h,w]`, kernel `[2c,n]` | `axis` |
pub fn apply_primitive<T: Element>(name: &str, inputs: &[&Tensor<T>], attrs: &Attrs) -> Result<Vec<Tensor<T>>> {
    fn arity<T: Element>(op: &'static str, inputs: &[&Tensor<T>], lo: usize, hi: usize) -> Result<()> {
        if inputs.len() < lo || inputs.len() > hi {
            return Err(Error::contract(op, format!("expected {lo}..={hi} inputs, got {}", inputs.len())));
        }
        Ok(())
    }
    let one = |t: Tensor<T>| Ok(vec![t]);
    match name {
        "add" => {
            arity("add", inputs, 2, 2)?;
            one(inputs[0].add(inputs[1])?)
        }
        "sub" => {
            arity("sub", inputs, 2, 2)?;
            one(inputs[0].sub(inputs[1])?)
        }
        "mul" => {
            arity("mul", inputs, 2, 2)?;
            one(inputs[0].mul(inputs[1])?)
        }
        "scale" => {
            arity("scale", inputs, 1, 1)?;
            let f = attrs.get_f64("scale", "factor")?;
            one(inputs[0].scale(T::from_f64_lossy(f)))
        }
        "sum" => {
            arity("sum", inputs, 1, 1)?;
            one(inputs[0].sum())
        }
        "mean" => {
            arity("mean", inputs, 1, 1)?;
            one(inputs[0].mean())
        }
        "square" => {
            arity("square", inputs, 1, 1)?;
            one(inputs[0].square())
        }
        "gelu" => {
            arity("gelu", inputs, 1, 1)?;
            one(inputs[0].gelu())
        }
        "sigmoid" => {
            arity("sigmoid", inputs, 1, 1)?;
            one(inputs[0].sigmoid())
        }
        "matvec" => {
            arity("matvec", inputs, 2, 2)?;
            one(inputs[0].matvec(inputs[1])?)
        }
        "conv2d" => {
            arity("conv2d", inputs, 2, 3)?;
            let stride = attrs.get_usize("conv2d", "stride")?;
            let pad = attrs.get_usize("conv2d", "pad")?;
            one(inputs[0].conv2d(inputs[1], inputs.get(2).copied(), stride, pad)?)
        }
        "conv2d_transpose" => {
            arity("conv2d_transpose", inputs, 2, 3)?;
            let stride = attrs.get_usize("conv2d_transpose", "stride")?;
            let pad = attrs.get_usize("conv2d_transpose", "pad")?;
            let out_pad = attrs.get_usize_or("conv2d_transpose", "out_pad", 0)?;
            one(inputs[0].conv2d_transpose(inputs[1], inputs.get(2).copied(), stride, pad, out_pad)?)
        }
        "concat_channels" => {
            arity("concat_channels", inputs, 1, usize::MAX)?;
            one(Tensor::concat_channels(inputs)?)
        }
        "split_channels" => {
            arity("split_channels", inputs, 1, 1)?;
            inputs[0].split_channels(&attrs.get_ints("split_channels", "sizes")?)
        }
        "slice_rows" => {
            arity("slice_rows", inputs, 1, 1)?;
            let start = attrs.get_usize("slice_rows", "start")?;
            let len = attrs.get_usize("slice_rows", "len")?;
            one(inputs[0].slice_rows(start, len)?)
        }
        "pad_rows" => {
            arity("pad_rows", inputs, 1, 1)?;
            let before = attrs.get_usize("pad_rows", "before")?;
            let after = attrs.get_usize("pad_rows", "after")?;
            one(inputs[0].pad_rows(before, after)?)
        }
        "reshape" => {
            arity("reshape", inputs, 1, 1)?;
            one(inputs[0].reshape(&attrs.get_ints("reshape", "shape")?)?)
        }
        "rfft_axis" => {
            arity("rfft_axis", inputs, 1, 1)?;
            one(inputs[0].rfft_axis(attrs.get_axis("rfft_axis")?)?)
        }
        "irfft_axis" => {
            arity("irfft_axis", inputs, 1, 1)?;
            let len = attrs.get_usize("irfft_axis", "len")?;
            one(inputs[0].irfft_axis(attrs.get_axis("irfft_axis")?, len)?)
        }
        "fft_axis" => {
            arity("fft_axis", inputs, 1, 1)?;
            one(inputs[0].fft_axis(attrs.get_axis("fft_axis")?)?)
        }
        "complex_hadamard" => {
            arity("complex_hadamard", inputs, 2, 2)?;
            one(inputs[0].complex_hadamard(inputs[1], attrs.get_axis("complex_hadamard")?)?)
        }
        other => Err(Error::UnknownPrimitive(other.to_string())),
    }
}

/// Recorded primitive applications reachable from one output, in
/// topological order (inputs before the nodes that consume them).
pub struct Tape<T: Element> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Element> Tape<T> {
    pub fn record(output: &Tensor<T>) -> Self {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        // Iterative post-order DFS; inputs are visited in argument order so
        // the tape (and the accumulation order) is deterministic.
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(output.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id) {
                continue;
            }
            let node = t.node.clone();
            stack.push((t, true));
            if let Some(node) = node {
                for inp in node.inputs.iter().rev() {
                    if inp.requires_grad && !seen.contains(&inp.id) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        Tape { nodes: order }
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().filter(|t| t.node.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradients produced by [`backward`], keyed by tensor identity.
#[derive(Default)]
pub struct Gradients<T: Element> {
    grads: HashMap<TensorId, Vec<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient with respect to `t`; zeros when the loss does not depend on it.
    pub fn get(&self, t: &Tensor<T>) -> Tensor<T> {
        match self.grads.get(&t.id) {
            Some(g) => Tensor::leaf(t.shape.clone(), g.clone()),
            None => Tensor::zeros(&t.shape),
        }
    }

    pub fn contains(&self, t: &Tensor<T>) -> bool {
        self.grads.contains_key(&t.id)
    }
}

/// Reverse-mode sweep from a scalar loss.
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<Gradients<T>> {
    if !loss.is_scalar() {
        return Err(Error::contract("backward", format!("loss must be scalar, got shape {:?}", loss.shape)));
    }
    let tape = Tape::record(loss);
    let mut grads: HashMap<TensorId, Vec<T>> = HashMap::new();
    grads.insert(loss.id, vec![T::one()]);
    for t in tape.nodes.iter().rev() {
        let Some(node) = &t.node else { continue };
        let Some(g) = grads.get(&t.id) else { continue };
        let g = g.clone();
        let input_grads = node.op.vjp(&node.inputs, t, &g);
        for (inp, ig) in node.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !inp.requires_grad {
                continue;
            }
            match grads.get_mut(&inp.id) {
                Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a = *a + *b),
                None => {
                    grads.insert(inp.id, ig);
                }
            }
        }
    }
    Ok(Gradients { grads })
}
