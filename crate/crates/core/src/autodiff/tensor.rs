//! Tensor values, the operation graph and the backward pass.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::fmath;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    InvalidArgument(String),
    /// `backward` was called on a non-scalar tensor.
    NonScalarLoss(Vec<usize>),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            TensorError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            TensorError::NonScalarLoss(shape) => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
        }
    }
}

impl core::error::Error for TensorError {}

/// Operation record of a non-leaf node: parents plus whatever the backward
/// pass needs.
enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Neg(Tensor),
    AddScalar(Tensor),
    MulScalar(Tensor, f64),
    Relu(Tensor),
    Abs(Tensor),
    Log(Tensor),
    Exp(Tensor),
    Sqrt(Tensor),
    Square(Tensor),
    Sin(Tensor),
    Sigmoid(Tensor),
    Softplus(Tensor),
    Clamp(Tensor, f64, f64),
    Matmul {
        a: Tensor,
        b: Tensor,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv1d {
        x: Tensor,
        w: Tensor,
        stride: usize,
        dilation: usize,
    },
    DepthwiseConv1d {
        x: Tensor,
        w: Tensor,
        stride: usize,
    },
    BiasAdd(Tensor, Tensor),
    SumAll(Tensor),
    RowMean(Tensor),
    RowStd {
        x: Tensor,
        means: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Tensor,
        label: usize,
        probs: Vec<f64>,
    },
    Reshape(Tensor),
    Concat(Tensor, Tensor),
    SliceRows {
        x: Tensor,
        start: usize,
    },
    HilbertRows(Tensor),
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    value: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Op,
}

/// Handle to a node of the computation graph. Cloning is cheap (reference
/// counted); dropping the last handle to a graph frees it.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

/// Stabilizer inside `row_std` so constant rows have zero gradient instead
/// of NaN.
const STD_EPS: f64 = 1e-8;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), value.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                value: RefCell::new(value),
                grad: RefCell::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// A leaf node. Gradients accumulate here when `requires_grad` is set.
    pub fn leaf(
        shape: &[usize],
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Tensor, TensorError> {
        if numel(shape) == 0 {
            return Err(TensorError::InvalidArgument(String::from(
                "tensors must have at least one element",
            )));
        }
        if data.len() != numel(shape) {
            return Err(TensorError::InvalidArgument(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor::from_parts(
            shape.to_vec(),
            data,
            requires_grad,
            Op::Leaf,
        ))
    }

    /// A constant leaf (never receives gradients).
    pub fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        Tensor::leaf(shape, data, false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_parts(vec![1], vec![v], false, Op::Leaf)
    }

    pub fn zeros(shape: &[usize], requires_grad: bool) -> Result<Tensor, TensorError> {
        Tensor::leaf(shape, vec![0.0; numel(shape)], requires_grad)
    }

    /// Leaf with i.i.d. normal entries scaled by `scale`.
    pub fn randn(
        shape: &[usize],
        scale: f64,
        rng: &mut crate::rng::Rng,
        requires_grad: bool,
    ) -> Result<Tensor, TensorError> {
        let data = (0..numel(shape))
            .map(|_| scale * crate::rng::normal(rng))
            .collect();
        Tensor::leaf(shape, data, requires_grad)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the value buffer (row-major).
    pub fn value(&self) -> Ref<'_, Vec<f64>> {
        self.inner.value.borrow()
    }

    /// Clone the value buffer.
    pub fn data(&self) -> Vec<f64> {
        self.inner.value.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.value.borrow()[0]
    }

    /// Mutate the value in place (parameter updates, checkpoint restore).
    /// Only meaningful on leaves: graphs built from the old value are stale
    /// afterwards.
    pub fn update_value(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.value.borrow_mut())
    }

    /// Clone the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contribution) {
                    *b += c;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn unary(&self, op: Op, value: Vec<f64>) -> Tensor {
        Tensor::from_parts(self.inner.shape.clone(), value, self.requires_grad(), op)
    }

    fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<(), TensorError> {
        if self.inner.shape != other.inner.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.inner.shape.clone(),
                rhs: other.inner.shape.clone(),
            });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_shape(other, "add")?;
        let value = {
            let a = self.value();
            let b = other.value();
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        };
        Ok(Tensor::from_parts(
            self.inner.shape.clone(),
            value,
            self.requires_grad() || other.requires_grad(),
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_shape(other, "sub")?;
        let value = {
            let a = self.value();
            let b = other.value();
            a.iter().zip(b.iter()).map(|(x, y)| x - y).collect()
        };
        Ok(Tensor::from_parts(
            self.inner.shape.clone(),
            value,
            self.requires_grad() || other.requires_grad(),
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_shape(other, "mul")?;
        let value = {
            let a = self.value();
            let b = other.value();
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        };
        Ok(Tensor::from_parts(
            self.inner.shape.clone(),
            value,
            self.requires_grad() || other.requires_grad(),
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    pub fn neg(&self) -> Tensor {
        let value = self.value().iter().map(|x| -x).collect();
        self.unary(Op::Neg(self.clone()), value)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let value = self.value().iter().map(|x| x + c).collect();
        self.unary(Op::AddScalar(self.clone()), value)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let value = self.value().iter().map(|x| x * c).collect();
        self.unary(Op::MulScalar(self.clone(), c), value)
    }

    pub fn relu(&self) -> Tensor {
        let value = self.value().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.unary(Op::Relu(self.clone()), value)
    }

    pub fn abs(&self) -> Tensor {
        let value = self.value().iter().map(|x| x.abs()).collect();
        self.unary(Op::Abs(self.clone()), value)
    }

    pub fn log(&self) -> Tensor {
        let value = self.value().iter().map(|&x| fmath::ln(x)).collect();
        self.unary(Op::Log(self.clone()), value)
    }

    pub fn exp(&self) -> Tensor {
        let value = self.value().iter().map(|&x| fmath::exp(x)).collect();
        self.unary(Op::Exp(self.clone()), value)
    }

    pub fn sqrt(&self) -> Tensor {
        let value = self.value().iter().map(|&x| fmath::sqrt(x)).collect();
        self.unary(Op::Sqrt(self.clone()), value)
    }

    pub fn square(&self) -> Tensor {
        let value = self.value().iter().map(|x| x * x).collect();
        self.unary(Op::Square(self.clone()), value)
    }

    pub fn sin(&self) -> Tensor {
        let value = self.value().iter().map(|&x| fmath::sin(x)).collect();
        self.unary(Op::Sin(self.clone()), value)
    }

    pub fn sigmoid(&self) -> Tensor {
        let value = self.value().iter().map(|&x| stable_sigmoid(x)).collect();
        self.unary(Op::Sigmoid(self.clone()), value)
    }

    /// log(1 + exp(x)), evaluated stably.
    pub fn softplus(&self) -> Tensor {
        let value = self
            .value()
            .iter()
            .map(|&x| {
                let m = if x > 0.0 { x } else { 0.0 };
                m + fmath::ln_1p(fmath::exp(-x.abs()))
            })
            .collect();
        self.unary(Op::Softplus(self.clone()), value)
    }

    /// Clamp values to [lo, hi]. Gradient passes where lo <= x <= hi.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let value = self
            .value()
            .iter()
            .map(|&x| if x < lo { lo } else if x > hi { hi } else { x })
            .collect();
        self.unary(Op::Clamp(self.clone(), lo, hi), value)
    }

    // ---- shape ----

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.inner.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_parts(
            shape.to_vec(),
            self.data(),
            self.requires_grad(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Concatenate two 1-D tensors.
    pub fn concat(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.inner.shape.len() != 1 || other.inner.shape.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: self.inner.shape.clone(),
                rhs: other.inner.shape.clone(),
            });
        }
        let mut value = self.data();
        value.extend_from_slice(&other.value());
        Ok(Tensor::from_parts(
            vec![self.numel() + other.numel()],
            value,
            self.requires_grad() || other.requires_grad(),
            Op::Concat(self.clone(), other.clone()),
        ))
    }

    /// Slice `len` rows starting at `start` along the first axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let rows = self.inner.shape[0];
        if len == 0 || start + len > rows {
            return Err(TensorError::InvalidArgument(format!(
                "slice rows [{start}, {}) out of bounds for {rows} rows",
                start + len
            )));
        }
        let row_size = self.numel() / rows;
        let value = self.value()[start * row_size..(start + len) * row_size].to_vec();
        let mut shape = self.inner.shape.clone();
        shape[0] = len;
        Ok(Tensor::from_parts(
            shape,
            value,
            self.requires_grad(),
            Op::SliceRows {
                x: self.clone(),
                start,
            },
        ))
    }

    // ---- linear algebra / convolution ----

    /// Matrix product of `self` [m, k] and `other` [k, n].
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (a_shape, b_shape) = (&self.inner.shape, &other.inner.shape);
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a_shape.clone(),
                rhs: b_shape.clone(),
            });
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let value = {
            let a = self.value();
            let b = other.value();
            matmul_raw(&a, &b, m, k, n)
        };
        Ok(Tensor::from_parts(
            vec![m, n],
            value,
            self.requires_grad() || other.requires_grad(),
            Op::Matmul {
                a: self.clone(),
                b: other.clone(),
                m,
                k,
                n,
            },
        ))
    }

    /// Valid (no padding) strided cross-correlation. `self` is [C_in, L],
    /// `w` is [C_out, C_in, K]; the result is [C_out, L_out] with
    /// `L_out = (L - ((K-1)*dilation + 1)) / stride + 1`.
    pub fn conv1d(&self, w: &Tensor, stride: usize, dilation: usize) -> Result<Tensor, TensorError> {
        let x_shape = &self.inner.shape;
        let w_shape = &w.inner.shape;
        if x_shape.len() != 2 || w_shape.len() != 3 || x_shape[0] != w_shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                lhs: x_shape.clone(),
                rhs: w_shape.clone(),
            });
        }
        if stride == 0 || dilation == 0 {
            return Err(TensorError::InvalidArgument(String::from(
                "conv1d stride and dilation must be at least 1",
            )));
        }
        let (c_in, len) = (x_shape[0], x_shape[1]);
        let (c_out, k) = (w_shape[0], w_shape[2]);
        let span = (k - 1) * dilation + 1;
        if len < span {
            return Err(TensorError::InvalidArgument(format!(
                "conv1d input length {len} shorter than kernel span {span}"
            )));
        }
        let l_out = (len - span) / stride + 1;
        let mut out = vec![0.0; c_out * l_out];
        {
            let x = self.value();
            let wv = w.value();
            for co in 0..c_out {
                for ci in 0..c_in {
                    let w_row = &wv[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                    let x_row = &x[ci * len..(ci + 1) * len];
                    let o_row = &mut out[co * l_out..(co + 1) * l_out];
                    if dilation == 1 {
                        for (t, o) in o_row.iter_mut().enumerate() {
                            let seg = &x_row[t * stride..t * stride + k];
                            *o += dot(seg, w_row);
                        }
                    } else {
                        for (t, o) in o_row.iter_mut().enumerate() {
                            let base = t * stride;
                            let mut acc = 0.0;
                            for (j, &wj) in w_row.iter().enumerate() {
                                acc += x_row[base + j * dilation] * wj;
                            }
                            *o += acc;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_parts(
            vec![c_out, l_out],
            out,
            self.requires_grad() || w.requires_grad(),
            Op::Conv1d {
                x: self.clone(),
                w: w.clone(),
                stride,
                dilation,
            },
        ))
    }

    /// Per-channel valid strided cross-correlation: `self` [C, L] with
    /// weights [C, K] -> [C, L_out].
    pub fn depthwise_conv1d(&self, w: &Tensor, stride: usize) -> Result<Tensor, TensorError> {
        let x_shape = &self.inner.shape;
        let w_shape = &w.inner.shape;
        if x_shape.len() != 2 || w_shape.len() != 2 || x_shape[0] != w_shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv1d",
                lhs: x_shape.clone(),
                rhs: w_shape.clone(),
            });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument(String::from(
                "depthwise_conv1d stride must be at least 1",
            )));
        }
        let (c, len) = (x_shape[0], x_shape[1]);
        let k = w_shape[1];
        if len < k {
            return Err(TensorError::InvalidArgument(format!(
                "depthwise_conv1d input length {len} shorter than kernel {k}"
            )));
        }
        let l_out = (len - k) / stride + 1;
        let mut out = vec![0.0; c * l_out];
        {
            let x = self.value();
            let wv = w.value();
            for ci in 0..c {
                let w_row = &wv[ci * k..(ci + 1) * k];
                let x_row = &x[ci * len..(ci + 1) * len];
                for (t, o) in out[ci * l_out..(ci + 1) * l_out].iter_mut().enumerate() {
                    *o = dot(&x_row[t * stride..t * stride + k], w_row);
                }
            }
        }
        Ok(Tensor::from_parts(
            vec![c, l_out],
            out,
            self.requires_grad() || w.requires_grad(),
            Op::DepthwiseConv1d {
                x: self.clone(),
                w: w.clone(),
                stride,
            },
        ))
    }

    /// Add a per-row bias: `self` of shape `[C, T]` plus `b` of shape `[C]`.
    pub fn bias_add(&self, b: &Tensor) -> Result<Tensor, TensorError> {
        if self.inner.shape.len() != 2
            || b.inner.shape.len() != 1
            || b.inner.shape[0] != self.inner.shape[0]
        {
            return Err(TensorError::ShapeMismatch {
                op: "bias_add",
                lhs: self.inner.shape.clone(),
                rhs: b.inner.shape.clone(),
            });
        }
        let (c, t) = (self.inner.shape[0], self.inner.shape[1]);
        let value = {
            let x = self.value();
            let bv = b.value();
            let mut out = x.clone();
            for ci in 0..c {
                for v in &mut out[ci * t..(ci + 1) * t] {
                    *v += bv[ci];
                }
            }
            out
        };
        Ok(Tensor::from_parts(
            self.inner.shape.clone(),
            value,
            self.requires_grad() || b.requires_grad(),
            Op::BiasAdd(self.clone(), b.clone()),
        ))
    }

    // ---- reductions ----

    /// Sum of all elements (scalar output).
    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.value().iter().sum();
        Tensor::from_parts(
            vec![1],
            vec![s],
            self.requires_grad(),
            Op::SumAll(self.clone()),
        )
    }

    /// Per-row mean over the second axis: `[C, T]` -> `[C]`.
    pub fn row_mean(&self) -> Result<Tensor, TensorError> {
        let (c, t) = self.rows_cols("row_mean")?;
        let value = {
            let x = self.value();
            (0..c)
                .map(|ci| x[ci * t..(ci + 1) * t].iter().sum::<f64>() / t as f64)
                .collect()
        };
        Ok(Tensor::from_parts(
            vec![c],
            value,
            self.requires_grad(),
            Op::RowMean(self.clone()),
        ))
    }

    /// Per-row standard deviation over the second axis: `[C, T]` -> `[C]`.
    /// Computed as sqrt(mean((x - mean)^2) + 1e-8).
    pub fn row_std(&self) -> Result<Tensor, TensorError> {
        let (c, t) = self.rows_cols("row_std")?;
        let x = self.value();
        let means: Vec<f64> = (0..c)
            .map(|ci| x[ci * t..(ci + 1) * t].iter().sum::<f64>() / t as f64)
            .collect();
        let value: Vec<f64> = (0..c)
            .map(|ci| {
                let mu = means[ci];
                let var = x[ci * t..(ci + 1) * t]
                    .iter()
                    .map(|&v| (v - mu) * (v - mu))
                    .sum::<f64>()
                    / t as f64;
                fmath::sqrt(var + STD_EPS)
            })
            .collect();
        drop(x);
        Ok(Tensor::from_parts(
            vec![c],
            value,
            self.requires_grad(),
            Op::RowStd {
                x: self.clone(),
                means,
            },
        ))
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        if self.inner.shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.inner.shape.clone(),
                rhs: vec![],
            });
        }
        Ok((self.inner.shape[0], self.inner.shape[1]))
    }

    /// Softmax cross-entropy of a 1-D logit vector against an integer label.
    pub fn softmax_cross_entropy(&self, label: usize) -> Result<Tensor, TensorError> {
        if self.inner.shape.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: self.inner.shape.clone(),
                rhs: vec![],
            });
        }
        let k = self.numel();
        if label >= k {
            return Err(TensorError::InvalidArgument(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let (loss, probs) = {
            let logits = self.value();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|&v| fmath::exp(v - m)).sum();
            let lse = m + fmath::ln(sum_exp);
            let probs: Vec<f64> = logits.iter().map(|&v| fmath::exp(v - lse)).collect();
            (lse - logits[label], probs)
        };
        Ok(Tensor::from_parts(
            vec![1],
            vec![loss],
            self.requires_grad(),
            Op::SoftmaxCrossEntropy {
                logits: self.clone(),
                label,
                probs,
            },
        ))
    }

    /// Row-wise discrete Hilbert transform: [N, L] -> [N, L] (a 1-D tensor
    /// is treated as a single row). Linear, so gradients flow through it;
    /// the backward pass uses the transform's anti-self-adjointness.
    pub fn hilbert_rows(&self) -> Result<Tensor, TensorError> {
        let (rows, cols) = match self.inner.shape.len() {
            1 => (1, self.inner.shape[0]),
            2 => (self.inner.shape[0], self.inner.shape[1]),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "hilbert_rows",
                    lhs: self.inner.shape.clone(),
                    rhs: vec![],
                })
            }
        };
        let value = {
            let x = self.value();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let h = crate::dsp::hilbert(&x[r * cols..(r + 1) * cols])
                    .map_err(|e| TensorError::InvalidArgument(format!("{e}")))?;
                out.extend_from_slice(&h);
            }
            out
        };
        Ok(Tensor::from_parts(
            self.inner.shape.clone(),
            value,
            self.requires_grad(),
            Op::HilbertRows(self.clone()),
        ))
    }

    fn parents(&self) -> Vec<Tensor> {
        match &self.inner.op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Concat(a, b) | Op::BiasAdd(a, b) => {
                vec![a.clone(), b.clone()]
            }
            Op::Neg(a)
            | Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Sin(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Clamp(a, _, _)
            | Op::SumAll(a)
            | Op::RowMean(a)
            | Op::Reshape(a)
            | Op::HilbertRows(a) => vec![a.clone()],
            Op::Matmul { a, b, .. } => vec![a.clone(), b.clone()],
            Op::Conv1d { x, w, .. } => vec![x.clone(), w.clone()],
            Op::DepthwiseConv1d { x, w, .. } => vec![x.clone(), w.clone()],
            Op::RowStd { x, .. } => vec![x.clone()],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits.clone()],
            Op::SliceRows { x, .. } => vec![x.clone()],
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + fmath::exp(-x))
    } else {
        let e = fmath::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators so the loop vectorizes.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Run reverse-mode accumulation from a scalar loss. Gradients of every
/// reachable `requires_grad` tensor are accumulated (repeated calls without
/// `zero_grad` add up).
pub fn backward(loss: &Tensor) -> Result<(), TensorError> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    if !loss.requires_grad() {
        return Ok(());
    }
    // Iterative DFS postorder; reversed it is a topological order with every
    // consumer visited before its producers.
    enum Visit {
        Enter(Tensor),
        Exit(Tensor),
    }
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: BTreeSet<u64> = BTreeSet::new();
    let mut stack = vec![Visit::Enter(loss.clone())];
    while let Some(v) = stack.pop() {
        match v {
            Visit::Enter(t) => {
                if !visited.insert(t.inner.id) {
                    continue;
                }
                stack.push(Visit::Exit(t.clone()));
                for p in t.parents() {
                    if p.requires_grad() && !visited.contains(&p.inner.id) {
                        stack.push(Visit::Enter(p));
                    }
                }
            }
            Visit::Exit(t) => order.push(t),
        }
    }
    // Interior gradients are scratch space for this traversal; only leaves
    // accumulate across repeated backward calls.
    for t in &order {
        if !matches!(t.inner.op, Op::Leaf) {
            t.zero_grad();
        }
    }
    loss.accumulate_grad(&[1.0]);
    for t in order.iter().rev() {
        backprop_node(t);
    }
    Ok(())
}

fn backprop_node(t: &Tensor) {
    let g = match t.inner.grad.borrow().as_ref() {
        Some(g) => g.clone(),
        None => return,
    };
    match &t.inner.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if a.requires_grad() {
                a.accumulate_grad(&g);
            }
            if b.requires_grad() {
                b.accumulate_grad(&g);
            }
        }
        Op::Sub(a, b) => {
            if a.requires_grad() {
                a.accumulate_grad(&g);
            }
            if b.requires_grad() {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                b.accumulate_grad(&neg);
            }
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                let bv = b.value();
                let da: Vec<f64> = g.iter().zip(bv.iter()).map(|(gi, bi)| gi * bi).collect();
                drop(bv);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let av = a.value();
                let db: Vec<f64> = g.iter().zip(av.iter()).map(|(gi, ai)| gi * ai).collect();
                drop(av);
                b.accumulate_grad(&db);
            }
        }
        Op::Neg(a) => {
            let da: Vec<f64> = g.iter().map(|v| -v).collect();
            a.accumulate_grad(&da);
        }
        Op::AddScalar(a) => a.accumulate_grad(&g),
        Op::MulScalar(a, c) => {
            let da: Vec<f64> = g.iter().map(|v| v * c).collect();
            a.accumulate_grad(&da);
        }
        Op::Relu(a) => {
            let av = a.value();
            let da: Vec<f64> = g
                .iter()
                .zip(av.iter())
                .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                .collect();
            drop(av);
            a.accumulate_grad(&da);
        }
        Op::Abs(a) => {
            let av = a.value();
            let da: Vec<f64> = g
                .iter()
                .zip(av.iter())
                .map(|(gi, &x)| gi * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
                .collect();
            drop(av);
            a.accumulate_grad(&da);
        }
        Op::Log(a) => {
            let av = a.value();
            let da: Vec<f64> = g.iter().zip(av.iter()).map(|(gi, &x)| gi / x).collect();
            drop(av);
            a.accumulate_grad(&da);
        }
        Op::Exp(a) => {
            let out = t.value();
            let da: Vec<f64> = g.iter().zip(out.iter()).map(|(gi, &y)| gi * y).collect();
            drop(out);
            a.accumulate_grad(&da);
        }
        Op::Sqrt(a) => {
            let out = t.value();
            let da: Vec<f64> = g
                .iter()
                .zip(out.iter())
                .map(|(gi, &y)| gi / (2.0 * y))
                .collect();
            drop(out);
            a.accumulate_grad(&da);
        }
        Op::Square(a) => {
            let av = a.value();
            let da: Vec<f64> = g
                .iter()
                .zip(av.iter())
                .map(|(gi, &x)| gi * 2.0 * x)
                .collect();
            drop(av);
            a.accumulate_grad(&da);
        }
        Op::Sin(a) => {
            let av = a.value();
            let da: Vec<f64> = g
                .iter()
                .zip(av.iter())
                .map(|(gi, &x)| gi * fmath::cos(x))
                .collect();
            drop(av);
            a.accumulate_grad(&da);
        }
        Op::Sigmoid(a) => {
            let out = t.value();
            let da: Vec<f64> = g
                .iter()
                .zip(out.iter())
                .map(|(gi, &s)| gi * s * (1.0 - s))
                .collect();
            drop(out);
            a.accumulate_grad(&da);
        }
        Op::Softplus(a) => {
            let av = a.value();
            let da: Vec<f64> = g
                .iter()
                .zip(av.iter())
                .map(|(gi, &x)| gi * stable_sigmoid(x))
                .collect();
            drop(av);
            a.accumulate_grad(&da);
        }
        Op::Clamp(a, lo, hi) => {
            let av = a.value();
            let da: Vec<f64> = g
                .iter()
                .zip(av.iter())
                .map(|(gi, &x)| if x >= *lo && x <= *hi { *gi } else { 0.0 })
                .collect();
            drop(av);
            a.accumulate_grad(&da);
        }
        Op::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if a.requires_grad() {
                // dA = G * B^T
                let bv = b.value();
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        da[i * k + p] = dot(g_row, &bv[p * n..(p + 1) * n]);
                    }
                }
                drop(bv);
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                // dB = A^T * G
                let av = a.value();
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let g_row = &g[i * n..(i + 1) * n];
                    let a_row = &av[i * k..(i + 1) * k];
                    for (p, &ap) in a_row.iter().enumerate() {
                        if ap == 0.0 {
                            continue;
                        }
                        for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                            *d += ap * gv;
                        }
                    }
                }
                drop(av);
                b.accumulate_grad(&db);
            }
        }
        Op::Conv1d {
            x,
            w,
            stride,
            dilation,
        } => {
            let (stride, dilation) = (*stride, *dilation);
            let (c_in, len) = (x.shape()[0], x.shape()[1]);
            let (c_out, k) = (w.shape()[0], w.shape()[2]);
            let l_out = t.shape()[1];
            if w.requires_grad() {
                let xv = x.value();
                let mut dw = vec![0.0; c_out * c_in * k];
                for co in 0..c_out {
                    let g_row = &g[co * l_out..(co + 1) * l_out];
                    for ci in 0..c_in {
                        let x_row = &xv[ci * len..(ci + 1) * len];
                        let dw_row = &mut dw[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                        if dilation == 1 {
                            for (tt, &gv) in g_row.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let seg = &x_row[tt * stride..tt * stride + k];
                                for (d, &xv) in dw_row.iter_mut().zip(seg) {
                                    *d += gv * xv;
                                }
                            }
                        } else {
                            for (tt, &gv) in g_row.iter().enumerate() {
                                let base = tt * stride;
                                for (j, d) in dw_row.iter_mut().enumerate() {
                                    *d += gv * x_row[base + j * dilation];
                                }
                            }
                        }
                    }
                }
                drop(xv);
                w.accumulate_grad(&dw);
            }
            if x.requires_grad() {
                let wv = w.value();
                let mut dx = vec![0.0; c_in * len];
                for co in 0..c_out {
                    let g_row = &g[co * l_out..(co + 1) * l_out];
                    for ci in 0..c_in {
                        let w_row = &wv[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                        let dx_row = &mut dx[ci * len..(ci + 1) * len];
                        for (tt, &gv) in g_row.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let base = tt * stride;
                            for (j, &wj) in w_row.iter().enumerate() {
                                dx_row[base + j * dilation] += gv * wj;
                            }
                        }
                    }
                }
                drop(wv);
                x.accumulate_grad(&dx);
            }
        }
        Op::DepthwiseConv1d { x, w, stride } => {
            let stride = *stride;
            let (c, len) = (x.shape()[0], x.shape()[1]);
            let k = w.shape()[1];
            let l_out = t.shape()[1];
            if w.requires_grad() {
                let xv = x.value();
                let mut dw = vec![0.0; c * k];
                for ci in 0..c {
                    let g_row = &g[ci * l_out..(ci + 1) * l_out];
                    let x_row = &xv[ci * len..(ci + 1) * len];
                    let dw_row = &mut dw[ci * k..(ci + 1) * k];
                    for (tt, &gv) in g_row.iter().enumerate() {
                        let seg = &x_row[tt * stride..tt * stride + k];
                        for (d, &xv) in dw_row.iter_mut().zip(seg) {
                            *d += gv * xv;
                        }
                    }
                }
                drop(xv);
                w.accumulate_grad(&dw);
            }
            if x.requires_grad() {
                let wv = w.value();
                let mut dx = vec![0.0; c * len];
                for ci in 0..c {
                    let g_row = &g[ci * l_out..(ci + 1) * l_out];
                    let w_row = &wv[ci * k..(ci + 1) * k];
                    let dx_row = &mut dx[ci * len..(ci + 1) * len];
                    for (tt, &gv) in g_row.iter().enumerate() {
                        let base = tt * stride;
                        for (j, &wj) in w_row.iter().enumerate() {
                            dx_row[base + j] += gv * wj;
                        }
                    }
                }
                drop(wv);
                x.accumulate_grad(&dx);
            }
        }
        Op::BiasAdd(x, b) => {
            let (c, tt) = (x.shape()[0], x.shape()[1]);
            if x.requires_grad() {
                x.accumulate_grad(&g);
            }
            if b.requires_grad() {
                let db: Vec<f64> = (0..c).map(|ci| g[ci * tt..(ci + 1) * tt].iter().sum()).collect();
                b.accumulate_grad(&db);
            }
        }
        Op::SumAll(a) => {
            let da = vec![g[0]; a.numel()];
            a.accumulate_grad(&da);
        }
        Op::RowMean(a) => {
            let (c, tt) = (a.shape()[0], a.shape()[1]);
            let mut da = vec![0.0; c * tt];
            for ci in 0..c {
                let gv = g[ci] / tt as f64;
                for d in &mut da[ci * tt..(ci + 1) * tt] {
                    *d = gv;
                }
            }
            a.accumulate_grad(&da);
        }
        Op::RowStd { x, means } => {
            let (c, tt) = (x.shape()[0], x.shape()[1]);
            let out = t.value();
            let xv = x.value();
            let mut dx = vec![0.0; c * tt];
            for ci in 0..c {
                let scale = g[ci] / (tt as f64 * out[ci]);
                let mu = means[ci];
                for (d, &v) in dx[ci * tt..(ci + 1) * tt]
                    .iter_mut()
                    .zip(&xv[ci * tt..(ci + 1) * tt])
                {
                    *d = scale * (v - mu);
                }
            }
            drop(out);
            drop(xv);
            x.accumulate_grad(&dx);
        }
        Op::SoftmaxCrossEntropy {
            logits,
            label,
            probs,
        } => {
            let mut dl = probs.clone();
            dl[*label] -= 1.0;
            for d in &mut dl {
                *d *= g[0];
            }
            logits.accumulate_grad(&dl);
        }
        Op::Reshape(a) => a.accumulate_grad(&g),
        Op::Concat(a, b) => {
            let na = a.numel();
            if a.requires_grad() {
                a.accumulate_grad(&g[..na]);
            }
            if b.requires_grad() {
                b.accumulate_grad(&g[na..]);
            }
        }
        Op::SliceRows { x, start } => {
            let rows = x.shape()[0];
            let row_size = x.numel() / rows;
            let mut dx = vec![0.0; x.numel()];
            dx[start * row_size..start * row_size + g.len()].copy_from_slice(&g);
            x.accumulate_grad(&dx);
        }
        Op::HilbertRows(a) => {
            // The discrete Hilbert transform H is anti-self-adjoint
            // (H^T = -H), so the pullback is -H applied to the gradient.
            let (rows, cols) = if t.shape().len() == 1 {
                (1, t.shape()[0])
            } else {
                (t.shape()[0], t.shape()[1])
            };
            let mut da = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let h = crate::dsp::hilbert(&g[r * cols..(r + 1) * cols])
                    .expect("forward already validated row length");
                da.extend(h.iter().map(|v| -v));
            }
            a.accumulate_grad(&da);
        }
    }
}
