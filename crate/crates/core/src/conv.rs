//! Cross-relation convolution and MLP fusion.
//!
//! Filter `p` holds one `s × D` kernel per relation. At window position `m`
//! it takes the inner product of rows `m..m+s` of every relation slice with
//! the matching kernel and sums over relations, so a single response mixes
//! evidence from all relations at once. Responses of all filters are
//! concatenated filter-major and passed through a two-layer ReLU MLP.

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TensorError};
use crate::pooling::PooledNeighborhood;
use crate::tensor::Tensor;

/// `P` kernels stored as one `[P, T, s, D]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub kernels: Tensor,
}

impl FilterBank {
    pub fn new(kernels: Tensor) -> Result<Self> {
        if kernels.rank() != 4 || kernels.shape()[2] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "FilterBank",
                left: kernels.shape().to_vec(),
                right: vec![0, 0, 1, 0],
            }
            .into());
        }
        Ok(Self { kernels })
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn relations(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn window(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn dim(&self) -> usize {
        self.kernels.shape()[3]
    }

    /// Kernel `p` as a `[T, s, D]` tensor.
    pub fn kernel(&self, p: usize) -> Tensor {
        let shape = &self.kernels.shape()[1..];
        let size: usize = shape.iter().product();
        let data = self.kernels.data()[p * size..(p + 1) * size].to_vec();
        Tensor::new(shape.to_vec(), data).expect("slice of a valid bank")
    }
}

/// Two affine layers with ReLU in between: `W2ᵀ relu(W1ᵀ x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    pub fn input_width(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.w2.shape()[1]
    }
}

/// Tape handles for the four MLP tensors.
#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpVars {
    pub fn bind(tape: &mut Tape, mlp: &Mlp, requires_grad: bool) -> Self {
        Self {
            w1: tape.leaf(mlp.w1.clone(), requires_grad),
            b1: tape.leaf(mlp.b1.clone(), requires_grad),
            w2: tape.leaf(mlp.w2.clone(), requires_grad),
            b2: tape.leaf(mlp.b2.clone(), requires_grad),
        }
    }

    /// Applies the MLP to every row of `input`.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let h = tape.matmul(input, self.w1)?;
        let h = tape.add_row(h, self.b1)?;
        let h = tape.relu(h)?;
        let out = tape.matmul(h, self.w2)?;
        Ok(tape.add_row(out, self.b2)?)
    }
}

/// Embedding of one node together with the raw filter responses it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbedding {
    /// `[H]`
    pub embedding: Tensor,
    /// `[P, k − s + 1]`, or empty when built from non-convolutional input.
    pub responses: Tensor,
}

fn conv_value(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "cross_conv",
            left: x.shape().to_vec(),
            right: kernels.shape().to_vec(),
        }
        .into());
    }
    let mut tape = Tape::new();
    let mut batched = vec![1];
    batched.extend_from_slice(x.shape());
    let xv = tape.constant(x.reshape(&batched)?);
    let kv = tape.constant(kernels.clone());
    let out = tape.cross_conv(xv, kv)?;
    Ok(tape.value(out).clone())
}

/// Responses of a single `[T, s, D]` kernel over a `[T, k, D]` pooled tensor.
pub fn conv_filter(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    if kernel.rank() != 3 {
        return Err(TensorError::ShapeMismatch {
            op: "conv_filter",
            left: x.shape().to_vec(),
            right: kernel.shape().to_vec(),
        }
        .into());
    }
    let mut stacked = vec![1];
    stacked.extend_from_slice(kernel.shape());
    let out = conv_value(x, &kernel.reshape(&stacked)?)?;
    let len = out.len();
    Ok(out.reshape(&[len])?)
}

/// Responses of every filter, `[P, k − s + 1]`.
pub fn conv_all(x: &PooledNeighborhood, bank: &FilterBank) -> Result<Tensor> {
    let out = conv_value(&x.x, &bank.kernels)?;
    let p = bank.filters();
    let l = out.len().checked_div(p).unwrap_or(0);
    Ok(out.reshape(&[p, l])?)
}

/// Runs the MLP on flattened responses.
pub fn fuse_mlp(responses: &Tensor, mlp: &Mlp) -> Result<NodeEmbedding> {
    if responses.len() != mlp.input_width() {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_mlp",
            left: vec![responses.len()],
            right: mlp.w1.shape().to_vec(),
        }
        .into());
    }
    let mut tape = Tape::new();
    let input = tape.constant(responses.reshape(&[1, responses.len()])?);
    let vars = MlpVars::bind(&mut tape, mlp, false);
    let out = vars.forward(&mut tape, input)?;
    let h = mlp.output_width();
    Ok(NodeEmbedding {
        embedding: tape.value(out).reshape(&[h])?,
        responses: responses.clone(),
    })
}
