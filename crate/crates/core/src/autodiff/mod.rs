//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive application in order. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in exact reverse
//! recording order, so gradients are bitwise reproducible for a given seed.
//!
//! ```
//! use spnas::autodiff::Graph;
//! use spnas::Tensor;
//!
//! let mut g = Graph::<f64>::new(0);
//! let x = g.param(Tensor::scalar(0.0));
//! let y = g.sigmoid(x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(g.value(y).item(), 0.5);
//! assert_eq!(grads.get(x).unwrap()[0], 0.25);
//! ```

mod conv;
mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

pub use conv::{axis_geometry, Padding};
pub use ops::BatchNormState;

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a thresholded indicator behaves in the forward and backward passes.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateKind {
    /// `1(x > t)`, zero gradient.
    Hard,
    /// `sigmoid(beta * (x - t))` in both passes.
    Sigmoid { beta: f64 },
    /// Hard forward; backward passes the upstream gradient through as if
    /// the gate were `x - t`.
    StraightThrough,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        k: Var,
        geom: conv::Geometry,
        depthwise: bool,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        x: Var,
        s: Var,
    },
    Affine {
        x: Var,
        a: T,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    RowBias {
        x: Var,
        b: Var,
    },
    MulChannels {
        x: Var,
        gate: Var,
    },
    Relu6(Var),
    Sigmoid(Var),
    Log(Var),
    GlobalAvgPool(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Mask {
        x: Var,
        mask: Mask,
    },
    GroupLasso {
        x: Var,
        mask: Mask,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Gate {
        x: Var,
        t: Var,
        kind: GateKind,
    },
    Softmax(Var),
    Select {
        x: Var,
        index: usize,
    },
    Sum(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation plus a seeded random stream for stochastic masks.
#[derive(Debug)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    rng: ChaCha8Rng,
}

/// Gradients of a scalar output with respect to every recorded value.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` does not influence the output through differentiable
    /// paths.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `v`, zero-filled when absent.
    pub fn tensor(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        let shape = graph.value(v).shape().to_vec();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn check_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&mut self, c: T) -> Var {
        self.constant(Tensor::scalar(c))
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.nodes[output.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(up) = grads[i].take() else { continue };
            self.backprop(i, &up, &mut grads);
            grads[i] = Some(up);
        }
        Ok(Gradients { grads })
    }
}
