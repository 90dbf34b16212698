//! Reverse-mode differentiation over dense matrices.
//!
//! Every node stores its forward value. [`Tape::backward`] walks the nodes
//! in reverse creation order and accumulates adjoints. Scalars are 1x1
//! matrices.

use crate::linalg::top_singular_triplet;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    MatMul(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    /// `a * s` with `s` a 1x1 node.
    ScaleBy(Var, Var),
    AddConst(Var),
    /// Adds a 1xd row to every row.
    AddRowBroadcast(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Exp(Var),
    Ln(Var),
    Recip(Var),
    PowConst(Var, f64),
    Softplus(Var),
    RowSums(Var),
    /// `diag(s) a` with `s` a column.
    RowScale(Var, Var),
    /// `a diag(s)` with `s` a column.
    ColScale(Var, Var),
    Sum(Var),
    MaskedSum(Var, Matrix),
    MeanRows(Var),
    /// Largest singular value; the left/right singular vectors are kept for
    /// the adjoint `u v^T`.
    SpectralNorm(Var, Matrix),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by [`Var`]. Nodes the output does not depend on have
/// zero adjoint.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn scalar(x: f64) -> Matrix {
    Matrix::from_element(1, 1, x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(scalar(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let v = self.value(a) * self.scalar_value(s);
        self.push(v, Op::ScaleBy(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).add_scalar(c);
        self.push(v, Op::AddConst(a))
    }

    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row).clone();
        let mut v = self.value(a).clone();
        for mut vr in v.row_iter_mut() {
            vr += &r;
        }
        self.push(v, Op::AddRowBroadcast(a, row))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).abs();
        self.push(v, Op::Abs(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a))
    }

    pub fn pow_const(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.push(v, Op::PowConst(a, p))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::from_fn(m.nrows(), 1, |i, _| m.row(i).sum());
        self.push(v, Op::RowSums(a))
    }

    pub fn row_scale(&mut self, a: Var, s: Var) -> Var {
        let (m, sv) = (self.value(a), self.value(s));
        let v = Matrix::from_fn(m.nrows(), m.ncols(), |i, j| sv[(i, 0)] * m[(i, j)]);
        self.push(v, Op::RowScale(a, s))
    }

    pub fn col_scale(&mut self, a: Var, s: Var) -> Var {
        let (m, sv) = (self.value(a), self.value(s));
        let v = Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * sv[(j, 0)]);
        self.push(v, Op::ColScale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn masked_sum(&mut self, a: Var, mask: Matrix) -> Var {
        let v = scalar(self.value(a).component_mul(&mask).sum());
        self.push(v, Op::MaskedSum(a, mask))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = m.nrows() as f64;
        let v = Matrix::from_fn(1, m.ncols(), |_, j| m.column(j).sum() / n);
        self.push(v, Op::MeanRows(a))
    }

    pub fn spectral_norm(&mut self, a: Var) -> Var {
        let (s, u, w) = top_singular_triplet(self.value(a));
        let dir = &u * w.transpose();
        self.push(scalar(s), Op::SpectralNorm(a, dir))
    }

    /// Reverse sweep from a 1x1 output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        let n = out.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => *existing += g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -g.clone());
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b).transpose());
                    acc(&mut grads, *b, self.value(*a).transpose() * &g);
                }
                Op::Hadamard(a, b) => {
                    acc(&mut grads, *a, g.component_mul(self.value(*b)));
                    acc(&mut grads, *b, g.component_mul(self.value(*a)));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::ScaleBy(a, s) => {
                    acc(&mut grads, *a, &g * self.scalar_value(*s));
                    acc(&mut grads, *s, scalar(g.component_mul(self.value(*a)).sum()));
                }
                Op::AddConst(a) => acc(&mut grads, *a, g.clone()),
                Op::AddRowBroadcast(a, r) => {
                    let cols = Matrix::from_fn(1, g.ncols(), |_, j| g.column(j).sum());
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *r, cols);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
                }
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_map(&node.value, |gi, y| gi * (1.0 - y * y))),
                Op::Abs(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else if xi < 0.0 { -gi } else { 0.0 }));
                }
                Op::Exp(a) => acc(&mut grads, *a, g.component_mul(&node.value)),
                Op::Ln(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |gi, xi| gi / xi)),
                Op::Recip(a) => acc(&mut grads, *a, g.zip_map(&node.value, |gi, y| -gi * y * y)),
                Op::PowConst(a, p) => {
                    acc(&mut grads, *a, g.zip_map(self.value(*a), |gi, xi| gi * p * xi.powf(p - 1.0)))
                }
                Op::Softplus(a) => acc(&mut grads, *a, g.zip_map(self.value(*a), |gi, xi| gi * sigmoid(xi))),
                Op::RowSums(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
                }
                Op::RowScale(a, s) => {
                    let (m, sv) = (self.value(*a), self.value(*s));
                    let ga = Matrix::from_fn(m.nrows(), m.ncols(), |i, j| sv[(i, 0)] * g[(i, j)]);
                    let gs = Matrix::from_fn(m.nrows(), 1, |i, _| g.row(i).dot(&m.row(i)));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *s, gs);
                }
                Op::ColScale(a, s) => {
                    let (m, sv) = (self.value(*a), self.value(*s));
                    let ga = Matrix::from_fn(m.nrows(), m.ncols(), |i, j| g[(i, j)] * sv[(j, 0)]);
                    let gs = Matrix::from_fn(m.ncols(), 1, |j, _| g.column(j).dot(&m.column(j)));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *s, gs);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::from_element(r, c, g[(0, 0)]));
                }
                Op::MaskedSum(a, mask) => acc(&mut grads, *a, mask * g[(0, 0)]),
                Op::MeanRows(a) => {
                    let (r, c) = self.value(*a).shape();
                    let inv = 1.0 / r as f64;
                    acc(&mut grads, *a, Matrix::from_fn(r, c, |_, j| g[(0, j)] * inv));
                }
                Op::SpectralNorm(a, dir) => acc(&mut grads, *a, dir * g[(0, 0)]),
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Gradients { grads, shapes }
    }
}
