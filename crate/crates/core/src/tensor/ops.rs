use crate::error::{Error, Result};
use crate::real::Real;

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::{Function, Graph, Tensor, Var};

fn c<T: Real>(v: f64) -> T {
    T::from_f64c(v)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu_scalar<T: Real>(x: T) -> T {
    let inner = c::<T>(GELU_K) * (x + c::<T>(GELU_C) * x * x * x);
    c::<T>(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let inner = c::<T>(GELU_K) * (x + c::<T>(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = c::<T>(GELU_K) * (T::one() + c::<T>(3.0 * GELU_C) * x * x);
    c::<T>(0.5) * (T::one() + t) + c::<T>(0.5) * x * (T::one() - t * t) * dinner
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a, b)));
    }
    Ok(())
}

fn matrix_dims(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    match s {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::dim(op, format!("expected a matrix, got shape {:?}", s))),
    }
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Real> Function<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let mut da = vec![T::zero(); self.m * self.k];
        gemm_nt(g, b, &mut da, self.m, self.n, self.k);
        let mut db = vec![T::zero(); self.k * self.n];
        gemm_tn(a, g, &mut db, self.k, self.m, self.n);
        vec![Some(da), Some(db)]
    }
}

struct Transpose {
    m: usize,
    n: usize,
}

fn transpose_slice<T: Real>(x: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

impl<T: Real> Function<T> for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(transpose_slice(g, self.n, self.m))]
    }
}

struct SoftmaxRows {
    cols: usize,
}

impl<T: Real> Function<T> for SoftmaxRows {
    fn name(&self) -> &'static str {
        "softmax_rows"
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let y = out.data();
        let mut dx = vec![T::zero(); y.len()];
        for ((yr, gr), dr) in y.chunks(self.cols).zip(g.chunks(self.cols)).zip(dx.chunks_mut(self.cols)) {
            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                *d = yv * (gv - dot);
            }
        }
        vec![Some(dx)]
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

struct Binary {
    kind: BinaryKind,
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

impl<T: Real> Function<T> for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        match self.kind {
            BinaryKind::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            BinaryKind::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())],
            BinaryKind::Mul => {
                let (a, b) = (inputs[0].data(), inputs[1].data());
                let da = g.iter().zip(b).map(|(&gv, &bv)| gv * bv).collect();
                let db = g.iter().zip(a).map(|(&gv, &av)| gv * av).collect();
                vec![Some(da), Some(db)]
            }
        }
    }
}

struct Scale<T> {
    s: T,
}

impl<T: Real> Function<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&v| v * self.s).collect())]
    }
}

struct AddBias {
    width: usize,
}

impl<T: Real> Function<T> for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut db = vec![T::zero(); self.width];
        for row in g.chunks(self.width) {
            super::linalg::add_into(&mut db, row);
        }
        vec![Some(g.to_vec()), Some(db)]
    }
}

#[derive(Clone, Copy)]
enum UnaryKind {
    Sigmoid,
    Gelu,
    Abs,
}

struct Unary {
    kind: UnaryKind,
}

impl<T: Real> Function<T> for Unary {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Gelu => "gelu",
            UnaryKind::Abs => "abs",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0].data();
        let dx = match self.kind {
            UnaryKind::Sigmoid => out
                .data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| gv * y * (T::one() - y))
                .collect(),
            UnaryKind::Gelu => x.iter().zip(g).map(|(&xv, &gv)| gv * gelu_grad_scalar(xv)).collect(),
            UnaryKind::Abs => x.iter().zip(g).map(|(&xv, &gv)| gv * sign(xv)).collect(),
        };
        vec![Some(dx)]
    }
}

/// Sign with a zero subgradient at zero.
#[inline]
pub(crate) fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[derive(Clone, Copy)]
enum ReduceKind {
    Sum,
    Mean,
    Max(usize),
}

struct Reduce {
    kind: ReduceKind,
    len: usize,
}

impl<T: Real> Function<T> for Reduce {
    fn name(&self) -> &'static str {
        match self.kind {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max(_) => "max",
        }
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let dx = match self.kind {
            ReduceKind::Sum => vec![g[0]; self.len],
            ReduceKind::Mean => vec![g[0] / c::<T>(self.len as f64); self.len],
            ReduceKind::Max(arg) => {
                let mut d = vec![T::zero(); self.len];
                d[arg] = g[0];
                d
            }
        };
        vec![Some(dx)]
    }
}

struct Reshape;

impl<T: Real> Function<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

impl<T: Real> Graph<T> {
    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.record(Box::new(MatMul { m, k, n }), &[a, b], out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = matrix_dims("transpose", self.shape(a))?;
        let out = Tensor::new(&[n, m], transpose_slice(self.value(a).data(), m, n))?;
        Ok(self.record(Box::new(Transpose { m, n }), &[a], out))
    }

    /// Row-wise softmax over the last dimension, max-subtracted.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let cols = *x.shape().last().ok_or_else(|| Error::dim("softmax_rows", "rank-0 input"))?;
        let mut data = x.data().to_vec();
        if cols > 0 {
            data.chunks_mut(cols).for_each(softmax_in_place);
        }
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(Box::new(SoftmaxRows { cols }), &[a], out))
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind, op: &'static str) -> Result<Var> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = match kind {
            BinaryKind::Add => x.iter().zip(y).map(|(&p, &q)| p + q).collect(),
            BinaryKind::Sub => x.iter().zip(y).map(|(&p, &q)| p - q).collect(),
            BinaryKind::Mul => x.iter().zip(y).map(|(&p, &q)| p * q).collect(),
        };
        let out = Tensor::new(self.shape(a), data)?;
        Ok(self.record(Box::new(Binary { kind }), &[a, b], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul, "mul")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let x = self.value(a);
        let out = Tensor::new(x.shape(), x.data().iter().map(|&v| v * s).collect()).expect("same shape");
        self.record(Box::new(Scale { s }), &[a], out)
    }

    /// Adds `bias` along the trailing dimensions of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim("add_bias", format!("bias {:?} does not trail {:?}", sb, sa)));
        }
        let width = self.value(bias).numel();
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        if width > 0 {
            for row in data.chunks_mut(width) {
                super::linalg::add_into(row, b);
            }
        }
        let out = Tensor::new(self.shape(a), data)?;
        Ok(self.record(Box::new(AddBias { width }), &[a, bias], out))
    }

    fn unary(&mut self, a: Var, kind: UnaryKind) -> Var {
        let x = self.value(a);
        let data = match kind {
            UnaryKind::Sigmoid => x.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
            UnaryKind::Gelu => x.data().iter().map(|&v| gelu_scalar(v)).collect(),
            UnaryKind::Abs => x.data().iter().map(|&v| v.abs()).collect(),
        };
        let out = Tensor::new(x.shape(), data).expect("same shape");
        self.record(Box::new(Unary { kind }), &[a], out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Sigmoid)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Gelu)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Abs)
    }

    fn reduce(&mut self, a: Var, kind: ReduceKind) -> Var {
        let x = self.value(a).data();
        let len = x.len();
        let (v, kind) = match kind {
            ReduceKind::Sum => (x.iter().copied().sum(), kind),
            ReduceKind::Mean => (x.iter().copied().sum::<T>() / c::<T>(len as f64), kind),
            ReduceKind::Max(_) => {
                let mut arg = 0;
                for (i, &v) in x.iter().enumerate() {
                    if v > x[arg] {
                        arg = i;
                    }
                }
                (x.get(arg).copied().unwrap_or(T::neg_infinity()), ReduceKind::Max(arg))
            }
        };
        self.record(Box::new(Reduce { kind, len }), &[a], Tensor::scalar(v))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::Sum)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::Mean)
    }

    /// Maximum element; gradient flows to the first maximiser.
    pub fn max(&mut self, a: Var) -> Var {
        self.reduce(a, ReduceKind::Max(0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).detached().reshaped(shape)?;
        Ok(self.record(Box::new(Reshape), &[a], out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut g = Graph::<f64>::new();
        let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let p = g.matmul(a, b).unwrap();
        assert_eq!(g.value(p).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] x [2, 3]"), "{err}");
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let s = g.softmax_rows(a).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = g.constant(t(&[1, 2], &[1000.0, 0.0]));
        let s = g.softmax_rows(a).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_fn(&[4, 9], |i| ((i * 37 % 11) as f64 - 5.0) * 0.7));
        let s = g.softmax_rows(a).unwrap();
        for row in g.value(s).data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sum_and_half_square_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, -1.5]).with_grad());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

        let mut g = Graph::<f64>::new();
        let xv = [1.0, -2.0, 3.0, 0.5, 0.0, -1.5];
        let x = g.leaf(t(&[6], &xv).with_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let l = g.scale(s, 0.5);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &xv);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0]).with_grad());
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0; 3]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::<f64>::zeros(&[2]).with_grad());
        assert!(matches!(g.backward(x), Err(Error::Contract { .. })));
    }

    #[test]
    fn abs_has_zero_subgradient_at_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3], &[-1.0, 0.0, 2.0]).with_grad());
        let a = g.abs(x);
        let s = g.sum(a);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn add_bias_requires_trailing_shape() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert!(g.add_bias(a, b).is_err());
        let b = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.add_bias(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }
}
