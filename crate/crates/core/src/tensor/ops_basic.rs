//! Elementwise ops, reductions, and shape ops.

use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

struct AddOp;
impl<S: Scalar> Op<S> for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn vjp(&self, _t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(g), Some(g)]
    }
}

struct SubOp;
impl<S: Scalar> Op<S> for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, n: &[bool]) -> Vec<Option<Var>> {
        let gb = if n[1] { Some(t.neg(g)) } else { None };
        vec![Some(g), gb]
    }
}

struct MulOp;
impl<S: Scalar> Op<S> for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, n: &[bool]) -> Vec<Option<Var>> {
        let ga = if n[0] { Some(t.mul(g, i[1])) } else { None };
        let gb = if n[1] { Some(t.mul(g, i[0])) } else { None };
        vec![ga, gb]
    }
}

struct DivOp;
impl<S: Scalar> Op<S> for DivOp {
    fn name(&self) -> &'static str {
        "div"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], o: Var, g: Var, n: &[bool]) -> Vec<Option<Var>> {
        let ga = if n[0] { Some(t.div(g, i[1])) } else { None };
        let gb = if n[1] {
            // d(a/b)/db = -y/b with y the output.
            let gy = t.mul(g, o);
            let q = t.div(gy, i[1]);
            Some(t.neg(q))
        } else {
            None
        };
        vec![ga, gb]
    }
}

struct NegOp;
impl<S: Scalar> Op<S> for NegOp {
    fn name(&self) -> &'static str {
        "neg"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.neg(g))]
    }
}

struct ExpOp;
impl<S: Scalar> Op<S> for ExpOp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.mul(g, o))]
    }
}

struct LnOp;
impl<S: Scalar> Op<S> for LnOp {
    fn name(&self) -> &'static str {
        "ln"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.div(g, i[0]))]
    }
}

struct SqrtOp;
impl<S: Scalar> Op<S> for SqrtOp {
    fn name(&self) -> &'static str {
        "sqrt"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let two_y = t.mul_scalar(o, 2.0);
        vec![Some(t.div(g, two_y))]
    }
}

struct AbsOp;
impl<S: Scalar> Op<S> for AbsOp {
    fn name(&self) -> &'static str {
        "abs"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        // Piecewise-constant slope captured from the forward value; the
        // subgradient at 0 is taken as 0.
        let sign = t.val(i[0]).map(|v| {
            if v > S::zero() {
                S::one()
            } else if v < S::zero() {
                -S::one()
            } else {
                S::zero()
            }
        });
        let sv = t.constant(sign);
        vec![Some(t.mul(g, sv))]
    }
}

struct SigmoidOp;
impl<S: Scalar> Op<S> for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let ones = t.ones_like(o);
        let one_minus = t.sub(ones, o);
        let gy = t.mul(g, o);
        vec![Some(t.mul(gy, one_minus))]
    }
}

struct TanhOp;
impl<S: Scalar> Op<S> for TanhOp {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let y2 = t.mul(o, o);
        let ones = t.ones_like(o);
        let d = t.sub(ones, y2);
        vec![Some(t.mul(g, d))]
    }
}

struct SoftplusOp;
impl<S: Scalar> Op<S> for SoftplusOp {
    fn name(&self) -> &'static str {
        "softplus"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let s = t.sigmoid(i[0]);
        vec![Some(t.mul(g, s))]
    }
}

struct LeakyReluOp {
    alpha: f64,
}
impl<S: Scalar> Op<S> for LeakyReluOp {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let a = S::from_float(self.alpha);
        let mask = t.val(i[0]).map(|v| if v >= S::zero() { S::one() } else { a });
        let mv = t.constant(mask);
        vec![Some(t.mul(g, mv))]
    }
}

struct MulScalarOp {
    c: f64,
}
impl<S: Scalar> Op<S> for MulScalarOp {
    fn name(&self) -> &'static str {
        "mul_scalar"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.mul_scalar(g, self.c))]
    }
}

struct AddScalarOp;
impl<S: Scalar> Op<S> for AddScalarOp {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn vjp(&self, _t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(g)]
    }
}

struct SumLastOp {
    k: usize,
}
impl<S: Scalar> Op<S> for SumLastOp {
    fn name(&self) -> &'static str {
        "sum_last"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.broadcast_last(g, self.k))]
    }
}

struct BroadcastLastOp;
impl<S: Scalar> Op<S> for BroadcastLastOp {
    fn name(&self) -> &'static str {
        "broadcast_last"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.sum_last(g))]
    }
}

struct SumAllOp;
impl<S: Scalar> Op<S> for SumAllOp {
    fn name(&self) -> &'static str {
        "sum_all"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let shape = t.shape_of(i[0]).to_vec();
        vec![Some(t.fill(g, &shape))]
    }
}

struct FillOp;
impl<S: Scalar> Op<S> for FillOp {
    fn name(&self) -> &'static str {
        "fill"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.sum_all(g))]
    }
}

struct ReshapeOp {
    in_shape: Vec<usize>,
}
impl<S: Scalar> Op<S> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.reshape(g, &self.in_shape.clone()))]
    }
}

struct Concat0Op {
    lens: Vec<usize>,
}
impl<S: Scalar> Op<S> for Concat0Op {
    fn name(&self) -> &'static str {
        "concat0"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, n: &[bool]) -> Vec<Option<Var>> {
        let mut out = Vec::with_capacity(i.len());
        let mut start = 0;
        for (idx, &len) in self.lens.iter().enumerate() {
            out.push(if n[idx] { Some(t.slice0(g, start, len)) } else { None });
            start += len;
        }
        out
    }
}

struct Slice0Op {
    start: usize,
    parent_d0: usize,
}
impl<S: Scalar> Op<S> for Slice0Op {
    fn name(&self) -> &'static str {
        "slice0"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.embed0(g, self.start, self.parent_d0))]
    }
}

struct Embed0Op {
    start: usize,
    child_d0: usize,
}
impl<S: Scalar> Op<S> for Embed0Op {
    fn name(&self) -> &'static str {
        "embed0"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let _ = self.child_d0;
        vec![Some(t.slice0(g, self.start, self.child_d0))]
    }
}

struct MirrorWOp;
impl<S: Scalar> Op<S> for MirrorWOp {
    fn name(&self) -> &'static str {
        "mirror_w"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.mirror_w(g))]
    }
}

impl<S: Scalar> Tape<S> {
    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        op: Rc<dyn Op<S>>,
        f: impl Fn(S, S) -> S,
    ) -> Var {
        let (ta, tb) = (self.val_rc(a), self.val_rc(b));
        assert_eq!(ta.shape(), tb.shape(), "shape mismatch in {}", op.name());
        let out = ta.zip_map(&tb, f);
        self.push(out, vec![a, b], op)
    }

    fn unary_elementwise(&mut self, a: Var, op: Rc<dyn Op<S>>, f: impl Fn(S) -> S) -> Var {
        let ta = self.val_rc(a);
        let out = ta.map(f);
        self.push(out, vec![a], op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, Rc::new(AddOp), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, Rc::new(SubOp), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, Rc::new(MulOp), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, Rc::new(DivOp), |x, y| x / y)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary_elementwise(a, Rc::new(NegOp), |x| -x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary_elementwise(a, Rc::new(ExpOp), |x| x.exp())
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary_elementwise(a, Rc::new(LnOp), |x| x.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary_elementwise(a, Rc::new(SqrtOp), |x| x.sqrt())
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary_elementwise(a, Rc::new(AbsOp), |x| x.abs())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary_elementwise(a, Rc::new(SigmoidOp), |x| {
            // Branch on sign for numerical stability at large |x|.
            if x >= S::zero() {
                S::one() / (S::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (S::one() + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary_elementwise(a, Rc::new(TanhOp), |x| x.tanh())
    }

    /// softplus(x) = ln(1 + e^x), evaluated as max(x, 0) + ln_1p(e^-|x|).
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary_elementwise(a, Rc::new(SoftplusOp), |x| {
            x.max(S::zero()) + (-x.abs()).exp().ln_1p()
        })
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        let al = S::from_float(alpha);
        self.unary_elementwise(a, Rc::new(LeakyReluOp { alpha }), |x| {
            if x >= S::zero() {
                x
            } else {
                al * x
            }
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_float(c);
        self.unary_elementwise(a, Rc::new(MulScalarOp { c }), |x| x * cs)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_float(c);
        self.unary_elementwise(a, Rc::new(AddScalarOp), |x| x + cs)
    }

    /// Sum over the last axis: (.., k) -> (..).
    pub fn sum_last(&mut self, a: Var) -> Var {
        let ta = self.val_rc(a);
        assert!(ta.rank() >= 1, "sum_last needs rank >= 1");
        let k = *ta.shape().last().unwrap();
        let out_shape: Vec<usize> = ta.shape()[..ta.rank() - 1].to_vec();
        let rows: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &ta.data()[r * k..(r + 1) * k];
            data.push(row.iter().copied().sum());
        }
        self.push(Tensor::new(out_shape, data), vec![a], Rc::new(SumLastOp { k }))
    }

    /// Repeat along a new trailing axis: (..) -> (.., k).
    pub fn broadcast_last(&mut self, a: Var, k: usize) -> Var {
        let ta = self.val_rc(a);
        let mut out_shape = ta.shape().to_vec();
        out_shape.push(k);
        let mut data = Vec::with_capacity(ta.len() * k);
        for &v in ta.data() {
            data.extend(std::iter::repeat(v).take(k));
        }
        self.push(Tensor::new(out_shape, data), vec![a], Rc::new(BroadcastLastOp))
    }

    /// Sum of all elements, producing a rank-0 scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let ta = self.val_rc(a);
        let s: S = ta.data().iter().copied().sum();
        self.push(Tensor::scalar(s), vec![a], Rc::new(SumAllOp))
    }

    /// Broadcast a rank-0 scalar to an arbitrary shape.
    pub fn fill(&mut self, a: Var, shape: &[usize]) -> Var {
        let ta = self.val_rc(a);
        assert_eq!(ta.rank(), 0, "fill takes a rank-0 scalar");
        let out = Tensor::full(shape, ta.item());
        self.push(out, vec![a], Rc::new(FillOp))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let ta = self.val_rc(a);
        let in_shape = ta.shape().to_vec();
        let out = (*ta).clone().reshaped(shape);
        self.push(out, vec![a], Rc::new(ReshapeOp { in_shape }))
    }

    /// Concatenate along axis 0. All inputs must agree on trailing axes.
    pub fn concat0(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat0 of nothing");
        let tensors: Vec<_> = parts.iter().map(|&v| self.val_rc(v)).collect();
        let tail = &tensors[0].shape()[1..];
        let mut d0 = 0;
        for t in &tensors {
            assert!(t.rank() >= 1, "concat0 needs rank >= 1");
            assert_eq!(&t.shape()[1..], tail, "concat0 trailing shape mismatch");
            d0 += t.shape()[0];
        }
        let mut shape = vec![d0];
        shape.extend_from_slice(tail);
        let mut data = Vec::with_capacity(shape.iter().product());
        for t in &tensors {
            data.extend_from_slice(t.data());
        }
        let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[0]).collect();
        self.push(Tensor::new(shape, data), parts.to_vec(), Rc::new(Concat0Op { lens }))
    }

    /// Contiguous slice along axis 0.
    pub fn slice0(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.val_rc(a);
        assert!(ta.rank() >= 1, "slice0 needs rank >= 1");
        let d0 = ta.shape()[0];
        assert!(start + len <= d0, "slice0 {}..{} out of {}", start, start + len, d0);
        let stride: usize = ta.shape()[1..].iter().product();
        let mut shape = ta.shape().to_vec();
        shape[0] = len;
        let data = ta.data()[start * stride..(start + len) * stride].to_vec();
        self.push(
            Tensor::new(shape, data),
            vec![a],
            Rc::new(Slice0Op { start, parent_d0: d0 }),
        )
    }

    /// Place a tensor into a zero tensor with a larger axis 0. Adjoint of
    /// `slice0`; used internally by its gradient.
    pub fn embed0(&mut self, a: Var, start: usize, d0: usize) -> Var {
        let ta = self.val_rc(a);
        assert!(ta.rank() >= 1, "embed0 needs rank >= 1");
        let child_d0 = ta.shape()[0];
        assert!(start + child_d0 <= d0);
        let stride: usize = ta.shape()[1..].iter().product();
        let mut shape = ta.shape().to_vec();
        shape[0] = d0;
        let mut data = vec![S::zero(); d0 * stride];
        data[start * stride..(start + child_d0) * stride].copy_from_slice(ta.data());
        self.push(Tensor::new(shape, data), vec![a], Rc::new(Embed0Op { start, child_d0 }))
    }

    /// Flip the last axis. For images in (C, H, W) layout this is the
    /// horizontal mirror.
    pub fn mirror_w(&mut self, a: Var) -> Var {
        let ta = self.val_rc(a);
        assert!(ta.rank() >= 1, "mirror_w needs rank >= 1");
        let w = *ta.shape().last().unwrap();
        let rows = ta.len() / w.max(1);
        let mut data = Vec::with_capacity(ta.len());
        for r in 0..rows {
            let row = &ta.data()[r * w..(r + 1) * w];
            data.extend(row.iter().rev().copied());
        }
        self.push(Tensor::new(ta.shape().to_vec(), data), vec![a], Rc::new(MirrorWOp))
    }

    pub fn ones_like(&mut self, a: Var) -> Var {
        let shape = self.shape_of(a).to_vec();
        self.constant(Tensor::ones(&shape))
    }

    pub fn zeros_like(&mut self, a: Var) -> Var {
        let shape = self.shape_of(a).to_vec();
        self.constant(Tensor::zeros(&shape))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.val(a).len();
        assert!(n > 0, "mean of empty tensor");
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    /// Mean squared error between same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d2 = self.mul(d, d);
        self.mean_all(d2)
    }

    /// Mean absolute error between same-shape tensors.
    pub fn mae(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean_all(ad)
    }

    pub fn dot_all(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum_all(p)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        self.dot_all(a, a)
    }

    /// L2 norm with an epsilon inside the root so the gradient stays finite
    /// at zero.
    pub fn norm_l2(&mut self, a: Var, eps: f64) -> Var {
        let s = self.sum_squares(a);
        let se = self.add_scalar(s, eps);
        self.sqrt(se)
    }
}
