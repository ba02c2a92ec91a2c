//! Matrix ops: 2-D matmul, transpose, and per-channel bilinear maps.

use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn matmul_kernel<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.rank(), 2);
    assert_eq!(b.rank(), 2);
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul inner dims {} vs {}", k, k2);
    let mut out = vec![S::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let orow = i * n;
        for kk in 0..k {
            let av = ad[i * k + kk];
            if av == S::zero() {
                continue;
            }
            let brow = kk * n;
            for j in 0..n {
                out[orow + j] += av * bd[brow + j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose_kernel<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.rank(), 2);
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// y[c] = A x[c] B^T for every channel c of a (C, H, W) tensor.
pub(crate) fn lin2d_kernel<S: Scalar>(x: &Tensor<S>, a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(x.rank(), 3);
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (h2, ha) = (a.shape()[0], a.shape()[1]);
    let (w2, wb) = (b.shape()[0], b.shape()[1]);
    assert_eq!(ha, h, "lin2d row map {}x{} against height {}", h2, ha, h);
    assert_eq!(wb, w, "lin2d col map {}x{} against width {}", w2, wb, w);
    let ad = a.data();
    let bd = b.data();
    let xd = x.data();
    let mut out = vec![S::zero(); c * h2 * w2];
    let mut tmp = vec![S::zero(); h2 * w];
    for ch in 0..c {
        let xbase = ch * h * w;
        tmp.iter_mut().for_each(|v| *v = S::zero());
        for i in 0..h2 {
            let trow = i * w;
            for k in 0..h {
                let av = ad[i * h + k];
                if av == S::zero() {
                    continue;
                }
                let xrow = xbase + k * w;
                for j in 0..w {
                    tmp[trow + j] += av * xd[xrow + j];
                }
            }
        }
        let obase = ch * h2 * w2;
        for i in 0..h2 {
            let trow = i * w;
            for j in 0..w2 {
                let brow = j * w;
                let mut acc = S::zero();
                for k in 0..w {
                    acc += tmp[trow + k] * bd[brow + k];
                }
                out[obase + i * w2 + j] = acc;
            }
        }
    }
    Tensor::new(vec![c, h2, w2], out)
}

struct MatmulOp;
impl<S: Scalar> Op<S> for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn vjp(&self, t: &mut Tape<S>, i: &[Var], _o: Var, g: Var, n: &[bool]) -> Vec<Option<Var>> {
        let ga = if n[0] {
            let bt = t.transpose(i[1]);
            Some(t.matmul(g, bt))
        } else {
            None
        };
        let gb = if n[1] {
            let at = t.transpose(i[0]);
            Some(t.matmul(at, g))
        } else {
            None
        };
        vec![ga, gb]
    }
}

struct TransposeOp;
impl<S: Scalar> Op<S> for TransposeOp {
    fn name(&self) -> &'static str {
        "transpose"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        vec![Some(t.transpose(g))]
    }
}

struct Lin2dOp<S: Scalar> {
    a: Rc<Tensor<S>>,
    b: Rc<Tensor<S>>,
}
impl<S: Scalar> Op<S> for Lin2dOp<S> {
    fn name(&self) -> &'static str {
        "lin2d"
    }
    fn vjp(&self, t: &mut Tape<S>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Vec<Option<Var>> {
        let at = Rc::new(transpose_kernel(&self.a));
        let bt = Rc::new(transpose_kernel(&self.b));
        vec![Some(t.lin2d(g, at, bt))]
    }
}

impl<S: Scalar> Tape<S> {
    /// (m, k) x (k, n) -> (m, n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul_kernel(self.val(a), self.val(b));
        self.push(out, vec![a, b], Rc::new(MatmulOp))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = transpose_kernel(self.val(a));
        self.push(out, vec![a], Rc::new(TransposeOp))
    }

    /// Per-channel bilinear map with constant matrices: y[c] = A x[c] B^T.
    /// Gradients flow only into x; A and B are fixed coefficient tables
    /// (discrete Fourier bases, fixed resamplers, and the like).
    pub fn lin2d(&mut self, x: Var, a: Rc<Tensor<S>>, b: Rc<Tensor<S>>) -> Var {
        let out = lin2d_kernel(self.val(x), &a, &b);
        self.push(out, vec![x], Rc::new(Lin2dOp { a, b }))
    }
}
