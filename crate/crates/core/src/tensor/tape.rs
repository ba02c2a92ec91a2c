//! The reverse-mode tape.

use std::rc::Rc;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on the tape. Valid only for the tape that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) u32);

impl Var {
    pub(crate) fn idx(self) -> usize {
        self.0 as usize
    }
}

/// One differentiable operation. `vjp` must append the gradient computation
/// for each input to the tape and return the resulting variables; it may
/// return `None` where `needs[i]` is false or where the gradient is
/// identically zero.
pub trait Op<S: Scalar> {
    fn name(&self) -> &'static str;
    fn vjp(
        &self,
        tape: &mut Tape<S>,
        inputs: &[Var],
        output: Var,
        grad: Var,
        needs: &[bool],
    ) -> Vec<Option<Var>>;
}

struct Node<S: Scalar> {
    value: Rc<Tensor<S>>,
    parents: Vec<Var>,
    op: Option<Rc<dyn Op<S>>>,
    needs_grad: bool,
}

/// Records a forward computation and differentiates it.
///
/// A tape is intended to live for one forward/backward pass (or a few, for
/// higher-order gradients) and then be dropped.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Gradients of one `backward` call, indexed by the variables that existed
/// when it ran. Absent entries mean no gradient path existed; callers treat
/// them as zero.
pub struct Gradients {
    grads: Vec<Option<Var>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Var> {
        self.grads.get(v.idx()).copied().flatten()
    }

    /// Gradient that must exist; panics with the variable index otherwise.
    pub fn expect(&self, v: Var) -> Var {
        self.get(v)
            .unwrap_or_else(|| panic!("no gradient reached variable {}", v.0))
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that participates in differentiation.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push_node(Rc::new(t), Vec::new(), None, true)
    }

    /// Leaf treated as a constant; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push_node(Rc::new(t), Vec::new(), None, false)
    }

    pub fn constant_rc(&mut self, t: Rc<Tensor<S>>) -> Var {
        self.push_node(t, Vec::new(), None, false)
    }

    /// Constant copy of an existing variable's value. Shares storage.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.val_rc(v);
        self.constant_rc(t)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(S::from_float(v)))
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, parents: Vec<Var>, op: Rc<dyn Op<S>>) -> Var {
        let needs = parents.iter().any(|&p| self.nodes[p.idx()].needs_grad);
        self.push_node(Rc::new(value), parents, Some(op), needs)
    }

    fn push_node(
        &mut self,
        value: Rc<Tensor<S>>,
        parents: Vec<Var>,
        op: Option<Rc<dyn Op<S>>>,
        needs_grad: bool,
    ) -> Var {
        assert!(self.nodes.len() < u32::MAX as usize, "tape overflow");
        self.nodes.push(Node { value, parents, op, needs_grad });
        Var(self.nodes.len() as u32 - 1)
    }

    pub fn val(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.idx()].value
    }

    pub fn val_rc(&self, v: Var) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes[v.idx()].value)
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.idx()].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.idx()].needs_grad
    }

    /// Reverse pass from a scalar root. Gradient nodes are appended to the
    /// tape, so the result can be differentiated again.
    pub fn backward(&mut self, root: Var) -> Gradients {
        let seed = self.constant(Tensor::ones(&self.val(root).shape().to_vec()));
        self.backward_seeded(root, seed)
    }

    /// Reverse pass with an explicit output cotangent of the root's shape.
    pub fn backward_seeded(&mut self, root: Var, seed: Var) -> Gradients {
        assert_eq!(
            self.shape_of(root),
            self.shape_of(seed),
            "backward seed shape mismatch"
        );
        let n = root.idx() + 1;
        let mut grads: Vec<Option<Var>> = vec![None; n];
        grads[root.idx()] = Some(seed);

        for id in (0..n).rev() {
            let Some(gv) = grads[id] else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(op) = node.op.clone() else { continue };
            let parents = node.parents.clone();
            let needs: Vec<bool> = parents
                .iter()
                .map(|&p| self.nodes[p.idx()].needs_grad)
                .collect();
            let pgrads = op.vjp(self, &parents, Var(id as u32), gv, &needs);
            assert_eq!(
                pgrads.len(),
                parents.len(),
                "{} returned {} gradients for {} inputs",
                op.name(),
                pgrads.len(),
                parents.len()
            );
            for (&p, pg) in parents.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.idx()].needs_grad {
                    continue;
                }
                debug_assert_eq!(
                    self.shape_of(p),
                    self.shape_of(pg),
                    "gradient shape mismatch from {}",
                    op.name()
                );
                grads[p.idx()] = match grads[p.idx()] {
                    None => Some(pg),
                    Some(acc) => Some(self.add(acc, pg)),
                };
            }
        }
        Gradients { grads }
    }
}
