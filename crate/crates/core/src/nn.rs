//! Parameter storage, initialization, and shared layer helpers.
//!
//! Networks keep their weights in a flat name -> tensor map. For a forward
//! pass the map is loaded onto a tape, either as differentiable inputs or
//! as constants when the network is frozen; layer helpers then look up
//! variables by name. BTreeMap keeps every iteration order sorted, which
//! makes training and serialization deterministic.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct ParamSet<S> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<S>) {
        let prev = self.map.insert(name.to_string(), t);
        assert!(prev.is_none(), "duplicate parameter {}", name);
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {}", name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Load every parameter onto a tape as a differentiable input.
    pub fn load(&self, tape: &mut Tape<S>) -> TapeParams {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), tape.input(v.clone())))
            .collect();
        TapeParams { vars }
    }

    /// Load every parameter as a constant; the network is frozen.
    pub fn load_const(&self, tape: &mut Tape<S>) -> TapeParams {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
            .collect();
        TapeParams { vars }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.map.len() == other.map.len()
            && self
                .map
                .iter()
                .zip(other.map.iter())
                .all(|((ka, va), (kb, vb))| ka == kb && va.bit_eq(vb))
    }
}

/// Parameters materialized on one tape.
pub struct TapeParams {
    vars: BTreeMap<String, Var>,
}

impl TapeParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {} not loaded", name))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Pull this pass's gradients out as plain tensors, keyed like the
    /// parameter set. Parameters the loss never touched are absent.
    pub fn grad_tensors<S: Scalar>(
        &self,
        tape: &Tape<S>,
        grads: &Gradients,
    ) -> BTreeMap<String, Tensor<S>> {
        let mut out = BTreeMap::new();
        for (name, &v) in &self.vars {
            if let Some(g) = grads.get(v) {
                out.insert(name.clone(), (*tape.val_rc(g)).clone());
            }
        }
        out
    }
}

fn normal<S: Scalar>(rng: &mut ChaCha8Rng, std: f64) -> S {
    let v: f64 = StandardNormal.sample(rng);
    S::from_float(v * std)
}

/// He-style normal init for a tensor with the given fan-in.
pub fn init_normal<S: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<S> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| normal(rng, std))
}

pub fn init_uniform<S: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lim: f64) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::from_float(rng.gen_range(-lim..lim)))
}

/// Register a same-padded conv layer: weights "(name).w" of shape
/// (co, ci*kh*kw) and bias "(name).b" of shape (co).
pub fn add_conv<S: Scalar>(
    params: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    ci: usize,
    co: usize,
    kh: usize,
    kw: usize,
) {
    let fan_in = ci * kh * kw;
    params.insert(&format!("{}.w", name), init_normal(rng, &[co, fan_in], fan_in));
    params.insert(&format!("{}.b", name), Tensor::zeros(&[co]));
}

/// Register a dense layer: weights "(name).w" of shape (co, ci) and bias
/// "(name).b" of shape (co).
pub fn add_dense<S: Scalar>(
    params: &mut ParamSet<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    ci: usize,
    co: usize,
) {
    params.insert(&format!("{}.w", name), init_normal(rng, &[co, ci], ci));
    params.insert(&format!("{}.b", name), Tensor::zeros(&[co]));
}

/// Broadcast a (c) vector over the spatial dims of a (c, h, w) feature map.
pub fn broadcast_chw<S: Scalar>(tape: &mut Tape<S>, v: Var, h: usize, w: usize) -> Var {
    let a = tape.broadcast_last(v, h);
    tape.broadcast_last(a, w)
}

/// Conv layer forward: conv2d(x, w) + b.
pub fn conv_layer<S: Scalar>(
    tape: &mut Tape<S>,
    tp: &TapeParams,
    name: &str,
    x: Var,
    kh: usize,
    kw: usize,
) -> Var {
    let w = tp.var(&format!("{}.w", name));
    let b = tp.var(&format!("{}.b", name));
    let y = tape.conv2d(x, w, kh, kw);
    let (h, wd) = (tape.shape_of(y)[1], tape.shape_of(y)[2]);
    let bb = broadcast_chw(tape, b, h, wd);
    tape.add(y, bb)
}

/// Scale conv weights (co, ci*kh*kw) per input channel by a style vector
/// (ci), then rescale every output filter to unit L2 norm:
///
///   w1[o, i, k] = s[i] * w[o, i, k]
///   w2[o, i, k] = w1[o, i, k] / sqrt(sum_{i,k} w1[o, i, k]^2 + eps)
///
/// The epsilon sits inside the square root.
pub fn modulate_weights<S: Scalar>(tape: &mut Tape<S>, w: Var, style: Var, eps: f64) -> Var {
    let (co, cols) = {
        let s = tape.shape_of(w);
        (s[0], s[1])
    };
    let ci = tape.shape_of(style)[0];
    assert!(cols % ci == 0, "weight columns {} not divisible by styles {}", cols, ci);
    let kk = cols / ci;
    let s_cols = tape.broadcast_last(style, kk); // (ci, kk)
    let s_flat = tape.reshape(s_cols, &[cols]);
    let s_rows = tape.broadcast_last(s_flat, co); // (cols, co)
    let s_mat = tape.transpose(s_rows); // (co, cols)
    let w1 = tape.mul(w, s_mat);
    let w1sq = tape.mul(w1, w1);
    let norms = tape.sum_last(w1sq); // (co)
    let norms_e = tape.add_scalar(norms, eps);
    let denom = tape.sqrt(norms_e);
    let denom_rows = tape.broadcast_last(denom, cols); // (co, cols)
    tape.div(w1, denom_rows)
}

/// Conv layer whose weights are style-modulated before the convolution.
/// With `modulate` false this is a plain conv layer and the style is unused.
pub fn mod_conv_layer<S: Scalar>(
    tape: &mut Tape<S>,
    tp: &TapeParams,
    name: &str,
    x: Var,
    style: Var,
    kh: usize,
    kw: usize,
    modulate: bool,
) -> Var {
    let w = tp.var(&format!("{}.w", name));
    let b = tp.var(&format!("{}.b", name));
    let weff = if modulate {
        modulate_weights(tape, w, style, 1e-8)
    } else {
        w
    };
    let y = tape.conv2d(x, weff, kh, kw);
    let (h, wd) = (tape.shape_of(y)[1], tape.shape_of(y)[2]);
    let bb = broadcast_chw(tape, b, h, wd);
    tape.add(y, bb)
}

/// Dense layer forward for a (batch, ci) input: x w^T + b.
pub fn dense_layer<S: Scalar>(tape: &mut Tape<S>, tp: &TapeParams, name: &str, x: Var) -> Var {
    let w = tp.var(&format!("{}.w", name));
    let b = tp.var(&format!("{}.b", name));
    let wt = tape.transpose(w);
    let y = tape.matmul(x, wt);
    let batch = tape.shape_of(y)[0];
    let bb = tape.broadcast_last(b, batch);
    let bt = tape.transpose(bb);
    tape.add(y, bt)
}
