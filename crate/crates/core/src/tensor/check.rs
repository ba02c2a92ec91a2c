//! Finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

pub struct GradCheckCfg {
    /// Base central-difference step, scaled by max(1, |x|) per coordinate.
    pub h: f64,
    /// Coordinates probed per input tensor; all of them if the tensor is
    /// smaller than this.
    pub max_coords: usize,
    pub seed: u64,
    /// Floor of the relative-error denominator, so near-zero gradient pairs
    /// are compared absolutely at this scale.
    pub floor: f64,
}

impl Default for GradCheckCfg {
    fn default() -> Self {
        GradCheckCfg { h: 1e-5, max_coords: 20, seed: 0x51ab1e, floor: 1e-6 }
    }
}

fn eval_scalar<S: Scalar>(
    build: &impl Fn(&mut Tape<S>, &[Var]) -> Var,
    inputs: &[Tensor<S>],
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let y = build(&mut tape, &vars);
    tape.val(y).item().as_f64()
}

/// Compare reverse-mode gradients of a scalar-valued function against
/// central finite differences. Returns the worst relative error over the
/// probed coordinates.
pub fn grad_check<S: Scalar>(
    build: impl Fn(&mut Tape<S>, &[Var]) -> Var,
    inputs: &[Tensor<S>],
    cfg: &GradCheckCfg,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let y = build(&mut tape, &vars);
    assert_eq!(tape.val(y).len(), 1, "grad_check needs a scalar output");
    let grads = tape.backward(y);
    let ad_grads: Vec<Tensor<S>> = vars
        .iter()
        .map(|&v| match grads.get(v) {
            Some(g) => (*tape.val_rc(g)).clone(),
            None => Tensor::zeros(&tape.shape_of(v).to_vec()),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0f64;
    for (i, base) in inputs.iter().enumerate() {
        let len = base.len();
        let coords: Vec<usize> = if len <= cfg.max_coords {
            (0..len).collect()
        } else {
            (0..cfg.max_coords).map(|_| rng.gen_range(0..len)).collect()
        };
        for c in coords {
            let x = base.data()[c].as_f64();
            let h = cfg.h * x.abs().max(1.0);
            let mut probe: Vec<Tensor<S>> = inputs.to_vec();
            probe[i].data_mut()[c] = S::from_float(x + h);
            let fp = eval_scalar(&build, &probe);
            probe[i].data_mut()[c] = S::from_float(x - h);
            let fm = eval_scalar(&build, &probe);
            let fd = (fp - fm) / (2.0 * h);
            let ad = ad_grads[i].data()[c].as_f64();
            let denom = ad.abs().max(fd.abs()).max(cfg.floor);
            let rel = (ad - fd).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradients() {
        // y = 2x claimed via forward, but gradient path says 3x. Build a
        // deliberately inconsistent function using a detached term.
        let err = grad_check(
            |tp, vs| {
                let a = tp.mul_scalar(vs[0], 3.0);
                let d = tp.detach(vs[0]);
                let drop = tp.mul_scalar(d, -1.0);
                let y = tp.add(a, drop);
                tp.sum_all(y)
            },
            &[Tensor::new(vec![2], vec![0.3, -0.9])],
            &GradCheckCfg::default(),
        );
        // True derivative is 2, autodiff reports 3.
        assert!(err > 0.1, "checker missed a broken gradient, err {}", err);
    }

    #[test]
    fn accepts_correct_gradients() {
        let err = grad_check(
            |tp, vs| {
                let e = tp.exp(vs[0]);
                tp.sum_all(e)
            },
            &[Tensor::new(vec![3], vec![0.1, -0.4, 0.9])],
            &GradCheckCfg::default(),
        );
        assert!(err < 1e-7, "rel err {}", err);
    }
}
