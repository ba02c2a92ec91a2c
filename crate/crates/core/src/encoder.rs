//! Image-to-latent inversion encoder.
//!
//! A small strided-convolution pyramid extracts features at three scales.
//! Each latent row gets its own dense head, and the rows are wired so the
//! coarsest features drive the earliest (lowest) rows and the finest
//! features drive the last ones: the lowest half of the rows comes from the
//! coarse level, the next quarter from the mid level, and the rest from the
//! fine level.

use crate::generator::LatentCode;
use crate::nn::{self, ParamSet, TapeParams};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct EncoderConfig {
    /// Input images are (3, resolution, resolution) in [-1, 1].
    pub resolution: usize,
    pub latent_layers: usize,
    pub latent_dim: usize,
    /// Stem width; doubled at each pyramid level.
    pub base_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { resolution: 64, latent_layers: 8, latent_dim: 64, base_channels: 16 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) {
        assert!(self.resolution >= 8 && self.resolution % 8 == 0, "resolution must allow 3 halvings");
        assert!(self.latent_layers >= 3, "need at least one row per pyramid level");
        assert!(self.latent_dim >= 1 && self.base_channels >= 1);
    }

    /// Rows per pyramid level, ordered (coarse, mid, fine): half the rows
    /// from the coarse level, a quarter from the mid level, rest fine.
    pub fn level_split(&self) -> (usize, usize, usize) {
        let l = self.latent_layers;
        let coarse = (l / 2).max(1);
        let mid = (l / 4).max(1);
        (coarse, mid, l - coarse - mid)
    }
}

pub struct Encoder<S> {
    pub cfg: EncoderConfig,
    pub params: ParamSet<S>,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Self {
        cfg.validate();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = cfg.base_channels;
        nn::add_conv(&mut params, &mut rng, "e.stem.c0", 3, c, 3, 3);
        nn::add_conv(&mut params, &mut rng, "e.stem.c1", c, c, 3, 3);
        nn::add_conv(&mut params, &mut rng, "e.down1", c, 2 * c, 3, 3);
        nn::add_conv(&mut params, &mut rng, "e.down2", 2 * c, 4 * c, 3, 3);
        let (n_coarse, n_mid, _) = cfg.level_split();
        for row in 0..cfg.latent_layers {
            let ci = if row < n_coarse {
                4 * c
            } else if row < n_coarse + n_mid {
                2 * c
            } else {
                c
            };
            nn::add_dense(&mut params, &mut rng, &format!("e.head{}", row), ci, cfg.latent_dim);
        }
        Encoder { cfg, params }
    }

    /// Differentiable path: (3, res, res) image variable to an (L, d)
    /// latent variable.
    pub fn encode_var(&self, tape: &mut Tape<S>, tp: &TapeParams, image: Var) -> Var {
        let r = self.cfg.resolution;
        assert_eq!(tape.shape_of(image), &[3, r, r], "encoder input shape");

        let x = nn::conv_layer(tape, tp, "e.stem.c0", image, 3, 3);
        let x = tape.leaky_relu(x, 0.2);
        let x = nn::conv_layer(tape, tp, "e.stem.c1", x, 3, 3);
        let x = tape.leaky_relu(x, 0.2);
        let fine = tape.avg_pool2(x); // (c, r/2, r/2)

        let x = nn::conv_layer(tape, tp, "e.down1", fine, 3, 3);
        let x = tape.leaky_relu(x, 0.2);
        let mid = tape.avg_pool2(x); // (2c, r/4, r/4)

        let x = nn::conv_layer(tape, tp, "e.down2", mid, 3, 3);
        let x = tape.leaky_relu(x, 0.2);
        let coarse = tape.avg_pool2(x); // (4c, r/8, r/8)

        let pooled = [
            global_avg_pool(tape, coarse),
            global_avg_pool(tape, mid),
            global_avg_pool(tape, fine),
        ];
        let (n_coarse, n_mid, _) = self.cfg.level_split();
        let mut rows = Vec::with_capacity(self.cfg.latent_layers);
        for row in 0..self.cfg.latent_layers {
            let level = if row < n_coarse {
                0
            } else if row < n_coarse + n_mid {
                1
            } else {
                2
            };
            rows.push(nn::dense_layer(tape, tp, &format!("e.head{}", row), pooled[level]));
        }
        tape.concat0(&rows)
    }

    /// Value-level encode with input validation.
    pub fn encode(&self, image: &Tensor<S>) -> Result<LatentCode<S>> {
        let r = self.cfg.resolution;
        if image.shape() != [3, r, r] {
            return Err(Error::InvalidArgument(format!(
                "encoder expects a (3, {}, {}) image, got {:?}",
                r,
                r,
                image.shape()
            )));
        }
        let mut tape = Tape::new();
        let tp = self.params.load_const(&mut tape);
        let iv = tape.constant(image.clone());
        let out = self.encode_var(&mut tape, &tp, iv);
        Ok(LatentCode::new((*tape.val_rc(out)).clone()))
    }
}

/// Mean over the spatial dims of a (c, h, w) map, kept as a (1, c) row so it
/// can feed dense layers directly.
fn global_avg_pool<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Var {
    let s = tape.shape_of(x).to_vec();
    assert_eq!(s.len(), 3);
    let (c, h, w) = (s[0], s[1], s[2]);
    let a = tape.sum_last(x); // (c, h)
    let a = tape.sum_last(a); // (c)
    let a = tape.mul_scalar(a, 1.0 / (h * w) as f64);
    tape.reshape(a, &[1, c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check::{grad_check, GradCheckCfg};
    use rand::Rng;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig { resolution: 16, latent_layers: 4, latent_dim: 8, base_channels: 4 }
    }

    fn random_image(rng: &mut ChaCha8Rng, res: usize) -> Tensor<f64> {
        Tensor::from_fn(&[3, res, res], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn level_split_partitions_rows() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.level_split(), (4, 2, 2));
        let (a, b, c) = tiny_cfg().level_split();
        assert_eq!((a, b, c), (2, 1, 1));
        assert_eq!(a + b + c, 4);
    }

    #[test]
    fn encode_has_latent_shape_and_is_deterministic() {
        let enc: Encoder<f64> = Encoder::new(tiny_cfg(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 16);
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img).unwrap();
        assert_eq!(a.data.shape(), &[4, 8]);
        assert!(a.data.bit_eq(&b.data));
    }

    #[test]
    fn encode_rejects_wrong_resolution() {
        let enc: Encoder<f64> = Encoder::new(tiny_cfg(), 7);
        let bad = Tensor::zeros(&[3, 8, 8]);
        assert!(matches!(enc.encode(&bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn encode_stays_finite_on_random_batches(){
        let enc: Encoder<f64> = Encoder::new(tiny_cfg(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..8 {
            let img = random_image(&mut rng, 16);
            let code = enc.encode(&img).unwrap();
            assert!(code.data.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn rows_depend_on_their_own_heads_only() {
        // Perturbing the head of row 1 changes row 1 and nothing else.
        let mut enc: Encoder<f64> = Encoder::new(tiny_cfg(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 16);
        let before = enc.encode(&img).unwrap();
        enc.params.get_mut("e.head1.b").data_mut()[0] += 1.0;
        let after = enc.encode(&img).unwrap();
        for row in 0..4 {
            let d: f64 = (0..8)
                .map(|k| (before.data.at(&[row, k]) - after.data.at(&[row, k])).abs())
                .sum();
            if row == 1 {
                assert!(d > 0.0);
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let enc: Encoder<f64> = Encoder::new(tiny_cfg(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = random_image(&mut rng, 16);
        let cfg = GradCheckCfg { max_coords: 12, ..GradCheckCfg::default() };
        let err = grad_check(
            |tape, vs| {
                let tp = enc.params.load_const(tape);
                let code = enc.encode_var(tape, &tp, vs[0]);
                tape.sum_squares(code)
            },
            &[img],
            &cfg,
        );
        assert!(err < 1e-4, "encoder rel err {}", err);
    }
}
