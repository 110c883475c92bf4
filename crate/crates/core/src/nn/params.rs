//! Model parameters for the fixed architecture, addressed by name.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// Checkpoint names of the 14 parameter tensors, in canonical order.
pub const PARAM_NAMES: [&str; 14] = [
    "emb", "gru.Wz", "gru.Uz", "gru.bz", "gru.Wr", "gru.Ur", "gru.br", "gru.Wh", "gru.Uh",
    "gru.bh", "fc.W", "fc.b", "Wv", "Wt",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub word_dim: usize,
    /// Sentence feature size `T` (GRU hidden size).
    pub text_dim: usize,
    /// Raw per-unit video feature size `V`.
    pub feature_dim: usize,
    /// Joint embedding size `D`.
    pub joint_dim: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.vocab_size,
            self.word_dim,
            self.text_dim,
            self.feature_dim,
            self.joint_dim,
        ];
        if all.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Expected shape for each entry of [`PARAM_NAMES`].
    pub fn shapes(&self) -> [Vec<usize>; 14] {
        let (e, t, v, d) = (self.word_dim, self.text_dim, self.feature_dim, self.joint_dim);
        [
            vec![self.vocab_size, e],
            vec![t, e],
            vec![t, t],
            vec![t],
            vec![t, e],
            vec![t, t],
            vec![t],
            vec![t, e],
            vec![t, t],
            vec![t],
            vec![t, v],
            vec![t],
            vec![d, v],
            vec![d, t],
        ]
    }
}

/// GRU weights. `W*` act on the word embedding, `U*` on the hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<F> {
    pub wz: Tensor<F>,
    pub uz: Tensor<F>,
    pub bz: Tensor<F>,
    pub wr: Tensor<F>,
    pub ur: Tensor<F>,
    pub br: Tensor<F>,
    pub wh: Tensor<F>,
    pub uh: Tensor<F>,
    pub bh: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    /// `vocab_size × word_dim`
    pub emb: Tensor<F>,
    pub gru: GruParams<F>,
    /// `T × V`
    pub fc_w: Tensor<F>,
    pub fc_b: Tensor<F>,
    /// Video projection into the joint space, `D × V`.
    pub wv: Tensor<F>,
    /// Text projection into the joint space, `D × T`.
    pub wt: Tensor<F>,
}

/// Anything exposing an ordered list of named tensors (parameters or their
/// gradients).
pub trait NamedTensors<F> {
    fn tensors(&self) -> Vec<(&'static str, &Tensor<F>)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<F>)>;
}

impl<F: Real> NamedTensors<F> for ModelParams<F> {
    fn tensors(&self) -> Vec<(&'static str, &Tensor<F>)> {
        let g = &self.gru;
        let refs = [
            &self.emb, &g.wz, &g.uz, &g.bz, &g.wr, &g.ur, &g.br, &g.wh, &g.uh, &g.bh, &self.fc_w,
            &self.fc_b, &self.wv, &self.wt,
        ];
        PARAM_NAMES.iter().copied().zip(refs).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<F>)> {
        let g = &mut self.gru;
        let refs = [
            &mut self.emb,
            &mut g.wz,
            &mut g.uz,
            &mut g.bz,
            &mut g.wr,
            &mut g.ur,
            &mut g.br,
            &mut g.wh,
            &mut g.uh,
            &mut g.bh,
            &mut self.fc_w,
            &mut self.fc_b,
            &mut self.wv,
            &mut self.wt,
        ];
        PARAM_NAMES.iter().copied().zip(refs).collect()
    }
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(dims: &ModelDims) -> Self {
        let mut it = dims.shapes().into_iter().map(|s| Tensor::zeros(&s));
        let mut next = || it.next().expect("14 shapes");
        ModelParams {
            emb: next(),
            gru: GruParams {
                wz: next(),
                uz: next(),
                bz: next(),
                wr: next(),
                ur: next(),
                br: next(),
                wh: next(),
                uh: next(),
                bh: next(),
            },
            fc_w: next(),
            fc_b: next(),
            wv: next(),
            wt: next(),
        }
    }

    /// Random initialization: weight matrices uniform in `±1/√fan_in`,
    /// biases zero, word embeddings `N(0, 0.01²)`.
    ///
    /// Values are drawn in 64-bit and rounded, so the 32-bit and 64-bit
    /// models built from the same stream agree up to rounding.
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut params = Self::zeros(dims);
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        for x in params.emb.data_mut() {
            *x = F::of(normal.sample(rng));
        }
        for (name, t) in params.tensors_mut() {
            if name == "emb" || t.dims().len() < 2 {
                continue;
            }
            let bound = 1.0 / (t.cols() as f64).sqrt();
            let uniform = Uniform::new_inclusive(-bound, bound).expect("valid range");
            for x in t.data_mut() {
                *x = F::of(uniform.sample(rng));
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.emb.rows(),
            word_dim: self.emb.cols(),
            text_dim: self.fc_w.rows(),
            feature_dim: self.fc_w.cols(),
            joint_dim: self.wv.rows(),
        }
    }

    /// Checks that all 14 shapes are mutually consistent and finite.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        dims.validate()?;
        for ((name, t), shape) in self.tensors().into_iter().zip(dims.shapes()) {
            if t.dims() != shape.as_slice() {
                return Err(Error::InvalidInput(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.dims()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    /// Assembles parameters from named tensors in any order.
    pub fn from_named(mut named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        let mut take = |name: &str| -> Result<Tensor<F>> {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::InvalidInput(format!("missing tensor {name}")))?;
            Ok(named.swap_remove(pos).1)
        };
        let params = ModelParams {
            emb: take("emb")?,
            gru: GruParams {
                wz: take("gru.Wz")?,
                uz: take("gru.Uz")?,
                bz: take("gru.bz")?,
                wr: take("gru.Wr")?,
                ur: take("gru.Ur")?,
                br: take("gru.br")?,
                wh: take("gru.Wh")?,
                uh: take("gru.Uh")?,
                bh: take("gru.bh")?,
            },
            fc_w: take("fc.W")?,
            fc_b: take("fc.b")?,
            wv: take("Wv")?,
            wt: take("Wt")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let named = self
            .tensors()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.cast::<G>()))
            .collect();
        ModelParams::from_named(named).expect("cast preserves shapes")
    }

    pub fn add_assign(&mut self, other: &ModelParams<F>) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|x| *x == F::zero()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            vocab_size: 7,
            word_dim: 5,
            text_dim: 4,
            feature_dim: 6,
            joint_dim: 3,
        }
    }

    #[test]
    fn init_shapes_and_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::<f64>::init(&dims(), &mut rng).unwrap();
        p.validate().unwrap();
        assert_eq!(p.dims(), dims());
        assert!(p.gru.bz.data().iter().all(|&x| x == 0.0));
        let bound = 1.0 / 6f64.sqrt();
        assert!(p.fc_w.data().iter().all(|x| x.abs() <= bound));
        assert_eq!(p.tensors().len(), 14);
    }

    #[test]
    fn named_round_trip_in_any_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::<f32>::init(&dims(), &mut rng).unwrap();
        let mut named: Vec<_> = p
            .tensors()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        named.reverse();
        assert_eq!(ModelParams::from_named(named).unwrap(), p);
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let mut p = ModelParams::<f64>::zeros(&dims());
        p.wt = Tensor::zeros(&[3, 5]);
        assert!(p.validate().is_err());
    }
}
