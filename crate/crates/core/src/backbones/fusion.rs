use ndarray::{concatenate, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureGrid, Linear};
use crate::error::{Error, Result};

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub enum ForwardMode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Cell-wise residual MLP: `local + fc2(drop(gelu(fc1([fragment, local]))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FusionTape {
    input: Array2<f64>,
    pre_activation: Array2<f64>,
    /// Dropout keep mask already scaled by `1 / (1 - p)`; `None` in eval mode.
    mask: Option<Array2<f64>>,
    hidden: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub fc1_weight: Array2<f64>,
    pub fc1_bias: Array1<f64>,
    pub fc2_weight: Array2<f64>,
    pub fc2_bias: Array1<f64>,
}

impl FusionGrads {
    pub fn zeros_like(mlp: &FusionMlp) -> Self {
        Self {
            fc1_weight: Array2::zeros(mlp.fc1.weight.raw_dim()),
            fc1_bias: Array1::zeros(mlp.fc1.bias.raw_dim()),
            fc2_weight: Array2::zeros(mlp.fc2.weight.raw_dim()),
            fc2_bias: Array1::zeros(mlp.fc2.bias.raw_dim()),
        }
    }

    pub fn accumulate(&mut self, other: &FusionGrads) {
        self.fc1_weight += &other.fc1_weight;
        self.fc1_bias += &other.fc1_bias;
        self.fc2_weight += &other.fc2_weight;
        self.fc2_bias += &other.fc2_bias;
    }
}

impl FusionMlp {
    /// `fc1` drawn uniformly, `fc2` zero so the initial output equals the local features.
    pub fn new(local_dim: usize, fragment_dim: usize, hidden: usize, dropout: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} not in [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            fc1: Linear::uniform(fragment_dim + local_dim, hidden, &mut rng),
            fc2: Linear::zeros(hidden, local_dim),
            dropout,
        })
    }

    pub fn local_dim(&self) -> usize {
        self.fc2.output_dim()
    }

    pub fn fragment_dim(&self) -> usize {
        self.fc1.input_dim() - self.local_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1.output_dim()
    }

    fn check(&self, local: &FeatureGrid, fragment: &FeatureGrid) -> Result<()> {
        if local.frames != fragment.frames || local.grid != fragment.grid {
            return Err(Error::Shape(format!(
                "local grid {}x{} vs fragment grid {}x{}",
                local.frames, local.grid, fragment.frames, fragment.grid
            )));
        }
        if local.dim() != self.local_dim() || fragment.dim() != self.fragment_dim() {
            return Err(Error::Shape(format!(
                "fusion MLP expects widths ({}, {}), got ({}, {})",
                self.local_dim(),
                self.fragment_dim(),
                local.dim(),
                fragment.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, local: &FeatureGrid, fragment: &FeatureGrid, mode: ForwardMode<'_>) -> Result<FeatureGrid> {
        Ok(self.forward_taped(local, fragment, mode)?.0)
    }

    pub fn forward_taped(
        &self,
        local: &FeatureGrid,
        fragment: &FeatureGrid,
        mode: ForwardMode<'_>,
    ) -> Result<(FeatureGrid, FusionTape)> {
        self.check(local, fragment)?;
        let input = concatenate![Axis(1), fragment.data, local.data];
        let pre_activation = self.fc1.forward(input.view())?;
        let mut hidden = pre_activation.mapv(gelu);
        let mask = match mode {
            ForwardMode::Train(rng) if self.dropout > 0.0 => {
                let keep = 1.0 / (1.0 - self.dropout);
                let p = self.dropout;
                let mask = Array2::from_shape_simple_fn(hidden.raw_dim(), || {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                });
                hidden *= &mask;
                Some(mask)
            }
            _ => None,
        };
        let data = self.fc2.forward(hidden.view())? + &local.data;
        let fused = FeatureGrid::new(local.frames, local.grid, data)?;
        Ok((
            fused,
            FusionTape {
                input,
                pre_activation,
                mask,
                hidden,
            },
        ))
    }

    /// Parameter gradients given `dL/d fused`.
    pub fn backward(&self, tape: &FusionTape, grad_fused: &Array2<f64>) -> FusionGrads {
        let fc2_weight = grad_fused.t().dot(&tape.hidden);
        let fc2_bias = grad_fused.sum_axis(Axis(0));
        let mut grad_hidden = grad_fused.dot(&self.fc2.weight);
        if let Some(mask) = &tape.mask {
            grad_hidden *= mask;
        }
        let grad_pre = grad_hidden * tape.pre_activation.mapv(gelu_grad);
        FusionGrads {
            fc1_weight: grad_pre.t().dot(&tape.input),
            fc1_bias: grad_pre.sum_axis(Axis(0)),
            fc2_weight,
            fc2_bias,
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use ndarray::array;

    use super::*;

    fn grid(frames: usize, g: usize, d: usize, seed: u64) -> FeatureGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureGrid::new(
            frames,
            g,
            Array2::from_shape_simple_fn((frames * g * g, d), || rng.random_range(-1.0..1.0)),
        )
        .unwrap()
    }

    #[test]
    fn zero_fc2_is_identity() {
        let mlp = FusionMlp::new(6, 4, 6, 0.5, 1).unwrap();
        let local = grid(2, 3, 6, 2);
        let frag = grid(2, 3, 4, 3);
        let fused = mlp.forward(&local, &frag, ForwardMode::Eval).unwrap();
        assert_eq!(fused, local);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fused = mlp.forward(&local, &frag, ForwardMode::Train(&mut rng)).unwrap();
        assert_eq!(fused, local);
    }

    #[test]
    fn eval_ignores_dropout_state() {
        let mut mlp = FusionMlp::new(3, 2, 4, 0.5, 1).unwrap();
        mlp.fc2 = Linear::uniform(4, 3, &mut ChaCha8Rng::seed_from_u64(5));
        let local = grid(1, 2, 3, 2);
        let frag = grid(1, 2, 2, 3);
        let a = mlp.forward(&local, &frag, ForwardMode::Eval).unwrap();
        let b = mlp.forward(&local, &frag, ForwardMode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_hand_computation() {
        // 1x1x1 grid, local = [0.5, -1.0], fragment = [2.0]; input = [2.0, 0.5, -1.0]
        let mlp = FusionMlp {
            fc1: Linear::new(array![[0.1, 0.2, 0.3], [-0.4, 0.5, 0.6]], array![0.05, -0.1]).unwrap(),
            fc2: Linear::new(array![[1.0, -2.0], [0.5, 0.25]], array![0.01, 0.02]).unwrap(),
            dropout: 0.5,
        };
        let local = FeatureGrid::new(1, 1, array![[0.5, -1.0]]).unwrap();
        let frag = FeatureGrid::new(1, 1, array![[2.0]]).unwrap();
        let fused = mlp.forward(&local, &frag, ForwardMode::Eval).unwrap();

        // h1 = 0.1*2 + 0.2*0.5 + 0.3*(-1) + 0.05 = 0.05
        // h2 = -0.8 + 0.25 - 0.6 - 0.1 = -1.25
        // GELU values from 30-digit arbitrary precision evaluation.
        let g1 = 0.025_996_940_291_918_623;
        let g2 = -0.132_062_217_083_569_07;
        let expected = [1.0 * g1 - 2.0 * g2 + 0.01 + 0.5, 0.5 * g1 + 0.25 * g2 + 0.02 - 1.0];
        assert_relative_eq!(fused.data[[0, 0]], expected[0], max_relative = 1e-12);
        assert_relative_eq!(fused.data[[0, 1]], expected[1], max_relative = 1e-12);
    }

    #[test]
    fn width_mismatch() {
        let mlp = FusionMlp::new(6, 4, 6, 0.0, 1).unwrap();
        let local = grid(1, 2, 5, 2);
        let frag = grid(1, 2, 4, 3);
        assert!(matches!(mlp.forward(&local, &frag, ForwardMode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut mlp = FusionMlp::new(3, 2, 4, 0.0, 7).unwrap();
        mlp.fc2 = Linear::uniform(4, 3, &mut ChaCha8Rng::seed_from_u64(8));
        let local = grid(2, 2, 3, 1);
        let frag = grid(2, 2, 2, 2);
        let weights = grid(2, 2, 3, 3).data;
        let loss = |m: &FusionMlp| -> f64 {
            let f = m.forward(&local, &frag, ForwardMode::Eval).unwrap();
            (&f.data * &weights).sum()
        };
        let (_, tape) = mlp.forward_taped(&local, &frag, ForwardMode::Eval).unwrap();
        let grads = mlp.backward(&tape, &weights);
        let eps = 1e-6;
        for r in 0..4 {
            for c in 0..5 {
                let mut p = mlp.clone();
                p.fc1.weight[[r, c]] += eps;
                let mut m = mlp.clone();
                m.fc1.weight[[r, c]] -= eps;
                let numeric = (loss(&p) - loss(&m)) / (2.0 * eps);
                assert!((numeric - grads.fc1_weight[[r, c]]).abs() < 1e-7);
            }
        }
        for r in 0..3 {
            let mut p = mlp.clone();
            p.fc2.bias[r] += eps;
            let mut m = mlp.clone();
            m.fc2.bias[r] -= eps;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * eps);
            assert!((numeric - grads.fc2_bias[r]).abs() < 1e-7);
        }
    }
}
