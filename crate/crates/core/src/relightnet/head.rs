use candle_core::Tensor;
use candle_nn::{linear, Linear, Module, VarBuilder};

use super::layers::{LayerKind, LEAKY};

/// Degrees per unit of the first raw output.
pub const DIRECTION_SCALE: f64 = 180.0;
/// Kelvin per unit of the second raw output.
pub const TEMPERATURE_SCALE: f64 = 2000.0;

pub const HEAD_HIDDEN: [usize; 2] = [20, 10];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IlluminationPrediction {
    pub direction_degrees: f64,
    pub temperature_kelvin: f64,
}

/// Fully connected head on the flattened light latent: two hidden layers of
/// 20 and 10 units with LeakyReLU, two linear outputs. The outputs are
/// scaled to degrees and Kelvin so unit-variance activations cover the
/// label ranges.
#[derive(Clone, Debug)]
pub struct IlluminationHead {
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    inputs: usize,
}

impl IlluminationHead {
    pub fn new(inputs: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        Ok(Self {
            fc1: linear(inputs, HEAD_HIDDEN[0], vb.pp("fc1"))?,
            fc2: linear(HEAD_HIDDEN[0], HEAD_HIDDEN[1], vb.pp("fc2"))?,
            fc3: linear(HEAD_HIDDEN[1], 2, vb.pp("fc3"))?,
            inputs,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// `(N, C, h, w)` light part -> `(N, 2)` `[degrees, kelvin]`.
    pub fn forward(&self, light: &Tensor) -> candle_core::Result<Tensor> {
        let x = light.flatten_from(1)?;
        if x.dim(1)? != self.inputs {
            candle_core::bail!("head expects {} inputs, got {}", self.inputs, x.dim(1)?);
        }
        let h = LEAKY.apply(&self.fc1.forward(&x)?)?;
        let h = LEAKY.apply(&self.fc2.forward(&h)?)?;
        let raw = self.fc3.forward(&h)?;
        let scale = Tensor::new(&[DIRECTION_SCALE as f32, TEMPERATURE_SCALE as f32], raw.device())?;
        raw.broadcast_mul(&scale)
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        vec![
            LayerKind::Linear { inputs: self.inputs, outputs: HEAD_HIDDEN[0] },
            LayerKind::Linear { inputs: HEAD_HIDDEN[0], outputs: HEAD_HIDDEN[1] },
            LayerKind::Linear { inputs: HEAD_HIDDEN[1], outputs: 2 },
        ]
    }
}

/// Rows of an `(N, 2)` head output.
pub fn predictions_from_tensor(t: &Tensor) -> candle_core::Result<Vec<IlluminationPrediction>> {
    Ok(t.to_dtype(candle_core::DType::F64)?
        .to_vec2::<f64>()?
        .into_iter()
        .map(|r| IlluminationPrediction {
            direction_degrees: r[0],
            temperature_kelvin: r[1],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relightnet::params::parameter_count;
    use candle_core::{DType, Device};
    use candle_nn::VarMap;

    #[test]
    fn parameter_count_closed_form() {
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &Device::Cpu);
        IlluminationHead::new(2048, vb).unwrap();
        assert_eq!(parameter_count(&vm), 2048 * 20 + 20 + 20 * 10 + 10 + 10 * 2 + 2);
    }

    #[test]
    fn zero_everything_predicts_zero() {
        let vb = VarBuilder::zeros(DType::F32, &Device::Cpu);
        let head = IlluminationHead::new(2048, vb).unwrap();
        let x = Tensor::zeros((3, 8, 16, 16), DType::F32, &Device::Cpu).unwrap();
        let p = predictions_from_tensor(&head.forward(&x).unwrap()).unwrap();
        assert_eq!(p.len(), 3);
        for q in p {
            assert_eq!((q.direction_degrees, q.temperature_kelvin), (0.0, 0.0));
        }
    }

    #[test]
    fn wrong_width_rejected() {
        let head = IlluminationHead::new(2048, VarBuilder::zeros(DType::F32, &Device::Cpu)).unwrap();
        let x = Tensor::zeros((1, 8, 8, 8), DType::F32, &Device::Cpu).unwrap();
        assert!(head.forward(&x).is_err());
    }
}
