//! Plain SGD with momentum: v = mu*v + g, p -= lr*v.

use crate::detector::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SgdMomentum {
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(model: &Model, momentum: f64) -> SgdMomentum {
        SgdMomentum {
            momentum,
            velocity: model
                .params()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    /// One update from per-parameter gradients (in `Model::params` order).
    pub fn step(&mut self, model: &mut Model, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.velocity.len() {
            return Err(Error::InvalidArg(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.velocity.len()
            )));
        }
        for ((v, g), (_, p)) in self.velocity.iter_mut().zip(grads).zip(model.params_mut()) {
            for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{ModelSpec, Padding, Task};

    #[test]
    fn momentum_accumulates_velocity() {
        let spec = ModelSpec {
            in_channels: 3,
            image_hw: (8, 8),
            conv_channels: vec![2],
            kernel: 3,
            padding: Padding::Same,
            roi_out: (1, 1),
            fc_dims: vec![],
            num_classes: 2,
        };
        let mut model = Model::new(spec, Task::Classify, 0).unwrap();
        let before = model.params()[0].1.data()[0];
        let grads: Vec<Tensor> = model
            .params()
            .iter()
            .map(|(_, t)| Tensor::ones(t.shape()))
            .collect();
        let mut opt = SgdMomentum::new(&model, 0.5);
        opt.step(&mut model, &grads, 0.1).unwrap();
        // v = 1, p -= 0.1
        assert!((model.params()[0].1.data()[0] - (before - 0.1)).abs() < 1e-15);
        opt.step(&mut model, &grads, 0.1).unwrap();
        // v = 1.5, p -= 0.15
        assert!((model.params()[0].1.data()[0] - (before - 0.25)).abs() < 1e-15);
    }
}
