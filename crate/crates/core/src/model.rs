//! The desk-scale CNN classifier: two conv/pool stages and two affine
//! layers, ~49k parameters at the default widths. Small enough to train
//! in minutes on one core, wide enough that a planted trigger pathway can
//! coexist with the glyph features instead of competing them away.

use alloc::vec::Vec;

use crate::error::Result;
use crate::numgrad::{NodeId, Tape, Tensor};
use crate::rng::Rng;
use crate::ensure;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub classes: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub kernel: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig { in_channels: 1, image_size: 24, classes: 10, conv1: 12, conv2: 20, hidden: 64, kernel: 3 }
    }
}

impl CnnConfig {
    /// Flattened feature count after the two pooling stages.
    pub fn flat_features(&self) -> usize {
        let side = self.image_size / 4;
        self.conv2 * side * side
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.image_size % 4 == 0 && self.image_size >= 8, "image size must be a multiple of 4 and >= 8, got {}", self.image_size);
        ensure!(self.kernel % 2 == 1, "kernel must be odd, got {}", self.kernel);
        ensure!(self.classes >= 2, "need at least 2 classes");
        ensure!(self.in_channels >= 1 && self.conv1 >= 1 && self.conv2 >= 1 && self.hidden >= 1, "layer widths must be positive");
        Ok(())
    }
}

/// Parameter order: conv1 w/b, conv2 w/b, fc1 w/b, fc2 w/b.
#[derive(Debug, Clone)]
pub struct DeskCnn {
    cfg: CnnConfig,
    params: Vec<Tensor>,
}

impl DeskCnn {
    /// He-initialized network; deterministic in `seed`.
    pub fn init(cfg: CnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let k = cfg.kernel;
        let mut params = Vec::with_capacity(8);
        let conv = |rng: &mut Rng, cout: usize, cin: usize| -> Result<(Tensor, Tensor)> {
            let fan_in = (cin * k * k) as f32;
            let std = libm::sqrtf(2.0 / fan_in);
            let w: Vec<f32> = (0..cout * cin * k * k).map(|_| rng.normal() * std).collect();
            Ok((Tensor::from_vec(&[cout, cin, k, k], w)?.with_grad(), Tensor::zeros(&[cout]).with_grad()))
        };
        let (w1, b1) = conv(&mut rng, cfg.conv1, cfg.in_channels)?;
        let (w2, b2) = conv(&mut rng, cfg.conv2, cfg.conv1)?;
        let fc = |rng: &mut Rng, din: usize, dout: usize| -> Result<(Tensor, Tensor)> {
            let std = libm::sqrtf(2.0 / din as f32);
            let w: Vec<f32> = (0..din * dout).map(|_| rng.normal() * std).collect();
            Ok((Tensor::from_vec(&[din, dout], w)?.with_grad(), Tensor::zeros(&[dout]).with_grad()))
        };
        let (w3, b3) = fc(&mut rng, cfg.flat_features(), cfg.hidden)?;
        let (w4, b4) = fc(&mut rng, cfg.hidden, cfg.classes)?;
        params.extend([w1, b1, w2, b2, w3, b3, w4, b4]);
        Ok(DeskCnn { cfg, params })
    }

    /// Rebuilds a network from a parameter list (e.g. loaded from disk).
    pub fn from_params(cfg: CnnConfig, params: Vec<Tensor>) -> Result<Self> {
        cfg.validate()?;
        let fresh = DeskCnn::init(cfg.clone(), 0)?;
        ensure!(params.len() == fresh.params.len(), "expected {} parameter tensors, got {}", fresh.params.len(), params.len());
        for (got, want) in params.iter().zip(&fresh.params) {
            ensure!(got.shape() == want.shape(), "parameter shape mismatch: {:?} vs {:?}", got.shape(), want.shape());
        }
        let params = params.into_iter().map(|p| p.with_grad()).collect();
        Ok(DeskCnn { cfg, params })
    }

    pub fn cfg(&self) -> &CnnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// A copy suitable for EMA tracking (same values, no gradients).
    pub fn ema_copy(&self) -> DeskCnn {
        let params = self
            .params
            .iter()
            .map(|p| {
                let mut t = p.clone();
                t.clear_grad();
                t
            })
            .collect();
        DeskCnn { cfg: self.cfg.clone(), params }
    }

    /// Inserts the parameters as tape leaves. With `trainable` they keep
    /// their grad flag so `backward` accumulates into the tape leaves.
    pub fn insert_params(&self, tape: &mut Tape, trainable: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.clone();
                t.clear_grad();
                if !trainable {
                    t = Tensor::from_vec(p.shape(), p.data().to_vec()).expect("params are valid");
                }
                tape.leaf(t)
            })
            .collect()
    }

    /// Wires the forward graph from an input node to logits [B, classes].
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], input: NodeId) -> Result<NodeId> {
        ensure!(params.len() == 8, "expected 8 parameter nodes, got {}", params.len());
        let shape = tape.value(input).shape();
        ensure!(
            shape.len() == 4 && shape[1] == self.cfg.in_channels && shape[2] == self.cfg.image_size && shape[3] == self.cfg.image_size,
            "input shape {shape:?} does not match model config"
        );
        let c1 = tape.conv2d(input, params[0], params[1])?;
        let r1 = tape.relu(c1)?;
        let p1 = tape.max_pool2(r1)?;
        let c2 = tape.conv2d(p1, params[2], params[3])?;
        let r2 = tape.relu(c2)?;
        let p2 = tape.max_pool2(r2)?;
        let f1 = tape.affine(p2, params[4], params[5])?;
        let r3 = tape.relu(f1)?;
        tape.affine(r3, params[6], params[7])
    }

    /// Plain inference: logits for a batch [B, C_in, H, W], no gradients.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let input = tape.leaf(images.clone());
        let params = self.insert_params(&mut tape, false);
        let out = self.forward(&mut tape, &params, input)?;
        Ok(tape.value(out).clone())
    }

    /// Copies gradients accumulated on tape leaves back onto the model
    /// parameters (accumulating there as well).
    pub fn pull_grads(&mut self, tape: &Tape, param_ids: &[NodeId]) -> Result<()> {
        ensure!(param_ids.len() == self.params.len(), "parameter id count mismatch");
        for (p, &id) in self.params.iter_mut().zip(param_ids) {
            match tape.grad(id) {
                Some(g) => p.accumulate_grad(g)?,
                None => return Err(crate::contract_err!("missing gradient for a model parameter")),
            }
        }
        Ok(())
    }

    /// Argmax class predictions for a batch.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(images)?;
        let bsz = logits.shape()[0];
        Ok(crate::numgrad::argmax_rows(logits.data(), bsz, self.cfg.classes))
    }
}
