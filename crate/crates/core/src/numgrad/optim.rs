//! SGD with (Nesterov) momentum, classical coupled weight decay, and the
//! parameter EMA used for evaluation.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::Result;
use crate::{contract_err, ensure};

#[derive(Debug, Clone)]
pub struct SgdState {
    pub momentum: f32,
    pub weight_decay: f32,
    pub nesterov: bool,
    velocity: Vec<Vec<f32>>,
}

impl SgdState {
    pub fn new(momentum: f32, weight_decay: f32, nesterov: bool) -> Result<Self> {
        ensure!((0.0..1.0).contains(&momentum), "momentum must be in [0,1), got {momentum}");
        ensure!(weight_decay >= 0.0, "weight decay must be >= 0, got {weight_decay}");
        Ok(SgdState { momentum, weight_decay, nesterov, velocity: Vec::new() })
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }
}

/// One SGD update over `params`, all of which must carry gradients.
///
/// Weight decay is added to the raw gradient before the momentum update
/// (classical coupled decay):
///   g = grad + wd * theta
///   v = momentum * v + g
///   step = g + momentum * v   (nesterov)  |  v   (otherwise)
///   theta -= lr * step
///
/// The velocity is updated even when `lr == 0`.
pub fn sgd_step(params: &mut [Tensor], state: &mut SgdState, lr: f32) -> Result<()> {
    ensure!(lr.is_finite(), "non-finite learning rate");
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    ensure!(
        state.velocity.len() == params.len()
            && state.velocity.iter().zip(params.iter()).all(|(v, p)| v.len() == p.numel()),
        "optimizer state does not mirror parameter shapes"
    );
    for (p, vel) in params.iter_mut().zip(state.velocity.iter_mut()) {
        let numel = p.numel();
        let grad: Vec<f32> = match p.grad() {
            Some(g) => g.to_vec(),
            None => return Err(contract_err!("sgd_step on parameter with no gradient")),
        };
        ensure!(grad.len() == numel, "gradient length mismatch");
        let (m, wd, nesterov) = (state.momentum, state.weight_decay, state.nesterov);
        let data = p.data_mut();
        for i in 0..numel {
            let g = grad[i] + wd * data[i];
            vel[i] = m * vel[i] + g;
            let step = if nesterov { g + m * vel[i] } else { vel[i] };
            data[i] -= lr * step;
        }
    }
    Ok(())
}

/// ema <- decay * ema + (1 - decay) * param, elementwise.
pub fn ema_update(ema_params: &mut [Tensor], params: &[Tensor], decay: f32) -> Result<()> {
    ensure!((0.0..=1.0).contains(&decay), "EMA decay must be in [0,1], got {decay}");
    ensure!(ema_params.len() == params.len(), "EMA parameter count mismatch");
    for (e, p) in ema_params.iter_mut().zip(params) {
        ensure!(e.shape() == p.shape(), "EMA shape mismatch: {:?} vs {:?}", e.shape(), p.shape());
        for (ev, &pv) in e.data_mut().iter_mut().zip(p.data()) {
            *ev = decay * *ev + (1.0 - decay) * pv;
        }
    }
    Ok(())
}
